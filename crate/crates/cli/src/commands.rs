use std::path::Path;

use mad_gnn::checkpoint::Checkpoint;
use mad_gnn::config::{RunConfig, PRESETS};
use mad_gnn::experiments::{stability_traces, transfer_rewards, untrained_actor, NormTrace, TransferRow};
use mad_gnn::policy::{ActionMode, Actor, PolicyKind};
use mad_gnn::ppo::{evaluate, train, CurveRow, PpoError, TrainEvent};
use mad_gnn::robustness::{
    fuzz_gain_chain, fuzz_lemma1, fuzz_theorem2, BoundReport, FuzzConfig, GainChainConfig, TrialRecord,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::args::{EvaluateArgs, StabilityArgs, TrainArgs, TransferArgs, VerifyArgs};
use crate::error::{io_error, CliError};
use crate::manifest::RunDir;

#[derive(Serialize)]
pub struct NormRow {
    pub n_agents: usize,
    pub run: usize,
    pub t: usize,
    pub state_norm: f64,
}

#[derive(Serialize)]
pub struct BoundRow {
    pub trial: usize,
    pub bound: f64,
    pub measured: f64,
    pub margin: f64,
}

#[derive(Serialize)]
struct EpisodeRow {
    n_agents: usize,
    episode: usize,
    reward: f64,
    goals_reached: usize,
    collisions: usize,
}

#[derive(Serialize)]
struct TransferSummary {
    n_agents: usize,
    episodes: usize,
    mean_reward: f64,
    std_reward: f64,
    mean_reward_per_agent: f64,
    max_state_norm: f64,
}

fn norm_rows(traces: &[NormTrace]) -> impl Iterator<Item = NormRow> + '_ {
    traces.iter().flat_map(|tr| {
        tr.norms.iter().enumerate().map(|(t, &state_norm)| NormRow { n_agents: tr.n_agents, run: tr.run, t, state_norm })
    })
}

/// A preset name or a TOML file.
pub fn load_config(spec: &str) -> Result<RunConfig, CliError> {
    if PRESETS.contains(&spec) {
        return Ok(RunConfig::preset(spec)?);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "config {spec:?} is neither a preset ({}) nor an existing file",
            PRESETS.join(", ")
        )));
    }
    Ok(RunConfig::load(path)?)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Ok(Checkpoint::load(path)?)
}

pub fn cmd_train(args: &TrainArgs, out: &Path) -> Result<(), CliError> {
    let mut config = load_config(&args.config)?;
    if let Some(iterations) = args.iterations {
        config.ppo.iterations = iterations;
    }
    config.validate()?;
    let mut dir = RunDir::create(out, "train", Some(config.hash()), args.seeds.0.clone())?;
    let result = train_all(args, &config, &mut dir);
    dir.finish(result)
}

fn train_all(args: &TrainArgs, config: &RunConfig, dir: &mut RunDir) -> Result<(), CliError> {
    dir.write_text("config.toml", &config.to_toml_string()?)?;
    std::fs::create_dir_all(dir.path("checkpoints")).map_err(io_error(&dir.path("checkpoints")))?;
    for kind in args.policy.kinds() {
        let mut all_rows: Vec<CurveRow> = Vec::new();
        for &seed in &args.seeds.0 {
            let mut run_config = config.clone();
            run_config.policy = kind;
            run_config.ppo.seed = seed;
            let rows = train_one(&run_config, kind, seed, dir)?;
            dir.write_csv(&format!("curves_{}_seed{seed}.csv", kind.as_str()), rows.iter())?;
            all_rows.extend(rows);
        }
        dir.write_csv(&format!("curves_{}.csv", kind.as_str()), all_rows.iter())?;
    }
    Ok(())
}

fn train_one(config: &RunConfig, kind: PolicyKind, seed: u64, dir: &mut RunDir) -> Result<Vec<CurveRow>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut actor = config.build_actor(kind, &mut rng)?;
    let mut critic = config.build_critic(&mut rng)?;
    let mut written: Vec<String> = Vec::new();
    let checkpoints = dir.path("checkpoints");
    let mut hook = |event: TrainEvent<'_, dyn Actor>| -> Result<(), String> {
        match event {
            TrainEvent::Checkpoint { iteration, actor, critic } => {
                let name = format!("{}_seed{seed}_iter{iteration:05}.json", kind.as_str());
                Checkpoint::capture(config, iteration, seed, actor, critic)
                    .save(&checkpoints.join(&name))
                    .map_err(|e| e.to_string())?;
                written.push(format!("checkpoints/{name}"));
            }
            TrainEvent::Iteration { row, stats } => {
                eprintln!(
                    "[{} seed {seed}] iter {:>4} reward {:>10.3} ± {:<9.3} clip {:.3} t {:.1}s",
                    kind.as_str(),
                    row.iteration,
                    row.mean_reward,
                    row.std_reward,
                    stats.clip_fraction,
                    row.wall_s
                );
            }
        }
        Ok(())
    };
    let result = train(actor.as_mut(), &mut critic, &config.env, &config.ppo, &mut hook);
    for name in &written {
        dir.record(name);
    }
    Ok(result?)
}

#[derive(Serialize)]
struct EvaluateSummary {
    checkpoint: String,
    kind: PolicyKind,
    n_agents: usize,
    episodes: usize,
    mode: String,
    mean_reward: f64,
    std_reward: f64,
    mean_reward_per_agent: f64,
    goal_reach_rate: f64,
    collisions: usize,
    max_state_norm: f64,
}

pub fn cmd_evaluate(args: &EvaluateArgs, out: &Path) -> Result<(), CliError> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let actor = ck.actor()?;
    let n = args.agents.unwrap_or(ck.config.env.n_agents);
    if n == 0 {
        return Err(CliError::Usage("--agents must be positive".into()));
    }
    let mut dir = RunDir::create(out, "evaluate", Some(ck.config_hash.clone()), vec![args.seed])?;
    let result = (|| {
        let env = ck.config.env.with_agents(n);
        let stats = evaluate(actor.as_ref(), &env, args.episodes, args.mode.into(), args.seed)?;
        let rows = stats.episodes.iter().enumerate().map(|(episode, e)| EpisodeRow {
            n_agents: e.n_agents,
            episode,
            reward: e.reward,
            goals_reached: e.goals_reached,
            collisions: e.collisions,
        });
        dir.write_csv("episodes.csv", rows)?;
        let traces: Vec<NormTrace> = stats
            .episodes
            .iter()
            .enumerate()
            .map(|(run, e)| NormTrace { n_agents: e.n_agents, run, norms: e.norms.clone() })
            .collect();
        dir.write_csv("norms.csv", norm_rows(&traces))?;
        let summary = EvaluateSummary {
            checkpoint: args.checkpoint.display().to_string(),
            kind: ck.kind,
            n_agents: n,
            episodes: args.episodes,
            mode: format!("{:?}", args.mode).to_lowercase(),
            mean_reward: stats.mean_reward,
            std_reward: stats.std_reward,
            mean_reward_per_agent: stats.mean_reward_per_agent,
            goal_reach_rate: stats.goal_reach_rate,
            collisions: stats.collisions,
            max_state_norm: stats.episodes.iter().map(|e| e.max_norm()).fold(0.0, f64::max),
        };
        dir.write_json("stats.json", &summary)?;
        println!(
            "{} on N={n}: reward {:.3} ± {:.3} over {} episodes",
            ck.kind.as_str(),
            stats.mean_reward,
            stats.std_reward,
            args.episodes
        );
        Ok(())
    })();
    dir.finish(result)
}

pub fn cmd_stability(args: &StabilityArgs, out: &Path) -> Result<(), CliError> {
    let config = load_config(&args.config)?;
    let mut trained: Vec<(PolicyKind, Box<dyn Actor>)> = Vec::new();
    for (kind, path) in [(PolicyKind::Mad, &args.mad_checkpoint), (PolicyKind::Baseline, &args.baseline_checkpoint)] {
        if let Some(path) = path {
            let ck = load_checkpoint(path)?;
            if ck.kind != kind {
                return Err(CliError::Usage(format!(
                    "{} holds a {} policy, expected {}",
                    path.display(),
                    ck.kind.as_str(),
                    kind.as_str()
                )));
            }
            trained.push((kind, ck.actor()?));
        }
    }
    let mut dir = RunDir::create(out, "stability-demo", Some(config.hash()), vec![args.seed])?;
    let result = (|| {
        for kind in args.policy.kinds() {
            let actor = trained.iter().find(|(k, _)| *k == kind).map(|(_, a)| a.as_ref());
            let traces = stability_traces(&config, kind, actor, &args.agents.0, args.runs, args.seed)?;
            for n in &args.agents.0 {
                let of_n: Vec<&NormTrace> = traces.iter().filter(|t| t.n_agents == *n).collect();
                let worst = of_n.iter().map(|t| t.final_fraction()).fold(0.0, f64::max);
                println!("{:<8} N={n:<3} worst final/peak {:.4}", kind.as_str(), worst);
            }
            let label = if actor.is_some() { "trained" } else { "untrained" };
            dir.write_csv(&format!("norms_{}_{label}.csv", kind.as_str()), norm_rows(&traces))?;
        }
        Ok(())
    })();
    dir.finish(result)
}

/// Trial counts and seed for `verify-bounds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    pub seed: u64,
    pub lemma_trials: usize,
    pub closed_loop_trials: usize,
    pub gain_chain_trials: usize,
    pub gain_chain_steps: usize,
    pub zero_perturbation: bool,
    pub bound_scale: f64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            seed: 0,
            lemma_trials: 500,
            closed_loop_trials: 200,
            gain_chain_trials: 100,
            gain_chain_steps: 1000,
            zero_perturbation: false,
            bound_scale: 1.0,
        }
    }
}

impl VerifySpec {
    pub fn resolve(args: &VerifyArgs) -> Result<Self, CliError> {
        let mut spec = match &args.spec {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Usage(format!("malformed spec {}: {e}", path.display())))?
            }
            None => Self::default(),
        };
        spec.seed = args.seed.unwrap_or(spec.seed);
        spec.lemma_trials = args.lemma_trials.unwrap_or(spec.lemma_trials);
        spec.closed_loop_trials = args.closed_loop_trials.unwrap_or(spec.closed_loop_trials);
        spec.gain_chain_trials = args.gain_chain_trials.unwrap_or(spec.gain_chain_trials);
        spec.gain_chain_steps = args.gain_chain_steps.unwrap_or(spec.gain_chain_steps);
        spec.zero_perturbation |= args.zero_perturbation;
        if args.halve_bound {
            spec.bound_scale *= 0.5;
        }
        if !(spec.bound_scale.is_finite() && spec.bound_scale > 0.0) {
            return Err(CliError::Usage(format!("bound_scale must be positive, got {}", spec.bound_scale)));
        }
        if spec.lemma_trials + spec.closed_loop_trials + spec.gain_chain_trials == 0 {
            return Err(CliError::Usage("every trial count is zero".into()));
        }
        Ok(spec)
    }
}

pub fn cmd_verify(args: &VerifyArgs, out: &Path) -> Result<(), CliError> {
    let spec = VerifySpec::resolve(args)?;
    let mut dir = RunDir::create(out, "verify-bounds", None, vec![spec.seed])?;
    let result = (|| {
        dir.write_text("spec.toml", &toml::to_string(&spec).map_err(|e| CliError::Usage(e.to_string()))?)?;
        let fuzz = |trials| FuzzConfig {
            trials,
            seed: spec.seed,
            bound_scale: spec.bound_scale,
            zero_perturbation: spec.zero_perturbation,
        };
        let mut reports: Vec<BoundReport> = Vec::new();
        if spec.lemma_trials > 0 {
            reports.push(fuzz_lemma1(&fuzz(spec.lemma_trials))?);
        }
        if spec.closed_loop_trials > 0 {
            reports.push(fuzz_theorem2(&fuzz(spec.closed_loop_trials))?);
        }
        if spec.gain_chain_trials > 0 {
            let chain = GainChainConfig {
                steps: spec.gain_chain_steps,
                noise_std: if spec.zero_perturbation { 0.0 } else { GainChainConfig::default().noise_std },
                ..GainChainConfig::default()
            };
            reports.push(fuzz_gain_chain(&fuzz(spec.gain_chain_trials), &chain)?);
        }
        let mut offending: Vec<(&'static str, &TrialRecord)> = Vec::new();
        for report in &reports {
            let name = report.kind.as_str();
            dir.write_csv(
                &format!("bounds_{name}.csv"),
                report.trials.iter().map(|t| BoundRow { trial: t.trial, bound: t.bound, measured: t.measured, margin: t.margin }),
            )?;
            dir.write_json(&format!("report_{name}.json"), report)?;
            println!(
                "{name:<11} {:>4} trials  min margin {:+.3e}  violations {}  {}",
                report.trials.len(),
                report.min_margin,
                report.violations,
                if report.passed() { "PASS" } else { "FAIL" }
            );
            offending.extend(report.trials.iter().filter(|t| !t.holds()).map(|t| (name, t)));
        }
        if offending.is_empty() {
            return Ok(());
        }
        #[derive(Serialize)]
        struct Violation<'a> {
            bound: &'static str,
            record: &'a TrialRecord,
        }
        let violations: Vec<Violation> = offending.iter().map(|(bound, record)| Violation { bound, record }).collect();
        dir.write_json("violations.json", &violations)?;
        let (bound, first) = offending[0];
        Err(CliError::Verification(format!(
            "{} trial(s) violate their bound; first: {bound} trial {} (bound {:.6e}, measured {:.6e}); see violations.json",
            offending.len(),
            first.trial,
            first.bound,
            first.measured
        )))
    })();
    dir.finish(result)
}

pub fn cmd_transfer(args: &TransferArgs, out: &Path) -> Result<(), CliError> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let actor = ck.actor()?;
    let mut dir = RunDir::create(out, "transfer", Some(ck.config_hash.clone()), vec![args.seed])?;
    let result = (|| {
        let mode: ActionMode = args.mode.into();
        let trained = transfer_rewards(&ck.config, actor.as_ref(), &args.agents.0, args.episodes, args.seed, mode)?;
        write_transfer(&mut dir, "transfer", &trained)?;
        if args.compare_untrained {
            let mut rows = Vec::new();
            for &n in &args.agents.0 {
                let fresh = untrained_actor(&ck.config, ck.kind, args.seed, n, 0)?;
                rows.extend(transfer_rewards(&ck.config, fresh.as_ref(), &[n], args.episodes, args.seed, mode)?);
            }
            write_transfer(&mut dir, "transfer_untrained", &rows)?;
        }
        if let Some((row, norm)) = trained.iter().find(|(_, norm)| !norm.is_finite()) {
            return Err(CliError::Ppo(PpoError::Hook(format!(
                "non-finite state norm {norm} on N={} episode {}",
                row.n_agents, row.episode
            ))));
        }
        Ok(())
    })();
    dir.finish(result)
}

fn write_transfer(dir: &mut RunDir, stem: &str, rows: &[(TransferRow, f64)]) -> Result<(), CliError> {
    dir.write_csv(&format!("{stem}.csv"), rows.iter().map(|(r, _)| *r))?;
    let mut sizes: Vec<usize> = rows.iter().map(|(r, _)| r.n_agents).collect();
    sizes.dedup();
    let summary: Vec<TransferSummary> = sizes
        .into_iter()
        .map(|n| {
            let of_n: Vec<&(TransferRow, f64)> = rows.iter().filter(|(r, _)| r.n_agents == n).collect();
            let k = of_n.len() as f64;
            let mean = of_n.iter().map(|(r, _)| r.reward).sum::<f64>() / k;
            let std = (of_n.iter().map(|(r, _)| (r.reward - mean).powi(2)).sum::<f64>() / k).sqrt();
            let summary = TransferSummary {
                n_agents: n,
                episodes: of_n.len(),
                mean_reward: mean,
                std_reward: std,
                mean_reward_per_agent: mean / n as f64,
                max_state_norm: of_n.iter().map(|(_, m)| *m).fold(0.0, f64::max),
            };
            println!("{stem:<18} N={n:<3} reward {:>10.3} ± {:<9.3} per agent {:.3}", mean, std, summary.mean_reward_per_agent);
            summary
        })
        .filter(|s| s.episodes > 0)
        .collect();
    dir.write_csv(&format!("{stem}_summary.csv"), summary)?;
    Ok(())
}
