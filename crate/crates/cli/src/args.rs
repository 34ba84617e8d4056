use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mad_gnn::policy::{ActionMode, PolicyKind};

#[derive(Debug, Parser)]
#[command(name = "mad-gnn", version, about = "Train, evaluate and verify magnitude/direction GNN policies")]
pub struct Cli {
    /// Directory receiving every artifact of the run.
    #[arg(long, global = true, env = "MADGNN_OUT_DIR", default_value = "runs")]
    pub out_dir: PathBuf,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true, env = "MADGNN_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train MAD and/or baseline policies for several seeds.
    Train(TrainArgs),
    /// Evaluate a checkpoint on fresh layouts.
    Evaluate(EvaluateArgs),
    /// Log state-norm trajectories of untrained or trained policies.
    StabilityDemo(StabilityArgs),
    /// Fuzz-check the perturbation and gain bounds.
    VerifyBounds(VerifyArgs),
    /// Evaluate a checkpoint across team sizes.
    Transfer(TransferArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyChoice {
    Mad,
    Baseline,
    Both,
}

impl PolicyChoice {
    pub fn kinds(self) -> Vec<PolicyKind> {
        match self {
            PolicyChoice::Mad => vec![PolicyKind::Mad],
            PolicyChoice::Baseline => vec![PolicyKind::Baseline],
            PolicyChoice::Both => vec![PolicyKind::Mad, PolicyKind::Baseline],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Sample,
    Mean,
}

impl From<Mode> for ActionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Sample => ActionMode::Sample,
            Mode::Mean => ActionMode::Mean,
        }
    }
}

/// Non-empty list of positive integers: `5`, `3,7,10` or the inclusive range `1..10`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntList(pub Vec<u64>);

impl FromStr for IntList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let num = |t: &str| t.trim().parse::<u64>().map_err(|_| format!("{t:?} is not a non-negative integer"));
        let values = if let Some((a, b)) = s.split_once("..") {
            let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
            (a..=b).collect()
        } else {
            s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
        };
        if values.is_empty() {
            return Err(format!("{s:?} describes an empty list"));
        }
        Ok(IntList(values))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Agents(pub Vec<usize>);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Seeds(pub Vec<u64>);

fn agent_list(s: &str) -> Result<Agents, String> {
    let list: IntList = s.parse()?;
    if list.0.contains(&0) {
        return Err("agent counts must be positive".into());
    }
    Ok(Agents(list.0.into_iter().map(|v| v as usize).collect()))
}

/// `N` alone means seeds `0..N`; lists and ranges are taken literally.
fn seed_list(s: &str) -> Result<Seeds, String> {
    let s = s.trim();
    if !s.contains(',') && !s.contains("..") {
        let n: u64 = s.parse().map_err(|_| format!("{s:?} is not a seed count"))?;
        if n == 0 {
            return Err("seed count must be positive".into());
        }
        return Ok(Seeds((0..n).collect()));
    }
    Ok(Seeds(s.parse::<IntList>()?.0))
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Preset name (five_agents, smoke) or path to a TOML config.
    #[arg(long, default_value = "five_agents")]
    pub config: String,
    /// Seed count (`3` = 0,1,2), list (`4,9`) or inclusive range (`0..4`).
    #[arg(long, default_value = "3", value_parser = seed_list)]
    pub seeds: Seeds,
    #[arg(long, value_enum, default_value = "both")]
    pub policy: PolicyChoice,
    /// Overrides `ppo.iterations`.
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Team size (defaults to the training size).
    #[arg(long)]
    pub agents: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "sample")]
    pub mode: Mode,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[arg(long, default_value = "1..10", value_parser = agent_list)]
    pub agents: Agents,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Preset name or TOML path used for untrained policies and the world.
    #[arg(long, default_value = "five_agents")]
    pub config: String,
    #[arg(long, value_enum, default_value = "both")]
    pub policy: PolicyChoice,
    #[arg(long)]
    pub mad_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub baseline_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// TOML file with trial counts and seed; flags below override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lemma_trials: Option<usize>,
    #[arg(long)]
    pub closed_loop_trials: Option<usize>,
    #[arg(long)]
    pub gain_chain_trials: Option<usize>,
    #[arg(long)]
    pub gain_chain_steps: Option<usize>,
    /// Force every perturbation to zero.
    #[arg(long)]
    pub zero_perturbation: bool,
    /// Self-test: halve every bound, which must produce a failure.
    #[arg(long)]
    pub halve_bound: bool,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "3,7,10", value_parser = agent_list)]
    pub agents: Agents,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "sample")]
    pub mode: Mode,
    /// Also evaluate a freshly initialised policy of the same kind.
    #[arg(long)]
    pub compare_untrained: bool,
}
