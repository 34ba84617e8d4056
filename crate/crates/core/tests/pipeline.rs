use mad_gnn::checkpoint::Checkpoint;
use mad_gnn::config::RunConfig;
use mad_gnn::experiments::{stability_traces, transfer_rewards};
use mad_gnn::policy::{evaluate_heads, ActionMode, Actor, Observation, PolicyKind};
use mad_gnn::ppo::{evaluate, train, TrainEvent};
use mad_gnn::env::Env;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn smoke() -> RunConfig {
    RunConfig::preset("smoke").unwrap()
}

fn trained(kind: PolicyKind, seed: u64) -> (RunConfig, Checkpoint, Vec<f64>) {
    let config = smoke();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut actor = config.build_actor(kind, &mut rng).unwrap();
    let mut critic = config.build_critic(&mut rng).unwrap();
    let mut snapshots = Vec::new();
    let mut hook = |event: TrainEvent<'_, dyn Actor>| {
        if let TrainEvent::Checkpoint { iteration, actor, critic } = event {
            snapshots.push(Checkpoint::capture(&config, iteration, seed, actor, critic));
        }
        Ok(())
    };
    let ppo = mad_gnn::ppo::PpoConfig { seed, ..config.ppo.clone() };
    let curve = train(actor.as_mut(), &mut critic, &config.env, &ppo, &mut hook).unwrap();
    assert_eq!(curve.len(), config.ppo.iterations);
    assert!(snapshots.iter().any(|c| c.iteration == 0));
    let last = Checkpoint::capture(&config, config.ppo.iterations, seed, actor.as_ref(), &critic);
    (config, last, curve.iter().map(|r| r.mean_reward).collect())
}

#[test]
fn checkpoint_round_trip_preserves_behaviour() {
    for kind in [PolicyKind::Mad, PolicyKind::Baseline] {
        let (config, ck, _) = trained(kind, 4);
        let restored = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(restored, ck);
        let a = ck.actor().unwrap();
        let b = restored.actor().unwrap();
        let ea = evaluate(a.as_ref(), &config.env, 3, ActionMode::Sample, 7).unwrap();
        let eb = evaluate(b.as_ref(), &config.env, 3, ActionMode::Sample, 7).unwrap();
        assert_eq!(ea.mean_reward, eb.mean_reward);
        assert_eq!(ea.episodes, eb.episodes);
    }
}

#[test]
fn training_is_deterministic_per_seed() {
    let (_, a, ra) = trained(PolicyKind::Mad, 2);
    let (_, b, rb) = trained(PolicyKind::Mad, 2);
    assert_eq!(ra, rb);
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let (_, c, _) = trained(PolicyKind::Mad, 3);
    assert_ne!(a.actor, c.actor);
}

#[test]
fn trained_policy_transfers_to_other_team_sizes() {
    let (config, ck, _) = trained(PolicyKind::Mad, 1);
    let actor = ck.actor().unwrap();
    let rows = transfer_rewards(&config, actor.as_ref(), &[1, 4, 8], 2, 0, ActionMode::Mean).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|(r, norm)| r.reward.is_finite() && norm.is_finite()));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (env, w) = Env::new(config.env.with_agents(8), &mut rng).unwrap();
    let obs = Observation::new(env.state(), env.graph(), &w).unwrap();
    let (mu, _, m, _) = evaluate_heads(actor.as_ref(), &obs, &actor.initial_carry(8)).unwrap();
    assert_eq!((mu.rows(), m.rows()), (8, 8));
}

#[test]
fn trained_mad_keeps_magnitudes_within_cap_and_norms_finite() {
    let (config, ck, _) = trained(PolicyKind::Mad, 5);
    let actor = ck.actor().unwrap();
    let traces = stability_traces(&config, PolicyKind::Mad, Some(actor.as_ref()), &[2, 3], 2, 0).unwrap();
    assert_eq!(traces.len(), 4);
    for t in &traces {
        assert_eq!(t.norms.len(), config.env.episode_len + 1);
        assert!(t.norms.iter().all(|v| v.is_finite()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (env, w) = Env::new(config.env.clone(), &mut rng).unwrap();
    let obs = Observation::new(env.state(), env.graph(), &w).unwrap();
    let (_, _, m, _) = evaluate_heads(actor.as_ref(), &obs, &actor.initial_carry(config.env.n_agents)).unwrap();
    assert!(m.data().iter().all(|&v| (0.0..=config.mad.max_magnitude).contains(&v)));
}
