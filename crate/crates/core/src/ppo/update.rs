use rand::seq::SliceRandom;
use rand::Rng;

use super::{clip_global_norm, clip_split_norm, gae, normalize, Adam, Critic, PpoConfig, PpoError, RolloutBuffer, Segment};
use crate::policy::{gaussian_entropy, log_prob_var, Actor};
use crate::tensor::{Bound, Matrix, Tape, TensorError, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub skipped_steps: usize,
}

/// Per-segment advantages (normalised over the whole buffer) and returns.
pub fn advantages(buffer: &RolloutBuffer, cfg: &PpoConfig) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), PpoError> {
    let mut advs = Vec::with_capacity(buffer.segments.len());
    let mut rets = Vec::with_capacity(buffer.segments.len());
    for seg in &buffer.segments {
        let rewards: Vec<f64> = seg.steps.iter().map(|s| s.reward * cfg.reward_scale).collect();
        let values: Vec<f64> = seg.steps.iter().map(|s| s.value).collect();
        let boot = if seg.terminal { 0.0 } else { seg.bootstrap };
        let (a, r) = gae(&rewards, &values, boot, cfg.gamma, cfg.gae_lambda)?;
        advs.push(a);
        rets.push(r);
    }
    let mut flat: Vec<f64> = advs.iter().flatten().copied().collect();
    normalize(&mut flat);
    let mut k = 0;
    for a in advs.iter_mut() {
        for v in a.iter_mut() {
            *v = flat[k];
            k += 1;
        }
    }
    Ok((advs, rets))
}

fn ratio_error(e: TensorError, segment: usize, step: usize, old: f64) -> PpoError {
    match e {
        TensorError::NonFinite { .. } => {
            PpoError::NonFiniteRatio { segment, step, new_log_prob: f64::NAN, old_log_prob: old }
        }
        other => other.into(),
    }
}

/// Clipped surrogate loss (negated, averaged over steps) minus the entropy bonus,
/// re-unrolling each segment from its stored initial recurrent state.
///
/// Returns `(loss, entropy_sum, clipped_count, steps)`.
pub fn policy_loss<'t, A: Actor + ?Sized>(
    actor: &A,
    p: &Bound<'t>,
    tape: &'t Tape,
    segments: &[(usize, &Segment)],
    advantages: &[Vec<f64>],
    cfg: &PpoConfig,
) -> Result<(Var<'t>, Var<'t>, usize, usize), PpoError> {
    let mut surrogate = tape.constant(Matrix::scalar(0.0));
    let mut entropy = tape.constant(Matrix::scalar(0.0));
    let mut clipped = 0;
    let mut steps = 0;
    for &(si, seg) in segments {
        let mut carry = seg.initial_carry.on(tape);
        for (t, step) in seg.steps.iter().enumerate() {
            let out = actor.step(p, &step.obs, carry)?;
            let old = step.action.log_prob;
            let lp = log_prob_var(&out, step.action.squash_data()).map_err(|e| ratio_error(e, si, t, old))?;
            let ratio = lp.offset(-old)?.exp().map_err(|e| ratio_error(e, si, t, old))?;
            let r = ratio.item()?;
            if !r.is_finite() {
                return Err(PpoError::NonFiniteRatio { segment: si, step: t, new_log_prob: lp.item()?, old_log_prob: old });
            }
            if (r - 1.0).abs() > cfg.clip {
                clipped += 1;
            }
            let a = advantages[si][t];
            let unclipped = ratio.scale(a)?;
            let clipped_term = ratio.clip(1.0 - cfg.clip, 1.0 + cfg.clip)?.scale(a)?;
            surrogate = surrogate.add(unclipped.minimum(clipped_term)?)?;
            entropy = entropy.add(gaussian_entropy(out.log_std)?.scale(1.0 / step.obs.n_agents as f64)?)?;
            carry = out.carry;
            steps += 1;
        }
    }
    let inv = 1.0 / steps.max(1) as f64;
    let loss = surrogate.scale(-inv)?.sub(entropy.scale(cfg.entropy_coef * inv)?)?;
    Ok((loss, entropy, clipped, steps))
}

/// Mean squared error of the critic against `returns`.
pub fn value_loss<'t>(
    critic: &Critic,
    p: &Bound<'t>,
    tape: &'t Tape,
    segments: &[(usize, &Segment)],
    returns: &[Vec<f64>],
) -> Result<Var<'t>, PpoError> {
    let mut total = tape.constant(Matrix::scalar(0.0));
    let mut steps = 0;
    for &(si, seg) in segments {
        for (t, step) in seg.steps.iter().enumerate() {
            let v = critic.value(p, tape, &step.obs, step.progress)?;
            total = total.add(v.offset(-returns[si][t])?.square()?)?;
            steps += 1;
        }
    }
    Ok(total.scale(1.0 / steps.max(1) as f64)?)
}

/// Log-probabilities of every stored action under the current parameters.
pub fn recompute_log_probs<A: Actor + ?Sized>(actor: &A, buffer: &RolloutBuffer) -> Result<Vec<Vec<f64>>, PpoError> {
    buffer
        .segments
        .iter()
        .map(|seg| {
            let tape = Tape::new();
            let p = actor.params().bind_frozen(&tape);
            let mut carry = seg.initial_carry.on(&tape);
            let mut out_lps = Vec::with_capacity(seg.steps.len());
            for step in &seg.steps {
                let out = actor.step(&p, &step.obs, carry)?;
                out_lps.push(log_prob_var(&out, step.action.squash_data())?.item()?);
                carry = out.carry;
            }
            Ok(out_lps)
        })
        .collect()
}

/// Several epochs of clipped-surrogate updates over `buffer`.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<A: Actor + ?Sized>(
    actor: &mut A,
    critic: &mut Critic,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    actor_opt: &mut Adam,
    critic_opt: &mut Adam,
    rng: &mut impl Rng,
) -> Result<UpdateStats, PpoError> {
    let (advs, rets) = advantages(buffer, cfg)?;
    let mut order: Vec<usize> = (0..buffer.segments.len()).collect();
    let mut stats = UpdateStats::default();
    let mut batches = 0usize;
    let mut streak = 0usize;
    let mut clipped_total = 0usize;
    let mut steps_total = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_segments) {
            let segs: Vec<(usize, &Segment)> = chunk.iter().map(|&i| (i, &buffer.segments[i])).collect();
            let tape = Tape::new();
            let pa = actor.params().bind(&tape);
            let pc = critic.params().bind(&tape);
            let (pl, ent, clipped, steps) = policy_loss(&*actor, &pa, &tape, &segs, &advs, cfg)?;
            let vl = value_loss(critic, &pc, &tape, &segs, &rets)?;
            let loss = pl.add(vl.scale(cfg.value_coef)?)?;
            let loss_value = loss.item()?;
            if !loss_value.is_finite() {
                streak += 1;
                stats.skipped_steps += 1;
                if streak >= cfg.max_nonfinite_steps {
                    return Err(PpoError::NonFiniteStreak { iteration: 0, steps: streak });
                }
                continue;
            }
            let grads = match tape.backward(loss) {
                Ok(g) => g,
                Err(TensorError::NonFinite { .. }) => {
                    streak += 1;
                    stats.skipped_steps += 1;
                    if streak >= cfg.max_nonfinite_steps {
                        return Err(PpoError::NonFiniteStreak { iteration: 0, steps: streak });
                    }
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            streak = 0;
            let mut ga = pa.gradients(&grads);
            let mut gc = pc.gradients(&grads);
            let norm = clip_split_norm(actor.params(), &mut ga, "magnitude.", cfg.max_grad_norm);
            clip_global_norm(&mut [&mut gc], cfg.max_grad_norm);
            actor_opt.step(actor.params_mut(), &ga);
            critic_opt.step(critic.params_mut(), &gc);

            let ent_mean = ent.item()? / steps.max(1) as f64;
            stats.policy_loss += pl.item()? + cfg.entropy_coef * ent_mean;
            stats.value_loss += vl.item()?;
            stats.entropy += ent_mean;
            stats.grad_norm += norm;
            clipped_total += clipped;
            steps_total += steps;
            batches += 1;
        }
    }
    if batches > 0 {
        let k = 1.0 / batches as f64;
        stats.policy_loss *= k;
        stats.value_loss *= k;
        stats.entropy *= k;
        stats.grad_norm *= k;
        stats.clip_fraction = clipped_total as f64 / steps_total.max(1) as f64;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::policy::{MadConfig, MadPolicy};
    use crate::ppo::{collect_rollouts, CriticConfig, Worker};
    use crate::tensor::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_buffer<A: Actor + ?Sized>(actor: &A, critic: &Critic, seed: u64) -> RolloutBuffer {
        let env = EnvConfig { noise_std: 0.01, ..EnvConfig::default().with_agents(2) };
        let mut workers = vec![Worker::new(0, &env, seed, actor).unwrap()];
        collect_rollouts(&mut workers, actor, critic, 10).unwrap()
    }

    fn setup(seed: u64) -> (MadPolicy, Critic, RolloutBuffer) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = MadPolicy::new(&MadConfig::default(), &mut rng).unwrap();
        let critic = Critic::new(&CriticConfig::default(), &mut rng).unwrap();
        let buffer = small_buffer(&actor, &critic, seed);
        (actor, critic, buffer)
    }

    #[test]
    fn fresh_buffer_ratio_is_one() {
        let (actor, _, buffer) = setup(1);
        let lps = recompute_log_probs(&actor, &buffer).unwrap();
        for (seg, lp) in buffer.segments.iter().zip(&lps) {
            for (step, new) in seg.steps.iter().zip(lp) {
                assert!(((new - step.action.log_prob).exp() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn policy_loss_gradient_matches_finite_differences() {
        let (mut actor, _, buffer) = setup(2);
        let cfg = PpoConfig { entropy_coef: 0.05, ..PpoConfig::default() };
        let (advs, _) = advantages(&buffer, &cfg).unwrap();
        // perturb away from the sampling parameters
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ids: Vec<_> = actor.params().ids().collect();
        for id in ids {
            for v in actor.params_mut().get_mut(id).data_mut() {
                *v += 1e-4 * (rng.random::<f64>() - 0.5);
            }
        }
        let segs: Vec<(usize, &Segment)> = buffer.segments.iter().enumerate().collect();
        let report = finite_diff_check(actor.params(), 1e-5, |tape, p| {
            policy_loss(&actor, p, tape, &segs, &advs, &cfg).map(|r| r.0).map_err(|e| match e {
                PpoError::Tensor(t) => t,
                other => panic!("{other}"),
            })
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn value_loss_gradient_matches_finite_differences() {
        let (_, critic, buffer) = setup(3);
        let (_, rets) = advantages(&buffer, &PpoConfig::default()).unwrap();
        let segs: Vec<(usize, &Segment)> = buffer.segments.iter().enumerate().collect();
        let report = finite_diff_check(critic.params(), 1e-5, |tape, p| {
            value_loss(&critic, p, tape, &segs, &rets).map_err(|e| match e {
                PpoError::Tensor(t) => t,
                other => panic!("{other}"),
            })
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn update_moves_parameters_and_reports_stats() {
        let (mut actor, mut critic, buffer) = setup(4);
        let cfg = PpoConfig { epochs: 2, minibatch_segments: 1, ..PpoConfig::default() };
        let before = actor.params().clone();
        let mut aopt = Adam::new(actor.params(), cfg.learning_rate);
        let mut copt = Adam::new(critic.params(), cfg.learning_rate);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let stats = ppo_update(&mut actor, &mut critic, &buffer, &cfg, &mut aopt, &mut copt, &mut rng).unwrap();
        assert!(stats.value_loss.is_finite() && stats.policy_loss.is_finite());
        assert!((0.0..=1.0).contains(&stats.clip_fraction));
        assert_eq!(stats.skipped_steps, 0);
        assert_ne!(actor.params().to_named(), before.to_named());
    }

    #[test]
    fn advantages_are_normalized() {
        let (_, _, buffer) = setup(5);
        let (advs, rets) = advantages(&buffer, &PpoConfig::default()).unwrap();
        let flat: Vec<f64> = advs.into_iter().flatten().collect();
        let n = flat.len() as f64;
        let mean = flat.iter().sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert_eq!(rets.iter().map(Vec::len).sum::<usize>(), buffer.len());
    }
}
