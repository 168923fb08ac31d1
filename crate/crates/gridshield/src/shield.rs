//! The predictive deployment filter: N-step verification of the greedy policy,
//! local Q replanning against the shield on verification failure, and
//! action-replacement before every real move.

use crate::dynaq::SampleModel;
use crate::grid::{GridSpec, RewardSpec};
use crate::mdp::{greedy_support, Action, NextState, QTable, StateId, ACTIONS, NUM_ACTIONS};
use crate::safety::{is_verified_safe, reach_bar, safe_action, SafetyController, TransitionSystem};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};

/// Deployment parameters of the safety filter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShieldParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Planning iterations per intervention.
    pub k_planning: usize,
    /// Prediction horizon N.
    pub n_horizon: usize,
    /// Engineering bound on the horizon.
    pub n_max: usize,
}

impl Default for ShieldParams {
    fn default() -> Self {
        ShieldParams {
            alpha: 0.1,
            gamma: 0.99,
            epsilon: 0.1,
            k_planning: 100,
            n_horizon: 1,
            n_max: 8,
        }
    }
}

impl ShieldParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_horizon > self.n_max {
            return Err(format!(
                "n_horizon {} exceeds n_max {}",
                self.n_horizon, self.n_max
            ));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(format!("epsilon must be in [0,1], got {}", self.epsilon));
        }
        Ok(())
    }
}

/// Working copy of the deployed Q-table over a local region. Reads fall back
/// to the base table outside the override set; the base is never written.
pub struct LocalQ<'a> {
    base: &'a QTable,
    region: BTreeSet<StateId>,
    overrides: HashMap<(StateId, Action), f64>,
}

impl<'a> LocalQ<'a> {
    /// Copies the base values for every state in `region`.
    pub fn new(base: &'a QTable, region: BTreeSet<StateId>) -> LocalQ<'a> {
        let mut overrides = HashMap::with_capacity(region.len() * NUM_ACTIONS);
        for &s in &region {
            for a in ACTIONS {
                overrides.insert((s, a), base.get(s, a));
            }
        }
        LocalQ {
            base,
            region,
            overrides,
        }
    }

    pub fn region(&self) -> &BTreeSet<StateId> {
        &self.region
    }

    pub fn get(&self, s: StateId, a: Action) -> f64 {
        self.overrides
            .get(&(s, a))
            .copied()
            .unwrap_or_else(|| self.base.get(s, a))
    }

    pub fn set(&mut self, s: StateId, a: Action, v: f64) {
        debug_assert!(self.region.contains(&s), "write outside override region");
        self.overrides.insert((s, a), v);
    }

    pub fn max_value(&self, s: StateId) -> f64 {
        ACTIONS
            .iter()
            .map(|&a| self.get(s, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn greedy(&self, s: StateId) -> Action {
        let mut best = Action::Up;
        let mut best_v = self.get(s, Action::Up);
        for &a in &ACTIONS[1..] {
            let v = self.get(s, a);
            if v > best_v {
                best = a;
                best_v = v;
            }
        }
        best
    }

    pub fn epsilon_greedy<R: Rng + ?Sized>(&self, s: StateId, epsilon: f64, rng: &mut R) -> Action {
        if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
            ACTIONS[rng.gen_range(0..NUM_ACTIONS)]
        } else {
            self.greedy(s)
        }
    }
}

/// One record per executed step of a deployment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub state: StateId,
    pub proposed_action: Action,
    pub executed_action: Action,
    pub intervened: bool,
    pub reward: f64,
}

/// Full deployment record with episode totals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
    pub discounted_return: f64,
    pub collisions: usize,
    pub reached_goal: bool,
    pub stuck: bool,
    /// Mean wall-clock per executed step, in milliseconds.
    pub runtime_per_step_ms: f64,
    pub interventions: usize,
}

impl EpisodeTrace {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }
}

/// Uniform draw over recorded model keys whose state lies in `region`.
pub fn rand_sample<R: Rng + ?Sized>(
    m: &SampleModel,
    region: &BTreeSet<StateId>,
    rng: &mut R,
) -> Option<(StateId, Action)> {
    let candidates: Vec<(StateId, Action)> = m
        .keys()
        .iter()
        .copied()
        .filter(|(s, _)| region.contains(s))
        .collect();
    if candidates.is_empty() {
        None
    } else {
        Some(candidates[rng.gen_range(0..candidates.len())])
    }
}

/// One planning iteration: sample a modeled pair in the local region, run the
/// proposed action through the shield, and apply the learning update at the
/// PROPOSED index with the outcome of the CORRECTED action. The working copy
/// thereby absorbs the shield's counter-moves.
///
/// The shield inside planning checks safety against the current wall time `t`
/// for every simulated state; it is deliberately unaware of future schedule
/// changes beyond what the controller domains at `t`/`t+1` encode.
#[allow(clippy::too_many_arguments)]
pub fn plan_iteration<R: Rng + ?Sized>(
    lq: &mut LocalQ<'_>,
    m: &SampleModel,
    c: &SafetyController,
    ts: &TransitionSystem,
    sample_region: &BTreeSet<StateId>,
    t: usize,
    p: &ShieldParams,
    rng: &mut R,
) {
    let Some((s, proposed)) = rand_sample(m, sample_region, rng) else {
        return;
    };
    // A modeled state can be outside today's controller domain (stale training
    // experience under distribution shift); the shield has no fallback there,
    // so the draw is discarded.
    if !c.in_domain(t, s) {
        return;
    }
    let corrected = safe_action(ts, c, s, t, proposed);
    let Some((r, next)) = m.query(s, corrected) else {
        return;
    };
    let bootstrap = match next {
        NextState::State(sn) => lq.max_value(sn),
        NextState::Terminal => 0.0,
    };
    let old = lq.get(s, proposed);
    lq.set(s, proposed, old + p.alpha * (r + p.gamma * bootstrap - old));
}

/// Runs the deployment loop from the environment's initial state: act greedily
/// while the greedy policy verifies safe for the next N steps, otherwise
/// replan on a fresh local working copy; every executed action passes through
/// the shield, and every real outcome refreshes the model.
#[allow(clippy::too_many_arguments)]
pub fn deploy<R: Rng + ?Sized>(
    env_test: &GridSpec,
    rspec: &RewardSpec,
    q_star: &QTable,
    m: &mut SampleModel,
    c: &SafetyController,
    ts: &TransitionSystem,
    p: &ShieldParams,
    rng: &mut R,
    max_steps: usize,
) -> EpisodeTrace {
    p.validate().expect("valid shield params");
    assert!(
        c.in_domain(0, env_test.initial),
        "initial state outside dom(C_0)"
    );

    let mut steps = Vec::new();
    let mut s = env_test.initial;
    let mut t = 0usize;
    let mut discounted_return = 0.0;
    let mut collisions = 0usize;
    let mut reached_goal = false;
    let mut interventions = 0usize;
    let started = std::time::Instant::now();

    while steps.len() < max_steps {
        let verified = is_verified_safe(ts, c, |x| greedy_support(q_star, x), s, t, p.n_horizon);
        let proposed = if verified {
            crate::mdp::greedy_policy(q_star, s)
        } else {
            interventions += 1;
            let region = reach_bar(ts, s, p.n_horizon + 1);
            let sample_region = reach_bar(ts, s, p.n_horizon);
            let mut lq = LocalQ::new(q_star, region);
            for _ in 0..p.k_planning {
                plan_iteration(&mut lq, m, c, ts, &sample_region, t, p, rng);
            }
            lq.epsilon_greedy(s, p.epsilon, rng)
        };
        let executed = safe_action(ts, c, s, t, proposed);
        let out = env_test.step(rspec, s, executed, t);
        let next = if out.terminal {
            NextState::Terminal
        } else {
            NextState::State(out.next_state)
        };
        m.record(s, executed, out.reward, next);
        discounted_return += p.gamma.powi(steps.len() as i32) * out.reward;
        steps.push(TraceStep {
            t,
            state: s,
            proposed_action: proposed,
            executed_action: executed,
            intervened: proposed != executed,
            reward: out.reward,
        });
        if out.collided {
            collisions += 1;
        }
        if out.reached_goal {
            reached_goal = true;
        }
        if out.terminal {
            break;
        }
        s = out.next_state;
        t += 1;
    }

    let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
    let n = steps.len().max(1);
    EpisodeTrace {
        interventions,
        discounted_return,
        collisions,
        reached_goal,
        stuck: !reached_goal && collisions == 0,
        runtime_per_step_ms: elapsed_ms / n as f64,
        steps,
    }
}

/// Unshielded greedy rollout of a Q-table; the baseline that may collide.
pub fn deploy_unshielded(
    env_test: &GridSpec,
    rspec: &RewardSpec,
    q: &QTable,
    gamma: f64,
    max_steps: usize,
) -> EpisodeTrace {
    let mut steps = Vec::new();
    let mut s = env_test.initial;
    let mut t = 0usize;
    let mut discounted_return = 0.0;
    let mut collisions = 0usize;
    let mut reached_goal = false;
    let started = std::time::Instant::now();

    while steps.len() < max_steps {
        let a = crate::mdp::greedy_policy(q, s);
        let out = env_test.step(rspec, s, a, t);
        discounted_return += gamma.powi(steps.len() as i32) * out.reward;
        steps.push(TraceStep {
            t,
            state: s,
            proposed_action: a,
            executed_action: a,
            intervened: false,
            reward: out.reward,
        });
        if out.collided {
            collisions += 1;
        }
        if out.reached_goal {
            reached_goal = true;
        }
        if out.terminal {
            break;
        }
        s = out.next_state;
        t += 1;
    }

    let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
    let n = steps.len().max(1);
    EpisodeTrace {
        interventions: 0,
        discounted_return,
        collisions,
        reached_goal,
        stuck: !reached_goal && collisions == 0,
        runtime_per_step_ms: elapsed_ms / n as f64,
        steps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::load_layout;
    use crate::safety::{build_safety_model, synthesize_controller};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (GridSpec, TransitionSystem, SafetyController) {
        let env = load_layout("grid 3 3\nI..\n.#.\n..G\n").unwrap();
        let ts = build_safety_model(&env);
        let c = synthesize_controller(&ts, &env, 1).unwrap();
        (env, ts, c)
    }

    #[test]
    fn local_q_reads_fall_back_to_base() {
        let mut base = QTable::zeros(9);
        base.set(StateId(8), Action::Up, 7.0);
        let region: BTreeSet<StateId> = [StateId(0), StateId(1)].into();
        let mut lq = LocalQ::new(&base, region);
        lq.set(StateId(0), Action::Up, 3.0);
        assert_eq!(lq.get(StateId(0), Action::Up), 3.0);
        assert_eq!(lq.get(StateId(8), Action::Up), 7.0);
        // Base untouched.
        assert_eq!(base.get(StateId(0), Action::Up), 0.0);
    }

    #[test]
    fn rand_sample_empty_intersection() {
        let m = SampleModel::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            rand_sample(&m, &BTreeSet::from([StateId(0)]), &mut rng),
            None
        );
    }

    #[test]
    fn rand_sample_single_candidate() {
        let mut m = SampleModel::new();
        m.record(StateId(2), Action::Down, -1.0, NextState::State(StateId(5)));
        m.record(StateId(7), Action::Up, -1.0, NextState::State(StateId(4)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(
                rand_sample(&m, &BTreeSet::from([StateId(2)]), &mut rng),
                Some((StateId(2), Action::Down))
            );
        }
    }

    #[test]
    fn rand_sample_uniform_chi_square() {
        let mut m = SampleModel::new();
        let keys = [
            (StateId(0), Action::Up),
            (StateId(0), Action::Down),
            (StateId(1), Action::Left),
            (StateId(1), Action::Right),
        ];
        for (s, a) in keys {
            m.record(s, a, -1.0, NextState::State(StateId(0)));
        }
        // A fifth entry outside the region must never be drawn.
        m.record(StateId(5), Action::Stop, -1.0, NextState::Terminal);
        let region: BTreeSet<StateId> = [StateId(0), StateId(1)].into();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 10_000usize;
        let mut counts = HashMap::new();
        for _ in 0..n {
            let k = rand_sample(&m, &region, &mut rng).unwrap();
            assert!(keys.contains(&k));
            *counts.entry(k).or_insert(0usize) += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = keys
            .iter()
            .map(|k| {
                let c = *counts.get(k).unwrap_or(&0) as f64;
                (c - expected).powi(2) / expected
            })
            .sum();
        // 3 dof: mean 3, sd sqrt(6); 3 + 3*2.45 ~ 10.3
        assert!(chi2 < 10.5, "chi2 = {chi2}");
    }

    #[test]
    fn plan_iteration_noop_on_unmodeled_pair() {
        let (env, ts, c) = fixture();
        let m = SampleModel::new();
        let base = QTable::zeros(env.num_states());
        let region = reach_bar(&ts, env.initial, 1);
        let mut lq = LocalQ::new(&base, region.clone());
        let p = ShieldParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        plan_iteration(&mut lq, &m, &c, &ts, &region, 0, &p, &mut rng);
        for &s in lq.region() {
            for a in ACTIONS {
                assert_eq!(lq.get(s, a), 0.0);
            }
        }
    }

    #[test]
    fn plan_iteration_teaches_shield_counter_move() {
        // 2x2 fixture: proposing a move into the wall cell gets corrected to
        // Stop; the update at the proposed index must use the Stop outcome.
        let env = load_layout("grid 2 2\nI#\n.G\n").unwrap();
        let ts = build_safety_model(&env);
        let c = synthesize_controller(&ts, &env, 1).unwrap();
        let mut m = SampleModel::new();
        // Only entry: stopping at the start cell.
        m.record(StateId(0), Action::Stop, -1.0, NextState::State(StateId(0)));
        // And the proposed unsafe move toward the wall (recorded during some
        // past episode as a collision).
        m.record(StateId(0), Action::Right, -51.0, NextState::Terminal);
        let base = QTable::zeros(env.num_states());
        let region: BTreeSet<StateId> = BTreeSet::from([StateId(0)]);
        let mut lq = LocalQ::new(&base, region.clone());
        let p = ShieldParams {
            epsilon: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            plan_iteration(&mut lq, &m, &c, &ts, &region, 0, &p, &mut rng);
        }
        // Both sampled pairs route through the shield: Right is corrected to
        // Stop, so BOTH indices learn from the Stop outcome (-1, stay). The
        // collision entry is never replayed.
        let v_right = lq.get(StateId(0), Action::Right);
        let v_stop = lq.get(StateId(0), Action::Stop);
        assert!(v_right < 0.0 && v_right > -51.0, "v_right = {v_right}");
        assert!((v_right - v_stop).abs() < 1.0);
    }

    #[test]
    fn deploy_base_table_is_never_mutated() {
        let (env, ts, c) = fixture();
        let q = QTable::zeros(env.num_states());
        let before = q.clone();
        let mut m = SampleModel::new();
        let p = ShieldParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let _ = deploy(
            &env,
            &RewardSpec::default(),
            &q,
            &mut m,
            &c,
            &ts,
            &p,
            &mut rng,
            50,
        );
        assert_eq!(q, before);
    }

    #[test]
    fn deploy_never_collides() {
        let (env, ts, c) = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..20 {
            let mut q = QTable::zeros(env.num_states());
            // Adversarial random table.
            let mut qrng = ChaCha8Rng::seed_from_u64(seed);
            for s in (0..env.num_states()).map(StateId) {
                for a in ACTIONS {
                    q.set(s, a, qrng.gen_range(-10.0..10.0));
                }
            }
            let mut m = SampleModel::new();
            let p = ShieldParams {
                n_horizon: (seed % 3) as usize,
                ..Default::default()
            };
            let trace = deploy(
                &env,
                &RewardSpec::default(),
                &q,
                &mut m,
                &c,
                &ts,
                &p,
                &mut rng,
                100,
            );
            assert_eq!(trace.collisions, 0);
            for step in &trace.steps {
                assert!(!env.occupied(step.state, step.t));
            }
        }
    }

    #[test]
    fn trace_flags_are_consistent() {
        let (env, ts, c) = fixture();
        let q = QTable::zeros(env.num_states());
        let mut m = SampleModel::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let trace = deploy(
            &env,
            &RewardSpec::default(),
            &q,
            &mut m,
            &c,
            &ts,
            &ShieldParams::default(),
            &mut rng,
            30,
        );
        for step in &trace.steps {
            assert_eq!(
                step.intervened,
                step.proposed_action != step.executed_action
            );
        }
        assert!(trace.stuck || trace.reached_goal);
    }
}
