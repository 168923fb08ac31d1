//! Dyna-Q training: Q-learning on real transitions plus planning updates drawn
//! from a sample model of the experienced environment.

use crate::grid::{GridSpec, RewardSpec};
use crate::mdp::{epsilon_greedy, q_update, Action, Hyperparameters, NextState, QTable, StateId};
use rand::Rng;
use std::collections::HashMap;

/// Last-observed outcome per (state, action): deterministic worlds keep a
/// single entry, overwritten on revisit. Insertion order of the keys is
/// retained so uniform sampling is reproducible across runs.
#[derive(Debug, Clone, Default)]
pub struct SampleModel {
    entries: HashMap<(StateId, Action), (f64, NextState)>,
    keys: Vec<(StateId, Action)>,
}

impl SampleModel {
    pub fn new() -> SampleModel {
        SampleModel::default()
    }

    pub fn record(&mut self, s: StateId, a: Action, reward: f64, next: NextState) {
        if self.entries.insert((s, a), (reward, next)).is_none() {
            self.keys.push((s, a));
        }
    }

    /// The recorded outcome, or `None` for a pair never experienced.
    pub fn query(&self, s: StateId, a: Action) -> Option<(f64, NextState)> {
        self.entries.get(&(s, a)).copied()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Recorded keys in insertion order.
    pub fn keys(&self) -> &[(StateId, Action)] {
        &self.keys
    }

    /// Uniform draw over all recorded keys.
    pub fn sample_key<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(StateId, Action)> {
        if self.keys.is_empty() {
            None
        } else {
            Some(self.keys[rng.gen_range(0..self.keys.len())])
        }
    }
}

fn planning_sweep<R: Rng + ?Sized>(
    q: &mut QTable,
    model: &SampleModel,
    h: &Hyperparameters,
    rng: &mut R,
) {
    for _ in 0..h.planning_steps {
        if let Some((ps, pa)) = model.sample_key(rng) {
            let (r, next) = model.query(ps, pa).expect("sampled key is recorded");
            q_update(q, ps, pa, r, next, h.alpha, h.gamma);
        }
    }
}

fn run_episodes<R: Rng + ?Sized>(
    env: &GridSpec,
    rspec: &RewardSpec,
    q: &mut QTable,
    model: &mut SampleModel,
    h: &Hyperparameters,
    rng: &mut R,
) {
    for _ in 0..h.max_episodes {
        let mut s = env.initial;
        for t in 0..h.max_steps_per_episode {
            let a = epsilon_greedy(q, s, h.epsilon, rng);
            let out = env.step(rspec, s, a, t);
            let next = if out.terminal {
                NextState::Terminal
            } else {
                NextState::State(out.next_state)
            };
            q_update(q, s, a, out.reward, next, h.alpha, h.gamma);
            model.record(s, a, out.reward, next);
            planning_sweep(q, model, h, rng);
            if out.terminal {
                break;
            }
            s = out.next_state;
        }
    }
}

/// Trains Dyna-Q from scratch in `env_train`, returning the learned Q-table
/// and the sample model of everything the agent experienced.
pub fn train_dynaq<R: Rng + ?Sized>(
    env_train: &GridSpec,
    rspec: &RewardSpec,
    h: &Hyperparameters,
    rng: &mut R,
) -> (QTable, SampleModel) {
    h.validate().expect("valid hyperparameters");
    let mut q = QTable::zeros(env_train.num_states());
    let mut model = SampleModel::new();
    run_episodes(env_train, rspec, &mut q, &mut model, h, rng);
    (q, model)
}

/// Continues Dyna-Q from an existing table and model in a (possibly changed)
/// environment. Stale model entries get overwritten as they are re-experienced.
pub fn retrain<R: Rng + ?Sized>(
    env_test: &GridSpec,
    rspec: &RewardSpec,
    q0: &QTable,
    m0: &SampleModel,
    h: &Hyperparameters,
    rng: &mut R,
) -> (QTable, SampleModel) {
    let mut q = q0.clone();
    let mut model = m0.clone();
    if h.max_episodes == 0 {
        return (q, model);
    }
    h.validate().expect("valid hyperparameters");
    run_episodes(env_test, rspec, &mut q, &mut model, h, rng);
    (q, model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{load_layout, PathLength};
    use crate::mdp::greedy_policy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_env() -> GridSpec {
        load_layout("grid 4 4\nI...\n.#..\n....\n...G\n").unwrap()
    }

    #[test]
    fn model_query_unrecorded_is_empty() {
        let m = SampleModel::new();
        assert_eq!(m.query(StateId(0), Action::Up), None);
    }

    #[test]
    fn model_query_returns_last_record() {
        let mut m = SampleModel::new();
        m.record(StateId(1), Action::Left, -1.0, NextState::State(StateId(0)));
        assert_eq!(
            m.query(StateId(1), Action::Left),
            Some((-1.0, NextState::State(StateId(0))))
        );
        m.record(StateId(1), Action::Left, -51.0, NextState::Terminal);
        assert_eq!(
            m.query(StateId(1), Action::Left),
            Some((-51.0, NextState::Terminal))
        );
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn zero_planning_steps_is_plain_q_learning() {
        // With the same seed, Dyna-Q with planning_steps=0 must produce the
        // same table as a hand-rolled Q-learning loop.
        let env = small_env();
        let rspec = RewardSpec::default();
        let h = Hyperparameters {
            planning_steps: 0,
            max_episodes: 50,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (q, _) = train_dynaq(&env, &rspec, &h, &mut rng);

        let mut rng2 = ChaCha8Rng::seed_from_u64(11);
        let mut q2 = QTable::zeros(env.num_states());
        for _ in 0..h.max_episodes {
            let mut s = env.initial;
            for t in 0..h.max_steps_per_episode {
                let a = epsilon_greedy(&q2, s, h.epsilon, &mut rng2);
                let out = env.step(&rspec, s, a, t);
                let next = if out.terminal {
                    NextState::Terminal
                } else {
                    NextState::State(out.next_state)
                };
                q_update(&mut q2, s, a, out.reward, next, h.alpha, h.gamma);
                if out.terminal {
                    break;
                }
                s = out.next_state;
            }
        }
        assert_eq!(q, q2);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let env = small_env();
        let h = Hyperparameters {
            max_episodes: 100,
            ..Default::default()
        };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            train_dynaq(&env, &RewardSpec::default(), &h, &mut rng)
        };
        let (qa, ma) = run();
        let (qb, mb) = run();
        assert_eq!(qa, qb);
        assert_eq!(ma.keys(), mb.keys());
    }

    #[test]
    fn retrain_zero_episodes_leaves_table_unchanged() {
        let env = small_env();
        let h = Hyperparameters {
            max_episodes: 30,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (q0, m0) = train_dynaq(&env, &RewardSpec::default(), &h, &mut rng);
        let (q1, m1) = retrain(
            &env,
            &RewardSpec::default(),
            &q0,
            &m0,
            &Hyperparameters {
                max_episodes: 0,
                ..Default::default()
            },
            &mut rng,
        );
        assert_eq!(q1, q0);
        assert_eq!(m1.keys(), m0.keys());
    }

    #[test]
    fn greedy_rollout_reaches_goal_optimally_after_training() {
        let env = small_env();
        let rspec = RewardSpec::default();
        let h = Hyperparameters {
            max_episodes: 400,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (q, model) = train_dynaq(&env, &rspec, &h, &mut rng);
        let optimal = match env.optimal_steps(env.initial, 0, 1000) {
            PathLength::Steps(n) => n,
            PathLength::Unreachable => panic!("goal unreachable"),
        };
        let mut s = env.initial;
        let mut steps = 0;
        let mut t = 0;
        loop {
            let a = greedy_policy(&q, s);
            // Every (s,a) along the greedy path was experienced.
            assert!(model.query(s, a).is_some());
            let out = env.step(&rspec, s, a, t);
            steps += 1;
            assert!(!out.collided);
            if out.terminal {
                assert!(out.reached_goal);
                break;
            }
            s = out.next_state;
            t += 1;
            assert!(steps <= optimal, "greedy rollout exceeded optimal length");
        }
        assert_eq!(steps, optimal);
    }
}
