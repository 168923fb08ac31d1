//! Safety-relevant transition system, reachability operators, safety-controller
//! synthesis, the N-step policy verifier and the action-replacement shield.

use crate::grid::GridSpec;
use crate::mdp::{Action, StateId, ACTIONS, NUM_ACTIONS};
use std::collections::BTreeSet;

/// Transition system over the grid's movement geometry. Successor sets encode
/// cell adjacency under the five actions only; time-varying occupancy enters
/// through the safety controller, never through the transition relation.
#[derive(Debug, Clone)]
pub struct TransitionSystem {
    num_states: usize,
    // successors[s * NUM_ACTIONS + a]; deterministic grids have singletons.
    successors: Vec<Vec<StateId>>,
}

impl TransitionSystem {
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn successors(&self, s: StateId, a: Action) -> &[StateId] {
        &self.successors[s.0 * NUM_ACTIONS + a.index()]
    }

    pub fn defined_pairs(&self) -> usize {
        self.successors.iter().filter(|v| !v.is_empty()).count()
    }
}

/// Builds the safety-relevant model of a gridworld: every cell has all five
/// actions defined, off-grid moves resolve to staying in place.
pub fn build_safety_model(env: &GridSpec) -> TransitionSystem {
    let n = env.num_states();
    let mut successors = Vec::with_capacity(n * NUM_ACTIONS);
    for s in (0..n).map(StateId) {
        for a in ACTIONS {
            successors.push(vec![env.apply_move(s, a)]);
        }
    }
    TransitionSystem {
        num_states: n,
        successors,
    }
}

/// One-step image iterated `k` times: `reach(S, 0) = S`,
/// `reach(S, k) = image(reach(S, k-1))` under all actions.
pub fn reach(ts: &TransitionSystem, states: &BTreeSet<StateId>, k: usize) -> BTreeSet<StateId> {
    let mut current = states.clone();
    for _ in 0..k {
        let mut next = BTreeSet::new();
        for &s in &current {
            for a in ACTIONS {
                next.extend(ts.successors(s, a).iter().copied());
            }
        }
        current = next;
    }
    current
}

/// States reachable from `s` in at most `n` steps, the state itself included.
pub fn reach_bar(ts: &TransitionSystem, s: StateId, n: usize) -> BTreeSet<StateId> {
    let mut acc = BTreeSet::new();
    let mut frontier = BTreeSet::from([s]);
    acc.insert(s);
    for _ in 0..n {
        frontier = reach(ts, &frontier, 1);
        let before = acc.len();
        acc.extend(frontier.iter().copied());
        if acc.len() == before {
            break;
        }
    }
    acc
}

/// Time-indexed map from states to allowed action sets. Stored up to the
/// stabilization time and treated as stationary afterwards; all time lookups
/// clamp to `stabilization_time`.
#[derive(Debug, Clone)]
pub struct SafetyController {
    stabilization_time: usize,
    num_states: usize,
    // allowed[min(t, t_stab)][s]: bitmask over canonical action indices.
    allowed: Vec<Vec<u8>>,
}

impl SafetyController {
    pub fn stabilization_time(&self) -> usize {
        self.stabilization_time
    }

    fn mask(&self, t: usize, s: StateId) -> u8 {
        self.allowed[t.min(self.stabilization_time)][s.0]
    }

    pub fn allowed(&self, t: usize, s: StateId) -> Vec<Action> {
        let m = self.mask(t, s);
        ACTIONS
            .iter()
            .copied()
            .filter(|a| m & (1 << a.index()) != 0)
            .collect()
    }

    pub fn permits(&self, t: usize, s: StateId, a: Action) -> bool {
        self.mask(t, s) & (1 << a.index()) != 0
    }

    pub fn in_domain(&self, t: usize, s: StateId) -> bool {
        self.mask(t, s) != 0
    }

    pub fn domain(&self, t: usize) -> BTreeSet<StateId> {
        (0..self.num_states)
            .map(StateId)
            .filter(|&s| self.in_domain(t, s))
            .collect()
    }

    /// Serializable view: per time step, `(cell, action bitmask)` for every
    /// state in the domain. Used by the harness debug report.
    pub fn masks(&self) -> Vec<Vec<(usize, u8)>> {
        self.allowed
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|&(_, &m)| m != 0)
                    .map(|(s, &m)| (s, m))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("controller domain at t=0 is empty")]
    EmptyInitialDomain,
    #[error("horizon {horizon} is below the stabilization time {t_stab}")]
    HorizonTooShort { horizon: usize, t_stab: usize },
}

fn action_mask(ts: &TransitionSystem, s: StateId, next_dom: &[bool]) -> u8 {
    let mut mask = 0u8;
    for a in ACTIONS {
        let succ = ts.successors(s, a);
        if !succ.is_empty() && succ.iter().all(|n| next_dom[n.0]) {
            mask |= 1 << a.index();
        }
    }
    mask
}

/// Synthesizes the maximal safety controller by backward induction: a greatest
/// fixed point over the stationary safe set at the stabilization time, then
/// `allowed(t,s) = { a : F(s,a) within dom(C_{t+1}) }` restricted to the safe
/// set at `t`, for `t` counting down to zero.
pub fn synthesize_controller(
    ts: &TransitionSystem,
    env: &GridSpec,
    horizon: usize,
) -> Result<SafetyController, SynthesisError> {
    let t_stab = env.stabilization_time();
    if horizon < t_stab {
        return Err(SynthesisError::HorizonTooShort { horizon, t_stab });
    }
    let n = ts.num_states();

    // Greatest fixed point over the stationary safe set.
    let stable_safe = env.safe_set(t_stab);
    let mut dom: Vec<bool> = (0..n).map(|s| stable_safe.contains(&StateId(s))).collect();
    loop {
        let mut changed = false;
        let snapshot = dom.clone();
        for s in (0..n).map(StateId) {
            if dom[s.0] && action_mask(ts, s, &snapshot) == 0 {
                dom[s.0] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut allowed = vec![vec![0u8; n]; t_stab + 1];
    for s in (0..n).map(StateId) {
        if dom[s.0] {
            allowed[t_stab][s.0] = action_mask(ts, s, &dom);
        }
    }

    // Backward induction below the stabilization time.
    for t in (0..t_stab).rev() {
        let next_dom: Vec<bool> = allowed[t + 1].iter().map(|&m| m != 0).collect();
        let safe_t = env.safe_set(t);
        for &s in &safe_t {
            allowed[t][s.0] = action_mask(ts, s, &next_dom);
        }
    }

    let ctrl = SafetyController {
        stabilization_time: t_stab,
        num_states: n,
        allowed,
    };
    if ctrl.domain(0).is_empty() {
        return Err(SynthesisError::EmptyInitialDomain);
    }
    Ok(ctrl)
}

/// The baseline fallback: the maximal controller restricted to `{Stop}`
/// wherever Stop is allowed. States where stopping is unsafe leave the domain,
/// which requires re-running the fixed point on the restricted action sets.
pub fn stop_fallback(
    ts: &TransitionSystem,
    env: &GridSpec,
    horizon: usize,
) -> Result<SafetyController, SynthesisError> {
    let maximal = synthesize_controller(ts, env, horizon)?;
    let t_stab = maximal.stabilization_time;
    let n = maximal.num_states;
    let stop_bit = 1u8 << Action::Stop.index();

    // Stationary slice: keep only states whose Stop successor chain stays in
    // the restricted domain.
    let mut dom: Vec<bool> = maximal.allowed[t_stab]
        .iter()
        .map(|&m| m & stop_bit != 0)
        .collect();
    loop {
        let mut changed = false;
        let snapshot = dom.clone();
        for s in (0..n).map(StateId) {
            if dom[s.0] {
                let succ = ts.successors(s, Action::Stop);
                if !succ.iter().all(|x| snapshot[x.0]) {
                    dom[s.0] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut allowed = vec![vec![0u8; n]; t_stab + 1];
    for s in 0..n {
        if dom[s] {
            allowed[t_stab][s] = stop_bit;
        }
    }
    for t in (0..t_stab).rev() {
        let next_dom: Vec<bool> = allowed[t + 1].iter().map(|&m| m != 0).collect();
        for s in (0..n).map(StateId) {
            if maximal.allowed[t][s.0] & stop_bit != 0 {
                let succ = ts.successors(s, Action::Stop);
                if succ.iter().all(|x| next_dom[x.0]) {
                    allowed[t][s.0] = stop_bit;
                }
            }
        }
    }

    let ctrl = SafetyController {
        stabilization_time: t_stab,
        num_states: n,
        allowed,
    };
    if ctrl.domain(0).is_empty() {
        return Err(SynthesisError::EmptyInitialDomain);
    }
    Ok(ctrl)
}

/// N-step policy verification: starting from `{s_t}`, propagate the policy
/// support image and fail as soon as it leaves the controller domain.
pub fn is_verified_safe<F>(
    ts: &TransitionSystem,
    c: &SafetyController,
    support: F,
    s_t: StateId,
    t: usize,
    n: usize,
) -> bool
where
    F: Fn(StateId) -> Vec<Action>,
{
    debug_assert!(c.in_domain(t, s_t));
    let mut current = BTreeSet::from([s_t]);
    for i in t..=t + n {
        let mut next = BTreeSet::new();
        for &s in &current {
            for a in support(s) {
                next.extend(ts.successors(s, a).iter().copied());
            }
        }
        if !next.iter().all(|&s| c.in_domain(i + 1, s)) {
            return false;
        }
        current = next;
    }
    true
}

/// The action-replacement shield: `a` passes through when all its successors
/// stay in tomorrow's domain; otherwise the fallback is Stop when the
/// controller allows it, else the lowest-index allowed action.
pub fn safe_action(
    ts: &TransitionSystem,
    c: &SafetyController,
    s: StateId,
    t: usize,
    a: Action,
) -> Action {
    assert!(
        c.in_domain(t, s),
        "shield invoked outside dom(C_{t}) at {s}"
    );
    let succ = ts.successors(s, a);
    if !succ.is_empty() && succ.iter().all(|&n| c.in_domain(t + 1, n)) {
        return a;
    }
    if c.permits(t, s, Action::Stop) {
        return Action::Stop;
    }
    *c.allowed(t, s)
        .first()
        .expect("non-empty allowed set inside controller domain")
}
