//! Discrete-time projected consensus algorithm with nonuniform stepsizes
//! and the gradient switching rule.
//!
//! One step, per agent, in order:
//! 1. mix `v_i = sum_j a_ij x_j` (self-weight included), advance
//!    `q_i += arctan(exp(|x_i|)) T`, evaluate `grad f_i(v_i)`;
//! 2. drop the gradient (`gr_i = 0`) when `sqrt(q_i) <= |grad f_i(v_i)|^2`
//!    using the pre-update `q_i`, else `gr_i = grad f_i(v_i) / sqrt(q_i)`;
//! 3. `w_i = v_i - gr_i T`;
//! 4. `x_i = (1 - gamma_i) w_i + gamma_i P_{H_i}(w_i)`.

use serde::{Deserialize, Serialize};

use crate::convex::{ConvexSet, MEMBERSHIP_TOL};
use crate::dynamics::{
    check_finite, check_q, stepsize_rate, AgentState, Problem, RunStats, Sample, Sampling, SimulationError,
    Trajectory,
};
use crate::error::{Assumption, Error, Result};
use crate::graph::{is_doubly_stochastic, Family, WeightedDigraph, DEFAULT_TOL};
use crate::linalg::{dot, norm};
use crate::objective::Objective;

pub const DEFAULT_MIXED_GAMMA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DtMode {
    /// Every `gamma_i` in `(0, 1)`: iterates may leave their sets.
    Mixed,
    /// Every `gamma_i == 1`: iterates stay inside their sets.
    Projected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtParams {
    pub sample_time: f64,
    pub gamma: Vec<f64>,
    pub mode: DtMode,
}

impl DtParams {
    pub fn projected(sample_time: f64, n: usize) -> Self {
        Self {
            sample_time,
            gamma: vec![1.0; n],
            mode: DtMode::Projected,
        }
    }

    pub fn mixed(sample_time: f64, n: usize) -> Self {
        Self {
            sample_time,
            gamma: vec![DEFAULT_MIXED_GAMMA; n],
            mode: DtMode::Mixed,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.sample_time > 0.0 && self.sample_time.is_finite()) {
            return Err(Error::Precondition(format!(
                "sample time must be positive, got {}",
                self.sample_time
            )));
        }
        if self.gamma.len() != n {
            return Err(Error::Precondition(format!(
                "{} blending weights for {n} agents",
                self.gamma.len()
            )));
        }
        for (i, &g) in self.gamma.iter().enumerate() {
            let ok = match self.mode {
                DtMode::Mixed => g > 0.0 && g < 1.0,
                DtMode::Projected => g == 1.0,
            };
            if !ok {
                return Err(Error::Precondition(format!(
                    "agent {i}: gamma = {g} is not allowed in {:?} mode",
                    self.mode
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    /// Agents whose gradient term was switched off this step.
    pub gr_zero: Vec<bool>,
}

struct Scratch {
    v: Vec<f64>,
    grad: Vec<f64>,
    proj: Vec<f64>,
}

/// Advances `x` (and `q`) in place; `next` receives the new positions.
#[allow(clippy::too_many_arguments)]
fn step_into(
    agents: &mut [AgentState],
    next: &mut [Vec<f64>],
    g: &WeightedDigraph,
    sets: &[ConvexSet],
    fs: &[Objective],
    params: &DtParams,
    gr_zero: &mut [bool],
    s: &mut Scratch,
) -> Result<()> {
    let t = params.sample_time;
    for i in 0..agents.len() {
        let q = agents[i].q;
        check_q(i, q)?;
        let self_w = g.weight(i, i);
        for (v, x) in s.v.iter_mut().zip(&agents[i].x) {
            *v = self_w * x;
        }
        for &(j, a) in g.neighbors(i) {
            for (v, x) in s.v.iter_mut().zip(&agents[j].x) {
                *v += a * x;
            }
        }
        fs[i].grad_into(&s.v, &mut s.grad)?;
        let sq = q.sqrt();
        let off = sq <= dot(&s.grad, &s.grad);
        gr_zero[i] = off;
        let w = &mut next[i];
        if off {
            w.copy_from_slice(&s.v);
        } else {
            for ((w, v), gr) in w.iter_mut().zip(&s.v).zip(&s.grad) {
                *w = v - gr / sq * t;
            }
        }
        let gamma = params.gamma[i];
        sets[i].project_into(w, &mut s.proj)?;
        if gamma == 1.0 {
            w.copy_from_slice(&s.proj);
        } else {
            for (w, p) in w.iter_mut().zip(&s.proj) {
                *w = *w * (1.0 - gamma) + p * gamma;
            }
        }
    }
    for (a, x) in agents.iter_mut().zip(next.iter()) {
        a.q += stepsize_rate(norm(&a.x)) * t;
        a.x.copy_from_slice(x);
    }
    Ok(())
}

fn check_mixing(g: &WeightedDigraph) -> Result<()> {
    if g.family() != Family::Dt || !is_doubly_stochastic(g, DEFAULT_TOL) {
        return Err(Error::Precondition(format!(
            "{} violated by the mixing matrix",
            Assumption::DoublyStochastic
        )));
    }
    Ok(())
}

/// One synchronous step of the algorithm under mixing matrix `g`.
pub fn dt_step(
    states: &[AgentState],
    g: &WeightedDigraph,
    sets: &[ConvexSet],
    fs: &[Objective],
    params: &DtParams,
) -> Result<(Vec<AgentState>, StepDiagnostics)> {
    check_mixing(g)?;
    let n = states.len();
    if g.n() != n || sets.len() != n || fs.len() != n {
        return Err(Error::Precondition(format!(
            "{n} agents, {}-agent graph, {} sets, {} objectives",
            g.n(),
            sets.len(),
            fs.len()
        )));
    }
    params.validate(n)?;
    let m = states.first().map_or(0, |a| a.x.len());
    let mut agents = states.to_vec();
    let mut next = vec![vec![0.0; m]; n];
    let mut gr_zero = vec![false; n];
    let mut scratch = Scratch {
        v: vec![0.0; m],
        grad: vec![0.0; m],
        proj: vec![0.0; m],
    };
    step_into(&mut agents, &mut next, g, sets, fs, params, &mut gr_zero, &mut scratch)?;
    Ok((agents, StepDiagnostics { gr_zero }))
}

/// Runs `sampling.steps` iterations. In projected mode every agent must
/// start inside its own set, and membership is re-checked after every step.
pub fn simulate_dt(
    problem: &Problem,
    initial: Vec<AgentState>,
    params: &DtParams,
    sampling: Sampling,
) -> std::result::Result<Trajectory, SimulationError> {
    simulate_dt_with(problem, initial, params, sampling, |_| Ok(()))
}

pub fn simulate_dt_with(
    problem: &Problem,
    initial: Vec<AgentState>,
    params: &DtParams,
    sampling: Sampling,
    mut on_sample: impl FnMut(&Sample) -> Result<()>,
) -> std::result::Result<Trajectory, SimulationError> {
    let projected = params.mode == DtMode::Projected;
    let mut traj = Trajectory {
        family: Family::Dt,
        step: params.sample_time,
        samples: Vec::new(),
        stats: RunStats {
            feasibility_violations: projected.then_some(0),
            ..RunStats::default()
        },
    };
    let fail = |source: Error, traj: Trajectory| SimulationError {
        source,
        partial: Box::new(traj),
    };
    let setup = (|| {
        if problem.family() != Family::Dt {
            return Err(Error::Precondition("schedule is not a discrete-time schedule".into()));
        }
        if sampling.stride == 0 {
            return Err(Error::Precondition("sampling stride must be positive".into()));
        }
        params.validate(problem.n())?;
        for e in problem.schedule.epochs() {
            check_mixing(&e.graph)?;
        }
        problem.check_states(&initial)?;
        check_finite(&initial, 0)?;
        if projected {
            for (i, (a, h)) in initial.iter().zip(&problem.sets).enumerate() {
                if !h.contains(&a.x, MEMBERSHIP_TOL) {
                    return Err(Error::Precondition(format!(
                        "projected mode requires every agent to start in its set; agent {i} does not"
                    )));
                }
            }
        }
        Ok(())
    })();
    if let Err(e) = setup {
        return Err(fail(e, traj));
    }

    let n = problem.n();
    let m = problem.dim();
    let t = params.sample_time;
    let mut agents = initial;
    let mut next = vec![vec![0.0; m]; n];
    let mut gr_zero = vec![false; n];
    let mut scratch = Scratch {
        v: vec![0.0; m],
        grad: vec![0.0; m],
        proj: vec![0.0; m],
    };
    traj.stats.observe_norms(&agents);
    traj.stats.gr_zero_per_step.reserve(sampling.steps as usize);

    let first = Sample {
        step: 0,
        t: 0.0,
        agents: agents.clone(),
        gr_zero: Some(vec![false; n]),
    };
    if let Err(e) = on_sample(&first) {
        return Err(fail(e, traj));
    }
    traj.samples.push(first);

    for k in 0..sampling.steps {
        let g = problem.schedule.graph_at(k as f64);
        let advanced = step_into(
            &mut agents,
            &mut next,
            g,
            &problem.sets,
            &problem.objectives,
            params,
            &mut gr_zero,
            &mut scratch,
        )
        .and_then(|()| check_finite(&agents, k + 1));
        if let Err(e) = advanced {
            return Err(fail(e, traj));
        }
        traj.stats.steps_taken = k + 1;
        traj.stats.observe_norms(&agents);
        traj.stats
            .gr_zero_per_step
            .push(gr_zero.iter().filter(|&&b| b).count() as u32);
        if let Some(v) = traj.stats.feasibility_violations.as_mut() {
            *v += agents
                .iter()
                .zip(&problem.sets)
                .filter(|(a, h)| !h.contains(&a.x, MEMBERSHIP_TOL))
                .count() as u64;
        }
        if (k + 1) % sampling.stride == 0 || k + 1 == sampling.steps {
            let sample = Sample {
                step: k + 1,
                t: (k + 1) as f64 * t,
                agents: agents.clone(),
                gr_zero: Some(gr_zero.clone()),
            };
            if let Err(e) = on_sample(&sample) {
                return Err(fail(e, traj));
            }
            traj.samples.push(sample);
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{metropolis_weights, GraphSchedule};

    fn whole(m: usize) -> ConvexSet {
        ConvexSet::whole_space(m)
    }

    fn solo() -> WeightedDigraph {
        WeightedDigraph::edgeless(Family::Dt, 1)
    }

    #[test]
    fn switching_rule_drops_large_gradients() {
        // grad at v = (1 + 0, 1 + 0) -> |grad|^2 = 2 >= sqrt(1)
        let f = Objective::shifted_power(vec![1.0, 1.0], 2).unwrap();
        let states = [AgentState::new(vec![0.0, 0.0], 1.0)];
        let params = DtParams {
            sample_time: 0.1,
            gamma: vec![0.5],
            mode: DtMode::Mixed,
        };
        let (next, diag) = dt_step(&states, &solo(), &[whole(2)], &[f], &params).unwrap();
        assert_eq!(diag.gr_zero, vec![true]);
        // w = v, and v is already in the whole space
        assert_eq!(next[0].x, vec![0.0, 0.0]);
    }

    #[test]
    fn switching_rule_keeps_small_gradients() {
        let f = Objective::shifted_power(vec![1.0, 0.0], 2).unwrap();
        let states = [AgentState::new(vec![0.0, 0.0], 100.0)];
        let params = DtParams {
            sample_time: 1.0,
            gamma: vec![0.5],
            mode: DtMode::Mixed,
        };
        let (next, diag) = dt_step(&states, &solo(), &[whole(2)], &[f], &params).unwrap();
        assert_eq!(diag.gr_zero, vec![false]);
        // gr = (1, 0) / 10, w = v - gr T
        assert!((next[0].x[0] + 0.1).abs() < 1e-15);
        assert_eq!(next[0].x[1], 0.0);
        // q advanced with the pre-step position
        assert!((next[0].q - (100.0 + std::f64::consts::FRAC_PI_4)).abs() < 1e-12);
    }

    #[test]
    fn projected_step_lands_in_sets() {
        let g = metropolis_weights(3, &[(0, 1), (1, 2)]).unwrap();
        let sets = [
            ConvexSet::ball(vec![0.0, 0.0], 1.0).unwrap(),
            ConvexSet::boxed(vec![2.0, 2.0], vec![3.0, 3.0]).unwrap(),
            ConvexSet::halfspace(vec![1.0, 1.0], -1.0).unwrap(),
        ];
        let fs: Vec<_> = (0..3)
            .map(|i| Objective::shifted_power(vec![i as f64, -1.0], 4).unwrap())
            .collect();
        let states = vec![
            AgentState::new(vec![0.5, 0.5], 1.0),
            AgentState::new(vec![2.5, 2.0], 1.0),
            AgentState::new(vec![-3.0, 1.0], 1.0),
        ];
        let params = DtParams::projected(0.1, 3);
        let (next, _) = dt_step(&states, &g, &sets, &fs, &params).unwrap();
        for (a, h) in next.iter().zip(&sets) {
            assert!(h.contains(&a.x, MEMBERSHIP_TOL));
        }
    }

    #[test]
    fn rejects_non_stochastic_mixing() {
        let g = WeightedDigraph::new(Family::Dt, vec![vec![0.5, 0.5], vec![0.4, 0.5]], 0.4).unwrap();
        let f = Objective::shifted_power(vec![0.0], 2).unwrap();
        let states = [AgentState::new(vec![0.0], 1.0), AgentState::new(vec![1.0], 1.0)];
        let params = DtParams::mixed(0.1, 2);
        assert!(matches!(
            dt_step(&states, &g, &[whole(1), whole(1)], &[f.clone(), f], &params),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn params_validation() {
        let mut p = DtParams::mixed(0.1, 2);
        assert!(p.validate(2).is_ok());
        p.gamma[1] = 1.0;
        assert!(p.validate(2).is_err());
        let mut p = DtParams::projected(0.1, 2);
        p.gamma[0] = 0.5;
        assert!(p.validate(2).is_err());
        assert!(DtParams::projected(0.0, 2).validate(2).is_err());
        assert!(DtParams::projected(0.1, 2).validate(3).is_err());
    }

    #[test]
    fn projected_mode_rejects_infeasible_start() {
        let g = metropolis_weights(2, &[(0, 1)]).unwrap();
        let sched = GraphSchedule::fixed(g, 1.0).unwrap();
        let f = Objective::shifted_power(vec![0.0], 2).unwrap();
        let ball = ConvexSet::ball(vec![0.0], 1.0).unwrap();
        let p = Problem::new(vec![f.clone(), f], vec![ball.clone(), ball], sched).unwrap();
        let init = vec![AgentState::new(vec![0.0], 1.0), AgentState::new(vec![5.0], 1.0)];
        let err = simulate_dt(&p, init, &DtParams::projected(0.1, 2), Sampling { steps: 5, stride: 1 })
            .unwrap_err();
        assert!(matches!(err.source, Error::Precondition(_)));
    }

    #[test]
    fn pure_mixing_preserves_mean() {
        // gamma -> 0 is not allowed, so use whole-space sets (projection is the
        // identity) and a huge q so the gradient never moves the iterate
        let n = 5;
        let g = metropolis_weights(n, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)]).unwrap();
        let f = Objective::shifted_power(vec![0.0], 2).unwrap();
        let mut states: Vec<_> = (0..n).map(|i| AgentState::new(vec![i as f64 * 1.7 - 3.0], 1e300)).collect();
        let sets = vec![whole(1); n];
        let fs = vec![f; n];
        let params = DtParams::mixed(0.1, n);
        let mean0: f64 = states.iter().map(|a| a.x[0]).sum::<f64>() / n as f64;
        for _ in 0..200 {
            states = dt_step(&states, &g, &sets, &fs, &params).unwrap().0;
        }
        let mean: f64 = states.iter().map(|a| a.x[0]).sum::<f64>() / n as f64;
        assert!((mean - mean0).abs() < 1e-12);
        assert!(states.iter().all(|a| (a.x[0] - mean0).abs() < 1e-9));
    }
}
