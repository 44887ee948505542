//! Continuous-time projected consensus dynamics with nonuniform stepsizes,
//! integrated by fixed-step forward Euler.
//!
//! Each agent follows
//!
//! ```text
//! dx_i/dt = sum_j a_ij (x_j - x_i) - (x_i - P_{H_i}(x_i)) - grad f_i(x_i) / sqrt(q_i)
//! dq_i/dt = arctan(exp(|x_i|))
//! ```

use crate::convex::ConvexSet;
use crate::dynamics::{
    check_finite, check_q, stepsize_rate, AgentState, Problem, RunStats, Sample, Sampling, SimulationError,
    Trajectory,
};
use crate::error::{Error, Result};
use crate::graph::{Family, GraphSchedule, WeightedDigraph};
use crate::linalg::norm;
use crate::objective::Objective;

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub t: f64,
    pub agents: Vec<AgentState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Derivative {
    pub dx: Vec<f64>,
    pub dq: f64,
}

struct Scratch {
    proj: Vec<f64>,
    grad: Vec<f64>,
}

impl Scratch {
    fn new(m: usize) -> Self {
        Self {
            proj: vec![0.0; m],
            grad: vec![0.0; m],
        }
    }
}

fn rhs_into(
    agents: &[AgentState],
    g: &WeightedDigraph,
    sets: &[ConvexSet],
    fs: &[Objective],
    dx: &mut [Vec<f64>],
    dq: &mut [f64],
    scratch: &mut Scratch,
) -> Result<()> {
    for (i, agent) in agents.iter().enumerate() {
        check_q(i, agent.q)?;
        let xi = &agent.x;
        let out = &mut dx[i];
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(j, a) in g.neighbors(i) {
            for ((o, xj), xi) in out.iter_mut().zip(&agents[j].x).zip(xi) {
                *o += a * (xj - xi);
            }
        }
        sets[i].project_into(xi, &mut scratch.proj)?;
        fs[i].grad_into(xi, &mut scratch.grad)?;
        let gain = 1.0 / agent.q.sqrt();
        for (((o, x), p), gr) in out.iter_mut().zip(xi).zip(&scratch.proj).zip(&scratch.grad) {
            *o -= (x - p) + gain * gr;
        }
        dq[i] = stepsize_rate(norm(xi));
    }
    Ok(())
}

fn check_inputs(agents: &[AgentState], g: &WeightedDigraph, sets: &[ConvexSet], fs: &[Objective]) -> Result<()> {
    if g.family() != Family::Ct {
        return Err(Error::Precondition(
            "continuous-time dynamics need a graph without self-loops".into(),
        ));
    }
    let n = agents.len();
    if g.n() != n || sets.len() != n || fs.len() != n {
        return Err(Error::Precondition(format!(
            "{n} agents, {}-agent graph, {} sets, {} objectives",
            g.n(),
            sets.len(),
            fs.len()
        )));
    }
    Ok(())
}

/// Right-hand side of the dynamics for every agent under the fixed graph `g`.
pub fn ct_rhs(
    state: &SwarmState,
    g: &WeightedDigraph,
    sets: &[ConvexSet],
    fs: &[Objective],
) -> Result<Vec<Derivative>> {
    check_inputs(&state.agents, g, sets, fs)?;
    let m = state.agents.first().map_or(0, |a| a.x.len());
    let mut dx = vec![vec![0.0; m]; state.agents.len()];
    let mut dq = vec![0.0; state.agents.len()];
    rhs_into(&state.agents, g, sets, fs, &mut dx, &mut dq, &mut Scratch::new(m))?;
    Ok(dx
        .into_iter()
        .zip(dq)
        .map(|(dx, dq)| Derivative { dx, dq })
        .collect())
}

/// One forward-Euler step of length `h` using the graph active at `state.t`.
pub fn euler_step(
    state: &SwarmState,
    schedule: &GraphSchedule,
    sets: &[ConvexSet],
    fs: &[Objective],
    h: f64,
) -> Result<SwarmState> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Precondition(format!("step must be positive, got {h}")));
    }
    schedule.check_step_alignment(state.t, h)?;
    let derivs = ct_rhs(state, schedule.graph_at(state.t), sets, fs)?;
    let agents = state
        .agents
        .iter()
        .zip(derivs)
        .map(|(a, d)| AgentState {
            x: a.x.iter().zip(&d.dx).map(|(x, v)| x + h * v).collect(),
            q: a.q + h * d.dq,
        })
        .collect();
    Ok(SwarmState { t: state.t + h, agents })
}

/// Integrates the dynamics for `sampling.steps` steps of length `h`.
pub fn simulate_ct(
    problem: &Problem,
    initial: Vec<AgentState>,
    h: f64,
    sampling: Sampling,
) -> std::result::Result<Trajectory, SimulationError> {
    simulate_ct_with(problem, initial, h, sampling, |_| Ok(()))
}

/// As [`simulate_ct`], calling `on_sample` for each recorded state in order.
pub fn simulate_ct_with(
    problem: &Problem,
    initial: Vec<AgentState>,
    h: f64,
    sampling: Sampling,
    mut on_sample: impl FnMut(&Sample) -> Result<()>,
) -> std::result::Result<Trajectory, SimulationError> {
    let mut traj = Trajectory {
        family: Family::Ct,
        step: h,
        samples: Vec::new(),
        stats: RunStats::default(),
    };
    let fail = |source: Error, traj: Trajectory| SimulationError {
        source,
        partial: Box::new(traj),
    };
    let setup = (|| {
        if problem.family() != Family::Ct {
            return Err(Error::Precondition("schedule is not a continuous-time schedule".into()));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Precondition(format!("step must be positive, got {h}")));
        }
        if sampling.stride == 0 {
            return Err(Error::Precondition("sampling stride must be positive".into()));
        }
        problem.check_states(&initial)?;
        check_finite(&initial, 0)
    })();
    if let Err(e) = setup {
        return Err(fail(e, traj));
    }

    let n = problem.n();
    let m = problem.dim();
    let mut agents = initial;
    let mut dx = vec![vec![0.0; m]; n];
    let mut dq = vec![0.0; n];
    let mut scratch = Scratch::new(m);
    traj.stats.observe_norms(&agents);

    let record = |traj: &mut Trajectory, k: u64, agents: &[AgentState], on_sample: &mut dyn FnMut(&Sample) -> Result<()>| {
        let sample = Sample {
            step: k,
            t: k as f64 * h,
            agents: agents.to_vec(),
            gr_zero: None,
        };
        on_sample(&sample)?;
        traj.samples.push(sample);
        Ok(())
    };
    if let Err(e) = record(&mut traj, 0, &agents, &mut on_sample) {
        return Err(fail(e, traj));
    }

    for k in 0..sampling.steps {
        // times are recomputed from the step count to avoid drift
        let t = k as f64 * h;
        let advanced = (|| {
            problem.schedule.check_step_alignment(t, h)?;
            let g = problem.schedule.graph_at(t);
            rhs_into(&agents, g, &problem.sets, &problem.objectives, &mut dx, &mut dq, &mut scratch)?;
            for ((a, d), q) in agents.iter_mut().zip(&dx).zip(&dq) {
                for (x, v) in a.x.iter_mut().zip(d) {
                    *x += h * v;
                }
                a.q += h * q;
            }
            check_finite(&agents, k + 1)
        })();
        if let Err(e) = advanced {
            return Err(fail(e, traj));
        }
        traj.stats.steps_taken = k + 1;
        traj.stats.observe_norms(&agents);
        if (k + 1) % sampling.stride == 0 || k + 1 == sampling.steps {
            if let Err(e) = record(&mut traj, k + 1, &agents, &mut on_sample) {
                return Err(fail(e, traj));
            }
        }
    }
    Ok(traj)
}
