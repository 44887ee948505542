//! Convergence measures, Lyapunov diagnostics and a centralized
//! projected-gradient oracle used as independent ground truth.

use crate::convex::{dykstra, ConvexSet, DEFAULT_DYKSTRA_MAX_ITER, DEFAULT_DYKSTRA_TOL};
use crate::dynamics::AgentState;
use crate::error::{Error, Result};
use crate::linalg::{dist, mean};
use crate::objective::Objective;

/// Step used by the projected-gradient fixed-point optimality test.
pub const KKT_STEP: f64 = 1e-2;

/// Projection onto the intersection of all agents' constraint sets.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionProjector {
    leaves: Vec<ConvexSet>,
    pub tol: f64,
    pub max_iter: usize,
}

impl IntersectionProjector {
    pub fn new(sets: &[ConvexSet]) -> Self {
        // identical members (several agents sharing a set) add nothing
        let mut leaves: Vec<ConvexSet> = Vec::new();
        for leaf in sets.iter().flat_map(ConvexSet::leaves) {
            if !leaves.contains(leaf) {
                leaves.push(leaf.clone());
            }
        }
        Self {
            leaves,
            tol: DEFAULT_DYKSTRA_TOL,
            max_iter: DEFAULT_DYKSTRA_MAX_ITER,
        }
    }

    pub fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        dykstra(&self.leaves, y, self.tol, self.max_iter)
    }

    pub fn distance(&self, y: &[f64]) -> Result<f64> {
        Ok(dist(y, &self.project(y)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSample {
    pub t: f64,
    /// `max_i |x_i - x*|` with `x*` the agents' mean.
    pub consensus_err: f64,
    /// `|x* - P_H(x*)|`.
    pub feas_err: f64,
    /// `|x* - P_{H_i}(x*)|` for each agent.
    pub per_set_dists: Vec<f64>,
    /// Team objective at the mean.
    pub team_value: f64,
    pub v1: f64,
    /// `|x* - reference|` when a reference optimum is known.
    pub opt_dist: Option<f64>,
    /// `V1` with the optimum in place of `P_H(x*)`; needs a reference.
    pub v2: Option<f64>,
}

pub fn measure(
    t: f64,
    agents: &[AgentState],
    sets: &[ConvexSet],
    fs: &[Objective],
    projector: &IntersectionProjector,
    reference: Option<&[f64]>,
) -> Result<MetricSample> {
    let n = agents.len();
    if n == 0 || sets.len() != n || fs.len() != n {
        return Err(Error::Precondition(format!(
            "{n} agents, {} sets, {} objectives",
            sets.len(),
            fs.len()
        )));
    }
    let m = agents[0].x.len();
    let center = mean(agents.iter().map(|a| a.x.as_slice()), m);
    let spread: Vec<f64> = agents.iter().map(|a| dist(&a.x, &center)).collect();
    let consensus_err = spread.iter().copied().fold(0.0, f64::max);
    let spread_sq: f64 = spread.iter().map(|d| d * d).sum();
    let feas_err = projector.distance(&center)?;
    let per_set_dists = sets.iter().map(|h| h.distance(&center)).collect::<Result<Vec<_>>>()?;
    let team_value = fs.iter().map(|f| f.eval(&center)).sum::<Result<f64>>()?;
    let opt_dist = reference.map(|r| dist(&center, r));
    Ok(MetricSample {
        t,
        consensus_err,
        feas_err,
        per_set_dists,
        team_value,
        v1: spread_sq + n as f64 * feas_err * feas_err,
        opt_dist,
        v2: opt_dist.map(|d| spread_sq + n as f64 * d * d),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Constant(f64),
    /// `initial / (k + 1)^exponent`.
    Diminishing { initial: f64, exponent: f64 },
}

impl StepRule {
    fn at(self, k: usize) -> f64 {
        match self {
            StepRule::Constant(a) => a,
            StepRule::Diminishing { initial, exponent } => initial / ((k + 1) as f64).powf(exponent),
        }
    }
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Diminishing {
            initial: 1e-2,
            exponent: 0.5,
        }
    }
}

fn team_grad(fs: &[Objective], x: &[f64], buf: &mut [f64]) -> Result<Vec<f64>> {
    let mut total = vec![0.0; x.len()];
    for f in fs {
        f.grad_into(x, buf)?;
        total.iter_mut().zip(buf.iter()).for_each(|(t, g)| *t += g);
    }
    Ok(total)
}

fn team_value(fs: &[Objective], x: &[f64]) -> Result<f64> {
    fs.iter().map(|f| f.eval(x)).sum()
}

/// Centralized projected gradient descent on `sum_i f_i` over `H`.
///
/// Fails when the team objective grows across three consecutive windows
/// of iterations or becomes non-finite.
pub fn centralized_oracle(
    fs: &[Objective],
    sets: &[ConvexSet],
    x0: &[f64],
    rule: StepRule,
    iters: usize,
) -> Result<Vec<f64>> {
    const WINDOW: usize = 100;
    if fs.is_empty() {
        return Err(Error::Precondition("oracle needs at least one objective".into()));
    }
    let projector = IntersectionProjector::new(sets);
    let mut x = projector.project(x0)?;
    let mut buf = vec![0.0; x.len()];
    let mut window_start = team_value(fs, &x)?;
    let mut rising = 0;
    for k in 0..iters {
        let g = team_grad(fs, &x, &mut buf)?;
        let a = rule.at(k);
        let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - a * gi).collect();
        x = projector.project(&trial)?;
        if (k + 1) % WINDOW == 0 {
            let v = team_value(fs, &x)?;
            if !v.is_finite() || x.iter().any(|c| !c.is_finite()) {
                return Err(Error::OracleFailure(format!("non-finite iterate at iteration {k}")));
            }
            if v > window_start + 1e-12 * window_start.abs().max(1.0) {
                rising += 1;
                if rising >= 3 {
                    return Err(Error::OracleFailure(format!(
                        "team objective increased over three windows ending at iteration {k}"
                    )));
                }
            } else {
                rising = 0;
            }
            window_start = v;
        }
    }
    Ok(x)
}

/// Fixed-point optimality test `|s - P_H(s - a sum_i grad f_i(s))| <= tol`
/// with `a = KKT_STEP`; points outside `H` fail.
pub fn verify_kkt(fs: &[Objective], sets: &[ConvexSet], s: &[f64], tol: f64) -> Result<bool> {
    let projector = IntersectionProjector::new(sets);
    if projector.distance(s)? > tol {
        return Ok(false);
    }
    let mut buf = vec![0.0; s.len()];
    let g = team_grad(fs, s, &mut buf)?;
    let trial: Vec<f64> = s.iter().zip(&g).map(|(si, gi)| si - KKT_STEP * gi).collect();
    Ok(dist(s, &projector.project(&trial)?) <= tol)
}
