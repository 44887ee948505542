//! Run orchestration: simulate a scenario and write its outputs.
//!
//! Outputs in the target directory:
//! - `trajectory.csv`: one row per (sample, agent);
//! - `metrics.csv`: one row per sample with swarm-level measures;
//! - `report.txt`: terminal errors, branch statistics, validation summary.
//!
//! Floats are written with 17 significant digits in scientific notation.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use log::{info, warn};

use crate::ct::simulate_ct;
use crate::dt::simulate_dt;
use crate::dynamics::{Sampling, SimulationError, Trajectory};
use crate::error::{Error, Result};
use crate::graph::Family;
use crate::linalg::dist;
use crate::metrics::{centralized_oracle, measure, IntersectionProjector, MetricSample, StepRule};
use crate::scenario::Scenario;

/// Iterations of the centralized oracle when no reference optimum is given.
pub const ORACLE_ITERS: usize = 20_000;

pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Runs the solver matching the scenario's family.
pub fn simulate(scenario: &Scenario) -> std::result::Result<Trajectory, SimulationError> {
    let initial = scenario.initial_states().map_err(|source| SimulationError {
        source,
        partial: Box::new(Trajectory {
            family: scenario.family(),
            step: scenario.step,
            samples: Vec::new(),
            stats: Default::default(),
        }),
    })?;
    let sampling = Sampling {
        steps: scenario.steps,
        stride: scenario.stride,
    };
    match (&scenario.dt, scenario.family()) {
        (Some(params), Family::Dt) => simulate_dt(&scenario.problem, initial, params, sampling),
        _ => simulate_ct(&scenario.problem, initial, scenario.step, sampling),
    }
}

/// Reference optimum: the scenario's own, else the centralized oracle's.
pub fn reference_optimum(scenario: &Scenario) -> Result<Vec<f64>> {
    match &scenario.reference {
        Some(r) => Ok(r.clone()),
        None => centralized_oracle(
            &scenario.problem.objectives,
            &scenario.problem.sets,
            &scenario.feasible_point,
            StepRule::default(),
            ORACLE_ITERS,
        ),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub family: Family,
    pub steps_taken: u64,
    pub terminal: MetricSample,
    pub reference: Option<Vec<f64>>,
    /// `max_i |x_i - reference|` at the final state.
    pub max_agent_opt_dist: Option<f64>,
    pub max_norm: f64,
    pub state_bound: f64,
    pub gr_zero_total: u64,
    pub last_gr_zero_step: Option<u64>,
    pub feasibility_violations: Option<u64>,
    pub validation: Vec<String>,
    pub aborted: Option<String>,
}

/// Swarm metrics for every recorded sample.
pub fn trajectory_metrics(
    scenario: &Scenario,
    traj: &Trajectory,
    reference: Option<&[f64]>,
) -> Result<Vec<MetricSample>> {
    let projector = IntersectionProjector::new(&scenario.problem.sets);
    traj.samples
        .iter()
        .map(|s| {
            measure(
                s.t,
                &s.agents,
                &scenario.problem.sets,
                &scenario.problem.objectives,
                &projector,
                reference,
            )
        })
        .collect()
}

fn write_trajectory(path: &Path, scenario: &Scenario, traj: &Trajectory, metrics: &[MetricSample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let m = scenario.dim();
    let dt = scenario.dt.as_ref();
    let mut header = vec!["t".to_string(), "agent".to_string()];
    header.extend((1..=m).map(|l| format!("x_{l}")));
    header.extend(["q", "dist_Hi", "consensus_err", "V1"].map(String::from));
    if dt.is_some() {
        header.extend(["gr_zero_branch", "gamma"].map(String::from));
    }
    writeln!(w, "{}", header.join(","))?;
    for (sample, metric) in traj.samples.iter().zip(metrics) {
        for (i, a) in sample.agents.iter().enumerate() {
            let mut row = vec![fmt_float(sample.t), i.to_string()];
            row.extend(a.x.iter().map(|&v| fmt_float(v)));
            row.push(fmt_float(a.q));
            row.push(fmt_float(scenario.problem.sets[i].distance(&a.x)?));
            row.push(fmt_float(metric.consensus_err));
            row.push(fmt_float(metric.v1));
            if let Some(p) = dt {
                let fired = sample.gr_zero.as_ref().is_some_and(|g| g[i]);
                row.push(u8::from(fired).to_string());
                row.push(fmt_float(p.gamma[i]));
            }
            writeln!(w, "{}", row.join(","))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_metrics(path: &Path, metrics: &[MetricSample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,consensus_err,feas_err,team_value,V1,opt_dist")?;
    for s in metrics {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt_float(s.t),
            fmt_float(s.consensus_err),
            fmt_float(s.feas_err),
            fmt_float(s.team_value),
            fmt_float(s.v1),
            s.opt_dist.map(fmt_float).unwrap_or_default()
        )?;
    }
    w.flush()?;
    Ok(())
}

impl RunReport {
    pub fn render(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), fmt_float);
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(": ");
            out.push_str(&v);
            out.push('\n');
        };
        line("family", format!("{:?}", self.family).to_lowercase());
        line("status", self.aborted.clone().map_or("completed".into(), |e| format!("aborted: {e}")));
        line("steps", self.steps_taken.to_string());
        line("terminal_time", fmt_float(self.terminal.t));
        line("consensus_err", fmt_float(self.terminal.consensus_err));
        line("feas_err", fmt_float(self.terminal.feas_err));
        line("team_value", fmt_float(self.terminal.team_value));
        line("V1", fmt_float(self.terminal.v1));
        line(
            "reference",
            self.reference.as_ref().map_or("n/a".into(), |r| {
                r.iter().map(|&v| fmt_float(v)).collect::<Vec<_>>().join(" ")
            }),
        );
        line("opt_dist", opt(self.terminal.opt_dist));
        line("max_agent_opt_dist", opt(self.max_agent_opt_dist));
        line("max_state_norm", fmt_float(self.max_norm));
        line("state_bound", fmt_float(self.state_bound));
        if self.family == Family::Dt {
            line("gr_zero_firings", self.gr_zero_total.to_string());
            line(
                "last_gr_zero_step",
                self.last_gr_zero_step.map_or("none".into(), |k| k.to_string()),
            );
        }
        if let Some(v) = self.feasibility_violations {
            line("feasibility_violations", v.to_string());
        }
        if self.validation.is_empty() {
            line("validation", "all assumptions hold".into());
        } else {
            for v in &self.validation {
                line("validation", v.clone());
            }
        }
        out
    }
}

/// Validates, simulates and writes all outputs into `out_dir`. On a solver
/// failure the partial trajectory is still written before the error is
/// returned.
pub fn run(scenario: &Scenario, out_dir: &Path) -> Result<RunReport> {
    scenario.validate()?;
    fs::create_dir_all(out_dir)?;
    let reference = match reference_optimum(scenario) {
        Ok(r) => Some(r),
        Err(e) => {
            warn!("no reference optimum: {e}");
            None
        }
    };
    let initial = scenario.initial_states()?;
    let state_bound = scenario.state_bound(&initial)?;
    info!(
        "running {} agents for {} steps ({:?})",
        scenario.n(),
        scenario.steps,
        scenario.family()
    );
    let (traj, aborted) = match simulate(scenario) {
        Ok(t) => (t, None),
        Err(e) => (*e.partial, Some(e.source)),
    };
    let metrics = trajectory_metrics(scenario, &traj, reference.as_deref())?;
    write_trajectory(&out_dir.join("trajectory.csv"), scenario, &traj, &metrics)?;
    write_metrics(&out_dir.join("metrics.csv"), &metrics)?;

    let terminal = match metrics.last() {
        Some(m) => m.clone(),
        None => {
            return Err(aborted.unwrap_or_else(|| Error::Precondition("no samples recorded".into())));
        }
    };
    let max_agent_opt_dist = reference.as_ref().and_then(|r| {
        traj.last()
            .map(|s| s.agents.iter().map(|a| dist(&a.x, r)).fold(0.0, f64::max))
    });
    let report = RunReport {
        family: scenario.family(),
        steps_taken: traj.stats.steps_taken,
        terminal,
        reference,
        max_agent_opt_dist,
        max_norm: traj.stats.max_norm,
        state_bound,
        gr_zero_total: traj.stats.total_gr_zero(),
        last_gr_zero_step: traj.stats.last_gr_zero_step(),
        feasibility_violations: traj.stats.feasibility_violations,
        validation: scenario.violations().iter().map(ToString::to_string).collect(),
        aborted: aborted.as_ref().map(ToString::to_string),
    };
    fs::write(out_dir.join("report.txt"), report.render())?;
    match aborted {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
