//! Scenario files, assumption validation and the built-in 24-agent experiment.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! family = "ct"            # or "dt"
//! dimension = 2
//! step = 0.1               # Euler step (ct) or sample time (dt)
//! steps = 1000
//! stride = 10
//! seed = 7
//! q0 = 1.0
//! feasible_point = [-0.5, 1.0]   # witness that the sets intersect
//! reference = [-0.5, 1.0]        # optional known optimum
//!
//! [dt]                     # dt only
//! mode = "projected"       # or "mixed"
//! gamma = 1.0              # optional: one value or one per agent
//!
//! [initial]
//! kind = "random_box"      # or kind = "explicit" with states = [[..], ..]
//! lo = [-2.0, -2.0]
//! hi = [2.0, 2.0]
//! project = false          # project each start into its own set
//!
//! [schedule]
//! period = 2.0             # epochs repeat with this period
//! dwell = 1.0              # ct only
//! window = 2.0             # joint-connectivity bound M
//!
//! [[schedule.epochs]]
//! start = 0.0              # seconds (ct) or step index (dt)
//! arcs = [[0, 1, 0.5], [1, 0, 0.5]]   # (i, j, a_ij): agent i hears agent j
//!
//! [[agents]]
//! objective = { kind = "shifted_power", shift = [0.0, 0.0], exponent = 2 }
//! set = { kind = "ball", center = [0.0, 0.0], radius = 3.0 }
//! ```
//!
//! Agents are indexed from zero. Objective kinds: `shifted_power{shift,
//! exponent}`, `quadratic{Q, q, r}`, `sum{terms}`. Set kinds: `ball{center,
//! radius}`, `box{lo, hi}` (`inf`/`-inf` allowed), `halfspace{normal, offset}`,
//! `intersection{members}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::convex::ConvexSet;
use crate::dt::{DtMode, DtParams, DEFAULT_MIXED_GAMMA};
use crate::dynamics::{AgentState, Problem};
use crate::error::{Assumption, Error, Result, Violation};
use crate::graph::{
    metropolis_weights, ring_edges, validate_schedule, Epoch, Family, GraphSchedule, ScheduleReport,
    WeightedDigraph,
};
use crate::linalg::norm;
use crate::objective::{experiment_objective, Objective};

/// Tolerance on the feasibility witness.
pub const WITNESS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialStates {
    Explicit {
        states: Vec<Vec<f64>>,
        #[serde(default)]
        project: bool,
    },
    /// Independent uniform draws per coordinate from the scenario seed.
    RandomBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
        #[serde(default)]
        project: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: Option<String>,
    pub problem: Problem,
    pub step: f64,
    pub steps: u64,
    pub stride: u64,
    pub seed: u64,
    pub q0: f64,
    pub initial: InitialStates,
    pub dt: Option<DtParams>,
    pub feasible_point: Vec<f64>,
    pub reference: Option<Vec<f64>>,
}

impl Scenario {
    pub fn family(&self) -> Family {
        self.problem.family()
    }

    pub fn n(&self) -> usize {
        self.problem.n()
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    /// Initial agent states for the scenario's seed.
    pub fn initial_states(&self) -> Result<Vec<AgentState>> {
        let n = self.n();
        let m = self.dim();
        let (mut xs, project) = match &self.initial {
            InitialStates::Explicit { states, project } => (states.clone(), *project),
            InitialStates::RandomBox { lo, hi, project } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let xs = (0..n)
                    .map(|_| {
                        lo.iter()
                            .zip(hi)
                            .map(|(&l, &h)| if l < h { rng.random_range(l..h) } else { l })
                            .collect()
                    })
                    .collect();
                (xs, *project)
            }
        };
        if xs.len() != n {
            return Err(Error::Precondition(format!("{} initial states for {n} agents", xs.len())));
        }
        if project {
            for (x, h) in xs.iter_mut().zip(&self.problem.sets) {
                *x = h.project(x)?;
            }
        }
        xs.into_iter()
            .map(|x| {
                if x.len() != m {
                    Err(Error::DimensionMismatch { expected: m, got: x.len() })
                } else {
                    Ok(AgentState::new(x, self.q0))
                }
            })
            .collect()
    }

    pub fn schedule_report(&self) -> ScheduleReport {
        validate_schedule(&self.problem.schedule, self.family())
    }

    /// Every violated hypothesis; empty when the scenario may be run.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (i, f) in self.problem.objectives.iter().enumerate() {
            if !f.has_bounded_minimizers() {
                out.push(Violation::new(
                    Assumption::BoundedMinimizers,
                    format!("agent {i}: objective has no bounded minimizer set"),
                ));
            }
        }
        for (i, h) in self.problem.sets.iter().enumerate() {
            match h.distance(&self.feasible_point) {
                Ok(d) if d <= WITNESS_TOL => {}
                Ok(d) => out.push(Violation::new(
                    Assumption::NonemptyIntersection,
                    format!("feasible point lies {d:e} outside the set of agent {i}"),
                )),
                Err(e) => out.push(Violation::new(
                    Assumption::NonemptyIntersection,
                    format!("agent {i}: {e}"),
                )),
            }
        }
        out.extend(self.schedule_report().violations());
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    /// A-priori radius no state may exceed: ten times the sum of the
    /// initial radius and the largest minimizer radius.
    pub fn state_bound(&self, initial: &[AgentState]) -> Result<f64> {
        let r0 = initial.iter().map(|a| norm(&a.x)).fold(0.0, f64::max);
        let mut rmin = norm(&self.feasible_point);
        for f in &self.problem.objectives {
            rmin = rmin.max(minimizer_radius(f)?);
        }
        Ok(10.0 * (r0 + rmin))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&ScenarioFile::from(self)).expect("scenario is always representable as TOML")
    }
}

/// Largest `|x|` over a ball containing the minimizer set. Sums without a
/// closed-form minimizer fall back to an envelope: the largest term radius
/// times the number of terms.
fn minimizer_radius(f: &Objective) -> Result<f64> {
    match f.minimizer_set_bound() {
        Ok(b) => Ok(norm(&b.center) + b.radius),
        Err(Error::Unsupported(_)) => match f {
            Objective::Sum { terms } => {
                let mut r = 0.0f64;
                for t in terms {
                    r = r.max(minimizer_radius(t)?);
                }
                Ok(r * terms.len() as f64)
            }
            _ => unreachable!("only sums lack a closed-form minimizer bound"),
        },
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum GammaSpec {
    Uniform(f64),
    PerAgent(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DtSection {
    mode: DtMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<GammaSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpochSection {
    start: f64,
    arcs: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleSection {
    period: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dwell: Option<f64>,
    window: f64,
    /// Lower bound on nonzero weights; defaults to the smallest nonzero weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    epochs: Vec<EpochSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentSection {
    objective: Objective,
    set: ConvexSet,
}

fn default_stride() -> u64 {
    1
}

fn default_q0() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    family: Family,
    dimension: usize,
    step: f64,
    steps: u64,
    #[serde(default = "default_stride")]
    stride: u64,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_q0")]
    q0: f64,
    feasible_point: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dt: Option<DtSection>,
    initial: InitialStates,
    schedule: ScheduleSection,
    agents: Vec<AgentSection>,
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        let sched = &s.problem.schedule;
        ScenarioFile {
            name: s.name.clone(),
            family: s.family(),
            dimension: s.dim(),
            step: s.step,
            steps: s.steps,
            stride: s.stride,
            seed: s.seed,
            q0: s.q0,
            feasible_point: s.feasible_point.clone(),
            reference: s.reference.clone(),
            dt: s.dt.as_ref().map(|p| DtSection {
                mode: p.mode,
                gamma: Some(GammaSpec::PerAgent(p.gamma.clone())),
            }),
            initial: s.initial.clone(),
            schedule: ScheduleSection {
                period: sched.period(),
                dwell: sched.dwell(),
                window: sched.window(),
                eta: sched
                    .epochs()
                    .iter()
                    .all(|e| e.graph.eta() == sched.epochs()[0].graph.eta())
                    .then(|| sched.epochs()[0].graph.eta()),
                epochs: sched
                    .epochs()
                    .iter()
                    .map(|e| EpochSection {
                        start: e.start,
                        arcs: e.graph.arcs(),
                    })
                    .collect(),
            },
            agents: s
                .problem
                .objectives
                .iter()
                .zip(&s.problem.sets)
                .map(|(f, h)| AgentSection {
                    objective: f.clone(),
                    set: h.clone(),
                })
                .collect(),
        }
    }
}

fn build(file: ScenarioFile) -> Result<Scenario> {
    let n = file.agents.len();
    let m = file.dimension;
    if n == 0 {
        return Err(Error::Precondition("scenario declares no agents".into()));
    }
    if !(file.step > 0.0 && file.step.is_finite()) {
        return Err(Error::Precondition(format!("step must be positive, got {}", file.step)));
    }
    if file.stride == 0 {
        return Err(Error::Precondition("stride must be positive".into()));
    }
    if !(file.q0 > 0.0 && file.q0.is_finite()) {
        return Err(Error::Precondition(format!("q0 must be positive, got {}", file.q0)));
    }
    if file.feasible_point.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: file.feasible_point.len(),
        });
    }
    if let Some(r) = &file.reference {
        if r.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: r.len() });
        }
    }
    match &file.initial {
        InitialStates::RandomBox { lo, hi, .. } => {
            if lo.len() != m || hi.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: lo.len().min(hi.len()),
                });
            }
            if lo.iter().zip(hi).any(|(l, h)| !(l <= h && l.is_finite() && h.is_finite())) {
                return Err(Error::Precondition("initial box needs finite bounds with lo <= hi".into()));
            }
        }
        InitialStates::Explicit { states, .. } => {
            if states.len() != n {
                return Err(Error::Precondition(format!("{} initial states for {n} agents", states.len())));
            }
        }
    }

    let family = file.family;
    let sec = file.schedule;
    let eta = sec.eta.unwrap_or_else(|| {
        sec.epochs
            .iter()
            .flat_map(|e| e.arcs.iter().map(|a| a.2))
            .filter(|&w| w > 0.0)
            .fold(f64::INFINITY, f64::min)
            .min(1.0)
    });
    let eta = if eta.is_finite() { eta } else { 1.0 };
    let epochs = sec
        .epochs
        .into_iter()
        .map(|e| {
            Ok(Epoch {
                start: e.start,
                graph: WeightedDigraph::from_arcs(family, n, &e.arcs, eta)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dwell = match family {
        Family::Ct => sec.dwell,
        Family::Dt => None,
    };
    let schedule = GraphSchedule::new(family, epochs, sec.period, dwell, sec.window)?;

    let (objectives, sets): (Vec<_>, Vec<_>) = file.agents.into_iter().map(|a| (a.objective, a.set)).unzip();
    for (i, (f, h)) in objectives.iter().zip(&sets).enumerate() {
        if f.dim() != m || h.dim() != m {
            return Err(Error::Precondition(format!(
                "agent {i}: objective dimension {} and set dimension {} differ from {m}",
                f.dim(),
                h.dim()
            )));
        }
    }
    let problem = Problem::new(objectives, sets, schedule)?;

    let dt = match (family, file.dt) {
        (Family::Dt, Some(d)) => {
            let gamma = match d.gamma {
                Some(GammaSpec::Uniform(g)) => vec![g; n],
                Some(GammaSpec::PerAgent(g)) => g,
                None => match d.mode {
                    DtMode::Mixed => vec![DEFAULT_MIXED_GAMMA; n],
                    DtMode::Projected => vec![1.0; n],
                },
            };
            let p = DtParams {
                sample_time: file.step,
                gamma,
                mode: d.mode,
            };
            p.validate(n)?;
            Some(p)
        }
        (Family::Dt, None) => return Err(Error::Precondition("discrete-time scenario needs a [dt] section".into())),
        (Family::Ct, Some(_)) => {
            return Err(Error::Precondition("[dt] section given for a continuous-time scenario".into()))
        }
        (Family::Ct, None) => None,
    };

    Ok(Scenario {
        name: file.name,
        problem,
        step: file.step,
        steps: file.steps,
        stride: file.stride,
        seed: file.seed,
        q0: file.q0,
        initial: file.initial,
        dt,
        feasible_point: file.feasible_point,
        reference: file.reference,
    })
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |p| before.len() - p - 1) + 1;
    (line, column)
}

/// Parses and structurally checks a scenario without testing the
/// algorithm's hypotheses.
pub fn parse_scenario_unchecked(text: &str) -> Result<Scenario> {
    if text.trim().is_empty() {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "empty scenario".into(),
        });
    }
    let file: ScenarioFile = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        Error::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    build(file)
}

/// Parses a scenario and rejects it if any hypothesis fails.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let s = parse_scenario_unchecked(text)?;
    s.validate()?;
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sec5Variant {
    Ct,
    DtMixed,
    DtProjected,
}

impl std::str::FromStr for Sec5Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "ct" => Ok(Sec5Variant::Ct),
            "dt-mixed" => Ok(Sec5Variant::DtMixed),
            "dt-projected" => Ok(Sec5Variant::DtProjected),
            other => Err(format!("unknown variant `{other}` (expected ct, dt-mixed or dt-projected)")),
        }
    }
}

/// Number of agents in the built-in experiment.
pub const SEC5_AGENTS: usize = 24;
/// Sample time of the built-in experiment, also the Euler step.
pub const SEC5_STEP: f64 = 0.1;
/// Edge weight of the continuous-time ring.
pub const SEC5_EDGE_WEIGHT: f64 = 0.5;
/// Steps per topology epoch (the dwell time is this many sample times).
pub const SEC5_EPOCH_STEPS: u64 = 10;
/// Optimum of the constrained team problem.
pub const SEC5_OPTIMUM: [f64; 2] = [-0.5, 1.0];
/// Frozen run lengths, in steps.
pub const SEC5_CT_STEPS: u64 = 8_000_000;
pub const SEC5_DT_STEPS: u64 = 600_000;
pub const SEC5_SEED: u64 = 5;
pub const SEC5_INITIAL_BOX: f64 = 2.0;

/// The four constraint sets: `H1` ball of radius 3 at the origin,
/// `H2 = {x <= 0.5, y >= 1}`, `H3` ball of radius 3 at `(0, 3)`,
/// `H4 = {x >= -0.5, y >= 1}`.
pub fn sec5_sets() -> [ConvexSet; 4] {
    [
        ConvexSet::Ball {
            center: vec![0.0, 0.0],
            radius: 3.0,
        },
        ConvexSet::Box {
            lo: vec![f64::NEG_INFINITY, 1.0],
            hi: vec![0.5, f64::INFINITY],
        },
        ConvexSet::Ball {
            center: vec![0.0, 3.0],
            radius: 3.0,
        },
        ConvexSet::Box {
            lo: vec![-0.5, 1.0],
            hi: vec![f64::INFINITY, f64::INFINITY],
        },
    ]
}

/// Objective family (1..=8) and index `j` (1..=3) of agent `i`; agents are
/// assigned family-major: agents 0-2 get family 1, agents 3-5 family 2, ...
pub fn sec5_assignment(i: usize) -> (usize, usize) {
    (i / 3 + 1, i % 3 + 1)
}

/// Set of each objective family: families 1 and 5 use `H1`, 2 and 6 `H2`,
/// 3 and 7 `H3`, 4 and 8 `H4`.
pub fn sec5_set_index(family: usize) -> usize {
    (family - 1) % 4
}

/// The round-robin subgraphs of the 24-agent ring: subgraph `k` is the ring
/// with its `k`-th edge removed. Each is an undirected path and hence
/// balanced; any two of them together give the whole ring.
pub fn sec5_subgraphs() -> Vec<Vec<(usize, usize)>> {
    let ring = ring_edges(SEC5_AGENTS);
    (0..ring.len())
        .map(|k| ring.iter().enumerate().filter(|(e, _)| *e != k).map(|(_, &e)| e).collect())
        .collect()
}

/// The reconstructed 24-agent experiment.
///
/// The communication graph is the ring `0 - 1 - ... - 23 - 0` (two rows of
/// twelve agents joined at both ends), switched round-robin through the
/// subgraphs of [`sec5_subgraphs`], one every [`SEC5_EPOCH_STEPS`] sample
/// times. The continuous-time variant uses weight 0.5 on every edge; the
/// discrete-time variants use Metropolis weights on each subgraph.
pub fn builtin_sec5(variant: Sec5Variant) -> Scenario {
    let n = SEC5_AGENTS;
    let sets = sec5_sets();
    let (objectives, agent_sets): (Vec<_>, Vec<_>) = (0..n)
        .map(|i| {
            let (family, j) = sec5_assignment(i);
            (experiment_objective(family, j), sets[sec5_set_index(family)].clone())
        })
        .unzip();

    let epoch_len = SEC5_EPOCH_STEPS as f64;
    let subgraphs = sec5_subgraphs();
    let (family, unit) = match variant {
        Sec5Variant::Ct => (Family::Ct, SEC5_STEP),
        _ => (Family::Dt, 1.0),
    };
    let epochs: Vec<Epoch> = subgraphs
        .iter()
        .enumerate()
        .map(|(k, edges)| {
            let graph = match family {
                Family::Ct => WeightedDigraph::undirected(n, edges, SEC5_EDGE_WEIGHT),
                Family::Dt => metropolis_weights(n, edges),
            }
            .expect("ring subgraphs are valid");
            Epoch {
                start: k as f64 * epoch_len * unit,
                graph,
            }
        })
        .collect();
    let period = subgraphs.len() as f64 * epoch_len * unit;
    let dwell = (family == Family::Ct).then_some(epoch_len * unit);
    let schedule =
        GraphSchedule::new(family, epochs, period, dwell, period).expect("built-in schedule is well formed");
    let problem = Problem::new(objectives, agent_sets, schedule).expect("built-in problem is consistent");

    let (dt, steps, project) = match variant {
        Sec5Variant::Ct => (None, SEC5_CT_STEPS, false),
        Sec5Variant::DtMixed => (Some(DtParams::mixed(SEC5_STEP, n)), SEC5_DT_STEPS, false),
        Sec5Variant::DtProjected => (Some(DtParams::projected(SEC5_STEP, n)), SEC5_DT_STEPS, true),
    };
    // whole schedule periods per sample, so samples see the same topology
    let period_steps = subgraphs.len() as u64 * SEC5_EPOCH_STEPS;
    let stride = (steps / 1000).div_ceil(period_steps) * period_steps;
    let name = match variant {
        Sec5Variant::Ct => "sec5-ct",
        Sec5Variant::DtMixed => "sec5-dt-mixed",
        Sec5Variant::DtProjected => "sec5-dt-projected",
    };
    Scenario {
        name: Some(name.into()),
        problem,
        step: SEC5_STEP,
        steps,
        stride,
        seed: SEC5_SEED,
        q0: 1.0,
        initial: InitialStates::RandomBox {
            lo: vec![-SEC5_INITIAL_BOX; 2],
            hi: vec![SEC5_INITIAL_BOX; 2],
            project,
        },
        dt,
        feasible_point: SEC5_OPTIMUM.to_vec(),
        reference: Some(SEC5_OPTIMUM.to_vec()),
    }
}
