//! Distributed constrained-consensus optimization with nonuniform,
//! state-dependent stepsizes over switching communication graphs.
//!
//! `n` agents cooperatively minimize `sum_i f_i(s)` subject to
//! `s in H_1 ∩ ... ∩ H_n`, where agent `i` only knows `f_i` and `H_i` and
//! exchanges states with its current neighbors. Two algorithms are
//! provided: a continuous-time projected consensus flow ([`ct`]) and a
//! discrete-time iteration with a gradient switching rule ([`dt`]). Each
//! agent scales its gradient by `1 / sqrt(q_i)` where `q_i` grows at a
//! rate driven by the agent's own state.

pub mod convex;
pub mod ct;
pub mod dt;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod objective;
pub mod run;
pub mod scenario;

pub use convex::ConvexSet;
pub use dynamics::{AgentState, Problem, Sample, Sampling, SimulationError, Trajectory};
pub use error::{Assumption, Error, Result, Violation};
pub use graph::{Family, GraphSchedule, WeightedDigraph};
pub use objective::Objective;
pub use scenario::{builtin_sec5, parse_scenario, parse_scenario_unchecked, Scenario, Sec5Variant};
