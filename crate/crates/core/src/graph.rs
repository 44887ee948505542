//! Weighted communication digraphs, switching schedules and the
//! graph-theoretic checks the solvers rely on.
//!
//! Weight convention: `a[i][j] > 0` means agent `i` receives information
//! from agent `j` (the arc `j -> i`). Continuous-time graphs carry no
//! self-loops (`a[i][i] == 0`); discrete-time mixing matrices carry strictly
//! positive self-weights.

use nalgebra::{DMatrix, SymmetricEigen};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::error::{Assumption, Error, Result, Violation};

/// Default tolerance for balance and stochasticity checks.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Slack used when comparing schedule times that were produced by
/// accumulating floating-point steps.
const TIME_EPS: f64 = 1e-9;

/// Which algorithm family a graph is meant for; fixes the self-loop convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Continuous time: no self-loops.
    Ct,
    /// Discrete time: every agent keeps a positive self-weight.
    Dt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    n: usize,
    family: Family,
    eta: f64,
    weights: Vec<f64>,
    // off-diagonal nonzeros of each row, cached for the stepping loops
    rows: Vec<Vec<(usize, f64)>>,
}

impl WeightedDigraph {
    /// Builds a graph from a dense weight matrix, checking the family's
    /// self-loop convention and the `eta` lower bound on nonzero weights.
    pub fn new(family: Family, weights: Vec<Vec<f64>>, eta: f64) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(Error::InvalidGraph("graph has no agents".into()));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidGraph(format!("eta must be positive, got {eta}")));
        }
        if family == Family::Dt && eta > 1.0 {
            return Err(Error::InvalidGraph(format!(
                "eta must not exceed 1 for discrete-time graphs, got {eta}"
            )));
        }
        let mut flat = Vec::with_capacity(n * n);
        for (i, row) in weights.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidGraph(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &w) in row.iter().enumerate() {
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvalidGraph(format!(
                        "weight a[{i}][{j}] = {w} is not a nonnegative real"
                    )));
                }
                if w != 0.0 && w < eta * (1.0 - 1e-12) {
                    return Err(Error::InvalidGraph(format!(
                        "nonzero weight a[{i}][{j}] = {w} is below eta = {eta}"
                    )));
                }
                if i == j {
                    match family {
                        Family::Ct if w != 0.0 => {
                            return Err(Error::InvalidGraph(format!(
                                "continuous-time graph has self-loop a[{i}][{i}] = {w}"
                            )))
                        }
                        Family::Dt if w == 0.0 => {
                            return Err(Error::InvalidGraph(format!(
                                "discrete-time graph has zero self-weight a[{i}][{i}]"
                            )))
                        }
                        _ => {}
                    }
                }
            }
            flat.extend_from_slice(row);
        }
        Ok(Self::from_flat(n, family, eta, flat))
    }

    /// Builds a graph from `(i, j, a_ij)` triples; unlisted entries are zero.
    pub fn from_arcs(family: Family, n: usize, arcs: &[(usize, usize, f64)], eta: f64) -> Result<Self> {
        let mut w = vec![vec![0.0; n]; n];
        for &(i, j, a) in arcs {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!(
                    "arc ({i}, {j}) references an agent outside 0..{n}"
                )));
            }
            w[i][j] = a;
        }
        Self::new(family, w, eta)
    }

    /// Undirected continuous-time graph with a uniform edge weight.
    pub fn undirected(n: usize, edges: &[(usize, usize)], weight: f64) -> Result<Self> {
        let mut arcs = Vec::with_capacity(2 * edges.len());
        for &(i, j) in edges {
            arcs.push((i, j, weight));
            arcs.push((j, i, weight));
        }
        Self::from_arcs(Family::Ct, n, &arcs, weight)
    }

    /// Graph without any arcs between distinct agents: the zero matrix for
    /// continuous time, the identity for discrete time.
    pub fn edgeless(family: Family, n: usize) -> Self {
        let mut w = vec![0.0; n * n];
        if family == Family::Dt {
            for i in 0..n {
                w[i * n + i] = 1.0;
            }
        }
        Self::from_flat(n, family, 1.0, w)
    }

    fn from_flat(n: usize, family: Family, eta: f64, weights: Vec<f64>) -> Self {
        let rows = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i && weights[i * n + j] != 0.0)
                    .map(|j| (j, weights[i * n + j]))
                    .collect()
            })
            .collect();
        Self {
            n,
            family,
            eta,
            weights,
            rows,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `a_ij`: weight with which agent `i` hears agent `j`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    /// Off-diagonal in-neighbors of `i` with their weights.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.weights.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    /// Nonzero entries as `(i, j, a_ij)` triples, row-major.
    pub fn arcs(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n;
        (0..n * n)
            .filter(|&k| self.weights[k] != 0.0)
            .map(|k| (k / n, k % n, self.weights[k]))
            .collect()
    }

    fn row_sum(&self, i: usize) -> f64 {
        (0..self.n).map(|j| self.weight(i, j)).sum()
    }

    fn col_sum(&self, j: usize) -> f64 {
        (0..self.n).map(|i| self.weight(i, j)).sum()
    }
}

/// Undirected ring `0 - 1 - ... - (n-1) - 0`.
pub fn ring_edges(n: usize) -> Vec<(usize, usize)> {
    match n {
        0 | 1 => Vec::new(),
        2 => vec![(0, 1)],
        _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
    }
}

pub fn path_edges(n: usize) -> Vec<(usize, usize)> {
    (1..n).map(|i| (i - 1, i)).collect()
}

pub fn complete_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}

/// `L_ii = sum_{j != i} a_ij`, `L_ij = -a_ij`. Self-weights never enter.
pub fn laplacian(g: &WeightedDigraph) -> DMatrix<f64> {
    let n = g.n();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for &(j, a) in g.neighbors(i) {
            l[(i, j)] = -a;
            diag += a;
        }
        l[(i, i)] = diag;
    }
    l
}

/// In-weight equals out-weight at every node, within `tol`.
pub fn is_balanced(g: &WeightedDigraph, tol: f64) -> bool {
    balance_defect(g, tol).is_none()
}

fn balance_defect(g: &WeightedDigraph, tol: f64) -> Option<String> {
    (0..g.n()).find_map(|i| {
        let (inw, outw) = (g.row_sum(i), g.col_sum(i));
        ((inw - outw).abs() > tol)
            .then(|| format!("node {i} has in-weight {inw} but out-weight {outw}"))
    })
}

/// Row and column sums are one and every self-weight is at least `eta`.
pub fn is_doubly_stochastic(g: &WeightedDigraph, tol: f64) -> bool {
    stochasticity_defect(g, tol).is_none()
}

fn stochasticity_defect(g: &WeightedDigraph, tol: f64) -> Option<String> {
    for i in 0..g.n() {
        let d = g.weight(i, i);
        if d < g.eta() * (1.0 - 1e-12) {
            return Some(format!("diagonal entry {i} is {d}, below eta = {}", g.eta()));
        }
    }
    for i in 0..g.n() {
        let s = g.row_sum(i);
        if (s - 1.0).abs() > tol {
            return Some(format!("row {i} sums to {s}"));
        }
    }
    for j in 0..g.n() {
        let s = g.col_sum(j);
        if (s - 1.0).abs() > tol {
            return Some(format!("column {j} sums to {s}"));
        }
    }
    None
}

/// Metropolis–Hastings weights on an undirected simple graph:
/// `a_ij = 1 / (1 + max(deg_i, deg_j))` on edges, the remainder on the diagonal.
pub fn metropolis_weights(n: usize, edges: &[(usize, usize)]) -> Result<WeightedDigraph> {
    let mut adj = vec![vec![false; n]; n];
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(Error::InvalidGraph(format!(
                "edge ({i}, {j}) references an agent outside 0..{n}"
            )));
        }
        if i == j {
            return Err(Error::InvalidGraph(format!("self-loop edge ({i}, {i})")));
        }
        adj[i][j] = true;
        adj[j][i] = true;
    }
    let deg: Vec<usize> = adj.iter().map(|r| r.iter().filter(|&&b| b).count()).collect();
    let mut w = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if adj[i][j] {
                w[i][j] = 1.0 / (1 + deg[i].max(deg[j])) as f64;
            }
        }
        let off: f64 = w[i].iter().sum();
        w[i][i] = 1.0 - off;
    }
    let eta = w
        .iter()
        .flatten()
        .copied()
        .filter(|&a| a > 0.0)
        .fold(1.0, f64::min);
    WeightedDigraph::new(Family::Dt, w, eta)
}

/// Every agent reaches every other agent along directed arcs.
pub fn is_strongly_connected(g: &WeightedDigraph) -> bool {
    let mut dg = DiGraph::<(), ()>::with_capacity(g.n(), 0);
    let nodes: Vec<_> = (0..g.n()).map(|_| dg.add_node(())).collect();
    for i in 0..g.n() {
        for &(j, _) in g.neighbors(i) {
            dg.add_edge(nodes[j], nodes[i], ());
        }
    }
    tarjan_scc(&dg).len() == 1
}

/// Eigenvalues of `(L + L^T) / 2`, ascending.
pub fn symmetric_laplacian_eigenvalues(g: &WeightedDigraph) -> Vec<f64> {
    let l = laplacian(g);
    let sym = (&l + l.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// For a strongly connected balanced graph the symmetric part of the
/// Laplacian is positive semidefinite with a simple zero eigenvalue.
pub fn laplacian_spectrum_check(g: &WeightedDigraph, tol: f64) -> Result<bool> {
    if !is_strongly_connected(g) {
        return Err(Error::Precondition(
            "spectrum check requires a strongly connected graph".into(),
        ));
    }
    let ev = symmetric_laplacian_eigenvalues(g);
    let nonnegative = ev.iter().all(|&l| l >= -tol);
    let zeros = ev.iter().filter(|l| l.abs() <= tol).count();
    Ok(nonnegative && zeros == 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    /// Start of the epoch: seconds for continuous time, step index for discrete time.
    pub start: f64,
    pub graph: WeightedDigraph,
}

/// Piecewise-constant topology, replayed cyclically with the given period.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSchedule {
    family: Family,
    epochs: Vec<Epoch>,
    period: f64,
    dwell: Option<f64>,
    window: f64,
}

impl GraphSchedule {
    /// `dwell` is the minimum epoch length (continuous time only) and
    /// `window` the bound on joint-connectivity windows.
    pub fn new(
        family: Family,
        epochs: Vec<Epoch>,
        period: f64,
        dwell: Option<f64>,
        window: f64,
    ) -> Result<Self> {
        let first = epochs
            .first()
            .ok_or_else(|| Error::InvalidSchedule("schedule has no epochs".into()))?;
        if first.start != 0.0 {
            return Err(Error::InvalidSchedule(format!(
                "first epoch must start at 0, got {}",
                first.start
            )));
        }
        let n = first.graph.n();
        for (k, pair) in epochs.windows(2).enumerate() {
            if pair[1].start <= pair[0].start {
                return Err(Error::InvalidSchedule(format!(
                    "epoch {} starts at {} which does not follow {}",
                    k + 1,
                    pair[1].start,
                    pair[0].start
                )));
            }
        }
        let last = epochs.last().map(|e| e.start).unwrap_or(0.0);
        if !(period.is_finite() && period > last) {
            return Err(Error::InvalidSchedule(format!(
                "period {period} must exceed the last epoch start {last}"
            )));
        }
        for (k, e) in epochs.iter().enumerate() {
            if e.graph.n() != n {
                return Err(Error::InvalidSchedule(format!(
                    "epoch {k} has {} agents, expected {n}",
                    e.graph.n()
                )));
            }
            if e.graph.family() != family {
                return Err(Error::InvalidSchedule(format!(
                    "epoch {k} graph uses the {:?} convention, schedule is {family:?}",
                    e.graph.family()
                )));
            }
            if family == Family::Dt && e.start.fract() != 0.0 {
                return Err(Error::InvalidSchedule(format!(
                    "discrete-time epoch {k} starts at non-integer step {}",
                    e.start
                )));
            }
        }
        if family == Family::Dt && period.fract() != 0.0 {
            return Err(Error::InvalidSchedule(format!(
                "discrete-time period {period} is not an integer number of steps"
            )));
        }
        if let Some(d) = dwell {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidSchedule(format!("dwell time must be positive, got {d}")));
            }
        }
        if !(window > 0.0 && window.is_finite()) {
            return Err(Error::InvalidSchedule(format!("window must be positive, got {window}")));
        }
        Ok(Self {
            family,
            epochs,
            period,
            dwell,
            window,
        })
    }

    /// A single graph held forever. The window bound is two periods, so it
    /// exceeds the dwell time of one period.
    pub fn fixed(graph: WeightedDigraph, period: f64) -> Result<Self> {
        let family = graph.family();
        let dwell = (family == Family::Ct).then_some(period);
        Self::new(family, vec![Epoch { start: 0.0, graph }], period, dwell, 2.0 * period)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n(&self) -> usize {
        self.epochs[0].graph.n()
    }

    pub fn epochs(&self) -> &[Epoch] {
        &self.epochs
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn dwell(&self) -> Option<f64> {
        self.dwell
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    fn epoch_end(&self, k: usize) -> f64 {
        self.epochs.get(k + 1).map_or(self.period, |e| e.start)
    }

    pub fn epoch_length(&self, k: usize) -> f64 {
        self.epoch_end(k) - self.epochs[k].start
    }

    /// Cycle number and epoch index active at time `t >= 0`.
    fn locate(&self, t: f64) -> (f64, usize) {
        let eps = TIME_EPS * t.abs().max(1.0);
        let cycle = ((t + eps) / self.period).floor();
        let local = t - cycle * self.period;
        let k = self
            .epochs
            .iter()
            .rposition(|e| e.start <= local + eps)
            .unwrap_or(0);
        (cycle, k)
    }

    pub fn epoch_index_at(&self, t: f64) -> usize {
        self.locate(t).1
    }

    pub fn graph_at(&self, t: f64) -> &WeightedDigraph {
        &self.epochs[self.epoch_index_at(t)].graph
    }

    /// First switching instant strictly after `t`.
    pub fn next_switch_after(&self, t: f64) -> f64 {
        let (cycle, k) = self.locate(t);
        cycle * self.period + self.epoch_end(k)
    }

    /// Fails if a switch falls strictly inside `(t, t + h)`.
    pub fn check_step_alignment(&self, t: f64, h: f64) -> Result<()> {
        let next = self.next_switch_after(t);
        let eps = TIME_EPS * (t + h).abs().max(1.0);
        if next < t + h - eps {
            Err(Error::StepAlignment {
                t,
                t_next: t + h,
                boundary: next,
            })
        } else {
            Ok(())
        }
    }

    /// Union of every epoch graph active during `[start, end)`; an arc's
    /// weight is the largest weight it carries in any of those epochs.
    pub fn union_graph(&self, start: f64, end: f64) -> Result<WeightedDigraph> {
        if !(start >= 0.0 && end > start && end.is_finite()) {
            return Err(Error::ScheduleRange { start, end });
        }
        let n = self.n();
        let mut w = vec![0.0; n * n];
        let mut eta = f64::INFINITY;
        let mut seen = vec![false; self.epochs.len()];
        let (mut cycle, mut k) = self.locate(start);
        loop {
            let e_start = cycle * self.period + self.epochs[k].start;
            if e_start >= end - TIME_EPS * end.abs().max(1.0) && seen.iter().any(|&s| s) {
                break;
            }
            if !seen[k] {
                seen[k] = true;
                let g = &self.epochs[k].graph;
                eta = eta.min(g.eta());
                for (a, b) in w.iter_mut().zip(&g.weights) {
                    *a = f64::max(*a, *b);
                }
            }
            if seen.iter().all(|&s| s) {
                break;
            }
            k += 1;
            if k == self.epochs.len() {
                k = 0;
                cycle += 1.0;
            }
        }
        Ok(WeightedDigraph::from_flat(n, self.family, eta, w))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochCheck {
    pub index: usize,
    pub start: f64,
    pub length: f64,
    /// Self-loop convention matches the requested family.
    pub convention_ok: bool,
    pub dwell_ok: Option<bool>,
    pub balanced: Option<bool>,
    pub doubly_stochastic: Option<bool>,
    pub defect: Option<String>,
}

/// Smallest window starting at an epoch boundary whose union graph is
/// strongly connected. `end` is `None` when even a full period is not enough.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowCheck {
    pub start: f64,
    pub end: Option<f64>,
    pub strongly_connected: bool,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleReport {
    pub family: Family,
    pub epochs: Vec<EpochCheck>,
    pub windows: Vec<WindowCheck>,
    /// Continuous time requires the window bound to exceed the dwell time.
    pub window_exceeds_dwell: Option<bool>,
}

impl ScheduleReport {
    pub fn passed(&self) -> bool {
        self.violations().is_empty()
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (weights_assumption, connectivity) = match self.family {
            Family::Ct => (Assumption::Balanced, Assumption::JointConnectivity),
            Family::Dt => (Assumption::DoublyStochastic, Assumption::JointConnectivityDiscrete),
        };
        for e in &self.epochs {
            if !e.convention_ok {
                out.push(Violation::new(
                    weights_assumption,
                    format!("epoch {} does not use the {:?} self-loop convention", e.index, self.family),
                ));
            }
            if e.dwell_ok == Some(false) {
                out.push(Violation::new(
                    Assumption::DwellTime,
                    format!("epoch {} lasts {} which is shorter than the dwell time", e.index, e.length),
                ));
            }
            if e.balanced == Some(false) || e.doubly_stochastic == Some(false) {
                let defect = e.defect.as_deref().unwrap_or("weights rejected");
                out.push(Violation::new(weights_assumption, format!("epoch {}: {defect}", e.index)));
            }
        }
        if self.window_exceeds_dwell == Some(false) {
            out.push(Violation::new(
                connectivity,
                "window bound M must exceed the dwell time",
            ));
        }
        for w in &self.windows {
            if !w.strongly_connected {
                out.push(Violation::new(
                    connectivity,
                    format!(
                        "union of graphs from {} over a full period is not strongly connected",
                        w.start
                    ),
                ));
            } else if !w.within_bound {
                out.push(Violation::new(
                    connectivity,
                    format!(
                        "window [{}, {}) exceeds the bound M",
                        w.start,
                        w.end.unwrap_or(f64::NAN)
                    ),
                ));
            }
        }
        out
    }
}

/// Checks the schedule against the hypotheses of the requested algorithm
/// family. Violations are collected, never raised.
pub fn validate_schedule(schedule: &GraphSchedule, family: Family) -> ScheduleReport {
    let tol = DEFAULT_TOL;
    let epochs = schedule
        .epochs()
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let g = &e.graph;
            let length = schedule.epoch_length(k);
            let convention_ok = g.family() == family;
            let (dwell_ok, balanced, doubly_stochastic, defect) = match family {
                Family::Ct => {
                    let dwell_ok = schedule
                        .dwell()
                        .map(|d| length >= d - TIME_EPS * d.max(1.0))
                        .or(Some(false));
                    let defect = balance_defect(g, tol);
                    (dwell_ok, Some(defect.is_none()), None, defect)
                }
                Family::Dt => {
                    let defect = stochasticity_defect(g, tol);
                    (None, None, Some(defect.is_none()), defect)
                }
            };
            EpochCheck {
                index: k,
                start: e.start,
                length,
                convention_ok,
                dwell_ok,
                balanced,
                doubly_stochastic,
                defect,
            }
        })
        .collect();

    let m = schedule.window();
    let windows = (0..schedule.epochs().len())
        .map(|s| {
            let start = schedule.epochs()[s].start;
            let mut found = None;
            for span in 1..=schedule.epochs().len() {
                let last = (s + span - 1) % schedule.epochs().len();
                let wraps = (s + span - 1) / schedule.epochs().len();
                let end = wraps as f64 * schedule.period() + schedule.epoch_end(last);
                let union = schedule
                    .union_graph(start, end)
                    .expect("epoch-aligned windows are always in range");
                if is_strongly_connected(&union) {
                    found = Some(end);
                    break;
                }
            }
            WindowCheck {
                start,
                end: found,
                strongly_connected: found.is_some(),
                within_bound: found.is_some_and(|end| end - start <= m + TIME_EPS * m.max(1.0)),
            }
        })
        .collect();

    let window_exceeds_dwell = match family {
        Family::Ct => Some(schedule.dwell().is_some_and(|d| m > d)),
        Family::Dt => None,
    };

    ScheduleReport {
        family,
        epochs,
        windows,
        window_exceeds_dwell,
    }
}
