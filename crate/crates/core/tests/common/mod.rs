//! Shared generators and brute-force oracles for the integration tests.
#![allow(dead_code)]

use consensus_opt::convex::ConvexSet;
use consensus_opt::dt::DtParams;
use consensus_opt::graph::{metropolis_weights, Epoch, Family, GraphSchedule, WeightedDigraph};
use consensus_opt::linalg::{dist, dot, norm};
use consensus_opt::objective::Objective;
use consensus_opt::scenario::InitialStates;
use consensus_opt::{Problem, Scenario};
use proptest::prelude::*;
use rand::Rng;

pub const PROP_TOL: f64 = 1e-9;

fn coord() -> impl Strategy<Value = f64> {
    -5.0..5.0f64
}

fn point(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(coord(), m)
}

/// Random direction scaled into `[lo, hi]` in length.
fn nonzero(m: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(-1.0..1.0f64, m), lo..hi).prop_map(|(v, len)| {
        let n = norm(&v);
        if n < 1e-3 {
            let mut e = vec![0.0; v.len()];
            e[0] = len;
            e
        } else {
            v.iter().map(|c| c * len / n).collect()
        }
    })
}

/// A set together with a point `p` and radius `r` such that the ball
/// around `p` of radius `r` lies inside the set.
#[derive(Debug, Clone)]
pub struct SetCase {
    pub set: ConvexSet,
    pub inner_center: Vec<f64>,
    pub inner_radius: f64,
}

impl SetCase {
    /// A member of the set derived from arbitrary coordinates.
    pub fn member(&self, raw: &[f64]) -> Vec<f64> {
        let n = norm(raw).max(1.0);
        self.inner_center
            .iter()
            .zip(raw)
            .map(|(p, w)| p + self.inner_radius * w / n)
            .collect()
    }
}

fn ball_at(p: Vec<f64>, offset: Vec<f64>, margin: f64) -> SetCase {
    let center: Vec<f64> = p.iter().zip(&offset).map(|(a, b)| a + b).collect();
    let radius = norm(&offset) + margin;
    SetCase {
        set: ConvexSet::ball(center, radius).unwrap(),
        inner_center: p,
        inner_radius: margin,
    }
}

fn box_at(p: Vec<f64>, below: Vec<f64>, above: Vec<f64>, open: Vec<u8>) -> SetCase {
    // open: 0 both finite, 1 lower infinite, 2 upper infinite
    let lo: Vec<f64> = p
        .iter()
        .zip(&below)
        .zip(&open)
        .map(|((c, b), o)| if *o == 1 { f64::NEG_INFINITY } else { c - b })
        .collect();
    let hi: Vec<f64> = p
        .iter()
        .zip(&above)
        .zip(&open)
        .map(|((c, a), o)| if *o == 2 { f64::INFINITY } else { c + a })
        .collect();
    let margin = below.iter().chain(&above).copied().fold(f64::INFINITY, f64::min);
    SetCase {
        set: ConvexSet::boxed(lo, hi).unwrap(),
        inner_center: p,
        inner_radius: margin,
    }
}

fn halfspace_at(p: Vec<f64>, normal: Vec<f64>, margin: f64) -> SetCase {
    let offset = dot(&normal, &p) + margin * norm(&normal);
    SetCase {
        set: ConvexSet::halfspace(normal, offset).unwrap(),
        inner_center: p,
        inner_radius: margin,
    }
}

pub fn ball_case(m: usize) -> impl Strategy<Value = SetCase> {
    (point(m), point(m), 0.1..3.0f64).prop_map(|(p, off, margin)| ball_at(p, off, margin))
}

pub fn box_case(m: usize) -> impl Strategy<Value = SetCase> {
    (
        point(m),
        prop::collection::vec(0.1..3.0f64, m),
        prop::collection::vec(0.1..3.0f64, m),
        prop::collection::vec(0u8..3, m),
    )
        .prop_map(|(p, b, a, o)| box_at(p, b, a, o))
}

pub fn halfspace_case(m: usize) -> impl Strategy<Value = SetCase> {
    (point(m), nonzero(m, 0.2, 3.0), 0.0..2.0f64).prop_map(|(p, a, margin)| halfspace_at(p, a, margin))
}

/// Intersections of two or three leaves sharing an interior ball.
pub fn intersection_case(m: usize) -> impl Strategy<Value = SetCase> {
    (
        point(m),
        point(m),
        0.2..2.0f64,
        nonzero(m, 0.2, 3.0),
        0.0..2.0f64,
        prop::collection::vec(0.2..3.0f64, m),
        prop::collection::vec(0.2..3.0f64, m),
        any::<bool>(),
    )
        .prop_map(|(p, off, ball_margin, normal, hs_margin, below, above, with_box)| {
            let ball = ball_at(p.clone(), off, ball_margin);
            let hs = halfspace_at(p.clone(), normal, hs_margin.max(0.1));
            let mut members = vec![ball.set, hs.set];
            let mut margin = ball.inner_radius.min(hs.inner_radius);
            if with_box {
                let b = box_at(p.clone(), below, above, vec![0; p.len()]);
                margin = margin.min(b.inner_radius);
                members.push(b.set);
            }
            // corners met at shallow angles can need far more sweeps than
            // the default budget
            let set = match ConvexSet::intersection(members).unwrap() {
                ConvexSet::Intersection { members, tol, .. } => ConvexSet::Intersection {
                    members,
                    tol,
                    max_iter: 2_000_000,
                },
                _ => unreachable!(),
            };
            SetCase {
                set,
                inner_center: p,
                inner_radius: margin,
            }
        })
}

pub fn dims() -> impl Strategy<Value = usize> {
    1usize..=4
}

/// `(set, y, z, raw member coordinates)` with all vectors in dimension `m`.
pub fn projection_cases<S, F>(make: F) -> impl Strategy<Value = (SetCase, Vec<f64>, Vec<f64>, Vec<f64>)>
where
    S: Strategy<Value = SetCase>,
    F: Fn(usize) -> S,
{
    dims().prop_flat_map(move |m| {
        let wide = prop::collection::vec(-10.0..10.0f64, m);
        (make(m), wide.clone(), wide, prop::collection::vec(-1.0..1.0f64, m))
    })
}

/// Non-expansiveness, obtuse-angle and Pythagoras inequalities at one case.
pub fn check_projection(case: &SetCase, y: &[f64], z: &[f64], raw: &[f64]) -> Result<(), String> {
    let set = &case.set;
    let xi = case.member(raw);
    if !set.contains(&xi, 1e-12) {
        return Err(format!("generated member {xi:?} is outside {set:?}"));
    }
    let py = set.project(y).map_err(|e| e.to_string())?;
    let pz = set.project(z).map_err(|e| e.to_string())?;
    if dist(&py, &pz) > dist(y, z) + PROP_TOL {
        return Err(format!("expansive: |Py - Pz| = {} > |y - z| = {}", dist(&py, &pz), dist(y, z)));
    }
    let r: Vec<f64> = y.iter().zip(&py).map(|(a, b)| a - b).collect();
    let y_xi: Vec<f64> = y.iter().zip(&xi).map(|(a, b)| a - b).collect();
    let xi_p: Vec<f64> = xi.iter().zip(&py).map(|(a, b)| a - b).collect();
    if dot(&r, &y_xi) < -PROP_TOL {
        return Err(format!("obtuse angle: (y - Py).(y - xi) = {}", dot(&r, &y_xi)));
    }
    if dot(&r, &xi_p) > PROP_TOL {
        return Err(format!("variational inequality: (y - Py).(xi - Py) = {}", dot(&r, &xi_p)));
    }
    let lhs = dist(&py, &xi).powi(2);
    let rhs = dist(y, &xi).powi(2) - dist(&py, y).powi(2);
    if lhs > rhs + PROP_TOL * rhs.abs().max(1.0) {
        return Err(format!("pythagoras: |Py - xi|^2 = {lhs} > {rhs}"));
    }
    Ok(())
}

pub fn shifted_power_objective(m: usize) -> impl Strategy<Value = Objective> {
    (prop::collection::vec(-2.0..2.0f64, m), prop::sample::select(vec![2u32, 4, 6]))
        .prop_map(|(c, p)| Objective::shifted_power(c, p).unwrap())
}

/// `R diag(a) R^T` plus a random linear term; eigenvalues in `[lo, hi]`.
pub fn quadratic_from(m: usize, seed_mat: &[f64], eig: &[f64], linear: Vec<f64>, r: f64) -> Objective {
    // Gram-Schmidt on the seed columns gives an orthonormal R
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for k in 0..m {
        let mut v: Vec<f64> = (0..m).map(|i| seed_mat[k * m + i]).collect();
        v[k] += 2.0;
        for c in &cols {
            let d = dot(&v, c);
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
        }
        let n = norm(&v);
        cols.push(v.iter().map(|a| a / n).collect());
    }
    let q: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| (0..m).map(|k| cols[k][i] * eig[k] * cols[k][j]).sum())
                .collect()
        })
        .collect();
    Objective::quadratic(q, linear, r).unwrap()
}

pub fn quadratic_objective(m: usize) -> impl Strategy<Value = Objective> {
    (
        prop::collection::vec(-0.5..0.5f64, m * m),
        prop::collection::vec(0.2..3.0f64, m),
        prop::collection::vec(-2.0..2.0f64, m),
        -1.0..1.0f64,
    )
        .prop_map(move |(s, e, q, r)| quadratic_from(m, &s, &e, q, r))
}

pub fn sum_objective(m: usize) -> impl Strategy<Value = Objective> {
    prop::collection::vec(
        prop_oneof![shifted_power_objective(m), quadratic_objective(m)],
        1..4,
    )
    .prop_map(|terms| Objective::sum(terms).unwrap())
}

/// Brute-force minimizer of `sum_i f_i` over the grid points of `[lo, hi]`
/// lying in every set.
pub fn grid_argmin_2d(fs: &[Objective], sets: &[ConvexSet], lo: [f64; 2], hi: [f64; 2], res: f64) -> Option<[f64; 2]> {
    let nx = ((hi[0] - lo[0]) / res).round() as usize;
    let ny = ((hi[1] - lo[1]) / res).round() as usize;
    let mut best: Option<([f64; 2], f64)> = None;
    for a in 0..=nx {
        let x = lo[0] + a as f64 * res;
        for b in 0..=ny {
            let p = [x, lo[1] + b as f64 * res];
            if !sets.iter().all(|h| h.contains(&p, 0.0)) {
                continue;
            }
            let v: f64 = fs.iter().map(|f| f.eval(&p).unwrap()).sum();
            if best.is_none_or(|(_, bv)| v < bv) {
                best = Some((p, v));
            }
        }
    }
    best.map(|(p, _)| p)
}

/// Nearest grid point of `[lo, hi]` to `y` among those lying in every set.
pub fn grid_projection_2d(y: &[f64], sets: &[ConvexSet], lo: [f64; 2], hi: [f64; 2], res: f64) -> Option<[f64; 2]> {
    let target = Objective::shifted_power(y.iter().map(|v| -v).collect(), 2).unwrap();
    grid_argmin_2d(&[target], sets, lo, hi, res)
}

/// Three agents in the plane with random positive definite quadratics and
/// boxes around a shared point, on a static complete graph.
pub struct SmallInstance {
    pub objectives: Vec<Objective>,
    pub sets: Vec<ConvexSet>,
    pub common: [f64; 2],
    /// Box containing the intersection of all sets.
    pub bounds: ([f64; 2], [f64; 2]),
}

pub fn small_instance(rng: &mut impl Rng) -> SmallInstance {
    let common = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let mut lo_all = [f64::NEG_INFINITY; 2];
    let mut hi_all = [f64::INFINITY; 2];
    let mut objectives = Vec::new();
    let mut sets = Vec::new();
    for _ in 0..3 {
        let seed: Vec<f64> = (0..4).map(|_| rng.random_range(-0.5..0.5)).collect();
        let eig: Vec<f64> = (0..2).map(|_| rng.random_range(0.5..1.5)).collect();
        let q: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
        objectives.push(quadratic_from(2, &seed, &eig, q, 0.0));
        let lo: Vec<f64> = common.iter().map(|c| c - rng.random_range(0.3..1.5)).collect();
        let hi: Vec<f64> = common.iter().map(|c| c + rng.random_range(0.3..1.5)).collect();
        for l in 0..2 {
            lo_all[l] = lo_all[l].max(lo[l]);
            hi_all[l] = hi_all[l].min(hi[l]);
        }
        sets.push(ConvexSet::boxed(lo, hi).unwrap());
    }
    SmallInstance {
        objectives,
        sets,
        common,
        bounds: (lo_all, hi_all),
    }
}

impl SmallInstance {
    pub fn ct_scenario(&self, steps: u64) -> Scenario {
        let g = WeightedDigraph::undirected(3, &[(0, 1), (1, 2), (0, 2)], 1.0).unwrap();
        let schedule = GraphSchedule::fixed(g, 1.0).unwrap();
        Scenario {
            name: Some("small".into()),
            problem: Problem::new(self.objectives.clone(), self.sets.clone(), schedule).unwrap(),
            step: 0.1,
            steps,
            stride: (steps / 1000).max(1),
            seed: 1,
            q0: 1.0,
            initial: InitialStates::RandomBox {
                lo: vec![-3.0, -3.0],
                hi: vec![3.0, 3.0],
                project: false,
            },
            dt: None,
            feasible_point: self.common.to_vec(),
            reference: None,
        }
    }
}

/// Random scenario satisfying every assumption, with initial states of norm
/// up to `max_norm`. Continuous-time scenarios use quadratic objectives;
/// discrete-time ones also draw quartic and sextic terms.
pub fn random_scenario(rng: &mut impl Rng, family: Family, max_norm: f64, steps: u64) -> Scenario {
    let n = rng.random_range(3..=8);
    let m = 2;
    let p: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut objectives = Vec::new();
    let mut sets = Vec::new();
    for _ in 0..n {
        let shift: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let exponent = match family {
            Family::Ct => 2,
            Family::Dt => [2, 4, 6][rng.random_range(0..3)],
        };
        objectives.push(if rng.random_bool(0.5) {
            Objective::shifted_power(shift, exponent).unwrap()
        } else {
            let seed: Vec<f64> = (0..m * m).map(|_| rng.random_range(-0.5..0.5)).collect();
            let eig: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..2.0)).collect();
            quadratic_from(m, &seed, &eig, shift, 0.0)
        });
        let margin = rng.random_range(0.1..1.0);
        let set = match rng.random_range(0..3) {
            0 => {
                let off: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
                ball_at(p.clone(), off, margin).set
            }
            1 => {
                let below: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..2.0)).collect();
                let above: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..2.0)).collect();
                let open: Vec<u8> = (0..m).map(|_| rng.random_range(0..3)).collect();
                box_at(p.clone(), below, above, open).set
            }
            _ => {
                let a: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
                let a = if norm(&a) < 0.1 { vec![1.0, 0.0] } else { a };
                halfspace_at(p.clone(), a, margin).set
            }
        };
        sets.push(set);
    }

    // ring edges dealt round-robin into two or three epochs
    let k = rng.random_range(2..=3);
    let ring: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    let epoch_len = 1.0;
    let epochs: Vec<Epoch> = (0..k)
        .map(|e| {
            let edges: Vec<(usize, usize)> = ring.iter().enumerate().filter(|(i, _)| i % k == e).map(|(_, &x)| x).collect();
            let graph = match family {
                Family::Ct => {
                    let w = rng.random_range(0.2..1.0);
                    WeightedDigraph::undirected(n, &edges, w).unwrap()
                }
                Family::Dt => metropolis_weights(n, &edges).unwrap(),
            };
            let unit = if family == Family::Ct { 1.0 } else { 10.0 };
            Epoch {
                start: e as f64 * epoch_len * unit,
                graph,
            }
        })
        .collect();
    let unit = if family == Family::Ct { 1.0 } else { 10.0 };
    let period = k as f64 * epoch_len * unit;
    let dwell = (family == Family::Ct).then_some(epoch_len);
    let schedule = GraphSchedule::new(family, epochs, period, dwell, period + epoch_len * unit).unwrap();

    let states: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let dir: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let len = rng.random_range(0.0..=max_norm);
            let d = norm(&dir).max(1e-9);
            dir.iter().map(|c| c * len / d).collect()
        })
        .collect();
    let dt = (family == Family::Dt).then(|| {
        if rng.random_bool(0.5) {
            DtParams::mixed(0.1, n)
        } else {
            DtParams::projected(0.1, n)
        }
    });
    let project = dt.as_ref().is_some_and(|d| d.gamma[0] == 1.0);
    Scenario {
        name: None,
        problem: Problem::new(objectives, sets, schedule).unwrap(),
        step: 0.1,
        steps,
        stride: (steps / 200).max(1),
        seed: rng.random(),
        q0: 1.0,
        initial: InitialStates::Explicit { states, project },
        dt,
        feasible_point: p,
        reference: None,
    }
}

fn runner(cases: u32) -> proptest::test_runner::TestRunner {
    use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

/// The projection inequalities on `cases` random cases per set variant.
pub fn projection_suite(cases: u32) -> Result<String, String> {
    fn run<S: Strategy<Value = SetCase>>(
        name: &str,
        cases: u32,
        make: impl Fn(usize) -> S + Clone + 'static,
    ) -> Result<(), String> {
        runner(cases)
            .run(&projection_cases(make), |(case, y, z, raw)| {
                check_projection(&case, &y, &z, &raw).map_err(TestCaseError::fail)
            })
            .map_err(|e| format!("{name}: {e}"))
    }
    run("ball", cases, ball_case)?;
    run("box", cases, box_case)?;
    run("halfspace", cases, halfspace_case)?;
    run("intersection", cases, intersection_case)?;
    Ok(format!("{cases} cases each for ball, box, halfspace, intersection"))
}

/// Analytic against central-difference gradients at `points` random points
/// per objective variant, returning the worst relative error seen.
pub fn gradient_suite(points: u32, h: f64, tol: f64) -> Result<f64, String> {
    use consensus_opt::objective::grad_check;
    let worst = std::cell::Cell::new(0.0f64);
    let variants: Vec<(&str, BoxedStrategy<Objective>)> = vec![
        ("shifted_power", dims().prop_flat_map(shifted_power_objective).boxed()),
        ("quadratic", dims().prop_flat_map(quadratic_objective).boxed()),
        ("sum", dims().prop_flat_map(sum_objective).boxed()),
    ];
    for (name, strat) in variants {
        let cases = strat.prop_flat_map(|f| {
            let m = f.dim();
            (Just(f), prop::collection::vec(-3.0..3.0f64, m))
        });
        runner(points)
            .run(&cases, |(f, x)| {
                let e = grad_check(&f, &x, h).map_err(|e| TestCaseError::fail(e.to_string()))?;
                worst.set(worst.get().max(e));
                if e <= tol {
                    Ok(())
                } else {
                    Err(TestCaseError::fail(format!("relative error {e:e} at {x:?} for {f:?}")))
                }
            })
            .map_err(|e| format!("{name}: {e}"))?;
    }
    Ok(worst.get())
}

/// Outcome of the small-instance comparison.
#[derive(Debug, Clone)]
pub struct SmallComparison {
    pub oracle: Vec<f64>,
    pub grid: [f64; 2],
    pub distributed_mean: Vec<f64>,
    pub consensus_err: f64,
    pub trajectory: consensus_opt::Trajectory,
}

/// Step bound `1 / L` for the team objective of quadratic agents.
pub fn quadratic_team_step(fs: &[Objective]) -> f64 {
    let l: f64 = fs
        .iter()
        .map(|f| match f {
            // Frobenius norm bounds the largest eigenvalue
            Objective::Quadratic { matrix, .. } => matrix.iter().flatten().map(|v| v * v).sum::<f64>().sqrt(),
            _ => panic!("quadratic objectives only"),
        })
        .sum();
    1.0 / l
}

pub fn compare_small_instance(seed: u64, steps: u64) -> Result<SmallComparison, String> {
    use consensus_opt::metrics::{centralized_oracle, StepRule};
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let inst = small_instance(&mut rng);
    let oracle = centralized_oracle(
        &inst.objectives,
        &inst.sets,
        &inst.common,
        StepRule::Constant(quadratic_team_step(&inst.objectives)),
        20_000,
    )
    .map_err(|e| e.to_string())?;
    let (lo, hi) = inst.bounds;
    let grid = grid_argmin_2d(&inst.objectives, &inst.sets, lo, hi, 1e-3).ok_or("empty grid")?;
    let scenario = inst.ct_scenario(steps);
    scenario.validate().map_err(|e| e.to_string())?;
    let trajectory = consensus_opt::run::simulate(&scenario).map_err(|e| e.to_string())?;
    let last = trajectory.last().ok_or("no samples")?;
    let distributed_mean = consensus_opt::linalg::mean(last.agents.iter().map(|a| a.x.as_slice()), 2);
    let consensus_err = last
        .agents
        .iter()
        .map(|a| dist(&a.x, &distributed_mean))
        .fold(0.0, f64::max);
    Ok(SmallComparison {
        oracle,
        grid,
        distributed_mean,
        consensus_err,
        trajectory,
    })
}
