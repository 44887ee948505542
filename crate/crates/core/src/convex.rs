//! Closed convex sets and their Euclidean projections.
//!
//! Balls, boxes and halfspaces have closed-form projectors. Intersections
//! are projected with Dykstra's method, which converges to the true nearest
//! point of the intersection rather than an arbitrary feasible point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dim, dist, dot, norm};

pub const DEFAULT_DYKSTRA_TOL: f64 = 1e-10;
pub const DEFAULT_DYKSTRA_MAX_ITER: usize = 10_000;

/// Membership slack for closed-form projections, relative to the set's scale.
/// Rounding in `c + r (y - c) / |y - c|` can land a few ulps outside a ball.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

fn default_tol() -> f64 {
    DEFAULT_DYKSTRA_TOL
}

fn default_max_iter() -> usize {
    DEFAULT_DYKSTRA_MAX_ITER
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexSet {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    /// Per-coordinate bounds; infinite bounds leave that side open.
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// `{ x : normal . x <= offset }`.
    Halfspace {
        normal: Vec<f64>,
        offset: f64,
    },
    Intersection {
        members: Vec<ConvexSet>,
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
    },
}

impl ConvexSet {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        let s = ConvexSet::Ball { center, radius };
        s.validate()?;
        Ok(s)
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let s = ConvexSet::Box { lo, hi };
        s.validate()?;
        Ok(s)
    }

    pub fn halfspace(normal: Vec<f64>, offset: f64) -> Result<Self> {
        let s = ConvexSet::Halfspace { normal, offset };
        s.validate()?;
        Ok(s)
    }

    pub fn intersection(members: Vec<ConvexSet>) -> Result<Self> {
        let s = ConvexSet::Intersection {
            members,
            tol: DEFAULT_DYKSTRA_TOL,
            max_iter: DEFAULT_DYKSTRA_MAX_ITER,
        };
        s.validate()?;
        Ok(s)
    }

    /// The whole space, as an unbounded box.
    pub fn whole_space(dim: usize) -> Self {
        ConvexSet::Box {
            lo: vec![f64::NEG_INFINITY; dim],
            hi: vec![f64::INFINITY; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ConvexSet::Ball { center, radius } => {
                if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidSet("ball center must be a finite nonempty vector".into()));
                }
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidSet(format!("ball radius must be positive, got {radius}")));
                }
            }
            ConvexSet::Box { lo, hi } => {
                if lo.is_empty() {
                    return Err(Error::InvalidSet("box has no coordinates".into()));
                }
                check_dim(lo.len(), hi.len())?;
                for (k, (l, h)) in lo.iter().zip(hi).enumerate() {
                    if l.is_nan() || h.is_nan() || l > h || *l == f64::INFINITY || *h == f64::NEG_INFINITY {
                        return Err(Error::InvalidSet(format!(
                            "box coordinate {k} has bounds [{l}, {h}]"
                        )));
                    }
                }
            }
            ConvexSet::Halfspace { normal, offset } => {
                if normal.is_empty() || normal.iter().any(|a| !a.is_finite()) || !offset.is_finite() {
                    return Err(Error::InvalidSet("halfspace must have finite data".into()));
                }
                if norm(normal) == 0.0 {
                    return Err(Error::InvalidSet("halfspace normal is zero".into()));
                }
            }
            ConvexSet::Intersection { members, tol, max_iter } => {
                let first = members
                    .first()
                    .ok_or_else(|| Error::InvalidSet("intersection has no members".into()))?;
                let d = first.dim();
                for m in members {
                    m.validate()?;
                    check_dim(d, m.dim())?;
                }
                if tol.is_nan() || *tol <= 0.0 || *max_iter == 0 {
                    return Err(Error::InvalidSet("intersection needs tol > 0 and max_iter > 0".into()));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Ball { center, .. } => center.len(),
            ConvexSet::Box { lo, .. } => lo.len(),
            ConvexSet::Halfspace { normal, .. } => normal.len(),
            ConvexSet::Intersection { members, .. } => members.first().map_or(0, ConvexSet::dim),
        }
    }

    pub fn has_exact_projector(&self) -> bool {
        !matches!(self, ConvexSet::Intersection { .. })
    }

    /// Nearest point of the set to `y`, written into `out`.
    pub fn project_into(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), y.len())?;
        check_dim(y.len(), out.len())?;
        match self {
            ConvexSet::Ball { center, radius } => {
                let r = dist(y, center);
                if r <= *radius {
                    out.copy_from_slice(y);
                } else {
                    let scale = radius / r;
                    for ((o, yi), ci) in out.iter_mut().zip(y).zip(center) {
                        *o = ci + (yi - ci) * scale;
                    }
                }
            }
            ConvexSet::Box { lo, hi } => {
                for (((o, yi), l), h) in out.iter_mut().zip(y).zip(lo).zip(hi) {
                    *o = yi.max(*l).min(*h);
                }
            }
            ConvexSet::Halfspace { normal, offset } => {
                let excess = dot(normal, y) - offset;
                if excess <= 0.0 {
                    out.copy_from_slice(y);
                } else {
                    let step = excess / dot(normal, normal);
                    for ((o, yi), a) in out.iter_mut().zip(y).zip(normal) {
                        *o = yi - step * a;
                    }
                }
            }
            ConvexSet::Intersection { members, tol, max_iter } => {
                let p = dykstra(members, y, *tol, *max_iter)?;
                out.copy_from_slice(&p);
            }
        }
        Ok(())
    }

    pub fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; y.len()];
        self.project_into(y, &mut out)?;
        Ok(out)
    }

    /// `|y - P(y)|`.
    pub fn distance(&self, y: &[f64]) -> Result<f64> {
        Ok(dist(y, &self.project(y)?))
    }

    /// Membership test with slack `tol` scaled by the set's magnitude.
    /// Intersections require membership of every member.
    pub fn contains(&self, y: &[f64], tol: f64) -> bool {
        if y.len() != self.dim() {
            return false;
        }
        match self {
            ConvexSet::Ball { center, radius } => dist(y, center) <= radius * (1.0 + tol) + tol,
            ConvexSet::Box { lo, hi } => y.iter().zip(lo).zip(hi).all(|((v, l), h)| {
                // infinite sides never bind, and 0 * inf would be NaN
                (*l == f64::NEG_INFINITY || *v >= l - tol * l.abs().max(1.0))
                    && (*h == f64::INFINITY || *v <= h + tol * h.abs().max(1.0))
            }),
            ConvexSet::Halfspace { normal, offset } => {
                let scale = norm(normal) * norm(y).max(1.0) + offset.abs();
                dot(normal, y) - offset <= tol * scale
            }
            ConvexSet::Intersection { members, .. } => members.iter().all(|m| m.contains(y, tol)),
        }
    }

    /// Flattens nested intersections into their exact-projector leaves.
    pub fn leaves(&self) -> Vec<&ConvexSet> {
        match self {
            ConvexSet::Intersection { members, .. } => members.iter().flat_map(ConvexSet::leaves).collect(),
            other => vec![other],
        }
    }
}

/// Dykstra's alternating projection onto `sets[0] ∩ sets[1] ∩ ...`.
///
/// Stops once a full sweep changes the correction vectors by at most `tol`
/// in total and the iterate lies within `tol` of every member. The iterate
/// alone may stand still for a sweep while the corrections still move, so
/// it is not a safe stopping signal by itself.
pub fn dykstra(sets: &[ConvexSet], y: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let first = sets
        .first()
        .ok_or_else(|| Error::InvalidSet("dykstra needs at least one set".into()))?;
    let m = y.len();
    check_dim(first.dim(), m)?;
    if sets.len() == 1 {
        return first.project(y);
    }
    let mut x = y.to_vec();
    let mut corrections = vec![vec![0.0; m]; sets.len()];
    let mut shifted = vec![0.0; m];
    let mut next = vec![0.0; m];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let mut change_sq = 0.0;
        for (set, p) in sets.iter().zip(corrections.iter_mut()) {
            for ((s, xi), pi) in shifted.iter_mut().zip(&x).zip(p.iter()) {
                *s = xi + pi;
            }
            set.project_into(&shifted, &mut next)?;
            for ((pi, s), n) in p.iter_mut().zip(&shifted).zip(&next) {
                let updated = s - n;
                change_sq += (updated - *pi) * (updated - *pi);
                *pi = updated;
            }
            x.copy_from_slice(&next);
        }
        let mut worst = 0.0f64;
        for set in sets {
            set.project_into(&x, &mut next)?;
            worst = worst.max(dist(&x, &next));
        }
        residual = change_sq.sqrt().max(worst);
        if residual <= tol {
            return Ok(x);
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual,
        last: x,
    })
}
