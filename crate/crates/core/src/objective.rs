//! Differentiable convex local objectives with analytic gradients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dim, dot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// `sum_l (x_l + shift_l)^p / p` with `p` even.
    ShiftedPower { shift: Vec<f64>, exponent: u32 },
    /// `x^T Q x / 2 + q^T x + r` with `Q` symmetric positive definite.
    Quadratic {
        #[serde(rename = "Q")]
        matrix: Vec<Vec<f64>>,
        #[serde(rename = "q")]
        linear: Vec<f64>,
        #[serde(rename = "r", default)]
        constant: f64,
    },
    Sum { terms: Vec<Objective> },
}

impl Objective {
    pub fn shifted_power(shift: Vec<f64>, exponent: u32) -> Result<Self> {
        let f = Objective::ShiftedPower { shift, exponent };
        f.validate()?;
        Ok(f)
    }

    pub fn quadratic(matrix: Vec<Vec<f64>>, linear: Vec<f64>, constant: f64) -> Result<Self> {
        let f = Objective::Quadratic {
            matrix,
            linear,
            constant,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn sum(terms: Vec<Objective>) -> Result<Self> {
        let f = Objective::Sum { terms };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Objective::ShiftedPower { shift, exponent } => {
                if shift.is_empty() || shift.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidObjective("shift must be a finite nonempty vector".into()));
                }
                if *exponent < 2 || exponent % 2 != 0 {
                    return Err(Error::InvalidObjective(format!(
                        "exponent must be even and at least 2, got {exponent}"
                    )));
                }
            }
            Objective::Quadratic {
                matrix,
                linear,
                constant,
            } => {
                let m = linear.len();
                if m == 0 || matrix.len() != m || matrix.iter().any(|r| r.len() != m) {
                    return Err(Error::InvalidObjective(format!(
                        "quadratic needs an {m}x{m} matrix matching the linear term"
                    )));
                }
                if matrix.iter().flatten().chain(linear).any(|v| !v.is_finite()) || !constant.is_finite() {
                    return Err(Error::InvalidObjective("quadratic data must be finite".into()));
                }
                for (i, row) in matrix.iter().enumerate() {
                    for (j, &a) in row.iter().enumerate().take(i) {
                        let b = matrix[j][i];
                        if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                            return Err(Error::InvalidObjective(format!(
                                "matrix is not symmetric at ({i}, {j})"
                            )));
                        }
                    }
                }
                if dense(matrix).cholesky().is_none() {
                    return Err(Error::InvalidObjective(
                        "matrix must be positive definite for a bounded minimizer set".into(),
                    ));
                }
            }
            Objective::Sum { terms } => {
                let first = terms
                    .first()
                    .ok_or_else(|| Error::InvalidObjective("sum has no terms".into()))?;
                let d = first.dim();
                for t in terms {
                    t.validate()?;
                    check_dim(d, t.dim())?;
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Objective::ShiftedPower { shift, .. } => shift.len(),
            Objective::Quadratic { linear, .. } => linear.len(),
            Objective::Sum { terms } => terms.first().map_or(0, Objective::dim),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            Objective::ShiftedPower { shift, exponent } => {
                let p = *exponent as i32;
                x.iter().zip(shift).map(|(xi, c)| (xi + c).powi(p)).sum::<f64>() / p as f64
            }
            Objective::Quadratic {
                matrix,
                linear,
                constant,
            } => {
                let quad: f64 = matrix.iter().zip(x).map(|(row, xi)| xi * dot(row, x)).sum();
                0.5 * quad + dot(linear, x) + constant
            }
            Objective::Sum { terms } => terms.iter().map(|t| t.eval_unchecked(x)).sum(),
        }
    }

    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; x.len()];
        self.grad_into(x, &mut g)?;
        Ok(g)
    }

    /// Writes the gradient at `x` into `out`.
    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        check_dim(x.len(), out.len())?;
        out.iter_mut().for_each(|o| *o = 0.0);
        self.accumulate_grad(x, out);
        Ok(())
    }

    fn accumulate_grad(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Objective::ShiftedPower { shift, exponent } => {
                let p = *exponent as i32 - 1;
                for ((o, xi), c) in out.iter_mut().zip(x).zip(shift) {
                    *o += (xi + c).powi(p);
                }
            }
            Objective::Quadratic { matrix, linear, .. } => {
                for ((o, row), q) in out.iter_mut().zip(matrix).zip(linear) {
                    *o += dot(row, x) + q;
                }
            }
            Objective::Sum { terms } => terms.iter().for_each(|t| t.accumulate_grad(x, out)),
        }
    }

    /// Every variant is coercive with a nonempty bounded minimizer set once
    /// it passes [`Objective::validate`]; a sum of such functions is too.
    pub fn has_bounded_minimizers(&self) -> bool {
        self.validate().is_ok()
    }

    /// A ball certified to contain the minimizer set. Sums are supported
    /// when every term is quadratic (`p = 2` powers or explicit quadratics).
    pub fn minimizer_set_bound(&self) -> Result<BoundingBall> {
        let center = match self {
            Objective::ShiftedPower { shift, .. } => shift.iter().map(|c| -c).collect(),
            _ => {
                let (q, lin) = self.quadratic_form().ok_or_else(|| {
                    Error::Unsupported("minimizer bound for a sum with non-quadratic terms".into())
                })?;
                let chol = q
                    .cholesky()
                    .ok_or_else(|| Error::InvalidObjective("quadratic form is not positive definite".into()))?;
                let x = chol.solve(&(-lin));
                x.iter().copied().collect()
            }
        };
        // every supported variant has a single minimizer
        Ok(BoundingBall { center, radius: 0.0 })
    }

    /// `(Q, q)` such that the function is `x^T Q x / 2 + q^T x + const`.
    fn quadratic_form(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        match self {
            Objective::ShiftedPower { shift, exponent: 2 } => Some((
                DMatrix::identity(shift.len(), shift.len()),
                DVector::from_column_slice(shift),
            )),
            Objective::ShiftedPower { .. } => None,
            Objective::Quadratic { matrix, linear, .. } => {
                Some((dense(matrix), DVector::from_column_slice(linear)))
            }
            Objective::Sum { terms } => {
                let m = self.dim();
                terms.iter().try_fold(
                    (DMatrix::zeros(m, m), DVector::zeros(m)),
                    |(q, l), t| t.quadratic_form().map(|(tq, tl)| (q + tq, l + tl)),
                )
            }
        }
    }
}

/// Closed ball `{ x : |x - center| <= radius }`; `radius` may be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBall {
    pub center: Vec<f64>,
    pub radius: f64,
}

fn dense(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let m = rows.len();
    DMatrix::from_fn(m, m, |i, j| rows[i][j])
}

/// Central-difference check of the analytic gradient. Returns the largest
/// per-coordinate error `|analytic - numeric| / max(|analytic|, |numeric|, 1)`.
pub fn grad_check(f: &Objective, x: &[f64], h: f64) -> Result<f64> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::Precondition(format!("finite-difference step must be positive, got {h}")));
    }
    let g = f.grad(x)?;
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for (l, gl) in g.iter().enumerate() {
        probe[l] = x[l] + h;
        let up = f.eval(&probe)?;
        probe[l] = x[l] - h;
        let down = f.eval(&probe)?;
        probe[l] = x[l];
        let numeric = (up - down) / (2.0 * h);
        let scale = gl.abs().max(numeric.abs()).max(1.0);
        worst = worst.max((gl - numeric).abs() / scale);
    }
    Ok(worst)
}

/// The eight objective families used in the 24-agent experiment, for
/// `j` in `1..=3`. Families 1–4 are quadratic, 5–8 quartic; the shift
/// `0.9 + 0.1 j` is applied to the first coordinate (families 2, 4, 6, 8)
/// and/or the second coordinate (families 3, 4, 7, 8).
pub fn experiment_objective(family: usize, j: usize) -> Objective {
    assert!((1..=8).contains(&family) && (1..=3).contains(&j));
    let c = 0.9 + 0.1 * j as f64;
    let local = (family - 1) % 4;
    let shift = vec![
        if local == 1 || local == 3 { c } else { 0.0 },
        if local == 2 || local == 3 { c } else { 0.0 },
    ];
    let exponent = if family <= 4 { 2 } else { 4 };
    Objective::ShiftedPower { shift, exponent }
}
