//! Control-affine models `x' = f(x, t) + g(x, t) u` and their derivative oracles.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};

use crate::ad::Jet;
use crate::error::{Error, Result};

/// Central-difference step for oracles without an analytic form.
pub const FD_STEP: f64 = 1e-6;

/// A control-affine system. Time is always explicit so that time-varying
/// barriers compose with autonomous models.
///
/// Implementations are immutable and shared across threads.
pub trait SystemModel: Debug + Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    fn drift(&self, x: &DVector<f64>, t: f64) -> DVector<f64>;
    fn actuation(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64>;

    /// The drift evaluated on Taylor jets. Used to expand the barrier recursion
    /// along the unactuated flow.
    fn drift_jet(&self, x: &[Jet], t: &Jet) -> Vec<Jet>;

    /// Index of the heading coordinate, if the model has one.
    fn heading_index(&self) -> Option<usize> {
        None
    }

    fn state_names(&self) -> Vec<String> {
        (0..self.state_dim()).map(|i| format!("x{i}")).collect()
    }

    fn input_names(&self) -> Vec<String> {
        (0..self.input_dim())
            .map(|i| format!("u{}", i + 1))
            .collect()
    }

    /// `df/dx`, n x n.
    fn drift_jacobian(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64> {
        let n = self.state_dim();
        let mut jac = DMatrix::zeros(n, n);
        for k in 0..n {
            let (xp, xm) = perturb(x, k, FD_STEP);
            let col = (self.drift(&xp, t) - self.drift(&xm, t)) / (2.0 * FD_STEP);
            jac.set_column(k, &col);
        }
        jac
    }

    /// `dg/dx_k` for every state coordinate `k`; each entry is n x q.
    fn actuation_jacobian(&self, x: &DVector<f64>, t: f64) -> Vec<DMatrix<f64>> {
        (0..self.state_dim())
            .map(|k| {
                let (xp, xm) = perturb(x, k, FD_STEP);
                (self.actuation(&xp, t) - self.actuation(&xm, t)) / (2.0 * FD_STEP)
            })
            .collect()
    }

    fn drift_time_partial(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        (self.drift(x, t + FD_STEP) - self.drift(x, t - FD_STEP)) / (2.0 * FD_STEP)
    }

    fn actuation_time_partial(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64> {
        (self.actuation(x, t + FD_STEP) - self.actuation(x, t - FD_STEP)) / (2.0 * FD_STEP)
    }
}

fn perturb(x: &DVector<f64>, k: usize, h: f64) -> (DVector<f64>, DVector<f64>) {
    let mut xp = x.clone();
    let mut xm = x.clone();
    xp[k] += h;
    xm[k] -= h;
    (xp, xm)
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}

/// `F(x, u, t) = f(x, t) + g(x, t) u`.
pub fn eval_field(
    model: &dyn SystemModel,
    state: &DVector<f64>,
    input: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    check_dim("state", model.state_dim(), state.len())?;
    check_dim("input", model.input_dim(), input.len())?;
    Ok(model.drift(state, t) + model.actuation(state, t) * input)
}

/// Componentwise input bounds `lower <= u <= upper`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputBox {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl InputBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim("input box upper", lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::InvalidArgument("input box has no components".into()));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::InvalidArgument(format!(
                    "input box component {i}: [{lo}, {hi}] is not a finite interval"
                )));
            }
        }
        Ok(InputBox {
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
        })
    }

    pub fn symmetric(bound: f64, dim: usize) -> Result<Self> {
        Self::new(vec![-bound; dim], vec![bound; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> bool {
        u.len() == self.dim()
            && u.iter()
                .enumerate()
                .all(|(i, ui)| *ui >= self.lower[i] - tol && *ui <= self.upper[i] + tol)
    }

    pub fn clip(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            u.iter()
                .enumerate()
                .map(|(i, ui)| ui.clamp(self.lower[i], self.upper[i])),
        )
    }

    /// All `2^q` corners, in binary counting order over the components.
    /// The part of the box within `radius` (per coordinate) of `center`.
    pub fn around(&self, center: &DVector<f64>, radius: f64) -> InputBox {
        let c = self.clip(center);
        InputBox {
            lower: DVector::from_fn(c.len(), |i, _| (c[i] - radius).max(self.lower[i])),
            upper: DVector::from_fn(c.len(), |i, _| (c[i] + radius).min(self.upper[i])),
        }
    }

    pub fn vertices(&self) -> Vec<DVector<f64>> {
        let q = self.dim();
        (0..1usize << q)
            .map(|mask| {
                DVector::from_iterator(
                    q,
                    (0..q).map(|i| {
                        if mask >> i & 1 == 1 {
                            self.upper[i]
                        } else {
                            self.lower[i]
                        }
                    }),
                )
            })
            .collect()
    }
}

/// Planar unicycle with state `(x, y, theta, v)` and input
/// `(angular velocity, linear acceleration)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Unicycle;

pub fn make_unicycle() -> Unicycle {
    Unicycle
}

impl SystemModel for Unicycle {
    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn drift(&self, x: &DVector<f64>, _t: f64) -> DVector<f64> {
        let (s, c) = x[2].sin_cos();
        DVector::from_vec(vec![x[3] * c, x[3] * s, 0.0, 0.0])
    }

    fn actuation(&self, _x: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0])
    }

    fn drift_jet(&self, x: &[Jet], _t: &Jet) -> Vec<Jet> {
        let (s, c) = x[2].sin_cos();
        let zero = x[0].lift(0.0);
        vec![x[3].mul(&c), x[3].mul(&s), zero.clone(), zero]
    }

    fn heading_index(&self) -> Option<usize> {
        Some(2)
    }

    fn state_names(&self) -> Vec<String> {
        ["x", "y", "theta", "v"].map(String::from).to_vec()
    }

    fn input_names(&self) -> Vec<String> {
        ["turn_rate", "accel"].map(String::from).to_vec()
    }

    fn drift_jacobian(&self, x: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        let (s, c) = x[2].sin_cos();
        let v = x[3];
        let mut jac = DMatrix::zeros(4, 4);
        jac[(0, 2)] = -v * s;
        jac[(0, 3)] = c;
        jac[(1, 2)] = v * c;
        jac[(1, 3)] = s;
        jac
    }

    fn actuation_jacobian(&self, _x: &DVector<f64>, _t: f64) -> Vec<DMatrix<f64>> {
        vec![DMatrix::zeros(4, 2); 4]
    }

    fn drift_time_partial(&self, _x: &DVector<f64>, _t: f64) -> DVector<f64> {
        DVector::zeros(4)
    }

    fn actuation_time_partial(&self, _x: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        DMatrix::zeros(4, 2)
    }
}
