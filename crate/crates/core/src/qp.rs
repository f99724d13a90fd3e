//! Small dense convex QP: `min 1/2 z'Hz + c'z + k` subject to `A z >= b`.
//!
//! Dual active-set method in the style of Goldfarb and Idnani. Each iteration
//! re-solves the KKT system of the current working set from scratch, which is
//! cheap at the sizes used here and avoids factor-update bookkeeping.
//! Positive semidefinite but singular Hessians are handled by an outer proximal
//! loop.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::check_dim;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
    /// One constraint per row: `a[i] . z >= b[i]`.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Result<Self> {
        let d = linear.len();
        check_dim("hessian rows", d, hessian.nrows())?;
        check_dim("hessian columns", d, hessian.ncols())?;
        check_dim("constraint columns", d, a.ncols())?;
        check_dim("constraint right-hand side", a.nrows(), b.len())?;
        Ok(QpProblem {
            hessian,
            linear,
            constant: 0.0,
            a,
            b,
        })
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn constraint_count(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z) + self.constant
    }

    /// `A z - b`; nonnegative entries are satisfied rows.
    pub fn slacks(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.a * z - &self.b
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

/// `y >= 0` with `A'y = 0` and `b'y > 0`, which no `z` can satisfy.
#[derive(Clone, Debug, PartialEq)]
pub struct InfeasibilityCertificate {
    pub y: DVector<f64>,
    /// `||A'y||_inf / ||y||_inf`
    pub residual: f64,
    /// `b'y / ||y||_inf`
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub status: QpStatus,
    pub z: DVector<f64>,
    pub multipliers: DVector<f64>,
    pub objective: f64,
    pub kkt: KktResiduals,
    pub certificate: Option<InfeasibilityCertificate>,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpOptions {
    pub max_iterations: usize,
    pub feasibility_tol: f64,
    pub max_proximal_rounds: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            max_iterations: 500,
            feasibility_tol: 1e-11,
            max_proximal_rounds: 500,
        }
    }
}

pub fn kkt_residuals(problem: &QpProblem, z: &DVector<f64>, lambda: &DVector<f64>) -> KktResiduals {
    let grad = &problem.hessian * z + &problem.linear - problem.a.transpose() * lambda;
    let slack = problem.slacks(z);
    KktResiduals {
        stationarity: grad.amax(),
        primal: slack.iter().map(|s| (-s).max(0.0)).fold(0.0, f64::max),
        complementarity: slack
            .iter()
            .zip(lambda.iter())
            .map(|(s, l)| (s * l).abs())
            .fold(0.0, f64::max),
    }
}

pub fn solve_qp(problem: &QpProblem) -> Result<QpSolution> {
    solve_qp_with(problem, &QpOptions::default())
}

pub fn solve_qp_with(problem: &QpProblem, opts: &QpOptions) -> Result<QpSolution> {
    let d = problem.dim();
    check_dim("hessian rows", d, problem.hessian.nrows())?;
    check_dim("constraint columns", d, problem.a.ncols())?;
    check_dim(
        "constraint right-hand side",
        problem.a.nrows(),
        problem.b.len(),
    )?;
    if d == 0 {
        return Err(Error::InvalidArgument(
            "QP has no decision variables".into(),
        ));
    }
    let sym = (&problem.hessian + problem.hessian.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen().eigenvalues;
    let scale = eig.amax().max(1.0);
    let min_eig = eig.min();
    if min_eig < -1e-10 * scale {
        return Err(Error::NotPsd(min_eig));
    }
    if min_eig > 1e-9 * scale {
        let mut sol = dual_active_set(&sym, &problem.linear, &problem.a, &problem.b, opts)?;
        finish(problem, &mut sol);
        return Ok(sol);
    }
    // proximal point iterations on the singular problem
    let rho = 1e-2 * scale;
    let shifted = &sym + DMatrix::identity(d, d) * rho;
    let mut center = DVector::zeros(d);
    let mut total = 0;
    for _ in 0..opts.max_proximal_rounds {
        let lin = &problem.linear - &center * rho;
        let mut sol = dual_active_set(&shifted, &lin, &problem.a, &problem.b, opts)?;
        total += sol.iterations;
        if sol.status == QpStatus::Infeasible {
            sol.iterations = total;
            finish(problem, &mut sol);
            return Ok(sol);
        }
        let moved = (&sol.z - &center).amax();
        center = sol.z.clone();
        if moved <= 1e-12 * (1.0 + center.amax()) {
            sol.iterations = total;
            finish(problem, &mut sol);
            return Ok(sol);
        }
    }
    Err(Error::MaxIterations(total))
}

fn finish(problem: &QpProblem, sol: &mut QpSolution) {
    sol.objective = problem.objective(&sol.z);
    sol.kkt = kkt_residuals(problem, &sol.z, &sol.multipliers);
    if let Some(cert) = &mut sol.certificate {
        let norm = cert.y.amax().max(f64::MIN_POSITIVE);
        cert.residual = (problem.a.transpose() * &cert.y).amax() / norm;
        cert.margin = problem.b.dot(&cert.y) / norm;
    }
}

/// Solves `[H N; N' 0] [d; mu] = [rhs; 0]`.
fn kkt_solve(
    h: &DMatrix<f64>,
    a: &DMatrix<f64>,
    active: &[usize],
    rhs: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let d = h.nrows();
    let k = active.len();
    let mut m = DMatrix::zeros(d + k, d + k);
    m.view_mut((0, 0), (d, d)).copy_from(h);
    for (j, &row) in active.iter().enumerate() {
        for i in 0..d {
            m[(i, d + j)] = a[(row, i)];
            m[(d + j, i)] = a[(row, i)];
        }
    }
    let mut r = DVector::zeros(d + k);
    r.rows_mut(0, d).copy_from(rhs);
    let sol = m.lu().solve(&r)?;
    Some((sol.rows(0, d).into_owned(), sol.rows(d, k).into_owned()))
}

fn dual_active_set(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    opts: &QpOptions,
) -> Result<QpSolution> {
    let d = c.len();
    let m = b.len();
    let chol = h.clone().cholesky().ok_or(Error::NotPsd(0.0))?;
    let mut z = chol.solve(&(-c));
    let mut active: Vec<usize> = Vec::new();
    let mut lambda = DVector::<f64>::zeros(m);
    let row_norm: Vec<f64> = (0..m).map(|i| a.row(i).norm().max(1e-300)).collect();
    let mut iterations = 0;

    loop {
        // most violated constraint, measured in scaled units
        let mut pick = None;
        let mut worst = 0.0;
        for i in 0..m {
            if active.contains(&i) {
                continue;
            }
            let s = (a.row(i) * &z)[0] - b[i];
            let tol = opts.feasibility_tol * (1.0 + b[i].abs());
            if s < -tol {
                let scaled = s / row_norm[i];
                if scaled < worst {
                    worst = scaled;
                    pick = Some(i);
                }
            }
        }
        let Some(p) = pick else {
            return Ok(QpSolution {
                status: QpStatus::Optimal,
                z,
                multipliers: lambda,
                objective: 0.0,
                kkt: KktResiduals::default(),
                certificate: None,
                iterations,
            });
        };
        let ap = a.row(p).transpose();
        let hinv_ap = chol.solve(&ap);
        let curvature_scale = ap.dot(&hinv_ap).max(1e-300);
        loop {
            iterations += 1;
            if iterations > opts.max_iterations {
                return Err(Error::MaxIterations(opts.max_iterations));
            }
            let (dir, r) = kkt_solve(h, a, &active, &ap)
                .ok_or_else(|| Error::InvalidArgument("singular working-set KKT system".into()))?;
            let curvature = dir.dot(&ap);
            // largest dual step keeping working-set multipliers nonnegative
            let mut t_dual = f64::INFINITY;
            let mut leave = None;
            for (j, &row) in active.iter().enumerate() {
                if r[j] > 1e-14 * (1.0 + r.amax()) {
                    let ratio = lambda[row] / r[j];
                    if ratio < t_dual {
                        t_dual = ratio;
                        leave = Some(j);
                    }
                }
            }
            // a full working set leaves no primal freedom; round-off in `dir`
            // grows with the size of the dual step
            let zero_dir =
                active.len() >= d || curvature <= 1e-12 * curvature_scale * (1.0 + r.amax());
            if zero_dir {
                let Some(j) = leave else {
                    let mut y = DVector::zeros(m);
                    y[p] = 1.0;
                    for (jj, &row) in active.iter().enumerate() {
                        y[row] = (-r[jj]).max(0.0);
                    }
                    return Ok(QpSolution {
                        status: QpStatus::Infeasible,
                        z,
                        multipliers: lambda,
                        objective: 0.0,
                        kkt: KktResiduals::default(),
                        certificate: Some(InfeasibilityCertificate {
                            y,
                            residual: 0.0,
                            margin: 0.0,
                        }),
                        iterations,
                    });
                };
                for (jj, &row) in active.iter().enumerate() {
                    lambda[row] -= t_dual * r[jj];
                }
                lambda[p] += t_dual;
                lambda[active[j]] = 0.0;
                active.remove(j);
                continue;
            }
            let s_p = (a.row(p) * &z)[0] - b[p];
            let t_primal = -s_p / curvature;
            let t = t_primal.min(t_dual);
            z += &dir * t;
            for (jj, &row) in active.iter().enumerate() {
                lambda[row] -= t * r[jj];
            }
            lambda[p] += t;
            if t_primal <= t_dual {
                active.push(p);
                break;
            }
            let j = leave.expect("finite dual step has a leaving index");
            lambda[active[j]] = 0.0;
            active.remove(j);
        }
        debug_assert!(active.len() <= d);
    }
}
