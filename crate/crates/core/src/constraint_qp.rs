//! Linear rows in `(u, omega)` for the sampled-data barrier conditions and the
//! per-step QP `min u'u + sum q_k (omega_k - 1)^2`.

use nalgebra::{DMatrix, DVector};

use crate::barrier::{BarrierChain, ChainKind};
use crate::dynamics::{check_dim, InputBox, SystemModel};
use crate::error::{Error, Result};
use crate::invariance_bounds::comparison_decrement;
use crate::qp::{solve_qp, QpProblem, QpSolution, QpStatus};

/// Top-level values below this count as having left the safe set.
pub const SET_EXIT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowTag {
    Safety,
    Reach,
    InputBound,
    SlackBound,
}

impl RowTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            RowTag::Safety => "safety",
            RowTag::Reach => "reach",
            RowTag::InputBound => "input_bound",
            RowTag::SlackBound => "slack_bound",
        }
    }
}

impl From<ChainKind> for RowTag {
    fn from(k: ChainKind) -> Self {
        match k {
            ChainKind::Safety => RowTag::Safety,
            ChainKind::Reach => RowTag::Reach,
        }
    }
}

/// `u_coeffs . u + omega_coeff * omega >= rhs`, plus the quantities it was
/// assembled from.
#[derive(Clone, Debug, PartialEq)]
pub struct SacbfRow {
    pub u_coeffs: DVector<f64>,
    pub omega_coeff: f64,
    pub rhs: f64,
    pub tag: RowTag,
    pub chain_id: String,
    pub relaxed: bool,
    /// `psi_{m-1}(t_k)`
    pub psi: f64,
    /// Comparison bound at the end of the interval (0 for the baseline row).
    pub bound: f64,
    pub m_bar: f64,
    pub lf: f64,
    pub dt_partial: f64,
}

impl SacbfRow {
    pub fn slack(&self, u: &DVector<f64>, omega: f64) -> f64 {
        self.u_coeffs.dot(u) + self.omega_coeff * omega - self.rhs
    }
}

fn top_terms(
    chain: &BarrierChain,
    model: &dyn SystemModel,
    x: &DVector<f64>,
    t: f64,
) -> Result<(f64, f64, DVector<f64>, f64)> {
    let (lf, lg, dt_partial) = chain.top_lie_derivatives(model, x, t)?;
    let top = chain.relative_degree() - 1;
    let psi = chain.eval_psi(model, top, x, t)?;
    Ok((psi, lf, lg, dt_partial))
}

/// Sampled-data condition
/// `Lf + Lg u + d_t psi >= (L(t_k, dt) - psi) / dt + m_bar dt / 2`, or with
/// `relaxed` the same with `L` scaled by a free `omega`.
#[allow(clippy::too_many_arguments)]
pub fn sacbf_row(
    chain: &BarrierChain,
    model: &dyn SystemModel,
    x: &DVector<f64>,
    t_k: f64,
    dt: f64,
    m_bar: f64,
    relaxed: bool,
) -> Result<SacbfRow> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    if !(m_bar >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "m_bar must be nonnegative, got {m_bar}"
        )));
    }
    let (psi, lf, lg, dt_partial) = top_terms(chain, model, x, t_k)?;
    if psi < -SET_EXIT_TOL {
        return Err(Error::SetExit {
            chain: chain.name().to_string(),
            t: t_k,
            psi,
        });
    }
    let alpha = chain.top_alpha();
    let psi_c = psi.max(0.0);
    let decrement = comparison_decrement(psi_c, alpha.lambda, alpha.eta, dt)?;
    let bound = psi_c + decrement;
    let margin = 0.5 * m_bar * dt;
    let (omega_coeff, rhs) = if relaxed {
        (-bound / dt, -lf - dt_partial - psi / dt + margin)
    } else {
        (
            0.0,
            (decrement + psi_c - psi) / dt + margin - lf - dt_partial,
        )
    };
    Ok(SacbfRow {
        u_coeffs: lg,
        omega_coeff,
        rhs,
        tag: chain.kind().into(),
        chain_id: chain.name().to_string(),
        relaxed,
        psi,
        bound,
        m_bar,
        lf,
        dt_partial,
    })
}

/// Continuous-time condition `Lf + Lg u + d_t psi + alpha_m(psi) >= 0`.
pub fn hocbf_row(
    chain: &BarrierChain,
    model: &dyn SystemModel,
    x: &DVector<f64>,
    t: f64,
) -> Result<SacbfRow> {
    let (psi, lf, lg, dt_partial) = top_terms(chain, model, x, t)?;
    let alpha = chain.top_alpha().eval(psi)?;
    Ok(SacbfRow {
        u_coeffs: lg,
        omega_coeff: 0.0,
        rhs: -lf - dt_partial - alpha,
        tag: chain.kind().into(),
        chain_id: chain.name().to_string(),
        relaxed: false,
        psi,
        bound: 0.0,
        m_bar: 0.0,
        lf,
        dt_partial,
    })
}

/// A QP over `z = (u, omega_1, ..., omega_K)` with one `omega` per relaxed row.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintQp {
    pub problem: QpProblem,
    /// Barrier rows followed by the box rows, aligned with the problem's rows.
    pub rows: Vec<SacbfRow>,
    /// Position of each barrier row's `omega` in `z`, if relaxed.
    pub omega_index: Vec<Option<usize>>,
    pub input_dim: usize,
}

impl ConstraintQp {
    pub fn barrier_rows(&self) -> &[SacbfRow] {
        &self.rows[..self.omega_index.len()]
    }

    pub fn solve(&self) -> Result<QpSolution> {
        solve_qp(&self.problem)
    }

    pub fn input(&self, z: &DVector<f64>) -> DVector<f64> {
        z.rows(0, self.input_dim).into_owned()
    }

    /// `omega` of barrier row `i` (1 for unrelaxed rows).
    pub fn omega(&self, z: &DVector<f64>, i: usize) -> f64 {
        self.omega_index[i].map_or(1.0, |j| z[j])
    }

    /// Slack of barrier row `i` at `z`.
    pub fn row_slack(&self, z: &DVector<f64>, i: usize) -> f64 {
        self.rows[i].slack(&self.input(z), self.omega(z, i))
    }
}

/// Cost `u'u + sum_k q_k (omega_k - 1)^2`, barrier rows, input box rows and
/// `0 <= omega_k <= 1`.
pub fn build_qp(rows: &[SacbfRow], input_box: &InputBox, weights: &[f64]) -> Result<ConstraintQp> {
    check_dim("weights", rows.len(), weights.len())?;
    let q = input_box.dim();
    for r in rows {
        check_dim("row input coefficients", q, r.u_coeffs.len())?;
    }
    let mut omega_index = Vec::with_capacity(rows.len());
    let mut relaxed_weights = Vec::new();
    for (r, w) in rows.iter().zip(weights) {
        if r.relaxed {
            if !(*w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "relaxed row `{}` needs a positive weight, got {w}",
                    r.chain_id
                )));
            }
            omega_index.push(Some(q + relaxed_weights.len()));
            relaxed_weights.push(*w);
        } else {
            omega_index.push(None);
        }
    }
    let k = relaxed_weights.len();
    let d = q + k;
    let mut hessian = DMatrix::zeros(d, d);
    let mut linear = DVector::zeros(d);
    for i in 0..q {
        hessian[(i, i)] = 2.0;
    }
    for (j, w) in relaxed_weights.iter().enumerate() {
        hessian[(q + j, q + j)] = 2.0 * w;
        linear[q + j] = -2.0 * w;
    }

    let mut all_rows: Vec<SacbfRow> = rows.to_vec();
    let bound_row =
        |coeffs: DVector<f64>, omega_coeff: f64, rhs: f64, tag: RowTag, id: String| SacbfRow {
            u_coeffs: coeffs,
            omega_coeff,
            rhs,
            tag,
            chain_id: id,
            relaxed: false,
            psi: f64::NAN,
            bound: f64::NAN,
            m_bar: f64::NAN,
            lf: f64::NAN,
            dt_partial: f64::NAN,
        };
    for i in 0..q {
        let mut e = DVector::zeros(q);
        e[i] = 1.0;
        all_rows.push(bound_row(
            e.clone(),
            0.0,
            input_box.lower()[i],
            RowTag::InputBound,
            format!("u{i}_min"),
        ));
        all_rows.push(bound_row(
            -e,
            0.0,
            -input_box.upper()[i],
            RowTag::InputBound,
            format!("u{i}_max"),
        ));
    }

    let box_rows = 2 * q + 2 * k;
    let m = rows.len() + box_rows;
    let mut a = DMatrix::zeros(m, d);
    let mut b = DVector::zeros(m);
    for (i, r) in rows.iter().enumerate() {
        for j in 0..q {
            a[(i, j)] = r.u_coeffs[j];
        }
        if let Some(j) = omega_index[i] {
            a[(i, j)] = r.omega_coeff;
        }
        b[i] = r.rhs;
    }
    let mut at = rows.len();
    for i in 0..q {
        a[(at, i)] = 1.0;
        b[at] = input_box.lower()[i];
        a[(at + 1, i)] = -1.0;
        b[at + 1] = -input_box.upper()[i];
        at += 2;
    }
    for j in 0..k {
        a[(at, q + j)] = 1.0;
        b[at] = 0.0;
        a[(at + 1, q + j)] = -1.0;
        b[at + 1] = -1.0;
        at += 2;
        all_rows.push(bound_row(
            DVector::zeros(q),
            1.0,
            0.0,
            RowTag::SlackBound,
            format!("omega{j}_min"),
        ));
        all_rows.push(bound_row(
            DVector::zeros(q),
            -1.0,
            -1.0,
            RowTag::SlackBound,
            format!("omega{j}_max"),
        ));
    }
    let mut problem = QpProblem::new(hessian, linear, a, b)?;
    problem.constant = relaxed_weights.iter().sum();
    Ok(ConstraintQp {
        problem,
        rows: all_rows,
        omega_index,
        input_dim: q,
    })
}

/// Solves and reports whether every barrier row holds at the returned point.
pub fn solve_rows(
    rows: &[SacbfRow],
    input_box: &InputBox,
    weights: &[f64],
) -> Result<(ConstraintQp, QpSolution)> {
    let qp = build_qp(rows, input_box, weights)?;
    let sol = qp.solve()?;
    Ok((qp, sol))
}

pub fn is_optimal(sol: &QpSolution) -> bool {
    sol.status == QpStatus::Optimal
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{make_circular_safety, ClassKappaPower};
    use crate::dynamics::make_unicycle;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn obstacle(lambda: f64) -> BarrierChain {
        make_circular_safety(
            &make_unicycle(),
            vec![0.0, 0.0],
            1.0,
            2.0,
            vec![ClassKappaPower::new(lambda, 1.0).unwrap(); 2],
        )
        .unwrap()
    }

    #[test]
    fn small_step_limit_matches_baseline() {
        let m = make_unicycle();
        let c = obstacle(2.0);
        let x = dv(&[-3.0, 0.5, 0.3, 1.2]);
        let s = sacbf_row(&c, &m, &x, 0.0, 1e-6, 0.0, false).unwrap();
        let h = hocbf_row(&c, &m, &x, 0.0).unwrap();
        assert_eq!(s.u_coeffs, h.u_coeffs);
        // rhs gap is lambda^2 psi dt / 2 to leading order
        let expected = 0.5 * 4.0 * s.psi * 1e-6;
        assert!(((s.rhs - h.rhs) - expected).abs() < 1e-9);
    }

    #[test]
    fn boundary_row_forces_growth() {
        let m = make_unicycle();
        let c = obstacle(2.0);
        let x = dv(&[0.0, 1.0, 0.0, 1.0]);
        let r = sacbf_row(&c, &m, &x, 0.0, 0.1, 3.0, false).unwrap();
        assert_eq!(r.psi, 0.0);
        assert_eq!(r.bound, 0.0);
        assert!((r.rhs + r.lf + r.dt_partial - 0.15).abs() < 1e-12);
    }

    #[test]
    fn set_exit_is_reported() {
        let m = make_unicycle();
        let c = obstacle(2.0);
        let x = dv(&[0.0, 0.5, 0.0, 0.0]);
        assert!(matches!(
            sacbf_row(&c, &m, &x, 0.0, 0.1, 0.0, false),
            Err(Error::SetExit { .. })
        ));
        assert!(hocbf_row(&c, &m, &x, 0.0).is_ok());
    }

    #[test]
    fn first_case_study_row() {
        let m = make_unicycle();
        let c = obstacle(2.0);
        let th = std::f64::consts::PI / 12.0;
        let x = dv(&[-3.0, 0.0, th, 1.0]);
        let r = sacbf_row(&c, &m, &x, 0.0, 0.1, 0.0, false).unwrap();
        // psi_1 = 2 v (x cos th + y sin th) + 2 (x^2 + y^2 - 1)
        let d_theta = 2.0 * 1.0 * (3.0 * th.sin());
        let d_v = 2.0 * (-3.0 * th.cos());
        assert!((r.u_coeffs[0] - d_theta).abs() < 1e-8);
        assert!((r.u_coeffs[1] - d_v).abs() < 1e-8);
    }

    #[test]
    fn baseline_is_looser_than_sampled_row() {
        let m = make_unicycle();
        let c = obstacle(2.0);
        let x = dv(&[-3.0, 0.2, 0.1, 1.0]);
        let s = sacbf_row(&c, &m, &x, 0.0, 0.1, 5.0, false).unwrap();
        let h = hocbf_row(&c, &m, &x, 0.0).unwrap();
        assert!(h.rhs < s.rhs);
    }

    #[test]
    fn empty_rows_give_zero_input() {
        let b = InputBox::symmetric(10.0, 2).unwrap();
        let (qp, sol) = solve_rows(&[], &b, &[]).unwrap();
        assert!(is_optimal(&sol));
        assert!(qp.input(&sol.z).amax() < 1e-14);
        assert!(sol.objective.abs() < 1e-14);
    }

    #[test]
    fn relaxation_lowers_omega_when_needed() {
        // u - 4 omega >= 8: infeasible at omega = 1 with |u| <= 10
        let row = SacbfRow {
            u_coeffs: dv(&[1.0]),
            omega_coeff: -4.0,
            rhs: 8.0,
            tag: RowTag::Safety,
            chain_id: "c".into(),
            relaxed: true,
            psi: 0.0,
            bound: 0.0,
            m_bar: 0.0,
            lf: 0.0,
            dt_partial: 0.0,
        };
        let b = InputBox::symmetric(10.0, 1).unwrap();
        let (qp, sol) = solve_rows(&[row], &b, &[200.0]).unwrap();
        assert!(is_optimal(&sol));
        let omega = qp.omega(&sol.z, 0);
        assert!(omega < 1.0);
        // on u = 8 + 4 omega the cost u^2 + 200 (omega - 1)^2 still wants omega
        // above 1/2, so the input bound u <= 10 is active
        assert!((qp.input(&sol.z)[0] - 10.0).abs() < 1e-9);
        assert!((omega - 0.5).abs() < 1e-9);
        assert!(qp.row_slack(&sol.z, 0) > -1e-9);
    }

    #[test]
    fn relaxed_row_needs_weight() {
        let m = make_unicycle();
        let r = sacbf_row(
            &obstacle(2.0),
            &m,
            &dv(&[-3.0, 0.0, 0.0, 1.0]),
            0.0,
            0.1,
            0.0,
            true,
        )
        .unwrap();
        let b = InputBox::symmetric(10.0, 2).unwrap();
        assert!(build_qp(std::slice::from_ref(&r), &b, &[0.0]).is_err());
        let qp = build_qp(&[r], &b, &[200.0]).unwrap();
        assert_eq!(qp.problem.dim(), 3);
        assert_eq!(qp.problem.constraint_count(), 1 + 4 + 2);
        assert_eq!(qp.problem.constant, 200.0);
    }
}
