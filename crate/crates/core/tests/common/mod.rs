//! Oracles shared by the integration tests. Nothing here calls into the
//! library's numerics.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};
use sacbf_core::scenario::ScenarioConfig;

pub fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(v)
}

/// Hand-written barrier levels for the unicycle with squared-distance forms.
#[derive(Clone, Debug)]
pub enum ClosedForm {
    Obstacle {
        center: [f64; 2],
        radius: f64,
        lambda1: f64,
        eta1: f64,
    },
    /// `eps(t)^2` falls linearly from `eps0^2` to `eps_d^2` on `[t0, t1]` and
    /// stays at `eps_d^2` from `switch` on.
    Reach {
        center: [f64; 2],
        eps0: f64,
        eps_d: f64,
        t0: f64,
        t1: f64,
        switch: f64,
        lambda1: f64,
        eta1: f64,
    },
}

impl ClosedForm {
    fn center(&self) -> [f64; 2] {
        match self {
            ClosedForm::Obstacle { center, .. } | ClosedForm::Reach { center, .. } => *center,
        }
    }

    fn alpha(&self) -> (f64, f64) {
        match self {
            ClosedForm::Obstacle { lambda1, eta1, .. }
            | ClosedForm::Reach { lambda1, eta1, .. } => (*lambda1, *eta1),
        }
    }

    /// `(value, d/dt)` of the time-dependent part of `psi_0`.
    fn time_part(&self, t: f64) -> (f64, f64) {
        match self {
            ClosedForm::Obstacle { radius, .. } => (-radius * radius, 0.0),
            ClosedForm::Reach {
                eps0,
                eps_d,
                t0,
                t1,
                switch,
                ..
            } => {
                let k = (eps0 * eps0 - eps_d * eps_d) / (t1 - t0);
                if t < *switch {
                    (eps0 * eps0 - k * (t - t0), -k)
                } else {
                    (eps_d * eps_d, 0.0)
                }
            }
        }
    }

    /// Segment fixed for a whole sampling interval starting at `t_k`.
    pub fn frozen(&self, t_k: f64) -> ClosedForm {
        let mut out = self.clone();
        if let ClosedForm::Reach { t1, switch, .. } = &mut out {
            *switch = if t_k >= *t1 {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            };
        }
        out
    }

    /// Closed forms for every chain of a scenario, in the library's chain
    /// order (safety first, then reach). Only two-level, squared-distance,
    /// power-linear chains are covered.
    pub fn from_scenario(cfg: &ScenarioConfig) -> Vec<ClosedForm> {
        let mut out = Vec::new();
        for s in &cfg.safety {
            assert_eq!(s.alphas.len(), 2);
            out.push(ClosedForm::Obstacle {
                center: [s.center[0], s.center[1]],
                radius: s.radius,
                lambda1: s.alphas[0].lambda,
                eta1: s.alphas[0].eta,
            });
        }
        for r in &cfg.reach {
            assert_eq!(r.alphas.len(), 2);
            out.push(ClosedForm::Reach {
                center: [r.center[0], r.center[1]],
                eps0: r.eps0,
                eps_d: r.eps_d,
                t0: r.t_start,
                t1: r.t_reach,
                switch: r.t_reach,
                lambda1: r.alphas[0].lambda,
                eta1: r.alphas[0].eta,
            });
        }
        out
    }

    fn sign(&self) -> f64 {
        match self {
            ClosedForm::Obstacle { .. } => 1.0,
            ClosedForm::Reach { .. } => -1.0,
        }
    }

    pub fn psi0(&self, x: &[f64], t: f64) -> f64 {
        let c = self.center();
        let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
        let (e, _) = self.time_part(t);
        match self {
            ClosedForm::Obstacle { .. } => d2 + e,
            ClosedForm::Reach { .. } => e - d2,
        }
    }

    pub fn psi1(&self, x: &[f64], t: f64) -> f64 {
        let c = self.center();
        let (_, de) = self.time_part(t);
        let rate = 2.0 * ((x[0] - c[0]) * x[3] * x[2].cos() + (x[1] - c[1]) * x[3] * x[2].sin());
        let (l, eta) = self.alpha();
        self.sign() * rate + de + l * self.psi0(x, t).powf(eta)
    }

    /// Hand-derived gradient of a level in `(x, t)`.
    pub fn gradient(&self, level: usize, x: &[f64], t: f64) -> [f64; 5] {
        let c = self.center();
        let (dx, dy) = (x[0] - c[0], x[1] - c[1]);
        let (_, de) = self.time_part(t);
        let s = self.sign();
        let g0 = [2.0 * s * dx, 2.0 * s * dy, 0.0, 0.0, de];
        if level == 0 {
            return g0;
        }
        let (sn, cs) = x[2].sin_cos();
        let v = x[3];
        let dr = [
            v * cs,
            v * sn,
            v * (-dx * sn + dy * cs),
            dx * cs + dy * sn,
            0.0,
        ];
        let (l, eta) = self.alpha();
        let k = l * eta * self.psi0(x, t).powf(eta - 1.0);
        let mut g = [0.0; 5];
        for i in 0..5 {
            g[i] = 2.0 * s * dr[i] + k * g0[i];
        }
        g
    }

    pub fn level(&self, level: usize, x: &[f64], t: f64) -> f64 {
        match level {
            0 => self.psi0(x, t),
            1 => self.psi1(x, t),
            _ => panic!("closed forms cover two levels"),
        }
    }
}

pub fn unicycle_field(x: &[f64], u: &[f64]) -> [f64; 4] {
    [x[3] * x[2].cos(), x[3] * x[2].sin(), u[0], u[1]]
}

/// Fixed-step RK4 under a held input; returns the states at every sub-step,
/// starting with `x0`.
pub fn rk4_zoh(x0: &[f64], u: &[f64], dt: f64, substeps: usize) -> Vec<[f64; 4]> {
    let h = dt / substeps as f64;
    let mut x = [x0[0], x0[1], x0[2], x0[3]];
    let mut out = Vec::with_capacity(substeps + 1);
    out.push(x);
    let add = |a: &[f64; 4], b: &[f64; 4], s: f64| {
        [
            a[0] + s * b[0],
            a[1] + s * b[1],
            a[2] + s * b[2],
            a[3] + s * b[3],
        ]
    };
    for _ in 0..substeps {
        let k1 = unicycle_field(&x, u);
        let k2 = unicycle_field(&add(&x, &k1, h / 2.0), u);
        let k3 = unicycle_field(&add(&x, &k2, h / 2.0), u);
        let k4 = unicycle_field(&add(&x, &k3, h), u);
        for i in 0..4 {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push(x);
    }
    out
}

/// Adaptive Runge-Kutta-Fehlberg 4(5) for `y' = -lambda max(y, 0)^eta`.
pub fn comparison_ode(psi0: f64, lambda: f64, eta: f64, dt: f64) -> f64 {
    if dt == 0.0 || psi0 == 0.0 {
        return psi0;
    }
    let f = |y: f64| -lambda * y.max(0.0).powf(eta);
    let (mut t, mut y) = (0.0, psi0);
    let mut h = dt / 100.0;
    let tol = 1e-13;
    while t < dt {
        h = h.min(dt - t);
        let k1 = h * f(y);
        let k2 = h * f(y + k1 / 4.0);
        let k3 = h * f(y + 3.0 / 32.0 * k1 + 9.0 / 32.0 * k2);
        let k4 = h * f(y + 1932.0 / 2197.0 * k1 - 7200.0 / 2197.0 * k2 + 7296.0 / 2197.0 * k3);
        let k5 =
            h * f(y + 439.0 / 216.0 * k1 - 8.0 * k2 + 3680.0 / 513.0 * k3 - 845.0 / 4104.0 * k4);
        let k6 = h * f(y - 8.0 / 27.0 * k1 + 2.0 * k2 - 3544.0 / 2565.0 * k3
            + 1859.0 / 4104.0 * k4
            - 11.0 / 40.0 * k5);
        let y4 = y + 25.0 / 216.0 * k1 + 1408.0 / 2565.0 * k3 + 2197.0 / 4104.0 * k4 - k5 / 5.0;
        let y5 = y + 16.0 / 135.0 * k1 + 6656.0 / 12825.0 * k3 + 28561.0 / 56430.0 * k4
            - 9.0 / 50.0 * k5
            + 2.0 / 55.0 * k6;
        let err = (y5 - y4).abs();
        if err <= tol * (1.0 + y.abs()) || h < 1e-14 {
            t += h;
            y = y5.max(0.0);
            if y == 0.0 {
                return 0.0;
            }
        }
        let scale = if err == 0.0 {
            4.0
        } else {
            0.9 * (tol * (1.0 + y.abs()) / err).powf(0.2)
        };
        h *= scale.clamp(0.1, 4.0);
    }
    y
}

/// `min 1/2 z'Hz + c'z` subject to `A z >= b`, with a known optimum.
#[derive(Clone, Debug)]
pub struct GeneratedQp {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub half_width: f64,
    pub optimum: Option<DVector<f64>>,
}

impl GeneratedQp {
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.c.dot(z)
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }
}

pub const GRID_STEP: f64 = 1e-3;

/// Box half-width for which a full `GRID_STEP` grid stays tractable.
pub fn grid_half_width(d: usize) -> f64 {
    match d {
        1 | 2 => 1.0,
        3 => 0.05,
        _ => 0.03,
    }
}

fn on_lattice(v: f64) -> f64 {
    (v / GRID_STEP).round() * GRID_STEP
}

fn box_rows(d: usize, w: f64) -> (Vec<DVector<f64>>, Vec<f64>) {
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..d {
        let mut e = DVector::zeros(d);
        e[i] = 1.0;
        rows.push(e.clone());
        rhs.push(-w);
        rows.push(-e);
        rhs.push(-w);
    }
    (rows, rhs)
}

fn assemble(rows: Vec<DVector<f64>>, rhs: Vec<f64>, d: usize) -> (DMatrix<f64>, DVector<f64>) {
    let a = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    (a, DVector::from_vec(rhs))
}

/// Random convex QP whose optimum `z*` lies on the grid lattice: pick `z*`,
/// an active set and nonnegative multipliers, then choose `c` and `b` so that
/// the KKT conditions hold at `z*`.
pub fn feasible_qp<R: Rng>(rng: &mut R, d: usize) -> GeneratedQp {
    let w = grid_half_width(d);
    let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let h = m.transpose() * &m + DMatrix::identity(d, d) * rng.random_range(0.1..1.0);
    let z = DVector::from_fn(d, |_, _| {
        if rng.random_bool(0.25) {
            if rng.random_bool(0.5) {
                w
            } else {
                -w
            }
        } else {
            on_lattice(rng.random_range(-w..w))
        }
    });
    let (mut rows, mut rhs) = box_rows(d, w);
    let mut mult = vec![0.0; rows.len()];
    for i in 0..d {
        if z[i] >= w {
            mult[2 * i + 1] = rng.random_range(0.0..2.0);
        } else if z[i] <= -w {
            mult[2 * i] = rng.random_range(0.0..2.0);
        }
    }
    let general = rng.random_range(0..=3usize);
    for _ in 0..general {
        let a = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let at = a.dot(&z);
        if rng.random_bool(0.5) {
            rows.push(a);
            rhs.push(at);
            mult.push(if rng.random_bool(0.8) {
                rng.random_range(0.0..2.0)
            } else {
                0.0
            });
        } else {
            rows.push(a);
            rhs.push(at - rng.random_range(0.05..0.5) * w);
            mult.push(0.0);
        }
    }
    let (a, b) = assemble(rows, rhs, d);
    let c = a.transpose() * DVector::from_vec(mult) - &h * &z;
    GeneratedQp {
        h,
        c,
        a,
        b,
        half_width: w,
        optimum: Some(z),
    }
}

/// Box plus a row that no point of the box satisfies.
pub fn infeasible_qp<R: Rng>(rng: &mut R, d: usize) -> GeneratedQp {
    let w = grid_half_width(d);
    let h = DMatrix::identity(d, d);
    let c = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let (mut rows, mut rhs) = box_rows(d, w);
    let a = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let reach: f64 = a.iter().map(|v: &f64| v.abs()).sum::<f64>() * w;
    rows.push(a);
    rhs.push(reach + rng.random_range(0.01..0.2) * w);
    let (a, b) = assemble(rows, rhs, d);
    GeneratedQp {
        h,
        c,
        a,
        b,
        half_width: w,
        optimum: None,
    }
}

/// Minimum over every lattice point of the box that satisfies all rows, or
/// `None` if no lattice point does.
pub fn grid_search(p: &GeneratedQp) -> Option<(f64, DVector<f64>)> {
    let d = p.dim();
    let n = (p.half_width / GRID_STEP).round() as i64;
    let side = (2 * n + 1) as usize;
    let total = side.pow(d as u32);
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut z = DVector::zeros(d);
    for idx in 0..total {
        let mut r = idx;
        for i in 0..d {
            z[i] = ((r % side) as i64 - n) as f64 * GRID_STEP;
            r /= side;
        }
        let feasible = (0..p.a.nrows()).all(|i| p.a.row(i).dot(&z.transpose()) >= p.b[i] - 1e-12);
        if !feasible {
            continue;
        }
        let f = p.objective(&z);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, z.clone()));
        }
    }
    best
}

/// Exact optimum by enumerating candidate active sets of size at most `d`.
pub fn enumerate_active_sets(p: &GeneratedQp) -> Option<f64> {
    let d = p.dim();
    let m = p.a.nrows();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << m) {
        let set: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
        if set.len() > d {
            continue;
        }
        let k = set.len();
        let mut kkt = DMatrix::zeros(d + k, d + k);
        let mut rhs = DVector::zeros(d + k);
        kkt.view_mut((0, 0), (d, d)).copy_from(&p.h);
        for i in 0..d {
            rhs[i] = -p.c[i];
        }
        for (j, &r) in set.iter().enumerate() {
            for i in 0..d {
                kkt[(i, d + j)] = -p.a[(r, i)];
                kkt[(d + j, i)] = p.a[(r, i)];
            }
            rhs[d + j] = p.b[r];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        let z = sol.rows(0, d).into_owned();
        if !sol.iter().all(|v| v.is_finite()) {
            continue;
        }
        let feasible = (0..m).all(|i| p.a.row(i).dot(&z.transpose()) >= p.b[i] - 1e-9);
        if feasible {
            let f = p.objective(&z);
            if best.is_none_or(|b| f < b) {
                best = Some(f);
            }
        }
    }
    best
}

/// Stationarity, primal, dual and complementarity residuals (max-norms).
pub fn kkt(p: &GeneratedQp, z: &DVector<f64>, lambda: &DVector<f64>) -> [f64; 4] {
    let grad = &p.h * z + &p.c - p.a.transpose() * lambda;
    let slack = &p.a * z - &p.b;
    [
        grad.amax(),
        slack.iter().map(|s| (-s).max(0.0)).fold(0.0, f64::max),
        lambda.iter().map(|l| (-l).max(0.0)).fold(0.0, f64::max),
        slack
            .iter()
            .zip(lambda.iter())
            .map(|(s, l)| (s * l).abs())
            .fold(0.0, f64::max),
    ]
}

/// Largest `|psi_1''|` along a held-input trajectory on `[t_k, t_k + dt]`,
/// by second differences of the closed form on an RK4 grid, and the largest
/// distance from the start state.
pub fn held_input_extremes(cf: &ClosedForm, x: &[f64], u: &[f64], t_k: f64, dt: f64) -> (f64, f64) {
    const SUB: usize = 1000;
    let cf = cf.frozen(t_k);
    let traj = rk4_zoh(x, u, dt, SUB);
    let h = dt / SUB as f64;
    let psi: Vec<f64> = traj
        .iter()
        .enumerate()
        .map(|(i, s)| cf.psi1(s, t_k + i as f64 * h))
        .collect();
    let mut dd = 0.0f64;
    for i in 1..SUB {
        dd = dd.max(((psi[i + 1] - 2.0 * psi[i] + psi[i - 1]) / (h * h)).abs());
    }
    let reach = traj
        .iter()
        .map(|s| (0..4).map(|j| (s[j] - x[j]).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    (dd, reach)
}

/// `|a - b| <= tol * max(|a|, |b|, 1)`.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn closed_level(cf: &ClosedForm, level: usize, z: &[f64; 5]) -> f64 {
    cf.level(level, &z[..4], z[4])
}

/// Largest mismatch, relative with a floor of 1, between the library's value,
/// gradient and Hessian of a level in `(x, t)` and central differences of the
/// closed form (values for the gradient, the hand-derived gradient for the
/// Hessian).
pub fn derivative_mismatch(
    lib: &sacbf_core::barrier::BarrierChain,
    cf: &ClosedForm,
    level: usize,
    x: &[f64],
    t: f64,
) -> f64 {
    let model = sacbf_core::dynamics::make_unicycle();
    let hy = lib.level_hyper(&model, level, &dv(x), t).unwrap();
    let z = [x[0], x[1], x[2], x[3], t];
    let f = |z: &[f64; 5]| closed_level(cf, level, z);
    let shift = |z: &[f64; 5], i: usize, d: f64| {
        let mut w = *z;
        w[i] += d;
        w
    };
    let err = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
    // Richardson extrapolation of central differences, exact through h^4
    let richardson = |d: &dyn Fn(f64) -> f64, h: f64| (4.0 * d(h / 2.0) - d(h)) / 3.0;
    let h = 1e-5;
    let mut worst = err(hy.v, f(&z));
    for i in 0..5 {
        let g = richardson(
            &|h| (f(&shift(&z, i, h)) - f(&shift(&z, i, -h))) / (2.0 * h),
            h,
        );
        worst = worst.max(err(hy.g[i], g));
        for j in 0..5 {
            let dg = |h: f64| {
                let p = shift(&z, j, h);
                let m = shift(&z, j, -h);
                (cf.gradient(level, &p[..4], p[4])[i] - cf.gradient(level, &m[..4], m[4])[i])
                    / (2.0 * h)
            };
            worst = worst.max(err(hy.hess(i, j), richardson(&dg, h)));
        }
    }
    worst
}

/// Largest relative mismatch between the unicycle drift Jacobian and central
/// differences of the hand-written field.
pub fn drift_jacobian_mismatch(x: &[f64]) -> f64 {
    use sacbf_core::dynamics::SystemModel;
    let model = sacbf_core::dynamics::make_unicycle();
    let jac = model.drift_jacobian(&dv(x), 0.0);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for j in 0..4 {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let fp = unicycle_field(&xp, &[0.0, 0.0]);
        let fm = unicycle_field(&xm, &[0.0, 0.0]);
        for i in 0..4 {
            let fd = (fp[i] - fm[i]) / (2.0 * h);
            worst = worst.max((jac[(i, j)] - fd).abs() / jac[(i, j)].abs().max(fd.abs()).max(1.0));
        }
    }
    worst
}

/// A random two-level chain of either kind with its closed form, and a state
/// and time at which it is evaluated away from kinks and power singularities.
pub fn random_chain_point<R: Rng>(
    rng: &mut R,
) -> (sacbf_core::barrier::BarrierChain, ClosedForm, [f64; 4], f64) {
    use sacbf_core::barrier::{BarrierChain, ClassKappaPower, RadialForm, ReachSpec};
    let model = sacbf_core::dynamics::make_unicycle();
    let lambda1 = rng.random_range(0.5..3.0);
    let eta1 = if rng.random_bool(0.5) {
        1.0
    } else {
        rng.random_range(0.5..2.5)
    };
    let alphas = vec![
        ClassKappaPower::new(lambda1, eta1).unwrap(),
        ClassKappaPower::new(rng.random_range(0.5..3.0), 1.0).unwrap(),
    ];
    let center = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
    loop {
        let x = [
            rng.random_range(-6.0..6.0),
            rng.random_range(-6.0..6.0),
            rng.random_range(-3.2..3.2),
            rng.random_range(-3.0..3.0),
        ];
        if rng.random_bool(0.5) {
            let radius = rng.random_range(0.3..2.0);
            let cf = ClosedForm::Obstacle {
                center,
                radius,
                lambda1,
                eta1,
            };
            if cf.psi0(&x, 0.0) < 0.05 {
                continue;
            }
            let chain = BarrierChain::circular_safety(
                "obstacle",
                &model,
                center.to_vec(),
                radius,
                RadialForm::PowerSum(2.0),
                alphas.clone(),
            )
            .unwrap();
            return (chain, cf, x, rng.random_range(0.0..20.0));
        } else {
            let t0 = rng.random_range(0.0..10.0);
            let t1 = t0 + rng.random_range(1.0..8.0);
            let eps_d = rng.random_range(0.2..1.5);
            let eps0 = eps_d + rng.random_range(1.0..8.0);
            let t = rng.random_range(t0 + 0.01..t1 - 0.01);
            let cf = ClosedForm::Reach {
                center,
                eps0,
                eps_d,
                t0,
                t1,
                switch: t1,
                lambda1,
                eta1,
            };
            if cf.psi0(&x, t) < 0.05 {
                continue;
            }
            let spec = ReachSpec::new(center.to_vec(), eps0, eps_d, t0, t1);
            let chain = BarrierChain::reach_remain("reach", &model, spec, alphas.clone()).unwrap();
            return (chain, cf, x, t);
        }
    }
}
