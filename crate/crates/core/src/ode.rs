//! Dormand-Prince 5(4) with continuous output, and a fixed-step RK4.

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-10,
            max_steps: 100_000,
        }
    }
}

impl OdeOptions {
    pub fn with_tolerance(tol: f64) -> Self {
        OdeOptions {
            rtol: tol,
            atol: tol,
            ..Default::default()
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step's interpolant.
#[derive(Clone, Debug)]
struct Segment {
    t0: f64,
    h: f64,
    r: [DVector<f64>; 5],
}

impl Segment {
    fn eval(&self, t: f64) -> DVector<f64> {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.r;
        r1 + (r2 + (r3 + (r4 + r5 * th1) * th) * th1) * th
    }
}

/// Continuous solution on `[t0, t1]`.
#[derive(Clone, Debug)]
pub struct DenseSolution {
    segments: Vec<Segment>,
    t0: f64,
    t1: f64,
    y1: DVector<f64>,
}

impl DenseSolution {
    pub fn t_start(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t1
    }

    pub fn final_state(&self) -> &DVector<f64> {
        &self.y1
    }

    pub fn steps(&self) -> usize {
        self.segments.len()
    }

    /// State at `t`, clamped to the integration interval.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        if t >= self.t1 {
            return self.y1.clone();
        }
        let t = t.max(self.t0);
        let idx = self
            .segments
            .partition_point(|s| s.t0 + s.h <= t)
            .min(self.segments.len() - 1);
        self.segments[idx].eval(t)
    }
}

fn error_norm(y0: &DVector<f64>, y1: &DVector<f64>, err: &DVector<f64>, opts: &OdeOptions) -> f64 {
    let n = y0.len().max(1) as f64;
    let sum: f64 = (0..y0.len())
        .map(|i| {
            let sc = opts.atol + opts.rtol * y0[i].abs().max(y1[i].abs());
            (err[i] / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

/// Integrates `y' = f(t, y)` from `t0` to `t1 > t0`.
pub fn integrate_dense<F>(
    f: F,
    t0: f64,
    y0: &DVector<f64>,
    t1: f64,
    opts: &OdeOptions,
) -> Result<DenseSolution>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    if !(t1 > t0) {
        return Err(Error::InvalidArgument(format!(
            "integration interval [{t0}, {t1}] is empty"
        )));
    }
    let span = t1 - t0;
    let mut t = t0;
    let mut y = y0.clone();
    let mut k1 = f(t, &y);
    let mut h = initial_step(&f, t0, y0, &k1, span, opts);
    let mut segments = Vec::new();
    let mut steps = 0;
    while t < t1 {
        if steps >= opts.max_steps {
            return Err(Error::StepSizeUnderflow { t, h });
        }
        steps += 1;
        let last = t + h >= t1 || (t1 - (t + h)) < 1e-12 * span;
        if last {
            h = t1 - t;
        }
        if h <= 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepSizeUnderflow { t, h });
        }
        let k2 = f(t + C2 * h, &(&y + &k1 * (h * A21)));
        let k3 = f(t + C3 * h, &(&y + (&k1 * A31 + &k2 * A32) * h));
        let k4 = f(t + C4 * h, &(&y + (&k1 * A41 + &k2 * A42 + &k3 * A43) * h));
        let k5 = f(
            t + C5 * h,
            &(&y + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h),
        );
        let k6 = f(
            t + h,
            &(&y + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h),
        );
        let t_new = if last { t1 } else { t + h };
        let incr = (&k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
        let y_new = &y + &incr;
        let k7 = f(t_new, &y_new);
        let err = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
        let en = error_norm(&y, &y_new, &err, opts);
        if !en.is_finite() {
            h *= 0.2;
            continue;
        }
        if en <= 1.0 {
            let r5 = (&k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * h;
            let r3 = &k1 * h - &incr;
            let r4 = &incr - &k7 * h - &r3;
            segments.push(Segment {
                t0: t,
                h,
                r: [y.clone(), incr, r3, r4, r5],
            });
            t = t_new;
            y = y_new;
            k1 = k7;
        }
        let fac = if en == 0.0 {
            10.0
        } else {
            (0.9 * en.powf(-0.2)).clamp(0.2, 10.0)
        };
        let fac = if en > 1.0 { fac.min(1.0) } else { fac };
        h *= fac;
    }
    Ok(DenseSolution {
        segments,
        t0,
        t1,
        y1: y,
    })
}

fn initial_step<F>(
    f: &F,
    t0: f64,
    y0: &DVector<f64>,
    k1: &DVector<f64>,
    span: f64,
    opts: &OdeOptions,
) -> f64
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let sc = y0.map(|v| opts.atol + opts.rtol * v.abs());
    let d0 = y0.component_div(&sc).norm();
    let d1 = k1.component_div(&sc).norm();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(span);
    let y1 = y0 + k1 * h0;
    let d2 = (f(t0 + h0, &y1) - k1).component_div(&sc).norm() / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

/// One classical Runge-Kutta step.
pub fn rk4_step<F>(f: F, t: f64, y: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &(y + &k1 * (0.5 * h)));
    let k3 = f(t + 0.5 * h, &(y + &k2 * (0.5 * h)));
    let k4 = f(t + h, &(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}
