//! Barrier chains `psi_0, ..., psi_{m-1}` built by the recursion
//! `psi_i = d/dt psi_{i-1} + lambda_i psi_{i-1}^eta_i`.
//!
//! Every level is evaluated by expanding the drift flow `x(s)` as a Taylor jet
//! in `s`, evaluating `psi_0(x(s), t + s)` on that jet and applying the
//! recursion to the series. Below the relative degree the input does not enter
//! `d/dt psi_i`, so following the drift alone is exact. Gradients and Hessians
//! with respect to `(x, t)` come for free from the [`Hyper`] coefficients.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ad::{Hyper, Jet};
use crate::dynamics::{check_dim, SystemModel};
use crate::error::{Error, Result};

/// `eta` values this close to one use the linear branch.
pub const ETA_ONE_TOL: f64 = 1e-12;

const WINDOW_SLACK: f64 = 1e-9;
const RELDEG_SAMPLES: usize = 24;
const RELDEG_TOL: f64 = 1e-9;

/// `alpha(s) = lambda * s^eta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassKappaPower {
    pub lambda: f64,
    pub eta: f64,
}

impl ClassKappaPower {
    pub fn new(lambda: f64, eta: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eta must be positive, got {eta}"
            )));
        }
        let eta = if (eta - 1.0).abs() <= ETA_ONE_TOL {
            1.0
        } else {
            eta
        };
        Ok(ClassKappaPower { lambda, eta })
    }

    pub fn is_linear(&self) -> bool {
        self.eta == 1.0
    }

    pub fn eval(&self, s: f64) -> Result<f64> {
        if self.is_linear() {
            return Ok(self.lambda * s);
        }
        if self.eta.fract() == 0.0 {
            return Ok(self.lambda * s.powi(self.eta as i32));
        }
        if s < 0.0 {
            return Err(Error::Domain(format!(
                "fractional exponent {} of negative barrier value {s}",
                self.eta
            )));
        }
        Ok(self.lambda * s.powf(self.eta))
    }

    fn eval_jet(&self, s: &Jet) -> Result<Jet> {
        if self.is_linear() {
            return Ok(s.scale(self.lambda));
        }
        Ok(s.powf(self.eta)?.scale(self.lambda))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChainKind {
    Safety,
    Reach,
}

impl ChainKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChainKind::Safety => "safety",
            ChainKind::Reach => "reach",
        }
    }
}

/// How the distance to a center enters a barrier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RadialForm {
    /// `sum |d_i|^p`, compared against `radius^p`. With `p = 2` this is the
    /// squared Euclidean distance.
    PowerSum(f64),
    /// `||d||_p`, compared against `radius^p`.
    Norm(f64),
}

impl RadialForm {
    pub fn order(&self) -> f64 {
        match self {
            RadialForm::PowerSum(p) | RadialForm::Norm(p) => *p,
        }
    }

    fn validate(&self) -> Result<()> {
        let p = self.order();
        if p >= 1.0 && p.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "norm order must be >= 1, got {p}"
            )))
        }
    }

    fn eval_jet(&self, d: &[Jet]) -> Result<Jet> {
        let p = self.order();
        let mut acc = d[0].lift(0.0);
        for di in d {
            let sq = di.square();
            let term = if p == 2.0 { sq } else { sq.powf(p / 2.0)? };
            acc = acc.add(&term);
        }
        match self {
            RadialForm::PowerSum(_) => Ok(acc),
            RadialForm::Norm(_) => acc.powf(1.0 / p),
        }
    }
}

/// How the admissible radius of a reach region shrinks over `[t_start, t_reach]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReachSchedule {
    /// `eps(t)^p` decreases linearly from `eps0^p` to `eps_d^p`.
    #[default]
    PowerLinear,
    /// `eps(t)` decreases linearly from `eps0` to `eps_d`.
    RadiusLinear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReachSpec {
    pub center: Vec<f64>,
    pub eps0: f64,
    pub eps_d: f64,
    pub t_start: f64,
    pub t_reach: f64,
    pub t_remain: Option<f64>,
    pub form: RadialForm,
    pub schedule: ReachSchedule,
}

impl ReachSpec {
    /// Squared-distance reach region with the power-linear schedule.
    pub fn new(center: Vec<f64>, eps0: f64, eps_d: f64, t_start: f64, t_reach: f64) -> Self {
        ReachSpec {
            center,
            eps0,
            eps_d,
            t_start,
            t_reach,
            t_remain: None,
            form: RadialForm::PowerSum(2.0),
            schedule: ReachSchedule::PowerLinear,
        }
    }

    pub fn with_remain(mut self, t_remain: f64) -> Self {
        self.t_remain = Some(t_remain);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.form.validate()?;
        if self.center.is_empty() {
            return Err(Error::InvalidArgument("reach center is empty".into()));
        }
        if !(self.eps0 >= self.eps_d && self.eps_d >= 0.0 && self.eps0.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "reach radii must satisfy eps0 >= eps_d >= 0, got {} and {}",
                self.eps0, self.eps_d
            )));
        }
        if !(self.t_start < self.t_reach) {
            return Err(Error::InvalidArgument(format!(
                "reach window needs t_start < t_reach, got {} and {}",
                self.t_start, self.t_reach
            )));
        }
        if let Some(t2) = self.t_remain {
            if !(t2 >= self.t_reach) {
                return Err(Error::InvalidArgument(format!(
                    "remain time {t2} precedes reach time {}",
                    self.t_reach
                )));
            }
        }
        Ok(())
    }

    pub fn window_end(&self) -> f64 {
        self.t_remain.unwrap_or(self.t_reach)
    }

    /// Rate of decrease of the radius term on the shrinking segment.
    pub fn shrink_rate(&self) -> f64 {
        let p = self.form.order();
        let span = self.t_reach - self.t_start;
        match self.schedule {
            ReachSchedule::PowerLinear => (self.eps0.powf(p) - self.eps_d.powf(p)) / span,
            ReachSchedule::RadiusLinear => (self.eps0 - self.eps_d) / span,
        }
    }

    fn segment_at(&self, t: f64) -> Result<Segment> {
        let end = self.window_end();
        if t < self.t_start - WINDOW_SLACK || t > end + WINDOW_SLACK {
            return Err(Error::OutOfWindow {
                t,
                start: self.t_start,
                end,
            });
        }
        Ok(if self.t_remain.is_some() && t >= self.t_reach {
            Segment::Remain
        } else {
            Segment::Shrink
        })
    }

    fn radius_term(&self, t: &Jet, segment: Segment) -> Result<Jet> {
        let p = self.form.order();
        let elapsed = t.add_scalar(-self.t_start);
        match (segment, self.schedule) {
            (Segment::Remain, _) => Ok(t.lift(self.eps_d.powf(p))),
            (Segment::Shrink, ReachSchedule::PowerLinear) => Ok(elapsed
                .scale(-self.shrink_rate())
                .add_scalar(self.eps0.powf(p))),
            (Segment::Shrink, ReachSchedule::RadiusLinear) => {
                let eps = elapsed.scale(-self.shrink_rate()).add_scalar(self.eps0);
                if p == 2.0 {
                    Ok(eps.square())
                } else {
                    eps.powf(p)
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segment {
    Shrink,
    Remain,
}

#[derive(Clone, Debug, PartialEq)]
enum Psi0 {
    Circular {
        center: Vec<f64>,
        radius: f64,
        form: RadialForm,
    },
    Reach {
        spec: ReachSpec,
        frozen: Option<Segment>,
    },
}

/// Value and first/second partial derivatives of the top level `psi_{m-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TopDerivatives {
    pub value: f64,
    pub grad_x: DVector<f64>,
    pub dt: f64,
    pub hess_x: DMatrix<f64>,
    pub hess_xt: DVector<f64>,
    pub hess_tt: f64,
}

/// A barrier `psi_0` together with the class-kappa functions of its recursion.
///
/// `alphas[i]` generates `psi_{i+1}`; the last entry is the one used by the
/// top-level condition, so `alphas.len()` equals the relative degree.
#[derive(Clone, Debug, PartialEq)]
pub struct BarrierChain {
    name: String,
    kind: ChainKind,
    alphas: Vec<ClassKappaPower>,
    position: Vec<usize>,
    psi0: Psi0,
}

impl BarrierChain {
    /// `psi_0 = radial(pos - center) - radius^p`; the region to avoid is the
    /// inside of the circle.
    pub fn circular_safety(
        name: impl Into<String>,
        model: &dyn SystemModel,
        center: Vec<f64>,
        radius: f64,
        form: RadialForm,
        alphas: Vec<ClassKappaPower>,
    ) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "radius must be positive, got {radius}"
            )));
        }
        form.validate()?;
        let position = (0..center.len()).collect();
        let chain = BarrierChain {
            name: name.into(),
            kind: ChainKind::Safety,
            alphas,
            position,
            psi0: Psi0::Circular {
                center,
                radius,
                form,
            },
        };
        chain.check_shape(model)?;
        chain.verify_relative_degree(model)?;
        Ok(chain)
    }

    /// `psi_0 = eps(t)^p - radial(pos - center)` on the reach window, with a
    /// constant radius on the optional remain segment.
    pub fn reach_remain(
        name: impl Into<String>,
        model: &dyn SystemModel,
        spec: ReachSpec,
        alphas: Vec<ClassKappaPower>,
    ) -> Result<Self> {
        spec.validate()?;
        let position = (0..spec.center.len()).collect();
        let chain = BarrierChain {
            name: name.into(),
            kind: ChainKind::Reach,
            alphas,
            position,
            psi0: Psi0::Reach { spec, frozen: None },
        };
        chain.check_shape(model)?;
        chain.verify_relative_degree(model)?;
        Ok(chain)
    }

    fn check_shape(&self, model: &dyn SystemModel) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "chain `{}` needs at least one class-kappa function",
                self.name
            )));
        }
        if self.position.len() > model.state_dim() {
            return Err(Error::DimensionMismatch {
                what: "barrier center",
                expected: model.state_dim(),
                got: self.position.len(),
            });
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ChainKind {
        self.kind
    }

    pub fn relative_degree(&self) -> usize {
        self.alphas.len()
    }

    pub fn alphas(&self) -> &[ClassKappaPower] {
        &self.alphas
    }

    /// Class-kappa function of the top-level condition.
    pub fn top_alpha(&self) -> ClassKappaPower {
        self.alphas[self.alphas.len() - 1]
    }

    pub fn reach_spec(&self) -> Option<&ReachSpec> {
        match &self.psi0 {
            Psi0::Reach { spec, .. } => Some(spec),
            Psi0::Circular { .. } => None,
        }
    }

    /// `[start, end]` for reach chains.
    pub fn window(&self) -> Option<(f64, f64)> {
        self.reach_spec().map(|s| (s.t_start, s.window_end()))
    }

    /// Whether the chain contributes a constraint for a step starting at `t`.
    /// A window is half open: the chain retires once its end is reached.
    pub fn is_active(&self, t: f64) -> bool {
        match self.window() {
            None => true,
            Some((start, end)) => t >= start - WINDOW_SLACK && t < end - WINDOW_SLACK,
        }
    }

    /// A copy whose time dependence is pinned to the segment in force at `t`, so
    /// it can be evaluated across a whole sampling interval. Time-invariant
    /// chains are returned unchanged.
    pub fn frozen_at(&self, t: f64) -> Result<BarrierChain> {
        let mut out = self.clone();
        if let Psi0::Reach { spec, frozen } = &mut out.psi0 {
            *frozen = Some(spec.segment_at(t)?);
        }
        Ok(out)
    }

    /// Position coordinates that the barrier depends on.
    pub fn center(&self) -> &[f64] {
        match &self.psi0 {
            Psi0::Circular { center, .. } => center,
            Psi0::Reach { spec, .. } => &spec.center,
        }
    }

    pub fn form(&self) -> RadialForm {
        match &self.psi0 {
            Psi0::Circular { form, .. } => *form,
            Psi0::Reach { spec, .. } => spec.form,
        }
    }

    pub fn position_indices(&self) -> &[usize] {
        &self.position
    }

    fn psi0_jet(&self, x: &[Jet], t: &Jet) -> Result<Jet> {
        let d = |center: &[f64]| -> Vec<Jet> {
            self.position
                .iter()
                .zip(center)
                .map(|(&i, c)| x[i].add_scalar(-c))
                .collect()
        };
        match &self.psi0 {
            Psi0::Circular {
                center,
                radius,
                form,
            } => Ok(form
                .eval_jet(&d(center))?
                .add_scalar(-radius.powf(form.order()))),
            Psi0::Reach { spec, frozen } => {
                let segment = match frozen {
                    Some(s) => *s,
                    None => spec.segment_at(t.value())?,
                };
                let r = spec.radius_term(t, segment)?;
                Ok(r.sub(&spec.form.eval_jet(&d(&spec.center))?))
            }
        }
    }

    /// Levels `psi_0 ..= psi_level` as jets in the flow time, with coefficients
    /// carrying derivatives in `dim` variables (0, or state + time).
    fn level_jets(
        &self,
        model: &dyn SystemModel,
        x: &DVector<f64>,
        t: f64,
        level: usize,
        with_derivatives: bool,
    ) -> Result<Vec<Jet>> {
        check_dim("state", model.state_dim(), x.len())?;
        if level >= self.relative_degree() {
            return Err(Error::InvalidArgument(format!(
                "level {level} out of range for chain `{}` of relative degree {}",
                self.name,
                self.relative_degree()
            )));
        }
        let n = model.state_dim();
        let dim = if with_derivatives { n + 1 } else { 0 };
        let seed = |v: f64, i: usize| {
            if with_derivatives {
                Hyper::variable(v, i, dim)
            } else {
                Hyper::constant(v, dim)
            }
        };
        let mut xs: Vec<Jet> = (0..n)
            .map(|i| Jet::from_hyper(seed(x[i], i), level))
            .collect();
        let mut tj = Jet::from_hyper(seed(t, n), level);
        if level >= 1 {
            tj.c[1] = Hyper::constant(1.0, dim);
        }
        for k in 0..level {
            let f = model.drift_jet(&xs, &tj);
            for (xi, fi) in xs.iter_mut().zip(&f) {
                xi.c[k + 1] = fi.c[k].scale(1.0 / (k + 1) as f64);
            }
        }
        let mut levels = vec![self.psi0_jet(&xs, &tj)?];
        for i in 1..=level {
            let prev = &levels[i - 1];
            let next = prev.derivative().add(&self.alphas[i - 1].eval_jet(prev)?);
            levels.push(next);
        }
        Ok(levels)
    }

    /// `psi_level(x, t)`.
    pub fn eval_psi(
        &self,
        model: &dyn SystemModel,
        level: usize,
        x: &DVector<f64>,
        t: f64,
    ) -> Result<f64> {
        Ok(self.level_jets(model, x, t, level, false)?[level].value())
    }

    /// All levels `psi_0 ..= psi_{m-1}`.
    pub fn eval_levels(
        &self,
        model: &dyn SystemModel,
        x: &DVector<f64>,
        t: f64,
    ) -> Result<Vec<f64>> {
        let top = self.relative_degree() - 1;
        Ok(self
            .level_jets(model, x, t, top, false)?
            .iter()
            .map(Jet::value)
            .collect())
    }

    /// Value, gradient and Hessian of `psi_level` in `(x, t)`.
    pub fn level_hyper(
        &self,
        model: &dyn SystemModel,
        level: usize,
        x: &DVector<f64>,
        t: f64,
    ) -> Result<Hyper> {
        let mut levels = self.level_jets(model, x, t, level, true)?;
        Ok(levels.swap_remove(level).c.swap_remove(0))
    }

    pub fn top_derivatives(
        &self,
        model: &dyn SystemModel,
        x: &DVector<f64>,
        t: f64,
    ) -> Result<TopDerivatives> {
        let n = model.state_dim();
        let h = self.level_hyper(model, self.relative_degree() - 1, x, t)?;
        Ok(TopDerivatives {
            value: h.v,
            grad_x: DVector::from_fn(n, |i, _| h.g[i]),
            dt: h.g[n],
            hess_x: DMatrix::from_fn(n, n, |i, j| h.hess(i, j)),
            hess_xt: DVector::from_fn(n, |i, _| h.hess(i, n)),
            hess_tt: h.hess(n, n),
        })
    }

    /// `(L_f psi_{m-1}, L_g psi_{m-1}, d/dt psi_{m-1})`, so that the total
    /// derivative under input `u` is `lf + lg . u + dt`.
    pub fn top_lie_derivatives(
        &self,
        model: &dyn SystemModel,
        x: &DVector<f64>,
        t: f64,
    ) -> Result<(f64, DVector<f64>, f64)> {
        let d = self.top_derivatives(model, x, t)?;
        let lf = d.grad_x.dot(&model.drift(x, t));
        let lg = model.actuation(x, t).transpose() * &d.grad_x;
        Ok((lf, lg, d.dt))
    }

    /// Total time derivative of `psi_{m-1}` under input `u`.
    pub fn top_rate(
        &self,
        model: &dyn SystemModel,
        x: &DVector<f64>,
        u: &DVector<f64>,
        t: f64,
    ) -> Result<f64> {
        check_dim("input", model.input_dim(), u.len())?;
        let (lf, lg, dt) = self.top_lie_derivatives(model, x, t)?;
        Ok(lf + lg.dot(u) + dt)
    }

    /// `psi_0 >= 0`.
    pub fn contains(&self, model: &dyn SystemModel, x: &DVector<f64>, t: f64) -> Result<bool> {
        Ok(self.eval_psi(model, 0, x, t)? >= 0.0)
    }

    /// Checks that the input is absent from `d/dt psi_i` for `i < m - 1` and
    /// present in `d/dt psi_{m-1}`, on seeded random states.
    pub fn verify_relative_degree(&self, model: &dyn SystemModel) -> Result<()> {
        let n = model.state_dim();
        let m = self.relative_degree();
        let (t_lo, t_hi) = match self.window() {
            Some((a, b)) => (a, b),
            None => (0.0, 10.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
        let mut top_seen = false;
        let mut evaluated = 0;
        let center = self.center().to_vec();
        for s in 0..RELDEG_SAMPLES {
            let mut x = DVector::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
            // positions at mixed distances from the center, so small regions get hit
            let scale = [10.0, 1.0, 0.1][s % 3];
            for (&i, &c) in self.position.iter().zip(center.iter()) {
                x[i] = c + scale * rng.random_range(-1.0..1.0);
            }
            let t = rng.random_range(t_lo..=t_hi);
            let g = model.actuation(&x, t);
            let levels = match self.level_jets(model, &x, t, m - 1, true) {
                Ok(l) => l,
                Err(Error::Domain(_)) => continue,
                Err(e) => return Err(e),
            };
            evaluated += 1;
            for (i, jet) in levels.iter().enumerate() {
                let grad = DVector::from_fn(n, |j, _| jet.c[0].g[j]);
                let lg = g.transpose() * &grad;
                let scale = 1.0 + grad.norm() * g.norm();
                let present = lg.amax() > RELDEG_TOL * scale;
                if i + 1 < m && present {
                    return Err(Error::RelativeDegree {
                        chain: self.name.clone(),
                        reason: format!("input appears in the derivative of level {i}"),
                    });
                }
                if i + 1 == m && present {
                    top_seen = true;
                }
            }
        }
        if evaluated == 0 {
            return Err(Error::RelativeDegree {
                chain: self.name.clone(),
                reason: "no sample state could be evaluated".into(),
            });
        }
        if !top_seen {
            return Err(Error::RelativeDegree {
                chain: self.name.clone(),
                reason: format!("input never appears in the derivative of level {}", m - 1),
            });
        }
        Ok(())
    }
}

/// Circular safety chain on the leading position coordinates.
pub fn make_circular_safety(
    model: &dyn SystemModel,
    center: Vec<f64>,
    radius: f64,
    norm_order: f64,
    alphas: Vec<ClassKappaPower>,
) -> Result<BarrierChain> {
    BarrierChain::circular_safety(
        "safety",
        model,
        center,
        radius,
        RadialForm::PowerSum(norm_order),
        alphas,
    )
}

pub fn make_reach_remain(
    model: &dyn SystemModel,
    spec: ReachSpec,
    alphas: Vec<ClassKappaPower>,
) -> Result<BarrierChain> {
    BarrierChain::reach_remain("reach", model, spec, alphas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::make_unicycle;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn lin(lambda: f64, m: usize) -> Vec<ClassKappaPower> {
        vec![ClassKappaPower::new(lambda, 1.0).unwrap(); m]
    }

    fn obstacle() -> BarrierChain {
        make_circular_safety(&make_unicycle(), vec![0.0, 0.0], 1.0, 2.0, lin(2.0, 2)).unwrap()
    }

    #[test]
    fn circular_levels_at_start() {
        let m = make_unicycle();
        let c = obstacle();
        let x = dv(&[-3.0, 0.0, 0.0, 1.0]);
        assert_eq!(c.eval_psi(&m, 0, &x, 0.0).unwrap(), 8.0);
        assert_eq!(c.eval_psi(&m, 1, &x, 0.0).unwrap(), 10.0);
        assert_eq!(c.eval_levels(&m, &x, 0.0).unwrap(), vec![8.0, 10.0]);
    }

    #[test]
    fn boundary_with_tangent_motion_has_zero_levels() {
        let m = make_unicycle();
        let c = obstacle();
        // on the circle, heading tangent to it
        let x = dv(&[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(c.eval_psi(&m, 0, &x, 0.0).unwrap(), 0.0);
        assert_eq!(c.eval_psi(&m, 1, &x, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn lie_derivatives_on_the_axis() {
        let m = make_unicycle();
        let (lf, lg, dt) = obstacle()
            .top_lie_derivatives(&m, &dv(&[-3.0, 0.0, 0.0, 1.0]), 0.0)
            .unwrap();
        // psi_1 = 2 v (x cos th + y sin th) + 2 (x^2 + y^2 - 1)
        // d/dtheta = 2 v (-x sin th + y cos th) = 0, d/dv = 2 x cos th = -6
        assert_eq!(lg, dv(&[0.0, -6.0]));
        assert_eq!(dt, 0.0);
        // L_f = 2 v^2 + 2 * 2 v (x cos th) = 2 - 12
        assert!((lf + 10.0).abs() < 1e-12);
    }

    #[test]
    fn circle_catalog_values() {
        let m = make_unicycle();
        let c = make_circular_safety(&m, vec![8.0, 0.0], 2.0, 2.0, lin(1.0, 2)).unwrap();
        assert_eq!(
            c.eval_psi(&m, 0, &dv(&[-3.0, 0.0, 0.0, 0.0]), 0.0).unwrap(),
            117.0
        );
        let h = c
            .level_hyper(&m, 0, &dv(&[-3.0, 0.0, 0.0, 0.0]), 0.0)
            .unwrap();
        assert_eq!(&h.g[..2], &[-22.0, 0.0]);
        let h = obstacle()
            .level_hyper(&m, 0, &dv(&[-3.0, 0.0, 0.0, 0.0]), 0.0)
            .unwrap();
        assert_eq!(&h.g[..2], &[-6.0, 0.0]);
    }

    #[test]
    fn norm_form_is_literal() {
        let m = make_unicycle();
        let c = BarrierChain::circular_safety(
            "n",
            &m,
            vec![0.0, 0.0],
            1.5,
            RadialForm::Norm(2.0),
            lin(1.0, 2),
        )
        .unwrap();
        let v = c.eval_psi(&m, 0, &dv(&[3.0, 4.0, 0.0, 0.0]), 0.0).unwrap();
        assert!((v - (5.0 - 2.25)).abs() < 1e-12);
    }

    #[test]
    fn reach_schedule() {
        let m = make_unicycle();
        let c = make_reach_remain(
            &m,
            ReachSpec::new(vec![3.0, 0.0], 7.0, 1.0, 0.0, 5.0),
            lin(2.0, 2),
        )
        .unwrap();
        let x = dv(&[-3.0, 0.0, 0.0, 1.0]);
        assert_eq!(c.eval_psi(&m, 0, &x, 0.0).unwrap(), 13.0);
        let at_center = dv(&[3.0, 0.0, 0.0, 0.0]);
        assert!((c.eval_psi(&m, 0, &at_center, 5.0).unwrap() - 1.0).abs() < 1e-12);
        let h0 = c.level_hyper(&m, 0, &x, 2.0).unwrap();
        assert!((h0.g[4] + 9.6).abs() < 1e-12);
        // psi_1 = psi_0' + 2 psi_0, and psi_0' has no explicit time dependence
        let (_, _, dt) = c.top_lie_derivatives(&m, &x, 2.0).unwrap();
        assert!((dt + 2.0 * 9.6).abs() < 1e-12);
        assert!(matches!(
            c.eval_psi(&m, 0, &x, 5.5),
            Err(Error::OutOfWindow { .. })
        ));
    }

    #[test]
    fn remain_segment_is_continuous_and_constant() {
        let m = make_unicycle();
        let spec = ReachSpec::new(vec![3.0, 0.0], 7.0, 1.0, 0.0, 5.0).with_remain(12.0);
        let c = make_reach_remain(&m, spec, lin(2.0, 2)).unwrap();
        let x = dv(&[3.2, 0.1, 0.3, 0.5]);
        let before = c.eval_psi(&m, 0, &x, 5.0 - 1e-12).unwrap();
        let at = c.eval_psi(&m, 0, &x, 5.0).unwrap();
        assert!((before - at).abs() < 1e-9);
        let (_, _, dt) = c.top_lie_derivatives(&m, &x, 8.0).unwrap();
        assert_eq!(dt, 0.0);
        assert!(c.is_active(11.9));
        assert!(!c.is_active(12.0));
    }

    #[test]
    fn frozen_chain_extends_its_segment() {
        let m = make_unicycle();
        let spec = ReachSpec::new(vec![3.0, 0.0], 7.0, 1.0, 0.0, 5.0);
        let c = make_reach_remain(&m, spec, lin(2.0, 2)).unwrap();
        let f = c.frozen_at(4.95).unwrap();
        let x = dv(&[3.0, 0.0, 0.0, 0.0]);
        // beyond the window the frozen copy keeps shrinking linearly
        assert!((f.eval_psi(&m, 0, &x, 5.05).unwrap() - (1.0 - 0.48)).abs() < 1e-12);
        assert!(c.frozen_at(6.0).is_err());
    }

    #[test]
    fn radius_linear_schedule() {
        let m = make_unicycle();
        let mut spec = ReachSpec::new(vec![0.0, 0.0], 4.0, 2.0, 0.0, 2.0);
        spec.schedule = ReachSchedule::RadiusLinear;
        let c = make_reach_remain(&m, spec, lin(1.0, 2)).unwrap();
        // eps(1) = 3
        let v = c.eval_psi(&m, 0, &dv(&[0.0; 4]), 1.0).unwrap();
        assert!((v - 9.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_relative_degree_is_rejected() {
        let m = make_unicycle();
        let err = make_circular_safety(&m, vec![0.0, 0.0], 1.0, 2.0, lin(1.0, 1)).unwrap_err();
        assert!(matches!(err, Error::RelativeDegree { .. }));
        let err = make_circular_safety(&m, vec![0.0, 0.0], 1.0, 2.0, lin(1.0, 3)).unwrap_err();
        assert!(matches!(err, Error::RelativeDegree { .. }));
    }

    #[test]
    fn fractional_eta_needs_nonnegative_argument() {
        let k = ClassKappaPower::new(2.0, 0.5).unwrap();
        assert!(matches!(k.eval(-1.0), Err(Error::Domain(_))));
        assert_eq!(
            ClassKappaPower::new(2.0, 2.0).unwrap().eval(-1.0).unwrap(),
            2.0
        );
        assert!(ClassKappaPower::new(2.0, 1.0 + 1e-13).unwrap().is_linear());
        assert!(ClassKappaPower::new(0.0, 1.0).is_err());
    }

    #[test]
    fn level_out_of_range() {
        let m = make_unicycle();
        assert!(obstacle().eval_psi(&m, 2, &dv(&[0.0; 4]), 0.0).is_err());
    }
}
