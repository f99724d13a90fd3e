//! Bounds on the second derivative of the top barrier level over one sampling
//! interval: the instantaneous bound `Phi`, the Gronwall tube, node sampling
//! and the Lipschitz correction.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::barrier::BarrierChain;
use crate::dynamics::{check_dim, eval_field, InputBox, SystemModel};
use crate::error::{Error, Result};
use crate::ode::rk4_step;
use crate::quadrature::unit_nodes;

pub const DEFAULT_NODES: usize = 5;
pub const DEFAULT_SAFETY_FACTOR: f64 = 1.5;
pub const DEFAULT_LIPSCHITZ_SAMPLES: usize = 64;

/// Fraction of the tube radius the state may move before cached Lipschitz
/// constants are re-estimated.
const CACHE_MOVE_FRACTION: f64 = 0.1;
const LOCAL_PAIR_SHRINK: f64 = 0.1;

/// Which inputs the bound is taken over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidatePolicy {
    /// Input-box vertices plus the previously applied input.
    BoxVertices,
    /// Only the previously held input, standing in for the input of the
    /// coming interval.
    PreviousInput,
    /// Only a single input; the simulator iterates until the bound taken at
    /// the solved input does not exceed the bound it was solved with.
    CertifiedInput,
    /// Vertices of the box handed to the estimator plus the previous input.
    /// The simulator hands it a box around the previous input and restricts
    /// the QP to the same box, widening it only when the QP is infeasible.
    #[default]
    TrustRegion,
}

impl CandidatePolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            CandidatePolicy::BoxVertices => "box-vertices",
            CandidatePolicy::PreviousInput => "previous-input",
            CandidatePolicy::CertifiedInput => "certified-input",
            CandidatePolicy::TrustRegion => "trust-region",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSettings {
    pub nodes: usize,
    pub safety_factor: f64,
    pub lipschitz_samples: usize,
    pub seed: u64,
    pub candidates: CandidatePolicy,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        EstimatorSettings {
            nodes: DEFAULT_NODES,
            safety_factor: DEFAULT_SAFETY_FACTOR,
            lipschitz_samples: DEFAULT_LIPSCHITZ_SAMPLES,
            seed: 0,
            candidates: CandidatePolicy::default(),
        }
    }
}

impl EstimatorSettings {
    pub fn validate(&self) -> Result<()> {
        if !(3..=7).contains(&self.nodes) {
            return Err(Error::InvalidArgument(format!(
                "node count must be in 3..=7, got {}",
                self.nodes
            )));
        }
        if !(self.safety_factor >= 1.0 && self.safety_factor.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "safety factor must be >= 1, got {}",
                self.safety_factor
            )));
        }
        if self.lipschitz_samples < 2 {
            return Err(Error::InvalidArgument(
                "need at least two Lipschitz samples".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeRecord {
    pub t: f64,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub phi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundEstimate {
    pub m_hat: f64,
    pub correction: f64,
    pub m_bar: f64,
    pub nodes_used: usize,
    pub node_records: Vec<NodeRecord>,
    pub tube_radius: f64,
    pub lipschitz_f: f64,
    pub lipschitz_phi: f64,
    pub delta_x: f64,
    pub delta_u: f64,
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

fn symmetric_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().symmetric_eigen().eigenvalues.amax()
}

/// Frobenius norm of the `n x q x n` actuation Jacobian.
fn tensor_norm(gx: &[DMatrix<f64>]) -> f64 {
    gx.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt()
}

/// Term-wise bound on `|d^2/dt^2 psi_{m-1}|` at `(x, u, t)`.
pub fn phi(
    model: &dyn SystemModel,
    chain: &BarrierChain,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
) -> Result<f64> {
    let f_field = eval_field(model, x, u, t)?;
    let d = chain.top_derivatives(model, x, t)?;
    let nf = f_field.norm();
    let ng = d.grad_x.norm();
    let fx = spectral_norm(&model.drift_jacobian(x, t));
    let gx = tensor_norm(&model.actuation_jacobian(x, t));
    let ft = model.drift_time_partial(x, t).norm();
    let gt = spectral_norm(&model.actuation_time_partial(x, t));
    let nu = u.norm();
    Ok(symmetric_norm(&d.hess_x) * nf * nf
        + ng * (fx + gx * nu) * nf
        + 2.0 * d.hess_xt.norm() * nf
        + d.hess_tt.abs()
        + ng * (ft + gt * nu))
}

/// Exact `d^2/dt^2 psi_{m-1}` along `x' = f + g u` with `u` held constant.
pub fn psi_second_derivative(
    model: &dyn SystemModel,
    chain: &BarrierChain,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
) -> Result<f64> {
    let f_field = eval_field(model, x, u, t)?;
    let d = chain.top_derivatives(model, x, t)?;
    let gx = model.actuation_jacobian(x, t);
    let mut jac = model.drift_jacobian(x, t);
    for (k, gk) in gx.iter().enumerate() {
        let col = gk * u;
        for i in 0..jac.nrows() {
            jac[(i, k)] += col[i];
        }
    }
    let field_rate =
        &jac * &f_field + model.drift_time_partial(x, t) + model.actuation_time_partial(x, t) * u;
    Ok(f_field.dot(&(&d.hess_x * &f_field))
        + d.grad_x.dot(&field_rate)
        + 2.0 * d.hess_xt.dot(&f_field)
        + d.hess_tt)
}

/// Gronwall radius `(e^{L dt} - 1) / L * ||F||` (`dt ||F||` when `L = 0`).
pub fn tube_radius_from_speed(speed: f64, dt: f64, lipschitz_f: f64) -> Result<f64> {
    if !(dt > 0.0) || !(lipschitz_f >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tube radius needs dt > 0 and L_F >= 0 (got {dt}, {lipschitz_f})"
        )));
    }
    if lipschitz_f == 0.0 {
        return Ok(dt * speed);
    }
    Ok((lipschitz_f * dt).exp_m1() / lipschitz_f * speed)
}

pub fn tube_radius(
    model: &dyn SystemModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    dt: f64,
    lipschitz_f: f64,
) -> Result<f64> {
    tube_radius_from_speed(eval_field(model, x, u, t)?.norm(), dt, lipschitz_f)
}

/// Sampled Lipschitz constant of `f` over the box `[lower, upper]`, multiplied
/// by `safety_factor`.
///
/// Half the pairs are drawn independently over the box, half as close
/// neighbours, which tracks the local slope. Flat box directions are simply
/// not varied; a box that is a single point yields 0.
pub fn estimate_lipschitz<F>(
    f: F,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    samples: usize,
    safety_factor: f64,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    check_dim("box upper", lower.len(), upper.len())?;
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let width = upper - lower;
    if width.iter().any(|w| *w < 0.0) {
        return Err(Error::InvalidArgument("box has lower > upper".into()));
    }
    if width.iter().all(|w| *w == 0.0) {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = lower.len();
    let uniform = |rng: &mut ChaCha8Rng| {
        DVector::from_fn(n, |i, _| lower[i] + width[i] * rng.random::<f64>())
    };
    let mut best: f64 = 0.0;
    for k in 0..samples {
        let a = uniform(&mut rng);
        let b = if k % 2 == 0 {
            uniform(&mut rng)
        } else {
            DVector::from_fn(n, |i, _| {
                let step = LOCAL_PAIR_SHRINK * width[i] * (2.0 * rng.random::<f64>() - 1.0);
                (a[i] + step).clamp(lower[i], upper[i])
            })
        };
        let gap = (&a - &b).norm();
        if gap == 0.0 {
            continue;
        }
        let ratio = (f(&a)? - f(&b)?).norm() / gap;
        best = best.max(ratio);
    }
    Ok(best * safety_factor)
}

fn split_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Inputs the bound is taken over, and the region of input space that the
/// Lipschitz estimates range over.
fn candidate_inputs(
    policy: CandidatePolicy,
    input_box: &InputBox,
    previous_input: &DVector<f64>,
) -> (Vec<DVector<f64>>, DVector<f64>, DVector<f64>) {
    match policy {
        CandidatePolicy::BoxVertices | CandidatePolicy::TrustRegion => {
            let mut c = input_box.vertices();
            c.push(previous_input.clone());
            (c, input_box.lower().clone(), input_box.upper().clone())
        }
        CandidatePolicy::PreviousInput | CandidatePolicy::CertifiedInput => (
            vec![previous_input.clone()],
            previous_input.clone(),
            previous_input.clone(),
        ),
    }
}

fn max_pairwise_gap(points: &[DVector<f64>]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max((a - b).norm());
        }
    }
    best
}

/// Whether the actuation is constant in state and time at `x`, which makes
/// `Phi` convex in `u` so that its maximum over a box sits at a vertex.
fn actuation_is_constant(model: &dyn SystemModel, x: &DVector<f64>, t: f64) -> bool {
    tensor_norm(&model.actuation_jacobian(x, t)) == 0.0
        && model.actuation_time_partial(x, t).amax() == 0.0
}

#[derive(Clone, Debug, PartialEq)]
struct CacheEntry {
    anchor: DVector<f64>,
    radius: f64,
    input_lower: DVector<f64>,
    input_upper: DVector<f64>,
    lipschitz_f: f64,
    lipschitz_phi: f64,
    box_radius: f64,
}

/// Per-chain cache of Lipschitz estimates, owned by a single simulation.
#[derive(Clone, Debug, Default)]
pub struct LipschitzCache {
    entries: Vec<Option<CacheEntry>>,
    hits: usize,
    misses: usize,
}

impl LipschitzCache {
    pub fn new(chains: usize) -> Self {
        LipschitzCache {
            entries: vec![None; chains],
            hits: 0,
            misses: 0,
        }
    }

    pub fn hits(&self) -> usize {
        self.hits
    }

    pub fn misses(&self) -> usize {
        self.misses
    }

    pub fn clear(&mut self) {
        self.entries.iter_mut().for_each(|e| *e = None);
    }
}

/// `M_bar = M_hat + L_Phi (Delta_x + Delta_u)` for one chain over
/// `[t_k, t_k + dt]`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_mbar(
    model: &dyn SystemModel,
    chain: &BarrierChain,
    x: &DVector<f64>,
    t_k: f64,
    dt: f64,
    input_box: &InputBox,
    previous_input: &DVector<f64>,
    settings: &EstimatorSettings,
) -> Result<BoundEstimate> {
    estimate_mbar_cached(
        model,
        chain,
        x,
        t_k,
        dt,
        input_box,
        previous_input,
        settings,
        None,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_mbar_cached(
    model: &dyn SystemModel,
    chain: &BarrierChain,
    x: &DVector<f64>,
    t_k: f64,
    dt: f64,
    input_box: &InputBox,
    previous_input: &DVector<f64>,
    settings: &EstimatorSettings,
    cache: Option<(&mut LipschitzCache, usize, u64)>,
) -> Result<BoundEstimate> {
    settings.validate()?;
    check_dim("state", model.state_dim(), x.len())?;
    check_dim("previous input", model.input_dim(), previous_input.len())?;
    check_dim("input box", model.input_dim(), input_box.dim())?;
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let n = model.state_dim();
    let q = model.input_dim();
    let (candidates, u_lo, u_hi) = candidate_inputs(settings.candidates, input_box, previous_input);
    let speed = candidates
        .iter()
        .map(|u| eval_field(model, x, u, t_k).map(|f| f.norm()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let (stream_key, step_key) = match &cache {
        Some((_, idx, step)) => (*idx as u64, *step),
        None => (0, 0),
    };
    let base_seed = split_seed(split_seed(settings.seed, stream_key + 1), step_key + 1);

    let cached = match &cache {
        Some((c, idx, _)) => c.entries.get(*idx).cloned().flatten().filter(|e| {
            e.input_lower == u_lo
                && e.input_upper == u_hi
                && (x - &e.anchor).norm() < CACHE_MOVE_FRACTION * e.radius
        }),
        None => None,
    };

    let t_mid = t_k + 0.5 * dt;
    let (lipschitz_f, rho, lipschitz_phi) = match cached {
        Some(e) => {
            let rho = tube_radius_from_speed(speed, dt, e.lipschitz_f)?;
            if rho + (x - &e.anchor).norm() <= e.box_radius {
                if let Some((c, _, _)) = cache {
                    c.hits += 1;
                }
                (e.lipschitz_f, rho, e.lipschitz_phi)
            } else {
                let fresh = fresh_constants(
                    model, chain, x, t_mid, dt, speed, &u_lo, &u_hi, settings, base_seed,
                )?;
                store(cache, x, &u_lo, &u_hi, &fresh);
                (fresh.0, fresh.1, fresh.2)
            }
        }
        None => {
            let fresh = fresh_constants(
                model, chain, x, t_mid, dt, speed, &u_lo, &u_hi, settings, base_seed,
            )?;
            store(cache, x, &u_lo, &u_hi, &fresh);
            (fresh.0, fresh.1, fresh.2)
        }
    };

    let gammas = unit_nodes(settings.nodes)?;
    let field =
        |t: f64, y: &DVector<f64>| model.drift(y, t) + model.actuation(y, t) * previous_input;
    let mut node_records = Vec::with_capacity(gammas.len() * candidates.len());
    let mut state = x.clone();
    let mut t_prev = t_k;
    let mut m_hat: f64 = 0.0;
    for g in &gammas {
        let t_i = t_k + g * dt;
        state = rk4_step(field, t_prev, &state, t_i - t_prev);
        t_prev = t_i;
        for u in &candidates {
            let value = phi(model, chain, &state, u, t_i)?;
            m_hat = m_hat.max(value);
            node_records.push(NodeRecord {
                t: t_i,
                x: state.clone(),
                u: u.clone(),
                phi: value,
            });
        }
    }

    let delta_x = 0.5 * rho;
    let delta_u = match settings.candidates {
        CandidatePolicy::PreviousInput | CandidatePolicy::CertifiedInput => 0.0,
        CandidatePolicy::BoxVertices | CandidatePolicy::TrustRegion
            if actuation_is_constant(model, x, t_k) =>
        {
            0.0
        }
        CandidatePolicy::BoxVertices | CandidatePolicy::TrustRegion => {
            0.5 * max_pairwise_gap(&candidates)
        }
    };
    debug_assert_eq!(n + q, x.len() + previous_input.len());
    let correction = lipschitz_phi * (delta_x + delta_u);
    Ok(BoundEstimate {
        m_hat,
        correction,
        m_bar: m_hat + correction,
        nodes_used: gammas.len(),
        node_records,
        tube_radius: rho,
        lipschitz_f,
        lipschitz_phi,
        delta_x,
        delta_u,
    })
}

type Constants = (f64, f64, f64, f64);

fn store(
    cache: Option<(&mut LipschitzCache, usize, u64)>,
    x: &DVector<f64>,
    u_lo: &DVector<f64>,
    u_hi: &DVector<f64>,
    c: &Constants,
) {
    if let Some((cache, idx, _)) = cache {
        cache.misses += 1;
        if cache.entries.len() <= idx {
            cache.entries.resize(idx + 1, None);
        }
        cache.entries[idx] = Some(CacheEntry {
            anchor: x.clone(),
            radius: c.1,
            input_lower: u_lo.clone(),
            input_upper: u_hi.clone(),
            lipschitz_f: c.0,
            lipschitz_phi: c.2,
            box_radius: c.3,
        });
    }
}

/// `(L_F, rho, L_Phi, box half-width)`. The box is grown until it contains the
/// tube its own `L_F` implies.
#[allow(clippy::too_many_arguments)]
fn fresh_constants(
    model: &dyn SystemModel,
    chain: &BarrierChain,
    x: &DVector<f64>,
    t: f64,
    dt: f64,
    speed: f64,
    u_lo: &DVector<f64>,
    u_hi: &DVector<f64>,
    settings: &EstimatorSettings,
    seed: u64,
) -> Result<Constants> {
    let n = x.len();
    let input_corners = InputBox::new(
        u_lo.iter().copied().collect(),
        u_hi.iter().copied().collect(),
    )?
    .vertices();
    let mut half = 2.0 * dt * speed;
    let mut lipschitz_f = 0.0;
    let mut rho = tube_radius_from_speed(speed, dt, 0.0)?;
    for round in 0..8 {
        let lo = x.add_scalar(-half);
        let hi = x.add_scalar(half);
        lipschitz_f = 0.0;
        for (j, u) in input_corners.iter().enumerate() {
            let l = estimate_lipschitz(
                |y| eval_field(model, y, u, t),
                &lo,
                &hi,
                settings.lipschitz_samples,
                settings.safety_factor,
                split_seed(seed, 100 + 10 * round + j as u64),
            )?;
            lipschitz_f = f64::max(lipschitz_f, l);
        }
        rho = tube_radius_from_speed(speed, dt, lipschitz_f)?;
        if rho <= half {
            break;
        }
        half = 1.5 * rho;
    }
    let half = half.max(rho);
    let q = u_lo.len();
    let lo = DVector::from_fn(n + q, |i, _| if i < n { x[i] - rho } else { u_lo[i - n] });
    let hi = DVector::from_fn(n + q, |i, _| if i < n { x[i] + rho } else { u_hi[i - n] });
    let lipschitz_phi = estimate_lipschitz(
        |z| {
            let xs = z.rows(0, n).into_owned();
            let us = z.rows(n, q).into_owned();
            Ok(DVector::from_element(1, phi(model, chain, &xs, &us, t)?))
        },
        &lo,
        &hi,
        settings.lipschitz_samples,
        settings.safety_factor,
        split_seed(seed, 7),
    )?;
    Ok((lipschitz_f, rho, lipschitz_phi, half))
}
