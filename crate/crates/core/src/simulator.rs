//! Zero-order-hold closed loop with a dense inter-sample audit.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::barrier::{BarrierChain, ChainKind};
use crate::constraint_qp::{build_qp, hocbf_row, sacbf_row, SacbfRow};
use crate::dynamics::{check_dim, InputBox, SystemModel};
use crate::error::{Error, Result};
use crate::ode::{integrate_dense, DenseSolution, OdeOptions};
use crate::qp::QpStatus;
use crate::scenario::ScenarioConfig;
use crate::taylor_bound::{
    estimate_mbar_cached, tube_radius, BoundEstimate, CandidatePolicy, EstimatorSettings,
    LipschitzCache,
};

pub const DEFAULT_AUDIT_TOL: f64 = 1e-6;
pub const DEFAULT_INTEGRATOR_TOL: f64 = 1e-10;
/// Distance slack when deciding that a reach region has been entered.
pub const REACH_DISTANCE_TOL: f64 = 1e-6;

/// Rounds of the bound/QP fixed point for [`CandidatePolicy::CertifiedInput`].
const FIXED_POINT_ROUNDS: usize = 8;
/// Headroom added to the bound when a fixed-point round fails to certify.
const FIXED_POINT_MARGIN: f64 = 0.1;
/// Trust-region half-widths tried in turn, as fractions of the input box
/// half-width. The last one covers the whole box from any centre.
const TRUST_REGION_FRACTIONS: [f64; 7] = [1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 0.25, 0.5, 1.0, 2.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Hocbf,
    Sacbf,
    #[serde(rename = "r-sacbf", alias = "r_sacbf")]
    RSacbf,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [
        ControllerKind::Hocbf,
        ControllerKind::Sacbf,
        ControllerKind::RSacbf,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::Hocbf => "hocbf",
            ControllerKind::Sacbf => "sacbf",
            ControllerKind::RSacbf => "r-sacbf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hocbf" => Ok(ControllerKind::Hocbf),
            "sacbf" => Ok(ControllerKind::Sacbf),
            "r-sacbf" | "r_sacbf" => Ok(ControllerKind::RSacbf),
            other => Err(Error::InvalidArgument(format!(
                "unknown controller `{other}`"
            ))),
        }
    }

    pub fn uses_bound(&self) -> bool {
        !matches!(self, ControllerKind::Hocbf)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfeasibilityPolicy {
    /// Apply the last optimal input, clipped to the box (zero before any).
    #[default]
    HoldPrevious,
    ZeroInput,
}

impl InfeasibilityPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            InfeasibilityPolicy::HoldPrevious => "hold-previous",
            InfeasibilityPolicy::ZeroInput => "zero-input",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepStatus {
    Optimal,
    Infeasible,
    SetExit,
}

impl StepStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            StepStatus::Optimal => "optimal",
            StepStatus::Infeasible => "infeasible",
            StepStatus::SetExit => "set_exit",
        }
    }
}

/// Everything a run needs once the scenario has been resolved.
#[derive(Debug)]
pub struct SimSetup<'a> {
    pub model: &'a dyn SystemModel,
    pub chains: Vec<BarrierChain>,
    pub weights: Vec<f64>,
    pub initial_state: DVector<f64>,
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
    pub controller: ControllerKind,
    pub input_box: InputBox,
    pub estimator: EstimatorSettings,
    pub policy: InfeasibilityPolicy,
    pub audit_substep: f64,
    pub ode: OdeOptions,
    pub audit_tol: f64,
}

/// Per-chain record of one sampling step.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainStep {
    /// `psi_0 ..= psi_{m-1}` at `t_k`.
    pub levels: Vec<f64>,
    /// Comparison bound `L(t_k, dt)`; NaN for the baseline controller.
    pub bound: f64,
    pub m_hat: f64,
    pub correction: f64,
    pub m_bar: f64,
    pub omega: f64,
    /// Row slack at the applied input; NaN when no row was formed.
    pub slack: f64,
    /// Realized `d/dt psi_{m-1}` at `t_k` under the applied input.
    pub psi_rate: f64,
    pub tube_radius: f64,
    pub tube_excursion: f64,
    /// Largest `|psi''_{m-1}|` over the dense grid, by central differences of
    /// the exact first derivative.
    pub max_second_derivative: f64,
    /// Dense-grid minimum of each level, refined between grid points.
    pub dense_min: Vec<f64>,
    pub dense_min_time: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub state: DVector<f64>,
    pub input: DVector<f64>,
    pub status: StepStatus,
    pub chains: Vec<Option<ChainStep>>,
}

/// One dense-grid evaluation of an active chain.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseSample {
    pub step: usize,
    pub t: f64,
    pub chain: usize,
    pub levels: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainInfo {
    pub name: String,
    pub kind: ChainKind,
    pub relative_degree: usize,
    pub center: Vec<f64>,
    pub position: Vec<usize>,
    pub norm_order: f64,
    pub eps_d: Option<f64>,
    pub window: Option<(f64, f64)>,
    pub t_reach: Option<f64>,
}

impl ChainInfo {
    fn from_chain(c: &BarrierChain) -> Self {
        let (eps_d, t_reach) = match c.reach_spec() {
            Some(s) => (Some(s.eps_d), Some(s.t_reach)),
            None => (None, None),
        };
        ChainInfo {
            name: c.name().to_string(),
            kind: c.kind(),
            relative_degree: c.relative_degree(),
            center: c.center().to_vec(),
            position: c.position_indices().to_vec(),
            norm_order: c.form().order(),
            eps_d,
            window: c.window(),
            t_reach,
        }
    }

    pub fn distance(&self, x: &DVector<f64>) -> f64 {
        let p = self.norm_order;
        let s: f64 = self
            .position
            .iter()
            .zip(&self.center)
            .map(|(&i, c)| (x[i] - c).abs().powf(p))
            .sum();
        s.powf(1.0 / p)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainSummary {
    pub name: String,
    pub kind: ChainKind,
    pub active_steps: usize,
    pub min_levels: Vec<f64>,
    pub first_violation: Option<f64>,
    pub reach_time: Option<f64>,
    pub remain_max_distance: Option<f64>,
    pub dominance_violations: usize,
    pub tube_violations: usize,
    pub min_omega: f64,
}

impl ChainSummary {
    pub fn min_psi0(&self) -> f64 {
        self.min_levels[0]
    }

    pub fn min_psi_top(&self) -> f64 {
        self.min_levels[self.min_levels.len() - 1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub controller: ControllerKind,
    pub steps: usize,
    pub optimal_steps: usize,
    pub infeasible_steps: usize,
    pub set_exit_steps: usize,
    pub dominance_violations: usize,
    pub tube_violations: usize,
    pub audit_violations: usize,
    pub chains: Vec<ChainSummary>,
    pub final_state: DVector<f64>,
}

impl Summary {
    pub fn chain(&self, name: &str) -> Option<&ChainSummary> {
        self.chains.iter().find(|c| c.name == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceLog {
    pub controller: ControllerKind,
    pub dt: f64,
    pub audit_substep: f64,
    pub audit_tol: f64,
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
    pub chains: Vec<ChainInfo>,
    pub steps: Vec<StepRecord>,
    pub dense: Vec<DenseSample>,
    /// `(t, state)` on the dense grid, shared by all chains.
    pub dense_states: Vec<(f64, DVector<f64>)>,
    pub summary: Summary,
}

/// Integrates `x' = f + g u` with `u` held over `[t_k, t_k + dt]`.
pub fn step_zoh(
    model: &dyn SystemModel,
    input: &DVector<f64>,
    state: &DVector<f64>,
    t_k: f64,
    dt: f64,
    integrator_tolerance: f64,
) -> Result<DVector<f64>> {
    Ok(step_zoh_dense(
        model,
        input,
        state,
        t_k,
        dt,
        &OdeOptions::with_tolerance(integrator_tolerance),
    )?
    .final_state()
    .clone())
}

pub fn step_zoh_dense(
    model: &dyn SystemModel,
    input: &DVector<f64>,
    state: &DVector<f64>,
    t_k: f64,
    dt: f64,
    opts: &OdeOptions,
) -> Result<DenseSolution> {
    check_dim("state", model.state_dim(), state.len())?;
    check_dim("input", model.input_dim(), input.len())?;
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    integrate_dense(
        |t, y| model.drift(y, t) + model.actuation(y, t) * input,
        t_k,
        state,
        t_k + dt,
        opts,
    )
}

/// Golden-section minimum of `f` on `[a, b]`, never above the endpoint values.
fn refine_min<F: Fn(f64) -> Result<f64>>(f: F, a: f64, b: f64) -> Result<(f64, f64)> {
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (a, b);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..80 {
        if (hi - lo).abs() <= 1e-13 * (1.0 + a.abs()) {
            break;
        }
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d)?;
        }
    }
    let fa = f(a)?;
    let fb = f(b)?;
    let mut best = (a, fa);
    for cand in [(b, fb), (c, fc), (d, fd)] {
        if cand.1 < best.1 {
            best = cand;
        }
    }
    Ok(best)
}

struct StepPlan {
    status: StepStatus,
    input: DVector<f64>,
    rows: Vec<Option<SacbfRow>>,
    omegas: Vec<f64>,
    estimates: Vec<Option<BoundEstimate>>,
    m_used: Vec<f64>,
}

struct Runner<'s, 'a> {
    setup: &'s SimSetup<'a>,
    cache: LipschitzCache,
    last_optimal: DVector<f64>,
    last_applied: DVector<f64>,
}

impl Runner<'_, '_> {
    fn fallback_input(&self) -> DVector<f64> {
        match self.setup.policy {
            InfeasibilityPolicy::HoldPrevious => self.setup.input_box.clip(&self.last_optimal),
            InfeasibilityPolicy::ZeroInput => self
                .setup
                .input_box
                .clip(&DVector::zeros(self.setup.model.input_dim())),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn estimate(
        &mut self,
        chain: &BarrierChain,
        idx: usize,
        k: usize,
        x: &DVector<f64>,
        t: f64,
        input_box: &InputBox,
        candidate: &DVector<f64>,
    ) -> Result<BoundEstimate> {
        let s = self.setup;
        estimate_mbar_cached(
            s.model,
            chain,
            x,
            t,
            s.dt,
            input_box,
            candidate,
            &s.estimator,
            Some((&mut self.cache, idx, k as u64)),
        )
    }

    fn hocbf_plan(
        &self,
        active: &[(usize, BarrierChain)],
        x: &DVector<f64>,
        t: f64,
    ) -> Result<StepPlan> {
        let s = self.setup;
        let n_chains = s.chains.len();
        let mut rows = Vec::new();
        let mut weights = Vec::new();
        for (idx, chain) in active {
            rows.push(hocbf_row(chain, s.model, x, t)?);
            weights.push(s.weights[*idx]);
        }
        let qp = build_qp(&rows, &s.input_box, &weights)?;
        let sol = qp.solve()?;
        let mut plan = StepPlan {
            status: StepStatus::Infeasible,
            input: self.fallback_input(),
            rows: vec![None; n_chains],
            omegas: vec![f64::NAN; n_chains],
            estimates: vec![None; n_chains],
            m_used: vec![f64::NAN; n_chains],
        };
        if sol.status == QpStatus::Optimal {
            plan.status = StepStatus::Optimal;
            plan.input = s.input_box.clip(&qp.input(&sol.z));
        }
        for (j, (idx, _)) in active.iter().enumerate() {
            plan.omegas[*idx] = 1.0;
            plan.rows[*idx] = Some(rows[j].clone());
        }
        Ok(plan)
    }

    fn sampled_plan(
        &mut self,
        active: &[(usize, BarrierChain)],
        x: &DVector<f64>,
        t: f64,
        k: usize,
    ) -> Result<StepPlan> {
        let s = self.setup;
        match s.estimator.candidates {
            CandidatePolicy::TrustRegion => {
                let half = (s.input_box.upper() - s.input_box.lower()).amax() / 2.0;
                let center = self.last_applied.clone();
                let mut plan = None;
                for frac in TRUST_REGION_FRACTIONS {
                    let region = s.input_box.around(&center, frac * half);
                    let p = self.solve_sampled(active, x, t, k, &region, false)?;
                    if p.status != StepStatus::Infeasible {
                        return Ok(p);
                    }
                    plan = Some(p);
                }
                Ok(plan.expect("at least one trust region"))
            }
            CandidatePolicy::CertifiedInput => {
                self.solve_sampled(active, x, t, k, &s.input_box, true)
            }
            _ => self.solve_sampled(active, x, t, k, &s.input_box, false),
        }
    }

    fn solve_sampled(
        &mut self,
        active: &[(usize, BarrierChain)],
        x: &DVector<f64>,
        t: f64,
        k: usize,
        input_box: &InputBox,
        applied_policy: bool,
    ) -> Result<StepPlan> {
        let s = self.setup;
        let n_chains = s.chains.len();
        let relaxed = s.controller == ControllerKind::RSacbf;
        let mut plan = StepPlan {
            status: StepStatus::Infeasible,
            input: self.fallback_input(),
            rows: vec![None; n_chains],
            omegas: vec![f64::NAN; n_chains],
            estimates: vec![None; n_chains],
            m_used: vec![f64::NAN; n_chains],
        };
        let rounds = if applied_policy {
            FIXED_POINT_ROUNDS
        } else {
            1
        };
        let mut guess = self.last_applied.clone();
        let mut floor = vec![0.0; n_chains];
        for _ in 0..rounds {
            let mut rows = Vec::new();
            let mut weights = Vec::new();
            for (idx, chain) in active {
                let est = self.estimate(chain, *idx, k, x, t, input_box, &guess)?;
                let m_used = est.m_bar.max(floor[*idx]);
                plan.m_used[*idx] = m_used;
                plan.estimates[*idx] = Some(est);
                match sacbf_row(chain, s.model, x, t, s.dt, m_used, relaxed) {
                    Ok(r) => {
                        rows.push(r);
                        weights.push(s.weights[*idx]);
                    }
                    Err(Error::SetExit { .. }) => {
                        plan.status = StepStatus::SetExit;
                        plan.input = self.fallback_input();
                        return Ok(plan);
                    }
                    Err(e) => return Err(e),
                }
            }
            let qp = build_qp(&rows, input_box, &weights)?;
            let sol = qp.solve()?;
            for (j, (idx, _)) in active.iter().enumerate() {
                plan.rows[*idx] = Some(rows[j].clone());
                plan.omegas[*idx] = if sol.status == QpStatus::Optimal {
                    qp.omega(&sol.z, j)
                } else {
                    f64::NAN
                };
            }
            if sol.status != QpStatus::Optimal {
                plan.status = StepStatus::Infeasible;
                plan.input = self.fallback_input();
                return Ok(plan);
            }
            let u = input_box.clip(&qp.input(&sol.z));
            if !applied_policy {
                plan.status = StepStatus::Optimal;
                plan.input = u;
                return Ok(plan);
            }
            // the bound must hold for the input that is actually held
            let mut certified = true;
            let mut finals = Vec::new();
            for (idx, chain) in active {
                let est = self.estimate(chain, *idx, k, x, t, input_box, &u)?;
                if est.m_bar > plan.m_used[*idx] {
                    certified = false;
                    floor[*idx] = est.m_bar.max(plan.m_used[*idx]) * (1.0 + FIXED_POINT_MARGIN);
                }
                finals.push((*idx, est));
            }
            if certified {
                for (idx, est) in finals {
                    plan.estimates[idx] = Some(est);
                }
                plan.status = StepStatus::Optimal;
                plan.input = u;
                return Ok(plan);
            }
            guess = u;
        }
        plan.status = StepStatus::Infeasible;
        plan.input = self.fallback_input();
        Ok(plan)
    }
}

fn check_initial_membership(setup: &SimSetup) -> Result<()> {
    for chain in &setup.chains {
        if !chain.is_active(setup.t0) {
            continue;
        }
        let levels = chain.eval_levels(setup.model, &setup.initial_state, setup.t0)?;
        for (level, psi) in levels.iter().enumerate() {
            if *psi < 0.0 {
                return Err(Error::InitialMembership {
                    chain: chain.name().to_string(),
                    level,
                    psi: *psi,
                });
            }
        }
    }
    Ok(())
}

fn validate(setup: &SimSetup) -> Result<()> {
    check_dim(
        "initial state",
        setup.model.state_dim(),
        setup.initial_state.len(),
    )?;
    check_dim("input box", setup.model.input_dim(), setup.input_box.dim())?;
    check_dim("weights", setup.chains.len(), setup.weights.len())?;
    if !(setup.dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {}",
            setup.dt
        )));
    }
    if !(setup.audit_substep > 0.0 && setup.audit_substep <= setup.dt) {
        return Err(Error::InvalidArgument(format!(
            "audit sub-step must lie in (0, dt], got {}",
            setup.audit_substep
        )));
    }
    if setup.steps == 0 {
        return Err(Error::InvalidArgument("horizon has no steps".into()));
    }
    let mut names: Vec<&str> = setup.chains.iter().map(|c| c.name()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("chain names must be unique".into()));
    }
    setup.estimator.validate()
}

/// Runs the closed loop for `setup.steps` sampling periods.
pub fn simulate(setup: &SimSetup) -> Result<TraceLog> {
    validate(setup)?;
    check_initial_membership(setup)?;
    let model = setup.model;
    let n_chains = setup.chains.len();
    let q = model.input_dim();
    let grid_n = ((setup.dt / setup.audit_substep) - 1e-9).ceil().max(1.0) as usize;
    let h = setup.dt / grid_n as f64;

    let mut runner = Runner {
        setup,
        cache: LipschitzCache::new(n_chains),
        last_optimal: DVector::zeros(q),
        last_applied: DVector::zeros(q),
    };
    let mut x = setup.initial_state.clone();
    let mut steps = Vec::with_capacity(setup.steps);
    let mut dense = Vec::new();
    let mut dense_states = Vec::new();

    for k in 0..setup.steps {
        let t = setup.t0 + k as f64 * setup.dt;
        let active: Vec<(usize, BarrierChain)> = setup
            .chains
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_active(t))
            .map(|(i, c)| c.frozen_at(t).map(|f| (i, f)))
            .collect::<Result<_>>()?;

        let plan = if setup.controller.uses_bound() {
            runner.sampled_plan(&active, &x, t, k)?
        } else {
            runner.hocbf_plan(&active, &x, t)?
        };
        let u = plan.input.clone();
        if plan.status == StepStatus::Optimal {
            runner.last_optimal = u.clone();
        }
        runner.last_applied = u.clone();

        let sol = step_zoh_dense(model, &u, &x, t, setup.dt, &setup.ode)?;
        let grid: Vec<f64> = (0..=grid_n)
            .map(|j| {
                if j == grid_n {
                    t + setup.dt
                } else {
                    t + j as f64 * h
                }
            })
            .collect();
        let states: Vec<DVector<f64>> = grid.iter().map(|tj| sol.eval(*tj)).collect();

        let mut chain_steps = vec![None; n_chains];
        for (idx, chain) in &active {
            let m = chain.relative_degree();
            let levels = chain.eval_levels(model, &x, t)?;
            let mut dense_levels = Vec::with_capacity(grid.len());
            for (tj, xj) in grid.iter().zip(&states) {
                let lv = chain.eval_levels(model, xj, *tj)?;
                dense.push(DenseSample {
                    step: k,
                    t: *tj,
                    chain: *idx,
                    levels: lv.clone(),
                });
                dense_levels.push(lv);
            }
            let mut dense_min = Vec::with_capacity(m);
            let mut dense_min_time = Vec::with_capacity(m);
            for level in 0..m {
                let (j, _) = dense_levels
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1[level].total_cmp(&b.1[level]))
                    .expect("grid is not empty");
                let a = grid[j.saturating_sub(1)];
                let b = grid[(j + 1).min(grid_n)];
                let (tm, vm) = refine_min(|s| chain.eval_psi(model, level, &sol.eval(s), s), a, b)?;
                dense_min.push(vm.min(dense_levels[j][level]));
                dense_min_time.push(if vm < dense_levels[j][level] {
                    tm
                } else {
                    grid[j]
                });
            }
            let rates: Vec<f64> = grid
                .iter()
                .zip(&states)
                .map(|(tj, xj)| chain.top_rate(model, xj, &u, *tj))
                .collect::<Result<_>>()?;
            let mut max_dd: f64 = 0.0;
            for j in 0..=grid_n {
                let dd = if j == 0 {
                    (rates[1] - rates[0]) / h
                } else if j == grid_n {
                    (rates[grid_n] - rates[grid_n - 1]) / h
                } else {
                    (rates[j + 1] - rates[j - 1]) / (2.0 * h)
                };
                max_dd = max_dd.max(dd.abs());
            }
            let excursion = states.iter().map(|s| (s - &x).norm()).fold(0.0, f64::max);
            let est = plan.estimates[*idx].as_ref();
            // Gronwall radius of the input that was actually held
            let tube = match est {
                Some(e) => tube_radius(model, &x, &u, t, setup.dt, e.lipschitz_f)?,
                None => f64::NAN,
            };
            let row = plan.rows[*idx].as_ref();
            let omega = plan.omegas[*idx];
            chain_steps[*idx] = Some(ChainStep {
                levels,
                bound: row.map_or(f64::NAN, |r| {
                    if setup.controller.uses_bound() {
                        r.bound
                    } else {
                        f64::NAN
                    }
                }),
                m_hat: est.map_or(f64::NAN, |e| e.m_hat),
                correction: est.map_or(f64::NAN, |e| e.correction),
                m_bar: plan.m_used[*idx],
                omega,
                slack: row.map_or(f64::NAN, |r| {
                    r.slack(&u, if omega.is_nan() { 1.0 } else { omega })
                }),
                psi_rate: rates[0],
                tube_radius: tube,
                tube_excursion: excursion,
                max_second_derivative: max_dd,
                dense_min,
                dense_min_time,
            });
        }
        for (tj, xj) in grid.iter().zip(states.iter()) {
            if dense_states
                .last()
                .is_some_and(|(tl, _): &(f64, DVector<f64>)| *tl >= *tj)
            {
                continue;
            }
            dense_states.push((*tj, xj.clone()));
        }
        steps.push(StepRecord {
            k,
            t,
            state: x.clone(),
            input: u,
            status: plan.status,
            chains: chain_steps,
        });
        x = sol.final_state().clone();
    }

    let chains: Vec<ChainInfo> = setup.chains.iter().map(ChainInfo::from_chain).collect();
    let mut trace = TraceLog {
        controller: setup.controller,
        dt: setup.dt,
        audit_substep: h,
        audit_tol: setup.audit_tol,
        state_names: model.state_names(),
        input_names: model.input_names(),
        chains,
        steps,
        dense,
        dense_states,
        summary: Summary {
            controller: setup.controller,
            steps: 0,
            optimal_steps: 0,
            infeasible_steps: 0,
            set_exit_steps: 0,
            dominance_violations: 0,
            tube_violations: 0,
            audit_violations: 0,
            chains: Vec::new(),
            final_state: x,
        },
    };
    trace.summary = summarize(&trace);
    Ok(trace)
}

/// Resolves a scenario and runs it.
pub fn run_scenario(config: &ScenarioConfig) -> Result<TraceLog> {
    config.validate()?;
    let model = config.model.instantiate();
    simulate(&config.setup(&model)?)
}

fn dominance_violated(c: &ChainStep) -> bool {
    !c.m_bar.is_nan() && c.max_second_derivative > c.m_bar * (1.0 + 1e-9) + 1e-9
}

fn tube_violated(c: &ChainStep) -> bool {
    !c.tube_radius.is_nan() && c.tube_excursion > c.tube_radius * (1.0 + 1e-9) + 1e-12
}

fn summarize(trace: &TraceLog) -> Summary {
    let count = |s: StepStatus| trace.steps.iter().filter(|r| r.status == s).count();
    let mut chains = Vec::with_capacity(trace.chains.len());
    for (idx, info) in trace.chains.iter().enumerate() {
        let records: Vec<(&StepRecord, &ChainStep)> = trace
            .steps
            .iter()
            .filter_map(|r| r.chains[idx].as_ref().map(|c| (r, c)))
            .collect();
        let m = info.relative_degree;
        let min_levels: Vec<f64> = (0..m)
            .map(|l| {
                records
                    .iter()
                    .map(|(_, c)| c.dense_min[l])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let first_violation = trace
            .dense
            .iter()
            .filter(|d| d.chain == idx && d.levels[0] < 0.0)
            .map(|d| d.t)
            .chain(
                records
                    .iter()
                    .filter(|(_, c)| c.dense_min[0] < 0.0)
                    .map(|(_, c)| c.dense_min_time[0]),
            )
            .fold(None, |acc: Option<f64>, t| {
                Some(acc.map_or(t, |a| a.min(t)))
            });
        let (reach_time, remain_max_distance) = match (info.kind, info.eps_d, info.window) {
            (ChainKind::Reach, Some(eps_d), Some((start, end))) => {
                let inside = |t: f64| t >= start - 1e-12 && t <= end + 1e-12;
                let reach = trace
                    .dense_states
                    .iter()
                    .find(|(t, s)| inside(*t) && info.distance(s) <= eps_d + REACH_DISTANCE_TOL)
                    .map(|(t, _)| *t);
                let t_reach = info.t_reach.unwrap_or(end);
                let remain = if end > t_reach {
                    trace
                        .dense_states
                        .iter()
                        .filter(|(t, _)| *t >= t_reach - 1e-12 && *t <= end + 1e-12)
                        .map(|(_, s)| info.distance(s))
                        .fold(None, |acc: Option<f64>, d| {
                            Some(acc.map_or(d, |a| a.max(d)))
                        })
                } else {
                    None
                };
                (reach, remain)
            }
            _ => (None, None),
        };
        chains.push(ChainSummary {
            name: info.name.clone(),
            kind: info.kind,
            active_steps: records.len(),
            min_levels,
            first_violation,
            reach_time,
            remain_max_distance,
            dominance_violations: records
                .iter()
                .filter(|(_, c)| dominance_violated(c))
                .count(),
            tube_violations: records.iter().filter(|(_, c)| tube_violated(c)).count(),
            min_omega: records
                .iter()
                .map(|(_, c)| c.omega)
                .filter(|w| !w.is_nan())
                .fold(f64::INFINITY, f64::min),
        });
    }
    let audit = audit_invariance(trace, trace.audit_tol);
    Summary {
        controller: trace.controller,
        steps: trace.steps.len(),
        optimal_steps: count(StepStatus::Optimal),
        infeasible_steps: count(StepStatus::Infeasible),
        set_exit_steps: count(StepStatus::SetExit),
        dominance_violations: chains.iter().map(|c| c.dominance_violations).sum(),
        tube_violations: chains.iter().map(|c| c.tube_violations).sum(),
        audit_violations: audit.violations.len(),
        chains,
        final_state: trace.summary.final_state.clone(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuditCheck {
    /// Dense-grid top level stays nonnegative.
    Nonnegative,
    /// End-of-interval value respects the (scaled) comparison bound.
    EndpointBound,
    /// The certificate quadratic built from the row is nonnegative.
    Certificate,
    /// The realized top level stays above its second-order Taylor lower bound.
    TaylorEnvelope,
}

impl AuditCheck {
    pub fn as_str(&self) -> &'static str {
        match self {
            AuditCheck::Nonnegative => "nonnegative",
            AuditCheck::EndpointBound => "endpoint_bound",
            AuditCheck::Certificate => "certificate",
            AuditCheck::TaylorEnvelope => "taylor_envelope",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditViolation {
    pub step: usize,
    pub chain: String,
    pub check: AuditCheck,
    pub tau: f64,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuditReport {
    pub steps_checked: usize,
    pub violations: Vec<AuditViolation>,
}

/// Checks every optimal step of a sampled-data controller against the
/// guarantees its rows are meant to certify.
pub fn audit_invariance(trace: &TraceLog, tolerance: f64) -> AuditReport {
    let mut report = AuditReport::default();
    if !trace.controller.uses_bound() {
        return report;
    }
    let dt = trace.dt;
    for rec in &trace.steps {
        if rec.status != StepStatus::Optimal {
            continue;
        }
        report.steps_checked += 1;
        for (idx, cs) in rec.chains.iter().enumerate() {
            let Some(cs) = cs else { continue };
            let name = &trace.chains[idx].name;
            let top = cs.levels.len() - 1;
            let psi_k = cs.levels[top];
            let omega = if cs.omega.is_nan() { 1.0 } else { cs.omega };
            let mut flag = |check: AuditCheck, tau: f64, value: f64| {
                report.violations.push(AuditViolation {
                    step: rec.k,
                    chain: name.clone(),
                    check,
                    tau,
                    value,
                })
            };
            let samples = trace
                .dense
                .iter()
                .filter(|d| d.step == rec.k && d.chain == idx);
            let mut end_value = f64::NAN;
            for d in samples {
                let tau = d.t - rec.t;
                let psi = d.levels[top];
                if psi < -tolerance {
                    flag(AuditCheck::Nonnegative, tau, psi);
                }
                let l = psi_k + tau * ((omega * cs.bound - psi_k) / dt + 0.5 * cs.m_bar * dt)
                    - 0.5 * cs.m_bar * tau * tau;
                if l < -tolerance {
                    flag(AuditCheck::Certificate, tau, l);
                }
                let envelope = psi_k + tau * cs.psi_rate - 0.5 * cs.m_bar * tau * tau;
                if psi < envelope - tolerance {
                    flag(AuditCheck::TaylorEnvelope, tau, psi - envelope);
                }
                end_value = psi;
            }
            if cs.dense_min[top] < -tolerance {
                flag(
                    AuditCheck::Nonnegative,
                    cs.dense_min_time[top] - rec.t,
                    cs.dense_min[top],
                );
            }
            if end_value < omega * cs.bound - tolerance {
                flag(AuditCheck::EndpointBound, dt, end_value - omega * cs.bound);
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::make_unicycle;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn zoh_examples() {
        let m = make_unicycle();
        let x = step_zoh(
            &m,
            &dv(&[0.0, 0.0]),
            &dv(&[0.0, 0.0, 0.0, 1.0]),
            0.0,
            0.1,
            1e-10,
        )
        .unwrap();
        assert!((x - dv(&[0.1, 0.0, 0.0, 1.0])).amax() < 1e-12);
        let x = step_zoh(&m, &dv(&[0.0, 1.0]), &dv(&[0.0; 4]), 0.0, 0.1, 1e-10).unwrap();
        assert!((x[3] - 0.1).abs() < 1e-9);
        assert!((x[0] - 0.005).abs() < 1e-9);
        let x = step_zoh(
            &m,
            &dv(&[1.0, 0.0]),
            &dv(&[0.0, 0.0, 0.3, 0.0]),
            0.0,
            0.1,
            1e-10,
        )
        .unwrap();
        assert!((x[2] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn golden_section_finds_interior_minimum() {
        let (t, v) = refine_min(|t| Ok((t - 0.3) * (t - 0.3) - 1.0), 0.0, 1.0).unwrap();
        assert!((t - 0.3).abs() < 1e-6);
        assert!((v + 1.0).abs() < 1e-12);
        let (t, _) = refine_min(Ok, 0.0, 1.0).unwrap();
        assert_eq!(t, 0.0);
    }

    #[test]
    fn controller_names_round_trip() {
        for c in ControllerKind::ALL {
            assert_eq!(ControllerKind::parse(c.as_str()).unwrap(), c);
        }
        assert!(ControllerKind::parse("mpc").is_err());
    }
}
