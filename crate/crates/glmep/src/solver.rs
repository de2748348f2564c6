//! GLM-EP iterations on synthetic or measured instances.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::denoiser::{denoise_into, DenoiserOptions, Workspace};
use crate::error::{Error, Result};
use crate::nonlinearity::PiecewiseFunction;
use crate::sensing_operator::{rows_for, OpScratch, StructuredOperator};
use crate::spectrum::{SamplingMode, Spectrum};
use crate::state_evolution::informative_v_r;

pub const DIVERGENCE_FLOOR: f64 = 1e-8;
pub const V_MIN: f64 = 1e-12;
pub const V_MAX: f64 = 1e12;
pub const PLATEAU_REL: f64 = 1e-10;
pub const PLATEAU_RUN: usize = 3;
/// Final MSE below this counts as exact recovery.
pub const SUCCESS_MSE: f64 = 1e-6;

pub struct Instance {
    pub op: StructuredOperator,
    pub y: Vec<f64>,
    pub sigma_w2: f64,
    pub x: Option<Vec<f64>>,
    pub z: Option<Vec<f64>>,
    pub w: Option<Vec<f64>>,
    vt_x: Option<Vec<f64>>,
}

impl fmt::Debug for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Instance")
            .field("op", &self.op)
            .field("sigma_w2", &self.sigma_w2)
            .field("synthetic", &self.x.is_some())
            .finish_non_exhaustive()
    }
}

impl Instance {
    /// Measurements without ground truth; informative starts are refused.
    pub fn from_measurements(op: StructuredOperator, y: Vec<f64>, sigma_w2: f64) -> Result<Self> {
        if y.len() != op.m() {
            return Err(Error::DimensionMismatch { expected: op.m(), got: y.len() });
        }
        Ok(Self { op, y, sigma_w2, x: None, z: None, w: None, vt_x: None })
    }

    pub fn n(&self) -> usize {
        self.op.n()
    }

    pub fn m(&self) -> usize {
        self.op.m()
    }
}

pub fn make_instance(
    n: usize,
    delta: f64,
    f: &PiecewiseFunction,
    model: &dyn Spectrum,
    sigma_w2: f64,
    seed: u64,
) -> Result<Instance> {
    make_instance_with(n, delta, f, model, sigma_w2, seed, SamplingMode::Iid)
}

pub fn make_instance_with(
    n: usize,
    delta: f64,
    f: &PiecewiseFunction,
    model: &dyn Spectrum,
    sigma_w2: f64,
    seed: u64,
    sampling: SamplingMode,
) -> Result<Instance> {
    if n < 16 {
        return Err(Error::InvalidParameter(format!("n must be at least 16, got {n}")));
    }
    if !(delta > 1.0) {
        return Err(Error::InvalidParameter(format!("delta must exceed 1, got {delta}")));
    }
    if !(sigma_w2 >= 0.0 && sigma_w2.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma_w2 must be finite and nonnegative, got {sigma_w2}")));
    }
    let m = rows_for(delta, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let op = StructuredOperator::build(m, n, model, rng.next_u64(), sampling)?;
    let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let z = op.apply(&x)?;
    let w: Option<Vec<f64>> = (sigma_w2 > 0.0).then(|| {
        let sd = sigma_w2.sqrt();
        (0..m).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
    });
    let mut pre = z.clone();
    if let Some(w) = &w {
        for (p, wi) in pre.iter_mut().zip(w) {
            *p += wi;
        }
    }
    let mut y = vec![0.0; m];
    f.evaluate_into(&pre, &mut y);
    let mut vt_x = x.clone();
    op.apply_vt(&mut vt_x, &mut op.scratch())?;
    Ok(Instance { op, y, sigma_w2, x: Some(x), z: Some(z), w, vt_x: Some(vt_x) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitMode {
    /// z_r = 0, v_r = 1
    Uninformative,
    /// z_r = (z + √V n)/(1+V), v_r = V/(1+V)
    Informative { v: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub t: usize,
    /// (1/n)‖x̂ − x‖²
    pub mse_n: f64,
    /// (1/m)‖x̂ − x‖²
    pub mse_m: f64,
    /// (1/n) min(‖x̂ − x‖², ‖x̂ + x‖²)
    pub mse_sign_resolved: f64,
    pub v_l: f64,
    /// v_r handed to the next iteration
    pub v_r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub t: usize,
    pub z_r: Vec<f64>,
    pub v_r: f64,
    pub z_l: Vec<f64>,
    pub v_l: f64,
    pub mse_history: Vec<IterRecord>,
    /// Vᵀ x̂ of the latest step
    x_hat_rot: Vec<f64>,
    pub clamps: usize,
}

impl SolverState {
    pub fn x_hat(&self, inst: &Instance) -> Result<Vec<f64>> {
        let mut x = self.x_hat_rot.clone();
        inst.op.apply_v(&mut x, &mut inst.op.scratch())?;
        Ok(x)
    }
}

pub fn init(inst: &Instance, mode: InitMode, seed: u64) -> Result<SolverState> {
    let m = inst.m();
    let (z_r, v_r) = match mode {
        InitMode::Uninformative => (vec![0.0; m], 1.0),
        InitMode::Informative { v } => {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("side-information variance must be positive, got {v}")));
            }
            let z = inst.z.as_ref().ok_or(Error::InformativeWithoutTruth)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (s, k) = (v.sqrt(), 1.0 / (1.0 + v));
            let z_r = z.iter().map(|zi| k * (zi + s * rng.sample::<f64, _>(StandardNormal))).collect();
            (z_r, informative_v_r(v))
        }
    };
    Ok(SolverState {
        t: 0,
        z_r,
        v_r,
        z_l: vec![0.0; m],
        v_l: f64::INFINITY,
        mse_history: Vec::new(),
        x_hat_rot: vec![0.0; inst.n()],
        clamps: 0,
    })
}

/// Buffers reused across steps.
#[derive(Debug, Default)]
pub struct StepWorkspace {
    den: Workspace,
    eta: Vec<f64>,
    rot: Vec<f64>,
    op: OpScratch,
}

impl StepWorkspace {
    pub fn for_instance(inst: &Instance) -> Self {
        Self { den: Workspace::default(), eta: vec![0.0; inst.m()], rot: vec![0.0; inst.m()], op: inst.op.scratch() }
    }
}

fn clamp_variance(name: &'static str, v: f64, clamps: &mut usize) -> Result<f64> {
    if v.is_nan() || v < 0.0 {
        return Err(Error::NonPositiveVariance { name, value: v });
    }
    if !(V_MIN..=V_MAX).contains(&v) {
        *clamps += 1;
        return Ok(v.clamp(V_MIN, V_MAX));
    }
    Ok(v)
}

/// One pass: denoise, extrinsic z_l, resolvent, extrinsic z_r.
pub fn step(
    state: &mut SolverState,
    inst: &Instance,
    f: &PiecewiseFunction,
    opts: &DenoiserOptions,
    ws: &mut StepWorkspace,
) -> Result<()> {
    let op = &inst.op;
    let (m, n) = (op.m(), op.n());
    let eta_mean = denoise_into(f, &state.z_r, &inst.y, state.v_r, inst.sigma_w2, opts, &mut ws.den, &mut ws.eta)?;
    let gap = 1.0 - eta_mean;
    if gap.abs() < DIVERGENCE_FLOOR {
        return Err(Error::DegenerateDivergence { gap });
    }
    let v_l = clamp_variance("v_l", state.v_r * eta_mean / gap, &mut state.clamps)?;
    for ((zl, e), zr) in state.z_l.iter_mut().zip(&ws.eta).zip(&state.z_r) {
        *zl = (e - eta_mean * zr) / gap;
    }

    ws.rot.copy_from_slice(&state.z_l);
    op.apply_ut(&mut ws.rot, &mut ws.op)?;
    op.lmmse_rotated(v_l, &ws.rot, &mut state.x_hat_rot);

    let tr = op.resolvent_trace(v_l);
    op.resolvent_rotated(v_l, &mut ws.rot);
    op.apply_u(&mut ws.rot, &mut ws.op)?;
    for ((zr, r), zl) in state.z_r.iter_mut().zip(&ws.rot).zip(&state.z_l) {
        *zr = (r - tr * zl) / (1.0 - tr);
    }
    let v_r = clamp_variance("v_r", v_l * tr / (1.0 - tr), &mut state.clamps)?;

    state.t += 1;
    state.v_l = v_l;
    state.v_r = v_r;
    if let Some(truth) = &inst.vt_x {
        let (mut minus, mut plus) = (0.0, 0.0);
        for (a, b) in state.x_hat_rot.iter().zip(truth) {
            minus += (a - b) * (a - b);
            plus += (a + b) * (a + b);
        }
        state.mse_history.push(IterRecord {
            t: state.t,
            mse_n: minus / n as f64,
            mse_m: minus / m as f64,
            mse_sign_resolved: minus.min(plus) / n as f64,
            v_l,
            v_r,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Completed,
    Plateau,
    Aborted(Error),
}

impl Status {
    pub fn is_aborted(&self) -> bool {
        matches!(self, Status::Aborted(_))
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Completed => f.write_str("completed"),
            Status::Plateau => f.write_str("plateau"),
            Status::Aborted(e) => write!(f, "aborted: {e}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub x_hat: Vec<f64>,
    pub history: Vec<IterRecord>,
    pub status: Status,
    pub clamps: usize,
}

impl RunOutput {
    pub fn final_mse(&self) -> Option<f64> {
        self.history.last().map(|r| r.mse_n)
    }
}

fn plateaued(history: &[IterRecord]) -> bool {
    if history.len() <= PLATEAU_RUN {
        return false;
    }
    history[history.len() - PLATEAU_RUN - 1..].windows(2).all(|w| {
        let (a, b) = (w[0].mse_n, w[1].mse_n);
        a == b || (b - a).abs() < PLATEAU_REL * a.abs()
    })
}

pub fn run(inst: &Instance, f: &PiecewiseFunction, t_max: usize, mode: InitMode, seed: u64) -> Result<RunOutput> {
    run_with(inst, f, t_max, mode, seed, &DenoiserOptions::default())
}

/// Setup errors are returned; step errors end the run with `Status::Aborted`.
pub fn run_with(
    inst: &Instance,
    f: &PiecewiseFunction,
    t_max: usize,
    mode: InitMode,
    seed: u64,
    opts: &DenoiserOptions,
) -> Result<RunOutput> {
    if t_max == 0 {
        return Err(Error::InvalidParameter("t_max must be at least 1".into()));
    }
    let mut state = init(inst, mode, seed)?;
    let mut ws = StepWorkspace::for_instance(inst);
    let mut status = Status::Completed;
    for _ in 0..t_max {
        if let Err(e) = step(&mut state, inst, f, opts, &mut ws) {
            status = Status::Aborted(e);
            break;
        }
        if state.t < t_max && plateaued(&state.mse_history) {
            status = Status::Plateau;
            break;
        }
    }
    Ok(RunOutput { x_hat: state.x_hat(inst)?, history: state.mse_history, status, clamps: state.clamps })
}

/// Independent per-trial seed from (master, index).
pub fn trial_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

#[derive(Debug, Clone)]
pub struct TrialSpec {
    pub n: usize,
    pub delta: f64,
    pub f: Arc<PiecewiseFunction>,
    pub model: Arc<dyn Spectrum>,
    pub sigma_w2: f64,
    pub t_max: usize,
    pub init: InitMode,
    pub sampling: SamplingMode,
}

#[derive(Debug, Clone)]
pub struct TrialReport {
    pub trial: usize,
    pub seed: u64,
    pub history: Vec<IterRecord>,
    pub status: Status,
    pub clamps: usize,
}

impl TrialReport {
    pub fn final_mse(&self) -> Option<f64> {
        self.history.last().map(|r| r.mse_n)
    }
}

pub fn run_trial(spec: &TrialSpec, trial: usize, seed: u64) -> Result<TrialReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst = make_instance_with(
        spec.n,
        spec.delta,
        &spec.f,
        spec.model.as_ref(),
        spec.sigma_w2,
        rng.next_u64(),
        spec.sampling,
    )?;
    let out = run(&inst, &spec.f, spec.t_max, spec.init, rng.next_u64())?;
    Ok(TrialReport { trial, seed, history: out.history, status: out.status, clamps: out.clamps })
}

/// Trials in parallel; results come back in trial order.
pub fn run_trials(spec: &TrialSpec, trials: usize, master_seed: u64) -> Result<Vec<TrialReport>> {
    run_trial_indices(spec, &(0..trials).collect::<Vec<_>>(), master_seed)
}

pub fn run_trial_indices(spec: &TrialSpec, indices: &[usize], master_seed: u64) -> Result<Vec<TrialReport>> {
    indices.par_iter().map(|&i| run_trial(spec, i, trial_seed(master_seed, i as u64))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseSummary {
    pub mean: f64,
    pub std_err: f64,
    pub median: f64,
    pub used: usize,
    pub excluded: usize,
    /// fraction of used trials with final MSE below SUCCESS_MSE
    pub success_rate: f64,
}

/// Final-MSE statistics over trials; aborted trials are excluded but counted.
pub fn summarize(reports: &[TrialReport]) -> MseSummary {
    let finals: Vec<Option<f64>> =
        reports.iter().map(|r| if r.status.is_aborted() { None } else { r.final_mse() }).collect();
    MseSummary::from_finals(&finals)
}

impl MseSummary {
    /// `None` marks an excluded trial.
    pub fn from_finals(finals: &[Option<f64>]) -> Self {
        let vals: Vec<f64> = finals.iter().flatten().copied().collect();
        let k = vals.len();
        let excluded = finals.len() - k;
        if k == 0 {
            return Self { mean: f64::NAN, std_err: f64::NAN, median: f64::NAN, used: 0, excluded, success_rate: 0.0 };
        }
        let mean = vals.iter().sum::<f64>() / k as f64;
        let var = if k > 1 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64 } else { 0.0 };
        Self {
            mean,
            std_err: (var / k as f64).sqrt(),
            median: quantile(&vals, 0.5),
            used: k,
            excluded,
            success_rate: vals.iter().filter(|v| **v < SUCCESS_MSE).count() as f64 / k as f64,
        }
    }
}

/// Linear-interpolated sample quantile.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

impl TrialReport {
    pub fn padded_history(&self, t_max: usize) -> Vec<f64> {
        let h: Vec<f64> = self.history.iter().map(|r| r.mse_n).collect();
        pad_history(h, self.status.is_aborted(), t_max)
    }
}

/// Extends a history to `t_max` entries by repeating its last value, unless
/// the run aborted; longer histories are cut.
pub fn pad_history(mut h: Vec<f64>, aborted: bool, t_max: usize) -> Vec<f64> {
    if !aborted {
        if let Some(&last) = h.last() {
            h.resize(t_max.max(h.len()), last);
        }
    }
    h.truncate(t_max);
    h
}

/// Per-iteration (t, median, q25, q75) over the histories that reach t.
pub fn iteration_quantiles(histories: &[Vec<f64>], t_max: usize) -> Vec<(usize, f64, f64, f64)> {
    (1..=t_max)
        .filter_map(|t| {
            let vals: Vec<f64> = histories.iter().filter_map(|h| h.get(t - 1).copied()).collect();
            (!vals.is_empty()).then(|| (t, quantile(&vals, 0.5), quantile(&vals, 0.25), quantile(&vals, 0.75)))
        })
        .collect()
}
