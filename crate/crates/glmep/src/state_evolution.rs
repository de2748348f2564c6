//! Scalar state evolution: the conditional MMSE of the measurement channel,
//! the maps φ and Φ, their fixed points, and the spectral recovery analysis
//! built on them.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::denoiser::{posterior_stats_with, DenoiserOptions, Workspace};
use crate::error::{Error, Result};
use crate::nonlinearity::PiecewiseFunction;
use crate::quadrature::{GaussHermite, GaussLegendre};
use crate::special::norm_pdf;
use crate::spectrum::{mse_functional, Spectrum, SpectrumFamily};

/// φ is reported as +∞ once mmse_z reaches v_r to this relative margin.
pub const PHI_DEGENERATE: f64 = 1e-12;
pub const SE_TOL: f64 = 1e-12;
pub const G_DEAD_BAND: f64 = 1e-9;
pub const THRESHOLD_TOL: f64 = 1e-3;
pub const THRESHOLD_DELTA_HI: f64 = 50.0;
pub const RECOVERY_GRID: usize = 128;
/// Below this V_r the trace is treated as exact recovery.
pub const V_R_EXACT: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmseQuadrature {
    /// Hermite nodes over the side-channel fluctuation.
    pub gh_order: usize,
    /// Legendre nodes per panel in the measured variable.
    pub gl_order: usize,
    pub max_panel: f64,
    /// Half-width of the integration range in standard deviations.
    pub span: f64,
    /// Doublings tried while successive orders disagree by more than 1e-8.
    pub refinements: usize,
}

impl Default for MmseQuadrature {
    fn default() -> Self {
        Self { gh_order: 64, gl_order: 32, max_panel: 0.5, span: 12.0, refinements: 0 }
    }
}

impl MmseQuadrature {
    fn doubled(&self) -> Self {
        Self {
            gh_order: (self.gh_order * 2).min(GaussHermite::MAX_ORDER),
            gl_order: self.gl_order * 2,
            max_panel: self.max_panel / 2.0,
            ..*self
        }
    }
}

/// SE engine for one (f, σ_w²); memoizes mmse_z across calls.
#[derive(Debug)]
pub struct StateEvolution {
    f: Arc<PiecewiseFunction>,
    sigma_w2: f64,
    quad: MmseQuadrature,
    opts: DenoiserOptions,
    cache: Mutex<HashMap<u64, f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SEState {
    pub t: usize,
    pub v_l: f64,
    pub v_r: f64,
    pub predicted_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SETrace {
    pub states: Vec<SEState>,
    pub converged: bool,
    pub v_r_star: f64,
}

impl SETrace {
    pub fn final_mse(&self) -> f64 {
        self.states.last().map_or(1.0, |s| s.predicted_mse)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgG {
    pub p: f64,
    pub g: f64,
    pub big_g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monotonicity {
    Increasing,
    Decreasing,
    NonMonotone,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub delta: f64,
    /// (last failing δ, first passing δ)
    pub bracket: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSlope {
    pub sigma_w2: Vec<f64>,
    pub mse: Vec<f64>,
    pub slopes: Vec<f64>,
    pub extrapolated: f64,
    /// extrapolated slope divided by E[1/λ]
    pub c: f64,
}

impl StateEvolution {
    pub fn new(f: PiecewiseFunction, sigma_w2: f64) -> Self {
        Self::shared(Arc::new(f), sigma_w2)
    }

    pub fn shared(f: Arc<PiecewiseFunction>, sigma_w2: f64) -> Self {
        Self {
            f,
            sigma_w2,
            quad: MmseQuadrature::default(),
            opts: DenoiserOptions::default(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_quadrature(mut self, quad: MmseQuadrature) -> Self {
        self.quad = quad;
        self
    }

    pub fn with_denoiser(mut self, opts: DenoiserOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn function(&self) -> &PiecewiseFunction {
        &self.f
    }

    pub fn sigma_w2(&self) -> f64 {
        self.sigma_w2
    }

    /// Same f at another noise level, sharing nothing but the function.
    pub fn at_noise(&self, sigma_w2: f64) -> Self {
        Self { f: self.f.clone(), sigma_w2, quad: self.quad, opts: self.opts, cache: Mutex::new(HashMap::new()) }
    }

    /// E[(Z - E[Z | Z_r, Y])²] with Z_r ~ N(0, 1 - v_r), Z | Z_r ~ N(Z_r, v_r)
    /// and Y = f(Z + W).
    pub fn mmse_z(&self, v_r: f64) -> Result<f64> {
        if !(v_r > 0.0 && v_r <= 1.0) {
            return Err(Error::InvalidParameter(format!("v_r = {v_r} outside (0, 1]")));
        }
        let key = v_r.to_bits();
        if let Some(&m) = self.cache.lock().expect("mmse cache poisoned").get(&key) {
            return Ok(m);
        }
        let mut quad = self.quad;
        let mut value = self.mmse_with(v_r, &quad)?;
        for _ in 0..self.quad.refinements {
            quad = quad.doubled();
            let finer = self.mmse_with(v_r, &quad)?;
            let settled = (finer - value).abs() <= 1e-8 * finer.abs().max(1e-300);
            value = finer;
            if settled {
                break;
            }
        }
        self.cache.lock().expect("mmse cache poisoned").insert(key, value);
        Ok(value)
    }

    /// Fills the cache for a batch of v_r values in parallel.
    pub fn prefetch(&self, grid: &[f64]) -> Result<()> {
        grid.par_iter().try_for_each(|&v| self.mmse_z(v).map(|_| ()))
    }

    fn mmse_with(&self, v: f64, quad: &MmseQuadrature) -> Result<f64> {
        let s2 = self.sigma_w2;
        let w = v + s2;
        let tau2 = 1.0 + s2;
        let tau = tau2.sqrt();
        // U = Z + W ~ N(0, τ²) and Z_r | U ~ N(kU, sd²)
        let k = (1.0 - v) / tau2;
        let sd = ((1.0 - v) * w / tau2).max(0.0).sqrt();
        let gh = GaussHermite::shared(quad.gh_order);
        let gl = GaussLegendre::shared(quad.gl_order);
        let mut ws = Workspace::default();
        let mut total = 0.0;
        for (a, b) in self.panels(w.sqrt(), quad.span * tau, quad.max_panel) {
            for (u, wu) in gl.nodes_on(a, b) {
                let pu = norm_pdf(u / tau) / tau;
                let y = self.f.evaluate(u);
                let inner = if sd == 0.0 {
                    posterior_stats_with(&self.f, k * u, y, w, &self.opts, &mut ws)?.var
                } else {
                    let mut acc = 0.0;
                    for (&xi, &wx) in gh.nodes().iter().zip(gh.weights()) {
                        acc += wx * posterior_stats_with(&self.f, k * u + sd * xi, y, w, &self.opts, &mut ws)?.var;
                    }
                    acc
                };
                total += wu * pu * inner;
            }
        }
        let c = v / w;
        Ok((c * c * total + v * s2 / w).clamp(0.0, v))
    }

    /// Integration panels in u, graded geometrically towards each breakpoint
    /// down to the posterior scale `h`.
    fn panels(&self, h: f64, half_width: f64, max_panel: f64) -> Vec<(f64, f64)> {
        let mut pts = vec![-half_width, half_width];
        for b in self.f.breakpoints() {
            pts.push(b);
            let mut d = h;
            while d < 2.0 {
                pts.push(b - d);
                pts.push(b + d);
                d *= 2.0;
            }
        }
        pts.retain(|p| p.abs() <= half_width);
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-300);
        let mut panels = Vec::with_capacity(pts.len() * 2);
        for pair in pts.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let pieces = ((b - a) / max_panel).ceil().max(1.0) as usize;
            let step = (b - a) / pieces as f64;
            for j in 0..pieces {
                let lo = a + j as f64 * step;
                let hi = if j + 1 == pieces { b } else { lo + step };
                panels.push((lo, hi));
            }
        }
        panels
    }

    /// (1/mmse_z - 1/v_r)^{-1}, +∞ at the degenerate point mmse_z = v_r.
    pub fn phi(&self, v_r: f64) -> Result<f64> {
        let m = self.mmse_z(v_r)?;
        Ok(phi_from(m, v_r))
    }

    pub fn p_g_g(&self, model: &dyn Spectrum, delta: f64, v_r: f64) -> Result<PgG> {
        let m = self.mmse_z(v_r)?;
        let g = 1.0 - delta * (1.0 - m / v_r);
        let p = mse_functional(model, phi_from(m, v_r)) - g;
        Ok(PgG { p, g, big_g: g.max(0.0) })
    }

    pub fn trace(&self, model: &dyn Spectrum, delta: f64, t_max: usize, v_r_init: f64) -> Result<SETrace> {
        self.trace_tol(model, delta, t_max, v_r_init, SE_TOL)
    }

    /// Alternates V_l = φ(V_r), V_r = Φ(V_l) until |ΔV_r| < tol.
    pub fn trace_tol(
        &self,
        model: &dyn Spectrum,
        delta: f64,
        t_max: usize,
        v_r_init: f64,
        tol: f64,
    ) -> Result<SETrace> {
        if t_max == 0 {
            return Err(Error::InvalidParameter("t_max must be at least 1".into()));
        }
        let mut v_r = v_r_init;
        let mut states = Vec::with_capacity(t_max);
        let mut converged = false;
        for t in 1..=t_max {
            let v_l = if v_r <= V_R_EXACT { 0.0 } else { self.phi(v_r)? };
            let next = big_phi(model, delta, v_l);
            states.push(SEState { t, v_l, v_r: next, predicted_mse: mse_functional(model, v_l) });
            let step = (next - v_r).abs();
            v_r = next;
            if step < tol || v_r <= V_R_EXACT {
                converged = true;
                break;
            }
        }
        Ok(SETrace { states, converged, v_r_star: v_r })
    }

    pub fn classify_g(&self, delta: f64, grid_size: usize) -> Result<Monotonicity> {
        let g = self.g_curve(delta, grid_size)?;
        Ok(classify_sequence(g.iter().map(|p| p.1)))
    }

    /// (v_r, G(v_r)) on the log grid over (1e-6, 1].
    pub fn g_curve(&self, delta: f64, grid_size: usize) -> Result<Vec<(f64, f64)>> {
        if grid_size < 16 {
            return Err(Error::InvalidParameter(format!("grid_size {grid_size} < 16")));
        }
        let grid = log_grid(1e-6, grid_size);
        self.prefetch(&grid)?;
        grid.iter()
            .map(|&v| {
                let m = self.mmse_z(v)?;
                Ok((v, (1.0 - delta * (1.0 - m / v)).max(0.0)))
            })
            .collect()
    }

    /// P(v_r) > 0 on the log grid over (1e-8, 1]. The point v_r = 1 is
    /// skipped when it is the uninformative fixed point (φ(1) = ∞).
    pub fn perfect_recovery(&self, model: &dyn Spectrum, delta: f64, grid_size: usize) -> Result<bool> {
        if grid_size < 64 {
            return Err(Error::InvalidParameter(format!("grid_size {grid_size} < 64")));
        }
        let grid = log_grid(1e-8, grid_size);
        self.prefetch(&grid)?;
        for &v in &grid {
            if v == 1.0 && self.phi(1.0)?.is_infinite() {
                continue;
            }
            if self.p_g_g(model, delta, v)?.p <= 0.0 {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn recovery_threshold(&self, family: &SpectrumFamily, tol: f64, delta_hi: f64) -> Result<Threshold> {
        self.recovery_threshold_grid(family, tol, delta_hi, RECOVERY_GRID)
    }

    pub fn recovery_threshold_grid(
        &self,
        family: &SpectrumFamily,
        tol: f64,
        delta_hi: f64,
        grid_size: usize,
    ) -> Result<Threshold> {
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol = {tol}")));
        }
        let ok = |d: f64| -> Result<bool> { self.perfect_recovery(family.at(d)?.as_ref(), d, grid_size) };
        if self.f.info_dimension() == 0.0 || !ok(delta_hi)? {
            return Err(Error::NoRecovery { delta_hi });
        }
        let (mut lo, mut hi) = (1.0, delta_hi);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if ok(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(Threshold { delta: hi, bracket: (lo, hi) })
    }
}

fn phi_from(m: f64, v_r: f64) -> f64 {
    if m >= v_r * (1.0 - PHI_DEGENERATE) {
        f64::INFINITY
    } else if m <= 0.0 {
        0.0
    } else {
        m * v_r / (v_r - m)
    }
}

/// Log-uniform grid of `n` points ending at 1, starting just above `lo`.
pub fn log_grid(lo: f64, n: usize) -> Vec<f64> {
    let a = lo.log10();
    (1..=n).map(|k| if k == n { 1.0 } else { 10f64.powf(a * (1.0 - k as f64 / n as f64)) }).collect()
}

fn classify_sequence(values: impl Iterator<Item = f64>) -> Monotonicity {
    let (mut up, mut down) = (false, false);
    let mut prev: Option<f64> = None;
    for g in values {
        if let Some(p) = prev {
            up |= g - p > G_DEAD_BAND;
            down |= g - p < -G_DEAD_BAND;
        }
        prev = Some(g);
    }
    match (up, down) {
        (_, false) => Monotonicity::Increasing,
        (false, true) => Monotonicity::Decreasing,
        (true, true) => Monotonicity::NonMonotone,
    }
}

/// Φ(v_l) = (1/((1/δ) E[v_l λ/(v_l + λ)]) - 1/v_l)^{-1}.
pub fn big_phi(model: &dyn Spectrum, delta: f64, v_l: f64) -> f64 {
    if v_l <= 0.0 {
        return 0.0;
    }
    if v_l == f64::INFINITY {
        return model.mean() / delta;
    }
    let e = model.expect(&|l| v_l * l / (v_l + l)) / delta;
    if e >= v_l {
        return f64::INFINITY;
    }
    e * v_l / (v_l - e)
}

pub fn mmse_z(f: &PiecewiseFunction, v_r: f64) -> Result<f64> {
    StateEvolution::new(f.clone(), 0.0).mmse_z(v_r)
}

pub fn mmse_z_noisy(f: &PiecewiseFunction, v_r: f64, sigma_w2: f64) -> Result<f64> {
    StateEvolution::new(f.clone(), sigma_w2).mmse_z(v_r)
}

pub fn phi(f: &PiecewiseFunction, v_r: f64, sigma_w2: f64) -> Result<f64> {
    StateEvolution::new(f.clone(), sigma_w2).phi(v_r)
}

pub fn se_trace(
    f: &PiecewiseFunction,
    model: &dyn Spectrum,
    delta: f64,
    t_max: usize,
    v_r_init: f64,
    sigma_w2: f64,
) -> Result<SETrace> {
    StateEvolution::new(f.clone(), sigma_w2).trace(model, delta, t_max, v_r_init)
}

pub fn p_g_g(f: &PiecewiseFunction, model: &dyn Spectrum, delta: f64, v_r: f64) -> Result<PgG> {
    StateEvolution::new(f.clone(), 0.0).p_g_g(model, delta, v_r)
}

pub fn classify_g(f: &PiecewiseFunction, delta: f64, grid_size: usize) -> Result<Monotonicity> {
    StateEvolution::new(f.clone(), 0.0).classify_g(delta, grid_size)
}

pub fn perfect_recovery_check(
    f: &PiecewiseFunction,
    model: &dyn Spectrum,
    delta: f64,
    grid_size: usize,
) -> Result<bool> {
    StateEvolution::new(f.clone(), 0.0).perfect_recovery(model, delta, grid_size)
}

pub fn recovery_threshold(f: &PiecewiseFunction, family: &SpectrumFamily, tol: f64) -> Result<Threshold> {
    StateEvolution::new(f.clone(), 0.0).recovery_threshold(family, tol, THRESHOLD_DELTA_HI)
}

/// Informative start: side information z + √V n scaled by 1/(1+V) leaves
/// conditional variance V/(1+V).
pub fn informative_v_r(v_side: f64) -> f64 {
    v_side / (1.0 + v_side)
}

/// Small-noise slope MSE*(σ²)/σ² along a decreasing σ² list, with a
/// Richardson step that assumes the error is linear in σ².
pub fn noise_sensitivity_slope(
    f: &PiecewiseFunction,
    model: &dyn Spectrum,
    delta: f64,
    sigma_list: &[f64],
    v_r_init: f64,
) -> Result<NoiseSlope> {
    if sigma_list.len() < 2 || sigma_list.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidParameter("need at least two positive noise levels".into()));
    }
    if sigma_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter("noise levels must decrease".into()));
    }
    let f = Arc::new(f.clone());
    let mut mse = Vec::with_capacity(sigma_list.len());
    for &s2 in sigma_list {
        let se = StateEvolution::shared(f.clone(), s2);
        let tr = se.trace_tol(model, delta, 2000, v_r_init, 1e-6 * s2)?;
        mse.push(tr.final_mse());
    }
    let slopes: Vec<f64> = mse.iter().zip(sigma_list).map(|(m, s)| m / s).collect();
    let n = slopes.len();
    let (s1, s2) = (sigma_list[n - 2], sigma_list[n - 1]);
    let extrapolated = (slopes[n - 1] * s1 - slopes[n - 2] * s2) / (s1 - s2);
    let inv_mean = model.expect(&|l| 1.0 / l);
    Ok(NoiseSlope { sigma_w2: sigma_list.to_vec(), mse, slopes, extrapolated, c: extrapolated / inv_mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::{abs, example3, identity, saturating, sign};
    use crate::special::norm_pdf;
    use crate::spectrum::{Flat, Geometric, SpectrumParams};

    /// Nested adaptive quadrature over Z_r, then Z | Z_r, of the two-root
    /// posterior variance z² / cosh²(z z_r / v).
    fn abs_mmse_oracle(v: f64) -> f64 {
        use crate::quadrature::integrate_adaptive;
        let (s, sd) = (v.sqrt(), (1.0 - v).sqrt());
        let inner = |zr: f64| {
            let body = |t: f64| {
                let z = zr + s * t;
                let c = (z * zr / v).abs().min(700.0).cosh();
                z * z / (c * c) * norm_pdf(t)
            };
            let knot = (-zr / s).clamp(-12.0, 12.0);
            integrate_adaptive(body, -12.0, knot, 1e-11, 1e-300) + integrate_adaptive(body, knot, 12.0, 1e-11, 1e-300)
        };
        let outer = |x: f64| inner(sd * x) * norm_pdf(x);
        let mut knots = vec![-12.0, 12.0, 0.0];
        for k in [1.0, 10.0, 100.0] {
            knots.push(-k * s / sd);
            knots.push(k * s / sd);
        }
        knots.retain(|x: &f64| x.abs() <= 12.0);
        knots.sort_by(f64::total_cmp);
        knots.windows(2).map(|w| integrate_adaptive(outer, w[0], w[1], 1e-11, 1e-300)).sum()
    }

    #[test]
    fn abs_mmse_matches_nested_quadrature() {
        for v in [1e-4, 0.1, 0.5, 0.9] {
            let m = mmse_z(&abs(), v).unwrap();
            let o = abs_mmse_oracle(v);
            assert!((m / o - 1.0).abs() < 1e-8, "v={v}: {m} vs {o}");
        }
    }

    #[test]
    fn identity_has_zero_mmse() {
        for v in [0.01, 0.5, 1.0] {
            assert_eq!(mmse_z(&identity(), v).unwrap(), 0.0);
            assert_eq!(phi(&identity(), v, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn even_f_is_uninformative_at_one() {
        assert!((mmse_z(&abs(), 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(phi(&abs(), 1.0, 0.0).unwrap(), f64::INFINITY);
        assert_eq!(phi(&example3(), 1.0, 0.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn sign_at_one() {
        let pi = std::f64::consts::PI;
        assert!((mmse_z(&sign(), 1.0).unwrap() - (1.0 - 2.0 / pi)).abs() < 1e-12);
        assert!((phi(&sign(), 1.0, 0.0).unwrap() - (pi - 2.0) / 2.0).abs() < 1e-11);
    }

    #[test]
    fn noiseless_reduction_and_noisy_floor() {
        let se = StateEvolution::new(abs(), 0.0);
        let noisy = StateEvolution::new(abs(), 1e-300);
        for v in [0.1, 0.5, 0.9] {
            let a = se.mmse_z(v).unwrap();
            let b = noisy.mmse_z(v).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
        for s2 in [0.01, 0.3] {
            for v in [0.05, 0.5, 1.0] {
                let m = mmse_z_noisy(&example3(), v, s2).unwrap();
                assert!(m >= v * s2 / (v + s2) - 1e-10);
                assert!(phi(&example3(), v, s2).unwrap() >= s2 - 1e-10);
            }
        }
    }

    #[test]
    fn big_phi_limits_and_flat_closed_form() {
        let f = Flat { delta: 2.0 };
        assert_eq!(big_phi(&f, 2.0, 0.0), 0.0);
        assert_eq!(big_phi(&f, 2.0, f64::INFINITY), 1.0);
        assert!((big_phi(&f, 2.0, 1.0) - 0.5).abs() < 1e-15);
        for v in [0.1, 3.0, 40.0] {
            assert!((big_phi(&f, 2.0, v) - v / (v + 1.0)).abs() < 1e-14);
        }
        let g = Geometric::new(1.5, 8.0).unwrap();
        assert!((big_phi(&g, 1.5, 1e12) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn even_trace_stays_at_one() {
        let tr = se_trace(&abs(), &Flat { delta: 2.0 }, 2.0, 10, 1.0, 0.0).unwrap();
        assert!(tr.states.iter().all(|s| s.v_r == 1.0 && s.predicted_mse == 1.0));
        assert_eq!(tr.v_r_star, 1.0);
    }

    #[test]
    fn g_limits() {
        // g(0) = 1 - δ for abs, approached at rate sqrt(v_r)
        let s = p_g_g(&abs(), &Flat { delta: 1.1 }, 1.1, 1e-4).unwrap();
        assert!((s.g + 0.1).abs() < 1e-2, "{}", s.g);
        let oracle = 1.0 - 1.1 * (1.0 - abs_mmse_oracle(1e-4) / 1e-4);
        assert!((s.g - oracle).abs() < 1e-6, "{} vs {oracle}", s.g);
        let s = p_g_g(&abs(), &Flat { delta: 1.1 }, 1.1, 1e-8).unwrap();
        assert!((s.g + 0.1).abs() < 1e-4, "{}", s.g);
        let s = p_g_g(&sign(), &Flat { delta: 4.0 }, 4.0, 1e-4).unwrap();
        assert!((s.g - 1.0).abs() < 0.05, "{}", s.g);
        let model = Geometric::new(1.3, 4.0).unwrap();
        for v in [0.01, 0.3, 0.8] {
            let s = p_g_g(&example3(), &model, 1.3, v).unwrap();
            let ph = phi(&example3(), v, 0.0).unwrap();
            assert!((s.p + s.g - mse_functional(&model, ph)).abs() < 1e-15);
        }
    }

    #[test]
    fn sequence_classification() {
        assert_eq!(classify_sequence([0.0, 0.0, 0.1, 0.5].into_iter()), Monotonicity::Increasing);
        assert_eq!(classify_sequence([0.3, 0.2, 0.2].into_iter()), Monotonicity::Decreasing);
        assert_eq!(classify_sequence([0.3, 0.2, 0.4].into_iter()), Monotonicity::NonMonotone);
    }

    #[test]
    fn recovery_needs_positive_dimension() {
        let fam = SpectrumFamily::new("flat", SpectrumParams::default());
        assert!(matches!(recovery_threshold(&sign(), &fam, THRESHOLD_TOL), Err(Error::NoRecovery { .. })));
        assert!(!perfect_recovery_check(&sign(), &Flat { delta: 3.0 }, 3.0, 64).unwrap());
    }

    #[test]
    fn saturating_mmse_is_between_abs_and_sign_style_limits() {
        let f = saturating(1.0).unwrap();
        let se = StateEvolution::new(f, 0.0);
        for v in [1e-4, 0.2, 0.9] {
            let m = se.mmse_z(v).unwrap();
            assert!(m > 0.0 && m < v);
        }
    }

    #[test]
    fn log_grid_shape() {
        let g = log_grid(1e-6, 16);
        assert_eq!(g.len(), 16);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!(g[0] > 1e-6 && g.windows(2).all(|w| w[0] < w[1]));
    }
}
