//! Posterior-mean denoiser for U ~ N(z_r, v) observed through y = f(U).

use crate::error::{Error, Result};
use crate::nonlinearity::{PiecewiseFunction, PreimageSet, ROOT_TOL};
use crate::special::{log_gauss, truncated_std_normal};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorStats {
    pub mean: f64,
    pub var: f64,
    pub log_evidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserOptions {
    /// Weight discrete roots by 1/|f'(u)|.
    pub jacobian_weights: bool,
    pub root_tol: f64,
}

impl Default for DenoiserOptions {
    fn default() -> Self {
        Self { jacobian_weights: true, root_tol: ROOT_TOL }
    }
}

/// Reusable preimage storage so the hot loop does not allocate.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    pre: PreimageSet,
    log_w: Vec<f64>,
    means: Vec<f64>,
    vars: Vec<f64>,
}

pub fn posterior_stats(f: &PiecewiseFunction, z_r: f64, y: f64, v: f64) -> Result<PosteriorStats> {
    posterior_stats_with(f, z_r, y, v, &DenoiserOptions::default(), &mut Workspace::default())
}

pub fn posterior_stats_with(
    f: &PiecewiseFunction,
    z_r: f64,
    y: f64,
    v: f64,
    opts: &DenoiserOptions,
    ws: &mut Workspace,
) -> Result<PosteriorStats> {
    if !(v > 0.0) {
        return Err(Error::NonPositiveVariance { name: "v", value: v });
    }
    f.preimage_into(y, opts.root_tol, &mut ws.pre)?;
    if ws.pre.is_empty() {
        return Err(Error::EmptyPreimage { y });
    }
    ws.log_w.clear();
    ws.means.clear();
    ws.vars.clear();
    if !ws.pre.intervals.is_empty() {
        // a flat level carries positive probability; isolated roots do not
        let s = v.sqrt();
        for &(a, b) in &ws.pre.intervals {
            let t = truncated_std_normal((a - z_r) / s, (b - z_r) / s);
            ws.log_w.push(t.log_mass);
            ws.means.push(z_r + s * t.mean);
            ws.vars.push(v * t.var);
        }
    } else {
        if ws.pre.points.len() == 1 {
            let (u, jac) = ws.pre.points[0];
            let mut log_evidence = log_gauss(u, z_r, v);
            if opts.jacobian_weights {
                log_evidence -= jac.ln();
            }
            return Ok(PosteriorStats { mean: u, var: 0.0, log_evidence });
        }
        for &(u, jac) in &ws.pre.points {
            let mut lw = log_gauss(u, z_r, v);
            if opts.jacobian_weights {
                lw -= jac.ln();
            }
            ws.log_w.push(lw);
            ws.means.push(u);
            ws.vars.push(0.0);
        }
    }
    mixture(&ws.log_w, &ws.means, &ws.vars).ok_or(Error::NumericalUnderflow { y })
}

fn mixture(log_w: &[f64], means: &[f64], vars: &[f64]) -> Option<PosteriorStats> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut total = 0.0;
    let mut m1 = 0.0;
    for (lw, m) in log_w.iter().zip(means) {
        let w = (lw - max).exp();
        total += w;
        m1 += w * m;
    }
    if !(total > 0.0) {
        return None;
    }
    let mean = m1 / total;
    let mut var = 0.0;
    for ((lw, m), s) in log_w.iter().zip(means).zip(vars) {
        let w = (lw - max).exp() / total;
        let d = m - mean;
        var += w * (s + d * d);
    }
    Some(PosteriorStats { mean, var: var.max(0.0), log_evidence: max + total.ln() })
}

/// d/dz_r of the posterior mean, which is var/v for a Gaussian prior.
pub fn eta_prime(f: &PiecewiseFunction, z_r: f64, y: f64, v: f64) -> Result<f64> {
    Ok(posterior_stats(f, z_r, y, v)?.var / v)
}

/// Posterior of Z ~ N(z_r, v) given y = f(Z + W), W ~ N(0, sigma_w2).
pub fn posterior_stats_noisy(f: &PiecewiseFunction, z_r: f64, y: f64, v: f64, sigma_w2: f64) -> Result<PosteriorStats> {
    posterior_stats_noisy_with(f, z_r, y, v, sigma_w2, &DenoiserOptions::default(), &mut Workspace::default())
}

pub fn posterior_stats_noisy_with(
    f: &PiecewiseFunction,
    z_r: f64,
    y: f64,
    v: f64,
    sigma_w2: f64,
    opts: &DenoiserOptions,
    ws: &mut Workspace,
) -> Result<PosteriorStats> {
    if sigma_w2 < 0.0 {
        return Err(Error::InvalidParameter(format!("sigma_w2 = {sigma_w2} < 0")));
    }
    if sigma_w2 == 0.0 {
        return posterior_stats_with(f, z_r, y, v, opts, ws);
    }
    let w = v + sigma_w2;
    let c = v / w;
    let u = posterior_stats_with(f, z_r, y, w, opts, ws)?;
    Ok(PosteriorStats {
        mean: z_r + c * (u.mean - z_r),
        var: c * c * u.var + v * sigma_w2 / w,
        log_evidence: u.log_evidence,
    })
}

/// Denoises a whole vector into `out`; returns the mean of eta' over entries.
#[allow(clippy::too_many_arguments)]
pub fn denoise_into(
    f: &PiecewiseFunction,
    z_r: &[f64],
    y: &[f64],
    v: f64,
    sigma_w2: f64,
    opts: &DenoiserOptions,
    ws: &mut Workspace,
    out: &mut [f64],
) -> Result<f64> {
    if z_r.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: z_r.len(), got: y.len() });
    }
    if out.len() != z_r.len() {
        return Err(Error::DimensionMismatch { expected: z_r.len(), got: out.len() });
    }
    let mut acc = 0.0;
    for (i, ((&zr, &yi), o)) in z_r.iter().zip(y).zip(out.iter_mut()).enumerate() {
        let p = posterior_stats_noisy_with(f, zr, yi, v, sigma_w2, opts, ws).map_err(|e| e.at(i))?;
        *o = p.mean;
        acc += p.var;
    }
    Ok(acc / (z_r.len() as f64 * v))
}

/// (1/m) sum of eta' over the entries.
pub fn divergence_mean(f: &PiecewiseFunction, z_r: &[f64], y: &[f64], v: f64, sigma_w2: f64) -> Result<f64> {
    if z_r.is_empty() {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    let mut out = vec![0.0; z_r.len()];
    denoise_into(f, z_r, y, v, sigma_w2, &DenoiserOptions::default(), &mut Workspace::default(), &mut out)
}
