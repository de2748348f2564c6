//! Monte Carlo experiments: SE tracking, the two tables, phase transitions.

use std::sync::Arc;

use anyhow::{bail, Result};
use glmep::solver::{iteration_quantiles, run_trials, MseSummary, TrialSpec, SUCCESS_MSE};
use glmep::state_evolution::{informative_v_r, StateEvolution};
use glmep::{PiecewiseFunction, Spectrum};
use serde::{Deserialize, Serialize};

use super::{init_mode, signed_rows, traces, unsigned, Sampling, SignedTrialRow, TrialTrace, Typed};
use crate::config::{FunctionSpec, SpectrumSpec};
use crate::output::{Outcome, RunContext};

const DESK_N: usize = 1 << 15;
const DESK_TRIALS: usize = 50;

struct Setting<'a> {
    f: &'a Arc<PiecewiseFunction>,
    model: Arc<dyn Spectrum>,
    delta: f64,
    n: usize,
    sigma_w2: f64,
    t_max: usize,
    init_v: Option<f64>,
    sampling: Sampling,
}

impl Setting<'_> {
    fn spec(&self) -> TrialSpec {
        TrialSpec {
            n: self.n,
            delta: self.delta,
            f: self.f.clone(),
            model: self.model.clone(),
            sigma_w2: self.sigma_w2,
            t_max: self.t_max,
            init: init_mode(self.init_v),
            sampling: self.sampling.into(),
        }
    }

    /// Trial rows for one cell, cached under `key`.
    fn trials(&self, ctx: &mut RunContext, key: &str, trials: usize, seed: u64) -> Result<Vec<SignedTrialRow>> {
        let spec = self.spec();
        ctx.cell(key, || Ok(signed_rows(&run_trials(&spec, trials, seed)?)))
    }

    fn se(&self) -> Result<Vec<f64>> {
        let se = StateEvolution::shared(self.f.clone(), self.sigma_w2);
        let v0 = self.init_v.map_or(1.0, informative_v_r);
        let tr = se.trace(self.model.as_ref(), self.delta, self.t_max, v0)?;
        let mut mse: Vec<f64> = tr.states.iter().map(|s| s.predicted_mse).collect();
        let last = tr.final_mse();
        mse.resize(self.t_max, last);
        Ok(mse)
    }
}

fn finals(traces: &[TrialTrace]) -> MseSummary {
    MseSummary::from_finals(&traces.iter().map(TrialTrace::final_mse).collect::<Vec<_>>())
}

/// Cell seed: the run seed offset by the cell index keeps cells independent.
fn cell_seed(seed: u64, cell: usize) -> u64 {
    seed.wrapping_add((cell as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tracking {
    /// enforce from n = 2^15 up, flag below
    Auto,
    Enforce,
    Flag,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeAccuracyParams {
    pub f: FunctionSpec,
    pub delta: f64,
    pub spectrum: SpectrumSpec,
    pub n: usize,
    pub trials: usize,
    pub t_max: usize,
    pub init_v: Option<f64>,
    pub sampling: Sampling,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// predictions below this use `abs_tol`
    pub abs_below: f64,
    pub min_success: f64,
    pub tracking: Tracking,
}

impl Default for SeAccuracyParams {
    fn default() -> Self {
        Self {
            f: FunctionSpec::named("abs"),
            delta: 1.01,
            spectrum: SpectrumSpec::geometric(20.0),
            n: DESK_N,
            trials: DESK_TRIALS,
            t_max: 30,
            init_v: Some(20.0),
            sampling: Sampling::Iid,
            rel_tol: 0.15,
            abs_tol: 1e-3,
            abs_below: 1e-2,
            min_success: 0.8,
            tracking: Tracking::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub t: usize,
    pub mse_se: f64,
    pub mse_mc_median: f64,
    pub mse_mc_q25: f64,
    pub mse_mc_q75: f64,
    pub mse_mc_iqr: f64,
    pub within_tol: bool,
}

pub fn within_tol(se: f64, mc: f64, rel_tol: f64, abs_tol: f64, abs_below: f64) -> bool {
    let err = (mc - se).abs();
    if se < abs_below {
        err <= abs_tol
    } else {
        err <= rel_tol * se
    }
}

pub struct SeAccuracy;

impl Typed for SeAccuracy {
    type Params = SeAccuracyParams;
    const NAME: &'static str = "se_accuracy";
    const ABOUT: &'static str = "per-iteration Monte Carlo MSE against the SE prediction";

    fn paper_scale(p: &mut SeAccuracyParams) {
        p.n = 200_000;
        p.trials = 1000;
    }

    fn execute(&self, p: &SeAccuracyParams, ctx: &mut RunContext) -> Result<Outcome> {
        let f = p.f.build()?;
        let set = Setting {
            f: &f,
            model: p.spectrum.at(p.delta)?,
            delta: p.delta,
            n: p.n,
            sigma_w2: 0.0,
            t_max: p.t_max,
            init_v: p.init_v,
            sampling: p.sampling,
        };
        let rows = set.trials(ctx, "trials", p.trials, ctx.seed)?;
        let tr = traces(&rows);
        let se = set.se()?;
        let padded: Vec<Vec<f64>> = tr.iter().map(|t| t.padded(p.t_max)).collect();
        let table: Vec<AlignmentRow> = iteration_quantiles(&padded, p.t_max)
            .into_iter()
            .map(|(t, med, q25, q75)| AlignmentRow {
                t,
                mse_se: se[t - 1],
                mse_mc_median: med,
                mse_mc_q25: q25,
                mse_mc_q75: q75,
                mse_mc_iqr: q75 - q25,
                within_tol: within_tol(se[t - 1], med, p.rel_tol, p.abs_tol, p.abs_below),
            })
            .collect();
        for r in &table {
            ctx.plot("se", r.t as f64, r.mse_se);
            ctx.plot("mc_median", r.t as f64, r.mse_mc_median);
        }
        ctx.write_csv("results.csv", &table)?;
        ctx.write_csv("trials.csv", &unsigned(&rows))?;

        let mut out = Outcome::default();
        out.note(format!(
            "f = {}, delta = {}, spectrum = {}, n = {}, trials = {}",
            f.name(),
            p.delta,
            p.spectrum.label(),
            p.n,
            p.trials
        ));
        let misses: Vec<usize> = table.iter().filter(|r| !r.within_tol).map(|r| r.t).collect();
        let enforce = match p.tracking {
            Tracking::Auto => p.n >= DESK_N,
            Tracking::Enforce => true,
            Tracking::Flag => false,
        };
        let detail = if misses.is_empty() {
            format!("all {} iterations within tolerance", table.len())
        } else {
            format!("iterations outside tolerance: {misses:?}")
        };
        if enforce {
            out.check("tracking", misses.is_empty() && table.len() == p.t_max, detail);
        } else {
            out.note(format!("tracking (flagged only at n = {}): {detail}", p.n));
        }
        let successes = tr.iter().filter(|t| t.final_mse().is_some_and(|m| m < SUCCESS_MSE)).count();
        let rate = successes as f64 / tr.len().max(1) as f64;
        let detail =
            format!("{successes}/{} trials end below {SUCCESS_MSE:e} (need {:.0}%)", tr.len(), 100.0 * p.min_success);
        if enforce {
            out.check("recovery", rate >= p.min_success, detail);
        } else {
            out.note(format!("recovery (flagged only at n = {}): {detail}", p.n));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandCheck {
    pub at: f64,
    pub target: f64,
    /// absolute half-width
    #[serde(default)]
    pub tol: Option<f64>,
    /// relative half-width
    #[serde(default)]
    pub rel_tol: Option<f64>,
}

impl BandCheck {
    fn half_width(&self) -> Result<f64> {
        match (self.tol, self.rel_tol) {
            (Some(t), None) => Ok(t),
            (None, Some(r)) => Ok(r * self.target.abs()),
            _ => bail!("check at {} needs exactly one of tol / rel_tol", self.at),
        }
    }

    fn evaluate(&self, value: f64, label: &str, out: &mut Outcome) -> Result<()> {
        let hw = self.half_width()?;
        out.check(
            format!("{label} = {}", self.at),
            (value - self.target).abs() <= hw,
            format!("mean {value:.5e}, target {:.5e} +- {hw:.3e}", self.target),
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub delta: f64,
    pub mse_mean: f64,
    pub mse_stderr: f64,
    pub mse_median: f64,
    pub mse_se: f64,
    pub mse_reference: Option<f64>,
    pub used: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub snr_db: f64,
    pub sigma_w2: f64,
    pub mse_mean: f64,
    pub mse_stderr: f64,
    pub mse_median: f64,
    pub mse_se: f64,
    pub mse_reference: Option<f64>,
    pub used: usize,
    pub excluded: usize,
}

/// Trial rows of a swept table, tagged with the grid value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTrialRow {
    pub grid: f64,
    pub trial: usize,
    pub iter: usize,
    pub mse_m: f64,
    pub mse_n: f64,
    pub v_l: f64,
    pub v_r: f64,
    pub status: String,
}

impl GridTrialRow {
    fn tag(grid: f64, rows: &[SignedTrialRow]) -> impl Iterator<Item = Self> + '_ {
        unsigned(rows).into_iter().map(move |r| Self {
            grid,
            trial: r.trial,
            iter: r.iter,
            mse_m: r.mse_m,
            mse_n: r.mse_n,
            v_l: r.v_l,
            v_r: r.v_r,
            status: r.status,
        })
    }
}

struct TableRow {
    x: f64,
    sigma_w2: f64,
    s: MseSummary,
    mse_se: f64,
    mse_reference: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Table1Params {
    pub f: FunctionSpec,
    pub spectrum: SpectrumSpec,
    pub deltas: Vec<f64>,
    pub reference_mse: Vec<f64>,
    pub n: usize,
    pub trials: usize,
    pub t_max: usize,
    pub init_v: Option<f64>,
    pub sampling: Sampling,
    pub checks: Vec<BandCheck>,
}

impl Default for Table1Params {
    fn default() -> Self {
        Self {
            f: FunctionSpec::named("sign"),
            spectrum: SpectrumSpec::geometric(0.0),
            deltas: vec![1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0],
            reference_mse: vec![0.2771, 0.2091, 0.1622, 0.1286, 0.1042, 0.0846, 0.0714, 0.0607],
            n: DESK_N,
            trials: DESK_TRIALS,
            t_max: 20,
            init_v: None,
            sampling: Sampling::Iid,
            checks: vec![
                BandCheck { at: 2.0, target: 0.2091, tol: Some(0.01), rel_tol: None },
                BandCheck { at: 5.0, target: 0.0607, tol: Some(0.005), rel_tol: None },
            ],
        }
    }
}

fn table_checks(rows: &[TableRow], checks: &[BandCheck], label: &str, out: &mut Outcome) -> Result<()> {
    for c in checks {
        match rows.iter().find(|r| (r.x - c.at).abs() < 1e-9) {
            Some(r) => c.evaluate(r.s.mean, label, out)?,
            None => out.check(format!("{label} = {}", c.at), false, "not on the configured grid"),
        }
    }
    Ok(())
}

pub struct Table1;

impl Typed for Table1 {
    type Params = Table1Params;
    const NAME: &'static str = "table1_1bit";
    const ABOUT: &'static str = "1-bit compressed sensing MSE across delta";

    fn paper_scale(p: &mut Table1Params) {
        p.n = 100_000;
        p.trials = 100;
    }

    fn execute(&self, p: &Table1Params, ctx: &mut RunContext) -> Result<Outcome> {
        let f = p.f.build()?;
        let mut rows = Vec::new();
        let mut trials_out = Vec::new();
        for (i, &delta) in p.deltas.iter().enumerate() {
            let set = Setting {
                f: &f,
                model: p.spectrum.at(delta)?,
                delta,
                n: p.n,
                sigma_w2: 0.0,
                t_max: p.t_max,
                init_v: p.init_v,
                sampling: p.sampling,
            };
            let cell = set.trials(ctx, &format!("delta={delta}"), p.trials, cell_seed(ctx.seed, i))?;
            let s = finals(&traces(&cell));
            let se = set.se()?[p.t_max - 1];
            ctx.plot("mc_mean", delta, s.mean);
            ctx.plot("se", delta, se);
            rows.push(TableRow {
                x: delta,
                sigma_w2: 0.0,
                s,
                mse_se: se,
                mse_reference: p.reference_mse.get(i).copied(),
            });
            trials_out.extend(GridTrialRow::tag(delta, &cell));
        }
        let csv: Vec<Table1Row> = rows
            .iter()
            .map(|r| Table1Row {
                delta: r.x,
                mse_mean: r.s.mean,
                mse_stderr: r.s.std_err,
                mse_median: r.s.median,
                mse_se: r.mse_se,
                mse_reference: r.mse_reference,
                used: r.s.used,
                excluded: r.s.excluded,
            })
            .collect();
        ctx.write_csv("results.csv", &csv)?;
        ctx.write_csv("trials.csv", &trials_out)?;
        let mut out = Outcome::default();
        out.note(format!(
            "f = {}, spectrum = {}, n = {}, trials = {}, iterations = {}",
            f.name(),
            p.spectrum.label(),
            p.n,
            p.trials,
            p.t_max
        ));
        table_checks(&rows, &p.checks, "delta", &mut out)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Table2Params {
    pub f: FunctionSpec,
    pub spectrum: SpectrumSpec,
    pub delta: f64,
    pub snr_db: Vec<f64>,
    pub reference_mse: Vec<f64>,
    pub n: usize,
    pub trials: usize,
    pub t_max: usize,
    pub init_v: Option<f64>,
    pub sampling: Sampling,
    pub checks: Vec<BandCheck>,
}

impl Default for Table2Params {
    fn default() -> Self {
        Self {
            f: FunctionSpec::named("abs"),
            spectrum: SpectrumSpec::geometric(10.0),
            delta: 1.1,
            snr_db: vec![30.0, 35.0, 40.0, 45.0, 50.0],
            reference_mse: vec![1.28e-1, 5.92e-2, 2.18e-2, 6.94e-3, 2.14e-3],
            n: DESK_N,
            trials: DESK_TRIALS,
            t_max: 10,
            init_v: Some(20.0),
            sampling: Sampling::Iid,
            checks: vec![BandCheck { at: 40.0, target: 2.18e-2, tol: None, rel_tol: Some(0.2) }],
        }
    }
}

/// E‖Ax‖²/m = 1, so σ_w² = 10^(-SNR/10).
pub fn sigma_w2_for_snr_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

pub struct Table2;

impl Typed for Table2 {
    type Params = Table2Params;
    const NAME: &'static str = "table2_noisy_pr";
    const ABOUT: &'static str = "noisy phase retrieval MSE across SNR";

    fn paper_scale(p: &mut Table2Params) {
        p.n = 100_000;
        p.trials = 100;
    }

    fn execute(&self, p: &Table2Params, ctx: &mut RunContext) -> Result<Outcome> {
        let f = p.f.build()?;
        let model = p.spectrum.at(p.delta)?;
        let mut rows = Vec::new();
        let mut trials_out = Vec::new();
        for (i, &snr) in p.snr_db.iter().enumerate() {
            let sigma_w2 = sigma_w2_for_snr_db(snr);
            let set = Setting {
                f: &f,
                model: model.clone(),
                delta: p.delta,
                n: p.n,
                sigma_w2,
                t_max: p.t_max,
                init_v: p.init_v,
                sampling: p.sampling,
            };
            let cell = set.trials(ctx, &format!("snr_db={snr}"), p.trials, cell_seed(ctx.seed, i))?;
            let s = finals(&traces(&cell));
            let se = set.se()?[p.t_max - 1];
            ctx.plot("mc_mean", snr, s.mean);
            ctx.plot("se", snr, se);
            rows.push(TableRow { x: snr, sigma_w2, s, mse_se: se, mse_reference: p.reference_mse.get(i).copied() });
            trials_out.extend(GridTrialRow::tag(snr, &cell));
        }
        let csv: Vec<Table2Row> = rows
            .iter()
            .map(|r| Table2Row {
                snr_db: r.x,
                sigma_w2: r.sigma_w2,
                mse_mean: r.s.mean,
                mse_stderr: r.s.std_err,
                mse_median: r.s.median,
                mse_se: r.mse_se,
                mse_reference: r.mse_reference,
                used: r.s.used,
                excluded: r.s.excluded,
            })
            .collect();
        ctx.write_csv("results.csv", &csv)?;
        ctx.write_csv("trials.csv", &trials_out)?;
        let mut out = Outcome::default();
        out.note(format!(
            "f = {}, delta = {}, spectrum = {}, n = {}, trials = {}, iterations = {}",
            f.name(),
            p.delta,
            p.spectrum.label(),
            p.n,
            p.trials,
            p.t_max
        ));
        table_checks(&rows, &p.checks, "snr_db", &mut out)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseTransitionParams {
    pub f: FunctionSpec,
    pub betas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub n: usize,
    pub trials: usize,
    pub t_max: usize,
    pub init_v: Option<f64>,
    pub sampling: Sampling,
    /// final MSE below this is a success
    pub success_mse: f64,
    /// empirical threshold: first δ whose success rate reaches this
    pub success_level: f64,
}

impl Default for PhaseTransitionParams {
    fn default() -> Self {
        Self {
            f: FunctionSpec::named("abs"),
            betas: vec![0.0, 5.0, 10.0, 20.0],
            deltas: vec![1.02, 1.05, 1.1, 1.15, 1.2, 1.3, 1.4, 1.5, 1.6, 1.8, 2.0],
            n: DESK_N,
            trials: DESK_TRIALS,
            t_max: 100,
            init_v: Some(20.0),
            sampling: Sampling::Iid,
            success_mse: SUCCESS_MSE,
            success_level: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub beta: f64,
    pub delta: f64,
    pub success_rate: f64,
    pub mse_mean: f64,
    pub mse_median: f64,
    pub used: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseThresholdRow {
    pub beta: f64,
    pub empirical_threshold: Option<f64>,
    pub se_threshold: Option<f64>,
}

pub struct PhaseTransition;

impl Typed for PhaseTransition {
    type Params = PhaseTransitionParams;
    const NAME: &'static str = "phase_transition";
    const ABOUT: &'static str = "empirical success probability over a (delta, beta) grid";

    fn paper_scale(p: &mut PhaseTransitionParams) {
        p.n = 200_000;
        p.trials = 100;
    }

    fn execute(&self, p: &PhaseTransitionParams, ctx: &mut RunContext) -> Result<Outcome> {
        let f = p.f.build()?;
        let mut cells = Vec::new();
        let mut thresholds = Vec::new();
        let mut index = 0;
        for &beta in &p.betas {
            let spectrum = SpectrumSpec::geometric(beta);
            let mut empirical = None;
            for &delta in &p.deltas {
                let set = Setting {
                    f: &f,
                    model: spectrum.at(delta)?,
                    delta,
                    n: p.n,
                    sigma_w2: 0.0,
                    t_max: p.t_max,
                    init_v: p.init_v,
                    sampling: p.sampling,
                };
                let key = format!("beta={beta}_delta={delta}");
                let tr = traces(&set.trials(ctx, &key, p.trials, cell_seed(ctx.seed, index))?);
                index += 1;
                let s = finals(&tr);
                let wins = tr.iter().filter(|t| t.final_mse().is_some_and(|m| m < p.success_mse)).count();
                let rate = wins as f64 / tr.len().max(1) as f64;
                if empirical.is_none() && rate >= p.success_level {
                    empirical = Some(delta);
                }
                ctx.plot(&format!("beta={beta}"), delta, rate);
                cells.push(PhaseRow {
                    beta,
                    delta,
                    success_rate: rate,
                    mse_mean: s.mean,
                    mse_median: s.median,
                    used: s.used,
                    excluded: s.excluded,
                });
            }
            let se = StateEvolution::shared(f.clone(), 0.0)
                .recovery_threshold(
                    &spectrum.family(),
                    glmep::state_evolution::THRESHOLD_TOL,
                    glmep::state_evolution::THRESHOLD_DELTA_HI,
                )
                .ok()
                .map(|t| t.delta);
            thresholds.push(PhaseThresholdRow { beta, empirical_threshold: empirical, se_threshold: se });
        }
        ctx.write_csv("results.csv", &cells)?;
        ctx.write_csv("thresholds.csv", &thresholds)?;

        let mut out = Outcome::default();
        out.note(format!(
            "f = {}, n = {}, trials = {}, success: final MSE < {:e}",
            f.name(),
            p.n,
            p.trials,
            p.success_mse
        ));
        for t in &thresholds {
            out.note(format!(
                "beta = {}: empirical threshold {}, SE threshold {}",
                t.beta,
                t.empirical_threshold.map_or("beyond grid".into(), |d| d.to_string()),
                t.se_threshold.map_or("none".into(), |d| format!("{d:.4}"))
            ));
        }
        let mut sorted = thresholds.clone();
        sorted.sort_by(|a, b| a.beta.total_cmp(&b.beta));
        let key = |t: &PhaseThresholdRow| t.empirical_threshold.unwrap_or(f64::INFINITY);
        let monotone = sorted.windows(2).all(|w| key(&w[1]) <= key(&w[0]));
        out.check(
            "spikier spectra recover no later",
            monotone,
            format!("{:?}", sorted.iter().map(key).collect::<Vec<_>>()),
        );
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_switches_to_absolute() {
        assert!(within_tol(0.5, 0.57, 0.15, 1e-3, 1e-2));
        assert!(!within_tol(0.5, 0.58, 0.15, 1e-3, 1e-2));
        assert!(within_tol(1e-5, 9e-4, 0.15, 1e-3, 1e-2));
        assert!(!within_tol(1e-5, 2e-3, 0.15, 1e-3, 1e-2));
    }

    #[test]
    fn snr_conversion() {
        assert!((sigma_w2_for_snr_db(40.0) - 1e-4).abs() < 1e-18);
        assert!((sigma_w2_for_snr_db(0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn band_needs_one_width() {
        let mut out = Outcome::default();
        let both = BandCheck { at: 2.0, target: 0.2, tol: Some(0.1), rel_tol: Some(0.1) };
        assert!(both.evaluate(0.2, "delta", &mut out).is_err());
        let rel = BandCheck { at: 40.0, target: 2e-2, tol: None, rel_tol: Some(0.2) };
        rel.evaluate(2.3e-2, "snr_db", &mut out).unwrap();
        rel.evaluate(2.5e-2, "snr_db", &mut out).unwrap();
        assert_eq!(out.checks.iter().map(|c| c.passed).collect::<Vec<_>>(), vec![true, false]);
    }

    #[test]
    fn cell_seeds_differ() {
        assert_ne!(cell_seed(1, 0), cell_seed(1, 1));
        assert_eq!(cell_seed(7, 0), 7);
    }
}
