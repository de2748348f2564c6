//! Named experiments behind one trait, selected at runtime from the config.

mod analysis;
mod trials;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use glmep::solver::{pad_history, InitMode, IterRecord, TrialReport};
use glmep::spectrum::SamplingMode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::{resolve, ExperimentConfig};
use crate::output::{Manifest, Outcome, RunContext};

pub use analysis::{
    lorenz_name, lorenz_table, monotonicity_name, GClassify, GRow, Lorenz, NoiseSlope, SlopeRow, ThresholdExperiment,
    ThresholdRow,
};
pub use trials::{sigma_w2_for_snr_db, PhaseTransition, SeAccuracy, Table1, Table2};

pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;
    fn about(&self) -> &'static str;
    /// Defaults (full scale if asked) overlaid with `overrides`.
    fn resolve(&self, overrides: &Map<String, Value>, paper_scale: bool) -> Result<Value>;
    fn run(&self, params: &Value, ctx: &mut RunContext) -> Result<Outcome>;
}

/// Experiment with a typed parameter block.
pub trait Typed: Send + Sync + 'static {
    type Params: Serialize + DeserializeOwned + Default;
    const NAME: &'static str;
    const ABOUT: &'static str;

    fn paper_scale(_p: &mut Self::Params) {}

    fn execute(&self, p: &Self::Params, ctx: &mut RunContext) -> Result<Outcome>;
}

impl<T: Typed> Experiment for T {
    fn name(&self) -> &'static str {
        T::NAME
    }

    fn about(&self) -> &'static str {
        T::ABOUT
    }

    fn resolve(&self, overrides: &Map<String, Value>, paper_scale: bool) -> Result<Value> {
        let mut defaults = T::Params::default();
        if paper_scale {
            T::paper_scale(&mut defaults);
        }
        let p: T::Params = resolve(&defaults, overrides)?;
        Ok(serde_json::to_value(p)?)
    }

    fn run(&self, params: &Value, ctx: &mut RunContext) -> Result<Outcome> {
        let p: T::Params = serde_json::from_value(params.clone())?;
        self.execute(&p, ctx)
    }
}

pub struct ExperimentRegistry {
    entries: BTreeMap<&'static str, Arc<dyn Experiment>>,
}

impl Default for ExperimentRegistry {
    fn default() -> Self {
        let mut r = Self { entries: BTreeMap::new() };
        r.register(Arc::new(SeAccuracy));
        r.register(Arc::new(Table1));
        r.register(Arc::new(Table2));
        r.register(Arc::new(PhaseTransition));
        r.register(Arc::new(GClassify));
        r.register(Arc::new(Lorenz));
        r.register(Arc::new(ThresholdExperiment));
        r.register(Arc::new(NoiseSlope));
        r
    }
}

impl ExperimentRegistry {
    pub fn register(&mut self, e: Arc<dyn Experiment>) {
        self.entries.insert(e.name(), e);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Experiment>> {
        self.entries.get(name).cloned().ok_or_else(|| {
            let known: Vec<&str> = self.entries.keys().copied().collect();
            anyhow!("unknown experiment '{name}' (expected one of: {})", known.join(", "))
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<dyn Experiment>> {
        self.entries.values()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub paper_scale: bool,
    pub emit_plot_data: bool,
    pub fresh: bool,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct Finished {
    pub outcome: Outcome,
    pub summary: String,
    pub dir: PathBuf,
}

pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Finished> {
    let registry = ExperimentRegistry::default();
    let exp = registry.get(&cfg.experiment)?;
    let params =
        exp.resolve(&cfg.parameters, opts.paper_scale).with_context(|| format!("experiment '{}'", cfg.experiment))?;
    let dir = opts
        .output_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results").join(&cfg.experiment));
    let manifest = Manifest::new(exp.name(), cfg.seed, opts.paper_scale, params.clone());
    let mut ctx = RunContext::open(&dir, &manifest, opts.fresh, opts.emit_plot_data)?;
    let outcome = exp.run(&params, &mut ctx)?;
    let summary = ctx.finish(exp.name(), &outcome)?;
    Ok(Finished { outcome, summary, dir })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    Iid,
    Stratified,
}

impl From<Sampling> for SamplingMode {
    fn from(s: Sampling) -> Self {
        match s {
            Sampling::Iid => SamplingMode::Iid,
            Sampling::Stratified => SamplingMode::Stratified,
        }
    }
}

/// `None` is the uninformative start.
pub fn init_mode(init_v: Option<f64>) -> InitMode {
    init_v.map_or(InitMode::Uninformative, |v| InitMode::Informative { v })
}

/// One line of the per-iteration trial CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub iter: usize,
    pub mse_m: f64,
    pub mse_n: f64,
    pub v_l: f64,
    pub v_r: f64,
    pub status: String,
}

/// Same with the sign-resolved MSE appended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedTrialRow {
    pub trial: usize,
    pub iter: usize,
    pub mse_m: f64,
    pub mse_n: f64,
    pub v_l: f64,
    pub v_r: f64,
    pub status: String,
    pub mse_sign_resolved: f64,
}

fn row(trial: usize, h: &IterRecord, status: &str) -> SignedTrialRow {
    SignedTrialRow {
        trial,
        iter: h.t,
        mse_m: h.mse_m,
        mse_n: h.mse_n,
        v_l: h.v_l,
        v_r: h.v_r,
        status: status.to_string(),
        mse_sign_resolved: h.mse_sign_resolved,
    }
}

/// A trial that produced no iteration keeps one row at iter 0.
pub fn signed_rows(reports: &[TrialReport]) -> Vec<SignedTrialRow> {
    let mut out = Vec::new();
    for r in reports {
        let status = r.status.to_string();
        if r.history.is_empty() {
            let empty = IterRecord {
                t: 0,
                mse_n: f64::NAN,
                mse_m: f64::NAN,
                mse_sign_resolved: f64::NAN,
                v_l: f64::NAN,
                v_r: f64::NAN,
            };
            out.push(row(r.trial, &empty, &status));
        }
        out.extend(r.history.iter().map(|h| row(r.trial, h, &status)));
    }
    out
}

pub fn unsigned(rows: &[SignedTrialRow]) -> Vec<TrialRow> {
    rows.iter()
        .map(|r| TrialRow {
            trial: r.trial,
            iter: r.iter,
            mse_m: r.mse_m,
            mse_n: r.mse_n,
            v_l: r.v_l,
            v_r: r.v_r,
            status: r.status.clone(),
        })
        .collect()
}

/// Per-trial mse_n histories rebuilt from rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTrace {
    pub trial: usize,
    pub mse: Vec<f64>,
    pub aborted: bool,
}

impl TrialTrace {
    pub fn padded(&self, t_max: usize) -> Vec<f64> {
        pad_history(self.mse.clone(), self.aborted, t_max)
    }

    /// Final MSE, `None` when the trial aborted.
    pub fn final_mse(&self) -> Option<f64> {
        if self.aborted {
            None
        } else {
            self.mse.last().copied()
        }
    }
}

pub fn traces(rows: &[SignedTrialRow]) -> Vec<TrialTrace> {
    let mut out: Vec<TrialTrace> = Vec::new();
    for r in rows {
        if out.last().map(|t| t.trial) != Some(r.trial) {
            out.push(TrialTrace { trial: r.trial, mse: Vec::new(), aborted: r.status.starts_with("aborted") });
        }
        if r.iter > 0 {
            out.last_mut().expect("pushed above").mse.push(r.mse_n);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use glmep::solver::Status;
    use glmep::Error;

    fn rec(t: usize, mse: f64) -> IterRecord {
        IterRecord { t, mse_n: mse, mse_m: mse / 2.0, mse_sign_resolved: mse, v_l: 1.0, v_r: 0.5 }
    }

    #[test]
    fn rows_round_trip_to_traces() {
        let reports = vec![
            TrialReport {
                trial: 0,
                seed: 9,
                history: vec![rec(1, 0.5), rec(2, 0.25)],
                status: Status::Plateau,
                clamps: 0,
            },
            TrialReport {
                trial: 1,
                seed: 8,
                history: vec![],
                status: Status::Aborted(Error::DegenerateDivergence { gap: 1e-9 }),
                clamps: 0,
            },
        ];
        let rows = signed_rows(&reports);
        assert_eq!(rows.len(), 3);
        let t = traces(&rows);
        assert_eq!(t[0], TrialTrace { trial: 0, mse: vec![0.5, 0.25], aborted: false });
        assert_eq!(t[0].padded(3), vec![0.5, 0.25, 0.25]);
        assert!(t[1].aborted && t[1].mse.is_empty());
        assert_eq!(t[1].final_mse(), None);
        assert_eq!(unsigned(&rows)[0].mse_m, 0.25);
    }

    #[test]
    fn registry_has_every_experiment() {
        let r = ExperimentRegistry::default();
        let names: Vec<&str> = r.iter().map(|e| e.name()).collect();
        for n in [
            "se_accuracy",
            "table1_1bit",
            "table2_noisy_pr",
            "phase_transition",
            "g_classify",
            "lorenz",
            "threshold",
            "noise_slope",
        ] {
            assert!(names.contains(&n), "{n}");
        }
        assert!(r.get("fig9").is_err());
    }

    #[test]
    fn defaults_resolve_and_round_trip() {
        let r = ExperimentRegistry::default();
        for e in r.iter() {
            for scaled in [false, true] {
                let v = e.resolve(&Map::new(), scaled).unwrap();
                let again = e.resolve(v.as_object().unwrap(), false).unwrap();
                assert_eq!(v, again, "{}", e.name());
            }
        }
    }
}
