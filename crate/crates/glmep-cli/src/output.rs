use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.txt";
pub const PLOT_DATA: &str = "plot_data.csv";
const CELLS: &str = "cells";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub seed: u64,
    pub paper_scale: bool,
    pub parameters: Value,
    pub version: String,
    #[serde(default)]
    pub git_rev: Option<String>,
}

impl Manifest {
    pub fn new(experiment: &str, seed: u64, paper_scale: bool, parameters: Value) -> Self {
        Self {
            experiment: experiment.to_string(),
            seed,
            paper_scale,
            parameters,
            version: env!("CARGO_PKG_VERSION").to_string(),
            git_rev: git_rev(),
        }
    }

    /// Same experiment, seed and resolved parameters.
    pub fn same_run(&self, other: &Manifest) -> bool {
        self.experiment == other.experiment && self.seed == other.seed && self.parameters == other.parameters
    }
}

fn git_rev() -> Option<String> {
    let out = std::process::Command::new("git").args(["rev-parse", "--short", "HEAD"]).output().ok()?;
    out.status.success().then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.notes.push(line.into());
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check::new(name, passed, detail));
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlotRow {
    series: String,
    x: f64,
    y: f64,
}

/// Output directory of one experiment run, with per-cell caching.
#[derive(Debug)]
pub struct RunContext {
    dir: PathBuf,
    pub seed: u64,
    emit_plot_data: bool,
    plot_rows: Vec<PlotRow>,
    pub cells_reused: usize,
    pub cells_computed: usize,
}

impl RunContext {
    /// Reuses cached cells when the directory holds the same run; a
    /// different run is refused unless `fresh` clears it.
    pub fn open(dir: &Path, manifest: &Manifest, fresh: bool, emit_plot_data: bool) -> Result<Self> {
        fs::create_dir_all(dir.join(CELLS)).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(MANIFEST);
        if path.exists() {
            let old: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)
                .with_context(|| format!("reading {}", path.display()))?;
            if !old.same_run(manifest) {
                if !fresh {
                    bail!(
                        "{} holds a different run ({}, seed {}); pass --fresh to overwrite",
                        dir.display(),
                        old.experiment,
                        old.seed
                    );
                }
                fs::remove_dir_all(dir.join(CELLS))?;
                fs::create_dir_all(dir.join(CELLS))?;
            }
        }
        fs::write(&path, serde_json::to_string_pretty(manifest)? + "\n")?;
        Ok(Self {
            dir: dir.to_path_buf(),
            seed: manifest.seed,
            emit_plot_data,
            plot_rows: Vec::new(),
            cells_reused: 0,
            cells_computed: 0,
        })
    }

    /// Loads the rows of `key` if cached, else computes and stores them.
    pub fn cell<R, F>(&mut self, key: &str, compute: F) -> Result<Vec<R>>
    where
        R: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<Vec<R>>,
    {
        let path = self.dir.join(CELLS).join(format!("{}.csv", sanitize(key)));
        if path.exists() {
            self.cells_reused += 1;
            return read_csv(&path);
        }
        let rows = compute()?;
        let tmp = path.with_extension("tmp");
        write_csv(&tmp, &rows)?;
        fs::rename(&tmp, &path)?;
        self.cells_computed += 1;
        Ok(rows)
    }

    pub fn write_csv<R: Serialize>(&self, name: &str, rows: &[R]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_csv(&path, rows)?;
        Ok(path)
    }

    pub fn plot(&mut self, series: &str, x: f64, y: f64) {
        if self.emit_plot_data {
            self.plot_rows.push(PlotRow { series: series.to_string(), x, y });
        }
    }

    /// Writes the summary (and plot data) and returns the summary text.
    pub fn finish(self, experiment: &str, outcome: &Outcome) -> Result<String> {
        if self.emit_plot_data {
            write_csv(&self.dir.join(PLOT_DATA), &self.plot_rows)?;
        }
        let text = render_summary(experiment, outcome, self.cells_computed, self.cells_reused);
        fs::write(self.dir.join(SUMMARY), &text)?;
        Ok(text)
    }
}

pub fn render_summary(experiment: &str, outcome: &Outcome, computed: usize, reused: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "experiment: {experiment}");
    for n in &outcome.notes {
        let _ = writeln!(s, "{n}");
    }
    for c in &outcome.checks {
        let _ = writeln!(s, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let _ = writeln!(s, "cells computed: {computed}, reused: {reused}");
    let _ = writeln!(s, "overall: {}", if outcome.passed() { "PASS" } else { "FAIL" });
    s
}

fn sanitize(key: &str) -> String {
    key.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize().collect::<std::result::Result<Vec<R>, _>>().with_context(|| format!("parsing {}", path.display()))
}

/// CSV to any writer (stdout for the direct subcommands).
pub fn emit_csv<R: Serialize, W: std::io::Write>(out: W, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        a: usize,
        b: f64,
        s: String,
    }

    #[test]
    fn cells_are_cached_and_foreign_runs_refused() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::new("demo", 3, false, serde_json::json!({"n": 4}));
        let rows =
            || Ok(vec![Row { a: 1, b: f64::NAN, s: "aborted: x, y".into() }, Row { a: 2, b: 0.5, s: "ok".into() }]);
        let mut ctx = RunContext::open(dir.path(), &m, false, false).unwrap();
        let first: Vec<Row> = ctx.cell("delta=2/beta=0", rows).unwrap();
        assert_eq!(ctx.cells_computed, 1);
        let mut ctx = RunContext::open(dir.path(), &m, false, false).unwrap();
        let again: Vec<Row> = ctx.cell("delta=2/beta=0", || panic!("recomputed")).unwrap();
        assert_eq!(ctx.cells_reused, 1);
        assert!(again[0].b.is_nan());
        assert_eq!(again[0].s, first[0].s);
        assert_eq!(again[1], first[1]);

        let other = Manifest::new("demo", 4, false, serde_json::json!({"n": 4}));
        assert!(RunContext::open(dir.path(), &other, false, false).is_err());
        let mut ctx = RunContext::open(dir.path(), &other, true, false).unwrap();
        let _: Vec<Row> = ctx.cell("delta=2/beta=0", rows).unwrap();
        assert_eq!(ctx.cells_computed, 1);
    }

    #[test]
    fn summary_lists_checks() {
        let mut o = Outcome::default();
        o.note("n = 4");
        o.check("band", true, "0.2 in [0.1, 0.3]");
        o.check("order", false, "2 > 1");
        let s = render_summary("demo", &o, 1, 0);
        assert!(s.contains("PASS band"));
        assert!(s.contains("FAIL order"));
        assert!(s.ends_with("overall: FAIL\n"));
    }
}
