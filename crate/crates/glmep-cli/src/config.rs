use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use glmep::nonlinearity::{AffineRecord, Catalog, FunctionParams};
use glmep::spectrum::{SpectrumFamily, SpectrumParams};
use glmep::{PiecewiseFunction, Spectrum};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

/// Top-level experiment file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default)]
    pub parameters: Map<String, Value>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_seed() -> u64 {
    1
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Real number that also accepts "inf" / "-inf" in JSON.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Real(pub f64);

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else if self.0 > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Real(v)),
            Raw::Text(t) => match t.as_str() {
                "inf" | "+inf" | "Infinity" => Ok(Real(f64::INFINITY)),
                "-inf" | "-Infinity" => Ok(Real(f64::NEG_INFINITY)),
                other => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got \"{other}\""))),
            },
        }
    }
}

/// `{"kind": "saturating", "s": 1.0}` or
/// `{"kind": "piecewise", "segments": [[lo, hi, slope, intercept], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<[Real; 4]>,
    #[serde(flatten)]
    pub params: BTreeMap<String, f64>,
}

impl FunctionSpec {
    pub fn named(kind: &str) -> Self {
        Self { kind: kind.into(), segments: Vec::new(), params: BTreeMap::new() }
    }

    pub fn build(&self) -> Result<Arc<PiecewiseFunction>> {
        let params = FunctionParams {
            values: self.params.clone(),
            segments: self
                .segments
                .iter()
                .map(|[lo, hi, slope, intercept]| AffineRecord {
                    lo: lo.0,
                    hi: hi.0,
                    slope: slope.0,
                    intercept: intercept.0,
                })
                .collect(),
        };
        let f =
            Catalog::default().build(&self.kind, &params).with_context(|| format!("nonlinearity '{}'", self.kind))?;
        Ok(Arc::new(f))
    }

    /// `abs`, `saturating:s=2`, or `@file.json`.
    pub fn parse_arg(arg: &str) -> Result<Self> {
        if let Some(path) = arg.strip_prefix('@') {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
            return serde_json::from_str(&text).with_context(|| format!("parsing {path}"));
        }
        let (kind, params) = parse_kind_args(arg)?;
        Ok(Self { kind, segments: Vec::new(), params })
    }
}

/// `{"kind": "geometric", "beta": 20}`; `samples` feeds the empirical kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<f64>,
    #[serde(flatten)]
    pub params: BTreeMap<String, f64>,
}

impl SpectrumSpec {
    pub fn geometric(beta: f64) -> Self {
        Self { kind: "geometric".into(), samples: Vec::new(), params: [("beta".to_string(), beta)].into() }
    }

    pub fn two_point(a: f64, p: f64) -> Self {
        Self {
            kind: "two_point".into(),
            samples: Vec::new(),
            params: [("a".to_string(), a), ("p".to_string(), p)].into(),
        }
    }

    pub fn family(&self) -> SpectrumFamily {
        SpectrumFamily::new(&self.kind, SpectrumParams { values: self.params.clone(), samples: self.samples.clone() })
    }

    pub fn at(&self, delta: f64) -> Result<Arc<dyn Spectrum>> {
        self.family().at(delta).with_context(|| format!("spectrum '{}'", self.label()))
    }

    /// `geometric(beta=20)`
    pub fn label(&self) -> String {
        let args: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("{}({})", self.kind, args.join(","))
    }

    pub fn parse_arg(arg: &str) -> Result<Self> {
        if let Some(path) = arg.strip_prefix('@') {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
            return serde_json::from_str(&text).with_context(|| format!("parsing {path}"));
        }
        let (kind, params) = parse_kind_args(arg)?;
        Ok(Self { kind, samples: Vec::new(), params })
    }
}

fn parse_kind_args(arg: &str) -> Result<(String, BTreeMap<String, f64>)> {
    let (kind, rest) = arg.split_once(':').unwrap_or((arg, ""));
    if kind.is_empty() {
        bail!("empty kind in '{arg}'");
    }
    let mut params = BTreeMap::new();
    for kv in rest.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("expected key=value, got '{kv}'"))?;
        let v: f64 = v.trim().parse().with_context(|| format!("value of '{k}'"))?;
        params.insert(k.trim().to_string(), v);
    }
    Ok((kind.to_string(), params))
}

/// Overlays `overrides` on the serialized defaults and deserializes the
/// result; unknown keys fail with the key named.
pub fn resolve<P>(defaults: &P, overrides: &Map<String, Value>) -> Result<P>
where
    P: Serialize + for<'de> Deserialize<'de>,
{
    let mut merged = match serde_json::to_value(defaults)? {
        Value::Object(m) => m,
        _ => bail!("parameters must serialize to an object"),
    };
    for (k, v) in overrides {
        if !merged.contains_key(k) {
            let known: Vec<&str> = merged.keys().map(String::as_str).collect();
            bail!("unknown parameter '{k}' (expected one of: {})", known.join(", "));
        }
        merged.insert(k.clone(), v.clone());
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| anyhow!("invalid parameters: {e}"))
}
