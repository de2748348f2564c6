//! Piecewise measurement functions `f` with constant or strictly monotone
//! pieces, their preimages, flat levels and information dimension.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::special::norm_cdf;

pub const ROOT_TOL: f64 = 1e-12;
pub const BISECTION_CAP: usize = 200;
pub const FLAT_LEVEL_TOL: f64 = 1e-9;

pub type ScalarMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum SegmentKind {
    Constant {
        level: f64,
    },
    Affine {
        slope: f64,
        intercept: f64,
    },
    /// Strictly monotone; `direction` is +1 for increasing and -1 for decreasing.
    Smooth {
        forward: ScalarMap,
        derivative: ScalarMap,
        direction: i8,
    },
}

impl fmt::Debug for SegmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmentKind::Constant { level } => write!(f, "Constant({level})"),
            SegmentKind::Affine { slope, intercept } => write!(f, "Affine({slope}, {intercept})"),
            SegmentKind::Smooth { direction, .. } => write!(f, "Smooth(direction {direction})"),
        }
    }
}

/// A piece on the half-open interval `[lo, hi)`.
#[derive(Debug, Clone)]
pub struct Segment {
    pub lo: f64,
    pub hi: f64,
    pub kind: SegmentKind,
}

impl Segment {
    pub fn constant(lo: f64, hi: f64, level: f64) -> Self {
        Self { lo, hi, kind: SegmentKind::Constant { level } }
    }

    pub fn affine(lo: f64, hi: f64, slope: f64, intercept: f64) -> Self {
        Self { lo, hi, kind: SegmentKind::Affine { slope, intercept } }
    }

    pub fn smooth(lo: f64, hi: f64, forward: ScalarMap, derivative: ScalarMap, direction: i8) -> Self {
        Self { lo, hi, kind: SegmentKind::Smooth { forward, derivative, direction } }
    }

    pub fn value(&self, z: f64) -> f64 {
        match &self.kind {
            SegmentKind::Constant { level } => *level,
            SegmentKind::Affine { slope, intercept } => slope * z + intercept,
            SegmentKind::Smooth { forward, .. } => forward(z),
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.kind, SegmentKind::Constant { .. })
    }

    pub fn contains(&self, z: f64) -> bool {
        self.lo <= z && z < self.hi
    }
}

/// Roots `(u, |f'(u)|)` on monotone pieces and whole constant pieces at level y.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PreimageSet {
    pub points: Vec<(f64, f64)>,
    pub intervals: Vec<(f64, f64)>,
}

impl PreimageSet {
    pub fn clear(&mut self) {
        self.points.clear();
        self.intervals.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty() && self.intervals.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct PiecewiseFunction {
    name: String,
    segments: Vec<Segment>,
    is_even: bool,
}

impl PiecewiseFunction {
    pub fn new(name: impl Into<String>, segments: Vec<Segment>) -> Result<Self> {
        let name = name.into();
        let invalid = |msg: String| Err(Error::InvalidParameter(format!("{name}: {msg}")));
        if segments.is_empty() {
            return invalid("no segments".into());
        }
        if segments[0].lo != f64::NEG_INFINITY || segments[segments.len() - 1].hi != f64::INFINITY {
            return invalid("segments must cover the real line".into());
        }
        for (k, s) in segments.iter().enumerate() {
            if !(s.lo < s.hi) {
                return invalid(format!("segment {k} has lo >= hi"));
            }
            if k > 0 && segments[k - 1].hi != s.lo {
                return invalid(format!("segment {k} does not start where segment {} ends", k - 1));
            }
            match &s.kind {
                SegmentKind::Affine { slope, intercept } => {
                    if *slope == 0.0 || !slope.is_finite() || !intercept.is_finite() {
                        return invalid(format!("segment {k} needs a finite nonzero slope"));
                    }
                }
                SegmentKind::Smooth { direction, .. } => {
                    if direction.abs() != 1 {
                        return invalid(format!("segment {k} direction must be +1 or -1"));
                    }
                }
                SegmentKind::Constant { level } => {
                    if !level.is_finite() {
                        return invalid(format!("segment {k} level is not finite"));
                    }
                }
            }
        }
        let mut f = Self { name, segments, is_even: false };
        f.is_even = f.symmetric_on_grid();
        Ok(f)
    }

    fn symmetric_on_grid(&self) -> bool {
        // offset grid keeps clear of round breakpoints, where half-open
        // conventions differ on a null set
        const N: usize = 4000;
        (0..N).all(|k| {
            let z = 12.0 * (k as f64 + std::f64::consts::FRAC_1_PI) / N as f64;
            let (a, b) = (self.evaluate(z), self.evaluate(-z));
            (a - b).abs() <= 1e-12 * (1.0 + a.abs())
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_even(&self) -> bool {
        self.is_even
    }

    /// Finite segment endpoints in increasing order.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.segments[1..].iter().map(|s| s.lo).collect()
    }

    pub fn segment_index(&self, z: f64) -> usize {
        self.segments.partition_point(|s| s.lo <= z).saturating_sub(1)
    }

    pub fn evaluate(&self, z: f64) -> f64 {
        if z.is_nan() {
            return f64::NAN;
        }
        self.segments[self.segment_index(z)].value(z)
    }

    pub fn evaluate_into(&self, z: &[f64], out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(z) {
            *o = self.evaluate(v);
        }
    }

    pub fn preimage(&self, y: f64, tol: f64) -> Result<PreimageSet> {
        let mut out = PreimageSet::default();
        self.preimage_into(y, tol, &mut out)?;
        Ok(out)
    }

    /// Fills `out` with f^{-1}(y); `out` is cleared first.
    pub fn preimage_into(&self, y: f64, tol: f64, out: &mut PreimageSet) -> Result<()> {
        out.clear();
        for (k, seg) in self.segments.iter().enumerate() {
            match &seg.kind {
                SegmentKind::Constant { level } => {
                    if (level - y).abs() <= tol {
                        out.intervals.push((seg.lo, seg.hi));
                    }
                }
                SegmentKind::Affine { slope, intercept } => {
                    let u = (y - intercept) / slope;
                    if seg.contains(u) {
                        out.points.push((u, slope.abs()));
                    }
                }
                SegmentKind::Smooth { forward, derivative, direction } => {
                    if let Some(u) = smooth_root(seg, forward, *direction, y, tol)
                        .map_err(|_| Error::BisectionFailed { segment: k, y })?
                    {
                        out.points.push((u, derivative(u).abs()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Distinct levels of the constant pieces.
    pub fn flat_levels(&self) -> Vec<f64> {
        let mut levels: Vec<f64> = self
            .segments
            .iter()
            .filter_map(|s| match s.kind {
                SegmentKind::Constant { level } => Some(level),
                _ => None,
            })
            .collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup_by(|a, b| (*a - *b).abs() <= FLAT_LEVEL_TOL);
        levels
    }

    pub fn is_flat_level(&self, y: f64) -> bool {
        self.segments.iter().any(|s| match s.kind {
            SegmentKind::Constant { level } => (level - y).abs() <= FLAT_LEVEL_TOL,
            _ => false,
        })
    }

    /// d(f(Z)): Gaussian mass of the monotone pieces.
    pub fn info_dimension(&self) -> f64 {
        let d: f64 = self.segments.iter().filter(|s| !s.is_flat()).map(|s| gaussian_mass(s.lo, s.hi)).sum();
        d.clamp(0.0, 1.0)
    }

    pub fn mmse_dimension(&self) -> f64 {
        1.0 - self.info_dimension()
    }

    /// 1/d(f(Z)), infinite when every piece is flat.
    pub fn delta_opt(&self) -> f64 {
        let d = self.info_dimension();
        if d == 0.0 {
            f64::INFINITY
        } else {
            1.0 / d
        }
    }
}

fn gaussian_mass(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        norm_cdf(-lo) - norm_cdf(-hi)
    } else {
        norm_cdf(hi) - norm_cdf(lo)
    }
}

struct NoConvergence;

fn smooth_root(
    seg: &Segment,
    forward: &ScalarMap,
    direction: i8,
    y: f64,
    tol: f64,
) -> std::result::Result<Option<f64>, NoConvergence> {
    let g = |u: f64| direction as f64 * (forward(u) - y);
    let (mut lo, mut hi) = (seg.lo, seg.hi);
    // bracket unbounded ends by geometric expansion away from a finite anchor
    if !lo.is_finite() || !hi.is_finite() {
        let anchor = if hi.is_finite() {
            hi
        } else if lo.is_finite() {
            lo
        } else {
            0.0
        };
        if !lo.is_finite() {
            let mut step = 1.0;
            lo = anchor - step;
            while g(lo) > 0.0 {
                step *= 2.0;
                if step > 1e300 {
                    return Ok(None);
                }
                lo = anchor - step;
            }
        }
        if !hi.is_finite() {
            let mut step = 1.0;
            hi = anchor + step;
            while g(hi) < 0.0 {
                step *= 2.0;
                if step > 1e300 {
                    return Ok(None);
                }
                hi = anchor + step;
            }
        }
    }
    let (glo, ghi) = (g(lo), g(hi));
    if glo > 0.0 || ghi < 0.0 {
        return Ok(None);
    }
    if ghi == 0.0 && hi == seg.hi {
        // the right endpoint belongs to the next piece
        return Ok(None);
    }
    for _ in 0..BISECTION_CAP {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol * (1.0 + lo.abs().max(hi.abs())) || mid == lo || mid == hi {
            return Ok(Some(mid));
        }
        let gm = g(mid);
        if gm == 0.0 {
            return Ok(Some(mid));
        }
        if gm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(NoConvergence)
}

/// A piecewise-affine record `(lo, hi, slope, intercept)`; slope 0 is flat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineRecord {
    pub lo: f64,
    pub hi: f64,
    pub slope: f64,
    pub intercept: f64,
}

/// Parameters handed to a catalog builder.
#[derive(Debug, Clone, Default)]
pub struct FunctionParams {
    pub values: BTreeMap<String, f64>,
    pub segments: Vec<AffineRecord>,
}

impl FunctionParams {
    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.values.insert(key.to_string(), value);
        self
    }

    fn only(&self, allowed: &[&str], segments: bool) -> Result<()> {
        if let Some(k) = self.values.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::InvalidParameter(format!("unexpected key '{k}'")));
        }
        if !segments && !self.segments.is_empty() {
            return Err(Error::InvalidParameter("unexpected key 'segments'".into()));
        }
        Ok(())
    }
}

pub type Builder = fn(&FunctionParams) -> Result<PiecewiseFunction>;

/// Named constructors for the shipped nonlinearities.
pub struct Catalog {
    builders: BTreeMap<&'static str, Builder>,
}

impl Default for Catalog {
    fn default() -> Self {
        let mut c = Self { builders: BTreeMap::new() };
        c.register("abs", |p| {
            p.only(&[], false)?;
            Ok(abs())
        });
        c.register("sign", |p| {
            p.only(&[], false)?;
            Ok(sign())
        });
        c.register("identity", |p| {
            p.only(&[], false)?;
            Ok(identity())
        });
        c.register("example3", |p| {
            p.only(&[], false)?;
            Ok(example3())
        });
        c.register("saturating", |p| {
            p.only(&["s"], false)?;
            saturating(p.values.get("s").copied().unwrap_or(1.0))
        });
        c.register("piecewise", |p| {
            p.only(&[], true)?;
            piecewise_affine("piecewise", &p.segments)
        });
        c
    }
}

impl Catalog {
    pub fn register(&mut self, name: &'static str, builder: Builder) {
        self.builders.insert(name, builder);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.builders.keys().copied()
    }

    pub fn build(&self, name: &str, params: &FunctionParams) -> Result<PiecewiseFunction> {
        let builder = self
            .builders
            .get(name)
            .ok_or_else(|| Error::UnknownName { kind: "nonlinearity", name: name.to_string() })?;
        builder(params)
    }
}

/// Builds a catalog function with default parameters.
pub fn by_name(name: &str) -> Result<PiecewiseFunction> {
    Catalog::default().build(name, &FunctionParams::default())
}

const NEG: f64 = f64::NEG_INFINITY;
const POS: f64 = f64::INFINITY;

pub fn abs() -> PiecewiseFunction {
    PiecewiseFunction::new("abs", vec![Segment::affine(NEG, 0.0, -1.0, 0.0), Segment::affine(0.0, POS, 1.0, 0.0)])
        .expect("abs is well formed")
}

pub fn sign() -> PiecewiseFunction {
    PiecewiseFunction::new("sign", vec![Segment::constant(NEG, 0.0, -1.0), Segment::constant(0.0, POS, 1.0)])
        .expect("sign is well formed")
}

pub fn identity() -> PiecewiseFunction {
    PiecewiseFunction::new("identity", vec![Segment::affine(NEG, POS, 1.0, 0.0)]).expect("identity is well formed")
}

/// |z| inside (-1, 1), |z| - 1 outside.
pub fn example3() -> PiecewiseFunction {
    PiecewiseFunction::new(
        "example3",
        vec![
            Segment::affine(NEG, -1.0, -1.0, -1.0),
            Segment::affine(-1.0, 0.0, -1.0, 0.0),
            Segment::affine(0.0, 1.0, 1.0, 0.0),
            Segment::affine(1.0, POS, 1.0, -1.0),
        ],
    )
    .expect("example3 is well formed")
}

/// |z| clipped at s.
pub fn saturating(s: f64) -> Result<PiecewiseFunction> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidParameter(format!("saturating needs s > 0, got {s}")));
    }
    PiecewiseFunction::new(
        format!("saturating(s={s})"),
        vec![
            Segment::constant(NEG, -s, s),
            Segment::affine(-s, 0.0, -1.0, 0.0),
            Segment::affine(0.0, s, 1.0, 0.0),
            Segment::constant(s, POS, s),
        ],
    )
}

pub fn piecewise_affine(name: &str, records: &[AffineRecord]) -> Result<PiecewiseFunction> {
    let segments = records
        .iter()
        .map(|r| {
            if r.slope == 0.0 {
                Segment::constant(r.lo, r.hi, r.intercept)
            } else {
                Segment::affine(r.lo, r.hi, r.slope, r.intercept)
            }
        })
        .collect();
    PiecewiseFunction::new(name, segments)
}
