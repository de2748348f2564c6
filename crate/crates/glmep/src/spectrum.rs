//! Limiting eigenvalue laws of AᵀA, their expectations, samples and Lorenz
//! curves.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quadrature::integrate_adaptive;

pub const LORENZ_EPS: f64 = 1e-9;
pub const LORENZ_GRID: usize = 1000;

pub trait Spectrum: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    fn mean(&self) -> f64;

    /// (lower, upper) edge of the support.
    fn support(&self) -> (f64, f64);

    fn expect(&self, h: &dyn Fn(f64) -> f64) -> f64;

    /// F^{-1}(u) for u in [0, 1].
    fn quantile(&self, u: f64) -> f64;

    /// Integral of the quantile function over [0, u].
    fn integrated_quantile(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        integrate_adaptive(|s| self.quantile(s), 0.0, u.min(1.0), 1e-12, 1e-15)
    }

    fn sample_one(&self, rng: &mut ChaCha8Rng) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flat {
    pub delta: f64,
}

impl Spectrum for Flat {
    fn name(&self) -> String {
        format!("flat(delta={})", self.delta)
    }
    fn mean(&self) -> f64 {
        self.delta
    }
    fn support(&self) -> (f64, f64) {
        (self.delta, self.delta)
    }
    fn expect(&self, h: &dyn Fn(f64) -> f64) -> f64 {
        h(self.delta)
    }
    fn quantile(&self, _u: f64) -> f64 {
        self.delta
    }
    fn integrated_quantile(&self, u: f64) -> f64 {
        self.delta * u.clamp(0.0, 1.0)
    }
}

/// Density 1/(βλ) on (c e^{-β}, c] with c = α β / (1 - e^{-β}); mean α.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometric {
    pub alpha: f64,
    pub beta: f64,
}

impl Geometric {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("geometric alpha must be positive, got {alpha}")));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("geometric beta must be >= 0, got {beta}")));
        }
        Ok(Self { alpha, beta })
    }

    /// Upper edge αA(β).
    pub fn top(&self) -> f64 {
        if self.beta == 0.0 {
            self.alpha
        } else {
            self.alpha * self.beta / -(-self.beta).exp_m1()
        }
    }
}

impl Spectrum for Geometric {
    fn name(&self) -> String {
        format!("geometric(alpha={}, beta={})", self.alpha, self.beta)
    }
    fn mean(&self) -> f64 {
        self.alpha
    }
    fn support(&self) -> (f64, f64) {
        let c = self.top();
        (c * (-self.beta).exp(), c)
    }
    fn expect(&self, h: &dyn Fn(f64) -> f64) -> f64 {
        if self.beta == 0.0 {
            return h(self.alpha);
        }
        // λ = c e^{-β s}, s uniform on [0, 1]
        let (c, b) = (self.top(), self.beta);
        integrate_adaptive(|s| h(c * (-b * s).exp()), 0.0, 1.0, 1e-12, 1e-300)
    }
    fn quantile(&self, u: f64) -> f64 {
        self.top() * (-self.beta * (1.0 - u.clamp(0.0, 1.0))).exp()
    }
    fn integrated_quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        if self.beta == 0.0 {
            return self.alpha * u;
        }
        let b = self.beta;
        self.top() * ((-b * (1.0 - u)).exp() - (-b).exp()) / b
    }
    fn sample_one(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        self.top() * (-self.beta * u).exp()
    }
}

/// λ = a with probability p, otherwise (δ - a p)/(1 - p).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPoint {
    pub a: f64,
    pub p: f64,
    pub delta: f64,
}

impl TwoPoint {
    pub fn new(a: f64, p: f64, delta: f64) -> Result<Self> {
        if !(a > 0.0) || !(p > 0.0 && p < 1.0) || !(delta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "two_point needs a > 0, 0 < p < 1, delta > 0; got ({a}, {p}, {delta})"
            )));
        }
        let s = Self { a, p, delta };
        if !(s.b() > 0.0) {
            return Err(Error::InvalidParameter(format!("two_point upper atom {} is not positive", s.b())));
        }
        Ok(s)
    }

    pub fn b(&self) -> f64 {
        (self.delta - self.a * self.p) / (1.0 - self.p)
    }

    /// (lower atom, its probability, upper atom)
    fn ordered(&self) -> (f64, f64, f64) {
        let b = self.b();
        if self.a <= b {
            (self.a, self.p, b)
        } else {
            (b, 1.0 - self.p, self.a)
        }
    }
}

impl Spectrum for TwoPoint {
    fn name(&self) -> String {
        format!("two_point(a={}, p={}, delta={})", self.a, self.p, self.delta)
    }
    fn mean(&self) -> f64 {
        self.p * self.a + (1.0 - self.p) * self.b()
    }
    fn support(&self) -> (f64, f64) {
        let (lo, _, hi) = self.ordered();
        (lo, hi)
    }
    fn expect(&self, h: &dyn Fn(f64) -> f64) -> f64 {
        self.p * h(self.a) + (1.0 - self.p) * h(self.b())
    }
    fn quantile(&self, u: f64) -> f64 {
        let (lo, plo, hi) = self.ordered();
        if u < plo {
            lo
        } else {
            hi
        }
    }
    fn integrated_quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let (lo, plo, hi) = self.ordered();
        lo * u.min(plo) + hi * (u - plo).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Empirical {
    sorted: Vec<f64>,
    prefix: Vec<f64>,
}

impl Empirical {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("empirical spectrum needs positive finite values".into()));
        }
        let mut sorted = values;
        sorted.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(sorted.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for v in &sorted {
            acc += v;
            prefix.push(acc);
        }
        Ok(Self { sorted, prefix })
    }

    /// Rescaled so the mean is exactly `delta`.
    pub fn normalized(values: Vec<f64>, delta: f64) -> Result<Self> {
        let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
        Self::new(values.into_iter().map(|v| v * delta / mean).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }
}

impl Spectrum for Empirical {
    fn name(&self) -> String {
        format!("empirical(n={})", self.sorted.len())
    }
    fn mean(&self) -> f64 {
        self.prefix[self.sorted.len()] / self.sorted.len() as f64
    }
    fn support(&self) -> (f64, f64) {
        (self.sorted[0], self.sorted[self.sorted.len() - 1])
    }
    fn expect(&self, h: &dyn Fn(f64) -> f64) -> f64 {
        self.sorted.iter().map(|&v| h(v)).sum::<f64>() / self.sorted.len() as f64
    }
    fn quantile(&self, u: f64) -> f64 {
        let n = self.sorted.len();
        let k = ((u.clamp(0.0, 1.0) * n as f64) as usize).min(n - 1);
        self.sorted[k]
    }
    fn integrated_quantile(&self, u: f64) -> f64 {
        let n = self.sorted.len();
        let x = u.clamp(0.0, 1.0) * n as f64;
        let k = (x as usize).min(n);
        let partial = if k < n { (x - k as f64) * self.sorted[k] } else { 0.0 };
        (self.prefix[k] + partial) / n as f64
    }
}

/// E[v_l / (v_l + λ)]; 0 at v_l = 0 and 1 at v_l = ∞.
pub fn mse_functional(model: &dyn Spectrum, v_l: f64) -> f64 {
    if v_l <= 0.0 {
        return 0.0;
    }
    if v_l == f64::INFINITY {
        return 1.0;
    }
    model.expect(&|l| v_l / (v_l + l)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingMode {
    #[default]
    Iid,
    /// λ_i = F^{-1}((i + 1/2)/n)
    Stratified,
}

pub fn sample_eigenvalues(model: &dyn Spectrum, n: usize, seed: u64, mode: SamplingMode) -> Vec<f64> {
    match mode {
        SamplingMode::Iid => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| model.sample_one(&mut rng)).collect()
        }
        SamplingMode::Stratified => (0..n).map(|i| model.quantile((i as f64 + 0.5) / n as f64)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LorenzCurve {
    pub u: Vec<f64>,
    pub l: Vec<f64>,
}

pub fn lorenz_curve(model: &dyn Spectrum, grid_size: usize) -> LorenzCurve {
    let grid_size = grid_size.max(2);
    let total = model.integrated_quantile(1.0);
    let u: Vec<f64> = (0..grid_size).map(|k| k as f64 / (grid_size - 1) as f64).collect();
    let l = u
        .iter()
        .map(|&x| {
            if x == 0.0 {
                0.0
            } else if x == 1.0 {
                1.0
            } else {
                (model.integrated_quantile(x) / total).clamp(0.0, 1.0)
            }
        })
        .collect();
    LorenzCurve { u, l }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LorenzOrder {
    /// First model is less spiky (its curve lies above).
    LessSpiky,
    MoreSpiky,
    Equivalent,
    Incomparable,
}

pub fn lorenz_compare(m1: &dyn Spectrum, m2: &dyn Spectrum, eps: f64) -> Result<LorenzOrder> {
    let (left, right) = (m1.mean(), m2.mean());
    if (left - right).abs() > eps {
        return Err(Error::MeanMismatch { left, right });
    }
    let c1 = lorenz_curve(m1, LORENZ_GRID);
    let c2 = lorenz_curve(m2, LORENZ_GRID);
    let (mut above, mut below) = (false, false);
    for (a, b) in c1.l.iter().zip(&c2.l) {
        let d = a - b;
        above |= d > eps;
        below |= d < -eps;
    }
    Ok(match (above, below) {
        (true, false) => LorenzOrder::LessSpiky,
        (false, true) => LorenzOrder::MoreSpiky,
        (false, false) => LorenzOrder::Equivalent,
        (true, true) => LorenzOrder::Incomparable,
    })
}

pub type SpectrumBuilder = fn(f64, &SpectrumParams) -> Result<Arc<dyn Spectrum>>;

#[derive(Debug, Clone, Default)]
pub struct SpectrumParams {
    pub values: BTreeMap<String, f64>,
    pub samples: Vec<f64>,
}

impl SpectrumParams {
    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.values.insert(key.to_string(), value);
        self
    }

    fn get(&self, key: &str) -> Result<f64> {
        self.values.get(key).copied().ok_or_else(|| Error::InvalidParameter(format!("missing key '{key}'")))
    }

    fn only(&self, allowed: &[&str]) -> Result<()> {
        match self.values.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::InvalidParameter(format!("unexpected key '{k}'"))),
            None => Ok(()),
        }
    }
}

/// Named spectrum constructors, each indexed by the sampling ratio δ.
pub struct SpectrumRegistry {
    builders: BTreeMap<&'static str, SpectrumBuilder>,
}

impl Default for SpectrumRegistry {
    fn default() -> Self {
        let mut r = Self { builders: BTreeMap::new() };
        r.register("flat", |delta, p| {
            p.only(&[])?;
            Ok(Arc::new(Flat { delta }))
        });
        r.register("geometric", |delta, p| {
            p.only(&["beta", "alpha"])?;
            let beta = p.values.get("beta").copied().unwrap_or(0.0);
            let alpha = p.values.get("alpha").copied().unwrap_or(delta);
            if beta == 0.0 {
                return Ok(Arc::new(Flat { delta: alpha }));
            }
            Ok(Arc::new(Geometric::new(alpha, beta)?))
        });
        r.register("two_point", |delta, p| {
            p.only(&["a", "p"])?;
            Ok(Arc::new(TwoPoint::new(p.get("a")?, p.get("p")?, delta)?))
        });
        r.register("empirical", |delta, p| {
            p.only(&[])?;
            Ok(Arc::new(Empirical::normalized(p.samples.clone(), delta)?))
        });
        r
    }
}

impl SpectrumRegistry {
    pub fn register(&mut self, name: &'static str, builder: SpectrumBuilder) {
        self.builders.insert(name, builder);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.builders.keys().copied()
    }

    pub fn build(&self, name: &str, delta: f64, params: &SpectrumParams) -> Result<Arc<dyn Spectrum>> {
        let b =
            self.builders.get(name).ok_or_else(|| Error::UnknownName { kind: "spectrum", name: name.to_string() })?;
        b(delta, params)
    }
}

/// A spectrum kind with fixed shape parameters, evaluated at any δ.
#[derive(Debug, Clone)]
pub struct SpectrumFamily {
    pub kind: String,
    pub params: SpectrumParams,
}

impl SpectrumFamily {
    pub fn new(kind: &str, params: SpectrumParams) -> Self {
        Self { kind: kind.to_string(), params }
    }

    pub fn at(&self, delta: f64) -> Result<Arc<dyn Spectrum>> {
        SpectrumRegistry::default().build(&self.kind, delta, &self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_samples_are_constant() {
        assert_eq!(sample_eigenvalues(&Flat { delta: 2.0 }, 4, 7, SamplingMode::Iid), vec![2.0; 4]);
    }

    #[test]
    fn geometric_tends_to_flat() {
        let g = Geometric::new(1.5, 1e-9).unwrap();
        for v in sample_eigenvalues(&g, 100, 3, SamplingMode::Iid) {
            assert!((v - 1.5).abs() < 1e-8);
        }
        let r = SpectrumRegistry::default();
        let s = r.build("geometric", 2.0, &SpectrumParams::default().with("beta", 0.0)).unwrap();
        assert_eq!(s.expect(&|l| l * l), 4.0);
    }

    #[test]
    fn geometric_mean_and_edges() {
        let g = Geometric::new(1.1, 20.0).unwrap();
        assert!((g.expect(&|l| l) - 1.1).abs() < 1e-12);
        let (lo, hi) = g.support();
        assert!((hi / lo - 20f64.exp()).abs() < 1e-3);
        // E[1/λ] = (e^β - 1)/(β c)
        let c = g.top();
        let inv = (20f64.exp_m1()) / (20.0 * c);
        assert!((g.expect(&|l| 1.0 / l) / inv - 1.0).abs() < 1e-10);
    }

    #[test]
    fn geometric_sample_mean() {
        let g = Geometric::new(1.1, 20.0).unwrap();
        let xs = sample_eigenvalues(&g, 1_000_000, 99, SamplingMode::Iid);
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((m - 1.1).abs() < 3.0 * (var / n).sqrt());
        let strat = sample_eigenvalues(&g, 100_000, 0, SamplingMode::Stratified);
        assert!((strat.iter().sum::<f64>() / 1e5 - 1.1).abs() < 1e-3);
    }

    #[test]
    fn two_point_mean() {
        let t = TwoPoint::new(0.1, 0.5, 2.0).unwrap();
        assert!((t.expect(&|l| l) - 2.0).abs() < 1e-15);
        assert!((t.b() - 3.9).abs() < 1e-15);
    }

    #[test]
    fn mse_functional_limits() {
        let f = Flat { delta: 2.0 };
        assert_eq!(mse_functional(&f, 0.0), 0.0);
        assert_eq!(mse_functional(&f, f64::INFINITY), 1.0);
        assert!((mse_functional(&f, 0.7) - 0.7 / 2.7).abs() < 1e-15);
    }

    #[test]
    fn lorenz_of_flat_is_diagonal() {
        let c = lorenz_curve(&Flat { delta: 3.0 }, 11);
        for (u, l) in c.u.iter().zip(&c.l) {
            assert!((u - l).abs() < 1e-15);
        }
    }

    #[test]
    fn lorenz_of_vanishing_atom() {
        let t = TwoPoint::new(1e-12, 0.3, 2.0).unwrap();
        let c = lorenz_curve(&t, 101);
        for (u, l) in c.u.iter().zip(&c.l) {
            if *u <= 0.3 {
                assert!(*l < 1e-11);
            }
        }
    }

    #[test]
    fn lorenz_geometric_matches_quantile_integration() {
        let g = Geometric::new(2.0, 5.0).unwrap();
        let c = lorenz_curve(&g, 51);
        // trapezoid of the quantile function on a fine grid
        let n = 200_000;
        let h = 1.0 / n as f64;
        let mut acc = vec![0.0; n + 1];
        for k in 1..=n {
            let (a, b) = (g.quantile((k - 1) as f64 * h), g.quantile(k as f64 * h));
            acc[k] = acc[k - 1] + 0.5 * h * (a + b);
        }
        for (u, l) in c.u.iter().zip(&c.l) {
            let k = (u * n as f64).round() as usize;
            assert!((l - acc[k] / acc[n]).abs() < 1e-6);
        }
    }

    #[test]
    fn lorenz_ordering() {
        let flat = Flat { delta: 2.0 };
        let g5 = Geometric::new(2.0, 5.0).unwrap();
        let g2 = Geometric::new(2.0, 2.0).unwrap();
        let g10 = Geometric::new(2.0, 10.0).unwrap();
        assert_eq!(lorenz_compare(&flat, &g5, LORENZ_EPS).unwrap(), LorenzOrder::LessSpiky);
        assert_eq!(lorenz_compare(&g2, &g10, LORENZ_EPS).unwrap(), LorenzOrder::LessSpiky);
        assert_eq!(lorenz_compare(&g10, &g2, LORENZ_EPS).unwrap(), LorenzOrder::MoreSpiky);
        assert_eq!(lorenz_compare(&g5, &g5, LORENZ_EPS).unwrap(), LorenzOrder::Equivalent);
        let other = Flat { delta: 2.5 };
        assert!(matches!(lorenz_compare(&flat, &other, LORENZ_EPS), Err(Error::MeanMismatch { .. })));
    }

    #[test]
    fn empirical_normalization() {
        let e = Empirical::normalized(vec![1.0, 2.0, 3.0, 6.0], 1.5).unwrap();
        assert!((e.mean() - 1.5).abs() < 1e-12);
        assert!((e.integrated_quantile(1.0) - 1.5).abs() < 1e-12);
        assert!((e.integrated_quantile(0.5) - (0.25 + 0.5) * 0.5 / 1.0).abs() < 1e-12);
    }

    #[test]
    fn registry_rejects_unknown() {
        let r = SpectrumRegistry::default();
        assert!(matches!(r.build("wigner", 2.0, &SpectrumParams::default()), Err(Error::UnknownName { .. })));
        let err = r.build("flat", 2.0, &SpectrumParams::default().with("beta", 1.0)).unwrap_err();
        assert!(err.to_string().contains("beta"));
    }
}
