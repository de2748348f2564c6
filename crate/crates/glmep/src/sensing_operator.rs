//! A = U Σ Vᵀ with U = P₁ D P₂ Dᵀ P₃ (D the orthonormal DCT-II, Pₖ random
//! sign diagonals), and V built the same way on ℝⁿ.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustdct::{DctPlanner, TransformType2And3};

use crate::error::{Error, Result};
use crate::spectrum::{sample_eigenvalues, SamplingMode, Spectrum};

/// Largest n for which a dense copy may be assembled.
pub const DENSE_LIMIT: usize = 64;

/// m = ⌈δ n⌉, tolerant of δ n landing a hair above an integer.
pub fn rows_for(delta: f64, n: usize) -> usize {
    (delta * n as f64 - 1e-9).ceil() as usize
}

/// Orthonormal DCT-II / DCT-III pair of one length.
#[derive(Clone)]
struct OrthoDct {
    plan: Arc<dyn TransformType2And3<f64>>,
    head: f64,
    rest: f64,
}

impl OrthoDct {
    fn new(planner: &mut DctPlanner<f64>, len: usize) -> Self {
        Self { plan: planner.plan_dct2(len), head: (1.0 / len as f64).sqrt(), rest: (2.0 / len as f64).sqrt() }
    }

    fn scratch_len(&self) -> usize {
        self.plan.get_scratch_len()
    }

    /// x <- D x
    fn forward(&self, x: &mut [f64], scratch: &mut [f64]) {
        self.plan.process_dct2_with_scratch(x, scratch);
        x[0] *= self.head;
        for v in &mut x[1..] {
            *v *= self.rest;
        }
    }

    /// x <- Dᵀ x
    fn inverse(&self, x: &mut [f64], scratch: &mut [f64]) {
        x[0] *= 2.0 * self.head;
        for v in &mut x[1..] {
            *v *= self.rest;
        }
        self.plan.process_dct3_with_scratch(x, scratch);
    }
}

/// P₁ D P₂ Dᵀ P₃ on one length.
#[derive(Clone)]
struct Rotation {
    signs: [Vec<f64>; 3],
    dct: OrthoDct,
}

impl Rotation {
    fn flip(x: &mut [f64], s: &[f64]) {
        for (v, s) in x.iter_mut().zip(s) {
            *v *= s;
        }
    }

    fn apply(&self, x: &mut [f64], scratch: &mut [f64]) {
        Self::flip(x, &self.signs[2]);
        self.dct.inverse(x, scratch);
        Self::flip(x, &self.signs[1]);
        self.dct.forward(x, scratch);
        Self::flip(x, &self.signs[0]);
    }

    fn apply_transpose(&self, x: &mut [f64], scratch: &mut [f64]) {
        Self::flip(x, &self.signs[0]);
        self.dct.inverse(x, scratch);
        Self::flip(x, &self.signs[1]);
        self.dct.forward(x, scratch);
        Self::flip(x, &self.signs[2]);
    }
}

#[derive(Clone)]
pub struct StructuredOperator {
    m: usize,
    n: usize,
    sv: Vec<f64>,
    u: Rotation,
    v: Rotation,
    seed: u64,
}

impl fmt::Debug for StructuredOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StructuredOperator")
            .field("m", &self.m)
            .field("n", &self.n)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

/// Reusable buffers for the hot loop.
#[derive(Debug, Clone, Default)]
pub struct OpScratch {
    dct: Vec<f64>,
}

impl StructuredOperator {
    /// Eigenvalues from `model`, six Rademacher sign vectors, all from `seed`.
    pub fn build(m: usize, n: usize, model: &dyn Spectrum, seed: u64, mode: SamplingMode) -> Result<Self> {
        if n < 2 || m < n {
            return Err(Error::InvalidParameter(format!("need m >= n >= 2, got m={m}, n={n}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lambda = sample_eigenvalues(model, n, rng.random(), mode);
        let mut signs =
            |len: usize| -> Vec<f64> { (0..len).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect() };
        let u_signs = [signs(m), signs(m), signs(m)];
        let v_signs = [signs(n), signs(n), signs(n)];
        Self::from_parts(m, lambda, u_signs, v_signs, seed)
    }

    pub fn from_parts(
        m: usize,
        lambda: Vec<f64>,
        u_signs: [Vec<f64>; 3],
        v_signs: [Vec<f64>; 3],
        seed: u64,
    ) -> Result<Self> {
        let n = lambda.len();
        if n < 2 || m < n {
            return Err(Error::InvalidParameter(format!("need m >= n >= 2, got m={m}, n={n}")));
        }
        if lambda.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidParameter("eigenvalues must be finite and nonnegative".into()));
        }
        for s in &u_signs {
            if s.len() != m {
                return Err(Error::DimensionMismatch { expected: m, got: s.len() });
            }
        }
        for s in &v_signs {
            if s.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: s.len() });
            }
        }
        let mut planner = DctPlanner::new();
        let u = Rotation { signs: u_signs, dct: OrthoDct::new(&mut planner, m) };
        let v = Rotation { signs: v_signs, dct: OrthoDct::new(&mut planner, n) };
        Ok(Self { m, n, sv: lambda.iter().map(|l| l.sqrt()).collect(), u, v, seed })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.sv
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.sv.iter().map(|s| s * s).collect()
    }

    pub fn scratch(&self) -> OpScratch {
        OpScratch { dct: vec![0.0; self.u.dct.scratch_len().max(self.v.dct.scratch_len())] }
    }

    fn check(&self, len: usize, expected: usize) -> Result<()> {
        if len == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, got: len })
        }
    }

    /// z <- U z
    pub fn apply_u(&self, z: &mut [f64], s: &mut OpScratch) -> Result<()> {
        self.check(z.len(), self.m)?;
        self.u.apply(z, &mut s.dct);
        Ok(())
    }

    /// z <- Uᵀ z
    pub fn apply_ut(&self, z: &mut [f64], s: &mut OpScratch) -> Result<()> {
        self.check(z.len(), self.m)?;
        self.u.apply_transpose(z, &mut s.dct);
        Ok(())
    }

    /// x <- V x
    pub fn apply_v(&self, x: &mut [f64], s: &mut OpScratch) -> Result<()> {
        self.check(x.len(), self.n)?;
        self.v.apply(x, &mut s.dct);
        Ok(())
    }

    /// x <- Vᵀ x
    pub fn apply_vt(&self, x: &mut [f64], s: &mut OpScratch) -> Result<()> {
        self.check(x.len(), self.n)?;
        self.v.apply_transpose(x, &mut s.dct);
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len(), self.n)?;
        let mut s = self.scratch();
        let mut t = x.to_vec();
        self.v.apply_transpose(&mut t, &mut s.dct);
        let mut z = vec![0.0; self.m];
        for ((zi, ti), sv) in z.iter_mut().zip(&t).zip(&self.sv) {
            *zi = sv * ti;
        }
        self.u.apply(&mut z, &mut s.dct);
        Ok(z)
    }

    pub fn apply_transpose(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z.len(), self.m)?;
        let mut s = self.scratch();
        let mut t = z.to_vec();
        self.u.apply_transpose(&mut t, &mut s.dct);
        let mut x: Vec<f64> = t[..self.n].iter().zip(&self.sv).map(|(a, b)| a * b).collect();
        self.v.apply(&mut x, &mut s.dct);
        Ok(x)
    }

    /// (1/m) Σ λᵢ/(v_l + λᵢ)
    pub fn resolvent_trace(&self, v_l: f64) -> f64 {
        self.sv.iter().map(|s| s * s / (v_l + s * s)).sum::<f64>() / self.m as f64
    }

    /// R z with R = A (v_l I + AᵀA)⁻¹ Aᵀ.
    pub fn apply_resolvent(&self, v_l: f64, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z.len(), self.m)?;
        let mut s = self.scratch();
        let mut t = z.to_vec();
        self.u.apply_transpose(&mut t, &mut s.dct);
        self.resolvent_rotated(v_l, &mut t);
        self.u.apply(&mut t, &mut s.dct);
        Ok(t)
    }

    /// In the U basis: scale by λ/(v_l + λ) on the first n entries, zero the rest.
    pub fn resolvent_rotated(&self, v_l: f64, t: &mut [f64]) {
        for (ti, sv) in t.iter_mut().zip(&self.sv) {
            let l = sv * sv;
            *ti *= l / (v_l + l);
        }
        for ti in &mut t[self.n..] {
            *ti = 0.0;
        }
    }

    /// x̂ = (v_l I + AᵀA)⁻¹ Aᵀ z_l = V diag(σ/(v_l + λ)) (Uᵀ z_l)₁..ₙ
    pub fn lmmse_output(&self, v_l: f64, z_l: &[f64]) -> Result<Vec<f64>> {
        self.check(z_l.len(), self.m)?;
        let mut s = self.scratch();
        let mut t = z_l.to_vec();
        self.u.apply_transpose(&mut t, &mut s.dct);
        let mut x = vec![0.0; self.n];
        self.lmmse_rotated(v_l, &t, &mut x);
        self.v.apply(&mut x, &mut s.dct);
        Ok(x)
    }

    /// Vᵀ x̂ from Uᵀ z_l.
    pub fn lmmse_rotated(&self, v_l: f64, ut_z: &[f64], out: &mut [f64]) {
        for ((o, t), sv) in out.iter_mut().zip(ut_z).zip(&self.sv) {
            *o = sv / (v_l + sv * sv) * t;
        }
    }

    /// Dense m×n copy, row-major; small sizes only.
    pub fn to_dense(&self) -> Result<Vec<Vec<f64>>> {
        if self.n > DENSE_LIMIT {
            return Err(Error::InvalidParameter(format!("dense assembly refused for n = {} > {DENSE_LIMIT}", self.n)));
        }
        let mut a = vec![vec![0.0; self.n]; self.m];
        for j in 0..self.n {
            let mut e = vec![0.0; self.n];
            e[j] = 1.0;
            for (i, v) in self.apply(&e)?.into_iter().enumerate() {
                a[i][j] = v;
            }
        }
        Ok(a)
    }
}
