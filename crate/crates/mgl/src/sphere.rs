//! Sampling and geometry on the unit sphere `S^{d-1}`.

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Error, Result};
use crate::stats::mean_std_err;

const NORM_TOL: f64 = 1e-9;

/// A reproducible random stream keyed by `(seed, stream_id)`.
///
/// Backed by ChaCha20, whose 64-bit stream selector gives independent
/// sequences for distinct ids under the same seed.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh stream under the same seed.
    pub fn fork(&self, stream_id: u64) -> Self {
        Self::new(self.seed, stream_id)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn sign(&mut self) -> i8 {
        if self.rng.next_u32() & 1 == 0 {
            1
        } else {
            -1
        }
    }

    /// Index drawn with probability proportional to `weights`.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// A point of `S^{d-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Accepts `coords` only if its norm is 1 within `1e-9`.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        let norm = norm(&coords);
        if coords.is_empty() || (norm - 1.0).abs() > NORM_TOL {
            return domain(format!("vector of norm {norm} is not a unit vector"));
        }
        Ok(Self(coords))
    }

    /// Rescales a nonzero vector onto the sphere.
    pub fn normalize(mut coords: Vec<f64>) -> Result<Self> {
        let n = norm(&coords);
        if coords.is_empty() || !(n > 0.0) || !n.is_finite() {
            return domain("cannot normalize a zero or non-finite vector");
        }
        coords.iter_mut().for_each(|c| *c /= n);
        Ok(Self(coords))
    }

    /// The `i`-th standard basis vector of `R^d`.
    pub fn basis(d: usize, i: usize) -> Result<Self> {
        if i >= d {
            return domain(format!("basis index {i} out of range for d = {d}"));
        }
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        Ok(Self(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }
}

impl TryFrom<Vec<f64>> for UnitVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(v: UnitVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// An orthonormal completion of a unit vector `e` by one Householder
/// reflection `R = I - 2vvᵀ/vᵀv`. `R` swaps the line of `e` with the first
/// axis, so its columns `2..d` span the orthogonal complement of `e`.
#[derive(Debug, Clone)]
pub struct OrthoCompletion {
    v: Vec<f64>,
    scale: f64,
}

impl OrthoCompletion {
    pub fn new(e: &UnitVector) -> Self {
        let mut v = e.as_slice().to_vec();
        let s = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += s;
        let vv = dot(&v, &v);
        Self { v, scale: 2.0 / vv }
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// `R x` for `x ∈ R^d`.
    pub fn reflect(&self, x: &[f64]) -> Vec<f64> {
        let c = self.scale * dot(&self.v, x);
        x.iter().zip(&self.v).map(|(xi, vi)| xi - c * vi).collect()
    }

    /// Maps `z ∈ R^{d-1}` isometrically onto the complement of `e`.
    pub fn lift(&self, z: &[f64]) -> Vec<f64> {
        debug_assert_eq!(z.len() + 1, self.v.len());
        let c = self.scale * dot(&self.v[1..], z);
        let mut out = Vec::with_capacity(self.v.len());
        out.push(-c * self.v[0]);
        out.extend(z.iter().zip(&self.v[1..]).map(|(zi, vi)| zi - c * vi));
        out
    }
}

/// Uniform point of `S^{d-1}` by normalizing a Gaussian vector.
pub fn sample_unit_sphere(d: usize, rng: &mut RngStream) -> Result<UnitVector> {
    if d == 0 {
        return domain("dimension must be at least 1");
    }
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        if norm(&g) > 1e-300 {
            return UnitVector::normalize(g);
        }
    }
}

/// `x = a·e + √(1-a²)·z` with `z` uniform on the unit sphere orthogonal to `e`.
pub fn sample_band(e: &UnitVector, a: f64, rng: &mut RngStream) -> Result<UnitVector> {
    let completion = OrthoCompletion::new(e);
    sample_band_with(&completion, e, a, rng)
}

/// [`sample_band`] with a precomputed completion of `e`.
pub fn sample_band_with(
    completion: &OrthoCompletion,
    e: &UnitVector,
    a: f64,
    rng: &mut RngStream,
) -> Result<UnitVector> {
    if !a.is_finite() || a.abs() > 1.0 + 1e-12 {
        return domain(format!("band height {a} outside [-1, 1]"));
    }
    let a = a.clamp(-1.0, 1.0);
    let d = e.dim();
    if a.abs() == 1.0 {
        return Ok(UnitVector(e.as_slice().iter().map(|c| a * c).collect()));
    }
    if d < 2 {
        return domain("a band with |a| < 1 needs d >= 2");
    }
    let z = sample_unit_sphere(d - 1, rng)?;
    let z = completion.lift(z.as_slice());
    let r = (1.0 - a * a).sqrt();
    let x: Vec<f64> = e.as_slice().iter().zip(&z).map(|(ei, zi)| a * ei + r * zi).collect();
    UnitVector::normalize(x)
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the signs
/// of `R`'s diagonal moved into `Q`.
pub fn haar_orthogonal(d: usize, rng: &mut RngStream) -> Result<DMatrix<f64>> {
    if d == 0 {
        return domain("dimension must be at least 1");
    }
    let g = DMatrix::from_fn(d, d, |_, _| rng.normal());
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

fn binomial_u128(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k as u128 {
        acc = acc.checked_mul(n as u128 - k as u128 + i)? / i;
    }
    Some(acc)
}

/// Dimension `N_{d,n}` of the degree-`n` spherical harmonics on `S^{d-1}`.
pub fn harmonic_dim(d: usize, n: usize) -> Result<u64> {
    if d < 2 {
        return domain(format!("dimension {d} < 2"));
    }
    let overflow = || Error::Overflow(format!("N(d={d}, n={n}) exceeds u64"));
    let (d, n) = (d as u64, n as u64);
    let top = binomial_u128(d + n - 1, d - 1).ok_or_else(overflow)?;
    let low = if d + n < 3 { 0 } else { binomial_u128(d + n - 3, d - 1).ok_or_else(overflow)? };
    u64::try_from(top - low).map_err(|_| overflow())
}

/// `N_{d,n}` as a float, valid far beyond the `u64` range.
pub fn harmonic_dim_f64(d: usize, n: usize) -> f64 {
    if let Ok(v) = harmonic_dim(d, n) {
        return v as f64;
    }
    // N_{d,n} = (2n+d-2)/(n+d-2) · C(n+d-2, n).
    let (df, nf) = (d as f64, n as f64);
    let ln_binom = ln_gamma(nf + df - 1.0) - ln_gamma(nf + 1.0) - ln_gamma(df - 1.0);
    (2.0 * nf + df - 2.0) / (nf + df - 2.0) * ln_binom.exp()
}

/// Surface area `|S^{d-1}| = 2π^{d/2}/Γ(d/2)`.
pub fn sphere_area(d: usize) -> f64 {
    let half = d as f64 / 2.0;
    (std::f64::consts::LN_2 + half * std::f64::consts::PI.ln() - ln_gamma(half)).exp()
}

/// Monte-Carlo estimate of the mean of `f` over the band `{⟨x,e⟩ = a}`,
/// with its standard error.
pub fn band_average<F>(mut f: F, e: &UnitVector, a: f64, n_samples: usize, rng: &mut RngStream) -> Result<(f64, f64)>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if n_samples < 2 {
        return domain("band_average needs at least 2 samples");
    }
    let completion = OrthoCompletion::new(e);
    let mut values = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let x = sample_band_with(&completion, e, a, rng)?;
        values.push(f(x.as_slice())?);
    }
    Ok(mean_std_err(&values))
}
