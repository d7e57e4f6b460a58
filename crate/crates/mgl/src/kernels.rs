//! Kernels on the sphere: zonal profiles, finite feature maps and Legendre
//! series; Gram matrices; Legendre coefficients of zonal profiles; RKHS norms
//! of zonal functions; Monte-Carlo symmetrization over the orthogonal group.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::orthopoly::{legendre_table, PolyCoeffs};
use crate::sphere::{dot, haar_orthogonal, harmonic_dim_f64, sphere_area, RngStream, UnitVector};

/// Default Legendre truncation degree.
pub const DEFAULT_NMAX: usize = 64;
/// Coefficients below this fraction of `Σ|b_n|` (or `Σ|α_n|`) are zero.
pub const INDEX_SET_REL_TOL: f64 = 1e-12;
/// Largest acceptable estimated mass beyond the truncation degree.
pub const TAIL_TOL: f64 = 1e-8;
/// Size of the inner-product grid of a symmetrized kernel.
pub const SYMMETRIZATION_GRID: usize = 257;
/// Exact eigen-decomposition is used for Gram matrices up to this size.
pub const EXACT_PSD_CHECK_MAX: usize = 1000;

const GEGENBAUER_NODES: usize = 256;

/// A raw inner-product profile `κ(s)`, `s = ⟨x,y⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Profile {
    /// `κ(s) = s`.
    Linear,
    /// `κ(s) = (1+s)^degree`.
    Polynomial { degree: u32 },
    /// `κ(s) = 1/(1 - s/2)`.
    Sss,
    /// `κ(s) = exp((s-1)/σ²)`, the Gaussian kernel restricted to the sphere.
    Rbf { sigma: f64 },
    /// Piecewise-linear table, e.g. the output of [`symmetrize_mc`].
    Tabulated(TabulatedProfile),
}

impl Profile {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Profile::Linear => s,
            Profile::Polynomial { degree } => (1.0 + s).powi(*degree as i32),
            Profile::Sss => 1.0 / (1.0 - 0.5 * s),
            Profile::Rbf { sigma } => ((s - 1.0) / (sigma * sigma)).exp(),
            Profile::Tabulated(t) => t.eval(s),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Profile::Rbf { sigma } if !(*sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::InvalidSpec(format!("rbf sigma {sigma} must be positive")))
            }
            Profile::Tabulated(t) => t.validate(),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Profile::Linear => "linear".into(),
            Profile::Polynomial { degree } => format!("poly{degree}"),
            Profile::Sss => "sss".into(),
            Profile::Rbf { sigma } => format!("rbf{sigma}"),
            Profile::Tabulated(_) => "tabulated".into(),
        }
    }
}

/// A zonal profile sampled on an increasing grid in `[-1, 1]`, evaluated by
/// linear interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedProfile {
    pub s: Vec<f64>,
    pub value: Vec<f64>,
    pub std_err: Vec<f64>,
}

impl TabulatedProfile {
    pub fn new(s: Vec<f64>, value: Vec<f64>, std_err: Vec<f64>) -> Result<Self> {
        let t = Self { s, value, std_err };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let n = self.s.len();
        if n < 2 || self.value.len() != n || self.std_err.len() != n {
            return Err(Error::InvalidSpec("tabulated profile needs matching grids of length >= 2".into()));
        }
        if self.s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSpec("tabulated grid must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn eval(&self, s: f64) -> f64 {
        let n = self.s.len();
        let s = s.clamp(self.s[0], self.s[n - 1]);
        let hi = self.s.partition_point(|&g| g < s).clamp(1, n - 1);
        let lo = hi - 1;
        let w = (s - self.s[lo]) / (self.s[hi] - self.s[lo]);
        (1.0 - w) * self.value[lo] + w * self.value[hi]
    }

    /// Two-column CSV `(s, kappa)`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["s", "kappa"])?;
        for (s, v) in self.s.iter().zip(&self.value) {
            w.write_record([s.to_string(), v.to_string()])?;
        }
        csv_string(w)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let (mut s, mut value) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            s.push(parse_field(&rec, 0)?);
            value.push(parse_field(&rec, 1)?);
        }
        let t = Self { std_err: vec![0.0; s.len()], s, value };
        t.validate()?;
        Ok(t)
    }
}

pub(crate) fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Usage(e.to_string()))
}

pub(crate) fn parse_field(rec: &csv::StringRecord, i: usize) -> Result<f64> {
    rec.get(i)
        .ok_or_else(|| Error::Usage(format!("missing CSV column {i}")))?
        .trim()
        .parse()
        .map_err(|e| Error::Usage(format!("bad CSV number in column {i}: {e}")))
}

/// `ψ(x) = A x`, a linear feature map `R^d → R^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMap {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidSpec("feature map rows must be nonempty and equally long".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("feature map has non-finite entries".into()));
        }
        Ok(Self { rows })
    }

    pub fn identity(d: usize) -> Self {
        Self { rows: (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect() }
    }

    /// `x ↦ ⟨x, e⟩`.
    pub fn projection(e: &UnitVector) -> Self {
        Self { rows: vec![e.as_slice().to_vec()] }
    }

    /// Gaussian `m × d` matrix.
    pub fn random_linear(m: usize, d: usize, rng: &mut RngStream) -> Self {
        Self { rows: (0..m).map(|_| (0..d).map(|_| rng.normal()).collect()).collect() }
    }

    pub fn dim_in(&self) -> usize {
        self.rows[0].len()
    }

    pub fn dim_out(&self) -> usize {
        self.rows.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| dot(r, x)).collect()
    }

    /// `sup_{‖x‖=1} ‖ψ(x)‖²`, the largest eigenvalue of `AᵀA`.
    pub fn sup_norm_sq(&self) -> f64 {
        let a = DMatrix::from_fn(self.dim_out(), self.dim_in(), |i, j| self.rows[i][j]);
        SymmetricEigen::new(a.transpose() * a).eigenvalues.max().max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelForm {
    Zonal(Profile),
    FeatureMap(FeatureMap),
    LegendreSeries { d: usize, b: Vec<f64> },
}

/// A kernel together with its normalization convention. When `normalize`
/// is set, values are divided by `sup_x k(x,x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpecData", into = "KernelSpecData")]
pub struct KernelSpec {
    form: KernelForm,
    normalize: bool,
    scale: f64,
}

#[derive(Serialize, Deserialize)]
struct KernelSpecData {
    form: KernelForm,
    normalize: bool,
}

impl TryFrom<KernelSpecData> for KernelSpec {
    type Error = Error;

    fn try_from(d: KernelSpecData) -> Result<Self> {
        KernelSpec::new(d.form, d.normalize)
    }
}

impl From<KernelSpec> for KernelSpecData {
    fn from(k: KernelSpec) -> Self {
        Self { form: k.form, normalize: k.normalize }
    }
}

impl KernelSpec {
    pub fn new(form: KernelForm, normalize: bool) -> Result<Self> {
        let diag = match &form {
            KernelForm::Zonal(p) => {
                p.validate()?;
                p.eval(1.0)
            }
            KernelForm::FeatureMap(f) => f.sup_norm_sq(),
            KernelForm::LegendreSeries { d, b } => {
                if *d < 2 || b.is_empty() || b.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidSpec("Legendre series needs d >= 2 and finite coefficients".into()));
                }
                b.iter().sum()
            }
        };
        let scale = if normalize {
            if !(diag > 0.0 && diag.is_finite()) {
                return Err(Error::InvalidSpec(format!("cannot normalize a kernel with sup k(x,x) = {diag}")));
            }
            1.0 / diag
        } else {
            1.0
        };
        Ok(Self { form, normalize, scale })
    }

    pub fn zonal(profile: Profile) -> Result<Self> {
        Self::new(KernelForm::Zonal(profile), true)
    }

    pub fn linear() -> Self {
        Self::new(KernelForm::Zonal(Profile::Linear), true).expect("linear kernel is valid")
    }

    pub fn sss() -> Self {
        Self::new(KernelForm::Zonal(Profile::Sss), true).expect("SSS kernel is valid")
    }

    pub fn rbf(sigma: f64) -> Result<Self> {
        Self::zonal(Profile::Rbf { sigma })
    }

    pub fn polynomial(degree: u32) -> Self {
        Self::new(KernelForm::Zonal(Profile::Polynomial { degree }), true).expect("polynomial kernel is valid")
    }

    pub fn feature_map(map: FeatureMap, normalize: bool) -> Result<Self> {
        Self::new(KernelForm::FeatureMap(map), normalize)
    }

    pub fn form(&self) -> &KernelForm {
        &self.form
    }

    pub fn normalized(&self) -> bool {
        self.normalize
    }

    pub fn label(&self) -> String {
        match &self.form {
            KernelForm::Zonal(p) => p.label(),
            KernelForm::FeatureMap(f) => format!("features{}", f.dim_out()),
            KernelForm::LegendreSeries { b, .. } => format!("legendre{}", b.len()),
        }
    }

    /// Whether the kernel depends on `⟨x,y⟩` only.
    pub fn is_zonal(&self) -> bool {
        !matches!(self.form, KernelForm::FeatureMap(_))
    }

    /// The scaled profile `s ↦ k(x,y)` at `⟨x,y⟩ = s` for zonal kernels.
    pub fn profile_value(&self, s: f64) -> Option<f64> {
        match &self.form {
            KernelForm::Zonal(p) => Some(self.scale * p.eval(s)),
            KernelForm::LegendreSeries { d, b } => Some(self.scale * legendre_series(*d, b, s)),
            KernelForm::FeatureMap(_) => None,
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return domain(format!("dimension mismatch {} vs {}", x.len(), y.len()));
        }
        match &self.form {
            KernelForm::FeatureMap(f) if f.dim_in() != x.len() => {
                domain(format!("feature map expects dimension {}, got {}", f.dim_in(), x.len()))
            }
            KernelForm::LegendreSeries { d, .. } if *d != x.len() => {
                domain(format!("Legendre series is for dimension {d}, got {}", x.len()))
            }
            _ => Ok(self.eval_unchecked(x, y)),
        }
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match &self.form {
            KernelForm::FeatureMap(f) => self.scale * dot(&f.apply(x), &f.apply(y)),
            _ => self.profile_value(dot(x, y).clamp(-1.0, 1.0)).unwrap_or(f64::NAN),
        }
    }
}

fn legendre_series(d: usize, b: &[f64], s: f64) -> f64 {
    legendre_table(d, b.len() - 1, s.clamp(-1.0, 1.0)).iter().zip(b).map(|(p, c)| p * c).sum()
}

pub fn kernel_eval(k: &KernelSpec, x: &UnitVector, y: &UnitVector) -> Result<f64> {
    k.eval(x.as_slice(), y.as_slice())
}

/// A dense symmetric Gram matrix stored row-major.
#[derive(Debug, Clone)]
pub struct Gram {
    n: usize,
    data: Vec<f64>,
    jitter: f64,
}

impl Gram {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Diagonal shift applied for numerical PSD repair.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = fast_dot(self.row(i), x);
        }
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut gx = vec![0.0; self.n];
        self.matvec(x, &mut gx);
        dot(x, &gx)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.to_dmatrix()).eigenvalues.min()
    }
}

pub(crate) fn fast_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Gram matrix without any positivity check.
pub fn gram_unchecked<P: AsRef<[f64]>>(k: &KernelSpec, points: &[P]) -> Result<Gram> {
    let n = points.len();
    if n == 0 {
        return domain("Gram matrix of an empty point set");
    }
    let d = points[0].as_ref().len();
    if points.iter().any(|p| p.as_ref().len() != d) {
        return domain("points have mixed dimensions");
    }
    k.eval(points[0].as_ref(), points[0].as_ref())?;
    let feats: Option<Vec<Vec<f64>>> = match &k.form {
        KernelForm::FeatureMap(f) => Some(points.iter().map(|p| f.apply(p.as_ref())).collect()),
        _ => None,
    };
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = match &feats {
                Some(fs) => k.scale * dot(&fs[i], &fs[j]),
                None => k.eval_unchecked(points[i].as_ref(), points[j].as_ref()),
            };
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Ok(Gram { n, data, jitter: 0.0 })
}

/// Gram matrix with a positivity check: minimum eigenvalue `≥ -1e-8·n`.
///
/// Up to [`EXACT_PSD_CHECK_MAX`] points the spectrum is computed exactly and
/// a `1e-10` diagonal jitter repairs tiny negative eigenvalues. Larger zonal
/// Gram matrices are certified through nonnegative Legendre coefficients,
/// feature-map Gram matrices are PSD by construction.
pub fn gram<P: AsRef<[f64]>>(k: &KernelSpec, points: &[P]) -> Result<Gram> {
    let mut g = gram_unchecked(k, points)?;
    let n = g.n;
    let tol = 1e-8 * n as f64;
    let d = points[0].as_ref().len();
    if n <= EXACT_PSD_CHECK_MAX || (k.is_zonal() && d < 3) {
        let min_eig = g.min_eigenvalue();
        if min_eig < -tol {
            return Err(Error::NotPsd { min_eig, tol: -tol });
        }
        if min_eig < 0.0 && min_eig > -1e-8 {
            for i in 0..n {
                g.data[i * n + i] += 1e-10;
            }
            g.jitter = 1e-10;
        }
    } else if k.is_zonal() {
        let profile = RkhsProfile::for_kernel(k, d, DEFAULT_NMAX)?;
        let min_b = profile.b.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_b < -1e-8 {
            return Err(Error::NotPsd { min_eig: min_b, tol: -1e-8 });
        }
    }
    Ok(g)
}

struct GegenbauerRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

type RuleCache = Mutex<HashMap<(usize, usize), Arc<GegenbauerRule>>>;

/// Gauss rule for the weight `(1-s²)^{(d-3)/2}` on `[-1, 1]` by Golub–Welsch.
fn gegenbauer_rule(d: usize, n: usize) -> Arc<GegenbauerRule> {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = cache.lock().expect("rule cache poisoned").get(&(d, n)) {
        return r.clone();
    }
    let a = (d as f64 - 3.0) / 2.0;
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let denom = (2.0 * kf + 2.0 * a).powi(2) - 1.0;
        let off = (kf * (kf + 2.0 * a) / denom).sqrt();
        jac[(k, k - 1)] = off;
        jac[(k - 1, k)] = off;
    }
    let mass = std::f64::consts::PI.sqrt()
        * (statrs::function::gamma::ln_gamma(a + 1.0) - statrs::function::gamma::ln_gamma(a + 1.5)).exp();
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> =
        (0..n).map(|i| (eig.eigenvalues[i], mass * eig.eigenvectors[(0, i)].powi(2))).collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let rule = Arc::new(GegenbauerRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    });
    cache.lock().expect("rule cache poisoned").insert((d, n), rule.clone());
    rule
}

/// Nodes and weights of the `n`-point Gauss rule for `(1-s²)^{(d-3)/2}`.
pub(crate) fn gegenbauer_quadrature(d: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let r = gegenbauer_rule(d, n);
    (r.nodes.clone(), r.weights.clone())
}

/// Legendre coefficients `b_0..b_nmax` with `κ(s) = Σ b_n P_{d,n}(s)`, by
/// Gauss–Gegenbauer quadrature.
///
/// Quadrature loses relative accuracy like `N_{d,n}`; coefficients below that
/// noise floor are reported as zero. Known analytic profiles should go
/// through [`RkhsProfile::for_kernel`], which is cancellation-free.
pub fn profile_to_legendre(kappa: impl Fn(f64) -> f64, d: usize, nmax: usize) -> Result<Vec<f64>> {
    if d < 3 {
        return domain(format!("dimension {d} < 3"));
    }
    if nmax > crate::orthopoly::MAX_DEGREE {
        return domain(format!("nmax {nmax} exceeds the degree cap"));
    }
    let rule = gegenbauer_rule(d, GEGENBAUER_NODES.max(2 * nmax + 2));
    let mut num = vec![0.0; nmax + 1];
    let mut den = vec![0.0; nmax + 1];
    let mut kmax = 0.0f64;
    for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
        let ks = kappa(s);
        if !ks.is_finite() {
            return domain(format!("profile is not finite at s = {s}"));
        }
        kmax = kmax.max(ks.abs());
        for (n, p) in legendre_table(d, nmax, s).into_iter().enumerate() {
            num[n] += w * ks * p;
            den[n] += w * p * p;
        }
    }
    let b: Vec<f64> = num
        .iter()
        .zip(&den)
        .enumerate()
        .map(|(n, (a, c))| {
            let v = a / c;
            let noise = 64.0 * f64::EPSILON * kmax * harmonic_dim_f64(d, n);
            if v.abs() <= noise {
                0.0
            } else {
                v
            }
        })
        .collect();
    let tail = estimate_tail(&b);
    if !(tail < TAIL_TOL) {
        return Err(Error::NonConvergence { gap: tail, eps: TAIL_TOL, iters: nmax });
    }
    Ok(b)
}

/// Expansion of an analytic profile with nonnegative Taylor coefficients
/// through `t·P_n = [(n+d-2) P_{n+1} + n P_{n-1}]/(2n+d-2)`; every term is
/// nonnegative, so there is no cancellation. Returns `(b, mass beyond nmax)`.
fn taylor_to_legendre(taylor: &[f64], d: usize, nmax: usize) -> (Vec<f64>, f64) {
    let df = d as f64;
    let mut b = vec![0.0; nmax + 1];
    let mut h = vec![1.0];
    let mut beyond = 0.0;
    for (k, &c) in taylor.iter().enumerate() {
        if k > 0 {
            let mut next = vec![0.0; h.len() + 1];
            for (n, &a) in h.iter().enumerate() {
                let nf = n as f64;
                let den = 2.0 * nf + df - 2.0;
                next[n + 1] += a * (nf + df - 2.0) / den;
                if n > 0 {
                    next[n - 1] += a * nf / den;
                }
            }
            h = next;
        }
        for (n, &a) in h.iter().enumerate() {
            if n <= nmax {
                b[n] += c * a;
            } else {
                beyond += c * a;
            }
        }
    }
    (b, beyond)
}

impl Profile {
    /// Taylor coefficients at 0, truncated once terms fall below `1e-18`
    /// of the running sum; `None` for tabulated profiles.
    fn taylor(&self) -> Option<Vec<f64>> {
        const MAX_TERMS: usize = 4000;
        match self {
            Profile::Linear => Some(vec![0.0, 1.0]),
            Profile::Polynomial { degree } => {
                let p = *degree as usize;
                let mut c = vec![1.0; p + 1];
                for k in 1..=p {
                    c[k] = c[k - 1] * (p - k + 1) as f64 / k as f64;
                }
                Some(c)
            }
            Profile::Sss => Some(geometric_terms(|k| 0.5f64.powi(k as i32), MAX_TERMS)),
            Profile::Rbf { sigma } => {
                let lam = 1.0 / (sigma * sigma);
                let ln_c = |k: usize| -lam + k as f64 * lam.ln() - statrs::function::gamma::ln_gamma(k as f64 + 1.0);
                let c = geometric_terms(|k| ln_c(k).exp(), MAX_TERMS);
                Some(c)
            }
            Profile::Tabulated(_) => None,
        }
    }
}

fn geometric_terms(term: impl Fn(usize) -> f64, max_terms: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut sum = 0.0;
    let mut peaked = false;
    for k in 0..max_terms {
        let t = term(k);
        sum += t;
        out.push(t);
        if k > 0 && t < out[k - 1] {
            peaked = true;
        }
        if peaked && t < 1e-18 * sum {
            break;
        }
    }
    out
}

/// Mass beyond the last coefficient from a geometric fit of the last eight
/// (parity-smoothed) magnitudes.
fn estimate_tail(b: &[f64]) -> f64 {
    let total: f64 = b.iter().map(|v| v.abs()).sum();
    if b.len() < 10 {
        return 0.0;
    }
    let n = b.len();
    let env: Vec<(f64, f64)> = (n - 8..n).map(|i| (i as f64, b[i].abs().max(b[i - 1].abs()))).collect();
    let floor = 1e-14 * total.max(1e-300);
    if env.iter().all(|(_, v)| *v <= floor) {
        return 0.0;
    }
    let pts: Vec<(f64, f64)> = env.iter().filter(|(_, v)| *v > 0.0).map(|(i, v)| (*i, v.ln())).collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let q = (sxy / sxx).exp();
    if q >= 1.0 {
        return f64::INFINITY;
    }
    env[env.len() - 1].1 * q / (1.0 - q)
}

/// Legendre structure of a zonal kernel in dimension `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RkhsProfileData", into = "RkhsProfileData")]
pub struct RkhsProfile {
    pub d: usize,
    pub b: Vec<f64>,
    /// `a_n² = N_{d,n}/(|S^{d-1}|·b_n)` for `n` in the index set.
    pub a_sq: Vec<Option<f64>>,
    /// Degrees with `b_n` above the zero threshold.
    pub index_set: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RkhsProfileData {
    d: usize,
    b: Vec<f64>,
}

impl TryFrom<RkhsProfileData> for RkhsProfile {
    type Error = Error;

    fn try_from(p: RkhsProfileData) -> Result<Self> {
        RkhsProfile::from_coeffs(p.d, p.b)
    }
}

impl From<RkhsProfile> for RkhsProfileData {
    fn from(p: RkhsProfile) -> Self {
        Self { d: p.d, b: p.b }
    }
}

impl RkhsProfile {
    pub fn from_coeffs(d: usize, b: Vec<f64>) -> Result<Self> {
        if d < 2 || b.is_empty() || b.iter().any(|v| !v.is_finite()) {
            return domain("RKHS profile needs d >= 2 and finite coefficients");
        }
        let total: f64 = b.iter().map(|v| v.abs()).sum();
        let cut = INDEX_SET_REL_TOL * total;
        let area = sphere_area(d);
        let index_set: Vec<usize> = (0..b.len()).filter(|&n| b[n] > cut).collect();
        let a_sq = (0..b.len()).map(|n| (b[n] > cut).then(|| harmonic_dim_f64(d, n) / (area * b[n]))).collect();
        Ok(Self { d, b, a_sq, index_set })
    }

    /// Profile of a zonal kernel (after its normalization) in dimension `d`.
    pub fn for_kernel(k: &KernelSpec, d: usize, nmax: usize) -> Result<Self> {
        match &k.form {
            KernelForm::LegendreSeries { d: kd, b } => {
                if *kd != d {
                    return domain(format!("Legendre series is for dimension {kd}, not {d}"));
                }
                Self::from_coeffs(d, b.iter().map(|v| v * k.scale).collect())
            }
            KernelForm::Zonal(p) => {
                if d < 3 {
                    return domain(format!("dimension {d} < 3"));
                }
                let b = match p.taylor() {
                    Some(c) => {
                        let scaled: Vec<f64> = c.iter().map(|v| v * k.scale).collect();
                        let (b, beyond) = taylor_to_legendre(&scaled, d, nmax);
                        if !(beyond < TAIL_TOL) {
                            return Err(Error::NonConvergence { gap: beyond, eps: TAIL_TOL, iters: nmax });
                        }
                        b
                    }
                    None => profile_to_legendre(|s| k.profile_value(s).unwrap_or(f64::NAN), d, nmax)?,
                };
                Self::from_coeffs(d, b)
            }
            KernelForm::FeatureMap(_) => domain("feature-map kernels have no zonal profile"),
        }
    }

    pub fn sum(&self) -> f64 {
        self.b.iter().sum()
    }

    /// `Σ_{n∈I} N_{d,n}/|S^{d-1}| · a_n^{-2}`, which equals `Σ_{n∈I} b_n`.
    pub fn normalization_sum(&self) -> f64 {
        let area = sphere_area(self.d);
        self.index_set
            .iter()
            .map(|&n| harmonic_dim_f64(self.d, n) / area / self.a_sq[n].expect("index set entry"))
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// RKHS norm `√(Σ_{n∈I} α_n²/b_n)` of the zonal function `Σ α_n P_{d,n}(⟨e,·⟩)`.
///
/// A coefficient counts as nonzero when it exceeds `INDEX_SET_REL_TOL·Σ|α|`,
/// the same relative cut that defines the index set; a nonzero
/// coefficient outside the index set makes the norm infinite.
pub fn rkhs_norm_symmetric(f: &PolyCoeffs, profile: &RkhsProfile) -> Result<f64> {
    if f.d != profile.d {
        return domain(format!("function dimension {} differs from profile dimension {}", f.d, profile.d));
    }
    let cut = INDEX_SET_REL_TOL * f.alpha.iter().map(|a| a.abs()).sum::<f64>();
    let mut sq = 0.0;
    for (n, &a) in f.alpha.iter().enumerate() {
        if a.abs() <= cut {
            continue;
        }
        match profile.b.get(n) {
            Some(&b) if profile.a_sq[n].is_some() => sq += a * a / b,
            _ => return Err(Error::InfiniteNorm { degree: n, value: a }),
        }
    }
    Ok(sq.sqrt())
}

/// Monte-Carlo symmetrization `k_s(x,y) = ∫ k(Ax, Ay) dA` over Haar
/// rotations, tabulated on a Chebyshev grid in `s = ⟨x,y⟩`.
pub fn symmetrize_mc(k: &KernelSpec, d: usize, n_rotations: usize, rng: &mut RngStream) -> Result<KernelSpec> {
    if n_rotations < 16 {
        return domain("symmetrization needs at least 16 rotations");
    }
    if d < 2 {
        return domain("symmetrization needs d >= 2");
    }
    let e1 = UnitVector::basis(d, 0)?;
    k.eval(e1.as_slice(), e1.as_slice())?;
    let m = SYMMETRIZATION_GRID;
    let grid: Vec<f64> = (0..m).map(|j| -(std::f64::consts::PI * j as f64 / (m - 1) as f64).cos()).collect();
    let mut sum = vec![0.0; m];
    let mut sum_sq = vec![0.0; m];
    for _ in 0..n_rotations {
        let a = haar_orthogonal(d, rng)?;
        let c0: Vec<f64> = a.column(0).iter().cloned().collect();
        let c1: Vec<f64> = a.column(1).iter().cloned().collect();
        for (j, &s) in grid.iter().enumerate() {
            let r = (1.0 - s * s).max(0.0).sqrt();
            let y: Vec<f64> = c0.iter().zip(&c1).map(|(u, v)| s * u + r * v).collect();
            let v = k.eval_unchecked(&c0, &y);
            sum[j] += v;
            sum_sq[j] += v * v;
        }
    }
    let nf = n_rotations as f64;
    let value: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let std_err = sum_sq
        .iter()
        .zip(&value)
        .map(|(sq, mean)| ((sq / nf - mean * mean).max(0.0) * nf / (nf - 1.0) / nf).sqrt())
        .collect();
    let table = TabulatedProfile { s: grid, value, std_err };
    KernelSpec::new(KernelForm::Zonal(Profile::Tabulated(table)), false)
}
