//! Band-difference checks for trained predictors and Monte-Carlo
//! symmetrization about a direction.
//!
//! For a zonal kernel the symmetrization of `f = Σ α_i κ(⟨x_i,·⟩)` about `e`
//! is exact: `f̄(t) = Σ_n b_n (Σ_i α_i P_{d,n}(⟨x_i,e⟩)) P_{d,n}(t)`.
//! Everything else goes through band averages.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::kernels::{KernelForm, KernelSpec, RkhsProfile, TabulatedProfile, DEFAULT_NMAX, TAIL_TOL};
use crate::learners::KernelModel;
use crate::orthopoly::{
    arcsine_l1_norm, arcsine_nodes, legendre_table, legendre_tail_bound, slow_change_rhs, PolyCoeffs, BAND_HALF_WIDTH,
};
use crate::sphere::{band_average, dot, haar_orthogonal, sample_unit_sphere, OrthoCompletion, RngStream, UnitVector};
use crate::stats::mean_std_err;

/// Directions tried by [`worst_direction`] unless the caller says otherwise.
pub const DEFAULT_DIRECTIONS: usize = 32;

/// Arcsine nodes used for the Monte-Carlo estimate of `‖f̄‖_{1,μ}`.
const MC_L1_NODES: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub direction: Vec<f64>,
    pub gamma: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub f_bar_plus: f64,
    pub f_bar_minus: f64,
    pub gap: f64,
    pub bound: f64,
    pub std_errs: (f64, f64),
    pub l1_norm: f64,
    /// Bound on `max_n |α_n|` of `f̄` used in the tail term.
    pub coeff_bound: f64,
    /// Slack for truncating the Legendre expansion (exact path only).
    pub truncation: f64,
    pub exact: bool,
}

impl BandReport {
    /// `gap ≤ bound + truncation + 4·(σ₊ + σ₋)`.
    pub fn holds(&self) -> bool {
        self.gap <= self.bound + self.truncation + 4.0 * (self.std_errs.0 + self.std_errs.1)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < BAND_HALF_WIDTH) {
        return domain(format!("gamma {gamma} outside (0, 1/8)"));
    }
    Ok(())
}

/// Exact report for a zonal function `f(x) = Σ α_n P_{d,n}(⟨e,x⟩)`.
pub fn band_report_exact(f: &PolyCoeffs, e: &UnitVector, gamma: f64, k: usize) -> Result<BandReport> {
    check_gamma(gamma)?;
    if e.dim() != f.d {
        return domain(format!("direction has dimension {}, function {}", e.dim(), f.d));
    }
    let tail = legendre_tail_bound(k, f.d)?;
    let plus = f.eval(gamma)?;
    let minus = f.eval(-gamma)?;
    let l1 = arcsine_l1_norm(|t| f.eval_unchecked(t));
    let coeff_bound = f.max_abs_coeff();
    Ok(BandReport {
        direction: e.as_slice().to_vec(),
        gamma,
        k,
        f_bar_plus: plus,
        f_bar_minus: minus,
        gap: (plus - minus).abs(),
        bound: slow_change_rhs(gamma, k, l1, coeff_bound, tail),
        std_errs: (0.0, 0.0),
        l1_norm: l1,
        coeff_bound,
        truncation: 0.0,
        exact: true,
    })
}

/// Legendre coefficients of the RKHS part of `f̄` for a zonal-kernel model,
/// plus a bound on what truncation at `nmax` drops from `sup|f̄|`.
pub fn symmetrized_coeffs(model: &KernelModel, e: &UnitVector, nmax: usize) -> Result<(PolyCoeffs, f64)> {
    if !model.kernel.is_zonal() {
        return domain("exact symmetrization needs a zonal kernel");
    }
    let d = e.dim();
    let profile = RkhsProfile::for_kernel(&model.kernel, d, nmax)?;
    let nmax = profile.b.len() - 1;
    let mut c = vec![0.0; nmax + 1];
    for (x, a) in model.support.iter().zip(&model.alpha) {
        let p = legendre_table(d, nmax, x.dot(e.as_slice()).clamp(-1.0, 1.0));
        for (cn, pn) in c.iter_mut().zip(&p) {
            *cn += a * pn;
        }
    }
    let alpha: Vec<f64> = c.iter().zip(&profile.b).map(|(cn, bn)| cn * bn).collect();
    let abs_alpha: f64 = model.alpha.iter().map(|a| a.abs()).sum();
    let kernel_mass = match &model.kernel.form() {
        KernelForm::LegendreSeries { .. } => 0.0,
        _ => TAIL_TOL * profile.b.iter().map(|b| b.abs()).sum::<f64>(),
    };
    Ok((PolyCoeffs::new(d, alpha)?, abs_alpha * kernel_mass))
}

/// Band-difference report for a trained kernel model in direction `e`.
///
/// Zonal kernels take the exact Legendre route; other kernels estimate
/// `f̄(±γ)` and `‖f̄‖_{1,μ}` by band averages with `n_mc` samples per side.
pub fn check_band_gap(
    model: &KernelModel,
    e: &UnitVector,
    gamma: f64,
    k: usize,
    n_mc: usize,
    rng: &mut RngStream,
) -> Result<BandReport> {
    check_gamma(gamma)?;
    if model.kernel.is_zonal() && e.dim() >= 5 {
        let (f_bar, trunc) = symmetrized_coeffs(model, e, DEFAULT_NMAX)?;
        let mut report = band_report_exact(&f_bar, e, gamma, k)?;
        let lead = 32.0 * gamma * (k as f64).powf(3.5);
        report.truncation = (2.0 + lead) * trunc;
        return Ok(report);
    }
    let f = rkhs_part(model);
    let diag = kernel_diag_bound(&model.kernel);
    band_report_mc(&f, model.norm * diag.sqrt(), e, gamma, k, n_mc, rng)
}

type Scorer<'a> = Box<dyn Fn(&[f64]) -> f64 + 'a>;

/// `x ↦ f(x) - b`, with feature-map kernels collapsed to one weight vector.
fn rkhs_part(model: &KernelModel) -> Scorer<'_> {
    match model.kernel.form() {
        KernelForm::FeatureMap(map) => {
            let scale = if model.kernel.normalized() { 1.0 / map.sup_norm_sq() } else { 1.0 };
            let mut v = vec![0.0; map.dim_out()];
            for (x, a) in model.support.iter().zip(&model.alpha) {
                for (vi, pi) in v.iter_mut().zip(map.apply(x.as_slice())) {
                    *vi += scale * a * pi;
                }
            }
            Box::new(move |x| dot(&v, &map.apply(x)))
        }
        _ => Box::new(move |x| {
            model.support.iter().zip(&model.alpha).map(|(s, a)| a * model.kernel.eval_unchecked(s.as_slice(), x)).sum()
        }),
    }
}

/// `sup_x k(x,x)`; every Legendre coefficient of `f̄` is at most `‖f‖·√(sup k(x,x))`.
fn kernel_diag_bound(k: &KernelSpec) -> f64 {
    match k.form() {
        KernelForm::FeatureMap(map) if !k.normalized() => map.sup_norm_sq(),
        KernelForm::FeatureMap(_) => 1.0,
        _ => k.profile_value(1.0).unwrap_or(1.0).abs(),
    }
}

/// Monte-Carlo band report for an arbitrary `f` whose symmetrization has
/// Legendre coefficients bounded by `coeff_bound`.
pub fn band_report_mc(
    f: &dyn Fn(&[f64]) -> f64,
    coeff_bound: f64,
    e: &UnitVector,
    gamma: f64,
    k: usize,
    n_mc: usize,
    rng: &mut RngStream,
) -> Result<BandReport> {
    check_gamma(gamma)?;
    if n_mc < MC_L1_NODES * 2 {
        return domain(format!("n_mc must be at least {}", MC_L1_NODES * 2));
    }
    let tail = legendre_tail_bound(k, e.dim())?;
    let (plus, se_plus) = band_average(|x| Ok(f(x)), e, gamma, n_mc, rng)?;
    let (minus, se_minus) = band_average(|x| Ok(f(x)), e, -gamma, n_mc, rng)?;
    let per_node = (n_mc / MC_L1_NODES).max(2);
    let mut l1 = 0.0;
    let nodes = arcsine_nodes(MC_L1_NODES);
    for &t in &nodes {
        l1 += band_average(|x| Ok(f(x)), e, t, per_node, rng)?.0.abs();
    }
    l1 /= nodes.len() as f64;
    Ok(BandReport {
        direction: e.as_slice().to_vec(),
        gamma,
        k,
        f_bar_plus: plus,
        f_bar_minus: minus,
        gap: (plus - minus).abs(),
        bound: slow_change_rhs(gamma, k, l1, coeff_bound, tail),
        std_errs: (se_plus, se_minus),
        l1_norm: l1,
        coeff_bound,
        truncation: 0.0,
        exact: false,
    })
}

/// Largest band gap over `n_dir` Haar directions. A search, not a
/// certificate: the worst direction may be missed.
pub fn worst_direction(
    model: &KernelModel,
    gamma: f64,
    k: usize,
    n_dir: usize,
    n_mc: usize,
    rng: &mut RngStream,
) -> Result<BandReport> {
    if n_dir == 0 {
        return domain("direction search needs at least one direction");
    }
    let d = model.support.first().map(|x| x.dim()).unwrap_or(0);
    let mut worst: Option<BandReport> = None;
    for _ in 0..n_dir {
        let e = sample_unit_sphere(d, rng)?;
        let r = check_band_gap(model, &e, gamma, k, n_mc, rng)?;
        if worst.as_ref().is_none_or(|w| r.gap > w.gap) {
            worst = Some(r);
        }
    }
    Ok(worst.expect("n_dir >= 1"))
}

/// `g(a) ≈ ∫ f(A x_a) dA` over Haar rotations `A` fixing `e`, where `x_a` is
/// a fixed point with `⟨x_a, e⟩ = a`; the same rotations serve every grid point.
///
/// A rotation fixing `e` acts on `x_a = a·e + √(1-a²)·u` through a Haar
/// element `B` of `O(d-1)` on the complement, so only `B·u` is formed.
pub fn symmetrize_function(
    f: &dyn Fn(&[f64]) -> f64,
    e: &UnitVector,
    grid: &[f64],
    n_rotations: usize,
    rng: &mut RngStream,
) -> Result<TabulatedProfile> {
    if n_rotations < 16 {
        return domain("symmetrization needs at least 16 rotations");
    }
    if grid.len() < 2 || grid.iter().any(|a| !(a.abs() <= 1.0)) {
        return domain("grid needs at least two points inside [-1, 1]");
    }
    let d = e.dim();
    if d < 2 {
        return domain("symmetrization needs d >= 2");
    }
    let completion = OrthoCompletion::new(e);
    let mut samples = vec![Vec::with_capacity(n_rotations); grid.len()];
    for _ in 0..n_rotations {
        let b = haar_orthogonal(d - 1, rng)?;
        let bu: Vec<f64> = b.column(0).iter().cloned().collect();
        let w = completion.lift(&bu);
        for (j, &a) in grid.iter().enumerate() {
            let r = (1.0 - a * a).max(0.0).sqrt();
            let x: Vec<f64> = e.as_slice().iter().zip(&w).map(|(ei, wi)| a * ei + r * wi).collect();
            samples[j].push(f(&x));
        }
    }
    let (value, std_err): (Vec<f64>, Vec<f64>) = samples.iter().map(|s| mean_std_err(s)).unzip();
    let mut s = grid.to_vec();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
    let value = order.iter().map(|&i| value[i]).collect();
    let std_err = order.iter().map(|&i| std_err[i]).collect();
    s.sort_by(f64::total_cmp);
    TabulatedProfile::new(s, value, std_err)
}
