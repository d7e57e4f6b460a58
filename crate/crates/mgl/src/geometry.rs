//! Minimum-volume enclosing ellipsoids, convex decomposition over a finite
//! point set, and the finite noise measure built from a feature map's
//! John ellipsoid.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::kernels::{csv_string, parse_field, FeatureMap};
use crate::sphere::{dot, sample_unit_sphere, RngStream, UnitVector};

/// Khachiyan iterations before the ellipsoid is rescaled to contain every
/// point and returned with a warning.
pub const MVEE_MAX_ITERS: usize = 100_000;
/// Default Khachiyan accuracy.
pub const MVEE_EPS: f64 = 1e-3;
/// Default convex-decomposition residual.
pub const DECOMPOSE_TOL: f64 = 1e-9;
/// Probe points per output dimension when none are supplied.
pub const PROBES_PER_DIM: usize = 50;
/// Random functionals checked by the noise-measure certificate.
pub const CERTIFICATE_FUNCTIONALS: usize = 100;

const RANK_REL_TOL: f64 = 1e-10;
const REFRESH_EVERY: usize = 64;

/// `{x : (x-c)ᵀ A (x-c) ≤ 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    pub center: DVector<f64>,
    pub shape: DMatrix<f64>,
    pub iterations: usize,
}

impl Ellipsoid {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `(x-c)ᵀ A (x-c)`.
    pub fn gauge_sq(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x) - &self.center;
        v.dot(&(&self.shape * &v))
    }

    /// `max_{x∈E} ⟨u, x⟩ = ⟨u, c⟩ + √(uᵀA⁻¹u)`.
    pub fn support(&self, u: &[f64]) -> Result<f64> {
        let inv = self.shape.clone().try_inverse().ok_or_else(|| Error::Domain("singular ellipsoid shape".into()))?;
        let u = DVector::from_column_slice(u);
        Ok(u.dot(&self.center) + u.dot(&(&inv * &u)).max(0.0).sqrt())
    }
}

/// Khachiyan's algorithm. With `symmetric` the ellipsoid is centred at the
/// origin and encloses `±points`; otherwise the centre is free.
///
/// Returns `RankDeficient` when the points do not span (or, without
/// symmetry, affinely span) the ambient space.
pub fn mvee<P: AsRef<[f64]>>(points: &[P], symmetric: bool, eps: f64) -> Result<Ellipsoid> {
    if points.is_empty() {
        return domain("MVEE of an empty point set");
    }
    if !(eps > 0.0 && eps <= 0.1) {
        return domain(format!("eps {eps} outside (0, 0.1]"));
    }
    let m = points[0].as_ref().len();
    if m == 0 || points.iter().any(|p| p.as_ref().len() != m) {
        return domain("points have mixed or zero dimensions");
    }
    // Symmetric: q = p in R^m. General: lifted q = (p, 1) in R^{m+1}.
    let dim = if symmetric { m } else { m + 1 };
    let q: Vec<DVector<f64>> = points
        .iter()
        .map(|p| {
            let p = p.as_ref();
            DVector::from_fn(dim, |i, _| if i < m { p[i] } else { 1.0 })
        })
        .collect();
    let n = q.len();
    let mut u = vec![1.0 / n as f64; n];

    let moment = |u: &[f64]| {
        let mut x = DMatrix::<f64>::zeros(dim, dim);
        for (qi, &ui) in q.iter().zip(u) {
            x.ger(ui, qi, qi, 1.0);
        }
        x
    };
    let x0 = moment(&u);
    let eig = SymmetricEigen::new(x0.clone()).eigenvalues;
    let top = eig.max().max(0.0);
    let rank = eig.iter().filter(|&&v| v > RANK_REL_TOL * top).count();
    if top <= 0.0 || rank < dim {
        return Err(Error::RankDeficient { deficiency: dim - rank, dim: m });
    }

    let target = dim as f64;
    let refresh = |u: &[f64]| -> Result<(DMatrix<f64>, Vec<f64>)> {
        let inv = moment(u).try_inverse().ok_or(Error::RankDeficient { deficiency: 1, dim: m })?;
        let mv = q.iter().map(|qi| qi.dot(&(&inv * qi))).collect();
        Ok((inv, mv))
    };
    let (mut inv, mut mvals) = refresh(&u)?;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MVEE_MAX_ITERS {
        let (j, &mj) = mvals.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty");
        if mj <= target * (1.0 + eps) {
            // Confirm against a fresh inverse before accepting.
            let (fresh_inv, fresh_m) = refresh(&u)?;
            inv = fresh_inv;
            mvals = fresh_m;
            if mvals.iter().cloned().fold(f64::MIN, f64::max) <= target * (1.0 + eps) {
                converged = true;
                break;
            }
            continue;
        }
        let step = (mj - target) / (target * (mj - 1.0));
        for (i, ui) in u.iter_mut().enumerate() {
            *ui *= 1.0 - step;
            if i == j {
                *ui += step;
            }
        }
        iterations += 1;
        if step > 1.0 - 1e-9 {
            // In one dimension the step jumps straight to the extreme point.
            (inv, mvals) = refresh(&u)?;
            continue;
        }
        // Sherman–Morrison for X' = (1-s)X + s q qᵀ.
        let w = &inv * &q[j];
        let denom = (1.0 - step) + step * mj;
        let scale = 1.0 / (1.0 - step);
        inv -= (&w * w.transpose()) * (step / denom);
        inv *= scale;
        for (i, qi) in q.iter().enumerate() {
            let c = qi.dot(&w);
            mvals[i] = scale * (mvals[i] - step * c * c / denom);
        }
        if iterations % REFRESH_EVERY == 0 {
            (inv, mvals) = refresh(&u)?;
        }
    }

    let (center, shape) = if symmetric {
        (DVector::zeros(m), inv / target)
    } else {
        let c: DVector<f64> = q.iter().zip(&u).fold(DVector::zeros(m), |acc, (qi, &ui)| acc + qi.rows(0, m) * ui);
        let mut s = DMatrix::<f64>::zeros(m, m);
        for (qi, &ui) in q.iter().zip(&u) {
            let v = qi.rows(0, m) - &c;
            s.ger(ui, &v, &v, 1.0);
        }
        let s_inv = s.try_inverse().ok_or(Error::RankDeficient { deficiency: 1, dim: m })?;
        (c, s_inv / m as f64)
    };
    let mut e = Ellipsoid { center, shape, iterations };
    let worst = points.iter().map(|p| e.gauge_sq(p.as_ref())).fold(0.0f64, f64::max);
    if !converged {
        log::warn!("MVEE stopped after {iterations} iterations; rescaling to contain all points");
    }
    // Khachiyan's ellipsoid contains the points only up to (1+eps); rescaling
    // makes containment exact and keeps the John sandwich.
    if worst > 1.0 {
        e.shape /= worst;
    }
    Ok(e)
}

/// Frank–Wolfe with exact line search on `½‖Pλ - target‖²` over the simplex,
/// with active-set polishing, followed by Carathéodory pruning to at most
/// `m + 1` atoms. Returns the full weight vector.
///
/// `Infeasible` is returned once the Frank–Wolfe lower bound certifies that
/// the target is farther than `tol` from the hull.
pub fn convex_decompose<P: AsRef<[f64]>>(target: &[f64], points: &[P], tol: f64) -> Result<Vec<f64>> {
    let m = target.len();
    if points.is_empty() || m == 0 {
        return domain("convex decomposition needs points and a nonempty target");
    }
    if points.iter().any(|p| p.as_ref().len() != m) {
        return domain("points and target have mixed dimensions");
    }
    if !(tol > 0.0) {
        return domain("tolerance must be positive");
    }
    let pts: Vec<&[f64]> = points.iter().map(|p| p.as_ref()).collect();
    let n = pts.len();
    let dist2 = |p: &[f64]| p.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let start = (0..n).min_by(|&a, &b| dist2(pts[a]).total_cmp(&dist2(pts[b]))).expect("nonempty");
    let mut lambda = vec![0.0; n];
    lambda[start] = 1.0;
    let mut x = pts[start].to_vec();
    let max_iters = 100_000;
    for it in 0..max_iters {
        let r: Vec<f64> = x.iter().zip(target).map(|(a, b)| a - b).collect();
        let rr = dot(&r, &r);
        if rr.sqrt() <= tol {
            break;
        }
        let rx = dot(&r, &x);
        let (j, best) = (0..n).map(|j| (j, dot(&r, pts[j]))).min_by(|a, b| a.1.total_cmp(&b.1)).expect("nonempty");
        let gap = rx - best;
        // min over the hull of ½‖y - t‖² ≥ ½‖r‖² - gap.
        if 0.5 * rr - gap > 0.5 * tol * tol {
            return Err(Error::Infeasible { residual: rr.sqrt(), tol });
        }
        let d: Vec<f64> = pts[j].iter().zip(&x).map(|(p, xi)| p - xi).collect();
        let dd = dot(&d, &d);
        if dd == 0.0 {
            break;
        }
        let tau = (gap / dd).clamp(0.0, 1.0);
        for l in lambda.iter_mut() {
            *l *= 1.0 - tau;
        }
        lambda[j] += tau;
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += tau * di;
        }
        if it % 16 == 15 {
            polish(&mut lambda, &pts, target);
            x = combine(&lambda, &pts, m);
        }
        if it + 1 == max_iters {
            let res = dist(&x, target);
            if res > tol {
                return Err(Error::NonConvergence { gap: res, eps: tol, iters: max_iters });
            }
        }
    }
    caratheodory_prune(&mut lambda, &pts);
    let res = dist(&combine(&lambda, &pts, m), target);
    if res > tol {
        return Err(Error::Infeasible { residual: res, tol });
    }
    Ok(lambda)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn combine(lambda: &[f64], pts: &[&[f64]], m: usize) -> Vec<f64> {
    let mut x = vec![0.0; m];
    for (l, p) in lambda.iter().zip(pts) {
        if *l != 0.0 {
            for (xi, pi) in x.iter_mut().zip(p.iter()) {
                *xi += l * pi;
            }
        }
    }
    x
}

/// Wolfe-style minor cycles: minimize over the affine hull of the support
/// and step back to the simplex boundary until the affine minimizer is
/// feasible. Never increases the objective.
fn polish(lambda: &mut [f64], pts: &[&[f64]], target: &[f64]) {
    let m = target.len();
    for _ in 0..lambda.len().max(1) {
        let support: Vec<usize> = (0..lambda.len()).filter(|&i| lambda[i] > 0.0).collect();
        let k = support.len();
        if k < 2 {
            return;
        }
        // KKT system of min ‖P_S μ - t‖² s.t. Σμ = 1.
        let mut a = DMatrix::<f64>::zeros(k + 1, k + 1);
        let mut rhs = DVector::<f64>::zeros(k + 1);
        for (a_i, &i) in support.iter().enumerate() {
            for (b_i, &j) in support.iter().enumerate() {
                a[(a_i, b_i)] = dot(pts[i], pts[j]);
            }
            a[(a_i, k)] = 1.0;
            a[(k, a_i)] = 1.0;
            rhs[a_i] = dot(pts[i], target);
        }
        rhs[k] = 1.0;
        let Ok(sol) = a.svd(true, true).solve(&rhs, 1e-13) else { return };
        let mu: Vec<f64> = (0..k).map(|i| sol[i]).collect();
        let before = dist(&combine(lambda, pts, m), target);
        if mu.iter().all(|&v| v >= 0.0) {
            let mut trial = vec![0.0; lambda.len()];
            for (a_i, &i) in support.iter().enumerate() {
                trial[i] = mu[a_i];
            }
            if dist(&combine(&trial, pts, m), target) <= before {
                lambda.copy_from_slice(&trial);
            }
            return;
        }
        let mut theta = 1.0f64;
        for (a_i, &i) in support.iter().enumerate() {
            if mu[a_i] < 0.0 {
                theta = theta.min(lambda[i] / (lambda[i] - mu[a_i]));
            }
        }
        let mut trial = lambda.to_vec();
        for (a_i, &i) in support.iter().enumerate() {
            let v = (1.0 - theta) * lambda[i] + theta * mu[a_i];
            trial[i] = if v <= 1e-15 { 0.0 } else { v };
        }
        let total: f64 = trial.iter().sum();
        trial.iter_mut().for_each(|v| *v /= total);
        if dist(&combine(&trial, pts, m), target) > before + 1e-15 {
            return;
        }
        lambda.copy_from_slice(&trial);
    }
}

/// Removes atoms along null vectors of `[p_j; 1]` until at most `m + 1`
/// remain; the combination and total weight are unchanged.
fn caratheodory_prune(lambda: &mut [f64], pts: &[&[f64]]) {
    let m = pts[0].len();
    loop {
        let support: Vec<usize> = (0..lambda.len()).filter(|&i| lambda[i] > 0.0).collect();
        if support.len() <= m + 1 {
            return;
        }
        let cols = &support[..m + 2];
        // Square zero-padded matrix so that the SVD exposes a null vector.
        let a = DMatrix::<f64>::from_fn(m + 2, m + 2, |r, c| {
            if r < m {
                pts[cols[c]][r]
            } else if r == m {
                1.0
            } else {
                0.0
            }
        });
        let svd = a.svd(false, true);
        let vt = svd.v_t.expect("requested V");
        let smallest =
            (0..m + 2).min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b])).expect("nonempty");
        let mut c: Vec<f64> = (0..m + 2).map(|i| vt[(smallest, i)]).collect();
        if c.iter().all(|v| *v <= 0.0) {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        let (drop, tau) = cols
            .iter()
            .zip(&c)
            .filter(|(_, &ci)| ci > 0.0)
            .map(|(&i, &ci)| (i, lambda[i] / ci))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("a null vector with zero sum has a positive entry");
        for (&i, &ci) in cols.iter().zip(&c) {
            lambda[i] = (lambda[i] - tau * ci).max(0.0);
        }
        lambda[drop] = 0.0;
        let total: f64 = lambda.iter().sum();
        lambda.iter_mut().for_each(|v| *v /= total);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedAtom {
    pub x: UnitVector,
    pub label: i8,
    pub weight: f64,
}

/// A finite labeled measure with weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedAtomMeasure {
    atoms: Vec<WeightedAtom>,
}

impl WeightedAtomMeasure {
    pub fn new(atoms: Vec<WeightedAtom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidSpec("atom measure is empty".into()));
        }
        let d = atoms[0].x.dim();
        if atoms.iter().any(|a| a.x.dim() != d) {
            return Err(Error::InvalidSpec("atoms have mixed dimensions".into()));
        }
        if atoms.iter().any(|a| !(a.weight >= 0.0) || (a.label != 1 && a.label != -1)) {
            return Err(Error::InvalidSpec("atoms need nonnegative weights and ±1 labels".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSpec(format!("atom weights sum to {total}, not 1")));
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[WeightedAtom] {
        &self.atoms
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].x.dim()
    }

    /// `Σ w·g(x, y)`.
    pub fn expect(&self, mut g: impl FnMut(&[f64], i8) -> f64) -> f64 {
        self.atoms.iter().map(|a| a.weight * g(a.x.as_slice(), a.label)).sum()
    }

    /// Columns `x0..x{d-1}, label, weight`.
    pub fn to_csv(&self) -> Result<String> {
        let d = self.dim();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
        header.push("label".into());
        header.push("weight".into());
        w.write_record(&header)?;
        for a in &self.atoms {
            let mut row: Vec<String> = a.x.as_slice().iter().map(|v| v.to_string()).collect();
            row.push(a.label.to_string());
            row.push(a.weight.to_string());
            w.write_record(&row)?;
        }
        csv_string(w)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let cols = r.headers()?.len();
        if cols < 3 {
            return Err(Error::Usage("atom CSV needs x columns, label and weight".into()));
        }
        let d = cols - 2;
        let mut atoms = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let x = (0..d).map(|i| parse_field(&rec, i)).collect::<Result<Vec<_>>>()?;
            let label = parse_field(&rec, d)? as i8;
            let weight = parse_field(&rec, d + 1)?;
            atoms.push(WeightedAtom { x: UnitVector::new(x)?, label, weight });
        }
        Self::new(atoms)
    }
}

/// Outcome of the lower-bound check on `μ_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCertificate {
    pub functionals: usize,
    /// `min_w E_{μ_N}[hinge(y⟨w,ψ(x)⟩)]` over functionals of John norm one.
    pub min_hinge_err: f64,
    /// `1/(2 m^{1.5})`.
    pub hinge_threshold: f64,
    /// `min_w E_{μ_N}|⟨w,ψ(x)⟩|`, at least `1/m^{1.5}` in exact arithmetic.
    pub min_abs_mass: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct NoiseMeasure {
    /// Shape `M` of the symmetric John ellipsoid `{v : vᵀMv ≤ 1}` of `±ψ(probes)`.
    pub john_shape: DMatrix<f64>,
    pub measure: WeightedAtomMeasure,
    pub certificate: NoiseCertificate,
}

/// Default probes: `50·m` uniform points on `S^{d-1}`.
pub fn default_probes(d: usize, m: usize, rng: &mut RngStream) -> Result<Vec<UnitVector>> {
    (0..PROBES_PER_DIM * m).map(|_| sample_unit_sphere(d, rng)).collect()
}

/// Builds `μ_N` for the linear functionals `⟨w, ψ(x)⟩`: the symmetric MVEE of
/// `±ψ(probes)` gives a John basis `e_i`, each `e_i/√m` is written as a convex
/// combination of `±ψ(probes)`, and every used probe becomes the pair of
/// atoms `(x, ±1)` with weight `λ/(2m)`.
pub fn build_noise_measure(psi: &FeatureMap, probes: &[UnitVector], rng: &mut RngStream) -> Result<NoiseMeasure> {
    let m = psi.dim_out();
    if probes.is_empty() {
        return domain("no probe points");
    }
    if probes.iter().any(|p| p.dim() != psi.dim_in()) {
        return domain("probe dimension differs from the feature map input");
    }
    let images: Vec<Vec<f64>> = probes.iter().map(|p| psi.apply(p.as_slice())).collect();
    let ell = match mvee(&images, true, MVEE_EPS) {
        Err(Error::RankDeficient { deficiency, dim }) => {
            return Err(Error::SpanFailure { rank: dim - deficiency, dim })
        }
        other => other?,
    };
    let eig = SymmetricEigen::new(ell.shape.clone());
    if eig.eigenvalues.iter().any(|&v| v <= 0.0) {
        return Err(Error::SpanFailure { rank: eig.eigenvalues.iter().filter(|&&v| v > 0.0).count(), dim: m });
    }
    let inv_sqrt = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()))
        * eig.eigenvectors.transpose();
    let signed: Vec<Vec<f64>> =
        images.iter().cloned().chain(images.iter().map(|v| v.iter().map(|x| -x).collect())).collect();
    let n = probes.len();
    let mut atoms = Vec::new();
    let mf = m as f64;
    for i in 0..m {
        let target: Vec<f64> = inv_sqrt.column(i).iter().map(|v| v / mf.sqrt()).collect();
        let lambda = convex_decompose(&target, &signed, DECOMPOSE_TOL)?;
        for (j, &l) in lambda.iter().enumerate() {
            if l > 0.0 {
                let x = probes[j % n].clone();
                atoms.push(WeightedAtom { x: x.clone(), label: 1, weight: l / (2.0 * mf) });
                atoms.push(WeightedAtom { x, label: -1, weight: l / (2.0 * mf) });
            }
        }
    }
    let total: f64 = atoms.iter().map(|a| a.weight).sum();
    atoms.iter_mut().for_each(|a| a.weight /= total);
    let measure = WeightedAtomMeasure::new(atoms)?;

    let shape_inv = ell.shape.clone().try_inverse().ok_or(Error::SpanFailure { rank: 0, dim: m })?;
    let hinge_threshold = 1.0 / (2.0 * mf.powf(1.5));
    let (mut min_hinge, mut min_abs) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..CERTIFICATE_FUNCTIONALS {
        let w = DVector::from_fn(m, |_, _| rng.normal());
        let w = &w / w.dot(&(&shape_inv * &w)).sqrt();
        let f = |x: &[f64]| dot(w.as_slice(), &psi.apply(x));
        // NaN must poison the minimum rather than be skipped by f64::min.
        let nan_min = |cur: f64, v: f64| if v.is_nan() { f64::NAN } else { cur.min(v) };
        min_hinge = nan_min(
            min_hinge,
            measure.expect(|x, y| {
                let v = 1.0 - y as f64 * f(x);
                if v.is_nan() {
                    v
                } else {
                    v.max(0.0)
                }
            }),
        );
        min_abs = nan_min(min_abs, measure.expect(|x, _| f(x).abs()));
    }
    let certificate = NoiseCertificate {
        functionals: CERTIFICATE_FUNCTIONALS,
        min_hinge_err: min_hinge,
        hinge_threshold,
        min_abs_mass: min_abs,
        passed: min_hinge >= hinge_threshold - 1e-9,
    };
    Ok(NoiseMeasure { john_shape: ell.shape, measure, certificate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gaussian_points(n: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = RngStream::new(seed, 0);
        (0..n).map(|_| (0..m).map(|_| rng.normal()).collect()).collect()
    }

    #[test]
    fn cube_vertices_give_the_circumscribed_ball() {
        let mut pts = Vec::new();
        for mask in 0..8u32 {
            pts.push((0..3).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect::<Vec<f64>>());
        }
        for symmetric in [true, false] {
            let e = mvee(&pts, symmetric, 1e-6).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let want = if i == j { 1.0 / 3.0 } else { 0.0 };
                    assert!((e.shape[(i, j)] - want).abs() < 1e-5, "{symmetric}: {}", e.shape);
                }
                assert!(e.center[i].abs() < 1e-6);
            }
        }
    }

    #[test]
    fn planar_examples() {
        let cross = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let corners = vec![vec![1.0, 1.0], vec![1.0, -1.0], vec![-1.0, 1.0], vec![-1.0, -1.0]];
        for (pts, radius_sq) in [(cross, 1.0), (corners, 2.0)] {
            let e = mvee(&pts, true, 1e-6).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let want = if i == j { 1.0 / radius_sq } else { 0.0 };
                    assert!((e.shape[(i, j)] - want).abs() < 1e-5);
                }
            }
        }
        let line = vec![vec![0.0, 0.0], vec![1.0, 2.0], vec![-1.0, -2.0]];
        assert!(matches!(mvee(&line, true, 1e-3), Err(Error::RankDeficient { deficiency: 1, dim: 2 })));
        assert!(mvee(&line, true, 0.5).is_err());
    }

    #[test]
    fn segment_midpoint_and_vertex() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 2.0]];
        let lambda = convex_decompose(&[1.0, 1.0], &pts, 1e-9).unwrap();
        assert!((lambda[0] - 0.5).abs() < 1e-9 && (lambda[1] - 0.5).abs() < 1e-9);
        let lambda = convex_decompose(&[2.0, 2.0], &pts, 1e-9).unwrap();
        assert_eq!(lambda, vec![0.0, 1.0]);
    }

    #[test]
    fn one_dimensional_noise_measure() {
        let mut rng = RngStream::new(4, 0);
        let d = 6;
        let e = UnitVector::basis(d, 0).unwrap();
        let psi = FeatureMap::projection(&e);
        let probes = default_probes(d, 1, &mut rng).unwrap();
        let extreme = probes.iter().map(|p| p.as_slice()[0].abs()).fold(0.0, f64::max);
        let nm = build_noise_measure(&psi, &probes, &mut rng).unwrap();
        assert!(nm.certificate.passed, "{:?}", nm.certificate);
        for a in nm.measure.atoms() {
            assert!((a.x.as_slice()[0].abs() - extreme).abs() < 1e-12);
        }
        // Every w has John norm |w|·extreme; hinge error is at least 1/2 of it.
        for w in [0.3, -1.7, 4.0] {
            let err = nm.measure.expect(|x, y| (1.0 - y as f64 * w * x[0]).max(0.0));
            assert!(err >= 0.5 * w.abs() * extreme - 1e-9);
        }
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let pts = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![1.0, 1.0, 0.0]];
        assert!(matches!(mvee(&pts, true, 1e-3), Err(Error::RankDeficient { deficiency: 1, dim: 3 })));
        let flat = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]];
        assert!(matches!(mvee(&flat, false, 1e-3), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn john_sandwich_on_random_clouds() {
        for (seed, m) in [(1u64, 2usize), (2, 5), (3, 8)] {
            let pts = gaussian_points(200, m, seed);
            let eps = 1e-3;
            let e = mvee(&pts, true, eps).unwrap();
            assert!(pts.iter().all(|p| e.gauge_sq(p) <= 1.0 + 10.0 * eps));
            // Inner ellipsoid E/√m must sit inside conv(±P): compare supports.
            let mut rng = RngStream::new(seed + 100, 0);
            for _ in 0..50 {
                let u: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
                let hull = pts.iter().map(|p| dot(p, &u).abs()).fold(0.0, f64::max);
                let inner = e.support(&u).unwrap() / (m as f64).sqrt();
                assert!(inner <= hull * (1.0 + 1e-9), "m={m}: {inner} > {hull}");
            }
        }
    }

    #[test]
    fn general_mvee_contains_shifted_cloud() {
        let pts: Vec<Vec<f64>> =
            gaussian_points(100, 3, 9).into_iter().map(|p| vec![p[0] + 5.0, 2.0 * p[1] - 1.0, p[2]]).collect();
        let e = mvee(&pts, false, 1e-4).unwrap();
        assert!(pts.iter().all(|p| e.gauge_sq(p) <= 1.0 + 1e-3));
        assert!((e.center[0] - 5.0).abs() < 1.0);
    }

    #[test]
    fn decomposition_examples() {
        let square = vec![vec![1.0, 1.0], vec![1.0, -1.0], vec![-1.0, 1.0], vec![-1.0, -1.0]];
        let lambda = convex_decompose(&[0.2, -0.3], &square, 1e-9).unwrap();
        assert!((lambda.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(lambda.iter().all(|&l| l >= 0.0));
        assert!(lambda.iter().filter(|&&l| l > 0.0).count() <= 3);
        let x = combine(&lambda, &square.iter().map(|p| p.as_slice()).collect::<Vec<_>>(), 2);
        assert!(dist(&x, &[0.2, -0.3]) <= 1e-9);
        assert!(matches!(convex_decompose(&[2.0, 0.0], &square, 1e-9), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn decomposition_of_boundary_target() {
        let pts = gaussian_points(300, 6, 4);
        let vertex_mid: Vec<f64> = pts[0].iter().zip(&pts[1]).map(|(a, b)| 0.5 * (a + b)).collect();
        let hull_interior: Vec<f64> =
            pts.iter().take(50).fold(vec![0.0; 6], |acc, p| acc.iter().zip(p).map(|(a, b)| a + b / 50.0).collect());
        for t in [vertex_mid, hull_interior] {
            if let Ok(lambda) = convex_decompose(&t, &pts, 1e-9) {
                assert!(lambda.iter().filter(|&&l| l > 0.0).count() <= 7);
                let x = combine(&lambda, &pts.iter().map(|p| p.as_slice()).collect::<Vec<_>>(), 6);
                assert!(dist(&x, &t) <= 1e-9);
            } else {
                panic!("target lies in the hull");
            }
        }
    }

    #[test]
    fn noise_measure_certificate() {
        let mut rng = RngStream::new(21, 0);
        let (d, m) = (12, 6);
        let psi = FeatureMap::random_linear(m, d, &mut rng);
        let probes = default_probes(d, m, &mut rng).unwrap();
        let nm = build_noise_measure(&psi, &probes, &mut rng).unwrap();
        assert!(nm.certificate.passed, "{:?}", nm.certificate);
        assert!(nm.certificate.min_abs_mass >= 1.0 / (m as f64).powf(1.5) - 1e-6);
        let total: f64 = nm.measure.atoms().iter().map(|a| a.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(nm.measure.atoms().len() <= 2 * m * (m + 1));
        let csv = nm.measure.to_csv().unwrap();
        assert!(csv.starts_with("x0,x1,"));
        let back = WeightedAtomMeasure::from_csv(&csv).unwrap();
        assert_eq!(back.atoms().len(), nm.measure.atoms().len());
    }

    #[test]
    fn degenerate_feature_map_fails_to_span() {
        let mut rng = RngStream::new(2, 0);
        let psi = FeatureMap::new(vec![vec![1.0, 0.0, 0.0], vec![2.0, 0.0, 0.0]]).unwrap();
        let probes = default_probes(3, 2, &mut rng).unwrap();
        assert!(matches!(build_noise_measure(&psi, &probes, &mut rng), Err(Error::SpanFailure { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn interior_points_decompose(seed in any::<u64>(), m in 2usize..6) {
            let pts = gaussian_points(40, m, seed);
            let mut rng = RngStream::new(seed ^ 7, 1);
            let w: Vec<f64> = (0..40).map(|_| rng.uniform()).collect();
            let total: f64 = w.iter().sum();
            let t = combine(&w.iter().map(|v| v / total).collect::<Vec<_>>(), &pts.iter().map(|p| p.as_slice()).collect::<Vec<_>>(), m);
            let lambda = convex_decompose(&t, &pts, 1e-9).unwrap();
            prop_assert!(lambda.iter().all(|&l| l >= 0.0));
            prop_assert!((lambda.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(lambda.iter().filter(|&&l| l > 0.0).count() <= m + 1);
            let x = combine(&lambda, &pts.iter().map(|p| p.as_slice()).collect::<Vec<_>>(), m);
            prop_assert!(dist(&x, &t) <= 1e-9);
        }
    }
}
