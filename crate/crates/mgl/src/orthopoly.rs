//! Gegenbauer-normalized Legendre polynomials `P_{d,n}` (with `P_{d,n}(1) = 1`),
//! Chebyshev polynomials, and the pointwise, tail and band-difference bounds
//! built on them.
//!
//! The three-term recursion is
//! `P_{d,n}(x) = [(2n+d-4) x P_{d,n-1}(x) - (n-1) P_{d,n-2}(x)] / (n+d-3)`.
//! The minus sign is the only one compatible with `P_{d,n}(1) = 1` and with
//! the ordinary Legendre polynomials at `d = 3`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Result};

/// Highest degree accepted by the evaluators.
pub const MAX_DEGREE: usize = 512;

/// Nodes used for arcsine-measure norms; exact for polynomials of degree < 512.
pub const ARCSINE_QUADRATURE_NODES: usize = 256;

/// Half-width of the arcsine noise band.
pub const BAND_HALF_WIDTH: f64 = 0.125;

const DOMAIN_SLACK: f64 = 1e-12;

fn check_unit_interval(t: f64) -> Result<f64> {
    if !t.is_finite() || t.abs() > 1.0 + DOMAIN_SLACK {
        return domain(format!("argument {t} outside [-1, 1]"));
    }
    Ok(t.clamp(-1.0, 1.0))
}

fn check_degree(n: usize) -> Result<()> {
    if n > MAX_DEGREE {
        return domain(format!("degree {n} exceeds cap {MAX_DEGREE}"));
    }
    Ok(())
}

fn recurrence(d: usize, n: usize, t: f64, lower_sign: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let df = d as f64;
    let (mut prev, mut cur) = (1.0, t);
    for k in 2..=n {
        let kf = k as f64;
        let next = ((2.0 * kf + df - 4.0) * t * cur + lower_sign * (kf - 1.0) * prev) / (kf + df - 3.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// `P_{d,n}(t)`.
pub fn legendre_eval(d: usize, n: usize, t: f64) -> Result<f64> {
    if d < 2 {
        return domain(format!("dimension {d} < 2"));
    }
    check_degree(n)?;
    let t = check_unit_interval(t)?;
    Ok(recurrence(d, n, t, -1.0))
}

/// `P_{d,0}(t), ..., P_{d,nmax}(t)` in one pass.
pub fn legendre_all(d: usize, nmax: usize, t: f64) -> Result<Vec<f64>> {
    if d < 2 {
        return domain(format!("dimension {d} < 2"));
    }
    check_degree(nmax)?;
    let t = check_unit_interval(t)?;
    Ok(legendre_table(d, nmax, t))
}

pub(crate) fn legendre_table(d: usize, nmax: usize, t: f64) -> Vec<f64> {
    let df = d as f64;
    let mut out = Vec::with_capacity(nmax + 1);
    out.push(1.0);
    if nmax >= 1 {
        out.push(t);
    }
    for k in 2..=nmax {
        let kf = k as f64;
        let v = ((2.0 * kf + df - 4.0) * t * out[k - 1] - (kf - 1.0) * out[k - 2]) / (kf + df - 3.0);
        out.push(v);
    }
    out
}

/// The recursion with `+` on the lower term. Kept only as a mutation fixture
/// for the verification suites; it is not a family of orthogonal polynomials.
#[doc(hidden)]
pub fn legendre_eval_flipped_sign(d: usize, n: usize, t: f64) -> f64 {
    recurrence(d, n, t, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChebyshevKind {
    First,
    Second,
}

/// `T_n(t)` or `U_n(t)`.
pub fn chebyshev_eval(kind: ChebyshevKind, n: usize, t: f64) -> Result<f64> {
    check_degree(n)?;
    let t = check_unit_interval(t)?;
    let first = match kind {
        ChebyshevKind::First => t,
        ChebyshevKind::Second => 2.0 * t,
    };
    if n == 0 {
        return Ok(1.0);
    }
    let (mut prev, mut cur) = (1.0, first);
    for _ in 2..=n {
        let next = 2.0 * t * cur - prev;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// The three candidate upper bounds on `|P_{d,n}(t)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundBranches {
    /// `Γ((d-1)/2)/√π · [4/(n(1-t²))]^{(d-2)/2}`.
    pub decay: f64,
    /// `(n/(n+d-2) + 2|t|)^{n/2}`.
    pub power: f64,
    /// `√∏_{i≤n}(i/(i+d-2) + 2|t|)`, present when `n/(n+d-2) + 2|t| ≤ 1`.
    pub product: Option<f64>,
}

impl BoundBranches {
    pub fn min(&self) -> f64 {
        let m = self.decay.min(self.power);
        self.product.map_or(m, |p| m.min(p))
    }
}

fn check_bound_domain(d: usize, n: usize, t: f64) -> Result<()> {
    if d < 5 {
        return domain(format!("dimension {d} < 5"));
    }
    if n < 1 {
        return domain("degree must be at least 1");
    }
    check_degree(n)?;
    if !t.is_finite() || t.abs() >= 1.0 {
        return domain(format!("|t| = {} must be < 1", t.abs()));
    }
    Ok(())
}

pub fn legendre_bound_branches(d: usize, n: usize, t: f64) -> Result<BoundBranches> {
    check_bound_domain(d, n, t)?;
    let (df, nf, at) = (d as f64, n as f64, t.abs());
    let half = (df - 2.0) / 2.0;
    let log_decay =
        ln_gamma((df - 1.0) / 2.0) - 0.5 * std::f64::consts::PI.ln() + half * (4.0 / (nf * (1.0 - t * t))).ln();
    let base = nf / (nf + df - 2.0) + 2.0 * at;
    let power = base.powf(nf / 2.0);
    let product = (base <= 1.0).then(|| {
        let log_prod: f64 = (1..=n)
            .map(|i| {
                let i = i as f64;
                (i / (i + df - 2.0) + 2.0 * at).ln()
            })
            .sum();
        (0.5 * log_prod).exp()
    });
    Ok(BoundBranches { decay: log_decay.exp(), power, product })
}

/// Pointwise upper bound on `|P_{d,n}(t)|` for `d ≥ 5`, `n ≥ 1`, `|t| < 1`.
pub fn legendre_bound(d: usize, n: usize, t: f64) -> Result<f64> {
    Ok(legendre_bound_branches(d, n, t)?.min())
}

/// Constants of the tail estimate `Σ_{n≥K} |P_{d,n}(t)| ≤ r^K/(1-r) + E·s^{d-2}`
/// on `|t| ≤ 1/8`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailConstants {
    pub e: f64,
    pub r: f64,
    pub s: f64,
}

impl TailConstants {
    pub fn pinned() -> Self {
        Self { e: 12.0, r: 0.75f64.sqrt(), s: (4.07 / (2.0 * std::f64::consts::E)).sqrt() }
    }

    pub fn tail(&self, k: usize, d: usize) -> f64 {
        self.r.powi(k as i32) / (1.0 - self.r) + self.e * self.s.powi(d as i32 - 2)
    }
}

impl Default for TailConstants {
    fn default() -> Self {
        Self::pinned()
    }
}

/// Upper bound on `Σ_{n≥K} |P_{d,n}(t)|` valid for `|t| ≤ 1/8`.
pub fn legendre_tail_bound(k: usize, d: usize) -> Result<f64> {
    if d < 5 {
        return domain(format!("dimension {d} < 5"));
    }
    if k < 1 {
        return domain("cutoff K must be at least 1");
    }
    Ok(TailConstants::pinned().tail(k, d))
}

/// `f(t) = Σ α_n P_{d,n}(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyCoeffs {
    pub d: usize,
    pub alpha: Vec<f64>,
}

impl PolyCoeffs {
    pub fn new(d: usize, alpha: Vec<f64>) -> Result<Self> {
        if d < 2 {
            return domain(format!("dimension {d} < 2"));
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return domain("non-finite coefficient");
        }
        if alpha.len() > MAX_DEGREE + 1 {
            return domain(format!("degree {} exceeds cap {MAX_DEGREE}", alpha.len() - 1));
        }
        Ok(Self { d, alpha })
    }

    pub fn degree(&self) -> usize {
        self.alpha.len().saturating_sub(1)
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        let t = check_unit_interval(t)?;
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> f64 {
        if self.alpha.is_empty() {
            return 0.0;
        }
        legendre_table(self.d, self.degree(), t).iter().zip(&self.alpha).map(|(p, a)| p * a).sum()
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.alpha.iter().fold(0.0, |m, a| m.max(a.abs()))
    }
}

/// Gauss–Chebyshev nodes for the arcsine measure on `[-1/8, 1/8]`; every node
/// carries weight `1/n`.
pub fn arcsine_nodes(n: usize) -> Vec<f64> {
    let nf = n as f64;
    (1..=n).map(|k| BAND_HALF_WIDTH * ((2.0 * k as f64 - 1.0) * std::f64::consts::PI / (2.0 * nf)).cos()).collect()
}

/// `∫ |f| dμ` for the arcsine probability measure on the noise band.
pub fn arcsine_l1_norm(f: impl Fn(f64) -> f64) -> f64 {
    let nodes = arcsine_nodes(ARCSINE_QUADRATURE_NODES);
    nodes.iter().map(|&x| f(x).abs()).sum::<f64>() / nodes.len() as f64
}

/// `(∫ f² dμ)^{1/2}` for the arcsine probability measure on the noise band.
pub fn arcsine_l2_norm(f: impl Fn(f64) -> f64) -> f64 {
    let nodes = arcsine_nodes(ARCSINE_QUADRATURE_NODES);
    (nodes.iter().map(|&x| f(x).powi(2)).sum::<f64>() / nodes.len() as f64).sqrt()
}

/// The n-th orthonormal polynomial of the arcsine measure on `[-1/8, 1/8]`.
pub fn arcsine_orthopoly_eval(n: usize, x: f64) -> Result<f64> {
    if !x.is_finite() || x.abs() > BAND_HALF_WIDTH + DOMAIN_SLACK {
        return domain(format!("{x} outside the band [-1/8, 1/8]"));
    }
    if n == 0 {
        return Ok(1.0);
    }
    let u = (8.0 * x).clamp(-1.0, 1.0);
    Ok(std::f64::consts::SQRT_2 * chebyshev_eval(ChebyshevKind::First, n, u)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapBound {
    pub gap: f64,
    pub bound: f64,
}

impl GapBound {
    pub fn holds(&self) -> bool {
        self.gap <= self.bound
    }
}

/// The band-difference bound for `f = Σ α_n P_{d,n}` at `±gamma` with cutoff `k`:
/// `|f(γ) - f(-γ)| ≤ 32γK^{3.5}‖f‖_{1,μ} + (32γK^{3.5}+2)·max|α_n|·tail(K, d)`.
pub fn changes_slowly_gap(f: &PolyCoeffs, gamma: f64, k: usize) -> Result<GapBound> {
    if f.d < 5 {
        return domain(format!("dimension {} < 5", f.d));
    }
    if !(gamma > 0.0 && gamma < BAND_HALF_WIDTH) {
        return domain(format!("gamma {gamma} outside (0, 1/8)"));
    }
    let tail = legendre_tail_bound(k, f.d)?;
    let gap = (f.eval_unchecked(gamma) - f.eval_unchecked(-gamma)).abs();
    let l1 = arcsine_l1_norm(|x| f.eval_unchecked(x));
    Ok(GapBound { gap, bound: slow_change_rhs(gamma, k, l1, f.max_abs_coeff(), tail) })
}

pub(crate) fn slow_change_rhs(gamma: f64, k: usize, l1: f64, coeff_bound: f64, tail: f64) -> f64 {
    let lead = 32.0 * gamma * (k as f64).powf(3.5);
    lead * l1 + (lead + 2.0) * coeff_bound * tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn legendre_examples() {
        assert_eq!(legendre_eval(7, 0, 0.37).unwrap(), 1.0);
        assert!(close(legendre_eval(5, 9, 1.0).unwrap(), 1.0, 1e-12));
        assert!(close(legendre_eval(3, 2, 0.5).unwrap(), -0.125, 1e-15));
    }

    #[test]
    fn ordinary_legendre_at_d3() {
        for &t in &[-0.9f64, -0.3, 0.0, 0.41, 0.77] {
            let p3 = (5.0 * t * t * t - 3.0 * t) / 2.0;
            let p4 = (35.0 * t.powi(4) - 30.0 * t * t + 3.0) / 8.0;
            assert!(close(legendre_eval(3, 3, t).unwrap(), p3, 1e-14));
            assert!(close(legendre_eval(3, 4, t).unwrap(), p4, 1e-14));
        }
    }

    #[test]
    fn d2_is_chebyshev() {
        for n in 0..12 {
            for &t in &[-0.8, 0.1, 0.6] {
                let a = legendre_eval(2, n, t).unwrap();
                let b = chebyshev_eval(ChebyshevKind::First, n, t).unwrap();
                assert!(close(a, b, 1e-13));
            }
        }
    }

    #[test]
    fn domain_errors() {
        assert!(legendre_eval(3, 2, 1.0 + 1e-9).is_err());
        assert!(legendre_eval(1, 2, 0.0).is_err());
        assert!(legendre_eval(3, 2, 1.0 + 1e-13).is_ok());
        assert!(chebyshev_eval(ChebyshevKind::First, 2, -1.5).is_err());
        assert!(legendre_bound(4, 2, 0.0).is_err());
        assert!(legendre_bound(6, 2, 1.0).is_err());
        assert!(legendre_tail_bound(10, 4).is_err());
        assert!(arcsine_orthopoly_eval(1, 0.2).is_err());
    }

    #[test]
    fn chebyshev_examples() {
        assert!(close(chebyshev_eval(ChebyshevKind::First, 3, 0.5).unwrap(), -1.0, 1e-15));
        assert!(close(chebyshev_eval(ChebyshevKind::Second, 2, 0.5).unwrap(), 0.0, 1e-15));
        assert_eq!(chebyshev_eval(ChebyshevKind::First, 0, 0.9).unwrap(), 1.0);
        assert_eq!(chebyshev_eval(ChebyshevKind::Second, 0, 0.9).unwrap(), 1.0);
    }

    #[test]
    fn bound_examples() {
        let b = legendre_bound_branches(6, 4, 0.0).unwrap();
        let product = ((1.0 / 5.0) * (2.0 / 6.0) * (3.0 / 7.0) * (4.0 / 8.0f64)).sqrt();
        assert!(close(b.product.unwrap(), product, 1e-14));
        assert!(close(product, 0.1195, 1e-4));
        assert!(close(b.power, 0.25, 1e-15));
        assert!(close(legendre_bound(6, 4, 0.0).unwrap(), product, 1e-14));
    }

    #[test]
    fn tail_examples() {
        let want =
            (1.0 / (1.0 - 0.75f64.sqrt())) * 0.75f64.powi(5) + 12.0 * (4.07 / (2.0 * std::f64::consts::E)).powi(4);
        assert!(close(legendre_tail_bound(10, 10).unwrap(), want, 1e-12));
        assert!(close(want, 5.5414, 1e-3));
        assert!(legendre_tail_bound(400, 400).unwrap() < 1e-20);
    }

    #[test]
    fn tail_bound_dominates_partial_sums() {
        let bound = legendre_tail_bound(5, 6).unwrap();
        for i in 0..=100 {
            let t = -0.125 + 0.25 * i as f64 / 100.0;
            let p = legendre_all(6, 400, t).unwrap();
            let partial: f64 = p[5..].iter().map(|v| v.abs()).sum();
            assert!(partial <= bound, "t={t}: {partial} > {bound}");
        }
    }

    #[test]
    fn changes_slowly_examples() {
        let constant = PolyCoeffs::new(8, vec![1.0]).unwrap();
        assert_eq!(changes_slowly_gap(&constant, 0.01, 5).unwrap().gap, 0.0);
        let linear = PolyCoeffs::new(8, vec![0.0, 1.0]).unwrap();
        let g = changes_slowly_gap(&linear, 0.01, 5).unwrap();
        assert!(close(g.gap, 0.02, 1e-15));
        assert!(g.holds());
        assert!(changes_slowly_gap(&linear, 0.2, 5).is_err());
        assert!(changes_slowly_gap(&linear, 0.0, 5).is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)] // five-digit tabulated example
    fn arcsine_examples_and_orthonormality() {
        assert_eq!(arcsine_orthopoly_eval(0, 0.05).unwrap(), 1.0);
        assert!(close(arcsine_orthopoly_eval(1, 1.0 / 16.0).unwrap(), 0.70711, 1e-5));
        let nodes = arcsine_nodes(ARCSINE_QUADRATURE_NODES);
        for n in 0..12 {
            for m in 0..12 {
                let ip: f64 = nodes
                    .iter()
                    .map(|&x| arcsine_orthopoly_eval(n, x).unwrap() * arcsine_orthopoly_eval(m, x).unwrap())
                    .sum::<f64>()
                    / nodes.len() as f64;
                let want = if n == m { 1.0 } else { 0.0 };
                assert!(close(ip, want, 1e-8), "({n},{m}) -> {ip}");
            }
        }
    }

    /// `∫_0^π g(cos θ) sin^{d-2}θ dθ` by the midpoint rule; independent of the
    /// Gauss rules used elsewhere.
    fn gegenbauer_integral(d: usize, g: impl Fn(f64) -> f64) -> f64 {
        let n = 4000;
        let h = std::f64::consts::PI / n as f64;
        (0..n)
            .map(|i| {
                let th = (i as f64 + 0.5) * h;
                g(th.cos()) * th.sin().powi(d as i32 - 2)
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn orthogonality() {
        for &d in &[3usize, 5, 8, 12] {
            for n in 0..10 {
                for m in 0..n {
                    let ip =
                        gegenbauer_integral(d, |t| legendre_eval(d, n, t).unwrap() * legendre_eval(d, m, t).unwrap());
                    assert!(ip.abs() < 1e-6, "d={d} ({n},{m}) -> {ip}");
                }
            }
        }
    }

    #[test]
    fn chebyshev_derivative_identity() {
        for n in 1..=20 {
            for i in 0..64 {
                let t = -0.95 + 1.9 * (i as f64 + 0.5) / 64.0;
                let h = 1e-5;
                let fd = (chebyshev_eval(ChebyshevKind::First, n, t + h).unwrap()
                    - chebyshev_eval(ChebyshevKind::First, n, t - h).unwrap())
                    / (2.0 * h);
                let exact = n as f64 * chebyshev_eval(ChebyshevKind::Second, n - 1, t).unwrap();
                assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1.0), "n={n} t={t}");
            }
        }
    }

    proptest! {
        #[test]
        fn legendre_sup_norm_is_one(d in 2usize..16, n in 0usize..60, t in -1.0f64..=1.0) {
            let v = legendre_eval(d, n, t).unwrap();
            prop_assert!(v.abs() <= 1.0 + 1e-9);
            prop_assert!((legendre_eval(d, n, 1.0).unwrap() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn bound_dominates(d in 5usize..20, n in 1usize..60, t in -0.999f64..0.999) {
            let v = legendre_eval(d, n, t).unwrap().abs();
            prop_assert!(legendre_bound(d, n, t).unwrap() >= v - 1e-12);
        }

        #[test]
        fn second_kind_sup_norm(n in 0usize..40, t in -1.0f64..=1.0) {
            let v = chebyshev_eval(ChebyshevKind::Second, n, t).unwrap();
            prop_assert!(v.abs() <= n as f64 + 1.0 + 1e-9);
        }

        #[test]
        fn l1_l2_lemma(coeffs in prop::collection::vec(-5.0f64..5.0, 1..20)) {
            let k = coeffs.len();
            let f = |x: f64| -> f64 {
                coeffs.iter().enumerate().map(|(n, c)| c * arcsine_orthopoly_eval(n, x).unwrap()).sum()
            };
            let l1 = arcsine_l1_norm(f);
            let l2 = arcsine_l2_norm(f);
            prop_assert!(l2 <= (k as f64).sqrt() * std::f64::consts::SQRT_2 * l1 + 1e-12);
        }
    }
}
