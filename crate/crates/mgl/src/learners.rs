//! Surrogate losses, the norm-constrained kernel program, the finite
//! dimensional program, evaluation metrics and a brute-force 1-D oracle.
//!
//! Both programs minimize `Σ w_i l(y_i (f(x_i) + b))` over a norm ball times
//! a bias interval. The solver runs accelerated projected gradient (with
//! restarts and backtracking) on the Moreau envelope of the loss and
//! certifies its answer with the Fenchel dual of the unsmoothed problem:
//! for any `u_i ∈ dom l*`,
//! `OPT ≥ -Σ w_i l*(u_i) - C‖Σ w_i u_i y_i k(·,x_i)‖ - B|Σ w_i u_i y_i|`.

use std::f64::consts::LN_2;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::kernels::{fast_dot, gram, FeatureMap, Gram, KernelForm, KernelSpec};
use crate::measures::{in_margin, LabeledPoint};
use crate::sphere::{dot, UnitVector};

/// Bias box for the logistic loss, whose optimal bias is not bounded by a kink.
pub const LOGISTIC_BIAS_BOX: f64 = 10.0;

const GRID_LO: f64 = -3.0;
const GRID_HI: f64 = 3.0;
const GRID_POINTS: usize = 1001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum SurrogateLoss {
    /// `(1-x)₊`.
    Hinge,
    /// `(1-x)²`.
    Squared,
    /// `|1-x|`.
    Absolute,
    /// `log₂(1+e^{-x})`.
    Logistic,
    /// `1-x` up to `x = 1/c`, then the plateau `1-1/c`.
    MarginLoss { gamma: f64, c: f64 },
    /// `(1-cx)₊`, the plateau-shifted and rescaled margin loss.
    TruncatedMargin { gamma: f64, c: f64 },
}

/// `κ₀ + s·(a - x)₊`.
struct KinkShape {
    offset: f64,
    slope: f64,
    kink: f64,
}

impl SurrogateLoss {
    pub fn from_name(name: &str, gamma: f64, c: f64) -> Result<Self> {
        let loss = match name {
            "hinge" => Self::Hinge,
            "squared" => Self::Squared,
            "absolute" => Self::Absolute,
            "logistic" => Self::Logistic,
            "margin_loss" => Self::MarginLoss { gamma, c },
            "truncated_margin" => Self::TruncatedMargin { gamma, c },
            other => return Err(Error::Usage(format!("unknown loss '{other}'"))),
        };
        loss.validate()?;
        Ok(loss)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::MarginLoss { c, .. } | Self::TruncatedMargin { c, .. } if !(*c >= 1.0 && c.is_finite()) => {
                Err(Error::InvalidSpec(format!("margin losses need C(gamma) >= 1, got {c}")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Hinge => "hinge",
            Self::Squared => "squared",
            Self::Absolute => "absolute",
            Self::Logistic => "logistic",
            Self::MarginLoss { .. } => "margin_loss",
            Self::TruncatedMargin { .. } => "truncated_margin",
        }
    }

    fn kink_shape(&self) -> Option<KinkShape> {
        match *self {
            Self::Hinge => Some(KinkShape { offset: 0.0, slope: 1.0, kink: 1.0 }),
            Self::MarginLoss { c, .. } => Some(KinkShape { offset: 1.0 - 1.0 / c, slope: 1.0, kink: 1.0 / c }),
            Self::TruncatedMargin { c, .. } => Some(KinkShape { offset: 0.0, slope: c, kink: 1.0 / c }),
            _ => None,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        if let Some(k) = self.kink_shape() {
            return k.offset + k.slope * (k.kink - x).max(0.0);
        }
        match self {
            Self::Squared => (1.0 - x).powi(2),
            Self::Absolute => (1.0 - x).abs(),
            Self::Logistic => softplus(-x) / LN_2,
            _ => unreachable!("kink losses handled above"),
        }
    }

    /// Right derivative.
    pub fn subgradient(&self, x: f64) -> f64 {
        if let Some(k) = self.kink_shape() {
            return if x < k.kink { -k.slope } else { 0.0 };
        }
        match self {
            Self::Squared => -2.0 * (1.0 - x),
            Self::Absolute => {
                if x < 1.0 {
                    -1.0
                } else {
                    1.0
                }
            }
            Self::Logistic => -1.0 / (LN_2 * (1.0 + x.exp())),
            _ => unreachable!("kink losses handled above"),
        }
    }

    pub fn d_plus_at_0(&self) -> f64 {
        self.subgradient(0.0)
    }

    /// Global Lipschitz constant, `None` when unbounded.
    pub fn lipschitz(&self) -> Option<f64> {
        match self {
            Self::Squared => None,
            Self::Logistic => Some(1.0 / LN_2),
            Self::TruncatedMargin { c, .. } => Some(*c),
            _ => Some(1.0),
        }
    }

    /// Midpoint convexity on a grid over `[-3, 3]`.
    pub fn is_convex_on_grid(&self) -> bool {
        let h = (GRID_HI - GRID_LO) / (GRID_POINTS - 1) as f64;
        (1..GRID_POINTS - 1).all(|i| {
            let x = GRID_LO + i as f64 * h;
            self.value(x) <= 0.5 * (self.value(x - h) + self.value(x + h)) + 1e-12
        })
    }

    /// `l(x) ≥ 1[x ≤ 0]` on a grid over `[-3, 3]`.
    pub fn dominates_zero_one_on_grid(&self) -> bool {
        let h = (GRID_HI - GRID_LO) / (GRID_POINTS - 1) as f64;
        (0..GRID_POINTS).all(|i| {
            let x = GRID_LO + i as f64 * h;
            self.value(x) >= if x <= 0.0 { 1.0 } else { 0.0 } - 1e-12
        })
    }

    /// Bias interval that contains an optimal bias whenever `|f| ≤ f_max` on
    /// the data: beyond `kink + f_max` every positive point is on the flat or
    /// increasing side, so moving the bias back never hurts.
    fn bias_box(&self, f_max: f64) -> f64 {
        match self.kink_shape() {
            Some(k) => k.kink + f_max,
            None if matches!(self, Self::Logistic) => LOGISTIC_BIAS_BOX,
            None => 1.0 + f_max,
        }
    }

    /// Moreau parameter for which the envelope is within `eps/4` of the loss.
    fn smoothing(&self, eps: f64) -> f64 {
        match self {
            Self::Squared | Self::Logistic => 0.0,
            _ => {
                let s = self.lipschitz().unwrap_or(1.0);
                eps / (2.0 * s * s)
            }
        }
    }

    /// Curvature of the (smoothed) loss.
    fn curvature(&self, mu: f64) -> f64 {
        match self {
            Self::Squared => 2.0,
            Self::Logistic => 1.0 / (4.0 * LN_2),
            _ => 1.0 / mu,
        }
    }

    /// Moreau envelope with parameter `mu` and its derivative.
    fn smoothed(&self, x: f64, mu: f64) -> (f64, f64) {
        if let Some(k) = self.kink_shape() {
            let r = k.kink - x;
            return if r <= 0.0 {
                (k.offset, 0.0)
            } else if r < k.slope * mu {
                (k.offset + r * r / (2.0 * mu), -r / mu)
            } else {
                (k.offset + k.slope * r - 0.5 * k.slope * k.slope * mu, -k.slope)
            };
        }
        match self {
            Self::Absolute => {
                let r = 1.0 - x;
                if r.abs() <= mu {
                    (r * r / (2.0 * mu), -r / mu)
                } else {
                    (r.abs() - 0.5 * mu, -r.signum())
                }
            }
            _ => (self.value(x), self.subgradient(x)),
        }
    }

    /// Convex conjugate `l*(u)` on its domain (arguments are clamped into it).
    fn conjugate(&self, u: f64) -> f64 {
        if let Some(k) = self.kink_shape() {
            let u = u.clamp(-k.slope, 0.0);
            return k.kink * u - k.offset;
        }
        match self {
            Self::Absolute => u.clamp(-1.0, 1.0),
            Self::Squared => u + 0.25 * u * u,
            Self::Logistic => {
                let p = (-u * LN_2).clamp(0.0, 1.0);
                (xlogx(p) + xlogx(1.0 - p)) / LN_2
            }
            _ => unreachable!("kink losses handled above"),
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn xlogx(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        p * p.ln()
    }
}

pub fn make_loss(name: &str, gamma: f64, c: f64) -> Result<SurrogateLoss> {
    SurrogateLoss::from_name(name, gamma, c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Target certified optimality gap.
    pub eps_opt: f64,
    pub max_iters: usize,
    /// Reserved for stochastic variants; the solver is deterministic.
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { eps_opt: 1e-3, max_iters: 100_000, seed: 0 }
    }
}

impl SolverOptions {
    /// `eps_opt = √γ`.
    pub fn for_gamma(gamma: f64) -> Self {
        Self { eps_opt: gamma.sqrt(), ..Self::default() }
    }
}

/// Primal value of the returned iterate and the best dual lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapCertificate {
    pub objective: f64,
    pub lower_bound: f64,
    pub gap: f64,
    pub eps_opt: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Access to the linear part `θ ↦ (f_θ(x_i))_i` of a program.
trait Param {
    fn p(&self) -> usize;
    fn scores(&self, theta: &[f64]) -> Vec<f64>;
    /// Parameter-space gradient of `θ ↦ Σ β_i f_θ(x_i)` in the program metric.
    fn grad(&self, beta: &[f64]) -> Vec<f64>;
    /// Squared metric norm of `θ` whose scores are `s`.
    fn metric_sq(&self, theta: &[f64], s: &[f64]) -> f64;
    /// Projection onto the ball; keeps `s` equal to `scores(θ)`.
    fn project(&self, theta: &mut [f64], s: &mut [f64]);
    /// Support function of the ball at the functional `β` (gradient `g`, scores `sg`).
    fn support(&self, beta: &[f64], g: &[f64], sg: &[f64]) -> f64;
    /// `max_i |f_θ(x_i)|` over the ball.
    fn score_bound(&self) -> f64;
}

struct KernelParam<'a> {
    gram: &'a Gram,
    radius: f64,
}

impl Param for KernelParam<'_> {
    fn p(&self) -> usize {
        self.gram.n()
    }

    fn scores(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.gram.n()];
        self.gram.matvec(theta, &mut out);
        out
    }

    fn grad(&self, beta: &[f64]) -> Vec<f64> {
        beta.to_vec()
    }

    fn metric_sq(&self, theta: &[f64], s: &[f64]) -> f64 {
        fast_dot(theta, s).max(0.0)
    }

    fn project(&self, theta: &mut [f64], s: &mut [f64]) {
        let norm = self.metric_sq(theta, s).sqrt();
        if norm > self.radius {
            let f = self.radius / norm;
            theta.iter_mut().for_each(|v| *v *= f);
            s.iter_mut().for_each(|v| *v *= f);
        }
    }

    fn support(&self, beta: &[f64], _g: &[f64], sg: &[f64]) -> f64 {
        self.radius * fast_dot(beta, sg).max(0.0).sqrt()
    }

    fn score_bound(&self) -> f64 {
        let diag = (0..self.gram.n()).map(|i| self.gram.get(i, i)).fold(0.0, f64::max);
        self.radius * diag.max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    L2Ball(f64),
    L1Ball(f64),
}

impl Constraint {
    pub fn radius(&self) -> f64 {
        match *self {
            Constraint::L2Ball(r) | Constraint::L1Ball(r) => r,
        }
    }

    pub fn contains(&self, w: &[f64], slack: f64) -> bool {
        match *self {
            Constraint::L2Ball(r) => dot(w, w).sqrt() <= r + slack,
            Constraint::L1Ball(r) => w.iter().map(|v| v.abs()).sum::<f64>() <= r + slack,
        }
    }
}

struct FiniteParam<'a> {
    /// Row-major `n × m` feature matrix.
    features: &'a [f64],
    n: usize,
    m: usize,
    constraint: Constraint,
}

impl Param for FiniteParam<'_> {
    fn p(&self) -> usize {
        self.m
    }

    fn scores(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(&self.features[i * self.m..(i + 1) * self.m], theta)).collect()
    }

    fn grad(&self, beta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.m];
        for (i, b) in beta.iter().enumerate() {
            if *b != 0.0 {
                for (gj, fj) in g.iter_mut().zip(&self.features[i * self.m..(i + 1) * self.m]) {
                    *gj += b * fj;
                }
            }
        }
        g
    }

    fn metric_sq(&self, theta: &[f64], _s: &[f64]) -> f64 {
        dot(theta, theta)
    }

    fn project(&self, theta: &mut [f64], s: &mut [f64]) {
        match self.constraint {
            Constraint::L2Ball(r) => {
                let norm = dot(theta, theta).sqrt();
                if norm > r {
                    let f = r / norm;
                    theta.iter_mut().for_each(|v| *v *= f);
                    s.iter_mut().for_each(|v| *v *= f);
                }
            }
            Constraint::L1Ball(r) => {
                if theta.iter().map(|v| v.abs()).sum::<f64>() > r {
                    project_l1(theta, r);
                    s.copy_from_slice(&self.scores(theta));
                }
            }
        }
    }

    fn support(&self, _beta: &[f64], g: &[f64], _sg: &[f64]) -> f64 {
        match self.constraint {
            Constraint::L2Ball(r) => r * dot(g, g).sqrt(),
            Constraint::L1Ball(r) => r * g.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        }
    }

    fn score_bound(&self) -> f64 {
        let r = self.constraint.radius();
        (0..self.n)
            .map(|i| {
                let row = &self.features[i * self.m..(i + 1) * self.m];
                match self.constraint {
                    Constraint::L2Ball(_) => r * dot(row, row).sqrt(),
                    Constraint::L1Ball(_) => r * row.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Euclidean projection onto `{‖w‖₁ ≤ r}` by sorting.
pub fn project_l1(w: &mut [f64], r: f64) {
    if r <= 0.0 {
        w.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut mags: Vec<f64> = w.iter().map(|v| v.abs()).collect();
    if mags.iter().sum::<f64>() <= r {
        return;
    }
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (j, m) in mags.iter().enumerate() {
        cum += m;
        let t = (cum - r) / (j + 1) as f64;
        if *m > t {
            tau = t;
        }
    }
    for v in w.iter_mut() {
        *v = v.signum() * (v.abs() - tau).max(0.0);
    }
}

struct Solution {
    theta: Vec<f64>,
    bias: f64,
    certificate: GapCertificate,
}

struct Iterate {
    theta: Vec<f64>,
    s: Vec<f64>,
    b: f64,
}

fn axpy_iterate(x: &Iterate, prev: &Iterate, mom: f64) -> Iterate {
    let comb = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u + mom * (u - v)).collect();
    Iterate { theta: comb(&x.theta, &prev.theta), s: comb(&x.s, &prev.s), b: x.b + mom * (x.b - prev.b) }
}

fn solve<P: Param>(param: &P, y: &[f64], w: &[f64], loss: &SurrogateLoss, opts: &SolverOptions) -> Result<Solution> {
    let n = y.len();
    if !(opts.eps_opt > 0.0) {
        return domain("eps_opt must be positive");
    }
    let bias_box = loss.bias_box(param.score_bound());
    let mu = loss.smoothing(opts.eps_opt);
    let curv = loss.curvature(mu);
    let objective = |s: &[f64], b: f64, smooth: bool| -> f64 {
        (0..n)
            .map(|i| {
                let z = y[i] * (s[i] + b);
                w[i] * if smooth { loss.smoothed(z, mu).0 } else { loss.value(z) }
            })
            .sum()
    };

    let p = param.p();
    let zero = Iterate { theta: vec![0.0; p], s: vec![0.0; n], b: 0.0 };
    let mut best_obj = objective(&zero.s, 0.0, false);
    let mut best = (zero.theta.clone(), 0.0);
    let mut best_lb = f64::NEG_INFINITY;
    let mut x = zero;
    let mut x_prev = Iterate { theta: x.theta.clone(), s: x.s.clone(), b: x.b };
    let mut fx = objective(&x.s, x.b, true);
    let mut t = 1.0f64;
    let mut lip = curv * 1e-2;
    // Running averages of the dual multipliers (weights ∝ iteration).
    let mut avg_u = vec![0.0; n];
    let mut avg_g = vec![0.0; p];
    let mut avg_sg = vec![0.0; n];
    let mut avg_w = 0.0;
    let mut iterations = 0;

    let lower_bound = |u: &[f64], beta: &[f64], g: &[f64], sg: &[f64]| -> f64 {
        let conj: f64 = (0..n).map(|i| w[i] * loss.conjugate(u[i])).sum();
        let bias_term: f64 = beta.iter().sum::<f64>().abs();
        -conj - param.support(beta, g, sg) - bias_box * bias_term
    };

    while iterations < opts.max_iters && best_obj - best_lb > opts.eps_opt {
        iterations += 1;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let yk = axpy_iterate(&x, &x_prev, (t - 1.0) / t_next);

        let mut u = vec![0.0; n];
        let mut beta = vec![0.0; n];
        let mut f_y = 0.0;
        for i in 0..n {
            let (v, d) = loss.smoothed(y[i] * (yk.s[i] + yk.b), mu);
            f_y += w[i] * v;
            u[i] = d;
            beta[i] = w[i] * d * y[i];
        }
        let g = param.grad(&beta);
        let sg = param.scores(&g);
        let gb: f64 = beta.iter().sum();

        best_lb = best_lb.max(lower_bound(&u, &beta, &g, &sg));
        let k = iterations as f64;
        avg_w += k;
        let a = k / avg_w;
        for (m, v) in avg_u.iter_mut().zip(&u) {
            *m += a * (v - *m);
        }
        for (m, v) in avg_g.iter_mut().zip(&g) {
            *m += a * (v - *m);
        }
        for (m, v) in avg_sg.iter_mut().zip(&sg) {
            *m += a * (v - *m);
        }
        let avg_beta: Vec<f64> = (0..n).map(|i| w[i] * avg_u[i] * y[i]).collect();
        best_lb = best_lb.max(lower_bound(&avg_u, &avg_beta, &avg_g, &avg_sg));

        let next = loop {
            let mut theta: Vec<f64> = yk.theta.iter().zip(&g).map(|(a, b)| a - b / lip).collect();
            let mut s: Vec<f64> = yk.s.iter().zip(&sg).map(|(a, b)| a - b / lip).collect();
            let b = (yk.b - gb / lip).clamp(-bias_box, bias_box);
            param.project(&mut theta, &mut s);
            let f_new = objective(&s, b, true);
            let dtheta: Vec<f64> = theta.iter().zip(&yk.theta).map(|(a, b)| a - b).collect();
            let ds: Vec<f64> = s.iter().zip(&yk.s).map(|(a, b)| a - b).collect();
            let db = b - yk.b;
            let model = f_y + fast_dot(&beta, &ds) + gb * db + 0.5 * lip * (param.metric_sq(&dtheta, &ds) + db * db);
            if f_new <= model + 1e-12 * f_y.abs().max(1e-12) || lip > 1e18 {
                break (Iterate { theta, s, b }, f_new);
            }
            lip *= 2.0;
        };
        let (x_new, f_new) = next;
        let true_obj = objective(&x_new.s, x_new.b, false);
        if true_obj < best_obj {
            best_obj = true_obj;
            best = (x_new.theta.clone(), x_new.b);
        }
        if f_new > fx {
            // Function-value restart.
            t = 1.0;
            x_prev = Iterate { theta: x_new.theta.clone(), s: x_new.s.clone(), b: x_new.b };
        } else {
            t = t_next;
            x_prev = x;
        }
        x = x_new;
        fx = f_new;
    }
    let gap = (best_obj - best_lb).max(0.0);
    Ok(Solution {
        theta: best.0,
        bias: best.1,
        certificate: GapCertificate {
            objective: best_obj,
            lower_bound: best_lb,
            gap,
            eps_opt: opts.eps_opt,
            iterations,
            converged: gap <= opts.eps_opt,
        },
    })
}

fn normalized_weights(n: usize, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0 / n as f64; n]),
        Some(w) => {
            if w.len() != n || w.iter().any(|v| !(*v >= 0.0)) {
                return domain("sample weights must be nonnegative, one per point");
            }
            let total: f64 = w.iter().sum();
            if !(total > 0.0) {
                return domain("sample weights sum to zero");
            }
            Ok(w.iter().map(|v| v / total).collect())
        }
    }
}

fn check_data(data: &[LabeledPoint]) -> Result<usize> {
    if data.is_empty() {
        return domain("empty training set");
    }
    let d = data[0].x.dim();
    if data.iter().any(|p| p.x.dim() != d || (p.y != 1 && p.y != -1)) {
        return domain("training points need a common dimension and ±1 labels");
    }
    Ok(d)
}

/// Scoring shared by both model kinds.
pub trait Predictor {
    fn score(&self, x: &[f64]) -> f64;
    fn loss(&self) -> &SurrogateLoss;

    fn scores(&self, xs: &[&[f64]]) -> Vec<f64> {
        xs.iter().map(|x| self.score(x)).collect()
    }
}

/// `f = Σ α_i k(·, x_i) + b` with `‖Σ α_i k(·, x_i)‖ ≤ C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelModel {
    pub kernel: KernelSpec,
    pub loss: SurrogateLoss,
    pub support: Vec<UnitVector>,
    pub alpha: Vec<f64>,
    pub b: f64,
    #[serde(rename = "C")]
    pub c: f64,
    /// `√(αᵀGα)`.
    pub norm: f64,
    pub certificate: GapCertificate,
}

impl KernelModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Scores of many points through one matrix product per chunk.
    pub fn scores_batch(&self, xs: &[UnitVector]) -> Vec<f64> {
        if xs.is_empty() {
            return Vec::new();
        }
        if !self.kernel.is_zonal() {
            return xs.iter().map(|x| self.score(x.as_slice())).collect();
        }
        let d = self.support[0].dim();
        let ns = self.support.len();
        let sup = DMatrix::from_fn(d, ns, |r, c| self.support[c].as_slice()[r]);
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(512) {
            let q = DMatrix::from_fn(chunk.len(), d, |r, c| chunk[r].as_slice()[c]);
            let dots = q * &sup;
            for r in 0..chunk.len() {
                let mut acc = self.b;
                for c in 0..ns {
                    let kv = self.kernel.profile_value(dots[(r, c)].clamp(-1.0, 1.0)).unwrap_or(f64::NAN);
                    acc += self.alpha[c] * kv;
                }
                out.push(acc);
            }
        }
        out
    }
}

impl Predictor for KernelModel {
    fn score(&self, x: &[f64]) -> f64 {
        self.support.iter().zip(&self.alpha).map(|(s, a)| a * self.kernel.eval_unchecked(s.as_slice(), x)).sum::<f64>()
            + self.b
    }

    fn loss(&self) -> &SurrogateLoss {
        &self.loss
    }
}

/// `f = ⟨w, ψ(x)⟩ + b` with `w` in the constraint set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDimModel {
    pub feature_map: FeatureMap,
    pub constraint: Constraint,
    pub loss: SurrogateLoss,
    pub w: Vec<f64>,
    pub b: f64,
    pub certificate: GapCertificate,
}

impl Predictor for FiniteDimModel {
    fn score(&self, x: &[f64]) -> f64 {
        dot(&self.w, &self.feature_map.apply(x)) + self.b
    }

    fn loss(&self) -> &SurrogateLoss {
        &self.loss
    }
}

fn validate_radius(c: f64) -> Result<()> {
    if !(c >= 0.0 && c.is_finite()) {
        return domain(format!("norm bound {c} must be finite and nonnegative"));
    }
    Ok(())
}

/// Solves the kernel program and always returns the model; the certificate
/// says whether the target gap was reached.
pub fn solve_kernel_program(
    data: &[LabeledPoint],
    weights: Option<&[f64]>,
    kernel: &KernelSpec,
    loss: &SurrogateLoss,
    c: f64,
    opts: &SolverOptions,
) -> Result<KernelModel> {
    check_data(data)?;
    validate_radius(c)?;
    loss.validate()?;
    let w = normalized_weights(data.len(), weights)?;
    let points: Vec<&[f64]> = data.iter().map(|p| p.x.as_slice()).collect();
    let g = gram(kernel, &points)?;
    let y: Vec<f64> = data.iter().map(|p| p.y as f64).collect();
    let sol = solve(&KernelParam { gram: &g, radius: c }, &y, &w, loss, opts)?;
    let norm = g.quad_form(&sol.theta).max(0.0).sqrt();
    Ok(KernelModel {
        kernel: kernel.clone(),
        loss: *loss,
        support: data.iter().map(|p| p.x.clone()).collect(),
        alpha: sol.theta,
        b: sol.bias,
        c,
        norm,
        certificate: sol.certificate,
    })
}

/// [`solve_kernel_program`] that fails with `NonConvergence` when the
/// certified gap stays above `eps_opt`.
pub fn train_kernel_program(
    data: &[LabeledPoint],
    kernel: &KernelSpec,
    loss: &SurrogateLoss,
    c: f64,
    opts: &SolverOptions,
) -> Result<KernelModel> {
    let model = solve_kernel_program(data, None, kernel, loss, c, opts)?;
    require_converged(&model.certificate)?;
    Ok(model)
}

fn require_converged(cert: &GapCertificate) -> Result<()> {
    if !cert.converged {
        return Err(Error::NonConvergence { gap: cert.gap, eps: cert.eps_opt, iters: cert.iterations });
    }
    Ok(())
}

pub fn solve_finite_program(
    data: &[LabeledPoint],
    weights: Option<&[f64]>,
    feature_map: &FeatureMap,
    constraint: Constraint,
    loss: &SurrogateLoss,
    opts: &SolverOptions,
) -> Result<FiniteDimModel> {
    let d = check_data(data)?;
    validate_radius(constraint.radius())?;
    loss.validate()?;
    if feature_map.dim_in() != d {
        return domain(format!("feature map expects dimension {}, data has {d}", feature_map.dim_in()));
    }
    let w = normalized_weights(data.len(), weights)?;
    let m = feature_map.dim_out();
    let features: Vec<f64> = data.iter().flat_map(|p| feature_map.apply(p.x.as_slice())).collect();
    let y: Vec<f64> = data.iter().map(|p| p.y as f64).collect();
    let param = FiniteParam { features: &features, n: data.len(), m, constraint };
    let sol = solve(&param, &y, &w, loss, opts)?;
    Ok(FiniteDimModel {
        feature_map: feature_map.clone(),
        constraint,
        loss: *loss,
        w: sol.theta,
        b: sol.bias,
        certificate: sol.certificate,
    })
}

pub fn train_finite_program(
    data: &[LabeledPoint],
    feature_map: &FeatureMap,
    constraint: Constraint,
    loss: &SurrogateLoss,
    opts: &SolverOptions,
) -> Result<FiniteDimModel> {
    let model = solve_finite_program(data, None, feature_map, constraint, loss, opts)?;
    require_converged(&model.certificate)?;
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub err01: f64,
    pub err_margin: f64,
    pub err_surrogate: f64,
}

/// Errors of precomputed scores: 0-1 (`y·f ≤ 0`), γ-margin and surrogate.
pub fn evaluate_scores(
    scores: &[f64],
    data: &[LabeledPoint],
    loss: &SurrogateLoss,
    gamma: f64,
    boundary_counts: bool,
) -> Result<Evaluation> {
    if data.is_empty() || scores.len() != data.len() {
        return domain("evaluation needs one score per nonempty data point");
    }
    let n = data.len() as f64;
    let (mut e01, mut em, mut es) = (0usize, 0usize, 0.0);
    for (s, p) in scores.iter().zip(data) {
        let yf = p.y as f64 * s;
        e01 += (yf <= 0.0) as usize;
        em += in_margin(yf, gamma, boundary_counts) as usize;
        es += loss.value(yf);
    }
    Ok(Evaluation { err01: e01 as f64 / n, err_margin: em as f64 / n, err_surrogate: es / n })
}

pub fn evaluate<M: Predictor>(
    model: &M,
    data: &[LabeledPoint],
    gamma: f64,
    boundary_counts: bool,
) -> Result<Evaluation> {
    let scores: Vec<f64> = data.iter().map(|p| model.score(p.x.as_slice())).collect();
    evaluate_scores(&scores, data, model.loss(), gamma, boundary_counts)
}

pub fn evaluate_kernel_model(
    model: &KernelModel,
    data: &[LabeledPoint],
    gamma: f64,
    boundary_counts: bool,
) -> Result<Evaluation> {
    let xs: Vec<UnitVector> = data.iter().map(|p| p.x.clone()).collect();
    evaluate_scores(&model.scores_batch(&xs), data, &model.loss, gamma, boundary_counts)
}

const BRUTE_SLOPES: usize = 2001;
const BRUTE_BIASES: usize = 4001;
const BRUTE_REFINE: usize = 401;

/// Grid search for `min_{|a| ≤ C, b} Σ w·l(y(a·t + b))` over at most ten
/// atoms `(t, y, w)`; weights are normalized.
///
/// Biases range over `±2·max(C, 1)` (`±10` for logistic), so that `C = 0`
/// still searches a bias interval.
pub fn brute_force_1d(atoms: &[(f64, i8, f64)], loss: &SurrogateLoss, c: f64) -> Result<f64> {
    if atoms.is_empty() || atoms.len() > 10 {
        return domain("brute force takes between 1 and 10 atoms");
    }
    validate_radius(c)?;
    let total: f64 = atoms.iter().map(|a| a.2).sum();
    if !(total > 0.0) || atoms.iter().any(|a| !(a.2 >= 0.0)) {
        return domain("atom weights must be nonnegative with positive sum");
    }
    let obj = |a: f64, b: f64| -> f64 {
        atoms.iter().map(|(t, y, w)| w * loss.value(*y as f64 * (a * t + b))).sum::<f64>() / total
    };
    let bias_range = if matches!(loss, SurrogateLoss::Logistic) { LOGISTIC_BIAS_BOX } else { 2.0 * c.max(1.0) };
    let search = |a_lo: f64, a_hi: f64, na: usize, b_lo: f64, b_hi: f64, nb: usize| -> (f64, f64, f64) {
        let mut best: (f64, f64, f64) = (f64::INFINITY, 0.0, 0.0);
        for i in 0..na {
            let a = if na == 1 { 0.5 * (a_lo + a_hi) } else { a_lo + (a_hi - a_lo) * i as f64 / (na - 1) as f64 };
            for j in 0..nb {
                let b = b_lo + (b_hi - b_lo) * j as f64 / (nb - 1) as f64;
                let v = obj(a, b);
                let better = v < best.0 || (v == best.0 && (a.abs(), b.abs()) < (best.1.abs(), best.2.abs()));
                if better {
                    best = (v, a, b);
                }
            }
        }
        best
    };
    let (v, a, b) = search(-c, c, BRUTE_SLOPES, -bias_range, bias_range, BRUTE_BIASES);
    let ha = 2.0 * c / (BRUTE_SLOPES - 1) as f64;
    let hb = 2.0 * bias_range / (BRUTE_BIASES - 1) as f64;
    let (v2, _, _) = search(
        (a - ha).max(-c),
        (a + ha).min(c),
        if c > 0.0 { BRUTE_REFINE } else { 1 },
        (b - hb).max(-bias_range),
        (b + hb).min(bias_range),
        BRUTE_REFINE,
    );
    Ok(v.min(v2))
}

/// `Σ w·l(y f)` of a kernel model on weighted data.
pub fn weighted_objective<M: Predictor>(model: &M, data: &[LabeledPoint], weights: Option<&[f64]>) -> Result<f64> {
    let w = normalized_weights(data.len(), weights)?;
    Ok(data.iter().zip(&w).map(|(p, wi)| wi * model.loss().value(p.y as f64 * model.score(p.x.as_slice()))).sum())
}

/// Whether the kernel form has a zonal profile in the model's dimension.
pub fn has_zonal_kernel(model: &KernelModel) -> bool {
    !matches!(model.kernel.form(), KernelForm::FeatureMap(_))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Profile;
    use crate::measures::{AdversarialSpec, Sampler};
    use crate::sphere::{sample_band, RngStream};
    use proptest::prelude::*;

    fn all_losses() -> Vec<SurrogateLoss> {
        vec![
            SurrogateLoss::Hinge,
            SurrogateLoss::Squared,
            SurrogateLoss::Absolute,
            SurrogateLoss::Logistic,
            SurrogateLoss::MarginLoss { gamma: 0.05, c: 10.0 },
            SurrogateLoss::TruncatedMargin { gamma: 0.05, c: 10.0 },
        ]
    }

    #[test]
    fn loss_examples() {
        assert_eq!(SurrogateLoss::Hinge.value(0.0), 1.0);
        assert_eq!(SurrogateLoss::Hinge.d_plus_at_0(), -1.0);
        let margin = make_loss("margin_loss", 0.05, 10.0).unwrap();
        assert!((margin.value(1.0) - 0.9).abs() < 1e-15);
        assert!((SurrogateLoss::Logistic.d_plus_at_0() + 1.0 / (2.0 * LN_2)).abs() < 1e-15);
        assert_eq!(make_loss("truncated_margin", 0.05, 4.0).unwrap().d_plus_at_0(), -4.0);
        assert!(make_loss("nope", 0.1, 1.0).is_err());
        assert!(make_loss("margin_loss", 0.1, 0.5).is_err());
        for l in all_losses() {
            assert!(l.is_convex_on_grid(), "{}", l.name());
            assert!(l.dominates_zero_one_on_grid(), "{}", l.name());
            assert!(l.d_plus_at_0() < 0.0);
        }
    }

    #[test]
    fn loss_scaling_identity_pointwise() {
        let c = 7.5;
        let star = SurrogateLoss::TruncatedMargin { gamma: 0.02, c };
        let margin = SurrogateLoss::MarginLoss { gamma: 0.02, c };
        let mut rng = RngStream::new(1, 0);
        for _ in 0..100 {
            let f = 4.0 * (rng.uniform() - 0.5);
            let y = rng.sign() as f64;
            assert!((star.value(y * f) - SurrogateLoss::Hinge.value(c * y * f)).abs() < 1e-12);
            assert!((star.value(y * f) - c * (margin.value(y * f) - (1.0 - 1.0 / c))).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_and_conjugates_are_consistent() {
        for l in all_losses() {
            let mu = l.smoothing(0.01);
            for i in 0..200 {
                let x = -3.0 + 6.0 * i as f64 / 199.0;
                let (v, d) = l.smoothed(x, mu);
                assert!(v <= l.value(x) + 1e-12 && v >= l.value(x) - 0.01 / 4.0 - 1e-12, "{}", l.name());
                // Fenchel–Young: l(x) ≥ u·x - l*(u) with equality at the envelope's gradient up to smoothing.
                assert!(l.value(x) >= d * x - l.conjugate(d) - 1e-9, "{} at {x}", l.name());
            }
        }
    }

    fn lifted(atoms: &[(f64, i8, f64)], d: usize, seed: u64) -> (Vec<LabeledPoint>, Vec<f64>) {
        let e = UnitVector::basis(d, 0).unwrap();
        let mut rng = RngStream::new(seed, 0);
        let pts =
            atoms.iter().map(|(t, y, _)| LabeledPoint { x: sample_band(&e, *t, &mut rng).unwrap(), y: *y }).collect();
        (pts, atoms.iter().map(|a| a.2).collect())
    }

    #[test]
    fn kernel_program_examples() {
        let opts = SolverOptions { eps_opt: 1e-4, ..Default::default() };
        let x0 = UnitVector::basis(4, 1).unwrap();
        let one = [LabeledPoint { x: x0.clone(), y: 1 }];
        let m = train_kernel_program(&one, &KernelSpec::linear(), &SurrogateLoss::Hinge, 1.0, &opts).unwrap();
        assert!(m.certificate.objective <= 1e-4);

        let two = [LabeledPoint { x: x0.clone(), y: 1 }, LabeledPoint { x: x0, y: -1 }];
        let m = train_kernel_program(&two, &KernelSpec::sss(), &SurrogateLoss::Hinge, 1.0, &opts).unwrap();
        assert!((m.certificate.objective - 1.0).abs() <= 1e-4);

        let gamma = 0.05;
        let spec = AdversarialSpec::new(10, gamma, 0.7);
        let data = Sampler::new(&spec).unwrap().sample_n(400, &mut RngStream::new(2, 0)).unwrap();
        let opts = SolverOptions { eps_opt: 1e-3, ..Default::default() };
        let m = train_kernel_program(&data, &KernelSpec::linear(), &SurrogateLoss::Hinge, 2.0 / gamma, &opts).unwrap();
        assert!(m.certificate.objective <= 1e-3, "{:?}", m.certificate);
        assert!(m.norm <= m.c * (1.0 + 1e-9));
        let ev = evaluate(&m, &data, gamma, false).unwrap();
        assert_eq!(ev.err01, 0.0);
        let json = m.to_json().unwrap();
        assert_eq!(KernelModel::from_json(&json).unwrap().alpha, m.alpha);
    }

    #[test]
    fn certificate_is_a_valid_lower_bound() {
        // The 1-D rank-one kernel problem is solved exactly by brute force.
        let atoms = [(0.05, 1, 0.6), (-0.05, -1, 0.3), (0.02, -1, 0.1)];
        let (pts, w) = lifted(&atoms, 5, 3);
        let e = UnitVector::basis(5, 0).unwrap();
        let k = KernelSpec::feature_map(FeatureMap::projection(&e), false).unwrap();
        for loss in all_losses() {
            let opts = SolverOptions { eps_opt: 1e-4, ..Default::default() };
            let m = solve_kernel_program(&pts, Some(&w), &k, &loss, 3.0, &opts).unwrap();
            let exact = brute_force_1d(&atoms, &loss, 3.0).unwrap();
            assert!(m.certificate.lower_bound <= exact + 1e-6, "{}: {:?} vs {exact}", loss.name(), m.certificate);
            assert!(m.certificate.converged, "{}: {:?}", loss.name(), m.certificate);
            assert!((m.certificate.objective - exact).abs() <= 1e-3, "{}: {:?} vs {exact}", loss.name(), m.certificate);
        }
    }

    #[test]
    fn brute_force_examples() {
        let gamma = 0.05;
        let theta = 0.7;
        let atoms = [(gamma, 1, theta), (-gamma, -1, 1.0 - theta)];
        assert!(brute_force_1d(&atoms, &SurrogateLoss::Hinge, 2.0 / gamma).unwrap() < 1e-9);
        let v = brute_force_1d(&atoms, &SurrogateLoss::Hinge, 1.0).unwrap();
        // With b = 1 - aγ the positive atom is free and the negative pays 2(1 - aγ); a = C = 1.
        assert!((v - 2.0 * (1.0 - theta) * (1.0 - gamma)).abs() < 1e-9, "{v}");
        let bias_only = brute_force_1d(&atoms, &SurrogateLoss::Hinge, 0.0).unwrap();
        assert!((bias_only - 2.0 * (1.0 - theta)).abs() < 1e-9);
    }

    #[test]
    fn finite_program_examples() {
        let gamma = 0.05;
        let spec = AdversarialSpec::new(3, gamma, 0.7);
        let data = Sampler::new(&spec).unwrap().sample_n(200, &mut RngStream::new(4, 0)).unwrap();
        let opts = SolverOptions { eps_opt: 1e-4, ..Default::default() };
        let id = FeatureMap::identity(3);
        let m =
            train_finite_program(&data, &id, Constraint::L2Ball(1.0 / gamma), &SurrogateLoss::Hinge, &opts).unwrap();
        assert!(m.certificate.objective <= 1e-4);
        let m = train_finite_program(&data, &id, Constraint::L1Ball(0.0), &SurrogateLoss::Hinge, &opts).unwrap();
        assert!(m.w.iter().all(|v| *v == 0.0));
        let pos = data.iter().filter(|p| p.y == 1).count() as f64 / data.len() as f64;
        assert!((m.certificate.objective - 2.0 * (1.0 - pos)).abs() <= 1e-4);
    }

    #[test]
    fn finite_program_matches_grid_search() {
        let mut rng = RngStream::new(5, 0);
        let data: Vec<LabeledPoint> = (0..30)
            .map(|_| {
                let x = crate::sphere::sample_unit_sphere(2, &mut rng).unwrap();
                let y = if x.as_slice()[0] + 0.3 * rng.normal() > 0.1 { 1 } else { -1 };
                LabeledPoint { x, y }
            })
            .collect();
        let opts = SolverOptions { eps_opt: 1e-5, ..Default::default() };
        let m = train_finite_program(
            &data,
            &FeatureMap::identity(2),
            Constraint::L2Ball(1.0),
            &SurrogateLoss::Hinge,
            &opts,
        )
        .unwrap();
        let mut best = f64::INFINITY;
        for i in 0..=360 {
            let ang = std::f64::consts::TAU * i as f64 / 360.0;
            for r in 0..=40 {
                let r = r as f64 / 40.0;
                let w = [r * ang.cos(), r * ang.sin()];
                for j in 0..=100 {
                    let b = -2.0 + 4.0 * j as f64 / 100.0;
                    let v: f64 = data
                        .iter()
                        .map(|p| SurrogateLoss::Hinge.value(p.y as f64 * (dot(&w, p.x.as_slice()) + b)))
                        .sum::<f64>()
                        / data.len() as f64;
                    best = best.min(v);
                }
            }
        }
        assert!(m.certificate.objective <= best + 1e-5);
        assert!(best - m.certificate.objective <= 1e-3, "{best} vs {:?}", m.certificate);
    }

    #[test]
    fn l1_projection() {
        let mut w = vec![3.0, -1.0, 0.5];
        project_l1(&mut w, 2.0);
        assert!((w.iter().map(|v| v.abs()).sum::<f64>() - 2.0).abs() < 1e-12);
        assert_eq!(w, vec![2.0, 0.0, 0.0]);
        let mut inside = vec![0.1, -0.2];
        project_l1(&mut inside, 1.0);
        assert_eq!(inside, vec![0.1, -0.2]);
    }

    #[test]
    fn evaluation_examples() {
        let gamma = 0.05;
        let spec = AdversarialSpec::new(6, gamma, 0.7);
        let data = Sampler::new(&spec).unwrap().sample_n(5000, &mut RngStream::new(6, 0)).unwrap();
        let ones = vec![1.0; data.len()];
        let ev = evaluate_scores(&ones, &data, &SurrogateLoss::Hinge, gamma, false).unwrap();
        assert!((ev.err01 - 0.3).abs() < 4.0 * crate::stats::binomial_sigma(0.3, 5000));
        assert!(ev.err01 <= ev.err_surrogate);
        let perfect: Vec<f64> = data.iter().map(|p| p.x.as_slice()[0] / gamma).collect();
        let ev = evaluate_scores(&perfect, &data, &SurrogateLoss::Hinge, gamma, false).unwrap();
        assert_eq!((ev.err01, ev.err_margin), (0.0, 0.0));
    }

    #[test]
    fn objective_is_monotone_in_c() {
        let spec = {
            let mut s = AdversarialSpec::new(8, 0.05, 0.7);
            s.lambda3 = 0.2;
            s
        };
        let data = Sampler::new(&spec).unwrap().sample_n(150, &mut RngStream::new(7, 0)).unwrap();
        let k = KernelSpec::zonal(Profile::Rbf { sigma: 1.0 }).unwrap();
        let opts = SolverOptions { eps_opt: 1e-4, ..Default::default() };
        let mut prev = f64::INFINITY;
        for c in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let m = train_kernel_program(&data, &k, &SurrogateLoss::Hinge, c, &opts).unwrap();
            assert!(m.certificate.objective <= prev + 2e-4, "C={c}");
            prev = m.certificate.objective;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn models_respect_the_norm_bound(seed in any::<u64>(), c in 0.1f64..5.0) {
            let mut spec = AdversarialSpec::new(5, 0.05, 0.7);
            spec.lambda3 = 0.3;
            let data = Sampler::new(&spec).unwrap().sample_n(40, &mut RngStream::new(seed, 0)).unwrap();
            let opts = SolverOptions { eps_opt: 1e-2, ..Default::default() };
            let m = solve_kernel_program(&data, None, &KernelSpec::sss(), &SurrogateLoss::Hinge, c, &opts).unwrap();
            prop_assert!(m.norm <= c * (1.0 + 1e-9));
            let ev = evaluate(&m, &data, 0.05, false).unwrap();
            prop_assert!(ev.err01 <= ev.err_surrogate + 1e-12);
            prop_assert!(m.certificate.lower_bound <= m.certificate.objective + 1e-12);
        }
    }
}
