//! Experiment orchestration: gap experiments, integrality reports, sweeps
//! and the lemma verification suites.
//!
//! Every random draw comes from an `RngStream(seed, stream)` fixed by the
//! config, the seed and the purpose of the draw, so reports do not depend on
//! the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{build_noise_measure, default_probes, mvee, CERTIFICATE_FUNCTIONALS, MVEE_EPS};
use crate::kernels::{
    gegenbauer_quadrature, gram_unchecked, rkhs_norm_symmetric, symmetrize_mc, FeatureMap, KernelForm, KernelSpec,
    Profile, RkhsProfile, DEFAULT_NMAX,
};
use crate::learners::{
    brute_force_1d, evaluate, evaluate_kernel_model, make_loss, solve_finite_program, solve_kernel_program,
    weighted_objective, Constraint, Evaluation, FiniteDimModel, GapCertificate, KernelModel, SolverOptions,
    SurrogateLoss,
};
use crate::lemma_lab::{band_report_exact, band_report_mc, check_band_gap, BandReport};
use crate::measures::{certified_margin_bound, empirical_margin_error, AdversarialSpec, LabeledPoint, Sampler};
use crate::orthopoly::{
    arcsine_l1_norm, arcsine_l2_norm, arcsine_orthopoly_eval, changes_slowly_gap, chebyshev_eval, legendre_bound,
    legendre_eval, legendre_tail_bound, ChebyshevKind, PolyCoeffs,
};
use crate::sphere::{dot, haar_orthogonal, sample_band, sample_unit_sphere, RngStream, UnitVector};

pub const DEFAULT_BAND_MC: usize = 2000;
pub const DEFAULT_MAX_ITERS: usize = 20_000;

const STREAM_TRAIN: u64 = 0;
const STREAM_TEST: u64 = 1;
const STREAM_BAND: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Master seed of the verification suites.
pub const SUITE_SEED: u64 = 20_240_601;

/// `K = ⌈ln C⌉`, at least 1.
pub fn default_cutoff(c: f64) -> usize {
    (c.max(1.0).ln().ceil() as usize).max(1)
}

/// `d = max(25, ⌈5·ln(C/γ)⌉)`.
pub fn default_dimension(c: f64, gamma: f64) -> usize {
    25.max((5.0 * (c / gamma).ln()).ceil() as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LearnerSpec {
    Kernel {
        kernel: KernelSpec,
        #[serde(rename = "C")]
        c: f64,
    },
    Finite {
        feature_map: FeatureMap,
        constraint: Constraint,
        /// Mix the John-ellipsoid noise measure of `feature_map` into the
        /// distribution (at `spec.lambdaN`).
        #[serde(default)]
        noise_measure: bool,
    },
}

impl LearnerSpec {
    pub fn label(&self) -> String {
        match self {
            LearnerSpec::Kernel { kernel, .. } => kernel.label(),
            LearnerSpec::Finite { feature_map, constraint, .. } => {
                let ball = match constraint {
                    Constraint::L2Ball(_) => "l2",
                    Constraint::L1Ball(_) => "l1",
                };
                format!("finite_{ball}_m{}", feature_map.dim_out())
            }
        }
    }

    pub fn radius(&self) -> f64 {
        match self {
            LearnerSpec::Kernel { c, .. } => *c,
            LearnerSpec::Finite { constraint, .. } => constraint.radius(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Defaults to `√γ`.
    pub eps_opt: Option<f64>,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { eps_opt: None, max_iters: DEFAULT_MAX_ITERS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandConfig {
    /// Defaults to `⌈ln C⌉`.
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub n_mc: usize,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self { k: None, n_mc: DEFAULT_BAND_MC }
    }
}

fn default_loss() -> String {
    "hinge".into()
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub spec: AdversarialSpec,
    pub learner: LearnerSpec,
    #[serde(default = "default_loss")]
    pub loss: String,
    /// `C(γ)` of the margin losses; defaults to `1/γ`.
    #[serde(default, rename = "loss_C")]
    pub loss_c: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default = "one")]
    pub n_seeds: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub band: BandConfig,
}

impl ExperimentConfig {
    pub fn new(spec: AdversarialSpec, learner: LearnerSpec, n_train: usize, n_test: usize) -> Self {
        Self {
            spec,
            learner,
            loss: default_loss(),
            loss_c: None,
            n_train,
            n_test,
            n_seeds: 1,
            solver: SolverConfig::default(),
            band: BandConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 || self.n_seeds == 0 {
            return Err(Error::InvalidSpec("n_train, n_test and n_seeds must be at least 1".into()));
        }
        match &self.learner {
            // The atoms are built per seed; check the rest with λN folded into λ₂.
            LearnerSpec::Finite { noise_measure: true, .. } if self.spec.noise_atoms.is_none() => {
                let mut probe = self.spec.clone();
                probe.lambda2 += probe.lambda_n;
                probe.lambda_n = 0.0;
                probe.validate()?;
            }
            _ => self.spec.validate()?,
        }
        self.surrogate()?;
        let r = self.learner.radius();
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::InvalidSpec(format!("norm bound {r} must be finite and nonnegative")));
        }
        if let LearnerSpec::Finite { feature_map, .. } = &self.learner {
            if feature_map.dim_in() != self.spec.d {
                return Err(Error::InvalidSpec(format!(
                    "feature map expects dimension {}, spec has {}",
                    feature_map.dim_in(),
                    self.spec.d
                )));
            }
        }
        Ok(())
    }

    pub fn surrogate(&self) -> Result<SurrogateLoss> {
        make_loss(&self.loss, self.spec.gamma, self.loss_c.unwrap_or(1.0 / self.spec.gamma))
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            eps_opt: self.solver.eps_opt.unwrap_or(self.spec.gamma.sqrt()),
            max_iters: self.solver.max_iters,
            seed: self.spec.seed,
        }
    }

    /// SHA-256 of the canonical JSON (keys sorted), so reordering fields in
    /// a config file keeps the hash.
    pub fn hash(&self) -> Result<String> {
        let canonical = serde_json::to_string(&serde_json::to_value(self)?)?;
        let digest = Sha256::digest(canonical.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// The main gap configuration: `d = 25, γ = 0.01, θ = 0.7, λ₃ = 0.02`,
    /// hinge loss, 4000 training and 20000 test points, three seeds.
    pub fn main_gap(kernel: KernelSpec, c: f64) -> Self {
        let mut spec = AdversarialSpec::new(25, 0.01, 0.7);
        spec.lambda3 = 0.02;
        let mut cfg = Self::new(spec, LearnerSpec::Kernel { kernel, c }, 4000, 20_000);
        cfg.n_seeds = 3;
        cfg
    }
}

/// Kernel suite of the main gap experiment.
pub fn main_gap_suite() -> Vec<ExperimentConfig> {
    vec![
        ExperimentConfig::main_gap(KernelSpec::linear(), 5.0),
        ExperimentConfig::main_gap(KernelSpec::sss(), 20.0),
        ExperimentConfig::main_gap(KernelSpec::zonal(Profile::Rbf { sigma: 1.0 }).expect("valid sigma"), 20.0),
        ExperimentConfig::main_gap(KernelSpec::polynomial(3), 20.0),
    ]
}

/// The γ-sweep: RBF `σ = 2`, `C = 10`, `λ₃ = 5γ`, otherwise as [`ExperimentConfig::main_gap`].
pub fn gamma_sweep() -> Vec<ExperimentConfig> {
    [0.04, 0.02, 0.01, 0.005]
        .iter()
        .map(|&gamma| {
            let mut cfg =
                ExperimentConfig::main_gap(KernelSpec::zonal(Profile::Rbf { sigma: 2.0 }).expect("valid sigma"), 10.0);
            cfg.spec.gamma = gamma;
            cfg.spec.lambda3 = 5.0 * gamma;
            cfg
        })
        .collect()
}

/// Non-finite floats travel as the strings `inf`, `-inf` and `nan`.
mod sentinel {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    #[serde(with = "sentinel")]
    pub err01: f64,
    #[serde(with = "sentinel")]
    pub err_margin_certified: f64,
    #[serde(with = "sentinel")]
    pub err_margin_empirical: f64,
    #[serde(with = "sentinel")]
    pub err_surrogate: f64,
    /// `err01 / err_margin_certified`; `inf` when the denominator is zero.
    #[serde(with = "sentinel")]
    pub ratio: f64,
    #[serde(with = "sentinel")]
    pub band_gap: f64,
    #[serde(with = "sentinel")]
    pub band_bound: f64,
    #[serde(with = "sentinel")]
    pub train_objective: f64,
    #[serde(with = "sentinel")]
    pub train_lower_bound: f64,
    #[serde(with = "sentinel")]
    pub solver_gap: f64,
    pub converged: bool,
    pub error: Option<String>,
}

impl SeedReport {
    fn failed(seed: u64, error: String) -> Self {
        Self {
            seed,
            err01: f64::NAN,
            err_margin_certified: f64::NAN,
            err_margin_empirical: f64::NAN,
            err_surrogate: f64::NAN,
            ratio: f64::NAN,
            band_gap: f64::NAN,
            band_bound: f64::NAN,
            train_objective: f64::NAN,
            train_lower_bound: f64::NAN,
            solver_gap: f64::NAN,
            converged: false,
            error: Some(error),
        }
    }
}

pub fn ratio(err01: f64, certified: f64) -> f64 {
    if certified > 0.0 {
        err01 / certified
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub version: String,
    pub seeds: Vec<SeedReport>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// True when some seed finished with a gap above `eps_opt`.
    pub fn has_nonconvergence(&self) -> bool {
        self.seeds.iter().any(|s| !s.converged && !s.train_objective.is_nan())
    }

    pub fn has_failures(&self) -> bool {
        self.seeds.iter().any(|s| s.train_objective.is_nan())
    }
}

fn seed_of(config: &ExperimentConfig, j: usize) -> u64 {
    config.spec.seed.wrapping_add(j as u64)
}

/// One seed of a gap experiment; errors end up in the report.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> SeedReport {
    try_run_seed(config, seed).unwrap_or_else(|e| SeedReport::failed(seed, e.to_string()))
}

/// `config.spec` at `seed`, with the noise measure built when the learner asks for one.
pub fn resolved_spec(config: &ExperimentConfig, seed: u64) -> Result<AdversarialSpec> {
    config.validate()?;
    let mut spec = config.spec.clone();
    spec.seed = seed;
    if let LearnerSpec::Finite { feature_map, noise_measure: true, .. } = &config.learner {
        let mut rng = RngStream::new(seed, STREAM_NOISE);
        let probes = default_probes(spec.d, feature_map.dim_out(), &mut rng)?;
        spec.noise_atoms = Some(build_noise_measure(feature_map, &probes, &mut rng)?.measure);
    }
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// The train or test sample of one seed; `n` defaults to the config's size.
pub fn sample_split(config: &ExperimentConfig, seed: u64, split: Split, n: Option<usize>) -> Result<Vec<LabeledPoint>> {
    let spec = resolved_spec(config, seed)?;
    let (stream, default_n) = match split {
        Split::Train => (STREAM_TRAIN, config.n_train),
        Split::Test => (STREAM_TEST, config.n_test),
    };
    Sampler::new(&spec)?.sample_n(n.unwrap_or(default_n), &mut RngStream::new(seed, stream))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TrainedModel {
    Kernel(KernelModel),
    Finite(FiniteDimModel),
}

impl TrainedModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn certificate(&self) -> &GapCertificate {
        match self {
            TrainedModel::Kernel(m) => &m.certificate,
            TrainedModel::Finite(m) => &m.certificate,
        }
    }

    pub fn evaluate(&self, data: &[LabeledPoint], gamma: f64, boundary_counts: bool) -> Result<Evaluation> {
        match self {
            TrainedModel::Kernel(m) => evaluate_kernel_model(m, data, gamma, boundary_counts),
            TrainedModel::Finite(m) => evaluate(m, data, gamma, boundary_counts),
        }
    }
}

/// Solves the config's program on `data`; the model comes back even when
/// the certificate misses `eps_opt`.
pub fn train_model(config: &ExperimentConfig, data: &[LabeledPoint]) -> Result<TrainedModel> {
    config.validate()?;
    let loss = config.surrogate()?;
    let opts = config.solver_options();
    Ok(match &config.learner {
        LearnerSpec::Kernel { kernel, c } => {
            TrainedModel::Kernel(solve_kernel_program(data, None, kernel, &loss, *c, &opts)?)
        }
        LearnerSpec::Finite { feature_map, constraint, .. } => {
            TrainedModel::Finite(solve_finite_program(data, None, feature_map, *constraint, &loss, &opts)?)
        }
    })
}

fn try_run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedReport> {
    let spec = resolved_spec(config, seed)?;
    let gamma = spec.gamma;
    let sampler = Sampler::new(&spec)?;
    let train = sampler.sample_n(config.n_train, &mut RngStream::new(seed, STREAM_TRAIN))?;
    let test = sampler.sample_n(config.n_test, &mut RngStream::new(seed, STREAM_TEST))?;
    let e = spec.direction()?;
    let certified = certified_margin_bound(&spec)?;
    let empirical = empirical_margin_error(&test, e.as_slice(), 0.0, gamma, spec.boundary_counts)?;
    let k = config.band.k.unwrap_or_else(|| default_cutoff(config.learner.radius()));
    let mut band_rng = RngStream::new(seed, STREAM_BAND);

    let model = train_model(config, &train)?;
    let eval = model.evaluate(&test, gamma, spec.boundary_counts)?;
    let band: Option<BandReport> = match (&model, spec.d >= 5) {
        (_, false) => None,
        (TrainedModel::Kernel(m), true) => Some(check_band_gap(m, &e, gamma, k, config.band.n_mc, &mut band_rng)?),
        (TrainedModel::Finite(m), true) => {
            // ψ is linear, so f = ⟨Ψᵀw, ·⟩ and f̄ = ⟨Ψᵀw, e⟩·t.
            let v = linear_functional(&m.feature_map, &m.w, spec.d);
            let f = |x: &[f64]| dot(&v, x);
            Some(band_report_mc(&f, dot(&v, &v).sqrt(), &e, gamma, k, config.band.n_mc, &mut band_rng)?)
        }
    };
    let cert = *model.certificate();
    Ok(SeedReport {
        seed,
        err01: eval.err01,
        err_margin_certified: certified,
        err_margin_empirical: empirical,
        err_surrogate: eval.err_surrogate,
        ratio: ratio(eval.err01, certified),
        band_gap: band.as_ref().map_or(f64::NAN, |b| b.gap),
        band_bound: band.as_ref().map_or(f64::NAN, |b| b.bound),
        train_objective: cert.objective,
        train_lower_bound: cert.lower_bound,
        solver_gap: cert.gap,
        converged: cert.converged,
        error: (!cert.converged)
            .then(|| Error::NonConvergence { gap: cert.gap, eps: cert.eps_opt, iters: cert.iterations }.to_string()),
    })
}

/// `Ψᵀw`, read off column by column: `(Ψᵀw)_i = ⟨w, Ψ e_i⟩`.
fn linear_functional(map: &FeatureMap, w: &[f64], d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| {
            let mut x = vec![0.0; d];
            x[i] = 1.0;
            dot(w, &map.apply(&x))
        })
        .collect()
}

/// Trains and evaluates every seed of `config` on the current rayon pool.
pub fn run_gap_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let seeds: Vec<SeedReport> =
        (0..config.n_seeds).into_par_iter().map(|j| run_seed(config, seed_of(config, j))).collect();
    Ok(ExperimentReport { config_hash: config.hash()?, version: env!("CARGO_PKG_VERSION").into(), seeds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralityRow {
    pub seed: u64,
    #[serde(with = "sentinel")]
    pub surrogate_optimum: f64,
    #[serde(with = "sentinel")]
    pub surrogate_lower_bound: f64,
    #[serde(with = "sentinel")]
    pub err_margin_certified: f64,
    /// Surrogate optimum over the certified margin error.
    #[serde(with = "sentinel")]
    pub gap_ratio: f64,
    /// The same with the certified lower bound on the optimum; a lower bound
    /// on the program's integrality gap at this instance.
    #[serde(with = "sentinel")]
    pub certified_gap_ratio: f64,
    #[serde(with = "sentinel")]
    pub err01_ratio: f64,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralityReport {
    pub config_hash: String,
    pub rows: Vec<IntegralityRow>,
}

impl IntegralityReport {
    pub fn has_nonconvergence(&self) -> bool {
        self.rows.iter().any(|r| !r.converged && !r.surrogate_optimum.is_nan())
    }
}

pub fn run_integrality_report(config: &ExperimentConfig) -> Result<IntegralityReport> {
    let report = run_gap_experiment(config)?;
    let rows = report
        .seeds
        .iter()
        .map(|s| IntegralityRow {
            seed: s.seed,
            surrogate_optimum: s.train_objective,
            surrogate_lower_bound: s.train_lower_bound,
            err_margin_certified: s.err_margin_certified,
            gap_ratio: ratio(s.train_objective, s.err_margin_certified),
            certified_gap_ratio: ratio(s.train_lower_bound.max(0.0), s.err_margin_certified),
            err01_ratio: s.ratio,
            converged: s.converged,
            error: s.error.clone(),
        })
        .collect();
    Ok(IntegralityReport { config_hash: report.config_hash, rows })
}

/// One sweep row; field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config_id: usize,
    pub seed: u64,
    pub gamma: f64,
    pub d: usize,
    pub kernel: String,
    #[serde(rename = "C")]
    pub c: f64,
    pub loss: String,
    pub lambda2: f64,
    pub lambda3: f64,
    #[serde(rename = "lambdaN")]
    pub lambda_n: f64,
    pub n_train: usize,
    pub err01: f64,
    pub err_margin_certified: f64,
    pub err_margin_empirical: f64,
    pub err_surrogate: f64,
    pub ratio: f64,
    pub band_gap: f64,
    pub band_bound: f64,
    pub solver_gap: f64,
    pub error: String,
}

/// One row per (config, seed), ordered by config index then seed. A failing
/// row records its error and the sweep goes on.
pub fn sweep(configs: &[ExperimentConfig]) -> Result<Vec<SweepRow>> {
    if configs.is_empty() {
        return Err(Error::Usage("sweep needs at least one config".into()));
    }
    let tasks: Vec<(usize, u64)> =
        configs.iter().enumerate().flat_map(|(i, c)| (0..c.n_seeds.max(1)).map(move |j| (i, seed_of(c, j)))).collect();
    Ok(tasks
        .into_par_iter()
        .map(|(i, seed)| {
            let cfg = &configs[i];
            let r = run_seed(cfg, seed);
            SweepRow {
                config_id: i,
                seed,
                gamma: cfg.spec.gamma,
                d: cfg.spec.d,
                kernel: cfg.learner.label(),
                c: cfg.learner.radius(),
                loss: cfg.loss.clone(),
                lambda2: cfg.spec.lambda2,
                lambda3: cfg.spec.lambda3,
                lambda_n: cfg.spec.lambda_n,
                n_train: cfg.n_train,
                err01: r.err01,
                err_margin_certified: r.err_margin_certified,
                err_margin_empirical: r.err_margin_empirical,
                err_surrogate: r.err_surrogate,
                ratio: r.ratio,
                band_gap: r.band_gap,
                band_bound: r.band_bound,
                solver_gap: r.solver_gap,
                error: r.error.unwrap_or_default(),
            }
        })
        .collect())
}

/// Rows of any flat record type as CSV with a header.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Usage(e.to_string()))
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    to_csv(rows)
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Orthopoly,
    Kernels,
    Geometry,
    Band,
    Solver,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "orthopoly" => Suite::Orthopoly,
            "kernels" => Suite::Kernels,
            "geometry" => Suite::Geometry,
            "band" => Suite::Band,
            "solver" => Suite::Solver,
            "all" => Suite::All,
            other => return Err(Error::Usage(format!("unknown suite '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub suite: String,
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    /// First failing case.
    pub counterexample: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct Check {
    suite: &'static str,
    name: &'static str,
    cases: usize,
    counterexample: Option<Value>,
}

impl Check {
    fn new(suite: &'static str, name: &'static str) -> Self {
        Self { suite, name, cases: 0, counterexample: None }
    }

    fn case(&mut self, ok: bool, detail: impl FnOnce() -> Value) {
        self.cases += 1;
        if !ok && self.counterexample.is_none() {
            self.counterexample = Some(detail());
        }
    }

    fn fail(&mut self, err: Error) {
        self.case(false, || json!({ "error": err.to_string() }));
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            suite: self.suite.into(),
            name: self.name.into(),
            passed: self.counterexample.is_none() && self.cases > 0,
            cases: self.cases,
            counterexample: self.counterexample,
        }
    }
}

pub fn verify_lemmas(suite: Suite) -> VerifyReport {
    let checks = match suite {
        Suite::Orthopoly => verify_orthopoly(),
        Suite::Kernels => verify_kernels(),
        Suite::Geometry => verify_geometry(),
        Suite::Band => verify_band(),
        Suite::Solver => verify_solver(),
        Suite::All => {
            [verify_orthopoly(), verify_kernels(), verify_geometry(), verify_band(), verify_solver()].concat()
        }
    };
    VerifyReport { passed: checks.iter().all(|c| c.passed), checks }
}

fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

pub fn verify_orthopoly() -> Vec<CheckResult> {
    verify_orthopoly_with(&|d, n, t| legendre_eval(d, n, t).unwrap_or(f64::NAN))
}

/// The orthopoly suite with a caller-supplied `P_{d,n}` evaluator, so a
/// broken recursion can be shown to fail.
pub fn verify_orthopoly_with(eval: &dyn Fn(usize, usize, f64) -> f64) -> Vec<CheckResult> {
    const S: &str = "orthopoly";
    let dims = [3usize, 5, 8, 12];
    let mut sup = Check::new(S, "legendre_sup_norm");
    let mut at_one = Check::new(S, "legendre_at_one");
    for &d in &dims {
        for n in 0..=40 {
            for t in grid(-1.0, 1.0, 401) {
                let v = eval(d, n, t);
                sup.case(v.abs() <= 1.0 + 1e-9, || json!({ "d": d, "n": n, "t": t, "value": v }));
            }
            let v = eval(d, n, 1.0);
            at_one.case((v - 1.0).abs() <= 1e-9, || json!({ "d": d, "n": n, "value": v }));
        }
    }

    let mut orth = Check::new(S, "legendre_orthogonality");
    for &d in &dims {
        let (nodes, weights) = gegenbauer_quadrature(d, 64);
        let tables: Vec<Vec<f64>> = nodes.iter().map(|&t| (0..=40).map(|n| eval(d, n, t)).collect()).collect();
        for n in 0..=40 {
            for m in 0..n {
                let ip: f64 = tables.iter().zip(&weights).map(|(p, w)| w * p[n] * p[m]).sum();
                orth.case(ip.abs() <= 1e-6, || json!({ "d": d, "n": n, "m": m, "inner_product": ip }));
            }
        }
    }

    let mut deriv = Check::new(S, "chebyshev_derivative");
    let h = 1e-5;
    for n in 1..=20 {
        for t in grid(-0.95, 0.95, 64) {
            let fd = (chebyshev_eval(ChebyshevKind::First, n, t + h).unwrap_or(f64::NAN)
                - chebyshev_eval(ChebyshevKind::First, n, t - h).unwrap_or(f64::NAN))
                / (2.0 * h);
            let exact = n as f64 * chebyshev_eval(ChebyshevKind::Second, n - 1, t).unwrap_or(f64::NAN);
            let ok = (fd - exact).abs() <= 1e-5 * exact.abs().max(1.0);
            deriv.case(ok, || json!({ "n": n, "t": t, "finite_difference": fd, "n_U": exact }));
        }
    }

    let mut u_sup = Check::new(S, "chebyshev_u_sup_norm");
    for n in 0..=40 {
        let m = grid(-1.0, 1.0, 1001)
            .map(|t| chebyshev_eval(ChebyshevKind::Second, n, t).unwrap_or(f64::NAN).abs())
            .fold(0.0f64, f64::max);
        u_sup.case((m - (n as f64 + 1.0)).abs() <= 1e-9, || json!({ "n": n, "sup": m }));
    }

    let mut pointwise = Check::new(S, "legendre_pointwise_bound");
    for &d in &[5usize, 8, 12] {
        for n in 1..=40 {
            for t in grid(-1.0, 1.0, 401).filter(|t| t.abs() < 1.0) {
                let p = eval(d, n, t);
                match legendre_bound(d, n, t) {
                    Ok(b) => {
                        pointwise.case(p.abs() <= b + 1e-12, || json!({ "d": d, "n": n, "t": t, "p": p, "bound": b }))
                    }
                    Err(e) => pointwise.fail(e),
                }
            }
        }
    }

    let mut tail = Check::new(S, "legendre_tail_bound");
    for &d in &[5usize, 8, 12] {
        for &k in &[1usize, 5, 10, 20] {
            let bound = legendre_tail_bound(k, d).unwrap_or(f64::NAN);
            for t in grid(-0.125, 0.125, 101) {
                let partial: f64 = (k..=400).map(|n| eval(d, n, t).abs()).sum();
                tail.case(
                    partial <= bound,
                    || json!({ "d": d, "K": k, "t": t, "partial_sum": partial, "bound": bound }),
                );
            }
        }
    }

    let mut l1l2 = Check::new(S, "l1_l2_lemma");
    let mut rng = RngStream::new(SUITE_SEED, 1);
    for _ in 0..500 {
        let k = 1 + (rng.uniform() * 20.0) as usize;
        let c: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
        let f = |x: f64| (0..k).map(|i| c[i] * arcsine_orthopoly_eval(i, x).unwrap_or(f64::NAN)).sum::<f64>();
        let (l1, l2) = (arcsine_l1_norm(f), arcsine_l2_norm(f));
        let rhs = (k as f64).sqrt() * std::f64::consts::SQRT_2 * l1;
        l1l2.case(l2 <= rhs, || json!({ "K": k, "coeffs": c, "l2": l2, "rhs": rhs }));
    }

    [sup, at_one, orth, deriv, u_sup, pointwise, tail, l1l2].into_iter().map(Check::finish).collect()
}

fn shipped_kernels(d: usize, rng: &mut RngStream) -> Vec<KernelSpec> {
    let mut ks = vec![KernelSpec::linear(), KernelSpec::polynomial(2), KernelSpec::polynomial(3), KernelSpec::sss()];
    for sigma in [0.5, 1.0, 2.0] {
        ks.push(KernelSpec::rbf(sigma).expect("valid sigma"));
    }
    ks.push(KernelSpec::feature_map(FeatureMap::random_linear(4, d, rng), true).expect("valid map"));
    ks
}

pub fn verify_kernels() -> Vec<CheckResult> {
    const S: &str = "kernels";
    let mut rng = RngStream::new(SUITE_SEED, 2);
    let mut psd = Check::new(S, "gram_psd");
    for i in 0..100 {
        let d = 3 + i % 8;
        let n = 10 + (i * 7) % 50;
        let pts: Vec<UnitVector> = (0..n).map(|_| sample_unit_sphere(d, &mut rng).expect("d >= 1")).collect();
        let slices: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        for k in shipped_kernels(d, &mut rng) {
            match gram_unchecked(&k, &slices) {
                Ok(g) => {
                    let ev = g.min_eigenvalue();
                    psd.case(ev >= -1e-8, || json!({ "set": i, "d": d, "n": n, "kernel": k.label(), "min_eig": ev }));
                }
                Err(e) => psd.fail(e),
            }
        }
    }

    let mut coeffs = Check::new(S, "legendre_coefficients");
    let mut reproducing = Check::new(S, "reproducing_norm");
    let profiles = [
        KernelSpec::sss(),
        KernelSpec::rbf(0.5).expect("valid sigma"),
        KernelSpec::rbf(1.0).expect("valid sigma"),
        KernelSpec::rbf(2.0).expect("valid sigma"),
        KernelSpec::polynomial(1),
        KernelSpec::polynomial(3),
        KernelSpec::polynomial(5),
    ];
    for k in &profiles {
        for d in [5usize, 10, 25] {
            match RkhsProfile::for_kernel(k, d, DEFAULT_NMAX) {
                Ok(p) => {
                    let min_b = p.b.iter().cloned().fold(f64::INFINITY, f64::min);
                    let kappa1 = k.profile_value(1.0).unwrap_or(f64::NAN);
                    let ok = min_b >= -1e-8 && (p.sum() - kappa1).abs() <= 1e-6;
                    coeffs.case(
                        ok,
                        || json!({ "kernel": k.label(), "d": d, "min_b": min_b, "sum": p.sum(), "kappa_1": kappa1 }),
                    );
                    let f = PolyCoeffs::new(d, p.b.clone()).expect("finite coefficients");
                    match rkhs_norm_symmetric(&f, &p) {
                        Ok(norm) => reproducing
                            .case((norm - 1.0).abs() <= 1e-6, || json!({ "kernel": k.label(), "d": d, "norm": norm })),
                        Err(e) => reproducing.fail(e),
                    }
                }
                Err(e) => coeffs.fail(e),
            }
        }
    }

    let mut sym = Check::new(S, "rank_one_symmetrization");
    let d = 5;
    let v = UnitVector::normalize(vec![1.0, -2.0, 0.5, 0.0, 1.0]).expect("nonzero");
    let k = KernelSpec::feature_map(FeatureMap::projection(&v), false).expect("valid map");
    match symmetrize_mc(&k, d, 4096, &mut RngStream::new(SUITE_SEED, 3)) {
        Ok(ks) => {
            if let KernelForm::Zonal(Profile::Tabulated(t)) = ks.form() {
                for (j, s) in t.s.iter().enumerate() {
                    let dev = (t.value[j] - s / d as f64).abs();
                    sym.case(
                        dev <= 3.0 * t.std_err[j],
                        || json!({ "s": s, "value": t.value[j], "std_err": t.std_err[j] }),
                    );
                }
            } else {
                sym.case(false, || json!({ "error": "symmetrization did not return a table" }));
            }
        }
        Err(e) => sym.fail(e),
    }
    [psd, coeffs, reproducing, sym].into_iter().map(Check::finish).collect()
}

pub fn verify_geometry() -> Vec<CheckResult> {
    const S: &str = "geometry";
    let mut rng = RngStream::new(SUITE_SEED, 4);
    let mut contain = Check::new(S, "mvee_containment");
    let mut john = Check::new(S, "john_sandwich");
    for m in [2usize, 3, 5, 10] {
        let a = haar_orthogonal(m, &mut rng).expect("m >= 1");
        let scales: Vec<f64> = (0..m).map(|_| 0.2 + 2.0 * rng.uniform()).collect();
        let pts: Vec<Vec<f64>> = (0..60)
            .map(|_| {
                let z: Vec<f64> = (0..m).map(|i| scales[i] * rng.normal()).collect();
                (0..m).map(|r| (0..m).map(|c| a[(r, c)] * z[c]).sum()).collect()
            })
            .collect();
        let e = match mvee(&pts, true, MVEE_EPS) {
            Ok(e) => e,
            Err(err) => {
                contain.fail(err);
                continue;
            }
        };
        for p in &pts {
            let g = e.gauge_sq(p);
            contain.case(g <= 1.0 + 1e-12, || json!({ "m": m, "point": p, "gauge_sq": g }));
        }
        for _ in 0..200 {
            let u: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
            let hull = pts.iter().map(|p| dot(p, &u).abs()).fold(0.0, f64::max);
            let outer = e.support(&u).unwrap_or(f64::NAN);
            let inner = outer / (m as f64).sqrt();
            let ok = inner <= hull * (1.0 + 1e-9) && hull <= outer * (1.0 + 1e-9);
            john.case(ok, || json!({ "m": m, "direction": u, "hull": hull, "outer": outer, "inner": inner }));
        }
    }

    let mut noise = Check::new(S, "noise_measure_certificate");
    for m in [2usize, 3, 5] {
        let d = 8;
        let psi = FeatureMap::random_linear(m, d, &mut rng);
        let built = default_probes(d, m, &mut rng).and_then(|probes| build_noise_measure(&psi, &probes, &mut rng));
        match built {
            Ok(nm) => {
                let c = &nm.certificate;
                let threshold = 1.0 / (2.0 * (m as f64).powf(1.5)) - 1e-9;
                let ok = c.passed && c.functionals == CERTIFICATE_FUNCTIONALS && c.min_hinge_err >= threshold;
                noise.case(ok, || json!({ "m": m, "certificate": c }));
            }
            Err(e) => noise.fail(e),
        }
    }
    [contain, john, noise].into_iter().map(Check::finish).collect()
}

pub fn verify_band() -> Vec<CheckResult> {
    const S: &str = "band";
    let mut rng = RngStream::new(SUITE_SEED, 5);
    let mut slow = Check::new(S, "changes_slowly");
    for i in 0..1000 {
        let d = [5usize, 8][i % 2];
        let k = [5usize, 15][(i / 2) % 2];
        let gamma = [0.01, 0.05][(i / 4) % 2];
        let degree = (rng.uniform() * 41.0) as usize;
        let rho = 0.5 + 0.5 * rng.uniform();
        let alpha: Vec<f64> = (0..=degree.min(40)).map(|n| rng.normal() * rho.powi(n as i32)).collect();
        let f = PolyCoeffs::new(d, alpha).expect("finite coefficients");
        match changes_slowly_gap(&f, gamma, k) {
            Ok(g) => slow.case(
                g.holds(),
                || json!({ "d": d, "K": k, "gamma": gamma, "alpha": f.alpha, "gap": g.gap, "bound": g.bound }),
            ),
            Err(e) => slow.fail(e),
        }
    }

    let mut bounded = Check::new(S, "bounded_zonal_functions");
    for i in 0..200 {
        let d = [6usize, 10][i % 2];
        let profile = RkhsProfile::for_kernel(&KernelSpec::sss(), d, 40).expect("analytic profile");
        let raw: Vec<f64> = (0..profile.b.len())
            .map(|n| if profile.a_sq[n].is_some() { rng.normal() * profile.b[n].sqrt() } else { 0.0 })
            .collect();
        let f = PolyCoeffs::new(d, raw).expect("finite coefficients");
        let norm = rkhs_norm_symmetric(&f, &profile).unwrap_or(f64::NAN);
        let scale = 10.0 * rng.uniform() / norm;
        let f = PolyCoeffs::new(d, f.alpha.iter().map(|a| a * scale).collect()).expect("finite coefficients");
        let gamma = 0.001 + 0.119 * rng.uniform();
        let k = 1 + (rng.uniform() * 29.0) as usize;
        let e = UnitVector::basis(d, 0).expect("d >= 1");
        match band_report_exact(&f, &e, gamma, k) {
            Ok(r) => bounded.case(r.holds(), || json!({ "report": r, "alpha": f.alpha })),
            Err(e) => bounded.fail(e),
        }
    }

    let mut pipeline = Check::new(S, "kernel_section_pipeline");
    for _ in 0..10 {
        let d = 10;
        let x0 = sample_unit_sphere(d, &mut rng).expect("d >= 1");
        let model = KernelModel {
            kernel: KernelSpec::sss(),
            loss: SurrogateLoss::Hinge,
            support: vec![x0],
            alpha: vec![1.0],
            b: 0.0,
            c: 1.0,
            norm: 1.0,
            certificate: GapCertificate {
                objective: 0.0,
                lower_bound: 0.0,
                gap: 0.0,
                eps_opt: 0.0,
                iterations: 0,
                converged: true,
            },
        };
        let e = UnitVector::basis(d, 0).expect("d >= 1");
        match check_band_gap(&model, &e, 0.01, 20, DEFAULT_BAND_MC, &mut rng) {
            Ok(r) => pipeline.case(r.holds(), || json!({ "report": r })),
            Err(e) => pipeline.fail(e),
        }
    }
    [slow, bounded, pipeline].into_iter().map(Check::finish).collect()
}

/// Random instance of at most five weighted atoms on `[-0.9, 0.9]`.
fn random_atoms(rng: &mut RngStream) -> Vec<(f64, i8, f64)> {
    let n = 1 + ((rng.uniform() * 5.0) as usize).min(4);
    (0..n).map(|_| (1.8 * rng.uniform() - 0.9, rng.sign(), 0.1 + rng.uniform())).collect()
}

/// Atoms lifted to `S^{d-1}` along `e`, for the rank-one kernel `⟨x,e⟩⟨y,e⟩`
/// whose RKHS is the 1-D slope family.
fn lift_atoms(atoms: &[(f64, i8, f64)], e: &UnitVector, rng: &mut RngStream) -> Result<(Vec<LabeledPoint>, Vec<f64>)> {
    let mut pts = Vec::with_capacity(atoms.len());
    for (t, y, _) in atoms {
        pts.push(LabeledPoint { x: sample_band(e, *t, rng)?, y: *y });
    }
    Ok((pts, atoms.iter().map(|a| a.2).collect()))
}

pub fn verify_solver() -> Vec<CheckResult> {
    const S: &str = "solver";
    let mut rng = RngStream::new(SUITE_SEED, 6);
    let d = 5;
    let e = UnitVector::basis(d, 0).expect("d >= 1");
    let kernel = KernelSpec::feature_map(FeatureMap::projection(&e), false).expect("valid map");
    let opts = SolverOptions { eps_opt: 1e-4, max_iters: 400_000, seed: 0 };
    let losses = [
        SurrogateLoss::Hinge,
        SurrogateLoss::Absolute,
        SurrogateLoss::Squared,
        SurrogateLoss::Logistic,
        SurrogateLoss::MarginLoss { gamma: 0.1, c: 5.0 },
        SurrogateLoss::TruncatedMargin { gamma: 0.1, c: 2.0 },
    ];
    let mut agree = Check::new(S, "solver_matches_brute_force");
    for i in 0..50 {
        let atoms = random_atoms(&mut rng);
        let loss = losses[i % losses.len()];
        let c = 0.5 + 4.5 * rng.uniform();
        let run = lift_atoms(&atoms, &e, &mut rng).and_then(|(pts, w)| {
            let model = solve_kernel_program(&pts, Some(&w), &kernel, &loss, c, &opts)?;
            Ok((model.certificate, brute_force_1d(&atoms, &loss, c)?))
        });
        match run {
            Ok((cert, oracle)) => {
                let ok = cert.converged && (cert.objective - oracle).abs() <= 1e-3;
                agree.case(
                    ok,
                    || json!({ "atoms": atoms, "loss": loss, "C": c, "certificate": cert, "oracle": oracle }),
                );
            }
            Err(err) => agree.fail(err),
        }
    }

    let mut scaling = Check::new(S, "loss_scaling_identity");
    let mut optimum = Check::new(S, "loss_scaling_optimum");
    for _ in 0..10 {
        let atoms = random_atoms(&mut rng);
        let cs = 1.0 + 4.0 * rng.uniform();
        let c = 0.5 + 2.0 * rng.uniform();
        let star = SurrogateLoss::TruncatedMargin { gamma: 1.0 / cs, c: cs };
        let run = lift_atoms(&atoms, &e, &mut rng).and_then(|(pts, w)| {
            let m_star = solve_kernel_program(&pts, Some(&w), &kernel, &star, c, &opts)?;
            let mut scaled = m_star.clone();
            scaled.alpha.iter_mut().for_each(|a| *a *= cs);
            scaled.b *= cs;
            scaled.loss = SurrogateLoss::Hinge;
            let identity =
                (weighted_objective(&m_star, &pts, Some(&w))? - weighted_objective(&scaled, &pts, Some(&w))?).abs();
            let m_hinge = solve_kernel_program(&pts, Some(&w), &kernel, &SurrogateLoss::Hinge, cs * c, &opts)?;
            Ok((identity, m_star.certificate, m_hinge.certificate))
        });
        match run {
            Ok((identity, a, b)) => {
                scaling.case(identity <= 1e-6, || json!({ "atoms": atoms, "C_gamma": cs, "difference": identity }));
                let ok = (a.objective - b.objective).abs() <= a.gap + b.gap + 1e-6;
                optimum.case(ok, || json!({ "atoms": atoms, "C_gamma": cs, "truncated": a, "hinge": b }));
            }
            Err(err) => scaling.fail(err),
        }
    }
    [agree, scaling, optimum].into_iter().map(Check::finish).collect()
}
