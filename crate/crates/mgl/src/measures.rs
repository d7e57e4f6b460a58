//! One-dimensional adversarial measures, their pullbacks to `S^{d-1}` along a
//! direction `e`, and margin-error bounds for the reference halfspace
//! `x ↦ ⟨e, x⟩`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::WeightedAtomMeasure;
use crate::kernels::{csv_string, parse_field};
use crate::learners::SurrogateLoss;
use crate::orthopoly::BAND_HALF_WIDTH;
use crate::sphere::{dot, sample_band_with, OrthoCompletion, RngStream, UnitVector};

/// Margin comparisons treat `|y·f - γ| ≤ MARGIN_TIE_TOL` as lying exactly on
/// the margin, so atoms placed at `±γ` survive rounding in the lift.
pub const MARGIN_TIE_TOL: f64 = 1e-12;

const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Component {
    /// `(γ, +1)` with probability `θ`, `(-γ, -1)` otherwise.
    TwoAtomClean { theta: f64, gamma: f64 },
    /// `(-γ, +1)` with probability one.
    FlippedAtom { gamma: f64 },
    /// Arcsine location on `[-1/8, 1/8]`, uniform label.
    ArcsineNoise,
    /// Explicit `(t, y, weight)` atoms.
    FiniteAtoms { atoms: Vec<(f64, i8, f64)> },
}

impl Component {
    fn validate(&self) -> Result<()> {
        match self {
            Component::TwoAtomClean { theta, gamma } => {
                if !(*theta > 0.0 && *theta < 1.0) {
                    return Err(Error::InvalidSpec(format!("theta {theta} outside (0, 1)")));
                }
                check_location(*gamma)
            }
            Component::FlippedAtom { gamma } => check_location(*gamma),
            Component::ArcsineNoise => Ok(()),
            Component::FiniteAtoms { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidSpec("empty atom list".into()));
                }
                for (t, y, w) in atoms {
                    check_location(*t)?;
                    if (*y != 1 && *y != -1) || !(*w >= 0.0) {
                        return Err(Error::InvalidSpec("atoms need ±1 labels and nonnegative weights".into()));
                    }
                }
                check_sum(atoms.iter().map(|a| a.2).sum())
            }
        }
    }

    fn sample(&self, rng: &mut RngStream) -> (f64, i8) {
        match self {
            Component::TwoAtomClean { theta, gamma } => {
                if rng.uniform() < *theta {
                    (*gamma, 1)
                } else {
                    (-gamma, -1)
                }
            }
            Component::FlippedAtom { gamma } => (-gamma, 1),
            Component::ArcsineNoise => {
                let t = BAND_HALF_WIDTH * (std::f64::consts::PI * rng.uniform()).cos();
                (t, rng.sign())
            }
            Component::FiniteAtoms { atoms } => {
                let w: Vec<f64> = atoms.iter().map(|a| a.2).collect();
                let (t, y, _) = atoms[rng.categorical(&w)];
                (t, y)
            }
        }
    }
}

fn check_location(t: f64) -> Result<()> {
    if !(t.is_finite() && t.abs() <= 1.0) {
        return Err(Error::InvalidSpec(format!("atom location {t} outside [-1, 1]")));
    }
    Ok(())
}

fn check_sum(total: f64) -> Result<()> {
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::InvalidSpec(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

/// A finite mixture of one-dimensional components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneDimMeasure {
    components: Vec<(f64, Component)>,
}

impl OneDimMeasure {
    /// Zero-weight components are dropped.
    pub fn new(components: Vec<(f64, Component)>) -> Result<Self> {
        if components.iter().any(|(w, _)| !(*w >= 0.0)) {
            return Err(Error::InvalidSpec("mixture weights must be nonnegative".into()));
        }
        check_sum(components.iter().map(|c| c.0).sum())?;
        for (_, c) in &components {
            c.validate()?;
        }
        Ok(Self { components: components.into_iter().filter(|(w, _)| *w > 0.0).collect() })
    }

    pub fn components(&self) -> &[(f64, Component)] {
        &self.components
    }

    /// `(t, y, component index)`.
    pub fn sample(&self, rng: &mut RngStream) -> (f64, i8, usize) {
        let w: Vec<f64> = self.components.iter().map(|c| c.0).collect();
        let i = rng.categorical(&w);
        let (t, y) = self.components[i].1.sample(rng);
        (t, y, i)
    }
}

/// The mixture `(1-λ₂-λ₃-λ_N)·clean + λ₂·flipped + λ₃·arcsine + λ_N·μ_N`
/// pulled back along `e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialSpec {
    pub d: usize,
    pub gamma: f64,
    pub theta: f64,
    #[serde(default)]
    pub lambda2: f64,
    #[serde(default)]
    pub lambda3: f64,
    #[serde(default, rename = "lambdaN")]
    pub lambda_n: f64,
    /// Empty means the first basis vector.
    #[serde(default)]
    pub e: Vec<f64>,
    #[serde(default)]
    pub noise_atoms: Option<WeightedAtomMeasure>,
    #[serde(default)]
    pub boundary_counts: bool,
    #[serde(default)]
    pub seed: u64,
}

impl AdversarialSpec {
    /// Spec along the first basis vector with no noise components.
    pub fn new(d: usize, gamma: f64, theta: f64) -> Self {
        let mut e = vec![0.0; d];
        if d > 0 {
            e[0] = 1.0;
        }
        Self {
            d,
            gamma,
            theta,
            lambda2: 0.0,
            lambda3: 0.0,
            lambda_n: 0.0,
            e,
            noise_atoms: None,
            boundary_counts: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::InvalidSpec(format!("dimension {} < 2", self.d)));
        }
        if !(self.gamma > 0.0 && self.gamma < BAND_HALF_WIDTH) {
            return Err(Error::InvalidSpec(format!("gamma {} outside (0, 1/8)", self.gamma)));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::InvalidSpec(format!("theta {} outside (0, 1)", self.theta)));
        }
        let lams = [self.lambda2, self.lambda3, self.lambda_n];
        if lams.iter().any(|l| !(*l >= 0.0)) || !(lams.iter().sum::<f64>() < 1.0) {
            return Err(Error::InvalidSpec("mixture weights must be >= 0 with sum < 1".into()));
        }
        self.direction()?;
        if self.lambda_n > 0.0 {
            match &self.noise_atoms {
                None => return Err(Error::InvalidSpec("lambdaN > 0 needs noise_atoms".into())),
                Some(m) if m.dim() != self.d => {
                    return Err(Error::InvalidSpec(format!("noise atoms live in dimension {}", m.dim())))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn direction(&self) -> Result<UnitVector> {
        if self.e.is_empty() {
            return UnitVector::basis(self.d, 0);
        }
        if self.e.len() != self.d {
            return Err(Error::InvalidSpec(format!("direction has length {}, not {}", self.e.len(), self.d)));
        }
        UnitVector::new(self.e.clone()).map_err(|err| Error::InvalidSpec(err.to_string()))
    }

    pub fn clean_weight(&self) -> f64 {
        1.0 - self.lambda2 - self.lambda3 - self.lambda_n
    }

    /// The one-dimensional part, renormalized over the non-`μ_N` components.
    pub fn one_dim(&self) -> Result<OneDimMeasure> {
        let rest = 1.0 - self.lambda_n;
        OneDimMeasure::new(vec![
            (self.clean_weight() / rest, Component::TwoAtomClean { theta: self.theta, gamma: self.gamma }),
            (self.lambda2 / rest, Component::FlippedAtom { gamma: self.gamma }),
            (self.lambda3 / rest, Component::ArcsineNoise),
        ])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub x: UnitVector,
    pub y: i8,
}

/// Columns `x0..x{d-1}, y`.
pub fn dataset_to_csv(data: &[LabeledPoint]) -> Result<String> {
    let d = data.first().map_or(0, |p| p.x.dim());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for p in data {
        if p.x.dim() != d {
            return Err(Error::Usage("dataset mixes dimensions".into()));
        }
        let mut row: Vec<String> = p.x.as_slice().iter().map(|v| v.to_string()).collect();
        row.push(p.y.to_string());
        w.write_record(&row)?;
    }
    csv_string(w)
}

pub fn dataset_from_csv(text: &str) -> Result<Vec<LabeledPoint>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let cols = r.headers()?.len();
    if cols < 3 {
        return Err(Error::Usage("dataset CSV needs at least two x columns and y".into()));
    }
    let d = cols - 1;
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let x = (0..d).map(|i| parse_field(&rec, i)).collect::<Result<Vec<_>>>()?;
        let y = match parse_field(&rec, d)? {
            1.0 => 1,
            -1.0 => -1,
            v => return Err(Error::Usage(format!("label {v} is not +1 or -1"))),
        };
        data.push(LabeledPoint { x: UnitVector::new(x)?, y });
    }
    Ok(data)
}

/// Which mixture component produced a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    CleanPositive,
    CleanNegative,
    Flipped,
    Arcsine,
    Atoms,
}

/// Reusable sampler; holds the completion of `e`.
#[derive(Debug, Clone)]
pub struct Sampler {
    spec: AdversarialSpec,
    e: UnitVector,
    completion: OrthoCompletion,
}

impl Sampler {
    pub fn new(spec: &AdversarialSpec) -> Result<Self> {
        spec.validate()?;
        let e = spec.direction()?;
        Ok(Self { completion: OrthoCompletion::new(&e), e, spec: spec.clone() })
    }

    pub fn direction(&self) -> &UnitVector {
        &self.e
    }

    pub fn sample(&self, rng: &mut RngStream) -> Result<(LabeledPoint, Source)> {
        let s = &self.spec;
        let w = [s.clean_weight(), s.lambda2, s.lambda3, s.lambda_n];
        let (t, y, source) = match rng.categorical(&w) {
            0 => {
                let (t, y) = Component::TwoAtomClean { theta: s.theta, gamma: s.gamma }.sample(rng);
                (t, y, if y > 0 { Source::CleanPositive } else { Source::CleanNegative })
            }
            1 => (-s.gamma, 1, Source::Flipped),
            2 => {
                let (t, y) = Component::ArcsineNoise.sample(rng);
                (t, y, Source::Arcsine)
            }
            _ => {
                let atoms = s.noise_atoms.as_ref().expect("validated").atoms();
                let weights: Vec<f64> = atoms.iter().map(|a| a.weight).collect();
                let a = &atoms[rng.categorical(&weights)];
                return Ok((LabeledPoint { x: a.x.clone(), y: a.label }, Source::Atoms));
            }
        };
        let x = sample_band_with(&self.completion, &self.e, t, rng)?;
        Ok((LabeledPoint { x, y }, source))
    }

    pub fn sample_n(&self, n: usize, rng: &mut RngStream) -> Result<Vec<LabeledPoint>> {
        (0..n).map(|_| self.sample(rng).map(|p| p.0)).collect()
    }
}

pub fn sample_labeled(spec: &AdversarialSpec, rng: &mut RngStream) -> Result<LabeledPoint> {
    Ok(Sampler::new(spec)?.sample(rng)?.0)
}

/// Density `8/(π√(1-(8t)²))` of the arcsine noise band; `+∞` at `|t| = 1/8`.
pub fn arcsine_density(t: f64) -> f64 {
    let u = t / BAND_HALF_WIDTH;
    if u.abs() > 1.0 {
        0.0
    } else if u.abs() == 1.0 {
        f64::INFINITY
    } else {
        1.0 / (BAND_HALF_WIDTH * std::f64::consts::PI * (1.0 - u * u).sqrt())
    }
}

/// Margin test `y·f < γ` (or `≤ γ` with `boundary_counts`), with ties decided
/// by [`MARGIN_TIE_TOL`].
pub fn in_margin(yf: f64, gamma: f64, boundary_counts: bool) -> bool {
    if boundary_counts {
        yf <= gamma + MARGIN_TIE_TOL
    } else {
        yf < gamma - MARGIN_TIE_TOL
    }
}

/// Upper bound on `Err_γ` certified by the reference halfspace `Λ_{e,0}`:
/// `λ₂ + λ₃(½ + asin(8γ)/π) + λ_N·(margin mass of μ_N)`.
pub fn certified_margin_bound(spec: &AdversarialSpec) -> Result<f64> {
    spec.validate()?;
    let e = spec.direction()?;
    let arcsine = 0.5 + (spec.gamma / BAND_HALF_WIDTH).asin() / std::f64::consts::PI;
    let noise = match &spec.noise_atoms {
        Some(m) if spec.lambda_n > 0.0 => {
            m.expect(|x, y| in_margin(y as f64 * dot(e.as_slice(), x), spec.gamma, spec.boundary_counts) as u8 as f64)
        }
        _ => 0.0,
    };
    let mut bound = spec.lambda2 + spec.lambda3 * arcsine + spec.lambda_n * noise;
    if spec.boundary_counts {
        log::warn!("boundary_counts: clean atoms sit on the margin and count as errors; the bound is not small");
        bound += spec.clean_weight();
    }
    Ok(bound)
}

/// Exact 0-1 error (`y·f ≤ 0`) of `Λ_{e,0}` on the distribution of `spec`.
pub fn reference_zero_one_error(spec: &AdversarialSpec) -> Result<f64> {
    spec.validate()?;
    let e = spec.direction()?;
    let noise = match &spec.noise_atoms {
        Some(m) if spec.lambda_n > 0.0 => m.expect(|x, y| (y as f64 * dot(e.as_slice(), x) <= 0.0) as u8 as f64),
        _ => 0.0,
    };
    Ok(spec.lambda2 + 0.5 * spec.lambda3 + spec.lambda_n * noise)
}

/// Fraction of samples with `y(⟨w,x⟩ + b)` inside the margin.
pub fn empirical_margin_error(
    data: &[LabeledPoint],
    w: &[f64],
    b: f64,
    gamma: f64,
    boundary_counts: bool,
) -> Result<f64> {
    if data.is_empty() {
        return domain("empty dataset");
    }
    if data.iter().any(|p| p.x.dim() != w.len()) {
        return domain("dimension mismatch between data and w");
    }
    let errs =
        data.iter().filter(|p| in_margin(p.y as f64 * (dot(p.x.as_slice(), w) + b), gamma, boundary_counts)).count();
    Ok(errs as f64 / data.len() as f64)
}

const ALPHA_GRID: [f64; 2] = [0.5, 0.25];
const BETA_GRID: [f64; 2] = [1.0, 2.0];
const THETA_GRID: [f64; 5] = [0.7, 0.8, 0.9, 0.95, 0.99];
const THETA_SLACK: f64 = 1e-6;

/// First `(α, β, θ)` on the grid (α, then β, then θ) with `β > α`,
/// `l(α) > l(β)` and `(1-θ)l(-β) + θl(β) + 1e-6 ≤ θl(α)`.
pub fn choose_theta(loss: &SurrogateLoss) -> Result<(f64, f64, f64)> {
    if !(loss.d_plus_at_0() < 0.0) {
        return Err(Error::InvalidSpec(format!("{} has a nonnegative right derivative at 0", loss.name())));
    }
    if !loss.is_convex_on_grid() {
        return Err(Error::InvalidSpec(format!("{} is not convex", loss.name())));
    }
    for alpha in ALPHA_GRID {
        for beta in BETA_GRID {
            if beta <= alpha || loss.value(alpha) <= loss.value(beta) {
                continue;
            }
            for theta in THETA_GRID {
                let lhs = (1.0 - theta) * loss.value(-beta) + theta * loss.value(beta);
                if lhs + THETA_SLACK <= theta * loss.value(alpha) {
                    return Ok((alpha, beta, theta));
                }
            }
        }
    }
    Err(Error::InvalidSpec(format!("no grid triple works for the degenerate loss {}", loss.name())))
}
