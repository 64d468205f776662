//! Study-base simulation and control-sampling designs.
//!
//! A study base is a cohort with independent disease indicators following
//! the proportional-odds model with exponential odds. Controls are then
//! drawn by one of eight designs: case-control or case-base sampling,
//! simple-random-sample or Bernoulli-trial selection, with counts and
//! probabilities pinned to either the observed or the expected case count.
//! All eight drive the case fraction of the sampled set to the same target.
//!
//! `run_simulation` replays study generation, sampling, and both likelihood
//! fits over seeded replications and summarizes bias, variance against the
//! limiting information, and Wald coverage.

use crate::logistic::{
    asymptotic_variance_weighted, clogit_fit, ulogit_fit, CaseControlSet, ExponentialOdds,
    LimitFunctionals, Member,
};
use crate::rejective::{tilt_lambda, WeightedPopulation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("study base size must be positive")]
    EmptyBase,
    #[error("bernoulli parameter pi = {pi} must lie strictly inside (0, 1)")]
    BadBernoulli { pi: f64 },
    #[error("normal generator needs finite mean and positive sd (got {mean}, {sd})")]
    BadNormal { mean: f64, sd: f64 },
    #[error("fixed covariate rows must be nonempty with uniform dimension")]
    BadFixedRows,
    #[error("drift mixture fraction {fraction} must lie strictly inside (0, 1)")]
    BadMixture { fraction: f64 },
    #[error("drift regimes must share one covariate dimension")]
    MixtureDimensionMismatch,
    #[error("baseline odds {lambda0} must be positive and finite")]
    BadBaseline { lambda0: f64 },
    #[error("beta0 dimension {got} does not match covariate dimension {expected}")]
    BetaDimension { got: usize, expected: usize },
    #[error("target case fraction f = {f} must lie strictly inside (0, 1)")]
    BadFraction { f: f64 },
    #[error("expected-count designs need p_hint strictly inside (0, 1), got {p}")]
    BadPHint { p: f64 },
    #[error("study base has no cases")]
    NoCases,
    #[error("study base has no non-cases to sample from")]
    NoNonCases,
    #[error("sampled set has no controls")]
    NoControlsSampled,
    #[error("replication count must be positive")]
    NoReplications,
    #[error("limit functionals unavailable: {0}")]
    Limit(#[from] crate::logistic::LogitError),
}

/// Covariate generator for the study base.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateGenerator {
    /// Explicit rows, one per subject, recycled if the base is larger.
    Fixed { rows: Vec<Vec<f64>> },
    /// Scalar z drawn i.i.d. Bernoulli(pi).
    IidBernoulli { pi: f64 },
    /// Scalar z drawn i.i.d. normal.
    IidNormal { mean: f64, sd: f64 },
    /// Two index-contiguous regimes with their own generators: subjects in
    /// the leading fraction use `first`, the rest `second`. Models cohorts
    /// whose covariate distribution drifted over accrual, where the
    /// covariates are independent but not identically distributed.
    DriftMixture {
        fraction_first: f64,
        first: Box<CovariateGenerator>,
        second: Box<CovariateGenerator>,
    },
}

impl CovariateGenerator {
    pub fn validate(&self) -> Result<(), DesignError> {
        match self {
            CovariateGenerator::Fixed { rows } => {
                if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len()) {
                    return Err(DesignError::BadFixedRows);
                }
                Ok(())
            }
            CovariateGenerator::IidBernoulli { pi } => {
                if !(*pi > 0.0 && *pi < 1.0) {
                    return Err(DesignError::BadBernoulli { pi: *pi });
                }
                Ok(())
            }
            CovariateGenerator::IidNormal { mean, sd } => {
                if !mean.is_finite() || !(*sd > 0.0 && sd.is_finite()) {
                    return Err(DesignError::BadNormal {
                        mean: *mean,
                        sd: *sd,
                    });
                }
                Ok(())
            }
            CovariateGenerator::DriftMixture {
                fraction_first,
                first,
                second,
            } => {
                if !(*fraction_first > 0.0 && *fraction_first < 1.0) {
                    return Err(DesignError::BadMixture {
                        fraction: *fraction_first,
                    });
                }
                first.validate()?;
                second.validate()?;
                if first.dim() != second.dim() {
                    return Err(DesignError::MixtureDimensionMismatch);
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CovariateGenerator::Fixed { rows } => rows.first().map_or(0, |r| r.len()),
            CovariateGenerator::IidBernoulli { .. } | CovariateGenerator::IidNormal { .. } => 1,
            CovariateGenerator::DriftMixture { first, .. } => first.dim(),
        }
    }

    fn generate(&self, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        match self {
            CovariateGenerator::Fixed { rows } => {
                (0..n).map(|i| rows[i % rows.len()].clone()).collect()
            }
            CovariateGenerator::IidBernoulli { pi } => (0..n)
                .map(|_| vec![if rng.gen::<f64>() < *pi { 1.0 } else { 0.0 }])
                .collect(),
            CovariateGenerator::IidNormal { mean, sd } => {
                let dist = Normal::new(*mean, *sd).expect("validated");
                (0..n).map(|_| vec![dist.sample(rng)]).collect()
            }
            CovariateGenerator::DriftMixture {
                fraction_first,
                first,
                second,
            } => {
                let n1 = (fraction_first * n as f64).round() as usize;
                let mut rows = first.generate(n1.min(n), rng);
                rows.extend(second.generate(n - n1.min(n), rng));
                rows
            }
        }
    }

    /// Weighted covariate atoms representing the limiting study-base
    /// distribution, for the limit functionals. Continuous generators are
    /// discretized on a fine quantile grid.
    pub fn reference_atoms(&self) -> Vec<(Vec<f64>, f64)> {
        match self {
            CovariateGenerator::Fixed { rows } => {
                rows.iter().map(|r| (r.clone(), 1.0)).collect()
            }
            CovariateGenerator::IidBernoulli { pi } => {
                vec![(vec![1.0], *pi), (vec![0.0], 1.0 - pi)]
            }
            CovariateGenerator::IidNormal { mean, sd } => {
                let std_normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
                let m = 2001;
                (0..m)
                    .map(|i| {
                        let u = (i as f64 + 0.5) / m as f64;
                        (vec![mean + sd * std_normal.inverse_cdf(u)], 1.0)
                    })
                    .collect()
            }
            CovariateGenerator::DriftMixture {
                fraction_first,
                first,
                second,
            } => {
                let mut atoms = Vec::new();
                let a1 = first.reference_atoms();
                let t1: f64 = a1.iter().map(|(_, w)| w).sum();
                for (z, w) in a1 {
                    atoms.push((z, fraction_first * w / t1));
                }
                let a2 = second.reference_atoms();
                let t2: f64 = a2.iter().map(|(_, w)| w).sum();
                for (z, w) in a2 {
                    atoms.push((z, (1.0 - fraction_first) * w / t2));
                }
                atoms
            }
        }
    }
}

/// Study-base configuration: cohort size, covariate law, and the true
/// parameters of the exponential-odds disease model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaseConfig {
    pub n: usize,
    pub covariates: CovariateGenerator,
    pub lambda0: f64,
    pub beta0: Vec<f64>,
}

impl BaseConfig {
    pub fn validate(&self) -> Result<(), DesignError> {
        if self.n == 0 {
            return Err(DesignError::EmptyBase);
        }
        self.covariates.validate()?;
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(DesignError::BadBaseline {
                lambda0: self.lambda0,
            });
        }
        if self.beta0.len() != self.covariates.dim() {
            return Err(DesignError::BetaDimension {
                got: self.beta0.len(),
                expected: self.covariates.dim(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Subject {
    pub id: String,
    pub z: Vec<f64>,
    pub is_case: bool,
}

/// A simulated cohort with independent disease indicators.
#[derive(Clone, Debug)]
pub struct StudyBase {
    pub subjects: Vec<Subject>,
    pub lambda0: f64,
    pub beta0: Vec<f64>,
}

impl StudyBase {
    pub fn case_count(&self) -> usize {
        self.subjects.iter().filter(|s| s.is_case).count()
    }
}

/// Disease probability of the exponential-odds model.
fn disease_probability(z: &[f64], lambda0: f64, beta0: &[f64]) -> f64 {
    let x = z
        .iter()
        .zip(beta0)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        .exp();
    lambda0 * x / (1.0 + lambda0 * x)
}

pub fn generate_study_base(config: &BaseConfig, seed: u64) -> Result<StudyBase, DesignError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    generate_study_base_with_rng(config, &mut rng)
}

pub fn generate_study_base_with_rng(
    config: &BaseConfig,
    rng: &mut impl Rng,
) -> Result<StudyBase, DesignError> {
    config.validate()?;
    let zs = config.covariates.generate(config.n, rng);
    let subjects = zs
        .into_iter()
        .enumerate()
        .map(|(i, z)| {
            let p = disease_probability(&z, config.lambda0, &config.beta0);
            Subject {
                id: format!("s{i}"),
                is_case: rng.gen::<f64>() < p,
                z,
            }
        })
        .collect();
    Ok(StudyBase {
        subjects,
        lambda0: config.lambda0,
        beta0: config.beta0.clone(),
    })
}

/// Sampling family: control sampling draws from the non-cases, case-base
/// sampling draws from the whole cohort (cases fold into the set).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignFamily {
    CcSrs,
    CcBt,
    CbSrs,
    CbBt,
}

impl DesignFamily {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cc_srs" => Some(DesignFamily::CcSrs),
            "cc_bt" => Some(DesignFamily::CcBt),
            "cb_srs" => Some(DesignFamily::CbSrs),
            "cb_bt" => Some(DesignFamily::CbBt),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DesignFamily::CcSrs => "cc_srs",
            DesignFamily::CcBt => "cc_bt",
            DesignFamily::CbSrs => "cb_srs",
            DesignFamily::CbBt => "cb_bt",
        }
    }
}

/// Whether counts and probabilities are pinned to the realized case count
/// or to the expected one computed from `p_hint`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountBasis {
    Observed,
    Expected,
}

impl CountBasis {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "observed" => Some(CountBasis::Observed),
            "expected" => Some(CountBasis::Expected),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CountBasis::Observed => "observed",
            CountBasis::Expected => "expected",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DesignSpec {
    pub family: DesignFamily,
    pub basis: CountBasis,
    /// Target case fraction of the sampled set.
    pub f: f64,
    /// Population case fraction used by expected-basis designs.
    pub p_hint: f64,
}

impl DesignSpec {
    pub fn validate(&self) -> Result<(), DesignError> {
        if !(self.f > 0.0 && self.f < 1.0) {
            return Err(DesignError::BadFraction { f: self.f });
        }
        if self.basis == CountBasis::Expected && !(self.p_hint > 0.0 && self.p_hint < 1.0) {
            return Err(DesignError::BadPHint { p: self.p_hint });
        }
        Ok(())
    }

    /// All eight designs.
    pub fn all_families(f: f64, p_hint: f64) -> Vec<DesignSpec> {
        let mut out = Vec::with_capacity(8);
        for family in [
            DesignFamily::CcSrs,
            DesignFamily::CcBt,
            DesignFamily::CbSrs,
            DesignFamily::CbBt,
        ] {
            for basis in [CountBasis::Observed, CountBasis::Expected] {
                out.push(DesignSpec {
                    family,
                    basis,
                    f,
                    p_hint,
                });
            }
        }
        out
    }
}

/// A sampled case-control set plus sampling metadata.
#[derive(Clone, Debug)]
pub struct SampledSet {
    pub set: CaseControlSet,
    /// Count or probability was clamped to the feasible range.
    pub clamped: bool,
}

pub fn sample_controls(
    base: &StudyBase,
    spec: &DesignSpec,
    seed: u64,
) -> Result<SampledSet, DesignError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    sample_controls_with_rng(base, spec, &mut rng)
}

pub fn sample_controls_with_rng(
    base: &StudyBase,
    spec: &DesignSpec,
    rng: &mut impl Rng,
) -> Result<SampledSet, DesignError> {
    spec.validate()?;
    let n = base.subjects.len();
    let case_idx: Vec<usize> = (0..n).filter(|&i| base.subjects[i].is_case).collect();
    let noncase_idx: Vec<usize> = (0..n).filter(|&i| !base.subjects[i].is_case).collect();
    let d = case_idx.len();
    if d == 0 {
        return Err(DesignError::NoCases);
    }
    if noncase_idx.is_empty() {
        return Err(DesignError::NoNonCases);
    }
    let ratio = (1.0 - spec.f) / spec.f;
    // Observed-basis designs scale by |D| / (N - |D|) or use |D| directly;
    // expected-basis designs use p_hint counterparts.
    let mut clamped = false;
    let mut selected = vec![false; n];
    for &i in &case_idx {
        selected[i] = true;
    }
    match spec.family {
        DesignFamily::CcSrs => {
            let m_raw = match spec.basis {
                CountBasis::Observed => d as f64 * ratio,
                CountBasis::Expected => n as f64 * spec.p_hint * ratio,
            };
            let m = clamp_count(m_raw, noncase_idx.len(), &mut clamped);
            for k in rand::seq::index::sample(rng, noncase_idx.len(), m) {
                selected[noncase_idx[k]] = true;
            }
        }
        DesignFamily::CcBt => {
            let pr_raw = match spec.basis {
                CountBasis::Observed => ratio * d as f64 / (n - d) as f64,
                CountBasis::Expected => ratio * spec.p_hint / (1.0 - spec.p_hint),
            };
            let pr = clamp_prob(pr_raw, &mut clamped);
            for &i in &noncase_idx {
                if rng.gen::<f64>() < pr {
                    selected[i] = true;
                }
            }
        }
        DesignFamily::CbSrs => {
            let m_raw = match spec.basis {
                CountBasis::Observed => n as f64 * ratio * d as f64 / (n - d) as f64,
                CountBasis::Expected => n as f64 * ratio * spec.p_hint / (1.0 - spec.p_hint),
            };
            let m = clamp_count(m_raw, n, &mut clamped);
            for k in rand::seq::index::sample(rng, n, m) {
                // Cases drawn from the base fold into the set once.
                selected[k] = true;
            }
        }
        DesignFamily::CbBt => {
            let pr_raw = match spec.basis {
                CountBasis::Observed => ratio * d as f64 / (n - d) as f64,
                CountBasis::Expected => ratio * spec.p_hint / (1.0 - spec.p_hint),
            };
            let pr = clamp_prob(pr_raw, &mut clamped);
            for i in 0..n {
                if rng.gen::<f64>() < pr {
                    selected[i] = true;
                }
            }
        }
    }
    let members: Vec<Member> = (0..n)
        .filter(|&i| selected[i])
        .map(|i| Member {
            id: base.subjects[i].id.clone(),
            z: base.subjects[i].z.clone(),
            is_case: base.subjects[i].is_case,
        })
        .collect();
    if members.iter().all(|m| m.is_case) {
        return Err(DesignError::NoControlsSampled);
    }
    let set = CaseControlSet::new(members).expect("cases and controls both present");
    Ok(SampledSet { set, clamped })
}

/// Round to nearest (ties to even) and clamp to the available pool.
fn clamp_count(raw: f64, available: usize, clamped: &mut bool) -> usize {
    let rounded = raw.round_ties_even().max(0.0) as usize;
    if rounded > available {
        *clamped = true;
        available
    } else {
        rounded
    }
}

fn clamp_prob(raw: f64, clamped: &mut bool) -> f64 {
    if raw > 1.0 {
        *clamped = true;
        1.0
    } else {
        raw
    }
}

/// Which likelihoods the harness fits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fitter {
    Clogit,
    Ulogit,
}

impl Fitter {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "clogit" => Some(Fitter::Clogit),
            "ulogit" => Some(Fitter::Ulogit),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Fitter::Clogit => "clogit",
            Fitter::Ulogit => "ulogit",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    pub base: BaseConfig,
    pub design: DesignSpec,
    pub replications: usize,
    pub fitters: Vec<Fitter>,
}

/// One fit attempt inside a replication.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitOutcome {
    pub converged: bool,
    pub beta: Vec<f64>,
    pub alpha: Option<f64>,
    pub se_beta: Vec<f64>,
    pub error: Option<String>,
}

/// One replication: the realized set shape and per-fitter outcomes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RepRecord {
    pub index: usize,
    pub skipped: Option<String>,
    pub eta: usize,
    pub size: usize,
    pub clamped: bool,
    pub clogit: Option<FitOutcome>,
    pub ulogit: Option<FitOutcome>,
    /// Log tilt of the realized set at the true parameters; the natural
    /// centering for the unconditional intercept.
    pub alpha_center: Option<f64>,
}

/// Summary over converged, non-skipped replications for one fitter.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitterSummary {
    pub fitter: String,
    pub n_used: usize,
    /// mean(beta_hat) - beta0, per coordinate.
    pub bias: Vec<f64>,
    /// Monte Carlo standard error of the bias estimate.
    pub mc_se: Vec<f64>,
    /// Empirical variance of sqrt(N) (beta_hat - beta0).
    pub var_sqrt_n: Vec<f64>,
    /// var_sqrt_n over the limiting variance diagonal.
    pub var_ratio: Vec<f64>,
    /// Fraction of 95% Wald intervals covering beta0.
    pub coverage95: Vec<f64>,
}

/// Limiting reference values the summaries are judged against.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReferenceValues {
    pub p: f64,
    pub rho_f: f64,
    pub lambda_f: f64,
    pub e0: f64,
    pub sigma_inv_diag: Vec<f64>,
    /// Limiting variance of sqrt(N) (alpha_tilde - alpha_center).
    pub alpha_variance_limit: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulationReport {
    pub replications: usize,
    pub n_skipped: usize,
    pub n_clamped: usize,
    pub records: Vec<RepRecord>,
    pub summaries: Vec<FitterSummary>,
    /// Pearson correlation of the two estimators per coordinate, over
    /// replications where both converged.
    pub estimator_correlation: Option<Vec<f64>>,
    pub median_abs_difference: Option<Vec<f64>>,
    /// N times the empirical variance of (alpha_tilde - alpha_center).
    pub alpha_variance_sqrt_n: Option<f64>,
    pub reference: ReferenceValues,
}

/// Deterministic per-replication seed: a splitmix64 finalizer over the run
/// seed and the replication index.
pub fn replication_seed(seed: u64, r: u64) -> u64 {
    let mut x = seed ^ r.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Limit functionals for a base/design pair, via the generator's reference
/// atoms.
pub fn limit_functionals_for(
    base: &BaseConfig,
    design: &DesignSpec,
) -> Result<LimitFunctionals, DesignError> {
    let model = ExponentialOdds {
        dim: base.covariates.dim(),
    };
    Ok(asymptotic_variance_weighted(
        &base.covariates.reference_atoms(),
        &model,
        &base.beta0,
        base.lambda0,
        design.f,
    )?)
}

pub fn run_simulation(cfg: &SimConfig, seed: u64) -> Result<SimulationReport, DesignError> {
    cfg.base.validate()?;
    cfg.design.validate()?;
    if cfg.replications == 0 {
        return Err(DesignError::NoReplications);
    }
    let p_dim = cfg.base.covariates.dim();
    let model = ExponentialOdds { dim: p_dim };
    let limits = limit_functionals_for(&cfg.base, &cfg.design)?;
    let sigma_inv = limits.sigma_inv();
    let upsilon_inv = limits.upsilon_inv();
    let reference = ReferenceValues {
        p: limits.p,
        rho_f: limits.rho_f,
        lambda_f: limits.lambda_f,
        e0: limits.e0,
        sigma_inv_diag: (0..p_dim).map(|j| sigma_inv[(j, j)]).collect(),
        alpha_variance_limit: upsilon_inv[(0, 0)] - 1.0 / limits.e0,
    };

    let mut records = Vec::with_capacity(cfg.replications);
    for r in 0..cfg.replications {
        let mut rng = ChaCha12Rng::seed_from_u64(replication_seed(seed, r as u64));
        let base = generate_study_base_with_rng(&cfg.base, &mut rng)?;
        let sampled = match sample_controls_with_rng(&base, &cfg.design, &mut rng) {
            Ok(s) => s,
            Err(e @ (DesignError::NoCases | DesignError::NoNonCases | DesignError::NoControlsSampled)) => {
                records.push(RepRecord {
                    index: r,
                    skipped: Some(e.to_string()),
                    eta: 0,
                    size: 0,
                    clamped: false,
                    clogit: None,
                    ulogit: None,
                    alpha_center: None,
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let set = &sampled.set;
        let alpha_center = tilt_of_set(set, &cfg.base);
        let mut record = RepRecord {
            index: r,
            skipped: None,
            eta: set.eta(),
            size: set.len(),
            clamped: sampled.clamped,
            clogit: None,
            ulogit: None,
            alpha_center,
        };
        for fitter in &cfg.fitters {
            match fitter {
                Fitter::Clogit => {
                    record.clogit =
                        Some(outcome_from(clogit_fit(set, &model, &vec![0.0; p_dim])));
                }
                Fitter::Ulogit => {
                    record.ulogit = Some(outcome_from(ulogit_fit(set, &model)));
                }
            }
        }
        records.push(record);
    }

    let n_skipped = records.iter().filter(|r| r.skipped.is_some()).count();
    let n_clamped = records.iter().filter(|r| r.clamped).count();
    let n_base = cfg.base.n as f64;
    let mut summaries = Vec::new();
    for fitter in &cfg.fitters {
        let pick = |rec: &RepRecord| -> Option<FitOutcome> {
            match fitter {
                Fitter::Clogit => rec.clogit.clone(),
                Fitter::Ulogit => rec.ulogit.clone(),
            }
        };
        let used: Vec<FitOutcome> = records
            .iter()
            .filter(|r| r.skipped.is_none())
            .filter_map(|r| pick(r))
            .filter(|o| o.converged)
            .collect();
        summaries.push(summarize(
            fitter.name(),
            &used,
            &cfg.base.beta0,
            n_base,
            &reference.sigma_inv_diag,
        ));
    }

    let pairs: Vec<(&FitOutcome, &FitOutcome)> = records
        .iter()
        .filter(|r| r.skipped.is_none())
        .filter_map(|r| match (&r.clogit, &r.ulogit) {
            (Some(c), Some(u)) if c.converged && u.converged => Some((c, u)),
            _ => None,
        })
        .collect();
    let (estimator_correlation, median_abs_difference) = if pairs.len() >= 3 {
        let mut corr = Vec::with_capacity(p_dim);
        let mut med = Vec::with_capacity(p_dim);
        for j in 0..p_dim {
            let a: Vec<f64> = pairs.iter().map(|(c, _)| c.beta[j]).collect();
            let b: Vec<f64> = pairs.iter().map(|(_, u)| u.beta[j]).collect();
            corr.push(pearson(&a, &b));
            let mut d: Vec<f64> = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y).abs())
                .collect();
            d.sort_by(|x, y| x.partial_cmp(y).unwrap());
            med.push(d[d.len() / 2]);
        }
        (Some(corr), Some(med))
    } else {
        (None, None)
    };

    let alpha_devs: Vec<f64> = records
        .iter()
        .filter(|r| r.skipped.is_none())
        .filter_map(|r| match (&r.ulogit, r.alpha_center) {
            (Some(u), Some(center)) if u.converged => u.alpha.map(|a| a - center),
            _ => None,
        })
        .collect();
    let alpha_variance_sqrt_n = if alpha_devs.len() >= 3 {
        Some(n_base * variance(&alpha_devs))
    } else {
        None
    };

    Ok(SimulationReport {
        replications: cfg.replications,
        n_skipped,
        n_clamped,
        records,
        summaries,
        estimator_correlation,
        median_abs_difference,
        alpha_variance_sqrt_n,
        reference,
    })
}

/// Log tilt of the sampled set's true odds weights at its case count.
fn tilt_of_set(set: &CaseControlSet, base: &BaseConfig) -> Option<f64> {
    let items: Vec<(String, f64)> = set
        .members()
        .iter()
        .map(|m| {
            let x = m
                .z
                .iter()
                .zip(&base.beta0)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .exp();
            (m.id.clone(), x)
        })
        .collect();
    let pop = WeightedPopulation::new(items).ok()?;
    tilt_lambda(&pop, set.eta()).ok().map(|l| l.ln())
}

fn outcome_from(res: Result<crate::logistic::FitResult, crate::logistic::LogitError>) -> FitOutcome {
    match res {
        Ok(fit) => {
            let cov = fit.beta_covariance();
            FitOutcome {
                converged: fit.converged,
                beta: fit.beta_hat.iter().copied().collect(),
                alpha: fit.alpha_hat,
                se_beta: (0..fit.beta_hat.len())
                    .map(|j| cov[(j, j)].max(0.0).sqrt())
                    .collect(),
                error: None,
            }
        }
        Err(e) => FitOutcome {
            converged: false,
            beta: Vec::new(),
            alpha: None,
            se_beta: Vec::new(),
            error: Some(e.to_string()),
        },
    }
}

fn summarize(
    name: &str,
    used: &[FitOutcome],
    beta0: &[f64],
    n_base: f64,
    sigma_inv_diag: &[f64],
) -> FitterSummary {
    let p = beta0.len();
    let m = used.len();
    let mut bias = vec![f64::NAN; p];
    let mut mc_se = vec![f64::NAN; p];
    let mut var_sqrt_n = vec![f64::NAN; p];
    let mut var_ratio = vec![f64::NAN; p];
    let mut coverage = vec![f64::NAN; p];
    if m >= 3 {
        for j in 0..p {
            let est: Vec<f64> = used.iter().map(|o| o.beta[j]).collect();
            let mean = est.iter().sum::<f64>() / m as f64;
            let var = variance(&est);
            bias[j] = mean - beta0[j];
            mc_se[j] = (var / m as f64).sqrt();
            var_sqrt_n[j] = n_base * var;
            var_ratio[j] = var_sqrt_n[j] / sigma_inv_diag[j];
            let covered = used
                .iter()
                .filter(|o| (o.beta[j] - beta0[j]).abs() <= 1.96 * o.se_beta[j])
                .count();
            coverage[j] = covered as f64 / m as f64;
        }
    }
    FitterSummary {
        fitter: name.to_string(),
        n_used: m,
        bias,
        mc_se,
        var_sqrt_n,
        var_ratio,
        coverage95: coverage,
    }
}

fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Solve the baseline odds that gives a target population case fraction
/// under the generator's limiting covariate distribution.
pub fn solve_lambda0_for_case_fraction(
    cov: &CovariateGenerator,
    beta0: &[f64],
    target_p: f64,
) -> Result<f64, DesignError> {
    cov.validate()?;
    if !(target_p > 0.0 && target_p < 1.0) {
        return Err(DesignError::BadPHint { p: target_p });
    }
    let atoms = cov.reference_atoms();
    let total: f64 = atoms.iter().map(|(_, w)| w).sum();
    let xs: Vec<(f64, f64)> = atoms
        .iter()
        .map(|(z, w)| {
            let x = z
                .iter()
                .zip(beta0)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .exp();
            (x, w / total)
        })
        .collect();
    let mean_p = |ln_l: f64| -> f64 {
        let l = ln_l.exp();
        xs.iter().map(|(x, w)| w * l * x / (1.0 + l * x)).sum()
    };
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < target_p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standard_base() -> BaseConfig {
        let cov = CovariateGenerator::IidBernoulli { pi: 0.5 };
        let beta0 = vec![2.0f64.ln()];
        let lambda0 = solve_lambda0_for_case_fraction(&cov, &beta0, 0.2).unwrap();
        BaseConfig {
            n: 2000,
            covariates: cov,
            lambda0,
            beta0,
        }
    }

    #[test]
    fn lambda0_solver_hits_target() {
        let base = standard_base();
        let atoms = base.covariates.reference_atoms();
        let p: f64 = atoms
            .iter()
            .map(|(z, w)| {
                let x = (z[0] * base.beta0[0]).exp();
                w * base.lambda0 * x / (1.0 + base.lambda0 * x)
            })
            .sum::<f64>()
            / atoms.iter().map(|(_, w)| w).sum::<f64>();
        assert!((p - 0.2).abs() < 1e-10);
    }

    #[test]
    fn base_generation_is_deterministic_and_marginals_match() {
        let cfg = BaseConfig {
            n: 100_000,
            covariates: CovariateGenerator::IidBernoulli { pi: 0.5 },
            lambda0: 0.1,
            beta0: vec![2.0f64.ln()],
        };
        let a = generate_study_base(&cfg, 11).unwrap();
        let b = generate_study_base(&cfg, 11).unwrap();
        assert_eq!(a.case_count(), b.case_count());
        assert_eq!(a.subjects[17].z, b.subjects[17].z);
        // Analytic case fraction: mean of 0.1/1.1 and 0.2/1.2.
        let p = 0.5 * (0.1 / 1.1) + 0.5 * (0.2 / 1.2);
        let sd = (p * (1.0 - p) / cfg.n as f64).sqrt();
        let observed = a.case_count() as f64 / cfg.n as f64;
        assert!(
            (observed - p).abs() < 4.0 * sd,
            "case fraction {observed} vs {p}"
        );
    }

    #[test]
    fn flat_truth_gives_constant_rate() {
        let cfg = BaseConfig {
            n: 50_000,
            covariates: CovariateGenerator::IidNormal { mean: 0.0, sd: 1.0 },
            lambda0: 0.25,
            beta0: vec![0.0],
        };
        let base = generate_study_base(&cfg, 3).unwrap();
        let p = 0.25 / 1.25;
        let sd = (p * (1.0 - p) / cfg.n as f64).sqrt();
        let observed = base.case_count() as f64 / cfg.n as f64;
        assert!((observed - p).abs() < 4.0 * sd);
    }

    #[test]
    fn drift_mixture_per_regime_rates() {
        let cfg = BaseConfig {
            n: 100_000,
            covariates: CovariateGenerator::DriftMixture {
                fraction_first: 0.5,
                first: Box::new(CovariateGenerator::IidBernoulli { pi: 0.25 }),
                second: Box::new(CovariateGenerator::IidBernoulli { pi: 0.75 }),
            },
            lambda0: 0.1,
            beta0: vec![2.0f64.ln()],
        };
        let base = generate_study_base(&cfg, 5).unwrap();
        let half = cfg.n / 2;
        for (lo, hi, pi) in [(0, half, 0.25), (half, cfg.n, 0.75)] {
            let p = (1.0 - pi) * (0.1 / 1.1) + pi * (0.2 / 1.2);
            let m = hi - lo;
            let cases = base.subjects[lo..hi].iter().filter(|s| s.is_case).count();
            let sd = (p * (1.0 - p) / m as f64).sqrt();
            let observed = cases as f64 / m as f64;
            assert!(
                (observed - p).abs() < 4.0 * sd,
                "regime [{lo},{hi}) rate {observed} vs {p}"
            );
        }
        // Pooled reference atoms carry the mixture weights.
        let atoms = cfg.covariates.reference_atoms();
        let w1: f64 = atoms
            .iter()
            .filter(|(z, _)| z[0] == 1.0)
            .map(|(_, w)| w)
            .sum();
        assert!((w1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cc_srs_observed_hits_exact_fraction() {
        let base = generate_study_base(&standard_base(), 21).unwrap();
        let spec = DesignSpec {
            family: DesignFamily::CcSrs,
            basis: CountBasis::Observed,
            f: 0.5,
            p_hint: 0.2,
        };
        let s = sample_controls(&base, &spec, 9).unwrap();
        assert_eq!(s.set.eta() * 2, s.set.len());
        assert!(!s.clamped);
    }

    #[test]
    fn all_designs_concentrate_on_target_fraction() {
        let cfg = standard_base();
        for spec in DesignSpec::all_families(0.5, 0.2) {
            let mut sum = 0.0;
            let mut count = 0;
            for r in 0..60 {
                let mut rng = ChaCha12Rng::seed_from_u64(replication_seed(1234, r));
                let base = generate_study_base_with_rng(&cfg, &mut rng).unwrap();
                let s = sample_controls_with_rng(&base, &spec, &mut rng).unwrap();
                assert!(s.set.len() <= cfg.n);
                // Every case of the base is in the set.
                assert_eq!(s.set.eta(), base.case_count());
                sum += s.set.eta() as f64 / s.set.len() as f64;
                count += 1;
            }
            let mean = sum / count as f64;
            assert!(
                (mean - 0.5).abs() < 0.02,
                "{}/{}: mean fraction {mean}",
                spec.family.name(),
                spec.basis.name()
            );
        }
    }

    #[test]
    fn fraction_variance_decreases_with_base_size() {
        for spec in DesignSpec::all_families(0.5, 0.2) {
            let mut vars = Vec::new();
            for &n in &[1000usize, 10_000, 100_000] {
                let cfg = BaseConfig {
                    n,
                    ..standard_base()
                };
                let fracs: Vec<f64> = (0..40)
                    .map(|r| {
                        let mut rng =
                            ChaCha12Rng::seed_from_u64(replication_seed(777, r));
                        let base = generate_study_base_with_rng(&cfg, &mut rng).unwrap();
                        let s = sample_controls_with_rng(&base, &spec, &mut rng).unwrap();
                        s.set.eta() as f64 / s.set.len() as f64
                    })
                    .collect();
                vars.push(variance(&fracs));
            }
            if vars[0] > 1e-12 {
                assert!(
                    vars[0] > vars[1] && vars[1] > vars[2],
                    "{}/{}: variances {vars:?}",
                    spec.family.name(),
                    spec.basis.name()
                );
            } else {
                // Count-matched sampling pins the fraction exactly; the
                // variance is identically zero at every size.
                assert!(vars.iter().all(|v| *v < 1e-12));
            }
        }
    }

    #[test]
    fn clamping_is_flagged() {
        // f so small that the control demand outstrips the pool.
        let base = generate_study_base(&standard_base(), 4).unwrap();
        let spec = DesignSpec {
            family: DesignFamily::CcSrs,
            basis: CountBasis::Observed,
            f: 0.05,
            p_hint: 0.2,
        };
        let s = sample_controls(&base, &spec, 4).unwrap();
        assert!(s.clamped);
        assert_eq!(s.set.len(), base.subjects.len());
    }

    #[test]
    fn simulation_report_is_deterministic() {
        let cfg = SimConfig {
            base: BaseConfig {
                n: 400,
                ..standard_base()
            },
            design: DesignSpec {
                family: DesignFamily::CcSrs,
                basis: CountBasis::Observed,
                f: 0.5,
                p_hint: 0.2,
            },
            replications: 8,
            fitters: vec![Fitter::Clogit, Fitter::Ulogit],
        };
        let a = run_simulation(&cfg, 99).unwrap();
        let b = run_simulation(&cfg, 99).unwrap();
        let ja = serde_json::to_string(&a).unwrap();
        let jb = serde_json::to_string(&b).unwrap();
        assert_eq!(ja, jb);
        assert_eq!(a.records.len(), 8);
        assert!(a.summaries.iter().all(|s| s.n_used > 0));
    }

    #[test]
    fn null_truth_has_no_bias() {
        let cov = CovariateGenerator::IidBernoulli { pi: 0.5 };
        let cfg = SimConfig {
            base: BaseConfig {
                n: 500,
                covariates: cov,
                lambda0: 0.25,
                beta0: vec![0.0],
            },
            design: DesignSpec {
                family: DesignFamily::CcSrs,
                basis: CountBasis::Observed,
                f: 0.5,
                p_hint: 0.2,
            },
            replications: 120,
            fitters: vec![Fitter::Clogit, Fitter::Ulogit],
        };
        let report = run_simulation(&cfg, 2024).unwrap();
        for s in &report.summaries {
            assert!(
                s.bias[0].abs() < 3.0 * s.mc_se[0],
                "{}: bias {} vs mc_se {}",
                s.fitter,
                s.bias[0],
                s.mc_se[0]
            );
        }
    }
}
