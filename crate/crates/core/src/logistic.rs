//! Conditional and unconditional logistic likelihoods for case-control data.
//!
//! The conditional likelihood is the probability of the observed case set
//! given the case-control set and the case count; its normalizing constant
//! is an elementary symmetric polynomial in the per-subject odds weights.
//! Value, gradient, and Hessian are carried through one joint recursion over
//! subjects, linear in the case count, with per-column exponent tracking so
//! arbitrarily large sets stay in range. The unconditional likelihood is the
//! plain product-Bernoulli likelihood with a baseline log-odds intercept.
//!
//! Both likelihoods are concave for the exponential odds model; fits run
//! Newton-Raphson with step-halving. `asymptotic_variance` evaluates the
//! limiting information functionals that both estimators share.

use crate::scaled::Scaled;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LogitError {
    #[error("case-control set must be nonempty")]
    EmptySet,
    #[error("duplicate subject id '{id}'")]
    DuplicateId { id: String },
    #[error("covariate dimension mismatch: subject '{id}' has {got}, expected {expected}")]
    DimensionMismatch {
        id: String,
        got: usize,
        expected: usize,
    },
    #[error("case count {eta} out of range for set of size {size}: need at least one case and one control")]
    EtaOutOfRange { eta: usize, size: usize },
    #[error("parameter dimension {got} does not match model dimension {expected}")]
    BetaDimension { got: usize, expected: usize },
    #[error("odds weight overflow or non-positive value at beta = {beta:?} (subject '{id}')")]
    WeightOverflow { beta: Vec<f64>, id: String },
    #[error("information matrix singular (condition number {condition:.3e})")]
    SingularInformation { condition: f64 },
    #[error("separation detected: |beta| reached {norm:.2} during iteration")]
    Separation { norm: f64 },
    #[error("population for limit functionals must be nonempty")]
    EmptyPopulation,
    #[error("sampling fraction f = {f} must lie strictly inside (0, 1)")]
    BadFraction { f: f64 },
    #[error("baseline odds {lambda0} must be positive and finite")]
    BadBaseline { lambda0: f64 },
    #[error("limit information matrix is not positive definite (degenerate covariates)")]
    DegenerateInformation,
}

/// An odds-ratio model: maps a covariate vector and parameter to the odds
/// weight together with its first two parameter derivatives. Normalized so
/// the weight is 1 at beta = 0 and at z = 0.
pub trait OddsModel {
    fn dim(&self) -> usize;
    fn eval(&self, z: &[f64], beta: &[f64]) -> OddsEval;
    /// True when the effective covariate `x' / x` does not depend on beta;
    /// evaluation then skips derivative blocks that vanish identically.
    fn constant_effective_covariates(&self) -> bool {
        false
    }
}

/// Odds weight and derivatives at one covariate vector: `d2x` is row-major
/// p-by-p.
pub struct OddsEval {
    pub x: f64,
    pub dx: Vec<f64>,
    pub d2x: Vec<f64>,
}

/// The exponential odds model `x = exp(beta . z)`; effective covariates
/// equal the raw covariates.
#[derive(Clone, Debug)]
pub struct ExponentialOdds {
    pub dim: usize,
}

impl OddsModel for ExponentialOdds {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, z: &[f64], beta: &[f64]) -> OddsEval {
        let u: f64 = z.iter().zip(beta).map(|(a, b)| a * b).sum();
        let x = u.exp();
        let dx: Vec<f64> = z.iter().map(|&zi| x * zi).collect();
        let p = self.dim;
        let mut d2x = vec![0.0; p * p];
        for r in 0..p {
            for c in 0..p {
                d2x[r * p + c] = x * z[r] * z[c];
            }
        }
        OddsEval { x, dx, d2x }
    }

    fn constant_effective_covariates(&self) -> bool {
        true
    }
}

/// One subject of a case-control set.
#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    pub id: String,
    pub z: Vec<f64>,
    pub is_case: bool,
}

/// A case-control set: subjects with covariates and failure indicators,
/// with at least one case and one control and uniform covariate dimension.
#[derive(Clone, Debug)]
pub struct CaseControlSet {
    members: Vec<Member>,
    eta: usize,
    dim: usize,
}

impl CaseControlSet {
    pub fn new(members: Vec<Member>) -> Result<Self, LogitError> {
        if members.is_empty() {
            return Err(LogitError::EmptySet);
        }
        let dim = members[0].z.len();
        let mut seen = std::collections::HashSet::with_capacity(members.len());
        for m in &members {
            if m.z.len() != dim {
                return Err(LogitError::DimensionMismatch {
                    id: m.id.clone(),
                    got: m.z.len(),
                    expected: dim,
                });
            }
            if !seen.insert(m.id.clone()) {
                return Err(LogitError::DuplicateId { id: m.id.clone() });
            }
        }
        let eta = members.iter().filter(|m| m.is_case).count();
        if eta == 0 || eta == members.len() {
            return Err(LogitError::EtaOutOfRange {
                eta,
                size: members.len(),
            });
        }
        Ok(CaseControlSet { members, eta, dim })
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn eta(&self) -> usize {
        self.eta
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Log likelihood with its score vector and observed information matrix.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loglik: f64,
    pub score: DVector<f64>,
    pub information: DMatrix<f64>,
}

/// Per-subject weight data assembled once per evaluation.
struct SubjectTerms {
    x: Vec<f64>,
    z_eff: Vec<Vec<f64>>,
    /// d(z_eff)/d(beta) per subject, absent for models with constant
    /// effective covariates.
    z_deriv: Option<Vec<Vec<f64>>>,
}

fn subject_terms(
    data: &CaseControlSet,
    model: &dyn OddsModel,
    beta: &[f64],
) -> Result<SubjectTerms, LogitError> {
    let p = model.dim();
    if beta.len() != p {
        return Err(LogitError::BetaDimension {
            got: beta.len(),
            expected: p,
        });
    }
    if data.dim != p {
        return Err(LogitError::BetaDimension {
            got: p,
            expected: data.dim,
        });
    }
    let constant = model.constant_effective_covariates();
    let mut x = Vec::with_capacity(data.len());
    let mut z_eff = Vec::with_capacity(data.len());
    let mut z_deriv = if constant { None } else { Some(Vec::with_capacity(data.len())) };
    for m in &data.members {
        let e = model.eval(&m.z, beta);
        if !(e.x > 0.0 && e.x.is_finite()) {
            return Err(LogitError::WeightOverflow {
                beta: beta.to_vec(),
                id: m.id.clone(),
            });
        }
        let zi: Vec<f64> = e.dx.iter().map(|d| d / e.x).collect();
        if let Some(derivs) = z_deriv.as_mut() {
            let mut d = vec![0.0; p * p];
            for r in 0..p {
                for c in 0..p {
                    d[r * p + c] = e.d2x[r * p + c] / e.x - zi[r] * zi[c];
                }
            }
            derivs.push(d);
        }
        x.push(e.x);
        z_eff.push(zi);
    }
    Ok(SubjectTerms { x, z_eff, z_deriv })
}

/// One column of the joint symmetric-polynomial recursion: value, gradient
/// and Hessian of e_k share a power-of-two exponent. `val == 0` marks an
/// all-zero column.
struct DerivColumn {
    exp2: i64,
    val: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl DerivColumn {
    fn zero(p: usize) -> Self {
        DerivColumn {
            exp2: 0,
            val: 0.0,
            grad: vec![0.0; p],
            hess: vec![0.0; p * p],
        }
    }

    fn scale(&mut self, m: f64) {
        self.val *= m;
        for g in &mut self.grad {
            *g *= m;
        }
        for h in &mut self.hess {
            *h *= m;
        }
    }

    fn renorm(&mut self) {
        if self.val > 1e120 {
            self.scale(2f64.powi(-400));
            self.exp2 += 400;
        } else if self.val > 0.0 && self.val < 1e-120 {
            self.scale(2f64.powi(400));
            self.exp2 -= 400;
        }
    }
}

use crate::scaled::pow2;

/// Accumulate value/gradient/Hessian of `e_eta(x(beta))` over subjects.
fn deriv_columns(terms: &SubjectTerms, eta: usize, p: usize, subjects: usize) -> Vec<DerivColumn> {
    let mut cols: Vec<DerivColumn> = (0..=eta).map(|_| DerivColumn::zero(p)).collect();
    cols[0].val = 1.0;
    let mut cv_buf = vec![0.0; 1 + p + p * p];
    for i in 0..subjects {
        let x = terms.x[i];
        let zi = &terms.z_eff[i];
        // dx = x * z_eff, d2x via z_deriv when present.
        for k in (1..=eta).rev() {
            let (head, tail) = cols.split_at_mut(k);
            let b = &head[k - 1];
            if b.val == 0.0 {
                continue;
            }
            let a = &mut tail[0];
            // Contribution of item i moving column k-1 into column k,
            // expressed at exponent b.exp2.
            let cv = &mut cv_buf;
            cv[0] = x * b.val;
            for r in 0..p {
                cv[1 + r] = x * b.grad[r] + x * zi[r] * b.val;
            }
            for r in 0..p {
                for c in 0..p {
                    let mut h = x * b.hess[r * p + c]
                        + x * zi[r] * b.grad[c]
                        + b.grad[r] * x * zi[c]
                        + x * zi[r] * zi[c] * b.val;
                    if let Some(zd) = &terms.z_deriv {
                        // x'' = x (z z^T + z'), so the extra piece is x z' e.
                        h += x * zd[i][r * p + c] * b.val;
                    }
                    cv[1 + p + r * p + c] = h;
                }
            }
            if a.val == 0.0 {
                a.exp2 = b.exp2;
                a.val = cv[0];
                a.grad.copy_from_slice(&cv[1..1 + p]);
                a.hess.copy_from_slice(&cv[1 + p..]);
            } else {
                let d = b.exp2 - a.exp2;
                if d >= 0 {
                    if d > 0 {
                        a.scale(pow2(-d));
                        a.exp2 = b.exp2;
                    }
                    a.val += cv[0];
                    for r in 0..p {
                        a.grad[r] += cv[1 + r];
                    }
                    for rc in 0..p * p {
                        a.hess[rc] += cv[1 + p + rc];
                    }
                } else {
                    let m = pow2(d);
                    a.val += cv[0] * m;
                    for r in 0..p {
                        a.grad[r] += cv[1 + r] * m;
                    }
                    for rc in 0..p * p {
                        a.hess[rc] += cv[1 + p + rc] * m;
                    }
                }
            }
            a.renorm();
        }
    }
    cols
}

/// Conditional logistic log likelihood, score, and information at `beta`,
/// computed through the joint recursion.
pub fn clogit_eval(
    data: &CaseControlSet,
    model: &dyn OddsModel,
    beta: &[f64],
) -> Result<Evaluation, LogitError> {
    let p = model.dim();
    let terms = subject_terms(data, model, beta)?;
    let cols = deriv_columns(&terms, data.eta, p, data.len());
    let top = &cols[data.eta];
    let log_e = top.val.ln() + top.exp2 as f64 * std::f64::consts::LN_2;

    let mut loglik = -log_e;
    let mut score = vec![0.0; p];
    for r in 0..p {
        score[r] = -top.grad[r] / top.val;
    }
    let mut info = vec![0.0; p * p];
    for r in 0..p {
        for c in 0..p {
            info[r * p + c] = top.hess[r * p + c] / top.val
                - (top.grad[r] / top.val) * (top.grad[c] / top.val);
        }
    }
    for (i, m) in data.members.iter().enumerate() {
        if !m.is_case {
            continue;
        }
        loglik += terms.x[i].ln();
        for r in 0..p {
            score[r] += terms.z_eff[i][r];
        }
        if let Some(zd) = &terms.z_deriv {
            // Case term of the information; identically zero when the
            // effective covariates are constant in beta.
            for rc in 0..p * p {
                info[rc] -= zd[i][rc];
            }
        }
    }
    let mut information = DMatrix::from_row_slice(p, p, &info);
    symmetrize(&mut information);
    Ok(Evaluation {
        loglik,
        score: DVector::from_vec(score),
        information,
    })
}

/// Conditional log likelihood alone (value recursion only); used in line
/// searches.
fn clogit_loglik(
    data: &CaseControlSet,
    model: &dyn OddsModel,
    beta: &[f64],
) -> Result<f64, LogitError> {
    let terms = subject_terms(data, model, beta)?;
    let mut col = vec![Scaled::ZERO; data.eta + 1];
    col[0] = Scaled::ONE;
    for &x in &terms.x {
        for k in (1..=data.eta).rev() {
            if col[k - 1].is_zero() {
                continue;
            }
            col[k] = col[k].add(col[k - 1].mul_f64(x));
        }
    }
    let mut ll = -col[data.eta].ln();
    for (i, m) in data.members.iter().enumerate() {
        if m.is_case {
            ll += terms.x[i].ln();
        }
    }
    Ok(ll)
}

/// Unconditional logistic log likelihood, score, and information at
/// `(alpha, beta)`, the intercept ordered first.
pub fn ulogit_eval(
    data: &CaseControlSet,
    model: &dyn OddsModel,
    alpha: f64,
    beta: &[f64],
) -> Result<Evaluation, LogitError> {
    let p = model.dim();
    let terms = subject_terms(data, model, beta)?;
    let lambda = alpha.exp();
    if !lambda.is_finite() {
        return Err(LogitError::WeightOverflow {
            beta: beta.to_vec(),
            id: "(baseline)".into(),
        });
    }
    let d = p + 1;
    let mut loglik = 0.0;
    let mut score = vec![0.0; d];
    let mut info = vec![0.0; d * d];
    for (i, m) in data.members.iter().enumerate() {
        let u = lambda * terms.x[i];
        let prob = u / (1.0 + u);
        let pq = prob * (1.0 - prob);
        let ind = if m.is_case { 1.0 } else { 0.0 };
        loglik += ind * (alpha + terms.x[i].ln()) - u.ln_1p();
        let resid = ind - prob;
        score[0] += resid;
        for r in 0..p {
            score[1 + r] += resid * terms.z_eff[i][r];
        }
        // pq * y y^T with y = (1, z_eff).
        info[0] += pq;
        for r in 0..p {
            info[1 + r] += pq * terms.z_eff[i][r];
            info[(1 + r) * d] += pq * terms.z_eff[i][r];
            for c in 0..p {
                info[(1 + r) * d + 1 + c] += pq * terms.z_eff[i][r] * terms.z_eff[i][c];
            }
        }
        if let Some(zd) = &terms.z_deriv {
            for r in 0..p {
                for c in 0..p {
                    info[(1 + r) * d + 1 + c] -= resid * zd[i][r * p + c];
                }
            }
        }
    }
    let mut information = DMatrix::from_row_slice(d, d, &info);
    symmetrize(&mut information);
    Ok(Evaluation {
        loglik,
        score: DVector::from_vec(score),
        information,
    })
}

fn ulogit_loglik(
    data: &CaseControlSet,
    model: &dyn OddsModel,
    alpha: f64,
    beta: &[f64],
) -> Result<f64, LogitError> {
    let terms = subject_terms(data, model, beta)?;
    let lambda = alpha.exp();
    let mut ll = 0.0;
    for (i, m) in data.members.iter().enumerate() {
        let u = lambda * terms.x[i];
        let ind = if m.is_case { 1.0 } else { 0.0 };
        ll += ind * (alpha + terms.x[i].ln()) - u.ln_1p();
    }
    Ok(ll)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for r in 0..n {
        for c in r + 1..n {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
}

/// Result of a Newton fit: estimates, the score and observed information at
/// the solution, the covariance (inverse information), and diagnostics.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub beta_hat: DVector<f64>,
    /// Baseline log-odds estimate for the unconditional fit.
    pub alpha_hat: Option<f64>,
    pub loglik: f64,
    pub score_at_solution: DVector<f64>,
    pub information: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub condition_number: f64,
    pub step_halvings: usize,
}

impl FitResult {
    /// Covariance block of beta alone (drops the intercept row/column of
    /// the unconditional fit).
    pub fn beta_covariance(&self) -> DMatrix<f64> {
        match self.alpha_hat {
            None => self.covariance.clone(),
            Some(_) => {
                let p = self.beta_hat.len();
                self.covariance.view((1, 1), (p, p)).into_owned()
            }
        }
    }
}

const MAX_ITER: usize = 50;
const MAX_HALVINGS: usize = 20;
const SCORE_TOL: f64 = 1e-8;
const SEPARATION_BOUND: f64 = 30.0;

struct NewtonOutcome {
    theta: DVector<f64>,
    eval: Evaluation,
    iterations: usize,
    converged: bool,
    step_halvings: usize,
}

/// Newton-Raphson with step-halving accepting only likelihood increases.
/// `beta_range` selects the coordinates checked against the separation
/// bound.
fn newton(
    init: DVector<f64>,
    beta_range: std::ops::Range<usize>,
    eval: &dyn Fn(&DVector<f64>) -> Result<Evaluation, LogitError>,
    loglik: &dyn Fn(&DVector<f64>) -> Result<f64, LogitError>,
) -> Result<NewtonOutcome, LogitError> {
    let mut theta = init;
    let mut halvings_total = 0;
    let mut current = eval(&theta)?;
    for iter in 0..MAX_ITER {
        if current.score.amax() < SCORE_TOL {
            return Ok(NewtonOutcome {
                theta,
                eval: current,
                iterations: iter,
                converged: true,
                step_halvings: halvings_total,
            });
        }
        let cond = condition_number(&current.information);
        let delta = current
            .information
            .clone()
            .lu()
            .solve(&current.score)
            .ok_or(LogitError::SingularInformation { condition: cond })?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = &theta + t * &delta;
            if let Ok(ll) = loglik(&cand) {
                if ll.is_finite() && ll > current.loglik {
                    theta = cand;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
            halvings_total += 1;
        }
        if !accepted {
            // No uphill step: stop where we are, unconverged.
            return Ok(NewtonOutcome {
                theta,
                eval: current,
                iterations: iter + 1,
                converged: false,
                step_halvings: halvings_total,
            });
        }
        current = eval(&theta)?;
        let beta_norm = theta.rows(beta_range.start, beta_range.len()).amax();
        if beta_norm > SEPARATION_BOUND {
            return Err(LogitError::Separation { norm: beta_norm });
        }
    }
    Ok(NewtonOutcome {
        theta,
        eval: current,
        iterations: MAX_ITER,
        converged: false,
        step_halvings: halvings_total,
    })
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn finish_fit(out: NewtonOutcome, alpha_first: bool) -> Result<FitResult, LogitError> {
    let cond = condition_number(&out.eval.information);
    let covariance = out
        .eval
        .information
        .clone()
        .try_inverse()
        .ok_or(LogitError::SingularInformation { condition: cond })?;
    let (alpha_hat, beta_hat) = if alpha_first {
        (
            Some(out.theta[0]),
            out.theta.rows(1, out.theta.len() - 1).into_owned(),
        )
    } else {
        (None, out.theta.clone())
    };
    Ok(FitResult {
        beta_hat,
        alpha_hat,
        loglik: out.eval.loglik,
        score_at_solution: out.eval.score.clone(),
        information: out.eval.information,
        covariance,
        iterations: out.iterations,
        converged: out.converged,
        condition_number: cond,
        step_halvings: out.step_halvings,
    })
}

/// Maximize the conditional logistic likelihood from `init`.
pub fn clogit_fit(
    data: &CaseControlSet,
    model: &dyn OddsModel,
    init: &[f64],
) -> Result<FitResult, LogitError> {
    let p = model.dim();
    if init.len() != p {
        return Err(LogitError::BetaDimension {
            got: init.len(),
            expected: p,
        });
    }
    let out = newton(
        DVector::from_row_slice(init),
        0..p,
        &|theta| clogit_eval(data, model, theta.as_slice()),
        &|theta| clogit_loglik(data, model, theta.as_slice()),
    )?;
    finish_fit(out, false)
}

/// Maximize the unconditional logistic likelihood jointly in
/// `(alpha, beta)`, starting from the case-fraction logit and beta = 0.
pub fn ulogit_fit(data: &CaseControlSet, model: &dyn OddsModel) -> Result<FitResult, LogitError> {
    let p = model.dim();
    let alpha0 = (data.eta as f64 / (data.len() - data.eta) as f64).ln();
    let mut init = DVector::zeros(p + 1);
    init[0] = alpha0;
    let out = newton(
        init,
        1..p + 1,
        &|theta| {
            ulogit_eval(
                data,
                model,
                theta[0],
                theta.rows(1, p).as_slice(),
            )
        },
        &|theta| ulogit_loglik(data, model, theta[0], theta.rows(1, p).as_slice()),
    )?;
    finish_fit(out, true)
}

/// Limiting information functionals shared by both estimators: population
/// case fraction p, the control-sampling odds factor, the shifted tilt, the
/// weighted covariate moments, and the information matrices.
#[derive(Clone, Debug)]
pub struct LimitFunctionals {
    pub f: f64,
    pub p: f64,
    pub rho_f: f64,
    pub lambda_f: f64,
    pub e0: f64,
    pub e1: DVector<f64>,
    pub e2: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub upsilon: DMatrix<f64>,
}

impl LimitFunctionals {
    pub fn sigma_inv(&self) -> DMatrix<f64> {
        self.sigma
            .clone()
            .try_inverse()
            .expect("sigma positive definite by construction")
    }

    pub fn upsilon_inv(&self) -> DMatrix<f64> {
        self.upsilon
            .clone()
            .try_inverse()
            .expect("upsilon positive definite by construction")
    }
}

/// Limit functionals from a finite reference population of covariate
/// vectors, all equally weighted.
pub fn asymptotic_variance(
    population: &[Vec<f64>],
    model: &dyn OddsModel,
    beta0: &[f64],
    lambda0: f64,
    f: f64,
) -> Result<LimitFunctionals, LogitError> {
    let weighted: Vec<(Vec<f64>, f64)> = population.iter().map(|z| (z.clone(), 1.0)).collect();
    asymptotic_variance_weighted(&weighted, model, beta0, lambda0, f)
}

/// Weighted-atom variant: atom weights are relative frequencies in the
/// study base.
pub fn asymptotic_variance_weighted(
    population: &[(Vec<f64>, f64)],
    model: &dyn OddsModel,
    beta0: &[f64],
    lambda0: f64,
    f: f64,
) -> Result<LimitFunctionals, LogitError> {
    if population.is_empty() {
        return Err(LogitError::EmptyPopulation);
    }
    if !(f > 0.0 && f < 1.0) {
        return Err(LogitError::BadFraction { f });
    }
    if !(lambda0 > 0.0 && lambda0.is_finite()) {
        return Err(LogitError::BadBaseline { lambda0 });
    }
    let p_dim = model.dim();
    let total_w: f64 = population.iter().map(|(_, w)| w).sum();
    // Per-atom odds weight and effective covariate at the true parameter.
    let mut atoms = Vec::with_capacity(population.len());
    let mut p_mean = 0.0;
    for (z, w) in population {
        let e = model.eval(z, beta0);
        if !(e.x > 0.0 && e.x.is_finite()) {
            return Err(LogitError::WeightOverflow {
                beta: beta0.to_vec(),
                id: "(population atom)".into(),
            });
        }
        let z_eff: Vec<f64> = e.dx.iter().map(|d| d / e.x).collect();
        let p0 = lambda0 * e.x / (1.0 + lambda0 * e.x);
        p_mean += w * p0;
        atoms.push((z_eff, e.x, p0, *w));
    }
    p_mean /= total_w;
    let rho_f = (1.0 - f) * p_mean / ((1.0 - p_mean) * f);
    let lambda_f = lambda0 / rho_f;

    let mut e0 = 0.0;
    let mut e1 = DVector::zeros(p_dim);
    let mut e2 = DMatrix::zeros(p_dim, p_dim);
    for (z_eff, x, p0, w) in &atoms {
        let q_f = 1.0 / (1.0 + lambda_f * x);
        let m = w / total_w * q_f * p0;
        e0 += m;
        for r in 0..p_dim {
            e1[r] += m * z_eff[r];
            for c in 0..p_dim {
                e2[(r, c)] += m * z_eff[r] * z_eff[c];
            }
        }
    }
    let sigma = &e2 - &e1 * e1.transpose() / e0;
    let mut upsilon = DMatrix::zeros(p_dim + 1, p_dim + 1);
    upsilon[(0, 0)] = e0;
    for r in 0..p_dim {
        upsilon[(0, 1 + r)] = e1[r];
        upsilon[(1 + r, 0)] = e1[r];
        for c in 0..p_dim {
            upsilon[(1 + r, 1 + c)] = e2[(r, c)];
        }
    }
    if nalgebra::Cholesky::new(sigma.clone()).is_none()
        || nalgebra::Cholesky::new(upsilon.clone()).is_none()
    {
        return Err(LogitError::DegenerateInformation);
    }
    Ok(LimitFunctionals {
        f,
        p: p_mean,
        rho_f,
        lambda_f,
        e0,
        e1,
        e2,
        sigma,
        upsilon,
    })
}
