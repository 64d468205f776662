//! Weighted fixed-size sampling: the law that gives each size-eta subset of
//! a finite population probability proportional to the product of its
//! members' weights (conditional Bernoulli / conditional Poisson sampling).
//!
//! Exact quantities (subset masses, joint inclusion probabilities, centered
//! correlations) are computed through elementary symmetric polynomials with
//! per-column exponent tracking. Asymptotic quantities come from the tilted
//! independent-Bernoulli representation: solving the tilt makes the expected
//! independent total equal eta, after which the lattice expansions of the
//! Poisson-Binomial module yield inclusion-probability approximations whose
//! error decays like `|E|^{-(s+2)/2}`.

use crate::poisson_binomial::{expansion_sum, panels_for};
use crate::quadrature::{composite_points, gl32};
use crate::scaled::Scaled;
use crate::table::{ErrorRow, ErrorTable};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::HashMap;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RejError {
    #[error("population must contain at least one item")]
    EmptyPopulation,
    #[error("weight for item '{id}' is {value}; weights must be positive and finite")]
    BadWeight { id: String, value: f64 },
    #[error("duplicate id '{id}'")]
    DuplicateId { id: String },
    #[error("unknown id '{id}'")]
    UnknownId { id: String },
    #[error("id '{id}' appears more than once in the set")]
    RepeatedId { id: String },
    #[error("eta = {eta} out of range for population of size {size}")]
    EtaOutOfRange { eta: usize, size: usize },
    #[error("no finite tilt exists for eta = {eta} with population size {size}")]
    NoFiniteTilt { eta: usize, size: usize },
    #[error("tilt bracket [-40, 40] nats failed to enclose the root")]
    BracketFailure,
    #[error("law is degenerate (eta = 0 or eta = |E|); no tilt is defined")]
    DegenerateLaw,
    #[error("set of size {len} exceeds the exactness cap {max}")]
    SetTooLarge { len: usize, max: usize },
    #[error(
        "conditioning is infeasible: |u| = {must_include} with eta = {eta} on {size} items leaves no valid law"
    )]
    InfeasibleCondition {
        must_include: usize,
        eta: usize,
        size: usize,
    },
    #[error("shift k = {k} exceeds the supported range |k| <= {max}")]
    ShiftTooLarge { k: i64, max: i64 },
    #[error("expansion order {s} must be even and at most {max}")]
    BadExpansionOrder { s: usize, max: usize },
    #[error("shifted target eta + k = {shifted} out of range for size {size}")]
    ShiftedEtaOutOfRange { shifted: i64, size: usize },
    #[error("identical ids passed where distinct items are required")]
    IdenticalIds,
    #[error("correlation order k = {k} infeasible: must satisfy k <= min(eta, size - eta, 12)")]
    InfeasibleOrder { k: usize },
    #[error("limit constant only available for 2 <= k <= 10 (got {k})")]
    LimitOrderUnavailable { k: usize },
    #[error("sampling fraction f = {f} must lie strictly inside (0, 1)")]
    BadFraction { f: f64 },
    #[error("rejection sampler guard exceeded: expected {expected:.3e} trials > 1e6")]
    RejectionGuardExceeded { expected: f64 },
    #[error("sizes must be strictly increasing and nonempty")]
    BadSizes,
}

const EXACT_SET_CAP: usize = 12;
const RECURSION_SET_CAP: usize = 10;
const MAX_SHIFT: i64 = 8;
const MAX_APPROX_ORDER: usize = 8;

/// Items with positive weights; ids are opaque unique labels.
#[derive(Clone, Debug)]
pub struct WeightedPopulation {
    ids: Vec<String>,
    weights: Vec<f64>,
    /// Weights divided by their geometric mean. Every internal
    /// symmetric-polynomial computation runs on these; ratios of equal
    /// homogeneity degree are unchanged by the prescaling.
    scaled: Vec<f64>,
    log_gm: f64,
    index: HashMap<String, usize>,
}

impl WeightedPopulation {
    pub fn new(items: Vec<(String, f64)>) -> Result<Self, RejError> {
        if items.is_empty() {
            return Err(RejError::EmptyPopulation);
        }
        let mut index = HashMap::with_capacity(items.len());
        let mut ids = Vec::with_capacity(items.len());
        let mut weights = Vec::with_capacity(items.len());
        for (id, w) in items {
            if !(w > 0.0 && w.is_finite()) {
                return Err(RejError::BadWeight { id, value: w });
            }
            if index.insert(id.clone(), ids.len()).is_some() {
                return Err(RejError::DuplicateId { id });
            }
            ids.push(id);
            weights.push(w);
        }
        let log_gm = weights.iter().map(|w: &f64| w.ln()).sum::<f64>() / weights.len() as f64;
        let gm = log_gm.exp();
        let scaled = weights.iter().map(|w| w / gm).collect();
        Ok(WeightedPopulation {
            ids,
            weights,
            scaled,
            log_gm,
            index,
        })
    }

    /// Items labelled "1".."n" with the given weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self, RejError> {
        Self::new(
            weights
                .iter()
                .enumerate()
                .map(|(i, &w)| ((i + 1).to_string(), w))
                .collect(),
        )
    }

    /// Population of size `n` cycling through `pattern`.
    pub fn from_cycled(pattern: &[f64], n: usize) -> Result<Self, RejError> {
        if pattern.is_empty() || n == 0 {
            return Err(RejError::EmptyPopulation);
        }
        Self::from_weights(&(0..n).map(|j| pattern[j % pattern.len()]).collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn resolve(&self, id: &str) -> Result<usize, RejError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| RejError::UnknownId { id: id.to_string() })
    }

    fn resolve_distinct(&self, ids: &[&str]) -> Result<Vec<usize>, RejError> {
        let mut seen = vec![false; self.len()];
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            let i = self.resolve(id)?;
            if seen[i] {
                return Err(RejError::RepeatedId { id: id.to_string() });
            }
            seen[i] = true;
            out.push(i);
        }
        Ok(out)
    }
}

/// Elementary symmetric polynomials `e_0..e_k` of `weights`, accumulated in
/// extended-range arithmetic. All terms are nonnegative, so there is no
/// cancellation in the recursion.
fn esp(weights: &[f64], k_max: usize) -> Vec<Scaled> {
    let mut col = vec![Scaled::ZERO; k_max + 1];
    col[0] = Scaled::ONE;
    for &w in weights {
        for k in (1..=k_max).rev() {
            if col[k - 1].is_zero() {
                continue;
            }
            col[k] = col[k].add(col[k - 1].mul_f64(w));
        }
    }
    col
}

/// Same, skipping the items flagged in `skip`. Deleted-population columns
/// are always rebuilt from scratch; down-dating the full-population columns
/// would subtract like terms and shed precision.
fn esp_excluding(weights: &[f64], skip: &[bool], k_max: usize) -> Vec<Scaled> {
    let mut col = vec![Scaled::ZERO; k_max + 1];
    col[0] = Scaled::ONE;
    for (i, &w) in weights.iter().enumerate() {
        if skip[i] {
            continue;
        }
        for k in (1..=k_max).rev() {
            if col[k - 1].is_zero() {
                continue;
            }
            col[k] = col[k].add(col[k - 1].mul_f64(w));
        }
    }
    col
}

/// Table of elementary symmetric polynomials of the population weights,
/// stored as column mantissas with per-column power-of-two exponents.
#[derive(Clone, Debug)]
pub struct SymmetricPolyTable {
    columns: Vec<Scaled>,
    k_max: usize,
}

impl SymmetricPolyTable {
    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// e_k as an extended-range value.
    pub fn value(&self, k: usize) -> Scaled {
        self.columns[k]
    }

    /// e_k collapsed to f64; overflows for large populations, where `ratio`
    /// is the meaningful quantity.
    pub fn value_f64(&self, k: usize) -> f64 {
        self.columns[k].to_f64()
    }

    /// e_k / e_j with the exponents cancelled exactly.
    pub fn ratio(&self, k: usize, j: usize) -> f64 {
        self.columns[k].ratio(self.columns[j])
    }

    pub fn mantissas(&self) -> Vec<f64> {
        self.columns.iter().map(|c| c.mant).collect()
    }

    pub fn exponents(&self) -> Vec<i64> {
        self.columns.iter().map(|c| c.exp2).collect()
    }
}

/// Sums of weight-products over all size-k subsets, for k = 0..=k_max.
pub fn elementary_symmetric(
    pop: &WeightedPopulation,
    k_max: usize,
) -> Result<SymmetricPolyTable, RejError> {
    if k_max > pop.len() {
        return Err(RejError::EtaOutOfRange {
            eta: k_max,
            size: pop.len(),
        });
    }
    let scaled_cols = esp(&pop.scaled, k_max);
    // Undo the geometric-mean prescaling: e_k(w) = gm^k e_k(w / gm).
    let gm = Scaled::from_f64(pop.log_gm.exp());
    let mut gm_pow = Scaled::ONE;
    let mut columns = Vec::with_capacity(k_max + 1);
    for (k, c) in scaled_cols.into_iter().enumerate() {
        if k > 0 {
            gm_pow = gm_pow.mul(gm);
        }
        columns.push(c.mul(gm_pow));
    }
    Ok(SymmetricPolyTable { columns, k_max })
}

/// Unique tilt `lambda > 0` with `sum_A lambda w_A / (1 + lambda w_A) = eta`.
///
/// Bracketed bisection on `ln lambda` over [-40, 40] nats for the
/// geometric-mean-scaled weights; the left side is continuous and strictly
/// increasing in lambda, so the bisection converges unconditionally.
pub fn tilt_lambda(pop: &WeightedPopulation, eta: usize) -> Result<f64, RejError> {
    if eta == 0 || eta >= pop.len() {
        return Err(RejError::NoFiniteTilt {
            eta,
            size: pop.len(),
        });
    }
    let target = eta as f64;
    let h = |log_lambda: f64| -> f64 {
        let lambda = log_lambda.exp();
        pop.scaled
            .iter()
            .map(|&w| lambda * w / (1.0 + lambda * w))
            .sum::<f64>()
    };
    let (mut lo, mut hi) = (-40.0, 40.0);
    if h(lo) > target || h(hi) < target {
        return Err(RejError::BracketFailure);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    let lambda_scaled = (0.5 * (lo + hi)).exp();
    // p depends only on lambda * w, so the original-weight tilt rescales
    // by the geometric mean.
    Ok(lambda_scaled / pop.log_gm.exp())
}

/// Cached tilt data: the tilted Bernoulli probabilities and their variance
/// sum at the solved lambda.
#[derive(Clone, Debug)]
pub struct Tilt {
    pub lambda: f64,
    pub p: Vec<f64>,
    pub v2: f64,
}

fn tilt_at(pop: &WeightedPopulation, lambda: f64) -> Tilt {
    let p: Vec<f64> = pop
        .weights
        .iter()
        .map(|&w| lambda * w / (1.0 + lambda * w))
        .collect();
    let v2 = p.iter().map(|&p| p * (1.0 - p)).sum();
    Tilt { lambda, p, v2 }
}

/// The weighted fixed-size sampling law on a population.
///
/// Caches are built eagerly at construction: the symmetric-polynomial table
/// up to eta, and for interior eta the tilt. Degenerate targets (eta = 0 or
/// eta = |E|) arise from conditioning and are carried without a tilt;
/// operations that need one report `DegenerateLaw`.
#[derive(Debug)]
pub struct RejectiveLaw {
    pop: WeightedPopulation,
    eta: usize,
    tilt: Option<Tilt>,
    table: Vec<Scaled>,
    seq_table: OnceLock<Vec<Vec<f64>>>,
}

impl RejectiveLaw {
    pub fn new(pop: WeightedPopulation, eta: usize) -> Result<Self, RejError> {
        if eta > pop.len() {
            return Err(RejError::EtaOutOfRange {
                eta,
                size: pop.len(),
            });
        }
        let tilt = if eta > 0 && eta < pop.len() {
            Some(tilt_at(&pop, tilt_lambda(&pop, eta)?))
        } else {
            None
        };
        let table = esp(&pop.scaled, eta);
        Ok(RejectiveLaw {
            pop,
            eta,
            tilt,
            table,
            seq_table: OnceLock::new(),
        })
    }

    pub fn population(&self) -> &WeightedPopulation {
        &self.pop
    }

    pub fn eta(&self) -> usize {
        self.eta
    }

    pub fn lambda_star(&self) -> Option<f64> {
        self.tilt.as_ref().map(|t| t.lambda)
    }

    pub fn tilt(&self) -> Option<&Tilt> {
        self.tilt.as_ref()
    }

    fn tilt_or_err(&self) -> Result<&Tilt, RejError> {
        self.tilt.as_ref().ok_or(RejError::DegenerateLaw)
    }

    /// Tilted success probability of one item.
    pub fn p_lambda(&self, id: &str) -> Result<f64, RejError> {
        let i = self.pop.resolve(id)?;
        Ok(self.tilt_or_err()?.p[i])
    }

    fn sequential_table(&self) -> Result<&Vec<Vec<f64>>, RejError> {
        let tilt = self.tilt_or_err()?;
        Ok(self
            .seq_table
            .get_or_init(|| suffix_success_table(&tilt.p, self.eta)))
    }
}

/// Joint inclusion probability of `ids` under the law; for a singleton this
/// is the usual first-order inclusion probability.
pub fn inclusion_exact(law: &RejectiveLaw, ids: &[&str]) -> Result<f64, RejError> {
    let idx = law.pop.resolve_distinct(ids)?;
    if idx.len() > EXACT_SET_CAP {
        return Err(RejError::SetTooLarge {
            len: idx.len(),
            max: EXACT_SET_CAP,
        });
    }
    Ok(inclusion_by_indices(&law.pop, law.eta, &law.table, &idx))
}

fn inclusion_by_indices(
    pop: &WeightedPopulation,
    eta: usize,
    table: &[Scaled],
    idx: &[usize],
) -> f64 {
    if idx.len() > eta {
        return 0.0;
    }
    let mut skip = vec![false; pop.len()];
    let mut x_u = Scaled::ONE;
    for &i in idx {
        skip[i] = true;
        x_u = x_u.mul_f64(pop.scaled[i]);
    }
    let deleted = esp_excluding(&pop.scaled, &skip, eta - idx.len());
    x_u.mul(deleted[eta - idx.len()]).ratio(table[eta])
}

/// Conditioning specification: the sample must contain every id in
/// `must_include` and none in `must_exclude`.
#[derive(Clone, Debug, Default)]
pub struct ConditionalSpec {
    pub must_include: Vec<String>,
    pub must_exclude: Vec<String>,
}

/// The conditioned law: removing the conditioned items and lowering the
/// target by `|must_include|` gives an ordinary law on the remainder.
pub fn conditional_law(
    law: &RejectiveLaw,
    spec: &ConditionalSpec,
) -> Result<RejectiveLaw, RejError> {
    let refs: Vec<&str> = spec
        .must_include
        .iter()
        .chain(spec.must_exclude.iter())
        .map(|s| s.as_str())
        .collect();
    let idx = law.pop.resolve_distinct(&refs)?;
    let n_inc = spec.must_include.len();
    if n_inc > law.eta
        || law.pop.len() == idx.len()
        || law.eta - n_inc > law.pop.len() - idx.len()
    {
        return Err(RejError::InfeasibleCondition {
            must_include: n_inc,
            eta: law.eta,
            size: law.pop.len(),
        });
    }
    let mut skip = vec![false; law.pop.len()];
    for &i in &idx {
        skip[i] = true;
    }
    let items: Vec<(String, f64)> = law
        .pop
        .ids
        .iter()
        .zip(&law.pop.weights)
        .enumerate()
        .filter(|(i, _)| !skip[*i])
        .map(|(_, (id, &w))| (id.clone(), w))
        .collect();
    RejectiveLaw::new(WeightedPopulation::new(items)?, law.eta - n_inc)
}

/// Centered product moment `E prod_{A in H} (I_A - p_A)` by
/// inclusion-exclusion over the subsets of `H`, using exact joint inclusion
/// probabilities throughout.
pub fn corr_exact(law: &RejectiveLaw, ids: &[&str]) -> Result<f64, RejError> {
    let idx = law.pop.resolve_distinct(ids)?;
    if idx.len() > EXACT_SET_CAP {
        return Err(RejError::SetTooLarge {
            len: idx.len(),
            max: EXACT_SET_CAP,
        });
    }
    let mut inclusion = |subset: &[usize]| inclusion_by_indices(&law.pop, law.eta, &law.table, subset);
    Ok(centered_moment(&idx, &mut inclusion))
}

/// Inclusion-exclusion assembly with Neumaier compensation; the terms cancel
/// down many orders of magnitude on large populations.
fn centered_moment(idx: &[usize], inclusion: &mut dyn FnMut(&[usize]) -> f64) -> f64 {
    let k = idx.len();
    let p: Vec<f64> = idx.iter().map(|&i| inclusion(&[i])).collect();
    let mut sum = 0.0;
    let mut comp = 0.0;
    for mask in 0u32..(1 << k) {
        let subset: Vec<usize> = (0..k)
            .filter(|j| mask >> j & 1 == 1)
            .map(|j| idx[j])
            .collect();
        let mut term = inclusion(&subset);
        for j in 0..k {
            if mask >> j & 1 == 0 {
                term *= -p[j];
            }
        }
        let t = sum + term;
        comp += if sum.abs() >= term.abs() {
            (sum - t) + term
        } else {
            (term - t) + sum
        };
        sum = t;
    }
    sum + comp
}

/// The same moment by recursive peeling: one element of `H` is absorbed per
/// step through conditioned laws. An independent route from the
/// inclusion-exclusion in `corr_exact`.
pub fn corr_recursion(law: &RejectiveLaw, ids: &[&str]) -> Result<f64, RejError> {
    let idx = law.pop.resolve_distinct(ids)?;
    if idx.len() > RECURSION_SET_CAP {
        return Err(RejError::SetTooLarge {
            len: idx.len(),
            max: RECURSION_SET_CAP,
        });
    }
    let base_p: Vec<f64> = idx
        .iter()
        .map(|&i| inclusion_by_indices(&law.pop, law.eta, &law.table, &[i]))
        .collect();
    let mut include = vec![false; law.pop.len()];
    let mut exclude = vec![false; law.pop.len()];
    Ok(peel(
        &law.pop,
        law.eta,
        &mut include,
        &mut exclude,
        0,
        &idx,
        &base_p,
    ))
}

/// Conditional expectation of `prod_{j >= pos} (I_{H_j} - p_{H_j})` under
/// the law conditioned on the include/exclude flags: peels H_pos off via
/// `E[(I_A - p_A) V] = (p_A^cond - p_A) E[V] + p_A^cond q_A^cond (E^in[V] - E^out[V])`.
fn peel(
    pop: &WeightedPopulation,
    eta: usize,
    include: &mut Vec<bool>,
    exclude: &mut Vec<bool>,
    pos: usize,
    h: &[usize],
    base_p: &[f64],
) -> f64 {
    if pos == h.len() {
        return 1.0;
    }
    let a = h[pos];
    let p_cond = conditional_single_inclusion(pop, eta, include, exclude, a);
    let rest_same = peel(pop, eta, include, exclude, pos + 1, h, base_p);
    let mut total = (p_cond - base_p[pos]) * rest_same;
    let pq = p_cond * (1.0 - p_cond);
    if pq != 0.0 {
        include[a] = true;
        let rest_in = peel(pop, eta, include, exclude, pos + 1, h, base_p);
        include[a] = false;
        exclude[a] = true;
        let rest_out = peel(pop, eta, include, exclude, pos + 1, h, base_p);
        exclude[a] = false;
        total += pq * (rest_in - rest_out);
    }
    total
}

/// P(A in D) under the law conditioned to contain `include` and avoid
/// `exclude`: equals the unconditional inclusion on the reduced population
/// with the lowered target.
fn conditional_single_inclusion(
    pop: &WeightedPopulation,
    eta: usize,
    include: &[bool],
    exclude: &[bool],
    a: usize,
) -> f64 {
    let n_inc = include.iter().filter(|&&b| b).count();
    let n_exc = exclude.iter().filter(|&&b| b).count();
    if n_inc > eta {
        return 0.0;
    }
    let sub_eta = eta - n_inc;
    let sub_n = pop.len() - n_inc - n_exc;
    if sub_eta == 0 {
        return 0.0;
    }
    if sub_eta >= sub_n {
        return 1.0;
    }
    let mut skip: Vec<bool> = include
        .iter()
        .zip(exclude)
        .map(|(&i, &e)| i || e)
        .collect();
    let denom = esp_excluding(&pop.scaled, &skip, sub_eta);
    skip[a] = true;
    let num = esp_excluding(&pop.scaled, &skip, sub_eta - 1);
    num[sub_eta - 1]
        .mul_f64(pop.scaled[a])
        .ratio(denom[sub_eta])
}

/// Expansion-based approximation to the inclusion probability under the
/// shifted law `(E, eta + k)`, evaluated with the tilt solved at `(E, eta)`:
/// `p_A * m0(nu - 1) * sum_{l<=s/2} (-1)^l (n0(nu) - 1)^l` with
/// `nu = k + p_A` on the deleted ensemble.
pub fn inclusion_approx(law: &RejectiveLaw, id: &str, k: i64, s: usize) -> Result<f64, RejError> {
    let tilt = law.tilt_or_err()?;
    check_approx_args(law, k, s)?;
    let a = law.pop.resolve(id)?;
    let coeffs = tilted_coeffs_excluding(&tilt.p, a, s);
    Ok(evaluate_inclusion_expansion(&coeffs, tilt.p[a], k as f64))
}

/// Variant that re-solves the tilt at the shifted target `eta + k` before
/// expanding, leaving a zero integer offset. Off the default path; exposed
/// for finite-size experiments.
pub fn inclusion_approx_resolved(
    law: &RejectiveLaw,
    id: &str,
    k: i64,
    s: usize,
) -> Result<f64, RejError> {
    check_approx_args(law, k, s)?;
    let shifted = (law.eta as i64 + k) as usize;
    let tilt = tilt_at(&law.pop, tilt_lambda(&law.pop, shifted)?);
    let a = law.pop.resolve(id)?;
    let coeffs = tilted_coeffs_excluding(&tilt.p, a, s);
    Ok(evaluate_inclusion_expansion(&coeffs, tilt.p[a], 0.0))
}

fn check_approx_args(law: &RejectiveLaw, k: i64, s: usize) -> Result<(), RejError> {
    if k.abs() > MAX_SHIFT {
        return Err(RejError::ShiftTooLarge { k, max: MAX_SHIFT });
    }
    if s % 2 != 0 || s > MAX_APPROX_ORDER {
        return Err(RejError::BadExpansionOrder {
            s,
            max: MAX_APPROX_ORDER,
        });
    }
    let shifted = law.eta as i64 + k;
    if shifted <= 0 || shifted >= law.pop.len() as i64 {
        return Err(RejError::ShiftedEtaOutOfRange {
            shifted,
            size: law.pop.len(),
        });
    }
    Ok(())
}

fn evaluate_inclusion_expansion(norm_coeffs: &[Complex64], p_a: f64, k: f64) -> f64 {
    let s = norm_coeffs.len() - 1;
    let nu = k + p_a;
    let m_at_nu = expansion_sum(norm_coeffs, nu);
    let m_at_nu_minus_1 = expansion_sum(norm_coeffs, nu - 1.0);
    let n0_minus_1 = m_at_nu - p_a * (m_at_nu - m_at_nu_minus_1) - Complex64::new(1.0, 0.0);
    let mut geom = Complex64::new(0.0, 0.0);
    let mut pw = Complex64::new(1.0, 0.0);
    for l in 0..=s / 2 {
        if l > 0 {
            pw *= -n0_minus_1;
        }
        geom += pw;
    }
    (p_a * m_at_nu_minus_1 * geom).re
}

/// Normalized Fourier coefficients `I_j / I_0`, j = 0..=j_max, of the
/// centered tilted sum over the population with one item removed.
fn tilted_coeffs_excluding(probs: &[f64], excluded: usize, j_max: usize) -> Vec<Complex64> {
    let reduced: Vec<f64> = probs
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != excluded)
        .map(|(_, &p)| p)
        .collect();
    normalize_coeffs(tilted_moment_integrals(&reduced, j_max))
}

fn normalize_coeffs(raw: Vec<Complex64>) -> Vec<Complex64> {
    let i0 = raw[0];
    raw.into_iter().map(|c| c / i0).collect()
}

/// Raw moment integrals `(1/2pi) int t^j phi(t) dt` for an explicit
/// probability vector, assembled by parity from [0, pi].
fn tilted_moment_integrals(probs: &[f64], j_max: usize) -> Vec<Complex64> {
    let panels = panels_for(probs.len());
    let pts = composite_points(gl32(), 0.0, std::f64::consts::PI, panels);
    let mean: f64 = probs.iter().sum();
    let mut re_acc = vec![0.0; j_max + 1];
    let mut im_acc = vec![0.0; j_max + 1];
    for &(t, w) in &pts {
        let z = Complex64::new(0.0, t).exp();
        let mut prod = Complex64::new(1.0, 0.0);
        for &p in probs {
            prod *= Complex64::new(1.0 - p, 0.0) + p * z;
        }
        let phi = prod * Complex64::new(0.0, -t * mean).exp();
        let mut tj = 1.0;
        for j in 0..=j_max {
            re_acc[j] += w * tj * phi.re;
            im_acc[j] += w * tj * phi.im;
            tj *= t;
        }
    }
    assemble_parity(&re_acc, &im_acc)
}

fn assemble_parity(re_acc: &[f64], im_acc: &[f64]) -> Vec<Complex64> {
    let inv_pi = 1.0 / std::f64::consts::PI;
    (0..re_acc.len())
        .map(|j| {
            if j % 2 == 0 {
                Complex64::new(inv_pi * re_acc[j], 0.0)
            } else {
                Complex64::new(0.0, inv_pi * im_acc[j])
            }
        })
        .collect()
}

/// Normalized deleted-ensemble coefficients for every item at once, sharing
/// one characteristic-function grid; each item's factor is divided back out
/// of the full product.
fn tilted_coeffs_all_excluding(probs: &[f64], j_max: usize) -> Vec<Vec<Complex64>> {
    let n = probs.len();
    let panels = panels_for(n.saturating_sub(1));
    let pts = composite_points(gl32(), 0.0, std::f64::consts::PI, panels);
    let mean: f64 = probs.iter().sum();
    let mut re_acc = vec![vec![0.0; j_max + 1]; n];
    let mut im_acc = vec![vec![0.0; j_max + 1]; n];
    let mut factors = vec![Complex64::new(0.0, 0.0); n];
    let mut tj = vec![1.0; j_max + 1];
    for &(t, w) in &pts {
        let z = Complex64::new(0.0, t).exp();
        let mut prod = Complex64::new(1.0, 0.0);
        for (f, &p) in factors.iter_mut().zip(probs) {
            *f = Complex64::new(1.0 - p, 0.0) + p * z;
            prod *= *f;
        }
        for j in 1..=j_max {
            tj[j] = tj[j - 1] * t;
        }
        for a in 0..n {
            let phase = Complex64::new(0.0, -t * (mean - probs[a])).exp();
            let phi = if factors[a].norm() > 1e-12 {
                prod / factors[a] * phase
            } else {
                // Vanishing factor: rebuild the deleted product directly.
                let mut q = Complex64::new(1.0, 0.0);
                for (b, f) in factors.iter().enumerate() {
                    if b != a {
                        q *= f;
                    }
                }
                q * phase
            };
            for j in 0..=j_max {
                re_acc[a][j] += w * tj[j] * phi.re;
                im_acc[a][j] += w * tj[j] * phi.im;
            }
        }
    }
    (0..n)
        .map(|a| normalize_coeffs(assemble_parity(&re_acc[a], &im_acc[a])))
        .collect()
}

/// Second-order limit form of the pair covariance:
/// `-p_A q_A p_B q_B / v^2` at the solved tilt.
pub fn pair_cov_approx(law: &RejectiveLaw, a: &str, b: &str) -> Result<f64, RejError> {
    if a == b {
        return Err(RejError::IdenticalIds);
    }
    let tilt = law.tilt_or_err()?;
    let ia = law.pop.resolve(a)?;
    let ib = law.pop.resolve(b)?;
    let (pa, pb) = (tilt.p[ia], tilt.p[ib]);
    Ok(-(pa * (1.0 - pa)) * (pb * (1.0 - pb)) / tilt.v2)
}

/// Closed-form centered correlation of order k under equal weights: an
/// alternating binomial sum over falling-factorial ratios.
pub fn srs_corr_closed_form(size: usize, eta: usize, k: usize) -> Result<f64, RejError> {
    if size == 0 || eta == 0 || eta >= size {
        return Err(RejError::EtaOutOfRange { eta, size });
    }
    if k > eta.min(size - eta).min(EXACT_SET_CAP) {
        return Err(RejError::InfeasibleOrder { k });
    }
    let n = size as f64;
    let f = eta as f64 / n;
    let mut sum = 0.0;
    let mut comp = 0.0;
    for j in 0..=k {
        // C(size-j, eta-j) / C(size, eta) reduces to a falling-factorial
        // ratio, which stays in range for any population size.
        let mut ratio = 1.0;
        for t in 0..j {
            ratio *= (eta - t) as f64 / (n - t as f64);
        }
        let term = binomial_f64(k, j) * ratio * (-f).powi((k - j) as i32);
        let t = sum + term;
        comp += if sum.abs() >= term.abs() {
            (sum - t) + term
        } else {
            (term - t) + sum
        };
        sum = t;
    }
    Ok(sum + comp)
}

fn binomial_f64(n: usize, k: usize) -> f64 {
    let mut v = 1.0;
    for t in 0..k {
        v = v * (n - t) as f64 / (t + 1) as f64;
    }
    v
}

/// Limiting constant of the scaled equal-weight correlation as the
/// population grows with sampling fraction f: for even k the limit of
/// `|E|^{k/2} Corr(k)`, for odd k the limit of `|E|^{(k+1)/2} Corr(k)`.
pub fn srs_corr_limit(k: usize, f: f64) -> Result<f64, RejError> {
    if !(2..=10).contains(&k) {
        return Err(RejError::LimitOrderUnavailable { k });
    }
    if !(f > 0.0 && f < 1.0) {
        return Err(RejError::BadFraction { f });
    }
    let g = f * (f - 1.0);
    Ok(if k % 2 == 0 {
        normal_moment(k) * g.powi(k as i32 / 2)
    } else {
        (k - 1) as f64 / 3.0 * normal_moment(k + 1) * g.powi((k as i32 - 1) / 2) * (2.0 * f - 1.0)
    })
}

/// E N^k for standard normal N: zero for odd k, double factorial otherwise.
fn normal_moment(k: usize) -> f64 {
    if k % 2 == 1 {
        return 0.0;
    }
    let mut v = 1.0;
    let mut j = k as i64 - 1;
    while j > 1 {
        v *= j as f64;
        j -= 2;
    }
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMethod {
    /// Item-by-item draws conditioned through suffix count tables of the
    /// tilted Bernoulli ensemble; exact for any tilt value.
    Sequential,
    /// Draw eta items with replacement proportional to weight and reject
    /// collisions; guarded by the expected trial count.
    Rejection,
}

impl SampleMethod {
    pub fn parse(s: &str) -> Option<SampleMethod> {
        match s {
            "sequential" => Some(SampleMethod::Sequential),
            "rejection" => Some(SampleMethod::Rejection),
            _ => None,
        }
    }
}

/// Draw one size-eta sample distributed exactly as the law. The same seed
/// and method always return the same sample.
pub fn sample(
    law: &RejectiveLaw,
    seed: u64,
    method: SampleMethod,
) -> Result<Vec<String>, RejError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    sample_with_rng(law, &mut rng, method)
}

/// Sampler over a caller-held RNG stream; used for repeated draws.
pub fn sample_with_rng(
    law: &RejectiveLaw,
    rng: &mut impl Rng,
    method: SampleMethod,
) -> Result<Vec<String>, RejError> {
    let idx = match method {
        SampleMethod::Sequential => sample_sequential(law, rng)?,
        SampleMethod::Rejection => sample_rejection(law, rng)?,
    };
    Ok(idx.into_iter().map(|i| law.pop.ids[i].clone()).collect())
}

fn sample_sequential(law: &RejectiveLaw, rng: &mut impl Rng) -> Result<Vec<usize>, RejError> {
    let n = law.pop.len();
    if law.eta == 0 {
        return Ok(Vec::new());
    }
    if law.eta == n {
        return Ok((0..n).collect());
    }
    let tilt = law.tilt_or_err()?;
    let table = law.sequential_table()?;
    let mut out = Vec::with_capacity(law.eta);
    let mut need = law.eta;
    for i in 0..n {
        if need == 0 {
            break;
        }
        if n - i == need {
            out.extend(i..n);
            break;
        }
        let p_take = tilt.p[i] * table[i + 1][need - 1] / table[i][need];
        if rng.gen::<f64>() < p_take {
            out.push(i);
            need -= 1;
        }
    }
    Ok(out)
}

/// T[i][r] = P(sum of tilted indicators over items i.. equals r).
fn suffix_success_table(probs: &[f64], eta: usize) -> Vec<Vec<f64>> {
    let n = probs.len();
    let mut table = vec![Vec::new(); n + 1];
    table[n] = vec![1.0];
    for i in (0..n).rev() {
        let r_max = eta.min(n - i);
        let p = probs[i];
        let q = 1.0 - p;
        let prev = std::mem::take(&mut table[i + 1]);
        let mut row = vec![0.0; r_max + 1];
        for (r, slot) in row.iter_mut().enumerate() {
            let stay = prev.get(r).copied().unwrap_or(0.0);
            let take = if r >= 1 {
                prev.get(r - 1).copied().unwrap_or(0.0)
            } else {
                0.0
            };
            *slot = q * stay + p * take;
        }
        table[i + 1] = prev;
        table[i] = row;
    }
    table
}

/// Probability that the sequential chain emits exactly the indicator
/// pattern `selected`; used to verify tilt-invariance of the induced law.
#[doc(hidden)]
pub fn sequential_set_probability(probs: &[f64], eta: usize, selected: &[bool]) -> f64 {
    let n = probs.len();
    let table = suffix_success_table(probs, eta);
    let mut prob = 1.0;
    let mut need = eta;
    for i in 0..n {
        if need == 0 {
            if selected[i] {
                return 0.0;
            }
            continue;
        }
        if n - i == need {
            if !selected[i] {
                return 0.0;
            }
            need -= 1;
            continue;
        }
        let p_take = probs[i] * table[i + 1][need - 1] / table[i][need];
        if selected[i] {
            prob *= p_take;
            need -= 1;
        } else {
            prob *= 1.0 - p_take;
        }
    }
    if need == 0 {
        prob
    } else {
        0.0
    }
}

fn sample_rejection(law: &RejectiveLaw, rng: &mut impl Rng) -> Result<Vec<usize>, RejError> {
    let n = law.pop.len();
    if law.eta == 0 {
        return Ok(Vec::new());
    }
    if law.eta == n {
        return Ok((0..n).collect());
    }
    // Acceptance probability is eta! e_eta / (sum w)^eta, computed on the
    // prescaled weights where the homogeneity factors cancel.
    let total: f64 = law.pop.scaled.iter().sum();
    let ln_accept =
        ln_factorial(law.eta) + law.table[law.eta].ln() - law.eta as f64 * total.ln();
    let expected = (-ln_accept).exp();
    if expected > 1e6 {
        return Err(RejError::RejectionGuardExceeded { expected });
    }
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &w in &law.pop.scaled {
        acc += w;
        cdf.push(acc);
    }
    let cap = (200.0 * expected.max(1.0)) as u64 + 1000;
    let mut draw = vec![0usize; law.eta];
    for _ in 0..cap {
        for slot in draw.iter_mut() {
            let u = rng.gen::<f64>() * acc;
            *slot = cdf.partition_point(|&c| c < u).min(n - 1);
        }
        draw.sort_unstable();
        if draw.windows(2).all(|w| w[0] != w[1]) {
            return Ok(draw.clone());
        }
    }
    Err(RejError::RejectionGuardExceeded { expected })
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

const STUDY_SHUFFLE_SEED: u64 = 0x5EED_0001;

/// Decay study for centered correlations of order k: cycle `pattern` to
/// each size, set eta to the rounded fraction of the size, and record the
/// maximum |Corr(H)| over 50 deterministic k-subsets.
pub fn decay_rate_study(
    pattern: &[f64],
    sizes: &[usize],
    k: usize,
    f: f64,
) -> Result<ErrorTable, RejError> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(RejError::BadSizes);
    }
    if !(f > 0.0 && f < 1.0) {
        return Err(RejError::BadFraction { f });
    }
    if k > 6 {
        return Err(RejError::SetTooLarge { len: k, max: 6 });
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let pop = WeightedPopulation::from_cycled(pattern, size)?;
        let eta = (f * size as f64).round() as usize;
        let law = RejectiveLaw::new(pop, eta)?;
        // Joint inclusions depend on items only through their weights, so
        // memoizing on the weight multiset collapses the repeated DP work.
        let mut memo: HashMap<Vec<u64>, f64> = HashMap::new();
        let mut inclusion = |subset: &[usize]| -> f64 {
            let mut key: Vec<u64> = subset
                .iter()
                .map(|&i| law.pop.weights[i].to_bits())
                .collect();
            key.sort_unstable();
            if let Some(&v) = memo.get(&key) {
                return v;
            }
            let v = inclusion_by_indices(&law.pop, law.eta, &law.table, subset);
            memo.insert(key, v);
            v
        };
        let mut max_abs: f64 = 0.0;
        for h in study_subsets(size, k) {
            max_abs = max_abs.max(centered_moment(&h, &mut inclusion).abs());
        }
        rows.push(ErrorRow {
            size,
            value: max_abs,
        });
    }
    Ok(ErrorTable::from_rows(rows))
}

/// The lexicographically first 50 k-subsets of a deterministically shuffled
/// id order.
fn study_subsets(size: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 || k > size {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..size).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(STUDY_SHUFFLE_SEED);
    order.shuffle(&mut rng);
    let mut out = Vec::new();
    let mut comb: Vec<usize> = (0..k).collect();
    loop {
        out.push(comb.iter().map(|&c| order[c]).collect());
        if out.len() == 50 {
            break;
        }
        // Advance `comb` to the next position combination.
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if comb[i] != i + size - k {
                break;
            }
        }
        comb[i] += 1;
        for j in i + 1..k {
            comb[j] = comb[j - 1] + 1;
        }
    }
    out
}

/// Rate study for the inclusion-probability expansion: the maximum over
/// items of |exact - approx| at each size. Items sharing a weight see the
/// same deleted ensemble, so one representative per distinct weight
/// suffices for the maximum.
pub fn inclusion_rate_study(
    pattern: &[f64],
    sizes: &[usize],
    s: usize,
    f: f64,
) -> Result<ErrorTable, RejError> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(RejError::BadSizes);
    }
    if !(f > 0.0 && f < 1.0) {
        return Err(RejError::BadFraction { f });
    }
    if s % 2 != 0 || s > MAX_APPROX_ORDER {
        return Err(RejError::BadExpansionOrder {
            s,
            max: MAX_APPROX_ORDER,
        });
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let pop = WeightedPopulation::from_cycled(pattern, size)?;
        let eta = (f * size as f64).round() as usize;
        let law = RejectiveLaw::new(pop, eta)?;
        let tilt = law.tilt_or_err()?;
        let mut reps: Vec<usize> = Vec::new();
        let mut seen: Vec<u64> = Vec::new();
        for (i, w) in law.pop.weights.iter().enumerate() {
            if !seen.contains(&w.to_bits()) {
                seen.push(w.to_bits());
                reps.push(i);
            }
        }
        let all_coeffs = tilted_coeffs_all_excluding(&tilt.p, s);
        let mut max_err: f64 = 0.0;
        for &a in &reps {
            let exact = inclusion_by_indices(&law.pop, law.eta, &law.table, &[a]);
            let approx = evaluate_inclusion_expansion(&all_coeffs[a], tilt.p[a], 0.0);
            max_err = max_err.max((exact - approx).abs());
        }
        rows.push(ErrorRow {
            size,
            value: max_err,
        });
    }
    Ok(ErrorTable::from_rows(rows))
}
