//! The Poisson-Binomial distribution: the law of a sum of independent
//! Bernoulli variables with heterogeneous success probabilities.
//!
//! Two computation routes are provided and cross-checked against each other:
//! an exact O(n^2) convolution for the full pmf, and a Fourier route built
//! on the characteristic function of the centered sum, whose moment-weighted
//! integrals drive lattice-point expansions of `P(X = EX + nu)` to a chosen
//! order. The expansion error shrinks like `n^{-(s+3)/2}` for even order `s`,
//! which `expansion_error_study` measures empirically.

use crate::quadrature::{composite_points, gl32};
use crate::table::{ErrorRow, ErrorTable};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PbError {
    #[error("ensemble must contain at least one probability")]
    EmptyEnsemble,
    #[error("probability at index {index} is {value}; must lie strictly inside (0, 1)")]
    InvalidProbability { index: usize, value: f64 },
    #[error("t = {t} outside [-pi, pi]")]
    TOutOfRange { t: f64 },
    #[error("coefficient order {j} exceeds the supported maximum {max}")]
    OrderTooLarge { j: usize, max: usize },
    #[error("expansion order {s} must be even and at most {max}")]
    BadExpansionOrder { s: usize, max: usize },
    #[error("offset {nu} is not on the lattice: EX + nu = {shifted} is not integral")]
    NonLatticeOffset { nu: f64, shifted: f64 },
    #[error("quadrature error estimate {estimate:.3e} above tolerance {tolerance:.1e}")]
    QuadratureNonConvergence { estimate: f64, tolerance: f64 },
    #[error("sizes must be strictly increasing and nonempty")]
    BadSizes,
}

/// A finite sequence of Bernoulli success probabilities, each strictly
/// inside (0, 1). Degenerate entries are rejected at construction so the
/// variance accounting downstream stays honest.
#[derive(Clone, Debug)]
pub struct BernoulliEnsemble {
    probs: Vec<f64>,
}

impl BernoulliEnsemble {
    pub fn new(probs: Vec<f64>) -> Result<Self, PbError> {
        if probs.is_empty() {
            return Err(PbError::EmptyEnsemble);
        }
        for (index, &value) in probs.iter().enumerate() {
            if !(value > 0.0 && value < 1.0) {
                return Err(PbError::InvalidProbability { index, value });
            }
        }
        Ok(BernoulliEnsemble { probs })
    }

    /// Build an ensemble of length `n` by cycling through `pattern`.
    pub fn from_cycled(pattern: &[f64], n: usize) -> Result<Self, PbError> {
        if pattern.is_empty() || n == 0 {
            return Err(PbError::EmptyEnsemble);
        }
        Self::new((0..n).map(|j| pattern[j % pattern.len()]).collect())
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// First moments of the ensemble: `mean = sum p_j`, `v2 = sum p_j q_j` and
/// the third-cumulant sum `w = sum p_j q_j (p_j - q_j)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleMoments {
    pub mean: f64,
    pub v2: f64,
    pub w: f64,
}

pub fn moments(ensemble: &BernoulliEnsemble) -> EnsembleMoments {
    let mut mean = 0.0;
    let mut v2 = 0.0;
    let mut w = 0.0;
    for &p in &ensemble.probs {
        let q = 1.0 - p;
        mean += p;
        v2 += p * q;
        w += p * q * (p - q);
    }
    EnsembleMoments { mean, v2, w }
}

/// Exact pmf of the sum by forward convolution over items: entry `k` is
/// `P(X = k)`. All terms are nonnegative, so double precision carries no
/// cancellation.
pub fn pmf_exact(ensemble: &BernoulliEnsemble) -> Vec<f64> {
    let n = ensemble.len();
    let mut f = vec![0.0; n + 1];
    f[0] = 1.0;
    for (i, &p) in ensemble.probs.iter().enumerate() {
        let q = 1.0 - p;
        for k in (1..=i + 1).rev() {
            f[k] = f[k] * q + f[k - 1] * p;
        }
        f[0] *= q;
    }
    f
}

/// Characteristic function of the centered sum `X - EX` at `t in [-pi, pi]`:
/// the product over items of `q e^{-itp} + p e^{itq}`.
pub fn char_fn(ensemble: &BernoulliEnsemble, t: f64) -> Result<Complex64, PbError> {
    if !(t >= -std::f64::consts::PI && t <= std::f64::consts::PI) {
        return Err(PbError::TOutOfRange { t });
    }
    Ok(char_fn_unchecked(&ensemble.probs, t))
}

fn char_fn_unchecked(probs: &[f64], t: f64) -> Complex64 {
    // q e^{-itp} + p e^{itq} = e^{-itp} (q + p e^{it}); the mean phase is
    // pulled out so only one complex exponential is needed per t.
    let z = Complex64::new(0.0, t).exp();
    let mut prod = Complex64::new(1.0, 0.0);
    let mut mean = 0.0;
    for &p in probs {
        prod *= Complex64::new(1.0 - p, 0.0) + p * z;
        mean += p;
    }
    prod * Complex64::new(0.0, -t * mean).exp()
}

/// Moment-weighted Fourier integral of the centered characteristic function:
/// `(1/2pi) * integral over [-pi, pi] of t^j phi(t) dt`. Real for even `j`,
/// purely imaginary for odd `j`.
#[derive(Clone, Debug)]
pub struct FourierCoefficient {
    pub order: usize,
    pub value: Complex64,
    pub quadrature_error: f64,
}

pub const MAX_COEFFICIENT_ORDER: usize = 16;
pub const MAX_EXPANSION_ORDER: usize = 12;
const QUAD_TOL: f64 = 1e-12;

/// Panel count for the composite rule; grows with n so the shrinking
/// effective support of the characteristic function stays resolved.
pub(crate) fn panels_for(n: usize) -> usize {
    4 + n.div_ceil(8)
}

/// All coefficients of order 0..=j_max in one pass, sharing the
/// characteristic-function evaluations across orders. Conjugate symmetry is
/// exploited: the integral runs over [0, pi] only, and real/imaginary parts
/// are assembled by parity.
fn coefficients_upto(probs: &[f64], j_max: usize) -> Vec<FourierCoefficient> {
    let base = panels_for(probs.len());
    let coarse = integrate_moments(probs, j_max, base);
    let fine = integrate_moments(probs, j_max, 2 * base);
    (0..=j_max)
        .map(|j| FourierCoefficient {
            order: j,
            value: coarse[j],
            quadrature_error: (coarse[j] - fine[j]).norm(),
        })
        .collect()
}

fn integrate_moments(probs: &[f64], j_max: usize, panels: usize) -> Vec<Complex64> {
    let pts = composite_points(gl32(), 0.0, std::f64::consts::PI, panels);
    let mut re_acc = vec![0.0; j_max + 1];
    let mut im_acc = vec![0.0; j_max + 1];
    for &(t, w) in &pts {
        let phi = char_fn_unchecked(probs, t);
        let mut tj = 1.0;
        for j in 0..=j_max {
            re_acc[j] += w * tj * phi.re;
            im_acc[j] += w * tj * phi.im;
            tj *= t;
        }
    }
    let inv_pi = 1.0 / std::f64::consts::PI;
    (0..=j_max)
        .map(|j| {
            if j % 2 == 0 {
                Complex64::new(inv_pi * re_acc[j], 0.0)
            } else {
                Complex64::new(0.0, inv_pi * im_acc[j])
            }
        })
        .collect()
}

pub fn fourier_coefficient(
    ensemble: &BernoulliEnsemble,
    j: usize,
) -> Result<FourierCoefficient, PbError> {
    if j > MAX_COEFFICIENT_ORDER {
        return Err(PbError::OrderTooLarge {
            j,
            max: MAX_COEFFICIENT_ORDER,
        });
    }
    let coeff = coefficients_upto(&ensemble.probs, j).pop().expect("nonempty");
    if coeff.quadrature_error > QUAD_TOL {
        return Err(PbError::QuadratureNonConvergence {
            estimate: coeff.quadrature_error,
            tolerance: QUAD_TOL,
        });
    }
    Ok(coeff)
}

/// Lattice-point expansion `m_nu(s) = sum_{j<=s} (-i nu)^j / j! * I_j`
/// approximating `P(X = EX + nu)`.
#[derive(Clone, Debug)]
pub struct LcltExpansion {
    pub s: usize,
    pub nu: f64,
    pub value: f64,
    pub coefficients: Vec<Complex64>,
    pub imag_residue: f64,
    /// Set when `v2 < 0.01 n`: the expansion is still evaluable but its
    /// error guarantees degrade.
    pub condition_warning: bool,
}

/// Evaluate the expansion sum at a (possibly non-integer) offset `nu` from
/// precomputed coefficients.
pub(crate) fn expansion_sum(coefficients: &[Complex64], nu: f64) -> Complex64 {
    let mut term = Complex64::new(1.0, 0.0);
    let step = Complex64::new(0.0, -nu);
    let mut acc = Complex64::new(0.0, 0.0);
    for (j, c) in coefficients.iter().enumerate() {
        if j > 0 {
            term *= step / j as f64;
        }
        acc += term * c;
    }
    acc
}

pub fn lclt_expansion(
    ensemble: &BernoulliEnsemble,
    nu: f64,
    s: usize,
) -> Result<LcltExpansion, PbError> {
    if s % 2 != 0 || s > MAX_EXPANSION_ORDER {
        return Err(PbError::BadExpansionOrder {
            s,
            max: MAX_EXPANSION_ORDER,
        });
    }
    let m = moments(ensemble);
    let shifted = m.mean + nu;
    if (shifted - shifted.round()).abs() >= 1e-9 {
        return Err(PbError::NonLatticeOffset { nu, shifted });
    }
    let coefficients: Vec<Complex64> = coefficients_upto(&ensemble.probs, s)
        .into_iter()
        .map(|c| c.value)
        .collect();
    let sum = expansion_sum(&coefficients, nu);
    Ok(LcltExpansion {
        s,
        nu,
        value: sum.re,
        coefficients,
        imag_residue: sum.im.abs(),
        condition_warning: m.v2 < 0.01 * ensemble.len() as f64,
    })
}

/// `P(X = EX + nu)` by direct quadrature of the inversion formula,
/// independent of the convolution pmf.
pub fn inversion_probability(ensemble: &BernoulliEnsemble, nu: f64) -> Result<f64, PbError> {
    let m = moments(ensemble);
    let shifted = m.mean + nu;
    if (shifted - shifted.round()).abs() >= 1e-9 {
        return Err(PbError::NonLatticeOffset { nu, shifted });
    }
    let panels = panels_for(ensemble.len());
    let pts = composite_points(gl32(), 0.0, std::f64::consts::PI, panels);
    let mut acc = 0.0;
    for &(t, w) in &pts {
        let phi = char_fn_unchecked(&ensemble.probs, t);
        // Integrand at -t is the conjugate, so twice the real part suffices.
        acc += w * (Complex64::new(0.0, -t * nu).exp() * phi).re;
    }
    Ok(acc / std::f64::consts::PI)
}

/// Measure the expansion error against the exact pmf across ensemble sizes.
///
/// For each size the ensemble cycles `pattern`; the reported value is the
/// maximum of `|P(X = EX + nu) - m_nu(s)|` over lattice offsets `|nu| <=
/// kappa`, and the table carries the fitted log-log slope across sizes.
pub fn expansion_error_study(
    pattern: &[f64],
    sizes: &[usize],
    s: usize,
    kappa: usize,
) -> Result<ErrorTable, PbError> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PbError::BadSizes);
    }
    if s % 2 != 0 || s > MAX_EXPANSION_ORDER {
        return Err(PbError::BadExpansionOrder {
            s,
            max: MAX_EXPANSION_ORDER,
        });
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let ensemble = BernoulliEnsemble::from_cycled(pattern, n)?;
        let pmf = pmf_exact(&ensemble);
        let mean = moments(&ensemble).mean;
        let coefficients: Vec<Complex64> = coefficients_upto(&ensemble.probs, s)
            .into_iter()
            .map(|c| c.value)
            .collect();
        let lo = ((mean - kappa as f64).ceil().max(0.0)) as usize;
        let hi = ((mean + kappa as f64).floor()) as usize;
        let mut max_err: f64 = 0.0;
        for k in lo..=hi.min(n) {
            let nu = k as f64 - mean;
            let approx = expansion_sum(&coefficients, nu).re;
            max_err = max_err.max((pmf[k] - approx).abs());
        }
        rows.push(ErrorRow {
            size: n,
            value: max_err,
        });
    }
    Ok(ErrorTable::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ens(probs: &[f64]) -> BernoulliEnsemble {
        BernoulliEnsemble::new(probs.to_vec()).unwrap()
    }

    /// Oracle: pmf by explicit enumeration of all 2^n outcomes.
    fn pmf_enumerated(probs: &[f64]) -> Vec<f64> {
        let n = probs.len();
        let mut out = vec![0.0; n + 1];
        for mask in 0u32..(1 << n) {
            let mut prob = 1.0;
            let mut count = 0;
            for (j, &p) in probs.iter().enumerate() {
                if mask >> j & 1 == 1 {
                    prob *= p;
                    count += 1;
                } else {
                    prob *= 1.0 - p;
                }
            }
            out[count] += prob;
        }
        out
    }

    #[test]
    fn construction_rejects_degenerate_probs() {
        assert!(BernoulliEnsemble::new(vec![]).is_err());
        assert!(BernoulliEnsemble::new(vec![0.5, 0.0]).is_err());
        assert!(BernoulliEnsemble::new(vec![1.0]).is_err());
        assert!(BernoulliEnsemble::new(vec![0.5, f64::NAN]).is_err());
    }

    #[test]
    fn pmf_matches_hand_values() {
        let pmf = pmf_exact(&ens(&[0.5, 0.5]));
        assert_eq!(pmf, vec![0.25, 0.5, 0.25]);
        // Frozen from the 2^2 enumeration oracle.
        let pmf = pmf_exact(&ens(&[0.3, 0.7]));
        for (got, want) in pmf.iter().zip([0.21, 0.58, 0.21]) {
            assert!((got - want).abs() < 1e-15);
        }
        let p = 0.37;
        let pmf = pmf_exact(&ens(&[p]));
        assert_eq!(pmf, vec![1.0 - p, p]);
    }

    #[test]
    fn pmf_matches_enumeration_and_normalizes() {
        let probs = [0.12, 0.5, 0.83, 0.4, 0.66, 0.29, 0.91];
        let dp = pmf_exact(&ens(&probs));
        let brute = pmf_enumerated(&probs);
        for (a, b) in dp.iter().zip(&brute) {
            assert!((a - b).abs() < 1e-14);
        }
        let total: f64 = dp.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(dp.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn char_fn_known_points() {
        let e = ens(&[0.5, 0.5]);
        let v = char_fn(&e, 0.0).unwrap();
        assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        // Each factor is cos(t/2); at t = pi both vanish.
        let v = char_fn(&e, std::f64::consts::PI).unwrap();
        assert!(v.norm() < 1e-15);
        // Single fair coin at t = 1: the symmetric two-term sum is cos(1/2).
        let v = char_fn(&ens(&[0.5]), 1.0).unwrap();
        assert!((v - Complex64::new((0.5f64).cos(), 0.0)).norm() < 1e-15);
        assert!(char_fn(&e, 3.3).is_err());
    }

    #[test]
    fn char_fn_magnitude_bound_random_pairs() {
        // |phi(t)| <= exp(-t^2 v^2 / 6) on [-pi, pi].
        let mut state = 0x243F6A8885A308D3u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..1000 {
            let n = 1 + (next() * 20.0) as usize;
            let probs: Vec<f64> = (0..n).map(|_| 0.01 + 0.98 * next()).collect();
            let e = ens(&probs);
            let t = (2.0 * next() - 1.0) * std::f64::consts::PI;
            let m = moments(&e);
            let bound = (-t * t * m.v2 / 6.0).exp();
            assert!(char_fn(&e, t).unwrap().norm() <= bound + 1e-12);
        }
    }

    #[test]
    fn moments_hand_values() {
        let m = moments(&ens(&[0.5, 0.5]));
        assert_eq!((m.mean, m.v2, m.w), (1.0, 0.5, 0.0));
        let m = moments(&ens(&[0.2]));
        assert!((m.mean - 0.2).abs() < 1e-15);
        assert!((m.v2 - 0.16).abs() < 1e-15);
        assert!((m.w + 0.096).abs() < 1e-15);
    }

    #[test]
    fn per_term_third_cumulant_bound() {
        // p q (p - q) <= sqrt(3)/18 over the whole unit interval.
        let bound = 3f64.sqrt() / 18.0;
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            assert!(p * (1.0 - p) * (p - (1.0 - p)) <= bound + 1e-15);
        }
    }

    #[test]
    fn coefficient_order_zero_is_central_probability() {
        // For two fair coins, I_0 = P(X = EX) = P(X = 1) = 1/2.
        let c = fourier_coefficient(&ens(&[0.5, 0.5]), 0).unwrap();
        assert!((c.value.re - 0.5).abs() < 1e-13);
        assert!(c.value.im == 0.0);
        assert!(c.quadrature_error < 1e-13);
    }

    #[test]
    fn coefficient_parity_and_magnitude() {
        let e = ens(&[0.2, 0.5, 0.6, 0.9, 0.35]);
        for j in 0..=8 {
            let c = fourier_coefficient(&e, j).unwrap();
            if j % 2 == 0 {
                assert_eq!(c.value.im, 0.0);
            } else {
                assert_eq!(c.value.re, 0.0);
            }
            assert!(c.value.norm() <= std::f64::consts::PI.powi(j as i32) + 1e-12);
        }
        assert!(fourier_coefficient(&e, 17).is_err());
    }

    #[test]
    fn odd_coefficient_decay_rate() {
        // With a skewed cycle the third-cumulant sum grows linearly and the
        // first odd coefficient decays like n^{-3/2}.
        let sizes = [64, 128, 256, 512, 1024, 2048, 4096];
        let pts: Vec<(f64, f64)> = sizes
            .iter()
            .map(|&n| {
                let e = BernoulliEnsemble::from_cycled(&[0.2, 0.5, 0.6], n).unwrap();
                let c = fourier_coefficient(&e, 1).unwrap();
                (n as f64, c.value.norm())
            })
            .collect();
        let slope = crate::table::fit_loglog_slope(&pts).unwrap();
        assert!(
            (-1.8..=-1.2).contains(&slope),
            "odd-coefficient slope {slope}"
        );
        // A cycle symmetric under p -> 1-p cancels every odd cumulant sum,
        // so the decay accelerates; the generic bound still holds.
        let pts: Vec<(f64, f64)> = sizes
            .iter()
            .map(|&n| {
                let e = BernoulliEnsemble::from_cycled(&[0.3, 0.5, 0.7], n).unwrap();
                let c = fourier_coefficient(&e, 1).unwrap();
                (n as f64, c.value.norm())
            })
            .collect();
        let slope = crate::table::fit_loglog_slope(&pts).unwrap();
        assert!(slope <= -1.2, "symmetric-cycle slope {slope}");
    }

    #[test]
    fn expansion_order_zero_matches_coefficient() {
        let e = ens(&[0.5, 0.5]);
        let x = lclt_expansion(&e, 0.0, 0).unwrap();
        assert!((x.value - 0.5).abs() < 1e-13);
        assert!(x.imag_residue < 1e-10);
        assert!(!x.condition_warning);

        let e = ens(&[0.2, 0.8, 0.4, 0.6, 0.5]);
        // Mean is 2.5; the lattice sits at half-integer offsets.
        let x = lclt_expansion(&e, 0.5, 0).unwrap();
        let c = fourier_coefficient(&e, 0).unwrap();
        assert_eq!(x.value, c.value.re);
    }

    #[test]
    fn expansion_rejects_bad_inputs() {
        let e = ens(&[0.5, 0.5]);
        assert!(matches!(
            lclt_expansion(&e, 0.25, 0),
            Err(PbError::NonLatticeOffset { .. })
        ));
        assert!(matches!(
            lclt_expansion(&e, 0.0, 3),
            Err(PbError::BadExpansionOrder { .. })
        ));
    }

    #[test]
    fn condition_warning_on_extreme_ensembles() {
        let e = BernoulliEnsemble::new(vec![1e-4; 50]).unwrap();
        // Lattice point at X = 0.
        let nu = -moments(&e).mean;
        let x = lclt_expansion(&e, nu, 0).unwrap();
        assert!(x.condition_warning);
    }

    #[test]
    fn inversion_matches_pmf() {
        let probs = [0.12, 0.5, 0.83, 0.4, 0.66, 0.29, 0.91, 0.05, 0.55];
        let e = ens(&probs);
        let pmf = pmf_exact(&e);
        let mean = moments(&e).mean;
        for k in 0..=probs.len() {
            let f = inversion_probability(&e, k as f64 - mean).unwrap();
            assert!((f - pmf[k]).abs() < 1e-11, "k={k}");
        }
    }

    #[test]
    fn study_single_size_has_undefined_slope() {
        let t = expansion_error_study(&[0.5], &[32], 0, 2).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!(t.slope.is_none());
    }

    #[test]
    fn study_fair_coin_rate() {
        let sizes = [64, 128, 256, 512, 1024, 2048];
        let t = expansion_error_study(&[0.5], &sizes, 0, 3).unwrap();
        let slope = t.slope.unwrap();
        assert!((slope + 1.5).abs() < 0.35, "slope {slope}");
    }

    #[test]
    fn refinement_is_monotone_in_order() {
        // Once n is moderate, raising the order never hurts the worst-case
        // lattice error.
        for n in [256usize, 512] {
            let e = BernoulliEnsemble::from_cycled(&[0.3, 0.5, 0.7], n).unwrap();
            let pmf = pmf_exact(&e);
            let mean = moments(&e).mean;
            let mut errs = Vec::new();
            for s in [0usize, 2, 4] {
                let coeffs: Vec<Complex64> = coefficients_upto(e.probs(), s)
                    .into_iter()
                    .map(|c| c.value)
                    .collect();
                let mut max_err: f64 = 0.0;
                for k in (mean as usize - 2)..=(mean as usize + 2) {
                    let nu = k as f64 - mean;
                    max_err = max_err.max((pmf[k] - expansion_sum(&coeffs, nu).re).abs());
                }
                errs.push(max_err);
            }
            assert!(errs[0] >= errs[1] && errs[1] >= errs[2], "errs {errs:?}");
        }
    }
}
