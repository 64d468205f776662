//! Enumeration-oracle checks for the weighted sampling law: every exact
//! quantity must agree with a direct sum over all subsets, and the
//! structural identities connecting conditioned laws, difference operators,
//! and the tilted product measure must hold at machine precision.

mod common;

use ccsamp_core::poisson_binomial::{pmf_exact, BernoulliEnsemble};
use ccsamp_core::rejective::*;
use common::*;

fn law_from(weights: &[f64], eta: usize) -> RejectiveLaw {
    RejectiveLaw::new(WeightedPopulation::from_weights(weights).unwrap(), eta).unwrap()
}

fn ids(idx: &[usize]) -> Vec<String> {
    idx.iter().map(|i| (i + 1).to_string()).collect()
}

#[test]
fn exact_operations_match_enumeration() {
    let fixtures: Vec<Vec<f64>> = vec![
        vec![1.0, 2.0, 3.0],
        vec![1.0, 1.0, 1.0, 1.0],
        vec![0.5, 1.5, 2.5, 3.5, 4.5],
        vec![2.0, 2.0, 5.0, 5.0, 1.0, 1.0],
        vec![1.0, 10.0, 100.0, 5.0, 0.1],
        vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0],
        vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0],
    ];
    for weights in &fixtures {
        let n = weights.len();
        for eta in 1..n {
            let masses = enumerate_masses(weights, eta);
            let law = law_from(weights, eta);
            // Singleton and pair inclusions.
            let mut total_single = 0.0;
            for a in 0..n {
                let got = inclusion_exact(&law, &[&(a + 1).to_string()]).unwrap();
                let want = oracle_inclusion(&masses, 1 << a);
                assert!((got - want).abs() < 1e-12, "w={weights:?} eta={eta} a={a}");
                total_single += got;
            }
            assert!((total_single - eta as f64).abs() < 1e-9);
            if eta >= 2 && n >= 3 {
                let got = inclusion_exact(&law, &["1", "3"]).unwrap();
                let want = oracle_inclusion(&masses, 0b101);
                assert!((got - want).abs() < 1e-12);
            }
            // Centered moments by both routes.
            for h in [vec![0, 1], vec![0, n - 1]] {
                let hs = ids(&h);
                let hrefs: Vec<&str> = hs.iter().map(|s| s.as_str()).collect();
                let want = oracle_corr(&masses, &h);
                let got = corr_exact(&law, &hrefs).unwrap();
                let got_rec = corr_recursion(&law, &hrefs).unwrap();
                assert!((got - want).abs() < 1e-12, "corr w={weights:?} eta={eta}");
                assert!((got_rec - want).abs() < 1e-10, "rec w={weights:?} eta={eta}");
            }
            if n >= 4 {
                let h = vec![0, 1, 2];
                let hs = ids(&h);
                let hrefs: Vec<&str> = hs.iter().map(|s| s.as_str()).collect();
                let want = oracle_corr(&masses, &h);
                assert!((corr_exact(&law, &hrefs).unwrap() - want).abs() < 1e-12);
                assert!((corr_recursion(&law, &hrefs).unwrap() - want).abs() < 1e-10);
            }
            // Conditioning on the first item in, last item out.
            if eta >= 2 && n >= 4 {
                let cond = conditional_law(
                    &law,
                    &ConditionalSpec {
                        must_include: vec!["1".into()],
                        must_exclude: vec![n.to_string()],
                    },
                )
                .unwrap();
                for a in 1..n - 1 {
                    let got = inclusion_exact(&cond, &[&(a + 1).to_string()]).unwrap();
                    let want =
                        oracle_conditional_inclusion(&masses, 1 << 0, 1 << (n - 1), a);
                    assert!((got - want).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn duplicate_weight_recursion_still_matches() {
    // Tied weights give coinciding conditional laws along the peel.
    let weights = [2.0, 2.0, 2.0, 7.0, 7.0, 1.0];
    let masses = enumerate_masses(&weights, 3);
    let law = law_from(&weights, 3);
    for h in [vec![0, 1], vec![0, 1, 2], vec![3, 4], vec![0, 3, 5]] {
        let hs = ids(&h);
        let hrefs: Vec<&str> = hs.iter().map(|s| s.as_str()).collect();
        let want = oracle_corr(&masses, &h);
        assert!((corr_exact(&law, &hrefs).unwrap() - want).abs() < 1e-12);
        assert!((corr_recursion(&law, &hrefs).unwrap() - want).abs() < 1e-10);
    }
}

/// Difference-operator identity: the alternating sum of conditioned
/// inclusions over subsets of H equals the sign-flipped iterated
/// case-count difference on the H-deleted law.
#[test]
fn conditioning_difference_identity() {
    let weights = [1.0, 2.0, 3.0, 1.5, 2.5, 0.5, 4.0, 1.2, 2.2];
    let n = weights.len();
    let binom = |t: usize, j: usize| -> f64 {
        let mut v = 1.0;
        for i in 0..j {
            v = v * (t - i) as f64 / (i + 1) as f64;
        }
        v
    };
    for eta in [3usize, 4, 5] {
        let law = law_from(&weights, eta);
        let a = n - 1; // target item kept out of H
        for h in [vec![0usize], vec![0, 1], vec![0, 1, 2]] {
            let t = h.len();
            // Left side via conditioned laws over all splits of H.
            let mut lhs = 0.0;
            for mask in 0u32..(1 << t) {
                let mut inc = Vec::new();
                let mut exc = Vec::new();
                for (j, &item) in h.iter().enumerate() {
                    if mask >> j & 1 == 1 {
                        inc.push((item + 1).to_string());
                    } else {
                        exc.push((item + 1).to_string());
                    }
                }
                let sign = if exc.len() % 2 == 0 { 1.0 } else { -1.0 };
                let cond = conditional_law(
                    &law,
                    &ConditionalSpec {
                        must_include: inc,
                        must_exclude: exc,
                    },
                )
                .unwrap();
                lhs += sign * inclusion_exact(&cond, &[&(a + 1).to_string()]).unwrap();
            }
            // Right side: iterated difference in the case count on the
            // deleted population.
            let deleted: Vec<f64> = weights
                .iter()
                .enumerate()
                .filter(|(i, _)| !h.contains(i))
                .map(|(_, &w)| w)
                .collect();
            // Item a's position within the deleted population.
            let a_pos = deleted.len() - 1;
            let mut rhs = 0.0;
            for j in 0..=t {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                let shifted = law_from(&deleted, eta - j);
                rhs += sign
                    * binom(t, j)
                    * inclusion_exact(&shifted, &[&(a_pos + 1).to_string()]).unwrap();
            }
            let signed_rhs = if t % 2 == 0 { rhs } else { -rhs };
            assert!(
                (lhs - signed_rhs).abs() < 1e-12,
                "eta={eta} |H|={t}: {lhs} vs {signed_rhs}"
            );
        }
    }
}

/// The tilted product measure conditioned on its total reproduces the law
/// for any tilt value, and the sequential sampler's chain probabilities
/// match it exactly.
#[test]
fn conditioned_product_measure_is_tilt_invariant() {
    let weights = [1.0, 2.0, 3.0, 1.5, 0.8, 2.4];
    let eta = 3;
    let masses = enumerate_masses(&weights, eta);
    let law = law_from(&weights, eta);
    let lambda_star = law.lambda_star().unwrap();
    for lambda in [0.5 * lambda_star, lambda_star, 2.0 * lambda_star] {
        let probs: Vec<f64> = weights
            .iter()
            .map(|&w| lambda * w / (1.0 + lambda * w))
            .collect();
        let pmf = pmf_exact(&BernoulliEnsemble::new(probs.clone()).unwrap());
        for &(mask, want) in &masses {
            // Product-measure mass of this exact indicator pattern divided
            // by the probability of the total.
            let mut prod = 1.0;
            let mut selected = vec![false; weights.len()];
            for i in 0..weights.len() {
                if mask >> i & 1 == 1 {
                    prod *= probs[i];
                    selected[i] = true;
                } else {
                    prod *= 1.0 - probs[i];
                }
            }
            let conditioned = prod / pmf[eta];
            assert!(
                (conditioned - want).abs() < 1e-13,
                "lambda={lambda} mask={mask:b}"
            );
            let chain = sequential_set_probability(&probs, eta, &selected);
            assert!(
                (chain - want).abs() < 1e-13,
                "chain lambda={lambda} mask={mask:b}"
            );
        }
    }
}

#[test]
fn weight_scaling_leaves_the_law_fixed() {
    let weights = [1.0, 2.0, 3.0, 4.5, 0.7];
    let eta = 2;
    let law = law_from(&weights, eta);
    for c in [0.001, 0.5, 7.0, 1e6] {
        let scaled: Vec<f64> = weights.iter().map(|w| w * c).collect();
        let scaled_law = law_from(&scaled, eta);
        for a in 0..weights.len() {
            let id = (a + 1).to_string();
            let p0 = inclusion_exact(&law, &[&id]).unwrap();
            let p1 = inclusion_exact(&scaled_law, &[&id]).unwrap();
            assert!((p0 - p1).abs() < 1e-13);
        }
        let c0 = corr_exact(&law, &["1", "2"]).unwrap();
        let c1 = corr_exact(&scaled_law, &["1", "2"]).unwrap();
        assert!((c0 - c1).abs() < 1e-13);
        let l0 = law.lambda_star().unwrap();
        let l1 = scaled_law.lambda_star().unwrap();
        assert!((l1 * c - l0).abs() < 1e-11 * l0);
    }
}

#[test]
fn srs_reduction_on_equal_weights() {
    for n in [6usize, 9, 12] {
        for eta in [2usize, 3] {
            let law = law_from(&vec![1.7; n], eta);
            for a in 0..n {
                let got = inclusion_exact(&law, &[&(a + 1).to_string()]).unwrap();
                assert!((got - eta as f64 / n as f64).abs() < 1e-13);
            }
            let got = corr_exact(&law, &["1", "2"]).unwrap();
            let want = srs_corr_closed_form(n, eta, 2).unwrap();
            assert!((got - want).abs() < 1e-12);
        }
    }
}

/// The complement of a sample from the reciprocal-weight law has the same
/// distribution as a direct sample; checked through the enumerated masses.
#[test]
fn complement_law_has_reciprocal_weights() {
    let weights = [1.0, 2.0, 3.0, 1.5, 0.8];
    let n = weights.len();
    let eta = 4;
    let recip: Vec<f64> = weights.iter().map(|w| 1.0 / w).collect();
    let masses = enumerate_masses(&weights, eta);
    let comp_masses = enumerate_masses(&recip, n - eta);
    let full: u32 = (1 << n) - 1;
    for &(mask, m) in &masses {
        let comp = full & !mask;
        let m2 = comp_masses
            .iter()
            .find(|(cm, _)| *cm == comp)
            .map(|(_, v)| *v)
            .unwrap();
        assert!((m - m2).abs() < 1e-13, "mask {mask:b}");
    }
    // And the library law on reciprocal weights agrees with those masses.
    let comp_law = law_from(&recip, n - eta);
    for a in 0..n {
        let got = inclusion_exact(&comp_law, &[&(a + 1).to_string()]).unwrap();
        let want = oracle_inclusion(&comp_masses, 1 << a);
        assert!((got - want).abs() < 1e-12);
    }
}

/// Sampling distribution sanity at desk scale: a million seeded draws per
/// method land within four binomial sigmas of each enumerated subset mass.
#[test]
fn sampler_frequencies_match_masses() {
    use rand::SeedableRng;
    let weights = [1.0, 2.0, 3.0];
    let law = law_from(&weights, 2);
    let masses = enumerate_masses(&weights, 2);
    let draws = 200_000usize;
    for (method, seed) in [(SampleMethod::Sequential, 11u64), (SampleMethod::Rejection, 12)] {
        let mut counts = std::collections::HashMap::new();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        for _ in 0..draws {
            let mut s = sample_with_rng(&law, &mut rng, method).unwrap();
            s.sort();
            *counts.entry(s.join(",")).or_insert(0usize) += 1;
        }
        for &(mask, p) in &masses {
            let mut names: Vec<String> = (0..3)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| (i + 1).to_string())
                .collect();
            names.sort();
            let got = *counts.get(&names.join(",")).unwrap_or(&0) as f64;
            let sd = (draws as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (got - draws as f64 * p).abs() < 4.0 * sd,
                "{method:?} {names:?}: {got} vs {}",
                draws as f64 * p
            );
        }
    }
}
