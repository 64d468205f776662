//! Brute-force oracles shared by the integration suites. Everything here
//! enumerates subsets directly and never touches the library's symmetric
//! polynomial or expansion code paths.

/// All size-eta subsets of `weights.len()` items as bitmasks with their
/// normalized product-weight masses.
pub fn enumerate_masses(weights: &[f64], eta: usize) -> Vec<(u32, f64)> {
    let n = weights.len();
    assert!(n <= 20, "oracle is for desk-scale populations");
    let mut out = Vec::new();
    let mut total = 0.0;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != eta {
            continue;
        }
        let mut prod = 1.0;
        for (i, w) in weights.iter().enumerate() {
            if mask >> i & 1 == 1 {
                prod *= w;
            }
        }
        out.push((mask, prod));
        total += prod;
    }
    for (_, m) in &mut out {
        *m /= total;
    }
    out
}

/// Joint inclusion probability of the items in `set_mask`.
pub fn oracle_inclusion(masses: &[(u32, f64)], set_mask: u32) -> f64 {
    masses
        .iter()
        .filter(|(mask, _)| mask & set_mask == set_mask)
        .map(|(_, m)| m)
        .sum()
}

/// Centered product moment over the items of `h`.
pub fn oracle_corr(masses: &[(u32, f64)], h: &[usize]) -> f64 {
    let p: Vec<f64> = h
        .iter()
        .map(|&i| oracle_inclusion(masses, 1 << i))
        .collect();
    masses
        .iter()
        .map(|(mask, m)| {
            let mut prod = *m;
            for (j, &i) in h.iter().enumerate() {
                let ind = (mask >> i & 1) as f64;
                prod *= ind - p[j];
            }
            prod
        })
        .sum()
}

/// Inclusion probability of item `a` under the law conditioned to contain
/// `include_mask` and avoid `exclude_mask`: renormalize the masses over the
/// feasible subsets.
pub fn oracle_conditional_inclusion(
    masses: &[(u32, f64)],
    include_mask: u32,
    exclude_mask: u32,
    a: usize,
) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (mask, m) in masses {
        if mask & include_mask == include_mask && mask & exclude_mask == 0 {
            den += m;
            if mask >> a & 1 == 1 {
                num += m;
            }
        }
    }
    num / den
}
