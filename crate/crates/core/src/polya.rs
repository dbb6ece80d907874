//! Dirichlet-multinomial (Pólya) kernels, evaluated in log space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SparseVec;

/// Smallest value an estimated concentration parameter is clamped to.
pub const ALPHA_FLOOR: f64 = 1e-10;

/// Strictly positive Dirichlet concentration parameters with their cached sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AlphaVector {
    values: Vec<f64>,
    precision: f64,
}

impl AlphaVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("alpha vector must be non-empty"));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::invalid(format!(
                "alpha[{i}] = {v} is not a positive finite number"
            )));
        }
        let precision = values.iter().sum();
        Ok(Self { values, precision })
    }

    /// Builds a vector from raw estimates, replacing anything below `floor`
    /// (including NaN) by `floor`.
    pub fn from_estimate(mut values: Vec<f64>, floor: f64) -> Result<Self> {
        for v in &mut values {
            if v.is_nan() || *v < floor {
                *v = floor;
            }
        }
        Self::new(values)
    }

    /// Symmetric vector with every entry equal to `value`.
    pub fn symmetric(len: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// |α|, the sum of the entries.
    pub fn precision(&self) -> f64 {
        self.precision
    }

    /// Expected proportions α_i / |α|.
    pub fn mean_proportions(&self) -> Vec<f64> {
        self.values.iter().map(|a| a / self.precision).collect()
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::invalid(format!(
                "gene index {i} out of range for alpha of length {}",
                self.len()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for AlphaVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<AlphaVector> for Vec<f64> {
    fn from(a: AlphaVector) -> Self {
        a.values
    }
}

#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `ln Γ(a + n) − ln Γ(a)` for integer `n ≥ 0`.
///
/// Small `n` uses the rising-factorial product, which is both faster and
/// free of the cancellation in the log-gamma difference.
#[inline]
pub fn ln_rising(a: f64, n: u32) -> f64 {
    match n {
        0 => 0.0,
        1 => a.ln(),
        2..=16 if a < 1e12 => {
            let mut p = a;
            for k in 1..n {
                p *= a + f64::from(k);
            }
            p.ln()
        }
        2..=64 => (0..n).map(|k| (a + f64::from(k)).ln()).sum(),
        _ => ln_gamma(a + f64::from(n)) - ln_gamma(a),
    }
}

/// `ln T! − Σ ln x_i!` for one cell.
pub fn log_multinomial_coefficient(x: SparseVec<'_>) -> f64 {
    let total: u64 = x.counts.iter().map(|&c| u64::from(c)).sum();
    ln_gamma(total as f64 + 1.0)
        - x.counts
            .iter()
            .map(|&c| ln_gamma(f64::from(c) + 1.0))
            .sum::<f64>()
}

/// Log Pólya likelihood of a sparse count vector.
///
/// Zero entries contribute nothing and are never visited. With
/// `include_coefficient` the multinomial coefficient is added, giving the
/// absolute log-probability.
pub fn log_polya_likelihood_sparse(
    x: SparseVec<'_>,
    alpha: &AlphaVector,
    include_coefficient: bool,
) -> Result<f64> {
    let mut total: u64 = 0;
    let mut ll = 0.0;
    for (i, c) in x.iter() {
        if i >= alpha.len() {
            return Err(Error::DimensionMismatch(format!(
                "count index {i} beyond alpha length {}",
                alpha.len()
            )));
        }
        ll += ln_rising(alpha.values[i], c);
        total += u64::from(c);
    }
    if total == 0 {
        return Err(Error::invalid("count vector is all zero"));
    }
    let a = alpha.precision;
    ll += ln_gamma(a) - ln_gamma(total as f64 + a);
    if include_coefficient {
        ll += log_multinomial_coefficient(x);
    }
    if !ll.is_finite() {
        return Err(Error::Degenerate(format!(
            "non-finite Pólya log-likelihood ({ll}); alpha may have underflowed"
        )));
    }
    Ok(ll)
}

/// Log Pólya likelihood of a dense count vector of length G.
pub fn log_polya_likelihood(
    x: &[u32],
    alpha: &AlphaVector,
    include_coefficient: bool,
) -> Result<f64> {
    if x.len() != alpha.len() {
        return Err(Error::DimensionMismatch(format!(
            "count vector has length {}, alpha {}",
            x.len(),
            alpha.len()
        )));
    }
    let (indices, counts): (Vec<u32>, Vec<u32>) = x
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, &c)| (i as u32, c))
        .unzip();
    log_polya_likelihood_sparse(
        SparseVec {
            indices: &indices,
            counts: &counts,
        },
        alpha,
        include_coefficient,
    )
}

/// Mean and variance of p_i under Dir(α).
pub fn dirichlet_mean_variance(alpha: &AlphaVector, i: usize) -> Result<(f64, f64)> {
    alpha.check_index(i)?;
    let a = alpha.precision;
    let ai = alpha.values[i];
    Ok((ai / a, ai * (a - ai) / (a * a * (a + 1.0))))
}

/// Parameters of the Beta marginal of p_i under Dir(α): `(α_i, |α| − α_i)`.
pub fn beta_marginal_params(alpha: &AlphaVector, i: usize) -> Result<(f64, f64)> {
    alpha.check_index(i)?;
    let ai = alpha.values[i];
    Ok((ai, alpha.precision - ai))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn alpha(v: &[f64]) -> AlphaVector {
        AlphaVector::new(v.to_vec()).unwrap()
    }

    /// Rising factorial a(a+1)...(a+n-1) by direct multiplication.
    fn rising(a: f64, n: u32) -> f64 {
        (0..n).map(|k| a + f64::from(k)).product()
    }

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    /// Pólya probability from Gamma ratios written as rising factorials.
    fn polya_direct(x: &[u32], a: &[f64]) -> f64 {
        let t: u32 = x.iter().sum();
        let s: f64 = a.iter().sum();
        let coef = factorial(t) / x.iter().map(|&c| factorial(c)).product::<f64>();
        let num: f64 = x.iter().zip(a).map(|(&c, &ai)| rising(ai, c)).product();
        coef * num / rising(s, t)
    }

    #[test]
    fn alpha_vector_validation() {
        assert!(AlphaVector::new(vec![1.0, 0.0]).is_err());
        assert!(AlphaVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(AlphaVector::new(vec![]).is_err());
        let a = AlphaVector::from_estimate(vec![2.0, -1.0, f64::NAN], ALPHA_FLOOR).unwrap();
        assert_eq!(a.values(), &[2.0, ALPHA_FLOOR, ALPHA_FLOOR]);
        assert!((a.precision() - a.values().iter().sum::<f64>()).abs() <= 1e-12 * a.precision());
    }

    #[test]
    fn ln_rising_matches_lgamma_difference() {
        for &a in &[1e-8, 0.3, 1.0, 7.5, 250.0, 1e6] {
            for n in [0u32, 1, 2, 5, 16, 17, 40, 64, 65, 500] {
                let want = ln_gamma(a + f64::from(n)) - ln_gamma(a);
                let got = ln_rising(a, n);
                let tol = 1e-12 * (1.0 + ln_gamma(a + f64::from(n)).abs());
                assert!((got - want).abs() < tol.max(1e-12), "a={a} n={n}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn uniform_alpha_gives_one_over_compositions() {
        let ll = log_polya_likelihood(&[1, 1], &alpha(&[1.0, 1.0]), true).unwrap();
        assert!((ll - (1.0f64 / 3.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn single_category_is_certain() {
        for a in [0.01, 1.0, 30.0] {
            let ll = log_polya_likelihood(&[7], &alpha(&[a]), true).unwrap();
            assert!(ll.abs() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_gamma_arithmetic() {
        let a = [2.0, 1.0, 1.0];
        let x = [2, 0, 1];
        let want = polya_direct(&x, &a);
        // 3 * (2·3 · 1) / (4·5·6) = 18/120
        assert!((want - 0.15).abs() < 1e-15);
        let got = log_polya_likelihood(&x, &alpha(&a), true).unwrap().exp();
        assert!((got - want).abs() < 1e-13);
    }

    #[test]
    fn coefficient_flag_differs_by_multinomial_term() {
        let a = alpha(&[0.5, 2.0, 3.0]);
        let x = [3, 0, 4];
        let with = log_polya_likelihood(&x, &a, true).unwrap();
        let without = log_polya_likelihood(&x, &a, false).unwrap();
        let coef = (factorial(7) / (factorial(3) * factorial(4))).ln();
        assert!((with - without - coef).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(log_polya_likelihood(&[0, 0], &alpha(&[1.0, 1.0]), false).is_err());
        assert!(log_polya_likelihood(&[1], &alpha(&[1.0, 1.0]), false).is_err());
        assert!(dirichlet_mean_variance(&alpha(&[1.0]), 1).is_err());
        assert!(beta_marginal_params(&alpha(&[1.0]), 3).is_err());
    }

    #[test]
    fn moments_and_beta_marginals() {
        let (m, v) = dirichlet_mean_variance(&alpha(&[1.0, 1.0]), 0).unwrap();
        assert_eq!(m, 0.5);
        assert!((v - 1.0 / 12.0).abs() < 1e-15);

        let sym = alpha(&[3.0; 5]);
        for i in 0..5 {
            assert!((dirichlet_mean_variance(&sym, i).unwrap().0 - 0.2).abs() < 1e-15);
        }
        let (_, v_big) = dirichlet_mean_variance(&alpha(&[1e6, 1e6]), 0).unwrap();
        assert!(v_big < 1e-6);

        let a = alpha(&[2.0, 3.0, 5.0]);
        assert_eq!(beta_marginal_params(&a, 0).unwrap(), (2.0, 8.0));
        assert_eq!(beta_marginal_params(&alpha(&[1.0, 1.0]), 1).unwrap(), (1.0, 1.0));
        for i in 0..3 {
            let (p, q) = beta_marginal_params(&a, i).unwrap();
            assert!((p + q - a.precision()).abs() < 1e-12);
        }
    }

    #[test]
    fn vanishing_zero_gene_is_continuous() {
        let base = [1.5, 2.5, 4.0];
        let x = [3, 1, 2];
        let ll0 = log_polya_likelihood(&x, &alpha(&base), true).unwrap();
        let mut diffs = Vec::new();
        for eps in [1e-3, 1e-6] {
            let a = alpha(&[base[0] - eps, base[1], base[2], eps]);
            let ll = log_polya_likelihood(&[x[0], x[1], x[2], 0], &a, true).unwrap();
            diffs.push((ll - ll0).abs());
        }
        assert!(diffs[1] < diffs[0]);
        assert!(diffs[0] < 1e-2 && diffs[1] < 1e-5, "{diffs:?}");
    }

    #[test]
    fn increasing_alpha_toward_observed_category_raises_likelihood() {
        let mut prev = f64::NEG_INFINITY;
        for a1 in [0.5, 1.0, 2.0, 8.0, 32.0] {
            let ll = log_polya_likelihood(&[6, 0], &alpha(&[a1, 1.0]), true).unwrap();
            assert!(ll > prev);
            prev = ll;
        }
    }

    proptest! {
        #[test]
        fn permutation_invariant(
            pairs in prop::collection::vec((0u32..6, 0.05f64..20.0), 1..6),
            rot in 0usize..6,
        ) {
            prop_assume!(pairs.iter().any(|p| p.0 > 0));
            let (x, a): (Vec<u32>, Vec<f64>) = pairs.iter().copied().unzip();
            let ll = log_polya_likelihood(&x, &alpha(&a), true).unwrap();
            let mut x2 = x.clone();
            let mut a2 = a.clone();
            let r = rot % x.len();
            x2.rotate_left(r);
            a2.rotate_left(r);
            let ll2 = log_polya_likelihood(&x2, &alpha(&a2), true).unwrap();
            prop_assert!((ll - ll2).abs() <= 1e-10 * (1.0 + ll.abs()));
        }

        #[test]
        fn sparse_and_direct_routes_agree(
            pairs in prop::collection::vec((0u32..5, 0.1f64..10.0), 1..5),
        ) {
            prop_assume!(pairs.iter().any(|p| p.0 > 0));
            let (x, a): (Vec<u32>, Vec<f64>) = pairs.iter().copied().unzip();
            let got = log_polya_likelihood(&x, &alpha(&a), true).unwrap();
            let want = polya_direct(&x, &a).ln();
            prop_assert!((got - want).abs() < 1e-10);
        }
    }
}
