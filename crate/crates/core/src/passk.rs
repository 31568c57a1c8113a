//! pass@k estimators.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid counts n={n} c={c} k={k}: need 0 <= c <= n and 1 <= k <= n")]
pub struct InvalidCounts {
    pub n: usize,
    pub c: usize,
    pub k: usize,
}

/// Unbiased estimate of the chance that at least one of `k` samples drawn
/// without replacement from `n` (of which `c` are correct) is correct:
/// `1 - C(n-c, k) / C(n, k)`, evaluated as a running product to avoid
/// overflowing binomials.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64, InvalidCounts> {
    if c > n || k == 0 || k > n {
        return Err(InvalidCounts { n, c, k });
    }
    if n - c < k {
        return Ok(1.0);
    }
    // C(n-c, k) / C(n, k) = prod_{i=n-c+1}^{n} (1 - k / i)
    let miss: f64 = ((n - c + 1)..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

/// 1.0 when any of the first `k` samples (in generation order) is correct.
pub fn best_of_k(correct: &[bool], k: usize) -> Result<f64, InvalidCounts> {
    let n = correct.len();
    let c = correct.iter().filter(|&&x| x).count();
    if k == 0 || k > n {
        return Err(InvalidCounts { n, c, k });
    }
    Ok(if correct[..k].iter().any(|&x| x) { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(pass_at_k(1, 1, 1).unwrap(), 1.0);
        for k in 1..=20 {
            assert_eq!(pass_at_k(20, 0, k).unwrap(), 0.0);
        }
        approx::assert_abs_diff_eq!(pass_at_k(5, 2, 2).unwrap(), 0.7, epsilon = 1e-15);
        assert_eq!(pass_at_k(5, 4, 2).unwrap(), 1.0);
    }

    #[test]
    fn invalid_counts() {
        assert!(pass_at_k(3, 4, 1).is_err());
        assert!(pass_at_k(3, 1, 0).is_err());
        assert!(pass_at_k(3, 1, 4).is_err());
        assert!(best_of_k(&[], 1).is_err());
    }

    #[test]
    fn best_of_k_uses_order() {
        assert_eq!(best_of_k(&[false, true, false], 1).unwrap(), 0.0);
        assert_eq!(best_of_k(&[false, true, false], 2).unwrap(), 1.0);
    }

    #[test]
    fn large_n_stays_finite() {
        let p = pass_at_k(1000, 3, 100).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }
}
