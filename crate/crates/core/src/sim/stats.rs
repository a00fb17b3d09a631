//! Interval estimates and the threshold search.

use crate::error::Result;

/// Two-sided 95% Wilson score interval for `successes` out of `n`.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Outcome of [`bisect_threshold`].
#[derive(Debug, Clone, PartialEq)]
pub struct BisectResult {
    /// Smallest evaluated point meeting the target, if any.
    pub threshold_db: Option<f64>,
    /// Every evaluation in order, `(point, value)`.
    pub evaluations: Vec<(f64, f64)>,
}

/// Searches `[lo, hi]` for the point where a decreasing metric drops to
/// `target`, halving the bracket until it is at most `tol` wide.
pub fn bisect_threshold<F>(mut f: F, lo: f64, hi: f64, target: f64, tol: f64) -> Result<BisectResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut evaluations = Vec::new();
    let mut eval = |x: f64, evals: &mut Vec<(f64, f64)>| -> Result<f64> {
        let v = f(x)?;
        evals.push((x, v));
        Ok(v)
    };
    if eval(hi, &mut evaluations)? > target {
        return Ok(BisectResult {
            threshold_db: None,
            evaluations,
        });
    }
    if eval(lo, &mut evaluations)? <= target {
        return Ok(BisectResult {
            threshold_db: Some(lo),
            evaluations,
        });
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if eval(mid, &mut evaluations)? <= target {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(BisectResult {
        threshold_db: Some(b),
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wilson_reference_values() {
        // 5 of 100: textbook interval (0.0215, 0.1118).
        let (lo, hi) = wilson_interval(5, 100);
        assert!((lo - 0.021_543).abs() < 1e-5 && (hi - 0.111_752).abs() < 1e-5, "{lo} {hi}");
        let (lo, hi) = wilson_interval(0, 50);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.071_348).abs() < 1e-5, "{hi}");
        assert_eq!(wilson_interval(0, 0), (0.0, 1.0));
    }

    #[test]
    fn bisection_on_stub() {
        let crossing = 3.37;
        let stub = |x: f64| -> Result<f64> { Ok(1.0 / (1.0 + (4.0 * (x - crossing)).exp()) * 0.1) };
        // stub(x) = 0.05 exactly at the crossing.
        let r = bisect_threshold(stub, -2.0, 20.0, 0.05, 0.25).unwrap();
        let t = r.threshold_db.unwrap();
        assert!(t >= crossing && t - crossing <= 0.25, "{t}");
        let never = bisect_threshold(|_| Ok(0.5), 0.0, 10.0, 0.05, 0.25).unwrap();
        assert_eq!(never.threshold_db, None);
        let always = bisect_threshold(|_| Ok(0.0), 0.0, 10.0, 0.05, 0.25).unwrap();
        assert_eq!(always.threshold_db, Some(0.0));
    }

    proptest! {
        #[test]
        fn wilson_brackets_estimate(n in 1usize..5000, frac in 0.0f64..=1.0) {
            let k = ((n as f64) * frac).round() as usize;
            let (lo, hi) = wilson_interval(k, n);
            let p = k as f64 / n as f64;
            prop_assert!(lo <= p + 1e-12 && p <= hi + 1e-12);
            prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        }
    }
}
