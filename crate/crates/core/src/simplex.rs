//! Probability weight vectors and Euclidean projection onto the unit simplex.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Nonnegative weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

/// Feasibility tolerance on the weight sum.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("weight vector".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Config(format!(
                "weights must sum to 1 within {WEIGHT_SUM_TOL}, got {sum}"
            )));
        }
        Ok(WeightVector(weights))
    }

    /// Equal weight on `m` points.
    pub fn uniform(m: usize) -> Self {
        assert!(m > 0);
        WeightVector(vec![1.0 / m as f64; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Append a new point with weight zero (used when the alternative
    /// support grows during refinement).
    pub fn extended_with_zero(&self, extra: usize) -> Self {
        let mut v = self.0.clone();
        v.extend(std::iter::repeat(0.0).take(extra));
        WeightVector(v)
    }
}

impl std::ops::Index<usize> for WeightVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Euclidean projection of an arbitrary vector onto the unit simplex.
///
/// Sort-and-threshold algorithm: sort coordinates in decreasing order, find
/// the largest prefix whose shifted average keeps all prefix members
/// positive, subtract that shift, and clip the rest to zero. O(M log M).
/// Ties in the sort are broken by the original index so the result is
/// deterministic.
pub fn project_simplex(v: &[f64]) -> WeightVector {
    assert!(!v.is_empty(), "cannot project an empty vector");
    assert!(
        v.iter().all(|x| x.is_finite()),
        "cannot project non-finite coordinates"
    );
    let m = v.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap().then(a.cmp(&b)));

    let mut cumsum = 0.0;
    let mut rho = 0;
    let mut theta = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        cumsum += v[idx];
        let candidate = (cumsum - 1.0) / (rank + 1) as f64;
        if v[idx] - candidate > 0.0 {
            rho = rank + 1;
            theta = candidate;
        }
    }
    debug_assert!(rho >= 1, "projection always keeps at least one coordinate");

    let mut out = vec![0.0; m];
    for &idx in order.iter().take(rho) {
        out[idx] = (v[idx] - theta).max(0.0);
    }
    // Normalize away the last-bit rounding so downstream code can rely on
    // an exact-to-1e-12 sum.
    let sum: f64 = out.iter().sum();
    if sum > 0.0 && (sum - 1.0).abs() > 0.0 {
        for w in out.iter_mut() {
            *w /= sum;
        }
    }
    WeightVector(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn worked_examples() {
        assert_close(
            project_simplex(&[0.5, 0.5, 0.5]).as_slice(),
            &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            1e-15,
        );
        assert_close(project_simplex(&[2.0, 0.0, 0.0]).as_slice(), &[1.0, 0.0, 0.0], 1e-15);
        assert_close(project_simplex(&[1.0, 0.5]).as_slice(), &[0.75, 0.25], 1e-15);
    }

    #[test]
    fn feasible_input_is_fixed_point() {
        let w = [0.2, 0.3, 0.5];
        assert_close(project_simplex(&w).as_slice(), &w, 1e-15);
    }

    /// Dense grid search over the simplex, the independent optimality check.
    fn brute_force_project(v: &[f64], steps: usize) -> Vec<f64> {
        let m = v.len();
        let mut best = vec![0.0; m];
        let mut best_d = f64::INFINITY;
        let mut point = vec![0usize; m - 1];
        loop {
            let partial: usize = point.iter().sum();
            if partial <= steps {
                let mut w: Vec<f64> = point.iter().map(|&k| k as f64 / steps as f64).collect();
                w.push((steps - partial) as f64 / steps as f64);
                let d: f64 = w.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best_d {
                    best_d = d;
                    best = w;
                }
            }
            // Odometer increment over the first m-1 coordinates.
            let mut i = 0;
            loop {
                if i == m - 1 {
                    return best;
                }
                point[i] += 1;
                if point[i] <= steps {
                    break;
                }
                point[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn matches_brute_force_on_coarse_grid() {
        let cases: Vec<Vec<f64>> = vec![
            vec![0.9, -0.3, 0.25],
            vec![-1.0, -2.0, 3.0],
            vec![0.1, 0.2, 0.3, 0.4],
            vec![1.4, 1.2],
        ];
        for v in cases {
            let exact = project_simplex(&v);
            let brute = brute_force_project(&v, 200);
            let d_exact: f64 = exact
                .as_slice()
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let d_brute: f64 = brute.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
            assert!(
                d_exact <= d_brute + 1e-9,
                "projection of {v:?} is farther than grid point: {d_exact} vs {d_brute}"
            );
        }
    }

    proptest! {
        #[test]
        fn projection_is_feasible(v in proptest::collection::vec(-10.0f64..10.0, 1..8)) {
            let w = project_simplex(&v);
            prop_assert!(w.as_slice().iter().all(|&x| x >= 0.0));
            let sum: f64 = w.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() <= WEIGHT_SUM_TOL);
        }

        #[test]
        fn projection_is_idempotent(v in proptest::collection::vec(-10.0f64..10.0, 1..8)) {
            let w = project_simplex(&v);
            let w2 = project_simplex(w.as_slice());
            for (a, b) in w.as_slice().iter().zip(w2.as_slice()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn translation_invariance(v in proptest::collection::vec(-5.0f64..5.0, 2..8), c in -3.0f64..3.0) {
            let w1 = project_simplex(&v);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let w2 = project_simplex(&shifted);
            for (a, b) in w1.as_slice().iter().zip(w2.as_slice()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn no_feasible_point_is_closer(v in proptest::collection::vec(-4.0f64..4.0, 2..5),
                                       u in proptest::collection::vec(0.0f64..1.0, 2..5)) {
            prop_assume!(v.len() == u.len());
            let w = project_simplex(&v);
            // Normalize u onto the simplex to get an arbitrary feasible point.
            let s: f64 = u.iter().sum();
            prop_assume!(s > 1e-9);
            let candidate: Vec<f64> = u.iter().map(|x| x / s).collect();
            let d_w: f64 = w.as_slice().iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
            let d_c: f64 = candidate.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
            prop_assert!(d_w <= d_c + 1e-12);
        }
    }

    #[test]
    fn weight_vector_validation() {
        assert!(WeightVector::new(vec![0.5, 0.5]).is_ok());
        assert!(WeightVector::new(vec![0.5, 0.6]).is_err());
        assert!(WeightVector::new(vec![-0.1, 1.1]).is_err());
        assert!(WeightVector::new(vec![]).is_err());
    }
}
