//! Scalar normal location problem: Y ~ N(theta, 1), null theta = 0.
//!
//! The smallest built-in family. Its optimal tests are known in closed form,
//! so it doubles as the reference problem for loop diagnostics.

use crate::problem::{
    AdHocTest, NullComponent, NullComponentKind, ParameterPoint, TestingProblem,
};
use crate::util::log_mean_exp;

const HALF_LN_2PI: f64 = 0.9189385332046727;

/// Y = base + theta with standard normal base draw.
#[derive(Clone, Debug, Default)]
pub struct GaussianMeanProblem;

impl TestingProblem for GaussianMeanProblem {
    fn name(&self) -> &str {
        "gaussian-mean"
    }

    fn base_dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn theta_dim(&self) -> usize {
        1
    }

    fn reference_point(&self) -> ParameterPoint {
        ParameterPoint::new(vec![0.0])
    }

    fn sample(&self, base: &[f64], theta: &ParameterPoint, out: &mut [f64]) {
        out[0] = base[0] + theta.coords[0];
    }

    fn log_density(&self, theta: &ParameterPoint, y: &[f64]) -> f64 {
        let z = y[0] - theta.coords[0];
        -0.5 * z * z - HALF_LN_2PI
    }

    // log f_theta(y) - log f_0(y) = theta y - theta^2 / 2.
    fn log_ratio(&self, theta: &ParameterPoint, y: &[f64]) -> f64 {
        let t = theta.coords[0];
        t * y[0] - 0.5 * t * t
    }

    fn in_null(&self, theta: &ParameterPoint) -> bool {
        theta.coords[0] == 0.0
    }

    fn in_alt(&self, theta: &ParameterPoint) -> bool {
        theta.coords[0] != 0.0
    }

    fn null_stat(&self, y: &[f64]) -> Option<f64> {
        Some(y[0])
    }

    fn log_null_ratio_at(&self, comp: &NullComponent, s: f64) -> Option<f64> {
        match &comp.kind {
            NullComponentKind::PointMass(p) => {
                let t = p.coords[0];
                Some(t * s - 0.5 * t * t)
            }
            NullComponentKind::BaseDistribution(slice) => {
                if slice.width() <= 0.0 {
                    let t = slice.point_at(slice.lo).coords[0];
                    return Some(t * s - 0.5 * t * t);
                }
                let logs: Vec<f64> = slice
                    .nodes()
                    .iter()
                    .map(|&v| {
                        let t = slice.point_at(v).coords[0];
                        t * s - 0.5 * t * t
                    })
                    .collect();
                Some(log_mean_exp(&logs))
            }
        }
    }
}

/// Rejects when |y - center| exceeds the normal quantile z_{1 - alpha/2}.
#[derive(Clone, Debug)]
pub struct TwoSidedZTest {
    pub center: f64,
    pub critical: f64,
}

impl TwoSidedZTest {
    pub fn level(alpha: f64) -> Self {
        TwoSidedZTest {
            center: 0.0,
            critical: crate::util::norm_quantile(1.0 - alpha / 2.0),
        }
    }
}

impl AdHocTest for TwoSidedZTest {
    fn name(&self) -> &str {
        "two-sided-z"
    }

    fn decide(&self, y: &[f64]) -> f64 {
        if (y[0] - self.center).abs() > self.critical {
            1.0
        } else {
            0.0
        }
    }
}

/// Exact two-sided power of `TwoSidedZTest::level(alpha)` at mean `theta`.
pub fn two_sided_power(theta: f64, alpha: f64) -> f64 {
    let z = crate::util::norm_quantile(1.0 - alpha / 2.0);
    crate::util::norm_cdf(-z - theta) + crate::util::norm_cdf(-z + theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{validate_problem, AlternativeSupport};

    #[test]
    fn ratio_matches_density_difference() {
        let p = GaussianMeanProblem;
        for t in [-2.0, -0.3, 0.0, 1.7] {
            for y in [-3.0, 0.0, 0.4, 2.9] {
                let theta = ParameterPoint::new(vec![t]);
                let direct =
                    p.log_density(&theta, &[y]) - p.log_density(&p.reference_point(), &[y]);
                let closed = p.log_ratio(&theta, &[y]);
                assert!(
                    (direct - closed).abs() < 1e-13,
                    "ratio mismatch at theta={t}, y={y}"
                );
            }
        }
    }

    #[test]
    fn two_sided_power_examples() {
        // Level at the null and the textbook value at theta = 1, alpha = .05.
        assert!((two_sided_power(0.0, 0.05) - 0.05).abs() < 1e-12);
        assert!(
            (two_sided_power(1.0, 0.05) - 0.17007504575308752).abs() < 1e-12,
            "got {}",
            two_sided_power(1.0, 0.05)
        );
    }

    #[test]
    fn declaration_validates_cleanly() {
        let p = GaussianMeanProblem;
        let null = vec![NullComponent::point(vec![0.0])];
        let alt = AlternativeSupport::new(vec![
            ParameterPoint::new(vec![-1.0]),
            ParameterPoint::new(vec![1.0]),
        ])
        .unwrap();
        let report = validate_problem(&p, &null, &alt, None);
        assert!(report.is_clean(), "issues: {:?}", report.issues);
    }

    #[test]
    fn alt_point_in_null_is_flagged() {
        let p = GaussianMeanProblem;
        let null = vec![NullComponent::point(vec![0.0])];
        let alt = AlternativeSupport::new(vec![ParameterPoint::new(vec![0.0])]).unwrap();
        let report = validate_problem(&p, &null, &alt, None);
        assert!(report.has_errors(), "theta = 0 in the alternative must be rejected");
    }
}
