//! Bivariate normal problem with a boundary nuisance parameter.
//!
//! Y = (Y1, Y2) ~ N((beta, delta), [[1, rho], [rho, 1]]) with delta >= 0.
//! The null is beta = 0 with delta free, so null components are points or
//! uniform slices in delta. Writing w = y2 - rho y1 and s^2 = 1 - rho^2,
//! the density factors as phi(y1 - beta) * phi_s(w - (delta - rho beta)),
//! which makes w a scalar sufficient statistic for the whole null family
//! and gives uniform-in-delta mixtures a closed form in normal CDFs.

use crate::problem::{
    AdHocTest, NullComponent, NullComponentKind, ParameterPoint, TestingProblem, UniformSlice,
};
use crate::util::{log_norm_cdf_diff, norm_quantile};

const HALF_LN_2PI: f64 = 0.9189385332046727;

/// Index of beta in a parameter point.
pub const BETA: usize = 0;
/// Index of delta in a parameter point.
pub const DELTA: usize = 1;

#[derive(Clone, Debug)]
pub struct BoundaryProblem {
    rho: f64,
    s: f64,
}

impl BoundaryProblem {
    pub fn new(rho: f64) -> Self {
        assert!(rho.abs() < 1.0, "correlation must be inside (-1, 1)");
        BoundaryProblem {
            rho,
            s: (1.0 - rho * rho).sqrt(),
        }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Residual scale s = sqrt(1 - rho^2).
    pub fn s(&self) -> f64 {
        self.s
    }

    /// w = y2 - rho y1.
    #[inline]
    pub fn resid(&self, y: &[f64]) -> f64 {
        y[1] - self.rho * y[0]
    }

    /// Uniform slice over delta in [lo, hi] at beta = 0.
    pub fn delta_slice(lo: f64, hi: f64) -> UniformSlice {
        UniformSlice::new(ParameterPoint::new(vec![0.0, 0.0]), DELTA, lo, hi)
    }
}

impl TestingProblem for BoundaryProblem {
    fn name(&self) -> &str {
        "boundary-iici"
    }

    fn base_dim(&self) -> usize {
        2
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn theta_dim(&self) -> usize {
        2
    }

    fn reference_point(&self) -> ParameterPoint {
        ParameterPoint::new(vec![0.0, 0.0])
    }

    fn sample(&self, base: &[f64], theta: &ParameterPoint, out: &mut [f64]) {
        let (beta, delta) = (theta.coords[BETA], theta.coords[DELTA]);
        out[0] = beta + base[0];
        out[1] = delta + self.rho * base[0] + self.s * base[1];
    }

    fn log_density(&self, theta: &ParameterPoint, y: &[f64]) -> f64 {
        let (beta, delta) = (theta.coords[BETA], theta.coords[DELTA]);
        let z1 = y[0] - beta;
        let zw = self.resid(y) - (delta - self.rho * beta);
        -0.5 * z1 * z1 - HALF_LN_2PI - 0.5 * zw * zw / (self.s * self.s) - HALF_LN_2PI
            - self.s.ln()
    }

    // Linear in (y1, w): beta y1 - beta^2/2 + (mu w - mu^2/2)/s^2 with
    // mu = delta - rho beta.
    fn log_ratio(&self, theta: &ParameterPoint, y: &[f64]) -> f64 {
        let (beta, delta) = (theta.coords[BETA], theta.coords[DELTA]);
        let mu = delta - self.rho * beta;
        let w = self.resid(y);
        beta * y[0] - 0.5 * beta * beta + (mu * w - 0.5 * mu * mu) / (self.s * self.s)
    }

    fn in_null(&self, theta: &ParameterPoint) -> bool {
        theta.coords[BETA] == 0.0 && theta.coords[DELTA] >= 0.0
    }

    fn in_alt(&self, theta: &ParameterPoint) -> bool {
        theta.coords[BETA] != 0.0 && theta.coords[DELTA] >= 0.0
    }

    fn log_slice_density(&self, slice: &UniformSlice, y: &[f64]) -> Option<f64> {
        if slice.vary_index != DELTA || slice.width() <= 0.0 {
            return None;
        }
        let beta = slice.template.coords[BETA];
        let z1 = y[0] - beta;
        let w = self.resid(y);
        // Integrating phi_s(w - (delta - rho beta)) d delta / width turns
        // into a difference of normal CDFs.
        let a = (slice.lo - self.rho * beta - w) / self.s;
        let b = (slice.hi - self.rho * beta - w) / self.s;
        Some(
            -0.5 * z1 * z1 - HALF_LN_2PI + log_norm_cdf_diff(a, b) - slice.width().ln(),
        )
    }

    fn null_stat(&self, y: &[f64]) -> Option<f64> {
        Some(self.resid(y))
    }

    fn log_null_ratio_at(&self, comp: &NullComponent, w: f64) -> Option<f64> {
        let s2 = self.s * self.s;
        match &comp.kind {
            NullComponentKind::PointMass(p) => {
                debug_assert_eq!(p.coords[BETA], 0.0);
                let d = p.coords[DELTA];
                Some((d * w - 0.5 * d * d) / s2)
            }
            NullComponentKind::BaseDistribution(slice) => {
                debug_assert_eq!(slice.template.coords[BETA], 0.0);
                debug_assert_eq!(slice.vary_index, DELTA);
                if slice.width() <= 0.0 {
                    let d = slice.point_at(slice.lo).coords[DELTA];
                    return Some((d * w - 0.5 * d * d) / s2);
                }
                let a = (slice.lo - w) / self.s;
                let b = (slice.hi - w) / self.s;
                // Slice mixture over the reference phi_s(w).
                Some(
                    log_norm_cdf_diff(a, b) - slice.width().ln() + 0.5 * w * w / s2
                        + self.s.ln()
                        + HALF_LN_2PI,
                )
            }
        }
    }
}

/// Confidence-interval imposition test: invert an interval for beta that
/// switches between the direct estimate y1 and the boundary-informed
/// estimate y1 - rho y2 according to the size of y2, and reject when 0
/// falls outside.
#[derive(Clone, Debug)]
pub struct IntervalImpositionTest {
    rho: f64,
    s: f64,
    z: f64,
    /// Switch point for the informed endpoints.
    c: f64,
}

impl IntervalImpositionTest {
    pub fn new(rho: f64, alpha: f64) -> Self {
        let s = (1.0 - rho * rho).sqrt();
        let z = norm_quantile(1.0 - alpha / 2.0);
        // c = (1 - s)/rho * z, with the rho -> 0 limit 0.
        let c = if rho.abs() < 1e-12 {
            0.0
        } else {
            (1.0 - s) / rho * z
        };
        IntervalImpositionTest { rho, s, z, c }
    }

    pub fn switch_value(&self) -> f64 {
        self.c
    }

    /// Interval endpoints for beta.
    pub fn interval(&self, y: &[f64]) -> (f64, f64) {
        let lower = if y[1] > self.c {
            y[0] - self.z
        } else {
            y[0] - self.rho * y[1] - self.s * self.z
        };
        let upper = if y[1] > -self.c {
            y[0] + self.z
        } else {
            y[0] - self.rho * y[1] + self.s * self.z
        };
        (lower, upper)
    }
}

impl AdHocTest for IntervalImpositionTest {
    fn name(&self) -> &str {
        "interval-imposition"
    }

    fn decide(&self, y: &[f64]) -> f64 {
        let (lower, upper) = self.interval(y);
        if 0.0 < lower || 0.0 > upper {
            1.0
        } else {
            0.0
        }
    }
}
