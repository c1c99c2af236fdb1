//! Numeric utilities: deterministic summation, stable special-function
//! helpers, interpolation tables, and output formatting.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// erfc via libm (about 1 ulp); the statrs rational approximation is only
/// accurate to roughly 1e-10, which shows up in log-density oracles.
fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Chunk length for deterministic summation. Fixed so that parallel and
/// serial evaluations produce bit-identical results.
pub const SUM_CHUNK: usize = 8192;

/// Neumaier compensated sum of a slice, left to right.
pub fn neumaier_sum(xs: &[f64]) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for &x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

/// Deterministic sum: compensated within fixed-size chunks, chunk results
/// combined in order. The result does not depend on thread count.
pub fn det_sum(xs: &[f64]) -> f64 {
    if xs.len() <= SUM_CHUNK {
        return neumaier_sum(xs);
    }
    use rayon::prelude::*;
    let partials: Vec<f64> = xs.par_chunks(SUM_CHUNK).map(neumaier_sum).collect();
    neumaier_sum(&partials)
}

/// Deterministic mean of a slice.
pub fn det_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    det_sum(xs) / xs.len() as f64
}

/// log(sum(exp(x_i))) tolerating -inf entries. Returns -inf for an empty
/// iterator or when every entry is -inf.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut acc = 0.0;
    for &x in xs {
        acc += (x - m).exp();
    }
    m + acc.ln()
}

/// log of the mean of exp(x_i).
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NEG_INFINITY;
    }
    logsumexp(xs) - (xs.len() as f64).ln()
}

/// ln(erfc(x)), stable for large positive x where erfc underflows.
pub fn log_erfc(x: f64) -> f64 {
    if x < 20.0 {
        return erfc(x).ln();
    }
    // Asymptotic expansion: erfc(x) = exp(-x^2) / (x sqrt(pi)) * sum,
    // sum = 1 - 1/(2x^2) + 3/(2x^2)^2 * ... with term ratio -(2n+1)/(2x^2).
    let inv2x2 = 1.0 / (2.0 * x * x);
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    for n in 0..16 {
        term *= -((2 * n + 1) as f64) * inv2x2;
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    -x * x - (x * std::f64::consts::PI.sqrt()).ln() + sum.ln()
}

/// ln(Phi(b) - Phi(a)) for a <= b, stable in both tails.
pub fn log_norm_cdf_diff(a: f64, b: f64) -> f64 {
    debug_assert!(a <= b, "log_norm_cdf_diff needs a <= b");
    if a > 0.0 {
        // Right tail: Phi(b) - Phi(a) = (erfc(a/s2) - erfc(b/s2)) / 2.
        let la = log_erfc(a / std::f64::consts::SQRT_2) - std::f64::consts::LN_2;
        let lb = log_erfc(b / std::f64::consts::SQRT_2) - std::f64::consts::LN_2;
        let d = lb - la;
        if d < -700.0 {
            return la;
        }
        return la + (-d.exp()).ln_1p();
    }
    if b < 0.0 {
        // Mirror into the right tail.
        return log_norm_cdf_diff(-b, -a);
    }
    // Interval straddles zero: direct evaluation has no cancellation.
    let p = 0.5 * (erfc(a / std::f64::consts::SQRT_2) - erfc(b / std::f64::consts::SQRT_2));
    p.ln()
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

/// Standard normal CDF, through the same erfc as the tail helpers.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Chi-squared quantile with `df` degrees of freedom. One degree of freedom
/// is routed through the normal quantile (exact relation), which is far more
/// accurate than the generic gamma inversion.
pub fn chi2_quantile(df: f64, p: f64) -> f64 {
    if df == 1.0 {
        let z = norm_quantile(0.5 * (1.0 + p));
        return z * z;
    }
    ChiSquared::new(df).unwrap().inverse_cdf(p)
}

/// Cubic Hermite interpolation table on a uniform knot grid.
///
/// Slopes are central finite differences, so the interpolant reproduces the
/// knot values exactly and is C1. Queries outside the grid clamp to the end
/// knots.
#[derive(Clone, Debug)]
pub struct UniformCubicTable {
    x0: f64,
    dx: f64,
    values: Vec<f64>,
    /// Slopes in index units (dv/di).
    slopes: Vec<f64>,
}

impl UniformCubicTable {
    pub fn build(x0: f64, dx: f64, values: Vec<f64>) -> Self {
        assert!(values.len() >= 2, "table needs at least two knots");
        assert!(dx > 0.0, "knot spacing must be positive");
        let k = values.len();
        let mut slopes = vec![0.0; k];
        slopes[0] = values[1] - values[0];
        slopes[k - 1] = values[k - 1] - values[k - 2];
        for i in 1..k - 1 {
            slopes[i] = 0.5 * (values[i + 1] - values[i - 1]);
        }
        UniformCubicTable {
            x0,
            dx,
            values,
            slopes,
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let k = self.values.len();
        let t = (x - self.x0) / self.dx;
        if t <= 0.0 {
            return self.values[0];
        }
        let max_t = (k - 1) as f64;
        if t >= max_t {
            return self.values[k - 1];
        }
        let i = (t as usize).min(k - 2);
        let s = t - i as f64;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.values[i] + h10 * self.slopes[i] + h01 * self.values[i + 1]
            + h11 * self.slopes[i + 1]
    }

    pub fn x_min(&self) -> f64 {
        self.x0
    }

    pub fn x_max(&self) -> f64 {
        self.x0 + self.dx * (self.values.len() - 1) as f64
    }
}

/// Monotone (Fritsch-Carlson) cubic interpolation on arbitrary knots.
///
/// Shape preserving: on intervals where the data is monotone the interpolant
/// stays between the endpoint values, so interpolated values never overshoot
/// neighboring knots. Queries outside the grid clamp to the end knots.
#[derive(Clone, Debug)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn build(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        assert_eq!(xs.len(), ys.len());
        assert!(xs.len() >= 2, "need at least two knots");
        assert!(
            xs.windows(2).all(|w| w[1] > w[0]),
            "knots must be strictly increasing"
        );
        let n = xs.len();
        let h: Vec<f64> = (0..n - 1).map(|i| xs[i + 1] - xs[i]).collect();
        let d: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
        let mut m = vec![0.0; n];
        m[0] = Self::edge_slope(h[0], h.get(1).copied().unwrap_or(h[0]), d[0], d.get(1).copied().unwrap_or(d[0]));
        m[n - 1] = Self::edge_slope(
            h[n - 2],
            if n >= 3 { h[n - 3] } else { h[n - 2] },
            d[n - 2],
            if n >= 3 { d[n - 3] } else { d[n - 2] },
        );
        for i in 1..n - 1 {
            if d[i - 1] * d[i] <= 0.0 {
                m[i] = 0.0;
            } else {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
            }
        }
        MonotoneCubic {
            xs,
            ys,
            slopes: m,
        }
    }

    fn edge_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
        let mut m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if m * d0 <= 0.0 {
            m = 0.0;
        } else if d0 * d1 < 0.0 && m.abs() > 3.0 * d0.abs() {
            m = 3.0 * d0;
        }
        m
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = match self
            .xs
            .binary_search_by(|v| v.partial_cmp(&x).unwrap())
        {
            Ok(j) => return self.ys[j],
            Err(j) => j - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let s = (x - self.xs[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.ys[i] + h10 * h * self.slopes[i] + h01 * self.ys[i + 1]
            + h11 * h * self.slopes[i + 1]
    }
}

/// SplitMix64 step, used to derive auxiliary deterministic streams.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Map a u64 to [0, 1).
pub fn unit_from_u64(v: u64) -> f64 {
    (v >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Format a float with 6 significant digits, plain decimal where reasonable.
pub fn fmt_sig6(x: f64) -> String {
    fmt_sig(x, 6)
}

/// Format a float with `digits` significant digits.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    // Round to the requested significant digits first; the exponent is read
    // off the scientific form so exact powers of ten are classified right.
    let sci = format!("{:.*e}", digits.saturating_sub(1), x);
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if exp < -4 || exp > 9 {
        return sci;
    }
    let rounded: f64 = sci.parse().unwrap();
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    let s = format!("{rounded:.decimals$}");
    // Trim trailing zeros after the decimal point, then a dangling dot.
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        t.to_string()
    } else {
        s
    }
}
