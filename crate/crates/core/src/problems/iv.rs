//! Linear instrumental-variables problem with weak instruments.
//!
//! The observation is the 2x2 cross-product matrix Q = [S'S, S'T; T'S, T'T]
//! of two k-vectors that are jointly normal with identity covariance and
//! means c_beta * mu and d_beta * mu, mu = (sqrt(lambda), 0, ..., 0)'. The
//! parameter is theta = (beta, lambda >= 0); the null pins beta at beta0
//! with lambda free, so Q_T is a scalar sufficient statistic for the null
//! family. Q follows a noncentral Wishart law whose density ratio against
//! the central reference (beta0, 0) reduces to an exponential tilt times a
//! normalized Bessel factor in lambda * xi_beta(Q), with
//! xi_beta(Q) = c^2 Q_S + 2 c d Q_ST + d^2 Q_T.
//!
//! Two designs are supported: fixed reduced-form covariance Omega, and
//! fixed structural covariance Sigma (where Omega varies with beta).

use crate::bank::NormalStream;
use crate::bessel::log_iv_scaled;
use crate::error::{Error, Result};
use crate::problem::{
    AdHocTest, NullComponent, NullComponentKind, ParameterPoint, TestingProblem,
};
use crate::util::{chi2_quantile, log_mean_exp, splitmix64, MonotoneCubic, UniformCubicTable};
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

/// Observation layout.
pub const QS: usize = 0;
pub const QST: usize = 1;
pub const QT: usize = 2;

/// Parameter layout.
pub const BETA: usize = 0;
pub const LAMBDA: usize = 1;

/// Which error covariance the design holds fixed across beta.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum IvDesign {
    /// Reduced-form covariance fixed at [[1, omega12], [omega12, 1]].
    FixedOmega { omega12: f64 },
    /// Structural covariance fixed at [[1, sigma12], [sigma12, 1]]; the
    /// implied reduced-form covariance then depends on beta.
    FixedSigma { sigma12: f64 },
}

impl IvDesign {
    /// Reduced-form covariance (o11, o12, o22) at the evaluated beta.
    fn omega(&self, beta: f64) -> (f64, f64, f64) {
        match *self {
            IvDesign::FixedOmega { omega12 } => (1.0, omega12, 1.0),
            IvDesign::FixedSigma { sigma12 } => (
                1.0 + 2.0 * beta * sigma12 + beta * beta,
                sigma12 + beta,
                1.0,
            ),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            IvDesign::FixedOmega { .. } => "fixed-omega",
            IvDesign::FixedSigma { .. } => "fixed-sigma",
        }
    }
}

/// Upper end of the cached Bessel-interpolation range; larger arguments use
/// the asymptotic expansion directly.
const BESSEL_TABLE_MAX: f64 = 64.0;
const BESSEL_TABLE_KNOTS: usize = 8193;

#[derive(Clone, Debug)]
pub struct LinearIvProblem {
    k: usize,
    design: IvDesign,
    beta0: f64,
    /// Bessel order (k - 2) / 2.
    nu: f64,
    /// d coefficient at beta0 (c vanishes there).
    d0: f64,
    /// log normalizing constant of the central Wishart reference.
    log_c_ref: f64,
    /// Interpolated log I~_nu for hot loops.
    bessel_fast: UniformCubicTable,
}

impl LinearIvProblem {
    pub fn new(k: usize, design: IvDesign, beta0: f64) -> Self {
        assert!(k >= 3, "need at least 3 instruments for this density form");
        let nu = (k as f64 - 2.0) / 2.0;
        // Central bivariate Wishart with k degrees of freedom and identity
        // scale: -k ln 2 - ln Gamma_2(k/2),
        // Gamma_2(a) = sqrt(pi) Gamma(a) Gamma(a - 1/2).
        let kf = k as f64;
        let log_c_ref = -kf * std::f64::consts::LN_2
            - 0.5 * std::f64::consts::PI.ln()
            - statrs::function::gamma::ln_gamma(kf / 2.0)
            - statrs::function::gamma::ln_gamma((kf - 1.0) / 2.0);
        let dx = BESSEL_TABLE_MAX / (BESSEL_TABLE_KNOTS - 1) as f64;
        let values: Vec<f64> = (0..BESSEL_TABLE_KNOTS)
            .map(|i| log_iv_scaled(nu, i as f64 * dx))
            .collect();
        let bessel_fast = UniformCubicTable::build(0.0, dx, values);
        let mut p = LinearIvProblem {
            k,
            design,
            beta0,
            nu,
            d0: 0.0,
            log_c_ref,
            bessel_fast,
        };
        p.d0 = p.cd(beta0).1;
        p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn design(&self) -> IvDesign {
        self.design
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    /// d coefficient at the null beta.
    pub fn d0(&self) -> f64 {
        self.d0
    }

    /// Mean coefficients (c_beta, d_beta): S has mean c_beta mu and T mean
    /// d_beta mu. c is the normalized departure from beta0; d is the
    /// regression coefficient of the null direction.
    pub fn cd(&self, beta: f64) -> (f64, f64) {
        let (o11, o12, o22) = self.design.omega(beta);
        let det = o11 * o22 - o12 * o12;
        let b0 = self.beta0;
        let b0_om_b0 = o11 - 2.0 * b0 * o12 + b0 * b0 * o22;
        let c = (beta - b0) / b0_om_b0.sqrt();
        let a_inv_a0 = (beta * b0 * o22 - beta * o12 - b0 * o12 + o11) / det;
        let a0_inv_a0 = b0_om_b0 / det;
        let d = a_inv_a0 / a0_inv_a0.sqrt();
        (c, d)
    }

    /// xi_beta(q) = (c, d) q (c, d)', nonnegative for PSD q.
    #[inline]
    fn xi(c: f64, d: f64, q: &[f64]) -> f64 {
        (c * c * q[QS] + 2.0 * c * d * q[QST] + d * d * q[QT]).max(0.0)
    }

    #[inline]
    fn log_ratio_impl(&self, theta: &ParameterPoint, q: &[f64], fast: bool) -> f64 {
        let (beta, lambda) = (theta.coords[BETA], theta.coords[LAMBDA]);
        let (c, d) = self.cd(beta);
        let x = (lambda * Self::xi(c, d, q)).max(0.0).sqrt();
        let bessel = if fast && x <= BESSEL_TABLE_MAX {
            self.bessel_fast.eval(x)
        } else {
            log_iv_scaled(self.nu, x)
        };
        -0.5 * lambda * (c * c + d * d) + bessel
    }
}

impl TestingProblem for LinearIvProblem {
    fn name(&self) -> &str {
        "linear-iv"
    }

    fn base_dim(&self) -> usize {
        2 * self.k
    }

    fn obs_dim(&self) -> usize {
        3
    }

    fn theta_dim(&self) -> usize {
        2
    }

    fn reference_point(&self) -> ParameterPoint {
        ParameterPoint::new(vec![self.beta0, 0.0])
    }

    fn sample(&self, base: &[f64], theta: &ParameterPoint, out: &mut [f64]) {
        let (beta, lambda) = (theta.coords[BETA], theta.coords[LAMBDA]);
        debug_assert!(lambda >= 0.0, "lambda must be nonnegative");
        let (c, d) = self.cd(beta);
        let root = lambda.sqrt();
        let k = self.k;
        let s0 = base[0] + c * root;
        let t0 = base[k] + d * root;
        let mut qs = s0 * s0;
        let mut qst = s0 * t0;
        let mut qt = t0 * t0;
        for i in 1..k {
            let si = base[i];
            let ti = base[k + i];
            qs += si * si;
            qst += si * ti;
            qt += ti * ti;
        }
        out[QS] = qs;
        out[QST] = qst;
        out[QT] = qt;
    }

    fn log_density(&self, theta: &ParameterPoint, q: &[f64]) -> f64 {
        let det = (q[QS] * q[QT] - q[QST] * q[QST]).max(f64::MIN_POSITIVE);
        let log_ref = self.log_c_ref + 0.5 * (self.k as f64 - 3.0) * det.ln()
            - 0.5 * (q[QS] + q[QT]);
        log_ref + self.log_ratio_impl(theta, q, false)
    }

    fn log_ratio(&self, theta: &ParameterPoint, q: &[f64]) -> f64 {
        self.log_ratio_impl(theta, q, false)
    }

    fn log_ratio_batch_fast(&self, theta: &ParameterPoint, ys: &[f64], out: &mut [f64]) {
        let (beta, lambda) = (theta.coords[BETA], theta.coords[LAMBDA]);
        let (c, d) = self.cd(beta);
        let tilt = -0.5 * lambda * (c * c + d * d);
        for (i, o) in out.iter_mut().enumerate() {
            let q = &ys[i * 3..(i + 1) * 3];
            let x = (lambda * Self::xi(c, d, q)).sqrt();
            let bessel = if x <= BESSEL_TABLE_MAX {
                self.bessel_fast.eval(x)
            } else {
                log_iv_scaled(self.nu, x)
            };
            *o = tilt + bessel;
        }
    }

    fn in_null(&self, theta: &ParameterPoint) -> bool {
        theta.coords[BETA] == self.beta0 && theta.coords[LAMBDA] >= 0.0
    }

    fn in_alt(&self, theta: &ParameterPoint) -> bool {
        theta.coords[BETA] != self.beta0 && theta.coords[LAMBDA] >= 0.0
    }

    fn null_stat(&self, q: &[f64]) -> Option<f64> {
        Some(q[QT])
    }

    fn log_null_ratio_at(&self, comp: &NullComponent, qt: f64) -> Option<f64> {
        let d0sq = self.d0 * self.d0;
        let at_lambda = |lambda: f64| {
            -0.5 * lambda * d0sq + log_iv_scaled(self.nu, (lambda * d0sq * qt.max(0.0)).sqrt())
        };
        match &comp.kind {
            NullComponentKind::PointMass(p) => Some(at_lambda(p.coords[LAMBDA])),
            NullComponentKind::BaseDistribution(slice) => {
                debug_assert_eq!(slice.vary_index, LAMBDA);
                if slice.width() <= 0.0 {
                    return Some(at_lambda(slice.lo));
                }
                let logs: Vec<f64> = slice.nodes().iter().map(|&v| at_lambda(v)).collect();
                Some(log_mean_exp(&logs))
            }
        }
    }
}

/// LR = (Q_S - Q_T + sqrt((Q_S - Q_T)^2 + 4 Q_ST^2)) / 2.
pub fn clr_statistic(q: &[f64]) -> f64 {
    let d = q[QS] - q[QT];
    0.5 * (d + (d * d + 4.0 * q[QST] * q[QST]).sqrt())
}

/// Conditional critical values for the likelihood-ratio statistic given
/// Q_T, simulated under the null at a grid of Q_T nodes and interpolated
/// monotonically between them. Queries outside the grid clamp to the edge
/// and are counted.
#[derive(Debug)]
pub struct CvTable {
    k: usize,
    alpha: f64,
    n_draws: usize,
    grid: Vec<f64>,
    cvs: Vec<f64>,
    interp: MonotoneCubic,
    clamped: AtomicU64,
}

const CV_MAGIC: &[u8; 8] = b"PWECVT1\0";
const CV_VERSION: u32 = 1;

impl CvTable {
    /// Default conditioning grid: 400 log-spaced nodes on [1e-3, 600].
    pub fn default_grid() -> Vec<f64> {
        let (lo, hi, n) = (1e-3f64, 600.0f64, 400);
        let (la, lb) = (lo.ln(), hi.ln());
        (0..n)
            .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
            .collect()
    }

    /// Simulate the conditional null law at every grid node: S ~ N(0, I_k),
    /// T pinned at (sqrt(q_T), 0, ..., 0)', so Q_ST = sqrt(q_T) S_1. The
    /// critical value is order statistic ceil((1 - alpha) n) of the
    /// simulated LR values.
    pub fn build(k: usize, alpha: f64, n_draws: usize, grid: Vec<f64>) -> Result<Self> {
        Self::build_seeded(k, alpha, n_draws, grid, None)
    }

    /// Same as `build` with an explicit stream seed replacing the derived
    /// default, for callers that manage their own seed budget.
    pub fn build_seeded(
        k: usize,
        alpha: f64,
        n_draws: usize,
        grid: Vec<f64>,
        seed: Option<u64>,
    ) -> Result<Self> {
        if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) || grid[0] <= 0.0 {
            return Err(Error::Config(
                "cv grid must be positive and strictly increasing".into(),
            ));
        }
        if !(0.0 < alpha && alpha < 1.0) || n_draws < 1000 {
            return Err(Error::Config(
                "cv table needs alpha in (0,1) and at least 1000 draws".into(),
            ));
        }
        use rayon::prelude::*;
        let stream_base = seed.unwrap_or_else(|| cv_stream_base(k, alpha, n_draws));
        let cvs: Vec<f64> = grid
            .par_iter()
            .enumerate()
            .map(|(i, &qt)| {
                let mut stream = NormalStream::new(splitmix64(stream_base ^ i as u64));
                let root = qt.sqrt();
                let mut lrs = Vec::with_capacity(n_draws);
                let mut s = vec![0.0f64; k];
                for _ in 0..n_draws {
                    stream.fill(&mut s);
                    let qs: f64 = s.iter().map(|v| v * v).sum();
                    let qst = root * s[0];
                    lrs.push(clr_statistic(&[qs, qst, qt]));
                }
                let idx = (((1.0 - alpha) * n_draws as f64 - 1e-9).ceil() as usize)
                    .clamp(1, n_draws)
                    - 1;
                *lrs.select_nth_unstable_by(idx, |a, b| a.partial_cmp(b).unwrap())
                    .1
            })
            .collect();
        let interp = MonotoneCubic::build(grid.clone(), cvs.clone());
        Ok(CvTable {
            k,
            alpha,
            n_draws,
            grid,
            cvs,
            interp,
            clamped: AtomicU64::new(0),
        })
    }

    /// Critical value at q_T; outside the grid the edge value is used and
    /// the clamp counter incremented.
    pub fn cv(&self, qt: f64) -> f64 {
        if qt < self.grid[0] || qt > self.grid[self.grid.len() - 1] {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }
        self.interp.eval(qt)
    }

    /// Number of queries that fell outside the grid since construction.
    pub fn clamp_count(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.cvs
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(CV_MAGIC)?;
        w.write_all(&CV_VERSION.to_le_bytes())?;
        w.write_all(&(self.k as u32).to_le_bytes())?;
        w.write_all(&self.alpha.to_le_bytes())?;
        w.write_all(&(self.n_draws as u64).to_le_bytes())?;
        w.write_all(&(self.grid.len() as u64).to_le_bytes())?;
        for v in self.grid.iter().chain(&self.cvs) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);
        let mut m = [0u8; 8];
        r.read_exact(&mut m)?;
        if &m != CV_MAGIC {
            return Err(Error::Config(format!(
                "{} is not a critical-value table",
                path.display()
            )));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != CV_VERSION {
            return Err(Error::Config("unsupported cv table version".into()));
        }
        r.read_exact(&mut b4)?;
        let k = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let alpha = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let n_draws = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        let mut read_vec = |n: usize| -> Result<Vec<f64>> {
            let mut out = vec![0.0f64; n];
            for v in &mut out {
                r.read_exact(&mut b8)?;
                *v = f64::from_le_bytes(b8);
                if !v.is_finite() {
                    return Err(Error::Config("cv table contains non-finite values".into()));
                }
            }
            Ok(out)
        };
        let grid = read_vec(len)?;
        let cvs = read_vec(len)?;
        let interp = MonotoneCubic::build(grid.clone(), cvs.clone());
        Ok(CvTable {
            k,
            alpha,
            n_draws,
            grid,
            cvs,
            interp,
            clamped: AtomicU64::new(0),
        })
    }

    /// Cache file name keyed by every build input.
    pub fn cache_path(dir: &Path, k: usize, alpha: f64, n_draws: usize, grid: &[f64]) -> PathBuf {
        Self::cache_path_seeded(dir, k, alpha, n_draws, grid, None)
    }

    /// Cache file name that also distinguishes a custom stream seed.
    pub fn cache_path_seeded(
        dir: &Path,
        k: usize,
        alpha: f64,
        n_draws: usize,
        grid: &[f64],
        seed: Option<u64>,
    ) -> PathBuf {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for g in grid {
            eat(g.to_bits());
        }
        if let Some(sd) = seed {
            eat(sd);
        }
        dir.join(format!(
            "clr-cv-k{k}-a{:016x}-n{n_draws}-g{h:016x}.bin",
            alpha.to_bits()
        ))
    }

    /// Load the cached table for these inputs, or build and cache it.
    pub fn cached(dir: &Path, k: usize, alpha: f64, n_draws: usize, grid: Vec<f64>) -> Result<Self> {
        Self::cached_seeded(dir, k, alpha, n_draws, grid, None)
    }

    /// `cached` with an explicit stream seed replacing the derived default.
    pub fn cached_seeded(
        dir: &Path,
        k: usize,
        alpha: f64,
        n_draws: usize,
        grid: Vec<f64>,
        seed: Option<u64>,
    ) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = Self::cache_path_seeded(dir, k, alpha, n_draws, &grid, seed);
        if path.exists() {
            if let Ok(t) = Self::load(&path) {
                if t.k == k && t.alpha == alpha && t.n_draws == n_draws && t.grid == grid {
                    return Ok(t);
                }
            }
        }
        let t = Self::build_seeded(k, alpha, n_draws, grid, seed)?;
        t.save(&path)?;
        Ok(t)
    }
}

fn cv_stream_base(k: usize, alpha: f64, n_draws: usize) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for v in [k as u64, alpha.to_bits(), n_draws as u64] {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// Conditional likelihood-ratio test: rejects when the LR statistic exceeds
/// the critical value at the observed Q_T.
pub struct ClrTest {
    table: std::sync::Arc<CvTable>,
}

impl ClrTest {
    pub fn new(table: std::sync::Arc<CvTable>) -> Self {
        ClrTest { table }
    }

    pub fn table(&self) -> &CvTable {
        &self.table
    }
}

impl AdHocTest for ClrTest {
    fn name(&self) -> &str {
        "clr"
    }

    fn decide(&self, q: &[f64]) -> f64 {
        if clr_statistic(q) > self.table.cv(q[QT]) {
            1.0
        } else {
            0.0
        }
    }
}

/// Score test: rejects when Q_ST^2 / Q_T exceeds the chi-squared(1)
/// quantile.
#[derive(Clone, Debug)]
pub struct LmTest {
    crit: f64,
}

impl LmTest {
    pub fn level(alpha: f64) -> Self {
        LmTest {
            crit: chi2_quantile(1.0, 1.0 - alpha),
        }
    }

    pub fn critical(&self) -> f64 {
        self.crit
    }
}

impl AdHocTest for LmTest {
    fn name(&self) -> &str {
        "lm"
    }

    fn decide(&self, q: &[f64]) -> f64 {
        // Q_T = 0 has probability zero; treat it as non-rejection.
        if q[QT] <= 0.0 {
            return 0.0;
        }
        if q[QST] * q[QST] / q[QT] > self.crit {
            1.0
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::DrawBank;
    use crate::mc::{observations_for_target, EvalTarget};
    use crate::problem::{validate_problem, AlternativeSupport};
    use crate::util::det_mean;

    fn fixed_omega() -> LinearIvProblem {
        LinearIvProblem::new(5, IvDesign::FixedOmega { omega12: 0.5 }, 0.0)
    }

    fn fixed_sigma() -> LinearIvProblem {
        LinearIvProblem::new(10, IvDesign::FixedSigma { sigma12: 0.5 }, 0.0)
    }

    #[test]
    fn mean_coefficients_match_closed_forms() {
        let p = fixed_omega();
        assert!((p.d0() - 1.1547005383792515).abs() < 1e-14, "d0 = {}", p.d0());
        for beta in [-2.0, 0.3, 1.0] {
            let (c, d) = p.cd(beta);
            assert!((c - beta).abs() < 1e-14, "fixed-omega c should equal beta");
            let want_d = (1.0 - 0.5 * beta) / 0.75f64.sqrt();
            assert!((d - want_d).abs() < 1e-13, "fixed-omega d at beta={beta}");
        }

        let p = fixed_sigma();
        for beta in [-1.5, 0.0, 1.0, 4.0] {
            let (c, d) = p.cd(beta);
            let o11 = 1.0 + beta + beta * beta; // 2 beta sigma12 with sigma12 = 1/2
            assert!((c - beta / o11.sqrt()).abs() < 1e-13, "fixed-sigma c at beta={beta}");
            let want_d = (1.0 + 0.5 * beta) / (0.75 * o11).sqrt();
            assert!((d - want_d).abs() < 1e-13, "fixed-sigma d at beta={beta}");
        }
        // Sanity for the worked case beta = 1: c = 1/sqrt(3), d = 1.
        let (c, d) = fixed_sigma().cd(1.0);
        assert!((c - 1.0 / 3.0f64.sqrt()).abs() < 1e-14);
        assert!((d - 1.0).abs() < 1e-14);
    }

    #[test]
    fn ratio_is_zero_at_reference_and_consistent() {
        for p in [fixed_omega(), fixed_sigma()] {
            let q = [7.0, 1.2, 9.0];
            assert_eq!(p.log_ratio(&p.reference_point(), &q), 0.0);
            let theta = ParameterPoint::new(vec![0.7, 12.0]);
            let other = ParameterPoint::new(vec![-0.4, 3.0]);
            let via_ratio = p.log_ratio(&theta, &q) - p.log_ratio(&other, &q);
            let direct = p.log_density(&theta, &q) - p.log_density(&other, &q);
            assert!(
                (via_ratio - direct).abs() < 1e-12,
                "{}: ratio inconsistency",
                p.design.label()
            );
        }
    }

    #[test]
    fn declaration_validates_cleanly() {
        let p = fixed_omega();
        let null = vec![
            NullComponent::point(vec![0.0, 1.0]),
            NullComponent::point(vec![0.0, 40.0]),
        ];
        let alt = AlternativeSupport::new(vec![
            ParameterPoint::new(vec![2.0, 1.0]),
            ParameterPoint::new(vec![-0.5, 16.0]),
        ])
        .unwrap();
        let report = validate_problem(&p, &null, &alt, None);
        assert!(report.is_clean(), "issues: {:?}", report.issues);
    }

    #[test]
    fn cross_product_moments_match_model() {
        // E[Q_S] = k + c^2 lambda, E[Q_T] = k + d^2 lambda,
        // E[Q_ST] = c d lambda.
        let p = fixed_omega();
        let bank = DrawBank::generate(31, 60_000, 10, true, true).unwrap();
        let cases = [
            (0.0, 0.0),  // central: E[Q_S] = E[Q_T] = k
            (0.5, 10.0),
            (-1.0, 4.0),
        ];
        for (beta, lambda) in cases {
            let theta = ParameterPoint::new(vec![beta, lambda]);
            let obs = observations_for_target(&p, EvalTarget::Point(&theta), &bank);
            let n = bank.n() as f64;
            let (mut qs, mut qst, mut qt) = (0.0, 0.0, 0.0);
            for row in obs.chunks(3) {
                qs += row[QS];
                qst += row[QST];
                qt += row[QT];
            }
            let (c, d) = p.cd(beta);
            let tol = 4.0 * (2.0 * (p.k() as f64 + 2.0 * lambda.max(1.0)) / n).sqrt() + 0.05;
            assert!(
                (qs / n - (5.0 + c * c * lambda)).abs() < tol,
                "E[Q_S] off at ({beta}, {lambda}): {}",
                qs / n
            );
            assert!(
                (qt / n - (5.0 + d * d * lambda)).abs() < tol,
                "E[Q_T] off at ({beta}, {lambda}): {}",
                qt / n
            );
            assert!(
                (qst / n - c * d * lambda).abs() < tol,
                "E[Q_ST] off at ({beta}, {lambda}): {}",
                qst / n
            );
        }
    }

    #[test]
    fn importance_sampling_normalization_near_reference() {
        // Short-leg normalization smoke check; the acceptance suite runs the
        // full telescoped oracle over the whole alternative grid.
        let p = fixed_omega();
        let bank = DrawBank::generate(37, 80_000, 10, true, true).unwrap();
        let legs = [
            (ParameterPoint::new(vec![0.0, 0.0]), ParameterPoint::new(vec![0.0, 1.0])),
            (ParameterPoint::new(vec![0.0, 1.0]), ParameterPoint::new(vec![0.5, 1.0])),
            (ParameterPoint::new(vec![0.5, 1.0]), ParameterPoint::new(vec![1.0, 1.0])),
        ];
        for (from, to) in legs {
            let obs = observations_for_target(&p, EvalTarget::Point(&from), &bank);
            let weights: Vec<f64> = obs
                .chunks(3)
                .map(|q| (p.log_ratio(&to, q) - p.log_ratio(&from, q)).exp())
                .collect();
            let mean = det_mean(&weights);
            assert!(
                (mean - 1.0).abs() < 0.02,
                "normalization from {:?} to {:?}: {mean}",
                from.coords,
                to.coords
            );
        }
    }

    #[test]
    fn fast_bessel_path_matches_exact() {
        let p = fixed_sigma();
        let theta = ParameterPoint::new(vec![0.8, 50.0]);
        // Synthetic PSD observations across the table range and beyond.
        let mut worst = 0.0f64;
        for i in 0..2000 {
            let qt = 0.01 + i as f64 * 0.3;
            let qs = 3.0 + (i % 17) as f64;
            let qst = 0.9 * (qs * qt).sqrt();
            let q = [qs, qst, qt];
            let mut fast = [0.0];
            p.log_ratio_batch_fast(&theta, &q, &mut fast);
            let exact = p.log_ratio(&theta, &q);
            worst = worst.max((fast[0] - exact).abs());
        }
        assert!(worst < 1e-8, "fast Bessel path drifted from exact: {worst:.3e}");
    }

    #[test]
    fn cross_products_invariant_under_joint_rotation() {
        // Q depends on (S, T) only through inner products, so rotating both
        // vectors by the same orthogonal matrix leaves Q unchanged.
        let p = fixed_omega();
        let theta = ParameterPoint::new(vec![0.7, 9.0]);
        let base: Vec<f64> = (0..10).map(|i| ((i * i + 1) as f64).sin()).collect();
        let mut q = [0.0; 3];
        p.sample(&base, &theta, &mut q);

        // The mean shift lands on S and T before any rotation; replicate it,
        // rotate the shifted vectors with Givens rotations, and re-form Q.
        let (c, d) = p.cd(0.7);
        let mut s: Vec<f64> = base[..5].to_vec();
        let mut t: Vec<f64> = base[5..].to_vec();
        s[0] += c * 3.0;
        t[0] += d * 3.0;
        for (i, j, angle) in [(0usize, 3usize, 0.8f64), (1, 4, -1.3), (2, 3, 2.2)] {
            let (sin, cos) = angle.sin_cos();
            for v in [&mut s, &mut t] {
                let (a, b) = (v[i], v[j]);
                v[i] = cos * a - sin * b;
                v[j] = sin * a + cos * b;
            }
        }
        let qs: f64 = s.iter().map(|v| v * v).sum();
        let qst: f64 = s.iter().zip(&t).map(|(a, b)| a * b).sum();
        let qt: f64 = t.iter().map(|v| v * v).sum();
        for (got, want) in [(qs, q[QS]), (qst, q[QST]), (qt, q[QT])] {
            assert!(
                (got - want).abs() < 1e-12,
                "rotation changed a cross-product: {got} vs {want}"
            );
        }
    }

    #[test]
    fn null_ratio_factors_through_qt() {
        let p = fixed_omega();
        let comp = NullComponent::point(vec![0.0, 25.0]);
        for q in [[4.0, 0.5, 2.0], [9.0, -2.0, 30.0], [3.0, 0.0, 180.0]] {
            let via = p.log_null_ratio_at(&comp, q[QT]).unwrap();
            let direct = p.log_ratio(&ParameterPoint::new(vec![0.0, 25.0]), &q);
            assert!(
                (via - direct).abs() < 1e-12,
                "null factorization off at {q:?}"
            );
        }
    }

    #[test]
    fn clr_statistic_closed_forms() {
        assert_eq!(clr_statistic(&[4.0, 0.0, 4.0]), 0.0);
        assert!((clr_statistic(&[9.0, 0.0, 4.0]) - 5.0).abs() < 1e-14);
        // Symmetric in the sign of Q_ST.
        assert_eq!(
            clr_statistic(&[6.0, 2.5, 3.0]),
            clr_statistic(&[6.0, -2.5, 3.0])
        );
        // Q_S = Q_T: LR = |Q_ST|.
        assert!((clr_statistic(&[5.0, 1.75, 5.0]) - 1.75).abs() < 1e-14);
    }

    #[test]
    fn cv_table_limits_and_interpolation() {
        let grid: Vec<f64> = CvTable::default_grid().into_iter().step_by(16).collect();
        let t = CvTable::build(5, 0.05, 40_000, grid.clone()).unwrap();
        // Q_T -> 0: the statistic is Q_S ~ chi2_k; Q_T large: LM-like chi2_1.
        let chi5 = chi2_quantile(5.0, 0.95);
        let chi1 = chi2_quantile(1.0, 0.95);
        assert!(
            (t.cv(grid[0]) - chi5).abs() < 0.3,
            "cv at tiny Q_T: {} vs chi2_5 {chi5}",
            t.cv(grid[0])
        );
        assert!(
            (t.cv(600.0) - chi1).abs() < 0.15,
            "cv at large Q_T: {} vs chi2_1 {chi1}",
            t.cv(600.0)
        );
        // Interpolated values stay within neighboring node bounds.
        for w in t.grid().windows(2) {
            let mid = (w[0] * w[1]).sqrt();
            let v = t.cv(mid);
            let (a, b) = (t.cv(w[0]), t.cv(w[1]));
            assert!(
                v <= a.max(b) + 1e-12 && v >= a.min(b) - 1e-12,
                "interpolation overshoot at {mid}"
            );
        }
        // Clamping is counted.
        let before = t.clamp_count();
        t.cv(1e-6);
        t.cv(1e5);
        assert_eq!(t.clamp_count(), before + 2);
    }

    #[test]
    fn cv_table_roundtrip_and_determinism() {
        let grid: Vec<f64> = CvTable::default_grid().into_iter().step_by(40).collect();
        let a = CvTable::build(5, 0.05, 10_000, grid.clone()).unwrap();
        let b = CvTable::build(5, 0.05, 10_000, grid.clone()).unwrap();
        assert_eq!(a.values(), b.values(), "cv table build must be deterministic");

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cv.bin");
        a.save(&path).unwrap();
        let c = CvTable::load(&path).unwrap();
        assert_eq!(a.values(), c.values());
        assert_eq!(a.grid(), c.grid());

        let cached = CvTable::cached(dir.path(), 5, 0.05, 10_000, grid.clone()).unwrap();
        assert_eq!(cached.values(), a.values());
    }

    #[test]
    fn lm_test_boundary() {
        let t = LmTest::level(0.05);
        let crit = t.critical();
        assert!((crit - 3.8414588206941254).abs() < 1e-9, "crit {crit}");
        let qt = 2.0;
        let just_over = (crit * qt).sqrt() + 1e-9;
        let just_under = (crit * qt).sqrt() - 1e-9;
        assert_eq!(t.decide(&[1.0, just_over, qt]), 1.0);
        assert_eq!(t.decide(&[1.0, just_under, qt]), 0.0);
    }

    #[test]
    fn clr_and_lm_agree_at_strong_identification() {
        let p = fixed_omega();
        let grid: Vec<f64> = CvTable::default_grid().into_iter().step_by(8).collect();
        let table = std::sync::Arc::new(CvTable::build(5, 0.05, 200_000, grid).unwrap());
        let clr = ClrTest::new(table);
        let lm = LmTest::level(0.05);
        let bank = DrawBank::generate(41, 30_000, 10, true, true).unwrap();
        let theta = ParameterPoint::new(vec![0.15, 150.0]);
        let obs = observations_for_target(&p, EvalTarget::Point(&theta), &bank);
        let agree = obs
            .chunks(3)
            .filter(|q| clr.decide(q) == lm.decide(q))
            .count();
        let rate = agree as f64 / bank.n() as f64;
        assert!(
            rate >= 0.98,
            "CLR and LM agreement at lambda = 150 is only {rate}"
        );
    }
}
