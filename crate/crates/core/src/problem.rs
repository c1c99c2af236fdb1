//! Testing-problem declarations: parameter points, discretized null and
//! alternative supports, ad hoc tests, switching rules, and validation.
//!
//! All densities are evaluated as ratios against a fixed reference point of
//! the problem, exp(log f_theta(y) - log f_ref(y)), so that magnitudes stay
//! representable even when individual densities overflow.

use crate::error::{Error, Result};
use crate::util::{log_mean_exp, logsumexp};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// A point in the problem's parameter space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterPoint {
    pub coords: Vec<f64>,
}

impl ParameterPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        ParameterPoint { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn label(&self) -> String {
        let parts: Vec<String> = self.coords.iter().map(|c| format!("{c}")).collect();
        format!("({})", parts.join(", "))
    }
}

impl From<Vec<f64>> for ParameterPoint {
    fn from(coords: Vec<f64>) -> Self {
        ParameterPoint { coords }
    }
}

impl From<&[f64]> for ParameterPoint {
    fn from(coords: &[f64]) -> Self {
        ParameterPoint {
            coords: coords.to_vec(),
        }
    }
}

/// Default number of midpoint quadrature nodes for slice mixtures.
pub const DEFAULT_QUAD_NODES: usize = 201;

/// A one-dimensional uniform slice of the parameter space: one coordinate
/// ranges uniformly over [lo, hi], the others are fixed by `template`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformSlice {
    pub template: ParameterPoint,
    pub vary_index: usize,
    pub lo: f64,
    pub hi: f64,
    /// Midpoint-rule node count used when no closed form is available.
    pub quad_nodes: usize,
}

impl UniformSlice {
    pub fn new(template: ParameterPoint, vary_index: usize, lo: f64, hi: f64) -> Self {
        UniformSlice {
            template,
            vary_index,
            lo,
            hi,
            quad_nodes: DEFAULT_QUAD_NODES,
        }
    }

    pub fn point_at(&self, v: f64) -> ParameterPoint {
        let mut p = self.template.clone();
        p.coords[self.vary_index] = v;
        p
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Midpoint quadrature nodes.
    pub fn nodes(&self) -> Vec<f64> {
        let n = self.quad_nodes.max(1);
        (0..n)
            .map(|k| self.lo + (self.hi - self.lo) * (k as f64 + 0.5) / n as f64)
            .collect()
    }
}

/// One component of the discretized null hypothesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NullComponentKind {
    /// A single parameter point.
    PointMass(ParameterPoint),
    /// A base distribution: uniform mixture along a parameter slice.
    BaseDistribution(UniformSlice),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullComponent {
    pub label: String,
    pub kind: NullComponentKind,
}

impl NullComponent {
    pub fn point(p: impl Into<ParameterPoint>) -> Self {
        let p = p.into();
        NullComponent {
            label: p.label(),
            kind: NullComponentKind::PointMass(p),
        }
    }

    pub fn slice(slice: UniformSlice) -> Self {
        let label = format!(
            "slice[{}] {} in [{}, {}]",
            slice.template.label(),
            slice.vary_index,
            slice.lo,
            slice.hi
        );
        NullComponent {
            label,
            kind: NullComponentKind::BaseDistribution(slice),
        }
    }

    /// A representative parameter point (the point itself, or the slice
    /// midpoint), used for labeling and validation probes.
    pub fn representative(&self) -> ParameterPoint {
        match &self.kind {
            NullComponentKind::PointMass(p) => p.clone(),
            NullComponentKind::BaseDistribution(s) => s.point_at(0.5 * (s.lo + s.hi)),
        }
    }
}

/// The discretized alternative: a list of distinct parameter points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlternativeSupport {
    pub points: Vec<ParameterPoint>,
}

impl AlternativeSupport {
    pub fn new(points: Vec<ParameterPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("alternative support".into()));
        }
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                if points[i] == points[j] {
                    return Err(Error::Config(format!(
                        "duplicate alternative support point {}",
                        points[i].label()
                    )));
                }
            }
        }
        Ok(AlternativeSupport { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A testing problem: a parametric family of distributions for the
/// observation, a sampler driven by baseline draws, and a partition of the
/// parameter space into null and alternative regions.
///
/// Implementations must be immutable and thread-safe; all methods are
/// reentrant.
pub trait TestingProblem: Send + Sync {
    /// Registry name, e.g. "gaussian-mean".
    fn name(&self) -> &str;

    /// Dimension of one baseline draw (a draw-bank row).
    fn base_dim(&self) -> usize;

    /// Dimension of one observation.
    fn obs_dim(&self) -> usize;

    /// Dimension of a parameter point.
    fn theta_dim(&self) -> usize;

    /// The fixed reference point against which density ratios are formed.
    fn reference_point(&self) -> ParameterPoint;

    /// Transform a baseline draw into an observation at `theta`.
    fn sample(&self, base: &[f64], theta: &ParameterPoint, out: &mut [f64]);

    /// Log density of the observation at `theta`.
    fn log_density(&self, theta: &ParameterPoint, y: &[f64]) -> f64;

    /// log f_theta(y) - log f_ref(y). Override when a cheaper or more
    /// stable closed form exists; must stay consistent with `log_density`.
    fn log_ratio(&self, theta: &ParameterPoint, y: &[f64]) -> f64 {
        self.log_density(theta, y) - self.log_density(&self.reference_point(), y)
    }

    /// Batch variant of `log_ratio` over a row-major observation matrix.
    fn log_ratio_batch(&self, theta: &ParameterPoint, ys: &[f64], out: &mut [f64]) {
        let d = self.obs_dim();
        debug_assert_eq!(ys.len(), out.len() * d);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.log_ratio(theta, &ys[i * d..(i + 1) * d]);
        }
    }

    /// Batch log ratio for optimizer iterations. Implementations may trade
    /// a small absolute error (up to ~1e-8) for speed; everything that is
    /// reported or compared against tolerances uses `log_ratio_batch`.
    fn log_ratio_batch_fast(&self, theta: &ParameterPoint, ys: &[f64], out: &mut [f64]) {
        self.log_ratio_batch(theta, ys, out);
    }

    fn in_null(&self, theta: &ParameterPoint) -> bool;

    fn in_alt(&self, theta: &ParameterPoint) -> bool;

    /// Closed-form log mixture density over a uniform slice, if available.
    fn log_slice_density(&self, _slice: &UniformSlice, _y: &[f64]) -> Option<f64> {
        None
    }

    /// Scalar statistic s(y) through which every null-component density
    /// ratio factors, enabling the table-based loop evaluator. None disables
    /// the fast path.
    fn null_stat(&self, _y: &[f64]) -> Option<f64> {
        None
    }

    /// log(f~_i(y) / f_ref(y)) as a function of the scalar null statistic.
    /// Must be provided whenever `null_stat` is.
    fn log_null_ratio_at(&self, _comp: &NullComponent, _s: f64) -> Option<f64> {
        None
    }
}

/// Log density of a null component's distribution (the point density or the
/// uniform mixture along the slice).
///
/// Uses the problem's closed form when available, otherwise the midpoint
/// quadrature declared on the slice. Errors if the result is not finite.
pub fn mixture_log_density(
    problem: &dyn TestingProblem,
    comp: &NullComponent,
    y: &[f64],
) -> Result<f64> {
    let v = match &comp.kind {
        NullComponentKind::PointMass(p) => problem.log_density(p, y),
        NullComponentKind::BaseDistribution(slice) => log_slice_density_generic(problem, slice, y),
    };
    if v.is_nan() || v == f64::INFINITY {
        return Err(Error::NonFinite {
            context: format!("mixture density of component {}", comp.label),
            value: v,
        });
    }
    Ok(v)
}

/// Slice mixture log density: closed form if the problem has one, else the
/// midpoint rule applied to log densities.
pub fn log_slice_density_generic(
    problem: &dyn TestingProblem,
    slice: &UniformSlice,
    y: &[f64],
) -> f64 {
    if let Some(v) = problem.log_slice_density(slice, y) {
        return v;
    }
    if slice.width() <= 0.0 {
        return problem.log_density(&slice.point_at(slice.lo), y);
    }
    let logs: Vec<f64> = slice
        .nodes()
        .iter()
        .map(|&v| problem.log_density(&slice.point_at(v), y))
        .collect();
    log_mean_exp(&logs)
}

/// log( f~_i(y) / f_ref(y) ) for a null component, computed through the
/// problem's ratio machinery so that reference-relative evaluations stay
/// mutually consistent.
pub fn log_component_ratio(
    problem: &dyn TestingProblem,
    comp: &NullComponent,
    y: &[f64],
) -> f64 {
    match &comp.kind {
        NullComponentKind::PointMass(p) => problem.log_ratio(p, y),
        NullComponentKind::BaseDistribution(slice) => {
            if let Some(v) = problem.log_slice_density(slice, y) {
                return v - problem.log_density(&problem.reference_point(), y);
            }
            if slice.width() <= 0.0 {
                return problem.log_ratio(&slice.point_at(slice.lo), y);
            }
            let logs: Vec<f64> = slice
                .nodes()
                .iter()
                .map(|&v| problem.log_ratio(&slice.point_at(v), y))
                .collect();
            log_mean_exp(&logs)
        }
    }
}

/// An ad hoc (benchmark) test: maps an observation to a rejection
/// probability in [0, 1].
pub trait AdHocTest: Send + Sync {
    fn name(&self) -> &str;
    fn decide(&self, y: &[f64]) -> f64;
}

/// A switching statistic D(Y) for two-regime tests.
pub trait SwitchStatistic: Send + Sync {
    fn name(&self) -> &str;
    fn eval(&self, y: &[f64]) -> f64;
}

/// Switching statistic that reads one observation coordinate.
#[derive(Clone, Debug)]
pub struct CoordinateStat {
    pub index: usize,
    pub stat_name: String,
}

impl SwitchStatistic for CoordinateStat {
    fn name(&self) -> &str {
        &self.stat_name
    }
    fn eval(&self, y: &[f64]) -> f64 {
        y[self.index]
    }
}

/// Two-regime rule: when D(y) exceeds `switch_point` the standard test
/// decides, otherwise the Neyman-Pearson comparison does.
#[derive(Clone)]
pub struct SwitchingRule {
    pub statistic: Arc<dyn SwitchStatistic>,
    pub switch_point: f64,
    pub standard_test: Arc<dyn AdHocTest>,
    /// Parameter points at which the switch region should be rare; used by
    /// the build-time leak diagnostic.
    pub diagnostic_points: Vec<ParameterPoint>,
}

impl SwitchingRule {
    pub fn applies(&self, y: &[f64]) -> bool {
        self.statistic.eval(y) > self.switch_point
    }
}

impl std::fmt::Debug for SwitchingRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SwitchingRule")
            .field("statistic", &self.statistic.name())
            .field("switch_point", &self.switch_point)
            .field("standard_test", &self.standard_test.name())
            .finish()
    }
}

/// Maximum switch-region probability tolerated at a diagnostic point.
pub const SWITCH_LEAK_THRESHOLD: f64 = 0.01;

/// Severity of a validation finding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub severity: Severity,
    pub message: String,
}

/// Structured validation report. Collects every issue rather than aborting
/// on the first.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.issues.iter().any(|i| i.severity == Severity::Error)
    }

    fn error(&mut self, message: String) {
        self.issues.push(ValidationIssue {
            severity: Severity::Error,
            message,
        });
    }

    fn warning(&mut self, message: String) {
        self.issues.push(ValidationIssue {
            severity: Severity::Warning,
            message,
        });
    }
}

/// Relative tolerance of the density-ratio consistency check.
pub const RATIO_CONSISTENCY_TOL: f64 = 1e-12;

/// Validate a problem declaration against its supports and switching rule.
///
/// Checks membership of supports in the declared null/alternative regions,
/// distinctness of alternative points, finiteness of densities on probe
/// draws, mutual consistency of `log_ratio` and `log_density`, the
/// `null_stat` factorization when declared, and the switch-region leak
/// probability at the rule's diagnostic points.
pub fn validate_problem(
    problem: &dyn TestingProblem,
    null_components: &[NullComponent],
    alt_support: &AlternativeSupport,
    switching: Option<&SwitchingRule>,
) -> ValidationReport {
    let mut report = ValidationReport::default();

    if null_components.is_empty() {
        report.error("null support has no components".into());
    }
    for comp in null_components {
        let probe = match &comp.kind {
            NullComponentKind::PointMass(p) => vec![p.clone()],
            NullComponentKind::BaseDistribution(s) => {
                if !(s.hi >= s.lo) {
                    report.error(format!("component {} has hi < lo", comp.label));
                }
                vec![s.point_at(s.lo), s.point_at(0.5 * (s.lo + s.hi)), s.point_at(s.hi)]
            }
        };
        for p in probe {
            if p.dim() != problem.theta_dim() {
                report.error(format!(
                    "component {} has dimension {}, problem expects {}",
                    comp.label,
                    p.dim(),
                    problem.theta_dim()
                ));
            } else if !problem.in_null(&p) {
                report.error(format!(
                    "component {} contains {} which is outside the null region",
                    comp.label,
                    p.label()
                ));
            }
        }
    }
    for p in &alt_support.points {
        if p.dim() != problem.theta_dim() {
            report.error(format!(
                "alternative point {} has dimension {}, problem expects {}",
                p.label(),
                p.dim(),
                problem.theta_dim()
            ));
        } else if !problem.in_alt(p) {
            report.error(format!(
                "alternative point {} is outside the alternative region",
                p.label()
            ));
        }
    }
    for i in 0..alt_support.points.len() {
        for j in i + 1..alt_support.points.len() {
            if alt_support.points[i] == alt_support.points[j] {
                report.error(format!(
                    "duplicate alternative point {}",
                    alt_support.points[i].label()
                ));
            }
        }
    }

    // Probe draws: a small deterministic standard normal bank.
    let probe_bank = probe_draws(problem.base_dim(), 512);
    let reference = problem.reference_point();
    let mut targets: Vec<ParameterPoint> = alt_support.points.clone();
    targets.push(reference.clone());
    for comp in null_components {
        targets.push(comp.representative());
    }

    let mut y = vec![0.0; problem.obs_dim()];
    'outer: for theta_gen in &targets {
        for row in probe_bank.chunks(problem.base_dim()) {
            problem.sample(row, theta_gen, &mut y);
            for theta_eval in &targets {
                let ld = problem.log_density(theta_eval, &y);
                if ld.is_nan() || ld == f64::INFINITY {
                    report.error(format!(
                        "log density at {} is {} for a draw generated at {}",
                        theta_eval.label(),
                        ld,
                        theta_gen.label()
                    ));
                    break 'outer;
                }
            }
        }
    }

    // Density-ratio consistency: ratios against the reference must compose.
    let t1 = &alt_support.points[0];
    let t2 = targets
        .iter()
        .find(|t| *t != t1)
        .unwrap_or(&reference)
        .clone();
    let mut worst: f64 = 0.0;
    for row in probe_bank.chunks(problem.base_dim()).take(64) {
        problem.sample(row, t1, &mut y);
        let via_ratio = problem.log_ratio(t1, &y) - problem.log_ratio(&t2, &y);
        let direct = problem.log_density(t1, &y) - problem.log_density(&t2, &y);
        let scale = 1.0f64.max(direct.abs());
        worst = worst.max((via_ratio - direct).abs() / scale);
    }
    if worst > RATIO_CONSISTENCY_TOL {
        report.error(format!(
            "density-ratio consistency violated: relative error {worst:.3e} exceeds {RATIO_CONSISTENCY_TOL:.0e}"
        ));
    }

    // null_stat factorization check.
    if problem.null_stat(&vec![0.0; problem.obs_dim()]).is_some() {
        let mut worst = 0.0f64;
        for comp in null_components {
            for row in probe_bank.chunks(problem.base_dim()).take(64) {
                problem.sample(row, &comp.representative(), &mut y);
                let s = problem.null_stat(&y).unwrap();
                match problem.log_null_ratio_at(comp, s) {
                    Some(via_stat) => {
                        let direct = log_component_ratio(problem, comp, &y);
                        worst = worst.max((via_stat - direct).abs() / 1.0f64.max(direct.abs()));
                    }
                    None => {
                        report.error(format!(
                            "problem declares null_stat but no log_null_ratio_at for component {}",
                            comp.label
                        ));
                    }
                }
            }
        }
        if worst > 1e-9 {
            report.error(format!(
                "null statistic factorization violated: relative error {worst:.3e}"
            ));
        }
    }

    // Switch-region leak probability at declared diagnostic points.
    if let Some(rule) = switching {
        for p in &rule.diagnostic_points {
            let mut hits = 0usize;
            let mut total = 0usize;
            for row in probe_bank.chunks(problem.base_dim()) {
                problem.sample(row, p, &mut y);
                if rule.applies(&y) {
                    hits += 1;
                }
                total += 1;
            }
            let prob = hits as f64 / total as f64;
            if prob > SWITCH_LEAK_THRESHOLD {
                report.warning(format!(
                    "switch statistic {} exceeds the switch point with probability {:.4} at {} (threshold {})",
                    rule.statistic.name(),
                    prob,
                    p.label(),
                    SWITCH_LEAK_THRESHOLD
                ));
            }
        }
    }

    report
}

/// Deterministic standard normal probe draws (row-major, n x dim).
fn probe_draws(dim: usize, n: usize) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0xA11CE);
    let mut out = Vec::with_capacity(n * dim);
    while out.len() < n * dim {
        // Box-Muller pair.
        let u1: f64 = rng.gen::<f64>().max(1e-300);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let a = 2.0 * std::f64::consts::PI * u2;
        out.push(r * a.cos());
        if out.len() < n * dim {
            out.push(r * a.sin());
        }
    }
    out
}

/// Logarithm of a weighted density mixture relative to the reference point:
/// log( sum_i c_i * f_i(y) / f_ref(y) ) given per-component log ratios.
/// Coefficients equal to zero are skipped; returns -inf when everything is
/// zero.
pub fn log_weighted_ratio_sum(coeffs: &[f64], log_ratios: &[f64]) -> f64 {
    debug_assert_eq!(coeffs.len(), log_ratios.len());
    let terms: Vec<f64> = coeffs
        .iter()
        .zip(log_ratios)
        .filter(|(c, _)| **c > 0.0)
        .map(|(c, lr)| c.ln() + lr)
        .collect();
    logsumexp(&terms)
}
