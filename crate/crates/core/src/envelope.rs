//! Approximate power envelope construction with verified size and dominance.
//!
//! The build runs in three steps. Step 1 fits least favorable weights on the
//! current supports with the fit bank. Step 2 scans a fine null grid for size
//! violations with an independent verify bank and grows the null support where
//! it finds them. Step 3 scans a fine alternative grid for power deficits the
//! same way and grows the alternative support. Steps repeat until both scans
//! are clean or the refinement budget runs out. Every reported surface comes
//! from the verify bank so the fit cannot grade itself.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bank::DrawBank;
use crate::error::{Error, Result};
use crate::inner::{MultiplierVector, NpTest};
use crate::mc;
use crate::outer::{run_outer, OuterSettings, OuterTrace};
use crate::problem::{
    validate_problem, AdHocTest, AlternativeSupport, NullComponent, NullComponentKind,
    ParameterPoint, Severity, SwitchingRule, TestingProblem,
};
use crate::simplex::WeightVector;

/// Default slack in probability units for both the size and dominance checks.
pub const DEFAULT_EPSILON: f64 = 0.005;

/// Default number of support-refinement rounds before giving up.
pub const DEFAULT_MAX_REFINEMENTS: usize = 10;

/// Most support points added in a single refinement round: the worst violator
/// plus any others beyond twice the tolerance.
pub const MAX_ADDED_PER_ROUND: usize = 5;

/// Tolerances and verification grids for an envelope build.
#[derive(Clone, Debug)]
pub struct ThresholdConfig {
    /// Slack in probability units: size may reach `alpha + epsilon` and the
    /// power deficit may reach `-epsilon` without triggering a refinement.
    pub epsilon: f64,
    /// Null points scanned for size violations.
    pub fine_null_grid: Vec<ParameterPoint>,
    /// Alternative points scanned for power deficits.
    pub fine_alt_grid: Vec<ParameterPoint>,
    /// Refinement rounds allowed before the build settles for Inconclusive.
    pub max_refinements: usize,
}

impl ThresholdConfig {
    pub fn new(fine_null_grid: Vec<ParameterPoint>, fine_alt_grid: Vec<ParameterPoint>) -> Self {
        ThresholdConfig {
            epsilon: DEFAULT_EPSILON,
            fine_null_grid,
            fine_alt_grid,
            max_refinements: DEFAULT_MAX_REFINEMENTS,
        }
    }

    fn validate(&self, problem: &dyn TestingProblem) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.fine_null_grid.is_empty() {
            return Err(Error::Empty("fine null grid".into()));
        }
        if self.fine_alt_grid.is_empty() {
            return Err(Error::Empty("fine alternative grid".into()));
        }
        for p in &self.fine_null_grid {
            if !problem.in_null(p) {
                return Err(Error::Config(format!(
                    "fine null grid point {} is not in the null region",
                    p.label()
                )));
            }
        }
        for p in &self.fine_alt_grid {
            if !problem.in_alt(p) {
                return Err(Error::Config(format!(
                    "fine alternative grid point {} is not in the alternative region",
                    p.label()
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of a verified build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// The ad hoc test matches the envelope within epsilon everywhere on the
    /// fine alternative grid and respects the size budget.
    EffectivelyOptimal,
    /// The envelope beats the ad hoc test by more than epsilon somewhere and
    /// never trails it by more than epsilon.
    EffectivelyDominated,
    /// Verification failed somewhere within the refinement budget.
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::EffectivelyOptimal => "effectively-optimal",
            Verdict::EffectivelyDominated => "effectively-dominated",
            Verdict::Inconclusive => "inconclusive",
        };
        f.write_str(s)
    }
}

/// Which support a refinement round extended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefinementTarget {
    Null,
    Alt,
}

/// One round of support growth.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefinementRecord {
    /// 1-based refinement round.
    pub round: usize,
    pub target: RefinementTarget,
    /// Coordinates of the points added to the support.
    pub added: Vec<Vec<f64>>,
    /// Worst violation that triggered the round: size minus `alpha + epsilon`
    /// for null rounds, `-epsilon` minus the power difference for alternative
    /// rounds. Positive by construction.
    pub worst: f64,
}

/// Serializable description of the fitted test, sufficient to re-state the
/// rejection rule without live trait objects.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestDescriptor {
    pub alpha: f64,
    /// Critical value of the Neyman-Pearson form (sum of multipliers).
    pub critical_value: f64,
    /// Least favorable mixture over the null components, normalized.
    pub lfd_weights: Vec<f64>,
    /// Raw dual multipliers, one per null component.
    pub multipliers: Vec<f64>,
    /// Labels of the null components, aligned with the multipliers.
    pub null_labels: Vec<String>,
    /// Switching rule summary, when the test has two regimes.
    pub switching: Option<String>,
}

/// Result of a verified envelope build. Stores every surface needed to
/// re-check the verdict without access to the original banks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ApeReport {
    pub problem: String,
    pub adhoc_name: String,
    pub alpha: f64,
    pub epsilon: f64,
    pub verdict: Verdict,
    /// Human-readable descriptions of the points that kept the verdict
    /// Inconclusive. Empty for the other verdicts.
    pub violations: Vec<String>,

    /// Final alternative support coordinates.
    pub support_points: Vec<Vec<f64>>,
    /// Final weights over `support_points`.
    pub final_weights: Vec<f64>,
    /// Verify-bank power of the fitted test at each support point.
    pub support_power_envelope: Vec<f64>,
    /// Verify-bank power of the ad hoc test at each support point.
    pub support_power_adhoc: Vec<f64>,

    pub final_test: TestDescriptor,

    /// Fine alternative grid coordinates.
    pub fine_alt_grid: Vec<Vec<f64>>,
    /// Verify-bank power of the fitted test on `fine_alt_grid`.
    pub power_envelope: Vec<f64>,
    /// Verify-bank power of the ad hoc test on `fine_alt_grid`.
    pub power_adhoc: Vec<f64>,
    /// (envelope - adhoc) * 100, rounded to 3 decimals. The verdict is
    /// defined on these stored values so it can be re-derived exactly.
    pub diff_pp: Vec<f64>,

    /// Fine null grid coordinates.
    pub fine_null_grid: Vec<Vec<f64>>,
    /// Verify-bank null rejection of the fitted test on `fine_null_grid`.
    pub size_envelope: Vec<f64>,
    /// Verify-bank null rejection of the ad hoc test on `fine_null_grid`.
    pub size_adhoc: Vec<f64>,

    pub refinements: Vec<RefinementRecord>,
    /// Whether the final fit run exited on its convergence certificate.
    pub exit_satisfied: bool,
    /// Outer iterations consumed by the final fit run.
    pub outer_iterations_used: usize,
    /// Draws per point in every reported surface.
    pub n_draws_verify: usize,
    /// Validation and build diagnostics worth surfacing.
    pub notes: Vec<String>,
}

impl ApeReport {
    /// Re-derive the verdict from the stored surfaces alone.
    pub fn verdict_recheck(&self) -> Verdict {
        decide_verdict(
            self.alpha,
            self.epsilon,
            &self.size_envelope,
            &self.diff_pp,
            &self.fine_null_grid,
            &self.fine_alt_grid,
        )
        .0
    }

    /// Weighted average power of both tests under `weights` over the report's
    /// alternative support. Pure arithmetic over stored verify-bank powers.
    pub fn wap_comparison(&self, weights: &WeightVector) -> Result<(f64, f64)> {
        wap_comparison(self, weights)
    }

    /// Reconstruct the live fitted test from the stored report plus the
    /// run's initial null support and switching rule. Null points added by
    /// refinement rounds are replayed on top of `base_nulls`; the stored
    /// component labels must line up, which guards against pairing a report
    /// with the wrong configuration.
    pub fn rebuild_test(
        &self,
        base_nulls: Vec<NullComponent>,
        switching: Option<SwitchingRule>,
    ) -> Result<NpTest> {
        let mut nulls = base_nulls;
        for rec in &self.refinements {
            if rec.target == RefinementTarget::Null {
                for coords in &rec.added {
                    nulls.push(NullComponent::point(coords.clone()));
                }
            }
        }
        if nulls.len() != self.final_test.multipliers.len() {
            return Err(Error::Config(format!(
                "report holds {} multipliers but the configuration yields {} null components",
                self.final_test.multipliers.len(),
                nulls.len()
            )));
        }
        for (c, stored) in nulls.iter().zip(&self.final_test.null_labels) {
            if c.label != *stored {
                return Err(Error::Config(format!(
                    "null component mismatch: report has '{stored}', configuration gives '{}'",
                    c.label
                )));
            }
        }
        let alt = AlternativeSupport::new(
            self.support_points
                .iter()
                .cloned()
                .map(ParameterPoint::from)
                .collect(),
        )?;
        Ok(NpTest {
            weights: WeightVector::new(self.final_weights.clone())?,
            alt,
            multipliers: MultiplierVector::new(self.final_test.multipliers.clone())?,
            nulls,
            switching,
            alpha: self.alpha,
        })
    }

    pub fn min_diff_pp(&self) -> f64 {
        self.diff_pp.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_diff_pp(&self) -> f64 {
        self.diff_pp
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_size(&self) -> f64 {
        self.size_envelope
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Weighted average power of the envelope and the ad hoc test under `weights`
/// over the report's alternative support, from stored verify-bank powers.
pub fn wap_comparison(report: &ApeReport, weights: &WeightVector) -> Result<(f64, f64)> {
    let w = weights.as_slice();
    if w.len() != report.support_points.len() {
        return Err(Error::Dimension {
            expected: report.support_points.len(),
            got: w.len(),
            context: "wap weights vs alternative support".into(),
        });
    }
    let dot = |p: &[f64]| w.iter().zip(p).map(|(wi, pi)| wi * pi).sum::<f64>();
    Ok((
        dot(&report.support_power_envelope),
        dot(&report.support_power_adhoc),
    ))
}

/// Everything a build needs. Banks must come from distinct seeds; the fit
/// bank drives the optimizer, the verify bank grades it.
pub struct BuildInputs<'a> {
    pub problem: &'a dyn TestingProblem,
    pub adhoc: &'a dyn AdHocTest,
    pub nulls: Vec<NullComponent>,
    pub alt: AlternativeSupport,
    pub init_weights: WeightVector,
    pub switching: Option<SwitchingRule>,
    pub alpha: f64,
    pub outer: OuterSettings,
    pub fit_bank: &'a DrawBank,
    pub verify_bank: &'a DrawBank,
}

/// A finished build: the serializable report, the live fitted test for
/// further evaluation, and the final fit run's iteration trace.
#[derive(Debug)]
pub struct BuildOutput {
    pub report: ApeReport,
    pub test: NpTest,
    pub trace: OuterTrace,
}

/// Build a verified approximate power envelope.
pub fn build_ape(inputs: BuildInputs<'_>, thresholds: &ThresholdConfig) -> Result<BuildOutput> {
    let BuildInputs {
        problem,
        adhoc,
        mut nulls,
        mut alt,
        init_weights,
        switching,
        alpha,
        outer,
        fit_bank,
        verify_bank,
    } = inputs;

    if fit_bank.seed() == verify_bank.seed() {
        return Err(Error::Config(format!(
            "fit and verify banks share seed {}; verification needs independent draws",
            fit_bank.seed()
        )));
    }
    thresholds.validate(problem)?;
    let eps = thresholds.epsilon;

    let mut notes = Vec::new();
    let validation = validate_problem(problem, &nulls, &alt, switching.as_ref());
    if validation.has_errors() {
        let msgs: Vec<&str> = validation
            .issues
            .iter()
            .filter(|i| i.severity == Severity::Error)
            .map(|i| i.message.as_str())
            .collect();
        return Err(Error::Config(format!(
            "problem validation failed: {}",
            msgs.join("; ")
        )));
    }
    for issue in &validation.issues {
        notes.push(format!("validation: {}", issue.message));
    }

    // Ad hoc surfaces depend only on the fixed fine grids.
    let adhoc_decide = |y: &[f64]| adhoc.decide(y);
    let power_adhoc = estimate(problem, &thresholds.fine_alt_grid, &adhoc_decide, verify_bank);
    let size_adhoc = estimate(problem, &thresholds.fine_null_grid, &adhoc_decide, verify_bank);

    let mut settings = outer.clone();
    let mut weights = init_weights;
    let mut refinements: Vec<RefinementRecord> = Vec::new();
    let mut result = run_outer(
        problem,
        &nulls,
        &alt,
        &weights,
        switching.as_ref(),
        adhoc,
        fit_bank,
        alpha,
        &settings,
    )?;

    let (size_envelope, power_envelope) = loop {
        let decide = |y: &[f64]| result.test.decide(problem, y);
        let size_envelope = estimate(problem, &thresholds.fine_null_grid, &decide, verify_bank);

        // Step 2: grow the null support where size breaks.
        if refinements.len() < thresholds.max_refinements {
            let picks = select_violations(
                size_envelope.iter().map(|s| s - (alpha + eps)).collect(),
                eps,
            );
            let added = dedupe_null(&picks, &thresholds.fine_null_grid, &nulls);
            if !added.is_empty() {
                let worst = picks[0].1;
                refinements.push(RefinementRecord {
                    round: refinements.len() + 1,
                    target: RefinementTarget::Null,
                    added: added.iter().map(|p| p.coords.clone()).collect(),
                    worst,
                });
                let mut lam = result.test.multipliers.as_slice().to_vec();
                lam.resize(nulls.len() + added.len(), 0.0);
                for p in added {
                    nulls.push(NullComponent::point(p));
                }
                settings.inner.start = Some(MultiplierVector::new(lam)?);
                weights = result.weights.clone();
                result = run_outer(
                    problem,
                    &nulls,
                    &alt,
                    &weights,
                    switching.as_ref(),
                    adhoc,
                    fit_bank,
                    alpha,
                    &settings,
                )?;
                continue;
            }
        }

        let power_envelope = estimate(problem, &thresholds.fine_alt_grid, &decide, verify_bank);

        // Step 3: grow the alternative support where the envelope trails.
        if refinements.len() < thresholds.max_refinements {
            let picks = select_violations(
                power_envelope
                    .iter()
                    .zip(&power_adhoc)
                    .map(|(e, a)| (a - e) - eps)
                    .collect(),
                eps,
            );
            let added = dedupe_alt(&picks, &thresholds.fine_alt_grid, &alt);
            if !added.is_empty() {
                let worst = picks[0].1;
                refinements.push(RefinementRecord {
                    round: refinements.len() + 1,
                    target: RefinementTarget::Alt,
                    added: added.iter().map(|p| p.coords.clone()).collect(),
                    worst,
                });
                // New points join with weight zero; the outer loop decides
                // how much mass they deserve.
                weights = result.weights.extended_with_zero(added.len());
                let mut points = alt.points.clone();
                points.extend(added);
                alt = AlternativeSupport::new(points)?;
                settings.inner.start = Some(result.test.multipliers.clone());
                result = run_outer(
                    problem,
                    &nulls,
                    &alt,
                    &weights,
                    switching.as_ref(),
                    adhoc,
                    fit_bank,
                    alpha,
                    &settings,
                )?;
                continue;
            }
        }

        break (size_envelope, power_envelope);
    };

    // Reported surfaces, all from the verify bank.
    let decide = |y: &[f64]| result.test.decide(problem, y);
    let support_power_envelope = estimate(problem, &alt.points, &decide, verify_bank);
    let support_power_adhoc = estimate(problem, &alt.points, &adhoc_decide, verify_bank);

    let diff_pp: Vec<f64> = power_envelope
        .iter()
        .zip(&power_adhoc)
        .map(|(e, a)| round_pp((e - a) * 100.0))
        .collect();

    let null_coords: Vec<Vec<f64>> = thresholds
        .fine_null_grid
        .iter()
        .map(|p| p.coords.clone())
        .collect();
    let alt_coords: Vec<Vec<f64>> = thresholds
        .fine_alt_grid
        .iter()
        .map(|p| p.coords.clone())
        .collect();

    let (verdict, violations) = decide_verdict(
        alpha,
        eps,
        &size_envelope,
        &diff_pp,
        &null_coords,
        &alt_coords,
    );

    let final_test = describe_test(&result.test, &mut notes);
    if !result.trace.exit_satisfied {
        notes.push(format!(
            "final fit run hit the iteration cap without its convergence certificate \
             (best objective {:.6})",
            result.trace.best_values.last().copied().unwrap_or(f64::NAN)
        ));
    }

    let report = ApeReport {
        problem: problem.name().to_string(),
        adhoc_name: adhoc.name().to_string(),
        alpha,
        epsilon: eps,
        verdict,
        violations,
        support_points: alt.points.iter().map(|p| p.coords.clone()).collect(),
        final_weights: result.weights.as_slice().to_vec(),
        support_power_envelope,
        support_power_adhoc,
        final_test,
        fine_alt_grid: alt_coords,
        power_envelope,
        power_adhoc,
        diff_pp,
        fine_null_grid: null_coords,
        size_envelope,
        size_adhoc,
        refinements,
        exit_satisfied: result.trace.exit_satisfied,
        outer_iterations_used: result.trace.objectives.len(),
        n_draws_verify: verify_bank.n(),
        notes,
    };
    Ok(BuildOutput {
        report,
        test: result.test,
        trace: result.trace,
    })
}

/// Rejection probabilities of `decide` at `points`, exact decision path.
fn estimate<F>(
    problem: &dyn TestingProblem,
    points: &[ParameterPoint],
    decide: &F,
    bank: &DrawBank,
) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    mc::power_curve(problem, points, decide, bank)
        .into_iter()
        .map(|e| e.value)
        .collect()
}

/// Indices with positive excess, sorted worst first, trimmed to the worst
/// violator plus any others whose excess tops epsilon (twice the tolerance
/// overall), capped at `MAX_ADDED_PER_ROUND`.
fn select_violations(excess: Vec<f64>, eps: f64) -> Vec<(usize, f64)> {
    let mut picks: Vec<(usize, f64)> = excess
        .into_iter()
        .enumerate()
        .filter(|(_, v)| *v > 0.0)
        .collect();
    picks.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("violation excess is finite"));
    // Sorted descending, so the weak violators form a suffix.
    while picks.len() > 1 && picks.last().is_some_and(|(_, v)| *v <= eps) {
        picks.pop();
    }
    picks.truncate(MAX_ADDED_PER_ROUND);
    picks
}

/// Violating null points not already present as point components.
fn dedupe_null(
    picks: &[(usize, f64)],
    grid: &[ParameterPoint],
    nulls: &[NullComponent],
) -> Vec<ParameterPoint> {
    picks
        .iter()
        .map(|(i, _)| grid[*i].clone())
        .filter(|cand| {
            !nulls.iter().any(|c| match &c.kind {
                NullComponentKind::PointMass(p) => p.coords == cand.coords,
                NullComponentKind::BaseDistribution(_) => false,
            })
        })
        .collect()
}

/// Violating alternative points not already in the support.
fn dedupe_alt(
    picks: &[(usize, f64)],
    grid: &[ParameterPoint],
    alt: &AlternativeSupport,
) -> Vec<ParameterPoint> {
    picks
        .iter()
        .map(|(i, _)| grid[*i].clone())
        .filter(|cand| !alt.points.iter().any(|p| p.coords == cand.coords))
        .collect()
}

/// Verdict from stored surfaces. Size uses full precision, power differences
/// use the rounded per-point values so a re-check reproduces it exactly.
fn decide_verdict(
    alpha: f64,
    eps: f64,
    size_envelope: &[f64],
    diff_pp: &[f64],
    null_coords: &[Vec<f64>],
    alt_coords: &[Vec<f64>],
) -> (Verdict, Vec<String>) {
    let eps_pp = eps * 100.0;
    let mut violations = Vec::new();
    for (s, c) in size_envelope.iter().zip(null_coords) {
        if *s > alpha + eps {
            violations.push(format!("size {:.4} > {:.4} at {:?}", s, alpha + eps, c));
        }
    }
    let mut any_above = false;
    for (d, c) in diff_pp.iter().zip(alt_coords) {
        if *d < -eps_pp {
            violations.push(format!("power deficit {:.3}pp at {:?}", d, c));
        }
        if *d > eps_pp {
            any_above = true;
        }
    }
    if !violations.is_empty() {
        return (Verdict::Inconclusive, violations);
    }
    if any_above {
        (Verdict::EffectivelyDominated, violations)
    } else {
        (Verdict::EffectivelyOptimal, violations)
    }
}

fn describe_test(test: &NpTest, notes: &mut Vec<String>) -> TestDescriptor {
    let (critical_value, lfd_weights) = match test.to_neyman_pearson() {
        Ok(pair) => pair,
        Err(_) => {
            notes.push("final multipliers are all zero; no Neyman-Pearson form".into());
            (0.0, Vec::new())
        }
    };
    TestDescriptor {
        alpha: test.alpha,
        critical_value,
        lfd_weights,
        multipliers: test.multipliers.as_slice().to_vec(),
        null_labels: test.nulls.iter().map(|c| c.label.clone()).collect(),
        switching: test
            .switching
            .as_ref()
            .map(|s| format!("{} > {}", s.statistic.name(), s.switch_point)),
    }
}

fn round_pp(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inner::{InnerSettings, StepSchedule};
    use crate::problem::ParameterPoint;
    use crate::problems::gaussian::{GaussianMeanProblem, TwoSidedZTest};

    fn grid(points: &[f64]) -> Vec<ParameterPoint> {
        points.iter().map(|b| ParameterPoint::new(vec![*b])).collect()
    }

    fn quick_outer() -> OuterSettings {
        OuterSettings {
            iterations: 300,
            schedule: StepSchedule::Adaptive,
            sign_update: false,
            inner: InnerSettings {
                iterations: 800,
                schedule: StepSchedule::Adaptive,
                sign_update: false,
                start: None,
            },
            inner_iterations_warm: 200,
            exit_epsilon: Some(DEFAULT_EPSILON),
            exit_polish: 60,
        }
    }

    fn fine_alts() -> Vec<ParameterPoint> {
        grid(&[-3.0, -2.0, -1.0, -0.5, 0.5, 1.0, 2.0, 3.0])
    }

    struct BuildCase {
        problem: GaussianMeanProblem,
        fit: DrawBank,
        verify: DrawBank,
    }

    impl BuildCase {
        /// Small banks: enough for verdicts with a comfortable margin, not
        /// for borderline ones. The returned multiplier's size error scales
        /// like the dual's Monte Carlo noise, so near-optimal comparisons at
        /// this draw count can swing a fraction of a percentage point.
        fn new() -> Self {
            BuildCase {
                problem: GaussianMeanProblem,
                fit: DrawBank::generate(41, 60_000, 1, true, true).expect("fit bank"),
                verify: DrawBank::generate(42, 60_000, 1, true, true).expect("verify bank"),
            }
        }

        /// Full-scale banks for verdicts that ride the epsilon boundary.
        fn full() -> Self {
            BuildCase {
                problem: GaussianMeanProblem,
                fit: DrawBank::generate(61, 300_000, 1, true, true).expect("fit bank"),
                verify: DrawBank::generate(62, 300_000, 1, true, true).expect("verify bank"),
            }
        }

        fn inputs<'a>(&'a self, adhoc: &'a dyn AdHocTest) -> BuildInputs<'a> {
            BuildInputs {
                problem: &self.problem,
                adhoc,
                nulls: vec![NullComponent::point(vec![0.0])],
                alt: AlternativeSupport::new(grid(&[-1.0, 1.0])).expect("alt support"),
                init_weights: WeightVector::new(vec![0.5, 0.5]).expect("weights"),
                switching: None,
                alpha: 0.05,
                outer: quick_outer(),
                fit_bank: &self.fit,
                verify_bank: &self.verify,
            }
        }
    }

    #[test]
    fn two_sided_test_is_effectively_optimal() {
        let case = BuildCase::full();
        let adhoc = TwoSidedZTest::level(0.05);
        let thresholds = ThresholdConfig::new(grid(&[0.0]), fine_alts());
        let out = build_ape(case.inputs(&adhoc), &thresholds).expect("build succeeds");
        let (report, test) = (out.report, out.test);

        assert_eq!(
            report.verdict,
            Verdict::EffectivelyOptimal,
            "two-sided z test should match its own envelope, got {} with violations {:?}",
            report.verdict,
            report.violations
        );
        assert!(
            report.max_size() <= 0.055,
            "verified size {} exceeds alpha + epsilon",
            report.max_size()
        );
        assert!(
            report.min_diff_pp() >= -0.5 && report.max_diff_pp() <= 0.5,
            "diff range [{}, {}]pp should sit inside +/-0.5pp",
            report.min_diff_pp(),
            report.max_diff_pp()
        );
        assert_eq!(report.verdict_recheck(), report.verdict);
        assert_eq!(report.support_points.len(), report.final_weights.len());
        assert_eq!(test.multipliers.len(), report.final_test.multipliers.len());

        // WAP under the fitted weights must fall out of the stored surfaces.
        let w = WeightVector::new(report.final_weights.clone()).expect("weights");
        let (wap_env, wap_adhoc) = report.wap_comparison(&w).expect("wap");
        assert!(
            (wap_env - wap_adhoc).abs() <= 0.005,
            "optimal verdict but WAPs differ: {} vs {}",
            wap_env,
            wap_adhoc
        );

        let json = serde_json::to_string(&report).expect("report serializes");
        let back: ApeReport = serde_json::from_str(&json).expect("report deserializes");
        assert_eq!(back.verdict_recheck(), report.verdict);

        // The report plus the run's initial nulls must reproduce the test.
        let rebuilt = back
            .rebuild_test(vec![NullComponent::point(vec![0.0])], None)
            .expect("rebuild from the stored report");
        assert_eq!(
            rebuilt.multipliers.as_slice(),
            test.multipliers.as_slice(),
            "rebuilt multipliers must match the live test"
        );
        assert_eq!(
            rebuilt.weights.as_slice(),
            test.weights.as_slice(),
            "rebuilt weights must match the live test"
        );
        let wrong = back.rebuild_test(vec![NullComponent::point(vec![1.0, 1.0])], None);
        assert!(
            wrong.is_err(),
            "mismatched null support must be rejected, got {:?}",
            wrong.map(|t| t.nulls.len())
        );
    }

    #[test]
    fn undersized_test_is_effectively_dominated() {
        // A two-sided test run at level 0.03 stays level-0.05 valid but
        // wastes size, so the envelope beats it across the board.
        let case = BuildCase::new();
        let adhoc = TwoSidedZTest::level(0.03);
        let thresholds = ThresholdConfig::new(grid(&[0.0]), fine_alts());
        let report = build_ape(case.inputs(&adhoc), &thresholds).expect("build succeeds").report;

        assert_eq!(
            report.verdict,
            Verdict::EffectivelyDominated,
            "wasteful test should be dominated, got {} with violations {:?}",
            report.verdict,
            report.violations
        );
        assert!(
            report.max_diff_pp() > 0.5,
            "domination needs a gap above 0.5pp, max diff {}pp",
            report.max_diff_pp()
        );
        assert!(
            report.min_diff_pp() >= -0.5,
            "envelope should never trail, min diff {}pp",
            report.min_diff_pp()
        );
        assert_eq!(report.verdict_recheck(), report.verdict);
    }

    #[test]
    fn alt_refinement_grows_the_support_from_a_vertex() {
        // Start with only the positive alternative: the one-sided fit is
        // blind on the negative side, so verification must pull negative
        // points into the support until the build balances out.
        let case = BuildCase::full();
        let adhoc = TwoSidedZTest::level(0.05);
        let thresholds = ThresholdConfig::new(grid(&[0.0]), fine_alts());
        let inputs = BuildInputs {
            alt: AlternativeSupport::new(grid(&[1.0])).expect("alt support"),
            init_weights: WeightVector::new(vec![1.0]).expect("weights"),
            ..case.inputs(&adhoc)
        };
        let report = build_ape(inputs, &thresholds).expect("build succeeds").report;

        assert!(
            !report.refinements.is_empty(),
            "vertex start must trigger at least one refinement"
        );
        assert!(
            report
                .refinements
                .iter()
                .all(|r| r.target == RefinementTarget::Alt),
            "only alternative refinements expected here"
        );
        assert!(
            report.support_points.len() > 1,
            "support should have grown beyond the single start point"
        );
        assert!(
            report.support_points.iter().any(|c| c[0] < 0.0),
            "refinement should have added a negative alternative"
        );
        let supports: Vec<usize> = report
            .refinements
            .iter()
            .scan(1usize, |acc, r| {
                *acc += r.added.len();
                Some(*acc)
            })
            .collect();
        assert!(
            supports.windows(2).all(|w| w[0] <= w[1]),
            "support size must grow monotonically"
        );
        assert_eq!(
            report.support_points.len(),
            *supports.last().expect("at least one refinement"),
            "refinement records must account for the final support size"
        );
        assert_eq!(
            report.verdict,
            Verdict::EffectivelyOptimal,
            "build should converge after refinement, violations {:?}",
            report.violations
        );
    }

    #[test]
    fn refinement_budget_zero_reports_inconclusive() {
        let case = BuildCase::new();
        let adhoc = TwoSidedZTest::level(0.05);
        let mut thresholds = ThresholdConfig::new(grid(&[0.0]), fine_alts());
        thresholds.max_refinements = 0;
        let inputs = BuildInputs {
            alt: AlternativeSupport::new(grid(&[1.0])).expect("alt support"),
            init_weights: WeightVector::new(vec![1.0]).expect("weights"),
            ..case.inputs(&adhoc)
        };
        let report = build_ape(inputs, &thresholds).expect("build succeeds").report;

        assert_eq!(
            report.verdict,
            Verdict::Inconclusive,
            "no refinement budget must not silently succeed"
        );
        assert!(
            !report.violations.is_empty(),
            "inconclusive verdict must carry its violating points"
        );
        assert!(report.refinements.is_empty(), "no rounds were allowed");
    }

    #[test]
    fn shared_bank_seed_is_rejected() {
        let case = BuildCase::new();
        let adhoc = TwoSidedZTest::level(0.05);
        let thresholds = ThresholdConfig::new(grid(&[0.0]), fine_alts());
        let inputs = BuildInputs {
            verify_bank: &case.fit,
            ..case.inputs(&adhoc)
        };
        let err = build_ape(inputs, &thresholds).expect_err("shared seed must fail");
        assert!(
            err.to_string().contains("seed"),
            "error should mention the seed: {err}"
        );
    }

    #[test]
    fn fine_grid_membership_is_validated() {
        let case = BuildCase::new();
        let adhoc = TwoSidedZTest::level(0.05);
        // 0.0 is a null point, not an alternative.
        let thresholds = ThresholdConfig::new(grid(&[0.0]), grid(&[0.0, 1.0]));
        let err = build_ape(case.inputs(&adhoc), &thresholds)
            .expect_err("null point in the alt grid must fail");
        assert!(
            err.to_string().contains("alternative"),
            "error should name the offending grid: {err}"
        );
    }
}
