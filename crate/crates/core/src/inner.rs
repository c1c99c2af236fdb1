//! Dual subgradient loop: for fixed alternative weights, find Lagrange
//! multipliers on the null components so that the implied likelihood-ratio
//! test maximizes weighted average power subject to size control.
//!
//! The candidate test rejects when the weighted alternative mixture density
//! is at least the multiplier-weighted null mixture density (both relative
//! to the reference), with an optional switching region handled first. The
//! dual objective wap - sum_i lam_i (size_i - alpha) is minimized over
//! nonnegative multipliers by projected subgradient steps; the returned
//! iterate is the one with the best (lowest) dual value, which the
//! subgradient method bounds, not the last one.

use crate::bank::DrawBank;
use crate::engine::LoopEvaluator;
use crate::error::{Error, Result};
use crate::problem::{
    log_component_ratio, AlternativeSupport, NullComponent, SwitchingRule, TestingProblem,
};
use crate::simplex::WeightVector;
use crate::util::logsumexp;
use serde::{Deserialize, Serialize};

/// Nonnegative Lagrange multipliers, one per null component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplierVector(Vec<f64>);

impl MultiplierVector {
    pub fn new(lam: Vec<f64>) -> Result<Self> {
        if lam.is_empty() {
            return Err(Error::Empty("multiplier vector".into()));
        }
        if lam.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(
                "multipliers must be finite and nonnegative".into(),
            ));
        }
        Ok(MultiplierVector(lam))
    }

    pub fn zeros(m: usize) -> Self {
        MultiplierVector(vec![0.0; m])
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

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Step-size rule shared by both subgradient loops. `Adaptive` keys on the
/// violation magnitude (largest positive size excess for the inner loop,
/// largest negative power gap for the outer loop): 0.01 above 0.02, 0.001
/// above 0.002, 0.0001 otherwise. `GapTarget` is the constant step that
/// drives the theoretical gap bound to `epsilon`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StepSchedule {
    Constant { h: f64 },
    Adaptive,
    GapTarget { epsilon: f64 },
}

impl StepSchedule {
    /// Step size given the current violation magnitude and the loop's
    /// Lipschitz-style constant (sqrt(M0 max{alpha, 1-alpha}) inner,
    /// sqrt(M1) outer).
    pub(crate) fn step(&self, violation: f64, lipschitz: f64) -> f64 {
        match *self {
            StepSchedule::Constant { h } => h,
            StepSchedule::Adaptive => {
                if violation > 0.02 {
                    0.01
                } else if violation > 0.002 {
                    0.001
                } else {
                    0.0001
                }
            }
            StepSchedule::GapTarget { epsilon } => epsilon / lipschitz,
        }
    }
}

#[derive(Clone, Debug)]
pub struct InnerSettings {
    pub iterations: usize,
    pub schedule: StepSchedule,
    /// Replace tau/|tau| with per-coordinate signs. Off by default; the
    /// normalized full vector matches the convergence analysis.
    pub sign_update: bool,
    /// Warm-start multipliers; zeros when absent.
    pub start: Option<MultiplierVector>,
}

impl Default for InnerSettings {
    fn default() -> Self {
        InnerSettings {
            iterations: 1000,
            schedule: StepSchedule::Adaptive,
            sign_update: false,
            start: None,
        }
    }
}

/// Iteration history of one inner run. Index k covers the initial iterate
/// (k = 0) through the last one evaluated.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualTrace {
    /// Dual objective at each iterate.
    pub dual_values: Vec<f64>,
    /// Running minimum of `dual_values`.
    pub best_values: Vec<f64>,
    /// Step size used to leave iterate k (one shorter than dual_values
    /// unless the loop stopped on a zero subgradient).
    pub step_sizes: Vec<f64>,
    /// Euclidean norm of the size-violation vector at each iterate.
    pub grad_norms: Vec<f64>,
    /// Per-component sizes at each iterate.
    pub sizes: Vec<Vec<f64>>,
    pub best_index: usize,
    pub best_multipliers: MultiplierVector,
    /// True when the loop hit an exactly zero subgradient and stopped.
    pub stopped_early: bool,
}

/// The fitted test: weighted alternative mixture against multiplier-weighted
/// null mixture, with the switching region decided by the standard test.
#[derive(Clone, Debug)]
pub struct NpTest {
    pub weights: WeightVector,
    pub alt: AlternativeSupport,
    pub multipliers: MultiplierVector,
    pub nulls: Vec<NullComponent>,
    pub switching: Option<SwitchingRule>,
    pub alpha: f64,
}

impl NpTest {
    /// Decide one observation: 1 rejects. The mixture comparison rejects on
    /// equality; switching takes precedence over the mixture comparison.
    pub fn decide(&self, problem: &dyn TestingProblem, y: &[f64]) -> f64 {
        if let Some(rule) = &self.switching {
            if rule.applies(y) {
                return rule.standard_test.decide(y);
            }
        }
        let mut terms = Vec::with_capacity(self.weights.len());
        for (w, theta) in self.weights.as_slice().iter().zip(&self.alt.points) {
            if *w > 0.0 {
                terms.push(w.ln() + problem.log_ratio(theta, y));
            }
        }
        let num = logsumexp(&terms);
        if num >= self.log_null_mixture(problem, y) {
            1.0
        } else {
            0.0
        }
    }

    /// log sum_i lam_i f~_i(y) / f_ref(y); -inf when all multipliers are 0.
    fn log_null_mixture(&self, problem: &dyn TestingProblem, y: &[f64]) -> f64 {
        let lam = self.multipliers.as_slice();
        let stat = problem.null_stat(y);
        let mut terms = Vec::with_capacity(lam.len());
        for (l, comp) in lam.iter().zip(&self.nulls) {
            if *l > 0.0 {
                let r = stat
                    .and_then(|s| problem.log_null_ratio_at(comp, s))
                    .unwrap_or_else(|| log_component_ratio(problem, comp, y));
                terms.push(l.ln() + r);
            }
        }
        logsumexp(&terms)
    }

    /// Critical-value form: cv = sum of multipliers, least favorable null
    /// weights lam_i / cv. Errors when every multiplier is zero.
    pub fn to_neyman_pearson(&self) -> Result<(f64, Vec<f64>)> {
        let cv = self.multipliers.sum();
        if cv <= 0.0 {
            return Err(Error::ZeroMultipliers);
        }
        let lfd = self.multipliers.as_slice().iter().map(|l| l / cv).collect();
        Ok((cv, lfd))
    }
}

/// Dual objective of one multiplier vector: the test's weighted average
/// power minus sum_i lam_i (size_i - alpha), estimated on the bank through
/// the exact decision rule.
pub fn dual_value(
    problem: &dyn TestingProblem,
    nulls: &[NullComponent],
    alt: &AlternativeSupport,
    weights: &WeightVector,
    multipliers: &MultiplierVector,
    switching: Option<&SwitchingRule>,
    bank: &DrawBank,
    alpha: f64,
) -> Result<f64> {
    let test = NpTest {
        weights: weights.clone(),
        alt: alt.clone(),
        multipliers: multipliers.clone(),
        nulls: nulls.to_vec(),
        switching: switching.cloned(),
        alpha,
    };
    let decide = |y: &[f64]| test.decide(problem, y);
    let wap = crate::mc::wap(problem, weights, alt, &decide, bank);
    let mut value = wap;
    for (l, comp) in multipliers.as_slice().iter().zip(nulls) {
        if *l > 0.0 {
            let size = crate::mc::rejection_probability(
                problem,
                crate::mc::EvalTarget::Component(comp),
                &decide,
                bank,
            );
            value -= l * (size.value - alpha);
        }
    }
    Ok(value)
}

/// Inner loop over a prepared evaluator (weights already installed).
pub(crate) fn run_inner_loop(
    evaluator: &LoopEvaluator<'_>,
    alpha: f64,
    settings: &InnerSettings,
) -> Result<(MultiplierVector, DualTrace)> {
    if settings.iterations == 0 {
        return Err(Error::Config("inner loop needs at least 1 iteration".into()));
    }
    let m0 = evaluator.m0();
    if let Some(start) = &settings.start {
        if start.len() != m0 {
            return Err(Error::Dimension {
                expected: m0,
                got: start.len(),
                context: "warm-start multipliers".into(),
            });
        }
    }
    let lipschitz = (m0 as f64 * alpha.max(1.0 - alpha)).sqrt();
    let mut lam: Vec<f64> = settings
        .start
        .as_ref()
        .map(|s| s.as_slice().to_vec())
        .unwrap_or_else(|| vec![0.0; m0]);

    let mut trace = DualTrace {
        dual_values: Vec::with_capacity(settings.iterations + 1),
        best_values: Vec::with_capacity(settings.iterations + 1),
        step_sizes: Vec::with_capacity(settings.iterations),
        grad_norms: Vec::with_capacity(settings.iterations + 1),
        sizes: Vec::with_capacity(settings.iterations + 1),
        best_index: 0,
        best_multipliers: MultiplierVector::zeros(m0),
        stopped_early: false,
    };
    let mut best = f64::INFINITY;

    for k in 0..=settings.iterations {
        let out = evaluator.evaluate(&lam);
        let tau: Vec<f64> = out.sizes.iter().map(|s| s - alpha).collect();
        let dual = out.wap - lam.iter().zip(&tau).map(|(l, t)| l * t).sum::<f64>();
        let norm = tau.iter().map(|t| t * t).sum::<f64>().sqrt();

        trace.dual_values.push(dual);
        if dual < best {
            best = dual;
            trace.best_index = k;
            trace.best_multipliers = MultiplierVector(lam.clone());
        }
        trace.best_values.push(best);
        trace.grad_norms.push(norm);
        trace.sizes.push(out.sizes);

        if k == settings.iterations {
            break;
        }
        if norm == 0.0 {
            trace.stopped_early = true;
            break;
        }
        let max_tau = tau.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let h = settings.schedule.step(max_tau, lipschitz);
        trace.step_sizes.push(h);
        for (l, t) in lam.iter_mut().zip(&tau) {
            let dir = if settings.sign_update {
                if *t > 0.0 {
                    1.0
                } else if *t < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            } else {
                t / norm
            };
            *l = (*l + h * dir).max(0.0);
        }
    }
    let best_lam = trace.best_multipliers.clone();
    Ok((best_lam, trace))
}

/// Run the inner loop from scratch for one weight vector.
#[allow(clippy::too_many_arguments)]
pub fn run_inner(
    problem: &dyn TestingProblem,
    nulls: &[NullComponent],
    alt: &AlternativeSupport,
    weights: &WeightVector,
    switching: Option<&SwitchingRule>,
    bank: &DrawBank,
    alpha: f64,
    settings: &InnerSettings,
) -> Result<(NpTest, DualTrace)> {
    if weights.len() != alt.len() {
        return Err(Error::Dimension {
            expected: alt.len(),
            got: weights.len(),
            context: "alternative weights".into(),
        });
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Config("alpha must lie in (0, 1)".into()));
    }
    let mut evaluator = LoopEvaluator::new(problem, nulls, &alt.points, switching, None, bank)?;
    evaluator.set_weights(weights.as_slice());
    let (best, trace) = run_inner_loop(&evaluator, alpha, settings)?;
    let test = NpTest {
        weights: weights.clone(),
        alt: alt.clone(),
        multipliers: best,
        nulls: nulls.to_vec(),
        switching: switching.cloned(),
        alpha,
    };
    Ok((test, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::{rejection_probability, EvalTarget};
    use crate::problem::ParameterPoint;
    use crate::problems::gaussian::{two_sided_power, GaussianMeanProblem};
    use crate::util::norm_quantile;

    fn gaussian_setup() -> (
        GaussianMeanProblem,
        Vec<NullComponent>,
        AlternativeSupport,
        DrawBank,
    ) {
        let problem = GaussianMeanProblem;
        let nulls = vec![NullComponent::point(vec![0.0])];
        let alt = AlternativeSupport::new(vec![
            ParameterPoint::new(vec![-1.0]),
            ParameterPoint::new(vec![1.0]),
        ])
        .unwrap();
        let bank = DrawBank::generate(11, 120_000, 1, true, true).unwrap();
        (problem, nulls, alt, bank)
    }

    #[test]
    fn recovers_two_sided_test_on_symmetric_problem() {
        let (problem, nulls, alt, bank) = gaussian_setup();
        let weights = WeightVector::uniform(2);
        let settings = InnerSettings::default();
        let (test, trace) =
            run_inner(&problem, &nulls, &alt, &weights, None, &bank, 0.05, &settings).unwrap();

        let decide = |y: &[f64]| test.decide(&problem, y);
        let size = rejection_probability(&problem, EvalTarget::Component(&nulls[0]), &decide, &bank);
        assert!(
            (0.047..=0.053).contains(&size.value),
            "fitted size {} outside [0.047, 0.053]",
            size.value
        );

        // Agreement with the known optimal test on at least 99.5% of draws.
        let z = norm_quantile(0.975);
        let obs = crate::mc::observations_for_target(
            &problem,
            EvalTarget::Component(&nulls[0]),
            &bank,
        );
        let agree = obs
            .chunks(1)
            .filter(|y| (decide(y) == 1.0) == (y[0].abs() > z))
            .count();
        let rate = agree as f64 / bank.n() as f64;
        assert!(rate >= 0.995, "agreement with |y| > z only {rate}");

        // Dual optimum approximates the optimal test's weighted power.
        let want = two_sided_power(1.0, 0.05);
        let got = trace.best_values.last().unwrap();
        assert!(
            (got - want).abs() < 0.01,
            "dual optimum {got} vs analytic WAP {want}"
        );
    }

    #[test]
    fn best_values_are_monotone_and_match_dual_values() {
        let (problem, nulls, alt, bank) = gaussian_setup();
        let weights = WeightVector::uniform(2);
        let settings = InnerSettings {
            iterations: 120,
            ..InnerSettings::default()
        };
        let (_, trace) =
            run_inner(&problem, &nulls, &alt, &weights, None, &bank, 0.05, &settings).unwrap();
        let mut running = f64::INFINITY;
        for (k, (d, b)) in trace.dual_values.iter().zip(&trace.best_values).enumerate() {
            running = running.min(*d);
            assert_eq!(running, *b, "best-so-far mismatch at iterate {k}");
        }
        assert_eq!(
            trace.dual_values[trace.best_index], *trace.best_values.last().unwrap(),
            "best index must point at the minimum"
        );
    }

    #[test]
    fn zero_multipliers_give_dual_value_one_without_switching() {
        let (problem, nulls, alt, bank) = gaussian_setup();
        let weights = WeightVector::uniform(2);
        let v = dual_value(
            &problem,
            &nulls,
            &alt,
            &weights,
            &MultiplierVector::zeros(1),
            None,
            &bank,
            0.05,
        )
        .unwrap();
        assert_eq!(v, 1.0, "always-reject test has WAP 1 and no penalty");
    }

    #[test]
    fn neyman_pearson_form_splits_cv_and_lfd() {
        let (_, nulls, alt, _) = gaussian_setup();
        let test = NpTest {
            weights: WeightVector::uniform(2),
            alt,
            multipliers: MultiplierVector::new(vec![2.0]).unwrap(),
            nulls,
            switching: None,
            alpha: 0.05,
        };
        let (cv, lfd) = test.to_neyman_pearson().unwrap();
        assert_eq!(cv, 2.0);
        assert_eq!(lfd, vec![1.0]);

        let zero = NpTest {
            multipliers: MultiplierVector::zeros(1),
            ..test
        };
        assert!(zero.to_neyman_pearson().is_err(), "zero multipliers have no cv form");
    }

    #[test]
    fn fitted_region_is_a_two_sided_interval_complement() {
        // Monotone likelihood ratio in |y| forces the rejection region to be
        // the complement of an interval around zero.
        let (problem, nulls, alt, bank) = gaussian_setup();
        let weights = WeightVector::uniform(2);
        let settings = InnerSettings {
            iterations: 400,
            ..InnerSettings::default()
        };
        let (test, _) =
            run_inner(&problem, &nulls, &alt, &weights, None, &bank, 0.05, &settings).unwrap();
        let decisions: Vec<bool> = (0..2001)
            .map(|i| -5.0 + i as f64 * 0.005)
            .map(|y| test.decide(&problem, &[y]) == 1.0)
            .collect();
        let flips = decisions.windows(2).filter(|w| w[0] != w[1]).count();
        assert!(flips <= 2, "rejection region scan found {flips} boundaries");
    }

    #[test]
    fn sign_update_variant_still_controls_size() {
        let (problem, nulls, alt, bank) = gaussian_setup();
        let weights = WeightVector::uniform(2);
        let settings = InnerSettings {
            iterations: 1000,
            sign_update: true,
            ..InnerSettings::default()
        };
        let (test, _) =
            run_inner(&problem, &nulls, &alt, &weights, None, &bank, 0.05, &settings).unwrap();
        let decide = |y: &[f64]| test.decide(&problem, y);
        let size = rejection_probability(&problem, EvalTarget::Component(&nulls[0]), &decide, &bank);
        assert!(
            (size.value - 0.05).abs() < 0.005,
            "sign-update size {} drifted",
            size.value
        );
    }

    #[test]
    fn warm_start_with_wrong_length_errors() {
        let (problem, nulls, alt, bank) = gaussian_setup();
        let weights = WeightVector::uniform(2);
        let settings = InnerSettings {
            start: Some(MultiplierVector::zeros(3)),
            ..InnerSettings::default()
        };
        assert!(run_inner(&problem, &nulls, &alt, &weights, None, &bank, 0.05, &settings).is_err());
    }
}
