//! Projected subgradient loop over the alternative-weight simplex.
//!
//! For each weight iterate the inner loop produces the approximately
//! WAP-maximizing test; the vector of power gaps between that test and the
//! ad hoc test is a subgradient of the minimax objective, and descending it
//! steers the weights toward the least favorable alternative weighting for
//! the ad hoc test. Inner runs after the first are warm-started from the
//! previous iteration's multipliers, since the weights move slowly.

use crate::bank::DrawBank;
use crate::engine::LoopEvaluator;
use crate::error::{Error, Result};
use crate::inner::{run_inner_loop, InnerSettings, MultiplierVector, NpTest, StepSchedule};
use crate::problem::{
    AdHocTest, AlternativeSupport, NullComponent, SwitchingRule, TestingProblem,
};
use crate::simplex::{project_simplex, WeightVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug)]
pub struct OuterSettings {
    pub iterations: usize,
    pub schedule: StepSchedule,
    /// Per-coordinate sign steps instead of the normalized gap vector.
    pub sign_update: bool,
    /// Settings for the first (cold) inner run.
    pub inner: InnerSettings,
    /// Iterations for warm-started inner runs after the first; the
    /// multipliers carry over from the previous outer iteration.
    pub inner_iterations_warm: usize,
    /// Certify an iterate once every size is at most alpha + epsilon and
    /// every power gap is at least -epsilon on the fit bank. None runs all
    /// iterations and returns the best-objective iterate.
    pub exit_epsilon: Option<f64>,
    /// Extra iterations after the first certified iterate. The first
    /// certificate typically fires with the binding gap sitting exactly at
    /// -epsilon, where independent verification noise can push it under;
    /// polishing returns the best-objective certified iterate instead, which
    /// sits near the saddle with its gaps equalized away from the boundary.
    pub exit_polish: usize,
}

impl Default for OuterSettings {
    fn default() -> Self {
        let inner = InnerSettings::default();
        // Warm runs keep the full budget by default; at the adaptive floor
        // step the multipliers can only travel iterations * 1e-4 per outer
        // iteration, and a short budget loses track of the moving optimum.
        let warm = inner.iterations;
        OuterSettings {
            iterations: 1000,
            schedule: StepSchedule::Adaptive,
            sign_update: false,
            inner,
            inner_iterations_warm: warm,
            exit_epsilon: None,
            exit_polish: 100,
        }
    }
}

/// Iteration history of one outer run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OuterTrace {
    /// Weight iterates, one row per iteration.
    pub weights: Vec<Vec<f64>>,
    /// Power-gap vectors (candidate minus ad hoc, per alternative point).
    pub gaps: Vec<Vec<f64>>,
    /// Objective estimates sum_j w_j gap_j.
    pub objectives: Vec<f64>,
    /// Running minimum of `objectives`.
    pub best_values: Vec<f64>,
    /// Iterate the returned test comes from.
    pub returned_index: usize,
    /// True when the exit rule fired before the iteration budget.
    pub exit_satisfied: bool,
}

pub struct OuterResult {
    pub test: NpTest,
    pub weights: WeightVector,
    pub trace: OuterTrace,
    /// Fit-bank sizes of the returned test at each null component.
    pub sizes: Vec<f64>,
    /// Fit-bank powers of the returned test at each alternative point.
    pub powers: Vec<f64>,
    /// Fit-bank powers of the ad hoc test at each alternative point.
    pub adhoc_powers: Vec<f64>,
}

/// Power gap vector between a fitted test and the ad hoc test over the
/// alternative support, with common random numbers.
pub fn power_gap_vector(
    problem: &dyn TestingProblem,
    test: &NpTest,
    adhoc: &dyn AdHocTest,
    alt: &AlternativeSupport,
    bank: &DrawBank,
) -> Vec<f64> {
    let fitted = |y: &[f64]| test.decide(problem, y);
    let adhoc_fn = |y: &[f64]| adhoc.decide(y);
    let a = crate::mc::power_curve(problem, &alt.points, &fitted, bank);
    let b = crate::mc::power_curve(problem, &alt.points, &adhoc_fn, bank);
    a.iter().zip(&b).map(|(x, y)| x.value - y.value).collect()
}

/// Run the outer loop: subgradient descent on the weights with one inner
/// run per iteration.
#[allow(clippy::too_many_arguments)]
pub fn run_outer(
    problem: &dyn TestingProblem,
    nulls: &[NullComponent],
    alt: &AlternativeSupport,
    init_weights: &WeightVector,
    switching: Option<&SwitchingRule>,
    adhoc: &dyn AdHocTest,
    bank: &DrawBank,
    alpha: f64,
    settings: &OuterSettings,
) -> Result<OuterResult> {
    if init_weights.len() != alt.len() {
        return Err(Error::Dimension {
            expected: alt.len(),
            got: init_weights.len(),
            context: "initial alternative weights".into(),
        });
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Config("alpha must lie in (0, 1)".into()));
    }
    if settings.iterations == 0 || settings.inner_iterations_warm == 0 {
        return Err(Error::Config("outer loop needs positive iteration counts".into()));
    }

    let mut evaluator =
        LoopEvaluator::new(problem, nulls, &alt.points, switching, Some(adhoc), bank)?;
    let adhoc_powers = evaluator.adhoc_powers().to_vec();
    let m1 = alt.len();
    let lipschitz = (m1 as f64).sqrt();

    let mut trace = OuterTrace {
        weights: Vec::with_capacity(settings.iterations + 1),
        gaps: Vec::with_capacity(settings.iterations + 1),
        objectives: Vec::with_capacity(settings.iterations + 1),
        best_values: Vec::with_capacity(settings.iterations + 1),
        returned_index: 0,
        exit_satisfied: false,
    };

    let mut w = init_weights.as_slice().to_vec();
    // A caller-provided start acts as a warm iterate: the first inner run
    // then gets the warm budget, not the cold one.
    let mut warm: Option<MultiplierVector> = settings.inner.start.clone();
    let mut best = f64::INFINITY;
    let mut returned: Option<(Vec<f64>, MultiplierVector, Vec<f64>, Vec<f64>)> = None;
    let mut certified: Option<(usize, f64)> = None;
    let mut certified_state: Option<(Vec<f64>, MultiplierVector, Vec<f64>, Vec<f64>)> = None;
    let mut polish_left: Option<usize> = None;

    for k in 0..=settings.iterations {
        evaluator.set_weights(&w);
        let inner_settings = InnerSettings {
            iterations: if warm.is_none() {
                settings.inner.iterations
            } else {
                settings.inner_iterations_warm
            },
            schedule: settings.inner.schedule,
            sign_update: settings.inner.sign_update,
            start: warm.clone(),
        };
        let (lam, _) = run_inner_loop(&evaluator, alpha, &inner_settings)?;
        let (sizes, powers) = evaluator.sizes_and_powers(lam.as_slice());
        let gaps: Vec<f64> = powers
            .iter()
            .zip(&adhoc_powers)
            .map(|(p, a)| p - a)
            .collect();
        let objective: f64 = w.iter().zip(&gaps).map(|(wi, gi)| wi * gi).sum();

        trace.weights.push(w.clone());
        trace.gaps.push(gaps.clone());
        trace.objectives.push(objective);
        if objective < best {
            best = objective;
            trace.returned_index = k;
            returned = Some((w.clone(), lam.clone(), sizes.clone(), powers.clone()));
        }
        trace.best_values.push(best);

        if let Some(eps) = settings.exit_epsilon {
            let size_ok = sizes.iter().all(|s| *s <= alpha + eps);
            let gap_ok = gaps.iter().all(|g| *g >= -eps);
            if size_ok && gap_ok {
                if certified.is_none_or(|(_, obj)| objective < obj) {
                    certified = Some((k, objective));
                    certified_state =
                        Some((w.clone(), lam.clone(), sizes.clone(), powers.clone()));
                }
                if polish_left.is_none() {
                    polish_left = Some(settings.exit_polish);
                }
            }
        }
        match polish_left {
            Some(0) => break,
            Some(p) => polish_left = Some(p - 1),
            None => {}
        }
        if k == settings.iterations {
            break;
        }

        let norm = gaps.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > 0.0 {
            let min_gap = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
            let h = settings.schedule.step(-min_gap, lipschitz);
            let moved: Vec<f64> = w
                .iter()
                .zip(&gaps)
                .map(|(wi, gi)| {
                    let dir = if settings.sign_update {
                        if *gi > 0.0 {
                            1.0
                        } else if *gi < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    } else {
                        gi / norm
                    };
                    wi - h * dir
                })
                .collect();
            w = project_simplex(&moved).as_slice().to_vec();
        }
        // A zero gap vector leaves the weights unchanged and iteration
        // continues: the inner solution may still move through warm starts.
        warm = Some(lam);
    }

    if let Some((idx, _)) = certified {
        trace.exit_satisfied = true;
        trace.returned_index = idx;
    }
    let (w_ret, lam_ret, sizes, powers) = certified_state
        .or(returned)
        .expect("outer loop records at least one iterate");
    let weights = WeightVector::new(w_ret)?;
    let test = NpTest {
        weights: weights.clone(),
        alt: alt.clone(),
        multipliers: lam_ret,
        nulls: nulls.to_vec(),
        switching: switching.cloned(),
        alpha,
    };
    Ok(OuterResult {
        test,
        weights,
        trace,
        sizes,
        powers,
        adhoc_powers,
    })
}
