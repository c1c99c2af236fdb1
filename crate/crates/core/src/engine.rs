//! Shared Monte Carlo evaluation engine for the subgradient loops.
//!
//! Each loop iteration needs rejection probabilities of the current
//! candidate test at every null component and alternative point. The
//! candidate test compares a weighted alternative mixture (numerator, fixed
//! while the multipliers move) against a multiplier-weighted null mixture
//! (denominator, changing every iteration), with an optional switching
//! region decided by the standard test. This module caches everything that
//! does not change per iteration:
//!
//! * per-target observations, restricted to non-switched draws,
//! * the standard test's aggregate decision over switched draws,
//! * per-draw numerator log mixtures (rebuilt when the outer weights move),
//! * the scalar null statistic per draw plus each null component's log
//!   ratio tabulated on a uniform knot grid, so a single cubic table per
//!   iteration replaces per-draw mixture sums over null components.
//!
//! The knot table introduces interpolation error around 1e-9 on log
//! densities, which only affects draws whose numerator and denominator are
//! that close; fitted multipliers are unaffected at reporting precision.
//! Everything reported outside the fit loop is recomputed exactly through
//! the returned test's decision rule. Problems without a scalar null
//! statistic fall back to exact per-draw null ratio matrices.

use crate::bank::DrawBank;
use crate::error::{Error, Result};
use crate::mc::{observations_for_target, EvalTarget};
use crate::problem::{
    log_component_ratio, AdHocTest, NullComponent, ParameterPoint, SwitchingRule, TestingProblem,
};
use crate::util::{det_mean, det_sum, logsumexp, UniformCubicTable};
use rayon::prelude::*;

/// Knots for the per-iteration null-mixture table.
const KNOT_COUNT: usize = 4096;

/// Rows per scratch chunk when rebuilding numerator mixtures.
const NUM_CHUNK: usize = 1024;

pub(crate) struct EngineOutput {
    /// Rejection probability at each null component.
    pub sizes: Vec<f64>,
    /// Weighted average power under the current weights.
    pub wap: f64,
}

struct TargetCache {
    /// Non-switched observation rows, row-major.
    obs: Vec<f64>,
    /// Scalar null statistic per kept row (knot path only).
    stat: Vec<f64>,
    /// Exact null log ratios, kept x m0 row-major (fallback path only).
    ratios: Vec<f64>,
    /// log sum_j w_j exp(r_j) per kept row; valid after set_weights.
    log_num: Vec<f64>,
    /// Standard-test rejection mass over switched draws.
    switch_reject_sum: f64,
    kept: usize,
}

struct KnotBasis {
    x0: f64,
    dx: f64,
    /// Per null component: log ratio at each knot.
    rho: Vec<Vec<f64>>,
}

pub(crate) struct LoopEvaluator<'a> {
    problem: &'a dyn TestingProblem,
    nulls: &'a [NullComponent],
    alts: &'a [ParameterPoint],
    switching: Option<&'a SwitchingRule>,
    bank: &'a DrawBank,
    targets: Vec<TargetCache>,
    knots: Option<KnotBasis>,
    weights: Vec<f64>,
    weights_set: bool,
    adhoc_sizes: Vec<f64>,
    adhoc_powers: Vec<f64>,
}

enum Denominator<'t> {
    /// All multipliers zero: the comparison test rejects everywhere.
    NegInf,
    Table(UniformCubicTable),
    Exact(&'t [f64]),
}

impl<'a> LoopEvaluator<'a> {
    pub fn new(
        problem: &'a dyn TestingProblem,
        nulls: &'a [NullComponent],
        alts: &'a [ParameterPoint],
        switching: Option<&'a SwitchingRule>,
        adhoc: Option<&'a dyn AdHocTest>,
        bank: &'a DrawBank,
    ) -> Result<Self> {
        if nulls.is_empty() || alts.is_empty() {
            return Err(Error::Config(
                "loop evaluator needs at least one null component and one alternative point"
                    .into(),
            ));
        }
        if bank.dim() != problem.base_dim() {
            return Err(Error::Config(format!(
                "bank row dimension {} does not match the problem's base dimension {}",
                bank.dim(),
                problem.base_dim()
            )));
        }

        // The knot path applies when the problem factors every null
        // component's ratio through a scalar statistic.
        let probe = {
            let mut y = vec![0.0f64; problem.obs_dim()];
            problem.sample(bank.row(0), &problem.reference_point(), &mut y);
            y
        };
        let use_knots = match problem.null_stat(&probe) {
            Some(s) => nulls.iter().all(|c| problem.log_null_ratio_at(c, s).is_some()),
            None => false,
        };

        let d = problem.obs_dim();
        let m0 = nulls.len();
        let mut adhoc_sizes = Vec::with_capacity(m0);
        let mut adhoc_powers = Vec::with_capacity(alts.len());
        let mut targets = Vec::with_capacity(m0 + alts.len());

        let eval_targets: Vec<EvalTarget<'_>> = nulls
            .iter()
            .map(EvalTarget::Component)
            .chain(alts.iter().map(EvalTarget::Point))
            .collect();
        for target in eval_targets {
            let obs = observations_for_target(problem, target, bank);
            if let Some(adhoc) = adhoc {
                let adhoc_vals: Vec<f64> = obs.par_chunks(d).map(|y| adhoc.decide(y)).collect();
                let adhoc_prob = det_mean(&adhoc_vals);
                if targets.len() < m0 {
                    adhoc_sizes.push(adhoc_prob);
                } else {
                    adhoc_powers.push(adhoc_prob);
                }
            }

            let mut kept_obs = Vec::new();
            let mut stat = Vec::new();
            let mut switched = Vec::new();
            for (m, y) in obs.chunks_exact(d).enumerate() {
                if let Some(rule) = switching {
                    if rule.applies(y) {
                        switched.push(rule.standard_test.decide(y));
                        continue;
                    }
                }
                kept_obs.extend_from_slice(y);
                if use_knots {
                    let s = problem.null_stat(y).ok_or_else(|| Error::NonFinite {
                        context: format!("null statistic of draw {m}"),
                        value: f64::NAN,
                    })?;
                    stat.push(s);
                }
            }
            let kept = kept_obs.len() / d.max(1);
            let ratios = if use_knots {
                Vec::new()
            } else {
                let mut r = vec![0.0f64; kept * m0];
                r.par_chunks_mut(m0)
                    .zip(kept_obs.par_chunks(d))
                    .try_for_each(|(row, y)| -> Result<()> {
                        for (i, comp) in nulls.iter().enumerate() {
                            let v = log_component_ratio(problem, comp, y);
                            if v.is_nan() || v == f64::INFINITY {
                                return Err(Error::NonFinite {
                                    context: format!("null ratio at component {}", comp.label),
                                    value: v,
                                });
                            }
                            row[i] = v;
                        }
                        Ok(())
                    })?;
                r
            };
            targets.push(TargetCache {
                obs: kept_obs,
                stat,
                ratios,
                log_num: Vec::new(),
                switch_reject_sum: det_sum(&switched),
                kept,
            });
        }

        let knots = if use_knots {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for t in &targets {
                for &s in &t.stat {
                    lo = lo.min(s);
                    hi = hi.max(s);
                }
            }
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                None // degenerate statistic range; use the exact path
            } else {
                let dx = (hi - lo) / (KNOT_COUNT - 1) as f64;
                let rho: Vec<Vec<f64>> = nulls
                    .par_iter()
                    .map(|comp| {
                        (0..KNOT_COUNT)
                            .map(|k| {
                                problem
                                    .log_null_ratio_at(comp, lo + k as f64 * dx)
                                    .expect("null ratio factorization disappeared mid-build")
                            })
                            .collect()
                    })
                    .collect();
                for (comp, r) in nulls.iter().zip(&rho) {
                    if r.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                        return Err(Error::NonFinite {
                            context: format!("knot table of component {}", comp.label),
                            value: f64::NAN,
                        });
                    }
                }
                Some(KnotBasis { x0: lo, dx, rho })
            }
        } else {
            None
        };

        // A degenerate knot range falls back to exact ratios; fill them now.
        let mut eval = LoopEvaluator {
            problem,
            nulls,
            alts,
            switching,
            bank,
            targets,
            knots,
            weights: vec![0.0; alts.len()],
            weights_set: false,
            adhoc_sizes,
            adhoc_powers,
        };
        if use_knots && eval.knots.is_none() {
            eval.fill_exact_ratios();
        }
        Ok(eval)
    }

    /// Degenerate-statistic fallback: per-draw exact null ratio matrices.
    fn fill_exact_ratios(&mut self) {
        let d = self.problem.obs_dim();
        let m0 = self.nulls.len();
        for t in &mut self.targets {
            let mut r = vec![0.0f64; t.kept * m0];
            let problem = self.problem;
            let nulls = self.nulls;
            r.par_chunks_mut(m0)
                .zip(t.obs.par_chunks(d))
                .for_each(|(row, y)| {
                    for (i, comp) in nulls.iter().enumerate() {
                        row[i] = log_component_ratio(problem, comp, y);
                    }
                });
            t.ratios = r;
            t.stat = Vec::new();
        }
        self.knots = None;
    }

    pub fn m0(&self) -> usize {
        self.nulls.len()
    }

    pub fn m1(&self) -> usize {
        self.alts.len()
    }

    pub fn n(&self) -> usize {
        self.bank.n()
    }

    /// Ad hoc test rejection probability at each alternative point.
    pub fn adhoc_powers(&self) -> &[f64] {
        &self.adhoc_powers
    }

    /// Ad hoc test rejection probability at each null component.
    pub fn adhoc_sizes(&self) -> &[f64] {
        &self.adhoc_sizes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Install alternative weights and rebuild the per-draw numerator
    /// mixtures. The dominant cost of an outer iteration.
    pub fn set_weights(&mut self, weights: &[f64]) {
        assert_eq!(weights.len(), self.alts.len(), "weight length mismatch");
        let active: Vec<(usize, f64)> = weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(j, w)| (j, w.ln()))
            .collect();
        assert!(!active.is_empty(), "weights must have positive mass");
        let d = self.problem.obs_dim();
        let problem = self.problem;
        let alts = self.alts;
        for t in &mut self.targets {
            let mut log_num = vec![0.0f64; t.kept];
            log_num
                .par_chunks_mut(NUM_CHUNK)
                .zip(t.obs.par_chunks(NUM_CHUNK * d))
                .for_each(|(out, rows)| {
                    let k = out.len();
                    let mut scratch = vec![0.0f64; k * active.len()];
                    for (a, (j, _)) in active.iter().enumerate() {
                        problem.log_ratio_batch_fast(
                            &alts[*j],
                            rows,
                            &mut scratch[a * k..(a + 1) * k],
                        );
                    }
                    for (r, o) in out.iter_mut().enumerate() {
                        let mut hi = f64::NEG_INFINITY;
                        for (a, (_, lw)) in active.iter().enumerate() {
                            let v = lw + scratch[a * k + r];
                            scratch[a * k + r] = v;
                            hi = hi.max(v);
                        }
                        let mut sum = 0.0;
                        for a in 0..active.len() {
                            sum += (scratch[a * k + r] - hi).exp();
                        }
                        *o = hi + sum.ln();
                    }
                });
            t.log_num = log_num;
        }
        self.weights = weights.to_vec();
        self.weights_set = true;
    }

    fn denominator<'t>(&self, lam: &'t [f64]) -> Denominator<'t> {
        if lam.iter().all(|&v| v == 0.0) {
            return Denominator::NegInf;
        }
        match &self.knots {
            Some(basis) => {
                let log_lam: Vec<f64> = lam.iter().map(|&v| v.ln()).collect();
                let mut values = Vec::with_capacity(KNOT_COUNT);
                let mut terms = vec![0.0f64; self.nulls.len()];
                for k in 0..KNOT_COUNT {
                    for (i, ll) in log_lam.iter().enumerate() {
                        terms[i] = ll + basis.rho[i][k];
                    }
                    values.push(logsumexp(&terms));
                }
                Denominator::Table(UniformCubicTable::build(basis.x0, basis.dx, values))
            }
            None => Denominator::Exact(lam),
        }
    }

    /// Rejection probability of the multiplier test at target `t`.
    fn target_prob(&self, t: &TargetCache, den: &Denominator<'_>) -> f64 {
        let n = self.bank.n();
        let count = match den {
            Denominator::NegInf => t.kept,
            Denominator::Table(table) => t
                .log_num
                .par_chunks(NUM_CHUNK)
                .zip(t.stat.par_chunks(NUM_CHUNK))
                .map(|(nums, stats)| {
                    nums.iter()
                        .zip(stats)
                        .filter(|(nm, s)| **nm >= table.eval(**s))
                        .count()
                })
                .sum::<usize>(),
            Denominator::Exact(lam) => {
                let m0 = self.nulls.len();
                let log_lam: Vec<f64> = lam.iter().map(|&v| v.ln()).collect();
                t.log_num
                    .par_chunks(NUM_CHUNK)
                    .zip(t.ratios.par_chunks(NUM_CHUNK * m0))
                    .map(|(nums, rows)| {
                        let mut terms = vec![0.0f64; m0];
                        nums.iter()
                            .enumerate()
                            .filter(|(r, nm)| {
                                for i in 0..m0 {
                                    terms[i] = log_lam[i] + rows[r * m0 + i];
                                }
                                **nm >= logsumexp(&terms)
                            })
                            .count()
                    })
                    .sum::<usize>()
            }
        };
        (count as f64 + t.switch_reject_sum) / n as f64
    }

    /// Sizes at every null component plus the weighted average power over
    /// the active alternatives, for one multiplier vector.
    pub fn evaluate(&self, lam: &[f64]) -> EngineOutput {
        assert!(self.weights_set, "set_weights must run before evaluate");
        assert_eq!(lam.len(), self.nulls.len(), "multiplier length mismatch");
        let den = self.denominator(lam);
        let m0 = self.nulls.len();
        let sizes: Vec<f64> = self.targets[..m0]
            .par_iter()
            .map(|t| self.target_prob(t, &den))
            .collect();
        let wap: f64 = self
            .weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(j, w)| w * self.target_prob(&self.targets[m0 + j], &den))
            .sum();
        EngineOutput { sizes, wap }
    }

    /// Power of the multiplier test at every alternative point.
    pub fn powers_full(&self, lam: &[f64]) -> Vec<f64> {
        assert!(self.weights_set, "set_weights must run before powers_full");
        let den = self.denominator(lam);
        let m0 = self.nulls.len();
        self.targets[m0..]
            .par_iter()
            .map(|t| self.target_prob(t, &den))
            .collect()
    }

    /// Sizes and powers at every target under one denominator build.
    pub fn sizes_and_powers(&self, lam: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert!(self.weights_set, "set_weights must run before evaluation");
        let den = self.denominator(lam);
        let m0 = self.nulls.len();
        let all: Vec<f64> = self
            .targets
            .par_iter()
            .map(|t| self.target_prob(t, &den))
            .collect();
        let powers = all[m0..].to_vec();
        let mut sizes = all;
        sizes.truncate(m0);
        (sizes, powers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::AlternativeSupport;
    use crate::problems::gaussian::{GaussianMeanProblem, TwoSidedZTest};

    fn setup() -> (GaussianMeanProblem, Vec<NullComponent>, AlternativeSupport, DrawBank) {
        let problem = GaussianMeanProblem;
        let nulls = vec![NullComponent::point(vec![0.0])];
        let alts = AlternativeSupport::new(vec![
            ParameterPoint::new(vec![-1.0]),
            ParameterPoint::new(vec![1.0]),
        ])
        .unwrap();
        let bank = DrawBank::generate(7, 40_000, 1, true, true).unwrap();
        (problem, nulls, alts, bank)
    }

    #[test]
    fn zero_multipliers_reject_everything() {
        let (problem, nulls, alts, bank) = setup();
        let adhoc = TwoSidedZTest::level(0.05);
        let mut eval =
            LoopEvaluator::new(&problem, &nulls, &alts.points, None, Some(&adhoc), &bank).unwrap();
        eval.set_weights(&[0.5, 0.5]);
        let out = eval.evaluate(&[0.0]);
        assert_eq!(out.sizes[0], 1.0, "zero multipliers must reject all draws");
        assert_eq!(out.wap, 1.0);
    }

    #[test]
    fn engine_matches_direct_mixture_comparison() {
        // Recompute a size by brute force from the decision rule on the
        // same draws; counts must agree exactly.
        let (problem, nulls, alts, bank) = setup();
        let adhoc = TwoSidedZTest::level(0.05);
        let mut eval =
            LoopEvaluator::new(&problem, &nulls, &alts.points, None, Some(&adhoc), &bank).unwrap();
        let w = [0.3, 0.7];
        eval.set_weights(&w);
        let lam = [2.5];
        let out = eval.evaluate(&lam);

        let obs = observations_for_target(&problem, EvalTarget::Component(&nulls[0]), &bank);
        let mut count = 0usize;
        for y in obs.chunks(1) {
            let num = logsumexp(&[
                w[0].ln() + problem.log_ratio(&alts.points[0], y),
                w[1].ln() + problem.log_ratio(&alts.points[1], y),
            ]);
            let den = lam[0].ln() + problem.log_ratio(&ParameterPoint::new(vec![0.0]), y);
            if num >= den {
                count += 1;
            }
        }
        let direct = count as f64 / bank.n() as f64;
        assert!(
            (out.sizes[0] - direct).abs() < 1e-12,
            "engine size {} vs direct {}",
            out.sizes[0],
            direct
        );
    }

    #[test]
    fn wap_consistent_with_powers_full() {
        let (problem, nulls, alts, bank) = setup();
        let adhoc = TwoSidedZTest::level(0.05);
        let mut eval =
            LoopEvaluator::new(&problem, &nulls, &alts.points, None, Some(&adhoc), &bank).unwrap();
        let w = [0.25, 0.75];
        eval.set_weights(&w);
        let lam = [3.0];
        let out = eval.evaluate(&lam);
        let powers = eval.powers_full(&lam);
        let wap: f64 = w.iter().zip(&powers).map(|(a, b)| a * b).sum();
        assert!(
            (out.wap - wap).abs() < 1e-15,
            "wap {} vs recomputed {}",
            out.wap,
            wap
        );
    }

    #[test]
    fn adhoc_power_matches_mc_helper() {
        let (problem, nulls, alts, bank) = setup();
        let adhoc = TwoSidedZTest::level(0.05);
        let eval =
            LoopEvaluator::new(&problem, &nulls, &alts.points, None, Some(&adhoc), &bank).unwrap();
        let direct = crate::mc::rejection_probability(
            &problem,
            EvalTarget::Point(&alts.points[1]),
            &|y: &[f64]| adhoc.decide(y),
            &bank,
        );
        assert_eq!(eval.adhoc_powers()[1], direct.value);
    }
}
