//! Canonical run configurations for the built-in problems.
//!
//! `paper_configs` returns the calibration-grade configuration for each
//! problem: discretized null and alternative supports, fine diagnostic
//! grids, switching rules, schedules, and draw counts. `RecipeScale::Desk`
//! produces a reduced variant (50,000 draws, thinned IV supports, shorter
//! warm inner runs) that preserves the structure while fitting in minutes.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bank::DrawBank;
use crate::error::{Error, Result};
use crate::inner::{InnerSettings, StepSchedule};
use crate::outer::OuterSettings;
use crate::problem::{
    AdHocTest, AlternativeSupport, CoordinateStat, NullComponent, ParameterPoint, SwitchingRule,
    TestingProblem,
};
use crate::problems::boundary::{BoundaryProblem, IntervalImpositionTest};
use crate::problems::gaussian::{GaussianMeanProblem, TwoSidedZTest};
use crate::problems::iv::{ClrTest, CvTable, IvDesign, LinearIvProblem, LmTest, QT};
use crate::simplex::WeightVector;

/// Problem family plus its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ProblemSpec {
    GaussianMean,
    BoundaryIici { rho: f64 },
    LinearIv { k: usize, design: IvDesign, beta0: f64 },
}

impl ProblemSpec {
    pub fn build(&self) -> Box<dyn TestingProblem> {
        match self {
            ProblemSpec::GaussianMean => Box::new(GaussianMeanProblem),
            ProblemSpec::BoundaryIici { rho } => Box::new(BoundaryProblem::new(*rho)),
            ProblemSpec::LinearIv { k, design, beta0 } => {
                Box::new(LinearIvProblem::new(*k, *design, *beta0))
            }
        }
    }
}

/// Which ad hoc test the envelope is built against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdHocKind {
    /// |y_1| > z_{1-alpha/2}.
    TwoSidedZ,
    /// Interval-imposition test for the boundary problem.
    IntervalImposition,
    /// Conditional likelihood-ratio test (needs a critical-value table).
    Clr,
}

/// The standard test a switching rule defers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StandardKind {
    TwoSidedZ,
    Lm,
}

/// Declarative switching configuration; materialized by `build_switching`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SwitchSpec {
    /// Observation coordinate used as the switch statistic D(y).
    pub stat_index: usize,
    pub stat_name: String,
    pub switch_point: f64,
    pub standard: StandardKind,
    /// Null points where the switch region must be rare (leak diagnostic).
    pub diagnostic_points: Vec<ParameterPoint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecipeScale {
    /// Calibration-grade settings (300,000 draws, full supports).
    Full,
    /// Reduced settings for interactive and CI runs.
    Desk,
}

/// Complete description of one envelope-building run.
#[derive(Clone, Debug)]
pub struct RunRecipe {
    pub name: String,
    pub problem: ProblemSpec,
    pub alpha: f64,
    /// Verdict threshold epsilon.
    pub epsilon: f64,
    /// Discretized null support the inner loop enforces size on.
    pub nulls: Vec<NullComponent>,
    /// Discretized alternative support the outer loop weights.
    pub alt: AlternativeSupport,
    pub init_weights: WeightVector,
    /// Fine null grid for reported size diagnostics.
    pub fine_nulls: Vec<ParameterPoint>,
    /// Fine alternative grid for reported power surfaces.
    pub fine_alts: Vec<ParameterPoint>,
    pub adhoc: AdHocKind,
    pub switching: Option<SwitchSpec>,
    pub n_draws: usize,
    /// Draws per grid node for the CLR critical-value table.
    pub cv_draws: usize,
    /// Explicit stream seed for the critical-value table; the table derives
    /// one from its own inputs when absent.
    pub cv_seed: Option<u64>,
    pub fit_seed: u64,
    pub verify_seed: u64,
    pub standardize: bool,
    pub symmetrize: bool,
    pub outer: OuterSettings,
}

impl RunRecipe {
    pub fn build_problem(&self) -> Box<dyn TestingProblem> {
        self.problem.build()
    }

    /// Materialize the ad hoc test. `cv_dir` hosts the critical-value
    /// cache for table-based tests and is ignored otherwise.
    pub fn build_adhoc(&self, cv_dir: &Path) -> Result<Arc<dyn AdHocTest>> {
        match self.adhoc {
            AdHocKind::TwoSidedZ => Ok(Arc::new(TwoSidedZTest::level(self.alpha))),
            AdHocKind::IntervalImposition => match self.problem {
                ProblemSpec::BoundaryIici { rho } => {
                    Ok(Arc::new(IntervalImpositionTest::new(rho, self.alpha)))
                }
                _ => Err(Error::Config(
                    "interval-imposition test needs the boundary problem".into(),
                )),
            },
            AdHocKind::Clr => match self.problem {
                ProblemSpec::LinearIv { k, .. } => {
                    let table = CvTable::cached_seeded(
                        cv_dir,
                        k,
                        self.alpha,
                        self.cv_draws,
                        CvTable::default_grid(),
                        self.cv_seed,
                    )?;
                    Ok(Arc::new(ClrTest::new(Arc::new(table))))
                }
                _ => Err(Error::Config("the CLR test needs the linear IV problem".into())),
            },
        }
    }

    fn build_standard(&self, kind: StandardKind) -> Arc<dyn AdHocTest> {
        match kind {
            StandardKind::TwoSidedZ => Arc::new(TwoSidedZTest::level(self.alpha)),
            StandardKind::Lm => Arc::new(LmTest::level(self.alpha)),
        }
    }

    pub fn build_switching(&self) -> Option<SwitchingRule> {
        self.switching.as_ref().map(|spec| SwitchingRule {
            statistic: Arc::new(CoordinateStat {
                index: spec.stat_index,
                stat_name: spec.stat_name.clone(),
            }),
            switch_point: spec.switch_point,
            standard_test: self.build_standard(spec.standard),
            diagnostic_points: spec.diagnostic_points.clone(),
        })
    }

    pub fn fit_bank(&self) -> Result<DrawBank> {
        let problem = self.build_problem();
        DrawBank::generate(
            self.fit_seed,
            self.n_draws,
            problem.base_dim(),
            self.standardize,
            self.symmetrize,
        )
    }

    pub fn verify_bank(&self) -> Result<DrawBank> {
        let problem = self.build_problem();
        DrawBank::generate(
            self.verify_seed,
            self.n_draws,
            problem.base_dim(),
            self.standardize,
            self.symmetrize,
        )
    }

    /// Structural checks shared by the CLI and the builders.
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.fit_seed == self.verify_seed {
            return Err(Error::Config(
                "fit and verify banks must use different seeds".into(),
            ));
        }
        if self.n_draws == 0 {
            return Err(Error::Config("draw count must be positive".into()));
        }
        if self.adhoc == AdHocKind::Clr && self.cv_draws == 0 {
            return Err(Error::Config(
                "critical-value table draw count must be positive".into(),
            ));
        }
        if self.nulls.is_empty() {
            return Err(Error::Empty("null support".into()));
        }
        if self.init_weights.len() != self.alt.len() {
            return Err(Error::Dimension {
                expected: self.alt.len(),
                got: self.init_weights.len(),
                context: "initial alternative weights".into(),
            });
        }
        if self.fine_nulls.is_empty() || self.fine_alts.is_empty() {
            return Err(Error::Empty("fine diagnostic grid".into()));
        }
        let problem = self.build_problem();
        for p in &self.fine_nulls {
            if !problem.in_null(p) {
                return Err(Error::Config(format!(
                    "fine null grid point {:?} is not a null point",
                    p.coords
                )));
            }
        }
        for p in &self.fine_alts {
            if !problem.in_alt(p) {
                return Err(Error::Config(format!(
                    "fine alternative grid point {:?} is not an alternative point",
                    p.coords
                )));
            }
        }
        Ok(())
    }
}

/// Names accepted by `paper_configs`.
pub const CONFIG_NAMES: [&str; 4] = [
    "gaussian-mean",
    "iv-fixed-omega",
    "iv-fixed-sigma",
    "boundary-iici",
];

/// Calibration-grade configuration for a named problem.
pub fn paper_configs(name: &str) -> Result<RunRecipe> {
    paper_configs_scaled(name, RecipeScale::Full)
}

/// Same configurations with an explicit scale.
pub fn paper_configs_scaled(name: &str, scale: RecipeScale) -> Result<RunRecipe> {
    let recipe = match name {
        "gaussian-mean" => gaussian_recipe(scale),
        "iv-fixed-omega" => iv_recipe(IvVariant::FixedOmega, scale),
        "iv-fixed-sigma" => iv_recipe(IvVariant::FixedSigma, scale),
        "boundary-iici" => boundary_recipe(scale),
        other => {
            return Err(Error::Config(format!(
                "unknown configuration '{other}'; expected one of {CONFIG_NAMES:?}"
            )))
        }
    };
    recipe.validate()?;
    Ok(recipe)
}

fn full_outer(inner_schedule: StepSchedule, epsilon: f64) -> OuterSettings {
    OuterSettings {
        iterations: 1000,
        schedule: StepSchedule::Adaptive,
        sign_update: false,
        inner: InnerSettings {
            iterations: 1000,
            schedule: inner_schedule,
            sign_update: false,
            start: None,
        },
        inner_iterations_warm: 1000,
        // The certified iterate is the certificate the envelope needs; the
        // iteration cap still bounds the run when it never fires.
        exit_epsilon: Some(epsilon),
        exit_polish: 100,
    }
}

fn desk_outer(inner_schedule: StepSchedule, epsilon: f64) -> OuterSettings {
    OuterSettings {
        iterations: 400,
        inner_iterations_warm: 200,
        exit_polish: 60,
        ..full_outer(inner_schedule, epsilon)
    }
}

fn outer_for(scale: RecipeScale, inner_schedule: StepSchedule, epsilon: f64) -> OuterSettings {
    match scale {
        RecipeScale::Full => full_outer(inner_schedule, epsilon),
        RecipeScale::Desk => desk_outer(inner_schedule, epsilon),
    }
}

fn draws_for(scale: RecipeScale) -> usize {
    match scale {
        RecipeScale::Full => 300_000,
        RecipeScale::Desk => 50_000,
    }
}

const FIT_SEED: u64 = 7101;
const VERIFY_SEED: u64 = 7205;
const ALPHA: f64 = 0.05;
const EPSILON: f64 = 0.005;

fn gaussian_recipe(scale: RecipeScale) -> RunRecipe {
    let alt = AlternativeSupport::new(vec![
        ParameterPoint::new(vec![-1.0]),
        ParameterPoint::new(vec![1.0]),
    ])
    .expect("static support");
    // Weight 0.1 on beta = 1: the canonical unbalanced start.
    let init = WeightVector::new(vec![0.9, 0.1]).expect("static weights");
    let mut fine_alts = Vec::new();
    for i in -7i32..=7 {
        if i == 0 {
            continue;
        }
        fine_alts.push(ParameterPoint::new(vec![f64::from(i) * 0.5]));
    }
    RunRecipe {
        name: "gaussian-mean".into(),
        problem: ProblemSpec::GaussianMean,
        alpha: ALPHA,
        epsilon: EPSILON,
        nulls: vec![NullComponent::point(vec![0.0])],
        alt,
        init_weights: init,
        fine_nulls: vec![ParameterPoint::new(vec![0.0])],
        fine_alts,
        adhoc: AdHocKind::TwoSidedZ,
        switching: None,
        n_draws: draws_for(scale),
        cv_draws: 0,
        cv_seed: None,
        fit_seed: FIT_SEED,
        verify_seed: VERIFY_SEED,
        standardize: true,
        symmetrize: true,
        outer: outer_for(scale, StepSchedule::Adaptive, EPSILON),
    }
}

fn boundary_recipe(scale: RecipeScale) -> RunRecipe {
    let rho = 0.7;
    // Base distributions: three pinned intervals plus the half-width ladder.
    let mut nulls = vec![
        NullComponent::slice(BoundaryProblem::delta_slice(0.0, 0.00001)),
        NullComponent::slice(BoundaryProblem::delta_slice(0.0, 0.04)),
        NullComponent::slice(BoundaryProblem::delta_slice(1.99, 2.01)),
    ];
    for i in 0..25 {
        let lo = 0.5 * f64::from(i);
        nulls.push(NullComponent::slice(BoundaryProblem::delta_slice(
            lo,
            lo + 0.5,
        )));
    }
    let deltas: Vec<f64> = (0..=16).map(|i| 0.5 * f64::from(i)).collect();
    let mut alt_points = Vec::new();
    for b in [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0] {
        for &d in &deltas {
            alt_points.push(ParameterPoint::new(vec![b, d]));
        }
    }
    let m1 = alt_points.len();
    let alt = AlternativeSupport::new(alt_points).expect("static support");
    let fine_nulls: Vec<ParameterPoint> = (0..=70)
        .map(|i| ParameterPoint::new(vec![0.0, 0.1 * f64::from(i)]))
        .collect();
    let mut fine_alts = Vec::new();
    for i in -7i32..=7 {
        if i == 0 {
            continue;
        }
        for &d in &deltas {
            fine_alts.push(ParameterPoint::new(vec![f64::from(i) * 0.5, d]));
        }
    }
    let diagnostic_points = (0..=3)
        .map(|i| ParameterPoint::new(vec![0.0, f64::from(i)]))
        .collect();
    RunRecipe {
        name: "boundary-iici".into(),
        problem: ProblemSpec::BoundaryIici { rho },
        alpha: ALPHA,
        epsilon: EPSILON,
        nulls,
        alt,
        init_weights: WeightVector::uniform(m1),
        fine_nulls,
        fine_alts,
        adhoc: AdHocKind::IntervalImposition,
        switching: Some(SwitchSpec {
            stat_index: 1,
            stat_name: "y2".into(),
            switch_point: 6.0,
            standard: StandardKind::TwoSidedZ,
            diagnostic_points,
        }),
        n_draws: draws_for(scale),
        cv_draws: 0,
        cv_seed: None,
        fit_seed: FIT_SEED,
        verify_seed: VERIFY_SEED,
        standardize: true,
        symmetrize: true,
        outer: outer_for(scale, StepSchedule::Constant { h: 0.01 }, EPSILON),
    }
}

enum IvVariant {
    FixedOmega,
    FixedSigma,
}

fn thin<T: Copy>(values: &[T], scale: RecipeScale) -> Vec<T> {
    match scale {
        RecipeScale::Full => values.to_vec(),
        RecipeScale::Desk => values.iter().copied().step_by(2).collect(),
    }
}

fn iv_recipe(variant: IvVariant, scale: RecipeScale) -> RunRecipe {
    let (name, k, design, lambda_s, switch_point) = match variant {
        IvVariant::FixedOmega => (
            "iv-fixed-omega",
            5,
            IvDesign::FixedOmega { omega12: 0.5 },
            75.0,
            160.0,
        ),
        IvVariant::FixedSigma => (
            "iv-fixed-sigma",
            10,
            IvDesign::FixedSigma { sigma12: 0.5 },
            160.0,
            320.0,
        ),
    };

    // lambda values of the coarse null support.
    let null_lambdas: Vec<f64> = match variant {
        IvVariant::FixedOmega => {
            let mut v = vec![1.0, 5.0];
            v.extend((2..=6).map(|i| 5.0 * f64::from(i)));
            v.extend((4..=17).map(|i| 10.0 * f64::from(i)));
            v
        }
        IvVariant::FixedSigma => {
            let mut v = vec![1.0, 5.0, 10.0, 15.0, 20.0, 30.0, 40.0, 50.0];
            v.extend([70.0, 90.0, 110.0, 130.0, 150.0]);
            v.extend([175.0, 200.0, 225.0, 250.0, 275.0, 300.0]);
            v
        }
    };
    let null_lambdas = thin(&null_lambdas, scale);
    let nulls: Vec<NullComponent> = null_lambdas
        .iter()
        .map(|&l| NullComponent::point(vec![0.0, l]))
        .collect();

    // Alternative support: (b / sqrt(lambda), lambda) slices.
    let mut alt_points = Vec::new();
    match variant {
        IvVariant::FixedOmega => {
            let bs = [-4.0, -3.0, -2.0, 2.0, 3.0, 4.0];
            for &l in &null_lambdas {
                for b in bs {
                    alt_points.push(ParameterPoint::new(vec![b / l.sqrt(), l]));
                }
            }
        }
        IvVariant::FixedSigma => {
            let slices: [(f64, &[f64]); 7] = [
                (1.0, &[-40.0, -30.0, -20.0, -10.0, -2.5, -1.0, 1.0, 6.0, 20.0, 30.0]),
                (5.0, &[-40.0, -30.0, -20.0, -10.0, -5.0, -1.0, 1.0, 5.0, 10.0, 20.0, 30.0]),
                (10.0, &[-40.0, -30.0, -20.0, -10.0, -6.0, -1.0, 1.0, 5.0, 10.0, 20.0, 30.0]),
                (15.0, &[-40.0, -30.0, -20.0, -10.0, -7.5, -2.0, 2.0, 10.0, 20.0, 30.0]),
                (20.0, &[-30.0, -10.0, -5.0, -3.0, 3.0, 7.0, 10.0, 20.0, 40.0]),
                (30.0, &[-3.0, -1.0, 2.0, 4.0, 6.0, 8.0]),
                (40.0, &[-3.0, 2.0, 4.0, 6.0, 8.0]),
            ];
            let tail_bs = [-3.0, 2.0, 4.0];
            for &l in &null_lambdas {
                if let Some((_, bs)) = slices.iter().find(|(sl, _)| *sl == l) {
                    for &b in *bs {
                        alt_points.push(ParameterPoint::new(vec![b / l.sqrt(), l]));
                    }
                } else {
                    for b in tail_bs {
                        alt_points.push(ParameterPoint::new(vec![b / l.sqrt(), l]));
                    }
                }
            }
        }
    }
    let m1 = alt_points.len();
    let alt = AlternativeSupport::new(alt_points).expect("static support");

    // Fine grids are shared by both designs.
    let fine_nulls: Vec<ParameterPoint> = (0..=75)
        .map(|i| ParameterPoint::new(vec![0.0, 2.0 * f64::from(i)]))
        .collect();
    let mut fine_lambdas = vec![0.1];
    fine_lambdas.extend((1..=17).map(|i| 10.0 * f64::from(i)));
    let mut fine_alts = Vec::new();
    for &l in &fine_lambdas {
        for i in -7i32..=7 {
            if i == 0 {
                continue;
            }
            fine_alts.push(ParameterPoint::new(vec![f64::from(i) * 0.5 / l.sqrt(), l]));
        }
    }

    let diagnostic_points: Vec<ParameterPoint> = null_lambdas
        .iter()
        .filter(|&&l| l <= lambda_s)
        .map(|&l| ParameterPoint::new(vec![0.0, l]))
        .collect();

    RunRecipe {
        name: name.into(),
        problem: ProblemSpec::LinearIv {
            k,
            design,
            beta0: 0.0,
        },
        alpha: ALPHA,
        epsilon: EPSILON,
        nulls,
        alt,
        init_weights: WeightVector::uniform(m1),
        fine_nulls,
        fine_alts,
        adhoc: AdHocKind::Clr,
        switching: Some(SwitchSpec {
            stat_index: QT,
            stat_name: "q_t".into(),
            switch_point,
            standard: StandardKind::Lm,
            diagnostic_points,
        }),
        n_draws: draws_for(scale),
        cv_draws: 1_000_000,
        cv_seed: None,
        fit_seed: FIT_SEED,
        verify_seed: VERIFY_SEED,
        standardize: true,
        symmetrize: false,
        outer: outer_for(scale, StepSchedule::Adaptive, EPSILON),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::NullComponentKind;

    #[test]
    fn all_named_configs_validate() {
        for name in CONFIG_NAMES {
            for scale in [RecipeScale::Full, RecipeScale::Desk] {
                let recipe = paper_configs_scaled(name, scale).unwrap();
                assert_eq!(recipe.name, name);
                recipe.validate().unwrap();
            }
        }
        assert!(paper_configs("no-such-config").is_err());
    }

    #[test]
    fn gaussian_support_matches_canonical_example() {
        let r = paper_configs("gaussian-mean").unwrap();
        assert_eq!(r.alt.len(), 2);
        assert_eq!(r.alt.points[0].coords, vec![-1.0]);
        assert_eq!(r.alt.points[1].coords, vec![1.0]);
        assert_eq!(r.init_weights.as_slice(), &[0.9, 0.1]);
        assert_eq!(r.fine_alts.len(), 14);
        assert_eq!(r.n_draws, 300_000);
        assert!(r.switching.is_none());
    }

    #[test]
    fn fixed_omega_support_counts() {
        let r = paper_configs("iv-fixed-omega").unwrap();
        assert_eq!(r.nulls.len(), 21, "coarse null lambda grid");
        assert_eq!(r.alt.len(), 126, "six b values per lambda");
        assert_eq!(r.fine_nulls.len(), 76);
        assert_eq!(r.fine_alts.len(), 252);
        let spec = r.switching.as_ref().unwrap();
        assert_eq!(spec.switch_point, 160.0);
        assert_eq!(spec.diagnostic_points.len(), 11, "lambdas up to 75");
        // Alternative points store beta = b / sqrt(lambda).
        let p = &r.alt.points[0];
        assert!((p.coords[0] - (-4.0)).abs() < 1e-12, "lambda 1 keeps raw b");
    }

    #[test]
    fn fixed_sigma_union_has_the_documented_slices() {
        let r = paper_configs("iv-fixed-sigma").unwrap();
        assert_eq!(r.nulls.len(), 19);
        assert_eq!(r.alt.len(), 98, "union of lambda slices");
        let spec = r.switching.as_ref().unwrap();
        assert_eq!(spec.switch_point, 320.0);
        assert_eq!(spec.diagnostic_points.len(), 13, "lambdas up to 160");
        // Count points per lambda value.
        let count_at = |l: f64| r.alt.points.iter().filter(|p| p.coords[1] == l).count();
        assert_eq!(count_at(1.0), 10);
        assert_eq!(count_at(5.0), 11);
        assert_eq!(count_at(10.0), 11);
        assert_eq!(count_at(15.0), 10);
        assert_eq!(count_at(20.0), 9);
        assert_eq!(count_at(30.0), 6);
        assert_eq!(count_at(40.0), 5);
        assert_eq!(count_at(175.0), 3);
        assert_eq!(count_at(300.0), 3);
    }

    #[test]
    fn boundary_base_distributions_match_the_ladder() {
        let r = paper_configs("boundary-iici").unwrap();
        assert_eq!(r.nulls.len(), 28, "3 pinned + 25 ladder intervals");
        let widths: Vec<f64> = r
            .nulls
            .iter()
            .map(|c| match &c.kind {
                NullComponentKind::BaseDistribution(s) => s.hi - s.lo,
                _ => panic!("boundary nulls are slices"),
            })
            .collect();
        assert!((widths[0] - 0.00001).abs() < 1e-15);
        assert!((widths[1] - 0.04).abs() < 1e-15);
        assert!((widths[2] - 0.02).abs() < 1e-12);
        assert!(widths[3..].iter().all(|w| (w - 0.5).abs() < 1e-12));
        assert_eq!(r.alt.len(), 102);
        assert_eq!(r.fine_nulls.len(), 71);
        assert_eq!(r.fine_alts.len(), 238);
        match r.outer.inner.schedule {
            StepSchedule::Constant { h } => assert_eq!(h, 0.01),
            other => panic!("boundary inner schedule should be constant, got {other:?}"),
        }
    }

    #[test]
    fn desk_scale_thins_iv_supports_and_draws() {
        let full = paper_configs("iv-fixed-omega").unwrap();
        let desk = paper_configs_scaled("iv-fixed-omega", RecipeScale::Desk).unwrap();
        assert_eq!(desk.n_draws, 50_000);
        assert_eq!(desk.nulls.len(), 11);
        assert_eq!(desk.alt.len(), 66);
        assert_eq!(desk.fine_alts.len(), full.fine_alts.len(), "fine grids stay full");
        let sigma_desk = paper_configs_scaled("iv-fixed-sigma", RecipeScale::Desk).unwrap();
        assert_eq!(sigma_desk.nulls.len(), 10);
        // lambda slices kept: 1, 10, 20, 40, 70, 110, 150, 200, 250, 300.
        assert_eq!(sigma_desk.alt.len(), 10 + 11 + 9 + 5 + 3 * 6);
    }

    #[test]
    fn builders_produce_consistent_objects() {
        let r = paper_configs_scaled("boundary-iici", RecipeScale::Desk).unwrap();
        let problem = r.build_problem();
        assert_eq!(problem.name(), "boundary-iici");
        let rule = r.build_switching().unwrap();
        assert_eq!(rule.switch_point, 6.0);
        assert_eq!(rule.standard_test.name(), "two-sided-z");
        assert!(rule.applies(&[0.0, 6.5]));
        assert!(!rule.applies(&[0.0, 6.0]));
        let adhoc = r.build_adhoc(Path::new("/nonexistent-unused")).unwrap();
        assert_eq!(adhoc.name(), "interval-imposition");
        let mut bad = r.clone();
        bad.verify_seed = bad.fit_seed;
        assert!(bad.validate().is_err(), "equal seeds must fail validation");
    }
}
