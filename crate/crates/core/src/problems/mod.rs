//! Built-in testing problems and their benchmark tests.

pub mod boundary;
pub mod configs;
pub mod gaussian;
pub mod iv;

pub use boundary::{BoundaryProblem, IntervalImpositionTest};
pub use configs::{
    paper_configs, paper_configs_scaled, AdHocKind, ProblemSpec, RecipeScale, RunRecipe,
    StandardKind, SwitchSpec, CONFIG_NAMES,
};
pub use gaussian::{GaussianMeanProblem, TwoSidedZTest};
pub use iv::{ClrTest, CvTable, IvDesign, LinearIvProblem, LmTest};
