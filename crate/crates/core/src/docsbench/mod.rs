//! Reproducibility harness: gradient problems, reference implementations
//! and the acceptance runner.

mod acceptance;
mod gradcases;
pub mod oracles;

pub use acceptance::{
    run_acceptance, selects, smoke_artifacts, smoke_setup, AcceptanceReport, Criterion, CriterionResult, SmokeArtifacts,
    SmokeSetup, Status, CRITERIA, DEFAULT_PARAMETER_COUNT, GRADIENT_CRITERION_CASES, SMOKE_MAP25,
};
pub use gradcases::{gradient_registry, tiny_model, GRAD_CASES};
