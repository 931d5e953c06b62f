//! Metropolis–Hastings stepping, MAP estimation and the adaptive drivers.

mod adaptive;
mod chain;
mod map;

pub use adaptive::{
    run_adaptive_dili, run_adaptive_mwg, run_sampler, AdaptationSchedule, IterationRecord, LisSource, RunOutput,
    RunReport, SamplerConfig,
};
pub use chain::{mh_step, ChainState, StepOutcome};
pub use map::{map_estimate, MapOptions, MapResult};
