pub mod engine;
pub mod result;
pub mod scenario;

pub use engine::Engine;
pub use result::{CompletionRecord, CostPoint, PredictionLog, PredictionPoint, SimulationResult};
pub use scenario::{
    generate_paper_schedule, EstimatorConfig, EstimatorVariant, NoiseConfig, PaperScheduleConfig,
    Scenario, TypeSpec, WorkloadSpec, SCENARIO_SCHEMA,
};
