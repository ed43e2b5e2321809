use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A data type still has pending items but no converged CUS prediction.
    #[error("estimator not ready for data type `{data_type}` of workload `{workload}`")]
    EstimatorNotReady { workload: String, data_type: String },

    #[error("negative measurement {value} fed to estimator")]
    NegativeMeasurement { value: f64 },

    #[error("invalid estimator configuration: {reason}")]
    EstimatorConfig { reason: String },

    #[error("deadline expired for workload `{workload}` (remaining ttc {remaining_ttc}s)")]
    DeadlineExpired {
        workload: String,
        remaining_ttc: f64,
    },

    #[error("scenario validation failed: field `{field}`: {reason}")]
    ScenarioInvalid { field: String, reason: String },

    #[error("scenario parse error: {0}")]
    ScenarioParse(#[from] serde_json::Error),

    #[error("simulation engine fault: {0}")]
    EngineFault(String),

    /// The non-termination guard tripped.
    #[error("simulation exceeded horizon of {horizon}s at t={time}s ({detail})")]
    HorizonExceeded {
        horizon: f64,
        time: f64,
        detail: String,
    },

    #[error("experiment cell failed (controller={controller}, estimator={estimator}, seed={seed}): {source}")]
    ExperimentCell {
        controller: String,
        estimator: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv write error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
