//! Agent-based simulation of skier flows in a ski area.
//!
//! The area is a directed graph of slopes, lifts and connectors. Groups of
//! skiers arrive over the morning, choose where to ski with a logit model,
//! queue at lifts that dispatch vehicles on a fixed headway, break for
//! lunch and head home before closing. Runs are reproducible from a seed.

pub mod behavior;
pub mod calibration;
pub mod engine;
pub mod fixtures;
pub mod graph;
pub mod population;
pub mod queue;
pub mod report;
pub mod scenario;
pub mod types;

pub use behavior::{BehaviorError, BehaviorModel, Coefficients, UtilityParams};
pub use calibration::{CalibrationError, CalibrationResult};
pub use engine::{
    compare_scenarios, run_day, run_replications, AggregateMetrics, DeltaReport, EngineError, LiftClosure,
    MetricsLog, SimConfig, SimInputs, Summary,
};
pub use graph::{build_area, ArcId, GraphError, NetworkFile, NodeIdx, SkiArea};
pub use population::{DemandProfile, Group, PopulationError, PopulationSpec, SegmentTable, SpeedModel};
pub use scenario::{Scenario, ScenarioError};
pub use types::{Color, Level, PerColor, PerLevel, SpeedTable, STEP_SECONDS};

use thiserror::Error;

/// Any failure of the library, grouped by whether the input was at fault.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Population(#[from] PopulationError),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    /// Bad input, as opposed to a failure while running.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Graph(_) | Error::Population(_) | Error::Behavior(_) | Error::Scenario(_) | Error::Io { .. } => {
                true
            }
            Error::Engine(e) => !matches!(e, EngineError::StalledAgent { .. }),
            Error::Calibration(e) => e.is_validation(),
        }
    }

    /// Stable machine-readable name of the error kind.
    pub fn kind(&self) -> String {
        let debug = match self {
            Error::Graph(e) => format!("{e:?}"),
            Error::Population(e) => format!("{e:?}"),
            Error::Behavior(e) => format!("{e:?}"),
            Error::Engine(e) => format!("{e:?}"),
            Error::Calibration(e) => format!("{e:?}"),
            Error::Scenario(e) => match e {
                ScenarioError::Graph(g) => format!("{g:?}"),
                ScenarioError::Population(p) => format!("{p:?}"),
                other => format!("{other:?}"),
            },
            Error::Io { .. } => "Io".to_string(),
        };
        debug.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string()
    }
}

/// CSV error text that always names the offending line when known.
pub(crate) fn csv_error_message(e: &csv::Error) -> String {
    match e.position() {
        Some(pos) => format!("line {}: {}", pos.line(), e),
        None => e.to_string(),
    }
}
