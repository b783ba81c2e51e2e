use thiserror::Error;

use crate::nmpc::NmpcError;
use crate::oracle::OracleError;
use crate::radio::RadioError;
use crate::scenario::ScenarioError;
use crate::sim::SimError;
use crate::trajgen::TrajgenError;
use crate::vehicle::VehicleError;

/// Crate-level error, wrapping the per-module error types.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Vehicle(#[from] VehicleError),
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error(transparent)]
    Trajgen(#[from] TrajgenError),
    #[error(transparent)]
    Nmpc(#[from] NmpcError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
