//! Dataset ingestion, experiment orchestration and statistical checks.

pub mod data;
pub mod experiment;
pub mod verify;
