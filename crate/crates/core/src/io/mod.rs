//! Configuration, checkpoints, exporters and the run pipelines.

pub mod checkpoint;
pub mod config;
pub mod runner;
pub mod svg;
pub mod vtk;
