//! Replicating on-road acceleration exposure on a compact proving-ground area.
//!
//! The crate covers the full pipeline:
//!
//! 1. [`trace`] — measured drive recordings: CSV I/O, resampling, averaging
//!    into a reference, standstill detection, and event synchronization.
//! 2. [`vehicle`] — the single-track vehicle model and its discrete
//!    sensitivities.
//! 3. [`planner`] — the receding-horizon optimizer that reproduces a
//!    reference acceleration exposure inside a bounded rectangular area.
//! 4. [`standstill`] — splicing full stops with constant-acceleration ramps
//!    into a planned trajectory.
//! 5. [`simulator`] — a path-tracking surrogate that "drives" a planned
//!    trajectory and returns a measured-style trace.
//! 6. [`sickness`] — zero-phase comparison filtering, motion-sickness
//!    frequency weighting, and accumulated-dose metrics.
//! 7. [`analysis`] — amplitude spectra, band-limited spectral comparison,
//!    and the tracking report that ties the pipeline together.
//! 8. [`scenario`] — seeded synthetic drive recordings for self-contained
//!    runs and tests.
//!
//! All numerics are plain sequential `f64`; given identical inputs and seeds
//! every function in the crate is bit-deterministic across runs.

pub mod analysis;
pub mod config;
pub mod error;
pub mod planner;
pub mod scenario;
pub mod sickness;
pub mod simulator;
pub mod standstill;
pub mod trace;
pub mod vehicle;

pub use analysis::{tracking_report, AnalysisConfig, TrackingReport};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use planner::{plan, PlannedTrajectory, PlannerConfig, PlannerWeights, TrackArea};
pub use scenario::{generate_drive, generate_drives, ScenarioConfig};
pub use sickness::{
    design_zero_phase_lowpass, msdv_component, msdv_total, FilterSpec, SicknessReport,
    WeightingConfig, ZeroPhaseFilter,
};
pub use simulator::{cross_track_errors, track_path, TrackerParams};
pub use trace::{Channel, ReferenceTrace, StandstillMark, Trace};
pub use vehicle::{ControlInput, VehicleParams, VehicleState};
