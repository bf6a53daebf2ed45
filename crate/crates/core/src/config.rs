//! Run configuration: one TOML file covering every stage of the pipeline.
//!
//! The file mirrors the per-module parameter structs section by section.
//! Angles appear in degrees (keys carry a `_deg` suffix) because that is
//! how steering limits are quoted; they convert to radians on the way in.
//! Every key has a default, the full default file can be dumped for
//! provenance, and single keys can be overridden with `section.key=value`
//! strings. Unknown keys are rejected rather than silently ignored.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::analysis::AnalysisConfig;
use crate::error::{Error, Result};
use crate::planner::{Interval, PlannerBounds, PlannerConfig, PlannerWeights, TrackArea};
use crate::scenario::ScenarioConfig;
use crate::sickness::{AxisWeighting, FilterSpec, WeightingConfig, WeightingKind};
use crate::simulator::TrackerParams;
use crate::trace::{Channel, DEFAULT_STANDSTILL_MIN_DURATION, DEFAULT_STANDSTILL_SPEED};
use crate::vehicle::{VehicleParams, VehicleState};

const DEG: f64 = std::f64::consts::PI / 180.0;

/// Paths and the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    /// Input trace files; command-line arguments take precedence.
    pub inputs: Vec<PathBuf>,
    /// Directory all outputs are written into.
    pub output_dir: PathBuf,
    /// Seed for every seeded stage of the run.
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            output_dir: PathBuf::from("out"),
            seed: 2024,
        }
    }
}

/// Planner settings with the start state spelled as a plain array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerSection {
    /// Prediction horizon length in steps.
    pub horizon: usize,
    /// Sample interval, s.
    pub ts: f64,
    /// Iteration budget per horizon solve.
    pub max_iterations: usize,
    /// Convergence tolerance on the projected-gradient infinity norm.
    pub tolerance: f64,
    /// Start state `[X, Y, vx, vy, yaw, yaw_rate, steer, ax]` (SI, rad).
    pub x_init: [f64; 8],
    /// Centre cost weights.
    pub weights: PlannerWeights,
    /// Hard bounds, steering in degrees.
    pub bounds: BoundsSection,
}

impl Default for PlannerSection {
    fn default() -> Self {
        Self {
            horizon: 90,
            ts: 0.1,
            max_iterations: 200,
            tolerance: 1e-6,
            x_init: [15.0, 65.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            weights: PlannerWeights::default(),
            bounds: BoundsSection::default(),
        }
    }
}

/// Hard box bounds with steering quantities in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundsSection {
    /// Longitudinal speed, m/s.
    pub vx: (f64, f64),
    /// Steering angle, deg.
    pub steer_deg: (f64, f64),
    /// Longitudinal acceleration, m/s².
    pub ax: (f64, f64),
    /// Steering rate, deg/s.
    pub steer_rate_deg: (f64, f64),
    /// Longitudinal jerk, m/s³.
    pub jerk: (f64, f64),
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            vx: (1.0, 11.1),
            steer_deg: (-20.0, 20.0),
            ax: (-4.1, 2.5),
            steer_rate_deg: (-14.4, 14.4),
            jerk: (-4.1, 2.3),
        }
    }
}

impl BoundsSection {
    fn to_bounds(self) -> Result<PlannerBounds> {
        Ok(PlannerBounds {
            vx: Interval::new(self.vx.0, self.vx.1)?,
            steer: Interval::new(self.steer_deg.0 * DEG, self.steer_deg.1 * DEG)?,
            ax: Interval::new(self.ax.0, self.ax.1)?,
            steer_rate: Interval::new(self.steer_rate_deg.0 * DEG, self.steer_rate_deg.1 * DEG)?,
            jerk: Interval::new(self.jerk.0, self.jerk.1)?,
        })
    }
}

/// Standstill detection thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StandstillSection {
    /// Speed below which the vehicle counts as stopped, m/s.
    pub speed_threshold: f64,
    /// Minimum standstill duration, s.
    pub min_duration: f64,
}

impl Default for StandstillSection {
    fn default() -> Self {
        Self {
            speed_threshold: DEFAULT_STANDSTILL_SPEED,
            min_duration: DEFAULT_STANDSTILL_MIN_DURATION,
        }
    }
}

/// Per-axis dose multipliers, keyed by CSV channel name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightingSection {
    /// Axis name (`ax`, `ay`, …) to multiplier.
    #[serde(flatten)]
    pub k: BTreeMap<String, f64>,
}

impl Default for WeightingSection {
    fn default() -> Self {
        let k = ["ax", "ay", "az", "r", "roll_acc", "pitch_acc"]
            .into_iter()
            .map(|name| (name.to_string(), 1.0))
            .collect();
        Self { k }
    }
}

impl WeightingSection {
    fn to_config(&self) -> Result<WeightingConfig> {
        let mut axes = BTreeMap::new();
        for (name, &k) in &self.k {
            let channel = Channel::from_csv_name(name).ok_or_else(|| {
                Error::Argument(format!("unknown weighting axis `{name}`"))
            })?;
            axes.insert(
                channel,
                AxisWeighting {
                    kind: WeightingKind::MotionSickness,
                    k,
                },
            );
        }
        let config = WeightingConfig { axes };
        config.validate()?;
        Ok(config)
    }
}

/// Path-tracking surrogate settings with steering quantities in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerSection {
    /// Minimum lookahead distance, m.
    pub min_lookahead: f64,
    /// Speed-proportional lookahead gain, s.
    pub lookahead_gain: f64,
    /// Proportional speed gain, 1/s.
    pub speed_kp: f64,
    /// Integral speed gain, 1/s².
    pub speed_ki: f64,
    /// Minimum speed while moving, m/s.
    pub min_moving_speed: f64,
    /// Extra dwell added to every standstill, s.
    pub dwell_extension: f64,
    /// Control loop rate, Hz.
    pub control_rate: f64,
    /// Steering actuator rate limit, deg/s.
    pub steer_rate_limit_deg: f64,
    /// Steering angle limit, deg.
    pub steer_limit_deg: f64,
    /// Longitudinal acceleration command range, m/s².
    pub accel_range: (f64, f64),
    /// Acceleration slew limit, m/s³.
    pub jerk_limit: f64,
    /// Amplitude of the seeded speed-command disturbance, m/s.
    pub disturbance: f64,
}

impl Default for TrackerSection {
    fn default() -> Self {
        let params = TrackerParams::default();
        Self {
            min_lookahead: params.min_lookahead,
            lookahead_gain: params.lookahead_gain,
            speed_kp: params.speed_kp,
            speed_ki: params.speed_ki,
            min_moving_speed: params.min_moving_speed,
            dwell_extension: params.dwell_extension,
            control_rate: params.control_rate,
            steer_rate_limit_deg: params.steer_rate_limit / DEG,
            steer_limit_deg: params.steer_limit / DEG,
            accel_range: params.accel_range,
            jerk_limit: params.jerk_limit,
            disturbance: params.disturbance,
        }
    }
}

impl TrackerSection {
    fn to_params(self) -> TrackerParams {
        TrackerParams {
            min_lookahead: self.min_lookahead,
            lookahead_gain: self.lookahead_gain,
            speed_kp: self.speed_kp,
            speed_ki: self.speed_ki,
            min_moving_speed: self.min_moving_speed,
            dwell_extension: self.dwell_extension,
            control_rate: self.control_rate,
            steer_rate_limit: self.steer_rate_limit_deg * DEG,
            steer_limit: self.steer_limit_deg * DEG,
            accel_range: self.accel_range,
            jerk_limit: self.jerk_limit,
            disturbance: self.disturbance,
        }
    }
}

/// The complete run configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Paths and seed.
    pub run: RunSection,
    /// Chassis and tire parameters.
    pub vehicle: VehicleParams,
    /// Drivable area.
    pub track: TrackArea,
    /// Replication planner settings.
    pub planner: PlannerSection,
    /// Standstill detection thresholds.
    pub standstill: StandstillSection,
    /// Zero-phase comparison filter.
    pub filter: FilterSpec,
    /// Dose weighting multipliers.
    pub weighting: WeightingSection,
    /// Path-tracking surrogate.
    pub tracker: TrackerSection,
    /// Cross-case comparison settings.
    pub analysis: AnalysisConfig,
    /// Bundled drive generator.
    pub scenario: ScenarioConfig,
}

impl RunConfig {
    /// Parses a TOML document, rejecting unknown keys.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: toml::Table = text
            .parse()
            .map_err(|e| Error::Argument(format!("config parse error: {e}")))?;
        let raw = toml::Value::Table(raw);
        let config: RunConfig = raw
            .clone()
            .try_into()
            .map_err(|e| Error::Argument(format!("config schema error: {e}")))?;
        let known = toml::Value::try_from(&config)
            .map_err(|e| Error::Argument(format!("config serialization error: {e}")))?;
        check_unknown_keys(&raw, &known, "")?;
        Ok(config)
    }

    /// Loads and parses a TOML config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Argument(msg) => Error::Argument(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Renders the configuration as a TOML document with every key present.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Argument(format!("config serialization error: {e}")))
    }

    /// Applies one `section.key=value` override. The key must already
    /// exist and the value must parse to the key's type.
    pub fn apply_set(&mut self, spec: &str) -> Result<()> {
        let (path, raw_value) = spec.split_once('=').ok_or_else(|| {
            Error::Argument(format!("override `{spec}` is not of the form section.key=value"))
        })?;
        let path = path.trim();
        let raw_value = raw_value.trim();
        if path.is_empty() || raw_value.is_empty() {
            return Err(Error::Argument(format!(
                "override `{spec}` is not of the form section.key=value"
            )));
        }
        let value = parse_override_value(raw_value);

        let mut tree = toml::Value::try_from(&*self)
            .map_err(|e| Error::Argument(format!("config serialization error: {e}")))?;
        let mut node = &mut tree;
        let segments: Vec<&str> = path.split('.').collect();
        for (i, segment) in segments.iter().enumerate() {
            let table = node.as_table_mut().ok_or_else(|| {
                Error::Argument(format!(
                    "`{}` is a value, not a section",
                    segments[..i].join(".")
                ))
            })?;
            node = table.get_mut(*segment).ok_or_else(|| {
                Error::Argument(format!("unknown config key `{}`", segments[..=i].join(".")))
            })?;
        }
        if node.is_table() {
            return Err(Error::Argument(format!(
                "`{path}` is a section; set one of its keys instead"
            )));
        }
        *node = value;
        *self = tree
            .try_into()
            .map_err(|e| Error::Argument(format!("override `{spec}` rejected: {e}")))?;
        Ok(())
    }

    /// Chassis and tire parameters.
    pub fn vehicle_params(&self) -> VehicleParams {
        self.vehicle
    }

    /// Assembles the planner configuration (angles converted to radians).
    pub fn planner_config(&self) -> Result<PlannerConfig> {
        let [x, y, vx, vy, yaw, yaw_rate, steer, ax] = self.planner.x_init;
        Ok(PlannerConfig {
            horizon: self.planner.horizon,
            ts: self.planner.ts,
            weights: self.planner.weights,
            track: self.track,
            bounds: self.planner.bounds.to_bounds()?,
            x_init: VehicleState {
                x,
                y,
                vx,
                vy,
                yaw,
                yaw_rate,
                steer,
                ax,
            },
            max_iterations: self.planner.max_iterations,
            tolerance: self.planner.tolerance,
        })
    }

    /// Path-tracking surrogate parameters (angles converted to radians).
    pub fn tracker_params(&self) -> TrackerParams {
        self.tracker.to_params()
    }

    /// Zero-phase comparison filter specification.
    pub fn filter_spec(&self) -> FilterSpec {
        self.filter
    }

    /// Dose weighting configuration.
    pub fn weighting_config(&self) -> Result<WeightingConfig> {
        self.weighting.to_config()
    }

    /// Cross-case comparison settings.
    pub fn analysis_config(&self) -> AnalysisConfig {
        self.analysis
    }

    /// Bundled drive generator settings, re-seeded from the run seed.
    pub fn scenario_config(&self) -> ScenarioConfig {
        ScenarioConfig {
            seed: self.run.seed,
            ..self.scenario
        }
    }

    /// Validates every section.
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.planner_config()?.validate()?;
        self.tracker_params().validate()?;
        self.filter_spec().validate()?;
        self.weighting_config()?;
        self.scenario_config().validate()?;
        if !(self.standstill.speed_threshold > 0.0) || !(self.standstill.min_duration > 0.0) {
            return Err(Error::Argument(
                "standstill thresholds must be positive".into(),
            ));
        }
        let (lo, hi) = self.analysis.band;
        if !(lo >= 0.0 && hi > lo) {
            return Err(Error::Argument(format!(
                "analysis band [{lo}, {hi}] is not a proper interval"
            )));
        }
        Ok(())
    }
}

/// Parses an override value: TOML literal if it reads as one, bare string
/// otherwise.
fn parse_override_value(raw: &str) -> toml::Value {
    if let Ok(table) = format!("v = {raw}").parse::<toml::Table>() {
        if let Some(value) = table.get("v") {
            return value.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

/// Rejects keys present in `raw` but absent from the serialized defaults.
fn check_unknown_keys(raw: &toml::Value, known: &toml::Value, path: &str) -> Result<()> {
    let (Some(raw_table), Some(known_table)) = (raw.as_table(), known.as_table()) else {
        return Ok(());
    };
    for (key, value) in raw_table {
        let full = if path.is_empty() {
            key.clone()
        } else {
            format!("{path}.{key}")
        };
        match known_table.get(key) {
            // The weighting table has free-form axis keys; its semantic
            // check happens on conversion.
            None if path == "weighting" => {}
            None => {
                return Err(Error::Argument(format!("unknown config key `{full}`")));
            }
            Some(known_value) => check_unknown_keys(value, known_value, &full)?,
        }
    }
    Ok(())
}
