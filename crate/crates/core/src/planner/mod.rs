//! Receding-horizon planner that reproduces a recorded acceleration profile
//! inside a bounded rectangular area.
//!
//! The planner tracks longitudinal and lateral acceleration references with a
//! nonlinear MPC built on the single-track model in [`crate::vehicle`]. Its
//! cost uses *adaptive weights*: acceleration tracking dominates near the
//! centre of the area and fades towards the edges, while position regulation
//! does the opposite, growing steeply near the boundary so the vehicle is
//! herded back towards the middle before the hard position bounds engage.
//!
//! The module exposes the weight schedules ([`adaptive_accel_weights`],
//! [`adaptive_position_weights`]), the per-stage cost ([`stage_cost`]), a
//! single-horizon solver ([`solve_horizon`](crate::planner::solve_horizon)),
//! and the full receding-horizon loop ([`plan`]) that produces a
//! [`PlannedTrajectory`].

mod solver;

pub use solver::{solve_horizon, HorizonSolution};

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{Channel, ReferenceTrace, Trace};
use crate::vehicle::{
    steady_state_ay, ControlInput, StateMatrix, StateVector, VehicleParams, VehicleState,
};

/// Fraction of the centre weight lost at the area boundary: the centre
/// factor is `1 − 0.99·n⁸`, so weights drop to 1% of their centre value.
const CENTRE_DROP: f64 = 0.99;

/// Normalised-position clamp for the boundary weight `w/(1−n⁴) − w`, which
/// would diverge at `|n| = 1`.
const POSITION_NORM_LIMIT: f64 = 0.999;

/// Tolerance applied to every hard bound: planned states may sit at most
/// this far outside their interval.
pub const BOUND_TOLERANCE: f64 = 1e-6;

/// A closed scalar interval used for box bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct Interval {
    /// Lower edge.
    pub lower: f64,
    /// Upper edge.
    pub upper: f64,
}

impl Interval {
    /// Builds an interval; `lower` must not exceed `upper`.
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() || lower > upper {
            return Err(Error::Argument(format!(
                "invalid interval [{lower}, {upper}]"
            )));
        }
        Ok(Self { lower, upper })
    }

    /// Width of the interval.
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Midpoint of the interval.
    pub fn centre(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    /// Half the width of the interval.
    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }

    /// Clamps `value` into the interval.
    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.lower, self.upper)
    }

    /// How far `value` sits outside the interval (0 inside).
    pub fn violation(&self, value: f64) -> f64 {
        if value < self.lower {
            self.lower - value
        } else if value > self.upper {
            value - self.upper
        } else {
            0.0
        }
    }

    /// Whether `value` lies inside the interval within `tol`.
    pub fn contains(&self, value: f64, tol: f64) -> bool {
        self.violation(value) <= tol
    }
}

impl From<(f64, f64)> for Interval {
    fn from((lower, upper): (f64, f64)) -> Self {
        Self { lower, upper }
    }
}

impl From<Interval> for (f64, f64) {
    fn from(i: Interval) -> Self {
        (i.lower, i.upper)
    }
}

/// The rectangular drivable area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackArea {
    /// Longitudinal extent, m.
    pub x: Interval,
    /// Lateral extent, m.
    pub y: Interval,
}

impl Default for TrackArea {
    /// The 175 m × 70 m proving-ground pad.
    fn default() -> Self {
        Self {
            x: Interval { lower: 0.0, upper: 175.0 },
            y: Interval { lower: 0.0, upper: 70.0 },
        }
    }
}

impl TrackArea {
    /// Validates that both extents are proper, non-degenerate intervals.
    pub fn validate(&self) -> Result<()> {
        for (name, i) in [("x", &self.x), ("y", &self.y)] {
            if !i.lower.is_finite() || !i.upper.is_finite() || i.width() <= 0.0 {
                return Err(Error::Argument(format!(
                    "track {name} extent [{}, {}] is not a proper interval",
                    i.lower, i.upper
                )));
            }
        }
        Ok(())
    }

    /// Normalised x coordinate: 0 at the centre, ±1 at the edges.
    pub fn x_norm(&self, x: f64) -> f64 {
        (x - self.x.centre()) / self.x.half_width()
    }

    /// Normalised y coordinate: 0 at the centre, ±1 at the edges.
    pub fn y_norm(&self, y: f64) -> f64 {
        (y - self.y.centre()) / self.y.half_width()
    }
}

/// Centre values of the cost weights. The planner scales the acceleration
/// and position weights with position (see [`AdaptiveWeights`]); the input
/// weights are constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerWeights {
    /// Longitudinal-acceleration tracking weight at the area centre.
    pub accel_x: f64,
    /// Lateral-acceleration tracking weight at the area centre.
    pub accel_y: f64,
    /// Longitudinal position weight at the area centre.
    pub pos_x: f64,
    /// Lateral position weight at the area centre.
    pub pos_y: f64,
    /// Steering-rate input weight.
    pub steer_rate: f64,
    /// Longitudinal-jerk input weight.
    pub jerk: f64,
}

impl Default for PlannerWeights {
    fn default() -> Self {
        Self {
            accel_x: 300.0,
            accel_y: 500.0,
            pos_x: 0.05,
            pos_y: 0.25,
            steer_rate: 0.2,
            jerk: 0.2,
        }
    }
}

impl PlannerWeights {
    /// All weights must be positive and finite.
    pub fn validate(&self) -> Result<()> {
        let entries = [
            ("accel_x", self.accel_x),
            ("accel_y", self.accel_y),
            ("pos_x", self.pos_x),
            ("pos_y", self.pos_y),
            ("steer_rate", self.steer_rate),
            ("jerk", self.jerk),
        ];
        for (name, value) in entries {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::Argument(format!(
                    "weight {name} must be positive, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Hard box bounds on states and inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerBounds {
    /// Longitudinal speed, m/s. The lower edge stays strictly positive so
    /// the tire model remains well defined.
    pub vx: Interval,
    /// Steering angle, rad.
    pub steer: Interval,
    /// Longitudinal acceleration, m/s².
    pub ax: Interval,
    /// Steering rate input, rad/s.
    pub steer_rate: Interval,
    /// Longitudinal jerk input, m/s³.
    pub jerk: Interval,
}

impl Default for PlannerBounds {
    fn default() -> Self {
        let deg = std::f64::consts::PI / 180.0;
        Self {
            vx: Interval { lower: 1.0, upper: 11.1 },
            steer: Interval { lower: -20.0 * deg, upper: 20.0 * deg },
            ax: Interval { lower: -4.1, upper: 2.5 },
            steer_rate: Interval { lower: -14.4 * deg, upper: 14.4 * deg },
            jerk: Interval { lower: -4.1, upper: 2.3 },
        }
    }
}

impl PlannerBounds {
    /// Validates interval ordering and the positive speed floor.
    pub fn validate(&self) -> Result<()> {
        let entries = [
            ("vx", &self.vx),
            ("steer", &self.steer),
            ("ax", &self.ax),
            ("steer_rate", &self.steer_rate),
            ("jerk", &self.jerk),
        ];
        for (name, i) in entries {
            if !i.lower.is_finite() || !i.upper.is_finite() || i.lower >= i.upper {
                return Err(Error::Argument(format!(
                    "bound {name} [{}, {}] is not a proper interval",
                    i.lower, i.upper
                )));
            }
        }
        if self.vx.lower <= 0.0 {
            return Err(Error::Argument(format!(
                "speed lower bound must be positive, got {}",
                self.vx.lower
            )));
        }
        Ok(())
    }
}

/// Full planner configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerConfig {
    /// Prediction horizon length in steps.
    pub horizon: usize,
    /// Sample interval, s.
    pub ts: f64,
    /// Centre cost weights.
    pub weights: PlannerWeights,
    /// Drivable area.
    pub track: TrackArea,
    /// Hard state and input bounds.
    pub bounds: PlannerBounds,
    /// Initial state for [`plan`].
    pub x_init: VehicleState,
    /// Iteration budget per horizon solve.
    pub max_iterations: usize,
    /// Convergence tolerance on the projected-gradient infinity norm.
    pub tolerance: f64,
}

impl Default for PlannerConfig {
    /// A 9 s horizon at 10 Hz starting near the north-west corner of the
    /// default area at walking pace.
    fn default() -> Self {
        Self {
            horizon: 90,
            ts: 0.1,
            weights: PlannerWeights::default(),
            track: TrackArea::default(),
            bounds: PlannerBounds::default(),
            x_init: VehicleState {
                x: 15.0,
                y: 65.0,
                vx: 2.0,
                ..VehicleState::default()
            },
            max_iterations: 200,
            tolerance: 1e-6,
        }
    }
}

impl PlannerConfig {
    /// Validates the configuration, including feasibility of `x_init`.
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Argument("horizon must be at least 1".into()));
        }
        if !self.ts.is_finite() || self.ts <= 0.0 {
            return Err(Error::Argument(format!(
                "sample interval must be positive, got {}",
                self.ts
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Argument("iteration budget must be at least 1".into()));
        }
        if !self.tolerance.is_finite() || self.tolerance <= 0.0 {
            return Err(Error::Argument(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        self.weights.validate()?;
        self.track.validate()?;
        self.bounds.validate()?;
        self.check_state_feasible(&self.x_init)
            .map_err(|e| Error::Argument(format!("x_init infeasible: {e}")))?;
        Ok(())
    }

    /// Checks a state against the position, speed, steering and
    /// acceleration boxes within [`BOUND_TOLERANCE`].
    pub fn check_state_feasible(&self, state: &VehicleState) -> Result<()> {
        let checks = [
            ("X", state.x, &self.track.x),
            ("Y", state.y, &self.track.y),
            ("vx", state.vx, &self.bounds.vx),
            ("steer", state.steer, &self.bounds.steer),
            ("ax", state.ax, &self.bounds.ax),
        ];
        for (name, value, interval) in checks {
            if !interval.contains(value, BOUND_TOLERANCE) {
                return Err(Error::InfeasibleStart(format!(
                    "{name} = {value} outside [{}, {}]",
                    interval.lower, interval.upper
                )));
            }
        }
        Ok(())
    }

    /// Largest bound violation of a state over the five bounded components.
    pub fn state_violation(&self, state: &VehicleState) -> f64 {
        self.track
            .x
            .violation(state.x)
            .max(self.track.y.violation(state.y))
            .max(self.bounds.vx.violation(state.vx))
            .max(self.bounds.steer.violation(state.steer))
            .max(self.bounds.ax.violation(state.ax))
    }
}

/// Centre factor `c(n) = 1 − 0.99·n⁸` with `|n|` clamped to 1, plus its
/// first and second derivatives with respect to the unclamped normalised
/// coordinate.
fn centre_factor(norm: f64) -> (f64, f64, f64) {
    if norm.abs() >= 1.0 {
        (1.0 - CENTRE_DROP, 0.0, 0.0)
    } else {
        let n6 = norm.powi(6);
        let n7 = n6 * norm;
        (
            1.0 - CENTRE_DROP * n7 * norm,
            -8.0 * CENTRE_DROP * n7,
            -56.0 * CENTRE_DROP * n6,
        )
    }
}

/// Boundary position weight `w(n) = w_c/(1 − n⁴) − w_c` with `|n|` clamped
/// to [`POSITION_NORM_LIMIT`], plus its first and second derivatives with
/// respect to the unclamped normalised coordinate.
fn position_weight(wc: f64, norm: f64) -> (f64, f64, f64) {
    let u = norm.clamp(-POSITION_NORM_LIMIT, POSITION_NORM_LIMIT);
    let denom = 1.0 - u * u * u * u;
    let w = wc / denom - wc;
    let (dw, ddw) = if norm.abs() >= POSITION_NORM_LIMIT {
        (0.0, 0.0)
    } else {
        let u2 = u * u;
        let u3 = u2 * u;
        (
            4.0 * wc * u3 / (denom * denom),
            wc * (12.0 * u2 + 20.0 * u3 * u3) / (denom * denom * denom),
        )
    };
    (w, dw, ddw)
}

/// The position-dependent cost weights evaluated at one location.
///
/// Acceleration weights are the centre values scaled by the product of the
/// per-axis centre factors `c_x·c_y ∈ (0.01², 1]`; position weights grow
/// from zero at the centre towards a large finite value at the clamped
/// boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveWeights {
    /// Normalised x position (unclamped).
    pub x_norm: f64,
    /// Normalised y position (unclamped).
    pub y_norm: f64,
    /// Centre factor for the x axis, in `(0.01 − ε, 1]`.
    pub c_x: f64,
    /// Centre factor for the y axis, in `(0.01 − ε, 1]`.
    pub c_y: f64,
    /// Longitudinal-acceleration tracking weight.
    pub accel_x: f64,
    /// Lateral-acceleration tracking weight.
    pub accel_y: f64,
    /// Longitudinal position weight.
    pub pos_x: f64,
    /// Lateral position weight.
    pub pos_y: f64,
}

impl AdaptiveWeights {
    /// Evaluates all four scheduled weights at position `(x, y)`.
    pub fn at(x: f64, y: f64, track: &TrackArea, weights: &PlannerWeights) -> Self {
        let x_norm = track.x_norm(x);
        let y_norm = track.y_norm(y);
        let (c_x, _, _) = centre_factor(x_norm);
        let (c_y, _, _) = centre_factor(y_norm);
        let (pos_x, _, _) = position_weight(weights.pos_x, x_norm);
        let (pos_y, _, _) = position_weight(weights.pos_y, y_norm);
        Self {
            x_norm,
            y_norm,
            c_x,
            c_y,
            accel_x: c_x * c_y * weights.accel_x,
            accel_y: c_x * c_y * weights.accel_y,
            pos_x,
            pos_y,
        }
    }
}

/// Acceleration tracking weights `(w_ax, w_ay)` at position `(x, y)`.
pub fn adaptive_accel_weights(
    x: f64,
    y: f64,
    track: &TrackArea,
    weights: &PlannerWeights,
) -> (f64, f64) {
    let w = AdaptiveWeights::at(x, y, track, weights);
    (w.accel_x, w.accel_y)
}

/// Position regulation weights `(w_x, w_y)` at position `(x, y)`.
pub fn adaptive_position_weights(
    x: f64,
    y: f64,
    track: &TrackArea,
    weights: &PlannerWeights,
) -> (f64, f64) {
    let w = AdaptiveWeights::at(x, y, track, weights);
    (w.pos_x, w.pos_y)
}

/// State part of the stage cost along with its gradient with respect to the
/// state vector. Used by both the public [`stage_cost`] and the solver's
/// adjoint sweep. The lateral acceleration is the steady-state value
/// `vx²·δ/L`, matching what the planner is asked to reproduce.
pub(crate) fn state_cost_grad(
    state: &VehicleState,
    ax_ref: f64,
    ay_ref: f64,
    config: &PlannerConfig,
    vehicle: &VehicleParams,
) -> (f64, StateVector) {
    let track = &config.track;
    let weights = &config.weights;

    let x_norm = track.x_norm(state.x);
    let y_norm = track.y_norm(state.y);
    let dxn_dx = 1.0 / track.x.half_width();
    let dyn_dy = 1.0 / track.y.half_width();

    let (c_x, dc_x, _) = centre_factor(x_norm);
    let (c_y, dc_y, _) = centre_factor(y_norm);
    let (w_px, dw_px, _) = position_weight(weights.pos_x, x_norm);
    let (w_py, dw_py, _) = position_weight(weights.pos_y, y_norm);

    let w_ax = c_x * c_y * weights.accel_x;
    let w_ay = c_x * c_y * weights.accel_y;

    let wheelbase = vehicle.wheelbase();
    let e_ax = state.ax - ax_ref;
    let e_ay = steady_state_ay(state.vx, state.steer, vehicle) - ay_ref;
    let ex = state.x - track.x.centre();
    let ey = state.y - track.y.centre();

    let cost = w_ax * e_ax * e_ax + w_ay * e_ay * e_ay + w_px * ex * ex + w_py * ey * ey;

    let mut grad = StateVector::zeros();
    // Direct tracking-error terms.
    grad[7] = 2.0 * w_ax * e_ax;
    grad[2] = 2.0 * w_ay * e_ay * (2.0 * state.vx * state.steer / wheelbase);
    grad[6] = 2.0 * w_ay * e_ay * (state.vx * state.vx / wheelbase);
    // Position terms, including the weight schedules' own position
    // dependence: moving towards the boundary cheapens acceleration
    // tracking and raises the position penalty.
    let accel_sq = weights.accel_x * e_ax * e_ax + weights.accel_y * e_ay * e_ay;
    grad[0] = 2.0 * w_px * ex + (dw_px * ex * ex + dc_x * c_y * accel_sq) * dxn_dx;
    grad[1] = 2.0 * w_py * ey + (dw_py * ey * ey + dc_y * c_x * accel_sq) * dyn_dy;

    (cost, grad)
}

/// Exact Hessian of the state stage cost with respect to the state:
/// residual curvature plus the weight schedules' own first and second
/// derivatives. Indefinite in general (the centre factor is concave), so
/// the solver pairs it with a positive-definiteness check and a
/// regularisation shift.
pub(crate) fn state_cost_hessian(
    state: &VehicleState,
    ax_ref: f64,
    ay_ref: f64,
    config: &PlannerConfig,
    vehicle: &VehicleParams,
) -> StateMatrix {
    let track = &config.track;
    let weights = &config.weights;

    let x_norm = track.x_norm(state.x);
    let y_norm = track.y_norm(state.y);
    let kx = 1.0 / track.x.half_width();
    let ky = 1.0 / track.y.half_width();

    let (c_x, dc_x, ddc_x) = centre_factor(x_norm);
    let (c_y, dc_y, ddc_y) = centre_factor(y_norm);
    let (w_px, dw_px, ddw_px) = position_weight(weights.pos_x, x_norm);
    let (w_py, dw_py, ddw_py) = position_weight(weights.pos_y, y_norm);

    let w_ax = c_x * c_y * weights.accel_x;
    let w_ay = c_x * c_y * weights.accel_y;

    let wheelbase = vehicle.wheelbase();
    let day_dvx = 2.0 * state.vx * state.steer / wheelbase;
    let day_dsteer = state.vx * state.vx / wheelbase;
    let e_ax = state.ax - ax_ref;
    let e_ay = steady_state_ay(state.vx, state.steer, vehicle) - ay_ref;
    let ex = state.x - track.x.centre();
    let ey = state.y - track.y.centre();

    // The acceleration part the schedules scale, and its derivatives with
    // respect to the states it depends on.
    let accel_sq = weights.accel_x * e_ax * e_ax + weights.accel_y * e_ay * e_ay;
    let daccel_dvx = 2.0 * weights.accel_y * e_ay * day_dvx;
    let daccel_dsteer = 2.0 * weights.accel_y * e_ay * day_dsteer;
    let daccel_dax = 2.0 * weights.accel_x * e_ax;

    let mut h = StateMatrix::zeros();
    // Position rows: quadratic error under a position-dependent weight
    // plus the schedules' curvature acting on the acceleration part.
    h[(0, 0)] = (ddc_x * c_y * accel_sq + ddw_px * ex * ex) * kx * kx
        + 4.0 * dw_px * kx * ex
        + 2.0 * w_px;
    h[(1, 1)] = (ddc_y * c_x * accel_sq + ddw_py * ey * ey) * ky * ky
        + 4.0 * dw_py * ky * ey
        + 2.0 * w_py;
    h[(0, 1)] = dc_x * dc_y * kx * ky * accel_sq;
    h[(0, 2)] = dc_x * c_y * kx * daccel_dvx;
    h[(0, 6)] = dc_x * c_y * kx * daccel_dsteer;
    h[(0, 7)] = dc_x * c_y * kx * daccel_dax;
    h[(1, 2)] = dc_y * c_x * ky * daccel_dvx;
    h[(1, 6)] = dc_y * c_x * ky * daccel_dsteer;
    h[(1, 7)] = dc_y * c_x * ky * daccel_dax;
    // Acceleration-tracking block: Jacobian outer products plus the
    // lateral residual times its own curvature (`ay = vx²·δ/L`).
    h[(2, 2)] = 2.0 * w_ay * (day_dvx * day_dvx + e_ay * 2.0 * state.steer / wheelbase);
    h[(2, 6)] = 2.0 * w_ay * (day_dvx * day_dsteer + e_ay * 2.0 * state.vx / wheelbase);
    h[(6, 6)] = 2.0 * w_ay * day_dsteer * day_dsteer;
    h[(7, 7)] = 2.0 * w_ax;
    for i in 0..8 {
        for j in 0..i {
            h[(i, j)] = h[(j, i)];
        }
    }
    h
}

/// Input part of the stage cost and its gradient.
pub(crate) fn input_cost_grad(
    input: &ControlInput,
    weights: &PlannerWeights,
) -> (f64, [f64; 2]) {
    let cost = weights.steer_rate * input.steer_rate * input.steer_rate
        + weights.jerk * input.jerk * input.jerk;
    (
        cost,
        [
            2.0 * weights.steer_rate * input.steer_rate,
            2.0 * weights.jerk * input.jerk,
        ],
    )
}

/// One stage of the tracking cost: adaptive-weighted acceleration errors,
/// position regulation towards the centre, and quadratic input effort.
pub fn stage_cost(
    state: &VehicleState,
    input: &ControlInput,
    ax_ref: f64,
    ay_ref: f64,
    config: &PlannerConfig,
    vehicle: &VehicleParams,
) -> f64 {
    let (state_cost, _) = state_cost_grad(state, ax_ref, ay_ref, config, vehicle);
    let (input_cost, _) = input_cost_grad(input, &config.weights);
    state_cost + input_cost
}

/// Shifts a horizon solution one step forward for use as the next warm
/// start: drops the first input and repeats the last.
pub fn shift_warm_start(inputs: &[ControlInput]) -> Vec<ControlInput> {
    match inputs {
        [] => Vec::new(),
        [.., last] => {
            let mut shifted = inputs[1..].to_vec();
            shifted.push(*last);
            shifted
        }
    }
}

/// Per-step solver diagnostics recorded by [`plan`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    /// Receding-horizon step index.
    pub step: usize,
    /// Tracking cost of the accepted horizon solution.
    pub cost: f64,
    /// Solver iterations spent.
    pub iterations: usize,
    /// Whether the solver met its gradient tolerance.
    pub converged: bool,
    /// Largest state-bound violation over the predicted horizon.
    pub max_violation: f64,
}

/// A closed-loop planned trajectory with per-step solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedTrajectory {
    /// Sample interval, s.
    pub dt: f64,
    /// State sequence; one longer than `inputs`.
    pub states: Vec<VehicleState>,
    /// Applied input sequence.
    pub inputs: Vec<ControlInput>,
    /// Longitudinal acceleration at each state, m/s².
    pub ax: Vec<f64>,
    /// Steady-state lateral acceleration at each state, m/s².
    pub ay: Vec<f64>,
    /// One diagnostics record per receding-horizon step.
    pub diagnostics: Vec<StepDiagnostics>,
}

impl PlannedTrajectory {
    /// Number of applied steps.
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    /// Whether the trajectory is empty.
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Largest hard-bound violation over all states.
    pub fn max_bound_violation(&self, config: &PlannerConfig) -> f64 {
        self.states
            .iter()
            .map(|s| config.state_violation(s))
            .fold(0.0, f64::max)
    }

    /// Cumulative travelled distance at each state, m.
    pub fn arclengths(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.states.len());
        let mut s = 0.0;
        out.push(0.0);
        for pair in self.states.windows(2) {
            s += (pair[1].x - pair[0].x).hypot(pair[1].y - pair[0].y);
            out.push(s);
        }
        out
    }

    /// Converts the trajectory into a trace with the planner's channel set
    /// (position, speed, accelerations, yaw rate).
    pub fn to_trace(&self) -> Result<Trace> {
        let mut channels = BTreeMap::new();
        channels.insert(Channel::PosX, self.states.iter().map(|s| s.x).collect());
        channels.insert(Channel::PosY, self.states.iter().map(|s| s.y).collect());
        channels.insert(Channel::SpeedX, self.states.iter().map(|s| s.vx).collect());
        channels.insert(Channel::AccelX, self.ax.clone());
        channels.insert(Channel::AccelY, self.ay.clone());
        channels.insert(
            Channel::YawRate,
            self.states.iter().map(|s| s.yaw_rate).collect(),
        );
        Trace::new(0.0, self.dt, channels)
    }

    /// Writes the per-step diagnostics as CSV.
    pub fn save_diagnostics<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "cost", "iterations", "converged", "max_violation"])?;
        for d in &self.diagnostics {
            w.write_record(&[
                d.step.to_string(),
                format!("{:.9}", d.cost),
                d.iterations.to_string(),
                (d.converged as u8).to_string(),
                format!("{:.3e}", d.max_violation),
            ])?;
        }
        w.flush().map_err(Error::from)?;
        Ok(())
    }
}

/// Runs the receding-horizon loop over a full acceleration reference.
///
/// At every reference sample the planner solves one horizon (warm-started
/// with the previous solution shifted by one step), applies the first input
/// and advances the model. Short final windows are padded by holding the
/// last reference value. A solver step that fails to converge within its
/// iteration budget is recorded in the diagnostics but does not abort the
/// plan; hard model errors do.
pub fn plan(
    reference: &ReferenceTrace,
    config: &PlannerConfig,
    vehicle: &VehicleParams,
) -> Result<PlannedTrajectory> {
    config.validate()?;
    vehicle.validate()?;
    if reference.is_empty() {
        return Err(Error::Argument("reference is empty".into()));
    }
    if (reference.dt - config.ts).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "reference interval {} does not match planner interval {}",
            reference.dt, config.ts
        )));
    }

    let n = reference.len();
    let mut states = Vec::with_capacity(n + 1);
    let mut inputs = Vec::with_capacity(n);
    let mut diagnostics = Vec::with_capacity(n);
    states.push(config.x_init);

    let mut warm: Option<Vec<ControlInput>> = None;
    let mut penalty_hint = None;
    for k in 0..n {
        let end = (k + config.horizon).min(n);
        let (sol, penalty) = solver::solve_horizon_staged(
            &states[k],
            &reference.ax[k..end],
            &reference.ay[k..end],
            config,
            vehicle,
            warm.as_deref(),
            penalty_hint,
        )?;
        inputs.push(sol.inputs[0]);
        states.push(sol.states[1]);
        diagnostics.push(StepDiagnostics {
            step: k,
            cost: sol.cost,
            iterations: sol.iterations,
            converged: sol.converged,
            max_violation: sol.max_violation,
        });
        warm = Some(shift_warm_start(&sol.inputs));
        penalty_hint = Some(penalty);
    }

    let ax = states.iter().map(|s| s.ax).collect();
    let ay = states
        .iter()
        .map(|s| steady_state_ay(s.vx, s.steer, vehicle))
        .collect();

    Ok(PlannedTrajectory {
        dt: config.ts,
        states,
        inputs,
        ax,
        ay,
        diagnostics,
    })
}
