//! Single-track ("bicycle") vehicle model with linear tires.
//!
//! The model carries eight states — planar pose, body-frame speeds, yaw rate,
//! steering angle, and longitudinal acceleration — and is driven by two rate
//! inputs (steering rate and longitudinal jerk), so both actuators are rate-
//! limited by construction. Lateral tire forces are linear in the slip angle
//! through `F = C·tan(α)`, valid for the small slip angles of normal driving.
//!
//! Discretization is classic fourth-order Runge–Kutta. The optimizer needs
//! exact sensitivities of the discrete step, so [`step_with_sensitivities`]
//! chains the analytic continuous Jacobians through the RK4 stages instead of
//! differentiating numerically.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// State vector layout: `[x, y, vx, vy, yaw, yaw_rate, steer, ax]`.
pub type StateVector = SVector<f64, 8>;
/// Input vector layout: `[steer_rate, jerk]`.
pub type InputVector = SVector<f64, 2>;
/// Square state Jacobian (continuous `A` or discrete `Φ`).
pub type StateMatrix = SMatrix<f64, 8, 8>;
/// Input Jacobian (continuous `B` or discrete `Γ`).
pub type InputMatrix = SMatrix<f64, 8, 2>;

/// Number of states.
pub const N_STATES: usize = 8;
/// Number of inputs.
pub const N_INPUTS: usize = 2;

/// Chassis and tire parameters of the single-track model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    /// Vehicle mass in kg.
    pub mass: f64,
    /// Yaw moment of inertia in kg·m².
    pub yaw_inertia: f64,
    /// Distance from the centre of gravity to the front axle in m.
    pub lf: f64,
    /// Distance from the centre of gravity to the rear axle in m.
    pub lr: f64,
    /// Front axle cornering stiffness in N/rad.
    pub cornering_front: f64,
    /// Rear axle cornering stiffness in N/rad.
    pub cornering_rear: f64,
}

impl Default for VehicleParams {
    /// Mid-size sedan values used throughout the examples and tests.
    fn default() -> Self {
        Self {
            mass: 1615.0,
            yaw_inertia: 2500.0,
            lf: 1.27,
            lr: 1.35,
            cornering_front: 80_000.0,
            cornering_rear: 80_000.0,
        }
    }
}

impl VehicleParams {
    /// Wheelbase `lf + lr` in m.
    pub fn wheelbase(&self) -> f64 {
        self.lf + self.lr
    }

    /// Checks that every parameter is finite and strictly positive.
    pub fn validate(&self) -> Result<()> {
        let entries = [
            ("mass", self.mass),
            ("yaw_inertia", self.yaw_inertia),
            ("lf", self.lf),
            ("lr", self.lr),
            ("cornering_front", self.cornering_front),
            ("cornering_rear", self.cornering_rear),
        ];
        for (name, value) in entries {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::Argument(format!(
                    "vehicle parameter `{name}` must be finite and > 0, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Full model state. Positions are in the ground frame, speeds in the body
/// frame; angles in rad, accelerations in m/s².
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    /// Ground-frame x position in m.
    pub x: f64,
    /// Ground-frame y position in m.
    pub y: f64,
    /// Body-frame longitudinal speed in m/s (must stay > 0).
    pub vx: f64,
    /// Body-frame lateral speed in m/s.
    pub vy: f64,
    /// Heading in rad (not wrapped).
    pub yaw: f64,
    /// Yaw rate in rad/s.
    pub yaw_rate: f64,
    /// Front steering angle in rad.
    pub steer: f64,
    /// Longitudinal acceleration state in m/s².
    pub ax: f64,
}

impl VehicleState {
    /// Packs the state into its vector layout.
    pub fn as_vector(&self) -> StateVector {
        StateVector::from_column_slice(&[
            self.x,
            self.y,
            self.vx,
            self.vy,
            self.yaw,
            self.yaw_rate,
            self.steer,
            self.ax,
        ])
    }

    /// Unpacks a state from its vector layout.
    pub fn from_vector(v: &StateVector) -> Self {
        Self {
            x: v[0],
            y: v[1],
            vx: v[2],
            vy: v[3],
            yaw: v[4],
            yaw_rate: v[5],
            steer: v[6],
            ax: v[7],
        }
    }
}

/// Rate inputs applied over one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Steering rate in rad/s.
    pub steer_rate: f64,
    /// Longitudinal jerk in m/s³.
    pub jerk: f64,
}

impl ControlInput {
    /// Packs the input into its vector layout.
    pub fn as_vector(&self) -> InputVector {
        InputVector::new(self.steer_rate, self.jerk)
    }

    /// Unpacks an input from its vector layout.
    pub fn from_vector(v: &InputVector) -> Self {
        Self {
            steer_rate: v[0],
            jerk: v[1],
        }
    }
}

/// Axle slip angles and the lateral forces they produce.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TireForces {
    /// Front slip angle in rad.
    pub slip_front: f64,
    /// Rear slip angle in rad.
    pub slip_rear: f64,
    /// Front lateral force in N.
    pub force_front: f64,
    /// Rear lateral force in N.
    pub force_rear: f64,
}

/// Half-angle beyond which `tan` leaves the model's domain.
const SLIP_LIMIT: f64 = std::f64::consts::FRAC_PI_2;

/// Internal RK4 substeps per discrete step.
///
/// The lateral tire dynamics have eigenvalue ≈ (Cf+Cr)/(m·vx), which reaches
/// ~99 1/s at the 1 m/s speed floor — far outside RK4's stability region for
/// a single 0.1 s step (unstable below ≈3.6 m/s). Ten substeps keep the
/// discrete map stable and accurate over the whole operating speed range
/// while the step interface (inputs held over `dt`) is unchanged.
const SUBSTEPS: usize = 10;

fn check_speed(vx: f64) -> Result<()> {
    if !(vx > 0.0) {
        return Err(Error::Domain(format!(
            "longitudinal speed must be > 0 for slip angles, got vx = {vx}"
        )));
    }
    Ok(())
}

/// Computes axle slip angles and linear-tire lateral forces.
///
/// Errors if `vx <= 0` or either slip angle reaches ±π/2, where the tire law
/// is undefined.
pub fn tire_forces(state: &VehicleState, params: &VehicleParams) -> Result<TireForces> {
    check_speed(state.vx)?;
    let slip_front = state.steer - (state.vy + params.lf * state.yaw_rate) / state.vx;
    let slip_rear = -(state.vy - params.lr * state.yaw_rate) / state.vx;
    for (name, slip) in [("front", slip_front), ("rear", slip_rear)] {
        if !slip.is_finite() || slip.abs() >= SLIP_LIMIT {
            return Err(Error::Domain(format!(
                "{name} slip angle {slip} rad outside (-pi/2, pi/2)"
            )));
        }
    }
    Ok(TireForces {
        slip_front,
        slip_rear,
        force_front: params.cornering_front * slip_front.tan(),
        force_rear: params.cornering_rear * slip_rear.tan(),
    })
}

/// Continuous-time state derivative `f(x, u)`.
pub fn derivatives(
    state: &VehicleState,
    input: &ControlInput,
    params: &VehicleParams,
) -> Result<StateVector> {
    let tires = tire_forces(state, params)?;
    let (sin_yaw, cos_yaw) = state.yaw.sin_cos();
    let (sin_steer, cos_steer) = state.steer.sin_cos();
    let m = params.mass;

    Ok(StateVector::from_column_slice(&[
        state.vx * cos_yaw - state.vy * sin_yaw,
        state.vx * sin_yaw + state.vy * cos_yaw,
        state.ax - tires.force_front * sin_steer / m + state.vy * state.yaw_rate,
        (tires.force_front * cos_steer + tires.force_rear) / m - state.vx * state.yaw_rate,
        state.yaw_rate,
        (params.lf * tires.force_front * cos_steer - params.lr * tires.force_rear)
            / params.yaw_inertia,
        input.steer_rate,
        input.jerk,
    ]))
}

/// Steady-state lateral acceleration `vx²·steer / wheelbase`.
///
/// This is the kinematic cornering value the planner tracks; it ignores the
/// transient slip dynamics.
pub fn steady_state_ay(vx: f64, steer: f64, params: &VehicleParams) -> f64 {
    vx * vx * steer / params.wheelbase()
}

/// A single RK4 substep of length `h`.
fn rk4_substep(
    state: &VehicleState,
    input: &ControlInput,
    h: f64,
    params: &VehicleParams,
) -> Result<VehicleState> {
    let x = state.as_vector();
    let k1 = derivatives(state, input, params)?;
    let k2 = derivatives(&VehicleState::from_vector(&(x + k1 * (h / 2.0))), input, params)?;
    let k3 = derivatives(&VehicleState::from_vector(&(x + k2 * (h / 2.0))), input, params)?;
    let k4 = derivatives(&VehicleState::from_vector(&(x + k3 * h)), input, params)?;
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    Ok(VehicleState::from_vector(&next))
}

/// One discrete step of length `dt` (RK4 with internal substepping).
///
/// Inputs are held constant over the whole step. Errors if any stage
/// evaluation leaves the model domain.
pub fn step(
    state: &VehicleState,
    input: &ControlInput,
    dt: f64,
    params: &VehicleParams,
) -> Result<VehicleState> {
    let h = dt / SUBSTEPS as f64;
    let mut s = *state;
    for _ in 0..SUBSTEPS {
        s = rk4_substep(&s, input, h, params)?;
    }
    Ok(s)
}

/// Continuous-time Jacobians `A = ∂f/∂x` and `B = ∂f/∂u` at `(state, input)`.
///
/// `B` is constant for this model (the inputs are pure integrator rates) but
/// is returned alongside `A` to keep the sensitivity chain uniform.
pub fn jacobians(
    state: &VehicleState,
    params: &VehicleParams,
) -> Result<(StateMatrix, InputMatrix)> {
    let tires = tire_forces(state, params)?;
    let (sin_yaw, cos_yaw) = state.yaw.sin_cos();
    let (sin_steer, cos_steer) = state.steer.sin_cos();
    let m = params.mass;
    let izz = params.yaw_inertia;
    let (lf, lr) = (params.lf, params.lr);
    let vx = state.vx;

    // d(tan α)/dα = sec²α; slip partials from α_f = steer − (vy + lf·r)/vx,
    // α_r = −(vy − lr·r)/vx.
    let sec2_f = 1.0 / tires.slip_front.cos().powi(2);
    let sec2_r = 1.0 / tires.slip_rear.cos().powi(2);
    let dff = params.cornering_front * sec2_f; // dFyf/dα_f
    let dfr = params.cornering_rear * sec2_r; // dFyr/dα_r

    let daf_dvx = (state.vy + lf * state.yaw_rate) / (vx * vx);
    let daf_dvy = -1.0 / vx;
    let daf_dr = -lf / vx;
    let dar_dvx = (state.vy - lr * state.yaw_rate) / (vx * vx);
    let dar_dvy = -1.0 / vx;
    let dar_dr = lr / vx;

    let mut a = StateMatrix::zeros();

    // Row 0: dX = vx·cosψ − vy·sinψ
    a[(0, 2)] = cos_yaw;
    a[(0, 3)] = -sin_yaw;
    a[(0, 4)] = -state.vx * sin_yaw - state.vy * cos_yaw;
    // Row 1: dY = vx·sinψ + vy·cosψ
    a[(1, 2)] = sin_yaw;
    a[(1, 3)] = cos_yaw;
    a[(1, 4)] = state.vx * cos_yaw - state.vy * sin_yaw;
    // Row 2: dvx = ax − Fyf·sinδ/m + vy·r
    a[(2, 2)] = -dff * daf_dvx * sin_steer / m;
    a[(2, 3)] = -dff * daf_dvy * sin_steer / m + state.yaw_rate;
    a[(2, 5)] = -dff * daf_dr * sin_steer / m + state.vy;
    a[(2, 6)] = -(dff * sin_steer + tires.force_front * cos_steer) / m;
    a[(2, 7)] = 1.0;
    // Row 3: dvy = (Fyf·cosδ + Fyr)/m − vx·r
    a[(3, 2)] = (dff * daf_dvx * cos_steer + dfr * dar_dvx) / m - state.yaw_rate;
    a[(3, 3)] = (dff * daf_dvy * cos_steer + dfr * dar_dvy) / m;
    a[(3, 5)] = (dff * daf_dr * cos_steer + dfr * dar_dr) / m - state.vx;
    a[(3, 6)] = (dff * cos_steer - tires.force_front * sin_steer) / m;
    // Row 4: dψ = r
    a[(4, 5)] = 1.0;
    // Row 5: dr = (lf·Fyf·cosδ − lr·Fyr)/Izz
    a[(5, 2)] = (lf * dff * daf_dvx * cos_steer - lr * dfr * dar_dvx) / izz;
    a[(5, 3)] = (lf * dff * daf_dvy * cos_steer - lr * dfr * dar_dvy) / izz;
    a[(5, 5)] = (lf * dff * daf_dr * cos_steer - lr * dfr * dar_dr) / izz;
    a[(5, 6)] = lf * (dff * cos_steer - tires.force_front * sin_steer) / izz;
    // Rows 6 and 7 are pure integrators of the inputs.

    let mut b = InputMatrix::zeros();
    b[(6, 0)] = 1.0;
    b[(7, 1)] = 1.0;

    Ok((a, b))
}

/// One RK4 substep of length `h` with its exact sensitivities.
fn substep_with_sensitivities(
    state: &VehicleState,
    input: &ControlInput,
    h: f64,
    params: &VehicleParams,
) -> Result<(VehicleState, StateMatrix, InputMatrix)> {
    let x = state.as_vector();
    let identity = StateMatrix::identity();

    let s1 = *state;
    let k1 = derivatives(&s1, input, params)?;
    let (a1, b) = jacobians(&s1, params)?;

    let s2 = VehicleState::from_vector(&(x + k1 * (h / 2.0)));
    let k2 = derivatives(&s2, input, params)?;
    let (a2, _) = jacobians(&s2, params)?;

    let s3 = VehicleState::from_vector(&(x + k2 * (h / 2.0)));
    let k3 = derivatives(&s3, input, params)?;
    let (a3, _) = jacobians(&s3, params)?;

    let s4 = VehicleState::from_vector(&(x + k3 * h));
    let k4 = derivatives(&s4, input, params)?;
    let (a4, _) = jacobians(&s4, params)?;

    // Stage sensitivities w.r.t. the substep's initial state and held input.
    let k1x = a1;
    let k2x = a2 * (identity + k1x * (h / 2.0));
    let k3x = a3 * (identity + k2x * (h / 2.0));
    let k4x = a4 * (identity + k3x * h);

    let k1u = b;
    let k2u = a2 * k1u * (h / 2.0) + b;
    let k3u = a3 * k2u * (h / 2.0) + b;
    let k4u = a4 * k3u * h + b;

    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    let phi = identity + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
    let gamma = (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * (h / 6.0);

    Ok((VehicleState::from_vector(&next), phi, gamma))
}

/// One discrete step together with the exact sensitivities `Φ = ∂x⁺/∂x` and
/// `Γ = ∂x⁺/∂u` of that step.
///
/// The continuous Jacobians are chained through every RK4 stage of every
/// substep, so `Φ`/`Γ` differentiate the *discrete* map exactly (up to
/// rounding), not just the continuous dynamics.
pub fn step_with_sensitivities(
    state: &VehicleState,
    input: &ControlInput,
    dt: f64,
    params: &VehicleParams,
) -> Result<(VehicleState, StateMatrix, InputMatrix)> {
    let h = dt / SUBSTEPS as f64;
    let mut s = *state;
    let mut phi = StateMatrix::identity();
    let mut gamma = InputMatrix::zeros();
    for _ in 0..SUBSTEPS {
        let (next, phi_i, gamma_i) = substep_with_sensitivities(&s, input, h, params)?;
        // x⁺ depends on x through every earlier substep; on u both directly
        // and through the carried state.
        phi = phi_i * phi;
        gamma = phi_i * gamma + gamma_i;
        s = next;
    }
    Ok((s, phi, gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    /// Probe state used by the hand-computed derivative checks.
    fn probe_state() -> VehicleState {
        VehicleState {
            x: 20.0,
            y: 30.0,
            vx: 8.0,
            vy: 0.3,
            yaw: 0.4,
            yaw_rate: 0.2,
            steer: 0.06,
            ax: 0.9,
        }
    }

    /// Random state from the operating envelope: lateral speed and yaw rate
    /// scale with vx so the slip angles stay in the range normal driving
    /// produces.
    fn random_state(rng: &mut ChaCha8Rng) -> VehicleState {
        let vx = rng.random_range(3.0..11.0);
        VehicleState {
            x: rng.random_range(0.0..175.0),
            y: rng.random_range(0.0..70.0),
            vx,
            vy: rng.random_range(-0.04..0.04) * vx,
            yaw: rng.random_range(-3.0..3.0),
            yaw_rate: rng.random_range(-0.12..0.12) * vx,
            steer: rng.random_range(-0.34..0.34),
            ax: rng.random_range(-4.0..2.5),
        }
    }

    fn random_input(rng: &mut ChaCha8Rng) -> ControlInput {
        ControlInput {
            steer_rate: rng.random_range(-0.25..0.25),
            jerk: rng.random_range(-4.0..2.3),
        }
    }

    #[test]
    fn front_tire_force_matches_hand_value() {
        // Slip reduces to the steering angle when vy = r = 0.
        let state = VehicleState {
            vx: 10.0,
            steer: 0.05,
            ..Default::default()
        };
        let tires = tire_forces(&state, &params()).unwrap();
        assert_relative_eq!(tires.slip_front, 0.05, max_relative = 1e-12);
        assert_relative_eq!(tires.force_front, 4003.3366700431034, max_relative = 1e-12);
        assert_relative_eq!(tires.force_rear, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rear_tire_force_matches_hand_value() {
        // α_r = −(vy − lr·r)/vx = −(1 − 0.675)/10 = −0.0325 rad.
        let state = VehicleState {
            vx: 10.0,
            vy: 1.0,
            yaw_rate: 0.5,
            ..Default::default()
        };
        let tires = tire_forces(&state, &params()).unwrap();
        assert_relative_eq!(tires.slip_rear, -0.0325, max_relative = 1e-12);
        assert_relative_eq!(tires.force_rear, -2600.9158035956316, max_relative = 1e-12);
    }

    #[test]
    fn derivatives_match_hand_values() {
        let d = derivatives(&probe_state(), &ControlInput { steer_rate: 0.1, jerk: -0.5 }, &params())
            .unwrap();
        assert_relative_eq!(d[0], 7.251662449330485, max_relative = 1e-12);
        assert_relative_eq!(d[1], 3.39166503667007, max_relative = 1e-12);
        assert_relative_eq!(d[2], 0.9874765513334032, max_relative = 1e-12);
        assert_relative_eq!(d[3], -2.2431522439438587, max_relative = 1e-12);
        assert_relative_eq!(d[4], 0.2, max_relative = 1e-12);
        assert_relative_eq!(d[5], -0.213253490218131, max_relative = 1e-12);
        assert_relative_eq!(d[6], 0.1, max_relative = 1e-12);
        assert_relative_eq!(d[7], -0.5, max_relative = 1e-12);
    }

    #[test]
    fn steady_state_ay_matches_hand_values() {
        let p = params();
        assert_relative_eq!(steady_state_ay(5.0, 0.0776, &p), 0.7404580152671755, max_relative = 1e-12);
        assert_relative_eq!(steady_state_ay(2.0, 0.0194, &p), 0.029618320610687022, max_relative = 1e-12);
        // Scales with the square of speed at fixed steer.
        assert_relative_eq!(
            steady_state_ay(10.0, 0.0776, &p),
            4.0 * steady_state_ay(5.0, 0.0776, &p),
            max_relative = 1e-12
        );
    }

    #[test]
    fn steer_and_ax_integrate_inputs_exactly() {
        // The last two states are pure integrators, so RK4 reproduces
        // steer + dt·steer_rate and ax + dt·jerk without truncation error.
        let input = ControlInput { steer_rate: 0.07, jerk: -1.3 };
        let next = step(&probe_state(), &input, 0.1, &params()).unwrap();
        assert_relative_eq!(next.steer, probe_state().steer + 0.1 * 0.07, max_relative = 1e-14);
        assert_relative_eq!(next.ax, probe_state().ax + 0.1 * -1.3, max_relative = 1e-14);
    }

    #[test]
    fn straight_running_keeps_lateral_states_at_zero() {
        // With steer = vy = r = 0 every lateral coupling term is exactly zero,
        // so the lateral states stay bit-exact zero no matter the jerk input.
        let mut state = VehicleState {
            vx: 6.0,
            yaw: 0.7,
            ax: 1.0,
            ..Default::default()
        };
        for _ in 0..50 {
            state = step(&state, &ControlInput { steer_rate: 0.0, jerk: -0.2 }, 0.1, &params())
                .unwrap();
            assert_eq!(state.vy, 0.0);
            assert_eq!(state.yaw_rate, 0.0);
            assert_eq!(state.steer, 0.0);
        }
        assert_eq!(state.yaw, 0.7);
    }

    #[test]
    fn step_is_translation_equivariant() {
        // Position enters the dynamics only as an output, so shifting the
        // start position shifts the result bit-exactly.
        let input = ControlInput { steer_rate: 0.05, jerk: 0.4 };
        let base = probe_state();
        let mut shifted = base;
        shifted.x += 12.5;
        shifted.y -= 7.25;
        let a = step(&base, &input, 0.1, &params()).unwrap();
        let b = step(&shifted, &input, 0.1, &params()).unwrap();
        // Position sums re-associate across substeps, so allow rounding there;
        // the velocity-level states never see the position at all.
        assert_relative_eq!(b.x, a.x + 12.5, epsilon = 1e-12);
        assert_relative_eq!(b.y, a.y - 7.25, epsilon = 1e-12);
        assert_eq!(b.vx, a.vx);
        assert_eq!(b.vy, a.vy);
        assert_eq!(b.yaw, a.yaw);
        assert_eq!(b.yaw_rate, a.yaw_rate);
    }

    #[test]
    fn continuous_jacobian_matches_finite_differences() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-6;
        for _ in 0..100 {
            let state = random_state(&mut rng);
            let input = random_input(&mut rng);
            let (a, b) = jacobians(&state, &p).unwrap();

            let x0 = state.as_vector();
            for j in 0..N_STATES {
                let mut hi = x0;
                let mut lo = x0;
                hi[j] += h;
                lo[j] -= h;
                let fhi = derivatives(&VehicleState::from_vector(&hi), &input, &p).unwrap();
                let flo = derivatives(&VehicleState::from_vector(&lo), &input, &p).unwrap();
                for i in 0..N_STATES {
                    let fd = (fhi[i] - flo[i]) / (2.0 * h);
                    let denom = a[(i, j)].abs().max(1e-3);
                    assert!(
                        ((fd - a[(i, j)]) / denom).abs() < 1e-4,
                        "A[({i},{j})]: analytic {} vs fd {fd}",
                        a[(i, j)]
                    );
                }
            }

            let u0 = input.as_vector();
            for j in 0..N_INPUTS {
                let mut hi = u0;
                let mut lo = u0;
                hi[j] += h;
                lo[j] -= h;
                let fhi = derivatives(&state, &ControlInput::from_vector(&hi), &p).unwrap();
                let flo = derivatives(&state, &ControlInput::from_vector(&lo), &p).unwrap();
                for i in 0..N_STATES {
                    let fd = (fhi[i] - flo[i]) / (2.0 * h);
                    assert!((fd - b[(i, j)]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn discrete_sensitivities_match_finite_differences() {
        let p = params();
        let dt = 0.1;
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let h = 1e-6;
        for _ in 0..25 {
            let state = random_state(&mut rng);
            let input = random_input(&mut rng);
            let (_, phi, gamma) = step_with_sensitivities(&state, &input, dt, &p).unwrap();

            let x0 = state.as_vector();
            for j in 0..N_STATES {
                let mut hi = x0;
                let mut lo = x0;
                hi[j] += h;
                lo[j] -= h;
                let shi = step(&VehicleState::from_vector(&hi), &input, dt, &p).unwrap().as_vector();
                let slo = step(&VehicleState::from_vector(&lo), &input, dt, &p).unwrap().as_vector();
                for i in 0..N_STATES {
                    let fd = (shi[i] - slo[i]) / (2.0 * h);
                    let denom = phi[(i, j)].abs().max(1e-3);
                    assert!(
                        ((fd - phi[(i, j)]) / denom).abs() < 1e-4,
                        "Phi[({i},{j})]: analytic {} vs fd {fd}",
                        phi[(i, j)]
                    );
                }
            }

            let u0 = input.as_vector();
            for j in 0..N_INPUTS {
                let mut hi = u0;
                let mut lo = u0;
                hi[j] += h;
                lo[j] -= h;
                let shi = step(&state, &ControlInput::from_vector(&hi), dt, &p).unwrap().as_vector();
                let slo = step(&state, &ControlInput::from_vector(&lo), dt, &p).unwrap().as_vector();
                for i in 0..N_STATES {
                    let fd = (shi[i] - slo[i]) / (2.0 * h);
                    let denom = gamma[(i, j)].abs().max(1e-3);
                    assert!(((fd - gamma[(i, j)]) / denom).abs() < 1e-4);
                }
            }
        }
    }

    /// Reference integration with many small RK4 sub-steps.
    fn fine_step(state: &VehicleState, input: &ControlInput, dt: f64, n: usize) -> VehicleState {
        let mut s = *state;
        for _ in 0..n {
            s = step(&s, input, dt / n as f64, &params()).unwrap();
        }
        s
    }

    #[test]
    fn rk4_observed_order_is_at_least_three() {
        // Halving the step must shrink the error against a fine reference by
        // at least 8x (RK4's nominal factor is 16).
        let state = probe_state();
        let input = ControlInput { steer_rate: 0.1, jerk: 0.8 };
        let reference = fine_step(&state, &input, 0.2, 2000).as_vector();
        let coarse = step(&state, &input, 0.2, &params()).unwrap().as_vector();
        let halved = fine_step(&state, &input, 0.2, 2).as_vector();
        let err_coarse = (coarse - reference).norm();
        let err_halved = (halved - reference).norm();
        assert!(err_coarse > 0.0);
        assert!(
            err_coarse / err_halved >= 8.0,
            "error ratio {} too small",
            err_coarse / err_halved
        );
    }

    /// Lateral equilibrium (vy, r) for constant vx and steer, via Newton on
    /// the two lateral derivative rows.
    fn lateral_equilibrium(vx: f64, steer: f64) -> (f64, f64) {
        let p = params();
        let mut vy = 0.0;
        let mut r = 0.0;
        for _ in 0..30 {
            let s = VehicleState { vx, vy, yaw_rate: r, steer, ..Default::default() };
            let f = derivatives(&s, &ControlInput::default(), &p).unwrap();
            let (a, _) = jacobians(&s, &p).unwrap();
            let det = a[(3, 3)] * a[(5, 5)] - a[(3, 5)] * a[(5, 3)];
            vy -= (f[3] * a[(5, 5)] - f[5] * a[(3, 5)]) / det;
            r -= (f[5] * a[(3, 3)] - f[3] * a[(5, 3)]) / det;
        }
        (vy, r)
    }

    #[test]
    fn single_step_close_to_fine_integration() {
        // The discrete step must agree with a 100x finer integration of the
        // same dynamics across the operating envelope: arbitrary straight-
        // line states and steady-cornering states (the stiff lateral modes
        // carry no transient there, so the comparison isolates the
        // integrator's own truncation error).
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..30 {
            let state = VehicleState {
                x: rng.random_range(0.0..175.0),
                y: rng.random_range(0.0..70.0),
                vx: rng.random_range(1.0..11.0),
                yaw: rng.random_range(-3.0..3.0),
                ax: rng.random_range(-4.0..2.5),
                ..Default::default()
            };
            let input = ControlInput { steer_rate: 0.0, jerk: rng.random_range(-4.0..2.3) };
            let one = step(&state, &input, 0.1, &params()).unwrap().as_vector();
            let fine = fine_step(&state, &input, 0.1, 100).as_vector();
            let max_diff = (one - fine).amax();
            assert!(max_diff < 1e-6, "straight-line step deviates by {max_diff}");
        }
        for _ in 0..30 {
            let vx = rng.random_range(5.0..11.0);
            let steer = rng.random_range(-0.05..0.05);
            let (vy, r) = lateral_equilibrium(vx, steer);
            let state = VehicleState {
                x: 80.0,
                y: 35.0,
                vx,
                vy,
                yaw: rng.random_range(-3.0..3.0),
                yaw_rate: r,
                steer,
                ax: 0.0,
            };
            let input = ControlInput::default();
            let one = step(&state, &input, 0.1, &params()).unwrap().as_vector();
            let fine = fine_step(&state, &input, 0.1, 100).as_vector();
            let max_diff = (one - fine).amax();
            assert!(max_diff < 1e-6, "steady-cornering step deviates by {max_diff}");
        }
    }

    #[test]
    fn zero_speed_is_rejected() {
        let state = VehicleState::default();
        assert!(matches!(
            tire_forces(&state, &params()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn extreme_slip_is_rejected() {
        // vy/vx alone puts the rear slip angle past π/2.
        let state = VehicleState {
            vx: 0.1,
            vy: 2.0,
            ..Default::default()
        };
        assert!(matches!(
            tire_forces(&state, &params()),
            Err(Error::Domain(_))
        ));
    }
}
