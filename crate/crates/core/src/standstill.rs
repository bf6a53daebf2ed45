//! Splices full stops into a planned trajectory.
//!
//! The planner keeps longitudinal speed above a positive floor, so stops are
//! added afterwards: around each requested mark the speed profile is replaced
//! by a constant-deceleration ramp to zero, a stationary dwell, and a
//! constant-acceleration ramp back to the local planned speed. The path
//! geometry is never altered — new samples are obtained by re-parameterizing
//! the original polyline by travelled distance, so every output position lies
//! on the planned path.

use crate::error::{Error, Result};
use crate::planner::PlannedTrajectory;
use crate::trace::StandstillMark;
use crate::vehicle::{steady_state_ay, ControlInput, VehicleParams, VehicleState};

/// Phase durations are rounded to this resolution, s.
const PHASE_RESOLUTION: f64 = 0.1;

/// One integrated sample of a constant-acceleration phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSample {
    /// Acceleration held over the phase, m/s².
    pub accel: f64,
    /// Speed after this step, m/s.
    pub speed: f64,
    /// Distance travelled since the phase began, m.
    pub distance: f64,
}

/// A complete constant-acceleration speed transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StopProfile {
    /// Speed entering the phase, m/s.
    pub v_start: f64,
    /// Speed leaving the phase, m/s.
    pub v_end: f64,
    /// Requested (signed) acceleration, m/s².
    pub a_desired: f64,
    /// Phase duration after rounding to 0.1 s, s.
    pub t_phase: f64,
    /// Constant acceleration actually applied so the phase ends exactly at
    /// `v_end`, m/s².
    pub a_const: f64,
    /// Stationary hold duration (only meaningful for stop profiles), s.
    pub dwell: f64,
    /// Integrated samples at interval `T`, excluding the entry sample.
    pub samples: Vec<ProfileSample>,
}

impl StopProfile {
    /// Builds the phase for a transition from `v_start` to `v_end` under the
    /// requested acceleration, sampled at interval `t_step`.
    pub fn new(
        v_start: f64,
        v_end: f64,
        a_desired: f64,
        dwell: f64,
        t_step: f64,
    ) -> Result<Self> {
        if !(dwell.is_finite() && dwell >= 0.0) {
            return Err(Error::Argument(format!(
                "dwell must be non-negative, got {dwell}"
            )));
        }
        let t_phase = stop_timing(v_start, v_end, a_desired)?;
        let a_const = constant_accel(v_start, v_end, t_phase)?;
        let mut samples = integrate_profile(v_start, a_const, t_phase, t_step)?;
        // The recurrence lands within rounding error of the target; snap the
        // final sample so splicing code can rely on exact equality (a full
        // stop really reads 0.0).
        if let Some(last) = samples.last_mut() {
            last.speed = v_end;
        }
        Ok(Self {
            v_start,
            v_end,
            a_desired,
            t_phase,
            a_const,
            dwell,
            samples,
        })
    }

    /// Total distance covered by the phase, m.
    pub fn displacement(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.distance)
    }
}

/// Duration of a constant-acceleration transition from `v_start` to `v_end`
/// under the desired acceleration, rounded half-away-from-zero to one
/// decimal place.
pub fn stop_timing(v_start: f64, v_end: f64, a_desired: f64) -> Result<f64> {
    if a_desired == 0.0 || !a_desired.is_finite() {
        return Err(Error::Argument(format!(
            "desired acceleration must be non-zero and finite, got {a_desired}"
        )));
    }
    let dv = v_end - v_start;
    if dv == 0.0 {
        return Ok(0.0);
    }
    if dv.signum() != a_desired.signum() {
        return Err(Error::Argument(format!(
            "speed change {dv} and desired acceleration {a_desired} disagree in sign"
        )));
    }
    let t = dv / a_desired;
    // Round in units of the resolution and divide back so the result is the
    // nearest representable multiple (multiplying by 0.1 would re-introduce
    // rounding noise).
    let scale = 1.0 / PHASE_RESOLUTION;
    Ok((t * scale).round() / scale)
}

/// The constant acceleration that covers `v_start → v_end` in exactly
/// `t_phase` seconds.
pub fn constant_accel(v_start: f64, v_end: f64, t_phase: f64) -> Result<f64> {
    if t_phase == 0.0 {
        return if v_start == v_end {
            Ok(0.0)
        } else {
            Err(Error::Argument(format!(
                "zero phase duration cannot cover a speed change of {}",
                v_end - v_start
            )))
        };
    }
    if !(t_phase.is_finite() && t_phase > 0.0) {
        return Err(Error::Argument(format!(
            "phase duration must be positive, got {t_phase}"
        )));
    }
    Ok((v_end - v_start) / t_phase)
}

/// Integrates a constant-acceleration phase at interval `t_step`, returning
/// one sample per step (the entry state `v_start, s=0` is not included).
///
/// The recurrences are the exact constant-acceleration kinematics
/// `v ← v + a·T` and `s ← s + v·T + ½·a·T²` (with the pre-update speed), so
/// the closed-form displacement identity `Δs = (v_end² − v_start²)/(2a)`
/// holds to rounding error.
pub fn integrate_profile(
    v_start: f64,
    a_const: f64,
    t_phase: f64,
    t_step: f64,
) -> Result<Vec<ProfileSample>> {
    if !(t_step.is_finite() && t_step > 0.0) {
        return Err(Error::Argument(format!(
            "sample interval must be positive, got {t_step}"
        )));
    }
    let steps_exact = t_phase / t_step;
    let steps = steps_exact.round();
    if (steps_exact - steps).abs() > 1e-6 {
        return Err(Error::Argument(format!(
            "phase duration {t_phase} is not a multiple of the sample interval {t_step}"
        )));
    }
    let steps = steps as usize;
    let mut samples = Vec::with_capacity(steps);
    let mut v = v_start;
    let mut s = 0.0;
    for _ in 0..steps {
        s += v * t_step + 0.5 * a_const * t_step * t_step;
        v += a_const * t_step;
        samples.push(ProfileSample {
            accel: a_const,
            speed: v,
            distance: s,
        });
    }
    Ok(samples)
}

/// A point on the original planned path, interpolated by arclength.
struct PathPoint {
    x: f64,
    y: f64,
    yaw: f64,
    steer: f64,
    vy: f64,
    yaw_rate: f64,
    /// Original planned speed at this point, used to rescale the lateral
    /// velocity states to the new speed.
    vx: f64,
}

/// Linear interpolation of the original state sequence at arclength `s`,
/// starting the segment search at `hint` (arclengths are queried in
/// non-decreasing order).
fn interpolate_path(
    states: &[VehicleState],
    arcs: &[f64],
    s: f64,
    hint: &mut usize,
) -> PathPoint {
    while *hint + 1 < arcs.len() && arcs[*hint + 1] < s {
        *hint += 1;
    }
    let i = *hint;
    if i + 1 >= arcs.len() {
        let last = states[states.len() - 1];
        return PathPoint {
            x: last.x,
            y: last.y,
            yaw: last.yaw,
            steer: last.steer,
            vy: last.vy,
            yaw_rate: last.yaw_rate,
            vx: last.vx,
        };
    }
    let seg = arcs[i + 1] - arcs[i];
    let f = if seg > 0.0 {
        ((s - arcs[i]) / seg).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let a = &states[i];
    let b = &states[i + 1];
    let lerp = |u: f64, v: f64| u + f * (v - u);
    PathPoint {
        x: lerp(a.x, b.x),
        y: lerp(a.y, b.y),
        yaw: lerp(a.yaw, b.yaw),
        steer: lerp(a.steer, b.steer),
        vy: lerp(a.vy, b.vy),
        yaw_rate: lerp(a.yaw_rate, b.yaw_rate),
        vx: lerp(a.vx, b.vx),
    }
}

/// Builds a state from a path point and a new speed/acceleration pair. The
/// lateral states scale with the speed ratio so a slower pass over the same
/// geometry yields proportionally slower lateral motion.
fn state_at(point: &PathPoint, vx: f64, ax: f64) -> VehicleState {
    let ratio = if point.vx.abs() > 1e-12 {
        vx / point.vx
    } else {
        0.0
    };
    VehicleState {
        x: point.x,
        y: point.y,
        vx,
        vy: point.vy * ratio,
        yaw: point.yaw,
        yaw_rate: point.yaw_rate * ratio,
        steer: point.steer,
        ax,
    }
}

/// Inserts full stops into a planned trajectory at the marked samples.
///
/// Each mark's `index` addresses the sample of the *input* trajectory where
/// the deceleration begins; `desired_decel`'s magnitude drives both the
/// braking ramp and the acceleration back to the local planned speed, and
/// `dwell` is the stationary span (`target_speed` is detection metadata and
/// is ignored here). Marks must be sorted and non-overlapping: each stop's
/// braking, dwell and recovery must finish before the next mark's sample.
/// Timing is re-derived from travelled distance, so output positions are a
/// subset of (points on) the original path; the planning diagnostics are
/// carried over unchanged.
pub fn insert_standstills(
    traj: &PlannedTrajectory,
    marks: &[StandstillMark],
    vehicle: &VehicleParams,
) -> Result<PlannedTrajectory> {
    if marks.is_empty() {
        return Ok(traj.clone());
    }
    if traj.states.len() < 2 {
        return Err(Error::Argument(
            "trajectory too short for standstill insertion".into(),
        ));
    }
    let dt = traj.dt;
    let arcs = traj.arclengths();
    let total_path = *arcs.last().unwrap();

    let mut states: Vec<VehicleState> = Vec::with_capacity(traj.states.len());
    // First original sample not yet copied out.
    let mut next_original = 0usize;
    let mut previous_mark: Option<usize> = None;

    for mark in marks {
        if let Some(prev) = previous_mark {
            if mark.index <= prev {
                return Err(Error::StopsOverlap {
                    first: prev,
                    second: mark.index,
                });
            }
        }
        if mark.index >= traj.states.len() {
            return Err(Error::Argument(format!(
                "mark index {} outside trajectory of {} samples",
                mark.index,
                traj.states.len()
            )));
        }
        if mark.index < next_original {
            // The previous stop's ramps extend past this mark's sample.
            return Err(Error::StopsOverlap {
                first: previous_mark.unwrap_or(0),
                second: mark.index,
            });
        }
        if !(mark.desired_decel.is_finite() && mark.desired_decel < 0.0) {
            return Err(Error::Argument(format!(
                "mark {} desired deceleration must be negative, got {}",
                mark.index, mark.desired_decel
            )));
        }

        // Copy the untouched stretch up to and including the mark sample,
        // which doubles as the entry state of the braking ramp.
        states.extend_from_slice(&traj.states[next_original..=mark.index]);

        let v_local = traj.states[mark.index].vx;
        let decel_magnitude = -mark.desired_decel;
        let braking = StopProfile::new(v_local, 0.0, -decel_magnitude, mark.dwell, dt)?;
        let recovery = StopProfile::new(0.0, v_local, decel_magnitude, 0.0, dt)?;

        let s0 = arcs[mark.index];
        let s_stop = s0 + braking.displacement();
        let s_end = s_stop + recovery.displacement();
        if s_end > total_path {
            return Err(Error::PathExhausted {
                mark: mark.index,
                needed: s_end - s0,
                available: total_path - s0,
            });
        }

        let mut hint = mark.index;
        for sample in &braking.samples {
            let point = interpolate_path(&traj.states, &arcs, s0 + sample.distance, &mut hint);
            states.push(state_at(&point, sample.speed, sample.accel));
        }

        // Stationary dwell: the braking ramp already ends on one zero-speed
        // sample, so `round(dwell/dt)` further frozen samples make the
        // zero-speed block span exactly `dwell` seconds.
        let stop_point = interpolate_path(&traj.states, &arcs, s_stop, &mut hint);
        let dwell_samples = (mark.dwell / dt).round() as usize;
        for _ in 0..dwell_samples {
            states.push(state_at(&stop_point, 0.0, 0.0));
        }

        for sample in &recovery.samples {
            let point = interpolate_path(&traj.states, &arcs, s_stop + sample.distance, &mut hint);
            states.push(state_at(&point, sample.speed, sample.accel));
        }

        // Resume the original timeline at the first sample past the ramps.
        let mut resume = mark.index;
        while resume < arcs.len() && arcs[resume] < s_end {
            resume += 1;
        }
        next_original = resume;
        previous_mark = Some(mark.index);
    }
    states.extend_from_slice(&traj.states[next_original..]);

    // Rebuild the rate inputs by differencing the integrator states they
    // drive; both are exact inverses of the model's input integration.
    let inputs: Vec<ControlInput> = states
        .windows(2)
        .map(|pair| ControlInput {
            steer_rate: (pair[1].steer - pair[0].steer) / dt,
            jerk: (pair[1].ax - pair[0].ax) / dt,
        })
        .collect();
    let ax = states.iter().map(|s| s.ax).collect();
    let ay = states
        .iter()
        .map(|s| steady_state_ay(s.vx, s.steer, vehicle))
        .collect();

    Ok(PlannedTrajectory {
        dt,
        states,
        inputs,
        ax,
        ay,
        diagnostics: traj.diagnostics.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::StepDiagnostics;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stop_timing_rounds_to_one_decimal() {
        assert_eq!(stop_timing(2.0, 0.0, -1.0).unwrap(), 2.0);
        assert_eq!(stop_timing(3.0, 3.0, -1.0).unwrap(), 0.0);
        assert_eq!(stop_timing(0.0, 2.0, 0.83).unwrap(), 2.4);
        // Half-away-from-zero: 2.45 s rounds up, not to even.
        assert_relative_eq!(
            stop_timing(0.0, 2.45, 1.0).unwrap(),
            2.5,
            max_relative = 1e-12
        );
    }

    #[test]
    fn stop_timing_rejects_bad_requests() {
        assert!(matches!(
            stop_timing(2.0, 0.0, 0.0),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            stop_timing(2.0, 0.0, 1.0),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            stop_timing(0.0, 2.0, -1.0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn constant_accel_matches_hand_values() {
        assert_eq!(constant_accel(2.0, 0.0, 2.0).unwrap(), -1.0);
        assert_relative_eq!(
            constant_accel(0.0, 2.0, 2.4).unwrap(),
            0.8333333333333334,
            max_relative = 1e-15
        );
        assert_eq!(constant_accel(3.0, 3.0, 0.0).unwrap(), 0.0);
        assert!(matches!(
            constant_accel(3.0, 4.0, 0.0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn integrate_profile_uniform_motion() {
        let samples = integrate_profile(2.0, 0.0, 0.3, 0.1).unwrap();
        let distances: Vec<f64> = samples.iter().map(|s| s.distance).collect();
        assert_eq!(samples.len(), 3);
        for (got, want) in distances.iter().zip([0.2, 0.4, 0.6]) {
            assert_relative_eq!(*got, want, max_relative = 1e-12);
        }
        assert!(samples.iter().all(|s| s.speed == 2.0));
    }

    #[test]
    fn integrate_profile_matches_closed_form_kinematics() {
        // Braking 2 → 0 m/s at −1 m/s²: distance equals v²/(2|a|) = 2 m.
        let samples = integrate_profile(2.0, -1.0, 2.0, 0.1).unwrap();
        let last = samples.last().unwrap();
        assert_relative_eq!(last.speed, 0.0, epsilon = 1e-12);
        assert_relative_eq!(last.distance, 2.0, max_relative = 1e-12);

        // Launching 0 → 1 m/s at +1 m/s²: distance equals ½at² = 0.5 m.
        let samples = integrate_profile(0.0, 1.0, 1.0, 0.1).unwrap();
        let last = samples.last().unwrap();
        assert_relative_eq!(last.speed, 1.0, max_relative = 1e-12);
        assert_relative_eq!(last.distance, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn integration_is_bit_reproducible() {
        let a = integrate_profile(7.3, -0.9, 8.1, 0.1).unwrap();
        let b = integrate_profile(7.3, -0.9, 8.1, 0.1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn displacement_identity_holds_for_random_transitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let v_start = rng.random_range(0.5..11.0);
            let a = -rng.random_range(0.3..4.0);
            let profile = StopProfile::new(v_start, 0.0, a, 0.0, 0.1).unwrap();
            // a_const·t_phase covers the speed change exactly.
            assert_relative_eq!(
                profile.a_const * profile.t_phase,
                -v_start,
                max_relative = 1e-12
            );
            let closed_form = (0.0 - v_start * v_start) / (2.0 * profile.a_const);
            assert_relative_eq!(profile.displacement(), closed_form, max_relative = 1e-9);
            let final_speed = profile.samples.last().unwrap().speed;
            assert!(final_speed.abs() < 1e-12);
        }
    }

    /// A straight constant-speed trajectory along +x used as the insertion
    /// substrate.
    fn straight_trajectory(n: usize, speed: f64) -> PlannedTrajectory {
        let dt = 0.1;
        let states: Vec<VehicleState> = (0..n)
            .map(|i| VehicleState {
                x: 10.0 + speed * dt * i as f64,
                y: 35.0,
                vx: speed,
                ..VehicleState::default()
            })
            .collect();
        let inputs = vec![ControlInput::default(); n - 1];
        let ax = vec![0.0; n];
        let ay = vec![0.0; n];
        PlannedTrajectory {
            dt,
            states,
            inputs,
            ax,
            ay,
            diagnostics: vec![StepDiagnostics {
                step: 0,
                cost: 0.0,
                iterations: 1,
                converged: true,
                max_violation: 0.0,
            }],
        }
    }

    fn mark(index: usize, decel: f64, dwell: f64) -> StandstillMark {
        StandstillMark {
            index,
            target_speed: 0.0,
            desired_decel: decel,
            dwell,
        }
    }

    #[test]
    fn empty_marks_return_the_input_unchanged() {
        let traj = straight_trajectory(50, 5.0);
        let out = insert_standstills(&traj, &[], &VehicleParams::default()).unwrap();
        assert_eq!(out, traj);
    }

    #[test]
    fn single_stop_on_a_straight_preserves_the_line() {
        let traj = straight_trajectory(400, 5.0);
        let out =
            insert_standstills(&traj, &[mark(40, -1.0, 2.0)], &VehicleParams::default()).unwrap();

        // The zero-speed block must span at least the dwell.
        let zeros: Vec<usize> = out
            .states
            .iter()
            .enumerate()
            .filter(|(_, s)| s.vx == 0.0)
            .map(|(i, _)| i)
            .collect();
        assert!(!zeros.is_empty());
        let span = (zeros.last().unwrap() - zeros.first().unwrap()) as f64 * out.dt;
        assert!(span >= 2.0 - 1e-9, "zero-speed span {span} below dwell");
        // Contiguous block.
        assert_eq!(zeros.last().unwrap() - zeros.first().unwrap() + 1, zeros.len());

        // Output is longer by the ramps and dwell; sampling unchanged.
        assert!(out.states.len() > traj.states.len());
        assert_eq!(out.dt, traj.dt);
        assert_eq!(out.inputs.len() + 1, out.states.len());

        // Every output position lies on the original line y = 35.
        for s in &out.states {
            assert!((s.y - 35.0).abs() < 1e-9);
            assert!(s.x >= 10.0 - 1e-9 && s.x <= traj.states.last().unwrap().x + 1e-9);
        }
        // Positions never move backwards.
        for pair in out.states.windows(2) {
            assert!(pair[1].x >= pair[0].x - 1e-12);
        }
        // Before and at the mark nothing changed.
        assert_eq!(out.states[40], traj.states[40]);
        // The braking ramp ends at v²/2|a| = 12.5 m past the mark.
        let stop_x = traj.states[40].x + 12.5;
        let stopped = out.states.iter().find(|s| s.vx == 0.0).unwrap();
        assert_relative_eq!(stopped.x, stop_x, max_relative = 1e-9);
    }

    #[test]
    fn insertion_preserves_curved_path_geometry() {
        // A gentle arc: positions on a circle, yaw tangent, constant speed.
        let dt = 0.1;
        let n = 300;
        let radius = 60.0;
        let speed = 6.0;
        let states: Vec<VehicleState> = (0..n)
            .map(|i| {
                let angle = speed * dt * i as f64 / radius;
                VehicleState {
                    x: 30.0 + radius * angle.sin(),
                    y: 35.0 + radius * (1.0 - angle.cos()),
                    vx: speed,
                    vy: 0.02,
                    yaw: angle,
                    yaw_rate: speed / radius,
                    steer: 0.04,
                    ax: 0.0,
                }
            })
            .collect();
        let traj = PlannedTrajectory {
            dt,
            inputs: vec![ControlInput::default(); n - 1],
            ax: vec![0.0; n],
            ay: vec![0.0; n],
            states,
            diagnostics: Vec::new(),
        };
        let out =
            insert_standstills(&traj, &[mark(30, -1.5, 1.0)], &VehicleParams::default()).unwrap();

        // All output positions stay on the circle (chord interpolation of a
        // 0.6 m-spaced polyline deviates < 1 mm; the invariant is distance
        // to the polyline, which chord points satisfy exactly).
        for pair in out.states.windows(2) {
            let step = (pair[1].x - pair[0].x).hypot(pair[1].y - pair[0].y);
            assert!(step <= speed * dt + 1e-9, "spacing {step} grew");
        }
        // Lateral states scale with speed: stationary samples are fully at
        // rest, moving samples keep yaw_rate proportional to speed.
        for s in &out.states {
            if s.vx == 0.0 {
                assert_eq!(s.yaw_rate, 0.0);
                assert_eq!(s.vy, 0.0);
            } else {
                assert_relative_eq!(
                    s.yaw_rate,
                    (speed / radius) * (s.vx / speed),
                    max_relative = 1e-9
                );
            }
        }
    }

    #[test]
    fn rate_inputs_are_exact_differences() {
        let traj = straight_trajectory(300, 4.0);
        let out =
            insert_standstills(&traj, &[mark(20, -1.0, 1.0)], &VehicleParams::default()).unwrap();
        for (k, u) in out.inputs.iter().enumerate() {
            let d_ax = (out.states[k + 1].ax - out.states[k].ax) / out.dt;
            let d_steer = (out.states[k + 1].steer - out.states[k].steer) / out.dt;
            assert_eq!(u.jerk, d_ax);
            assert_eq!(u.steer_rate, d_steer);
        }
    }

    #[test]
    fn overlapping_marks_are_rejected() {
        let traj = straight_trajectory(400, 5.0);
        // The first stop needs 25 m of ramps ≈ 50 samples at 5 m/s plus
        // the dwell; a second mark immediately after overlaps.
        let err = insert_standstills(
            &traj,
            &[mark(40, -1.0, 2.0), mark(45, -1.0, 2.0)],
            &VehicleParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::StopsOverlap { first: 40, second: 45 }));

        let err = insert_standstills(
            &traj,
            &[mark(40, -1.0, 0.0), mark(40, -1.0, 0.0)],
            &VehicleParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::StopsOverlap { .. }));
    }

    #[test]
    fn widely_separated_marks_both_insert() {
        let traj = straight_trajectory(600, 5.0);
        let out = insert_standstills(
            &traj,
            &[mark(40, -1.0, 1.0), mark(300, -2.0, 1.5)],
            &VehicleParams::default(),
        )
        .unwrap();
        // Two separate zero-speed blocks.
        let mut blocks = 0;
        let mut in_block = false;
        for s in &out.states {
            if s.vx == 0.0 && !in_block {
                blocks += 1;
                in_block = true;
            } else if s.vx != 0.0 {
                in_block = false;
            }
        }
        assert_eq!(blocks, 2);
    }

    #[test]
    fn stop_beyond_remaining_path_is_rejected() {
        let traj = straight_trajectory(60, 5.0);
        // 12.5 m braking + 12.5 m recovery demands 25 m; only ~10 m remain
        // past the mark.
        let err = insert_standstills(&traj, &[mark(40, -1.0, 2.0)], &VehicleParams::default())
            .unwrap_err();
        assert!(matches!(err, Error::PathExhausted { mark: 40, .. }));
    }

    #[test]
    fn mark_outside_trajectory_is_rejected() {
        let traj = straight_trajectory(50, 5.0);
        let err = insert_standstills(&traj, &[mark(50, -1.0, 1.0)], &VehicleParams::default())
            .unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }
}
