//! Single-horizon solver: Gauss-Newton steps over the input sequence, each
//! computed exactly by a stagewise backward recursion, with a quadratic
//! exterior penalty for the state bounds.
//!
//! The decision vector stacks the horizon's input pairs. Input bounds are
//! handled by clamping, state bounds by a penalty that is escalated
//! geometrically until the predicted trajectory respects every bound within
//! tolerance. Each iteration linearises the rollout along the exact
//! discrete step sensitivities, minimises the resulting quadratic model in
//! one sweep (which untangles the long-horizon coupling between inputs that
//! makes plain gradient methods crawl here), and line-searches the step
//! against the true merit, falling back towards gradient steps through a
//! Levenberg shift when the model misleads. Gradients come from an adjoint
//! sweep over the same sensitivities, so the solver optimises the same map
//! it simulates.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::planner::{
    input_cost_grad, state_cost_grad, state_cost_hessian, PlannerConfig, BOUND_TOLERANCE,
};
use crate::vehicle::{
    step, step_with_sensitivities, ControlInput, InputMatrix, StateMatrix, StateVector,
    VehicleParams, VehicleState,
};

/// Initial state-bound penalty coefficient.
const PENALTY_START: f64 = 1e4;
/// Multiplier applied to the penalty between escalation stages.
const PENALTY_GROWTH: f64 = 100.0;
/// Penalty ceiling.
const PENALTY_MAX: f64 = 1e12;
/// Internal violation target, tighter than the public [`BOUND_TOLERANCE`]
/// so downstream feasibility checks keep headroom.
const VIOLATION_TARGET: f64 = 1e-7;
/// Armijo sufficient-decrease coefficient.
const ARMIJO_C1: f64 = 1e-4;
/// Backtracking factor for the line search.
const BACKTRACK: f64 = 0.5;
/// Smallest line-search step before the current direction is given up and
/// the curvature model is shifted further towards the gradient.
const MIN_ALPHA: f64 = 1e-4;
/// Consecutive relative merit decreases below this size end a stage early.
const STALL_DECREASE: f64 = 1e-14;
/// Number of consecutive stalled iterations tolerated before stopping.
const STALL_LIMIT: usize = 3;
/// First non-zero Levenberg shift applied when a step is rejected.
const LEVENBERG_MIN: f64 = 1e-6;
/// Levenberg ceiling; beyond it the stage gives up on further progress.
const LEVENBERG_MAX: f64 = 1e10;
/// Growth factor of the Levenberg shift after a rejected step.
const LEVENBERG_GROWTH: f64 = 10.0;
/// Shrink factor of the Levenberg shift after an accepted step.
const LEVENBERG_SHRINK: f64 = 0.25;
/// How many rounding-noise units of merit drift a gradient-certified step
/// may incur. Near the optimum consecutive merit evaluations wobble by a
/// few noise units even though the gradient keeps contracting, so the
/// plateau band has to sit above that wobble.
const ENDGAME_SLACK: f64 = 16.0;

/// Feedback gain of one stage: input correction per unit state deviation.
type GainMatrix = SMatrix<f64, 2, 8>;
/// Input-space Hessian block of one stage.
type InputHessian = SMatrix<f64, 2, 2>;
/// Feedforward input correction of one stage.
type InputDelta = SVector<f64, 2>;

/// Result of one horizon solve.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSolution {
    /// Optimised input sequence, one entry per horizon step.
    pub inputs: Vec<ControlInput>,
    /// Predicted states under `inputs`, one longer than the horizon.
    pub states: Vec<VehicleState>,
    /// Tracking cost of the returned trajectory (no penalty terms).
    pub cost: f64,
    /// Accepted solver iterations across all penalty stages.
    pub iterations: usize,
    /// Whether the final stage met the projected-gradient tolerance.
    pub converged: bool,
    /// Largest state-bound violation over the predicted states.
    pub max_violation: f64,
    /// Accepted merit values per penalty stage, for diagnostics; each inner
    /// sequence is non-increasing.
    pub stage_merits: Vec<Vec<f64>>,
}

/// Solves one horizon. `ax_ref`/`ay_ref` are the reference windows starting
/// at the current sample; windows shorter than the horizon are padded by
/// holding their last value. `warm_start` is used both as the initial guess
/// and as a quality floor: the returned trajectory's merit never exceeds
/// the warm start's (nor the zero-input rollout's).
pub fn solve_horizon(
    x0: &VehicleState,
    ax_ref: &[f64],
    ay_ref: &[f64],
    config: &PlannerConfig,
    vehicle: &VehicleParams,
    warm_start: Option<&[ControlInput]>,
) -> Result<HorizonSolution> {
    solve_horizon_staged(x0, ax_ref, ay_ref, config, vehicle, warm_start, None)
        .map(|(solution, _)| solution)
}

/// [`solve_horizon`] with an explicit starting penalty, and the final
/// penalty returned so a receding-horizon caller can carry it to the next
/// step instead of re-escalating from scratch.
pub(crate) fn solve_horizon_staged(
    x0: &VehicleState,
    ax_ref: &[f64],
    ay_ref: &[f64],
    config: &PlannerConfig,
    vehicle: &VehicleParams,
    warm_start: Option<&[ControlInput]>,
    penalty_hint: Option<f64>,
) -> Result<(HorizonSolution, f64)> {
    config.validate()?;
    vehicle.validate()?;
    if ax_ref.is_empty() {
        return Err(Error::Argument("reference window is empty".into()));
    }
    if ax_ref.len() != ay_ref.len() {
        return Err(Error::Argument(format!(
            "reference windows disagree in length: {} vs {}",
            ax_ref.len(),
            ay_ref.len()
        )));
    }
    config.check_state_feasible(x0)?;

    let problem = Problem {
        x0,
        ax_ref,
        ay_ref,
        config,
        vehicle,
    };
    let np = config.horizon;

    // Candidate starts: the projected warm start (resized to the horizon if
    // needed) and the zero-input rollout. Optimisation begins from whichever
    // has the lower merit; both remain quality floors at the end.
    let zero = vec![0.0; 2 * np];
    let warm = warm_start.filter(|w| !w.is_empty()).map(|w| {
        let mut z = Vec::with_capacity(2 * np);
        for k in 0..np {
            let u = w[k.min(w.len() - 1)];
            z.push(u.steer_rate);
            z.push(u.jerk);
        }
        problem.project(&mut z);
        z
    });

    let mut mu = penalty_hint
        .unwrap_or(PENALTY_START)
        .clamp(PENALTY_START, PENALTY_MAX);

    let warm_eval = warm.as_ref().and_then(|z| problem.evaluate(z, mu));
    let zero_eval = problem.evaluate(&zero, mu);
    let mut z = match (&warm, &warm_eval, &zero_eval) {
        (Some(w), Some(we), Some(ze)) => {
            if we.merit <= ze.merit {
                w.clone()
            } else {
                zero.clone()
            }
        }
        (Some(w), Some(_), None) => w.clone(),
        (_, _, Some(_)) => zero.clone(),
        _ => {
            return Err(Error::Domain(
                "no finite-cost starting sequence for the horizon".into(),
            ))
        }
    };

    // Penalty escalation: optimise, then raise the penalty until the
    // predicted states respect the bounds within the internal target.
    let mut iterations = 0;
    let mut stage_merits = Vec::new();
    let mut converged;
    loop {
        let budget = config.max_iterations.saturating_sub(iterations);
        let stage = problem.solve_stage(&mut z, mu, budget, config.tolerance)?;
        iterations += stage.iterations;
        converged = stage.converged;
        stage_merits.push(stage.merits);
        if stage.max_violation <= VIOLATION_TARGET
            || mu >= PENALTY_MAX
            || iterations >= config.max_iterations
        {
            break;
        }
        mu = (mu * PENALTY_GROWTH).min(PENALTY_MAX);
    }

    // Quality floor: never return anything meaningfully worse (in
    // final-penalty merit) than the warm start or the zero rollout.
    // Differences within summation noise don't count as degradation.
    let current_eval = problem.evaluate(&z, mu);
    let warm_eval = warm.as_ref().and_then(|w| problem.evaluate(w, mu));
    let zero_eval = problem.evaluate(&zero, mu);
    let current_merit = current_eval.as_ref().map_or(f64::INFINITY, |e| e.merit);
    let warm_merit = warm_eval.as_ref().map_or(f64::INFINITY, |e| e.merit);
    let zero_merit = zero_eval.as_ref().map_or(f64::INFINITY, |e| e.merit);
    if warm_merit < current_merit - merit_noise(warm_merit)
        || zero_merit < current_merit - merit_noise(zero_merit)
    {
        if warm_merit <= zero_merit {
            z = warm.expect("finite warm merit implies warm candidate");
        } else {
            z = zero;
        }
        converged = false;
    }

    let eval = problem
        .evaluate(&z, mu)
        .ok_or_else(|| Error::Domain("selected horizon rollout left the model domain".into()))?;
    let states = problem.rollout(&z)?;
    let inputs = (0..np).map(|k| Problem::input_at(&z, k)).collect();
    let solution = HorizonSolution {
        inputs,
        states,
        cost: eval.tracking,
        iterations,
        converged: converged && eval.max_violation <= BOUND_TOLERANCE,
        max_violation: eval.max_violation,
        stage_merits,
    };
    Ok((solution, mu))
}

/// Merit evaluation of one candidate.
struct Eval {
    /// Tracking cost plus penalty.
    merit: f64,
    /// Tracking cost alone.
    tracking: f64,
    /// Largest state-bound violation over predicted states.
    max_violation: f64,
}

/// Outcome of one penalty stage.
struct StageOutcome {
    iterations: usize,
    converged: bool,
    max_violation: f64,
    /// Merit at the start and after each accepted iteration.
    merits: Vec<f64>,
}

/// One linearisation of the horizon: the rollout, its exact step
/// sensitivities, and the quadratic model data of the merit around it.
struct Linearization {
    eval: Eval,
    /// Merit gradient with respect to the stacked inputs.
    grad: Vec<f64>,
    /// Predicted states, one longer than the horizon.
    states: Vec<VehicleState>,
    /// Per-step state sensitivities `∂x_{k+1}/∂x_k`.
    phis: Vec<StateMatrix>,
    /// Per-step input sensitivities `∂x_{k+1}/∂u_k`.
    gammas: Vec<InputMatrix>,
    /// Tracking-plus-penalty gradient per state.
    stage_grads: Vec<StateVector>,
    /// Gauss-Newton tracking-plus-penalty Hessian per state.
    stage_hessians: Vec<StateMatrix>,
}

/// Stagewise affine step policy from one backward sweep.
struct Gains {
    /// Feedforward correction and state-deviation feedback per stage.
    steps: Vec<(InputDelta, GainMatrix)>,
    /// First-order merit decrease predicted for the unit step.
    expected_decrease: f64,
}

/// The fixed data of one horizon solve.
struct Problem<'a> {
    x0: &'a VehicleState,
    ax_ref: &'a [f64],
    ay_ref: &'a [f64],
    config: &'a PlannerConfig,
    vehicle: &'a VehicleParams,
}

impl Problem<'_> {
    /// Reference pair for prediction step `k`, holding the last window
    /// value past the window end.
    fn ref_at(&self, k: usize) -> (f64, f64) {
        let i = k.min(self.ax_ref.len() - 1);
        (self.ax_ref[i], self.ay_ref[i])
    }

    /// The `k`-th input pair of a stacked decision vector.
    fn input_at(z: &[f64], k: usize) -> ControlInput {
        ControlInput {
            steer_rate: z[2 * k],
            jerk: z[2 * k + 1],
        }
    }

    /// Clamps every input pair into its box.
    fn project(&self, z: &mut [f64]) {
        let b = &self.config.bounds;
        for pair in z.chunks_exact_mut(2) {
            pair[0] = b.steer_rate.clamp(pair[0]);
            pair[1] = b.jerk.clamp(pair[1]);
        }
    }

    /// Quadratic exterior penalty of one state: squared distances outside
    /// the five bounded components, their gradient, the Hessian diagonal,
    /// and the worst distance.
    fn penalty(&self, s: &VehicleState) -> (f64, StateVector, StateVector, f64) {
        let checks = [
            (0, s.x, &self.config.track.x),
            (1, s.y, &self.config.track.y),
            (2, s.vx, &self.config.bounds.vx),
            (6, s.steer, &self.config.bounds.steer),
            (7, s.ax, &self.config.bounds.ax),
        ];
        let mut sum = 0.0;
        let mut grad = StateVector::zeros();
        let mut hess = StateVector::zeros();
        let mut worst: f64 = 0.0;
        for (i, value, interval) in checks {
            let below = (interval.lower - value).max(0.0);
            let above = (value - interval.upper).max(0.0);
            sum += below * below + above * above;
            grad[i] = 2.0 * (above - below);
            if below > 0.0 || above > 0.0 {
                hess[i] = 2.0;
            }
            worst = worst.max(below).max(above);
        }
        (sum, grad, hess, worst)
    }

    /// Rolls the model out under `z` and returns the state sequence.
    fn rollout(&self, z: &[f64]) -> Result<Vec<VehicleState>> {
        let np = self.config.horizon;
        let mut states = Vec::with_capacity(np + 1);
        states.push(*self.x0);
        for k in 0..np {
            let u = Self::input_at(z, k);
            let next = step(states.last().unwrap(), &u, self.config.ts, self.vehicle)?;
            states.push(next);
        }
        Ok(states)
    }

    /// Merit of `z` under penalty `mu`, or `None` if the rollout leaves the
    /// model domain (treated as infinitely bad by the search).
    fn evaluate(&self, z: &[f64], mu: f64) -> Option<Eval> {
        let np = self.config.horizon;
        let mut state = *self.x0;
        let (ax0, ay0) = self.ref_at(0);
        let mut tracking = Kahan::default();
        tracking.add(state_cost_grad(&state, ax0, ay0, self.config, self.vehicle).0);
        let mut pen_sum = Kahan::default();
        let mut worst: f64 = 0.0;
        for k in 0..np {
            let u = Self::input_at(z, k);
            tracking.add(input_cost_grad(&u, &self.config.weights).0);
            state = step(&state, &u, self.config.ts, self.vehicle).ok()?;
            let (axr, ayr) = self.ref_at(k + 1);
            tracking.add(state_cost_grad(&state, axr, ayr, self.config, self.vehicle).0);
            let (p, _, _, w) = self.penalty(&state);
            pen_sum.add(p);
            worst = worst.max(w);
        }
        let merit = tracking.total() + mu * pen_sum.total();
        merit.is_finite().then_some(Eval {
            merit,
            tracking: tracking.total(),
            max_violation: worst,
        })
    }

    /// Rolls `z` out once and collects everything an iteration needs: the
    /// merit, its input-space gradient via a backward adjoint sweep, and
    /// the per-stage sensitivities, gradients, and Gauss-Newton Hessians.
    fn linearize(&self, z: &[f64], mu: f64) -> Option<Linearization> {
        let np = self.config.horizon;
        let mut states = Vec::with_capacity(np + 1);
        let mut phis: Vec<StateMatrix> = Vec::with_capacity(np);
        let mut gammas: Vec<InputMatrix> = Vec::with_capacity(np);
        let mut stage_grads: Vec<StateVector> = Vec::with_capacity(np + 1);
        let mut stage_hessians: Vec<StateMatrix> = Vec::with_capacity(np + 1);

        let (ax0, ay0) = self.ref_at(0);
        let (c0, g0) = state_cost_grad(self.x0, ax0, ay0, self.config, self.vehicle);
        let mut tracking = Kahan::default();
        tracking.add(c0);
        states.push(*self.x0);
        stage_grads.push(g0);
        stage_hessians.push(state_cost_hessian(
            self.x0, ax0, ay0, self.config, self.vehicle,
        ));
        let mut pen_sum = Kahan::default();
        let mut worst: f64 = 0.0;
        for k in 0..np {
            let u = Self::input_at(z, k);
            tracking.add(input_cost_grad(&u, &self.config.weights).0);
            let (next, phi, gamma) =
                step_with_sensitivities(states.last().unwrap(), &u, self.config.ts, self.vehicle)
                    .ok()?;
            let (axr, ayr) = self.ref_at(k + 1);
            let (c, mut g) = state_cost_grad(&next, axr, ayr, self.config, self.vehicle);
            tracking.add(c);
            let mut h = state_cost_gn_hessian(&next, self.config, self.vehicle);
            let (p, pg, ph, w) = self.penalty(&next);
            pen_sum.add(p);
            worst = worst.max(w);
            g += pg * mu;
            for i in 0..8 {
                h[(i, i)] += mu * ph[i];
            }
            states.push(next);
            stage_grads.push(g);
            stage_hessians.push(h);
            phis.push(phi);
            gammas.push(gamma);
        }
        let merit = tracking.total() + mu * pen_sum.total();
        if !merit.is_finite() {
            return None;
        }

        // Backward adjoint: λ_k collects the sensitivity of the whole tail
        // cost to state k; the input gradient falls out stage by stage.
        let mut grad = vec![0.0; 2 * np];
        let mut lambda = stage_grads[np];
        for k in (0..np).rev() {
            let u = Self::input_at(z, k);
            let (_, gi) = input_cost_grad(&u, &self.config.weights);
            let gu = gammas[k].transpose() * lambda;
            grad[2 * k] = gi[0] + gu[0];
            grad[2 * k + 1] = gi[1] + gu[1];
            if k > 0 {
                lambda = stage_grads[k] + phis[k].transpose() * lambda;
            }
        }
        Some(Linearization {
            eval: Eval {
                merit,
                tracking: tracking.total(),
                max_violation: worst,
            },
            grad,
            states,
            phis,
            gammas,
            stage_grads,
            stage_hessians,
        })
    }

    /// Infinity norm of the projected gradient `z − proj(z − g)`.
    fn projected_gradient_norm(&self, z: &[f64], grad: &[f64]) -> f64 {
        let mut stepped: Vec<f64> = z.iter().zip(grad).map(|(zi, gi)| zi - gi).collect();
        self.project(&mut stepped);
        z.iter()
            .zip(&stepped)
            .map(|(zi, si)| (zi - si).abs())
            .fold(0.0, f64::max)
    }

    /// Minimises the quadratic model of the merit around `lin` in one
    /// backward sweep, propagating the stagewise value function. Each
    /// stage's input correction solves its 2×2 quadratic exactly over the
    /// remaining input box, and clamped components get no feedback, so the
    /// model stays faithful to what the forward rollout can actually apply.
    /// Returns `None` when an input-space Hessian block loses positive
    /// definiteness under the given Levenberg shift.
    fn backward_pass(&self, z: &[f64], lin: &Linearization, shift: f64) -> Option<Gains> {
        let np = self.config.horizon;
        let w = &self.config.weights;
        let bounds = &self.config.bounds;
        let input_hessian =
            InputHessian::from_diagonal(&InputDelta::new(2.0 * w.steer_rate, 2.0 * w.jerk));

        let mut v_mat = lin.stage_hessians[np];
        let mut v_vec = lin.stage_grads[np];
        let mut steps = vec![(InputDelta::zeros(), GainMatrix::zeros()); np];
        let mut expected_decrease = 0.0;
        for k in (0..np).rev() {
            let a = &lin.phis[k];
            let b = &lin.gammas[k];
            let u = Self::input_at(z, k);
            let (_, gu) = input_cost_grad(&u, w);

            let vb = v_mat * b;
            let q_u = InputDelta::new(gu[0], gu[1]) + b.transpose() * v_vec;
            let mut q_uu = input_hessian + b.transpose() * vb;
            q_uu[(0, 0)] += shift;
            q_uu[(1, 1)] += shift;
            let q_ux = b.transpose() * (v_mat * a);

            let det = q_uu[(0, 0)] * q_uu[(1, 1)] - q_uu[(0, 1)] * q_uu[(1, 0)];
            if !(q_uu[(0, 0)] > 0.0 && det > 0.0) {
                return None;
            }

            // Correction box: how far each input may move before hitting
            // its bound.
            let lo = InputDelta::new(
                bounds.steer_rate.lower - u.steer_rate,
                bounds.jerk.lower - u.jerk,
            );
            let hi = InputDelta::new(
                bounds.steer_rate.upper - u.steer_rate,
                bounds.jerk.upper - u.jerk,
            );
            let (d, free) = boxed_qp(&q_uu, &q_u, &lo, &hi);

            let mut gain = GainMatrix::zeros();
            if free == [true, true] {
                let inv = InputHessian::new(
                    q_uu[(1, 1)],
                    -q_uu[(0, 1)],
                    -q_uu[(1, 0)],
                    q_uu[(0, 0)],
                ) / det;
                gain = -(inv * q_ux);
            } else {
                for i in 0..2 {
                    if free[i] {
                        for j in 0..8 {
                            gain[(i, j)] = -q_ux[(i, j)] / q_uu[(i, i)];
                        }
                    }
                }
            }
            expected_decrease -= d.dot(&q_u);

            let q_xx = lin.stage_hessians[k] + a.transpose() * (v_mat * a);
            let q_x = lin.stage_grads[k] + a.transpose() * v_vec;
            v_vec = q_x + gain.transpose() * (q_uu * d) + gain.transpose() * q_u
                + q_ux.transpose() * d;
            v_mat = q_xx + gain.transpose() * (q_uu * gain) + gain.transpose() * q_ux
                + q_ux.transpose() * gain;
            v_mat = (v_mat + v_mat.transpose()) * 0.5;
            steps[k] = (d, gain);
        }
        Some(Gains {
            steps,
            expected_decrease,
        })
    }

    /// Rolls the model out under the stepped policy `u_k + α·d_k + K_k·δx`,
    /// clamping every input into its box, and evaluates the true merit.
    /// Returns the new stacked inputs and their evaluation, or `None` when
    /// the rollout leaves the model domain.
    fn forward_pass(
        &self,
        z: &[f64],
        lin: &Linearization,
        gains: &Gains,
        alpha: f64,
        mu: f64,
    ) -> Option<(Vec<f64>, Eval)> {
        let np = self.config.horizon;
        let bounds = &self.config.bounds;
        let mut z_new = vec![0.0; 2 * np];
        let mut state = *self.x0;
        let (ax0, ay0) = self.ref_at(0);
        let mut tracking = Kahan::default();
        tracking.add(state_cost_grad(&state, ax0, ay0, self.config, self.vehicle).0);
        let mut pen_sum = Kahan::default();
        let mut worst: f64 = 0.0;
        for k in 0..np {
            let dx = state.as_vector() - lin.states[k].as_vector();
            let (d, gain) = &gains.steps[k];
            let correction = alpha * d + gain * dx;
            let nominal = Self::input_at(z, k);
            let u = ControlInput {
                steer_rate: bounds.steer_rate.clamp(nominal.steer_rate + correction[0]),
                jerk: bounds.jerk.clamp(nominal.jerk + correction[1]),
            };
            z_new[2 * k] = u.steer_rate;
            z_new[2 * k + 1] = u.jerk;
            tracking.add(input_cost_grad(&u, &self.config.weights).0);
            state = step(&state, &u, self.config.ts, self.vehicle).ok()?;
            let (axr, ayr) = self.ref_at(k + 1);
            tracking.add(state_cost_grad(&state, axr, ayr, self.config, self.vehicle).0);
            let (p, _, _, w) = self.penalty(&state);
            pen_sum.add(p);
            worst = worst.max(w);
        }
        let merit = tracking.total() + mu * pen_sum.total();
        merit.is_finite().then_some((
            z_new,
            Eval {
                merit,
                tracking: tracking.total(),
                max_violation: worst,
            },
        ))
    }

    /// One penalty stage: Gauss-Newton iterations from the current `z`
    /// until the projected gradient meets `tol`, the budget runs out, or
    /// progress stalls. `z` is updated in place.
    fn solve_stage(
        &self,
        z: &mut Vec<f64>,
        mu: f64,
        budget: usize,
        tol: f64,
    ) -> Result<StageOutcome> {
        let trace = std::env::var("SOLVER_TRACE").is_ok();
        self.project(z);
        let mut lin = self
            .linearize(z, mu)
            .ok_or_else(|| Error::Domain("horizon rollout left the model domain".into()))?;
        let mut merits = vec![lin.eval.merit];
        let mut iterations = 0;
        let mut converged = false;
        let mut stalled = 0;
        let mut shift = 0.0_f64;

        while iterations < budget {
            let pg = self.projected_gradient_norm(z, &lin.grad);
            if pg <= tol {
                converged = true;
                break;
            }

            // Find an acceptable step, shifting the curvature model towards
            // the gradient whenever the sweep or the line search rejects it.
            // `endgame` marks steps certified by gradient decrease rather
            // than merit decrease; they skip the stall accounting because
            // their progress measure is the gradient itself.
            let mut accepted: Option<(Vec<f64>, Eval, Option<Linearization>)> = None;
            let mut endgame = false;
            let mut retried_unshifted = false;
            loop {
                let gains = self
                    .backward_pass(z, &lin, shift)
                    .filter(|g| g.expected_decrease > 0.0);
                // When even the full predicted decrease is below the merit
                // resolution, no line search can certify it; only the
                // gradient test below can make progress.
                let certifiable = gains
                    .as_ref()
                    .is_some_and(|g| g.expected_decrease >= merit_noise(lin.eval.merit));
                if certifiable {
                    let gains = gains.as_ref().unwrap();
                    let mut alpha = 1.0;
                    while alpha >= MIN_ALPHA {
                        if let Some((z_new, eval_new)) =
                            self.forward_pass(z, &lin, gains, alpha, mu)
                        {
                            // A merit-certified step must beat both the
                            // Armijo target and the noise floor; anything
                            // smaller is for the gradient test below.
                            let required = (ARMIJO_C1 * alpha * gains.expected_decrease)
                                .max(merit_noise(lin.eval.merit));
                            if eval_new.merit <= lin.eval.merit - required {
                                accepted = Some((z_new, eval_new, None));
                                break;
                            }
                        }
                        alpha *= BACKTRACK;
                    }
                }

                // Near the optimum the certifiable merit decrease sinks
                // below the floating-point resolution of a merit this
                // large, while the adjoint gradient is still accurate. Take
                // the full step if it strictly contracts the projected
                // gradient and keeps the merit within rounding noise.
                if accepted.is_none() && shift == 0.0 {
                    if let Some(gains) = &gains {
                        if trace {
                            eprintln!("    endgame enter: elin {:.3e}", gains.expected_decrease);
                        }
                        if let Some((z_new, eval_new)) = self.forward_pass(z, &lin, gains, 1.0, mu)
                        {
                            if eval_new.merit
                                <= lin.eval.merit + ENDGAME_SLACK * merit_noise(lin.eval.merit)
                            {
                                if let Some(lin_new) = self.linearize(&z_new, mu) {
                                    let pg_new =
                                        self.projected_gradient_norm(&z_new, &lin_new.grad);
                                    if trace {
                                        eprintln!(
                                            "    endgame try pg {pg:.3e} -> {pg_new:.3e} dmerit {:+.3e}",
                                            eval_new.merit - lin.eval.merit
                                        );
                                    }
                                    if pg_new < pg {
                                        accepted = Some((z_new, eval_new, Some(lin_new)));
                                        endgame = true;
                                    }
                                }
                            }
                        }
                    }
                }

                if accepted.is_some() {
                    break;
                }
                // Shifting damps the step; it can rescue an overshooting
                // direction, but never one whose predicted decrease is
                // already unresolvable. For those only the unshifted
                // gradient test is left, so try it once and then give up.
                if !certifiable && shift > 0.0 {
                    if retried_unshifted {
                        break;
                    }
                    retried_unshifted = true;
                    shift = 0.0;
                    continue;
                }
                shift = if shift == 0.0 {
                    LEVENBERG_MIN
                } else {
                    shift * LEVENBERG_GROWTH
                };
                if shift > LEVENBERG_MAX {
                    break;
                }
            }
            let Some((z_new, eval_new, lin_ready)) = accepted else {
                break;
            };
            shift = if shift <= LEVENBERG_MIN {
                0.0
            } else {
                shift * LEVENBERG_SHRINK
            };

            let decrease = lin.eval.merit - eval_new.merit;
            let lin_new = match lin_ready {
                Some(lin_new) => lin_new,
                None => match self.linearize(&z_new, mu) {
                    Some(lin_new) => lin_new,
                    None => break,
                },
            };
            *z = z_new;
            lin = lin_new;
            iterations += 1;
            merits.push(lin.eval.merit);
            if endgame {
                continue;
            }
            if decrease <= STALL_DECREASE * (1.0 + lin.eval.merit.abs()) {
                stalled += 1;
                if stalled >= STALL_LIMIT {
                    converged = self.projected_gradient_norm(z, &lin.grad) <= tol;
                    break;
                }
            } else {
                stalled = 0;
            }
        }
        if !converged && self.projected_gradient_norm(z, &lin.grad) <= tol {
            converged = true;
        }
        if trace && !converged {
            eprintln!(
                "    stage end: pg {:.3e} its {iterations} shift {shift:.1e} mu {mu:.1e} merit {:.9e}",
                self.projected_gradient_norm(z, &lin.grad),
                lin.eval.merit
            );
        }

        Ok(StageOutcome {
            iterations,
            converged,
            max_violation: lin.eval.max_violation,
            merits,
        })
    }
}

/// Absolute merit resolution at the given magnitude: differences smaller
/// than this are indistinguishable from summation rounding across the
/// horizon's stage costs.
fn merit_noise(merit: f64) -> f64 {
    64.0 * f64::EPSILON * (1.0 + merit.abs())
}

/// Compensated accumulator: keeps the horizon's cost sums accurate to a
/// few ulps of the total instead of growing rounding error with the stage
/// count, so nearby candidates stay comparable near the optimum. Every
/// merit computation must accumulate through this identically, or equal
/// inputs would stop producing equal merits.
#[derive(Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    fn add(&mut self, value: f64) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum
    }
}

/// Exact minimiser of `½·dᵀQd + gᵀd` over the box `[lo, hi]` for a
/// positive-definite 2×2 `Q`, along with which components end up strictly
/// inside the box. The minimum is either the unconstrained stationary point
/// or lies on one of the four edges, where the problem is a clamped scalar
/// quadratic; enumerating those candidates is exhaustive.
fn boxed_qp(
    q: &InputHessian,
    g: &InputDelta,
    lo: &InputDelta,
    hi: &InputDelta,
) -> (InputDelta, [bool; 2]) {
    let det = q[(0, 0)] * q[(1, 1)] - q[(0, 1)] * q[(1, 0)];
    let newton = InputDelta::new(
        (-g[0] * q[(1, 1)] + g[1] * q[(0, 1)]) / det,
        (-g[1] * q[(0, 0)] + g[0] * q[(1, 0)]) / det,
    );
    if newton[0] >= lo[0]
        && newton[0] <= hi[0]
        && newton[1] >= lo[1]
        && newton[1] <= hi[1]
    {
        return (newton, [true, true]);
    }

    let mut best = InputDelta::zeros();
    let mut best_free = [false; 2];
    let mut best_val = f64::INFINITY;
    for (which, fixed) in [(0usize, lo[0]), (0, hi[0]), (1, lo[1]), (1, hi[1])] {
        let other = 1 - which;
        let raw = -(g[other] + q[(other, which)] * fixed) / q[(other, other)];
        let sol = raw.max(lo[other]).min(hi[other]);
        let mut d = InputDelta::zeros();
        d[which] = fixed;
        d[other] = sol;
        let val = 0.5 * d.dot(&(q * d)) + g.dot(&d);
        if val < best_val {
            best_val = val;
            best = d;
            best_free = [false; 2];
            best_free[other] = sol > lo[other] && sol < hi[other];
        }
    }
    (best, best_free)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::PlannerConfig;

    fn config() -> PlannerConfig {
        PlannerConfig::default()
    }

    fn vehicle() -> VehicleParams {
        VehicleParams::default()
    }

    fn centred_state(vx: f64) -> VehicleState {
        VehicleState {
            x: 40.0,
            y: 35.0,
            vx,
            ..VehicleState::default()
        }
    }

    #[test]
    fn rejects_bad_windows_and_infeasible_starts() {
        let cfg = config();
        let veh = vehicle();
        let x0 = centred_state(5.0);
        assert!(matches!(
            solve_horizon(&x0, &[], &[], &cfg, &veh, None),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            solve_horizon(&x0, &[1.0, 2.0], &[0.0], &cfg, &veh, None),
            Err(Error::Argument(_))
        ));
        let slow = centred_state(0.5);
        assert!(matches!(
            solve_horizon(&slow, &[0.0], &[0.0], &cfg, &veh, None),
            Err(Error::InfeasibleStart(_))
        ));
    }

    #[test]
    fn saturates_longitudinal_acceleration_at_its_bound() {
        // Short horizon so the speed ceiling stays inactive and the true
        // optimum is a full-throttle ramp pinned at the ax bound; the cold
        // start also gets a larger budget than the warm-start default.
        let cfg = PlannerConfig {
            horizon: 30,
            max_iterations: 1500,
            ..config()
        };
        let veh = vehicle();
        let x0 = centred_state(1.5);
        // An unreachable +5 m/s² request: achieved ax must saturate at the
        // +2.5 bound without overshooting it beyond tolerance.
        let ax_ref = vec![5.0; cfg.horizon];
        let ay_ref = vec![0.0; cfg.horizon];
        let sol = solve_horizon(&x0, &ax_ref, &ay_ref, &cfg, &veh, None).unwrap();
        let peak_ax = sol.states.iter().map(|s| s.ax).fold(f64::MIN, f64::max);
        assert!(
            (peak_ax - 2.5).abs() <= BOUND_TOLERANCE,
            "peak ax {peak_ax} should saturate at 2.5"
        );
        assert!(
            sol.max_violation <= BOUND_TOLERANCE,
            "violation {} exceeds tolerance",
            sol.max_violation
        );
        let peak_vx = sol.states.iter().map(|s| s.vx).fold(f64::MIN, f64::max);
        assert!(peak_vx <= 11.1 + BOUND_TOLERANCE);
        assert!(sol.cost > 0.0);
    }

    #[test]
    fn beats_the_zero_input_rollout_on_a_lateral_step() {
        let cfg = config();
        let veh = vehicle();
        let x0 = centred_state(8.0);
        let ax_ref = vec![0.0; cfg.horizon];
        let ay_ref = vec![1.0; cfg.horizon];
        let sol = solve_horizon(&x0, &ax_ref, &ay_ref, &cfg, &veh, None).unwrap();

        let problem = Problem {
            x0: &x0,
            ax_ref: &ax_ref,
            ay_ref: &ay_ref,
            config: &cfg,
            vehicle: &veh,
        };
        let zero_eval = problem.evaluate(&vec![0.0; 2 * cfg.horizon], 0.0).unwrap();
        assert!(
            sol.cost < 0.5 * zero_eval.tracking,
            "solver cost {} should clearly undercut zero-input cost {}",
            sol.cost,
            zero_eval.tracking
        );
        assert!(sol.max_violation <= BOUND_TOLERANCE);
    }

    #[test]
    fn equilibrium_start_keeps_inputs_near_zero() {
        let cfg = config();
        let veh = vehicle();
        // Dead centre, straight, coasting at the speed floor with zero
        // references: the only residual cost is the slow drift of x away
        // from the centre, which barely rewards any input.
        let x0 = VehicleState {
            x: 87.5,
            y: 35.0,
            vx: 1.0,
            ..VehicleState::default()
        };
        let ax_ref = vec![0.0; cfg.horizon];
        let ay_ref = vec![0.0; cfg.horizon];
        let sol = solve_horizon(&x0, &ax_ref, &ay_ref, &cfg, &veh, None).unwrap();
        assert!(sol.cost < 2e-2, "residual cost {} too large", sol.cost);
        for u in &sol.inputs {
            assert!(u.steer_rate.abs() < 0.05, "steer rate {}", u.steer_rate);
            assert!(u.jerk.abs() < 0.05, "jerk {}", u.jerk);
        }
        assert!(sol.max_violation <= BOUND_TOLERANCE);
    }

    #[test]
    fn merit_is_monotone_within_each_stage() {
        let cfg = config();
        let veh = vehicle();
        let x0 = centred_state(6.0);
        let ax_ref: Vec<f64> = (0..cfg.horizon)
            .map(|k| 1.5 * (0.07 * k as f64).sin())
            .collect();
        let ay_ref: Vec<f64> = (0..cfg.horizon)
            .map(|k| 2.0 * (0.05 * k as f64).cos())
            .collect();
        let sol = solve_horizon(&x0, &ax_ref, &ay_ref, &cfg, &veh, None).unwrap();
        for merits in &sol.stage_merits {
            for pair in merits.windows(2) {
                assert!(
                    pair[1] <= pair[0] * (1.0 + 1e-12) + 1e-12,
                    "merit increased {} -> {}",
                    pair[0],
                    pair[1]
                );
            }
        }
    }

    #[test]
    fn warm_start_never_degrades_the_solution() {
        let cfg = config();
        let veh = vehicle();
        let x0 = centred_state(7.0);
        let ax_ref: Vec<f64> = (0..cfg.horizon)
            .map(|k| (0.1 * k as f64).sin())
            .collect();
        let ay_ref = vec![0.8; cfg.horizon];
        let cold = solve_horizon(&x0, &ax_ref, &ay_ref, &cfg, &veh, None).unwrap();
        let warm =
            solve_horizon(&x0, &ax_ref, &ay_ref, &cfg, &veh, Some(&cold.inputs)).unwrap();
        assert!(
            warm.cost <= cold.cost + 1e-9,
            "warm cost {} worse than cold {}",
            warm.cost,
            cold.cost
        );
    }

    #[test]
    fn short_windows_hold_the_last_reference() {
        let cfg = config();
        let veh = vehicle();
        let x0 = centred_state(5.0);
        let long = solve_horizon(
            &x0,
            &vec![0.7; cfg.horizon],
            &vec![0.0; cfg.horizon],
            &cfg,
            &veh,
            None,
        )
        .unwrap();
        let short = solve_horizon(&x0, &[0.7], &[0.0], &cfg, &veh, None).unwrap();
        assert!((long.cost - short.cost).abs() <= 1e-9 * (1.0 + long.cost.abs()));
    }
}
