use trackreplay_core::planner::{plan, solve_horizon, PlannerConfig};
use trackreplay_core::trace::ReferenceTrace;
use trackreplay_core::vehicle::VehicleParams;

fn main() {
    let dt = 0.1;
    let n = 601;
    let ax: Vec<f64> = (0..n).map(|i| 0.3 * (0.2 * i as f64 * dt).sin()).collect();
    let ay: Vec<f64> = (0..n)
        .map(|i| 0.5 * (0.15 * i as f64 * dt).sin())
        .collect();
    let reference = ReferenceTrace {
        dt,
        ax,
        ay,
        marks: Vec::new(),
    };
    let config = PlannerConfig {
        horizon: 30,
        ..PlannerConfig::default()
    };
    let vehicle = VehicleParams::default();
    let planned = plan(&reference, &config, &vehicle).unwrap();
    let bad: Vec<_> = planned
        .diagnostics
        .iter()
        .filter(|d| !d.converged)
        .collect();
    println!(
        "{} steps, {} unconverged, total iterations {}",
        planned.diagnostics.len(),
        bad.len(),
        planned
            .diagnostics
            .iter()
            .map(|d| d.iterations)
            .sum::<usize>()
    );
    for d in bad.iter().take(30) {
        println!(
            "  step {:3}  its {:3}  cost {:14.6}  viol {:.2e}",
            d.step, d.iterations, d.cost, d.max_violation
        );
    }
    if bad.len() > 30 {
        println!("  ... {} more", bad.len() - 30);
    }

    if let Some(first) = bad.first() {
        let k = first.step.max(8);
        let end = (k + config.horizon).min(reference.ax.len());
        println!("cold re-solve of step {k} with trace:");
        std::env::set_var("SOLVER_TRACE", "1");
        let sol = solve_horizon(
            &planned.states[k],
            &reference.ax[k..end],
            &reference.ay[k..end],
            &config,
            &vehicle,
            None,
        )
        .unwrap();
        println!(
            "  its {} converged {} cost {:.6} viol {:.2e}",
            sol.iterations, sol.converged, sol.cost, sol.max_violation
        );
    }
}
