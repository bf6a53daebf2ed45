//! Command-line front end for the replication pipeline.
//!
//! The four stages chain through files in one output directory, so the
//! plain sequence `reference --bundled`, `plan`, `simulate`, `evaluate`
//! runs the whole pipeline on the bundled synthetic fleet. Every command
//! is deterministic for a fixed config and seed: running a stage twice
//! writes byte-identical files.
//!
//! Exit codes: 0 success, 2 bad input data or config, 3 internal
//! invariant breach, 64 usage error, 66 missing input file.

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use trackreplay_core::analysis::{amplitude_spectrum, tracking_report};
use trackreplay_core::config::RunConfig;
use trackreplay_core::error::Error;
use trackreplay_core::planner::{plan, PlannedTrajectory, BOUND_TOLERANCE};
use trackreplay_core::scenario::generate_drives;
use trackreplay_core::sickness::{assess_trace, design_zero_phase_lowpass};
use trackreplay_core::simulator::track_path;
use trackreplay_core::standstill::insert_standstills;
use trackreplay_core::trace::{
    average_traces, detect_standstills, estimate_stop_marks, load_reference, load_trace, resample,
    save_reference, save_trace, synchronize_events, Channel, ReferenceTrace, Trace,
};
use trackreplay_core::vehicle::{ControlInput, VehicleState};

/// Environment variable overriding the configured output directory.
const OUTPUT_DIR_ENV: &str = "TRACKREPLAY_OUT";

const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;
const EXIT_USAGE: u8 = 64;
const EXIT_MISSING: u8 = 66;

#[derive(Parser)]
#[command(
    name = "trackreplay",
    version,
    about = "Replicates a drive's acceleration exposure on a compact test area"
)]
struct Cli {
    /// TOML config file; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key (`section.key=value`); repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Output directory; beats the config file and TRACKREPLAY_OUT.
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Average drive recordings into a planning reference.
    Reference {
        /// Input drive CSVs (falls back to `run.inputs` from the config).
        inputs: Vec<PathBuf>,
        /// Generate the bundled synthetic fleet and use it as input.
        #[arg(long)]
        bundled: bool,
    },
    /// Plan the replication trajectory from a reference file.
    Plan {
        /// Reference CSV (default: `<output-dir>/reference.csv`).
        reference: Option<PathBuf>,
    },
    /// Drive a planned trajectory closed loop with the tracking surrogate.
    Simulate {
        /// Full trajectory CSV (default: `<output-dir>/plan_full.csv`).
        trajectory: Option<PathBuf>,
    },
    /// Score reference, planned, and optionally simulated traces.
    Evaluate {
        /// Reference trace (default: `<output-dir>/reference.csv`).
        reference: Option<PathBuf>,
        /// Planned trace (default: `<output-dir>/trajectory.csv`).
        generated: Option<PathBuf>,
        /// Measured trace (default: `<output-dir>/simulated.csv` when present).
        measured: Option<PathBuf>,
    },
    /// Configuration inspection.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Print the effective configuration with every key present.
    Dump,
}

/// A command failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(EXIT_INTERNAL, message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Domain(_) => EXIT_INTERNAL,
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING,
            _ => EXIT_DATA,
        };
        Failure::new(code, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut config = match &cli.config {
        Some(path) => {
            if !path.exists() {
                return Err(Failure::new(
                    EXIT_MISSING,
                    format!("config file not found: {}", path.display()),
                ));
            }
            RunConfig::load(path)?
        }
        None => RunConfig::default(),
    };
    for spec in &cli.sets {
        config.apply_set(spec)?;
    }
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        if !dir.is_empty() {
            config.run.output_dir = PathBuf::from(dir);
        }
    }
    if let Some(dir) = &cli.output_dir {
        config.run.output_dir = dir.clone();
    }
    config.validate()?;

    match cli.command {
        Command::Reference { inputs, bundled } => cmd_reference(&config, &inputs, bundled),
        Command::Plan { reference } => cmd_plan(&config, reference.as_deref()),
        Command::Simulate { trajectory } => cmd_simulate(&config, trajectory.as_deref()),
        Command::Evaluate {
            reference,
            generated,
            measured,
        } => cmd_evaluate(
            &config,
            reference.as_deref(),
            generated.as_deref(),
            measured.as_deref(),
        ),
        Command::Config {
            action: ConfigAction::Dump,
        } => {
            print!("{}", config.to_toml_string()?);
            Ok(())
        }
    }
}

/// Resolves a stage input: explicit argument or conventional file name.
fn stage_input(explicit: Option<&Path>, config: &RunConfig, name: &str) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.run.output_dir.join(name))
}

fn require_exists(path: &Path) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_MISSING,
            format!("input file not found: {}", path.display()),
        ))
    }
}

fn create_output_dir(config: &RunConfig) -> Result<(), Failure> {
    std::fs::create_dir_all(&config.run.output_dir).map_err(|e| {
        Failure::new(
            EXIT_DATA,
            format!(
                "cannot create output directory {}: {e}",
                config.run.output_dir.display()
            ),
        )
    })
}

fn open_input(path: &Path) -> Result<BufReader<File>, Failure> {
    require_exists(path)?;
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::new(EXIT_DATA, format!("cannot open {}: {e}", path.display())))
}

fn create_output(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::new(EXIT_DATA, format!("cannot write {}: {e}", path.display())))
}

/// Loads input drives, aligns their standstills, filters the dynamic
/// channels, averages, detects standstills, and writes the reference.
fn cmd_reference(config: &RunConfig, inputs: &[PathBuf], bundled: bool) -> Result<(), Failure> {
    create_output_dir(config)?;
    let mut drives: Vec<Trace> = Vec::new();

    if bundled {
        let fleet = generate_drives(&config.scenario_config())?;
        for (i, drive) in fleet.iter().enumerate() {
            let path = config.run.output_dir.join(format!("drive_{i}.csv"));
            save_trace(create_output(&path)?, drive)?;
        }
        drives = fleet;
    } else {
        let paths: Vec<&PathBuf> = if inputs.is_empty() {
            config.run.inputs.iter().collect()
        } else {
            inputs.iter().collect()
        };
        if paths.is_empty() {
            return Err(Failure::usage(
                "no input drives: pass trace files, set run.inputs, or use --bundled",
            ));
        }
        for path in paths {
            let trace = load_trace(
                open_input(path)?,
                &[Channel::AccelX, Channel::AccelY],
                "reference drive",
            )
            .map_err(|e| prefix_path(e, path))?;
            drives.push(trace);
        }
    }

    let dt = drives[0].dt();
    let mut aligned: Vec<Trace> = Vec::with_capacity(drives.len());
    for (i, drive) in drives.iter().enumerate() {
        let resampled = if (drive.dt() - dt).abs() > 1e-12 {
            resample(drive, dt)?
        } else {
            drive.clone()
        };
        if i == 0 || !resampled.has(Channel::SpeedX) || !aligned[0].has(Channel::SpeedX) {
            aligned.push(resampled);
        } else {
            let sync = synchronize_events(
                &aligned[0],
                &resampled,
                config.standstill.speed_threshold,
                config.standstill.min_duration,
            )?;
            aligned.push(sync.aligned);
        }
    }

    let mut spec = config.filter_spec();
    let rate = 1.0 / dt;
    if (spec.fs - rate).abs() > 1e-9 {
        eprintln!(
            "warning: filter rate {} Hz does not match the drive rate {rate} Hz; using {rate} Hz",
            spec.fs
        );
        spec.fs = rate;
    }
    let filter = design_zero_phase_lowpass(&spec)?;
    for trace in &mut aligned {
        for channel in trace.channel_list() {
            if matches!(channel, Channel::PosX | Channel::PosY) {
                continue;
            }
            let filtered = filter.apply_zero_phase(trace.channel(channel).expect("listed"))?;
            *trace = trace.with_channel(channel, filtered)?;
        }
    }

    let averaged = average_traces(&aligned, dt)?;
    let marks = if averaged.has(Channel::SpeedX) {
        let intervals = detect_standstills(
            &averaged,
            config.standstill.speed_threshold,
            config.standstill.min_duration,
        )?;
        estimate_stop_marks(&averaged, &intervals)?
    } else {
        Vec::new()
    };

    let path = config.run.output_dir.join("reference.csv");
    save_reference(create_output(&path)?, &averaged, &marks)?;
    eprintln!(
        "reference: {} drives averaged over {:.1} s, {} standstills -> {}",
        aligned.len(),
        averaged.duration(),
        marks.len(),
        path.display()
    );
    Ok(())
}

fn prefix_path(e: Error, path: &Path) -> Failure {
    let failure = Failure::from(e);
    Failure::new(
        failure.code,
        format!("{}: {}", path.display(), failure.message),
    )
}

/// Plans the replication trajectory and splices the reference standstills.
fn cmd_plan(config: &RunConfig, reference: Option<&Path>) -> Result<(), Failure> {
    create_output_dir(config)?;
    let path = stage_input(reference, config, "reference.csv");
    let (trace, marks) = load_reference(open_input(&path)?).map_err(|e| prefix_path(e, &path))?;

    let planner_config = config.planner_config()?;
    if (trace.dt() - planner_config.ts).abs() > 1e-9 {
        return Err(Failure::new(
            EXIT_DATA,
            format!(
                "reference interval {} s does not match planner interval {} s; \
                 resample the reference or set planner.ts",
                trace.dt(),
                planner_config.ts
            ),
        ));
    }
    if planner_config.horizon == 1 {
        eprintln!("warning: a one-step horizon is myopic; expect poor replication");
    }

    let vehicle = config.vehicle_params();
    let reference_trace = ReferenceTrace::from_trace(&trace, marks)?;
    let planned = plan(&reference_trace, &planner_config, &vehicle)?;
    let full = insert_standstills(&planned, &reference_trace.marks, &vehicle)?;

    // Self-checks: the planner must deliver in-bounds, converged output.
    let violation = planned.max_bound_violation(&planner_config);
    if violation > BOUND_TOLERANCE {
        return Err(Failure::internal(format!(
            "planned trajectory violates its bounds by {violation:.3e}"
        )));
    }
    for state in &full.states {
        let area = planner_config
            .track
            .x
            .violation(state.x)
            .max(planner_config.track.y.violation(state.y));
        // Standstill splicing legitimately dips below the moving-speed
        // floor, so only the upper speed edge applies here.
        let envelope = planner_config
            .bounds
            .steer
            .violation(state.steer)
            .max(planner_config.bounds.ax.violation(state.ax))
            .max((-state.vx).max(0.0))
            .max((state.vx - planner_config.bounds.vx.upper).max(0.0));
        if area.max(envelope) > BOUND_TOLERANCE {
            return Err(Failure::internal(format!(
                "standstill splicing left the drivable envelope (violation {:.3e})",
                area.max(envelope)
            )));
        }
    }
    let unconverged = planned
        .diagnostics
        .iter()
        .filter(|d| !d.converged)
        .count();
    if unconverged > 0 {
        return Err(Failure::internal(format!(
            "{unconverged} of {} planning steps did not converge; raise \
             planner.max_iterations or loosen planner.tolerance",
            planned.diagnostics.len()
        )));
    }

    let trace_path = config.run.output_dir.join("trajectory.csv");
    save_trace(create_output(&trace_path)?, &full.to_trace()?)?;
    let full_path = config.run.output_dir.join("plan_full.csv");
    save_plan(create_output(&full_path)?, &full)?;
    let diag_path = config.run.output_dir.join("diagnostics.csv");
    planned.save_diagnostics(create_output(&diag_path)?)?;

    let speeds: Vec<f64> = full.states.iter().map(|s| s.vx).collect();
    let mean_speed = speeds.iter().sum::<f64>() / speeds.len().max(1) as f64;
    eprintln!(
        "plan: {} steps, mean speed {:.2} m/s, max bound violation {:.1e} -> {}",
        full.len(),
        mean_speed,
        violation,
        trace_path.display()
    );
    Ok(())
}

/// Writes the planned trajectory with the full state and input layout.
fn save_plan<W: Write>(mut writer: W, traj: &PlannedTrajectory) -> Result<(), Failure> {
    writeln!(writer, "t,X,Y,vx,vy,yaw,r,steer,ax,ay,steer_rate,jerk")
        .map_err(|e| Failure::new(EXIT_DATA, e.to_string()))?;
    for (i, state) in traj.states.iter().enumerate() {
        let input = traj
            .inputs
            .get(i)
            .copied()
            .unwrap_or(ControlInput { steer_rate: 0.0, jerk: 0.0 });
        writeln!(
            writer,
            "{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
            i as f64 * traj.dt,
            state.x,
            state.y,
            state.vx,
            state.vy,
            state.yaw,
            state.yaw_rate,
            state.steer,
            traj.ax[i],
            traj.ay[i],
            input.steer_rate,
            input.jerk,
        )
        .map_err(|e| Failure::new(EXIT_DATA, e.to_string()))?;
    }
    Ok(())
}

/// Reads a full trajectory file back.
fn load_plan<R: BufRead>(reader: R, origin: &Path) -> Result<PlannedTrajectory, Failure> {
    const HEADER: &str = "t,X,Y,vx,vy,yaw,r,steer,ax,ay,steer_rate,jerk";
    let mut lines = reader.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| {
            Failure::new(EXIT_DATA, format!("{}: empty trajectory file", origin.display()))
        })?
        .1
        .map_err(|e| Failure::new(EXIT_DATA, e.to_string()))?;
    if header.trim() != HEADER {
        return Err(Failure::new(
            EXIT_DATA,
            format!(
                "{}: unexpected trajectory header `{}` (expected `{HEADER}`)",
                origin.display(),
                header.trim()
            ),
        ));
    }

    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    let mut ax = Vec::new();
    let mut ay = Vec::new();
    for (line_no, line) in lines {
        let line = line.map_err(|e| Failure::new(EXIT_DATA, e.to_string()))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| {
                Failure::new(
                    EXIT_DATA,
                    format!(
                        "{}: line {}: non-numeric trajectory field",
                        origin.display(),
                        line_no + 1
                    ),
                )
            })?;
        if fields.len() != 12 {
            return Err(Failure::new(
                EXIT_DATA,
                format!(
                    "{}: line {}: expected 12 fields, found {}",
                    origin.display(),
                    line_no + 1,
                    fields.len()
                ),
            ));
        }
        times.push(fields[0]);
        states.push(VehicleState {
            x: fields[1],
            y: fields[2],
            vx: fields[3],
            vy: fields[4],
            yaw: fields[5],
            yaw_rate: fields[6],
            steer: fields[7],
            ax: fields[8],
        });
        ax.push(fields[8]);
        ay.push(fields[9]);
        inputs.push(ControlInput {
            steer_rate: fields[10],
            jerk: fields[11],
        });
    }
    if times.len() < 2 {
        return Err(Failure::new(
            EXIT_DATA,
            format!("{}: trajectory needs at least two samples", origin.display()),
        ));
    }
    let dt = times[1] - times[0];
    for (i, pair) in times.windows(2).enumerate() {
        if ((pair[1] - pair[0]) - dt).abs() > 1e-6 {
            return Err(Failure::new(
                EXIT_DATA,
                format!(
                    "{}: non-uniform time base at row {}",
                    origin.display(),
                    i + 2
                ),
            ));
        }
    }
    inputs.pop();
    Ok(PlannedTrajectory {
        dt,
        states,
        inputs,
        ax,
        ay,
        diagnostics: Vec::new(),
    })
}

/// Drives the planned trajectory closed loop and writes the surrogate trace.
fn cmd_simulate(config: &RunConfig, trajectory: Option<&Path>) -> Result<(), Failure> {
    create_output_dir(config)?;
    let path = stage_input(trajectory, config, "plan_full.csv");
    let traj = load_plan(open_input(&path)?, &path)?;
    let trace = track_path(
        &traj,
        &config.tracker_params(),
        &config.vehicle_params(),
        config.run.seed,
    )?;
    let out = config.run.output_dir.join("simulated.csv");
    save_trace(create_output(&out)?, &trace)?;
    eprintln!(
        "simulate: {:.1} s driven with seed {} -> {}",
        trace.duration(),
        config.run.seed,
        out.display()
    );
    Ok(())
}

/// Compares the traces and writes the score report plus spectra files.
fn cmd_evaluate(
    config: &RunConfig,
    reference: Option<&Path>,
    generated: Option<&Path>,
    measured: Option<&Path>,
) -> Result<(), Failure> {
    create_output_dir(config)?;
    let ref_path = stage_input(reference, config, "reference.csv");
    let gen_path = stage_input(generated, config, "trajectory.csv");
    let measured_path = match measured {
        Some(path) => Some(path.to_path_buf()),
        None => {
            let default = config.run.output_dir.join("simulated.csv");
            default.exists().then_some(default)
        }
    };

    let reference = load_trace(open_input(&ref_path)?, &[], "evaluation reference")
        .map_err(|e| prefix_path(e, &ref_path))?;
    let generated = load_trace(open_input(&gen_path)?, &[], "evaluation candidate")
        .map_err(|e| prefix_path(e, &gen_path))?;
    let measured = match &measured_path {
        Some(path) => Some(
            load_trace(open_input(path)?, &[], "evaluation candidate")
                .map_err(|e| prefix_path(e, path))?,
        ),
        None => None,
    };

    let weighting = config.weighting_config()?;
    let analysis = config.analysis_config();
    let report = tracking_report(
        &reference,
        &generated,
        measured.as_ref(),
        &weighting,
        &analysis,
    )?;

    let report_path = config.run.output_dir.join("report.csv");
    report.save_csv(create_output(&report_path)?)?;
    let text = report.render_text();
    let text_path = config.run.output_dir.join("report.txt");
    create_output(&text_path)?
        .write_all(text.as_bytes())
        .map_err(|e| Failure::new(EXIT_DATA, e.to_string()))?;
    print!("{text}");

    // Per-case dose series and band spectra.
    let cases: Vec<(&str, &Trace)> = [
        Some(("reference", &reference)),
        Some(("generated", &generated)),
        measured.as_ref().map(|t| ("measured", t)),
    ]
    .into_iter()
    .flatten()
    .collect();
    for (label, trace) in &cases {
        let doses = assess_trace(trace, &weighting)?;
        let path = config.run.output_dir.join(format!("msdv_{label}.csv"));
        doses.save_csv(create_output(&path)?)?;
        for channel in &report.signal_channels {
            let Some(signal) = trace.channel(*channel) else {
                continue;
            };
            let spectrum = amplitude_spectrum(signal, 1.0 / trace.dt(), analysis.window)?;
            let path = config
                .run
                .output_dir
                .join(format!("spectrum_{label}_{}.csv", channel.csv_name()));
            spectrum.save_csv(create_output(&path)?)?;
        }
    }
    eprintln!(
        "evaluate: {} cases scored -> {}",
        cases.len(),
        report_path.display()
    );
    Ok(())
}
