//! Drive recordings on a uniform time base and the derived planning
//! reference.
//!
//! A [`Trace`] is a set of named channels sampled at a fixed interval. Files
//! are plain CSV with a mandatory `t` column; unknown columns are ignored so
//! recordings from richer loggers load unchanged. The planning reference is
//! an averaged trace plus the standstill marks detected on it, stored in one
//! file (marks ride along as `#` comment lines, so the same file also loads
//! as an ordinary trace).

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the mandatory time column.
pub const TIME_COLUMN: &str = "t";

/// Absolute tolerance on timestamp uniformity, in seconds.
pub const TIME_TOLERANCE: f64 = 1e-6;

/// Default speed threshold below which the vehicle counts as standing, m/s.
pub const DEFAULT_STANDSTILL_SPEED: f64 = 0.5;

/// Default minimum standstill duration, s.
pub const DEFAULT_STANDSTILL_MIN_DURATION: f64 = 1.0;

/// A recorded channel. The discriminant order fixes the canonical CSV column
/// order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    /// Ground-frame x position, m (`X`).
    PosX,
    /// Ground-frame y position, m (`Y`).
    PosY,
    /// Longitudinal speed, m/s (`vx`).
    SpeedX,
    /// Longitudinal acceleration, m/s² (`ax`).
    AccelX,
    /// Lateral acceleration, m/s² (`ay`).
    AccelY,
    /// Vertical acceleration, m/s² (`az`).
    AccelZ,
    /// Yaw rate, rad/s (`r`).
    YawRate,
    /// Roll acceleration, rad/s² (`roll_acc`).
    RollAccel,
    /// Pitch acceleration, rad/s² (`pitch_acc`).
    PitchAccel,
}

impl Channel {
    /// Every channel, in canonical column order.
    pub const ALL: [Channel; 9] = [
        Channel::PosX,
        Channel::PosY,
        Channel::SpeedX,
        Channel::AccelX,
        Channel::AccelY,
        Channel::AccelZ,
        Channel::YawRate,
        Channel::RollAccel,
        Channel::PitchAccel,
    ];

    /// CSV column name.
    pub fn csv_name(self) -> &'static str {
        match self {
            Channel::PosX => "X",
            Channel::PosY => "Y",
            Channel::SpeedX => "vx",
            Channel::AccelX => "ax",
            Channel::AccelY => "ay",
            Channel::AccelZ => "az",
            Channel::YawRate => "r",
            Channel::RollAccel => "roll_acc",
            Channel::PitchAccel => "pitch_acc",
        }
    }

    /// Inverse of [`Channel::csv_name`]; `None` for unknown columns.
    pub fn from_csv_name(name: &str) -> Option<Channel> {
        Channel::ALL.iter().copied().find(|c| c.csv_name() == name)
    }
}

/// Uniformly sampled multi-channel recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    t0: f64,
    dt: f64,
    len: usize,
    channels: BTreeMap<Channel, Vec<f64>>,
}

impl Trace {
    /// Builds a trace from channel data. All channels must be non-empty and
    /// of equal length; `dt` must be positive and finite.
    pub fn new(t0: f64, dt: f64, channels: BTreeMap<Channel, Vec<f64>>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Argument(format!("sample interval must be > 0, got {dt}")));
        }
        if !t0.is_finite() {
            return Err(Error::Argument(format!("start time must be finite, got {t0}")));
        }
        let mut len = None;
        for (channel, data) in &channels {
            match len {
                None => len = Some(data.len()),
                Some(n) if n != data.len() => {
                    return Err(Error::Argument(format!(
                        "channel `{}` has {} samples, expected {n}",
                        channel.csv_name(),
                        data.len()
                    )))
                }
                _ => {}
            }
            if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    channel: channel.csv_name().to_string(),
                    index: i,
                });
            }
        }
        let len = len.filter(|&n| n > 0).ok_or_else(|| {
            Error::Argument("a trace needs at least one channel with at least one sample".into())
        })?;
        Ok(Self { t0, dt, len, channels })
    }

    /// Start time of the first sample, s.
    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Sample interval, s.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of samples per channel.
    pub fn len(&self) -> usize {
        self.len
    }

    /// True when the trace holds no samples.
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Time spanned from first to last sample, s.
    pub fn duration(&self) -> f64 {
        (self.len - 1) as f64 * self.dt
    }

    /// Timestamp of sample `i`, s.
    pub fn time_at(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// The channel's samples, if recorded.
    pub fn channel(&self, channel: Channel) -> Option<&[f64]> {
        self.channels.get(&channel).map(Vec::as_slice)
    }

    /// The channel's samples, or a missing-column error naming the caller's
    /// purpose.
    pub fn require(&self, channel: Channel, usage: &str) -> Result<&[f64]> {
        self.channel(channel).ok_or_else(|| Error::MissingColumn {
            column: channel.csv_name().to_string(),
            usage: usage.to_string(),
        })
    }

    /// True when the channel is recorded.
    pub fn has(&self, channel: Channel) -> bool {
        self.channels.contains_key(&channel)
    }

    /// Recorded channels in canonical order.
    pub fn channel_list(&self) -> Vec<Channel> {
        self.channels.keys().copied().collect()
    }

    /// Iterates over `(channel, samples)` in canonical order.
    pub fn iter_channels(&self) -> impl Iterator<Item = (Channel, &[f64])> {
        self.channels.iter().map(|(c, v)| (*c, v.as_slice()))
    }

    /// Returns a copy with `channel` replaced (or added).
    pub fn with_channel(&self, channel: Channel, data: Vec<f64>) -> Result<Trace> {
        let mut channels = self.channels.clone();
        channels.insert(channel, data);
        Trace::new(self.t0, self.dt, channels)
    }
}

/// Reads a trace from CSV.
///
/// The file must contain a `t` column with uniformly spaced timestamps
/// (tolerance [`TIME_TOLERANCE`]) and every channel in `required`; other
/// known channels are loaded too, unknown columns are skipped. `usage` names
/// the caller's purpose in missing-column errors.
pub fn load_trace<R: Read>(reader: R, required: &[Channel], usage: &str) -> Result<Trace> {
    let mut csv = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = csv.headers()?.clone();
    let mut t_col = None;
    let mut columns: Vec<(usize, Channel)> = Vec::new();
    for (i, name) in headers.iter().enumerate() {
        if name == TIME_COLUMN {
            t_col = Some(i);
        } else if let Some(channel) = Channel::from_csv_name(name) {
            columns.push((i, channel));
        }
    }
    let t_col = t_col.ok_or_else(|| Error::MissingColumn {
        column: TIME_COLUMN.to_string(),
        usage: "time base".to_string(),
    })?;
    for channel in required {
        if !columns.iter().any(|(_, c)| c == channel) {
            return Err(Error::MissingColumn {
                column: channel.csv_name().to_string(),
                usage: usage.to_string(),
            });
        }
    }

    let parse = |field: &str, line: usize, column: &str| -> Result<f64> {
        field.parse::<f64>().map_err(|_| Error::Parse {
            line,
            message: format!("cannot parse `{field}` in column `{column}` as a number"),
        })
    };

    let mut times = Vec::new();
    let mut data: Vec<Vec<f64>> = vec![Vec::new(); columns.len()];
    for (row, record) in csv.records().enumerate() {
        let record = record?;
        // Header is line 1; records follow.
        let line = row + 2;
        let t_field = record.get(t_col).ok_or_else(|| Error::Parse {
            line,
            message: "row has fewer fields than the header".to_string(),
        })?;
        times.push(parse(t_field, line, TIME_COLUMN)?);
        for (slot, (col, channel)) in columns.iter().enumerate() {
            let field = record.get(*col).ok_or_else(|| Error::Parse {
                line,
                message: "row has fewer fields than the header".to_string(),
            })?;
            let value = parse(field, line, channel.csv_name())?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    channel: channel.csv_name().to_string(),
                    index: row,
                });
            }
            data[slot].push(value);
        }
    }

    if times.len() < 2 {
        return Err(Error::Argument(format!(
            "trace needs at least 2 samples to establish a time base, got {}",
            times.len()
        )));
    }
    let t0 = times[0];
    let dt = times[1] - t0;
    if !(dt > 0.0) {
        return Err(Error::Argument(format!(
            "timestamps must be strictly increasing, first interval is {dt} s"
        )));
    }
    for (i, &t) in times.iter().enumerate() {
        let expected = t0 + i as f64 * dt;
        if (t - expected).abs() > TIME_TOLERANCE {
            return Err(Error::NonUniformTime {
                row: i,
                expected,
                found: t,
                tolerance: TIME_TOLERANCE,
            });
        }
    }

    let mut channels = BTreeMap::new();
    for ((_, channel), series) in columns.into_iter().zip(data) {
        channels.insert(channel, series);
    }
    Trace::new(t0, dt, channels)
}

/// Writes a trace as CSV with the canonical column order.
pub fn save_trace<W: Write>(writer: W, trace: &Trace) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec![TIME_COLUMN.to_string()];
    header.extend(trace.channel_list().iter().map(|c| c.csv_name().to_string()));
    csv.write_record(&header)?;
    for i in 0..trace.len() {
        let mut record = vec![format!("{:.9}", trace.time_at(i))];
        for (_, samples) in trace.iter_channels() {
            record.push(format!("{:.9}", samples[i]));
        }
        csv.write_record(&record)?;
    }
    csv.flush()?;
    Ok(())
}

/// Resamples every channel to the interval `new_dt` by linear interpolation.
///
/// The start time is preserved and the new grid covers the original span.
/// Resampling to the trace's own interval returns the input bit-for-bit.
pub fn resample(trace: &Trace, new_dt: f64) -> Result<Trace> {
    if !(new_dt > 0.0) || !new_dt.is_finite() {
        return Err(Error::Argument(format!("sample interval must be > 0, got {new_dt}")));
    }
    if (new_dt - trace.dt()).abs() < 1e-12 {
        return Ok(trace.clone());
    }
    // Last grid point that still lies in the recorded span (small slack so a
    // mathematically exact endpoint is not lost to rounding).
    let n_new = (trace.duration() / new_dt * (1.0 + 1e-12)).floor() as usize + 1;
    let mut channels = BTreeMap::new();
    for (channel, samples) in trace.iter_channels() {
        let mut out = Vec::with_capacity(n_new);
        for k in 0..n_new {
            let pos = k as f64 * new_dt / trace.dt();
            let i = (pos.floor() as usize).min(trace.len() - 1);
            let frac = pos - i as f64;
            let value = if i + 1 < trace.len() && frac > 0.0 {
                samples[i] + (samples[i + 1] - samples[i]) * frac
            } else {
                samples[i]
            };
            out.push(value);
        }
        channels.insert(channel, out);
    }
    Trace::new(trace.t0(), new_dt, channels)
}

/// Averages several recordings sample-by-sample on a common grid.
///
/// Each trace is resampled to `dt`, all are truncated to the shortest
/// length, and only channels present in *every* input appear in the result.
/// The result keeps the first trace's start time.
pub fn average_traces(traces: &[Trace], dt: f64) -> Result<Trace> {
    if traces.is_empty() {
        return Err(Error::Argument("cannot average an empty set of traces".into()));
    }
    let resampled: Vec<Trace> = traces.iter().map(|t| resample(t, dt)).collect::<Result<_>>()?;
    let len = resampled.iter().map(Trace::len).min().expect("non-empty");
    let mut common: Vec<Channel> = resampled[0].channel_list();
    common.retain(|c| resampled.iter().all(|t| t.has(*c)));
    if common.is_empty() {
        return Err(Error::Argument("traces share no common channels to average".into()));
    }
    let scale = 1.0 / resampled.len() as f64;
    let mut channels = BTreeMap::new();
    for channel in common {
        let mut acc = vec![0.0; len];
        for trace in &resampled {
            let samples = trace.channel(channel).expect("channel checked above");
            for (a, &v) in acc.iter_mut().zip(samples) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a *= scale);
        channels.insert(channel, acc);
    }
    Trace::new(resampled[0].t0(), dt, channels)
}

/// Maximal run of samples with speed strictly below a threshold.
///
/// Indices are half-open: samples `start..end` are below the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StandstillInterval {
    /// First below-threshold sample.
    pub start: usize,
    /// One past the last below-threshold sample.
    pub end: usize,
}

impl StandstillInterval {
    /// Time span from the first to the last below-threshold sample, s.
    ///
    /// Span, not sample count: a run of `k` samples covers `(k-1)·dt`.
    pub fn duration(&self, dt: f64) -> f64 {
        (self.end - 1 - self.start) as f64 * dt
    }
}

/// Finds standstills: maximal runs with `vx` strictly below
/// `speed_threshold` lasting at least `min_duration`.
pub fn detect_standstills(
    trace: &Trace,
    speed_threshold: f64,
    min_duration: f64,
) -> Result<Vec<StandstillInterval>> {
    if !(speed_threshold > 0.0) {
        return Err(Error::Argument(format!(
            "speed threshold must be > 0, got {speed_threshold}"
        )));
    }
    let vx = trace.require(Channel::SpeedX, "standstill detection")?;
    let mut intervals = Vec::new();
    let mut run_start = None;
    for (i, &v) in vx.iter().chain(std::iter::once(&f64::INFINITY)).enumerate() {
        match (run_start, v < speed_threshold) {
            (None, true) => run_start = Some(i),
            (Some(start), false) => {
                let interval = StandstillInterval { start, end: i };
                if interval.duration(trace.dt()) >= min_duration - 1e-9 {
                    intervals.push(interval);
                }
                run_start = None;
            }
            _ => {}
        }
    }
    Ok(intervals)
}

/// A planned stop in the reference: where to decelerate to standstill, how
/// hard, and how long to dwell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandstillMark {
    /// Sample index on the reference grid where the deceleration begins.
    pub index: usize,
    /// Speed the stop targets, m/s (0 for a full stop).
    pub target_speed: f64,
    /// Desired constant deceleration, m/s² (negative).
    pub desired_decel: f64,
    /// Time to dwell at standstill, s.
    pub dwell: f64,
}

/// Bounds on the estimated approach deceleration, m/s².
const DECEL_ESTIMATE_RANGE: (f64, f64) = (-4.0, -0.3);

/// Fallback deceleration when an approach slope cannot be estimated, m/s².
pub const DEFAULT_DESIRED_DECEL: f64 = -1.0;

/// Derives stop marks from detected standstills.
///
/// The desired deceleration is the mean slope of the speed over the approach
/// (from the most recent local speed maximum down to the standstill onset),
/// clamped to a plausible range; the dwell is the detected interval's span.
/// Standstills with no usable approach (e.g. at the very start of the
/// recording) fall back to [`DEFAULT_DESIRED_DECEL`].
pub fn estimate_stop_marks(
    trace: &Trace,
    intervals: &[StandstillInterval],
) -> Result<Vec<StandstillMark>> {
    let vx = trace.require(Channel::SpeedX, "stop mark estimation")?;
    let mut marks = Vec::with_capacity(intervals.len());
    for interval in intervals {
        let onset = interval.start;
        // Walk back along the strictly decreasing approach run.
        let mut peak = onset;
        while peak > 0 && vx[peak - 1] > vx[peak] {
            peak -= 1;
        }
        let decel = if onset - peak >= 3 {
            let slope = (vx[onset] - vx[peak]) / ((onset - peak) as f64 * trace.dt());
            slope.clamp(DECEL_ESTIMATE_RANGE.0, DECEL_ESTIMATE_RANGE.1)
        } else {
            DEFAULT_DESIRED_DECEL
        };
        marks.push(StandstillMark {
            index: onset,
            target_speed: 0.0,
            desired_decel: decel,
            dwell: interval.duration(trace.dt()),
        });
    }
    Ok(marks)
}

/// Result of aligning one trace's standstill onsets to another's.
#[derive(Debug, Clone)]
pub struct SyncResult {
    /// The second trace with its segments shifted onto the first's timeline.
    pub aligned: Trace,
    /// Applied shift per matched standstill, s (negative = moved earlier).
    pub shifts: Vec<f64>,
    /// False when either trace had no standstill, in which case `aligned`
    /// is the unmodified input.
    pub matched: bool,
}

/// Shifts `b`'s inter-standstill segments in time so its standstill onsets
/// coincide with `a`'s.
///
/// Segment samples are moved whole (values bit-exact, only their timing
/// changes); where a shift opens a gap the preceding standstill sample is
/// held, and where segments overlap the later segment wins. Both traces must
/// share the same sample interval and contain `vx`.
pub fn synchronize_events(
    a: &Trace,
    b: &Trace,
    speed_threshold: f64,
    min_duration: f64,
) -> Result<SyncResult> {
    if (a.dt() - b.dt()).abs() > 1e-12 {
        return Err(Error::Argument(format!(
            "traces must share a sample interval to synchronize (got {} and {})",
            a.dt(),
            b.dt()
        )));
    }
    let onsets_a: Vec<usize> = detect_standstills(a, speed_threshold, min_duration)?
        .iter()
        .map(|s| s.start)
        .collect();
    let onsets_b: Vec<usize> = detect_standstills(b, speed_threshold, min_duration)?
        .iter()
        .map(|s| s.start)
        .collect();
    if onsets_a.is_empty() || onsets_b.is_empty() {
        return Ok(SyncResult { aligned: b.clone(), shifts: Vec::new(), matched: false });
    }

    let matched = onsets_a.len().min(onsets_b.len());
    let deltas: Vec<isize> = (0..matched)
        .map(|k| onsets_a[k] as isize - onsets_b[k] as isize)
        .collect();

    let n = b.len();
    let mut channels = BTreeMap::new();
    for (channel, samples) in b.iter_channels() {
        let mut out = vec![f64::NAN; n];
        let mut written = vec![false; n];
        // Segment k covers b's samples [seg_start, seg_end) and is shifted by
        // deltas[k]; the head segment moves with the first standstill.
        for k in 0..matched {
            let seg_start = if k == 0 { 0 } else { onsets_b[k] };
            let seg_end = if k + 1 < matched { onsets_b[k + 1] } else { n };
            for j in seg_start..seg_end {
                let target = j as isize + deltas[k];
                if (0..n as isize).contains(&target) {
                    out[target as usize] = samples[j];
                    written[target as usize] = true;
                }
            }
        }
        // Gaps open where a later segment moved further right than its
        // predecessor; hold the last value (the vehicle is stationary there).
        let first_value = out
            .iter()
            .zip(&written)
            .find_map(|(v, w)| w.then_some(*v))
            .unwrap_or(0.0);
        let mut last = first_value;
        for (v, w) in out.iter_mut().zip(&written) {
            if *w {
                last = *v;
            } else {
                *v = last;
            }
        }
        channels.insert(channel, out);
    }

    Ok(SyncResult {
        aligned: Trace::new(b.t0(), b.dt(), channels)?,
        shifts: deltas.iter().map(|&d| d as f64 * b.dt()).collect(),
        matched: true,
    })
}

/// The planner's input: reference acceleration exposure plus stop marks.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrace {
    /// Sample interval, s.
    pub dt: f64,
    /// Longitudinal acceleration to reproduce, m/s².
    pub ax: Vec<f64>,
    /// Lateral acceleration to reproduce, m/s².
    pub ay: Vec<f64>,
    /// Stops to replicate, sorted by index.
    pub marks: Vec<StandstillMark>,
}

impl ReferenceTrace {
    /// Extracts the reference channels from an (averaged) trace.
    pub fn from_trace(trace: &Trace, marks: Vec<StandstillMark>) -> Result<Self> {
        let ax = trace.require(Channel::AccelX, "planning reference")?.to_vec();
        let ay = trace.require(Channel::AccelY, "planning reference")?.to_vec();
        for pair in marks.windows(2) {
            if pair[1].index <= pair[0].index {
                return Err(Error::Argument(
                    "standstill marks must have strictly increasing indices".into(),
                ));
            }
        }
        if let Some(mark) = marks.last() {
            if mark.index >= ax.len() {
                return Err(Error::Argument(format!(
                    "standstill mark index {} outside reference of {} samples",
                    mark.index,
                    ax.len()
                )));
            }
        }
        Ok(Self { dt: trace.dt(), ax, ay, marks })
    }

    /// Number of reference samples.
    pub fn len(&self) -> usize {
        self.ax.len()
    }

    /// True when the reference holds no samples.
    pub fn is_empty(&self) -> bool {
        self.ax.is_empty()
    }
}

/// Writes a reference file: the averaged trace plus a standstill-mark
/// section as comment lines (so the file still loads as a plain trace).
pub fn save_reference<W: Write>(
    mut writer: W,
    trace: &Trace,
    marks: &[StandstillMark],
) -> Result<()> {
    let mut buffer = Vec::new();
    save_trace(&mut buffer, trace)?;
    writer.write_all(&buffer)?;
    writeln!(writer, "# standstill_marks")?;
    writeln!(writer, "# index,target_speed,desired_decel,dwell")?;
    for mark in marks {
        writeln!(
            writer,
            "# {},{:.9},{:.9},{:.9}",
            mark.index, mark.target_speed, mark.desired_decel, mark.dwell
        )?;
    }
    Ok(())
}

/// Reads a reference file: the trace and the marks from its comment section.
pub fn load_reference<R: Read>(mut reader: R) -> Result<(Trace, Vec<StandstillMark>)> {
    let mut content = String::new();
    reader.read_to_string(&mut content)?;
    let trace = load_trace(
        content.as_bytes(),
        &[Channel::AccelX, Channel::AccelY],
        "planning reference",
    )?;

    let mut marks = Vec::new();
    let mut in_marks = false;
    for (i, line) in content.lines().enumerate() {
        let line = line.trim();
        if line == "# standstill_marks" {
            in_marks = true;
            continue;
        }
        if !in_marks || !line.starts_with('#') {
            continue;
        }
        let body = line.trim_start_matches('#').trim();
        if body.starts_with("index") || body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("standstill mark needs 4 fields, got {}", fields.len()),
            });
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("cannot parse `{s}` as a number"),
            })
        };
        marks.push(StandstillMark {
            index: fields[0].parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("cannot parse `{}` as an index", fields[0]),
            })?,
            target_speed: parse_f(fields[1])?,
            desired_decel: parse_f(fields[2])?,
            dwell: parse_f(fields[3])?,
        });
    }
    Ok((trace, marks))
}
