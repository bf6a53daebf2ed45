//! Frequency-domain spectra and cross-case comparison reports.
//!
//! The comparison workflow mirrors how recorded, planned, and simulated
//! drives are judged against each other: single-sided amplitude spectra per
//! channel, band-limited maximum spectral differences, time-domain RMS
//! tracking errors, and dose-value columns with percentage gaps against a
//! baseline case.

use std::collections::BTreeSet;
use std::io::Write;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sickness::{assess_trace, SicknessReport, WeightingConfig};
use crate::trace::{Channel, Trace};

/// Minimum signal length for a spectrum.
const MIN_SPECTRUM_LEN: usize = 16;
/// Floor for percentage denominators.
const PERCENT_FLOOR: f64 = 1e-9;
/// Baseline bins below this fraction of the band peak are excluded from
/// spectral percentage comparisons.
const NOISE_GUARD: f64 = 0.01;

/// Taper applied before the Fourier transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// No taper; exact amplitudes for whole-period tones.
    #[default]
    Rectangular,
    /// Hann taper for leakage-sensitive content, compensated so a
    /// whole-period tone still reads its amplitude.
    Hann,
}

/// Single-sided amplitude spectrum of one signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Bin frequencies, Hz, from 0 to the Nyquist frequency.
    pub freqs: Vec<f64>,
    /// Amplitude per bin, in the signal's unit.
    pub amplitude: Vec<f64>,
    /// Bin spacing, Hz.
    pub df: f64,
    /// Taper used.
    pub window: Window,
    /// Source signal length, samples (even lengths place the last bin
    /// exactly at Nyquist).
    pub n: usize,
}

/// Single-sided amplitude spectrum of `signal` sampled at `fs` Hz with the
/// given taper. A unit-amplitude sine with a whole number of periods shows
/// amplitude 1 at its frequency bin; DC and Nyquist bins carry their
/// one-sided magnitudes.
pub fn amplitude_spectrum(signal: &[f64], fs: f64, window: Window) -> Result<Spectrum> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::Argument(format!(
            "sample rate must be positive, got {fs}"
        )));
    }
    let n = signal.len();
    if n < MIN_SPECTRUM_LEN {
        return Err(Error::SignalTooShort {
            required: MIN_SPECTRUM_LEN,
            actual: n,
        });
    }
    let mut buf: Vec<Complex64>;
    // Amplitudes are normalized by the window sum, which reduces to N for
    // the rectangular case and compensates the Hann taper's coherent gain.
    let norm: f64;
    match window {
        Window::Rectangular => {
            buf = signal.iter().map(|v| Complex64::new(*v, 0.0)).collect();
            norm = n as f64;
        }
        Window::Hann => {
            let mut sum = 0.0;
            buf = signal
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let w = 0.5
                        * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos());
                    sum += w;
                    Complex64::new(w * *v, 0.0)
                })
                .collect();
            norm = sum;
        }
    }
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let bins = n / 2 + 1;
    let df = fs / n as f64;
    let mut freqs = Vec::with_capacity(bins);
    let mut amplitude = Vec::with_capacity(bins);
    for (k, value) in buf.iter().take(bins).enumerate() {
        freqs.push(k as f64 * df);
        // Interior bins fold in their negative-frequency twins; DC and (for
        // even N) the Nyquist bin have none.
        let one_sided = k == 0 || (n % 2 == 0 && k == n / 2);
        let scale = if one_sided { 1.0 } else { 2.0 };
        amplitude.push(scale * value.norm() / norm);
    }
    Ok(Spectrum {
        freqs,
        amplitude,
        df,
        window,
        n,
    })
}

impl Spectrum {
    /// Mean square of the time signal reconstructed from the single-sided
    /// amplitudes (rectangular window): one-sided bins (DC, and Nyquist for
    /// even source lengths) contribute their squares, folded interior bins
    /// half of theirs.
    pub fn mean_square(&self) -> f64 {
        let last = self.amplitude.len() - 1;
        self.amplitude
            .iter()
            .enumerate()
            .map(|(k, a)| {
                if k == 0 || (k == last && self.n % 2 == 0) {
                    a * a
                } else {
                    a * a / 2.0
                }
            })
            .sum()
    }

    /// Writes the spectrum as CSV (`freq,amplitude`).
    pub fn save_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["freq", "amplitude"])?;
        for (f, a) in self.freqs.iter().zip(&self.amplitude) {
            w.write_record([format!("{f:.9}"), format!("{a:.9}")])?;
        }
        w.flush().map_err(Error::from)?;
        Ok(())
    }
}

/// Result of a band-limited spectral comparison against a baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralDifference {
    /// Compared band, Hz.
    pub band: (f64, f64),
    /// Maximum percentage difference over comparable bins; `None` when the
    /// band holds no baseline content above the noise guard.
    pub max_percent: Option<f64>,
    /// Bins that entered the comparison.
    pub bins_compared: usize,
    /// Bins skipped by the noise-floor guard.
    pub bins_guarded: usize,
}

/// Maximum percentage difference `|A_a − A_b| / max(A_b, ε) · 100` over the
/// band, with `b` as baseline. Bins where the baseline is below 1% of its
/// peak amplitude are guarded out as noise floor (the peak is taken over
/// the whole baseline spectrum, so a band holding nothing but leakage floor
/// reports no comparable content rather than comparing noise against
/// noise). Not symmetric in its arguments: the second spectrum is the
/// baseline.
pub fn spectral_difference(
    a: &Spectrum,
    b: &Spectrum,
    band: (f64, f64),
) -> Result<SpectralDifference> {
    if a.freqs.len() != b.freqs.len()
        || a.freqs
            .iter()
            .zip(&b.freqs)
            .any(|(fa, fb)| (fa - fb).abs() > 1e-12)
    {
        return Err(Error::Argument(
            "spectra must share one frequency grid".into(),
        ));
    }
    if !(band.0 <= band.1) {
        return Err(Error::Argument(format!(
            "band must be ordered, got ({}, {})",
            band.0, band.1
        )));
    }
    let in_band: Vec<usize> = b
        .freqs
        .iter()
        .enumerate()
        .filter(|(_, f)| **f >= band.0 && **f <= band.1)
        .map(|(k, _)| k)
        .collect();
    let peak = b.amplitude.iter().fold(0.0f64, |m, a| m.max(*a));
    let mut max_percent: Option<f64> = None;
    let mut bins_compared = 0;
    let mut bins_guarded = 0;
    for k in in_band {
        if b.amplitude[k] < NOISE_GUARD * peak {
            bins_guarded += 1;
            continue;
        }
        bins_compared += 1;
        let pct =
            100.0 * (a.amplitude[k] - b.amplitude[k]).abs() / b.amplitude[k].max(PERCENT_FLOOR);
        max_percent = Some(max_percent.map_or(pct, |m: f64| m.max(pct)));
    }
    Ok(SpectralDifference {
        band,
        max_percent,
        bins_compared,
        bins_guarded,
    })
}

/// Settings for cross-case comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Band for spectral comparisons, Hz.
    pub band: (f64, f64),
    /// Taper for the comparison spectra.
    pub window: Window,
}

impl Default for AnalysisConfig {
    /// The sickness-relevant band up to the comparison filter's stopband
    /// edge, rectangular window.
    fn default() -> Self {
        Self {
            band: (0.0, 2.0),
            window: Window::Rectangular,
        }
    }
}

/// One case (column) of a tracking report.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    /// Column label.
    pub label: String,
    /// Dose value per report axis; `None` where the case lacks the channel.
    pub msdv: Vec<Option<f64>>,
    /// Combined dose over the axes present.
    pub total: f64,
    /// Dose percentage gap vs the baseline per axis; `None` for the
    /// baseline column or where either side lacks the axis.
    pub msdv_percent: Vec<Option<f64>>,
    /// Combined-dose percentage gap vs the baseline.
    pub total_percent: Option<f64>,
    /// Mean speed, m/s, when the case records speed.
    pub speed_mean: Option<f64>,
    /// Population standard deviation of speed, m/s.
    pub speed_std: Option<f64>,
    /// RMS difference vs the baseline per compared signal channel.
    pub rms_error: Vec<Option<f64>>,
    /// Band-limited max spectral difference vs the baseline per compared
    /// signal channel; inner `None` flags no comparable content.
    pub spectral_percent: Vec<Option<Option<f64>>>,
}

/// Cross-case comparison: dose columns, speeds, and per-channel errors,
/// all relative to the baseline (first) case.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingReport {
    /// Spectral comparison band, Hz.
    pub band: (f64, f64),
    /// Axes scored for dose values (union over cases, canonical order).
    pub axes: Vec<Channel>,
    /// Channels compared in time and frequency domain (present in the
    /// baseline and at least one other case).
    pub signal_channels: Vec<Channel>,
    /// Case columns; index 0 is the baseline.
    pub cases: Vec<CaseReport>,
}

fn percent_gap(value: f64, baseline: f64) -> f64 {
    100.0 * (value - baseline).abs() / baseline.abs().max(PERCENT_FLOOR)
}

fn speed_stats(trace: &Trace) -> (Option<f64>, Option<f64>) {
    let Some(speed) = trace.channel(Channel::SpeedX) else {
        return (None, None);
    };
    let n = speed.len() as f64;
    let mean = speed.iter().sum::<f64>() / n;
    let var = speed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

/// Builds the full comparison of `generated` (and optionally `measured`)
/// against the `reference` baseline: per-axis dose values with percentage
/// gaps, combined doses, speed statistics, per-channel RMS tracking errors,
/// and band-limited spectral differences.
pub fn tracking_report(
    reference: &Trace,
    generated: &Trace,
    measured: Option<&Trace>,
    weighting: &WeightingConfig,
    config: &AnalysisConfig,
) -> Result<TrackingReport> {
    let mut traces: Vec<(&str, &Trace)> = vec![("reference", reference), ("generated", generated)];
    if let Some(m) = measured {
        traces.push(("measured", m));
    }
    for (label, trace) in &traces[1..] {
        if (trace.dt() - reference.dt()).abs() > 1e-12 {
            return Err(Error::Argument(format!(
                "{} dt {} differs from reference dt {}; resample first",
                label,
                trace.dt(),
                reference.dt()
            )));
        }
    }

    let scored: Vec<SicknessReport> = traces
        .iter()
        .map(|(_, t)| assess_trace(t, weighting))
        .collect::<Result<_>>()?;

    let mut axis_set = BTreeSet::new();
    for report in &scored {
        axis_set.extend(report.axes.iter().copied());
    }
    let axes: Vec<Channel> = Channel::ALL
        .into_iter()
        .filter(|c| axis_set.contains(c))
        .collect();

    let signal_channels: Vec<Channel> = Channel::ALL
        .into_iter()
        .filter(|c| {
            reference.has(*c) && traces[1..].iter().any(|(_, t)| t.has(*c))
        })
        .collect();

    let mut cases = Vec::with_capacity(traces.len());
    for (idx, ((label, trace), score)) in traces.iter().zip(&scored).enumerate() {
        let msdv: Vec<Option<f64>> = axes
            .iter()
            .map(|axis| {
                score
                    .axes
                    .iter()
                    .position(|a| a == axis)
                    .map(|i| score.finals[i])
            })
            .collect();
        let baseline = &cases.first().map(|c: &CaseReport| c.msdv.clone());
        let msdv_percent: Vec<Option<f64>> = match baseline {
            Some(base) if idx > 0 => msdv
                .iter()
                .zip(base)
                .map(|(v, b)| match (v, b) {
                    (Some(v), Some(b)) => Some(percent_gap(*v, *b)),
                    _ => None,
                })
                .collect(),
            _ => vec![None; axes.len()],
        };
        let total = score.total;
        let total_percent = if idx > 0 {
            cases
                .first()
                .map(|c: &CaseReport| percent_gap(total, c.total))
        } else {
            None
        };
        let (speed_mean, speed_std) = speed_stats(trace);

        let mut rms_error = Vec::with_capacity(signal_channels.len());
        let mut spectral_percent = Vec::with_capacity(signal_channels.len());
        for channel in &signal_channels {
            let (Some(own), Some(base)) = (trace.channel(*channel), reference.channel(*channel))
            else {
                rms_error.push(None);
                spectral_percent.push(None);
                continue;
            };
            if idx == 0 {
                rms_error.push(None);
                spectral_percent.push(None);
                continue;
            }
            let n = own.len().min(base.len());
            let mse = own[..n]
                .iter()
                .zip(&base[..n])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / n as f64;
            rms_error.push(Some(mse.sqrt()));
            let fs = 1.0 / reference.dt();
            let own_spec = amplitude_spectrum(&own[..n], fs, config.window)?;
            let base_spec = amplitude_spectrum(&base[..n], fs, config.window)?;
            let diff = spectral_difference(&own_spec, &base_spec, config.band)?;
            spectral_percent.push(Some(diff.max_percent));
        }

        cases.push(CaseReport {
            label: label.to_string(),
            msdv,
            total,
            msdv_percent,
            total_percent,
            speed_mean,
            speed_std,
            rms_error,
            spectral_percent,
        });
    }

    Ok(TrackingReport {
        band: config.band,
        axes,
        signal_channels,
        cases,
    })
}

/// Formats an optional value, using `x` for absent entries.
fn cell(value: Option<f64>, precision: usize) -> String {
    match value {
        Some(v) => format!("{v:.precision$}"),
        None => "x".to_string(),
    }
}

impl TrackingReport {
    /// Writes the report as CSV: one row per metric with a value and
    /// percentage column per case. Absent entries are empty.
    pub fn save_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["metric".to_string(), "axis".to_string()];
        for case in &self.cases {
            header.push(case.label.clone());
            header.push(format!("{}_pct", case.label));
        }
        w.write_record(&header)?;
        let empty_for = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.9}"));
        for (i, axis) in self.axes.iter().enumerate() {
            let mut row = vec!["msdv".to_string(), axis.csv_name().to_string()];
            for case in &self.cases {
                row.push(empty_for(case.msdv[i]));
                row.push(empty_for(case.msdv_percent[i]));
            }
            w.write_record(&row)?;
        }
        let mut row = vec!["msdv_total".to_string(), String::new()];
        for case in &self.cases {
            row.push(format!("{:.9}", case.total));
            row.push(empty_for(case.total_percent));
        }
        w.write_record(&row)?;
        for (metric, get) in [
            ("speed_mean", &(|c: &CaseReport| c.speed_mean) as &dyn Fn(&CaseReport) -> Option<f64>),
            ("speed_std", &|c: &CaseReport| c.speed_std),
        ] {
            let mut row = vec![metric.to_string(), String::new()];
            for case in &self.cases {
                row.push(empty_for(get(case)));
                row.push(String::new());
            }
            w.write_record(&row)?;
        }
        for (i, channel) in self.signal_channels.iter().enumerate() {
            let mut row = vec!["rms_error".to_string(), channel.csv_name().to_string()];
            for case in &self.cases {
                row.push(empty_for(case.rms_error[i]));
                row.push(String::new());
            }
            w.write_record(&row)?;
            let mut row = vec![
                "spectral_max_pct".to_string(),
                channel.csv_name().to_string(),
            ];
            for case in &self.cases {
                row.push(empty_for(case.spectral_percent[i].flatten()));
                row.push(String::new());
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(Error::from)?;
        Ok(())
    }

    /// Renders an aligned plain-text table: dose components and totals per
    /// case with percentage gaps vs the baseline, speed statistics, and
    /// per-channel tracking errors. Absent entries show as `x`.
    pub fn render_text(&self) -> String {
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["metric".to_string(), "axis".to_string()];
        for case in &self.cases {
            header.push(case.label.clone());
            header.push("%".to_string());
        }
        rows.push(header);
        for (i, axis) in self.axes.iter().enumerate() {
            let mut row = vec!["MSDV".to_string(), axis.csv_name().to_string()];
            for case in &self.cases {
                row.push(cell(case.msdv[i], 2));
                row.push(cell(case.msdv_percent[i], 1));
            }
            rows.push(row);
        }
        let mut row = vec!["MSDV total".to_string(), String::new()];
        for case in &self.cases {
            row.push(format!("{:.2}", case.total));
            row.push(cell(case.total_percent, 1));
        }
        rows.push(row);
        let mut row = vec!["mean speed".to_string(), "m/s".to_string()];
        for case in &self.cases {
            row.push(cell(case.speed_mean, 2));
            row.push(cell(case.speed_std.map(|s| s), 2));
        }
        rows.push(row);
        for (i, channel) in self.signal_channels.iter().enumerate() {
            let mut row = vec!["RMS error".to_string(), channel.csv_name().to_string()];
            for case in &self.cases {
                row.push(cell(case.rms_error[i], 3));
                row.push(String::new());
            }
            rows.push(row);
            let mut row = vec![
                format!("max spec diff {:.1}-{:.1} Hz", self.band.0, self.band.1),
                channel.csv_name().to_string(),
            ];
            for case in &self.cases {
                row.push(cell(case.spectral_percent[i].flatten(), 1));
                row.push(String::new());
            }
            rows.push(row);
        }

        let cols = rows[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in rows {
            let mut line = String::new();
            for (c, value) in row.iter().enumerate() {
                if c > 0 {
                    line.push_str("  ");
                }
                line.push_str(&format!("{value:>width$}", width = widths[c]));
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msdv_total;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn sine(amp: f64, f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin())
            .collect()
    }

    #[test]
    fn zero_signal_gives_zero_spectrum() {
        let s = amplitude_spectrum(&vec![0.0; 100], 10.0, Window::Rectangular).unwrap();
        assert_eq!(s.freqs.len(), 51);
        assert_eq!(s.amplitude.len(), 51);
        assert!(s.amplitude.iter().all(|a| *a == 0.0));
        assert_relative_eq!(s.df, 0.1);
        assert_relative_eq!(*s.freqs.last().unwrap(), 5.0);
    }

    #[test]
    fn whole_period_tone_reads_its_amplitude() {
        let fs = 10.0;
        let n = 1000;
        let s = amplitude_spectrum(&sine(1.0, 1.0, fs, n), fs, Window::Rectangular).unwrap();
        let bin = (1.0 / s.df).round() as usize;
        assert_relative_eq!(s.freqs[bin], 1.0);
        assert!((s.amplitude[bin] - 1.0).abs() < 1e-9);
        for (k, a) in s.amplitude.iter().enumerate() {
            if k != bin {
                assert!(*a < 1e-9, "leakage {a} at bin {k}");
            }
        }
    }

    #[test]
    fn two_tones_read_their_amplitudes() {
        let fs = 10.0;
        let n = 1000;
        let signal: Vec<f64> = sine(0.5, 0.2, fs, n)
            .iter()
            .zip(sine(0.25, 0.8, fs, n))
            .map(|(a, b)| a + b)
            .collect();
        let s = amplitude_spectrum(&signal, fs, Window::Rectangular).unwrap();
        let bin_slow = (0.2 / s.df).round() as usize;
        let bin_fast = (0.8 / s.df).round() as usize;
        assert!((s.amplitude[bin_slow] - 0.5).abs() < 1e-9);
        assert!((s.amplitude[bin_fast] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn hann_window_reads_whole_period_tone_and_tames_leakage() {
        let fs = 10.0;
        let n = 1000;
        let tone = sine(1.0, 1.0, fs, n);
        let hann = amplitude_spectrum(&tone, fs, Window::Hann).unwrap();
        let bin = (1.0 / hann.df).round() as usize;
        // Coherent-gain compensation keeps the peak at the amplitude; the
        // taper spreads half-height skirts onto the adjacent bins only.
        assert!((hann.amplitude[bin] - 1.0).abs() < 1e-9);
        assert!((hann.amplitude[bin - 1] - 0.5).abs() < 1e-9);
        for (k, a) in hann.amplitude.iter().enumerate() {
            if k + 1 < bin || k > bin + 1 {
                assert!(*a < 1e-9, "Hann leakage {a} at bin {k}");
            }
        }

        // A fractional-period tone leaks far less with the taper.
        let off_grid = sine(1.0, 1.0043, fs, n);
        let rect = amplitude_spectrum(&off_grid, fs, Window::Rectangular).unwrap();
        let hann = amplitude_spectrum(&off_grid, fs, Window::Hann).unwrap();
        let far = 300;
        assert!(hann.amplitude[far] < rect.amplitude[far] / 100.0);
    }

    #[test]
    fn too_short_signal_is_rejected() {
        let err = amplitude_spectrum(&vec![1.0; 15], 10.0, Window::Rectangular).unwrap_err();
        match err {
            Error::SignalTooShort { required, actual } => {
                assert_eq!(required, 16);
                assert_eq!(actual, 15);
            }
            other => panic!("expected length error, got {other:?}"),
        }
    }

    #[test]
    fn parseval_holds_for_rectangular_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &n in &[1000usize, 999] {
            let signal: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let time_ms = signal.iter().map(|v| v * v).sum::<f64>() / n as f64;
            let s = amplitude_spectrum(&signal, 10.0, Window::Rectangular).unwrap();
            let spec_ms = s.mean_square();
            assert_relative_eq!(spec_ms, time_ms, max_relative = 1e-9);
        }
    }

    #[test]
    fn spectral_difference_identity_and_scaling() {
        let fs = 10.0;
        let n = 1000;
        let signal: Vec<f64> = sine(1.0, 0.3, fs, n)
            .iter()
            .zip(sine(0.5, 0.9, fs, n))
            .map(|(a, b)| a + b)
            .collect();
        let b = amplitude_spectrum(&signal, fs, Window::Rectangular).unwrap();
        let same = spectral_difference(&b, &b, (0.0, 2.0)).unwrap();
        assert_eq!(same.max_percent, Some(0.0));
        assert!(same.bins_compared > 0);

        let scaled: Vec<f64> = signal.iter().map(|v| 0.75 * v).collect();
        let a = amplitude_spectrum(&scaled, fs, Window::Rectangular).unwrap();
        let diff = spectral_difference(&a, &b, (0.0, 2.0)).unwrap();
        assert_relative_eq!(diff.max_percent.unwrap(), 25.0, max_relative = 1e-9);
    }

    #[test]
    fn spectral_difference_guards_noise_floor() {
        let fs = 10.0;
        let n = 1000;
        let b = amplitude_spectrum(&sine(1.0, 0.3, fs, n), fs, Window::Rectangular).unwrap();
        let a = amplitude_spectrum(&sine(0.9, 0.3, fs, n), fs, Window::Rectangular).unwrap();
        // A band holding only leakage-floor bins has no comparable content.
        let empty = spectral_difference(&a, &b, (2.0, 4.0)).unwrap();
        assert_eq!(empty.max_percent, None);
        assert_eq!(empty.bins_compared, 0);
        assert!(empty.bins_guarded > 0);
    }

    #[test]
    fn spectral_difference_rejects_mismatched_grids() {
        let fs = 10.0;
        let a = amplitude_spectrum(&sine(1.0, 0.3, fs, 1000), fs, Window::Rectangular).unwrap();
        let b = amplitude_spectrum(&sine(1.0, 0.3, fs, 998), fs, Window::Rectangular).unwrap();
        assert!(matches!(
            spectral_difference(&a, &b, (0.0, 2.0)),
            Err(Error::Argument(_))
        ));
    }

    fn drive_trace(ax_scale: f64, n: usize) -> Trace {
        let fs = 10.0;
        let mut channels = BTreeMap::new();
        channels.insert(Channel::AccelX, sine(ax_scale, 0.16, fs, n));
        channels.insert(Channel::AccelY, sine(2.0, 0.2, fs, n));
        channels.insert(
            Channel::SpeedX,
            (0..n).map(|i| 8.0 + 0.5 * (i as f64 * 0.01).sin()).collect(),
        );
        Trace::new(0.0, 0.1, channels).unwrap()
    }

    #[test]
    fn self_comparison_is_all_zero() {
        let reference = drive_trace(1.0, 900);
        let report = tracking_report(
            &reference,
            &reference.clone(),
            None,
            &WeightingConfig::default(),
            &AnalysisConfig::default(),
        )
        .unwrap();
        assert_eq!(report.cases.len(), 2);
        let case = &report.cases[1];
        for pct in case.msdv_percent.iter().flatten() {
            assert_relative_eq!(*pct, 0.0);
        }
        assert_relative_eq!(case.total_percent.unwrap(), 0.0);
        for rms in case.rms_error.iter().flatten() {
            assert_eq!(*rms, 0.0);
        }
        for spec in case.spectral_percent.iter().flatten() {
            assert_eq!(*spec, Some(0.0));
        }
    }

    #[test]
    fn scaled_ax_shows_in_its_axis_only() {
        let reference = drive_trace(1.0, 900);
        let generated = drive_trace(0.67, 900);
        let report = tracking_report(
            &reference,
            &generated,
            None,
            &WeightingConfig::default(),
            &AnalysisConfig::default(),
        )
        .unwrap();
        let case = &report.cases[1];
        let ax_idx = report
            .axes
            .iter()
            .position(|c| *c == Channel::AccelX)
            .unwrap();
        let ay_idx = report
            .axes
            .iter()
            .position(|c| *c == Channel::AccelY)
            .unwrap();
        // Dose scales linearly with the signal, so the gap is exactly 33%.
        assert_relative_eq!(
            case.msdv_percent[ax_idx].unwrap(),
            33.0,
            max_relative = 1e-9
        );
        assert_relative_eq!(case.msdv_percent[ay_idx].unwrap(), 0.0);
        // And the ax spectrum differs by exactly 33% in band.
        let ax_sig = report
            .signal_channels
            .iter()
            .position(|c| *c == Channel::AccelX)
            .unwrap();
        assert_relative_eq!(
            case.spectral_percent[ax_sig].unwrap().unwrap(),
            33.0,
            max_relative = 1e-9
        );
    }

    #[test]
    fn report_msdv_matches_direct_module_calls() {
        let reference = drive_trace(1.0, 900);
        let generated = drive_trace(0.8, 900);
        let weighting = WeightingConfig::default();
        let report = tracking_report(
            &reference,
            &generated,
            None,
            &weighting,
            &AnalysisConfig::default(),
        )
        .unwrap();
        for ((_, trace), case) in [("r", &reference), ("g", &generated)]
            .iter()
            .zip(&report.cases)
        {
            let direct = assess_trace(trace, &weighting).unwrap();
            for (axis, fin) in direct.axes.iter().zip(&direct.finals) {
                let idx = report.axes.iter().position(|a| a == axis).unwrap();
                assert_eq!(case.msdv[idx], Some(*fin));
            }
            assert_eq!(case.total, direct.total);
            let k: Vec<f64> = direct.axes.iter().map(|_| 1.0).collect();
            assert_eq!(case.total, msdv_total(&direct.finals, &k).unwrap());
        }
    }

    #[test]
    fn measured_column_is_optional() {
        let reference = drive_trace(1.0, 900);
        let generated = drive_trace(0.9, 900);
        let measured = drive_trace(0.8, 900);
        let two = tracking_report(
            &reference,
            &generated,
            None,
            &WeightingConfig::default(),
            &AnalysisConfig::default(),
        )
        .unwrap();
        assert_eq!(two.cases.len(), 2);
        let three = tracking_report(
            &reference,
            &generated,
            Some(&measured),
            &WeightingConfig::default(),
            &AnalysisConfig::default(),
        )
        .unwrap();
        assert_eq!(three.cases.len(), 3);
        assert_eq!(three.cases[2].label, "measured");
        assert!(three.cases[2].total_percent.is_some());
    }

    #[test]
    fn mismatched_dt_is_rejected() {
        let reference = drive_trace(1.0, 900);
        let mut channels = BTreeMap::new();
        channels.insert(Channel::AccelX, vec![0.0; 900]);
        let other = Trace::new(0.0, 0.05, channels).unwrap();
        assert!(matches!(
            tracking_report(
                &reference,
                &other,
                None,
                &WeightingConfig::default(),
                &AnalysisConfig::default()
            ),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn report_outputs_render() {
        let reference = drive_trace(1.0, 900);
        let generated = drive_trace(0.67, 900);
        // A measured case missing the ax channel exercises absent cells.
        let mut channels = BTreeMap::new();
        channels.insert(Channel::AccelY, sine(1.9, 0.2, 10.0, 900));
        let measured = Trace::new(0.0, 0.1, channels).unwrap();
        let report = tracking_report(
            &reference,
            &generated,
            Some(&measured),
            &WeightingConfig::default(),
            &AnalysisConfig::default(),
        )
        .unwrap();

        let text = report.render_text();
        assert!(text.contains("MSDV total"));
        assert!(text.contains('x'), "absent entries should render as x:\n{text}");
        let first_width = text.lines().next().unwrap().len();
        assert!(first_width > 20);

        let mut csv_bytes = Vec::new();
        report.save_csv(&mut csv_bytes).unwrap();
        let csv_text = String::from_utf8(csv_bytes).unwrap();
        assert!(csv_text.starts_with("metric,axis,reference,reference_pct,generated"));
        assert!(csv_text.contains("msdv_total"));
        assert!(csv_text.contains("speed_mean"));
        assert!(csv_text.contains("spectral_max_pct"));
    }

    #[test]
    fn spectrum_csv_roundtrip_layout() {
        let s = amplitude_spectrum(&sine(1.0, 1.0, 10.0, 100), 10.0, Window::Rectangular).unwrap();
        let mut bytes = Vec::new();
        s.save_csv(&mut bytes).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with("freq,amplitude"));
        assert_eq!(text.lines().count(), s.freqs.len() + 1);
    }
}
