//! Motion-sickness scoring: zero-phase comparison filtering, the
//! motion-sickness frequency weighting, and accumulated dose values (MSDV).
//!
//! Two distinct filters live here. The *zero-phase low-pass* strips
//! everything above the sickness-relevant band before signals are compared
//! across recordings; it is applied forward and backward so it cannot shift
//! features in time. The *motion-sickness weighting* is the ISO-2631-style
//! band-pass emphasising 0.1–0.3 Hz, applied causally before the dose
//! integration `MSDV = sqrt(∫ a_w² dt)`.

use std::collections::BTreeMap;
use std::io::Write;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{Channel, Trace};

/// Relative impulse-envelope threshold defining a filter's effective length.
const IMPULSE_DECAY: f64 = 1e-4;
/// Signals must be at least this many effective lengths long for the
/// zero-phase pass.
const MIN_LENGTH_FACTOR: usize = 3;
/// Longest impulse response considered before the design is declared
/// non-decaying.
const IMPULSE_CAP: usize = 1 << 16;
/// Frequency-grid resolution for verifying a design against its spec.
const MARGIN_GRID: usize = 256;

/// Specification of the zero-phase comparison low-pass. Ripple and
/// attenuation describe the *composite* (forward + backward) response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSpec {
    /// Sample rate, Hz.
    pub fs: f64,
    /// Passband edge, Hz.
    pub passband_edge: f64,
    /// Stopband edge, Hz.
    pub stopband_edge: f64,
    /// Maximum composite passband ripple, dB.
    pub passband_ripple: f64,
    /// Minimum composite stopband attenuation, dB.
    pub stopband_atten: f64,
}

impl Default for FilterSpec {
    /// The comparison-filter settings used throughout: 10 Hz sampling,
    /// 0.05 Hz passband, 2 Hz stopband, 0.01 dB ripple, 160 dB attenuation.
    fn default() -> Self {
        Self {
            fs: 10.0,
            passband_edge: 0.05,
            stopband_edge: 2.0,
            passband_ripple: 0.01,
            stopband_atten: 160.0,
        }
    }
}

impl FilterSpec {
    /// Checks ordering and positivity of all fields.
    pub fn validate(&self) -> Result<()> {
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(Error::Argument(format!(
                "sample rate must be positive, got {}",
                self.fs
            )));
        }
        if !(self.passband_edge > 0.0
            && self.passband_edge < self.stopband_edge
            && self.stopband_edge < self.fs / 2.0)
        {
            return Err(Error::Argument(format!(
                "band edges must satisfy 0 < {} < {} < fs/2 = {}",
                self.passband_edge,
                self.stopband_edge,
                self.fs / 2.0
            )));
        }
        if self.passband_ripple <= 0.0 || self.stopband_atten <= 0.0 {
            return Err(Error::Argument(
                "ripple and attenuation must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One second-order section in direct form, normalised to `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

/// Bilinear-transform gain that maps the analog frequency `f_ref` onto
/// itself in the digital domain.
fn prewarp(f_ref: f64, fs: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * f_ref;
    w / (w / (2.0 * fs)).tan()
}

impl Biquad {
    /// Discretised analog low-pass `ω²/(s² + ωs/Q + ω²)`, exact at `fc`.
    fn lowpass(fc: f64, q: f64, fs: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI * fc;
        let k = prewarp(fc, fs);
        let d = k * k + w * k / q + w * w;
        Self {
            b0: w * w / d,
            b1: 2.0 * w * w / d,
            b2: w * w / d,
            a1: 2.0 * (w * w - k * k) / d,
            a2: (k * k - w * k / q + w * w) / d,
        }
    }

    /// Discretised analog high-pass `s²/(s² + ωs/Q + ω²)`, exact at `fc`.
    fn highpass(fc: f64, q: f64, fs: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI * fc;
        let k = prewarp(fc, fs);
        let d = k * k + w * k / q + w * w;
        Self {
            b0: k * k / d,
            b1: -2.0 * k * k / d,
            b2: k * k / d,
            a1: 2.0 * (w * w - k * k) / d,
            a2: (k * k - w * k / q + w * w) / d,
        }
    }

    /// Discretised biquadratic ratio `(s² + ω₅s/Q₅ + ω₅²)/(s² + ω₆s/Q₆ +
    /// ω₆²)`, prewarped at the geometric mean of the two corners.
    fn pole_zero_ratio(f_num: f64, q_num: f64, f_den: f64, q_den: f64, fs: f64) -> Self {
        let wn = 2.0 * std::f64::consts::PI * f_num;
        let wd = 2.0 * std::f64::consts::PI * f_den;
        let k = prewarp((f_num * f_den).sqrt(), fs);
        let d = k * k + wd * k / q_den + wd * wd;
        Self {
            b0: (k * k + wn * k / q_num + wn * wn) / d,
            b1: 2.0 * (wn * wn - k * k) / d,
            b2: (k * k - wn * k / q_num + wn * wn) / d,
            a1: 2.0 * (wd * wd - k * k) / d,
            a2: (k * k - wd * k / q_den + wd * wd) / d,
        }
    }

    /// Complex frequency response at `f` Hz.
    pub fn response_at(&self, f: f64, fs: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f / fs);
        let z2 = z1 * z1;
        (self.b0 + self.b1 * z1 + self.b2 * z2) / (Complex64::new(1.0, 0.0) + self.a1 * z1 + self.a2 * z2)
    }

    /// DC gain `H(1)`.
    fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    /// Internal state that keeps a constant input `c` at its steady-state
    /// output from the first sample (transposed direct form II).
    fn steady_state(&self, c: f64) -> [f64; 2] {
        let y = self.dc_gain() * c;
        [y - self.b0 * c, self.b2 * c - self.a2 * y]
    }

    /// Filters `data` in place, starting from the steady state for the
    /// first sample.
    fn filter_in_place(&self, data: &mut [f64]) {
        let [mut z1, mut z2] = match data.first() {
            Some(&x0) => self.steady_state(x0),
            None => return,
        };
        for x in data.iter_mut() {
            let y = self.b0 * *x + z1;
            z1 = self.b1 * *x + z2 - self.a1 * y;
            z2 = self.b2 * *x - self.a2 * y;
            *x = y;
        }
    }
}

/// Runs a section cascade causally over `data`, in place.
fn cascade_in_place(sections: &[Biquad], data: &mut [f64]) {
    for section in sections {
        section.filter_in_place(data);
    }
}

/// Magnitude of a cascade at `f` Hz.
fn cascade_magnitude(sections: &[Biquad], f: f64, fs: f64) -> f64 {
    sections
        .iter()
        .map(|s| s.response_at(f, fs).norm())
        .product()
}

/// Number of samples until a cascade's impulse response envelope decays
/// below `IMPULSE_DECAY` of its peak.
fn effective_length(sections: &[Biquad]) -> Option<usize> {
    let mut impulse = vec![0.0; IMPULSE_CAP];
    impulse[0] = 1.0;
    // The impulse must start from rest, not from the constant steady state.
    for section in sections {
        let (mut z1, mut z2) = (0.0, 0.0);
        for x in impulse.iter_mut() {
            let y = section.b0 * *x + z1;
            z1 = section.b1 * *x + z2 - section.a1 * y;
            z2 = section.b2 * *x - section.a2 * y;
            *x = y;
        }
    }
    let peak = impulse.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return None;
    }
    let last = impulse
        .iter()
        .rposition(|v| v.abs() >= IMPULSE_DECAY * peak)?;
    if last + 1 >= IMPULSE_CAP {
        return None;
    }
    Some(last + 1)
}

/// A designed zero-phase low-pass: a causal Butterworth cascade applied
/// forward and backward.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroPhaseFilter {
    /// The causal prototype sections.
    pub sections: Vec<Biquad>,
    /// Impulse-envelope decay length of the prototype, samples.
    pub effective_len: usize,
    /// The specification the design was verified against.
    pub spec: FilterSpec,
}

/// Designs the zero-phase comparison low-pass for `spec`.
///
/// The prototype is an even-order Butterworth (at least order 6) whose
/// cutoff is placed at 80% of the largest cutoff that still meets the
/// stopband requirement, leaving margin on both sides. The achieved
/// composite response is verified against the spec on a frequency grid; an
/// unmeetable spec reports the achieved margins.
pub fn design_zero_phase_lowpass(spec: &FilterSpec) -> Result<ZeroPhaseFilter> {
    spec.validate()?;
    // One-way requirements: the composite response is the squared
    // magnitude, so each pass carries half the decibels.
    let eps_p2 = 10f64.powf(spec.passband_ripple / 2.0 / 10.0) - 1.0;
    let eps_s2 = 10f64.powf(spec.stopband_atten / 2.0 / 10.0) - 1.0;
    let ratio = spec.stopband_edge / spec.passband_edge;
    let n_min = ((eps_s2 / eps_p2).ln() / (2.0 * ratio.ln())).ceil() as usize;
    let mut order = n_min.max(6);
    if order % 2 == 1 {
        order += 1;
    }
    let cutoff = 0.8 * spec.stopband_edge / eps_s2.powf(1.0 / (2.0 * order as f64));
    if cutoff <= spec.passband_edge {
        return Err(Error::FilterDesign(format!(
            "cutoff {cutoff:.4} Hz collapses into the passband edge {} Hz; \
             spec is too tight for a Butterworth of order {order}",
            spec.passband_edge
        )));
    }

    let mut sections = Vec::with_capacity(order / 2);
    for k in 0..order / 2 {
        // Butterworth pole pair k has damping cos of its angle from the
        // negative real axis.
        let angle = (2 * k + 1) as f64 * std::f64::consts::PI / (2.0 * order as f64);
        let q = 1.0 / (2.0 * angle.sin());
        sections.push(Biquad::lowpass(cutoff, q, spec.fs));
    }

    let effective_len = effective_length(&sections).ok_or_else(|| {
        Error::FilterDesign(format!(
            "impulse response of the order-{order} design does not decay within {IMPULSE_CAP} samples"
        ))
    })?;

    let filter = ZeroPhaseFilter {
        sections,
        effective_len,
        spec: *spec,
    };

    // Verify the achieved composite response.
    let mut worst_pass = f64::INFINITY;
    let mut worst_stop = 0.0f64;
    for i in 0..=MARGIN_GRID {
        let fp = spec.passband_edge * i as f64 / MARGIN_GRID as f64;
        worst_pass = worst_pass.min(filter.composite_magnitude(fp));
        let fs_grid = spec.stopband_edge
            + (spec.fs / 2.0 - spec.stopband_edge) * i as f64 / MARGIN_GRID as f64;
        worst_stop = worst_stop.max(filter.composite_magnitude(fs_grid));
    }
    let ripple_db = -20.0 * worst_pass.log10();
    let atten_db = -20.0 * worst_stop.log10();
    if ripple_db > spec.passband_ripple || atten_db < spec.stopband_atten {
        return Err(Error::FilterDesign(format!(
            "order-{order} design misses the spec: composite ripple {ripple_db:.4} dB \
             (limit {}), attenuation {atten_db:.1} dB (required {})",
            spec.passband_ripple, spec.stopband_atten
        )));
    }
    Ok(filter)
}

impl ZeroPhaseFilter {
    /// Composite (forward + backward) amplitude response at `f` Hz.
    pub fn composite_magnitude(&self, f: f64) -> f64 {
        let one_way = cascade_magnitude(&self.sections, f, self.spec.fs);
        one_way * one_way
    }

    /// Minimum signal length accepted by [`Self::apply_zero_phase`].
    pub fn min_signal_len(&self) -> usize {
        MIN_LENGTH_FACTOR * self.effective_len
    }

    /// Applies the filter forward and backward so the output has zero phase
    /// shift. Edge transients are absorbed by odd-reflection padding of one
    /// effective length on both ends, removed before returning; output
    /// length equals input length.
    ///
    /// The reflection axis at each end is the least-squares trend level of
    /// the adjacent effective length, not the raw endpoint sample:
    /// reflecting about a single sample rectifies any stopband oscillation
    /// into a passband offset in the padding, which would leak back into
    /// the output. Both pass orders (forward-backward and
    /// backward-forward) are run and averaged, making the result exactly
    /// symmetric under time reversal.
    pub fn apply_zero_phase(&self, signal: &[f64]) -> Result<Vec<f64>> {
        let n = signal.len();
        if n < self.min_signal_len() {
            return Err(Error::SignalTooShort {
                required: self.min_signal_len(),
                actual: n,
            });
        }
        let pad = self.effective_len;
        let window = pad.min(n);
        let left = edge_level(signal, window, false);
        let right = edge_level(signal, window, true);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        // Odd reflection about the edge level continues trends through each
        // endpoint without bending low-frequency content.
        for i in (1..=pad).rev() {
            ext.push(2.0 * left - signal[i]);
        }
        ext.extend_from_slice(signal);
        for i in 1..=pad {
            ext.push(2.0 * right - signal[n - 1 - i]);
        }

        let mut fb = ext.clone();
        cascade_in_place(&self.sections, &mut fb);
        fb.reverse();
        cascade_in_place(&self.sections, &mut fb);
        fb.reverse();

        let mut bf = ext;
        bf.reverse();
        cascade_in_place(&self.sections, &mut bf);
        bf.reverse();
        cascade_in_place(&self.sections, &mut bf);

        Ok((pad..pad + n).map(|i| 0.5 * (fb[i] + bf[i])).collect())
    }
}

/// Which weighting a signal axis receives before dose integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingKind {
    /// The motion-sickness band-pass weighting.
    MotionSickness,
    /// No weighting (pass-through).
    Unity,
}

/// Weighting and scale factor for one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisWeighting {
    /// Filter applied before squaring.
    pub kind: WeightingKind,
    /// Multiplying factor `k` used when axes are combined.
    pub k: f64,
}

/// Per-axis weighting assignment for the dose computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightingConfig {
    /// Axes to score, with their weighting and combination factor.
    pub axes: BTreeMap<Channel, AxisWeighting>,
}

impl Default for WeightingConfig {
    /// All six scored axes get the motion-sickness weighting with `k = 1`,
    /// which reproduces the published totals from per-axis components.
    fn default() -> Self {
        let standard = AxisWeighting {
            kind: WeightingKind::MotionSickness,
            k: 1.0,
        };
        let axes = [
            Channel::AccelX,
            Channel::AccelY,
            Channel::AccelZ,
            Channel::YawRate,
            Channel::RollAccel,
            Channel::PitchAccel,
        ]
        .into_iter()
        .map(|c| (c, standard))
        .collect();
        Self { axes }
    }
}

impl WeightingConfig {
    /// All factors must be finite and non-negative.
    pub fn validate(&self) -> Result<()> {
        for (channel, w) in &self.axes {
            if !(w.k.is_finite() && w.k >= 0.0) {
                return Err(Error::Argument(format!(
                    "axis {} factor k must be non-negative, got {}",
                    channel.csv_name(),
                    w.k
                )));
            }
        }
        Ok(())
    }
}

/// The motion-sickness weighting as a discrete section cascade at sample
/// rate `fs`: band-limiting high-pass (0.08 Hz) and low-pass (0.63 Hz), a
/// resonant low-pass at 0.25 Hz (Q = 0.86), and a pole–zero step between
/// 0.0625 Hz and 0.1 Hz (Q = 0.80) that lifts the upper side of the band.
/// The cascade peaks at gain ≈ 1.01 near 0.17 Hz.
pub fn motion_sickness_sections(fs: f64) -> Vec<Biquad> {
    let sqrt2_inv = std::f64::consts::FRAC_1_SQRT_2;
    vec![
        Biquad::highpass(0.08, sqrt2_inv, fs),
        Biquad::lowpass(0.63, sqrt2_inv, fs),
        Biquad::lowpass(0.25, 0.86, fs),
        Biquad::pole_zero_ratio(0.0625, 0.80, 0.10, 0.80, fs),
    ]
}

/// Magnitude of the discrete motion-sickness weighting at `f` Hz.
pub fn weighting_magnitude(fs: f64, f: f64) -> f64 {
    cascade_magnitude(&motion_sickness_sections(fs), f, fs)
}

/// Applies the configured weighting for `axis` to a signal sampled at `fs`.
pub fn ms_weighting(
    signal: &[f64],
    fs: f64,
    axis: Channel,
    config: &WeightingConfig,
) -> Result<Vec<f64>> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::Argument(format!(
            "sample rate must be positive, got {fs}"
        )));
    }
    config.validate()?;
    let weighting = config.axes.get(&axis).ok_or_else(|| {
        Error::Argument(format!(
            "axis {} has no weighting configured",
            axis.csv_name()
        ))
    })?;
    let mut out = signal.to_vec();
    match weighting.kind {
        WeightingKind::Unity => {}
        WeightingKind::MotionSickness => {
            cascade_in_place(&motion_sickness_sections(fs), &mut out);
        }
    }
    Ok(out)
}

/// Cumulative motion-sickness dose `MSDV(t) = sqrt(Σ a_w²·dt)` of a
/// weighted signal (rectangle rule).
pub fn msdv_component(weighted: &[f64], dt: f64) -> Result<Vec<f64>> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Argument(format!(
            "sample interval must be positive, got {dt}"
        )));
    }
    let mut sum = 0.0;
    Ok(weighted
        .iter()
        .map(|a| {
            sum += a * a * dt;
            sum.sqrt()
        })
        .collect())
}

/// Root-sum-of-squares combination of per-axis dose values with their
/// multiplying factors.
pub fn msdv_total(components: &[f64], k: &[f64]) -> Result<f64> {
    if components.len() != k.len() {
        return Err(Error::Argument(format!(
            "{} components but {} factors",
            components.len(),
            k.len()
        )));
    }
    let mut sum = 0.0;
    for (c, ki) in components.iter().zip(k) {
        if *c < 0.0 {
            return Err(Error::Argument(format!(
                "dose components must be non-negative, got {c}"
            )));
        }
        sum += ki * ki * c * c;
    }
    Ok(sum.sqrt())
}

/// Least-squares linear-fit value at a signal's edge sample, fitted over
/// the `window` samples adjacent to that edge (`reversed` picks the tail
/// end). Mirrored edges produce bit-identical levels.
fn edge_level(signal: &[f64], window: usize, reversed: bool) -> f64 {
    let n = signal.len();
    let w = window.min(n);
    let at = |j: usize| {
        if reversed {
            signal[n - 1 - j]
        } else {
            signal[j]
        }
    };
    if w < 2 {
        return at(0);
    }
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for j in 0..w {
        let (x, y) = (j as f64, at(j));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let denom = w as f64 * sxx - sx * sx;
    let slope = (w as f64 * sxy - sx * sy) / denom;
    (sy - slope * sx) / w as f64
}

/// Central-difference derivative, one-sided at the ends.
pub(crate) fn differentiate(signal: &[f64], dt: f64) -> Vec<f64> {
    let n = signal.len();
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n)
            .map(|i| {
                if i == 0 {
                    (signal[1] - signal[0]) / dt
                } else if i == n - 1 {
                    (signal[n - 1] - signal[n - 2]) / dt
                } else {
                    (signal[i + 1] - signal[i - 1]) / (2.0 * dt)
                }
            })
            .collect(),
    }
}

/// Per-axis and combined dose values for one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SicknessReport {
    /// Sample interval of the series, s.
    pub dt: f64,
    /// Scored axes, in canonical channel order.
    pub axes: Vec<Channel>,
    /// Factors used per axis.
    pub k: Vec<f64>,
    /// Cumulative dose series per axis.
    pub series: Vec<Vec<f64>>,
    /// Final dose per axis.
    pub finals: Vec<f64>,
    /// Combined dose across axes.
    pub total: f64,
}

impl SicknessReport {
    /// Writes the cumulative series as CSV: time plus one `msdv_<axis>`
    /// column per scored axis.
    pub fn save_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend(self.axes.iter().map(|a| format!("msdv_{}", a.csv_name())));
        w.write_record(&header)?;
        let n = self.series.first().map_or(0, Vec::len);
        for i in 0..n {
            let mut record = vec![format!("{:.9}", i as f64 * self.dt)];
            record.extend(self.series.iter().map(|s| format!("{:.9}", s[i])));
            w.write_record(&record)?;
        }
        w.flush().map_err(Error::from)?;
        Ok(())
    }
}

/// Scores every configured axis present in `trace`: weight, integrate, and
/// combine. The yaw-rate channel is differentiated to a rotational
/// acceleration first; all other channels are treated as accelerations.
pub fn assess_trace(trace: &Trace, config: &WeightingConfig) -> Result<SicknessReport> {
    config.validate()?;
    let fs = 1.0 / trace.dt();
    let mut axes = Vec::new();
    let mut k = Vec::new();
    let mut series = Vec::new();
    let mut finals = Vec::new();
    for channel in Channel::ALL {
        let Some(weighting) = config.axes.get(&channel) else {
            continue;
        };
        let Some(signal) = trace.channel(channel) else {
            continue;
        };
        let accel = if channel == Channel::YawRate {
            differentiate(signal, trace.dt())
        } else {
            signal.to_vec()
        };
        let weighted = ms_weighting(&accel, fs, channel, config)?;
        let msdv = msdv_component(&weighted, trace.dt())?;
        axes.push(channel);
        k.push(weighting.k);
        finals.push(msdv.last().copied().unwrap_or(0.0));
        series.push(msdv);
    }
    let total = msdv_total(&finals, &k)?;
    Ok(SicknessReport {
        dt: trace.dt(),
        axes,
        k,
        series,
        finals,
        total,
    })
}
