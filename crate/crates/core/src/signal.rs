//! DSP preprocessing for in-ear audio.
//!
//! Recordings are brought to a common 2 kHz rate with an integer decimator
//! (windowed-sinc anti-alias FIR, Hamming window, `8 * factor + 1` taps,
//! cutoff at 0.9 of the output Nyquist frequency), high-passed with a
//! Butterworth cascade of second-order sections to remove DC drift, and cut
//! into fixed-length windows.
//!
//! The high-pass filter runs causally with zero initial state, so it adds
//! the usual minimum-phase group delay (a few milliseconds around 100 Hz for
//! the default 20 Hz, order-4 design). The decimator is linear phase and is
//! applied centred, so it adds no delay; its first and last `4 * factor`
//! input samples see zero padding.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Target sample rate of the whole pipeline.
pub const PIPELINE_RATE_HZ: f64 = 2000.0;
/// Default high-pass cutoff.
pub const HIGHPASS_CUTOFF_HZ: f64 = 20.0;
/// Default Butterworth order.
pub const HIGHPASS_ORDER: usize = 4;

/// A sampled mono signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    samples: Vec<f64>,
    sample_rate_hz: f64,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        ensure!(
            sample_rate_hz > 0.0 && sample_rate_hz.is_finite(),
            InvalidArgument,
            "sample rate must be positive, got {sample_rate_hz}"
        );
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

/// One second-order section, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Magnitudes of the two poles (roots of `z^2 + a1 z + a2`).
    pub fn pole_magnitudes(&self) -> [f64; 2] {
        let disc = self.a1 * self.a1 - 4.0 * self.a2;
        if disc < 0.0 {
            // complex pair: |p|^2 = a2
            let m = self.a2.sqrt();
            [m, m]
        } else {
            let r = disc.sqrt();
            [((-self.a1 + r) / 2.0).abs(), ((-self.a1 - r) / 2.0).abs()]
        }
    }

    fn response(&self, w: f64) -> (f64, f64) {
        // H(e^{jw}) = (b0 + b1 e^{-jw} + b2 e^{-2jw}) / (1 + a1 e^{-jw} + a2 e^{-2jw})
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let nr = self.b0 + self.b1 * c1 + self.b2 * c2;
        let ni = self.b1 * s1 + self.b2 * s2;
        let dr = 1.0 + self.a1 * c1 + self.a2 * c2;
        let di = self.a1 * s1 + self.a2 * s2;
        let den = dr * dr + di * di;
        ((nr * dr + ni * di) / den, (ni * dr - nr * di) / den)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FilterKind {
    HighpassButterworth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterDesign {
    pub kind: FilterKind,
    pub cutoff_hz: f64,
    pub order: usize,
    pub sample_rate_hz: f64,
}

/// A cascade of second-order sections together with the design that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IirFilterSpec {
    pub sections: Vec<Biquad>,
    pub design: FilterDesign,
}

impl IirFilterSpec {
    /// Complex frequency response of the whole cascade at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> (f64, f64) {
        let w = 2.0 * PI * freq_hz / self.design.sample_rate_hz;
        self.sections.iter().fold((1.0, 0.0), |(ar, ai), s| {
            let (br, bi) = s.response(w);
            (ar * br - ai * bi, ar * bi + ai * br)
        })
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let (re, im) = self.response(freq_hz);
        re.hypot(im)
    }

    pub fn magnitude_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.magnitude(freq_hz).log10()
    }

    pub fn is_stable(&self) -> bool {
        self.sections
            .iter()
            .all(|s| s.pole_magnitudes().iter().all(|&m| m < 1.0))
    }
}

/// Designs a high-pass Butterworth filter as a cascade of `order / 2` biquads.
///
/// Each conjugate pole pair of the analog prototype becomes one section via
/// the bilinear transform with the cutoff prewarped, so `|H(cutoff)|` is
/// exactly `1/sqrt(2)` and every section has a double zero at `z = 1`.
pub fn design_highpass_butterworth(
    cutoff_hz: f64,
    sample_rate_hz: f64,
    order: usize,
) -> Result<IirFilterSpec> {
    ensure!(
        sample_rate_hz > 0.0 && sample_rate_hz.is_finite(),
        InvalidArgument,
        "sample rate must be positive, got {sample_rate_hz}"
    );
    ensure!(
        cutoff_hz > 0.0 && cutoff_hz < sample_rate_hz / 2.0,
        InvalidArgument,
        "cutoff {cutoff_hz} Hz must lie strictly between 0 and Nyquist ({} Hz)",
        sample_rate_hz / 2.0
    );
    ensure!(
        order >= 2 && order % 2 == 0,
        InvalidArgument,
        "order must be a positive even number (biquad cascade), got {order}"
    );

    let k = (PI * cutoff_hz / sample_rate_hz).tan();
    let k2 = k * k;
    let sections = (0..order / 2)
        .map(|i| {
            let q = 1.0 / (2.0 * ((2 * i + 1) as f64 * PI / (2 * order) as f64).sin());
            let norm = 1.0 / (1.0 + k / q + k2);
            Biquad {
                b0: norm,
                b1: -2.0 * norm,
                b2: norm,
                a1: 2.0 * (k2 - 1.0) * norm,
                a2: (1.0 - k / q + k2) * norm,
            }
        })
        .collect();

    Ok(IirFilterSpec {
        sections,
        design: FilterDesign {
            kind: FilterKind::HighpassButterworth,
            cutoff_hz,
            order,
            sample_rate_hz,
        },
    })
}

/// Causal cascade filtering from zero state (transposed direct form II).
pub fn filter_forward(filter: &IirFilterSpec, x: &TimeSeries) -> Result<TimeSeries> {
    ensure!(
        filter.design.sample_rate_hz == x.sample_rate_hz,
        InvalidArgument,
        "filter designed for {} Hz but signal is sampled at {} Hz",
        filter.design.sample_rate_hz,
        x.sample_rate_hz
    );
    let mut y = x.samples.clone();
    for s in &filter.sections {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in y.iter_mut() {
            let input = *v;
            let out = s.b0 * input + z1;
            z1 = s.b1 * input - s.a1 * out + z2;
            z2 = s.b2 * input - s.a2 * out;
            *v = out;
        }
    }
    TimeSeries::new(y, x.sample_rate_hz)
}

/// Hamming-windowed sinc low-pass taps, normalized to unit DC gain.
///
/// `cutoff` is in cycles per sample (0 < cutoff < 0.5).
pub fn windowed_sinc_lowpass(cutoff: f64, taps: usize) -> Result<Vec<f64>> {
    ensure!(
        cutoff > 0.0 && cutoff < 0.5,
        InvalidArgument,
        "normalized cutoff must be in (0, 0.5), got {cutoff}"
    );
    ensure!(taps % 2 == 1, InvalidArgument, "tap count must be odd, got {taps}");
    let m = (taps - 1) as f64;
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let t = (n as f64 - m / 2.0).abs();
            let sinc = if t == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * t).sin() / (PI * t)
            };
            let window = if taps == 1 {
                1.0
            } else {
                0.54 + 0.46 * (2.0 * PI * t / m).cos()
            };
            sinc * window
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    Ok(h)
}

/// Taps of the anti-alias filter used by [`decimate`].
pub fn decimation_taps(factor: usize) -> Result<Vec<f64>> {
    ensure!(factor >= 2, InvalidArgument, "decimation filter needs factor >= 2");
    windowed_sinc_lowpass(0.9 * 0.5 / factor as f64, 8 * factor + 1)
}

/// Integer-factor decimation with a centred linear-phase anti-alias FIR.
///
/// Only the kept output samples are computed. Output sample `m` is the
/// filtered input at index `m * factor`.
pub fn decimate(x: &TimeSeries, factor: usize) -> Result<TimeSeries> {
    ensure!(factor >= 1, InvalidArgument, "decimation factor must be >= 1");
    if factor == 1 {
        return Ok(x.clone());
    }
    let taps = decimation_taps(factor)?;
    let half = (taps.len() / 2) as isize;
    let input = &x.samples;
    let n_in = input.len() as isize;
    let out: Vec<f64> = (0..input.len() / factor)
        .map(|m| {
            let centre = (m * factor) as isize;
            let lo = (centre - half).max(0);
            let hi = (centre + half).min(n_in - 1);
            (lo..=hi)
                .map(|i| taps[(i - centre + half) as usize] * input[i as usize])
                .sum()
        })
        .collect();
    TimeSeries::new(out, x.sample_rate_hz / factor as f64)
}

/// Decimates to [`PIPELINE_RATE_HZ`] and applies the default high-pass filter.
///
/// The input rate must be an integer multiple of the pipeline rate.
pub fn preprocess(x: &TimeSeries) -> Result<TimeSeries> {
    let ratio = x.sample_rate_hz / PIPELINE_RATE_HZ;
    let factor = ratio.round();
    ensure!(
        factor >= 1.0 && (ratio - factor).abs() < 1e-9,
        InvalidArgument,
        "sample rate {} Hz is not an integer multiple of {} Hz",
        x.sample_rate_hz,
        PIPELINE_RATE_HZ
    );
    let decimated = decimate(x, factor as usize)?;
    let hp = design_highpass_butterworth(HIGHPASS_CUTOFF_HZ, PIPELINE_RATE_HZ, HIGHPASS_ORDER)?;
    filter_forward(&hp, &decimated)
}

/// Fixed-length windows cut from a signal.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMatrix {
    pub windows: Vec<Vec<f32>>,
    pub window_len: usize,
    pub stride: usize,
    pub origin_times_s: Vec<f64>,
}

impl WindowMatrix {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Consecutive slices `x[k*stride .. k*stride + window_len]` that fit entirely in `x`.
pub fn extract_windows(x: &TimeSeries, window_len: usize, stride: usize) -> Result<WindowMatrix> {
    ensure!(stride > 0, InvalidArgument, "stride must be positive");
    ensure!(window_len > 0, InvalidArgument, "window length must be positive");
    let count = if window_len > x.len() {
        0
    } else {
        (x.len() - window_len) / stride + 1
    };
    let windows = (0..count)
        .map(|k| {
            x.samples[k * stride..k * stride + window_len]
                .iter()
                .map(|&v| v as f32)
                .collect()
        })
        .collect();
    let origin_times_s = (0..count)
        .map(|k| (k * stride) as f64 / x.sample_rate_hz)
        .collect();
    Ok(WindowMatrix { windows, window_len, stride, origin_times_s })
}
