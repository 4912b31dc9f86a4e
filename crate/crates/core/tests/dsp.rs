use std::f64::consts::PI;

use chewing_ssl::signal::{
    decimate, design_highpass_butterworth, extract_windows, filter_forward, TimeSeries, HIGHPASS_CUTOFF_HZ,
    HIGHPASS_ORDER, PIPELINE_RATE_HZ,
};
use proptest::prelude::*;

fn sine(freq: f64, rate: f64, n: usize) -> TimeSeries {
    TimeSeries::new((0..n).map(|i| (2.0 * PI * freq * i as f64 / rate).sin()).collect(), rate).unwrap()
}

#[test]
fn highpass_response_points() {
    let hp = design_highpass_butterworth(HIGHPASS_CUTOFF_HZ, PIPELINE_RATE_HZ, HIGHPASS_ORDER).unwrap();
    assert!((hp.magnitude_db(20.0) + 3.01).abs() < 0.1, "{}", hp.magnitude_db(20.0));
    assert!(hp.magnitude_db(2.0) <= -40.0);
    assert_eq!(hp.magnitude(0.0), 0.0);
    assert!(hp.is_stable());
    assert!((hp.magnitude(500.0) - 1.0).abs() < 1e-3);
}

#[test]
fn highpass_removes_offset_in_time_domain() {
    let hp = design_highpass_butterworth(20.0, 2000.0, 4).unwrap();
    let x = TimeSeries::new(vec![0.7; 8000], 2000.0).unwrap();
    let y = filter_forward(&hp, &x).unwrap();
    assert!(y.samples()[6000..].iter().all(|v| v.abs() < 1e-6));
}

#[test]
fn highpass_passband_sine_keeps_amplitude() {
    let hp = design_highpass_butterworth(20.0, 2000.0, 4).unwrap();
    let y = filter_forward(&hp, &sine(200.0, 2000.0, 8000)).unwrap();
    let peak = y.samples()[4000..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!((peak - 1.0).abs() < 0.01, "{peak}");
}

#[test]
fn decimating_by_24_keeps_a_100_hz_sine() {
    let rate = 48_000.0;
    let x = sine(100.0, rate, 48_000);
    let y = decimate(&x, 24).unwrap();
    assert_eq!(y.sample_rate_hz(), 2000.0);
    assert_eq!(y.len(), 2000);
    let interior = &y.samples()[100..1900];
    for (m, v) in interior.iter().enumerate() {
        let t = (m + 100) as f64 / 2000.0;
        assert!((v - (2.0 * PI * 100.0 * t).sin()).abs() < 0.01);
    }
    let peak = interior.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!((peak - 1.0).abs() < 0.01);
}

#[test]
fn decimation_suppresses_aliases() {
    let rate = 48_000.0;
    let y = decimate(&sine(1900.0, rate, 48_000), 24).unwrap();
    let peak = y.samples()[100..1900].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(peak < 0.05, "{peak}");
}

proptest! {
    #[test]
    fn window_count_and_placement(n in 0usize..400, len in 1usize..50, stride in 1usize..30) {
        let x = TimeSeries::new((0..n).map(|i| i as f64).collect(), 10.0).unwrap();
        let m = extract_windows(&x, len, stride).unwrap();
        let expected = if len > n { 0 } else { (n - len) / stride + 1 };
        prop_assert_eq!(m.len(), expected);
        for (k, w) in m.windows.iter().enumerate() {
            prop_assert_eq!(w.len(), len);
            prop_assert_eq!(w[0] as usize, k * stride);
            prop_assert!((m.origin_times_s[k] - (k * stride) as f64 / 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn highpass_is_linear(a in -3.0f64..3.0, seed in 0u64..1000) {
        let hp = design_highpass_butterworth(20.0, 2000.0, 4).unwrap();
        let x: Vec<f64> = (0..256).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0).collect();
        let u = TimeSeries::new(x.clone(), 2000.0).unwrap();
        let scaled = TimeSeries::new(x.iter().map(|v| a * v).collect(), 2000.0).unwrap();
        let (yu, ys) = (filter_forward(&hp, &u).unwrap(), filter_forward(&hp, &scaled).unwrap());
        for (p, q) in yu.samples().iter().zip(ys.samples()) {
            prop_assert!((a * p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn decimate_output_length(n in 1usize..2000, factor in 1usize..30) {
        let x = TimeSeries::new(vec![0.5; n], 1000.0).unwrap();
        let y = decimate(&x, factor).unwrap();
        prop_assert_eq!(y.len(), n / factor);
        prop_assert!((y.sample_rate_hz() - 1000.0 / factor as f64).abs() < 1e-12);
    }
}
