mod common;

use common::extraction_mae;
use hrcal::signal::{
    align_to_grid, bandpass_ecg, detect_r_peaks, ecg_to_smoothed_hr, ExtractionConfig, HeartRateSeries, Provenance,
};
use hrcal::synth::{generate_cohort, synth_ecg, CohortConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn constant_hr(bpm: f64, secs: f64) -> HeartRateSeries {
    HeartRateSeries::new(vec![0.0, secs], vec![bpm, bpm], Provenance::EcgTruth)
}

fn peaks_for(bpm: f64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (ecg, beats) = synth_ecg(&constant_hr(bpm, 60.0), 250.0, 60.0, 0.02, &mut rng);
    let f = bandpass_ecg(&ecg, 250.0, &ExtractionConfig::default().bandpass).unwrap();
    (detect_r_peaks(&f), beats)
}

fn check_constant_rate(bpm: f64) {
    let (p, beats) = peaks_for(bpm);
    assert!((p.len() as i64 - beats.len() as i64).abs() <= 1, "{} vs {}", p.len(), beats.len());
    // every detection away from the record edges sits on a true beat, with
    // one ringing lobe (~29 ms) of slack
    for &t in p.iter().filter(|&&t| t > 0.2 && t < 59.8) {
        let nearest = beats.iter().map(|b| (b - t).abs()).fold(f64::INFINITY, f64::min);
        assert!(nearest < 0.035, "peak at {t} is {nearest} s from any beat");
    }
    let mean_rr = (p[p.len() - 1] - p[0]) / (p.len() - 1) as f64;
    assert!((mean_rr - 60.0 / bpm).abs() < 0.002, "{mean_rr}");
}

#[test]
fn constant_60_bpm_gives_one_peak_per_second() {
    let (p, _) = peaks_for(60.0);
    assert!((p.len() as i64 - 60).abs() <= 1, "{}", p.len());
    check_constant_rate(60.0);
}

#[test]
fn constant_180_bpm_keeps_every_beat() {
    check_constant_rate(180.0);
}

#[test]
fn refractory_spacing_holds() {
    for bpm in [40.0, 100.0, 190.0] {
        check_constant_rate(bpm);
        let (p, _) = peaks_for(bpm);
        assert!(p.windows(2).all(|w| w[1] - w[0] >= 0.25));
    }
}

#[test]
fn flat_ecg_has_no_peaks() {
    let s = hrcal::io::SampledSeries::new(
        (0..2500).map(|i| i as f64 / 250.0).collect(),
        vec![0.0; 2500],
        hrcal::io::Unit::MilliVolt,
        hrcal::io::Source::Ecg,
    )
    .unwrap();
    assert!(detect_r_peaks(&s).is_empty());
}

#[test]
fn peaks_are_shift_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (ecg, _) = synth_ecg(&constant_hr(75.0, 30.0), 250.0, 30.0, 0.02, &mut rng);
    let f = bandpass_ecg(&ecg, 250.0, &ExtractionConfig::default().bandpass).unwrap();
    let base = detect_r_peaks(&f);
    let mut shifted = f.clone();
    for t in &mut shifted.t {
        *t += 12.5;
    }
    let moved = detect_r_peaks(&shifted);
    assert_eq!(base.len(), moved.len());
    for (a, b) in base.iter().zip(&moved) {
        assert_eq!(a + 12.5, *b);
    }
}

#[test]
fn piecewise_constant_truth_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let levels = [40.0, 70.0, 120.0, 180.0, 90.0];
    let mut t = Vec::new();
    let mut v = Vec::new();
    for (k, &b) in levels.iter().enumerate() {
        let s = k as f64 * 120.0;
        t.extend([s, s + 119.999]);
        v.extend([b, b]);
    }
    let truth = HeartRateSeries::new(t, v, Provenance::EcgTruth);
    let (ecg, _) = synth_ecg(&truth, 250.0, 600.0, 0.02, &mut rng);
    let hr = ecg_to_smoothed_hr(&ecg, 250.0, &ExtractionConfig::default()).unwrap();
    let g = align_to_grid(&hr, 15.0, 2.5);
    let mut err = Vec::new();
    for (ti, b) in g.iter() {
        let k = (ti / 120.0).floor() as usize;
        let edge = ti - k as f64 * 120.0;
        if k >= levels.len() || edge < 10.0 || edge > 110.0 || ti < 10.0 || ti > 590.0 {
            continue;
        }
        err.push((b - levels[k]).abs());
    }
    let mae = err.iter().sum::<f64>() / err.len() as f64;
    assert!(mae < 1.0, "mae {mae}");
}

#[test]
fn synthetic_session_extraction_is_accurate() {
    let cfg = CohortConfig { n_participants: 1, ..CohortConfig::default() };
    let (s, g) = &generate_cohort(&cfg).unwrap()[0];
    let mae = extraction_mae(s, g);
    assert!(mae < 1.0, "mae {mae}");
}

