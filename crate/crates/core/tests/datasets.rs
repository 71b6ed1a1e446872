use ddcnn_core::datasets::{synth_clip, synth_dataset, SceneClass};
use ddcnn_core::features::{mel_power, AudioClip, LogMelConfig, MelFilterbank};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Fraction of whole-clip DFT energy strictly below `hz`.
fn energy_below(clip: &AudioClip, hz: f64) -> f64 {
    let n = clip.samples.len();
    let mut buf: Vec<Complex<f64>> = clip.samples.iter().map(|&s| Complex::new(s as f64, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (mut below, mut total) = (0.0, 0.0);
    for (k, c) in buf[..=n / 2].iter().enumerate() {
        let e = c.norm_sqr();
        total += e;
        if (k as f64) * clip.sample_rate as f64 / (n as f64) < hz {
            below += e;
        }
    }
    below / total
}

/// Rule-based oracle: sum mel power over time inside each class band, take the argmax.
/// Bands follow the generator's class boundaries, 0..300 Hz, 300..3000 Hz, 3000 Hz and up.
fn band_energy_classify(clip: &AudioClip, bank: &MelFilterbank, cfg: &LogMelConfig) -> SceneClass {
    let (frames, p) = mel_power(&clip.samples, cfg).unwrap();
    let mut bands = [0.0f64; 3];
    for t in 0..frames {
        for m in 0..cfg.mel_bins {
            let c = bank.centers[m];
            let band = if c < 300.0 { 0 } else if c < 3000.0 { 1 } else { 2 };
            bands[band] += p[t * cfg.mel_bins + m];
        }
    }
    let best = (0..3).max_by(|&a, &b| bands[a].total_cmp(&bands[b])).unwrap();
    SceneClass::from_index(best).unwrap()
}

#[test]
fn low_band_class_is_mostly_below_300_hz() {
    for i in 0..3 {
        let clip = synth_clip(SceneClass::Indoor, i, 42);
        let r = energy_below(&clip, 300.0);
        assert!(r > 0.8, "clip {i}: {r}");
    }
    let outdoor = synth_clip(SceneClass::Outdoor, 0, 42);
    assert!(energy_below(&outdoor, 300.0) < 0.05);
    let transport = synth_clip(SceneClass::Transportation, 0, 42);
    assert!(energy_below(&transport, 3000.0) < 0.05);
}

#[test]
fn band_energy_oracle_separates_every_seed() {
    let cfg = LogMelConfig::default();
    let bank = cfg.filterbank().unwrap();
    for seed in [42, 7] {
        let clips = synth_dataset(10, seed).unwrap();
        assert_eq!(clips.len(), 30);
        for clip in &clips {
            assert_eq!(Some(band_energy_classify(clip, &bank, &cfg)), clip.label, "{}", clip.source_path);
        }
    }
}

#[test]
fn same_seed_same_corpus() {
    let a = synth_dataset(2, 5).unwrap();
    let b = synth_dataset(2, 5).unwrap();
    assert_eq!(a, b);
    let labels: Vec<_> = a.iter().map(|c| c.label.unwrap()).collect();
    assert_eq!(
        labels,
        [
            SceneClass::Indoor,
            SceneClass::Indoor,
            SceneClass::Outdoor,
            SceneClass::Outdoor,
            SceneClass::Transportation,
            SceneClass::Transportation
        ]
    );
}
