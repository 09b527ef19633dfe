//! Property-based invariants on the signal-level building blocks.

use proptest::prelude::*;

use refinevoc::augment::pitch_shift;
use refinevoc::losses::envelope_loss;
use refinevoc::pitch::PitchCurve;
use refinevoc::signal::{FrameCurve, Waveform};
use refinevoc::template::{build_template, TemplateConfig};

fn wave_strategy(n: usize) -> impl Strategy<Value = Waveform> {
    proptest::collection::vec(-1.0f64..1.0, n)
        .prop_map(|s| Waveform::new(s, 8000).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// The envelope distance is a symmetric premetric: non-negative,
    /// zero on identical inputs, and independent of argument order.
    #[test]
    fn envelope_loss_is_symmetric_and_nonnegative(
        a in wave_strategy(700),
        b in wave_strategy(700),
        win in 8usize..128,
        hop in 4usize..64,
    ) {
        let ab = envelope_loss(&a, &b, win, hop).unwrap();
        let ba = envelope_loss(&b, &a, win, hop).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(envelope_loss(&a, &a, win, hop).unwrap(), 0.0);
    }

    /// Shifting by z semitones rescales the length by 2^(-z/12) to
    /// within one sample, and never changes the nominal sample rate.
    #[test]
    fn pitch_shift_length_follows_the_semitone_ratio(
        n in 2000usize..6000,
        zeta in -12i32..=12,
    ) {
        let wave = Waveform::new(
            (0..n).map(|i| (i as f64 * 0.11).sin()).collect(),
            44100,
        ).unwrap();
        let shifted = pitch_shift(&wave, zeta).unwrap();
        let expect = (n as f64 * 2f64.powf(-zeta as f64 / 12.0)).round() as i64;
        prop_assert!((shifted.len() as i64 - expect).abs() <= 1);
        prop_assert_eq!(shifted.sample_rate, 44100);
    }

    /// Template pulses land only in voiced frames, carry the frame
    /// intensity, and never exceed one per pitch period.
    #[test]
    fn template_pulses_respect_voicing_and_intensity(
        f0 in 60.0f64..800.0,
        voiced_prefix in 2usize..8,
        intensity in 0.05f64..1.0,
    ) {
        let sr = 8000u32;
        let hop = 64usize;
        let n_frames = 10usize;
        let n = (n_frames - 1) * hop;
        // voiced for the first `voiced_prefix` frames, silent after
        let f0s: Vec<f64> = (0..n_frames)
            .map(|t| if t < voiced_prefix { f0 } else { 0.0 })
            .collect();
        let pitch = PitchCurve { f0: f0s, hop_size: hop, sample_rate: sr };
        let curve = FrameCurve {
            values: vec![intensity; n_frames],
            hop_size: hop,
            win_size: 256,
        };
        let mut cfg = TemplateConfig::default();
        cfg.noise_amp = 0.01;
        let out = build_template(&pitch, &curve, n, sr, &cfg).unwrap();
        prop_assert_eq!(out.samples.len(), n);
        let voiced_end = voiced_prefix * hop;
        for &p in &out.pulse_positions {
            prop_assert!(p < voiced_end, "pulse at {} in unvoiced region", p);
            prop_assert_eq!(out.samples[p], intensity);
        }
        let period = sr as f64 / f0;
        for w in out.pulse_positions.windows(2) {
            prop_assert!((w[1] - w[0]) as f64 >= period.floor());
        }
    }
}
