//! Black-box tests of the command-line interface.

use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use refinevoc::config::RunConfig;
use refinevoc::pitch::pitch_from_text;
use refinevoc::signal::{mel_spectrogram, MelParamSet, Waveform};
use refinevoc::wav::{read_wav, write_wav, SampleFormat};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_refinevoc"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn voiced_clip(n: usize, sr: u32, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new(
        (0..n)
            .map(|i| {
                0.5 * (2.0 * std::f64::consts::PI * 220.0 * i as f64 / sr as f64).sin()
                    + rng.gen_range(-0.01..0.01)
            })
            .collect(),
        sr,
    )
    .unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::toy();
        std::fs::write(dir.path().join("toy.toml"), cfg.to_toml_string()).unwrap();
        let clip = voiced_clip(4064, cfg.sample_rate, 4);
        write_wav(&dir.path().join("clip.wav"), &clip, SampleFormat::Float32).unwrap();
        Fixture { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn run(&self, args: &[&str]) -> Output {
        run_in(self.path(), args)
    }
}

#[test]
fn scan_skips_corrupt_wav_with_warning_and_succeeds() {
    let f = Fixture::new();
    std::fs::write(f.path().join("broken.wav"), b"RIFFnot really a wav").unwrap();
    let out = f.run(&["scan", ".", "-o", "manifest.json"]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let err = stderr_of(&out);
    assert!(err.contains("broken.wav"), "no warning about the corrupt file: {err}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.path().join("manifest.json")).unwrap())
            .unwrap();
    let entries = manifest.as_array().unwrap();
    assert_eq!(entries.len(), 1);
    assert!(entries[0]["path"].as_str().unwrap().contains("clip.wav"));
    assert_eq!(entries[0]["n_samples"], 4064);
}

#[test]
fn pitch_output_parses_and_tracks_the_fixture_tone() {
    let f = Fixture::new();
    let out = f.run(&["--config", "toy.toml", "pitch", "clip.wav", "f0.txt"]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let curve =
        pitch_from_text(&std::fs::read_to_string(f.path().join("f0.txt")).unwrap()).unwrap();
    let voiced: Vec<f64> = curve.f0.iter().copied().filter(|&v| v > 0.0).collect();
    assert!(voiced.len() * 2 > curve.f0.len(), "mostly unvoiced");
    for v in voiced {
        assert!((v - 220.0).abs() < 5.0, "pitch {v} far from 220 Hz");
    }
}

#[test]
fn template_writes_a_wav_of_matching_length() {
    let f = Fixture::new();
    let out = f.run(&["--config", "toy.toml", "--seed", "9", "template", "clip.wav", "tmpl.wav"]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let tmpl = read_wav(&f.path().join("tmpl.wav")).unwrap();
    assert_eq!(tmpl.wave.len(), 4064);
    assert_eq!(tmpl.wave.sample_rate, 8000);
}

#[test]
fn eval_losses_reports_the_envelope_offset() {
    let f = Fixture::new();
    let clip = read_wav(&f.path().join("clip.wav")).unwrap().wave;
    let offset =
        Waveform::new(clip.samples.iter().map(|s| s + 0.1).collect(), clip.sample_rate).unwrap();
    write_wav(&f.path().join("offset.wav"), &offset, SampleFormat::Float32).unwrap();
    let out = f.run(&["--config", "toy.toml", "eval-losses", "clip.wav", "offset.wav"]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let env = v["envelope"].as_f64().unwrap();
    assert!((env - 0.2).abs() <= 1e-4, "envelope {env}");
    assert!(v["mel"].as_f64().unwrap() > 0.0);
}

#[test]
fn dump_spec_matches_the_library_mel_analysis() {
    let f = Fixture::new();
    let out = f.run(&[
        "--config", "toy.toml", "dump-spec", "clip.wav", "spec.csv", "--fft", "64", "--hop",
        "4", "--win", "16", "--mels", "8",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let params = MelParamSet {
        fft_size: 64,
        win_size: 16,
        hop_size: 4,
        n_mels: 8,
        f_min: 40.0,
        f_max: 4000.0,
    };
    let clip = read_wav(&f.path().join("clip.wav")).unwrap().wave;
    let mel = mel_spectrogram(&clip, &params).unwrap();
    let csv = std::fs::read_to_string(f.path().join("spec.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 9);
    assert_eq!(header[1], "mel_0");
    let mut n_rows = 0;
    for (t, line) in lines.enumerate() {
        let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells[0] as usize, t);
        for m in 0..8 {
            let want = mel.at(m, t);
            assert!(
                (cells[m + 1] - want).abs() <= 1e-6,
                "frame {t} mel {m}: {} vs {want}",
                cells[m + 1]
            );
        }
        n_rows += 1;
    }
    assert_eq!(n_rows, mel.n_frames);
}

#[test]
fn augment_without_seed_prints_the_chosen_seed() {
    let f = Fixture::new();
    let out = f.run(&["--config", "toy.toml", "augment", "clip.wav", "aug.wav", "--zeta", "0"]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("seed:"), "seed not announced: {}", stderr_of(&out));
}

#[test]
fn train_toy_resume_reproduces_the_metrics_tail() {
    let f = Fixture::new();
    let manifest = serde_json::json!([{
        "path": "clip.wav",
        "sample_rate": 8000,
        "n_samples": 4064,
    }]);
    std::fs::write(f.path().join("manifest.json"), manifest.to_string()).unwrap();
    let full = f.run(&[
        "--config", "toy.toml", "--seed", "5", "train-toy", "manifest.json", "-o", "full",
        "--steps", "6", "--checkpoint-every", "3",
    ]);
    assert!(full.status.success(), "{}", stderr_of(&full));
    let resumed = f.run(&[
        "--config", "toy.toml", "--seed", "5", "train-toy", "manifest.json", "-o", "resumed",
        "--steps", "6", "--checkpoint-every", "3", "--resume", "full/step_000003.ckpt",
    ]);
    assert!(resumed.status.success(), "{}", stderr_of(&resumed));

    let read_lines = |p: &str| -> Vec<String> {
        std::fs::read_to_string(f.path().join(p))
            .unwrap()
            .lines()
            .map(str::to_owned)
            .collect()
    };
    let full_lines = read_lines("full/metrics.jsonl");
    let resumed_lines = read_lines("resumed/metrics.jsonl");
    assert_eq!(full_lines.len(), 6);
    assert_eq!(resumed_lines.len(), 3);
    assert_eq!(&full_lines[3..], &resumed_lines[..], "resumed metrics diverged");

    // copy synthesis from the final checkpoint preserves the clip length
    let cs = f.run(&[
        "--config", "toy.toml", "copy-synth", "clip.wav", "full/final.ckpt", "copy.wav",
    ]);
    assert!(cs.status.success(), "{}", stderr_of(&cs));
    let copy = read_wav(&f.path().join("copy.wav")).unwrap();
    assert_eq!(copy.wave.len(), 4064);
}
