//! Command-line surface: manifest building, pitch extraction, template
//! dumping, augmentation preview, loss evaluation, toy training, and
//! copy-synthesis.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 I/O error, 3 numerical
//! failure (non-finite loss).

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use refinevoc::augment::{loudness_augment, pitch_shift, ManifestEntry};
use refinevoc::config::RunConfig;
use refinevoc::losses::{envelope_loss, multi_mel_loss};
use refinevoc::pitch::{estimate_base_coarse, estimate_base_fine, fuse_pitch, pitch_to_text};
use refinevoc::signal::{kaiser_resample, mel_spectrogram, MelParamSet, Waveform};
use refinevoc::template::{build_template, frame_intensity};
use refinevoc::train::{
    init_model, load_checkpoint, prepare_item, run_training, save_checkpoint,
};
use refinevoc::wav::{read_wav, write_wav, SampleFormat};
use refinevoc::{Error, Result};

#[derive(Parser)]
#[command(name = "refinevoc", version, about = "Full-band neural vocoder toolkit")]
struct Cli {
    /// TOML run configuration; defaults are built in
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed; omitted, a fresh seed is drawn and printed
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// List the WAV files in a directory as a JSON manifest
    Scan {
        dir: PathBuf,
        /// Write the manifest here instead of stdout
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Extract the fused pitch curve to a two-column text file
    Pitch { input: PathBuf, output: PathBuf },
    /// Build the excitation template and write it as a WAV file
    Template { input: PathBuf, output: PathBuf },
    /// Pitch-shift and loudness-augment one file
    Augment {
        input: PathBuf,
        output: PathBuf,
        /// Pitch shift in semitones; must lie in the configured range
        #[arg(long, default_value_t = 0)]
        zeta: i32,
    },
    /// Print spectral and envelope distances between two files as JSON
    EvalLosses { a: PathBuf, b: PathBuf },
    /// Run the desk-scale training loop on a manifest
    TrainToy {
        manifest: PathBuf,
        /// Output directory for metrics and checkpoints
        #[arg(short, long)]
        out: PathBuf,
        /// Resume from this checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the configured step count
        #[arg(long)]
        steps: Option<u64>,
        /// Override the configured checkpoint interval
        #[arg(long)]
        checkpoint_every: Option<u64>,
    },
    /// Reconstruct a recording from its own features through a checkpoint
    CopySynth {
        input: PathBuf,
        checkpoint: PathBuf,
        output: PathBuf,
    },
    /// Dump a log-mel spectrogram as CSV for external plotting
    DumpSpec {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 2048)]
        fft: usize,
        #[arg(long, default_value_t = 256)]
        hop: usize,
        #[arg(long, default_value_t = 2048)]
        win: usize,
        #[arg(long, default_value_t = 128)]
        mels: usize,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::WavFormat { .. } | Error::Checkpoint(_) => 2,
        Error::NonFinite(_) => 3,
        _ => 1,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Resolve the seed: explicit wins; otherwise draw one and print it so the
/// run can be reproduced.
fn resolve_seed(seed: Option<u64>) -> u64 {
    match seed {
        Some(s) => s,
        None => {
            let s: u64 = rand::random();
            eprintln!("seed: {s}");
            s
        }
    }
}

fn load_mono(path: &Path) -> Result<(Waveform, SampleFormat)> {
    let content = read_wav(path)?;
    for w in &content.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok((content.wave, content.format))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.config)?;
    match cli.cmd {
        Cmd::Scan { dir, output } => cmd_scan(&dir, output.as_deref()),
        Cmd::Pitch { input, output } => cmd_pitch(&cfg, &input, &output),
        Cmd::Template { input, output } => {
            cfg.template.rng_seed = resolve_seed(cli.seed.or(Some(cfg.template.rng_seed)));
            cmd_template(&cfg, &input, &output)
        }
        Cmd::Augment { input, output, zeta } => {
            let seed = resolve_seed(cli.seed);
            cmd_augment(&cfg, &input, &output, zeta, seed)
        }
        Cmd::EvalLosses { a, b } => cmd_eval_losses(&cfg, &a, &b),
        Cmd::TrainToy { manifest, out, resume, steps, checkpoint_every } => {
            if let Some(s) = cli.seed {
                cfg.training.seed = s;
            } else if cli.config.is_none() && resume.is_none() {
                cfg.training.seed = resolve_seed(None);
            }
            if let Some(s) = steps {
                cfg.training.steps = s;
            }
            if let Some(c) = checkpoint_every {
                cfg.training.checkpoint_every = c;
            }
            cmd_train_toy(&cfg, &manifest, &out, resume.as_deref())
        }
        Cmd::CopySynth { input, checkpoint, output } => {
            cmd_copy_synth(&cfg, &input, &checkpoint, &output)
        }
        Cmd::DumpSpec { input, output, fft, hop, win, mels } => {
            cmd_dump_spec(&cfg, &input, &output, fft, hop, win, mels)
        }
    }
}

fn cmd_scan(dir: &Path, output: Option<&Path>) -> Result<()> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|x| x.eq_ignore_ascii_case("wav"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    let mut entries = Vec::new();
    for p in paths {
        match read_wav(&p) {
            Ok(content) => {
                for w in &content.warnings {
                    eprintln!("warning: {}: {w}", p.display());
                }
                entries.push(ManifestEntry {
                    path: p.to_string_lossy().into_owned(),
                    sample_rate: content.wave.sample_rate,
                    n_samples: content.wave.len(),
                });
            }
            Err(e) => eprintln!("warning: skipping {}: {e}", p.display()),
        }
    }
    let json = serde_json::to_string_pretty(&entries).expect("manifest serializes");
    match output {
        Some(p) => std::fs::write(p, json + "\n").map_err(|e| Error::io(p, e))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn fused_pitch(cfg: &RunConfig, wave: &Waveform) -> Result<refinevoc::pitch::PitchCurve> {
    let hop = cfg.mel.hop_size;
    let fine = estimate_base_fine(wave, hop, cfg.pitch.f_floor, cfg.pitch.f_ceil)?;
    let coarse = estimate_base_coarse(wave, hop, cfg.pitch.f_floor, cfg.pitch.f_ceil)?;
    fuse_pitch(&fine, &coarse, wave, &cfg.pitch.fusion)
}

fn cmd_pitch(cfg: &RunConfig, input: &Path, output: &Path) -> Result<()> {
    let (wave, _) = load_mono(input)?;
    let fused = fused_pitch(cfg, &wave)?;
    std::fs::write(output, pitch_to_text(&fused)).map_err(|e| Error::io(output, e))?;
    Ok(())
}

fn cmd_template(cfg: &RunConfig, input: &Path, output: &Path) -> Result<()> {
    let (wave, _) = load_mono(input)?;
    let mel = mel_spectrogram(&wave, &cfg.mel)?;
    let fused = fused_pitch(cfg, &wave)?;
    let intensity = frame_intensity(&mel);
    let template = build_template(&fused, &intensity, wave.len(), wave.sample_rate, &cfg.template)?;
    let out = Waveform::new(template.samples, wave.sample_rate)?;
    write_wav(output, &out, SampleFormat::Float32)
}

fn cmd_augment(cfg: &RunConfig, input: &Path, output: &Path, zeta: i32, seed: u64) -> Result<()> {
    if !cfg.shift.contains(zeta) {
        return Err(Error::InvalidParam(format!(
            "zeta {zeta} outside the configured range [{}, {}]",
            cfg.shift.zeta_min, cfg.shift.zeta_max
        )));
    }
    let (wave, format) = load_mono(input)?;
    let shifted = pitch_shift(&wave, zeta)?;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (out, gain) = loudness_augment(&shifted, &cfg.loudness, &mut rng)?;
    eprintln!("zeta: {zeta}  gain: {gain:.6}");
    write_wav(output, &out, format)
}

fn cmd_eval_losses(cfg: &RunConfig, a: &Path, b: &Path) -> Result<()> {
    let (wa, _) = load_mono(a)?;
    let (wb, _) = load_mono(b)?;
    let mut mel_cfg = cfg.mel_loss.clone();
    // clamp the ladder to the files' bandwidth so default configs work on
    // any sample rate
    for set in &mut mel_cfg.param_sets {
        set.f_max = set.f_max.min(wa.sample_rate as f64 / 2.0);
    }
    let mel = multi_mel_loss(&wa, &wb, &mel_cfg)?;
    let env = envelope_loss(&wa, &wb, cfg.envelope.win_size, cfg.envelope.hop_size)?;
    if !mel.is_finite() || !env.is_finite() {
        return Err(Error::NonFinite(format!("mel {mel}, envelope {env}")));
    }
    println!(
        "{}",
        serde_json::json!({ "mel": mel, "envelope": env })
    );
    Ok(())
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("manifest parse: {e}")))
}

fn cmd_train_toy(cfg: &RunConfig, manifest: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let entries = read_manifest(manifest)?;
    if entries.is_empty() {
        return Err(Error::Config("manifest has no entries".into()));
    }
    let mut sources = Vec::with_capacity(entries.len());
    for e in &entries {
        let (wave, _) = load_mono(Path::new(&e.path))?;
        let wave = if wave.sample_rate == cfg.sample_rate {
            wave
        } else {
            kaiser_resample(&wave, cfg.sample_rate)?
        };
        sources.push(wave);
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut state = match resume {
        Some(p) => load_checkpoint(p)?,
        None => init_model(&cfg.generator, &cfg.discriminator, &cfg.training)?,
    };
    let metrics_path = out.join("metrics.jsonl");
    let mut metrics_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    use std::io::Write as _;
    let ckpt_every = cfg.training.checkpoint_every;
    let out_dir = out.to_path_buf();
    run_training(&sources, cfg, &mut state, |m, st| {
        writeln!(metrics_file, "{}", m.to_json_line()).map_err(|e| Error::io(&metrics_path, e))?;
        if m.step % 25 == 0 || m.step == 1 {
            eprintln!(
                "step {}  total {:.4}  mel {:.4}  env {:.4}  adv {:.4}  d_mpd {:.4}  d_mrd {:.4}",
                m.step, m.loss_total, m.loss_mel, m.loss_env, m.loss_adv_g, m.loss_mpd, m.loss_mrd
            );
        }
        if m.step % ckpt_every == 0 {
            save_checkpoint(&out_dir.join(format!("step_{:06}.ckpt", m.step)), st)?;
        }
        Ok(())
    })?;
    save_checkpoint(&out.join("final.ckpt"), &state)?;
    Ok(())
}

fn cmd_copy_synth(cfg: &RunConfig, input: &Path, checkpoint: &Path, output: &Path) -> Result<()> {
    let state = load_checkpoint(checkpoint)?;
    let (wave, _) = load_mono(input)?;
    let wave = if wave.sample_rate == cfg.sample_rate {
        wave
    } else {
        kaiser_resample(&wave, cfg.sample_rate)?
    };
    let hop = cfg.mel.hop_size;
    let n = (wave.len() / hop) * hop;
    if n == 0 {
        return Err(Error::TooShort { got: wave.len(), need: hop });
    }
    let trimmed = Waveform::new(wave.samples[..n].to_vec(), wave.sample_rate)?;
    let item = prepare_item(&trimmed, cfg)?;
    let mut tape = refinevoc::nn::Tape::new();
    let y = state
        .gen
        .forward_t(&mut tape, &item.template, &item.mel, &mut Vec::new())?;
    let out = Waveform::new(tape.value(y).data.clone(), cfg.sample_rate)?;
    write_wav(output, &out, SampleFormat::Float32)
}

fn cmd_dump_spec(
    cfg: &RunConfig,
    input: &Path,
    output: &Path,
    fft: usize,
    hop: usize,
    win: usize,
    mels: usize,
) -> Result<()> {
    let (wave, _) = load_mono(input)?;
    let params = MelParamSet {
        fft_size: fft,
        win_size: win,
        hop_size: hop,
        n_mels: mels,
        f_min: cfg.mel.f_min,
        f_max: cfg.mel.f_max.min(wave.sample_rate as f64 / 2.0),
    };
    params.validate(wave.sample_rate)?;
    let mel = mel_spectrogram(&wave, &params)?;
    let mut csv = String::from("frame");
    for m in 0..mel.n_mels {
        csv.push_str(&format!(",mel_{m}"));
    }
    csv.push('\n');
    for t in 0..mel.n_frames {
        csv.push_str(&t.to_string());
        for m in 0..mel.n_mels {
            csv.push_str(&format!(",{:.9}", mel.at(m, t)));
        }
        csv.push('\n');
    }
    std::fs::write(output, csv).map_err(|e| Error::io(output, e))?;
    Ok(())
}
