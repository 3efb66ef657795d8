//! Command-line entry points: training, synthesis, evaluation, the chirp
//! downsampling demo, the ablation sweep, and plot emission.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use crate::config::RunConfig;
use crate::discriminators::DownsampleMode;
use crate::error::{Error, Result};
use crate::evalsuite;
use crate::plot;
use crate::spectral::{self, AudioBuffer};
use crate::trainer::{self, ContributionSeries, Trainer};
use crate::wavelet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Device {
    Cpu,
    Gpu,
}

#[derive(Parser, Debug)]
#[command(
    name = "rcwave",
    about = "Resolution-connected GAN vocoder with wavelet discriminators",
    version
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted-key override, e.g. --set training.steps=200 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides training.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Device::Cpu)]
    pub device: Device,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a WAV directory and write train/val/test manifests.
    Ingest,
    /// Train from the configured manifest.
    Train {
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Synthesize audio from a mel container or a WAV (copy synthesis).
    Synth {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Objective metrics over paired reference/candidate directories.
    Eval {
        #[arg(long)]
        ref_dir: PathBuf,
        #[arg(long)]
        cand_dir: PathBuf,
        /// Also render per-pair mel difference maps.
        #[arg(long)]
        maps: bool,
    },
    /// Side-by-side average-pooling vs wavelet downsampling of an up-chirp.
    DemoChirp {
        #[arg(long, default_value_t = 8.0)]
        duration: f64,
        #[arg(long, default_value_t = 0.0)]
        f0: f64,
        #[arg(long, default_value_t = 150.0)]
        f1: f64,
        #[arg(long, default_value_t = 400)]
        rate: u32,
    },
    /// Train every component-removal row at micro scale and tabulate
    /// metrics against the baseline.
    Ablate,
    /// Render contribution curves and difference maps from saved artifacts.
    Plot {
        /// contributions.csv produced by training.
        #[arg(long)]
        contributions: Option<PathBuf>,
        /// Reference WAV for a difference map.
        #[arg(long, requires = "cand")]
        reference: Option<PathBuf>,
        /// Candidate WAV for a difference map.
        #[arg(long, requires = "reference", value_name = "CAND", id = "cand")]
        candidate: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.device == Device::Gpu {
        return Err(Error::Config(
            "gpu backend is not available in this build; use --device cpu".into(),
        ));
    }
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.training.seed = seed;
    }
    cfg.validate()?;
    let out = &cli.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    match cli.command {
        Command::Ingest => cmd_ingest(&cfg, out),
        Command::Train { resume } => cmd_train(&cfg, out, resume.as_deref()),
        Command::Synth {
            checkpoint,
            input,
            output,
        } => cmd_synth(&cfg, &checkpoint, &input, &output),
        Command::Eval {
            ref_dir,
            cand_dir,
            maps,
        } => cmd_eval(&ref_dir, &cand_dir, out, maps),
        Command::DemoChirp {
            duration,
            f0,
            f1,
            rate,
        } => {
            let report = wavelet::chirp_demo(duration, f0, f1, rate, out)?;
            println!(
                "chirp demo: avg-pool kept {:.2}% of energy, wavelet bands kept {:.2}%",
                100.0 * report.avg_pool_retained_fraction,
                100.0 * (report.dwt_low_energy + report.dwt_high_energy) / report.input_energy
            );
            Ok(())
        }
        Command::Ablate => cmd_ablate(&cfg, out),
        Command::Plot {
            contributions,
            reference,
            candidate,
        } => cmd_plot(contributions.as_deref(), reference.as_deref(), candidate.as_deref(), out),
    }
}

fn cmd_ingest(cfg: &RunConfig, out: &Path) -> Result<()> {
    let wav_dir = cfg
        .data
        .wav_dir
        .as_ref()
        .ok_or_else(|| Error::Config("data.wav_dir is not set".into()))?;
    let manifest_dir = out.join("manifests");
    let split = trainer::ingest_dataset(
        wav_dir,
        cfg.training.seed,
        (
            cfg.training.split_train,
            cfg.training.split_val,
            cfg.training.split_test,
        ),
        &manifest_dir,
    )?;
    println!(
        "ingest: {} train / {} val / {} test, {} rejected -> {}",
        split.train.len(),
        split.val.len(),
        split.test.len(),
        split.rejects.len(),
        manifest_dir.display()
    );
    Ok(())
}

fn load_training_clips(cfg: &RunConfig) -> Result<Vec<(PathBuf, Vec<f64>)>> {
    let manifest = cfg
        .data
        .train_manifest
        .as_ref()
        .ok_or_else(|| Error::Config("data.train_manifest is not set".into()))?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let paths = trainer::read_manifest(manifest, base)?;
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "manifest {} lists no files",
            manifest.display()
        )));
    }
    let mut clips = Vec::with_capacity(paths.len());
    for p in paths {
        let buf = spectral::load_wav(&p)?;
        if buf.len() < cfg.training.segment_length {
            return Err(Error::InvalidArgument(format!(
                "{}: {} samples is shorter than the training segment {}",
                p.display(),
                buf.len(),
                cfg.training.segment_length
            )));
        }
        clips.push((p, buf.samples));
    }
    Ok(clips)
}

fn probe_mel_for(cfg: &RunConfig, clips: &[(PathBuf, Vec<f64>)]) -> Result<Array2<f64>> {
    let samples = match &cfg.data.probe_wav {
        Some(p) => spectral::load_wav(p)?.samples,
        None => clips[0].1.clone(),
    };
    let seg = cfg.training.segment_length.min(samples.len());
    Ok(spectral::MelAnalyzer::global().mel(&samples[..seg]))
}

fn cmd_train(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<()> {
    let clips = load_training_clips(cfg)?;
    let probe = probe_mel_for(cfg, &clips)?;
    cfg.save(out.join("effective_config.toml"))?;
    let mut trainer = match resume {
        Some(path) => Trainer::load_checkpoint(
            path,
            cfg.generator.clone(),
            cfg.discriminator.clone(),
            cfg.training.clone(),
            cfg.losses,
        )?,
        None => Trainer::new(
            cfg.generator.clone(),
            cfg.discriminator.clone(),
            cfg.training.clone(),
            cfg.losses,
        )?,
    };
    let clip_data: Vec<Vec<f64>> = clips.into_iter().map(|(_, c)| c).collect();
    let until = cfg.training.steps;
    let outputs = trainer.run(&clip_data, Some(&probe), out, until)?;
    if let Some(last) = outputs.reports.last() {
        println!(
            "train: {} steps, d={:.4} g={:.4} mel={:.4} -> {}",
            trainer.step_count(),
            last.d_total,
            last.g_total,
            last.mel,
            outputs.checkpoint_path.display()
        );
    } else {
        println!("train: nothing to do (already at step {})", trainer.step_count());
    }
    Ok(())
}

fn cmd_synth(cfg: &RunConfig, checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let trainer = Trainer::load_checkpoint(
        checkpoint,
        cfg.generator.clone(),
        cfg.discriminator.clone(),
        cfg.training.clone(),
        cfg.losses,
    )?;
    let mel = match input.extension().and_then(|e| e.to_str()) {
        Some("wav") => spectral::mel_transform(&spectral::load_wav(input)?)?.values,
        Some("mel") => spectral::load_mel(input)?.values,
        _ => {
            return Err(Error::InvalidArgument(format!(
                "{}: expected a .wav or .mel input",
                input.display()
            )))
        }
    };
    let audio = trainer.gen.generate(&mel)?.final_audio;
    spectral::save_wav(&audio, output)?;
    println!(
        "synth: {} frames -> {} samples -> {}",
        mel.ncols(),
        audio.len(),
        output.display()
    );
    Ok(())
}

fn wav_names(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut map = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().map(|e| e == "wav").unwrap_or(false) {
            map.insert(
                path.file_name().unwrap().to_string_lossy().into_owned(),
                path,
            );
        }
    }
    Ok(map)
}

fn cmd_eval(ref_dir: &Path, cand_dir: &Path, out: &Path, maps: bool) -> Result<()> {
    let refs = wav_names(ref_dir)?;
    let cands = wav_names(cand_dir)?;
    let orphans: Vec<String> = refs
        .keys()
        .filter(|k| !cands.contains_key(*k))
        .map(|k| format!("{k} (no candidate)"))
        .chain(
            cands
                .keys()
                .filter(|k| !refs.contains_key(*k))
                .map(|k| format!("{k} (no reference)")),
        )
        .collect();
    if !orphans.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "unpaired files: {}",
            orphans.join(", ")
        )));
    }
    if refs.is_empty() {
        return Err(Error::InvalidArgument("no WAV pairs found".into()));
    }
    let mut pairs = Vec::new();
    for (name, rp) in &refs {
        let r = spectral::load_wav(rp)?;
        let c = spectral::load_wav(&cands[name])?;
        pairs.push((name.clone(), r, c));
    }
    let report = evalsuite::evaluate_pairs(&pairs)?;
    let json = serde_json::to_vec_pretty(&report)?;
    spectral::write_atomic(out.join("metrics.json"), &json)?;
    spectral::write_atomic(out.join("metrics.csv"), report.to_csv().as_bytes())?;
    if maps {
        let map_dir = out.join("maps");
        std::fs::create_dir_all(&map_dir).map_err(|e| Error::io(&map_dir, e))?;
        for (name, r, c) in &pairs {
            if r.len() == c.len() {
                let png = map_dir.join(format!("{name}.png"));
                evalsuite::mel_difference_map(r, c, Some(&png))?;
            }
        }
    }
    println!(
        "eval: {} pairs, mcd13={:.4} rmse_f0={} frechet={:.6}",
        report.per_utterance.len(),
        report.mcd13,
        report
            .rmse_f0_hz
            .map(|v| format!("{v:.2} Hz"))
            .unwrap_or_else(|| "undefined".into()),
        report.frechet
    );
    Ok(())
}

/// The component-removal rows mirrored by the ablation harness.
pub fn ablation_rows() -> Vec<(&'static str, fn(&mut RunConfig))> {
    vec![
        ("baseline", (|_| {}) as fn(&mut RunConfig)),
        ("no_rcg", |c| c.generator.use_rcg = false),
        ("no_nn_upsampler", |c| c.generator.use_nn_upsampler = false),
        ("no_mel_condition", |c| c.generator.use_mel_condition = false),
        ("no_rpd_rsd", |c| {
            c.discriminator.use_resolution_wise = false;
            c.discriminator.downsample_mode = DownsampleMode::AvgPool;
        }),
        ("no_dwt", |c| {
            c.discriminator.downsample_mode = DownsampleMode::AvgPool;
        }),
    ]
}

#[derive(Debug, serde::Serialize)]
pub struct AblationRow {
    pub name: String,
    pub mcd13: f64,
    pub rmse_f0_hz: Option<f64>,
    pub frechet: f64,
    pub mel_l1: f64,
    pub final_mel_loss: f64,
}

/// Train each ablation row briefly on one reference clip and score its
/// copy synthesis against that clip.
pub fn run_ablation(cfg: &RunConfig, out: &Path) -> Result<Vec<AblationRow>> {
    let reference = match &cfg.data.probe_wav {
        Some(p) => spectral::load_wav(p)?,
        None => spectral::synthetic_voice_clip(3 * cfg.training.segment_length, cfg.training.seed),
    };
    if reference.len() < cfg.training.segment_length {
        return Err(Error::InvalidArgument(
            "ablation reference clip shorter than a training segment".into(),
        ));
    }
    let clips = vec![reference.samples.clone()];
    let mut rows = Vec::new();
    for (name, mutate) in ablation_rows() {
        let mut row_cfg = cfg.clone();
        mutate(&mut row_cfg);
        row_cfg.validate()?;
        let mut t = Trainer::new(
            row_cfg.generator.clone(),
            row_cfg.discriminator.clone(),
            row_cfg.training.clone(),
            row_cfg.losses,
        )?;
        let row_out = out.join(name);
        let outputs = t.run(&clips, None, &row_out, row_cfg.training.steps)?;
        let mel = spectral::MelAnalyzer::global().mel(&reference.samples);
        let synth_full = t.gen.generate(&mel)?.final_audio;
        let synth = AudioBuffer::new(
            synth_full.samples[..reference.len()].to_vec(),
            reference.sample_rate,
        );
        let pairs = vec![("clip".to_string(), reference.clone(), synth)];
        let report = evalsuite::evaluate_pairs(&pairs)?;
        rows.push(AblationRow {
            name: name.to_string(),
            mcd13: report.mcd13,
            rmse_f0_hz: report.rmse_f0_hz,
            frechet: report.frechet,
            mel_l1: report.per_utterance[0].mel_l1,
            final_mel_loss: outputs.reports.last().map(|r| r.mel).unwrap_or(f64::NAN),
        });
    }
    let mut csv = String::from("name,mcd13,rmse_f0_hz,frechet,mel_l1,final_mel_loss\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.name,
            r.mcd13,
            r.rmse_f0_hz
                .map(|v| v.to_string())
                .unwrap_or_else(|| "undefined".into()),
            r.frechet,
            r.mel_l1,
            r.final_mel_loss
        ));
    }
    spectral::write_atomic(out.join("ablation.csv"), csv.as_bytes())?;
    let json = serde_json::to_vec_pretty(&rows)?;
    spectral::write_atomic(out.join("ablation.json"), &json)?;
    Ok(rows)
}

fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let rows = run_ablation(cfg, out)?;
    for r in &rows {
        println!(
            "{:<16} mcd13={:.4} frechet={:.6} mel_l1={:.4}",
            r.name, r.mcd13, r.frechet, r.mel_l1
        );
    }
    println!("ablation table -> {}", out.join("ablation.csv").display());
    Ok(())
}

fn cmd_plot(
    contributions: Option<&Path>,
    reference: Option<&Path>,
    candidate: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let mut did_something = false;
    if let Some(path) = contributions {
        let series = ContributionSeries::load_csv(path)?;
        for (epoch, row) in series.epochs.iter().zip(&series.shares) {
            let total: f64 = row.iter().sum();
            if (total - 100.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "epoch {epoch} shares sum to {total}, expected 100"
                )));
            }
        }
        let png = out.join("contributions.png");
        plot::save_stacked_shares(&series.epochs, &series.shares, &png)?;
        println!("plot: {} epochs -> {}", series.epochs.len(), png.display());
        did_something = true;
    }
    if let (Some(r), Some(c)) = (reference, candidate) {
        let rb = spectral::load_wav(r)?;
        let cb = spectral::load_wav(c)?;
        let png = out.join("mel_diff.png");
        let diff = evalsuite::mel_difference_map(&rb, &cb, Some(&png))?;
        println!("plot: mel difference mean {:.6} -> {}", diff.mean, png.display());
        did_something = true;
    }
    if !did_something {
        return Err(Error::InvalidArgument(
            "plot needs --contributions and/or --reference/--candidate".into(),
        ));
    }
    Ok(())
}

/// Exit code for an error per the CLI contract: 2 for numerical aborts,
/// 1 for everything else.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::NonFinite { .. } => 2,
        _ => 1,
    }
}

/// Speed-harness helper shared by the CLI-adjacent benchmarks: a mel set
/// totaling at least `seconds` of audio at the fixed rate.
pub fn bench_mel_set(seconds: f64, frames_per_mel: usize, seed: u64) -> Vec<Array2<f64>> {
    let total_frames = (seconds * 22050.0 / 256.0).ceil() as usize;
    let n = total_frames.div_ceil(frames_per_mel);
    let mut mels = Vec::with_capacity(n);
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        mels.push(Array2::from_shape_fn((80, frames_per_mel), |_| {
            rng.gen_range(-8.0..0.0)
        }));
    }
    mels
}
