//! Dataset ingestion, the alternating GAN optimization loop, checkpoint
//! round-trips, and the per-resolution contribution tracker.
//!
//! One training step performs a discriminator update on detached generated
//! audio, then a generator update through the refreshed discriminators,
//! mirroring the usual alternating contract. Batches are sampled with
//! replacement from a checkpointed RNG stream, so a restored run continues
//! the exact trajectory.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discriminators::{DiscriminatorConfig, Discriminators};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::nn::{AdamW, Graph, ParamSet};
use crate::objectives::{
    d_loss_graph, fm_terms_graph, g_adv_terms_graph, g_total_graph, LossReport, LossWeights,
};
use crate::spectral::{self, MelAnalyzer, HOP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    /// Multiplicative decay applied at each epoch boundary.
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub segment_length: usize,
    pub steps: usize,
    pub seed: u64,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
    /// Epochs between contribution probes (0 disables tracking).
    pub track_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            initial_lr: 2e-4,
            lr_decay: 0.999,
            beta1: 0.8,
            beta2: 0.999,
            weight_decay: 0.01,
            segment_length: 8192,
            steps: 1000,
            seed: 1234,
            split_train: 0.8,
            split_val: 0.1,
            split_test: 0.1,
            track_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.segment_length % HOP != 0 {
            return Err(Error::Config(format!(
                "segment length {} must be divisible by the hop {HOP}",
                self.segment_length
            )));
        }
        let sum = self.split_train + self.split_val + self.split_test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {sum}, not 1")));
        }
        if self.initial_lr <= 0.0 || self.lr_decay <= 0.0 || self.lr_decay > 1.0 {
            return Err(Error::Config("bad learning-rate schedule".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Dataset ingestion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SplitManifests {
    pub train: Vec<PathBuf>,
    pub val: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
    pub rejects: Vec<(PathBuf, String)>,
}

/// Scan a directory of WAVs, validate each, split deterministically by
/// seed, and persist the manifests (train.txt/val.txt/test.txt plus a
/// rejects report).
pub fn ingest_dataset(
    wav_dir: impl AsRef<Path>,
    seed: u64,
    ratios: (f64, f64, f64),
    out_dir: impl AsRef<Path>,
) -> Result<SplitManifests> {
    let wav_dir = wav_dir.as_ref();
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut names: Vec<PathBuf> = fs::read_dir(wav_dir)
        .map_err(|e| Error::io(wav_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "wav").unwrap_or(false))
        .collect();
    names.sort();
    let mut valid = Vec::new();
    let mut rejects = Vec::new();
    for path in names {
        match spectral::load_wav(&path) {
            Ok(_) => valid.push(path),
            Err(e) => rejects.push((path, e.to_string())),
        }
    }
    if valid.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10 valid WAV files, found {} in {}",
            valid.len(),
            wav_dir.display()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates over the sorted list
    for i in (1..valid.len()).rev() {
        let j = rng.gen_range(0..=i);
        valid.swap(i, j);
    }
    // floor counts for val/test, remainder to train
    let n = valid.len();
    let n_val = (ratios.1 * n as f64).floor() as usize;
    let n_test = (ratios.2 * n as f64).floor() as usize;
    let test = valid.split_off(n - n_test);
    let val = valid.split_off(n - n_test - n_val);
    let train = valid;

    let rel = |p: &PathBuf| -> String {
        p.strip_prefix(wav_dir)
            .map(|r| r.to_string_lossy().into_owned())
            .unwrap_or_else(|_| p.to_string_lossy().into_owned())
    };
    let write_list = |name: &str, list: &[PathBuf]| -> Result<()> {
        let body = list.iter().map(&rel).collect::<Vec<_>>().join("\n");
        spectral::write_atomic(out_dir.join(name), format!("{body}\n").as_bytes())
    };
    write_list("train.txt", &train)?;
    write_list("val.txt", &val)?;
    write_list("test.txt", &test)?;
    let rej_body = rejects
        .iter()
        .map(|(p, why)| format!("{}\t{why}", rel(p)))
        .collect::<Vec<_>>()
        .join("\n");
    spectral::write_atomic(
        out_dir.join("rejects.txt"),
        format!("{rej_body}\n").as_bytes(),
    )?;
    Ok(SplitManifests {
        train,
        val,
        test,
        rejects,
    })
}

/// Read a newline-delimited manifest of paths relative to `base`.
pub fn read_manifest(path: impl AsRef<Path>, base: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| base.as_ref().join(l.trim()))
        .collect())
}

// ---------------------------------------------------------------------------
// Contribution tracking
// ---------------------------------------------------------------------------

/// Per-epoch normalized standard deviations (percent) of the full-rate
/// branch contributions, lowest resolution first.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ContributionSeries {
    pub epochs: Vec<usize>,
    pub shares: Vec<Vec<f64>>,
}

impl ContributionSeries {
    pub fn push(&mut self, epoch: usize, shares: Vec<f64>) {
        self.epochs.push(epoch);
        self.shares.push(shares);
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let k = self.shares.first().map(|s| s.len()).unwrap_or(0);
        let mut body = String::from("epoch");
        for i in 0..k {
            body.push_str(&format!(",s{i}"));
        }
        body.push('\n');
        for (e, row) in self.epochs.iter().zip(&self.shares) {
            body.push_str(&e.to_string());
            for v in row {
                body.push(',');
                body.push_str(&v.to_string());
            }
            body.push('\n');
        }
        spectral::write_atomic(path, body.as_bytes())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut series = ContributionSeries::default();
        for line in text.lines().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let epoch: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format(path, format!("bad row `{line}`")))?;
            let shares: Vec<f64> = parts
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::format(path, format!("bad row `{line}`")))?;
            series.push(epoch, shares);
        }
        Ok(series)
    }
}

fn std_dev(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Percent contribution of each branch on a fixed probe input; all-zero
/// branches report a uniform split.
pub fn track_contributions(gen: &Generator, probe_mel: &Array2<f64>) -> Result<Vec<f64>> {
    let out = gen.generate(probe_mel)?;
    if out.contributions.is_empty() {
        return Err(Error::InvalidArgument(
            "contribution tracking needs the skip-summation topology".into(),
        ));
    }
    let stds: Vec<f64> = out.contributions.iter().map(|c| std_dev(c)).collect();
    let total: f64 = stds.iter().sum();
    let k = stds.len() as f64;
    Ok(if total == 0.0 {
        stds.iter().map(|_| 100.0 / k).collect()
    } else {
        stds.iter().map(|s| 100.0 * s / total).collect()
    })
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

/// One aligned (mel, audio) training pair.
pub struct BatchItem {
    pub mel: Array2<f64>,
    pub audio: Vec<f64>,
}

pub struct Trainer {
    pub gen: Generator,
    pub disc: Discriminators,
    pub cfg: TrainConfig,
    pub weights: LossWeights,
    opt_g: AdamW,
    opt_d: AdamW,
    step: usize,
    epoch: usize,
    lr: f64,
    data_rng: ChaCha8Rng,
    config_hash: String,
}

/// Canonical hash binding a checkpoint to its configuration.
pub fn config_hash(
    gen: &GeneratorConfig,
    disc: &DiscriminatorConfig,
    train: &TrainConfig,
    weights: &LossWeights,
) -> String {
    let blob = serde_json::to_string(&(gen, disc, train, weights)).expect("serializable configs");
    let mut hasher = Sha256::new();
    hasher.update(blob.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Trainer {
    pub fn new(
        gen_cfg: GeneratorConfig,
        disc_cfg: DiscriminatorConfig,
        cfg: TrainConfig,
        weights: LossWeights,
    ) -> Result<Self> {
        cfg.validate()?;
        weights.validate()?;
        if gen_cfg.total_upsample() != HOP {
            return Err(Error::Config(format!(
                "generator upsampling {} must equal the mel hop {HOP}",
                gen_cfg.total_upsample()
            )));
        }
        let hash = config_hash(&gen_cfg, &disc_cfg, &cfg, &weights);
        let gen = Generator::new(gen_cfg, cfg.seed)?;
        let disc = Discriminators::new(disc_cfg, cfg.seed.wrapping_add(1))?;
        let opt_g = AdamW::new(
            &gen.params,
            cfg.initial_lr,
            cfg.beta1,
            cfg.beta2,
            cfg.weight_decay,
        );
        let opt_d = AdamW::new(
            &disc.params,
            cfg.initial_lr,
            cfg.beta1,
            cfg.beta2,
            cfg.weight_decay,
        );
        let data_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
        Ok(Trainer {
            gen,
            disc,
            lr: cfg.initial_lr,
            cfg,
            weights,
            opt_g,
            opt_d,
            step: 0,
            epoch: 0,
            data_rng,
            config_hash: hash,
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn check_item(&self, item: &BatchItem) -> Result<()> {
        if item.audio.len() != HOP * item.mel.ncols() {
            return Err(Error::InvalidArgument(format!(
                "segment of {} samples does not align with {} mel frames x {HOP}",
                item.audio.len(),
                item.mel.ncols()
            )));
        }
        Ok(())
    }

    /// Discriminator update on detached generated audio. Returns the mean
    /// discriminator loss and the generated waveforms for reuse.
    fn d_update(&mut self, batch: &[BatchItem]) -> Result<(f64, Vec<Vec<f64>>)> {
        let inv_b = 1.0 / batch.len() as f64;
        // generate without gradients
        let mut fakes = Vec::with_capacity(batch.len());
        for item in batch {
            fakes.push(self.gen.generate(&item.mel)?.final_audio.samples);
        }
        let mut g = Graph::new();
        let bind_d = self.disc.params.bind(&mut g, true);
        let mut terms = Vec::with_capacity(batch.len());
        for (item, fake) in batch.iter().zip(&fakes) {
            let x = g.constant(
                ArrayD::from_shape_vec(IxDyn(&[1, item.audio.len()]), item.audio.clone()).unwrap(),
            );
            let xh =
                g.constant(ArrayD::from_shape_vec(IxDyn(&[1, fake.len()]), fake.clone()).unwrap());
            let real_outs = self.disc.forward_all(&mut g, &bind_d, x);
            let fake_outs = self.disc.forward_all(&mut g, &bind_d, xh);
            let item_loss = d_loss_graph(&mut g, &real_outs, &fake_outs);
            terms.push((item_loss, inv_b));
        }
        let total = g.weighted_sum(&terms);
        let d_total = g.scalar_value(total);
        let grads = g.backward(total, MelAnalyzer::global());
        let d_grads = bind_d.collect_grads(&grads);
        self.opt_d.step(&mut self.disc.params, &d_grads);
        Ok((d_total, fakes))
    }

    /// Generator update through the refreshed discriminators. Returns the
    /// per-sub-discriminator adversarial and feature-matching terms plus
    /// the mel term, averaged over the batch.
    fn g_update(&mut self, batch: &[BatchItem]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let analyzer = MelAnalyzer::global();
        let inv_b = 1.0 / batch.len() as f64;
        let n_subs = self.disc.cfg.num_sub_discriminators();
        let mut adv_acc = vec![0.0; n_subs];
        let mut fm_acc = vec![0.0; n_subs];
        let mut mel_acc = 0.0;
        let mut grad_acc: Vec<Option<ArrayD<f64>>> = vec![None; self.gen.params.len()];
        for item in batch {
            let mut g = Graph::new();
            let bind_g = self.gen.params.bind(&mut g, true);
            let bind_d = self.disc.params.bind(&mut g, false);
            let mel_in = g.constant(
                ArrayD::from_shape_vec(
                    IxDyn(&[item.mel.nrows(), item.mel.ncols()]),
                    item.mel.iter().copied().collect(),
                )
                .unwrap(),
            );
            let fwd = self.gen.forward(&mut g, &bind_g, mel_in);
            let x = g.constant(
                ArrayD::from_shape_vec(IxDyn(&[1, item.audio.len()]), item.audio.clone()).unwrap(),
            );
            let real_outs = self.disc.forward_all(&mut g, &bind_d, x);
            let fake_outs = self.disc.forward_all(&mut g, &bind_d, fwd.output);
            let adv = g_adv_terms_graph(&mut g, &fake_outs);
            let fm = fm_terms_graph(&mut g, &real_outs, &fake_outs);
            let mel_fake = g.mel_spec(analyzer, fwd.output);
            let mel_real = g.constant(analyzer.mel(&item.audio).into_dyn());
            let mel_term = g.l1_mean(mel_fake, mel_real);
            let g_total = g_total_graph(&mut g, &adv, &fm, mel_term, &self.weights);
            let scaled = g.weighted_sum(&[(g_total, inv_b)]);
            for (i, &t) in adv.iter().enumerate() {
                adv_acc[i] += g.scalar_value(t) * inv_b;
            }
            for (i, &t) in fm.iter().enumerate() {
                fm_acc[i] += g.scalar_value(t) * inv_b;
            }
            mel_acc += g.scalar_value(mel_term) * inv_b;
            let grads = g.backward(scaled, analyzer);
            for (slot, got) in grad_acc.iter_mut().zip(bind_g.collect_grads(&grads)) {
                match (slot.as_mut(), got) {
                    (Some(acc), Some(new)) => *acc += &new,
                    (None, Some(new)) => *slot = Some(new),
                    _ => {}
                }
            }
        }
        self.opt_g.step(&mut self.gen.params, &grad_acc);
        Ok((adv_acc, fm_acc, mel_acc))
    }

    /// One alternating optimization step over a batch of aligned pairs.
    pub fn train_step(&mut self, batch: &[BatchItem]) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        for item in batch {
            self.check_item(item)?;
        }
        let (d_total, _fakes) = self.d_update(batch)?;
        let (g_adv, fm, mel) = self.g_update(batch)?;
        let g_total = g_adv.iter().sum::<f64>()
            + self.weights.lambda_fm * fm.iter().sum::<f64>()
            + self.weights.lambda_mel * mel;
        self.step += 1;
        let report = LossReport {
            step: self.step,
            d_total,
            g_total,
            g_adv,
            fm,
            mel,
            lr: self.lr,
        };
        if let Some(term) = report.first_non_finite() {
            return Err(Error::NonFinite {
                term,
                step: self.step,
            });
        }
        if !self.gen.params.all_finite() {
            return Err(Error::NonFinite {
                term: "generator parameters".into(),
                step: self.step,
            });
        }
        if !self.disc.params.all_finite() {
            return Err(Error::NonFinite {
                term: "discriminator parameters".into(),
                step: self.step,
            });
        }
        Ok(report)
    }

    /// Sample one batch (with replacement) from preloaded clips.
    pub fn sample_batch(&mut self, clips: &[Vec<f64>]) -> Result<Vec<BatchItem>> {
        let seg = self.cfg.segment_length;
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let ci = self.data_rng.gen_range(0..clips.len());
            let clip = &clips[ci];
            if clip.len() < seg {
                return Err(Error::InvalidArgument(format!(
                    "clip {ci} has {} samples, shorter than the segment {seg}",
                    clip.len()
                )));
            }
            let max_off = clip.len() - seg;
            let off = if max_off == 0 {
                0
            } else {
                self.data_rng.gen_range(0..=max_off)
            };
            let audio = clip[off..off + seg].to_vec();
            let mel = MelAnalyzer::global().mel(&audio);
            batch.push(BatchItem { mel, audio });
        }
        Ok(batch)
    }

    fn end_epoch(&mut self) {
        self.epoch += 1;
        self.lr *= self.cfg.lr_decay;
        self.opt_g.lr = self.lr;
        self.opt_d.lr = self.lr;
    }

    /// Run until `self.step == until_step`, logging every step and probing
    /// branch contributions at epoch boundaries. An epoch is one pass worth
    /// of steps over the clip list.
    pub fn run(
        &mut self,
        clips: &[Vec<f64>],
        probe_mel: Option<&Array2<f64>>,
        out_dir: impl AsRef<Path>,
        until_step: usize,
    ) -> Result<RunOutputs> {
        if clips.is_empty() {
            return Err(Error::InvalidArgument("no training clips".into()));
        }
        let out_dir = out_dir.as_ref();
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let steps_per_epoch = clips.len().div_ceil(self.cfg.batch_size).max(1);
        let n_subs = self.disc.cfg.num_sub_discriminators();
        let mut log = String::new();
        log.push_str(&LossReport::csv_header(n_subs));
        log.push('\n');
        let mut reports = Vec::new();
        let mut series = ContributionSeries::default();
        let track = |gen: &Generator, series: &mut ContributionSeries, epoch: usize| {
            if let Some(mel) = probe_mel {
                if let Ok(shares) = track_contributions(gen, mel) {
                    series.push(epoch, shares);
                }
            }
        };
        if self.cfg.track_interval > 0 && self.step == 0 {
            track(&self.gen, &mut series, 0);
        }
        while self.step < until_step {
            let batch = self.sample_batch(clips)?;
            let report = self.train_step(&batch)?;
            log.push_str(&report.csv_row());
            log.push('\n');
            reports.push(report);
            if self.step % steps_per_epoch == 0 {
                self.end_epoch();
                if self.cfg.track_interval > 0 && self.epoch % self.cfg.track_interval == 0 {
                    track(&self.gen, &mut series, self.epoch);
                }
            }
        }
        if self.cfg.track_interval > 0
            && series.epochs.last().copied() != Some(self.epoch)
            && self.epoch > 0
        {
            track(&self.gen, &mut series, self.epoch);
        }
        let log_path = out_dir.join("train_log.csv");
        spectral::write_atomic(&log_path, log.as_bytes())?;
        let contributions_path = out_dir.join("contributions.csv");
        if self.cfg.track_interval > 0 {
            series.save_csv(&contributions_path)?;
        }
        let checkpoint_path = out_dir.join("checkpoint.bin");
        self.save_checkpoint(&checkpoint_path)?;
        Ok(RunOutputs {
            log_path,
            contributions_path,
            checkpoint_path,
            reports,
            contributions: series,
        })
    }

    // -- checkpointing ------------------------------------------------------

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"RCWK");
        buf.extend_from_slice(&1u32.to_le_bytes());
        let hash = self.config_hash.as_bytes();
        buf.extend_from_slice(&(hash.len() as u32).to_le_bytes());
        buf.extend_from_slice(hash);
        buf.extend_from_slice(&(self.step as u64).to_le_bytes());
        buf.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        buf.extend_from_slice(&self.lr.to_le_bytes());
        buf.extend_from_slice(&self.data_rng.get_seed());
        buf.extend_from_slice(&self.data_rng.get_word_pos().to_le_bytes());
        buf.extend_from_slice(&self.data_rng.get_stream().to_le_bytes());
        write_params(&mut buf, &self.gen.params);
        write_params(&mut buf, &self.disc.params);
        write_adam(&mut buf, &self.opt_g);
        write_adam(&mut buf, &self.opt_d);
        spectral::write_atomic(path, &buf)
    }

    /// Restore a trainer from a checkpoint produced under the same configs.
    pub fn load_checkpoint(
        path: impl AsRef<Path>,
        gen_cfg: GeneratorConfig,
        disc_cfg: DiscriminatorConfig,
        cfg: TrainConfig,
        weights: LossWeights,
    ) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader::new(&bytes, path);
        let magic = r.take(4)?;
        if magic != b"RCWK" {
            return Err(Error::format(path, "not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != 1 {
            return Err(Error::format(path, format!("unknown version {version}")));
        }
        let hash_len = r.u32()? as usize;
        let found_hash = String::from_utf8_lossy(r.take(hash_len)?).into_owned();
        let expected_hash = config_hash(&gen_cfg, &disc_cfg, &cfg, &weights);
        if found_hash != expected_hash {
            return Err(Error::ConfigHashMismatch {
                expected: expected_hash,
                found: found_hash,
            });
        }
        let step = r.u64()? as usize;
        let epoch = r.u64()? as usize;
        let lr = r.f64()?;
        let mut seed = [0u8; 32];
        seed.copy_from_slice(r.take(32)?);
        let word_pos = r.u128()?;
        let stream = r.u64()?;
        let gen_params = read_params(&mut r)?;
        let disc_params = read_params(&mut r)?;

        let mut trainer = Trainer::new(gen_cfg, disc_cfg, cfg, weights)?;
        trainer.gen.params.load_values_from(&gen_params)?;
        trainer.disc.params.load_values_from(&disc_params)?;
        read_adam(&mut r, &mut trainer.opt_g, &trainer.gen.params)?;
        read_adam(&mut r, &mut trainer.opt_d, &trainer.disc.params)?;
        trainer.step = step;
        trainer.epoch = epoch;
        trainer.lr = lr;
        trainer.opt_g.lr = lr;
        trainer.opt_d.lr = lr;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        trainer.data_rng = rng;
        Ok(trainer)
    }
}

pub struct RunOutputs {
    pub log_path: PathBuf,
    pub contributions_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub reports: Vec<LossReport>,
    pub contributions: ContributionSeries,
}

// -- binary helpers ---------------------------------------------------------

fn write_params(buf: &mut Vec<u8>, ps: &ParamSet) {
    buf.extend_from_slice(&(ps.len() as u32).to_le_bytes());
    for p in ps.iter() {
        let name = p.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        let shape = p.value.shape();
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in p.value.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_params(r: &mut Reader) -> Result<ParamSet> {
    let count = r.u32()? as usize;
    let mut ps = ParamSet::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8_lossy(r.take(name_len)?).into_owned();
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f64()?);
        }
        ps.add(name, ArrayD::from_shape_vec(IxDyn(&shape), data).unwrap());
    }
    Ok(ps)
}

fn write_adam(buf: &mut Vec<u8>, opt: &AdamW) {
    let (t, m, v) = opt.state();
    buf.extend_from_slice(&t.to_le_bytes());
    for arr in m.iter().chain(v.iter()) {
        buf.extend_from_slice(&(arr.len() as u64).to_le_bytes());
        for x in arr.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
}

fn read_adam(r: &mut Reader, opt: &mut AdamW, params: &ParamSet) -> Result<()> {
    let t = r.u64()?;
    let read_vec = |r: &mut Reader| -> Result<Vec<ArrayD<f64>>> {
        let mut out = Vec::with_capacity(params.len());
        for p in params.iter() {
            let n = r.u64()? as usize;
            if n != p.value.len() {
                return Err(Error::format(
                    r.path.to_path_buf(),
                    format!("optimizer state size {n} does not match `{}`", p.name),
                ));
            }
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(r.f64()?);
            }
            out.push(ArrayD::from_shape_vec(p.value.raw_dim(), data).unwrap());
        }
        Ok(out)
    };
    let m = read_vec(r)?;
    let v = read_vec(r)?;
    opt.restore_state(t, m, v);
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Reader {
            bytes,
            pos: 0,
            path,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
