//! Objective evaluation: mel-cepstral distortion over coefficients 1..13,
//! f0 RMSE from a normalized-autocorrelation pitch tracker, a Fréchet
//! distance over pluggable embeddings (default: windowed log-mel
//! statistics), pixel-wise mel difference maps, and a synthesis-speed
//! harness.
//!
//! All spectral quantities come from the shared fixed mel analysis, so
//! numbers are comparable across training, evaluation, and plots.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::objectives::{self, mean_abs_diff};
use crate::plot;
use crate::spectral::{AudioBuffer, MelAnalyzer, N_MELS};

/// dB scaling of the cepstral euclidean distance.
const MCD_SCALE: f64 = 10.0 / std::f64::consts::LN_10;
/// Cepstral coefficients compared (1..=13; the gain term c0 is excluded).
const MCD_COEFFS: usize = 13;

/// Voicing decision threshold on the normalized autocorrelation peak.
const VOICING_THRESHOLD: f64 = 0.3;
const F0_MIN: f64 = 60.0;
const F0_MAX: f64 = 500.0;

// ---------------------------------------------------------------------------
// MCD_13
// ---------------------------------------------------------------------------

/// Type-II DCT of one log-mel frame, coefficients 1..=13.
fn mel_cepstrum_1_13(frame: &[f64]) -> [f64; MCD_COEFFS] {
    let m = frame.len() as f64;
    let mut out = [0.0; MCD_COEFFS];
    for (d, o) in out.iter_mut().enumerate() {
        let k = (d + 1) as f64;
        *o = frame
            .iter()
            .enumerate()
            .map(|(i, v)| v * (std::f64::consts::PI * k * (i as f64 + 0.5) / m).cos())
            .sum();
    }
    out
}

/// Mel-cepstral distortion in dB between reference and candidate audio.
///
/// Frames are compared positionally after truncating to the shorter
/// spectrogram; copy-synthesis preserves framing, so no time alignment is
/// applied. Durations may differ by at most 10%.
pub fn mcd13(reference: &AudioBuffer, candidate: &AudioBuffer) -> Result<f64> {
    if reference.sample_rate != candidate.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "sample rate mismatch: {} vs {}",
            reference.sample_rate, candidate.sample_rate
        )));
    }
    let (a, b) = (reference.len() as f64, candidate.len() as f64);
    if (a - b).abs() > 0.1 * a.max(b) {
        return Err(Error::InvalidArgument(format!(
            "durations differ by more than 10%: {} vs {} samples",
            reference.len(),
            candidate.len()
        )));
    }
    let analyzer = MelAnalyzer::global();
    let mr = analyzer.mel(&reference.samples);
    let mc = analyzer.mel(&candidate.samples);
    let frames = mr.ncols().min(mc.ncols());
    let mut acc = 0.0;
    for t in 0..frames {
        let col_r: Vec<f64> = mr.column(t).iter().copied().collect();
        let col_c: Vec<f64> = mc.column(t).iter().copied().collect();
        let cr = mel_cepstrum_1_13(&col_r);
        let cc = mel_cepstrum_1_13(&col_c);
        let d2: f64 = cr
            .iter()
            .zip(&cc)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        acc += d2.sqrt();
    }
    Ok(MCD_SCALE * std::f64::consts::SQRT_2 * acc / frames as f64)
}

// ---------------------------------------------------------------------------
// f0 tracking and RMSE
// ---------------------------------------------------------------------------

/// Per-frame f0 estimates (None = unvoiced). Normalized cross-correlation
/// with 25 ms windows, 10 ms hop, search range 60..500 Hz, parabolic lag
/// refinement.
pub fn track_f0(x: &AudioBuffer) -> Vec<Option<f64>> {
    let sr = x.sample_rate as f64;
    let win = (0.025 * sr).round() as usize;
    let hop = (0.010 * sr).round() as usize;
    let lag_min = (sr / F0_MAX).floor().max(2.0) as usize;
    let lag_max = (sr / F0_MIN).ceil() as usize;
    let n = x.len();
    let mut out = Vec::new();
    if n < win + lag_max + 1 {
        return out;
    }
    let mut start = 0usize;
    while start + win + lag_max < n {
        let frame = &x.samples[start..];
        let e0: f64 = frame[..win].iter().map(|v| v * v).sum();
        if e0 < 1e-10 {
            out.push(None);
            start += hop;
            continue;
        }
        let mut best_r = f64::NEG_INFINITY;
        let mut r_at = vec![0.0; lag_max + 2];
        for lag in lag_min..=lag_max {
            let mut dot = 0.0;
            let mut e1 = 0.0;
            for t in 0..win {
                dot += frame[t] * frame[t + lag];
                let v = frame[t + lag];
                e1 += v * v;
            }
            let r = if e1 > 0.0 { dot / (e0 * e1).sqrt() } else { 0.0 };
            r_at[lag] = r;
            if r > best_r {
                best_r = r;
            }
        }
        if best_r < VOICING_THRESHOLD {
            out.push(None);
            start += hop;
            continue;
        }
        // earliest lag close to the global peak avoids octave-down errors
        let mut lag = lag_min;
        for l in lag_min..=lag_max {
            if r_at[l] >= best_r - 0.01 {
                lag = l;
                break;
            }
        }
        let refined = if lag > lag_min && lag < lag_max {
            let (ym, y0, yp) = (r_at[lag - 1], r_at[lag], r_at[lag + 1]);
            let denom = ym - 2.0 * y0 + yp;
            if denom.abs() > 1e-12 {
                lag as f64 + 0.5 * (ym - yp) / denom
            } else {
                lag as f64
            }
        } else {
            lag as f64
        };
        out.push(Some(sr / refined));
        start += hop;
    }
    out
}

/// Root-mean-square f0 error in Hz over frames where both signals are
/// voiced; `None` when no frame is co-voiced.
pub fn rmse_f0(reference: &AudioBuffer, candidate: &AudioBuffer) -> Result<Option<f64>> {
    if reference.sample_rate != candidate.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "sample rate mismatch: {} vs {}",
            reference.sample_rate, candidate.sample_rate
        )));
    }
    let fr = track_f0(reference);
    let fc = track_f0(candidate);
    let mut acc = 0.0;
    let mut count = 0usize;
    for (a, b) in fr.iter().zip(&fc) {
        if let (Some(fa), Some(fb)) = (a, b) {
            acc += (fa - fb) * (fa - fb);
            count += 1;
        }
    }
    Ok(if count == 0 {
        None
    } else {
        Some((acc / count as f64).sqrt())
    })
}

// ---------------------------------------------------------------------------
// Fréchet distance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FrechetResult {
    pub value: f64,
    /// Set when the covariance product needed an epsilon*I bump.
    pub regularized: bool,
}

fn mean_and_cov(x: &Array2<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (n, d) = x.dim();
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    let mut cov = DMatrix::zeros(d, d);
    for r in 0..n {
        for i in 0..d {
            let vi = x[(r, i)] - mean[i];
            for j in i..d {
                cov[(i, j)] += vi * (x[(r, j)] - mean[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[(i, j)] /= denom;
            cov[(j, i)] = cov[(i, j)];
        }
    }
    (mean, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    for ev in eig.eigenvalues.iter() {
        if !ev.is_finite() || *ev < -1e-8 * max_ev.max(1.0) {
            return None;
        }
    }
    let d = m.nrows();
    let mut sqrt_diag = DMatrix::zeros(d, d);
    for i in 0..d {
        sqrt_diag[(i, i)] = eig.eigenvalues[i].max(0.0).sqrt();
    }
    Some(&eig.eigenvectors * sqrt_diag * eig.eigenvectors.transpose())
}

fn frechet_from_stats(
    mu_a: &[f64],
    cov_a: &DMatrix<f64>,
    mu_b: &[f64],
    cov_b: &DMatrix<f64>,
) -> Option<f64> {
    let a_sqrt = sym_sqrt(cov_a)?;
    // tr((Sa Sb)^(1/2)) = tr((Sa^(1/2) Sb Sa^(1/2))^(1/2)), symmetric PSD
    let inner = &a_sqrt * cov_b * &a_sqrt;
    let inner_sym = (&inner + inner.transpose()) * 0.5;
    let eig = inner_sym.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    for ev in eig.eigenvalues.iter() {
        if !ev.is_finite() || *ev < -1e-8 * max_ev.max(1.0) {
            return None;
        }
    }
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|ev| ev.max(0.0).sqrt()).sum();
    let mean_d2: f64 = mu_a
        .iter()
        .zip(mu_b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let v = mean_d2 + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    v.is_finite().then_some(v)
}

/// Squared Fréchet distance between two Gaussian fits of embedding sets
/// (rows are embeddings). Falls back to epsilon-regularized covariances
/// when the matrix square root degenerates, and flags that in the result.
pub fn frechet_distance(set_a: &Array2<f64>, set_b: &Array2<f64>) -> Result<FrechetResult> {
    if set_a.nrows() < 2 || set_b.nrows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 embeddings per set, got {} and {}",
            set_a.nrows(),
            set_b.nrows()
        )));
    }
    if set_a.ncols() != set_b.ncols() {
        return Err(Error::InvalidArgument(format!(
            "embedding dims differ: {} vs {}",
            set_a.ncols(),
            set_b.ncols()
        )));
    }
    let (mu_a, cov_a) = mean_and_cov(set_a);
    let (mu_b, cov_b) = mean_and_cov(set_b);
    if let Some(v) = frechet_from_stats(&mu_a, &cov_a, &mu_b, &cov_b) {
        return Ok(FrechetResult {
            value: v.max(0.0),
            regularized: false,
        });
    }
    let eps = 1e-6;
    let d = cov_a.nrows();
    let bump = DMatrix::identity(d, d) * eps;
    let v = frechet_from_stats(&mu_a, &(&cov_a + &bump), &mu_b, &(&cov_b + &bump))
        .ok_or_else(|| Error::InvalidArgument("covariance square root diverged".into()))?;
    Ok(FrechetResult {
        value: v.max(0.0),
        regularized: true,
    })
}

/// Default pluggable embedding: per-window mean and standard deviation of
/// each log-mel band (window ~1 s, hop ~0.5 s), giving a (windows, 160)
/// matrix. A distribution proxy, not the published deep embedding; values
/// are comparable only within this codebase.
pub fn default_embeddings(x: &AudioBuffer) -> Result<Array2<f64>> {
    let analyzer = MelAnalyzer::global();
    let mel = analyzer.mel(&x.samples);
    let t = mel.ncols();
    let win = 86.min(t);
    let hop = (win / 2).max(1);
    let mut rows = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + win).min(t);
        let mut row = Vec::with_capacity(2 * N_MELS);
        for m in 0..N_MELS {
            let seg: Vec<f64> = (start..end).map(|c| mel[(m, c)]).collect();
            let mean = seg.iter().sum::<f64>() / seg.len() as f64;
            let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / seg.len() as f64;
            row.push(mean);
            row.push(var.sqrt());
        }
        rows.push(row);
        if end == t {
            break;
        }
        start += hop;
    }
    let n = rows.len();
    Ok(Array2::from_shape_vec(
        (n, 2 * N_MELS),
        rows.into_iter().flatten().collect(),
    )
    .unwrap())
}

// ---------------------------------------------------------------------------
// Mel difference map
// ---------------------------------------------------------------------------

pub struct MelDifference {
    pub map: Array2<f64>,
    /// Mean absolute value; identical to the mel reconstruction loss.
    pub mean: f64,
}

/// Pixel-wise |mel(ref) - mel(cand)|, optionally rendered as a heat map.
pub fn mel_difference_map(
    reference: &AudioBuffer,
    candidate: &AudioBuffer,
    image_path: Option<&Path>,
) -> Result<MelDifference> {
    if reference.len() != candidate.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            reference.len(),
            candidate.len()
        )));
    }
    let analyzer = MelAnalyzer::global();
    let mr = analyzer.mel(&reference.samples);
    let mc = analyzer.mel(&candidate.samples);
    let mean = mean_abs_diff(mr.as_slice().unwrap(), mc.as_slice().unwrap());
    let map = Array2::from_shape_fn(mr.dim(), |(i, j)| (mr[(i, j)] - mc[(i, j)]).abs());
    if let Some(path) = image_path {
        plot::save_heatmap(&map, path)?;
    }
    Ok(MelDifference { map, mean })
}

// ---------------------------------------------------------------------------
// Aggregated metric report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct UtteranceMetrics {
    pub name: String,
    pub mcd13: f64,
    /// Hz; absent when no frame is co-voiced.
    pub rmse_f0_hz: Option<f64>,
    pub mel_l1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub mcd13: f64,
    /// Mean over utterances with a defined value; Hz.
    pub rmse_f0_hz: Option<f64>,
    pub frechet: f64,
    pub frechet_regularized: bool,
    pub per_utterance: Vec<UtteranceMetrics>,
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,mcd13,rmse_f0_hz,mel_l1\n");
        for u in &self.per_utterance {
            out.push_str(&format!(
                "{},{},{},{}\n",
                u.name,
                u.mcd13,
                u.rmse_f0_hz.map(|v| v.to_string()).unwrap_or_else(|| "undefined".into()),
                u.mel_l1
            ));
        }
        out.push_str(&format!(
            "aggregate,{},{},{}\n",
            self.mcd13,
            self.rmse_f0_hz
                .map(|v| v.to_string())
                .unwrap_or_else(|| "undefined".into()),
            self.frechet
        ));
        out
    }

    pub fn all_finite(&self) -> bool {
        self.mcd13.is_finite()
            && self.frechet.is_finite()
            && self.rmse_f0_hz.map(|v| v.is_finite()).unwrap_or(true)
            && self.per_utterance.iter().all(|u| {
                u.mcd13.is_finite()
                    && u.mel_l1.is_finite()
                    && u.rmse_f0_hz.map(|v| v.is_finite()).unwrap_or(true)
            })
    }
}

/// Evaluate aligned (reference, candidate) pairs.
pub fn evaluate_pairs(pairs: &[(String, AudioBuffer, AudioBuffer)]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no pairs to evaluate".into()));
    }
    let mut per = Vec::with_capacity(pairs.len());
    let mut emb_ref = Vec::new();
    let mut emb_cand = Vec::new();
    for (name, r, c) in pairs {
        let mcd = mcd13(r, c)?;
        let rmse = rmse_f0(r, c)?;
        let mel_l1 = objectives::mel_loss(&r.samples, &c.samples)?;
        per.push(UtteranceMetrics {
            name: name.clone(),
            mcd13: mcd,
            rmse_f0_hz: rmse,
            mel_l1,
        });
        emb_ref.push(default_embeddings(r)?);
        emb_cand.push(default_embeddings(c)?);
    }
    let stack = |mats: &[Array2<f64>]| -> Array2<f64> {
        let d = mats[0].ncols();
        let n: usize = mats.iter().map(|m| m.nrows()).sum();
        let mut out = Array2::zeros((n, d));
        let mut row = 0;
        for m in mats {
            for r in m.rows() {
                out.row_mut(row).assign(&r);
                row += 1;
            }
        }
        out
    };
    let fre = frechet_distance(&stack(&emb_ref), &stack(&emb_cand))?;
    let mcd_mean = per.iter().map(|u| u.mcd13).sum::<f64>() / per.len() as f64;
    let defined: Vec<f64> = per.iter().filter_map(|u| u.rmse_f0_hz).collect();
    let rmse_mean = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    Ok(MetricReport {
        mcd13: mcd_mean,
        rmse_f0_hz: rmse_mean,
        frechet: fre.value,
        frechet_regularized: fre.regularized,
        per_utterance: per,
    })
}

// ---------------------------------------------------------------------------
// Synthesis speed
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SpeedReport {
    pub samples_per_second: f64,
    /// samples_per_second / 22050, derived once so the identity is exact.
    pub real_time_factor: f64,
    pub device: String,
    pub repetitions: usize,
    pub total_samples: usize,
}

/// Median synthesis throughput over `reps` full passes of the mel set
/// (after one warm-up pass).
pub fn bench_synthesis(
    gen: &Generator,
    mels: &[Array2<f64>],
    device: &str,
    reps: usize,
) -> Result<SpeedReport> {
    if mels.is_empty() {
        return Err(Error::InvalidArgument("empty benchmark mel set".into()));
    }
    let reps = reps.max(5);
    let mut total_samples = 0usize;
    for m in mels {
        total_samples += m.ncols() * 256;
    }
    for m in mels {
        gen.generate(m)?;
    }
    let mut rates = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        for m in mels {
            gen.generate(m)?;
        }
        let dt = t0.elapsed().as_secs_f64();
        rates.push(total_samples as f64 / dt);
    }
    rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let sps = rates[rates.len() / 2];
    Ok(SpeedReport {
        samples_per_second: sps,
        real_time_factor: sps / 22050.0,
        device: device.to_string(),
        repetitions: reps,
        total_samples,
    })
}
