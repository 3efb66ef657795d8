//! Lossless 1-D Daubechies1 (Haar) analysis/synthesis, multi-level
//! decomposition, and the average-pooling baseline it replaces.
//!
//! Analysis filters are the orthonormal pair g = [1/sqrt2, 1/sqrt2],
//! h = [1/sqrt2, -1/sqrt2] applied to non-overlapping sample pairs, so
//! energy is conserved exactly and a signal splits into half-rate low
//! and high sub-bands without information loss. Average pooling by 2
//! is the aliasing-prone baseline: it annihilates content near the
//! original Nyquist frequency instead of moving it to the high band.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{self, SignalKind};

const SQRT1_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// One analysis split: half-rate low and high sub-bands.
///
/// `orig_len` remembers the pre-padding input length so the inverse can
/// truncate back to it.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPair {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub orig_len: usize,
}

/// Full decomposition tree: level 0 is the (padded) input, level m holds
/// 2^m sub-bands of length `len / 2^m` in recursive low-first order.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid {
    pub levels: Vec<Vec<Vec<f64>>>,
    pub orig_len: usize,
}

impl WaveletPyramid {
    /// Total sample count of one level (equal across levels).
    pub fn level_samples(&self, m: usize) -> usize {
        self.levels[m].iter().map(|b| b.len()).sum()
    }

    /// Per-sub-band energies of one level.
    pub fn band_energies(&self, m: usize) -> Vec<f64> {
        self.levels[m]
            .iter()
            .map(|b| b.iter().map(|x| x * x).sum())
            .collect()
    }
}

/// Low-level pair split on raw slices; zero-pads odd lengths.
pub fn haar_split(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let lh = x.len().div_ceil(2);
    let mut low = Vec::with_capacity(lh);
    let mut high = Vec::with_capacity(lh);
    for n in 0..lh {
        let a = x[2 * n];
        let b = if 2 * n + 1 < x.len() { x[2 * n + 1] } else { 0.0 };
        low.push((a + b) * SQRT1_2);
        high.push((a - b) * SQRT1_2);
    }
    (low, high)
}

/// Inverse of `haar_split` for equal-length sub-bands.
pub fn haar_merge(low: &[f64], high: &[f64]) -> Vec<f64> {
    debug_assert_eq!(low.len(), high.len());
    let mut out = Vec::with_capacity(low.len() * 2);
    for (l, h) in low.iter().zip(high) {
        out.push((l + h) * SQRT1_2);
        out.push((l - h) * SQRT1_2);
    }
    out
}

/// Single-level Haar analysis. Odd inputs are right-padded with one zero;
/// the recorded original length lets `idwt_haar` undo this.
pub fn dwt_haar(x: &[f64]) -> Result<WaveletPair> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("dwt of empty input".into()));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument(
            "dwt needs at least 2 samples".into(),
        ));
    }
    let (low, high) = haar_split(x);
    Ok(WaveletPair {
        low,
        high,
        orig_len: x.len(),
    })
}

/// Synthesis back to the original samples (exact up to roundoff for even
/// lengths; odd inputs reconstruct their retained prefix).
pub fn idwt_haar(p: &WaveletPair) -> Result<Vec<f64>> {
    if p.low.len() != p.high.len() {
        return Err(Error::InvalidArgument(format!(
            "sub-band length mismatch: low {} vs high {}",
            p.low.len(),
            p.high.len()
        )));
    }
    let mut out = haar_merge(&p.low, &p.high);
    out.truncate(p.orig_len);
    Ok(out)
}

/// Repeated channel-wise decomposition into a full sub-band tree.
///
/// The input is right-padded with zeros to a multiple of `2^m`; sub-bands
/// are ordered recursively low-first so the layout is deterministic.
pub fn dwt_multilevel(x: &[f64], m: usize) -> Result<WaveletPyramid> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("dwt of empty input".into()));
    }
    let block = 1usize << m;
    if m > 0 && x.len() < block {
        return Err(Error::InvalidArgument(format!(
            "input of {} samples is too short for {m} levels",
            x.len()
        )));
    }
    let padded_len = x.len().div_ceil(block) * block;
    let mut base = x.to_vec();
    base.resize(padded_len, 0.0);
    let mut levels = vec![vec![base]];
    for _ in 0..m {
        let prev = levels.last().unwrap();
        let mut next = Vec::with_capacity(prev.len() * 2);
        for band in prev {
            let (low, high) = haar_split(band);
            next.push(low);
            next.push(high);
        }
        levels.push(next);
    }
    Ok(WaveletPyramid {
        levels,
        orig_len: x.len(),
    })
}

/// Blockwise mean downsampling: output[n] = mean(x[n*f .. (n+1)*f]).
pub fn avg_pool_downsample(x: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor == 0 {
        return Err(Error::InvalidArgument(
            "average pooling factor must be positive".into(),
        ));
    }
    if x.len() < factor {
        return Err(Error::InvalidArgument(format!(
            "input of {} samples shorter than pooling factor {factor}",
            x.len()
        )));
    }
    Ok(x.chunks_exact(factor)
        .map(|c| c.iter().sum::<f64>() / factor as f64)
        .collect())
}

/// Energy summary of the chirp downsampling comparison (the low-pass
/// baseline aliases, the wavelet split conserves).
#[derive(Debug, Clone, Serialize)]
pub struct ChirpReport {
    pub sample_rate: u32,
    pub duration: f64,
    pub f0: f64,
    pub f1: f64,
    pub input_energy: f64,
    pub dwt_low_energy: f64,
    pub dwt_high_energy: f64,
    /// The high band's energy share within the late segment where the
    /// chirp exceeds the downsampled Nyquist.
    pub dwt_high_late_share: f64,
    pub avg_pool_energy: f64,
    pub avg_pool_retained_fraction: f64,
    /// Dominant frequency of the pooled signal over the final second; if
    /// it sits below the pre-pooling instantaneous frequency minus the
    /// fold, the content aliased.
    pub avg_pool_late_dominant_hz: f64,
    pub images: Vec<String>,
}

/// Build the up-chirp, downsample it both ways, and write energy tables
/// plus spectrogram panels for side-by-side comparison.
pub fn chirp_demo(
    duration: f64,
    f0: f64,
    f1: f64,
    sample_rate: u32,
    out_dir: impl AsRef<Path>,
) -> Result<ChirpReport> {
    let nyquist = sample_rate as f64 / 2.0;
    if f1 > nyquist || f0 > nyquist {
        return Err(Error::InvalidArgument(format!(
            "chirp endpoint above Nyquist {nyquist} Hz"
        )));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let x = spectral::make_signal(&SignalKind::Chirp { f0, f1, amp: 1.0 }, duration, sample_rate)?;
    let n = x.len();
    let even = n & !1usize;
    let input_energy = x.energy();
    let pair = dwt_haar(&x.samples[..even.max(2)])?;
    let low_e: f64 = pair.low.iter().map(|v| v * v).sum();
    let high_e: f64 = pair.high.iter().map(|v| v * v).sum();
    let pooled = avg_pool_downsample(&x.samples, 2)?;
    let pooled_e: f64 = pooled.iter().map(|v| v * v).sum();

    // Late-time analysis: the chirp crosses the downsampled Nyquist
    // (sample_rate/4) at t_cut; past that, a faithful split must hold the
    // energy in the high band.
    let half_ny = sample_rate as f64 / 4.0;
    let t_cut = if f1 > f0 && f1 > half_ny {
        duration * (half_ny - f0).max(0.0) / (f1 - f0)
    } else {
        duration
    };
    let cut_idx = ((t_cut / duration) * pair.high.len() as f64) as usize;
    let late_high: f64 = pair.high[cut_idx.min(pair.high.len())..]
        .iter()
        .map(|v| v * v)
        .sum();
    let late_low: f64 = pair.low[cut_idx.min(pair.low.len())..]
        .iter()
        .map(|v| v * v)
        .sum();
    let dwt_high_late_share = if late_high + late_low > 0.0 {
        late_high / (late_high + late_low)
    } else {
        0.0
    };

    let avg_pool_late_dominant_hz = dominant_frequency_tail(&pooled, sample_rate / 2, 1.0);

    // spectrogram panels
    let fft = (sample_rate as usize / 4).next_power_of_two().clamp(64, 1024);
    let panels = [
        ("chirp_input.png", spectral::spectrogram(&x.samples, fft, fft / 4)),
        ("chirp_avg_pool.png", spectral::spectrogram(&pooled, fft / 2, fft / 8)),
        ("chirp_dwt_low.png", spectral::spectrogram(&pair.low, fft / 2, fft / 8)),
        ("chirp_dwt_high.png", spectral::spectrogram(&pair.high, fft / 2, fft / 8)),
    ];
    let mut images = Vec::new();
    for (name, spec) in panels {
        let path = out_dir.join(name);
        let shown = spec.mapv(|v| (1.0 + v).ln());
        crate::plot::save_heatmap(&shown, &path)?;
        images.push(path.to_string_lossy().into_owned());
    }

    let report = ChirpReport {
        sample_rate,
        duration,
        f0,
        f1,
        input_energy,
        dwt_low_energy: low_e,
        dwt_high_energy: high_e,
        dwt_high_late_share,
        avg_pool_energy: pooled_e,
        avg_pool_retained_fraction: if input_energy > 0.0 {
            pooled_e / input_energy
        } else {
            0.0
        },
        avg_pool_late_dominant_hz,
        images,
    };
    let json = serde_json::to_vec_pretty(&report)?;
    spectral::write_atomic(out_dir.join("chirp_report.json"), &json)?;
    Ok(report)
}

/// Dominant frequency (spectrogram argmax) over the last `tail_seconds`.
fn dominant_frequency_tail(x: &[f64], sample_rate: u32, tail_seconds: f64) -> f64 {
    let tail = ((tail_seconds * sample_rate as f64) as usize).min(x.len());
    if tail < 64 {
        return 0.0;
    }
    let seg = &x[x.len() - tail..];
    let n_fft = 128.min(tail.next_power_of_two() / 2).max(64);
    let spec = spectral::spectrogram(seg, n_fft, n_fft / 2);
    if spec.ncols() == 0 {
        return 0.0;
    }
    let mut best = (0usize, 0.0f64);
    for k in 0..spec.nrows() {
        let e: f64 = spec.row(k).iter().map(|v| v * v).sum();
        if e > best.1 {
            best = (k, e);
        }
    }
    best.0 as f64 * sample_rate as f64 / n_fft as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent reconstruction oracle: classic synthesis path that
    /// upsamples each sub-band by two and convolves with the synthesis
    /// filters, summing the results. Deliberately distinct from
    /// `idwt_haar`'s in-place pair formula.
    fn synthesis_filter_oracle(low: &[f64], high: &[f64]) -> Vec<f64> {
        let g = [SQRT1_2, SQRT1_2];
        let h = [SQRT1_2, -SQRT1_2];
        let n = low.len() * 2;
        let mut up_low = vec![0.0; n];
        let mut up_high = vec![0.0; n];
        for (i, (&l, &hi)) in low.iter().zip(high).enumerate() {
            up_low[2 * i] = l;
            up_high[2 * i] = hi;
        }
        let mut out = vec![0.0; n];
        for (t, o) in out.iter_mut().enumerate() {
            for (k, (&gk, &hk)) in g.iter().zip(&h).enumerate() {
                if t >= k {
                    *o += gk * up_low[t - k] + hk * up_high[t - k];
                }
            }
        }
        out
    }

    #[test]
    fn constant_signal_is_pure_low_band() {
        let p = dwt_haar(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        let s2 = std::f64::consts::SQRT_2;
        for (l, h) in p.low.iter().zip(&p.high) {
            assert!((l - s2).abs() < 1e-12);
            assert!(h.abs() < 1e-12);
        }
    }

    #[test]
    fn nyquist_alternation_is_pure_high_band() {
        let p = dwt_haar(&[1.0, -1.0, 1.0, -1.0]).unwrap();
        let s2 = std::f64::consts::SQRT_2;
        for (l, h) in p.low.iter().zip(&p.high) {
            assert!(l.abs() < 1e-12);
            assert!((h - s2).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_input_rejected() {
        assert!(dwt_haar(&[]).is_err());
        assert!(dwt_haar(&[1.0]).is_err());
    }

    #[test]
    fn random_signal_matches_synthesis_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = dwt_haar(&x).unwrap();
        let rec = synthesis_filter_oracle(&p.low, &p.high);
        for (a, b) in x.iter().zip(&rec) {
            assert!((a - b).abs() < 1e-6);
        }
        let rec2 = idwt_haar(&p).unwrap();
        for (a, b) in x.iter().zip(&rec2) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn inverse_trivial_cases() {
        let s2 = std::f64::consts::SQRT_2;
        let p = WaveletPair {
            low: vec![s2, s2],
            high: vec![0.0, 0.0],
            orig_len: 4,
        };
        let x = idwt_haar(&p).unwrap();
        for v in &x {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let p = WaveletPair {
            low: vec![0.0],
            high: vec![s2],
            orig_len: 2,
        };
        let x = idwt_haar(&p).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_subband_lengths_rejected() {
        let p = WaveletPair {
            low: vec![1.0, 2.0],
            high: vec![0.0],
            orig_len: 4,
        };
        assert!(idwt_haar(&p).is_err());
    }

    #[test]
    fn odd_length_round_trip_preserves_prefix() {
        let x = [0.3, -0.5, 0.7, 0.1, -0.2];
        let p = dwt_haar(&x).unwrap();
        assert_eq!(p.low.len(), 3);
        let rec = idwt_haar(&p).unwrap();
        assert_eq!(rec.len(), 5);
        for (a, b) in x.iter().zip(&rec) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn many_random_round_trips_and_energy_conservation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let len = 2 * rng.gen_range(1..=128usize);
            let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = dwt_haar(&x).unwrap();
            let rec = idwt_haar(&p).unwrap();
            let max_err = x
                .iter()
                .zip(&rec)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_err < 1e-6);
            let e_in: f64 = x.iter().map(|v| v * v).sum();
            let e_out: f64 =
                p.low.iter().map(|v| v * v).sum::<f64>() + p.high.iter().map(|v| v * v).sum::<f64>();
            assert!((e_in - e_out).abs() <= 1e-6 * e_in.max(1e-12));
        }
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (1.7, -0.4);
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| a * xi + b * yi).collect();
        let pm = dwt_haar(&mixed).unwrap();
        let px = dwt_haar(&x).unwrap();
        let py = dwt_haar(&y).unwrap();
        for i in 0..pm.low.len() {
            assert!((pm.low[i] - (a * px.low[i] + b * py.low[i])).abs() < 1e-9);
            assert!((pm.high[i] - (a * px.high[i] + b * py.high[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn pyramid_level_zero_is_input() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let p = dwt_multilevel(&x, 0).unwrap();
        assert_eq!(p.levels.len(), 1);
        assert_eq!(p.levels[0][0], x.to_vec());
    }

    #[test]
    fn pyramid_single_level_matches_dwt() {
        let x = [1.0, 1.0, 1.0, 1.0];
        let p = dwt_multilevel(&x, 1).unwrap();
        let pair = dwt_haar(&x).unwrap();
        assert_eq!(p.levels[1][0], pair.low);
        assert_eq!(p.levels[1][1], pair.high);
    }

    #[test]
    fn pyramid_conserves_sample_count_and_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = dwt_multilevel(&x, 3).unwrap();
        let e_in: f64 = x.iter().map(|v| v * v).sum();
        for m in 0..=3 {
            assert_eq!(p.level_samples(m), 256);
            assert_eq!(p.levels[m].len(), 1 << m);
            for band in &p.levels[m] {
                assert_eq!(band.len(), 256 >> m);
            }
            let e: f64 = p.band_energies(m).iter().sum();
            assert!((e - e_in).abs() < 1e-9 * e_in);
        }
    }

    #[test]
    fn pyramid_too_short_rejected() {
        assert!(dwt_multilevel(&[1.0, 2.0], 3).is_err());
    }

    #[test]
    fn chirp_level2_band_partition_matches_stft_oracle() {
        // 256-sample up-chirp toward Nyquist; level-2 bands nominally cover
        // quarters of [0, sr/2]. The Haar tree is leaky, so the oracle
        // comparison checks ordering and gross placement, not tight values.
        let sr = 320u32;
        let x = spectral::make_signal(
            &SignalKind::Chirp {
                f0: 0.0,
                f1: 150.0,
                amp: 1.0,
            },
            0.8,
            sr,
        )
        .unwrap();
        assert_eq!(x.len(), 256);
        let p = dwt_multilevel(&x.samples, 2).unwrap();
        let e = p.band_energies(2);
        let total: f64 = e.iter().sum();

        // STFT band-energy oracle with the same nominal cutoffs
        let spec = spectral::spectrogram(&x.samples, 64, 16);
        let mut stft_bands = [0.0f64; 4];
        for k in 0..spec.nrows() {
            let f = k as f64 * sr as f64 / 64.0;
            let band = ((f / (sr as f64 / 8.0)) as usize).min(3);
            let e_k: f64 = spec.row(k).iter().map(|v| v * v).sum();
            stft_bands[band] += e_k;
        }
        let stft_total: f64 = stft_bands.iter().sum();

        // the chirp spends 3/4 of its sweep above sr/8, so the upper
        // three bands dominate in both views
        let dwt_upper = (e[1] + e[2] + e[3]) / total;
        let stft_upper = (stft_bands[1] + stft_bands[2] + stft_bands[3]) / stft_total;
        assert!(dwt_upper > 0.5, "dwt upper share {dwt_upper}");
        assert!(stft_upper > 0.5, "stft upper share {stft_upper}");
        assert!((dwt_upper - stft_upper).abs() < 0.25);
        assert!((total - x.energy()).abs() < 1e-6 * x.energy());
    }

    #[test]
    fn avg_pool_arithmetic() {
        assert_eq!(
            avg_pool_downsample(&[2.0, 4.0, 6.0, 8.0], 2).unwrap(),
            vec![3.0, 7.0]
        );
        let out = avg_pool_downsample(&[1.0, -1.0, 1.0, -1.0], 2).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
        assert!(avg_pool_downsample(&[1.0], 2).is_err());
        assert!(avg_pool_downsample(&[1.0, 2.0], 0).is_err());
    }

    #[test]
    fn near_nyquist_tone_contrast() {
        let sr = 22050;
        let x = spectral::make_signal(
            &SignalKind::Sine {
                freq: 0.49 * sr as f64,
                amp: 1.0,
                phase: 0.3,
            },
            0.5,
            sr,
        )
        .unwrap();
        let e_in = x.energy();
        let pooled = avg_pool_downsample(&x.samples, 2).unwrap();
        let e_pool: f64 = pooled.iter().map(|v| v * v).sum();
        let p = dwt_haar(&x.samples[..x.len() & !1]).unwrap();
        let e_high: f64 = p.high.iter().map(|v| v * v).sum();
        let e_dwt: f64 = e_high + p.low.iter().map(|v| v * v).sum::<f64>();
        assert!(e_pool < 0.05 * e_in, "pooled fraction {}", e_pool / e_in);
        assert!(e_high > 0.90 * e_in, "high fraction {}", e_high / e_in);
        assert!(e_dwt >= 0.99 * e_in);
        assert!(e_pool < e_dwt);
    }
}
