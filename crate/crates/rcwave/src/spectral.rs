//! STFT/mel front-end, waveform I/O, and test-signal generators.
//!
//! The log-mel transform is the fixed analysis function used everywhere:
//! 1024-point Hann STFT with hop 256, an 80-band Slaney-style mel
//! filterbank over 0..11025 Hz, and a 1e-5 floor before the natural log.
//! These choices are frozen; losses and metrics are only comparable
//! under a single definition.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use ndarray::{Array2, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Dataset sample rate; all training audio is validated against it.
pub const SAMPLE_RATE: u32 = 22050;
/// STFT window and transform size.
pub const N_FFT: usize = 1024;
/// STFT hop; equals the generator's total upsampling factor.
pub const HOP: usize = 256;
/// Mel bands.
pub const N_MELS: usize = 80;
/// Floor applied before the log.
pub const LOG_FLOOR: f64 = 1e-5;
/// Epsilon inside the magnitude sqrt, keeping it differentiable at zero.
const MAG_EPS: f64 = 1e-9;

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        AudioBuffer {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }
}

/// 80 x T log-mel matrix; rows are mel bands, columns are frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f64>,
    pub frame_hop: usize,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.ncols()
    }
}

/// Saved forward-pass state for the mel backward pass.
pub struct MelCtx {
    input_len: usize,
    n_frames: usize,
    /// Flattened (frame, bin) half-spectra.
    spectra: Vec<Complex<f64>>,
    /// Mel values before the floor clamp, (n_mels, n_frames).
    mel_pre: Array2<f64>,
}

impl std::fmt::Debug for MelCtx {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MelCtx(len={}, frames={})", self.input_len, self.n_frames)
    }
}

/// Precomputed window, filterbank, and FFT plans for the fixed mel config.
pub struct MelAnalyzer {
    window: Vec<f64>,
    /// (n_mels, n_bins) triangle filterbank.
    filterbank: Array2<f64>,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
    n_bins: usize,
}

static GLOBAL_ANALYZER: OnceLock<MelAnalyzer> = OnceLock::new();

impl MelAnalyzer {
    fn new() -> Self {
        let mut planner = FftPlanner::new();
        let fft_fwd = planner.plan_fft_forward(N_FFT);
        let fft_inv = planner.plan_fft_inverse(N_FFT);
        // periodic Hann
        let window: Vec<f64> = (0..N_FFT)
            .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / N_FFT as f64).cos()))
            .collect();
        MelAnalyzer {
            window,
            filterbank: mel_filterbank(N_MELS, N_FFT, SAMPLE_RATE as f64, 0.0, 11025.0),
            fft_fwd,
            fft_inv,
            n_bins: N_FFT / 2 + 1,
        }
    }

    pub fn global() -> &'static MelAnalyzer {
        GLOBAL_ANALYZER.get_or_init(MelAnalyzer::new)
    }

    pub fn filterbank(&self) -> &Array2<f64> {
        &self.filterbank
    }

    /// ceil(len / hop): frame count of the padded analysis.
    pub fn num_frames(&self, len: usize) -> usize {
        len.div_ceil(HOP)
    }

    /// Log-mel values only.
    pub fn mel(&self, samples: &[f64]) -> Array2<f64> {
        self.mel_with_ctx(samples).0
    }

    /// Log-mel values plus the state required for the adjoint pass.
    pub fn mel_with_ctx(&self, samples: &[f64]) -> (Array2<f64>, MelCtx) {
        let len = samples.len();
        assert!(
            len >= N_FFT,
            "mel input must be at least {N_FFT} samples, got {len}"
        );
        let pad = N_FFT / 2;
        let padded = reflect_pad(samples, pad);
        let n_frames = self.num_frames(len);
        let mut spectra = Vec::with_capacity(n_frames * self.n_bins);
        let mut mag = Array2::<f64>::zeros((self.n_bins, n_frames));
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        for t in 0..n_frames {
            let frame = &padded[t * HOP..t * HOP + N_FFT];
            for (b, (x, w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *b = Complex::new(x * w, 0.0);
            }
            self.fft_fwd.process(&mut buf);
            for k in 0..self.n_bins {
                let c = buf[k];
                spectra.push(c);
                mag[(k, t)] = (c.re * c.re + c.im * c.im + MAG_EPS).sqrt();
            }
        }
        let mel_pre = self.filterbank.dot(&mag);
        let values = mel_pre.mapv(|v| v.max(LOG_FLOOR).ln());
        (
            values,
            MelCtx {
                input_len: len,
                n_frames,
                spectra,
                mel_pre,
            },
        )
    }

    /// Adjoint of `mel_with_ctx`: maps d(log-mel) to d(waveform), added
    /// into `dx`.
    pub fn mel_backward(&self, ctx: &MelCtx, d_values: &ArrayD<f64>, dx: &mut [f64]) {
        let n_frames = ctx.n_frames;
        let len = ctx.input_len;
        let pad = N_FFT / 2;
        assert_eq!(d_values.len(), N_MELS * n_frames);
        assert_eq!(dx.len(), len);
        let dv = d_values.as_slice().unwrap();
        // d mel_pre: gradient passes where the floor did not clamp
        let mut d_mel = Array2::<f64>::zeros((N_MELS, n_frames));
        for m in 0..N_MELS {
            for t in 0..n_frames {
                let pre = ctx.mel_pre[(m, t)];
                if pre >= LOG_FLOOR {
                    d_mel[(m, t)] = dv[m * n_frames + t] / pre;
                }
            }
        }
        // d magnitude = FB^T . d mel_pre
        let d_mag = self.filterbank.t().dot(&d_mel); // (n_bins, n_frames)
        let mut d_padded = vec![0.0; len + 2 * pad];
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        for t in 0..n_frames {
            for b in buf.iter_mut() {
                *b = Complex::new(0.0, 0.0);
            }
            for k in 0..self.n_bins {
                let c = ctx.spectra[t * self.n_bins + k];
                let mag = (c.re * c.re + c.im * c.im + MAG_EPS).sqrt();
                let dm = d_mag[(k, t)] / mag;
                buf[k] = Complex::new(c.re * dm, c.im * dm);
            }
            // unnormalized inverse = adjoint of the forward DFT restricted
            // to the kept half-spectrum
            self.fft_inv.process(&mut buf);
            let dst = &mut d_padded[t * HOP..t * HOP + N_FFT];
            for ((d, b), w) in dst.iter_mut().zip(&buf).zip(&self.window) {
                *d += b.re * w;
            }
        }
        // fold the reflect padding back into the interior
        for (i, v) in d_padded[pad..pad + len].iter().enumerate() {
            dx[i] += v;
        }
        for j in 0..pad {
            dx[pad - j] += d_padded[j];
        }
        for j in 0..pad {
            let idx = len + pad + j;
            dx[len - 2 - j] += d_padded[idx];
        }
    }
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    assert!(pad < n, "reflect pad requires input longer than the pad");
    let mut out = Vec::with_capacity(n + 2 * pad);
    for j in 0..pad {
        out.push(x[pad - j]);
    }
    out.extend_from_slice(x);
    for j in 0..pad {
        out.push(x[n - 2 - j]);
    }
    out
}

/// Slaney-scale Hz/mel conversions.
pub fn hz_to_mel(f: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if f >= min_log_hz {
        min_log_mel + (f / min_log_hz).ln() / logstep
    } else {
        f / f_sp
    }
}

pub fn mel_to_hz(m: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_mel = 15.0;
    let logstep = 6.4f64.ln() / 27.0;
    if m >= min_log_mel {
        1000.0 * ((m - min_log_mel) * logstep).exp()
    } else {
        f_sp * m
    }
}

/// Triangular mel filterbank with Slaney area normalization.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sr: f64, f_min: f64, f_max: f64) -> Array2<f64> {
    let n_bins = n_fft / 2 + 1;
    let mel_min = hz_to_mel(f_min);
    let mel_max = hz_to_mel(f_max);
    let f_pts: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_min + (mel_max - mel_min) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::<f64>::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, mid, hi) = (f_pts[m], f_pts[m + 1], f_pts[m + 2]);
        let enorm = 2.0 / (hi - lo);
        for k in 0..n_bins {
            let f = k as f64 * sr / n_fft as f64;
            let up = (f - lo) / (mid - lo);
            let down = (hi - f) / (hi - mid);
            let w = up.min(down).max(0.0);
            fb[(m, k)] = w * enorm;
        }
    }
    fb
}

/// Response of each mel filter at a single frequency, from the same
/// triangle construction. Useful as a closed-form oracle in tests.
pub fn filter_response_at(freq: f64) -> Vec<f64> {
    let n_mels = N_MELS;
    let mel_min = hz_to_mel(0.0);
    let mel_max = hz_to_mel(11025.0);
    let f_pts: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_min + (mel_max - mel_min) * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (f_pts[m], f_pts[m + 1], f_pts[m + 2]);
            let enorm = 2.0 / (hi - lo);
            let up = (freq - lo) / (mid - lo);
            let down = (hi - freq) / (hi - mid);
            up.min(down).max(0.0) * enorm
        })
        .collect()
}

/// Fixed log-mel transform of a 22050 Hz buffer.
pub fn mel_transform(x: &AudioBuffer) -> Result<MelSpectrogram> {
    if x.sample_rate != SAMPLE_RATE {
        return Err(Error::InvalidArgument(format!(
            "mel transform expects {SAMPLE_RATE} Hz audio, got {} Hz",
            x.sample_rate
        )));
    }
    if x.len() < N_FFT {
        return Err(Error::InvalidArgument(format!(
            "mel transform needs at least {N_FFT} samples, got {}",
            x.len()
        )));
    }
    Ok(MelSpectrogram {
        values: MelAnalyzer::global().mel(&x.samples),
        frame_hop: HOP,
    })
}

/// Plain magnitude spectrogram (no padding, frames dropped at the tail);
/// used for diagnostics plots where mel warping is not wanted.
pub fn spectrogram(samples: &[f64], n_fft: usize, hop: usize) -> Array2<f64> {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n_fft);
    let window: Vec<f64> = (0..n_fft)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / n_fft as f64).cos()))
        .collect();
    let n_bins = n_fft / 2 + 1;
    let n_frames = if samples.len() < n_fft {
        0
    } else {
        (samples.len() - n_fft) / hop + 1
    };
    let mut out = Array2::<f64>::zeros((n_bins, n_frames));
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for t in 0..n_frames {
        for (b, (x, w)) in buf
            .iter_mut()
            .zip(samples[t * hop..t * hop + n_fft].iter().zip(&window))
        {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            out[(k, t)] = buf[k].norm();
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Test signals
// ---------------------------------------------------------------------------

/// Deterministic synthetic signals.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalKind {
    Sine { freq: f64, amp: f64, phase: f64 },
    Chirp { f0: f64, f1: f64, amp: f64 },
    Noise { seed: u64, amp: f64 },
    Silence,
}

pub fn make_signal(kind: &SignalKind, duration: f64, sample_rate: u32) -> Result<AudioBuffer> {
    let nyquist = sample_rate as f64 / 2.0;
    let n = (duration * sample_rate as f64).round() as usize;
    let dt = 1.0 / sample_rate as f64;
    let samples = match kind {
        SignalKind::Sine { freq, amp, phase } => {
            if *freq > nyquist {
                return Err(Error::InvalidArgument(format!(
                    "sine frequency {freq} Hz above Nyquist {nyquist} Hz"
                )));
            }
            (0..n)
                .map(|i| amp * (std::f64::consts::TAU * freq * i as f64 * dt + phase).sin())
                .collect()
        }
        SignalKind::Chirp { f0, f1, amp } => {
            if f0.max(*f1) > nyquist {
                return Err(Error::InvalidArgument(format!(
                    "chirp endpoint {} Hz above Nyquist {nyquist} Hz",
                    f0.max(*f1)
                )));
            }
            // linear sweep: instantaneous frequency f0 + (f1-f0) t/duration
            (0..n)
                .map(|i| {
                    let t = i as f64 * dt;
                    let phase =
                        std::f64::consts::TAU * (f0 * t + (f1 - f0) * t * t / (2.0 * duration));
                    amp * phase.sin()
                })
                .collect()
        }
        SignalKind::Noise { seed, amp } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect()
        }
        SignalKind::Silence => vec![0.0; n],
    };
    Ok(AudioBuffer::new(samples, sample_rate))
}

/// Deterministic voiced test clip: a pitch-gliding harmonic stack with a
/// syllable-like envelope and a whisper of noise. Stands in for dataset
/// audio in smoke tests and the ablation harness.
pub fn synthetic_voice_clip(len: usize, seed: u64) -> AudioBuffer {
    let sr = SAMPLE_RATE as f64;
    let dur = len as f64 / sr;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(len);
    let mut phase = vec![0.0f64; 12];
    for i in 0..len {
        let t = i as f64 / sr;
        let f0 = 130.0 + 40.0 * t / dur + 3.0 * (std::f64::consts::TAU * 5.0 * t).sin();
        let mut v = 0.0;
        for (h, ph) in phase.iter_mut().enumerate() {
            let hf = (h + 1) as f64;
            *ph += std::f64::consts::TAU * f0 * hf / sr;
            v += (1.0 / hf) * ph.sin();
        }
        // three-syllable amplitude gate
        let gate = (std::f64::consts::PI * 3.0 * t / dur).sin().abs();
        let env = 0.1 + 0.9 * gate * gate;
        v = v * env * 0.22 + 0.008 * rng.gen_range(-1.0..1.0);
        samples.push(v);
    }
    let peak = samples.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-9);
    for s in &mut samples {
        *s *= 0.75 / peak;
    }
    AudioBuffer::new(samples, SAMPLE_RATE)
}

// ---------------------------------------------------------------------------
// WAV I/O (16-bit PCM mono RIFF)
// ---------------------------------------------------------------------------

/// Load a 16-bit PCM mono WAV at the dataset rate.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::format(path, "not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = (pos + 8 + size).min(bytes.len());
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::format(path, "fmt chunk too short"));
                }
                let audio_format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((audio_format, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos += 8 + size + (size & 1);
    }
    let (audio_format, channels, rate, bits) =
        fmt.ok_or_else(|| Error::format(path, "missing fmt chunk"))?;
    if audio_format != 1 {
        return Err(Error::format(
            path,
            format!("encoding {audio_format} is not PCM"),
        ));
    }
    if channels != 1 {
        return Err(Error::format(
            path,
            format!("expected mono audio, file has {channels} channels"),
        ));
    }
    if rate != SAMPLE_RATE {
        return Err(Error::format(
            path,
            format!("expected sample rate {SAMPLE_RATE} Hz, file has {rate} Hz"),
        ));
    }
    if bits != 16 {
        return Err(Error::format(
            path,
            format!("expected 16-bit samples, file has {bits}-bit"),
        ));
    }
    let data = data.ok_or_else(|| Error::format(path, "missing data chunk"))?;
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32767.0)
        .collect();
    Ok(AudioBuffer::new(samples, SAMPLE_RATE))
}

/// Write a buffer as 16-bit PCM mono WAV. Samples are clamped to [-1, 1].
pub fn save_wav(x: &AudioBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let data_len = (x.samples.len() * 2) as u32;
    let byte_rate = x.sample_rate * 2;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&x.sample_rate.to_le_bytes());
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in &x.samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    write_atomic(path, &out)
}

/// Write a file via a temp sibling plus rename so failures never leave a
/// truncated artifact behind.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp_write");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Mel container (magic + dims + dtype tag + row-major f32 payload)
// ---------------------------------------------------------------------------

const MEL_MAGIC: &[u8; 4] = b"MELB";
const MEL_DTYPE_F32: u8 = 1;

pub fn save_mel(mel: &MelSpectrogram, path: impl AsRef<Path>) -> Result<()> {
    let (rows, cols) = mel.values.dim();
    let mut out = Vec::with_capacity(13 + rows * cols * 4);
    out.extend_from_slice(MEL_MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    out.push(MEL_DTYPE_F32);
    for v in mel.values.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    write_atomic(path, &out)
}

pub fn load_mel(path: impl AsRef<Path>) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 13 || &bytes[0..4] != MEL_MAGIC {
        return Err(Error::format(path, "not a mel container"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes[12] != MEL_DTYPE_F32 {
        return Err(Error::format(path, format!("unknown dtype tag {}", bytes[12])));
    }
    let payload = &bytes[13..];
    if payload.len() != rows * cols * 4 {
        return Err(Error::format(
            path,
            format!(
                "payload is {} bytes, expected {} for {rows}x{cols} f32",
                payload.len(),
                rows * cols * 4
            ),
        ));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(MelSpectrogram {
        values: Array2::from_shape_vec((rows, cols), data).unwrap(),
        frame_hop: HOP,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_hits_log_floor() {
        let x = make_signal(&SignalKind::Silence, 0.1, SAMPLE_RATE).unwrap();
        let mel = mel_transform(&x).unwrap();
        let floor = LOG_FLOOR.ln();
        for v in mel.values.iter() {
            assert_eq!(*v, floor);
        }
    }

    #[test]
    fn frame_count_is_ceil_len_over_hop() {
        for len in [1024usize, 1500, 8192, 8193, 22050] {
            let x = AudioBuffer::new(vec![0.1; len], SAMPLE_RATE);
            let mel = mel_transform(&x).unwrap();
            assert_eq!(mel.frames(), len.div_ceil(HOP), "len {len}");
        }
    }

    #[test]
    fn short_input_rejected() {
        let x = AudioBuffer::new(vec![0.0; 512], SAMPLE_RATE);
        assert!(matches!(
            mel_transform(&x),
            Err(crate::error::Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn one_khz_sine_dominates_expected_band() {
        let x = make_signal(
            &SignalKind::Sine {
                freq: 1000.0,
                amp: 0.5,
                phase: 0.0,
            },
            1.0,
            SAMPLE_RATE,
        )
        .unwrap();
        let mel = mel_transform(&x).unwrap();
        // closed-form: the filter with the largest triangle response at
        // exactly 1 kHz should also win on the analyzed sine
        let resp = filter_response_at(1000.0);
        let expected = resp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        for t in 0..mel.frames() {
            let col = mel.values.column(t);
            let arg = col
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(arg, expected, "frame {t}");
        }
    }

    #[test]
    fn amplification_never_decreases_log_mel() {
        let x = make_signal(&SignalKind::Noise { seed: 7, amp: 0.3 }, 0.2, SAMPLE_RATE).unwrap();
        let doubled = AudioBuffer::new(x.samples.iter().map(|s| 2.0 * s).collect(), SAMPLE_RATE);
        let a = mel_transform(&x).unwrap();
        let b = mel_transform(&doubled).unwrap();
        for (va, vb) in a.values.iter().zip(b.values.iter()) {
            assert!(vb >= va);
        }
    }

    #[test]
    fn wav_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.wav");
        let x = make_signal(&SignalKind::Noise { seed: 3, amp: 0.9 }, 0.05, SAMPLE_RATE).unwrap();
        save_wav(&x, &path).unwrap();
        let y = load_wav(&path).unwrap();
        assert_eq!(x.len(), y.len());
        let max_err = x
            .samples
            .iter()
            .zip(&y.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 1.0 / 32768.0, "max_err {max_err}");
    }

    #[test]
    fn wrong_rate_and_channels_rejected_with_reason() {
        let dir = tempfile::tempdir().unwrap();
        // hand-build a stereo and a 44.1 kHz file
        let path = dir.path().join("bad.wav");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36u32 + 4).to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes()); // stereo
        bytes.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
        bytes.extend_from_slice(&(SAMPLE_RATE * 4).to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_wav(&path).unwrap_err().to_string();
        assert!(err.contains("2 channels"), "{err}");

        bytes[22..24].copy_from_slice(&1u16.to_le_bytes());
        bytes[24..28].copy_from_slice(&44100u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = load_wav(&path).unwrap_err().to_string();
        assert!(err.contains("22050"), "{err}");
        assert!(err.contains("44100"), "{err}");
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let a = make_signal(&SignalKind::Noise { seed: 9, amp: 1.0 }, 0.1, SAMPLE_RATE).unwrap();
        let b = make_signal(&SignalKind::Noise { seed: 9, amp: 1.0 }, 0.1, SAMPLE_RATE).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = make_signal(&SignalKind::Noise { seed: 10, amp: 1.0 }, 0.1, SAMPLE_RATE).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn zero_frequency_sine_is_silent() {
        let x = make_signal(
            &SignalKind::Sine {
                freq: 0.0,
                amp: 1.0,
                phase: 0.0,
            },
            0.1,
            SAMPLE_RATE,
        )
        .unwrap();
        assert!(x.samples.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn chirp_reaches_target_frequency() {
        // zero crossings in the final 0.2 s approximate 2 * f * dt
        let sr = 22050;
        let x = make_signal(
            &SignalKind::Chirp {
                f0: 0.0,
                f1: 150.0,
                amp: 1.0,
            },
            8.0,
            sr,
        )
        .unwrap();
        let tail = &x.samples[x.samples.len() - (sr as usize / 5)..];
        let crossings = tail.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
        // mean instantaneous frequency over the window is 148.125 Hz
        let approx = crossings as f64 / 2.0 / 0.2;
        assert!((approx - 148.0).abs() < 5.0, "approx {approx}");
    }

    #[test]
    fn above_nyquist_rejected() {
        assert!(make_signal(
            &SignalKind::Chirp {
                f0: 0.0,
                f1: 12000.0,
                amp: 1.0
            },
            1.0,
            SAMPLE_RATE
        )
        .is_err());
    }

    #[test]
    fn mel_container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mel");
        let x = make_signal(&SignalKind::Noise { seed: 1, amp: 0.5 }, 0.1, SAMPLE_RATE).unwrap();
        let mel = mel_transform(&x).unwrap();
        save_mel(&mel, &path).unwrap();
        let back = load_mel(&path).unwrap();
        assert_eq!(back.values.dim(), mel.values.dim());
        for (a, b) in mel.values.iter().zip(back.values.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
