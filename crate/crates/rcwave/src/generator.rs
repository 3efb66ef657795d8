//! Resolution-connected generator.
//!
//! A stack of transposed-convolution blocks (each followed by a
//! multi-receptive-field fusion module) upsamples an 80-band mel input by
//! 8x4x2x2x2 = 256 to the waveform rate. The top K blocks each project
//! their features to a waveform; every branch is nearest-neighbor
//! upsampled through learned 1x1 gains to the full rate and the branches
//! are summed before a single tanh. The input mel is also conditioned
//! directly into each top-K block. The skip summation, the NN upsampler,
//! and the mel conditioning are all independently switchable so the
//! ablation rows degenerate to the plain single-path topology.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    Binding, Conv1dSpec, Graph, ParamSet, TensorId, WnConv1d, WnConvT1d,
};
use crate::spectral::AudioBuffer;

pub const LRELU_SLOPE: f64 = 0.1;

/// Full generator hyperparameter record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Mel bands expected at the input (80 for the real front-end).
    pub mel_channels: usize,
    /// Channels after the input convolution; halved after every block.
    pub base_channels: usize,
    /// Halving floor, so scaled-down variants keep usable top stages.
    /// The published widths never reach it.
    pub min_channels: usize,
    pub upsample_rates: Vec<usize>,
    pub upsample_kernels: Vec<usize>,
    pub mrf_kernel_sizes: Vec<usize>,
    /// Dilation pairs per residual unit: first conv dilated, second plain.
    pub mrf_dilations: Vec<[usize; 2]>,
    /// How many of the last blocks emit summed waveform branches.
    pub top_k: usize,
    pub pre_kernel: usize,
    /// Kernel of the per-branch waveform projections.
    pub wave_kernel: usize,
    pub use_rcg: bool,
    pub use_nn_upsampler: bool,
    pub use_mel_condition: bool,
    pub init_std: f64,
}

impl Default for GeneratorConfig {
    /// Desk-scale default: the micro variant.
    fn default() -> Self {
        GeneratorConfig::micro()
    }
}

impl GeneratorConfig {
    /// Wide variant (512 base channels).
    pub fn v1() -> Self {
        GeneratorConfig {
            mel_channels: 80,
            base_channels: 512,
            min_channels: 4,
            upsample_rates: vec![8, 4, 2, 2, 2],
            upsample_kernels: vec![16, 8, 4, 4, 4],
            mrf_kernel_sizes: vec![3, 7, 11],
            mrf_dilations: vec![[1, 1], [3, 1], [5, 1], [7, 1]],
            top_k: 4,
            pre_kernel: 7,
            wave_kernel: 7,
            use_rcg: true,
            use_nn_upsampler: true,
            use_mel_condition: true,
            init_std: 0.01,
        }
    }

    /// Narrow variant (128 base channels), same topology.
    pub fn v2() -> Self {
        GeneratorConfig {
            base_channels: 128,
            ..GeneratorConfig::v1()
        }
    }

    /// The `v2` topology with scaled-down widths; fits desk-scale
    /// training runs.
    pub fn micro() -> Self {
        GeneratorConfig {
            base_channels: 32,
            ..GeneratorConfig::v2()
        }
    }

    /// Two-stage toy used by gradient checks; a few hundred parameters.
    pub fn tiny() -> Self {
        GeneratorConfig {
            mel_channels: 4,
            base_channels: 2,
            min_channels: 1,
            upsample_rates: vec![2, 2],
            upsample_kernels: vec![4, 4],
            mrf_kernel_sizes: vec![3],
            mrf_dilations: vec![[1, 1]],
            top_k: 2,
            pre_kernel: 3,
            wave_kernel: 3,
            use_rcg: true,
            use_nn_upsampler: true,
            use_mel_condition: true,
            init_std: 0.01,
        }
    }

    pub fn total_upsample(&self) -> usize {
        self.upsample_rates.iter().product()
    }

    pub fn num_stages(&self) -> usize {
        self.upsample_rates.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mel_channels == 0 || self.base_channels == 0 || self.min_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.upsample_rates.is_empty()
            || self.upsample_rates.len() != self.upsample_kernels.len()
        {
            return Err(Error::Config(
                "upsample rates/kernels must be non-empty and equal length".into(),
            ));
        }
        for (r, k) in self.upsample_rates.iter().zip(&self.upsample_kernels) {
            if k < r {
                return Err(Error::Config(format!(
                    "transposed kernel {k} smaller than its rate {r} leaves uncovered outputs"
                )));
            }
            if (k - r) % 2 != 0 {
                return Err(Error::Config(format!(
                    "kernel {k} and rate {r} must differ by an even number for exact lengths"
                )));
            }
        }
        if self.top_k == 0 || self.top_k > self.num_stages() {
            return Err(Error::Config(format!(
                "top_k {} out of range 1..={}",
                self.top_k,
                self.num_stages()
            )));
        }
        if self.mrf_kernel_sizes.is_empty() || self.mrf_dilations.is_empty() {
            return Err(Error::Config("MRF needs kernels and dilations".into()));
        }
        for k in self
            .mrf_kernel_sizes
            .iter()
            .chain([&self.pre_kernel, &self.wave_kernel])
        {
            if k % 2 == 0 {
                return Err(Error::Config(format!(
                    "kernel {k} must be odd for same-length padding"
                )));
            }
        }
        Ok(())
    }

    fn stage_in_channels(&self, s: usize) -> usize {
        (self.base_channels >> s).max(self.min_channels)
    }

    fn stage_out_channels(&self, s: usize) -> usize {
        (self.base_channels >> (s + 1)).max(self.min_channels)
    }

    /// Product of rates before stage `s`; the mel stretch factor at that
    /// block's input.
    fn cum_rate(&self, s: usize) -> usize {
        self.upsample_rates[..s].iter().product()
    }

    fn first_branch_stage(&self) -> usize {
        self.num_stages() - self.top_k
    }
}

struct ResUnit {
    c1: WnConv1d,
    c2: WnConv1d,
}

struct ResStack {
    units: Vec<ResUnit>,
}

struct Mrf {
    stacks: Vec<ResStack>,
}

impl Mrf {
    fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        ch: usize,
        cfg: &GeneratorConfig,
    ) -> Self {
        let stacks = cfg
            .mrf_kernel_sizes
            .iter()
            .enumerate()
            .map(|(ki, &k)| ResStack {
                units: cfg
                    .mrf_dilations
                    .iter()
                    .enumerate()
                    .map(|(di, &[d1, d2])| ResUnit {
                        c1: WnConv1d::new(
                            ps,
                            rng,
                            &format!("{name}.k{ki}.u{di}.c1"),
                            ch,
                            ch,
                            k,
                            Conv1dSpec {
                                stride: 1,
                                padding: (k - 1) * d1 / 2,
                                dilation: d1,
                                groups: 1,
                            },
                            cfg.init_std,
                            true,
                        ),
                        c2: WnConv1d::new(
                            ps,
                            rng,
                            &format!("{name}.k{ki}.u{di}.c2"),
                            ch,
                            ch,
                            k,
                            Conv1dSpec {
                                stride: 1,
                                padding: (k - 1) * d2 / 2,
                                dilation: d2,
                                groups: 1,
                            },
                            cfg.init_std,
                            true,
                        ),
                    })
                    .collect(),
            })
            .collect();
        Mrf { stacks }
    }

    fn forward(&self, g: &mut Graph, bind: &Binding, x: TensorId) -> TensorId {
        let mut acc: Option<TensorId> = None;
        for stack in &self.stacks {
            let mut h = x;
            for unit in &stack.units {
                let a = g.leaky_relu(h, LRELU_SLOPE);
                let t = unit.c1.forward(g, bind, a);
                let a2 = g.leaky_relu(t, LRELU_SLOPE);
                let t2 = unit.c2.forward(g, bind, a2);
                h = g.add(h, t2);
            }
            acc = Some(match acc {
                None => h,
                Some(a) => g.add(a, h),
            });
        }
        let summed = acc.unwrap();
        if self.stacks.len() > 1 {
            g.scale(summed, 1.0 / self.stacks.len() as f64)
        } else {
            summed
        }
    }
}

enum SkipUp {
    /// Nearest-neighbor repeat followed by a learned bias-free 1x1 gain.
    Nn { rate: usize, proj: WnConv1d },
    /// Ablation: plain transposed convolution on the skip path.
    Transposed(WnConvT1d),
}

impl SkipUp {
    fn forward(&self, g: &mut Graph, bind: &Binding, x: TensorId) -> TensorId {
        match self {
            SkipUp::Nn { rate, proj } => {
                let r = g.repeat_time(x, *rate);
                proj.forward(g, bind, r)
            }
            SkipUp::Transposed(t) => t.forward(g, bind, x),
        }
    }
}

struct Stage {
    up: WnConvT1d,
    mrf: Mrf,
    mel_cond: Option<WnConv1d>,
    wave_out: Option<WnConv1d>,
    skip_up: Option<SkipUp>,
}

/// Waveforms produced by one generator pass.
#[derive(Debug, Clone)]
pub struct MultiResolutionOutput {
    /// Full-rate output after tanh.
    pub final_audio: AudioBuffer,
    /// Native-rate branch waveforms, lowest resolution first.
    pub branches: Vec<AudioBuffer>,
    /// Each branch's full-rate pre-tanh term; their ordered sum is the
    /// pre-tanh output.
    pub contributions: Vec<Vec<f64>>,
}

/// Tensor ids of one in-graph forward pass.
pub struct GeneratorForward {
    pub output: TensorId,
    pub pre_tanh: TensorId,
    pub branches: Vec<TensorId>,
    pub contributions: Vec<TensorId>,
}

pub struct Generator {
    pub cfg: GeneratorConfig,
    pub params: ParamSet,
    conv_pre: WnConv1d,
    stages: Vec<Stage>,
    conv_post: WnConv1d,
    sample_rate: u32,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv_pre = WnConv1d::new(
            &mut ps,
            &mut rng,
            "gen.pre",
            cfg.mel_channels,
            cfg.base_channels,
            cfg.pre_kernel,
            Conv1dSpec::plain(1, (cfg.pre_kernel - 1) / 2),
            cfg.init_std,
            true,
        );
        let n = cfg.num_stages();
        let first_branch = cfg.first_branch_stage();
        let mut stages = Vec::with_capacity(n);
        for s in 0..n {
            let (c_in, c_out) = (cfg.stage_in_channels(s), cfg.stage_out_channels(s));
            let (k, r) = (cfg.upsample_kernels[s], cfg.upsample_rates[s]);
            let up = WnConvT1d::new(
                &mut ps,
                &mut rng,
                &format!("gen.s{s}.up"),
                c_in,
                c_out,
                k,
                r,
                (k - r) / 2,
                cfg.init_std,
                true,
            );
            let mrf = Mrf::new(&mut ps, &mut rng, &format!("gen.s{s}.mrf"), c_out, &cfg);
            let in_top_k = s >= first_branch;
            let mel_cond = (cfg.use_mel_condition && in_top_k).then(|| {
                WnConv1d::new(
                    &mut ps,
                    &mut rng,
                    &format!("gen.s{s}.cond"),
                    cfg.mel_channels,
                    c_in,
                    1,
                    Conv1dSpec::default(),
                    cfg.init_std,
                    true,
                )
            });
            let wave_out = (cfg.use_rcg && in_top_k).then(|| {
                WnConv1d::new(
                    &mut ps,
                    &mut rng,
                    &format!("gen.s{s}.wave"),
                    c_out,
                    1,
                    cfg.wave_kernel,
                    Conv1dSpec::plain(1, (cfg.wave_kernel - 1) / 2),
                    cfg.init_std,
                    true,
                )
            });
            // skip upsampler carrying lower branches across this stage's rate
            let skip_up = (cfg.use_rcg && s > first_branch).then(|| {
                if cfg.use_nn_upsampler {
                    let mut proj = WnConv1d::new(
                        &mut ps,
                        &mut rng,
                        &format!("gen.s{s}.skip"),
                        1,
                        1,
                        1,
                        Conv1dSpec::default(),
                        cfg.init_std,
                        false,
                    );
                    // identity gain at init so early branches pass through
                    init_identity_1x1(&mut ps, &mut proj);
                    SkipUp::Nn { rate: r, proj }
                } else {
                    SkipUp::Transposed(WnConvT1d::new(
                        &mut ps,
                        &mut rng,
                        &format!("gen.s{s}.skip"),
                        1,
                        1,
                        2 * r,
                        r,
                        r / 2,
                        cfg.init_std,
                        false,
                    ))
                }
            });
            stages.push(Stage {
                up,
                mrf,
                mel_cond,
                wave_out,
                skip_up,
            });
        }
        let c_last = cfg.stage_out_channels(n - 1);
        let conv_post = WnConv1d::new(
            &mut ps,
            &mut rng,
            "gen.post",
            c_last,
            1,
            cfg.wave_kernel,
            Conv1dSpec::plain(1, (cfg.wave_kernel - 1) / 2),
            cfg.init_std,
            true,
        );
        Ok(Generator {
            cfg,
            params: ps,
            conv_pre,
            stages,
            conv_post,
            sample_rate: crate::spectral::SAMPLE_RATE,
        })
    }

    /// Rebuild with the same architecture but parameter values taken from
    /// `values` (checkpoint restore). Shapes are validated by name.
    pub fn with_params(cfg: GeneratorConfig, values: &ParamSet) -> Result<Self> {
        let mut fresh = Generator::new(cfg, 0)?;
        fresh.params.load_values_from(values)?;
        Ok(fresh)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// In-graph forward pass over an already-inserted (mel_channels, T)
    /// tensor.
    pub fn forward(&self, g: &mut Graph, bind: &Binding, mel: TensorId) -> GeneratorForward {
        let cfg = &self.cfg;
        assert_eq!(g.shape(mel)[0], cfg.mel_channels, "mel row count");
        let mut h = self.conv_pre.forward(g, bind, mel);
        let mut branches = Vec::new();
        let mut branch_stage = Vec::new();
        for (s, stage) in self.stages.iter().enumerate() {
            if let Some(cond) = &stage.mel_cond {
                let factor = cfg.cum_rate(s);
                let stretched = if factor == 1 {
                    mel
                } else {
                    g.repeat_time(mel, factor)
                };
                let proj = cond.forward(g, bind, stretched);
                h = g.add(h, proj);
            }
            let a = g.leaky_relu(h, LRELU_SLOPE);
            let u = stage.up.forward(g, bind, a);
            h = stage.mrf.forward(g, bind, u);
            if let Some(wave) = &stage.wave_out {
                let a = g.leaky_relu(h, LRELU_SLOPE);
                branches.push(wave.forward(g, bind, a));
                branch_stage.push(s);
            }
        }
        if cfg.use_rcg {
            // distribute each branch through the shared skip upsamplers to
            // full rate, then sum in branch order
            let mut contributions = Vec::with_capacity(branches.len());
            for (i, &b) in branches.iter().enumerate() {
                let mut c = b;
                for s in (branch_stage[i] + 1)..self.stages.len() {
                    c = self.stages[s]
                        .skip_up
                        .as_ref()
                        .expect("skip upsampler present for stages above a branch")
                        .forward(g, bind, c);
                }
                contributions.push(c);
            }
            let mut pre = contributions[0];
            for &c in &contributions[1..] {
                pre = g.add(pre, c);
            }
            let output = g.tanh(pre);
            GeneratorForward {
                output,
                pre_tanh: pre,
                branches,
                contributions,
            }
        } else {
            let a = g.leaky_relu(h, LRELU_SLOPE);
            let pre = self.conv_post.forward(g, bind, a);
            let output = g.tanh(pre);
            GeneratorForward {
                output,
                pre_tanh: pre,
                branches: Vec::new(),
                contributions: Vec::new(),
            }
        }
    }

    /// Inference entry point: validates the mel, runs a no-grad pass, and
    /// returns the waveforms.
    pub fn generate(&self, mel: &Array2<f64>) -> Result<MultiResolutionOutput> {
        if mel.nrows() != self.cfg.mel_channels {
            return Err(Error::InvalidArgument(format!(
                "expected mel with {} rows, got {}",
                self.cfg.mel_channels,
                mel.nrows()
            )));
        }
        if mel.ncols() == 0 {
            return Err(Error::InvalidArgument("empty mel input".into()));
        }
        let mut g = Graph::new();
        let bind = self.params.bind(&mut g, false);
        let mel_id = g.constant(
            ArrayD::from_shape_vec(
                IxDyn(&[mel.nrows(), mel.ncols()]),
                mel.iter().copied().collect(),
            )
            .unwrap(),
        );
        let fwd = self.forward(&mut g, &bind, mel_id);
        let total = self.cfg.total_upsample() * mel.ncols();
        let final_samples = g.value(fwd.output).as_slice().unwrap().to_vec();
        debug_assert_eq!(final_samples.len(), total);
        let branches = fwd
            .branches
            .iter()
            .map(|&b| {
                let v = g.value(b).as_slice().unwrap().to_vec();
                let rate =
                    (self.sample_rate as u64 * v.len() as u64 / total as u64) as u32;
                AudioBuffer::new(v, rate)
            })
            .collect();
        let contributions = fwd
            .contributions
            .iter()
            .map(|&c| g.value(c).as_slice().unwrap().to_vec())
            .collect();
        Ok(MultiResolutionOutput {
            final_audio: AudioBuffer::new(final_samples, self.sample_rate),
            branches,
            contributions,
        })
    }

    /// Effective scalar gains of the NN skip upsamplers, outermost stage
    /// last. Empty when the skip path uses transposed convolutions.
    pub fn skip_gains(&self) -> Vec<f64> {
        let mut gains = Vec::new();
        for s in 0..self.stages.len() {
            let (Some(SkipUp::Nn { .. }), Some(v_id), Some(g_id)) = (
                self.stages[s].skip_up.as_ref(),
                self.params.find(&format!("gen.s{s}.skip.v")),
                self.params.find(&format!("gen.s{s}.skip.g")),
            ) else {
                continue;
            };
            let v = self.params.value(v_id).as_slice().unwrap()[0];
            let gn = self.params.value(g_id).as_slice().unwrap()[0];
            // same expression the weight-norm op evaluates on a 1-element slice
            let n = (v * v).sqrt().max(1e-12);
            gains.push(gn / n * v);
        }
        gains
    }
}

/// Force a freshly created 1x1 weight-normalized conv to the identity.
fn init_identity_1x1(ps: &mut ParamSet, conv: &mut WnConv1d) {
    let _ = conv;
    // the two most recent params are v and g of this conv
    let n = ps.len();
    let ids: Vec<_> = ps.ids().collect();
    let v_id = ids[n - 2];
    let g_id = ids[n - 1];
    ps.value_mut(v_id).fill(1.0);
    ps.value_mut(g_id).fill(1.0);
}

/// Nearest-neighbor upsampling of a mono signal: repeat each sample
/// `factor` times and apply a scalar 1x1 projection gain (1.0 = identity).
pub fn nn_upsample(x: &[f64], factor: usize, gain: f64) -> Result<Vec<f64>> {
    if factor < 1 {
        return Err(Error::InvalidArgument(
            "upsampling factor must be at least 1".into(),
        ));
    }
    let mut out = Vec::with_capacity(x.len() * factor);
    for &v in x {
        for _ in 0..factor {
            out.push(gain * v);
        }
    }
    Ok(out)
}
