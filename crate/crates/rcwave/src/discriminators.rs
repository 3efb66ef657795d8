//! Resolution-wise discriminator ensembles.
//!
//! Two families share one parameter set:
//! - period sub-discriminators reshape audio of length T to (T/p, p) 2-D
//!   grids for p in {2,3,5,7,11} and stack strided (5,1) convolutions;
//! - scale sub-discriminators run 1-D stacks on raw, 2x, and 4x
//!   downsampled audio, where downsampling is the channel-wise Haar split
//!   (all sub-bands concatenated) or, as the ablation baseline, mean
//!   pooling.
//!
//! In resolution-wise mode every sub-discriminator also receives the 1-
//! and 2-level wavelet split of its input as a residual: the sub-bands are
//! projected by a 1x1 convolution and added at the layer whose temporal
//! resolution matches. The scale stacks halve their resolution exactly
//! (strides 2,2), so those additions line up sample-for-sample; the period
//! stacks stride by 3, so the projected branch is nearest-neighbor
//! row-aligned first.

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::LRELU_SLOPE;
use crate::nn::{Binding, Conv1dSpec, Conv2dSpec, Graph, ParamSet, TensorId, WnConv1d, WnConv2d};

/// Input downsampling used by the scale ensemble and the residual branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownsampleMode {
    Dwt,
    AvgPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub periods: Vec<usize>,
    /// Output channels of each strided period conv; a stride-1 (5,1) layer
    /// and a (3,1) post conv follow.
    pub rpd_channels: Vec<usize>,
    pub rpd_kernel: usize,
    pub rpd_stride: usize,
    /// Scale sub-discriminator count: level m sees 2^m-fold downsampled
    /// input, m = 0..rsd_levels-1.
    pub rsd_levels: usize,
    pub rsd_channels: Vec<usize>,
    pub rsd_kernels: Vec<usize>,
    pub rsd_strides: Vec<usize>,
    pub rsd_groups: Vec<usize>,
    pub downsample_mode: DownsampleMode,
    /// When false, no residual branches are built anywhere: the plain
    /// multi-period/multi-scale topology.
    pub use_resolution_wise: bool,
    pub init_std: f64,
}

impl Default for DiscriminatorConfig {
    /// Desk-scale default: the micro variant.
    fn default() -> Self {
        DiscriminatorConfig::micro()
    }
}

impl DiscriminatorConfig {
    /// Published stack sizes.
    pub fn full() -> Self {
        DiscriminatorConfig {
            periods: vec![2, 3, 5, 7, 11],
            rpd_channels: vec![32, 128, 512, 1024, 1024],
            rpd_kernel: 5,
            rpd_stride: 3,
            rsd_levels: 3,
            rsd_channels: vec![128, 128, 256, 512, 1024, 1024, 1024],
            rsd_kernels: vec![15, 41, 41, 41, 41, 41, 5],
            rsd_strides: vec![1, 2, 2, 4, 4, 1, 1],
            rsd_groups: vec![1, 4, 16, 16, 16, 16, 1],
            downsample_mode: DownsampleMode::Dwt,
            use_resolution_wise: true,
            init_std: 0.01,
        }
    }

    /// Same topology, channels scaled down for desk-scale training.
    pub fn micro() -> Self {
        DiscriminatorConfig {
            rpd_channels: vec![4, 8, 16, 32, 32],
            rsd_channels: vec![8, 8, 16, 16, 32, 32, 32],
            rsd_groups: vec![1, 2, 4, 4, 4, 4, 1],
            ..DiscriminatorConfig::full()
        }
    }

    /// Two periods, two scale levels, a few hundred parameters; pairs with
    /// the tiny generator in gradient checks.
    pub fn tiny() -> Self {
        DiscriminatorConfig {
            periods: vec![2, 3],
            rpd_channels: vec![2, 2],
            rpd_kernel: 5,
            rpd_stride: 3,
            rsd_levels: 2,
            rsd_channels: vec![2, 2, 2],
            rsd_kernels: vec![5, 5, 5],
            rsd_strides: vec![1, 2, 2],
            rsd_groups: vec![1, 1, 1],
            downsample_mode: DownsampleMode::Dwt,
            use_resolution_wise: true,
            init_std: 0.01,
        }
    }

    pub fn num_sub_discriminators(&self) -> usize {
        self.periods.len() + self.rsd_levels
    }

    pub fn validate(&self) -> Result<()> {
        if self.periods.is_empty() {
            return Err(Error::Config("need at least one period".into()));
        }
        for p in &self.periods {
            if *p == 0 {
                return Err(Error::Config("periods must be positive".into()));
            }
        }
        for (i, a) in self.periods.iter().enumerate() {
            for b in &self.periods[i + 1..] {
                if gcd(*a, *b) != 1 {
                    return Err(Error::Config(format!(
                        "periods {a} and {b} overlap (not coprime)"
                    )));
                }
            }
        }
        if self.rpd_channels.is_empty() {
            return Err(Error::Config("period stack needs channels".into()));
        }
        if self.rsd_levels == 0 || self.rsd_levels > 3 {
            return Err(Error::Config(
                "scale ensemble supports 1..=3 levels (raw, 2x, 4x)".into(),
            ));
        }
        let n = self.rsd_channels.len();
        if n == 0
            || self.rsd_kernels.len() != n
            || self.rsd_strides.len() != n
            || self.rsd_groups.len() != n
        {
            return Err(Error::Config(
                "scale stack channel/kernel/stride/group lists must share a length".into(),
            ));
        }
        for (k, g) in self.rsd_kernels.iter().zip(&self.rsd_groups) {
            if k % 2 == 0 {
                return Err(Error::Config(format!("scale kernel {k} must be odd")));
            }
            if *g == 0 {
                return Err(Error::Config("groups must be positive".into()));
            }
        }
        if self.rpd_kernel % 2 == 0 {
            return Err(Error::Config("period kernel must be odd".into()));
        }
        Ok(())
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Height/width/padding of the period reshape: length padded up to a
/// multiple of `p`, then viewed as (padded/p, p).
pub fn period_reshape_dims(len: usize, p: usize) -> (usize, usize, usize) {
    let pad = (p - len % p) % p;
    ((len + pad) / p, p, pad)
}

/// Score map plus every intermediate layer's activations.
#[derive(Debug, Clone)]
pub struct DiscriminatorOutput {
    pub score_map: ArrayD<f64>,
    pub feature_maps: Vec<ArrayD<f64>>,
}

/// In-graph variant of [`DiscriminatorOutput`].
pub struct DiscOutputIds {
    pub score: TensorId,
    pub feature_maps: Vec<TensorId>,
}

struct Injection2d {
    /// Conv layer index whose input receives the branch.
    layer: usize,
    /// Absolute downsampling level of the branch (1 or 2).
    level: usize,
    proj: WnConv2d,
}

struct PeriodDisc {
    period: usize,
    convs: Vec<WnConv2d>,
    post: WnConv2d,
    injections: Vec<Injection2d>,
}

struct Injection1d {
    layer: usize,
    /// Additional halvings relative to the sub-discriminator's own input.
    rel: usize,
    proj: WnConv1d,
}

struct ScaleDisc {
    level: usize,
    convs: Vec<WnConv1d>,
    post: WnConv1d,
    injections: Vec<Injection1d>,
}

pub struct Discriminators {
    pub cfg: DiscriminatorConfig,
    pub params: ParamSet,
    periods: Vec<PeriodDisc>,
    scales: Vec<ScaleDisc>,
}

impl Discriminators {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let branch_channels = |level: usize| -> usize {
            match cfg.downsample_mode {
                DownsampleMode::Dwt => 1 << level,
                DownsampleMode::AvgPool => 1,
            }
        };

        let mut periods = Vec::new();
        for (pi, &period) in cfg.periods.iter().enumerate() {
            let spec_strided = Conv2dSpec {
                stride: (cfg.rpd_stride, 1),
                padding: ((cfg.rpd_kernel - 1) / 2, 0),
            };
            let spec_last = Conv2dSpec {
                stride: (1, 1),
                padding: ((cfg.rpd_kernel - 1) / 2, 0),
            };
            let mut convs = Vec::new();
            let mut c_in = 1usize;
            for (i, &c_out) in cfg.rpd_channels.iter().enumerate() {
                let spec = if i + 1 < cfg.rpd_channels.len() {
                    spec_strided
                } else {
                    spec_last
                };
                convs.push(WnConv2d::new(
                    &mut ps,
                    &mut rng,
                    &format!("disc.p{pi}.c{i}"),
                    c_in,
                    c_out,
                    (cfg.rpd_kernel, 1),
                    spec,
                    cfg.init_std,
                    true,
                ));
                c_in = c_out;
            }
            let post = WnConv2d::new(
                &mut ps,
                &mut rng,
                &format!("disc.p{pi}.post"),
                c_in,
                1,
                (3, 1),
                Conv2dSpec {
                    stride: (1, 1),
                    padding: (1, 0),
                },
                cfg.init_std,
                true,
            );
            let mut injections = Vec::new();
            if cfg.use_resolution_wise {
                for level in 1..=2usize {
                    // branch with 2^level-fold shorter rows joins the stack
                    // at conv index `level` (heights are NN-aligned there)
                    if level >= cfg.rpd_channels.len() {
                        break;
                    }
                    let c_layer = cfg.rpd_channels[level - 1];
                    injections.push(Injection2d {
                        layer: level,
                        level,
                        proj: WnConv2d::new(
                            &mut ps,
                            &mut rng,
                            &format!("disc.p{pi}.inj{level}"),
                            branch_channels(level),
                            c_layer,
                            (1, 1),
                            Conv2dSpec {
                                stride: (1, 1),
                                padding: (0, 0),
                            },
                            cfg.init_std,
                            true,
                        ),
                    });
                }
            }
            periods.push(PeriodDisc {
                period,
                convs,
                post,
                injections,
            });
        }

        let mut scales = Vec::new();
        for level in 0..cfg.rsd_levels {
            let input_ch = branch_channels(level);
            let mut convs = Vec::new();
            let mut c_in = input_ch;
            for i in 0..cfg.rsd_channels.len() {
                let groups = if i == 0 { 1 } else { cfg.rsd_groups[i] };
                let c_out = cfg.rsd_channels[i];
                if c_in % groups != 0 || c_out % groups != 0 {
                    return Err(Error::Config(format!(
                        "scale layer {i}: groups {groups} must divide channels {c_in}->{c_out}"
                    )));
                }
                convs.push(WnConv1d::new(
                    &mut ps,
                    &mut rng,
                    &format!("disc.s{level}.c{i}"),
                    c_in,
                    c_out,
                    cfg.rsd_kernels[i],
                    Conv1dSpec {
                        stride: cfg.rsd_strides[i],
                        padding: (cfg.rsd_kernels[i] - 1) / 2,
                        dilation: 1,
                        groups,
                    },
                    cfg.init_std,
                    true,
                ));
                c_in = c_out;
            }
            let post = WnConv1d::new(
                &mut ps,
                &mut rng,
                &format!("disc.s{level}.post"),
                c_in,
                1,
                3,
                Conv1dSpec::plain(1, 1),
                cfg.init_std,
                true,
            );
            let mut injections = Vec::new();
            if cfg.use_resolution_wise {
                // residual branches use absolute downsampling levels <= 2
                for rel in 1..=(2usize.saturating_sub(level)) {
                    let Some(layer) = scale_site(&cfg.rsd_strides, 1 << rel) else {
                        continue;
                    };
                    let c_layer = cfg.rsd_channels[layer - 1];
                    let in_ch = match cfg.downsample_mode {
                        DownsampleMode::Dwt => input_ch << rel,
                        DownsampleMode::AvgPool => 1,
                    };
                    injections.push(Injection1d {
                        layer,
                        rel,
                        proj: WnConv1d::new(
                            &mut ps,
                            &mut rng,
                            &format!("disc.s{level}.inj{rel}"),
                            in_ch,
                            c_layer,
                            1,
                            Conv1dSpec::default(),
                            cfg.init_std,
                            true,
                        ),
                    });
                }
            }
            scales.push(ScaleDisc {
                level,
                convs,
                post,
                injections,
            });
        }
        Ok(Discriminators {
            cfg,
            params: ps,
            periods,
            scales,
        })
    }

    pub fn with_params(cfg: DiscriminatorConfig, values: &ParamSet) -> Result<Self> {
        let mut fresh = Discriminators::new(cfg, 0)?;
        fresh.params.load_values_from(values)?;
        Ok(fresh)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Repeated one-level downsampling of a (c, l) tensor per the
    /// configured mode.
    fn downsample(&self, g: &mut Graph, x: TensorId, times: usize) -> TensorId {
        let mut h = x;
        for _ in 0..times {
            h = match self.cfg.downsample_mode {
                DownsampleMode::Dwt => g.dwt(h),
                DownsampleMode::AvgPool => g.avg_pool2(h),
            };
        }
        h
    }

    /// One period sub-discriminator on a (1, l) waveform tensor.
    pub fn forward_period(
        &self,
        g: &mut Graph,
        bind: &Binding,
        idx: usize,
        x: TensorId,
    ) -> DiscOutputIds {
        let disc = &self.periods[idx];
        let p = disc.period;
        let len = g.shape(x)[1];
        let (h0, _, pad) = period_reshape_dims(len, p);
        let padded = g.reflect_pad_tail(x, pad);
        let mut h = g.reshape(padded, &[1, h0, p]);
        let mut fmaps = Vec::new();
        for (i, conv) in disc.convs.iter().enumerate() {
            for inj in disc.injections.iter().filter(|inj| inj.layer == i) {
                let branch = self.downsample(g, x, inj.level);
                let blen = g.shape(branch)[1];
                let bch = g.shape(branch)[0];
                let (bh, _, bpad) = period_reshape_dims(blen, p);
                let bpadded = g.reflect_pad_tail(branch, bpad);
                let b2d = g.reshape(bpadded, &[bch, bh, p]);
                let proj = inj.proj.forward(g, bind, b2d);
                let target_h = g.shape(h)[1];
                let aligned = if g.shape(proj)[1] == target_h {
                    proj
                } else {
                    g.stretch_rows(proj, target_h)
                };
                h = g.add(h, aligned);
            }
            let c = conv.forward(g, bind, h);
            h = g.leaky_relu(c, LRELU_SLOPE);
            fmaps.push(h);
        }
        let score = disc.post.forward(g, bind, h);
        fmaps.push(score);
        DiscOutputIds {
            score,
            feature_maps: fmaps,
        }
    }

    /// One scale sub-discriminator on a (1, l) waveform tensor; the level's
    /// own input downsampling is applied internally.
    pub fn forward_scale(
        &self,
        g: &mut Graph,
        bind: &Binding,
        level: usize,
        x: TensorId,
    ) -> DiscOutputIds {
        let disc = &self.scales[level];
        let mut h = self.downsample(g, x, disc.level);
        let own_input = h;
        let mut fmaps = Vec::new();
        for (i, conv) in disc.convs.iter().enumerate() {
            for inj in disc.injections.iter().filter(|inj| inj.layer == i) {
                let branch = self.downsample(g, own_input, inj.rel);
                let proj = inj.proj.forward(g, bind, branch);
                h = g.add(h, proj);
            }
            let c = conv.forward(g, bind, h);
            h = g.leaky_relu(c, LRELU_SLOPE);
            fmaps.push(h);
        }
        let score = disc.post.forward(g, bind, h);
        fmaps.push(score);
        DiscOutputIds {
            score,
            feature_maps: fmaps,
        }
    }

    /// All period then all scale sub-discriminators, in config order.
    pub fn forward_all(&self, g: &mut Graph, bind: &Binding, x: TensorId) -> Vec<DiscOutputIds> {
        let mut out = Vec::with_capacity(self.cfg.num_sub_discriminators());
        for i in 0..self.periods.len() {
            out.push(self.forward_period(g, bind, i, x));
        }
        for level in 0..self.scales.len() {
            out.push(self.forward_scale(g, bind, level, x));
        }
        out
    }

    fn values_of(g: &Graph, ids: DiscOutputIds) -> DiscriminatorOutput {
        DiscriminatorOutput {
            score_map: g.value(ids.score).clone(),
            feature_maps: ids
                .feature_maps
                .iter()
                .map(|&id| g.value(id).clone())
                .collect(),
        }
    }

    /// Value-level period forward. `period` must be one of the configured
    /// periods.
    pub fn rpd_forward(&self, x: &[f64], period: usize) -> Result<DiscriminatorOutput> {
        if period == 0 {
            return Err(Error::InvalidArgument("period must be positive".into()));
        }
        if x.is_empty() {
            return Err(Error::InvalidArgument("empty discriminator input".into()));
        }
        let idx = self
            .periods
            .iter()
            .position(|d| d.period == period)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "period {period} not in configured set {:?}",
                    self.cfg.periods
                ))
            })?;
        let mut g = Graph::new();
        let bind = self.params.bind(&mut g, false);
        let xid = g.constant(ArrayD::from_shape_vec(IxDyn(&[1, x.len()]), x.to_vec()).unwrap());
        let ids = self.forward_period(&mut g, &bind, idx, xid);
        Ok(Self::values_of(&g, ids))
    }

    /// Value-level scale forward at a downsampling level in {0, 1, 2}.
    pub fn rsd_forward(&self, x: &[f64], level: usize) -> Result<DiscriminatorOutput> {
        if level >= self.scales.len() {
            return Err(Error::InvalidArgument(format!(
                "scale level {level} out of range 0..{}",
                self.scales.len()
            )));
        }
        if x.is_empty() {
            return Err(Error::InvalidArgument("empty discriminator input".into()));
        }
        let mut g = Graph::new();
        let bind = self.params.bind(&mut g, false);
        let xid = g.constant(ArrayD::from_shape_vec(IxDyn(&[1, x.len()]), x.to_vec()).unwrap());
        let ids = self.forward_scale(&mut g, &bind, level, xid);
        Ok(Self::values_of(&g, ids))
    }

    /// Run real and generated audio through every sub-discriminator and
    /// pair the feature maps layer by layer.
    pub fn collect_feature_maps(
        &self,
        real: &[f64],
        fake: &[f64],
    ) -> Result<Vec<Vec<(ArrayD<f64>, ArrayD<f64>)>>> {
        if real.len() != fake.len() {
            return Err(Error::InvalidArgument(format!(
                "length mismatch: real {} vs fake {}",
                real.len(),
                fake.len()
            )));
        }
        let mut g = Graph::new();
        let bind = self.params.bind(&mut g, false);
        let r = g.constant(ArrayD::from_shape_vec(IxDyn(&[1, real.len()]), real.to_vec()).unwrap());
        let f = g.constant(ArrayD::from_shape_vec(IxDyn(&[1, fake.len()]), fake.to_vec()).unwrap());
        let r_out = self.forward_all(&mut g, &bind, r);
        let f_out = self.forward_all(&mut g, &bind, f);
        Ok(r_out
            .into_iter()
            .zip(f_out)
            .map(|(ro, fo)| {
                ro.feature_maps
                    .iter()
                    .zip(&fo.feature_maps)
                    .map(|(&a, &b)| (g.value(a).clone(), g.value(b).clone()))
                    .collect()
            })
            .collect())
    }
}

/// First conv index whose input sits at `target` cumulative stride, if the
/// schedule reaches it exactly.
fn scale_site(strides: &[usize], target: usize) -> Option<usize> {
    let mut cum = 1usize;
    for (i, s) in strides.iter().enumerate() {
        if cum == target && i > 0 {
            return Some(i);
        }
        cum *= s;
    }
    None
}
