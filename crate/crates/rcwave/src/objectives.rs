//! Adversarial training objectives.
//!
//! Least-squares GAN terms (real target 1, fake target 0) summed over all
//! sub-discriminators, per-layer L1 feature matching, and an L1 log-mel
//! reconstruction loss, combined as
//! `g_total = sum(adv) + lambda_fm * sum(fm) + lambda_mel * mel`
//! with lambda_fm = 2 and lambda_mel = 45. Norm terms reduce as means over
//! score-map elements, which keeps magnitudes comparable across micro and
//! full configurations.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::discriminators::DiscOutputIds;
use crate::error::{Error, Result};
use crate::nn::{Graph, TensorId};
use crate::spectral::MelAnalyzer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_fm: f64,
    pub lambda_mel: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_fm: 2.0,
            lambda_mel: 45.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_fm <= 0.0 || self.lambda_mel <= 0.0 {
            return Err(Error::Config("loss weights must be positive".into()));
        }
        Ok(())
    }
}

/// Itemized loss terms for one optimization step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub d_total: f64,
    pub g_total: f64,
    /// Per sub-discriminator adversarial generator terms.
    pub g_adv: Vec<f64>,
    /// Per sub-discriminator feature-matching terms.
    pub fm: Vec<f64>,
    pub mel: f64,
    pub lr: f64,
}

impl LossReport {
    /// `g_total` must reconstruct from its parts.
    pub fn decomposition_error(&self, w: &LossWeights) -> f64 {
        let rebuilt = self.g_adv.iter().sum::<f64>()
            + w.lambda_fm * self.fm.iter().sum::<f64>()
            + w.lambda_mel * self.mel;
        (rebuilt - self.g_total).abs() / self.g_total.abs().max(1e-12)
    }

    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        if !self.d_total.is_finite() {
            return Some("d_total".into());
        }
        for (i, v) in self.g_adv.iter().enumerate() {
            if !v.is_finite() {
                return Some(format!("g_adv[{i}]"));
            }
        }
        for (i, v) in self.fm.iter().enumerate() {
            if !v.is_finite() {
                return Some(format!("fm[{i}]"));
            }
        }
        if !self.mel.is_finite() {
            return Some("mel".into());
        }
        if !self.g_total.is_finite() {
            return Some("g_total".into());
        }
        None
    }

    pub fn csv_header(num_subs: usize) -> String {
        let mut cols = vec!["step".to_string(), "d_total".into(), "g_total".into()];
        for i in 0..num_subs {
            cols.push(format!("g_adv_{i}"));
        }
        for i in 0..num_subs {
            cols.push(format!("fm_{i}"));
        }
        cols.push("mel".into());
        cols.push("lr".into());
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.step.to_string(),
            self.d_total.to_string(),
            self.g_total.to_string(),
        ];
        cols.extend(self.g_adv.iter().map(|v| v.to_string()));
        cols.extend(self.fm.iter().map(|v| v.to_string()));
        cols.push(self.mel.to_string());
        cols.push(self.lr.to_string());
        cols.join(",")
    }
}

// ---------------------------------------------------------------------------
// Value-level losses (evaluation and oracle checks)
// ---------------------------------------------------------------------------

fn mean_sq_err_to(v: &ArrayD<f64>, target: f64) -> f64 {
    v.iter().map(|x| (x - target) * (x - target)).sum::<f64>() / v.len() as f64
}

/// Discriminator objective over paired per-sub-discriminator score maps
/// of real and generated audio.
pub fn d_loss(real_scores: &[ArrayD<f64>], fake_scores: &[ArrayD<f64>]) -> Result<f64> {
    if real_scores.len() != fake_scores.len() {
        return Err(Error::InvalidArgument(format!(
            "score list mismatch: {} real vs {} fake",
            real_scores.len(),
            fake_scores.len()
        )));
    }
    Ok(real_scores
        .iter()
        .zip(fake_scores)
        .map(|(r, f)| mean_sq_err_to(r, 1.0) + mean_sq_err_to(f, 0.0))
        .sum())
}

/// Generator adversarial objective over per-sub-discriminator fake scores.
pub fn g_adv_loss(fake_scores: &[ArrayD<f64>]) -> f64 {
    fake_scores.iter().map(|f| mean_sq_err_to(f, 1.0)).sum()
}

/// Feature matching for one sub-discriminator: per-layer mean absolute
/// difference, summed over layers.
pub fn fm_loss_single(real: &[ArrayD<f64>], fake: &[ArrayD<f64>]) -> Result<f64> {
    if real.len() != fake.len() {
        return Err(Error::InvalidArgument(format!(
            "feature map count mismatch: {} vs {}",
            real.len(),
            fake.len()
        )));
    }
    let mut total = 0.0;
    for (i, (r, f)) in real.iter().zip(fake).enumerate() {
        if r.shape() != f.shape() {
            return Err(Error::InvalidArgument(format!(
                "feature map shape mismatch at layer {i}: {:?} vs {:?}",
                r.shape(),
                f.shape()
            )));
        }
        total += r
            .iter()
            .zip(f.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / r.len() as f64;
    }
    Ok(total)
}

/// Feature matching summed over all sub-discriminators.
pub fn fm_loss(
    real: &[Vec<ArrayD<f64>>],
    fake: &[Vec<ArrayD<f64>>],
) -> Result<f64> {
    if real.len() != fake.len() {
        return Err(Error::InvalidArgument(format!(
            "sub-discriminator count mismatch: {} vs {}",
            real.len(),
            fake.len()
        )));
    }
    let mut total = 0.0;
    for (r, f) in real.iter().zip(fake) {
        total += fm_loss_single(r, f)?;
    }
    Ok(total)
}

/// Mean absolute log-mel difference between two equal-length waveforms.
pub fn mel_loss(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let analyzer = MelAnalyzer::global();
    let ma = analyzer.mel(x);
    let mb = analyzer.mel(y);
    Ok(mean_abs_diff(ma.as_slice().unwrap(), mb.as_slice().unwrap()))
}

/// Shared reduction for the mel loss and the pixel-wise difference map.
pub fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

// ---------------------------------------------------------------------------
// Graph-side builders (training path)
// ---------------------------------------------------------------------------

/// d_total node: sum over sub-discriminators of
/// mean((D(x)-1)^2) + mean(D(x_hat)^2).
pub fn d_loss_graph(
    g: &mut Graph,
    real: &[DiscOutputIds],
    fake: &[DiscOutputIds],
) -> TensorId {
    assert_eq!(real.len(), fake.len());
    let mut terms = Vec::with_capacity(real.len() * 2);
    for (r, f) in real.iter().zip(fake) {
        let tr = g.sq_mean_against(r.score, 1.0);
        let tf = g.sq_mean_against(f.score, 0.0);
        terms.push((tr, 1.0));
        terms.push((tf, 1.0));
    }
    g.weighted_sum(&terms)
}

/// Per-sub-discriminator generator adversarial nodes mean((D(x_hat)-1)^2).
pub fn g_adv_terms_graph(g: &mut Graph, fake: &[DiscOutputIds]) -> Vec<TensorId> {
    fake.iter()
        .map(|f| g.sq_mean_against(f.score, 1.0))
        .collect()
}

/// Per-sub-discriminator feature matching nodes.
pub fn fm_terms_graph(
    g: &mut Graph,
    real: &[DiscOutputIds],
    fake: &[DiscOutputIds],
) -> Vec<TensorId> {
    assert_eq!(real.len(), fake.len());
    real.iter()
        .zip(fake)
        .map(|(r, f)| {
            assert_eq!(r.feature_maps.len(), f.feature_maps.len());
            let layers: Vec<(TensorId, f64)> = r
                .feature_maps
                .iter()
                .zip(&f.feature_maps)
                .map(|(&rm, &fm)| (g.l1_mean(rm, fm), 1.0))
                .collect();
            g.weighted_sum(&layers)
        })
        .collect()
}

/// g_total node from its parts.
pub fn g_total_graph(
    g: &mut Graph,
    adv: &[TensorId],
    fm: &[TensorId],
    mel: TensorId,
    w: &LossWeights,
) -> TensorId {
    let mut terms: Vec<(TensorId, f64)> = adv.iter().map(|&t| (t, 1.0)).collect();
    terms.extend(fm.iter().map(|&t| (t, w.lambda_fm)));
    terms.push((mel, w.lambda_mel));
    g.weighted_sum(&terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn const_map(shape: &[usize], v: f64) -> ArrayD<f64> {
        ArrayD::from_elem(IxDyn(shape), v)
    }

    fn rand_map(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
        let n: usize = shape.iter().product();
        ArrayD::from_shape_vec(IxDyn(shape), (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .unwrap()
    }

    /// Brute-force oracle: explicit elementwise loops, no shared helpers.
    fn d_loss_oracle(real: &[ArrayD<f64>], fake: &[ArrayD<f64>]) -> f64 {
        let mut total = 0.0;
        for (r, f) in real.iter().zip(fake) {
            let mut sr = 0.0;
            let mut nr = 0.0;
            for v in r.iter() {
                sr += (v - 1.0) * (v - 1.0);
                nr += 1.0;
            }
            let mut sf = 0.0;
            let mut nf = 0.0;
            for v in f.iter() {
                sf += v * v;
                nf += 1.0;
            }
            total += sr / nr + sf / nf;
        }
        total
    }

    #[test]
    fn perfect_discriminator_scores_give_zero() {
        let real: Vec<_> = (0..8).map(|_| const_map(&[1, 10], 1.0)).collect();
        let fake: Vec<_> = (0..8).map(|_| const_map(&[1, 10], 0.0)).collect();
        assert_eq!(d_loss(&real, &fake).unwrap(), 0.0);
    }

    #[test]
    fn all_zero_scores_give_one_per_sub_discriminator() {
        let zeros: Vec<_> = (0..8).map(|i| const_map(&[2, 5 + i], 0.0)).collect();
        assert_eq!(d_loss(&zeros, &zeros).unwrap(), 8.0);
        assert_eq!(g_adv_loss(&zeros), 8.0);
        let ones: Vec<_> = (0..8).map(|_| const_map(&[3, 3], 1.0)).collect();
        assert_eq!(g_adv_loss(&ones), 0.0);
    }

    #[test]
    fn random_scores_match_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..100 {
            let shapes: Vec<Vec<usize>> = (0..8)
                .map(|_| vec![rng.gen_range(1..4usize), rng.gen_range(2..30usize)])
                .collect();
            let real: Vec<_> = shapes.iter().map(|s| rand_map(&mut rng, s)).collect();
            let fake: Vec<_> = shapes.iter().map(|s| rand_map(&mut rng, s)).collect();
            let got = d_loss(&real, &fake).unwrap();
            let want = d_loss_oracle(&real, &fake);
            assert!((got - want).abs() <= 1e-6 * want.abs().max(1e-9));
            let got_g = g_adv_loss(&fake);
            let mut want_g = 0.0;
            for f in &fake {
                let mut s = 0.0;
                let mut n = 0.0;
                for v in f.iter() {
                    s += (v - 1.0) * (v - 1.0);
                    n += 1.0;
                }
                want_g += s / n;
            }
            assert!((got_g - want_g).abs() <= 1e-6 * want_g.abs().max(1e-9));
        }
    }

    #[test]
    fn mismatched_score_lists_rejected() {
        let a = vec![const_map(&[1, 4], 0.5)];
        let b: Vec<ArrayD<f64>> = vec![];
        assert!(d_loss(&a, &b).is_err());
    }

    #[test]
    fn fm_hand_arithmetic() {
        let real = vec![ArrayD::from_shape_vec(IxDyn(&[2]), vec![1.0, 2.0]).unwrap()];
        let fake = vec![ArrayD::from_shape_vec(IxDyn(&[2]), vec![0.0, 0.0]).unwrap()];
        assert_eq!(fm_loss_single(&real, &fake).unwrap(), 1.5);
        assert_eq!(fm_loss_single(&real, &real).unwrap(), 0.0);
    }

    #[test]
    fn fm_matches_per_element_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let shapes: Vec<Vec<usize>> = (0..3)
                .map(|_| vec![rng.gen_range(1..5usize), rng.gen_range(1..20usize)])
                .collect();
            let real: Vec<_> = shapes.iter().map(|s| rand_map(&mut rng, s)).collect();
            let fake: Vec<_> = shapes.iter().map(|s| rand_map(&mut rng, s)).collect();
            let got = fm_loss_single(&real, &fake).unwrap();
            let mut want = 0.0;
            for (r, f) in real.iter().zip(&fake) {
                let mut s = 0.0;
                let mut n = 0.0;
                for (a, b) in r.iter().zip(f.iter()) {
                    s += if a > b { a - b } else { b - a };
                    n += 1.0;
                }
                want += s / n;
            }
            assert!((got - want).abs() <= 1e-6 * want.max(1e-9));
        }
    }

    #[test]
    fn fm_shape_mismatch_names_layer() {
        let real = vec![const_map(&[2, 3], 1.0), const_map(&[2, 4], 1.0)];
        let fake = vec![const_map(&[2, 3], 1.0), const_map(&[2, 5], 1.0)];
        let err = fm_loss_single(&real, &fake).unwrap_err().to_string();
        assert!(err.contains("layer 1"), "{err}");
    }

    #[test]
    fn mel_loss_zero_symmetric_and_oracle() {
        let sine = crate::spectral::make_signal(
            &crate::spectral::SignalKind::Sine {
                freq: 440.0,
                amp: 0.6,
                phase: 0.0,
            },
            0.2,
            crate::spectral::SAMPLE_RATE,
        )
        .unwrap();
        let silence = vec![0.0; sine.len()];
        assert_eq!(mel_loss(&sine.samples, &sine.samples).unwrap(), 0.0);
        let ab = mel_loss(&sine.samples, &silence).unwrap();
        let ba = mel_loss(&silence, &sine.samples).unwrap();
        assert_eq!(ab, ba);
        // silence sits exactly on the log floor, so the loss equals the
        // mean distance of the sine's log-mel from that constant
        let mel = MelAnalyzer::global().mel(&sine.samples);
        let floor = crate::spectral::LOG_FLOOR.ln();
        let want =
            mel.iter().map(|v| (v - floor).abs()).sum::<f64>() / mel.len() as f64;
        assert!((ab - want).abs() <= 1e-9 * want);
        assert!(mel_loss(&sine.samples, &silence[1..]).is_err());
    }

    #[test]
    fn report_decomposition_and_finiteness() {
        let w = LossWeights::default();
        let report = LossReport {
            step: 3,
            d_total: 1.0,
            g_total: 0.5 + 0.25 + 2.0 * 0.125 + 45.0 * 0.01,
            g_adv: vec![0.5, 0.25],
            fm: vec![0.0, 0.125],
            mel: 0.01,
            lr: 2e-4,
        };
        assert!(report.decomposition_error(&w) < 1e-6);
        assert!(report.first_non_finite().is_none());
        let mut bad = report.clone();
        bad.fm[1] = f64::NAN;
        assert_eq!(bad.first_non_finite().unwrap(), "fm[1]");
    }

    #[test]
    fn graph_losses_agree_with_value_losses() {
        // run tiny discriminators on two signals via both paths
        let d = crate::discriminators::Discriminators::new(
            crate::discriminators::DiscriminatorConfig::tiny(),
            3,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut g = Graph::new();
        let bind = d.params.bind(&mut g, false);
        let xi = g.constant(ArrayD::from_shape_vec(IxDyn(&[1, 300]), x.clone()).unwrap());
        let yi = g.constant(ArrayD::from_shape_vec(IxDyn(&[1, 300]), y.clone()).unwrap());
        let r = d.forward_all(&mut g, &bind, xi);
        let f = d.forward_all(&mut g, &bind, yi);
        let dn = d_loss_graph(&mut g, &r, &f);
        let fm_terms = fm_terms_graph(&mut g, &r, &f);
        let fm_graph: f64 = fm_terms.iter().map(|&t| g.scalar_value(t)).sum();
        let d_graph = g.scalar_value(dn);

        let r_scores: Vec<ArrayD<f64>> = (0..4)
            .map(|i| d_sub_score(&d, &x, i))
            .collect();
        let f_scores: Vec<ArrayD<f64>> = (0..4)
            .map(|i| d_sub_score(&d, &y, i))
            .collect();
        let d_value = d_loss(&r_scores, &f_scores).unwrap();
        assert!((d_graph - d_value).abs() <= 1e-9 * d_value.abs().max(1e-9));

        let pairs = d.collect_feature_maps(&x, &y).unwrap();
        let real_maps: Vec<Vec<ArrayD<f64>>> = pairs
            .iter()
            .map(|sub| sub.iter().map(|(a, _)| a.clone()).collect())
            .collect();
        let fake_maps: Vec<Vec<ArrayD<f64>>> = pairs
            .iter()
            .map(|sub| sub.iter().map(|(_, b)| b.clone()).collect())
            .collect();
        let fm_value = fm_loss(&real_maps, &fake_maps).unwrap();
        assert!((fm_graph - fm_value).abs() <= 1e-9 * fm_value.max(1e-9));
    }

    fn d_sub_score(
        d: &crate::discriminators::Discriminators,
        x: &[f64],
        idx: usize,
    ) -> ArrayD<f64> {
        if idx < d.cfg.periods.len() {
            d.rpd_forward(x, d.cfg.periods[idx]).unwrap().score_map
        } else {
            d.rsd_forward(x, idx - d.cfg.periods.len()).unwrap().score_map
        }
    }
}
