use num_complex::Complex64;
use rayon::prelude::*;

use super::{ComplexRatioFilter, Target};
use crate::error::{Error, Result};
use crate::features::FeatureTensor;
use crate::weights::WeightBundle;

/// Shapes of the convolutional cRF estimator. It is shared over frequency:
/// every bin runs the same 1-D convolution stack along time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrfStubConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub zones: usize,
    pub taps: usize,
    pub channels: usize,
}

impl CrfStubConfig {
    pub const CONV1_W: &'static str = "crf.conv1.weight";
    pub const CONV1_B: &'static str = "crf.conv1.bias";
    pub const CONV2_W: &'static str = "crf.conv2.weight";
    pub const CONV2_B: &'static str = "crf.conv2.bias";

    /// Real outputs per bin and frame: zones x {speech, noise} x taps x
    /// channels x {re, im}.
    pub fn output_dim(&self) -> usize {
        self.zones * 2 * self.taps * self.channels * 2
    }

    pub fn tensor_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        vec![
            (
                Self::CONV1_W,
                vec![self.hidden, self.feature_dim, self.kernel],
            ),
            (Self::CONV1_B, vec![self.hidden]),
            (Self::CONV2_W, vec![self.output_dim(), self.hidden]),
            (Self::CONV2_B, vec![self.output_dim()]),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensor_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Position of one real output inside the head's output vector.
    pub fn output_index(
        &self,
        zone: usize,
        target: Target,
        tap: usize,
        ch: usize,
        im: bool,
    ) -> usize {
        let kind = match target {
            Target::Speech => 0,
            Target::Noise => 1,
        };
        ((((zone * 2 + kind) * self.taps + tap) * self.channels + ch) * 2) + im as usize
    }
}

/// Speech and noise filters for every zone.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfStubOutput {
    pub speech: Vec<ComplexRatioFilter>,
    pub noise: Vec<ComplexRatioFilter>,
}

/// Forward pass of the convolutional cRF estimator: a "same"-padded
/// `kernel`-wide convolution over frames, ReLU, then a pointwise projection
/// whose outputs are paired into complex coefficients.
pub fn neural_crf_stub(
    features: &FeatureTensor,
    weights: &WeightBundle,
    cfg: &CrfStubConfig,
) -> Result<CrfStubOutput> {
    if features.dim() != cfg.feature_dim {
        return Err(Error::Shape(format!(
            "features have {} dims per bin, estimator expects {}",
            features.dim(),
            cfg.feature_dim
        )));
    }
    if cfg.kernel.is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "kernel width must be odd, got {}",
            cfg.kernel
        )));
    }
    let (h_n, d_n, k_n, o_n) = (cfg.hidden, cfg.feature_dim, cfg.kernel, cfg.output_dim());
    let w1 = weights.expect(CrfStubConfig::CONV1_W, &[h_n, d_n, k_n])?;
    let b1 = weights.expect(CrfStubConfig::CONV1_B, &[h_n])?;
    let w2 = weights.expect(CrfStubConfig::CONV2_W, &[o_n, h_n])?;
    let b2 = weights.expect(CrfStubConfig::CONV2_B, &[o_n])?;
    let (t_n, f_n) = (features.frames, features.bins);
    let half = (k_n / 2) as isize;

    // Feature vectors per (t, f), gathered once.
    let x: Vec<Vec<f64>> = (0..t_n * f_n)
        .into_par_iter()
        .map(|i| features.at(i / f_n, i % f_n))
        .collect();

    // Head outputs per frame, laid out (f, o).
    let heads: Vec<Vec<f64>> = (0..t_n)
        .into_par_iter()
        .map(|t| {
            let mut out = vec![0.0; f_n * o_n];
            let mut hidden = vec![0.0; h_n];
            for f in 0..f_n {
                for (h, hv) in hidden.iter_mut().enumerate() {
                    let mut acc = b1[h];
                    for k in 0..k_n {
                        let src = t as isize + k as isize - half;
                        if src < 0 || src >= t_n as isize {
                            continue;
                        }
                        let xv = &x[src as usize * f_n + f];
                        let wrow = &w1[h * d_n * k_n..(h + 1) * d_n * k_n];
                        for (d, v) in xv.iter().enumerate() {
                            acc += wrow[d * k_n + k] * v;
                        }
                    }
                    *hv = acc.max(0.0);
                }
                let o = &mut out[f * o_n..(f + 1) * o_n];
                for (j, ov) in o.iter_mut().enumerate() {
                    let wrow = &w2[j * h_n..(j + 1) * h_n];
                    *ov = b2[j] + wrow.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            out
        })
        .collect();

    let build = |zone: usize, target: Target| -> Result<ComplexRatioFilter> {
        let mut crf = ComplexRatioFilter::zeros(t_n, f_n, cfg.taps, cfg.channels, target, zone)?;
        for (t, head) in heads.iter().enumerate() {
            for f in 0..f_n {
                let o = &head[f * o_n..(f + 1) * o_n];
                for tap in 0..cfg.taps {
                    for ch in 0..cfg.channels {
                        let re = o[cfg.output_index(zone, target, tap, ch, false)];
                        let im = o[cfg.output_index(zone, target, tap, ch, true)];
                        let i = crf.index(t, f, tap, ch);
                        crf.coeffs[i] = Complex64::new(re, im);
                    }
                }
            }
        }
        Ok(crf)
    };
    Ok(CrfStubOutput {
        speech: (0..cfg.zones)
            .map(|z| build(z, Target::Speech))
            .collect::<Result<_>>()?,
        noise: (0..cfg.zones)
            .map(|z| build(z, Target::Noise))
            .collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features() -> FeatureTensor {
        let (t, f) = (6, 5);
        FeatureTensor {
            frames: t,
            bins: f,
            lps: (0..t * f).map(|i| (i as f64 * 0.1).sin()).collect(),
            ipd: (0..t * f).map(|i| (i as f64 * 0.2).cos()).collect(),
            df: (0..4 * t * f).map(|i| (i as f64 * 0.3).sin()).collect(),
            num_pairs: 1,
            num_zones: 4,
        }
    }

    fn cfg() -> CrfStubConfig {
        CrfStubConfig {
            feature_dim: 6,
            hidden: 8,
            kernel: 3,
            zones: 4,
            taps: 3,
            channels: 3,
        }
    }

    #[test]
    fn zero_weights_give_zero_filters() {
        let c = cfg();
        let out =
            neural_crf_stub(&features(), &WeightBundle::zeros(&c.tensor_shapes()), &c).unwrap();
        assert!(out
            .speech
            .iter()
            .chain(&out.noise)
            .all(|f| f.coeffs.iter().all(|v| *v == Complex64::new(0.0, 0.0))));
    }

    #[test]
    fn bias_can_build_identity() {
        let c = cfg();
        let mut w = WeightBundle::zeros(&c.tensor_shapes());
        let mut b2 = vec![0.0; c.output_dim()];
        for ch in 0..c.channels {
            b2[c.output_index(2, Target::Speech, 1, ch, false)] = 1.0;
        }
        w.insert(CrfStubConfig::CONV2_B, vec![c.output_dim()], b2)
            .unwrap();
        let out = neural_crf_stub(&features(), &w, &c).unwrap();
        let ident = ComplexRatioFilter::identity(6, 5, 3, 3).unwrap();
        assert_eq!(out.speech[2].coeffs, ident.coeffs);
        assert_eq!(out.speech[2].zone, 2);
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let c = cfg();
        let w = WeightBundle::random(&c.tensor_shapes(), 0.3, 5);
        let a = neural_crf_stub(&features(), &w, &c).unwrap();
        let b = neural_crf_stub(&features(), &w, &c).unwrap();
        assert_eq!(a, b);
        assert!(a.noise[0].coeffs.iter().any(|v| v.norm() > 0.0));
        let bad = CrfStubConfig { hidden: 9, ..c };
        assert!(neural_crf_stub(&features(), &w, &bad).is_err());
        let bad = CrfStubConfig {
            feature_dim: 7,
            ..c
        };
        assert!(neural_crf_stub(&features(), &w, &bad).is_err());
    }
}
