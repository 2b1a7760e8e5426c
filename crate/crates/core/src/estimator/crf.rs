use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ZERO;
use crate::scene::SceneRender;
use crate::signal::{stft, Spectrogram, StftConfig};

pub const DEFAULT_CRF_TAPS: usize = 3;
/// Tikhonov weight relative to the centre-tap power of the fit.
const LS_REGULARIZATION: f64 = 1e-4;
const GRAM_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Speech,
    Noise,
}

/// Per-bin complex FIR over `taps` neighbouring frames, one filter per
/// stacked channel (mixture mics followed by the echo reference).
///
/// Coefficients are laid out `(t, f, tap, channel)`; tap `i` acts on frame
/// `t + i - taps / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexRatioFilter {
    pub coeffs: Vec<Complex64>,
    pub frames: usize,
    pub bins: usize,
    pub taps: usize,
    pub channels: usize,
    pub target: Target,
    pub zone: usize,
}

impl ComplexRatioFilter {
    pub fn zeros(
        frames: usize,
        bins: usize,
        taps: usize,
        channels: usize,
        target: Target,
        zone: usize,
    ) -> Result<Self> {
        if taps.is_multiple_of(2) {
            return Err(Error::Shape(format!("tap count must be odd, got {taps}")));
        }
        Ok(Self {
            coeffs: vec![ZERO; frames * bins * taps * channels],
            frames,
            bins,
            taps,
            channels,
            target,
            zone,
        })
    }

    /// Filter that passes every channel through unchanged.
    pub fn identity(frames: usize, bins: usize, taps: usize, channels: usize) -> Result<Self> {
        let mut c = Self::zeros(frames, bins, taps, channels, Target::Speech, 0)?;
        for t in 0..frames {
            for f in 0..bins {
                for ch in 0..channels {
                    let i = c.index(t, f, taps / 2, ch);
                    c.coeffs[i] = Complex64::new(1.0, 0.0);
                }
            }
        }
        Ok(c)
    }

    /// Single-tap filter from a real `(t, f)` mask replicated over channels.
    pub fn from_mask(mask: &[f64], frames: usize, bins: usize, channels: usize) -> Result<Self> {
        if mask.len() != frames * bins {
            return Err(Error::Shape(format!(
                "mask of {} values for {frames}x{bins} grid",
                mask.len()
            )));
        }
        let mut c = Self::zeros(frames, bins, 1, channels, Target::Speech, 0)?;
        for (tf, &m) in mask.iter().enumerate() {
            for ch in 0..channels {
                c.coeffs[tf * channels + ch] = Complex64::new(m, 0.0);
            }
        }
        Ok(c)
    }

    pub fn half_width(&self) -> usize {
        self.taps / 2
    }

    #[inline]
    pub fn index(&self, t: usize, f: usize, tap: usize, ch: usize) -> usize {
        ((t * self.bins + f) * self.taps + tap) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, t: usize, f: usize, tap: usize, ch: usize) -> Complex64 {
        self.coeffs[self.index(t, f, tap, ch)]
    }
}

/// Filter an already stacked `M+1` channel spectrogram.
pub fn apply_crf_stacked(stacked: &Spectrogram, crf: &ComplexRatioFilter) -> Result<Spectrogram> {
    let (c_n, t_n, f_n) = (
        stacked.num_channels(),
        stacked.num_frames(),
        stacked.num_bins(),
    );
    if crf.channels != c_n || crf.frames != t_n || crf.bins != f_n {
        return Err(Error::Shape(format!(
            "filter is {}ch x {}t x {}f, input is {c_n}ch x {t_n}t x {f_n}f",
            crf.channels, crf.frames, crf.bins
        )));
    }
    let k = crf.half_width() as isize;
    let mut out = stacked.zeros_like(c_n);
    out.data_mut()
        .par_chunks_mut(f_n)
        .enumerate()
        .for_each(|(row, dst)| {
            let (c, t) = (row / t_n, row % t_n);
            for (f, d) in dst.iter_mut().enumerate() {
                let mut acc = ZERO;
                for tap in 0..crf.taps {
                    let src = t as isize + tap as isize - k;
                    if src < 0 || src >= t_n as isize {
                        continue;
                    }
                    acc += crf.get(t, f, tap, c) * stacked.get(c, src as usize, f);
                }
                *d = acc;
            }
        });
    Ok(out)
}

/// Apply a cRF to the stacked `[mix, echo]` input.
pub fn apply_crf(
    mix: &Spectrogram,
    echo: &Spectrogram,
    crf: &ComplexRatioFilter,
) -> Result<Spectrogram> {
    if echo.num_channels() != 1 {
        return Err(Error::Shape(format!(
            "echo reference must have one channel, got {}",
            echo.num_channels()
        )));
    }
    if crf.channels != mix.num_channels() + 1 {
        return Err(Error::Shape(format!(
            "filter has {} channels, stacked input has {}",
            crf.channels,
            mix.num_channels() + 1
        )));
    }
    apply_crf_stacked(&Spectrogram::stack(&[mix, echo])?, crf)
}

/// Regularized least-squares cRF mapping `stacked` to `target` channel by
/// channel. Each bin has a single equation, so the solution is the
/// minimum-norm ridge solution `a = conj(y) s / (|y|^2 + lambda)` with
/// `lambda` tied to the centre-tap power.
pub fn fit_crf(
    stacked: &Spectrogram,
    target_spec: &Spectrogram,
    taps: usize,
    target: Target,
    zone: usize,
) -> Result<ComplexRatioFilter> {
    if !stacked.same_grid(target_spec) || stacked.num_channels() != target_spec.num_channels() {
        return Err(Error::Shape(
            "target and input spectrograms differ in shape".into(),
        ));
    }
    let (c_n, t_n, f_n) = (
        stacked.num_channels(),
        stacked.num_frames(),
        stacked.num_bins(),
    );
    let mut crf = ComplexRatioFilter::zeros(t_n, f_n, taps, c_n, target, zone)?;
    let k = (taps / 2) as isize;
    let row_len = f_n * taps * c_n;
    crf.coeffs
        .par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(t, row)| {
            let mut y = vec![ZERO; taps];
            for f in 0..f_n {
                for c in 0..c_n {
                    let mut gram = 0.0;
                    for (tap, yv) in y.iter_mut().enumerate() {
                        let src = t as isize + tap as isize - k;
                        *yv = if src < 0 || src >= t_n as isize {
                            ZERO
                        } else {
                            stacked.get(c, src as usize, f)
                        };
                        gram += yv.norm_sqr();
                    }
                    let centre = y[taps / 2].norm_sqr();
                    let denom = gram + LS_REGULARIZATION * centre;
                    if denom <= GRAM_FLOOR {
                        continue;
                    }
                    let gain = target_spec.get(c, t, f) / denom;
                    for (tap, yv) in y.iter().enumerate() {
                        row[(f * taps + tap) * c_n + c] = yv.conj() * gain;
                    }
                }
            }
        });
    Ok(crf)
}

/// Ground-truth `M+1` channel target for a zone: the speech image with a
/// silent echo channel, or everything else (interferers, echo, noise)
/// alongside the echo reference itself.
pub fn ground_truth_target(
    mix: &Spectrogram,
    echo: &Spectrogram,
    zone_image: &Spectrogram,
    target: Target,
) -> Result<Spectrogram> {
    if zone_image.num_channels() != mix.num_channels() {
        return Err(Error::Shape(
            "zone image and mixture differ in channel count".into(),
        ));
    }
    match target {
        Target::Speech => Spectrogram::stack(&[zone_image, &echo.zeros_like(1)]),
        Target::Noise => Spectrogram::stack(&[&mix.sub(zone_image)?, echo]),
    }
}

/// Oracle cRF for one zone of a rendered scene, fitted against the exact
/// component images.
pub fn oracle_crf(
    render: &SceneRender,
    cfg: &StftConfig,
    zone: usize,
    target: Target,
    taps: usize,
) -> Result<ComplexRatioFilter> {
    let image = render
        .targets
        .get(zone)
        .ok_or(Error::MissingGroundTruth(format!(
            "no target image for zone {zone}"
        )))?;
    let mix = stft(&render.mixture, cfg)?;
    let echo = stft(&render.echo_ref, cfg)?;
    let truth = ground_truth_target(&mix, &echo, &stft(image, cfg)?, target)?;
    fit_crf(
        &Spectrogram::stack(&[&mix, &echo])?,
        &truth,
        taps,
        target,
        zone,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Waveform;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_spec(channels: usize, seed: u64) -> Spectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Waveform::new(
            (0..channels)
                .map(|_| (0..3000).map(|_| rng.random_range(-0.5..0.5)).collect())
                .collect(),
            16000,
        )
        .unwrap();
        stft(&w, &StftConfig::default()).unwrap()
    }

    fn max_diff(a: &Spectrogram, b: &Spectrogram) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_filter_reproduces_input() {
        let mix = noise_spec(2, 1);
        let echo = noise_spec(1, 2);
        let crf = ComplexRatioFilter::identity(mix.num_frames(), mix.num_bins(), 1, 3).unwrap();
        let out = apply_crf(&mix, &echo, &crf).unwrap();
        assert_eq!(out, Spectrogram::stack(&[&mix, &echo]).unwrap());
        let crf3 = ComplexRatioFilter::identity(mix.num_frames(), mix.num_bins(), 3, 3).unwrap();
        assert_eq!(apply_crf(&mix, &echo, &crf3).unwrap(), out);
    }

    #[test]
    fn real_mask_is_masking() {
        let mix = noise_spec(2, 3);
        let echo = noise_spec(1, 4);
        let (t_n, f_n) = (mix.num_frames(), mix.num_bins());
        let mask: Vec<f64> = (0..t_n * f_n).map(|i| (i % 7) as f64 / 7.0).collect();
        let crf = ComplexRatioFilter::from_mask(&mask, t_n, f_n, 3).unwrap();
        let out = apply_crf(&mix, &echo, &crf).unwrap();
        let stacked = Spectrogram::stack(&[&mix, &echo]).unwrap();
        for c in 0..3 {
            for t in 0..t_n {
                for f in 0..f_n {
                    assert_eq!(out.get(c, t, f), stacked.get(c, t, f) * mask[t * f_n + f]);
                }
            }
        }
    }

    #[test]
    fn last_tap_delays_by_one_frame() {
        let mix = noise_spec(2, 5);
        let echo = noise_spec(1, 6);
        let (t_n, f_n) = (mix.num_frames(), mix.num_bins());
        let mut crf = ComplexRatioFilter::zeros(t_n, f_n, 3, 3, Target::Speech, 0).unwrap();
        for t in 0..t_n {
            for f in 0..f_n {
                for c in 0..3 {
                    let i = crf.index(t, f, 2, c);
                    crf.coeffs[i] = Complex64::new(1.0, 0.0);
                }
            }
        }
        let out = apply_crf(&mix, &echo, &crf).unwrap();
        let stacked = Spectrogram::stack(&[&mix, &echo]).unwrap();
        for c in 0..3 {
            for f in 0..f_n {
                for t in 0..t_n {
                    let expect = if t + 1 < t_n {
                        stacked.get(c, t + 1, f)
                    } else {
                        ZERO
                    };
                    assert_eq!(out.get(c, t, f), expect);
                }
            }
        }
    }

    #[test]
    fn linear_in_input_and_filter() {
        let a = noise_spec(3, 7);
        let b = noise_spec(3, 8);
        let (t_n, f_n) = (a.num_frames(), a.num_bins());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut crf = ComplexRatioFilter::zeros(t_n, f_n, 3, 3, Target::Noise, 1).unwrap();
        crf.coeffs.iter_mut().for_each(|v| {
            *v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let alpha = Complex64::new(0.3, -1.2);
        let mut sum = a.scaled(alpha);
        sum.data_mut()
            .iter_mut()
            .zip(b.data())
            .for_each(|(x, y)| *x += y);
        let lhs = apply_crf_stacked(&sum, &crf).unwrap();
        let mut rhs = apply_crf_stacked(&a, &crf).unwrap().scaled(alpha);
        let fb = apply_crf_stacked(&b, &crf).unwrap();
        rhs.data_mut()
            .iter_mut()
            .zip(fb.data())
            .for_each(|(x, y)| *x += y);
        assert!(max_diff(&lhs, &rhs) < 1e-9);

        let mut crf2 = crf.clone();
        crf2.coeffs.iter_mut().for_each(|v| *v *= 2.0);
        let doubled = apply_crf_stacked(&a, &crf2).unwrap();
        let single = apply_crf_stacked(&a, &crf).unwrap();
        assert!(max_diff(&doubled, &single.scaled(Complex64::new(2.0, 0.0))) < 1e-12);
    }

    #[test]
    fn shape_mismatches() {
        let mix = noise_spec(2, 10);
        let echo = noise_spec(1, 11);
        let crf = ComplexRatioFilter::identity(mix.num_frames(), mix.num_bins(), 3, 2).unwrap();
        assert!(apply_crf(&mix, &echo, &crf).is_err());
        assert!(apply_crf(&mix, &mix, &crf).is_err());
        assert!(ComplexRatioFilter::zeros(2, 2, 2, 3, Target::Speech, 0).is_err());
    }

    #[test]
    fn fit_scale_law_and_residual_order() {
        let stacked = noise_spec(3, 12);
        let target = noise_spec(3, 13);
        let a = fit_crf(&stacked, &target, 3, Target::Speech, 0).unwrap();
        let doubled = stacked.scaled(Complex64::new(2.0, 0.0));
        let b = fit_crf(&doubled, &target, 3, Target::Speech, 0).unwrap();
        for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
            assert!((x - 2.0 * y).norm() <= 1e-12 * x.norm().max(1e-12));
        }
        let out_a = apply_crf_stacked(&stacked, &a).unwrap();
        let out_b = apply_crf_stacked(&doubled, &b).unwrap();
        assert!(max_diff(&out_a, &out_b) < 1e-9);

        let one = fit_crf(&stacked, &target, 1, Target::Speech, 0).unwrap();
        let res = |crf: &ComplexRatioFilter| -> f64 {
            let est = apply_crf_stacked(&stacked, crf).unwrap();
            est.data()
                .iter()
                .zip(target.data())
                .map(|(e, s)| (e - s).norm_sqr())
                .sum()
        };
        assert!(res(&a) <= res(&one));
    }
}
