//! Multi-frame beamforming weights: MVDR solvers, the recurrent weight
//! estimator, application to the stacked input and the end-to-end pipeline.

mod mvdr;
mod pipeline;
mod rnn;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{C64, ONE, ZERO};
use crate::signal::Spectrogram;

pub use mvdr::{mvdr_bin, oracle_mvdr_weights, MvdrSolution};
pub use pipeline::{
    default_stub_weights, estimate_weights, separate, Mode, SeparateConfig, Separation,
    SeparationInput, StubConfig,
};
pub use rnn::{rnn_bf_stub, RnnBfConfig};

pub const DEFAULT_BF_TAPS: usize = 5;

/// Complex weights laid out `(zone, t, f, tap, channel)`; tap `i` acts on
/// frame `t + i - taps / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerWeights {
    pub w: Vec<C64>,
    pub zones: usize,
    pub frames: usize,
    pub bins: usize,
    pub taps: usize,
    pub channels: usize,
    /// `(zone, t, f)` bins whose weights were zeroed for lack of target energy.
    pub zeroed: Vec<bool>,
}

impl BeamformerWeights {
    pub fn zeros(
        zones: usize,
        frames: usize,
        bins: usize,
        taps: usize,
        channels: usize,
    ) -> Result<Self> {
        if taps.is_multiple_of(2) {
            return Err(Error::Shape(format!("tap count must be odd, got {taps}")));
        }
        Ok(Self {
            w: vec![ZERO; zones * frames * bins * taps * channels],
            zones,
            frames,
            bins,
            taps,
            channels,
            zeroed: vec![false; zones * frames * bins],
        })
    }

    /// Every zone selects `ref_ch` at the centre tap.
    pub fn reference_selector(
        zones: usize,
        frames: usize,
        bins: usize,
        taps: usize,
        channels: usize,
        ref_ch: usize,
    ) -> Result<Self> {
        let mut w = Self::zeros(zones, frames, bins, taps, channels)?;
        for z in 0..zones {
            for t in 0..frames {
                for f in 0..bins {
                    let i = w.index(z, t, f, taps / 2, ref_ch);
                    w.w[i] = ONE;
                }
            }
        }
        Ok(w)
    }

    #[inline]
    pub fn index(&self, zone: usize, t: usize, f: usize, tap: usize, ch: usize) -> usize {
        (((zone * self.frames + t) * self.bins + f) * self.taps + tap) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, zone: usize, t: usize, f: usize, tap: usize, ch: usize) -> C64 {
        self.w[self.index(zone, t, f, tap, ch)]
    }

    /// Contiguous block of one zone.
    pub fn zone(&self, z: usize) -> &[C64] {
        let n = self.frames * self.bins * self.taps * self.channels;
        &self.w[z * n..(z + 1) * n]
    }

    /// Concatenate single-zone weight sets.
    pub fn from_zones(parts: Vec<BeamformerWeights>) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("no zones to combine".into()))?;
        let (t_n, f_n, k_n, c_n) = (first.frames, first.bins, first.taps, first.channels);
        let mut out = Self {
            w: Vec::new(),
            zones: 0,
            frames: t_n,
            bins: f_n,
            taps: k_n,
            channels: c_n,
            zeroed: Vec::new(),
        };
        for p in parts {
            if (p.frames, p.bins, p.taps, p.channels) != (t_n, f_n, k_n, c_n) {
                return Err(Error::Shape("zone weight sets differ in shape".into()));
            }
            out.zones += p.zones;
            out.w.extend(p.w);
            out.zeroed.extend(p.zeroed);
        }
        Ok(out)
    }

    /// Real features per bin: `zones x taps x channels x {re, im}`.
    pub fn real_depth(&self) -> usize {
        self.zones * self.taps * self.channels * 2
    }

    /// Paired real layout `(t, f, d)` used by the band transforms.
    pub fn to_real(&self) -> Vec<f64> {
        let d_n = self.real_depth();
        let per_zone = self.taps * self.channels;
        let mut out = vec![0.0; self.frames * self.bins * d_n];
        out.par_chunks_mut(d_n).enumerate().for_each(|(tf, o)| {
            let (t, f) = (tf / self.bins, tf % self.bins);
            for z in 0..self.zones {
                for k in 0..per_zone {
                    let v = self.w[((z * self.frames + t) * self.bins + f) * per_zone + k];
                    o[(z * per_zone + k) * 2] = v.re;
                    o[(z * per_zone + k) * 2 + 1] = v.im;
                }
            }
        });
        out
    }

    /// Inverse of [`to_real`](Self::to_real); zeroed flags are kept from `self`.
    pub fn with_real(&self, real: &[f64]) -> Result<Self> {
        let d_n = self.real_depth();
        if real.len() != self.frames * self.bins * d_n {
            return Err(Error::Shape(format!(
                "{} real values for {} x {} x {d_n} weights",
                real.len(),
                self.frames,
                self.bins
            )));
        }
        let per_zone = self.taps * self.channels;
        let mut out = self.clone();
        let block = self.frames * self.bins * per_zone;
        out.w.par_chunks_mut(block).enumerate().for_each(|(z, wz)| {
            for (i, v) in wz.iter_mut().enumerate() {
                let (tf, k) = (i / per_zone, i % per_zone);
                let base = tf * d_n + (z * per_zone + k) * 2;
                *v = C64::new(real[base], real[base + 1]);
            }
        });
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.w.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// `S_zone(t, f) = sum_tap w(zone, t, f, tap)^H stacked(t + tap - K, f)` for
/// every zone; frames outside the signal count as zero.
pub fn apply_weights(
    mix: &Spectrogram,
    echo: &Spectrogram,
    w: &BeamformerWeights,
) -> Result<Vec<Spectrogram>> {
    if echo.num_channels() != 1 {
        return Err(Error::Shape(format!(
            "echo reference must have one channel, got {}",
            echo.num_channels()
        )));
    }
    let stacked = Spectrogram::stack(&[mix, echo])?;
    apply_weights_stacked(&stacked, w)
}

pub fn apply_weights_stacked(
    stacked: &Spectrogram,
    w: &BeamformerWeights,
) -> Result<Vec<Spectrogram>> {
    let (c_n, t_n, f_n) = (
        stacked.num_channels(),
        stacked.num_frames(),
        stacked.num_bins(),
    );
    if w.channels != c_n || w.frames != t_n || w.bins != f_n {
        return Err(Error::Shape(format!(
            "weights are {}ch x {}t x {}f, input is {c_n}ch x {t_n}t x {f_n}f",
            w.channels, w.frames, w.bins
        )));
    }
    let half = (w.taps / 2) as isize;
    (0..w.zones)
        .map(|z| {
            let mut out = stacked.zeros_like(1);
            out.data_mut()
                .par_chunks_mut(f_n)
                .enumerate()
                .for_each(|(t, row)| {
                    for (f, o) in row.iter_mut().enumerate() {
                        let mut acc = ZERO;
                        for tap in 0..w.taps {
                            let src = t as isize + tap as isize - half;
                            if src < 0 || src >= t_n as isize {
                                continue;
                            }
                            for c in 0..c_n {
                                acc +=
                                    w.get(z, t, f, tap, c).conj() * stacked.get(c, src as usize, f);
                            }
                        }
                        *o = acc;
                    }
                });
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{stft, StftConfig, Waveform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_spec(channels: usize, seed: u64) -> Spectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Waveform::new(
            (0..channels)
                .map(|_| (0..2500).map(|_| rng.random_range(-0.5..0.5)).collect())
                .collect(),
            16000,
        )
        .unwrap();
        stft(&w, &StftConfig::default()).unwrap()
    }

    fn random_weights(zones: usize, t: usize, f: usize, seed: u64) -> BeamformerWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = BeamformerWeights::zeros(zones, t, f, 5, 3).unwrap();
        w.w.iter_mut()
            .for_each(|v| *v = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        w
    }

    #[test]
    fn reference_selector_passes_channel() {
        let mix = noise_spec(2, 1);
        let echo = noise_spec(1, 2);
        let w = BeamformerWeights::reference_selector(4, mix.num_frames(), mix.num_bins(), 5, 3, 0)
            .unwrap();
        let out = apply_weights(&mix, &echo, &w).unwrap();
        assert_eq!(out.len(), 4);
        for o in &out {
            assert_eq!(o.data(), mix.channel(0));
        }
        let w = BeamformerWeights::reference_selector(1, mix.num_frames(), mix.num_bins(), 5, 3, 2)
            .unwrap();
        let out = apply_weights(&mix, &echo, &w).unwrap();
        assert_eq!(out[0].data(), echo.data());
    }

    #[test]
    fn linear_in_input_and_weights() {
        let mix = noise_spec(2, 3);
        let echo = noise_spec(1, 4);
        let w = random_weights(2, mix.num_frames(), mix.num_bins(), 5);
        let alpha = C64::new(-0.7, 0.4);
        let a = apply_weights(&mix.scaled(alpha), &echo.scaled(alpha), &w).unwrap();
        let b = apply_weights(&mix, &echo, &w).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (p, q) in x.data().iter().zip(y.data()) {
                assert!((p - q * alpha).norm() < 1e-9);
            }
        }
        let mut w2 = w.clone();
        w2.w.iter_mut().for_each(|v| *v *= 3.0);
        let c = apply_weights(&mix, &echo, &w2).unwrap();
        for (x, y) in c.iter().zip(&b) {
            for (p, q) in x.data().iter().zip(y.data()) {
                assert!((p - q * 3.0).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_echo_weights_match_mixture_only() {
        let mix = noise_spec(2, 6);
        let echo = noise_spec(1, 7);
        let mut w = random_weights(1, mix.num_frames(), mix.num_bins(), 8);
        for i in (2..w.w.len()).step_by(3) {
            w.w[i] = ZERO;
        }
        let with_echo = apply_weights(&mix, &echo, &w).unwrap();
        let without = apply_weights(&mix, &echo.zeros_like(1), &w).unwrap();
        assert_eq!(with_echo, without);
    }

    #[test]
    fn real_layout_round_trip() {
        let w = random_weights(3, 4, 6, 9);
        let real = w.to_real();
        assert_eq!(real.len(), 4 * 6 * w.real_depth());
        assert_eq!(w.with_real(&real).unwrap(), w);
        assert!(w.with_real(&real[1..]).is_err());
        let parts = vec![random_weights(1, 4, 6, 1), random_weights(2, 4, 6, 2)];
        let joined = BeamformerWeights::from_zones(parts.clone()).unwrap();
        assert_eq!(joined.zones, 3);
        assert_eq!(joined.zone(1), parts[1].zone(0));
    }

    #[test]
    fn shape_errors() {
        let mix = noise_spec(2, 10);
        let echo = noise_spec(1, 11);
        let w = random_weights(1, mix.num_frames() + 1, mix.num_bins(), 12);
        assert!(apply_weights(&mix, &echo, &w).is_err());
        assert!(apply_weights(&mix, &mix, &w).is_err());
        assert!(BeamformerWeights::zeros(1, 1, 1, 4, 3).is_err());
    }
}
