use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Target;
use crate::error::{Error, Result};
use crate::linalg::{C64, ZERO};
use crate::signal::Spectrogram;
use crate::weights::WeightBundle;

pub const DEFAULT_RECURSIVE_ALPHA: f64 = 0.95;

/// Frame-wise `(M+1) x (M+1)` covariance matrices, laid out `(t, f, i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSeries {
    pub phi: Vec<C64>,
    pub frames: usize,
    pub bins: usize,
    pub dim: usize,
    pub kind: Target,
    pub zone: usize,
}

/// How per-frame covariances are averaged over time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Smoothing {
    /// Raw per-frame outer products.
    Instantaneous,
    /// The mean over all frames, repeated for every frame.
    TimeInvariant,
    /// `phi(t) = alpha phi(t-1) + (1 - alpha) inst(t)`, starting from zero.
    Recursive { alpha: f64 },
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::Recursive {
            alpha: DEFAULT_RECURSIVE_ALPHA,
        }
    }
}

/// Raw covariance `s s^H` of every time-frequency bin.
pub fn compute_scm(est: &Spectrogram, kind: Target, zone: usize) -> CovarianceSeries {
    let (c_n, t_n, f_n) = (est.num_channels(), est.num_frames(), est.num_bins());
    let block = c_n * c_n;
    let mut phi = vec![ZERO; t_n * f_n * block];
    phi.par_chunks_mut(f_n * block)
        .enumerate()
        .for_each(|(t, row)| {
            let mut v = vec![ZERO; c_n];
            for (f, m) in row.chunks_mut(block).enumerate() {
                for (c, vc) in v.iter_mut().enumerate() {
                    *vc = est.get(c, t, f);
                }
                for i in 0..c_n {
                    for j in 0..c_n {
                        m[i * c_n + j] = v[i] * v[j].conj();
                    }
                }
            }
        });
    CovarianceSeries {
        phi,
        frames: t_n,
        bins: f_n,
        dim: c_n,
        kind,
        zone,
    }
}

impl CovarianceSeries {
    fn block(&self) -> usize {
        self.dim * self.dim
    }

    pub fn get(&self, t: usize, f: usize) -> &[C64] {
        let b = self.block();
        let o = (t * self.bins + f) * b;
        &self.phi[o..o + b]
    }

    /// Time-averaged copy. Each bin is processed independently with a fixed
    /// frame order.
    pub fn smoothed(&self, mode: Smoothing) -> Result<CovarianceSeries> {
        let b = self.block();
        let (t_n, f_n) = (self.frames, self.bins);
        let mut out = self.clone();
        match mode {
            Smoothing::Instantaneous => {}
            Smoothing::TimeInvariant => {
                let mut mean = vec![ZERO; f_n * b];
                for t in 0..t_n {
                    for (m, v) in mean
                        .iter_mut()
                        .zip(&self.phi[t * f_n * b..(t + 1) * f_n * b])
                    {
                        *m += v;
                    }
                }
                let scale = 1.0 / t_n.max(1) as f64;
                mean.iter_mut().for_each(|m| *m *= scale);
                out.phi
                    .par_chunks_mut(f_n * b)
                    .for_each(|row| row.copy_from_slice(&mean));
            }
            Smoothing::Recursive { alpha } => {
                if !(0.0..1.0).contains(&alpha) {
                    return Err(Error::Config(format!(
                        "recursive smoothing factor must lie in [0, 1), got {alpha}"
                    )));
                }
                let mut state = vec![ZERO; f_n * b];
                for t in 0..t_n {
                    let row = &mut out.phi[t * f_n * b..(t + 1) * f_n * b];
                    for (s, v) in state.iter_mut().zip(row.iter_mut()) {
                        *s = *s * alpha + *v * (1.0 - alpha);
                        *v = *s;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Largest `|phi - phi^H|` relative to the Frobenius norm, over all bins.
    pub fn max_hermitian_error(&self) -> f64 {
        let d = self.dim;
        self.phi
            .chunks(self.block())
            .map(|m| {
                let norm = crate::linalg::fro_norm(m);
                let mut err = 0.0f64;
                for i in 0..d {
                    for j in 0..d {
                        err = err.max((m[i * d + j] - m[j * d + i].conj()).norm());
                    }
                }
                if norm > 0.0 {
                    err / norm
                } else {
                    err
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Per-bin layer normalization over the `2 (M+1)^2` real scalars of a
/// covariance matrix: all real parts row-major, then all imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl LayerNorm {
    pub const GAMMA: &'static str = "scm.norm.gamma";
    pub const BETA: &'static str = "scm.norm.beta";

    pub fn identity(dim: usize) -> Self {
        let n = 2 * dim * dim;
        Self {
            gamma: vec![1.0; n],
            beta: vec![0.0; n],
            eps: 1e-12,
        }
    }

    /// Affine parameters from a bundle; identity when the bundle has none.
    pub fn from_bundle(bundle: &WeightBundle, dim: usize) -> Result<Self> {
        let n = 2 * dim * dim;
        let mut ln = Self::identity(dim);
        match (bundle.get(Self::GAMMA), bundle.get(Self::BETA)) {
            (None, None) => {}
            (Some(_), Some(_)) => {
                ln.gamma = bundle.expect(Self::GAMMA, &[n])?.to_vec();
                ln.beta = bundle.expect(Self::BETA, &[n])?.to_vec();
            }
            _ => {
                return Err(Error::Bundle(
                    "layer norm needs both gamma and beta, or neither".into(),
                ))
            }
        }
        Ok(ln)
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    /// Normalize one matrix into `out` (length `2 d^2`).
    pub fn apply(&self, m: &[C64], out: &mut [f64]) {
        let n = m.len();
        for (i, v) in m.iter().enumerate() {
            out[i] = v.re;
            out[n + i] = v.im;
        }
        let len = (2 * n) as f64;
        let mean = out.iter().sum::<f64>() / len;
        let var = out.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / len;
        let inv = 1.0 / (var + self.eps).sqrt();
        for ((x, g), b) in out.iter_mut().zip(&self.gamma).zip(&self.beta) {
            *x = (*x - mean) * inv * g + b;
        }
    }

    /// Normalized features of every bin, laid out `(t, f, d)`.
    pub fn apply_series(&self, scm: &CovarianceSeries) -> Result<Vec<f64>> {
        let d = 2 * scm.dim * scm.dim;
        if d != self.features() {
            return Err(Error::Shape(format!(
                "layer norm expects {} features, covariance gives {d}",
                self.features()
            )));
        }
        let mut out = vec![0.0; scm.frames * scm.bins * d];
        out.par_chunks_mut(d)
            .zip(scm.phi.par_chunks(scm.dim * scm.dim))
            .for_each(|(o, m)| self.apply(m, o));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermitian_eigenvalues, trace};
    use crate::signal::StftConfig;
    use proptest::prelude::*;

    fn spec_from(values: &[C64], channels: usize, frames: usize) -> Spectrogram {
        let cfg = StftConfig::default();
        let f_n = cfg.num_bins();
        let mut s = Spectrogram::zeros(channels, frames, cfg, (frames - 1) * cfg.hop, 16000);
        for c in 0..channels {
            for t in 0..frames {
                for f in 0..f_n {
                    s.set(c, t, f, values[(c * frames + t) * f_n + f]);
                }
            }
        }
        s
    }

    #[test]
    fn unit_vector_gives_single_entry() {
        let cfg = StftConfig::default();
        let mut s = Spectrogram::zeros(3, 1, cfg, 0, 16000);
        s.set(0, 0, 5, C64::new(1.0, 0.0));
        let scm = compute_scm(&s, Target::Speech, 0);
        let m = scm.get(0, 5);
        assert_eq!(m[0], C64::new(1.0, 0.0));
        assert!(m[1..].iter().all(|v| *v == ZERO));
    }

    #[test]
    fn smoothing_modes() {
        let cfg = StftConfig::default();
        let mut s = Spectrogram::zeros(1, 3, cfg, 2 * cfg.hop, 16000);
        for t in 0..3 {
            s.set(0, t, 0, C64::new((t + 1) as f64, 0.0));
        }
        let scm = compute_scm(&s, Target::Noise, 0);
        let ti = scm.smoothed(Smoothing::TimeInvariant).unwrap();
        for t in 0..3 {
            assert!((ti.get(t, 0)[0].re - 14.0 / 3.0).abs() < 1e-12);
        }
        let rec = scm.smoothed(Smoothing::Recursive { alpha: 0.5 }).unwrap();
        let expect = [0.5, 0.5 * 0.5 + 0.5 * 4.0, 0.5 * 2.25 + 0.5 * 9.0];
        for (t, e) in expect.iter().enumerate() {
            assert!((rec.get(t, 0)[0].re - e).abs() < 1e-12);
        }
        assert!(scm.smoothed(Smoothing::Recursive { alpha: 1.0 }).is_err());
        assert_eq!(scm.smoothed(Smoothing::Instantaneous).unwrap(), scm);
    }

    #[test]
    fn layer_norm_statistics() {
        let ln = LayerNorm::identity(3);
        let m: Vec<C64> = (0..9)
            .map(|i| {
                C64::new(
                    (i as f64 * 0.37).sin() * 1e-3,
                    (i as f64 * 1.3).cos() * 2e-3,
                )
            })
            .collect();
        let mut out = vec![0.0; 18];
        ln.apply(&m, &mut out);
        let mean = out.iter().sum::<f64>() / 18.0;
        let var = out.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 18.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_bundle() {
        let mut b = WeightBundle::new();
        assert_eq!(
            LayerNorm::from_bundle(&b, 3).unwrap(),
            LayerNorm::identity(3)
        );
        b.insert(LayerNorm::GAMMA, vec![18], vec![2.0; 18]).unwrap();
        assert!(LayerNorm::from_bundle(&b, 3).is_err());
        b.insert(LayerNorm::BETA, vec![18], vec![0.5; 18]).unwrap();
        let ln = LayerNorm::from_bundle(&b, 3).unwrap();
        assert_eq!(ln.gamma[0], 2.0);
        assert!(LayerNorm::from_bundle(&b, 2).is_err());
    }

    proptest! {
        #[test]
        fn raw_scm_is_hermitian_psd_rank_one(
            vals in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3 * 2 * 257)
        ) {
            let values: Vec<C64> = vals.iter().map(|(r, i)| C64::new(*r, *i)).collect();
            let s = spec_from(&values, 3, 2);
            let scm = compute_scm(&s, Target::Speech, 0);
            prop_assert!(scm.max_hermitian_error() <= 1e-10);
            for t in 0..2 {
                for f in (0..257).step_by(16) {
                    let m = scm.get(t, f);
                    let tr = trace(m, 3).re;
                    let norm: f64 = (0..3).map(|c| s.get(c, t, f).norm_sqr()).sum();
                    prop_assert!((tr - norm).abs() <= 1e-9 * norm.max(1.0));
                    let eig = hermitian_eigenvalues(m, 3);
                    prop_assert!(eig[0] >= -1e-9 * tr.max(1e-300));
                    // rank one: only the top eigenvalue is non-negligible
                    prop_assert!(eig[1].abs() <= 1e-9 * tr.max(1e-300));
                }
            }
        }
    }
}
