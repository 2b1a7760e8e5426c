use rayon::prelude::*;

use super::BeamformerWeights;
use crate::error::{Error, Result};
use crate::estimator::CovarianceSeries;
use crate::linalg::{invert_hermitian, matmul, trace, C64, ZERO};

/// Diagonal loading relative to the mean noise eigenvalue.
const LOADING: f64 = 1e-6;
/// Loading floor relative to the speech covariance, used when the noise
/// covariance vanishes.
const LOADING_FLOOR: f64 = 1e-10;
const MIN_DENOMINATOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MvdrSolution {
    pub w: Vec<C64>,
    /// True when the bin had no usable target energy and `w` is zero.
    pub zeroed: bool,
}

/// `w = (phi_z + delta I)^-1 phi_s u_ref / tr((phi_z + delta I)^-1 phi_s)`.
pub fn mvdr_bin(phi_s: &[C64], phi_z: &[C64], n: usize, ref_ch: usize) -> MvdrSolution {
    let zero = || MvdrSolution {
        w: vec![ZERO; n],
        zeroed: true,
    };
    let tz = trace(phi_z, n).re.max(0.0);
    let ts = trace(phi_s, n).re.max(0.0);
    let delta = (LOADING * tz / n as f64)
        .max(LOADING_FLOOR * ts / n as f64)
        .max(f64::MIN_POSITIVE);
    let mut loaded = phi_z.to_vec();
    for i in 0..n {
        loaded[i * n + i] += delta;
    }
    let Ok(inv) = invert_hermitian(&loaded, n) else {
        return zero();
    };
    let num = matmul(&inv, phi_s, n);
    let den = trace(&num, n);
    if !(den.norm() >= MIN_DENOMINATOR) {
        return zero();
    }
    MvdrSolution {
        w: (0..n).map(|i| num[i * n + ref_ch] / den).collect(),
        zeroed: false,
    }
}

/// Per-bin MVDR weights for one zone, placed on the centre tap of a
/// `taps`-wide filter. Both covariance series must be raw (un-normalized)
/// and already smoothed as desired.
pub fn oracle_mvdr_weights(
    spk_scm: &CovarianceSeries,
    nz_scm: &CovarianceSeries,
    ref_ch: usize,
    taps: usize,
) -> Result<BeamformerWeights> {
    if (spk_scm.frames, spk_scm.bins, spk_scm.dim) != (nz_scm.frames, nz_scm.bins, nz_scm.dim) {
        return Err(Error::Shape(
            "speech and noise covariances differ in shape".into(),
        ));
    }
    let n = spk_scm.dim;
    if ref_ch >= n {
        return Err(Error::Shape(format!(
            "reference channel {ref_ch} out of range for {n}"
        )));
    }
    let (t_n, f_n) = (spk_scm.frames, spk_scm.bins);
    let mut out = BeamformerWeights::zeros(1, t_n, f_n, taps, n)?;
    let centre = taps / 2;
    let solutions: Vec<MvdrSolution> = (0..t_n * f_n)
        .into_par_iter()
        .map(|tf| {
            let (t, f) = (tf / f_n, tf % f_n);
            mvdr_bin(spk_scm.get(t, f), nz_scm.get(t, f), n, ref_ch)
        })
        .collect();
    for (tf, sol) in solutions.into_iter().enumerate() {
        let (t, f) = (tf / f_n, tf % f_n);
        for (c, v) in sol.w.into_iter().enumerate() {
            let i = out.index(0, t, f, centre, c);
            out.w[i] = v;
        }
        out.zeroed[tf] = sol.zeroed;
    }
    Ok(out)
}
