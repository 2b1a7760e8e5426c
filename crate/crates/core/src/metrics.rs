//! Separation quality metrics.

use crate::error::{Error, Result};
use crate::signal::{stft, StftConfig, Waveform};

/// Reports are clamped to `±METRIC_CAP_DB` so identical or null estimates
/// stay finite.
pub const METRIC_CAP_DB: f64 = 90.0;

fn mono<'a>(w: &'a Waveform, what: &str) -> Result<&'a [f64]> {
    if w.num_channels() != 1 {
        return Err(Error::Shape(format!(
            "{what} must be mono, got {} channels",
            w.num_channels()
        )));
    }
    Ok(w.channel(0))
}

fn check_pair<'a>(est: &'a Waveform, reference: &'a Waveform) -> Result<(&'a [f64], &'a [f64])> {
    let e = mono(est, "estimate")?;
    let r = mono(reference, "reference")?;
    if e.len() != r.len() {
        return Err(Error::Shape(format!(
            "estimate has {} samples, reference {}",
            e.len(),
            r.len()
        )));
    }
    if e.is_empty() {
        return Err(Error::EmptyAudio("metric inputs are empty".into()));
    }
    Ok((e, r))
}

fn zero_mean(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `10 log10(num / den)`, clamped; `0 / 0` reads as the lower bound.
fn ratio_db(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        return -METRIC_CAP_DB;
    }
    if den <= 0.0 {
        return METRIC_CAP_DB;
    }
    (10.0 * (num / den).log10()).clamp(-METRIC_CAP_DB, METRIC_CAP_DB)
}

/// Scale-invariant SNR in dB after removing the mean of both signals.
pub fn si_snr(est: &Waveform, reference: &Waveform) -> Result<f64> {
    let (e, r) = check_pair(est, reference)?;
    let raw = energy(r);
    let e = zero_mean(e);
    let r = zero_mean(r);
    let rr = energy(&r);
    // mean removal leaves rounding residue on constant signals
    if rr <= 1e-24 * raw {
        return Err(Error::Silent("si-snr reference has no energy".into()));
    }
    let scale = e.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / rr;
    let target: Vec<f64> = r.iter().map(|v| v * scale).collect();
    let resid: f64 = e.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(ratio_db(energy(&target), resid))
}

/// Plain signal-to-distortion ratio, `10 log10(|ref|^2 / |est - ref|^2)`.
pub fn sdr(est: &Waveform, reference: &Waveform) -> Result<f64> {
    let (e, r) = check_pair(est, reference)?;
    let rr = energy(r);
    if rr <= 0.0 {
        return Err(Error::Silent("sdr reference has no energy".into()));
    }
    let err: f64 = e.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(ratio_db(rr, err))
}

/// Mean squared difference of the complex STFTs, averaged over real and
/// imaginary parts.
pub fn spectral_mse(est: &Waveform, reference: &Waveform, cfg: &StftConfig) -> Result<f64> {
    check_pair(est, reference)?;
    let a = stft(est, cfg)?;
    let b = stft(reference, cfg)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum();
    Ok(sum / (2 * a.data().len()) as f64)
}

/// Training-style objective: per zone, `-si_snr + spectral_mse`, summed.
pub fn loss_value(est_zones: &[Waveform], ref_zones: &[Waveform], cfg: &StftConfig) -> Result<f64> {
    if est_zones.len() != ref_zones.len() {
        return Err(Error::Shape(format!(
            "{} estimates for {} references",
            est_zones.len(),
            ref_zones.len()
        )));
    }
    est_zones
        .iter()
        .zip(ref_zones)
        .map(|(e, r)| Ok(-si_snr(e, r)? + spectral_mse(e, r, cfg)?))
        .sum()
}
