use std::f64::consts::PI;

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rayon::prelude::*;

use super::{distance, CabinSpec, Position, SPEED_OF_SOUND};
use crate::error::{Error, Result};

/// Half-width of the windowed-sinc fractional delay kernel (8 taps total).
const SINC_HALF_WIDTH: i64 = 4;
const MIN_SOURCE_DISTANCE: f64 = 1e-3;

/// Impulse responses from one source to every microphone.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub taps: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

impl Rir {
    pub fn num_mics(&self) -> usize {
        self.taps.len()
    }

    pub fn len(&self) -> usize {
        self.taps.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;
/// `cos(pi m / 4)` and `sin(pi m / 4)` for kernel offsets `m = -3..=4`.
const KERNEL_COS: [f64; 8] = [
    -SQRT_HALF, 0.0, SQRT_HALF, 1.0, SQRT_HALF, 0.0, -SQRT_HALF, -1.0,
];
const KERNEL_SIN: [f64; 8] = [
    -SQRT_HALF, -1.0, -SQRT_HALF, 0.0, SQRT_HALF, 1.0, SQRT_HALF, 0.0,
];

/// Hann-windowed sinc impulse at a fractional `delay`. The kernel's sines and
/// cosines follow from one `sin_cos` of the fractional part by angle addition.
fn add_fractional_impulse(h: &mut [f64], delay: f64, gain: f64) {
    let base = delay.floor();
    let frac = delay - base;
    let base = base as i64;
    if frac == 0.0 {
        if base >= 0 && (base as usize) < h.len() {
            h[base as usize] += gain;
        }
        return;
    }
    let sin_pf = (PI * frac).sin();
    let (sin_q, cos_q) = (PI * frac / SINC_HALF_WIDTH as f64).sin_cos();
    for j in 0..8 {
        let m = j as i64 - SINC_HALF_WIDTH + 1;
        let i = base + m;
        if i < 0 || i as usize >= h.len() {
            continue;
        }
        let u = m as f64 - frac;
        // sin(pi (m - frac)) = -(-1)^m sin(pi frac)
        let sin_pu = if m % 2 == 0 { -sin_pf } else { sin_pf };
        let window = 0.5 * (1.0 + KERNEL_COS[j] * cos_q + KERNEL_SIN[j] * sin_q);
        h[i as usize] += gain * sin_pu / (PI * u) * window;
    }
}

/// Image-source impulse responses from `source` to every mic of `spec`.
///
/// Walls share one reflection coefficient (see [`CabinSpec::absorption`]).
/// The image order is whatever is needed to fill `1.2 * rt60` seconds; with
/// `rt60 == 0` only the direct path is rendered.
pub fn simulate_rir(spec: &CabinSpec, source: &Position) -> Result<Rir> {
    if !spec.is_inside(source) {
        return Err(Error::Geometry(format!(
            "source at {source:?} is outside cabin {:?}",
            spec.dims
        )));
    }
    for (m, mic) in spec.mics.iter().enumerate() {
        let d = distance(source, mic);
        if d < MIN_SOURCE_DISTANCE {
            return Err(Error::Geometry(format!(
                "source coincides with mic {m} (distance {d:.2e} m)"
            )));
        }
    }
    let taps = match spec.absorption()? {
        None => direct_path(&spec.mics, source, spec.sample_rate),
        Some(alpha) => image_source(
            spec.dims,
            spec.rt60,
            spec.sample_rate,
            &spec.mics,
            source,
            alpha,
        ),
    };
    Ok(Rir {
        taps,
        sample_rate: spec.sample_rate,
    })
}

fn direct_len(mics: &[Position], source: &Position, fs: f64) -> usize {
    let max_direct = mics
        .iter()
        .map(|m| distance(source, m) / SPEED_OF_SOUND * fs)
        .fold(0.0, f64::max);
    max_direct.ceil() as usize + SINC_HALF_WIDTH as usize + 1
}

fn direct_path(mics: &[Position], source: &Position, sample_rate: u32) -> Vec<Vec<f64>> {
    let fs = sample_rate as f64;
    let len = direct_len(mics, source, fs);
    mics.iter()
        .map(|mic| {
            let mut h = vec![0.0; len];
            let d = distance(source, mic);
            add_fractional_impulse(&mut h, d / SPEED_OF_SOUND * fs, 1.0 / (4.0 * PI * d));
            h
        })
        .collect()
}

fn image_source(
    dims: [f64; 3],
    rt60: f64,
    sample_rate: u32,
    mics: &[Position],
    source: &Position,
    alpha: f64,
) -> Vec<Vec<f64>> {
    let fs = sample_rate as f64;
    let beta = (1.0 - alpha).sqrt();
    let len = ((1.2 * rt60 * fs).ceil() as usize).max(direct_len(mics, source, fs));
    let max_dist = len as f64 / fs * SPEED_OF_SOUND;
    let max_dist2 = max_dist * max_dist;
    let order: [i64; 3] = std::array::from_fn(|a| (max_dist / (2.0 * dims[a])).ceil() as i64 + 1);
    let max_refl = 2 * (order[0] + order[1] + order[2]) as usize + 6;
    let beta_pow: Vec<f64> = (0..=max_refl).map(|r| beta.powi(r as i32)).collect();

    // One partial response per x-lattice index, summed in a fixed order below
    // so the result does not depend on the thread schedule.
    let partials: Vec<Vec<Vec<f64>>> = (-order[0]..=order[0])
        .into_par_iter()
        .map(|nx| {
            let mut taps = vec![vec![0.0; len]; mics.len()];
            for qx in 0..2i64 {
                let ix = (1 - 2 * qx) as f64 * source[0] + 2.0 * nx as f64 * dims[0];
                let rx = ((nx - qx).abs() + nx.abs()) as usize;
                for ny in -order[1]..=order[1] {
                    for qy in 0..2i64 {
                        let iy = (1 - 2 * qy) as f64 * source[1] + 2.0 * ny as f64 * dims[1];
                        let ry = ((ny - qy).abs() + ny.abs()) as usize;
                        let nearest = mics
                            .iter()
                            .map(|m| (ix - m[0]).powi(2) + (iy - m[1]).powi(2))
                            .fold(f64::INFINITY, f64::min);
                        if nearest > max_dist2 {
                            continue;
                        }
                        for nz in -order[2]..=order[2] {
                            for qz in 0..2i64 {
                                let iz =
                                    (1 - 2 * qz) as f64 * source[2] + 2.0 * nz as f64 * dims[2];
                                let rz = ((nz - qz).abs() + nz.abs()) as usize;
                                let gain_refl = beta_pow[rx + ry + rz];
                                for (mic, h) in mics.iter().zip(taps.iter_mut()) {
                                    let d = distance(&[ix, iy, iz], mic);
                                    if d > max_dist {
                                        continue;
                                    }
                                    let delay = d / SPEED_OF_SOUND * fs;
                                    add_fractional_impulse(h, delay, gain_refl / (4.0 * PI * d));
                                }
                            }
                        }
                    }
                }
            }
            taps
        })
        .collect();

    let mut taps = vec![vec![0.0; len]; mics.len()];
    for part in &partials {
        for (acc, p) in taps.iter_mut().zip(part) {
            for (a, v) in acc.iter_mut().zip(p) {
                *a += v;
            }
        }
    }
    taps
}

const CALIBRATION_ROUNDS: usize = 4;
const CALIBRATION_TOLERANCE: f64 = 0.01;

type CalibrationKey = [u64; 5];

/// Wall absorption whose rendered impulse response decays by 60 dB in `rt60`.
///
/// Starts from the decay of the image lattice's incoherent energy, then
/// rescales the per-reflection loss by the measured-to-requested ratio on a
/// fixed reference placement. The positive image gains add coherently at low
/// frequencies, which stretches the broadband tail beyond what the energy
/// model alone predicts. Results are cached per cabin shape.
pub(super) fn calibrated_absorption(dims: [f64; 3], rt60: f64, sample_rate: u32) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<CalibrationKey, f64>>> = OnceLock::new();
    let key = [
        dims[0].to_bits(),
        dims[1].to_bits(),
        dims[2].to_bits(),
        rt60.to_bits(),
        sample_rate as u64,
    ];
    let cache = CACHE.get_or_init(Default::default);
    if let Some(&a) = cache.lock().expect("calibration cache poisoned").get(&key) {
        return a;
    }
    let source = [0.7 * dims[0], 0.35 * dims[1], 0.45 * dims[2]];
    let mic = [0.3 * dims[0], 0.6 * dims[1], 0.55 * dims[2]];
    // per-reflection energy loss k = -ln(1 - alpha)
    let mut k = -60.0 / (lattice_decay_slope(dims) * SPEED_OF_SOUND * rt60);
    for _ in 0..CALIBRATION_ROUNDS {
        let h = image_source(dims, rt60, sample_rate, &[mic], &source, 1.0 - (-k).exp());
        let Some(measured) = estimate_rt60(&h[0], sample_rate) else {
            break;
        };
        let ratio = measured / rt60;
        k *= ratio;
        if (ratio - 1.0).abs() < CALIBRATION_TOLERANCE {
            break;
        }
    }
    let alpha = 1.0 - (-k).exp();
    cache
        .lock()
        .expect("calibration cache poisoned")
        .insert(key, alpha);
    alpha
}

const DECAY_DIRECTIONS: usize = 4096;

/// Schroeder slope, in dB per unit `x`, of the image-lattice energy
/// `E(x) = mean_u exp(-x g(u))` with `g(u) = sum_i |u_i| / L_i` (wall hits per
/// metre travelled along `u`), fitted over -5..-35 dB.
fn lattice_decay_slope(dims: [f64; 3]) -> f64 {
    let golden = PI * (3.0 - 5f64.sqrt());
    let g: Vec<f64> = (0..DECAY_DIRECTIONS)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / DECAY_DIRECTIONS as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let u = [r * phi.cos(), r * phi.sin(), z];
            (0..3).map(|a| u[a].abs() / dims[a]).sum()
        })
        .collect();
    // backward-integrated energy in closed form
    let edc = |x: f64| g.iter().map(|gi| (-x * gi).exp() / gi).sum::<f64>();
    let total = edc(0.0);
    let g_mean = g.iter().sum::<f64>() / g.len() as f64;
    let dx = 0.01 / g_mean;
    let mut pts = Vec::new();
    let mut x = 0.0;
    loop {
        let level = 10.0 * (edc(x) / total).log10();
        if level < -35.0 {
            break;
        }
        if level <= -5.0 {
            pts.push((x, level));
        }
        x += dx;
    }
    fit_slope(&pts)
}

fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Schroeder backward-integrated energy decay curve in dB (0 dB at t = 0).
pub fn schroeder_decay_db(h: &[f64]) -> Vec<f64> {
    let mut edc = vec![0.0; h.len()];
    let mut acc = 0.0;
    for i in (0..h.len()).rev() {
        acc += h[i] * h[i];
        edc[i] = acc;
    }
    let total = edc.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    edc.iter()
        .map(|e| 10.0 * (e / total).max(1e-300).log10())
        .collect()
}

/// Reverberation time from a least-squares line through the -5..-35 dB span
/// of the Schroeder curve, extrapolated to -60 dB.
pub fn estimate_rt60(h: &[f64], sample_rate: u32) -> Option<f64> {
    let edc = schroeder_decay_db(h);
    let pts: Vec<(f64, f64)> = edc
        .iter()
        .enumerate()
        .filter(|(_, &db)| (-35.0..=-5.0).contains(&db))
        .map(|(i, &db)| (i as f64 / sample_rate as f64, db))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let slope = fit_slope(&pts);
    (slope < 0.0).then(|| -60.0 / slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::linear_array;

    fn anechoic() -> CabinSpec {
        CabinSpec {
            rt60: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn direct_path_one_meter() {
        let mut spec = anechoic();
        spec.mics = linear_array([0.5, 0.8, 0.6], [0.0, 1.0, 0.0]);
        let src = [1.5, 0.8 - 0.059, 0.6];
        let rir = simulate_rir(&spec, &src).unwrap();
        let h = &rir.taps[0];
        let peak = h
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap()
            .0;
        // 1 m / 343 m/s * 16 kHz = 46.65 samples
        assert_eq!(peak, 47);
        let expected_gain = 1.0 / (4.0 * PI);
        let sum: f64 = h.iter().sum();
        assert!((sum - expected_gain).abs() / expected_gain < 0.05);
    }

    #[test]
    fn coincident_source_is_rejected() {
        let spec = anechoic();
        let src = spec.mics[0];
        assert!(matches!(simulate_rir(&spec, &src), Err(Error::Geometry(_))));
    }

    #[test]
    fn outside_source_is_rejected() {
        let spec = anechoic();
        assert!(simulate_rir(&spec, &[-0.1, 0.5, 0.5]).is_err());
    }

    #[test]
    fn amplitude_falls_with_distance() {
        let spec = anechoic();
        let near = simulate_rir(&spec, &[0.95, 0.8, 1.05]).unwrap();
        let far = simulate_rir(&spec, &[1.95, 0.8, 1.05]).unwrap();
        let dc = |r: &Rir| r.taps[0].iter().sum::<f64>();
        let d_near = distance(&[0.95, 0.8, 1.05], &spec.mics[0]);
        let d_far = distance(&[1.95, 0.8, 1.05], &spec.mics[0]);
        let ratio = dc(&near) / dc(&far);
        assert!(
            (ratio / (d_far / d_near) - 1.0).abs() < 0.05,
            "ratio {ratio}"
        );
    }

    #[test]
    fn reverberant_rir_length_and_determinism() {
        let spec = CabinSpec {
            rt60: 0.2,
            ..Default::default()
        };
        let a = simulate_rir(&spec, &spec.zones[0]).unwrap();
        let b = simulate_rir(&spec, &spec.zones[0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), (1.2 * 0.2 * 16000.0f64).ceil() as usize);
    }

    #[test]
    fn rt60_estimate_on_synthetic_decay() {
        // exponential envelope with a known 0.4 s decay
        let fs = 16000u32;
        let k = 3.0 * std::f64::consts::LN_10 / 0.4;
        let h: Vec<f64> = (0..16000)
            .map(|i| {
                let t = i as f64 / fs as f64;
                (-k * t).exp() * if i % 2 == 0 { 1.0 } else { -1.0 }
            })
            .collect();
        let rt = estimate_rt60(&h, fs).unwrap();
        assert!((rt - 0.4).abs() < 0.01, "{rt}");
    }

    #[test]
    fn kernel_matches_direct_windowed_sinc() {
        for delay in [10.0, 10.25, 10.5, 10.999, 3.2] {
            let mut h = vec![0.0; 24];
            add_fractional_impulse(&mut h, delay, 2.0);
            for (i, v) in h.iter().enumerate() {
                let u = i as f64 - delay;
                let want = if u.abs() >= 4.0 {
                    0.0
                } else if u.abs() < 1e-12 {
                    2.0
                } else {
                    2.0 * (PI * u).sin() / (PI * u) * 0.5 * (1.0 + (PI * u / 4.0).cos())
                };
                assert!(
                    (v - want).abs() < 1e-12,
                    "delay {delay} tap {i}: {v} vs {want}"
                );
            }
        }
    }

    #[test]
    fn calibrated_decay_matches_requested_rt60() {
        let spec = CabinSpec {
            rt60: 0.25,
            ..Default::default()
        };
        let sabine = {
            let [l, w, h] = spec.dims;
            0.161 * l * w * h / (2.0 * (l * w + l * h + w * h) * spec.rt60)
        };
        let alpha = spec.absorption().unwrap().unwrap();
        assert!(
            alpha > sabine,
            "image lattice needs more absorption than Sabine"
        );
        let h = &simulate_rir(&spec, &spec.zones[3]).unwrap().taps[1];
        let rt = estimate_rt60(h, spec.sample_rate).unwrap();
        assert!((rt - 0.25).abs() / 0.25 < 0.05, "{rt}");
    }

    #[test]
    fn too_short_rt60_is_rejected() {
        let spec = CabinSpec {
            rt60: 0.01,
            ..Default::default()
        };
        assert!(matches!(spec.absorption(), Err(Error::Config(_))));
    }
}
