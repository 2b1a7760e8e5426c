use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Deterministic speech-like test signal: voiced syllables (gliding harmonic
/// series shaped by three formant resonances), unvoiced noise bursts and
/// pauses. Peak-normalized to 0.5.
pub fn synth_speech(seed: u64, num_samples: usize, sample_rate: u32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    let nyquist = fs / 2.0;
    let mut out = vec![0.0; num_samples];
    let mut pos = (rng.random_range(0.0..0.15) * fs) as usize;

    while pos < num_samples {
        let dur = (rng.random_range(0.12..0.32) * fs) as usize;
        let end = (pos + dur).min(num_samples);
        let n = end - pos;
        let voiced = rng.random_bool(0.8);
        if voiced {
            let f0_start: f64 = rng.random_range(95.0..230.0);
            let f0_end = f0_start * rng.random_range(0.8..1.2);
            let formants = [
                rng.random_range(300.0..850.0),
                rng.random_range(900.0..2400.0),
                rng.random_range(2400.0..3400.0),
            ];
            let bandwidths = [90.0, 120.0, 180.0];
            let max_h = (0.95 * nyquist / f0_start.min(f0_end)).floor() as usize;
            let amps: Vec<f64> = (1..=max_h)
                .map(|h| {
                    let f = h as f64 * 0.5 * (f0_start + f0_end);
                    let res: f64 = formants
                        .iter()
                        .zip(&bandwidths)
                        .map(|(fc, bw)| 1.0 / (1.0 + ((f - fc) / bw).powi(2)))
                        .sum();
                    (res + 0.02) / (1.0 + f / 1000.0)
                })
                .collect();
            let phases: Vec<f64> = (0..max_h)
                .map(|_| rng.random_range(0.0..2.0 * PI))
                .collect();
            let mut phase0 = 0.0;
            for i in 0..n {
                let frac = i as f64 / n.max(1) as f64;
                let f0 = f0_start + (f0_end - f0_start) * frac;
                phase0 += 2.0 * PI * f0 / fs;
                let env = (PI * frac).sin().powf(0.6);
                let mut v = 0.0;
                for (h, (a, p)) in amps.iter().zip(&phases).enumerate() {
                    let fh = (h + 1) as f64 * f0;
                    if fh >= nyquist {
                        break;
                    }
                    v += a * ((h + 1) as f64 * phase0 + p).sin();
                }
                out[pos + i] += env * v;
            }
        } else {
            let mut prev = 0.0;
            for i in 0..n {
                let frac = i as f64 / n.max(1) as f64;
                let w: f64 = StandardNormal.sample(&mut rng);
                // first difference tilts the noise toward high frequencies
                let v = w - 0.7 * prev;
                prev = w;
                out[pos + i] += 0.3 * (PI * frac).sin() * v;
            }
        }
        let gap = if rng.random_bool(0.15) {
            rng.random_range(0.3..0.6)
        } else {
            rng.random_range(0.03..0.15)
        };
        pos = end + (gap * fs) as usize;
    }

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    out
}
