use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{distort_loudspeaker, simulate_rir, CabinSpec, Distortion, Rir};
use crate::error::{Error, Result};
use crate::signal::Waveform;

pub const SNR_RANGE_DB: (f64, f64) = (-40.0, 15.0);
pub const SER_RANGE_DB: (f64, f64) = (-10.0, 10.0);
/// Spatially white part of the noise, relative to the point-source noise image.
const DIFFUSE_LEVEL_DB: f64 = -10.0;
const PEAK_LIMIT: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    Stationary,
    /// Point-source noise gated by a slow square-ish envelope, and the
    /// diffuse part on the opposite phase, so the spatial noise field
    /// changes over time.
    Modulated { rate_hz: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    /// `None` renders without noise (infinite SNR).
    pub snr_db: Option<f64>,
    /// Required when an echo source is given.
    pub ser_db: Option<f64>,
    pub distortion: Distortion,
    pub noise: NoiseKind,
    pub seed: u64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            snr_db: Some(10.0),
            ser_db: None,
            distortion: Distortion::None,
            noise: NoiseKind::Stationary,
            seed: 0,
        }
    }
}

/// Rendered mixture and its exact additive components.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRender {
    /// `M`-channel microphone mixture.
    pub mixture: Waveform,
    /// Clean loudspeaker signal before distortion (all zeros without echo).
    pub echo_ref: Waveform,
    /// Reverberant image of each zone's talker (zeros for absent zones).
    pub targets: Vec<Waveform>,
    pub echo_image: Waveform,
    pub noise: Waveform,
    pub active: Vec<bool>,
    pub has_echo: bool,
    pub snr_db: Option<f64>,
    pub ser_db: Option<f64>,
    pub realized_snr_db: Option<f64>,
    pub realized_ser_db: Option<f64>,
    /// Common gain applied to every component to keep the mixture in range.
    pub gain: f64,
}

impl SceneRender {
    pub fn num_zones(&self) -> usize {
        self.targets.len()
    }

    pub fn speech(&self) -> Waveform {
        sum_waveforms(self.targets.iter()).expect("render has at least one zone")
    }
}

fn sum_waveforms<'a>(mut parts: impl Iterator<Item = &'a Waveform>) -> Option<Waveform> {
    let first = parts.next()?.clone();
    Some(parts.fold(first, |mut acc, w| {
        for c in 0..acc.num_channels() {
            for (a, b) in acc.channel_mut(c).iter_mut().zip(w.channel(c)) {
                *a += b;
            }
        }
        acc
    }))
}

/// Linear convolution truncated to `out_len` samples.
pub fn fft_convolve(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; out_len];
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    a.resize(n, Complex64::new(0.0, 0.0));
    let mut b: Vec<Complex64> = h.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    b.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    a.iter_mut().zip(&b).for_each(|(p, q)| *p *= q);
    inv.process(&mut a);
    let full = x.len() + h.len() - 1;
    (0..out_len)
        .map(|i| if i < full { a[i].re / n as f64 } else { 0.0 })
        .collect()
}

fn image(rir: &Rir, x: &[f64], len: usize, sample_rate: u32) -> Result<Waveform> {
    let chans = rir.taps.iter().map(|h| fft_convolve(x, h, len)).collect();
    Waveform::new(chans, sample_rate)
}

fn padded(x: &[f64], len: usize) -> Vec<f64> {
    let mut v = x.to_vec();
    v.resize(len, 0.0);
    v
}

fn check_mono(w: &Waveform, what: &str, sample_rate: u32) -> Result<()> {
    if w.sample_rate() != sample_rate {
        return Err(Error::SampleRate {
            expected: sample_rate,
            actual: w.sample_rate(),
        });
    }
    if w.num_channels() != 1 {
        return Err(Error::Shape(format!("{what} must be mono")));
    }
    Ok(())
}

fn db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

/// Render the mixture `sum_i h_i * s_i + h_x * f_NL(x) + v` with exact
/// component bookkeeping.
///
/// `sources` holds one optional talker per zone. The echo image is scaled so
/// that speech-to-echo power matches `ser_db`, the noise so that
/// speech-to-noise power matches `snr_db`, both measured over all mics and the
/// whole file. A final common gain keeps the mixture peak below 0.95.
pub fn render_scene(
    spec: &CabinSpec,
    sources: &[Option<Waveform>],
    echo_src: Option<&Waveform>,
    opts: &RenderOptions,
) -> Result<SceneRender> {
    spec.validate()?;
    let fs = spec.sample_rate;
    if sources.len() != spec.zones.len() {
        return Err(Error::Shape(format!(
            "{} source slots for {} zones",
            sources.len(),
            spec.zones.len()
        )));
    }
    if sources.iter().all(Option::is_none) {
        return Err(Error::Config("at least one talker is required".into()));
    }
    for s in sources.iter().flatten() {
        check_mono(s, "talker signal", fs)?;
    }
    if let Some(x) = echo_src {
        check_mono(x, "echo source", fs)?;
    }
    if let Some(snr) = opts.snr_db {
        if !(SNR_RANGE_DB.0..=SNR_RANGE_DB.1).contains(&snr) {
            return Err(Error::Config(format!(
                "snr {snr} dB outside {SNR_RANGE_DB:?}"
            )));
        }
    }
    let ser = match (echo_src, opts.ser_db) {
        (Some(_), Some(ser)) if (SER_RANGE_DB.0..=SER_RANGE_DB.1).contains(&ser) => Some(ser),
        (Some(_), Some(ser)) => {
            return Err(Error::Config(format!(
                "ser {ser} dB outside {SER_RANGE_DB:?}"
            )))
        }
        (Some(_), None) => return Err(Error::Config("echo source given without ser_db".into())),
        (None, _) => None,
    };
    opts.distortion.validate()?;

    let len = sources
        .iter()
        .flatten()
        .map(Waveform::len)
        .chain(echo_src.map(Waveform::len))
        .max()
        .unwrap_or(0);
    if len == 0 {
        return Err(Error::EmptyAudio("scene sources are empty".into()));
    }
    let m = spec.num_mics();

    let mut targets = Vec::with_capacity(sources.len());
    let mut active = Vec::with_capacity(sources.len());
    for (zone, src) in sources.iter().enumerate() {
        match src {
            Some(s) => {
                let rir = simulate_rir(spec, &spec.zones[zone])?;
                targets.push(image(&rir, &padded(s.channel(0), len), len, fs)?);
                active.push(true);
            }
            None => {
                targets.push(Waveform::zeros(m, len, fs)?);
                active.push(false);
            }
        }
    }
    let speech_power = sum_waveforms(targets.iter()).unwrap().power();
    if speech_power <= 0.0 {
        return Err(Error::Silent(
            "all talkers are silent; SNR/SER undefined".into(),
        ));
    }

    let (echo_ref, mut echo_image) = match echo_src {
        Some(x) => {
            let x = Waveform::mono(padded(x.channel(0), len), fs)?;
            let driven = distort_loudspeaker(&x, &opts.distortion)?;
            let rir = simulate_rir(spec, &spec.loudspeaker)?;
            let img = image(&rir, driven.channel(0), len, fs)?;
            let p = img.power();
            if p <= 0.0 {
                return Err(Error::Silent("echo source is silent".into()));
            }
            let target = speech_power / 10f64.powf(ser.unwrap() / 10.0);
            (x, img.scaled((target / p).sqrt()))
        }
        None => (Waveform::zeros(1, len, fs)?, Waveform::zeros(m, len, fs)?),
    };

    let mut noise = match opts.snr_db {
        Some(snr) => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut raw: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
            let envelope = |i: usize, phase: f64| -> f64 {
                match opts.noise {
                    NoiseKind::Stationary => 1.0,
                    NoiseKind::Modulated { rate_hz } => {
                        let t = i as f64 / fs as f64;
                        let s = (2.0 * std::f64::consts::PI * rate_hz * t + phase).sin();
                        0.05 + 0.95 * (0.5 + 0.5 * (4.0 * s).tanh())
                    }
                }
            };
            raw.iter_mut()
                .enumerate()
                .for_each(|(i, v)| *v *= envelope(i, 0.0));
            let rir = simulate_rir(spec, &spec.noise_pos)?;
            let point = image(&rir, &raw, len, fs)?;
            let diffuse_gain = (point.power() * 10f64.powf(DIFFUSE_LEVEL_DB / 10.0)).sqrt();
            let mut chans = point.into_channels();
            for ch in chans.iter_mut() {
                for (i, v) in ch.iter_mut().enumerate() {
                    let w: f64 = StandardNormal.sample(&mut rng);
                    *v += diffuse_gain * w * envelope(i, std::f64::consts::PI);
                }
            }
            let v = Waveform::new(chans, fs)?;
            let target = speech_power / 10f64.powf(snr / 10.0);
            v.scaled((target / v.power()).sqrt())
        }
        None => Waveform::zeros(m, len, fs)?,
    };

    let compose = |targets: &[Waveform], echo: &Waveform, noise: &Waveform| -> Result<Waveform> {
        let chans = (0..m)
            .map(|c| {
                (0..len)
                    .map(|i| {
                        let s = targets.iter().fold(0.0, |acc, t| acc + t.channel(c)[i]);
                        s + echo.channel(c)[i] + noise.channel(c)[i]
                    })
                    .collect()
            })
            .collect();
        Waveform::new(chans, fs)
    };

    let peak = compose(&targets, &echo_image, &noise)?
        .peak()
        .max(targets.iter().map(Waveform::peak).fold(0.0, f64::max))
        .max(echo_image.peak())
        .max(noise.peak());
    let gain = if peak > PEAK_LIMIT {
        PEAK_LIMIT / peak
    } else {
        1.0
    };
    if gain != 1.0 {
        targets = targets.iter().map(|t| t.scaled(gain)).collect();
        echo_image = echo_image.scaled(gain);
        noise = noise.scaled(gain);
    }
    let mixture = compose(&targets, &echo_image, &noise)?;

    let speech_power = sum_waveforms(targets.iter()).unwrap().power();
    let realized_snr_db = opts.snr_db.map(|_| db(speech_power / noise.power()));
    let realized_ser_db = ser.map(|_| db(speech_power / echo_image.power()));

    Ok(SceneRender {
        mixture,
        echo_ref,
        targets,
        echo_image,
        noise,
        active,
        has_echo: echo_src.is_some(),
        snr_db: opts.snr_db,
        ser_db: ser,
        realized_snr_db,
        realized_ser_db,
        gain,
    })
}
