//! Time-domain audio containers, WAV I/O, and the STFT analysis/synthesis pair.
//!
//! Frames are centered: the signal is reflect-padded by `fft_size / 2` on both
//! sides so frame `t` is centered on sample `t * hop`. Synthesis is weighted
//! overlap-add with the analysis window, normalized by the summed squared
//! window, which reconstructs the input exactly whenever the summed squared
//! window is non-zero.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Multichannel real-valued audio. All channels have the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if channels.is_empty() {
            return Err(Error::Shape("waveform needs at least one channel".into()));
        }
        let len = channels[0].len();
        if let Some(bad) = channels.iter().position(|c| c.len() != len) {
            return Err(Error::Shape(format!(
                "channel {bad} has {} samples, channel 0 has {len}",
                channels[bad].len()
            )));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn zeros(num_channels: usize, len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![vec![0.0; len]; num_channels.max(1)], sample_rate)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Extract a single channel as a mono waveform.
    pub fn select(&self, c: usize) -> Result<Waveform> {
        let ch = self
            .channels
            .get(c)
            .ok_or_else(|| Error::Shape(format!("channel {c} out of range")))?;
        Waveform::mono(ch.clone(), self.sample_rate)
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|x| x * gain).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Mean power over all channels and samples.
    pub fn power(&self) -> f64 {
        let n = (self.len() * self.num_channels()).max(1) as f64;
        self.channels
            .iter()
            .flat_map(|c| c.iter())
            .map(|x| x * x)
            .sum::<f64>()
            / n
    }

    pub fn peak(&self) -> f64 {
        self.channels
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Periodic window of length `len`.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
            WindowKind::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub fft_size: usize,
    pub window_len: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_size: 512,
            window_len: 512,
            hop: 256,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.window_len == 0 {
            return Err(Error::Config("hop and window_len must be positive".into()));
        }
        if !self.window_len.is_multiple_of(self.hop) {
            return Err(Error::Config(format!(
                "hop {} does not divide window_len {}",
                self.hop, self.window_len
            )));
        }
        if self.fft_size < self.window_len {
            return Err(Error::Config(format!(
                "fft_size {} is smaller than window_len {}",
                self.fft_size, self.window_len
            )));
        }
        if !self.fft_size.is_multiple_of(2) {
            return Err(Error::Config("fft_size must be even".into()));
        }
        Ok(())
    }

    /// One-sided bin count.
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn num_frames(&self, num_samples: usize) -> usize {
        1 + num_samples / self.hop
    }

    fn pad(&self) -> usize {
        self.fft_size / 2
    }

    /// Analysis window zero-padded and centered in an `fft_size` buffer.
    pub fn window_coefficients(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.fft_size];
        let offset = (self.fft_size - self.window_len) / 2;
        w[offset..offset + self.window_len]
            .copy_from_slice(&self.window.coefficients(self.window_len));
        w
    }

    /// Center frequency in Hz of bin `f`.
    pub fn bin_frequency(&self, f: usize, sample_rate: u32) -> f64 {
        f as f64 * sample_rate as f64 / self.fft_size as f64
    }
}

/// Complex time-frequency tensor laid out as `(channel, frame, bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Vec<Complex64>,
    channels: usize,
    frames: usize,
    bins: usize,
    config: StftConfig,
    num_samples: usize,
    sample_rate: u32,
}

impl Spectrogram {
    pub fn zeros(
        channels: usize,
        frames: usize,
        config: StftConfig,
        num_samples: usize,
        sample_rate: u32,
    ) -> Self {
        let bins = config.num_bins();
        Self {
            data: vec![Complex64::new(0.0, 0.0); channels * frames * bins],
            channels,
            frames,
            bins,
            config,
            num_samples,
            sample_rate,
        }
    }

    /// Zero spectrogram with the same metadata as `self` but `channels` channels.
    pub fn zeros_like(&self, channels: usize) -> Self {
        Self::zeros(
            channels,
            self.frames,
            self.config,
            self.num_samples,
            self.sample_rate,
        )
    }

    pub fn from_data(
        data: Vec<Complex64>,
        channels: usize,
        frames: usize,
        config: StftConfig,
        num_samples: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        let bins = config.num_bins();
        if data.len() != channels * frames * bins {
            return Err(Error::Shape(format!(
                "data length {} != {channels} x {frames} x {bins}",
                data.len()
            )));
        }
        if frames != config.num_frames(num_samples) {
            return Err(Error::Shape(format!(
                "{frames} frames inconsistent with {num_samples} samples at hop {}",
                config.hop
            )));
        }
        Ok(Self {
            data,
            channels,
            frames,
            bins,
            config,
            num_samples,
            sample_rate,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }
    pub fn num_frames(&self) -> usize {
        self.frames
    }
    pub fn num_bins(&self) -> usize {
        self.bins
    }
    pub fn config(&self) -> &StftConfig {
        &self.config
    }
    pub fn num_samples(&self) -> usize {
        self.num_samples
    }
    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, c: usize, t: usize, f: usize) -> usize {
        (c * self.frames + t) * self.bins + f
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize, f: usize) -> Complex64 {
        self.data[self.index(c, t, f)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, f: usize, v: Complex64) {
        let i = self.index(c, t, f);
        self.data[i] = v;
    }

    /// Contiguous `(frame, bin)` block of one channel.
    pub fn channel(&self, c: usize) -> &[Complex64] {
        let n = self.frames * self.bins;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.frames * self.bins;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// True when `other` has identical time-frequency geometry.
    pub fn same_grid(&self, other: &Spectrogram) -> bool {
        self.frames == other.frames
            && self.bins == other.bins
            && self.config == other.config
            && self.num_samples == other.num_samples
    }

    /// Concatenate channels of several spectrograms on the same grid.
    pub fn stack(parts: &[&Spectrogram]) -> Result<Spectrogram> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("nothing to stack".into()))?;
        if let Some(bad) = parts.iter().find(|p| !p.same_grid(first)) {
            return Err(Error::Shape(format!(
                "cannot stack {}x{} grid onto {}x{}",
                bad.frames, bad.bins, first.frames, first.bins
            )));
        }
        let channels = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(channels * first.frames * first.bins);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Spectrogram {
            data,
            channels,
            ..(*first).clone_meta()
        })
    }

    fn clone_meta(&self) -> Spectrogram {
        Spectrogram {
            data: Vec::new(),
            channels: 0,
            frames: self.frames,
            bins: self.bins,
            config: self.config,
            num_samples: self.num_samples,
            sample_rate: self.sample_rate,
        }
    }

    pub fn select(&self, c: usize) -> Result<Spectrogram> {
        if c >= self.channels {
            return Err(Error::Shape(format!("channel {c} out of range")));
        }
        Ok(Spectrogram {
            data: self.channel(c).to_vec(),
            channels: 1,
            ..self.clone_meta()
        })
    }

    pub fn scaled(&self, gain: Complex64) -> Spectrogram {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= gain);
        out
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Spectrogram) -> Result<Spectrogram> {
        if !self.same_grid(other) || self.channels != other.channels {
            return Err(Error::Shape(
                "subtracting spectrograms of different shape".into(),
            ));
        }
        let mut out = self.clone();
        out.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a -= b);
        Ok(out)
    }
}

fn plan(fft_size: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(fft_size)
    } else {
        planner.plan_fft_forward(fft_size)
    }
}

fn reflect_pad(x: &[f64], pad: usize) -> Result<Vec<f64>> {
    if x.len() <= pad {
        return Err(Error::Shape(format!(
            "signal of {} samples is too short for reflect padding of {pad}",
            x.len()
        )));
    }
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((0..pad).map(|i| x[pad - i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|i| x[n - 2 - i]));
    Ok(out)
}

/// Forward STFT of every channel.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if w.is_empty() {
        return Err(Error::EmptyAudio("stft of empty waveform".into()));
    }
    let n_fft = cfg.fft_size;
    let frames = cfg.num_frames(w.len());
    let bins = cfg.num_bins();
    let window = cfg.window_coefficients();
    let fft = plan(n_fft, false);

    let mut out = Spectrogram::zeros(w.num_channels(), frames, *cfg, w.len(), w.sample_rate());
    for c in 0..w.num_channels() {
        let padded = reflect_pad(w.channel(c), cfg.pad())?;
        out.channel_mut(c)
            .par_chunks_mut(bins)
            .enumerate()
            .for_each_init(
                || {
                    (
                        vec![Complex64::new(0.0, 0.0); n_fft],
                        vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()],
                    )
                },
                |(buf, scratch), (t, row)| {
                    let start = t * cfg.hop;
                    for (n, b) in buf.iter_mut().enumerate() {
                        *b = Complex64::new(padded[start + n] * window[n], 0.0);
                    }
                    fft.process_with_scratch(buf, scratch);
                    row.copy_from_slice(&buf[..bins]);
                },
            );
    }
    Ok(out)
}

/// Inverse STFT by weighted overlap-add; output has the original sample count.
pub fn istft(s: &Spectrogram) -> Result<Waveform> {
    let cfg = s.config;
    cfg.validate()?;
    if s.bins != cfg.num_bins() || s.frames != cfg.num_frames(s.num_samples) {
        return Err(Error::Shape(format!(
            "spectrogram {}x{} inconsistent with config for {} samples",
            s.frames, s.bins, s.num_samples
        )));
    }
    let n_fft = cfg.fft_size;
    let pad = cfg.pad();
    let window = cfg.window_coefficients();
    let ifft = plan(n_fft, true);
    let padded_len = s.num_samples + 2 * pad;

    let mut wsum = vec![0.0; padded_len];
    for t in 0..s.frames {
        let start = t * cfg.hop;
        for n in 0..n_fft {
            wsum[start + n] += window[n] * window[n];
        }
    }

    let mut channels = Vec::with_capacity(s.channels);
    for c in 0..s.channels {
        let frames: Vec<Vec<f64>> = s
            .channel(c)
            .par_chunks(s.bins)
            .map_init(
                || {
                    (
                        vec![Complex64::new(0.0, 0.0); n_fft],
                        vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()],
                    )
                },
                |(buf, scratch), row| {
                    buf[..s.bins].copy_from_slice(row);
                    for k in s.bins..n_fft {
                        buf[k] = row[n_fft - k].conj();
                    }
                    ifft.process_with_scratch(buf, scratch);
                    buf.iter()
                        .zip(&window)
                        .map(|(v, w)| v.re / n_fft as f64 * w)
                        .collect()
                },
            )
            .collect();
        let mut acc = vec![0.0; padded_len];
        for (t, frame) in frames.iter().enumerate() {
            let start = t * cfg.hop;
            for (a, v) in acc[start..start + n_fft].iter_mut().zip(frame) {
                *a += v;
            }
        }
        let samples = (pad..pad + s.num_samples)
            .map(|i| {
                if wsum[i] > 1e-12 {
                    acc[i] / wsum[i]
                } else {
                    0.0
                }
            })
            .collect();
        channels.push(samples);
    }
    Waveform::new(channels, s.sample_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WavEncoding {
    Pcm16,
    Pcm24,
    Pcm32,
    #[default]
    Float32,
}

impl WavEncoding {
    fn spec(self, channels: u16, sample_rate: u32) -> hound::WavSpec {
        let (bits_per_sample, sample_format) = match self {
            WavEncoding::Pcm16 => (16, hound::SampleFormat::Int),
            WavEncoding::Pcm24 => (24, hound::SampleFormat::Int),
            WavEncoding::Pcm32 => (32, hound::SampleFormat::Int),
            WavEncoding::Float32 => (32, hound::SampleFormat::Float),
        };
        hound::WavSpec {
            channels,
            sample_rate,
            bits_per_sample,
            sample_format,
        }
    }
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Read a PCM (16/24/32-bit) or 32-bit float WAV file, normalized to [-1, 1].
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let nch = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (hound::SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_err(path, e))?
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{fmt:?} with {bits} bits per sample"
            )))
        }
    };
    if interleaved.is_empty() || nch == 0 {
        return Err(Error::EmptyAudio(path.display().to_string()));
    }
    let frames = interleaved.len() / nch;
    let mut channels = vec![Vec::with_capacity(frames); nch];
    for frame in interleaved.chunks_exact(nch) {
        for (c, v) in frame.iter().enumerate() {
            channels[c].push(*v);
        }
    }
    Waveform::new(channels, spec.sample_rate)
}

/// Write a waveform. Rejects non-finite samples and samples outside [-1, 1].
pub fn write_wav(w: &Waveform, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    for (c, ch) in w.channels().iter().enumerate() {
        for (i, &v) in ch.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    channel: c,
                    index: i,
                });
            }
            if v.abs() > 1.0 {
                return Err(Error::Clipped {
                    channel: c,
                    index: i,
                    value: v,
                });
            }
        }
    }
    let nch = u16::try_from(w.num_channels())
        .map_err(|_| Error::Shape("too many channels for wav".into()))?;
    let spec = encoding.spec(nch, w.sample_rate());
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for i in 0..w.len() {
        for c in 0..w.num_channels() {
            let v = w.channel(c)[i];
            match encoding {
                WavEncoding::Float32 => writer.write_sample(v as f32),
                WavEncoding::Pcm16 | WavEncoding::Pcm24 | WavEncoding::Pcm32 => {
                    let bits = spec.bits_per_sample as u32;
                    let scale = (1u64 << (bits - 1)) as f64;
                    let max = scale - 1.0;
                    let q = (v * scale).round().clamp(-scale, max) as i32;
                    writer.write_sample(q)
                }
            }
            .map_err(|e| wav_err(path, e))?;
        }
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}
