//! In-car acoustic scene simulation: cabin geometry, image-source room
//! impulse responses, loudspeaker nonlinearity, and mixture rendering.

mod distortion;
mod render;
mod rir;
mod source;

pub use distortion::{distort_loudspeaker, Distortion};
pub use render::{
    fft_convolve, render_scene, NoiseKind, RenderOptions, SceneRender, SER_RANGE_DB, SNR_RANGE_DB,
};
pub use rir::{estimate_rt60, schroeder_decay_db, simulate_rir, Rir};
pub use source::synth_speech;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::DEFAULT_SAMPLE_RATE;

pub type Position = [f64; 3];

pub const SPEED_OF_SOUND: f64 = 343.0;
pub const MIC_SPACING: f64 = 0.118;
pub const MAX_RT60: f64 = 0.6;
pub const NUM_ZONES: usize = 4;

/// Cabin geometry plus source and sensor placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CabinSpec {
    /// Length, width, height in meters.
    pub dims: [f64; 3],
    pub rt60: f64,
    pub mics: Vec<Position>,
    /// One talker position per zone.
    pub zones: Vec<Position>,
    pub loudspeaker: Position,
    pub noise_pos: Position,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for CabinSpec {
    fn default() -> Self {
        let array_center = [0.45, 0.8, 1.05];
        Self {
            dims: [2.8, 1.6, 1.2],
            rt60: 0.3,
            mics: linear_array(array_center, [0.0, 1.0, 0.0]),
            zones: vec![
                [1.0, 0.45, 0.95],
                [1.0, 1.15, 0.95],
                [2.0, 0.45, 0.95],
                [2.0, 1.15, 0.95],
            ],
            loudspeaker: [0.35, 0.12, 0.55],
            noise_pos: [2.55, 0.8, 0.25],
            sample_rate: DEFAULT_SAMPLE_RATE,
            seed: 0,
        }
    }
}

/// Two-element array of length [`MIC_SPACING`] centered on `center` along `axis`.
pub fn linear_array(center: Position, axis: Position) -> Vec<Position> {
    let norm = axis.iter().map(|a| a * a).sum::<f64>().sqrt();
    let h = MIC_SPACING / 2.0;
    let off = axis.map(|a| a / norm * h);
    vec![
        [center[0] - off[0], center[1] - off[1], center[2] - off[2]],
        [center[0] + off[0], center[1] + off[1], center[2] + off[2]],
    ]
}

pub fn distance(a: &Position, b: &Position) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl CabinSpec {
    pub fn num_mics(&self) -> usize {
        self.mics.len()
    }

    pub fn is_inside(&self, p: &Position) -> bool {
        p.iter().zip(&self.dims).all(|(x, d)| *x > 0.0 && x < d)
    }

    fn check_inside(&self, what: &str, p: &Position) -> Result<()> {
        if self.is_inside(p) {
            Ok(())
        } else {
            Err(Error::Geometry(format!(
                "{what} at {p:?} is not strictly inside cabin {:?}",
                self.dims
            )))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Geometry(format!(
                "invalid cabin dims {:?}",
                self.dims
            )));
        }
        if !(0.0..=MAX_RT60).contains(&self.rt60) {
            return Err(Error::Config(format!(
                "rt60 {} outside [0, {MAX_RT60}]",
                self.rt60
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if self.mics.len() != 2 {
            return Err(Error::Geometry(format!(
                "expected a 2-element array, got {} mics",
                self.mics.len()
            )));
        }
        let spacing = distance(&self.mics[0], &self.mics[1]);
        if (spacing - MIC_SPACING).abs() > 1e-9 {
            return Err(Error::Geometry(format!(
                "mic spacing {spacing} m, expected {MIC_SPACING} m"
            )));
        }
        for (i, m) in self.mics.iter().enumerate() {
            self.check_inside(&format!("mic {i}"), m)?;
        }
        if self.zones.len() != NUM_ZONES {
            return Err(Error::Geometry(format!(
                "expected {NUM_ZONES} zones, got {}",
                self.zones.len()
            )));
        }
        for (i, z) in self.zones.iter().enumerate() {
            self.check_inside(&format!("zone {i}"), z)?;
        }
        self.check_inside("loudspeaker", &self.loudspeaker)?;
        self.check_inside("noise source", &self.noise_pos)?;
        Ok(())
    }

    /// Uniform wall absorption for the requested rt60, calibrated so the
    /// rendered responses decay by 60 dB in `rt60`. `None` when rt60 is zero.
    ///
    /// Fails when Sabine's formula would need more than total absorption.
    pub fn absorption(&self) -> Result<Option<f64>> {
        if self.rt60 == 0.0 {
            return Ok(None);
        }
        let [l, w, h] = self.dims;
        let sabine = 0.161 * l * w * h / (2.0 * (l * w + l * h + w * h) * self.rt60);
        if !(sabine > 0.0 && sabine <= 1.0) {
            return Err(Error::Config(format!(
                "rt60 {} s needs absorption {sabine:.3}, outside (0, 1]",
                self.rt60
            )));
        }
        Ok(Some(rir::calibrated_absorption(
            self.dims,
            self.rt60,
            self.sample_rate,
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_cabin_is_valid() {
        let spec = CabinSpec::default();
        spec.validate().unwrap();
        assert!((distance(&spec.mics[0], &spec.mics[1]) - MIC_SPACING).abs() < 1e-12);
    }

    #[test]
    fn validation_catches_bad_geometry() {
        let mut spec = CabinSpec::default();
        spec.zones[2] = [3.5, 0.5, 0.5];
        assert!(matches!(spec.validate(), Err(Error::Geometry(_))));

        let mut spec = CabinSpec::default();
        spec.mics[1][1] += 0.01;
        assert!(spec.validate().is_err());

        let spec = CabinSpec {
            rt60: 0.8,
            ..Default::default()
        };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn sabine_absorption() {
        let spec = CabinSpec {
            rt60: 0.01,
            ..Default::default()
        };
        assert!(spec.absorption().is_err());
        let spec = CabinSpec::default();
        let a = spec.absorption().unwrap().unwrap();
        assert!(a > 0.0 && a < 1.0);
        let spec = CabinSpec {
            rt60: 0.0,
            ..Default::default()
        };
        assert_eq!(spec.absorption().unwrap(), None);
    }
}
