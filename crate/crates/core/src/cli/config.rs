use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::beamformer::SeparateConfig;
use crate::cost::PipelineShapes;
use crate::error::Error;
use crate::scene::{CabinSpec, Distortion, NoiseKind, SER_RANGE_DB, SNR_RANGE_DB};
use crate::signal::StftConfig;

/// Config problem, with the offending line when it can be located.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.path, self.line) {
            (Some(p), Some(l)) => write!(f, "{}:{l}: {}", p.display(), self.message),
            (Some(p), None) => write!(f, "{}: {}", p.display(), self.message),
            (None, Some(l)) => write!(f, "line {l}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Target SNR: a dB value, or `"inf"` for a noise-free render.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Snr(pub Option<f64>);

impl Default for Snr {
    fn default() -> Self {
        Snr(Some(10.0))
    }
}

impl std::str::FromStr for Snr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "+inf" | "infinity" => Ok(Snr(None)),
            other => other
                .parse::<f64>()
                .map(|v| Snr(Some(v)))
                .map_err(|_| format!("`{s}` is neither a number nor `inf`")),
        }
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) if v.is_infinite() && v > 0.0 => Ok(Snr(None)),
            Raw::Num(v) => Ok(Snr(Some(v))),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    /// Which zones have a talker.
    pub active: Vec<bool>,
    pub duration_s: f64,
    pub echo: bool,
    /// Drives the talker, loudspeaker and noise signals.
    pub seed: u64,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            active: vec![true, true, false, false],
            duration_s: 3.0,
            echo: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSection {
    pub snr_db: Snr,
    pub ser_db: f64,
    pub distortion: Distortion,
    pub noise: NoiseKind,
}

impl Default for RenderSection {
    fn default() -> Self {
        Self {
            snr_db: Snr::default(),
            ser_db: 0.0,
            distortion: Distortion::None,
            noise: NoiseKind::Stationary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub bands: Vec<usize>,
    pub shapes: PipelineShapes,
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            bands: vec![8, 16, 32, 64],
            shapes: PipelineShapes::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    /// Write spectrogram images next to separated audio.
    pub png: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    /// Scene bundle directory read by `separate`.
    pub bundle: Option<PathBuf>,
}

/// The whole run configuration; every section is optional. `[stft]` also
/// drives the separation pipeline.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub stft: StftConfig,
    pub cabin: CabinSpec,
    pub scene: SceneSection,
    pub render: RenderSection,
    pub separate: SeparateConfig,
    pub cost: CostSection,
    pub output: OutputSection,
    pub input: InputSection,
    #[serde(skip)]
    source: Option<(Option<PathBuf>, String)>,
}

impl RunConfig {
    pub fn parse(text: &str, path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError {
            path: path.map(Path::to_path_buf),
            line: e.span().map(|s| line_at(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.source = Some((path.map(Path::to_path_buf), text.to_string()));
        cfg.separate.stft = cfg.stft;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: Some(path.to_path_buf()),
            line: None,
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(&text, Some(path))
    }

    /// Error pointing at `key` inside `[section]` when the file sets it.
    pub fn error_at(&self, section: &str, key: &str, message: impl Into<String>) -> ConfigError {
        let (path, line) = match &self.source {
            Some((p, text)) => (p.clone(), find_key(text, section, key)),
            None => (None, None),
        };
        ConfigError {
            path,
            line,
            message: format!("[{section}] {key}: {}", message.into()),
        }
    }

    fn check(&self, section: &str, key: &str, r: crate::Result<()>) -> Result<(), ConfigError> {
        r.map_err(|e| self.error_at(section, key, e.to_string()))
    }

    pub fn validate_stft(&self) -> Result<(), ConfigError> {
        let key =
            if self.stft.hop == 0 || !self.stft.window_len.is_multiple_of(self.stft.hop.max(1)) {
                "hop"
            } else {
                "fft_size"
            };
        self.check("stft", key, self.stft.validate())
    }

    pub fn validate_scene(&self) -> Result<(), ConfigError> {
        self.validate_stft()?;
        self.check("cabin", "rt60", self.cabin.validate())?;
        self.check("cabin", "rt60", self.cabin.absorption().map(|_| ()))?;
        let s = &self.scene;
        if s.active.len() != self.cabin.zones.len() {
            return Err(self.error_at(
                "scene",
                "active",
                format!(
                    "{} flags for {} zones",
                    s.active.len(),
                    self.cabin.zones.len()
                ),
            ));
        }
        if !s.active.iter().any(|a| *a) {
            return Err(self.error_at("scene", "active", "at least one zone must be active"));
        }
        if !(s.duration_s > 0.0 && s.duration_s <= 60.0) {
            return Err(self.error_at(
                "scene",
                "duration_s",
                format!("{} s outside (0, 60]", s.duration_s),
            ));
        }
        if let Some(snr) = self.render.snr_db.0 {
            if !(SNR_RANGE_DB.0..=SNR_RANGE_DB.1).contains(&snr) {
                return Err(self.error_at(
                    "render",
                    "snr_db",
                    format!("{snr} dB outside {SNR_RANGE_DB:?}"),
                ));
            }
        }
        if s.echo && !(SER_RANGE_DB.0..=SER_RANGE_DB.1).contains(&self.render.ser_db) {
            return Err(self.error_at(
                "render",
                "ser_db",
                format!("{} dB outside {SER_RANGE_DB:?}", self.render.ser_db),
            ));
        }
        self.check("render", "distortion", self.render.distortion.validate())?;
        if let NoiseKind::Modulated { rate_hz } = self.render.noise {
            if !(rate_hz > 0.0) {
                return Err(self.error_at("render", "noise", "modulation rate must be positive"));
            }
        }
        Ok(())
    }

    pub fn validate_separate(&self) -> Result<(), ConfigError> {
        self.validate_stft()?;
        let f = self.stft.num_bins();
        let sep = &self.separate;
        if sep.bands == 0 || sep.bands > f {
            return Err(self.error_at(
                "separate",
                "bands",
                format!("{} outside 1..={f}", sep.bands),
            ));
        }
        if sep.embedding == 0 {
            return Err(self.error_at("separate", "embedding", "must be positive"));
        }
        for (key, v) in [("crf_taps", sep.crf_taps), ("bf_taps", sep.bf_taps)] {
            if v % 2 == 0 {
                return Err(self.error_at("separate", key, format!("{v} is not odd")));
            }
        }
        self.check("separate", "baseline_alpha", sep.validate())?;
        if let Some(b) = &self.input.bundle {
            if !b.is_dir() {
                return Err(self.error_at(
                    "input",
                    "bundle",
                    format!("{} is not a directory", b.display()),
                ));
            }
        }
        Ok(())
    }

    pub fn validate_cost(&self) -> Result<(), ConfigError> {
        let f = self.cost.shapes.bins;
        if let Some(k) = self.cost.bands.iter().find(|k| **k == 0 || **k > f) {
            return Err(self.error_at("cost", "bands", format!("{k} outside 1..={f}")));
        }
        Ok(())
    }
}

impl From<ConfigError> for Error {
    fn from(e: ConfigError) -> Self {
        Error::Config(e.to_string())
    }
}

/// 1-based line of byte offset `pos`.
fn line_at(text: &str, pos: usize) -> usize {
    text[..pos.min(text.len())].matches('\n').count() + 1
}

/// 1-based line where `key` is assigned inside `[section]` (or one of its
/// sub-tables).
fn find_key(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(header) = line.strip_prefix('[') {
            current = header.trim_end_matches(']').trim().to_string();
            continue;
        }
        let in_section = current == section || current.starts_with(&format!("{section}."));
        if in_section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}
