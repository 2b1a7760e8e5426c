use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Waveform;

/// Memoryless loudspeaker nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Distortion {
    #[default]
    None,
    /// Hard clip at `±threshold`.
    Clip { threshold: f64 },
    /// Symmetric sigmoid `gain * (2 / (1 + exp(-slope * x)) - 1)`; small-signal
    /// gain is `gain * slope / 2`.
    Sigmoid { gain: f64, slope: f64 },
}

impl Distortion {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Distortion::None => Ok(()),
            Distortion::Clip { threshold } if !(threshold > 0.0) => Err(Error::Config(format!(
                "clip threshold must be positive, got {threshold}"
            ))),
            Distortion::Sigmoid { gain, slope } if !(gain > 0.0 && slope > 0.0) => {
                Err(Error::Config(format!(
                    "sigmoid needs positive gain/slope, got {gain}/{slope}"
                )))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Distortion::None => x,
            Distortion::Clip { threshold } => x.clamp(-threshold, threshold),
            Distortion::Sigmoid { gain, slope } => gain * (2.0 / (1.0 + (-slope * x).exp()) - 1.0),
        }
    }

    pub fn small_signal_gain(&self) -> f64 {
        match *self {
            Distortion::None | Distortion::Clip { .. } => 1.0,
            Distortion::Sigmoid { gain, slope } => gain * slope / 2.0,
        }
    }
}

impl FromStr for Distortion {
    type Err = Error;

    /// `none`, `clip`, `clip:0.5`, `sigmoid`, `sigmoid:gain,slope`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let nums: Vec<f64> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|a| {
                    a.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad distortion parameter `{a}`")))
                })
                .collect::<Result<_>>()?
        };
        let d = match (kind.trim(), nums.as_slice()) {
            ("none", []) => Distortion::None,
            ("clip", []) => Distortion::Clip { threshold: 0.5 },
            ("clip", [t]) => Distortion::Clip { threshold: *t },
            ("sigmoid", []) => Distortion::Sigmoid {
                gain: 1.0,
                slope: 4.0,
            },
            ("sigmoid", [g, a]) => Distortion::Sigmoid {
                gain: *g,
                slope: *a,
            },
            _ => return Err(Error::Config(format!("unknown distortion `{s}`"))),
        };
        d.validate()?;
        Ok(d)
    }
}

/// Apply a loudspeaker nonlinearity sample by sample to a mono signal.
pub fn distort_loudspeaker(x: &Waveform, kind: &Distortion) -> Result<Waveform> {
    if x.num_channels() != 1 {
        return Err(Error::Shape(format!(
            "loudspeaker signal must be mono, got {} channels",
            x.num_channels()
        )));
    }
    kind.validate()?;
    let y = x.channel(0).iter().map(|&v| kind.apply(v)).collect();
    Waveform::mono(y, x.sample_rate())
}
