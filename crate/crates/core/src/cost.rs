//! Multiply-accumulate cost model for one second of audio under narrow-band,
//! full-band and subband weight estimation. A complex multiply counts as
//! four MACs.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::beamformer::RnnBfConfig;
use crate::error::{Error, Result};

const COMPLEX_MAC: u128 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "mode", content = "bands")]
pub enum ProcessingMode {
    /// One estimator instance per frequency bin.
    #[serde(rename = "NB")]
    Nb,
    /// One instance for the whole spectrum.
    #[serde(rename = "FB")]
    Fb,
    /// One instance per band.
    #[serde(rename = "SB")]
    Sb(usize),
}

impl fmt::Display for ProcessingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProcessingMode::Nb => f.write_str("NB"),
            ProcessingMode::Fb => f.write_str("FB"),
            ProcessingMode::Sb(k) => write!(f, "SB({k})"),
        }
    }
}

/// Per-instance shapes of the recurrent weight estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorDims {
    /// Real inputs per zone token.
    pub input: usize,
    pub hidden: usize,
    /// Real outputs per zone token.
    pub output: usize,
    pub zones: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl Default for EstimatorDims {
    fn default() -> Self {
        PipelineShapes::default().estimator
    }
}

impl EstimatorDims {
    pub fn from_rnn(cfg: &RnnBfConfig) -> Self {
        Self {
            input: cfg.token_input(),
            hidden: cfg.hidden,
            output: cfg.token_output(),
            zones: cfg.zones,
            heads: cfg.heads,
            head_dim: cfg.head_dim,
        }
    }

    /// MACs of one instance for one frame: GRU, dense head and the
    /// zone-axis attention block.
    pub fn macs_per_frame(&self) -> u128 {
        let (i, h, o, z) = (
            self.input as u128,
            self.hidden as u128,
            self.output as u128,
            self.zones as u128,
        );
        let a = (self.heads * self.head_dim) as u128;
        let gru = 3 * (i * h + h * h);
        let head = h * o;
        let projections = 3 * o * a + a * o;
        let scores = 2 * z * a;
        z * (gru + head + projections + scores)
    }
}

/// Everything the cost model needs to know about a pipeline configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineShapes {
    pub bins: usize,
    pub frames_per_second: usize,
    pub mics: usize,
    pub zones: usize,
    pub crf_feature_dim: usize,
    pub crf_hidden: usize,
    pub crf_kernel: usize,
    pub crf_taps: usize,
    pub bf_taps: usize,
    pub embedding: usize,
    pub estimator: EstimatorDims,
}

impl Default for PipelineShapes {
    /// 16 kHz, 512/256 STFT, two mics, four zones, and an estimator sized
    /// like a practical in-car model rather than the test stub.
    fn default() -> Self {
        let (mics, zones, taps, embedding) = (2, 4, 5, 32);
        let channels = mics + 1;
        let rnn = RnnBfConfig {
            embedding,
            input_depth: 2 * channels * channels,
            hidden: 256,
            zones,
            taps,
            channels,
            heads: 4,
            head_dim: 64,
        };
        Self {
            bins: 257,
            frames_per_second: frames_per_second(16_000, 256),
            mics,
            zones,
            crf_feature_dim: 1 + 1 + zones,
            crf_hidden: 128,
            crf_kernel: 3,
            crf_taps: 3,
            bf_taps: taps,
            embedding,
            estimator: EstimatorDims::from_rnn(&rnn),
        }
    }
}

/// STFT frames started per second of audio, rounded up.
pub fn frames_per_second(sample_rate: u32, hop: usize) -> usize {
    (sample_rate as usize).div_ceil(hop)
}

impl PipelineShapes {
    pub fn channels(&self) -> usize {
        self.mics + 1
    }

    /// Flattened real covariance size, `2 (M+1)^2`.
    pub fn input_depth(&self) -> usize {
        2 * self.channels() * self.channels()
    }

    /// Real weight outputs per bin, `zones x taps x (M+1) x 2`.
    pub fn output_depth(&self) -> usize {
        self.zones * self.bf_taps * self.channels() * 2
    }

    fn validate(&self) -> Result<()> {
        let named = [
            ("bins", self.bins),
            ("frames_per_second", self.frames_per_second),
            ("mics", self.mics),
            ("zones", self.zones),
            ("crf_feature_dim", self.crf_feature_dim),
            ("crf_hidden", self.crf_hidden),
            ("crf_kernel", self.crf_kernel),
            ("crf_taps", self.crf_taps),
            ("bf_taps", self.bf_taps),
            ("embedding", self.embedding),
            ("estimator.input", self.estimator.input),
            ("estimator.hidden", self.estimator.hidden),
            ("estimator.output", self.estimator.output),
            ("estimator.zones", self.estimator.zones),
            ("estimator.heads", self.estimator.heads),
            ("estimator.head_dim", self.estimator.head_dim),
        ];
        match named.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::Config(format!(
                "cost shape `{name}` is missing or zero"
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub features: u64,
    pub crf: u64,
    pub scm: u64,
    /// Band analysis and synthesis (subband mode only).
    pub transform: u64,
    pub estimator: u64,
    pub apply: u64,
}

impl StageCounts {
    pub fn total(&self) -> u64 {
        self.features + self.crf + self.scm + self.transform + self.estimator + self.apply
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub mode: ProcessingMode,
    pub macs_per_second: u64,
    pub breakdown: StageCounts,
}

impl CostReport {
    pub fn gmacs(&self) -> f64 {
        self.macs_per_second as f64 / 1e9
    }
}

fn to_u64(v: u128) -> Result<u64> {
    u64::try_from(v).map_err(|_| Error::Config(format!("MAC count {v} overflows u64")))
}

/// MACs per second of audio, stage by stage.
pub fn count_macs(mode: ProcessingMode, s: &PipelineShapes) -> Result<CostReport> {
    s.validate()?;
    let f = s.bins as u128;
    let fps = s.frames_per_second as u128;
    let bin_frames = f * fps;
    let (c, z, p) = (
        s.channels() as u128,
        s.zones as u128,
        (s.mics * (s.mics - 1) / 2) as u128,
    );

    // log power, pairwise phase differences, per-zone steering agreement
    let features = bin_frames * (2 + COMPLEX_MAC * p + z * p);
    let crf_out = z * 2 * s.crf_taps as u128 * c * 2;
    let crf_net =
        (s.crf_hidden * s.crf_feature_dim * s.crf_kernel) as u128 + crf_out * s.crf_hidden as u128;
    let crf_apply = z * 2 * s.crf_taps as u128 * c * COMPLEX_MAC;
    let crf = bin_frames * (crf_net + crf_apply);
    let scm = bin_frames * z * 2 * c * c * COMPLEX_MAC;
    let apply = bin_frames * z * s.bf_taps as u128 * c * COMPLEX_MAC;

    let (instances, transform) = match mode {
        ProcessingMode::Nb => (f, 0),
        ProcessingMode::Fb => (1, 0),
        ProcessingMode::Sb(k) => {
            if k == 0 || k > s.bins {
                return Err(Error::Config(format!(
                    "band count {k} outside 1..={}",
                    s.bins
                )));
            }
            // band widths sum to F: analysis of both covariance streams per
            // zone, synthesis of the weight tensor
            let e = s.embedding as u128;
            let per = z * 2 * s.input_depth() as u128 + s.output_depth() as u128;
            (k as u128, bin_frames * e * per)
        }
    };
    let estimator = instances * fps * s.estimator.macs_per_frame();

    let breakdown = StageCounts {
        features: to_u64(features)?,
        crf: to_u64(crf)?,
        scm: to_u64(scm)?,
        transform: to_u64(transform)?,
        estimator: to_u64(estimator)?,
        apply: to_u64(apply)?,
    };
    Ok(CostReport {
        mode,
        macs_per_second: breakdown.total(),
        breakdown,
    })
}

/// NB, FB and SB at each band count, sorted by total cost, highest first.
pub fn compare_modes(s: &PipelineShapes, bands: &[usize]) -> Result<Vec<CostReport>> {
    let mut out = vec![
        count_macs(ProcessingMode::Nb, s)?,
        count_macs(ProcessingMode::Fb, s)?,
    ];
    for &k in bands {
        out.push(count_macs(ProcessingMode::Sb(k), s)?);
    }
    out.sort_by(|a, b| b.macs_per_second.cmp(&a.macs_per_second));
    Ok(out)
}

/// Plain-text comparison table, one row per report, in the given order.
pub fn format_table(reports: &[CostReport]) -> String {
    let mut out = format!(
        "{:<8} {:>12} {:>14} {:>14} {:>14} {:>14} {:>14} {:>14} {:>16}\n",
        "mode", "GMACs/s", "features", "crf", "scm", "transform", "estimator", "apply", "total"
    );
    for r in reports {
        let b = &r.breakdown;
        out.push_str(&format!(
            "{:<8} {:>12.3} {:>14} {:>14} {:>14} {:>14} {:>14} {:>14} {:>16}\n",
            r.mode.to_string(),
            r.gmacs(),
            b.features,
            b.crf,
            b.scm,
            b.transform,
            b.estimator,
            b.apply,
            r.macs_per_second
        ));
    }
    out
}
