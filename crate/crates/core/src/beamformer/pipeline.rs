use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mvdr::oracle_mvdr_weights;
use super::rnn::{RnnBf, RnnBfConfig};
use super::{apply_weights_stacked, BeamformerWeights, DEFAULT_BF_TAPS};
use crate::error::{Error, Result};
use crate::estimator::{
    apply_crf_stacked, compute_scm, fit_crf, ground_truth_target, neural_crf_stub,
    CovarianceSeries, CrfStubConfig, LayerNorm, Smoothing, Target, DEFAULT_CRF_TAPS,
    DEFAULT_RECURSIVE_ALPHA,
};
use crate::features::{all_pairs, extract_features, ZoneSteering};
use crate::scene::CabinSpec;
use crate::signal::{istft, stft, Spectrogram, StftConfig, Waveform};
use crate::subband::{
    analyze_band, make_band_plan, round_trip, scatter_bands, synthesize_band_compact,
    AnalysisFilters, BandPlan, SynthesisFilters, DEFAULT_BANDS, DEFAULT_EMBEDDING,
};
use crate::weights::WeightBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Per-bin MVDR from oracle cRF covariance estimates.
    OracleMvdrFullband,
    /// As above, with the weights routed through the band transforms.
    #[default]
    OracleMvdrSubband,
    /// Convolutional cRF and band-shared recurrent estimator forward passes.
    StubSrnn,
    /// Mixture-only MVDR from oracle masks, time-invariant covariances.
    BaselineMvdrTi,
    /// Mixture-only MVDR from oracle masks, recursively averaged covariances.
    BaselineMvdrTv,
    /// Reference-channel passthrough.
    Identity,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::OracleMvdrFullband,
        Mode::OracleMvdrSubband,
        Mode::StubSrnn,
        Mode::BaselineMvdrTi,
        Mode::BaselineMvdrTv,
        Mode::Identity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::OracleMvdrFullband => "oracle-mvdr-fullband",
            Mode::OracleMvdrSubband => "oracle-mvdr-subband",
            Mode::StubSrnn => "stub-srnn",
            Mode::BaselineMvdrTi => "baseline-mvdr-ti",
            Mode::BaselineMvdrTv => "baseline-mvdr-tv",
            Mode::Identity => "identity",
        }
    }

    pub fn needs_ground_truth(self) -> bool {
        !matches!(self, Mode::StubSrnn | Mode::Identity)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Mode::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!(
                    "unknown mode `{s}` (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

/// Sizes of the forward-pass stubs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StubConfig {
    pub crf_hidden: usize,
    pub hidden: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Seed for the random parameters used when no bundle is supplied.
    pub weight_seed: u64,
}

impl Default for StubConfig {
    fn default() -> Self {
        Self {
            crf_hidden: 16,
            hidden: 32,
            heads: 4,
            head_dim: 8,
            weight_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeparateConfig {
    pub stft: StftConfig,
    pub mode: Mode,
    pub bands: usize,
    pub embedding: usize,
    pub crf_taps: usize,
    pub bf_taps: usize,
    pub ref_ch: usize,
    /// Covariance averaging in the oracle modes. Frame-wise covariances by
    /// default, matching what the learned estimator consumes.
    pub oracle_smoothing: Smoothing,
    /// Recursive factor of the time-variant baseline.
    pub baseline_alpha: f64,
    /// Seed of the default orthonormal analysis filters.
    pub filter_seed: u64,
    pub stub: StubConfig,
}

impl Default for SeparateConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            mode: Mode::default(),
            bands: DEFAULT_BANDS,
            embedding: DEFAULT_EMBEDDING,
            crf_taps: DEFAULT_CRF_TAPS,
            bf_taps: DEFAULT_BF_TAPS,
            ref_ch: 0,
            oracle_smoothing: Smoothing::Instantaneous,
            baseline_alpha: DEFAULT_RECURSIVE_ALPHA,
            filter_seed: 0,
            stub: StubConfig::default(),
        }
    }
}

impl SeparateConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        let f = self.stft.num_bins();
        if self.bands == 0 || self.bands > f {
            return Err(Error::Config(format!(
                "bands must lie in 1..={f}, got {}",
                self.bands
            )));
        }
        if self.embedding == 0 {
            return Err(Error::Config("embedding must be positive".into()));
        }
        if self.crf_taps.is_multiple_of(2) || self.bf_taps.is_multiple_of(2) {
            return Err(Error::Config("tap counts must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.baseline_alpha) {
            return Err(Error::Config(format!(
                "baseline_alpha must lie in [0, 1), got {}",
                self.baseline_alpha
            )));
        }
        Ok(())
    }
}

/// Pipeline input. Ground-truth zone images are needed by the oracle and
/// baseline modes; the cabin geometry feeds the directional features.
#[derive(Debug, Clone, Copy)]
pub struct SeparationInput<'a> {
    pub mixture: &'a Waveform,
    pub echo_ref: Option<&'a Waveform>,
    pub targets: Option<&'a [Waveform]>,
    pub cabin: Option<&'a CabinSpec>,
    pub weights: Option<&'a WeightBundle>,
}

impl<'a> SeparationInput<'a> {
    pub fn new(mixture: &'a Waveform) -> Self {
        Self {
            mixture,
            echo_ref: None,
            targets: None,
            cabin: None,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    /// One mono estimate per zone, as long as the mixture.
    pub outputs: Vec<Waveform>,
    /// Per zone, the number of bins whose weights were zeroed.
    pub zeroed_bins: Vec<usize>,
    pub total_bins: usize,
    pub weights: BeamformerWeights,
}

struct Prepared {
    stacked: Spectrogram,
    mix: Spectrogram,
    echo: Spectrogram,
}

fn prepare(input: &SeparationInput, cfg: &SeparateConfig) -> Result<Prepared> {
    let mix_w = input.mixture;
    let fs = mix_w.sample_rate();
    let echo_w = match input.echo_ref {
        Some(e) => {
            if e.num_channels() != 1 {
                return Err(Error::Shape(format!(
                    "echo reference must be mono, got {} channels",
                    e.num_channels()
                )));
            }
            if e.sample_rate() != fs {
                return Err(Error::SampleRate {
                    expected: fs,
                    actual: e.sample_rate(),
                });
            }
            if e.len() != mix_w.len() {
                return Err(Error::Shape(format!(
                    "echo reference has {} samples, mixture {}",
                    e.len(),
                    mix_w.len()
                )));
            }
            e.clone()
        }
        None => Waveform::zeros(1, mix_w.len(), fs)?,
    };
    if cfg.ref_ch >= mix_w.num_channels() {
        return Err(Error::Config(format!(
            "reference channel {} out of range for {} mics",
            cfg.ref_ch,
            mix_w.num_channels()
        )));
    }
    let mix = stft(mix_w, &cfg.stft)?;
    let echo = stft(&echo_w, &cfg.stft)?;
    let stacked = Spectrogram::stack(&[&mix, &echo])?;
    Ok(Prepared { stacked, mix, echo })
}

fn zone_images(
    input: &SeparationInput,
    mode: Mode,
    cfg: &SeparateConfig,
) -> Result<Vec<Spectrogram>> {
    let targets = input.targets.ok_or_else(|| {
        Error::MissingGroundTruth(format!("mode {mode} needs per-zone target images"))
    })?;
    if targets.is_empty() {
        return Err(Error::MissingGroundTruth("no zone targets given".into()));
    }
    targets
        .iter()
        .map(|t| {
            if t.num_channels() != input.mixture.num_channels() || t.len() != input.mixture.len() {
                return Err(Error::Shape(format!(
                    "target image is {}ch x {}, mixture is {}ch x {}",
                    t.num_channels(),
                    t.len(),
                    input.mixture.num_channels(),
                    input.mixture.len()
                )));
            }
            stft(t, &cfg.stft)
        })
        .collect()
}

/// Oracle speech/noise covariance pair of one zone.
fn oracle_scms(
    p: &Prepared,
    image: &Spectrogram,
    zone: usize,
    cfg: &SeparateConfig,
) -> Result<(CovarianceSeries, CovarianceSeries)> {
    let scm = |target| -> Result<CovarianceSeries> {
        let truth = ground_truth_target(&p.mix, &p.echo, image, target)?;
        let crf = fit_crf(&p.stacked, &truth, cfg.crf_taps, target, zone)?;
        let est = apply_crf_stacked(&p.stacked, &crf)?;
        compute_scm(&est, target, zone).smoothed(cfg.oracle_smoothing)
    };
    Ok((scm(Target::Speech)?, scm(Target::Noise)?))
}

/// Covariances from an oracle power-ratio mask on the reference mic,
/// restricted to the mixture channels (the echo row stays zero).
fn mask_scms(
    p: &Prepared,
    image: &Spectrogram,
    zone: usize,
    ref_ch: usize,
    smoothing: Smoothing,
) -> Result<(CovarianceSeries, CovarianceSeries)> {
    let (m_n, t_n, f_n) = (p.mix.num_channels(), p.mix.num_frames(), p.mix.num_bins());
    let mut speech = p.stacked.zeros_like(m_n + 1);
    let mut noise = p.stacked.zeros_like(m_n + 1);
    for t in 0..t_n {
        for f in 0..f_n {
            let s = image.get(ref_ch, t, f).norm_sqr();
            let n = (p.mix.get(ref_ch, t, f) - image.get(ref_ch, t, f)).norm_sqr();
            let m = if s + n > 0.0 { s / (s + n) } else { 0.0 };
            let (gs, gn) = (m.sqrt(), (1.0 - m).sqrt());
            for c in 0..m_n {
                let y = p.mix.get(c, t, f);
                speech.set(c, t, f, y * gs);
                noise.set(c, t, f, y * gn);
            }
        }
    }
    Ok((
        compute_scm(&speech, Target::Speech, zone).smoothed(smoothing)?,
        compute_scm(&noise, Target::Noise, zone).smoothed(smoothing)?,
    ))
}

/// Push full-band weights through the analysis/synthesis pair of each band.
pub(crate) fn route_through_bands(
    w: &BeamformerWeights,
    plan: &BandPlan,
    analysis: &AnalysisFilters,
    synthesis: &SynthesisFilters,
) -> Result<BeamformerWeights> {
    let real = w.to_real();
    let routed = round_trip(&real, w.frames, w.real_depth(), plan, analysis, synthesis)?;
    w.with_real(&routed)
}

fn band_filters(
    cfg: &SeparateConfig,
    bins: usize,
    fs: u32,
    bundle: Option<&WeightBundle>,
) -> Result<(BandPlan, AnalysisFilters, SynthesisFilters)> {
    let plan = make_band_plan(bins, cfg.bands, fs)?;
    let has = |name: String| bundle.is_some_and(|b| b.get(&name).is_some());
    let analysis = if has(AnalysisFilters::tensor_name(0)) {
        AnalysisFilters::from_bundle(bundle.unwrap(), &plan, cfg.embedding)?
    } else {
        AnalysisFilters::orthonormal(&plan, cfg.embedding, cfg.filter_seed)?
    };
    let synthesis = if has(SynthesisFilters::tensor_name(0)) {
        SynthesisFilters::from_bundle(bundle.unwrap(), &plan, cfg.embedding)?
    } else {
        SynthesisFilters::pseudo_inverse(&analysis)?
    };
    Ok((plan, analysis, synthesis))
}

pub(crate) fn stub_configs(
    cfg: &SeparateConfig,
    mics: usize,
    zones: usize,
) -> (CrfStubConfig, RnnBfConfig) {
    let channels = mics + 1;
    let pairs = mics * (mics - 1) / 2;
    let crf = CrfStubConfig {
        feature_dim: 1 + pairs + zones,
        hidden: cfg.stub.crf_hidden,
        kernel: 3,
        zones,
        taps: cfg.crf_taps,
        channels,
    };
    let bf = RnnBfConfig {
        embedding: cfg.embedding,
        input_depth: 2 * channels * channels,
        hidden: cfg.stub.hidden,
        zones,
        taps: cfg.bf_taps,
        channels,
        heads: cfg.stub.heads,
        head_dim: cfg.stub.head_dim,
    };
    (crf, bf)
}

/// Seeded parameters for both stubs, scaled by `1 / sqrt(fan_in)`.
pub fn default_stub_weights(crf: &CrfStubConfig, bf: &RnnBfConfig, seed: u64) -> WeightBundle {
    let mut out = WeightBundle::new();
    let shapes = crf.tensor_shapes().into_iter().chain(bf.tensor_shapes());
    for (i, (name, shape)) in shapes.enumerate() {
        let fan_in: usize = if shape.len() > 1 {
            shape[1..].iter().product()
        } else {
            shape[0]
        };
        let std = 1.0 / (fan_in.max(1) as f64).sqrt();
        out.merge(WeightBundle::random(
            &[(name, shape)],
            std,
            seed.wrapping_add(i as u64),
        ));
    }
    out
}

fn stub_weights(
    p: &Prepared,
    input: &SeparationInput,
    cfg: &SeparateConfig,
) -> Result<BeamformerWeights> {
    let mics = p.mix.num_channels();
    if mics < 2 {
        return Err(Error::Shape(
            "the stub pipeline needs at least two mics".into(),
        ));
    }
    let default_cabin;
    let cabin = match input.cabin {
        Some(c) => c,
        None => {
            default_cabin = CabinSpec::default();
            &default_cabin
        }
    };
    if cabin.mics.len() != mics {
        return Err(Error::Shape(format!(
            "cabin has {} mics, mixture has {mics} channels",
            cabin.mics.len()
        )));
    }
    let zones = cabin.zones.len();
    let (crf_cfg, bf_cfg) = stub_configs(cfg, mics, zones);
    let defaults;
    let bundle = match input.weights {
        Some(b) => b,
        None => {
            defaults = default_stub_weights(&crf_cfg, &bf_cfg, cfg.stub.weight_seed);
            &defaults
        }
    };

    let pairs = all_pairs(mics);
    let steering = ZoneSteering::from_geometry(
        &cabin.mics,
        &cabin.zones,
        &pairs,
        &cfg.stft,
        input.mixture.sample_rate(),
    )?;
    let feats = extract_features(&p.mix, cfg.ref_ch, &pairs, &steering)?;
    let crfs = neural_crf_stub(&feats, bundle, &crf_cfg)?;
    let norm = LayerNorm::from_bundle(bundle, mics + 1)?;
    let normalized = |crf| -> Result<Vec<f64>> {
        let est = apply_crf_stacked(&p.stacked, crf)?;
        norm.apply_series(&compute_scm(&est, crf.target, crf.zone))
    };
    let speech: Vec<Vec<f64>> = crfs.speech.iter().map(normalized).collect::<Result<_>>()?;
    let noise: Vec<Vec<f64>> = crfs.noise.iter().map(normalized).collect::<Result<_>>()?;
    drop(crfs);

    let (t_n, f_n) = (p.mix.num_frames(), p.mix.num_bins());
    let (plan, analysis, synthesis) =
        band_filters(cfg, f_n, input.mixture.sample_rate(), Some(bundle))?;
    let net = RnnBf::new(bf_cfg, bundle)?;
    let d_in = bf_cfg.input_depth;
    let d_out = bf_cfg.weight_depth();
    let blocks: Vec<Vec<f64>> = (0..plan.num_bands())
        .into_par_iter()
        .map(|k| {
            let a = &analysis.bands[k];
            let s: Vec<Vec<f64>> = speech
                .iter()
                .map(|x| analyze_band(x, t_n, d_in, &plan, a, k))
                .collect();
            let n: Vec<Vec<f64>> = noise
                .iter()
                .map(|x| analyze_band(x, t_n, d_in, &plan, a, k))
                .collect();
            let s_ref: Vec<&[f64]> = s.iter().map(Vec::as_slice).collect();
            let n_ref: Vec<&[f64]> = n.iter().map(Vec::as_slice).collect();
            let band_w = net.forward_band(&s_ref, &n_ref, t_n);
            synthesize_band_compact(&band_w, t_n, d_out, &plan, &synthesis.bands[k], k)
        })
        .collect();
    let real = scatter_bands(&blocks, t_n, d_out, &plan);
    BeamformerWeights::zeros(zones, t_n, f_n, cfg.bf_taps, mics + 1)?.with_real(&real)
}

/// Compute the beamformer weights of any mode without applying them.
pub fn estimate_weights(
    input: &SeparationInput,
    cfg: &SeparateConfig,
) -> Result<BeamformerWeights> {
    cfg.validate()?;
    let p = prepare(input, cfg)?;
    weights_for(&p, input, cfg)
}

fn weights_for(
    p: &Prepared,
    input: &SeparationInput,
    cfg: &SeparateConfig,
) -> Result<BeamformerWeights> {
    let (t_n, f_n, c_n) = (
        p.mix.num_frames(),
        p.mix.num_bins(),
        p.stacked.num_channels(),
    );
    let mode = cfg.mode;
    match mode {
        Mode::Identity => {
            let zones = input
                .targets
                .map(|t| t.len())
                .or(input.cabin.map(|c| c.zones.len()))
                .unwrap_or(crate::scene::NUM_ZONES);
            BeamformerWeights::reference_selector(zones, t_n, f_n, cfg.bf_taps, c_n, cfg.ref_ch)
        }
        Mode::OracleMvdrFullband | Mode::OracleMvdrSubband => {
            let images = zone_images(input, mode, cfg)?;
            let per_zone = images
                .iter()
                .enumerate()
                .map(|(z, img)| {
                    let (s, n) = oracle_scms(p, img, z, cfg)?;
                    oracle_mvdr_weights(&s, &n, cfg.ref_ch, cfg.bf_taps)
                })
                .collect::<Result<Vec<_>>>()?;
            let w = BeamformerWeights::from_zones(per_zone)?;
            if mode == Mode::OracleMvdrSubband {
                let (plan, ana, syn) =
                    band_filters(cfg, f_n, input.mixture.sample_rate(), input.weights)?;
                route_through_bands(&w, &plan, &ana, &syn)
            } else {
                Ok(w)
            }
        }
        Mode::BaselineMvdrTi | Mode::BaselineMvdrTv => {
            let smoothing = if mode == Mode::BaselineMvdrTi {
                Smoothing::TimeInvariant
            } else {
                Smoothing::Recursive {
                    alpha: cfg.baseline_alpha,
                }
            };
            let images = zone_images(input, mode, cfg)?;
            let per_zone = images
                .iter()
                .enumerate()
                .map(|(z, img)| {
                    let (s, n) = mask_scms(p, img, z, cfg.ref_ch, smoothing)?;
                    let mut w = oracle_mvdr_weights(&s, &n, cfg.ref_ch, cfg.bf_taps)?;
                    // mixture-only: the echo reference never contributes
                    for chunk in w.w.chunks_mut(c_n) {
                        chunk[c_n - 1] = crate::linalg::ZERO;
                    }
                    Ok(w)
                })
                .collect::<Result<Vec<_>>>()?;
            BeamformerWeights::from_zones(per_zone)
        }
        Mode::StubSrnn => stub_weights(p, input, cfg),
    }
}

/// Run the separation pipeline: STFT, weight estimation for the chosen
/// mode, multi-frame beamforming of `[mics, echo]`, inverse STFT.
pub fn separate(input: &SeparationInput, cfg: &SeparateConfig) -> Result<Separation> {
    cfg.validate()?;
    let p = prepare(input, cfg)?;
    let weights = weights_for(&p, input, cfg)?;
    if !weights.all_finite() {
        return Err(Error::Numerical("beamformer weights are not finite".into()));
    }
    let outputs = apply_weights_stacked(&p.stacked, &weights)?
        .iter()
        .map(istft)
        .collect::<Result<Vec<_>>>()?;
    let per_zone = weights.frames * weights.bins;
    let zeroed_bins = weights
        .zeroed
        .chunks(per_zone.max(1))
        .map(|c| c.iter().filter(|&&z| z).count())
        .collect();
    Ok(Separation {
        outputs,
        zeroed_bins,
        total_bins: per_zone,
        weights,
    })
}
