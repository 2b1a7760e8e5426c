use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::png::write_spectrogram_png;
use crate::beamformer::{separate, SeparationInput};
use crate::cost::{compare_modes, format_table, CostReport};
use crate::error::{Error, Result};
use crate::metrics::{loss_value, sdr, si_snr};
use crate::scene::{render_scene, synth_speech, CabinSpec, RenderOptions, SceneRender};
use crate::signal::{read_wav, stft, write_wav, WavEncoding, Waveform};

pub const MANIFEST: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

pub fn target_file(zone: usize) -> String {
    format!("target_zone{zone}.wav")
}

pub fn output_file(zone: usize) -> String {
    format!("zone{zone}.wav")
}

/// Per-signal seeds derived from the scene seed.
fn talker_seed(seed: u64, zone: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(zone as u64 + 1)
}

fn echo_seed(seed: u64) -> u64 {
    talker_seed(seed, 100)
}

fn noise_seed(seed: u64) -> u64 {
    talker_seed(seed, 200)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub version: u32,
    pub sample_rate: u32,
    pub num_samples: usize,
    pub mics: usize,
    pub zones: usize,
    pub active: Vec<bool>,
    pub has_echo: bool,
    pub seed: u64,
    /// `None` for a noise-free render.
    pub snr_db: Option<f64>,
    pub ser_db: Option<f64>,
    pub realized_snr_db: Option<f64>,
    pub realized_ser_db: Option<f64>,
    pub gain: f64,
    pub noise_file: Option<String>,
    pub echo_image_file: Option<String>,
    pub notes: Vec<String>,
    pub cabin: CabinSpec,
    pub render: RenderOptions,
}

/// Render the configured scene in memory.
pub fn render_from_config(cfg: &RunConfig) -> Result<SceneRender> {
    cfg.validate_scene()?;
    let fs = cfg.cabin.sample_rate;
    let n = (cfg.scene.duration_s * fs as f64).round() as usize;
    let seed = cfg.scene.seed;
    let sources = cfg
        .scene
        .active
        .iter()
        .enumerate()
        .map(|(z, on)| {
            on.then(|| Waveform::mono(synth_speech(talker_seed(seed, z), n, fs), fs))
                .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    let echo = cfg
        .scene
        .echo
        .then(|| Waveform::mono(synth_speech(echo_seed(seed), n, fs), fs))
        .transpose()?;
    render_scene(&cfg.cabin, &sources, echo.as_ref(), &render_options(cfg))
}

fn render_options(cfg: &RunConfig) -> RenderOptions {
    RenderOptions {
        snr_db: cfg.render.snr_db.0,
        ser_db: cfg.scene.echo.then_some(cfg.render.ser_db),
        distortion: cfg.render.distortion,
        noise: cfg.render.noise,
        seed: noise_seed(cfg.scene.seed),
    }
}

/// Write a scene bundle: the mixture, the echo reference, per-zone target
/// images, the interference components that exist, and a manifest.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<SceneManifest> {
    let r = render_from_config(cfg)?;
    create_dir(out)?;
    let enc = WavEncoding::Float32;
    write_wav(&r.mixture, out.join("mixture.wav"), enc)?;
    write_wav(&r.echo_ref, out.join("echo_ref.wav"), enc)?;
    for (z, t) in r.targets.iter().enumerate() {
        write_wav(t, out.join(target_file(z)), enc)?;
    }
    let mut notes = Vec::new();
    let noise_file = match r.snr_db {
        Some(_) => {
            write_wav(&r.noise, out.join("noise.wav"), enc)?;
            Some("noise.wav".to_string())
        }
        None => {
            notes.push("snr is +inf: rendered without noise, no noise file".to_string());
            None
        }
    };
    let echo_image_file = if r.has_echo {
        write_wav(&r.echo_image, out.join("echo_image.wav"), enc)?;
        Some("echo_image.wav".to_string())
    } else {
        notes.push("no loudspeaker echo: echo_ref.wav is silent".to_string());
        None
    };
    for (z, on) in r.active.iter().enumerate() {
        if !on {
            notes.push(format!(
                "zone {z} has no talker: {} is silent",
                target_file(z)
            ));
        }
    }
    let manifest = SceneManifest {
        version: MANIFEST_VERSION,
        sample_rate: r.mixture.sample_rate(),
        num_samples: r.mixture.len(),
        mics: r.mixture.num_channels(),
        zones: r.targets.len(),
        active: r.active.clone(),
        has_echo: r.has_echo,
        seed: cfg.scene.seed,
        snr_db: r.snr_db,
        ser_db: r.ser_db,
        realized_snr_db: r.realized_snr_db,
        realized_ser_db: r.realized_ser_db,
        gain: r.gain,
        noise_file,
        echo_image_file,
        notes,
        cabin: cfg.cabin.clone(),
        render: render_options(cfg),
    };
    write_text(&out.join(MANIFEST), &to_json(&manifest))?;
    Ok(manifest)
}

/// A scene bundle loaded back from disk.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub manifest: SceneManifest,
    pub mixture: Waveform,
    pub echo_ref: Option<Waveform>,
    /// Present only when every zone's target image is on disk.
    pub targets: Option<Vec<Waveform>>,
}

pub fn load_bundle(dir: &Path) -> Result<Bundle> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: SceneManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", mpath.display())))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Config(format!(
            "{}: unsupported manifest version {}",
            mpath.display(),
            manifest.version
        )));
    }
    let mixture = read_wav(dir.join("mixture.wav"))?;
    let echo_path = dir.join("echo_ref.wav");
    let echo_ref = echo_path
        .exists()
        .then(|| read_wav(&echo_path))
        .transpose()?;
    let target_paths: Vec<PathBuf> = (0..manifest.zones)
        .map(|z| dir.join(target_file(z)))
        .collect();
    let targets = if target_paths.iter().all(|p| p.exists()) {
        Some(
            target_paths
                .iter()
                .map(read_wav)
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(Bundle {
        manifest,
        mixture,
        echo_ref,
        targets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneReport {
    pub zone: usize,
    pub active: bool,
    /// No target energy in this zone; scores are undefined.
    pub silent: bool,
    pub si_snr: Option<f64>,
    pub sdr: Option<f64>,
    pub si_snr_mixture: Option<f64>,
    pub sdr_mixture: Option<f64>,
    pub si_snr_improvement: Option<f64>,
    /// Output power relative to the loudest zone output, in dB.
    pub relative_power_db: f64,
    pub zeroed_bins: usize,
    pub total_bins: usize,
    /// Gain applied before writing to keep the file within [-1, 1].
    pub write_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub mode: String,
    pub bands: usize,
    pub embedding: usize,
    pub ref_ch: usize,
    pub zones: Vec<ZoneReport>,
    /// Summed training objective over the non-silent zones.
    pub loss: Option<f64>,
}

fn power_db(w: &Waveform) -> f64 {
    10.0 * w.power().max(1e-30).log10()
}

/// Separate a bundle and write per-zone audio, `metrics.json` and, when
/// asked, spectrogram images.
pub fn cmd_separate(cfg: &RunConfig, bundle_dir: &Path, out: &Path) -> Result<SeparationReport> {
    cfg.validate_separate()?;
    let b = load_bundle(bundle_dir)?;
    let sep_cfg = &cfg.separate;
    let mut input = SeparationInput::new(&b.mixture);
    input.echo_ref = b.echo_ref.as_ref();
    input.targets = b.targets.as_deref();
    input.cabin = Some(&b.manifest.cabin);
    let result = separate(&input, sep_cfg)?;

    create_dir(out)?;
    let ref_ch = sep_cfg.ref_ch;
    let mix_ref = b.mixture.select(ref_ch)?;
    let loudest = result
        .outputs
        .iter()
        .map(power_db)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut zones = Vec::new();
    let (mut est_pairs, mut ref_pairs) = (Vec::new(), Vec::new());
    for (z, est) in result.outputs.iter().enumerate() {
        let peak = est.peak();
        let write_gain = if peak > 1.0 { 0.999 / peak } else { 1.0 };
        write_wav(
            &est.scaled(write_gain),
            out.join(output_file(z)),
            WavEncoding::Float32,
        )?;
        let target = b
            .targets
            .as_ref()
            .and_then(|t| t.get(z))
            .map(|t| t.select(ref_ch))
            .transpose()?;
        let scored = target.as_ref().filter(|t| t.power() > 0.0);
        let (si, sd, si_mix, sd_mix) = match scored {
            Some(t) => (
                Some(si_snr(est, t)?),
                Some(sdr(est, t)?),
                Some(si_snr(&mix_ref, t)?),
                Some(sdr(&mix_ref, t)?),
            ),
            None => (None, None, None, None),
        };
        if let Some(t) = scored {
            est_pairs.push(est.clone());
            ref_pairs.push(t.clone());
        }
        zones.push(ZoneReport {
            zone: z,
            active: b.manifest.active.get(z).copied().unwrap_or(false),
            silent: scored.is_none(),
            si_snr: si,
            sdr: sd,
            si_snr_mixture: si_mix,
            sdr_mixture: sd_mix,
            si_snr_improvement: si.zip(si_mix).map(|(a, m)| a - m),
            relative_power_db: power_db(est) - loudest,
            zeroed_bins: result.zeroed_bins.get(z).copied().unwrap_or(0),
            total_bins: result.total_bins,
            write_gain,
        });
    }
    let loss = if est_pairs.is_empty() {
        None
    } else {
        Some(loss_value(&est_pairs, &ref_pairs, &sep_cfg.stft)?)
    };
    let report = SeparationReport {
        mode: sep_cfg.mode.to_string(),
        bands: sep_cfg.bands,
        embedding: sep_cfg.embedding,
        ref_ch,
        zones,
        loss,
    };
    write_text(&out.join("metrics.json"), &to_json(&report))?;

    if cfg.output.png {
        let mix_spec = stft(&b.mixture, &sep_cfg.stft)?;
        write_spectrogram_png(&mix_spec, ref_ch, &out.join("mixture.png"))?;
        for (z, est) in result.outputs.iter().enumerate() {
            let s = stft(est, &sep_cfg.stft)?;
            write_spectrogram_png(&s, 0, &out.join(format!("zone{z}.png")))?;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub shapes: crate::cost::PipelineShapes,
    /// Highest total first.
    pub reports: Vec<CostReport>,
}

/// Compare NB, FB and SB costs; writes `cost.json` and returns the table.
pub fn cmd_cost(cfg: &RunConfig, out: &Path) -> Result<(CostSummary, String)> {
    cfg.validate_cost()?;
    let reports = compare_modes(&cfg.cost.shapes, &cfg.cost.bands)?;
    let table = format_table(&reports);
    let summary = CostSummary {
        shapes: cfg.cost.shapes,
        reports,
    };
    create_dir(out)?;
    write_text(&out.join("cost.json"), &to_json(&summary))?;
    write_text(&out.join("cost.txt"), &table)?;
    Ok((summary, table))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub estimate: PathBuf,
    pub reference: PathBuf,
    pub si_snr: f64,
    pub sdr: f64,
}

pub fn cmd_metrics(
    est: &Path,
    reference: &Path,
    est_ch: usize,
    ref_ch: usize,
) -> Result<MetricReport> {
    let e = read_wav(est)?.select(est_ch)?;
    let r = read_wav(reference)?.select(ref_ch)?;
    if e.sample_rate() != r.sample_rate() {
        return Err(Error::SampleRate {
            expected: r.sample_rate(),
            actual: e.sample_rate(),
        });
    }
    Ok(MetricReport {
        estimate: est.to_path_buf(),
        reference: reference.to_path_buf(),
        si_snr: si_snr(&e, &r)?,
        sdr: sdr(&e, &r)?,
    })
}

pub fn write_metric_report(report: &MetricReport, out: &Path) -> Result<()> {
    create_dir(out)?;
    write_text(&out.join("metrics.json"), &to_json(report))
}
