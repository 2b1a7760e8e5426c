//! Python bindings: scene simulation, separation, metrics and cost reports.
//!
//! Signals cross the boundary as plain lists (`list[float]` for mono,
//! `list[list[float]]` for channel-major multichannel audio).

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use melsubband::beamformer::{separate as run_separation, Mode, SeparateConfig, SeparationInput};
use melsubband::cli::{render_from_config, RunConfig, Snr};
use melsubband::cost::{compare_modes, format_table, PipelineShapes};
use melsubband::linalg::C64;
use melsubband::scene::{self as scn, CabinSpec, SceneRender};
use melsubband::subband::make_band_plan;
use melsubband::{Error, Spectrogram, StftConfig, WavEncoding, Waveform};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Wav { .. } => PyOSError::new_err(e.to_string()),
        Error::MissingGroundTruth(_)
        | Error::Silent(_)
        | Error::Bundle(_)
        | Error::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn waveform(channels: Vec<Vec<f64>>, sample_rate: u32) -> PyResult<Waveform> {
    Waveform::new(channels, sample_rate).map_err(py_err)
}

fn mono(samples: Vec<f64>) -> PyResult<Waveform> {
    Waveform::mono(samples, CabinSpec::default().sample_rate).map_err(py_err)
}

fn parse_mode(name: &str) -> PyResult<Mode> {
    name.parse().map_err(py_err)
}

/// A rendered cabin scene with its ground-truth components.
#[pyclass(name = "Scene", frozen)]
pub struct PyScene {
    inner: SceneRender,
}

#[pymethods]
impl PyScene {
    #[getter]
    fn mixture(&self) -> Vec<Vec<f64>> {
        self.inner.mixture.channels().to_vec()
    }

    #[getter]
    fn echo_ref(&self) -> Vec<f64> {
        self.inner.echo_ref.channel(0).to_vec()
    }

    /// Per-zone speech images at the mics.
    #[getter]
    fn targets(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner
            .targets
            .iter()
            .map(|t| t.channels().to_vec())
            .collect()
    }

    #[getter]
    fn echo_image(&self) -> Vec<Vec<f64>> {
        self.inner.echo_image.channels().to_vec()
    }

    #[getter]
    fn noise(&self) -> Vec<Vec<f64>> {
        self.inner.noise.channels().to_vec()
    }

    #[getter]
    fn active(&self) -> Vec<bool> {
        self.inner.active.clone()
    }

    #[getter]
    fn has_echo(&self) -> bool {
        self.inner.has_echo
    }

    #[getter]
    fn realized_snr_db(&self) -> Option<f64> {
        self.inner.realized_snr_db
    }

    #[getter]
    fn realized_ser_db(&self) -> Option<f64> {
        self.inner.realized_ser_db
    }

    #[getter]
    fn sample_rate(&self) -> u32 {
        self.inner.mixture.sample_rate()
    }

    #[getter]
    fn num_samples(&self) -> usize {
        self.inner.mixture.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scene(mics={}, samples={}, active={:?}, echo={})",
            self.inner.mixture.num_channels(),
            self.inner.mixture.len(),
            self.inner.active,
            self.inner.has_echo
        )
    }
}

/// Complex STFT of a multichannel signal, laid out `(channel, frame, bin)`.
#[pyclass(name = "Spectrogram", frozen)]
pub struct PySpectrogram {
    inner: Spectrogram,
}

impl PySpectrogram {
    fn part(&self, f: impl Fn(&C64) -> f64) -> Vec<Vec<Vec<f64>>> {
        let s = &self.inner;
        (0..s.num_channels())
            .map(|c| {
                s.channel(c)
                    .chunks(s.num_bins())
                    .map(|row| row.iter().map(&f).collect())
                    .collect()
            })
            .collect()
    }
}

#[pymethods]
impl PySpectrogram {
    #[getter]
    fn channels(&self) -> usize {
        self.inner.num_channels()
    }

    #[getter]
    fn frames(&self) -> usize {
        self.inner.num_frames()
    }

    #[getter]
    fn bins(&self) -> usize {
        self.inner.num_bins()
    }

    fn real(&self) -> Vec<Vec<Vec<f64>>> {
        self.part(|v| v.re)
    }

    fn imag(&self) -> Vec<Vec<Vec<f64>>> {
        self.part(|v| v.im)
    }

    /// Power in dB, floored at -200 dB.
    fn power_db(&self) -> Vec<Vec<Vec<f64>>> {
        self.part(|v| 10.0 * v.norm_sqr().max(1e-20).log10())
    }

    fn __repr__(&self) -> String {
        format!(
            "Spectrogram(channels={}, frames={}, bins={})",
            self.channels(),
            self.frames(),
            self.bins()
        )
    }
}

/// Render a cabin scene the same way `melsub simulate` does.
#[pyfunction]
#[pyo3(signature = (seed=0, *, active=None, duration_s=3.0, rt60=0.3, snr_db=None, echo=false, ser_db=0.0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    seed: u64,
    active: Option<Vec<bool>>,
    duration_s: f64,
    rt60: f64,
    snr_db: Option<f64>,
    echo: bool,
    ser_db: f64,
) -> PyResult<PyScene> {
    let mut cfg = RunConfig::default();
    cfg.scene.seed = seed;
    if let Some(a) = active {
        cfg.scene.active = a;
    }
    cfg.scene.duration_s = duration_s;
    cfg.scene.echo = echo;
    cfg.cabin.rt60 = rt60;
    cfg.render.snr_db = Snr(snr_db);
    cfg.render.ser_db = ser_db;
    cfg.validate_scene()
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let inner = py.detach(|| render_from_config(&cfg)).map_err(py_err)?;
    Ok(PyScene { inner })
}

fn separation_config(
    mode: &str,
    bands: usize,
    embedding: usize,
    seed: u64,
) -> PyResult<SeparateConfig> {
    let mut cfg = SeparateConfig {
        mode: parse_mode(mode)?,
        bands,
        embedding,
        filter_seed: seed,
        ..Default::default()
    };
    cfg.stub.weight_seed = seed;
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Separate a simulated scene into one mono signal per zone. Oracle modes use
/// the scene's ground-truth components.
#[pyfunction]
#[pyo3(signature = (scene, *, mode="oracle-mvdr-subband", bands=64, embedding=32, seed=0))]
fn separate(
    py: Python<'_>,
    scene: &PyScene,
    mode: &str,
    bands: usize,
    embedding: usize,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let cfg = separation_config(mode, bands, embedding, seed)?;
    let r = &scene.inner;
    let out = py
        .detach(|| {
            let mut input = SeparationInput::new(&r.mixture);
            input.echo_ref = Some(&r.echo_ref);
            input.targets = Some(&r.targets);
            run_separation(&input, &cfg)
        })
        .map_err(py_err)?;
    Ok(out
        .outputs
        .into_iter()
        .map(|w| w.channel(0).to_vec())
        .collect())
}

/// Separate a raw mixture with a mode that needs no ground truth
/// (`identity` or `stub-srnn`).
#[pyfunction]
#[pyo3(signature = (mixture, *, echo_ref=None, sample_rate=16000, mode="stub-srnn", bands=64, embedding=32, seed=0))]
#[allow(clippy::too_many_arguments)]
fn separate_mixture(
    py: Python<'_>,
    mixture: Vec<Vec<f64>>,
    echo_ref: Option<Vec<f64>>,
    sample_rate: u32,
    mode: &str,
    bands: usize,
    embedding: usize,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let cfg = separation_config(mode, bands, embedding, seed)?;
    let mix = waveform(mixture, sample_rate)?;
    let echo = echo_ref
        .map(|e| waveform(vec![e], sample_rate))
        .transpose()?;
    let out = py
        .detach(|| {
            let mut input = SeparationInput::new(&mix);
            input.echo_ref = echo.as_ref();
            run_separation(&input, &cfg)
        })
        .map_err(py_err)?;
    Ok(out
        .outputs
        .into_iter()
        .map(|w| w.channel(0).to_vec())
        .collect())
}

#[pyfunction]
#[pyo3(signature = (signal, *, sample_rate=16000, fft_size=512, window_len=512, hop=256))]
fn stft(
    signal: Vec<Vec<f64>>,
    sample_rate: u32,
    fft_size: usize,
    window_len: usize,
    hop: usize,
) -> PyResult<PySpectrogram> {
    let cfg = StftConfig {
        fft_size,
        window_len,
        hop,
        ..Default::default()
    };
    let inner = melsubband::stft(&waveform(signal, sample_rate)?, &cfg).map_err(py_err)?;
    Ok(PySpectrogram { inner })
}

#[pyfunction]
fn istft(spec: &PySpectrogram) -> PyResult<Vec<Vec<f64>>> {
    Ok(melsubband::istft(&spec.inner)
        .map_err(py_err)?
        .into_channels())
}

/// Mel band edges: band `k` covers bins `edges[k]..edges[k + 1]`.
#[pyfunction]
#[pyo3(signature = (bands, *, bins=257, sample_rate=16000))]
fn band_edges(bands: usize, bins: usize, sample_rate: u32) -> PyResult<Vec<usize>> {
    Ok(make_band_plan(bins, bands, sample_rate)
        .map_err(py_err)?
        .edges)
}

#[pyfunction]
fn si_snr(estimate: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    melsubband::metrics::si_snr(&mono(estimate)?, &mono(reference)?).map_err(py_err)
}

#[pyfunction]
fn sdr(estimate: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    melsubband::metrics::sdr(&mono(estimate)?, &mono(reference)?).map_err(py_err)
}

/// Impulse responses from `source` to each microphone of the default cabin.
#[pyfunction]
#[pyo3(signature = (source, *, rt60=0.3))]
fn simulate_rir(py: Python<'_>, source: [f64; 3], rt60: f64) -> PyResult<Vec<Vec<f64>>> {
    let spec = CabinSpec {
        rt60,
        ..Default::default()
    };
    spec.validate().map_err(py_err)?;
    let rir = py
        .detach(|| scn::simulate_rir(&spec, &source))
        .map_err(py_err)?;
    Ok(rir.taps)
}

#[pyfunction]
#[pyo3(signature = (rir, *, sample_rate=16000))]
fn estimate_rt60(rir: Vec<f64>, sample_rate: u32) -> Option<f64> {
    scn::estimate_rt60(&rir, sample_rate)
}

/// Per-mode compute cost: a list of dicts sorted by total MACs, highest first.
#[pyfunction]
#[pyo3(signature = (bands=vec![8, 16, 32, 64]))]
fn cost_report<'py>(
    py: Python<'py>,
    bands: Vec<usize>,
) -> PyResult<Vec<Bound<'py, pyo3::types::PyDict>>> {
    use pyo3::types::PyDict;
    let reports = compare_modes(&PipelineShapes::default(), &bands).map_err(py_err)?;
    reports
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("mode", r.mode.to_string())?;
            d.set_item("gmacs", r.gmacs())?;
            d.set_item("macs_per_second", r.macs_per_second)?;
            d.set_item("estimator", r.breakdown.estimator)?;
            d.set_item("transform", r.breakdown.transform)?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
#[pyo3(signature = (bands=vec![8, 16, 32, 64]))]
fn cost_table(bands: Vec<usize>) -> PyResult<String> {
    let reports = compare_modes(&PipelineShapes::default(), &bands).map_err(py_err)?;
    Ok(format_table(&reports))
}

/// Returns `(channels, sample_rate)`.
#[pyfunction]
fn read_wav(path: std::path::PathBuf) -> PyResult<(Vec<Vec<f64>>, u32)> {
    let w = melsubband::read_wav(&path).map_err(py_err)?;
    let fs = w.sample_rate();
    Ok((w.into_channels(), fs))
}

/// Write 32-bit float samples; values must lie in [-1, 1].
#[pyfunction]
#[pyo3(signature = (path, channels, *, sample_rate=16000))]
fn write_wav(path: std::path::PathBuf, channels: Vec<Vec<f64>>, sample_rate: u32) -> PyResult<()> {
    melsubband::write_wav(
        &waveform(channels, sample_rate)?,
        &path,
        WavEncoding::Float32,
    )
    .map_err(py_err)
}

/// Mel-subband beamforming for in-car speech separation.
#[pymodule(name = "melsubband")]
mod module {
    use pyo3::prelude::*;

    #[pymodule_export]
    use super::{
        band_edges, cost_report, cost_table, estimate_rt60, istft, read_wav, sdr, separate,
        separate_mixture, si_snr, simulate, simulate_rir, stft, write_wav, PyScene, PySpectrogram,
    };

    #[pymodule_init]
    fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
        m.add("__version__", env!("CARGO_PKG_VERSION"))?;
        let modes: Vec<&str> = melsubband::beamformer::Mode::ALL
            .iter()
            .map(|m| m.name())
            .collect();
        m.add("MODES", modes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separation_config_checks_its_arguments() {
        let cfg = separation_config("stub-srnn", 16, 8, 4).unwrap();
        assert_eq!(
            (cfg.mode, cfg.bands, cfg.stub.weight_seed),
            (Mode::StubSrnn, 16, 4)
        );
        assert!(separation_config("bogus", 16, 8, 0).is_err());
        assert!(separation_config("identity", 0, 8, 0).is_err());
        assert!(separation_config("identity", 300, 8, 0).is_err());
    }

    #[test]
    fn errors_map_to_python_exception_types() {
        Python::initialize();
        Python::attach(|py| {
            let io = py_err(Error::Wav {
                path: "x.wav".into(),
                message: "bad".into(),
            });
            assert!(io.is_instance_of::<PyOSError>(py));
            assert!(py_err(Error::Config("x".into())).is_instance_of::<PyValueError>(py));
            assert!(py_err(Error::Numerical("x".into())).is_instance_of::<PyRuntimeError>(py));
        });
    }
}
