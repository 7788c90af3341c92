//! Python bindings. Settings classes expose every field as a read/write
//! attribute; traces cross the boundary as plain lists.

use dropletlink as dl;
use dropletlink::harness::{self, ExperimentReport, Metric};
use dropletlink::io;
use dropletlink::ook;
use dropletlink::sizing::{self, Baselines};
use dropletlink::spectral::{self, ColourSignature, ReferenceLibrary};
use dropletlink::types::{Channels, DropletSchedule, InkSpec, IrTrace, SensorOrder, SpectralSample, SpectralTrace};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

create_exception!(dropletlink, DropletLinkError, PyValueError);

fn err(e: dl::Error) -> PyErr {
    DropletLinkError::new_err(e.to_string())
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for dl::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn apply_kwargs(target: &Bound<'_, PyAny>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<()> {
    if let Some(kw) = kwargs {
        for (k, v) in kw.iter() {
            let name: String = k.extract()?;
            if !target.hasattr(name.as_str())? {
                return Err(DropletLinkError::new_err(format!("unknown setting {name:?}")));
            }
            target.setattr(name.as_str(), v)?;
        }
    }
    Ok(())
}

/// Channel simulator settings. Keyword arguments override the defaults.
#[pyclass(name = "ChannelConfig", module = "dropletlink", get_all, set_all)]
pub struct PyChannelConfig {
    v_chan_mm_s: f64,
    speed_jitter_frac: f64,
    sensor_separation_mm: f64,
    inlet_distance_mm: f64,
    /// "ir_first" or "spectral_first"
    sensor_order: String,
    ir_sample_rate_hz: f64,
    spectral_sample_rate_hz: f64,
    spectral_rate_override: bool,
    ir_amplitude_v: f64,
    ir_offset_v: f64,
    noise_sigma_v: f64,
    spectral_noise_rel: f64,
    edge_time_s: f64,
    baseline_counts: Channels,
    path_length_mm: f64,
    duration_s: Option<f64>,
    rng_seed: u64,
}

impl From<&dl::ChannelConfig> for PyChannelConfig {
    fn from(c: &dl::ChannelConfig) -> Self {
        Self {
            v_chan_mm_s: c.v_chan_mm_s,
            speed_jitter_frac: c.speed_jitter_frac,
            sensor_separation_mm: c.sensor_separation_mm,
            inlet_distance_mm: c.inlet_distance_mm,
            sensor_order: match c.sensor_order {
                SensorOrder::IrFirst => "ir_first".into(),
                SensorOrder::SpectralFirst => "spectral_first".into(),
            },
            ir_sample_rate_hz: c.ir_sample_rate_hz,
            spectral_sample_rate_hz: c.spectral_sample_rate_hz,
            spectral_rate_override: c.spectral_rate_override,
            ir_amplitude_v: c.ir_amplitude_v,
            ir_offset_v: c.ir_offset_v,
            noise_sigma_v: c.noise_sigma_v,
            spectral_noise_rel: c.spectral_noise_rel,
            edge_time_s: c.edge_time_s,
            baseline_counts: c.baseline_counts,
            path_length_mm: c.path_length_mm,
            duration_s: c.duration_s,
            rng_seed: c.rng_seed,
        }
    }
}

impl PyChannelConfig {
    fn to_core(&self) -> PyResult<dl::ChannelConfig> {
        let sensor_order = match self.sensor_order.as_str() {
            "ir_first" => SensorOrder::IrFirst,
            "spectral_first" => SensorOrder::SpectralFirst,
            other => return Err(DropletLinkError::new_err(format!("sensor_order {other:?}"))),
        };
        let cfg = dl::ChannelConfig {
            v_chan_mm_s: self.v_chan_mm_s,
            speed_jitter_frac: self.speed_jitter_frac,
            sensor_separation_mm: self.sensor_separation_mm,
            inlet_distance_mm: self.inlet_distance_mm,
            sensor_order,
            ir_sample_rate_hz: self.ir_sample_rate_hz,
            spectral_sample_rate_hz: self.spectral_sample_rate_hz,
            spectral_rate_override: self.spectral_rate_override,
            ir_amplitude_v: self.ir_amplitude_v,
            ir_offset_v: self.ir_offset_v,
            noise_sigma_v: self.noise_sigma_v,
            spectral_noise_rel: self.spectral_noise_rel,
            edge_time_s: self.edge_time_s,
            baseline_counts: self.baseline_counts,
            path_length_mm: self.path_length_mm,
            duration_s: self.duration_s,
            rng_seed: self.rng_seed,
        };
        cfg.validate().py()?;
        Ok(cfg)
    }
}

#[pymethods]
impl PyChannelConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Py<Self>> {
        let obj = Py::new(py, Self::from(&dl::ChannelConfig::default()))?;
        apply_kwargs(obj.bind(py).as_any(), kwargs)?;
        obj.borrow(py).to_core()?;
        Ok(obj)
    }

    /// Raises if the current values are inconsistent.
    fn validate(&self) -> PyResult<()> {
        self.to_core().map(|_| ())
    }

    fn nominal_delay_s(&self) -> PyResult<f64> {
        Ok(self.to_core()?.nominal_delay_s())
    }

    fn __repr__(&self) -> String {
        format!(
            "ChannelConfig(v_chan_mm_s={}, speed_jitter_frac={}, noise_sigma_v={}, rng_seed={}, ...)",
            self.v_chan_mm_s, self.speed_jitter_frac, self.noise_sigma_v, self.rng_seed
        )
    }
}

/// OOK receiver settings. Keyword arguments override the defaults.
#[pyclass(name = "OokParams", module = "dropletlink", get_all, set_all)]
pub struct PyOokParams {
    threshold_v: f64,
    duty_fraction: f64,
    symbol_period_s: f64,
    n_bits: Option<usize>,
    baseline_window_s: f64,
    correct_offset: bool,
    resync: bool,
    early_guard_fraction: f64,
}

impl PyOokParams {
    fn to_core(&self) -> PyResult<ook::OokParams> {
        let p = ook::OokParams {
            threshold_v: self.threshold_v,
            duty_fraction: self.duty_fraction,
            symbol_period_s: self.symbol_period_s,
            n_bits: self.n_bits,
            baseline_window_s: self.baseline_window_s,
            correct_offset: self.correct_offset,
            resync: self.resync,
            early_guard_fraction: self.early_guard_fraction,
        };
        p.validate().py()?;
        Ok(p)
    }
}

#[pymethods]
impl PyOokParams {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Py<Self>> {
        let d = ook::OokParams::default();
        let obj = Py::new(
            py,
            Self {
                threshold_v: d.threshold_v,
                duty_fraction: d.duty_fraction,
                symbol_period_s: d.symbol_period_s,
                n_bits: d.n_bits,
                baseline_window_s: d.baseline_window_s,
                correct_offset: d.correct_offset,
                resync: d.resync,
                early_guard_fraction: d.early_guard_fraction,
            },
        )?;
        apply_kwargs(obj.bind(py).as_any(), kwargs)?;
        obj.borrow(py).to_core()?;
        Ok(obj)
    }

    fn __repr__(&self) -> String {
        format!(
            "OokParams(threshold_v={}, duty_fraction={}, symbol_period_s={}, n_bits={:?}, resync={})",
            self.threshold_v, self.duty_fraction, self.symbol_period_s, self.n_bits, self.resync
        )
    }
}

fn config_or_default(cfg: Option<PyRef<'_, PyChannelConfig>>) -> PyResult<dl::ChannelConfig> {
    cfg.map_or_else(|| Ok(dl::ChannelConfig::default()), |c| c.to_core())
}

fn params_or_default(p: Option<PyRef<'_, PyOokParams>>) -> PyResult<ook::OokParams> {
    p.map_or_else(|| Ok(ook::OokParams::default()), |p| p.to_core())
}

/// Output of `simulate`: both sensor traces and per-droplet ground truth.
#[pyclass(name = "Simulation", module = "dropletlink")]
pub struct PySimulation {
    inner: dl::Simulation,
}

#[pymethods]
impl PySimulation {
    #[getter]
    fn ir(&self) -> Vec<f64> {
        self.inner.ir.samples().to_vec()
    }

    #[getter]
    fn ir_sample_rate_hz(&self) -> f64 {
        self.inner.ir.sample_rate_hz()
    }

    /// One 6-channel row per spectral sample.
    #[getter]
    fn spectral(&self) -> Vec<Channels> {
        self.inner.spectral.samples().iter().map(|s| s.channels).collect()
    }

    #[getter]
    fn spectral_sample_rate_hz(&self) -> f64 {
        self.inner.spectral.sample_rate_hz()
    }

    /// `(ir_arrival_s, spectral_arrival_s, speed_mm_s, length_mm)` per droplet.
    #[getter]
    fn passages(&self) -> Vec<(f64, f64, f64, f64)> {
        self.inner
            .passages
            .iter()
            .map(|p| (p.ir_arrival_s, p.spectral_arrival_s, p.actual_speed_mm_s, p.actual_length_mm))
            .collect()
    }

    fn ir_csv(&self) -> String {
        io::write_ir_csv(&self.inner.ir)
    }

    fn spectral_csv(&self) -> String {
        io::write_spectral_csv(&self.inner.spectral)
    }

    /// Both traces as one serial frame stream ordered by timestamp.
    fn frames<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        let mut frames = io::ir_frames(&self.inner.ir);
        frames.extend(io::spectral_frames(&self.inner.spectral));
        frames.sort_by_key(|f| f.timestamp_ms());
        PyBytes::new(py, &io::encode_frames(&frames))
    }

    /// Speed and length of every droplet, from the leading baseline window.
    fn estimate_size(&self, config: PyRef<'_, PyChannelConfig>) -> PyResult<Vec<(f64, f64, f64, f64)>> {
        let cfg = config.to_core()?;
        let base = Baselines::estimate(&self.inner.ir, &self.inner.spectral, harness::BASELINE_WINDOW_S).py()?;
        Ok(sizing::estimate_size(&self.inner.ir, &self.inner.spectral, &cfg, &base)
            .py()?
            .into_iter()
            .map(|e| (e.length_mm, e.speed_mm_s, e.t_drop_s, e.delta_t_s))
            .collect())
    }

    /// `(label, distance, margin)` for each droplet against the standard inks.
    fn classify(&self, config: PyRef<'_, PyChannelConfig>) -> PyResult<Vec<(String, f64, f64)>> {
        let cfg = config.to_core()?;
        let lib = harness::calibrate_library(&dl::channel::standard_inks(), 0.25, &cfg).py()?;
        let base = Baselines::estimate(&self.inner.ir, &self.inner.spectral, harness::BASELINE_WINDOW_S).py()?;
        Ok(spectral::classify_droplets(&self.inner.spectral, &base.spectral, &lib, spectral::DEFAULT_DEPTH_THRESHOLD)
            .py()?
            .into_iter()
            .map(|(_, _, c)| (c.label, c.distance, c.margin))
            .collect())
    }
}

fn schedule(
    bits: &str,
    symbol_period_s: f64,
    ink: &str,
    concentration: f64,
    length_mm: f64,
) -> PyResult<DropletSchedule> {
    let bits = ook::parse_bits(bits).py()?;
    let template = ook::DropletTemplate { length_mm, ink: harness::ink_by_name(ink).py()?, concentration };
    ook::encode(&bits, symbol_period_s, &template).py()
}

/// Injection times of the droplets that encode `bits`.
#[pyfunction]
#[pyo3(signature = (bits, symbol_period_s=1.0))]
fn encode(bits: &str, symbol_period_s: f64) -> PyResult<Vec<f64>> {
    Ok(schedule(bits, symbol_period_s, "red", 0.25, 5.0)?
        .events()
        .iter()
        .map(|e| e.inject_time_s)
        .collect())
}

/// Encodes `bits` and simulates both sensor traces.
#[pyfunction]
#[pyo3(signature = (bits, config=None, symbol_period_s=1.0, ink="red", concentration=0.25, length_mm=5.0))]
fn simulate(
    bits: &str,
    config: Option<PyRef<'_, PyChannelConfig>>,
    symbol_period_s: f64,
    ink: &str,
    concentration: f64,
    length_mm: f64,
) -> PyResult<PySimulation> {
    let cfg = config_or_default(config)?;
    let sched = schedule(bits, symbol_period_s, ink, concentration, length_mm)?;
    Ok(PySimulation { inner: dl::simulate(&sched, &cfg).py()? })
}

/// Decodes an IR trace; returns a dict with bits, edges, intervals, duty and offset.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate_hz=100.0, params=None, t0_s=0.0))]
fn decode<'py>(
    py: Python<'py>,
    samples: Vec<f64>,
    sample_rate_hz: f64,
    params: Option<PyRef<'_, PyOokParams>>,
    t0_s: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let p = params_or_default(params)?;
    let trace = IrTrace::new(sample_rate_hz, samples, t0_s).py()?;
    let r = ook::decode(&trace, &p).py()?;
    let out = PyDict::new(py);
    out.set_item("bits", ook::format_bits(&r.bits))?;
    let edges: Vec<(f64, &str)> = r
        .edges
        .iter()
        .map(|e| (e.time_s, if e.kind == ook::EdgeKind::Rising { "rising" } else { "falling" }))
        .collect();
    out.set_item("edges", edges)?;
    out.set_item("symbol_intervals", r.symbol_intervals)?;
    out.set_item("duty_per_symbol", r.duty_per_symbol)?;
    out.set_item("offset_v", r.offset_v)?;
    Ok(out)
}

#[pyfunction]
fn bit_error_rate(sent: &str, received: &str) -> PyResult<f64> {
    ook::bit_error_rate(&ook::parse_bits(sent).py()?, &ook::parse_bits(received).py()?).py()
}

#[pyfunction]
#[pyo3(signature = (absorption_coeffs, concentration, path_length_mm=1.0))]
fn transmittance(absorption_coeffs: Channels, concentration: f64, path_length_mm: f64) -> PyResult<Channels> {
    let ink = InkSpec::new("ink", absorption_coeffs).py()?;
    Ok(dl::transmittance(&ink, concentration, path_length_mm))
}

#[pyfunction]
#[pyo3(signature = (signature, absorption_coeffs, path_length_mm=1.0))]
fn estimate_concentration(signature: Channels, absorption_coeffs: Channels, path_length_mm: f64) -> PyResult<f64> {
    let ink = InkSpec::new("ink", absorption_coeffs).py()?;
    spectral::estimate_concentration(&ColourSignature { normalized: signature }, &ink, path_length_mm).py()
}

#[pyfunction]
fn fwhm_duration(signal: Vec<f64>, sample_rate_hz: f64) -> PyResult<f64> {
    sizing::fwhm_duration(&signal, sample_rate_hz).py()
}

/// Nearest reference by Euclidean distance: `(label, distance, margin)`.
#[pyfunction]
fn classify(signature: Channels, library: Vec<(String, Channels)>) -> PyResult<(String, f64, f64)> {
    let lib = ReferenceLibrary::new(
        library.into_iter().map(|(l, v)| (l, ColourSignature { normalized: v })).collect(),
    )
    .py()?;
    let c = spectral::classify(&ColourSignature { normalized: signature }, &lib).py()?;
    Ok((c.label, c.distance, c.margin))
}

/// Names and absorption coefficients of the built-in inks.
#[pyfunction]
fn standard_inks() -> Vec<(String, Channels)> {
    dl::channel::standard_inks().into_iter().map(|i| (i.name, i.absorption_coeffs)).collect()
}

/// Notch windows `(start, end)` as sample indices.
#[pyfunction]
#[pyo3(signature = (rows, baseline, sample_rate_hz=20.0, depth_threshold=0.5))]
fn segment_droplets(
    rows: Vec<Channels>,
    baseline: Channels,
    sample_rate_hz: f64,
    depth_threshold: f64,
) -> PyResult<Vec<(usize, usize)>> {
    let samples = rows.into_iter().map(SpectralSample::new).collect::<dl::Result<Vec<_>>>().py()?;
    let trace = SpectralTrace::new(sample_rate_hz, samples, 0.0).py()?;
    Ok(spectral::segment_droplets(&trace, &baseline, depth_threshold)
        .py()?
        .into_iter()
        .map(|w| (w.start, w.end))
        .collect())
}

/// Decodes a serial frame stream into `(readings, error_count)`; each
/// reading is `("ir", timestamp_ms, volts)` or `("spectral", timestamp_ms, counts)`.
#[pyfunction]
fn decode_frames<'py>(py: Python<'py>, data: &[u8]) -> PyResult<(Vec<Bound<'py, PyAny>>, usize)> {
    let decoded = io::decode_frames(data);
    let readings = decoded
        .readings
        .into_iter()
        .map(|r| match r {
            io::SensorReading::Ir { timestamp_ms, volts } => ("ir", timestamp_ms, volts).into_pyobject(py).map(Bound::into_any),
            io::SensorReading::Spectral { timestamp_ms, counts } => {
                ("spectral", timestamp_ms, counts).into_pyobject(py).map(Bound::into_any)
            }
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((readings, decoded.errors))
}

fn report_dict<'py>(py: Python<'py>, r: &ExperimentReport) -> PyResult<Bound<'py, PyDict>> {
    let metrics = PyDict::new(py);
    for (k, v) in &r.metrics {
        match v {
            Metric::Number(x) => metrics.set_item(k, x)?,
            Metric::Flag(b) => metrics.set_item(k, b)?,
            Metric::Text(s) => metrics.set_item(k, s)?,
        }
    }
    let out = PyDict::new(py);
    out.set_item("experiment", &r.experiment)?;
    out.set_item("passed", r.passed())?;
    out.set_item("metrics", metrics)?;
    out.set_item("checks", r.checks.iter().map(|c| (c.name.clone(), c.passed, c.detail.clone())).collect::<Vec<_>>())?;
    out.set_item("report", r.to_text())?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (bits=None, config=None, params=None, trials=100))]
fn run_transmission<'py>(
    py: Python<'py>,
    bits: Option<&str>,
    config: Option<PyRef<'_, PyChannelConfig>>,
    params: Option<PyRef<'_, PyOokParams>>,
    trials: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let bits = harness::bits_or_reference(bits).py()?;
    let r = harness::run_transmission(&bits, &config_or_default(config)?, &params_or_default(params)?, trials, None)
        .py()?;
    report_dict(py, &r)
}

#[pyfunction]
#[pyo3(signature = (ink="blue", concentrations=vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.25], config=None))]
fn run_dilution<'py>(
    py: Python<'py>,
    ink: &str,
    concentrations: Vec<f64>,
    config: Option<PyRef<'_, PyChannelConfig>>,
) -> PyResult<Bound<'py, PyDict>> {
    let ink = harness::ink_by_name(ink).py()?;
    let r = harness::run_dilution(&ink, &concentrations, &config_or_default(config)?, None).py()?;
    report_dict(py, &r)
}

#[pyfunction]
#[pyo3(signature = (lengths_mm=vec![1.0, 2.0, 3.0, 4.0, 5.0], trials_per_length=20, config=None))]
fn run_sizing<'py>(
    py: Python<'py>,
    lengths_mm: Vec<f64>,
    trials_per_length: usize,
    config: Option<PyRef<'_, PyChannelConfig>>,
) -> PyResult<Bound<'py, PyDict>> {
    let r = harness::run_sizing(&lengths_mm, trials_per_length, &config_or_default(config)?, None).py()?;
    report_dict(py, &r)
}

#[pymodule]
#[pyo3(name = "dropletlink")]
fn dropletlink_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DropletLinkError", m.py().get_type::<DropletLinkError>())?;
    m.add("REFERENCE_BITS", harness::REFERENCE_BITS)?;
    m.add_class::<PyChannelConfig>()?;
    m.add_class::<PyOokParams>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(bit_error_rate, m)?)?;
    m.add_function(wrap_pyfunction!(transmittance, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_concentration, m)?)?;
    m.add_function(wrap_pyfunction!(fwhm_duration, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(standard_inks, m)?)?;
    m.add_function(wrap_pyfunction!(segment_droplets, m)?)?;
    m.add_function(wrap_pyfunction!(decode_frames, m)?)?;
    m.add_function(wrap_pyfunction!(run_transmission, m)?)?;
    m.add_function(wrap_pyfunction!(run_dilution, m)?)?;
    m.add_function(wrap_pyfunction!(run_sizing, m)?)?;
    Ok(())
}
