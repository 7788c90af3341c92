//! Domain types shared by the simulator and the receiver chain.
//!
//! Everything here is plain value data. Constructors check the invariants
//! the rest of the crate relies on, so a value that exists is valid.

use crate::error::{Error, Result};

/// Number of colour sensor channels.
pub const N_CHANNELS: usize = 6;

/// Channel centre wavelengths in nm, in the fixed channel order.
pub const CHANNEL_CENTERS_NM: [f64; N_CHANNELS] = [450.0, 500.0, 550.0, 570.0, 600.0, 650.0];

/// Column names used by the spectral CSV format, same order as the centres.
pub const CHANNEL_NAMES: [&str; N_CHANNELS] = ["violet", "blue", "green", "yellow", "orange", "red"];

/// Full width at half maximum of each colour channel (metadata only).
pub const CHANNEL_BANDWIDTH_NM: f64 = 40.0;

/// Highest colour sensor rate supported without an explicit override.
pub const MAX_SPECTRAL_RATE_HZ: f64 = 20.0;

/// Output range of the infrared front end.
pub const IR_FULL_SCALE_V: f64 = 5.0;

pub type Channels = [f64; N_CHANNELS];

fn check_rate(rate_hz: f64) -> Result<()> {
    if rate_hz.is_finite() && rate_hz > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("sample rate must be positive, got {rate_hz}")))
    }
}

/// Uniformly sampled infrared photodiode voltage.
#[derive(Debug, Clone, PartialEq)]
pub struct IrTrace {
    sample_rate_hz: f64,
    samples: Vec<f64>,
    t0_s: f64,
}

impl IrTrace {
    /// Builds a trace as delivered by the sensor: every sample in `[0, 5]` V.
    pub fn new(sample_rate_hz: f64, samples: Vec<f64>, t0_s: f64) -> Result<Self> {
        check_rate(sample_rate_hz)?;
        if let Some((i, v)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=IR_FULL_SCALE_V).contains(*v))
        {
            return Err(Error::InvalidParameter(format!(
                "IR sample {i} = {v} V outside 0..5 V"
            )));
        }
        Ok(Self { sample_rate_hz, samples, t0_s })
    }

    /// Baseline-shifted copy. The result may dip below 0 V.
    pub fn shifted(&self, offset_v: f64) -> Self {
        Self {
            sample_rate_hz: self.sample_rate_hz,
            samples: self.samples.iter().map(|v| v - offset_v).collect(),
            t0_s: self.t0_s,
        }
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn t0_s(&self) -> f64 {
        self.t0_s
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn time_at(&self, index: usize) -> f64 {
        self.t0_s + index as f64 / self.sample_rate_hz
    }

    /// Time just past the last sample.
    pub fn end_time(&self) -> f64 {
        self.time_at(self.samples.len())
    }
}

/// One reading of the six colour channels, raw sensor counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSample {
    pub channels: Channels,
}

impl SpectralSample {
    pub fn new(channels: Channels) -> Result<Self> {
        if channels.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "spectral counts must be finite and non-negative: {channels:?}"
            )));
        }
        Ok(Self { channels })
    }

    pub fn mean(&self) -> f64 {
        self.channels.iter().sum::<f64>() / N_CHANNELS as f64
    }
}

/// Uniformly sampled colour sensor readings.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTrace {
    sample_rate_hz: f64,
    samples: Vec<SpectralSample>,
    t0_s: f64,
}

impl SpectralTrace {
    /// Rejects rates above the sensor's 20 S/s limit.
    pub fn new(sample_rate_hz: f64, samples: Vec<SpectralSample>, t0_s: f64) -> Result<Self> {
        if sample_rate_hz > MAX_SPECTRAL_RATE_HZ {
            return Err(Error::InvalidParameter(format!(
                "spectral rate {sample_rate_hz} S/s above the {MAX_SPECTRAL_RATE_HZ} S/s sensor limit"
            )));
        }
        Self::with_rate_override(sample_rate_hz, samples, t0_s)
    }

    /// Same as [`SpectralTrace::new`] without the sensor rate limit.
    pub fn with_rate_override(
        sample_rate_hz: f64,
        samples: Vec<SpectralSample>,
        t0_s: f64,
    ) -> Result<Self> {
        check_rate(sample_rate_hz)?;
        Ok(Self { sample_rate_hz, samples, t0_s })
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn samples(&self) -> &[SpectralSample] {
        &self.samples
    }

    pub fn t0_s(&self) -> f64 {
        self.t0_s
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn time_at(&self, index: usize) -> f64 {
        self.t0_s + index as f64 / self.sample_rate_hz
    }

    /// Sample index range `[start, end)` covering the time span `[from_s, to_s)`.
    pub fn index_range(&self, from_s: f64, to_s: f64) -> std::ops::Range<usize> {
        index_range(self.t0_s, self.sample_rate_hz, self.samples.len(), from_s, to_s)
    }
}

pub(crate) fn index_range(
    t0_s: f64,
    rate_hz: f64,
    len: usize,
    from_s: f64,
    to_s: f64,
) -> std::ops::Range<usize> {
    let clamp = |t: f64| ((t - t0_s) * rate_hz).ceil().clamp(0.0, len as f64) as usize;
    let start = clamp(from_s);
    let end = clamp(to_s).max(start);
    start..end
}

/// Optical properties of a droplet's dye.
#[derive(Debug, Clone, PartialEq)]
pub struct InkSpec {
    pub name: String,
    /// Per-channel absorption in 1/(concentration * mm).
    pub absorption_coeffs: Channels,
    /// Whether the droplet blocks the infrared path (aqueous droplets do).
    pub ir_opaque: bool,
}

impl InkSpec {
    pub fn new(name: impl Into<String>, absorption_coeffs: Channels) -> Result<Self> {
        if absorption_coeffs.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "absorption coefficients must be non-negative: {absorption_coeffs:?}"
            )));
        }
        Ok(Self { name: name.into(), absorption_coeffs, ir_opaque: true })
    }

    /// Clear aqueous droplet.
    pub fn water() -> Self {
        Self { name: "water".into(), absorption_coeffs: [0.0; N_CHANNELS], ir_opaque: true }
    }
}

/// A single droplet injection at the transmitter.
#[derive(Debug, Clone, PartialEq)]
pub struct DropletEvent {
    pub inject_time_s: f64,
    pub length_mm: f64,
    pub ink: InkSpec,
    pub concentration: f64,
}

impl DropletEvent {
    pub fn new(inject_time_s: f64, length_mm: f64, ink: InkSpec, concentration: f64) -> Result<Self> {
        if !(length_mm.is_finite() && length_mm > 0.0) {
            return Err(Error::InvalidParameter(format!("droplet length must be > 0, got {length_mm}")));
        }
        if !(0.0..=1.0).contains(&concentration) {
            return Err(Error::InvalidParameter(format!(
                "concentration must be in [0, 1], got {concentration}"
            )));
        }
        if !inject_time_s.is_finite() {
            return Err(Error::InvalidParameter("injection time must be finite".into()));
        }
        Ok(Self { inject_time_s, length_mm, ink, concentration })
    }
}

/// Transmitter-side droplet injections, strictly ordered in time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DropletSchedule {
    events: Vec<DropletEvent>,
}

impl DropletSchedule {
    pub fn new(events: Vec<DropletEvent>) -> Result<Self> {
        if let Some(w) = events.windows(2).find(|w| w[1].inject_time_s <= w[0].inject_time_s) {
            return Err(Error::InvalidParameter(format!(
                "injection times must strictly increase ({} then {})",
                w[0].inject_time_s, w[1].inject_time_s
            )));
        }
        Ok(Self { events })
    }

    pub fn events(&self) -> &[DropletEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Which sensor a droplet passes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorOrder {
    IrFirst,
    SpectralFirst,
}

/// Physical and sensor parameters of the channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    /// Nominal droplet speed.
    pub v_chan_mm_s: f64,
    /// Per-droplet speed factor is drawn from `[1 - j, 1 + j]`.
    pub speed_jitter_frac: f64,
    pub sensor_separation_mm: f64,
    /// Distance from the injection junction to the upstream sensor.
    pub inlet_distance_mm: f64,
    pub sensor_order: SensorOrder,
    pub ir_sample_rate_hz: f64,
    pub spectral_sample_rate_hz: f64,
    /// Allow spectral rates above 20 S/s.
    pub spectral_rate_override: bool,
    pub ir_amplitude_v: f64,
    /// Constant IR baseline before offset correction.
    pub ir_offset_v: f64,
    pub noise_sigma_v: f64,
    /// Relative (multiplicative) noise on spectral counts.
    pub spectral_noise_rel: f64,
    pub edge_time_s: f64,
    pub baseline_counts: Channels,
    pub path_length_mm: f64,
    /// Trace length; `None` runs until the last droplet has cleared both sensors.
    pub duration_s: Option<f64>,
    pub rng_seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            v_chan_mm_s: 10.0,
            speed_jitter_frac: 0.10,
            sensor_separation_mm: 6.35,
            inlet_distance_mm: 5.0,
            sensor_order: SensorOrder::IrFirst,
            ir_sample_rate_hz: 100.0,
            spectral_sample_rate_hz: 20.0,
            spectral_rate_override: false,
            ir_amplitude_v: 0.73,
            ir_offset_v: 0.0,
            noise_sigma_v: 0.02,
            spectral_noise_rel: 0.02,
            edge_time_s: 0.05,
            baseline_counts: [1200.0, 1500.0, 1800.0, 1700.0, 1600.0, 1400.0],
            path_length_mm: 1.0,
            duration_s: None,
            rng_seed: 0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        let positive = [
            ("v_chan_mm_s", self.v_chan_mm_s),
            ("sensor_separation_mm", self.sensor_separation_mm),
            ("ir_sample_rate_hz", self.ir_sample_rate_hz),
            ("spectral_sample_rate_hz", self.spectral_sample_rate_hz),
            ("path_length_mm", self.path_length_mm),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        let non_negative = [
            ("inlet_distance_mm", self.inlet_distance_mm),
            ("noise_sigma_v", self.noise_sigma_v),
            ("spectral_noise_rel", self.spectral_noise_rel),
            ("edge_time_s", self.edge_time_s),
            ("ir_amplitude_v", self.ir_amplitude_v),
            ("ir_offset_v", self.ir_offset_v),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.speed_jitter_frac) {
            return bad(format!("speed_jitter_frac must be in [0, 1), got {}", self.speed_jitter_frac));
        }
        if self.spectral_sample_rate_hz > MAX_SPECTRAL_RATE_HZ && !self.spectral_rate_override {
            return bad(format!(
                "spectral_sample_rate_hz {} exceeds {MAX_SPECTRAL_RATE_HZ} S/s without spectral_rate_override",
                self.spectral_sample_rate_hz
            ));
        }
        if self.baseline_counts.iter().any(|c| !c.is_finite() || *c <= 0.0) {
            return bad(format!("baseline_counts must be positive: {:?}", self.baseline_counts));
        }
        if let Some(d) = self.duration_s {
            if !(d.is_finite() && d > 0.0) {
                return bad(format!("duration_s must be > 0, got {d}"));
            }
        }
        Ok(())
    }

    /// Nominal cross-sensor delay for the configured speed.
    pub fn nominal_delay_s(&self) -> f64 {
        self.sensor_separation_mm / self.v_chan_mm_s
    }
}
