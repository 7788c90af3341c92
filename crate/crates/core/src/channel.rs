//! Forward model of the droplet channel.
//!
//! A [`DropletSchedule`] is turned into the two traces the device would
//! record: the infrared photodiode voltage and the six-channel colour
//! sensor counts. Each droplet travels at its own jittered speed, so the
//! cross-sensor delay and pulse width both carry that speed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::types::{
    Channels, ChannelConfig, DropletSchedule, InkSpec, IrTrace, SensorOrder, SpectralSample,
    SpectralTrace, IR_FULL_SCALE_V, N_CHANNELS,
};

const JITTER_STREAM: u64 = 0;
const IR_NOISE_STREAM: u64 = 1;
const SPECTRAL_NOISE_STREAM: u64 = 2;

/// Quiet time appended after the last droplet when no duration is set.
const TAIL_S: f64 = 1.0;

/// Ground truth for one droplet's transit past both sensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedPassage {
    pub droplet_index: usize,
    /// Half-amplitude leading edge at the IR sensor.
    pub ir_arrival_s: f64,
    /// Half-depth leading edge at the colour sensor.
    pub spectral_arrival_s: f64,
    pub actual_speed_mm_s: f64,
    pub actual_length_mm: f64,
}

impl SimulatedPassage {
    /// Time between the half-amplitude crossings at either sensor.
    pub fn duration_s(&self) -> f64 {
        self.actual_length_mm / self.actual_speed_mm_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub ir: IrTrace,
    pub spectral: SpectralTrace,
    pub passages: Vec<SimulatedPassage>,
}

/// Beer-Lambert transmittance per channel: `exp(-a_i * c * path)`.
pub fn transmittance(ink: &InkSpec, concentration: f64, path_length_mm: f64) -> Channels {
    ink.absorption_coeffs
        .map(|a| (-a * concentration * path_length_mm).exp())
}

/// Synthetic dye set used by the experiments: violet, blue, green, yellow,
/// orange and red. Coefficients are per unit concentration and mm, chosen so
/// a 25 % dilution over a 1 mm path drops the most absorbed channel to
/// roughly 10 % transmittance.
pub fn standard_inks() -> Vec<InkSpec> {
    let ink = |name: &str, absorption_coeffs: Channels| InkSpec {
        name: name.to_string(),
        absorption_coeffs,
        ir_opaque: true,
    };
    vec![
        ink("violet", [0.5, 3.0, 9.0, 8.0, 4.0, 1.0]),
        ink("blue", [0.5, 1.0, 3.0, 5.0, 8.0, 10.0]),
        ink("green", [6.0, 2.0, 0.5, 2.0, 6.0, 9.0]),
        ink("yellow", [10.0, 7.0, 2.0, 0.5, 0.2, 0.1]),
        ink("orange", [10.0, 9.0, 6.0, 2.0, 0.5, 0.2]),
        ink("red", [8.0, 9.0, 9.0, 6.0, 1.0, 0.3]),
    ]
}

/// Smoothed rectangle with unit height.
///
/// The half-height crossings sit exactly at `lead` and `lead + width`; each
/// edge is a raised cosine of duration `edge` centred on its crossing. Edges
/// longer than the width are shortened to the width.
pub fn pulse_envelope(t: f64, lead: f64, width: f64, edge: f64) -> f64 {
    let edge = edge.min(width);
    let trail = lead + width;
    if edge <= 0.0 {
        return if t >= lead && t < trail { 1.0 } else { 0.0 };
    }
    let half = edge / 2.0;
    let ramp = |x: f64| 0.5 * (1.0 - (std::f64::consts::PI * x / edge).cos());
    if t <= lead - half || t >= trail + half {
        0.0
    } else if t < lead + half {
        ramp(t - (lead - half))
    } else if t <= trail - half {
        1.0
    } else {
        1.0 - ramp(t - (trail - half))
    }
}

struct Transit {
    ir_lead: f64,
    spectral_lead: f64,
    width: f64,
    transmittance: Channels,
    ir_opaque: bool,
}

fn check_overlaps(leads: impl Iterator<Item = (f64, f64)>, edge: f64, sensor: &'static str) -> Result<()> {
    let mut prev: Option<(usize, f64)> = None;
    for (k, (lead, width)) in leads.enumerate() {
        let half = edge.min(width) / 2.0;
        let start = lead - half;
        if let Some((j, end)) = prev {
            if start < end {
                return Err(Error::Overlap { first: j, second: k, sensor });
            }
        }
        prev = Some((k, lead + width + half));
    }
    Ok(())
}

/// Renders the schedule into IR and colour traces.
///
/// Deterministic in `(schedule, cfg)`; the seed lives in `cfg.rng_seed`.
/// Speed jitter, IR noise and spectral noise draw from separate streams, so
/// turning noise off leaves the realized speeds unchanged.
pub fn simulate(schedule: &DropletSchedule, cfg: &ChannelConfig) -> Result<Simulation> {
    cfg.validate()?;
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    jitter_rng.set_stream(JITTER_STREAM);

    let delay_sign = match cfg.sensor_order {
        SensorOrder::IrFirst => 1.0,
        SensorOrder::SpectralFirst => -1.0,
    };

    let mut transits = Vec::with_capacity(schedule.len());
    let mut passages = Vec::with_capacity(schedule.len());
    for (k, ev) in schedule.events().iter().enumerate() {
        let factor = if cfg.speed_jitter_frac > 0.0 {
            jitter_rng.random_range(1.0 - cfg.speed_jitter_frac..=1.0 + cfg.speed_jitter_frac)
        } else {
            1.0
        };
        let speed = cfg.v_chan_mm_s * factor;
        let upstream = ev.inject_time_s + cfg.inlet_distance_mm / speed;
        let downstream = upstream + cfg.sensor_separation_mm / speed;
        let (ir_lead, spectral_lead) = if delay_sign > 0.0 {
            (upstream, downstream)
        } else {
            (downstream, upstream)
        };
        let width = ev.length_mm / speed;
        transits.push(Transit {
            ir_lead,
            spectral_lead,
            width,
            transmittance: transmittance(&ev.ink, ev.concentration, cfg.path_length_mm),
            ir_opaque: ev.ink.ir_opaque,
        });
        passages.push(SimulatedPassage {
            droplet_index: k,
            ir_arrival_s: ir_lead,
            spectral_arrival_s: spectral_lead,
            actual_speed_mm_s: speed,
            actual_length_mm: ev.length_mm,
        });
    }

    check_overlaps(transits.iter().map(|t| (t.ir_lead, t.width)), cfg.edge_time_s, "IR")?;
    check_overlaps(
        transits.iter().map(|t| (t.spectral_lead, t.width)),
        cfg.edge_time_s,
        "colour",
    )?;

    let duration = cfg.duration_s.unwrap_or_else(|| {
        transits
            .iter()
            .map(|t| t.ir_lead.max(t.spectral_lead) + t.width + cfg.edge_time_s)
            .fold(0.0, f64::max)
            + TAIL_S
    });

    let ir = render_ir(&transits, cfg, duration)?;
    let spectral = render_spectral(&transits, cfg, duration)?;
    Ok(Simulation { ir, spectral, passages })
}

/// Sample indices possibly touched by a pulse.
fn support(lead: f64, width: f64, edge: f64, rate: f64, n: usize) -> std::ops::Range<usize> {
    let half = edge.min(width) / 2.0;
    let lo = ((lead - half) * rate).floor().max(0.0) as usize;
    let hi = (((lead + width + half) * rate).ceil() + 1.0).clamp(0.0, n as f64) as usize;
    lo.min(hi)..hi
}

fn render_ir(transits: &[Transit], cfg: &ChannelConfig, duration: f64) -> Result<IrTrace> {
    let rate = cfg.ir_sample_rate_hz;
    let n = (duration * rate).ceil().max(1.0) as usize;
    let mut samples = vec![cfg.ir_offset_v; n];
    for tr in transits.iter().filter(|t| t.ir_opaque) {
        for i in support(tr.ir_lead, tr.width, cfg.edge_time_s, rate, n) {
            let t = i as f64 / rate;
            samples[i] += cfg.ir_amplitude_v * pulse_envelope(t, tr.ir_lead, tr.width, cfg.edge_time_s);
        }
    }
    if cfg.noise_sigma_v > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(IR_NOISE_STREAM);
        let normal = Normal::new(0.0, cfg.noise_sigma_v)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for s in &mut samples {
            *s += normal.sample(&mut rng);
        }
    }
    for s in &mut samples {
        *s = s.clamp(0.0, IR_FULL_SCALE_V);
    }
    IrTrace::new(rate, samples, 0.0)
}

fn render_spectral(transits: &[Transit], cfg: &ChannelConfig, duration: f64) -> Result<SpectralTrace> {
    let rate = cfg.spectral_sample_rate_hz;
    let n = (duration * rate).ceil().max(1.0) as usize;
    let mut depth: Vec<Channels> = vec![[0.0; N_CHANNELS]; n];
    for tr in transits {
        let absorbed = tr.transmittance.map(|t| 1.0 - t);
        for i in support(tr.spectral_lead, tr.width, cfg.edge_time_s, rate, n) {
            let t = i as f64 / rate;
            let env = pulse_envelope(t, tr.spectral_lead, tr.width, cfg.edge_time_s);
            for c in 0..N_CHANNELS {
                depth[i][c] += env * absorbed[c];
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(SPECTRAL_NOISE_STREAM);
    let normal = if cfg.spectral_noise_rel > 0.0 {
        Some(
            Normal::new(0.0, cfg.spectral_noise_rel)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?,
        )
    } else {
        None
    };

    let samples = depth
        .into_iter()
        .map(|d| {
            let mut channels = [0.0; N_CHANNELS];
            for c in 0..N_CHANNELS {
                let mut v = cfg.baseline_counts[c] * (1.0 - d[c]);
                if let Some(normal) = &normal {
                    v *= 1.0 + normal.sample(&mut rng);
                }
                channels[c] = v.max(0.0);
            }
            SpectralSample { channels }
        })
        .collect();

    if cfg.spectral_rate_override {
        SpectralTrace::with_rate_override(rate, samples, 0.0)
    } else {
        SpectralTrace::new(rate, samples, 0.0)
    }
}
