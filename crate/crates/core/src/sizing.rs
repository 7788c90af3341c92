//! Droplet speed and length from the two sensors.
//!
//! The same droplet crosses the IR sensor and, a fixed distance further on,
//! the colour sensor. The delay between the two leading edges gives the
//! speed; the half-maximum width of the colour notch gives the transit
//! time; their product is the droplet length.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::ook::offset_correct;
use crate::spectral::{baseline_profile, mean_depth_series, segment_droplets, DEFAULT_DEPTH_THRESHOLD};
use crate::types::{Channels, ChannelConfig, IrTrace, SensorOrder, SpectralTrace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeEstimate {
    pub droplet_index: usize,
    pub length_mm: f64,
    pub speed_mm_s: f64,
    pub t_drop_s: f64,
    pub delta_t_s: f64,
}

/// No-droplet reference levels of both sensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baselines {
    pub ir_offset_v: f64,
    pub spectral: Channels,
}

impl Baselines {
    /// Estimates both baselines from the leading `window_s` of each trace.
    pub fn estimate(ir: &IrTrace, spectral: &SpectralTrace, window_s: f64) -> Result<Self> {
        let (_, ir_offset_v) = offset_correct(ir, window_s)?;
        let t0 = spectral.t0_s();
        let spectral = baseline_profile(spectral, t0, t0 + window_s)?;
        Ok(Self { ir_offset_v, spectral })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizingParams {
    /// IR detection threshold after offset removal.
    pub ir_threshold_v: f64,
    /// Notch detection depth on the colour sensor.
    pub depth_threshold: f64,
    pub sensor_order: SensorOrder,
}

impl Default for SizingParams {
    fn default() -> Self {
        Self {
            ir_threshold_v: 0.2,
            depth_threshold: DEFAULT_DEPTH_THRESHOLD,
            sensor_order: SensorOrder::IrFirst,
        }
    }
}

/// Maximal runs with `signal[i] >= level`.
fn runs_above(signal: &[f64], level: f64) -> Vec<Range<usize>> {
    let mut runs = Vec::new();
    let mut open = None;
    for (i, v) in signal.iter().enumerate() {
        match (*v >= level, open) {
            (true, None) => open = Some(i),
            (false, Some(s)) => {
                runs.push(s..i);
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        runs.push(s..signal.len());
    }
    runs
}

/// Fractional sample index where the signal rises through `level` before `run.start`.
fn lead_crossing(signal: &[f64], run_start: usize, level: f64) -> f64 {
    if run_start == 0 {
        return 0.0;
    }
    let (a, b) = (signal[run_start - 1], signal[run_start]);
    (run_start - 1) as f64 + (level - a) / (b - a)
}

/// Fractional sample index where the signal falls through `level` after `run.end - 1`.
fn trail_crossing(signal: &[f64], run_end: usize, level: f64) -> f64 {
    if run_end >= signal.len() {
        return (signal.len() - 1) as f64;
    }
    let (a, b) = (signal[run_end - 1], signal[run_end]);
    (run_end - 1) as f64 + (a - level) / (a - b)
}

fn argmax(signal: &[f64]) -> Option<usize> {
    signal
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
}

/// Full width at half maximum of a depth-positive pulse, in seconds.
///
/// Crossings are linearly interpolated between the samples that bracket
/// them. The signal must hold a single run above half maximum.
pub fn fwhm_duration(signal: &[f64], sample_rate_hz: f64) -> Result<f64> {
    let peak = argmax(signal).ok_or(Error::NoPulse)?;
    let max = signal[peak];
    if !(max > 0.0) {
        return Err(Error::NoPulse);
    }
    let runs = runs_above(signal, max / 2.0);
    if runs.len() != 1 {
        return Err(Error::Ambiguous { runs: runs.len() });
    }
    let run = &runs[0];
    let lead = lead_crossing(signal, run.start, max / 2.0);
    let trail = trail_crossing(signal, run.end, max / 2.0);
    Ok((trail - lead) / sample_rate_hz)
}

/// One droplet as seen by the IR sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrPulse {
    /// Half-amplitude rising crossing.
    pub lead_s: f64,
    /// Half-amplitude falling crossing.
    pub trail_s: f64,
    pub peak_v: f64,
}

/// Every IR pulse that rises above `threshold_v` once `offset_v` is removed.
pub fn ir_pulses(ir: &IrTrace, offset_v: f64, threshold_v: f64) -> Vec<IrPulse> {
    let signal: Vec<f64> = ir.samples().iter().map(|v| v - offset_v).collect();
    let to_time = |idx: f64| ir.t0_s() + idx / ir.sample_rate_hz();
    runs_above(&signal, threshold_v)
        .into_iter()
        .map(|run| {
            let peak = run.start + argmax(&signal[run.clone()]).unwrap_or(0);
            let half = signal[peak] / 2.0;
            let mut start = peak;
            while start > 0 && signal[start - 1] >= half {
                start -= 1;
            }
            let mut end = peak + 1;
            while end < signal.len() && signal[end] >= half {
                end += 1;
            }
            IrPulse {
                lead_s: to_time(lead_crossing(&signal, start, half)),
                trail_s: to_time(trail_crossing(&signal, end, half)),
                peak_v: signal[peak],
            }
        })
        .collect()
}

struct Notch {
    lead_s: f64,
    fwhm_s: f64,
}

/// Colour-sensor notches with half-depth leading edge and FWHM.
fn spectral_notches(spectral: &SpectralTrace, baseline: &Channels, depth_threshold: f64) -> Result<Vec<Notch>> {
    let depth = mean_depth_series(spectral, baseline)?;
    let windows = segment_droplets(spectral, baseline, depth_threshold)?;
    let rate = spectral.sample_rate_hz();
    let mut notches = Vec::with_capacity(windows.len());
    for (k, w) in windows.iter().enumerate() {
        // widen to the midpoints between neighbouring notches
        let lo = if k == 0 { 0 } else { (windows[k - 1].end + w.start) / 2 };
        let hi = windows.get(k + 1).map_or(depth.len(), |next| (w.end + next.start).div_ceil(2));
        let region = &depth[lo..hi];
        let fwhm_s = fwhm_duration(region, rate)?;
        let peak = argmax(region).ok_or(Error::NoPulse)?;
        let half = region[peak] / 2.0;
        let mut start = peak;
        while start > 0 && region[start - 1] >= half {
            start -= 1;
        }
        let lead = lo as f64 + lead_crossing(region, start, half);
        notches.push(Notch { lead_s: spectral.t0_s() + lead / rate, fwhm_s });
    }
    Ok(notches)
}

fn matched(
    ir: &IrTrace,
    spectral: &SpectralTrace,
    baselines: &Baselines,
    params: &SizingParams,
) -> Result<(Vec<f64>, Vec<Notch>)> {
    let ir_leads: Vec<f64> = ir_pulses(ir, baselines.ir_offset_v, params.ir_threshold_v)
        .iter()
        .map(|p| p.lead_s)
        .collect();
    let notches = spectral_notches(spectral, &baselines.spectral, params.depth_threshold)?;
    if ir_leads.len() != notches.len() {
        return Err(Error::UnmatchedDroplet { ir: ir_leads.len(), spectral: notches.len() });
    }
    Ok((ir_leads, notches))
}

fn signed_delay(ir_lead: f64, spectral_lead: f64, order: SensorOrder) -> f64 {
    match order {
        SensorOrder::IrFirst => spectral_lead - ir_lead,
        SensorOrder::SpectralFirst => ir_lead - spectral_lead,
    }
}

/// Leading-edge delay of droplet `droplet_index` between the two sensors,
/// positive in the configured sensor order.
pub fn cross_sensor_delay(
    ir: &IrTrace,
    spectral: &SpectralTrace,
    droplet_index: usize,
    baselines: &Baselines,
    params: &SizingParams,
) -> Result<f64> {
    let (ir_leads, notches) = matched(ir, spectral, baselines, params)?;
    let (Some(ir_lead), Some(notch)) = (ir_leads.get(droplet_index), notches.get(droplet_index)) else {
        return Err(Error::UnmatchedDroplet { ir: ir_leads.len(), spectral: notches.len() });
    };
    let dt = signed_delay(*ir_lead, notch.lead_s, params.sensor_order);
    if dt <= 0.0 {
        return Err(Error::UnmatchedDroplet { ir: ir_leads.len(), spectral: notches.len() });
    }
    Ok(dt)
}

/// Speed and length of every droplet seen on both sensors.
pub fn estimate_size(
    ir: &IrTrace,
    spectral: &SpectralTrace,
    cfg: &ChannelConfig,
    baselines: &Baselines,
) -> Result<Vec<SizeEstimate>> {
    let params = SizingParams { sensor_order: cfg.sensor_order, ..Default::default() };
    estimate_size_with(ir, spectral, cfg.sensor_separation_mm, baselines, &params)
}

pub fn estimate_size_with(
    ir: &IrTrace,
    spectral: &SpectralTrace,
    sensor_separation_mm: f64,
    baselines: &Baselines,
    params: &SizingParams,
) -> Result<Vec<SizeEstimate>> {
    let (ir_leads, notches) = matched(ir, spectral, baselines, params)?;
    if notches.is_empty() {
        return Err(Error::NoPulse);
    }
    ir_leads
        .iter()
        .zip(&notches)
        .enumerate()
        .map(|(k, (ir_lead, notch))| {
            let delta_t_s = signed_delay(*ir_lead, notch.lead_s, params.sensor_order);
            if delta_t_s <= 0.0 {
                return Err(Error::UnmatchedDroplet { ir: ir_leads.len(), spectral: notches.len() });
            }
            let speed_mm_s = sensor_separation_mm / delta_t_s;
            Ok(SizeEstimate {
                droplet_index: k,
                length_mm: speed_mm_s * notch.fwhm_s,
                speed_mm_s,
                t_drop_s: notch.fwhm_s,
                delta_t_s,
            })
        })
        .collect()
}

/// Mean IR level of each pulse between its half-amplitude edges, trimmed
/// by `trim_s` on both sides to stay clear of the edges.
pub fn ir_plateau_means(ir: &IrTrace, offset_v: f64, threshold_v: f64, trim_s: f64) -> Vec<f64> {
    ir_pulses(ir, offset_v, threshold_v)
        .into_iter()
        .filter_map(|p| {
            let lo = ((p.lead_s + trim_s - ir.t0_s()) * ir.sample_rate_hz()).ceil().max(0.0) as usize;
            let hi = (((p.trail_s - trim_s - ir.t0_s()) * ir.sample_rate_hz()).floor() as usize + 1).min(ir.len());
            let plateau = ir.samples().get(lo..hi).filter(|w| !w.is_empty())?;
            Some(plateau.iter().map(|v| v - offset_v).sum::<f64>() / plateau.len() as f64)
        })
        .collect()
}
