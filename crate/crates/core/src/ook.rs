//! On-off keying over droplets.
//!
//! A `1` bit is one injected droplet, a `0` bit is an empty slot. The
//! receiver works on the IR trace: remove the baseline offset, threshold at
//! a fixed voltage, anchor the first symbol interval at the first rising
//! edge, and re-base later intervals whenever a droplet shows up, so slow or
//! fast droplets do not walk the interval grid off the signal.

use crate::error::{Error, Result};
use crate::types::{DropletEvent, DropletSchedule, InkSpec, IrTrace};

/// Minimum number of samples the offset window must hold.
pub const MIN_BASELINE_SAMPLES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct OokParams {
    pub threshold_v: f64,
    /// A symbol is `1` when at least this fraction of its samples are above threshold.
    pub duty_fraction: f64,
    pub symbol_period_s: f64,
    /// Number of bits to emit; `None` decodes to the end of the trace.
    pub n_bits: Option<usize>,
    /// Leading span used to estimate the baseline offset.
    pub baseline_window_s: f64,
    /// Subtract the median of the baseline window before thresholding.
    pub correct_offset: bool,
    /// Re-base symbol intervals on rising edges. Disabling this gives the
    /// frozen-grid decoder, kept as a diagnostic baseline.
    pub resync: bool,
    /// A rising edge up to this fraction of a period before an interval's
    /// nominal start still belongs to that interval (early droplets).
    pub early_guard_fraction: f64,
}

impl Default for OokParams {
    fn default() -> Self {
        Self {
            threshold_v: 0.2,
            duty_fraction: 0.30,
            symbol_period_s: 1.0,
            n_bits: None,
            baseline_window_s: 0.5,
            correct_offset: true,
            resync: true,
            early_guard_fraction: 0.25,
        }
    }
}

impl OokParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.duty_fraction > 0.0 && self.duty_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "duty_fraction must be in (0, 1), got {}",
                self.duty_fraction
            )));
        }
        if !(self.threshold_v > 0.0 && self.threshold_v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "threshold_v must be > 0, got {}",
                self.threshold_v
            )));
        }
        if !(self.symbol_period_s > 0.0 && self.symbol_period_s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "symbol_period_s must be > 0, got {}",
                self.symbol_period_s
            )));
        }
        if !(0.0..0.5).contains(&self.early_guard_fraction) {
            return Err(Error::InvalidParameter(format!(
                "early_guard_fraction must be in [0, 0.5), got {}",
                self.early_guard_fraction
            )));
        }
        if !(self.baseline_window_s > 0.0) {
            return Err(Error::InvalidParameter("baseline_window_s must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Rising,
    Falling,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub time_s: f64,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeReport {
    pub bits: Vec<bool>,
    pub edges: Vec<Edge>,
    /// `(start_s, end_s)` of every decoded symbol.
    pub symbol_intervals: Vec<(f64, f64)>,
    pub duty_per_symbol: Vec<f64>,
    pub offset_v: f64,
}

/// Droplet shape used for every `1` bit.
#[derive(Debug, Clone, PartialEq)]
pub struct DropletTemplate {
    pub length_mm: f64,
    pub ink: InkSpec,
    pub concentration: f64,
}

/// Parses a string of `0`/`1` characters. Spaces and underscores are ignored.
pub fn parse_bits(s: &str) -> Result<Vec<bool>> {
    s.chars()
        .filter(|c| !c.is_whitespace() && *c != '_')
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::InvalidParameter(format!("invalid bit character {other:?}"))),
        })
        .collect()
}

pub fn format_bits(bits: &[bool]) -> String {
    bits.iter().map(|b| if *b { '1' } else { '0' }).collect()
}

/// One droplet at `k * symbol_period_s` for every set bit `k`.
pub fn encode(bits: &[bool], symbol_period_s: f64, template: &DropletTemplate) -> Result<DropletSchedule> {
    if bits.is_empty() {
        return Err(Error::InvalidParameter("bit sequence is empty".into()));
    }
    if !(symbol_period_s > 0.0) {
        return Err(Error::InvalidParameter("symbol period must be > 0".into()));
    }
    let events = bits
        .iter()
        .enumerate()
        .filter(|(_, b)| **b)
        .map(|(k, _)| {
            DropletEvent::new(
                k as f64 * symbol_period_s,
                template.length_mm,
                template.ink.clone(),
                template.concentration,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    DropletSchedule::new(events)
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    values.sort_unstable_by(f64::total_cmp);
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Removes the median of the leading `baseline_window_s` from the trace.
pub fn offset_correct(trace: &IrTrace, baseline_window_s: f64) -> Result<(IrTrace, f64)> {
    let n = ((baseline_window_s * trace.sample_rate_hz()).round() as usize).min(trace.len());
    if n < MIN_BASELINE_SAMPLES {
        return Err(Error::WindowTooShort { got: n, need: MIN_BASELINE_SAMPLES });
    }
    let mut window = trace.samples()[..n].to_vec();
    let offset = median(&mut window);
    Ok((trace.shifted(offset), offset))
}

/// Threshold crossings with linearly interpolated times.
///
/// The result alternates strictly and starts with a rising edge; a trace
/// that begins above threshold has its first falling edge dropped.
pub fn detect_edges(trace: &IrTrace, threshold_v: f64) -> Vec<Edge> {
    let s = trace.samples();
    let dt = trace.dt();
    let mut edges = Vec::new();
    let mut expect = EdgeKind::Rising;
    for i in 1..s.len() {
        let (a, b) = (s[i - 1], s[i]);
        let kind = if a < threshold_v && b >= threshold_v {
            EdgeKind::Rising
        } else if a >= threshold_v && b < threshold_v {
            EdgeKind::Falling
        } else {
            continue;
        };
        if kind != expect {
            continue;
        }
        let frac = (threshold_v - a) / (b - a);
        edges.push(Edge { time_s: trace.time_at(i - 1) + frac * dt, kind });
        expect = match kind {
            EdgeKind::Rising => EdgeKind::Falling,
            EdgeKind::Falling => EdgeKind::Rising,
        };
    }
    edges
}

/// Fraction of samples at or above threshold within `[start, end)`.
///
/// Interval bounds snap to the nearest sample; samples past the trace end
/// count as below threshold.
pub fn duty_in_interval(trace: &IrTrace, threshold_v: f64, start_s: f64, end_s: f64) -> f64 {
    let rate = trace.sample_rate_hz();
    let i0 = ((start_s - trace.t0_s()) * rate).round() as i64;
    let i1 = ((end_s - trace.t0_s()) * rate).round() as i64;
    if i1 <= i0 {
        return 0.0;
    }
    let s = trace.samples();
    let lo = i0.max(0) as usize;
    let hi = (i1.max(0) as usize).min(s.len());
    let above = s.get(lo..hi).map_or(0, |w| w.iter().filter(|v| **v >= threshold_v).count());
    above as f64 / (i1 - i0) as f64
}

/// Recovers the bit sequence from an IR trace.
///
/// Interval 0 starts at the first rising edge. Each later interval has a
/// nominal start one period after the previous one; if the next unused
/// rising edge lies within `[nominal - guard, nominal + period - guard)` the
/// interval starts at that edge instead. A symbol is `1` when its duty
/// reaches `duty_fraction`.
pub fn decode(trace: &IrTrace, params: &OokParams) -> Result<DecodeReport> {
    params.validate()?;
    let (trace, offset_v) = if params.correct_offset {
        offset_correct(trace, params.baseline_window_s)?
    } else {
        (trace.clone(), 0.0)
    };
    let edges = detect_edges(&trace, params.threshold_v);
    let rising: Vec<f64> = edges
        .iter()
        .filter(|e| e.kind == EdgeKind::Rising)
        .map(|e| e.time_s)
        .collect();

    let period = params.symbol_period_s;
    let guard = params.early_guard_fraction * period;
    let mut nominal = match (rising.first(), params.n_bits) {
        (Some(t), _) => *t,
        (None, Some(_)) => trace.t0_s(),
        (None, None) => return Err(Error::NoSignal),
    };
    // tolerance for floating-point drift when testing interval completeness
    let end_time = trace.end_time() + 1e-9;

    let mut bits = Vec::new();
    let mut intervals = Vec::new();
    let mut duties = Vec::new();
    let mut next_rising = 0;
    loop {
        match params.n_bits {
            Some(n) if bits.len() >= n => break,
            None if nominal + period > end_time => break,
            _ => {}
        }
        let owned = rising
            .get(next_rising)
            .copied()
            .filter(|t| *t >= nominal - guard && *t < nominal + period - guard);
        let start = match owned {
            Some(t) if params.resync => t,
            _ => nominal,
        };
        let end = start + period;
        if params.n_bits.is_none() && end > end_time {
            break;
        }
        let duty = duty_in_interval(&trace, params.threshold_v, start, end);
        bits.push(duty >= params.duty_fraction);
        duties.push(duty);
        intervals.push((start, end));

        // edges inside this interval are spent, only the first one re-bases
        while next_rising < rising.len() && rising[next_rising] < end - guard {
            next_rising += 1;
        }
        nominal = end;
    }

    if params.n_bits.is_none() {
        let keep = bits.iter().rposition(|b| *b).map_or(0, |i| i + 1);
        bits.truncate(keep);
        duties.truncate(keep);
        intervals.truncate(keep);
    }

    Ok(DecodeReport { bits, edges, symbol_intervals: intervals, duty_per_symbol: duties, offset_v })
}

/// Hamming distance over length.
pub fn bit_error_rate(sent: &[bool], received: &[bool]) -> Result<f64> {
    if sent.len() != received.len() {
        return Err(Error::LengthMismatch { sent: sent.len(), received: received.len() });
    }
    if sent.is_empty() {
        return Ok(0.0);
    }
    let errors = sent.iter().zip(received).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / sent.len() as f64)
}
