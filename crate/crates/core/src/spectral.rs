//! Colour pipeline for the six-channel sensor.
//!
//! Readings are divided by the no-droplet baseline, droplets are cut out of
//! the trace as notches, and each notch is reduced to a signature: the
//! per-channel minimum of the normalized intensity. Signatures are matched
//! against a calibrated library or inverted for dye concentration.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::ook::median;
use crate::types::{Channels, InkSpec, SpectralSample, SpectralTrace, N_CHANNELS};

/// Margin below which a colour call should be treated as ambiguous.
pub const DEFAULT_MARGIN_CUTOFF: f64 = 0.05;

/// Default notch depth used by [`segment_droplets`].
pub const DEFAULT_DEPTH_THRESHOLD: f64 = 0.5;

/// Per-channel ratio of a reading to the baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColourSignature {
    pub normalized: Channels,
}

impl ColourSignature {
    /// Copy limited to `[0, 1]`, as used for classification.
    pub fn clamped(&self) -> Channels {
        self.normalized.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn distance(&self, other: &ColourSignature) -> f64 {
        let (a, b) = (self.clamped(), other.clamped());
        a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceLibrary {
    entries: Vec<(String, ColourSignature)>,
}

impl ReferenceLibrary {
    pub fn new(entries: Vec<(String, ColourSignature)>) -> Result<Self> {
        for (i, (label, _)) in entries.iter().enumerate() {
            if label.is_empty() || label.chars().any(char::is_whitespace) {
                return Err(Error::InvalidParameter(format!("bad reference label {label:?}")));
            }
            if entries[..i].iter().any(|(l, _)| l == label) {
                return Err(Error::InvalidParameter(format!("duplicate reference label {label:?}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(String, ColourSignature)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColourCall {
    pub label: String,
    pub distance: f64,
    /// Distance gap to the runner-up; infinite for a one-entry library.
    pub margin: f64,
}

impl ColourCall {
    pub fn is_confident(&self, cutoff: f64) -> bool {
        self.margin >= cutoff
    }
}

fn check_baseline(baseline: &Channels) -> Result<()> {
    match baseline.iter().position(|b| !(*b > 0.0)) {
        Some(channel) => Err(Error::ZeroBaseline { channel }),
        None => Ok(()),
    }
}

/// Per-channel median over `[from_s, to_s)`. The window must be droplet-free.
pub fn baseline_profile(trace: &SpectralTrace, from_s: f64, to_s: f64) -> Result<Channels> {
    let window = &trace.samples()[trace.index_range(from_s, to_s)];
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let mut out = [0.0; N_CHANNELS];
    let mut column = Vec::with_capacity(window.len());
    for (c, slot) in out.iter_mut().enumerate() {
        column.clear();
        column.extend(window.iter().map(|s| s.channels[c]));
        *slot = median(&mut column);
    }
    check_baseline(&out)?;
    Ok(out)
}

pub fn normalize(sample: &SpectralSample, baseline: &Channels) -> Result<ColourSignature> {
    check_baseline(baseline)?;
    let mut normalized = [0.0; N_CHANNELS];
    for c in 0..N_CHANNELS {
        normalized[c] = sample.channels[c] / baseline[c];
    }
    Ok(ColourSignature { normalized })
}

/// Depth of the most attenuated channel, `1 - min_i(sample_i / baseline_i)`.
fn peak_channel_depth(sample: &SpectralSample, baseline: &Channels) -> f64 {
    let min = (0..N_CHANNELS)
        .map(|c| sample.channels[c] / baseline[c])
        .fold(f64::INFINITY, f64::min);
    1.0 - min
}

/// Channel-mean attenuation `1 - mean_i(sample_i / baseline_i)` for every sample.
pub fn mean_depth_series(trace: &SpectralTrace, baseline: &Channels) -> Result<Vec<f64>> {
    check_baseline(baseline)?;
    Ok(trace
        .samples()
        .iter()
        .map(|s| {
            let mean = (0..N_CHANNELS).map(|c| s.channels[c] / baseline[c]).sum::<f64>()
                / N_CHANNELS as f64;
            1.0 - mean
        })
        .collect())
}

/// Maximal runs of samples whose deepest channel is attenuated by at least
/// `depth_threshold`. Windows are disjoint and in time order.
pub fn segment_droplets(
    trace: &SpectralTrace,
    baseline: &Channels,
    depth_threshold: f64,
) -> Result<Vec<Range<usize>>> {
    check_baseline(baseline)?;
    let mut windows = Vec::new();
    let mut open: Option<usize> = None;
    for (i, s) in trace.samples().iter().enumerate() {
        let inside = peak_channel_depth(s, baseline) >= depth_threshold;
        match (inside, open) {
            (true, None) => open = Some(i),
            (false, Some(start)) => {
                windows.push(start..i);
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        windows.push(start..trace.len());
    }
    Ok(windows)
}

/// Per-channel minimum of the normalized intensity over the window.
pub fn droplet_signature(
    trace: &SpectralTrace,
    window: Range<usize>,
    baseline: &Channels,
) -> Result<ColourSignature> {
    let samples = trace.samples().get(window).ok_or(Error::EmptyWindow)?;
    if samples.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let mut deepest = [f64::INFINITY; N_CHANNELS];
    for s in samples {
        let sig = normalize(s, baseline)?;
        for c in 0..N_CHANNELS {
            deepest[c] = deepest[c].min(sig.normalized[c]);
        }
    }
    Ok(ColourSignature { normalized: deepest })
}

/// Nearest reference by Euclidean distance on clamped signatures.
/// Ties go to the earlier library entry.
pub fn classify(sig: &ColourSignature, lib: &ReferenceLibrary) -> Result<ColourCall> {
    let mut best: Option<(usize, f64)> = None;
    let mut second = f64::INFINITY;
    for (i, (_, reference)) in lib.entries().iter().enumerate() {
        let d = sig.distance(reference);
        match best {
            Some((_, bd)) if d >= bd => second = second.min(d),
            Some((_, bd)) => {
                second = bd;
                best = Some((i, d));
            }
            None => best = Some((i, d)),
        }
    }
    let (i, distance) = best.ok_or(Error::EmptyLibrary)?;
    Ok(ColourCall { label: lib.entries()[i].0.clone(), distance, margin: second - distance })
}

/// Segments the trace and classifies every notch.
pub fn classify_droplets(
    trace: &SpectralTrace,
    baseline: &Channels,
    lib: &ReferenceLibrary,
    depth_threshold: f64,
) -> Result<Vec<(Range<usize>, ColourSignature, ColourCall)>> {
    segment_droplets(trace, baseline, depth_threshold)?
        .into_iter()
        .map(|w| {
            let sig = droplet_signature(trace, w.clone(), baseline)?;
            let call = classify(&sig, lib)?;
            Ok((w, sig, call))
        })
        .collect()
}

/// Least-squares concentration from a signature under the Beer-Lambert law.
///
/// Fits `-ln(sig_i) = a_i * c * path` over channels with `a_i > 0`. Readings
/// above 1 (noise) count as 1; readings at or below 0 are saturated and
/// skipped. The result is clamped to `[0, 1]`.
pub fn estimate_concentration(sig: &ColourSignature, ink: &InkSpec, path_length_mm: f64) -> Result<f64> {
    if !(path_length_mm > 0.0) {
        return Err(Error::InvalidParameter(format!("path length must be > 0, got {path_length_mm}")));
    }
    if ink.absorption_coeffs.iter().all(|a| *a <= 0.0) {
        return Err(Error::Unidentifiable("ink has no absorbing channel"));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (a, s) in ink.absorption_coeffs.iter().zip(&sig.normalized) {
        if *a <= 0.0 || !(*s > 0.0) {
            continue;
        }
        let absorbance = -s.min(1.0).ln();
        let k = a * path_length_mm;
        num += k * absorbance;
        den += k * k;
    }
    if den == 0.0 {
        return Err(Error::Unidentifiable("all absorbing channels saturated"));
    }
    Ok((num / den).clamp(0.0, 1.0))
}
