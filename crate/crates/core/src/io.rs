//! File formats and the sensor wire protocol.
//!
//! * IR trace CSV: header `time,voltage`, one sample per row.
//! * Spectral trace CSV: header `time,violet,blue,green,yellow,orange,red`.
//! * Reference library: one `label v450 v500 v550 v570 v600 v650` line per ink.
//! * Sensor frames: `0xA5`, kind, `u32` LE timestamp in ms, payload, XOR
//!   checksum. Kind `0x01` carries one `u16` IR ADC reading (0..65535 maps to
//!   0..5 V), kind `0x02` six `u16` colour counts. This framing stands in for
//!   the board's USB serial stream, whose real layout is not documented.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::spectral::{ColourSignature, ReferenceLibrary};
use crate::types::{
    Channels, IrTrace, SpectralSample, SpectralTrace, CHANNEL_NAMES, IR_FULL_SCALE_V, N_CHANNELS,
};

pub const IR_HEADER: &str = "time,voltage";

/// Relative tolerance on sample spacing when reading CSV traces.
pub const UNIFORMITY_TOLERANCE: f64 = 0.01;

const DEFAULT_IR_RATE_HZ: f64 = 100.0;
const DEFAULT_SPECTRAL_RATE_HZ: f64 = 20.0;

pub fn spectral_header() -> String {
    format!("time,{}", CHANNEL_NAMES.join(","))
}

fn format_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Format { line, msg: msg.into() }
}

/// Rows of a numeric CSV with its 1-based line numbers.
fn read_rows(text: &str, header: &str, columns: usize) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let head = reader.headers().map_err(|e| format_err(1, e.to_string()))?.clone();
    if head.len() != columns {
        return Err(Error::ChannelCountMismatch { line: 1, expected: columns - 1, found: head.len().saturating_sub(1) });
    }
    let got: Vec<&str> = head.iter().collect();
    if got.join(",") != header {
        return Err(format_err(1, format!("expected header `{header}`, found `{}`", got.join(","))));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            format_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != columns {
            return Err(Error::ChannelCountMismatch {
                line,
                expected: columns - 1,
                found: record.len().saturating_sub(1),
            });
        }
        let values = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| format_err(line, format!("not a number: {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((line, values));
    }
    if rows.is_empty() {
        return Err(format_err(1, "no samples"));
    }
    Ok(rows)
}

fn round_sig(v: f64, digits: i32) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    let scale = 10f64.powi(digits - 1 - v.abs().log10().floor() as i32);
    (v * scale).round() / scale
}

/// Start time and sample rate of the time column.
fn time_base(rows: &[(usize, Vec<f64>)], default_rate: f64) -> Result<(f64, f64)> {
    let t0 = rows[0].1[0];
    for w in rows.windows(2) {
        if w[1].1[0] <= w[0].1[0] {
            return Err(format_err(w[1].0, "time column must strictly increase"));
        }
    }
    if rows.len() == 1 {
        return Ok((t0, default_rate));
    }
    let span = rows[rows.len() - 1].1[0] - t0;
    let dt = span / (rows.len() - 1) as f64;
    for w in rows.windows(2) {
        let step = w[1].1[0] - w[0].1[0];
        if ((step - dt) / dt).abs() > UNIFORMITY_TOLERANCE {
            return Err(Error::NonUniformSampling { line: w[1].0 });
        }
    }
    Ok((t0, round_sig(1.0 / dt, 9)))
}

pub fn read_ir_csv(text: &str) -> Result<IrTrace> {
    let rows = read_rows(text, IR_HEADER, 2)?;
    let (t0, rate) = time_base(&rows, DEFAULT_IR_RATE_HZ)?;
    if let Some((line, _)) = rows.iter().find(|(_, r)| !(0.0..=IR_FULL_SCALE_V).contains(&r[1])) {
        return Err(format_err(*line, "voltage outside 0..5 V"));
    }
    IrTrace::new(rate, rows.into_iter().map(|(_, r)| r[1]).collect(), t0)
}

pub fn write_ir_csv(trace: &IrTrace) -> String {
    let mut out = String::with_capacity(trace.len() * 16);
    out.push_str(IR_HEADER);
    out.push('\n');
    for (i, v) in trace.samples().iter().enumerate() {
        let _ = writeln!(out, "{},{}", trace.time_at(i), v);
    }
    out
}

pub fn read_spectral_csv(text: &str) -> Result<SpectralTrace> {
    let rows = read_rows(text, &spectral_header(), N_CHANNELS + 1)?;
    let (t0, rate) = time_base(&rows, DEFAULT_SPECTRAL_RATE_HZ)?;
    let samples = rows
        .iter()
        .map(|(line, r)| {
            let mut channels = [0.0; N_CHANNELS];
            channels.copy_from_slice(&r[1..]);
            SpectralSample::new(channels).map_err(|e| format_err(*line, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    SpectralTrace::new(rate, samples, t0).map_err(|e| format_err(2, e.to_string()))
}

pub fn write_spectral_csv(trace: &SpectralTrace) -> String {
    let mut out = spectral_header();
    out.push('\n');
    for (i, s) in trace.samples().iter().enumerate() {
        let _ = write!(out, "{}", trace.time_at(i));
        for c in s.channels {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

/// Parses a reference library. Blank lines and `#` comments are skipped.
pub fn read_library(text: &str) -> Result<ReferenceLibrary> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != N_CHANNELS + 1 {
            return Err(Error::ChannelCountMismatch {
                line,
                expected: N_CHANNELS,
                found: fields.len() - 1,
            });
        }
        let mut normalized: Channels = [0.0; N_CHANNELS];
        for (slot, f) in normalized.iter_mut().zip(&fields[1..]) {
            *slot = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| format_err(line, format!("bad signature value {f:?}")))?;
        }
        entries.push((fields[0].to_string(), ColourSignature { normalized }));
    }
    ReferenceLibrary::new(entries).map_err(|e| format_err(0, e.to_string()))
}

pub fn write_library(lib: &ReferenceLibrary) -> String {
    let mut out = String::new();
    for (label, sig) in lib.entries() {
        out.push_str(label);
        for v in sig.normalized {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

pub const SYNC: u8 = 0xA5;
pub const KIND_IR: u8 = 0x01;
pub const KIND_SPECTRAL: u8 = 0x02;
pub const IR_FRAME_LEN: usize = 9;
pub const SPECTRAL_FRAME_LEN: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorFrame {
    Ir { timestamp_ms: u32, adc: u16 },
    Spectral { timestamp_ms: u32, counts: [u16; N_CHANNELS] },
}

/// Volts to 16-bit ADC counts over the 0..5 V range.
pub fn volts_to_adc(v: f64) -> u16 {
    (v / IR_FULL_SCALE_V * 65535.0).round().clamp(0.0, 65535.0) as u16
}

pub fn adc_to_volts(count: u16) -> f64 {
    f64::from(count) * IR_FULL_SCALE_V / 65535.0
}

fn checksum(bytes: &[u8]) -> u8 {
    bytes.iter().fold(0, |acc, b| acc ^ b)
}

impl SensorFrame {
    pub fn timestamp_ms(&self) -> u32 {
        match self {
            SensorFrame::Ir { timestamp_ms, .. } | SensorFrame::Spectral { timestamp_ms, .. } => *timestamp_ms,
        }
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let start = out.len();
        out.push(SYNC);
        match self {
            SensorFrame::Ir { timestamp_ms, adc } => {
                out.push(KIND_IR);
                out.extend_from_slice(&timestamp_ms.to_le_bytes());
                out.extend_from_slice(&adc.to_le_bytes());
            }
            SensorFrame::Spectral { timestamp_ms, counts } => {
                out.push(KIND_SPECTRAL);
                out.extend_from_slice(&timestamp_ms.to_le_bytes());
                for c in counts {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
        let sum = checksum(&out[start..]);
        out.push(sum);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SPECTRAL_FRAME_LEN);
        self.encode_into(&mut out);
        out
    }

    /// Parses one complete, checksum-valid frame starting at `bytes[0]`.
    fn parse(bytes: &[u8]) -> Option<(SensorFrame, usize)> {
        let len = frame_len(*bytes.get(1)?)?;
        let frame = bytes.get(..len)?;
        if frame[0] != SYNC || checksum(&frame[..len - 1]) != frame[len - 1] {
            return None;
        }
        let timestamp_ms = u32::from_le_bytes([frame[2], frame[3], frame[4], frame[5]]);
        let word = |i: usize| u16::from_le_bytes([frame[6 + 2 * i], frame[7 + 2 * i]]);
        let parsed = match frame[1] {
            KIND_IR => SensorFrame::Ir { timestamp_ms, adc: word(0) },
            _ => SensorFrame::Spectral { timestamp_ms, counts: std::array::from_fn(word) },
        };
        Some((parsed, len))
    }
}

fn frame_len(kind: u8) -> Option<usize> {
    match kind {
        KIND_IR => Some(IR_FRAME_LEN),
        KIND_SPECTRAL => Some(SPECTRAL_FRAME_LEN),
        _ => None,
    }
}

pub fn encode_frames(frames: &[SensorFrame]) -> Vec<u8> {
    let mut out = Vec::with_capacity(frames.len() * SPECTRAL_FRAME_LEN);
    for f in frames {
        f.encode_into(&mut out);
    }
    out
}

fn to_ms(t_s: f64) -> u32 {
    (t_s * 1000.0).round().clamp(0.0, f64::from(u32::MAX)) as u32
}

pub fn ir_frames(trace: &IrTrace) -> Vec<SensorFrame> {
    trace
        .samples()
        .iter()
        .enumerate()
        .map(|(i, v)| SensorFrame::Ir { timestamp_ms: to_ms(trace.time_at(i)), adc: volts_to_adc(*v) })
        .collect()
}

pub fn spectral_frames(trace: &SpectralTrace) -> Vec<SensorFrame> {
    trace
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| SensorFrame::Spectral {
            timestamp_ms: to_ms(trace.time_at(i)),
            counts: s.channels.map(|c| c.round().clamp(0.0, 65535.0) as u16),
        })
        .collect()
}

/// A decoded reading with physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SensorReading {
    Ir { timestamp_ms: u32, volts: f64 },
    Spectral { timestamp_ms: u32, counts: Channels },
}

impl From<SensorFrame> for SensorReading {
    fn from(frame: SensorFrame) -> Self {
        match frame {
            SensorFrame::Ir { timestamp_ms, adc } => SensorReading::Ir { timestamp_ms, volts: adc_to_volts(adc) },
            SensorFrame::Spectral { timestamp_ms, counts } => {
                SensorReading::Spectral { timestamp_ms, counts: counts.map(f64::from) }
            }
        }
    }
}

/// Incremental frame decoder for one byte stream.
///
/// Bytes that do not form a valid frame are skipped up to the next sync
/// byte. Each contiguous stretch of skipped bytes counts as one error.
/// While resynchronizing, a candidate frame is only accepted when the byte
/// after it is another sync byte (or the stream has ended), which filters
/// out sync-like bytes inside corrupted payloads.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    resyncing: bool,
    errors: usize,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn errors(&self) -> usize {
        self.errors
    }

    fn skip(&mut self) {
        if !self.resyncing {
            self.errors += 1;
            self.resyncing = true;
        }
    }

    fn drain(&mut self, at_eof: bool) -> Vec<SensorFrame> {
        let mut frames = Vec::new();
        let mut pos = 0;
        while pos < self.buf.len() {
            let rest = &self.buf[pos..];
            if rest[0] != SYNC {
                self.skip();
                pos += 1;
                continue;
            }
            let Some(&kind) = rest.get(1) else { break };
            let Some(len) = frame_len(kind) else {
                self.skip();
                pos += 1;
                continue;
            };
            if rest.len() < len {
                break;
            }
            match SensorFrame::parse(rest) {
                Some((frame, used)) => {
                    if self.resyncing {
                        match rest.get(used) {
                            Some(&next) if next != SYNC => {
                                pos += 1;
                                continue;
                            }
                            None if !at_eof => break,
                            _ => {}
                        }
                    }
                    self.resyncing = false;
                    frames.push(frame);
                    pos += used;
                }
                None => {
                    self.skip();
                    pos += 1;
                }
            }
        }
        self.buf.drain(..pos);
        if at_eof && !self.buf.is_empty() {
            self.skip();
            self.buf.clear();
        }
        frames
    }

    /// Appends bytes and returns every frame completed so far.
    pub fn push(&mut self, bytes: &[u8]) -> Vec<SensorFrame> {
        self.buf.extend_from_slice(bytes);
        self.drain(false)
    }

    /// Flushes the stream; a truncated tail counts as one error.
    pub fn finish(&mut self) -> Vec<SensorFrame> {
        self.drain(true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedStream {
    pub readings: Vec<SensorReading>,
    pub errors: usize,
}

pub fn decode_frames(bytes: &[u8]) -> DecodedStream {
    let mut dec = FrameDecoder::new();
    let mut frames = dec.push(bytes);
    frames.extend(dec.finish());
    DecodedStream { readings: frames.into_iter().map(SensorReading::from).collect(), errors: dec.errors() }
}
