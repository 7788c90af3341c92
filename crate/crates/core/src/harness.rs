//! Experiment runner: configuration layering, the three reference
//! experiments, and their reports.
//!
//! Every run is reproducible from its report. The config echo lists every
//! resolved setting (seed included) in `key = value` form, and trial `i`
//! always runs with seed `rng_seed + i`, so serial and parallel execution
//! give the same numbers.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::channel::{simulate, standard_inks, Simulation};
use crate::error::{Error, Result};
use crate::io::{write_ir_csv, write_spectral_csv};
use crate::ook::{bit_error_rate, decode, encode, format_bits, parse_bits, DropletTemplate, OokParams};
use crate::sizing::{estimate_size, ir_plateau_means, ir_pulses, Baselines};
use crate::spectral::{
    droplet_signature, estimate_concentration, segment_droplets, ColourSignature, ReferenceLibrary,
    DEFAULT_DEPTH_THRESHOLD,
};
use crate::types::{
    Channels, ChannelConfig, DropletEvent, DropletSchedule, InkSpec, SensorOrder, N_CHANNELS,
};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "DROPLETLINK_SEED";

/// The 16-bit test sequence used by the transmission experiment.
pub const REFERENCE_BITS: &str = "1011110001011001";

/// Allowed spread of IR plateau means across dye concentrations.
pub const IR_INVARIANCE_TOLERANCE_V: f64 = 0.13;

/// Allowed worst-case deviation of the mean measured droplet length.
pub const SIZING_PRECISION_MM: f64 = 0.48;

/// Leading droplet-free span used to estimate both sensor baselines.
pub const BASELINE_WINDOW_S: f64 = 0.4;

/// IR detection threshold used outside the OOK decoder.
pub const IR_DETECT_THRESHOLD_V: f64 = 0.2;

const DILUTION_DROPLETS: usize = 5;
const DILUTION_SPACING_S: f64 = 2.0;
const DROPLET_LENGTH_MM: f64 = 5.0;
const DYE_CONCENTRATION: f64 = 0.25;

/// Dye from the standard set by name.
pub fn ink_by_name(name: &str) -> Result<InkSpec> {
    if name == "water" {
        return Ok(InkSpec::water());
    }
    standard_inks()
        .into_iter()
        .find(|i| i.name == name)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown ink {name:?}")))
}

/// Channel and decoder settings, addressable by field name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Settings {
    pub channel: ChannelConfig,
    pub ook: OokParams,
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("{key}: cannot parse {value:?}")))
}

fn parse_flag(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidParameter(format!("{key}: expected true/false, got {value:?}"))),
    }
}

pub fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl Settings {
    pub const KEYS: [&'static str; 25] = [
        "v_chan_mm_s",
        "speed_jitter_frac",
        "sensor_separation_mm",
        "inlet_distance_mm",
        "sensor_order",
        "ir_sample_rate_hz",
        "spectral_sample_rate_hz",
        "spectral_rate_override",
        "ir_amplitude_v",
        "ir_offset_v",
        "noise_sigma_v",
        "spectral_noise_rel",
        "edge_time_s",
        "baseline_counts",
        "path_length_mm",
        "duration_s",
        "rng_seed",
        "threshold_v",
        "duty_fraction",
        "symbol_period_s",
        "n_bits",
        "baseline_window_s",
        "correct_offset",
        "resync",
        "early_guard_fraction",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let c = &mut self.channel;
        let o = &mut self.ook;
        match key {
            "v_chan_mm_s" => c.v_chan_mm_s = parse_num(key, value)?,
            "speed_jitter_frac" => c.speed_jitter_frac = parse_num(key, value)?,
            "sensor_separation_mm" => c.sensor_separation_mm = parse_num(key, value)?,
            "inlet_distance_mm" => c.inlet_distance_mm = parse_num(key, value)?,
            "sensor_order" => {
                c.sensor_order = match value.trim() {
                    "ir_first" => SensorOrder::IrFirst,
                    "spectral_first" => SensorOrder::SpectralFirst,
                    _ => {
                        return Err(Error::InvalidParameter(format!(
                            "sensor_order: expected ir_first or spectral_first, got {value:?}"
                        )))
                    }
                }
            }
            "ir_sample_rate_hz" => c.ir_sample_rate_hz = parse_num(key, value)?,
            "spectral_sample_rate_hz" => c.spectral_sample_rate_hz = parse_num(key, value)?,
            "spectral_rate_override" => c.spectral_rate_override = parse_flag(key, value)?,
            "ir_amplitude_v" => c.ir_amplitude_v = parse_num(key, value)?,
            "ir_offset_v" => c.ir_offset_v = parse_num(key, value)?,
            "noise_sigma_v" => c.noise_sigma_v = parse_num(key, value)?,
            "spectral_noise_rel" => c.spectral_noise_rel = parse_num(key, value)?,
            "edge_time_s" => c.edge_time_s = parse_num(key, value)?,
            "baseline_counts" => {
                let v = parse_list(key, value)?;
                c.baseline_counts = <Channels>::try_from(v.as_slice()).map_err(|_| {
                    Error::InvalidParameter(format!("baseline_counts needs {N_CHANNELS} values, got {}", v.len()))
                })?;
            }
            "path_length_mm" => c.path_length_mm = parse_num(key, value)?,
            "duration_s" => {
                c.duration_s = match value.trim() {
                    "auto" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "rng_seed" => c.rng_seed = parse_num(key, value)?,
            "threshold_v" => o.threshold_v = parse_num(key, value)?,
            "duty_fraction" => o.duty_fraction = parse_num(key, value)?,
            "symbol_period_s" => o.symbol_period_s = parse_num(key, value)?,
            "n_bits" => {
                o.n_bits = match value.trim() {
                    "auto" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "baseline_window_s" => o.baseline_window_s = parse_num(key, value)?,
            "correct_offset" => o.correct_offset = parse_flag(key, value)?,
            "resync" => o.resync = parse_flag(key, value)?,
            "early_guard_fraction" => o.early_guard_fraction = parse_num(key, value)?,
            _ => return Err(Error::InvalidParameter(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let c = &self.channel;
        let o = &self.ook;
        Some(match key {
            "v_chan_mm_s" => c.v_chan_mm_s.to_string(),
            "speed_jitter_frac" => c.speed_jitter_frac.to_string(),
            "sensor_separation_mm" => c.sensor_separation_mm.to_string(),
            "inlet_distance_mm" => c.inlet_distance_mm.to_string(),
            "sensor_order" => match c.sensor_order {
                SensorOrder::IrFirst => "ir_first".into(),
                SensorOrder::SpectralFirst => "spectral_first".into(),
            },
            "ir_sample_rate_hz" => c.ir_sample_rate_hz.to_string(),
            "spectral_sample_rate_hz" => c.spectral_sample_rate_hz.to_string(),
            "spectral_rate_override" => c.spectral_rate_override.to_string(),
            "ir_amplitude_v" => c.ir_amplitude_v.to_string(),
            "ir_offset_v" => c.ir_offset_v.to_string(),
            "noise_sigma_v" => c.noise_sigma_v.to_string(),
            "spectral_noise_rel" => c.spectral_noise_rel.to_string(),
            "edge_time_s" => c.edge_time_s.to_string(),
            "baseline_counts" => join(&c.baseline_counts),
            "path_length_mm" => c.path_length_mm.to_string(),
            "duration_s" => c.duration_s.map_or("auto".into(), |d| d.to_string()),
            "rng_seed" => c.rng_seed.to_string(),
            "threshold_v" => o.threshold_v.to_string(),
            "duty_fraction" => o.duty_fraction.to_string(),
            "symbol_period_s" => o.symbol_period_s.to_string(),
            "n_bits" => o.n_bits.map_or("auto".into(), |n| n.to_string()),
            "baseline_window_s" => o.baseline_window_s.to_string(),
            "correct_offset" => o.correct_offset.to_string(),
            "resync" => o.resync.to_string(),
            "early_guard_fraction" => o.early_guard_fraction.to_string(),
            _ => return None,
        })
    }

    pub fn echo(&self) -> Vec<(String, String)> {
        Self::KEYS
            .iter()
            .filter_map(|k| self.get(k).map(|v| (k.to_string(), v)))
            .collect()
    }

    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Layers settings with precedence flags > seed env var > config file > defaults.
    pub fn resolve(
        file: Option<&str>,
        env_seed: Option<&str>,
        flags: &[(String, String)],
    ) -> Result<Self> {
        let mut s = Settings::default();
        if let Some(text) = file {
            let pairs = parse_key_values(text)?;
            s.apply(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        }
        if let Some(seed) = env_seed {
            s.set("rng_seed", seed)?;
        }
        s.apply(flags.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        s.channel.validate()?;
        s.ook.validate()?;
        Ok(s)
    }
}

/// Parses `key = value` lines. `#` starts a comment; `[section]` headers are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
            line: i + 1,
            msg: format!("expected `key = value`, found {line:?}"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Number(f64),
    Flag(bool),
    Text(String),
}

impl Metric {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Metric::Number(v) => Some(*v),
            _ => None,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Number(v) => write!(f, "{v}"),
            Metric::Flag(b) => write!(f, "{b}"),
            Metric::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for Metric {
    fn from(v: f64) -> Self {
        Metric::Number(v)
    }
}

impl From<usize> for Metric {
    fn from(v: usize) -> Self {
        Metric::Number(v as f64)
    }
}

impl From<bool> for Metric {
    fn from(v: bool) -> Self {
        Metric::Flag(v)
    }
}

impl From<String> for Metric {
    fn from(v: String) -> Self {
        Metric::Text(v)
    }
}

/// A pass/fail statement the experiment makes about its own result.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub experiment: String,
    /// Resolved settings followed by the experiment's own inputs.
    pub config_echo: Vec<(String, String)>,
    pub metrics: BTreeMap<String, Metric>,
    pub checks: Vec<Check>,
    /// Artifact file names, relative to the output directory.
    pub artifacts: Vec<String>,
}

impl ExperimentReport {
    pub fn new(experiment: &str, config_echo: Vec<(String, String)>) -> Self {
        Self {
            experiment: experiment.into(),
            config_echo,
            metrics: BTreeMap::new(),
            checks: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn metric(&self, key: &str) -> Option<&Metric> {
        self.metrics.get(key)
    }

    pub fn number(&self, key: &str) -> Option<f64> {
        self.metric(key).and_then(Metric::as_f64)
    }

    pub fn put(&mut self, key: impl Into<String>, value: impl Into<Metric>) {
        self.metrics.insert(key.into(), value.into());
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check { name: name.into(), passed, detail });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "experiment = {}", self.experiment);
        let _ = writeln!(out, "passed = {}", self.passed());
        out.push_str("\n[config]\n");
        for (k, v) in &self.config_echo {
            let _ = writeln!(out, "{k} = {v}");
        }
        out.push_str("\n[metrics]\n");
        for (k, v) in &self.metrics {
            let _ = writeln!(out, "{k} = {v}");
        }
        out.push_str("\n[checks]\n");
        for c in &self.checks {
            let _ = writeln!(out, "{} = {} # {}", c.name, if c.passed { "pass" } else { "fail" }, c.detail);
        }
        out.push_str("\n[artifacts]\n");
        for (i, a) in self.artifacts.iter().enumerate() {
            let _ = writeln!(out, "artifact.{i} = {a}");
        }
        out
    }

    /// Writes `report.txt` into `dir` and returns its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join("report.txt");
        fs::write(&path, self.to_text())?;
        Ok(path)
    }
}

/// Extracts the `[config]` section of a report as key-value pairs.
pub fn config_section(report_text: &str) -> Vec<(String, String)> {
    let mut in_config = false;
    let mut out = Vec::new();
    for line in report_text.lines() {
        let t = line.trim();
        if t.starts_with('[') {
            in_config = t == "[config]";
            continue;
        }
        if in_config {
            if let Some((k, v)) = t.split_once('=') {
                out.push((k.trim().to_string(), v.trim().to_string()));
            }
        }
    }
    out
}

/// Splits a config echo into settings and experiment inputs.
pub fn settings_from_echo(echo: &[(String, String)]) -> Result<(Settings, BTreeMap<String, String>)> {
    let mut settings = Settings::default();
    let mut inputs = BTreeMap::new();
    for (k, v) in echo {
        if Settings::KEYS.contains(&k.as_str()) {
            settings.set(k, v)?;
        } else {
            inputs.insert(k.clone(), v.clone());
        }
    }
    Ok((settings, inputs))
}

struct Artifacts<'a> {
    dir: Option<&'a Path>,
    names: Vec<String>,
}

impl<'a> Artifacts<'a> {
    fn new(dir: Option<&'a Path>) -> Result<Self> {
        if let Some(d) = dir {
            fs::create_dir_all(d)?;
        }
        Ok(Self { dir, names: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        if let Some(d) = self.dir {
            fs::write(d.join(name), contents)?;
            self.names.push(name.to_string());
        }
        Ok(())
    }
}

fn trial_config(cfg: &ChannelConfig, trial: usize) -> ChannelConfig {
    ChannelConfig { rng_seed: cfg.rng_seed.wrapping_add(trial as u64), ..cfg.clone() }
}

fn echo_with(cfg: &ChannelConfig, params: &OokParams, extra: Vec<(&str, String)>) -> Vec<(String, String)> {
    let mut echo = Settings { channel: cfg.clone(), ook: params.clone() }.echo();
    echo.extend(extra.into_iter().map(|(k, v)| (k.to_string(), v)));
    echo
}

/// Droplet used for each `1` bit in the transmission experiment.
pub fn transmission_template() -> DropletTemplate {
    DropletTemplate {
        length_mm: DROPLET_LENGTH_MM,
        ink: ink_by_name("red").expect("standard ink"),
        concentration: DYE_CONCENTRATION,
    }
}

/// Repeated encode, simulate, decode of one bit sequence.
///
/// The decoder is told the sequence length unless `params.n_bits` is set.
pub fn run_transmission(
    bits: &[bool],
    cfg: &ChannelConfig,
    params: &OokParams,
    trials: usize,
    out_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    if bits.is_empty() {
        return Err(Error::InvalidParameter("bit sequence is empty".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be > 0".into()));
    }
    cfg.validate()?;
    let params = OokParams { n_bits: Some(params.n_bits.unwrap_or(bits.len())), ..params.clone() };
    params.validate()?;
    let template = transmission_template();
    let schedule = encode(bits, params.symbol_period_s, &template)?;

    let outcomes = (0..trials)
        .into_par_iter()
        .map(|t| {
            let sim = simulate(&schedule, &trial_config(cfg, t))?;
            let rep = decode(&sim.ir, &params)?;
            let ber = bit_error_rate(bits, &rep.bits)?;
            Ok((sim, rep, ber))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = ExperimentReport::new(
        "transmission",
        echo_with(cfg, &params, vec![
            ("bits", format_bits(bits)),
            ("trials", trials.to_string()),
            ("droplet_length_mm", template.length_mm.to_string()),
            ("ink", template.ink.name.clone()),
            ("concentration", template.concentration.to_string()),
        ]),
    );
    let total_errors: f64 = outcomes.iter().map(|(_, _, ber)| ber * bits.len() as f64).sum();
    let ber = total_errors / (bits.len() * trials) as f64;
    let error_free = outcomes.iter().filter(|(_, _, b)| *b == 0.0).count();
    report.put("ber", ber);
    report.put("bit_errors", total_errors.round());
    report.put("trials", trials);
    report.put("error_free_trials", error_free);
    for (t, (_, rep, b)) in outcomes.iter().enumerate() {
        report.put(format!("trial.{t:04}.bits"), format_bits(&rep.bits));
        report.put(format!("trial.{t:04}.ber"), *b);
    }
    report.check("ber_zero", ber == 0.0, format!("aggregate BER {ber}"));

    let mut art = Artifacts::new(out_dir)?;
    let (sim0, rep0, _) = &outcomes[0];
    art.write("transmission_ir.csv", &write_ir_csv(&sim0.ir))?;
    let mut intervals = String::from("start_s,end_s,duty,bit\n");
    for ((s, e), (d, b)) in rep0.symbol_intervals.iter().zip(rep0.duty_per_symbol.iter().zip(&rep0.bits)) {
        let _ = writeln!(intervals, "{s},{e},{d},{}", u8::from(*b));
    }
    art.write("transmission_intervals.csv", &intervals)?;
    let mut per_trial = String::from("trial,seed,bits,ber\n");
    for (t, (_, rep, b)) in outcomes.iter().enumerate() {
        let _ = writeln!(per_trial, "{t},{},{},{b}", trial_config(cfg, t).rng_seed, format_bits(&rep.bits));
    }
    art.write("transmission_trials.csv", &per_trial)?;
    report.artifacts = art.names;
    Ok(report)
}

/// Per-droplet spectral windows located from the IR pulses and the nominal
/// cross-sensor delay, shrunk to stay inside the plateau under speed jitter.
fn windows_from_ir(sim: &Simulation, offset_v: f64, cfg: &ChannelConfig) -> Vec<std::ops::Range<usize>> {
    let delay = cfg.nominal_delay_s();
    let shift = match cfg.sensor_order {
        SensorOrder::IrFirst => delay,
        SensorOrder::SpectralFirst => -delay,
    };
    let margin = cfg.speed_jitter_frac / (1.0 - cfg.speed_jitter_frac) * delay + cfg.edge_time_s;
    ir_pulses(&sim.ir, offset_v, IR_DETECT_THRESHOLD_V)
        .into_iter()
        .map(|p| sim.spectral.index_range(p.lead_s + shift + margin, p.trail_s + shift - margin))
        .collect()
}

/// Dilution series: IR amplitude invariance and concentration recovery.
pub fn run_dilution(
    ink: &InkSpec,
    concentrations: &[f64],
    cfg: &ChannelConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    if concentrations.is_empty() {
        return Err(Error::InvalidParameter("no concentrations given".into()));
    }
    if let Some(c) = concentrations.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::InvalidParameter(format!("concentration {c} outside [0, 1]")));
    }
    cfg.validate()?;

    struct Level {
        sim: Simulation,
        ir_means: Vec<f64>,
        signature: Channels,
        estimate: Option<f64>,
    }

    let levels = concentrations
        .par_iter()
        .enumerate()
        .map(|(li, &c)| {
            let events = (0..DILUTION_DROPLETS)
                .map(|k| DropletEvent::new(k as f64 * DILUTION_SPACING_S, DROPLET_LENGTH_MM, ink.clone(), c))
                .collect::<Result<Vec<_>>>()?;
            let level_cfg = trial_config(cfg, li);
            let sim = simulate(&DropletSchedule::new(events)?, &level_cfg)?;
            let base = Baselines::estimate(&sim.ir, &sim.spectral, BASELINE_WINDOW_S)?;
            let ir_means = ir_plateau_means(&sim.ir, base.ir_offset_v, IR_DETECT_THRESHOLD_V, cfg.edge_time_s);
            let mut signature = [0.0; N_CHANNELS];
            let mut estimates = Vec::new();
            let windows = windows_from_ir(&sim, base.ir_offset_v, cfg);
            for w in &windows {
                let sig = droplet_signature(&sim.spectral, w.clone(), &base.spectral)?;
                for ch in 0..N_CHANNELS {
                    signature[ch] += sig.normalized[ch] / windows.len() as f64;
                }
                if ink.absorption_coeffs.iter().any(|a| *a > 0.0) {
                    estimates.push(estimate_concentration(&sig, ink, cfg.path_length_mm)?);
                }
            }
            let estimate =
                (!estimates.is_empty()).then(|| estimates.iter().sum::<f64>() / estimates.len() as f64);
            Ok(Level { sim, ir_means, signature, estimate })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = ExperimentReport::new(
        "dilution",
        echo_with(cfg, &OokParams::default(), vec![
            ("ink", ink.name.clone()),
            ("absorption_coeffs", join(&ink.absorption_coeffs)),
            ("concentrations", join(concentrations)),
            ("droplets_per_level", DILUTION_DROPLETS.to_string()),
            ("droplet_length_mm", DROPLET_LENGTH_MM.to_string()),
        ]),
    );

    let level_means: Vec<f64> = levels
        .iter()
        .map(|l| l.ir_means.iter().sum::<f64>() / l.ir_means.len().max(1) as f64)
        .collect();
    let grand = level_means.iter().sum::<f64>() / level_means.len() as f64;
    let max_dev = level_means.iter().map(|m| (m - grand).abs()).fold(0.0, f64::max);
    let max_dev_nominal = level_means.iter().map(|m| (m - cfg.ir_amplitude_v).abs()).fold(0.0, f64::max);
    let all_detected = levels.iter().all(|l| l.ir_means.len() == DILUTION_DROPLETS);
    report.put("ir_grand_mean_v", grand);
    report.put("ir_max_deviation_v", max_dev);
    report.put("ir_max_deviation_from_configured_v", max_dev_nominal);
    report.put("ir_all_droplets_detected", all_detected);

    let estimates: Vec<Option<f64>> = levels.iter().map(|l| l.estimate).collect();
    if estimates.iter().all(Option::is_some) {
        let est: Vec<f64> = estimates.iter().flatten().copied().collect();
        let mut order: Vec<usize> = (0..concentrations.len()).collect();
        order.sort_by(|a, b| concentrations[*a].total_cmp(&concentrations[*b]));
        let monotone = order.windows(2).all(|w| est[w[1]] >= est[w[0]]);
        let max_err = est.iter().zip(concentrations).map(|(e, c)| (e - c).abs()).fold(0.0, f64::max);
        report.put("estimates_monotone", monotone);
        report.put("estimate_max_abs_error", max_err);
    }

    for (li, (level, c)) in levels.iter().zip(concentrations).enumerate() {
        let key = format!("level.{li:02}");
        report.put(format!("{key}.concentration"), *c);
        report.put(format!("{key}.ir_plateau_mean_v"), level_means[li]);
        report.put(format!("{key}.signature"), join(&level.signature));
        if let Some(e) = level.estimate {
            report.put(format!("{key}.estimate"), e);
        }
    }

    report.check(
        "ir_invariance",
        max_dev <= IR_INVARIANCE_TOLERANCE_V && max_dev_nominal <= IR_INVARIANCE_TOLERANCE_V,
        format!(
            "max deviation {max_dev} V from grand mean, {max_dev_nominal} V from configured amplitude (limit {IR_INVARIANCE_TOLERANCE_V} V)"
        ),
    );
    report.check("ir_detected", all_detected, "every droplet seen by the IR sensor".into());

    let mut art = Artifacts::new(out_dir)?;
    let mut summary = format!("concentration,ir_plateau_mean_v,estimate,{}\n", crate::types::CHANNEL_NAMES.join(","));
    for (li, (level, c)) in levels.iter().zip(concentrations).enumerate() {
        let pct = format!("{:05.1}", c * 100.0);
        art.write(&format!("dilution_ir_{pct}.csv"), &write_ir_csv(&level.sim.ir))?;
        art.write(&format!("dilution_spectral_{pct}.csv"), &write_spectral_csv(&level.sim.spectral))?;
        let est = level.estimate.map_or(String::new(), |e| e.to_string());
        let _ = writeln!(summary, "{c},{},{est},{}", level_means[li], join(&level.signature));
    }
    art.write("dilution_summary.csv", &summary)?;
    report.artifacts = art.names;
    Ok(report)
}

/// Droplet length estimation over repeated single-droplet runs.
pub fn run_sizing(
    lengths_mm: &[f64],
    trials_per_length: usize,
    cfg: &ChannelConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    if lengths_mm.is_empty() || trials_per_length == 0 {
        return Err(Error::InvalidParameter("need at least one length and one trial".into()));
    }
    if let Some(l) = lengths_mm.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::InvalidParameter(format!("droplet length {l} must be > 0")));
    }
    cfg.validate()?;
    let ink = ink_by_name("red")?;

    let runs: Vec<(usize, usize)> = (0..lengths_mm.len())
        .flat_map(|li| (0..trials_per_length).map(move |t| (li, t)))
        .collect();
    let measured = runs
        .par_iter()
        .map(|&(li, t)| {
            let ev = DropletEvent::new(0.0, lengths_mm[li], ink.clone(), DYE_CONCENTRATION)?;
            let run_cfg = trial_config(cfg, li * trials_per_length + t);
            let sim = simulate(&DropletSchedule::new(vec![ev])?, &run_cfg)?;
            let base = Baselines::estimate(&sim.ir, &sim.spectral, BASELINE_WINDOW_S)?;
            let est = estimate_size(&sim.ir, &sim.spectral, cfg, &base)?;
            match est.as_slice() {
                [one] => Ok((run_cfg.rng_seed, *one, sim.passages[0])),
                _ => Err(Error::UnmatchedDroplet { ir: est.len(), spectral: est.len() }),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = ExperimentReport::new(
        "sizing",
        echo_with(cfg, &OokParams::default(), vec![
            ("lengths_mm", join(lengths_mm)),
            ("trials_per_length", trials_per_length.to_string()),
            ("ink", ink.name.clone()),
            ("concentration", DYE_CONCENTRATION.to_string()),
        ]),
    );

    let mut summary = String::from("expected_mm,mean_mm,std_mm,min_mm,max_mm,n\n");
    let mut max_dev: f64 = 0.0;
    for (li, &expected) in lengths_mm.iter().enumerate() {
        let vals: Vec<f64> = measured[li * trials_per_length..(li + 1) * trials_per_length]
            .iter()
            .map(|(_, e, _)| e.length_mm)
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = if vals.len() > 1 {
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        max_dev = max_dev.max((mean - expected).abs());
        let key = format!("length.{li:02}");
        report.put(format!("{key}.expected_mm"), expected);
        report.put(format!("{key}.mean_mm"), mean);
        report.put(format!("{key}.std_mm"), std);
        report.put(format!("{key}.deviation_mm"), mean - expected);
        let _ = writeln!(summary, "{expected},{mean},{std},{lo},{hi},{}", vals.len());
    }
    report.put("max_length_deviation_mm", max_dev);
    report.check(
        "precision",
        max_dev <= SIZING_PRECISION_MM,
        format!("largest mean deviation {max_dev} mm (limit {SIZING_PRECISION_MM} mm)"),
    );

    let mut art = Artifacts::new(out_dir)?;
    art.write("sizing.csv", &summary)?;
    let mut trials = String::from(
        "expected_mm,trial,seed,length_mm,speed_mm_s,t_drop_s,delta_t_s,true_speed_mm_s\n",
    );
    for (&(li, t), (seed, e, p)) in runs.iter().zip(&measured) {
        let _ = writeln!(
            trials,
            "{},{t},{seed},{},{},{},{},{}",
            lengths_mm[li], e.length_mm, e.speed_mm_s, e.t_drop_s, e.delta_t_s, p.actual_speed_mm_s
        );
    }
    art.write("sizing_trials.csv", &trials)?;
    report.artifacts = art.names;
    Ok(report)
}

/// Reference library from one clean droplet per ink.
pub fn calibrate_library(inks: &[InkSpec], concentration: f64, cfg: &ChannelConfig) -> Result<ReferenceLibrary> {
    let clean = ChannelConfig {
        speed_jitter_frac: 0.0,
        noise_sigma_v: 0.0,
        spectral_noise_rel: 0.0,
        duration_s: None,
        ..cfg.clone()
    };
    let entries = inks
        .iter()
        .map(|ink| {
            let ev = DropletEvent::new(0.0, DROPLET_LENGTH_MM, ink.clone(), concentration)?;
            let sim = simulate(&DropletSchedule::new(vec![ev])?, &clean)?;
            let windows = segment_droplets(&sim.spectral, &clean.baseline_counts, DEFAULT_DEPTH_THRESHOLD)?;
            let w = windows.into_iter().next().ok_or(Error::NoPulse)?;
            let sig: ColourSignature = droplet_signature(&sim.spectral, w, &clean.baseline_counts)?;
            Ok((ink.name.clone(), sig))
        })
        .collect::<Result<Vec<_>>>()?;
    ReferenceLibrary::new(entries)
}

/// Parses the reference sequence or a user-supplied bit string.
pub fn bits_or_reference(bits: Option<&str>) -> Result<Vec<bool>> {
    parse_bits(bits.unwrap_or(REFERENCE_BITS))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_echo_round_trip() {
        let mut s = Settings::default();
        s.set("v_chan_mm_s", "12.5").unwrap();
        s.set("duration_s", "30").unwrap();
        s.set("baseline_counts", "1,2,3,4,5,6").unwrap();
        s.set("sensor_order", "spectral_first").unwrap();
        s.set("n_bits", "16").unwrap();
        let (back, inputs) = settings_from_echo(&s.echo()).unwrap();
        assert_eq!(back, s);
        assert!(inputs.is_empty());
        assert_eq!(s.echo().len(), Settings::KEYS.len());
    }

    #[test]
    fn unknown_setting_rejected() {
        assert!(Settings::default().set("warp_factor", "9").is_err());
        assert!(Settings::default().set("resync", "maybe").is_err());
        assert!(Settings::default().set("baseline_counts", "1,2").is_err());
    }

    #[test]
    fn precedence_flag_env_file() {
        let file = "rng_seed = 5\nnoise_sigma_v = 0.03 # comment\n[section]\n";
        let s = Settings::resolve(Some(file), None, &[]).unwrap();
        assert_eq!((s.channel.rng_seed, s.channel.noise_sigma_v), (5, 0.03));
        let s = Settings::resolve(Some(file), Some("7"), &[]).unwrap();
        assert_eq!(s.channel.rng_seed, 7);
        let flags = vec![("rng_seed".to_string(), "9".to_string())];
        let s = Settings::resolve(Some(file), Some("7"), &flags).unwrap();
        assert_eq!(s.channel.rng_seed, 9);
        assert!(Settings::resolve(Some("just words"), None, &[]).is_err());
    }

    #[test]
    fn transmission_defaults_are_error_free() {
        let bits = bits_or_reference(None).unwrap();
        let r = run_transmission(&bits, &ChannelConfig::default(), &OokParams::default(), 10, None).unwrap();
        assert_eq!(r.number("ber"), Some(0.0));
        assert!(r.passed());
        assert_eq!(r.metric("trial.0003.bits"), Some(&Metric::Text(REFERENCE_BITS.into())));
    }

    #[test]
    fn transmission_rejects_empty_bits() {
        assert!(run_transmission(&[], &ChannelConfig::default(), &OokParams::default(), 1, None).is_err());
    }

    #[test]
    fn heavy_noise_degrades_gracefully() {
        let bits = bits_or_reference(None).unwrap();
        let cfg = ChannelConfig { noise_sigma_v: 0.5, ..Default::default() };
        let r = run_transmission(&bits, &cfg, &OokParams::default(), 5, None).unwrap();
        assert!(r.number("ber").unwrap() > 0.0);
        assert!(!r.passed());
    }

    #[test]
    fn single_trial_sizing_has_zero_std() {
        let r = run_sizing(&[3.0], 1, &ChannelConfig::default(), None).unwrap();
        assert_eq!(r.number("length.00.std_mm"), Some(0.0));
    }

    #[test]
    fn water_in_dilution_is_seen_by_ir() {
        let r = run_dilution(&InkSpec::water(), &[0.0], &ChannelConfig::default(), None).unwrap();
        assert_eq!(r.metric("ir_all_droplets_detected"), Some(&Metric::Flag(true)));
        let sig = parse_list("sig", &r.metric("level.00.signature").unwrap().to_string()).unwrap();
        assert!(sig.iter().all(|v| (v - 1.0).abs() < 0.08), "{sig:?}");
    }

    #[test]
    fn calibrated_library_classifies_itself() {
        let lib = calibrate_library(&standard_inks(), DYE_CONCENTRATION, &ChannelConfig::default()).unwrap();
        assert_eq!(lib.len(), 6);
        for (label, sig) in lib.entries() {
            assert_eq!(&crate::spectral::classify(sig, &lib).unwrap().label, label);
        }
    }
}
