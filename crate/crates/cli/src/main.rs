//! `dropletlink` command-line tool.
//!
//! Every setting of the channel and the decoder is a global `--<key> VALUE`
//! flag named exactly as the field. `--config FILE` reads `key = value`
//! lines. Precedence: flag > `DROPLETLINK_SEED` (seed only) > file > default.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use dropletlink::channel::{simulate, standard_inks};
use dropletlink::harness::{
    bits_or_reference, calibrate_library, ink_by_name, parse_list, run_dilution, run_sizing,
    run_transmission, ExperimentReport, Settings, BASELINE_WINDOW_S, SEED_ENV,
};
use dropletlink::io::{
    decode_frames, encode_frames, ir_frames, read_ir_csv, read_library, read_spectral_csv,
    spectral_frames, write_ir_csv, write_library, write_spectral_csv, SensorReading,
};
use dropletlink::ook::{bit_error_rate, decode, encode, format_bits, parse_bits, DropletTemplate};
use dropletlink::sizing::{estimate_size, Baselines};
use dropletlink::spectral::{classify_droplets, DEFAULT_DEPTH_THRESHOLD, DEFAULT_MARGIN_CUTOFF};
use dropletlink::types::IrTrace;
use dropletlink::Error;

const EXIT_INPUT: u8 = 2;
const EXIT_ASSERTION: u8 = 3;

enum Failure {
    Input(String),
    Assertion(PathBuf),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn out_arg() -> Arg {
    Arg::new("out").long("out").value_name("DIR").default_value("dropletlink-out").help("Output directory")
}

fn cli() -> Command {
    let mut cmd = Command::new("dropletlink")
        .about("Droplet microfluidic channel simulator and dual-sensor receiver")
        .subcommand_required(true)
        .arg(Arg::new("config").long("config").value_name("FILE").global(true).help("key = value settings file"));
    for key in Settings::KEYS {
        cmd = cmd.arg(Arg::new(key).long(key).value_name("VALUE").global(true).help_heading("Settings"));
    }
    let template_args = [
        Arg::new("ink").long("ink").default_value("red"),
        Arg::new("concentration").long("concentration").default_value("0.25"),
        Arg::new("length_mm").long("length_mm").default_value("5"),
    ];
    cmd.subcommand(
        Command::new("simulate")
            .about("Encode bits, simulate both sensor traces, write CSV and frame files")
            .arg(Arg::new("bits").long("bits").help("Bit string (default: the 16-bit reference sequence)"))
            .args(template_args)
            .arg(out_arg()),
    )
    .subcommand(
        Command::new("decode")
            .about("Decode an IR trace (CSV or binary frame stream) into bits")
            .arg(Arg::new("ir").long("ir").value_name("CSV").conflicts_with("frames"))
            .arg(Arg::new("frames").long("frames").value_name("BIN"))
            .arg(Arg::new("expect").long("expect").help("Assert the decoded bits equal this string"))
            .arg(out_arg()),
    )
    .subcommand(
        Command::new("classify")
            .about("Segment and classify droplets in a spectral trace")
            .arg(Arg::new("spectral").long("spectral").value_name("CSV").required(true))
            .arg(Arg::new("library").long("library").value_name("FILE").help("Reference library (default: calibrate the standard inks)"))
            .arg(Arg::new("margin_cutoff").long("margin_cutoff").help("Calls with a smaller margin are flagged [default: 0.05]"))
            .arg(Arg::new("depth_threshold").long("depth_threshold").help("Notch depth that marks a droplet [default: 0.5]"))
            .arg(out_arg()),
    )
    .subcommand(
        Command::new("size")
            .about("Estimate droplet speed and length from an IR and a spectral trace")
            .arg(Arg::new("ir").long("ir").value_name("CSV").required(true))
            .arg(Arg::new("spectral").long("spectral").value_name("CSV").required(true))
            .arg(out_arg()),
    )
    .subcommand(
        Command::new("experiment")
            .about("Run a reference experiment")
            .subcommand_required(true)
            .subcommand(
                Command::new("transmission")
                    .arg(Arg::new("bits").long("bits"))
                    .arg(Arg::new("trials").long("trials").default_value("100"))
                    .arg(out_arg()),
            )
            .subcommand(
                Command::new("dilution")
                    .arg(Arg::new("ink").long("ink").default_value("blue"))
                    .arg(Arg::new("concentrations").long("concentrations").default_value("0,0.05,0.1,0.15,0.2,0.25"))
                    .arg(out_arg()),
            )
            .subcommand(
                Command::new("sizing")
                    .arg(Arg::new("lengths").long("lengths").default_value("1,2,3,4,5"))
                    .arg(Arg::new("trials").long("trials").default_value("20"))
                    .arg(out_arg()),
            ),
    )
    .arg(Arg::new("quiet").long("quiet").short('q').action(ArgAction::SetTrue).global(true))
}

fn str_arg<'a>(m: &'a ArgMatches, id: &str) -> Option<&'a str> {
    m.get_one::<String>(id).map(String::as_str)
}

fn num_arg<T: std::str::FromStr>(m: &ArgMatches, id: &str) -> CliResult<T> {
    let raw = str_arg(m, id).unwrap_or_default();
    raw.parse().map_err(|_| Failure::Input(format!("--{id}: cannot parse {raw:?}")))
}

fn read_text(path: &str) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{path}: {e}")))
}

/// Flags given on the command line, in settings-key order.
fn settings(top: &ArgMatches) -> CliResult<Settings> {
    let file = str_arg(top, "config").map(read_text).transpose()?;
    let env_seed = std::env::var(SEED_ENV).ok();
    let sub = top.subcommand().map(|(_, m)| m);
    let nested = sub.and_then(|m| m.subcommand().map(|(_, m)| m));
    let flags: Vec<(String, String)> = Settings::KEYS
        .iter()
        .filter_map(|k| {
            [nested, sub, Some(top)]
                .into_iter()
                .flatten()
                .find_map(|m| str_arg(m, k))
                .map(|v| (k.to_string(), v.to_string()))
        })
        .collect();
    Ok(Settings::resolve(file.as_deref(), env_seed.as_deref(), &flags)?)
}

struct Output {
    dir: PathBuf,
    report: ExperimentReport,
}

impl Output {
    fn new(dir: &str, verb: &str, settings: &Settings, inputs: Vec<(&str, String)>) -> CliResult<Self> {
        let dir = PathBuf::from(dir);
        fs::create_dir_all(&dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
        let mut echo = settings.echo();
        echo.extend(inputs.into_iter().map(|(k, v)| (k.to_string(), v)));
        Ok(Self { dir, report: ExperimentReport::new(verb, echo) })
    }

    fn artifact(&mut self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
        fs::write(self.dir.join(name), contents).map_err(|e| Failure::Input(format!("{name}: {e}")))?;
        self.report.artifacts.push(name.to_string());
        Ok(())
    }

    fn finish(self, quiet: bool) -> CliResult<()> {
        finish(&self.report, &self.dir, quiet)
    }
}

fn finish(report: &ExperimentReport, dir: &Path, quiet: bool) -> CliResult<()> {
    let path = report.write(dir)?;
    if !quiet {
        // a closed stdout (e.g. piped into `head`) must not fail the run
        let mut stdout = std::io::stdout().lock();
        let _ = writeln!(stdout, "{}report: {}", summary(report), path.display());
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Assertion(path))
    }
}

/// Console summary: headline metrics and checks, not per-trial detail.
fn summary(report: &ExperimentReport) -> String {
    let mut s = format!("{}\n", report.experiment);
    for (k, v) in &report.metrics {
        if !k.starts_with("trial.") {
            let _ = writeln!(s, "  {k} = {v}");
        }
    }
    for c in &report.checks {
        let _ = writeln!(s, "  [{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    s
}

fn cmd_simulate(m: &ArgMatches, s: &Settings, quiet: bool) -> CliResult<()> {
    let bits = bits_or_reference(str_arg(m, "bits"))?;
    let template = DropletTemplate {
        length_mm: num_arg(m, "length_mm")?,
        ink: ink_by_name(str_arg(m, "ink").unwrap_or_default())?,
        concentration: num_arg(m, "concentration")?,
    };
    let schedule = encode(&bits, s.ook.symbol_period_s, &template)?;
    let sim = simulate(&schedule, &s.channel)?;
    let mut out = Output::new(
        str_arg(m, "out").unwrap_or_default(),
        "simulate",
        s,
        vec![
            ("bits", format_bits(&bits)),
            ("ink", template.ink.name.clone()),
            ("concentration", template.concentration.to_string()),
            ("length_mm", template.length_mm.to_string()),
        ],
    )?;
    out.artifact("ir.csv", write_ir_csv(&sim.ir))?;
    out.artifact("spectral.csv", write_spectral_csv(&sim.spectral))?;
    let mut frames = ir_frames(&sim.ir);
    frames.extend(spectral_frames(&sim.spectral));
    frames.sort_by_key(|f| f.timestamp_ms());
    out.artifact("frames.bin", encode_frames(&frames))?;
    let mut passages =
        String::from("droplet,ir_arrival_s,spectral_arrival_s,actual_speed_mm_s,actual_length_mm,duration_s\n");
    for p in &sim.passages {
        let _ = writeln!(
            passages,
            "{},{},{},{},{},{}",
            p.droplet_index,
            p.ir_arrival_s,
            p.spectral_arrival_s,
            p.actual_speed_mm_s,
            p.actual_length_mm,
            p.duration_s()
        );
    }
    out.artifact("passages.csv", passages)?;
    out.report.put("droplets", sim.passages.len());
    out.report.put("ir_samples", sim.ir.len());
    out.report.put("spectral_samples", sim.spectral.len());
    out.report.put("duration_s", sim.ir.end_time());
    out.finish(quiet)
}

/// IR trace from a binary frame stream; timestamps must be evenly spaced.
fn ir_from_frames(bytes: &[u8]) -> CliResult<(IrTrace, usize)> {
    let decoded = decode_frames(bytes);
    let ir: Vec<(u32, f64)> = decoded
        .readings
        .iter()
        .filter_map(|r| match r {
            SensorReading::Ir { timestamp_ms, volts } => Some((*timestamp_ms, *volts)),
            _ => None,
        })
        .collect();
    if ir.len() < 2 {
        return Err(Failure::Input("frame stream holds fewer than two IR samples".into()));
    }
    let step = ir[1].0.wrapping_sub(ir[0].0);
    if step == 0 || ir.windows(2).any(|w| w[1].0.wrapping_sub(w[0].0) != step) {
        return Err(Failure::Input("IR frame timestamps are not evenly spaced".into()));
    }
    let trace = IrTrace::new(1000.0 / step as f64, ir.iter().map(|r| r.1).collect(), ir[0].0 as f64 / 1000.0)?;
    Ok((trace, decoded.errors))
}

fn cmd_decode(m: &ArgMatches, s: &Settings, quiet: bool) -> CliResult<()> {
    let (trace, source, frame_errors) = match (str_arg(m, "ir"), str_arg(m, "frames")) {
        (Some(p), _) => (read_ir_csv(&read_text(p)?)?, p.to_string(), None),
        (None, Some(p)) => {
            let bytes = fs::read(p).map_err(|e| Failure::Input(format!("{p}: {e}")))?;
            let (t, errors) = ir_from_frames(&bytes)?;
            (t, p.to_string(), Some(errors))
        }
        (None, None) => return Err(Failure::Input("decode needs --ir or --frames".into())),
    };
    let expect = str_arg(m, "expect").map(parse_bits).transpose()?;
    let mut inputs = vec![("input", source)];
    if let Some(e) = &expect {
        inputs.push(("expect", format_bits(e)));
    }
    let rep = decode(&trace, &s.ook)?;
    let mut out = Output::new(str_arg(m, "out").unwrap_or_default(), "decode", s, inputs)?;
    out.report.put("bits", format_bits(&rep.bits));
    out.report.put("n_bits", rep.bits.len());
    out.report.put("offset_v", rep.offset_v);
    out.report.put("edges", rep.edges.len());
    if let Some(n) = frame_errors {
        out.report.put("frame_errors", n);
    }
    if let Some(e) = &expect {
        let ber = bit_error_rate(e, &rep.bits)?;
        out.report.put("ber", ber);
        out.report.check("matches_expected", ber == 0.0, format!("BER {ber}"));
    }
    let mut csv = String::from("symbol,start_s,end_s,duty,bit\n");
    for (k, ((a, b), (d, bit))) in rep.symbol_intervals.iter().zip(rep.duty_per_symbol.iter().zip(&rep.bits)).enumerate() {
        let _ = writeln!(csv, "{k},{a},{b},{d},{}", u8::from(*bit));
    }
    out.artifact("intervals.csv", csv)?;
    let mut edges = String::from("time_s,kind\n");
    for e in &rep.edges {
        let _ = writeln!(edges, "{},{:?}", e.time_s, e.kind);
    }
    out.artifact("edges.csv", edges)?;
    out.finish(quiet)
}

fn cmd_classify(m: &ArgMatches, s: &Settings, quiet: bool) -> CliResult<()> {
    let path = str_arg(m, "spectral").unwrap_or_default();
    let trace = read_spectral_csv(&read_text(path)?)?;
    let cutoff = if m.contains_id("margin_cutoff") { num_arg(m, "margin_cutoff")? } else { DEFAULT_MARGIN_CUTOFF };
    let depth = if m.contains_id("depth_threshold") { num_arg(m, "depth_threshold")? } else { DEFAULT_DEPTH_THRESHOLD };
    let lib = match str_arg(m, "library") {
        Some(p) => read_library(&read_text(p)?)?,
        None => calibrate_library(&standard_inks(), 0.25, &s.channel)?,
    };
    let baseline = dropletlink::spectral::baseline_profile(&trace, trace.t0_s(), trace.t0_s() + BASELINE_WINDOW_S)?;
    let calls = classify_droplets(&trace, &baseline, &lib, depth)?;
    let mut out = Output::new(
        str_arg(m, "out").unwrap_or_default(),
        "classify",
        s,
        vec![
            ("spectral", path.to_string()),
            ("library", str_arg(m, "library").unwrap_or("calibrated").to_string()),
            ("margin_cutoff", cutoff.to_string()),
            ("depth_threshold", depth.to_string()),
        ],
    )?;
    let mut csv = String::from("droplet,start_s,end_s,label,distance,margin,confident,signature\n");
    let mut low = 0;
    for (k, (w, sig, call)) in calls.iter().enumerate() {
        let confident = call.is_confident(cutoff);
        low += usize::from(!confident);
        let sig_text = sig.normalized.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(
            csv,
            "{k},{},{},{},{},{},{confident},{sig_text}",
            trace.time_at(w.start),
            trace.time_at(w.end - 1),
            call.label,
            call.distance,
            call.margin
        );
        out.report.put(format!("droplet.{k:03}.label"), call.label.clone());
    }
    out.report.put("droplets", calls.len());
    out.report.put("low_confidence", low);
    out.artifact("calls.csv", csv)?;
    out.artifact("library.txt", write_library(&lib))?;
    out.finish(quiet)
}

fn cmd_size(m: &ArgMatches, s: &Settings, quiet: bool) -> CliResult<()> {
    let ir_path = str_arg(m, "ir").unwrap_or_default();
    let spec_path = str_arg(m, "spectral").unwrap_or_default();
    let ir = read_ir_csv(&read_text(ir_path)?)?;
    let spectral = read_spectral_csv(&read_text(spec_path)?)?;
    let base = Baselines::estimate(&ir, &spectral, BASELINE_WINDOW_S)?;
    let sizes = estimate_size(&ir, &spectral, &s.channel, &base)?;
    let mut out = Output::new(
        str_arg(m, "out").unwrap_or_default(),
        "size",
        s,
        vec![("ir", ir_path.to_string()), ("spectral", spec_path.to_string())],
    )?;
    let mut csv = String::from("droplet,length_mm,speed_mm_s,t_drop_s,delta_t_s\n");
    for e in &sizes {
        let _ = writeln!(csv, "{},{},{},{},{}", e.droplet_index, e.length_mm, e.speed_mm_s, e.t_drop_s, e.delta_t_s);
    }
    let n = sizes.len() as f64;
    out.report.put("droplets", sizes.len());
    out.report.put("mean_length_mm", sizes.iter().map(|e| e.length_mm).sum::<f64>() / n);
    out.report.put("mean_speed_mm_s", sizes.iter().map(|e| e.speed_mm_s).sum::<f64>() / n);
    out.artifact("sizes.csv", csv)?;
    out.finish(quiet)
}

fn cmd_experiment(m: &ArgMatches, s: &Settings, quiet: bool) -> CliResult<()> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    let dir = PathBuf::from(str_arg(sub, "out").unwrap_or_default());
    let report = match name {
        "transmission" => {
            let bits = bits_or_reference(str_arg(sub, "bits"))?;
            run_transmission(&bits, &s.channel, &s.ook, num_arg(sub, "trials")?, Some(&dir))?
        }
        "dilution" => {
            let ink = ink_by_name(str_arg(sub, "ink").unwrap_or_default())?;
            let levels = parse_list("concentrations", str_arg(sub, "concentrations").unwrap_or_default())?;
            run_dilution(&ink, &levels, &s.channel, Some(&dir))?
        }
        "sizing" => {
            let lengths = parse_list("lengths", str_arg(sub, "lengths").unwrap_or_default())?;
            run_sizing(&lengths, num_arg(sub, "trials")?, &s.channel, Some(&dir))?
        }
        other => unreachable!("unknown experiment {other}"),
    };
    finish(&report, &dir, quiet)
}

fn run(top: &ArgMatches) -> CliResult<()> {
    let s = settings(top)?;
    let quiet = top.get_flag("quiet");
    match top.subcommand() {
        Some(("simulate", m)) => cmd_simulate(m, &s, quiet),
        Some(("decode", m)) => cmd_decode(m, &s, quiet),
        Some(("classify", m)) => cmd_classify(m, &s, quiet),
        Some(("size", m)) => cmd_size(m, &s, quiet),
        Some(("experiment", m)) => cmd_experiment(m, &s, quiet),
        _ => unreachable!("subcommand required"),
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_INPUT) } else { ExitCode::SUCCESS };
        }
    };
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(Failure::Assertion(path)) => {
            eprintln!("assertion failed, see {}", path.display());
            ExitCode::from(EXIT_ASSERTION)
        }
    }
}
