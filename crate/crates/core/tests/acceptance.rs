//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Tolerances are fixed constants below.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use dropletlink::channel::{simulate, standard_inks, transmittance};
use dropletlink::harness::{
    bits_or_reference, calibrate_library, run_dilution, run_sizing, run_transmission,
    IR_INVARIANCE_TOLERANCE_V, SIZING_PRECISION_MM,
};
use dropletlink::io::{
    decode_frames, encode_frames, read_ir_csv, read_spectral_csv, write_ir_csv,
    write_spectral_csv, SensorFrame, SensorReading,
};
use dropletlink::ook::{bit_error_rate, decode, format_bits, DropletTemplate, OokParams};
use dropletlink::sizing::{estimate_size, fwhm_duration, Baselines};
use dropletlink::spectral::{
    classify_droplets, estimate_concentration, ColourSignature, DEFAULT_DEPTH_THRESHOLD,
    DEFAULT_MARGIN_CUTOFF,
};
use dropletlink::types::{
    ChannelConfig, DropletEvent, DropletSchedule, InkSpec, IrTrace, SpectralSample, SpectralTrace,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRANSMISSION_TRIALS: usize = 100;
const TRANSMISSION_BUDGET: Duration = Duration::from_secs(5);
const THRESHOLDS_V: [f64; 4] = [0.1, 0.2, 0.3, 0.4];
const DRIFT: f64 = 0.15;
const GRAND_MEAN_TOLERANCE_V: f64 = 0.02;
const SIZING_TRIALS: usize = 20;
const EQ1_DROPLETS: usize = 1000;
const FWHM_CASES: usize = 1000;
const DROPLETS_PER_INK: usize = 50;
const INVERSION_TOLERANCE: f64 = 1e-9;
const NOISY_INVERSION_TOLERANCE: f64 = 0.02;
const CODEC_CASES: usize = 1000;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn dilution_levels() -> Vec<f64> {
    (0..=5).map(|k| k as f64 * 0.05).collect()
}

fn c1_transmission() -> Outcome {
    let bits = bits_or_reference(None).unwrap();
    let start = Instant::now();
    let r = run_transmission(&bits, &ChannelConfig::default(), &OokParams::default(), TRANSMISSION_TRIALS, None)
        .unwrap();
    let elapsed = start.elapsed();
    let ber = r.number("ber").unwrap();
    let clean = r.number("error_free_trials").unwrap() as usize;
    outcome(
        ber == 0.0 && clean == TRANSMISSION_TRIALS && elapsed < TRANSMISSION_BUDGET,
        format!("BER {ber}, {clean}/{TRANSMISSION_TRIALS} error-free trials, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn c2_thresholds() -> Outcome {
    let bits = bits_or_reference(None).unwrap();
    let mut detail = String::new();
    let mut ok = true;
    for thr in THRESHOLDS_V {
        let params = OokParams { threshold_v: thr, ..Default::default() };
        let r = run_transmission(&bits, &ChannelConfig::default(), &params, TRANSMISSION_TRIALS, None).unwrap();
        let ber = r.number("ber").unwrap();
        ok &= ber == 0.0;
        let _ = write!(detail, "{thr} V: BER {ber}; ");
    }
    outcome(ok, detail.trim_end_matches("; "))
}

/// Droplet k is injected at k * (1 + DRIFT) s while the receiver assumes a
/// 1 s symbol period, so timing error accumulates across the sequence.
fn c3_resync() -> Outcome {
    let bits = bits_or_reference(None).unwrap();
    let template = DropletTemplate {
        length_mm: 5.0,
        ink: standard_inks().remove(5),
        concentration: 0.25,
    };
    let events = bits
        .iter()
        .enumerate()
        .filter(|(_, b)| **b)
        .map(|(k, _)| {
            DropletEvent::new(k as f64 * (1.0 + DRIFT), template.length_mm, template.ink.clone(), template.concentration)
                .unwrap()
        })
        .collect();
    let cfg = ChannelConfig { speed_jitter_frac: 0.0, ..Default::default() };
    let sim = simulate(&DropletSchedule::new(events).unwrap(), &cfg).unwrap();
    let params = OokParams { n_bits: Some(bits.len()), ..Default::default() };
    let resync = decode(&sim.ir, &params).unwrap();
    let frozen = decode(&sim.ir, &OokParams { resync: false, ..params }).unwrap();
    let ber_resync = bit_error_rate(&bits, &resync.bits).unwrap();
    let ber_frozen = bit_error_rate(&bits, &frozen.bits).unwrap();
    outcome(
        ber_resync == 0.0 && ber_frozen > 0.0,
        format!(
            "resync BER {ber_resync} ({}), frozen BER {ber_frozen} ({})",
            format_bits(&resync.bits),
            format_bits(&frozen.bits)
        ),
    )
}

fn c4_ir_invariance() -> Outcome {
    let cfg = ChannelConfig::default();
    let blue = standard_inks().remove(1);
    let r = run_dilution(&blue, &dilution_levels(), &cfg, None).unwrap();
    let dev = r.number("ir_max_deviation_v").unwrap();
    let grand = r.number("ir_grand_mean_v").unwrap();
    outcome(
        dev <= IR_INVARIANCE_TOLERANCE_V && (grand - cfg.ir_amplitude_v).abs() <= GRAND_MEAN_TOLERANCE_V,
        format!(
            "max deviation {dev:.4} V (limit {IR_INVARIANCE_TOLERANCE_V}), grand mean {grand:.4} V (target {} +/- {GRAND_MEAN_TOLERANCE_V})",
            cfg.ir_amplitude_v
        ),
    )
}

fn c5_sizing() -> Outcome {
    let lengths = [1.0, 2.0, 3.0, 4.0, 5.0];
    let cfg = ChannelConfig::default();
    let noisy = run_sizing(&lengths, SIZING_TRIALS, &cfg, None).unwrap();
    let dev = noisy.number("max_length_deviation_mm").unwrap();

    // Both leading edges and both FWHM crossings are interpolated between
    // spectral samples; two sample quanta of travel bound the combined error.
    let clean_cfg = ChannelConfig { speed_jitter_frac: 0.0, noise_sigma_v: 0.0, spectral_noise_rel: 0.0, ..cfg };
    let bound = 2.0 * clean_cfg.v_chan_mm_s / clean_cfg.spectral_sample_rate_hz;
    let clean = run_sizing(&lengths, 1, &clean_cfg, None).unwrap();
    let clean_dev = clean.number("max_length_deviation_mm").unwrap();
    outcome(
        dev <= SIZING_PRECISION_MM && clean_dev <= bound,
        format!(
            "noisy max deviation {dev:.4} mm (limit {SIZING_PRECISION_MM}), noiseless {clean_dev:.4} mm (quantization bound {bound:.4})"
        ),
    )
}

fn c6_eq1_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inks = standard_inks();
    let mut count = 0;
    let mut violations = 0;
    let mut run = 0u64;
    while count < EQ1_DROPLETS {
        let n = 10.min(EQ1_DROPLETS - count);
        let speed = rng.random_range(5.0..15.0);
        let events = (0..n)
            .map(|k| {
                let ink = inks[rng.random_range(0..inks.len())].clone();
                DropletEvent::new(k as f64 * 2.0, rng.random_range(1.0..5.0), ink, rng.random_range(0.15..0.3))
                    .unwrap()
            })
            .collect();
        let cfg = ChannelConfig { v_chan_mm_s: speed, rng_seed: run, ..Default::default() };
        run += 1;
        let sim = simulate(&DropletSchedule::new(events).unwrap(), &cfg).unwrap();
        let base = Baselines::estimate(&sim.ir, &sim.spectral, 0.4).unwrap();
        let Ok(est) = estimate_size(&sim.ir, &sim.spectral, &cfg, &base) else {
            return outcome(false, format!("run {run}: estimation failed"));
        };
        for e in &est {
            if e.length_mm != e.speed_mm_s * e.t_drop_s {
                violations += 1;
            }
        }
        count += est.len();
    }
    outcome(violations == 0, format!("{violations} violations over {count} estimates"))
}

fn c7_fwhm() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rate = 20.0;
    let dt = 1.0 / rate;
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for case in 0..FWHM_CASES {
        let lead = rng.random_range(1.0..2.0);
        let (signal, truth): (Vec<f64>, f64) = if case % 2 == 0 {
            let w = rng.random_range(2.0 * dt..3.0);
            let s = (0..120).map(|i| if (lead..lead + w).contains(&(i as f64 * dt)) { 1.0 } else { 0.0 }).collect();
            (s, w)
        } else {
            let base = rng.random_range(4.0 * dt..3.0);
            let centre = lead + base / 2.0;
            let s = (0..120).map(|i| (1.0 - (i as f64 * dt - centre).abs() / (base / 2.0)).max(0.0)).collect();
            (s, base / 2.0)
        };
        let err = match fwhm_duration(&signal, rate) {
            Ok(f) => (f - truth).abs(),
            Err(_) => f64::INFINITY,
        };
        worst = worst.max(err);
        if err > dt {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("{failures}/{FWHM_CASES} beyond one sample period, worst error {worst:.4} s"))
}

fn c8_classification() -> Outcome {
    let inks = standard_inks();
    let cfg = ChannelConfig::default();
    let lib = calibrate_library(&inks, 0.25, &cfg).unwrap();
    let mut correct = 0;
    let mut total = 0;
    for (i, ink) in inks.iter().enumerate() {
        // 5 runs of 10 droplets per ink
        for run in 0..5u64 {
            let events = (0..DROPLETS_PER_INK / 5)
                .map(|k| DropletEvent::new(k as f64 * 2.0, 5.0, ink.clone(), 0.25).unwrap())
                .collect();
            let run_cfg = ChannelConfig { rng_seed: 1000 + 10 * i as u64 + run, ..cfg.clone() };
            let sim = simulate(&DropletSchedule::new(events).unwrap(), &run_cfg).unwrap();
            let base = Baselines::estimate(&sim.ir, &sim.spectral, 0.4).unwrap();
            let calls = classify_droplets(&sim.spectral, &base.spectral, &lib, DEFAULT_DEPTH_THRESHOLD).unwrap();
            total += DROPLETS_PER_INK / 5;
            correct += calls.iter().filter(|(_, _, c)| c.label == ink.name).count();
        }
    }

    // A near-duplicate of yellow, 3 % stronger in every band.
    let yellow = inks.iter().find(|i| i.name == "yellow").unwrap();
    let twin = InkSpec::new("yellow_twin", yellow.absorption_coeffs.map(|a| a * 1.03)).unwrap();
    let pair_lib = calibrate_library(&[yellow.clone(), twin], 0.25, &cfg).unwrap();
    let events = (0..10).map(|k| DropletEvent::new(k as f64 * 2.0, 5.0, yellow.clone(), 0.25).unwrap()).collect();
    let sim = simulate(&DropletSchedule::new(events).unwrap(), &ChannelConfig { rng_seed: 2000, ..cfg }).unwrap();
    let base = Baselines::estimate(&sim.ir, &sim.spectral, 0.4).unwrap();
    let pair_calls = classify_droplets(&sim.spectral, &base.spectral, &pair_lib, DEFAULT_DEPTH_THRESHOLD).unwrap();
    let flagged = pair_calls.iter().filter(|(_, _, c)| !c.is_confident(DEFAULT_MARGIN_CUTOFF)).count();
    let widest = pair_calls.iter().map(|(_, _, c)| c.margin).fold(0.0, f64::max);
    outcome(
        correct == total && total == inks.len() * DROPLETS_PER_INK && flagged == pair_calls.len() && !pair_calls.is_empty(),
        format!(
            "{correct}/{total} correct; near-duplicate pair: {flagged}/{} calls below margin cutoff {DEFAULT_MARGIN_CUTOFF} (widest margin {widest:.4})",
            pair_calls.len()
        ),
    )
}

fn c9_concentration() -> Outcome {
    let cfg = ChannelConfig::default();
    let mut worst_clean: f64 = 0.0;
    for ink in standard_inks() {
        for c in dilution_levels() {
            let sig = ColourSignature { normalized: transmittance(&ink, c, cfg.path_length_mm) };
            let est = estimate_concentration(&sig, &ink, cfg.path_length_mm).unwrap();
            worst_clean = worst_clean.max((est - c).abs());
        }
    }
    let blue = standard_inks().remove(1);
    let r = run_dilution(&blue, &dilution_levels(), &cfg, None).unwrap();
    let noisy = r.number("estimate_max_abs_error").unwrap();
    let monotone = r.metric("estimates_monotone").map(|m| m.to_string()) == Some("true".into());
    outcome(
        worst_clean <= INVERSION_TOLERANCE && noisy <= NOISY_INVERSION_TOLERANCE && monotone,
        format!("noiseless worst error {worst_clean:e}, noisy max error {noisy:.4} (limit {NOISY_INVERSION_TOLERANCE}), monotone {monotone}"),
    )
}

fn random_frames(rng: &mut ChaCha8Rng, n: usize) -> Vec<SensorFrame> {
    (0..n)
        .map(|_| {
            let timestamp_ms = rng.random();
            if rng.random_bool(0.5) {
                SensorFrame::Ir { timestamp_ms, adc: rng.random() }
            } else {
                SensorFrame::Spectral { timestamp_ms, counts: std::array::from_fn(|_| rng.random()) }
            }
        })
        .collect()
}

fn c10_codecs() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let rates = [1.0, 10.0, 20.0, 50.0, 100.0, 250.0];
    let mut failures = Vec::new();
    for case in 0..CODEC_CASES {
        let n = rng.random_range(1..60);
        // a single row carries no time step; the reader assumes the default rate
        let rate = if n == 1 { 100.0 } else { rates[rng.random_range(0..rates.len())] };
        let t0 = rng.random_range(0..1000) as f64 / 100.0;
        let ir = IrTrace::new(rate, (0..n).map(|_| rng.random_range(0.0..=5.0)).collect(), t0).unwrap();
        if read_ir_csv(&write_ir_csv(&ir)).as_ref() != Ok(&ir) {
            failures.push(format!("ir csv case {case}"));
        }
        let spec_rate = if n == 1 { 20.0 } else { rate.min(20.0) };
        let samples = (0..n)
            .map(|_| SpectralSample::new(std::array::from_fn(|_| rng.random_range(0.0..65535.0))).unwrap())
            .collect();
        let spec = SpectralTrace::new(spec_rate, samples, t0).unwrap();
        if read_spectral_csv(&write_spectral_csv(&spec)).as_ref() != Ok(&spec) {
            failures.push(format!("spectral csv case {case}"));
        }

        let n_frames = rng.random_range(2..30);
        let frames = random_frames(&mut rng, n_frames);
        let bytes = encode_frames(&frames);
        let decoded = decode_frames(&bytes);
        let expected: Vec<SensorReading> = frames.iter().copied().map(SensorReading::from).collect();
        if decoded.errors != 0 || decoded.readings != expected {
            failures.push(format!("frame round trip case {case}"));
        }

        let mut corrupt = bytes.clone();
        let pos = rng.random_range(0..corrupt.len());
        corrupt[pos] ^= rng.random_range(1..=255u8);
        let hit = frames.iter().scan(0, |end, f| {
            *end += f.encode().len();
            Some(*end)
        });
        let victim = hit.take_while(|end| *end <= pos).count();
        let mut survivors = expected.clone();
        survivors.remove(victim);
        let got = decode_frames(&corrupt);
        if got.errors != 1 || got.readings != survivors {
            failures.push(format!("corruption case {case} (byte {pos}, frame {victim})"));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{CODEC_CASES} cases each for IR CSV, spectral CSV, frames and single-byte corruption; {} failures{}",
            failures.len(),
            failures.first().map(|f| format!(", first: {f}")).unwrap_or_default()
        ),
    )
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn c11_determinism() -> Outcome {
    let bits = bits_or_reference(None).unwrap();
    let cfg = ChannelConfig { rng_seed: 42, ..Default::default() };
    let blue = standard_inks().remove(1);
    let run_all = |root: &Path| {
        let t = run_transmission(&bits, &cfg, &OokParams::default(), 8, Some(&root.join("t"))).unwrap();
        t.write(&root.join("t")).unwrap();
        let d = run_dilution(&blue, &[0.0, 0.1, 0.25], &cfg, Some(&root.join("d"))).unwrap();
        d.write(&root.join("d")).unwrap();
        let s = run_sizing(&[2.0, 4.0], 3, &cfg, Some(&root.join("s"))).unwrap();
        s.write(&root.join("s")).unwrap();
        ["t", "d", "s"].iter().flat_map(|d| dir_bytes(&root.join(d))).collect::<Vec<_>>()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_all(a.path());
    let second = run_all(b.path());
    let mismatched: Vec<_> =
        first.iter().zip(&second).filter(|(x, y)| x != y).map(|(x, _)| x.0.clone()).collect();
    outcome(
        first.len() == second.len() && mismatched.is_empty(),
        format!("{} files compared byte-for-byte, {} differ {:?}", first.len(), mismatched.len(), mismatched),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("transmission_reproduction", c1_transmission),
        ("threshold_robustness", c2_thresholds),
        ("resynchronization_necessity", c3_resync),
        ("ir_colour_invariance", c4_ir_invariance),
        ("sizing_precision", c5_sizing),
        ("length_speed_identity", c6_eq1_identity),
        ("fwhm_oracle", c7_fwhm),
        ("colour_classification", c8_classification),
        ("concentration_inversion", c9_concentration),
        ("codec_round_trips", c10_codecs),
        ("determinism", c11_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.passed {
            failed += 1;
        }
        println!("{} {:>2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
