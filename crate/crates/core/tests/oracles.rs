//! Independent reference implementations checked against the library.

use dropletlink::channel::{simulate, standard_inks};
use dropletlink::ook::{decode, encode, offset_correct, DropletTemplate, OokParams};
use dropletlink::sizing::{estimate_size, Baselines};
use dropletlink::spectral::segment_droplets;
use dropletlink::types::{ChannelConfig, DropletEvent, DropletSchedule, IrTrace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn template() -> DropletTemplate {
    DropletTemplate { length_mm: 5.0, ink: standard_inks().remove(5), concentration: 0.25 }
}

/// Rising threshold crossings, interpolated, ignoring any crossing that
/// is not preceded by a falling one.
fn rising_crossings(trace: &IrTrace, thr: f64) -> Vec<f64> {
    let s = trace.samples();
    let mut out = Vec::new();
    let mut high = false;
    for i in 1..s.len() {
        if !high && s[i - 1] < thr && s[i] >= thr {
            let frac = (thr - s[i - 1]) / (s[i] - s[i - 1]);
            out.push(trace.time_at(i - 1) + frac * trace.dt());
            high = true;
        } else if high && s[i - 1] >= thr && s[i] < thr {
            high = false;
        }
    }
    out
}

fn duty(trace: &IrTrace, thr: f64, start: f64, end: f64) -> f64 {
    let i0 = ((start - trace.t0_s()) * trace.sample_rate_hz()).round() as i64;
    let i1 = ((end - trace.t0_s()) * trace.sample_rate_hz()).round() as i64;
    let above = (i0..i1)
        .filter(|i| *i >= 0 && (*i as usize) < trace.len() && trace.samples()[*i as usize] >= thr)
        .count();
    above as f64 / (i1 - i0) as f64
}

/// Enumerates every alignment in which each interval starts either one
/// period after its predecessor or at a rising edge inside its admissible
/// window, keeps the alignments that honour the resync rule (an available
/// edge must be taken, edges before the previous interval's end are
/// spent), and applies the duty rule to the survivor.
fn oracle_decode(trace: &IrTrace, p: &OokParams, n: usize) -> (Vec<bool>, Vec<f64>) {
    let (trace, _) = offset_correct(trace, p.baseline_window_s).unwrap();
    let edges = rising_crossings(&trace, p.threshold_v);
    let t = p.symbol_period_s;
    let g = p.early_guard_fraction * t;
    let first = edges.first().copied().unwrap_or(trace.t0_s());

    let mut admissible = Vec::new();
    for choice in 0..(1u32 << n) {
        let mut starts = Vec::with_capacity(n);
        let mut nominal = first;
        let mut spent_before = f64::NEG_INFINITY;
        let mut ok = true;
        for k in 0..n {
            let available = edges
                .iter()
                .copied()
                .find(|e| *e >= spent_before)
                .filter(|e| *e >= nominal - g && *e < nominal + t - g);
            let take_edge = choice >> k & 1 == 1;
            let start = match (take_edge, available) {
                (true, Some(e)) => e,
                (false, None) => nominal,
                _ => {
                    ok = false;
                    break;
                }
            };
            starts.push(start);
            nominal = start + t;
            spent_before = nominal - g;
        }
        if ok {
            admissible.push(starts);
        }
    }
    assert_eq!(admissible.len(), 1, "resync rule must pin down one alignment");
    let starts = admissible.pop().unwrap();
    let bits = starts.iter().map(|s| duty(&trace, p.threshold_v, *s, s + t) >= p.duty_fraction).collect();
    (bits, starts)
}

#[test]
fn decoder_matches_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    for case in 0..300u64 {
        let n = rng.random_range(1..=4);
        let mut bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        bits[0] = true;
        let cfg = ChannelConfig { rng_seed: case, ..Default::default() };
        let sim = simulate(&encode(&bits, 1.0, &template()).unwrap(), &cfg).unwrap();
        let params = OokParams { n_bits: Some(n), ..Default::default() };
        let report = decode(&sim.ir, &params).unwrap();
        let (oracle_bits, starts) = oracle_decode(&sim.ir, &params, n);
        assert_eq!(report.bits, oracle_bits, "case {case}");
        assert_eq!(report.bits, bits, "case {case}");
        for ((s, _), o) in report.symbol_intervals.iter().zip(&starts) {
            assert!((s - o).abs() < 1e-12, "case {case}: start {s} vs oracle {o}");
        }
    }
}

#[test]
fn estimated_speed_tracks_ground_truth() {
    let cfg = ChannelConfig { rng_seed: 100, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let events = (0..100)
        .map(|k| {
            DropletEvent::new(k as f64 * 2.0, rng.random_range(1.0..5.0), template().ink, 0.25).unwrap()
        })
        .collect();
    let sim = simulate(&DropletSchedule::new(events).unwrap(), &cfg).unwrap();
    let base = Baselines::estimate(&sim.ir, &sim.spectral, 0.4).unwrap();
    let est = estimate_size(&sim.ir, &sim.spectral, &cfg, &base).unwrap();
    assert_eq!(est.len(), 100);
    let quantum = 1.0 / cfg.spectral_sample_rate_hz;
    for (e, p) in est.iter().zip(&sim.passages) {
        let true_dt = cfg.sensor_separation_mm / p.actual_speed_mm_s;
        assert!((e.delta_t_s - true_dt).abs() <= quantum, "droplet {}: dt {} vs {}", p.droplet_index, e.delta_t_s, true_dt);
        let v = p.actual_speed_mm_s;
        let bound = cfg.sensor_separation_mm * quantum / (true_dt * (true_dt - quantum));
        assert!((e.speed_mm_s - v).abs() <= bound, "droplet {}: speed {} vs {v}", p.droplet_index, e.speed_mm_s);
    }
}

#[test]
fn notch_count_equals_one_bits() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..50u64 {
        let bits: Vec<bool> = (0..24).map(|_| rng.random_bool(0.5)).collect();
        let cfg = ChannelConfig { rng_seed: seed, ..Default::default() };
        let sim = simulate(&encode(&bits, 1.0, &template()).unwrap(), &cfg).unwrap();
        let windows = segment_droplets(&sim.spectral, &cfg.baseline_counts, 0.5).unwrap();
        assert_eq!(windows.len(), bits.iter().filter(|b| **b).count(), "seed {seed}");
    }
}
