use dropletlink::channel::{simulate, standard_inks, transmittance};
use dropletlink::io::{
    decode_frames, encode_frames, read_ir_csv, read_library, write_ir_csv, write_library,
    SensorFrame, SensorReading,
};
use dropletlink::ook::{decode, detect_edges, encode, DropletTemplate, EdgeKind, OokParams};
use dropletlink::sizing::{estimate_size, fwhm_duration, Baselines};
use dropletlink::spectral::{
    classify, estimate_concentration, normalize, ColourSignature, ReferenceLibrary,
};
use dropletlink::types::{ChannelConfig, InkSpec, IrTrace, SpectralSample};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

fn config(cases: u32) -> Config {
    Config { cases, rng_seed: RngSeed::Fixed(0x0D20_9137), failure_persistence: None, ..Config::default() }
}

fn red_template() -> DropletTemplate {
    DropletTemplate { length_mm: 5.0, ink: standard_inks().remove(5), concentration: 0.25 }
}

fn round_trip(bits: &[bool], cfg: &ChannelConfig, params: &OokParams) -> Vec<bool> {
    let schedule = encode(bits, params.symbol_period_s, &red_template()).unwrap();
    let sim = simulate(&schedule, cfg).unwrap();
    decode(&sim.ir, &OokParams { n_bits: Some(bits.len()), ..params.clone() }).unwrap().bits
}

/// Bit strings that open with a `1`. Symbol 0 is anchored at the first rising
/// edge, so leading zeros carry no timing reference and cannot be recovered.
fn framed_bits(max_len: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), 0..max_len).prop_map(|tail| {
        let mut bits = vec![true];
        bits.extend(tail);
        bits
    })
}

fn frame() -> impl Strategy<Value = SensorFrame> {
    prop_oneof![
        (any::<u32>(), any::<u16>()).prop_map(|(timestamp_ms, adc)| SensorFrame::Ir { timestamp_ms, adc }),
        (any::<u32>(), any::<[u16; 6]>())
            .prop_map(|(timestamp_ms, counts)| SensorFrame::Spectral { timestamp_ms, counts }),
    ]
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn ook_round_trip_noisy(bits in framed_bits(64), seed in any::<u64>()) {
        let cfg = ChannelConfig { rng_seed: seed, ..Default::default() };
        prop_assert_eq!(round_trip(&bits, &cfg, &OokParams::default()), bits);
    }

    #[test]
    fn ook_round_trip_clean_any_threshold(
        bits in framed_bits(32),
        threshold_v in 0.1f64..=0.4,
    ) {
        let cfg = ChannelConfig { noise_sigma_v: 0.0, speed_jitter_frac: 0.0, ..Default::default() };
        let params = OokParams { threshold_v, ..Default::default() };
        prop_assert_eq!(round_trip(&bits, &cfg, &params), bits);
    }

    #[test]
    fn edges_alternate(samples in prop::collection::vec(0.0f64..1.0, 2..300), thr in 0.05f64..0.95) {
        let trace = IrTrace::new(100.0, samples, 0.0).unwrap();
        let edges = detect_edges(&trace, thr);
        for (i, e) in edges.iter().enumerate() {
            let expected = if i % 2 == 0 { EdgeKind::Rising } else { EdgeKind::Falling };
            prop_assert_eq!(e.kind, expected);
        }
        prop_assert!(edges.windows(2).all(|w| w[0].time_s < w[1].time_s));
    }

    #[test]
    fn normalize_is_scale_invariant(
        sample in prop::array::uniform6(0.0f64..1e4),
        baseline in prop::array::uniform6(1.0f64..1e4),
        k in 1e-3f64..1e3,
    ) {
        let a = normalize(&SpectralSample::new(sample).unwrap(), &baseline).unwrap();
        let b = normalize(&SpectralSample::new(sample.map(|v| v * k)).unwrap(), &baseline.map(|v| v * k)).unwrap();
        for (x, y) in a.normalized.iter().zip(&b.normalized) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn concentration_inverts_transmittance(ink_idx in 0usize..6, c in 0.0f64..=1.0, path in 0.1f64..3.0) {
        let ink = &standard_inks()[ink_idx];
        let sig = ColourSignature { normalized: transmittance(ink, c, path) };
        prop_assert!((estimate_concentration(&sig, ink, path).unwrap() - c).abs() <= 1e-9);
    }

    #[test]
    fn transmittance_in_unit_interval(coeffs in prop::array::uniform6(0.0f64..50.0), c in 0.0f64..=1.0) {
        let ink = InkSpec::new("x", coeffs).unwrap();
        prop_assert!(transmittance(&ink, c, 1.0).iter().all(|t| *t > 0.0 && *t <= 1.0));
    }

    #[test]
    fn classify_duplicate_entries_only_change_tie_break(sig in prop::array::uniform6(0.0f64..1.2)) {
        let base: Vec<(String, ColourSignature)> = standard_inks()
            .iter()
            .map(|i| (i.name.clone(), ColourSignature { normalized: transmittance(i, 0.25, 1.0) }))
            .collect();
        let mut doubled = base.clone();
        doubled.extend(base.iter().map(|(l, s)| (format!("{l}_copy"), *s)));
        let sig = ColourSignature { normalized: sig };
        let a = classify(&sig, &ReferenceLibrary::new(base).unwrap()).unwrap();
        let b = classify(&sig, &ReferenceLibrary::new(doubled).unwrap()).unwrap();
        prop_assert_eq!(&a.label, &b.label);
        prop_assert_eq!(a.distance, b.distance);
        prop_assert_eq!(b.margin, 0.0);
    }

    #[test]
    fn rectangle_fwhm_within_one_sample(width in 2usize..200, lead in 1usize..50, rate in 5.0f64..200.0) {
        let mut s = vec![0.0; lead + width + 10];
        s[lead..lead + width].iter_mut().for_each(|v| *v = 1.0);
        let f = fwhm_duration(&s, rate).unwrap();
        prop_assert!((f - width as f64 / rate).abs() <= 1.0 / rate);
    }

    #[test]
    fn frames_round_trip(frames in prop::collection::vec(frame(), 0..40)) {
        let decoded = decode_frames(&encode_frames(&frames));
        prop_assert_eq!(decoded.errors, 0);
        let expected: Vec<SensorReading> = frames.into_iter().map(SensorReading::from).collect();
        prop_assert_eq!(decoded.readings, expected);
    }

    #[test]
    fn frame_decoding_is_prefix_robust(
        garbage in prop::collection::vec(any::<u8>(), 0..64),
        frames in prop::collection::vec(frame(), 1..20),
    ) {
        let mut bytes = garbage;
        bytes.extend(encode_frames(&frames));
        let got = decode_frames(&bytes).readings;
        let expected: Vec<SensorReading> = frames.into_iter().map(SensorReading::from).collect();
        prop_assert!(got.len() >= expected.len());
        prop_assert_eq!(&got[got.len() - expected.len()..], &expected[..]);
    }

    #[test]
    fn ir_csv_round_trip(samples in prop::collection::vec(0.0f64..=5.0, 2..200), t0 in -5.0f64..5.0) {
        let trace = IrTrace::new(100.0, samples, t0).unwrap();
        prop_assert_eq!(read_ir_csv(&write_ir_csv(&trace)).unwrap(), trace);
    }

    #[test]
    fn library_round_trip(values in prop::collection::vec(prop::array::uniform6(0.0f64..2.0), 1..8)) {
        let entries = values
            .into_iter()
            .enumerate()
            .map(|(i, v)| (format!("ink{i}"), ColourSignature { normalized: v }))
            .collect();
        let lib = ReferenceLibrary::new(entries).unwrap();
        prop_assert_eq!(read_library(&write_library(&lib)).unwrap(), lib);
    }
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn length_equals_speed_times_duration(
        length in 1.0f64..5.0,
        speed in 5.0f64..20.0,
        seed in any::<u64>(),
    ) {
        let cfg = ChannelConfig { v_chan_mm_s: speed, rng_seed: seed, ..Default::default() };
        let template = DropletTemplate { length_mm: length, ..red_template() };
        let sim = simulate(&encode(&[true, true], 2.0, &template).unwrap(), &cfg).unwrap();
        let base = Baselines::estimate(&sim.ir, &sim.spectral, 0.4).unwrap();
        for e in estimate_size(&sim.ir, &sim.spectral, &cfg, &base).unwrap() {
            prop_assert_eq!(e.length_mm, e.speed_mm_s * e.t_drop_s);
        }
    }
}
