use std::collections::BTreeMap;
use std::f64::consts::{E, PI};

use blendsonic::dsp::*;
use blendsonic::sources::AudioBlock;
use proptest::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};

const SR: f64 = 48_000.0;
const BLOCK: usize = 256;

fn graph(text: &str) -> DspGraph {
    let spec: GraphSpec = toml::from_str(text).unwrap();
    DspGraph::build(&spec, SR, BLOCK).unwrap()
}

fn run(g: &mut DspGraph, input: &[f32]) -> Vec<f32> {
    let mut out = Vec::with_capacity(input.len());
    for chunk in input.chunks(BLOCK) {
        g.process_into(&[chunk]).unwrap();
        out.extend_from_slice(g.output(0));
    }
    out
}

fn noise(n: usize, seed: u64) -> Vec<f32> {
    let mut x = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    (0..n)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            ((x >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
        })
        .collect()
}

/// |H(e^jw)| from the coefficients, by direct complex evaluation.
fn magnitude_db(c: &BiquadCoeffs, f: f64) -> f64 {
    let w = 2.0 * PI * f / SR;
    let z1 = Complex::new(w.cos(), -w.sin());
    let z2 = z1 * z1;
    let h = (c.b0 + c.b1 * z1 + c.b2 * z2) / (1.0 + c.a1 * z1 + c.a2 * z2);
    20.0 * h.norm().log10()
}

#[test]
fn lowpass_minus_3db_at_cutoff() {
    let c = biquad_coeffs(FilterKind::Lowpass, 1000.0, 0.707, SR).unwrap();
    let expected = -3.011611724061986;
    assert!((magnitude_db(&c, 1000.0) - expected).abs() < 1e-9);
    assert!((magnitude_db(&c, 1000.0) + 3.0).abs() < 0.1);
    let frozen = [
        0.0039160766836994635,
        0.007832153367398927,
        0.0039160766836994635,
        -1.8153179156742147,
        0.8309822224090126,
    ];
    for (a, b) in [c.b0, c.b1, c.b2, c.a1, c.a2].iter().zip(frozen) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn lowpass_measured_response_at_cutoff() {
    let mut f = Biquad::new(biquad_coeffs(FilterKind::Lowpass, 1000.0, 0.707, SR).unwrap());
    let mut peak = 0.0f64;
    for n in 0..48_000 {
        let y = f.tick((2.0 * PI * 1000.0 * n as f64 / SR).sin());
        if n > 24_000 {
            peak = peak.max(y.abs());
        }
    }
    assert!((20.0 * peak.log10() + 3.0116).abs() < 0.1);
}

#[test]
fn dc_gains() {
    let lp = biquad_coeffs(FilterKind::Lowpass, 23_999.0, 0.707, SR).unwrap();
    assert!((lp.dc_gain() - 1.0).abs() < 1e-9);
    let lp = biquad_coeffs(FilterKind::Lowpass, 500.0, 2.0, SR).unwrap();
    assert!((lp.dc_gain() - 1.0).abs() < 1e-9);
    let hp = biquad_coeffs(FilterKind::Highpass, 500.0, 0.707, SR).unwrap();
    assert!(hp.dc_gain().abs() < 1e-9);
}

#[test]
fn coefficient_range_errors() {
    for (f, q) in [(0.0, 1.0), (24_000.0, 1.0), (30_000.0, 1.0), (1000.0, 0.0), (1000.0, -1.0)] {
        assert!(matches!(
            biquad_coeffs(FilterKind::Lowpass, f, q, SR),
            Err(DspError::OutOfRange { .. })
        ));
    }
}

#[test]
fn unity_gain_is_bit_exact() {
    let mut g = graph(
        r#"inputs = ["in"]
outputs = ["g"]
[[nodes]]
id = "g"
kind = "gain"
inputs = ["in"]
params = { gain_db = 0.0 }"#,
    );
    let x = noise(BLOCK * 8, 3);
    assert_eq!(run(&mut g, &x), x);
}

#[test]
fn parallel_half_gains_sum_to_input() {
    let mut g = graph(
        r#"inputs = ["in"]
outputs = ["mix"]
[[nodes]]
id = "a"
kind = "gain"
inputs = ["in"]
params = { gain_db = -6.0206 }
[[nodes]]
id = "b"
kind = "gain"
inputs = ["in"]
params = { gain_db = -6.0206 }
[[nodes]]
id = "mix"
kind = "mixer"
inputs = ["a", "b"]"#,
    );
    let x = noise(BLOCK * 4, 5);
    for (y, x) in run(&mut g, &x).iter().zip(&x) {
        assert!((y - x).abs() < 1e-4);
    }
}

const ALL_KINDS: &str = r#"inputs = ["in"]
outputs = ["out"]
[[nodes]]
id = "g"
kind = "gain"
inputs = ["in"]
params = { gain_db = -3.0 }
[[nodes]]
id = "f"
kind = "biquad"
filter = "bandpass"
inputs = ["g"]
params = { cutoff_hz = 800.0, q = 2.0 }
[[nodes]]
id = "rm"
kind = "ringmod"
inputs = ["f"]
params = { freq_hz = 40.0, depth = 0.5 }
[[nodes]]
id = "ps"
kind = "pitchshift"
inputs = ["rm"]
params = { ratio = 0.8 }
[[nodes]]
id = "d"
kind = "delay"
inputs = ["in"]
params = { time_ms = 3.0, max_ms = 10.0 }
[[nodes]]
id = "out"
kind = "mixer"
inputs = ["ps", "d"]"#;

#[test]
fn silence_in_silence_out() {
    let mut g = graph(ALL_KINDS);
    let zeros = vec![0.0f32; BLOCK * 20];
    assert!(run(&mut g, &zeros).iter().all(|&s| s == 0.0));
}

#[test]
fn delay_emits_tail_then_silence() {
    let mut g = graph(
        r#"inputs = ["in"]
outputs = ["d"]
[[nodes]]
id = "d"
kind = "delay"
inputs = ["in"]
params = { time_ms = 2.0, max_ms = 10.0 }"#,
    );
    let mut x = vec![0.0f32; BLOCK * 2];
    x[..BLOCK].copy_from_slice(&noise(BLOCK, 9));
    let y = run(&mut g, &x);
    assert_eq!(&y[96..BLOCK + 96], &x[..BLOCK]);
    assert!(y[BLOCK + 96..].iter().all(|&s| s == 0.0));
}

#[test]
fn build_errors() {
    let cyclic: GraphSpec = toml::from_str(
        r#"inputs = ["in"]
outputs = ["a"]
[[nodes]]
id = "a"
kind = "gain"
inputs = ["b"]
[[nodes]]
id = "b"
kind = "gain"
inputs = ["a"]"#,
    )
    .unwrap();
    assert!(matches!(DspGraph::build(&cyclic, SR, BLOCK), Err(DspError::CycleDetected(_))));
    let mut g = graph(ALL_KINDS);
    assert!(matches!(g.process_block(&BTreeMap::new()), Err(DspError::MissingInput(_))));
    assert!(matches!(g.set_param("nope.gain_db", 0.0), Err(DspError::UnknownAddress(_))));
    assert!(matches!(g.set_param("g.nope", 0.0), Err(DspError::UnknownAddress(_))));
    assert!(matches!(g.set_param("ps.ratio", 5.0), Err(DspError::OutOfRange { .. })));
    assert_eq!(g.set_param("ps.ratio", 2.0).unwrap().value, 2.0);
}

#[test]
fn process_block_named_io() {
    let mut g = graph(ALL_KINDS);
    let inputs = BTreeMap::from([("in".to_string(), AudioBlock::mono(noise(BLOCK, 1), SR as u32))]);
    let out = g.process_block(&inputs).unwrap();
    assert_eq!(out["out"].frames(), BLOCK);
}

#[test]
fn evaluation_independent_of_insertion_order() {
    let spec: GraphSpec = toml::from_str(ALL_KINDS).unwrap();
    let mut reversed = spec.clone();
    reversed.nodes.reverse();
    let mut a = DspGraph::build(&spec, SR, BLOCK).unwrap();
    let mut b = DspGraph::build(&reversed, SR, BLOCK).unwrap();
    assert_eq!(a.evaluation_order(), b.evaluation_order());
    let x = noise(BLOCK * 10, 4);
    assert_eq!(run(&mut a, &x), run(&mut b, &x));
}

#[test]
fn smoothing_examples() {
    let mut p = SmoothedParam::new(0.0, 0.0, SR);
    p.set_target(1.0);
    assert_eq!(p.current(), 1.0);

    let mut p = SmoothedParam::new(0.0, 10.0, SR);
    p.set_target(1.0);
    let mut gap = 1.0;
    for _ in 0..480 {
        let g = (1.0 - p.next()).abs();
        assert!(g < gap);
        gap = g;
    }
    assert!(gap <= (-1.0f64).exp() + 1e-6, "{gap}");
    assert!(gap >= 1.0 / E - 1e-3);
    assert_eq!(smoothing_coefficient(10.0, SR), (-1.0f64 / 480.0).exp());
}

#[test]
fn pitch_ratio_one_is_pure_delay() {
    let x = noise(8192, 2);
    let mut ps = PitchShifter::new();
    let y = pitchshift_block(&x, 1.0, &mut ps).unwrap();
    let lag = PitchShifter::latency();
    assert_eq!(&y[lag..], &x[..x.len() - lag]);
    assert!(y[..lag].iter().all(|&s| s == 0.0));
    assert!(pitchshift_block(&x, 4.5, &mut ps).is_err());
    assert!(pitchshift_block(&x, 0.2, &mut ps).is_err());
}

fn dominant_bin(freq: f64, ratio: f64) -> (usize, f64) {
    let n = 4096;
    let x: Vec<f32> = (0..48_000 + n).map(|i| (2.0 * PI * freq * i as f64 / SR).sin() as f32).collect();
    let mut ps = PitchShifter::new();
    let y = pitchshift_block(&x, ratio, &mut ps).unwrap();
    let mut buf: Vec<Complex<f64>> = y[48_000..]
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
            Complex::new(s as f64 * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let peak = (1..n / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
    (peak, freq * ratio * n as f64 / SR)
}

#[test]
fn pitch_ratio_two_doubles_frequency() {
    let (peak, bin) = dominant_bin(220.0, 2.0);
    assert!((peak as f64 - bin).abs() <= 1.0, "peak bin {peak}, expected {bin}");
}

#[test]
fn pitch_shift_tracks_other_tones() {
    for (f, r) in [(110.0, 2.0), (165.0, 2.0), (330.0, 2.0), (523.0, 2.0), (440.0, 0.5), (300.0, 1.5)] {
        let (peak, bin) = dominant_bin(f, r);
        assert!((peak as f64 - bin).abs() <= 1.0, "{f} Hz x {r}: peak bin {peak}, expected {bin}");
    }
}

#[test]
fn pitch_silence() {
    let mut ps = PitchShifter::new();
    assert!(pitchshift_block(&vec![0.0; 5000], 1.7, &mut ps).unwrap().iter().all(|&s| s == 0.0));
}

/// First sample index after which the impulse response provably stays below
/// `eps`: h[n] = A1 p1^n + A2 p2^n for n >= 1, so |h[n]| <= (|A1| + |A2|) r^n.
fn decay_bound(c: &BiquadCoeffs, eps: f64) -> Option<f64> {
    let disc = Complex::new(c.a1 * c.a1 - 4.0 * c.a2, 0.0).sqrt();
    let p1 = (-c.a1 + disc) / 2.0;
    let p2 = (-c.a1 - disc) / 2.0;
    if (p1 - p2).norm() < 1e-9 {
        return None;
    }
    let num = |p: Complex<f64>| c.b0 + c.b1 / p + c.b2 / (p * p);
    let a1 = num(p1) / (1.0 - p2 / p1);
    let a2 = num(p2) / (1.0 - p1 / p2);
    let r = p1.norm().max(p2.norm());
    let k = a1.norm() + a2.norm();
    Some(if k <= eps { 1.0 } else { ((eps / k).ln() / r.ln()).max(1.0) })
}

fn simulated_tail(c: BiquadCoeffs, from: usize, len: usize) -> f64 {
    let mut f = Biquad::new(c);
    let mut peak = 0.0f64;
    for n in 0..from + len {
        let y = f.tick(if n == 0 { 1.0 } else { 0.0 });
        if n >= from {
            peak = peak.max(y.abs());
        }
    }
    peak
}

fn kind() -> impl Strategy<Value = FilterKind> {
    prop_oneof![Just(FilterKind::Lowpass), Just(FilterKind::Highpass), Just(FilterKind::Bandpass)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn biquad_stable(k in kind(), cutoff in 20.0..20_000.0f64, q in 0.1..10.0f64) {
        let c = biquad_coeffs(k, cutoff, q, SR).unwrap();
        prop_assert!(c.is_stable());
        if let Some(n) = decay_bound(&c, 1e-6) {
            prop_assert!(n < 5.0 * SR, "bound {n}");
        } else {
            prop_assert!(simulated_tail(c, (4.0 * SR) as usize, SR as usize) < 1e-6);
        }
    }

    #[test]
    fn biquad_poles_inside_unit_circle(k in kind(), cutoff in 1.0..23_999.0f64, q in 0.05..40.0f64) {
        prop_assert!(biquad_coeffs(k, cutoff, q, SR).unwrap().is_stable());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn biquad_impulse_tail_simulated(k in kind(), cutoff in 20.0..20_000.0f64, q in 0.1..10.0f64) {
        let c = biquad_coeffs(k, cutoff, q, SR).unwrap();
        prop_assert!(simulated_tail(c, (4.9 * SR) as usize, (0.1 * SR) as usize) < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lti_nodes_homogeneous(seed in any::<u64>(), node in 0usize..4) {
        let text = [
            "kind = \"gain\"\nparams = { gain_db = 7.5 }",
            "kind = \"biquad\"\nfilter = \"highpass\"\nparams = { cutoff_hz = 300.0, q = 3.0 }",
            "kind = \"delay\"\nparams = { time_ms = 1.3, max_ms = 5.0 }",
            "kind = \"mixer\"\nparams = { gain_db = -2.0 }",
        ][node];
        let mut g = graph(&format!("inputs = [\"in\"]\noutputs = [\"n\"]\n[[nodes]]\nid = \"n\"\ninputs = [\"in\"]\n{text}"));
        let x = noise(BLOCK * 4, seed);
        let half: Vec<f32> = x.iter().map(|v| 0.5 * v).collect();
        let full = run(&mut g, &x);
        g.reset();
        let scaled = run(&mut g, &half);
        for (a, b) in full.iter().zip(&scaled) {
            prop_assert!((0.5 * a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn pitch_output_bounded(seed in any::<u64>(), ratio in 0.25..=4.0f64, amp in 0.01f32..2.0) {
        let x: Vec<f32> = noise(6000, seed).iter().map(|v| v * amp).collect();
        let peak = x.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let mut ps = PitchShifter::new();
        let y = pitchshift_block(&x, ratio, &mut ps).unwrap();
        prop_assert!(y.iter().all(|v| v.abs() <= peak * 1.05));
    }

    #[test]
    fn automation_never_yields_nan(seed in any::<u64>()) {
        let mut g = graph(ALL_KINDS);
        let x = noise(BLOCK * 40, seed);
        let r = noise(40 * 6, seed ^ 1);
        for (b, chunk) in x.chunks(BLOCK).enumerate() {
            let u = |i: usize| (r[b * 6 + i] as f64 + 1.0) / 2.0;
            g.set_param("g.gain_db", -60.0 + 84.0 * u(0)).unwrap();
            g.set_param("f.cutoff_hz", 20.0 + 23_000.0 * u(1)).unwrap();
            g.set_param("f.q", 0.05 + 39.0 * u(2)).unwrap();
            g.set_param("rm.freq_hz", 2000.0 * u(3)).unwrap();
            g.set_param("ps.ratio", 0.25 + 3.75 * u(4)).unwrap();
            g.set_param("d.time_ms", 10.0 * u(5)).unwrap();
            g.process_into(&[chunk]).unwrap();
            prop_assert!(g.output(0).iter().all(|s| s.is_finite()));
        }
    }
}
