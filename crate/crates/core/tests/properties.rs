//! Invariants checked as properties over random inputs.

use evseg::attention::{attention_forward, softmax, AttentionParams, AttentionShape};
use evseg::evaluation::{activity_level, frame_level, hungarian_match, AnnotationSet};
use evseg::feature_stream::{
    generate_synthetic, read_stream, write_stream, FeatureFrame, Fps, Regime, StreamHeader, SyntheticScenario,
};
use evseg::gating::{extract_events, gate, rasterize, smooth_adaptive, EventInterval};
use evseg::losses::{motion_weighted_loss, prediction_loss, Reduction};
use evseg::predictor::{predictor_forward, DropoutMask, InputMode, LstmParams, PredictorShape, PredictorState};
use evseg::tensor::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn finite_f32() -> impl Strategy<Value = f32> {
    -1e6f32..1e6f32
}

fn tensor(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-scale..scale, rows * cols).prop_map(move |v| Tensor::from_vec(rows, cols, v))
}

fn intervals(max: usize, span: u64) -> impl Strategy<Value = Vec<EventInterval>> {
    prop::collection::vec((0..span, 0..10u64), 0..=max).prop_map(move |v| {
        v.into_iter()
            .map(|(s, l)| EventInterval::new(s, (s + l).min(span - 1)))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn stream_round_trip_is_identity(
        side in 1u32..4,
        m in 1u32..5,
        t in 0u64..6,
        open_ended in any::<bool>(),
        num in 1u32..120,
        den in 1u32..4,
        seed in any::<u64>(),
    ) {
        let g = (side * side) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<FeatureFrame> = (0..t)
            .map(|i| {
                let v = (0..g * m as usize).map(|_| rand::Rng::random_range(&mut rng, -1e3f32..1e3)).collect();
                FeatureFrame::new(i, g, m as usize, v).unwrap()
            })
            .collect();
        let declared = if open_ended { 0 } else { t };
        let header = StreamHeader::new(side, m, declared, Fps::new(num, den).unwrap()).unwrap();
        let bytes = write_stream(header, frames.clone(), Vec::new()).unwrap();
        prop_assert_eq!(bytes.len(), 32 + frames.len() * g * m as usize * 4);
        let (back, reader) = read_stream(&bytes[..]).unwrap();
        prop_assert_eq!(back, header);
        let read: Vec<FeatureFrame> = reader.collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(read, frames);
    }

    #[test]
    fn frames_reject_non_finite(v in prop::collection::vec(finite_f32(), 4), k in 0usize..4, bad in prop::sample::select(vec![f32::NAN, f32::INFINITY, f32::NEG_INFINITY])) {
        let mut v = v;
        prop_assert!(FeatureFrame::new(0, 2, 2, v.clone()).is_ok());
        v[k] = bad;
        prop_assert!(FeatureFrame::new(0, 2, 2, v).is_err());
    }

    #[test]
    fn synthetic_generation_is_pure(seed in any::<u64>(), boundaries in 0usize..4, noise in 0.0f64..1.0, drift in 0.0f64..0.1) {
        let regime = Regime { noise, drift, ..Regime::default() };
        let sc = SyntheticScenario::evenly_spaced(24, 2, 3, boundaries, regime, seed);
        let bytes = |sc: &SyntheticScenario| {
            let (frames, truth) = generate_synthetic(sc).unwrap();
            (write_stream(frames.header(), frames, Vec::new()).unwrap(), truth)
        };
        prop_assert_eq!(bytes(&sc), bytes(&sc));
    }

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(scores in prop::collection::vec(-50.0f64..50.0, 1..70), shift in -1e3f64..1e3) {
        let w = softmax(&scores);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        for (a, b) in w.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_weights_form_a_distribution(seed in any::<u64>(), pooled in any::<bool>(), scale in 0.01f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = AttentionShape { hidden_dim: 3, feature_dim: 4, attn_dim: 2, pooled };
        let p = AttentionParams::init(shape, scale, &mut rng);
        let h = Tensor::uniform(9, 3, 3.0, &mut rng);
        let x = Tensor::uniform(9, 4, 3.0, &mut rng);
        let (map, _, _) = attention_forward(&p, &h, &x).unwrap();
        prop_assert!((map.weights().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let (again, _, _) = attention_forward(&p, &h, &x).unwrap();
        prop_assert_eq!(map, again);
    }

    #[test]
    fn inference_is_deterministic_and_gates_bounded(seed in any::<u64>(), teacher in any::<bool>(), scale in 0.01f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = PredictorShape {
            grid_len: 4,
            feature_dim: 3,
            hidden_dim: 3,
            input_dim: 3,
            input_mode: if teacher { InputMode::TeacherConcat } else { InputMode::Recurrent },
            shared: true,
        };
        let p = LstmParams::init(shape, scale, 1.0, &mut rng);
        let st = PredictorState { h: Tensor::uniform(4, 3, 1.0, &mut rng), c: Tensor::uniform(4, 3, 5.0, &mut rng), step: 0 };
        let x = Tensor::uniform(4, 3, 10.0, &mut rng);
        let keep = DropoutMask::all_keep(4, 3);
        let (y1, s1, tape) = predictor_forward(&p, &st, &x, &x, &keep, false).unwrap();
        let (y2, s2, _) = predictor_forward(&p, &st, &x, &x, &keep, false).unwrap();
        prop_assert_eq!(y1, y2);
        prop_assert_eq!(&s1, &s2);
        prop_assert!(tape.gates_bounded());
        prop_assert_eq!(s1.h.shape(), (4, 3));
        prop_assert_eq!(s1.c.shape(), (4, 3));
    }

    #[test]
    fn losses_are_nonnegative_with_known_zeros(y in tensor(2, 3, 10.0), cur in tensor(2, 3, 10.0), next in tensor(2, 3, 10.0)) {
        for red in [Reduction::Sum, Reduction::Mean] {
            prop_assert!(prediction_loss(&y, &next, red).unwrap().0 >= 0.0);
            prop_assert!(motion_weighted_loss(&y, &cur, &next, red).unwrap().0 >= 0.0);
            prop_assert_eq!(prediction_loss(&next, &next, red).unwrap().0, 0.0);
            prop_assert_eq!(motion_weighted_loss(&y, &next, &next, red).unwrap().0, 0.0);
        }
        if y != next {
            prop_assert!(prediction_loss(&y, &next, Reduction::Sum).unwrap().0 > 0.0);
        }
    }

    #[test]
    fn losses_scale_with_the_residual(y in tensor(2, 3, 2.0), cur in tensor(2, 3, 2.0), next in tensor(2, 3, 2.0), c in 0.1f64..4.0) {
        // Scale the residual (next - y) by c while keeping next, so the motion
        // term is unchanged.
        let scaled = Tensor::from_vec(2, 3, y.as_slice().iter().zip(next.as_slice()).map(|(&y, &n)| n - c * (n - y)).collect());
        let (p0, _) = prediction_loss(&y, &next, Reduction::Sum).unwrap();
        let (p1, _) = prediction_loss(&scaled, &next, Reduction::Sum).unwrap();
        prop_assert!((p1 - c * c * p0).abs() <= 1e-9 * (1.0 + p1.abs()));
        let (m0, _) = motion_weighted_loss(&y, &cur, &next, Reduction::Sum).unwrap();
        let (m1, _) = motion_weighted_loss(&scaled, &cur, &next, Reduction::Sum).unwrap();
        prop_assert!((m1 - c.powi(4) * m0).abs() <= 1e-9 * (1.0 + m1.abs()));
    }

    #[test]
    fn lowering_psi_never_removes_positives(signal in prop::collection::vec(-5.0f64..5.0, 0..100), a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let strict = gate(&signal, hi);
        let loose = gate(&signal, lo);
        prop_assert!(strict.iter().zip(&loose).all(|(&s, &l)| !s || l));
    }

    #[test]
    fn raising_phi_never_adds_intervals(bits in prop::collection::vec(any::<bool>(), 0..100), a in 0u64..10, b in 0u64..10) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(extract_events(&bits, hi).len() <= extract_events(&bits, lo).len());
    }

    #[test]
    fn extraction_is_idempotent(signal in prop::collection::vec(-5.0f64..5.0, 1..100), psi in -5.0f64..5.0, phi in 0u64..6) {
        let events = extract_events(&gate(&signal, psi), phi);
        let induced = rasterize(&events, signal.len());
        prop_assert_eq!(extract_events(&induced, phi), events.clone());
        prop_assert_eq!(extract_events(&induced, 0), events);
    }

    #[test]
    fn adaptive_gate_ignores_constant_offsets(signal in prop::collection::vec(0.0f64..10.0, 1..100), offset in -100.0f64..100.0, n in 1usize..12, psi in -3.0f64..3.0) {
        let a = smooth_adaptive(&signal, n);
        let shifted: Vec<f64> = signal.iter().map(|v| v + offset).collect();
        let b = smooth_adaptive(&shifted, n);
        for t in 0..signal.len() {
            prop_assert!((a[t] - b[t]).abs() < 1e-9);
            // Decisions agree wherever rounding cannot straddle the threshold.
            if (a[t] - psi).abs() > 1e-9 {
                prop_assert_eq!(a[t] >= psi, b[t] >= psi);
            }
        }
    }

    #[test]
    fn constant_signals_smooth_to_zero(v in -1e3f64..1e3, len in 0usize..60, n in 1usize..20) {
        prop_assert!(smooth_adaptive(&vec![v; len], n).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn frame_counts_partition_the_stream(gt in intervals(5, 80), det in intervals(5, 80)) {
        let truth = AnnotationSet::new(gt.clone(), 80, Fps::new(25, 1).unwrap()).unwrap();
        let fm = frame_level(&rasterize(&det, 80), &truth).unwrap();
        prop_assert_eq!(fm.tp + fm.fp + fm.tn + fm.fn_, 80);
        let am = activity_level(&gt, &det, truth.duration_minutes(), 1).unwrap();
        prop_assert!((0.0..=1.0).contains(&am.recall));
        prop_assert!(am.fp_per_min >= 0.0);
    }

    #[test]
    fn matching_size_is_symmetric(gt in intervals(7, 50), det in intervals(7, 50), k in 1u64..4) {
        let ab = hungarian_match(&gt, &det, k);
        let ba = hungarian_match(&det, &gt, k);
        prop_assert_eq!(ab.len(), ba.len());
        prop_assert_eq!(ab.total_overlap, ba.total_overlap);
    }
}
