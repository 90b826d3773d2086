//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report is always
//! printed; the process exits non-zero if any criterion fails.

mod common;

use std::alloc::{GlobalAlloc, Layout, System};
use std::hash::{DefaultHasher, Hasher};
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicIsize, Ordering};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::*;
use evseg::attention::{attention_backward, attention_forward, AttentionParams, AttentionShape};
use evseg::evaluation::{hungarian_match, roc_sweep, AnnotationSet, RocTables, SweepGrid};
use evseg::feature_stream::{generate_synthetic, read_stream, write_stream, Regime, SyntheticScenario};
use evseg::gating::{extract_events, gate, smooth_adaptive, GateMode};
use evseg::losses::{motion_weighted_loss, prediction_loss, LossSample, Reduction};
use evseg::predictor::{
    predictor_backward, predictor_forward, DropoutMask, InputMode, LstmParams, PredictorShape, PredictorState,
};
use evseg::tensor::Tensor;
use evseg::trainer::{run_stream, NullSink, OnlineTrainer, RunOptions, TraceSink, TrainerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Counting;

static LIVE: AtomicIsize = AtomicIsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        LIVE.fetch_add(layout.size() as isize, Ordering::Relaxed);
        unsafe { System.alloc(layout) }
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        LIVE.fetch_sub(layout.size() as isize, Ordering::Relaxed);
        unsafe { System.dealloc(ptr, layout) }
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        LIVE.fetch_add(new_size as isize - layout.size() as isize, Ordering::Relaxed);
        unsafe { System.realloc(ptr, layout, new_size) }
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- gradients

fn max_err(worst: &mut f64, analytic: &[f64], numeric: &[f64]) {
    for (&a, &n) in analytic.iter().zip(numeric) {
        *worst = worst.max(rel_err(a, n));
    }
}

fn gradient_correctness() -> Outcome {
    const G: usize = 4;
    const M: usize = 3;
    const DA: usize = 5;
    let mut worst: f64 = 0.0;
    let seeds = [11u64, 12, 13, 14, 15];
    for seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let shape = AttentionShape {
            hidden_dim: M,
            feature_dim: M,
            attn_dim: DA,
            pooled: false,
        };
        let ap = AttentionParams::init(shape, 0.8, &mut rng);
        let h = random_tensor(G, M, 1.0, &mut rng);
        let x = random_tensor(G, M, 1.0, &mut rng);
        let r = random_tensor(G, M, 1.0, &mut rng);
        let att_obj = |p: &AttentionParams, h: &Tensor, x: &Tensor| weighted_sum(&attention_forward(p, h, x).unwrap().1, &r);
        let (_, _, tape) = attention_forward(&ap, &h, &x).unwrap();
        let (grads, gh, gx) = attention_backward(&ap, &tape, &r, &[0.0; G]).unwrap();
        for (a, n) in grads.tensors().iter().zip(numeric_param_grads(&ap, |p| att_obj(p, &h, &x))) {
            max_err(&mut worst, a.as_slice(), &n);
        }
        max_err(&mut worst, gh.as_slice(), &numeric_tensor_grad(&h, |hh| att_obj(&ap, hh, &x)));
        max_err(&mut worst, gx.as_slice(), &numeric_tensor_grad(&x, |xx| att_obj(&ap, &h, xx)));

        let ps = PredictorShape {
            grid_len: G,
            feature_dim: M,
            hidden_dim: M,
            input_dim: M,
            input_mode: InputMode::Recurrent,
            shared: true,
        };
        let lp = LstmParams::init(ps, 0.6, 1.0, &mut rng);
        let st = PredictorState {
            h: random_tensor(G, M, 1.0, &mut rng),
            c: random_tensor(G, M, 1.0, &mut rng),
            step: 0,
        };
        let mask = DropoutMask::sample(G, M, 0.4, &mut rng);
        let (ry, rh) = (random_tensor(G, M, 1.0, &mut rng), random_tensor(G, M, 1.0, &mut rng));
        let pred_obj = |p: &LstmParams, st: &PredictorState, xm: &Tensor| {
            let (y, next, _) = predictor_forward(p, st, xm, &x, &mask, true).unwrap();
            weighted_sum(&y, &ry) + weighted_sum(&next.h, &rh)
        };
        let (_, _, ptape) = predictor_forward(&lp, &st, &x, &x, &mask, true).unwrap();
        let back = predictor_backward(&lp, &ptape, &ry, &rh, &Tensor::zeros(G, M)).unwrap();
        for (a, n) in back.grads.tensors().iter().zip(numeric_param_grads(&lp, |p| pred_obj(p, &st, &x))) {
            max_err(&mut worst, a.as_slice(), &n);
        }
        let n_h = numeric_tensor_grad(&st.h, |hh| pred_obj(&lp, &PredictorState { h: hh.clone(), ..st.clone() }, &x));
        max_err(&mut worst, back.grad_h_prev.as_slice(), &n_h);
        max_err(&mut worst, back.grad_masked.as_slice(), &numeric_tensor_grad(&x, |xm| pred_obj(&lp, &st, xm)));

        let (y, cur, next) = (
            random_tensor(G, M, 1.0, &mut rng),
            random_tensor(G, M, 1.0, &mut rng),
            random_tensor(G, M, 1.0, &mut rng),
        );
        let (_, g) = prediction_loss(&y, &next, Reduction::Sum).unwrap();
        max_err(&mut worst, g.as_slice(), &numeric_tensor_grad(&y, |yy| prediction_loss(yy, &next, Reduction::Sum).unwrap().0));
        let (_, g) = motion_weighted_loss(&y, &cur, &next, Reduction::Sum).unwrap();
        let n = numeric_tensor_grad(&y, |yy| motion_weighted_loss(yy, &cur, &next, Reduction::Sum).unwrap().0);
        max_err(&mut worst, g.as_slice(), &n);
    }
    ensure(worst < FD_TOL, || format!("max relative error {worst:.2e} >= {FD_TOL:e}"))?;
    Ok(format!("{} seeds, N=2 M=3 D_a=5, max relative error {worst:.2e}", seeds.len()))
}

// -------------------------------------------------------------- identities

fn algebraic_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst_sum: f64 = 0.0;
    for i in 0..1000 {
        let g = rng.random_range(1..=16);
        let (m, hd, da) = (rng.random_range(1..=6), rng.random_range(1..=6), rng.random_range(1..=6));
        let shape = AttentionShape {
            hidden_dim: hd,
            feature_dim: m,
            attn_dim: da,
            pooled: i % 2 == 1,
        };
        let scale = rng.random_range(0.01..5.0);
        let p = AttentionParams::init(shape, scale, &mut rng);
        let h = random_tensor(g, hd, 5.0, &mut rng);
        let x = random_tensor(g, m, 5.0, &mut rng);
        let (map, _, _) = attention_forward(&p, &h, &x).unwrap();
        worst_sum = worst_sum.max((map.weights().iter().sum::<f64>() - 1.0).abs());

        let a = random_tensor(g, m, 10.0, &mut rng);
        let y = random_tensor(g, m, 10.0, &mut rng);
        ensure(prediction_loss(&a, &a, Reduction::Sum).unwrap().0 == 0.0, || "prediction_loss(a, a) != 0".into())?;
        ensure(motion_weighted_loss(&y, &a, &a, Reduction::Sum).unwrap().0 == 0.0, || {
            "motion-weighted loss nonzero with cur == next".into()
        })?;
    }
    ensure(worst_sum <= 1e-6, || format!("attention weights off by {worst_sum:e}"))?;

    for n in [1, 3, 16, 64] {
        for v in [0.0, 1.5, -7.25, 1234.567, 1e-9] {
            let s = smooth_adaptive(&vec![v; 300], n);
            ensure(s.iter().all(|&x| x == 0.0), || format!("constant {v} with n={n} does not smooth to 0"))?;
        }
    }
    Ok(format!("1000 attention maps sum to 1 within {worst_sum:.1e}; loss zeros exact; flat signals smooth to 0"))
}

// ----------------------------------------------------------------- oracles

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..200 {
        let gt = random_intervals(&mut rng, 7, 40);
        let det = random_intervals(&mut rng, 7, 40);
        let m = hungarian_match(&gt, &det, 1);
        let want = brute_force(&gt, &det, 1);
        ensure((m.len(), m.total_overlap) == want, || {
            format!("trial {trial}: hungarian {:?} vs brute force {want:?}", (m.len(), m.total_overlap))
        })?;
    }
    for trial in 0..500 {
        let len = rng.random_range(1..200);
        let e: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..10.0)).collect();
        let n = rng.random_range(1..30);
        let psi = rng.random_range(-3.0..5.0);
        let phi = rng.random_range(0..8);
        let s = smooth_adaptive(&e, n);
        ensure(s == naive_smooth(&e, n), || format!("signal {trial}: smoothing differs"))?;
        let b = gate(&s, psi);
        ensure(b == s.iter().map(|&v| v >= psi).collect::<Vec<_>>(), || format!("signal {trial}: gate differs"))?;
        let ev: Vec<(u64, u64)> = extract_events(&b, phi).iter().map(|i| (i.start, i.end)).collect();
        ensure(ev == naive_extract(&b, phi), || format!("signal {trial}: extraction differs"))?;
    }
    Ok("hungarian = brute force on 200 instances (<=7 per side); smoothing/gating/extraction = naive loops on 500 signals".into())
}

// ---------------------------------------------------------- synthetic runs

const E2E_LR: f64 = 1e-3;
const E2E_WINDOW: usize = 10;

struct Trace {
    losses: Vec<LossSample>,
    truth: AnnotationSet,
    elapsed: Duration,
}

fn train(sc: &SyntheticScenario, lr: f64) -> Trace {
    let (frames, events) = generate_synthetic(sc).unwrap();
    let header = frames.header();
    let cfg = TrainerConfig {
        learning_rate: lr,
        seed: sc.seed,
        ..TrainerConfig::default()
    };
    let model = cfg.init_model(header.grid_len(), header.feature_dim()).unwrap();
    let start = Instant::now();
    let out = run_stream(&cfg, model, frames.map(Ok), NullSink, RunOptions::default()).unwrap();
    Trace {
        losses: out.losses,
        truth: AnnotationSet::new(events, sc.frames, sc.fps).unwrap(),
        elapsed: start.elapsed(),
    }
}

fn e2e_trace() -> &'static Trace {
    static TRACE: OnceLock<Trace> = OnceLock::new();
    TRACE.get_or_init(|| {
        let regime = Regime {
            noise: 0.5,
            ..Regime::default()
        };
        train(&SyntheticScenario::evenly_spaced(5000, 4, 16, 10, regime, 2024), E2E_LR)
    })
}

/// Values of the sorted signal at the given quantiles.
fn quantiles(values: &[f64], qs: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    qs.into_iter().map(|q| s[(q * (s.len() - 1) as f64).round() as usize]).collect()
}

/// Ten quantiles evenly spaced over `[0.95, 0.999]`.
fn upper_qs() -> impl Iterator<Item = f64> {
    (0..10).map(|k| 0.95 + 0.049 * k as f64 / 9.0)
}

/// Thresholds at quantiles `qs` of the gated signal, phi 0..=9.
fn sweep_at(signal: &[f64], truth: &AnnotationSet, mode: GateMode, qs: Vec<f64>) -> (SweepGrid, RocTables) {
    let mut grid = SweepGrid {
        psi: Vec::new(),
        phi: (0..10).collect(),
        mode,
        window: E2E_WINDOW,
        buffer: 64,
        min_overlap: 1,
    };
    grid.psi = quantiles(&grid.gated_values(signal), qs);
    let tables = roc_sweep(signal, truth, &grid).unwrap();
    (grid, tables)
}

/// The 10 x 10 grid.
fn sweep(signal: &[f64], truth: &AnnotationSet, mode: GateMode) -> (SweepGrid, RocTables) {
    sweep_at(signal, truth, mode, upper_qs().collect())
}

/// The 10 x 10 grid plus 20 thresholds over quantiles `[0, 0.95)`, so that
/// neither gate lacks low thresholds.
fn sweep_wide(signal: &[f64], truth: &AnnotationSet, mode: GateMode) -> (SweepGrid, RocTables) {
    let qs = (0..20).map(|k| 0.95 * k as f64 / 20.0).chain(upper_qs()).collect();
    sweep_at(signal, truth, mode, qs)
}

/// Highest activity recall, ties broken by fewest false detections per minute.
fn best_point(t: &RocTables) -> (f64, f64, f64, f64) {
    let mut best = (f64::MIN, f64::MAX, 0.0, 0.0);
    for c in &t.activity {
        for p in &c.points {
            if p.recall > best.0 || (p.recall == best.0 && p.x < best.1) {
                best = (p.recall, p.x, c.fixed, p.param);
            }
        }
    }
    best
}

fn synthetic_end_to_end() -> Outcome {
    let t = e2e_trace();
    let signal: Vec<f64> = t.losses.iter().map(|s| s.pred_loss).collect();
    let (_, tables) = sweep(&signal, &t.truth, GateMode::Adaptive);
    let hit = tables
        .activity
        .iter()
        .flat_map(|c| c.points.iter().map(move |p| (c.fixed, p)))
        .filter(|(_, p)| p.recall >= 0.8 && p.x <= 0.2)
        .max_by(|a, b| a.1.recall.total_cmp(&b.1.recall).then(b.1.x.total_cmp(&a.1.x)));
    ensure(t.elapsed < Duration::from_secs(300), || format!("training took {:?}", t.elapsed))?;
    let minutes = t.truth.duration_minutes();
    match hit {
        Some((psi, p)) => Ok(format!(
            "T=5000 N=4 M=16, lr {E2E_LR:e}, n={E2E_WINDOW}: recall {:.1} at {:.2} FP/min (psi {psi:.2}, phi {}) over {minutes:.2} min, trained in {:.1?}",
            p.recall, p.x, p.param, t.elapsed
        )),
        None => {
            let b = best_point(&tables);
            Err(format!("no grid point reaches recall 0.8 at <= 0.2 FP/min; best recall {:.2} at {:.2} FP/min", b.0, b.1))
        }
    }
}

fn check_monotone(tables: &RocTables, grid: &SweepGrid, signal: &[f64], total: u64) -> Result<(), String> {
    for curve in &tables.frame {
        let mut pts = curve.points.clone();
        pts.sort_by(|a, b| b.param.total_cmp(&a.param));
        for w in pts.windows(2) {
            ensure(w[1].recall >= w[0].recall, || {
                format!("phi {}: recall drops from {} to {} as psi falls to {}", curve.fixed, w[0].recall, w[1].recall, w[1].param)
            })?;
        }
    }
    let values = grid.gated_values(signal);
    for &psi in &grid.psi {
        let counts: Vec<usize> = grid
            .phi
            .iter()
            .map(|&phi| evseg::evaluation::detect_events(&values, psi, phi, total).unwrap().len())
            .collect();
        ensure(counts.windows(2).all(|w| w[1] <= w[0]), || format!("psi {psi}: interval counts {counts:?}"))?;
    }
    Ok(())
}

fn monotonicity_suite() -> Outcome {
    let mut traces: Vec<(Vec<f64>, AnnotationSet)> = Vec::new();
    let t = e2e_trace();
    traces.push((t.losses.iter().map(|s| s.pred_loss).collect(), t.truth.clone()));
    traces.push((t.losses.iter().map(|s| s.mw_loss).collect(), t.truth.clone()));
    for seed in 0..3 {
        let sc = SyntheticScenario::evenly_spaced(1500, 2, 6, 5, Regime { noise: 0.3, ..Regime::default() }, seed);
        let tr = train(&sc, E2E_LR);
        traces.push((tr.losses.iter().map(|s| s.pred_loss).collect(), tr.truth));
    }
    for (i, (signal, truth)) in traces.iter().enumerate() {
        for mode in [GateMode::Simple, GateMode::Adaptive] {
            let (grid, tables) = sweep(signal, truth, mode);
            check_monotone(&tables, &grid, signal, truth.total_frames).map_err(|e| format!("trace {i} {mode}: {e}"))?;
        }
    }
    Ok(format!("{} traces x 2 gates, 10x10 (psi, phi) grid each", traces.len()))
}

// --------------------------------------------------------------- streaming

struct HashSink(DefaultHasher);

impl TraceSink for HashSink {
    fn loss(&mut self, s: &LossSample) -> evseg::Result<()> {
        self.0.write_u64(s.t);
        self.0.write_u64(s.pred_loss.to_bits());
        self.0.write_u64(s.mw_loss.to_bits());
        Ok(())
    }
}

struct StreamRun {
    hash: u64,
    checkpoint: Vec<u8>,
    peak_frames: usize,
    early_peak: isize,
    late_peak: isize,
}

fn stream_run(path: &std::path::Path, cfg: &TrainerConfig) -> StreamRun {
    let (header, reader) = read_stream(BufReader::new(std::fs::File::open(path).unwrap())).unwrap();
    let model = cfg.init_model(header.grid_len(), header.feature_dim()).unwrap();
    let mut trainer = OnlineTrainer::new(cfg.clone(), model).unwrap();
    let mut sink = HashSink(DefaultHasher::new());
    let (mut early_peak, mut late_peak) = (0isize, 0isize);
    for (i, frame) in reader.enumerate() {
        if let Some(out) = trainer.push(frame.unwrap()).unwrap() {
            sink.loss(&out.sample).unwrap();
        }
        let live = LIVE.load(Ordering::Relaxed);
        match i {
            1_000..10_000 => early_peak = early_peak.max(live),
            10_000.. => late_peak = late_peak.max(live),
            _ => {}
        }
    }
    StreamRun {
        hash: sink.0.finish(),
        checkpoint: trainer.checkpoint().to_bytes(),
        peak_frames: trainer.peak_retained_frames(),
        early_peak,
        late_peak,
    }
}

fn streaming_contract() -> Outcome {
    const FRAMES: u64 = 100_000;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("long.evsg");
    let sc = SyntheticScenario::evenly_spaced(FRAMES, 2, 4, 50, Regime { noise: 0.2, ..Regime::default() }, 77);
    let (frames, _) = generate_synthetic(&sc).unwrap();
    let file = BufWriter::new(std::fs::File::create(&path).unwrap());
    write_stream(frames.header(), frames, file).unwrap();

    let mut report = Vec::new();
    for window in [1usize, 3] {
        let cfg = TrainerConfig {
            learning_rate: E2E_LR,
            bptt_window: window,
            seed: 77,
            ..TrainerConfig::default()
        };
        let a = stream_run(&path, &cfg);
        let b = stream_run(&path, &cfg);
        ensure(a.peak_frames <= window + 1, || format!("window {window}: {} frames retained", a.peak_frames))?;
        let growth = a.late_peak - a.early_peak;
        ensure(growth <= 16 * 1024, || {
            format!("window {window}: live heap grew by {growth} bytes between frames 1e3-1e4 and 1e4-1e5")
        })?;
        ensure(a.hash == b.hash && a.checkpoint == b.checkpoint, || format!("window {window}: reruns differ"))?;
        report.push(format!("window {window}: peak {} frames, heap growth {growth} B", a.peak_frames));
    }
    Ok(format!("{FRAMES} frames; {}; reruns bit-identical", report.join("; ")))
}

// ---------------------------------------------------------- adaptive gate

fn adaptive_beats_simple() -> Outcome {
    let sc = SyntheticScenario::evenly_spaced(3000, 2, 8, 8, Regime { noise: 0.3, ..Regime::default() }, 99);
    let t = train(&sc, E2E_LR);
    let raw: Vec<f64> = t.losses.iter().map(|s| s.pred_loss).collect();
    let b: Vec<usize> = sc.segments[1..].iter().map(|s| s.start as usize - 1).collect();
    let spike = b.iter().map(|&i| raw[i]).fold(f64::MIN, f64::max);
    // Baseline drift spanning three times the largest boundary spike.
    let slope = 3.0 * spike / raw.len() as f64;
    let drifted: Vec<f64> = raw.iter().enumerate().map(|(i, v)| v + slope * i as f64).collect();

    let (_, simple) = sweep_wide(&drifted, &t.truth, GateMode::Simple);
    let (_, adaptive) = sweep_wide(&drifted, &t.truth, GateMode::Adaptive);
    let s = best_point(&simple);
    let a = best_point(&adaptive);
    let dominates = a.0 >= s.0 && a.1 <= s.1 && (a.0 > s.0 || a.1 < s.1);
    let detail = format!(
        "adaptive best recall {:.2} at {:.2} FP/min vs simple {:.2} at {:.2} FP/min (drift {:.1} over the trace)",
        a.0,
        a.1,
        s.0,
        s.1,
        slope * raw.len() as f64
    );
    ensure(dominates, || detail.clone())?;
    Ok(detail)
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("gradient correctness", gradient_correctness),
        ("algebraic identities", algebraic_identities),
        ("oracle equivalence", oracle_equivalence),
        ("monotonicity suite", monotonicity_suite),
        ("synthetic end-to-end", synthetic_end_to_end),
        ("streaming contract", streaming_contract),
        ("adaptive vs simple gating", adaptive_beats_simple),
    ];
    // Keep panics from interleaving with the report.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS  {name:<26} {detail} [{took:.1?}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<26} {why} [{took:.1?}]");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
