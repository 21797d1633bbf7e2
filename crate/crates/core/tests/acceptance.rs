//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test -p gip-core --test acceptance`.

mod common;

use std::collections::HashSet;
use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use gip_core::hops;
use gip_core::oracle;
use gip_core::polyact::{approx_error, fuse_inference, hermite_eval, Mode};
use gip_core::{
    execute, oracle_pipeline, pack, plan, propagate_factor, unpack, Activation, AffineSpec,
    GipLayout, HEContext, HermiteCoeffs, InputSpec, ModelGraph, Node, Op, PackingFactor,
    PlainTensor, PolyActRn, PolyActState, Preset, Resampling,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

const RELU_TABLE: [f64; 5] = [0.39894228, 0.5, 0.28209479, 0.0, -0.08143375];
const SILU_TABLE: [f64; 5] = [0.20662096, 0.5, 0.24808519, 0.0, -0.03780501];
/// Max |poly - ReLU| on [-3, 3], 100001 evenly spaced samples, recorded once
/// with an independent numpy evaluation.
const RELU_MAX_ERR: f64 = 0.14960335721826254;
const SILU_MAX_ERR: f64 = 0.03444264035136024;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}

fn linspace(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| a + (b - a) * i as f64 / (n - 1) as f64)
}

fn hermite_constants() -> Outcome {
    ensure!(HermiteCoeffs::RELU.0 == RELU_TABLE, "ReLU coefficients differ");
    ensure!(HermiteCoeffs::SILU.0 == SILU_TABLE, "SiLU coefficients differ");
    for x in linspace(-4.0, 4.0, 81) {
        let explicit = [
            1.0,
            x,
            (x * x - 1.0) / 2f64.sqrt(),
            (x.powi(3) - 3.0 * x) / 6f64.sqrt(),
            (x.powi(4) - 6.0 * x * x + 3.0) / 24f64.sqrt(),
        ];
        for (i, e) in explicit.iter().enumerate() {
            ensure!(rel_err(hermite_eval(i, x).unwrap(), *e) <= 1e-14, "h_{i}({x})");
        }
    }
    let mut worst = 0.0f64;
    for f in [HermiteCoeffs::RELU, HermiteCoeffs::SILU] {
        let a = f.to_monomial();
        ensure!(a.0[1] == 0.5, "a1 = {}", a.0[1]);
        let back = HermiteCoeffs::from_monomial(&a);
        for (u, v) in back.0.iter().zip(f.0) {
            ensure!((u - v).abs() <= 1e-15, "basis round trip {u} vs {v}");
        }
        for q in [0.5, 1.0, 2.0, 8.0] {
            let fused = fuse_inference(&f, q).unwrap();
            for x in linspace(-10.0, 10.0, 2001) {
                let e = rel_err(fused.eval(x), q * f.eval(x / q));
                worst = worst.max(e);
            }
        }
    }
    ensure!(worst <= 1e-12, "fused identity rel err {worst:e}");
    Ok(format!("table coefficients exact, a1 = 0.5, fused rel err {worst:.1e} <= 1e-12"))
}

fn packing_bijection() -> Outcome {
    let ctx = HEContext::new(256, 1).unwrap();
    let mut r = rng(2);
    let mut combos = 0;
    for c in [1usize, 2, 4, 8] {
        for h in [1usize, 2, 4, 8, 16, 32] {
            for base in [1usize, 2, 4, 8, 16] {
                let l = GipLayout::new(c, h, base).map_err(|e| e.to_string())?;
                let g = h as f64 / base as f64;
                let want = if g >= 1.0 {
                    c * (g * g) as usize
                } else {
                    (c as f64 * g * g).ceil() as usize
                };
                ensure!(l.ciphertext_count() == want, "count C={c} H={h} base={base}");
                let x = uniform_tensor(&mut r, c, h);
                let p = pack(&x, base, &ctx).map_err(|e| e.to_string())?;
                ensure!(p.cts().len() == want, "packed count C={c} H={h} base={base}");
                ensure!(unpack(&p).unwrap() == x, "round trip C={c} H={h} base={base}");
                let mut seen = HashSet::new();
                for ci in 0..c {
                    for y in 0..h {
                        for xx in 0..h {
                            let i = l.index_map(ci, y, xx).unwrap();
                            ensure!(i.ct < want && i.slot < base * base, "index out of range");
                            ensure!(seen.insert((i.ct, i.slot)), "collision C={c} H={h} base={base}");
                        }
                    }
                }
                combos += 1;
            }
        }
    }
    Ok(format!("{combos} layouts: round trip exact, injective, closed-form counts"))
}

#[derive(Clone, Copy, Debug)]
enum OpKind {
    Conv,
    Deconv,
    AvgPool,
    BatchNorm,
    PolyAct,
    Upsample,
}

fn operator_trial(kind: OpKind, r: &mut ChaCha8Rng) -> f64 {
    let log_g = *[-1i32, 0, 1, 2].choose(r).unwrap();
    let base = *[4usize, 8].choose(r).unwrap();
    let h = if log_g >= 0 { base << log_g } else { base >> 1 };
    let c = *[1usize, 2, 4].choose(r).unwrap();
    let co = *[1usize, 2, 4].choose(r).unwrap();
    let ctx = HEContext::new(64, 4).unwrap();
    let x = uniform_tensor(r, c, h);
    let p = pack(&x, base, &ctx).unwrap();
    let (got, want) = match kind {
        OpKind::Conv => {
            let k = *[1usize, 3, 5].choose(r).unwrap();
            let s = r.gen_range(1..=2);
            let spec = random_conv(r, c, co, k, s);
            (hops::conv2d(&ctx, &p, &spec), oracle::conv2d_ref(&x, &spec).unwrap())
        }
        OpKind::Deconv => {
            let k = r.gen_range(2..=3);
            let spec = random_deconv(r, c, co, k, 2);
            (hops::deconv2d(&ctx, &p, &spec), oracle::deconv2d_ref(&x, &spec).unwrap())
        }
        OpKind::AvgPool => (hops::avgpool(&ctx, &p, 2, 2), oracle::avgpool_ref(&x, 2, 2).unwrap()),
        OpKind::BatchNorm => {
            let spec = random_affine(r, c);
            (hops::batchnorm_affine(&ctx, &p, &spec), oracle::affine_ref(&x, &spec).unwrap())
        }
        OpKind::PolyAct => {
            let coeffs = random_polyact(r, c).state().fused_coefficients().unwrap();
            (hops::polyact_eval(&ctx, &p, &coeffs), oracle::polyact_ref(&x, &coeffs).unwrap())
        }
        OpKind::Upsample => (hops::upsample_nearest(&ctx, &p, 2), oracle::upsample_ref(&x, 2)),
    };
    unpack(&got.unwrap()).unwrap().max_abs_diff(&want)
}

fn operator_equivalence() -> Outcome {
    let mut r = rng(3);
    let mut parts = Vec::new();
    for kind in [
        OpKind::Conv,
        OpKind::Deconv,
        OpKind::AvgPool,
        OpKind::BatchNorm,
        OpKind::PolyAct,
        OpKind::Upsample,
    ] {
        let worst = (0..200).map(|_| operator_trial(kind, &mut r)).fold(0.0, f64::max);
        ensure!(worst <= 1e-9, "{kind:?} max err {worst:e} > 1e-9");
        parts.push(format!("{kind:?} {worst:.1e}"));
    }
    Ok(format!("200 trials each, max abs err <= 1e-9: {}", parts.join(", ")))
}

fn interleaved_conv_scenario() -> Outcome {
    let mut r = rng(4);
    for c in [1usize, 2] {
        let ctx = HEContext::new(64, 2).unwrap();
        let x = uniform_tensor(&mut r, c, 16);
        let spec = random_conv(&mut r, c, c, 3, 1);
        ensure!(spec.padding == 1, "padding {}", spec.padding);
        let p = pack(&x, 8, &ctx).unwrap();
        ensure!(p.layout().factor() == PackingFactor::from_log2(1), "input factor");
        ensure!(p.cts().len() == 4 * c, "input cts {}", p.cts().len());
        let y = hops::conv2d(&ctx, &p, &spec).map_err(|e| e.to_string())?;
        ensure!(y.layout().factor() == PackingFactor::from_log2(1), "output factor");
        ensure!(y.cts().len() == 4 * c, "output cts {}", y.cts().len());
        let d = unpack(&y).unwrap().max_abs_diff(&oracle::conv2d_ref(&x, &spec).unwrap());
        ensure!(d <= 1e-9, "C={c} err {d:e}");
    }
    Ok("g=2 -> g=2, 4 input / 4 output cts per channel, matches oracle <= 1e-9".into())
}

fn propagation() -> Outcome {
    let mut r = rng(5);
    let mut edges = 0;
    for _ in 0..5000 {
        let mut g = PackingFactor::from_log2(r.gen_range(-4..=4));
        for _ in 0..r.gen_range(1..10) {
            let s = 1usize << r.gen_range(0..3);
            let (kind, want) = match r.gen_range(0..3) {
                0 => (Resampling::Downsample, g.as_f64() / s as f64),
                1 => (Resampling::Upsample, g.as_f64() * s as f64),
                _ => (Resampling::Preserve, g.as_f64()),
            };
            let next = propagate_factor(g, kind, s);
            ensure!(next.as_f64() == want, "{g} {kind:?} {s} -> {next}");
            g = next;
            edges += 1;
        }
    }
    // the rule also holds on every planned edge of random graphs
    let ctx = HEContext::new(GRAPH_SLOTS, GRAPH_LEVELS).unwrap();
    for seed in 0..100 {
        let case = random_graph(&mut rng(500 + seed), 10);
        let p = plan(&case.model, &ctx, case.base).map_err(|e| e.to_string())?;
        for e in &p.entries {
            let (hi, ho) = (e.inputs[0].height(), e.output.height());
            let kind = match ho.cmp(&hi) {
                std::cmp::Ordering::Less => Resampling::Downsample,
                std::cmp::Ordering::Greater => Resampling::Upsample,
                std::cmp::Ordering::Equal => Resampling::Preserve,
            };
            let s = hi.max(ho) / hi.min(ho);
            ensure!(
                e.output.factor() == propagate_factor(e.inputs[0].factor(), kind, s),
                "planned edge at {}",
                e.node
            );
            edges += 1;
        }
    }
    Ok(format!("{edges} edges follow g/s, g*s, g"))
}

fn depth_and_cost() -> Outcome {
    let mut r = rng(6);
    for _ in 0..50 {
        let log_g = *[-1i32, 0, 1, 2].choose(&mut r).unwrap();
        let base = 8usize;
        let h = if log_g >= 0 { base << log_g } else { base >> 1 };
        let c = *[1usize, 2, 4].choose(&mut r).unwrap();
        let ctx = HEContext::new(64, 5).unwrap();
        let x = pack(&uniform_tensor(&mut r, c, h), base, &ctx).unwrap();
        let n = x.cts().len() as u64;
        let one_level = [
            hops::conv2d(&ctx, &x, &random_conv(&mut r, c, c, 3, 1)),
            hops::batchnorm_affine(&ctx, &x, &random_affine(&mut r, c)),
            hops::avgpool(&ctx, &x, 2, 2),
        ];
        for y in one_level {
            ensure!(y.unwrap().level() == 4, "linear op consumed != 1 level");
        }
        ctx.reset_counters();
        let coeffs = random_polyact(&mut r, c).state().fused_coefficients().unwrap();
        let y = hops::polyact_eval(&ctx, &x, &coeffs).unwrap();
        ensure!(y.level() == 2, "polyact consumed {} levels", 5 - y.level());
        let k = ctx.counters();
        ensure!(k.ct_ct_mults == 2 * n, "polyact ct-ct mults {} for {n} cts", k.ct_ct_mults);
        if log_g >= 0 {
            ctx.reset_counters();
            let y = hops::upsample_nearest(&ctx, &x, 2).unwrap();
            ensure!(y.level() == 5 && ctx.counters().is_free(), "upsample not free");
        }
    }
    let ctx = HEContext::new(GRAPH_SLOTS, GRAPH_LEVELS).unwrap();
    let mut boots = 0;
    for seed in 0..50 {
        let case = random_graph(&mut rng(600 + seed), 10);
        let p = plan(&case.model, &ctx, case.base).map_err(|e| e.to_string())?;
        let x = pack(&case.input, case.base, &ctx).unwrap();
        let (_, report) = execute(&case.model, &ctx, &x).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure!(report == p.as_report(), "seed {seed}: measured != planned");
        boots += report.totals().bootstraps;
    }
    Ok(format!(
        "levels 1/1/1/3/0, 2 ct-ct per ct; 50 graphs measured == planned ({boots} bootstraps)"
    ))
}

fn polyact_semantics() -> Outcome {
    let mut st = PolyActState::new(HermiteCoeffs::RELU, 1);
    st.mode = Mode::Training;
    let batch = [PlainTensor::from_fn(1, 4, 4, |_, y, x| if (y, x) == (1, 2) { -5.0 } else { 0.5 })];
    let mut worst = 0.0f64;
    for k in 1..=20 {
        st.forward(&batch).unwrap();
        let want = 5.0 - 4.0 * 0.9f64.powi(k);
        worst = worst.max((st.running_max[0] - want).abs());
    }
    ensure!(worst <= 1e-12, "running max err {worst:e}");
    st.mode = Mode::Inference;
    let before = st.clone();
    let x = [uniform_tensor(&mut rng(7), 1, 4)];
    let a = st.forward(&x).unwrap();
    let b = st.forward(&x).unwrap();
    let same = a[0].data().iter().zip(b[0].data()).all(|(u, v)| u.to_bits() == v.to_bits());
    ensure!(same && st == before, "inference mode is not pure");
    Ok(format!("M after k <= 20 steps err {worst:.1e} <= 1e-12; inference bit-identical"))
}

fn approximation_regression() -> Outcome {
    let relu = approx_error(&HermiteCoeffs::RELU, Preset::Relu, 3.0).unwrap();
    let silu = approx_error(&HermiteCoeffs::SILU, Preset::Silu, 3.0).unwrap();
    ensure!((relu.max_abs - RELU_MAX_ERR).abs() <= 1e-9, "ReLU max err {}", relu.max_abs);
    ensure!((silu.max_abs - SILU_MAX_ERR).abs() <= 1e-9, "SiLU max err {}", silu.max_abs);
    let at0 = HermiteCoeffs::RELU.eval(0.0);
    ensure!((at0 - 0.14960).abs() <= 1e-5, "poly(0) = {at0}");
    Ok(format!("ReLU max err {:.17} (1e-9), poly(0) = {at0:.5}", relu.max_abs))
}

fn toy_cnn(r: &mut ChaCha8Rng) -> ModelGraph {
    let bn = AffineSpec::new(vec![1.2, 0.8], vec![0.1, -0.2]).unwrap();
    let act = |c: usize, m: f64| {
        let mut p = PolyActRn::new(Preset::Relu, c);
        p.running_max = vec![m; c];
        Op::Activation(Activation::PolyActRn(p))
    };
    let nodes = vec![
        Node::new("conv1", Op::Conv(random_conv(r, 1, 2, 3, 1))),
        Node::new("bn1", Op::BatchNorm(bn)),
        Node::new("act1", act(2, 2.0)),
        Node::new("pool1", Op::AvgPool { window: 2, stride: 2 }),
        Node::new("conv2", Op::Conv(random_conv(r, 2, 2, 3, 1))),
        Node::new("act2", act(2, 1.5)),
    ];
    let input = InputSpec {
        channels: 1,
        height: 16,
        width: 16,
    };
    ModelGraph::new(input, nodes).unwrap()
}

fn end_to_end() -> Outcome {
    let mut r = rng(9);
    let m = toy_cnn(&mut r);
    let x = uniform_tensor(&mut r, 1, 16);
    let want = oracle_pipeline(&m, &x).unwrap();
    let mut parts = Vec::new();
    for levels in [20u32, 5] {
        let ctx = HEContext::new(256, levels).unwrap();
        let p = plan(&m, &ctx, 8).map_err(|e| e.to_string())?;
        let boots = p.entries.iter().filter(|e| e.bootstrap_before).count();
        if levels == 5 {
            ensure!(boots >= 1, "no bootstrap planned with 5 levels");
        }
        let (y, _) = execute(&m, &ctx, &pack(&x, 8, &ctx).unwrap()).map_err(|e| e.to_string())?;
        let d = unpack(&y).unwrap().max_abs_diff(&want);
        ensure!(d <= 1e-6, "L={levels}: err {d:e}");
        parts.push(format!("L={levels}: err {d:.1e}, {boots} bootstrap point(s)"));
    }
    Ok(parts.join("; "))
}

fn homogeneity() -> Outcome {
    let mut r = rng(10);
    for _ in 0..10_000 {
        let x: f64 = r.gen_range(-100.0..100.0);
        let q = 2f64.powi(r.gen_range(-10..=10));
        ensure!(
            (q * (x / q).max(0.0)).to_bits() == x.max(0.0).to_bits(),
            "q*relu(x/q) != relu(x) at x={x}, q={q}"
        );
    }
    let mut worst = 0.0f64;
    for f in [HermiteCoeffs::RELU, HermiteCoeffs::SILU] {
        for _ in 0..2000 {
            let q = r.gen_range(0.05..20.0);
            let x = r.gen_range(-10.0..10.0);
            worst = worst.max(rel_err(fuse_inference(&f, q).unwrap().eval(x), q * f.eval(x / q)));
        }
    }
    ensure!(worst <= 1e-12, "fused rel err {worst:e}");
    Ok(format!("ReLU bit-exact for powers of two; fused rel err {worst:.1e} <= 1e-12"))
}

fn main() {
    // keep panic messages from interleaving with the report
    panic::set_hook(Box::new(|_| {}));
    let criteria: [Criterion; 10] = [
        ("hermite constants", hermite_constants),
        ("packing bijection", packing_bijection),
        ("operator oracle equivalence", operator_equivalence),
        ("interleaved g=2 conv", interleaved_conv_scenario),
        ("propagation rules", propagation),
        ("depth and cost laws", depth_and_cost),
        ("polyact-rn semantics", polyact_semantics),
        ("approximation regression", approximation_regression),
        ("end-to-end differential", end_to_end),
        ("homogeneity", homogeneity),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {:>2} {name}: {detail} ({secs:.2}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {:>2} {name}: {detail} ({secs:.2}s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
