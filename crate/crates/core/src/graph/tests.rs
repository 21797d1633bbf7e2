use super::*;
use crate::error::Error;
use crate::hops::{AffineSpec, ConvSpec};
use crate::packing::{pack, unpack, PackingFactor, PlainTensor};
use crate::polyact::Preset;
use crate::slotvm::HEContext;
use alloc::vec;
use alloc::vec::Vec;

fn spec(c: usize, h: usize) -> InputSpec {
    InputSpec {
        channels: c,
        height: h,
        width: h,
    }
}

fn conv(ci: usize, co: usize, k: usize, s: usize) -> Op {
    let w = (0..ci * co * k * k)
        .map(|i| ((i * 13 % 17) as f64 - 8.0) / 40.0)
        .collect();
    Op::Conv(ConvSpec::new(ci, co, k, s, w).unwrap())
}

fn polyact(c: usize) -> Op {
    Op::Activation(Activation::PolyActRn(PolyActRn::new(Preset::Relu, c)))
}

fn ramp(c: usize, h: usize) -> PlainTensor {
    PlainTensor::from_fn(c, h, h, |c, y, x| ((c + 2 * y + 3 * x) % 7) as f64 / 7.0 - 0.4)
}

#[test]
fn rejects_cycles_and_bad_references() {
    let cyc = vec![
        Node::new("a", conv(1, 1, 1, 1)).with_inputs(["b"]),
        Node::new("b", conv(1, 1, 1, 1)).with_inputs(["a"]),
    ];
    assert!(matches!(ModelGraph::new(spec(1, 4), cyc), Err(Error::Cycle(_))));

    let unknown = vec![Node::new("a", conv(1, 1, 1, 1)).with_inputs(["nope"])];
    assert_eq!(
        ModelGraph::new(spec(1, 4), unknown).unwrap_err(),
        Error::UnknownNode("nope".into())
    );

    let dup = vec![Node::new("a", conv(1, 1, 1, 1)), Node::new("a", conv(1, 1, 1, 1))];
    assert!(matches!(ModelGraph::new(spec(1, 4), dup), Err(Error::DuplicateNode(_))));

    let forked = vec![
        Node::new("a", conv(1, 1, 1, 1)),
        Node::new("b", conv(1, 1, 1, 1)).with_inputs([INPUT]),
    ];
    assert_eq!(ModelGraph::new(spec(1, 4), forked).unwrap_err(), Error::OutputCount(2));

    let arity = vec![Node::new("a", Op::Add)];
    assert!(matches!(ModelGraph::new(spec(1, 4), arity), Err(Error::InputArity { .. })));
}

#[test]
fn residual_shapes_must_agree() {
    let nodes = vec![
        Node::new("down", conv(1, 1, 3, 2)),
        Node::new("sum", Op::Add).with_inputs(["down", INPUT]),
    ];
    assert!(matches!(
        ModelGraph::new(spec(1, 8), nodes),
        Err(Error::ResidualMismatch { .. })
    ));
}

#[test]
fn nodes_are_sorted_topologically() {
    let nodes = vec![
        Node::new("sum", Op::Add).with_inputs(["a", "b"]),
        Node::new("b", conv(1, 1, 3, 1)).with_inputs(["a"]),
        Node::new("a", conv(1, 1, 1, 1)).with_inputs([INPUT]),
    ];
    let m = ModelGraph::new(spec(1, 4), nodes).unwrap();
    let order: Vec<&str> = m.nodes().iter().map(|n| n.id.as_str()).collect();
    assert_eq!(order, ["a", "b", "sum"]);
    assert_eq!(m.output_id(), "sum");
}

#[test]
fn convert_replaces_activations_and_maxpool() {
    let nodes = vec![
        Node::new("c1", conv(1, 2, 3, 1)),
        Node::new("r1", Op::Activation(Activation::Relu)),
        Node::new("mp", Op::MaxPool { window: 2, stride: 2 }),
        Node::new("c2", conv(2, 2, 3, 1)),
        Node::new("s1", Op::Activation(Activation::Silu)),
    ];
    let m = ModelGraph::new(spec(1, 12), nodes).unwrap();
    let (conv1, summary) = convert_model(&m, Preset::Relu, Some(16)).unwrap();
    assert_eq!(summary.activations, ["r1", "s1"]);
    assert_eq!(summary.maxpools, ["mp"]);
    assert_eq!(summary.resized, Some(Resize { from: (12, 12), to: 16 }));
    assert_eq!(conv1.input().height, 16);
    assert_eq!(conv1.output_shape(), [2, 8, 8]);
    for n in conv1.nodes() {
        assert!(!matches!(
            n.op,
            Op::MaxPool { .. } | Op::Activation(Activation::Relu) | Op::Activation(Activation::Silu)
        ));
    }
    let Op::Activation(Activation::PolyActRn(p)) = &conv1.nodes()[1].op else {
        panic!("r1 not converted");
    };
    assert_eq!(p.running_max, [1.0, 1.0]);

    let (conv2, again) = convert_model(&conv1, Preset::Silu, Some(16)).unwrap();
    assert_eq!(conv2, conv1);
    assert!(again.is_empty());
}

#[test]
fn plan_follows_propagation_rules() {
    let nodes = vec![
        Node::new("c1", conv(1, 2, 3, 1)),
        Node::new("pool", Op::AvgPool { window: 2, stride: 2 }),
        Node::new("c2", conv(2, 4, 3, 2)),
        Node::new("up", Op::Upsample { factor: 2 }),
        Node::new("c3", conv(4, 1, 1, 1)),
    ];
    let m = ModelGraph::new(spec(1, 16), nodes).unwrap();
    let ctx = HEContext::new(64, 20).unwrap();
    let p = plan(&m, &ctx, 8).unwrap();
    let factors: Vec<i32> = p.entries.iter().map(|e| e.output.factor().log2()).collect();
    assert_eq!(factors, [1, 0, -1, 0, 0]);
    assert_eq!(p.input.factor(), PackingFactor::from_log2(1));
    assert!(p.entries.iter().all(|e| !e.bootstrap_before));
    assert_eq!(p.entries.last().unwrap().level_after, 20 - 5);

    let x = ramp(1, 16);
    let (y, report) = execute(&m, &ctx, &pack(&x, 8, &ctx).unwrap()).unwrap();
    assert_eq!(report.totals(), p.totals());
    let d = unpack(&y).unwrap().max_abs_diff(&oracle_pipeline(&m, &x).unwrap());
    assert!(d < 1e-12, "{d}");
}

#[test]
fn lazy_bootstrap_when_levels_run_out() {
    let nodes = vec![
        Node::new("c1", conv(1, 1, 3, 1)),
        Node::new("a1", polyact(1)),
        Node::new("c2", conv(1, 1, 3, 1)),
        Node::new("a2", polyact(1)),
    ];
    let m = ModelGraph::new(spec(1, 8), nodes).unwrap();
    let ctx = HEContext::new(16, 4).unwrap();
    let p = plan(&m, &ctx, 4).unwrap();
    let boots: Vec<bool> = p.entries.iter().map(|e| e.bootstrap_before).collect();
    // 4 -> 3 -> 0, then c2 needs a refresh: 4 -> 3 -> 0
    assert_eq!(boots, [false, false, true, false]);
    assert_eq!(p.entries[2].predicted.bootstraps, 4);
    assert_eq!(p.totals().max_depth, 3);

    let x = ramp(1, 8);
    let (y, report) = execute(&m, &ctx, &pack(&x, 4, &ctx).unwrap()).unwrap();
    assert_eq!(report.layers[2].counts.bootstraps, 4);
    assert_eq!(y.level(), 0);
    let d = unpack(&y).unwrap().max_abs_diff(&oracle_pipeline(&m, &x).unwrap());
    assert!(d < 1e-9, "{d}");
}

#[test]
fn infeasible_and_unconvertible_graphs() {
    let ctx = HEContext::new(16, 2).unwrap();
    let m = ModelGraph::new(spec(1, 4), vec![Node::new("a", polyact(1))]).unwrap();
    assert!(matches!(plan(&m, &ctx, 4), Err(Error::Infeasible { .. })));

    let ctx = HEContext::new(16, 4).unwrap();
    let m = ModelGraph::new(spec(1, 4), vec![Node::new("r", Op::Activation(Activation::Relu))]).unwrap();
    assert_eq!(plan(&m, &ctx, 4).unwrap_err(), Error::Unconvertible("r".into()));

    let m = ModelGraph::new(spec(1, 8), vec![Node::new("c", conv(1, 1, 3, 4))]).unwrap();
    assert!(matches!(plan(&m, &ctx, 4), Err(Error::Infeasible { .. })));
}

#[test]
fn tampered_plan_is_detected() {
    let m = ModelGraph::new(spec(1, 8), vec![Node::new("c", conv(1, 1, 3, 1))]).unwrap();
    let ctx = HEContext::new(16, 4).unwrap();
    let mut p = plan(&m, &ctx, 4).unwrap();
    p.entries[0].predicted.rotations += 1;
    let x = pack(&ramp(1, 8), 4, &ctx).unwrap();
    assert!(matches!(
        exec::execute_plan(&m, &p, &ctx, &x),
        Err(Error::PlanDivergence { .. })
    ));
}

#[test]
fn identity_graph_keeps_values() {
    let bn = AffineSpec::new(vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
    let m = ModelGraph::new(spec(2, 4), vec![Node::new("bn", Op::BatchNorm(bn))]).unwrap();
    let ctx = HEContext::new(64, 3).unwrap();
    let x = ramp(2, 4);
    let (y, _) = execute(&m, &ctx, &pack(&x, 8, &ctx).unwrap()).unwrap();
    assert_eq!(unpack(&y).unwrap(), x);
}

#[test]
fn residual_block_adds_without_rotations() {
    let nodes = vec![
        Node::new("c1", conv(2, 2, 3, 1)),
        Node::new("a1", polyact(2)),
        Node::new("sum", Op::Add).with_inputs(["a1", INPUT]),
    ];
    let m = ModelGraph::new(spec(2, 8), nodes).unwrap();
    let ctx = HEContext::new(64, 6).unwrap();
    let x = ramp(2, 8);
    let (y, report) = execute(&m, &ctx, &pack(&x, 4, &ctx).unwrap()).unwrap();
    let add = &report.layers[2].counts;
    assert_eq!((add.rotations, add.adds, add.max_depth), (0, 8, 0));
    assert_eq!(y.level(), 2);
    let d = unpack(&y).unwrap().max_abs_diff(&oracle_pipeline(&m, &x).unwrap());
    assert!(d < 1e-9, "{d}");
}

#[test]
fn report_merge_and_totals() {
    let mut a = CostReport::default();
    a.layers.push(LayerCost {
        node: "x".into(),
        kind: "conv".into(),
        counts: crate::slotvm::OpCounts {
            rotations: 2,
            max_depth: 1,
            ..Default::default()
        },
    });
    let mut b = a.clone();
    b.layers[0].counts.max_depth = 3;
    a.merge(&b);
    let t = a.totals();
    assert_eq!((t.rotations, t.max_depth), (4, 3));
}

#[test]
fn residual_add_with_deeper_second_operand() {
    let nodes = vec![
        Node::new("c1", conv(1, 1, 3, 1)),
        Node::new("sum", Op::Add).with_inputs([INPUT, "c1"]),
    ];
    let m = ModelGraph::new(spec(1, 4), nodes).unwrap();
    let ctx = HEContext::new(16, 3).unwrap();
    let (y, report) = execute(&m, &ctx, &pack(&ramp(1, 4), 4, &ctx).unwrap()).unwrap();
    assert_eq!(report.layers[1].counts.max_depth, 0);
    assert_eq!(y.level(), 2);
}
