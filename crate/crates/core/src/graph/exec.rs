use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::ToString;

use super::plan::{plan_with_level, Plan};
use super::{Activation, CostReport, LayerCost, ModelGraph, Op, INPUT};
use crate::error::{Error, Result};
use crate::hops;
use crate::oracle;
use crate::packing::{PackedTensor, PlainTensor};
use crate::polyact;
use crate::slotvm::HEContext;

/// Runs a converted graph on a packed input.
///
/// The graph is planned for the input's layout and level first; the measured
/// per-node counts must equal the plan exactly, otherwise execution stops with
/// [`Error::PlanDivergence`]. Counts are read from `ctx`, so nothing else may
/// use the context concurrently.
pub fn execute(m: &ModelGraph, ctx: &HEContext, x: &PackedTensor) -> Result<(PackedTensor, CostReport)> {
    let plan = plan_with_level(m, ctx, x.layout().base(), x.level())?;
    execute_plan(m, &plan, ctx, x)
}

pub fn execute_plan(
    m: &ModelGraph,
    plan: &Plan,
    ctx: &HEContext,
    x: &PackedTensor,
) -> Result<(PackedTensor, CostReport)> {
    if *x.layout() != plan.input || x.level() != plan.input_level {
        return Err(Error::InvalidLayout(format!(
            "input {:?} at level {} does not match the plan ({:?} at level {})",
            x.layout(),
            x.level(),
            plan.input,
            plan.input_level
        )));
    }
    if plan.entries.len() != m.nodes().len() {
        return Err(Error::InvalidParameter("plan does not belong to this graph".into()));
    }

    // Remaining consumers per value, so tensors can be dropped early.
    let mut uses: BTreeMap<&str, usize> = BTreeMap::new();
    for n in m.nodes() {
        for i in &n.inputs {
            *uses.entry(i.as_str()).or_default() += 1;
        }
    }
    let mut values: BTreeMap<&str, PackedTensor> = BTreeMap::new();
    values.insert(INPUT, x.clone());
    let mut report = CostReport::default();

    for (node, entry) in m.nodes().iter().zip(&plan.entries) {
        if node.id != entry.node {
            return Err(Error::InvalidParameter("plan does not belong to this graph".into()));
        }
        let diverged = |detail: alloc::string::String| Error::PlanDivergence {
            node: node.id.clone(),
            detail,
        };
        let before = ctx.counters();
        let mut input = values[node.inputs[0].as_str()].clone();
        if entry.bootstrap_before {
            input = hops::bootstrap(ctx, &input)?;
        }
        // An add joins at the lower operand level without consuming depth.
        let start_level = match node.inputs.get(1) {
            Some(other) => input.level().min(values[other.as_str()].level()),
            None => input.level(),
        };
        let out = match &node.op {
            Op::Conv(spec) => hops::conv2d(ctx, &input, spec)?,
            Op::Deconv(spec) => hops::deconv2d(ctx, &input, spec)?,
            Op::AvgPool { window, stride } => hops::avgpool(ctx, &input, *window, *stride)?,
            Op::Upsample { factor } => hops::upsample_nearest(ctx, &input, *factor)?,
            Op::BatchNorm(spec) => hops::batchnorm_affine(ctx, &input, spec)?,
            Op::Activation(Activation::PolyActRn(p)) => {
                hops::polyact_eval(ctx, &input, &p.state().fused_coefficients()?)?
            }
            Op::Add => {
                let other = &values[node.inputs[1].as_str()];
                hops::add(ctx, &input, other)?
            }
            Op::MaxPool { .. } | Op::Activation(_) => {
                return Err(Error::Unconvertible(node.id.clone()))
            }
        };
        let mut measured = ctx.counters() - before;
        measured.max_depth = start_level - out.level();

        if measured != entry.predicted {
            return Err(diverged(format!(
                "measured {measured:?}, planned {:?}",
                entry.predicted
            )));
        }
        if *out.layout() != entry.output || out.level() != entry.level_after {
            return Err(diverged(format!(
                "output {:?} at level {}, planned {:?} at level {}",
                out.layout(),
                out.level(),
                entry.output,
                entry.level_after
            )));
        }
        report.layers.push(LayerCost {
            node: node.id.clone(),
            kind: node.op.kind_name().to_string(),
            counts: measured,
        });

        for i in &node.inputs {
            let left = uses.get_mut(i.as_str()).expect("counted");
            *left -= 1;
            if *left == 0 {
                values.remove(i.as_str());
            }
        }
        values.insert(&node.id, out);
    }
    let out = values
        .remove(m.output_id())
        .expect("output node was executed");
    Ok((out, report))
}

/// Plaintext evaluation of a graph with the reference operators. Accepts
/// unconverted graphs (ReLU, SiLU, MaxPool).
pub fn oracle_pipeline(m: &ModelGraph, x: &PlainTensor) -> Result<PlainTensor> {
    let spec = m.input();
    if x.shape() != [spec.channels, spec.height, spec.width] {
        return Err(Error::ShapeMismatch(format!(
            "input {:?}, graph expects {:?}",
            x.shape(),
            [spec.channels, spec.height, spec.width]
        )));
    }
    let mut values: BTreeMap<&str, PlainTensor> = BTreeMap::new();
    values.insert(INPUT, x.clone());
    for node in m.nodes() {
        let input = &values[node.inputs[0].as_str()];
        let out = match &node.op {
            Op::Conv(spec) => oracle::conv2d_ref(input, spec)?,
            Op::Deconv(spec) => oracle::deconv2d_ref(input, spec)?,
            Op::AvgPool { window, stride } => oracle::avgpool_ref(input, *window, *stride)?,
            Op::MaxPool { window, stride } => oracle::maxpool_ref(input, *window, *stride)?,
            Op::Upsample { factor } => oracle::upsample_ref(input, *factor),
            Op::BatchNorm(spec) => oracle::affine_ref(input, spec)?,
            Op::Activation(Activation::Relu) => oracle::relu_ref(input),
            Op::Activation(Activation::Silu) => PlainTensor::from_fn(
                input.channels(),
                input.height(),
                input.width(),
                |c, y, xx| polyact::silu(input.get(c, y, xx)),
            ),
            Op::Activation(Activation::PolyActRn(p)) => {
                let mut out = p.state().forward_inference(core::slice::from_ref(input))?;
                out.pop().expect("one tensor in, one out")
            }
            Op::Add => oracle::add_ref(input, &values[node.inputs[1].as_str()])?,
        };
        values.insert(&node.id, out);
    }
    Ok(values.remove(m.output_id()).expect("output node was evaluated"))
}
