use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{Activation, CostReport, LayerCost, ModelGraph, Op, INPUT};
use crate::error::{Error, Result};
use crate::hops::{self, OpPlan};
use crate::packing::GipLayout;
use crate::slotvm::{HEContext, OpCounts};

/// Planned layout, levels and cost of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanEntry {
    pub node: String,
    pub kind: &'static str,
    pub inputs: Vec<GipLayout>,
    pub output: GipLayout,
    /// Operation counts, including the bootstrap when one is scheduled.
    pub predicted: OpCounts,
    /// Level of the incoming tensor (lowest of both operands for an add).
    pub level_before: u32,
    pub level_after: u32,
    pub bootstrap_before: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub input: GipLayout,
    pub input_level: u32,
    pub entries: Vec<PlanEntry>,
}

impl Plan {
    pub fn output(&self) -> GipLayout {
        self.entries.last().expect("plan has entries").output
    }

    pub fn totals(&self) -> OpCounts {
        self.entries.iter().map(|e| e.predicted).sum()
    }

    pub fn as_report(&self) -> CostReport {
        CostReport {
            layers: self
                .entries
                .iter()
                .map(|e| LayerCost {
                    node: e.node.clone(),
                    kind: e.kind.to_string(),
                    counts: e.predicted,
                })
                .collect(),
        }
    }
}

/// Plans a converted graph for an input packed on a `base x base` grid at
/// the context's maximum level.
pub fn plan(m: &ModelGraph, ctx: &HEContext, base: usize) -> Result<Plan> {
    plan_with_level(m, ctx, base, ctx.max_level())
}

/// Like [`plan`], for an input arriving at `input_level`.
///
/// Packing factors follow the propagation rules node by node. A bootstrap is
/// scheduled lazily: right before the first node whose depth exceeds the
/// remaining level of its input.
pub fn plan_with_level(m: &ModelGraph, ctx: &HEContext, base: usize, input_level: u32) -> Result<Plan> {
    let spec = m.input();
    if spec.height != spec.width {
        return Err(Error::InvalidLayout(format!(
            "input {}x{} is not square",
            spec.height, spec.width
        )));
    }
    let input = GipLayout::new(spec.channels, spec.height, base)?;
    input.check_capacity(ctx.slot_count())?;
    let s = ctx.slot_count();

    let mut state: BTreeMap<&str, (GipLayout, u32)> = BTreeMap::new();
    state.insert(INPUT, (input, input_level));
    let mut entries = Vec::with_capacity(m.nodes().len());

    for node in m.nodes() {
        let infeasible = |e: Error| Error::Infeasible {
            node: node.id.clone(),
            detail: e.to_string(),
        };
        let (layout, level) = state[node.inputs[0].as_str()];
        let mut inputs = alloc::vec![layout];
        let op_plan: OpPlan = match &node.op {
            Op::Conv(spec) => hops::conv2d_plan(&layout, spec, s).map_err(infeasible)?,
            Op::Deconv(spec) => hops::deconv2d_plan(&layout, spec, s).map_err(infeasible)?,
            Op::AvgPool { window, stride } => {
                hops::avgpool_plan(&layout, *window, *stride, s).map_err(infeasible)?
            }
            Op::Upsample { factor } => hops::upsample_plan(&layout, *factor, s).map_err(infeasible)?,
            Op::BatchNorm(spec) => hops::batchnorm_plan(&layout, spec, s).map_err(infeasible)?,
            Op::Activation(Activation::PolyActRn(p)) => {
                let coeffs = p.state().fused_coefficients().map_err(infeasible)?;
                hops::polyact_plan(&layout, &coeffs, s).map_err(infeasible)?
            }
            Op::MaxPool { .. } | Op::Activation(_) => {
                return Err(Error::Unconvertible(node.id.clone()));
            }
            Op::Add => {
                let (other, other_level) = state[node.inputs[1].as_str()];
                if other != layout {
                    return Err(Error::ResidualMismatch {
                        node: node.id.clone(),
                        detail: format!(
                            "packing factors {} and {} (channels {} / {})",
                            layout.factor(),
                            other.factor(),
                            layout.channels(),
                            other.channels()
                        ),
                    });
                }
                inputs.push(other);
                let level = level.min(other_level);
                entries.push(PlanEntry {
                    node: node.id.clone(),
                    kind: node.op.kind_name(),
                    inputs,
                    output: layout,
                    predicted: hops::add_plan(&layout).counts,
                    level_before: level,
                    level_after: level,
                    bootstrap_before: false,
                });
                state.insert(&node.id, (layout, level));
                continue;
            }
        };

        if op_plan.depth > ctx.refresh_level() {
            return Err(Error::Infeasible {
                node: node.id.clone(),
                detail: format!(
                    "needs {} levels but bootstrapping only restores {}",
                    op_plan.depth,
                    ctx.refresh_level()
                ),
            });
        }
        let bootstrap_before = level < op_plan.depth;
        let mut predicted = op_plan.counts;
        let start = if bootstrap_before {
            predicted.bootstraps += layout.ciphertext_count() as u64;
            ctx.refresh_level()
        } else {
            level
        };
        predicted.max_depth = op_plan.depth;
        let level_after = start - op_plan.depth;
        entries.push(PlanEntry {
            node: node.id.clone(),
            kind: node.op.kind_name(),
            inputs,
            output: op_plan.output,
            predicted,
            level_before: level,
            level_after,
            bootstrap_before,
        });
        state.insert(&node.id, (op_plan.output, level_after));
    }

    Ok(Plan {
        input,
        input_level,
        entries,
    })
}
