//! Model graphs: representation, conversion to an FHE-friendly form,
//! level/packing planning and packed execution.

mod convert;
mod exec;
mod plan;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hops::{AffineSpec, ConvSpec, DeconvSpec};
use crate::polyact::{Mode, PolyActState, Preset};
use crate::slotvm::OpCounts;

pub use convert::{convert_model, ConversionSummary};
pub use exec::{execute, execute_plan, oracle_pipeline};
pub use plan::{plan, plan_with_level, Plan, PlanEntry};

/// Name under which nodes refer to the graph input.
pub const INPUT: &str = "input";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Input resize recorded by conversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resize {
    pub from: (usize, usize),
    pub to: usize,
}

/// Inference-time PolyAct-RN layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyActRn {
    pub preset: Preset,
    pub gamma: f64,
    pub epsilon: f64,
    /// Per-channel running maxima.
    pub running_max: Vec<f64>,
}

impl PolyActRn {
    pub fn new(preset: Preset, channels: usize) -> Self {
        Self {
            preset,
            gamma: PolyActState::DEFAULT_GAMMA,
            epsilon: PolyActState::DEFAULT_EPSILON,
            running_max: alloc::vec![1.0; channels],
        }
    }

    pub fn state(&self) -> PolyActState {
        PolyActState {
            coeffs: self.preset.coeffs(),
            gamma: self.gamma,
            beta: PolyActState::DEFAULT_BETA,
            epsilon: self.epsilon,
            running_max: self.running_max.clone(),
            mode: Mode::Inference,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    Relu,
    Silu,
    PolyActRn(PolyActRn),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Conv(ConvSpec),
    Deconv(DeconvSpec),
    AvgPool { window: usize, stride: usize },
    MaxPool { window: usize, stride: usize },
    Upsample { factor: usize },
    BatchNorm(AffineSpec),
    Activation(Activation),
    /// Residual join of two inputs.
    Add,
}

impl Op {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Op::Conv(_) => "conv",
            Op::Deconv(_) => "deconv",
            Op::AvgPool { .. } => "avgpool",
            Op::MaxPool { .. } => "maxpool",
            Op::Upsample { .. } => "upsample",
            Op::BatchNorm(_) => "batchnorm",
            Op::Activation(Activation::Relu) => "relu",
            Op::Activation(Activation::Silu) => "silu",
            Op::Activation(Activation::PolyActRn(_)) => "polyact_rn",
            Op::Add => "add",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Op::Add => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    /// Producer ids; empty means "the previously listed node" (or the graph
    /// input for the first node).
    pub inputs: Vec<String>,
    pub op: Op,
}

impl Node {
    pub fn new(id: impl Into<String>, op: Op) -> Self {
        Self {
            id: id.into(),
            inputs: Vec::new(),
            op,
        }
    }

    pub fn with_inputs<I, S>(mut self, inputs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.inputs = inputs.into_iter().map(Into::into).collect();
        self
    }
}

/// Validated, topologically ordered operator graph with a single input and
/// a single output.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    input: InputSpec,
    resize: Option<Resize>,
    nodes: Vec<Node>,
    shapes: BTreeMap<String, [usize; 3]>,
}

impl ModelGraph {
    pub fn new(input: InputSpec, nodes: Vec<Node>) -> Result<Self> {
        Self::with_resize(input, None, nodes)
    }

    pub fn with_resize(input: InputSpec, resize: Option<Resize>, mut nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::OutputCount(0));
        }
        let mut ids = BTreeSet::new();
        for n in &nodes {
            if n.id == INPUT || !ids.insert(n.id.clone()) {
                return Err(Error::DuplicateNode(n.id.clone()));
            }
        }
        let mut previous = INPUT.to_string();
        for n in &mut nodes {
            if n.inputs.is_empty() {
                n.inputs.push(previous.clone());
            }
            if n.inputs.len() != n.op.arity() {
                return Err(Error::InputArity {
                    node: n.id.clone(),
                    expected: n.op.arity(),
                    got: n.inputs.len(),
                });
            }
            for i in &n.inputs {
                if i != INPUT && !ids.contains(i) {
                    return Err(Error::UnknownNode(i.clone()));
                }
            }
            previous = n.id.clone();
        }
        let nodes = topo_sort(nodes)?;

        let consumed: BTreeSet<&str> = nodes
            .iter()
            .flat_map(|n| n.inputs.iter().map(String::as_str))
            .collect();
        let sinks = nodes.iter().filter(|n| !consumed.contains(n.id.as_str())).count();
        if sinks != 1 {
            return Err(Error::OutputCount(sinks));
        }

        let shapes = infer_shapes(&input, &nodes)?;
        Ok(Self {
            input,
            resize,
            nodes,
            shapes,
        })
    }

    pub fn input(&self) -> InputSpec {
        self.input
    }

    pub fn resize(&self) -> Option<Resize> {
        self.resize
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Output shape `[C, H, W]` of node `id` (or of the graph input).
    pub fn shape_of(&self, id: &str) -> Option<[usize; 3]> {
        self.shapes.get(id).copied()
    }

    pub fn output_id(&self) -> &str {
        &self.nodes.last().expect("graph has nodes").id
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.shapes[self.output_id()]
    }
}

/// Stable Kahn sort: among ready nodes, the one listed first goes first.
fn topo_sort(nodes: Vec<Node>) -> Result<Vec<Node>> {
    let index: BTreeMap<&str, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    let mut pending: Vec<usize> = nodes
        .iter()
        .map(|n| n.inputs.iter().filter(|i| i.as_str() != INPUT).count())
        .collect();
    let mut consumers: Vec<Vec<usize>> = alloc::vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        for src in &n.inputs {
            if let Some(&j) = index.get(src.as_str()) {
                consumers[j].push(i);
            }
        }
    }
    let mut ready: BTreeSet<usize> = (0..nodes.len()).filter(|&i| pending[i] == 0).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &c in &consumers[i] {
            pending[c] -= 1;
            if pending[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() != nodes.len() {
        let stuck = (0..nodes.len()).find(|i| pending[*i] > 0).unwrap();
        return Err(Error::Cycle(nodes[stuck].id.clone()));
    }
    let mut slots: Vec<Option<Node>> = nodes.into_iter().map(Some).collect();
    Ok(order.into_iter().map(|i| slots[i].take().unwrap()).collect())
}

fn infer_shapes(input: &InputSpec, nodes: &[Node]) -> Result<BTreeMap<String, [usize; 3]>> {
    let mut shapes = BTreeMap::new();
    shapes.insert(INPUT.to_string(), [input.channels, input.height, input.width]);
    for n in nodes {
        let [c, h, w] = shapes[&n.inputs[0]];
        let mismatch = |what: String| Error::ShapeMismatch(format!("node '{}': {what}", n.id));
        let out = match &n.op {
            Op::Conv(spec) => {
                spec.validate()?;
                if spec.in_channels != c {
                    return Err(mismatch(format!(
                        "expects {} input channels, got {c}",
                        spec.in_channels
                    )));
                }
                let (k, s, p) = (spec.kernel, spec.stride, spec.padding);
                if h + 2 * p < k || w + 2 * p < k {
                    return Err(mismatch("kernel larger than padded input".into()));
                }
                [spec.out_channels, (h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1]
            }
            Op::Deconv(spec) => {
                spec.validate()?;
                if spec.in_channels != c {
                    return Err(mismatch(format!(
                        "expects {} input channels, got {c}",
                        spec.in_channels
                    )));
                }
                let grow = |d: usize| {
                    (d - 1) * spec.stride + spec.kernel + spec.output_padding() - 2 * spec.padding
                };
                [spec.out_channels, grow(h), grow(w)]
            }
            Op::AvgPool { window, stride } | Op::MaxPool { window, stride } => {
                if *window == 0 || *stride == 0 || *window > h || *window > w {
                    return Err(mismatch(format!("pool window {window} does not fit {h}x{w}")));
                }
                [c, (h - window) / stride + 1, (w - window) / stride + 1]
            }
            Op::Upsample { factor } => {
                if *factor == 0 {
                    return Err(mismatch("upsampling factor must be positive".into()));
                }
                [c, h * factor, w * factor]
            }
            Op::BatchNorm(spec) => {
                if spec.channels() != c || spec.shift.len() != c {
                    return Err(mismatch(format!(
                        "batchnorm has {} channels, input has {c}",
                        spec.channels()
                    )));
                }
                [c, h, w]
            }
            Op::Activation(Activation::PolyActRn(p)) => {
                if p.running_max.len() != c {
                    return Err(mismatch(format!(
                        "polyact_rn has {} running statistics, input has {c} channels",
                        p.running_max.len()
                    )));
                }
                p.state().validate()?;
                [c, h, w]
            }
            Op::Activation(_) => [c, h, w],
            Op::Add => {
                let other = shapes[&n.inputs[1]];
                if other != [c, h, w] {
                    return Err(Error::ResidualMismatch {
                        node: n.id.clone(),
                        detail: format!("shapes {:?} and {:?}", [c, h, w], other),
                    });
                }
                [c, h, w]
            }
        };
        shapes.insert(n.id.clone(), out);
    }
    Ok(shapes)
}

/// Operation counts of one executed (or planned) node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub node: String,
    pub kind: String,
    pub counts: OpCounts,
}

/// Per-layer cost breakdown. Totals are always derived from the layers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
}

impl CostReport {
    pub fn totals(&self) -> OpCounts {
        self.layers.iter().map(|l| l.counts).sum()
    }

    /// Adds `other` layer by layer (matched by node id); unknown layers are
    /// appended in order.
    pub fn merge(&mut self, other: &CostReport) {
        for layer in &other.layers {
            match self.layers.iter_mut().find(|l| l.node == layer.node) {
                Some(l) => l.counts += layer.counts,
                None => self.layers.push(layer.clone()),
            }
        }
    }
}

#[cfg(test)]
mod tests;
