use alloc::string::String;
use alloc::vec::Vec;

use super::{Activation, InputSpec, ModelGraph, Op, PolyActRn, Resize};
use crate::error::Result;
use crate::polyact::Preset;

/// Node ids touched by [`convert_model`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConversionSummary {
    /// Activations replaced by PolyAct-RN, in graph order.
    pub activations: Vec<String>,
    /// MaxPool layers replaced by AvgPool.
    pub maxpools: Vec<String>,
    pub resized: Option<Resize>,
}

impl ConversionSummary {
    pub fn is_empty(&self) -> bool {
        self.activations.is_empty() && self.maxpools.is_empty() && self.resized.is_none()
    }
}

/// Structural conversion to an FHE-friendly graph: every ReLU/SiLU becomes a
/// PolyAct-RN layer using `preset`, every MaxPool an AvgPool with the same
/// window and stride, and the input is optionally declared resized to a
/// `resize_to x resize_to` resolution. Existing PolyAct-RN layers are left
/// alone, so converting twice is the same as converting once.
pub fn convert_model(
    m: &ModelGraph,
    preset: Preset,
    resize_to: Option<usize>,
) -> Result<(ModelGraph, ConversionSummary)> {
    let mut summary = ConversionSummary::default();
    let mut nodes = Vec::with_capacity(m.nodes().len());
    for node in m.nodes() {
        let mut node = node.clone();
        match &node.op {
            Op::Activation(Activation::Relu) | Op::Activation(Activation::Silu) => {
                let channels = m.shape_of(&node.inputs[0]).expect("validated graph")[0];
                node.op = Op::Activation(Activation::PolyActRn(PolyActRn::new(preset, channels)));
                summary.activations.push(node.id.clone());
            }
            Op::MaxPool { window, stride } => {
                node.op = Op::AvgPool {
                    window: *window,
                    stride: *stride,
                };
                summary.maxpools.push(node.id.clone());
            }
            _ => {}
        }
        nodes.push(node);
    }

    let mut input = m.input();
    let mut resize = m.resize();
    if let Some(to) = resize_to {
        if input.height != to || input.width != to {
            let from = resize.map_or((input.height, input.width), |r| r.from);
            let r = Resize { from, to };
            summary.resized = Some(r);
            resize = Some(r);
            input = InputSpec {
                height: to,
                width: to,
                ..input
            };
        }
    }
    Ok((ModelGraph::with_resize(input, resize, nodes)?, summary))
}
