//! Model files: a JSON document listing nodes in topological order, with
//! weights in sidecar tensor files referenced by path relative to the model
//! file. See `docs/model-format.md` for the schema.

use std::fs;
use std::path::{Path, PathBuf};

use gip_core::polyact::Preset;
use gip_core::{
    Activation, AffineSpec, ConvSpec, DeconvSpec, InputSpec, ModelGraph, Node, Op, PolyActRn,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::tensor_io::{read_tensor, write_tensor, Dtype, RawTensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub version: u32,
    pub input: InputDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resize: Option<ResizeDoc>,
    pub nodes: Vec<NodeDoc>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDoc {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResizeDoc {
    pub from: [usize; 2],
    pub to: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: String,
    /// Empty means the previous node (or the graph input for the first one).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
    #[serde(flatten)]
    pub op: OpDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OpDoc {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        padding: Option<usize>,
        weights: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<PathBuf>,
    },
    Deconv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        weights: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<PathBuf>,
    },
    Avgpool {
        window: usize,
        stride: usize,
    },
    Maxpool {
        window: usize,
        stride: usize,
    },
    Upsample {
        factor: usize,
    },
    Batchnorm {
        scale: PathBuf,
        shift: PathBuf,
    },
    Activation {
        /// `relu`, `silu` or `polyact_rn`.
        function: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        preset: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epsilon: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        running_max: Option<Vec<f64>>,
    },
    Add,
}

pub fn load_model(path: &Path) -> Result<ModelGraph> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let doc: ModelDoc =
        serde_json::from_str(&text).map_err(|e| CliError::schema(path, e.to_string()))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    from_doc(doc, dir, path)
}

fn read_sidecar(dir: &Path, rel: &Path, model: &Path) -> Result<(PathBuf, RawTensor)> {
    let full = dir.join(rel);
    if !full.is_file() {
        return Err(CliError::schema(
            model,
            format!("dangling weight reference '{}'", rel.display()),
        ));
    }
    let t = read_tensor(&full)?;
    Ok((full, t))
}

fn sidecar(dir: &Path, rel: &Path, dims: &[usize], model: &Path) -> Result<Vec<f64>> {
    let (full, t) = read_sidecar(dir, rel, model)?;
    if t.dims != dims {
        return Err(CliError::schema(
            &full,
            format!("dims {:?}, node expects {:?}", t.dims, dims),
        ));
    }
    Ok(t.data)
}

fn from_doc(doc: ModelDoc, dir: &Path, model: &Path) -> Result<ModelGraph> {
    if doc.version != FORMAT_VERSION {
        return Err(CliError::schema(
            model,
            format!("unsupported format version {}", doc.version),
        ));
    }
    let mut nodes = Vec::with_capacity(doc.nodes.len());
    for n in doc.nodes {
        let bad = |detail: String| CliError::schema(model, format!("node '{}': {detail}", n.id));
        let op = match n.op {
            OpDoc::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                weights,
                bias,
            } => {
                let dims = [out_channels, in_channels, kernel, kernel];
                let w = sidecar(dir, &weights, &dims, model)?;
                let mut spec = ConvSpec::new(in_channels, out_channels, kernel, stride, w)?;
                if let Some(p) = padding {
                    spec.padding = p;
                }
                if let Some(b) = bias {
                    spec = spec.with_bias(sidecar(dir, &b, &[out_channels], model)?)?;
                }
                Op::Conv(spec)
            }
            OpDoc::Deconv {
                in_channels,
                out_channels,
                kernel,
                stride,
                weights,
                bias,
            } => {
                let dims = [in_channels, out_channels, kernel, kernel];
                let w = sidecar(dir, &weights, &dims, model)?;
                let mut spec = DeconvSpec::new(in_channels, out_channels, kernel, stride, w)?;
                if let Some(b) = bias {
                    spec = spec.with_bias(sidecar(dir, &b, &[out_channels], model)?)?;
                }
                Op::Deconv(spec)
            }
            OpDoc::Avgpool { window, stride } => Op::AvgPool { window, stride },
            OpDoc::Maxpool { window, stride } => Op::MaxPool { window, stride },
            OpDoc::Upsample { factor } => Op::Upsample { factor },
            OpDoc::Batchnorm { scale, shift } => {
                let (full, scale) = read_sidecar(dir, &scale, model)?;
                if scale.dims.len() != 1 {
                    return Err(CliError::schema(full, "batchnorm scale must be a vector"));
                }
                let shift = sidecar(dir, &shift, &scale.dims, model)?;
                let scale = scale.data;
                Op::BatchNorm(AffineSpec::new(scale, shift)?)
            }
            OpDoc::Activation {
                function,
                preset,
                gamma,
                epsilon,
                running_max,
            } => match function.as_str() {
                "relu" => Op::Activation(Activation::Relu),
                "silu" => Op::Activation(Activation::Silu),
                "polyact_rn" => {
                    let name = preset.ok_or_else(|| bad("polyact_rn needs a preset".into()))?;
                    let preset = Preset::from_name(&name)
                        .ok_or_else(|| bad(format!("unknown preset '{name}'")))?;
                    let running_max =
                        running_max.ok_or_else(|| bad("polyact_rn needs running_max".into()))?;
                    let mut p = PolyActRn::new(preset, running_max.len());
                    p.running_max = running_max;
                    if let Some(g) = gamma {
                        p.gamma = g;
                    }
                    if let Some(e) = epsilon {
                        p.epsilon = e;
                    }
                    Op::Activation(Activation::PolyActRn(p))
                }
                other => return Err(bad(format!("unknown activation '{other}'"))),
            },
            OpDoc::Add => Op::Add,
        };
        nodes.push(Node::new(n.id, op).with_inputs(n.inputs));
    }
    let input = InputSpec {
        channels: doc.input.channels,
        height: doc.input.height,
        width: doc.input.width,
    };
    let resize = doc.resize.map(|r| gip_core::graph::Resize {
        from: (r.from[0], r.from[1]),
        to: r.to,
    });
    Ok(ModelGraph::with_resize(input, resize, nodes)?)
}

/// Writes `m` to `path` with sidecars `<stem>.<node>.<param>.tensor` next to it.
pub fn save_model(path: &Path, m: &ModelGraph) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CliError::Usage(format!("bad model path '{}'", path.display())))?;
    let write = |id: &str, param: &str, dims: Vec<usize>, data: &[f64]| -> Result<PathBuf> {
        let name = PathBuf::from(format!("{stem}.{id}.{param}.tensor"));
        let t = RawTensor {
            dims,
            data: data.to_vec(),
        };
        write_tensor(&dir.join(&name), &t, Dtype::F32)?;
        Ok(name)
    };

    let mut nodes = Vec::with_capacity(m.nodes().len());
    for n in m.nodes() {
        let id = n.id.as_str();
        let op = match &n.op {
            Op::Conv(s) => OpDoc::Conv {
                in_channels: s.in_channels,
                out_channels: s.out_channels,
                kernel: s.kernel,
                stride: s.stride,
                padding: (s.padding != (s.kernel.saturating_sub(1)) / 2).then_some(s.padding),
                weights: write(
                    id,
                    "weight",
                    vec![s.out_channels, s.in_channels, s.kernel, s.kernel],
                    &s.weights,
                )?,
                bias: match &s.bias {
                    Some(b) => Some(write(id, "bias", vec![b.len()], b)?),
                    None => None,
                },
            },
            Op::Deconv(s) => OpDoc::Deconv {
                in_channels: s.in_channels,
                out_channels: s.out_channels,
                kernel: s.kernel,
                stride: s.stride,
                weights: write(
                    id,
                    "weight",
                    vec![s.in_channels, s.out_channels, s.kernel, s.kernel],
                    &s.weights,
                )?,
                bias: match &s.bias {
                    Some(b) => Some(write(id, "bias", vec![b.len()], b)?),
                    None => None,
                },
            },
            Op::AvgPool { window, stride } => OpDoc::Avgpool {
                window: *window,
                stride: *stride,
            },
            Op::MaxPool { window, stride } => OpDoc::Maxpool {
                window: *window,
                stride: *stride,
            },
            Op::Upsample { factor } => OpDoc::Upsample { factor: *factor },
            Op::BatchNorm(s) => OpDoc::Batchnorm {
                scale: write(id, "scale", vec![s.scale.len()], &s.scale)?,
                shift: write(id, "shift", vec![s.shift.len()], &s.shift)?,
            },
            Op::Activation(a) => {
                let plain = |f: &str| OpDoc::Activation {
                    function: f.into(),
                    preset: None,
                    gamma: None,
                    epsilon: None,
                    running_max: None,
                };
                match a {
                    Activation::Relu => plain("relu"),
                    Activation::Silu => plain("silu"),
                    Activation::PolyActRn(p) => OpDoc::Activation {
                        function: "polyact_rn".into(),
                        preset: Some(p.preset.name().into()),
                        gamma: Some(p.gamma),
                        epsilon: Some(p.epsilon),
                        running_max: Some(p.running_max.clone()),
                    },
                }
            }
            Op::Add => OpDoc::Add,
        };
        nodes.push(NodeDoc {
            id: n.id.clone(),
            inputs: n.inputs.clone(),
            op,
        });
    }
    let input = m.input();
    let doc = ModelDoc {
        version: FORMAT_VERSION,
        input: InputDoc {
            channels: input.channels,
            height: input.height,
            width: input.width,
        },
        resize: m.resize().map(|r| ResizeDoc {
            from: [r.from.0, r.from.1],
            to: r.to,
        }),
        nodes,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("model serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}
