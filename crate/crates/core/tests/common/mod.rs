//! Random inputs, operator specs and graphs shared by the integration suites.
#![allow(dead_code)]

use gip_core::polyact::Preset;
use gip_core::{
    Activation, AffineSpec, ConvSpec, DeconvSpec, InputSpec, ModelGraph, Node, Op, PlainTensor,
    PolyActRn,
};
use rand::seq::SliceRandom;
use rand::Rng;

pub const GRAPH_SLOTS: usize = 256;
pub const GRAPH_LEVELS: u32 = 6;

pub fn uniform_tensor<R: Rng>(rng: &mut R, c: usize, h: usize) -> PlainTensor {
    PlainTensor::from_fn(c, h, h, |_, _, _| rng.gen_range(-1.0..1.0))
}

fn uniform_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn random_conv<R: Rng>(rng: &mut R, ci: usize, co: usize, k: usize, s: usize) -> ConvSpec {
    let scale = 1.0 / ((ci * k * k) as f64).sqrt();
    let spec = ConvSpec::new(ci, co, k, s, uniform_vec(rng, co * ci * k * k, scale)).unwrap();
    if rng.gen_bool(0.5) {
        spec.with_bias(uniform_vec(rng, co, 0.5)).unwrap()
    } else {
        spec
    }
}

pub fn random_deconv<R: Rng>(rng: &mut R, ci: usize, co: usize, k: usize, s: usize) -> DeconvSpec {
    let scale = 1.0 / ((ci * k * k) as f64).sqrt();
    let spec = DeconvSpec::new(ci, co, k, s, uniform_vec(rng, ci * co * k * k, scale)).unwrap();
    if rng.gen_bool(0.5) {
        spec.with_bias(uniform_vec(rng, co, 0.5)).unwrap()
    } else {
        spec
    }
}

pub fn random_affine<R: Rng>(rng: &mut R, c: usize) -> AffineSpec {
    let scale = (0..c).map(|_| rng.gen_range(0.5..1.5)).collect();
    AffineSpec::new(scale, uniform_vec(rng, c, 0.5)).unwrap()
}

pub fn random_polyact<R: Rng>(rng: &mut R, c: usize) -> PolyActRn {
    let preset = *[Preset::Relu, Preset::Silu].choose(rng).unwrap();
    let mut p = PolyActRn::new(preset, c);
    for m in &mut p.running_max {
        *m = rng.gen_range(0.5..3.0);
    }
    p
}

pub struct GraphCase {
    pub model: ModelGraph,
    pub base: usize,
    pub input: PlainTensor,
}

/// Chain of up to `max_nodes` supported nodes with occasional residual adds.
/// Every node stays within a 2..=32 resolution so the graph fits
/// [`GRAPH_SLOTS`] for any chosen base size.
pub fn random_graph<R: Rng>(rng: &mut R, max_nodes: usize) -> GraphCase {
    let c0 = *[1usize, 2, 4].choose(rng).unwrap();
    let h0 = *[4usize, 8, 16].choose(rng).unwrap();
    let base = *[2usize, 4, 8, 16].choose(rng).unwrap();
    let n = rng.gen_range(1..=max_nodes);

    let mut shapes: Vec<(String, usize, usize)> = vec![("input".into(), c0, h0)];
    let mut nodes = Vec::with_capacity(n);
    let (mut c, mut h) = (c0, h0);
    for i in 0..n {
        let id = format!("n{i}");
        let co = *[1usize, 2, 4].choose(rng).unwrap();
        let peers: Vec<String> = shapes[..shapes.len() - 1]
            .iter()
            .filter(|(_, pc, ph)| (*pc, *ph) == (c, h))
            .map(|(id, _, _)| id.clone())
            .collect();
        let node = loop {
            match rng.gen_range(0..8) {
                0 | 1 => {
                    let k = *[1usize, 3, 5].choose(rng).unwrap();
                    let s = if h >= 4 && rng.gen_bool(0.4) { 2 } else { 1 };
                    let spec = random_conv(rng, c, co, k, s);
                    (c, h) = (co, h / s);
                    break Node::new(&id, Op::Conv(spec));
                }
                2 if h <= 16 => {
                    let k = *[2usize, 3].choose(rng).unwrap();
                    let spec = random_deconv(rng, c, co, k, 2);
                    (c, h) = (co, h * 2);
                    break Node::new(&id, Op::Deconv(spec));
                }
                3 if h >= 4 => {
                    h /= 2;
                    break Node::new(&id, Op::AvgPool { window: 2, stride: 2 });
                }
                4 if h <= 16 => {
                    h *= 2;
                    break Node::new(&id, Op::Upsample { factor: 2 });
                }
                5 => break Node::new(&id, Op::BatchNorm(random_affine(rng, c))),
                6 => {
                    let p = random_polyact(rng, c);
                    break Node::new(&id, Op::Activation(Activation::PolyActRn(p)));
                }
                7 if !peers.is_empty() => {
                    let prev = shapes.last().unwrap().0.clone();
                    let other = peers.choose(rng).unwrap().clone();
                    break Node::new(&id, Op::Add).with_inputs([prev, other]);
                }
                _ => {}
            }
        };
        nodes.push(node);
        shapes.push((id, c, h));
    }
    let input = InputSpec {
        channels: c0,
        height: h0,
        width: h0,
    };
    GraphCase {
        model: ModelGraph::new(input, nodes).unwrap(),
        base,
        input: uniform_tensor(rng, c0, h0),
    }
}
