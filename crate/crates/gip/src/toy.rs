//! Seeded sample model: conv3x3 -> batchnorm -> relu -> maxpool2 -> conv3x3
//! -> relu on a 1x16x16 input, before conversion.

use gip_core::{
    Activation, AffineSpec, ConvSpec, InputSpec, ModelGraph, Node, Op, PlainTensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOY_SIDE: usize = 16;

fn conv<R: Rng>(r: &mut R, ci: usize, co: usize) -> ConvSpec {
    let scale = 1.0 / ((ci * 9) as f64).sqrt();
    let w = (0..co * ci * 9).map(|_| r.gen_range(-scale..scale)).collect();
    let b = (0..co).map(|_| r.gen_range(-0.1..0.1)).collect();
    ConvSpec::new(ci, co, 3, 1, w).unwrap().with_bias(b).unwrap()
}

pub fn toy_model(seed: u64) -> ModelGraph {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let c1 = conv(&mut r, 1, 2);
    let bn = AffineSpec::new(
        (0..2).map(|_| r.gen_range(0.8..1.2)).collect(),
        (0..2).map(|_| r.gen_range(-0.1..0.1)).collect(),
    )
    .unwrap();
    let c2 = conv(&mut r, 2, 2);
    let nodes = vec![
        Node::new("conv1", Op::Conv(c1)),
        Node::new("bn1", Op::BatchNorm(bn)),
        Node::new("relu1", Op::Activation(Activation::Relu)),
        Node::new("pool1", Op::MaxPool { window: 2, stride: 2 }),
        Node::new("conv2", Op::Conv(c2)),
        Node::new("relu2", Op::Activation(Activation::Relu)),
    ];
    let input = InputSpec {
        channels: 1,
        height: TOY_SIDE,
        width: TOY_SIDE,
    };
    ModelGraph::new(input, nodes).expect("toy model is well formed")
}

/// Values drawn from U(-1, 1).
pub fn random_input<R: Rng>(r: &mut R, channels: usize, height: usize, width: usize) -> PlainTensor {
    PlainTensor::from_fn(channels, height, width, |_, _, _| r.gen_range(-1.0..1.0))
}
