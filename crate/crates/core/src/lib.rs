//! Generalized interleaved packing for encrypted CNN inference.
//!
//! Feature maps are packed into CKKS-style slot vectors: interleaved
//! sub-channels when a map is larger than the base packing grid, multiplexed
//! channels when it is smaller. Homomorphic operators consume and produce
//! packed tensors in the same form, run on an exact cleartext slot simulator,
//! and are checked against plain nested-loop reference implementations.
//!
//! The crate is `no_std` (it needs `alloc`). File formats and the command-line
//! driver live in the companion `gip` crate.
#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` deliberately rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(feature = "std")]
extern crate std;

mod error;
pub mod graph;
pub mod hops;
pub mod oracle;
pub mod packing;
pub mod polyact;
pub mod slotvm;

pub use error::{Error, ErrorKind, Result};
pub use graph::{
    convert_model, execute, execute_plan, oracle_pipeline, plan, plan_with_level, Activation, ConversionSummary, CostReport,
    InputSpec, LayerCost, ModelGraph, Node, Op, Plan, PlanEntry, PolyActRn,
};
pub use hops::{AffineSpec, ConvSpec, DeconvSpec};
pub use packing::{
    pack, propagate_factor, relayout_boundary_check, unpack, GipLayout, PackedTensor,
    PackingFactor, PlainTensor, Resampling, SlotIndex,
};
pub use polyact::{HermiteCoeffs, Monomial, PolyActState, Preset};
pub use slotvm::{HEContext, OpCounts, PlainVector, SlotVector};
