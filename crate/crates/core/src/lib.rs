//! Exact enumeration of the linear regions of continuous piecewise-affine
//! networks.
//!
//! A network built from ReLU, leaky ReLU or absolute-value layers is affine
//! on each cell of a polyhedral partition of its input space. The cells are
//! labelled by activation sign patterns and found by a branching search over
//! hyperplanes with a linear-programming feasibility check at each branch.

pub mod arrangement;
pub mod deep;
pub mod lp;
pub mod network;
pub mod sampling;
mod search;
pub mod slice;

pub use arrangement::{
    brute_force_enumerate, enumerate_layer, general_position_count, EnumOptions, EnumerationError,
    EnumerationStats, Partition, Region,
};
pub use deep::{enumerate_network, subdivide, SubdivisionFrame};
pub use lp::{hyperplane_cuts_region, interior_point, CutOutcome, HalfspaceSystem, InputBox, LpConfig};
pub use network::{Activation, ActivationKind, AffineMap, DeepSignPattern, Layer, Network, Sign, SignPattern};
pub use sampling::{compare, sample_discover, Budget, BudgetPolicy, ComparisonReport};
pub use slice::{slice, SliceSpec};
