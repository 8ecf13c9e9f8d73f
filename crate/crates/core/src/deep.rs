//! Multilayer partitions by recursive subdivision.
//!
//! Within each region found for layers `1..ℓ` the network is affine, so
//! layer `ℓ+1`'s pre-activation is an affine function of the input there and
//! its units induce a hyperplane arrangement restricted to that region. The
//! single-layer search is rerun inside every region with the composed
//! weights. All layers run on one task pool; a region that finishes layer
//! `ℓ` immediately becomes a task for layer `ℓ+1`.

use std::time::Instant;

use crate::arrangement::{BranchFailure, EnumOptions, EnumerationError, Partition, Region, RowOrigin};
use crate::lp::{self, InputBox, LpConfig, LpError};
use crate::network::{AffineMap, DeepSignPattern, Layer, Network};
use crate::search::{self, push_row, Plan, Point, RowChain};

/// A region of the partition built by the first `depth` sign-based layers,
/// with the map from input space to the next layer's input on it.
#[derive(Debug, Clone)]
pub struct SubdivisionFrame {
    pub depth: usize,
    pub region: Region,
    /// Output of layer `depth` (activation applied) as an affine function of the input.
    pub composed: AffineMap,
}

impl SubdivisionFrame {
    /// The whole box, before any layer.
    pub fn root(bx: &InputBox, cfg: &LpConfig) -> Result<Self, LpError> {
        let found = lp::interior_point(&lp::HalfspaceSystem::new(bx.dim()), bx, cfg)?;
        let interior = found.witness.ok_or(LpError::EmptyRegion)?;
        let (constraints, origins) = crate::arrangement::region_rows(&None, bx);
        Ok(Self {
            depth: 0,
            region: Region {
                pattern: DeepSignPattern::default(),
                margin: constraints.min_slack(&interior).min(cfg.eps_cap),
                constraints,
                origins,
                interior,
                affine: None,
            },
            composed: AffineMap::identity(bx.dim()),
        })
    }

    fn chain(&self) -> RowChain {
        let mut chain = None;
        for ((a, b), origin) in self.region.unit_rows() {
            chain = push_row(&chain, a.to_vec(), b, origin);
        }
        chain
    }
}

pub(crate) type SubdivisionOutput = (Vec<SubdivisionFrame>, Vec<BranchFailure>, usize, usize);

pub(crate) fn search_frame(
    frame: &SubdivisionFrame,
    layers: &[Layer],
    bx: &InputBox,
    opts: &EnumOptions,
    keep_post: bool,
) -> search::Output {
    let plan = Plan {
        layers,
        first_layer: frame.depth,
        keep_post,
        bx: *bx,
        cfg: opts.lp,
    };
    let seed = plan.seed(
        frame.chain(),
        Point {
            x: frame.region.interior.clone(),
            depth: frame.region.margin,
        },
        frame.region.pattern.per_layer.clone(),
        &frame.composed,
    );
    search::run(&plan, vec![seed], opts.workers)
}

/// Subdivides `frame` by `layers` in sequence; children are sorted by pattern.
pub(crate) fn subdivide_frames(
    frame: &SubdivisionFrame,
    layers: &[Layer],
    bx: &InputBox,
    opts: &EnumOptions,
) -> SubdivisionOutput {
    let out = search_frame(frame, layers, bx, opts, true);
    let mut frames: Vec<SubdivisionFrame> = out
        .leaves
        .iter()
        .map(|leaf| SubdivisionFrame {
            depth: frame.depth + layers.len(),
            region: Region::from_leaf(leaf, bx, None),
            composed: leaf.post.clone().expect("plan keeps maps"),
        })
        .collect();
    frames.sort_by(|a, b| a.region.pattern.cmp(&b.region.pattern));
    (frames, out.failures, out.lp_calls, out.tree_nodes)
}

/// Splits `frame`'s region by the hyperplanes of `layer` composed with the
/// frame's map. Each child extends the pattern by one layer.
pub fn subdivide(
    frame: &SubdivisionFrame,
    layer: &Layer,
    bx: &InputBox,
    opts: &EnumOptions,
) -> Result<Vec<SubdivisionFrame>, EnumerationError> {
    if layer.input_width() != frame.composed.matrix.nrows() {
        return Err(EnumerationError::DimensionMismatch {
            expected: frame.composed.matrix.nrows(),
            found: layer.input_width(),
        });
    }
    if bx.dim() != frame.composed.matrix.ncols() {
        return Err(EnumerationError::DimensionMismatch {
            expected: frame.composed.matrix.ncols(),
            found: bx.dim(),
        });
    }
    let (frames, failures, _, _) = subdivide_frames(frame, std::slice::from_ref(layer), bx, opts);
    if !failures.is_empty() {
        return Err(EnumerationError::Branches(failures));
    }
    Ok(frames)
}

/// The full input-space partition of `net` inside `bx`, each region carrying
/// the network's affine map on it.
pub fn enumerate_network(
    net: &Network,
    bx: &InputBox,
    opts: &EnumOptions,
) -> Result<Partition, EnumerationError> {
    if bx.dim() != net.input_dim() {
        return Err(EnumerationError::DimensionMismatch {
            expected: net.input_dim(),
            found: bx.dim(),
        });
    }
    let started = Instant::now();
    let root = SubdivisionFrame::root(bx, &opts.lp)?;
    let finish = |post: &AffineMap| match net.output_layer() {
        Some(out) => post.then(&out.weights, &out.bias),
        None => post.clone(),
    };

    let sign_layers = net.sign_layers();
    if sign_layers.is_empty() {
        let mut region = root.region;
        region.affine = Some(finish(&root.composed));
        return Ok(Partition::new(bx.dim(), vec![region], Vec::new(), 1, 1, started, opts.workers));
    }

    let plan = Plan {
        layers: sign_layers,
        first_layer: 0,
        keep_post: true,
        bx: *bx,
        cfg: opts.lp,
    };
    let seed = plan.seed(
        None,
        Point {
            x: root.region.interior.clone(),
            depth: root.region.margin,
        },
        Vec::new(),
        &root.composed,
    );
    let out = search::run(&plan, vec![seed], opts.workers);
    let (lp_calls, tree_nodes, failures) = (out.lp_calls, out.tree_nodes, out.failures);
    let regions = out
        .leaves
        .into_iter()
        .map(|mut leaf| {
            let post = leaf.post.take().expect("plan keeps maps");
            Region::from_leaf(&leaf, bx, Some(finish(&post)))
        })
        .collect();
    Ok(Partition::new(
        bx.dim(),
        regions,
        failures,
        lp_calls + 1,
        tree_nodes,
        started,
        opts.workers,
    ))
}

/// Patterns of `partition` truncated to their first `layers` layers.
pub fn prefix_patterns(partition: &Partition, layers: usize) -> std::collections::BTreeSet<DeepSignPattern> {
    partition
        .regions
        .iter()
        .map(|r| r.pattern.prefix(layers))
        .collect()
}

/// Input-space unit rows of `region` generated by a given sign-based layer.
pub fn rows_of_layer(region: &Region, layer: usize) -> Vec<((&[f64], f64), usize)> {
    region
        .unit_rows()
        .filter_map(|(row, origin)| match origin {
            RowOrigin::Unit { layer: l, unit } if l == layer => Some((row, unit)),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrangement::enumerate_layer;
    use crate::network::{Activation, Sign};
    use ndarray::{Array1, Array2};

    fn box2() -> InputBox {
        InputBox::bounded(2, 1e3).unwrap()
    }

    #[test]
    fn zero_layer_does_not_subdivide() {
        let opts = EnumOptions::default();
        let root = SubdivisionFrame::root(&box2(), &opts.lp).unwrap();
        let first = Layer::new(
            ndarray::array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
            Array1::zeros(3),
            Activation::relu(),
        );
        let frames = subdivide(&root, &first, &box2(), &opts).unwrap();
        let parent = &frames[0];
        let zero = Layer::new(Array2::zeros((1, 3)), ndarray::array![1.0], Activation::relu());
        let children = subdivide(parent, &zero, &box2(), &opts).unwrap();
        assert_eq!(children.len(), 1);
        let last = &children[0].region.pattern.per_layer[1];
        assert_eq!(last.signs, vec![Sign::Pos]);
        assert_eq!(last.redundant, vec![true]);
        assert_eq!(children[0].region.interior, parent.region.interior);
    }

    #[test]
    fn subdividing_the_root_matches_single_layer_enumeration() {
        let net = Network::random(2, &[6], Activation::relu(), 21).unwrap();
        let layer = &net.layers()[0];
        let opts = EnumOptions::default();
        let root = SubdivisionFrame::root(&box2(), &opts.lp).unwrap();
        let frames = subdivide(&root, layer, &box2(), &opts).unwrap();
        let direct = enumerate_layer(&layer.weights, &layer.bias, &box2(), &opts).unwrap();
        let a: Vec<String> = frames.iter().map(|f| f.region.pattern.signs_string()).collect();
        assert_eq!(a, direct.pattern_strings());
    }

    #[test]
    fn single_hidden_layer_network_is_its_arrangement() {
        let net = Network::random(3, &[7], Activation::leaky_relu(0.1), 4).unwrap();
        let opts = EnumOptions::default();
        let bx = InputBox::bounded(3, 1e3).unwrap();
        let deep = enumerate_network(&net, &bx, &opts).unwrap();
        let l = &net.layers()[0];
        let flat = enumerate_layer(&l.weights, &l.bias, &bx, &opts).unwrap();
        assert_eq!(deep.pattern_strings(), flat.pattern_strings());
    }

    #[test]
    fn children_match_pointwise_patterns() {
        let net = Network::random(2, &[3, 3], Activation::relu(), 8).unwrap();
        let p = enumerate_network(&net, &box2(), &EnumOptions::default()).unwrap();
        assert!(p.is_complete());
        for r in &p.regions {
            let at = net.activation_pattern(&r.interior).unwrap();
            assert_eq!(at, r.pattern);
            assert_eq!(r.pattern.per_layer.len(), 2);
        }
    }

    #[test]
    fn identity_only_network_has_one_region() {
        let layer = Layer::new(ndarray::array![[1.0, 2.0]], ndarray::array![0.5], Activation::identity());
        let net = Network::new(2, vec![layer]).unwrap();
        let p = enumerate_network(&net, &box2(), &EnumOptions::default()).unwrap();
        assert_eq!(p.len(), 1);
        let map = p.regions[0].affine.as_ref().unwrap();
        assert_eq!(map.apply(&[1.0, 1.0])[0], 3.5);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let net = Network::random(2, &[3], Activation::relu(), 1).unwrap();
        let bx = InputBox::bounded(3, 1.0).unwrap();
        assert!(enumerate_network(&net, &bx, &EnumOptions::default()).is_err());
        let root = SubdivisionFrame::root(&box2(), &LpConfig::default()).unwrap();
        let wide = Layer::new(Array2::ones((2, 5)), Array1::zeros(2), Activation::relu());
        assert!(subdivide(&root, &wide, &box2(), &EnumOptions::default()).is_err());
    }
}
