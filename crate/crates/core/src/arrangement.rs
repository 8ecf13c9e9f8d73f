//! Regions of a single layer's hyperplane arrangement, the partition
//! container shared with multilayer enumeration, and the verification
//! oracles (exhaustive sign-pattern search and closed-form region counts).

use std::collections::HashSet;
use std::io::Write;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use serde::Serialize;
use thiserror::Error;

use crate::deep::{self, SubdivisionFrame};
use crate::lp::{self, normalize_row, HalfspaceSystem, InputBox, LpConfig, LpError};
use crate::network::{Activation, AffineMap, DeepSignPattern, Layer, PatternKey, Sign, SignPattern};
use crate::search::{self, chain_rows, Leaf};

/// Largest layer width accepted by [`brute_force_enumerate`].
pub const BRUTE_FORCE_MAX_UNITS: usize = 20;

#[derive(Debug, Error)]
pub enum EnumerationError {
    #[error("layer {layer}, row {row}: zero weight row")]
    ZeroRow { layer: usize, row: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("brute force limited to {BRUTE_FORCE_MAX_UNITS} units, got {0}")]
    TooManyUnits(usize),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("{} branch(es) failed, first at {}", .0.len(), .0[0])]
    Branches(Vec<BranchFailure>),
}

/// Search branch abandoned after an LP failure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchFailure {
    /// Partial pattern; `?` marks units not yet resolved.
    pub pattern: String,
    pub layer: usize,
    pub unit: usize,
    #[serde(serialize_with = "serialize_display")]
    pub error: LpError,
}

fn serialize_display<S: serde::Serializer>(e: &LpError, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(e)
}

impl std::fmt::Display for BranchFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "pattern {} (layer {}, unit {}): {}",
            self.pattern, self.layer, self.unit, self.error
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnumOptions {
    pub lp: LpConfig,
    pub workers: usize,
}

impl Default for EnumOptions {
    fn default() -> Self {
        Self {
            lp: LpConfig::default(),
            workers: 1,
        }
    }
}

/// Which unit (or box face) a region constraint row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowOrigin {
    /// `layer` indexes the network's sign-based layers from 0.
    Unit { layer: usize, unit: usize },
    Box,
}

#[derive(Debug, Clone)]
pub struct Region {
    pub pattern: DeepSignPattern,
    /// Non-redundant unit rows followed by the box faces, in input space.
    pub constraints: HalfspaceSystem,
    /// Parallel to `constraints`.
    pub origins: Vec<RowOrigin>,
    pub interior: Vec<f64>,
    /// Smallest slack of `interior` against `constraints`, capped at the LP margin cap.
    pub margin: f64,
    /// Composed network map on this region, when enumerated from a network.
    pub affine: Option<AffineMap>,
}

impl Region {
    pub(crate) fn from_leaf(leaf: &Leaf, bx: &InputBox, affine: Option<AffineMap>) -> Self {
        let (constraints, origins) = region_rows(&leaf.rows, bx);
        Region {
            pattern: DeepSignPattern::new(leaf.patterns.clone()),
            margin: leaf.interior.depth,
            constraints,
            origins,
            interior: leaf.interior.x.clone(),
            affine,
        }
    }

    /// Rows that came from network units (box faces excluded).
    pub fn unit_rows(&self) -> impl Iterator<Item = ((&[f64], f64), RowOrigin)> + '_ {
        self.constraints
            .rows()
            .zip(self.origins.iter().copied())
            .filter(|(_, o)| *o != RowOrigin::Box)
    }
}

pub(crate) fn region_rows(chain: &search::RowChain, bx: &InputBox) -> (HalfspaceSystem, Vec<RowOrigin>) {
    let chain = chain_rows(chain);
    let box_rows = bx.rows();
    let total = chain.len() + box_rows.len();
    let mut constraints = HalfspaceSystem::with_capacity(bx.dim(), total);
    let mut origins = Vec::with_capacity(total);
    for node in chain {
        constraints.push_unit(&node.normal, node.offset);
        origins.push(node.origin);
    }
    for (a, b) in box_rows {
        constraints.push_unit(&a, b);
        origins.push(RowOrigin::Box);
    }
    (constraints, origins)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EnumerationStats {
    pub region_count: usize,
    pub lp_calls: usize,
    pub tree_nodes: usize,
    /// Seconds; excluded from the partition file.
    #[serde(skip)]
    pub wall_time: f64,
    #[serde(skip)]
    pub worker_count: usize,
}

/// Enumerated regions in canonical pattern order.
#[derive(Debug, Clone)]
pub struct Partition {
    pub input_dim: usize,
    pub regions: Vec<Region>,
    pub stats: EnumerationStats,
    /// Non-empty when some branches were abandoned; the region list is then partial.
    pub failures: Vec<BranchFailure>,
}

#[derive(Serialize)]
struct PartitionDoc<'a> {
    input_dim: usize,
    status: &'static str,
    regions: Vec<RegionDoc<'a>>,
    stats: &'a EnumerationStats,
    failures: &'a [BranchFailure],
}

#[derive(Serialize)]
struct RegionDoc<'a> {
    pattern: String,
    redundant: String,
    interior: &'a [f64],
    margin: f64,
}

impl Partition {
    pub(crate) fn new(
        input_dim: usize,
        mut regions: Vec<Region>,
        failures: Vec<BranchFailure>,
        lp_calls: usize,
        tree_nodes: usize,
        started: Instant,
        workers: usize,
    ) -> Self {
        regions.sort_by(|a, b| a.pattern.cmp(&b.pattern));
        let mut failures = failures;
        failures.sort_by(|a, b| a.pattern.cmp(&b.pattern));
        Partition {
            input_dim,
            stats: EnumerationStats {
                region_count: regions.len(),
                lp_calls,
                tree_nodes,
                wall_time: started.elapsed().as_secs_f64(),
                worker_count: workers,
            },
            regions,
            failures,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn pattern_keys(&self) -> HashSet<PatternKey> {
        self.regions.iter().map(|r| r.pattern.key()).collect()
    }

    pub fn pattern_strings(&self) -> Vec<String> {
        self.regions.iter().map(|r| r.pattern.signs_string()).collect()
    }

    /// Partition document. Independent of scheduling: timing and worker
    /// count are left out.
    pub fn to_json(&self) -> String {
        let doc = PartitionDoc {
            input_dim: self.input_dim,
            status: if self.is_complete() { "complete" } else { "partial" },
            regions: self
                .regions
                .iter()
                .map(|r| RegionDoc {
                    pattern: r.pattern.signs_string(),
                    redundant: r.pattern.redundant_string(),
                    interior: &r.interior,
                    margin: r.margin,
                })
                .collect(),
            stats: &self.stats,
            failures: &self.failures,
        };
        serde_json::to_string_pretty(&doc).expect("partition serializes")
    }

    /// One row per region: `pattern,redundant,margin,x0,…,x{D-1}`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["pattern".to_string(), "redundant".into(), "margin".into()];
        header.extend((0..self.input_dim).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for r in &self.regions {
            let mut rec = vec![
                r.pattern.signs_string(),
                r.pattern.redundant_string(),
                r.margin.to_string(),
            ];
            rec.extend(r.interior.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_layer(weights: &Array2<f64>, bias: &Array1<f64>, bx: &InputBox) -> Result<(), EnumerationError> {
    if weights.nrows() != bias.len() {
        return Err(EnumerationError::DimensionMismatch {
            expected: weights.nrows(),
            found: bias.len(),
        });
    }
    if weights.ncols() != bx.dim() {
        return Err(EnumerationError::DimensionMismatch {
            expected: weights.ncols(),
            found: bx.dim(),
        });
    }
    if let Some(row) = weights
        .axis_iter(Axis(0))
        .position(|r| r.iter().all(|&v| v == 0.0))
    {
        return Err(EnumerationError::ZeroRow { layer: 0, row });
    }
    Ok(())
}

/// Every region of the arrangement `{W_k·x + b_k = 0}` inside `bx` with a
/// strict interior.
///
/// Regions come back without affine maps and with box rows appended to their
/// constraints. The returned partition may be partial if LP failures occur;
/// check [`Partition::is_complete`].
pub fn enumerate_layer(
    weights: &Array2<f64>,
    bias: &Array1<f64>,
    bx: &InputBox,
    opts: &EnumOptions,
) -> Result<Partition, EnumerationError> {
    check_layer(weights, bias, bx)?;
    let started = Instant::now();
    let layer = Layer::new(weights.clone(), bias.clone(), Activation::relu());
    let root = SubdivisionFrame::root(bx, &opts.lp)?;
    let out = deep::search_frame(&root, std::slice::from_ref(&layer), bx, opts, false);
    let regions = out.leaves.into_iter().map(|leaf| Region::from_leaf(&leaf, bx, None)).collect();
    Ok(Partition::new(
        bx.dim(),
        regions,
        out.failures,
        out.lp_calls + 1,
        out.tree_nodes,
        started,
        opts.workers,
    ))
}

/// Exhaustive check of all `2^K` sign patterns; an oracle for
/// [`enumerate_layer`].
///
/// Redundancy flags mark rows that are not facets of the region, and only
/// facet rows are kept in `constraints`.
pub fn brute_force_enumerate(
    weights: &Array2<f64>,
    bias: &Array1<f64>,
    bx: &InputBox,
    opts: &EnumOptions,
) -> Result<Partition, EnumerationError> {
    check_layer(weights, bias, bx)?;
    let units = weights.nrows();
    if units > BRUTE_FORCE_MAX_UNITS {
        return Err(EnumerationError::TooManyUnits(units));
    }
    let started = Instant::now();
    let unit_rows: Vec<(Vec<f64>, f64)> = weights
        .axis_iter(Axis(0))
        .zip(bias)
        .map(|(w, &b)| normalize_row(&w.to_vec(), b).expect("non-zero rows"))
        .collect();
    let mut lp_calls = 0;
    let mut regions = Vec::new();
    for mask in 0u64..(1u64 << units) {
        let signs: Vec<Sign> = (0..units)
            .map(|k| if mask >> k & 1 == 1 { Sign::Neg } else { Sign::Pos })
            .collect();
        let oriented: Vec<(Vec<f64>, f64)> = unit_rows
            .iter()
            .zip(&signs)
            .map(|((a, b), s)| (a.iter().map(|v| v * s.as_f64()).collect(), b * s.as_f64()))
            .collect();
        let system = HalfspaceSystem::from_rows(bx.dim(), oriented.iter().map(|(a, b)| (a.as_slice(), *b)))?;
        lp_calls += 1;
        let found = lp::interior_point(&system, bx, &opts.lp)?;
        let Some(interior) = found.witness else { continue };

        // A row is a facet iff dropping it lets its hyperplane cut the region.
        let mut redundant = vec![false; units];
        let mut constraints = HalfspaceSystem::new(bx.dim());
        let mut origins = Vec::new();
        for k in 0..units {
            let others = HalfspaceSystem::from_rows(
                bx.dim(),
                oriented
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != k)
                    .map(|(_, (a, b))| (a.as_slice(), *b)),
            )?;
            lp_calls += 1;
            let cut = lp::hyperplane_cuts_region(&others, &oriented[k].0, oriented[k].1, bx, &opts.lp)?;
            if matches!(cut, lp::CutOutcome::Cuts { .. }) {
                constraints.push_unit(&oriented[k].0, oriented[k].1);
                origins.push(RowOrigin::Unit { layer: 0, unit: k });
            } else {
                redundant[k] = true;
            }
        }
        for (a, b) in bx.rows() {
            constraints.push_unit(&a, b);
            origins.push(RowOrigin::Box);
        }
        regions.push(Region {
            pattern: DeepSignPattern::new(vec![SignPattern { signs, redundant }]),
            margin: constraints.min_slack(&interior).min(opts.lp.eps_cap),
            constraints,
            origins,
            interior,
            affine: None,
        });
    }
    let tree_nodes = 1usize << units;
    Ok(Partition::new(bx.dim(), regions, Vec::new(), lp_calls, tree_nodes, started, 1))
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Region count of `units` hyperplanes in general position in `R^dim`:
/// `Σ_{i≤D} C(K, i)` for affine arrangements, `2·Σ_{i<D} C(K−1, i)` for
/// central ones (all hyperplanes through one point).
pub fn general_position_count(units: u64, dim: u64, central: bool) -> u128 {
    if central {
        if units == 0 {
            return 1;
        }
        2 * (0..dim).map(|i| binomial(units - 1, i)).sum::<u128>()
    } else {
        (0..=dim).map(|i| binomial(units, i)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_layer(seed: u64, units: usize, dim: usize, central: bool) -> (Array2<f64>, Array1<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w = Array2::from_shape_simple_fn((units, dim), || StandardNormal.sample(&mut rng));
        let b = if central {
            Array1::zeros(units)
        } else {
            Array1::from_shape_simple_fn(units, || StandardNormal.sample(&mut rng))
        };
        (w, b)
    }

    #[test]
    fn count_formula_examples() {
        assert_eq!(general_position_count(16, 2, false), 137);
        assert_eq!(general_position_count(12, 2, false), 79);
        assert_eq!(general_position_count(12, 2, true), 24);
        assert_eq!(general_position_count(16, 2, true), 32);
        for d in 1..6 {
            assert_eq!(general_position_count(1, d, false), 2);
            for k in 0..=d {
                assert_eq!(general_position_count(k, d, false), 1u128 << k);
            }
        }
    }

    #[test]
    fn single_hyperplane_splits_plane() {
        let w = array![[1.0, 0.0]];
        let b = array![0.0];
        let bx = InputBox::unbounded(2);
        let opts = EnumOptions::default();
        let p = enumerate_layer(&w, &b, &bx, &opts).unwrap();
        assert_eq!(p.pattern_strings(), vec!["+", "-"]);
        assert!(p.is_complete());
        let brute = brute_force_enumerate(&w, &b, &bx, &opts).unwrap();
        assert_eq!(brute.pattern_strings(), p.pattern_strings());
    }

    #[test]
    fn three_generic_lines_make_seven_regions() {
        let (w, b) = random_layer(3, 3, 2, false);
        let bx = InputBox::bounded(2, 1e3).unwrap();
        let opts = EnumOptions::default();
        let p = enumerate_layer(&w, &b, &bx, &opts).unwrap();
        assert_eq!(p.len(), 7);
        let brute = brute_force_enumerate(&w, &b, &bx, &opts).unwrap();
        assert_eq!(brute.pattern_strings(), p.pattern_strings());
    }

    #[test]
    fn central_arrangement_grows_linearly() {
        let (w, b) = random_layer(5, 16, 2, true);
        let bx = InputBox::bounded(2, 1e3).unwrap();
        let p = enumerate_layer(&w, &b, &bx, &EnumOptions::default()).unwrap();
        assert_eq!(p.len(), 32);
    }

    #[test]
    fn regions_are_consistent_with_their_interiors() {
        let (w, b) = random_layer(9, 8, 3, false);
        let bx = InputBox::bounded(3, 1e3).unwrap();
        let opts = EnumOptions::default();
        let p = enumerate_layer(&w, &b, &bx, &opts).unwrap();
        let mut seen = HashSet::new();
        for r in &p.regions {
            assert!(r.margin > opts.lp.tol_interior);
            assert_eq!(r.constraints.len(), r.origins.len());
            let h = w.dot(&Array1::from(r.interior.clone())) + &b;
            let signs: Vec<Sign> = h.iter().map(|&v| Sign::of(v)).collect();
            assert_eq!(signs, r.pattern.per_layer[0].signs);
            assert!(seen.insert(signs));
        }
        assert!(p.stats.tree_nodes >= p.stats.region_count);
        assert!(p.stats.lp_calls <= 2 * p.stats.tree_nodes);
    }

    #[test]
    fn brute_force_guards() {
        let (w, b) = random_layer(1, 21, 2, false);
        let bx = InputBox::bounded(2, 10.0).unwrap();
        assert!(matches!(
            brute_force_enumerate(&w, &b, &bx, &EnumOptions::default()),
            Err(EnumerationError::TooManyUnits(21))
        ));
        let zero = array![[1.0, 0.0], [0.0, 0.0]];
        assert!(matches!(
            enumerate_layer(&zero, &array![0.0, 1.0], &bx, &EnumOptions::default()),
            Err(EnumerationError::ZeroRow { row: 1, .. })
        ));
        assert!(matches!(
            enumerate_layer(&w, &b, &InputBox::bounded(3, 1.0).unwrap(), &EnumOptions::default()),
            Err(EnumerationError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn lp_failures_yield_partial_partition() {
        let (w, b) = random_layer(5, 24, 5, false);
        let bx = InputBox::bounded(5, 1.0).unwrap();
        let mut opts = EnumOptions::default();
        opts.lp.max_pivots = 2;
        let p = enumerate_layer(&w, &b, &bx, &opts).unwrap();
        assert!(!p.is_complete());
        assert!(p.to_json().contains("\"status\": \"partial\""));
        assert!(p.failures[0].pattern.contains('?') || !p.failures[0].pattern.is_empty());
    }

    #[test]
    fn csv_has_fixed_columns() {
        let (w, b) = random_layer(4, 3, 2, false);
        let bx = InputBox::bounded(2, 10.0).unwrap();
        let p = enumerate_layer(&w, &b, &bx, &EnumOptions::default()).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("pattern,redundant,margin,x0,x1"));
        assert_eq!(lines.count(), p.len());
    }
}
