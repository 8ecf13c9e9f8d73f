//! Piecewise-linear networks: layers, forward evaluation, activation patterns
//! and the per-region affine maps they induce.

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Negative-side slope used for leaky ReLU when none is given.
pub const DEFAULT_LEAKY_ALPHA: f64 = 0.01;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("malformed network document")]
    Json(#[from] serde_json::Error),
    #[error("i/o error")]
    Io(#[from] std::io::Error),
    #[error("input_dim must be positive")]
    ZeroInputDim,
    #[error("network has no layers")]
    NoLayers,
    #[error("layer {layer}: weight row {row} has {found} entries, expected {expected}")]
    RaggedWeights {
        layer: usize,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("layer {layer}: {rows} weight rows but bias of length {bias}")]
    BiasLength { layer: usize, rows: usize, bias: usize },
    #[error("layer {layer}: input width {found} does not match previous width {expected}")]
    DimensionMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("layer {layer}: layer has no units")]
    EmptyLayer { layer: usize },
    #[error("layer {layer}: weight row {row} is all zeros")]
    ZeroWeightRow { layer: usize, row: usize },
    #[error("layer {layer}: identity activation is only allowed on the final layer")]
    HiddenIdentity { layer: usize },
    #[error("layer {layer}: leaky_relu alpha must lie in (0, 1), got {alpha}")]
    InvalidAlpha { layer: usize, alpha: f64 },
    #[error("layer {layer}: non-finite parameter")]
    NonFinite { layer: usize },
    #[error("input has length {found}, network expects {expected}")]
    InputLength { expected: usize, found: usize },
    #[error("pattern does not match network: {0}")]
    PatternShape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    LeakyRelu,
    Abs,
    Identity,
}

/// A pointwise two-slope activation: `σ(h) = s₊·h` for `h ≥ 0`, `s₋·h` otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activation {
    pub kind: ActivationKind,
    /// Negative-side slope, only meaningful for leaky ReLU.
    pub alpha: f64,
}

impl Activation {
    pub fn relu() -> Self {
        Self {
            kind: ActivationKind::Relu,
            alpha: 0.0,
        }
    }

    pub fn leaky_relu(alpha: f64) -> Self {
        Self {
            kind: ActivationKind::LeakyRelu,
            alpha,
        }
    }

    pub fn abs() -> Self {
        Self {
            kind: ActivationKind::Abs,
            alpha: 0.0,
        }
    }

    pub fn identity() -> Self {
        Self {
            kind: ActivationKind::Identity,
            alpha: 0.0,
        }
    }

    /// Whether the activation changes slope at zero (everything but identity).
    pub fn is_sign_based(&self) -> bool {
        self.kind != ActivationKind::Identity
    }

    pub fn slope(&self, sign: Sign) -> f64 {
        match (self.kind, sign) {
            (_, Sign::Pos) => 1.0,
            (ActivationKind::Relu, Sign::Neg) => 0.0,
            (ActivationKind::LeakyRelu, Sign::Neg) => self.alpha,
            (ActivationKind::Abs, Sign::Neg) => -1.0,
            (ActivationKind::Identity, Sign::Neg) => 1.0,
        }
    }

    pub fn apply(&self, h: f64) -> f64 {
        h * self.slope(Sign::of(h))
    }
}

/// Sign of a pre-activation. Zero maps to `Pos`.
///
/// `Pos` orders before `Neg`, which fixes the canonical region order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Pos,
    Neg,
}

impl Sign {
    pub fn of(value: f64) -> Self {
        if value >= 0.0 {
            Sign::Pos
        } else {
            Sign::Neg
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Pos => 1.0,
            Sign::Neg => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Sign::Pos => Sign::Neg,
            Sign::Neg => Sign::Pos,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Sign::Pos => '+',
            Sign::Neg => '-',
        }
    }
}

/// Per-unit signs of one layer over a region.
///
/// Redundant units (hyperplane does not cut the region) still carry their
/// resolved constant sign.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignPattern {
    pub signs: Vec<Sign>,
    pub redundant: Vec<bool>,
}

impl SignPattern {
    pub fn from_signs(signs: Vec<Sign>) -> Self {
        let redundant = vec![false; signs.len()];
        Self { signs, redundant }
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }
}

/// Signs of every sign-based layer; the identity of a region.
///
/// Equality and ordering look at the flattened signs only; redundancy
/// flags are annotations.
#[derive(Debug, Clone, Default)]
pub struct DeepSignPattern {
    pub per_layer: Vec<SignPattern>,
}

impl DeepSignPattern {
    pub fn new(per_layer: Vec<SignPattern>) -> Self {
        Self { per_layer }
    }

    pub fn flat_signs(&self) -> impl Iterator<Item = Sign> + '_ {
        self.per_layer.iter().flat_map(|l| l.signs.iter().copied())
    }

    /// Pattern string such as `++-|+-+`.
    pub fn signs_string(&self) -> String {
        self.per_layer
            .iter()
            .map(|l| l.signs.iter().map(|s| s.as_char()).collect::<String>())
            .collect::<Vec<_>>()
            .join("|")
    }

    /// Redundancy mask string such as `001|000`.
    pub fn redundant_string(&self) -> String {
        self.per_layer
            .iter()
            .map(|l| {
                l.redundant
                    .iter()
                    .map(|&r| if r { '1' } else { '0' })
                    .collect::<String>()
            })
            .collect::<Vec<_>>()
            .join("|")
    }

    /// Parses the `signs_string` format back; redundancy flags are cleared.
    pub fn parse(text: &str) -> Option<Self> {
        let mut per_layer = Vec::new();
        for segment in text.split('|') {
            let signs = segment
                .chars()
                .map(|c| match c {
                    '+' => Some(Sign::Pos),
                    '-' => Some(Sign::Neg),
                    _ => None,
                })
                .collect::<Option<Vec<_>>>()?;
            per_layer.push(SignPattern::from_signs(signs));
        }
        Some(Self { per_layer })
    }

    pub fn key(&self) -> PatternKey {
        PatternKey::from_signs(self.flat_signs())
    }

    /// First `layers` layers of the pattern.
    pub fn prefix(&self, layers: usize) -> DeepSignPattern {
        DeepSignPattern {
            per_layer: self.per_layer[..layers.min(self.per_layer.len())].to_vec(),
        }
    }
}

impl PartialEq for DeepSignPattern {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for DeepSignPattern {}

impl PartialOrd for DeepSignPattern {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DeepSignPattern {
    fn cmp(&self, other: &Self) -> Ordering {
        self.flat_signs().cmp(other.flat_signs())
    }
}

impl std::hash::Hash for DeepSignPattern {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.key().hash(state)
    }
}

impl fmt::Display for DeepSignPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.signs_string())
    }
}

/// Packed flattened signs (bit set = negative). Cheap to hash in sampling loops.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatternKey {
    bits: Vec<u64>,
    len: usize,
}

impl PatternKey {
    pub fn from_signs(signs: impl Iterator<Item = Sign>) -> Self {
        let mut key = PatternKey {
            bits: Vec::new(),
            len: 0,
        };
        for s in signs {
            key.push(s);
        }
        key
    }

    fn with_capacity(units: usize) -> Self {
        PatternKey {
            bits: Vec::with_capacity(units.div_ceil(64)),
            len: 0,
        }
    }

    fn push(&mut self, sign: Sign) {
        if self.len.is_multiple_of(64) {
            self.bits.push(0);
        }
        if sign == Sign::Neg {
            *self.bits.last_mut().unwrap() |= 1 << (self.len % 64);
        }
        self.len += 1;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn sign(&self, index: usize) -> Sign {
        if self.bits[index / 64] >> (index % 64) & 1 == 1 {
            Sign::Neg
        } else {
            Sign::Pos
        }
    }

    pub fn signs(&self) -> impl Iterator<Item = Sign> + '_ {
        (0..self.len).map(|i| self.sign(i))
    }
}

/// Affine map `x ↦ matrix·x + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub matrix: Array2<f64>,
    pub offset: Array1<f64>,
}

impl AffineMap {
    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: Array2::eye(dim),
            offset: Array1::zeros(dim),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Array1<f64> {
        self.matrix.dot(&ndarray::ArrayView1::from(x)) + &self.offset
    }

    /// Composes an outer affine layer after `self`.
    pub fn then(&self, weights: &Array2<f64>, bias: &Array1<f64>) -> AffineMap {
        AffineMap {
            matrix: weights.dot(&self.matrix),
            offset: weights.dot(&self.offset) + bias,
        }
    }

    /// Scales output row `k` by `slopes[k]`.
    pub fn scale_rows(&mut self, slopes: &[f64]) {
        for (mut row, &s) in self.matrix.axis_iter_mut(Axis(0)).zip(slopes) {
            row *= s;
        }
        for (o, &s) in self.offset.iter_mut().zip(slopes) {
            *o *= s;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `K × D`; row `k` is unit `k`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Self {
        Self {
            weights,
            bias,
            activation,
        }
    }

    pub fn units(&self) -> usize {
        self.weights.nrows()
    }

    pub fn input_width(&self) -> usize {
        self.weights.ncols()
    }

    pub fn preactivation(&self, x: &Array1<f64>) -> Array1<f64> {
        self.weights.dot(x) + &self.bias
    }

    fn validate(&self, index: usize, is_last: bool) -> Result<(), NetworkError> {
        if self.units() == 0 {
            return Err(NetworkError::EmptyLayer { layer: index });
        }
        if self.bias.len() != self.units() {
            return Err(NetworkError::BiasLength {
                layer: index,
                rows: self.units(),
                bias: self.bias.len(),
            });
        }
        if self.weights.iter().chain(self.bias.iter()).any(|v| !v.is_finite()) {
            return Err(NetworkError::NonFinite { layer: index });
        }
        if let Some(row) = self
            .weights
            .axis_iter(Axis(0))
            .position(|r| r.iter().all(|&v| v == 0.0))
        {
            return Err(NetworkError::ZeroWeightRow { layer: index, row });
        }
        match self.activation.kind {
            ActivationKind::Identity if !is_last => {
                return Err(NetworkError::HiddenIdentity { layer: index })
            }
            ActivationKind::LeakyRelu
                if !(self.activation.alpha > 0.0 && self.activation.alpha < 1.0) =>
            {
                return Err(NetworkError::InvalidAlpha {
                    layer: index,
                    alpha: self.activation.alpha,
                })
            }
            _ => {}
        }
        Ok(())
    }
}

/// Result of a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub output: Array1<f64>,
    /// Pre-activation of every layer, in order.
    pub preactivations: Vec<Array1<f64>>,
}

/// A sequential stack of dense layers. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self, NetworkError> {
        if input_dim == 0 {
            return Err(NetworkError::ZeroInputDim);
        }
        if layers.is_empty() {
            return Err(NetworkError::NoLayers);
        }
        let mut width = input_dim;
        let last = layers.len() - 1;
        for (i, layer) in layers.iter().enumerate() {
            if layer.input_width() != width {
                return Err(NetworkError::DimensionMismatch {
                    layer: i,
                    expected: width,
                    found: layer.input_width(),
                });
            }
            layer.validate(i, i == last)?;
            width = layer.units();
        }
        Ok(Self { input_dim, layers })
    }

    /// Network with i.i.d. standard normal weights and biases drawn from a
    /// ChaCha8 stream seeded with `seed`, layer by layer (weights row-major,
    /// then bias).
    pub fn random(
        input_dim: usize,
        widths: &[usize],
        activation: Activation,
        seed: u64,
    ) -> Result<Self, NetworkError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input_dim;
        for &width in widths {
            let weights = Array2::from_shape_simple_fn((width, fan_in), || {
                StandardNormal.sample(&mut rng)
            });
            let bias = Array1::from_shape_simple_fn(width, || StandardNormal.sample(&mut rng));
            layers.push(Layer::new(weights, bias, activation));
            fan_in = width;
        }
        Self::new(input_dim, layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Layers whose activation induces a partition (all but a trailing identity layer).
    pub fn sign_layers(&self) -> &[Layer] {
        match self.output_layer() {
            Some(_) => &self.layers[..self.layers.len() - 1],
            None => &self.layers,
        }
    }

    /// Trailing identity layer, if present.
    pub fn output_layer(&self) -> Option<&Layer> {
        self.layers
            .last()
            .filter(|l| !l.activation.is_sign_based())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, Layer::units)
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NetworkError> {
        if x.len() != self.input_dim {
            return Err(NetworkError::InputLength {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward, NetworkError> {
        self.check_input(x)?;
        let mut current = Array1::from(x.to_vec());
        let mut preactivations = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let h = layer.preactivation(&current);
            current = h.mapv(|v| layer.activation.apply(v));
            preactivations.push(h);
        }
        Ok(Forward {
            output: current,
            preactivations,
        })
    }

    pub fn activation_pattern(&self, x: &[f64]) -> Result<DeepSignPattern, NetworkError> {
        let fwd = self.forward(x)?;
        let per_layer = fwd
            .preactivations
            .iter()
            .zip(&self.layers)
            .filter(|(_, l)| l.activation.is_sign_based())
            .map(|(h, _)| SignPattern::from_signs(h.iter().map(|&v| Sign::of(v)).collect()))
            .collect();
        Ok(DeepSignPattern { per_layer })
    }

    /// Packed activation signs at `x`, reusing `scratch` between calls.
    ///
    /// Input length is not checked; callers in hot loops validate once.
    pub fn pattern_key(&self, x: &[f64], scratch: &mut (Vec<f64>, Vec<f64>)) -> PatternKey {
        let total: usize = self.sign_layers().iter().map(Layer::units).sum();
        let mut key = PatternKey::with_capacity(total);
        let (input, output) = scratch;
        input.clear();
        input.extend_from_slice(x);
        for layer in self.sign_layers() {
            output.clear();
            for (row, &b) in layer.weights.axis_iter(Axis(0)).zip(&layer.bias) {
                let h = row.iter().zip(input.iter()).map(|(w, v)| w * v).sum::<f64>() + b;
                key.push(Sign::of(h));
                output.push(layer.activation.apply(h));
            }
            std::mem::swap(input, output);
        }
        key
    }

    /// Composed affine map `(A, c)` of the whole network on the region with
    /// the given pattern.
    pub fn region_affine_map(&self, pattern: &DeepSignPattern) -> Result<AffineMap, NetworkError> {
        let sign_layers = self.sign_layers();
        if pattern.per_layer.len() != sign_layers.len() {
            return Err(NetworkError::PatternShape(format!(
                "{} pattern layers for {} sign-based layers",
                pattern.per_layer.len(),
                sign_layers.len()
            )));
        }
        let mut map = AffineMap::identity(self.input_dim);
        for (i, (layer, q)) in sign_layers.iter().zip(&pattern.per_layer).enumerate() {
            if q.len() != layer.units() {
                return Err(NetworkError::PatternShape(format!(
                    "layer {i}: pattern width {} but {} units",
                    q.len(),
                    layer.units()
                )));
            }
            map = map.then(&layer.weights, &layer.bias);
            let slopes: Vec<f64> = q.signs.iter().map(|&s| layer.activation.slope(s)).collect();
            map.scale_rows(&slopes);
        }
        if let Some(out) = self.output_layer() {
            map = map.then(&out.weights, &out.bias);
        }
        Ok(map)
    }

    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        let doc: NetworkDoc = serde_json::from_str(text)?;
        doc.into_network()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&NetworkDoc::from(self)).expect("network serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetworkError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NetworkError> {
        let mut text = self.to_json();
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

// Wire format. serde_json writes shortest round-trip decimals and parses
// with `float_roundtrip`, so save/load is bit-exact.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    input_dim: usize,
    layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: ActivationDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActivationDoc {
    kind: ActivationKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    alpha: Option<f64>,
}

impl NetworkDoc {
    fn into_network(self) -> Result<Network, NetworkError> {
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut width = self.input_dim;
        for (i, doc) in self.layers.into_iter().enumerate() {
            let rows = doc.weights.len();
            let cols = doc.weights.first().map_or(width, Vec::len);
            if let Some((row, r)) = doc.weights.iter().enumerate().find(|(_, r)| r.len() != cols) {
                return Err(NetworkError::RaggedWeights {
                    layer: i,
                    row,
                    expected: cols,
                    found: r.len(),
                });
            }
            let flat: Vec<f64> = doc.weights.into_iter().flatten().collect();
            let weights =
                Array2::from_shape_vec((rows, cols), flat).expect("shape checked above");
            let activation = match doc.activation.kind {
                ActivationKind::LeakyRelu => {
                    Activation::leaky_relu(doc.activation.alpha.unwrap_or(DEFAULT_LEAKY_ALPHA))
                }
                ActivationKind::Relu => Activation::relu(),
                ActivationKind::Abs => Activation::abs(),
                ActivationKind::Identity => Activation::identity(),
            };
            width = rows;
            layers.push(Layer::new(weights, Array1::from(doc.bias), activation));
        }
        Network::new(self.input_dim, layers)
    }
}

impl From<&Network> for NetworkDoc {
    fn from(net: &Network) -> Self {
        NetworkDoc {
            input_dim: net.input_dim,
            layers: net
                .layers
                .iter()
                .map(|l| LayerDoc {
                    weights: l.weights.outer_iter().map(|r| r.to_vec()).collect(),
                    bias: l.bias.to_vec(),
                    activation: ActivationDoc {
                        kind: l.activation.kind,
                        alpha: (l.activation.kind == ActivationKind::LeakyRelu)
                            .then_some(l.activation.alpha),
                    },
                })
                .collect(),
        }
    }
}
