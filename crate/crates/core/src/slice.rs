//! Exact 2D slices of the partition: restrict the network to an affine
//! plane, enumerate in plane coordinates, and draw each region's bent
//! hyperplane pieces as SVG line segments.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::arrangement::{EnumOptions, EnumerationError, Partition, RowOrigin};
use crate::deep::enumerate_network;
use crate::lp::{dot, InputBox, LpError};
use crate::network::{Layer, Network, NetworkError};

pub const DEFAULT_EXTENT: f64 = 5.0;
pub const DEFAULT_RESOLUTION: usize = 800;

const PALETTE: [&str; 6] = ["black", "blue", "red", "green", "orange", "purple"];

#[derive(Debug, Error)]
pub enum SliceError {
    #[error("slicing needs at least 2 input dimensions, network has {0}")]
    TooFewDimensions(usize),
    #[error("anchor/basis length {found} does not match input dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("slice basis must be orthonormal")]
    NotOrthonormal,
    #[error("extent must be positive and finite")]
    InvalidExtent,
    #[error("restricted network: {0}")]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Enumeration(#[from] EnumerationError),
}

/// The plane `anchor + s·u + t·v`, drawn over `[-extent, extent]²`.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSpec {
    pub anchor: Vec<f64>,
    pub basis: [Vec<f64>; 2],
    pub extent: f64,
    /// SVG width and height in pixels.
    pub resolution: usize,
}

impl SliceSpec {
    /// The plane through the origin spanned by the first two coordinate axes.
    pub fn axes(dim: usize) -> Self {
        let mut u = vec![0.0; dim];
        let mut v = vec![0.0; dim];
        if dim >= 2 {
            u[0] = 1.0;
            v[1] = 1.0;
        }
        Self {
            anchor: vec![0.0; dim],
            basis: [u, v],
            extent: DEFAULT_EXTENT,
            resolution: DEFAULT_RESOLUTION,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<(), SliceError> {
        if dim < 2 {
            return Err(SliceError::TooFewDimensions(dim));
        }
        for v in [&self.anchor, &self.basis[0], &self.basis[1]] {
            if v.len() != dim {
                return Err(SliceError::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
        }
        let [u, v] = &self.basis;
        let ok = (dot(u, u) - 1.0).abs() <= 1e-10 && (dot(v, v) - 1.0).abs() <= 1e-10 && dot(u, v).abs() <= 1e-10;
        if !ok {
            return Err(SliceError::NotOrthonormal);
        }
        if !(self.extent.is_finite() && self.extent > 0.0) {
            return Err(SliceError::InvalidExtent);
        }
        Ok(())
    }

    /// Input-space point for plane coordinates `(s, t)`.
    pub fn lift(&self, p: [f64; 2]) -> Vec<f64> {
        self.anchor
            .iter()
            .zip(self.basis[0].iter().zip(&self.basis[1]))
            .map(|(a, (u, v))| a + p[0] * u + p[1] * v)
            .collect()
    }
}

/// The network as a function of plane coordinates.
pub fn restrict_network(net: &Network, spec: &SliceSpec) -> Result<Network, SliceError> {
    spec.validate(net.input_dim())?;
    let first = &net.layers()[0];
    let dim = net.input_dim();
    let mut basis = Array2::zeros((dim, 2));
    for i in 0..dim {
        basis[[i, 0]] = spec.basis[0][i];
        basis[[i, 1]] = spec.basis[1][i];
    }
    let anchor = Array1::from(spec.anchor.clone());
    let restricted = Layer::new(
        first.weights.dot(&basis),
        &first.bias + &first.weights.dot(&anchor),
        first.activation,
    );
    let mut layers = vec![restricted];
    layers.extend(net.layers()[1..].iter().cloned());
    Ok(Network::new(2, layers)?)
}

/// A piece of one unit's zero set bounding a region of the slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// Index among the sign-based layers, from 0.
    pub layer: usize,
    pub unit: usize,
    pub pattern: String,
    pub from: [f64; 2],
    pub to: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct Slice {
    pub spec: SliceSpec,
    pub partition: Partition,
    pub segments: Vec<Segment>,
}

/// Clips the line `a·y + b = 0` to the polygon of `rows` other than `skip`.
fn clip(a: &[f64], b: f64, rows: &[(&[f64], f64)], skip: usize) -> Option<([f64; 2], [f64; 2])> {
    let p0 = [-b * a[0], -b * a[1]];
    let dir = [-a[1], a[0]];
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (j, (c, d)) in rows.iter().enumerate() {
        if j == skip {
            continue;
        }
        let rate = dot(c, &dir);
        let at = dot(c, &p0) + d;
        if rate.abs() < 1e-12 {
            if at < -1e-9 {
                return None;
            }
        } else if rate > 0.0 {
            lo = lo.max(-at / rate);
        } else {
            hi = hi.min(-at / rate);
        }
    }
    (hi - lo > 1e-9).then(|| {
        let point = |t: f64| [p0[0] + t * dir[0], p0[1] + t * dir[1]];
        (point(lo), point(hi))
    })
}

fn segments(partition: &Partition) -> Vec<Segment> {
    let quantize = |p: [f64; 2]| [(p[0] * 1e6).round() as i64, (p[1] * 1e6).round() as i64];
    let mut seen: BTreeMap<(usize, usize, [i64; 2], [i64; 2]), Segment> = BTreeMap::new();
    for region in &partition.regions {
        let rows: Vec<(&[f64], f64)> = region.constraints.rows().collect();
        for (j, origin) in region.origins.iter().enumerate() {
            let RowOrigin::Unit { layer, unit } = *origin else {
                continue;
            };
            let (a, b) = rows[j];
            let Some((p, q)) = clip(a, b, &rows, j) else {
                continue;
            };
            let (p, q) = if quantize(p) <= quantize(q) { (p, q) } else { (q, p) };
            seen.entry((layer, unit, quantize(p), quantize(q))).or_insert_with(|| Segment {
                layer,
                unit,
                pattern: region.pattern.signs_string(),
                from: p,
                to: q,
            });
        }
    }
    seen.into_values().collect()
}

/// Enumerates the restricted network on `[-extent, extent]²` and collects
/// every boundary segment once.
pub fn slice(net: &Network, spec: &SliceSpec, opts: &EnumOptions) -> Result<Slice, SliceError> {
    let restricted = restrict_network(net, spec)?;
    let bx = InputBox::bounded(2, spec.extent)?;
    let partition = enumerate_network(&restricted, &bx, opts)?;
    let segments = segments(&partition);
    Ok(Slice {
        spec: spec.clone(),
        partition,
        segments,
    })
}

impl Slice {
    pub fn to_svg(&self) -> String {
        let e = self.spec.extent;
        let px = self.spec.resolution.max(1);
        let stroke = 2.0 * e / px as f64;
        let mut out = String::new();
        let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{px}" height="{px}" viewBox="{} {} {} {}" data-regions="{}">"#,
            -e,
            -e,
            2.0 * e,
            2.0 * e,
            self.partition.len()
        );
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="white"/>"#,
            -e,
            -e,
            2.0 * e,
            2.0 * e
        );
        let _ = writeln!(
            out,
            r#"<g transform="scale(1,-1)" stroke-width="{stroke}" stroke-linecap="round">"#
        );
        for s in &self.segments {
            let _ = writeln!(
                out,
                r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}" data-layer="{}" data-unit="{}" data-pattern="{}"/>"#,
                s.from[0],
                s.from[1],
                s.to[0],
                s.to[1],
                PALETTE[s.layer % PALETTE.len()],
                s.layer + 1,
                s.unit,
                s.pattern
            );
        }
        out.push_str("</g>\n</svg>\n");
        out
    }
}
