//! Small dense LP kernel answering the geometric queries the enumeration
//! needs: strict-interior feasibility of a polytope, whether a hyperplane
//! passes through a polytope's interior, and on which side it lies otherwise.
//!
//! Every query maximizes a uniform slack `ε` over unit-normalized rows, so
//! `ε` is a Euclidean distance and the interior tolerance is scale-free.

mod simplex;

use thiserror::Error;

use crate::network::Sign;

/// Minimum margin for a region (or hyperplane section) to count as full-dimensional.
pub const DEFAULT_TOL_INTERIOR: f64 = 1e-7;
/// Upper bound on the maximized margin; keeps every LP bounded.
pub const DEFAULT_EPS_CAP: f64 = 1.0;
pub const DEFAULT_MAX_PIVOTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpConfig {
    pub tol_interior: f64,
    pub eps_cap: f64,
    /// Pivot budget per LP; exceeding it is reported as a numerical failure.
    pub max_pivots: usize,
}

impl Default for LpConfig {
    fn default() -> Self {
        Self {
            tol_interior: DEFAULT_TOL_INTERIOR,
            eps_cap: DEFAULT_EPS_CAP,
            max_pivots: DEFAULT_MAX_PIVOTS,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("constraint row has zero or non-finite normal")]
    DegenerateRow,
    #[error("box half-width must be positive and finite, got {0}")]
    InvalidBox(f64),
    #[error("simplex gave up after {pivots} pivots")]
    NumericalFailure { pivots: usize },
    #[error("simplex reported an unbounded objective")]
    Unbounded,
    #[error("region has no strict interior")]
    EmptyRegion,
}

/// Axis-aligned domain `[-h, h]^D`, or all of `R^D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputBox {
    dim: usize,
    half_width: Option<f64>,
}

impl InputBox {
    pub fn bounded(dim: usize, half_width: f64) -> Result<Self, LpError> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(LpError::InvalidBox(half_width));
        }
        Ok(Self {
            dim,
            half_width: Some(half_width),
        })
    }

    pub fn unbounded(dim: usize) -> Self {
        Self {
            dim,
            half_width: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> Option<f64> {
        self.half_width
    }

    /// Box faces as unit rows `a·x + b ≥ 0`: `(+e_i, h)` then `(-e_i, h)` per axis.
    pub fn rows(&self) -> Vec<(Vec<f64>, f64)> {
        let Some(h) = self.half_width else {
            return Vec::new();
        };
        let mut rows = Vec::with_capacity(2 * self.dim);
        for i in 0..self.dim {
            for s in [1.0, -1.0] {
                let mut a = vec![0.0; self.dim];
                a[i] = s;
                rows.push((a, h));
            }
        }
        rows
    }

    fn check(&self, dim: usize) -> Result<(), LpError> {
        if self.dim != dim {
            return Err(LpError::DimensionMismatch {
                expected: dim,
                found: self.dim,
            });
        }
        Ok(())
    }
}

/// Normalizes `(a, b)` to a unit normal. `None` for zero or non-finite rows.
pub fn normalize_row(a: &[f64], b: f64) -> Option<(Vec<f64>, f64)> {
    let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite() && b.is_finite()) {
        return None;
    }
    Some((a.iter().map(|v| v / norm).collect(), b / norm))
}

/// The polytope `{x : a_j·x + b_j ≥ 0 ∀j}` with unit-norm rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HalfspaceSystem {
    dim: usize,
    normals: Vec<f64>,
    offsets: Vec<f64>,
}

impl HalfspaceSystem {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            normals: Vec::new(),
            offsets: Vec::new(),
        }
    }

    pub fn from_rows<'a>(
        dim: usize,
        rows: impl IntoIterator<Item = (&'a [f64], f64)>,
    ) -> Result<Self, LpError> {
        let mut sys = Self::new(dim);
        for (a, b) in rows {
            sys.push(a, b)?;
        }
        Ok(sys)
    }

    /// Appends `a·x + b ≥ 0`, rescaled so `|a| = 1`.
    pub fn push(&mut self, a: &[f64], b: f64) -> Result<(), LpError> {
        if a.len() != self.dim {
            return Err(LpError::DimensionMismatch {
                expected: self.dim,
                found: a.len(),
            });
        }
        let (a, b) = normalize_row(a, b).ok_or(LpError::DegenerateRow)?;
        self.push_unit(&a, b);
        Ok(())
    }

    pub(crate) fn with_capacity(dim: usize, rows: usize) -> Self {
        Self {
            dim,
            normals: Vec::with_capacity(dim * rows),
            offsets: Vec::with_capacity(rows),
        }
    }

    pub(crate) fn push_unit(&mut self, a: &[f64], b: f64) {
        self.normals.extend_from_slice(a);
        self.offsets.push(b);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn row(&self, j: usize) -> (&[f64], f64) {
        (
            &self.normals[j * self.dim..(j + 1) * self.dim],
            self.offsets[j],
        )
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        (0..self.len()).map(|j| self.row(j))
    }

    pub fn slack(&self, j: usize, x: &[f64]) -> f64 {
        let (a, b) = self.row(j);
        dot(a, x) + b
    }

    /// Smallest slack of `x` over all rows (`+∞` when there are none).
    pub fn min_slack(&self, x: &[f64]) -> f64 {
        (0..self.len())
            .map(|j| self.slack(j, x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains_strictly(&self, x: &[f64]) -> bool {
        self.min_slack(x) > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Feasible,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpResult {
    pub status: LpStatus,
    pub witness: Option<Vec<f64>>,
    /// Maximized slack `ε*` (capped). Also reported when infeasible.
    pub margin: f64,
}

impl LpResult {
    pub fn is_feasible(&self) -> bool {
        self.status == LpStatus::Feasible
    }
}

/// Outcome of testing a hyperplane against a region.
#[derive(Debug, Clone, PartialEq)]
pub enum CutOutcome {
    /// The hyperplane passes through the interior; `witness` lies on it with
    /// slack at least `margin` against every region row.
    Cuts { witness: Vec<f64>, margin: f64 },
    /// The region lies entirely on this side of the hyperplane.
    NoCut(Sign),
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Strict-interior feasibility: maximizes `ε` subject to every row of `h`
/// and every box face having slack at least `ε`, with `ε ≤ eps_cap`.
/// Feasible iff `ε* > tol_interior`; the witness is a deepest point.
pub fn interior_point(
    h: &HalfspaceSystem,
    bx: &InputBox,
    cfg: &LpConfig,
) -> Result<LpResult, LpError> {
    bx.check(h.dim())?;
    let rows: Vec<(&[f64], f64)> = h.rows().collect();
    let (margin, x) = max_margin(h.dim(), &rows, bx, None, cfg)?;
    Ok(if margin > cfg.tol_interior {
        LpResult {
            status: LpStatus::Feasible,
            witness: Some(x),
            margin,
        }
    } else {
        LpResult {
            status: LpStatus::Infeasible,
            witness: None,
            margin,
        }
    })
}

/// Decides whether the hyperplane `w·x + c = 0` meets the interior of the
/// region `h ∩ box`. When it does not, the side is the sign of `w·p + c` at
/// an interior point `p` of the region.
pub fn hyperplane_cuts_region(
    h: &HalfspaceSystem,
    w: &[f64],
    c: f64,
    bx: &InputBox,
    cfg: &LpConfig,
) -> Result<CutOutcome, LpError> {
    bx.check(h.dim())?;
    if w.len() != h.dim() {
        return Err(LpError::DimensionMismatch {
            expected: h.dim(),
            found: w.len(),
        });
    }
    let (w, c) = normalize_row(w, c).ok_or(LpError::DegenerateRow)?;
    let rows: Vec<(&[f64], f64)> = h.rows().collect();
    let (margin, x) = max_margin(h.dim(), &rows, bx, Some((&w, c)), cfg)?;
    if margin > cfg.tol_interior {
        return Ok(CutOutcome::Cuts { witness: x, margin });
    }
    let inner = interior_point(h, bx, cfg)?;
    let p = inner.witness.ok_or(LpError::EmptyRegion)?;
    Ok(CutOutcome::NoCut(Sign::of(dot(&w, &p) + c)))
}

/// Solves `max ε` s.t. `a_j·x + b_j ≥ ε` for the given unit rows and the box
/// faces, `ε ≤ eps_cap`, and optionally `w·x + c = 0`. Returns `(ε*, x*)`.
///
/// The equality is eliminated by solving for the coordinate with the largest
/// `|w_i|`. `ε` is shifted by `T = max(0, -min b)` so the origin is feasible
/// and no phase one is needed.
pub(crate) fn max_margin(
    dim: usize,
    rows: &[(&[f64], f64)],
    bx: &InputBox,
    plane: Option<(&[f64], f64)>,
    cfg: &LpConfig,
) -> Result<(f64, Vec<f64>), LpError> {
    let box_rows = bx.rows();
    let all_rows = rows
        .iter()
        .copied()
        .chain(box_rows.iter().map(|(a, b)| (a.as_slice(), *b)));

    // Reduced coordinates: every coordinate except `pivot` (if any).
    let pivot = plane.map(|(w, _)| {
        let mut best = 0;
        for i in 1..dim {
            if w[i].abs() > w[best].abs() {
                best = i;
            }
        }
        best
    });
    let free: Vec<usize> = (0..dim).filter(|&i| Some(i) != pivot).collect();
    let n = free.len();

    let mut reduced: Vec<f64> = Vec::with_capacity((rows.len() + box_rows.len()) * n);
    let mut offsets: Vec<f64> = Vec::with_capacity(rows.len() + box_rows.len());
    for (a, b) in all_rows {
        match (plane, pivot) {
            (Some((w, c)), Some(p)) => {
                let f = a[p] / w[p];
                reduced.extend(free.iter().map(|&l| a[l] - f * w[l]));
                offsets.push(b - f * c);
            }
            _ => {
                reduced.extend_from_slice(a);
                offsets.push(b);
            }
        }
    }
    let m = offsets.len();
    let shift = offsets.iter().fold(0.0f64, |acc, &b| acc.max(-b));

    // Variables [x⁺ (n), x⁻ (n), t]; rows: -a·x⁺ + a·x⁻ + t ≤ b + T, then t ≤ cap + T.
    let cols = 2 * n + 1;
    let mut g = vec![0.0; (m + 1) * cols];
    let mut rhs = Vec::with_capacity(m + 1);
    for j in 0..m {
        let a = &reduced[j * n..(j + 1) * n];
        let row = &mut g[j * cols..(j + 1) * cols];
        for l in 0..n {
            row[l] = -a[l];
            row[n + l] = a[l];
        }
        row[2 * n] = 1.0;
        rhs.push(offsets[j] + shift);
    }
    g[m * cols + 2 * n] = 1.0;
    rhs.push(cfg.eps_cap + shift);
    let mut objective = vec![0.0; cols];
    objective[2 * n] = 1.0;

    let sol = simplex::maximize(&g, &rhs, &objective, cfg.max_pivots).map_err(|e| match e {
        simplex::SimplexError::IterationLimit(pivots) => LpError::NumericalFailure { pivots },
        simplex::SimplexError::Unbounded => LpError::Unbounded,
    })?;

    let mut x = vec![0.0; dim];
    for (k, &i) in free.iter().enumerate() {
        x[i] = sol.z[k] - sol.z[n + k];
    }
    if let (Some((w, c)), Some(p)) = (plane, pivot) {
        let rest: f64 = free.iter().map(|&l| w[l] * x[l]).sum();
        x[p] = -(c + rest) / w[p];
    }
    Ok((sol.objective - shift, x))
}
