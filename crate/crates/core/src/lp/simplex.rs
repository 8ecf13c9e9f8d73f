//! Dense tableau simplex for `max c·z  s.t.  G z ≤ h, z ≥ 0` with `h ≥ 0`.
//!
//! The origin is always feasible in this form, so only phase two is needed.
//! Entering columns use Dantzig's rule and fall back to Bland's rule after a
//! run of degenerate pivots.

const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-11;
const DEGENERATE_RUN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum SimplexError {
    IterationLimit(usize),
    Unbounded,
}

pub(crate) struct Solution {
    pub objective: f64,
    pub z: Vec<f64>,
}

/// `g` is row-major `m × n`.
pub(crate) fn maximize(
    g: &[f64],
    h: &[f64],
    c: &[f64],
    max_pivots: usize,
) -> Result<Solution, SimplexError> {
    let m = h.len();
    let n = c.len();
    debug_assert_eq!(g.len(), m * n);
    debug_assert!(h.iter().all(|&v| v >= 0.0));

    // Columns: n structural, m slack, rhs.
    let width = n + m + 1;
    let rhs = n + m;
    let mut t = vec![0.0; (m + 1) * width];
    for i in 0..m {
        let row = &mut t[i * width..(i + 1) * width];
        row[..n].copy_from_slice(&g[i * n..(i + 1) * n]);
        row[n + i] = 1.0;
        row[rhs] = h[i];
    }
    {
        let obj = &mut t[m * width..];
        for j in 0..n {
            obj[j] = -c[j];
        }
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    let mut pivots = 0;
    let mut degenerate = 0;
    loop {
        let obj = &t[m * width..(m + 1) * width - 1];
        let entering = if degenerate >= DEGENERATE_RUN {
            obj.iter().position(|&v| v < -COST_TOL)
        } else {
            let mut best = None;
            let mut best_val = -COST_TOL;
            for (j, &v) in obj.iter().enumerate() {
                if v < best_val {
                    best_val = v;
                    best = Some(j);
                }
            }
            best
        };
        let Some(col) = entering else { break };

        let mut leaving: Option<(usize, f64)> = None;
        for i in 0..m {
            let a = t[i * width + col];
            if a > PIVOT_TOL {
                let ratio = t[i * width + rhs] / a;
                match leaving {
                    None => leaving = Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - 1e-12 * lr.abs().max(1.0)
                            || (ratio <= lr + 1e-12 * lr.abs().max(1.0) && basis[i] < basis[li])
                        {
                            leaving = Some((i, ratio));
                        }
                    }
                }
            }
        }
        let Some((row, ratio)) = leaving else {
            return Err(SimplexError::Unbounded);
        };

        if pivots >= max_pivots {
            return Err(SimplexError::IterationLimit(pivots));
        }
        pivot(&mut t, width, m, row, col);
        basis[row] = col;
        pivots += 1;
        if ratio.abs() <= 1e-14 {
            degenerate += 1;
        } else {
            degenerate = 0;
        }
    }

    let mut z = vec![0.0; n];
    for (i, &b) in basis.iter().enumerate() {
        if b < n {
            z[b] = t[i * width + rhs].max(0.0);
        }
    }
    Ok(Solution {
        objective: t[m * width + rhs],
        z,
    })
}

fn pivot(t: &mut [f64], width: usize, m: usize, row: usize, col: usize) {
    let p = t[row * width + col];
    for v in &mut t[row * width..(row + 1) * width] {
        *v /= p;
    }
    let (before, rest) = t.split_at_mut(row * width);
    let (pivot_row, after) = rest.split_at_mut(width);
    let eliminate = |other: &mut [f64]| {
        let f = other[col];
        if f != 0.0 {
            for (o, &pv) in other.iter_mut().zip(pivot_row.iter()) {
                *o -= f * pv;
            }
            other[col] = 0.0;
        }
    };
    for other in before.chunks_exact_mut(width) {
        eliminate(other);
    }
    for other in after.chunks_exact_mut(width).take(m + 1 - row - 1) {
        eliminate(other);
    }
}
