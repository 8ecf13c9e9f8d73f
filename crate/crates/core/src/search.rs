//! Parallel region search shared by single-layer and multilayer enumeration.
//!
//! A task is a region of input space together with the units of the current
//! layer whose hyperplanes are still unresolved there. Processing a task
//! resolves every pending unit (does its hyperplane cut the region, and if not
//! on which side does the region lie), then splits on the lowest-index
//! cutting unit, positive side first. Units that do not cut a region cannot
//! cut any subregion, so they are resolved once for the whole subtree.
//!
//! Cut decisions are certified without an LP when possible: a point on the
//! hyperplane with slack above the interior tolerance, or two deep points on
//! opposite sides, prove the LP margin exceeds the tolerance. Such points are
//! inherited by the child that contains them.
//!
//! Tasks run on a work-stealing pool (LIFO per worker). Every task's
//! processing depends only on its own data, so the set of leaves and the
//! counters are identical for any worker count.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crossbeam_deque::{Injector, Steal, Stealer, Worker};
use ndarray::Axis;

use crate::arrangement::{BranchFailure, RowOrigin};
use crate::lp::{dot, max_margin, normalize_row, InputBox, LpConfig, LpError};
use crate::network::{AffineMap, Layer, Sign, SignPattern};

/// Persistent list of region rows; children share their parent's rows.
pub(crate) struct RowNode {
    pub normal: Vec<f64>,
    pub offset: f64,
    pub origin: RowOrigin,
    pub parent: Option<Arc<RowNode>>,
}

pub(crate) type RowChain = Option<Arc<RowNode>>;

pub(crate) fn push_row(chain: &RowChain, normal: Vec<f64>, offset: f64, origin: RowOrigin) -> RowChain {
    Some(Arc::new(RowNode {
        normal,
        offset,
        origin,
        parent: chain.clone(),
    }))
}

/// Rows from oldest to newest.
pub(crate) fn chain_rows(chain: &RowChain) -> Vec<&RowNode> {
    let mut rows = Vec::new();
    let mut cur = chain.as_deref();
    while let Some(node) = cur {
        rows.push(node);
        cur = node.parent.as_deref();
    }
    rows.reverse();
    rows
}

#[derive(Clone, Debug)]
pub(crate) struct Point {
    pub x: Vec<f64>,
    /// Smallest slack against the region rows and box faces.
    pub depth: f64,
}

/// Smallest slack of `x`, capped at `cap` so regions without constraints in
/// some direction still get a finite depth.
pub(crate) fn depth_of(rows: &[(&[f64], f64)], bx: &InputBox, x: &[f64], cap: f64) -> f64 {
    let mut d = rows
        .iter()
        .map(|(a, b)| dot(a, x) + b)
        .fold(f64::INFINITY, f64::min);
    if let Some(h) = bx.half_width() {
        for v in x {
            d = d.min(h - v.abs());
        }
    }
    d.min(cap)
}

/// One layer's pre-activation over input space, restricted to a region.
pub(crate) struct EffectiveLayer {
    pub map: AffineMap,
    /// Unit rows; `None` where the effective weight row vanishes.
    pub rows: Vec<Option<(Vec<f64>, f64)>>,
}

impl EffectiveLayer {
    /// `layer` applied after `input` (input space → layer input).
    pub fn compose(input: &AffineMap, layer: &Layer) -> Self {
        let map = input.then(&layer.weights, &layer.bias);
        let col_norms: Vec<f64> = input
            .matrix
            .axis_iter(Axis(0))
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let rows = map
            .matrix
            .axis_iter(Axis(0))
            .zip(layer.weights.axis_iter(Axis(0)))
            .zip(&map.offset)
            .map(|((row, w), &b)| {
                let scale: f64 = w.iter().zip(&col_norms).map(|(w, n)| w.abs() * n).sum();
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm <= 1e-13 * scale || scale == 0.0 {
                    None
                } else {
                    normalize_row(row.as_slice().expect("standard layout"), b)
                }
            })
            .collect();
        Self { map, rows }
    }
}

struct Candidate {
    unit: usize,
    witness: Option<Point>,
}

pub(crate) struct Task {
    layer: usize,
    rows: RowChain,
    done: Vec<SignPattern>,
    eff: Arc<EffectiveLayer>,
    signs: Vec<Sign>,
    redundant: Vec<bool>,
    candidates: Vec<Candidate>,
    interior: Point,
}

/// Completed region: all layers of the plan resolved.
pub(crate) struct Leaf {
    pub patterns: Vec<SignPattern>,
    pub rows: RowChain,
    pub interior: Point,
    /// Input space → output of the last planned layer (activation applied),
    /// when the plan asks for it.
    pub post: Option<AffineMap>,
}

pub(crate) struct Plan<'a> {
    /// Sign-based layers to subdivide by, in order.
    pub layers: &'a [Layer],
    /// Index of `layers[0]` among the network's sign-based layers.
    pub first_layer: usize,
    pub keep_post: bool,
    pub bx: InputBox,
    pub cfg: LpConfig,
}

impl Plan<'_> {
    /// Task that subdivides the region `rows`/`interior` by `layers[0]`.
    pub fn seed(
        &self,
        rows: RowChain,
        interior: Point,
        done: Vec<SignPattern>,
        input: &AffineMap,
    ) -> Task {
        make_layer_task(self, 0, rows, interior, done, input)
    }
}

fn make_layer_task(
    plan: &Plan,
    layer: usize,
    rows: RowChain,
    interior: Point,
    done: Vec<SignPattern>,
    input: &AffineMap,
) -> Task {
    let eff = EffectiveLayer::compose(input, &plan.layers[layer]);
    let units = eff.rows.len();
    let mut signs = vec![Sign::Pos; units];
    let mut redundant = vec![false; units];
    let mut candidates = Vec::with_capacity(units);
    for (k, row) in eff.rows.iter().enumerate() {
        match row {
            Some(_) => candidates.push(Candidate {
                unit: k,
                witness: None,
            }),
            None => {
                signs[k] = Sign::of(eff.map.offset[k]);
                redundant[k] = true;
            }
        }
    }
    Task {
        layer,
        rows,
        done,
        eff: Arc::new(eff),
        signs,
        redundant,
        candidates,
        interior,
    }
}

#[derive(Default)]
pub(crate) struct Output {
    pub leaves: Vec<Leaf>,
    pub failures: Vec<BranchFailure>,
    pub lp_calls: usize,
    pub tree_nodes: usize,
}

impl Output {
    fn merge(&mut self, other: Output) {
        self.leaves.extend(other.leaves);
        self.failures.extend(other.failures);
        self.lp_calls += other.lp_calls;
        self.tree_nodes += other.tree_nodes;
    }
}

enum Decision {
    Cuts(Point),
    NoCut(Sign),
}

/// Runs the search from `seeds` on `workers` threads.
pub(crate) fn run(plan: &Plan, seeds: Vec<Task>, workers: usize) -> Output {
    let workers = workers.max(1);
    let injector = Injector::new();
    let pending = AtomicUsize::new(seeds.len());
    for s in seeds {
        injector.push(s);
    }
    let locals: Vec<Worker<Task>> = (0..workers).map(|_| Worker::new_lifo()).collect();
    let stealers: Vec<Stealer<Task>> = locals.iter().map(Worker::stealer).collect();

    let mut total = Output::default();
    std::thread::scope(|scope| {
        let handles: Vec<_> = locals
            .into_iter()
            .map(|local| {
                let (injector, pending, stealers) = (&injector, &pending, &stealers);
                scope.spawn(move || {
                    let mut out = Output::default();
                    loop {
                        match find_task(&local, injector, stealers) {
                            Some(task) => {
                                process(plan, task, &mut out, &mut |child| {
                                    pending.fetch_add(1, Ordering::SeqCst);
                                    local.push(child);
                                });
                                pending.fetch_sub(1, Ordering::SeqCst);
                            }
                            None if pending.load(Ordering::SeqCst) == 0 => break,
                            None => std::thread::yield_now(),
                        }
                    }
                    out
                })
            })
            .collect();
        for h in handles {
            total.merge(h.join().expect("search worker panicked"));
        }
    });
    total
}

fn find_task(local: &Worker<Task>, global: &Injector<Task>, stealers: &[Stealer<Task>]) -> Option<Task> {
    local.pop().or_else(|| {
        std::iter::repeat_with(|| {
            global
                .steal_batch_and_pop(local)
                .or_else(|| stealers.iter().map(Stealer::steal).collect())
        })
        .find(|s| !s.is_retry())
        .and_then(Steal::success)
    })
}

fn failure(plan: &Plan, task: &Task, unit: usize, error: LpError) -> BranchFailure {
    let mut pattern: Vec<String> = task
        .done
        .iter()
        .map(|p| p.signs.iter().map(|s| s.as_char()).collect())
        .collect();
    let pending: Vec<usize> = task.candidates.iter().map(|c| c.unit).collect();
    pattern.push(
        task.signs
            .iter()
            .enumerate()
            .map(|(k, s)| if pending.contains(&k) && k != unit { '?' } else { s.as_char() })
            .collect(),
    );
    BranchFailure {
        pattern: pattern.join("|"),
        layer: plan.first_layer + task.layer,
        unit,
        error,
    }
}

fn process(plan: &Plan, mut task: Task, out: &mut Output, spawn: &mut dyn FnMut(Task)) {
    let tol = plan.cfg.tol_interior;
    loop {
        // Resolve every pending unit against the current region.
        let chain = chain_rows(&task.rows);
        let rows: Vec<(&[f64], f64)> = chain.iter().map(|n| (n.normal.as_slice(), n.offset)).collect();
        let candidates = std::mem::take(&mut task.candidates);
        let mut pool: Vec<&Point> = Vec::with_capacity(candidates.len() + 1);
        pool.push(&task.interior);
        pool.extend(candidates.iter().filter_map(|c| c.witness.as_ref()));

        let mut cutting: Vec<(usize, Point)> = Vec::new();
        for cand in &candidates {
            out.tree_nodes += 1;
            let (normal, offset) = task.eff.rows[cand.unit].as_ref().expect("candidates have rows");
            let decision = match &cand.witness {
                Some(w) if w.depth > tol => Decision::Cuts(w.clone()),
                _ => match crossing_certificate(&pool, normal, *offset, &rows, &plan.bx, tol, plan.cfg.eps_cap) {
                    Some(p) => Decision::Cuts(p),
                    None => {
                        out.lp_calls += 1;
                        match max_margin(normal.len(), &rows, &plan.bx, Some((normal, *offset)), &plan.cfg) {
                            Ok((eps, x)) if eps > tol => {
                                let depth = depth_of(&rows, &plan.bx, &x, plan.cfg.eps_cap);
                                Decision::Cuts(Point { x, depth })
                            }
                            Ok(_) => Decision::NoCut(Sign::of(dot(normal, &task.interior.x) + offset)),
                            Err(e) => {
                                let unit = cand.unit;
                                drop(pool);
                                task.candidates = candidates;
                                out.failures.push(failure(plan, &task, unit, e));
                                return;
                            }
                        }
                    }
                },
            };
            match decision {
                Decision::Cuts(p) => cutting.push((cand.unit, p)),
                Decision::NoCut(side) => {
                    task.signs[cand.unit] = side;
                    task.redundant[cand.unit] = true;
                }
            }
        }
        drop(pool);

        if cutting.is_empty() {
            let pattern = SignPattern {
                signs: std::mem::take(&mut task.signs),
                redundant: std::mem::take(&mut task.redundant),
            };
            let layer = &plan.layers[task.layer];
            let slopes: Vec<f64> = pattern.signs.iter().map(|&s| layer.activation.slope(s)).collect();
            let mut post = task.eff.map.clone();
            post.scale_rows(&slopes);
            task.done.push(pattern);
            if task.layer + 1 < plan.layers.len() {
                drop(rows);
                drop(chain);
                let rows = task.rows.take();
                let done = std::mem::take(&mut task.done);
                let interior = task.interior.clone();
                out.tree_nodes += 1;
                task = make_layer_task(plan, task.layer + 1, rows, interior, done, &post);
                continue;
            }
            drop(rows);
            drop(chain);
            out.leaves.push(Leaf {
                patterns: task.done,
                rows: task.rows,
                interior: task.interior,
                post: plan.keep_post.then_some(post),
            });
            return;
        }

        // Split on the lowest-index cutting unit.
        let mut rest = cutting.into_iter();
        let (unit, witness) = rest.next().expect("non-empty");
        let rest: Vec<(usize, Point)> = rest.collect();
        let (normal, offset) = task.eff.rows[unit].clone().expect("cutting units have rows");
        let origin = RowOrigin::Unit {
            layer: plan.first_layer + task.layer,
            unit,
        };

        let mut children = Vec::with_capacity(2);
        for side in [Sign::Pos, Sign::Neg] {
            out.tree_nodes += 1;
            let s = side.as_f64();
            let side_normal: Vec<f64> = normal.iter().map(|v| s * v).collect();
            let side_offset = s * offset;
            let row_value = |x: &[f64]| dot(&side_normal, x) + side_offset;

            // Step off the splitting hyperplane by half the witness depth.
            let step = witness.depth / 2.0;
            let stepped: Vec<f64> = witness.x.iter().zip(&side_normal).map(|(x, n)| x + step * n).collect();
            let mut interior = Point {
                depth: depth_of(&rows, &plan.bx, &stepped, plan.cfg.eps_cap).min(row_value(&stepped)),
                x: stepped,
            };
            let parent_depth = task.interior.depth.min(row_value(&task.interior.x));
            if parent_depth > interior.depth {
                interior = Point {
                    x: task.interior.x.clone(),
                    depth: parent_depth,
                };
            }

            let child_rows = push_row(&task.rows, side_normal.clone(), side_offset, origin);
            if interior.depth <= tol {
                out.lp_calls += 1;
                let chain = chain_rows(&child_rows);
                let crow: Vec<(&[f64], f64)> = chain.iter().map(|n| (n.normal.as_slice(), n.offset)).collect();
                match max_margin(normal.len(), &crow, &plan.bx, None, &plan.cfg) {
                    Ok((eps, x)) if eps > tol => {
                        let depth = depth_of(&crow, &plan.bx, &x, plan.cfg.eps_cap);
                        interior = Point { x, depth };
                    }
                    Ok(_) => continue,
                    Err(e) => {
                        let mut t = failure(plan, &task, unit, e);
                        t.pattern.push_str(&format!(" (side {})", side.as_char()));
                        out.failures.push(t);
                        continue;
                    }
                }
            }

            let candidates = rest
                .iter()
                .map(|(u, p)| {
                    let depth = p.depth.min(row_value(&p.x));
                    Candidate {
                        unit: *u,
                        witness: (depth > tol).then(|| Point {
                            x: p.x.clone(),
                            depth,
                        }),
                    }
                })
                .collect();
            let mut signs = task.signs.clone();
            signs[unit] = side;
            children.push(Task {
                layer: task.layer,
                rows: child_rows,
                done: task.done.clone(),
                eff: task.eff.clone(),
                signs,
                redundant: task.redundant.clone(),
                candidates,
                interior,
            });
        }
        drop(rows);
        drop(chain);

        let mut children = children.into_iter();
        match children.next() {
            None => return,
            Some(first) => {
                if let Some(second) = children.next() {
                    spawn(second);
                }
                task = first;
            }
        }
    }
}

/// Deepest pair of pool points on opposite sides of the hyperplane; the
/// segment between them crosses it at depth at least the smaller of theirs.
fn crossing_certificate(
    pool: &[&Point],
    normal: &[f64],
    offset: f64,
    rows: &[(&[f64], f64)],
    bx: &InputBox,
    tol: f64,
    cap: f64,
) -> Option<Point> {
    let mut pos: Option<(&Point, f64)> = None;
    let mut neg: Option<(&Point, f64)> = None;
    for p in pool {
        if p.depth <= tol {
            continue;
        }
        let v = dot(normal, &p.x) + offset;
        let slot = if v > 0.0 {
            &mut pos
        } else if v < 0.0 {
            &mut neg
        } else {
            continue;
        };
        if slot.is_none_or(|(q, _)| p.depth > q.depth) {
            *slot = Some((p, v));
        }
    }
    let ((p, vp), (q, vq)) = (pos?, neg?);
    let t = vp / (vp - vq);
    let mut x: Vec<f64> = p.x.iter().zip(&q.x).map(|(a, b)| a + t * (b - a)).collect();
    // project the rounding error back onto the hyperplane
    let r = dot(normal, &x) + offset;
    for (xi, ni) in x.iter_mut().zip(normal) {
        *xi -= r * ni;
    }
    let depth = depth_of(rows, bx, &x, cap);
    (depth > tol).then_some(Point { x, depth })
}
