//! Sampling-based region discovery and the enumeration-vs-sampling
//! comparison under matched compute budgets.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::arrangement::{EnumOptions, EnumerationError};
use crate::deep::enumerate_network;
use crate::lp::InputBox;
use crate::network::{Network, PatternKey};

/// Default sampling box half-width for comparisons.
pub const DEFAULT_SAMPLING_HALF_WIDTH: f64 = 10.0;

const BATCH: usize = 1024;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("uniform sampling needs a bounded box")]
    UnboundedBox,
    #[error("box has dimension {found}, network expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("at least one sampling run is required")]
    NoRuns,
    #[error(transparent)]
    Enumeration(#[from] EnumerationError),
    #[error("enumeration incomplete: {0} branch(es) failed")]
    PartialEnumeration(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Samples(u64),
    WallTime(Duration),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    /// Seconds since sampling started.
    pub elapsed: f64,
    pub samples: u64,
    pub regions: usize,
}

/// Distinct regions found as a function of samples drawn, checkpointed at
/// 1, 2, 4, 8, … samples and at the final count.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DiscoveryCurve {
    pub points: Vec<CurvePoint>,
}

impl DiscoveryCurve {
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["elapsed", "samples", "regions"])?;
        for p in &self.points {
            w.write_record([p.elapsed.to_string(), p.samples.to_string(), p.regions.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Discovery {
    pub patterns: HashSet<PatternKey>,
    pub curve: DiscoveryCurve,
    pub samples: u64,
}

fn batch_keys(net: &Network, half_width: f64, seed: u64, batch: u64, size: usize) -> Vec<PatternKey> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch);
    let dim = net.input_dim();
    let mut x = vec![0.0; dim];
    let mut scratch = Default::default();
    (0..size)
        .map(|_| {
            for v in x.iter_mut() {
                *v = half_width * (2.0 * rng.random::<f64>() - 1.0);
            }
            net.pattern_key(&x, &mut scratch)
        })
        .collect()
}

/// Draws points uniformly in `bx` and records the distinct activation
/// patterns they hit.
///
/// Batch `i` of `BATCH` points comes from stream `i` of a ChaCha8 generator
/// seeded with `seed`, and batches are merged in order, so a sample-count
/// budget gives the same result for any worker count.
pub fn sample_discover(
    net: &Network,
    bx: &InputBox,
    budget: Budget,
    seed: u64,
    workers: usize,
) -> Result<Discovery, SamplingError> {
    let half_width = bx.half_width().ok_or(SamplingError::UnboundedBox)?;
    if bx.dim() != net.input_dim() {
        return Err(SamplingError::DimensionMismatch {
            expected: net.input_dim(),
            found: bx.dim(),
        });
    }
    let workers = workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");

    let started = Instant::now();
    let mut patterns = HashSet::new();
    let mut curve = DiscoveryCurve::default();
    let mut drawn: u64 = 0;
    let mut checkpoint: u64 = 1;
    let mut next_batch: u64 = 0;
    loop {
        let remaining = match budget {
            Budget::Samples(n) => n - drawn,
            Budget::WallTime(limit) => {
                if started.elapsed() >= limit {
                    0
                } else {
                    u64::MAX
                }
            }
        };
        if remaining == 0 {
            break;
        }
        let sizes: Vec<usize> = (0..workers as u64)
            .map(|i| remaining.saturating_sub(i * BATCH as u64).min(BATCH as u64) as usize)
            .filter(|&s| s > 0)
            .collect();
        let first = next_batch;
        let keys: Vec<Vec<PatternKey>> = pool.install(|| {
            sizes
                .par_iter()
                .enumerate()
                .map(|(i, &size)| batch_keys(net, half_width, seed, first + i as u64, size))
                .collect()
        });
        next_batch += sizes.len() as u64;
        let elapsed = started.elapsed().as_secs_f64();
        for key in keys.into_iter().flatten() {
            patterns.insert(key);
            drawn += 1;
            if drawn == checkpoint {
                curve.points.push(CurvePoint {
                    elapsed,
                    samples: drawn,
                    regions: patterns.len(),
                });
                checkpoint *= 2;
            }
        }
    }
    if drawn > 0 && curve.points.last().is_some_and(|p| p.samples != drawn) {
        curve.points.push(CurvePoint {
            elapsed: started.elapsed().as_secs_f64(),
            samples: drawn,
            regions: patterns.len(),
        });
    }
    Ok(Discovery {
        patterns,
        curve,
        samples: drawn,
    })
}

/// How long each sampling run may go on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetPolicy {
    /// Same wall time the exact enumeration took.
    MatchedWallTime,
    /// Fixed number of samples per run (deterministic).
    Samples(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonConfig {
    pub input_dim: usize,
    pub widths: Vec<usize>,
    pub activation: String,
    pub alpha: Option<f64>,
    /// Seed the network was generated from, when known.
    pub network_seed: Option<u64>,
    pub sampling_seed: u64,
    pub box_half_width: f64,
    pub budget: String,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub enumeration_count: usize,
    pub enumeration_time: f64,
    pub sampling_counts: Vec<usize>,
    pub sampling_samples: Vec<u64>,
    pub sampling_seeds: Vec<u64>,
    pub sampling_mean: f64,
    pub sampling_std: f64,
    pub sampling_runs: usize,
    pub percent_found: f64,
    /// Sampled patterns missing from the enumeration (expected 0).
    pub unmatched_patterns: usize,
    pub config: ComparisonConfig,
}

/// Seed of sampling run `run` derived from the base seed.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    // splitmix64 step
    let mut z = seed.wrapping_add((run as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs exact enumeration once, then `runs` sampling runs with the chosen
/// budget, and aggregates how much of the partition sampling found.
pub fn compare(
    net: &Network,
    bx: &InputBox,
    runs: usize,
    seed: u64,
    policy: BudgetPolicy,
    opts: &EnumOptions,
) -> Result<ComparisonReport, SamplingError> {
    if runs == 0 {
        return Err(SamplingError::NoRuns);
    }
    let half_width = bx.half_width().ok_or(SamplingError::UnboundedBox)?;
    let partition = enumerate_network(net, bx, opts)?;
    if !partition.is_complete() {
        return Err(SamplingError::PartialEnumeration(partition.failures.len()));
    }
    let enumeration_time = partition.stats.wall_time;
    let enumerated = partition.pattern_keys();
    let budget = match policy {
        BudgetPolicy::MatchedWallTime => Budget::WallTime(Duration::from_secs_f64(enumeration_time)),
        BudgetPolicy::Samples(n) => Budget::Samples(n),
    };

    let mut counts = Vec::with_capacity(runs);
    let mut samples = Vec::with_capacity(runs);
    let mut seeds = Vec::with_capacity(runs);
    let mut unmatched = 0;
    for run in 0..runs {
        let s = run_seed(seed, run);
        let found = sample_discover(net, bx, budget, s, opts.workers)?;
        unmatched += found.patterns.difference(&enumerated).count();
        counts.push(found.patterns.len());
        samples.push(found.samples);
        seeds.push(s);
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    let std = if counts.len() > 1 {
        (counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let first = &net.layers()[0].activation;
    Ok(ComparisonReport {
        enumeration_count: partition.len(),
        enumeration_time,
        percent_found: 100.0 * mean / partition.len() as f64,
        sampling_counts: counts,
        sampling_samples: samples,
        sampling_seeds: seeds,
        sampling_mean: mean,
        sampling_std: std,
        sampling_runs: runs,
        unmatched_patterns: unmatched,
        config: ComparisonConfig {
            input_dim: net.input_dim(),
            widths: net.sign_layers().iter().map(|l| l.units()).collect(),
            activation: serde_json::to_value(first.kind)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
            alpha: (first.kind == crate::network::ActivationKind::LeakyRelu).then_some(first.alpha),
            network_seed: None,
            sampling_seed: seed,
            box_half_width: half_width,
            budget: match policy {
                BudgetPolicy::MatchedWallTime => "matched_wall_time".into(),
                BudgetPolicy::Samples(n) => format!("samples:{n}"),
            },
            workers: opts.workers,
        },
    })
}

fn width_label(widths: &[usize]) -> String {
    let joined = widths.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
    format!("K={joined}")
}

/// Table with one row per input dimension and one column per width; cells
/// read `enumeration / mean±std / percent`. Reports sharing a cell (several
/// network seeds) are pooled: the enumeration count and percentage are
/// averaged, and mean and std run over all their sampling runs.
pub fn write_table_csv<W: Write>(reports: &[ComparisonReport], writer: W) -> csv::Result<()> {
    let columns: BTreeSet<Vec<usize>> = reports.iter().map(|r| r.config.widths.clone()).collect();
    let mut rows: BTreeMap<usize, BTreeMap<Vec<usize>, Vec<&ComparisonReport>>> = BTreeMap::new();
    for r in reports {
        rows.entry(r.config.input_dim)
            .or_default()
            .entry(r.config.widths.clone())
            .or_default()
            .push(r);
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["D".to_string()];
    header.extend(columns.iter().map(|c| width_label(c)));
    w.write_record(&header)?;
    for (dim, cells) in &rows {
        let mut rec = vec![dim.to_string()];
        for c in &columns {
            rec.push(match cells.get(c) {
                Some(group) => format_cell(group),
                None => "-".into(),
            });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn format_cell(group: &[&ComparisonReport]) -> String {
    let n = group.len() as f64;
    let counts: Vec<f64> = group
        .iter()
        .flat_map(|r| r.sampling_counts.iter().map(|&c| c as f64))
        .collect();
    let m = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / m;
    let std = if counts.len() > 1 {
        (counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        0.0
    };
    let percent = group.iter().map(|r| r.percent_found).sum::<f64>() / n;
    let enumerated = if group.len() == 1 {
        group[0].enumeration_count.to_string()
    } else {
        format!("{:.1}", group.iter().map(|r| r.enumeration_count as f64).sum::<f64>() / n)
    };
    format!("{enumerated} / {mean:.1}±{std:.1} / {percent:.1}%")
}
