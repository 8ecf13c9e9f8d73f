//! Acceptance checks, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach stdout; exits non-zero on any FAIL.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cpa_enum::arrangement::general_position_count;
use cpa_enum::deep::prefix_patterns;
use cpa_enum::{
    brute_force_enumerate, compare, enumerate_layer, enumerate_network, Activation, BudgetPolicy, EnumOptions,
    InputBox, Layer, Network,
};
use ndarray::{Array1, Array2};

const BIN: &str = env!("CARGO_BIN_EXE_cpa-enum");

type Check<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn single_layer(dim: usize, units: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
    let net = Network::random(dim, &[units], Activation::relu(), seed).unwrap();
    let l = &net.layers()[0];
    (l.weights.clone(), l.bias.clone())
}

fn opts() -> EnumOptions {
    EnumOptions::default()
}

fn oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let mut mismatches = 0;
    for i in 0..50u64 {
        let dim = 2 + (i as usize % 5);
        let units = 3 + (i as usize * 7 % 10);
        let (w, b) = single_layer(dim, units, 1000 + i);
        let bx = InputBox::bounded(dim, 1e3).unwrap();
        let fast: BTreeSet<String> = enumerate_layer(&w, &b, &bx, &opts()).unwrap().pattern_strings().into_iter().collect();
        let slow: BTreeSet<String> =
            brute_force_enumerate(&w, &b, &bx, &opts()).unwrap().pattern_strings().into_iter().collect();
        if fast != slow {
            mismatches += 1;
        }
    }
    let elapsed = started.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(120),
        format!("50 layers, D 2..6, K 3..12: {mismatches} mismatches in {:.1}s (limit 120s)", elapsed.as_secs_f64()),
    )
}

fn count_laws() -> Outcome {
    let started = Instant::now();
    let mut wrong = Vec::new();
    let mut cases = 0;
    for dim in [2usize, 3, 4] {
        for units in [4usize, 8, 12] {
            for seed in 0..10u64 {
                let (w, b) = single_layer(dim, units, seed);
                let bx = InputBox::unbounded(dim);
                for central in [false, true] {
                    let bias = if central { Array1::zeros(units) } else { b.clone() };
                    let got = enumerate_layer(&w, &bias, &bx, &opts()).unwrap().len() as u128;
                    let want = general_position_count(units as u64, dim as u64, central);
                    cases += 1;
                    if got != want {
                        wrong.push(format!("D={dim} K={units} seed={seed} central={central}: {got} != {want}"));
                    }
                }
            }
        }
    }
    let elapsed = started.elapsed();
    outcome(
        wrong.is_empty() && elapsed < Duration::from_secs(120),
        format!(
            "{cases} arrangements (affine and central, D 2..4, K 4/8/12, 10 seeds): {} off in {:.1}s{}",
            wrong.len(),
            elapsed.as_secs_f64(),
            wrong.first().map(|w| format!("; first {w}")).unwrap_or_default()
        ),
    )
}

/// The 20 networks shared by the affine-exactness and refinement checks.
fn deep_nets() -> Vec<Network> {
    let acts = [Activation::relu(), Activation::leaky_relu(0.1), Activation::abs()];
    (0..20u64)
        .map(|i| {
            let dim = 2 + (i as usize % 3);
            let widths: &[usize] = if i % 2 == 0 { &[8, 8] } else { &[6, 6, 6] };
            let net = Network::random(dim, widths, acts[i as usize % 3], 2000 + i).unwrap();
            if i % 4 < 2 {
                return net;
            }
            // half the nets get a linear read-out head
            let width = *widths.last().unwrap();
            let head = Layer::new(
                Array2::from_shape_fn((3, width), |(r, c)| ((r * width + c) as f64 * 0.37).sin()),
                Array1::from(vec![0.5, -1.0, 0.25]),
                Activation::identity(),
            );
            let mut layers = net.layers().to_vec();
            layers.push(head);
            Network::new(dim, layers).unwrap()
        })
        .collect()
}

fn deep_affine_exactness(nets: &[Network]) -> Outcome {
    let mut regions = 0usize;
    let mut bad = 0usize;
    let mut worst: f64 = 0.0;
    for net in nets {
        let bx = InputBox::bounded(net.input_dim(), 1e3).unwrap();
        let p = enumerate_network(net, &bx, &opts()).unwrap();
        for r in &p.regions {
            regions += 1;
            let want = net.forward(&r.interior).unwrap().output;
            let got = r.affine.as_ref().unwrap().apply(&r.interior);
            let err = want
                .iter()
                .zip(got.iter())
                .map(|(w, g)| (w - g).abs() / w.abs().max(1.0))
                .fold(0.0, f64::max);
            worst = worst.max(err);
            if err > 1e-6 {
                bad += 1;
            }
        }
    }
    outcome(
        bad == 0,
        format!("20 nets, {regions} regions: {bad} violate 1e-6 relative (worst {worst:.2e})"),
    )
}

fn refinement(nets: &[Network]) -> Outcome {
    let mut failing = 0;
    for net in nets {
        let bx = InputBox::bounded(net.input_dim(), 1e3).unwrap();
        let deep = enumerate_network(net, &bx, &opts()).unwrap();
        let first = &net.layers()[0];
        let flat = enumerate_layer(&first.weights, &first.bias, &bx, &opts()).unwrap();
        let projected: BTreeSet<String> = prefix_patterns(&deep, 1).iter().map(|p| p.signs_string()).collect();
        let direct: BTreeSet<String> = flat.pattern_strings().into_iter().collect();
        if projected != direct {
            failing += 1;
        }
    }
    outcome(failing == 0, format!("20 nets: {failing} with layer-1 projection != layer-1 partition"))
}

fn sampling_subsumption_and_trend() -> Outcome {
    let started = Instant::now();
    let mut unmatched = 0;
    let mut means = Vec::new();
    for dim in [2usize, 4, 8] {
        let mut percents = Vec::new();
        for net_seed in 0..5u64 {
            let net = Network::random(dim, &[16], Activation::relu(), 3000 + net_seed).unwrap();
            let bx = InputBox::bounded(dim, 10.0).unwrap();
            let opts = EnumOptions { workers: 1, ..opts() };
            let report = compare(&net, &bx, 5, net_seed, BudgetPolicy::MatchedWallTime, &opts).unwrap();
            unmatched += report.unmatched_patterns;
            percents.push(report.percent_found);
        }
        means.push((dim, percents.iter().sum::<f64>() / percents.len() as f64));
    }
    let non_increasing = means.windows(2).all(|w| w[1].1 <= w[0].1);
    let trend = means
        .iter()
        .map(|(d, m)| format!("D={d}: {m:.1}%"))
        .collect::<Vec<_>>()
        .join(" -> ");
    outcome(
        unmatched == 0 && non_increasing,
        format!(
            "width 16, 5 nets x 5 runs per D, matched wall time: {unmatched} sampled patterns outside the enumeration; {trend} ({:.0}s)",
            started.elapsed().as_secs_f64()
        ),
    )
}

fn run_cli(args: &[&str]) -> String {
    let out = Command::new(BIN).args(args).env_remove("CPA_ENUM_WORKERS").output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn parallel_determinism(dir: &Path) -> Outcome {
    let mut differing = Vec::new();
    let configs: [(&str, &str, &str); 10] = [
        ("2", "12", "relu"),
        ("3", "10", "leaky-relu"),
        ("4", "16", "abs"),
        ("2", "6,6", "relu"),
        ("3", "8,6", "abs"),
        ("4", "6,5", "leaky-relu"),
        ("5", "12", "relu"),
        ("2", "5,5,5", "relu"),
        ("3", "5,4,4", "leaky-relu"),
        ("6", "14", "abs"),
    ];
    for (i, (d, w, act)) in configs.iter().enumerate() {
        let net = dir.join(format!("net{i}.json"));
        let seed = (40 + i).to_string();
        run_cli(&["gen", "-D", d, "-w", w, "--act", act, "--seed", &seed, "-o", net.to_str().unwrap()]);
        let mut files = Vec::new();
        for workers in ["1", "8"] {
            let out = dir.join(format!("part{i}_{workers}.json"));
            run_cli(&["enumerate", net.to_str().unwrap(), "--workers", workers, "--out", out.to_str().unwrap()]);
            files.push(std::fs::read(out).unwrap());
        }
        if files[0] != files[1] {
            differing.push(i);
        }
    }
    outcome(
        differing.is_empty(),
        format!("10 configs, --workers 1 vs 8: {} differing partition files {differing:?}", differing.len()),
    )
}

fn scaling() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for units in [16usize, 32, 64] {
        let mut ratios = Vec::new();
        for seed in 0..3u64 {
            let (w, b) = single_layer(4, units, 4000 + seed);
            let bx = InputBox::bounded(4, 1e3).unwrap();
            let p = enumerate_layer(&w, &b, &bx, &opts()).unwrap();
            ratios.push(p.stats.lp_calls as f64 / p.len() as f64);
        }
        let max = ratios.iter().cloned().fold(0.0, f64::max);
        worst = worst.max(max);
        rows.push(format!("K={units}: max {max:.2}"));
    }
    outcome(
        worst < 4.0,
        format!("D=4, 3 seeds per K, lp_calls/region_count: {} (limit 4)", rows.join(", ")),
    )
}

fn attr<'a>(line: &'a str, name: &str) -> &'a str {
    let key = format!(" {name}=\"");
    let start = line.find(&key).unwrap() + key.len();
    let rest = &line[start..];
    &rest[..rest.find('"').unwrap()]
}

fn slice_correctness(dir: &Path) -> Outcome {
    let net_path = dir.join("slice_net.json");
    let svg_path = dir.join("slice.svg");
    run_cli(&["gen", "-D", "2", "-w", "6,6,5", "--seed", "77", "-o", net_path.to_str().unwrap()]);
    run_cli(&["slice", net_path.to_str().unwrap(), "--extent", "5", "-o", svg_path.to_str().unwrap()]);
    let stats = run_cli(&["enumerate", net_path.to_str().unwrap(), "--box", "5"]);
    let enumerated: usize = stats
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix("regions="))
        .unwrap()
        .parse()
        .unwrap();

    let net = Network::load(&net_path).unwrap();
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    let drawn: usize = svg.lines().find(|l| l.starts_with("<svg")).map(|l| attr(l, "data-regions")).unwrap().parse().unwrap();
    let mut segments = 0;
    let mut off = 0;
    let mut worst: f64 = 0.0;
    for line in svg.lines().filter(|l| l.starts_with("<line")) {
        segments += 1;
        let num = |n: &str| attr(line, n).parse::<f64>().unwrap();
        let (x1, y1, x2, y2) = (num("x1"), num("y1"), num("x2"), num("y2"));
        let layer: usize = attr(line, "data-layer").parse().unwrap();
        let unit: usize = attr(line, "data-unit").parse().unwrap();
        for t in [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
            let x = [x1 + t * (x2 - x1), y1 + t * (y2 - y1)];
            let v = net.forward(&x).unwrap().preactivations[layer - 1][unit].abs();
            worst = worst.max(v);
            if v > 1e-6 {
                off += 1;
            }
        }
    }
    outcome(
        segments > 0 && off == 0 && drawn == enumerated,
        format!(
            "3-layer D=2 net: {segments} segments, {off} sample points off their unit (worst {worst:.1e}, limit 1e-6); slice regions {drawn}, enumeration {enumerated}"
        ),
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let nets = deep_nets();
    let checks: Vec<Check> = vec![
        ("oracle_equivalence", Box::new(oracle_equivalence)),
        ("count_laws", Box::new(count_laws)),
        ("deep_affine_exactness", Box::new(|| deep_affine_exactness(&nets))),
        ("refinement", Box::new(|| refinement(&nets))),
        ("sampling_subsumption_trend", Box::new(sampling_subsumption_and_trend)),
        ("parallel_determinism", Box::new(|| parallel_determinism(dir.path()))),
        ("lp_scaling", Box::new(scaling)),
        ("slice_correctness", Box::new(|| slice_correctness(dir.path()))),
    ];
    let mut failed = 0;
    for (name, check) in &checks {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
