use std::collections::BTreeSet;

use cpa_enum::deep::prefix_patterns;
use cpa_enum::{enumerate_layer, enumerate_network, Activation, EnumOptions, InputBox, Layer, Network};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn with_head(net: Network, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = net.layers().last().unwrap().units();
    let w = Array2::from_shape_simple_fn((2, width), || rng.random_range(-1.0..1.0));
    let head = Layer::new(w, ndarray::array![0.1, -0.2], Activation::identity());
    let mut layers = net.layers().to_vec();
    layers.push(head);
    Network::new(net.input_dim(), layers).unwrap()
}

fn nets() -> Vec<Network> {
    let acts = [Activation::relu(), Activation::leaky_relu(0.1), Activation::abs()];
    let mut out = Vec::new();
    for i in 0..6u64 {
        let dim = 2 + (i as usize % 2);
        let widths: &[usize] = if i % 2 == 0 { &[5, 5] } else { &[4, 3, 3] };
        let net = Network::random(dim, widths, acts[i as usize % 3], 100 + i).unwrap();
        out.push(with_head(net, i));
    }
    out
}

#[test]
fn region_maps_reproduce_the_forward_pass() {
    let opts = EnumOptions::default();
    for net in nets() {
        let bx = InputBox::bounded(net.input_dim(), 20.0).unwrap();
        let p = enumerate_network(&net, &bx, &opts).unwrap();
        assert!(p.is_complete());
        for r in &p.regions {
            let map = r.affine.as_ref().unwrap();
            let got = map.apply(&r.interior);
            let want = net.forward(&r.interior).unwrap().output;
            for (g, w) in got.iter().zip(want.iter()) {
                assert!((g - w).abs() <= 1e-9 * w.abs().max(1.0));
            }
            let from_pattern = net.region_affine_map(&r.pattern).unwrap();
            assert!(from_pattern.matrix.iter().zip(&map.matrix).all(|(a, b)| (a - b).abs() <= 1e-9));
        }
    }
}

#[test]
fn deep_partition_refines_the_first_layer() {
    let opts = EnumOptions::default();
    for net in nets() {
        let bx = InputBox::bounded(net.input_dim(), 20.0).unwrap();
        let deep = enumerate_network(&net, &bx, &opts).unwrap();
        let first = &net.layers()[0];
        let flat = enumerate_layer(&first.weights, &first.bias, &bx, &opts).unwrap();
        let projected: BTreeSet<String> = prefix_patterns(&deep, 1).iter().map(|p| p.signs_string()).collect();
        let direct: BTreeSet<String> = flat.pattern_strings().into_iter().collect();
        assert_eq!(projected, direct);
        assert!(deep.len() >= flat.len());
    }
}

#[test]
fn samples_hit_only_enumerated_patterns() {
    let opts = EnumOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut scratch = Default::default();
    for net in nets() {
        let d = net.input_dim();
        let bx = InputBox::bounded(d, 6.0).unwrap();
        let p = enumerate_network(&net, &bx, &opts).unwrap();
        let keys = p.pattern_keys();
        for _ in 0..5_000 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-6.0..6.0)).collect();
            assert!(keys.contains(&net.pattern_key(&x, &mut scratch)));
        }
    }
}

#[test]
fn interiors_carry_their_own_pattern() {
    let opts = EnumOptions::default();
    for net in nets() {
        let bx = InputBox::bounded(net.input_dim(), 1e3).unwrap();
        let p = enumerate_network(&net, &bx, &opts).unwrap();
        let mut seen = BTreeSet::new();
        for r in &p.regions {
            assert_eq!(net.activation_pattern(&r.interior).unwrap(), r.pattern);
            assert!(seen.insert(r.pattern.signs_string()));
        }
    }
}

#[test]
fn activation_slope_only_moves_deeper_boundaries() {
    let relu = Network::random(2, &[6, 4], Activation::relu(), 9).unwrap();
    let leaky = Network::random(2, &[6, 4], Activation::leaky_relu(0.2), 9).unwrap();
    let bx = InputBox::bounded(2, 50.0).unwrap();
    let opts = EnumOptions::default();
    let a = enumerate_network(&relu, &bx, &opts).unwrap();
    let b = enumerate_network(&leaky, &bx, &opts).unwrap();
    assert_eq!(prefix_patterns(&a, 1), prefix_patterns(&b, 1));
}

#[test]
fn patterns_are_constant_inside_each_region() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for net in nets().into_iter().take(3) {
        let d = net.input_dim();
        let bx = InputBox::bounded(d, 20.0).unwrap();
        let p = enumerate_network(&net, &bx, &EnumOptions::default()).unwrap();
        for r in &p.regions {
            // Every unit row is normalized, so the ball of radius `margin`
            // around the interior point stays inside the region.
            for _ in 0..100 {
                let dir: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                let scale = 0.99 * r.margin * rng.random::<f64>() / norm;
                let x: Vec<f64> = r.interior.iter().zip(&dir).map(|(c, v)| c + scale * v).collect();
                assert_eq!(net.activation_pattern(&x).unwrap(), r.pattern);
            }
        }
    }
}
