//! Analytic gradients against central finite differences.

use dfdqn::nn::{build_network, LayerSpec, NetworkParams, TensorShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
/// Denominator floor so near-zero gradients are compared absolutely.
const FLOOR: f64 = 1e-6;

fn nets() -> Vec<(&'static str, Vec<LayerSpec>, TensorShape, usize)> {
    use LayerSpec::*;
    vec![
        ("linear", vec![], TensorShape::flat(6).unwrap(), 3),
        ("dense-relu", vec![Dense { units: 8 }, Rectifier], TensorShape::flat(5).unwrap(), 4),
        (
            "dense-relu-dense-relu",
            vec![Dense { units: 6 }, Rectifier, Dense { units: 5 }, Rectifier],
            TensorShape::flat(4).unwrap(),
            2,
        ),
        ("conv", vec![Conv { filters: 2, size: 3, stride: 1 }, Rectifier], TensorShape::image(5, 5, 2).unwrap(), 3),
        (
            "conv-stride",
            vec![Conv { filters: 3, size: 2, stride: 2 }, Rectifier, Dense { units: 4 }, Rectifier],
            TensorShape::image(6, 6, 1).unwrap(),
            2,
        ),
        (
            "conv-conv",
            vec![
                Conv { filters: 2, size: 3, stride: 1 },
                Rectifier,
                Conv { filters: 2, size: 2, stride: 1 },
                Rectifier,
            ],
            TensorShape::image(6, 5, 1).unwrap(),
            4,
        ),
    ]
}

/// Smallest |pre-activation| seen by any rectifier.
fn kink_margin(net: &NetworkParams, x: &[f64]) -> f64 {
    let acts = net.forward_trace(x).unwrap();
    net.layer_specs()
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::Rectifier))
        .flat_map(|(i, _)| acts[i].iter().map(|z| z.abs()))
        .fold(f64::INFINITY, f64::min)
}

fn objective(net: &NetworkParams, x: &[f64], c: &[f64]) -> f64 {
    net.forward(x).unwrap().iter().zip(c).map(|(o, w)| o * w).sum()
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for (i, (name, layers, shape, outputs)) in nets().into_iter().enumerate() {
        let mut net = build_network(&layers, &shape, outputs, 100 + i as u64).unwrap();
        let params = net.params.count();
        assert!(params < 500, "{name}: {params} parameters");
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let c: Vec<f64> = (0..outputs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // keep every rectifier input well away from its kink so the
        // central difference never straddles it
        let x = (0..1000)
            .map(|_| (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>())
            .find(|x| kink_margin(&net, x) > 1e-3)
            .expect("input away from kinks");

        let analytic = net.backward(&x, &c).unwrap();
        let analytic: Vec<f64> = analytic.iter().copied().collect();
        let mut worst: f64 = 0.0;
        for (p, &a) in analytic.iter().enumerate() {
            let orig = *net.params.iter().nth(p).unwrap();
            *net.params.iter_mut().nth(p).unwrap() = orig + H;
            let up = objective(&net, &x, &c);
            *net.params.iter_mut().nth(p).unwrap() = orig - H;
            let down = objective(&net, &x, &c);
            *net.params.iter_mut().nth(p).unwrap() = orig;
            let numeric = (up - down) / (2.0 * H);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            assert!(rel < REL_TOL, "{name} param {p}: analytic {a} numeric {numeric} rel {rel}");
            worst = worst.max(rel);
        }
        println!("{name}: {params} params, worst relative error {worst:e}");
    }
}
