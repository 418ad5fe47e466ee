mod oracles;

use fewshot_nerf::diffcore::{Graph, Tensor};
use fewshot_nerf::rendering::volume_render;
use proptest::prelude::*;

struct Rendered {
    rgb: Vec<f64>,
    depth: Vec<f64>,
    acc: Vec<f64>,
    weights: Vec<f64>,
    transmittance: Vec<f64>,
}

fn render(sigma: &[f64], color: &[f64], t: &[f64], delta: &[f64], b: usize, n: usize) -> Rendered {
    let mut g = Graph::new();
    let s = g.constant(Tensor::new(vec![b, n], sigma.to_vec()).unwrap());
    let c = g.constant(Tensor::new(vec![b, n, 3], color.to_vec()).unwrap());
    let t = Tensor::new(vec![b, n], t.to_vec()).unwrap();
    let d = Tensor::new(vec![b, n], delta.to_vec()).unwrap();
    let out = volume_render(&mut g, s, c, &t, &d).unwrap();
    let v = |id| g.value(id).data().to_vec();
    Rendered {
        rgb: v(out.rgb),
        depth: v(out.depth),
        acc: v(out.acc),
        weights: v(out.weights),
        transmittance: v(out.transmittance),
    }
}

#[test]
fn matches_extended_precision_reference() {
    let cases = oracles::render_cases();
    assert_eq!(cases.len(), 1000);
    for (k, case) in cases.iter().enumerate() {
        let n = case.sigma.len();
        let color: Vec<f64> = case.color.concat();
        let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let out = render(&case.sigma, &color, &t, &case.delta, 1, n);
        for c in 0..3 {
            assert!((out.rgb[c] - case.rgb[c]).abs() <= 1e-12, "case {k} rgb");
        }
        for i in 0..n {
            assert!((out.transmittance[i] - case.transmittance[i]).abs() <= 1e-12, "case {k} T_{i}");
            assert!((out.weights[i] - case.weights[i]).abs() <= 1e-12, "case {k} w_{i}");
            let next = if i + 1 < n { out.transmittance[i + 1] } else { case.final_transmittance };
            assert!((out.weights[i] - (out.transmittance[i] - next)).abs() <= 1e-12, "case {k} identity at {i}");
        }
    }
}

fn instance() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, u64)> {
    (1usize..4, 1usize..10).prop_flat_map(|(b, n)| {
        (
            Just(b),
            Just(n),
            prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..20.0], b * n),
            prop::collection::vec(0.0f64..1.0, b * n * 3),
            any::<u64>(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn transmittance_weights_and_ranges((b, n, sigma, color, seed) in instance()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (t, delta) = oracles::sorted_samples(&mut rng, b, n);
        let out = render(&sigma, &color, &t, &delta, b, n);
        for r in 0..b {
            let mut product = 1.0;
            for i in 0..n {
                let k = r * n + i;
                prop_assert!((out.transmittance[k] - product).abs() <= 1e-12);
                let next = product * (-sigma[k] * delta[k]).exp();
                prop_assert!((out.weights[k] - (out.transmittance[k] - next)).abs() <= 1e-12);
                product = next;
            }
            prop_assert!((0.0..=1.0).contains(&out.acc[r]));
            if out.acc[r] > 1e-6 {
                let (t1, tn) = (t[r * n], t[r * n + n - 1]);
                prop_assert!(out.depth[r] >= t1 - 1e-12 && out.depth[r] <= tn + 1e-12);
            }
        }
    }
}
