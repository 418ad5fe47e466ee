use fewshot_nerf::diffcore::{Graph, ParamStore, Tensor};
use fewshot_nerf::nets::{lipschitz_normalize_tensor, max_row_sum, network_lipschitz_bound, Activation, Mlp};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_net(seed: u64, dims: &[usize], lipschitz: bool) -> (Mlp, ParamStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let mlp = Mlp::new(&mut params, "net", dims, Activation::Relu, Activation::Sigmoid, lipschitz, &mut rng).unwrap();
    for layer in mlp.layers() {
        for v in params.get_mut(layer.bias).data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        for v in params.get_mut(layer.weight).data_mut() {
            *v *= rng.gen_range(0.5..3.0);
        }
        if let Some(k) = layer.bound {
            params.get_mut(k).data_mut()[0] = rng.gen_range(-1.0..2.0);
        }
    }
    (mlp, params)
}

fn inf_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lipschitz_bound_holds_on_random_pairs(seed in 0u64..10_000) {
        let dims = [6, 16, 16, 4];
        let (mlp, params) = random_net(seed, &dims, true);
        let bound = network_lipschitz_bound(&mlp, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let pairs = 200;
        let x0 = Tensor::from_fn(&[pairs, 6], |_| rng.gen_range(-2.0..2.0));
        let x1 = Tensor::from_fn(&[pairs, 6], |i| {
            let scale = if (i / 6) % 2 == 0 { 1e-3 } else { 1.0 };
            x0.data()[i] + scale * rng.gen_range(-1.0..1.0)
        });
        let y0 = mlp.eval_pre_output(&params, x0.clone()).unwrap();
        let y1 = mlp.eval_pre_output(&params, x1.clone()).unwrap();
        for p in 0..pairs {
            let dy = inf_norm_diff(&y0.data()[p * 4..p * 4 + 4], &y1.data()[p * 4..p * 4 + 4]);
            let dx = inf_norm_diff(&x0.data()[p * 6..p * 6 + 6], &x1.data()[p * 6..p * 6 + 6]);
            prop_assert!(dy <= bound * dx * (1.0 + 1e-12), "pair {p}: {dy} > {bound} * {dx}");
        }
    }

    #[test]
    fn normalization_is_idempotent(seed in 0u64..10_000, k in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Tensor::from_fn(&[5, 7], |_| rng.gen_range(-2.0..2.0));
        let once = lipschitz_normalize_tensor(&w, k);
        let twice = lipschitz_normalize_tensor(&once, k);
        prop_assert!(inf_norm_diff(once.data(), twice.data()) <= 1e-12);
        prop_assert!(max_row_sum(&once) <= fewshot_nerf::diffcore::softplus(k) + 1e-12);
    }
}

#[test]
fn unbounded_lipschitz_net_matches_plain_net_bit_for_bit() {
    let dims = [5, 8, 3];
    let (plain, params) = random_net(7, &dims, false);
    let (lip, mut lip_params) = random_net(7, &dims, true);
    // copy the plain weights and make every bound far above every row-sum
    for (a, b) in plain.layers().iter().zip(lip.layers()) {
        *lip_params.get_mut(b.weight) = params.get(a.weight).clone();
        *lip_params.get_mut(b.bias) = params.get(a.bias).clone();
        lip_params.get_mut(b.bound.unwrap()).data_mut()[0] = 1e3;
    }
    let x = Tensor::from_fn(&[9, 5], |i| (i as f64 * 0.71).cos());
    let a = plain.eval_pre_output(&params, x.clone()).unwrap();
    let b = lip.eval_pre_output(&lip_params, x.clone()).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));

    // and the plain net is exactly the textbook composition of tape ops
    let mut g = Graph::new();
    let mut h = g.constant(x);
    for (i, layer) in plain.layers().iter().enumerate() {
        let w = g.constant(params.get(layer.weight).clone());
        let wt = g.transpose(w).unwrap();
        let z = g.matmul(h, wt).unwrap();
        let bias = g.constant(params.get(layer.bias).clone());
        h = g.add(z, bias).unwrap();
        if i + 1 < plain.layers().len() {
            h = g.relu(h).unwrap();
        }
    }
    assert_eq!(bits(&a), bits(g.value(h)));
}
