use fewshot_nerf::diffcore::{Graph, Tensor};
use fewshot_nerf::encodings::{
    apply_encoding_mask, kept_features, mask_ratio, sh_encode, HashGridConfig, HashGridEncoding, MaskSchedule,
};
use fewshot_nerf::diffcore::ParamStore;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid() -> (HashGridEncoding, ParamStore, Vec<fewshot_nerf::diffcore::ParamId>) {
    let enc = HashGridEncoding::new(HashGridConfig {
        levels: 4,
        features_per_level: 2,
        log2_table_size: 8,
        base_resolution: 2,
        max_resolution: 16,
    })
    .unwrap();
    let mut params = ParamStore::new();
    let ids = enc.init_tables(&mut params, "grid", &mut ChaCha8Rng::seed_from_u64(3));
    // spread the entries so continuity is tested at a meaningful scale
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for &id in &ids {
        for v in params.get_mut(id).data_mut() {
            *v = rand::Rng::gen_range(&mut rng, -1.0..1.0);
        }
    }
    (enc, params, ids)
}

fn encode(enc: &HashGridEncoding, params: &ParamStore, ids: &[fewshot_nerf::diffcore::ParamId], p: [f64; 3]) -> Vec<f64> {
    let mut g = Graph::new();
    let tables: Vec<_> = ids.iter().map(|&id| g.constant(params.get(id).clone())).collect();
    let out = enc.encode(&mut g, &tables, &[p]).unwrap();
    g.value(out).data().to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn hash_encoding_is_continuous(
        p in prop::array::uniform3(0.01f64..0.99),
        d in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let (enc, params, ids) = grid();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        let q = std::array::from_fn(|k| p[k] + 1e-7 * d[k] / norm);
        let max_entry = ids.iter().map(|&id| params.get(id).max_abs()).fold(0.0, f64::max);
        let (a, b) = (encode(&enc, &params, &ids, p), encode(&enc, &params, &ids, q));
        let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(worst < 1e-4 * max_entry);
    }

    #[test]
    fn mask_ratio_is_monotone_and_saturates(
        frac in 0.05f64..1.0,
        total in 1usize..5000,
        x0 in 0.01f64..1.0,
        a in 0usize..6000,
        b in 0usize..6000,
    ) {
        let sched = MaskSchedule { saturate_fraction: frac, total_iterations: total, x_initial: x0 };
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(mask_ratio(lo, &sched) <= mask_ratio(hi, &sched));
        let saturation = (frac * total as f64).ceil() as usize;
        prop_assert_eq!(mask_ratio(saturation, &sched), 1.0);
        prop_assert_eq!(mask_ratio(saturation + a, &sched), 1.0);
        prop_assert!(mask_ratio(lo, &sched) >= x0);
    }

    #[test]
    fn masked_slots_get_zero_gradient(x in 0.0f64..1.0, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = Tensor::from_fn(&[5, 12], |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let mut g = Graph::new();
        let v = g.variable(f.clone());
        let masked = apply_encoding_mask(&mut g, v, x).unwrap();
        let sq = g.square(masked).unwrap();
        let loss = g.sum_all(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        let keep = kept_features(12, x);
        let grad = grads.get(v).unwrap();
        for r in 0..5 {
            for c in 0..12 {
                let gv = grad.data()[r * 12 + c];
                if c < keep {
                    prop_assert_eq!(gv, 2.0 * f.data()[r * 12 + c]);
                } else {
                    prop_assert_eq!(gv, 0.0);
                }
            }
        }
    }
}

#[test]
fn full_mask_is_bit_identical() {
    let f = Tensor::from_fn(&[3, 8], |i| (i as f64 * 0.37).sin());
    let mut g = Graph::new();
    let v = g.variable(f.clone());
    let out = apply_encoding_mask(&mut g, v, 1.0).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(g.value(out)), bits(&f));
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let step = p1 / dp;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

#[test]
fn spherical_harmonics_are_orthonormal() {
    // products of two degree-3 polynomials are integrated exactly by 12
    // Gauss-Legendre nodes in cos(theta) and 24 uniform nodes in phi
    let degree = 4;
    let m = degree * degree;
    let mut gram = vec![0.0; m * m];
    let nphi = 24;
    for (z, wz) in gauss_legendre(12) {
        for k in 0..nphi {
            let phi = std::f64::consts::TAU * k as f64 / nphi as f64;
            let r = (1.0 - z * z).sqrt();
            let y = sh_encode([r * phi.cos(), r * phi.sin(), z], degree).unwrap();
            let w = wz * std::f64::consts::TAU / nphi as f64;
            for i in 0..m {
                for j in 0..m {
                    gram[i * m + j] += w * y[i] * y[j];
                }
            }
        }
    }
    for i in 0..m {
        for j in 0..m {
            let expected = if i == j { 1.0 } else { 0.0 };
            assert!((gram[i * m + j] - expected).abs() < 1e-12, "gram[{i}][{j}] = {}", gram[i * m + j]);
        }
    }
}
