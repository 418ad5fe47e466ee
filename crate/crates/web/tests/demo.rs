use fewshot_nerf_web::{mask_levels, ray, scene_rgba};

#[test]
fn scene_is_opaque_rgba() {
    let px = scene_rgba(30.0, 20.0, 16, 1024).unwrap();
    assert_eq!(px.len(), 16 * 16 * 4);
    assert!(px.chunks(4).all(|p| p[3] == 255));
    // black background with colored spheres in the middle
    assert_eq!(px[..3], [0, 0, 0]);
    assert!(px.chunks(4).any(|p| p[..3] != [0, 0, 0]));
    assert_eq!(px, scene_rgba(30.0, 20.0, 16, 1024).unwrap());
}

#[test]
fn ray_layout_and_weights() {
    let sigma = [0.0, 2.0, 5.0, 0.5];
    let colors = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.5, 0.5, 0.5];
    let out = ray(&sigma, &colors, 0.25).unwrap();
    assert_eq!(out.len(), 5 + 2 * sigma.len());
    let (w, t) = (&out[5..9], &out[9..13]);
    assert_eq!(t[0], 1.0);
    assert_eq!(w[0], 0.0);
    let acc: f64 = w.iter().sum();
    assert!((out[3] - acc).abs() < 1e-12);
    let green: f64 = w[1];
    assert!((out[1] - (green + 0.5 * w[3])).abs() < 1e-12);
    assert!(ray(&sigma, &colors[..6], 0.25).is_err());
}

#[test]
fn mask_curve_saturates() {
    let out = mask_levels(100, 0.5, 8).unwrap();
    let (ratio, kept) = out.split_at(100);
    assert_eq!(ratio[0], 1.0 / 8.0);
    assert_eq!(kept[0], 1.0);
    assert!(ratio.windows(2).all(|p| p[1] >= p[0]));
    assert!(ratio[50..].iter().all(|&x| x == 1.0));
    assert!(kept[50..].iter().all(|&k| k == 8.0));
    assert!(mask_levels(100, 1.5, 8).is_err());
}
