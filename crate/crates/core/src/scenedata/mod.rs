//! Analytic toy scenes and their reference renderer, datasets and splits,
//! image and depth files, and image-quality metrics.

mod dataset;
mod io;
mod metrics;
mod scene;

pub use dataset::{load_transforms_dataset, make_fewshot_split, orbit_cameras, render_dataset, sphere3_dataset, write_transforms_dataset, Dataset};
pub use io::{quantize, read_depth, read_image, write_atomic, write_depth, write_image};
pub use metrics::{average_metric, gaussian_taps, mse, psnr, ssim, PSNR_CAP, SSIM_SIGMA, SSIM_WINDOW};
pub use scene::{
    oracle_ray, oracle_render, AnalyticScene, Image, OracleRay, Primitive, Shape, MIN_ORACLE_SAMPLES, OPAQUE_DENSITY,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rendering::Camera;

    fn small_camera() -> Camera {
        Camera::look_at([0.5, 0.5, 2.1], [0.5, 0.5, 0.5], [0.0, 1.0, 0.0], 16.0, 8, 8, 0.6, 2.6).unwrap()
    }

    #[test]
    fn empty_scene_is_background() {
        let scene = AnalyticScene {
            primitives: vec![],
            background: [0.1, 0.2, 0.3],
        };
        let cam = small_camera();
        let (img, depth) = oracle_render(&scene, &cam, 1024).unwrap();
        assert!(img.data.chunks(3).all(|p| p == [0.1, 0.2, 0.3]));
        assert!(depth.iter().all(|&d| d == cam.far));
    }

    #[test]
    fn opaque_sphere_center_ray() {
        let scene = AnalyticScene::sphere3();
        let p = &scene.primitives[0];
        let Shape::Sphere { center, radius } = p.shape else { unreachable!() };
        let o = [center[0], center[1], 2.0];
        let d = [0.0, 0.0, -1.0];
        let bins = 1024;
        let (near, far) = (0.5, 2.5);
        let r = oracle_ray(&scene, o, d, near, far, bins);
        for k in 0..3 {
            assert!((r.rgb[k] - p.albedo[k]).abs() < 1e-4);
        }
        // expected termination inside a thick constant-density medium lies
        // 1/sigma behind the entry point
        let surface = 2.0 - (center[2] + radius);
        let expected = surface + 1.0 / p.density;
        assert!((r.depth - expected).abs() < (far - near) / bins as f64);
    }

    #[test]
    fn missing_ray_is_background() {
        let scene = AnalyticScene::sphere3();
        let r = oracle_ray(&scene, [5.0, 5.0, 5.0], [0.0, 0.0, 1.0], 0.1, 3.0, 1024);
        assert_eq!(r.rgb, [0.0; 3]);
        assert_eq!(r.acc, 0.0);
    }

    #[test]
    fn box_chord() {
        let b = Shape::Box {
            center: [0.5; 3],
            half_size: [0.25; 3],
        };
        assert_eq!(b.chord([0.5, 0.5, 2.0], [0.0, 0.0, -1.0]), Some((1.25, 1.75)));
        assert_eq!(b.chord([0.9, 0.5, 2.0], [0.0, 0.0, -1.0]), None);
    }

    #[test]
    fn low_sample_count_rejected() {
        assert!(oracle_render(&AnalyticScene::sphere3(), &small_camera(), 64).is_err());
    }

    #[test]
    fn sphere3_scene_is_valid() {
        AnalyticScene::sphere3().validate().unwrap();
        let bad = AnalyticScene {
            primitives: vec![Primitive {
                shape: Shape::Sphere {
                    center: [0.9, 0.5, 0.5],
                    radius: 0.2,
                },
                density: 1.0,
                albedo: [0.5; 3],
            }],
            background: [0.0; 3],
        };
        assert!(bad.validate().is_err());
    }

    fn dummy_dataset(views: usize) -> Dataset {
        let cam = small_camera();
        Dataset::new(vec![cam; views], vec![Image::filled(8, 8, [0.0; 3]); views], [0.0; 3]).unwrap()
    }

    #[test]
    fn split_of_24_views() {
        let ds = dummy_dataset(24);
        let split = make_fewshot_split(&ds, 3).unwrap();
        assert_eq!(split.test, vec![0, 8, 16]);
        assert_eq!(split.train, vec![1, 9, 17]);
        assert_eq!(make_fewshot_split(&ds, 3).unwrap(), split);
        let full = make_fewshot_split(&ds, 21).unwrap();
        let rest: Vec<usize> = (0..24).filter(|i| i % 8 != 0).collect();
        assert_eq!(full.train, rest);
        assert!(make_fewshot_split(&ds, 22).is_err());
        assert!(make_fewshot_split(&ds, 0).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(12, 12, [0.5; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = Image::filled(12, 12, [0.6; 3]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!(psnr(&a, &Image::filled(11, 12, [0.5; 3])).is_err());
    }

    #[test]
    fn constant_images_ssim() {
        // constant images have zero variance, leaving only the luminance term
        let a = Image::filled(16, 16, [0.5; 3]);
        let b = Image::filled(16, 16, [0.6; 3]);
        let c1 = 1e-4;
        let expected = (2.0 * 0.5 * 0.6 + c1) / (0.25 + 0.36 + c1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn average_metric_examples() {
        assert!((average_metric(20.0, 0.75) - (0.01f64 * 0.5).sqrt()).abs() < 1e-15);
        assert!(average_metric(99.0, 1.0) < 1e-9);
        assert!(average_metric(21.0, 0.75) < average_metric(20.0, 0.75));
        assert!(average_metric(20.0, 0.8) < average_metric(20.0, 0.75));
    }

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(0.49 / 255.0), 0);
    }

    #[test]
    fn transforms_round_trip() {
        let scene = AnalyticScene::sphere3();
        let data = render_dataset(&scene, orbit_cameras(3, 12).unwrap(), MIN_ORACLE_SAMPLES).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_transforms_dataset(dir.path(), &data).unwrap();
        let back = load_transforms_dataset(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.background, scene.background);
        for (a, b) in data.cameras.iter().zip(&back.cameras) {
            assert!((a.fx - b.fx).abs() < 1e-9);
            assert_eq!((a.near, a.far, a.pose), (b.near, b.far, b.pose));
        }
        for (a, b) in data.images.iter().zip(&back.images) {
            let worst = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(worst <= 0.5 / 255.0 + 1e-12);
        }
    }
}
