use mrvm_core::geometry::{self, look_at, project_point, ray_for_pixel, Camera};
use mrvm_core::image::Image;
use mrvm_core::masking::{masked_point_count, sample_mask_plan};
use mrvm_core::metrics::{psnr, ssim};
use mrvm_core::mrvm::{pair_loss_cosine, pair_loss_normalized};
use mrvm_core::render::composite;
use mrvm_core::rng::substream;
use mrvm_core::sampler::{importance, merge, stratified};
use mrvm_core::scene::{oracle_render_detailed, sample_scene, GenConfig};
use proptest::prelude::*;
use rand::Rng;

fn camera(yaw: f64, pitch: f64) -> Camera {
    let eye = [4.0 * pitch.cos() * yaw.cos(), 4.0 * pitch.cos() * yaw.sin(), 4.0 * pitch.sin()];
    Camera::with_fov(0.7, 24, 20, look_at(eye, [0.0; 3], [0.0, 0.0, 1.0]).unwrap()).unwrap()
}

proptest! {
    #[test]
    fn weights_and_residual_partition_unity(
        sig in prop::collection::vec(0.0f64..50.0, 1..40),
        seed in 0u64..1000,
    ) {
        let mut rng = substream(seed, &[]);
        let deltas: Vec<f64> = sig.iter().map(|_| rng.random::<f64>() * 0.2).collect();
        let colors: Vec<[f64; 3]> = sig.iter().map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let c = composite(&sig, &colors, &deltas, [0.3, 0.2, 0.1]).unwrap();
        let total: f64 = c.weights.iter().sum::<f64>() + c.residual;
        prop_assert!((total - 1.0).abs() <= 1e-9);
        prop_assert!(c.weights.iter().all(|&w| w >= 0.0));
        prop_assert!(c.rgb.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn pixel_rays_project_back_to_their_pixel(
        yaw in 0.0f64..core::f64::consts::TAU, pitch in -1.2f64..1.2,
        x in 0usize..24, y in 0usize..20, t in 0.5f64..10.0,
    ) {
        let cam = camera(yaw, pitch);
        let r = ray_for_pixel(&cam, x as f64, y as f64).unwrap();
        let p = project_point(&cam, r.at(t)).unwrap();
        prop_assert!((p.px - (x as f64 + 0.5)).abs() < 1e-9);
        prop_assert!((p.py - (y as f64 + 0.5)).abs() < 1e-9);
    }

    #[test]
    fn merged_samples_stay_sorted_and_keep_coarse(
        near in 0.1f64..2.0, len in 0.5f64..4.0, n in 1usize..33, extra in 0usize..33, seed in 0u64..500,
    ) {
        let mut rng = substream(seed, &[]);
        let c = stratified(near, near + len, n, &mut rng, true).unwrap();
        let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let e = importance(&c, &w, extra, &mut rng).unwrap();
        prop_assert!(e.iter().all(|&t| t >= near && t <= near + len));
        let m = merge(&c, &e).unwrap();
        prop_assert_eq!(m.len(), n + extra);
        prop_assert!(m.t.windows(2).all(|p| p[0] < p[1]));
        let kept: Vec<f64> = m.coarse_indices().iter().map(|&i| m.t[i]).collect();
        prop_assert_eq!(kept, c.t);
        prop_assert!(m.deltas().iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn mask_plans_are_well_formed(points in 1usize..120, views in 1usize..6, eta in 0.0f64..=1.0, seed in 0u64..500) {
        let plan = sample_mask_plan(points, views, eta, &mut substream(seed, &[])).unwrap();
        prop_assert_eq!(plan.point_count(), masked_point_count(points, eta));
        for (&p, vs) in &plan.masked_views {
            prop_assert!(p < points);
            prop_assert!(!vs.is_empty() && vs.len() <= views);
            prop_assert!(vs.windows(2).all(|w| w[0] < w[1]) && vs.iter().all(|&v| v < views));
        }
        let rows = plan.token_rows(views, 10);
        prop_assert_eq!(rows.len(), plan.entry_count());
    }

    #[test]
    fn alignment_loss_forms_agree(a in prop::collection::vec(-5.0f64..5.0, 8), b in prop::collection::vec(-5.0f64..5.0, 8)) {
        let n = pair_loss_normalized(&a, &b);
        prop_assert!((n - pair_loss_cosine(&a, &b)).abs() <= 1e-12);
        prop_assert!((-1e-12..=4.0 + 1e-12).contains(&n));
    }

    #[test]
    fn oracle_stays_in_range(seed in 0u64..200, x in 0usize..24, y in 0usize..20) {
        let scene = sample_scene(&mut substream(seed, &[1]), &GenConfig::default()).unwrap();
        let cam = camera(seed as f64 * 0.37, 0.3);
        let (near, far) = geometry::depth_range(&cam, &scene.bbox);
        let r = ray_for_pixel(&cam, x as f64, y as f64).unwrap().with_range(near, far).unwrap();
        let o = oracle_render_detailed(&scene, &r);
        prop_assert!(o.residual > 0.0 && o.residual <= 1.0);
        prop_assert!(o.rgb.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
        if scene.bbox.intersect(r.origin, r.direction).is_none() {
            prop_assert_eq!(o.residual, 1.0);
            prop_assert_eq!(o.rgb, scene.background);
        }
    }
}

#[test]
fn metrics_are_symmetric_and_ordered() {
    let mut rng = substream(11, &[]);
    let base = Image::from_vec(16, 16, (0..16 * 16 * 3).map(|_| rng.random::<f64>()).collect());
    let near = Image::from_vec(16, 16, base.data().iter().map(|v| (v + 0.01).min(1.0)).collect());
    let far = Image::from_vec(16, 16, base.data().iter().map(|v| 1.0 - v).collect());
    assert!(psnr(&base, &near).unwrap() > psnr(&base, &far).unwrap());
    assert!(ssim(&base, &near).unwrap() > ssim(&base, &far).unwrap());
    assert_eq!(ssim(&base, &far).unwrap(), ssim(&far, &base).unwrap());
}
