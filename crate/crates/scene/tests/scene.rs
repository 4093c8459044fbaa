use prior3d_geometry::{bev_iou, project_cuboid_to_box2d, Camera, Cuboid, ObjectClass, Vec3};
use prior3d_scene::{
    build_rig, corrupt_priors, generate_scene, render_view, simulate_lidar, uniform_subsample_indices, LabeledBox,
    LidarConfig, PointSource, PriorNoiseConfig, Range, RenderedView, Scene, SceneConfig, SceneObject,
    BACKGROUND_CHANNEL, SEMANTIC_CHANNELS,
};
use proptest::prelude::*;

fn scene_with(objects: Vec<Cuboid>) -> Scene {
    Scene {
        seed: 0,
        cameras: build_rig(&SceneConfig::default()).unwrap(),
        objects: objects.into_iter().map(|cuboid| SceneObject { cuboid, albedo: [0.5, 0.5, 0.5] }).collect(),
        partial: false,
    }
}

#[test]
fn generation_is_deterministic_and_well_spread() {
    let cfg = SceneConfig::default();
    for seed in 0..200u64 {
        let a = generate_scene(&cfg, seed).unwrap();
        assert_eq!(a, generate_scene(&cfg, seed).unwrap());
        assert_eq!(a.cameras.len(), 6);
        for (i, oa) in a.objects.iter().enumerate() {
            let [x, y, z] = oa.cuboid.center_array();
            assert!(x.hypot(y) <= 50.0 && (x * x + y * y + z * z).sqrt() <= 50.0);
            for ob in &a.objects[i + 1..] {
                assert_eq!(bev_iou(&oa.cuboid, &ob.cuboid), 0.0);
            }
        }
    }
    assert_ne!(generate_scene(&cfg, 1).unwrap(), generate_scene(&cfg, 2).unwrap());
}

#[test]
fn crowded_request_is_flagged_partial() {
    let mut cfg = SceneConfig::default();
    cfg.vehicle.count = [60, 60];
    cfg.placement_radius = Range::new(5.0, 9.0);
    cfg.max_placement_attempts = 20;
    let s = generate_scene(&cfg, 3).unwrap();
    assert!(s.partial);
    assert!(s.objects.len() < 60 + cfg.human.count[0]);
}

#[test]
fn rig_covers_all_directions() {
    let rig = build_rig(&SceneConfig::default()).unwrap();
    for k in 0..360 {
        let a = (k as f64).to_radians();
        let p = Vec3::new(20.0 * a.cos(), 20.0 * a.sin(), 1.0);
        assert!(rig.iter().any(|c| c.project(&p).valid), "azimuth {k} unseen");
    }
}

#[test]
fn empty_scene_renders_background() {
    let s = scene_with(vec![]);
    let v = render_view(&s, &s.cameras[0]);
    assert!(v.boxes.is_empty());
    assert!(v.depth.iter().all(|&d| d == 1.0));
    for p in 0..v.width * v.height {
        for c in 0..SEMANTIC_CHANNELS {
            let expect = if c == BACKGROUND_CHANNEL { 1.0 } else { 0.0 };
            assert_eq!(v.semantic[p * SEMANTIC_CHANNELS + c], expect);
        }
    }
}

#[test]
fn cube_on_axis_has_analytic_depth() {
    for side in [1.0, 2.0, 3.0] {
        let s = scene_with(vec![Cuboid::new([25.0, 0.0, 1.6], [side, side, side], 0.0, ObjectClass::Vehicle).unwrap()]);
        let cam = &s.cameras[0];
        let v = render_view(&s, cam);
        let expected = 0.5 * (1.0 - side / 50.0);
        let d = v.depth_at(cam.cx() as usize, cam.cy() as usize) as f64;
        assert!((d - expected).abs() < 1e-6, "side {side}: {d} vs {expected}");
        assert_eq!(v.semantic_at(cam.cx() as usize, cam.cy() as usize, 0), 1.0);
    }
}

#[test]
fn noiseless_views_are_exact() {
    let cfg = SceneConfig::default();
    for seed in 0..4 {
        let s = generate_scene(&cfg, seed).unwrap();
        for cam in &s.cameras {
            let v = render_view(&s, cam);
            assert!(v.semantic.iter().all(|&x| x == 0.0 || x == 1.0));
            let mut owners = vec![false; s.objects.len()];
            for py in 0..v.height {
                for px in 0..v.width {
                    let d = v.depth_at(px, py) as f64;
                    let bg = v.semantic_at(px, py, BACKGROUND_CHANNEL) == 1.0;
                    if bg {
                        assert_eq!(d, 1.0);
                        continue;
                    }
                    let p = cam.unproject_depth(px as f64 + 0.5, py as f64 + 0.5, d * 50.0);
                    let (i, dist) = s
                        .objects
                        .iter()
                        .map(|o| o.cuboid.surface_distance(&p))
                        .enumerate()
                        .fold((0, f64::INFINITY), |acc, (i, x)| if x < acc.1 { (i, x) } else { acc });
                    assert!(dist < 1e-4, "pixel depth off the surface by {dist}");
                    owners[i] = true;
                    let b = v.boxes.iter().find(|b| b.source == Some(i)).expect("visible object has a box");
                    assert!(b.bbox.contains(px as f64 + 0.5, py as f64 + 0.5));
                }
            }
            for (i, o) in s.objects.iter().enumerate() {
                let expected = project_cuboid_to_box2d(cam, &o.cuboid);
                let got: Vec<&LabeledBox> = v.boxes.iter().filter(|b| b.source == Some(i)).collect();
                assert_eq!(got.len(), expected.is_some() as usize);
                if let Some(e) = expected {
                    assert_eq!(got[0].bbox, e);
                    assert_eq!(e.score(), 1.0);
                }
                if owners[i] {
                    assert_eq!(got.len(), 1);
                }
            }
        }
    }
}

#[test]
fn box_interior_is_nearer_than_background() {
    let s = scene_with(vec![Cuboid::new([12.0, 1.0, 0.9], [4.0, 2.0, 1.8], 0.4, ObjectClass::Vehicle).unwrap()]);
    let cam = &s.cameras[0];
    let v = render_view(&s, cam);
    let [u, vv] = v.boxes[0].bbox.center();
    assert!(v.depth_at(u as usize, vv as usize) < 1.0);
}

fn rendered(seed: u64) -> RenderedView {
    let s = generate_scene(&SceneConfig::default(), seed).unwrap();
    render_view(&s, &s.cameras[0])
}

#[test]
fn zero_noise_is_identity_and_full_dropout_removes_boxes() {
    let v = rendered(5);
    assert!(!v.boxes.is_empty());
    assert_eq!(corrupt_priors(&v, &PriorNoiseConfig::none(), 9).unwrap(), v);

    let mut drop_all = PriorNoiseConfig::none();
    drop_all.false_negative_prob = 1.0;
    assert!(corrupt_priors(&v, &drop_all, 9).unwrap().boxes.is_empty());

    let noisy = corrupt_priors(&v, &PriorNoiseConfig::default(), 9).unwrap();
    assert_eq!(noisy.image, v.image);
    assert_eq!(noisy, corrupt_priors(&v, &PriorNoiseConfig::default(), 9).unwrap());
    assert!(noisy.semantic.iter().chain(&noisy.depth).all(|x| (0.0..=1.0).contains(x)));
    assert!(noisy.boxes.iter().all(|b| (0.0..=1.0).contains(&b.bbox.score())));
}

#[test]
fn center_jitter_matches_half_normal_mean() {
    // 10^4 boxes far from the image border so clipping never interferes
    let base = prior3d_geometry::Box2D::new([500.0, 500.0], [40.0, 40.0], ObjectClass::Vehicle, 1.0).unwrap();
    let view = RenderedView {
        width: 1000,
        height: 1000,
        image: vec![0.0; 1000 * 1000 * 3],
        semantic: vec![0.0; 1000 * 1000 * SEMANTIC_CHANNELS],
        depth: vec![1.0; 1000 * 1000],
        boxes: (0..10_000).map(|i| LabeledBox { bbox: base, source: Some(i) }).collect(),
    };
    let mut noise = PriorNoiseConfig::none();
    noise.center_sigma_px = 2.0;
    let out = corrupt_priors(&view, &noise, 21).unwrap();
    assert_eq!(out.boxes.len(), 10_000);
    let n = out.boxes.len() as f64;
    let mean_u = out.boxes.iter().map(|b| (b.bbox.center()[0] - 500.0).abs()).sum::<f64>() / n;
    let mean_v = out.boxes.iter().map(|b| (b.bbox.center()[1] - 500.0).abs()).sum::<f64>() / n;
    // E|X| for X ~ N(0, σ²)
    let oracle = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
    assert!((mean_u / oracle - 1.0).abs() < 0.05, "{mean_u} vs {oracle}");
    assert!((mean_v / oracle - 1.0).abs() < 0.05, "{mean_v} vs {oracle}");
}

#[test]
fn lidar_hits_faces_and_ground() {
    let cfg = LidarConfig { subsample_rate: 1.0, ..LidarConfig::default() };
    let empty = simulate_lidar(&scene_with(vec![]), &cfg).unwrap();
    assert!(!empty.is_empty());
    assert!(empty.points.iter().all(|p| p[2] == 0.0));
    assert!(empty.sources.iter().all(|s| *s == PointSource::Ground));

    let cube = Cuboid::new([10.0, 3.0, 1.0], [4.0, 2.0, 2.0], 0.3, ObjectClass::Vehicle).unwrap();
    let scan = simulate_lidar(&scene_with(vec![cube]), &cfg).unwrap();
    let on_object: Vec<_> = scan.points.iter().zip(&scan.sources).filter(|(_, s)| **s == PointSource::Object(0)).collect();
    assert!(!on_object.is_empty());
    for (p, _) in &on_object {
        assert!(cube.surface_distance(&Vec3::new(p[0], p[1], p[2])) < 1e-6);
    }
    for p in &scan.points {
        let r = Vec3::new(p[0], p[1], p[2] - cfg.mount_height).norm();
        assert!(r <= cfg.max_range + 1e-9);
    }
    // ground points stay in the scan: no semantic filtering
    assert!(scan.sources.contains(&PointSource::Ground));

    let half = simulate_lidar(&scene_with(vec![cube]), &LidarConfig { subsample_rate: 0.5, ..cfg }).unwrap();
    assert!((half.len() as f64 - scan.len() as f64 / 2.0).abs() <= 1.0);
    assert!(simulate_lidar(&scene_with(vec![]), &LidarConfig { subsample_rate: 0.0, ..cfg }).is_err());
}

#[test]
fn camera_rig_json_round_trip() {
    let s = generate_scene(&SceneConfig::default(), 77).unwrap();
    let back: Scene = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
    assert_eq!(back, s);
    let _: &Camera = &back.cameras[0];
}

proptest! {
    #[test]
    fn subsample_count_and_order(n in 0usize..5000, rate in 0.001f64..=1.0) {
        let idx = uniform_subsample_indices(n, rate);
        prop_assert_eq!(idx.len(), ((n as f64 * rate).round() as usize).min(n));
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(idx.iter().all(|&i| i < n));
    }
}
