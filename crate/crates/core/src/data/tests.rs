use super::*;
use crate::rng::stream;
use proptest::prelude::*;

fn desk() -> SystemConfig {
    SystemConfig::desk_scale()
}

fn sphere(radius: f64, center: Vec3) -> TargetSpec {
    TargetSpec {
        class: TargetClass::Sphere,
        parts: vec![(Primitive::Sphere { radius }, [0.0; 3])],
        eps_r: 3.0,
        sigma_s_per_m: 0.001,
        rotation: Matrix3::identity(),
        center_m: center,
    }
}

#[test]
fn centers_stay_in_sector() {
    let cfg = desk();
    let mut rng = stream(1);
    for _ in 0..10_000 {
        let c = sample_center(&cfg, &mut rng);
        assert!(cfg.sensing_sector.contains(c), "{c:?}");
        assert!(c[0].hypot(c[1]) >= cfg.sensing_sector.min_radius_m - 1e-9);
    }
}

#[test]
fn properties_within_ranges_and_shared_by_points() {
    let cfg = desk();
    let mut rng = stream(2);
    for _ in 0..200 {
        let t = generate_target(&cfg, &[], None, &mut rng);
        assert!((cfg.eps_r_range.0..=cfg.eps_r_range.1).contains(&t.eps_r));
        assert!((cfg.sigma_range.0..=cfg.sigma_range.1).contains(&t.sigma_s_per_m));
        assert!(t.bounding_radius() <= 0.5 * cfg.domain_extent_m);
        let pts = sample_surface_points(&t, 64, &mut rng).unwrap();
        assert!(pts.iter().all(|p| p.eps_r == t.eps_r && p.sigma_s_per_m == t.sigma_s_per_m));
    }
}

#[test]
fn sphere_surface_radius() {
    let t = sphere(0.4, [5.0, 1.0, 0.0]);
    let pts = sample_surface_points(&t, 4096, &mut stream(3)).unwrap();
    let mean = pts
        .iter()
        .map(|p| (Vector3::from(p.position_m) - Vector3::from(t.center_m)).norm())
        .sum::<f64>()
        / pts.len() as f64;
    assert!((mean - 0.4).abs() < 0.02 * 0.4);
}

#[test]
fn box_and_ellipsoid_points_lie_on_surfaces() {
    let mut rng = stream(4);
    let b = TargetSpec { parts: vec![(Primitive::Box { half: [0.1, 0.2, 0.3] }, [0.0; 3])], ..sphere(0.1, [0.0; 3]) };
    for p in sample_surface_points(&b, 500, &mut rng).unwrap() {
        let on_face = (0..3).any(|a| (p.position_m[a].abs() - [0.1, 0.2, 0.3][a]).abs() < 1e-12);
        assert!(on_face && b.contains_offset(&p.position_m));
    }
    let e = TargetSpec { parts: vec![(Primitive::Ellipsoid { semi: [0.1, 0.2, 0.3] }, [0.0; 3])], ..b };
    for p in sample_surface_points(&e, 500, &mut rng).unwrap() {
        let q: f64 = (0..3).map(|a| (p.position_m[a] / [0.1, 0.2, 0.3][a]).powi(2)).sum();
        assert!((q - 1.0).abs() < 1e-9);
    }
}

#[test]
fn union_points_are_not_buried() {
    let t = TargetSpec {
        class: TargetClass::Union,
        parts: vec![(Primitive::Sphere { radius: 0.2 }, [0.0; 3]), (Primitive::Sphere { radius: 0.2 }, [0.15, 0.0, 0.0])],
        ..sphere(0.1, [0.0; 3])
    };
    for p in sample_surface_points(&t, 1000, &mut stream(5)).unwrap() {
        let x = Vector3::from(p.position_m);
        let d0 = x.norm();
        let d1 = (x - Vector3::new(0.15, 0.0, 0.0)).norm();
        assert!(d0 >= 0.2 - 1e-9 && d1 >= 0.2 - 1e-9);
    }
}

#[test]
fn too_few_points_or_empty_target_rejected() {
    let mut rng = stream(6);
    assert!(sample_surface_points(&sphere(0.3, [0.0; 3]), 1, &mut rng).is_err());
    assert!(sample_surface_points(&TargetSpec::empty([0.0; 3]), 10, &mut rng).is_err());
}

#[test]
fn rasterize_empty_and_full() {
    let cfg = desk();
    let g = rasterize(&TargetSpec::empty([4.0, 0.0, 0.0]), &cfg).unwrap();
    assert!(g.chi.iter().all(|c| c.norm() == 0.0));
    let full = TargetSpec { parts: vec![(Primitive::Box { half: [0.5; 3] }, [0.0; 3])], ..sphere(0.1, [4.0, 0.0, 0.0]) };
    let g = rasterize(&full, &cfg).unwrap();
    let chi = contrast_of(3.0, 0.001, cfg.omega()).unwrap();
    assert!(g.chi.iter().all(|c| *c == chi));
}

#[test]
fn rasterized_sphere_volume() {
    let mut cfg = desk();
    cfg.voxels_per_axis = 16;
    let r = 0.4;
    let g = rasterize(&sphere(r, [4.0, 0.0, 0.0]), &cfg).unwrap();
    let n = g.chi.iter().filter(|c| c.norm() > 0.0).count() as f64;
    let expected = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3) / g.voxel_volume();
    assert!((n / expected - 1.0).abs() < 0.1, "{n} vs {expected}");
}

#[test]
fn rasterized_pattern_is_translation_invariant() {
    let cfg = desk();
    let mut rng = stream(7);
    for _ in 0..20 {
        let t = generate_target(&cfg, &[], None, &mut rng);
        let a = rasterize(&t, &cfg).unwrap();
        let b = rasterize(&t.moved_to(cfg.reference_location), &cfg).unwrap();
        assert_eq!(a.chi, b.chi);
        assert_ne!(a.origin_m, b.origin_m);
    }
}

const PATHLOSS_100M_LAMBDA_01: f64 = 2.521_043_108_561_398_7e-8;

#[test]
fn pathloss_value() {
    // Default 3 dBi gains on both ends.
    let mut cfg = SystemConfig::default();
    cfg.wavelength_m = 0.1;
    assert!((pathloss(&cfg, 100.0) / PATHLOSS_100M_LAMBDA_01 - 1.0).abs() < 1e-12);
}

#[test]
fn comm_channel_variance_matches_pathloss() {
    let mut cfg = desk();
    cfg.ue_distance_range_m = (80.0, 80.0);
    let mut rng = stream(8);
    let (chans, d) = draw_comm_channels(20_000, &cfg, &mut rng).unwrap();
    assert!(d.iter().all(|&x| x == 80.0));
    let n = (chans.len() * cfg.n_tx) as f64;
    let var = chans.iter().flat_map(|h| h.iter()).map(|z| z.norm_sqr()).sum::<f64>() / n;
    assert!((var / pathloss(&cfg, 80.0) - 1.0).abs() < 0.03);
    assert!(draw_comm_channels(0, &cfg, &mut rng).is_err());
}

#[test]
fn split_sizes_for_64() {
    let ids: Vec<usize> = (0..64).collect();
    let s = split_ids(&ids);
    assert_eq!((s.train.len(), s.test.len(), s.validation.len()), (51, 6, 7));
    let mut all: Vec<usize> = s.train.iter().chain(&s.test).chain(&s.validation).copied().collect();
    all.sort_unstable();
    assert_eq!(all, ids);
}

proptest! {
    #[test]
    fn split_partitions_any_id_set(ids in proptest::collection::btree_set(0usize..10_000, 0..200)) {
        let ids: Vec<usize> = ids.into_iter().collect();
        let s = split_ids(&ids);
        let n = ids.len();
        prop_assert_eq!(s.train.len(), n * 8 / 10);
        prop_assert_eq!(s.test.len(), n / 10);
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).chain(&s.validation).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, ids);
    }

    #[test]
    fn solids_fit_the_cube(seed in any::<u64>()) {
        let cfg = desk();
        let t = generate_target(&cfg, &[], None, &mut stream(seed));
        prop_assert!(t.bounding_radius() <= 0.48 * cfg.domain_extent_m + 1e-12);
        prop_assert!((t.rotation.transpose() * t.rotation - Matrix3::identity()).abs().max() < 1e-12);
    }
}

#[test]
fn dataset_round_trip_on_disk() {
    let cfg = desk();
    let opts = DatasetOptions { n_records: 3, points_per_cloud: 16, seed: 11, ..Default::default() };
    let ds = build_dataset(&cfg, &opts).unwrap();
    assert_eq!(ds.records.len() + ds.quarantined.len(), 3);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &ds).unwrap();
    let back = read_dataset(dir.path(), &cfg).unwrap();
    assert_eq!(back.split, ds.split);
    assert_eq!(back.records, ds.records);

    let mut other = cfg.clone();
    other.solver_tol = 1e-7;
    assert!(matches!(read_dataset(dir.path(), &other), Err(Error::Config(_))));
}

#[test]
fn records_are_deterministic_and_reference_is_translated() {
    let cfg = desk();
    let model = ForwardModel::new(&cfg);
    let opts = DatasetOptions { points_per_cloud: 16, seed: 12, ..Default::default() };
    let a = build_record(&model, &opts, 5).unwrap();
    let b = build_record(&model, &opts, 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(build_record(&model, &opts, 6).unwrap().target, a.target);
    // The reference channel is the same target placed at the reference location.
    let g = rasterize(&a.target.moved_to(cfg.reference_location), &cfg).unwrap();
    assert_eq!(model.synthesize(&g, ScatterMode::Full).unwrap().0, a.h_s_ref);
}
