mod common;

use std::sync::Arc;

use infharm::analysis::{contour_extract, level_range, numerical_rank, rank_classify, RankClass};
use infharm::fespace::{interpolate, Gradient, VectorField};
use infharm::io::checkpoint::Checkpoint;
use infharm::mesh::TriMesh;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

fn entry() -> impl Strategy<Value = f64> {
    -5.0f64..5.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn projection_is_symmetric_idempotent_annihilating(seed in any::<u64>(), n in 2usize..=3, kind in 0u32..3) {
        let mut rng = StdRng::seed_from_u64(seed);
        let g = common::random_gradient(&mut rng, n, kind);
        prop_assert!(common::projection_defect(&g) <= 1e-10);
    }

    #[test]
    fn det_magnitude_is_product_of_singular_values(a in entry(), b in entry(), c in entry(), d in entry()) {
        let g = Gradient::from_rows(&[[a, b], [c, d]]);
        let [s1, s2] = g.singular_values();
        prop_assert!(s1 >= s2 && s2 >= 0.0);
        prop_assert!((g.det().unwrap().abs() - s1 * s2).abs() <= 1e-12 * (1.0 + s1 * s1));
        prop_assert!((s1 * s1 + s2 * s2 - g.frobenius_sq()).abs() <= 1e-12 * (1.0 + s1 * s1));
    }

    #[test]
    fn rank_class_counts_large_singular_values(s1 in 0.0f64..10.0, frac in 0.0f64..1.0, tau in 0.001f64..0.5) {
        let s2 = s1 * frac;
        let thr = tau * s1.max(1.0);
        let expected = usize::from(s1 > thr) + usize::from(s2 > thr);
        let got = match numerical_rank([s1, s2], tau) {
            RankClass::Rank0 => 0,
            RankClass::Rank1 => 1,
            RankClass::Rank2 => 2,
        };
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn contour_vertices_sit_on_their_level(seed in any::<u64>(), m in 2usize..10) {
        let mesh = TriMesh::structured(m).unwrap();
        let mut rng = StdRng::seed_from_u64(seed);
        let values: Vec<f64> = (0..mesh.num_vertices()).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let (worst, _) = common::contour_level_defect(&mesh, &values, &level_range(-1.0, 1.0, 0.05));
        prop_assert!(worst <= 1e-10, "worst level defect {}", worst);
    }

    #[test]
    fn contours_of_quantized_values_stay_finite(m in 2usize..8, q in 1i32..6) {
        // nodal values landing exactly on levels are shifted off them
        let mesh = TriMesh::structured(m).unwrap();
        let values: Vec<f64> = mesh.vertices().iter().map(|p| ((p[0] + p[1]) * q as f64).round() / q as f64 / 2.0).collect();
        let levels = level_range(-1.0, 1.0, 0.05);
        for line in contour_extract(&mesh, &values, &levels) {
            prop_assert!(line.points.len() >= 2);
            prop_assert!(line.points.iter().all(|p| p[0].is_finite() && p[1].is_finite()));
        }
        let (worst, _) = common::contour_level_defect(&mesh, &values, &levels);
        prop_assert!(worst <= 1e-10);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact(
        bits in prop::collection::vec(any::<u64>(), 0..64),
        p in 2.0f64..2048.0,
        res in any::<f64>().prop_filter("finite", |x| x.is_finite()),
        iters in 0usize..100,
        inserted in any::<bool>(),
    ) {
        let ckpt = Checkpoint {
            experiment: "mixed3d".into(),
            n_components: 1,
            mesh_m: 3,
            p,
            newton_iterations: iters,
            final_residual: res,
            log_energy: -res,
            energy_root: p.sqrt(),
            lift_energy_root: 1.0 / p,
            inserted,
            values: bits.into_iter().map(f64::from_bits).collect(),
        };
        prop_assert!(common::checkpoint_roundtrip(&ckpt));
    }

    #[test]
    fn structured_mesh_invariants(m in 1usize..24) {
        let mesh = TriMesh::structured(m).unwrap();
        prop_assert_eq!(mesh.num_vertices(), (m + 1) * (m + 1));
        prop_assert_eq!(mesh.num_elements(), 2 * m * m);
        prop_assert!((mesh.total_area() - 4.0).abs() < 1e-12);
        prop_assert!((mesh.h_max() - 2.0 * 2f64.sqrt() / m as f64).abs() < 1e-12);
        prop_assert_eq!(mesh.boundary_vertices().len(), 4 * m);
        prop_assert!(mesh.check_admissible().is_ok());
        let mut boundary_edges = 0;
        for (_, count) in mesh.edge_multiplicity() {
            prop_assert!(count == 1 || count == 2);
            boundary_edges += usize::from(count == 1);
        }
        prop_assert_eq!(boundary_edges, 4 * m);
        for k in 0..mesh.num_elements() {
            prop_assert!(mesh.geometry(k).area > 0.0);
        }
    }

    #[test]
    fn omega_areas_cover_the_square(seed in any::<u64>(), tau in 0.01f64..0.3) {
        let mut rng = StdRng::seed_from_u64(seed);
        let f = common::random_field(&mut rng, 6, 2);
        let phases = rank_classify(&f, tau);
        prop_assert!((phases.omega1_area + phases.omega2_area - 4.0).abs() <= 1e-9);
    }
}

#[test]
fn projection_suite_with_rank_deficient_cases() {
    let mut rng = StdRng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for i in 0..1000u32 {
        let g = common::random_gradient(&mut rng, 2 + (i as usize % 2), i);
        worst = worst.max(common::projection_defect(&g));
    }
    assert!(worst <= 1e-10, "worst projection defect {worst:e}");
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut rng = StdRng::seed_from_u64(11);
    for n in [2, 3] {
        let f = common::random_field(&mut rng, 5, n);
        for p in [2.0, 7.0, 64.0] {
            let rel = common::jacobian_fd_mismatch(&f, p, &mut rng);
            assert!(rel <= 1e-5, "n = {n}, p = {p}: relative mismatch {rel:e}");
        }
    }
}

#[test]
fn zero_field_is_rank_zero_everywhere() {
    let mesh = Arc::new(TriMesh::structured(4).unwrap());
    let phases = rank_classify(&VectorField::zeros(mesh, 2), 0.05);
    assert!(phases.rank.iter().all(|r| *r == RankClass::Rank0));
    assert_eq!(phases.omega1_area, 4.0);
}

#[test]
fn linear_field_contours_are_straight() {
    let mesh = Arc::new(TriMesh::structured(8).unwrap());
    let f = interpolate(&mesh, 1, |p| vec![0.5 * p[0] + 0.25 * p[1]]).unwrap();
    let values: Vec<f64> = f.values().to_vec();
    for line in contour_extract(&mesh, &values, &[0.1]) {
        assert!(!line.closed);
        for p in &line.points {
            assert!((0.5 * p[0] + 0.25 * p[1] - 0.1).abs() < 1e-12);
        }
    }
}
