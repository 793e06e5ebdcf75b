use nalgebra::{Quaternion, UnitQuaternion};
use partial_varifold::deformation::{flow_points, reverse_flow_points, shoot, velocity_at, ShootingConfig};
use partial_varifold::geometry::{apply_rigid, bbox_diagonal, DiscreteShape, Polylines, TriMesh, Vec3};
use partial_varifold::kernels::{DeformationKernel, VarifoldKernel};
use partial_varifold::optimizer::{minimize, OptimizerConfig};
use partial_varifold::synthetic::{generate, make_tree, SynthSpec, TreeSpec};
use proptest::prelude::*;

fn arb_point(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

/// A polyline with well separated consecutive vertices.
fn arb_curve(max: usize) -> impl Strategy<Value = Polylines> {
    prop::collection::vec(arb_point(1.0), 2..max).prop_map(|steps| {
        let mut p = Vec3::zeros();
        let mut vertices = vec![p];
        for s in steps {
            p += s + Vec3::new(0.3, 0.0, 0.0);
            vertices.push(p);
        }
        let edges = (0..vertices.len() - 1).map(|i| [i, i + 1]).collect();
        Polylines::new(vertices, edges).unwrap()
    })
}

fn arb_rotation() -> impl Strategy<Value = nalgebra::Matrix3<f64>> {
    (0.1..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_map(|(w, x, y, z)| UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)).to_rotation_matrix().into_inner())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn curve_atoms_are_unit_and_carry_the_length(c in arb_curve(20)) {
        let length = c.total_length();
        let edges = c.edges().len();
        let shape = DiscreteShape::from_curves(c).unwrap();
        prop_assert_eq!(shape.atoms().len(), edges);
        for a in shape.atoms() {
            prop_assert!((a.direction.norm() - 1.0).abs() < 1e-9 && a.weight > 0.0);
        }
        prop_assert!((shape.total_mass() - length).abs() <= 1e-9 * length);
    }

    #[test]
    fn mesh_atoms_carry_the_area(pts in prop::collection::vec(arb_point(1.0), 4)) {
        let faces = vec![[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]];
        if let Ok(mesh) = TriMesh::new(pts, faces) {
            let area = mesh.total_area();
            let shape = DiscreteShape::from_mesh(mesh).unwrap();
            prop_assert_eq!(shape.atoms().len(), 4);
            for a in shape.atoms() {
                prop_assert!((a.direction.norm() - 1.0).abs() < 1e-9 && a.weight > 0.0);
            }
            prop_assert!((shape.total_mass() - area).abs() <= 1e-9 * area);
        }
    }

    #[test]
    fn rigid_motion_preserves_distances_and_directions(c in arb_curve(12), r in arb_rotation(), t in arb_point(10.0)) {
        let shape = DiscreteShape::from_curves(c).unwrap();
        let moved = apply_rigid(&shape, &r, &t).unwrap();
        let (a, b) = (shape.atoms(), moved.atoms());
        for i in 0..a.len() {
            for j in 0..a.len() {
                let d0 = (a[i].position - a[j].position).norm();
                let d1 = (b[i].position - b[j].position).norm();
                prop_assert!((d0 - d1).abs() < 1e-9);
                prop_assert!((a[i].direction.dot(&a[j].direction) - b[i].direction.dot(&b[j].direction)).abs() < 1e-9);
            }
        }
        prop_assert!((shape.total_mass() - moved.total_mass()).abs() < 1e-9 * shape.total_mass());
    }

    #[test]
    fn kernels_are_symmetric_and_bounded(x in arb_point(3.0), y in arb_point(3.0), sigma in 0.05..5.0f64) {
        let k = VarifoldKernel::new(sigma).unwrap();
        let v = k.spatial(&x, &y);
        prop_assert!((0.0..=1.0).contains(&v) && v == k.spatial(&y, &x));
        if (x - y).norm_squared() / (sigma * sigma) < 700.0 {
            prop_assert!(v > 0.0);
        }
        let kv = DeformationKernel::with_default_scales(sigma).unwrap();
        let w = kv.eval(&x, &y);
        prop_assert!((0.0..=4.0).contains(&w) && w == kv.eval(&y, &x));
        prop_assert_eq!(kv.eval(&x, &x), 4.0);
    }

    #[test]
    fn shooting_trajectory_is_consistent(q in prop::collection::vec(arb_point(1.0), 1..8), scale in 0.0..0.2f64, steps in 1usize..12) {
        let p: Vec<Vec3> = q.iter().map(|v| Vec3::new(v.y, -v.x, v.z) * scale).collect();
        let cfg = ShootingConfig::new(steps, DeformationKernel::with_default_scales(2.0).unwrap()).unwrap();
        let traj = shoot(&q, &p, &cfg).unwrap();
        prop_assert_eq!(traj.q.len(), steps + 1);
        prop_assert_eq!(traj.p.len(), steps + 1);
        prop_assert!(traj.q.iter().chain(&traj.p).all(|s| s.len() == q.len()));
        prop_assert_eq!(&traj.q[0], &q);
        let v = velocity_at(&q, &q, &p, &cfg.kernel).unwrap();
        for (i, vi) in v.iter().enumerate() {
            let direct: Vec3 = q.iter().zip(&p).map(|(qj, pj)| pj * cfg.kernel.eval(&q[i], qj)).sum();
            prop_assert!((vi - direct).norm() < 1e-12);
        }
    }

    #[test]
    fn reverse_flow_inverts_forward_flow(q in prop::collection::vec(arb_point(1.0), 2..8), extra in prop::collection::vec(arb_point(1.5), 1..6), scale in 0.0..0.1f64) {
        let p: Vec<Vec3> = q.iter().map(|v| Vec3::new(-v.z, v.x, v.y) * scale).collect();
        let cfg = ShootingConfig::new(10, DeformationKernel::with_default_scales(2.0).unwrap()).unwrap();
        let traj = shoot(&q, &p, &cfg).unwrap();
        let forward = flow_points(&extra, &traj, &cfg).unwrap();
        let back = reverse_flow_points(&forward, &traj, &cfg).unwrap();
        let diag = bbox_diagonal(&extra).max(1.0);
        for (a, b) in back.iter().zip(&extra) {
            prop_assert!((a - b).norm() < 1e-6 * diag);
        }
    }

    #[test]
    fn optimizer_history_never_increases(diag in prop::collection::vec(0.01..100.0f64, 2..10), x0 in prop::collection::vec(-5.0..5.0f64, 10)) {
        let x0 = x0[..diag.len()].to_vec();
        let oracle = |x: &[f64]| -> partial_varifold::Result<(f64, Vec<f64>)> {
            let f = x.iter().zip(&diag).map(|(xi, d)| 0.5 * d * xi * xi + xi.powi(4)).sum();
            let g = x.iter().zip(&diag).map(|(xi, d)| d * xi + 4.0 * xi.powi(3)).collect();
            Ok((f, g))
        };
        let (x, report) = minimize(x0, oracle, &OptimizerConfig::default()).unwrap();
        prop_assert_eq!(report.history.len(), report.iterations + 1);
        prop_assert!(report.history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(x.iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn synthetic_case_is_deterministic(seed in 0u64..50, branches in 1usize..7) {
        let spec = SynthSpec {
            tree: TreeSpec { seed, branches, ..Default::default() },
            keep: vec![0],
            deformation_seed: seed,
            ..Default::default()
        };
        let (a, b) = (generate(&spec).unwrap(), generate(&spec).unwrap());
        prop_assert_eq!(&a.deformed, &b.deformed);
        prop_assert_eq!(a.truth.momenta.len(), a.trimmed.vertices().len());
        prop_assert_eq!(a.truth.deformed.len(), a.truth.original.len());
        let tree = make_tree(&spec.tree).unwrap();
        prop_assert_eq!(tree.distinct_labels().len(), branches);
    }
}
