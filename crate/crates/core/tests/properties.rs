use hho_core::linalg::SparseCholesky;
use hho_core::local_ops::LocalOperators;
use hho_core::smoothing::{Averaging, Smoother};
use hho_core::system::{full_matrix, CondensedSystem, Solver};
use hho_core::verification::{conformity, locality, mesh_invariants, moment_preservation, orthogonality};
use hho_core::{ScalarFn, SimplicialMesh, VectorFn};
use proptest::prelude::*;

fn jittered(n: usize, shifts: &[(f64, f64)]) -> SimplicialMesh {
    let base = SimplicialMesh::unit_square(n).unwrap();
    let h = 1.0 / n as f64;
    let vertices = base
        .vertices()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if base.is_boundary_vertex(i) {
                *v
            } else {
                let (a, b) = shifts[i % shifts.len()];
                [v[0] + 0.3 * h * a, v[1] + 0.3 * h * b]
            }
        })
        .collect();
    SimplicialMesh::new(vertices, base.cells().to_vec()).unwrap()
}

fn shifts() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 16)
}

fn averaging() -> impl Strategy<Value = Averaging> {
    prop_oneof![Just(Averaging::Mean), Just(Averaging::ScottZhang)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn smoother_identities_hold_on_distorted_meshes(s in shifts(), p in 0usize..=2, avg in averaging(), seed in 0u64..1000) {
        let mesh = jittered(3, &s);
        prop_assert!(mesh_invariants(&mesh, "").passed);
        let ops = LocalOperators::new(&mesh, p).unwrap();
        let sm = Smoother::new(&ops, avg).unwrap();
        let m = sm.matrix();
        for check in [moment_preservation(&sm, &m, "", seed, 3), conformity(&sm, &m, ""), locality(&sm, &m, "")] {
            prop_assert!(check.passed, "{}", check);
        }
        // entries of the form are O(10²) and the local stiffness conditioning grows with distortion
        let ortho = orthogonality(&sm, &m, "");
        prop_assert!(ortho.measured < 1e-9, "{}", ortho);
    }

    #[test]
    fn reconstruction_reproduces_polynomials(s in shifts(), p in 0usize..=2, c in prop::collection::vec(-1.0..1.0f64, 10)) {
        let mesh = jittered(4, &s);
        let ops = LocalOperators::new(&mesh, p).unwrap();
        // random polynomial of degree p + 1
        let q = p + 1;
        let terms: Vec<(i32, i32, f64)> = (0..=q as i32)
            .flat_map(|i| (0..=(q as i32 - i)).map(move |j| (i, j)))
            .zip(c.iter().cycle())
            .map(|((i, j), &a)| (i, j, a))
            .collect();
        let t1 = terms.clone();
        let u = ScalarFn::new(move |x| t1.iter().map(|&(i, j, a)| a * x[0].powi(i) * x[1].powi(j)).sum());
        let t2 = terms.clone();
        let grad = VectorFn::new(move |x| {
            let mut g = [0.0; 2];
            for &(i, j, a) in &t2 {
                if i > 0 { g[0] += a * i as f64 * x[0].powi(i - 1) * x[1].powi(j); }
                if j > 0 { g[1] += a * j as f64 * x[0].powi(i) * x[1].powi(j - 1); }
            }
            g
        });
        // boundary face unknowns are zero, so only cells away from the boundary reproduce q
        let r = ops.reconstruct(&ops.interpolate(&u));
        for k in 0..mesh.n_cells() {
            if mesh.cell_faces(k).iter().any(|&f| !mesh.face(f).is_interior()) {
                continue;
            }
            for x in mesh.cell_vertices(k) {
                let g = r.grad(&mesh, k, x);
                let gu = grad.eval(k, x);
                prop_assert!((r.eval(&mesh, k, x) - u.eval(k, x)).abs() < 1e-11);
                prop_assert!((g[0] - gu[0]).abs().max((g[1] - gu[1]).abs()) < 1e-10);
            }
        }
    }

    #[test]
    fn condensed_and_full_solves_agree(s in shifts(), p in 0usize..=2, b in prop::collection::vec(-1.0..1.0f64, 8)) {
        let mesh = jittered(4, &s);
        let ops = LocalOperators::new(&mesh, p).unwrap();
        let n = ops.dofs().n_dofs();
        let rhs: Vec<f64> = (0..n).map(|i| b[i % b.len()] * (1.0 + (i % 3) as f64)).collect();
        let condensed = CondensedSystem::assemble(&ops).unwrap().solve(&rhs, Solver::Cholesky).unwrap();
        let full = SparseCholesky::factor(&full_matrix(&ops)).unwrap().solve(&rhs);
        let scale = full.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = condensed.values.iter().zip(&full).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(diff <= 1e-10 * scale);
        let cg = CondensedSystem::assemble(&ops).unwrap()
            .solve(&rhs, Solver::ConjugateGradient { tolerance: 1e-13 }).unwrap();
        prop_assert!(cg.max_abs_diff(&condensed) <= 1e-8 * scale);
    }

    #[test]
    fn red_refinement_preserves_area_and_quadruples_cells(s in shifts()) {
        let mesh = jittered(3, &s);
        let fine = mesh.refine_red().unwrap();
        prop_assert_eq!(fine.n_cells(), 4 * mesh.n_cells());
        prop_assert!((fine.total_area() - mesh.total_area()).abs() < 1e-14);
        prop_assert!((fine.h_max() - 0.5 * mesh.h_max()).abs() < 1e-14);
        prop_assert!(mesh_invariants(&fine, "").passed);
    }
}
