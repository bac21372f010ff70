use bdflow_core::numerics::{solve_dense, sym_eig};
use bdflow_core::DenseMatrix;
use proptest::prelude::*;

fn symmetric(n: usize) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| {
        DenseMatrix::from_fn(n, n, |i, j| if i <= j { v[i * n + j] } else { v[j * n + i] })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn eigen_reconstruction(m in symmetric(20)) {
        let eig = sym_eig(&m, 1e-12).unwrap();
        let v = &eig.vectors;
        for i in 0..20 {
            for j in 0..20 {
                let r: f64 = (0..20).map(|k| v[(i, k)] * eig.values[k] * v[(j, k)]).sum();
                prop_assert!((r - m[(i, j)]).abs() <= 1e-8, "entry ({}, {}) off by {}", i, j, r - m[(i, j)]);
            }
        }
        prop_assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn eigenvalues_survive_permutation(m in symmetric(20), perm in Just((0..20).collect::<Vec<usize>>()).prop_shuffle()) {
        let pm = DenseMatrix::from_fn(20, 20, |i, j| m[(perm[i], perm[j])]);
        let a = sym_eig(&m, 1e-12).unwrap().values;
        let b = sym_eig(&pm, 1e-12).unwrap().values;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn solve_inverts_application(
        entries in prop::collection::vec(-1.0f64..1.0, 30 * 30),
        x in prop::collection::vec(-10.0f64..10.0, 30),
    ) {
        // Diagonal dominance keeps the system well conditioned.
        let m = DenseMatrix::from_fn(30, 30, |i, j| entries[i * 30 + j] + if i == j { 40.0 } else { 0.0 });
        let b = m.mul_vec(&x);
        let y = solve_dense(&m, &b).unwrap();
        for (u, v) in x.iter().zip(&y) {
            prop_assert!((u - v).abs() <= 1e-9);
        }
    }
}
