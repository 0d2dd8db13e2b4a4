use proptest::prelude::*;
use xxzbell_core::linalg::{
    c, direction_operator, direction_operator_from, hermitian_eig, hermitian_exp, identity, kron, max_abs_diff, pauli,
    svd, Axis, CMatrix, UnitVector3,
};
use xxzbell_core::LinalgError;

fn mat(rows: usize, entries: &[(f64, f64)]) -> CMatrix {
    CMatrix::from_row_slice(rows, entries.len() / rows, &entries.iter().map(|&(r, i)| c(r, i)).collect::<Vec<_>>())
}

fn hermitian_from(n: usize, raw: &[f64]) -> CMatrix {
    let g = CMatrix::from_fn(n, n, |i, j| c(raw[2 * (i * n + j)], raw[2 * (i * n + j) + 1]));
    (&g + g.adjoint()) * c(0.5, 0.0)
}

fn general_from(rows: usize, cols: usize, raw: &[f64]) -> CMatrix {
    CMatrix::from_fn(rows, cols, |i, j| c(raw[2 * (i * cols + j)], raw[2 * (i * cols + j) + 1]))
}

fn raw_entries(count: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, count)
}

fn unit_vector() -> impl Strategy<Value = UnitVector3> {
    (-1.0f64..=1.0, 0.0..std::f64::consts::TAU).prop_map(|(z, phi)| UnitVector3::from_angles(z.acos(), phi))
}

#[test]
fn pauli_matrices() {
    assert_eq!(pauli(Axis::Z), mat(2, &[(1.0, 0.0), (0.0, 0.0), (0.0, 0.0), (-1.0, 0.0)]));
    assert_eq!(pauli(Axis::X), mat(2, &[(0.0, 0.0), (1.0, 0.0), (1.0, 0.0), (0.0, 0.0)]));
    assert!(max_abs_diff(&(pauli(Axis::Y) * pauli(Axis::Y)), &identity(2)) == 0.0);
}

#[test]
fn direction_operators() {
    assert_eq!(direction_operator(&UnitVector3::Z), pauli(Axis::Z));
    assert_eq!(direction_operator(&UnitVector3::X), pauli(Axis::X));
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let eig = hermitian_eig(&direction_operator(&UnitVector3::new(h, 0.0, h).unwrap())).unwrap();
    assert!((eig.values[0] + 1.0).abs() < 1e-12 && (eig.values[1] - 1.0).abs() < 1e-12);
    assert!(matches!(direction_operator_from([1.0, 0.0, 1e-4]), Err(LinalgError::NonUnitVector { .. })));
    assert!(direction_operator_from([1.0, 0.0, 1e-5]).is_ok());
}

#[test]
fn kronecker_examples() {
    assert_eq!(kron(&identity(2), &identity(2)), identity(4));
    let zz = kron(&pauli(Axis::Z), &pauli(Axis::Z));
    let diag: Vec<f64> = (0..4).map(|i| zz[(i, i)].re).collect();
    assert_eq!(diag, vec![1.0, -1.0, -1.0, 1.0]);
    assert_eq!(zz.iter().filter(|x| x.norm() != 0.0).count(), 4);
}

#[test]
fn eigen_examples() {
    let z = hermitian_eig(&pauli(Axis::Z)).unwrap();
    assert_eq!(z.values, vec![-1.0, 1.0]);
    let x = hermitian_eig(&pauli(Axis::X)).unwrap();
    assert!((x.values[0] + 1.0).abs() < 1e-14 && (x.values[1] - 1.0).abs() < 1e-14);
    // eigenvector of −1 is (1, −1)/√2 up to phase
    let v = x.vectors.column(0);
    assert!((v[0] + v[1]).norm() < 1e-12 && (v[0].norm() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    let not_hermitian = mat(2, &[(0.0, 0.0), (1.0, 0.0), (0.0, 0.0), (0.0, 0.0)]);
    assert!(matches!(hermitian_eig(&not_hermitian), Err(LinalgError::NotHermitian { .. })));
}

#[test]
fn exponential_examples() {
    let h = hermitian_from(4, &(0..32).map(|k| ((k * 37 % 11) as f64 - 5.0) / 7.0).collect::<Vec<_>>());
    assert!(max_abs_diff(&hermitian_exp(&h, 0.0).unwrap(), &identity(4)) < 1e-14);
    let e = hermitian_exp(&pauli(Axis::Z), -1.0).unwrap();
    assert!((e[(0, 0)].re - (-1f64).exp()).abs() < 1e-14 && (e[(1, 1)].re - 1f64.exp()).abs() < 1e-14);
    assert!(e[(0, 1)].norm() < 1e-15);
    let product = hermitian_exp(&h, -0.7).unwrap() * hermitian_exp(&h, 0.7).unwrap();
    assert!(max_abs_diff(&product, &identity(4)) < 1e-10);
}

#[test]
fn svd_examples() {
    let s = svd(&identity(5)).unwrap();
    assert!(s.singular_values.iter().all(|&x| (x - 1.0).abs() < 1e-14));
    let d = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1.0, 0.0), c(3.0, 0.0), c(2.0, 0.0)]));
    let s = svd(&d).unwrap();
    for (got, want) in s.singular_values.iter().zip([3.0, 2.0, 1.0]) {
        assert!((got - want).abs() < 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn direction_operator_squares_to_identity(a in unit_vector()) {
        let m = direction_operator(&a);
        prop_assert!(max_abs_diff(&(&m * &m), &identity(2)) <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigendecomposition_reconstructs(raw in raw_entries(128)) {
        let a = hermitian_from(8, &raw);
        let eig = hermitian_eig(&a).unwrap();
        prop_assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(max_abs_diff(&eig.map(|w| c(w, 0.0)), &a) <= 1e-10);
        prop_assert!(max_abs_diff(&(eig.vectors.adjoint() * &eig.vectors), &identity(8)) <= 1e-10);
    }

    #[test]
    fn exponential_is_a_one_parameter_group(raw in raw_entries(72), s in -2.0f64..2.0, t in -2.0f64..2.0) {
        let a = hermitian_from(6, &raw);
        let lhs = hermitian_exp(&a, s).unwrap() * hermitian_exp(&a, t).unwrap();
        let rhs = hermitian_exp(&a, s + t).unwrap();
        let scale = rhs.iter().fold(1.0f64, |m, x| m.max(x.norm()));
        prop_assert!(max_abs_diff(&lhs, &rhs) <= 1e-10 * scale);
    }

    #[test]
    fn svd_reconstructs(raw in raw_entries(128)) {
        let a = general_from(8, 8, &raw);
        let s = svd(&a).unwrap();
        prop_assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]) && s.singular_values.iter().all(|&x| x >= 0.0));
        prop_assert!(max_abs_diff(&s.reconstruct(), &a) <= 1e-10);
        prop_assert!(max_abs_diff(&(s.u.adjoint() * &s.u), &identity(8)) <= 1e-10);
        prop_assert!(max_abs_diff(&(&s.v_adjoint * s.v_adjoint.adjoint()), &identity(8)) <= 1e-10);
    }

    #[test]
    fn rectangular_svd_reconstructs(raw in raw_entries(96)) {
        let a = general_from(4, 12, &raw);
        prop_assert!(max_abs_diff(&svd(&a).unwrap().reconstruct(), &a) <= 1e-10);
    }

    #[test]
    fn kron_is_associative_and_mixed_product(raw in raw_entries(48)) {
        let a = general_from(2, 2, &raw[0..8]);
        let b = general_from(2, 2, &raw[8..16]);
        let cm = general_from(2, 2, &raw[16..24]);
        let d = general_from(2, 2, &raw[24..32]);
        prop_assert!(max_abs_diff(&kron(&kron(&a, &b), &cm), &kron(&a, &kron(&b, &cm))) <= 1e-14);
        let lhs = kron(&a, &b) * kron(&cm, &d);
        let rhs = kron(&(&a * &cm), &(&b * &d));
        prop_assert!(max_abs_diff(&lhs, &rhs) <= 1e-14);
    }
}
