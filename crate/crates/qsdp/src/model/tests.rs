use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::*;
use crate::error::QsdpError;

// Independent scalar-loop oracle for the poly forward pass, written against
// plain slices so it shares no code with the implementation.
fn poly_oracle(q: &[Vec<i64>], a: f64, b: f64, c: f64, alpha: &[f64], x: &[f64]) -> f64 {
    let mut total = 0.0;
    for (row, al) in q.iter().zip(alpha) {
        let mut t = 0.0;
        for (qi, xi) in row.iter().zip(x) {
            t += *qi as f64 * *xi;
        }
        total += (a * t * t + b * t + c) * al;
    }
    total
}

fn bilinear_oracle(u: &[Vec<f64>], v: &[Vec<f64>], alpha: &[f64], x: &[f64]) -> f64 {
    let mut total = 0.0;
    for j in 0..alpha.len() {
        let tu: f64 = u[j].iter().zip(x).map(|(a, b)| a * b).sum();
        let tv: f64 = v[j].iter().zip(x).map(|(a, b)| a * b).sum();
        total += tu * tv * alpha[j];
    }
    total
}

fn random_poly(rng: &mut ChaCha12Rng, m: usize, d: usize, levels: u32, a: f64, b: f64, c: f64) -> PolyNetwork {
    let weights = DMatrix::from_fn(m, d, |_, _| {
        let step = rng.gen_range(0..=levels) as i64;
        2 * step - i64::from(levels)
    });
    let alpha = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
    PolyNetwork::new(weights, levels, a, b, c, alpha).unwrap()
}

fn random_signs(rng: &mut ChaCha12Rng, m: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, d, |_, _| if rng.gen::<bool>() { 1.0 } else { -1.0 })
}

fn random_bilinear(rng: &mut ChaCha12Rng, m: usize, d: usize) -> BilinearNetwork {
    let u = random_signs(rng, m, d);
    let v = random_signs(rng, m, d);
    let alpha = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
    BilinearNetwork::new(u, v, alpha, InputKind::Raw).unwrap()
}

#[test]
fn poly_forward_single_neuron() {
    let net = PolyNetwork::new(
        DMatrix::from_row_slice(1, 2, &[1, 1]),
        1,
        1.0,
        0.0,
        0.0,
        DVector::from_vec(vec![1.0]),
    )
    .unwrap();
    let x = DVector::from_vec(vec![1.0, 2.0]);
    assert_eq!(net.forward(&x).unwrap(), 9.0);
}

#[test]
fn poly_forward_zero_second_layer() {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let weights = DMatrix::from_fn(4, 3, |_, _| 2 * rng.gen_range(0..=2i64) - 2);
    let net = PolyNetwork::new(weights, 2, 0.3, -1.0, 2.0, DVector::zeros(4)).unwrap();
    let x = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
    assert_eq!(net.forward(&x).unwrap(), 0.0);
}

#[test]
fn poly_forward_matches_scalar_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let net = random_poly(&mut rng, 3, 5, 4, 1.0, 0.1, 0.5);
    for _ in 0..20 {
        let x = DVector::from_fn(5, |_, _| rng.gen_range(-1.5..1.5));
        let got = net.forward(&x).unwrap();
        let q: Vec<Vec<i64>> =
            (0..3).map(|j| (0..5).map(|i| net.weights()[(j, i)]).collect()).collect();
        let want = poly_oracle(&q, 1.0, 0.1, 0.5, net.alpha().as_slice(), x.as_slice());
        assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }
}

#[test]
fn poly_forward_rejects_dimension_mismatch() {
    let net = PolyNetwork::new(
        DMatrix::from_row_slice(1, 2, &[1, -1]),
        1,
        1.0,
        0.0,
        0.0,
        DVector::from_vec(vec![1.0]),
    )
    .unwrap();
    let err = net.forward(&DVector::from_vec(vec![1.0])).unwrap_err();
    assert!(matches!(err, QsdpError::DimensionMismatch(_)));
}

#[test]
fn poly_network_rejects_invalid_quantization() {
    // 3 is outside the parity class of M = 4.
    let err = PolyNetwork::new(
        DMatrix::from_row_slice(1, 1, &[3]),
        4,
        1.0,
        0.0,
        0.0,
        DVector::from_vec(vec![1.0]),
    )
    .unwrap_err();
    assert!(matches!(err, QsdpError::InvalidQuantization { value: 3, .. }));
    let err = PolyNetwork::new(
        DMatrix::from_row_slice(1, 1, &[6]),
        4,
        1.0,
        0.0,
        0.0,
        DVector::from_vec(vec![1.0]),
    )
    .unwrap_err();
    assert!(matches!(err, QsdpError::InvalidQuantization { value: 6, .. }));
}

#[test]
fn bilinear_forward_single_neuron() {
    let u = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
    let net =
        BilinearNetwork::new(u.clone(), u, DVector::from_vec(vec![1.0]), InputKind::Raw).unwrap();
    let x = DVector::from_vec(vec![1.0, 2.0]);
    assert_eq!(net.forward_raw(&x).unwrap(), 9.0);
}

#[test]
fn bilinear_forward_cancelling_pair_is_zero() {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let u1 = random_signs(&mut rng, 1, 4);
    let v1 = random_signs(&mut rng, 1, 4);
    let mut u = DMatrix::zeros(2, 4);
    let mut v = DMatrix::zeros(2, 4);
    for i in 0..4 {
        u[(0, i)] = u1[(0, i)];
        u[(1, i)] = u1[(0, i)];
        v[(0, i)] = v1[(0, i)];
        v[(1, i)] = v1[(0, i)];
    }
    let net =
        BilinearNetwork::new(u, v, DVector::from_vec(vec![0.7, -0.7]), InputKind::Raw).unwrap();
    for _ in 0..10 {
        let x = DVector::from_fn(4, |_, _| rng.gen_range(-2.0..2.0));
        assert_eq!(net.forward_raw(&x).unwrap(), 0.0);
    }
}

#[test]
fn bilinear_forward_matches_scalar_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(19);
    let net = random_bilinear(&mut rng, 4, 6);
    for _ in 0..20 {
        let x = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
        let got = net.forward_raw(&x).unwrap();
        let u: Vec<Vec<f64>> = (0..4).map(|j| net.u().row(j).iter().copied().collect()).collect();
        let v: Vec<Vec<f64>> = (0..4).map(|j| net.v().row(j).iter().copied().collect()).collect();
        let want = bilinear_oracle(&u, &v, net.alpha().as_slice(), x.as_slice());
        assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }
}

#[test]
fn bilinear_forward_rejects_kind_mismatch() {
    let u = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
    let net =
        BilinearNetwork::new(u.clone(), u, DVector::from_vec(vec![1.0]), InputKind::Raw).unwrap();
    let lifted = lift_input(&DVector::from_vec(vec![2.0]), 1, 1.0, 0.0, 0.0).unwrap();
    assert!(matches!(net.forward(NetInput::Lifted(&lifted)), Err(QsdpError::KindMismatch(_))));
}

#[test]
fn lift_input_scalar_example() {
    let lifted = lift_input(&DVector::from_vec(vec![3.0]), 2, 1.0, 2.0, 5.0).unwrap();
    let want = DMatrix::from_row_slice(3, 3, &[9.0, 9.0, 3.0, 9.0, 9.0, 3.0, 3.0, 3.0, 5.0]);
    assert_eq!(lifted.matrix(), &want);
}

#[test]
fn lift_input_zero_vector_keeps_only_corner() {
    let lifted = lift_input(&DVector::zeros(3), 4, 2.0, -1.0, 7.0).unwrap();
    let m = lifted.matrix();
    assert_eq!(m.nrows(), 13);
    for i in 0..13 {
        for j in 0..13 {
            let want = if i == 12 && j == 12 { 7.0 } else { 0.0 };
            assert_eq!(m[(i, j)], want);
        }
    }
}

#[test]
fn lift_input_two_coordinates() {
    let lifted = lift_input(&DVector::from_vec(vec![1.0, -1.0]), 1, 2.0, 0.0, 1.0).unwrap();
    let want = DMatrix::from_row_slice(3, 3, &[2.0, -2.0, 0.0, -2.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
    assert_eq!(lifted.matrix(), &want);
}

#[test]
fn lift_input_reconstructs_original() {
    let x = DVector::from_vec(vec![0.5, -2.0, 1.5]);
    let lifted = lift_input(&x, 3, 1.3, 0.4, -0.2).unwrap();
    let back = lifted.reconstruct_input().unwrap();
    assert!((back - x).norm() < 1e-12);
}

#[test]
fn canonical_decomposition_extremes() {
    let signs: Vec<f64> = canonical_signs(-4, 4).collect();
    assert_eq!(signs, vec![-1.0, -1.0, -1.0, -1.0]);
    let signs: Vec<f64> = canonical_signs(0, 4).collect();
    assert_eq!(signs, vec![1.0, 1.0, -1.0, -1.0]);
    let signs: Vec<f64> = canonical_signs(2, 4).collect();
    assert_eq!(signs, vec![1.0, 1.0, 1.0, -1.0]);
}

#[test]
fn multilevel_reduction_preserves_outputs() {
    let mut rng = ChaCha12Rng::seed_from_u64(23);
    let (a, b, c) = (1.0, 0.1, 0.5);
    let net = random_poly(&mut rng, 2, 3, 4, a, b, c);
    let bilinear = net.to_binary_bilinear();
    assert_eq!(bilinear.weight_dim(), 3 * 4 + 1);
    for _ in 0..50 {
        let x = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
        let direct = net.forward(&x).unwrap();
        let lifted = lift_input(&x, 4, a, b, c).unwrap();
        let via_bilinear = bilinear.forward_lifted(&lifted).unwrap();
        assert!((direct - via_bilinear).abs() <= 1e-10 * (1.0 + direct.abs()));
    }
}

#[test]
fn multilevel_reduction_rows_are_signs_with_unit_tail() {
    let mut rng = ChaCha12Rng::seed_from_u64(29);
    let net = random_poly(&mut rng, 5, 2, 3, 0.5, -0.3, 0.0);
    let bilinear = net.to_binary_bilinear();
    let last = bilinear.weight_dim() - 1;
    for j in 0..bilinear.neurons() {
        assert_eq!(bilinear.u()[(j, last)], 1.0);
        for i in 0..bilinear.weight_dim() {
            let e = bilinear.u()[(j, i)];
            assert!(e == 1.0 || e == -1.0);
        }
    }
    assert_eq!(bilinear.u(), bilinear.v());
}

#[test]
fn symmetrization_identical_pair() {
    let u = DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 1.0]);
    let net = BilinearNetwork::new(u.clone(), u.clone(), DVector::from_vec(vec![0.8]), InputKind::Raw)
        .unwrap();
    let quad = net.to_quadratic();
    assert_eq!(quad.neurons(), 3);
    // Middle weights coincide with u, coefficients sum back to alpha.
    assert!((quad.alpha()[0] + quad.alpha()[1] + quad.alpha()[2] - 0.8).abs() < 1e-15);
    let x = DVector::from_vec(vec![0.3, 1.1, -0.4]);
    let want = net.forward_raw(&x).unwrap();
    let got = quad.forward_raw(&x).unwrap();
    assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
}

#[test]
fn symmetrization_antipodal_pair() {
    let u = DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 1.0]);
    let v = -u.clone();
    let net = BilinearNetwork::new(u, v, DVector::from_vec(vec![0.8]), InputKind::Raw).unwrap();
    let quad = net.to_quadratic();
    // The averaged neuron is the zero vector and contributes nothing.
    for i in 0..3 {
        assert_eq!(quad.w()[(0, i)], 0.0);
    }
    let x = DVector::from_vec(vec![0.3, 1.1, -0.4]);
    let want = net.forward_raw(&x).unwrap();
    let got = quad.forward_raw(&x).unwrap();
    assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
}

#[test]
fn symmetrization_random_networks() {
    let mut rng = ChaCha12Rng::seed_from_u64(31);
    let net = random_bilinear(&mut rng, 3, 5);
    let quad = net.to_quadratic();
    for _ in 0..50 {
        let x = DVector::from_fn(5, |_, _| rng.gen_range(-2.0..2.0));
        let want = net.forward_raw(&x).unwrap();
        let got = quad.forward_raw(&x).unwrap();
        assert!((got - want).abs() <= 1e-10 * (1.0 + want.abs()));
    }
}

#[test]
fn vector_network_forward_sums_per_class() {
    let mut rng = ChaCha12Rng::seed_from_u64(37);
    let u = random_signs(&mut rng, 4, 3);
    let v = random_signs(&mut rng, 4, 3);
    let alpha = DMatrix::from_fn(4, 2, |_, _| rng.gen_range(-1.0..1.0));
    let net = VectorBilinearNetwork::new(u.clone(), v.clone(), alpha.clone()).unwrap();
    let x = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
    let out = net.forward(&x).unwrap();
    for k in 0..2 {
        let scalar = BilinearNetwork::new(
            u.clone(),
            v.clone(),
            DVector::from_column_slice(alpha.column(k).as_slice()),
            InputKind::Raw,
        )
        .unwrap();
        let want = scalar.forward_raw(&x).unwrap();
        assert!((out[k] - want).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Round trip through the lifted bilinear representation is exact for all
    // quantized networks and inputs.
    #[test]
    fn prop_reduction_round_trip(seed in 0u64..1000, m in 1usize..4, d in 1usize..4, levels in 1u32..5) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let (a, b, c) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let net = random_poly(&mut rng, m, d, levels, a, b, c);
        let bilinear = net.to_binary_bilinear();
        let x = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
        let direct = net.forward(&x).unwrap();
        let lifted = lift_input(&x, levels, a, b, c).unwrap();
        let via = bilinear.forward_lifted(&lifted).unwrap();
        prop_assert!((direct - via).abs() <= 1e-10 * (1.0 + direct.abs()));
    }

    // Negating a (u_j, v_j) pair leaves the bilinear output unchanged.
    #[test]
    fn prop_sign_negation_symmetry(seed in 0u64..1000, m in 1usize..5, d in 1usize..5) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let net = random_bilinear(&mut rng, m, d);
        let flip = rng.gen_range(0..m);
        let mut u = net.u().clone();
        let mut v = net.v().clone();
        for i in 0..d {
            u[(flip, i)] = -u[(flip, i)];
            v[(flip, i)] = -v[(flip, i)];
        }
        let negated = BilinearNetwork::new(u, v, net.alpha().clone(), InputKind::Raw).unwrap();
        let x = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
        let a = net.forward_raw(&x).unwrap();
        let b = negated.forward_raw(&x).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    // Bit-packed serialization round-trips every network kind exactly.
    #[test]
    fn prop_serialization_round_trip(seed in 0u64..1000, m in 1usize..5, d in 1usize..5, levels in 1u32..4) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let poly = random_poly(&mut rng, m, d, levels, 0.7, -0.1, 0.2);
        let bilinear = random_bilinear(&mut rng, m, d);
        let quad = bilinear.to_quadratic();
        for net in [Network::Poly(poly), Network::Bilinear(bilinear), Network::Quadratic(quad)] {
            let mut bytes = Vec::new();
            write_network(&net, &mut bytes).unwrap();
            let back = read_network(&mut bytes.as_slice()).unwrap();
            prop_assert_eq!(&back, &net);
            let mut again = Vec::new();
            write_network(&back, &mut again).unwrap();
            prop_assert_eq!(again, bytes);
        }
    }
}

#[test]
fn uniform_alpha_bilinear_payload_size() {
    let mut rng = ChaCha12Rng::seed_from_u64(41);
    let m = 5;
    let d = 7;
    let u = random_signs(&mut rng, m, d);
    let v = random_signs(&mut rng, m, d);
    let net = BilinearNetwork::with_uniform_alpha(u, v, 0.25, InputKind::Raw).unwrap();
    let mut bytes = Vec::new();
    write_network(&Network::Bilinear(net), &mut bytes).unwrap();
    let header = 4 + 2 + 1 + 1 + 4 + 4 + 4 + 24;
    let plane = (m * d).div_ceil(8);
    assert_eq!(bytes.len(), header + 2 * plane + 8);
}
