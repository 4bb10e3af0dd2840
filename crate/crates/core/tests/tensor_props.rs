use proptest::prelude::*;
use rgtn::io::{encode_tensor, read_tensor};
use rgtn::linalg::{nuclear_norm, singular_values, svd_truncated};
use rgtn::tensor::{contract, fold, unfold, Matrix};
use rgtn::DenseTensor;

fn tensor(max_order: usize, max_dim: usize) -> impl Strategy<Value = DenseTensor> {
    prop::collection::vec(1..=max_dim, 1..=max_order).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop::collection::vec(-10.0..10.0f64, n).prop_map(move |data| DenseTensor::new(shape.clone(), data).unwrap())
    })
}

fn matrix(max_dim: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_dim, 1..=max_dim).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0..5.0f64, r * c).prop_map(move |d| Matrix::new(r, c, d).unwrap())
    })
}

/// Pairwise contraction by enumerating every index of both operands.
fn naive_contract(a: &DenseTensor, ma: &[usize], b: &DenseTensor, mb: &[usize]) -> DenseTensor {
    let free_a: Vec<usize> = (0..a.order()).filter(|k| !ma.contains(k)).collect();
    let free_b: Vec<usize> = (0..b.order()).filter(|k| !mb.contains(k)).collect();
    let mut shape: Vec<usize> = free_a.iter().map(|&k| a.shape()[k]).chain(free_b.iter().map(|&k| b.shape()[k])).collect();
    if shape.is_empty() {
        shape.push(1);
    }
    let mut out = DenseTensor::zeros(&shape);
    let total_a = a.numel();
    for ia in 0..total_a {
        let idx_a = unravel(ia, a.shape());
        for ib in 0..b.numel() {
            let idx_b = unravel(ib, b.shape());
            if ma.iter().zip(mb).any(|(&x, &y)| idx_a[x] != idx_b[y]) {
                continue;
            }
            let mut pos: Vec<usize> = free_a.iter().map(|&k| idx_a[k]).chain(free_b.iter().map(|&k| idx_b[k])).collect();
            if pos.is_empty() {
                pos.push(0);
            }
            let v = out.get(&pos) + a.data()[ia] * b.data()[ib];
            out.set(&pos, v);
        }
    }
    out
}

fn unravel(mut i: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for k in (0..shape.len()).rev() {
        idx[k] = i % shape[k];
        i /= shape[k];
    }
    idx
}

fn rel_diff(a: &DenseTensor, b: &DenseTensor) -> f64 {
    let num: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.data().iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    num / den
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_inverts_unfold_bitwise(t in tensor(4, 4), k in 0usize..4) {
        let k = k % t.order();
        let back = fold(&unfold(&t, k).unwrap(), k, t.shape()).unwrap();
        prop_assert_eq!(back.data(), t.data());
    }

    #[test]
    fn contract_matches_nested_loops(a in tensor(3, 3), b in tensor(3, 3), pairs in 0usize..3, seed in any::<u64>()) {
        // pair up modes of equal size, greedily from a seeded offset
        let mut ma = Vec::new();
        let mut mb = Vec::new();
        for i in 0..a.order() {
            if ma.len() == pairs {
                break;
            }
            let j = (0..b.order()).map(|j| (j + seed as usize) % b.order()).find(|&j| !mb.contains(&j) && b.shape()[j] == a.shape()[i]);
            if let Some(j) = j {
                ma.push(i);
                mb.push(j);
            }
        }
        prop_assume!(a.order() + b.order() <= 6);
        let fast = contract(&a, &ma, &b, &mb).unwrap();
        let slow = naive_contract(&a, &ma, &b, &mb);
        prop_assert_eq!(fast.shape(), slow.shape());
        prop_assert!(rel_diff(&fast, &slow) <= 1e-12);
    }

    #[test]
    fn chain_contraction_is_associative(d in prop::collection::vec(1usize..4, 4), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rand_t = |shape: &[usize]| DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
        let a = rand_t(&[d[0], d[1]]);
        let b = rand_t(&[d[1], d[2]]);
        let c = rand_t(&[d[2], d[3]]);
        let left = contract(&contract(&a, &[1], &b, &[0]).unwrap(), &[1], &c, &[0]).unwrap();
        let right = contract(&a, &[1], &contract(&b, &[1], &c, &[0]).unwrap(), &[0]).unwrap();
        prop_assert!(rel_diff(&left, &right) <= 1e-10);
    }

    #[test]
    fn svd_factors_are_orthonormal(m in matrix(6), threshold in 0.0..0.5f64) {
        let svd = svd_truncated(&m, threshold, None).unwrap();
        prop_assume!(!svd.is_degenerate());
        let utu = svd.left.transpose().matmul(&svd.left).unwrap();
        let vvt = svd.right.matmul_transposed(&svd.right).unwrap();
        let eye = Matrix::identity(svd.rank);
        prop_assert!(utu.sub(&eye).frobenius_norm() <= 1e-8);
        prop_assert!(vvt.sub(&eye).frobenius_norm() <= 1e-8);
        // the error is exactly the energy of what was dropped
        let dropped: f64 = svd.discarded.iter().map(|s| s * s).sum::<f64>().sqrt();
        let err = m.sub(&svd.reconstruct()).frobenius_norm();
        prop_assert!((err - dropped).abs() <= 1e-8 * m.frobenius_norm().max(1.0));
    }

    #[test]
    fn singular_values_match_reference_svd(m in matrix(7)) {
        let reference = nalgebra::DMatrix::from_row_slice(m.rows, m.cols, &m.data);
        let mut expected: Vec<f64> = reference.singular_values().iter().copied().collect();
        expected.sort_by(|a, b| b.total_cmp(a));
        let got = singular_values(&m);
        let scale = expected[0].max(1.0);
        for (k, e) in expected.iter().enumerate() {
            let g = got.get(k).copied().unwrap_or(0.0);
            prop_assert!((g - e).abs() <= 1e-9 * scale, "sigma_{} {} vs {}", k, g, e);
        }
    }

    #[test]
    fn nuclear_norm_bounds(a in matrix(5), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b = Matrix::new(a.rows, a.cols, (0..a.rows * a.cols).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let sum = Matrix::new(a.rows, a.cols, a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect()).unwrap();
        prop_assert!(nuclear_norm(&sum) <= nuclear_norm(&a) + nuclear_norm(&b) + 1e-9);
        prop_assert!(nuclear_norm(&a) + 1e-9 >= a.frobenius_norm());
    }

    #[test]
    fn rgt1_round_trips_bitwise(t in tensor(4, 4)) {
        let bytes = encode_tensor(&t);
        let back = read_tensor(&bytes[..]).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rgt1_rejects_truncation(t in tensor(3, 3), cut in 1usize..16) {
        let bytes = encode_tensor(&t);
        let cut = cut.min(bytes.len());
        prop_assert!(read_tensor(&bytes[..bytes.len() - cut]).is_err());
    }
}
