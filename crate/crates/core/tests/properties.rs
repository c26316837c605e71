use proptest::prelude::*;
use textbin::ops::{conv2d, conv_transpose2d};
use textbin::quant::binary::code_index;
use textbin::quant::{binary_quantize, index_to_code};
use textbin::{seeded_rng, Tensor};

proptest! {
    #[test]
    fn index_code_round_trip(d in 1u32..=16, raw in any::<u32>()) {
        let i = raw % (1 << d);
        let code = index_to_code(i, d).unwrap();
        prop_assert_eq!(code.signs().len(), d as usize);
        prop_assert_eq!(code_index(&code.to_f32()), i);
    }

    #[test]
    fn out_of_range_index_is_rejected(d in 1u32..=16, extra in 0u32..1000) {
        prop_assert!(index_to_code((1 << d) + extra, d).is_err());
    }

    #[test]
    fn quantizing_signs_is_idempotent(values in prop::collection::vec(-5.0f32..5.0, 1..64), d in 1usize..8) {
        let rows = values.len() / d;
        prop_assume!(rows > 0);
        let x = Tensor::new(&[rows, d], values[..rows * d].to_vec()).unwrap();
        let q = binary_quantize(&x, d as u32).unwrap();
        let again = binary_quantize(&q.quantized, d as u32).unwrap();
        prop_assert_eq!(q.quantized.data(), again.quantized.data());
        prop_assert_eq!(q.indices, again.indices);
    }

    #[test]
    fn conv_transpose_is_adjoint(
        seed in any::<u64>(),
        stride in 1usize..=2,
        padding in 0usize..=1,
        wide in any::<bool>(),
        c in 1usize..4,
        o in 1usize..4,
        out in 1usize..5,
    ) {
        let k = if wide { 3 } else { 1 };
        prop_assume!(padding < k);
        let hw = (out - 1) * stride + k - 2 * padding;
        let mut rng = seeded_rng(seed);
        let x = Tensor::randn(&[1, c, hw, hw], 1.0, &mut rng);
        let w = Tensor::randn(&[o, c, k, k], 1.0, &mut rng);
        let y = Tensor::randn(&[1, o, out, out], 1.0, &mut rng);
        let lhs = conv2d(&x, &w, stride, padding).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&conv_transpose2d(&y, &w, stride, padding, 0).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-4 * lhs.abs().max(rhs.abs()).max(1.0), "{} vs {}", lhs, rhs);
    }
}
