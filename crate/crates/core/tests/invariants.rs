mod common;

use common::invariants;
use common::{gradcheck, readout, FD_TOL};
use flashdistill::autodiff::Tensor;
use flashdistill::diffusion::{forward_noise, x0_hat};
use proptest::prelude::*;

#[test]
fn schedule_is_variance_preserving() {
    invariants::variance_preservation().unwrap();
}

#[test]
fn x0_estimate_inverts_forward_noise() {
    invariants::x0_round_trip().unwrap();
}

#[test]
fn exact_noise_sampling_is_step_count_invariant() {
    invariants::step_count_invariance().unwrap();
}

#[test]
fn stop_gradient_blocks_all_flow() {
    invariants::stop_gradient_zero_flow().unwrap();
}

#[test]
fn every_op_matches_finite_differences() {
    for (name, inputs, f) in invariants::op_cases() {
        let err = gradcheck(&inputs, f);
        assert!(err < FD_TOL, "{name}: {err:e}");
    }
}

#[test]
fn both_models_match_finite_differences() {
    invariants::model_gradients().unwrap();
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn affine_silu_chain_gradients(x in matrix(3, 4), w in matrix(4, 3), b in prop::collection::vec(-1.0f64..1.0, 3)) {
        let inputs = vec![x, w, Tensor::vector(b)];
        let err = gradcheck(&inputs, |t, v| {
            let h = t.affine(v[0], v[1], v[2])?;
            let h = t.silu(h)?;
            let sq = t.square(h)?;
            readout(t, sq, 0)
        });
        prop_assert!(err < FD_TOL, "{err:e}");
    }

    #[test]
    fn round_trip_holds_for_any_t(t in 0usize..1000, seed in 0u64..1000) {
        let s = common::schedule();
        let x0 = common::normal(seed, 8, 2);
        let eps = common::normal(seed + 1, 8, 2);
        let back = x0_hat(&forward_noise(&x0, &eps, t, &s).unwrap(), &eps, t, &s).unwrap();
        prop_assert!(back.max_abs_diff(&x0) < 1e-10);
    }

    #[test]
    fn forward_noise_preserves_unit_variance(t in 0usize..1000) {
        // Unit-variance data stays unit variance: alpha^2 + sigma^2 = 1.
        let s = common::schedule();
        let x0 = common::normal(7, 20_000, 1);
        let eps = common::normal(8, 20_000, 1);
        let x = forward_noise(&x0, &eps, t, &s).unwrap();
        let n = x.numel() as f64;
        let mean = x.data().iter().sum::<f64>() / n;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        // Standard error of the variance estimate is about sqrt(2 / n) = 0.01.
        prop_assert!((var - 1.0).abs() < 0.05, "var {var} at t={t}");
    }
}
