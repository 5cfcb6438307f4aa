mod common;

use common::{flat_params, loss_and_grad, normals, tiny_model, tiny_triple, with_flat_params};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rce_core::distributions::{entropy, kl_diag};
use rce_core::env::{generate_dataset, EnvConfig};
use rce_core::model::{BackwardEncode, LatentModel};
use rce_core::training::{
    adam_step, bound_terms, rce_loss, train, AdamConfig, AdamState, LossSchedule, LossWeights, TrainConfig,
};
use rce_core::Tensor;

#[test]
fn full_loss_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let model = tiny_model(4);
    let theta = flat_params(&model);
    let h = 1e-5;
    let w = LossWeights { w_kl: 0.7, w_logp: 1.3 };
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let triple = tiny_triple(&mut rng);
        let (e1, e2) = (normals(&mut rng, 2), normals(&mut rng, 2));
        let (_, g) = loss_and_grad(&model, &triple, &e1, &e2, w);
        for i in 0..theta.len() {
            let mut p = theta.clone();
            p[i] += h;
            let up = rce_loss(&with_flat_params(&model, &p), &triple, &e1, &e2, w).unwrap().0;
            p[i] -= 2.0 * h;
            let down = rce_loss(&with_flat_params(&model, &p), &triple, &e1, &e2, w).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-4);
            worst = worst.max(err);
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn zero_weights_leave_reconstruction_and_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = tiny_model(6);
    let triple = tiny_triple(&mut rng);
    let (e1, e2) = (normals(&mut rng, 2), normals(&mut rng, 2));
    let zero = LossWeights { w_kl: 0.0, w_logp: 0.0 };
    let (loss, terms) = rce_loss(&model, &triple, &e1, &e2, zero).unwrap();
    assert!((loss + terms.bce + terms.entropy).abs() < 1e-12);

    // the four terms recomputed from standalone distributions
    let enc_next = model.encode(&triple.x_next).unwrap();
    let z_hat = enc_next.sample_reparam(&e1).unwrap();
    let q = model.backward_encode(&triple.x_t, &z_hat).unwrap();
    let enc = model.encode(&triple.x_t).unwrap();
    assert!((terms.kl - kl_diag(&q, &enc).unwrap()).abs() < 1e-12);
    assert!((terms.entropy - entropy(&enc_next)).abs() < 1e-12);
    let plain = bound_terms(&model, &triple, &e1, &e2).unwrap();
    assert!((plain.logp - terms.logp).abs() < 1e-10);
}

#[test]
fn single_sample_estimate_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let model = tiny_model(12);
    let triple = tiny_triple(&mut rng);
    let sample = |rng: &mut ChaCha8Rng| {
        let (e1, e2) = (normals(rng, 2), normals(rng, 2));
        -bound_terms(&model, &triple, &e1, &e2).unwrap().bound(LossWeights::UNIT)
    };
    let n = 10_000;
    let single: Vec<f64> = (0..n).map(|_| sample(&mut rng)).collect();
    let many: Vec<f64> = (0..n / 50)
        .map(|_| (0..256).map(|_| sample(&mut rng)).sum::<f64>() / 256.0)
        .collect();
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
        (m, var / v.len() as f64)
    };
    let (m1, se1) = stats(&single);
    let (m2, se2) = stats(&many);
    let se = (se1 + se2).sqrt();
    assert!((m1 - m2).abs() < 3.0 * se, "{m1} vs {m2} (se {se})");
}

#[test]
fn short_planar_run_lowers_the_loss() {
    let data = generate_dataset(&EnvConfig::planar(0.0), 500, 8).unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        seed: 2,
        ..TrainConfig::default()
    };
    let (_, log) = train(&data, &cfg, |_, _| {}).unwrap();
    assert_eq!(log.len(), 20);
    assert!(log.iter().all(|m| m.mean_loss.is_finite()));
    assert!(log[19].mean_loss < log[0].mean_loss);
    assert_eq!(log[0].epoch, 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_stays_between_its_breakpoints(start in 0.1f64..20.0, end in 1usize..60, epoch in 0usize..100) {
        let s = LossSchedule::annealed(start, end);
        prop_assert!(s.validate().is_ok());
        let v = s.value_at(epoch);
        prop_assert!(v >= start.min(1.0) - 1e-12 && v <= start.max(1.0) + 1e-12);
        prop_assert_eq!(s.value_at(end + epoch), 1.0);
    }

    #[test]
    fn first_adam_step_is_bounded_by_the_learning_rate(
        theta in prop::collection::vec(-5.0f64..5.0, 1..20),
        grad in prop::collection::vec(-100.0f64..100.0, 20),
        lr in 1e-5f64..1e-1,
    ) {
        let mut t = Tensor::matrix(1, theta.len(), theta.clone());
        *t.grad_mut() = grad[..theta.len()].to_vec();
        let mut state = AdamState::default();
        let cfg = AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        adam_step(&mut [&mut t], &mut state, &cfg).unwrap();
        for (a, b) in t.data().iter().zip(&theta) {
            prop_assert!((a - b).abs() <= lr * (1.0 + 1e-9));
        }
    }
}
