mod common;

use common::{finite_difference, gradcheck_config, rel_err, MicroInstance};
use xmlr::trainkit::{batch_loss, combined_loss, SvmrLossKind, TrainConfig};

fn check(cfg: &TrainConfig, seed: u64) {
    let inst = MicroInstance::new(seed);
    let batch = inst.batch();
    let (loss, tape) = combined_loss(&batch, &inst.params, cfg).unwrap();
    let again = batch_loss(&batch, &inst.params, cfg).unwrap();
    assert_eq!(loss, again);
    let fd = finite_difference(&batch, &inst.params, cfg, 1e-5);
    let mut worst = 0.0f64;
    for (t, num) in tape.tensors().iter().zip(&fd) {
        let err = t.data.iter().zip(num).map(|(a, n)| rel_err(*a, *n, 1e-6)).fold(0.0, f64::max);
        println!("{:<28} max rel err {err:.2e}", t.name);
        assert!(err < 1e-4, "{} rel err {err}", t.name);
        worst = worst.max(err);
    }
    println!("worst {worst:.2e}");
}

#[test]
fn every_tensor_matches_finite_differences() {
    check(&gradcheck_config(), 1);
}

#[test]
fn bce_variant_matches_finite_differences() {
    check(&TrainConfig { svmr_loss: SvmrLossKind::ClipBce, ..gradcheck_config() }, 2);
}

#[test]
fn inactive_hinges_and_small_lambda() {
    check(&TrainConfig { margin_delta: 0.1, ..TrainConfig::default() }, 3);
}

#[test]
fn span_terms_do_not_reach_vr_only_paths() {
    let inst = MicroInstance::new(4);
    let cfg = TrainConfig { lambda_svmr: 0.0, ..gradcheck_config() };
    let (_, tape) = combined_loss(&inst.batch(), &inst.params, &cfg).unwrap();
    for t in tape.tensors() {
        let zero = t.data.iter().all(|x| *x == 0.0);
        if t.name.starts_with("cross_") || t.name.starts_with("k_") {
            assert!(zero, "{} should be exactly zero", t.name);
        } else if !t.name.starts_with("pos_enc") {
            assert!(!zero, "{} should receive gradient", t.name);
        }
    }
}
