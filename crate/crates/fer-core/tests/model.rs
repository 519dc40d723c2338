//! Model construction, forward contract and checkpoint format tests.

use std::fs;

use fer_core::error::Error;
use fer_core::model::{
    load_checkpoint, save_checkpoint, Mode, ModelConfig, ResEmoteNet, CHECKPOINT_MAGIC,
};
use fer_core::ops;
use fer_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_batch(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Tensor {
    let data = (0..n * 3 * size * size).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(vec![n, 3, size, size], data).unwrap()
}

fn params_of(model: &mut ResEmoteNet) -> Vec<(String, Vec<f32>)> {
    let mut out = Vec::new();
    model.visit_parameters(|p| out.push((p.name.clone(), p.value.data().to_vec())));
    out
}

#[test]
fn build_is_deterministic_in_the_seed() {
    let mut a = ResEmoteNet::build(ModelConfig::tiny(3)).unwrap();
    let mut b = ResEmoteNet::build(ModelConfig::tiny(3)).unwrap();
    let mut c = ResEmoteNet::build(ModelConfig::tiny(4)).unwrap();
    assert_eq!(params_of(&mut a), params_of(&mut b));
    assert_ne!(params_of(&mut a), params_of(&mut c));
}

#[test]
fn forward_emits_one_logit_row_per_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = ResEmoteNet::build(ModelConfig::tiny(1)).unwrap();
    for n in [1, 2, 5] {
        let logits = model.forward(&rand_batch(&mut rng, n, 16)).unwrap();
        assert_eq!(logits.shape(), [n, 7]);
        assert!(logits.is_finite());
    }
}

#[test]
fn forward_rejects_wrong_input_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = ResEmoteNet::build(ModelConfig::tiny(1)).unwrap();
    let err = model.forward(&rand_batch(&mut rng, 2, 32)).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { .. }));
}

#[test]
fn config_validation_rejects_bad_geometry() {
    let mut cfg = ModelConfig::tiny(0);
    cfg.input_size = (18, 18); // not divisible by 2^2
    assert!(cfg.validate().is_err());

    let mut cfg = ModelConfig::tiny(0);
    cfg.se_reduction = 3; // does not divide 8
    assert!(cfg.validate().is_err());

    let mut cfg = ModelConfig::tiny(0);
    cfg.num_classes = 1;
    assert!(cfg.validate().is_err());

    assert!(ModelConfig::tiny(0).validate().is_ok());
    assert!(ModelConfig::default().validate().is_ok());
}

#[test]
fn eval_mode_forward_does_not_touch_running_stats() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut model = ResEmoteNet::build(ModelConfig::tiny(7)).unwrap();
    let batch = rand_batch(&mut rng, 3, 16);

    // one train step moves the running stats off their init
    model.set_mode(Mode::Train);
    model.forward(&batch).unwrap();

    let mut before = Vec::new();
    model.visit_running_stats(|name, m, v| before.push((name, m.clone(), v.clone())));
    assert!(before.iter().any(|(_, m, _)| m.iter().any(|&x| x != 0.0)));

    model.set_mode(Mode::Eval);
    model.forward(&batch).unwrap();
    let mut after = Vec::new();
    model.visit_running_stats(|name, m, v| after.push((name, m.clone(), v.clone())));
    assert_eq!(before, after);
}

#[test]
fn se_gate_weights_stay_in_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut model = ResEmoteNet::build(ModelConfig::tiny(9)).unwrap();
    // features at the SE input have 8 channels in the tiny config
    let features = Tensor::new(
        vec![2, 8, 4, 4],
        (0..2 * 8 * 16).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    )
    .unwrap();
    let (_, weights) = model.se_block().forward(&features, false).unwrap();
    assert_eq!(weights.shape(), [2, 8, 1, 1]);
    for &g in weights.data() {
        assert!(g > 0.0 && g < 1.0, "gate {g} outside (0, 1)");
    }
}

#[test]
fn backward_accumulates_nonzero_grads_everywhere() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut model = ResEmoteNet::build(ModelConfig::tiny(21)).unwrap();
    let batch = rand_batch(&mut rng, 4, 16);
    let labels = vec![0, 2, 4, 6];
    model.zero_grad();
    let logits = model.forward(&batch).unwrap();
    let (_, probs) = ops::softmax_cross_entropy(&logits, &labels).unwrap();
    let grad = ops::softmax_cross_entropy_backward(&probs, &labels).unwrap();
    model.backward(&grad).unwrap();
    model.visit_parameters(|p| {
        let any = p.grad.data().iter().any(|&g| g != 0.0);
        assert!(any, "parameter {} received a zero gradient", p.name);
    });
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut model = ResEmoteNet::build(ModelConfig::tiny(31)).unwrap();
    let batch = rand_batch(&mut rng, 2, 16);

    // move the running stats away from init so they round-trip nontrivially
    model.set_mode(Mode::Train);
    model.forward(&batch).unwrap();
    model.set_mode(Mode::Eval);
    let before = model.forward(&batch).unwrap();

    save_checkpoint(&mut model, &path).unwrap();
    let mut restored = load_checkpoint(&path, ModelConfig::tiny(999)).unwrap();
    assert_eq!(restored.mode(), Mode::Eval);
    let after = restored.forward(&batch).unwrap();

    let before_bits: Vec<u32> = before.data().iter().map(|v| v.to_bits()).collect();
    let after_bits: Vec<u32> = after.data().iter().map(|v| v.to_bits()).collect();
    assert_eq!(before_bits, after_bits);
    assert_eq!(params_of(&mut model), params_of(&mut restored));
}

#[test]
fn checkpoint_save_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    let mut model = ResEmoteNet::build(ModelConfig::tiny(5)).unwrap();
    save_checkpoint(&mut model, &a).unwrap();
    save_checkpoint(&mut model, &b).unwrap();
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);
}

#[test]
fn truncated_checkpoint_reports_byte_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut model = ResEmoteNet::build(ModelConfig::tiny(5)).unwrap();
    save_checkpoint(&mut model, &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    let cut = bytes.len() / 2;
    fs::write(&path, &bytes[..cut]).unwrap();
    match load_checkpoint(&path, ModelConfig::tiny(5)).unwrap_err() {
        Error::CheckpointTruncated(pos) => assert!(pos as usize <= cut),
        other => panic!("expected truncation error, got {other}"),
    }
}

#[test]
fn corrupt_magic_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut model = ResEmoteNet::build(ModelConfig::tiny(5)).unwrap();
    save_checkpoint(&mut model, &path).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] = b'X';
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(
        load_checkpoint(&path, ModelConfig::tiny(5)).unwrap_err(),
        Error::CheckpointCorrupt(_)
    ));
}

#[test]
fn checkpoint_config_mismatch_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut model = ResEmoteNet::build(ModelConfig::tiny(5)).unwrap();
    save_checkpoint(&mut model, &path).unwrap();

    let mut other = ModelConfig::tiny(5);
    other.classifier_hidden = vec![32];
    let err = load_checkpoint(&path, other).unwrap_err();
    assert!(
        matches!(err, Error::CheckpointShape { .. } | Error::CheckpointCorrupt(_)),
        "unexpected error {err}"
    );
}
