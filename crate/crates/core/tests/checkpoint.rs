//! Checkpoint files: exact round trips and rejection of damaged or
//! mismatched inputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vgp::grapher::{backbone_forward, BackboneParams, ModelConfig};
use vgp::model::network_features;
use vgp::prompts::{PromptConfig, PromptParams};
use vgp::tensor::{io, Tensor};
use vgp::Error;

fn small() -> ModelConfig {
    ModelConfig { image_h: 8, image_w: 8, d: 8, d_ff: 16, blocks: 2, k: 3, ..ModelConfig::default() }
}

#[test]
fn backbone_and_prompts_reload_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let bb = BackboneParams::init(small(), &mut rng).unwrap();
    let p = PromptParams::init(PromptConfig { m: 2, r: 2, ..PromptConfig::default() }, 8, 2, &mut rng).unwrap();
    bb.save(tmp.path().join("bb")).unwrap();
    p.save(tmp.path().join("p")).unwrap();
    let bb2 = BackboneParams::load(tmp.path().join("bb")).unwrap();
    let p2 = PromptParams::load(tmp.path().join("p"), &bb2).unwrap();
    let img = Tensor::randn([8, 8, 3], 1.0, &mut rng);
    assert_eq!(backbone_forward(&img, &bb).unwrap(), backbone_forward(&img, &bb2).unwrap());
    assert_eq!(network_features(&img, &bb, Some(&p)).unwrap(), network_features(&img, &bb2, Some(&p2)).unwrap());
}

#[test]
fn prompts_for_another_backbone_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = PromptParams::init(PromptConfig { r: 2, ..PromptConfig::default() }, 8, 2, &mut rng).unwrap();
    p.save(tmp.path()).unwrap();
    let other = BackboneParams::init(ModelConfig { blocks: 3, ..small() }, &mut rng).unwrap();
    assert!(matches!(PromptParams::load(tmp.path(), &other), Err(Error::Checkpoint(_))));
}

#[test]
fn damaged_tensor_files_are_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("t.vgpt");
    io::write(&path, &Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap()).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    assert!(io::read(&path).is_err());
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    std::fs::write(&path, &bad_magic).unwrap();
    assert!(io::read(&path).is_err());
    assert!(io::read(tmp.path().join("absent.vgpt")).is_err());

    let bb_dir = tmp.path().join("bb");
    BackboneParams::init(small(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap().save(&bb_dir).unwrap();
    std::fs::write(bb_dir.join("block0_w1.vgpt"), &bytes).unwrap();
    assert!(BackboneParams::load(&bb_dir).is_err());
}
