//! Forward output pinned against a recorded tensor.
//!
//! Re-record after an intentional numerical change with `PROMPTMATTE_RECORD_GOLDEN=1`.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use promptmatte::data::{make_scene_seeded, SceneConfig};
use promptmatte::model::{predict, ModelConfig, Sample};
use promptmatte::Tensor;

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_forward.txt")
}

fn current_output() -> Tensor<f32> {
    let cfg = ModelConfig::default();
    let mut params = cfg.init_params(0).unwrap();
    // zero-initialized branches would make the output independent of most of the network
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (_, t) in params.iter_mut() {
        if t.data().iter().all(|&v| v == 0.0) {
            *t = Tensor::from_fn(t.shape(), |_| rng.random_range(-0.05f32..0.05));
        }
    }
    let scene = make_scene_seeded(2, &SceneConfig { height: 32, width: 32, ..Default::default() }).unwrap();
    let sample = Sample { image: scene.image.cast(), prompt: scene.prompt, opacity: scene.opacity };
    let batch = cfg.prepare(&[sample]).unwrap();
    predict(&params, &cfg, &batch).unwrap().0
}

fn encode(t: &Tensor<f32>) -> String {
    let mut s = format!("{:?}\n", t.shape());
    for row in t.data().chunks(8) {
        s.push_str(&row.iter().map(|v| format!("{:08x}", v.to_bits())).collect::<Vec<_>>().join(" "));
        s.push('\n');
    }
    s
}

#[test]
fn forward_matches_recorded_golden_bitwise() {
    let out = current_output();
    assert_eq!(out.shape(), &[1, 1, 32, 32]);
    let text = encode(&out);
    if std::env::var_os("PROMPTMATTE_RECORD_GOLDEN").is_some() {
        std::fs::write(golden_path(), &text).unwrap();
        return;
    }
    let golden = std::fs::read_to_string(golden_path()).expect("golden file recorded");
    assert!(golden == text, "forward output drifted from the recorded golden tensor");
    assert_eq!(encode(&current_output()), text);
}
