// Saves models as checkpoints, inspects the header without loading the
// weights and restores them exactly.

use avalign::checkpoint::Checkpoint;
use avalign::clip::{ClipAlignModel, TrainConfig};
use avalign::prior::CvaePrior;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> avalign::Result<()> {
    let dir = std::env::temp_dir().join(format!("avalign-checkpoints-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| avalign::Error::io(&dir, e))?;

    let cfg = TrainConfig { n_layers: 2, hidden_dim: 16, shared_dim: 8, ..TrainConfig::default() };
    let clip = ClipAlignModel::<f32>::new(12, 10, &cfg)?;
    let path = dir.join("clip.ckpt");
    clip.to_checkpoint(0)?.write(&path)?;

    let header = Checkpoint::read_header(&path)?;
    println!("kind {}, {} tensors", header.kind, header.tensors.len());
    for t in header.tensors.iter().take(3) {
        println!("  {} {}x{}", t.name, t.rows, t.cols);
    }
    let restored = ClipAlignModel::<f32>::from_checkpoint(&Checkpoint::read(&path)?)?;
    assert_eq!(restored, clip);

    let prior = CvaePrior::<f32>::new(8, 10, 4, 16, &mut ChaCha8Rng::seed_from_u64(0))?;
    let path = dir.join("prior.ckpt");
    prior.to_checkpoint(0)?.write(&path)?;
    let arch = Checkpoint::read_header(&path)?.architecture;
    println!("prior encoder: {}", arch["encoder"]);
    assert_eq!(CvaePrior::<f32>::from_checkpoint(&Checkpoint::read(&path)?)?, prior);

    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}

#[allow(dead_code)]
fn main() -> avalign::Result<()> {
    run_example()
}
