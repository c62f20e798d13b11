// Trains a small contrastive alignment model on synthetic paired
// embeddings, then repeats the run with shuffled pairs as a control.

use avalign::clip::{train_clip, TrainConfig};
use avalign::embedding::Split;
use avalign::eval::{retrieval_metrics, Direction};
use avalign::synth::{generate, shuffle_negatives, SyntheticSpec};

pub fn run_example() -> avalign::Result<()> {
    let spec = SyntheticSpec {
        n_pairs: 600,
        audio_dim: 48,
        video_dim: 40,
        latent_dim: 8,
        seed: 1,
        test_fraction: 0.2,
        ..Default::default()
    };
    let data = generate(&spec)?;
    let cfg = TrainConfig {
        batch_size: 64,
        epochs: 30,
        lr: 1e-3,
        n_layers: 3,
        hidden_dim: 64,
        shared_dim: 32,
        ..TrainConfig::default()
    };

    for (label, train) in [("aligned", data.clone()), ("shuffled", shuffle_negatives(&data, 9)?)] {
        let (model, history) = train_clip(&train, &cfg)?;
        let means = history.epoch_means();
        let (report, _) = retrieval_metrics(&model, &data.subset(Split::Test), &[1, 5], Direction::AudioToVideo)?;
        println!(
            "{label:>8}: loss {:.3} -> {:.3}, test recall@1 {:.2}, recall@5 {:.2}, median rank {}",
            means[0],
            means[means.len() - 1],
            report.recall_at[&1],
            report.recall_at[&5],
            report.median_rank
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> avalign::Result<()> {
    run_example()
}
