// Full pipeline: align audio and video, fit a prior from projected audio
// to video embeddings, then turn unseen audio into goal embeddings and
// rank them against the true videos.

use avalign::clip::{train_clip, TrainConfig};
use avalign::embedding::{Modality, Split};
use avalign::eval::retrieval_from_embeddings;
use avalign::prior::{map_audio_to_goal, train_prior, PriorConfig, PriorTrainPairs};
use avalign::synth::{generate, SyntheticSpec};

pub fn run_example() -> avalign::Result<()> {
    let data = generate(&SyntheticSpec {
        n_pairs: 500,
        audio_dim: 40,
        video_dim: 32,
        latent_dim: 6,
        seed: 3,
        test_fraction: 0.2,
        ..Default::default()
    })?;
    let clip_cfg = TrainConfig {
        batch_size: 50,
        epochs: 25,
        n_layers: 3,
        hidden_dim: 64,
        shared_dim: 24,
        ..TrainConfig::default()
    };
    let (clip, _) = train_clip(&data, &clip_cfg)?;

    let train = data.subset(Split::Train);
    let pairs = PriorTrainPairs::new(
        clip.embed_audio(train.audio())?,
        train.video().clone().with_modality(Modality::Goal),
    )?;
    let prior_cfg = PriorConfig {
        batch_size: 50,
        epochs: 100,
        latent_dim: 8,
        hidden_dim: 64,
        // a small run needs a firmer pull toward the prior than the default
        kl_beta: 0.05,
        ..Default::default()
    };
    let (prior, _) = train_prior(&pairs, &prior_cfg)?;

    let test = data.subset(Split::Test);
    let goals = map_audio_to_goal(&clip, &prior, test.audio().matrix(), 0)?;
    let (report, _) = retrieval_from_embeddings(goals.matrix(), test.video().matrix(), &[1, 5])?;
    println!(
        "{} unseen clips: goal -> video recall@1 {:.2}, recall@5 {:.2} (chance {:.3})",
        report.n_queries,
        report.recall_at[&1],
        report.recall_at[&5],
        1.0 / report.n_queries as f64
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> avalign::Result<()> {
    run_example()
}
