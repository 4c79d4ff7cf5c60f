//! Train the region captioner on a small synthetic corpus and decode a few
//! held-out scenes with beam search. Captions follow the template grammar
//! ("a room with a bed and a lamp near a mirror"), with objects ordered by
//! visible area.
//!
//! Run with: cargo run --release --example caption_training

use curio::captioner::{
    generate_synthetic_dataset, train_ce, CaptionModel, CaptionerConfig, Vocabulary, BEAM_WIDTH,
};
use curio::tensor::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = Vocabulary::standard();
    println!("vocabulary: {} tokens", vocab.len());

    let data = generate_synthetic_dataset(&vocab, &[11, 22, 33, 44], 1200, 9)?;
    let (train, holdout) = data.split_at(1000);

    let config = CaptionerConfig {
        layers: 1,
        ..CaptionerConfig::default()
    };
    let model = CaptionModel::new(config, vocab.len())?;
    let mut store: ParamStore<f32> = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    model.register(&mut store, &mut rng)?;

    let report = train_ce(&model, &mut store, train, holdout, 3, 13)?;
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        println!("epoch {epoch}: mean token loss {loss:.4}");
    }
    println!("held-out teacher-forced accuracy: {:.3}", report.holdout_accuracy);

    for ex in &holdout[..5] {
        let caption = model.beam_search(&store, &vocab, &ex.regions, BEAM_WIDTH)?;
        println!(
            "truth: {:40} beam: {} (logprob {:.2})",
            vocab.decode(&ex.tokens),
            caption.text,
            caption.log_prob
        );
    }
    Ok(())
}
