//! Trains the head on embeddings stored on disk instead of a live backbone:
//! a briefly trained tiny CNN exports an embedding table, which then backs a
//! fresh RBI head (the similarity matrix still comes from the pixels).

use rbi::backbone::{FeatureExtractor, Precomputed};
use rbi::data::synth::{synth_generate, SynthConfig};
use rbi::evalx::desk_config;
use rbi::model::Model;
use rbi::numcore::{Mode, Tape, Tensor};
use rbi::train::trainer::configure;
use rbi::train::{fit, TrainState};

fn main() -> rbi::Result<()> {
    let mut cfg = desk_config();
    cfg.epochs = 3;
    let (train, test) = synth_generate(&SynthConfig::new(42, 8, 40, 20, 32))?;
    let mut cnn = TrainState::from_config(&cfg);
    fit(&mut cnn, &train, None, &cfg, None, |_| {})?;

    let (mut values, mut ids) = (Vec::new(), Vec::new());
    for ds in [&train, &test] {
        let batch = ds.batch(&(0..ds.len()).collect::<Vec<_>>())?;
        let mut tape = Tape::new();
        let (n, _) = cnn.model.embed(&mut tape, &batch.images, &batch.ids, Mode::Eval)?;
        values.extend(tape.value(n).data().iter().map(|&v| v as f64));
        ids.extend(batch.ids);
    }
    let table = Precomputed::new(Tensor::new(&[ids.len(), cfg.embed_dim], values)?, &ids)?;
    let dir = std::env::temp_dir().join(format!("rbi-embeddings-{}", std::process::id()));
    table.export(&dir)?;
    let table = Precomputed::load_dir(&dir)?;
    println!("{} embeddings of width {} in {}", table.len(), table.embed_dim(), dir.display());

    cfg.epochs = 10;
    let mut model = Model::with_extractor(FeatureExtractor::Precomputed(table), cfg.head, cfg.classes, cfg.seed);
    configure(&mut model, &cfg);
    let mut state = TrainState::new(model);
    fit(&mut state, &train, Some(&test), &cfg, None, |r| {
        let t = r.test.expect("test split given");
        println!("epoch {:>2}  train acc {:.3}  test acc {:.3}", r.train.epoch, r.train.accuracy, t.accuracy)
    })?;
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
