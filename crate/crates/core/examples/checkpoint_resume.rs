//! Training three epochs straight equals training two, saving, loading and
//! training the third: parameters, optimizer moments and the step counter
//! all survive the round trip, and epoch seeds depend only on the epoch.

use rbi::data::synth::{synth_generate, SynthConfig};
use rbi::evalx::desk_config;
use rbi::train::{checkpoint_load, checkpoint_save, fit, TrainState};

fn main() -> rbi::Result<()> {
    let mut cfg = desk_config();
    cfg.embed_dim = 16;
    cfg.batch_size = 8;
    let (train, _) = synth_generate(&SynthConfig::new(42, 4, 8, 0, 16))?;

    cfg.epochs = 3;
    let mut straight = TrainState::from_config(&cfg);
    fit(&mut straight, &train, None, &cfg, None, |_| {})?;

    cfg.epochs = 2;
    let mut first = TrainState::from_config(&cfg);
    fit(&mut first, &train, None, &cfg, None, |_| {})?;
    let dir = tempfile_dir();
    checkpoint_save(&first, &dir)?;
    let mut resumed = checkpoint_load(&dir)?;
    cfg.epochs = 3;
    fit(&mut resumed, &train, None, &cfg, None, |r| println!("resumed epoch {}", r.train.epoch))?;

    println!("bit-identical after resume: {}", resumed == straight);
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    std::env::temp_dir().join(format!("rbi-ckpt-{}", std::process::id()))
}
