//! Trains the RBI head (or the affine baseline) on the synthetic fine-grained
//! dataset and prints per-epoch train/test metrics.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [key=value ...]
//! cargo run --release --example train_synthetic -- head=baseline epochs=5
//! ```
//!
//! Keys are the same as in a config file (`lr`, `epochs`, `seed`, `head`,
//! `rpe_scale`, ...).

use rbi::data::synth::{synth_generate, SynthConfig};
use rbi::train::{fit, TrainState};

fn main() -> rbi::Result<()> {
    let mut cfg = rbi::evalx::desk_config();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("arguments look like key=value");
        cfg.set(k, v).map_err(|msg| rbi::Error::Config { line: 0, msg })?;
    }
    let (train, test) = synth_generate(&SynthConfig::new(
        42,
        cfg.classes,
        cfg.per_class_train,
        cfg.per_class_test,
        cfg.image_size,
    ))?;
    println!("{} train / {} test images, head {}", train.len(), test.len(), cfg.head.name());

    let mut state = TrainState::from_config(&cfg);
    fit(&mut state, &train, Some(&test), &cfg, None, |r| {
        let test = r.test.expect("test split given");
        println!(
            "epoch {:>2}  train loss {:.4} acc {:.3}  test loss {:.4} acc {:.3}  ({:.1}s)",
            r.train.epoch, r.train.loss, r.train.accuracy, test.loss, test.accuracy, r.train.wall_seconds
        );
    })?;
    Ok(())
}
