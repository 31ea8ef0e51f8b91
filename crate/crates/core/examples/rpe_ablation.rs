//! Trains twin models with the relationship encoding on and off (same seed,
//! so same initial weights and batches) and compares their similarity and
//! attention matrices on a probe batch. Heatmaps go to the directory given.
//!
//! ```text
//! cargo run --release --example rpe_ablation -- [out_dir] [epochs]
//! ```

use std::path::PathBuf;

use rbi::data::synth::{synth_generate, SynthConfig};
use rbi::evalx::{desk_config, rpe_ablation};

fn main() -> rbi::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map_or_else(|| std::env::temp_dir().join("rbi-ablation"), PathBuf::from);
    let mut cfg = desk_config();
    cfg.epochs = args.next().map_or(5, |e| e.parse().expect("epochs is a number"));
    cfg.batch_size = 16;
    let (train, test) = synth_generate(&SynthConfig::new(42, 8, 40, 10, 32))?;
    let report = rpe_ablation(&cfg, &train, &test, 0, Some(&out))?;
    print!("{}", report.summary());
    println!("heatmaps in {}", out.display());
    Ok(())
}
