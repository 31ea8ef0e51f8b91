//! Baseline affine head against the RBI head over three seeds on a reduced
//! synthetic dataset.
//!
//! ```text
//! cargo run --release --example compare_heads -- [epochs]
//! ```

use rbi::data::synth::{synth_generate, SynthConfig};
use rbi::evalx::{compare_baseline, desk_config};

fn main() -> rbi::Result<()> {
    let mut cfg = desk_config();
    cfg.epochs = std::env::args().nth(1).map_or(4, |e| e.parse().expect("epochs is a number"));
    let (train, test) = synth_generate(&SynthConfig::new(42, 8, 40, 20, 32))?;
    let report = compare_baseline(&cfg, &train, &test, &[0, 1, 2], |r, _| {
        println!("seed {}  {:<8}  {:.4}", r.seed, r.head.name(), r.accuracy)
    })?;
    print!("{}", report.summary());
    Ok(())
}
