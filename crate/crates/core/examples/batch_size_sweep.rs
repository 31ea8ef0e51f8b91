//! Trains the desk-scale RBI model once, then evaluates the frozen weights
//! at several batch sizes. Predictions depend on the other members of the
//! batch, so accuracy can shift with batch size; the spread measures how much.
//!
//! ```text
//! cargo run --release --example batch_size_sweep -- [key=value ...]
//! ```

use std::time::Instant;

use rbi::data::synth::{synth_generate, SynthConfig};
use rbi::evalx::{batch_size_sweep, desk_config};
use rbi::train::trainer::eval_seed;
use rbi::train::{fit, TrainState};

fn main() -> rbi::Result<()> {
    let mut cfg = desk_config();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("arguments look like key=value");
        cfg.set(k, v).map_err(|msg| rbi::Error::Config { line: 0, msg })?;
    }
    let (train, test) = synth_generate(&SynthConfig::new(42, 8, 100, 50, 32))?;
    let sizes = [1, 2, 4, 8, 16, 32];
    let every: usize = std::env::var("SWEEP_EVERY").ok().and_then(|v| v.parse().ok()).unwrap_or(cfg.epochs);
    let mut state = TrainState::from_config(&cfg);
    let total = cfg.epochs;
    for stop in (every..=total).step_by(every.max(1)) {
        let mut leg = cfg.clone();
        leg.epochs = stop;
        fit(&mut state, &train, None, &leg, None, |r| {
            println!("epoch {:>2}  train acc {:.3}", r.train.epoch, r.train.accuracy)
        })?;
        let start = Instant::now();
        let report = batch_size_sweep(&mut state.model, &test, &sizes, eval_seed(&cfg), &cfg.rpe)?;
        let accs: Vec<String> = report.rows.iter().map(|r| format!("{:.3}", r.accuracy)).collect();
        println!(
            "after epoch {stop}: accuracy by batch size {sizes:?} = [{}], spread {:.2} points ({:.1}s)",
            accs.join(", "),
            100.0 * report.spread,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
