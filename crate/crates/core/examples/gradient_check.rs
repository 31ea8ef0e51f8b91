//! Checks every parameter gradient of the full model against central finite
//! differences (f64, with a double-double pass for entries near the floor).
//!
//! ```text
//! cargo run --example gradient_check -- [batch] [embed_dim] [classes] [seed]
//! ```

use rbi::train::{model_gradcheck, GradcheckSpec};

fn main() -> rbi::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let get = |i: usize, default: u64| args.get(i).copied().unwrap_or(default);
    let spec = GradcheckSpec::new(get(0, 4) as usize, get(1, 8) as usize, get(2, 5) as usize, get(3, 1));
    let start = std::time::Instant::now();
    let report = model_gradcheck(&spec)?;
    for t in &report.tensors {
        print!(
            "{:<32} {:>6} entries {:>5} refined  max rel err {:.3e}",
            t.name, t.entries, t.refined, t.max_rel_error
        );
        match t.worst {
            Some(w) => println!("  (analytic {:.6e}, numeric {:.6e})", w.analytic, w.numeric),
            None => println!(),
        }
    }
    println!(
        "checked {} entries ({} refined) in {:.1}s: max relative error {:.3e} \
         (plain central difference {:.3e}) -> {}",
        report.entries(),
        report.refined(),
        start.elapsed().as_secs_f64(),
        report.max_rel_error,
        report.plain_max_rel_error,
        if report.passed() { "PASS" } else { "FAIL" }
    );
    Ok(())
}
