//! One pass through the relationship attention head on three hand-made
//! embeddings, showing the attention matrix with and without a similarity
//! matrix and the gate that blends attention with the residual path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rbi::numcore::{Mode, Tape, Tensor};
use rbi::rra::{rra_forward, RraParams};

fn show(name: &str, t: &Tensor<f64>) {
    let cols = t.shape()[1];
    println!("{name}:");
    for row in t.data().chunks(cols) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:8.4}")).collect();
        println!("  {}", cells.join(" "));
    }
}

fn main() -> rbi::Result<()> {
    let n = Tensor::<f64>::from_f64(&[3, 4], &[1.0, 0.0, 0.5, 0.0, 0.9, 0.1, 0.4, 0.0, -1.0, 1.0, 0.0, 0.5])?;
    let mut params = RraParams::<f64>::init(4, 2, &mut ChaCha8Rng::seed_from_u64(3));

    // samples 0 and 1 are near-duplicates; sample 2 is different
    let s = Tensor::<f64>::from_f64(&[3, 3], &[16.0, 3.0, 0.5, 3.0, 16.0, 0.4, 0.5, 0.4, 16.0])?;
    for (label, s) in [("S = 0", Tensor::zeros(&[3, 3])), ("S = scaled similarity", s)] {
        let mut tape = Tape::new();
        let nv = tape.constant(n.clone());
        let sv = tape.constant(s);
        let vars = params.bind(&mut tape);
        let out = rra_forward(&mut tape, nv, sv, &mut params, &vars, Mode::Eval)?;
        println!("--- {label}");
        show("A (columns sum to 1)", tape.value(out.a));
        show("beta (gate)", tape.value(out.beta));
        show("logits", tape.value(out.logits));
    }
    Ok(())
}
