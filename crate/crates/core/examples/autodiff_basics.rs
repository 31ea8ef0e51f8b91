//! The tape in miniature: record a small computation, differentiate it and
//! compare against central finite differences.

use rbi::numcore::{finite_difference_gradient, max_relative_error, Tape, Tensor};

fn main() -> rbi::Result<()> {
    let x = Tensor::<f64>::from_f64(&[2, 3], &[0.5, -1.0, 2.0, 0.0, 1.5, -0.5])?;
    let w = Tensor::<f64>::from_f64(&[3, 2], &[0.1, 0.2, -0.3, 0.4, 0.5, -0.6])?;

    // loss = cross_entropy(sigmoid(x w), [0, 1])
    let loss_of = |x: &Tensor<f64>| -> f64 {
        let mut tape = Tape::new();
        let xv = tape.param(x.clone());
        let wv = tape.constant(w.clone());
        let h = tape.matmul(xv, wv).unwrap();
        let s = tape.sigmoid(h);
        let loss = tape.cross_entropy(s, &[0, 1]).unwrap();
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let wv = tape.constant(w.clone());
    let h = tape.matmul(xv, wv)?;
    let s = tape.sigmoid(h);
    let loss = tape.cross_entropy(s, &[0, 1])?;
    let grads = tape.backward(loss)?;

    let analytic = grads.get(xv);
    let numeric = finite_difference_gradient(loss_of, &x, 1e-5);
    println!("loss      {:.6}", tape.value(loss).item());
    println!("analytic  {:?}", analytic.data());
    println!("numeric   {:?}", numeric.data());
    println!("max relative error {:.2e}", max_relative_error(&analytic, &numeric, 1e-8));
    println!("constant w reached by backward: {}", grads.reached(wv));
    Ok(())
}
