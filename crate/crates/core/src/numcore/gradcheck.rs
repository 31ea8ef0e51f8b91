use crate::numcore::tensor::Tensor;

/// Default central-difference step for f64 checks.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every element of `x`.
pub fn finite_difference_gradient<F>(f: F, x: &Tensor<f64>, h: f64) -> Tensor<f64>
where
    F: Fn(&Tensor<f64>) -> f64,
{
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    Tensor::new(x.shape(), grad).expect("same element count")
}

/// Largest `|a - n| / max(|a|, |n|)` over entries where either magnitude
/// exceeds `floor`. Entries below the floor are skipped.
pub fn max_relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>, floor: f64) -> f64 {
    worst_entry(analytic, numeric, floor).map_or(0.0, |w| w.rel_error)
}

/// The entry behind [`max_relative_error`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorstEntry {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

pub fn worst_entry(analytic: &Tensor<f64>, numeric: &Tensor<f64>, floor: f64) -> Option<WorstEntry> {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .enumerate()
        .filter(|(_, (a, n))| a.abs() > floor || n.abs() > floor)
        .map(|(index, (&a, &n))| WorstEntry {
            index,
            analytic: a,
            numeric: n,
            rel_error: (a - n).abs() / a.abs().max(n.abs()),
        })
        .fold(None, |best: Option<WorstEntry>, e| match best {
            Some(b) if b.rel_error >= e.rel_error => Some(b),
            _ => Some(e),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_sum_is_ones() {
        let x = Tensor::from_f64(&[2, 2], &[0.3, -1.0, 4.0, 2.5]).unwrap();
        let g = finite_difference_gradient(|t| t.data().iter().sum(), &x, DEFAULT_STEP);
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_of_half_square_norm() {
        let x = Tensor::from_f64(&[2], &[3.0, 4.0]).unwrap();
        let g = finite_difference_gradient(
            |t| 0.5 * t.data().iter().map(|v| v * v).sum::<f64>(),
            &x,
            DEFAULT_STEP,
        );
        assert!((g.data()[0] - 3.0).abs() < 1e-8);
        assert!((g.data()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_skips_tiny_entries() {
        let a = Tensor::from_f64(&[3], &[1.0, 1e-12, 2.0]).unwrap();
        let n = Tensor::from_f64(&[3], &[1.0, 5e-12, 2.002]).unwrap();
        let e = max_relative_error(&a, &n, 1e-8);
        assert!((e - 0.002 / 2.002).abs() < 1e-12);
    }
}
