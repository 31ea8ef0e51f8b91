//! Randomized invariants: operator identities, gradients against finite
//! differences, storage round trips and the symmetry properties of the
//! similarity encoder and the attention head.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rbi::data::rbt::{self, AnyTensor};
use rbi::model::{HeadKind, Model};
use rbi::numcore::{finite_difference_gradient, Mode, NormRef, Tape, Tensor, Var, DEFAULT_STEP};
use rbi::rpe::{psnr_similarity, similarity_matrix};
use rbi::rra::{depth_sum, dup_horizontal, dup_vertical};

fn random(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// `Σ out ⊙ R` for a fixed pseudo-random `R`, so every output entry
/// contributes a distinct weight to the gradient.
fn weighted_total(tape: &mut Tape<f64>, out: Var) -> Var {
    let shape = tape.shape(out).to_vec();
    let r = random(0xfeed, &shape, -1.0, 1.0);
    let r = tape.constant(r);
    let mut total = tape.mul(out, r).unwrap();
    while tape.value(total).rank() > 0 {
        total = tape.reduce_sum(total, 0).unwrap();
    }
    total
}

/// Compares the tape gradient of `build` at `x` with central differences;
/// returns the largest violation of `|a - n| <= 1e-6 + 1e-5 |a|` (≤ 0 is a pass).
fn grad_violation(x: &Tensor<f64>, build: impl Fn(&mut Tape<f64>, Var) -> Var) -> f64 {
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let out = build(&mut tape, xv);
    let loss = weighted_total(&mut tape, out);
    let analytic = tape.backward(loss).unwrap().get(xv);
    let numeric = finite_difference_gradient(
        |p| {
            let mut tape = Tape::new();
            let xv = tape.param(p.clone());
            let out = build(&mut tape, xv);
            let loss = weighted_total(&mut tape, out);
            tape.value(loss).item()
        },
        x,
        DEFAULT_STEP,
    );
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() - (1e-6 + 1e-5 * a.abs()))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn assert_grad(x: &Tensor<f64>, build: impl Fn(&mut Tape<f64>, Var) -> Var) -> Result<(), TestCaseError> {
    let v = grad_violation(x, build);
    prop_assert!(v <= 0.0, "gradient off by {v:e} beyond tolerance");
    Ok(())
}

fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (b, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(&[b, cout, ho, wo]);
    for n in 0..b {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.at(&[n, ci, iy as usize, ix as usize]) * w.at(&[co, ci, ky, kx]);
                                }
                            }
                        }
                    }
                    out.set(&[n, co, oy, ox], acc);
                }
            }
        }
    }
    out
}

fn images(seed: u64, b: usize, side: usize) -> Tensor<f32> {
    random(seed, &[b, 3, side, side], 0.0, 1.0).cast()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn depth_sum_of_duplicates_is_a_gram_product(seed: u64, b in 1usize..=8, d in 1usize..=16) {
        let x = random(seed, &[b, d], -2.0, 2.0);
        let y = random(seed ^ 1, &[b, d], -2.0, 2.0);
        let mut tape = Tape::new();
        let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
        let h = dup_horizontal(&mut tape, xv).unwrap();
        let v = dup_vertical(&mut tape, yv).unwrap();
        let p = tape.mul(h, v).unwrap();
        let got = depth_sum(&mut tape, p).unwrap();
        let yt = tape.constant(y.transpose2().unwrap());
        let want = tape.matmul(xv, yt).unwrap();
        prop_assert!(tape.value(got).max_abs_diff(tape.value(want)) < 1e-10);
    }

    #[test]
    fn softmax_slices_are_distributions(seed: u64, rows in 1usize..=8, cols in 1usize..=8, axis in 0usize..2, spread in 0.1f64..200.0) {
        let x = random(seed, &[rows, cols], -spread, spread);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = tape.softmax(xv, axis).unwrap();
        let y = tape.value(y);
        prop_assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let n_slices = if axis == 0 { cols } else { rows };
        for s in 0..n_slices {
            let total: f64 = if axis == 0 {
                (0..rows).map(|i| y.at(&[i, s])).sum()
            } else {
                (0..cols).map(|j| y.at(&[s, j])).sum()
            };
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rbt_round_trip_is_bit_exact(seed: u64, shape in prop::collection::vec(0usize..=4, 0..=4)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let cases = [
            AnyTensor::F32(Tensor::new(&shape, (0..n).map(|_| f32::from_bits(rng.gen())).collect()).unwrap()),
            AnyTensor::F64(Tensor::new(&shape, (0..n).map(|_| f64::from_bits(rng.gen())).collect()).unwrap()),
            AnyTensor::U8 { shape: shape.clone(), data: (0..n).map(|_| rng.gen()).collect() },
        ];
        for t in &cases {
            let bytes = rbt::encode(t);
            let back = rbt::decode(&bytes).unwrap();
            prop_assert_eq!(back.dtype(), t.dtype());
            prop_assert_eq!(back.shape(), t.shape());
            prop_assert_eq!(rbt::encode(&back), bytes);
        }
    }

    #[test]
    fn similarity_is_symmetric_and_diagonal_dominant(seed: u64, b in 1usize..=8, side in 2usize..=8) {
        let batch = random(seed, &[b, 3, side, side], 0.0, 1.0);
        let s = similarity_matrix(&batch, 1e-8, 1.0, false).unwrap().values;
        for i in 0..b {
            for j in 0..b {
                prop_assert_eq!(s.at(&[i, j]).to_bits(), s.at(&[j, i]).to_bits());
                if i != j {
                    prop_assert!(s.at(&[i, i]) > s.at(&[i, j]));
                }
            }
        }
    }

    #[test]
    fn similarity_falls_as_images_drift_apart(seed: u64, t1 in 1e-3f64..0.5, extra in 1e-3f64..0.5) {
        let base = random(seed, &[3, 6, 6], 0.0, 1.0);
        let dir = random(seed ^ 7, &[3, 6, 6], -1.0, 1.0);
        let moved = |t: f64| Tensor::new(base.shape(), base.data().iter().zip(dir.data()).map(|(x, d)| x + t * d).collect()).unwrap();
        let near = psnr_similarity(&base, &moved(t1), 1e-8, 1.0).unwrap();
        let far = psnr_similarity(&base, &moved(t1 + extra), 1e-8, 1.0).unwrap();
        prop_assert!(near > far);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn head_is_permutation_equivariant(seed: u64, b in 2usize..=6, perm_seed: u64) {
        let imgs = images(seed, b, 8);
        let ids: Vec<String> = (0..b).map(|i| format!("p{i}")).collect();
        let base = Model::<f64>::init(HeadKind::Rbi, 8, 4, seed);
        let logits = |imgs: &Tensor<f32>| {
            let s = similarity_matrix(imgs, 1e-8, 1.0, false).unwrap().scaled::<f64>(0.1);
            let mut model = base.clone();
            let mut tape = Tape::new();
            let fwd = model.forward(&mut tape, imgs, &ids, Some(&s), Mode::Train).unwrap();
            tape.value(fwd.logits).clone()
        };
        let mut perm: Vec<usize> = (0..b).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(perm_seed));
        let reference = logits(&imgs);
        let permuted = logits(&imgs.select_rows(&perm));
        prop_assert!(permuted.max_abs_diff(&reference.select_rows(&perm)) < 1e-9);
    }

    #[test]
    fn conv2d_matches_direct_loops(seed: u64, b in 1usize..=2, cin in 1usize..=3, cout in 1usize..=3,
                                   side in 3usize..=7, k in 1usize..=3, stride in 1usize..=2, pad in 0usize..=1) {
        let x = random(seed, &[b, cin, side, side], -1.0, 1.0);
        let w = random(seed ^ 3, &[cout, cin, k, k], -1.0, 1.0);
        let got = rbi::numcore::kernels::conv2d(&x, &w, stride, pad).unwrap();
        prop_assert!(got.max_abs_diff(&conv_oracle(&x, &w, stride, pad)) < 1e-12);
    }

    #[test]
    fn conv2d_gradients(seed: u64, cin in 1usize..=2, cout in 1usize..=2, k in 1usize..=3, stride in 1usize..=2, pad in 0usize..=1) {
        let x = random(seed, &[2, cin, 5, 5], -1.0, 1.0);
        let w = random(seed ^ 3, &[cout, cin, k, k], -1.0, 1.0);
        let (wc, xc) = (w.clone(), x.clone());
        assert_grad(&x, |t, xv| { let wv = t.constant(wc.clone()); t.conv2d(xv, wv, stride, pad).unwrap() })?;
        assert_grad(&w, |t, wv| { let xv = t.constant(xc.clone()); t.conv2d(xv, wv, stride, pad).unwrap() })?;
    }

    #[test]
    fn matmul_and_elementwise_gradients(seed: u64, m in 1usize..=4, k in 1usize..=4, n in 1usize..=4) {
        let a = random(seed, &[m, k], -1.0, 1.0);
        let b = random(seed ^ 5, &[k, n], -1.0, 1.0);
        let c = random(seed ^ 6, &[m, k], -1.0, 1.0);
        let (bc, cc) = (b.clone(), c.clone());
        assert_grad(&a, |t, av| { let bv = t.constant(bc.clone()); t.matmul(av, bv).unwrap() })?;
        assert_grad(&a, |t, av| { let cv = t.constant(cc.clone()); let p = t.mul(av, cv).unwrap(); t.sub(p, cv).unwrap() })?;
        assert_grad(&a, |t, av| { let s = t.sigmoid(av); t.scale(s, 3.0) })?;
    }

    #[test]
    fn relu_gradient_away_from_the_kink(seed: u64, n in 1usize..=12) {
        let x = random(seed, &[n], -1.0, 1.0).map(|v| v + 0.1 * v.signum());
        assert_grad(&x, |t, xv| t.relu(xv))?;
    }

    #[test]
    fn softmax_and_reduction_gradients(seed: u64, rows in 1usize..=5, cols in 1usize..=5, axis in 0usize..2) {
        let x = random(seed, &[rows, cols], -3.0, 3.0);
        assert_grad(&x, |t, xv| t.softmax(xv, axis).unwrap())?;
        assert_grad(&x, |t, xv| { let s = t.reduce_sum(xv, axis).unwrap(); t.expand(s, axis, 2).unwrap() })?;
        assert_grad(&x, |t, xv| { let h = dup_horizontal(t, xv).unwrap(); let v = dup_vertical(t, xv).unwrap(); let p = t.mul(h, v).unwrap(); depth_sum(t, p).unwrap() })?;
    }

    #[test]
    fn pooling_and_norm_gradients(seed: u64, b in 2usize..=3, c in 1usize..=3) {
        let x = random(seed, &[b, c, 4, 4], -1.0, 1.0);
        let gamma = random(seed ^ 8, &[c], 0.5, 1.5);
        let beta = random(seed ^ 9, &[c], -0.5, 0.5);
        assert_grad(&x, |t, xv| t.avg_pool2(xv).unwrap())?;
        assert_grad(&x, |t, xv| t.global_avg_pool(xv).unwrap())?;
        let zeros = vec![0.0; c];
        let ones = vec![1.0; c];
        assert_grad(&x, |t, xv| {
            let (g, bt) = (t.constant(gamma.clone()), t.constant(beta.clone()));
            let norm = NormRef { running_mean: &zeros, running_var: &ones, eps: 1e-5 };
            t.batch_norm(xv, g, bt, norm, Mode::Train).unwrap().0
        })?;
    }

    #[test]
    fn cross_entropy_gradient(seed: u64, b in 1usize..=5, classes in 2usize..=5) {
        let x = random(seed, &[b, classes], -3.0, 3.0);
        let labels: Vec<usize> = (0..b).map(|i| (i * 7 + seed as usize) % classes).collect();
        assert_grad(&x, |t, xv| t.cross_entropy(xv, &labels).unwrap())?;
    }
}
