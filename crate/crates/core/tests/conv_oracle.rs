use lexivis_core::{conv2d, ConvWeights, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Direct definition: out[o][y][x] = b[o] + sum w[o][c][i][j] * in[c][y*s+i-p][x*s+j-p].
fn reference(input: &Tensor, w: &ConvWeights, stride: usize, pad: usize) -> Vec<f64> {
    let (c_in, h, wd) = input.shape();
    let (kh, kw) = w.kernel_size();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Vec::with_capacity(w.out_channels() * oh * ow);
    for o in 0..w.out_channels() {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = f64::from(w.bias()[o]);
                for c in 0..c_in {
                    for i in 0..kh {
                        for j in 0..kw {
                            let iy = (y * stride + i) as isize - pad as isize;
                            let ix = (x * stride + j) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            let wv = w.weights()[((o * c_in + c) * kh + i) * kw + j];
                            acc +=
                                f64::from(wv) * f64::from(input.get(c, iy as usize, ix as usize));
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

fn random_case(rng: &mut ChaCha8Rng) -> (Tensor, ConvWeights, usize, usize) {
    let c_in = rng.gen_range(1..=8);
    let c_out = rng.gen_range(1..=8);
    let h = rng.gen_range(3..=16);
    let w = rng.gen_range(3..=16);
    let k = [1, 3][rng.gen_range(0..2)];
    let stride = rng.gen_range(1..=2);
    let pad = rng.gen_range(0..=1);
    let input: Vec<f32> = (0..c_in * h * w)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let weights: Vec<f32> = (0..c_out * c_in * k * k)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let bias: Vec<f32> = (0..c_out).map(|_| rng.gen_range(-0.5..0.5)).collect();
    (
        Tensor::new(c_in, h, w, input).unwrap(),
        ConvWeights::new(c_out, c_in, k, k, weights, bias).unwrap(),
        stride,
        pad,
    )
}

fn max_rel_error(got: &Tensor, want: &[f64]) -> f64 {
    got.data()
        .iter()
        .zip(want)
        .map(|(&g, &r)| (f64::from(g) - r).abs() / r.abs().max(1.0))
        .fold(0.0, f64::max)
}

#[test]
fn fifty_random_cases_agree_with_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0_4F);
    for case in 0..50 {
        let (input, w, stride, pad) = random_case(&mut rng);
        let got = conv2d(&input, &w, stride, pad).unwrap();
        let want = reference(&input, &w, stride, pad);
        assert_eq!(got.data().len(), want.len(), "case {case}");
        let err = max_rel_error(&got, &want);
        assert!(err <= 1e-6, "case {case}: relative error {err}");
    }
}

proptest! {
    #[test]
    fn conv_matches_direct_sum(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (input, w, stride, pad) = random_case(&mut rng);
        let got = conv2d(&input, &w, stride, pad).unwrap();
        let want = reference(&input, &w, stride, pad);
        prop_assert!(max_rel_error(&got, &want) <= 1e-6);
    }
}
