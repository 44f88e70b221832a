use proptest::prelude::*;
use ssmvdm_core::rng::gaussian_sample;
use ssmvdm_core::ssm::{selective_scan_seq, Discretization, SelectiveInputs, SsmCore};
use ssmvdm_core::{Graph, ParamStore, Rng, Tensor};

/// Direct convolution: `y[n,o,i,j] = b[o] + sum x[n,c,i*s+u-p,j*s+v-p] w[o,c,u,v]`.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, k) = (ws[0], ws[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut y = vec![0.0; n * cout * oh * ow];
    for s in 0..n {
        for o in 0..cout {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b[o];
                    for c in 0..cin {
                        for u in 0..k {
                            for v in 0..k {
                                let (r, q) = ((i * stride + u) as isize - pad as isize, (j * stride + v) as isize - pad as isize);
                                if r >= 0 && q >= 0 && (r as usize) < h && (q as usize) < wd {
                                    acc += x.data()[((s * cin + c) * h + r as usize) * wd + q as usize] * w.data()[((o * cin + c) * k + u) * k + v];
                                }
                            }
                        }
                    }
                    y[((s * cout + o) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, cout, oh, ow], y).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv2d_matches_direct_summation(seed in any::<u64>(), n in 1usize..3, cin in 1usize..4, cout in 1usize..4,
                                       h in 3usize..9, w in 3usize..9, k in prop_oneof![Just(1usize), Just(3)], stride in 1usize..3) {
        let pad = k / 2;
        let mut rng = Rng::new(seed);
        let x: Tensor<f64> = gaussian_sample(&mut rng, &[n, cin, h, w]).unwrap();
        let wt: Tensor<f64> = gaussian_sample(&mut rng, &[cout, cin, k, k]).unwrap();
        let b: Tensor<f64> = gaussian_sample(&mut rng, &[cout]).unwrap();
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.input(x.clone()).unwrap(), g.input(wt.clone()).unwrap(), g.input(b.clone()).unwrap());
        let y = g.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
        let want = naive_conv(&x, &wt, b.data(), stride, pad);
        prop_assert_eq!(g.shape(y), want.shape());
        prop_assert!(g.value(y).max_abs_diff(&want).unwrap() < 1e-10);
    }
}

#[test]
fn non_finite_values_are_refused_at_every_entry_point() {
    assert!(Tensor::<f64>::new(&[2], vec![1.0, f64::NAN]).is_err());
    let mut g = Graph::<f64>::new();
    assert!(g.input(Tensor::from_f64(&[1], &[1.0]).unwrap().map(|_| f64::INFINITY)).is_err());
    let mut store = ParamStore::<f64>::new();
    store.add("p", Tensor::from_f64(&[1], &[0.0]).unwrap().map(|_| f64::NAN));
    assert!(Graph::<f64>::new().bind_params(&store, true).is_err());
    // a finite input that overflows inside an op is caught at the op
    let mut g = Graph::<f32>::new();
    let big = g.input(Tensor::full(&[2], 3e38f32).unwrap()).unwrap();
    assert!(g.add(big, big).is_err());
    let core = SsmCore { a: Tensor::full(&[1, 1], -1.0).unwrap(), d_skip: Tensor::zeros(&[1]).unwrap() };
    let x = SelectiveInputs {
        u: Tensor::full(&[1, 2, 1], 1.0).unwrap().map(|v: f64| if v > 0.0 { f64::NAN } else { v }),
        b: Tensor::ones(&[1, 2, 1]).unwrap(),
        c: Tensor::ones(&[1, 2, 1]).unwrap(),
        delta: Tensor::full(&[1, 2, 1], 0.1).unwrap(),
    };
    assert!(selective_scan_seq(&core, &x, Discretization::Euler).is_err());
}

#[test]
fn recorded_runs_are_bit_identical() {
    let run = || {
        let mut rng = Rng::new(4);
        let x: Tensor<f32> = gaussian_sample(&mut rng, &[2, 3, 8, 8]).unwrap();
        let w: Tensor<f32> = gaussian_sample(&mut rng, &[4, 3, 3, 3]).unwrap();
        let mut g = Graph::new();
        let (xv, wv) = (g.input(x).unwrap(), g.variable(w).unwrap());
        let y = g.conv2d(xv, wv, None, 1, 1).unwrap();
        let s = g.silu(y).unwrap();
        let l = g.sum(s).unwrap();
        let grads = g.backward(l).unwrap();
        (g.value(y).to_vec(), grads.get(wv).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}
