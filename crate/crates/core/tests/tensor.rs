mod common;

use proptest::prelude::*;
use scorevc::tensor::kernels::{conv2d, deconv2d, glu, ConvGeometry};
use scorevc::tensor::{batch_stats, Tape, Tensor, BN_EPS};

/// Direct cross-correlation with zero padding, written as nested loops.
fn reference_conv(x: &Tensor, k: &Tensor, geom: ConvGeometry) -> Tensor {
    let [b, c, h, w] = x.dims4("ref").unwrap();
    let [co, _, kh, kw] = k.dims4("ref").unwrap();
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let ho = (h + 2 * ph - kh) / sh + 1;
    let wo = (w + 2 * pw - kw) / sw + 1;
    let mut out = Tensor::zeros([b, co, ho, wo]);
    for bi in 0..b {
        for o in 0..co {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for a in 0..kh {
                            for e in 0..kw {
                                let (r, s) = ((i * sh + a) as isize - ph as isize, (j * sw + e) as isize - pw as isize);
                                if r < 0 || s < 0 || r >= h as isize || s >= w as isize {
                                    continue;
                                }
                                let xv = x.data()[((bi * c + ci) * h + r as usize) * w + s as usize];
                                acc += xv * k.data()[((o * c + ci) * kh + a) * kw + e];
                            }
                        }
                    }
                    out.data_mut()[((bi * co + o) * ho + i) * wo + j] = acc;
                }
            }
        }
    }
    out
}

/// Scatter form of the transposed convolution, independent of `conv2d`.
fn reference_deconv(y: &Tensor, k: &Tensor, geom: ConvGeometry) -> Tensor {
    let [b, ci, h, w] = y.dims4("ref").unwrap();
    let [_, co, kh, kw] = k.dims4("ref").unwrap();
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let (ho, wo) = ((h - 1) * sh + kh - 2 * ph, (w - 1) * sw + kw - 2 * pw);
    let mut out = Tensor::zeros([b, co, ho, wo]);
    for bi in 0..b {
        for i_c in 0..ci {
            for i in 0..h {
                for j in 0..w {
                    let v = y.data()[((bi * ci + i_c) * h + i) * w + j];
                    for o in 0..co {
                        for a in 0..kh {
                            for e in 0..kw {
                                let (r, s) = ((i * sh + a) as isize - ph as isize, (j * sw + e) as isize - pw as isize);
                                if r < 0 || s < 0 || r >= ho as isize || s >= wo as isize {
                                    continue;
                                }
                                out.data_mut()[((bi * co + o) * ho + r as usize) * wo + s as usize] +=
                                    v * k.data()[((i_c * co + o) * kh + a) * kw + e];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[test]
fn conv_small_examples() {
    let out = conv2d(&Tensor::full([1, 1, 3, 3], 1.0), &Tensor::full([1, 1, 2, 2], 1.0), None, ConvGeometry::UNIT).unwrap();
    assert_eq!(out.shape(), &[1, 1, 2, 2]);
    assert!(out.data().iter().all(|&v| v == 4.0));

    let mut rng = scorevc::seeded_rng(1);
    let x = Tensor::randn([2, 1, 4, 5], &mut rng);
    let mut id = Tensor::zeros([1, 1, 3, 3]);
    id.data_mut()[4] = 1.0;
    let y = conv2d(&x, &id, None, ConvGeometry::new((1, 1), (1, 1))).unwrap();
    assert_eq!(y, x);
}

#[test]
fn conv_matches_loop_oracle() {
    let mut rng = scorevc::seeded_rng(2);
    for geom in [ConvGeometry::UNIT, ConvGeometry::new((1, 1), (1, 1)), ConvGeometry::new((2, 1), (1, 0)), ConvGeometry::new((1, 2), (0, 1))] {
        let x = Tensor::randn([2, 3, 5, 4], &mut rng);
        let k = Tensor::randn([6, 3, 3, 3], &mut rng);
        let got = conv2d(&x, &k, None, geom).unwrap();
        let want = reference_conv(&x, &k, geom);
        assert_eq!(got.shape(), want.shape());
        assert!(got.max_abs_diff(&want).unwrap() < 1e-12, "{geom:?}");
    }
}

#[test]
fn conv_shape_errors_name_the_axis() {
    let x = Tensor::zeros([1, 2, 3, 3]);
    let err = conv2d(&x, &Tensor::zeros([1, 3, 2, 2]), None, ConvGeometry::UNIT).unwrap_err();
    assert!(err.to_string().contains("channel"), "{err}");
    let err = conv2d(&x, &Tensor::zeros([1, 2, 4, 2]), None, ConvGeometry::UNIT).unwrap_err();
    assert!(err.to_string().contains("height"), "{err}");
    let err = conv2d(&x, &Tensor::zeros([1, 2, 2, 5]), None, ConvGeometry::UNIT).unwrap_err();
    assert!(err.to_string().contains("width"), "{err}");
}

#[test]
fn deconv_examples() {
    let mut rng = scorevc::seeded_rng(3);
    let x = Tensor::randn([2, 1, 3, 4], &mut rng);
    let y = deconv2d(&x, &Tensor::full([1, 1, 1, 1], 2.5), None, ConvGeometry::UNIT).unwrap();
    assert!(y.max_abs_diff(&x.map(|v| 2.5 * v)).unwrap() == 0.0);

    let small = Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let up = deconv2d(&small, &Tensor::full([1, 1, 2, 2], 1.0), None, ConvGeometry::new((2, 2), (0, 0))).unwrap();
    assert_eq!(up.shape(), &[1, 1, 4, 4]);
    let block: Vec<f64> = (0..16).map(|p| small.data()[(p / 8) * 2 + (p % 4) / 2]).collect();
    assert_eq!(up.data(), block.as_slice());
}

#[test]
fn deconv_matches_scatter_oracle_and_conv_input_gradient() {
    let mut rng = scorevc::seeded_rng(4);
    let geom = ConvGeometry::new((2, 2), (1, 1));
    let x = Tensor::randn([2, 3, 6, 8], &mut rng);
    let k = Tensor::randn([4, 3, 4, 4], &mut rng);
    let y = Tensor::randn(conv2d(&x, &k, None, geom).unwrap().shape().to_vec(), &mut rng);

    let d = deconv2d(&y, &k, None, geom).unwrap();
    assert!(d.max_abs_diff(&reference_deconv(&y, &k, geom)).unwrap() < 1e-12);

    // For loss = mean((conv(x, K) - t)^2), dloss/dx is the transposed
    // convolution of the scaled residual.
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let kv = tape.constant(k.clone());
    let tv = tape.constant(y.clone());
    let c = tape.conv2d(xv, kv, None, geom).unwrap();
    let r = tape.sub(c, tv).unwrap();
    let loss = tape.square_mean(r).unwrap();
    let grads = tape.backward(loss).unwrap();
    let n = y.len() as f64;
    let resid = tape.value(r).map(|v| 2.0 * v / n);
    let d = deconv2d(&resid, &k, None, geom).unwrap();
    assert!(grads.get(xv).unwrap().max_abs_diff(&d).unwrap() < 1e-12);
}

#[test]
fn glu_examples_and_saturation() {
    let x = Tensor::new([1, 2, 1, 1], vec![2.0, 0.0]).unwrap();
    assert_eq!(glu(&x).unwrap().data(), &[1.0]);
    let x = Tensor::new([1, 2, 1, 1], vec![3.0, 3f64.ln()]).unwrap();
    assert!((glu(&x).unwrap().data()[0] - 2.25).abs() < 1e-12);
    let x = Tensor::new([1, 2, 1, 1], vec![-1.7, 30.0]).unwrap();
    assert!((glu(&x).unwrap().data()[0] + 1.7).abs() < 1e-9);
    assert!(glu(&Tensor::zeros([1, 3, 2, 2])).is_err());

    let mut tape = Tape::new();
    let v = tape.leaf(Tensor::new([1, 2, 1, 2], vec![0.4, -2.0, 30.0, 35.0]).unwrap());
    let g = tape.glu(v).unwrap();
    let s = tape.sum(g).unwrap();
    let grads = tape.backward(s).unwrap();
    let gx = grads.get(v).unwrap().data();
    assert!(gx[2].abs() < 1e-12 && gx[3].abs() < 1e-14, "{gx:?}");
}

#[test]
fn batch_stats_examples_and_two_pass_oracle() {
    let (m, s) = batch_stats(&Tensor::full([2, 1, 2, 3], 1.5)).unwrap();
    assert!((m.data()[0] - 1.5).abs() < 1e-15);
    assert!((s.data()[0] - BN_EPS.sqrt()).abs() < 1e-15);

    let (m, s) = batch_stats(&Tensor::new([2, 1, 1, 1], vec![0.0, 2.0]).unwrap()).unwrap();
    assert_eq!(m.data(), &[1.0]);
    assert!((s.data()[0] - (1.0 + BN_EPS).sqrt()).abs() < 1e-15);

    let mut rng = scorevc::seeded_rng(5);
    let x = Tensor::randn([3, 4, 5, 2], &mut rng).map(|v| 3.0 * v + 7.0);
    let (m, s) = batch_stats(&x).unwrap();
    for c in 0..4 {
        let vals: Vec<f64> = (0..3).flat_map(|b| x.data()[(b * 4 + c) * 10..(b * 4 + c + 1) * 10].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!((m.data()[c] - mean).abs() < 1e-12);
        assert!((s.data()[c] - (var + BN_EPS).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn backward_of_sum_is_ones_and_rejects_non_scalars() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros([2, 3]));
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    assert!(tape.backward(x).is_err());
}

#[test]
fn conv_weight_gradients_match_finite_differences() {
    let mut rng = scorevc::seeded_rng(6);
    let x = Tensor::randn([2, 2, 4, 5], &mut rng);
    let k = Tensor::randn([3, 2, 3, 2], &mut rng);
    let b = Tensor::randn([3], &mut rng);
    let geom = ConvGeometry::new((1, 2), (1, 0));
    let err = common::fd_max_rel_error(&[x, k, b], |t, v| t.conv2d(v[0], v[1], Some(v[2]), geom).unwrap(), &mut rng);
    assert!(err < 1e-4, "{err}");
}

fn tensor_strategy(shape: [usize; 4]) -> impl Strategy<Value = Tensor> {
    proptest::collection::vec(-3.0f64..3.0, shape.iter().product::<usize>())
        .prop_map(move |d| Tensor::new(shape.to_vec(), d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_is_linear(x in tensor_strategy([2, 2, 5, 6]), y in tensor_strategy([2, 2, 5, 6]),
                      k in tensor_strategy([3, 2, 3, 3]), a in -2.0f64..2.0, b in -2.0f64..2.0,
                      stride in 1usize..3, pad in 0usize..2) {
        let geom = ConvGeometry::new((stride, stride), (pad, pad));
        let mix = x.zip_map(&y, "mix", |p, q| a * p + b * q).unwrap();
        let lhs = conv2d(&mix, &k, None, geom).unwrap();
        let (cx, cy) = (conv2d(&x, &k, None, geom).unwrap(), conv2d(&y, &k, None, geom).unwrap());
        let rhs = cx.zip_map(&cy, "mix", |p, q| a * p + b * q).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
    }

    #[test]
    fn deconv_is_the_adjoint_of_conv(x in tensor_strategy([2, 3, 7, 9]), k in tensor_strategy([2, 3, 3, 3]),
                                     seed in any::<u64>(), stride in 1usize..3, pad in 0usize..2) {
        // 7 and 9 with a 3-tap kernel tile exactly for strides 1 and 2.
        let geom = ConvGeometry::new((stride, stride), (pad, pad));
        let cx = conv2d(&x, &k, None, geom).unwrap();
        let y = Tensor::randn(cx.shape().to_vec(), &mut scorevc::seeded_rng(seed));
        let dy = deconv2d(&y, &k, None, geom).unwrap();
        prop_assert_eq!(dy.shape(), x.shape());
        let (lhs, rhs) = (cx.dot(&y).unwrap(), x.dot(&dy).unwrap());
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn glu_halves_channels(c in 1usize..5, b in 1usize..3, h in 1usize..4, w in 1usize..4) {
        let out = glu(&Tensor::zeros([b, 2 * c, h, w])).unwrap();
        prop_assert_eq!(out.shape(), &[b, c, h, w]);
    }
}
