use entropynas_core::rng::SeededRng;
use entropynas_core::tensor::{conv2d, gaussian_input, ConvWeights, FeatureMap};

/// Direct six-loop convolution in f64 with zero "same" padding.
fn naive(x: &FeatureMap, w: &ConvWeights, stride: usize) -> Vec<f64> {
    let (cin, h, wd) = x.shape();
    let (cout, k, groups) = (w.out_channels(), w.kernel(), w.groups());
    let cin_g = cin / groups;
    let cout_g = cout / groups;
    let pad = (k / 2) as isize;
    let oh = h.div_ceil(stride);
    let ow = wd.div_ceil(stride);
    let mut out = vec![0.0; cout * oh * ow];
    for o in 0..cout {
        let g = o / cout_g;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f64;
                for ci in 0..cin_g {
                    let c = g * cin_g + ci;
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride) as isize + ky as isize - pad;
                            let ix = (ox * stride) as isize + kx as isize - pad;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            let wv = w.data()[((o * cin_g + ci) * k + ky) * k + kx];
                            acc += f64::from(wv) * f64::from(x.at(c, iy as usize, ix as usize));
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

fn max_rel_error(got: &FeatureMap, want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = got.data().iter().zip(want).fold(0.0f64, |m, (&g, &w)| m.max((f64::from(g) - w).abs()));
    if scale == 0.0 {
        err
    } else {
        err / scale
    }
}

#[test]
fn conv_matches_naive_reference_on_random_shapes() {
    let mut rng = SeededRng::new(2024, 0);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let k = [1, 3, 5][rng.below(3)];
        let stride = 1 + rng.below(2);
        let depthwise = case % 5 == 0;
        let cin = 1 + rng.below(12);
        let (groups, cout) = if depthwise { (cin, cin) } else { (1, 1 + rng.below(12)) };
        let h = 1 + rng.below(13);
        let wd = 1 + rng.below(13);
        let x = gaussian_input(cin, h, wd, &mut rng);
        let w = ConvWeights::gaussian(cout, cin, k, groups, &mut rng).unwrap();
        let got = conv2d(&x, &w, stride).unwrap();
        let want = naive(&x, &w, stride);
        assert_eq!(got.numel(), want.len(), "case {case}");
        let err = max_rel_error(&got, &want);
        assert!(err <= 1e-5, "case {case}: k={k} s={stride} cin={cin} cout={cout} g={groups} {h}x{wd}: {err}");
        worst = worst.max(err);
    }
    assert!(worst > 0.0);
}

#[test]
fn wide_conv_matches_reference() {
    // Wide enough to exercise the column tiling and the 4-row kernel tail.
    let mut rng = SeededRng::new(7, 1);
    let x = gaussian_input(37, 19, 23, &mut rng);
    let w = ConvWeights::gaussian(131, 37, 3, 1, &mut rng).unwrap();
    for stride in [1, 2] {
        let got = conv2d(&x, &w, stride).unwrap();
        assert!(max_rel_error(&got, &naive(&x, &w, stride)) <= 1e-5);
    }
}
