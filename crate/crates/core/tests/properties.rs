use proptest::prelude::*;
use shakeout::glm::{reg_linear_closed_form, reg_logistic_closed_form, shakeout_reg_enumerated, shakeout_reg_exact};
use shakeout::layers::conv::ConvGeometry;
use shakeout::{ConvLayer, FcLayer, ForwardMode, GlmSpec, RngStream, ShakeoutParams, Tensor};

fn weights_and_inputs(max_p: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max_p).prop_flat_map(|p| {
        // A zero weight now and then exercises sgn(0) = 0.
        let w = prop::collection::vec(prop_oneof![1 => Just(0.0), 6 => -3.0f64..3.0], p);
        (w, prop::collection::vec(-2.0f64..2.0, p))
    })
}

fn tensor(shape: &[usize], vals: &[f64]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), vals.iter().cycle().take(n).copied().collect()).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn linear_closed_form_matches_regularizer((w, x) in weights_and_inputs(8), tau in 0.05f64..0.95, c in 0.0f64..3.0) {
        let p = ShakeoutParams::shakeout(tau, c).unwrap();
        let exact = shakeout_reg_exact(&GlmSpec::linear(), &w, &x, &p).unwrap().pi;
        let closed = reg_linear_closed_form(&w, &x, &p).unwrap().pi;
        prop_assert!(close(exact, closed, 1e-10), "{exact} vs {closed}");
    }

    #[test]
    fn logistic_closed_form_matches_regularizer((w, x) in weights_and_inputs(8), tau in 0.05f64..0.95, c in 0.0f64..3.0) {
        let p = ShakeoutParams::shakeout(tau, c).unwrap();
        let exact = shakeout_reg_exact(&GlmSpec::logistic(), &w, &x, &p).unwrap().pi;
        let closed = reg_logistic_closed_form(&w, &x, &p).unwrap();
        prop_assert!(close(exact, closed, 1e-10), "{exact} vs {closed}");
    }

    #[test]
    fn linear_regularizer_is_the_true_expectation((w, x) in weights_and_inputs(6), tau in 0.05f64..0.95, c in 0.0f64..3.0) {
        let p = ShakeoutParams::shakeout(tau, c).unwrap();
        let spec = GlmSpec::linear();
        let exact = shakeout_reg_exact(&spec, &w, &x, &p).unwrap().pi;
        let enumerated = shakeout_reg_enumerated(&spec, &w, &x, &p).unwrap();
        prop_assert!(close(exact, enumerated, 1e-9), "{exact} vs {enumerated}");
    }

    #[test]
    fn zero_weights_contribute_nothing_in_train_mode(
        vals in prop::collection::vec(-1.0f64..1.0, 12),
        dead in 0usize..4,
        tau in 0.1f64..0.9,
        c in 0.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let mut w = tensor(&[3, 4], &vals);
        for i in 0..3 {
            w.data_mut()[i * 4 + dead] = 0.0;
        }
        let b = tensor(&[3], &vals[5..]);
        let mut fc = FcLayer::new(w, b.clone(), ShakeoutParams::shakeout(tau, c).unwrap()).unwrap();
        let mut x = Tensor::zeros(&[2, 4]);
        x.data_mut()[dead] = 1.7;
        x.data_mut()[4 + dead] = -0.4;
        let u = fc.forward(&x, ForwardMode::Train, &RngStream::new(seed, 0)).unwrap();
        for row in u.data().chunks(3) {
            prop_assert_eq!(row, b.data());
        }
    }

    #[test]
    fn one_by_one_conv_is_fc(
        vals in prop::collection::vec(-1.0f64..1.0, 16),
        inputs in 1usize..6,
        outputs in 1usize..5,
        batch in 1usize..4,
        tau in 0.1f64..0.9,
        c in 0.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let noise = ShakeoutParams::shakeout(tau, c).unwrap();
        let w = tensor(&[outputs, inputs], &vals);
        let b = tensor(&[outputs], &vals[3..]);
        let x = tensor(&[batch, inputs], &vals[7..]);
        let g = tensor(&[batch, outputs], &vals[1..]);
        let geometry = ConvGeometry { in_maps: inputs, height: 1, width: 1, kernel: (1, 1), stride: 1, padding: 0 };
        let mut fc = FcLayer::new(w.clone(), b.clone(), noise).unwrap();
        let mut conv = ConvLayer::new(w.reshape(vec![outputs, inputs, 1, 1]).unwrap(), b, geometry, noise).unwrap();
        let stream = RngStream::new(seed, 3);

        let u_fc = fc.forward(&x, ForwardMode::Train, &stream).unwrap();
        let u_conv = conv.forward(&x.clone().reshape(vec![batch, inputs, 1, 1]).unwrap(), ForwardMode::Train, &stream).unwrap();
        prop_assert_eq!(u_fc.data(), u_conv.data());

        let gf = fc.backward(&g).unwrap();
        let gc = conv.backward(&g.reshape(vec![batch, outputs, 1, 1]).unwrap()).unwrap();
        prop_assert_eq!(gf.grad_x.data(), gc.grad_x.data());
        prop_assert_eq!(gf.grad_w.data(), gc.grad_w.data());
        prop_assert_eq!(gf.grad_b.data(), gc.grad_b.data());
    }
}
