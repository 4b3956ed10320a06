use proptest::prelude::*;
use sig_lqc::model::{
    build_pq, cost_level, solve_state_tensor, ControlTensor, CostEvaluator, CostSpec, LqModel,
};
use sig_lqc::signature::{
    fawcett_expected_signature, signature_of_path, SampledPath, SignatureState,
};
use sig_lqc::tensor::{enumerate_words, word_count, TruncatedTensor, Word};

fn tensor(alphabet: usize, level: usize) -> impl Strategy<Value = TruncatedTensor> {
    prop::collection::vec(-2.0f64..2.0, word_count(alphabet, level))
        .prop_map(move |c| TruncatedTensor::from_coeffs(alphabet, level, c))
}

fn path(dim: usize, max_segments: usize) -> impl Strategy<Value = SampledPath> {
    (1..=max_segments).prop_flat_map(move |n| {
        (
            prop::collection::vec(0.01f64..0.2, n),
            prop::collection::vec(-0.5f64..0.5, n * dim),
        )
            .prop_map(move |(dts, inc)| {
                let mut times = vec![0.0];
                for dt in &dts {
                    times.push(times.last().unwrap() + dt);
                }
                let mut values = vec![0.0; dim];
                for (i, _) in dts.iter().enumerate() {
                    for d in 0..dim {
                        let prev = values[i * dim + d];
                        values.push(prev + inc[i * dim + d]);
                    }
                }
                SampledPath::new(times, values, dim).unwrap()
            })
    })
}

fn assert_close(a: &TruncatedTensor, b: &TruncatedTensor, tol: f64) {
    assert_eq!(a.level(), b.level());
    for (x, y) in a.coeffs().iter().zip(b.coeffs()) {
        assert!(
            (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())),
            "{x} vs {y}"
        );
    }
}

#[test]
fn word_counts_match_geometric_sum() {
    for alphabet in 2..=4usize {
        for level in 0..=6usize {
            let closed = (alphabet.pow(level as u32 + 1) - 1) / (alphabet - 1);
            assert_eq!(enumerate_words(alphabet, level).len(), closed);
            assert_eq!(word_count(alphabet, level), closed);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shuffle_commutes(a in tensor(3, 3), b in tensor(3, 3)) {
        assert_close(&a.shuffle(&b, 4).unwrap(), &b.shuffle(&a, 4).unwrap(), 1e-12);
    }

    #[test]
    fn shuffle_associates(a in tensor(2, 2), b in tensor(2, 2), c in tensor(2, 2)) {
        let left = a.shuffle(&b, 5).unwrap().shuffle(&c, 5).unwrap();
        let right = a.shuffle(&b.shuffle(&c, 5).unwrap(), 5).unwrap();
        assert_close(&left, &right, 1e-12);
    }

    #[test]
    fn concat_associates(a in tensor(3, 2), b in tensor(3, 2), c in tensor(3, 2)) {
        let left = a.concat(&b, 4).unwrap().concat(&c, 4).unwrap();
        let right = a.concat(&b.concat(&c, 4).unwrap(), 4).unwrap();
        assert_close(&left, &right, 1e-12);
    }

    #[test]
    fn unit_is_neutral(a in tensor(3, 3)) {
        let unit = TruncatedTensor::unit(3, 3);
        prop_assert_eq!(&unit.concat(&a, 3).unwrap(), &a);
        prop_assert_eq!(&a.concat(&unit, 3).unwrap(), &a);
        prop_assert_eq!(&unit.shuffle(&a, 3).unwrap(), &a);
        prop_assert_eq!(&a.shuffle(&unit, 3).unwrap(), &a);
    }

    #[test]
    fn pairing_is_bilinear(a in tensor(2, 4), b in tensor(2, 4), g in tensor(2, 4), s in -3.0f64..3.0, t in -3.0f64..3.0) {
        let mut comb = a.scaled(s);
        comb.axpy(t, &b).unwrap();
        let lhs = comb.pair(&g).unwrap();
        let rhs = s * a.pair(&g).unwrap() + t * b.pair(&g).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs().max(rhs.abs())) * 64.0);
    }

    #[test]
    fn signature_is_a_shuffle_character(p in path(2, 50), a in tensor(3, 2), b in tensor(3, 2)) {
        let s = signature_of_path(&p, 5).unwrap().into_tensor();
        let lhs = a.shuffle(&b, 5).unwrap().pair(&s).unwrap();
        let rhs = a.pair(&s).unwrap() * b.pair(&s).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn chen_identity_splits_paths(p in path(2, 30), cut in 0.0f64..1.0) {
        let n = p.len();
        let k = 1 + ((n - 2) as f64 * cut) as usize;
        let level = 4;
        let full = signature_of_path(&p, level).unwrap().into_tensor();
        let mut first = SignatureState::new(2, level);
        let mut second = SignatureState::new(2, level);
        let mut dw = [0.0; 2];
        for i in 0..n - 1 {
            let dt = p.increment(i, &mut dw);
            if i < k { first.step(dt, &dw).unwrap() } else { second.step(dt, &dw).unwrap() }
        }
        let joined = first.tensor().concat(second.tensor(), level).unwrap();
        assert_close(&full, &joined, 1e-12);
    }

    #[test]
    fn time_words_track_elapsed_time(p in path(1, 40)) {
        let s = signature_of_path(&p, 6).unwrap();
        let t = s.current_time();
        let mut fact = 1.0;
        for m in 1..=6usize {
            fact *= m as f64;
            let expected = t.powi(m as i32) / fact;
            let got = s.coeff(&Word::repeat(1, m));
            prop_assert!((got - expected).abs() <= 1e-10 * expected.abs().max(1e-300), "m={}: {} vs {}", m, got, expected);
        }
        prop_assert_eq!(s.coeff(&Word::empty()), 1.0);
    }

    #[test]
    fn state_is_affine_in_the_control(
        u0 in tensor(2, 2), dir in tensor(2, 2),
        coeffs in prop::collection::vec(-1.0f64..1.0, 5),
    ) {
        let model = LqModel::scalar(coeffs[0], coeffs[1], coeffs[2], coeffs[3], coeffs[4], 0.5, 1.0);
        let state = |s: f64| {
            let mut u = u0.clone();
            u.axpy(s, &dir).unwrap();
            let ctl = ControlTensor { coords: vec![u] };
            solve_state_tensor(&build_pq(&model, &ctl).unwrap(), 4).unwrap().coords[0].clone()
        };
        let (x0, x1, x2) = (state(0.0), state(1.0), state(2.0));
        for ((a, b), c) in x0.coeffs().iter().zip(x1.coeffs()).zip(x2.coeffs()) {
            let second = a - 2.0 * b + c;
            prop_assert!(second.abs() <= 1e-9 * (1.0 + a.abs() + b.abs() + c.abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cost_is_quadratic_in_the_control(u0 in tensor(2, 2), dir in tensor(2, 2)) {
        let model = LqModel::scalar(10.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        let cost = CostSpec {
            a: vec![vec![vec![0.5]]],
            b: vec![vec![vec![1.0]], vec![vec![0.5]]],
            c: vec![vec![0.2]],
            d: vec![vec![0.1]],
            e: vec![vec![1.0]],
            g: vec![0.3],
        };
        let level = cost_level(3, 2, &cost);
        let ev = CostEvaluator::new(&model, &cost, 3, level, fawcett_expected_signature(1.0, 1, level)).unwrap();
        let f = |s: f64| {
            let mut u = u0.clone();
            u.axpy(s, &dir).unwrap();
            ev.evaluate(&ControlTensor { coords: vec![u] }).unwrap()
        };
        let v: Vec<f64> = (0..4).map(|i| f(i as f64)).collect();
        let third = v[3] - 3.0 * v[2] + 3.0 * v[1] - v[0];
        let scale = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        prop_assert!(third.abs() <= 1e-9 * scale, "third difference {} at scale {}", third, scale);
    }
}
