use std::rc::Rc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use typeflow::numeric::{
    birnn_encode, grad_check, gru_cell, softmax, BiRnnOutput, GruNames, NumericError, ParamSet, Tape, Tensor, Var,
};

const TOL: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    // keep clear of the kinks at zero
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduce an output to a scalar with fixed random weights so every output
/// coordinate contributes with a distinct coefficient.
fn weighted_sum(t: &mut Tape<'_, f64>, out: Var, seed: u64) -> Var {
    let shape = t.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = t.constant(rand_tensor(&mut rng, &shape));
    let m = t.mul(out, w).unwrap();
    t.sum(m)
}

fn check<F>(params: ParamSet<f64>, build: F) -> f64
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var, NumericError>,
{
    let loss_of = |p: &ParamSet<f64>| {
        let mut t = Tape::new(p);
        let out = build(&mut t).unwrap();
        let l = weighted_sum(&mut t, out, 99);
        t.value(l).data()[0]
    };
    let mut t = Tape::new(&params);
    let out = build(&mut t).unwrap();
    let l = weighted_sum(&mut t, out, 99);
    let grads = t.backward(l);
    grad_check(&params, &grads, loss_of, 1e-5, None).max_rel_error
}

fn ps(rng: &mut ChaCha8Rng, specs: &[(&str, &[usize])]) -> ParamSet<f64> {
    specs.iter().map(|(n, s)| (n.to_string(), rand_tensor(rng, s))).collect()
}

macro_rules! grad_test {
    ($name:ident, $specs:expr, |$t:ident| $body:expr) => {
        #[test]
        fn $name() {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let p = ps(&mut rng, $specs);
            let err = check(p, |$t: &mut Tape<'_, f64>| -> Result<Var, NumericError> { $body });
            assert!(err <= TOL, "relative error {err}");
        }
    };
}

grad_test!(matmul_plain, &[("a", &[3, 4]), ("b", &[4, 2])], |t| {
    let (a, b) = (t.param("a")?, t.param("b")?);
    Ok(t.matmul(a, b)?)
});

grad_test!(matmul_transposed_both, &[("a", &[4, 3]), ("b", &[2, 4])], |t| {
    let (a, b) = (t.param("a")?, t.param("b")?);
    Ok(t.matmul_ex(a, true, b, true)?)
});

grad_test!(affine_layer, &[("x", &[5, 3]), ("w", &[2, 3]), ("b", &[2])], |t| {
    let (x, w, b) = (t.param("x")?, t.param("w")?, t.param("b")?);
    Ok(t.affine(x, w, b)?)
});

grad_test!(elementwise_ops, &[("a", &[2, 3]), ("b", &[2, 3])], |t| {
    let (a, b) = (t.param("a")?, t.param("b")?);
    let s = t.add(a, b)?;
    let d = t.sub(s, b)?;
    let m = t.mul(d, b)?;
    let o = t.one_minus(m);
    Ok(t.scale(o, 1.7))
});

grad_test!(activations, &[("a", &[3, 3])], |t| {
    let a = t.param("a")?;
    let s = t.sigmoid(a);
    let h = t.tanh(a);
    let r = t.relu(a);
    let l = t.leaky_relu(a, 0.2);
    let x = t.add(s, h)?;
    let y = t.add(r, l)?;
    Ok(t.mul(x, y)?)
});

grad_test!(concat_and_slice, &[("a", &[2, 3]), ("b", &[2, 2]), ("c", &[1, 5])], |t| {
    let (a, b, c) = (t.param("a")?, t.param("b")?, t.param("c")?);
    let ab = t.concat_cols(&[a, b])?;
    let abc = t.concat_rows(&[ab, c])?;
    let s = t.slice_cols(abc, 1, 3)?;
    Ok(t.slice_rows(s, 1, 2)?)
});

grad_test!(gather_and_scatter, &[("a", &[4, 3])], |t| {
    let a = t.param("a")?;
    let g = t.gather_rows(a, Rc::from(vec![0, 2, 2, 3, 1, 0]))?;
    let s = t.scatter_sum(g, Rc::from(vec![1, 0, 1, 2, 2, 4]), 5)?;
    let m = t.scatter_mean(g, Rc::from(vec![0, 0, 1, 3, 3, 3]), 5)?;
    Ok(t.add(s, m)?)
});

grad_test!(segment_softmax_and_row_scale, &[("s", &[6, 1]), ("v", &[6, 2])], |t| {
    let (s, v) = (t.param("s")?, t.param("v")?);
    let idx: Rc<[usize]> = Rc::from(vec![0, 1, 0, 2, 1, 0]);
    let a = t.segment_softmax(s, idx.clone(), 3)?;
    let r = t.row_scale(v, a)?;
    Ok(t.scatter_sum(r, idx, 3)?)
});

grad_test!(select_and_softmax_rows, &[("a", &[3, 4]), ("b", &[3, 4])], |t| {
    let (a, b) = (t.param("a")?, t.param("b")?);
    let s = t.select_rows(Rc::from(vec![true, false, true]), a, b)?;
    Ok(t.softmax_rows(s))
});

grad_test!(reductions, &[("a", &[2, 3])], |t| {
    let a = t.param("a")?;
    let s = t.sum(a);
    let m = t.mean(a);
    let sq = t.mul(s, m)?;
    Ok(sq)
});

grad_test!(cross_entropy_rows, &[("x", &[3, 5])], |t| {
    let x = t.param("x")?;
    t.cross_entropy_rows(x, Rc::from(vec![4, 0, 2]))
});

#[test]
fn gru_cell_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = GruNames::new("g");
    let mut specs: Vec<(String, Vec<usize>)> =
        g.all().iter().map(|n| n.to_string()).zip(GruNames::shapes(3, 4)).collect();
    specs.push(("x".into(), vec![2, 3]));
    specs.push(("h".into(), vec![2, 4]));
    let p: ParamSet<f64> = specs.iter().map(|(n, s)| (n.clone(), rand_tensor(&mut rng, s))).collect();
    let err = check(p, |t| {
        let (x, h) = (t.param("x")?, t.param("h")?);
        gru_cell(t, &g, x, h)
    });
    assert!(err <= TOL, "relative error {err}");
}

#[test]
fn birnn_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (f, b) = (GruNames::new("f"), GruNames::new("b"));
    let mut p = ParamSet::new();
    for g in [&f, &b] {
        for (n, s) in g.all().iter().zip(GruNames::shapes(2, 3)) {
            p.insert(n.to_string(), rand_tensor(&mut rng, &s));
        }
    }
    p.insert("pw".into(), rand_tensor(&mut rng, &[4, 6]));
    p.insert("pb".into(), rand_tensor(&mut rng, &[4]));
    p.insert("x".into(), rand_tensor(&mut rng, &[6, 2]));
    let seqs = vec![vec![0, 1, 2], vec![3], vec![4, 5]];
    for mode in [BiRnnOutput::Positions, BiRnnOutput::Summary] {
        let err = check(p.clone(), |t| {
            let x = t.param("x")?;
            birnn_encode(t, &f, &b, Some(("pw", "pb")), x, &seqs, mode)
        });
        assert!(err <= TOL, "{mode:?}: relative error {err}");
    }
}

#[test]
fn single_element_birnn_is_projection_of_both_directions() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (f, b) = (GruNames::new("f"), GruNames::new("b"));
    let mut p = ParamSet::new();
    for g in [&f, &b] {
        for (n, s) in g.all().iter().zip(GruNames::shapes(2, 2)) {
            p.insert(n.to_string(), rand_tensor(&mut rng, &s));
        }
    }
    p.insert("pw".into(), rand_tensor(&mut rng, &[3, 4]));
    p.insert("pb".into(), rand_tensor(&mut rng, &[3]));
    let xin = rand_tensor(&mut rng, &[1, 2]);
    let mut t = Tape::new(&p);
    let x = t.constant(xin.clone());
    let out = birnn_encode(&mut t, &f, &b, Some(("pw", "pb")), x, &[vec![0]], BiRnnOutput::Positions).unwrap();
    let got = t.value(out).clone();

    let mut t2 = Tape::new(&p);
    let x = t2.constant(xin);
    let h0 = t2.constant(Tensor::zeros(&[1, 2]));
    let hf = gru_cell(&mut t2, &f, x, h0).unwrap();
    let hb = gru_cell(&mut t2, &b, x, h0).unwrap();
    let both = t2.concat_cols(&[hf, hb]).unwrap();
    let (w, bias) = (t2.param("pw").unwrap(), t2.param("pb").unwrap());
    let want = t2.affine(both, w, bias).unwrap();
    assert_eq!(&got, t2.value(want));
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(xs in prop::collection::vec(-50.0f64..50.0, 1..40)) {
        let p = softmax(&xs);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn softmax_f32_is_a_distribution(xs in prop::collection::vec(-80.0f32..80.0, 1..40)) {
        let p = softmax(&xs);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn forward_and_backward_are_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ps(&mut rng, &[("a", &[8, 8]), ("b", &[8, 8])]);
        let mut t = Tape::new(&p);
        let (a, b) = (t.param("a").unwrap(), t.param("b").unwrap());
        let m = t.matmul(a, b).unwrap();
        let s = t.tanh(m);
        let l = t.sum(s);
        let g = t.backward(l);
        (t.value(l).clone(), g)
    };
    assert_eq!(run(), run());
}
