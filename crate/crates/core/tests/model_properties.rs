mod common;

use common::{fixture, oracle_logits, random_model};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use typeflow::model::{top_k, Batch, GraphInput, Model, Preset};
use typeflow::numeric::{grad_check, Tape};

#[test]
fn forward_matches_dense_oracle_for_every_preset() {
    let fx = fixture();
    let input = fx.input();
    let batch = Batch::pack(&[&input]);
    for (i, p) in Preset::ALL.into_iter().enumerate() {
        let m = random_model(p, 3, &fx, 100 + i as u64);
        let got = m.node_logits(&batch).unwrap();
        let want = oracle_logits(&m, &fx);
        let mut worst = 0.0f64;
        for (r, w) in want.iter().enumerate() {
            for (c, x) in w.iter().enumerate() {
                worst = worst.max((got.at(r, c) - x).abs());
            }
        }
        assert!(worst <= 1e-10, "{p}: max abs difference {worst}");
    }
}

#[test]
fn gradients_match_central_differences_for_every_preset() {
    let fx = fixture();
    let input = fx.input();
    let batch = Batch::pack(&[&input]);
    for (i, p) in Preset::ALL.into_iter().enumerate() {
        let m = random_model(p, 2, &fx, 200 + i as u64);
        let (_, grads) = m.loss_and_grads(&batch).unwrap();
        let loss = |params: &typeflow::numeric::ParamSet<f64>| {
            let mut t = Tape::new(params);
            let probe = Model { params: params.clone(), ..m.clone() };
            let l = probe.loss(&mut t, &batch).unwrap();
            t.value(l).data()[0]
        };
        let r = grad_check(&m.params, &grads, loss, 1e-4, None);
        assert!(r.checked >= 200, "{p}: only {} coordinates", r.checked);
        assert!(r.max_rel_error <= 1e-5, "{p}: relative error {} at {:?}", r.max_rel_error, r.worst);
    }
}

#[test]
fn relabeling_nodes_permutes_logits() {
    let fx = fixture();
    let base_in = fx.input();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for p in Preset::ALL {
        let m = random_model(p, 3, &fx, 7);
        let base = m.node_logits(&Batch::pack(&[&base_in])).unwrap();
        let mut perm: Vec<usize> = (0..fx.graph.node_count()).collect();
        perm.shuffle(&mut rng);
        let g = fx.graph.permuted(&perm);
        let it = fx.ident_token.iter().map(|(n, t)| (perm[*n], *t)).collect();
        let input = GraphInput::encode(&g, &fx.tokens, &it, &fx.vocab).unwrap();
        let got = m.node_logits(&Batch::pack(&[&input])).unwrap();
        for (old, &new) in perm.iter().enumerate() {
            for (a, b) in base.row(old).iter().zip(got.row(new)) {
                assert!((a - b).abs() <= 1e-10, "{p}");
            }
        }
    }
}

#[test]
fn packing_graphs_together_changes_nothing() {
    let fx = fixture();
    let a = fx.input();
    let mut b = a.clone();
    b.file_id = "other.ts".into();
    for p in Preset::ALL {
        let m = random_model(p, 3, &fx, 9);
        let alone = m.node_logits(&Batch::pack(&[&a])).unwrap();
        let both = m.node_logits(&Batch::pack(&[&b, &a])).unwrap();
        let off = a.node_count();
        for r in 0..off {
            for (x, y) in alone.row(r).iter().zip(both.row(off + r)) {
                assert!((x - y).abs() <= 1e-12, "{p}");
            }
        }
    }
}

#[test]
fn recurrent_models_share_weights_across_steps() {
    let fx = fixture();
    let m = random_model(Preset::RGnn, 8, &fx, 1);
    assert!(m.params.keys().all(|k| !k.starts_with("step")));
    let c = random_model(Preset::CGnn, 8, &fx, 1);
    assert_eq!(c.params.keys().filter(|k| k.ends_with("upd.w_h")).count(), 8);
}

#[test]
fn attention_coefficients_sum_to_one_per_node() {
    let fx = fixture();
    let input = fx.input();
    let batch = Batch::pack(&[&input]);
    let m = random_model(Preset::RGat, 3, &fx, 4);
    let mut t = Tape::new(&m.params);
    let f = m.forward(&mut t, &batch).unwrap();
    assert_eq!(f.attention.len(), 3);
    for a in &f.attention {
        let mut sums = vec![0.0; batch.node_count];
        for (e, &d) in batch.dst.iter().enumerate() {
            sums[d] += t.value(*a).data()[e];
        }
        for (v, s) in sums.iter().enumerate() {
            if batch.has_in_edges[v] {
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn segmented_names_ignore_spelling_convention() {
    let fx = fixture();
    let m = random_model(Preset::RGnnNs, 2, &fx, 5);
    let mut g1 = fx.graph.clone();
    g1.nodes[0].feature = "fooBar".into();
    let mut g2 = fx.graph.clone();
    g2.nodes[0].feature = "foo_bar".into();
    let run = |g| {
        let input = GraphInput::encode(g, &[], &Default::default(), &fx.vocab).unwrap();
        m.node_logits(&Batch::pack(&[&input])).unwrap()
    };
    assert_eq!(run(&g1), run(&g2));
}

#[test]
fn contextual_model_needs_token_positions() {
    let fx = fixture();
    let m = random_model(Preset::RGnnCtx, 2, &fx, 5);
    let input = GraphInput::encode(&fx.graph, &[], &Default::default(), &fx.vocab).unwrap();
    assert!(m.node_logits(&Batch::pack(&[&input])).is_err());
}

#[test]
fn top_k_orders_by_probability_then_index() {
    let got = top_k(&[1.0f64, 3.0, 3.0, -1.0], 3);
    assert_eq!(got.iter().map(|g| g.0).collect::<Vec<_>>(), vec![1, 2, 0]);
    let total: f64 = top_k(&[0.5f64, 0.1, 0.2], 3).iter().map(|g| g.1).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

