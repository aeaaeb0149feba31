use std::collections::BTreeSet;

use typeflow::corpusgen::{generate_corpus, GenSpec};
use typeflow::frontend::tokenize;
use typeflow::model::{Batch, Dims, Model, ModelConfig, Preset};
use typeflow::pipeline::{
    build_vocabs, extract_file, load_checkpoint, make_dataset, prepare, save_checkpoint, split_files, train,
    Checkpoint, CheckpointError, Dataset, ExtractedFile, PipelineError, SourceFile, SplitSpec, TrainOptions, Trainer,
    TrainingMeta,
    VocabLimits, MAX_FILE_TOKENS,
};
use typeflow::tfg::{split_edge_feature, validate_tfg};

fn sources(seed: u64, n: usize) -> Vec<SourceFile> {
    generate_corpus(&GenSpec::new(seed, n))
        .unwrap()
        .files
        .into_iter()
        .map(|f| SourceFile { name: f.name, text: f.source })
        .collect()
}

fn dataset(seed: u64, n: usize) -> Dataset {
    prepare(&sources(seed, n), &SplitSpec { seed, ..SplitSpec::default() }, &VocabLimits::default()).unwrap().0
}

fn small(p: Preset, data: &Dataset, k: usize) -> ModelConfig {
    ModelConfig::with_dims(p, data.vocab.types.len(), k, Dims::uniform(12))
}

#[test]
fn split_is_seeded_and_partitions_the_files() {
    let items: Vec<usize> = (0..100).collect();
    let spec = SplitSpec { valid: 0.1, test: 0.1, seed: 4 };
    let a = split_files(items.clone(), &spec);
    assert_eq!(a, split_files(items.clone(), &spec));
    assert_ne!(a, split_files(items.clone(), &SplitSpec { seed: 5, ..spec }));
    assert_eq!((a.0.len(), a.1.len(), a.2.len()), (80, 10, 10));
    let all: BTreeSet<usize> = a.0.iter().chain(&a.1).chain(&a.2).copied().collect();
    assert_eq!(all.len(), 100);
}

#[test]
fn files_over_the_token_limit_are_dropped() {
    let body = |n: usize| "a;".repeat(n / 2) + if n % 2 == 1 { "a" } else { "" };
    assert_eq!(tokenize(&body(MAX_FILE_TOKENS)).unwrap().len(), MAX_FILE_TOKENS);
    let mut src = sources(1, 10);
    src.push(SourceFile { name: "long.ts".into(), text: body(MAX_FILE_TOKENS + 1) });
    src.push(SourceFile { name: "edge.ts".into(), text: body(MAX_FILE_TOKENS) });
    let spec = SplitSpec { valid: 0.0, test: 0.0, seed: 0 };
    let (data, skipped) = prepare(&src, &spec, &VocabLimits::default()).unwrap();
    assert_eq!(skipped.len(), 1);
    assert!(skipped[0].starts_with("long.ts"));
    let ids: Vec<_> = data.train.iter().map(|e| e.file_id.as_str()).collect();
    assert!(ids.contains(&"edge.ts") && !ids.contains(&"long.ts"));
}

#[test]
fn unparsable_files_are_reported_and_skipped() {
    let mut src = sources(2, 6);
    src.push(SourceFile { name: "bad.ts".into(), text: "let = ;".into() });
    let (data, skipped) = prepare(&src, &SplitSpec { valid: 0.0, test: 0.0, seed: 0 }, &VocabLimits::default()).unwrap();
    assert_eq!(skipped.len(), 1);
    assert_eq!(data.train.len(), 6);
}

#[test]
fn extraction_keeps_canonical_labels_and_valid_graphs() {
    let f = extract_file("a.ts", "let xs: Array<number> = make();\nfunction f(a: \"x\"|\"y\"): T { return a; }\n").unwrap();
    assert!(validate_tfg(&f.graph).is_ok());
    let mut labels: Vec<&str> = f.graph.labels.values().map(String::as_str).collect();
    labels.sort();
    assert_eq!(labels, vec!["Array", "string"]);
    for (&node, &tok) in &f.ident_token {
        assert_eq!(f.graph.nodes[node].feature, f.tokens[tok].text);
    }
}

#[test]
fn held_out_graphs_lose_unknown_edges_and_their_duals() {
    let train_f = extract_file("t.ts", "let a: number = 1;\nlet b = a + 2;\n").unwrap();
    let test_f = extract_file("u.ts", "let o: Element = doc.body;\nlet c = o.x + 1;\n").unwrap();
    let vocab = build_vocabs(std::slice::from_ref(&train_f), &VocabLimits::default()).unwrap();
    let data = make_dataset(std::slice::from_ref(&train_f), &[], std::slice::from_ref(&test_f), vocab).unwrap();
    let ex = &data.test[0];
    assert!(ex.removed_edges > 0);
    assert_eq!(ex.graph.edge_count() + ex.removed_edges, test_f.graph.edge_count());
    let kept: BTreeSet<(usize, usize)> = ex.graph.edges.iter().map(|e| (e.src, e.dst)).collect();
    for e in &ex.graph.edges {
        assert!(data.vocab.edge_features.contains(&e.feature));
        assert!(split_edge_feature(&e.feature).is_some());
        assert!(kept.contains(&(e.dst, e.src)), "edge {}->{} lost its dual", e.src, e.dst);
    }
    assert_eq!(data.train[0].removed_edges, 0);
}

#[test]
fn vocabularies_only_see_training_files() {
    let src = sources(3, 40);
    let spec = SplitSpec::default();
    let extracted: Vec<ExtractedFile> = src.iter().map(|s| extract_file(&s.name, &s.text).unwrap()).collect();
    let (train_f, valid_f, test_f) = split_files(extracted, &spec);
    let vocab = build_vocabs(&train_f, &VocabLimits::default()).unwrap();
    let (data, _) = prepare(&src, &spec, &VocabLimits::default()).unwrap();
    assert_eq!(data.vocab, vocab);
    let mut poisoned = valid_f.clone();
    poisoned[0].graph.nodes[0].feature = "neverSeenAnywhereElse".into();
    let again = make_dataset(&train_f, &poisoned, &test_f, build_vocabs(&train_f, &VocabLimits::default()).unwrap()).unwrap();
    assert_eq!(again.vocab, vocab);
    assert!(!again.vocab.names.contains("neverSeenAnywhereElse"));
    let train_types: BTreeSet<&String> = train_f.iter().flat_map(|f| f.graph.labels.values()).collect();
    assert!(vocab.types.entries().iter().all(|t| train_types.contains(t)));
    assert!(!vocab.types.contains("any"));
}

#[test]
fn checkpoints_round_trip_bit_for_bit() {
    let data = dataset(5, 12);
    let model = Model::<f32>::init(small(Preset::RGnnNsCtx, &data, 2), data.vocab_sizes(), 1).unwrap();
    let meta = TrainingMeta { valid_loss: Some(0.1 + 0.2), type_counts: data.type_counts.clone(), ..Default::default() };
    let ck = Checkpoint::from_model(&model, data.vocab.clone(), meta);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tfgm");
    save_checkpoint(&path, &ck).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ck);
    for (name, t) in &ck.params {
        let bits = |x: &[f32]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(t.data()), bits(back.params[name].data()), "{name}");
    }
    assert_eq!(back.model::<f32>().unwrap(), model);
    assert_eq!(back.to_bytes(), ck.to_bytes());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let data = dataset(6, 10);
    let model = Model::<f32>::init(small(Preset::RGnn, &data, 2), data.vocab_sizes(), 1).unwrap();
    let bytes = Checkpoint::from_model(&model, data.vocab.clone(), Default::default()).to_bytes();
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&magic), Err(CheckpointError::Format(_))));
    let mut version = bytes.clone();
    version[4] = 99;
    assert!(matches!(Checkpoint::from_bytes(&version), Err(CheckpointError::Format(_))));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() / 2]), Err(CheckpointError::Format(_))));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..3]), Err(CheckpointError::Format(_))));
    let mut flipped = bytes.clone();
    let at = bytes.len() - 20;
    flipped[at] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(CheckpointError::Integrity(_))));
    let mut meta = bytes.clone();
    let pos = bytes.windows(6).position(|w| w == b"\"seed\"").unwrap();
    meta[pos + 1] = b'z';
    assert!(Checkpoint::from_bytes(&meta).is_err());
}

#[test]
fn loss_falls_over_the_first_ten_steps() {
    let data = dataset(7, 20);
    let model = Model::<f32>::init(small(Preset::RGnn, &data, 2), data.vocab_sizes(), 3).unwrap();
    let mut trainer = Trainer::new(model, 1e-3);
    let batch: Vec<_> = data.train.iter().take(8).collect();
    let losses: Vec<f64> = (0..11).map(|_| trainer.step(&batch).unwrap().loss).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

#[test]
fn logits_do_not_depend_on_batch_composition() {
    let data = dataset(8, 20);
    for p in [Preset::RGnn, Preset::RGat, Preset::RGnnNsCtx] {
        let model = Model::<f32>::init(small(p, &data, 3), data.vocab_sizes(), 2).unwrap();
        let inputs: Vec<_> = data.train.iter().take(6).map(|e| &e.input).collect();
        let together = model.node_logits(&Batch::pack(&inputs)).unwrap();
        let mut row = 0;
        for input in &inputs {
            let alone = model.node_logits(&Batch::pack(&[input])).unwrap();
            for r in 0..alone.rows() {
                for (a, b) in alone.row(r).iter().zip(together.row(row + r)) {
                    assert!((a - b).abs() <= 1e-5, "{p}: {a} vs {b}");
                }
            }
            row += alone.rows();
        }
    }
}

#[test]
fn parallel_gradients_match_packed_gradients() {
    let data = dataset(9, 12);
    let model = Model::<f64>::init(small(Preset::RGnn, &data, 2), data.vocab_sizes(), 2).unwrap();
    let batch: Vec<_> = data.train.iter().take(5).collect();
    let mut t = Trainer::new(model, 1e-3);
    let (s1, g1) = t.gradients(&batch).unwrap();
    t.parallel = true;
    let (s2, g2) = t.gradients(&batch).unwrap();
    assert!((s1.loss - s2.loss).abs() < 1e-10);
    assert_eq!(s1.labels, s2.labels);
    for (name, a) in &g1 {
        for (x, y) in a.data().iter().zip(g2[name].data()) {
            assert!((x - y).abs() < 1e-10, "{name}");
        }
    }
}

#[test]
fn zero_epochs_yields_the_initialisation() {
    let data = dataset(10, 20);
    let config = small(Preset::RGnn, &data, 2);
    let opts = TrainOptions { epochs: 0, seed: 11, ..TrainOptions::default() };
    let mut lines = Vec::new();
    let out = train::<f32>(config.clone(), &data, &opts, |r| lines.push(r.to_json_line())).unwrap();
    assert_eq!(out.model, Model::init(config, data.vocab_sizes(), 11).unwrap());
    assert_eq!(out.checkpoint.meta.epoch, 0);
    assert!(out.checkpoint.meta.valid_loss.unwrap() > 0.0);
    assert_eq!(lines.len(), 1);
    let v: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    for key in ["epoch", "split", "loss", "top1", "top5", "wall_seconds"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}

#[test]
fn training_keeps_the_best_validation_epoch_and_is_deterministic() {
    let data = dataset(12, 30);
    let config = small(Preset::RGnn, &data, 2);
    let opts = TrainOptions { epochs: 3, batch_size: 8, lr: 5e-3, seed: 2, parallel: false };
    let a = train::<f32>(config.clone(), &data, &opts, |_| {}).unwrap();
    let b = train::<f32>(config, &data, &opts, |_| {}).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    let valid: Vec<_> = a.log.iter().filter(|r| r.split == "valid").collect();
    assert_eq!(valid.len(), 4);
    let best = valid.iter().min_by(|x, y| x.loss.total_cmp(&y.loss)).unwrap();
    assert_eq!(a.checkpoint.meta.epoch, best.epoch);
    assert_eq!(a.checkpoint.meta.valid_loss, Some(best.loss));
    assert_eq!(a.log.iter().filter(|r| r.split == "train").count(), 3);
}

#[test]
fn non_finite_loss_is_a_divergence() {
    let data = dataset(13, 20);
    let config = small(Preset::RGnn, &data, 2);
    let opts = TrainOptions { epochs: 3, batch_size: 4, lr: 1e30, seed: 1, parallel: false };
    match train::<f32>(config, &data, &opts, |_| {}) {
        Err(PipelineError::Divergence(d)) => assert!(!d.loss.is_finite()),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.log.len())),
    }
}
