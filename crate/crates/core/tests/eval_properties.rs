use std::collections::BTreeMap;

use proptest::prelude::*;

use typeflow::corpusgen::{generate_corpus, GenSpec};
use typeflow::eval::{evaluate, labels_of, throughput_bench, topk_accuracy, Label, LabelKey};
use typeflow::model::{Dims, Model, ModelConfig, Preset};
use typeflow::pipeline::{prepare, SourceFile, SplitSpec, VocabLimits};

const TYPES: [&str; 14] = ["t00", "t01", "t02", "t03", "t04", "t05", "t06", "t07", "t08", "t09", "t10", "t11", "t12", "t13"];

/// Brute-force recount: frequent types by repeated maximum selection, then
/// one pass per category and cutoff.
fn tally(
    preds: &BTreeMap<LabelKey, Vec<String>>,
    labels: &[Label],
    freq: &BTreeMap<String, usize>,
) -> [(usize, Option<(f64, f64)>); 3] {
    let mut left: Vec<(String, usize)> = freq.iter().map(|(k, v)| (k.clone(), *v)).collect();
    let mut frequent = Vec::new();
    while frequent.len() < 10 && !left.is_empty() {
        let mut best = 0;
        for i in 1..left.len() {
            if left[i].1 > left[best].1 || (left[i].1 == left[best].1 && left[i].0 < left[best].0) {
                best = i;
            }
        }
        frequent.push(left.remove(best).0);
    }
    let in_cat = |c: usize, t: &String| c == 0 || (c == 1) == frequent.contains(t);
    let mut out = [(0, None); 3];
    for (c, slot) in out.iter_mut().enumerate() {
        let mine: Vec<&Label> = labels.iter().filter(|l| in_cat(c, &l.ty)).collect();
        let hit = |k: usize| mine.iter().filter(|l| preds[&l.key][..k.min(preds[&l.key].len())].contains(&l.ty)).count();
        let n = mine.len();
        *slot = (n, (n > 0).then(|| (hit(1) as f64 / n as f64, hit(5) as f64 / n as f64)));
    }
    out
}

proptest! {
    #[test]
    fn report_matches_an_independent_tally(
        rows in prop::collection::vec((0usize..3, 0usize..14, prop::collection::vec(0usize..14, 0..7)), 10),
        counts in prop::collection::vec(0usize..50, 14),
    ) {
        let freq: BTreeMap<String, usize> = TYPES.iter().zip(&counts).map(|(t, c)| (t.to_string(), *c)).collect();
        let mut preds = BTreeMap::new();
        let mut labels = Vec::new();
        for (i, (file, ty, ranked)) in rows.iter().enumerate() {
            let key = LabelKey { file: format!("f{file}.ts"), node: i };
            preds.insert(key.clone(), ranked.iter().map(|r| TYPES[*r].to_string()).collect());
            labels.push(Label { key, ty: TYPES[*ty].to_string() });
        }
        let r = topk_accuracy(&preds, &labels, &freq).unwrap();
        let want = tally(&preds, &labels, &freq);
        let got = [
            (r.counts.all, r.all),
            (r.counts.top10_frequent, r.top10_frequent),
            (r.counts.rest, r.rest),
        ];
        for (g, w) in got.iter().zip(&want) {
            prop_assert_eq!(g.0, w.0);
            prop_assert_eq!(g.1.map(|a| (a.top1, a.top5)), w.1);
            if let Some(a) = g.1 {
                prop_assert!(a.top5 >= a.top1);
            }
        }
        prop_assert_eq!(r.counts.top10_frequent + r.counts.rest, r.counts.all);
        let files: std::collections::BTreeSet<_> = rows.iter().map(|r| r.0).collect();
        prop_assert_eq!(r.files_evaluated, files.len());
        prop_assert_eq!(&topk_accuracy(&preds, &labels, &freq).unwrap(), &r);
    }
}

fn sources(n: usize) -> Vec<SourceFile> {
    generate_corpus(&GenSpec::new(21, n))
        .unwrap()
        .files
        .into_iter()
        .map(|f| SourceFile { name: f.name, text: f.source })
        .collect()
}

#[test]
fn model_evaluation_covers_every_label() {
    let (data, _) = prepare(&sources(30), &SplitSpec { seed: 1, ..SplitSpec::default() }, &VocabLimits::default()).unwrap();
    let config = ModelConfig::with_dims(Preset::RGnn, data.vocab.types.len(), 2, Dims::uniform(8));
    let model = Model::<f32>::init(config, data.vocab_sizes(), 0).unwrap();
    let r = evaluate(&model, &data.vocab, &data.test, &data.type_counts, 4).unwrap();
    assert_eq!(r.counts.all, labels_of(&data.test).len());
    assert_eq!(r.files_evaluated, data.test.iter().filter(|e| !e.graph.labels.is_empty()).count());
    assert_eq!(r, evaluate(&model, &data.vocab, &data.test, &data.type_counts, 3).unwrap());
}

#[test]
fn bench_reports_one_sample_per_repeat() {
    let src = sources(8);
    let (data, _) = prepare(&src, &SplitSpec { valid: 0.0, test: 0.0, seed: 1 }, &VocabLimits::default()).unwrap();
    let config = ModelConfig::with_dims(Preset::RGnn, data.vocab.types.len(), 2, Dims::uniform(8));
    let model = Model::<f32>::init(config, data.vocab_sizes(), 0).unwrap();
    let r = throughput_bench(&model, &data.vocab, &src, 64, 6).unwrap();
    assert_eq!(r.files, 8);
    assert_eq!(r.inference_samples.len(), 6);
    assert_eq!(r.extraction_samples.len(), 6);
    assert!(r.inference_mean > 0.0 && r.inference_std >= 0.0);
    assert!(r.inclusive_mean < r.inference_mean);
}
