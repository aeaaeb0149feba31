//! Top-k accuracy reports and the inference throughput benchmark.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::model::{top_k, Batch, Model, ModelError};
use crate::numeric::Scalar;
use crate::pipeline::{example, extract_file, Example, PipelineError, SourceFile};
use crate::vocab::VocabSet;

/// Number of most frequent training types in the frequent category.
pub const FREQUENT_TYPES: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no prediction for labeled node {node} of {file}")]
    MissingPrediction { file: String, node: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// A labeled node: file and node index.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabelKey {
    pub file: String,
    pub node: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub key: LabelKey,
    pub ty: String,
}

/// Accuracy in one category, as fractions in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub top1: f64,
    pub top5: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub all: usize,
    pub top10_frequent: usize,
    pub rest: usize,
}

/// Accuracy over all labels and over the frequent/rare split. A category
/// without labels has no accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub all: Option<Accuracy>,
    pub top10_frequent: Option<Accuracy>,
    pub rest: Option<Accuracy>,
    pub counts: CategoryCounts,
    pub files_evaluated: usize,
}

impl MetricsReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// The `FREQUENT_TYPES` most frequent types; ties go to the smaller name.
pub fn frequent_types(freq: &BTreeMap<String, usize>) -> BTreeSet<String> {
    let mut ranked: Vec<(&String, &usize)> = freq.iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().take(FREQUENT_TYPES).map(|(t, _)| t.clone()).collect()
}

/// Score ranked predictions (most likely first) against labels. Only the
/// first five entries of a ranking matter.
pub fn topk_accuracy(
    predictions: &BTreeMap<LabelKey, Vec<String>>,
    labels: &[Label],
    freq: &BTreeMap<String, usize>,
) -> Result<MetricsReport, EvalError> {
    let frequent = frequent_types(freq);
    // hits: [top1, top5] per category all / frequent / rest
    let mut hits = [[0usize; 2]; 3];
    let mut counts = [0usize; 3];
    let mut files = BTreeSet::new();
    for l in labels {
        let ranked = predictions
            .get(&l.key)
            .ok_or_else(|| EvalError::MissingPrediction { file: l.key.file.clone(), node: l.key.node })?;
        let cat = if frequent.contains(&l.ty) { 1 } else { 2 };
        let h1 = ranked.first() == Some(&l.ty);
        let h5 = ranked.iter().take(5).any(|t| *t == l.ty);
        for c in [0, cat] {
            counts[c] += 1;
            hits[c][0] += usize::from(h1);
            hits[c][1] += usize::from(h5);
        }
        files.insert(&l.key.file);
    }
    let acc = |c: usize| {
        (counts[c] > 0).then(|| Accuracy {
            top1: hits[c][0] as f64 / counts[c] as f64,
            top5: hits[c][1] as f64 / counts[c] as f64,
        })
    };
    Ok(MetricsReport {
        all: acc(0),
        top10_frequent: acc(1),
        rest: acc(2),
        counts: CategoryCounts { all: counts[0], top10_frequent: counts[1], rest: counts[2] },
        files_evaluated: files.len(),
    })
}

/// Every label of `examples`, including those outside the type vocabulary.
pub fn labels_of(examples: &[Example]) -> Vec<Label> {
    examples
        .iter()
        .flat_map(|e| {
            e.graph.labels.iter().map(|(&node, ty)| Label {
                key: LabelKey { file: e.file_id.clone(), node },
                ty: ty.clone(),
            })
        })
        .collect()
}

/// The `k` most likely types with their probabilities, for each labeled
/// node of each file.
pub fn predict_labeled<T: Scalar>(
    model: &Model<T>,
    vocab: &VocabSet,
    examples: &[Example],
    batch_size: usize,
    k: usize,
) -> Result<BTreeMap<LabelKey, Vec<(String, f64)>>, ModelError> {
    let mut out = BTreeMap::new();
    for chunk in examples.chunks(batch_size.max(1)) {
        let inputs: Vec<_> = chunk.iter().map(|e| &e.input).collect();
        let batch = Batch::pack(&inputs);
        if batch.all_labels.is_empty() {
            continue;
        }
        let logits = model.label_logits(&batch)?;
        for (r, &(global, _)) in batch.all_labels.iter().enumerate() {
            let g = batch.offsets.partition_point(|&o| o <= global) - 1;
            let key = LabelKey { file: batch.file_ids[g].clone(), node: global - batch.offsets[g] };
            let ranked = top_k(logits.row(r), k)
                .into_iter()
                .map(|(i, p)| (vocab.types.lookup(i).unwrap_or_default().to_string(), p.to_f64().unwrap_or(f64::NAN)))
                .collect();
            out.insert(key, ranked);
        }
    }
    Ok(out)
}

/// Predict and score `examples` against the training type frequencies.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    vocab: &VocabSet,
    examples: &[Example],
    freq: &BTreeMap<String, usize>,
    batch_size: usize,
) -> Result<MetricsReport, EvalError> {
    let predictions = predict_labeled(model, vocab, examples, batch_size, 5)?
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().map(|p| p.0).collect()))
        .collect();
    topk_accuracy(&predictions, &labels_of(examples), freq)
}

fn pct(a: Option<Accuracy>, f: fn(&Accuracy) -> f64) -> String {
    a.map_or_else(|| "-".to_string(), |a| format!("{:.2}", 100.0 * f(&a)))
}

/// Aligned text table, one row per named report: top-1 and top-5 (in %)
/// for all types, the frequent types and the rest.
pub fn render_table(rows: &[(String, MetricsReport)]) -> String {
    let header = ["Model", "All@1", "All@5", "Top10@1", "Top10@5", "Rest@1", "Rest@5", "Labels", "Files"];
    let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for (name, r) in rows {
        cells.push(vec![
            name.clone(),
            pct(r.all, |a| a.top1),
            pct(r.all, |a| a.top5),
            pct(r.top10_frequent, |a| a.top1),
            pct(r.top10_frequent, |a| a.top5),
            pct(r.rest, |a| a.top1),
            pct(r.rest, |a| a.top5),
            r.counts.all.to_string(),
            r.files_evaluated.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..header.len()).map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    out
}

/// Grouped bar chart of top-1 and top-5 accuracy over all types, one group
/// per named report (for example one per `K`).
pub fn render_svg(rows: &[(String, MetricsReport)]) -> String {
    let (w, h, left, bottom, top) = (120.0 * rows.len().max(1) as f64 + 80.0, 320.0, 60.0, 40.0, 20.0);
    let plot_h = h - bottom - top;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for tick in 0..=5 {
        let v = tick as f64 * 20.0;
        let y = top + plot_h * (1.0 - v / 100.0);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/>"##, w - 10.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v}</text>"#, left - 6.0, y + 4.0);
    }
    for (i, (name, r)) in rows.iter().enumerate() {
        let x0 = left + 20.0 + 120.0 * i as f64;
        let acc = r.all.unwrap_or(Accuracy { top1: 0.0, top5: 0.0 });
        for (j, (v, color)) in [(acc.top1, "#4878a8"), (acc.top5, "#e8a040")].into_iter().enumerate() {
            let bh = plot_h * v;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="40" height="{bh}" fill="{color}"><title>{name} top-{}: {:.2}%</title></rect>"#,
                x0 + 42.0 * j as f64,
                top + plot_h - bh,
                if j == 0 { 1 } else { 5 },
                100.0 * v
            );
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, x0 + 41.0, h - bottom + 18.0, xml_escape(name));
    }
    let _ = writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">accuracy (%)</text>"#, top + plot_h / 2.0, top + plot_h / 2.0);
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Files per second for `files` processed in `seconds`.
pub fn files_per_second(files: usize, seconds: f64) -> f64 {
    files as f64 / seconds
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub files: usize,
    pub batch_size: usize,
    pub repeats: usize,
    /// Files per second of graph-batch inference, one sample per repeat.
    pub inference_samples: Vec<f64>,
    pub inference_mean: f64,
    pub inference_std: f64,
    /// Files per second of source-to-graph extraction and encoding.
    pub extraction_samples: Vec<f64>,
    pub extraction_mean: f64,
    pub extraction_std: f64,
    /// Files per second with extraction and inference together.
    pub inclusive_samples: Vec<f64>,
    pub inclusive_mean: f64,
    pub inclusive_std: f64,
}

/// Time `repeats` passes over `sources` after one untimed warm-up pass.
/// Every pass extracts and encodes each file (timed as extraction), then
/// runs the model over batches of `batch_size` graphs (timed as inference).
/// Runs on the calling thread.
pub fn throughput_bench<T: Scalar>(
    model: &Model<T>,
    vocab: &VocabSet,
    sources: &[SourceFile],
    batch_size: usize,
    repeats: usize,
) -> Result<BenchReport, EvalError> {
    let pass = || -> Result<(f64, f64), EvalError> {
        let t0 = Instant::now();
        let mut examples = Vec::with_capacity(sources.len());
        for s in sources {
            let f = extract_file(&s.name, &s.text)?;
            examples.push(example(&f, vocab, true)?);
        }
        let extraction = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        for chunk in examples.chunks(batch_size.max(1)) {
            let inputs: Vec<_> = chunk.iter().map(|e| &e.input).collect();
            std::hint::black_box(model.node_logits(&Batch::pack(&inputs))?);
        }
        Ok((extraction, t1.elapsed().as_secs_f64()))
    };
    pass()?;
    let (mut ext, mut inf, mut inc) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..repeats {
        let (e, i) = pass()?;
        ext.push(files_per_second(sources.len(), e));
        inf.push(files_per_second(sources.len(), i));
        inc.push(files_per_second(sources.len(), e + i));
    }
    let ((im, is), (em, es), (cm, cs)) = (mean_std(&inf), mean_std(&ext), mean_std(&inc));
    Ok(BenchReport {
        files: sources.len(),
        batch_size,
        repeats,
        inference_samples: inf,
        inference_mean: im,
        inference_std: is,
        extraction_samples: ext,
        extraction_mean: em,
        extraction_std: es,
        inclusive_samples: inc,
        inclusive_mean: cm,
        inclusive_std: cs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(n: usize) -> LabelKey {
        LabelKey { file: "a.ts".into(), node: n }
    }

    fn one(ranked: &[&str], ty: &str) -> MetricsReport {
        let preds = BTreeMap::from([(key(0), ranked.iter().map(|s| s.to_string()).collect())]);
        let freq = BTreeMap::from([("number".to_string(), 3)]);
        topk_accuracy(&preds, &[Label { key: key(0), ty: ty.into() }], &freq).unwrap()
    }

    #[test]
    fn correct_first_is_a_hit_at_one_and_five() {
        let r = one(&["number", "string"], "number");
        assert_eq!(r.all, Some(Accuracy { top1: 1.0, top5: 1.0 }));
        assert_eq!(r.rest, None);
        assert_eq!(r.counts, CategoryCounts { all: 1, top10_frequent: 1, rest: 0 });
    }

    #[test]
    fn correct_third_is_a_hit_at_five_only() {
        let r = one(&["string", "boolean", "number"], "number");
        assert_eq!(r.all, Some(Accuracy { top1: 0.0, top5: 1.0 }));
    }

    #[test]
    fn missing_prediction_is_an_error() {
        let err = topk_accuracy(&BTreeMap::new(), &[Label { key: key(1), ty: "number".into() }], &BTreeMap::new());
        assert!(matches!(err, Err(EvalError::MissingPrediction { node: 1, .. })));
    }

    #[test]
    fn throughput_arithmetic() {
        assert_eq!(files_per_second(100, 2.0), 50.0);
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(m, 3.5);
        assert!((s - 1.8708286933869707).abs() < 1e-12);
    }

    #[test]
    fn table_marks_empty_categories() {
        let r = one(&["number"], "number");
        let t = render_table(&[("R-GNN".into(), r)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[2].contains("100.00") && lines[2].contains(" -"));
        assert!(render_svg(&[("K=2".into(), one(&["x"], "number"))]).starts_with("<svg"));
    }
}
