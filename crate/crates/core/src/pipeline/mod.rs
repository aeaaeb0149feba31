//! From annotated source files to trained checkpoints.

mod checkpoint;
mod data;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, TrainingMeta, FORMAT_VERSION, MAGIC};
pub use data::{
    build_vocabs, example, extract_file, extract_sources, load_sources, make_dataset, prepare, split_files, Dataset, Example, ExtractedFile,
    SourceFile, SplitSpec, VocabLimits,
};
pub use train::{
    evaluate_loss, train, DivergenceError, LogRecord, SplitScore, StepStats, TrainOptions, TrainOutcome, Trainer,
};

use crate::frontend::FrontendError;
use crate::model::ModelError;
use crate::tfg::ExtractError;
use crate::vocab::VocabError;

/// Files with more tokens than this are left out of every split.
pub const MAX_FILE_TOKENS: usize = 5000;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{file}: {source}")]
    Frontend { file: String, source: FrontendError },
    #[error("{file}: {source}")]
    Extract { file: String, source: ExtractError },
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("no usable training examples")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Canonical form of an annotation, or `None` when the label is dropped.
///
/// Function types become their return type, type arguments and array
/// suffixes are removed (`T[]` is `Array`), literal types become their base
/// type, and unions keep a label only when every member agrees. Names of a
/// single character and `any` are rejected.
pub fn preprocess_type_label(raw: &str) -> Option<String> {
    let s = raw.trim();
    if let Some(i) = top_level_find(s, "=>") {
        return preprocess_type_label(&s[i + 2..]);
    }
    let members = top_level_split(s, '|');
    if members.len() > 1 {
        let canon: Vec<Option<String>> = members.iter().map(|m| preprocess_type_label(m)).collect();
        let first = canon[0].clone()?;
        return canon.iter().all(|c| c.as_deref() == Some(first.as_str())).then_some(first);
    }
    if s.starts_with('(') && s.ends_with(')') && top_level_find(&s[1..s.len() - 1], ")").is_none() {
        return preprocess_type_label(&s[1..s.len() - 1]);
    }
    if s.ends_with("[]") {
        return Some("Array".to_string());
    }
    let base = match s.find('<') {
        Some(i) => s[..i].trim(),
        None => s,
    };
    let canon = match base.chars().next()? {
        '"' | '\'' | '`' => "string".to_string(),
        c if c.is_ascii_digit() || c == '-' => "number".to_string(),
        _ if base == "true" || base == "false" => "boolean".to_string(),
        _ => base.to_string(),
    };
    let valid = canon.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '$' || c == '.');
    (valid && canon.chars().count() > 1 && canon != "any").then_some(canon)
}

fn top_level_find(s: &str, pat: &str) -> Option<usize> {
    let mut depth = 0i32;
    let mut quote: Option<char> = None;
    for (i, c) in s.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None => match c {
                '"' | '\'' | '`' => quote = Some(c),
                '<' | '(' | '[' | '{' => depth += 1,
                '>' if depth > 0 && !s[..i].ends_with('=') => depth -= 1,
                ')' | ']' | '}' => depth -= 1,
                _ if depth == 0 && s[i..].starts_with(pat) => return Some(i),
                _ => {}
            },
        }
    }
    None
}

fn top_level_split(s: &str, sep: char) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = s;
    let pat = sep.to_string();
    while let Some(i) = top_level_find(rest, &pat) {
        out.push(&rest[..i]);
        rest = &rest[i + 1..];
    }
    out.push(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::preprocess_type_label as p;

    #[test]
    fn documented_examples() {
        assert_eq!(p("Array<number>").as_deref(), Some("Array"));
        assert_eq!(p("\"a\"|\"b\"").as_deref(), Some("string"));
        assert_eq!(p("T"), None);
    }

    #[test]
    fn other_forms() {
        assert_eq!(p("(a: number) => string").as_deref(), Some("string"));
        assert_eq!(p("() => Promise<void>").as_deref(), Some("Promise"));
        assert_eq!(p("number[]").as_deref(), Some("Array"));
        assert_eq!(p("1|2").as_deref(), Some("number"));
        assert_eq!(p("true").as_deref(), Some("boolean"));
        assert_eq!(p("Map<string, Array<number>>").as_deref(), Some("Map"));
        assert_eq!(p("string|number"), None);
        assert_eq!(p("any"), None);
        assert_eq!(p("HTMLElement").as_deref(), Some("HTMLElement"));
    }
}
