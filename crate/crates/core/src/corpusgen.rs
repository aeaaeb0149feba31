//! Synthetic annotated programs with known type provenance.
//!
//! Every labeled identifier draws its type from a skewed palette and its
//! evidence from one signal class: a literal (possibly through a chain of
//! copies), a type-correlated name, a property read whose name belongs to
//! the type, or the return of a function declared in the same file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::frontend::Span;

pub const MAX_TOKENS: usize = 5000;

// Generous upper bound on the tokens one generated statement can take.
const TOKENS_PER_STATEMENT: usize = 30;

#[derive(Debug, thiserror::Error)]
#[error("impossible corpus spec: {0}")]
pub struct SpecError(pub String);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalClass {
    Literal,
    NameHint,
    Property,
    Call,
}

impl SignalClass {
    pub const ALL: [SignalClass; 4] = [SignalClass::Literal, SignalClass::NameHint, SignalClass::Property, SignalClass::Call];

    pub fn as_str(self) -> &'static str {
        match self {
            SignalClass::Literal => "literal",
            SignalClass::NameHint => "name_hint",
            SignalClass::Property => "property",
            SignalClass::Call => "call",
        }
    }
}

/// Target fraction of labels per signal class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalMix {
    #[serde(default)]
    pub literal: f64,
    #[serde(default)]
    pub name_hint: f64,
    #[serde(default)]
    pub property: f64,
    #[serde(default)]
    pub call: f64,
}

impl SignalMix {
    pub fn weight(&self, c: SignalClass) -> f64 {
        match c {
            SignalClass::Literal => self.literal,
            SignalClass::NameHint => self.name_hint,
            SignalClass::Property => self.property,
            SignalClass::Call => self.call,
        }
    }
}

impl Default for SignalMix {
    fn default() -> Self {
        SignalMix { literal: 0.4, name_hint: 0.0, property: 0.3, call: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaletteEntry {
    #[serde(rename = "type")]
    pub ty: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub seed: u64,
    pub files: usize,
    #[serde(default = "default_functions")]
    pub functions_per_file: (usize, usize),
    #[serde(default = "default_statements")]
    pub statements_per_function: (usize, usize),
    #[serde(default = "default_palette")]
    pub palette: Vec<PaletteEntry>,
    #[serde(default)]
    pub signal_mix: SignalMix,
}

fn default_functions() -> (usize, usize) {
    (2, 4)
}

fn default_statements() -> (usize, usize) {
    (3, 6)
}

fn default_palette() -> Vec<PaletteEntry> {
    zipf_palette(&KNOWN_TYPES.iter().map(|t| t.name).collect::<Vec<_>>(), 1.0)
}

impl GenSpec {
    /// Defaults, also applied to fields missing from JSON: 2–4 functions of
    /// 3–6 statements over the full palette with Zipf exponent 1.
    pub fn new(seed: u64, files: usize) -> Self {
        GenSpec {
            seed,
            files,
            functions_per_file: default_functions(),
            statements_per_function: default_statements(),
            palette: default_palette(),
            signal_mix: SignalMix::default(),
        }
    }

    pub fn with_mix(mut self, mix: SignalMix) -> Self {
        self.signal_mix = mix;
        self
    }

    pub fn from_json_str(s: &str) -> Result<GenSpec, SpecError> {
        serde_json::from_str(s).map_err(|e| SpecError(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let (flo, fhi) = self.functions_per_file;
        let (slo, shi) = self.statements_per_function;
        if flo == 0 || flo > fhi || slo == 0 || slo > shi {
            return Err(SpecError("ranges must be non-empty and start at 1 or more".into()));
        }
        if fhi * (shi + 3) * TOKENS_PER_STATEMENT > MAX_TOKENS {
            return Err(SpecError(format!("{fhi} functions of {shi} statements may exceed {MAX_TOKENS} tokens")));
        }
        if self.palette.len() < 12 {
            return Err(SpecError(format!("palette has {} types, at least 12 required", self.palette.len())));
        }
        let mut seen = std::collections::HashSet::new();
        for p in &self.palette {
            if type_info(&p.ty).is_none() {
                return Err(SpecError(format!("no generator support for type {:?}", p.ty)));
            }
            if !seen.insert(&p.ty) {
                return Err(SpecError(format!("type {:?} listed twice", p.ty)));
            }
        }
        check_distribution("palette", self.palette.iter().map(|p| p.weight))?;
        check_distribution("signal mix", SignalClass::ALL.iter().map(|&c| self.signal_mix.weight(c)))?;
        for p in self.palette.iter().filter(|p| p.weight > 0.0) {
            let info = type_info(&p.ty).expect("checked above");
            let m = &self.signal_mix;
            if !((info.literal && m.literal > 0.0) || m.property > 0.0 || m.name_hint > 0.0) {
                return Err(SpecError(format!("no signal class in the mix can ground type {:?}", p.ty)));
            }
        }
        Ok(())
    }
}

fn check_distribution(what: &str, ws: impl Iterator<Item = f64>) -> Result<(), SpecError> {
    let ws: Vec<f64> = ws.collect();
    if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(SpecError(format!("{what} weights must be finite and non-negative")));
    }
    let total: f64 = ws.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(SpecError(format!("{what} weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Weights proportional to `1 / rank^s`, normalised.
pub fn zipf_palette(types: &[&str], s: f64) -> Vec<PaletteEntry> {
    let raw: Vec<f64> = (1..=types.len()).map(|r| 1.0 / (r as f64).powf(s)).collect();
    let total: f64 = raw.iter().sum();
    types.iter().zip(raw).map(|(t, w)| PaletteEntry { ty: t.to_string(), weight: w / total }).collect()
}

struct TypeInfo {
    name: &'static str,
    /// Annotation spellings; all preprocess to `name`.
    spellings: &'static [&'static str],
    literal: bool,
    name_heads: &'static [&'static str],
    properties: &'static [&'static str],
}

const KNOWN_TYPES: &[TypeInfo] = &[
    TypeInfo {
        name: "number",
        spellings: &["number"],
        literal: true,
        name_heads: &["count", "num", "len", "size", "index", "total", "width", "offset"],
        properties: &["length", "count", "width", "height", "total"],
    },
    TypeInfo {
        name: "string",
        spellings: &["string", "\"on\"|\"off\""],
        literal: true,
        name_heads: &["name", "text", "label", "title", "msg", "str", "path", "url"],
        properties: &["title", "label", "text", "href", "caption"],
    },
    TypeInfo {
        name: "boolean",
        spellings: &["boolean"],
        literal: true,
        name_heads: &["flag", "enabled", "visible", "done", "valid", "ready", "active"],
        properties: &["enabled", "visible", "checked", "disabled", "hidden"],
    },
    TypeInfo {
        name: "Array",
        spellings: &["Array<number>", "string[]", "Array<string>"],
        literal: false,
        name_heads: &["list", "items", "arr", "values", "entries", "rows"],
        properties: &["items", "entries", "values", "children"],
    },
    TypeInfo {
        name: "HTMLElement",
        spellings: &["HTMLElement"],
        literal: false,
        name_heads: &["elem", "div", "panel", "container", "widget"],
        properties: &["body", "container", "panel", "offsetParent"],
    },
    TypeInfo {
        name: "Promise",
        spellings: &["Promise<void>", "Promise<string>"],
        literal: false,
        name_heads: &["promise", "future", "pending", "deferred"],
        properties: &["promise", "then", "deferred", "pendingLoad"],
    },
    TypeInfo {
        name: "RegExp",
        spellings: &["RegExp"],
        literal: true,
        name_heads: &["regex", "pattern", "re", "matcher"],
        properties: &["pattern", "regex", "matcher"],
    },
    TypeInfo {
        name: "Element",
        spellings: &["Element"],
        literal: false,
        name_heads: &["element", "node", "target", "parent"],
        properties: &["firstElementChild", "nextSibling", "parentNode", "target"],
    },
    TypeInfo {
        name: "Error",
        spellings: &["Error"],
        literal: false,
        name_heads: &["err", "error", "failure", "exception"],
        properties: &["error", "cause", "failure", "lastError"],
    },
    TypeInfo {
        name: "Object",
        spellings: &["Object"],
        literal: false,
        name_heads: &["obj", "config", "options", "settings", "props"],
        properties: &["options", "config", "settings", "meta"],
    },
    TypeInfo {
        name: "Buffer",
        spellings: &["Buffer"],
        literal: false,
        name_heads: &["buf", "buffer", "chunk", "payload"],
        properties: &["buffer", "chunk", "payload", "rawData"],
    },
    TypeInfo {
        name: "NodeList",
        spellings: &["NodeList"],
        literal: false,
        name_heads: &["nodes", "matches", "selection", "elements"],
        properties: &["childNodes", "matches", "selection", "nodes"],
    },
    TypeInfo {
        name: "symbol",
        spellings: &["symbol"],
        literal: false,
        name_heads: &["sym", "symbol", "tag", "marker"],
        properties: &["symbol", "marker", "iterator", "tag"],
    },
    TypeInfo {
        name: "bigint",
        spellings: &["bigint"],
        literal: false,
        name_heads: &["big", "huge", "wide", "amount"],
        properties: &["amount", "big", "balance", "nanos"],
    },
    TypeInfo {
        name: "Uint8Array",
        spellings: &["Uint8Array"],
        literal: false,
        name_heads: &["bytes", "octets", "raw", "digest"],
        properties: &["bytes", "digest", "octets", "rawBytes"],
    },
];

/// The types the generator can produce, in default palette order.
pub fn known_types() -> Vec<&'static str> {
    KNOWN_TYPES.iter().map(|t| t.name).collect()
}

fn type_info(name: &str) -> Option<&'static TypeInfo> {
    KNOWN_TYPES.iter().find(|t| t.name == name)
}

// Shared across types so the modifier half of a hinted name carries no signal.
const MODIFIERS: &[&str] = &[
    "item", "user", "row", "page", "file", "col", "max", "cur", "last", "first", "old", "tmp", "main", "local",
    "global", "next", "prev", "base", "top", "left", "right", "inner", "outer", "src", "dst", "init", "final",
    "total", "parent", "child", "start", "end", "min", "default", "extra", "primary", "backup", "active", "cached",
    "shared", "input", "output", "temp", "own", "peer", "remote", "home", "work", "day", "week", "month", "year",
    "red", "blue", "green", "north", "south", "east", "west", "alpha",
];
const NEUTRAL: &[&str] = &["val", "res", "data", "tmp", "item", "cur", "ref", "arg", "v", "acc", "out", "elt"];
const OBJECTS: &[&str] = &["cfg", "ctx", "opts", "state", "env", "model", "doc", "app", "store", "conf"];
const PROVIDERS: &[&str] = &["step", "proc", "task", "job", "handle", "work", "run", "exec"];
const OPAQUE: &[&str] = &["load", "read", "lookup", "resolve", "fetch", "pick", "take", "query"];
const WORDS: &[&str] = &["alpha", "beta", "gamma", "hello", "world", "ok", "north", "data", "key", "main"];

/// A hinted name for `ty`: modifier plus head, camelCase or snake_case.
fn hinted_name(rng: &mut ChaCha8Rng, info: &TypeInfo) -> String {
    let m = MODIFIERS.choose(rng).expect("non-empty");
    let h = info.name_heads.choose(rng).expect("non-empty");
    if rng.random_bool(0.3) {
        format!("{m}_{h}")
    } else {
        let mut c = h.chars();
        let first = c.next().expect("non-empty").to_ascii_uppercase();
        format!("{m}{first}{}", c.as_str())
    }
}

/// Whether `name` could have come from `hinted_name` for `ty`.
pub fn is_hinted_name(name: &str, ty: &str) -> bool {
    let Some(info) = type_info(ty) else { return false };
    let lower = name.to_ascii_lowercase().replace('_', "");
    MODIFIERS.iter().any(|m| info.name_heads.iter().any(|h| lower == format!("{m}{h}")))
}

fn literal_for(rng: &mut ChaCha8Rng, ty: &str) -> String {
    match ty {
        "number" => {
            if rng.random_bool(0.7) {
                rng.random_range(0..1000).to_string()
            } else {
                format!("{}.{}", rng.random_range(0..100), rng.random_range(1..10))
            }
        }
        "string" => format!("\"{}\"", WORDS.choose(rng).expect("non-empty")),
        "boolean" => if rng.random_bool(0.5) { "true" } else { "false" }.to_string(),
        "RegExp" => ["/ab+c/", "/^[a-z]+$/i", "/\\d+/g", "/x?y*/"].choose(rng).expect("non-empty").to_string(),
        _ => unreachable!("{ty} has no literal form"),
    }
}

/// Where a labeled identifier's value comes from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Literal(String),
    Copy(String),
    Property(String),
    Call(String),
    Opaque(String),
    Parameter,
    /// A function's return, carried by the named local.
    Returns(String),
}

/// Generator-side record of one labeled identifier.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub function: usize,
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
    pub class: SignalClass,
    pub origin: Origin,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    /// Byte span of the identifier in the annotated source.
    pub span: Span,
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
    pub signal_class: SignalClass,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratedFile {
    pub name: String,
    pub source: String,
    pub labels: Vec<LabelRecord>,
    pub facts: Vec<Fact>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub file: String,
    pub labels: Vec<LabelRecord>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestFile>,
}

impl Manifest {
    pub fn from_json_str(s: &str) -> Result<Manifest, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    /// Signal class of each label of `file`, keyed by identifier span in the
    /// source with annotations removed.
    pub fn classes_by_stripped_span(&self, file: &str, source: &str) -> BTreeMap<Span, SignalClass> {
        let Some(entry) = self.files.iter().find(|f| f.file == file) else { return BTreeMap::new() };
        let Ok((_, spans)) = crate::frontend::strip_annotations(source) else { return BTreeMap::new() };
        let mut labels: Vec<&LabelRecord> = entry.labels.iter().collect();
        labels.sort_by_key(|l| l.span);
        // Stripping preserves the order of annotated identifiers.
        spans.keys().zip(labels).map(|(s, l)| (*s, l.signal_class)).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub files: Vec<GeneratedFile>,
}

impl Corpus {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            files: self.files.iter().map(|f| ManifestFile { file: f.name.clone(), labels: f.labels.clone() }).collect(),
        }
    }

    /// Write every file plus `manifest.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for f in &self.files {
            std::fs::write(dir.join(&f.name), &f.source)?;
        }
        std::fs::write(dir.join("manifest.json"), self.manifest().to_json_string())
    }
}

pub fn generate_corpus(spec: &GenSpec) -> Result<Corpus, SpecError> {
    spec.validate()?;
    let files = (0..spec.files).into_par_iter().map(|i| generate_file(spec, i)).collect();
    Ok(Corpus { files })
}

/// File `index` of the corpus; depends only on the spec and the index.
pub fn generate_file(spec: &GenSpec, index: usize) -> GeneratedFile {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let mut g = FileGen::new(spec, rng);
    g.run();
    let (source, labels) = g.render();
    GeneratedFile { name: format!("f{index:05}.ts"), source, labels, facts: g.facts }
}

struct Function {
    name: String,
    /// Annotation spelling and type of each parameter.
    params: Vec<(String, String, String)>,
    returns: Option<String>,
    body: Vec<Stmt>,
}

enum Stmt {
    /// `kw name: annot = init;` labeling fact `fact`.
    Decl { kw: &'static str, fact: usize, annot: String, init: String },
    Line(String),
    If { cond: String, body: String },
    Return(String),
}

struct FileGen<'s> {
    spec: &'s GenSpec,
    rng: ChaCha8Rng,
    functions: Vec<Function>,
    facts: Vec<Fact>,
    counter: usize,
}

impl<'s> FileGen<'s> {
    fn new(spec: &'s GenSpec, rng: ChaCha8Rng) -> Self {
        FileGen { spec, rng, functions: Vec::new(), facts: Vec::new(), counter: 0 }
    }

    fn draw_type(&mut self) -> &'static TypeInfo {
        let p = &self.spec.palette;
        let total: f64 = p.iter().map(|e| e.weight).sum();
        let mut x = self.rng.random_range(0.0..total);
        for e in p {
            if x < e.weight {
                return type_info(&e.ty).expect("validated");
            }
            x -= e.weight;
        }
        type_info(&p.iter().rev().find(|e| e.weight > 0.0).expect("validated").ty).expect("validated")
    }

    fn spelling(&mut self, info: &TypeInfo) -> String {
        info.spellings.choose(&mut self.rng).expect("non-empty").to_string()
    }

    fn fresh(&mut self, base: &str) -> String {
        self.counter += 1;
        format!("{base}{}", self.counter)
    }

    fn neutral(&mut self) -> String {
        let b = *NEUTRAL.choose(&mut self.rng).expect("non-empty");
        self.fresh(b)
    }

    fn object(&mut self) -> String {
        OBJECTS.choose(&mut self.rng).expect("non-empty").to_string()
    }

    fn run(&mut self) {
        let (flo, fhi) = self.spec.functions_per_file;
        let n_fn = self.rng.random_range(flo..=fhi);
        // Plan names, parameters and return types first so calls may refer to
        // any function of the file.
        for _ in 0..n_fn {
            let base = *PROVIDERS.choose(&mut self.rng).expect("non-empty");
            let name = self.fresh(base);
            let returns = self.rng.random_bool(0.5).then(|| self.draw_type().name.to_string());
            let mut params = Vec::new();
            if self.spec.signal_mix.name_hint > 0.0 {
                for _ in 0..self.rng.random_range(0..=2) {
                    let info = self.draw_type();
                    let pname = self.unique_hint(info);
                    let annot = self.spelling(info);
                    params.push((pname, annot, info.name.to_string()));
                }
            }
            self.functions.push(Function { name, params, returns, body: Vec::new() });
        }
        for f in 0..n_fn {
            self.fill_function(f);
        }
    }

    fn unique_hint(&mut self, info: &TypeInfo) -> String {
        loop {
            let n = hinted_name(&mut self.rng, info);
            let taken = self.facts.iter().any(|f| f.name == n)
                || self.functions.iter().any(|f| f.params.iter().any(|p| p.0 == n));
            if !taken {
                return n;
            }
        }
    }

    fn pick_class(&mut self, f: usize, info: &TypeInfo) -> SignalClass {
        let m = self.spec.signal_mix;
        let has_provider = self.functions.iter().enumerate().any(|(i, g)| i != f && g.returns.as_deref() == Some(info.name));
        let feasible = |c: SignalClass| match c {
            SignalClass::Literal => info.literal,
            SignalClass::Call => has_provider,
            _ => true,
        };
        let options: Vec<(SignalClass, f64)> =
            SignalClass::ALL.iter().filter(|&&c| feasible(c) && m.weight(c) > 0.0).map(|&c| (c, m.weight(c))).collect();
        let total: f64 = options.iter().map(|o| o.1).sum();
        let mut x = self.rng.random_range(0.0..total);
        for (c, w) in &options {
            if x < *w {
                return *c;
            }
            x -= w;
        }
        options.last().expect("validated spec grounds every type").0
    }

    /// Expression of type `ty` for a call argument.
    fn argument(&mut self, f: usize, ty: &str) -> String {
        let local: Vec<String> = self.facts.iter().filter(|x| x.function == f && x.ty == ty).map(|x| x.name.clone()).collect();
        let in_params: Vec<String> =
            self.functions[f].params.iter().filter(|p| p.2 == ty).map(|p| p.0.clone()).collect();
        let pool: Vec<String> = local.into_iter().chain(in_params).collect();
        if let Some(v) = pool.choose(&mut self.rng) {
            return v.clone();
        }
        let info = type_info(ty).expect("palette type");
        if info.literal && self.rng.random_bool(0.5) {
            return literal_for(&mut self.rng, ty);
        }
        let p = info.properties.choose(&mut self.rng).expect("non-empty");
        format!("{}.{p}", self.object())
    }

    /// One labeled declaration of type `info` in function `f`.
    fn declaration(&mut self, f: usize, info: &'static TypeInfo, class: SignalClass) -> Stmt {
        let ty = info.name.to_string();
        let (name, init, origin) = match class {
            SignalClass::Literal => {
                let chain: Vec<String> = self
                    .facts
                    .iter()
                    .filter(|x| x.function == f && x.ty == ty && x.class == SignalClass::Literal)
                    .map(|x| x.name.clone())
                    .collect();
                let name = self.neutral();
                match chain.choose(&mut self.rng).cloned() {
                    Some(src) if self.rng.random_bool(0.35) => (name, src.clone(), Origin::Copy(src)),
                    _ => {
                        let lit = literal_for(&mut self.rng, &ty);
                        (name, lit.clone(), Origin::Literal(lit))
                    }
                }
            }
            SignalClass::NameHint => {
                let name = self.unique_hint(info);
                let callee = OPAQUE.choose(&mut self.rng).expect("non-empty").to_string();
                let arg = self.neutral_argument(f);
                (name, format!("{callee}({arg})"), Origin::Opaque(callee))
            }
            SignalClass::Property => {
                let name = self.neutral();
                let p = info.properties.choose(&mut self.rng).expect("non-empty").to_string();
                (name, format!("{}.{p}", self.object()), Origin::Property(p))
            }
            SignalClass::Call => {
                let providers: Vec<usize> = (0..self.functions.len())
                    .filter(|&i| i != f && self.functions[i].returns.as_deref() == Some(info.name))
                    .collect();
                let target = *providers.choose(&mut self.rng).expect("feasibility checked");
                let callee = self.functions[target].name.clone();
                let param_types: Vec<String> = self.functions[target].params.iter().map(|p| p.2.clone()).collect();
                let args: Vec<String> = param_types.iter().map(|t| self.argument(f, t)).collect();
                let name = self.neutral();
                (name, format!("{callee}({})", args.join(", ")), Origin::Call(callee))
            }
        };
        let fact = self.facts.len();
        self.facts.push(Fact { function: f, name, ty, class, origin });
        let kw = *["let", "const", "var"].choose(&mut self.rng).expect("non-empty");
        Stmt::Decl { kw, fact, annot: self.spelling(info), init }
    }

    fn neutral_argument(&mut self, f: usize) -> String {
        let locals: Vec<String> = self.facts.iter().filter(|x| x.function == f).map(|x| x.name.clone()).collect();
        match locals.choose(&mut self.rng) {
            Some(v) if self.rng.random_bool(0.5) => v.clone(),
            _ => format!("\"{}\"", WORDS.choose(&mut self.rng).expect("non-empty")),
        }
    }

    fn filler(&mut self, f: usize) -> Stmt {
        let locals: Vec<String> = self.facts.iter().filter(|x| x.function == f).map(|x| x.name.clone()).collect();
        if let (Some(v), true) = (locals.choose(&mut self.rng).cloned(), self.rng.random_bool(0.5)) {
            return Stmt::If { cond: v.clone(), body: format!("log({v});") };
        }
        // A property write grounds later reads of that property in a literal.
        let lit_types: Vec<&'static TypeInfo> = self
            .spec
            .palette
            .iter()
            .filter(|p| p.weight > 0.0)
            .filter_map(|p| type_info(&p.ty))
            .filter(|t| t.literal)
            .collect();
        match lit_types.choose(&mut self.rng) {
            Some(info) if self.spec.signal_mix.property > 0.0 => {
                let p = info.properties.choose(&mut self.rng).expect("non-empty");
                let lit = literal_for(&mut self.rng, info.name);
                Stmt::Line(format!("{}.{p} = {lit};", self.object()))
            }
            _ => Stmt::Line(format!("log({});", self.neutral_argument(f))),
        }
    }

    fn fill_function(&mut self, f: usize) {
        let (slo, shi) = self.spec.statements_per_function;
        let n = self.rng.random_range(slo..=shi);
        let ret = self.functions[f].returns.clone();
        let mut body = Vec::new();
        for i in 0..n {
            let last = i + 1 == n;
            if let (true, Some(rt)) = (last, ret.as_deref()) {
                let info = type_info(rt).expect("palette type");
                let class = self.pick_class(f, info);
                body.push(self.declaration(f, info, class));
                continue;
            }
            if i > 0 && self.rng.random_bool(0.2) {
                body.push(self.filler(f));
            } else {
                let info = self.draw_type();
                let class = self.pick_class(f, info);
                body.push(self.declaration(f, info, class));
            }
        }
        if let Some(rt) = ret {
            let (local, class) = {
                let fact = self.facts.iter().rev().find(|x| x.function == f).expect("last statement declares");
                (fact.name.clone(), fact.class)
            };
            body.push(Stmt::Return(local.clone()));
            let name = self.functions[f].name.clone();
            self.facts.push(Fact { function: f, name, ty: rt, class, origin: Origin::Returns(local) });
        }
        for (pname, _, pty) in self.functions[f].params.clone() {
            self.facts.push(Fact { function: f, name: pname, ty: pty, class: SignalClass::NameHint, origin: Origin::Parameter });
        }
        self.functions[f].body = body;
    }

    fn render(&mut self) -> (String, Vec<LabelRecord>) {
        let mut out = String::new();
        let mut labels = Vec::new();
        let record = |start: usize, name: &str, fact: &Fact| LabelRecord {
            span: Span::new(start, start + name.len()),
            name: name.to_string(),
            ty: fact.ty.clone(),
            signal_class: fact.class,
        };
        let find = |f: usize, name: &str| self.facts.iter().find(|x| x.function == f && x.name == name).expect("fact recorded");
        for (fi, func) in self.functions.iter().enumerate() {
            if fi > 0 {
                out.push('\n');
            }
            out.push_str("function ");
            let name_start = out.len();
            out.push_str(&func.name);
            out.push('(');
            for (pi, (pname, annot, _)) in func.params.iter().enumerate() {
                if pi > 0 {
                    out.push_str(", ");
                }
                labels.push(record(out.len(), pname, find(fi, pname)));
                write!(out, "{pname}: {annot}").expect("string write");
            }
            out.push(')');
            if let Some(rt) = &func.returns {
                // A return annotation labels the function name.
                labels.push(record(name_start, &func.name, find(fi, &func.name)));
                let info = type_info(rt).expect("palette type");
                let annot = info.spellings.choose(&mut self.rng).expect("non-empty");
                write!(out, ": {annot}").expect("string write");
            }
            out.push_str(" {\n");
            for s in &func.body {
                match s {
                    Stmt::Decl { kw, fact, annot, init } => {
                        let fact = &self.facts[*fact];
                        write!(out, "  {kw} ").expect("string write");
                        labels.push(record(out.len(), &fact.name, fact));
                        writeln!(out, "{}: {annot} = {init};", fact.name).expect("string write");
                    }
                    Stmt::Line(l) => writeln!(out, "  {l}").expect("string write"),
                    Stmt::If { cond, body } => writeln!(out, "  if ({cond}) {{\n    {body}\n  }}").expect("string write"),
                    Stmt::Return(v) => writeln!(out, "  return {v};").expect("string write"),
                }
            }
            out.push_str("}\n");
        }
        labels.sort_by_key(|l| l.span);
        (out, labels)
    }
}

/// Verify a file against its own generation record: every fact's evidence
/// is of the claimed class and agrees with the fact's type.
pub fn self_check(file: &GeneratedFile) -> Result<(), String> {
    let by_name = |f: usize, n: &str| file.facts.iter().find(|x| x.function == f && x.name == n);
    for fact in &file.facts {
        let info = type_info(&fact.ty).ok_or_else(|| format!("{}: unknown type {}", fact.name, fact.ty))?;
        let bad = |why: &str| Err(format!("{} ({}, {:?}): {why}", fact.name, fact.ty, fact.class));
        match (&fact.class, &fact.origin) {
            (SignalClass::Literal, _) => {
                // Follow copies back to a literal of the same type.
                let mut cur = fact;
                let mut hops = 0;
                loop {
                    if cur.ty != fact.ty || cur.class != SignalClass::Literal {
                        return bad("copy chain leaves the type or class");
                    }
                    match &cur.origin {
                        Origin::Literal(l) if literal_type(l) == Some(fact.ty.as_str()) => break,
                        Origin::Literal(_) => return bad("literal of another type"),
                        Origin::Copy(src) | Origin::Returns(src) => match by_name(cur.function, src) {
                            Some(next) if hops < file.facts.len() => {
                                cur = next;
                                hops += 1;
                            }
                            _ => return bad("dangling copy"),
                        },
                        _ => return bad("not grounded in a literal"),
                    }
                }
            }
            (SignalClass::NameHint, Origin::Opaque(_) | Origin::Parameter) => {
                if !is_hinted_name(&fact.name, &fact.ty) {
                    return bad("name not from the type's pool");
                }
            }
            (SignalClass::Property, Origin::Property(p)) if !info.properties.contains(&p.as_str()) => {
                return bad("property not from the type's pool")
            }
            (SignalClass::Property, Origin::Property(_)) => {}
            (SignalClass::Call, Origin::Call(callee)) => {
                let ret = file.facts.iter().find(|x| &x.name == callee && matches!(x.origin, Origin::Returns(_)));
                if ret.map(|r| &r.ty) != Some(&fact.ty) {
                    return bad("callee returns another type");
                }
            }
            (_, Origin::Returns(local)) => match file.facts.iter().find(|x| x.function == fact.function && &x.name == local) {
                Some(l) if l.ty == fact.ty && l.class == fact.class => {}
                _ => return bad("returned local disagrees"),
            },
            _ => return bad("origin does not match class"),
        }
    }
    Ok(())
}

fn literal_type(lit: &str) -> Option<&'static str> {
    use crate::frontend::LiteralKind;
    match LiteralKind::of(lit) {
        LiteralKind::String => Some("string"),
        LiteralKind::Number => Some("number"),
        LiteralKind::Bool => Some("boolean"),
        LiteralKind::Regex => Some("RegExp"),
        LiteralKind::Null => None,
    }
}
