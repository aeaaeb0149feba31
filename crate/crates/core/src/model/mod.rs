//! Graph neural network over type flow graphs.
//!
//! Initial node states come from embeddings (identifiers from their name,
//! optionally segmented and optionally contextualized by a bi-directional
//! GRU over the file's tokens). `K` propagation steps then compute messages
//! along edges, aggregate them per destination and update the destination.
//! Token and context nodes keep their initial state.

mod config;
mod forward;
mod input;

pub use config::{Dims, GnnType, ModelConfig, Preset, VocabSizes};
pub use forward::{top_k, Forward};
pub use input::{Batch, GraphInput, NameInput, NodeInit};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::numeric::{Gradients, NumericError, ParamSet, Scalar, ShapeError, Tape, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("{kind} {entry:?} is not in the vocabulary")]
    MissingVocabEntry { kind: &'static str, entry: String },
    #[error("identifier node {node} has no token position")]
    MissingToken { node: usize },
    #[error("parameter {name}: {problem}")]
    Params { name: String, problem: String },
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

impl From<ShapeError> for ModelError {
    fn from(e: ShapeError) -> Self {
        ModelError::Numeric(e.into())
    }
}

/// A configured network with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub sizes: VocabSizes,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters drawn from a generator seeded with `seed`.
    pub fn init(config: ModelConfig, sizes: VocabSizes, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, shape) in config.param_shapes(&sizes) {
            let n: usize = shape.iter().product();
            let last = *shape.last().unwrap_or(&1);
            let data: Vec<T> = if name.starts_with("emb.") {
                let s = 1.0 / (last as f64).sqrt();
                (0..n).map(|_| T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal) * s)).collect()
            } else if shape.len() == 2 || name.ends_with("att.w") {
                let a = 1.0 / (last as f64).sqrt();
                (0..n).map(|_| T::from_f64_lossy(rng.random_range(-a..a))).collect()
            } else {
                vec![T::zero(); n]
            };
            params.insert(name, Tensor::new(shape, data).expect("size matches shape"));
        }
        Ok(Model { config, sizes, params })
    }

    /// Wrap existing parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, sizes: VocabSizes, params: ParamSet<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let want = config.param_shapes(&sizes);
        for (name, shape) in &want {
            match params.get(name) {
                None => return Err(ModelError::Params { name: name.clone(), problem: "missing".into() }),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(ModelError::Params {
                        name: name.clone(),
                        problem: format!("shape {:?}, expected {:?}", t.shape(), shape),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = params.keys().find(|k| !want.contains_key(*k)) {
            return Err(ModelError::Params { name: extra.clone(), problem: "not used by this configuration".into() });
        }
        Ok(Model { config, sizes, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Mean cross-entropy over the labeled nodes of `batch`.
    pub fn loss(&self, tape: &mut Tape<'_, T>, batch: &Batch) -> Result<crate::numeric::Var, ModelError> {
        let f = self.forward(tape, batch)?;
        let h = tape.gather_rows(f.states, batch.label_nodes.clone())?;
        let logits = self.head(tape, h)?;
        Ok(tape.cross_entropy_rows(logits, batch.label_types.clone())?)
    }

    /// Loss value and parameter gradients for one batch.
    pub fn loss_and_grads(&self, batch: &Batch) -> Result<(T, Gradients<T>), ModelError> {
        let mut tape = Tape::new(&self.params);
        let l = self.loss(&mut tape, batch)?;
        let grads = tape.backward(l);
        Ok((tape.value(l).data()[0], grads))
    }

    /// Loss, gradients and the logits of the trainable label rows, in
    /// `batch.label_nodes` order.
    pub fn loss_grads_logits(&self, batch: &Batch) -> Result<(T, Gradients<T>, Tensor<T>), ModelError> {
        let mut tape = Tape::new(&self.params);
        let f = self.forward(&mut tape, batch)?;
        let h = tape.gather_rows(f.states, batch.label_nodes.clone())?;
        let logits = self.head(&mut tape, h)?;
        let l = tape.cross_entropy_rows(logits, batch.label_types.clone())?;
        let grads = tape.backward(l);
        Ok((tape.value(l).data()[0], grads, tape.value(logits).clone()))
    }

    /// Logits of every labeled node, in `batch.all_labels` order.
    pub fn label_logits(&self, batch: &Batch) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new(&self.params);
        let f = self.forward(&mut tape, batch)?;
        let rows: std::rc::Rc<[usize]> = batch.all_labels.iter().map(|l| l.0).collect();
        let h = tape.gather_rows(f.states, rows)?;
        let logits = self.head(&mut tape, h)?;
        Ok(tape.value(logits).clone())
    }

    /// Logits of every node in `batch`, one row per node.
    pub fn node_logits(&self, batch: &Batch) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new(&self.params);
        let f = self.forward(&mut tape, batch)?;
        let logits = self.head(&mut tape, f.states)?;
        Ok(tape.value(logits).clone())
    }
}
