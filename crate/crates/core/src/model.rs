//! The full link-prediction network: entity embeddings, edge FFN, eGAT stack,
//! and the biaffine relation head.

use serde::{Deserialize, Serialize};

use crate::document::Document;
use crate::edges::{encode_link, EdgeLink};
use crate::egat::{bind_heads, egat_forward, EgatConfig, LayerTrace};
use crate::embeddings::{EmbeddingProvider, GEOMETRY_FEATURES};
use crate::error::{Error, Result};
use crate::head::{biaffine_scores, loss_binary, loss_constraint, loss_total, pair_representations, PairScore, ScoredPair, ScorerVars};
use crate::nn::{checkpoint, init_params, BoundParams, Init, ModelParams, ParamSpec, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Node feature dimension `F`.
    pub feature_dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Hidden width `d` of the pair FFNs.
    pub head_dim: usize,
    /// Type embedding dimension `T`.
    pub type_dim: usize,
    /// Trigram buckets of the built-in featurizer.
    pub hash_dim: usize,
    /// Entity embeddings come from a sidecar file instead of the featurizer.
    pub precomputed: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { feature_dim: 64, heads: 4, layers: 2, head_dim: 64, type_dim: 32, hash_dim: 512, precomputed: false }
    }
}

impl ModelConfig {
    pub fn egat(&self) -> EgatConfig {
        EgatConfig { layers: self.layers, heads: self.heads, feature_dim: self.feature_dim }
    }

    pub fn edge_dim(&self) -> usize {
        self.feature_dim / 2
    }

    /// Width of the entity input rows: featurizer input, or `F` for stored
    /// embeddings.
    pub fn input_dim(&self) -> usize {
        if self.precomputed {
            self.feature_dim
        } else {
            self.hash_dim + GEOMETRY_FEATURES
        }
    }

    /// Width of the concatenated pair-FFN input.
    pub fn pair_input_dim(&self) -> usize {
        2 * self.feature_dim + self.edge_dim() + self.type_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.egat().validate()?;
        if self.head_dim == 0 || self.type_dim == 0 {
            return Err(Error::Config("head and type dimensions must be positive".into()));
        }
        if !self.precomputed && self.hash_dim == 0 {
            return Err(Error::Config("hash dimension must be positive".into()));
        }
        Ok(())
    }

    /// Parameter layout. The bilinear tensor is stored as `d x 2d` with class
    /// `k` in columns `k*d..(k+1)*d`; the biaffine tensors start at zero so the
    /// untrained model predicts `(0.5, 0.5)` for every pair.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let (f, d, t) = (self.feature_dim, self.head_dim, self.type_dim);
        let mut specs = Vec::new();
        if !self.precomputed {
            specs.push(ParamSpec::new("featurizer.weight", &[self.input_dim(), f], Init::Glorot));
            specs.push(ParamSpec::new("featurizer.bias", &[f], Init::Zeros));
        }
        specs.push(ParamSpec::new("edge.weight", &[EdgeLink::LEN, self.edge_dim()], Init::Glorot));
        specs.push(ParamSpec::new("edge.bias", &[self.edge_dim()], Init::Zeros));
        specs.extend(self.egat().param_specs());
        specs.push(ParamSpec::new("type.question", &[t], Init::Normal(0.02)));
        specs.push(ParamSpec::new("type.answer", &[t], Init::Normal(0.02)));
        for side in ["q", "a"] {
            specs.push(ParamSpec::new(format!("head.{side}.weight"), &[self.pair_input_dim(), d], Init::Glorot));
            specs.push(ParamSpec::new(format!("head.{side}.bias"), &[d], Init::Zeros));
        }
        specs.push(ParamSpec::new("biaffine.u", &[d, 2 * d], Init::Zeros));
        specs.push(ParamSpec::new("biaffine.w", &[2, 2 * d], Init::Zeros));
        specs.push(ParamSpec::new("biaffine.b", &[2], Init::Zeros));
        specs
    }
}

/// One document as network input. Pairs are ordered row-major: pair `i*n + j`
/// joins question `i` with answer `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub doc_id: String,
    pub question_ids: Vec<i64>,
    pub answer_ids: Vec<i64>,
    /// `m x input_dim`.
    pub questions: Tensor,
    /// `n x input_dim`.
    pub answers: Tensor,
    /// `(m*n) x 7`.
    pub links: Tensor,
    pub labels: Vec<bool>,
}

impl GraphInput {
    pub fn build(doc: &Document, provider: &EmbeddingProvider, config: &ModelConfig) -> Result<Self> {
        match (provider, config.precomputed) {
            (EmbeddingProvider::Precomputed(store), true) => store.check_dim(config.feature_dim)?,
            (EmbeddingProvider::Featurizer { hash_dim }, false) if *hash_dim == config.hash_dim => {}
            _ => return Err(Error::Config("embedding provider does not match the model configuration".into())),
        }
        let page = (doc.page_width, doc.page_height);
        let qs: Vec<_> = doc.questions().collect();
        let ans: Vec<_> = doc.answers().collect();
        let rows = |ents: &[&crate::document::Entity]| -> Result<Tensor> {
            let mut data = Vec::with_capacity(ents.len() * config.input_dim());
            for e in ents {
                data.extend(provider.input(&doc.doc_id, e, page)?);
            }
            Tensor::matrix(ents.len(), config.input_dim(), data)
        };
        let mut links = Vec::with_capacity(qs.len() * ans.len() * EdgeLink::LEN);
        let mut labels = Vec::with_capacity(qs.len() * ans.len());
        for q in &qs {
            for a in &ans {
                links.extend(encode_link(doc, q, a).as_f64());
                labels.push(doc.gold_links.contains(&(q.id, a.id)));
            }
        }
        Ok(Self {
            doc_id: doc.doc_id.clone(),
            question_ids: qs.iter().map(|e| e.id).collect(),
            answer_ids: ans.iter().map(|e| e.id).collect(),
            questions: rows(&qs)?,
            answers: rows(&ans)?,
            links: Tensor::matrix(labels.len(), EdgeLink::LEN, links)?,
            labels,
        })
    }

    pub fn num_questions(&self) -> usize {
        self.question_ids.len()
    }

    pub fn num_answers(&self) -> usize {
        self.answer_ids.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.labels.len()
    }

    /// No candidate pairs: nothing to score or train on.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pair(&self, k: usize) -> (i64, i64) {
        let n = self.num_answers();
        (self.question_ids[k / n], self.answer_ids[k % n])
    }
}

/// Handles produced by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub questions: Var,
    pub answers: Var,
    pub questions_final: Var,
    pub answers_final: Var,
    /// `P x F/2`.
    pub edges: Var,
    /// `P x 2` class scores.
    pub scores: Var,
    /// `P x 2` log-probabilities.
    pub log_probs: Var,
    pub attention: Vec<LayerTrace>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub binary: Var,
    pub constraint: Var,
    pub total: Var,
}

fn linear_elu(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let h = tape.matmul(x, w)?;
    let h = tape.add_row(h, b)?;
    Ok(tape.elu(h))
}

/// Edge embeddings `ELU(link W + b)` for every pair (`P x F/2`).
pub fn edge_embed(tape: &mut Tape, links: Var, params: &BoundParams) -> Result<Var> {
    linear_elu(tape, links, params.var("edge.weight")?, params.var("edge.bias")?)
}

/// Runs the network on one graph. The graph must have at least one pair.
pub fn forward(tape: &mut Tape, config: &ModelConfig, params: &BoundParams, graph: &GraphInput) -> Result<ForwardVars> {
    if graph.is_empty() {
        return Err(Error::Validation(format!("document {} has no candidate pairs", graph.doc_id)));
    }
    let (m, n) = (graph.num_questions(), graph.num_answers());
    let qx = tape.constant(graph.questions.clone());
    let ax = tape.constant(graph.answers.clone());
    let (questions, answers) = if config.precomputed {
        (qx, ax)
    } else {
        let (w, b) = (params.var("featurizer.weight")?, params.var("featurizer.bias")?);
        (linear_elu(tape, qx, w, b)?, linear_elu(tape, ax, w, b)?)
    };

    let links = tape.constant(graph.links.clone());
    let edges = edge_embed(tape, links, params)?;
    let sums = tape.row_sum(edges);
    let sums = tape.reshape(sums, m, n)?;

    let heads = bind_heads(&config.egat(), params)?;
    let mut attention = Vec::new();
    let (questions_final, answers_final) = egat_forward(tape, questions, answers, sums, &heads, Some(&mut attention))?;

    let scorer = ScorerVars {
        type_question: params.var("type.question")?,
        type_answer: params.var("type.answer")?,
        q_weight: params.var("head.q.weight")?,
        q_bias: params.var("head.q.bias")?,
        a_weight: params.var("head.a.weight")?,
        a_bias: params.var("head.a.bias")?,
        u: params.var("biaffine.u")?,
        w: params.var("biaffine.w")?,
        b: params.var("biaffine.b")?,
    };
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let (qp, ap) = pair_representations(tape, questions, questions_final, answers, answers_final, edges, &pairs, &scorer)?;
    let scores = biaffine_scores(tape, qp, ap, &scorer)?;
    let log_probs = tape.log_softmax(scores);
    Ok(ForwardVars { questions, answers, questions_final, answers_final, edges, scores, log_probs, attention })
}

/// The training objective on one graph.
pub fn graph_loss(
    tape: &mut Tape,
    config: &ModelConfig,
    params: &BoundParams,
    graph: &GraphInput,
    alpha: f64,
    beta: f64,
) -> Result<LossVars> {
    let out = forward(tape, config, params, graph)?;
    let binary = loss_binary(tape, out.log_probs, &graph.labels)?;
    let constraint = loss_constraint(tape, out.log_probs, graph.num_questions(), graph.num_answers(), &graph.labels)?;
    let total = loss_total(tape, binary, constraint, alpha, beta)?;
    Ok(LossVars { binary, constraint, total })
}

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config.param_specs(), seed)?;
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        for spec in config.param_specs() {
            let t = params
                .get(&spec.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", spec.name)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn to_checkpoint(&self) -> Vec<u8> {
        let meta = serde_json::to_string(&self.config).expect("config serializes");
        checkpoint::encode(&self.params, &meta)
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let (params, meta) = checkpoint::decode(bytes)?;
        let config: ModelConfig =
            serde_json::from_str(&meta).map_err(|e| Error::Checkpoint(format!("bad model metadata: {e}")))?;
        Self::from_params(config, params)
    }

    /// Scores every candidate pair of the graph; empty graphs give no pairs.
    pub fn score(&self, graph: &GraphInput) -> Result<Vec<ScoredPair>> {
        if graph.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let out = forward(&mut tape, &self.config, &bound, graph)?;
        let s = tape.value(out.scores);
        Ok((0..graph.num_pairs())
            .map(|k| {
                let (question, answer) = graph.pair(k);
                ScoredPair { question, answer, score: PairScore::from_scores([s.at(k, 0), s.at(k, 1)]) }
            })
            .collect())
    }

    /// Per-head attention matrices of every layer, as plain tensors.
    pub fn attention(&self, graph: &GraphInput) -> Result<Vec<(Vec<Tensor>, Vec<Tensor>)>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let out = forward(&mut tape, &self.config, &bound, graph)?;
        let grab = |vs: &[Var]| vs.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>();
        Ok(out
            .attention
            .iter()
            .map(|l| (grab(&l.question_attention), grab(&l.answer_attention)))
            .collect())
    }
}
