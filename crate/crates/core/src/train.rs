//! Training loop, evaluation metrics, and prediction export.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::document::Document;
use crate::embeddings::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::head::{decode, DecodeMode};
use crate::model::{graph_loss, GraphInput, Model, ModelConfig};
use crate::nn::{lr_schedule, Adam, AdamConfig, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    /// Documents per optimizer step.
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_ratio: f64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    /// Evaluate on the held-out set every this many steps (0 = only at the end).
    pub eval_every: usize,
    #[serde(flatten)]
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 4500,
            batch_size: 4,
            base_lr: 5e-5,
            warmup_ratio: 0.1,
            alpha: 1.0,
            beta: 0.02,
            seed: 0,
            eval_every: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch size must be positive".into()));
        }
        if self.base_lr.is_nan() || self.base_lr <= 0.0 || !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config("learning rate must be positive and warmup ratio in [0, 1)".into()));
        }
        if self.alpha.is_nan() || self.alpha < 0.0 || self.beta.is_nan() || self.beta < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// One line of the loss log; losses are batch means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub binary: f64,
    pub constraint: f64,
    pub total: f64,
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("step,lr,L_b,L_c,L\n");
    for r in rows {
        out.push_str(&format!("{},{:e},{},{},{}\n", r.step, r.lr, r.binary, r.constraint, r.total));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<TraceRow>,
    /// Training documents without any question/answer pair.
    pub skipped: usize,
    /// `(step, report)` for every periodic evaluation.
    pub evals: Vec<(usize, EvalReport)>,
}

impl TrainOutcome {
    /// The evaluation with the highest F1, earliest on ties.
    pub fn best_eval(&self) -> Option<&(usize, EvalReport)> {
        self.evals.iter().fold(None, |best: Option<&(usize, EvalReport)>, e| match best {
            Some(b) if b.1.f1 >= e.1.f1 => Some(b),
            _ => Some(e),
        })
    }
}

/// Builds graphs for every document, dropping the ones with no pairs.
pub fn build_graphs(docs: &[Document], provider: &EmbeddingProvider, config: &ModelConfig) -> Result<(Vec<GraphInput>, usize)> {
    let all: Vec<GraphInput> = docs
        .par_iter()
        .map(|d| GraphInput::build(d, provider, config))
        .collect::<Result<_>>()?;
    let total = all.len();
    let kept: Vec<GraphInput> = all.into_iter().filter(|g| !g.is_empty()).collect();
    let skipped = total - kept.len();
    Ok((kept, skipped))
}

struct DocGrad {
    grads: Vec<Tensor>,
    binary: f64,
    constraint: f64,
    total: f64,
}

fn doc_gradient(model: &Model, graph: &GraphInput, alpha: f64, beta: f64) -> Result<DocGrad> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let loss = graph_loss(&mut tape, &model.config, &bound, graph, alpha, beta)?;
    let g = tape.backward(loss.total)?;
    let grads = bound.vars.iter().zip(model.params.tensors()).map(|(&v, t)| g.get_or_zeros(v, t)).collect();
    Ok(DocGrad {
        grads,
        binary: tape.value(loss.binary).item(),
        constraint: tape.value(loss.constraint).item(),
        total: tape.value(loss.total).item(),
    })
}

/// Trains from scratch. Batches are drawn from a seeded shuffle of the
/// documents, reshuffled each pass; per-document gradients run in parallel and
/// are averaged in a fixed order, so results do not depend on thread count.
pub fn train(
    docs: &[Document],
    provider: &EmbeddingProvider,
    config: &TrainConfig,
    held_out: Option<&[Document]>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (graphs, skipped) = build_graphs(docs, provider, &config.model)?;
    if skipped > 0 {
        log::warn!("skipping {skipped} training documents without question/answer pairs");
    }
    if graphs.is_empty() {
        return Err(Error::Validation("no training document has a question/answer pair".into()));
    }
    let eval_graphs = held_out.map(|d| build_graphs(d, provider, &config.model)).transpose()?;

    let mut model = Model::new(config.model, config.seed)?;
    let mut adam = Adam::new(&model.params, AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5ee_d0fb_a7c4);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut trace = Vec::with_capacity(config.steps);
    let mut evals = Vec::new();

    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(graphs.len()) {
            if cursor == order.len() {
                order = (0..graphs.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }

        let results: Vec<DocGrad> = batch
            .par_iter()
            .map(|&i| doc_gradient(&model, &graphs[i], config.alpha, config.beta))
            .collect::<Result<_>>()?;
        let scale = 1.0 / results.len() as f64;
        let mut grads: Vec<Tensor> = model.params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        let (mut lb, mut lc, mut lt) = (0.0, 0.0, 0.0);
        for r in &results {
            for (acc, g) in grads.iter_mut().zip(&r.grads) {
                acc.add_assign(g);
            }
            lb += r.binary;
            lc += r.constraint;
            lt += r.total;
        }
        grads.iter_mut().for_each(|g| g.scale(scale));
        let row = TraceRow { step, lr: lr_schedule(step, config.steps, config.warmup_ratio, config.base_lr), binary: lb * scale, constraint: lc * scale, total: lt * scale };
        if !row.total.is_finite() {
            return Err(Error::NonFiniteLoss(step));
        }
        adam.step(&mut model.params, &grads, row.lr)?;
        trace.push(row);
        log::debug!("step {step} lr {:.3e} loss {:.6}", row.lr, row.total);

        let done = step + 1;
        if let Some((eg, _)) = &eval_graphs {
            let periodic = config.eval_every > 0 && done % config.eval_every == 0;
            if periodic || done == config.steps {
                let report = evaluate_graphs(&model, eg, DecodeMode::Argmax)?;
                log::info!("step {done}: P {:.4} R {:.4} F1 {:.4}", report.precision, report.recall, report.f1);
                evals.push((done, report));
            }
        }
    }
    Ok(TrainOutcome { model, trace, skipped, evals })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn compare(predicted: &BTreeSet<(i64, i64)>, gold: &BTreeSet<(i64, i64)>) -> Self {
        let tp = predicted.intersection(gold).count();
        Self { tp, fp: predicted.len() - tp, fn_: gold.len() - tp }
    }

    /// `(precision, recall, f1)`; a ratio with a zero denominator is 0.
    pub fn scores(&self) -> (f64, f64, f64) {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        (p, r, f1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocEval {
    pub doc_id: String,
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Micro-averaged link metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(flatten)]
    pub counts: Counts,
    pub documents: Vec<DocEval>,
}

impl EvalReport {
    pub fn from_documents(documents: Vec<DocEval>) -> Self {
        let counts = documents.iter().fold(Counts::default(), |acc, d| Counts {
            tp: acc.tp + d.counts.tp,
            fp: acc.fp + d.counts.fp,
            fn_: acc.fn_ + d.counts.fn_,
        });
        let (precision, recall, f1) = counts.scores();
        Self { precision, recall, f1, counts, documents }
    }
}

/// Predicted links for one document, with the link probability of each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub links: Vec<(i64, i64)>,
    pub scores: Vec<f64>,
}

pub fn predict_graph(model: &Model, graph: &GraphInput, mode: DecodeMode) -> Result<Prediction> {
    let scored = model.score(graph)?;
    let links = decode(&scored, mode);
    if mode == DecodeMode::Constrained {
        let answers: BTreeSet<i64> = links.iter().map(|l| l.1).collect();
        assert_eq!(answers.len(), links.len(), "constrained decoding linked an answer twice");
    }
    let scores = links
        .iter()
        .map(|l| {
            scored
                .iter()
                .find(|s| (s.question, s.answer) == *l)
                .map(|s| s.score.p[1])
                .unwrap_or_default()
        })
        .collect();
    Ok(Prediction { doc_id: graph.doc_id.clone(), links: links.into_iter().collect(), scores })
}

fn gold_of(graph: &GraphInput) -> BTreeSet<(i64, i64)> {
    (0..graph.num_pairs()).filter(|&k| graph.labels[k]).map(|k| graph.pair(k)).collect()
}

pub fn evaluate_graphs(model: &Model, graphs: &[GraphInput], mode: DecodeMode) -> Result<EvalReport> {
    let docs: Vec<DocEval> = graphs
        .par_iter()
        .map(|g| {
            let pred = predict_graph(model, g, mode)?;
            let counts = Counts::compare(&pred.links.into_iter().collect(), &gold_of(g));
            let (precision, recall, f1) = counts.scores();
            Ok(DocEval { doc_id: g.doc_id.clone(), counts, precision, recall, f1 })
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport::from_documents(docs))
}

/// Scores every document, including ones without pairs (all their gold links,
/// if any, count as misses).
pub fn evaluate(docs: &[Document], model: &Model, provider: &EmbeddingProvider, mode: DecodeMode) -> Result<EvalReport> {
    let graphs: Vec<GraphInput> = docs
        .par_iter()
        .map(|d| GraphInput::build(d, provider, &model.config))
        .collect::<Result<_>>()?;
    evaluate_graphs(model, &graphs, mode)
}

pub fn predict(docs: &[Document], model: &Model, provider: &EmbeddingProvider, mode: DecodeMode) -> Result<Vec<Prediction>> {
    docs.par_iter()
        .map(|d| predict_graph(model, &GraphInput::build(d, provider, &model.config)?, mode))
        .collect()
}

/// Fraction of answers that receive two or more predicted questions.
pub fn multi_link_rate(predictions: &[Prediction], docs: &[Document]) -> f64 {
    let (mut multi, mut total) = (0usize, 0usize);
    for (p, d) in predictions.iter().zip(docs) {
        for a in d.answers() {
            total += 1;
            if p.links.iter().filter(|l| l.1 == a.id).count() >= 2 {
                multi += 1;
            }
        }
    }
    if total == 0 { 0.0 } else { multi as f64 / total as f64 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[(i64, i64)]) -> BTreeSet<(i64, i64)> {
        v.iter().copied().collect()
    }

    #[test]
    fn metric_hand_counts() {
        let c = Counts::compare(&set(&[(1, 2), (3, 4)]), &set(&[(1, 2)]));
        assert_eq!(c, Counts { tp: 1, fp: 1, fn_: 0 });
        let (p, r, f) = c.scores();
        assert_eq!((p, r), (0.5, 1.0));
        assert!((f - 2.0 / 3.0).abs() < 1e-15);

        let c = Counts::compare(&set(&[(1, 2)]), &set(&[(1, 2)]));
        assert_eq!(c.scores(), (1.0, 1.0, 1.0));
        let c = Counts::compare(&set(&[]), &set(&[(1, 2)]));
        assert_eq!(c.scores(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn micro_average_pools_counts() {
        let d = |tp, fp, fn_| DocEval { doc_id: String::new(), counts: Counts { tp, fp, fn_ }, precision: 0.0, recall: 0.0, f1: 0.0 };
        let r = EvalReport::from_documents(vec![d(1, 0, 0), d(0, 1, 3)]);
        assert_eq!(r.counts, Counts { tp: 1, fp: 1, fn_: 3 });
        assert_eq!((r.precision, r.recall), (0.5, 0.25));
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["fn"], 3);
    }

    #[test]
    fn config_file_defaults_and_overrides() {
        let c: TrainConfig = serde_json::from_str(r#"{"steps": 10, "feature_dim": 8, "beta": 0}"#).unwrap();
        assert_eq!((c.steps, c.model.feature_dim, c.beta, c.batch_size), (10, 8, 0.0, 4));
        assert_eq!(c.model.heads, 4);
        assert!(TrainConfig { warmup_ratio: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { steps: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn trace_format() {
        let rows = [TraceRow { step: 0, lr: 0.0, binary: 0.5, constraint: 0.25, total: 0.505 }];
        assert_eq!(trace_csv(&rows), "step,lr,L_b,L_c,L\n0,0e0,0.5,0.25,0.505\n");
    }
}
