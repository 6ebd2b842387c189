//! Edge-aware graph attention over the complete question/answer bipartite graph.
//!
//! For head `k` with projection `W` and attention vector `att = [att_l; att_r]`,
//! the logit between question `i` and answer `j` is
//!
//! ```text
//! c_ij   = LeakyReLU(att_l . W q_i + att_r . W a_j)
//! z_ij   = c_ij * sum_f e_ij[f]
//! alpha  = softmax over j of z_i.
//! q_i'   = q_i + sum_j alpha_ij W a_j
//! ```
//!
//! Answers are updated the same way with the roles swapped (the receiving node
//! goes first in the attention input) and the same edge embedding. The layer
//! output is `ELU(mean over heads)`.

use crate::error::{Error, Result};
use crate::nn::{BoundParams, Init, ParamSpec, Reduce, Tape, Var};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EgatConfig {
    pub layers: usize,
    pub heads: usize,
    pub feature_dim: usize,
}

impl EgatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 {
            return Err(Error::Config("eGAT needs at least one layer and one head".into()));
        }
        if self.feature_dim == 0 || !self.feature_dim.is_multiple_of(2) {
            return Err(Error::Config(format!("feature dimension {} must be even and positive", self.feature_dim)));
        }
        Ok(())
    }

    pub fn weight_name(layer: usize, head: usize) -> String {
        format!("egat.{layer}.{head}.weight")
    }

    pub fn att_name(layer: usize, head: usize) -> String {
        format!("egat.{layer}.{head}.att")
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let f = self.feature_dim;
        let mut specs = Vec::new();
        for l in 0..self.layers {
            for k in 0..self.heads {
                specs.push(ParamSpec::new(Self::weight_name(l, k), &[f, f], Init::Glorot));
                specs.push(ParamSpec::new(Self::att_name(l, k), &[2 * f, 1], Init::Glorot));
            }
        }
        specs
    }
}

/// Tape handles for one attention head.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    /// `F x F` projection.
    pub weight: Var,
    /// `2F x 1` attention vector.
    pub att: Var,
}

/// Per-layer attention matrices, kept for inspection.
#[derive(Debug, Clone, Default)]
pub struct LayerTrace {
    /// `m x n` per head; rows sum to one.
    pub question_attention: Vec<Var>,
    /// `n x m` per head; rows sum to one.
    pub answer_attention: Vec<Var>,
}

/// Attention logits `c` (before edge scaling) for every receiver/sender pair.
/// `receivers` is `r x F`, `senders` is `s x F`, both already projected by the
/// head weight; the result is `r x s`.
pub fn attention_logits(tape: &mut Tape, receivers: Var, senders: Var, att: Var, slope: f64) -> Result<Var> {
    let f = tape.shape(receivers).1;
    if tape.shape(att) != (2 * f, 1) {
        let (r, c) = tape.shape(att);
        return Err(Error::shape("attention_logits", format!("att is {r}x{c}, expected {}x1", 2 * f)));
    }
    let att_row = tape.transpose(att);
    let left = tape.slice_cols(att_row, 0, f)?;
    let right = tape.slice_cols(att_row, f, 2 * f)?;
    let left = tape.transpose(left);
    let right = tape.transpose(right);
    let sr = tape.matmul(receivers, left)?;
    let ss = tape.matmul(senders, right)?;
    let c = tape.outer_add(sr, ss)?;
    Ok(tape.leaky_relu(c, slope))
}

/// Scales each logit by the sum of its edge embedding and normalizes over the
/// sender axis (`edge_sums` has the same `r x s` shape as `logits`).
pub fn edge_scaled_attention(tape: &mut Tape, logits: Var, edge_sums: Var) -> Result<Var> {
    let z = tape.hadamard(logits, edge_sums)?;
    Ok(tape.softmax(z, Reduce::Rows))
}

fn messages(
    tape: &mut Tape,
    receivers: Var,
    senders: Var,
    edge_sums: Var,
    head: HeadVars,
) -> Result<(Var, Var)> {
    let wr = tape.matmul(receivers, head.weight)?;
    let ws = tape.matmul(senders, head.weight)?;
    let c = attention_logits(tape, wr, ws, head.att, LEAKY_SLOPE)?;
    let alpha = edge_scaled_attention(tape, c, edge_sums)?;
    Ok((tape.attend(alpha, ws)?, alpha))
}

/// One eGAT layer. `edge_sums` is the `m x n` matrix of summed edge
/// embeddings. Returns the updated `(questions, answers)`.
pub fn layer_forward(
    tape: &mut Tape,
    questions: Var,
    answers: Var,
    edge_sums: Var,
    heads: &[HeadVars],
    trace: Option<&mut LayerTrace>,
) -> Result<(Var, Var)> {
    let edge_sums_t = tape.transpose(edge_sums);
    let mut q_msgs = Vec::with_capacity(heads.len());
    let mut a_msgs = Vec::with_capacity(heads.len());
    let mut local = LayerTrace::default();
    for &head in heads {
        let (mq, aq) = messages(tape, questions, answers, edge_sums, head)?;
        let (ma, aa) = messages(tape, answers, questions, edge_sums_t, head)?;
        q_msgs.push(mq);
        a_msgs.push(ma);
        local.question_attention.push(aq);
        local.answer_attention.push(aa);
    }
    if let Some(t) = trace {
        *t = local;
    }
    let k = heads.len() as f64;
    let update = |tape: &mut Tape, base: Var, msgs: Vec<Var>| -> Result<Var> {
        let mut acc = msgs[0];
        for &m in &msgs[1..] {
            acc = tape.add(acc, m)?;
        }
        let mean = tape.scale(acc, 1.0 / k);
        let res = tape.add(base, mean)?;
        Ok(tape.elu(res))
    };
    let q = update(tape, questions, q_msgs)?;
    let a = update(tape, answers, a_msgs)?;
    Ok((q, a))
}

/// Head handles for every layer, looked up from bound parameters.
pub fn bind_heads(config: &EgatConfig, params: &BoundParams) -> Result<Vec<Vec<HeadVars>>> {
    (0..config.layers)
        .map(|l| {
            (0..config.heads)
                .map(|k| {
                    Ok(HeadVars {
                        weight: params.var(&EgatConfig::weight_name(l, k))?,
                        att: params.var(&EgatConfig::att_name(l, k))?,
                    })
                })
                .collect()
        })
        .collect()
}

/// Runs all layers; each layer has its own parameters.
pub fn egat_forward(
    tape: &mut Tape,
    questions: Var,
    answers: Var,
    edge_sums: Var,
    layers: &[Vec<HeadVars>],
    mut traces: Option<&mut Vec<LayerTrace>>,
) -> Result<(Var, Var)> {
    let (mut q, mut a) = (questions, answers);
    for heads in layers {
        let mut trace = LayerTrace::default();
        (q, a) = layer_forward(tape, q, a, edge_sums, heads, Some(&mut trace))?;
        if let Some(t) = traces.as_deref_mut() {
            t.push(trace);
        }
    }
    Ok((q, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, Tensor};

    fn consts(tape: &mut Tape, rows: usize, cols: usize, data: &[f64]) -> Var {
        tape.constant(Tensor::matrix(rows, cols, data.to_vec()).unwrap())
    }

    #[test]
    fn zero_projection_or_att_gives_zero_logits() {
        let mut t = Tape::new();
        let q = consts(&mut t, 2, 2, &[1., 2., 3., 4.]);
        let a = consts(&mut t, 2, 2, &[5., 6., 7., 8.]);
        let w0 = consts(&mut t, 2, 2, &[0.; 4]);
        let att = consts(&mut t, 4, 1, &[1., -1., 2., 0.5]);
        let (wq, wa) = (t.matmul(q, w0).unwrap(), t.matmul(a, w0).unwrap());
        let c = attention_logits(&mut t, wq, wa, att, LEAKY_SLOPE).unwrap();
        assert!(t.value(c).data().iter().all(|&v| v == 0.0));

        let att0 = consts(&mut t, 4, 1, &[0.; 4]);
        let c = attention_logits(&mut t, q, a, att0, LEAKY_SLOPE).unwrap();
        assert!(t.value(c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn logit_matches_hand_value() {
        // 1x2 receiver [1, 2], sender [3, -4]; att = [0.5, 0.25 | 1, 0.5]
        // raw = 0.5 + 0.5 + 3 - 2 = 2 -> LeakyReLU = 2
        // swapped roles: 0.5*3 + 0.25*-4 + 1*1 + 0.5*2 = 2.5
        let mut t = Tape::new();
        let q = consts(&mut t, 1, 2, &[1., 2.]);
        let a = consts(&mut t, 1, 2, &[3., -4.]);
        let att = consts(&mut t, 4, 1, &[0.5, 0.25, 1., 0.5]);
        let c = attention_logits(&mut t, q, a, att, LEAKY_SLOPE).unwrap();
        assert_eq!(t.value(c).data(), &[2.0]);
        let c = attention_logits(&mut t, a, q, att, LEAKY_SLOPE).unwrap();
        assert_eq!(t.value(c).data(), &[2.5]);
        let neg = consts(&mut t, 1, 2, &[-10., 0.]);
        let c = attention_logits(&mut t, neg, a, att, LEAKY_SLOPE).unwrap();
        // raw = -5 + 3 - 2 = -4 -> -0.8
        assert!((t.value(c).item() + 0.8).abs() < 1e-12);
    }

    #[test]
    fn edge_scaled_attention_cases() {
        let mut t = Tape::new();
        // single answer: alpha is 1
        let c = consts(&mut t, 3, 1, &[0.3, -1., 2.]);
        let e = consts(&mut t, 3, 1, &[1., 5., -2.]);
        let a = edge_scaled_attention(&mut t, c, e).unwrap();
        assert_eq!(t.value(a).data(), &[1., 1., 1.]);

        // equal logits and edges: uniform
        let c = consts(&mut t, 1, 4, &[0.7; 4]);
        let e = consts(&mut t, 1, 4, &[1.5; 4]);
        let a = edge_scaled_attention(&mut t, c, e).unwrap();
        assert!(t.value(a).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

        // edge sums (2, 1), c = (1, 1): softmax(2, 1)
        let c = consts(&mut t, 1, 2, &[1., 1.]);
        let e = consts(&mut t, 1, 2, &[2., 1.]);
        let a = edge_scaled_attention(&mut t, c, e).unwrap();
        let v = t.value(a).data();
        assert!((v[0] - 0.7310585786).abs() < 1e-9 && (v[1] - 0.2689414214).abs() < 1e-9);
    }

    fn zero_heads(t: &mut Tape, f: usize, k: usize) -> Vec<HeadVars> {
        (0..k)
            .map(|_| HeadVars {
                weight: t.constant(Tensor::zeros(&[f, f])),
                att: t.constant(Tensor::matrix(2 * f, 1, vec![0.3; 2 * f]).unwrap()),
            })
            .collect()
    }

    fn elu(x: f64) -> f64 {
        if x > 0.0 { x } else { x.exp_m1() }
    }

    #[test]
    fn zero_weights_reduce_to_elu() {
        let mut t = Tape::new();
        let qd = [0.5, -1.0, 2.0, -0.2];
        let ad = [-3.0, 0.0, 1.0, 0.25, 0.1, -0.1];
        let q = consts(&mut t, 2, 2, &qd);
        let a = consts(&mut t, 3, 2, &ad);
        let e = consts(&mut t, 2, 3, &[1., 2., 3., 4., 5., 6.]);
        let heads = zero_heads(&mut t, 2, 3);
        let (q1, a1) = layer_forward(&mut t, q, a, e, &heads, None).unwrap();
        assert_eq!(t.value(q1).data(), qd.map(elu).as_slice());
        assert_eq!(t.value(a1).data(), ad.map(elu).as_slice());

        let layers = vec![heads.clone(), heads];
        let (q2, _) = egat_forward(&mut t, q, a, e, &layers, None).unwrap();
        assert_eq!(t.value(q2).data(), qd.map(|x| elu(elu(x))).as_slice());
    }

    #[test]
    fn single_neighbor_update_by_hand() {
        // F = 2, one head, W = I, att arbitrary: alpha = 1, so
        // q' = ELU(q + a) and a' = ELU(a + q).
        let mut t = Tape::new();
        let q = consts(&mut t, 1, 2, &[0.5, -2.0]);
        let a = consts(&mut t, 1, 2, &[1.0, 0.5]);
        let e = consts(&mut t, 1, 1, &[0.7]);
        let head = HeadVars {
            weight: consts(&mut t, 2, 2, &[1., 0., 0., 1.]),
            att: consts(&mut t, 4, 1, &[0.1, 0.2, 0.3, 0.4]),
        };
        let (q1, a1) = layer_forward(&mut t, q, a, e, &[head], None).unwrap();
        assert_eq!(t.value(q1).data(), &[1.5, elu(-1.5)]);
        assert_eq!(t.value(a1).data(), &[1.5, elu(-1.5)]);
    }

    #[test]
    fn no_questions_still_updates_answers() {
        let mut t = Tape::new();
        let q = t.constant(Tensor::zeros(&[0, 2]));
        let ad = [1.0, -1.0];
        let a = consts(&mut t, 1, 2, &ad);
        let e = t.constant(Tensor::zeros(&[0, 1]));
        let cfg = EgatConfig { layers: 1, heads: 2, feature_dim: 2 };
        let params = init_params(&cfg.param_specs(), 3).unwrap();
        let bound = params.bind(&mut t);
        let layers = bind_heads(&cfg, &bound).unwrap();
        let (q1, a1) = egat_forward(&mut t, q, a, e, &layers, None).unwrap();
        assert_eq!(t.shape(q1), (0, 2));
        assert_eq!(t.value(a1).data(), ad.map(elu).as_slice());
    }

    #[test]
    fn config_validation() {
        assert!(EgatConfig { layers: 2, heads: 1, feature_dim: 7 }.validate().is_err());
        assert!(EgatConfig { layers: 0, heads: 1, feature_dim: 8 }.validate().is_err());
        assert!(EgatConfig { layers: 2, heads: 4, feature_dim: 8 }.validate().is_ok());
    }
}
