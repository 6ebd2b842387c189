//! Pair scoring: per-pair representations, the biaffine classifier, the
//! training objectives, and link decoding.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::Result;
use crate::nn::{Tape, Tensor, Var};

/// Tape handles for the twin feed-forward networks and the biaffine layer.
#[derive(Debug, Clone, Copy)]
pub struct ScorerVars {
    pub type_question: Var,
    pub type_answer: Var,
    pub q_weight: Var,
    pub q_bias: Var,
    pub a_weight: Var,
    pub a_bias: Var,
    /// `d x 2d`: columns `k*d..(k+1)*d` hold the bilinear form of class `k`.
    pub u: Var,
    /// `2 x 2d`.
    pub w: Var,
    /// `1 x 2`.
    pub b: Var,
}

/// Builds `FFN(x) = ELU(x W + b)` for the question and answer sides of every
/// pair. `questions`/`answers` are the input embeddings, `*_final` the eGAT
/// outputs, `edges` the `P x F/2` edge embeddings, and `pairs` the
/// `(question row, answer row)` of each of the `P` pairs.
#[allow(clippy::too_many_arguments)]
pub fn pair_representations(
    tape: &mut Tape,
    questions: Var,
    questions_final: Var,
    answers: Var,
    answers_final: Var,
    edges: Var,
    pairs: &[(usize, usize)],
    head: &ScorerVars,
) -> Result<(Var, Var)> {
    let qi: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let ai: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let zeros = vec![0; pairs.len()];

    let side = |tape: &mut Tape, emb: Var, fin: Var, idx: &[usize], ty: Var, w: Var, b: Var| -> Result<Var> {
        let e0 = tape.gather_rows(emb, idx)?;
        let e1 = tape.gather_rows(fin, idx)?;
        let t = tape.gather_rows(ty, &zeros)?;
        let x = tape.concat_cols(&[e0, e1, edges, t])?;
        let h = tape.matmul(x, w)?;
        let h = tape.add_row(h, b)?;
        Ok(tape.elu(h))
    };
    let q = side(tape, questions, questions_final, &qi, head.type_question, head.q_weight, head.q_bias)?;
    let a = side(tape, answers, answers_final, &ai, head.type_answer, head.a_weight, head.a_bias)?;
    Ok((q, a))
}

/// Class scores `s_k = q' U_k a' + W_k [q'; a'] + b_k` for every pair (`P x 2`).
pub fn biaffine_scores(tape: &mut Tape, q: Var, a: Var, head: &ScorerVars) -> Result<Var> {
    let d = tape.shape(q).1;
    let qu = tape.matmul(q, head.u)?;
    let mut classes = Vec::with_capacity(2);
    for k in 0..2 {
        let uk = tape.slice_cols(qu, k * d, (k + 1) * d)?;
        let prod = tape.hadamard(uk, a)?;
        classes.push(tape.row_sum(prod));
    }
    let bilinear = tape.concat_cols(&classes)?;
    let qa = tape.concat_cols(&[q, a])?;
    let wt = tape.transpose(head.w);
    let linear = tape.matmul(qa, wt)?;
    let s = tape.add(bilinear, linear)?;
    tape.add_row(s, head.b)
}

/// Two-class cross-entropy averaged over pairs. `log_probs` is `P x 2`.
pub fn loss_binary(tape: &mut Tape, log_probs: Var, labels: &[bool]) -> Result<Var> {
    let cols: Vec<usize> = labels.iter().map(|&y| y as usize).collect();
    let picked = tape.pick(log_probs, &cols)?;
    let mean = tape.mean(picked);
    Ok(tape.scale(mean, -1.0))
}

/// Gold pairs and, for each, the pair indices of the competing questions for
/// the same answer. Pairs are indexed row-major over `m` questions and `n`
/// answers.
pub fn constraint_groups(m: usize, n: usize, labels: &[bool]) -> Vec<(usize, Vec<usize>)> {
    let mut out = Vec::new();
    for i in 0..m {
        for j in 0..n {
            if labels[i * n + j] {
                let rivals = (0..m).filter(|&k| k != i).map(|k| k * n + j).collect();
                out.push((i * n + j, rivals));
            }
        }
    }
    out
}

/// Constraint objective: for each gold pair `(i, j)`,
/// `| log p1(i,j) - mean_{k != i} log(1 - p1(k,j)) |`, averaged over gold
/// pairs. Gold pairs without competitors contribute 0; no gold pairs gives 0.
/// With two classes `log(1 - p1) = log p0`.
pub fn loss_constraint(tape: &mut Tape, log_probs: Var, m: usize, n: usize, labels: &[bool]) -> Result<Var> {
    let groups = constraint_groups(m, n, labels);
    if groups.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let active: Vec<&(usize, Vec<usize>)> = groups.iter().filter(|g| !g.1.is_empty()).collect();
    if active.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let pairs = m * n;
    let mut avg = vec![0.0; active.len() * pairs];
    for (r, (_, rivals)) in active.iter().enumerate() {
        let w = 1.0 / rivals.len() as f64;
        for &p in rivals {
            avg[r * pairs + p] = w;
        }
    }
    let gold: Vec<usize> = active.iter().map(|g| g.0).collect();
    let lp1 = tape.slice_cols(log_probs, 1, 2)?;
    let lp0 = tape.slice_cols(log_probs, 0, 1)?;
    let x = tape.gather_rows(lp1, &gold)?;
    let avg = tape.constant(Tensor::matrix(active.len(), pairs, avg)?);
    let y = tape.matmul(avg, lp0)?;
    let diff = tape.sub(x, y)?;
    let abs = tape.abs(diff);
    let total = tape.sum(abs);
    Ok(tape.scale(total, 1.0 / groups.len() as f64))
}

/// `alpha * L_b + beta * L_c`.
pub fn loss_total(tape: &mut Tape, lb: Var, lc: Var, alpha: f64, beta: f64) -> Result<Var> {
    let a = tape.scale(lb, alpha);
    let b = tape.scale(lc, beta);
    tape.add(a, b)
}

/// Per-pair class probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub s: [f64; 2],
    pub p: [f64; 2],
}

impl PairScore {
    pub fn from_scores(s: [f64; 2]) -> Self {
        let max = s[0].max(s[1]);
        let e = [(s[0] - max).exp(), (s[1] - max).exp()];
        let z = e[0] + e[1];
        Self { s, p: [e[0] / z, e[1] / z] }
    }

    pub fn linked(&self) -> bool {
        self.p[1] > self.p[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Argmax,
    Constrained,
}

impl std::str::FromStr for DecodeMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "argmax" => Ok(DecodeMode::Argmax),
            "constrained" => Ok(DecodeMode::Constrained),
            other => Err(format!("unknown decode mode {other:?} (argmax|constrained)")),
        }
    }
}

/// A scored (question, answer) candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub question: i64,
    pub answer: i64,
    pub score: PairScore,
}

/// Predicted links. Argmax keeps every pair with `p1 > p0`; constrained keeps,
/// per answer, only the positive pair with the highest `p1` (earliest pair on
/// ties).
pub fn decode(pairs: &[ScoredPair], mode: DecodeMode) -> BTreeSet<(i64, i64)> {
    let positives = pairs.iter().filter(|p| p.score.linked());
    match mode {
        DecodeMode::Argmax => positives.map(|p| (p.question, p.answer)).collect(),
        DecodeMode::Constrained => {
            let mut best: BTreeMap<i64, &ScoredPair> = BTreeMap::new();
            for p in positives {
                best.entry(p.answer)
                    .and_modify(|cur| {
                        if p.score.p[1] > cur.score.p[1] {
                            *cur = p;
                        }
                    })
                    .or_insert(p);
            }
            best.values().map(|p| (p.question, p.answer)).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores_from_p1(t: &mut Tape, p1: &[f64]) -> Var {
        let data: Vec<f64> = p1.iter().flat_map(|&p| [(1.0 - p).ln(), p.ln()]).collect();
        t.constant(Tensor::matrix(p1.len(), 2, data).unwrap())
    }

    #[test]
    fn biaffine_spot_values() {
        let mut t = Tape::new();
        let d = 3;
        let zero = |t: &mut Tape, r, c| t.constant(Tensor::zeros(&[r, c]));
        let head = ScorerVars {
            type_question: zero(&mut t, 1, 1),
            type_answer: zero(&mut t, 1, 1),
            q_weight: zero(&mut t, 1, 1),
            q_bias: zero(&mut t, 1, 1),
            a_weight: zero(&mut t, 1, 1),
            a_bias: zero(&mut t, 1, 1),
            u: zero(&mut t, d, 2 * d),
            w: zero(&mut t, 2, 2 * d),
            b: zero(&mut t, 1, 2),
        };
        let q = t.constant(Tensor::matrix(1, d, vec![0.3, -1.0, 2.0]).unwrap());
        let a = t.constant(Tensor::matrix(1, d, vec![1.0, 0.5, -0.5]).unwrap());
        let s = biaffine_scores(&mut t, q, a, &head).unwrap();
        let p = t.softmax(s, crate::nn::Reduce::Rows);
        assert_eq!(t.value(p).data(), &[0.5, 0.5]);

        let b = t.constant(Tensor::row(&[0.0, 3f64.ln()]));
        let s = biaffine_scores(&mut t, q, a, &ScorerVars { b, ..head }).unwrap();
        let p = t.softmax(s, crate::nn::Reduce::Rows);
        let v = t.value(p).data();
        assert!((v[0] - 0.25).abs() < 1e-12 && (v[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn scalar_bilinear_term() {
        let mut t = Tape::new();
        let zero = |t: &mut Tape, r, c| t.constant(Tensor::zeros(&[r, c]));
        let u = t.constant(Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap());
        let head = ScorerVars {
            type_question: zero(&mut t, 1, 1),
            type_answer: zero(&mut t, 1, 1),
            q_weight: zero(&mut t, 1, 1),
            q_bias: zero(&mut t, 1, 1),
            a_weight: zero(&mut t, 1, 1),
            a_bias: zero(&mut t, 1, 1),
            u,
            w: zero(&mut t, 2, 2),
            b: zero(&mut t, 1, 2),
        };
        let q = t.constant(Tensor::matrix(2, 1, vec![1.5, -2.0]).unwrap());
        let a = t.constant(Tensor::matrix(2, 1, vec![4.0, 3.0]).unwrap());
        let s = biaffine_scores(&mut t, q, a, &head).unwrap();
        assert_eq!(t.value(s).data(), &[0.0, 6.0, 0.0, -6.0]);
    }

    #[test]
    fn binary_loss_values() {
        let mut t = Tape::new();
        let half = scores_from_p1(&mut t, &[0.5, 0.5, 0.5]);
        let l = loss_binary(&mut t, half, &[true, false, false]).unwrap();
        assert!((t.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);

        let one = scores_from_p1(&mut t, &[0.25]);
        let l = loss_binary(&mut t, one, &[true]).unwrap();
        assert!((t.value(l).item() - 1.3862943611).abs() < 1e-9);

        let sure = t.constant(Tensor::matrix(2, 2, vec![-1e-12, -30.0, -30.0, -1e-12]).unwrap());
        let l = loss_binary(&mut t, sure, &[false, true]).unwrap();
        assert!(t.value(l).item() < 1e-9);
    }

    #[test]
    fn constraint_loss_values() {
        let mut t = Tape::new();
        // 2 questions x 1 answer, question 0 is gold
        let lp = scores_from_p1(&mut t, &[0.9, 0.2]);
        let l = loss_constraint(&mut t, lp, 2, 1, &[true, false]).unwrap();
        assert!((t.value(l).item() - 0.11778303565638346).abs() < 1e-12);

        let lp = scores_from_p1(&mut t, &[0.5, 0.5, 0.5]);
        let l = loss_constraint(&mut t, lp, 3, 1, &[false, true, false]).unwrap();
        assert!(t.value(l).item().abs() < 1e-15);

        let lp = scores_from_p1(&mut t, &[0.7, 0.1, 0.3, 0.9]);
        let l = loss_constraint(&mut t, lp, 2, 2, &[false; 4]).unwrap();
        assert_eq!(t.value(l).item(), 0.0);

        // single question: the gold pair has no competitors
        let lp = scores_from_p1(&mut t, &[0.3]);
        let l = loss_constraint(&mut t, lp, 1, 1, &[true]).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
    }

    #[test]
    fn total_loss_weights() {
        let mut t = Tape::new();
        let one = t.constant(Tensor::scalar(1.0));
        let zero = t.constant(Tensor::scalar(0.0));
        let l = loss_total(&mut t, one, zero, 1.0, 0.02).unwrap();
        assert_eq!(t.value(l).item(), 1.0);
        let l = loss_total(&mut t, one, one, 1.0, 0.02).unwrap();
        assert!((t.value(l).item() - 1.02).abs() < 1e-15);
        let big = t.constant(Tensor::scalar(7.0));
        let l = loss_total(&mut t, one, big, 1.0, 0.0).unwrap();
        assert_eq!(t.value(l).item(), 1.0);
    }

    fn sp(q: i64, a: i64, p1: f64) -> ScoredPair {
        ScoredPair { question: q, answer: a, score: PairScore::from_scores([0.0, (p1 / (1.0 - p1)).ln()]) }
    }

    #[test]
    fn decoding_modes() {
        let pairs = [sp(1, 1, 0.9), sp(2, 1, 0.8), sp(1, 2, 0.3), sp(2, 2, 0.2)];
        assert_eq!(decode(&pairs, DecodeMode::Argmax), BTreeSet::from([(1, 1), (2, 1)]));
        assert_eq!(decode(&pairs, DecodeMode::Constrained), BTreeSet::from([(1, 1)]));
        let low = [sp(1, 1, 0.4), sp(2, 1, 0.1)];
        assert!(decode(&low, DecodeMode::Argmax).is_empty());
        assert!(decode(&low, DecodeMode::Constrained).is_empty());
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn constrained_is_one_per_answer_and_order_free(
            p1 in proptest::collection::vec(0.01f64..0.99, 12),
            seed in 0u64..500,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let pairs: Vec<ScoredPair> = p1.iter().enumerate()
                .map(|(k, &p)| sp((k / 3) as i64, (k % 3) as i64, p))
                .collect();
            let out = decode(&pairs, DecodeMode::Constrained);
            let answers: BTreeSet<i64> = out.iter().map(|l| l.1).collect();
            prop_assert_eq!(answers.len(), out.len());
            prop_assert!(out.is_subset(&decode(&pairs, DecodeMode::Argmax)));
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(decode(&shuffled, DecodeMode::Argmax), decode(&pairs, DecodeMode::Argmax));
            prop_assert_eq!(decode(&shuffled, DecodeMode::Constrained), out);
        }

        #[test]
        fn losses_are_nonnegative(
            p1 in proptest::collection::vec(0.001f64..0.999, 6),
            labels in proptest::collection::vec(any::<bool>(), 6),
        ) {
            let mut t = Tape::new();
            let lp = scores_from_p1(&mut t, &p1);
            let lb = loss_binary(&mut t, lp, &labels).unwrap();
            let lc = loss_constraint(&mut t, lp, 2, 3, &labels).unwrap();
            prop_assert!(t.value(lb).item() >= 0.0);
            prop_assert!(t.value(lc).item() >= 0.0);
        }
    }
}
