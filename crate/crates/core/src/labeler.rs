//! Subject-mention labeling: BiGRU emissions feeding a two-label linear-chain
//! CRF.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, RngCore};

use crate::encoder::{embed, embed_backward};
use crate::error::{Error, Result};
use crate::neural::{
    linear_acc, linear_backward, log_sum_exp, BiGruCache, BiGruStack, Module, Param, Real, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    O = 0,
    Sub = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::O, Label::Sub];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::O => "O",
            Label::Sub => "SUB",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "O" => Ok(Label::O),
            "SUB" => Ok(Label::Sub),
            other => Err(Error::Invalid(format!("unknown label `{other}`"))),
        }
    }
}

fn check_shapes<T: Real>(emissions: &Tensor<T>, trans: &Tensor<T>) -> Result<()> {
    if emissions.rows() == 0 {
        return Err(Error::Empty("label sequence"));
    }
    if emissions.cols() != 2 {
        return Err(Error::dim("emission width", 2, emissions.cols()));
    }
    if trans.len() != 4 {
        return Err(Error::dim("transition matrix", 4, trans.len()));
    }
    Ok(())
}

#[inline]
fn a<T: Real>(trans: &Tensor<T>, prev: usize, next: usize) -> T {
    trans.data()[prev * 2 + next]
}

/// `Σ_t H[t, y_t] + Σ_{t≥1} A[y_{t−1}, y_t]`.
pub fn sequence_score<T: Real>(emissions: &Tensor<T>, trans: &Tensor<T>, labels: &[Label]) -> Result<T> {
    check_shapes(emissions, trans)?;
    if labels.len() != emissions.rows() {
        return Err(Error::dim("label sequence", emissions.rows(), labels.len()));
    }
    let mut s = T::zero();
    for (t, y) in labels.iter().enumerate() {
        s += emissions.row(t)[y.index()];
        if t > 0 {
            s += a(trans, labels[t - 1].index(), y.index());
        }
    }
    Ok(s)
}

/// Log-space forward variables, `(T, 2)`.
fn forward_vars<T: Real>(emissions: &Tensor<T>, trans: &Tensor<T>) -> Tensor<T> {
    let len = emissions.rows();
    let mut alpha = Tensor::zeros(&[len, 2]);
    alpha.row_mut(0).copy_from_slice(emissions.row(0));
    for t in 1..len {
        for j in 0..2 {
            let prev = alpha.row(t - 1);
            let terms = [prev[0] + a(trans, 0, j), prev[1] + a(trans, 1, j)];
            alpha.row_mut(t)[j] = log_sum_exp(&terms) + emissions.row(t)[j];
        }
    }
    alpha
}

fn backward_vars<T: Real>(emissions: &Tensor<T>, trans: &Tensor<T>) -> Tensor<T> {
    let len = emissions.rows();
    let mut beta = Tensor::zeros(&[len, 2]);
    for t in (0..len - 1).rev() {
        for i in 0..2 {
            let next = beta.row(t + 1);
            let h = emissions.row(t + 1);
            let terms = [a(trans, i, 0) + h[0] + next[0], a(trans, i, 1) + h[1] + next[1]];
            beta.row_mut(t)[i] = log_sum_exp(&terms);
        }
    }
    beta
}

/// `log Σ_y exp(s(y))` by the forward recursion.
pub fn log_partition<T: Real>(emissions: &Tensor<T>, trans: &Tensor<T>) -> Result<T> {
    check_shapes(emissions, trans)?;
    let alpha = forward_vars(emissions, trans);
    Ok(log_sum_exp(alpha.row(emissions.rows() - 1)))
}

/// Highest-scoring label sequence and its score. Ties resolve toward `O`.
pub fn viterbi<T: Real>(emissions: &Tensor<T>, trans: &Tensor<T>) -> Result<(Vec<Label>, T)> {
    check_shapes(emissions, trans)?;
    let len = emissions.rows();
    let mut delta = [emissions.row(0)[0], emissions.row(0)[1]];
    let mut back = vec![[0usize; 2]; len];
    for t in 1..len {
        let mut next = [T::zero(); 2];
        for j in 0..2 {
            let mut best = 0;
            let mut best_v = delta[0] + a(trans, 0, j);
            let v = delta[1] + a(trans, 1, j);
            if v > best_v {
                best = 1;
                best_v = v;
            }
            back[t][j] = best;
            next[j] = best_v + emissions.row(t)[j];
        }
        delta = next;
    }
    let mut label = if delta[1] > delta[0] { 1 } else { 0 };
    let score = delta[label];
    let mut out = vec![Label::O; len];
    for t in (0..len).rev() {
        out[t] = Label::ALL[label];
        label = back[t][label];
    }
    Ok((out, score))
}

/// Negative log-likelihood of `gold` with gradients w.r.t. emissions and
/// transitions.
pub fn nll_with_grads<T: Real>(
    emissions: &Tensor<T>,
    trans: &Tensor<T>,
    gold: &[Label],
) -> Result<(T, Tensor<T>, Tensor<T>)> {
    let gold_score = sequence_score(emissions, trans, gold)?;
    let len = emissions.rows();
    let alpha = forward_vars(emissions, trans);
    let beta = backward_vars(emissions, trans);
    let log_z = log_sum_exp(alpha.row(len - 1));

    let mut d_em = Tensor::zeros(&[len, 2]);
    let mut d_tr = Tensor::zeros(&[2, 2]);
    for t in 0..len {
        for j in 0..2 {
            d_em.row_mut(t)[j] = (alpha.row(t)[j] + beta.row(t)[j] - log_z).exp();
        }
        d_em.row_mut(t)[gold[t].index()] -= T::one();
        if t > 0 {
            for i in 0..2 {
                for j in 0..2 {
                    let lp = alpha.row(t - 1)[i] + a(trans, i, j) + emissions.row(t)[j] + beta.row(t)[j] - log_z;
                    d_tr.data_mut()[i * 2 + j] += lp.exp();
                }
            }
            d_tr.data_mut()[gold[t - 1].index() * 2 + gold[t].index()] -= T::one();
        }
    }
    Ok((log_z - gold_score, d_em, d_tr))
}

/// Longest run of `Sub`, leftmost on ties.
pub fn extract_mention(labels: &[Label]) -> Option<Range<usize>> {
    let mut best: Option<Range<usize>> = None;
    let mut t = 0;
    while t < labels.len() {
        if labels[t] == Label::Sub {
            let start = t;
            while t < labels.len() && labels[t] == Label::Sub {
                t += 1;
            }
            if best.as_ref().is_none_or(|b| t - start > b.len()) {
                best = Some(start..t);
            }
        } else {
            t += 1;
        }
    }
    best
}

/// Embedding → BiGRU → per-token label scores, plus the transition matrix.
#[derive(Clone, Debug)]
pub struct Labeler<T> {
    pub embedding: Param<T>,
    pub stack: BiGruStack<T>,
    pub emit_w: Param<T>,
    pub emit_b: Param<T>,
    pub trans: Param<T>,
}

#[derive(Clone, Debug)]
pub struct LabelerCache<T> {
    ids: Vec<usize>,
    stack: BiGruCache<T>,
    pub emissions: Tensor<T>,
}

impl<T: Real> Labeler<T> {
    pub fn new(
        vocab_rows: usize,
        embedding_dim: usize,
        hidden: usize,
        layers: usize,
        dropout: f64,
        range: f64,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            embedding: Param::uniform("labeler.embedding", &[vocab_rows, embedding_dim], range, rng),
            stack: BiGruStack::new("labeler.bigru", embedding_dim, hidden, layers, dropout, range, rng),
            emit_w: Param::uniform("labeler.emit_w", &[2 * hidden, 2], range, rng),
            emit_b: Param::uniform("labeler.emit_b", &[2], range, rng),
            trans: Param::uniform("labeler.trans", &[2, 2], range, rng),
        }
    }

    pub fn forward(&self, ids: &[usize], rng: Option<&mut dyn RngCore>) -> Result<LabelerCache<T>> {
        let x = embed(&self.embedding, ids)?;
        let stack = self.stack.forward(x, rng)?;
        let len = ids.len();
        let mut emissions = Tensor::zeros(&[len, 2]);
        for t in 0..len {
            let row = emissions.row_mut(t);
            row.copy_from_slice(self.emit_b.value.data());
            linear_acc(&self.emit_w.value, stack.hidden.row(t), row);
        }
        Ok(LabelerCache {
            ids: ids.to_vec(),
            stack,
            emissions,
        })
    }

    pub fn decode(&self, ids: &[usize]) -> Result<(Vec<Label>, T)> {
        let cache = self.forward(ids, None)?;
        viterbi(&cache.emissions, &self.trans.value)
    }

    /// CRF negative log-likelihood; accumulates gradients.
    pub fn nll(&mut self, ids: &[usize], gold: &[Label], rng: Option<&mut dyn RngCore>) -> Result<T> {
        let cache = self.forward(ids, rng)?;
        let (loss, d_em, d_tr) = nll_with_grads(&cache.emissions, &self.trans.value, gold)?;
        self.trans.grad.add_assign(&d_tr);
        let mut d_hidden = Tensor::zeros(cache.stack.hidden.shape());
        for t in 0..ids.len() {
            linear_backward(
                &mut self.emit_w,
                Some(&mut self.emit_b),
                cache.stack.hidden.row(t),
                d_em.row(t),
                Some(d_hidden.row_mut(t)),
            );
        }
        let d_x = self.stack.backward(&cache.stack, Some(&d_hidden), None);
        embed_backward(&mut self.embedding, &cache.ids, &d_x);
        Ok(loss)
    }
}

impl<T: Real> Module<T> for Labeler<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.embedding);
        self.stack.visit_params(f);
        f(&self.emit_w);
        f(&self.emit_b);
        f(&self.trans);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.embedding);
        self.stack.visit_params_mut(f);
        f(&mut self.emit_w);
        f(&mut self.emit_b);
        f(&mut self.trans);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use Label::{Sub, O};

    fn all_sequences(len: usize) -> Vec<Vec<Label>> {
        (0..1usize << len)
            .map(|bits| (0..len).map(|t| Label::ALL[(bits >> t) & 1]).collect())
            .collect()
    }

    fn scalar_score(h: &[[f64; 2]], a: &[[f64; 2]; 2], y: &[Label]) -> f64 {
        let mut s = 0.0;
        for t in 0..y.len() {
            s += h[t][y[t] as usize];
        }
        for t in 1..y.len() {
            s += a[y[t - 1] as usize][y[t] as usize];
        }
        s
    }

    fn random_instance(rng: &mut ChaCha8Rng, len: usize) -> (Tensor<f64>, Tensor<f64>) {
        (Tensor::uniform(&[len, 2], 2.0, rng), Tensor::uniform(&[2, 2], 2.0, rng))
    }

    fn as_arrays(em: &Tensor<f64>, tr: &Tensor<f64>) -> (Vec<[f64; 2]>, [[f64; 2]; 2]) {
        let h = (0..em.rows()).map(|t| [em.row(t)[0], em.row(t)[1]]).collect();
        let d = tr.data();
        (h, [[d[0], d[1]], [d[2], d[3]]])
    }

    #[test]
    fn score_examples() {
        let em = Tensor::from_vec(&[1, 2], vec![0.3, -0.7]).unwrap();
        let tr = Tensor::from_vec(&[2, 2], vec![5.0, 5.0, 5.0, 5.0]).unwrap();
        assert_eq!(sequence_score(&em, &tr, &[Sub]).unwrap(), -0.7);
        let zeros = Tensor::<f64>::zeros(&[3, 2]);
        let zt = Tensor::zeros(&[2, 2]);
        for y in all_sequences(3) {
            assert_eq!(sequence_score(&zeros, &zt, &y).unwrap(), 0.0);
        }
        assert!(sequence_score(&zeros, &zt, &[O]).is_err());
    }

    #[test]
    fn score_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (em, tr) = random_instance(&mut rng, 4);
        let (h, a) = as_arrays(&em, &tr);
        for y in all_sequences(4) {
            let got = sequence_score(&em, &tr, &y).unwrap();
            assert!((got - scalar_score(&h, &a, &y)).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_examples() {
        let zeros = Tensor::<f64>::zeros(&[3, 2]);
        let zt = Tensor::zeros(&[2, 2]);
        assert!((log_partition(&zeros, &zt).unwrap() - 8f64.ln()).abs() < 1e-12);
        let em = Tensor::from_vec(&[1, 2], vec![0.3, -0.7]).unwrap();
        let want = (0.3f64.exp() + (-0.7f64).exp()).ln();
        assert!((log_partition(&em, &zt).unwrap() - want).abs() < 1e-12);
        for gold in all_sequences(3) {
            let (loss, _, _) = nll_with_grads(&zeros, &zt, &gold).unwrap();
            assert!((loss - 8f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn viterbi_examples() {
        let em = Tensor::from_vec(&[2, 2], vec![0.0, 0.0, 0.0, 10.0]).unwrap();
        let zt = Tensor::<f64>::zeros(&[2, 2]);
        assert_eq!(viterbi(&em, &zt).unwrap().0, vec![O, Sub]);
        let zeros = Tensor::<f64>::zeros(&[5, 2]);
        assert_eq!(viterbi(&zeros, &zt).unwrap().0, vec![O; 5]);
    }

    #[test]
    fn peaked_gold_has_vanishing_loss() {
        let em = Tensor::from_vec(&[3, 2], vec![50.0, 0.0, 0.0, 50.0, 0.0, 50.0]).unwrap();
        let zt = Tensor::<f64>::zeros(&[2, 2]);
        let (loss, _, _) = nll_with_grads(&em, &zt, &[O, Sub, Sub]).unwrap();
        assert!((0.0..1e-15).contains(&loss));
    }

    proptest! {
        #[test]
        fn enumeration_agrees(seed in any::<u64>(), len in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (em, tr) = random_instance(&mut rng, len);
            let (h, a) = as_arrays(&em, &tr);
            let scores: Vec<f64> = all_sequences(len).iter().map(|y| scalar_score(&h, &a, y)).collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let brute = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
            let z = log_partition(&em, &tr).unwrap();
            prop_assert!((z - brute).abs() < 1e-8);
            let total: f64 = scores.iter().map(|s| (s - z).exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            for s in &scores {
                let p = (s - z).exp();
                prop_assert!(p > 0.0 && p <= 1.0);
            }

            let (best, score) = viterbi(&em, &tr).unwrap();
            prop_assert!((score - sequence_score(&em, &tr, &best).unwrap()).abs() < 1e-12);
            for y in all_sequences(len) {
                prop_assert!(score >= scalar_score(&h, &a, &y) - 1e-12);
            }
        }

        #[test]
        fn nll_is_nonnegative(seed in any::<u64>(), len in 1usize..=6, bits in any::<u8>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (em, tr) = random_instance(&mut rng, len);
            let gold: Vec<Label> = (0..len).map(|t| Label::ALL[((bits >> t) & 1) as usize]).collect();
            let (loss, d_em, _) = nll_with_grads(&em, &tr, &gold).unwrap();
            prop_assert!(loss >= 0.0);
            for t in 0..len {
                // Marginals sum to one, gold indicator to one.
                prop_assert!((d_em.row(t)[0] + d_em.row(t)[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mention_extraction() {
        assert_eq!(extract_mention(&[O, O, O, O, Sub, Sub]), Some(4..6));
        assert_eq!(extract_mention(&[O, O]), None);
        assert_eq!(extract_mention(&[Sub, O, Sub, Sub]), Some(2..4));
        assert_eq!(extract_mention(&[Sub, O, Sub]), Some(0..1));
        assert_eq!(extract_mention(&[]), None);
    }

    #[test]
    fn label_text_roundtrip() {
        for l in Label::ALL {
            assert_eq!(l.to_string().parse::<Label>().unwrap(), l);
        }
        assert!("B".parse::<Label>().is_err());
    }

    #[test]
    fn labeler_decode_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lab = Labeler::<f64>::new(10, 4, 3, 2, 0.5, 0.5, &mut rng);
        let ids = [1, 4, 0, 9];
        let (labels, score) = lab.decode(&ids).unwrap();
        let cache = lab.forward(&ids, None).unwrap();
        let want = sequence_score(&cache.emissions, &lab.trans.value, &labels).unwrap();
        assert!((score - want).abs() < 1e-12);
        assert_eq!(labels.len(), 4);
    }
}
