//! Tokenization, vocabularies, and the question encoders: a BiGRU encoder with
//! a linear projection (optionally sigmoid-squashed) and the embedding-average
//! baseline.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::neural::{
    axpy, linear_acc, linear_backward, sigmoid, BiGruCache, BiGruStack, Module, Param, Real,
    Tensor,
};

/// Lowercases and splits on whitespace and punctuation; punctuation is dropped.
pub fn tokenize(question: &str) -> Result<Vec<String>> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in question.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    if tokens.is_empty() {
        return Err(Error::Empty("question has no tokens"));
    }
    Ok(tokens)
}

/// Token → index map. Index 0 is reserved for unknown tokens.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const UNK: usize = 0;

    /// Builds from token sequences in first-seen order.
    pub fn build<'a, I, S>(sequences: I) -> Self
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        let mut v = Self::default();
        for seq in sequences {
            for tok in seq.as_ref() {
                v.insert(tok);
            }
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        self.tokens.push(token.to_owned());
        let i = self.tokens.len();
        self.index.insert(token.to_owned(), i);
        i
    }

    /// Number of known tokens (excluding the unknown slot).
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Embedding table rows required: `len() + 1`.
    pub fn table_rows(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        id.checked_sub(1).and_then(|i| self.tokens.get(i)).map(String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut v = Self::default();
        for line in text.lines() {
            if !line.is_empty() {
                v.insert(line);
            }
        }
        Ok(v)
    }
}

/// Reads `token v1 … v_dim` lines into rows of an embedding table for `vocab`.
/// Tokens absent from the file keep their existing values. Returns the number
/// of rows filled.
pub fn load_pretrained_embeddings<T: Real>(
    path: &Path,
    vocab: &Vocabulary,
    table: &mut Tensor<T>,
) -> Result<usize> {
    let dim = table.cols();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut filled = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: format!("bad number: {e}"),
            })?;
        if values.len() != dim {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        let id = vocab.id(token);
        if id != Vocabulary::UNK {
            for (dst, v) in table.row_mut(id).iter_mut().zip(values) {
                *dst = T::lit(v);
            }
            filled += 1;
        }
    }
    Ok(filled)
}

pub(crate) fn embed<T: Real>(table: &Param<T>, ids: &[usize]) -> Result<Tensor<T>> {
    if ids.is_empty() {
        return Err(Error::Empty("token sequence"));
    }
    let dim = table.value.cols();
    let mut x = Tensor::zeros(&[ids.len(), dim]);
    for (t, &id) in ids.iter().enumerate() {
        if id >= table.value.rows() {
            return Err(Error::Lookup {
                kind: "token id",
                name: id.to_string(),
            });
        }
        x.row_mut(t).copy_from_slice(table.value.row(id));
    }
    Ok(x)
}

pub(crate) fn embed_backward<T: Real>(table: &mut Param<T>, ids: &[usize], d_x: &Tensor<T>) {
    for (t, &id) in ids.iter().enumerate() {
        axpy(T::one(), d_x.row(t), table.grad.row_mut(id));
    }
}

/// Embedding → BiGRU stack → final state → linear projection (→ sigmoid).
#[derive(Clone, Debug)]
pub struct BiGruEncoder<T> {
    pub embedding: Param<T>,
    pub stack: BiGruStack<T>,
    pub proj_w: Param<T>,
    pub proj_b: Param<T>,
    pub squash: bool,
}

#[derive(Clone, Debug)]
pub struct BiGruEncoderCache<T> {
    ids: Vec<usize>,
    stack: BiGruCache<T>,
    pub output: Vec<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderDims {
    pub vocab_rows: usize,
    pub embedding: usize,
    pub hidden: usize,
    pub layers: usize,
    pub output: usize,
}

impl<T: Real> BiGruEncoder<T> {
    pub fn new(
        prefix: &str,
        dims: EncoderDims,
        dropout: f64,
        squash: bool,
        range: f64,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            embedding: Param::uniform(
                format!("{prefix}.embedding"),
                &[dims.vocab_rows, dims.embedding],
                range,
                rng,
            ),
            stack: BiGruStack::new(
                &format!("{prefix}.bigru"),
                dims.embedding,
                dims.hidden,
                dims.layers,
                dropout,
                range,
                rng,
            ),
            proj_w: Param::uniform(format!("{prefix}.proj_w"), &[2 * dims.hidden, dims.output], range, rng),
            proj_b: Param::uniform(format!("{prefix}.proj_b"), &[dims.output], range, rng),
            squash,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.proj_b.value.len()
    }

    pub fn forward(&self, ids: &[usize], rng: Option<&mut dyn RngCore>) -> Result<BiGruEncoderCache<T>> {
        let x = embed(&self.embedding, ids)?;
        let stack = self.stack.forward(x, rng)?;
        let mut output = self.proj_b.value.data().to_vec();
        linear_acc(&self.proj_w.value, &stack.final_state, &mut output);
        if self.squash {
            output.iter_mut().for_each(|v| *v = sigmoid(*v));
        }
        Ok(BiGruEncoderCache {
            ids: ids.to_vec(),
            stack,
            output,
        })
    }

    pub fn backward(&mut self, cache: &BiGruEncoderCache<T>, d_output: &[T]) {
        let d_pre: Vec<T> = if self.squash {
            d_output
                .iter()
                .zip(&cache.output)
                .map(|(&d, &s)| d * s * (T::one() - s))
                .collect()
        } else {
            d_output.to_vec()
        };
        let mut d_final = vec![T::zero(); self.stack.output_dim()];
        linear_backward(
            &mut self.proj_w,
            Some(&mut self.proj_b),
            &cache.stack.final_state,
            &d_pre,
            Some(&mut d_final),
        );
        let d_x = self.stack.backward(&cache.stack, None, Some(&d_final));
        embed_backward(&mut self.embedding, &cache.ids, &d_x);
    }
}

impl<T: Real> Module<T> for BiGruEncoder<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.embedding);
        self.stack.visit_params(f);
        f(&self.proj_w);
        f(&self.proj_b);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.embedding);
        self.stack.visit_params_mut(f);
        f(&mut self.proj_w);
        f(&mut self.proj_b);
    }
}

/// Mean of the question's word embeddings.
#[derive(Clone, Debug)]
pub struct EmbedAvgEncoder<T> {
    pub embedding: Param<T>,
}

impl<T: Real> EmbedAvgEncoder<T> {
    pub fn new(prefix: &str, vocab_rows: usize, dim: usize, range: f64, rng: &mut impl Rng) -> Self {
        Self {
            embedding: Param::uniform(format!("{prefix}.embedding"), &[vocab_rows, dim], range, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.embedding.value.cols()
    }

    pub fn encode(&self, ids: &[usize]) -> Result<Vec<T>> {
        let x = embed(&self.embedding, ids)?;
        let inv = T::one() / T::lit(ids.len() as f64);
        let mut out = vec![T::zero(); self.output_dim()];
        for t in 0..ids.len() {
            axpy(inv, x.row(t), &mut out);
        }
        Ok(out)
    }

    pub fn backward(&mut self, ids: &[usize], d_output: &[T]) {
        let inv = T::one() / T::lit(ids.len() as f64);
        for &id in ids {
            axpy(inv, d_output, self.embedding.grad.row_mut(id));
        }
    }
}

impl<T: Real> Module<T> for EmbedAvgEncoder<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.embedding);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.embedding);
    }
}

/// Which network maps a question to a vector.
#[derive(Clone, Debug)]
pub enum QuestionEncoder<T> {
    BiGru(BiGruEncoder<T>),
    Avg(EmbedAvgEncoder<T>),
}

#[derive(Clone, Debug)]
pub enum EncodeCache<T> {
    BiGru(BiGruEncoderCache<T>),
    Avg { ids: Vec<usize>, output: Vec<T> },
}

impl<T: Real> EncodeCache<T> {
    pub fn output(&self) -> &[T] {
        match self {
            EncodeCache::BiGru(c) => &c.output,
            EncodeCache::Avg { output, .. } => output,
        }
    }
}

impl<T: Real> QuestionEncoder<T> {
    pub fn output_dim(&self) -> usize {
        match self {
            QuestionEncoder::BiGru(e) => e.output_dim(),
            QuestionEncoder::Avg(e) => e.output_dim(),
        }
    }

    pub fn embedding(&self) -> &Param<T> {
        match self {
            QuestionEncoder::BiGru(e) => &e.embedding,
            QuestionEncoder::Avg(e) => &e.embedding,
        }
    }

    pub fn embedding_mut(&mut self) -> &mut Param<T> {
        match self {
            QuestionEncoder::BiGru(e) => &mut e.embedding,
            QuestionEncoder::Avg(e) => &mut e.embedding,
        }
    }

    pub fn forward(&self, ids: &[usize], rng: Option<&mut dyn RngCore>) -> Result<EncodeCache<T>> {
        match self {
            QuestionEncoder::BiGru(e) => e.forward(ids, rng).map(EncodeCache::BiGru),
            QuestionEncoder::Avg(e) => Ok(EncodeCache::Avg {
                ids: ids.to_vec(),
                output: e.encode(ids)?,
            }),
        }
    }

    /// Inference-mode encoding.
    pub fn encode(&self, ids: &[usize]) -> Result<Vec<T>> {
        Ok(match self.forward(ids, None)? {
            EncodeCache::BiGru(c) => c.output,
            EncodeCache::Avg { output, .. } => output,
        })
    }

    pub fn backward(&mut self, cache: &EncodeCache<T>, d_output: &[T]) {
        match (self, cache) {
            (QuestionEncoder::BiGru(e), EncodeCache::BiGru(c)) => e.backward(c, d_output),
            (QuestionEncoder::Avg(e), EncodeCache::Avg { ids, .. }) => e.backward(ids, d_output),
            _ => panic!("encoder cache does not match encoder kind"),
        }
    }
}

impl<T: Real> Module<T> for QuestionEncoder<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        match self {
            QuestionEncoder::BiGru(e) => e.visit_params(f),
            QuestionEncoder::Avg(e) => e.visit_params(f),
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        match self {
            QuestionEncoder::BiGru(e) => e.visit_params_mut(f),
            QuestionEncoder::Avg(e) => e.visit_params_mut(f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_encoder(squash: bool, seed: u64) -> BiGruEncoder<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = EncoderDims {
            vocab_rows: 6,
            embedding: 4,
            hidden: 3,
            layers: 2,
            output: 5,
        };
        BiGruEncoder::new("enc", dims, 0.5, squash, 0.5, &mut rng)
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("Who created the character Harry Potter").unwrap(),
            vec!["who", "created", "the", "character", "harry", "potter"]
        );
        assert_eq!(tokenize("Hello.").unwrap(), vec!["hello"]);
        assert_eq!(tokenize("what's X-men?").unwrap(), vec!["what", "s", "x", "men"]);
        assert!(tokenize("   ").is_err());
        assert!(tokenize("?!").is_err());
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(s in "[ -~]{1,40}") {
            if let Ok(toks) = tokenize(&s) {
                prop_assert_eq!(tokenize(&toks.join(" ")).unwrap(), toks);
            }
        }

        #[test]
        fn embed_avg_is_order_invariant(perm_seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let enc = EmbedAvgEncoder::<f64>::new("avg", 8, 4, 0.5, &mut rng);
            let ids = vec![1usize, 2, 3, 5, 7, 0];
            let mut shuffled = ids.clone();
            let mut prng = ChaCha8Rng::seed_from_u64(perm_seed);
            rand::seq::SliceRandom::shuffle(&mut shuffled[..], &mut prng);
            let a = enc.encode(&ids).unwrap();
            let b = enc.encode(&shuffled).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vocabulary_reserves_unknown() {
        let seqs = vec![vec!["a".to_string(), "b".into()], vec!["b".into(), "c".into()]];
        let v = Vocabulary::build(&seqs);
        assert_eq!(v.len(), 3);
        assert_eq!(v.id("a"), 1);
        assert_eq!(v.id("c"), 3);
        assert_eq!(v.id("zzz"), Vocabulary::UNK);
        assert_eq!(v.token(2), Some("b"));
        assert_eq!(v.token(0), None);
    }

    #[test]
    fn squashed_output_in_unit_interval() {
        let enc = small_encoder(true, 1);
        let out = enc.forward(&[1, 2, 3], None).unwrap().output;
        assert!(out.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_projection_gives_constant_output() {
        for squash in [false, true] {
            let mut enc = small_encoder(squash, 2);
            enc.proj_w.value.fill(0.0);
            enc.proj_b.value.fill(0.0);
            let out = enc.forward(&[4, 0, 2], None).unwrap().output;
            let want = if squash { 0.5 } else { 0.0 };
            assert!(out.iter().all(|&v| v == want));
        }
    }

    #[test]
    fn bigru_is_order_sensitive_and_handles_unknowns() {
        let enc = small_encoder(false, 3);
        let a = enc.forward(&[1, 2, 0], None).unwrap().output;
        let b = enc.forward(&[2, 1, 0], None).unwrap().output;
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9));
        assert!(a.iter().all(|v| v.is_finite()));
        let again = enc.forward(&[1, 2, 0], None).unwrap().output;
        assert_eq!(a, again);
    }

    #[test]
    fn embed_avg_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut enc = EmbedAvgEncoder::<f64>::new("avg", 4, 3, 0.5, &mut rng);
        let row = enc.embedding.value.row(1).to_vec();
        assert_eq!(enc.encode(&[1]).unwrap(), row);
        let neg: Vec<f64> = row.iter().map(|v| -v).collect();
        enc.embedding.value.row_mut(2).copy_from_slice(&neg);
        assert!(enc.encode(&[1, 2]).unwrap().iter().all(|v| v.abs() < 1e-15));
        assert!(enc.encode(&[]).is_err());
    }

    #[test]
    fn pretrained_file_fills_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        fs::write(&path, "hello 0.5 -1 2\nmissing 1 1 1\n").unwrap();
        let v = Vocabulary::build(&[vec!["hello".to_string()]]);
        let mut table = Tensor::<f32>::zeros(&[2, 3]);
        assert_eq!(load_pretrained_embeddings(&path, &v, &mut table).unwrap(), 1);
        assert_eq!(table.row(1), &[0.5, -1.0, 2.0]);
        fs::write(&path, "hello 0.5\n").unwrap();
        assert!(load_pretrained_embeddings(&path, &v, &mut table).is_err());
    }
}
