//! The three models together: construction, training and on-disk layout.
//!
//! A checkpoint directory holds `model.conf`, `vocab.txt`, one `.ckpt` per
//! model and a `loss_<model>.csv` curve per trained model.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Config, EncoderKind};
use crate::data::Sample;
use crate::encoder::{
    load_pretrained_embeddings, BiGruEncoder, EmbedAvgEncoder, EncoderDims, QuestionEncoder, Vocabulary,
};
use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, RelationId};
use crate::labeler::{Label, Labeler};
use crate::neural::checkpoint::{load_module, save_module};
use crate::neural::{Module, Param, Real, Tensor};
use crate::relation::{sample_negative_relations, RelationScorer};
use crate::subject::{sample_negative_entities, type_matrix, EntityRepr, EntityReprMode, SubjectScorer};
use crate::training::{
    fit, label_dataset, loss_csv, transe_pretrain, FitOptions, SampleRng, TransE, TransEOptions,
};

const LABELER_STREAM: u64 = 1;
const RELATION_STREAM: u64 = 2;
const SUBJECT_STREAM: u64 = 3;
const TRANSE_STREAM: u64 = 4;

/// Independent generator per model so that models never share random state.
pub fn model_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

#[derive(Clone, Debug)]
pub struct Pipeline<T> {
    pub config: Config,
    pub vocab: Vocabulary,
    pub labeler: Labeler<T>,
    pub relation: RelationScorer<T>,
    pub subject: SubjectScorer<T>,
}

pub fn build_vocab(samples: &[Sample]) -> Vocabulary {
    Vocabulary::build(samples.iter().map(|s| &s.tokens))
}

pub fn init_labeler<T: Real>(config: &Config, vocab: &Vocabulary) -> Labeler<T> {
    let h = &config.hyper;
    let mut rng = model_rng(h.seed, LABELER_STREAM);
    Labeler::new(vocab.table_rows(), h.embedding_dim, h.hidden_size, h.layers, h.dropout, h.init_range, &mut rng)
}

pub fn init_relation<T: Real>(config: &Config, vocab: &Vocabulary, kb: &KnowledgeBase) -> RelationScorer<T> {
    let h = &config.hyper;
    let mut rng = model_rng(h.seed, RELATION_STREAM);
    let encoder = match config.encoder {
        EncoderKind::BiGru => {
            let dims = EncoderDims {
                vocab_rows: vocab.table_rows(),
                embedding: h.embedding_dim,
                hidden: h.hidden_size,
                layers: h.layers,
                output: h.relation_dim,
            };
            QuestionEncoder::BiGru(BiGruEncoder::new("relation.f", dims, h.dropout, false, h.init_range, &mut rng))
        }
        EncoderKind::Avg => QuestionEncoder::Avg(EmbedAvgEncoder::new(
            "relation.f",
            vocab.table_rows(),
            h.embedding_dim,
            h.init_range,
            &mut rng,
        )),
    };
    RelationScorer::new(encoder, kb.num_relations(), h.init_range, &mut rng)
}

/// `entities` seeds the table in pretrained mode.
pub fn init_subject<T: Real>(
    config: &Config,
    vocab: &Vocabulary,
    kb: &KnowledgeBase,
    entities: Option<&Tensor<T>>,
) -> Result<SubjectScorer<T>> {
    let h = &config.hyper;
    let mut rng = model_rng(h.seed, SUBJECT_STREAM);
    let mode = config.entity_repr;
    let out_dim = match mode {
        EntityReprMode::TypeVector => kb.num_types(),
        _ => h.entity_dim,
    };
    if out_dim == 0 {
        return Err(Error::Invalid("type-vector mode needs at least one entity type".into()));
    }
    let dims = EncoderDims {
        vocab_rows: vocab.table_rows(),
        embedding: h.embedding_dim,
        hidden: h.hidden_size,
        layers: h.layers,
        output: out_dim,
    };
    let squash = mode == EntityReprMode::TypeVector;
    let encoder = QuestionEncoder::BiGru(BiGruEncoder::new("subject.g", dims, h.dropout, squash, h.init_range, &mut rng));
    let repr = match mode {
        EntityReprMode::TypeVector => EntityRepr::Types(type_matrix(kb)),
        EntityReprMode::Random => EntityRepr::Table {
            table: Param::uniform("subject.entities", &[kb.num_entities(), out_dim], h.init_range, &mut rng),
            frozen: h.freeze_entities,
        },
        EntityReprMode::Pretrained => {
            let init = entities.ok_or_else(|| Error::Invalid("pretrained mode needs entity embeddings".into()))?;
            if init.shape() != [kb.num_entities(), out_dim] {
                return Err(Error::dim("pretrained entity table", kb.num_entities() * out_dim, init.len()));
            }
            EntityRepr::Table {
                table: Param::new("subject.entities", init.clone()),
                frozen: h.freeze_entities,
            }
        }
    };
    SubjectScorer::new(encoder, repr, mode, T::lit(h.alpha))
}

fn fit_options(config: &Config, name: &'static str, lr: f64) -> FitOptions {
    let h = &config.hyper;
    FitOptions {
        name,
        epochs: h.epochs,
        batch_size: h.batch_size,
        learning_rate: lr,
        momentum: h.momentum,
        parallel: h.parallel,
        resample_negatives: h.resample_negatives,
    }
}

struct Encoded {
    ids: Vec<usize>,
    subject: crate::kb::EntityId,
    relation: RelationId,
}

fn encode_samples(vocab: &Vocabulary, samples: &[Sample]) -> Vec<Encoded> {
    samples
        .iter()
        .map(|s| Encoded {
            ids: vocab.encode(&s.tokens),
            subject: s.subject,
            relation: s.relation,
        })
        .collect()
}

/// Trains the labeler on reverse-linked labels. Returns the loss curve and
/// the fraction of samples that linked.
pub fn train_labeler(
    labeler: &mut Labeler<f32>,
    config: &Config,
    vocab: &Vocabulary,
    kb: &KnowledgeBase,
    samples: &[Sample],
) -> Result<(Vec<f64>, f64)> {
    let (seqs, _, rate) = label_dataset(kb, samples);
    log::info!("reverse linking matched {:.1}% of training questions", rate * 100.0);
    let data: Vec<(Vec<usize>, Vec<Label>)> = seqs.iter().map(|s| (vocab.encode(&s.tokens), s.labels.clone())).collect();
    let mut rng = model_rng(config.hyper.seed ^ 0x5eed, LABELER_STREAM);
    let opts = fit_options(config, "labeler", config.hyper.lr_labeler);
    let curve = fit(labeler, &data, &opts, &mut rng, |m, (ids, labels), r: &mut SampleRng| {
        m.nll(ids, labels, Some(&mut r.dropout))
    })?;
    Ok((curve, rate))
}

pub fn train_relation(
    model: &mut RelationScorer<f32>,
    config: &Config,
    vocab: &Vocabulary,
    kb: &KnowledgeBase,
    samples: &[Sample],
) -> Result<Vec<f64>> {
    let h = &config.hyper;
    let hubs: Vec<RelationId> = h
        .hub_relations
        .iter()
        .map(|name| kb.require_relation(name))
        .collect::<Result<_>>()?;
    let data = encode_samples(vocab, samples);
    let mut rng = model_rng(h.seed ^ 0x5eed, RELATION_STREAM);
    let opts = fit_options(config, "relation", config.relation_lr());
    let gamma = h.gamma_r as f32;
    fit(model, &data, &opts, &mut rng, |m, x, r: &mut SampleRng| {
        let negs = sample_negative_relations(
            kb,
            x.subject,
            x.relation,
            h.relation_negatives,
            h.neg_relations,
            &hubs,
            &mut r.negatives,
        );
        m.hinge_loss(&x.ids, x.relation, &negs, gamma, Some(&mut r.dropout))
    })
}

pub fn train_subject(
    model: &mut SubjectScorer<f32>,
    config: &Config,
    vocab: &Vocabulary,
    kb: &KnowledgeBase,
    samples: &[Sample],
) -> Result<Vec<f64>> {
    let h = &config.hyper;
    let data = encode_samples(vocab, samples);
    let mut rng = model_rng(h.seed ^ 0x5eed, SUBJECT_STREAM);
    let opts = fit_options(config, "subject", config.subject_lr());
    let gamma = h.gamma_s as f32;
    fit(model, &data, &opts, &mut rng, |m, x, r: &mut SampleRng| {
        if m.mode == EntityReprMode::TypeVector {
            m.type_bce_loss(&x.ids, x.subject, Some(&mut r.dropout))
        } else {
            let negs = sample_negative_entities(kb, x.subject, h.neg_entities, &mut r.negatives);
            m.hinge_loss(kb, &x.ids, x.subject, x.relation, &negs, gamma, Some(&mut r.dropout))
        }
    })
}

pub fn pretrain_entities(config: &Config, kb: &KnowledgeBase) -> Result<TransE<f32>> {
    let h = &config.hyper;
    let opts = TransEOptions {
        dim: h.entity_dim,
        epochs: h.transe_epochs,
        learning_rate: h.transe_lr,
        margin: h.transe_margin,
    };
    transe_pretrain(kb, &opts, &mut model_rng(h.seed, TRANSE_STREAM))
}

#[derive(Clone, Debug, Default)]
pub struct Curves {
    pub labeler: Vec<f64>,
    pub relation: Vec<f64>,
    pub subject: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub pipeline: Pipeline<f32>,
    pub curves: Curves,
    pub link_rate: f64,
    pub transe: Option<TransE<f32>>,
}

impl Pipeline<f32> {
    /// Builds and trains all three models.
    pub fn train(
        kb: &KnowledgeBase,
        samples: &[Sample],
        config: &Config,
        word_embeddings: Option<&Path>,
    ) -> Result<Trained> {
        config.validate()?;
        if samples.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let vocab = build_vocab(samples);
        let transe = match config.entity_repr {
            EntityReprMode::Pretrained => Some(pretrain_entities(config, kb)?),
            _ => None,
        };
        let mut p = Pipeline {
            config: config.clone(),
            labeler: init_labeler(config, &vocab),
            relation: init_relation(config, &vocab, kb),
            subject: init_subject(config, &vocab, kb, transe.as_ref().map(|t| &t.entities.value))?,
            vocab,
        };
        if let Some(path) = word_embeddings {
            p.load_word_embeddings(path)?;
        }
        let (labeler_curve, link_rate) = train_labeler(&mut p.labeler, config, &p.vocab, kb, samples)?;
        let relation_curve = train_relation(&mut p.relation, config, &p.vocab, kb, samples)?;
        let subject_curve = train_subject(&mut p.subject, config, &p.vocab, kb, samples)?;
        Ok(Trained {
            pipeline: p,
            curves: Curves {
                labeler: labeler_curve,
                relation: relation_curve,
                subject: subject_curve,
            },
            link_rate,
            transe,
        })
    }
}

impl<T: Real> Pipeline<T> {
    /// Untrained models with the configured shapes.
    pub fn init(kb: &KnowledgeBase, vocab: Vocabulary, config: &Config) -> Result<Self> {
        let placeholder;
        let entities = if config.entity_repr == EntityReprMode::Pretrained {
            placeholder = Tensor::zeros(&[kb.num_entities(), config.hyper.entity_dim]);
            Some(&placeholder)
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            labeler: init_labeler(config, &vocab),
            relation: init_relation(config, &vocab, kb),
            subject: init_subject(config, &vocab, kb, entities)?,
            vocab,
        })
    }

    /// Fills each model's own word-embedding table from a text file.
    pub fn load_word_embeddings(&mut self, path: &Path) -> Result<()> {
        let n = load_pretrained_embeddings(path, &self.vocab, &mut self.labeler.embedding.value)?;
        load_pretrained_embeddings(path, &self.vocab, &mut self.relation.encoder.embedding_mut().value)?;
        load_pretrained_embeddings(path, &self.vocab, &mut self.subject.encoder.embedding_mut().value)?;
        log::info!("initialized {n} of {} word vectors from {}", self.vocab.len(), path.display());
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("model.conf"), self.config.to_text())?;
        self.vocab.save(&dir.join("vocab.txt"))?;
        save_module(&dir.join("labeler.ckpt"), &self.labeler)?;
        save_module(&dir.join("relation.ckpt"), &self.relation)?;
        save_module(&dir.join("subject.ckpt"), &self.subject)?;
        Ok(())
    }

    pub fn load(dir: &Path, kb: &KnowledgeBase) -> Result<Self> {
        let conf = dir.join("model.conf");
        if !conf.exists() {
            return Err(Error::Checkpoint(format!("no model.conf in {}", dir.display())));
        }
        let config = Config::from_file(&conf)?;
        let vocab = Vocabulary::load(&dir.join("vocab.txt"))?;
        let mut p = Self::init(kb, vocab, &config)?;
        load_module(&dir.join("labeler.ckpt"), &mut p.labeler)?;
        load_module(&dir.join("relation.ckpt"), &mut p.relation)?;
        load_module(&dir.join("subject.ckpt"), &mut p.subject)?;
        Ok(p)
    }

    pub fn num_params(&self) -> usize {
        self.labeler.num_params() + self.relation.num_params() + self.subject.num_params()
    }
}

impl Trained {
    /// Checkpoints plus loss curves.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.pipeline.save(dir)?;
        fs::write(dir.join("loss_labeler.csv"), loss_csv(&self.curves.labeler))?;
        fs::write(dir.join("loss_relation.csv"), loss_csv(&self.curves.relation))?;
        fs::write(dir.join("loss_subject.csv"), loss_csv(&self.curves.subject))?;
        if let Some(t) = &self.transe {
            save_module(&dir.join("transe.ckpt"), t)?;
        }
        Ok(())
    }
}
