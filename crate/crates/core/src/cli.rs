//! Command-line surface: `build-kb`, `train`, `eval`, `answer`, `gradcheck`
//! and `gen-toy`.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{Combine, Config, EncoderKind};
use crate::data::read_dataset;
use crate::error::{Error, Result};
use crate::inference::Answer;
use crate::kb::KnowledgeBase;
use crate::pipeline::Pipeline;
use crate::pruning::Pruning;
use crate::subject::EntityReprMode;
use crate::{gradcheck, toy};

#[derive(Parser, Debug)]
#[command(name = "kbqa", version, about = "Single-fact question answering over a triple store")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Load and validate a KB, then print its statistics.
    BuildKb(KbArgs),
    /// Train the labeler, relation and subject models.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Answer questions from --question or one per stdin line.
    Answer(AnswerArgs),
    /// Run finite-difference checks of every backward pass.
    Gradcheck(GradcheckArgs),
    /// Write the synthetic toy corpus.
    GenToy(GenToyArgs),
}

#[derive(Args, Debug, Clone)]
pub struct KbArgs {
    /// Triples file: subject<TAB>relation<TAB>object.
    #[arg(long)]
    pub kb_triples: PathBuf,
    /// Aliases file: entity<TAB>alias.
    #[arg(long)]
    pub kb_aliases: Option<PathBuf>,
    /// Types file: entity<TAB>type.
    #[arg(long)]
    pub kb_types: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// Flat key=value config file applied over the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Hyperparameter override, repeatable: --set batch_size=16.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Subject representation: random, pretrained or typevec.
    #[arg(long)]
    pub entity_repr: Option<EntityReprMode>,
    /// Relation encoder: bigru or avg.
    #[arg(long)]
    pub encoder: Option<EncoderKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct InferArgs {
    /// Candidate pruning: focused, ngram or full.
    #[arg(long)]
    pub pruning: Option<Pruning>,
    /// Score combination: softmax or raw.
    #[arg(long)]
    pub combine: Option<Combine>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub kb: KbArgs,
    /// Training questions: question<TAB>subject<TAB>relation[<TAB>object].
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory for checkpoints and loss curves.
    #[arg(long)]
    pub checkpoint_dir: PathBuf,
    /// Pretrained word vectors: token followed by embedding_dim floats.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub infer: InferArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub kb: KbArgs,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub checkpoint_dir: PathBuf,
    #[command(flatten)]
    pub infer: InferArgs,
    /// Also write per-question predictions as TSV.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnswerArgs {
    #[command(flatten)]
    pub kb: KbArgs,
    #[arg(long)]
    pub checkpoint_dir: PathBuf,
    #[command(flatten)]
    pub infer: InferArgs,
    /// Answer one question and exit instead of reading stdin.
    #[arg(long)]
    pub question: Option<String>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct GenToyArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 600)]
    pub questions: usize,
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Io(io::Error::new(
            io::ErrorKind::NotFound,
            format!("{}: no such file or directory", path.display()),
        )))
    }
}

impl KbArgs {
    fn load(&self) -> Result<KnowledgeBase> {
        for p in [Some(&self.kb_triples), self.kb_aliases.as_ref(), self.kb_types.as_ref()].into_iter().flatten() {
            require(p)?;
        }
        KnowledgeBase::load(&self.kb_triples, self.kb_aliases.as_deref(), self.kb_types.as_deref())
    }
}

impl ModelArgs {
    /// Defaults, then the config file, then `--set`, then dedicated flags.
    pub fn resolve(&self, infer: &InferArgs) -> Result<Config> {
        let mut c = Config::default();
        if let Some(p) = &self.config {
            require(p)?;
            c.apply_text(&fs::read_to_string(p)?)?;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            c.set(k, v)?;
        }
        if let Some(m) = self.entity_repr {
            c.entity_repr = m;
        }
        if let Some(e) = self.encoder {
            c.encoder = e;
        }
        if let Some(s) = self.seed {
            c.hyper.seed = s;
        }
        if let Some(e) = self.epochs {
            c.hyper.epochs = e;
        }
        if let Some(p) = infer.pruning {
            c.pruning = p;
        }
        if let Some(m) = infer.combine {
            c.combine = m;
        }
        c.validate()?;
        Ok(c)
    }
}

fn format_answer(kb: &KnowledgeBase, a: &Answer) -> String {
    let mut s = String::new();
    if let Some(m) = &a.mention {
        s.push_str(&format!("mention={m}\n"));
    }
    s.push_str(&format!("candidates={}\n", a.candidates.len()));
    match &a.prediction {
        Some(p) => {
            let objects: Vec<&str> = p.objects.iter().map(|&o| kb.entity_name(o)).collect();
            s.push_str(&format!("subject={}\n", kb.entity_name(p.subject)));
            s.push_str(&format!("relation={}\n", kb.relation_name(p.relation)));
            s.push_str(&format!("objects={}\n", objects.join(",")));
            s.push_str(&format!("log_prob_relation={:.6}\n", p.log_prob_relation));
            s.push_str(&format!("log_prob_subject={:.6}\n", p.log_prob_subject));
            s.push_str(&format!("score={:.6}\n", p.combined));
        }
        None => s.push_str("no answer: no candidate matched\n"),
    }
    s
}

fn build_kb(args: &KbArgs, out: &mut dyn Write) -> Result<()> {
    let kb = args.load()?;
    let st = kb.stats();
    writeln!(out, "entities={}", st.entities)?;
    writeln!(out, "relations={}", st.relations)?;
    writeln!(out, "facts={}", st.facts)?;
    writeln!(out, "subjects={}", st.subjects)?;
    writeln!(out, "types={}", st.types)?;
    writeln!(out, "aliases={}", st.aliases)?;
    Ok(())
}

fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let config = args.model.resolve(&args.infer)?;
    let kb = args.kb.load()?;
    require(&args.dataset)?;
    if let Some(p) = &args.embeddings {
        require(p)?;
    }
    let samples = read_dataset(&args.dataset, &kb)?;
    let trained = Pipeline::train(&kb, &samples, &config, args.embeddings.as_deref())?;
    trained.save(&args.checkpoint_dir)?;
    let last = |c: &[f64]| c.last().copied().unwrap_or(f64::NAN);
    writeln!(out, "samples={}", samples.len())?;
    writeln!(out, "reverse_link_rate={:.4}", trained.link_rate)?;
    writeln!(out, "parameters={}", trained.pipeline.num_params())?;
    writeln!(out, "final_loss_labeler={:.6}", last(&trained.curves.labeler))?;
    writeln!(out, "final_loss_relation={:.6}", last(&trained.curves.relation))?;
    writeln!(out, "final_loss_subject={:.6}", last(&trained.curves.subject))?;
    writeln!(out, "checkpoint_dir={}", args.checkpoint_dir.display())?;
    Ok(())
}

fn load_pipeline(kb: &KnowledgeBase, dir: &Path) -> Result<Pipeline<f32>> {
    require(dir)?;
    Pipeline::load(dir, kb)
}

fn eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let kb = args.kb.load()?;
    require(&args.dataset)?;
    let p = load_pipeline(&kb, &args.checkpoint_dir)?;
    let samples = read_dataset(&args.dataset, &kb)?;
    let pruning = args.infer.pruning.unwrap_or(p.config.pruning);
    let combine = args.infer.combine.unwrap_or(p.config.combine);
    let report = p.evaluate(&kb, &samples, pruning, combine)?;
    write!(out, "{}", report.summary())?;
    if pruning == Pruning::Focused {
        let (acc, linked) = p.labeler_accuracy(&kb, &samples)?;
        writeln!(out, "labeler_sentence_acc={acc:.4}")?;
        writeln!(out, "labeler_scored={linked}")?;
    }
    if let Some(path) = &args.predictions {
        fs::write(path, report.predictions_tsv(&kb, &samples))?;
    }
    Ok(())
}

fn answer(args: &AnswerArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<()> {
    let kb = args.kb.load()?;
    let p = load_pipeline(&kb, &args.checkpoint_dir)?;
    let pruning = args.infer.pruning.unwrap_or(p.config.pruning);
    let combine = args.infer.combine.unwrap_or(p.config.combine);
    if let Some(q) = &args.question {
        let a = p.answer(&kb, q, pruning, combine)?;
        write!(out, "{}", format_answer(&kb, &a))?;
        return Ok(());
    }
    let mut line = String::new();
    loop {
        write!(out, "> ")?;
        out.flush()?;
        line.clear();
        if input.read_line(&mut line)? == 0 {
            writeln!(out)?;
            return Ok(());
        }
        let q = line.trim();
        if q.is_empty() {
            continue;
        }
        // Bad questions are reported and the loop keeps going.
        match p.answer(&kb, q, pruning, combine) {
            Ok(a) => write!(out, "{}", format_answer(&kb, &a))?,
            Err(e) => writeln!(out, "error: {e}")?,
        }
    }
}

fn run_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    let results = gradcheck::run_all(args.seed)?;
    let mut failed = Vec::new();
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        writeln!(
            out,
            "{:<24} {status:<4} max_rel_err={:.3e} checked={}",
            r.name, r.report.max_relative_error, r.report.checked
        )?;
        if !r.passed() {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("gradient check failed: {}", failed.join(", "))))
    }
}

fn gen_toy(args: &GenToyArgs, out: &mut dyn Write) -> Result<()> {
    if args.questions == 0 {
        return Err(Error::Invalid("--questions must be positive".into()));
    }
    let corpus = toy::generate(args.seed, args.questions);
    corpus.write(&args.out)?;
    fs::write(args.out.join("toy.conf"), toy::TOY_CONFIG)?;
    writeln!(out, "facts={}", corpus.triples.len())?;
    writeln!(out, "train={}", corpus.train.len())?;
    writeln!(out, "test={}", corpus.test.len())?;
    writeln!(out, "out={}", args.out.display())?;
    Ok(())
}

/// Runs one parsed command against the given streams.
pub fn run(cli: &Cli, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::BuildKb(a) => build_kb(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Answer(a) => answer(a, input, out),
        Command::Gradcheck(a) => run_gradcheck(a, out),
        Command::GenToy(a) => gen_toy(a, out),
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdin = io::stdin();
    let mut input = stdin.lock();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match run(&cli, &mut input, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
