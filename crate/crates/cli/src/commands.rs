use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kbdialog::checkpoint::Checkpoint;
use kbdialog::corpus::{
    build_instances, load_kvret, synthetic, write_instances_jsonl, Dialogue, Domain, Vocabulary,
};
use kbdialog::evaluate::{evaluate, LexiconMode};
use kbdialog::model::{decode_greedy, Model};
use kbdialog::session::{ChatSession, KbInput};
use kbdialog::training::{train, TrainConfig};
use kbdialog::viz::AttentionMap;

#[derive(Parser, Debug)]
#[command(name = "kbdialog", version, about = "Task-oriented dialogue over a knowledge base")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a templated navigation corpus in KVRET layout.
    Synth(SynthArgs),
    /// Tokenize KVRET files into instances and build the vocabulary.
    Prepare(PrepareArgs),
    /// Train a model and save a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a KVRET file.
    Eval(EvalArgs),
    /// Dump the state attention of one dialogue.
    Viz(VizArgs),
    /// Interactive conversation against a KB file.
    Chat(ChatArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub dialogues: usize,
    #[arg(long, default_value_t = 8)]
    pub rows: usize,
    #[arg(long, default_value_t = 17)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub dev: usize,
    #[arg(long, default_value_t = 100)]
    pub test: usize,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value = "navigate")]
    pub domain: Domain,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    /// Add delexicalized copies of training targets.
    #[arg(long)]
    pub augment: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    Reference,
    Synthetic,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long, default_value = "navigate")]
    pub domain: Domain,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON-lines metrics log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "reference")]
    pub preset: Preset,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub rl_pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub baseline: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_count: Option<usize>,
    #[arg(long)]
    pub no_copy: bool,
    #[arg(long)]
    pub no_rl: bool,
    /// Turn delexicalized augmentation on or off.
    #[arg(long)]
    pub augment: Option<bool>,
    /// Single-sample REINFORCE instead of the exact expectation.
    #[arg(long)]
    pub rl_sampling: bool,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        let mut c = match self.preset {
            Preset::Reference => TrainConfig::default(),
            Preset::Synthetic => TrainConfig::synthetic(),
        };
        macro_rules! set {
            ($($f:ident => $g:ident),*) => { $( if let Some(v) = self.$f { c.$g = v; } )* };
        }
        set!(lr => lr, lambda => lambda, dropout => dropout, weight_decay => weight_decay,
             dim => dim, rl_pretrain_epochs => rl_pretrain_epochs, baseline => baseline,
             batch_size => batch_size, epochs => epochs, patience => patience, seed => seed,
             min_count => min_token_count, augment => augment);
        c.no_copy |= self.no_copy;
        c.no_rl |= self.no_rl;
        c.rl_sampling |= self.rl_sampling;
        c
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Match entities against every KB in the file instead of the turn's own.
    #[arg(long)]
    pub global_lexicon: bool,
    /// Per-instance report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value = "model")]
    pub label: String,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VizFormat {
    Tsv,
    Json,
}

#[derive(Args, Debug)]
pub struct VizArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub dialogue: String,
    /// Target turn index; every car turn when omitted.
    #[arg(long)]
    pub turn: Option<usize>,
    #[arg(long, value_enum, default_value = "tsv")]
    pub format: VizFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ChatArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSON object with `columns` and `rows`.
    #[arg(long)]
    pub kb: PathBuf,
    /// Print the entry distribution after each reply.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Prepare(a) => prepare(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval(&a).map(|row| println!("{row}")),
        Command::Viz(a) => viz(&a),
        Command::Chat(a) => chat(&a, std::io::stdin().lock(), std::io::stdout().lock()),
        Command::Serve(a) => {
            let model = load_model(&a.checkpoint)?;
            let addr = format!("{}:{}", a.host, a.port)
                .parse()
                .with_context(|| format!("bad address {}:{}", a.host, a.port))?;
            tokio::runtime::Runtime::new()?.block_on(crate::server::serve(model, addr))
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    if a.dev + a.test >= a.dialogues {
        bail!("--dev plus --test must leave some training dialogues");
    }
    let corpus = synthetic::generate(&synthetic::SyntheticConfig {
        dialogues: a.dialogues,
        rows: a.rows,
        seed: a.seed,
    });
    let (train, dev, test) = synthetic::split(&corpus, a.dev, a.test);
    fs::create_dir_all(&a.out)?;
    for (name, part) in [("train", train), ("dev", dev), ("test", test)] {
        write_json(&a.out.join(format!("{name}.json")), &part)?;
    }
    log::info!("wrote {} dialogues to {}", a.dialogues, a.out.display());
    Ok(())
}

fn load(path: &Path, domain: Domain) -> Result<Vec<Dialogue>> {
    load_kvret(path, domain).with_context(|| format!("loading {}", path.display()))
}

pub fn prepare(a: &PrepareArgs) -> Result<()> {
    let train = load(&a.train, a.domain)?;
    let columns: Vec<String> = a.domain.columns().iter().map(|c| c.to_string()).collect();
    let vocab = Vocabulary::build(&train, &columns, a.min_count)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("vocab.txt"), vocab.to_text())?;
    let train_instances = build_instances(&train, a.augment);
    write_instances_jsonl(a.out.join("train.jsonl"), &train_instances)?;
    println!("train: {} dialogues, {} instances, vocab {}", train.len(), train_instances.len(), vocab.len());
    for (name, path) in [("dev", &a.dev), ("test", &a.test)] {
        let Some(path) = path else { continue };
        let dialogues = load(path, a.domain)?;
        let instances = build_instances(&dialogues, false);
        write_instances_jsonl(a.out.join(format!("{name}.jsonl")), &instances)?;
        println!(
            "{name}: {} dialogues, {} instances, OOV rate {:.2}%",
            dialogues.len(),
            instances.len(),
            100.0 * vocab.oov_rate(&dialogues)
        );
    }
    Ok(())
}

pub fn train_cmd(a: &TrainArgs) -> Result<()> {
    let config = a.config();
    let train_set = load(&a.train, a.domain)?;
    let dev_set = match &a.dev {
        Some(p) => load(p, a.domain)?,
        None => Vec::new(),
    };
    let mut sink = match &a.log {
        Some(p) => Some(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => None,
    };
    let started = std::time::Instant::now();
    let outcome = train(
        &config,
        &train_set,
        &dev_set,
        sink.as_mut().map(|f| f as &mut dyn Write),
    )?;
    log::info!("trained in {:.1}s", started.elapsed().as_secs_f64());
    if let Some(last) = outcome.log.last() {
        println!(
            "epochs {}, best {:?}, last loss {:.4}",
            outcome.log.len(),
            outcome.best_epoch,
            last.loss
        );
    }
    Checkpoint::new(outcome.model, Some(a.domain), Some(config)).save(&a.out)?;
    println!("saved {}", a.out.display());
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    Ok(Checkpoint::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?
        .model)
}

fn checkpoint_domain(ckpt: &Checkpoint) -> Result<Domain> {
    ckpt.manifest
        .domain
        .or_else(|| Domain::from_columns(&ckpt.model.config.columns))
        .ok_or_else(|| anyhow!("checkpoint does not name a domain"))
}

/// Returns the table row for the evaluated set.
pub fn eval(a: &EvalArgs) -> Result<String> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let dialogues = load(&a.data, checkpoint_domain(&ckpt)?)?;
    let mode = if a.global_lexicon {
        LexiconMode::Global
    } else {
        LexiconMode::Scenario
    };
    let report = evaluate(&ckpt.model, &build_instances(&dialogues, false), mode)?;
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    Ok(report.table_row(&a.label))
}

pub fn viz(a: &VizArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let dialogues = load(&a.data, checkpoint_domain(&ckpt)?)?;
    let instances: Vec<_> = build_instances(&dialogues, false)
        .into_iter()
        .filter(|i| i.dialogue_id == a.dialogue && a.turn.is_none_or(|t| t == i.turn))
        .collect();
    if instances.is_empty() {
        bail!("no car turn matches dialogue `{}`{}", a.dialogue, a.turn.map(|t| format!(" turn {t}")).unwrap_or_default());
    }
    let mut maps = Vec::with_capacity(instances.len());
    for inst in &instances {
        let trace = decode_greedy(&ckpt.model, &inst.input, &inst.kb, ckpt.model.config.max_decode_len)?;
        maps.push(AttentionMap::from_trace(&inst.dialogue_id, inst.turn, &trace));
    }
    let text = match a.format {
        VizFormat::Json => serde_json::to_string_pretty(&maps)?,
        VizFormat::Tsv => maps
            .iter()
            .map(|m| format!("# {} turn {}: {}\n{}", m.dialogue_id, m.turn, m.response.join(" "), m.to_tsv()))
            .collect::<Vec<_>>()
            .join("\n"),
    };
    match &a.out {
        Some(p) => fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

pub fn chat(a: &ChatArgs, input: impl BufRead, mut output: impl Write) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let kb_input: KbInput = serde_json::from_str(&fs::read_to_string(&a.kb)?)
        .with_context(|| format!("parsing KB {}", a.kb.display()))?;
    let kb = kb_input.to_table(&model.config.columns)?;
    let mut session = ChatSession::new("repl", kb, &model)?;
    writeln!(output, "KB loaded with {} rows; empty line or `quit` exits.", session.kb().num_rows())?;
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line == "quit" {
            break;
        }
        let reply = session.respond(&model, line)?;
        writeln!(output, "car> {}", reply.response)?;
        if a.trace {
            for (label, p) in reply.trace.entry_labels.iter().zip(&reply.trace.entry_probs) {
                writeln!(output, "  {p:.3} {label}")?;
            }
        }
    }
    Ok(())
}
