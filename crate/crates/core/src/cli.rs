//! The `amcnn` command line.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::error::Error;
use crate::gradcheck::{grad_check, randomize_biases};
use crate::model::{argmax, forward, Model, ModelConfig, PassSeed};
use crate::text::{
    check_labels, encode_and_pad, load_dataset, load_word2vec_text, max_token_len, tokenize, EncodedBatch, Example,
    Vocabulary,
};
use crate::train::{evaluate, predict, train_with};

pub const PAD_TOKEN: &str = "<pad>";

#[derive(Parser, Debug)]
#[command(name = "amcnn", version, about = "Attention-based multichannel CNN sentence classifier")]
pub struct Cli {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for `train`, output file for `inspect-attention`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write a checkpoint plus `metrics.jsonl`.
    Train {
        /// Extra `key=value` settings applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Print test accuracy as `accuracy=X.XXXX`.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Classify each line of standard input.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare tape gradients with central differences on a tiny model.
    Gradcheck {
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Export scalar attention weights as JSON.
    InspectAttention {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
    },
}

/// A diagnostic plus the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;
pub const EXIT_OUTPUT: i32 = 5;

fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

/// Classifies errors met while reading inputs.
fn input(what: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| {
        let code = match e {
            Error::Config(_) => EXIT_CONFIG,
            Error::Dimension { .. } | Error::Argument(_) => EXIT_MISMATCH,
            _ => EXIT_INPUT,
        };
        fail(code, format!("{}: {e}", what.display()))
    }
}

fn output(what: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| fail(EXIT_OUTPUT, format!("{}: {e}", what.display()))
}

fn config_err(e: Error) -> Failure {
    fail(EXIT_CONFIG, e.to_string())
}

fn load_config(cli: &Cli, base: RunConfig) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", p.display())))?;
            RunConfig::parse_onto(base, &text).map_err(config_err)?
        }
        None => base,
    };
    if let Some(s) = cli.seed {
        cfg.model.seed = s;
    }
    Ok(cfg)
}

/// Parses `args` and runs the command, writing results to `out`.
pub fn run<I, T>(args: I, stdin: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), Failure>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        use clap::error::ErrorKind;
        match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => fail(0, e.to_string()),
            _ => fail(EXIT_CONFIG, e.to_string()),
        }
    })?;
    let stdout = |e: std::io::Error| fail(EXIT_OUTPUT, format!("stdout: {e}"));
    match &cli.command {
        Command::Train { set } => {
            let mut cfg = load_config(&cli, RunConfig::default())?;
            if let Some(o) = &cli.out {
                cfg.out_dir = o.clone();
            }
            for kv in set {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| fail(EXIT_CONFIG, format!("--set expects KEY=VALUE, got {kv:?}")))?;
                cfg.set(k.trim(), v.trim()).map_err(config_err)?;
            }
            cmd_train(cfg.finish().map_err(config_err)?, out)
        }
        Command::Eval { checkpoint, data } => {
            let cfg = load_config(&cli, RunConfig::default())?;
            let ckpt = checkpoint.clone().unwrap_or_else(|| cfg.checkpoint_path());
            let data = data
                .clone()
                .or(cfg.test_file.clone())
                .ok_or_else(|| fail(EXIT_CONFIG, "no evaluation data: pass --data or set test_file"))?;
            let acc = cmd_eval(&ckpt, &data)?;
            writeln!(out, "accuracy={acc:.4}").map_err(stdout)
        }
        Command::Predict { checkpoint } => {
            let cfg = load_config(&cli, RunConfig::default())?;
            let ckpt = checkpoint.clone().unwrap_or_else(|| cfg.checkpoint_path());
            cmd_predict(&ckpt, stdin, out)
        }
        Command::Gradcheck { tolerance, eps } => {
            let base = RunConfig {
                model: ModelConfig::tiny(),
                ..RunConfig::default()
            };
            let mut cfg = load_config(&cli, base)?;
            if let Some(t) = tolerance {
                cfg.gradcheck_tolerance = *t;
            }
            if let Some(e) = eps {
                cfg.gradcheck_eps = *e;
            }
            cmd_gradcheck(cfg.finish().map_err(config_err)?, out).map(|_| ())
        }
        Command::InspectAttention { checkpoint, data } => {
            let cfg = load_config(&cli, RunConfig::default())?;
            let ckpt = checkpoint.clone().unwrap_or_else(|| cfg.checkpoint_path());
            let dest = cli.out.clone().unwrap_or_else(|| PathBuf::from("attention.json"));
            cmd_inspect_attention(&ckpt, data, &dest)
        }
    }
}

/// Entry point used by the binary: returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut lock = BufWriter::new(stdout.lock());
    let res = run(args, &mut stdin.lock(), &mut lock);
    let flushed = lock.flush();
    match (res, flushed) {
        (Ok(()), Ok(())) => 0,
        (Ok(()), Err(e)) => {
            eprintln!("amcnn: error: stdout: {e}");
            EXIT_OUTPUT
        }
        (Err(f), _) if f.code == 0 => {
            print!("{}", f.message);
            0
        }
        (Err(f), _) => {
            let line = f.message.lines().find(|l| !l.trim().is_empty()).unwrap_or("failed");
            let line = line.trim_start_matches("error: ");
            eprintln!("amcnn: error: {line}");
            f.code
        }
    }
}

fn read_data(path: &Path, classes: usize) -> Result<Vec<Example>, Failure> {
    let data = load_dataset(path).map_err(input(path))?;
    check_labels(&data, classes).map_err(|e| fail(EXIT_MISMATCH, format!("{}: {e}", path.display())))?;
    Ok(data)
}

pub fn cmd_train(cfg: RunConfig, out: &mut dyn Write) -> Result<(), Failure> {
    let train_path = cfg
        .train_file
        .clone()
        .ok_or_else(|| fail(EXIT_CONFIG, "train_file is not set"))?;
    let train = read_data(&train_path, cfg.model.classes)?;
    if train.is_empty() {
        return Err(fail(EXIT_INPUT, format!("{}: no examples", train_path.display())));
    }
    let dev = match &cfg.dev_file {
        Some(p) => Some(read_data(p, cfg.model.classes)?),
        None => None,
    };
    let pretrained = match &cfg.pretrained {
        Some(p) => Some(load_word2vec_text(p).map_err(input(p))?),
        None => None,
    };
    let corpus: Vec<Vec<String>> = train.iter().map(|e| tokenize(&e.text)).collect();
    let vocab = Vocabulary::build(&corpus, cfg.min_freq).map_err(config_err)?;
    let mut mc = cfg.model.clone();
    if mc.max_len == 0 {
        mc.max_len = max_token_len(&train).max(*mc.filter_widths.iter().max().unwrap());
    }
    mc.validate().map_err(config_err)?;
    let model = Model::new(mc, vocab, pretrained.as_ref()).map_err(|e| match e {
        Error::Format { .. } => fail(EXIT_INPUT, format!("pretrained vectors: {e}")),
        other => config_err(other),
    })?;
    let batch = model.encode(&train);
    let dev_batch = dev.as_ref().map(|d| model.encode(d));

    fs::create_dir_all(&cfg.out_dir).map_err(output(&cfg.out_dir))?;
    let metrics_path = cfg.out_dir.join("metrics.jsonl");
    let mut log = BufWriter::new(File::create(&metrics_path).map_err(output(&metrics_path))?);
    let mut log_err = None;
    let outcome = train_with(model, &batch, dev_batch.as_ref(), cfg.train, |m| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_err.get_or_insert(e);
        }
    })
    .map_err(|e| fail(EXIT_INPUT, e.to_string()))?;
    if let Some(e) = log_err {
        return Err(output(&metrics_path)(e));
    }
    let ckpt = cfg.checkpoint_path();
    if let Some(parent) = ckpt.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(output(parent))?;
    }
    save_checkpoint(&outcome.model, &ckpt).map_err(|e| fail(EXIT_OUTPUT, format!("{}: {e}", ckpt.display())))?;
    writeln!(
        out,
        "best_epoch={} checkpoint={} metrics={}",
        outcome.best_epoch,
        ckpt.display(),
        metrics_path.display()
    )
    .map_err(|e| fail(EXIT_OUTPUT, format!("stdout: {e}")))
}

fn load_model(path: &Path) -> Result<Model, Failure> {
    load_checkpoint(path).map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", path.display())))
}

pub fn cmd_eval(checkpoint: &Path, data: &Path) -> Result<f64, Failure> {
    let model = load_model(checkpoint)?;
    let examples = read_data(data, model.config.classes)?;
    if examples.is_empty() {
        return Err(fail(EXIT_INPUT, format!("{}: no examples", data.display())));
    }
    let batch = model.encode(&examples);
    evaluate(&model.params, &model.config, &batch).map_err(|e| fail(EXIT_MISMATCH, e.to_string()))
}

fn unlabeled_batch(model: &Model, lines: &[String]) -> EncodedBatch {
    EncodedBatch {
        rows: lines
            .iter()
            .map(|l| encode_and_pad(&tokenize(l), &model.vocab, model.config.max_len))
            .collect(),
        labels: vec![0; lines.len()],
        len: model.config.max_len,
    }
}

pub fn cmd_predict(checkpoint: &Path, stdin: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), Failure> {
    let model = load_model(checkpoint)?;
    let lines: Vec<String> = stdin
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| fail(EXIT_INPUT, format!("stdin: {e}")))?;
    if lines.is_empty() {
        return Ok(());
    }
    let probs = predict(&model.params, &model.config, &unlabeled_batch(&model, &lines))
        .map_err(|e| fail(EXIT_MISMATCH, e.to_string()))?;
    for p in probs {
        let ps: Vec<String> = p.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(out, "{}\t{}", argmax(&p), ps.join(" ")).map_err(|e| fail(EXIT_OUTPUT, format!("stdout: {e}")))?;
    }
    Ok(())
}

const GRADCHECK_SENTENCES: [&str; 4] = [
    "the film is a joy",
    "dull , flat and far too long to sit through",
    "meh",
    "a dull joy",
];

pub fn cmd_gradcheck(cfg: RunConfig, out: &mut dyn Write) -> Result<bool, Failure> {
    let mut mc = cfg.model.clone();
    let data: Vec<Example> = GRADCHECK_SENTENCES
        .iter()
        .enumerate()
        .map(|(i, t)| Example {
            label: i % mc.classes,
            text: (*t).into(),
        })
        .collect();
    if mc.max_len == 0 {
        mc.max_len = max_token_len(&data).max(*mc.filter_widths.iter().max().unwrap());
    }
    let corpus: Vec<_> = data.iter().map(|e| tokenize(&e.text)).collect();
    let vocab = Vocabulary::build(&corpus, 1).map_err(config_err)?;
    let mut model = Model::new(mc, vocab, None).map_err(config_err)?;
    let seed = model.config.seed;
    randomize_biases(&mut model, seed);
    let batch = model.encode(&data);
    let report = grad_check(&model, &batch, cfg.gradcheck_eps, cfg.gradcheck_tolerance)
        .map_err(|e| fail(EXIT_CONFIG, e.to_string()))?;
    let w = |e: std::io::Error| fail(EXIT_OUTPUT, format!("stdout: {e}"));
    for g in &report.groups {
        let status = if g.max_rel_error <= report.tolerance { "ok" } else { "FAIL" };
        writeln!(out, "{:<32} {:>5} {:.3e} {status}", g.name, g.entries, g.max_rel_error).map_err(w)?;
    }
    writeln!(
        out,
        "max_rel_error={:.3e} tolerance={:.1e} {}",
        report.max_rel_error(),
        report.tolerance,
        if report.passed() { "PASS" } else { "FAIL" }
    )
    .map_err(w)?;
    if report.passed() {
        Ok(true)
    } else {
        Err(fail(
            EXIT_CHECK_FAILED,
            format!("{} parameter groups exceed tolerance {:e}", report.failing().len(), report.tolerance),
        ))
    }
}

/// Lines are `label<TAB>text` or bare text; blank lines are skipped.
fn parse_inspect_input(text: &str) -> Vec<(Option<usize>, String)> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| match l.split_once('\t') {
            Some((lab, body)) => match lab.trim().parse::<usize>() {
                Ok(n) => (Some(n), body.to_owned()),
                Err(_) => (None, l.to_owned()),
            },
            None => (None, l.to_owned()),
        })
        .collect()
}

pub fn cmd_inspect_attention(checkpoint: &Path, data: &Path, dest: &Path) -> Result<(), Failure> {
    let model = load_model(checkpoint)?;
    let text = fs::read_to_string(data).map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", data.display())))?;
    let items = parse_inspect_input(&text);
    if let Some((i, (l, _))) = items
        .iter()
        .enumerate()
        .find(|(_, (l, _))| l.is_some_and(|l| l >= model.config.classes))
    {
        return Err(fail(
            EXIT_MISMATCH,
            format!("{}: example {} has label {} but the model has {} classes", data.display(), i + 1, l.unwrap(), model.config.classes),
        ));
    }
    let lines: Vec<String> = items.iter().map(|(_, t)| t.clone()).collect();
    let batch = unlabeled_batch(&model, &lines);
    let res = forward(&model.params, &model.config, &batch, PassSeed::eval(), false)
        .map_err(|e| fail(EXIT_MISMATCH, e.to_string()))?;
    let mut records = res.attention;
    for ((rec, (label, line)), row) in records.iter_mut().zip(&items).zip(&batch.rows) {
        let toks = tokenize(line);
        let pads = row.pad_count();
        rec.tokens = (0..row.len())
            .map(|i| if i < pads { PAD_TOKEN.to_owned() } else { toks[i - pads].clone() })
            .collect();
        rec.label = *label;
    }
    let json = serde_json::to_string(&records).map_err(|e| fail(EXIT_OUTPUT, e.to_string()))?;
    if let Some(parent) = dest.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(output(parent))?;
    }
    fs::write(dest, json).map_err(output(dest))
}
