//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report is always shown:
//! `cargo test --test acceptance`.
//!
//! The MR accuracy floor needs the sentence polarity data: point
//! `AMCNN_MR_DIR` at a directory holding `rt-polarity.pos` and
//! `rt-polarity.neg` (default `data/mr` under the workspace root).

use std::path::PathBuf;
use std::time::{Duration, Instant};

use amcnn::attention::{vectorial_attention, AttentionMode, ChannelParams};
use amcnn::checkpoint::{load_checkpoint, save_checkpoint};
use amcnn::cli::cmd_train;
use amcnn::config::RunConfig;
use amcnn::conv::{conv_forward, ConvBank};
use amcnn::gradcheck::{grad_check, randomize_biases, DEFAULT_EPS, DEFAULT_TOL};
use amcnn::model::{forward, Model, ModelConfig, PassSeed};
use amcnn::params::uniform;
use amcnn::tape::Tape;
use amcnn::text::{max_token_len, tokenize, EncodedBatch, Example, Vocabulary};
use amcnn::train::{evaluate, predict, train, TrainOptions, Trainer};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
    /// Could not be evaluated because external data is missing.
    blocked: bool,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
        blocked: false,
    }
}

const GRAD_SENTENCES: [&str; 4] = [
    "the film is a real joy to watch",
    "dull , flat and far too long",
    "meh",
    "a dull joy",
];

fn tiny_model(channels: usize, mode: AttentionMode) -> (Model, EncodedBatch) {
    let mut cfg = ModelConfig::tiny().with_channels(channels);
    cfg.mode = mode;
    let data: Vec<Example> = GRAD_SENTENCES
        .iter()
        .enumerate()
        .map(|(i, t)| Example {
            label: i % 3,
            text: (*t).into(),
        })
        .collect();
    let corpus: Vec<_> = data.iter().map(|e| tokenize(&e.text)).collect();
    let vocab = Vocabulary::build(&corpus, 1).unwrap();
    let mut model = Model::new(cfg, vocab, None).unwrap();
    randomize_biases(&mut model, 5);
    let batch = model.encode(&data);
    (model, batch)
}

fn gradient_oracle(channels: usize, mode: AttentionMode) -> Outcome {
    let start = Instant::now();
    let (model, batch) = tiny_model(channels, mode);
    let report = grad_check(&model, &batch, DEFAULT_EPS, DEFAULT_TOL).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = report.groups.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).unwrap();
    outcome(
        report.passed() && secs < 60.0,
        format!(
            "n={} L={channels} {mode:?}: {} groups, max rel error {:.2e} ({}) <= {DEFAULT_TOL:e}, {secs:.1}s < 60s",
            model.config.max_len,
            report.groups.len(),
            worst.max_rel_error,
            worst.name
        ),
    )
}

fn random_sentences(count: usize, max_len: usize, seed: u64) -> (Vocabulary, Vec<Example>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
    let data: Vec<Example> = (0..count)
        .map(|i| {
            let n = rng.gen_range(1..=max_len);
            let text: Vec<&str> = (0..n).map(|_| words.choose(&mut rng).unwrap().as_str()).collect();
            Example {
                label: i % 3,
                text: text.join(" "),
            }
        })
        .collect();
    let corpus: Vec<_> = data.iter().map(|e| tokenize(&e.text)).collect();
    (Vocabulary::build(&corpus, 1).unwrap(), data)
}

fn attention_normalization() -> Outcome {
    let (vocab, data) = random_sentences(100, 12, 11);
    let mut cfg = ModelConfig::tiny().with_channels(3);
    cfg.max_len = 12;
    let model = Model::new(cfg, vocab, None).unwrap();
    let batch = model.encode(&data);
    let (mut worst_sum, mut worst_pad) = (0.0f64, 0.0f64);
    let mut padded = 0;
    for training in [false, true] {
        let out = forward(&model.params, &model.config, &batch, PassSeed { seed: 3, step: 1 }, training).unwrap();
        for rec in &out.attention {
            padded += rec.pads.iter().any(|&p| p) as usize;
            for w in &rec.channels {
                worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
                let pad: f64 = w.iter().zip(&rec.pads).filter(|(_, &p)| p).map(|(x, _)| x).sum();
                worst_pad = worst_pad.max(pad);
            }
        }
    }
    outcome(
        worst_sum <= 1e-12 && worst_pad < 1e-12 && padded > 0,
        format!(
            "100 sentences x 3 channels, eval and sampled masks: |sum-1| max {worst_sum:.1e}, pad mass max {worst_pad:.1e}, {padded} padded rows"
        ),
    )
}

fn vectorial_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (n, width, hidden) = (rng.gen_range(1..=15), 2 * rng.gen_range(1..=8), rng.gen_range(1..=10));
        let ch = ChannelParams::init(AttentionMode::Vectorial, width, hidden, 1.0, &mut rng);
        let mut tape = Tape::new();
        let vars = ch.bind(&mut tape, false);
        let h = tape.constant(uniform(&[n, width], 3.0, &mut rng));
        let a = vectorial_attention(&mut tape, h, &vars.vectorial.unwrap()).unwrap();
        let v = tape.value(a);
        for j in 0..width {
            let s: f64 = (0..n).map(|i| v.at(i, j)).sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    outcome(worst <= 1e-12, format!("100 random instances: max |column sum - 1| = {worst:.1e}"))
}

fn conv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut worst, mut lengths_ok) = (0.0f64, true);
    for _ in 0..50 {
        let (n, l, k, chans, maps) = (
            rng.gen_range(1..=10),
            rng.gen_range(1..=4),
            rng.gen_range(1..=6),
            rng.gen_range(1..=3),
            rng.gen_range(1..=4),
        );
        let mut bank = ConvBank::init(l, maps, k, chans, &mut rng);
        bank.bias = uniform(&[maps], 0.5, &mut rng);
        let x = uniform(&[n, k * chans], 1.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let vars = bank.bind(&mut tape, false);
        let res = conv_forward(&mut tape, xv, &vars);
        if l > n {
            lengths_ok &= res.is_err();
            continue;
        }
        let y = tape.value(res.unwrap()).clone();
        lengths_ok &= y.shape() == [n - l + 1, maps];
        let w = bank.weights.data();
        for i in 0..n - l + 1 {
            for f in 0..maps {
                let mut s = bank.bias.data()[f];
                for p in 0..l {
                    for c in 0..k * chans {
                        s += w[(f * l + p) * k * chans + c] * x.at(i + p, c);
                    }
                }
                worst = worst.max((s.max(0.0) - y.at(i, f)).abs());
            }
        }
    }
    outcome(
        worst <= 1e-12 && lengths_ok,
        format!("50 random instances: max |naive - conv| = {worst:.1e}, every map length n-l+1"),
    )
}

fn separable_set(seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = ["good", "great", "fine", "superb", "lovely", "fun", "moving", "sharp"];
    let neg = ["bad", "awful", "poor", "dull", "boring", "weak", "flat", "tedious"];
    let fill = ["the", "a", "film", "movie", "is", "was", "story", "plot", "and", "very", "this", "cast"];
    (0..64)
        .map(|i| {
            let label = i % 2;
            let cue = if label == 0 { &pos } else { &neg };
            let mut w: Vec<&str> = (0..2).map(|_| *cue.choose(&mut rng).unwrap()).collect();
            for _ in 0..rng.gen_range(3..6) {
                w.push(fill.choose(&mut rng).unwrap());
            }
            w.shuffle(&mut rng);
            Example {
                label,
                text: w.join(" "),
            }
        })
        .collect()
}

fn overfit(channels: usize, mode: AttentionMode) -> Outcome {
    let start = Instant::now();
    let data = separable_set(7);
    let corpus: Vec<_> = data.iter().map(|e| tokenize(&e.text)).collect();
    let vocab = Vocabulary::build(&corpus, 1).unwrap();
    let mut cfg = ModelConfig::default().with_channels(channels);
    cfg.mode = mode;
    cfg.max_len = max_token_len(&data);
    let model = Model::new(cfg, vocab, None).unwrap();
    let batch = model.encode(&data);
    let mut trainer = Trainer::new(model, &batch, TrainOptions::default()).unwrap();
    let mut acc = 0.0;
    while trainer.epoch() < 200 && acc < 1.0 && start.elapsed() < Duration::from_secs(300) {
        trainer.run_epoch().unwrap();
        acc = evaluate(&trainer.model().params, &trainer.model().config, &batch).unwrap();
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        acc == 1.0 && secs < 300.0,
        format!(
            "L={channels} {mode:?}, defaults, 64 examples: train accuracy {acc:.4} after {} epochs, {secs:.0}s < 300s",
            trainer.epoch()
        ),
    )
}

fn mr_dir() -> PathBuf {
    std::env::var_os("AMCNN_MR_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mr"))
}

fn read_lines_lossy(p: &std::path::Path) -> std::io::Result<Vec<String>> {
    let bytes = std::fs::read(p)?;
    Ok(String::from_utf8_lossy(&bytes)
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_owned)
        .collect())
}

fn mr_accuracy_floor() -> Outcome {
    let dir = mr_dir();
    let (pos, neg) = match (
        read_lines_lossy(&dir.join("rt-polarity.pos")),
        read_lines_lossy(&dir.join("rt-polarity.neg")),
    ) {
        (Ok(p), Ok(n)) if p.len() >= 600 && n.len() >= 600 => (p, n),
        _ => {
            return Outcome {
                pass: false,
                detail: format!(
                    "MR data not found in {} (set AMCNN_MR_DIR to a directory with rt-polarity.pos/.neg)",
                    dir.display()
                ),
                blocked: true,
            }
        }
    };
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut split = |lines: Vec<String>, label: usize| {
        let mut idx: Vec<usize> = (0..lines.len()).collect();
        idx.shuffle(&mut rng);
        let ex = |i: &usize| Example {
            label,
            text: lines[*i].clone(),
        };
        (idx[..500].iter().map(ex).collect::<Vec<_>>(), idx[500..600].iter().map(ex).collect::<Vec<_>>())
    };
    let (mut tr, mut te) = split(pos, 1);
    let (tr_n, te_n) = split(neg, 0);
    tr.extend(tr_n);
    te.extend(te_n);
    let corpus: Vec<_> = tr.iter().map(|e| tokenize(&e.text)).collect();
    let vocab = Vocabulary::build(&corpus, 1).unwrap();
    let mut cfg = ModelConfig::default();
    cfg.max_len = max_token_len(&tr);
    let model = Model::new(cfg, vocab, None).unwrap();
    let (trb, teb) = (model.encode(&tr), model.encode(&te));
    let opts = TrainOptions {
        epochs: 10,
        ..TrainOptions::default()
    };
    let out = train(model, &trb, None, opts).unwrap();
    let acc = evaluate(&out.model.params, &out.model.config, &teb).unwrap();
    outcome(
        acc >= 0.65,
        format!(
            "AMCNN-3, random embeddings, 1000/200 balanced split, 10 epochs: test accuracy {acc:.4} >= 0.65 ({:.0}s)",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn write_tsv(path: &std::path::Path, data: &[Example]) {
    let text: String = data.iter().map(|e| format!("{}\t{}\n", e.label, e.text)).collect();
    std::fs::write(path, text).unwrap();
}

fn small_run_config(dir: &std::path::Path, out: &str) -> RunConfig {
    let data = separable_set(21);
    let (train_p, dev_p) = (dir.join("train.tsv"), dir.join("dev.tsv"));
    write_tsv(&train_p, &data[..48]);
    write_tsv(&dev_p, &data[48..]);
    let text = format!(
        "train_file = {}\ndev_file = {}\nout_dir = {}\nhidden = 12\nembed_dim = 16\nfilter_maps = 8\nattention_hidden = 10\nepochs = 4\nbatch_size = 10\nseed = 77\n",
        train_p.display(),
        dev_p.display(),
        dir.join(out).display()
    );
    RunConfig::parse(&text).unwrap().finish().unwrap()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for out in ["run_a", "run_b"] {
        let cfg = small_run_config(dir.path(), out);
        cmd_train(cfg.clone(), &mut Vec::new()).map_err(|f| f.message).unwrap();
        let metrics = std::fs::read(cfg.out_dir.join("metrics.jsonl")).unwrap();
        let ckpt = std::fs::read(cfg.checkpoint_path()).unwrap();
        files.push((metrics, ckpt));
    }
    let (a, b) = (&files[0], &files[1]);
    let epochs = String::from_utf8_lossy(&a.0).lines().count();
    outcome(
        a.0 == b.0 && a.1 == b.1 && epochs == 4,
        format!(
            "two training runs (dropout and channel masks on): metrics logs identical ({epochs} lines), checkpoints identical ({} bytes)",
            a.1.len()
        ),
    )
}

fn checkpoint_round_trip() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run_config(dir.path(), "rt");
    cmd_train(cfg.clone(), &mut Vec::new()).map_err(|f| f.message).unwrap();
    let model = load_checkpoint(&cfg.checkpoint_path()).unwrap();
    let again = dir.path().join("again.ckpt");
    save_checkpoint(&model, &again).unwrap();
    let back = load_checkpoint(&again).unwrap();
    let data = separable_set(21);
    let batch = model.encode(&data);
    let bits = |m: &Model| -> (u64, Vec<u64>) {
        let acc = evaluate(&m.params, &m.config, &batch).unwrap();
        let probs = predict(&m.params, &m.config, &batch).unwrap();
        (acc.to_bits(), probs.iter().flatten().map(|p| p.to_bits()).collect())
    };
    let same_files = std::fs::read(cfg.checkpoint_path()).unwrap() == std::fs::read(&again).unwrap();
    let (x, y) = (bits(&model), bits(&back));
    outcome(
        x == y && same_files,
        format!(
            "save -> load -> evaluate: accuracy {:.4} and {} probabilities bit-identical, re-saved file identical",
            f64::from_bits(x.0),
            x.1.len()
        ),
    )
}

fn main() {
    // The harness may pass filter or `--list` style arguments.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut run = |name: &'static str, f: &dyn Fn() -> Outcome| {
        let o = f();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    run("gradient_oracle", &|| gradient_oracle(2, AttentionMode::Combined));
    run("attention_normalization", &attention_normalization);
    run("vectorial_normalization", &vectorial_normalization);
    run("conv_oracle", &conv_oracle);
    run("overfit_smoke", &|| overfit(3, AttentionMode::Combined));
    run("mr_accuracy_floor", &mr_accuracy_floor);
    run("variant_consistency", &|| {
        let checks = [
            ("AMCNN-1 grad", gradient_oracle(1, AttentionMode::Combined)),
            ("AMCNN-3 grad", gradient_oracle(3, AttentionMode::Combined)),
            ("AMCNN-rv grad", gradient_oracle(3, AttentionMode::Scalar)),
            ("AMCNN-1 overfit", overfit(1, AttentionMode::Combined)),
            ("AMCNN-rv overfit", overfit(3, AttentionMode::Scalar)),
        ];
        let failed: Vec<String> = checks
            .iter()
            .filter(|(_, o)| !o.pass)
            .map(|(n, o)| format!("{n} ({})", o.detail))
            .collect();
        let summary = checks
            .iter()
            .map(|(n, o)| format!("{n} {}", if o.pass { "ok" } else { "failed" }))
            .collect::<Vec<_>>()
            .join(", ");
        outcome(
            failed.is_empty(),
            format!("{summary}; AMCNN-3 overfit is overfit_smoke{}", if failed.is_empty() { String::new() } else { format!("; {}", failed.join("; ")) }),
        )
    });
    run("determinism", &determinism);
    run("checkpoint_round_trip", &checkpoint_round_trip);

    let passed = results.iter().filter(|(_, o)| o.pass).count();
    let blocked: Vec<&str> = results.iter().filter(|(_, o)| o.blocked).map(|(n, _)| *n).collect();
    println!("{passed}/{} criteria passed", results.len());
    if !blocked.is_empty() {
        println!("not evaluable without external data: {}", blocked.join(", "));
    }
    if results.iter().any(|(_, o)| !o.pass && !o.blocked) {
        std::process::exit(1);
    }
}
