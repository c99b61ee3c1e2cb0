//! Command-line interface. `irp --help` lists the subcommands.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checkpoint::{self, CheckpointMeta};
use crate::domain::{load_corpus, save_corpus, Corpus};
use crate::model::Predictor;
use crate::service::{self, ServiceState};
use crate::synth::{self, GeneratorConfig};
use crate::text::{build_vocab_with, VocabOptions, Vocabulary, DEFAULT_MIN_FREQ};
use crate::train::{self, EpochRecord, EvalReport, Splits, Suite, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "irp", version, about = "Image-seeking intent prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Features,
    Summarization,
    Losses,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled corpus.
    GenData {
        /// JSON generator config; omitted fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the corpus size.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a vocabulary from a corpus.
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_FREQ)]
        min_freq: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, calibrate the threshold on validation and write a checkpoint.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// JSON training config; omitted fields take the preset's values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one split of a corpus.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Vocabulary file; defaults to the path recorded at training time.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an ablation suite. Writes a text table to OUT and JSON lines to
    /// OUT with a `.jsonl` extension.
    Ablate {
        #[arg(long, value_enum)]
        suite: SuiteArg,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one record, given as a file path or inline JSON.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: String,
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Serve predictions over HTTP.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_corpus(path: &Path) -> anyhow::Result<Corpus> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    load_corpus(BufReader::new(f)).with_context(|| format!("loading {}", path.display()))
}

fn read_vocab(path: &Path) -> anyhow::Result<Vocabulary> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Vocabulary::read(BufReader::new(f)).with_context(|| format!("loading {}", path.display()))
}

fn write_json_line<T: Serialize>(out: &mut dyn Write, value: &T) -> anyhow::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn train_config(config: Option<&Path>, preset: Preset, seed: Option<u64>) -> anyhow::Result<TrainConfig> {
    let mut cfg = match config {
        Some(path) => {
            let base = match preset {
                Preset::Desk => TrainConfig::desk(),
                Preset::Paper => TrainConfig::paper(),
            };
            let mut value = serde_json::to_value(base)?;
            let overrides: serde_json::Value = read_json(path)?;
            merge(&mut value, overrides);
            serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?
        }
        None => match preset {
            Preset::Desk => TrainConfig::desk(),
            Preset::Paper => TrainConfig::paper(),
        },
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Overlays `patch` onto `base`, recursing into objects.
fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn load_model(ckpt: &Path, vocab: Option<&Path>) -> anyhow::Result<(Predictor, CheckpointMeta, String)> {
    let m = checkpoint::load_model(ckpt, vocab).with_context(|| format!("loading {}", ckpt.display()))?;
    Ok((m.predictor, m.meta, m.model_version))
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    checkpoint: &'a Path,
    threshold: f64,
    history: &'a [EpochRecord],
    test: &'a EvalReport,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData { config, seed, n, out: path } => {
            let mut cfg: GeneratorConfig = match config {
                Some(p) => read_json(&p)?,
                None => GeneratorConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(n) = n {
                cfg.n = n;
            }
            let corpus = synth::generate(&cfg)?;
            let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            save_corpus(&corpus, BufWriter::new(f))?;
            let bayes = synth::bayes_report(&cfg)?;
            write_json_line(
                out,
                &serde_json::json!({
                    "n": corpus.len(),
                    "positives": corpus.positives(),
                    "bayes": bayes,
                }),
            )?;
        }
        Command::BuildVocab { corpus, min_freq, out: path } => {
            let corpus = read_corpus(&corpus)?;
            let vocab = build_vocab_with(
                &corpus,
                VocabOptions {
                    min_freq,
                    ..Default::default()
                },
            )?;
            let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            vocab.write(BufWriter::new(f))?;
            write_json_line(out, &serde_json::json!({"tokens": vocab.len(), "digest": vocab.digest()}))?;
        }
        Command::Train {
            corpus,
            vocab,
            config,
            preset,
            seed,
            out: path,
        } => {
            let cfg = train_config(config.as_deref(), preset, seed)?;
            let corpus = read_corpus(&corpus)?;
            let voc = read_vocab(&vocab)?;
            let splits = Splits::new(&corpus, cfg.fractions, cfg.seed)?;
            let fit = train::fit(&cfg, &splits, &voc)?;
            let mut meta = CheckpointMeta::for_predictor(&fit.predictor, cfg.seed, cfg.fractions);
            meta.vocab_path = Some(fs::canonicalize(&vocab).unwrap_or(vocab));
            checkpoint::save_checkpoint(&path, &meta, &fit.predictor.params)
                .with_context(|| format!("writing {}", path.display()))?;
            write_json_line(
                out,
                &TrainSummary {
                    checkpoint: &path,
                    threshold: fit.predictor.threshold,
                    history: &fit.history,
                    test: &fit.test,
                },
            )?;
        }
        Command::Eval {
            ckpt,
            corpus,
            split,
            vocab,
            out: report_path,
        } => {
            let (predictor, meta, _) = load_model(&ckpt, vocab.as_deref())?;
            let corpus = read_corpus(&corpus)?;
            let splits = Splits::new(&corpus, meta.fractions, meta.seed)?;
            let part = match split {
                SplitArg::Train => &splits.train,
                SplitArg::Validation => &splits.validation,
                SplitArg::Test => &splits.test,
            };
            let report = train::evaluate_predictor(&predictor, part, predictor.threshold)?;
            let line = serde_json::to_string(&report)? + "\n";
            out.write_all(line.as_bytes())?;
            if let Some(p) = report_path {
                fs::write(&p, &line).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Ablate {
            suite,
            corpus,
            vocab,
            config,
            seed,
            out: path,
        } => {
            let cfg = train_config(config.as_deref(), Preset::Desk, seed)?;
            let corpus = read_corpus(&corpus)?;
            let voc = read_vocab(&vocab)?;
            let splits = Splits::new(&corpus, cfg.fractions, cfg.seed)?;
            let suite = match suite {
                SuiteArg::Features => Suite::Features,
                SuiteArg::Summarization => Suite::Summarization,
                SuiteArg::Losses => Suite::Losses,
            };
            let report = train::run_ablation(suite, &cfg, &splits, &voc)?;
            let table = report.to_table();
            fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
            let jsonl = path.with_extension("jsonl");
            fs::write(&jsonl, report.to_jsonl()?).with_context(|| format!("writing {}", jsonl.display()))?;
            out.write_all(table.as_bytes())?;
        }
        Command::Predict { ckpt, input, vocab } => {
            let (predictor, _, version) = load_model(&ckpt, vocab.as_deref())?;
            let body = if input.trim_start().starts_with('{') {
                input
            } else {
                fs::read_to_string(&input).with_context(|| format!("reading {input}"))?
            };
            let state = ServiceState {
                predictor,
                model_version: version,
            };
            let response = service::predict_body(&state, body.trim().as_bytes())?;
            write_json_line(out, &response)?;
        }
        Command::Serve {
            ckpt,
            port,
            host,
            vocab,
        } => {
            let (predictor, _, version) = load_model(&ckpt, vocab.as_deref())?;
            let state = Arc::new(ServiceState {
                predictor,
                model_version: version,
            });
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(SocketAddr::new(host, port))
                    .await
                    .with_context(|| format!("binding {host}:{port}"))?;
                log::info!("listening on {}", listener.local_addr()?);
                service::serve(listener, state).await?;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_overlays_nested_fields() {
        let mut base = serde_json::json!({"a": 1, "b": {"c": 2, "d": 3}});
        merge(&mut base, serde_json::json!({"b": {"d": 4}, "e": 5}));
        assert_eq!(base, serde_json::json!({"a": 1, "b": {"c": 2, "d": 4}, "e": 5}));
    }

    #[test]
    fn partial_train_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"epochs": 2, "loss": {"kind": "sum"}, "model": {"d_model": 16}}"#).unwrap();
        let cfg = train_config(Some(&p), Preset::Desk, Some(9)).unwrap();
        assert_eq!(cfg.epochs, 2);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.loss.kind, crate::objectives::LossKind::Sum);
        assert_eq!(cfg.loss.alpha, 1.0);
        assert_eq!(cfg.model.d_model, 16);
        assert_eq!(cfg.batch_size, 32);
        let paper = train_config(None, Preset::Paper, None).unwrap();
        assert_eq!(paper.epochs, 20);
    }

    #[test]
    fn parses_subcommands() {
        let cli = Cli::try_parse_from(["irp", "eval", "--ckpt", "m", "--corpus", "c", "--split", "validation"]).unwrap();
        assert!(matches!(
            cli.command,
            Command::Eval {
                split: SplitArg::Validation,
                ..
            }
        ));
        assert!(Cli::try_parse_from(["irp", "ablate", "--suite", "nope"]).is_err());
    }
}
