use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use polytrans::config::RunConfig;
use polytrans::corpus::io::corpus_to_string;
use polytrans::corpus::{generate_splits, load_corpus, stats, CorpusError, Split};
use polytrans::diagnostics::{grad_table, loss_gradient_suite, op_gradient_suite};
use polytrans::infolab::run_suite;
use polytrans::model::{load_checkpoint, ModelDims, ModelError};
use polytrans::train::{train, TrainError};
use polytrans::translate_eval::{
    count_params, evaluate_matrix, param_chart_svg, params_csv, translate, EvalError, MatrixConfig, TranslationRequest,
};

#[derive(Parser)]
#[command(name = "polytrans", version, about = "Multilingual program translation lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Output directory; created if missing
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// key = value run configuration file
    #[arg(long, default_value = "")]
    config: String,
    /// Override one config key, e.g. --set lr=0.001; repeatable [default: none]
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Root seed, overriding the config's seed [default: none]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate seeded train and test toy corpora
    GenCorpus {
        #[command(flatten)]
        common: Common,
    },
    /// Per-language counts and pair statistics of a corpus file
    Stats {
        #[command(flatten)]
        common: Common,
        /// Corpus file, toy or CoST format [required]
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Exact identity and bound checks on random discrete models
    Verify {
        #[command(flatten)]
        common: Common,
        /// Random models to check
        #[arg(long, default_value_t = 50)]
        cases: usize,
        /// Trade-off weight for the combined bound
        #[arg(long, default_value_t = 1e-3)]
        lambda: f64,
    },
    /// Finite-difference checks of every gradient
    GradCheck {
        #[command(flatten)]
        common: Common,
        /// Perturbed coordinates per parameter array in the loss checks (0 = all)
        #[arg(long, default_value_t = 0)]
        max_coords: usize,
    },
    /// Train a model; writes metrics.csv and per-epoch checkpoints
    Train {
        #[command(flatten)]
        common: Common,
        /// Training corpus file [required]
        #[arg(long)]
        train: PathBuf,
        /// Validation corpus scored after each epoch [default: none]
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Translate one whitespace-tokenized program per input line
    Translate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by train [required]
        #[arg(long)]
        checkpoint: PathBuf,
        /// Source language name [required]
        #[arg(long)]
        src: String,
        /// Target language name [required]
        #[arg(long)]
        tgt: String,
        /// Input file [required]
        #[arg(long = "in")]
        input: PathBuf,
        /// Use the prior mean for the target latent; implied unless --sample-seed is given [default: off]
        #[arg(long, default_value_t = false, conflicts_with = "sample_seed")]
        deterministic: bool,
        /// Draw the target latent from the prior with this seed instead [default: none]
        #[arg(long)]
        sample_seed: Option<u64>,
    },
    /// BLEU-4 and naive-copy tables over every direction of a test corpus
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by train [required]
        #[arg(long)]
        checkpoint: PathBuf,
        /// Test corpus file [required]
        #[arg(long)]
        test: PathBuf,
        /// Cap on test pairs per direction (0 = all)
        #[arg(long, default_value_t = 0)]
        max_pairs: usize,
    },
    /// Parameter counts of the unified and pairwise paradigms
    Params {
        #[command(flatten)]
        common: Common,
        /// Largest language count; rows are emitted for 2..=N
        #[arg(long = "N", default_value_t = 7)]
        n: usize,
        /// Use the large reference dims instead of the config's dims [default: off]
        #[arg(long, default_value_t = false)]
        paper_dims: bool,
        /// Vocabulary size for non-reference dims
        #[arg(long, default_value_t = 80)]
        vocab: usize,
    },
}

enum Failure {
    Usage(String),
    Verification(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Verification(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    fn line(&self) -> String {
        let (kind, msg) = match self {
            Failure::Usage(m) => ("usage", m),
            Failure::Verification(m) => ("verification", m),
            Failure::Io(m) => ("io", m),
        };
        format!("error kind={kind} message={:?}", msg.replace('\n', " "))
    }
}

fn corpus_failure(e: CorpusError) -> Failure {
    match e {
        CorpusError::Io(_) | CorpusError::ParseError { .. } => Failure::Io(e.to_string()),
        _ => Failure::Usage(e.to_string()),
    }
}

fn model_failure(e: ModelError) -> Failure {
    match e {
        ModelError::Checkpoint(_) => Failure::Io(e.to_string()),
        _ => Failure::Usage(e.to_string()),
    }
}

impl From<polytrans::config::ConfigError> for Failure {
    fn from(e: polytrans::config::ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        corpus_failure(e)
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        model_failure(e)
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Io(m) => Failure::Io(m),
            TrainError::Corpus(c) => corpus_failure(c),
            TrainError::Model(m) => model_failure(m),
            e => Failure::Usage(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Corpus(c) => corpus_failure(c),
            EvalError::Model(m) => model_failure(m),
            e => Failure::Usage(e.to_string()),
        }
    }
}

type Res<T> = Result<T, Failure>;

/// Loads the config, applies overrides and echoes the result into `out`.
fn setup(c: &Common, command: &str, extra: &[(&str, String)]) -> Res<RunConfig> {
    let mut cfg = if c.config.is_empty() {
        RunConfig::default()
    } else {
        RunConfig::parse(&fs::read_to_string(&c.config).map_err(|e| Failure::Io(format!("{}: {e}", c.config)))?)?
    };
    for s in &c.sets {
        cfg.apply(s)?;
    }
    if let Some(seed) = c.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    fs::create_dir_all(&c.out)?;
    let mut echo = format!("# command: {command}\n");
    for (k, v) in extra {
        echo.push_str(&format!("# --{k} {v}\n"));
    }
    echo.push_str(&cfg.to_text());
    fs::write(c.out.join("config.txt"), echo)?;
    Ok(cfg)
}

fn write(out: &Path, name: &str, contents: &str) -> Res<()> {
    fs::write(out.join(name), contents).map_err(|e| Failure::Io(format!("{name}: {e}")))
}

fn run(cmd: Cmd) -> Res<()> {
    match cmd {
        Cmd::GenCorpus { common } => {
            let cfg = setup(&common, "gen-corpus", &[])?;
            let (tr, te) = generate_splits(&cfg.gen_config()?, cfg.test_samples()?)?;
            write(&common.out, "train.tsv", &corpus_to_string(&tr))?;
            write(&common.out, "test.tsv", &corpus_to_string(&te))?;
            println!(
                "train {} samples ({:.4} multi-parallel), test {} samples -> {}",
                tr.samples.len(),
                tr.multi_parallel_fraction(),
                te.samples.len(),
                common.out.display()
            );
        }
        Cmd::Stats { common, corpus } => {
            let cfg = setup(&common, "stats", &[("corpus", corpus.display().to_string())])?;
            let c = load_corpus(&corpus, None, cfg.flag_len()?, Split::Train)?;
            let s = stats(&c);
            write(&common.out, "counts.csv", &s.counts_csv())?;
            write(&common.out, "pairs.csv", &s.pairs_csv())?;
            print!("{}", s.counts_csv());
            println!("samples {}", s.samples);
            println!("multi_parallel_fraction {:.6}", s.multi_parallel_fraction);
            println!("bilingual_parallel_fraction {:.6}", s.bilingual_parallel_fraction);
        }
        Cmd::Verify { common, cases, lambda } => {
            let cfg = setup(&common, "verify", &[("cases", cases.to_string()), ("lambda", lambda.to_string())])?;
            let report = run_suite(cfg.seed()?, cases, lambda).map_err(|e| Failure::Usage(e.to_string()))?;
            let table = report.to_table();
            write(&common.out, "verify.txt", &table)?;
            print!("{table}");
            if !report.passed() {
                return Err(Failure::Verification("a residual exceeded its tolerance".into()));
            }
        }
        Cmd::GradCheck { common, max_coords } => {
            let cfg = setup(&common, "grad-check", &[("max-coords", max_coords.to_string())])?;
            let seed = cfg.seed()?;
            let mut rows = op_gradient_suite(seed).map_err(|e| Failure::Usage(e.to_string()))?;
            let coords = (max_coords > 0).then_some(max_coords);
            rows.extend(loss_gradient_suite(seed, coords).map_err(|e| Failure::Usage(e.to_string()))?);
            let table = grad_table(&rows);
            write(&common.out, "grad_check.txt", &table)?;
            print!("{table}");
            if rows.iter().any(|r| !r.passed()) {
                return Err(Failure::Verification("a gradient check exceeded its tolerance".into()));
            }
        }
        Cmd::Train { common, train: train_path, val } => {
            let mut extra = vec![("train", train_path.display().to_string())];
            if let Some(v) = &val {
                extra.push(("val", v.display().to_string()));
            }
            let cfg = setup(&common, "train", &extra)?;
            let langs = cfg.languages()?;
            let k = cfg.flag_len()?;
            let tr = load_corpus(&train_path, Some(&langs), k, Split::Train)?;
            let va = val.as_ref().map(|p| load_corpus(p, Some(&langs), k, Split::Val)).transpose()?;
            let dims = cfg.dims(tr.vocab.len(), tr.n_langs())?;
            let mut tc = cfg.train_config()?;
            tc.out_dir = Some(common.out.clone());
            let outcome = train(&tr, va.as_ref(), &dims, &tc)?;
            let last = outcome.metrics.last().map(|m| m.csv_row()).unwrap_or_default();
            println!("{} steps; last epoch: {last}", outcome.steps);
        }
        Cmd::Translate { common, checkpoint, src, tgt, input, deterministic: _, sample_seed } => {
            let extra = [
                ("checkpoint", checkpoint.display().to_string()),
                ("src", src.clone()),
                ("tgt", tgt.clone()),
                ("in", input.display().to_string()),
                ("sample-seed", sample_seed.map(|s| s.to_string()).unwrap_or_default()),
            ];
            let cfg = setup(&common, "translate", &extra)?;
            let ck = load_checkpoint(&checkpoint)?;
            let lang = |name: &str| {
                ck.languages
                    .iter()
                    .position(|l| l == name)
                    .ok_or_else(|| Failure::Usage(format!("unknown language {name}")))
            };
            let (s, t) = (lang(&src)?, lang(&tgt)?);
            let text = fs::read_to_string(&input).map_err(|e| Failure::Io(format!("{}: {e}", input.display())))?;
            let decode = cfg.decode()?;
            let mut out = String::new();
            for line in text.lines() {
                let source: Vec<String> = line.split_whitespace().map(str::to_string).collect();
                let req = TranslationRequest { source, src: s, tgt: t, decode, sample_seed };
                out.push_str(&translate(&ck.params, &ck.vocab, &req)?.join(" "));
                out.push('\n');
            }
            write(&common.out, "translations.txt", &out)?;
            print!("{out}");
        }
        Cmd::Eval { common, checkpoint, test, max_pairs } => {
            let extra = [
                ("checkpoint", checkpoint.display().to_string()),
                ("test", test.display().to_string()),
                ("max-pairs", max_pairs.to_string()),
            ];
            let cfg = setup(&common, "eval", &extra)?;
            let ck = load_checkpoint(&checkpoint)?;
            let te = load_corpus(&test, Some(&ck.languages), ck.params.dims().flag_len, Split::Test)?;
            let mc = MatrixConfig {
                decode: cfg.decode()?,
                workers: cfg.workers()?,
                max_pairs: (max_pairs > 0).then_some(max_pairs),
            };
            let m = evaluate_matrix(&te, &ck.params, &mc)?;
            write(&common.out, "bleu.csv", &m.bleu_csv())?;
            write(&common.out, "naive_copy.csv", &m.naive_copy_csv())?;
            print!("BLEU-4\n{}naive copy\n{}", m.bleu_csv(), m.naive_copy_csv());
        }
        Cmd::Params { common, n, paper_dims, vocab } => {
            let extra = [("N", n.to_string()), ("paper-dims", paper_dims.to_string()), ("vocab", vocab.to_string())];
            let cfg = setup(&common, "params", &extra)?;
            if n < 2 {
                return Err(Failure::Usage("--N must be at least 2".into()));
            }
            let mut reports = Vec::new();
            for langs in 2..=n {
                let dims = if paper_dims { ModelDims::paper(langs) } else { cfg.dims(vocab, langs)? };
                reports.push(count_params(&dims)?);
            }
            let mut detail =
                String::from("N,encoder,decoder,projectors,pairwise_models,pairwise_total,unified_total,ratio\n");
            for r in &reports {
                detail.push_str(&format!(
                    "{},{},{},{},{},{},{},{:.6}\n",
                    r.n_langs,
                    r.encoder,
                    r.decoder,
                    r.projectors,
                    r.pairwise_models,
                    r.pairwise_total,
                    r.unified_total,
                    r.ratio()
                ));
            }
            write(&common.out, "params.csv", &params_csv(&reports))?;
            write(&common.out, "params_detail.csv", &detail)?;
            write(&common.out, "params.svg", &param_chart_svg(&reports))?;
            print!("{detail}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.line());
            ExitCode::from(f.code())
        }
    }
}
