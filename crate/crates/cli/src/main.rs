use std::collections::HashSet;
use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use allsmiles::grammar::{generate_corpus, CORPUS_COLUMNS};
use allsmiles::latentopt::{canonical_set, latent_slice, optimize_protocol, write_slice_csv, GridSpec, OptConfig};
use allsmiles::rng::seeded;
use allsmiles::smiles::{enumerate_random, parse, read_corpus, write_canonical, write_corpus, CorpusRecord};
use allsmiles::vae::checkpoint::{load_file, save_file};
use allsmiles::vae::{
    corpus_vocab, grad_check_suite, train, write_metrics, Model, ModelConfig, TrainConfig, TrainItem,
};
use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "allsmiles", version, about = "SMILES parsing, grammar-masked generation and a multi-SMILES VAE")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse every line and report errors with line numbers.
    Parse { file: PathBuf },
    /// Print the canonical SMILES of every line.
    Canon { file: PathBuf },
    /// Print K random SMILES per molecule.
    Enum {
        file: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Exit nonzero iff some line fails to parse.
    Validate { file: PathBuf },
    /// Print a labeled corpus of grammar-sampled molecules.
    GenCorpus {
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 30)]
        max_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corpus whose molecules must not be drawn again.
        #[arg(long)]
        exclude: Option<PathBuf>,
    },
    /// Mean and maximum graph diameter of a corpus.
    DiameterStats { file: PathBuf },
    /// Train a model; writes checkpoint.asv and metrics.csv to output_dir.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print MAP latent vectors as CSV.
    Encode {
        #[command(flatten)]
        model: ModelArgs,
        file: PathBuf,
    },
    /// Beam-decode latent vectors read from CSV (the last columns of each row).
    Decode {
        #[command(flatten)]
        model: ModelArgs,
        file: PathBuf,
    },
    /// Decode prior samples and report validity, uniqueness and novelty.
    Sample {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training corpus for the novelty count.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Print every sampled string.
        #[arg(long)]
        print: bool,
    },
    /// Gradient ascent in latent space; writes optimize.csv to output_dir.
    Optimize {
        #[arg(long)]
        config: PathBuf,
    },
    /// Decode a 2-D grid around a molecule along two random directions.
    Slice {
        #[command(flatten)]
        model: ModelArgs,
        /// Center molecule.
        #[arg(long)]
        smiles: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 11)]
        steps: usize,
        #[arg(long, default_value_t = 2.0)]
        extent: f64,
        #[arg(long, default_value_t = 0)]
        head: usize,
    },
    /// Finite-difference checks of every block and the whole model.
    Gradcheck,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Decode under the grammar mask.
    #[arg(long)]
    grammar_mask: bool,
    #[arg(long)]
    beam_width: Option<usize>,
}

impl ModelArgs {
    fn load(&self) -> Result<Model<f32>> {
        let mut model: Model<f32> =
            load_file(&self.checkpoint).with_context(|| format!("loading {}", self.checkpoint.display()))?;
        if self.grammar_mask {
            model.config.grammar_mask_decoding = true;
        }
        if let Some(w) = self.beam_width {
            ensure!(w >= 1, "beam width must be at least 1");
            model.config.beam_width = w;
        }
        Ok(model)
    }
}

fn default_trajectories() -> usize {
    1000
}

/// Configuration of `train` and `optimize`. `seed` drives model
/// initialization, training and optimization.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    opt: OptConfig,
    corpus: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    output_dir: PathBuf,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_trajectories")]
    trajectories: usize,
}

impl RunConfig {
    fn load(path: &Path) -> Result<RunConfig> {
        let text = read_input(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text).with_context(|| format!("config {}", path.display()))?;
        cfg.train.seed = cfg.seed;
        cfg.model.validate().map_err(anyhow::Error::msg)?;
        Ok(cfg)
    }

    fn require(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        let p = path.clone().with_context(|| format!("config key {key} is required"))?;
        ensure!(p.is_file(), "{key} {} is not a file", p.display());
        Ok(p)
    }

    fn prepare_output(&self) -> Result<()> {
        fs::create_dir_all(&self.output_dir).with_context(|| format!("creating {}", self.output_dir.display()))
    }
}

fn threads() -> Result<usize> {
    match std::env::var("ALLSMILES_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("ALLSMILES_THREADS={v:?} is not a count"))?;
            ensure!(n >= 1, "ALLSMILES_THREADS must be at least 1");
            Ok(n)
        }
        Err(_) => Ok(1),
    }
}

fn read_input(path: &Path) -> Result<String> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
    }
}

/// Non-blank, non-comment lines with 1-based line numbers; only the first
/// tab-separated field is kept.
fn smiles_lines(text: &str) -> Vec<(usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('\t').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

fn load_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    read_corpus(&read_input(path)?).with_context(|| format!("corpus {}", path.display()))
}

fn train_items(records: &[CorpusRecord]) -> Result<Vec<TrainItem>> {
    records.iter().map(|r| TrainItem::from_record(r).with_context(|| format!("corpus molecule {}", r.smiles))).collect()
}

/// Reports per-line parse errors on stderr; returns the number of failures.
fn check_lines(
    text: &str,
    mut on_ok: impl FnMut(usize, &str, allsmiles::smiles::ParseResult) -> Result<()>,
) -> Result<usize> {
    let mut failures = 0;
    for (line, s) in smiles_lines(text) {
        match parse(s) {
            Ok(r) => on_ok(line, s, r)?,
            Err(e) => {
                failures += 1;
                eprintln!("line {line}: {}: {e}", e.kind());
            }
        }
    }
    Ok(failures)
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<bool> {
    threads()?;
    match cli.command {
        Command::Parse { file } => {
            let failures = check_lines(&read_input(&file)?, |line, _, r| {
                writeln!(out, "line {line}: ok, {} atoms, {} bonds", r.graph.atom_count(), r.graph.bonds().len())?;
                Ok(())
            })?;
            Ok(failures == 0)
        }
        Command::Canon { file } => {
            let failures = check_lines(&read_input(&file)?, |_, _, r| {
                writeln!(out, "{}", write_canonical(&r.graph)?)?;
                Ok(())
            })?;
            Ok(failures == 0)
        }
        Command::Enum { file, k, seed } => {
            let failures = check_lines(&read_input(&file)?, |line, _, r| {
                let strings = enumerate_random(&r.graph, seed ^ line as u64, k)?;
                for (s, _) in strings {
                    writeln!(out, "{s}")?;
                }
                Ok(())
            })?;
            Ok(failures == 0)
        }
        Command::Validate { file } => {
            let text = read_input(&file)?;
            let failures = check_lines(&text, |_, _, _| Ok(()))?;
            writeln!(out, "{} lines, {failures} invalid", smiles_lines(&text).len())?;
            Ok(failures == 0)
        }
        Command::GenCorpus { n, max_len, seed, exclude } => {
            ensure!(max_len >= 1, "max-len must be at least 1");
            let exclude = match exclude {
                Some(p) => canonical_set(load_corpus(&p)?.iter().map(|r| r.smiles.as_str())),
                None => HashSet::new(),
            };
            let records = generate_corpus(n, max_len, seed, &exclude);
            let header = format!("smiles\t{}", CORPUS_COLUMNS.join("\t"));
            write!(out, "{}", write_corpus(&records, Some(&header)))?;
            Ok(true)
        }
        Command::DiameterStats { file } => {
            let mut diameters = Vec::new();
            let failures = check_lines(&read_input(&file)?, |_, _, r| {
                diameters.push(r.graph.diameter());
                Ok(())
            })?;
            ensure!(!diameters.is_empty(), "no molecules in {}", file.display());
            let mean = diameters.iter().sum::<usize>() as f64 / diameters.len() as f64;
            let max = diameters.iter().max().copied().unwrap_or(0);
            writeln!(out, "molecules {} mean {mean:.2} max {max}", diameters.len())?;
            Ok(failures == 0)
        }
        Command::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            let corpus_path = RunConfig::require(&cfg.corpus, "corpus")?;
            cfg.prepare_output()?;
            let items = train_items(&load_corpus(&corpus_path)?)?;
            let vocab = corpus_vocab(&items)?;
            let mut model = Model::<f32>::new(cfg.model.clone(), vocab, cfg.seed)?;
            let rows = train(&mut model, &items, &cfg.train, |r| {
                if r.step % 100 == 0 {
                    eprintln!("step {} loss {:.4} recon {:.4} kl {:.4}", r.step, r.loss, r.recon, r.kl);
                }
            })?;
            save_file(&model, &cfg.output_dir.join("checkpoint.asv"))?;
            write_metrics(&rows, BufWriter::new(fs::File::create(cfg.output_dir.join("metrics.csv"))?))?;
            writeln!(out, "trained {} steps", rows.len())?;
            Ok(true)
        }
        Command::Encode { model, file } => {
            let model = model.load()?;
            let failures = check_lines(&read_input(&file)?, |_, s, r| {
                let z = model.map_encode(&r.graph)?;
                let fields: Vec<String> = z.iter().map(|x| x.to_string()).collect();
                writeln!(out, "{s},{}", fields.join(","))?;
                Ok(())
            })?;
            Ok(failures == 0)
        }
        Command::Decode { model, file } => {
            let model = model.load()?;
            let n = model.latent_total();
            for (i, line) in read_input(&file)?.lines().enumerate() {
                let fields: Vec<&str> = line.split(',').map(str::trim).collect();
                if fields.len() < n {
                    continue;
                }
                let Ok(z) = fields[fields.len() - n..].iter().map(|f| f.parse::<f64>()).collect::<Result<Vec<_>, _>>()
                else {
                    if i == 0 {
                        continue; // header
                    }
                    bail!("line {}: expected {n} numeric latent columns", i + 1);
                };
                writeln!(out, "{}", model.decode(&z)?)?;
            }
            Ok(true)
        }
        Command::Sample { model, n, seed, corpus, print } => {
            let model = model.load()?;
            let known = match corpus {
                Some(p) => canonical_set(load_corpus(&p)?.iter().map(|r| r.smiles.as_str())),
                None => HashSet::new(),
            };
            let report = model.sample_prior_and_decode(n, seed, &known)?;
            if print {
                for s in &report.strings {
                    writeln!(out, "{s}")?;
                }
            }
            writeln!(out, "validity {:.3}", report.validity)?;
            writeln!(out, "uniqueness {:.3}", report.uniqueness)?;
            writeln!(out, "novelty {:.3}", report.novelty)?;
            Ok(true)
        }
        Command::Optimize { config } => {
            let cfg = RunConfig::load(&config)?;
            let ckpt = RunConfig::require(&cfg.checkpoint, "checkpoint")?;
            cfg.prepare_output()?;
            let model: Model<f32> = load_file(&ckpt)?;
            cfg.opt.validate(&model.latent_widths(), model.config.heads.len())?;
            let report =
                optimize_protocol(&model, &cfg.opt, cfg.trajectories, cfg.seed, |g| g.molecular_weight(), |_, _| {})?;
            report.write_csv(BufWriter::new(fs::File::create(cfg.output_dir.join("optimize.csv"))?))?;
            let top: Vec<String> = report.top3.iter().map(|v| format!("{v:.3}")).collect();
            writeln!(
                out,
                "valid {} no_valid_decode {} top3 {}",
                report.rows.len(),
                report.no_valid_decode,
                top.join(" ")
            )?;
            Ok(true)
        }
        Command::Slice { model, smiles, seed, steps, extent, head } => {
            let model = model.load()?;
            ensure!(head < model.config.heads.len(), "head {head} out of range");
            let graph = parse(&smiles).with_context(|| format!("center {smiles}"))?.graph;
            let center = model.map_encode(&graph)?;
            let (du, dv) = orthonormal_pair(center.len(), seed)?;
            let grid = GridSpec { steps_u: steps, steps_v: steps, extent_u: extent, extent_v: extent };
            let rows = latent_slice(&model, &center, &du, &dv, grid, |g| g.molecular_weight())?;
            write_slice_csv(&rows, head, &mut *out)?;
            Ok(true)
        }
        Command::Gradcheck => {
            let mut ok = true;
            for (name, r) in grad_check_suite() {
                let pass = r.passed && r.error.is_none();
                ok &= pass;
                let status = if pass { "ok" } else { "FAIL" };
                writeln!(out, "{name} {status} checked {} max_rel_error {:.2e}", r.checked, r.max_rel_error)?;
                if let Some(e) = r.error {
                    writeln!(out, "  error: {e}")?;
                }
            }
            Ok(ok)
        }
    }
}

/// Two random orthonormal directions.
fn orthonormal_pair(n: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure!(n >= 2, "slicing needs a latent width of at least 2");
    let mut rng = seeded(seed, 12);
    let mut draw = || -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let unit = |v: Vec<f64>| {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect::<Vec<f64>>()
    };
    let u = unit(draw());
    let v = draw();
    let d: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    let v = unit(v.iter().zip(&u).map(|(b, a)| b - d * a).collect());
    Ok((u, v))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let result = run(cli, &mut out);
    let flushed = out.flush();
    match result {
        Ok(true) if flushed.is_ok() => ExitCode::SUCCESS,
        Ok(_) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
