use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;

use macas::aspect::LexiconSet;
use macas::autograd::gradcheck::{DEFAULT_EPS, DEFAULT_TOLERANCE};
use macas::diagnostics::{check_primitives, full_model_gradcheck, FULL_MODEL_SEED};
use macas::encoder::CrossMode;
use macas::pipeline::{
    ablate, evaluate, format_records, format_table, generate_synthetic, load_dataset, train, AblationGrid, Checkpoint,
    DataFormat, Dataset, TrainConfig,
};
use macas::textgraph::{build_graph, train_gcn, LabelSource};
use macas::{Error, Result};

#[derive(Parser)]
#[command(name = "macas", version, about = "Multi-aspect cross-attention abusive language detection")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Plain-text `key = value` settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = ["cb", "cm", "cbm"])]
    mode: Option<String>,
    #[arg(long, global = true, overrides_with = "no_graph")]
    graph: bool,
    #[arg(long = "no-graph", global = true, overrides_with = "graph")]
    no_graph: bool,
    #[arg(long, global = true)]
    fusion_repeats: Option<usize>,
    /// Comma-separated aspect letters, e.g. `d,g,e,i`.
    #[arg(long, global = true)]
    aspects: Option<String>,
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Extra `key=value` setting, applied last. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    /// Defaults, then the config file, the preset, the flags and `--set`.
    fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        if let Some(p) = &self.preset {
            cfg.apply_preset(p)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = &self.mode {
            cfg.model.mode = m.parse::<CrossMode>()?;
        }
        if self.graph {
            cfg.model.use_graph = true;
        }
        if self.no_graph {
            cfg.model.use_graph = false;
        }
        if let Some(n) = self.fusion_repeats {
            cfg.model.fusion_repeats = n;
        }
        if let Some(a) = &self.aspects {
            cfg.set("aspects", a)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).map_err(|e| Error::Io {
            path: self.out.clone(),
            source: e,
        })?;
        Ok(&self.out)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a templated synthetic corpus.
    GenSynth {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long, default_value = "csv")]
        format: DataFormat,
        #[command(flatten)]
        common: Common,
    },
    /// Build the word-document graph and train the behaviour GCN.
    BuildGraph {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the full model and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Validation split; without it the training data is split.
        #[arg(long)]
        val: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on a labelled file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the aspect or mode ablation grid.
    Ablate {
        #[arg(value_parser = ["aspects", "modes"])]
        grid: String,
        #[arg(long)]
        data: PathBuf,
        /// Held-out split; without it the data is split.
        #[arg(long)]
        test: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every primitive and the toy model.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn lexicons(cfg: &TrainConfig) -> Result<LexiconSet> {
    match &cfg.lexicon_dir {
        Some(d) => LexiconSet::from_dir(d),
        None => Ok(LexiconSet::builtin()),
    }
}

fn held_out(cfg: &TrainConfig, data: &Dataset, other: Option<&Path>) -> Result<(Dataset, Dataset)> {
    match other {
        Some(p) => {
            let o = load_dataset(p, None)?;
            Ok((data.clone(), Dataset::with_labels(o.records, data.labels.clone())?))
        }
        None => data.split(cfg.train_fraction, cfg.seed),
    }
}

/// Config echo plus the label source the GCN will use on `train`.
fn echo(cfg: &TrainConfig, train: &Dataset) -> Result<String> {
    let mut line = cfg.echo();
    if cfg.model.use_graph {
        let source = if train.corpus()?.has_user_ids() {
            LabelSource::UserId
        } else {
            LabelSource::ClassLabel
        };
        line.push_str(&format!(" gcn_labels={source}"));
    }
    Ok(line)
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::GenSynth {
            classes,
            per_class,
            format,
            common,
        } => {
            let cfg = common.train_config()?;
            let data = generate_synthetic(cfg.seed, classes, per_class, &lexicons(&cfg)?)?;
            let path = common.out_dir()?.join(format!("synthetic.{format}"));
            data.save(&path, format)?;
            println!("wrote={} records={} classes={}", path.display(), data.len(), data.labels.len());
        }
        Command::BuildGraph { data, common } => {
            let cfg = common.train_config()?;
            let data = load_dataset(&data, None)?;
            let corpus = data.corpus()?;
            let (vocab, graph) = build_graph(&corpus, cfg.gcn.window, cfg.gcn.min_count)?;
            let mut gcn = cfg.gcn.clone();
            gcn.seed ^= cfg.seed;
            let out = train_gcn(&corpus, &gcn)?;
            let dir = common.out_dir()?;
            let mut edges = String::from("source\ttarget\tweight\n");
            for (i, j, w) in graph.edges() {
                edges.push_str(&format!("{}\t{}\t{w}\n", vocab.node_name(i), vocab.node_name(j)));
            }
            write(&dir.join("edges.tsv"), &edges)?;
            let table = out.table.word_table(&out.vocab)?;
            let mut emb = String::new();
            for w in out.vocab.words() {
                let row: Vec<String> = table.get(w).unwrap_or(&[]).iter().map(f64::to_string).collect();
                emb.push_str(&format!("{w}\t{}\n", row.join(" ")));
            }
            write(&dir.join("word_embeddings.tsv"), &emb)?;
            println!(
                "label_source={} labels={} docs={} words={} edges={} window={} hidden={} epochs={} final_loss={:.6} train_accuracy={:.4}",
                out.label_source,
                out.labels.len(),
                vocab.num_docs(),
                vocab.num_words(),
                graph.edges().len(),
                gcn.window,
                gcn.hidden,
                gcn.epochs,
                out.losses.last().copied().unwrap_or(f64::NAN),
                out.train_accuracy
            );
        }
        Command::Train { data, val, common } => {
            let cfg = common.train_config()?;
            let data = load_dataset(&data, None)?;
            let (tr, va) = held_out(&cfg, &data, val.as_deref())?;
            println!("{}", echo(&cfg, &tr)?);
            let start = Instant::now();
            let out = train(&cfg, &tr, Some(&va))?;
            let dir = common.out_dir()?;
            let log: String = out.log.iter().map(|e| format!("{e}\n")).collect();
            print!("{log}");
            write(&dir.join("train_log.txt"), &log)?;
            let ckpt = dir.join("model.ckpt");
            out.checkpoint.save(&ckpt)?;
            let report = evaluate(&out.checkpoint, &va)?;
            if let Some(src) = out.fit.gcn_label_source {
                println!("label_source={src}");
            }
            println!(
                "train_accuracy={:.4} val_weighted_f1={:.4} seconds={:.1} checkpoint={}",
                out.train_accuracy,
                report.weighted_f1,
                start.elapsed().as_secs_f64(),
                ckpt.display()
            );
        }
        Command::Eval { checkpoint, data, .. } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let data = load_dataset(&data, None)?;
            print!("{}", evaluate(&ckpt, &data)?);
        }
        Command::Ablate {
            grid,
            data,
            test,
            common,
        } => {
            let cfg = common.train_config()?;
            let grid: AblationGrid = grid.parse()?;
            let data = load_dataset(&data, None)?;
            let (tr, te) = held_out(&cfg, &data, test.as_deref())?;
            println!("{}", echo(&cfg, &tr)?);
            let rows = ablate(&tr, &te, &cfg, grid)?;
            print!("{}", format_table(&rows));
            let name = match grid {
                AblationGrid::Aspects => "ablation_aspects.txt",
                AblationGrid::Modes => "ablation_modes.txt",
            };
            let path = common.out_dir()?.join(name);
            write(&path, &format_records(&rows))?;
            println!("rows={} records={}", rows.len(), path.display());
        }
        Command::Gradcheck { common } => {
            let seed = common.seed.unwrap_or(FULL_MODEL_SEED);
            let start = Instant::now();
            let mut ok = true;
            for (name, r) in check_primitives(DEFAULT_EPS)? {
                ok &= r.passed;
                println!(
                    "check=primitive op={name} max_rel_error={:e} checked={} skipped={} pass={}",
                    r.max_rel_error,
                    r.checked(),
                    r.skipped(),
                    r.passed
                );
            }
            let r = full_model_gradcheck(seed)?;
            ok &= r.passed;
            println!(
                "check=full_model seed={seed} max_rel_error={:e} max_abs_error={:e} worst={} checked={} skipped={} pass={}",
                r.max_rel_error,
                r.max_abs_error,
                r.worst().map(|w| w.name.as_str()).unwrap_or("-"),
                r.checked(),
                r.skipped(),
                r.passed
            );
            println!(
                "eps={DEFAULT_EPS:e} tolerance={DEFAULT_TOLERANCE:e} seconds={:.2} pass={ok}",
                start.elapsed().as_secs_f64()
            );
            info!("gradcheck finished");
            return Ok(ok);
        }
    }
    Ok(true)
}

fn machine_line(kind: &str, message: &str) -> String {
    let message = message.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
    format!("error kind={kind} message=\"{}\"", message.trim())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", machine_line("usage", first));
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", machine_line(e.kind(), &e.to_string()));
            ExitCode::from(1)
        }
    }
}
