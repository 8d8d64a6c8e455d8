use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use typweight::data::{load_dataset, save_dataset, Schema, SplitTag};
use typweight::experiment::{self, compare_losses, preset, render_table, ExperimentPlan, Grouping};
use typweight::mlp::{init_model, MlpModel};
use typweight::ocsvm::{
    fit_class_specific, fit_ocsvm, score_dataset, OcsvmParams, ScoreMode, ScoreTable,
};
use typweight::plot::{plot_scatter, PlotOptions};
use typweight::synth::{generate, CloudSpec};
use typweight::train::{train, write_metrics_jsonl, ExternalScores, TrainConfig};

#[derive(Parser)]
#[command(
    name = "typweight",
    version,
    about = "Typicality-weighted classifier training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by subcommands that read a TOML config.
#[derive(clap::Args)]
struct ConfigArgs {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=5` or
    /// `--set data.shell=[2.5,4.0]`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    General,
    ClassSpecific,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train / test-typical / test-atypical CSVs.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Fit one-class SVM scorers on a training CSV and score a dataset.
    Score {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        train: PathBuf,
        /// Dataset to score (defaults to the training set).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "general")]
        mode: Mode,
        #[arg(long)]
        num_classes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Score table CSV.
        #[arg(long, default_value = "scores.csv")]
        out: PathBuf,
        /// Write the fitted models as JSON (one file per model).
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Train one classifier and write the model, metrics and weight tables.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        train: PathBuf,
        /// Evaluation split as NAME=PATH. Repeatable.
        #[arg(long = "eval", value_name = "NAME=PATH")]
        evals: Vec<String>,
        /// General score table from `score --mode general`.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Class-specific score table from `score --mode class-specific`.
        #[arg(long)]
        class_scores: Option<PathBuf>,
        #[arg(long)]
        num_classes: Option<usize>,
        /// Hidden layer widths, comma separated.
        #[arg(long, value_delimiter = ',')]
        hidden: Vec<usize>,
        /// Keep only the top K layers trainable.
        #[arg(long)]
        trainable_top: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Run an experiment plan and write the report, tables and CSVs.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Built-in plan used as the base config.
        #[arg(long, default_value = "default")]
        preset: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Worker threads (0 = rayon default).
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
    /// Scatter plot of a dataset on two feature dimensions.
    Plot {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        num_classes: Option<usize>,
        /// Color by this score table instead of the `oracle_typ` column.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Paint decision regions of a trained model.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,1")]
        dims: Vec<usize>,
        #[arg(long, default_value = "plot.svg")]
        out: PathBuf,
    },
}

/// Parses a `--set` value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("--set {key}: {part} is not a table"),
        };
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Builds a config: defaults, then the file, then `--set` overrides.
fn load_config<C: Serialize + DeserializeOwned>(base: &C, args: &ConfigArgs) -> Result<C> {
    let mut table = toml::Table::try_from(base).context("serializing default config")?;
    if let Some(path) = &args.config {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: toml::Table = text
            .parse()
            .with_context(|| format!("parsing {}", path.display()))?;
        merge(&mut table, file);
    }
    for o in &args.overrides {
        let (key, raw) = o
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {o:?}"))?;
        set_path(&mut table, key.trim(), parse_value(raw.trim()))?;
    }
    toml::Value::Table(table)
        .try_into()
        .context("invalid config")
}

fn merge(into: &mut toml::Table, from: toml::Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(toml::Value::Table(a)), toml::Value::Table(b)) => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

fn schema(num_classes: Option<usize>, split: SplitTag) -> Schema {
    Schema {
        num_classes,
        split: Some(split),
        ..Schema::default()
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn read_scores(path: &Path) -> Result<ScoreTable<f64>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(ScoreTable::read_csv(f)?)
}

/// Aligns a score table with the dataset's sample order by sample id.
fn aligned_scores(path: &Path, ids: &[u64]) -> Result<Vec<f64>> {
    let table = read_scores(path)?;
    let by_id: std::collections::HashMap<u64, f64> = table
        .rows
        .iter()
        .map(|r| (r.sample_id, r.probability))
        .collect();
    ids.iter()
        .map(|id| {
            by_id
                .get(id)
                .copied()
                .with_context(|| format!("{} has no score for sample {id}", path.display()))
        })
        .collect()
}

fn cmd_gen(cfg: &ConfigArgs, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut spec: CloudSpec = load_config(&CloudSpec::default(), cfg)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let g = generate::<f64>(&spec)?;
    create_dir(out)?;
    save_dataset(&g.train, out.join("train.csv"))?;
    save_dataset(&g.test_typical, out.join("test_typical.csv"))?;
    save_dataset(&g.test_atypical, out.join("test_atypical.csv"))?;
    write(&out.join("generator.toml"), toml::to_string(&spec)?)?;
    println!(
        "wrote {} train, {} test-typical, {} test-atypical samples to {}",
        g.train.len(),
        g.test_typical.len(),
        g.test_atypical.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_score(
    cfg: &ConfigArgs,
    train_path: &Path,
    data: Option<&Path>,
    mode: Mode,
    num_classes: Option<usize>,
    seed: u64,
    out: &Path,
    model_out: Option<&Path>,
) -> Result<()> {
    let params: OcsvmParams = load_config(&OcsvmParams::default(), cfg)?;
    let train_set = load_dataset::<f64>(train_path, &schema(num_classes, SplitTag::Train))?;
    let target = match data {
        Some(p) => load_dataset::<f64>(p, &schema(Some(train_set.num_classes()), SplitTag::Train))?,
        None => train_set.clone(),
    };
    let (models, score_mode) = match mode {
        Mode::General => (
            vec![fit_ocsvm(&train_set, &params, seed)?],
            ScoreMode::General,
        ),
        Mode::ClassSpecific => (
            fit_class_specific(&train_set, &params, seed)?,
            ScoreMode::ClassSpecific,
        ),
    };
    let table = score_dataset(&models, &target, score_mode)?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    write(out, buf)?;
    if let Some(dir) = model_out {
        create_dir(dir)?;
        for (i, m) in models.iter().enumerate() {
            m.save_json(dir.join(format!("ocsvm_{i}.json")))?;
        }
    }
    println!(
        "scored {} samples with {} model(s) -> {}",
        table.len(),
        models.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    cfg: &ConfigArgs,
    train_path: &Path,
    evals: &[String],
    scores: Option<&Path>,
    class_scores: Option<&Path>,
    num_classes: Option<usize>,
    hidden: &[usize],
    trainable_top: Option<usize>,
    seed: Option<u64>,
    epochs: Option<usize>,
    out: &Path,
) -> Result<()> {
    let mut tc: TrainConfig = load_config(&TrainConfig::default(), cfg)?;
    if let Some(s) = seed {
        tc.seed = s;
    }
    if let Some(e) = epochs {
        tc.epochs = e;
    }
    let data = load_dataset::<f64>(train_path, &schema(num_classes, SplitTag::Train))?;
    let ids: Vec<u64> = data.samples().iter().map(|s| s.sample_id).collect();
    let external = ExternalScores {
        general: scores.map(|p| aligned_scores(p, &ids)).transpose()?,
        class_specific: class_scores.map(|p| aligned_scores(p, &ids)).transpose()?,
    };
    let mut eval_sets = Vec::new();
    for e in evals {
        let (name, path) = e
            .split_once('=')
            .with_context(|| format!("--eval expects NAME=PATH, got {e:?}"))?;
        let d = load_dataset::<f64>(
            path,
            &schema(Some(data.num_classes()), SplitTag::TestTypical),
        )?;
        eval_sets.push((name.to_string(), d));
    }
    let eval_refs: Vec<(&str, &typweight::Dataset64)> =
        eval_sets.iter().map(|(n, d)| (n.as_str(), d)).collect();

    let mut sizes = vec![data.dim()];
    sizes.extend(hidden);
    sizes.push(data.num_classes());
    let mut model = init_model::<f64>(&sizes, data.num_classes(), tc.seed)?;
    if let Some(k) = trainable_top {
        model.train_top_layers(k);
    }
    create_dir(out)?;
    let weights_dir = out.join("weights");
    create_dir(&weights_dir)?;
    let mut write_err = None;
    let mut on_epoch = |s: typweight::train::EpochStart<'_, f64>| {
        if s.weights.first_epoch != s.epoch {
            return;
        }
        let mut buf = Vec::new();
        let res = s
            .weights
            .write_csv(&mut buf)
            .map_err(anyhow::Error::from)
            .and_then(|_| write(&weights_dir.join(format!("epoch_{}.csv", s.epoch)), buf));
        if let Err(e) = res {
            write_err.get_or_insert(e);
        }
    };
    let history = train(
        &mut model,
        &data,
        &tc,
        &external,
        &eval_refs,
        Some(&mut on_epoch),
    )?;
    if let Some(e) = write_err {
        return Err(e);
    }
    model.save_json(out.join("model.json"))?;
    let mut buf = Vec::new();
    write_metrics_jsonl(&history, &mut buf)?;
    write(&out.join("metrics.jsonl"), buf)?;
    write(&out.join("config.toml"), toml::to_string(&tc)?)?;
    if let Some(last) = history.last() {
        print!(
            "epoch {} train {:.4}",
            last.epoch, last.train.macro_accuracy
        );
        for s in &last.evals {
            print!("  {} {:.4}", s.split, s.eval.macro_accuracy);
        }
        println!();
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    cfg: &ConfigArgs,
    preset_name: &str,
    seed: Option<u64>,
    repeats: Option<usize>,
    epochs: Option<usize>,
    threads: usize,
    out: &Path,
) -> Result<bool> {
    let base = preset(preset_name).with_context(|| {
        format!(
            "unknown preset {preset_name:?}; known: {}",
            experiment::PRESETS.join(", ")
        )
    })?;
    let mut plan: ExperimentPlan = load_config(&base, cfg)?;
    if let Some(s) = seed {
        plan.base_seed = s;
    }
    if let Some(r) = repeats {
        plan.repeats = r;
    }
    if let Some(e) = epochs {
        plan.train.epochs = e;
        plan.report_epochs.retain(|&x| x <= e);
        if !plan.report_epochs.contains(&e) {
            plan.report_epochs.push(e);
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()?;
    let report = pool.install(|| experiment::run_plan(&plan))?;

    create_dir(out)?;
    report.save_json(out.join("report.json"))?;
    write(&out.join("aggregates.csv"), report.aggregates_csv()?)?;
    let by_weighting = render_table(&report, Grouping::ByWeighting);
    let by_loss = render_table(&report, Grouping::ByLoss);
    write(&out.join("table_by_weighting.txt"), by_weighting.to_text())?;
    write(&out.join("table_by_weighting.csv"), by_weighting.to_csv()?)?;
    write(&out.join("table_by_loss.txt"), by_loss.to_text())?;
    write(&out.join("table_by_loss.csv"), by_loss.to_csv()?)?;
    let cmp = compare_losses(&report, report.final_epoch());
    if !cmp.is_empty() {
        write(
            &out.join("loss_comparison.json"),
            serde_json::to_string_pretty(&cmp)? + "\n",
        )?;
    }
    print!("{}", by_weighting.to_text());
    for f in &report.failures {
        eprintln!(
            "failed: repeat {} {}: {}",
            f.repeat,
            f.cell_id.as_deref().unwrap_or("<data>"),
            f.message
        );
    }
    Ok(report.failures.is_empty())
}

fn cmd_plot(
    data: &Path,
    num_classes: Option<usize>,
    scores: Option<&Path>,
    model: Option<&Path>,
    dims: &[usize],
    out: &Path,
) -> Result<()> {
    if dims.len() != 2 {
        bail!("--dims takes exactly two indices");
    }
    let d = load_dataset::<f64>(data, &schema(num_classes, SplitTag::Train))?;
    let ids: Vec<u64> = d.samples().iter().map(|s| s.sample_id).collect();
    let typicality = match scores {
        Some(p) => Some(aligned_scores(p, &ids)?),
        None => d
            .samples()
            .iter()
            .map(|s| s.oracle_typicality)
            .collect::<Option<Vec<f64>>>(),
    };
    let model = model.map(MlpModel::<f64>::load_json).transpose()?;
    let opts = PlotOptions {
        dims: [dims[0], dims[1]],
        title: Some(data.display().to_string()),
        ..PlotOptions::default()
    };
    write(
        out,
        plot_scatter(&d, typicality.as_deref(), model.as_ref(), &opts)?,
    )?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen { cfg, seed, out } => cmd_gen(&cfg, seed, &out)?,
        Command::Score {
            cfg,
            train,
            data,
            mode,
            num_classes,
            seed,
            out,
            model_out,
        } => cmd_score(
            &cfg,
            &train,
            data.as_deref(),
            mode,
            num_classes,
            seed,
            &out,
            model_out.as_deref(),
        )?,
        Command::Train {
            cfg,
            train,
            evals,
            scores,
            class_scores,
            num_classes,
            hidden,
            trainable_top,
            seed,
            epochs,
            out,
        } => cmd_train(
            &cfg,
            &train,
            &evals,
            scores.as_deref(),
            class_scores.as_deref(),
            num_classes,
            &hidden,
            trainable_top,
            seed,
            epochs,
            &out,
        )?,
        Command::Sweep {
            cfg,
            preset,
            seed,
            repeats,
            epochs,
            threads,
            out,
        } => return cmd_sweep(&cfg, &preset, seed, repeats, epochs, threads, &out),
        Command::Plot {
            data,
            num_classes,
            scores,
            model,
            dims,
            out,
        } => cmd_plot(
            &data,
            num_classes,
            scores.as_deref(),
            model.as_deref(),
            &dims,
            &out,
        )?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
