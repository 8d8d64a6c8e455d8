//! Sweeps over losses, weightings and trainable depth on synthetic clouds.
//!
//! Every repeat draws its own data; all cells of a repeat share the data,
//! the fitted external scorers, the initial model and the shuffle order, so
//! cells are compared on paired runs. Results are collected in a fixed order
//! and the report carries no wall-clock data, so a rerun with the same plan
//! serializes to the same bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, Dataset, Schema, SplitTag, Standardizer};
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::mlp::init_model;
use crate::ocsvm::{fit_class_specific, fit_ocsvm, score_dataset, OcsvmParams, ScoreMode};
use crate::stats;
use crate::synth::{derive_seed, generate, oracle_score_check, CloudSpec};
use crate::train::{train, ExternalScores, TrainConfig};
use crate::weighting::{WeightVariant, WeightingSpec};

pub const TEST_TYPICAL: &str = "test-typical";
pub const TEST_ATYPICAL: &str = "test-atypical";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub name: String,
    /// Synthetic clouds, regenerated per repeat from the repeat's data seed.
    pub data: CloudSpec,
    /// Fixed CSV splits used instead of `data`; repeats then differ only in
    /// the model seed.
    pub csv: Option<CsvSource>,
    /// Hidden layer widths; empty for a linear classifier.
    pub hidden: Vec<usize>,
    /// Number of top layers left trainable, one cell per entry. Empty trains
    /// every layer.
    pub trainable_top: Vec<usize>,
    /// Learning rate, batch size, epochs and shuffling. Loss, weighting and
    /// seed are set per cell.
    pub train: TrainConfig,
    pub losses: Vec<LossKind>,
    pub weightings: Vec<WeightingSpec>,
    pub ocsvm: OcsvmParams,
    pub standardize: bool,
    /// Epochs at which accuracies are recorded.
    pub report_epochs: Vec<usize>,
    pub repeats: usize,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSource {
    pub train: PathBuf,
    pub test_typical: PathBuf,
    pub test_atypical: PathBuf,
    pub num_classes: usize,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        preset("default").expect("default preset exists")
    }
}

fn w(v: WeightVariant) -> WeightingSpec {
    WeightingSpec::new(v)
}

pub const PRESETS: [&str; 4] = ["default", "losses", "weightings", "depth"];

/// Built-in plans.
///
/// - `default`: both losses against the main external weightings.
/// - `losses`: both losses, four weightings.
/// - `weightings`: hinge loss against every weighting variant.
/// - `depth`: a two-hidden-layer network with one, two or three top layers
///   trainable.
pub fn preset(name: &str) -> Option<ExperimentPlan> {
    let base = ExperimentPlan {
        name: name.to_string(),
        data: CloudSpec::default(),
        csv: None,
        hidden: Vec::new(),
        trainable_top: Vec::new(),
        train: TrainConfig::default(),
        losses: vec![LossKind::MsHinge, LossKind::SoftmaxLog],
        weightings: vec![
            w(WeightVariant::Uniform),
            w(WeightVariant::Random),
            w(WeightVariant::Typicality),
            w(WeightVariant::Atypicality),
            w(WeightVariant::ClsTypicality),
            w(WeightVariant::ClsAtypicality),
            w(WeightVariant::LogTyp),
            WeightingSpec::polynomial(4),
        ],
        ocsvm: OcsvmParams::default(),
        standardize: true,
        report_epochs: vec![1, 10],
        repeats: 20,
        base_seed: 0,
    };
    match name {
        "default" => Some(base),
        "losses" => Some(ExperimentPlan {
            weightings: vec![
                w(WeightVariant::Uniform),
                w(WeightVariant::Typicality),
                w(WeightVariant::Atypicality),
                w(WeightVariant::LogTyp),
                WeightingSpec::polynomial(4),
            ],
            ..base
        }),
        "weightings" => Some(ExperimentPlan {
            losses: vec![LossKind::MsHinge],
            weightings: vec![
                w(WeightVariant::Uniform),
                w(WeightVariant::Random),
                w(WeightVariant::Typicality),
                w(WeightVariant::Atypicality),
                w(WeightVariant::ClsTypicality),
                w(WeightVariant::ClsAtypicality),
                w(WeightVariant::LogTyp),
                w(WeightVariant::LogClsAtyp),
                w(WeightVariant::ExpTyp),
                w(WeightVariant::GammaTyp),
                WeightingSpec::polynomial(2),
                WeightingSpec::polynomial(4),
                w(WeightVariant::InternalProb),
                w(WeightVariant::InternalEntropy),
                w(WeightVariant::HybridAtypThenInternal),
            ],
            ..base
        }),
        "depth" => Some(ExperimentPlan {
            hidden: vec![64, 64],
            trainable_top: vec![1, 2, 3],
            losses: vec![LossKind::MsHinge],
            weightings: vec![
                w(WeightVariant::Atypicality),
                w(WeightVariant::Typicality),
                w(WeightVariant::LogTyp),
                WeightingSpec::polynomial(2),
            ],
            ..base
        }),
        _ => None,
    }
}

/// One point of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: String,
    pub loss: LossKind,
    pub weighting: WeightingSpec,
    pub trainable_top: Option<usize>,
}

impl Cell {
    pub fn weighting_label(&self) -> String {
        match self.trainable_top {
            Some(k) => format!("{}@top{k}", self.weighting.label()),
            None => self.weighting.label(),
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be positive".into()));
        }
        if self.losses.is_empty() || self.weightings.is_empty() {
            return Err(Error::Config(
                "plan needs at least one loss and one weighting".into(),
            ));
        }
        self.data.validate()?;
        self.train.validate()?;
        self.ocsvm.validate()?;
        for spec in &self.weightings {
            spec.validate()?;
        }
        if self.report_epochs.is_empty() {
            return Err(Error::Config("report_epochs is empty".into()));
        }
        if let Some(&e) = self
            .report_epochs
            .iter()
            .find(|&&e| e == 0 || e > self.train.epochs)
        {
            return Err(Error::Config(format!(
                "report epoch {e} outside 1..={}",
                self.train.epochs
            )));
        }
        let depth = self.hidden.len() + 1;
        if let Some(&k) = self.trainable_top.iter().find(|&&k| k == 0 || k > depth) {
            return Err(Error::Config(format!(
                "trainable_top {k} outside 1..={depth}"
            )));
        }
        let ids: Vec<String> = self.cells().into_iter().map(|c| c.id).collect();
        let mut uniq = ids.clone();
        uniq.sort();
        uniq.dedup();
        if uniq.len() != ids.len() {
            return Err(Error::Config("duplicate cells in plan".into()));
        }
        Ok(())
    }

    /// Grid in loss-major order.
    pub fn cells(&self) -> Vec<Cell> {
        let depths: Vec<Option<usize>> = if self.trainable_top.is_empty() {
            vec![None]
        } else {
            self.trainable_top.iter().map(|&k| Some(k)).collect()
        };
        let mut out = Vec::new();
        for &loss in &self.losses {
            for spec in &self.weightings {
                for &top in &depths {
                    let mut cell = Cell {
                        id: String::new(),
                        loss,
                        weighting: spec.clone(),
                        trainable_top: top,
                    };
                    cell.id = format!("{}/{}", loss.as_str(), cell.weighting_label());
                    out.push(cell);
                }
            }
        }
        out
    }

    pub fn repeat_seeds(&self, repeat: usize) -> RepeatSeeds {
        let r = repeat as u64;
        RepeatSeeds {
            repeat,
            data_seed: derive_seed(self.base_seed, 2 * r),
            model_seed: derive_seed(self.base_seed, 2 * r + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepeatSeeds {
    pub repeat: usize,
    pub data_seed: u64,
    pub model_seed: u64,
}

/// Accuracy of one cell, one repeat, one epoch and one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub cell_id: String,
    pub repeat: usize,
    pub epoch: usize,
    pub split: String,
    /// Macro (class-averaged) accuracy.
    pub accuracy: f64,
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub cell_id: String,
    pub epoch: usize,
    pub split: String,
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub cell_id: Option<String>,
    pub repeat: usize,
    pub message: String,
}

/// Rank agreement of the fitted class-specific scorer with the generator's
/// oracle typicality on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerCheck {
    pub repeat: usize,
    pub spearman: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub plan: ExperimentPlan,
    pub cells: Vec<Cell>,
    pub seeds: Vec<RepeatSeeds>,
    pub scorer_checks: Vec<ScorerCheck>,
    pub records: Vec<Record>,
    pub aggregates: Vec<Aggregate>,
    pub failures: Vec<Failure>,
}

struct Prepared {
    train: Dataset<f64>,
    test_typical: Dataset<f64>,
    test_atypical: Dataset<f64>,
    external: ExternalScores<f64>,
    check: Option<ScorerCheck>,
}

fn prepare(plan: &ExperimentPlan, seeds: RepeatSeeds, cells: &[Cell]) -> Result<Prepared> {
    let (train, test_typical, test_atypical) = match &plan.csv {
        Some(src) => {
            let load = |path: &Path, split| {
                let schema = Schema {
                    num_classes: Some(src.num_classes),
                    score_column: None,
                    split: Some(split),
                };
                load_dataset::<f64>(path, &schema)
            };
            (
                load(&src.train, SplitTag::Train)?,
                load(&src.test_typical, SplitTag::TestTypical)?,
                load(&src.test_atypical, SplitTag::TestAtypical)?,
            )
        }
        None => {
            let spec = CloudSpec {
                seed: seeds.data_seed,
                ..plan.data.clone()
            };
            let g = generate::<f64>(&spec)?;
            (g.train, g.test_typical, g.test_atypical)
        }
    };
    let (train, test_typical, test_atypical) = if plan.standardize {
        let st = Standardizer::fit(&train)?;
        (
            st.apply(&train)?,
            st.apply(&test_typical)?,
            st.apply(&test_atypical)?,
        )
    } else {
        (train, test_typical, test_atypical)
    };
    let variants = || cells.iter().map(|c| c.weighting.variant);
    let need_general = variants().any(|v| v.needs_general_scores());
    let need_class = variants().any(|v| v.needs_class_scores());

    let general = if need_general {
        let model = fit_ocsvm(&train, &plan.ocsvm, seeds.data_seed)?;
        Some(
            score_dataset(std::slice::from_ref(&model), &train, ScoreMode::General)?
                .probabilities(),
        )
    } else {
        None
    };
    let (class_specific, check) = if need_class {
        let models = fit_class_specific(&train, &plan.ocsvm, seeds.data_seed)?;
        let probs = score_dataset(&models, &train, ScoreMode::ClassSpecific)?.probabilities();
        let has_oracle = train
            .samples()
            .iter()
            .all(|s| s.oracle_typicality.is_some());
        let check = if has_oracle {
            let rc = oracle_score_check(&probs, &train)?;
            Some(ScorerCheck {
                repeat: seeds.repeat,
                spearman: rc.spearman,
                degenerate: rc.degenerate,
            })
        } else {
            None
        };
        (Some(probs), check)
    } else {
        (None, None)
    };
    Ok(Prepared {
        train,
        test_typical,
        test_atypical,
        external: ExternalScores {
            general,
            class_specific,
        },
        check,
    })
}

fn run_cell(
    plan: &ExperimentPlan,
    seeds: RepeatSeeds,
    cell: &Cell,
    prep: &Prepared,
) -> Result<Vec<Record>> {
    let mut sizes = vec![prep.train.dim()];
    sizes.extend(&plan.hidden);
    sizes.push(prep.train.num_classes());
    let mut model = init_model::<f64>(&sizes, prep.train.num_classes(), seeds.model_seed)?;
    if let Some(k) = cell.trainable_top {
        model.train_top_layers(k);
    }
    let cfg = TrainConfig {
        loss_kind: cell.loss,
        weighting: WeightingSpec {
            seed: seeds.model_seed,
            ..cell.weighting.clone()
        },
        seed: seeds.model_seed,
        ..plan.train.clone()
    };
    let history = train(
        &mut model,
        &prep.train,
        &cfg,
        &prep.external,
        &[
            (TEST_TYPICAL, &prep.test_typical),
            (TEST_ATYPICAL, &prep.test_atypical),
        ],
        None,
    )?;
    Ok(history
        .into_iter()
        .filter(|m| plan.report_epochs.contains(&m.epoch))
        .flat_map(|m| {
            let epoch = m.epoch;
            m.evals.into_iter().map(move |s| Record {
                cell_id: cell.id.clone(),
                repeat: seeds.repeat,
                epoch,
                split: s.split,
                accuracy: s.eval.macro_accuracy,
                overall: s.eval.overall,
            })
        })
        .collect())
}

/// Median and quartiles per (cell, epoch, split), in cell order.
pub fn aggregate(cells: &[Cell], records: &[Record]) -> Vec<Aggregate> {
    let order: BTreeMap<&str, usize> = cells
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id.as_str(), i))
        .collect();
    let mut groups: BTreeMap<(usize, usize, &str), Vec<f64>> = BTreeMap::new();
    for r in records {
        if let Some(&ci) = order.get(r.cell_id.as_str()) {
            groups
                .entry((ci, r.epoch, r.split.as_str()))
                .or_default()
                .push(r.accuracy);
        }
    }
    groups
        .into_iter()
        .filter_map(|((ci, epoch, split), xs)| {
            let (q1, median, q3) = stats::quartiles(&xs)?;
            Some(Aggregate {
                cell_id: cells[ci].id.clone(),
                epoch,
                split: split.to_string(),
                n: xs.len(),
                median,
                q1,
                q3,
                iqr: q3 - q1,
            })
        })
        .collect()
}

/// Runs the whole grid. Cell failures are recorded in the report rather than
/// aborting the sweep; an invalid plan is an error.
pub fn run_plan(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    plan.validate()?;
    let cells = plan.cells();
    let seeds: Vec<RepeatSeeds> = (0..plan.repeats).map(|r| plan.repeat_seeds(r)).collect();

    let prepared: Vec<Result<Prepared>> = seeds
        .par_iter()
        .map(|&s| prepare(plan, s, &cells))
        .collect();

    let jobs: Vec<(usize, usize)> = (0..seeds.len())
        .flat_map(|r| (0..cells.len()).map(move |c| (r, c)))
        .collect();
    let outcomes: Vec<Option<Result<Vec<Record>>>> = jobs
        .par_iter()
        .map(|&(r, c)| match &prepared[r] {
            Ok(prep) => Some(run_cell(plan, seeds[r], &cells[c], prep)),
            Err(_) => None,
        })
        .collect();

    let mut failures = Vec::new();
    let mut scorer_checks = Vec::new();
    for (r, p) in prepared.iter().enumerate() {
        match p {
            Ok(p) => scorer_checks.extend(p.check.clone()),
            Err(e) => failures.push(Failure {
                cell_id: None,
                repeat: r,
                message: e.to_string(),
            }),
        }
    }
    let mut records = Vec::new();
    for (&(r, c), out) in jobs.iter().zip(outcomes) {
        match out {
            Some(Ok(recs)) => records.extend(recs),
            Some(Err(e)) => failures.push(Failure {
                cell_id: Some(cells[c].id.clone()),
                repeat: r,
                message: e.to_string(),
            }),
            None => {}
        }
    }
    let aggregates = aggregate(&cells, &records);
    Ok(ExperimentReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        plan: plan.clone(),
        cells,
        seeds,
        scorer_checks,
        records,
        aggregates,
        failures,
    })
}

impl ExperimentReport {
    pub fn final_epoch(&self) -> usize {
        self.plan.train.epochs
    }

    pub fn aggregate_for(&self, cell_id: &str, epoch: usize, split: &str) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.cell_id == cell_id && a.epoch == epoch && a.split == split)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Long-form aggregates: one row per cell, epoch and split.
    pub fn aggregates_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "cell_id",
            "loss",
            "weighting",
            "epoch",
            "split",
            "n",
            "median",
            "q1",
            "q3",
            "iqr",
        ])?;
        for a in &self.aggregates {
            let cell = self.cells.iter().find(|c| c.id == a.cell_id);
            w.write_record([
                a.cell_id.clone(),
                cell.map(|c| c.loss.as_str().to_string())
                    .unwrap_or_default(),
                cell.map(|c| c.weighting_label()).unwrap_or_default(),
                a.epoch.to_string(),
                a.split.clone(),
                a.n.to_string(),
                a.median.to_string(),
                a.q1.to_string(),
                a.q3.to_string(),
                a.iqr.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// Rows are weightings; columns are loss x split.
    ByWeighting,
    /// Rows are losses; columns are weighting x split.
    ByLoss,
}

impl std::str::FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighting" | "by_weighting" => Ok(Grouping::ByWeighting),
            "loss" | "by_loss" => Ok(Grouping::ByLoss),
            other => Err(Error::Parameter(format!("unknown grouping {other:?}"))),
        }
    }
}

/// A rendered summary table of median macro accuracy at one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_text(&self) -> String {
        let ncol = self.header.len();
        let widths: Vec<usize> = (0..ncol)
            .map(|j| {
                std::iter::once(&self.header)
                    .chain(&self.rows)
                    .map(|r| r.get(j).map_or(0, |s| s.len()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let line = |out: &mut String, row: &[String]| {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (s, &w))| {
                    if j == 0 {
                        format!("{s:<w$}")
                    } else {
                        format!("{s:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        };
        line(&mut out, &self.header);
        let _ = writeln!(
            out,
            "{}",
            "-".repeat(widths.iter().sum::<usize>() + 2 * ncol.saturating_sub(1))
        );
        for r in &self.rows {
            line(&mut out, r);
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn split_short(split: &str) -> &str {
    match split {
        TEST_TYPICAL => "typical",
        TEST_ATYPICAL => "atypical",
        s => s,
    }
}

/// Median macro accuracy in percent. Each row carries an (atypical, typical)
/// column pair per reporting epoch.
pub fn render_table(report: &ExperimentReport, grouping: Grouping) -> Table {
    let mut losses: Vec<LossKind> = Vec::new();
    let mut weightings: Vec<String> = Vec::new();
    for c in &report.cells {
        if !losses.contains(&c.loss) {
            losses.push(c.loss);
        }
        let l = c.weighting_label();
        if !weightings.contains(&l) {
            weightings.push(l);
        }
    }
    let columns: Vec<(usize, &str)> = report
        .plan
        .report_epochs
        .iter()
        .flat_map(|&e| [(e, TEST_ATYPICAL), (e, TEST_TYPICAL)])
        .collect();
    let value = |loss: LossKind, wl: &str, epoch: usize, split: &str| -> String {
        report
            .cells
            .iter()
            .find(|c| c.loss == loss && c.weighting_label() == wl)
            .and_then(|c| report.aggregate_for(&c.id, epoch, split))
            .map(|a| format!("{:.2}", 100.0 * a.median))
            .unwrap_or_else(|| "-".into())
    };
    let col_name = |prefix: &str, e: usize, s: &str| format!("{prefix}{} e{e}", split_short(s));
    match grouping {
        Grouping::ByWeighting => {
            let mut header = vec!["weighting".to_string()];
            for l in &losses {
                let prefix = if losses.len() > 1 {
                    format!("{} ", l.as_str())
                } else {
                    String::new()
                };
                header.extend(columns.iter().map(|&(e, s)| col_name(&prefix, e, s)));
            }
            let rows = weightings
                .iter()
                .map(|wl| {
                    let mut row = vec![wl.clone()];
                    for &l in &losses {
                        row.extend(columns.iter().map(|&(e, s)| value(l, wl, e, s)));
                    }
                    row
                })
                .collect();
            Table { header, rows }
        }
        Grouping::ByLoss => {
            let mut header = vec!["loss".to_string()];
            for wl in &weightings {
                let prefix = format!("{wl} ");
                header.extend(columns.iter().map(|&(e, s)| col_name(&prefix, e, s)));
            }
            let rows = losses
                .iter()
                .map(|&l| {
                    let mut row = vec![l.as_str().to_string()];
                    for wl in &weightings {
                        row.extend(columns.iter().map(|&(e, s)| value(l, wl, e, s)));
                    }
                    row
                })
                .collect();
            Table { header, rows }
        }
    }
}

/// Hinge against softmax for one weighting and split at one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossComparison {
    pub weighting: String,
    pub split: String,
    pub ms_hinge: f64,
    pub softmax_log: f64,
    /// `ms_hinge - softmax_log` in median macro accuracy.
    pub difference: f64,
}

pub fn compare_losses(report: &ExperimentReport, epoch: usize) -> Vec<LossComparison> {
    let mut out = Vec::new();
    for c in report.cells.iter().filter(|c| c.loss == LossKind::MsHinge) {
        let label = c.weighting_label();
        let Some(other) = report
            .cells
            .iter()
            .find(|o| o.loss == LossKind::SoftmaxLog && o.weighting_label() == label)
        else {
            continue;
        };
        for split in [TEST_TYPICAL, TEST_ATYPICAL] {
            if let (Some(a), Some(b)) = (
                report.aggregate_for(&c.id, epoch, split),
                report.aggregate_for(&other.id, epoch, split),
            ) {
                out.push(LossComparison {
                    weighting: label.clone(),
                    split: split.to_string(),
                    ms_hinge: a.median,
                    softmax_log: b.median,
                    difference: a.median - b.median,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentPlan {
        ExperimentPlan {
            data: CloudSpec {
                num_classes: 3,
                dim: 4,
                train_per_class: 30,
                test_typical_per_class: 10,
                test_atypical_per_class: 10,
                ..CloudSpec::default()
            },
            train: TrainConfig {
                epochs: 2,
                ..TrainConfig::default()
            },
            report_epochs: vec![1, 2],
            losses: vec![LossKind::MsHinge, LossKind::SoftmaxLog],
            weightings: vec![w(WeightVariant::Uniform), w(WeightVariant::ClsAtypicality)],
            repeats: 2,
            ..ExperimentPlan::default()
        }
    }

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            preset(name).unwrap().validate().unwrap();
        }
        assert!(preset("nope").is_none());
        assert_eq!(preset("default").unwrap().cells().len(), 16);
        assert_eq!(preset("depth").unwrap().cells().len(), 12);
    }

    #[test]
    fn bad_plans() {
        assert!(ExperimentPlan {
            repeats: 0,
            ..tiny()
        }
        .validate()
        .is_err());
        assert!(ExperimentPlan {
            trainable_top: vec![3],
            ..tiny()
        }
        .validate()
        .is_err());
        let dup = ExperimentPlan {
            weightings: vec![w(WeightVariant::Uniform), w(WeightVariant::Uniform)],
            ..tiny()
        };
        assert!(dup.validate().is_err());
    }

    #[test]
    fn run_and_render() {
        let report = run_plan(&tiny()).unwrap();
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        assert_eq!(report.records.len(), 2 * 4 * 2 * 2);
        assert_eq!(report.aggregates.len(), 4 * 2 * 2);
        assert_eq!(report.scorer_checks.len(), 2);
        let t = render_table(&report, Grouping::ByWeighting);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.header.len(), 9);
        assert_eq!(t.header[1], "ms_hinge atypical e1");
        assert!(t.to_text().contains("cls_atypicality"));
        let t = render_table(&report, Grouping::ByLoss);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(compare_losses(&report, 2).len(), 4);
        let again = run_plan(&tiny()).unwrap();
        assert_eq!(report.to_json().unwrap(), again.to_json().unwrap());
        let back: ExperimentReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn only_reporting_epochs_are_recorded() {
        let plan = ExperimentPlan {
            losses: vec![LossKind::MsHinge],
            weightings: vec![w(WeightVariant::Uniform)],
            repeats: 1,
            report_epochs: vec![2],
            ..tiny()
        };
        let report = run_plan(&plan).unwrap();
        assert_eq!(report.records.len(), 2);
        assert!(report.records.iter().all(|r| r.epoch == 2));
        assert!(ExperimentPlan {
            report_epochs: vec![3],
            ..tiny()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn divergence_is_recorded_not_fatal() {
        let plan = ExperimentPlan {
            train: TrainConfig {
                epochs: 2,
                learning_rate: f64::MAX,
                ..TrainConfig::default()
            },
            ..tiny()
        };
        let report = run_plan(&plan).unwrap();
        assert!(!report.failures.is_empty());
    }
}
