use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::NaiveDate;
use log::{info, warn};
use ndarray::Array2;
use serde::Serialize;
use webtraffic::baselines::{benchmark_forecast, five_medians, horizon_dates, median_combine};
use webtraffic::data::{load_answer_key, load_wide_csv};
use webtraffic::ensemble::{average_lstm_pair, final_forecast, EnsembleInputs};
use webtraffic::metrics::{score, Metric};
use webtraffic::neuralnet::{holdout_tail, train, Checkpoint, TrainConfig, TrainHistory};
use webtraffic::transform::{fill_missing, log1p_invert, prepare, Prepared, ScalerParams, SplitLayout};
use webtraffic::{Forecast, SeriesTable};

use crate::config::{usage, Method, RunConfig};
use crate::plot;

pub const SCALER_FILE: &str = "scaler.json";
pub const SPLIT_FILE: &str = "split.json";
pub const CHECKPOINT_TRAIN: &str = "checkpoint_train.bin";
pub const CHECKPOINT_VALIDATE: &str = "checkpoint_validate.bin";
pub const HISTORY_TRAIN: &str = "history_train.csv";
pub const HISTORY_VALIDATE: &str = "history_validate.csv";
pub const PROVENANCE_FILE: &str = "provenance.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const SCORES_PER_PAGE_FILE: &str = "scores_per_page.csv";

/// Share of the validation-window rows held out while fitting the second
/// model.
pub const HOLDOUT_FRACTION: f64 = 0.05;

/// Forecast labels in the order `predict` writes them. Each lands in
/// `forecast_<label>.csv`.
pub const FORECAST_LABELS: [&str; 10] = [
    "benchmark",
    "median_a",
    "median_b",
    "median_c",
    "median_d",
    "median_e",
    "medians",
    "lstm_train",
    "lstm_validate",
    "lstm",
];
pub const FINAL_LABEL: &str = "final";

pub fn forecast_file(label: &str) -> String {
    format!("forecast_{label}.csv")
}

fn load_input(cfg: &RunConfig) -> Result<SeriesTable> {
    let path = cfg.input()?;
    let table = load_wide_csv(path).with_context(|| format!("loading {}", path.display()))?;
    info!(
        "loaded {} pages x {} days from {}",
        table.n_pages(),
        table.n_dates(),
        path.display()
    );
    Ok(table)
}

/// The answer key aligned to `table`'s pages, missing cells counted as 0.
fn load_truth(cfg: &RunConfig, table: &SeriesTable) -> Result<Option<SeriesTable>> {
    let Some(path) = &cfg.answer_key else {
        return Ok(None);
    };
    let key = load_answer_key(path, table, cfg.horizon)
        .with_context(|| format!("loading answer key {}", path.display()))?;
    Ok(Some(fill_missing(&key)))
}

fn prepare_input(cfg: &RunConfig, table: &SeriesTable) -> Result<Prepared> {
    Ok(prepare(table, cfg.horizon, cfg.scaler_range)?)
}

fn write_sidecars(cfg: &RunConfig, prepared: &Prepared) -> Result<()> {
    cfg.ensure_out_dir()?;
    prepared.scaler.write_json(cfg.out(SCALER_FILE))?;
    prepared.split.layout.write_json(cfg.out(SPLIT_FILE))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PrepareReport {
    pub pages: usize,
    pub missing: usize,
    pub layout: SplitLayout,
}

/// Writes `scaler.json` and `split.json`.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<PrepareReport> {
    let table = load_input(cfg)?;
    let prepared = prepare_input(cfg, &table)?;
    write_sidecars(cfg, &prepared)?;
    let layout = prepared.split.layout.clone();
    let missing = table.missing_per_page().iter().sum();
    info!(
        "X width {}, y width {}, {} missing cells zero-filled",
        layout.x_width(),
        layout.horizon,
        missing
    );
    Ok(PrepareReport {
        pages: table.n_pages(),
        missing,
        layout,
    })
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub train: TrainHistory,
    pub validate: TrainHistory,
}

/// Trains the two LSTMs: one on `X_train -> y_train` validated on the
/// validation window, one on the validation window itself with its last
/// rows held out.
pub fn cmd_train(cfg: &RunConfig) -> Result<Option<TrainReport>> {
    if !cfg.needs_lstm() {
        warn!("no LSTM method enabled; nothing to train");
        return Ok(None);
    }
    let table = load_input(cfg)?;
    let prepared = prepare_input(cfg, &table)?;
    write_sidecars(cfg, &prepared)?;
    let s = &prepared.split;

    let config = cfg.train_config();
    info!("training model on the training window ({} rows)", s.x_train.nrows());
    let first = train(&s.x_train, &s.y_train, &s.x_validate, &s.y_validate, &config)?;

    let (x_fit, y_fit, x_hold, y_hold) = holdout_tail(&s.x_validate, &s.y_validate, HOLDOUT_FRACTION)?;
    let second_config = TrainConfig {
        seed: config.seed.wrapping_add(1),
        ..config
    };
    info!(
        "training model on the validation window ({} rows, {} held out)",
        x_fit.nrows(),
        x_hold.nrows()
    );
    let second = train(&x_fit, &y_fit, &x_hold, &y_hold, &second_config)?;

    for (outcome, ck, hist) in [
        (&first, CHECKPOINT_TRAIN, HISTORY_TRAIN),
        (&second, CHECKPOINT_VALIDATE, HISTORY_VALIDATE),
    ] {
        let mut checkpoint = outcome.checkpoint.clone();
        checkpoint.scaler_sidecar = Some(SCALER_FILE.into());
        checkpoint.save(cfg.out(ck))?;
        fs::write(cfg.out(hist), outcome.history.to_csv())
            .with_context(|| format!("writing {hist}"))?;
        info!("{ck}: best epoch {}, val MAE {:.6}", checkpoint.epoch, checkpoint.val_loss);
    }
    Ok(Some(TrainReport {
        train: first.history,
        validate: second.history,
    }))
}

fn load_checkpoint(cfg: &RunConfig, name: &str, features: usize) -> Result<Checkpoint> {
    let path = cfg.out(name);
    if !path.exists() {
        return Err(usage(format!(
            "{} not found; run `train` first",
            path.display()
        )));
    }
    let ck = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    if ck.params.features() != features || ck.params.horizon() != cfg.horizon {
        return Err(usage(format!(
            "{name} expects {} inputs and horizon {}, the data gives {features} and {}",
            ck.params.features(),
            ck.params.horizon(),
            cfg.horizon
        )));
    }
    Ok(ck)
}

#[derive(Debug, Clone, Serialize)]
pub struct ForecastEntry {
    pub label: String,
    pub file: String,
    pub smape: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct Provenance<'a> {
    timestamp: String,
    input: &'a Path,
    answer_key: Option<&'a Path>,
    horizon: usize,
    forecast_start: NaiveDate,
    forecast_end: NaiveDate,
    methods: &'a [Method],
    averaging: webtraffic::ensemble::AveragingSpace,
    calendar_window: Option<(NaiveDate, NaiveDate)>,
    train: TrainConfig,
    forecasts: &'a [ForecastEntry],
    ensemble_candidates: Vec<&'a ForecastEntry>,
}

#[derive(Debug, Clone)]
pub struct PredictReport {
    pub forecasts: Vec<ForecastEntry>,
}

/// Writes every enabled forecast plus `provenance.json`.
pub fn cmd_predict(cfg: &RunConfig) -> Result<PredictReport> {
    let table = load_input(cfg)?;
    let truth = load_truth(cfg, &table)?;
    let filled = fill_missing(&table);
    let h = cfg.horizon;
    let dates = horizon_dates(&table, h)?;
    let pages: Vec<String> = table.pages().iter().map(|p| p.raw.clone()).collect();
    cfg.ensure_out_dir()?;

    let mut out: Vec<Forecast> = Vec::new();
    if cfg.wants(Method::Benchmark) {
        out.push(benchmark_forecast(&filled, h)?);
    }
    let five = if cfg.wants(Method::Medians) || cfg.wants(Method::Ensemble) {
        Some(five_medians(&filled, h, cfg.medians.calendar())?)
    } else {
        None
    };
    if let (Some(five), true) = (&five, cfg.wants(Method::Medians)) {
        out.extend(five.iter().cloned());
        let refs: Vec<&Forecast> = five.iter().collect();
        out.push(median_combine(&refs)?.with_label("medians"));
    }
    if cfg.needs_lstm() {
        let prepared = prepare_input(cfg, &table)?;
        let sidecar = cfg.out(SCALER_FILE);
        if sidecar.exists() && ScalerParams::read_json(&sidecar)? != prepared.scaler {
            return Err(usage(format!(
                "{} does not match the scaler fitted on {}; rerun `train`",
                sidecar.display(),
                cfg.input()?.display()
            )));
        }
        let x_test = &prepared.split.x_test;
        let first = load_checkpoint(cfg, CHECKPOINT_TRAIN, x_test.ncols())?.predict(x_test)?;
        let second = load_checkpoint(cfg, CHECKPOINT_VALIDATE, x_test.ncols())?.predict(x_test)?;
        let views = |v: Array2<f64>, label: &str| Forecast::new(pages.clone(), dates.clone(), v, label);
        let lstm = views(average_lstm_pair(&first, &second, cfg.averaging)?, "lstm")?;
        if cfg.wants(Method::Lstm) {
            out.push(views(log1p_invert(&first), "lstm_train")?);
            out.push(views(log1p_invert(&second), "lstm_validate")?);
            out.push(lstm.clone());
        }
        if let (Some(five), true) = (five, cfg.wants(Method::Ensemble)) {
            out.push(final_forecast(&EnsembleInputs::new(lstm, five)?)?);
        }
    }

    let mut entries = Vec::new();
    for f in &out {
        let file = forecast_file(&f.label);
        f.write_csv(cfg.out(&file))?;
        let smape = match &truth {
            Some(t) => Some(score(Metric::Smape, t.values().view(), f.values().view(), false)?.value),
            None => None,
        };
        match smape {
            Some(s) => info!("{file}: SMAPE {s:.4}"),
            None => info!("wrote {file}"),
        }
        entries.push(ForecastEntry {
            label: f.label.clone(),
            file,
            smape,
        });
    }

    let candidates = if cfg.wants(Method::Ensemble) {
        let wanted = ["lstm", "median_a", "median_b", "median_c", "median_d", "median_e"];
        entries.iter().filter(|e| wanted.contains(&e.label.as_str())).collect()
    } else {
        Vec::new()
    };
    let provenance = Provenance {
        timestamp: chrono::Utc::now().to_rfc3339(),
        input: cfg.input()?,
        answer_key: cfg.answer_key.as_deref(),
        horizon: h,
        forecast_start: dates[0],
        forecast_end: dates[h - 1],
        methods: &cfg.methods,
        averaging: cfg.averaging,
        calendar_window: cfg
            .medians
            .calendar()
            .or_else(|| webtraffic::baselines::year_before_window(&dates)),
        train: cfg.train_config(),
        forecasts: &entries,
        ensemble_candidates: candidates,
    };
    let mut text = serde_json::to_string_pretty(&provenance)?;
    text.push('\n');
    fs::write(cfg.out(PROVENANCE_FILE), text).context("writing provenance")?;
    Ok(PredictReport { forecasts: entries })
}

#[derive(Debug, Clone, Default)]
pub struct EvaluateOptions {
    pub per_page: bool,
    pub mae: bool,
    /// Extra forecast files scored against the answer key, named by file
    /// stem.
    pub forecasts: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub method: String,
    pub target: String,
    pub metric: Metric,
    pub value: f64,
    pub n: usize,
    pub pages: Vec<String>,
    pub per_page: Option<Vec<f64>>,
}

/// Reorders `values` (rows named by `from`) into the order of `to`.
pub(crate) fn reorder_rows(from: &[String], values: &Array2<f64>, to: &[String]) -> Result<Array2<f64>> {
    if from.len() != to.len() {
        return Err(usage(format!("expected {} pages, found {}", to.len(), from.len())));
    }
    if from == to {
        return Ok(values.clone());
    }
    let index: HashMap<&str, usize> = from.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    let mut out = Array2::zeros((to.len(), values.ncols()));
    for (row, page) in to.iter().enumerate() {
        let src = index
            .get(page.as_str())
            .ok_or_else(|| usage(format!("page {page:?} is missing")))?;
        out.row_mut(row).assign(&values.row(*src));
    }
    Ok(out)
}

fn score_rows(
    method: &str,
    target: &str,
    truth: &Array2<f64>,
    pred: &Array2<f64>,
    pages: &[String],
    opts: &EvaluateOptions,
) -> Result<Vec<ScoreRow>> {
    let mut metrics = vec![Metric::Smape];
    if opts.mae {
        metrics.push(Metric::Mae);
    }
    metrics
        .into_iter()
        .map(|metric| {
            let r = score(metric, truth.view(), pred.view(), opts.per_page)?;
            Ok(ScoreRow {
                method: method.to_owned(),
                target: target.to_owned(),
                metric,
                value: r.value,
                n: r.n,
                pages: pages.to_vec(),
                per_page: r.per_page,
            })
        })
        .collect()
}

/// Scores the benchmark on the training and validation targets and every
/// forecast file against the answer key. Writes `scores.csv` (and
/// `scores_per_page.csv` on request).
pub fn cmd_evaluate(cfg: &RunConfig, opts: &EvaluateOptions) -> Result<Vec<ScoreRow>> {
    let table = load_input(cfg)?;
    let filled = fill_missing(&table);
    let pages: Vec<String> = table.pages().iter().map(|p| p.raw.clone()).collect();
    let (t, h) = (table.n_dates(), cfg.horizon);
    let [_, y_train, _, y_validate, _] = SplitLayout::ranges(t, h)?;
    let mut rows = Vec::new();

    if cfg.wants(Method::Benchmark) {
        for (target, range) in [("y_train", y_train), ("y_validate", y_validate)] {
            let history = filled.slice_columns(0..range.start)?;
            let pred = benchmark_forecast(&history, h)?;
            let truth = filled.slice_columns(range)?;
            rows.extend(score_rows("benchmark", target, truth.values(), pred.values(), &pages, opts)?);
        }
    }

    let truth = load_truth(cfg, &table)?;
    let mut files: Vec<(String, PathBuf)> = FORECAST_LABELS
        .iter()
        .chain(std::iter::once(&FINAL_LABEL))
        .map(|l| (l.to_string(), cfg.out(&forecast_file(l))))
        .filter(|(_, p)| p.exists())
        .collect();
    for p in &opts.forecasts {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("forecast");
        files.push((stem.trim_start_matches("forecast_").to_owned(), p.clone()));
    }
    match &truth {
        None if !opts.forecasts.is_empty() => {
            return Err(usage("scoring forecast files needs an answer key"));
        }
        None => warn!("no answer key configured; skipping y_test"),
        Some(truth) => {
            for (label, path) in files {
                let f = Forecast::read_csv(&path, label.clone())
                    .with_context(|| format!("loading {}", path.display()))?;
                if f.dates() != truth.dates() {
                    return Err(usage(format!(
                        "{} covers {:?}..{:?}, the answer key {:?}..{:?}",
                        path.display(),
                        f.dates().first(),
                        f.dates().last(),
                        truth.dates().first(),
                        truth.dates().last()
                    )));
                }
                let pred = reorder_rows(f.pages(), f.values(), &pages)
                    .with_context(|| format!("aligning {}", path.display()))?;
                rows.extend(score_rows(&label, "y_test", truth.values(), &pred, &pages, opts)?);
            }
        }
    }

    cfg.ensure_out_dir()?;
    write_scores(&cfg.out(SCORES_FILE), &rows)?;
    if opts.per_page {
        write_per_page(&cfg.out(SCORES_PER_PAGE_FILE), &rows)?;
    }
    Ok(rows)
}

fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["method", "target", "metric", "value", "n"])?;
    for r in rows {
        w.write_record([&r.method, &r.target, r.metric.name(), &r.value.to_string(), &r.n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per page plus an `ALL` row holding the aggregate.
fn write_per_page(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["method", "target", "metric", "page", "value"])?;
    for r in rows {
        let metric = r.metric.name();
        for (page, v) in r.pages.iter().zip(r.per_page.iter().flatten()) {
            w.write_record([&r.method, &r.target, metric, page, &v.to_string()])?;
        }
        w.write_record([&r.method, &r.target, metric, "ALL", &r.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text score table with one line per row.
pub fn format_scores(rows: &[ScoreRow]) -> String {
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let mut out = format!("{:<width$}  {:<10}  {:<6}  {:>10}  {:>10}\n", "method", "target", "metric", "value", "n");
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:<10}  {:<6}  {:>10.4}  {:>10}\n",
            r.method,
            r.target,
            r.metric.name(),
            r.value,
            r.n
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct PlotReport {
    pub pages: Vec<String>,
    pub files: Vec<PathBuf>,
}

/// Series overlaid in plots, in drawing order after the truth.
pub const PLOT_SERIES: [&str; 4] = ["benchmark", "medians", "lstm", FINAL_LABEL];

/// Writes a long-format CSV and an SVG chart for each page matching
/// `selector`: an exact page key, or else every key containing it.
pub fn cmd_plot(cfg: &RunConfig, selector: &str, limit: usize) -> Result<PlotReport> {
    let mut series: Vec<Forecast> = Vec::new();
    for label in PLOT_SERIES {
        let path = cfg.out(&forecast_file(label));
        if path.exists() {
            series.push(Forecast::read_csv(&path, label).with_context(|| format!("loading {}", path.display()))?);
        }
    }
    let Some(reference) = series.first() else {
        return Err(usage(format!(
            "no forecasts found in {}; run `predict` first",
            cfg.out_dir.display()
        )));
    };
    let pages = reference.pages().to_vec();
    let dates = reference.dates().to_vec();
    for f in &series[1..] {
        if f.dates() != &dates[..] {
            return Err(usage(format!("forecast_{}.csv covers different dates", f.label)));
        }
    }

    let truth = match &cfg.answer_key {
        Some(path) => {
            let key = load_wide_csv(path).with_context(|| format!("loading {}", path.display()))?;
            if key.dates() != &dates[..] {
                return Err(usage("answer key dates differ from the forecast horizon"));
            }
            let names: Vec<String> = key.pages().iter().map(|p| p.raw.clone()).collect();
            let values = fill_missing(&key).values().clone();
            Some(reorder_rows(&names, &values, &pages)?)
        }
        None => None,
    };

    let selected = plot::select_pages(&pages, selector, limit)?;
    let mut lookup: Vec<(String, Array2<f64>)> = Vec::new();
    if let Some(t) = truth {
        lookup.push(("truth".into(), t));
    }
    for f in &series {
        lookup.push((f.label.clone(), reorder_rows(f.pages(), f.values(), &pages)?));
    }

    cfg.ensure_out_dir()?;
    let mut files = Vec::new();
    for &row in &selected {
        let page = &pages[row];
        let lines: Vec<(String, Vec<f64>)> = lookup
            .iter()
            .map(|(name, values)| (name.clone(), values.row(row).to_vec()))
            .collect();
        let stem = format!("plot_{}", plot::file_stem(page));
        let csv_path = cfg.out(&format!("{stem}.csv"));
        plot::write_long_csv(&csv_path, &dates, &lines)?;
        let svg_path = cfg.out(&format!("{stem}.svg"));
        fs::write(&svg_path, plot::render_svg(page, &dates, &lines))
            .with_context(|| format!("writing {}", svg_path.display()))?;
        files.push(csv_path);
        files.push(svg_path);
    }
    Ok(PlotReport {
        pages: selected.iter().map(|&r| pages[r].clone()).collect(),
        files,
    })
}
