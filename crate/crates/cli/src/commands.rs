//! The five subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use gapfill::baselines::Strategy;
use gapfill::datasets::{load_novartis, missingness_summary};
use gapfill::imputer::{loss_curve_csv, TrainOptions};
use gapfill::metrics::{reports_to_csv, AggregateTable};
use gapfill::signal::io::save_frames;
use serde::Serialize;

use crate::config::{DataSection, DownstreamStrategy, ExperimentConfig};
use crate::data::{load_frames, load_windows};
use crate::downstream::{prepare_classifier, prepare_window_imputer, resolved_classifier_config, run_downstream};
use crate::impute_bench::{prepare_imputer, resolved_imputer_config, run_impute_bench, standardize_data};
use crate::output::{append_ledger, artifact_version, to_csv, to_json, LedgerEntry, OutputDir};
use crate::BenchError;

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub out: Option<PathBuf>,
    pub dry_run: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Imputer,
    Classifier,
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub out_dir: Option<PathBuf>,
    /// Per-run failures; non-zero means a partial result.
    pub failures: usize,
    pub message: String,
}

/// Reads, overrides and validates a config; nothing is written.
pub fn resolve(path: &Path, o: &Overrides) -> Result<(ExperimentConfig, String), BenchError> {
    let (mut cfg, raw) = ExperimentConfig::load(path)?;
    if let Some(s) = o.seed {
        cfg.run.master_seed = s;
    }
    if let Some(r) = o.runs {
        cfg.run.runs = r;
    }
    if let Some(out) = &o.out {
        cfg.run.out = Some(out.clone());
    }
    cfg.validate()?;
    Ok((cfg, raw))
}

fn out_root(cfg: &ExperimentConfig) -> Result<PathBuf, BenchError> {
    cfg.run
        .out
        .clone()
        .ok_or_else(|| BenchError::Config("no output directory: pass --out or set run.out".into()))
}

fn train_options(cfg: &ExperimentConfig, out: Option<&Path>) -> TrainOptions {
    TrainOptions {
        diagnostic_dir: out.map(Path::to_path_buf),
        log_every: cfg.training.log_every,
    }
}

fn write_config(out: &mut OutputDir, cfg: &ExperimentConfig, raw: &str) -> Result<(), BenchError> {
    out.write("config.toml", raw)?;
    out.write("effective_config.json", to_json(cfg)?)?;
    Ok(())
}

fn finish(command: &str, cfg: &ExperimentConfig, out: &OutputDir, started: Instant) -> Result<(), BenchError> {
    let wall = started.elapsed().as_secs_f64();
    let outputs = out.names();
    let entries: Vec<LedgerEntry> = cfg
        .seeds()
        .into_iter()
        .map(|seed| LedgerEntry {
            command: command.into(),
            config_hash: cfg.hash(),
            master_seed: cfg.run.master_seed,
            seed,
            version: artifact_version(),
            wall_time_s: wall,
            outputs: outputs.clone(),
        })
        .collect();
    append_ledger(&out.root, &entries)
}

fn epoch_csv(losses: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{},{l:.17e}\n", i + 1));
    }
    s
}

pub fn impute_bench(cfg: &ExperimentConfig, raw: &str, dry_run: bool) -> Result<Outcome, BenchError> {
    let started = Instant::now();
    let data = load_frames(&cfg.data)?;
    let std = standardize_data(&data)?;
    let wants_transformer = cfg.bench.strategies.contains(&Strategy::Transformer);
    if dry_run {
        let icfg = resolved_imputer_config(cfg, std.stats.stats.len());
        icfg.validate()?;
        return Ok(Outcome {
            message: format!(
                "config ok ({}): {} runs, {} strategies, {} test frames, imputer parameters {}",
                cfg.hash(),
                cfg.run.runs,
                cfg.bench.strategies.len(),
                std.test.len(),
                icfg.analytic_parameter_count()
            ),
            ..Outcome::default()
        });
    }
    let root = out_root(cfg)?;
    let mut imputer = None;
    let mut curve = Vec::new();
    if wants_transformer {
        let (m, c) = prepare_imputer(cfg, &std, &train_options(cfg, Some(&root)))?;
        imputer = Some(m);
        curve = c;
    }
    let result = run_impute_bench(cfg, &std, imputer.as_mut())?;

    let mut out = OutputDir::create(&root)?;
    write_config(&mut out, cfg, raw)?;
    if let Some(m) = &imputer {
        if !curve.is_empty() {
            m.save(&out.path("imputer.ckpt"))?;
            out.written.push(out.path("imputer.ckpt"));
            out.write("loss_curve.csv", loss_curve_csv(&curve))?;
        }
    }
    out.write("runs_by_source.csv", reports_to_csv(&result.by_source_runs)?)?;
    out.write("runs_by_length.csv", reports_to_csv(&result.by_length_runs)?)?;
    out.write("table_by_source.csv", result.by_source.to_csv()?)?;
    out.write("table_by_source.json", result.by_source.to_json()?)?;
    out.write("table_by_length.csv", result.by_length.to_csv()?)?;
    out.write("table_by_length.json", result.by_length.to_json()?)?;
    out.write("failures.json", to_json(&result.failures)?)?;
    finish("impute-bench", cfg, &out, started)?;
    Ok(Outcome {
        out_dir: Some(root),
        failures: result.failures.len(),
        message: format!(
            "{} runs over {} strategies; {} failures",
            result.seeds.len(),
            cfg.bench.strategies.len(),
            result.failures.len()
        ),
    })
}

pub fn downstream(cfg: &ExperimentConfig, raw: &str, dry_run: bool) -> Result<Outcome, BenchError> {
    let started = Instant::now();
    let data = load_windows(&cfg.data)?;
    let ccfg = resolved_classifier_config(cfg, &data);
    ccfg.validate()?;
    let wants_transformer = cfg
        .downstream
        .strategies
        .contains(&DownstreamStrategy::Impute(Strategy::Transformer));
    if dry_run {
        return Ok(Outcome {
            message: format!(
                "config ok ({}): {} train / {} test windows, classifier parameters {}, {} grid rows",
                cfg.hash(),
                data.train.len(),
                data.test.len(),
                ccfg.analytic_parameter_count(),
                cfg.downstream.rates.len() * cfg.downstream.strategies.len() * cfg.run.runs
            ),
            ..Outcome::default()
        });
    }
    let root = out_root(cfg)?;
    let (classifier, folds) = prepare_classifier(cfg, &data)?;
    let imputer = if wants_transformer {
        Some(prepare_window_imputer(cfg, &data, &train_options(cfg, Some(&root)))?)
    } else {
        None
    };
    let result = run_downstream(cfg, &data, &classifier, imputer.as_ref().map(|(m, _)| m))?;

    let mut out = OutputDir::create(&root)?;
    write_config(&mut out, cfg, raw)?;
    if !folds.is_empty() {
        classifier.save(&out.path("classifier.ckpt"))?;
        out.written.push(out.path("classifier.ckpt"));
        out.write("folds.json", to_json(&folds)?)?;
    }
    if let Some((m, curve)) = &imputer {
        if !curve.is_empty() {
            m.save(&out.path("imputer.ckpt"))?;
            out.written.push(out.path("imputer.ckpt"));
            out.write("imputer_loss_curve.csv", loss_curve_csv(curve))?;
        }
    }
    out.write("downstream.csv", to_csv(&result.rows)?)?;
    out.write("downstream_summary.csv", to_csv(&result.summary)?)?;
    out.write("failures.json", to_json(&result.failures)?)?;
    finish("downstream", cfg, &out, started)?;
    Ok(Outcome {
        out_dir: Some(root),
        failures: result.failures.len(),
        message: format!("{} accuracy rows; {} failures", result.rows.len(), result.failures.len()),
    })
}

pub fn train(model: ModelKind, cfg: &ExperimentConfig, raw: &str, dry_run: bool) -> Result<Outcome, BenchError> {
    let started = Instant::now();
    match model {
        ModelKind::Imputer => {
            let (n_channels, window_len) = if cfg.data.is_windowed() {
                let d = load_windows(&cfg.data)?;
                (d.channels.len(), Some(d.window_len()))
            } else {
                (load_frames(&cfg.data)?.train.first().map_or(0, |f| f.n_channels()), None)
            };
            let mut icfg = resolved_imputer_config(cfg, n_channels);
            if let Some(w) = window_len {
                icfg.window_len = w;
            }
            icfg.validate()?;
            if dry_run {
                return Ok(Outcome {
                    message: format!("imputer parameters: {}", icfg.analytic_parameter_count()),
                    ..Outcome::default()
                });
            }
            let root = out_root(cfg)?;
            let mut train_cfg = cfg.clone();
            train_cfg.training.imputer_checkpoint = None;
            let opts = train_options(cfg, Some(&root));
            let (model, curve) = if cfg.data.is_windowed() {
                prepare_window_imputer(&train_cfg, &load_windows(&cfg.data)?, &opts)?
            } else {
                prepare_imputer(&train_cfg, &standardize_data(&load_frames(&cfg.data)?)?, &opts)?
            };
            let mut out = OutputDir::create(&root)?;
            write_config(&mut out, cfg, raw)?;
            model.save(&out.path("imputer.ckpt"))?;
            out.written.push(out.path("imputer.ckpt"));
            out.write("loss_curve.csv", loss_curve_csv(&curve))?;
            finish("train imputer", cfg, &out, started)?;
            Ok(Outcome {
                out_dir: Some(root),
                failures: 0,
                message: format!(
                    "imputer trained for {} epochs, final loss {:.5}",
                    curve.len(),
                    curve.last().map_or(f64::NAN, |e| e.train_loss)
                ),
            })
        }
        ModelKind::Classifier => {
            let data = load_windows(&cfg.data)?;
            let ccfg = resolved_classifier_config(cfg, &data);
            ccfg.validate()?;
            if dry_run {
                return Ok(Outcome {
                    message: format!("classifier parameters: {}", ccfg.analytic_parameter_count()),
                    ..Outcome::default()
                });
            }
            let root = out_root(cfg)?;
            let mut train_cfg = cfg.clone();
            train_cfg.training.classifier_checkpoint = None;
            let (model, folds) = prepare_classifier(&train_cfg, &data)?;
            let selected = folds
                .iter()
                .max_by(|a, b| a.accuracy.total_cmp(&b.accuracy))
                .map(|f| f.losses.clone())
                .unwrap_or_default();
            let mut out = OutputDir::create(&root)?;
            write_config(&mut out, cfg, raw)?;
            model.save(&out.path("classifier.ckpt"))?;
            out.written.push(out.path("classifier.ckpt"));
            out.write("loss_curve.csv", epoch_csv(&selected))?;
            out.write("folds.json", to_json(&folds)?)?;
            finish("train classifier", cfg, &out, started)?;
            Ok(Outcome {
                out_dir: Some(root),
                failures: 0,
                message: format!("classifier selected over {} folds", folds.len()),
            })
        }
    }
}

#[derive(Serialize)]
struct WindowRecord<'a> {
    subject_id: &'a str,
    label: usize,
    offset: usize,
    n_channels: usize,
    values: &'a [f64],
}

/// Writes the canonical cache: frames (CSV + sidecar) or windows (JSONL).
pub fn preprocess(cfg: &ExperimentConfig, raw: &str, dry_run: bool) -> Result<Outcome, BenchError> {
    let started = Instant::now();
    let root = out_root(cfg)?;
    if cfg.data.is_windowed() {
        let data = load_windows(&cfg.data)?;
        if dry_run {
            return Ok(Outcome {
                message: format!("{} train / {} test windows", data.train.len(), data.test.len()),
                ..Outcome::default()
            });
        }
        let mut out = OutputDir::create(&root)?;
        write_config(&mut out, cfg, raw)?;
        for (name, windows) in [("windows_train.jsonl", &data.train), ("windows_test.jsonl", &data.test)] {
            let mut text = String::new();
            for w in windows {
                let rec = WindowRecord {
                    subject_id: &w.subject_id,
                    label: w.label,
                    offset: w.offset,
                    n_channels: w.n_channels,
                    values: &w.values,
                };
                text.push_str(&serde_json::to_string(&rec).map_err(gapfill::Error::from)?);
                text.push('\n');
            }
            out.write(name, text)?;
        }
        if let Some(m) = &data.manifest {
            out.write("manifest.json", to_json(m)?)?;
        }
        out.write("classes.json", to_json(&data.classes)?)?;
        finish("preprocess", cfg, &out, started)?;
        return Ok(Outcome {
            out_dir: Some(root),
            failures: 0,
            message: format!("{} train / {} test windows cached", data.train.len(), data.test.len()),
        });
    }
    let data = load_frames(&cfg.data)?;
    let summary = match &cfg.data {
        DataSection::Novartis { path, .. } => load_novartis(path)?.missingness,
        _ => missingness_summary(&data.train),
    };
    if dry_run {
        return Ok(Outcome {
            message: format!("{} train / {} test frames", data.train.len(), data.test.len()),
            ..Outcome::default()
        });
    }
    let mut out = OutputDir::create(&root)?;
    write_config(&mut out, cfg, raw)?;
    let frames_path = out.path("frames.csv");
    let all: Vec<_> = data.train.iter().chain(&data.test).cloned().collect();
    // Written under temporary names, then moved into place.
    let tmp = out.path("frames.tmp.csv");
    save_frames(&tmp, &all)?;
    std::fs::rename(&tmp, &frames_path)?;
    std::fs::rename(
        gapfill::signal::io::sidecar_path(&tmp),
        gapfill::signal::io::sidecar_path(&frames_path),
    )?;
    out.written.push(frames_path.clone());
    out.written.push(gapfill::signal::io::sidecar_path(&frames_path));
    out.write("missingness.csv", to_csv(&summary)?)?;
    if let Some(m) = &data.manifest {
        out.write("manifest.json", to_json(m)?)?;
    }
    finish("preprocess", cfg, &out, started)?;
    Ok(Outcome {
        out_dir: Some(root),
        failures: 0,
        message: format!("{} frames cached", all.len()),
    })
}

fn markdown(table: &AggregateTable) -> String {
    let header = table.header();
    let mut s = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for m in gapfill::metrics::Metric::ALL {
        for g in &table.groups {
            let mut row = vec![m.to_string(), g.clone()];
            for st in &table.strategies {
                row.push(table.get(g, st, m).map(|a| a.to_string()).unwrap_or_default());
            }
            s.push_str(&format!("| {} |\n", row.join(" | ")));
        }
    }
    s
}

/// Renders the tables found in a results directory as `report.md`.
pub fn report(dir: &Path) -> Result<Outcome, BenchError> {
    if !dir.is_dir() {
        return Err(BenchError::Config(format!("{} is not a results directory", dir.display())));
    }
    let mut text = String::new();
    for (name, title) in [
        ("table_by_source.json", "Imputation by data source"),
        ("table_by_length.json", "Imputation by gap length"),
    ] {
        let p = dir.join(name);
        if p.is_file() {
            let table: AggregateTable =
                serde_json::from_str(&std::fs::read_to_string(&p)?).map_err(gapfill::Error::from)?;
            text.push_str(&format!("## {title}\n\n{}\n", markdown(&table)));
        }
    }
    let p = dir.join("downstream_summary.csv");
    if p.is_file() {
        text.push_str("## Downstream accuracy\n\n| strategy | rate | accuracy |\n|---|---|---|\n");
        let mut r = csv::Reader::from_path(&p).map_err(gapfill::Error::from)?;
        for row in r.records() {
            let row = row.map_err(gapfill::Error::from)?;
            let (mean, std): (f64, f64) = (
                row[2].parse().unwrap_or(f64::NAN),
                row[3].parse().unwrap_or(f64::NAN),
            );
            text.push_str(&format!("| {} | {} | {mean:.3} ± {std:.3} |\n", &row[0], &row[1]));
        }
        text.push('\n');
    }
    if text.is_empty() {
        return Err(BenchError::Config(format!("no report tables in {}", dir.display())));
    }
    crate::output::write_atomic(&dir.join("report.md"), text.as_bytes())?;
    Ok(Outcome {
        out_dir: Some(dir.to_path_buf()),
        failures: 0,
        message: text,
    })
}
