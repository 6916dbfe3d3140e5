//! Report serialization: flat CSV and a plain-text results table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::grid::{EvalReport, FeatureMetrics};
use crate::error::{Error, Result};

/// CSV row; per-feature metrics travel as an embedded JSON array.
#[derive(Serialize, Deserialize)]
struct Row {
    model: String,
    ablation: Option<String>,
    delay_ratio: f64,
    k: usize,
    mse: f64,
    mae: f64,
    r2: Option<f64>,
    params: usize,
    epochs: usize,
    seed: u64,
    mask_hash: String,
    config_hash: String,
    best_epoch: usize,
    best_val_loss: f64,
    test_windows: usize,
    per_feature: String,
    #[serde(default)]
    raw: String,
    wall_time: f64,
}

pub fn write_reports_csv(reports: &[EvalReport], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if reports.is_empty() {
        // headers are only emitted alongside the first record
        w.write_record([
            "model", "ablation", "delay_ratio", "k", "mse", "mae", "r2", "params", "epochs",
            "seed", "mask_hash", "config_hash", "best_epoch", "best_val_loss", "test_windows",
            "per_feature", "raw", "wall_time",
        ])?;
    }
    for r in reports {
        w.serialize(Row {
            model: r.model.clone(),
            ablation: r.ablation.clone(),
            delay_ratio: r.delay_ratio,
            k: r.k,
            mse: r.mse,
            mae: r.mae,
            r2: r.r2,
            params: r.params,
            epochs: r.epochs,
            seed: r.seed,
            mask_hash: r.mask_hash.clone(),
            config_hash: r.config_hash.clone(),
            best_epoch: r.best_epoch,
            best_val_loss: r.best_val_loss,
            test_windows: r.test_windows,
            per_feature: serde_json::to_string(&r.per_feature)?,
            raw: match &r.raw {
                Some(raw) => serde_json::to_string(raw)?,
                None => String::new(),
            },
            wall_time: r.wall_time,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_reports_csv(input: impl Read) -> Result<Vec<EvalReport>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rd.deserialize::<Row>() {
        let r = row?;
        let per_feature: Vec<FeatureMetrics> = serde_json::from_str(&r.per_feature)?;
        out.push(EvalReport {
            model: r.model,
            ablation: r.ablation.filter(|a| !a.is_empty()),
            delay_ratio: r.delay_ratio,
            k: r.k,
            mse: r.mse,
            mae: r.mae,
            r2: r.r2,
            params: r.params,
            epochs: r.epochs,
            seed: r.seed,
            mask_hash: r.mask_hash,
            config_hash: r.config_hash,
            best_epoch: r.best_epoch,
            best_val_loss: r.best_val_loss,
            test_windows: r.test_windows,
            per_feature,
            raw: match r.raw.as_str() {
                "" => None,
                s => Some(serde_json::from_str(s)?),
            },
            wall_time: r.wall_time,
        });
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Renders reports as a table with one row per (model, metric) and one
/// column per (delay ratio, horizon). Values are means over seeds. With
/// `color`, the lowest MSE of each column is highlighted.
pub fn render_table(reports: &[EvalReport], color: bool) -> Result<String> {
    if reports.is_empty() {
        return Ok("(no reports)\n".into());
    }
    let mut sorted = reports.to_vec();
    super::grid::sort_reports(&mut sorted);

    let mut columns: Vec<(u64, usize)> = sorted.iter().map(|r| (r.delay_ratio.to_bits(), r.k)).collect();
    columns.sort_by(|a, b| {
        f64::from_bits(a.0)
            .total_cmp(&f64::from_bits(b.0))
            .then(a.1.cmp(&b.1))
    });
    columns.dedup();

    let mut models: Vec<String> = Vec::new();
    // (model, column) -> reports over seeds
    let mut cells: BTreeMap<(String, (u64, usize)), Vec<&EvalReport>> = BTreeMap::new();
    for r in &sorted {
        let name = match &r.ablation {
            Some(a) if a != "full" => format!("{} ({a})", r.model),
            _ => r.model.clone(),
        };
        if !models.contains(&name) {
            models.push(name.clone());
        }
        cells.entry((name, (r.delay_ratio.to_bits(), r.k))).or_default().push(r);
    }

    let metric_names = ["MSE", "MAE", "R2", "Params"];
    let value = |rs: &[&EvalReport], metric: usize| -> Option<f64> {
        match metric {
            0 => Some(mean(&rs.iter().map(|r| r.mse).collect::<Vec<_>>())),
            1 => Some(mean(&rs.iter().map(|r| r.mae).collect::<Vec<_>>())),
            2 => {
                let v: Option<Vec<f64>> = rs.iter().map(|r| r.r2).collect();
                v.map(|v| mean(&v))
            }
            _ => Some(rs[0].params as f64),
        }
    };
    let best_mse: Vec<Option<f64>> = columns
        .iter()
        .map(|c| {
            models
                .iter()
                .filter_map(|m| cells.get(&(m.clone(), *c)).and_then(|rs| value(rs, 0)))
                .min_by(|a, b| a.total_cmp(b))
        })
        .collect();

    let mut header = vec!["model".to_string(), "metric".to_string()];
    header.extend(columns.iter().map(|(r, k)| format!("{:.0}%/k={k}", f64::from_bits(*r) * 100.0)));
    let mut rows: Vec<Vec<(String, bool)>> = Vec::new();
    for m in &models {
        for (mi, metric) in metric_names.iter().enumerate() {
            let mut row = vec![(m.clone(), false), (metric.to_string(), false)];
            for (ci, c) in columns.iter().enumerate() {
                let cell = cells.get(&(m.clone(), *c));
                let v = cell.and_then(|rs| value(rs, mi));
                let text = match (v, mi) {
                    (None, _) => "-".to_string(),
                    (Some(v), 3) => format!("{}", v as u64),
                    (Some(v), _) => format!("{v:.5}"),
                };
                let highlight = mi == 0 && v.is_some() && v == best_mse[ci];
                row.push((text, highlight));
            }
            rows.push(row);
        }
    }

    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (i, (t, _)) in row.iter().enumerate() {
            widths[i] = widths[i].max(t.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[(String, bool)]| -> Result<()> {
        let mut parts = Vec::new();
        for (i, (t, hl)) in cells.iter().enumerate() {
            let padded = if i < 2 {
                format!("{t:<w$}", w = widths[i])
            } else {
                format!("{t:>w$}", w = widths[i])
            };
            parts.push(if *hl && color {
                format!("\x1b[1m{padded}\x1b[0m")
            } else {
                padded
            });
        }
        writeln!(out, "{}", parts.join("  ").trim_end()).map_err(|e| Error::Data(e.to_string()))
    };
    let header_cells: Vec<(String, bool)> = header.into_iter().map(|h| (h, false)).collect();
    line(&mut out, &header_cells)?;
    let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    writeln!(out, "{}", "-".repeat(rule)).map_err(|e| Error::Data(e.to_string()))?;
    for row in &rows {
        line(&mut out, row)?;
    }
    let seeds: std::collections::BTreeSet<u64> = reports.iter().map(|r| r.seed).collect();
    if seeds.len() > 1 {
        writeln!(out, "values are means over {} seeds", seeds.len()).map_err(|e| Error::Data(e.to_string()))?;
    }
    Ok(out)
}
