//! Plot-ready CSV (one row per epoch and split) and a markdown summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::cache::write_atomic;
use crate::data::{Cohort, SnrLabel};
use crate::error::{Error, Result};
use crate::train::{Metrics, RunRecord, Strategy};

pub const CSV_HEADER: [&str; 11] = [
    "axis",
    "seed",
    "strategy",
    "train_n",
    "snr",
    "epoch",
    "split",
    "accuracy",
    "depth_rmse",
    "cls_loss",
    "depth_loss",
];

/// One CSV line.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub axis: String,
    pub seed: u64,
    pub strategy: Strategy,
    pub train_n: usize,
    pub snr: SnrLabel,
    pub epoch: usize,
    pub split: Cohort,
    pub metrics: Metrics,
}

/// Where a run sits in a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CellInfo {
    pub axis: String,
    pub seed: u64,
    pub strategy: Strategy,
    pub train_n: usize,
    pub snr: SnrLabel,
}

/// Three rows per recorded epoch: train, val, test.
pub fn record_rows(cell: &CellInfo, record: &RunRecord) -> Vec<ReportRow> {
    let mut rows = Vec::with_capacity(3 * record.epochs.len());
    for e in &record.epochs {
        for (split, metrics) in [(Cohort::Train, e.train), (Cohort::Val, e.val), (Cohort::Test, e.test)] {
            rows.push(ReportRow {
                axis: cell.axis.clone(),
                seed: cell.seed,
                strategy: cell.strategy,
                train_n: cell.train_n,
                snr: cell.snr,
                epoch: e.epoch,
                split,
                metrics,
            });
        }
    }
    rows
}

/// CSV text with the header. Floats use the shortest representation that
/// parses back to the same value.
pub fn csv_string(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.axis.clone(),
            r.seed.to_string(),
            r.strategy.to_string(),
            r.train_n.to_string(),
            r.snr.to_string(),
            r.epoch.to_string(),
            r.split.name().to_string(),
            m.accuracy.to_string(),
            m.depth_rmse.to_string(),
            m.cls_loss.to_string(),
            m.depth_loss.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid("csv", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_csv(text: &str, path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::format(path, format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |col: &str| Error::format(path, format!("row {}: bad {col}", i + 1));
        let get = |k: usize| rec.get(k).unwrap_or("");
        let f = |k: usize| get(k).parse::<f64>().map_err(|_| bad(CSV_HEADER[k]));
        let split = match get(6) {
            "train" => Cohort::Train,
            "val" => Cohort::Val,
            "test" => Cohort::Test,
            _ => return Err(bad("split")),
        };
        rows.push(ReportRow {
            axis: get(0).to_string(),
            seed: get(1).parse().map_err(|_| bad("seed"))?,
            strategy: get(2).parse().map_err(|_| bad("strategy"))?,
            train_n: get(3).parse().map_err(|_| bad("train_n"))?,
            snr: get(4).parse().map_err(|_| bad("snr"))?,
            epoch: get(5).parse().map_err(|_| bad("epoch"))?,
            split,
            metrics: Metrics {
                accuracy: f(7)?,
                depth_rmse: f(8)?,
                cls_loss: f(9)?,
                depth_loss: f(10)?,
            },
        });
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}

pub fn write_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    write_atomic(path, csv_string(rows)?.as_bytes())
}

/// Final test accuracy of each run, in row order.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalAccuracy {
    pub axis_value: String,
    pub seed: u64,
    pub strategy: Strategy,
    pub train_n: usize,
    pub snr: SnrLabel,
    pub accuracy: f64,
}

/// The label of the column the sweep varies.
pub fn axis_value(row: &ReportRow) -> String {
    match row.axis.as_str() {
        "snr" => row.snr.to_string(),
        "train_n" => row.train_n.to_string(),
        "strategy" => row.strategy.to_string(),
        _ => "-".to_string(),
    }
}

/// Test accuracy of the last epoch of every `(axis value, seed)` run, in
/// order of first appearance.
pub fn final_accuracies(rows: &[ReportRow]) -> Vec<FinalAccuracy> {
    let mut out: Vec<FinalAccuracy> = Vec::new();
    let mut last_epoch: Vec<usize> = Vec::new();
    for r in rows.iter().filter(|r| r.split == Cohort::Test) {
        let value = axis_value(r);
        let pos = out.iter().position(|c| c.axis_value == value && c.seed == r.seed);
        match pos {
            Some(i) if r.epoch >= last_epoch[i] => {
                out[i].accuracy = r.metrics.accuracy;
                last_epoch[i] = r.epoch;
            }
            Some(_) => {}
            None => {
                out.push(FinalAccuracy {
                    axis_value: value,
                    seed: r.seed,
                    strategy: r.strategy,
                    train_n: r.train_n,
                    snr: r.snr,
                    accuracy: r.metrics.accuracy,
                });
                last_epoch.push(r.epoch);
            }
        }
    }
    out
}

/// Mean final test accuracy per axis value, in order of first appearance.
pub fn mean_by_axis(finals: &[FinalAccuracy]) -> Vec<(String, f64)> {
    let mut order: Vec<String> = Vec::new();
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for f in finals {
        if !sums.contains_key(&f.axis_value) {
            order.push(f.axis_value.clone());
        }
        let e = sums.entry(f.axis_value.clone()).or_insert((0.0, 0));
        e.0 += f.accuracy;
        e.1 += 1;
    }
    order
        .into_iter()
        .map(|k| {
            let (s, n) = sums[&k];
            (k, s / n as f64)
        })
        .collect()
}

/// A table of every run's final test accuracy followed by a table of means
/// over seeds with one column per seed.
pub fn markdown(rows: &[ReportRow]) -> String {
    let finals = final_accuracies(rows);
    let axis = rows.first().map_or("single", |r| r.axis.as_str());
    let mut s = String::new();
    let _ = writeln!(s, "# Sweep over {axis}\n");
    let _ = writeln!(s, "## Runs\n");
    let _ = writeln!(s, "| {axis} | seed | strategy | N | S:N | test accuracy |");
    let _ = writeln!(s, "|---|---|---|---|---|---|");
    for f in &finals {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {:.4} |",
            f.axis_value, f.seed, f.strategy, f.train_n, f.snr, f.accuracy
        );
    }
    let mut seeds: Vec<u64> = finals.iter().map(|f| f.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let _ = writeln!(s, "\n## Mean over seeds\n");
    let seed_cols: String = seeds.iter().map(|sd| format!(" seed {sd} |")).collect();
    let _ = writeln!(s, "| {axis} |{seed_cols} mean |");
    let _ = writeln!(s, "|---|{}---|", "---|".repeat(seeds.len()));
    for (value, mean) in mean_by_axis(&finals) {
        let cells: String = seeds
            .iter()
            .map(|sd| {
                finals
                    .iter()
                    .find(|f| f.axis_value == value && f.seed == *sd)
                    .map_or(" - |".to_string(), |f| format!(" {:.4} |", f.accuracy))
            })
            .collect();
        let _ = writeln!(s, "| {value} |{cells} {mean:.4} |");
    }
    s
}

/// Write `report.csv` and `report.md` into `dir`.
pub fn emit_report(dir: &Path, rows: &[ReportRow]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::invalid("report", "no records"));
    }
    write_csv(&dir.join("report.csv"), rows)?;
    write_atomic(&dir.join("report.md"), markdown(rows).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{EpochRecord, Hyperparameters, Phase};

    fn metrics(x: f64) -> Metrics {
        Metrics {
            accuracy: x,
            depth_rmse: 0.1 + x / 3.0,
            cls_loss: std::f64::consts::LN_10 - x,
            depth_loss: 1e-17 * x,
        }
    }

    fn record(epochs: usize, base: f64) -> RunRecord {
        let epochs: Vec<EpochRecord> = (1..=epochs)
            .map(|e| EpochRecord {
                epoch: e,
                phase: Phase::Joint,
                train: metrics(base + e as f64 / 7.0),
                val: metrics(base + e as f64 / 11.0),
                test: metrics(base + e as f64 / 13.0),
            })
            .collect();
        RunRecord {
            hp: Hyperparameters::default(),
            test: epochs.last().unwrap().test,
            best_val: (1, 0.0),
            aborted: false,
            wall_seconds: 1.0,
            epochs,
        }
    }

    fn cell(seed: u64, snr: SnrLabel) -> CellInfo {
        CellInfo {
            axis: "snr".into(),
            seed,
            strategy: Strategy::MultiOptimizer,
            train_n: 512,
            snr,
        }
    }

    #[test]
    fn ten_epochs_make_thirty_rows() {
        let rows = record_rows(&cell(0, SnrLabel::Inf), &record(10, 0.0));
        let text = csv_string(&rows).unwrap();
        assert_eq!(text.lines().count(), 31);
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    }

    #[test]
    fn csv_round_trips_exactly() {
        let rows = record_rows(&cell(3, SnrLabel::Ratio { signal: 1, noise: 29 }), &record(4, 0.123456789));
        let back = parse_csv(&csv_string(&rows).unwrap(), Path::new("x")).unwrap();
        assert_eq!(back, rows);
        assert!(parse_csv("a,b\n1,2\n", Path::new("x")).is_err());
    }

    #[test]
    fn markdown_lists_each_run_and_means() {
        let snrs = [SnrLabel::Inf, SnrLabel::Ratio { signal: 1, noise: 5 }];
        let mut rows = Vec::new();
        for snr in snrs {
            for seed in [0, 1, 2] {
                rows.extend(record_rows(&cell(seed, snr), &record(2, seed as f64 / 10.0)));
            }
        }
        let finals = final_accuracies(&rows);
        assert_eq!(finals.len(), 6);
        assert_eq!(finals[1].accuracy, 0.1 + 2.0 / 13.0);
        let means = mean_by_axis(&finals);
        assert_eq!(means.len(), 2);
        assert!((means[0].1 - (0.3 / 3.0 + 2.0 / 13.0)).abs() < 1e-12);
        let md = markdown(&rows);
        let runs = md.split("## Mean").next().unwrap();
        let table_rows = runs.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| snr")).count();
        assert_eq!(table_rows, 6);
        assert!(md.contains("| 1:5 |"));
    }

    #[test]
    fn emit_writes_both_files() {
        let dir = tempfile::tempdir().unwrap();
        let rows = record_rows(&cell(0, SnrLabel::Inf), &record(1, 0.5));
        emit_report(dir.path(), &rows).unwrap();
        assert_eq!(read_csv(&dir.path().join("report.csv")).unwrap(), rows);
        assert!(dir.path().join("report.md").is_file());
        assert!(emit_report(dir.path(), &[]).is_err());
    }
}
