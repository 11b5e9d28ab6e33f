//! Sweeps: one training run per `(axis value, seed)` cell.
//!
//! Each finished cell is flushed to `cells/<key>.csv` before the next one
//! starts, so an interrupted sweep resumes by skipping existing cell files.
//! The report is assembled from the cell files in axis-then-seed order and
//! therefore does not depend on which cells ran in which invocation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;

use super::config::{ExperimentConfig, SweepAxis};
use super::report::{emit_report, read_csv, record_rows, write_csv, CellInfo, ReportRow};
use crate::data::cache::write_atomic;
use crate::data::{DataSpec, Dataset, MnistSource, SnrLabel};
use crate::error::{Error, Result};
use crate::model::MultitaskNet;
use crate::train::{train, Hyperparameters, RunRecord};

/// One run of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub info: CellInfo,
    pub hp: Hyperparameters,
    pub data: DataSpec,
}

impl Cell {
    /// File-name-safe identifier, unique within a sweep.
    pub fn key(&self) -> String {
        let value = match self.info.axis.as_str() {
            "snr" => self.info.snr.slug(),
            "train_n" => self.info.train_n.to_string(),
            "strategy" => self.info.strategy.to_string(),
            _ => "run".to_string(),
        };
        format!("{}-{value}-seed{}", self.info.axis, self.info.seed)
    }
}

/// Cells in report order: axis values outer, seeds inner.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let base = |seed: u64| {
        let mut hp = cfg.hp;
        hp.seed = seed;
        Cell {
            info: CellInfo {
                axis: cfg.axis.name().to_string(),
                seed,
                strategy: hp.strategy,
                train_n: cfg.train_n,
                snr: cfg.snr,
            },
            hp,
            data: cfg.data_spec(),
        }
    };
    let mut out = Vec::new();
    for i in 0..cfg.axis.len() {
        for &seed in &cfg.seeds {
            let mut c = base(seed);
            match &cfg.axis {
                SweepAxis::Single => {}
                SweepAxis::Snr(v) => set_snr(&mut c, v[i]),
                SweepAxis::TrainN(v) => {
                    c.info.train_n = v[i];
                    c.data.train_n = v[i];
                }
                SweepAxis::Strategy(v) => {
                    c.info.strategy = v[i];
                    c.hp.strategy = v[i];
                }
            }
            out.push(c);
        }
    }
    out
}

fn set_snr(c: &mut Cell, snr: SnrLabel) {
    c.info.snr = snr;
    c.data.snr = snr;
}

pub fn cell_path(out: &Path, cell: &Cell) -> PathBuf {
    out.join("cells").join(format!("{}.csv", cell.key()))
}

/// Build the network for `cell` and train it.
pub fn run_cell(cfg: &ExperimentConfig, cell: &Cell, data: &Dataset) -> Result<RunRecord> {
    let net = MultitaskNet::build(cfg.model, cell.hp.seed)?;
    Ok(train(net, data, &cell.hp)?.1)
}

/// Loads the IDX files at most once and only if some cache is missing.
pub struct DataLoader {
    dir: PathBuf,
    cache: PathBuf,
    source: Mutex<Option<MnistSource>>,
}

impl DataLoader {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        DataLoader {
            dir: cfg.data_dir.clone().unwrap_or_else(MnistSource::default_dir),
            cache: cfg.cache_dir(),
            source: Mutex::new(None),
        }
    }

    pub fn dataset(&self, spec: DataSpec) -> Result<Dataset> {
        if let Some(ds) = Dataset::read_cache(spec, &self.cache)? {
            return Ok(ds);
        }
        let mut guard = self.source.lock().expect("loader lock");
        if guard.is_none() {
            *guard = Some(MnistSource::load(&self.dir)?);
        }
        let ds = Dataset::generate(spec, guard.as_ref().expect("loaded"))?;
        ds.write_cache(&self.cache)?;
        Ok(ds)
    }
}

/// What a sweep invocation did.
#[derive(Debug, Default)]
pub struct SweepOutcome {
    pub ran: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Vec<(String, Error)>,
    /// Rows of every finished cell, in report order.
    pub rows: Vec<ReportRow>,
}

/// Run every missing cell, then write `report.csv` and `report.md` when
/// all cells are present. `progress` receives one line per finished cell.
pub fn run_sweep<P>(cfg: &ExperimentConfig, progress: P) -> Result<SweepOutcome>
where
    P: Fn(&str) + Sync,
{
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    write_atomic(&cfg.out.join("config.txt"), cfg.to_text().as_bytes())?;
    let all = cells(cfg);
    let (done, pending): (Vec<&Cell>, Vec<&Cell>) = all.iter().partition(|c| cell_path(&cfg.out, c).is_file());
    let mut outcome = SweepOutcome {
        skipped: done.iter().map(|c| c.key()).collect(),
        ..SweepOutcome::default()
    };

    // Datasets first, sequentially: generation is parallel internally.
    let loader = DataLoader::new(cfg);
    let mut datasets: BTreeMap<String, Dataset> = BTreeMap::new();
    let mut runnable = Vec::new();
    for c in pending {
        let key = format!("{:?}", c.data);
        if !datasets.contains_key(&key) {
            match loader.dataset(c.data) {
                Ok(ds) => {
                    datasets.insert(key.clone(), ds);
                }
                Err(e) => {
                    outcome.failed.push((c.key(), e));
                    continue;
                }
            }
        }
        runnable.push((c, key));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<(String, Result<()>)> = pool.install(|| {
        runnable
            .par_iter()
            .map(|(c, key)| {
                let r = run_cell(cfg, c, &datasets[key]).and_then(|rec| {
                    write_csv(&cell_path(&cfg.out, c), &record_rows(&c.info, &rec))?;
                    progress(&format!(
                        "{}: test accuracy {:.4} after {} epochs ({:.0} s)",
                        c.key(),
                        rec.test.accuracy,
                        rec.epochs.len(),
                        rec.wall_seconds
                    ));
                    Ok(())
                });
                (c.key(), r)
            })
            .collect()
    });
    for (key, r) in results {
        match r {
            Ok(()) => outcome.ran.push(key),
            Err(e) => outcome.failed.push((key, e)),
        }
    }

    if outcome.failed.is_empty() {
        outcome.rows = collect_rows(cfg)?;
        emit_report(&cfg.out, &outcome.rows)?;
    }
    Ok(outcome)
}

/// Rows of every cell file, in report order. Fails if any cell is missing.
pub fn collect_rows(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for c in cells(cfg) {
        let path = cell_path(&cfg.out, &c);
        if !path.is_file() {
            return Err(Error::Config(format!("cell {} has not run yet ({})", c.key(), path.display())));
        }
        rows.extend(read_csv(&path)?);
    }
    Ok(rows)
}

/// Rebuild the report of the sweep stored in `out`.
pub fn rebuild_report(out: &Path) -> Result<Vec<ReportRow>> {
    let mut cfg = ExperimentConfig::load(&out.join("config.txt"))?;
    cfg.out = out.to_path_buf();
    let rows = collect_rows(&cfg)?;
    emit_report(out, &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::Strategy;

    #[test]
    fn cells_are_axis_major() {
        let cfg = ExperimentConfig::parse("axis = strategy\nseeds = 4, 5").unwrap();
        let c = cells(&cfg);
        assert_eq!(c.len(), 8);
        assert_eq!(c[0].hp.strategy, Strategy::SingleTask);
        assert_eq!((c[1].hp.seed, c[1].hp.strategy), (5, Strategy::SingleTask));
        assert_eq!(c[7].key(), "strategy-multitask_loss-seed5");
        let cfg = ExperimentConfig::parse("axis = snr\nvalues = Inf, 1:29").unwrap();
        let c = cells(&cfg);
        assert_eq!(c[1].data.snr, SnrLabel::Ratio { signal: 1, noise: 29 });
        assert_eq!(c[1].key(), "snr-1-29-seed0");
        let cfg = ExperimentConfig::parse("axis = train_n\nvalues = 100").unwrap();
        assert_eq!(cells(&cfg)[0].data.train_n, 100);
    }
}
