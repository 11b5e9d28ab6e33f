//! Experiment harness: configuration, dataset generation, single runs with
//! checkpoints, sweeps and reports.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod report;
pub mod sweep;

use std::path::{Path, PathBuf};

use crate::data::{label_histogram, Cohort, Dataset, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::model::MultitaskNet;
use crate::train::{RunRecord, TrainState, Trainer};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{ExperimentConfig, SweepAxis};
pub use report::{emit_report, CellInfo, ReportRow, CSV_HEADER};
pub use sweep::{cells, rebuild_report, run_sweep, Cell, DataLoader, SweepOutcome};

/// Sample count and label histogram of one cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSummary {
    pub cohort: Cohort,
    pub count: usize,
    pub histogram: [usize; NUM_CLASSES],
    pub path: PathBuf,
}

/// Generate (or reuse) the cohort caches of `cfg` and summarize them.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<Vec<CohortSummary>> {
    cfg.validate()?;
    let spec = cfg.data_spec();
    let ds = DataLoader::new(cfg).dataset(spec)?;
    Ok(Cohort::ALL
        .iter()
        .map(|&c| CohortSummary {
            cohort: c,
            count: ds.cohort(c).len(),
            histogram: label_histogram(ds.cohort(c)),
            path: spec.cache_file(&cfg.cache_dir(), c),
        })
        .collect())
}

/// One training run with the first seed of `cfg`.
///
/// With `checkpoint` set, the state is saved there after every epoch and an
/// existing checkpoint is resumed instead of starting over. Training stops
/// after `stop_after` completed epochs when given.
pub fn train_run(
    cfg: &ExperimentConfig,
    data: &Dataset,
    checkpoint: Option<&Path>,
    stop_after: Option<usize>,
    mut on_epoch: impl FnMut(&TrainState),
) -> Result<(MultitaskNet, RunRecord)> {
    cfg.validate()?;
    let mut hp = cfg.hp;
    hp.seed = cfg.seeds[0];
    let mut trainer = match checkpoint.filter(|p| p.is_file()) {
        Some(p) => {
            let (state, stored) = load_checkpoint(p, Some(&cfg.model))?;
            if stored != hp {
                return Err(Error::Config(format!(
                    "{} was written with different hyperparameters",
                    p.display()
                )));
            }
            Trainer::resume(state, data, hp)?
        }
        None => Trainer::new(MultitaskNet::build(cfg.model, hp.seed)?, data, hp)?,
    };
    let limit = stop_after.unwrap_or(usize::MAX);
    while !trainer.is_done() && trainer.state().epochs_done < limit {
        trainer.run_epoch()?;
        if let Some(p) = checkpoint {
            save_checkpoint(p, trainer.state(), &hp)?;
        }
        on_epoch(trainer.state());
    }
    trainer.finish()
}
