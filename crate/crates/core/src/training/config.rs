use std::fmt::Write as _;
use std::path::Path;

use super::TrainError;

/// Hyperparameters of one training stage. Batch sizes count references.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    /// Peak learning rate of the cycle as a multiple of `base_lr`.
    pub lr_max_multiplier: f64,
    /// Length of one triangular learning-rate cycle, in epochs.
    pub cycle_epochs: usize,
    pub dropout: f64,
    /// Weight of the `(l2 / 2) * ||theta||^2` penalty.
    pub l2: f64,
    pub seed: u64,
    /// Record wall-clock milliseconds per epoch. Off by default so logs are reproducible byte for byte.
    pub log_timing: bool,
}

impl TrainConfig {
    pub fn efficiency_default() -> Self {
        TrainConfig {
            batch_size: 100,
            epochs: 300,
            base_lr: 3e-4,
            lr_max_multiplier: 5.0,
            cycle_epochs: 10,
            dropout: 0.2,
            l2: 1e-4,
            seed: 0,
            log_timing: false,
        }
    }

    pub fn proportion_default() -> Self {
        TrainConfig {
            batch_size: 400,
            epochs: 150,
            ..Self::efficiency_default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.batch_size == 0 || self.epochs == 0 || self.cycle_epochs == 0 {
            return bad("batch_size, epochs and cycle_epochs must be positive".into());
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) || !(self.lr_max_multiplier >= 1.0) {
            return bad(format!(
                "need base_lr > 0 and lr_max_multiplier >= 1, got {} and {}",
                self.base_lr, self.lr_max_multiplier
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        if !(self.l2 >= 0.0) {
            return bad(format!("l2 {} must be >= 0", self.l2));
        }
        Ok(())
    }
}

pub const LOG_COLUMNS: [&str; 7] = [
    "epoch", "split", "loss", "pearson", "spearman", "lr", "wall_ms",
];

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub pearson: f64,
    pub spearman: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

/// Append-only per-epoch training log.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn push(&mut self, row: LogRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: TrainingLog) {
        self.rows.extend(other.rows);
    }

    /// Rows whose split is exactly `split`.
    pub fn split<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a LogRow> + 'a {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = LOG_COLUMNS.join("\t");
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.8}\t{:.6}\t{:.6}\t{:.8}\t{}",
                r.epoch, r.split, r.loss, r.pearson, r.spearman, r.lr, r.wall_ms
            );
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}
