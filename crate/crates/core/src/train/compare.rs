use serde::{Deserialize, Serialize};

use super::config::{LossConfig, TrainConfig};
use super::trainer::{History, TrainState};
use crate::arch::ArchSpec;
use crate::data::SliceStack;
use crate::error::{Error, Result};
use crate::losses::LossKind;

/// DSC level used for the convergence-speed statistic.
pub const CONVERGENCE_DSC: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub loss: LossKind,
    pub history: History,
    /// First epoch reaching `threshold` training DSC.
    pub epochs_to_threshold: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveBundle {
    pub spec_hash: String,
    pub seed: u64,
    pub threshold: f64,
    pub curves: Vec<Curve>,
}

impl CurveBundle {
    pub fn curve(&self, loss: LossKind) -> Option<&Curve> {
        self.curves.iter().find(|c| c.loss == loss)
    }

    /// Tab-separated `epoch` column followed by one DSC column per loss.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch");
        for c in &self.curves {
            out.push('\t');
            out.push_str(c.loss.name());
        }
        out.push('\n');
        let n = self.curves.iter().map(|c| c.history.len()).max().unwrap_or(0);
        for e in 0..n {
            out.push_str(&(e + 1).to_string());
            for c in &self.curves {
                out.push('\t');
                if let Some(r) = c.history.records.get(e) {
                    out.push_str(&format!("{:e}", r.dsc));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Trains one model per loss configuration from identical initial weights,
/// data order and augmentation; only the objective differs.
pub fn compare_losses(
    spec: &ArchSpec,
    stacks: &[SliceStack],
    config: &TrainConfig,
    losses: &[LossConfig],
) -> Result<CurveBundle> {
    if losses.is_empty() {
        return Err(Error::InvalidArgument("no loss configurations to compare".into()));
    }
    let mut curves = Vec::with_capacity(losses.len());
    for loss in losses {
        let mut state = TrainState::new(spec, config, loss)?;
        state.run(stacks, None)?;
        curves.push(Curve {
            loss: loss.loss,
            epochs_to_threshold: state.history.epochs_to(CONVERGENCE_DSC),
            history: state.history,
        });
    }
    Ok(CurveBundle {
        spec_hash: spec.content_hash(),
        seed: config.seed,
        threshold: CONVERGENCE_DSC,
        curves,
    })
}
