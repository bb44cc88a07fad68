//! Aspect-combination and wiring ablation grids.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::CrossMode;
use crate::error::{Error, Result};
use crate::model::AspectMask;
use crate::pipeline::config::TrainConfig;
use crate::pipeline::dataset::Dataset;
use crate::pipeline::train::{evaluate, train};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationGrid {
    /// The nine aspect combinations, cross at beginning, no graph.
    Aspects,
    /// CB and CBM, each without the graph and with 1 or 3 fusion repeats.
    Modes,
}

impl FromStr for AblationGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aspects" => Ok(AblationGrid::Aspects),
            "modes" => Ok(AblationGrid::Modes),
            other => Err(Error::Config(format!("unknown ablation grid {other:?} (expected aspects or modes)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub index: usize,
    pub name: String,
    pub config: TrainConfig,
}

fn mode_name(mode: CrossMode, graph: bool, repeats: usize) -> String {
    let mode = mode.to_string().to_uppercase();
    if graph {
        format!("{mode}, G N={repeats}")
    } else {
        format!("{mode}, no G")
    }
}

/// Every cell of `grid` derived from `base`. Cell `i` trains with seed
/// `base.seed + i`.
pub fn grid_cells(grid: AblationGrid, base: &TrainConfig) -> Vec<AblationCell> {
    let mut cells = Vec::new();
    let mut push = |name: String, cfg: TrainConfig| {
        let index = cells.len();
        let mut cfg = cfg;
        cfg.seed = base.seed.wrapping_add(index as u64);
        cells.push(AblationCell { index, name, config: cfg });
    };
    match grid {
        AblationGrid::Aspects => {
            for mask in AspectMask::ablation_grid() {
                let mut cfg = base.clone();
                cfg.model.aspects = mask;
                cfg.model.mode = CrossMode::Cb;
                cfg.model.use_graph = false;
                cfg.model.fusion_repeats = 1;
                push(mask.to_string(), cfg);
            }
        }
        AblationGrid::Modes => {
            for mode in [CrossMode::Cb, CrossMode::Cbm] {
                for (graph, repeats) in [(false, 1), (true, 1), (true, 3)] {
                    let mut cfg = base.clone();
                    cfg.model.mode = mode;
                    cfg.model.use_graph = graph;
                    cfg.model.fusion_repeats = repeats;
                    push(mode_name(mode, graph, repeats), cfg);
                }
            }
        }
    }
    cells
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub index: usize,
    pub name: String,
    pub mode: String,
    pub graph: bool,
    pub fusion_repeats: usize,
    pub aspects: String,
    pub seed: u64,
    pub train_accuracy: f64,
    pub weighted_f1: f64,
}

/// Trains every cell on `train_set` and scores it on `test_set`. Cells run
/// on the rayon pool; rows come back in grid order.
pub fn ablate(train_set: &Dataset, test_set: &Dataset, base: &TrainConfig, grid: AblationGrid) -> Result<Vec<AblationRow>> {
    grid_cells(grid, base)
        .into_par_iter()
        .map(|cell| {
            let out = train(&cell.config, train_set, None)
                .map_err(|e| Error::Input(format!("ablation cell {} ({}): {e}", cell.index, cell.name)))?;
            let report = evaluate(&out.checkpoint, test_set)?;
            let m = &cell.config.model;
            Ok(AblationRow {
                index: cell.index,
                name: cell.name,
                mode: m.mode.to_string(),
                graph: m.use_graph,
                fusion_repeats: m.fusion_repeats,
                aspects: m.aspects.to_string(),
                seed: cell.config.seed,
                train_accuracy: out.train_accuracy,
                weighted_f1: report.weighted_f1,
            })
        })
        .collect()
}

/// Aligned human-readable table.
pub fn format_table(rows: &[AblationRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max("setting".len());
    let mut s = format!("{:<width$}  weighted_f1  train_acc\n", "setting");
    for r in rows {
        let _ = writeln!(s, "{:<width$}  {:>11.4}  {:>9.4}", r.name, r.weighted_f1, r.train_accuracy);
    }
    s
}

/// One self-describing `key=value` record per line.
pub fn format_records(rows: &[AblationRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(
            s,
            "index={} setting=\"{}\" mode={} graph={} fusion_repeats={} aspects={} seed={} train_accuracy={:.6} weighted_f1={:.6}",
            r.index, r.name, r.mode, r.graph, r.fusion_repeats, r.aspects, r.seed, r.train_accuracy, r.weighted_f1
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes_and_constraints() {
        let base = TrainConfig::default();
        let aspects = grid_cells(AblationGrid::Aspects, &base);
        assert_eq!(aspects.len(), 9);
        assert!(aspects.iter().all(|c| c.config.model.aspects.validate().is_ok()));
        let names: Vec<&str> = aspects.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["D+E", "D+I", "D+E+I", "G+E", "G+I", "G+E+I", "D+G+E", "D+G+I", "D+G+E+I"]);
        let modes = grid_cells(AblationGrid::Modes, &base);
        let names: Vec<&str> = modes.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(
            names,
            ["CB, no G", "CB, G N=1", "CB, G N=3", "CBM, no G", "CBM, G N=1", "CBM, G N=3"]
        );
        assert!("bogus".parse::<AblationGrid>().is_err());
    }
}
