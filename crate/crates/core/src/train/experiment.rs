//! k-fold cross-validation and the ablation grids.
//!
//! Every run is driven by one seed. Phantoms, elastic fields, the fold split
//! and each fold's initialization/shuffle are drawn from separate derived
//! streams, so rows of an ablation see identical data and splits.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::data::{augment_all, kfold, read_dataset, synth_dataset, AugTag, FoldSplit, Sample};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::metrics::{evaluate, MetricReport};
use crate::postprocess::postprocess;
use crate::rng::derive_seed;
use crate::train::config::TrainConfig;
use crate::train::trainer::{segment, train, EpochStats, TrainSeeds};

/// Derived-seed stream of the synthetic phantoms.
pub const STREAM_PHANTOMS: u64 = 3;
/// Derived-seed stream of the elastic fields.
pub const STREAM_AUGMENT: u64 = 4;
const STREAM_FOLDS: u64 = 5;
const STREAM_FOLD_BASE: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator); 0 when `n < 2`.
    pub sd: f64,
    pub n: usize,
}

pub fn mean_sd(values: &[f64]) -> MeanSd {
    let n = values.len();
    if n == 0 {
        return MeanSd { mean: f64::NAN, sd: f64::NAN, n };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    MeanSd { mean, sd, n }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub dice: MeanSd,
    pub iou: MeanSd,
    pub acc: MeanSd,
    /// Over images where the distance is defined.
    pub mhd: MeanSd,
    pub mhd_undefined: usize,
}

impl Aggregate {
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a MetricReport>) -> Self {
        let rs: Vec<&MetricReport> = reports.into_iter().collect();
        let pick = |f: fn(&MetricReport) -> f64| mean_sd(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
        let mhd: Vec<f64> = rs.iter().filter_map(|r| r.mhd).collect();
        Self {
            dice: pick(|r| r.dice),
            iou: pick(|r| r.iou),
            acc: pick(|r| r.acc),
            mhd: mean_sd(&mhd),
            mhd_undefined: rs.len() - mhd.len(),
        }
    }
}

impl std::fmt::Display for Aggregate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let m = |x: MeanSd| format!("{:.3} ± {:.3}", x.mean, x.sd);
        write!(f, "Dice {}  IoU {}  Acc {}  MHD {}", m(self.dice), m(self.iou), m(self.acc), m(self.mhd))?;
        if self.mhd_undefined > 0 {
            write!(f, " ({} undefined)", self.mhd_undefined)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageRow {
    pub fold: usize,
    pub id: String,
    /// Before post-processing.
    pub raw: MetricReport,
    /// After post-processing.
    pub post: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub test: Vec<String>,
    pub train_samples: usize,
    pub seeds: TrainSeeds,
    pub history: Vec<EpochStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub config: TrainConfig,
    pub folds: Vec<FoldSummary>,
    pub rows: Vec<ImageRow>,
    pub before_postprocess: Aggregate,
    pub after_postprocess: Aggregate,
    /// Kept out of the serialized report so reruns are byte-identical.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl ExperimentReport {
    /// One line per image and stage: `fold,id,stage,dice,iou,acc,mhd,flags`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fold,id,stage,dice,iou,acc,mhd,flags\n");
        for r in &self.rows {
            for (stage, m) in [("raw", &r.raw), ("post", &r.post)] {
                let mhd = m.mhd.map(|v| v.to_string()).unwrap_or_default();
                let _ = writeln!(s, "{},{},{stage},{},{},{},{mhd},{}", r.fold, r.id, m.dice, m.iou, m.acc, m.flags());
            }
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Writes `report.csv`, `report.json` and `timing.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.csv"), self.to_csv())?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        let timing = serde_json::json!({ "name": self.name, "wall_clock_secs": self.wall_clock_secs });
        std::fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&timing)? + "\n")?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} images over {} folds\n  before post-processing: {}\n  after post-processing:  {}",
            self.name,
            self.rows.len(),
            self.folds.len(),
            self.before_postprocess,
            self.after_postprocess
        )
    }
}

/// Originals, their augmentations and the fold split shared by every run
/// built from one config.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub originals: Vec<Sample>,
    /// `augmented[i]` holds the transforms of `originals[i]`.
    pub augmented: Vec<Vec<Sample>>,
    pub split: FoldSplit,
}

impl PreparedData {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let originals = match &cfg.dataset {
            Some(root) => read_dataset(root)?
                .into_iter()
                .map(|(_, s)| s)
                .filter(|s| s.tag == AugTag::None)
                .collect(),
            None => synth_dataset(&cfg.phantom_config(), cfg.num_phantoms, derive_seed(cfg.seed, STREAM_PHANTOMS))?,
        };
        Self::from_originals(cfg, originals)
    }

    pub fn from_originals(cfg: &TrainConfig, originals: Vec<Sample>) -> Result<Self> {
        if originals.len() < cfg.folds {
            return Err(Error::Config(format!(
                "{} samples cannot fill {} folds",
                originals.len(),
                cfg.folds
            )));
        }
        let per = if cfg.augment.include_original { 7 } else { 6 };
        let flat = augment_all(&originals, &cfg.augment, derive_seed(cfg.seed, STREAM_AUGMENT))?;
        let augmented = flat.chunks(per).map(<[Sample]>::to_vec).collect();
        let ids: Vec<String> = originals.iter().map(|s| s.id.clone()).collect();
        let split = kfold(&ids, cfg.folds, derive_seed(cfg.seed, STREAM_FOLDS))?;
        Ok(Self {
            originals,
            augmented,
            split,
        })
    }

    fn index_of(&self, id: &str) -> usize {
        self.originals.iter().position(|s| s.id == id).expect("split ids come from originals")
    }
}

/// Progress events emitted while an experiment runs.
#[derive(Clone, Debug)]
pub enum Progress<'a> {
    FoldStart { name: &'a str, fold: usize, folds: usize, train_samples: usize },
    Epoch { name: &'a str, fold: usize, stats: EpochStats },
}

/// Trains one model per fold on the augmented training originals and scores
/// the held-out originals before and after post-processing. Checkpoints go
/// to `<ckpt_dir>/fold<k>.ckpt` when a directory is given.
pub fn cross_validate(
    cfg: &TrainConfig,
    data: &PreparedData,
    name: &str,
    ckpt_dir: Option<&Path>,
    progress: &mut dyn FnMut(Progress<'_>),
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    if let Some(dir) = ckpt_dir {
        std::fs::create_dir_all(dir)?;
    }
    let k = data.split.folds.len();
    let mut folds = Vec::with_capacity(k);
    let mut rows = Vec::new();
    for (f, fold) in data.split.folds.iter().enumerate() {
        let train_set: Vec<Sample> = fold
            .train
            .iter()
            .flat_map(|id| data.augmented[data.index_of(id)].iter().cloned())
            .collect();
        progress(Progress::FoldStart { name, fold: f, folds: k, train_samples: train_set.len() });
        let seeds = TrainSeeds::from_seed(derive_seed(cfg.seed, STREAM_FOLD_BASE + f as u64));
        let ckpt = ckpt_dir.map(|d| d.join(format!("fold{f}.ckpt")));
        let outcome = train(cfg, &train_set, seeds, ckpt.as_deref(), |stats| {
            progress(Progress::Epoch { name, fold: f, stats: *stats })
        })?;
        for id in &fold.test {
            let s = &data.originals[data.index_of(id)];
            let raw = segment(&outcome.model, &s.image)?;
            let post = postprocess(&raw, &cfg.postprocess).mask;
            rows.push(ImageRow {
                fold: f,
                id: id.clone(),
                raw: evaluate(&s.mask, &raw)?,
                post: evaluate(&s.mask, &post)?,
            });
        }
        folds.push(FoldSummary {
            fold: f,
            test: fold.test.clone(),
            train_samples: train_set.len(),
            seeds,
            history: outcome.history,
        });
    }
    Ok(ExperimentReport {
        name: name.to_string(),
        config: cfg.clone(),
        before_postprocess: Aggregate::from_reports(rows.iter().map(|r| &r.raw)),
        after_postprocess: Aggregate::from_reports(rows.iter().map(|r| &r.post)),
        folds,
        rows,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum AblationTable {
    /// Module grid: base, +PDC, +SE, +PDC+SE, +PDC+SE+post-processing.
    Modules,
    /// Loss grid with the full network and no post-processing.
    Losses,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub table: AblationTable,
    pub label: String,
    pub enable_pdc: bool,
    pub enable_se: bool,
    pub postprocess: bool,
    pub loss: LossKind,
    /// Post-processed metrics when `postprocess` is set, raw otherwise.
    pub metrics: Aggregate,
    /// Directory name of the underlying cross-validation report.
    pub report: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub split: FoldSplit,
    #[serde(skip)]
    pub reports: Vec<ExperimentReport>,
}

/// `(label, enable_pdc, enable_se, postprocess, loss)` for every grid row.
pub fn ablation_grid(base_loss: LossKind) -> Vec<(AblationTable, &'static str, bool, bool, bool, LossKind)> {
    use AblationTable::*;
    vec![
        (Modules, "base", false, false, false, base_loss),
        (Modules, "base+pdc", true, false, false, base_loss),
        (Modules, "base+se", false, true, false, base_loss),
        (Modules, "base+pdc+se", true, true, false, base_loss),
        (Modules, "base+pdc+se+postprocess", true, true, true, base_loss),
        (Losses, "ssim", true, true, false, LossKind::Ssim),
        (Losses, "bce", true, true, false, LossKind::Bce),
        (Losses, "dice", true, true, false, LossKind::Dice),
    ]
}

fn run_name(pdc: bool, se: bool, loss: LossKind) -> String {
    format!("pdc-{}_se-{}_{loss}", u8::from(pdc), u8::from(se))
}

/// Runs both grids on one prepared dataset. Rows that share a network and
/// loss share one cross-validation run (post-processing only changes which
/// metric block is reported).
pub fn ablate(
    cfg: &TrainConfig,
    data: &PreparedData,
    ckpt_root: Option<&Path>,
    progress: &mut dyn FnMut(Progress<'_>),
) -> Result<AblationReport> {
    let mut reports: Vec<ExperimentReport> = Vec::new();
    let mut rows = Vec::new();
    for (table, label, pdc, se, post, loss) in ablation_grid(cfg.loss) {
        let name = run_name(pdc, se, loss);
        let idx = match reports.iter().position(|r| r.name == name) {
            Some(i) => i,
            None => {
                let mut row_cfg = cfg.clone();
                row_cfg.model.enable_pdc = pdc;
                row_cfg.model.enable_se = se;
                row_cfg.loss = loss;
                let dir = ckpt_root.map(|r| r.join(&name));
                reports.push(cross_validate(&row_cfg, data, &name, dir.as_deref(), progress)?);
                reports.len() - 1
            }
        };
        let r = &reports[idx];
        rows.push(AblationRow {
            table,
            label: label.to_string(),
            enable_pdc: pdc,
            enable_se: se,
            postprocess: post,
            loss,
            metrics: if post { r.after_postprocess } else { r.before_postprocess },
            report: name,
        });
    }
    Ok(AblationReport {
        rows,
        split: data.split.clone(),
        reports,
    })
}

impl AblationReport {
    /// `table,label,pdc,se,postprocess,loss,dice_mean,dice_sd,…,mhd_mean,mhd_sd`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "table,label,pdc,se,postprocess,loss,dice_mean,dice_sd,iou_mean,iou_sd,acc_mean,acc_sd,mhd_mean,mhd_sd\n",
        );
        for r in &self.rows {
            let m = &r.metrics;
            let table = match r.table {
                AblationTable::Modules => "modules",
                AblationTable::Losses => "losses",
            };
            let _ = writeln!(
                s,
                "{table},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.label,
                r.enable_pdc,
                r.enable_se,
                r.postprocess,
                r.loss,
                m.dice.mean,
                m.dice.sd,
                m.iou.mean,
                m.iou.sd,
                m.acc.mean,
                m.acc.sd,
                m.mhd.mean,
                m.mhd.sd
            );
        }
        s
    }

    /// Writes `ablation.csv`, `ablation.json` and one report directory per
    /// distinct run.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("ablation.csv"), self.to_csv())?;
        std::fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(self)? + "\n")?;
        for r in &self.reports {
            r.write(&dir.join(&r.name))?;
        }
        Ok(())
    }

    pub fn rows_of(&self, table: AblationTable) -> impl Iterator<Item = &AblationRow> {
        self.rows.iter().filter(move |r| r.table == table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_sd_uses_sample_deviation() {
        let m = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_sd(&[7.0]).sd, 0.0);
    }

    #[test]
    fn grid_shape() {
        let g = ablation_grid(LossKind::Dice);
        assert_eq!(g.iter().filter(|r| r.0 == AblationTable::Modules).count(), 5);
        assert_eq!(g.iter().filter(|r| r.0 == AblationTable::Losses).count(), 3);
        assert_eq!(g[0], (AblationTable::Modules, "base", false, false, false, LossKind::Dice));
        assert_eq!(g[4].4, true);
    }
}
