use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::imgcore::load_image;
use crate::metrics::{edge_loss, mae, psnr, ssim, EdgeLossConfig, PSNR_CAP_DB};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub mae: f64,
    pub edge_total: f64,
    pub edge_mse: f64,
    pub edge_x: f64,
    pub edge_y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Sorted by id.
    pub rows: Vec<EvalRow>,
    pub mean: EvalRow,
}

/// Image files (PNG, PFM) in `dir` keyed by path relative to it, without
/// extension.
fn image_ids(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    fn visit(root: &Path, dir: &Path, out: &mut BTreeMap<String, PathBuf>) -> Result<()> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                visit(root, &path, out)?;
                continue;
            }
            let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
            if !matches!(ext.as_deref(), Some("png" | "pfm")) {
                continue;
            }
            let rel = path.strip_prefix(root).expect("under root").with_extension("");
            let id = rel.to_string_lossy().replace('\\', "/");
            if out.insert(id.clone(), path.clone()).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate image id {id} in {}", root.display())));
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    visit(dir, dir, &mut out)?;
    Ok(out)
}

/// Scores every prediction against the ground truth with the same id.
/// Ids present on only one side are reported together as an error.
pub fn evaluate(pred_dir: &Path, gt_dir: &Path, edge: &EdgeLossConfig) -> Result<EvalReport> {
    let pred = image_ids(pred_dir)?;
    let gt = image_ids(gt_dir)?;
    let only_pred: Vec<&String> = pred.keys().filter(|k| !gt.contains_key(*k)).collect();
    let only_gt: Vec<&String> = gt.keys().filter(|k| !pred.contains_key(*k)).collect();
    if !only_pred.is_empty() || !only_gt.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "unmatched ids; prediction only: {only_pred:?}; ground truth only: {only_gt:?}"
        )));
    }
    let pairs: Vec<(&String, &PathBuf, &PathBuf)> = pred.iter().map(|(id, p)| (id, p, &gt[id])).collect();
    let rows: Vec<EvalRow> = pairs
        .par_iter()
        .map(|(id, p, g)| {
            let a = load_image(p, None)?;
            let b = load_image(g, None)?;
            let e = edge_loss(&a, &b, edge)?;
            Ok(EvalRow {
                id: (*id).clone(),
                psnr: psnr(&a, &b, PSNR_CAP_DB)?,
                ssim: ssim(&a, &b)?,
                mae: mae(&a, &b)?,
                edge_total: e.total,
                edge_mse: e.mse,
                edge_x: e.x,
                edge_y: e.y,
            })
        })
        .collect::<Result<_>>()?;
    let n = rows.len().max(1) as f64;
    let avg = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let mean = EvalRow {
        id: "mean".into(),
        psnr: avg(|r| r.psnr),
        ssim: avg(|r| r.ssim),
        mae: avg(|r| r.mae),
        edge_total: avg(|r| r.edge_total),
        edge_mse: avg(|r| r.edge_mse),
        edge_x: avg(|r| r.edge_x),
        edge_y: avg(|r| r.edge_y),
    };
    Ok(EvalReport { rows, mean })
}

/// Per-image rows followed by the mean row.
pub fn write_report_csv(report: &EvalReport, out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let enc = |e: csv::Error| Error::Encode { path: "csv report".into(), message: e.to_string() };
    for row in report.rows.iter().chain(std::iter::once(&report.mean)) {
        w.serialize(row).map_err(enc)?;
    }
    w.flush().map_err(|e| Error::Encode { path: "csv report".into(), message: e.to_string() })?;
    Ok(())
}
