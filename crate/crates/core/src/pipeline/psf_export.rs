use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::io::save_kernel_pfm;
use crate::imgcore::{save_image, BitDepth, Image, Kernel2D};
use crate::psfbank::{build_bank, BankGrids, PsfBank, PsfParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedPsf {
    pub params: PsfParams,
    pub size: usize,
    pub left: String,
    pub right: String,
    pub combined: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsfExportManifest {
    pub kernels: Vec<ExportedPsf>,
    /// Mosaic file name, absent for an empty bank.
    pub mosaic: Option<String>,
    pub mosaic_columns: usize,
}

fn file_stem(p: &PsfParams) -> String {
    format!(
        "psf_n{}_a{:.3}_b{:.3}_k{:.3}_r{:+.1}",
        p.shape.n, p.shape.alpha, p.shape.beta, p.shape.kappa, p.radius
    )
}

/// Writes every bank entry as three PFM kernels plus `psfs.json`.
pub fn export_bank(bank: &PsfBank, dir: &Path) -> Result<PsfExportManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut kernels = Vec::with_capacity(bank.len());
    for psf in bank.entries() {
        let stem = file_stem(&psf.params);
        let names = [format!("{stem}_l.pfm"), format!("{stem}_r.pfm"), format!("{stem}_h.pfm")];
        for (k, name) in [&psf.left, &psf.right, &psf.combined].into_iter().zip(&names) {
            save_kernel_pfm(k, dir.join(name))?;
        }
        let [left, right, combined] = names;
        kernels.push(ExportedPsf { params: psf.params, size: psf.combined.size(), left, right, combined });
    }
    let manifest = PsfExportManifest { kernels, mosaic: None, mosaic_columns: 0 };
    write_manifest(&manifest, dir)?;
    Ok(manifest)
}

fn write_manifest(m: &PsfExportManifest, dir: &Path) -> Result<()> {
    let path = dir.join("psfs.json");
    let text = serde_json::to_string_pretty(m).map_err(|e| Error::Encode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

const GAP: usize = 2;

/// Contact sheet with one cell per entry: left | right | combined, each
/// centered in a square of the largest kernel side and scaled by the
/// cell's maximum tap. Returns `None` for an empty bank.
pub fn psf_mosaic(bank: &PsfBank) -> Option<(Image, usize)> {
    if bank.is_empty() {
        return None;
    }
    let side = bank.entries().iter().map(|p| p.combined.size()).max().unwrap_or(1);
    let cols = (bank.len() as f64).sqrt().ceil() as usize;
    let rows = bank.len().div_ceil(cols);
    let cell_w = 3 * side + 2 * GAP;
    let cell_h = side;
    let w = cols * cell_w + (cols + 1) * GAP;
    let h = rows * cell_h + (rows + 1) * GAP;
    let mut img = Image::zeros(w, h, 1).expect("nonzero size");
    for (i, psf) in bank.entries().iter().enumerate() {
        let (cx, cy) = (GAP + (i % cols) * (cell_w + GAP), GAP + (i / cols) * (cell_h + GAP));
        let ks: [&Kernel2D; 3] = [&psf.left, &psf.right, &psf.combined];
        let peak = ks.iter().map(|k| k.max()).fold(0.0, f64::max);
        let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
        for (j, k) in ks.iter().enumerate() {
            let k = k.embed(side);
            let ox = cx + j * (side + GAP);
            for y in 0..side {
                for x in 0..side {
                    img.set(ox + x, cy + y, 0, (k.get(x, y) * scale).clamp(0.0, 1.0));
                }
            }
        }
    }
    Some((img, cols))
}

/// [`export_bank`] plus an 8-bit `mosaic.png`.
pub fn psf_gallery(grids: &BankGrids, dir: &Path) -> Result<PsfExportManifest> {
    let bank = build_bank(grids)?;
    let mut manifest = export_bank(&bank, dir)?;
    if let Some((img, cols)) = psf_mosaic(&bank) {
        save_image(&img, dir.join("mosaic.png"), BitDepth::Eight)?;
        manifest.mosaic = Some("mosaic.png".into());
        manifest.mosaic_columns = cols;
        write_manifest(&manifest, dir)?;
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::io::load_kernel_pfm;

    #[test]
    fn standard_grid_gives_48_cells() {
        let dir = tempfile::tempdir().unwrap();
        let m = psf_gallery(&BankGrids::standard(vec![4.0]), dir.path()).unwrap();
        assert_eq!(m.kernels.len(), 48);
        assert_eq!(m.mosaic_columns, 7);
        let mosaic = crate::imgcore::load_image(dir.path().join("mosaic.png"), None).unwrap();
        let side = m.kernels[0].size;
        assert_eq!(mosaic.width(), 7 * (3 * side + 2 * GAP) + 8 * GAP);
        assert_eq!(mosaic.height(), 7 * side + 8 * GAP);
        let k = load_kernel_pfm(dir.path().join(&m.kernels[5].combined)).unwrap();
        assert!((k.sum() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn empty_grid_writes_no_mosaic() {
        let dir = tempfile::tempdir().unwrap();
        let m = psf_gallery(&BankGrids::standard(vec![]), dir.path()).unwrap();
        assert!(m.kernels.is_empty() && m.mosaic.is_none());
        assert!(!dir.path().join("mosaic.png").exists());
        assert!(dir.path().join("psfs.json").exists());
    }

    #[test]
    fn cell_normalization_keeps_argmax() {
        let bank = build_bank(&BankGrids::standard(vec![6.0])).unwrap();
        let (img, cols) = psf_mosaic(&bank).unwrap();
        let side = bank.entries()[0].combined.size();
        for (i, psf) in bank.entries().iter().enumerate().take(5) {
            let (cx, cy) = (GAP + (i % cols) * (3 * side + 3 * GAP), GAP + (i / cols) * (side + GAP));
            let ox = cx + 2 * (side + GAP);
            let mut best = (0, 0);
            for y in 0..side {
                for x in 0..side {
                    if img.get(ox + x, cy + y, 0) > img.get(ox + best.0, cy + best.1, 0) {
                        best = (x, y);
                    }
                }
            }
            assert_eq!(best, psf.combined.embed(side).argmax());
        }
    }
}
