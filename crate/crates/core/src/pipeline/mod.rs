//! Library side of the batch CLI: generation config, dataset generation,
//! evaluation reports and PSF export.

pub mod config;
pub mod evaluate;
pub mod generate;
pub mod psf_export;

pub use config::{GenerationConfig, InputEntry, PsfGridConfig, PRESET_PAPER_SYNTHIA};
pub use evaluate::{evaluate, write_report_csv, EvalReport, EvalRow};
pub use generate::{draw_frame, generate, FrameDraw, FrameRecord, Manifest, MANIFEST_FILE};
pub use psf_export::{export_bank, psf_gallery, psf_mosaic, PsfExportManifest};

use crate::error::Error;

/// Process exit code for a failed command: 2 for configuration and
/// parameter errors, 1 otherwise.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidParameter(_) | Error::InvalidCamera(_) => 2,
        _ => 1,
    }
}
