//! Dataset lifecycle: grid rendering, natural-image ingestion, manifests,
//! curve extraction per image set and experiment sampling.

mod curves;
mod experiment;
mod filter;
mod generate;
mod manifest;
mod natural;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use curves::{curve_set, group_report, write_group_report, CurveSetReport, GroupCurve};
pub use experiment::{sample_experiment_set, ExperimentPair};
pub use filter::RecordFilter;
pub use generate::{generate_dataset, plan_dataset, render_record, RenderOptions};
pub use manifest::{
    generated_id, natural_id, ImageRecord, Manifest, ManifestHeader, SetKind, Source,
    MANIFEST_FILE,
};
pub use natural::{center_crop, ingest_natural, resize_bilinear, scaled_dims, IngestOutcome, IngestRow};

use crate::arch::ArchError;
use crate::corr::CorrError;
use crate::cppn::NetworkError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Stream(#[from] std::io::Error),
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Corr(#[from] CorrError),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("unknown record {0}")]
    UnknownRecord(String),
    #[error("record {id} is unreadable: {reason}")]
    Unreadable { id: String, reason: String },
    #[error("empty set: no usable records match `{0}`")]
    EmptySet(String),
    #[error("invalid filter: {0}")]
    Filter(String),
    #[error("requested {requested} images but only {available} generated colour records exist")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("invalid option: {0}")]
    Options(String),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn image(path: &Path, source: image::ImageError) -> Self {
        Self::Image {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Runs `f` on a dedicated pool of `workers` threads; 0 means one per core.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(f)
}
