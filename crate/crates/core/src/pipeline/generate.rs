use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{ImageRecord, Manifest, ManifestHeader, SetKind, MANIFEST_FILE};
use super::{with_workers, PipelineError};
use crate::arch::{layer_sizes, ArchitectureSpec, GridLists};
use crate::cppn::{ImageRgb, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub width: usize,
    pub height: usize,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            workers: 0,
        }
    }
}

/// Builds the manifest of a grid x seeds dataset without rendering. Every
/// seed is applied to every architecture.
pub fn plan_dataset(
    grid: &GridLists,
    seeds: &[u64],
    width: usize,
    height: usize,
) -> Result<Manifest, PipelineError> {
    if seeds.is_empty() {
        return Err(PipelineError::Options("seed list is empty".into()));
    }
    if width == 0 || height == 0 {
        return Err(PipelineError::Options("image size must be non-zero".into()));
    }
    let specs = grid.specs()?;
    for spec in &specs {
        layer_sizes(spec)?;
    }
    let mut manifest = Manifest::new(ManifestHeader::new(
        Some(grid.clone()),
        seeds.to_vec(),
        width,
        height,
    ));
    manifest.records.reserve(specs.len() * seeds.len());
    for spec in &specs {
        for &seed in seeds {
            manifest
                .records
                .push(ImageRecord::generated(spec.with_seed(seed), SetKind::Colour));
        }
    }
    manifest.validate()?;
    Ok(manifest)
}

pub fn render_record(spec: &ArchitectureSpec, width: usize, height: usize) -> Result<ImageRgb, PipelineError> {
    Ok(Network::build(spec)?.render(width, height))
}

/// Renders every `(spec, seed)` of the grid to PNG under `out_dir/images`
/// and writes `out_dir/manifest.jsonl`.
///
/// On failure, images created by this call and the partial manifest are
/// removed.
pub fn generate_dataset(
    grid: &GridLists,
    seeds: &[u64],
    out_dir: &Path,
    options: RenderOptions,
) -> Result<Manifest, PipelineError> {
    let manifest = plan_dataset(grid, seeds, options.width, options.height)?;
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(|e| PipelineError::io(&images, e))?;

    let results: Vec<Result<Option<PathBuf>, PipelineError>> = with_workers(options.workers, || {
        manifest
            .records
            .par_iter()
            .map(|record| {
                let spec = record.spec.as_ref().expect("generated record has a spec");
                let png = render_record(spec, options.width, options.height)?
                    .encode_png()
                    .map_err(|e| PipelineError::image(Path::new(&record.path), e))?;
                let path = manifest.resolve(out_dir, record);
                let created = !path.exists();
                fs::write(&path, png).map_err(|e| PipelineError::io(&path, e))?;
                Ok(created.then_some(path))
            })
            .collect()
    });

    let mut created = Vec::new();
    let mut failure = None;
    for r in results {
        match r {
            Ok(Some(path)) => created.push(path),
            Ok(None) => {}
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }
    let saved = match failure {
        Some(e) => Err(e),
        None => manifest.save(&out_dir.join(MANIFEST_FILE)),
    };
    if let Err(e) = saved {
        for path in created {
            let _ = fs::remove_file(path);
        }
        return Err(e);
    }
    Ok(manifest)
}
