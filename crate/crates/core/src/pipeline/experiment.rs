use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{ImageRecord, Manifest, SetKind};
use super::PipelineError;
use crate::corr::luminance;
use crate::cppn::ImageRgb;

/// A sampled colour image and its materialized grayscale twin.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPair {
    pub colour: ImageRecord,
    pub grayscale: ImageRecord,
}

/// Uniform integer in `0..bound` by rejection on the top of the range.
fn below(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    let zone = u64::MAX - u64::MAX % bound;
    loop {
        let v = rng.next_u64();
        if v < zone {
            return v % bound;
        }
    }
}

/// Draws `n` generated colour records without replacement (partial
/// Fisher–Yates over manifest order, ChaCha8 seeded with `seed`) and makes
/// sure each has a grayscale twin on disk and in the manifest.
///
/// The twin stores `round(255 * luminance)` in all three channels.
pub fn sample_experiment_set(
    manifest: &mut Manifest,
    base_dir: &Path,
    n: usize,
    seed: u64,
) -> Result<Vec<ExperimentPair>, PipelineError> {
    let mut pool: Vec<ImageRecord> = manifest.generated_colour().cloned().collect();
    if n == 0 || n > pool.len() {
        return Err(PipelineError::SampleTooLarge {
            requested: n,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let j = i + below(&mut rng, (pool.len() - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(n);

    let mut pairs = Vec::with_capacity(n);
    for colour in pool {
        let spec = colour.spec.expect("generated record has a spec");
        let mut twin = ImageRecord::generated(spec, SetKind::Grayscale);
        if let Some(existing) = manifest.get(&twin.id) {
            twin = existing.clone();
        }
        let dest = manifest.resolve(base_dir, &twin);
        if !dest.exists() {
            let src = manifest.resolve(base_dir, &colour);
            let img = ImageRgb::open(&src).map_err(|e| PipelineError::image(&src, e))?;
            let png = luminance(&img)
                .to_gray_rgb()
                .encode_png()
                .map_err(|e| PipelineError::image(&dest, e))?;
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
            }
            fs::write(&dest, png).map_err(|e| PipelineError::io(&dest, e))?;
        }
        manifest.insert(twin.clone());
        pairs.push(ExperimentPair {
            colour,
            grayscale: twin,
        });
    }
    Ok(pairs)
}
