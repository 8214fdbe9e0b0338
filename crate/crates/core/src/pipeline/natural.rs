//! Natural-image ingestion: scale the short side to the target size, then
//! center-crop to a square.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use walkdir::WalkDir;

use super::manifest::{natural_id, ImageRecord, Manifest, ManifestHeader, SetKind, Source, MANIFEST_FILE};
use super::PipelineError;
use crate::cppn::ImageRgb;

/// One line of the ingest report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestRow {
    pub path: String,
    pub action: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome {
    pub manifest: Manifest,
    pub report: Vec<IngestRow>,
}

impl IngestOutcome {
    pub fn write_report<W: Write>(&self, out: W) -> Result<(), PipelineError> {
        let mut wtr = csv::Writer::from_writer(out);
        for row in &self.report {
            wtr.serialize(row)?;
        }
        if self.report.is_empty() {
            wtr.write_record(["path", "action", "reason"])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Dimensions after scaling the shorter side to `target`; the longer side
/// is rounded to the nearest integer.
pub fn scaled_dims(width: usize, height: usize, target: usize) -> (usize, usize) {
    let short = width.min(height) as f64;
    let scale = |d: usize| ((d * target) as f64 / short).round() as usize;
    if width <= height {
        (target, scale(height))
    } else {
        (scale(width), target)
    }
}

/// Bilinear resampling with pixel centers at half-integers; edges clamp.
pub fn resize_bilinear(img: &ImageRgb, width: usize, height: usize) -> ImageRgb {
    if (width, height) == (img.width, img.height) {
        return img.clone();
    }
    let taps = |dst: usize, src_len: usize, dst_len: usize| {
        (0..dst)
            .map(|i| {
                let s = ((i as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5)
                    .clamp(0.0, (src_len - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(src_len - 1);
                (lo, hi, s - lo as f64)
            })
            .collect::<Vec<_>>()
    };
    let xs = taps(width, img.width, width);
    let ys = taps(height, img.height, height);
    let mut data = Vec::with_capacity(width * height * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let (a, b) = (img.pixel(x0, y0), img.pixel(x1, y0));
            let (c, d) = (img.pixel(x0, y1), img.pixel(x1, y1));
            for ch in 0..3 {
                let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
                let bottom = c[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageRgb::new(width, height, data)
}

/// Central `size x size` window, offsets `floor((dim - size) / 2)`.
pub fn center_crop(img: &ImageRgb, size: usize) -> ImageRgb {
    assert!(img.width >= size && img.height >= size, "crop larger than image");
    let left = (img.width - size) / 2;
    let top = (img.height - size) / 2;
    let mut data = Vec::with_capacity(size * size * 3);
    for y in top..top + size {
        let start = (y * img.width + left) * 3;
        data.extend_from_slice(&img.data[start..start + size * 3]);
    }
    ImageRgb::new(size, size, data)
}

/// Converts every decodable image under `in_dir` (recursively, in path
/// order) to a `size x size` PNG under `out_dir/natural`, writes
/// `out_dir/manifest.jsonl` and `out_dir/ingest_report.csv`.
///
/// The first directory level below `in_dir` is the record's category.
/// Images smaller than `size` on either side, and files that fail to
/// decode, are skipped and reported.
pub fn ingest_natural(in_dir: &Path, out_dir: &Path, size: usize) -> Result<IngestOutcome, PipelineError> {
    let natural = out_dir.join("natural");
    fs::create_dir_all(&natural).map_err(|e| PipelineError::io(&natural, e))?;
    let mut manifest = Manifest::new(ManifestHeader::new(None, Vec::new(), size, size));
    let mut report = Vec::new();

    let entries = WalkDir::new(in_dir).sort_by_file_name();
    for entry in entries {
        let entry = entry.map_err(|e| PipelineError::Manifest(e.to_string()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let relative = entry
            .path()
            .strip_prefix(in_dir)
            .expect("walk stays below root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>();
        let rel = relative.join("/");
        let skip = |reason: String| IngestRow {
            path: rel.clone(),
            action: "skipped".into(),
            reason,
        };
        let img = match image::open(entry.path()) {
            Ok(img) => ImageRgb::from_rgb_image(img.to_rgb8()),
            Err(e) => {
                report.push(skip(format!("undecodable: {e}")));
                continue;
            }
        };
        if img.width < size || img.height < size {
            report.push(skip("undersized".into()));
            continue;
        }
        let (w, h) = scaled_dims(img.width, img.height, size);
        let out = center_crop(&resize_bilinear(&img, w, h), size);
        let id = natural_id(&rel, SetKind::Colour);
        let record = ImageRecord {
            path: format!("natural/{id}.png"),
            id,
            source: Source::Natural,
            spec: None,
            seed: None,
            set_kind: SetKind::Colour,
            category: (relative.len() > 1).then(|| relative[0].clone()),
            tags: BTreeSet::new(),
        };
        let dest = out_dir.join(&record.path);
        let png = out.encode_png().map_err(|e| PipelineError::image(&dest, e))?;
        fs::write(&dest, png).map_err(|e| PipelineError::io(&dest, e))?;
        manifest.insert(record);
        report.push(IngestRow {
            path: rel,
            action: "ingested".into(),
            reason: String::new(),
        });
    }

    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    let outcome = IngestOutcome { manifest, report };
    let report_path = out_dir.join("ingest_report.csv");
    let file = fs::File::create(&report_path).map_err(|e| PipelineError::io(&report_path, e))?;
    outcome.write_report(file)?;
    Ok(outcome)
}
