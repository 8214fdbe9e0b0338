use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::filter::RecordFilter;
use super::manifest::{ImageRecord, Manifest, SetKind, Source};
use super::{with_workers, PipelineError};
use crate::corr::{image_curve, CorrelationCurve, CurveOptions};
use crate::cppn::ImageRgb;
use crate::stats::CurveSet;

/// A curve set together with the records behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSetReport {
    pub set: CurveSet,
    /// Ids of the records whose curves are in `set`, in the same order.
    pub ids: Vec<String>,
    /// Constant images, left out of `set`.
    pub degenerate: Vec<String>,
}

fn load_curve(
    manifest: &Manifest,
    base_dir: &Path,
    record: &ImageRecord,
    options: &CurveOptions,
) -> Result<Option<CorrelationCurve>, PipelineError> {
    let unreadable = |reason: String| PipelineError::Unreadable {
        id: record.id.clone(),
        reason,
    };
    let path = manifest.resolve(base_dir, record);
    let img = ImageRgb::open(&path).map_err(|e| unreadable(format!("{}: {e}", path.display())))?;
    image_curve(&img, options).map_err(|e| unreadable(e.to_string()))
}

/// Curves of every matching record of the requested set kind, ordered by
/// record id.
pub fn curve_set(
    manifest: &Manifest,
    base_dir: &Path,
    filter: &RecordFilter,
    grayscale: bool,
    options: &CurveOptions,
    workers: usize,
) -> Result<CurveSetReport, PipelineError> {
    let kind = if grayscale {
        SetKind::Grayscale
    } else {
        SetKind::Colour
    };
    let mut records: Vec<&ImageRecord> = manifest
        .records
        .iter()
        .filter(|r| r.set_kind == kind && filter.matches(r))
        .collect();
    records.sort_by(|a, b| a.id.cmp(&b.id));

    let curves: Vec<Result<Option<CorrelationCurve>, PipelineError>> = with_workers(workers, || {
        records
            .par_iter()
            .map(|r| load_curve(manifest, base_dir, r, options))
            .collect()
    });

    let mut set = CurveSet::new(filter.expression(), Vec::new());
    let mut ids = Vec::new();
    let mut degenerate = Vec::new();
    for (record, curve) in records.iter().zip(curves) {
        match curve? {
            Some(c) => {
                set.curves.push(c);
                ids.push(record.id.clone());
            }
            None => degenerate.push(record.id.clone()),
        }
    }
    if set.is_empty() {
        return Err(PipelineError::EmptySet(filter.expression().to_string()));
    }
    Ok(CurveSetReport {
        set,
        ids,
        degenerate,
    })
}

/// Mean correlation curve of one `(N, L)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupCurve {
    pub neurons: usize,
    pub layers: usize,
    pub n_images: usize,
    pub mean: Vec<Option<f64>>,
}

/// Mean curves of the generated colour images grouped by neuron budget and
/// layer count, ordered by `(N, L)`.
pub fn group_report(
    manifest: &Manifest,
    base_dir: &Path,
    options: &CurveOptions,
    workers: usize,
) -> Result<Vec<GroupCurve>, PipelineError> {
    let mut cells: BTreeMap<(usize, usize), Vec<&ImageRecord>> = BTreeMap::new();
    for r in manifest
        .records
        .iter()
        .filter(|r| r.source == Source::Generated && r.set_kind == SetKind::Colour)
    {
        let spec = r.spec.as_ref().expect("generated record has a spec");
        cells.entry((spec.neurons, spec.layers)).or_default().push(r);
    }
    let mut groups = Vec::new();
    for ((neurons, layers), mut records) in cells {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        let curves: Vec<Result<Option<CorrelationCurve>, PipelineError>> = with_workers(workers, || {
            records
                .par_iter()
                .map(|r| load_curve(manifest, base_dir, r, options))
                .collect()
        });
        let mut set = CurveSet::new(format!("N={neurons},L={layers}"), Vec::new());
        for c in curves {
            if let Some(c) = c? {
                set.curves.push(c);
            }
        }
        groups.push(GroupCurve {
            neurons,
            layers,
            n_images: set.len(),
            mean: set.mean_curve(options.bins),
        });
    }
    Ok(groups)
}

/// Long-format CSV `N,L,n_images,bin,mean_rho` for bins `0..max_bin`.
pub fn write_group_report<W: Write>(
    groups: &[GroupCurve],
    max_bin: usize,
    out: W,
) -> Result<(), PipelineError> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["N", "L", "n_images", "bin", "mean_rho"])?;
    for g in groups {
        for (bin, mean) in g.mean.iter().enumerate().take(max_bin) {
            wtr.write_record([
                g.neurons.to_string(),
                g.layers.to_string(),
                g.n_images.to_string(),
                bin.to_string(),
                mean.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
