//! JSON-lines dataset manifest.
//!
//! The first line is a header object (`"format": "patternscope-manifest"`)
//! echoing the grid and seed list; every following line is one
//! [`ImageRecord`]. Record paths are relative to the manifest's directory.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::arch::{ArchitectureSpec, GridLists};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
const FORMAT_TAG: &str = "patternscope-manifest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Generated,
    Natural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Colour,
    Grayscale,
}

impl SetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SetKind::Colour => "colour",
            SetKind::Grayscale => "grayscale",
        }
    }
}

impl std::str::FromStr for SetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "colour" | "color" => Ok(SetKind::Colour),
            "grayscale" | "greyscale" | "gray" | "grey" => Ok(SetKind::Grayscale),
            other => Err(format!("unknown set kind `{other}` (colour | grayscale)")),
        }
    }
}

impl std::fmt::Display for SetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One image file with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ArchitectureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub path: String,
    pub set_kind: SetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    /// Participants who tagged the image as aesthetic.
    #[serde(default)]
    pub tags: BTreeSet<String>,
}

impl ImageRecord {
    pub fn generated(spec: ArchitectureSpec, set_kind: SetKind) -> Self {
        let id = generated_id(&spec, set_kind);
        Self {
            path: format!("images/{id}.png"),
            id,
            source: Source::Generated,
            seed: Some(spec.seed),
            spec: Some(spec),
            set_kind,
            category: None,
            tags: BTreeSet::new(),
        }
    }

    pub fn is_tagged(&self) -> bool {
        !self.tags.is_empty()
    }
}

/// Short hash of the canonical spec JSON, the seed and the set kind.
pub fn generated_id(spec: &ArchitectureSpec, set_kind: SetKind) -> String {
    let canonical = serde_json::to_string(spec).expect("spec serializes");
    short_hash(&format!("{canonical}|{}|{}", spec.seed, set_kind.as_str()))
}

/// Short hash of the source path (relative to the ingest root) and kind.
pub fn natural_id(relative: &str, set_kind: SetKind) -> String {
    short_hash(&format!("natural|{relative}|{}", set_kind.as_str()))
}

fn short_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridLists>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub width: usize,
    pub height: usize,
}

impl ManifestHeader {
    pub fn new(grid: Option<GridLists>, seeds: Vec<u64>, width: usize, height: usize) -> Self {
        Self {
            format: FORMAT_TAG.to_string(),
            version: 1,
            grid,
            seeds,
            width,
            height,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<ImageRecord>,
}

impl Manifest {
    pub fn new(header: ManifestHeader) -> Self {
        Self {
            header,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    pub fn generated_colour(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records
            .iter()
            .filter(|r| r.source == Source::Generated && r.set_kind == SetKind::Colour)
    }

    /// Adds `record` unless a record with the same id exists.
    pub fn insert(&mut self, record: ImageRecord) -> bool {
        if self.contains(&record.id) {
            return false;
        }
        self.records.push(record);
        true
    }

    /// Checks id uniqueness and the provenance rules of each source.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(PipelineError::Manifest(format!("duplicate id {}", r.id)));
            }
            let ok = match r.source {
                Source::Generated => r.spec.is_some() && r.seed.is_some(),
                Source::Natural => r.spec.is_none() && r.seed.is_none(),
            };
            if !ok {
                return Err(PipelineError::Manifest(format!(
                    "record {} has inconsistent provenance",
                    r.id
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, base_dir: &Path, record: &ImageRecord) -> PathBuf {
        base_dir.join(&record.path)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), PipelineError> {
        let line = serde_json::to_string(&self.header)?;
        writeln!(out, "{line}")?;
        for r in &self.records {
            writeln!(out, "{}", serde_json::to_string(r)?)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self, PipelineError> {
        let mut lines = BufReader::new(input).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| PipelineError::Manifest("missing header line".into()))??;
        let header: ManifestHeader = serde_json::from_str(&header_line)
            .map_err(|e| PipelineError::Manifest(format!("line 1: {e}")))?;
        if header.format != FORMAT_TAG {
            return Err(PipelineError::Manifest(format!(
                "line 1: unexpected format `{}`",
                header.format
            )));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(&line)
                .map_err(|e| PipelineError::Manifest(format!("line {}: {e}", i + 2)))?;
            records.push(record);
        }
        let manifest = Self { header, records };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
        Self::read_from(file)
    }

    /// Writes through a temporary sibling file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let tmp = path.with_extension("jsonl.tmp");
        let result = (|| {
            let file = File::create(&tmp).map_err(|e| PipelineError::io(&tmp, e))?;
            self.write_to(BufWriter::new(file))?;
            fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
        })();
        if result.is_err() {
            let _ = fs::remove_file(&tmp);
        }
        result
    }

    /// Replaces every record's tags with the rows of a tag export CSV
    /// (`record_id,participant_id,set_kind,tagged`). Rows with `tagged`
    /// false are ignored. Returns the number of applied tags.
    pub fn apply_tag_export<R: Read>(&mut self, export: R) -> Result<usize, PipelineError> {
        #[derive(Deserialize)]
        struct Row {
            record_id: String,
            participant_id: String,
            #[allow(dead_code)]
            set_kind: SetKind,
            tagged: bool,
        }
        for r in &mut self.records {
            r.tags.clear();
        }
        let mut applied = 0;
        let mut rdr = csv::Reader::from_reader(export);
        for row in rdr.deserialize() {
            let row: Row = row?;
            if !row.tagged {
                continue;
            }
            let record = self
                .records
                .iter_mut()
                .find(|r| r.id == row.record_id)
                .ok_or_else(|| PipelineError::UnknownRecord(row.record_id.clone()))?;
            if record.tags.insert(row.participant_id) {
                applied += 1;
            }
        }
        Ok(applied)
    }
}
