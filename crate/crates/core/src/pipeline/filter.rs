//! Record selection expressions such as `L=3,N=100` or `tagged=true`.
//!
//! An expression is a comma-separated conjunction of `key=value` clauses.
//! `all` (or an empty string) selects everything.
//!
//! | key        | matches                                   |
//! |------------|-------------------------------------------|
//! | `L`, `N`   | hidden layers / neuron budget             |
//! | `mu`, `omega`, `alpha` | hyper-parameter values        |
//! | `seed`     | RNG seed                                  |
//! | `source`   | `generated` or `natural`                  |
//! | `kind`     | `colour` or `grayscale`                   |
//! | `category` | natural-image category                    |
//! | `tagged`   | `true` / `false`: tagged by anyone        |
//! | `tagged_by`| tagged by the given participant           |
//! | `id`       | exact record id                           |

use std::fmt;
use std::str::FromStr;

use super::manifest::{ImageRecord, SetKind, Source};
use super::PipelineError;

#[derive(Debug, Clone, PartialEq)]
enum Clause {
    Layers(usize),
    Neurons(usize),
    Mu(f64),
    Omega(f64),
    Alpha(f64),
    Seed(u64),
    Source(Source),
    Kind(SetKind),
    Category(String),
    Tagged(bool),
    TaggedBy(String),
    Id(String),
}

impl Clause {
    fn matches(&self, r: &ImageRecord) -> bool {
        let spec = r.spec.as_ref();
        match self {
            Clause::Layers(v) => spec.is_some_and(|s| s.layers == *v),
            Clause::Neurons(v) => spec.is_some_and(|s| s.neurons == *v),
            Clause::Mu(v) => spec.is_some_and(|s| s.mu == *v),
            Clause::Omega(v) => spec.is_some_and(|s| s.omega == *v),
            Clause::Alpha(v) => spec.is_some_and(|s| s.alpha == *v),
            Clause::Seed(v) => r.seed == Some(*v),
            Clause::Source(v) => r.source == *v,
            Clause::Kind(v) => r.set_kind == *v,
            Clause::Category(v) => r.category.as_deref() == Some(v.as_str()),
            Clause::Tagged(v) => r.is_tagged() == *v,
            Clause::TaggedBy(p) => r.tags.contains(p),
            Clause::Id(v) => r.id == *v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordFilter {
    expr: String,
    clauses: Vec<Clause>,
}

impl RecordFilter {
    pub fn all() -> Self {
        Self {
            expr: "all".into(),
            clauses: Vec::new(),
        }
    }

    pub fn matches(&self, record: &ImageRecord) -> bool {
        self.clauses.iter().all(|c| c.matches(record))
    }

    pub fn expression(&self) -> &str {
        &self.expr
    }

    /// Set kind pinned by a `kind=` clause, if any.
    pub fn kind(&self) -> Option<SetKind> {
        self.clauses.iter().rev().find_map(|c| match c {
            Clause::Kind(k) => Some(*k),
            _ => None,
        })
    }
}

impl fmt::Display for RecordFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.expr)
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
    value
        .parse()
        .map_err(|_| PipelineError::Filter(format!("bad value `{value}` for `{key}`")))
}

impl FromStr for RecordFilter {
    type Err = PipelineError;

    fn from_str(expr: &str) -> Result<Self, Self::Err> {
        let trimmed = expr.trim();
        if trimmed.is_empty() || trimmed == "all" {
            return Ok(Self::all());
        }
        let mut clauses = Vec::new();
        for part in trimmed.split(',') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| PipelineError::Filter(format!("expected key=value, got `{part}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let clause = match key {
                "L" => Clause::Layers(parse(key, value)?),
                "N" => Clause::Neurons(parse(key, value)?),
                "mu" => Clause::Mu(parse(key, value)?),
                "omega" => Clause::Omega(parse(key, value)?),
                "alpha" => Clause::Alpha(parse(key, value)?),
                "seed" => Clause::Seed(parse(key, value)?),
                "source" => Clause::Source(match value {
                    "generated" => Source::Generated,
                    "natural" => Source::Natural,
                    _ => return Err(PipelineError::Filter(format!("unknown source `{value}`"))),
                }),
                "kind" => Clause::Kind(value.parse().map_err(PipelineError::Filter)?),
                "category" => Clause::Category(value.to_string()),
                "tagged" => Clause::Tagged(parse(key, value)?),
                "tagged_by" => Clause::TaggedBy(value.to_string()),
                "id" => Clause::Id(value.to_string()),
                _ => return Err(PipelineError::Filter(format!("unknown key `{key}`"))),
            };
            clauses.push(clause);
        }
        Ok(Self {
            expr: trimmed.to_string(),
            clauses,
        })
    }
}
