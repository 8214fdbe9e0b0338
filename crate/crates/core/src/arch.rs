//! Architecture parametrization: five hyper-parameters to hidden-layer sizes.
//!
//! The relative size of hidden layer `l` (1-based) is
//! `e^(mu*l/L) * (alpha + sin(-omega*l))`. The relative sizes are normalized
//! to the neuron budget `N`, integerized by largest-remainder apportionment
//! and finally clamped so that every layer keeps at least two neurons.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest number of neurons a hidden layer may have.
pub const MIN_LAYER_WIDTH: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArchError {
    #[error("layer count must be at least 1")]
    NoLayers,
    #[error("neuron budget must be at least 1")]
    EmptyBudget,
    #[error("alpha must be finite and > 1, got {0}")]
    Alpha(f64),
    #[error("{name} must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("grid parameter list `{0}` is empty")]
    EmptyGrid(&'static str),
}

/// Hyper-parameters of one generated image family plus the RNG seed that
/// realizes its weights.
///
/// Serialized with the keys `L`, `N`, `mu`, `omega`, `alpha`, `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    /// Number of hidden layers sized by the parametrization.
    #[serde(rename = "L")]
    pub layers: usize,
    /// Total hidden-neuron budget. The RGB output head is not counted.
    #[serde(rename = "N")]
    pub neurons: usize,
    /// Exponential growth (positive) or decay (negative) rate across depth.
    pub mu: f64,
    /// Frequency of the bottleneck oscillation.
    pub omega: f64,
    /// Oscillation offset; must exceed 1 so every relative size is positive.
    pub alpha: f64,
    /// Seed of the weight generator. Grid enumeration leaves it at 0.
    #[serde(default)]
    pub seed: u64,
}

impl ArchitectureSpec {
    pub fn new(layers: usize, neurons: usize, mu: f64, omega: f64, alpha: f64) -> Self {
        Self {
            layers,
            neurons,
            mu,
            omega,
            alpha,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        if self.layers < 1 {
            return Err(ArchError::NoLayers);
        }
        if self.neurons == 0 {
            return Err(ArchError::EmptyBudget);
        }
        for (name, value) in [("mu", self.mu), ("omega", self.omega)] {
            if !value.is_finite() {
                return Err(ArchError::NonFinite { name, value });
            }
        }
        if !(self.alpha.is_finite() && self.alpha > 1.0) {
            return Err(ArchError::Alpha(self.alpha));
        }
        Ok(())
    }

    /// Unnormalized relative sizes `s(l)` for `l = 1..=L`.
    pub fn raw_weights(&self) -> Vec<f64> {
        let depth = self.layers as f64;
        (1..=self.layers)
            .map(|l| {
                let l = l as f64;
                libm::exp(self.mu * l / depth) * (self.alpha + libm::sin(-self.omega * l))
            })
            .collect()
    }

    /// Normalizing constant that maps relative sizes onto the budget, i.e.
    /// `1 / sum(s(l))`.
    pub fn normalizer(&self) -> f64 {
        1.0 / self.raw_weights().iter().sum::<f64>()
    }

    /// Real-valued (pre-rounding) layer sizes `N * s(l) / sum(s)`.
    pub fn layer_targets(&self) -> Vec<f64> {
        let budget = self.neurons as f64 * self.normalizer();
        self.raw_weights().into_iter().map(|s| s * budget).collect()
    }
}

/// Hidden-layer widths, input side first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSizes(pub Vec<usize>);

impl LayerSizes {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Apportions `spec.neurons` over the hidden layers.
///
/// Before clamping the sizes sum to `N` exactly; layers that round below
/// [`MIN_LAYER_WIDTH`] are raised to it afterwards without re-balancing the
/// others, so the total can exceed `N`.
pub fn layer_sizes(spec: &ArchitectureSpec) -> Result<LayerSizes, ArchError> {
    spec.validate()?;
    let mut sizes = apportion(&spec.layer_targets(), spec.neurons);
    for size in &mut sizes {
        *size = (*size).max(MIN_LAYER_WIDTH);
    }
    Ok(LayerSizes(sizes))
}

/// Largest-remainder (Hamilton) apportionment of `total` seats over real
/// quotas that already sum to `total`. Equal remainders go to the lower index.
fn apportion(targets: &[f64], total: usize) -> Vec<usize> {
    let mut seats: Vec<usize> = targets.iter().map(|t| t.floor() as usize).collect();
    let assigned: usize = seats.iter().sum();
    let mut order: Vec<usize> = (0..targets.len()).collect();
    // Stable sort keeps lower indices first among equal remainders.
    order.sort_by(|&a, &b| {
        let ra = targets[a] - targets[a].floor();
        let rb = targets[b] - targets[b].floor();
        rb.total_cmp(&ra)
    });
    for &idx in order.iter().take(total.saturating_sub(assigned)) {
        seats[idx] += 1;
    }
    seats
}

/// Value lists spanning a hyper-parameter grid. Missing lists deserialize
/// to their reference values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridLists {
    #[serde(rename = "L")]
    pub layers: Vec<usize>,
    #[serde(rename = "N")]
    pub neurons: Vec<usize>,
    pub mu: Vec<f64>,
    pub omega: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl Default for GridLists {
    fn default() -> Self {
        Self::reference()
    }
}

impl GridLists {
    /// The grid used to build the reference dataset (882 architectures).
    pub fn reference() -> Self {
        Self {
            layers: vec![3, 5, 10],
            neurons: vec![100, 250, 500],
            mu: vec![-1.0, -0.5, -0.1, 0.0, 0.1, 0.5, 1.0],
            omega: vec![-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0],
            alpha: vec![2.0, 5.0],
        }
    }

    pub fn len(&self) -> usize {
        self.layers.len() * self.neurons.len() * self.mu.len() * self.omega.len() * self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn specs(&self) -> Result<Vec<ArchitectureSpec>, ArchError> {
        enumerate_grid(&self.layers, &self.neurons, &self.mu, &self.omega, &self.alpha)
    }
}

/// Cartesian product of the value lists, `L` outermost and `alpha`
/// innermost. Seeds are left at 0.
pub fn enumerate_grid(
    layers: &[usize],
    neurons: &[usize],
    mus: &[f64],
    omegas: &[f64],
    alphas: &[f64],
) -> Result<Vec<ArchitectureSpec>, ArchError> {
    for (name, len) in [
        ("L", layers.len()),
        ("N", neurons.len()),
        ("mu", mus.len()),
        ("omega", omegas.len()),
        ("alpha", alphas.len()),
    ] {
        if len == 0 {
            return Err(ArchError::EmptyGrid(name));
        }
    }
    let mut specs =
        Vec::with_capacity(layers.len() * neurons.len() * mus.len() * omegas.len() * alphas.len());
    for &l in layers {
        for &n in neurons {
            for &mu in mus {
                for &omega in omegas {
                    for &alpha in alphas {
                        specs.push(ArchitectureSpec::new(l, n, mu, omega, alpha));
                    }
                }
            }
        }
    }
    Ok(specs)
}
