//! High-dimensional affinities: per-row kernel calibration (Gaussian
//! perplexity or shifted exponential), directed weights, and the two
//! symmetrization rules.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{GdrError, Result};
use crate::knn::NeighborGraph;

/// Bisection bracket for the per-row scale solvers.
const SCALE_BRACKET: (f64, f64) = (1e-12, 1e12);
/// Bisection iteration budget.
const BISECT_ITERS: usize = 200;
/// Relative residual below which a calibration counts as converged.
pub const CALIBRATION_TOL: f64 = 1e-5;
/// Symmetrized edges below this weight are dropped from the sparse list.
const EDGE_FLOOR: f64 = 1e-12;

/// Which high-dimensional kernel builds the affinities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum KernelMode {
    /// exp(-d^2 / 2 sigma_i^2), sigma solved so 2^H hits the target perplexity.
    GaussianPerplexity,
    /// exp(-d / tau_i), tau solved so the row sums to log2(k).
    UmapExponential,
}

/// How the two directed weights of a pair combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Symmetrization {
    /// (p_ij + p_ji) / 2
    Average,
    /// p_ij + p_ji - p_ij * p_ji (fuzzy union)
    Union,
}

/// One solved scale plus whether the solver had to clamp.
#[derive(Debug, Clone, Copy)]
pub struct Calibration {
    pub value: f64,
    pub clamped: bool,
}

/// Per-row kernel state after calibration.
#[derive(Debug, Clone)]
pub struct KernelParams {
    pub mode: KernelMode,
    pub perplexity: f64,
    pub pseudo_distance: bool,
    /// Per-point Gaussian scale (GaussianPerplexity mode).
    pub sigma: Vec<f64>,
    /// Per-point exponential scale (UmapExponential mode).
    pub tau: Vec<f64>,
    /// Per-point nearest-neighbor distance, zero when pseudo_distance is off.
    pub rho: Vec<f64>,
    /// Number of rows whose calibration clamped.
    pub clamped_rows: usize,
}

/// Sparse symmetric affinities; each unordered pair is stored once (i < j).
#[derive(Debug, Clone)]
pub struct AffinityGraph {
    pub n: usize,
    /// (i, j, p_ij) with i < j and p_ij in (0, 1].
    pub edges: Vec<(u32, u32, f64)>,
    /// Sum of p over *directed* pairs, i.e. twice the stored-edge sum.
    pub p_sum: f64,
    /// Arithmetic mean of the stored edge weights.
    pub p_mean: f64,
}

impl AffinityGraph {
    /// Builds the caches and validates weight bounds.
    pub fn from_edges(n: usize, edges: Vec<(u32, u32, f64)>) -> Result<Self> {
        let mut sum = 0.0;
        for &(i, j, w) in &edges {
            if i >= j || (j as usize) >= n {
                return Err(GdrError::InvalidArgument(format!(
                    "edge ({i}, {j}) out of order or out of range"
                )));
            }
            if !(w > 0.0 && w <= 1.0) {
                return Err(GdrError::InvalidArgument(format!(
                    "edge weight {w} outside (0, 1]"
                )));
            }
            sum += w;
        }
        let p_mean = if edges.is_empty() {
            0.0
        } else {
            sum / edges.len() as f64
        };
        Ok(Self {
            n,
            edges,
            p_sum: 2.0 * sum,
            p_mean,
        })
    }

    /// Neighbor lists view: for every point, (other endpoint, weight).
    pub fn adjacency(&self) -> Vec<Vec<(u32, f64)>> {
        let mut adj: Vec<Vec<(u32, f64)>> = vec![Vec::new(); self.n];
        for &(i, j, w) in &self.edges {
            adj[i as usize].push((j, w));
            adj[j as usize].push((i, w));
        }
        adj
    }

    /// Debug dump as 3-column CSV (i, j, p_ij), one row per stored edge.
    pub fn dump_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for &(i, j, p) in &self.edges {
            writeln!(w, "{i},{j},{p}")?;
        }
        Ok(())
    }
}

/// Shannon entropy (bits) of the row distribution p_j ~ exp(-d_j^2 / 2 sigma^2),
/// returned as 2^H so it compares directly against a perplexity target.
fn perplexity_of(dists: &[f64], sigma: f64) -> f64 {
    let scale = -0.5 / (sigma * sigma);
    let exps: Vec<f64> = dists.iter().map(|d| d * d * scale).collect();
    let m = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for &e in &exps {
        z += (e - m).exp();
    }
    let mut h_bits = 0.0;
    for &e in &exps {
        let p = (e - m).exp() / z;
        if p > 0.0 {
            h_bits -= p * p.log2();
        }
    }
    h_bits.exp2()
}

/// Solves sigma by bisection on log(sigma) so the row's effective
/// perplexity 2^H matches the target within [`CALIBRATION_TOL`].
///
/// Unreachable targets (all distances equal, or perplexity outside
/// (1, k)) come back clamped; the degenerate all-equal row returns the
/// bracket midpoint since every sigma gives the uniform distribution.
pub fn calibrate_sigma(row_distances: &[f64], perplexity: f64) -> Calibration {
    let k = row_distances.len();
    let spread = row_distances.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - row_distances.iter().cloned().fold(f64::INFINITY, f64::min);
    if k < 2 || spread <= 0.0 {
        return Calibration {
            value: 1.0,
            clamped: true,
        };
    }
    let (mut lo, mut hi) = (SCALE_BRACKET.0.ln(), SCALE_BRACKET.1.ln());
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..BISECT_ITERS {
        mid = 0.5 * (lo + hi);
        if perplexity_of(row_distances, mid.exp()) < perplexity {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sigma = mid.exp();
    let residual = (perplexity_of(row_distances, sigma) - perplexity).abs() / perplexity;
    Calibration {
        value: sigma,
        clamped: residual >= CALIBRATION_TOL,
    }
}

fn umap_row_sum(dists: &[f64], rho: f64, tau: f64) -> f64 {
    dists
        .iter()
        .map(|&d| (-((d - rho).max(0.0)) / tau).exp())
        .sum()
}

/// Solves tau by bisection so sum_j exp(-max(0, d_j - rho) / tau) hits
/// log2(k). Distances at or below rho contribute exactly 1, so rows
/// whose tie count already exceeds the target clamp.
pub fn calibrate_tau(row_distances: &[f64], rho: f64, k: usize) -> Calibration {
    let target = (k as f64).log2();
    let ties = row_distances.iter().filter(|&&d| d <= rho).count() as f64;
    let spread = row_distances.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - rho;
    if row_distances.is_empty() || spread <= 0.0 || ties >= target {
        return Calibration {
            value: 1.0,
            clamped: true,
        };
    }
    let (mut lo, mut hi) = (SCALE_BRACKET.0.ln(), SCALE_BRACKET.1.ln());
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..BISECT_ITERS {
        mid = 0.5 * (lo + hi);
        if umap_row_sum(row_distances, rho, mid.exp()) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = mid.exp();
    let residual = (umap_row_sum(row_distances, rho, tau) - target).abs();
    Calibration {
        value: tau,
        clamped: residual >= CALIBRATION_TOL,
    }
}

/// Calibrates every row of the neighbor graph for the chosen kernel.
///
/// With `pseudo_distance` on, each row's distances are shifted by the
/// row minimum rho_i before the kernel sees them (for either kernel),
/// so every point's nearest neighbor sits at shifted distance 0.
pub fn calibrate_kernel(
    graph: &NeighborGraph,
    mode: KernelMode,
    perplexity: f64,
    pseudo_distance: bool,
) -> KernelParams {
    let n = graph.n;
    let rho: Vec<f64> = (0..n)
        .map(|i| {
            if pseudo_distance {
                graph.row_distances(i)[0]
            } else {
                0.0
            }
        })
        .collect();

    let cals: Vec<Calibration> = (0..n)
        .into_par_iter()
        .map(|i| {
            let dists = graph.row_distances(i);
            match mode {
                KernelMode::GaussianPerplexity => {
                    let shifted: Vec<f64> =
                        dists.iter().map(|&d| (d - rho[i]).max(0.0)).collect();
                    calibrate_sigma(&shifted, perplexity)
                }
                KernelMode::UmapExponential => calibrate_tau(dists, rho[i], graph.k),
            }
        })
        .collect();

    let clamped_rows = cals.iter().filter(|c| c.clamped).count();
    let (sigma, tau) = match mode {
        KernelMode::GaussianPerplexity => (
            cals.iter().map(|c| c.value).collect(),
            vec![1.0; n],
        ),
        KernelMode::UmapExponential => (
            vec![1.0; n],
            cals.iter().map(|c| c.value).collect(),
        ),
    };

    KernelParams {
        mode,
        perplexity,
        pseudo_distance,
        sigma,
        tau,
        rho,
        clamped_rows,
    }
}

/// Directed weights p_{j|i}, aligned with `graph.indices`.
///
/// Gaussian mode returns the raw numerators exp(-d'^2 / 2 sigma_i^2);
/// the global normalization is a property of the loss regime and is
/// applied there, never baked into the weights. UMAP mode returns
/// exp(-(d - rho_i)/tau_i) (or exp(-d/tau_i) without the pseudo-distance).
pub fn directed_affinities(graph: &NeighborGraph, params: &KernelParams) -> Vec<f64> {
    let mut weights = Vec::with_capacity(graph.n * graph.k);
    for i in 0..graph.n {
        for &d in graph.row_distances(i) {
            let shifted = (d - params.rho[i]).max(0.0);
            let w = match params.mode {
                KernelMode::GaussianPerplexity => {
                    let s = params.sigma[i];
                    (-shifted * shifted / (2.0 * s * s)).exp()
                }
                KernelMode::UmapExponential => (-shifted / params.tau[i]).exp(),
            };
            weights.push(w);
        }
    }
    weights
}

/// Combines the directed weights into a symmetric sparse graph.
/// A missing reverse edge contributes weight 0; symmetrized weights
/// below 1e-12 are dropped.
pub fn symmetrize(
    graph: &NeighborGraph,
    weights: &[f64],
    mode: Symmetrization,
) -> Result<AffinityGraph> {
    assert_eq!(weights.len(), graph.n * graph.k);
    let mut pairs: HashMap<(u32, u32), (f64, f64)> = HashMap::new();
    for i in 0..graph.n {
        for (slot, &j) in graph.row_indices(i).iter().enumerate() {
            let w = weights[i * graph.k + slot];
            let key = ((i as u32).min(j), (i as u32).max(j));
            let entry = pairs.entry(key).or_insert((0.0, 0.0));
            if (i as u32) < j {
                entry.0 = w;
            } else {
                entry.1 = w;
            }
        }
    }
    let mut edges: Vec<(u32, u32, f64)> = pairs
        .into_iter()
        .filter_map(|((i, j), (wf, wr))| {
            let s = match mode {
                Symmetrization::Average => 0.5 * (wf + wr),
                Symmetrization::Union => wf + wr - wf * wr,
            };
            (s >= EDGE_FLOOR).then_some((i, j, s.min(1.0)))
        })
        .collect();
    edges.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    AffinityGraph::from_edges(graph.n, edges)
}
