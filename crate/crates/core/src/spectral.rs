//! Laplacian-eigenmap style initialization: eigenvectors 2..d+1 of the
//! symmetric normalized Laplacian of the affinity graph, computed by
//! orthogonal iteration on the sparse adjacency.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::affinity::AffinityGraph;
use crate::optimizer::{EmbeddingState, INIT_SCALE};

const MAX_ITERS: usize = 2000;
const RESIDUAL_TOL: f64 = 1e-12;
/// Fixed seed for the iteration's starting block; spectral init takes no
/// seed parameter and must be reproducible on its own.
const BLOCK_SEED: u64 = 0x5eed_1a91;

/// Embeds the graph via the smallest nontrivial Laplacian eigenvectors,
/// rescaled per dimension to stddev [`INIT_SCALE`]. Disconnected graphs
/// are embedded per component and offset on a grid; components too small
/// to carry d nontrivial eigenvectors collapse to a single location.
///
/// Returns the state and whether a numerical failure forced the random
/// fallback.
pub fn init_spectral(p: &AffinityGraph, d: usize) -> (EmbeddingState, bool) {
    let n = p.n;
    let adj = p.adjacency();
    let components = connected_components(&adj, n);
    let n_comps = components.len();

    let mut coords = vec![0.0f64; n * d];
    let mut failed = false;

    for comp in &components {
        if comp.len() <= d + 1 {
            continue; // too small for d nontrivial eigenvectors: all-zero block
        }
        match component_eigenvectors(comp, &adj, d) {
            Some(vecs) => {
                // scale each component to a comparable size before any offset
                let max_abs = vecs
                    .iter()
                    .flat_map(|v| v.iter())
                    .fold(0.0f64, |m, &x| m.max(x.abs()));
                let scale = if max_abs > 0.0 { 1.0 / max_abs } else { 1.0 };
                for (c, vec) in vecs.iter().enumerate() {
                    for (local, &u) in comp.iter().enumerate() {
                        coords[u * d + c] = vec[local] * scale;
                    }
                }
            }
            None => {
                failed = true;
            }
        }
    }

    if failed {
        return (crate::optimizer::init_random(n, d, BLOCK_SEED, INIT_SCALE), true);
    }

    // grid offsets keep disconnected components apart
    if n_comps > 1 {
        let cols = (n_comps as f64).sqrt().ceil() as usize;
        for (idx, comp) in components.iter().enumerate() {
            let gx = (idx % cols) as f64 * 4.0;
            let gy = (idx / cols) as f64 * 4.0;
            for &u in comp {
                coords[u * d] += gx;
                if d > 1 {
                    coords[u * d + 1] += gy;
                }
            }
        }
    }

    // exact per-dimension standardization to the init scale
    for c in 0..d {
        let mean = (0..n).map(|i| coords[i * d + c]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|i| {
                let x = coords[i * d + c] - mean;
                x * x
            })
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt();
        if std > 1e-300 {
            let s = INIT_SCALE / std;
            for i in 0..n {
                coords[i * d + c] = (coords[i * d + c] - mean) * s;
            }
        } else {
            for i in 0..n {
                coords[i * d + c] = 0.0;
            }
        }
    }

    (EmbeddingState::from_coords(n, d, coords), false)
}

fn connected_components(adj: &[Vec<(u32, f64)>], n: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start] = true;
        let mut comp = Vec::new();
        while let Some(u) = queue.pop_front() {
            comp.push(u);
            for &(v, _) in &adj[u] {
                if !seen[v as usize] {
                    seen[v as usize] = true;
                    queue.push_back(v as usize);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

/// Orthogonal iteration for the top d+1 eigenvectors of
/// M = (I + D^(-1/2) W D^(-1/2)) / 2 restricted to one component; the
/// known top eigenvector (sqrt of the degrees) is pinned, and the next
/// d vectors (eigenvectors 2..d+1 of the Laplacian) come back ordered
/// by decreasing eigenvalue.
fn component_eigenvectors(
    comp: &[usize],
    adj: &[Vec<(u32, f64)>],
    d: usize,
) -> Option<Vec<Vec<f64>>> {
    let m = comp.len();
    let mut local_of = std::collections::HashMap::with_capacity(m);
    for (local, &u) in comp.iter().enumerate() {
        local_of.insert(u as u32, local);
    }
    let degrees: Vec<f64> = comp
        .iter()
        .map(|&u| adj[u].iter().map(|&(_, w)| w).sum::<f64>())
        .collect();
    if degrees.iter().any(|&dg| dg <= 0.0) {
        return None;
    }
    let dhalf: Vec<f64> = degrees.iter().map(|dg| dg.sqrt()).collect();

    // local sparse rows with normalized weights w / (dhalf_u * dhalf_v)
    let rows: Vec<Vec<(usize, f64)>> = comp
        .iter()
        .enumerate()
        .map(|(lu, &u)| {
            adj[u]
                .iter()
                .map(|&(v, w)| {
                    let lv = local_of[&v];
                    (lv, w / (dhalf[lu] * dhalf[lv]))
                })
                .collect()
        })
        .collect();

    let matvec = |x: &[f64], out: &mut [f64]| {
        for lu in 0..m {
            let mut acc = x[lu];
            for &(lv, w) in &rows[lu] {
                acc += w * x[lv];
            }
            out[lu] = 0.5 * acc;
        }
    };

    // block: pinned trivial vector + d iterates
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut trivial = dhalf.clone();
    let t_norm = norm(&trivial);
    trivial.iter_mut().for_each(|x| *x /= t_norm);

    let mut rng = ChaCha8Rng::seed_from_u64(BLOCK_SEED);
    let mut block: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();

    let mut tmp = vec![0.0f64; m];
    let mut converged = false;
    for iter in 0..MAX_ITERS {
        for c in 0..d {
            matvec(&block[c], &mut tmp);
            std::mem::swap(&mut block[c], &mut tmp);
        }
        // Gram-Schmidt against the pinned vector and earlier columns
        for c in 0..d {
            let dot_t: f64 = block[c].iter().zip(&trivial).map(|(a, b)| a * b).sum();
            for (x, t) in block[c].iter_mut().zip(&trivial) {
                *x -= dot_t * t;
            }
            for prev in 0..c {
                let dot: f64 = {
                    let (a, b) = (&block[c], &block[prev]);
                    a.iter().zip(b).map(|(x, y)| x * y).sum()
                };
                let prev_col = block[prev].clone();
                for (x, pv) in block[c].iter_mut().zip(&prev_col) {
                    *x -= dot * pv;
                }
            }
            let nrm = norm(&block[c]);
            if !(nrm.is_finite() && nrm > 1e-300) {
                return None;
            }
            block[c].iter_mut().for_each(|x| *x /= nrm);
        }
        if iter % 16 == 15 || iter == MAX_ITERS - 1 {
            let mut max_resid = 0.0f64;
            for col in block.iter() {
                matvec(col, &mut tmp);
                let theta: f64 = col.iter().zip(&tmp).map(|(a, b)| a * b).sum();
                let resid: f64 = col
                    .iter()
                    .zip(&tmp)
                    .map(|(a, b)| (b - theta * a) * (b - theta * a))
                    .sum::<f64>()
                    .sqrt();
                max_resid = max_resid.max(resid);
            }
            if max_resid < RESIDUAL_TOL {
                converged = true;
                break;
            }
        }
    }
    let _ = converged; // the iterate is still the best subspace estimate

    // order by decreasing Rayleigh quotient so column 0 is eigenvector 2
    let mut rated: Vec<(f64, Vec<f64>)> = block
        .into_iter()
        .map(|col| {
            matvec(&col, &mut tmp);
            let theta: f64 = col.iter().zip(&tmp).map(|(a, b)| a * b).sum();
            (theta, col)
        })
        .collect();
    rated.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    if rated.iter().any(|(theta, _)| !theta.is_finite()) {
        return None;
    }
    Some(rated.into_iter().map(|(_, col)| col).collect())
}
