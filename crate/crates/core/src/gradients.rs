//! Closed-form attractive/repulsive forces and exact loss evaluation for
//! the four regimes: normalized KL, unnormalized KL, Frobenius, and the
//! accelerated variant (which reuses these formulas; only the sampling
//! semantics change).
//!
//! Sign convention: forces are descent directions. Summed per the
//! regime's pair convention they equal minus the gradient of the dense
//! loss, which is what the finite-difference suites pin down.

use std::collections::HashMap;

use rand::Rng;

use crate::affinity::AffinityGraph;
use crate::error::{GdrError, Result};
use crate::lowdim::{q_unnormalized, ABParams};
use crate::optimizer::EmbeddingState;

pub type ForceVec = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum LossKind {
    Kl,
    Frobenius,
}

/// Which loss/normalization combination the forces serve.
#[derive(Debug, Clone, Copy)]
pub struct GradientRegime {
    pub normalized: bool,
    pub loss: LossKind,
    pub accelerated: bool,
    /// Stability constant for the unnormalized-KL repulsion denominator.
    pub eps: f64,
}

impl GradientRegime {
    pub fn validate(&self) -> Result<()> {
        if self.loss == LossKind::Frobenius && self.normalized {
            return Err(GdrError::Config(
                "the Frobenius loss is only stable in the unnormalized setting".into(),
            ));
        }
        if self.eps < 0.0 {
            return Err(GdrError::Config("eps must be >= 0".into()));
        }
        Ok(())
    }
}

#[inline]
fn scaled(v: &[f64], s: f64) -> ForceVec {
    let mut out = [0.0; 3];
    for (o, &c) in out.iter_mut().zip(v) {
        *o = s * c;
    }
    out
}

#[inline]
fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum()
}

/// Normalized-KL per-pair forces in the a = b = 1 setting:
/// attraction -4 Z p_hat q_hat v, repulsion +4 Z q_hat^2 v.
/// The Z * q_hat product is formed as the unnormalized q to avoid
/// magnifying cancellation in the tiny q_hat values.
#[inline]
pub fn tsne_forces(p_hat: f64, q_hat: f64, z: f64, v: &[f64]) -> (ForceVec, ForceVec) {
    let q = z * q_hat;
    (scaled(v, -4.0 * p_hat * q), scaled(v, 4.0 * q * q_hat))
}

/// Normalized-KL per-pair forces for general (a, b); reduces to
/// [`tsne_forces`] at a = b = 1. `dist2` is the squared displacement norm.
#[inline]
pub fn normalized_forces(
    p_hat: f64,
    q_hat: f64,
    z: f64,
    dist2: f64,
    v: &[f64],
    ab: &ABParams,
) -> (ForceVec, ForceVec) {
    if ab.is_unit() {
        return tsne_forces(p_hat, q_hat, z, v);
    }
    if dist2 == 0.0 {
        return ([0.0; 3], [0.0; 3]);
    }
    let q = z * q_hat;
    let shape = 4.0 * ab.a * ab.b * dist2.powf(ab.b - 1.0) * q;
    (scaled(v, -shape * p_hat), scaled(v, shape * q_hat))
}

/// Unnormalized-KL per-pair forces:
/// attraction -2ab |v|^(2(b-1)) / (1 + |v|^2) * p * v,
/// repulsion 2b / (eps + |v|^2) * q * (1 - p_bar) * v.
///
/// The repulsion scalar uses the supplied `p_bar` because the true
/// p_ik of a sampled non-neighbor is unavailable at runtime; dense
/// reference paths pass the pair's own effective p in both slots.
/// The engine clips the applied force per coordinate separately.
#[inline]
pub fn umap_forces(
    p: f64,
    q: f64,
    v: &[f64],
    ab: &ABParams,
    eps: f64,
    p_bar: f64,
) -> (ForceVec, ForceVec) {
    let d2 = norm2(v);
    let att = if d2 == 0.0 {
        [0.0; 3]
    } else {
        let shape = if ab.is_unit() {
            1.0 / (1.0 + d2)
        } else {
            ab.a * ab.b * d2.powf(ab.b - 1.0) / (1.0 + d2)
        };
        scaled(v, -2.0 * shape * p)
    };
    let rep = if d2 == 0.0 && eps == 0.0 {
        [0.0; 3]
    } else {
        scaled(v, 2.0 * ab.b * q * (1.0 - p_bar) / (eps + d2))
    };
    (att, rep)
}

/// Frobenius per-pair forces (a = b = 1): attraction -4 p q^2 v,
/// repulsion +4 q^3 v. No eps is needed; both terms vanish smoothly
/// as the pair collides.
#[inline]
pub fn frobenius_forces(p: f64, q: f64, v: &[f64]) -> (ForceVec, ForceVec) {
    let q2 = q * q;
    (scaled(v, -4.0 * p * q2), scaled(v, 4.0 * q2 * q))
}

/// Clamps every component to [-limit, limit]; the unnormalized-KL
/// engine applies this with limit 4 before accumulating.
#[inline]
pub fn clip_force(f: &mut ForceVec, limit: f64) {
    for c in f.iter_mut() {
        *c = c.clamp(-limit, limit);
    }
}

fn edge_map(p: &AffinityGraph) -> HashMap<(u32, u32), f64> {
    p.edges.iter().map(|&(i, j, w)| ((i, j), w)).collect()
}

/// Exact normalized KL loss over all ordered pairs (dense reference).
pub fn kl_loss_normalized(p: &AffinityGraph, y: &EmbeddingState, ab: &ABParams) -> f64 {
    let z = crate::lowdim::normalization_z(y, ab);
    let mut loss = 0.0;
    for &(i, j, w) in &p.edges {
        let p_hat = w / p.p_sum;
        let q = q_unnormalized(y.dist2(i as usize, j as usize), ab);
        let q_hat = q / z;
        // both ordered pairs carry the same term
        loss += 2.0 * p_hat * (p_hat / q_hat).ln();
    }
    loss
}

/// One Bernoulli KL term p log(p/q) + (1-p) log((1-p)/(1-q)), with the
/// p = 0 and p = 1 ends dropping their vanished summand and 1 - q
/// floored at `eps` when eps > 0.
#[inline]
fn bernoulli_kl(p: f64, q: f64, eps: f64) -> f64 {
    let mut term = 0.0;
    if p > 0.0 {
        term += p * (p / q).ln();
    }
    if p < 1.0 {
        let one_minus_q = if eps > 0.0 { (1.0 - q).max(eps) } else { 1.0 - q };
        term += (1.0 - p) * ((1.0 - p) / one_minus_q).ln();
    }
    term
}

/// Exact unnormalized KL loss over all ordered pairs. `non_edge_p` is
/// the similarity assigned to pairs absent from the affinity graph; the
/// kernel leaves those effectively at zero, which is what the engine's
/// loss traces use (the runtime repulsion scalar is where the mean-p
/// substitute belongs, not the objective).
pub fn kl_loss_unnormalized(
    p: &AffinityGraph,
    y: &EmbeddingState,
    ab: &ABParams,
    non_edge_p: f64,
    eps: f64,
) -> f64 {
    let edges = edge_map(p);
    let n = y.n;
    let mut loss = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let w = *edges.get(&(i as u32, j as u32)).unwrap_or(&non_edge_p);
            let q = q_unnormalized(y.dist2(i, j), ab);
            loss += 2.0 * bernoulli_kl(w, q, eps);
        }
    }
    loss
}

/// Exact Frobenius loss sum_{i != j} (p - q)^2 with p := 0 off-graph.
pub fn frobenius_loss(p: &AffinityGraph, y: &EmbeddingState, ab: &ABParams) -> f64 {
    let edges = edge_map(p);
    let n = y.n;
    let mut loss = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let w = *edges.get(&(i as u32, j as u32)).unwrap_or(&0.0);
            let q = q_unnormalized(y.dist2(i, j), ab);
            let e = w - q;
            loss += 2.0 * e * e;
        }
    }
    loss
}

/// Exact dense gradient of the regime's loss, length n * d.
///
/// Assembles the per-pair forces with the convention each regime's
/// factor encodes: normalized-KL per-pair forces already account for
/// the pair's two ordered appearances, while the unnormalized-KL and
/// Frobenius forms carry half of it, so those pairs contribute to both
/// endpoints.
pub fn dense_gradient(
    regime: &GradientRegime,
    p: &AffinityGraph,
    y: &EmbeddingState,
    ab: &ABParams,
    non_edge_p: f64,
) -> Vec<f64> {
    let n = y.n;
    let d = y.d;
    let mut grad = vec![0.0; n * d];
    let edges = edge_map(p);

    let z = if regime.normalized {
        crate::lowdim::normalization_z(y, ab)
    } else {
        1.0
    };

    let mut v = [0.0f64; 3];
    for i in 0..n {
        for j in (i + 1)..n {
            let yi = y.point(i);
            let yj = y.point(j);
            for c in 0..d {
                v[c] = yi[c] - yj[c];
            }
            let d2 = norm2(&v[..d]);
            let q = q_unnormalized(d2, ab);
            let w = edges.get(&(i as u32, j as u32)).copied();

            let (force, pair_scale) = match (regime.normalized, regime.loss) {
                (true, LossKind::Kl) => {
                    let p_hat = w.unwrap_or(0.0) / p.p_sum;
                    let (att, rep) = normalized_forces(p_hat, q / z, z, d2, &v[..d], ab);
                    (add(att, rep), 1.0)
                }
                (false, LossKind::Kl) => {
                    let p_eff = w.unwrap_or(non_edge_p);
                    let (att, rep) = umap_forces(p_eff, q, &v[..d], ab, regime.eps, p_eff);
                    (add(att, rep), 2.0)
                }
                (false, LossKind::Frobenius) => {
                    let p_eff = w.unwrap_or(0.0);
                    let (att, rep) = frobenius_forces(p_eff, q, &v[..d]);
                    (add(att, rep), 2.0)
                }
                (true, LossKind::Frobenius) => unreachable!("rejected by validate()"),
            };

            for c in 0..d {
                // gradient = -(descent force); the opposite force acts on j
                grad[i * d + c] -= pair_scale * force[c];
                grad[j * d + c] += pair_scale * force[c];
            }
        }
    }
    grad
}

#[inline]
fn add(a: ForceVec, b: ForceVec) -> ForceVec {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Sampled loss estimate for large n: edge terms are exact, the
/// all-pairs background is estimated from `samples` uniform pairs.
/// Non-edge pairs carry zero similarity, matching the exact losses.
pub fn loss_estimate<R: Rng>(
    regime: &GradientRegime,
    p: &AffinityGraph,
    y: &EmbeddingState,
    ab: &ABParams,
    samples: usize,
    rng: &mut R,
) -> f64 {
    let n = y.n;
    let pairs_total = (n * (n - 1)) as f64;

    let mut bg_mean = 0.0;
    let mut z_mean = 0.0;
    for _ in 0..samples {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n);
        while j == i {
            j = rng.random_range(0..n);
        }
        let q = q_unnormalized(y.dist2(i, j), ab);
        z_mean += q;
        bg_mean += match regime.loss {
            LossKind::Kl if !regime.normalized => bernoulli_kl(0.0, q, regime.eps),
            LossKind::Frobenius => q * q,
            _ => 0.0,
        };
    }
    bg_mean /= samples as f64;
    z_mean /= samples as f64;
    let z_est = pairs_total * z_mean;

    match (regime.normalized, regime.loss) {
        (true, LossKind::Kl) => {
            let mut loss = 0.0;
            for &(i, j, w) in &p.edges {
                let p_hat = w / p.p_sum;
                let q = q_unnormalized(y.dist2(i as usize, j as usize), ab);
                loss += 2.0 * p_hat * (p_hat * z_est / q).ln();
            }
            loss
        }
        (false, LossKind::Kl) => {
            let mut correction = 0.0;
            for &(i, j, w) in &p.edges {
                let q = q_unnormalized(y.dist2(i as usize, j as usize), ab);
                correction +=
                    2.0 * (bernoulli_kl(w, q, regime.eps) - bernoulli_kl(0.0, q, regime.eps));
            }
            pairs_total * bg_mean + correction
        }
        (false, LossKind::Frobenius) => {
            let mut correction = 0.0;
            for &(i, j, w) in &p.edges {
                let q = q_unnormalized(y.dist2(i as usize, j as usize), ab);
                let e = w - q;
                correction += 2.0 * (e * e - q * q);
            }
            pairs_total * bg_mean + correction
        }
        (true, LossKind::Frobenius) => f64::NAN,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::EmbeddingState;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> ABParams {
        ABParams::unit()
    }

    fn random_instance(
        n: usize,
        d: usize,
        seed: u64,
    ) -> (AffinityGraph, EmbeddingState) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n as u32 {
            for j in (i + 1)..n as u32 {
                if rng.random::<f64>() < 0.6 {
                    edges.push((i, j, rng.random_range(0.05..1.0)));
                }
            }
        }
        let p = AffinityGraph::from_edges(n, edges).unwrap();
        let coords: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        (p, EmbeddingState::from_coords(n, d, coords))
    }

    fn loss_for(regime: &GradientRegime, p: &AffinityGraph, y: &EmbeddingState, ab: &ABParams) -> f64 {
        match (regime.normalized, regime.loss) {
            (true, LossKind::Kl) => kl_loss_normalized(p, y, ab),
            (false, LossKind::Kl) => kl_loss_unnormalized(p, y, ab, 0.0, regime.eps),
            (false, LossKind::Frobenius) => frobenius_loss(p, y, ab),
            _ => unreachable!(),
        }
    }

    fn check_fd(regime: &GradientRegime, ab: &ABParams, seed: u64) {
        let (p, mut y) = random_instance(8, 2, seed);
        let grad = dense_gradient(regime, &p, &y, ab, 0.0);
        let h = 1e-5;
        let mut max_rel: f64 = 0.0;
        let scale = grad.iter().map(|g| g.abs()).fold(0.0f64, f64::max);
        for idx in 0..y.coords.len() {
            let orig = y.coords[idx];
            y.coords[idx] = orig + h;
            let lp = loss_for(regime, &p, &y, ab);
            y.coords[idx] = orig - h;
            let lm = loss_for(regime, &p, &y, ab);
            y.coords[idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (grad[idx] - fd).abs() / scale.max(1e-12);
            max_rel = max_rel.max(rel);
        }
        assert!(
            max_rel < 1e-4,
            "fd mismatch {max_rel:.2e} (normalized={}, loss={:?})",
            regime.normalized,
            regime.loss
        );
    }

    #[test]
    fn fd_normalized_kl() {
        let regime = GradientRegime {
            normalized: true,
            loss: LossKind::Kl,
            accelerated: false,
            eps: 0.0,
        };
        for seed in 0..3 {
            check_fd(&regime, &unit(), seed);
        }
    }

    #[test]
    fn fd_normalized_kl_general_ab() {
        let regime = GradientRegime {
            normalized: true,
            loss: LossKind::Kl,
            accelerated: false,
            eps: 0.0,
        };
        let ab = ABParams {
            a: 1.577,
            b: 0.895,
            source: crate::lowdim::AbSource::Unit,
        };
        check_fd(&regime, &ab, 7);
    }

    #[test]
    fn fd_unnormalized_kl() {
        let regime = GradientRegime {
            normalized: false,
            loss: LossKind::Kl,
            accelerated: false,
            eps: 0.0,
        };
        for seed in 0..3 {
            check_fd(&regime, &unit(), seed);
        }
    }

    #[test]
    fn fd_unnormalized_kl_with_background_p() {
        // the loss/gradient pair stays consistent for any non-edge p
        let regime = GradientRegime {
            normalized: false,
            loss: LossKind::Kl,
            accelerated: false,
            eps: 0.0,
        };
        let (p, mut y) = random_instance(8, 2, 5);
        let bg = p.p_mean;
        let grad = dense_gradient(&regime, &p, &y, &unit(), bg);
        let h = 1e-5;
        let scale = grad.iter().map(|g| g.abs()).fold(0.0f64, f64::max);
        for idx in 0..y.coords.len() {
            let orig = y.coords[idx];
            y.coords[idx] = orig + h;
            let lp = kl_loss_unnormalized(&p, &y, &unit(), bg, 0.0);
            y.coords[idx] = orig - h;
            let lm = kl_loss_unnormalized(&p, &y, &unit(), bg, 0.0);
            y.coords[idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!((grad[idx] - fd).abs() / scale < 1e-4);
        }
    }

    #[test]
    fn fd_frobenius() {
        let regime = GradientRegime {
            normalized: false,
            loss: LossKind::Frobenius,
            accelerated: false,
            eps: 0.0,
        };
        for seed in 0..3 {
            check_fd(&regime, &unit(), seed);
        }
    }

    #[test]
    fn frobenius_normalized_rejected() {
        let regime = GradientRegime {
            normalized: true,
            loss: LossKind::Frobenius,
            accelerated: false,
            eps: 0.0,
        };
        assert!(regime.validate().is_err());
    }

    #[test]
    fn zero_displacement_means_zero_forces() {
        let v = [0.0, 0.0];
        let (a, r) = tsne_forces(0.3, 0.1, 2.0, &v);
        assert_eq!(a, [0.0; 3]);
        assert_eq!(r, [0.0; 3]);
        let (a, r) = umap_forces(0.5, 1.0, &v, &unit(), 0.0, 0.2);
        assert_eq!(a, [0.0; 3]);
        assert_eq!(r, [0.0; 3]);
        let (a, r) = frobenius_forces(1.0, 1.0, &v);
        assert_eq!(a, [0.0; 3]);
        assert_eq!(r, [0.0; 3]);
    }

    #[test]
    fn umap_force_hand_values() {
        // a=b=1, p=1, q=0.5 at v=(1,0): attraction (-1, 0).
        let (att, _) = umap_forces(1.0, 0.5, &[1.0, 0.0], &unit(), 0.0, 0.0);
        assert!((att[0] + 1.0).abs() < 1e-15 && att[1] == 0.0);
        // p_bar=0.2, q=0.5, v=(1,0), eps=0: repulsion 2*q^2*(1-p_bar)/(1-q) = 0.8.
        let (_, rep) = umap_forces(0.0, 0.5, &[1.0, 0.0], &unit(), 0.0, 0.2);
        assert!((rep[0] - 0.8).abs() < 1e-12 && rep[1] == 0.0);
    }

    #[test]
    fn frobenius_force_hand_values() {
        let (att, rep) = frobenius_forces(1.0, 0.5, &[1.0, 0.0]);
        assert!((att[0] + 1.0).abs() < 1e-15);
        assert!((rep[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sign_structure() {
        // Attraction points from y_i toward y_j, repulsion away, for any
        // positive displacement and p, q strictly inside (0, 1).
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let v = [rng.random_range(0.1..2.0), rng.random_range(-2.0..2.0)];
            let d2 = v[0] * v[0] + v[1] * v[1];
            let q = 1.0 / (1.0 + d2);
            let p = rng.random_range(0.01..0.99);
            let (att, rep) = umap_forces(p, q, &v, &unit(), 0.0, p);
            // att anti-parallel to v, rep parallel to v
            assert!(att[0] * v[0] + att[1] * v[1] < 0.0);
            assert!(rep[0] * v[0] + rep[1] * v[1] > 0.0);
            let (att, rep) = tsne_forces(p, q / 10.0, 10.0, &v);
            assert!(att[0] * v[0] + att[1] * v[1] < 0.0);
            assert!(rep[0] * v[0] + rep[1] * v[1] > 0.0);
            let (att, rep) = frobenius_forces(p, q, &v);
            assert!(att[0] * v[0] + att[1] * v[1] < 0.0);
            assert!(rep[0] * v[0] + rep[1] * v[1] > 0.0);
        }
    }

    #[test]
    fn general_form_reduces_to_reformulated_form() {
        // Eqs with a=b=1, eps=0 vs the reformulated -2pqv / 2q^2(1-p)/(1-q)v.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let v = [
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ];
            let d2 = norm2(&v);
            if d2 < 1e-6 {
                continue;
            }
            let q = 1.0 / (1.0 + d2);
            let p = rng.random::<f64>();
            let p_bar = rng.random::<f64>();
            let (att, rep) = umap_forces(p, q, &v, &unit(), 0.0, p_bar);
            for c in 0..3 {
                let att_ref = -2.0 * p * q * v[c];
                let rep_ref = 2.0 * q * q * (1.0 - p_bar) / (1.0 - q) * v[c];
                assert!(
                    (att[c] - att_ref).abs() <= 1e-12 * att_ref.abs().max(1.0),
                    "attraction mismatch"
                );
                assert!(
                    (rep[c] - rep_ref).abs() <= 1e-12 * rep_ref.abs().max(1.0),
                    "repulsion mismatch"
                );
            }
        }
    }

    #[test]
    fn zero_gradient_anchors_shared_by_kl_and_frobenius() {
        // p = 1: both regimes have zero net force only as q -> 1 (d = 0).
        // p = 0: both have zero attraction and vanishing repulsion as q -> 0.
        let v = [1e-6, 0.0];
        let q = 1.0 / (1.0 + 1e-12);
        let (att_kl, _) = umap_forces(1.0, q, &v, &unit(), 0.0, 1.0);
        let (att_fr, _) = frobenius_forces(1.0, q, &v);
        // attraction ~ 0 at d ~ 0 for both
        assert!(att_kl[0].abs() < 1e-5 && att_fr[0].abs() < 1e-5);

        let v = [1e3, 0.0];
        let d2 = 1e6;
        let q = 1.0 / (1.0 + d2);
        let (_, rep_kl) = umap_forces(0.0, q, &v, &unit(), 0.0, 0.0);
        let (_, rep_fr) = frobenius_forces(0.0, q, &v);
        assert!(rep_kl[0].abs() < 1e-2 && rep_fr[0].abs() < 1e-8);
    }

    #[test]
    fn normalized_loss_zero_on_matching_distributions() {
        // Two points, single edge: p_hat = q_hat = 1/2 regardless of the
        // distance, so the KL term vanishes.
        let p = AffinityGraph::from_edges(2, vec![(0, 1, 1.0)]).unwrap();
        let y = EmbeddingState::from_coords(2, 2, vec![0.0, 0.0, 3.0, 0.0]);
        let loss = kl_loss_normalized(&p, &y, &unit());
        assert!(loss.abs() < 1e-14);
    }

    #[test]
    fn unnormalized_loss_values() {
        // p = q on every pair -> 0. Here a 2-point instance with p = 1 edge
        // placed at distance 0 would degenerate; instead match p to q.
        let y = EmbeddingState::from_coords(2, 2, vec![0.0, 0.0, 1.0, 0.0]);
        let q = 0.5;
        let p = AffinityGraph::from_edges(2, vec![(0, 1, q)]).unwrap();
        let loss = kl_loss_unnormalized(&p, &y, &unit(), 0.0, 0.0);
        assert!(loss.abs() < 1e-14);

        // p = 1, q = 0.5: each ordered pair contributes ln 2.
        let p = AffinityGraph::from_edges(2, vec![(0, 1, 1.0)]).unwrap();
        let loss = kl_loss_unnormalized(&p, &y, &unit(), 0.0, 0.0);
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-14);
    }

    #[test]
    fn frobenius_loss_values() {
        let y = EmbeddingState::from_coords(2, 2, vec![0.0, 0.0, 1.0, 0.0]);
        // p = q -> 0
        let p = AffinityGraph::from_edges(2, vec![(0, 1, 0.5)]).unwrap();
        assert!(frobenius_loss(&p, &y, &unit()).abs() < 1e-15);
        // p = 1, q = 0.5 -> 2 * 0.25 over both ordered pairs
        let p = AffinityGraph::from_edges(2, vec![(0, 1, 1.0)]).unwrap();
        assert!((frobenius_loss(&p, &y, &unit()) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dense_losses_match_independent_transcription() {
        let (p, y) = random_instance(10, 2, 31);
        let ab = unit();
        let edges = edge_map(&p);
        let n = 10;

        // normalized
        let mut z = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    z += 1.0 / (1.0 + y.dist2(i, j));
                }
            }
        }
        let mut expected = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let key = (i.min(j) as u32, i.max(j) as u32);
                if let Some(&w) = edges.get(&key) {
                    let ph = w / p.p_sum;
                    let qh = (1.0 / (1.0 + y.dist2(i, j))) / z;
                    expected += ph * (ph / qh).ln();
                }
            }
        }
        let got = kl_loss_normalized(&p, &y, &ab);
        assert!((got - expected).abs() < 1e-10 * expected.abs().max(1.0));

        // unnormalized
        let mut expected = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let key = (i.min(j) as u32, i.max(j) as u32);
                let w = edges.get(&key).copied().unwrap_or(0.0);
                let q = 1.0 / (1.0 + y.dist2(i, j));
                if w > 0.0 {
                    expected += w * (w / q).ln();
                }
                if w < 1.0 {
                    expected += (1.0 - w) * ((1.0 - w) / (1.0 - q)).ln();
                }
            }
        }
        let got = kl_loss_unnormalized(&p, &y, &ab, 0.0, 0.0);
        assert!((got - expected).abs() < 1e-10 * expected.abs().max(1.0));

        // frobenius
        let mut expected = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let key = (i.min(j) as u32, i.max(j) as u32);
                let w = edges.get(&key).copied().unwrap_or(0.0);
                let q = 1.0 / (1.0 + y.dist2(i, j));
                expected += (w - q) * (w - q);
            }
        }
        let got = frobenius_loss(&p, &y, &ab);
        assert!((got - expected).abs() < 1e-10 * expected.abs().max(1.0));
    }

    #[test]
    fn loss_estimate_tracks_exact_loss() {
        let (p, y) = random_instance(60, 2, 17);
        let ab = unit();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for regime in [
            GradientRegime {
                normalized: true,
                loss: LossKind::Kl,
                accelerated: false,
                eps: 0.0,
            },
            GradientRegime {
                normalized: false,
                loss: LossKind::Kl,
                accelerated: false,
                eps: 0.0,
            },
            GradientRegime {
                normalized: false,
                loss: LossKind::Frobenius,
                accelerated: false,
                eps: 0.0,
            },
        ] {
            let exact = loss_for(&regime, &p, &y, &ab);
            let est = loss_estimate(&regime, &p, &y, &ab, 40_000, &mut rng);
            assert!(
                (est - exact).abs() / exact.abs().max(1e-9) < 0.05,
                "estimate {est} vs exact {exact}"
            );
        }
    }
}
