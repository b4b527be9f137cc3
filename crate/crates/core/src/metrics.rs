//! Embedding quality metrics (kNN accuracy, V-measure over a KMeans
//! clustering, spread ratio), the manifold-preservation rank check, and
//! the repulsion diagnostics that probe the theory numerically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{GdrError, Result};
use crate::gradients::GradientRegime;
use crate::lowdim::ABParams;
use crate::optimizer::EmbeddingState;
use crate::sampling::{full_repulsion, sample_negative};

/// Metric bundle a run serializes next to its embedding. Fields that a
/// given run cannot compute (no labels, no manifold parameter) stay None.
#[derive(Debug, Clone, Default, Serialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knn_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub homogeneity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub completeness: Option<f64>,
    /// Harmonic mean of homogeneity and completeness.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_measure: Option<f64>,
    /// Plain average of the two, for the alternative reading.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_measure_arithmetic: Option<f64>,
    /// Inter-cluster centroid spacing over intra-cluster spread;
    /// None encodes the +infinity sentinel (collapsed classes).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spread_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angle_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub force_ratio_normalized: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub force_ratio_unnormalized: Option<f64>,
    /// |Spearman rho| between the roll parameter and the leading axis.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifold_rho: Option<f64>,
}

/// Default embedding-metric neighbor count: min(100, n / 10).
pub fn default_metric_k(n: usize) -> usize {
    (n / 10).clamp(1, 100)
}

/// Leave-one-out majority-vote kNN classification accuracy (percent) in
/// the embedding, ties broken by the smallest label id.
pub fn knn_accuracy(y: &EmbeddingState, labels: &[i64], k: usize) -> Result<f64> {
    let n = y.n;
    if labels.len() != n {
        return Err(GdrError::InvalidArgument("labels must cover all points".into()));
    }
    if k < 1 || k >= n {
        return Err(GdrError::InvalidArgument(format!(
            "metric k must satisfy 1 <= k < n, got {k}"
        )));
    }
    let hits: usize = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d2 = y.dist2(i, j);
                if best.len() == k && (d2, j as u32) >= (best[k - 1].0, best[k - 1].1) {
                    continue;
                }
                let pos = best
                    .binary_search_by(|probe| probe.partial_cmp(&(d2, j as u32)).unwrap())
                    .unwrap_or_else(|e| e);
                best.insert(pos, (d2, j as u32));
                if best.len() > k {
                    best.pop();
                }
            }
            let mut votes: std::collections::HashMap<i64, usize> = std::collections::HashMap::new();
            for &(_, j) in &best {
                *votes.entry(labels[j as usize]).or_insert(0) += 1;
            }
            let winner = votes
                .into_iter()
                .max_by(|a, b| (a.1, std::cmp::Reverse(a.0)).cmp(&(b.1, std::cmp::Reverse(b.0))))
                .map(|(label, _)| label)
                .unwrap();
            usize::from(winner == labels[i])
        })
        .sum();
    Ok(100.0 * hits as f64 / n as f64)
}

fn entropy(counts: &std::collections::HashMap<i64, f64>, total: f64) -> f64 {
    counts
        .values()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            -p * p.ln()
        })
        .sum()
}

/// Homogeneity, completeness, and their harmonic mean; 0/0 entropy
/// ratios define the corresponding score as 1.
pub fn v_measure(labels: &[i64], cluster_ids: &[i64]) -> (f64, f64, f64) {
    assert_eq!(labels.len(), cluster_ids.len());
    let n = labels.len() as f64;
    let mut class_counts = std::collections::HashMap::new();
    let mut cluster_counts = std::collections::HashMap::new();
    let mut joint: std::collections::HashMap<(i64, i64), f64> = std::collections::HashMap::new();
    for (&c, &k) in labels.iter().zip(cluster_ids) {
        *class_counts.entry(c).or_insert(0.0) += 1.0;
        *cluster_counts.entry(k).or_insert(0.0) += 1.0;
        *joint.entry((c, k)).or_insert(0.0) += 1.0;
    }
    let h_c = entropy(&class_counts, n);
    let h_k = entropy(&cluster_counts, n);

    // conditional entropies from the joint table
    let mut h_c_given_k = 0.0;
    let mut h_k_given_c = 0.0;
    for (&(c, k), &cnt) in &joint {
        let p = cnt / n;
        h_c_given_k -= p * (cnt / cluster_counts[&k]).ln();
        h_k_given_c -= p * (cnt / class_counts[&c]).ln();
    }

    let homogeneity = if h_c == 0.0 { 1.0 } else { 1.0 - h_c_given_k / h_c };
    let completeness = if h_k == 0.0 { 1.0 } else { 1.0 - h_k_given_c / h_k };
    let v = if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    };
    (homogeneity, completeness, v)
}

/// Lloyd's algorithm with ++-style seeding; the best of `restarts`
/// attempts by within-cluster SSE wins. Empty clusters are reseeded to
/// the point farthest from its assigned centroid.
pub fn kmeans(y: &EmbeddingState, k: usize, seed: u64, restarts: usize) -> Result<Vec<i64>> {
    let n = y.n;
    let d = y.d;
    if k == 0 || k > n {
        return Err(GdrError::InvalidArgument(format!(
            "kmeans needs 1 <= k <= n, got k={k}"
        )));
    }
    let mut best: Option<(f64, Vec<i64>)> = None;
    for restart in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);

        // ++ seeding: D^2-weighted choices
        let mut centroids: Vec<f64> = Vec::with_capacity(k * d);
        let first = rng.random_range(0..n);
        centroids.extend_from_slice(y.point(first));
        let mut min_d2: Vec<f64> = (0..n)
            .map(|i| point_dist2(y.point(i), &centroids[0..d]))
            .collect();
        while centroids.len() < k * d {
            let total: f64 = min_d2.iter().sum();
            let chosen = if total <= 0.0 {
                rng.random_range(0..n)
            } else {
                let mut target = rng.random::<f64>() * total;
                let mut pick = n - 1;
                for (i, &w) in min_d2.iter().enumerate() {
                    target -= w;
                    if target <= 0.0 {
                        pick = i;
                        break;
                    }
                }
                pick
            };
            let start = centroids.len();
            centroids.extend_from_slice(y.point(chosen));
            for i in 0..n {
                let d2 = point_dist2(y.point(i), &centroids[start..start + d]);
                min_d2[i] = min_d2[i].min(d2);
            }
        }

        let mut assign = vec![0usize; n];
        let mut sse = f64::INFINITY;
        for _iter in 0..100 {
            let mut changed = false;
            sse = 0.0;
            for i in 0..n {
                let mut best_c = 0;
                let mut best_d2 = f64::INFINITY;
                for c in 0..k {
                    let d2 = point_dist2(y.point(i), &centroids[c * d..(c + 1) * d]);
                    if d2 < best_d2 {
                        best_d2 = d2;
                        best_c = c;
                    }
                }
                if assign[i] != best_c {
                    assign[i] = best_c;
                    changed = true;
                }
                sse += best_d2;
            }
            // recompute centroids; reseed any empty cluster to the point
            // farthest from its current centroid
            let mut counts = vec![0usize; k];
            let mut sums = vec![0.0f64; k * d];
            for i in 0..n {
                counts[assign[i]] += 1;
                for c in 0..d {
                    sums[assign[i] * d + c] += y.point(i)[c];
                }
            }
            for c in 0..k {
                if counts[c] == 0 {
                    let far = (0..n)
                        .max_by(|&a, &b| {
                            let da = point_dist2(y.point(a), &centroids[assign[a] * d..assign[a] * d + d]);
                            let db = point_dist2(y.point(b), &centroids[assign[b] * d..assign[b] * d + d]);
                            da.partial_cmp(&db).unwrap()
                        })
                        .unwrap();
                    centroids[c * d..(c + 1) * d].copy_from_slice(y.point(far));
                    changed = true;
                } else {
                    for cc in 0..d {
                        centroids[c * d + cc] = sums[c * d + cc] / counts[c] as f64;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, assign.iter().map(|&a| a as i64).collect()));
        }
    }
    Ok(best.unwrap().1)
}

#[inline]
fn point_dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean pairwise distance between class centroids divided by the mean
/// within-class point-to-centroid distance. Returns +infinity when every
/// class is collapsed to a point. Single-point classes contribute zero
/// to the denominator mean (they carry no spread).
pub fn spread_ratio(y: &EmbeddingState, labels: &[i64]) -> Result<f64> {
    let n = y.n;
    let d = y.d;
    if labels.len() != n {
        return Err(GdrError::InvalidArgument("labels must cover all points".into()));
    }
    let mut classes: Vec<i64> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(GdrError::InvalidArgument("spread ratio needs >= 2 classes".into()));
    }

    let mut centroids = vec![0.0f64; classes.len() * d];
    let mut counts = vec![0usize; classes.len()];
    let class_index = |l: i64| classes.binary_search(&l).unwrap();
    for i in 0..n {
        let c = class_index(labels[i]);
        counts[c] += 1;
        for cc in 0..d {
            centroids[c * d + cc] += y.point(i)[cc];
        }
    }
    for c in 0..classes.len() {
        for cc in 0..d {
            centroids[c * d + cc] /= counts[c] as f64;
        }
    }

    let mut inter = 0.0;
    let mut pairs = 0usize;
    for a in 0..classes.len() {
        for b in (a + 1)..classes.len() {
            inter += point_dist2(&centroids[a * d..(a + 1) * d], &centroids[b * d..(b + 1) * d])
                .sqrt();
            pairs += 1;
        }
    }
    inter /= pairs as f64;

    let mut intra_sum = vec![0.0f64; classes.len()];
    for i in 0..n {
        let c = class_index(labels[i]);
        intra_sum[c] += point_dist2(y.point(i), &centroids[c * d..(c + 1) * d]).sqrt();
    }
    let intra: f64 = classes
        .iter()
        .enumerate()
        .map(|(c, _)| intra_sum[c] / counts[c] as f64)
        .sum::<f64>()
        / classes.len() as f64;

    if intra <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(inter / intra)
}

/// Mean angle (radians) between the exact O(n) repulsion on a point and
/// the average of `samples_per_trial` single-pair estimates, over
/// `trials` sampled points. Zero-norm vectors skip the trial.
#[allow(clippy::too_many_arguments)]
pub fn angle_agreement(
    y: &EmbeddingState,
    ab: &ABParams,
    regime: &GradientRegime,
    p_bar: f64,
    z: f64,
    trials: usize,
    samples_per_trial: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = y.d;
    let mut total = 0.0;
    let mut counted = 0usize;
    for _ in 0..trials {
        let i = rng.random_range(0..y.n);
        let exact = full_repulsion(i, y, ab, regime, p_bar, z);

        let mut approx = [0.0f64; 3];
        let mut u = [0.0f64; 3];
        for _ in 0..samples_per_trial {
            let k = sample_negative(i, y.n, &mut rng) as usize;
            let yi = y.point(i);
            let yk = y.point(k);
            for c in 0..d {
                u[c] = yi[c] - yk[c];
            }
            let d2: f64 = u[..d].iter().map(|c| c * c).sum();
            let q = crate::lowdim::q_unnormalized(d2, ab);
            let rep = match (regime.normalized, regime.loss) {
                (true, _) => crate::gradients::normalized_forces(0.0, q / z, z, d2, &u[..d], ab).1,
                (false, crate::gradients::LossKind::Kl) => {
                    crate::gradients::umap_forces(0.0, q, &u[..d], ab, regime.eps, p_bar).1
                }
                (false, crate::gradients::LossKind::Frobenius) => {
                    crate::gradients::frobenius_forces(0.0, q, &u[..d]).1
                }
            };
            for c in 0..d {
                approx[c] += rep[c];
            }
        }

        let ne: f64 = exact[..d].iter().map(|c| c * c).sum::<f64>().sqrt();
        let na: f64 = approx[..d].iter().map(|c| c * c).sum::<f64>().sqrt();
        if ne <= 0.0 || na <= 0.0 {
            continue; // skipped, still counted against the trial budget
        }
        let dot: f64 = exact[..d].iter().zip(&approx[..d]).map(|(a, b)| a * b).sum();
        total += (dot / (ne * na)).clamp(-1.0, 1.0).acos();
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

/// Accumulating variant of the angle diagnostic for live optimization
/// runs: per tracked point, the O(1)-sampled repulsions and the exact
/// O(n) repulsions are summed over a window of consecutive epochs, and
/// the angle between the two accumulated vectors closes each window.
///
/// A frozen single-epoch estimate is direction-noise dominated (the
/// exact repulsion of a settled embedding is nearest-neighbor heavy);
/// accumulation over the run is what the per-epoch sampler actually
/// delivers to a trajectory, and is the quantity that stays near zero.
pub struct RepulsionAngleProbe {
    tracked: Vec<usize>,
    samples_per_epoch: usize,
    window: usize,
    epoch_in_window: usize,
    acc_sampled: Vec<[f64; 3]>,
    acc_exact: Vec<[f64; 3]>,
    angles: Vec<f64>,
    rng: ChaCha8Rng,
}

impl RepulsionAngleProbe {
    pub fn new(n: usize, tracked: usize, samples_per_epoch: usize, window: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ids: Vec<usize> = (0..n).collect();
        // partial Fisher-Yates for the tracked subset
        for i in 0..tracked.min(n) {
            let j = rng.random_range(i..n);
            ids.swap(i, j);
        }
        ids.truncate(tracked.min(n));
        Self {
            tracked: ids,
            samples_per_epoch,
            window,
            epoch_in_window: 0,
            acc_sampled: vec![[0.0; 3]; tracked.min(n)],
            acc_exact: vec![[0.0; 3]; tracked.min(n)],
            angles: Vec::new(),
            rng,
        }
    }

    /// Called once per epoch with the live embedding. Both accumulators
    /// use the same per-pair kernel (z = 1 keeps exact and sampled on an
    /// identical scale; only directions matter here).
    pub fn observe(
        &mut self,
        y: &EmbeddingState,
        ab: &ABParams,
        regime: &GradientRegime,
        p_bar: f64,
    ) {
        let d = y.d;
        let mut u = [0.0f64; 3];
        for (slot, &i) in self.tracked.iter().enumerate() {
            let exact = full_repulsion(i, y, ab, regime, p_bar, 1.0);
            for c in 0..d {
                self.acc_exact[slot][c] += exact[c];
            }
            for _ in 0..self.samples_per_epoch {
                let k = sample_negative(i, y.n, &mut self.rng) as usize;
                let yi = y.point(i);
                let yk = y.point(k);
                for c in 0..d {
                    u[c] = yi[c] - yk[c];
                }
                let d2: f64 = u[..d].iter().map(|c| c * c).sum();
                let q = crate::lowdim::q_unnormalized(d2, ab);
                let rep = match (regime.normalized, regime.loss) {
                    (true, _) => {
                        crate::gradients::normalized_forces(0.0, q, 1.0, d2, &u[..d], ab).1
                    }
                    (false, crate::gradients::LossKind::Kl) => {
                        crate::gradients::umap_forces(0.0, q, &u[..d], ab, regime.eps, p_bar).1
                    }
                    (false, crate::gradients::LossKind::Frobenius) => {
                        crate::gradients::frobenius_forces(0.0, q, &u[..d]).1
                    }
                };
                for c in 0..d {
                    self.acc_sampled[slot][c] += rep[c];
                }
            }
        }
        self.epoch_in_window += 1;
        if self.epoch_in_window >= self.window {
            self.close_window(d);
        }
    }

    fn close_window(&mut self, d: usize) {
        for (ex, sm) in self.acc_exact.iter_mut().zip(self.acc_sampled.iter_mut()) {
            let ne: f64 = ex[..d].iter().map(|c| c * c).sum::<f64>().sqrt();
            let na: f64 = sm[..d].iter().map(|c| c * c).sum::<f64>().sqrt();
            if ne > 0.0 && na > 0.0 {
                let dot: f64 = ex[..d].iter().zip(&sm[..d]).map(|(a, b)| a * b).sum();
                self.angles.push((dot / (ne * na)).clamp(-1.0, 1.0).acos());
            }
            *ex = [0.0; 3];
            *sm = [0.0; 3];
        }
        self.epoch_in_window = 0;
    }

    /// Mean angle over all closed windows and tracked points.
    pub fn mean_angle(&self) -> f64 {
        if self.angles.is_empty() {
            0.0
        } else {
            self.angles.iter().sum::<f64>() / self.angles.len() as f64
        }
    }
}

/// Monte-Carlo attraction/repulsion magnitude ratios under the i.i.d.
/// displacement model, for three settings: normalized with n per-point
/// repulsions, normalized with one per-point repulsion, and
/// unnormalized.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ForceRatios {
    pub ratio_full: f64,
    pub ratio_sampled: f64,
    pub ratio_unnorm: f64,
    /// The value the derivation's cancellations leave: c * p * n with the
    /// normalized p ~ 1/(cn), i.e. balanced forces.
    pub closed_form: f64,
    pub p_tsne: f64,
    pub p_umap: f64,
}

/// Runs the displacement-model experiment with `draws` Monte-Carlo draws
/// per expectation. Displacements are i.i.d. Gaussian around a non-zero
/// mean; r = (1 + |v|^2)^-1; the normalization sums are the i.i.d.
/// substitutions Z = n^2 r and Z~ = n r, under which every expectation
/// reduces to a moment of |v| (independent draw streams per moment).
///
/// The unnormalized similarity is placed just under 1/(n^2 + 1), i.e.
/// the high-dimensional distance sits above sqrt(log(n^2 + 1) * tau).
pub fn force_ratio_experiment(n: usize, c: usize, draws: usize, seed: u64) -> ForceRatios {
    assert!(n >= 10);
    let nf = n as f64;
    let p_tsne = 1.0 / (c as f64 * nf);
    // distance 5% above the bound, tau = 1
    let dist = 1.05 * ((nf * nf + 1.0).ln()).sqrt();
    let p_umap = (-dist * dist).exp();

    let normal = Normal::new(0.0, 0.25).expect("sd");
    let mean = [1.0, 0.5];
    let draw_stream = |stream: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        move |f: &mut dyn FnMut(f64, f64)| {
            for _ in 0..draws {
                let vx: f64 = mean[0] + normal.sample(&mut rng);
                let vy: f64 = mean[1] + normal.sample(&mut rng);
                let norm = (vx * vx + vy * vy).sqrt();
                let r = 1.0 / (1.0 + vx * vx + vy * vy);
                f(norm, r);
            }
        }
    };
    let moment = |stream: u64, f: &dyn Fn(f64, f64) -> f64| -> f64 {
        let mut total = 0.0;
        let mut gen = draw_stream(stream);
        gen(&mut |norm, r| total += f(norm, r));
        total / draws as f64
    };

    // Normalized, n per-point repulsions (Z = n^2 r): the r's cancel.
    // attraction per point: c * p * E[|v|] / n^2; repulsion: n * E[|v|] / n^4.
    let att_full = c as f64 * p_tsne * moment(1, &|v, _| v) / (nf * nf);
    let rep_full = nf * moment(2, &|v, _| v) / (nf * nf * nf * nf);
    // Normalized, one repulsion (Z~ = n r).
    let att_sampled = c as f64 * p_tsne * moment(3, &|v, _| v) / nf;
    let rep_sampled = moment(4, &|v, _| v) / (nf * nf);
    // Unnormalized: att = p E[r |v|]; rep = (1 - p) E[r^2 / (1 - r) |v|].
    let att_un = p_umap * moment(5, &|v, r| r * v);
    let rep_un = (1.0 - p_umap) * moment(6, &|v, r| r * r / (1.0 - r) * v);

    ForceRatios {
        ratio_full: att_full / rep_full,
        ratio_sampled: att_sampled / rep_sampled,
        ratio_unnorm: att_un / rep_un,
        closed_form: c as f64 * p_tsne * nf,
        p_tsne,
        p_umap,
    }
}

/// Spearman rank correlation with average ranks on ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ra = ranks(a);
    let rb = ranks(b);
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - mean) * (y - mean);
        va += (x - mean) * (x - mean);
        vb += (y - mean) * (y - mean);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    num / (va * vb).sqrt()
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman correlation between the roll parameter and the embedding's
/// first principal axis (signed; callers report |rho|).
pub fn manifold_preservation(y: &EmbeddingState, t: &[f64]) -> f64 {
    assert_eq!(t.len(), y.n);
    let axis = principal_axis(y);
    let proj: Vec<f64> = (0..y.n)
        .map(|i| {
            y.point(i)
                .iter()
                .zip(&axis[..y.d])
                .map(|(c, a)| c * a)
                .sum()
        })
        .collect();
    spearman(&proj, t)
}

/// Dominant eigenvector of the d x d coordinate covariance by power
/// iteration (d <= 3 keeps this trivial).
fn principal_axis(y: &EmbeddingState) -> [f64; 3] {
    let d = y.d;
    let n = y.n as f64;
    let mut mean = [0.0f64; 3];
    for i in 0..y.n {
        for c in 0..d {
            mean[c] += y.point(i)[c];
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut cov = [[0.0f64; 3]; 3];
    for i in 0..y.n {
        let p = y.point(i);
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += (p[a] - mean[a]) * (p[b] - mean[b]) / n;
            }
        }
    }
    let mut v = [1.0f64; 3];
    for c in d..3 {
        v[c] = 0.0;
    }
    for _ in 0..200 {
        let mut next = [0.0f64; 3];
        for a in 0..d {
            for b in 0..d {
                next[a] += cov[a][b] * v[b];
            }
        }
        let nrm: f64 = next[..d].iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm <= 1e-300 {
            break;
        }
        for (dst, src) in v.iter_mut().zip(&next) {
            *dst = src / nrm;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradients::LossKind;

    fn state(coords: Vec<f64>, n: usize, d: usize) -> EmbeddingState {
        EmbeddingState::from_coords(n, d, coords)
    }

    #[test]
    fn knn_accuracy_perfect_separation() {
        // two blobs 100 sigma apart in 2-D
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut coords = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let off = if i < 100 { 0.0 } else { 100.0 };
            coords.push(off + normal.sample(&mut rng));
            coords.push(normal.sample(&mut rng));
            labels.push(i64::from(i >= 100));
        }
        let y = state(coords, 200, 2);
        let acc = knn_accuracy(&y, &labels, 10).unwrap();
        assert_eq!(acc, 100.0);
    }

    #[test]
    fn knn_accuracy_random_labels_near_chance() {
        // seeded: overlapping neighborhoods inflate the variance well past
        // the i.i.d. binomial figure, so the band holds per-seed, not
        // uniformly over seeds
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 2000;
        let coords: Vec<f64> = (0..n * 2).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<i64> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let y = state(coords, n, 2);
        let acc = knn_accuracy(&y, &labels, 10).unwrap();
        assert!(
            (acc - 50.0).abs() <= 3.0,
            "random labels scored {acc}, expected 50 +- 3"
        );
    }

    #[test]
    fn knn_accuracy_invariant_under_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 300;
        let coords: Vec<f64> = (0..n * 2).map(|_| rng.random::<f64>() * 5.0).collect();
        let labels: Vec<i64> = (0..n).map(|i| (i % 3) as i64).collect();
        let y = state(coords.clone(), n, 2);
        let base = knn_accuracy(&y, &labels, 7).unwrap();
        // rotate by 31 degrees and translate
        let th = 31f64.to_radians();
        let rotated: Vec<f64> = (0..n)
            .flat_map(|i| {
                let x = coords[i * 2];
                let yy = coords[i * 2 + 1];
                [
                    th.cos() * x - th.sin() * yy + 12.0,
                    th.sin() * x + th.cos() * yy - 4.0,
                ]
            })
            .collect();
        let yr = state(rotated, n, 2);
        let rot = knn_accuracy(&yr, &labels, 7).unwrap();
        assert_eq!(base, rot);
    }

    #[test]
    fn v_measure_identical_labelings() {
        let labels = vec![0i64, 0, 1, 1, 2, 2];
        let (h, c, v) = v_measure(&labels, &labels);
        assert_eq!((h, c, v), (1.0, 1.0, 1.0));
    }

    #[test]
    fn v_measure_single_cluster() {
        let labels = vec![0i64, 0, 1, 1];
        let clusters = vec![0i64, 0, 0, 0];
        let (h, c, v) = v_measure(&labels, &clusters);
        assert_eq!(h, 0.0);
        assert_eq!(c, 1.0);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn v_measure_matches_entropy_table_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let labels: Vec<i64> = (0..200).map(|_| rng.random_range(0..4)).collect();
        let clusters: Vec<i64> = (0..200).map(|_| rng.random_range(0..5)).collect();
        let (h, c, _v) = v_measure(&labels, &clusters);

        // independent entropy-table transcription
        let n = 200.0;
        let mut table = [[0.0f64; 5]; 4];
        for (&l, &k) in labels.iter().zip(&clusters) {
            table[l as usize][k as usize] += 1.0;
        }
        let row: Vec<f64> = (0..4).map(|l| table[l].iter().sum()).collect();
        let col: Vec<f64> = (0..5).map(|k| (0..4).map(|l| table[l][k]).sum()).collect();
        let hc: f64 = row
            .iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| -(x / n) * (x / n).ln())
            .sum();
        let hk: f64 = col
            .iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| -(x / n) * (x / n).ln())
            .sum();
        let mut hck = 0.0;
        let mut hkc = 0.0;
        for l in 0..4 {
            for k in 0..5 {
                let cnt = table[l][k];
                if cnt > 0.0 {
                    hck -= (cnt / n) * (cnt / col[k]).ln();
                    hkc -= (cnt / n) * (cnt / row[l]).ln();
                }
            }
        }
        let h_oracle = 1.0 - hck / hc;
        let c_oracle = 1.0 - hkc / hk;
        assert!((h - h_oracle).abs() < 1e-10);
        assert!((c - c_oracle).abs() < 1e-10);
    }

    #[test]
    fn v_measure_swaps_with_labelings() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a: Vec<i64> = (0..150).map(|_| rng.random_range(0..3)).collect();
        let b: Vec<i64> = (0..150).map(|_| rng.random_range(0..4)).collect();
        let (h1, c1, v1) = v_measure(&a, &b);
        let (h2, c2, v2) = v_measure(&b, &a);
        assert!((h1 - c2).abs() < 1e-12);
        assert!((c1 - h2).abs() < 1e-12);
        assert!((v1 - v2).abs() < 1e-12);
    }

    #[test]
    fn kmeans_k_equals_n_zero_sse() {
        let y = state(vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0], 3, 2);
        let assign = kmeans(&y, 3, 0, 2).unwrap();
        let mut sorted = assign.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 3);
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 0.5).unwrap();
        let centers = [(0.0, 0.0), (20.0, 0.0), (0.0, 20.0)];
        let mut coords = Vec::new();
        let mut truth = Vec::new();
        for (label, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..40 {
                coords.push(cx + normal.sample(&mut rng));
                coords.push(cy + normal.sample(&mut rng));
                truth.push(label as i64);
            }
        }
        let y = state(coords, 120, 2);
        let assign = kmeans(&y, 3, 9, 3).unwrap();
        let (_, _, v) = v_measure(&truth, &assign);
        assert!(v > 0.999, "v = {v}");
        // determinism
        let again = kmeans(&y, 3, 9, 3).unwrap();
        assert_eq!(assign, again);
    }

    #[test]
    fn spread_ratio_collapsed_classes_is_infinite() {
        let y = state(vec![0.0, 0.0, 0.0, 0.0, 5.0, 5.0, 5.0, 5.0], 4, 2);
        let labels = vec![0i64, 0, 1, 1];
        assert!(spread_ratio(&y, &labels).unwrap().is_infinite());
    }

    #[test]
    fn spread_ratio_two_unit_blobs() {
        // 10 apart, unit variance in 2-D: ratio ~ 10 / E|N(0, I_2)| = 7.98
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n_per = 4000;
        let mut coords = Vec::new();
        let mut labels = Vec::new();
        for i in 0..2 * n_per {
            let off = if i < n_per { 0.0 } else { 10.0 };
            coords.push(off + normal.sample(&mut rng));
            coords.push(normal.sample(&mut rng));
            labels.push(i64::from(i >= n_per));
        }
        let y = state(coords, 2 * n_per, 2);
        let ratio = spread_ratio(&y, &labels).unwrap();
        let expected = 10.0 / (std::f64::consts::PI / 2.0).sqrt();
        assert!(
            (ratio - expected).abs() < 0.3,
            "ratio {ratio} vs expected {expected}"
        );
    }

    #[test]
    fn spread_ratio_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100;
        let coords: Vec<f64> = (0..n * 2).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<i64> = (0..n).map(|i| (i % 4) as i64).collect();
        let base = spread_ratio(&state(coords.clone(), n, 2), &labels).unwrap();
        let scaled: Vec<f64> = coords.iter().map(|c| c * 137.0).collect();
        let big = spread_ratio(&state(scaled, n, 2), &labels).unwrap();
        assert!((base - big).abs() < 1e-9);
    }

    #[test]
    fn angle_agreement_two_points_is_zero() {
        let y = state(vec![0.0, 0.0, 2.0, 0.0], 2, 2);
        let regime = GradientRegime {
            normalized: false,
            loss: LossKind::Kl,
            accelerated: false,
            eps: 1e-3,
        };
        let mean = angle_agreement(&y, &ABParams::unit(), &regime, 0.1, 1.0, 20, 5, 3);
        assert_eq!(mean, 0.0);
    }

    #[test]
    fn accumulated_probe_converges_to_exact_direction() {
        // On a frozen cloud the accumulated sampled repulsion is an
        // unbiased estimate of the exact sum; with a generous budget the
        // angle collapses toward zero.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let normal = Normal::new(0.0, 2.0).unwrap();
        let n = 500;
        let coords: Vec<f64> = (0..n * 2).map(|_| normal.sample(&mut rng)).collect();
        let y = state(coords, n, 2);
        let regime = GradientRegime {
            normalized: true,
            loss: LossKind::Kl,
            accelerated: false,
            eps: 0.0,
        };
        let mut probe = RepulsionAngleProbe::new(n, 60, 40, 400, 11);
        for _ in 0..400 {
            probe.observe(&y, &ABParams::unit(), &regime, 0.1);
        }
        let mean = probe.mean_angle();
        assert!(mean < 0.2, "accumulated angle {mean} did not converge");
    }

    #[test]
    fn force_ratio_theorems() {
        for &n in &[100usize, 1000] {
            let r = force_ratio_experiment(n, 5, 20_000, 13);
            // sampling invariance of the normalized ratio
            let ratio = r.ratio_full / r.ratio_sampled;
            assert!(
                (0.9..=1.1).contains(&ratio),
                "full/sampled = {ratio} at n = {n}"
            );
            // cancellation closed form: c * p * n = 1 at p = 1/(cn)
            assert!((r.ratio_full - r.closed_form).abs() / r.closed_form < 0.1);
            assert!((r.ratio_sampled - r.closed_form).abs() / r.closed_form < 0.1);
            // the unnormalized ratio sits far below once p < 1/(n^2+1)
            assert!(r.p_umap < 1.0 / (n as f64 * n as f64 + 1.0));
            assert!(r.ratio_unnorm < r.ratio_sampled);
        }
    }

    #[test]
    fn spearman_basics() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [10.0, 20.0, 30.0, 40.0];
        assert!((spearman(&a, &b) - 1.0).abs() < 1e-12);
        let c = [40.0, 30.0, 20.0, 10.0];
        assert!((spearman(&a, &c) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn manifold_preservation_cases() {
        let t: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        // Y = (t, 0)
        let coords: Vec<f64> = t.iter().flat_map(|&x| [x, 0.0]).collect();
        let y = state(coords, 100, 2);
        assert!((manifold_preservation(&y, &t) - 1.0).abs() < 1e-9);
        // Y = (-t, 0): rho = -1, |rho| = 1
        let coords: Vec<f64> = t.iter().flat_map(|&x| [-x, 0.0]).collect();
        let y = state(coords, 100, 2);
        assert!((manifold_preservation(&y, &t) + 1.0).abs() < 1e-9);
    }

    #[test]
    fn manifold_preservation_shuffled_is_weak() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 2000;
        let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut shuffled = t.clone();
        // Fisher-Yates
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            shuffled.swap(i, j);
        }
        let coords: Vec<f64> = shuffled.iter().flat_map(|&x| [x, 0.0]).collect();
        let y = state(coords, n, 2);
        let rho = manifold_preservation(&y, &t);
        assert!(rho.abs() < 0.1, "shuffled rho {rho}");
    }
}
