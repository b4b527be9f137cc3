//! The gradient-descent engine: initialization, the epoch loop with
//! immediate or batched force application, momentum plus gains, the
//! running normalization estimate, and the four mode presets.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::affinity::{
    calibrate_kernel, directed_affinities, symmetrize, AffinityGraph, KernelMode, Symmetrization,
};
use crate::dataset::DataMatrix;
use crate::error::{GdrError, Result};
use crate::gradients::{
    clip_force, frobenius_forces, loss_estimate, normalized_forces, umap_forces, GradientRegime,
    LossKind,
};
use crate::knn::{knn_descent, knn_exact, NnDescentParams};
use crate::lowdim::{fit_ab, normalization_z, q_unnormalized, ABParams};
use crate::sampling::{applies, sample_negative, SamplingMode, SamplingPlan};

/// Per-coordinate clip applied to unnormalized-KL forces before any
/// update, taming the inverse-distance repulsion.
pub const GRADIENT_CLIP: f64 = 4.0;
/// Random-init coordinate scale, also the spectral-init output scale.
pub const INIT_SCALE: f64 = 1e-2;
/// Unnormalized runs start from the init expanded to this stddev. At the
/// 1e-2 init scale every pair sits inside the eps floor of the
/// unnormalized repulsion, so the first epoch's clipped kicks would wipe
/// whatever structure the init carried.
pub const UNNORMALIZED_START_SCALE: f64 = 2.5;
/// Momentum switches from 0.5 to its configured value at this epoch.
pub const MOMENTUM_SWITCH_EPOCH: usize = 250;
/// Gains shrink to no less than this.
pub const GAINS_FLOOR: f64 = 0.01;
/// Exact-Z refresh cadence in normalized mode (n <= 2000 only).
const Z_REFRESH_EVERY: usize = 50;
/// Dense losses are traced only up to this size; larger runs sample.
const DENSE_LOSS_MAX_N: usize = 2000;
/// Coordinates beyond this magnitude abort the run.
const RUNAWAY_LIMIT: f64 = 1e8;

/// Embedding coordinates plus the per-coordinate buffers that gradient
/// amplification needs.
#[derive(Debug, Clone)]
pub struct EmbeddingState {
    pub n: usize,
    pub d: usize,
    /// Row-major n x d coordinates.
    pub coords: Vec<f64>,
    /// Momentum buffer, same layout.
    pub velocity: Vec<f64>,
    /// Per-coordinate gain multipliers, >= [`GAINS_FLOOR`].
    pub gains: Vec<f64>,
    pub epoch: usize,
}

impl EmbeddingState {
    pub fn from_coords(n: usize, d: usize, coords: Vec<f64>) -> Self {
        assert_eq!(coords.len(), n * d);
        Self {
            n,
            d,
            coords,
            velocity: vec![0.0; n * d],
            gains: vec![1.0; n * d],
            epoch: 0,
        }
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn dist2(&self, i: usize, j: usize) -> f64 {
        let a = self.point(i);
        let b = self.point(j);
        let mut acc = 0.0;
        for c in 0..self.d {
            let diff = a[c] - b[c];
            acc += diff * diff;
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Tsne,
    Umap,
    GdrTsne,
    GdrUmap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Random,
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ApplyMode {
    /// Move each point the moment its force is computed.
    Immediate,
    /// Accumulate the epoch's forces, then take one momentum step.
    Batched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    LinearDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AbMode {
    Unit,
    Fitted,
}

/// Every algorithmic toggle in one place. Construct via [`RunConfig::preset`]
/// and override fields as needed; [`RunConfig::validate`] rejects the
/// combinations that cannot run.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub normalized: bool,
    pub init: InitMode,
    pub pseudo_distance: bool,
    pub symmetrization: Symmetrization,
    pub sym_attraction: bool,
    pub ab_mode: AbMode,
    pub min_dist: f64,
    pub spread: f64,
    pub sampling: SamplingPlan,
    pub loss: LossKind,
    pub apply: ApplyMode,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
    pub d: usize,
    /// 0 means "derive": 3 * perplexity for the Gaussian kernel, 15 otherwise.
    pub k_neighbors: usize,
    pub perplexity: f64,
    pub eps: f64,
    /// 0 means all cores; 1 is the bitwise-deterministic path.
    pub threads: usize,
    /// Reproduces the divergent normalized-scalar-sampling configuration
    /// (expected to trip the non-finite guard).
    pub unsafe_normalized_scalar_sampling: bool,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let base = Self {
            preset,
            normalized: false,
            init: InitMode::Spectral,
            pseudo_distance: true,
            symmetrization: Symmetrization::Union,
            sym_attraction: false,
            ab_mode: AbMode::Unit,
            min_dist: 0.1,
            spread: 1.0,
            sampling: SamplingPlan {
                mode: SamplingMode::PerEdge,
                neg_samples: 5,
                accelerated: false,
                seed: 0,
            },
            loss: LossKind::Kl,
            apply: ApplyMode::Batched,
            lr: 1.0,
            lr_schedule: LrSchedule::LinearDecay,
            momentum: 0.0,
            epochs: 500,
            seed: 0,
            d: 2,
            k_neighbors: 0,
            perplexity: 30.0,
            eps: 1e-3,
            threads: 1,
            unsafe_normalized_scalar_sampling: false,
        };
        match preset {
            Preset::Tsne => Self {
                normalized: true,
                init: InitMode::Random,
                pseudo_distance: false,
                symmetrization: Symmetrization::Average,
                lr_schedule: LrSchedule::Constant,
                momentum: 0.9,
                epochs: 1000,
                ..base
            },
            Preset::Umap => Self {
                init: InitMode::Spectral,
                sym_attraction: true,
                ab_mode: AbMode::Fitted,
                sampling: SamplingPlan {
                    mode: SamplingMode::ScalarSampling,
                    neg_samples: 5,
                    accelerated: false,
                    seed: 0,
                },
                apply: ApplyMode::Immediate,
                ..base
            },
            Preset::GdrTsne => Self {
                normalized: true,
                momentum: 0.9,
                epochs: 1000,
                ..base
            },
            Preset::GdrUmap => base,
        }
    }

    /// Neighbor count actually used for the kNN graph.
    pub fn effective_k(&self, n: usize) -> usize {
        let raw = if self.k_neighbors > 0 {
            self.k_neighbors
        } else if self.kernel_mode() == KernelMode::GaussianPerplexity {
            (3.0 * self.perplexity).ceil() as usize
        } else {
            15
        };
        raw.clamp(1, n - 1)
    }

    /// The high-dimensional kernel is tied to the preset family: the
    /// tsne preset keeps the Gaussian perplexity kernel, everything else
    /// builds on the shifted exponential.
    pub fn kernel_mode(&self) -> KernelMode {
        match self.preset {
            Preset::Tsne => KernelMode::GaussianPerplexity,
            _ => KernelMode::UmapExponential,
        }
    }

    /// Gradient amplification (momentum + gains) is active only for
    /// batched application with a nonzero momentum coefficient.
    pub fn amplification(&self) -> bool {
        self.apply == ApplyMode::Batched && self.momentum > 0.0
    }

    pub fn regime(&self) -> GradientRegime {
        GradientRegime {
            normalized: self.normalized,
            loss: self.loss,
            accelerated: self.sampling.accelerated,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.regime().validate()?;
        if self.loss == LossKind::Frobenius && self.ab_mode == AbMode::Fitted {
            return Err(GdrError::Config(
                "the Frobenius forces are derived for a = b = 1; use --ab unit".into(),
            ));
        }
        if self.normalized
            && self.sampling.mode == SamplingMode::ScalarSampling
            && !self.unsafe_normalized_scalar_sampling
        {
            return Err(GdrError::Config(
                "scalar sampling in the normalized setting diverges; pass \
                 --unsafe-normalized-scalar-sampling to run it anyway"
                    .into(),
            ));
        }
        if !(1..=3).contains(&self.d) {
            return Err(GdrError::Config(format!("d must be 1, 2 or 3, got {}", self.d)));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(GdrError::Config("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(GdrError::Config("momentum must lie in [0, 1)".into()));
        }
        if self.sampling.neg_samples < 1 {
            return Err(GdrError::Config("neg-samples must be >= 1".into()));
        }
        if self.kernel_mode() == KernelMode::GaussianPerplexity && self.perplexity <= 1.0 {
            return Err(GdrError::Config("perplexity must exceed 1".into()));
        }
        if self.min_dist < 0.0 || self.spread <= 0.0 || self.min_dist >= self.spread * 10.0 {
            return Err(GdrError::Config(
                "need 0 <= min-dist < 10 * spread and spread > 0".into(),
            ));
        }
        Ok(())
    }
}

/// i.i.d. Gaussian coordinates with the given scale; zeroed velocity,
/// unit gains.
pub fn init_random(n: usize, d: usize, seed: u64, scale: f64) -> EmbeddingState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0, scale).expect("valid scale");
    let coords = (0..n * d)
        .map(|_| rand_distr::Distribution::sample(&normal, &mut rng))
        .collect();
    EmbeddingState::from_coords(n, d, coords)
}

/// Learning rate at a given epoch.
#[inline]
pub fn lr_at(lr: f64, schedule: LrSchedule, epoch: usize, epochs: usize) -> f64 {
    match schedule {
        LrSchedule::Constant => lr,
        LrSchedule::LinearDecay => lr * (1.0 - epoch as f64 / epochs.max(1) as f64),
    }
}

/// Classic amplified step: gains grow by 0.2 when the gradient opposes
/// the velocity and shrink by x0.8 otherwise (floored), then
/// velocity = momentum * velocity - lr * gains * grad and Y moves by the
/// velocity. With `amplify` off the gains stay untouched at 1.
pub fn step_batched(
    state: &mut EmbeddingState,
    grad: &[f64],
    lr: f64,
    momentum: f64,
    amplify: bool,
) {
    debug_assert_eq!(grad.len(), state.coords.len());
    for idx in 0..grad.len() {
        let g = grad[idx];
        let gain = if amplify {
            let gain = if (g > 0.0) != (state.velocity[idx] > 0.0) {
                state.gains[idx] + 0.2
            } else {
                state.gains[idx] * 0.8
            }
            .max(GAINS_FLOOR);
            state.gains[idx] = gain;
            gain
        } else {
            1.0
        };
        state.velocity[idx] = momentum * state.velocity[idx] - lr * gain * g;
        state.coords[idx] += state.velocity[idx];
    }
}

/// Immediate update: the point moves by lr * force on the spot.
#[inline]
pub fn step_immediate(y_i: &mut [f64], force: &[f64], lr_epoch: f64) {
    for (c, f) in y_i.iter_mut().zip(force) {
        *c += lr_epoch * f;
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PhaseTimings {
    pub knn_secs: f64,
    pub affinity_secs: f64,
    pub init_secs: f64,
    pub optimize_secs: f64,
}

/// What a run reports besides the embedding itself.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub n: usize,
    pub k_used: usize,
    pub ab: ABParams,
    pub phases: PhaseTimings,
    /// (epoch, loss) pairs; dense loss for n <= 2000, sampled estimate above.
    pub loss_trace: Vec<(usize, f64)>,
    pub warnings: Vec<String>,
    pub edges: usize,
    pub per_epoch_secs: f64,
}

/// End-to-end pipeline: kNN graph, affinities, init, epoch loop.
pub fn run(data: &DataMatrix, config: &RunConfig) -> Result<(EmbeddingState, RunReport)> {
    config.validate()?;
    let threads = if config.threads == 0 {
        rayon::current_num_threads()
    } else {
        config.threads
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| GdrError::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_inner(data, config, threads))
}

fn run_inner(
    data: &DataMatrix,
    config: &RunConfig,
    threads: usize,
) -> Result<(EmbeddingState, RunReport)> {
    let n = data.n;
    let mut warnings = Vec::new();
    let mut phases = PhaseTimings::default();

    let k = config.effective_k(n);
    let t0 = Instant::now();
    let graph = match config.kernel_mode() {
        KernelMode::GaussianPerplexity => knn_exact(data, k)?,
        KernelMode::UmapExponential => knn_descent(
            data,
            k,
            &NnDescentParams {
                seed: config.seed,
                ..NnDescentParams::default()
            },
        )?,
    };
    phases.knn_secs = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let kernel = calibrate_kernel(
        &graph,
        config.kernel_mode(),
        config.perplexity,
        config.pseudo_distance,
    );
    if kernel.clamped_rows > 0 {
        warnings.push(format!(
            "{} of {} rows clamped during kernel calibration",
            kernel.clamped_rows, n
        ));
    }
    let weights = directed_affinities(&graph, &kernel);
    let p = symmetrize(&graph, &weights, config.symmetrization)?;
    phases.affinity_secs = t0.elapsed().as_secs_f64();

    let ab = match config.ab_mode {
        AbMode::Unit => ABParams::unit(),
        AbMode::Fitted => {
            let fit = fit_ab(config.min_dist, config.spread)?;
            if !fit.converged {
                warnings.push(format!(
                    "a/b fit RMSE {:.4} failed the gate; using a = b = 1",
                    fit.rmse
                ));
            }
            fit.params
        }
    };

    let t0 = Instant::now();
    let mut state = match config.init {
        InitMode::Random => init_random(n, config.d, config.seed, INIT_SCALE),
        InitMode::Spectral => {
            let (state, fell_back) = crate::spectral::init_spectral(&p, config.d);
            if fell_back {
                warnings.push("spectral init fell back to random".into());
            }
            state
        }
    };
    if !config.normalized {
        let expand = UNNORMALIZED_START_SCALE / INIT_SCALE;
        for c in state.coords.iter_mut() {
            *c *= expand;
        }
    }
    phases.init_secs = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let mut trace = Vec::new();
    optimize(&mut state, &p, &ab, config, threads, &mut trace)?;
    phases.optimize_secs = t0.elapsed().as_secs_f64();

    let per_epoch_secs = if config.epochs > 0 {
        phases.optimize_secs / config.epochs as f64
    } else {
        0.0
    };
    let report = RunReport {
        config: config.clone(),
        n,
        k_used: k,
        ab,
        phases,
        loss_trace: trace,
        warnings,
        edges: p.edges.len(),
        per_epoch_secs,
    };
    Ok((state, report))
}

/// The epoch loop over a prebuilt affinity graph. Exposed so callers can
/// re-run optimization phases without rebuilding the pipeline.
pub fn optimize(
    state: &mut EmbeddingState,
    p: &AffinityGraph,
    ab: &ABParams,
    config: &RunConfig,
    threads: usize,
    loss_trace: &mut Vec<(usize, f64)>,
) -> Result<()> {
    optimize_observed(state, p, ab, config, threads, loss_trace, |_, _| {})
}

/// [`optimize`] with a per-epoch observer (called after each epoch's
/// update with the epoch index and the live state); diagnostics that
/// track quantities along the run hook in here.
pub fn optimize_observed<F>(
    state: &mut EmbeddingState,
    p: &AffinityGraph,
    ab: &ABParams,
    config: &RunConfig,
    threads: usize,
    loss_trace: &mut Vec<(usize, f64)>,
    mut observer: F,
) -> Result<()>
where
    F: FnMut(usize, &EmbeddingState),
{
    let regime = config.regime();
    let n = state.n;
    let epochs = config.epochs;
    if epochs == 0 {
        return Ok(());
    }

    // Normalized mode keeps a running estimate of the q-sum; it is
    // re-anchored exactly every Z_REFRESH_EVERY epochs at desk scale.
    let mut z_est = if config.normalized {
        estimate_z(state, ab, config.seed)
    } else {
        1.0
    };

    let lr_base = if config.normalized {
        // normalized gradients are about n/k weaker (p_hat ~ p / sum p)
        config.lr * n as f64 / p_degree(p)
    } else {
        config.lr
    };

    let trace_every = (epochs / 20).max(1);
    let mut trace_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7ace);

    // the divergence-demo correction divides by the sampled pair's 1 - p
    let unsafe_edge_map: Option<std::collections::HashMap<(u32, u32), f64>> = (config
        .unsafe_normalized_scalar_sampling
        && config.normalized
        && config.sampling.mode == SamplingMode::ScalarSampling)
        .then(|| p.edges.iter().map(|&(i, j, w)| ((i, j), w)).collect());

    for epoch in 0..epochs {
        state.epoch = epoch;
        let lr_e = lr_at(lr_base, config.lr_schedule, epoch, epochs);

        if epoch % trace_every == 0 {
            loss_trace.push((epoch, trace_loss(&regime, p, state, ab, &mut trace_rng)));
        }
        if config.normalized && n <= DENSE_LOSS_MAX_N && epoch % Z_REFRESH_EVERY == 0 {
            z_est = normalization_z(state, ab);
        }

        // importance weight of one sampled repulsion in the normalized
        // regime: the epoch's m samples estimate the full n(n-1)-pair sum
        let rep_weight = if config.normalized {
            let per_direction = if config.sampling.mode == SamplingMode::ScalarSampling {
                config.sampling.neg_samples
            } else {
                1
            };
            let fired = match config.sampling.mode {
                SamplingMode::PerEdge if !config.sampling.accelerated => p.edges.len(),
                _ => p
                    .edges
                    .iter()
                    .filter(|&&(_, _, w)| applies(&config.sampling, w, epoch))
                    .count(),
            };
            let m = (2 * fired * per_direction).max(1);
            (n * (n - 1)) as f64 / m as f64
        } else {
            1.0
        };

        let z_epoch = match config.apply {
            ApplyMode::Batched => batched_epoch(
                state, p, ab, config, &regime, unsafe_edge_map.as_ref(), lr_e, z_est,
                rep_weight, epoch, threads,
            ),
            ApplyMode::Immediate => immediate_epoch(
                state, p, ab, config, &regime, unsafe_edge_map.as_ref(), lr_e, z_est,
                rep_weight, epoch, threads,
            ),
        };
        if config.normalized {
            if let Some(fresh) = z_epoch {
                z_est = 0.9 * z_est + 0.1 * fresh;
            }
        }

        for (idx, &c) in state.coords.iter().enumerate() {
            if !c.is_finite() || c.abs() > RUNAWAY_LIMIT {
                return Err(GdrError::NumericAbort {
                    epoch,
                    point: idx / state.d,
                });
            }
        }
        observer(epoch, state);
    }
    state.epoch = epochs;
    loss_trace.push((epochs, trace_loss(&regime, p, state, ab, &mut trace_rng)));
    Ok(())
}

/// Mean number of edges touching a point; the learning-rate scale for
/// normalized mode divides by this rather than raw k so dropped edges
/// do not skew it.
fn p_degree(p: &AffinityGraph) -> f64 {
    (2.0 * p.edges.len() as f64 / p.n as f64).max(1.0)
}

fn trace_loss(
    regime: &GradientRegime,
    p: &AffinityGraph,
    state: &EmbeddingState,
    ab: &ABParams,
    rng: &mut ChaCha8Rng,
) -> f64 {
    if state.n <= DENSE_LOSS_MAX_N {
        match (regime.normalized, regime.loss) {
            (true, LossKind::Kl) => crate::gradients::kl_loss_normalized(p, state, ab),
            (false, LossKind::Kl) => {
                crate::gradients::kl_loss_unnormalized(p, state, ab, 0.0, regime.eps)
            }
            (false, LossKind::Frobenius) => crate::gradients::frobenius_loss(p, state, ab),
            _ => f64::NAN,
        }
    } else {
        loss_estimate(regime, p, state, ab, 20_000, rng)
    }
}

fn estimate_z(state: &EmbeddingState, ab: &ABParams, seed: u64) -> f64 {
    let n = state.n;
    if n <= DENSE_LOSS_MAX_N {
        return normalization_z(state, ab);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
    let samples = 200_000;
    let mut mean = 0.0;
    for _ in 0..samples {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n);
        while j == i {
            j = rng.random_range(0..n);
        }
        mean += q_unnormalized(state.dist2(i, j), ab);
    }
    (n * (n - 1)) as f64 * mean / samples as f64
}

/// Coordinate view the force kernels read through: a plain slice in
/// batched mode, relaxed atomics in immediate mode so concurrent
/// unsynchronized updates stay well-defined (racy by contract).
#[derive(Clone, Copy)]
enum Coords<'a> {
    Plain(&'a [f64]),
    Atomic(&'a [std::sync::atomic::AtomicU64]),
}

impl Coords<'_> {
    #[inline]
    fn get(&self, idx: usize) -> f64 {
        match self {
            Coords::Plain(s) => s[idx],
            Coords::Atomic(a) => {
                f64::from_bits(a[idx].load(std::sync::atomic::Ordering::Relaxed))
            }
        }
    }

    #[inline]
    fn load_point(&self, i: usize, d: usize, out: &mut [f64; 3]) {
        for c in 0..d {
            out[c] = self.get(i * d + c);
        }
    }

    /// Unsynchronized read-modify-write; only the atomic view supports it.
    #[inline]
    fn add(&self, idx: usize, delta: f64) {
        match self {
            Coords::Plain(_) => unreachable!("batched mode writes to its own buffer"),
            Coords::Atomic(a) => {
                let cell = &a[idx];
                let cur = f64::from_bits(cell.load(std::sync::atomic::Ordering::Relaxed));
                cell.store(
                    (cur + delta).to_bits(),
                    std::sync::atomic::Ordering::Relaxed,
                );
            }
        }
    }
}

/// Attraction and repulsion of one directed application, already scaled
/// for the sampling regime and clipped where the regime requires it.
///
/// `rep_weight` is the importance weight a sampled repulsion carries in
/// the normalized regime: the epoch takes m repulsion samples standing
/// in for all n(n-1) pairs of the exact sum, so each one is scaled by
/// n(n-1)/m. This is what keeps the attraction/repulsion ratio at its
/// full-sum value with O(1) samples; without it attraction wins by n/k
/// and the clusters collapse.
#[allow(clippy::too_many_arguments)]
#[inline]
fn directed_forces(
    coords: Coords<'_>,
    n: usize,
    d: usize,
    head: usize,
    tail: usize,
    w: f64,
    ab: &ABParams,
    config: &RunConfig,
    regime: &GradientRegime,
    p: &AffinityGraph,
    unsafe_edges: Option<&std::collections::HashMap<(u32, u32), f64>>,
    z: f64,
    rep_weight: f64,
    rng: &mut ChaCha8Rng,
) -> ([f64; 3], [f64; 3], f64, f64) {
    let mut yh = [0.0f64; 3];
    let mut yt = [0.0f64; 3];
    coords.load_point(head, d, &mut yh);
    coords.load_point(tail, d, &mut yt);
    let mut v = [0.0f64; 3];
    for c in 0..d {
        v[c] = yh[c] - yt[c];
    }
    let d2: f64 = v[..d].iter().map(|c| c * c).sum();
    let q_att = q_unnormalized(d2, ab);
    // only the uniform negative pairs feed the Z estimate; edge pairs are
    // biased-high samples of q
    let mut q_sum = 0.0;
    let mut touched = 0.0;

    let scalar_mode = config.sampling.mode == SamplingMode::ScalarSampling;
    let explicit = !scalar_mode || config.sampling.accelerated;

    let mut att = match (regime.normalized, regime.loss) {
        (true, _) => {
            let p_hat = if explicit { w / p.p_sum } else { 1.0 / p.p_sum };
            normalized_forces(p_hat, q_att / z, z, d2, &v[..d], ab).0
        }
        (false, LossKind::Kl) => {
            let p_mult = if explicit { w } else { 1.0 };
            umap_forces(p_mult, q_att, &v[..d], ab, regime.eps, 0.0).0
        }
        (false, LossKind::Frobenius) => {
            let p_mult = if explicit { w } else { 1.0 };
            frobenius_forces(p_mult, q_att, &v[..d]).0
        }
    };
    if !regime.normalized && regime.loss == LossKind::Kl {
        clip_force(&mut att, GRADIENT_CLIP);
    }

    // one negative per attraction in per-edge mode, neg_samples otherwise
    let negs = if scalar_mode {
        config.sampling.neg_samples
    } else {
        1
    };
    let mut rep_total = [0.0f64; 3];
    let mut yk = [0.0f64; 3];
    let mut u = [0.0f64; 3];
    for _ in 0..negs {
        let neg_id = sample_negative(head, n, rng);
        coords.load_point(neg_id as usize, d, &mut yk);
        for c in 0..d {
            u[c] = yh[c] - yk[c];
        }
        let ud2: f64 = u[..d].iter().map(|c| c * c).sum();
        let q_rep = q_unnormalized(ud2, ab);
        q_sum += q_rep;
        touched += 1.0;
        let mut rep = match (regime.normalized, regime.loss) {
            (true, _) => {
                let mut r = normalized_forces(0.0, q_rep / z, z, ud2, &u[..d], ab).1;
                let mut scale = rep_weight;
                if let Some(edges) = unsafe_edges {
                    // divide by the sampled pair's own 1 - p; a sampled
                    // nearest neighbor has p = 1, so this is the divergence
                    // the flag exists to demonstrate
                    let key = (
                        (head as u32).min(neg_id),
                        (head as u32).max(neg_id),
                    );
                    let p_ik = edges.get(&key).copied().unwrap_or(p.p_mean);
                    scale /= 1.0 - p_ik;
                }
                for c in r.iter_mut() {
                    *c *= scale;
                }
                r
            }
            (false, LossKind::Kl) => {
                let p_bar = if explicit { p.p_mean } else { 0.0 };
                umap_forces(0.0, q_rep, &u[..d], ab, regime.eps, p_bar).1
            }
            (false, LossKind::Frobenius) => frobenius_forces(0.0, q_rep, &u[..d]).1,
        };
        if !regime.normalized && regime.loss == LossKind::Kl {
            clip_force(&mut rep, GRADIENT_CLIP);
        }
        for c in 0..d {
            rep_total[c] += rep[c];
        }
    }
    (att, rep_total, q_sum, touched)
}

/// One batched epoch: forces accumulate into per-chunk buffers that are
/// reduced in chunk order, then a single (possibly amplified) step runs.
/// Returns the rescaled q-sum estimate of the full normalization term.
#[allow(clippy::too_many_arguments)]
fn batched_epoch(
    state: &mut EmbeddingState,
    p: &AffinityGraph,
    ab: &ABParams,
    config: &RunConfig,
    regime: &GradientRegime,
    unsafe_edges: Option<&std::collections::HashMap<(u32, u32), f64>>,
    lr_e: f64,
    z: f64,
    rep_weight: f64,
    epoch: usize,
    threads: usize,
) -> Option<f64> {
    let n = state.n;
    let d = state.d;
    let edges = &p.edges;
    let n_chunks = threads.max(1);
    let chunk_len = edges.len().div_ceil(n_chunks);

    let results: Vec<(Vec<f64>, f64, f64)> = if n_chunks == 1 {
        vec![accumulate_chunk(
            state, p, ab, config, regime, unsafe_edges, z, rep_weight, epoch, 0, 0..edges.len(),
        )]
    } else {
        use rayon::prelude::*;
        (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let lo = c * chunk_len;
                let hi = ((c + 1) * chunk_len).min(edges.len());
                accumulate_chunk(
                    state, p, ab, config, regime, unsafe_edges, z, rep_weight, epoch, c as u64,
                    lo..hi,
                )
            })
            .collect()
    };

    let mut force = vec![0.0f64; n * d];
    let mut q_sum = 0.0;
    let mut touched = 0.0;
    for (buf, qs, t) in results {
        for (acc, f) in force.iter_mut().zip(&buf) {
            *acc += f;
        }
        q_sum += qs;
        touched += t;
    }

    let grad: Vec<f64> = force.iter().map(|f| -f).collect();
    let momentum = if config.amplification() {
        if epoch < MOMENTUM_SWITCH_EPOCH {
            config.momentum.min(0.5)
        } else {
            config.momentum
        }
    } else {
        0.0
    };
    step_batched(state, &grad, lr_e, momentum, config.amplification());

    (touched > 0.0).then(|| (n * (n - 1)) as f64 * q_sum / touched)
}

#[allow(clippy::too_many_arguments)]
fn accumulate_chunk(
    state: &EmbeddingState,
    p: &AffinityGraph,
    ab: &ABParams,
    config: &RunConfig,
    regime: &GradientRegime,
    unsafe_edges: Option<&std::collections::HashMap<(u32, u32), f64>>,
    z: f64,
    rep_weight: f64,
    epoch: usize,
    chunk: u64,
    range: std::ops::Range<usize>,
) -> (Vec<f64>, f64, f64) {
    let d = state.d;
    let mut buf = vec![0.0f64; state.n * d];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(((epoch as u64) << 16) | (chunk + 1));
    let mut q_sum = 0.0;
    let mut touched = 0.0;

    let coords = Coords::Plain(&state.coords);
    for &(i, j, w) in &p.edges[range] {
        if !applies(&config.sampling, w, epoch) {
            continue;
        }
        // each stored edge is processed in both directions
        for &(head, tail) in &[(i as usize, j as usize), (j as usize, i as usize)] {
            let (att, rep, qs, t) = directed_forces(
                coords, state.n, d, head, tail, w, ab, config, regime, p, unsafe_edges, z,
                rep_weight, &mut rng,
            );
            q_sum += qs;
            touched += t;
            for c in 0..d {
                buf[head * d + c] += att[c] + rep[c];
                if config.sym_attraction {
                    buf[tail * d + c] -= att[c];
                }
            }
        }
    }
    (buf, q_sum, touched)
}

/// One immediate epoch: every applied force moves its point on the spot.
/// The single-thread path is strictly sequential and deterministic; with
/// more threads the coordinate updates are unsynchronized (relaxed
/// atomic loads/stores, racy by contract).
#[allow(clippy::too_many_arguments)]
fn immediate_epoch(
    state: &mut EmbeddingState,
    p: &AffinityGraph,
    ab: &ABParams,
    config: &RunConfig,
    regime: &GradientRegime,
    unsafe_edges: Option<&std::collections::HashMap<(u32, u32), f64>>,
    lr_e: f64,
    z: f64,
    rep_weight: f64,
    epoch: usize,
    threads: usize,
) -> Option<f64> {
    use std::sync::atomic::AtomicU64;

    let n = state.n;
    let d = state.d;
    let n_chunks = threads.max(1);
    let edges_len = p.edges.len();
    let chunk_len = edges_len.div_ceil(n_chunks);

    // view the coordinate buffer as atomics for the duration of the epoch
    let atomics: &[AtomicU64] = unsafe {
        std::slice::from_raw_parts(state.coords.as_ptr() as *const AtomicU64, n * d)
    };
    let coords = Coords::Atomic(atomics);

    let process = |chunk: u64, range: std::ops::Range<usize>| -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(((epoch as u64) << 16) | (chunk + 1));
        let mut q_sum = 0.0;
        let mut touched = 0.0;
        for &(i, j, w) in &p.edges[range] {
            if !applies(&config.sampling, w, epoch) {
                continue;
            }
            for &(head, tail) in &[(i as usize, j as usize), (j as usize, i as usize)] {
                let (att, rep, qs, t) = directed_forces(
                    coords, n, d, head, tail, w, ab, config, regime, p, unsafe_edges, z,
                    rep_weight, &mut rng,
                );
                q_sum += qs;
                touched += t;
                for c in 0..d {
                    coords.add(head * d + c, lr_e * (att[c] + rep[c]));
                    if config.sym_attraction {
                        coords.add(tail * d + c, -lr_e * att[c]);
                    }
                }
            }
        }
        (q_sum, touched)
    };

    let (q_sum, touched) = if n_chunks == 1 {
        process(0, 0..edges_len)
    } else {
        use rayon::prelude::*;
        (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let lo = c * chunk_len;
                let hi = ((c + 1) * chunk_len).min(edges_len);
                process(c as u64, lo..hi)
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1))
    };

    (touched > 0.0).then(|| (n * (n - 1)) as f64 * q_sum / touched)
}
