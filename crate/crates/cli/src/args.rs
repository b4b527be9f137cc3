//! Flag surface shared by the subcommands. Every RunConfig field is
//! reachable here; each toggle's help names the hyperparameter it
//! controls.

use clap::{Args, ValueEnum};
use gdr_core::{
    AbMode, ApplyMode, GdrError, InitMode, LossKind, LrSchedule, Preset, RunConfig, SamplingMode,
    Symmetrization,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Tsne,
    Umap,
    #[value(alias = "gdr_tsne")]
    GdrTsne,
    #[value(alias = "gdr_umap")]
    GdrUmap,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Tsne => Preset::Tsne,
            PresetArg::Umap => Preset::Umap,
            PresetArg::GdrTsne => Preset::GdrTsne,
            PresetArg::GdrUmap => Preset::GdrUmap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Random,
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SymArg {
    Average,
    Union,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AbArg {
    Unit,
    Fit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplingArg {
    Scalar,
    #[value(name = "per-edge")]
    PerEdge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Kl,
    Frobenius,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ApplyArg {
    Immediate,
    Batched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LrScheduleArg {
    Constant,
    #[value(name = "linear-decay")]
    LinearDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Bin,
}

/// Run configuration flags (defaults come from the chosen preset).
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Mode preset supplying every default below
    #[arg(long, value_enum, default_value = "gdr-umap")]
    pub preset: PresetArg,

    /// Normalization toggle: divide P and Q by their global sums
    /// (the one switch that changes the embedding family)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub normalized: Option<bool>,

    /// Initialization toggle: random Gaussian or spectral eigenmap
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,

    /// Distance-function toggle: shift each row by its nearest-neighbor
    /// distance before the kernel sees it
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub pseudo_distance: Option<bool>,

    /// Symmetrization toggle: average (p+p')/2 or fuzzy union p+p'-pp'
    #[arg(long, value_enum)]
    pub symmetrization: Option<SymArg>,

    /// Symmetric-attraction toggle: apply each attraction to both
    /// endpoints (functionally doubles attraction)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub sym_attraction: Option<bool>,

    /// a/b scalars toggle: unit (a=b=1) or fitted from min-dist/spread
    #[arg(long, value_enum)]
    pub ab: Option<AbArg>,

    /// Target minimum spacing for the fitted kernel
    #[arg(long)]
    pub min_dist: Option<f64>,

    /// Target decay scale for the fitted kernel
    #[arg(long)]
    pub spread: Option<f64>,

    /// Sampling toggle: scalar (weight-proportional frequency) or
    /// per-edge (explicit multipliers every epoch)
    #[arg(long, value_enum)]
    pub sampling: Option<SamplingArg>,

    /// Keep the explicit multipliers AND the frequency schedule
    /// (squares the effective scalars; trades accuracy for speed)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub accelerated: Option<bool>,

    /// Negatives per applied attraction in scalar-sampling mode
    #[arg(long)]
    pub neg_samples: Option<usize>,

    /// Loss toggle: kl divergence or frobenius norm
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,

    /// Gradient application: immediate per-force moves or one batched
    /// momentum step per epoch
    #[arg(long, value_enum)]
    pub apply: Option<ApplyArg>,

    #[arg(long)]
    pub epochs: Option<usize>,

    /// Base learning rate (normalized mode scales it by n/k internally)
    #[arg(long)]
    pub lr: Option<f64>,

    /// Learning-rate schedule: constant or linear decay
    #[arg(long, value_enum)]
    pub lr_schedule: Option<LrScheduleArg>,

    /// Momentum coefficient for batched mode (0 disables amplification)
    #[arg(long)]
    pub momentum: Option<f64>,

    /// Neighbors for the kNN graph (0 derives from the kernel)
    #[arg(long)]
    pub k_neighbors: Option<usize>,

    /// Perplexity target for the Gaussian kernel
    #[arg(long)]
    pub perplexity: Option<f64>,

    /// Output dimensions (1-3)
    #[arg(long, default_value_t = 2)]
    pub dims: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads; 1 is bitwise deterministic, 0 uses all cores
    #[arg(long, default_value_t = 0)]
    pub threads: usize,

    /// Repulsion stability constant for the unnormalized KL forces
    #[arg(long)]
    pub eps: Option<f64>,

    /// Run the divergent normalized + scalar-sampling configuration
    /// (expected to abort on the non-finite guard)
    #[arg(long)]
    pub unsafe_normalized_scalar_sampling: bool,
}

impl ConfigArgs {
    pub fn to_config(&self) -> Result<RunConfig, GdrError> {
        let mut c = RunConfig::preset(self.preset.into());
        if let Some(v) = self.normalized {
            c.normalized = v;
        }
        if let Some(v) = self.init {
            c.init = match v {
                InitArg::Random => InitMode::Random,
                InitArg::Spectral => InitMode::Spectral,
            };
        }
        if let Some(v) = self.pseudo_distance {
            c.pseudo_distance = v;
        }
        if let Some(v) = self.symmetrization {
            c.symmetrization = match v {
                SymArg::Average => Symmetrization::Average,
                SymArg::Union => Symmetrization::Union,
            };
        }
        if let Some(v) = self.sym_attraction {
            c.sym_attraction = v;
        }
        if let Some(v) = self.ab {
            c.ab_mode = match v {
                AbArg::Unit => AbMode::Unit,
                AbArg::Fit => AbMode::Fitted,
            };
        }
        if let Some(v) = self.min_dist {
            c.min_dist = v;
        }
        if let Some(v) = self.spread {
            c.spread = v;
        }
        if let Some(v) = self.sampling {
            c.sampling.mode = match v {
                SamplingArg::Scalar => SamplingMode::ScalarSampling,
                SamplingArg::PerEdge => SamplingMode::PerEdge,
            };
        }
        if let Some(v) = self.accelerated {
            c.sampling.accelerated = v;
        }
        if let Some(v) = self.neg_samples {
            c.sampling.neg_samples = v;
        }
        if let Some(v) = self.loss {
            c.loss = match v {
                LossArg::Kl => LossKind::Kl,
                LossArg::Frobenius => LossKind::Frobenius,
            };
        }
        if let Some(v) = self.apply {
            c.apply = match v {
                ApplyArg::Immediate => ApplyMode::Immediate,
                ApplyArg::Batched => ApplyMode::Batched,
            };
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.lr_schedule {
            c.lr_schedule = match v {
                LrScheduleArg::Constant => LrSchedule::Constant,
                LrScheduleArg::LinearDecay => LrSchedule::LinearDecay,
            };
        }
        if let Some(v) = self.momentum {
            c.momentum = v;
        }
        if let Some(v) = self.k_neighbors {
            c.k_neighbors = v;
        }
        if let Some(v) = self.perplexity {
            c.perplexity = v;
        }
        c.d = self.dims;
        c.seed = self.seed;
        c.sampling.seed = self.seed;
        c.threads = self.threads;
        if let Some(v) = self.eps {
            c.eps = v;
        }
        c.unsafe_normalized_scalar_sampling = self.unsafe_normalized_scalar_sampling;
        c.validate()?;
        Ok(c)
    }
}

/// Input selection shared by embed and sweep.
#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Dataset file to embed
    #[arg(long, conflicts_with = "synthetic")]
    pub input: Option<std::path::PathBuf>,

    /// Input file format
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,

    /// CSV input: treat the first row as a header
    #[arg(long)]
    pub csv_header: bool,

    /// CSV input: treat the last column as a class label
    #[arg(long)]
    pub csv_labels: bool,

    /// Synthetic dataset spec, e.g. swiss_roll:n=5000,noise=0.1 or
    /// blobs:n=1000,clusters=5,dim=10,sep=10
    #[arg(long)]
    pub synthetic: Option<String>,
}
