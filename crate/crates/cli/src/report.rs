//! JSON report types the subcommands emit.

use serde::{Deserialize, Serialize};

/// Metrics computed for one embedding run, reused across subcommands.
pub fn compute_metrics(
    state: &gdr_core::EmbeddingState,
    labels: Option<&[i64]>,
    roll_t: Option<&[f64]>,
    seed: u64,
) -> Result<gdr_core::MetricReport, gdr_core::GdrError> {
    let mut report = gdr_core::MetricReport::default();
    if let Some(labels) = labels {
        let k = gdr_core::metrics::default_metric_k(state.n);
        report.knn_accuracy = Some(gdr_core::metrics::knn_accuracy(state, labels, k)?);
        let classes = {
            let mut c: Vec<i64> = labels.to_vec();
            c.sort_unstable();
            c.dedup();
            c.len()
        };
        if classes >= 2 {
            let clusters = gdr_core::metrics::kmeans(state, classes, seed, 3)?;
            let (h, c, v) = gdr_core::metrics::v_measure(labels, &clusters);
            report.homogeneity = Some(h);
            report.completeness = Some(c);
            report.v_measure = Some(v);
            report.v_measure_arithmetic = Some(0.5 * (h + c));
            let ratio = gdr_core::metrics::spread_ratio(state, labels)?;
            report.spread_ratio = ratio.is_finite().then_some(ratio);
        }
    }
    if let Some(t) = roll_t {
        report.manifold_rho = Some(gdr_core::metrics::manifold_preservation(state, t).abs());
    }
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct EmbedReport {
    pub dataset: String,
    pub run: gdr_core::RunReport,
    pub metrics: gdr_core::MetricReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub preset: String,
    pub toggle: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knn_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_measure: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spread_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub dataset: String,
    pub seed: u64,
    pub cells: Vec<SweepCell>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoremEntry {
    pub n: usize,
    pub c: usize,
    pub draws: usize,
    pub ratio_full: f64,
    pub ratio_sampled: f64,
    pub ratio_unnorm: f64,
    pub closed_form: f64,
    /// ratio_full / ratio_sampled within [0.9, 1.1]
    pub sampling_invariance_ok: bool,
    /// both normalized ratios within 10% of the closed form
    pub closed_form_ok: bool,
    /// unnormalized ratio strictly below the sampled normalized one
    pub unnormalized_below_ok: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TheoremReport {
    pub seed: u64,
    pub entries: Vec<TheoremEntry>,
    pub angle_mean: f64,
    pub angle_ok: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchEntry {
    pub preset: String,
    pub accelerated: bool,
    pub n: usize,
    pub epochs: usize,
    pub per_epoch_secs: f64,
    pub optimize_secs: f64,
    pub knn_secs: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BenchReport {
    pub threads: usize,
    pub seed: u64,
    pub entries: Vec<BenchEntry>,
    /// accelerated / plain per-epoch time per size (gdr_umap)
    pub accel_speedup: Vec<(usize, f64)>,
}
