//! The four subcommands: embed, sweep, theorems, bench.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gdr_core::affinity::{calibrate_kernel, directed_affinities, symmetrize};
use gdr_core::knn::{knn_descent, NnDescentParams};
use gdr_core::metrics::{force_ratio_experiment, RepulsionAngleProbe};
use gdr_core::spectral::init_spectral;
use gdr_core::{
    make_blobs, AbMode, ABParams, EmbeddingState, GdrError, InitMode, Preset, RunConfig,
    Symmetrization,
};

use crate::args::{ConfigArgs, InputArgs};
use crate::input::resolve;
use crate::report::{
    compute_metrics, BenchEntry, BenchReport, EmbedReport, SweepCell, SweepReport, TheoremEntry,
    TheoremReport,
};
use crate::svg::scatter_svg;

fn ensure_dir(dir: &Path) -> Result<(), GdrError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), GdrError> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| GdrError::Config(format!("serialize {}: {e}", path.display())))?;
    fs::write(path, json)?;
    Ok(())
}

fn write_embedding_csv(
    path: &Path,
    state: &EmbeddingState,
    labels: Option<&[i64]>,
) -> Result<(), GdrError> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    let mut header: Vec<&str> = ["x", "y", "z"][..state.d].to_vec();
    if labels.is_some() {
        header.push("label");
    }
    writeln!(out, "{}", header.join(","))?;
    for i in 0..state.n {
        let coords: Vec<String> = state.point(i).iter().map(|c| format!("{c}")).collect();
        if let Some(l) = labels {
            writeln!(out, "{},{}", coords.join(","), l[i])?;
        } else {
            writeln!(out, "{}", coords.join(","))?;
        }
    }
    Ok(())
}

pub fn embed(config: &ConfigArgs, input: &InputArgs, out_dir: &PathBuf) -> Result<(), GdrError> {
    let run_config = config.to_config()?;
    let resolved = resolve(input, run_config.seed)?;
    ensure_dir(out_dir)?;

    let (state, run_report) = gdr_core::run(&resolved.data, &run_config)?;
    let labels = resolved.data.labels.as_deref();
    let metrics = compute_metrics(&state, labels, resolved.roll_t.as_deref(), run_config.seed)?;

    write_embedding_csv(&out_dir.join("embedding.csv"), &state, labels)?;
    write_json(
        &out_dir.join("report.json"),
        &EmbedReport {
            dataset: resolved.name,
            run: run_report,
            metrics: metrics.clone(),
        },
    )?;
    fs::write(out_dir.join("plot.svg"), scatter_svg(&state, labels))?;

    if let Some(acc) = metrics.knn_accuracy {
        println!("knn accuracy: {acc:.2}");
    }
    if let Some(v) = metrics.v_measure {
        println!("v-measure: {v:.4}");
    }
    if let Some(rho) = metrics.manifold_rho {
        println!("manifold |rho|: {rho:.4}");
    }
    println!("wrote {}", out_dir.display());
    Ok(())
}

/// The five single-toggle variants next to each preset's default.
pub const SWEEP_TOGGLES: [&str; 6] = [
    "default",
    "init",
    "pseudo-distance",
    "symmetrization",
    "sym-attraction",
    "ab",
];

pub fn toggled_config(base: &RunConfig, toggle: &str) -> RunConfig {
    let mut c = base.clone();
    match toggle {
        "default" => {}
        "init" => {
            c.init = match c.init {
                InitMode::Random => InitMode::Spectral,
                InitMode::Spectral => InitMode::Random,
            }
        }
        "pseudo-distance" => c.pseudo_distance = !c.pseudo_distance,
        "symmetrization" => {
            c.symmetrization = match c.symmetrization {
                Symmetrization::Average => Symmetrization::Union,
                Symmetrization::Union => Symmetrization::Average,
            }
        }
        "sym-attraction" => c.sym_attraction = !c.sym_attraction,
        "ab" => {
            c.ab_mode = match c.ab_mode {
                AbMode::Unit => AbMode::Fitted,
                AbMode::Fitted => AbMode::Unit,
            }
        }
        other => unreachable!("unknown toggle {other}"),
    }
    c
}

#[allow(clippy::too_many_arguments)]
pub fn sweep(
    config: &ConfigArgs,
    input: &InputArgs,
    out_dir: &PathBuf,
    parallel_cells: bool,
) -> Result<(), GdrError> {
    let base_overrides = config.to_config()?;
    let resolved = resolve(input, base_overrides.seed)?;
    ensure_dir(out_dir)?;
    let plots_dir = out_dir.join("sweep");
    ensure_dir(&plots_dir)?;

    let presets = [Preset::Tsne, Preset::GdrTsne, Preset::Umap, Preset::GdrUmap];
    let mut jobs = Vec::new();
    for preset in presets {
        let mut base = RunConfig::preset(preset);
        base.seed = base_overrides.seed;
        base.threads = base_overrides.threads;
        base.d = base_overrides.d;
        if let Some(epochs) = config.epochs {
            base.epochs = epochs;
        }
        for toggle in SWEEP_TOGGLES {
            jobs.push((preset, toggle, toggled_config(&base, toggle)));
        }
    }

    let run_cell = |(preset, toggle, cell_config): &(Preset, &str, RunConfig)| -> SweepCell {
        let preset_name = format!("{preset:?}").to_lowercase();
        let outcome = cell_config
            .validate()
            .and_then(|_| gdr_core::run(&resolved.data, cell_config))
            .and_then(|(state, _)| {
                let labels = resolved.data.labels.as_deref();
                let metrics =
                    compute_metrics(&state, labels, resolved.roll_t.as_deref(), cell_config.seed)?;
                let svg = scatter_svg(&state, labels);
                let _ = fs::write(
                    plots_dir.join(format!("{preset_name}_{toggle}.svg")),
                    svg,
                );
                Ok(metrics)
            });
        match outcome {
            Ok(metrics) => SweepCell {
                preset: preset_name,
                toggle: toggle.to_string(),
                knn_accuracy: metrics.knn_accuracy,
                v_measure: metrics.v_measure,
                spread_ratio: metrics.spread_ratio,
                error: None,
            },
            Err(e) => SweepCell {
                preset: preset_name,
                toggle: toggle.to_string(),
                knn_accuracy: None,
                v_measure: None,
                spread_ratio: None,
                error: Some(e.to_string()),
            },
        }
    };

    let cells: Vec<SweepCell> = if parallel_cells {
        use rayon::prelude::*;
        jobs.par_iter().map(run_cell).collect()
    } else {
        jobs.iter().map(run_cell).collect()
    };

    for cell in &cells {
        match (&cell.error, cell.knn_accuracy) {
            (None, Some(acc)) => println!(
                "{:<9} {:<16} knn={acc:6.2} v={:.3}",
                cell.preset,
                cell.toggle,
                cell.v_measure.unwrap_or(f64::NAN)
            ),
            (Some(err), _) => println!("{:<9} {:<16} failed: {err}", cell.preset, cell.toggle),
            _ => {}
        }
    }

    write_json(
        &out_dir.join("sweep_report.json"),
        &SweepReport {
            dataset: resolved.name,
            seed: base_overrides.seed,
            cells,
        },
    )?;
    println!("wrote {}", out_dir.join("sweep_report.json").display());
    Ok(())
}

/// Threshold constants for the theorem checks.
pub const SAMPLING_INVARIANCE_BAND: (f64, f64) = (0.9, 1.1);
pub const CLOSED_FORM_REL_TOL: f64 = 0.1;
pub const ANGLE_LIMIT_RAD: f64 = 0.5;

pub fn theorems(sizes: &[usize], draws: usize, seed: u64, out_dir: &PathBuf) -> Result<(), GdrError> {
    ensure_dir(out_dir)?;
    let c = 5;
    let mut entries = Vec::new();
    for &n in sizes {
        let r = force_ratio_experiment(n, c, draws, seed);
        let ratio = r.ratio_full / r.ratio_sampled;
        let entry = TheoremEntry {
            n,
            c,
            draws,
            ratio_full: r.ratio_full,
            ratio_sampled: r.ratio_sampled,
            ratio_unnorm: r.ratio_unnorm,
            closed_form: r.closed_form,
            sampling_invariance_ok: (SAMPLING_INVARIANCE_BAND.0..=SAMPLING_INVARIANCE_BAND.1)
                .contains(&ratio),
            closed_form_ok: (r.ratio_full - r.closed_form).abs() / r.closed_form
                < CLOSED_FORM_REL_TOL
                && (r.ratio_sampled - r.closed_form).abs() / r.closed_form < CLOSED_FORM_REL_TOL,
            unnormalized_below_ok: r.ratio_unnorm < r.ratio_sampled,
        };
        println!(
            "n={n}: full/sampled={ratio:.4} sampled={:.3e} unnorm={:.3e} [invariance {}] [closed {}] [below {}]",
            entry.ratio_sampled,
            entry.ratio_unnorm,
            ok(entry.sampling_invariance_ok),
            ok(entry.closed_form_ok),
            ok(entry.unnormalized_below_ok),
        );
        entries.push(entry);
    }

    let angle_mean = run_angle_probe(seed)?;
    let angle_ok = angle_mean < ANGLE_LIMIT_RAD;
    println!(
        "repulsion angle over run: {angle_mean:.3} rad [{}]",
        ok(angle_ok)
    );

    write_json(
        &out_dir.join("theorem_report.json"),
        &TheoremReport {
            seed,
            entries,
            angle_mean,
            angle_ok,
        },
    )?;
    println!("wrote {}", out_dir.join("theorem_report.json").display());
    Ok(())
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

/// The run-accumulated repulsion-direction diagnostic: a normalized-mode
/// run on a 500-point cloud, tracking per point the engine's per-epoch
/// repulsion budget against the exact O(n) sum over epoch windows.
pub fn run_angle_probe(seed: u64) -> Result<f64, GdrError> {
    let data = make_blobs(500, 1, 10, 1.0, seed)?;
    let mut config = RunConfig::preset(Preset::GdrTsne);
    config.seed = seed;
    config.threads = 1;

    let k = config.effective_k(data.n);
    let graph = knn_descent(
        &data,
        k,
        &NnDescentParams {
            seed,
            ..Default::default()
        },
    )?;
    let kernel = calibrate_kernel(
        &graph,
        config.kernel_mode(),
        config.perplexity,
        config.pseudo_distance,
    );
    let weights = directed_affinities(&graph, &kernel);
    let p = symmetrize(&graph, &weights, config.symmetrization)?;
    let (mut state, _) = init_spectral(&p, config.d);

    // per-point repulsion budget of the per-edge engine: one sample per
    // directed edge application
    let samples_per_epoch = (2 * p.edges.len() / p.n).max(1);
    let window = (config.epochs / 10).max(1);
    let mut probe = RepulsionAngleProbe::new(data.n, 100, samples_per_epoch, window, seed ^ 0xa9);
    let regime = config.regime();
    let ab = ABParams::unit();
    let p_bar = p.p_mean;
    let mut trace = Vec::new();
    gdr_core::optimizer::optimize_observed(
        &mut state,
        &p,
        &ab,
        &config,
        1,
        &mut trace,
        |_, st| probe.observe(st, &ab, &regime, p_bar),
    )?;
    Ok(probe.mean_angle())
}

pub fn bench(sizes: &[usize], epochs: usize, seed: u64, threads: usize, out_dir: &PathBuf) -> Result<(), GdrError> {
    ensure_dir(out_dir)?;
    let mut entries = Vec::new();
    let mut accel_speedup = Vec::new();
    for &n in sizes {
        let data = make_blobs(n, 10, 10, 12.0, seed)?;
        let mut plain_epoch = 0.0;
        for (preset, accelerated) in [
            (Preset::GdrUmap, false),
            (Preset::GdrUmap, true),
            (Preset::GdrTsne, false),
        ] {
            let mut config = RunConfig::preset(preset);
            config.epochs = epochs;
            config.seed = seed;
            config.threads = threads;
            config.sampling.accelerated = accelerated;
            let t = Instant::now();
            let (_, report) = gdr_core::run(&data, &config)?;
            let total = t.elapsed().as_secs_f64();
            println!(
                "{:?}{} n={n}: {:.3} ms/epoch (total {total:.1}s)",
                preset,
                if accelerated { "+accel" } else { "" },
                report.per_epoch_secs * 1e3,
            );
            if preset == Preset::GdrUmap {
                if accelerated {
                    accel_speedup.push((n, report.per_epoch_secs / plain_epoch));
                } else {
                    plain_epoch = report.per_epoch_secs;
                }
            }
            entries.push(BenchEntry {
                preset: format!("{preset:?}").to_lowercase(),
                accelerated,
                n,
                epochs,
                per_epoch_secs: report.per_epoch_secs,
                optimize_secs: report.phases.optimize_secs,
                knn_secs: report.phases.knn_secs,
            });
        }
    }
    write_json(
        &out_dir.join("bench_report.json"),
        &BenchReport {
            threads,
            seed,
            entries,
            accel_speedup,
        },
    )?;
    println!("wrote {}", out_dir.join("bench_report.json").display());
    Ok(())
}
