//! The three experiment drivers behind the subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use coordnorm_core::ntk::{check_kernel_size, network_ntk};
use coordnorm_core::tasks::fourier::FourierMask;
use coordnorm_core::tasks::image::{bpp, encode_ppm, make_image_task, read_ppm, synthetic_image, Image};
use coordnorm_core::tasks::occupancy::{make_occupancy_task, OccupancyGrid};
use coordnorm_core::tasks::radon::{shepp_logan, RadonOperator};
use coordnorm_core::tasks::{make_1d_task, make_ct_task, make_mri_task};
use coordnorm_core::train::{evaluate, train};
use coordnorm_core::{eigen_summary, init_params, predict, EigenSummary, Error, NetworkConfig, NormKind, TaskKind, TaskSpec, TrainTrace};

use crate::config::{ExperimentConfig, Method, TaskConfig};
use crate::output::{atomic_write, Metrics};
use crate::svg::{heatmap_svg, histogram_svg};

/// Bits per parameter used for the bpp figure (single precision storage).
pub const BITS_PER_PARAM: u32 = 32;

/// Band count used by `freq` when the config leaves band tracking off.
pub const FORCED_BANDS: usize = 16;

pub fn build_task(task: &TaskConfig) -> Result<TaskSpec> {
    Ok(match task {
        TaskConfig::Signal1d { freqs, amps, samples } => make_1d_task(freqs, amps, *samples)?,
        TaskConfig::Image { image, crop } => {
            let img = match image {
                Some(path) => {
                    let full = read_ppm(path).with_context(|| format!("reading {}", path.display()))?;
                    let (w, h) = ((*crop).min(full.width), (*crop).min(full.height));
                    full.crop((full.width - w) / 2, (full.height - h) / 2, w, h)?
                }
                None => synthetic_image(*crop),
            };
            make_image_task(&img, 1.0)?
        }
        TaskConfig::Ct { side, angles, detectors } => {
            make_ct_task(&shepp_logan(*side), RadonOperator::uniform(*side, *angles, *detectors)?)?
        }
        TaskConfig::Mri { side, fraction, mask_seed } => {
            make_mri_task(&shepp_logan(*side), FourierMask::random(*side, *side, *fraction, *mask_seed)?)?
        }
        TaskConfig::Occupancy { grid, side, sample_count, sample_seed } => {
            let g = match grid {
                Some(path) => OccupancyGrid::read(path).with_context(|| format!("reading {}", path.display()))?,
                None => OccupancyGrid::torus_and_ball(*side),
            };
            make_occupancy_task(&g, *sample_count, *sample_seed)?
        }
    })
}

fn method_of(cfg: &ExperimentConfig, norm: NormKind) -> Method {
    Method { positional: cfg.network.pe_bases > 0, norm }
}

fn write_snapshot(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    atomic_write(&dir.join("config.resolved"), cfg.resolved().as_bytes())
}

fn summary_metrics(prefix: &str, s: &EigenSummary, into: &mut Metrics) {
    let fields = [
        ("mean", s.mean),
        ("second_moment", s.second_moment),
        ("variance", s.variance),
        ("lambda_max", s.lambda_max),
        ("lambda_min", s.lambda_min),
        ("lower_bound", s.lower_bound),
        ("upper_bound", s.upper_bound),
        ("median_log10", s.median_log10),
        ("mode_log10", s.histogram.mode_center().unwrap_or(f64::NAN)),
        ("size", s.size as f64),
    ];
    for (k, v) in fields {
        into.insert(format!("{prefix}.{k}"), v);
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().context("building the worker pool")
}

#[derive(Debug, Clone)]
pub struct NtkRecord {
    pub method: String,
    pub norm: NormKind,
    pub seed: u64,
    pub summary: EigenSummary,
}

#[derive(Debug, Clone)]
pub struct NtkReport {
    pub records: Vec<NtkRecord>,
    pub summary: Metrics,
    pub out_dir: PathBuf,
}

/// Kernel spectra at initialization for every normalization × seed.
///
/// Writes `eigs.csv`, `summary.json`, `histogram.svg` and the resolved config.
pub fn run_ntk_analysis(cfg: &ExperimentConfig, out_dir: &Path, jobs: usize) -> Result<NtkReport> {
    let task = build_task(&cfg.task)?;
    check_kernel_size(task.output_dim(), task.samples())?;
    let cells: Vec<(NormKind, u64)> =
        cfg.analysis.norms.iter().flat_map(|&n| cfg.analysis.seeds.iter().map(move |&s| (n, s))).collect();
    let results: Vec<Result<NtkRecord>> = thread_pool(jobs)?.install(|| {
        cells
            .par_iter()
            .map(|&(norm, seed)| {
                let net = cfg.network_config(norm, None, seed);
                let params = init_params(&net)?;
                let k = network_ntk(&params, &task.coords, &net)?;
                let summary = eigen_summary(&k, cfg.analysis.hist_bins)?;
                Ok(NtkRecord { method: method_of(cfg, norm).label(), norm, seed, summary })
            })
            .collect()
    });
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut eigs = String::from("method,seed,eigenvalue\n");
    let mut summary = Metrics::default();
    for r in &records {
        for v in &r.summary.eigenvalues {
            let _ = writeln!(eigs, "{},{},{v:.16e}", r.method, r.seed);
        }
        summary_metrics(&format!("{}.{}", r.method, r.seed), &r.summary, &mut summary);
    }
    let svg = histogram_svg(&eigs, cfg.analysis.hist_bins)?;
    atomic_write(&out_dir.join("eigs.csv"), eigs.as_bytes())?;
    atomic_write(&out_dir.join("summary.json"), summary.to_json().as_bytes())?;
    atomic_write(&out_dir.join("histogram.svg"), svg.as_bytes())?;
    write_snapshot(cfg, out_dir)?;
    Ok(NtkReport { records, summary, out_dir: out_dir.to_path_buf() })
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub trace: TrainTrace,
    pub metrics: Metrics,
    pub out_dir: PathBuf,
}

/// Run overrides applied on top of the config's network section.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOverrides {
    pub method: Option<Method>,
    pub seed: Option<u64>,
    /// Minimum band count; `freq` sets this.
    pub bands: Option<usize>,
}

fn write_recon(task: &TaskSpec, pred: &coordnorm_core::DenseMatrix, dir: &Path) -> Result<()> {
    match task.kind {
        TaskKind::Image { .. } | TaskKind::Ct { .. } | TaskKind::Mri { .. } => {
            let (height, width) = task.kind.plane_shape().expect("2D tasks have a plane");
            let img = Image::from_channel_matrix(pred, width, height)?;
            atomic_write(&dir.join("recon.ppm"), &encode_ppm(&img))
        }
        TaskKind::Occupancy { side } => {
            let grid = OccupancyGrid::new(side, pred.as_slice().iter().map(|&p| p > 0.5).collect())?;
            atomic_write(&dir.join("recon_grid.bin"), &grid.encode())
        }
        TaskKind::Signal1d { .. } => {
            let mut s = String::from("t,x,prediction,target\n");
            for t in 0..pred.cols() {
                let _ = writeln!(s, "{t},{:.12e},{:.12e},{:.12e}", task.coords[(0, t)], pred[(0, t)], task.reference[(0, t)]);
            }
            atomic_write(&dir.join("recon.csv"), s.as_bytes())
        }
    }
}

/// Train one network and write `trace.csv`, `final_metrics.json`, the
/// reconstruction, `freq_heatmap.svg` (when bands are tracked) and the
/// resolved config.
///
/// On divergence the partial trace is still written before the error returns.
pub fn run_training(cfg: &ExperimentConfig, out_dir: &Path, ov: RunOverrides) -> Result<TrainReport> {
    let task = build_task(&cfg.task)?;
    let method = ov.method.unwrap_or(method_of(cfg, cfg.network.norm));
    let seed = ov.seed.unwrap_or(cfg.network.seed);
    let net: NetworkConfig = cfg.network_config(method.norm, ov.method.map(|m| m.positional), seed);
    let mut tc = cfg.train_config(method.norm);
    if let Some(b) = ov.bands {
        if task.kind.plane_shape().is_none() {
            bail!(Error::Config(format!("band tracking needs a 1D or 2D task, not {}", task.kind.label())));
        }
        tc.bands = tc.bands.max(b);
    }
    let mut snapshot = cfg.clone();
    snapshot.network.norm = method.norm;
    snapshot.network.seed = seed;
    snapshot.network.pe_bases = net.pe_bases;
    snapshot.train.bands = tc.bands;
    snapshot.train.learning_rate = Some(tc.learning_rate);
    snapshot.train.lr_floor = Some(tc.lr_floor);
    write_snapshot(&snapshot, out_dir)?;

    let params = init_params(&net)?;
    let mut metrics = Metrics::default();
    if cfg.analysis.ntk {
        check_kernel_size(task.output_dim(), task.samples())?;
        let s = eigen_summary(&network_ntk(&params, &task.coords, &net)?, cfg.analysis.hist_bins)?;
        summary_metrics("ntk_init", &s, &mut metrics);
    }
    let outcome = match train(params, &task, &tc, &net) {
        Ok(o) => o,
        Err(Error::Divergence(run)) => {
            atomic_write(&out_dir.join("trace.csv"), run.trace.to_csv().as_bytes())?;
            return Err(Error::Divergence(run).into());
        }
        Err(e) => return Err(e.into()),
    };
    let trace_csv = outcome.trace.to_csv();
    atomic_write(&out_dir.join("trace.csv"), trace_csv.as_bytes())?;

    let pred = task.evaluate_output(&predict(&outcome.params, &task.coords, &net)?);
    let eval = evaluate(&outcome.params, &task, &net, outcome.trace.bands, tc.track_ssim)?;
    metrics.insert("loss", eval.loss);
    metrics.insert("psnr", eval.psnr);
    if let Some(s) = eval.ssim {
        metrics.insert("ssim", s);
    }
    if let Some(v) = eval.iou {
        metrics.insert("iou", v);
    }
    for (b, v) in eval.bands.iter().enumerate() {
        metrics.insert(format!("band_{b}"), *v);
    }
    metrics.insert("iterations", tc.iterations as f64);
    metrics.insert("param_count", outcome.params.len() as f64);
    if let TaskKind::Image { height, width, .. } = task.kind {
        metrics.insert("bpp", bpp(outcome.params.len(), BITS_PER_PARAM, height * width)?);
    }
    atomic_write(&out_dir.join("final_metrics.json"), metrics.to_json().as_bytes())?;
    write_recon(&task, &pred, out_dir)?;
    if outcome.trace.bands > 0 && !outcome.trace.records.is_empty() {
        atomic_write(&out_dir.join("freq_heatmap.svg"), heatmap_svg(&trace_csv)?.as_bytes())?;
    }
    Ok(TrainReport { trace: outcome.trace, metrics, out_dir: out_dir.to_path_buf() })
}

/// Metrics aggregated per method.
pub const GRID_METRICS: [&str; 4] = ["loss", "psnr", "ssim", "iou"];

#[derive(Debug, Clone)]
pub struct GridCell {
    pub method: Method,
    pub seed: u64,
    /// Final metrics, or the failure message.
    pub result: std::result::Result<Metrics, String>,
}

#[derive(Debug, Clone)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
    pub table: Metrics,
    pub csv: String,
}

/// `(mean, sample standard deviation)`; the deviation of one value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.12e}"))
}

/// Train every method × seed cell, each in `cells/<method>_s<seed>/` under
/// `out_dir`, with up to `jobs` cells at a time. A failing cell is recorded
/// and the rest continue.
///
/// Writes `grid.csv` (one row per cell and one aggregate row per method) and
/// `grid.json`.
pub fn run_grid(cfg: &ExperimentConfig, out_dir: &Path, jobs: usize) -> Result<GridReport> {
    write_snapshot(cfg, out_dir)?;
    let plan: Vec<(Method, u64)> =
        cfg.grid.methods.iter().flat_map(|&m| cfg.grid.seeds.iter().map(move |&s| (m, s))).collect();
    let cells: Vec<GridCell> = thread_pool(jobs)?.install(|| {
        plan.par_iter()
            .map(|&(method, seed)| {
                let dir = out_dir.join("cells").join(format!("{}_s{seed}", method.label()));
                let ov = RunOverrides { method: Some(method), seed: Some(seed), bands: None };
                let result = run_training(cfg, &dir, ov).map(|r| r.metrics).map_err(|e| format!("{e:#}"));
                GridCell { method, seed, result }
            })
            .collect()
    });

    let mut csv = String::from("method,seed,status,count");
    for m in GRID_METRICS {
        let _ = write!(csv, ",{m},{m}_std");
    }
    csv.push('\n');
    let mut table = Metrics::default();
    for cell in &cells {
        let label = cell.method.label();
        match &cell.result {
            Ok(m) => {
                let _ = write!(csv, "{label},{},ok,1", cell.seed);
                for k in GRID_METRICS {
                    let _ = write!(csv, ",{},", fmt_opt(m.get(k)));
                    if let Some(v) = m.get(k) {
                        table.insert(format!("{label}.s{}.{k}", cell.seed), v);
                    }
                }
            }
            Err(msg) => {
                let clean: String = msg.chars().map(|c| if c == ',' || c == '\n' { ';' } else { c }).collect();
                let _ = write!(csv, "{label},{},failed: {clean},0", cell.seed);
                csv.push_str(&",".repeat(2 * GRID_METRICS.len()));
                table.insert(format!("{label}.s{}.failed", cell.seed), 1.0);
            }
        }
        csv.push('\n');
    }
    for &method in &cfg.grid.methods {
        let label = method.label();
        let ok: Vec<&Metrics> =
            cells.iter().filter(|c| c.method == method).filter_map(|c| c.result.as_ref().ok()).collect();
        let failed = cells.iter().filter(|c| c.method == method && c.result.is_err()).count();
        let status = if failed == 0 { "ok".to_string() } else { format!("{failed} failed") };
        let _ = write!(csv, "{label},aggregate,{status},{}", ok.len());
        table.insert(format!("{label}.count"), ok.len() as f64);
        for k in GRID_METRICS {
            let vals: Vec<f64> = ok.iter().filter_map(|m| m.get(k)).collect();
            if vals.is_empty() {
                csv.push_str(",,");
                continue;
            }
            let (mean, std) = mean_std(&vals);
            let _ = write!(csv, ",{mean:.12e},{std:.12e}");
            table.insert(format!("{label}.mean.{k}"), mean);
            table.insert(format!("{label}.stddev.{k}"), std);
        }
        csv.push('\n');
    }
    atomic_write(&out_dir.join("grid.csv"), csv.as_bytes())?;
    atomic_write(&out_dir.join("grid.json"), table.to_json().as_bytes())?;
    Ok(GridReport { cells, table, csv })
}
