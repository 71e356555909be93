//! Experiment harness: empirical Lipschitz checks, the dimension-robustness
//! inpainting sweep and the dense vs decomposed efficiency benchmark.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng as _;

use crate::diffopt::{Adam, AdamConfig, PointMse, Tape};
use crate::encoding::{
    encode_batch_parallel, encode_dense_batch, param_count, EncoderConfig, EncodingMode, QueryCounter,
    DEFAULT_N_MIN,
};
use crate::error::{invalid, Result};
use crate::metrics::{psnr, ssim};
use crate::model::{GridTdModel, ModelConfig};
use crate::operators::sample_observed;
use crate::params::{ParamKind, ParamStore};
use crate::rng::{stream, Rng};
use crate::synth::smooth_phantom;
use crate::tensor::{uniform_coordinates, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzReport {
    pub mode: EncodingMode,
    pub dims: usize,
    pub trials: usize,
    pub max_ratio: f64,
    pub bound: f64,
    pub violations: usize,
}

impl LipschitzReport {
    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

/// Projects a copy of the grids to row L1 norm ≤ 1, then checks
/// `|f(v₁) − f(v₂)| ≤ bound·‖v₁ − v₂‖₁` on `trials` random pairs. Half of
/// the pairs are independent, half are within 1e-2 of each other per axis.
pub fn lipschitz_empirical_test(
    model: &GridTdModel,
    store: &ParamStore,
    trials: usize,
    seed: u64,
) -> Result<LipschitzReport> {
    let mut projected = store.clone();
    model.project_grids_l1(&mut projected);
    let bound = model.lipschitz_bound(&projected);
    let dims = model.shape().len();
    let mut rng = stream(seed, "trials");
    let mut max_ratio: f64 = 0.0;
    let mut violations = 0;
    for k in 0..trials {
        let v1: Vec<f64> = (0..dims).map(|_| rng.random::<f64>()).collect();
        let v2: Vec<f64> = if k % 2 == 0 {
            (0..dims).map(|_| rng.random::<f64>()).collect()
        } else {
            v1.iter()
                .map(|&x| (x + rng.random_range(-1e-2..1e-2)).clamp(0.0, 1.0 - 1e-12))
                .collect()
        };
        let dist: f64 = v1.iter().zip(&v2).map(|(a, b)| (a - b).abs()).sum();
        if dist == 0.0 {
            continue;
        }
        let diff = (model.eval_point(&projected, &v1)? - model.eval_point(&projected, &v2)?).abs();
        let ratio = diff / dist;
        max_ratio = max_ratio.max(ratio);
        if diff > bound * dist * (1.0 + 1e-12) {
            violations += 1;
        }
    }
    Ok(LipschitzReport {
        mode: model.cfg.encoder.mode,
        dims,
        trials,
        max_ratio,
        bound,
        violations,
    })
}

/// Redraws every grid entry uniformly from `[-scale, scale]`.
pub fn randomize_grids(model: &GridTdModel, store: &mut ParamStore, scale: f64, rng: &mut Rng) {
    for &id in model.grid_block_ids() {
        store
            .value_mut(id)
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-scale..=scale));
    }
}

/// Hyperparameters of a direct inpainting fit, shared across tensor orders.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub levels: usize,
    pub features: usize,
    pub n_min: usize,
    pub hidden: usize,
    pub table_len: usize,
    pub steps: usize,
    /// Observed points per step; `None` uses all of them.
    pub batch: Option<usize>,
    pub adam: AdamConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            levels: 8,
            features: 2,
            n_min: DEFAULT_N_MIN,
            hidden: 64,
            table_len: 1 << 19,
            steps: 600,
            batch: None,
            adam: AdamConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn encoder(&self, mode: EncodingMode, shape: &[usize]) -> EncoderConfig {
        EncoderConfig {
            mode,
            dims: shape.len(),
            levels: self.levels,
            features: self.features,
            n_min: self.n_min,
            n_max: shape.iter().copied().max().unwrap_or(1).max(self.n_min),
            table_len: self.table_len,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub recon: Tensor,
    pub grid_params: usize,
    pub total_params: usize,
    pub seconds: f64,
    pub final_loss: f64,
}

/// Fits a fresh model to the observed entries of `truth` with Adam on the
/// mean squared error, then evaluates it on every entry.
pub fn fit_inpainting(
    mode: EncodingMode,
    truth: &Tensor,
    observed: &[usize],
    fit: &FitConfig,
    seed: u64,
) -> Result<FitResult> {
    if observed.is_empty() {
        return invalid("no observed entries to fit");
    }
    let cfg = ModelConfig {
        encoder: fit.encoder(mode, truth.shape()),
        hidden: fit.hidden,
        affine: false,
    };
    let mut store = ParamStore::new();
    let model = GridTdModel::new(cfg, truth.shape(), &mut store, &mut stream(seed, "init"))?;
    let mut adam = Adam::new(fit.adam.clone())?;
    let mut tape = Tape::new();
    let mut batch_rng = stream(seed, "batch");
    let batch = fit.batch.filter(|&b| b < observed.len());
    let mut points = observed.to_vec();
    let mut objective = PointMse {
        target: observed.iter().map(|&i| truth.data()[i]).collect(),
    };
    let start = Instant::now();
    let mut final_loss = f64::NAN;
    for _ in 0..fit.steps {
        if let Some(b) = batch {
            points.clear();
            objective.target.clear();
            for k in sample(&mut batch_rng, observed.len(), b) {
                points.push(observed[k]);
                objective.target.push(truth.data()[observed[k]]);
            }
        }
        final_loss = model.loss_and_grad(&mut store, &mut tape, &objective, Some(&points))?;
        adam.step(&mut store)?;
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(FitResult {
        recon: model.evaluate(&store)?,
        grid_params: store.count_of(ParamKind::Grid),
        total_params: store.scalar_count(),
        seconds,
        final_loss,
    })
}

/// One row of an experiment table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub dims: usize,
    pub sr: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub seconds: f64,
    pub grid_params: usize,
    pub total_params: usize,
    pub level_queries: u64,
    pub corner_reads: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub name: String,
    pub config: Vec<(String, String)>,
    pub seeds: Vec<u64>,
    pub rows: Vec<ReportRow>,
    /// Reconstruction behind each row.
    pub results: Vec<Tensor>,
}

impl ExperimentReport {
    pub fn find(&self, method: &str, dims: usize, sr: f64) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.dims == dims && r.sr == sr)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,dims,sr,psnr,ssim,seconds,grid_params,total_params,level_queries,corner_reads\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6},{:.6},{},{},{},{}",
                r.method, r.dims, r.sr, r.psnr, r.ssim, r.seconds, r.grid_params, r.total_params, r.level_queries, r.corner_reads
            );
        }
        s
    }

    /// Flat `key=value` lines: the config snapshot and the seeds.
    pub fn manifest(&self) -> String {
        let mut s = format!("experiment={}\n", self.name);
        for (k, v) in &self.config {
            let _ = writeln!(s, "{k}={v}");
        }
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "seeds={}", seeds.join(","));
        s
    }
}

fn fit_snapshot(fit: &FitConfig) -> Vec<(String, String)> {
    vec![
        ("levels".into(), fit.levels.to_string()),
        ("features".into(), fit.features.to_string()),
        ("n_min".into(), fit.n_min.to_string()),
        ("hidden".into(), fit.hidden.to_string()),
        ("table_len".into(), fit.table_len.to_string()),
        ("steps".into(), fit.steps.to_string()),
        ("batch".into(), fit.batch.map_or("all".into(), |b| b.to_string())),
        ("lr_grid".into(), fit.adam.lr_grid.to_string()),
        ("lr_other".into(), fit.adam.lr_other.to_string()),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionConfig {
    /// Tensor shape used for each order.
    pub shapes: Vec<Vec<usize>>,
    pub srs: Vec<f64>,
    pub fit: FitConfig,
}

impl Default for DimensionConfig {
    fn default() -> Self {
        Self {
            shapes: vec![vec![256], vec![64, 64], vec![32, 32, 32]],
            srs: vec![0.2, 0.1, 0.05],
            fit: FitConfig::default(),
        }
    }
}

/// Inpainting of smooth phantoms of every order at every sampling rate,
/// with both encoders under the same hyperparameters. The observation set
/// depends only on `(seed, order, rate)`.
pub fn dimension_robustness_experiment(cfg: &DimensionConfig, seed: u64) -> Result<ExperimentReport> {
    let (mut rows, mut results) = (Vec::new(), Vec::new());
    for shape in &cfg.shapes {
        let truth = smooth_phantom(shape, seed)?;
        for &sr in &cfg.srs {
            let mut rng = stream(seed, &format!("observe.d{}.sr{sr}", shape.len()));
            let observed = sample_observed(shape, sr, &mut rng)?;
            for mode in [EncodingMode::Dense, EncodingMode::Decomposed] {
                let r = fit_inpainting(mode, &truth, &observed, &cfg.fit, seed)?;
                rows.push(ReportRow {
                    method: mode.as_str().into(),
                    dims: shape.len(),
                    sr,
                    psnr: psnr(&r.recon, &truth, 1.0)?,
                    ssim: ssim(&r.recon, &truth, 1.0)?,
                    seconds: r.seconds,
                    grid_params: r.grid_params,
                    total_params: r.total_params,
                    level_queries: 0,
                    corner_reads: 0,
                });
                results.push(r.recon);
            }
        }
    }
    let mut config = fit_snapshot(&cfg.fit);
    let shapes: Vec<String> = cfg
        .shapes
        .iter()
        .map(|s| s.iter().map(usize::to_string).collect::<Vec<_>>().join("x"))
        .collect();
    config.push(("shapes".into(), shapes.join(",")));
    let srs: Vec<String> = cfg.srs.iter().map(f64::to_string).collect();
    config.push(("srs".into(), srs.join(",")));
    Ok(ExperimentReport {
        name: "dimension-robustness".into(),
        config,
        seeds: vec![seed],
        rows,
        results,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyConfig {
    pub n: usize,
    pub dims: usize,
    pub iters: usize,
    pub sr: f64,
    pub fit: FitConfig,
    /// Count interpolation work with one instrumented full-tensor encoding
    /// pass per mode.
    pub count_queries: bool,
}

impl Default for EfficiencyConfig {
    fn default() -> Self {
        Self {
            n: 100,
            dims: 3,
            iters: 300,
            sr: 0.1,
            fit: FitConfig {
                levels: 16,
                features: 2,
                n_min: DEFAULT_N_MIN,
                hidden: 16,
                table_len: 1 << 20,
                steps: 300,
                batch: Some(4096),
                adam: AdamConfig::default(),
            },
            count_queries: true,
        }
    }
}

/// Times `iters` optimisation steps of each mode on an `n^D` inpainting
/// instance and records parameter counts and interpolation work.
pub fn efficiency_benchmark(cfg: &EfficiencyConfig, seed: u64) -> Result<ExperimentReport> {
    let shape = vec![cfg.n; cfg.dims];
    let truth = smooth_phantom(&shape, seed)?;
    let observed = sample_observed(&shape, cfg.sr, &mut stream(seed, "observe"))?;
    let fit = FitConfig {
        steps: cfg.iters,
        ..cfg.fit.clone()
    };
    let (mut rows, mut results) = (Vec::new(), Vec::new());
    for mode in [EncodingMode::Dense, EncodingMode::Decomposed] {
        let enc = fit.encoder(mode, &shape);
        let (queries, corners) = if cfg.count_queries {
            count_interpolation(&enc, &shape, seed)?
        } else {
            (0, 0)
        };
        let r = fit_inpainting(mode, &truth, &observed, &fit, seed)?;
        rows.push(ReportRow {
            method: mode.as_str().into(),
            dims: cfg.dims,
            sr: cfg.sr,
            psnr: psnr(&r.recon, &truth, 1.0)?,
            ssim: f64::NAN,
            seconds: r.seconds,
            grid_params: param_count(&enc),
            total_params: r.total_params,
            level_queries: queries,
            corner_reads: corners,
        });
        results.push(r.recon);
    }
    let mut config = fit_snapshot(&fit);
    config.push(("n".into(), cfg.n.to_string()));
    config.push(("dims".into(), cfg.dims.to_string()));
    config.push(("iters".into(), cfg.iters.to_string()));
    config.push(("sr".into(), cfg.sr.to_string()));
    Ok(ExperimentReport {
        name: "efficiency".into(),
        config,
        seeds: vec![seed],
        rows,
        results,
    })
}

/// Level queries and vertex rows read by one full-tensor encoding pass.
pub fn count_interpolation(enc: &EncoderConfig, shape: &[usize], seed: u64) -> Result<(u64, u64)> {
    let coords = uniform_coordinates(shape)?;
    let counter = QueryCounter::new();
    let mut rng = stream(seed, "count");
    let tables = crate::encoding::random_tables(enc, crate::encoding::INIT_SCALE, &mut rng);
    match enc.mode {
        EncodingMode::Dense => {
            encode_dense_batch(enc, &tables, &coords, Some(&counter))?;
        }
        EncodingMode::Decomposed => {
            let per_axis: Vec<Vec<_>> = tables.chunks(enc.levels).map(<[_]>::to_vec).collect();
            encode_batch_parallel(enc, &per_axis, &coords, Some(&counter))?;
        }
    }
    Ok((counter.level_queries(), counter.corner_reads()))
}
