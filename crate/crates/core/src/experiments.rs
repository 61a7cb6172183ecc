//! End-to-end pipelines shared by the command line and the acceptance suite.

use serde::{Deserialize, Serialize};

use crate::bounds::{
    cluster_kernel, lower_bound_check, pesin_filter, srb_weights, upper_bound_check, BranchQuery, ClusterOptions,
    LowerBound, SrbOptions, UpperBound,
};
use crate::diagnostics::{fold_frac_indexed, improvement_pct, FoldFracConfig};
use crate::downstream::{ccm, edmd_fit_segments, edmd_rollout_nrmse, CcmOptions, CcmResult, EdmdOptions};
use crate::dynamics::{integrate_rk4, SystemParams, Trajectory};
use crate::embedding::{
    embed_series, embed_trajectory, numeric_differential_series, EmbeddingSpec, Observable, ReconstructedStates,
    SavGol, SignalTransform,
};
use crate::error::{Error, Result};
use crate::jacobian::{AnalyticEmbedding, SingularClass};
use crate::matrix::RowMatrix;
use crate::neighbors::{radius_stats, NeighborConfig, NeighborIndex, RadiusStats};
use crate::stats::{quantile, spearman};
use crate::stochasticity::{
    estar_curve, estimate_estar_indexed, horizon_config, push_forward_cloud, sample_queries, EmpiricalKernel,
    StochasticityReport,
};

/// Reference Ê* values of the ten closed-form maps, in [`AnalyticEmbedding::TABLE`] order.
pub const REFERENCE_ESTAR: [f64; 10] = [0.05, 0.05, 0.09, 0.11, 0.73, 1.88, 4.70, 4.71, 12.11, 14.37];

/// How a latent trajectory is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub system: SystemParams,
    pub z0: Vec<f64>,
    /// Integrator step.
    pub dt: f64,
    /// Samples kept after the transient.
    pub samples: usize,
    /// Fraction of all integrated samples discarded as transient.
    pub transient_frac: f64,
    /// Keep every `stride`-th integrator sample.
    pub stride: usize,
}

impl SimulationConfig {
    pub fn rossler(samples: usize) -> Self {
        Self {
            system: SystemParams::rossler(),
            z0: vec![1.0, 1.0, 1.0],
            dt: 0.01,
            samples,
            transient_frac: 0.2,
            stride: 1,
        }
    }

    pub fn simulate(&self) -> Result<Trajectory> {
        if !(0.0..1.0).contains(&self.transient_frac) {
            return Err(Error::InvalidParameter("transient fraction must lie in [0, 1)".into()));
        }
        let stride = self.stride.max(1);
        let kept = self.samples * stride;
        let steps = (kept as f64 / (1.0 - self.transient_frac)).ceil() as usize;
        let discard = steps - kept;
        let tr = integrate_rk4(&self.system, &self.z0, self.dt, steps, discard)?;
        if stride == 1 {
            return Ok(tr);
        }
        let rows: Vec<usize> = (0..self.samples).map(|i| i * stride).collect();
        Trajectory::new(self.dt * stride as f64, tr.t0, tr.states.select_rows(&rows))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableConfig {
    pub simulation: SimulationConfig,
    pub n: usize,
    pub k: usize,
    pub theiler_w: usize,
    pub n_queries: usize,
    pub seed: u64,
    pub delta_tol_fraction: f64,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            simulation: SimulationConfig::rossler(5000),
            n: 20,
            k: 50,
            theiler_w: 20,
            n_queries: 500,
            seed: 42,
            delta_tol_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub id: String,
    pub embedding: String,
    pub estar: f64,
    pub std: f64,
    pub stderr: f64,
    pub fold_frac: f64,
    pub radius: RadiusStats,
    pub tail_ratio: f64,
    pub class: SingularClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableReport {
    pub rows: Vec<TableRow>,
    /// Rank agreement of the Ê* column with [`REFERENCE_ESTAR`] (table-order runs only).
    pub spearman_vs_reference: Option<f64>,
}

/// Ê*, Fold_Frac, radius diagnostics and singular class for each map, all
/// on one shared trajectory, query sample and neighbour sets.
pub fn run_table(cfg: &TableConfig, maps: &[AnalyticEmbedding]) -> Result<TableReport> {
    let traj = cfg.simulation.simulate()?;
    let sys = cfg.simulation.system;
    let mut rows = Vec::with_capacity(maps.len());
    for &e in maps {
        let recon = embed_trajectory(&traj, &e.to_spec(), Some(&sys))?;
        rows.push(table_row(cfg, &traj, &recon, e)?);
    }
    let spearman_vs_reference = if maps == AnalyticEmbedding::TABLE {
        let est: Vec<f64> = rows.iter().map(|r| r.estar).collect();
        Some(spearman(&est, &REFERENCE_ESTAR))
    } else {
        None
    };
    Ok(TableReport {
        rows,
        spearman_vs_reference,
    })
}

fn table_row(
    cfg: &TableConfig,
    traj: &Trajectory,
    recon: &ReconstructedStates,
    e: AnalyticEmbedding,
) -> Result<TableRow> {
    let base = NeighborConfig::new(cfg.k, cfg.theiler_w);
    let index = NeighborIndex::new(&recon.states);
    let report = estimate_estar_indexed(&index, recon, cfg.n, &base, cfg.n_queries, cfg.seed)?;
    let queries: Vec<usize> = report.per_query.iter().map(|q| q.query).collect();
    let shared = horizon_config(recon.len(), cfg.n, &base)?;
    let ff = fold_frac_indexed(
        &index,
        recon,
        traj,
        &queries,
        &FoldFracConfig {
            neighbors: shared,
            delta_tol_fraction: cfg.delta_tol_fraction,
            seed: cfg.seed,
        },
    )?;
    let (radius, _) = radius_stats(&index, &queries, &shared)?;
    let class = e.classify(&cfg.simulation.system, traj, 0.05)?;
    Ok(TableRow {
        id: e.id().to_string(),
        embedding: e.label(),
        estar: report.estar,
        std: report.std,
        stderr: report.stderr,
        fold_frac: ff.fold_frac,
        radius,
        tail_ratio: if radius.r_k_median > 0.0 {
            radius.r_k_q90 / radius.r_k_median
        } else {
            f64::INFINITY
        },
        class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsConfig {
    pub table: TableConfig,
    pub embedding: AnalyticEmbedding,
    pub base_queries: usize,
    pub quantile: f64,
    /// Tangent-growth threshold; `None` uses the median over base points.
    pub growth_threshold: Option<f64>,
    pub k_density: usize,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            table: TableConfig::default(),
            embedding: AnalyticEmbedding::U3,
            base_queries: 400,
            quantile: 0.95,
            growth_threshold: None,
            k_density: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub base_queries: usize,
    pub pesin_accepted: usize,
    pub growth_threshold: f64,
    /// Pesin-accepted queries whose weighted cloud splits into two branches.
    pub accepted: usize,
    pub acceptance_fraction: f64,
    pub srb_capped: usize,
    pub lower: LowerBound,
    pub upper: UpperBound,
    pub per_query: Vec<BranchQuery>,
}

/// Pesin filter, SRB-weighted clouds, branch split, then both bound checks.
pub fn run_bounds(cfg: &BoundsConfig) -> Result<BoundsReport> {
    let t = &cfg.table;
    let sys = t.simulation.system;
    let traj = t.simulation.simulate()?;
    let spec = cfg.embedding.to_spec();
    let recon = embed_trajectory(&traj, &spec, Some(&sys))?;
    let index = NeighborIndex::new(&recon.states);
    let latent_index = NeighborIndex::new(&traj.states);
    let base = sample_queries(recon.len().saturating_sub(t.n), cfg.base_queries, t.seed)?;
    let off = recon.sample_offset;
    let latent_rows: Vec<usize> = base.iter().map(|q| q + off).collect();
    let pesin = pesin_filter(&sys, &traj, &latent_rows, t.n, cfg.growth_threshold)?;
    let ncfg = NeighborConfig::new(t.k, t.theiler_w);
    let srb = SrbOptions {
        k_density: cfg.k_density,
        theiler_w: t.theiler_w,
    };
    let copts = ClusterOptions {
        seed: t.seed,
        ..ClusterOptions::default()
    };
    let accepted_q: Vec<usize> = pesin.accepted.iter().map(|r| r - off).collect();
    let per: Vec<Result<Option<(BranchQuery, usize)>>> = crate::par_map(&accepted_q, |&q| {
        let (cloud, nb) = push_forward_cloud(&index, &recon, q, t.n, &ncfg)?;
        let rows: Vec<usize> = nb.iter().map(|x| x.index + t.n + off).collect();
        let w = srb_weights(&latent_index, &traj, &rows, &spec, &sys, &srb)?;
        let kernel = EmpiricalKernel::weighted(cloud.points, w.weights)?;
        let dec = cluster_kernel(&kernel, &copts)?;
        if !dec.bimodal {
            return Ok(None);
        }
        Ok(Some((BranchQuery::from_kernel(q, &kernel, &dec)?, w.capped)))
    });
    let mut queries = Vec::new();
    let mut capped = 0;
    for r in per {
        if let Some((bq, c)) = r? {
            queries.push(bq);
            capped += c;
        }
    }
    let lower = lower_bound_check(&queries, cfg.quantile)?;
    let upper = upper_bound_check(&queries);
    Ok(BoundsReport {
        base_queries: base.len(),
        pesin_accepted: pesin.accepted.len(),
        growth_threshold: pesin.threshold,
        accepted: queries.len(),
        acceptance_fraction: queries.len() as f64 / base.len() as f64,
        srb_capped: capped,
        lower,
        upper,
        per_query: queries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcmExperimentConfig {
    pub simulation: SimulationConfig,
    pub ccm: CcmOptions,
    /// Latent coordinate pairs (0-based) to cross map.
    pub pairs: Vec<(usize, usize)>,
}

impl Default for CcmExperimentConfig {
    fn default() -> Self {
        let ccm = CcmOptions::new(3, 5, vec![50, 100, 200, 400, 800, 1600, 3200, 4800]);
        Self {
            simulation: SimulationConfig::rossler(5000),
            ccm,
            pairs: vec![(0, 1), (1, 2)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcmPair {
    pub x: String,
    pub y: String,
    pub m: usize,
    pub result: CcmResult,
}

pub fn run_ccm(cfg: &CcmExperimentConfig) -> Result<Vec<CcmPair>> {
    let traj = cfg.simulation.simulate()?;
    cfg.pairs
        .iter()
        .map(|&(a, b)| {
            let xa = traj.coordinate(a);
            let xb = traj.coordinate(b);
            Ok(CcmPair {
                x: format!("z{}", a + 1),
                y: format!("z{}", b + 1),
                m: cfg.ccm.m,
                result: ccm(&xa, &xb, &cfg.ccm)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdmdExperimentConfig {
    pub train: SimulationConfig,
    pub test: SimulationConfig,
    pub grid_m: Vec<usize>,
    pub grid_tau: Vec<usize>,
    pub horizons: Vec<usize>,
    pub observables: Vec<usize>,
    pub options: EdmdOptions,
    pub start_stride: usize,
}

impl Default for EdmdExperimentConfig {
    fn default() -> Self {
        let train = SimulationConfig::rossler(20_000);
        let mut test = SimulationConfig::rossler(5_000);
        test.z0 = vec![-2.0, 3.0, 0.5];
        Self {
            train,
            test,
            grid_m: vec![3, 5, 7],
            grid_tau: vec![10, 30, 50],
            horizons: vec![5, 10, 20, 50],
            observables: vec![0, 2],
            options: EdmdOptions::default(),
            start_stride: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdmdCell {
    pub observable: String,
    pub m: usize,
    pub tau: usize,
    pub horizons: Vec<usize>,
    pub nrmse: Vec<f64>,
    pub ridge_increased: bool,
}

pub fn run_edmd(cfg: &EdmdExperimentConfig) -> Result<Vec<EdmdCell>> {
    let train = cfg.train.simulate()?;
    let test = cfg.test.simulate()?;
    let mut out = Vec::new();
    for &obs in &cfg.observables {
        for &m in &cfg.grid_m {
            for &tau in &cfg.grid_tau {
                let spec = EmbeddingSpec::delay(Observable::Coord(obs), m, tau);
                let tr = embed_trajectory(&train, &spec, None)?;
                let te = embed_trajectory(&test, &spec, None)?;
                let model = edmd_fit_segments(&[&tr.states], &cfg.options)?;
                let nrmse = edmd_rollout_nrmse(&model, &te.states, &cfg.horizons, cfg.start_stride)?;
                out.push(EdmdCell {
                    observable: format!("z{}", obs + 1),
                    m,
                    tau,
                    horizons: cfg.horizons.clone(),
                    nrmse,
                    ridge_increased: model.ridge_increased,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendulumConfig {
    pub simulation: SimulationConfig,
    pub horizons: Vec<usize>,
    pub k: usize,
    pub theiler_w: usize,
    pub n_queries: usize,
    pub seed: u64,
    /// Derivative orders of the differential map.
    pub orders: Vec<usize>,
    pub savgol: SavGol,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            simulation: SimulationConfig {
                system: SystemParams::double_pendulum(),
                z0: SystemParams::double_pendulum().default_initial_state(),
                dt: 0.001,
                samples: 50_000,
                transient_frac: 0.2,
                stride: 1,
            },
            horizons: vec![5, 10, 20, 40, 80],
            k: 50,
            theiler_w: 20,
            n_queries: 500,
            seed: 42,
            orders: vec![0, 1, 2, 3],
            savgol: SavGol::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendulumCurve {
    pub angle: String,
    pub transform: SignalTransform,
    pub horizons: Vec<usize>,
    pub estar: Vec<f64>,
}

/// Ê* curves of the derivative maps of `theta_i` and `sin(theta_i)`.
pub fn run_pendulum(cfg: &PendulumConfig) -> Result<Vec<PendulumCurve>> {
    let traj = cfg.simulation.simulate()?;
    let mut out = Vec::new();
    for angle in 0..2 {
        let theta = traj.coordinate(angle);
        for tf in [SignalTransform::Identity, SignalTransform::Sin] {
            let spec = EmbeddingSpec {
                kind: crate::embedding::EmbeddingKind::DifferentialNumeric,
                observables: vec![Observable::Series(format!("theta{}", angle + 1))],
                m: cfg.orders.len(),
                tau: 0,
                derivative_orders: cfg.orders.clone(),
                transform: tf,
            };
            let recon = numeric_differential_series(&[theta.clone()], &spec, traj.dt, &cfg.savgol)?;
            let curve = estar_curve(
                &recon,
                &cfg.horizons,
                &NeighborConfig::new(cfg.k, cfg.theiler_w),
                cfg.n_queries,
                cfg.seed,
            )?;
            out.push(PendulumCurve {
                angle: format!("theta{}", angle + 1),
                transform: tf,
                horizons: cfg.horizons.clone(),
                estar: curve.iter().map(|(_, r)| r.estar).collect(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformGridConfig {
    pub grid_m: Vec<usize>,
    pub grid_tau: Vec<usize>,
    pub n: usize,
    pub k: usize,
    /// `None` uses `(m - 1) * tau`.
    pub theiler_w: Option<usize>,
    pub n_queries: usize,
    pub seed: u64,
}

impl Default for TransformGridConfig {
    fn default() -> Self {
        Self {
            grid_m: vec![3, 5, 7],
            grid_tau: vec![2, 4, 6],
            n: 20,
            k: 50,
            theiler_w: None,
            n_queries: 500,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformCell {
    pub m: usize,
    pub tau: usize,
    pub estar_raw: f64,
    pub estar_log: f64,
    pub improvement_pct: f64,
}

/// Ê* of delay maps of the raw counts and of `log(1 + counts)` over an `(m, tau)` grid.
pub fn run_transform_grid(counts: &[f64], cfg: &TransformGridConfig) -> Result<Vec<TransformCell>> {
    if let Some((i, v)) = counts.iter().enumerate().find(|(_, v)| **v < 0.0 || !v.is_finite()) {
        return Err(Error::NegativeInput { index: i, value: *v });
    }
    let mut out = Vec::new();
    for &m in &cfg.grid_m {
        for &tau in &cfg.grid_tau {
            let w = cfg.theiler_w.unwrap_or((m - 1) * tau);
            let ncfg = NeighborConfig::new(cfg.k, w);
            let mut est = [0.0; 2];
            for (slot, tf) in [SignalTransform::Identity, SignalTransform::Log1p]
                .into_iter()
                .enumerate()
            {
                let spec = EmbeddingSpec::delay(Observable::Series("counts".into()), m, tau).with_transform(tf);
                let recon = embed_series(counts, &spec, 1.0)?;
                let index = NeighborIndex::new(&recon.states);
                est[slot] = estimate_estar_indexed(&index, &recon, cfg.n, &ncfg, cfg.n_queries, cfg.seed)?.estar;
            }
            out.push(TransformCell {
                m,
                tau,
                estar_raw: est[0],
                estar_log: est[1],
                improvement_pct: improvement_pct(est[0], est[1])?,
            });
        }
    }
    Ok(out)
}

/// Intermittent-burst surrogate: Rössler `z3` shifted to start at zero.
pub fn burst_surrogate(samples: usize, stride: usize) -> Result<Vec<f64>> {
    let mut sim = SimulationConfig::rossler(samples);
    sim.stride = stride;
    let z3 = sim.simulate()?.coordinate(2);
    let lo = z3.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(z3.into_iter().map(|v| v - lo).collect())
}

/// Ê* for one reconstruction, echoing a readable summary.
pub fn estar_for(
    recon: &ReconstructedStates,
    n: usize,
    cfg: &NeighborConfig,
    n_queries: usize,
    seed: u64,
) -> Result<StochasticityReport> {
    let index = NeighborIndex::new(&recon.states);
    estimate_estar_indexed(&index, recon, n, cfg, n_queries, seed)
}

/// Upper quantile helper used in summaries.
pub fn q90(xs: &[f64]) -> f64 {
    quantile(xs, 0.9)
}

/// Attractor sample for classification reports.
pub fn attractor_sample(sim: &SimulationConfig, points: usize) -> Result<Trajectory> {
    let tr = sim.simulate()?;
    let step = (tr.len() / points.max(1)).max(1);
    let rows: Vec<usize> = (0..tr.len()).step_by(step).take(points).collect();
    Trajectory::new(tr.dt * step as f64, tr.t0, tr.states.select_rows(&rows))
}

/// Rows of `m` as a point set with an identity spec, for ad-hoc estimation.
pub fn as_states(m: RowMatrix, dt: f64) -> ReconstructedStates {
    let d = m.width();
    ReconstructedStates::from_matrix(
        m,
        dt,
        EmbeddingSpec::multivariate((0..d).map(|i| (Observable::Coord(i), 0)).collect()),
    )
}
