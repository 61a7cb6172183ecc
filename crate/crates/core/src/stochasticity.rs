//! Empirical push-forward kernels, the Fréchet-median cost and its average
//! over sampled queries.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::ReconstructedStates;
use crate::error::{Error, Result};
use crate::matrix::{dist, RowMatrix};
use crate::neighbors::{Neighbor, NeighborConfig, NeighborIndex};
use crate::par_map;
use crate::stats::std_dev;

/// Weighted point cloud standing in for the n-step conditional law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalKernel {
    pub points: RowMatrix,
    pub weights: Vec<f64>,
}

impl EmpiricalKernel {
    pub fn uniform(points: RowMatrix) -> Result<Self> {
        let k = points.rows();
        if k == 0 {
            return Err(Error::InsufficientData("empty kernel".into()));
        }
        Ok(Self {
            points,
            weights: vec![1.0 / k as f64; k],
        })
    }

    /// Normalises `weights` to unit sum.
    pub fn weighted(points: RowMatrix, weights: Vec<f64>) -> Result<Self> {
        if points.rows() == 0 || points.rows() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: points.rows(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter(
                "kernel weights must be finite and nonnegative".into(),
            ));
        }
        let s: f64 = weights.iter().sum();
        if !(s > 0.0) {
            return Err(Error::InvalidParameter("kernel weights sum to zero".into()));
        }
        Ok(Self {
            points,
            weights: weights.into_iter().map(|w| w / s).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.width()
    }

    /// Largest pairwise distance.
    pub fn diameter(&self) -> f64 {
        let k = self.len();
        let mut d = 0.0f64;
        for i in 0..k {
            for j in i + 1..k {
                d = d.max(dist(self.points.row(i), self.points.row(j)));
            }
        }
        d
    }

    pub fn weighted_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (row, w) in self.points.iter_rows().zip(&self.weights) {
            for (a, x) in m.iter_mut().zip(row) {
                *a += w * x;
            }
        }
        m
    }
}

/// `sum_j w_j |y - y_j|`.
pub fn pointwise_risk(kernel: &EmpiricalKernel, y: &[f64]) -> Result<f64> {
    if y.len() != kernel.dim() {
        return Err(Error::DimensionMismatch {
            expected: kernel.dim(),
            got: y.len(),
        });
    }
    Ok(risk_unchecked(kernel, y))
}

fn risk_unchecked(kernel: &EmpiricalKernel, y: &[f64]) -> f64 {
    kernel
        .points
        .iter_rows()
        .zip(&kernel.weights)
        .map(|(p, w)| w * dist(p, y))
        .sum()
}

/// Cost of the only coupling between the kernel and a Dirac mass at `y`:
/// every atom ships its whole mass to `y`.
pub fn transport_cost_to_dirac(kernel: &EmpiricalKernel, y: &[f64]) -> f64 {
    let k = kernel.len();
    // Coupling matrix with a single target column.
    let plan: Vec<f64> = kernel.weights.clone();
    let cost: Vec<f64> = (0..k).map(|j| dist(kernel.points.row(j), y)).collect();
    plan.iter().zip(&cost).map(|(p, c)| p * c).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricMedian {
    pub point: Vec<f64>,
    pub m_hat: f64,
    pub iters: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeiszfeldOptions {
    /// Absolute step tolerance; `None` means `1e-9` times the cloud diameter.
    pub tol: Option<f64>,
    pub max_iter: usize,
}

impl Default for WeiszfeldOptions {
    fn default() -> Self {
        Self {
            tol: None,
            max_iter: 200,
        }
    }
}

pub fn geometric_median(kernel: &EmpiricalKernel, opts: &WeiszfeldOptions) -> GeometricMedian {
    geometric_median_observed(kernel, opts, |_, _, _| {})
}

/// Weiszfeld iteration from the weighted mean. `observe(iter, point, objective)`
/// is called on the start point and after every update.
///
/// When the iterate coincides with atoms of total weight `eta`, the pull `R`
/// of the remaining atoms decides: `|R| <= eta` means the anchor is optimal,
/// otherwise the step is damped to `(1 - eta/|R|) T(y) + (eta/|R|) y`.
pub fn geometric_median_observed<F: FnMut(usize, &[f64], f64)>(
    kernel: &EmpiricalKernel,
    opts: &WeiszfeldOptions,
    mut observe: F,
) -> GeometricMedian {
    let m = kernel.dim();
    let mut y = kernel.weighted_mean();
    if kernel.len() == 1 {
        let p = kernel.points.row(0).to_vec();
        observe(0, &p, 0.0);
        return GeometricMedian {
            point: p,
            m_hat: 0.0,
            iters: 0,
            converged: true,
        };
    }
    let diam = kernel.diameter();
    if diam == 0.0 {
        let p = kernel.points.row(0).to_vec();
        observe(0, &p, 0.0);
        return GeometricMedian {
            point: p,
            m_hat: 0.0,
            iters: 0,
            converged: true,
        };
    }
    let tol = opts.tol.unwrap_or(1e-9 * diam);
    // Distances below this count as landing on an atom.
    let coincide = (1e-12 * diam).max(f64::MIN_POSITIVE);
    observe(0, &y, risk_unchecked(kernel, &y));
    let mut num = vec![0.0; m];
    let mut pull = vec![0.0; m];
    let mut iters = 0;
    let mut converged = false;
    while iters < opts.max_iter {
        iters += 1;
        num.iter_mut().for_each(|v| *v = 0.0);
        pull.iter_mut().for_each(|v| *v = 0.0);
        let mut den = 0.0;
        let mut eta = 0.0;
        for (p, &w) in kernel.points.iter_rows().zip(&kernel.weights) {
            let d = dist(p, &y);
            if d <= coincide {
                eta += w;
                continue;
            }
            let c = w / d;
            den += c;
            for i in 0..m {
                num[i] += c * p[i];
                pull[i] += c * (p[i] - y[i]);
            }
        }
        if den == 0.0 {
            converged = true;
            break;
        }
        let t: Vec<f64> = num.iter().map(|v| v / den).collect();
        let next: Vec<f64> = if eta > 0.0 {
            let r = pull.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r <= eta {
                converged = true;
                break;
            }
            let lam = (eta / r).min(1.0);
            t.iter().zip(&y).map(|(ti, yi)| (1.0 - lam) * ti + lam * yi).collect()
        } else {
            t
        };
        let step = dist(&next, &y);
        y = next;
        observe(iters, &y, risk_unchecked(kernel, &y));
        if step < tol {
            converged = true;
            break;
        }
    }
    // Slow linear convergence towards an optimal atom stalls short of it;
    // test the subgradient condition at the nearest atom and snap if it holds.
    if let Some(j) = nearest_atom(kernel, &y) {
        let anchor = kernel.points.row(j);
        if anchor_is_optimal(kernel, anchor, coincide) && risk_unchecked(kernel, anchor) <= risk_unchecked(kernel, &y) {
            y = anchor.to_vec();
            converged = true;
            observe(iters, &y, risk_unchecked(kernel, &y));
        }
    }
    let m_hat = risk_unchecked(kernel, &y);
    GeometricMedian {
        point: y,
        m_hat,
        iters,
        converged,
    }
}

fn nearest_atom(kernel: &EmpiricalKernel, y: &[f64]) -> Option<usize> {
    (0..kernel.len())
        .map(|j| (dist(kernel.points.row(j), y), j))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, j)| j)
}

/// An atom minimises the risk iff the pull of the other atoms does not exceed
/// the mass sitting on it.
fn anchor_is_optimal(kernel: &EmpiricalKernel, anchor: &[f64], coincide: f64) -> bool {
    let m = kernel.dim();
    let mut pull = vec![0.0; m];
    let mut eta = 0.0;
    for (p, &w) in kernel.points.iter_rows().zip(&kernel.weights) {
        let d = dist(p, anchor);
        if d <= coincide {
            eta += w;
        } else {
            for i in 0..m {
                pull[i] += w * (p[i] - anchor[i]) / d;
            }
        }
    }
    pull.iter().map(|v| v * v).sum::<f64>().sqrt() <= eta
}

/// Future cloud `{x_{t+n} : t in N_k(q)}` with uniform weights.
pub fn push_forward_cloud(
    index: &NeighborIndex,
    states: &ReconstructedStates,
    q: usize,
    n: usize,
    cfg: &NeighborConfig,
) -> Result<(EmpiricalKernel, Vec<Neighbor>)> {
    let cfg = horizon_config(states.len(), n, cfg)?;
    let nb = index.knn_theiler(q, &cfg)?;
    let rows: Vec<usize> = nb.iter().map(|x| x.index + n).collect();
    Ok((EmpiricalKernel::uniform(states.states.select_rows(&rows))?, nb))
}

/// Tighten the candidate limit so every neighbour has an `n`-step future.
pub fn horizon_config(len: usize, n: usize, cfg: &NeighborConfig) -> Result<NeighborConfig> {
    if len <= n {
        return Err(Error::SeriesTooShort { needed: n, have: len });
    }
    let last = len - n - 1;
    let mut c = *cfg;
    c.candidate_limit = Some(cfg.candidate_limit.map_or(last, |l| l.min(last)));
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: usize,
    pub m_hat: f64,
    pub median_point: Vec<f64>,
    pub r_k: f64,
    pub iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstarConfig {
    pub n: usize,
    pub k: usize,
    pub theiler_w: usize,
    pub n_queries: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticityReport {
    pub config: EstarConfig,
    pub estar: f64,
    /// Standard deviation of the per-query costs.
    pub std: f64,
    /// Standard error of the mean, `std / sqrt(N_Q)`.
    pub stderr: f64,
    pub non_converged: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_query: Vec<QueryResult>,
}

/// Sorted uniform sample without replacement from `0..population`.
pub fn sample_queries(population: usize, n_queries: usize, seed: u64) -> Result<Vec<usize>> {
    if n_queries == 0 {
        return Err(Error::InvalidParameter("number of queries must be positive".into()));
    }
    if n_queries > population {
        return Err(Error::InsufficientData(format!(
            "{n_queries} queries requested but only {population} admissible"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = sample(&mut rng, population, n_queries).into_vec();
    q.sort_unstable();
    Ok(q)
}

/// Per-query costs for an explicit query list, in the order given.
pub fn evaluate_queries(
    index: &NeighborIndex,
    states: &ReconstructedStates,
    n: usize,
    cfg: &NeighborConfig,
    queries: &[usize],
    opts: &WeiszfeldOptions,
) -> Result<Vec<(QueryResult, bool)>> {
    let cfg = horizon_config(states.len(), n, cfg)?;
    let results: Vec<Result<(QueryResult, bool)>> = par_map(queries, |&q| {
        let (kernel, nb) = push_forward_cloud(index, states, q, n, &cfg)?;
        let gm = geometric_median(&kernel, opts);
        Ok((
            QueryResult {
                query: q,
                m_hat: gm.m_hat,
                median_point: gm.point,
                r_k: nb.last().map_or(0.0, |x| x.dist),
                iters: gm.iters,
            },
            gm.converged,
        ))
    });
    results.into_iter().collect()
}

fn aggregate(config: EstarConfig, rows: Vec<(QueryResult, bool)>) -> StochasticityReport {
    let non_converged = rows.iter().filter(|r| !r.1).count();
    let per_query: Vec<QueryResult> = rows.into_iter().map(|r| r.0).collect();
    let costs: Vec<f64> = per_query.iter().map(|r| r.m_hat).collect();
    // Sequential sum in query order keeps the result independent of thread count.
    let mut total = 0.0;
    for c in &costs {
        total += c;
    }
    let estar = total / costs.len() as f64;
    let sd = std_dev(&costs);
    StochasticityReport {
        config,
        estar,
        std: sd,
        stderr: sd / (costs.len() as f64).sqrt(),
        non_converged,
        per_query,
    }
}

pub fn estimate_estar(
    states: &ReconstructedStates,
    n: usize,
    cfg: &NeighborConfig,
    n_queries: usize,
    seed: u64,
) -> Result<StochasticityReport> {
    let index = NeighborIndex::new(&states.states);
    estimate_estar_indexed(&index, states, n, cfg, n_queries, seed)
}

pub fn estimate_estar_indexed(
    index: &NeighborIndex,
    states: &ReconstructedStates,
    n: usize,
    cfg: &NeighborConfig,
    n_queries: usize,
    seed: u64,
) -> Result<StochasticityReport> {
    cfg.validate()?;
    let population = states.len().saturating_sub(n);
    let queries = sample_queries(population, n_queries, seed)?;
    let rows = evaluate_queries(index, states, n, cfg, &queries, &WeiszfeldOptions::default())?;
    Ok(aggregate(
        EstarConfig {
            n,
            k: cfg.k,
            theiler_w: cfg.theiler_w,
            n_queries,
            seed,
        },
        rows,
    ))
}

/// Ê* over several horizons with one shared query sample drawn from the rows
/// valid for the largest horizon.
pub fn estar_curve(
    states: &ReconstructedStates,
    horizons: &[usize],
    cfg: &NeighborConfig,
    n_queries: usize,
    seed: u64,
) -> Result<Vec<(usize, StochasticityReport)>> {
    cfg.validate()?;
    let nmax = *horizons
        .iter()
        .max()
        .ok_or_else(|| Error::InvalidParameter("no horizons given".into()))?;
    let population = states.len().saturating_sub(nmax);
    let queries = sample_queries(population, n_queries, seed)?;
    let index = NeighborIndex::new(&states.states);
    // Neighbours are restricted to rows with a future at the largest horizon,
    // so every horizon sees the same neighbour sets.
    let shared = horizon_config(states.len(), nmax, cfg)?;
    horizons
        .iter()
        .map(|&n| {
            let rows = evaluate_queries(&index, states, n, &shared, &queries, &WeiszfeldOptions::default())?;
            Ok((
                n,
                aggregate(
                    EstarConfig {
                        n,
                        k: cfg.k,
                        theiler_w: cfg.theiler_w,
                        n_queries,
                        seed,
                    },
                    rows,
                ),
            ))
        })
        .collect()
}
