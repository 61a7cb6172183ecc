//! Branch decomposition of future clouds and the mass-separation bounds on
//! the Fréchet-median cost.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{tangent_growth, SystemParams, Trajectory};
use crate::embedding::EmbeddingSpec;
use crate::error::{Error, Result};
use crate::jacobian::{coarea_jacobian, spec_jacobian};
use crate::matrix::{dist, sq_dist, RowMatrix};
use crate::neighbors::{NeighborConfig, NeighborIndex};
use crate::par_map;
use crate::stats::{median, pearson, quantile, Summary};
use crate::stochasticity::{geometric_median, pointwise_risk, EmpiricalKernel, WeiszfeldOptions};

/// Coarea Jacobians below this are treated as singular when forming weights.
pub const JACOBIAN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterOptions {
    pub restarts: usize,
    pub max_lloyd: usize,
    /// Minimum mass of the smaller cluster for a nontrivial split.
    pub min_branch_mass: f64,
    pub seed: u64,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_lloyd: 100,
            min_branch_mass: 0.1,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchDecomposition {
    pub labels: Vec<usize>,
    /// Kernel mass of each cluster.
    pub branch_weights: [f64; 2],
    pub dominant: usize,
    /// Distance between the per-cluster geometric medians.
    pub separation: f64,
    pub silhouette: f64,
    pub medians: [Vec<f64>; 2],
    /// Both clusters nontrivial and silhouette positive.
    pub bimodal: bool,
}

/// Two-means clustering of the kernel support with k-means++ seeding and
/// `restarts` seeded restarts; the lowest inertia wins.
pub fn cluster_kernel(kernel: &EmpiricalKernel, opts: &ClusterOptions) -> Result<BranchDecomposition> {
    let k = kernel.len();
    if k < 4 {
        return Err(Error::InsufficientData(format!(
            "clustering needs at least 4 points, got {k}"
        )));
    }
    let pts = &kernel.points;
    let diam = kernel.diameter();
    let scale = pts.as_flat().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if diam <= 1e-12 * (1.0 + scale) {
        let gm = geometric_median(kernel, &WeiszfeldOptions::default()).point;
        return Ok(BranchDecomposition {
            labels: vec![0; k],
            branch_weights: [1.0, 0.0],
            dominant: 0,
            separation: 0.0,
            silhouette: 0.0,
            medians: [gm.clone(), gm],
            bimodal: false,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..opts.restarts.max(1) {
        let (inertia, labels) = lloyd(pts, &mut rng, opts.max_lloyd);
        if best.as_ref().map_or(true, |b| inertia < b.0) {
            best = Some((inertia, labels));
        }
    }
    let labels = best.unwrap().1;
    let mut branch_weights = [0.0; 2];
    for (l, w) in labels.iter().zip(&kernel.weights) {
        branch_weights[*l] += w;
    }
    let medians = [0, 1].map(|c| cluster_median(kernel, &labels, c));
    let separation = match (&medians[0], &medians[1]) {
        (Some(a), Some(b)) => dist(a, b),
        _ => 0.0,
    };
    let dominant = if branch_weights[1] > branch_weights[0] { 1 } else { 0 };
    let silhouette = silhouette(pts, &labels);
    let minority = branch_weights[0].min(branch_weights[1]);
    let fallback = medians[dominant].clone().unwrap_or_else(|| pts.row(0).to_vec());
    let medians = [
        medians[0].clone().unwrap_or_else(|| fallback.clone()),
        medians[1].clone().unwrap_or(fallback),
    ];
    Ok(BranchDecomposition {
        labels,
        branch_weights,
        dominant,
        separation,
        silhouette,
        medians,
        bimodal: silhouette > 0.0 && minority >= opts.min_branch_mass,
    })
}

fn cluster_median(kernel: &EmpiricalKernel, labels: &[usize], c: usize) -> Option<Vec<f64>> {
    let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
    if rows.is_empty() {
        return None;
    }
    let w: Vec<f64> = rows.iter().map(|&i| kernel.weights[i]).collect();
    let sub = if w.iter().sum::<f64>() > 0.0 {
        EmpiricalKernel::weighted(kernel.points.select_rows(&rows), w).ok()?
    } else {
        EmpiricalKernel::uniform(kernel.points.select_rows(&rows)).ok()?
    };
    Some(geometric_median(&sub, &tight_weiszfeld()).point)
}

fn lloyd(pts: &RowMatrix, rng: &mut ChaCha8Rng, max_iter: usize) -> (f64, Vec<usize>) {
    let n = pts.rows();
    // k-means++: first centre uniform, second drawn proportional to D^2.
    let c0 = rng.gen_range(0..n);
    let d2: Vec<f64> = (0..n).map(|i| sq_dist(pts.row(i), pts.row(c0))).collect();
    let total: f64 = d2.iter().sum();
    let mut c1 = c0;
    if total > 0.0 {
        let mut u = rng.gen::<f64>() * total;
        for (i, d) in d2.iter().enumerate() {
            if u < *d {
                c1 = i;
                break;
            }
            u -= d;
            c1 = i;
        }
    }
    let mut centers = [pts.row(c0).to_vec(), pts.row(c1).to_vec()];
    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for i in 0..n {
            let l = if sq_dist(pts.row(i), &centers[1]) < sq_dist(pts.row(i), &centers[0]) {
                1
            } else {
                0
            };
            if labels[i] != l {
                labels[i] = l;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for c in 0..2 {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            let mut m = vec![0.0; pts.width()];
            for &i in &members {
                for (a, v) in m.iter_mut().zip(pts.row(i)) {
                    *a += v;
                }
            }
            m.iter_mut().for_each(|v| *v /= members.len() as f64);
            centers[c] = m;
        }
    }
    let inertia = (0..n).map(|i| sq_dist(pts.row(i), &centers[labels[i]])).sum();
    (inertia, labels)
}

/// Mean silhouette; points in singleton clusters score 0.
pub fn silhouette(pts: &RowMatrix, labels: &[usize]) -> f64 {
    let n = pts.rows();
    let sizes = [0, 1].map(|c| labels.iter().filter(|&&l| l == c).count());
    if sizes[0] == 0 || sizes[1] == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        let mut sums = [0.0; 2];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist(pts.row(i), pts.row(j));
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = sums[1 - own] / sizes[1 - own] as f64;
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

fn tight_weiszfeld() -> WeiszfeldOptions {
    WeiszfeldOptions {
        tol: None,
        max_iter: 5000,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrbOptions {
    /// Neighbour count of the latent density estimate.
    pub k_density: usize,
    /// Temporal exclusion for the density estimate, in samples.
    pub theiler_w: usize,
}

impl Default for SrbOptions {
    fn default() -> Self {
        Self {
            k_density: 15,
            theiler_w: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrbWeights {
    pub weights: Vec<f64>,
    pub density: Vec<f64>,
    pub coarea: Vec<f64>,
    /// Points whose coarea Jacobian fell below the floor.
    pub capped: usize,
}

/// kNN density `k / (N r_k^d)` at latent row `row`.
pub fn latent_density(index: &NeighborIndex, latent: &Trajectory, row: usize, opts: &SrbOptions) -> Result<f64> {
    let cfg = NeighborConfig::new(opts.k_density, opts.theiler_w);
    let nb = index.knn_theiler(row, &cfg)?;
    let r = nb.last().map_or(0.0, |n| n.dist).max(f64::MIN_POSITIVE);
    Ok(opts.k_density as f64 / (latent.len() as f64 * r.powi(latent.dim() as i32)))
}

/// SRB-proxy weights `rho(z_i) / J_F(z_i)` for cloud points whose latent rows
/// are `latent_rows`, normalised to unit sum.
pub fn srb_weights(
    index: &NeighborIndex,
    latent: &Trajectory,
    latent_rows: &[usize],
    spec: &EmbeddingSpec,
    sys: &SystemParams,
    opts: &SrbOptions,
) -> Result<SrbWeights> {
    let mut density = Vec::with_capacity(latent_rows.len());
    let mut coarea = Vec::with_capacity(latent_rows.len());
    let mut capped = 0;
    for &row in latent_rows {
        density.push(latent_density(index, latent, row, opts)?);
        let j = coarea_jacobian(&spec_jacobian(spec, sys, latent.states.row(row))?);
        if j < JACOBIAN_FLOOR {
            capped += 1;
        }
        coarea.push(j.max(JACOBIAN_FLOOR));
    }
    Ok(SrbWeights {
        weights: normalised_ratio(&density, &coarea)?,
        density,
        coarea,
        capped,
    })
}

/// `rho_i / J_i` normalised to unit sum.
pub fn normalised_ratio(density: &[f64], coarea: &[f64]) -> Result<Vec<f64>> {
    let raw: Vec<f64> = density.iter().zip(coarea).map(|(r, j)| r / j).collect();
    let s: f64 = raw.iter().sum();
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::InsufficientData("SRB weights do not normalise".into()));
    }
    Ok(raw.into_iter().map(|w| w / s).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PesinResult {
    pub accepted: Vec<usize>,
    pub growth: Vec<f64>,
    pub threshold: f64,
}

/// Keep latent rows whose `n`-step tangent growth reaches `threshold`
/// (default: the median growth over all candidates).
pub fn pesin_filter(
    sys: &SystemParams,
    latent: &Trajectory,
    rows: &[usize],
    n: usize,
    threshold: Option<f64>,
) -> Result<PesinResult> {
    let growth: Vec<f64> = par_map(rows, |&r| tangent_growth(sys, latent.states.row(r), n, latent.dt))
        .into_iter()
        .collect::<Result<_>>()?;
    let threshold = threshold.unwrap_or_else(|| median(&growth));
    let accepted = rows
        .iter()
        .zip(&growth)
        .filter(|(_, g)| **g >= threshold)
        .map(|(r, _)| *r)
        .collect();
    Ok(PesinResult {
        accepted,
        growth,
        threshold,
    })
}

/// Per-query ingredients of the bound checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchQuery {
    pub query: usize,
    /// Weighted Fréchet-median cost.
    pub m_hat_w: f64,
    pub separation: f64,
    /// `w_max / w_2`.
    pub weight_ratio: f64,
    /// Cost of predicting with the dominant-branch median.
    pub u_n: f64,
}

impl BranchQuery {
    pub fn from_kernel(query: usize, kernel: &EmpiricalKernel, dec: &BranchDecomposition) -> Result<Self> {
        let gm = geometric_median(kernel, &tight_weiszfeld());
        let wmax = dec.branch_weights[dec.dominant];
        let w2 = dec.branch_weights[1 - dec.dominant];
        Ok(Self {
            query,
            m_hat_w: gm.m_hat,
            separation: dec.separation,
            weight_ratio: if w2 > 0.0 { wmax / w2 } else { f64::INFINITY },
            u_n: pointwise_risk(kernel, &dec.medians[dec.dominant])?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub r_star: f64,
    pub b0: f64,
    pub violation_rate: f64,
    pub corr: f64,
    pub q_lb: Summary,
}

/// `b0 = 1 / (1 + r*)` with `r*` the `quantile` of the branch weight ratios;
/// a violation is `m_hat_w < b0 * separation`.
pub fn lower_bound_check(queries: &[BranchQuery], quantile_level: f64) -> Result<LowerBound> {
    if queries.len() < 20 {
        return Err(Error::InsufficientData(format!(
            "lower-bound check needs 20 bimodal queries, got {}",
            queries.len()
        )));
    }
    let ratios: Vec<f64> = queries.iter().map(|q| q.weight_ratio).collect();
    let r_star = quantile(&ratios, quantile_level);
    Ok(lower_bound_from_ratio(queries, r_star))
}

pub fn lower_bound_from_ratio(queries: &[BranchQuery], r_star: f64) -> LowerBound {
    let b0 = 1.0 / (1.0 + r_star);
    let bound: Vec<f64> = queries.iter().map(|q| b0 * q.separation).collect();
    let m: Vec<f64> = queries.iter().map(|q| q.m_hat_w).collect();
    let violations = m.iter().zip(&bound).filter(|(a, b)| a < b).count();
    let ratio: Vec<f64> = m
        .iter()
        .zip(&bound)
        .filter(|(_, b)| **b > 0.0)
        .map(|(a, b)| a / b)
        .collect();
    LowerBound {
        r_star,
        b0,
        violation_rate: violations as f64 / queries.len().max(1) as f64,
        corr: pearson(&m, &bound),
        q_lb: Summary::of(&ratio),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperBound {
    pub q_ub: Summary,
    /// Queries with `U_n < m_hat_w` beyond the 1e-9 tolerance.
    pub violations: usize,
}

pub fn upper_bound_check(queries: &[BranchQuery]) -> UpperBound {
    let mut violations = 0;
    let mut ratios = Vec::with_capacity(queries.len());
    for q in queries {
        if q.u_n < q.m_hat_w - 1e-9 * q.m_hat_w.abs().max(1.0) {
            violations += 1;
        }
        if q.m_hat_w > 0.0 {
            ratios.push(q.u_n / q.m_hat_w);
        } else {
            ratios.push(1.0);
        }
    }
    UpperBound {
        q_ub: Summary::of(&ratios),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn gauss(rng: &mut ChaCha8Rng) -> f64 {
        let u1: f64 = rng.gen::<f64>().max(1e-300);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    fn blobs(seed: u64, na: usize, nb: usize, sep: f64, sigma: f64) -> EmpiricalKernel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = RowMatrix::new(3);
        for i in 0..na + nb {
            let cx = if i < na { 0.0 } else { sep };
            m.push_row(&[
                cx + sigma * gauss(&mut rng),
                sigma * gauss(&mut rng),
                sigma * gauss(&mut rng),
            ])
            .unwrap();
        }
        EmpiricalKernel::uniform(m).unwrap()
    }

    #[test]
    fn separated_blobs() {
        let k = blobs(1, 30, 20, 10.0, 0.3);
        let d = cluster_kernel(&k, &ClusterOptions::default()).unwrap();
        assert!(d.silhouette > 0.5);
        assert!(d.bimodal);
        let tol = 3.0 * 0.3 / (50f64).sqrt() * 3.0;
        assert!((d.separation - 10.0).abs() < tol, "separation {}", d.separation);
        assert!((d.branch_weights[d.dominant] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn mirrored_blobs_split_evenly() {
        let k = blobs(2, 25, 25, 6.0, 0.5);
        let d = cluster_kernel(&k, &ClusterOptions::default()).unwrap();
        assert!((d.branch_weights[0] - 0.5).abs() <= 2.0 / 50f64.sqrt());
    }

    #[test]
    fn single_blob_is_not_bimodal() {
        let k = blobs(3, 50, 0, 0.0, 1.0);
        let d = cluster_kernel(&k, &ClusterOptions::default()).unwrap();
        assert!(!d.bimodal || d.silhouette <= 0.5);
        let same = EmpiricalKernel::uniform(RowMatrix::from_rows(&[[1.0, 1.0]; 10]).unwrap()).unwrap();
        let d = cluster_kernel(&same, &ClusterOptions::default()).unwrap();
        assert!(!d.bimodal);
    }

    #[test]
    fn clustering_is_seeded() {
        let k = blobs(4, 20, 30, 3.0, 1.0);
        let a = cluster_kernel(&k, &ClusterOptions::default()).unwrap();
        let b = cluster_kernel(&k, &ClusterOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    fn two_atoms(p: f64, delta: f64) -> (EmpiricalKernel, BranchDecomposition) {
        let k = EmpiricalKernel::weighted(
            RowMatrix::from_rows(&[[0.0, 0.0], [0.0, 0.0], [delta, 0.0], [delta, 0.0]]).unwrap(),
            vec![p / 2.0, p / 2.0, (1.0 - p) / 2.0, (1.0 - p) / 2.0],
        )
        .unwrap();
        let d = cluster_kernel(&k, &ClusterOptions::default()).unwrap();
        (k, d)
    }

    #[test]
    fn two_atom_bounds() {
        for i in 1..20 {
            let p = i as f64 / 20.0;
            let (k, d) = two_atoms(p, 2.5);
            assert!((d.separation - 2.5).abs() < 1e-12);
            let q = BranchQuery::from_kernel(0, &k, &d).unwrap();
            let want = p.min(1.0 - p) * 2.5;
            assert!((q.m_hat_w - want).abs() < 1e-12, "p={p}: {} vs {want}", q.m_hat_w);
            // Dominant-branch prediction is the optimum itself.
            assert!((q.u_n - want).abs() < 1e-12);
        }
        let (k, d) = two_atoms(0.9, 1.0);
        let q = BranchQuery::from_kernel(0, &k, &d).unwrap();
        let ub = upper_bound_check(&[q.clone()]);
        assert!((ub.q_ub.median - 1.0).abs() < 1e-9);
        assert_eq!(ub.violations, 0);
        // weights (0.8, 0.2): m = 0.2 * delta >= b0 * delta iff b0 <= 0.2
        let (k, d) = two_atoms(0.8, 1.0);
        let q = BranchQuery::from_kernel(0, &k, &d).unwrap();
        assert!((q.weight_ratio - 4.0).abs() < 1e-12);
        let lb = lower_bound_from_ratio(&[q.clone()], 4.5);
        assert!(lb.b0 < 0.2);
        assert_eq!(lb.violation_rate, 0.0);
        let lb = lower_bound_from_ratio(&[q], 3.0);
        assert_eq!(lb.violation_rate, 1.0);
    }

    #[test]
    fn b0_from_reported_ratio() {
        let b0: f64 = 1.0 / (1.0 + 4.689);
        assert!((b0 - 0.176).abs() < 5e-4);
        for r in [1.0, 2.0, 10.0, 1e6] {
            let b: f64 = 1.0 / (1.0 + r);
            assert!(b > 0.0 && b <= 0.5);
        }
    }

    #[test]
    fn unimodal_upper_ratio_is_one() {
        let k = blobs(7, 40, 0, 0.0, 1.0);
        let mut d = cluster_kernel(&k, &ClusterOptions::default()).unwrap();
        // Treat the whole cloud as one branch.
        d.labels = vec![0; 40];
        d.branch_weights = [1.0, 0.0];
        d.dominant = 0;
        d.medians[0] = geometric_median(&k, &tight_weiszfeld()).point;
        let q = BranchQuery::from_kernel(0, &k, &d).unwrap();
        assert!((q.u_n / q.m_hat_w - 1.0).abs() < 1e-6);
    }

    #[test]
    fn correlation_matches_textbook() {
        let qs: Vec<BranchQuery> = (0..5)
            .map(|i| BranchQuery {
                query: i,
                m_hat_w: [2.0, 4.0, 5.0, 4.0, 5.0][i],
                separation: (i + 1) as f64,
                weight_ratio: 1.0,
                u_n: 10.0,
            })
            .collect();
        let lb = lower_bound_from_ratio(&qs, 1.0);
        assert!((lb.corr - 6.0 / 60f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn pesin_thresholds() {
        let sys = SystemParams::rossler();
        let tr = crate::dynamics::integrate_rk4(&sys, &[1.0, 1.0, 1.0], 0.05, 3000, 1000).unwrap();
        let rows: Vec<usize> = (0..2000).step_by(50).collect();
        assert_eq!(pesin_filter(&sys, &tr, &rows, 10, Some(0.0)).unwrap().accepted, rows);
        assert!(pesin_filter(&sys, &tr, &rows, 10, Some(f64::INFINITY))
            .unwrap()
            .accepted
            .is_empty());
    }

    #[test]
    fn srb_weight_linearity() {
        let density = vec![1.0, 1.0, 2.0, 1.0];
        let coarea = vec![1.0; 4];
        let w = normalised_ratio(&density, &coarea).unwrap();
        assert!((w[2] / w[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_latent_gives_uniform_weights() {
        // Regular grid in the plane z3 = 0; (z1, z2, z1') has det DF = -1.
        let mut m = RowMatrix::new(3);
        for i in 0..60 {
            for j in 0..60 {
                m.push_row(&[i as f64 * 0.1, j as f64 * 0.1, 0.0]).unwrap();
            }
        }
        let latent = Trajectory::new(1.0, 0.0, m).unwrap();
        let idx = NeighborIndex::new(&latent.states);
        let spec = crate::jacobian::AnalyticEmbedding::M12d1.to_spec();
        let rows: Vec<usize> = (0..60).map(|i| (10 + i / 6) * 60 + 10 + (i * 7) % 40).collect();
        let opts = SrbOptions {
            k_density: 15,
            theiler_w: 0,
        };
        let w = srb_weights(&idx, &latent, &rows, &spec, &SystemParams::rossler(), &opts).unwrap();
        let mean = 1.0 / rows.len() as f64;
        assert!(w.weights.iter().all(|x| (x - mean).abs() < 0.2 * mean));
        assert_eq!(w.capped, 0);
    }
}
