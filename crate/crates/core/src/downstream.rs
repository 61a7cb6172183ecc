//! Downstream consumers of a reconstruction: convergent cross mapping and
//! EDMD rollout forecasting.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{delay_embed, ReconstructedStates};
use crate::error::{Error, Result};
use crate::matrix::RowMatrix;
use crate::neighbors::NeighborIndex;
use crate::par_map;
use crate::stats::{mean, pearson, pop_std};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcmOptions {
    pub m: usize,
    pub tau: usize,
    pub library_sizes: Vec<usize>,
    /// Random libraries drawn per size; correlations are averaged.
    pub replicates: usize,
    /// Library rows closer than this many samples to the target are skipped.
    pub exclusion: usize,
    /// At most this many prediction rows (seeded subsample).
    pub max_predictions: usize,
    pub seed: u64,
}

impl CcmOptions {
    pub fn new(m: usize, tau: usize, library_sizes: Vec<usize>) -> Self {
        Self {
            m,
            tau,
            library_sizes,
            replicates: 5,
            exclusion: (m.max(2) - 1) * tau,
            max_predictions: 1000,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcmResult {
    pub library_sizes: Vec<usize>,
    /// Shadow manifold of the first series predicting the second.
    pub rho_xy: Vec<f64>,
    /// Shadow manifold of the second series predicting the first.
    pub rho_yx: Vec<f64>,
}

/// Simplex cross mapping in both directions.
pub fn ccm(series_a: &[f64], series_b: &[f64], opts: &CcmOptions) -> Result<CcmResult> {
    if series_a.len() != series_b.len() {
        return Err(Error::DimensionMismatch {
            expected: series_a.len(),
            got: series_b.len(),
        });
    }
    let lmax = *opts
        .library_sizes
        .iter()
        .max()
        .ok_or_else(|| Error::InvalidParameter("no library sizes".into()))?;
    let span = (opts.m.max(1) - 1) * opts.tau;
    if series_a.len() <= lmax + span {
        return Err(Error::SeriesTooShort {
            needed: lmax + span,
            have: series_a.len(),
        });
    }
    if opts.replicates == 0 || opts.library_sizes.iter().any(|&l| l < opts.m + 2) {
        return Err(Error::InvalidParameter(
            "library sizes must exceed m + 1 and replicates be positive".into(),
        ));
    }
    let rho_xy = cross_map(series_a, series_b, opts, 0)?;
    let rho_yx = cross_map(series_b, series_a, opts, 1)?;
    Ok(CcmResult {
        library_sizes: opts.library_sizes.clone(),
        rho_xy,
        rho_yx,
    })
}

/// Correlation of `target` predicted from the delay manifold of `source`.
fn cross_map(source: &[f64], target: &[f64], opts: &CcmOptions, stream: u64) -> Result<Vec<f64>> {
    let emb = delay_embed(source, opts.m, opts.tau)?;
    let off = emb.sample_offset;
    let n = emb.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    let preds: Vec<usize> = if n <= opts.max_predictions {
        (0..n).collect()
    } else {
        let mut v = sample(&mut rng, n, opts.max_predictions).into_vec();
        v.sort_unstable();
        v
    };
    let truth: Vec<f64> = preds.iter().map(|&p| target[p + off]).collect();
    let kn = opts.m + 1;
    let mut out = Vec::with_capacity(opts.library_sizes.len());
    for &l in &opts.library_sizes {
        let mut acc = 0.0;
        for _ in 0..opts.replicates {
            let mut lib = sample(&mut rng, n, l).into_vec();
            lib.sort_unstable();
            let index = NeighborIndex::from_subset(&emb.states, &lib);
            let est: Vec<f64> = par_map(&preds, |&p| {
                let nb = index.knn_filtered(emb.row(p), kn, |t| t.abs_diff(p) > opts.exclusion);
                simplex_weighted(&nb, |t| target[t + off])
            });
            let r = pearson(&est, &truth);
            acc += if r.is_nan() { 0.0 } else { r };
        }
        out.push(acc / opts.replicates as f64);
    }
    Ok(out)
}

/// Exponentially weighted average `sum w_i y_i / sum w_i`, `w_i = exp(-d_i / d_1)`.
fn simplex_weighted<F: Fn(usize) -> f64>(nb: &[crate::neighbors::Neighbor], value: F) -> f64 {
    if nb.is_empty() {
        return f64::NAN;
    }
    let d1 = nb[0].dist;
    let (mut num, mut den) = (0.0, 0.0);
    for x in nb {
        let w = if d1 > 0.0 {
            (-x.dist / d1).exp()
        } else if x.dist == 0.0 {
            1.0
        } else {
            0.0
        };
        num += w * value(x.index);
        den += w;
    }
    num / den
}

/// Exponents of all monomials of total degree at most `degree` in `m`
/// variables, ordered by degree then lexicographically.
pub fn monomial_exponents(m: usize, degree: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    for d in 0..=degree {
        let mut cur = vec![0u8; m];
        fill(&mut out, &mut cur, 0, d);
    }
    out
}

fn fill(out: &mut Vec<Vec<u8>>, cur: &mut Vec<u8>, pos: usize, left: usize) {
    if pos + 1 == cur.len() || cur.is_empty() {
        if let Some(last) = cur.last_mut() {
            *last = left as u8;
        }
        out.push(cur.clone());
        if let Some(last) = cur.last_mut() {
            *last = 0;
        }
        return;
    }
    for e in (0..=left).rev() {
        cur[pos] = e as u8;
        fill(out, cur, pos + 1, left - e);
    }
    cur[pos] = 0;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdmdOptions {
    pub degree: usize,
    pub ridge_lambda: f64,
    /// Centre and scale each coordinate before lifting.
    pub standardize: bool,
}

impl Default for EdmdOptions {
    fn default() -> Self {
        Self {
            degree: 3,
            ridge_lambda: 1e-6,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdmdModel {
    pub dictionary: Vec<Vec<u8>>,
    /// Row-convention operator: `psi(x_{t+1}) ~ psi(x_t) K`.
    pub koopman: Vec<f64>,
    pub dim: usize,
    pub ridge_lambda: f64,
    /// Set when the requested ridge had to be increased.
    pub ridge_increased: bool,
    /// Dictionary positions of the degree-1 monomials, one per coordinate.
    pub state_recovery: Vec<usize>,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl EdmdModel {
    pub fn size(&self) -> usize {
        self.dictionary.len()
    }

    pub fn koopman_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.size(), self.size(), &self.koopman)
    }

    pub fn lift(&self, x: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = x
            .iter()
            .zip(&self.center)
            .zip(&self.scale)
            .map(|((v, c), s)| (v - c) / s)
            .collect();
        lift_with(&self.dictionary, &z)
    }

    pub fn recover(&self, psi: &[f64]) -> Vec<f64> {
        self.state_recovery
            .iter()
            .enumerate()
            .map(|(i, &j)| psi[j] * self.scale[i] + self.center[i])
            .collect()
    }

    /// Linear part as a column-convention matrix, comparable to `A` in `x' = A x`.
    pub fn linear_block(&self) -> DMatrix<f64> {
        let k = self.koopman_matrix();
        let d = self.dim;
        DMatrix::from_fn(d, d, |i, j| k[(self.state_recovery[j], self.state_recovery[i])])
    }
}

fn lift_with(dict: &[Vec<u8>], z: &[f64]) -> Vec<f64> {
    dict.iter()
        .map(|e| e.iter().zip(z).map(|(&p, v)| v.powi(p as i32)).product())
        .collect()
}

/// Ridge-regularised least squares for the lifted one-step map. Pairs
/// `(x_t, x_{t+1})` come from consecutive rows of each segment.
pub fn edmd_fit(recon: &ReconstructedStates, opts: &EdmdOptions) -> Result<EdmdModel> {
    edmd_fit_segments(&[&recon.states], opts)
}

pub fn edmd_fit_segments(segments: &[&RowMatrix], opts: &EdmdOptions) -> Result<EdmdModel> {
    let dim = segments
        .first()
        .map(|s| s.width())
        .ok_or_else(|| Error::InsufficientData("no training data".into()))?;
    let dictionary = monomial_exponents(dim, opts.degree);
    let dsize = dictionary.len();
    let pairs: usize = segments.iter().map(|s| s.rows().saturating_sub(1)).sum();
    if pairs < dsize + 1 {
        return Err(Error::InsufficientData(format!(
            "EDMD needs at least {} transitions for {dsize} features, got {pairs}",
            dsize + 1
        )));
    }
    let (center, scale) = if opts.standardize {
        let mut c = vec![0.0; dim];
        let mut s = vec![0.0; dim];
        for j in 0..dim {
            let col: Vec<f64> = segments.iter().flat_map(|m| m.column(j)).collect();
            c[j] = mean(&col);
            let sd = pop_std(&col);
            s[j] = if sd > 0.0 { sd } else { 1.0 };
        }
        (c, s)
    } else {
        (vec![0.0; dim], vec![1.0; dim])
    };
    let state_recovery: Vec<usize> = (0..dim)
        .map(|i| {
            dictionary
                .iter()
                .position(|e| e.iter().enumerate().all(|(j, &p)| p == if j == i { 1 } else { 0 }))
                .ok_or_else(|| Error::InvalidParameter("dictionary lacks linear monomials".into()))
        })
        .collect::<Result<_>>()?;
    let mut gram = DMatrix::<f64>::zeros(dsize, dsize);
    let mut cross = DMatrix::<f64>::zeros(dsize, dsize);
    for seg in segments {
        let lifted: Vec<Vec<f64>> = seg
            .iter_rows()
            .map(|x| {
                let z: Vec<f64> = x
                    .iter()
                    .zip(&center)
                    .zip(&scale)
                    .map(|((v, c), s)| (v - c) / s)
                    .collect();
                lift_with(&dictionary, &z)
            })
            .collect();
        for t in 0..lifted.len().saturating_sub(1) {
            let (a, b) = (&lifted[t], &lifted[t + 1]);
            for i in 0..dsize {
                let ai = a[i];
                for j in 0..dsize {
                    gram[(i, j)] += ai * a[j];
                    cross[(i, j)] += ai * b[j];
                }
            }
        }
    }
    if !gram.iter().all(|v| v.is_finite()) {
        return Err(Error::Malformed("non-finite lifted features".into()));
    }
    let mut lambda = opts.ridge_lambda.max(0.0);
    let mut increased = false;
    let mut attempts = 0;
    let koopman = loop {
        let mut g = gram.clone();
        for i in 0..dsize {
            g[(i, i)] += lambda;
        }
        let ok = g
            .cholesky()
            .map(|c| c.solve(&cross))
            .filter(|k| k.iter().all(|v| v.is_finite()));
        match ok {
            Some(k) => break k,
            None => {
                attempts += 1;
                if attempts > 30 {
                    return Err(Error::InsufficientData("normal equations stay singular".into()));
                }
                increased = true;
                lambda = if lambda > 0.0 { lambda * 10.0 } else { 1e-12 };
                log::warn!("EDMD normal matrix not positive definite; ridge raised to {lambda:e}");
            }
        }
    };
    let mut flat = Vec::with_capacity(dsize * dsize);
    for i in 0..dsize {
        for j in 0..dsize {
            flat.push(koopman[(i, j)]);
        }
    }
    Ok(EdmdModel {
        dictionary,
        koopman: flat,
        dim,
        ridge_lambda: lambda,
        ridge_increased: increased,
        state_recovery,
        center,
        scale,
    })
}

/// In-sample normalised one-step residual, averaged over coordinates.
pub fn one_step_nrmse(model: &EdmdModel, states: &RowMatrix) -> Result<f64> {
    Ok(edmd_rollout_nrmse(model, states, &[1], 1)?[0])
}

/// Normalised rollout error per horizon: `sqrt(MSE_c) / sigma_c` averaged
/// over coordinates, starts every `stride` rows.
pub fn edmd_rollout_nrmse(model: &EdmdModel, test: &RowMatrix, horizons: &[usize], stride: usize) -> Result<Vec<f64>> {
    if test.width() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            got: test.width(),
        });
    }
    let hmax = horizons.iter().copied().max().unwrap_or(0);
    if test.rows() <= hmax {
        return Err(Error::SeriesTooShort {
            needed: hmax,
            have: test.rows(),
        });
    }
    let sigma: Vec<f64> = (0..model.dim).map(|j| pop_std(&test.column(j))).collect();
    let k = model.koopman_matrix();
    let starts: Vec<usize> = (0..test.rows() - hmax).step_by(stride.max(1)).collect();
    let d = model.size();
    // Squared errors per start, horizon and coordinate.
    let errs: Vec<Vec<Vec<f64>>> = par_map(&starts, |&s| {
        let mut psi = nalgebra::RowDVector::from_vec(model.lift(test.row(s)));
        let mut per_h = vec![vec![0.0; model.dim]; horizons.len()];
        let mut step = 0;
        for h in 0..=hmax {
            if h > step {
                psi = &psi * &k;
                step = h;
            }
            for (hi, &hh) in horizons.iter().enumerate() {
                if hh == h {
                    let x = model.recover(psi.as_slice());
                    for j in 0..model.dim {
                        let e = x[j] - test.row(s + h)[j];
                        per_h[hi][j] = e * e;
                    }
                }
            }
        }
        debug_assert_eq!(psi.len(), d);
        per_h
    });
    let mut out = Vec::with_capacity(horizons.len());
    for hi in 0..horizons.len() {
        let mut acc = 0.0;
        for j in 0..model.dim {
            let mse = starts.iter().enumerate().map(|(si, _)| errs[si][hi][j]).sum::<f64>() / starts.len() as f64;
            acc += if sigma[j] > 0.0 {
                mse.sqrt() / sigma[j]
            } else {
                mse.sqrt()
            };
        }
        out.push(acc / model.dim as f64);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate_rk4, SystemParams};
    use crate::embedding::{EmbeddingSpec, Observable};
    use rand::Rng;

    #[test]
    fn dictionary_size() {
        for m in 1..8 {
            let d = monomial_exponents(m, 3);
            let want = (m + 3) * (m + 2) * (m + 1) / 6;
            assert_eq!(d.len(), want);
            let mut sorted = d.clone();
            sorted.dedup();
            assert_eq!(sorted.len(), want);
        }
        assert_eq!(monomial_exponents(2, 1), vec![vec![0, 0], vec![1, 0], vec![0, 1]]);
    }

    fn linear_data(seed: u64) -> (DMatrix<f64>, Vec<RowMatrix>) {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, -0.2, 0.1, 0.95]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut segs = Vec::new();
        for _ in 0..20 {
            let mut x = nalgebra::DVector::from_vec(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            let mut m = RowMatrix::new(2);
            for _ in 0..30 {
                m.push_row(x.as_slice()).unwrap();
                x = &a * x;
            }
            segs.push(m);
        }
        (a, segs)
    }

    #[test]
    fn recovers_linear_map() {
        let (a, segs) = linear_data(1);
        let refs: Vec<&RowMatrix> = segs.iter().collect();
        let opts = EdmdOptions {
            degree: 3,
            ridge_lambda: 1e-10,
            standardize: false,
        };
        let model = edmd_fit_segments(&refs, &opts).unwrap();
        let lb = model.linear_block();
        for i in 0..2 {
            for j in 0..2 {
                assert!((lb[(i, j)] - a[(i, j)]).abs() < 1e-6, "{lb} vs {a}");
            }
        }
        let err = edmd_rollout_nrmse(&model, &segs[3], &[0, 1, 5, 10], 1).unwrap();
        assert_eq!(err[0], 0.0);
        assert!(err.iter().all(|e| *e < 1e-6), "{err:?}");
    }

    #[test]
    fn constant_data_keeps_constant_feature() {
        let m = RowMatrix::from_rows(&vec![[2.0, -1.0]; 50]).unwrap();
        let model = edmd_fit_segments(
            &[&m],
            &EdmdOptions {
                standardize: false,
                ..Default::default()
            },
        )
        .unwrap();
        let psi = model.lift(&[2.0, -1.0]);
        let k = model.koopman_matrix();
        let next = nalgebra::RowDVector::from_vec(psi.clone()) * &k;
        assert!((next[0] - 1.0).abs() < 1e-4);
        let x = model.recover(next.as_slice());
        assert!((x[0] - 2.0).abs() < 1e-4 && (x[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn large_ridge_shrinks_operator() {
        let (_, segs) = linear_data(2);
        let refs: Vec<&RowMatrix> = segs.iter().collect();
        let norm = |l: f64| {
            let m = edmd_fit_segments(
                &refs,
                &EdmdOptions {
                    ridge_lambda: l,
                    ..Default::default()
                },
            )
            .unwrap();
            m.koopman.iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        let (a, b, c) = (norm(1e-6), norm(1e3), norm(1e9));
        assert!(b < a && c < b && c < 1e-3, "{a} {b} {c}");
    }

    #[test]
    fn rossler_one_step_residual() {
        let sys = SystemParams::rossler();
        let tr = integrate_rk4(&sys, &[1.0, 1.0, 1.0], 0.01, 30_000, 10_000).unwrap();
        let spec = EmbeddingSpec::delay(Observable::Coord(0), 3, 10);
        let r = crate::embedding::embed_trajectory(&tr, &spec, None).unwrap();
        let model = edmd_fit(&r, &EdmdOptions::default()).unwrap();
        assert!(one_step_nrmse(&model, &r.states).unwrap() < 0.1);
    }

    #[test]
    fn ccm_self_map_and_reproducible() {
        let sys = SystemParams::rossler();
        let tr = integrate_rk4(&sys, &[1.0, 1.0, 1.0], 0.1, 5000, 1000).unwrap();
        let x = tr.coordinate(0);
        let opts = CcmOptions::new(3, 2, vec![50, 400, 2000]);
        let r = ccm(&x, &x, &opts).unwrap();
        assert!(*r.rho_xy.last().unwrap() >= 0.99);
        assert_eq!(r, ccm(&x, &x, &opts).unwrap());
        assert!(r.rho_xy.iter().chain(&r.rho_yx).all(|v| (-1.0..=1.0).contains(v)));
        assert!(matches!(
            ccm(&x[..100], &x[..100], &opts),
            Err(Error::SeriesTooShort { .. })
        ));
    }
}
