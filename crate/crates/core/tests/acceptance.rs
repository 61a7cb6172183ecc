//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};

use delay_audit::dynamics::{integrate_rk4, SystemParams};
use delay_audit::embedding::{analytic_point, embed_trajectory, EmbeddingSpec, Observable};
use delay_audit::experiments::*;
use delay_audit::jacobian::{AnalyticEmbedding, SingularKind};
use delay_audit::matrix::{dist, RowMatrix};
use delay_audit::neighbors::{NeighborConfig, NeighborIndex};
use delay_audit::stochasticity::{estimate_estar, geometric_median, EmpiricalKernel, WeiszfeldOptions};
use nalgebra::{DMatrix, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn table_ordering() -> Outcome {
    let r = run_table(&TableConfig::default(), &AnalyticEmbedding::TABLE).map_err(|e| e.to_string())?;
    let rho = r.spearman_vs_reference.unwrap();
    let u2 = r.rows[0].estar;
    let u3 = r.rows[9].estar;
    let est: Vec<String> = r.rows.iter().map(|x| format!("{}={:.3}", x.id, x.estar)).collect();
    verdict(
        rho >= 0.9 && u2 <= 0.15 && u3 >= 8.0,
        format!(
            "spearman={rho:.3} (>= 0.9), u2={u2:.3} (<= 0.15), u3={u3:.3} (>= 8); {}",
            est.join(" ")
        ),
    )
}

fn tail_signature() -> Outcome {
    let r = run_table(&TableConfig::default(), &AnalyticEmbedding::RADIUS_TABLE).map_err(|e| e.to_string())?;
    let u2 = r.rows[0].tail_ratio;
    let u3 = r.rows[9].tail_ratio;
    verdict(
        u3 >= 50.0 && u2 <= 5.0,
        format!("u3 q90/median={u3:.1} (>= 50), u2 q90/median={u2:.2} (<= 5)"),
    )
}

fn fd_jacobian(spec: &EmbeddingSpec, sys: &SystemParams, z: &[f64]) -> Matrix3<f64> {
    let h = 1e-5;
    let mut j = Matrix3::zeros();
    for c in 0..3 {
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        zp[c] += h;
        zm[c] -= h;
        let fp = analytic_point(spec, sys, &zp).unwrap();
        let fm = analytic_point(spec, sys, &zm).unwrap();
        for r in 0..3 {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    j
}

fn classification() -> Outcome {
    use SingularKind::*;
    let sys = SystemParams::rossler();
    let expected = [
        (AnalyticEmbedding::U2, Diffeomorphism),
        (AnalyticEmbedding::M12d1, Diffeomorphism),
        (AnalyticEmbedding::M13d1, Diffeomorphism),
        (AnalyticEmbedding::M23d2, Diffeomorphism),
        (AnalyticEmbedding::U1, PureTransverse),
        (AnalyticEmbedding::C12, PureTransverse),
        (AnalyticEmbedding::C13, PureTransverse),
        (AnalyticEmbedding::M23d3, PureTransverse),
        (AnalyticEmbedding::U3, DegenerateFold),
        (AnalyticEmbedding::C23, DegenerateFold),
    ];
    let sample = attractor_sample(&SimulationConfig::rossler(20_000), 400).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut points: Vec<Vec<f64>> = sample.states.iter_rows().step_by(8).map(|r| r.to_vec()).collect();
    for _ in 0..50 {
        points.push((0..3).map(|_| rng.gen_range(-8.0..8.0)).collect());
    }
    let mut problems = Vec::new();
    let (mut worst_det, mut worst_grad) = (0.0f64, 0.0f64);
    for (e, want) in expected {
        let got = e.classify(&sys, &sample, 0.05).map_err(|x| x.to_string())?;
        if got.class != want {
            problems.push(format!("{} classified {:?}", e.id(), got.class));
        }
        let spec = e.to_spec();
        let mut dets = Vec::new();
        for z in &points {
            let d = e.det(&sys, z).unwrap();
            let fd = fd_jacobian(&spec, &sys, z).determinant();
            let jn = fd_jacobian(&spec, &sys, z).norm().powi(3).max(1.0);
            worst_det = worst_det.max((d - fd).abs() / d.abs().max(1e-3 * jn));
            let g = e.grad_det(&sys, z).unwrap();
            let h = 1e-5;
            for c in 0..3 {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[c] += h;
                zm[c] -= h;
                let fd_g = (e.det(&sys, &zp).unwrap() - e.det(&sys, &zm).unwrap()) / (2.0 * h);
                let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
                worst_grad = worst_grad.max((g[c] - fd_g).abs() / gn);
            }
            dets.push(d);
        }
        // Independent structural checks on the sampled determinant field.
        let spread =
            dets.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - dets.iter().cloned().fold(f64::INFINITY, f64::min);
        match want {
            Diffeomorphism => {
                if spread > 1e-9 || dets[0].abs() < 1e-6 {
                    problems.push(format!("{}: det not a nonzero constant", e.id()));
                }
            }
            PureTransverse | DegenerateFold => {
                let w = got.witness.ok_or_else(|| format!("{}: no witness", e.id()))?;
                let d = e.det(&sys, &w).unwrap();
                let g = e.grad_det(&sys, &w).unwrap();
                let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if d.abs() > 1e-9 {
                    problems.push(format!("{}: witness off the singular set", e.id()));
                }
                if (want == DegenerateFold) != (gn < 1e-9) {
                    problems.push(format!("{}: gradient at witness {gn:e}", e.id()));
                }
                if dets.iter().all(|d| *d > 0.0) || dets.iter().all(|d| *d < 0.0) {
                    if want == PureTransverse {
                        problems.push(format!("{}: det never changes sign", e.id()));
                    }
                }
            }
        }
    }
    verdict(
        problems.is_empty() && worst_det <= 1e-4 && worst_grad <= 1e-4,
        format!(
            "10 maps classified, det rel err {worst_det:.1e}, grad rel err {worst_grad:.1e} (<= 1e-4){}",
            if problems.is_empty() {
                String::new()
            } else {
                format!("; {}", problems.join(", "))
            }
        ),
    )
}

fn bounds_pipeline() -> Outcome {
    let r = run_bounds(&BoundsConfig::default()).map_err(|e| e.to_string())?;
    let q = r.upper.q_ub.median;
    verdict(
        r.lower.violation_rate <= 0.05 && r.lower.corr >= 0.9 && (1.0..=1.5).contains(&q) && r.upper.violations == 0,
        format!(
            "accepted {}/{}; violation rate {:.3} (<= 0.05), corr {:.4} (>= 0.9), median Q_UB {:.3} (in [1, 1.5]), U_n < m_w: {}",
            r.accepted, r.base_queries, r.lower.violation_rate, r.lower.corr, q, r.upper.violations
        ),
    )
}

fn ccm_asymmetry() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for m in [3, 6] {
        let mut cfg = CcmExperimentConfig::default();
        cfg.ccm.m = m;
        cfg.ccm.exclusion = (m - 1) * cfg.ccm.tau;
        let pairs = run_ccm(&cfg).map_err(|e| e.to_string())?;
        let last = |v: &Vec<f64>| *v.last().unwrap();
        let p12 = &pairs[0].result;
        let p23 = &pairs[1].result;
        let gap = (last(&p23.rho_xy) - last(&p23.rho_yx)).abs();
        let both = last(&p12.rho_xy).min(last(&p12.rho_yx));
        if m == 3 {
            ok &= both >= 0.9;
        }
        ok &= gap >= 0.2;
        details.push(format!("m={m}: z1<->z2 min rho {both:.3}, z2<->z3 gap {gap:.3}"));
    }
    verdict(ok, format!("{} (gap >= 0.2, rho >= 0.9)", details.join("; ")))
}

fn edmd_ordering() -> Outcome {
    let cells = run_edmd(&EdmdExperimentConfig::default()).map_err(|e| e.to_string())?;
    let (z1, z3): (Vec<_>, Vec<_>) = cells.iter().partition(|c| c.observable == "z1");
    let mut bad = Vec::new();
    for a in &z1 {
        let b = z3.iter().find(|b| b.m == a.m && b.tau == a.tau).unwrap();
        for (i, h) in a.horizons.iter().enumerate() {
            if !(a.nrmse[i] < b.nrmse[i]) {
                bad.push(format!("m={} tau={} h={h}", a.m, a.tau));
            }
        }
    }
    verdict(
        bad.is_empty(),
        format!(
            "{} grid cells x 4 horizons, z1 below z3 except at [{}]",
            z1.len(),
            bad.join(", ")
        ),
    )
}

fn pendulum_ordering() -> Outcome {
    let curves = run_pendulum(&PendulumConfig::default()).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut details = Vec::new();
    for i in 0..2 {
        let (a, b) = (&curves[2 * i], &curves[2 * i + 1]);
        let gaps: Vec<f64> = a.estar.iter().zip(&b.estar).map(|(x, y)| y - x).collect();
        let below = gaps.iter().all(|g| *g > 0.0);
        let widening = gaps.windows(2).all(|w| w[1] >= w[0]);
        ok &= below && widening;
        let g: Vec<String> = gaps.iter().map(|g| format!("{g:.2}")).collect();
        details.push(format!("{}: sin-minus-raw gaps [{}]", a.angle, g.join(", ")));
    }
    verdict(ok, format!("{} (all > 0 and non-decreasing)", details.join("; ")))
}

fn transform_benefit() -> Outcome {
    let series = burst_surrogate(5000, 10).map_err(|e| e.to_string())?;
    let cells = run_transform_grid(&series, &TransformGridConfig::default()).map_err(|e| e.to_string())?;
    let worst = cells.iter().map(|c| c.improvement_pct).fold(f64::INFINITY, f64::min);
    verdict(
        cells.iter().all(|c| c.improvement_pct > 0.0),
        format!("{} grid cells, smallest improvement {worst:.1}% (> 0)", cells.len()),
    )
}

fn grid_oracle(k: &EmpiricalKernel) -> f64 {
    let m = k.dim();
    let cost = |y: &[f64]| -> f64 { k.points.iter_rows().zip(&k.weights).map(|(p, w)| w * dist(p, y)).sum() };
    let mut best: Vec<f64> = k.weighted_mean();
    let mut best_cost = cost(&best);
    for p in k.points.iter_rows() {
        let c = cost(p);
        if c < best_cost {
            best_cost = c;
            best = p.to_vec();
        }
    }
    let mut half = k.diameter().max(1e-9);
    let steps = 10i32;
    for _ in 0..60 {
        let centre = best.clone();
        let total = (2 * steps + 1).pow(m as u32);
        for idx in 0..total {
            let mut y = centre.clone();
            let mut r = idx;
            for c in 0..m {
                let o = (r % (2 * steps + 1)) as i32 - steps;
                r /= 2 * steps + 1;
                y[c] += half * o as f64 / steps as f64;
            }
            let c = cost(&y);
            if c < best_cost {
                best_cost = c;
                best = y;
            }
        }
        half *= 0.5;
    }
    best_cost
}

fn rotation(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
    a.qr().q()
}

fn rossler_recon(samples: usize) -> delay_audit::embedding::ReconstructedStates {
    let sim = SimulationConfig::rossler(samples);
    let tr = sim.simulate().unwrap();
    embed_trajectory(&tr, &EmbeddingSpec::delay(Observable::Coord(0), 3, 10), None).unwrap()
}

fn estimator_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let opts = WeiszfeldOptions::default();
    let mut notes = Vec::new();
    let mut ok = true;

    let mut worst = 0.0f64;
    for trial in 0..50 {
        let m = 1 + trial % 3;
        let k = rng.gen_range(2..=10);
        let mut pts = RowMatrix::new(m);
        for _ in 0..k {
            pts.push_row(&(0..m).map(|_| rng.gen_range(-5.0..5.0)).collect::<Vec<_>>())
                .unwrap();
        }
        let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let ker = EmpiricalKernel::weighted(pts, w).unwrap();
        let g = geometric_median(&ker, &opts).m_hat;
        let o = grid_oracle(&ker);
        worst = worst.max((g - o).abs() / o.max(1e-12));
    }
    ok &= worst <= 1e-3;
    notes.push(format!("oracle rel err {worst:.1e}"));

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let pts: Vec<[f64; 3]> = (0..30)
            .map(|_| {
                [
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                ]
            })
            .collect();
        let base = geometric_median(
            &EmpiricalKernel::uniform(RowMatrix::from_rows(&pts).unwrap()).unwrap(),
            &opts,
        )
        .m_hat;
        let rot = rotation(&mut rng);
        let shift = [
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-50.0..50.0),
        ];
        let alpha = rng.gen_range(0.1..10.0);
        let moved: Vec<Vec<f64>> = pts
            .iter()
            .map(|p| {
                (0..3)
                    .map(|r| (0..3).map(|c| rot[(r, c)] * p[c]).sum::<f64>() + shift[r])
                    .collect()
            })
            .collect();
        let scaled: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|v| alpha * v).collect()).collect();
        let a = geometric_median(
            &EmpiricalKernel::uniform(RowMatrix::from_rows(&moved).unwrap()).unwrap(),
            &opts,
        )
        .m_hat;
        let s = geometric_median(
            &EmpiricalKernel::uniform(RowMatrix::from_rows(&scaled).unwrap()).unwrap(),
            &opts,
        )
        .m_hat;
        worst = worst
            .max((a - base).abs() / base)
            .max((s - alpha * base).abs() / (alpha * base));
    }
    ok &= worst <= 1e-9;
    notes.push(format!("invariance rel err {worst:.1e}"));

    let delta = 2.5;
    let mut worst = 0.0f64;
    for i in 1..20 {
        let p = i as f64 / 20.0;
        let ker = EmpiricalKernel::weighted(
            RowMatrix::from_rows(&[[1.0, -2.0], [1.0 + 0.6 * delta, -2.0 + 0.8 * delta]]).unwrap(),
            vec![p, 1.0 - p],
        )
        .unwrap();
        let g = geometric_median(&ker, &opts).m_hat;
        worst = worst.max((g - p.min(1.0 - p) * delta).abs());
    }
    ok &= worst <= 1e-12 * delta;
    notes.push(format!("two-atom err {worst:.1e}"));

    let recon = rossler_recon(6000);
    let kd = NeighborIndex::kd_tree(&recon.states);
    let bf = NeighborIndex::brute_force(&recon.states);
    let cfg = NeighborConfig::new(20, 20);
    let qs = delay_audit::stochasticity::sample_queries(recon.len(), 200, 5).unwrap();
    let same = qs
        .iter()
        .all(|&q| kd.knn_theiler(q, &cfg).unwrap() == bf.knn_theiler(q, &cfg).unwrap());
    ok &= same;
    notes.push(format!("kd-tree == brute force on 200 queries: {same}"));

    let sys = SystemParams::rossler();
    let err = |dt: f64| {
        let steps = (2.0 / dt).round() as usize;
        let coarse = integrate_rk4(&sys, &[1.0, 1.0, 1.0], dt, steps + 1, steps).unwrap();
        let fine = integrate_rk4(&sys, &[1.0, 1.0, 1.0], dt / 64.0, 64 * steps + 1, 64 * steps).unwrap();
        dist(coarse.states.row(0), fine.states.row(0))
    };
    let ratio = err(0.04) / err(0.02);
    ok &= ratio >= 14.0 && ratio <= 18.0;
    notes.push(format!("RK4 halving ratio {ratio:.2}"));

    let run = |threads: usize| -> String {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let e = estimate_estar(&recon, 20, &NeighborConfig::new(50, 20), 300, 42).unwrap();
            let mut tcfg = TableConfig::default();
            tcfg.n_queries = 100;
            let t = run_table(&tcfg, &[AnalyticEmbedding::U3, AnalyticEmbedding::U1]).unwrap();
            let b = run_bounds(&BoundsConfig::default()).unwrap();
            let c = run_ccm(&CcmExperimentConfig::default()).unwrap();
            serde_json::to_string(&(e, t, b, c)).unwrap()
        })
    };
    let one = run(1);
    let reproducible = [2, 3, 8].iter().all(|&t| run(t) == one);
    ok &= reproducible;
    notes.push(format!("bit-identical reports on 1/2/3/8 threads: {reproducible}"));

    verdict(ok, notes.join(", "))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 table ordering", table_ordering),
        ("2 radius tail signature", tail_signature),
        ("3 singular-set classification", classification),
        ("4 bounds pipeline", bounds_pipeline),
        ("5 cross-map asymmetry", ccm_asymmetry),
        ("6 forecast ordering", edmd_ordering),
        ("7 pendulum ordering", pendulum_ordering),
        ("8 log transform benefit", transform_benefit),
        ("9 estimator properties", estimator_properties),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let t = std::time::Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match out {
            Ok(d) => println!("PASS criterion {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {name}: {d} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
