//! Benchmark flows, a fixed-step RK4 integrator, closed-form Lie derivatives
//! for the Rössler system and finite-time tangent growth.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::RowMatrix;

/// Physical constants of the two-rod pendulum. Angles are measured from the
/// vertical through the pivot, with the potential `(m1 y1 + m2 y2) g` where
/// `y = a cos(theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub a1: f64,
    pub a2: f64,
    pub i1: f64,
    pub i2: f64,
    pub g: f64,
}

impl Default for PendulumParams {
    /// Uniform unit rods.
    fn default() -> Self {
        Self {
            m1: 1.0,
            m2: 1.0,
            l1: 1.0,
            l2: 1.0,
            a1: 0.5,
            a2: 0.5,
            i1: 1.0 / 12.0,
            i2: 1.0 / 12.0,
            g: 9.81,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "snake_case")]
pub enum SystemParams {
    Rossler {
        a: f64,
        b: f64,
        c: f64,
    },
    Lorenz63 {
        sigma: f64,
        rho: f64,
        beta: f64,
    },
    /// State `(theta1, theta2, omega1, omega2)`.
    DoublePendulum(PendulumParams),
    /// `dz/dt = -rate * z` in one dimension.
    LinearTest {
        rate: f64,
    },
}

impl SystemParams {
    pub fn rossler() -> Self {
        SystemParams::Rossler { a: 0.2, b: 0.2, c: 5.7 }
    }

    pub fn lorenz63() -> Self {
        SystemParams::Lorenz63 {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
        }
    }

    pub fn double_pendulum() -> Self {
        SystemParams::DoublePendulum(PendulumParams::default())
    }

    pub fn linear_test(rate: f64) -> Self {
        SystemParams::LinearTest { rate }
    }

    /// Build from a system name and a map of overrides; unknown keys are rejected.
    pub fn from_named(system: &str, overrides: &BTreeMap<String, f64>) -> Result<Self> {
        let mut p = match system {
            "rossler" => Self::rossler(),
            "lorenz63" | "lorenz" => Self::lorenz63(),
            "double_pendulum" | "pendulum" => Self::double_pendulum(),
            "linear_test" | "linear" => Self::linear_test(1.0),
            other => return Err(Error::InvalidParameter(format!("unknown system '{other}'"))),
        };
        for (k, &v) in overrides {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("parameter {k} is not finite")));
            }
            let slot: Option<&mut f64> = match (&mut p, k.as_str()) {
                (SystemParams::Rossler { a, .. }, "a") => Some(a),
                (SystemParams::Rossler { b, .. }, "b") => Some(b),
                (SystemParams::Rossler { c, .. }, "c") => Some(c),
                (SystemParams::Lorenz63 { sigma, .. }, "sigma") => Some(sigma),
                (SystemParams::Lorenz63 { rho, .. }, "rho") => Some(rho),
                (SystemParams::Lorenz63 { beta, .. }, "beta") => Some(beta),
                (SystemParams::LinearTest { rate }, "rate") => Some(rate),
                (SystemParams::DoublePendulum(pp), name) => match name {
                    "m1" => Some(&mut pp.m1),
                    "m2" => Some(&mut pp.m2),
                    "l1" => Some(&mut pp.l1),
                    "l2" => Some(&mut pp.l2),
                    "a1" => Some(&mut pp.a1),
                    "a2" => Some(&mut pp.a2),
                    "I1" | "i1" => Some(&mut pp.i1),
                    "I2" | "i2" => Some(&mut pp.i2),
                    "g" => Some(&mut pp.g),
                    _ => None,
                },
                _ => None,
            };
            match slot {
                Some(s) => *s = v,
                None => {
                    return Err(Error::InvalidParameter(format!(
                        "parameter '{k}' does not apply to {system}"
                    )))
                }
            }
        }
        Ok(p)
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemParams::Rossler { .. } => "rossler",
            SystemParams::Lorenz63 { .. } => "lorenz63",
            SystemParams::DoublePendulum(_) => "double_pendulum",
            SystemParams::LinearTest { .. } => "linear_test",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SystemParams::Rossler { .. } | SystemParams::Lorenz63 { .. } => 3,
            SystemParams::DoublePendulum(_) => 4,
            SystemParams::LinearTest { .. } => 1,
        }
    }

    /// A generic starting point on or near the basin of the attractor.
    pub fn default_initial_state(&self) -> Vec<f64> {
        match self {
            SystemParams::Rossler { .. } => vec![1.0, 1.0, 1.0],
            SystemParams::Lorenz63 { .. } => vec![1.0, 1.0, 1.0],
            SystemParams::DoublePendulum(_) => vec![2.0, 2.5, 0.0, 0.0],
            SystemParams::LinearTest { .. } => vec![1.0],
        }
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    pub fn vector_field(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z.len())?;
        let mut out = vec![0.0; z.len()];
        self.eval_into(z, &mut out)?;
        Ok(out)
    }

    /// Evaluate the field into `out` without allocating. Dimensions must already match.
    pub fn eval_into(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        match *self {
            SystemParams::Rossler { a, b, c } => {
                out[0] = -z[1] - z[2];
                out[1] = z[0] + a * z[1];
                out[2] = b + z[2] * (z[0] - c);
            }
            SystemParams::Lorenz63 { sigma, rho, beta } => {
                out[0] = sigma * (z[1] - z[0]);
                out[1] = z[0] * (rho - z[2]) - z[1];
                out[2] = z[0] * z[1] - beta * z[2];
            }
            SystemParams::LinearTest { rate } => {
                out[0] = -rate * z[0];
            }
            SystemParams::DoublePendulum(p) => {
                let (acc1, acc2) = pendulum_accelerations(&p, z)?;
                out[0] = z[2];
                out[1] = z[3];
                out[2] = acc1;
                out[3] = acc2;
            }
        }
        Ok(())
    }

    /// Jacobian of the vector field. Closed form for the polynomial systems,
    /// central differences for the pendulum.
    pub fn jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(z.len())?;
        let d = self.dim();
        Ok(match *self {
            SystemParams::Rossler { a, c, .. } => {
                DMatrix::from_row_slice(3, 3, &[0.0, -1.0, -1.0, 1.0, a, 0.0, z[2], 0.0, z[0] - c])
            }
            SystemParams::Lorenz63 { sigma, rho, beta } => {
                DMatrix::from_row_slice(3, 3, &[-sigma, sigma, 0.0, rho - z[2], -1.0, -z[0], z[1], z[0], -beta])
            }
            SystemParams::LinearTest { rate } => DMatrix::from_element(1, 1, -rate),
            SystemParams::DoublePendulum(_) => {
                let mut jac = DMatrix::zeros(d, d);
                let mut zp = z.to_vec();
                let mut fp = vec![0.0; d];
                let mut fm = vec![0.0; d];
                for j in 0..d {
                    let h = 1e-6 * (1.0 + z[j].abs());
                    zp[j] = z[j] + h;
                    self.eval_into(&zp, &mut fp)?;
                    zp[j] = z[j] - h;
                    self.eval_into(&zp, &mut fm)?;
                    zp[j] = z[j];
                    for i in 0..d {
                        jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
                    }
                }
                jac
            }
        })
    }
}

/// Solve the 2x2 Euler-Lagrange mass-matrix system for the angular accelerations.
fn pendulum_accelerations(p: &PendulumParams, z: &[f64]) -> Result<(f64, f64)> {
    let (t1, t2, w1, w2) = (z[0], z[1], z[2], z[3]);
    let ma = p.m1 * p.a1 * p.a1 + p.m2 * p.l1 * p.l1 + p.i1;
    let mb = p.m2 * p.a2 * p.a2 + p.i2;
    let mc = p.m2 * p.l1 * p.a2;
    let delta = t1 - t2;
    let (sd, cd) = delta.sin_cos();
    let m12 = mc * cd;
    let det = ma * mb - m12 * m12;
    if det.abs() < 1e-14 * (ma * mb).abs().max(1e-300) {
        return Err(Error::SingularMassMatrix(z.to_vec()));
    }
    let r1 = -mc * sd * w2 * w2 + p.g * (p.m1 * p.a1 + p.m2 * p.l1) * t1.sin();
    let r2 = mc * sd * w1 * w1 + p.g * p.m2 * p.a2 * t2.sin();
    Ok(((mb * r1 - m12 * r2) / det, (ma * r2 - m12 * r1) / det))
}

/// Uniformly sampled latent states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub t0: f64,
    pub states: RowMatrix,
}

impl Trajectory {
    pub fn new(dt: f64, t0: f64, states: RowMatrix) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InsufficientData("empty trajectory".into()));
        }
        if !states.all_finite() {
            return Err(Error::Malformed("non-finite trajectory entry".into()));
        }
        Ok(Self { dt, t0, states })
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.width()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.states.column(j)
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            dt: self.dt,
            t0: self.time(start),
            states: self.states.slice_rows(start, end),
        }
    }
}

/// One classical RK4 step, in place. `k` is scratch of length `4 * d`, `tmp` of length `d`.
fn rk4_step(sys: &SystemParams, z: &mut [f64], dt: f64, k: &mut [f64], tmp: &mut [f64]) -> Result<()> {
    let d = z.len();
    let (k1, rest) = k.split_at_mut(d);
    let (k2, rest) = rest.split_at_mut(d);
    let (k3, k4) = rest.split_at_mut(d);
    sys.eval_into(z, k1)?;
    for i in 0..d {
        tmp[i] = z[i] + 0.5 * dt * k1[i];
    }
    sys.eval_into(tmp, k2)?;
    for i in 0..d {
        tmp[i] = z[i] + 0.5 * dt * k2[i];
    }
    sys.eval_into(tmp, k3)?;
    for i in 0..d {
        tmp[i] = z[i] + dt * k3[i];
    }
    sys.eval_into(tmp, k4)?;
    for i in 0..d {
        z[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}

/// Fixed-step RK4. Sample 0 is `z0`; `steps` samples are produced in total and
/// the first `discard` are dropped, so the result holds `steps - discard` rows.
pub fn integrate_rk4(sys: &SystemParams, z0: &[f64], dt: f64, steps: usize, discard: usize) -> Result<Trajectory> {
    sys.check_dim(z0.len())?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if steps == 0 {
        return Err(Error::InvalidParameter("steps must be at least 1".into()));
    }
    if discard >= steps {
        return Err(Error::InvalidParameter(format!(
            "discard ({discard}) must be smaller than steps ({steps})"
        )));
    }
    if z0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step: 0 });
    }
    let d = z0.len();
    let mut states = RowMatrix::with_capacity(d, steps - discard);
    let mut z = z0.to_vec();
    let mut k = vec![0.0; 4 * d];
    let mut tmp = vec![0.0; d];
    for step in 0..steps {
        if step > 0 {
            rk4_step(sys, &mut z, dt, &mut k, &mut tmp)?;
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { step });
            }
        }
        if step >= discard {
            states.push_row(&z)?;
        }
    }
    Ok(Trajectory {
        dt,
        t0: discard as f64 * dt,
        states,
    })
}

/// Taylor coefficients of the Rössler solution through `z`: row `k` holds the
/// `k`-th Lie derivatives of the three coordinate functions.
pub fn rossler_lie_table(a: f64, b: f64, c: f64, z: &[f64], max_order: usize) -> Vec<[f64; 3]> {
    let mut d: Vec<[f64; 3]> = Vec::with_capacity(max_order + 1);
    d.push([z[0], z[1], z[2]]);
    for k in 0..max_order {
        let cur = d[k];
        // Leibniz rule for the bilinear term z3 * z1.
        let mut prod = 0.0;
        let mut binom = 1.0;
        for j in 0..=k {
            prod += binom * d[j][2] * d[k - j][0];
            binom = binom * (k - j) as f64 / (j + 1) as f64;
        }
        let konst = if k == 0 { b } else { 0.0 };
        d.push([-cur[1] - cur[2], cur[0] + a * cur[1], konst + prod - c * cur[2]]);
    }
    d
}

/// `(h, L_f h, ..., L_f^max_order h)` for the coordinate observable `coord`
/// (0-based) of the Rössler system.
pub fn lie_derivatives(sys: &SystemParams, z: &[f64], coord: usize, max_order: usize) -> Result<Vec<f64>> {
    let weights = match coord {
        0 => [1.0, 0.0, 0.0],
        1 => [0.0, 1.0, 0.0],
        2 => [0.0, 0.0, 1.0],
        _ => {
            return Err(Error::InvalidParameter(format!(
                "coordinate index {coord} out of range for a 3-D system"
            )))
        }
    };
    lie_derivatives_linear(sys, z, &weights, max_order)
}

/// Lie derivatives of the linear observable `w . z`.
pub fn lie_derivatives_linear(sys: &SystemParams, z: &[f64], weights: &[f64], max_order: usize) -> Result<Vec<f64>> {
    let SystemParams::Rossler { a, b, c } = *sys else {
        return Err(Error::Unsupported(format!(
            "closed-form Lie derivatives are only available for rossler, not {}",
            sys.name()
        )));
    };
    sys.check_dim(z.len())?;
    if weights.len() != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            got: weights.len(),
        });
    }
    if max_order > 8 {
        return Err(Error::InvalidParameter("Lie derivative order above 8".into()));
    }
    Ok(rossler_lie_table(a, b, c, z, max_order)
        .iter()
        .map(|row| row.iter().zip(weights).map(|(x, w)| x * w).sum())
        .collect())
}

/// Largest singular value of the `n`-step tangent map, obtained by integrating
/// the variational equation alongside the flow with the same RK4 scheme.
pub fn tangent_growth(sys: &SystemParams, z0: &[f64], n: usize, dt: f64) -> Result<f64> {
    sys.check_dim(z0.len())?;
    if n == 0 {
        return Err(Error::InvalidParameter("tangent growth needs n >= 1".into()));
    }
    let d = sys.dim();
    let mut z = z0.to_vec();
    let mut phi = DMatrix::<f64>::identity(d, d);
    let mut k = vec![0.0; 4 * d];
    let mut tmp = vec![0.0; d];
    for step in 1..=n {
        // Stage states of the flow step, reused for the tangent stages.
        let z1 = z.clone();
        let f1 = sys.vector_field(&z1)?;
        let z2: Vec<f64> = z1.iter().zip(&f1).map(|(x, f)| x + 0.5 * dt * f).collect();
        let f2 = sys.vector_field(&z2)?;
        let z3: Vec<f64> = z1.iter().zip(&f2).map(|(x, f)| x + 0.5 * dt * f).collect();
        let f3 = sys.vector_field(&z3)?;
        let z4: Vec<f64> = z1.iter().zip(&f3).map(|(x, f)| x + dt * f).collect();

        let j1 = sys.jacobian(&z1)?;
        let j2 = sys.jacobian(&z2)?;
        let j3 = sys.jacobian(&z3)?;
        let j4 = sys.jacobian(&z4)?;
        let p1 = &j1 * &phi;
        let p2 = &j2 * (&phi + &p1 * (0.5 * dt));
        let p3 = &j3 * (&phi + &p2 * (0.5 * dt));
        let p4 = &j4 * (&phi + &p3 * dt);
        phi += (p1 + p2 * 2.0 + p3 * 2.0 + p4) * (dt / 6.0);

        rk4_step(sys, &mut z, dt, &mut k, &mut tmp)?;
        if z.iter().any(|v| !v.is_finite()) || phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
    }
    let sv = phi.singular_values();
    Ok(sv.iter().cloned().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rossler_field_examples() {
        let r = SystemParams::rossler();
        assert_eq!(r.vector_field(&[0.0, 0.0, 0.0]).unwrap(), vec![0.0, 0.0, 0.2]);
        let f = r.vector_field(&[1.0, 1.0, 1.0]).unwrap();
        let want = [-2.0, 1.2, 0.2 + (1.0 - 5.7)];
        for (a, b) in f.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((f[2] + 4.5).abs() < 1e-12);
    }

    #[test]
    fn linear_field() {
        let l = SystemParams::linear_test(1.0);
        assert_eq!(l.vector_field(&[2.0]).unwrap(), vec![-2.0]);
        assert!(l.vector_field(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn rk4_linear_decay() {
        // Sample 0 is the initial state, so sample 100 sits at t = 1.
        let l = SystemParams::linear_test(1.0);
        let tr = integrate_rk4(&l, &[1.0], 0.01, 101, 0).unwrap();
        let last = tr.states.row(100)[0];
        assert!((last - (-1.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn rk4_single_sample_is_initial_state() {
        let r = SystemParams::rossler();
        let tr = integrate_rk4(&r, &[0.3, -0.1, 0.02], 0.01, 1, 0).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.states.row(0), &[0.3, -0.1, 0.02]);
    }

    #[test]
    fn rk4_order_four() {
        let l = SystemParams::linear_test(1.0);
        let err = |dt: f64| {
            let steps = (1.0 / dt).round() as usize + 1;
            let tr = integrate_rk4(&l, &[1.0], dt, steps, 0).unwrap();
            (tr.states.row(steps - 1)[0] - (-1.0f64).exp()).abs()
        };
        let e1 = err(0.1);
        let e2 = err(0.05);
        assert!(e1 / e2 >= 14.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn divergence_is_reported() {
        let l = SystemParams::linear_test(-800.0);
        match integrate_rk4(&l, &[1.0], 1.0, 200, 0) {
            Err(Error::Divergence { step }) => assert!(step > 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn lie_examples() {
        let r = SystemParams::rossler();
        assert_eq!(
            lie_derivatives(&r, &[0.0, 0.0, 0.0], 1, 2).unwrap(),
            vec![0.0, 0.0, 0.0]
        );
        assert_eq!(lie_derivatives(&r, &[1.0, 1.0, 1.0], 0, 1).unwrap(), vec![1.0, -2.0]);
        assert!(lie_derivatives(&SystemParams::lorenz63(), &[1.0, 1.0, 1.0], 0, 1).is_err());
    }

    #[test]
    fn lie_matches_hand_expansion_of_z3() {
        // Second derivative of z3 written out by hand:
        // z3'' = z3' (z1 - c) + z3 z1'.
        let (a, b, c) = (0.2, 0.2, 5.7);
        let z = [0.7, -1.3, 0.4];
        let t = rossler_lie_table(a, b, c, &z, 2);
        let z1d = -z[1] - z[2];
        let z3d = b + z[2] * (z[0] - c);
        assert!((t[1][2] - z3d).abs() < 1e-14);
        assert!((t[2][2] - (z3d * (z[0] - c) + z[2] * z1d)).abs() < 1e-13);
    }

    #[test]
    fn lie_matches_finite_differences_along_trajectory() {
        let r = SystemParams::rossler();
        let dt = 1e-3;
        let tr = integrate_rk4(&r, &[1.0, 1.0, 1.0], dt, 60_000, 50_000).unwrap();
        let mid = 5_000;
        for coord in 0..3 {
            let h: Vec<f64> = (mid - 3..=mid + 3).map(|i| tr.states.row(i)[coord]).collect();
            let fd1 = (h[4] - h[2]) / (2.0 * dt);
            let fd2 = (h[4] - 2.0 * h[3] + h[2]) / (dt * dt);
            let fd3 = (h[5] - 2.0 * h[4] + 2.0 * h[2] - h[1]) / (2.0 * dt.powi(3));
            let lie = lie_derivatives(&r, tr.states.row(mid), coord, 3).unwrap();
            for (fd, an) in [(fd1, lie[1]), (fd2, lie[2]), (fd3, lie[3])] {
                let rel = (fd - an).abs() / an.abs().max(1e-2);
                assert!(rel < 1e-3, "coord {coord}: fd {fd} vs analytic {an}");
            }
        }
    }

    #[test]
    fn tangent_growth_linear_and_zero() {
        let l = SystemParams::linear_test(1.0);
        let g = tangent_growth(&l, &[1.0], 100, 0.01).unwrap();
        assert!((g - (-1.0f64).exp()).abs() < 1e-8);
        let z = SystemParams::linear_test(0.0);
        for n in [1, 7, 50] {
            assert_eq!(tangent_growth(&z, &[3.0], n, 0.1).unwrap(), 1.0);
        }
    }

    #[test]
    fn rossler_attractor_extent_and_growth() {
        let r = SystemParams::rossler();
        let tr = integrate_rk4(&r, &[1.0, 1.0, 1.0], 0.01, 500_000, 100_000).unwrap();
        let zmax = tr.coordinate(2).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((15.0..=45.0).contains(&zmax), "max |z3| = {zmax}");

        let mut growth: Vec<f64> = (0..400)
            .map(|i| tangent_growth(&r, tr.states.row(i * 997), 20, 0.05).unwrap())
            .collect();
        growth.sort_by(|a, b| a.total_cmp(b));
        assert!(growth[200] > 1.0);
    }

    #[test]
    fn tangent_growth_tracks_two_trajectory_divergence() {
        let r = SystemParams::rossler();
        let z0 = integrate_rk4(&r, &[1.0, 1.0, 1.0], 0.01, 20_000, 19_999)
            .unwrap()
            .states
            .row(0)
            .to_vec();
        let g = tangent_growth(&r, &z0, 20, 0.05).unwrap();
        // Maximal separation growth over a ring of perturbation directions.
        let eps = 1e-7;
        let mut best = 0.0f64;
        for i in 0..200 {
            let th = std::f64::consts::PI * i as f64 / 200.0;
            for ph in 0..20 {
                let p = 2.0 * std::f64::consts::PI * ph as f64 / 20.0;
                let v = [th.sin() * p.cos(), th.sin() * p.sin(), th.cos()];
                let z1: Vec<f64> = z0.iter().zip(v).map(|(x, d)| x + eps * d).collect();
                let a = integrate_rk4(&r, &z0, 0.05, 21, 20).unwrap();
                let b = integrate_rk4(&r, &z1, 0.05, 21, 20).unwrap();
                best = best.max(crate::matrix::dist(a.states.row(0), b.states.row(0)) / eps);
            }
        }
        assert!((best - g).abs() / g < 0.02, "growth {g} vs sampled {best}");
    }

    #[test]
    fn pendulum_energy_conserved() {
        let sys = SystemParams::double_pendulum();
        let SystemParams::DoublePendulum(p) = sys else {
            unreachable!()
        };
        let energy = |z: &[f64]| {
            let (t1, t2, w1, w2) = (z[0], z[1], z[2], z[3]);
            let ma = p.m1 * p.a1 * p.a1 + p.m2 * p.l1 * p.l1 + p.i1;
            let mb = p.m2 * p.a2 * p.a2 + p.i2;
            let mc = p.m2 * p.l1 * p.a2;
            let kin = 0.5 * ma * w1 * w1 + 0.5 * mb * w2 * w2 + mc * (t1 - t2).cos() * w1 * w2;
            let pot = p.g * ((p.m1 * p.a1 + p.m2 * p.l1) * t1.cos() + p.m2 * p.a2 * t2.cos());
            kin + pot
        };
        let tr = integrate_rk4(&sys, &[2.0, 2.5, 0.0, 0.0], 0.001, 10_001, 0).unwrap();
        let e0 = energy(tr.states.row(0));
        let e1 = energy(tr.states.row(10_000));
        assert!((e0 - e1).abs() < 1e-6 * e0.abs().max(1.0), "{e0} vs {e1}");
    }

    #[test]
    fn named_overrides() {
        let mut m = BTreeMap::new();
        m.insert("c".to_string(), 4.0);
        let p = SystemParams::from_named("rossler", &m).unwrap();
        assert_eq!(p, SystemParams::Rossler { a: 0.2, b: 0.2, c: 4.0 });
        m.insert("sigma".to_string(), 1.0);
        assert!(SystemParams::from_named("rossler", &m).is_err());
    }
}
