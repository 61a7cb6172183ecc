//! Reconstruction-space states built from observables: backward delay maps,
//! closed-form and Savitzky-Golay differential maps, signal transforms and a
//! three-component PCA for plot exports.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dynamics::{rossler_lie_table, SystemParams, Trajectory};
use crate::error::{Error, Result};
use crate::matrix::RowMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Delay,
    DifferentialAnalytic,
    DifferentialNumeric,
    Multivariate,
}

impl EmbeddingKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "delay" => Ok(Self::Delay),
            "differential_analytic" | "analytic" => Ok(Self::DifferentialAnalytic),
            "differential_numeric" | "numeric" => Ok(Self::DifferentialNumeric),
            "multivariate" => Ok(Self::Multivariate),
            other => Err(Error::InvalidParameter(format!("unknown embedding kind '{other}'"))),
        }
    }
}

/// A scalar measurement of the latent state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// Latent coordinate, 0-based.
    Coord(usize),
    /// `w . z` over latent coordinates.
    Linear(Vec<f64>),
    /// A named column of an ingested data set.
    Series(String),
}

impl Observable {
    /// Parse `z2`, `z1+z3`, `0.5*z1-z2` (1-based coordinate names) or any
    /// other identifier as a raw series name.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::InvalidParameter("empty observable".into()));
        }
        let looks_latent = s.chars().all(|c| c.is_ascii_digit() || "z+-*.eE ".contains(c)) && s.contains('z');
        if !looks_latent {
            return Ok(Observable::Series(s.to_string()));
        }
        let norm = s.replace(' ', "").replace('-', "+-");
        let mut weights: Vec<f64> = Vec::new();
        for term in norm.split('+').filter(|t| !t.is_empty()) {
            let (coef, var) = match term.split_once('*') {
                Some((c, v)) => (
                    c.parse::<f64>()
                        .map_err(|_| Error::InvalidParameter(format!("bad coefficient in '{s}'")))?,
                    v,
                ),
                None if term.starts_with("-z") => (-1.0, &term[1..]),
                None => (1.0, term),
            };
            let idx: usize = var
                .strip_prefix('z')
                .and_then(|d| d.parse().ok())
                .filter(|&i: &usize| i >= 1)
                .ok_or_else(|| Error::InvalidParameter(format!("bad coordinate '{var}' in '{s}'")))?;
            if weights.len() < idx {
                weights.resize(idx, 0.0);
            }
            weights[idx - 1] += coef;
        }
        let nonzero: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] != 0.0).collect();
        if nonzero.len() == 1 && weights[nonzero[0]] == 1.0 {
            Ok(Observable::Coord(nonzero[0]))
        } else {
            Ok(Observable::Linear(weights))
        }
    }

    /// Weights over `d` latent coordinates, if this is a latent observable.
    pub fn weights(&self, d: usize) -> Option<Vec<f64>> {
        match self {
            Observable::Coord(i) if *i < d => {
                let mut w = vec![0.0; d];
                w[*i] = 1.0;
                Some(w)
            }
            Observable::Linear(w) if w.len() <= d => {
                let mut v = w.clone();
                v.resize(d, 0.0);
                Some(v)
            }
            _ => None,
        }
    }

    /// Evaluate on a trajectory.
    pub fn sample(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        let w = self.weights(traj.dim()).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "observable {self} does not apply to a {}-D trajectory",
                traj.dim()
            ))
        })?;
        Ok(traj
            .states
            .iter_rows()
            .map(|r| r.iter().zip(&w).map(|(x, c)| x * c).sum())
            .collect())
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observable::Coord(i) => write!(f, "z{}", i + 1),
            Observable::Series(s) => write!(f, "{s}"),
            Observable::Linear(w) => {
                let mut first = true;
                for (i, &c) in w.iter().enumerate() {
                    if c == 0.0 {
                        continue;
                    }
                    if !first {
                        write!(f, "{}", if c < 0.0 { "-" } else { "+" })?;
                    } else if c < 0.0 {
                        write!(f, "-")?;
                    }
                    let a = c.abs();
                    if a != 1.0 {
                        write!(f, "{a}*")?;
                    }
                    write!(f, "z{}", i + 1)?;
                    first = false;
                }
                if first {
                    write!(f, "0")?;
                }
                Ok(())
            }
        }
    }
}

/// Pointwise transform applied to the measured scalar before embedding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalTransform {
    #[default]
    Identity,
    Log1p,
    Sin,
}

impl SignalTransform {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" | "none" => Ok(Self::Identity),
            "log1p" => Ok(Self::Log1p),
            "sin" => Ok(Self::Sin),
            other => Err(Error::InvalidParameter(format!("unknown transform '{other}'"))),
        }
    }
}

pub fn transform_series(series: &[f64], transform: SignalTransform) -> Result<Vec<f64>> {
    match transform {
        SignalTransform::Identity => Ok(series.to_vec()),
        SignalTransform::Sin => Ok(series.iter().map(|x| x.sin()).collect()),
        SignalTransform::Log1p => series
            .iter()
            .enumerate()
            .map(|(index, &value)| {
                if value < 0.0 || value.is_nan() {
                    Err(Error::NegativeInput { index, value })
                } else {
                    Ok(value.ln_1p())
                }
            })
            .collect(),
    }
}

/// Declarative description of a reconstruction map.
///
/// For the differential and multivariate kinds, component `i` is the
/// `derivative_orders[i]`-th time derivative of `observables[i]`, or of
/// `observables[0]` when a single observable is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub kind: EmbeddingKind,
    pub observables: Vec<Observable>,
    pub m: usize,
    /// Lag in samples (delay kind).
    pub tau: usize,
    pub derivative_orders: Vec<usize>,
    #[serde(default)]
    pub transform: SignalTransform,
}

impl EmbeddingSpec {
    pub fn delay(observable: Observable, m: usize, tau: usize) -> Self {
        Self {
            kind: EmbeddingKind::Delay,
            observables: vec![observable],
            m,
            tau,
            derivative_orders: Vec::new(),
            transform: SignalTransform::Identity,
        }
    }

    /// `(h, h', ..., h^(m-1))` for a single observable, closed form.
    pub fn differential(observable: Observable, m: usize) -> Self {
        Self {
            kind: EmbeddingKind::DifferentialAnalytic,
            observables: vec![observable],
            m,
            tau: 0,
            derivative_orders: (0..m).collect(),
            transform: SignalTransform::Identity,
        }
    }

    /// Mixed components `(obs_i^(order_i))`.
    pub fn multivariate(components: Vec<(Observable, usize)>) -> Self {
        let m = components.len();
        let (observables, derivative_orders) = components.into_iter().unzip();
        Self {
            kind: EmbeddingKind::Multivariate,
            observables,
            m,
            tau: 0,
            derivative_orders,
            transform: SignalTransform::Identity,
        }
    }

    pub fn numeric(mut self) -> Self {
        self.kind = EmbeddingKind::DifferentialNumeric;
        self
    }

    pub fn with_transform(mut self, t: SignalTransform) -> Self {
        self.transform = t;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidParameter("m must be at least 1".into()));
        }
        if self.observables.is_empty() {
            return Err(Error::InvalidParameter("no observable given".into()));
        }
        match self.kind {
            EmbeddingKind::Delay => {
                if self.tau == 0 {
                    return Err(Error::InvalidParameter("tau must be at least 1".into()));
                }
                if self.observables.len() != 1 {
                    return Err(Error::InvalidParameter("delay embedding takes one observable".into()));
                }
            }
            _ => {
                if self.derivative_orders.len() != self.m {
                    return Err(Error::InvalidParameter(format!(
                        "{} derivative orders given for m = {}",
                        self.derivative_orders.len(),
                        self.m
                    )));
                }
                if self.observables.len() != 1 && self.observables.len() != self.m {
                    return Err(Error::InvalidParameter(
                        "observable list must have one entry or m entries".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Observable and derivative order of component `i`.
    pub fn component(&self, i: usize) -> (&Observable, usize) {
        let obs = if self.observables.len() == 1 {
            &self.observables[0]
        } else {
            &self.observables[i]
        };
        (obs, self.derivative_orders.get(i).copied().unwrap_or(0))
    }

    /// Short human-readable name, e.g. `(z2, z2', z2'')`.
    pub fn label(&self) -> String {
        let wrap = |o: &Observable| -> String {
            let s = o.to_string();
            let s = match self.transform {
                SignalTransform::Identity => s,
                SignalTransform::Log1p => format!("log1p({s})"),
                SignalTransform::Sin => format!("sin({s})"),
            };
            if s.contains('+') || s.contains('-') {
                format!("({s})")
            } else {
                s
            }
        };
        match self.kind {
            EmbeddingKind::Delay => {
                format!("delay[{}; m={}, tau={}]", wrap(&self.observables[0]), self.m, self.tau)
            }
            _ => {
                let parts: Vec<String> = (0..self.m)
                    .map(|i| {
                        let (o, k) = self.component(i);
                        format!("{}{}", wrap(o), "'".repeat(k))
                    })
                    .collect();
                format!("({})", parts.join(", "))
            }
        }
    }
}

/// Rows of a reconstruction. Row `i` represents latent sample `i + sample_offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedStates {
    pub states: RowMatrix,
    pub sample_offset: usize,
    pub dt: f64,
    pub spec: EmbeddingSpec,
}

impl ReconstructedStates {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.width()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.states.row(i)
    }

    pub fn latent_index(&self, row: usize) -> usize {
        row + self.sample_offset
    }

    /// Keep rows `start..end`, adjusting the offset.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            states: self.states.slice_rows(start, end),
            sample_offset: self.sample_offset + start,
            dt: self.dt,
            spec: self.spec.clone(),
        }
    }

    /// Wrap an arbitrary point set (e.g. a latent trajectory) as states.
    pub fn from_matrix(states: RowMatrix, dt: f64, spec: EmbeddingSpec) -> Self {
        Self {
            states,
            sample_offset: 0,
            dt,
            spec,
        }
    }
}

/// Backward delay vectors `(y_t, y_{t-tau}, ..., y_{t-(m-1)tau})`.
pub fn delay_embed(series: &[f64], m: usize, tau: usize) -> Result<ReconstructedStates> {
    delay_embed_spec(
        series,
        &EmbeddingSpec::delay(Observable::Series("y".into()), m, tau),
        1.0,
    )
}

fn delay_embed_spec(series: &[f64], spec: &EmbeddingSpec, dt: f64) -> Result<ReconstructedStates> {
    spec.validate()?;
    let (m, tau) = (spec.m, spec.tau);
    let span = (m - 1) * tau;
    if series.len() <= span {
        return Err(Error::SeriesTooShort {
            needed: span,
            have: series.len(),
        });
    }
    let n = series.len() - span;
    let mut flat = Vec::with_capacity(n * m);
    for t in span..series.len() {
        for j in 0..m {
            flat.push(series[t - j * tau]);
        }
    }
    let states = RowMatrix::from_flat(flat, m)?;
    if !states.all_finite() {
        return Err(Error::Malformed("non-finite value in delay vectors".into()));
    }
    Ok(ReconstructedStates {
        states,
        sample_offset: span,
        dt,
        spec: spec.clone(),
    })
}

/// Embed a latent trajectory according to `spec`. Closed-form kinds need the
/// generating system.
pub fn embed_trajectory(
    traj: &Trajectory,
    spec: &EmbeddingSpec,
    system: Option<&SystemParams>,
) -> Result<ReconstructedStates> {
    spec.validate()?;
    match spec.kind {
        EmbeddingKind::Delay => {
            let raw = spec.observables[0].sample(traj)?;
            let y = transform_series(&raw, spec.transform)?;
            delay_embed_spec(&y, spec, traj.dt)
        }
        EmbeddingKind::DifferentialNumeric => numeric_differential(traj, spec, &SavGol::default()),
        EmbeddingKind::DifferentialAnalytic | EmbeddingKind::Multivariate => {
            match system {
                Some(sys @ SystemParams::Rossler { .. }) if spec.transform == SignalTransform::Identity => {
                    analytic_differential(traj, spec, sys)
                }
                // Multivariate maps over other systems fall back to numeric derivatives.
                _ if spec.kind == EmbeddingKind::Multivariate => numeric_differential(traj, spec, &SavGol::default()),
                _ => Err(Error::Unsupported(
                    "closed-form differential embedding needs the rossler system and no transform".into(),
                )),
            }
        }
    }
}

/// Same as [`embed_trajectory`], spelled for the differential kinds.
pub fn differential_embed(
    traj: &Trajectory,
    spec: &EmbeddingSpec,
    system: Option<&SystemParams>,
) -> Result<ReconstructedStates> {
    if spec.kind == EmbeddingKind::Delay {
        return Err(Error::InvalidParameter(
            "differential_embed called with a delay spec".into(),
        ));
    }
    embed_trajectory(traj, spec, system)
}

fn analytic_differential(traj: &Trajectory, spec: &EmbeddingSpec, sys: &SystemParams) -> Result<ReconstructedStates> {
    let SystemParams::Rossler { a, b, c } = *sys else {
        unreachable!()
    };
    if traj.dim() != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            got: traj.dim(),
        });
    }
    let comps: Vec<(Vec<f64>, usize)> = (0..spec.m)
        .map(|i| {
            let (o, k) = spec.component(i);
            o.weights(3)
                .map(|w| (w, k))
                .ok_or_else(|| Error::Unsupported(format!("observable {o} has no closed form")))
        })
        .collect::<Result<_>>()?;
    let max_order = comps.iter().map(|c| c.1).max().unwrap_or(0);
    if max_order > 8 {
        return Err(Error::Unsupported("derivative order above 8".into()));
    }
    let mut out = RowMatrix::with_capacity(spec.m, traj.len());
    let mut row = vec![0.0; spec.m];
    for z in traj.states.iter_rows() {
        let table = rossler_lie_table(a, b, c, z, max_order);
        for (slot, (w, k)) in row.iter_mut().zip(&comps) {
            *slot = table[*k].iter().zip(w).map(|(x, c)| x * c).sum();
        }
        out.push_row(&row)?;
    }
    Ok(ReconstructedStates {
        states: out,
        sample_offset: 0,
        dt: traj.dt,
        spec: spec.clone(),
    })
}

/// Evaluate a closed-form Rössler differential map at a single latent point.
pub fn analytic_point(spec: &EmbeddingSpec, sys: &SystemParams, z: &[f64]) -> Result<Vec<f64>> {
    let traj = Trajectory::new(1.0, 0.0, RowMatrix::from_rows(&[z])?)?;
    let mut s = spec.clone();
    if s.kind == EmbeddingKind::DifferentialNumeric {
        s.kind = EmbeddingKind::DifferentialAnalytic;
    }
    Ok(analytic_differential(&traj, &s, sys)?.states.row(0).to_vec())
}

/// Savitzky-Golay smoothing differentiator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SavGol {
    /// Odd window length in samples.
    pub window: usize,
    pub poly_order: usize,
}

impl Default for SavGol {
    fn default() -> Self {
        Self {
            window: 21,
            poly_order: 5,
        }
    }
}

impl SavGol {
    pub fn half(&self) -> usize {
        self.window / 2
    }

    /// Convolution weights of the `deriv`-th derivative at the window centre.
    pub fn coefficients(&self, deriv: usize, dt: f64) -> Result<Vec<f64>> {
        if self.window % 2 == 0 || self.window < 3 {
            return Err(Error::InvalidParameter(format!(
                "window {} must be odd and >= 3",
                self.window
            )));
        }
        if self.poly_order >= self.window {
            return Err(Error::InvalidParameter(
                "polynomial order must be below the window".into(),
            ));
        }
        if deriv > self.poly_order {
            return Err(Error::InvalidParameter(format!(
                "derivative order {deriv} exceeds polynomial order {}",
                self.poly_order
            )));
        }
        let h = self.half() as f64;
        let p = self.poly_order + 1;
        let j = DMatrix::from_fn(self.window, p, |i, k| (i as f64 - h).powi(k as i32));
        let jt = j.transpose();
        let normal = &jt * &j;
        let inv = normal
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter("Savitzky-Golay normal matrix is singular".into()))?
            .inverse();
        let proj = inv * jt;
        let fact: f64 = (1..=deriv).map(|v| v as f64).product();
        let scale = fact / dt.powi(deriv as i32);
        Ok((0..self.window).map(|i| proj[(deriv, i)] * scale).collect())
    }

    /// Derivative estimates at samples `half .. len - half`.
    pub fn apply(&self, series: &[f64], deriv: usize, dt: f64) -> Result<Vec<f64>> {
        if series.len() < self.window {
            return Err(Error::SeriesTooShort {
                needed: self.window - 1,
                have: series.len(),
            });
        }
        let c = self.coefficients(deriv, dt)?;
        Ok(series
            .windows(self.window)
            .map(|w| w.iter().zip(&c).map(|(x, k)| x * k).sum())
            .collect())
    }
}

/// Differential embedding of scalar series by Savitzky-Golay differentiation.
/// Each component's series is transformed, differentiated and edge-trimmed.
pub fn numeric_differential_series(
    series: &[Vec<f64>],
    spec: &EmbeddingSpec,
    dt: f64,
    sg: &SavGol,
) -> Result<ReconstructedStates> {
    spec.validate()?;
    if spec.derivative_orders.iter().any(|&k| k > 3) {
        return Err(Error::Unsupported("numeric derivatives above order 3".into()));
    }
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(spec.m);
    for i in 0..spec.m {
        let src = if series.len() == 1 { &series[0] } else { &series[i] };
        let y = transform_series(src, spec.transform)?;
        cols.push(sg.apply(&y, spec.derivative_orders[i], dt)?);
    }
    let n = cols[0].len();
    let mut flat = Vec::with_capacity(n * spec.m);
    for t in 0..n {
        for c in &cols {
            flat.push(c[t]);
        }
    }
    Ok(ReconstructedStates {
        states: RowMatrix::from_flat(flat, spec.m)?,
        sample_offset: sg.half(),
        dt,
        spec: EmbeddingSpec {
            kind: EmbeddingKind::DifferentialNumeric,
            ..spec.clone()
        },
    })
}

pub fn numeric_differential(traj: &Trajectory, spec: &EmbeddingSpec, sg: &SavGol) -> Result<ReconstructedStates> {
    let series: Vec<Vec<f64>> = spec.observables.iter().map(|o| o.sample(traj)).collect::<Result<_>>()?;
    numeric_differential_series(&series, spec, traj.dt, sg)
}

/// Embed a raw scalar series (delay or numeric differential).
pub fn embed_series(series: &[f64], spec: &EmbeddingSpec, dt: f64) -> Result<ReconstructedStates> {
    match spec.kind {
        EmbeddingKind::Delay => {
            let y = transform_series(series, spec.transform)?;
            delay_embed_spec(&y, spec, dt)
        }
        EmbeddingKind::DifferentialNumeric => {
            numeric_differential_series(&[series.to_vec()], spec, dt, &SavGol::default())
        }
        _ => Err(Error::Unsupported(
            "closed-form embeddings need a latent trajectory, not a raw series".into(),
        )),
    }
}

/// Projection onto the leading principal directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca3 {
    pub scores: RowMatrix,
    pub eigenvalues: [f64; 3],
    /// Set when the data has rank below three; trailing components are zero.
    pub rank_deficient: bool,
}

pub fn pca3(states: &RowMatrix) -> Result<Pca3> {
    let (n, m) = (states.rows(), states.width());
    if m < 3 {
        return Err(Error::InvalidParameter(format!("pca3 needs m >= 3, got {m}")));
    }
    if n < 3 {
        return Err(Error::InsufficientData(format!("pca3 needs 3 rows, got {n}")));
    }
    let mut mean = vec![0.0; m];
    for r in states.iter_rows() {
        for (a, v) in mean.iter_mut().zip(r) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    let mut cov = DMatrix::<f64>::zeros(m, m);
    for r in states.iter_rows() {
        for i in 0..m {
            let di = r[i] - mean[i];
            for j in i..m {
                cov[(i, j)] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..m {
        for j in i..m {
            let v = cov[(i, j)] / (n as f64 - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(3);
    let mut eigenvalues = [0.0; 3];
    let mut rank_deficient = false;
    for (slot, &idx) in order.iter().take(3).enumerate() {
        let lam = eig.eigenvalues[idx];
        if !(lam > 1e-12 * top.max(f64::MIN_POSITIVE)) {
            rank_deficient = true;
            dirs.push(vec![0.0; m]);
            continue;
        }
        eigenvalues[slot] = lam;
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().cloned().collect();
        let lead = v
            .iter()
            .cloned()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        dirs.push(v);
    }
    let mut scores = RowMatrix::with_capacity(3, n);
    for r in states.iter_rows() {
        let s: Vec<f64> = dirs
            .iter()
            .map(|d| d.iter().zip(r).zip(&mean).map(|((w, x), mu)| w * (x - mu)).sum())
            .collect();
        scores.push_row(&s)?;
    }
    Ok(Pca3 {
        scores,
        eigenvalues,
        rank_deficient,
    })
}
