//! Jacobians of the closed-form Rössler differential maps, their determinants
//! and determinant gradients, singular-set classification, and the local
//! stretching / curvature proxies.

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{rossler_lie_table, SystemParams, Trajectory};
use crate::embedding::{EmbeddingKind, EmbeddingSpec, Observable};
use crate::error::{Error, Result};
use crate::stats::median;

/// The hard-coded family of three-component Rössler reconstructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticEmbedding {
    /// `(z1, z1', z1'')`
    U1,
    /// `(z2, z2', z2'')`
    U2,
    /// `(z3, z3', z3'')`
    U3,
    /// derivatives of `z1 + z2`
    C12,
    /// derivatives of `z1 + z3`
    C13,
    /// derivatives of `z2 + z3`
    C23,
    /// `(z1, z2, z1')`
    M12d1,
    /// `(z1, z2, z2')`, rank deficient everywhere
    M12d2,
    /// `(z1, z3, z1')`
    M13d1,
    /// `(z1, z3, z3')`, rank deficient everywhere
    M13d3,
    /// `(z2, z3, z2')`
    M23d2,
    /// `(z2, z3, z3')`
    M23d3,
}

/// Topological type of the zero set of `det DF`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularKind {
    Diffeomorphism,
    PureTransverse,
    DegenerateFold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularClass {
    pub class: SingularKind,
    pub singular_set_description: String,
    /// Fraction of the sample lying near the singular set.
    pub srb_mass_near_sigma: f64,
    /// A point of the singular set (degenerate when the class says so).
    pub witness: Option<[f64; 3]>,
}

fn lin(w: [f64; 3]) -> Observable {
    let nz: Vec<usize> = (0..3).filter(|&i| w[i] != 0.0).collect();
    if nz.len() == 1 && w[nz[0]] == 1.0 {
        Observable::Coord(nz[0])
    } else {
        Observable::Linear(w.to_vec())
    }
}

impl AnalyticEmbedding {
    /// The ten reconstructions compared in the benchmark table, in its row order.
    pub const TABLE: [AnalyticEmbedding; 10] = [
        AnalyticEmbedding::U2,
        AnalyticEmbedding::M12d1,
        AnalyticEmbedding::C12,
        AnalyticEmbedding::U1,
        AnalyticEmbedding::C23,
        AnalyticEmbedding::C13,
        AnalyticEmbedding::M13d1,
        AnalyticEmbedding::M23d2,
        AnalyticEmbedding::M23d3,
        AnalyticEmbedding::U3,
    ];

    /// Row order of the radius diagnostics table, which lists `(z1, z2, z2')`
    /// in the second slot.
    pub const RADIUS_TABLE: [AnalyticEmbedding; 10] = [
        AnalyticEmbedding::U2,
        AnalyticEmbedding::M12d2,
        AnalyticEmbedding::C12,
        AnalyticEmbedding::U1,
        AnalyticEmbedding::C23,
        AnalyticEmbedding::C13,
        AnalyticEmbedding::M13d1,
        AnalyticEmbedding::M23d2,
        AnalyticEmbedding::M23d3,
        AnalyticEmbedding::U3,
    ];

    pub const ALL: [AnalyticEmbedding; 12] = [
        AnalyticEmbedding::U1,
        AnalyticEmbedding::U2,
        AnalyticEmbedding::U3,
        AnalyticEmbedding::C12,
        AnalyticEmbedding::C13,
        AnalyticEmbedding::C23,
        AnalyticEmbedding::M12d1,
        AnalyticEmbedding::M12d2,
        AnalyticEmbedding::M13d1,
        AnalyticEmbedding::M13d3,
        AnalyticEmbedding::M23d2,
        AnalyticEmbedding::M23d3,
    ];

    /// `(observable weights, derivative order)` per component.
    pub fn components(&self) -> [([f64; 3], usize); 3] {
        const E1: [f64; 3] = [1.0, 0.0, 0.0];
        const E2: [f64; 3] = [0.0, 1.0, 0.0];
        const E3: [f64; 3] = [0.0, 0.0, 1.0];
        let single = |w: [f64; 3]| [(w, 0), (w, 1), (w, 2)];
        match self {
            Self::U1 => single(E1),
            Self::U2 => single(E2),
            Self::U3 => single(E3),
            Self::C12 => single([1.0, 1.0, 0.0]),
            Self::C13 => single([1.0, 0.0, 1.0]),
            Self::C23 => single([0.0, 1.0, 1.0]),
            Self::M12d1 => [(E1, 0), (E2, 0), (E1, 1)],
            Self::M12d2 => [(E1, 0), (E2, 0), (E2, 1)],
            Self::M13d1 => [(E1, 0), (E3, 0), (E1, 1)],
            Self::M13d3 => [(E1, 0), (E3, 0), (E3, 1)],
            Self::M23d2 => [(E2, 0), (E3, 0), (E2, 1)],
            Self::M23d3 => [(E2, 0), (E3, 0), (E3, 1)],
        }
    }

    pub fn to_spec(&self) -> EmbeddingSpec {
        let c = self.components();
        match self {
            Self::U1 | Self::U2 | Self::U3 | Self::C12 | Self::C13 | Self::C23 => {
                EmbeddingSpec::differential(lin(c[0].0), 3)
            }
            _ => EmbeddingSpec::multivariate(c.iter().map(|(w, k)| (lin(*w), *k)).collect()),
        }
    }

    /// Recognise a spec as a member of the family.
    pub fn from_spec(spec: &EmbeddingSpec) -> Option<Self> {
        if spec.kind == EmbeddingKind::Delay || spec.m != 3 || spec.validate().is_err() {
            return None;
        }
        let mut comps = Vec::with_capacity(3);
        for i in 0..3 {
            let (o, k) = spec.component(i);
            comps.push((o.weights(3)?, k));
        }
        Self::ALL.into_iter().find(|e| {
            e.components()
                .iter()
                .zip(&comps)
                .all(|((w, k), (w2, k2))| k == k2 && w.as_slice() == w2.as_slice())
        })
    }

    pub fn label(&self) -> String {
        self.to_spec().label()
    }

    /// Short identifier used on the command line.
    pub fn id(&self) -> &'static str {
        match self {
            Self::U1 => "u1",
            Self::U2 => "u2",
            Self::U3 => "u3",
            Self::C12 => "c12",
            Self::C13 => "c13",
            Self::C23 => "c23",
            Self::M12d1 => "m12d1",
            Self::M12d2 => "m12d2",
            Self::M13d1 => "m13d1",
            Self::M13d3 => "m13d3",
            Self::M23d2 => "m23d2",
            Self::M23d3 => "m23d3",
        }
    }

    pub fn from_id(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.id() == s)
    }

    /// Closed-form `det DF(z)`.
    pub fn det(&self, sys: &SystemParams, z: &[f64]) -> Result<f64> {
        let (a, b, c) = rossler_abc(sys)?;
        let (z1, z2, z3) = (z[0], z[1], z[2]);
        Ok(match self {
            Self::U1 => z1 - a - c,
            Self::U2 => 1.0,
            Self::U3 => -z3 * z3,
            Self::C12 => a * a + a * c - a * z1 - 3.0 * a - 2.0 * c + 2.0 * z1 + z3 + 2.0,
            Self::C13 => {
                -a * c + a * z1 - a * z3 - a + b - c * c + 2.0 * c * z1 - 3.0 * c * z3 - c - z1 * z1
                    + 3.0 * z1 * z3
                    + z1
                    + z2
                    - z3 * z3
                    - 1.0
            }
            Self::C23 => {
                a * a * z3 - a * b + 2.0 * a * c * z3 - a * c - 2.0 * a * z1 * z3 + a * z1 - b * c + b * z1 + c * c * z3
                    - c * c
                    - 2.0 * c * z1 * z3
                    + 2.0 * c * z1
                    + z1 * z1 * z3
                    - z1 * z1
                    + z2 * z3
                    + z2
                    + z3 * z3
                    + z3
            }
            Self::M12d1 => -1.0,
            Self::M13d1 => 1.0,
            Self::M23d2 => 1.0,
            Self::M23d3 => z3,
            Self::M12d2 | Self::M13d3 => 0.0,
        })
    }

    /// Closed-form gradient of `det DF` with respect to `z`.
    pub fn grad_det(&self, sys: &SystemParams, z: &[f64]) -> Result<[f64; 3]> {
        let (a, b, c) = rossler_abc(sys)?;
        let (z1, z2, z3) = (z[0], z[1], z[2]);
        Ok(match self {
            Self::U1 => [1.0, 0.0, 0.0],
            Self::U3 => [0.0, 0.0, -2.0 * z3],
            Self::C12 => [2.0 - a, 0.0, 1.0],
            Self::C13 => [
                a + 2.0 * c - 2.0 * z1 + 3.0 * z3 + 1.0,
                1.0,
                -a - 3.0 * c + 3.0 * z1 - 2.0 * z3,
            ],
            Self::C23 => [
                -2.0 * a * z3 + a + b - 2.0 * c * z3 + 2.0 * c + 2.0 * z1 * z3 - 2.0 * z1,
                z3 + 1.0,
                a * a + 2.0 * a * c - 2.0 * a * z1 + c * c - 2.0 * c * z1 + z1 * z1 + z2 + 2.0 * z3 + 1.0,
            ],
            Self::M23d3 => [0.0, 0.0, 1.0],
            Self::U2 | Self::M12d1 | Self::M13d1 | Self::M23d2 | Self::M12d2 | Self::M13d3 => [0.0; 3],
        })
    }

    /// `DF(z)` assembled from exact Lie-derivative gradients.
    pub fn jacobian(&self, sys: &SystemParams, z: &[f64]) -> Result<Matrix3<f64>> {
        let (a, b, c) = rossler_abc(sys)?;
        let table = lie_table_dual(a, b, c, z, 2);
        let mut m = Matrix3::zeros();
        for (i, (w, k)) in self.components().iter().enumerate() {
            for j in 0..3 {
                m[(i, j)] = (0..3).map(|l| w[l] * table[*k][l].g[j]).sum();
            }
        }
        Ok(m)
    }

    /// Analytic description of the singular set and, when it is nonempty,
    /// a point on it. For the degenerate kinds the witness also zeroes the gradient.
    pub fn singular_structure(&self, sys: &SystemParams) -> Result<(SingularKind, String, Option<[f64; 3]>)> {
        let (a, b, c) = rossler_abc(sys)?;
        use SingularKind::*;
        Ok(match self {
            Self::U2 | Self::M12d1 | Self::M13d1 | Self::M23d2 => {
                (Diffeomorphism, "empty: det DF is a nonzero constant".into(), None)
            }
            Self::U1 => (
                PureTransverse,
                format!("plane z1 = a + c = {}; gradient (1, 0, 0) never vanishes", a + c),
                Some([a + c, 0.0, 0.0]),
            ),
            Self::C12 => {
                let k = a * a + a * c - 3.0 * a - 2.0 * c + 2.0;
                (
                    PureTransverse,
                    format!("plane ({}) z1 + z3 = {}; constant gradient", 2.0 - a, -k),
                    Some([0.0, 0.0, -k]),
                )
            }
            Self::C13 => (
                PureTransverse,
                "quadric surface solved by z2 as a function of (z1, z3); gradient has unit z2-component".into(),
                Some([0.0, a * c + a - b + c * c + c + 1.0, 0.0]),
            ),
            Self::M23d3 => (
                PureTransverse,
                "plane z3 = 0; gradient (0, 0, 1)".into(),
                Some([0.0, 0.0, 0.0]),
            ),
            Self::U3 => (
                DegenerateFold,
                "plane z3 = 0 is a double root: det = -z3^2 and its gradient vanish together".into(),
                Some([0.0, 0.0, 0.0]),
            ),
            Self::C23 => {
                let p = [(3.0 * a + b) / 4.0 + c, 1.0 - (a - b) * (a - b) / 16.0, -1.0];
                if (a - b).abs() <= 1e-12 * (a.abs() + b.abs()).max(1.0) {
                    (
                        DegenerateFold,
                        format!(
                            "cubic surface with a critical point at ({}, {}, {}) where det and gradient vanish",
                            p[0], p[1], p[2]
                        ),
                        Some(p),
                    )
                } else {
                    (
                        PureTransverse,
                        "cubic surface; the only critical point of det lies off the surface when a != b".into(),
                        None,
                    )
                }
            }
            Self::M12d2 | Self::M13d3 => (
                DegenerateFold,
                "whole space: the third component repeats information of the first two, det DF = 0".into(),
                Some([0.0, 0.0, 0.0]),
            ),
        })
    }

    /// Classify the map and measure the sample mass near its singular set:
    /// the fraction of samples with `|det| < eps_sigma * median |det|`.
    pub fn classify(&self, sys: &SystemParams, sample: &Trajectory, eps_sigma: f64) -> Result<SingularClass> {
        if !(eps_sigma > 0.0) {
            return Err(Error::InvalidParameter("eps_sigma must be positive".into()));
        }
        let (class, desc, witness) = self.singular_structure(sys)?;
        let dets: Vec<f64> = sample
            .states
            .iter_rows()
            .map(|z| self.det(sys, z).map(f64::abs))
            .collect::<Result<_>>()?;
        let mass = if dets.is_empty() {
            0.0
        } else {
            let med = median(&dets);
            if med == 0.0 {
                1.0
            } else {
                let thr = eps_sigma * med;
                dets.iter().filter(|&&d| d < thr).count() as f64 / dets.len() as f64
            }
        };
        Ok(SingularClass {
            class,
            singular_set_description: desc,
            srb_mass_near_sigma: mass,
            witness,
        })
    }

    /// Smallest singular value of `DF(z)`.
    pub fn stretching(&self, sys: &SystemParams, z: &[f64]) -> Result<f64> {
        let j = self.jacobian(sys, z)?;
        Ok(j.singular_values().iter().cloned().fold(f64::INFINITY, f64::min))
    }

    /// Coarea Jacobian `sqrt(det(DF DF^T))`, which equals `|det DF|` here.
    pub fn coarea(&self, sys: &SystemParams, z: &[f64]) -> Result<f64> {
        Ok(self.det(sys, z)?.abs())
    }
}

fn rossler_abc(sys: &SystemParams) -> Result<(f64, f64, f64)> {
    match *sys {
        SystemParams::Rossler { a, b, c } => Ok((a, b, c)),
        _ => Err(Error::Unsupported(format!(
            "closed-form Jacobians exist for rossler only, not {}",
            sys.name()
        ))),
    }
}

pub fn det_df(spec: &EmbeddingSpec, sys: &SystemParams, z: &[f64]) -> Result<f64> {
    lookup(spec)?.det(sys, z)
}

pub fn grad_det_df(spec: &EmbeddingSpec, sys: &SystemParams, z: &[f64]) -> Result<[f64; 3]> {
    lookup(spec)?.grad_det(sys, z)
}

pub fn classify_embedding(
    spec: &EmbeddingSpec,
    sys: &SystemParams,
    sample: &Trajectory,
    eps_sigma: f64,
) -> Result<SingularClass> {
    lookup(spec)?.classify(sys, sample, eps_sigma)
}

pub fn stretching_proxy(spec: &EmbeddingSpec, sys: &SystemParams, z: &[f64]) -> Result<f64> {
    lookup(spec)?.stretching(sys, z)
}

fn lookup(spec: &EmbeddingSpec) -> Result<AnalyticEmbedding> {
    AnalyticEmbedding::from_spec(spec)
        .ok_or_else(|| Error::Unsupported(format!("{} is not in the closed-form family", spec.label())))
}

/// Jacobian of any closed-form Rössler differential spec (linear observables).
pub fn spec_jacobian(spec: &EmbeddingSpec, sys: &SystemParams, z: &[f64]) -> Result<DMatrix<f64>> {
    let (a, b, c) = rossler_abc(sys)?;
    spec.validate()?;
    let comps: Vec<(Vec<f64>, usize)> = (0..spec.m)
        .map(|i| {
            let (o, k) = spec.component(i);
            o.weights(3)
                .map(|w| (w, k))
                .ok_or_else(|| Error::Unsupported(format!("observable {o} has no closed form")))
        })
        .collect::<Result<_>>()?;
    let kmax = comps.iter().map(|c| c.1).max().unwrap_or(0);
    let table = lie_table_dual(a, b, c, z, kmax);
    Ok(DMatrix::from_fn(spec.m, 3, |i, j| {
        let (w, k) = &comps[i];
        (0..3).map(|l| w[l] * table[*k][l].g[j]).sum()
    }))
}

/// `sqrt(det(J J^T))` for a possibly non-square Jacobian.
pub fn coarea_jacobian(j: &DMatrix<f64>) -> f64 {
    if j.is_square() {
        return j.determinant().abs();
    }
    let g = j * j.transpose();
    g.determinant().max(0.0).sqrt()
}

/// Curvature `|V x A| / |V|^3` of the derivative curve of `z1`, with
/// `V = (z1', z1'', z1''')` and `A = (z1'', z1''', z1'''')`. Infinite when
/// `|V| < 1e-12`.
pub fn curvature_proxy(sys: &SystemParams, z: &[f64]) -> Result<f64> {
    let (a, b, c) = rossler_abc(sys)?;
    let t = rossler_lie_table(a, b, c, z, 4);
    let v = [t[1][0], t[2][0], t[3][0]];
    let acc = [t[2][0], t[3][0], t[4][0]];
    Ok(curvature(&v, &acc))
}

pub fn curvature(v: &[f64; 3], a: &[f64; 3]) -> f64 {
    let cross = [
        v[1] * a[2] - v[2] * a[1],
        v[2] * a[0] - v[0] * a[2],
        v[0] * a[1] - v[1] * a[0],
    ];
    let nv = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if nv < 1e-12 {
        return f64::INFINITY;
    }
    (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt() / (nv * nv * nv)
}

/// Value with gradient in the three latent coordinates.
#[derive(Debug, Clone, Copy, Default)]
struct Dual {
    v: f64,
    g: [f64; 3],
}

impl Dual {
    fn var(v: f64, i: usize) -> Self {
        let mut g = [0.0; 3];
        g[i] = 1.0;
        Self { v, g }
    }
    fn lin(terms: &[(f64, Dual)], konst: f64) -> Self {
        let mut out = Dual { v: konst, g: [0.0; 3] };
        for (c, d) in terms {
            out.v += c * d.v;
            for j in 0..3 {
                out.g[j] += c * d.g[j];
            }
        }
        out
    }
    fn mul(self, o: Dual) -> Self {
        let mut g = [0.0; 3];
        for j in 0..3 {
            g[j] = self.v * o.g[j] + o.v * self.g[j];
        }
        Dual { v: self.v * o.v, g }
    }
}

/// Lie-derivative table carrying exact gradients.
fn lie_table_dual(a: f64, b: f64, c: f64, z: &[f64], max_order: usize) -> Vec<[Dual; 3]> {
    let mut d: Vec<[Dual; 3]> = vec![[Dual::var(z[0], 0), Dual::var(z[1], 1), Dual::var(z[2], 2)]];
    for k in 0..max_order {
        let cur = d[k];
        let mut prod = Dual::default();
        let mut binom = 1.0;
        for j in 0..=k {
            prod = Dual::lin(&[(1.0, prod), (binom, d[j][2].mul(d[k - j][0]))], 0.0);
            binom = binom * (k - j) as f64 / (j + 1) as f64;
        }
        let konst = if k == 0 { b } else { 0.0 };
        d.push([
            Dual::lin(&[(-1.0, cur[1]), (-1.0, cur[2])], 0.0),
            Dual::lin(&[(1.0, cur[0]), (a, cur[1])], 0.0),
            Dual::lin(&[(1.0, prod), (-c, cur[2])], konst),
        ]);
    }
    d
}
