//! Browser bindings: reconstruct a Rössler attractor, estimate Ê* on it, and
//! classify the closed-form maps. Each export returns JSON text.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use delay_audit::embedding::{embed_trajectory, EmbeddingSpec, Observable, ReconstructedStates};
use delay_audit::experiments::{attractor_sample, SimulationConfig};
use delay_audit::jacobian::{AnalyticEmbedding, SingularClass};
use delay_audit::neighbors::NeighborConfig;
use delay_audit::stochasticity::estimate_estar;
use delay_audit::{dynamics::SystemParams, Error, Result};

/// Map names accepted by the exports: a closed-form id such as `u3`, or
/// `delay:<coord>:<m>:<tau>` such as `delay:z1:3:10`.
pub fn reconstruct_states(map: &str, samples: usize) -> Result<ReconstructedStates> {
    let sys = SystemParams::rossler();
    let spec = parse_map(map)?;
    let traj = SimulationConfig::rossler(samples).simulate()?;
    embed_trajectory(&traj, &spec, Some(&sys))
}

fn parse_map(map: &str) -> Result<EmbeddingSpec> {
    if let Some(e) = AnalyticEmbedding::from_id(map) {
        return Ok(e.to_spec());
    }
    let parts: Vec<&str> = map.split(':').collect();
    match parts.as_slice() {
        ["delay", obs, m, tau] => {
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::InvalidParameter(format!("'{s}' is not a count")))
            };
            let spec = EmbeddingSpec::delay(Observable::parse(obs)?, num(m)?, num(tau)?);
            spec.validate()?;
            Ok(spec)
        }
        _ => Err(Error::InvalidParameter(format!("unknown map '{map}'"))),
    }
}

#[derive(Serialize)]
pub struct Cloud {
    pub label: String,
    pub dim: usize,
    /// Row-major points, first three coordinates only.
    pub points: Vec<f64>,
}

pub fn reconstruct_json(map: &str, samples: usize) -> Result<String> {
    let r = reconstruct_states(map, samples)?;
    let d = r.dim().min(3);
    let points = r.states.iter_rows().flat_map(|row| row[..d].to_vec()).collect();
    Ok(serde_json::to_string(&Cloud {
        label: r.spec.label(),
        dim: d,
        points,
    })?)
}

#[derive(Serialize)]
pub struct Estimate {
    pub label: String,
    pub estar: f64,
    pub stderr: f64,
    /// `(row, m_hat)` per query.
    pub queries: Vec<(usize, f64)>,
}

pub fn estimate_json(map: &str, samples: usize, n: usize, k: usize, queries: usize, seed: u64) -> Result<String> {
    let r = reconstruct_states(map, samples)?;
    let rep = estimate_estar(&r, n, &NeighborConfig::new(k, 20), queries, seed)?;
    Ok(serde_json::to_string(&Estimate {
        label: r.spec.label(),
        estar: rep.estar,
        stderr: rep.stderr,
        queries: rep.per_query.iter().map(|q| (q.query, q.m_hat)).collect(),
    })?)
}

#[derive(Serialize)]
pub struct Classified {
    pub id: &'static str,
    pub label: String,
    #[serde(flatten)]
    pub class: SingularClass,
}

pub fn classify_json() -> Result<String> {
    let sys = SystemParams::rossler();
    let sample = attractor_sample(&SimulationConfig::rossler(20_000), 400)?;
    let rows = AnalyticEmbedding::ALL
        .iter()
        .map(|e| {
            Ok(Classified {
                id: e.id(),
                label: e.label(),
                class: e.classify(&sys, &sample, 0.05)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(serde_json::to_string(&rows)?)
}

fn js(r: Result<String>) -> std::result::Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub fn reconstruct(map: &str, samples: usize) -> std::result::Result<String, JsValue> {
    js(reconstruct_json(map, samples))
}

#[wasm_bindgen]
pub fn estimate(
    map: &str,
    samples: usize,
    n: usize,
    k: usize,
    queries: usize,
    seed: u64,
) -> std::result::Result<String, JsValue> {
    js(estimate_json(map, samples, n, k, queries, seed))
}

#[wasm_bindgen]
pub fn classify() -> std::result::Result<String, JsValue> {
    js(classify_json())
}
