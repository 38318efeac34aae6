//! Browser demo: training curves, the truncation audit and the `J` landscape,
//! each returned as a JSON string for the page to draw.

use serde::Serialize;
use vrpg_core::algorithms::{run, Algorithm};
use vrpg_core::analysis::{audit_truncation, TruncationRow};
use vrpg_core::mdp::{chain2, random_mdp, TabularMdp};
use vrpg_core::oracle::{ExactOracle, TabularOracle};
use vrpg_core::policy::{Policy, SoftmaxTabular};
use vrpg_core::verify::OrderingSetup;
use wasm_bindgen::prelude::*;

/// `"chain2"` or `"random"` (5 states, 3 actions, generated from `seed`).
pub fn benchmark(kind: &str, seed: u64) -> Result<TabularMdp, String> {
    match kind {
        "chain2" => Ok(chain2()),
        "random" => random_mdp(seed, 5, 3).map_err(|e| e.to_string()),
        _ => Err(format!("unknown MDP {kind:?}")),
    }
}

#[derive(Serialize)]
pub struct Curve {
    pub algorithm: &'static str,
    pub trajectories: Vec<u64>,
    pub j: Vec<f64>,
    pub grad_norm2: Vec<f64>,
    pub truncated: bool,
}

#[derive(Serialize)]
pub struct Curves {
    pub j_star: f64,
    pub j0: f64,
    pub budget: u64,
    pub curves: Vec<Curve>,
}

/// All four drivers from `theta = 0` at a shared trajectory budget.
pub fn curves(kind: &str, mdp_seed: u64, run_seed: u64, budget: u64, eta: f64) -> Result<Curves, String> {
    let mdp = benchmark(kind, mdp_seed)?;
    let p = SoftmaxTabular::new(mdp.n_states, mdp.n_actions);
    let oracle = TabularOracle::new(&mdp, &p, 1e-3).map_err(|e| e.to_string())?;
    let setup = OrderingSetup { budget, eta, ..Default::default() };
    let theta0 = vec![0.0; p.dim()];
    let mut curves = Vec::new();
    for alg in Algorithm::ALL {
        let cfg = setup.config(alg, run_seed);
        let r = run(&mdp, &p, Some(&oracle), &theta0, &cfg).map_err(|e| e.to_string())?;
        curves.push(Curve {
            algorithm: alg.name(),
            trajectories: r.records.iter().map(|x| x.trajectories).collect(),
            j: r.records.iter().map(|x| x.j_exact.unwrap_or(f64::NAN)).collect(),
            grad_norm2: r.records.iter().map(|x| x.grad_norm2.unwrap_or(f64::NAN)).collect(),
            truncated: r.truncated,
        });
    }
    let j0 = oracle.j(&theta0).map_err(|e| e.to_string())?;
    Ok(Curves { j_star: oracle.j_star(), j0, budget, curves })
}

/// `|grad J^H - grad J|` against its bound at a random parameter.
pub fn truncation(kind: &str, mdp_seed: u64, theta_scale: f64, max_h: usize) -> Result<Vec<TruncationRow>, String> {
    let mdp = benchmark(kind, mdp_seed)?;
    let p = SoftmaxTabular::new(mdp.n_states, mdp.n_actions);
    let d = p.dim();
    let theta: Vec<f64> = (0..d).map(|i| theta_scale * ((i as f64 + 1.0) * 1.7).sin()).collect();
    let g = p.analytic_constants().map(|(g, _)| g).unwrap_or(2f64.sqrt());
    audit_truncation(&mdp, &p, &theta, 1..=max_h.max(1), g).map_err(|e| e.to_string())
}

#[derive(Serialize)]
pub struct Landscape {
    pub n: usize,
    pub span: f64,
    pub j_star: f64,
    pub min: f64,
    pub max: f64,
    /// Row-major, `j[iy * n + ix]` at `(x, y) = (-span + 2 span ix/(n-1), ...)`.
    pub j: Vec<f64>,
}

/// Exact `J` over the slice where the logits of action 1 in states 0 and 1
/// vary and every other logit is 0.
pub fn landscape(kind: &str, mdp_seed: u64, n: usize, span: f64) -> Result<Landscape, String> {
    if n < 2 {
        return Err("grid needs at least 2 points per side".into());
    }
    let mdp = benchmark(kind, mdp_seed)?;
    let p = SoftmaxTabular::new(mdp.n_states, mdp.n_actions);
    let oracle = TabularOracle::new(&mdp, &p, 1e-3).map_err(|e| e.to_string())?;
    let (ix, iy) = (p.index(0, 1), p.index(1, 1));
    let mut theta = vec![0.0; p.dim()];
    let step = 2.0 * span / (n - 1) as f64;
    let mut j = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            theta[ix] = -span + step * col as f64;
            theta[iy] = -span + step * row as f64;
            j.push(oracle.j(&theta).map_err(|e| e.to_string())?);
        }
    }
    let min = j.iter().copied().fold(f64::INFINITY, f64::min);
    let max = j.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Landscape { n, span, j_star: oracle.j_star(), min, max, j })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn training_curves(kind: &str, mdp_seed: u32, run_seed: u32, budget: u32, eta: f64) -> Result<String, JsError> {
    to_json(curves(kind, mdp_seed.into(), run_seed.into(), budget.into(), eta))
}

#[wasm_bindgen]
pub fn truncation_audit(kind: &str, mdp_seed: u32, theta_scale: f64, max_h: u32) -> Result<String, JsError> {
    to_json(truncation(kind, mdp_seed.into(), theta_scale, max_h as usize))
}

#[wasm_bindgen]
pub fn j_landscape(kind: &str, mdp_seed: u32, n: u32, span: f64) -> Result<String, JsError> {
    to_json(landscape(kind, mdp_seed.into(), n as usize, span))
}
