//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Results cross the boundary as flat `Float64Array`s; the page knows the
//! stride of each.

use flowcps::analysis::{noise_curve, theorem1_error};
use flowcps::samplers::rollout;
use flowcps::{uniform_grid, Point, Result, SamplerKind, VelocityField};
use wasm_bindgen::prelude::*;

/// Largest sample count the page may request.
pub const MAX_SAMPLES: usize = 20_000;

/// `[t_next, ideal, actual]` per step; `actual` is NaN where the step is
/// undefined.
pub fn curve_rows(sampler: &str, k: usize) -> Result<Vec<f64>> {
    let kind: SamplerKind = sampler.parse()?;
    let curve = noise_curve(kind, &uniform_grid(k)?)?;
    Ok(curve
        .points
        .iter()
        .flat_map(|p| [p.t_next, p.ideal, p.actual.unwrap_or(f64::NAN)])
        .collect())
}

/// `[x, y]` per terminal sample of `n` rollouts against the point-mass field
/// at `(cx, cy)`.
pub fn terminal_points(sampler: &str, k: usize, n: usize, seed: u64, cx: f64, cy: f64) -> Result<Vec<f64>> {
    let kind: SamplerKind = sampler.parse()?;
    let grid = uniform_grid(k)?;
    let field = VelocityField::DeltaOracle(Point::from([cx, cy]));
    let mut out = Vec::with_capacity(2 * n.min(MAX_SAMPLES));
    for i in 0..n.min(MAX_SAMPLES) {
        let traj = rollout(kind, &field, &grid, flowcps::rng::derive_seed(seed, i as u64))?;
        out.extend_from_slice(traj.terminal().coords());
    }
    Ok(out)
}

fn js(e: flowcps::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = noiseCurve)]
pub fn noise_curve_js(sampler: &str, k: usize) -> std::result::Result<Vec<f64>, JsError> {
    curve_rows(sampler, k).map_err(js)
}

#[wasm_bindgen(js_name = terminalSamples)]
pub fn terminal_samples_js(
    sampler: &str,
    k: usize,
    n: usize,
    seed: u32,
    cx: f64,
    cy: f64,
) -> std::result::Result<Vec<f64>, JsError> {
    terminal_points(sampler, k, n, seed as u64, cx, cy).map_err(js)
}

/// First-order noise-level error of Flow-SDE at one step.
#[wasm_bindgen(js_name = firstOrderError)]
pub fn first_order_error_js(t: f64, dt: f64, sigma: f64) -> std::result::Result<f64, JsError> {
    theorem1_error(t, dt, sigma)
        .map(|b| b.predicted_error)
        .map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_has_three_columns() {
        let rows = curve_rows("cps(0.9)", 8).unwrap();
        assert_eq!(rows.len(), 24);
        for r in rows.chunks(3) {
            assert!((r[1] - r[2]).abs() < 1e-12);
        }
        let gaps = curve_rows("cpws(dance, 0.3)", 8).unwrap();
        assert!(gaps[gaps.len() - 1].is_nan());
        assert!(curve_rows("nonsense", 8).is_err());
    }

    #[test]
    fn cps_collapses_onto_the_point() {
        let pts = terminal_points("cps(0.9)", 8, 50, 1, 0.5, -1.0).unwrap();
        assert_eq!(pts.len(), 100);
        for p in pts.chunks(2) {
            assert!((p[0] - 0.5).abs() < 1e-10 && (p[1] + 1.0).abs() < 1e-10);
        }
        let sde = terminal_points("flow_sde(dance, 0.7)", 8, 50, 1, 0.5, -1.0).unwrap();
        assert!(sde.chunks(2).any(|p| (p[0] - 0.5).abs() > 1e-3));
    }

    #[test]
    fn sample_count_is_capped() {
        let pts = terminal_points("ode", 2, MAX_SAMPLES + 5, 0, 0.0, 0.0).unwrap();
        assert_eq!(pts.len(), 2 * MAX_SAMPLES);
    }
}
