//! Browser bindings: stream a synthetic video over a trace, and watch the
//! trace selector pick among links of known difficulty.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankabr::baselines::{Bba, MpcConfig, RateBased, RobustMpc};
use rankabr::data::NetworkTrace;
use rankabr::qoe::{qoe_lin, LinWeights};
use rankabr::select::{BanditConfig, DiscountedUcb};
use rankabr::sim::{rollout, BitrateSelector, SimConfig, StepOutcome};
use rankabr::synth::{default_manifest, synthetic_trace, TraceKind};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn parse_list(text: &str) -> Result<Vec<f64>, JsError> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| js_err(format!("not a number: {s:?}"))))
        .collect()
}

/// One-second bandwidth samples, comma separated. `kind` is "markov" or "cliff".
#[wasm_bindgen]
pub fn generate_trace(kind: &str, seconds: usize, seed: u64) -> Result<String, JsError> {
    let (kind, range) = match kind {
        "markov" => (TraceKind::Markov, (0.6, 4.5)),
        "cliff" => (TraceKind::Cliff, (4.0, 6.0)),
        other => return Err(js_err(format!("unknown trace kind {other:?}"))),
    };
    let t = synthetic_trace("demo", kind, seconds, range, seed);
    Ok(t.samples().iter().map(|s| s.mbps.to_string()).collect::<Vec<_>>().join(","))
}

#[derive(Serialize)]
struct Playback {
    abr: String,
    qoe_lin: f64,
    total_rebuffer: f64,
    mean_vmaf: f64,
    steps: Vec<StepOutcome>,
}

/// Streams the 48-chunk demo video over the given one-second samples and
/// returns the per-chunk log as JSON. `weights` is (quality, rebuffer,
/// switch up, switch down).
#[wasm_bindgen]
pub fn simulate(abr: &str, mbps: &str, weights: &[f64]) -> Result<String, JsError> {
    let [quality, rebuffer, up, down] = weights else {
        return Err(js_err("expected four weights"));
    };
    let w = LinWeights::new(*quality, *rebuffer, *up, *down);
    let trace = NetworkTrace::from_uniform("demo", 1.0, &parse_list(mbps)?).map_err(js_err)?;
    let mut policy: Box<dyn BitrateSelector> = match abr {
        "rate" => Box::new(RateBased),
        "bba" => Box::new(Bba::default()),
        "mpc" => Box::new(RobustMpc::new(MpcConfig {
            weights: w,
            ..MpcConfig::default()
        })),
        other => return Err(js_err(format!("unknown policy {other:?}"))),
    };
    let manifest = default_manifest(0);
    let r = rollout(policy.as_mut(), &manifest, &trace, SimConfig::default(), 0.0, "demo").map_err(js_err)?;
    let out = Playback {
        abr: abr.to_string(),
        qoe_lin: qoe_lin(&r.session, &w),
        total_rebuffer: r.total_rebuffer(),
        mean_vmaf: r.session.vmaf.iter().sum::<f64>() / r.session.vmaf.len() as f64,
        steps: r.steps,
    };
    serde_json::to_string(&out).map_err(js_err)
}

#[derive(Serialize)]
struct BanditRun {
    pulls: Vec<usize>,
    last_values: Vec<f64>,
    sequence: Vec<usize>,
}

/// Runs the discounted UCB selector for `epochs` rounds on arms whose
/// rewards are drawn around the given means, returning pull counts as JSON.
#[wasm_bindgen]
pub fn run_selector(means: &str, gamma: f64, exploration: f64, epochs: usize, seed: u64) -> Result<String, JsError> {
    let means = parse_list(means)?;
    let ids: Vec<String> = (0..means.len()).map(|i| format!("arm{i}")).collect();
    let mut ucb = DiscountedUcb::new(ids, BanditConfig { gamma, exploration }).map_err(js_err)?;
    let mut pulls = vec![0; means.len()];
    let mut sequence = Vec::with_capacity(epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..epochs {
        let s = ucb.select_next();
        pulls[s.arm] += 1;
        sequence.push(s.arm);
        ucb.record_index(s.arm, means[s.arm] + rng.random_range(-0.1..0.1)).map_err(js_err)?;
    }
    let last_values = ucb.arms().iter().map(|a| a.mean().unwrap_or(f64::NAN)).collect();
    serde_json::to_string(&BanditRun {
        pulls,
        last_values,
        sequence,
    })
    .map_err(js_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_trace_parses_back() {
        let t = generate_trace("cliff", 60, 3).unwrap();
        assert_eq!(parse_list(&t).unwrap().len(), 60);
    }

    #[test]
    fn simulation_covers_every_chunk() {
        let t = generate_trace("markov", 300, 1).unwrap();
        for abr in ["rate", "bba", "mpc"] {
            let json = simulate(abr, &t, &[1.0, 4.0, 1.0, 2.0]).unwrap();
            let v: serde_json::Value = serde_json::from_str(&json).unwrap();
            assert_eq!(v["steps"].as_array().unwrap().len(), 48);
        }
    }

    #[test]
    fn selector_favours_the_richer_arm() {
        let v: serde_json::Value =
            serde_json::from_str(&run_selector("0.8, 0.2", 0.999, 0.2, 400, 1).unwrap()).unwrap();
        let pulls = v["pulls"].as_array().unwrap();
        assert!(pulls[0].as_u64().unwrap() > pulls[1].as_u64().unwrap());
    }
}
