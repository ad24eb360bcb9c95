//! WebAssembly bindings for the demo page. Every export returns a JSON
//! string so the page needs no generated TypeScript types.

use lpos_core::cost::{comm_cost, CostParams, Scheme};
use lpos_core::ope::{derive_ope_key, encode_report, ope_encrypt, OpeParams, Padding};
use lpos_core::sim::{run_scenario, RssModel, Scenario};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn err(e: impl ToString) -> JsError {
    JsError::new(&e.to_string())
}

/// Bits per sensing round for every scheme at `n = n_min..=n_max`, sampled
/// at no more than `points` values of `n`.
pub fn cost_curve_json(n_min: u64, n_max: u64, gamma: u64, points: u64) -> Result<Value, String> {
    if n_min == 0 || n_min > n_max || points < 2 {
        return Err("need 1 <= n_min <= n_max and at least 2 points".into());
    }
    let p = CostParams {
        gamma,
        ..CostParams::default()
    };
    let step = ((n_max - n_min) / (points - 1)).max(1);
    let mut ns: Vec<u64> = (n_min..=n_max).step_by(step as usize).collect();
    if ns.last() != Some(&n_max) {
        ns.push(n_max);
    }
    let series: Result<Vec<Value>, String> = Scheme::ALL
        .iter()
        .map(|&s| {
            let bits: Result<Vec<u64>, _> = ns.iter().map(|&n| comm_cost(s, n, &p)).collect();
            Ok(json!({ "scheme": s.name(), "bits": bits.map_err(|e| e.to_string())? }))
        })
        .collect();
    Ok(json!({
        "n": ns,
        "series": series?,
        "crossover": lpos_core::cost::lpos_eceg_crossover(&p, n_max),
    }))
}

/// Ciphertext of every `gamma`-bit reading under a key derived from
/// `passphrase`, with a fixed padding, as `[[reading, ciphertext], ...]`.
pub fn ope_curve_json(passphrase: &str, gamma: u32) -> Result<Value, String> {
    if !(1..=10).contains(&gamma) {
        return Err("gamma must be in 1..=10 for the demo".into());
    }
    let params = OpeParams::for_rss_bits(gamma).map_err(|e| e.to_string())?;
    let key = derive_ope_key(passphrase.as_bytes(), b"lpos/demo").map_err(|e| e.to_string())?;
    let pad_bits = params.padding_bits(gamma);
    let padding = Padding::new((1u128 << pad_bits) / 3, pad_bits).map_err(|e| e.to_string())?;
    let mut points = Vec::with_capacity(1 << gamma);
    for r in 0..(1u64 << gamma) {
        let m = encode_report(padding, r, gamma, &params).map_err(|e| e.to_string())?;
        let c = ope_encrypt(&key, m, &params).map_err(|e| e.to_string())?;
        // Ciphertexts exceed 2^53 at larger gamma; send them as strings.
        points.push(json!([r, c.0.to_string()]));
    }
    Ok(json!({
        "plaintext_bits": params.plaintext_bits(),
        "ciphertext_bits": params.ciphertext_bits(),
        "points": points,
    }))
}

/// One private sensing round over explicit readings at the test profile.
pub fn sensing_round_json(
    readings: &[u64],
    tau: u64,
    gamma: u32,
    seed: u64,
) -> Result<Value, String> {
    let mut s = Scenario::new(readings.len(), 1, tau, gamma, seed);
    s.rss = RssModel::Explicit([(1, readings.to_vec())].into());
    s.validate().map_err(|e| e.to_string())?;
    let rounds = run_scenario(&s).map_err(|e| e.to_string())?;
    let t = &rounds[0];
    let messages: Vec<Value> = t
        .entries
        .iter()
        .map(|e| {
            json!({
                "kind": e.kind.name(),
                "from": e.sender.to_string(),
                "to": match e.receiver {
                    lpos_core::sim::Receiver::Party(p) => p.to_string(),
                    lpos_core::sim::Receiver::Broadcast => "all".to_string(),
                },
                "bytes": e.wire.len(),
            })
        })
        .collect();
    let comparisons: Vec<Value> = t
        .invocations
        .iter()
        .map(|i| json!({ "user": i.user, "index": i.index, "b": i.b }))
        .collect();
    let decision = t.decision.as_ref();
    Ok(json!({
        "decision": decision.map(|d| d.outcome.to_string()),
        "exit": decision.map(|d| format!("{:?}", d.exit)),
        "votes": decision.map(|d| d.votes),
        "lambda": t.lambda,
        "oracle": t.oracle.map(|o| o.to_string()),
        "distinct": t.distinct_values,
        "comparisons": comparisons,
        "messages": messages,
        "total_bytes": t.total_bytes(),
        "modexp": t.metrics.modexp_count,
    }))
}

fn parse_readings(text: &str) -> Result<Vec<u64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("bad reading {s:?}")))
        .collect()
}

#[wasm_bindgen]
pub fn cost_curve(n_min: u32, n_max: u32, gamma: u32, points: u32) -> Result<String, JsError> {
    cost_curve_json(n_min.into(), n_max.into(), gamma.into(), points.into())
        .map(|v| v.to_string())
        .map_err(err)
}

#[wasm_bindgen]
pub fn ope_curve(passphrase: &str, gamma: u32) -> Result<String, JsError> {
    ope_curve_json(passphrase, gamma)
        .map(|v| v.to_string())
        .map_err(err)
}

/// `readings` is a comma- or space-separated list.
#[wasm_bindgen]
pub fn sensing_round(readings: &str, tau: u32, gamma: u32, seed: u32) -> Result<String, JsError> {
    let readings = parse_readings(readings).map_err(err)?;
    if readings.is_empty() {
        return Err(err("enter at least one reading"));
    }
    sensing_round_json(&readings, tau.into(), gamma, seed.into())
        .map(|v| v.to_string())
        .map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_curve_has_every_scheme_and_endpoints() {
        let v = cost_curve_json(2, 2048, 16, 50).unwrap();
        assert_eq!(v["series"].as_array().unwrap().len(), 4);
        let ns = v["n"].as_array().unwrap();
        assert_eq!(
            (ns[0].as_u64(), ns.last().unwrap().as_u64()),
            (Some(2), Some(2048))
        );
        assert!(v["crossover"].as_u64().is_some());
        assert!(cost_curve_json(0, 10, 16, 5).is_err());
    }

    #[test]
    fn ope_curve_is_increasing() {
        let v = ope_curve_json("demo", 6).unwrap();
        let cs: Vec<u128> = v["points"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p[1].as_str().unwrap().parse().unwrap())
            .collect();
        assert_eq!(cs.len(), 64);
        assert!(cs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn sensing_round_matches_oracle() {
        let v = sensing_round_json(&[10, 200, 150, 30, 99], 100, 8, 1).unwrap();
        assert_eq!(v["decision"], v["oracle"]);
        assert_eq!(v["decision"], "free");
        assert!(!v["messages"].as_array().unwrap().is_empty());
        assert_eq!(parse_readings("1, 2 3").unwrap(), [1, 2, 3]);
        assert!(sensing_round_json(&[300], 100, 8, 1).is_err());
    }
}
