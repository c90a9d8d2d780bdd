//! SplitMix64 against vectors produced by an independent implementation.

use panet::rng::{derive_seed, SplitMix64};
use serde_json::Value;

fn cases() -> Vec<Value> {
    let text = include_str!("data/splitmix64_golden.json");
    let v: Value = serde_json::from_str(text).unwrap();
    v["cases"].as_array().unwrap().clone()
}

fn u64s(v: &Value) -> Vec<u64> {
    v.as_array().unwrap().iter().map(|x| x.as_str().unwrap().parse().unwrap()).collect()
}

fn f64s(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_str().unwrap().parse().unwrap()).collect()
}

#[test]
fn raw_and_uniform_streams_match() {
    for c in cases() {
        let seed: u64 = c["seed"].as_str().unwrap().parse().unwrap();
        let mut r = SplitMix64::new(seed);
        let got: Vec<u64> = (0..8).map(|_| r.next_u64()).collect();
        assert_eq!(got, u64s(&c["u64"]), "seed {seed}");

        let mut r = SplitMix64::new(seed);
        let got: Vec<f64> = (0..4).map(|_| r.next_f64()).collect();
        assert_eq!(got, f64s(&c["f64"]), "seed {seed}");

        let mut r = SplitMix64::new(seed);
        let ns: Vec<u64> = c["below_n"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
        let got: Vec<u64> = ns.iter().map(|&n| r.below(n as usize) as u64).collect();
        let want: Vec<u64> = c["below"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
        assert_eq!(got, want, "seed {seed}");

        let mut r = SplitMix64::new(seed);
        let mut order: Vec<u64> = (0..10).collect();
        r.shuffle(&mut order);
        let want: Vec<u64> = c["shuffle10"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
        assert_eq!(order, want, "seed {seed}");

        let got: Vec<u64> = (0..4).map(|k| derive_seed(seed, k)).collect();
        assert_eq!(got, u64s(&c["derive"]), "seed {seed}");
    }
}

#[test]
fn normal_stream_matches_to_libm_precision() {
    for c in cases() {
        let seed: u64 = c["seed"].as_str().unwrap().parse().unwrap();
        let mut r = SplitMix64::new(seed);
        for want in f64s(&c["normal"]) {
            let got = r.normal();
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "seed {seed}: {got} vs {want}");
        }
    }
}
