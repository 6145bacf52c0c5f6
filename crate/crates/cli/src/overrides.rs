// Copyright (c) The dagbft Authors
// SPDX-License-Identifier: Apache-2.0

//! `key=value` scenario overrides shared by flags and sweeps.

use std::ops::RangeInclusive;

use dagbft::{ConfigError, CrashSpec, DelayModel, Interleave, Scenario};

pub const KEYS: &[&str] = &[
    "protocol",
    "n",
    "f",
    "k",
    "offset",
    "delay",
    "drop",
    "drop-from",
    "crash",
    "equivocate",
    "gst",
    "round-timeout",
    "rounds",
    "rate",
    "drain",
    "interleave",
    "fast-threshold",
    "seed",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.trim().parse().map_err(|_| ConfigError(format!("{key}: cannot parse {v:?}")))
}

/// `+`-separated items; empty means none.
fn items(v: &str) -> impl Iterator<Item = &str> {
    v.split('+').map(str::trim).filter(|s| !s.is_empty())
}

/// `1.5`, `fixed:1.5` or `uniform:LO:HI`.
pub fn parse_delay(v: &str) -> Result<DelayModel, ConfigError> {
    let parts: Vec<&str> = v.split(':').collect();
    match parts.as_slice() {
        [d] | ["fixed", d] => Ok(DelayModel::Fixed { delay: num("delay", d)? }),
        ["uniform", lo, hi] => Ok(DelayModel::Uniform { lo: num("delay", lo)?, hi: num("delay", hi)? }),
        _ => Err(ConfigError(format!("delay: expected D, fixed:D or uniform:LO:HI, got {v:?}"))),
    }
}

/// `R` (crashed from the start) or `R@T`.
pub fn parse_crash(v: &str) -> Result<CrashSpec, ConfigError> {
    let (r, at) = v.split_once('@').unwrap_or((v, "0"));
    Ok(CrashSpec { replica: num("crash", r)?, at: num("crash", at)? })
}

/// `A..B` or `A..=B`, both inclusive, or a single seed.
pub fn parse_seeds(v: &str) -> Result<RangeInclusive<u64>, ConfigError> {
    let range = match v.split_once("..") {
        Some((a, b)) => num("seeds", a)?..=num("seeds", b.trim_start_matches('='))?,
        None => {
            let s = num("seeds", v)?;
            s..=s
        }
    };
    if range.is_empty() {
        return Err(ConfigError(format!("seeds: empty range {v:?}")));
    }
    Ok(range)
}

pub fn apply(s: &mut Scenario, key: &str, v: &str) -> Result<(), ConfigError> {
    match key {
        "protocol" => s.protocol = v.parse().map_err(ConfigError)?,
        "n" => s.n = num(key, v)?,
        "f" => s.f = Some(num(key, v)?),
        "k" => s.k = Some(num(key, v)?),
        "offset" => s.offset = Some(num(key, v)?),
        "delay" => s.delay = parse_delay(v)?,
        "drop" => s.drop_rate = num(key, v)?,
        "drop-from" => s.drop_from = items(v).map(|r| num(key, r)).collect::<Result<_, _>>()?,
        "crash" => s.crashes = items(v).map(parse_crash).collect::<Result<_, _>>()?,
        "equivocate" => s.equivocators = items(v).map(|r| num(key, r)).collect::<Result<_, _>>()?,
        "gst" => s.gst = num(key, v)?,
        "round-timeout" => s.round_timeout = Some(num(key, v)?),
        "rounds" => s.rounds = num(key, v)?,
        "rate" => s.rate = num(key, v)?,
        "drain" => s.drain = num(key, v)?,
        "interleave" => {
            s.interleave = match v {
                "per-round" | "per_round" => Interleave::PerRound,
                "per-segment" | "per_segment" => Interleave::PerSegment,
                _ => return Err(ConfigError(format!("interleave: {v:?} (per-round, per-segment)"))),
            }
        }
        "fast-threshold" => s.fast_threshold = Some(num(key, v)?),
        "seed" => s.seed = num(key, v)?,
        _ => return Err(ConfigError(format!("unknown key {key:?}; known: {}", KEYS.join(", ")))),
    }
    Ok(())
}

/// One sweep axis from `key=v1,v2,...`.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

pub fn parse_axis(spec: &str) -> Result<Axis, ConfigError> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("sweep: expected key=v1,v2,..., got {spec:?}")))?;
    let key = key.trim().to_string();
    if !KEYS.contains(&key.as_str()) {
        return Err(ConfigError(format!("sweep: unknown key {key:?}")));
    }
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
    Ok(Axis { key, values })
}

/// Cartesian product of the axes, each point as `(key, value)` pairs.
pub fn points(axes: &[Axis]) -> Vec<Vec<(String, String)>> {
    axes.iter().fold(vec![vec![]], |acc, axis| {
        acc.iter()
            .flat_map(|p| {
                axis.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((axis.key.clone(), v.clone()));
                    q
                })
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use dagbft::ProtocolMode;

    #[test]
    fn parses_values() {
        assert_eq!(parse_delay("2").unwrap(), DelayModel::Fixed { delay: 2.0 });
        assert_eq!(parse_delay("uniform:0.5:2").unwrap(), DelayModel::Uniform { lo: 0.5, hi: 2.0 });
        assert!(parse_delay("normal:1").is_err());
        assert_eq!(parse_crash("3").unwrap(), CrashSpec { replica: 3, at: 0.0 });
        assert_eq!(parse_crash("1@12.5").unwrap(), CrashSpec { replica: 1, at: 12.5 });
        assert_eq!(parse_seeds("0..19").unwrap(), 0..=19);
        assert_eq!(parse_seeds("3..=4").unwrap(), 3..=4);
        assert_eq!(parse_seeds("7").unwrap(), 7..=7);
        assert!(parse_seeds("5..1").is_err());
    }

    #[test]
    fn applies_overrides() {
        let mut s = Scenario::default();
        apply(&mut s, "protocol", "bullshark").unwrap();
        apply(&mut s, "crash", "3@0+2@4").unwrap();
        apply(&mut s, "equivocate", "").unwrap();
        assert_eq!(s.protocol, ProtocolMode::Bullshark);
        assert_eq!(s.crashes.len(), 2);
        assert!(apply(&mut s, "colour", "red").is_err());
        assert!(apply(&mut s, "n", "four").is_err());
    }

    #[test]
    fn sweep_product() {
        let axes = [parse_axis("protocol=shoal,shoalpp").unwrap(), parse_axis("k=1,2").unwrap()];
        let p = points(&axes);
        assert_eq!(p.len(), 4);
        assert_eq!(p[1], vec![("protocol".into(), "shoal".into()), ("k".into(), "2".into())]);
        assert_eq!(points(&[]), vec![Vec::<(String, String)>::new()]);
        assert!(parse_axis("bogus=1").is_err());
    }
}
