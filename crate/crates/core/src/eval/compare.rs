use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::ErrorSample;
use crate::sim::SensorKind;

/// One (location, sensor kind) pair of two sample sets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleDiff {
    pub location_id: String,
    pub sensor_kind: SensorKind,
    pub a_m: Option<f64>,
    pub b_m: Option<f64>,
}

impl SampleDiff {
    /// `b - a`, when both sides have a value.
    pub fn delta_m(&self) -> Option<f64> {
        Some(self.b_m? - self.a_m?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub rows: Vec<SampleDiff>,
    pub max_abs_delta_m: f64,
    pub only_in_a: usize,
    pub only_in_b: usize,
}

impl CompareReport {
    /// True when both sets cover the same pairs with identical values.
    pub fn is_identical(&self) -> bool {
        self.only_in_a == 0
            && self.only_in_b == 0
            && self.rows.iter().all(|r| r.a_m.map(f64::to_bits) == r.b_m.map(f64::to_bits))
    }
}

fn key_map(samples: &[ErrorSample]) -> BTreeMap<(String, SensorKind), f64> {
    // a repeated pair keeps its last value
    samples
        .iter()
        .map(|s| ((s.location_id.clone(), s.sensor_kind), s.error_m))
        .collect()
}

/// Joins two sample sets on (location_id, sensor_kind).
pub fn compare_samples(a: &[ErrorSample], b: &[ErrorSample]) -> CompareReport {
    let ma = key_map(a);
    let mb = key_map(b);
    let mut keys: Vec<_> = ma.keys().chain(mb.keys()).cloned().collect();
    keys.sort();
    keys.dedup();
    let mut rows = Vec::with_capacity(keys.len());
    let (mut only_a, mut only_b, mut max_abs) = (0, 0, 0.0f64);
    for (loc, kind) in keys {
        let row = SampleDiff {
            a_m: ma.get(&(loc.clone(), kind)).copied(),
            b_m: mb.get(&(loc.clone(), kind)).copied(),
            location_id: loc,
            sensor_kind: kind,
        };
        match row.delta_m() {
            Some(d) => max_abs = max_abs.max(d.abs()),
            None if row.a_m.is_some() => only_a += 1,
            None => only_b += 1,
        }
        rows.push(row);
    }
    CompareReport {
        rows,
        max_abs_delta_m: max_abs,
        only_in_a: only_a,
        only_in_b: only_b,
    }
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = |x: Option<f64>| x.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into());
        writeln!(f, "{:<10} {:<5} {:>14} {:>14} {:>14}", "location", "kind", "a_m", "b_m", "delta_m")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<10} {:<5} {:>14} {:>14} {:>14}",
                r.location_id,
                r.sensor_kind.as_str(),
                v(r.a_m),
                v(r.b_m),
                v(r.delta_m())
            )?;
        }
        writeln!(f, "max |delta|: {:.6} m", self.max_abs_delta_m)?;
        writeln!(f, "only in a: {}, only in b: {}", self.only_in_a, self.only_in_b)?;
        write!(f, "identical: {}", if self.is_identical() { "yes" } else { "no" })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(id: &str, kind: SensorKind, e: f64) -> ErrorSample {
        ErrorSample {
            location_id: id.into(),
            sensor_kind: kind,
            error_m: e,
            timestamp_ms: 0,
        }
    }

    #[test]
    fn identical_sets_have_zero_diff() {
        let a = vec![s("L1", SensorKind::Gps, 3.0), s("L1", SensorKind::Rtk, 0.7)];
        let r = compare_samples(&a, &a);
        assert!(r.is_identical());
        assert_eq!(r.max_abs_delta_m, 0.0);
    }

    #[test]
    fn reports_deltas_and_missing_pairs() {
        let a = vec![s("L1", SensorKind::Gps, 3.0), s("L2", SensorKind::Gps, 1.0)];
        let b = vec![s("L1", SensorKind::Gps, 3.5), s("L3", SensorKind::Rtk, 1.0)];
        let r = compare_samples(&a, &b);
        assert!(!r.is_identical());
        assert_eq!(r.max_abs_delta_m, 0.5);
        assert_eq!((r.only_in_a, r.only_in_b), (1, 1));
        assert_eq!(r.rows.len(), 3);
        assert!(r.to_string().contains("identical: no"));
    }
}
