//! Kaplan-Meier product-limit estimation with delayed-entry risk sets.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::survdata::SurvivalDataset;

/// A product-limit survival curve: right-continuous step function dropping
/// at each distinct event time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    /// Distinct event times, ascending.
    pub times: Vec<f64>,
    /// `S(t)` immediately after each time.
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl KmCurve {
    /// Right-continuous evaluation `S(t)`; `S(0) = 1`.
    pub fn survival(&self, t: f64) -> f64 {
        match self.times.partition_point(|&u| u <= t) {
            0 => 1.0,
            i => self.survival[i - 1],
        }
    }

    /// Left limit `S(t-)`: the product over drops strictly before `t`.
    pub fn survival_left(&self, t: f64) -> f64 {
        match self.times.partition_point(|&u| u < t) {
            0 => 1.0,
            i => self.survival[i - 1],
        }
    }
}

/// Kaplan-Meier estimate treating `status == 1` (any cause) as the event.
pub fn km_fit(ds: &SurvivalDataset) -> Result<KmCurve> {
    km_with_indicator(ds, |status| status == 1)
}

/// Kaplan-Meier estimate of the censoring distribution `G`: censoring
/// (`status == 0`) is the "event" and real events censor it.
pub fn km_censoring(ds: &SurvivalDataset) -> Result<KmCurve> {
    km_with_indicator(ds, |status| status == 0)
}

fn km_with_indicator(ds: &SurvivalDataset, is_event: impl Fn(u8) -> bool) -> Result<KmCurve> {
    let trajs = ds.trajectories();
    let mut subjects: Vec<(f64, f64, bool)> = trajs
        .iter()
        .map(|t| (t.entry, t.exit, is_event(t.status)))
        .collect();
    subjects.sort_by(|a, b| a.1.total_cmp(&b.1));

    let mut times: Vec<f64> = subjects
        .iter()
        .filter_map(|&(_, exit, ev)| ev.then_some(exit))
        .collect();
    times.dedup();

    let mut survival = Vec::with_capacity(times.len());
    let mut at_risk = Vec::with_capacity(times.len());
    let mut events = Vec::with_capacity(times.len());
    let mut s = 1.0;
    for &t in &times {
        // delayed entry: at risk at t means entry < t <= exit
        let n = subjects
            .iter()
            .filter(|&&(entry, exit, _)| entry < t && t <= exit)
            .count();
        let d = subjects
            .iter()
            .filter(|&&(_, exit, ev)| ev && exit == t)
            .count();
        s *= 1.0 - d as f64 / n as f64;
        times_push_checked(n, d);
        survival.push(s);
        at_risk.push(n);
        events.push(d);
    }
    Ok(KmCurve {
        times,
        survival,
        at_risk,
        events,
    })
}

fn times_push_checked(n: usize, d: usize) {
    debug_assert!(n >= d && n > 0, "risk set smaller than event count");
}
