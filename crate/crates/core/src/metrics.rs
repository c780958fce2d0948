//! IPCW-weighted Brier score, Integrated Brier Score and truncated
//! time-dependent concordance, per cause.
//!
//! The censoring distribution `G` is a Kaplan-Meier estimate of the
//! censoring times (fitted on the training split). Evaluation horizons are
//! the 25/50/75% quantiles of the observed event times in the test data.

use serde::{Deserialize, Serialize};

use crate::baselines::KmCurve;
use crate::error::{Error, Result};
use crate::survdata::SurvivalDataset;

/// Per-subject observed outcome extracted from a dataset, in trajectory
/// order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub time: f64,
    pub status: u8,
    /// 1-based cause; `1` for single-event data.
    pub cause: usize,
}

pub fn outcomes(ds: &SurvivalDataset) -> Vec<Outcome> {
    ds.trajectories()
        .iter()
        .map(|t| Outcome {
            time: t.exit,
            status: t.status,
            cause: t.cause.unwrap_or(1),
        })
        .collect()
}

/// Empirical 25/50/75% quantiles of the observed event times (linear
/// interpolation between order statistics).
pub fn quantile_horizons(test: &SurvivalDataset) -> Result<(f64, f64, f64)> {
    let mut events: Vec<f64> = test
        .trajectories()
        .iter()
        .filter(|t| t.status == 1)
        .map(|t| t.exit)
        .collect();
    if events.is_empty() {
        return Err(Error::Metric("no events in test data".into()));
    }
    events.sort_by(f64::total_cmp);
    Ok((
        quantile(&events, 0.25),
        quantile(&events, 0.50),
        quantile(&events, 0.75),
    ))
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn ipcw_left(g: &KmCurve, t: f64) -> Result<f64> {
    let v = g.survival_left(t);
    if v <= 0.0 {
        return Err(Error::DegenerateWeight(t));
    }
    Ok(v)
}

fn ipcw_at(g: &KmCurve, t: f64) -> Result<f64> {
    let v = g.survival(t);
    if v <= 0.0 {
        return Err(Error::DegenerateWeight(t));
    }
    Ok(v)
}

/// IPCW Brier score of a survival predictor at time `t` (single-event data).
///
/// `BS(t) = n⁻¹ Σ [ 1{t_i <= t, δ=1} Ŝ_i(t)² / G(t_i⁻)
///                + 1{t_i > t} (1 − Ŝ_i(t))² / G(t) ]`;
/// subjects censored at or before `t` contribute nothing.
pub fn brier<S>(test: &[Outcome], surv: S, t: f64, g_hat: &KmCurve) -> Result<f64>
where
    S: Fn(usize, f64) -> f64,
{
    brier_cause(test, |i, u| 1.0 - surv(i, u), 1, t, g_hat)
}

/// Cause-k IPCW Brier score of a cumulative-incidence predictor
/// `cif(i, t) ~ F̂_k(t)`. Other-cause events count as non-events.
pub fn brier_cause<F>(
    test: &[Outcome],
    cif: F,
    cause: usize,
    t: f64,
    g_hat: &KmCurve,
) -> Result<f64>
where
    F: Fn(usize, f64) -> f64,
{
    if test.is_empty() {
        return Err(Error::Metric("empty test data".into()));
    }
    let mut total = 0.0;
    for (i, o) in test.iter().enumerate() {
        let f = cif(i, t);
        if o.time <= t && o.status == 1 {
            let y = f64::from(o.cause == cause);
            total += (y - f) * (y - f) / ipcw_left(g_hat, o.time)?;
        } else if o.time > t {
            total += f * f / ipcw_at(g_hat, t)?;
        }
    }
    Ok(total / test.len() as f64)
}

/// Integrated Brier Score `IBS(τ) = τ⁻¹ ∫_0^τ BS(u) du` via the trapezoid
/// rule on the grid of distinct observed times up to `τ` (with 0 and τ
/// included).
pub fn ibs<S>(test: &[Outcome], surv: S, tau: f64, g_hat: &KmCurve) -> Result<f64>
where
    S: Fn(usize, f64) -> f64,
{
    ibs_cause(test, |i, u| 1.0 - surv(i, u), 1, tau, g_hat)
}

pub fn ibs_cause<F>(
    test: &[Outcome],
    cif: F,
    cause: usize,
    tau: f64,
    g_hat: &KmCurve,
) -> Result<f64>
where
    F: Fn(usize, f64) -> f64,
{
    if !(tau > 0.0) {
        return Err(Error::Metric(format!("non-positive horizon {tau}")));
    }
    let grid = integration_grid(test, tau);
    let mut integral = 0.0;
    let mut prev_t = grid[0];
    let mut prev_bs = brier_cause(test, &cif, cause, prev_t, g_hat)?;
    for &u in &grid[1..] {
        let bs = brier_cause(test, &cif, cause, u, g_hat)?;
        integral += 0.5 * (bs + prev_bs) * (u - prev_t);
        prev_t = u;
        prev_bs = bs;
    }
    Ok(integral / tau)
}

fn integration_grid(test: &[Outcome], tau: f64) -> Vec<f64> {
    let mut grid = vec![0.0];
    grid.extend(test.iter().map(|o| o.time).filter(|&t| t <= tau));
    grid.push(tau);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// IPCW-truncated time-dependent concordance for cause `k`.
///
/// Comparable pairs `(i, l)`: subject `i` has a cause-`k` event at
/// `t_i <= τ`, and either `t_l > t_i` or `t_l == t_i` with an event of a
/// different cause. Pairs are weighted `G(t_i⁻)⁻²`; risk ties count half.
pub fn cindex_td(
    test: &[Outcome],
    risk: &[f64],
    tau: f64,
    g_hat: &KmCurve,
    cause: usize,
) -> Result<f64> {
    if risk.len() != test.len() {
        return Err(Error::Metric(format!(
            "{} risk scores for {} subjects",
            risk.len(),
            test.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, oi) in test.iter().enumerate() {
        if !(oi.status == 1 && oi.cause == cause && oi.time <= tau) {
            continue;
        }
        let g = ipcw_left(g_hat, oi.time)?;
        let w = 1.0 / (g * g);
        for (l, ol) in test.iter().enumerate() {
            if l == i {
                continue;
            }
            let comparable = ol.time > oi.time
                || (ol.time == oi.time && ol.status == 1 && ol.cause != cause);
            if !comparable {
                continue;
            }
            den += w;
            if risk[i] > risk[l] {
                num += w;
            } else if risk[i] == risk[l] {
                num += 0.5 * w;
            }
        }
    }
    if den == 0.0 {
        return Err(Error::Metric("no comparable pairs".into()));
    }
    Ok(num / den)
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: f64,
    pub brier: f64,
    pub ibs: f64,
    pub cindex: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseMetrics {
    pub cause: usize,
    pub at: Vec<HorizonMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringDiagnostics {
    /// G at each horizon.
    pub g_at_horizons: Vec<f64>,
    /// Smallest censoring-survival value used in any weight.
    pub min_g_used: f64,
    pub n_train_censored: usize,
}

/// Evaluation summary on the natural (0..1) scale; the CLI report scales
/// values by 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub horizons: (f64, f64, f64),
    pub per_cause: Vec<CauseMetrics>,
    pub censoring: CensoringDiagnostics,
}

/// Compute the full report for per-subject incidence predictors.
///
/// `cifs[i]` must yield `F̂_k(t)` for test subject `i` via
/// `(cause, t) -> f64`. For single-event models pass `1 − Ŝ_i(t)`.
pub fn evaluate<F>(
    test: &SurvivalDataset,
    n_causes: usize,
    cifs: F,
    g_hat: &KmCurve,
) -> Result<MetricsReport>
where
    F: Fn(usize, usize, f64) -> f64,
{
    let out = outcomes(test);
    let horizons = quantile_horizons(test)?;
    let hs = [horizons.0, horizons.1, horizons.2];
    let mut per_cause = Vec::with_capacity(n_causes);
    let mut min_g: f64 = 1.0;
    for o in &out {
        if o.status == 1 {
            min_g = min_g.min(g_hat.survival_left(o.time));
        }
    }
    for k in 1..=n_causes {
        let mut at = Vec::with_capacity(3);
        for &tau in &hs {
            let brier_k = brier_cause(&out, |i, u| cifs(i, k, u), k, tau, g_hat)?;
            let ibs_k = ibs_cause(&out, |i, u| cifs(i, k, u), k, tau, g_hat)?;
            let risk: Vec<f64> = (0..out.len()).map(|i| cifs(i, k, tau)).collect();
            let cindex = cindex_td(&out, &risk, tau, g_hat, k)?;
            at.push(HorizonMetrics {
                horizon: tau,
                brier: brier_k,
                ibs: ibs_k,
                cindex,
            });
        }
        per_cause.push(CauseMetrics { cause: k, at });
    }
    Ok(MetricsReport {
        horizons,
        per_cause,
        censoring: CensoringDiagnostics {
            g_at_horizons: hs.iter().map(|&t| g_hat.survival(t)).collect(),
            min_g_used: min_g,
            n_train_censored: 0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn no_censoring_g() -> KmCurve {
        KmCurve {
            times: vec![],
            survival: vec![],
            at_risk: vec![],
            events: vec![],
        }
    }

    fn event(time: f64) -> Outcome {
        Outcome {
            time,
            status: 1,
            cause: 1,
        }
    }

    fn censored(time: f64) -> Outcome {
        Outcome {
            time,
            status: 0,
            cause: 1,
        }
    }

    #[test]
    fn quantiles_interpolate_linearly() {
        let ds = dataset_from_times(&[(1.0, 1), (2.0, 1), (3.0, 1), (4.0, 1)]);
        let (q25, q50, q75) = quantile_horizons(&ds).unwrap();
        assert!((q25 - 1.75).abs() < 1e-12);
        assert!((q50 - 2.5).abs() < 1e-12);
        assert!((q75 - 3.25).abs() < 1e-12);
    }

    #[test]
    fn single_event_quantiles_collapse() {
        let ds = dataset_from_times(&[(2.0, 1), (5.0, 0)]);
        let (q25, q50, q75) = quantile_horizons(&ds).unwrap();
        assert_eq!((q25, q50, q75), (2.0, 2.0, 2.0));
    }

    #[test]
    fn cr_example_median_is_two() {
        // all-cause event times 1.3 and 2.7
        let ds = dataset_from_times(&[(1.3, 1), (0.5, 0), (2.7, 1)]);
        let (_, q50, _) = quantile_horizons(&ds).unwrap();
        assert!((q50 - 2.0).abs() < 1e-12);
    }

    fn dataset_from_times(times: &[(f64, u8)]) -> SurvivalDataset {
        use crate::survdata::{FeatureSchema, SubjectSpan};
        let spans = times
            .iter()
            .enumerate()
            .map(|(i, &(t, s))| SubjectSpan {
                subject_id: format!("s{i}"),
                t_start: 0.0,
                t_end: t,
                status: s,
                cause: None,
                features: vec![],
            })
            .collect();
        SurvivalDataset::new(spans, FeatureSchema::default(), 1)
    }

    #[test]
    fn brier_no_censoring_uniform_half() {
        let test = vec![event(1.0), event(3.0)];
        let g = no_censoring_g();
        let bs = brier(&test, |_, _| 0.5, 2.0, &g).unwrap();
        assert!((bs - 0.25).abs() < 1e-15);
    }

    #[test]
    fn brier_perfect_oracle_is_zero() {
        let test = vec![event(1.0), event(3.0), event(5.0)];
        let times = [1.0, 3.0, 5.0];
        let g = no_censoring_g();
        let s = |i: usize, t: f64| f64::from(times[i] > t);
        for tau in [0.5, 2.0, 4.0] {
            assert_eq!(brier(&test, s, tau, &g).unwrap(), 0.0);
        }
    }

    /// Straight-line reimplementation of the weighted sum, kept independent
    /// of the production code path.
    fn brier_bruteforce(
        test: &[Outcome],
        s_at_t: &[f64],
        t: f64,
        g: &KmCurve,
    ) -> f64 {
        let n = test.len() as f64;
        let mut total = 0.0;
        for (i, o) in test.iter().enumerate() {
            if o.time <= t && o.status == 1 {
                total += (0.0 - s_at_t[i]).powi(2) / g.survival_left(o.time);
            }
            if o.time > t {
                total += (1.0 - s_at_t[i]).powi(2) / g.survival(t);
            }
        }
        total / n
    }

    #[test]
    fn brier_matches_bruteforce_under_censoring() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..25 {
            let n = 8 + rng.random_range(0..23);
            let test: Vec<Outcome> = (0..n)
                .map(|_| Outcome {
                    time: 0.25 * (1 + rng.random_range(0..20)) as f64,
                    status: u8::from(rng.random_bool(0.6)),
                    cause: 1,
                })
                .collect();
            // censoring KM from an independent draw of the same shape
            let g_src = dataset_from_times(
                &(0..n)
                    .map(|_| {
                        (
                            0.25 * (1 + rng.random_range(0..20)) as f64,
                            u8::from(rng.random_bool(0.5)),
                        )
                    })
                    .collect::<Vec<_>>(),
            );
            let g = crate::baselines::km_censoring(&g_src).unwrap();
            let s: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let t = 2.5;
            if test
                .iter()
                .any(|o| o.time <= t && o.status == 1 && g.survival_left(o.time) <= 0.0)
                || g.survival(t) <= 0.0
            {
                continue; // degenerate weights are a tested error path
            }
            let got = brier(&test, |i, _| s[i], t, &g).unwrap();
            let want = brier_bruteforce(&test, &s, t, &g);
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn brier_degenerate_weight_is_an_error() {
        // lone censored subject at 1.0 makes G(t) = 0 beyond it
        let g_src = dataset_from_times(&[(1.0, 0)]);
        let g = crate::baselines::km_censoring(&g_src).unwrap();
        let test = vec![event(0.5), censored(3.0)];
        assert!(matches!(
            brier(&test, |_, _| 0.5, 2.0, &g),
            Err(Error::DegenerateWeight(_))
        ));
    }

    #[test]
    fn ibs_of_constant_brier_is_that_constant() {
        // no events before tau and Ŝ constant: BS(u) = (1 − s)² for all u
        let test = vec![censored(10.0), censored(12.0)];
        let g = no_censoring_g();
        let s = 0.4;
        let want = (1.0 - s) * (1.0 - s);
        let got = ibs(&test, |_, _| s, 5.0, &g).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn ibs_matches_fine_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 20;
        let test: Vec<Outcome> = (0..n)
            .map(|_| Outcome {
                time: 0.2 + rng.random::<f64>() * 4.0,
                status: u8::from(rng.random_bool(0.7)),
                cause: 1,
            })
            .collect();
        let g = no_censoring_g();
        // per-subject exponential predictors make BS piecewise smooth
        let rates: Vec<f64> = (0..n).map(|_| 0.2 + rng.random::<f64>()).collect();
        let surv = |i: usize, t: f64| (-rates[i] * t).exp();
        let tau = 3.0;
        let got = ibs(&test, surv, tau, &g).unwrap();

        let m = 1000;
        let mut fine = 0.0;
        let mut prev = brier(&test, surv, 0.0, &g).unwrap();
        for i in 1..=m {
            let u = tau * i as f64 / m as f64;
            let bs = brier(&test, surv, u, &g).unwrap();
            fine += 0.5 * (bs + prev) * (tau / m as f64);
            prev = bs;
        }
        fine /= tau;
        assert!((got - fine).abs() < 1e-3, "{got} vs {fine}");
    }

    #[test]
    fn cindex_perfectly_ordered_risks() {
        let test = vec![event(1.0), event(2.0), event(3.0), censored(4.0)];
        let risk = vec![4.0, 3.0, 2.0, 1.0]; // earlier event = higher risk
        let g = no_censoring_g();
        let c = cindex_td(&test, &risk, 10.0, &g, 1).unwrap();
        assert_eq!(c, 1.0);
    }

    #[test]
    fn cindex_constant_risks_is_half() {
        let test = vec![event(1.0), event(2.0), censored(3.0)];
        let risk = vec![0.7, 0.7, 0.7];
        let g = no_censoring_g();
        let c = cindex_td(&test, &risk, 10.0, &g, 1).unwrap();
        assert_eq!(c, 0.5);
    }

    #[test]
    fn cindex_no_comparable_pairs_is_an_error() {
        let test = vec![censored(1.0), censored(2.0)];
        let risk = vec![0.1, 0.2];
        let g = no_censoring_g();
        assert!(cindex_td(&test, &risk, 10.0, &g, 1).is_err());
    }

    /// All-pairs enumeration following the definition verbatim.
    fn cindex_bruteforce(
        test: &[Outcome],
        risk: &[f64],
        tau: f64,
        g: &KmCurve,
        cause: usize,
    ) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..test.len() {
            for l in 0..test.len() {
                if i == l {
                    continue;
                }
                let (oi, ol) = (&test[i], &test[l]);
                let i_event = oi.status == 1 && oi.cause == cause && oi.time <= tau;
                let later = ol.time > oi.time;
                let tied_other_cause =
                    ol.time == oi.time && ol.status == 1 && ol.cause != cause;
                if !(i_event && (later || tied_other_cause)) {
                    continue;
                }
                let w = g.survival_left(oi.time).powi(-2);
                den += w;
                num += if risk[i] > risk[l] {
                    w
                } else if risk[i] == risk[l] {
                    0.5 * w
                } else {
                    0.0
                };
            }
        }
        num / den
    }

    #[test]
    fn cindex_matches_bruteforce_with_competing_causes() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..30 {
            let n = 8 + rng.random_range(0..8);
            let test: Vec<Outcome> = (0..n)
                .map(|_| Outcome {
                    time: 0.5 * (1 + rng.random_range(0..8)) as f64,
                    status: u8::from(rng.random_bool(0.7)),
                    cause: 1 + rng.random_range(0..2),
                })
                .collect();
            let g_src = dataset_from_times(
                &(0..n)
                    .map(|_| {
                        (
                            0.5 * (1 + rng.random_range(0..8)) as f64,
                            u8::from(rng.random_bool(0.5)),
                        )
                    })
                    .collect::<Vec<_>>(),
            );
            let g = crate::baselines::km_censoring(&g_src).unwrap();
            let risk: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let tau = 3.0;
            let has_pairs = test.iter().enumerate().any(|(_, o)| {
                o.status == 1 && o.cause == 1 && o.time <= tau && g.survival_left(o.time) > 0.0
            });
            if !has_pairs {
                continue;
            }
            if test
                .iter()
                .any(|o| o.status == 1 && o.time <= tau && g.survival_left(o.time) <= 0.0)
            {
                continue;
            }
            let got = cindex_td(&test, &risk, tau, &g, 1).unwrap();
            let want = cindex_bruteforce(&test, &risk, tau, &g, 1);
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn metrics_invariant_under_subject_permutation() {
        let test = vec![event(1.0), event(2.5), censored(3.0), event(0.5)];
        let s = [0.2, 0.6, 0.9, 0.1];
        let g = no_censoring_g();
        let bs = brier(&test, |i, _| s[i], 2.0, &g).unwrap();
        let perm = [3usize, 1, 0, 2];
        let test_p: Vec<Outcome> = perm.iter().map(|&i| test[i]).collect();
        let bs_p = brier(&test_p, |i, _| s[perm[i]], 2.0, &g).unwrap();
        assert_eq!(bs, bs_p);

        let risk = [0.9, 0.5, 0.2, 1.0];
        let c = cindex_td(&test, &risk, 5.0, &g, 1).unwrap();
        let risk_p: Vec<f64> = perm.iter().map(|&i| risk[i]).collect();
        let c_p = cindex_td(&test_p, &risk_p, 5.0, &g, 1).unwrap();
        assert_eq!(c, c_p);
    }

    #[test]
    fn cindex_invariant_under_monotone_risk_transform() {
        let test = vec![event(1.0), event(2.5), censored(3.0), event(0.5), censored(4.0)];
        let risk = [0.9, 0.5, 0.2, 1.0, 0.4];
        let g = no_censoring_g();
        let a = cindex_td(&test, &risk, 5.0, &g, 1).unwrap();
        let squashed: Vec<f64> = risk.iter().map(|r| (5.0 * r).tanh()).collect();
        let b = cindex_td(&test, &squashed, 5.0, &g, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn other_cause_events_count_as_nonevents_in_cause_brier() {
        let test = vec![
            Outcome {
                time: 1.0,
                status: 1,
                cause: 2,
            },
            event(2.0),
        ];
        let g = no_censoring_g();
        // F̂_1 ≡ 0: the cause-2 event at t=1 must contribute (0 − 0)² = 0,
        // the cause-1 event at t=2 contributes (1 − 0)² = 1
        let bs = brier_cause(&test, |_, _| 0.0, 1, 3.0, &g).unwrap();
        assert!((bs - 0.5).abs() < 1e-15);
    }
}
