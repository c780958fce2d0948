//! Hazard curves, survival probabilities and cumulative incidence functions
//! from any fitted per-interval hazard model.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ped::CutPoints;

/// Anything that yields a log-hazard for (base features, interval, transition).
///
/// Implementations evaluate at the interval representation time `t_j = κ_j`
/// and must not add the exposure offset: `exp` of the returned value is the
/// hazard rate, not the Poisson expectation.
pub trait HazardModel {
    fn cutpoints(&self) -> &CutPoints;
    fn n_causes(&self) -> usize;
    /// Log-hazard `ln λ_jk` for base feature vector `x`, 1-based interval `j`
    /// and transition `k`.
    fn log_hazard(&self, x: &[f64], interval: usize, k: usize) -> Result<f64>;
}

/// Per-interval hazards for all transitions at a fixed feature vector.
pub fn hazard_profile(model: &dyn HazardModel, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    let nj = model.cutpoints().n_intervals();
    let mut per_cause = Vec::with_capacity(model.n_causes());
    for k in 1..=model.n_causes() {
        let mut lam = Vec::with_capacity(nj);
        for j in 1..=nj {
            lam.push(model.log_hazard(x, j, k)?.exp());
        }
        per_cause.push(lam);
    }
    Ok(per_cause)
}

/// A survival step-hazard curve: piece-wise constant hazards over the
/// cut-point grid; `S(t)` is continuous and piece-wise log-linear.
///
/// Evaluation beyond the last cut-point carries the final hazard forward;
/// [`SurvivalCurve::extrapolated`] reports when that happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub cutpoints: CutPoints,
    /// `λ_j >= 0` for 1-based interval j (index j-1).
    pub hazards: Vec<f64>,
}

impl SurvivalCurve {
    pub fn new(cutpoints: CutPoints, hazards: Vec<f64>) -> Self {
        debug_assert_eq!(cutpoints.n_intervals(), hazards.len());
        SurvivalCurve { cutpoints, hazards }
    }

    /// Cumulative hazard `∫_0^t λ`.
    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let mut cum = 0.0;
        for j in 1..=self.cutpoints.n_intervals() {
            let a = self.cutpoints.left(j);
            if a >= t {
                break;
            }
            let b = self.cutpoints.right(j).min(t);
            cum += self.hazards[j - 1] * (b - a);
        }
        if t > self.cutpoints.max() {
            cum += self.last_hazard() * (t - self.cutpoints.max());
        }
        cum
    }

    pub fn survival(&self, t: f64) -> f64 {
        (-self.cumulative_hazard(t)).exp()
    }

    /// True when evaluating at `t` runs beyond the fitted follow-up.
    pub fn extrapolated(&self, t: f64) -> bool {
        t > self.cutpoints.max()
    }

    fn last_hazard(&self) -> f64 {
        *self.hazards.last().unwrap_or(&0.0)
    }
}

/// Cause-specific cumulative incidence functions and the all-cause survival
/// of a competing-risks model, under piece-wise constant cause hazards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CifCurve {
    pub cutpoints: CutPoints,
    /// `cause_hazards[k-1][j-1]` is `λ_jk`.
    pub cause_hazards: Vec<Vec<f64>>,
}

impl CifCurve {
    pub fn new(cutpoints: CutPoints, cause_hazards: Vec<Vec<f64>>) -> Self {
        CifCurve {
            cutpoints,
            cause_hazards,
        }
    }

    pub fn n_causes(&self) -> usize {
        self.cause_hazards.len()
    }

    fn total_hazard(&self, j: usize) -> f64 {
        self.cause_hazards.iter().map(|h| h[j - 1]).sum()
    }

    /// All-cause survival from the summed transition hazards.
    pub fn survival(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        let mut cum = 0.0;
        for j in 1..=self.cutpoints.n_intervals() {
            let a = self.cutpoints.left(j);
            if a >= t {
                break;
            }
            let b = self.cutpoints.right(j).min(t);
            cum += self.total_hazard(j) * (b - a);
        }
        if t > self.cutpoints.max() {
            cum += self.total_hazard(self.cutpoints.n_intervals()) * (t - self.cutpoints.max());
        }
        (-cum).exp()
    }

    /// Cumulative incidence `F_k(t) = ∫_0^t λ_k(u) S(u) du` for 1-based
    /// cause `k`, with the per-interval integral in closed form.
    pub fn cif(&self, k: usize, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let nj = self.cutpoints.n_intervals();
        let mut f = 0.0;
        let mut s_left = 1.0;
        for j in 1..=nj {
            let a = self.cutpoints.left(j);
            if a >= t {
                break;
            }
            // the last interval absorbs any extrapolation beyond the grid
            let b = if j == nj { t } else { self.cutpoints.right(j).min(t) };
            let lam_k = self.cause_hazards[k - 1][j - 1];
            let total = self.total_hazard(j);
            let width = b - a;
            let decay = total * width;
            let s_right = s_left * (-decay).exp();
            if decay > 1e-12 {
                f += lam_k / total * (s_left - s_right);
            } else {
                // Λ_j -> 0 limit of (λ_k/Λ_j)(S_a − S_b)
                f += lam_k * width * s_left;
            }
            s_left = s_right;
        }
        f
    }

    pub fn extrapolated(&self, t: f64) -> bool {
        t > self.cutpoints.max()
    }
}

/// Survival curve for a single-event model (or one designated cause of a
/// multi-cause model with the others ignored).
pub fn survival_curve(model: &dyn HazardModel, x: &[f64]) -> Result<SurvivalCurve> {
    survival_curve_for_cause(model, x, 1)
}

pub fn survival_curve_for_cause(
    model: &dyn HazardModel,
    x: &[f64],
    k: usize,
) -> Result<SurvivalCurve> {
    let nj = model.cutpoints().n_intervals();
    let mut lam = Vec::with_capacity(nj);
    for j in 1..=nj {
        lam.push(model.log_hazard(x, j, k)?.exp());
    }
    Ok(SurvivalCurve::new(model.cutpoints().clone(), lam))
}

/// Cause-specific incidence curves of a competing-risks model (`K >= 2`).
pub fn cif_curves(model: &dyn HazardModel, x: &[f64]) -> Result<CifCurve> {
    let per_cause = hazard_profile(model, x)?;
    Ok(CifCurve::new(model.cutpoints().clone(), per_cause))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn curve(cuts: Vec<f64>, hazards: Vec<f64>) -> SurvivalCurve {
        SurvivalCurve::new(CutPoints::new(cuts).unwrap(), hazards)
    }

    #[test]
    fn constant_hazard_matches_exponential() {
        let c = curve(vec![0.0, 1.0, 2.0], vec![1.0, 1.0]);
        assert!((c.survival(1.5) - (-1.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn zero_hazard_means_certain_survival() {
        let c = curve(vec![0.0, 1.0, 2.0], vec![0.0, 0.0]);
        for t in [0.0, 0.5, 1.0, 2.0, 5.0] {
            assert_eq!(c.survival(t), 1.0);
        }
    }

    #[test]
    fn survival_starts_at_one_and_extrapolation_is_flagged() {
        let c = curve(vec![0.0, 1.0], vec![0.7]);
        assert_eq!(c.survival(0.0), 1.0);
        assert!(!c.extrapolated(1.0));
        assert!(c.extrapolated(1.0001));
        // last hazard carried forward
        let expect = (-(0.7 * 2.5f64)).exp();
        assert!((c.survival(2.5) - expect).abs() < 1e-15);
    }

    /// Composite-Simpson integration of the step hazard, with the grid split
    /// at the cut-points so the integrand is smooth on every panel.
    fn quadrature_cumhaz(cuts: &CutPoints, hazards: &[f64], t: f64) -> f64 {
        let mut total = 0.0;
        for j in 1..=cuts.n_intervals() {
            let a = cuts.left(j);
            if a >= t {
                break;
            }
            let b = if j == cuts.n_intervals() {
                t.max(a)
            } else {
                cuts.right(j).min(t)
            };
            let m = 64;
            let h = (b - a) / m as f64;
            let lam = hazards[j - 1];
            let mut s = lam + lam; // endpoints f(a) + f(b), constant integrand
            for i in 1..m {
                s += if i % 2 == 1 { 4.0 * lam } else { 2.0 * lam };
            }
            total += s * h / 3.0;
        }
        total
    }

    fn quadrature_cif(cuts: &CutPoints, cause: &[Vec<f64>], k: usize, t: f64) -> f64 {
        let totals: Vec<f64> = (1..=cuts.n_intervals())
            .map(|j| cause.iter().map(|h| h[j - 1]).sum())
            .collect();
        let mut f = 0.0;
        let mut cum_left = 0.0;
        for j in 1..=cuts.n_intervals() {
            let a = cuts.left(j);
            if a >= t {
                break;
            }
            let b = if j == cuts.n_intervals() {
                t.max(a)
            } else {
                cuts.right(j).min(t)
            };
            let lam_k = cause[k - 1][j - 1];
            let lam_tot = totals[j - 1];
            let m = 128;
            let h = (b - a) / m as f64;
            let integrand =
                |u: f64| lam_k * (-(cum_left + lam_tot * (u - a))).exp();
            let mut s = integrand(a) + integrand(b);
            for i in 1..m {
                let u = a + h * i as f64;
                s += if i % 2 == 1 { 4.0 * integrand(u) } else { 2.0 * integrand(u) };
            }
            f += s * h / 3.0;
            cum_left += lam_tot * (b - a);
        }
        f
    }

    #[test]
    fn survival_matches_quadrature_on_random_hazards() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let nj = 1 + rng.random_range(0..6);
            let mut cuts = vec![0.0];
            let mut acc = 0.0;
            for _ in 0..nj {
                acc += 0.2 + rng.random::<f64>() * 1.5;
                cuts.push(acc);
            }
            let hazards: Vec<f64> = (0..nj).map(|_| rng.random::<f64>() * 2.0).collect();
            let cp = CutPoints::new(cuts).unwrap();
            let c = SurvivalCurve::new(cp.clone(), hazards.clone());
            for _ in 0..10 {
                let t = rng.random::<f64>() * cp.max();
                let want = (-quadrature_cumhaz(&cp, &hazards, t)).exp();
                assert!(
                    (c.survival(t) - want).abs() < 1e-10,
                    "S({t}) = {} vs {want}",
                    c.survival(t)
                );
            }
        }
    }

    #[test]
    fn symmetric_two_cause_cif_splits_evenly() {
        let cp = CutPoints::new(vec![0.0, 1.0, 2.0]).unwrap();
        let cif = CifCurve::new(cp, vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        for t in [0.3, 1.0, 1.7, 2.0] {
            let s = cif.survival(t);
            let f1 = cif.cif(1, t);
            let f2 = cif.cif(2, t);
            assert!((f1 - f2).abs() < 1e-15);
            assert!((f1 - (1.0 - s) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_active_cause_reduces_to_one_minus_survival() {
        let cp = CutPoints::new(vec![0.0, 1.0, 3.0]).unwrap();
        let cif = CifCurve::new(cp, vec![vec![0.8, 0.3], vec![0.0, 0.0]]);
        for t in [0.5, 1.0, 2.0, 3.0] {
            assert!((cif.cif(1, t) - (1.0 - cif.survival(t))).abs() < 1e-12);
            assert_eq!(cif.cif(2, t), 0.0);
        }
    }

    #[test]
    fn conservation_and_quadrature_on_random_cr_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let nj = 1 + rng.random_range(0..5);
            let mut cuts = vec![0.0];
            let mut acc = 0.0;
            for _ in 0..nj {
                acc += 0.3 + rng.random::<f64>();
                cuts.push(acc);
            }
            let cp = CutPoints::new(cuts).unwrap();
            let k = 2 + rng.random_range(0..2);
            let cause: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..nj).map(|_| rng.random::<f64>() * 1.5).collect())
                .collect();
            let cif = CifCurve::new(cp.clone(), cause.clone());
            for _ in 0..10 {
                let t = rng.random::<f64>() * cp.max();
                let s = cif.survival(t);
                let total: f64 = (1..=k).map(|c| cif.cif(c, t)).sum();
                assert!(
                    (s + total - 1.0).abs() < 1e-10,
                    "conservation violated: S + ΣF = {}",
                    s + total
                );
                for c in 1..=k {
                    let want = quadrature_cif(&cp, &cause, c, t);
                    assert!(
                        (cif.cif(c, t) - want).abs() < 1e-8,
                        "F_{c}({t}) = {} vs {want}",
                        cif.cif(c, t)
                    );
                }
            }
        }
    }

    #[test]
    fn vanishing_total_hazard_uses_linear_limit() {
        let cp = CutPoints::new(vec![0.0, 1.0, 2.0]).unwrap();
        let tiny = 1e-14;
        let cif = CifCurve::new(cp, vec![vec![tiny, tiny], vec![0.0, 0.0]]);
        let f = cif.cif(1, 2.0);
        assert!((f - tiny * 2.0).abs() < 1e-20, "{f}");
    }

    #[test]
    fn monotonicity_of_survival_and_cif() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cp = CutPoints::new(vec![0.0, 0.5, 1.2, 2.0, 4.0]).unwrap();
        let cause: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..4).map(|_| rng.random::<f64>()).collect())
            .collect();
        let cif = CifCurve::new(cp, cause);
        let mut prev_s = 1.0;
        let mut prev_f = [0.0, 0.0];
        for i in 0..100 {
            let t = i as f64 * 0.05;
            let s = cif.survival(t);
            assert!(s <= prev_s + 1e-15);
            prev_s = s;
            for k in 1..=2 {
                let f = cif.cif(k, t);
                assert!(f + 1e-15 >= prev_f[k - 1]);
                prev_f[k - 1] = f;
            }
        }
    }

    #[test]
    fn refinement_invariance() {
        let coarse = SurvivalCurve::new(
            CutPoints::new(vec![0.0, 1.0, 2.0]).unwrap(),
            vec![0.4, 0.9],
        );
        let fine = SurvivalCurve::new(
            CutPoints::new(vec![0.0, 0.5, 1.0, 2.0]).unwrap(),
            vec![0.4, 0.4, 0.9],
        );
        for i in 0..40 {
            let t = i as f64 * 0.06;
            assert!((coarse.survival(t) - fine.survival(t)).abs() < 1e-14);
        }
        let c1 = CifCurve::new(
            CutPoints::new(vec![0.0, 1.0, 2.0]).unwrap(),
            vec![vec![0.4, 0.9], vec![0.2, 0.1]],
        );
        let c2 = CifCurve::new(
            CutPoints::new(vec![0.0, 0.5, 1.0, 2.0]).unwrap(),
            vec![vec![0.4, 0.4, 0.9], vec![0.2, 0.2, 0.1]],
        );
        for i in 0..40 {
            let t = i as f64 * 0.06;
            for k in 1..=2 {
                assert!((c1.cif(k, t) - c2.cif(k, t)).abs() < 1e-13);
            }
        }
    }
}
