//! Piece-wise exponential proportional-hazards Poisson GLM.
//!
//! One log-baseline-hazard per interval (dummy coding) plus a linear effect
//! per base feature, fitted per transition by iteratively reweighted least
//! squares with the exposure log as offset. The normal equations are solved
//! through the block structure of the design: the dummy block is diagonal,
//! so only a dense `P x P` Schur complement system remains.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ped::{CutPoints, PedDataset};
use crate::predict::HazardModel;
use crate::survdata::FeatureSchema;

const MAX_ITER: usize = 50;
const GRAD_TOL: f64 = 1e-8;
const CHUNK: usize = 65_536;

/// Coefficients of one transition: per-interval log-baseline-hazards and one
/// coefficient per base feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmBlock {
    pub interval_log_hazard: Vec<f64>,
    pub coef: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmConvergence {
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub deviance: f64,
}

/// A fitted piece-wise exponential GLM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PemGlm {
    pub blocks: Vec<GlmBlock>,
    pub cutpoints: CutPoints,
    /// Base feature schema (the appended `tj`/`k` enter through the interval
    /// dummies and the per-transition blocks instead).
    pub schema: FeatureSchema,
    pub ridge: f64,
    pub convergence: Vec<GlmConvergence>,
}

impl HazardModel for PemGlm {
    fn cutpoints(&self) -> &CutPoints {
        &self.cutpoints
    }

    fn n_causes(&self) -> usize {
        self.blocks.len()
    }

    fn log_hazard(&self, x: &[f64], interval: usize, k: usize) -> Result<f64> {
        let block = &self.blocks[k - 1];
        if x.len() != block.coef.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} features supplied, model has {}",
                x.len(),
                block.coef.len()
            )));
        }
        let mut eta = block.interval_log_hazard[interval - 1];
        for (v, c) in x.iter().zip(&block.coef) {
            eta += v * c;
        }
        Ok(eta)
    }
}

struct TransitionRows {
    interval: Vec<u32>,
    x: Vec<f64>, // row-major, n_rows x p
    y: Vec<f64>,
    log_e: Vec<f64>,
    p: usize,
}

/// Fit the GLM on augmented data. `ridge >= 0` is an L2 penalty applied to
/// all coefficients; it is required whenever the design is rank-deficient
/// (e.g. an interval without any rows).
pub fn glm_fit(ped: &PedDataset, ridge: f64) -> Result<PemGlm> {
    if ridge < 0.0 {
        return Err(Error::Parameter("ridge must be >= 0".into()));
    }
    if ped.rows.is_empty() {
        return Err(Error::Fit("empty PED dataset".into()));
    }
    let nj = ped.cutpoints.n_intervals();
    let p = ped.n_base_features();

    let mut blocks = Vec::with_capacity(ped.n_causes);
    let mut convergence = Vec::with_capacity(ped.n_causes);
    for k in 1..=ped.n_causes {
        let rows = collect_rows(ped, k, p);
        if rows.y.is_empty() {
            return Err(Error::Fit(format!("no rows for transition {k}")));
        }
        let (block, conv) = irls(&rows, nj, ridge)?;
        blocks.push(block);
        convergence.push(conv);
    }
    Ok(PemGlm {
        blocks,
        cutpoints: ped.cutpoints.clone(),
        schema: ped.base_schema(),
        ridge,
        convergence,
    })
}

fn collect_rows(ped: &PedDataset, k: usize, p: usize) -> TransitionRows {
    let mut interval = Vec::new();
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut log_e = Vec::new();
    for r in ped.rows.iter().filter(|r| r.transition == k) {
        interval.push((r.interval - 1) as u32);
        x.extend_from_slice(&r.features[..p]);
        y.push(f64::from(r.label));
        log_e.push(r.exposure.ln());
    }
    TransitionRows {
        interval,
        x,
        y,
        log_e,
        p,
    }
}

/// Accumulated sufficient statistics of one Newton step.
struct Accum {
    a: Vec<f64>,      // diag of dummy block: Σ_j μ
    b: Vec<f64>,      // J x P: Σ_j μ x
    c: Vec<f64>,      // P x P: Σ μ x x'
    ga: Vec<f64>,     // J: Σ_j (y − μ)
    gc: Vec<f64>,     // P: Σ x (y − μ)
    obj: f64,         // Σ (μ − y ln μ)
    deviance: f64,    // 2 Σ (y ln(y/μ) − (y − μ))
}

impl Accum {
    fn zero(nj: usize, p: usize) -> Self {
        Accum {
            a: vec![0.0; nj],
            b: vec![0.0; nj * p],
            c: vec![0.0; p * p],
            ga: vec![0.0; nj],
            gc: vec![0.0; p],
            obj: 0.0,
            deviance: 0.0,
        }
    }

    fn merge(&mut self, other: &Accum) {
        for (t, s) in self.a.iter_mut().zip(&other.a) {
            *t += s;
        }
        for (t, s) in self.b.iter_mut().zip(&other.b) {
            *t += s;
        }
        for (t, s) in self.c.iter_mut().zip(&other.c) {
            *t += s;
        }
        for (t, s) in self.ga.iter_mut().zip(&other.ga) {
            *t += s;
        }
        for (t, s) in self.gc.iter_mut().zip(&other.gc) {
            *t += s;
        }
        self.obj += other.obj;
        self.deviance += other.deviance;
    }
}

fn accumulate(rows: &TransitionRows, beta0: &[f64], coef: &[f64], nj: usize) -> Accum {
    let p = rows.p;
    let n = rows.y.len();
    let n_chunks = n.div_ceil(CHUNK);
    // fixed-size chunks merged in index order keep the reduction bit-deterministic
    let partials: Vec<Accum> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut acc = Accum::zero(nj, p);
            for r in lo..hi {
                let j = rows.interval[r] as usize;
                let xr = &rows.x[r * p..(r + 1) * p];
                let mut eta = beta0[j] + rows.log_e[r];
                for (v, c) in xr.iter().zip(coef) {
                    eta += v * c;
                }
                let mu = eta.exp();
                let y = rows.y[r];
                let resid = y - mu;
                acc.a[j] += mu;
                acc.ga[j] += resid;
                for (q, &v) in xr.iter().enumerate() {
                    acc.b[j * p + q] += mu * v;
                    acc.gc[q] += v * resid;
                    for (q2, &v2) in xr.iter().enumerate().skip(q) {
                        acc.c[q * p + q2] += mu * v * v2;
                    }
                }
                acc.obj += mu - y * eta;
                acc.deviance += 2.0 * if y > 0.0 { y * (y / mu).ln() - resid } else { mu };
            }
            acc
        })
        .collect();
    let mut total = Accum::zero(nj, p);
    for part in &partials {
        total.merge(part);
    }
    // mirror the upper triangle of C
    for q in 0..p {
        for q2 in (q + 1)..p {
            total.c[q2 * p + q] = total.c[q * p + q2];
        }
    }
    total
}

fn objective(rows: &TransitionRows, beta0: &[f64], coef: &[f64], ridge: f64) -> f64 {
    let p = rows.p;
    let mut obj = 0.0;
    for r in 0..rows.y.len() {
        let j = rows.interval[r] as usize;
        let mut eta = beta0[j] + rows.log_e[r];
        for (v, c) in rows.x[r * p..(r + 1) * p].iter().zip(coef) {
            eta += v * c;
        }
        obj += eta.exp() - rows.y[r] * eta;
    }
    obj + 0.5 * ridge * (sq_norm(beta0) + sq_norm(coef))
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn irls(rows: &TransitionRows, nj: usize, ridge: f64) -> Result<(GlmBlock, GlmConvergence)> {
    let p = rows.p;
    let mut beta0 = vec![0.0; nj];
    let mut coef = vec![0.0; p];
    let mut obj = objective(rows, &beta0, &coef, ridge);
    let mut conv = GlmConvergence {
        converged: false,
        iterations: 0,
        gradient_norm: f64::INFINITY,
        deviance: f64::NAN,
    };

    for iter in 1..=MAX_ITER {
        let acc = accumulate(rows, &beta0, &coef, nj);
        conv.deviance = acc.deviance;
        conv.iterations = iter;

        // penalized gradient
        let ga: Vec<f64> = acc
            .ga
            .iter()
            .zip(&beta0)
            .map(|(g, b)| g - ridge * b)
            .collect();
        let gc: Vec<f64> = acc
            .gc
            .iter()
            .zip(&coef)
            .map(|(g, b)| g - ridge * b)
            .collect();
        let grad_norm = ga
            .iter()
            .chain(&gc)
            .fold(0.0f64, |m, g| m.max(g.abs()));
        conv.gradient_norm = grad_norm;
        if !grad_norm.is_finite() {
            return Err(Error::Fit(
                "GLM diverged (non-finite gradient); try ridge > 0".into(),
            ));
        }
        if grad_norm < GRAD_TOL {
            conv.converged = true;
            break;
        }

        // Newton direction via the Schur complement on the feature block
        let a: Vec<f64> = acc.a.iter().map(|v| v + ridge).collect();
        if a.iter().any(|&v| v <= 0.0) {
            return Err(Error::Fit(
                "interval without exposure makes the system singular; use ridge > 0".into(),
            ));
        }
        let (dc, da) = if p > 0 {
            let mut s = DMatrix::<f64>::zeros(p, p);
            let mut rhs = DVector::<f64>::zeros(p);
            for q in 0..p {
                for q2 in 0..p {
                    let mut v = acc.c[q * p + q2] + if q == q2 { ridge } else { 0.0 };
                    for j in 0..nj {
                        v -= acc.b[j * p + q] * acc.b[j * p + q2] / a[j];
                    }
                    s[(q, q2)] = v;
                }
                let mut r = gc[q];
                for j in 0..nj {
                    r -= acc.b[j * p + q] * ga[j] / a[j];
                }
                rhs[q] = r;
            }
            let chol = Cholesky::new(s).ok_or_else(|| {
                Error::Fit(
                    "normal equations not positive definite (separation or collinearity); try ridge > 0"
                        .into(),
                )
            })?;
            let dc = chol.solve(&rhs);
            let da: Vec<f64> = (0..nj)
                .map(|j| {
                    let mut v = ga[j];
                    for q in 0..p {
                        v -= acc.b[j * p + q] * dc[q];
                    }
                    v / a[j]
                })
                .collect();
            (dc.iter().copied().collect::<Vec<f64>>(), da)
        } else {
            let da: Vec<f64> = (0..nj).map(|j| ga[j] / a[j]).collect();
            (Vec::new(), da)
        };

        // step-halving on the penalized objective
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let beta0_new: Vec<f64> = beta0
                .iter()
                .zip(&da)
                .map(|(b, d)| b + step * d)
                .collect();
            let coef_new: Vec<f64> = coef.iter().zip(&dc).map(|(b, d)| b + step * d).collect();
            let obj_new = objective(rows, &beta0_new, &coef_new, ridge);
            if obj_new.is_finite() && obj_new <= obj + 1e-12 {
                beta0 = beta0_new;
                coef = coef_new;
                obj = obj_new;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no descent even at a tiny step: at a flat/ill-posed point
            break;
        }
    }

    if !beta0.iter().chain(&coef).all(|v| v.is_finite()) {
        return Err(Error::Fit(
            "GLM coefficients diverged (separation); try ridge > 0".into(),
        ));
    }
    if !conv.converged && ridge == 0.0 {
        return Err(Error::Fit(format!(
            "GLM did not converge in {MAX_ITER} iterations (gradient {:.3e}); \
             likely separation or an empty interval — try ridge > 0",
            conv.gradient_norm
        )));
    }
    Ok((
        GlmBlock {
            interval_log_hazard: beta0,
            coef,
        },
        conv,
    ))
}
