//! Second-order gradient-boosted regression trees minimizing Poisson
//! negative log-likelihood with a per-row log-exposure offset.
//!
//! Boosting operates on the margin `η`; the Poisson mean of a row is
//! `μ = exp(η + ln t_off)`, so per-row gradient and hessian are `g = μ − y`
//! and `h = μ`. Prediction returns the margin without the offset: `exp(η)`
//! is the hazard rate.

mod tree;

pub use tree::{Node, RegressionTree, SplitTest, TreeMethod};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ped::{CutPoints, PedDataset};
use crate::predict::HazardModel;
use crate::survdata::{FeatureKind, FeatureSchema};
use tree::{FeatureFilter, TrainData, TreeParams};

const DEVIANCE_CHUNK: usize = 65_536;

/// A rule restricting which features may be split on at which depths.
/// Features are named; names resolve against the PED schema at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitConstraint {
    /// No splits on `feature` at any depth >= `from_depth`.
    Ban { feature: String, from_depth: usize },
    /// At depths <= `up_to_depth` the split feature must be `feature`
    /// (sampling does not remove it).
    Force { feature: String, up_to_depth: usize },
}

impl SplitConstraint {
    /// Ban a feature everywhere.
    pub fn ban(feature: &str) -> Self {
        SplitConstraint::Ban {
            feature: feature.to_string(),
            from_depth: 0,
        }
    }

    /// Force the root split onto a feature.
    pub fn force_root(feature: &str) -> Self {
        SplitConstraint::Force {
            feature: feature.to_string(),
            up_to_depth: 0,
        }
    }
}

/// Hyper-parameters of the boosted learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub learning_rate: f64,
    pub n_rounds: usize,
    pub early_stopping_rounds: Option<usize>,
    pub max_depth: usize,
    /// Minimum loss reduction γ required to accept a split.
    pub min_loss_reduction: f64,
    /// Minimum hessian sum per child.
    pub min_child_weight: f64,
    pub row_subsample: f64,
    pub col_subsample: f64,
    /// L2 regularization λ in the gain and leaf-weight formulas.
    pub l2_lambda: f64,
    /// Initial log-hazard margin (log of a base score of 1 is 0).
    pub base_margin_init: f64,
    pub split_constraints: Vec<SplitConstraint>,
    pub tree_method: TreeMethod,
    pub rng_seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            learning_rate: 0.1,
            n_rounds: 100,
            early_stopping_rounds: None,
            max_depth: 6,
            min_loss_reduction: 0.0,
            min_child_weight: 1.0,
            row_subsample: 1.0,
            col_subsample: 1.0,
            l2_lambda: 1.0,
            base_margin_init: 0.0,
            split_constraints: Vec::new(),
            tree_method: TreeMethod::Exact,
            rng_seed: 0,
        }
    }
}

impl BoostParams {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Parameter("learning_rate must be > 0".into()));
        }
        if self.n_rounds == 0 {
            return Err(Error::Parameter("n_rounds must be >= 1".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::Parameter("max_depth must be >= 1".into()));
        }
        if self.min_loss_reduction < 0.0 || self.min_child_weight < 0.0 || self.l2_lambda < 0.0 {
            return Err(Error::Parameter(
                "min_loss_reduction, min_child_weight and l2_lambda must be >= 0".into(),
            ));
        }
        for (name, v) in [
            ("row_subsample", self.row_subsample),
            ("col_subsample", self.col_subsample),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Parameter(format!("{name} must be in (0, 1]")));
            }
        }
        if let Some(r) = self.early_stopping_rounds {
            if r == 0 {
                return Err(Error::Parameter("early_stopping_rounds must be >= 1".into()));
            }
        }
        if let TreeMethod::Hist { max_bins } = self.tree_method {
            if max_bins < 2 {
                return Err(Error::Parameter("max_bins must be >= 2".into()));
            }
        }
        Ok(())
    }
}

/// A fitted additive-tree model on the log-hazard scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub trees: Vec<RegressionTree>,
    pub params: BoostParams,
    /// Full PED schema including the appended `tj` and `k` features.
    pub schema: FeatureSchema,
    pub cutpoints: CutPoints,
    pub n_causes: usize,
    /// Number of leading trees used for prediction when early stopping
    /// selected a best round.
    pub best_iteration: Option<usize>,
    /// Mean training Poisson deviance after each round.
    pub train_deviance: Vec<f64>,
    /// Mean validation Poisson deviance after each round (when a validation
    /// set was supplied).
    pub valid_deviance: Vec<f64>,
}

impl BoostedEnsemble {
    /// Trees participating in prediction.
    pub fn active_trees(&self) -> &[RegressionTree] {
        let n = self.best_iteration.unwrap_or(self.trees.len());
        &self.trees[..n]
    }

    fn margin_row_unchecked(&self, features: &[f64]) -> f64 {
        let mut eta = self.params.base_margin_init;
        for t in self.active_trees() {
            eta += self.params.learning_rate * t.leaf_weight(features);
        }
        eta
    }

    fn check_row(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} features supplied, model expects {}",
                features.len(),
                self.schema.len()
            )));
        }
        for (v, col) in features.iter().zip(&self.schema.columns) {
            if let FeatureKind::Categorical { levels } = &col.kind {
                if v.fract() != 0.0 || *v < 0.0 || (*v as usize) >= levels.len() {
                    return Err(Error::UnknownCategory {
                        feature: col.name.clone(),
                        code: *v,
                    });
                }
            }
        }
        Ok(())
    }

    /// Per-feature total split gain over the active trees, aligned with the
    /// schema column order. Features never split on report 0.
    pub fn feature_gain_report(&self) -> Vec<(String, f64)> {
        let mut totals = vec![0.0f64; self.schema.len()];
        for t in self.active_trees() {
            for n in &t.nodes {
                if let Node::Split { feature, gain, .. } = n {
                    totals[*feature] += gain;
                }
            }
        }
        self.schema
            .columns
            .iter()
            .map(|c| c.name.clone())
            .zip(totals)
            .collect()
    }
}

impl HazardModel for BoostedEnsemble {
    fn cutpoints(&self) -> &CutPoints {
        &self.cutpoints
    }

    fn n_causes(&self) -> usize {
        self.n_causes
    }

    fn log_hazard(&self, x: &[f64], interval: usize, k: usize) -> Result<f64> {
        let n_base = self.schema.len() - 2;
        if x.len() != n_base {
            return Err(Error::SchemaMismatch(format!(
                "{} base features supplied, model expects {}",
                x.len(),
                n_base
            )));
        }
        let mut row = Vec::with_capacity(n_base + 2);
        row.extend_from_slice(x);
        row.push(self.cutpoints.right(interval));
        row.push(k as f64);
        self.check_row(&row)?;
        Ok(self.margin_row_unchecked(&row))
    }
}

/// Predict log-hazard margins for full PED-layout feature rows (base
/// features with `tj` and `k` appended). The offset is never added.
pub fn predict_margin(model: &BoostedEnsemble, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    for row in rows {
        model.check_row(row)?;
    }
    Ok(rows
        .par_iter()
        .map(|r| model.margin_row_unchecked(r))
        .collect())
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

/// Per-row Poisson deviance `2 (y ln(y/μ) − (y − μ))` with the `y = 0` limit.
#[inline]
pub fn poisson_deviance(y: f64, mu: f64) -> f64 {
    if y > 0.0 {
        2.0 * (y * (y / mu).ln() - (y - mu))
    } else {
        2.0 * mu
    }
}

/// Mean Poisson deviance of margins against labels, offset included.
pub fn mean_poisson_deviance(y: &[f64], margin: &[f64], log_off: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let n = y.len();
    let n_chunks = n.div_ceil(DEVIANCE_CHUNK);
    let partials: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * DEVIANCE_CHUNK;
            let hi = (lo + DEVIANCE_CHUNK).min(n);
            let mut s = 0.0;
            for i in lo..hi {
                s += poisson_deviance(y[i], (margin[i] + log_off[i]).exp());
            }
            s
        })
        .collect();
    partials.iter().sum::<f64>() / n as f64
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

struct ResolvedConstraints {
    banned: Vec<(usize, usize)>, // (feature, from_depth)
    forced: Vec<(usize, usize)>, // (feature, up_to_depth)
}

impl ResolvedConstraints {
    fn resolve(constraints: &[SplitConstraint], schema: &FeatureSchema) -> Result<Self> {
        let mut banned = Vec::new();
        let mut forced = Vec::new();
        for c in constraints {
            let (name, slot) = match c {
                SplitConstraint::Ban { feature, from_depth } => (feature, (*from_depth, true)),
                SplitConstraint::Force {
                    feature,
                    up_to_depth,
                } => (feature, (*up_to_depth, false)),
            };
            let idx = schema.index_of(name).ok_or_else(|| {
                Error::Parameter(format!("split constraint names unknown feature '{name}'"))
            })?;
            if slot.1 {
                banned.push((idx, slot.0));
            } else {
                forced.push((idx, slot.0));
            }
        }
        Ok(ResolvedConstraints { banned, forced })
    }
}

impl FeatureFilter for ResolvedConstraints {
    fn candidates(&self, depth: usize, sampled: &[usize]) -> Vec<usize> {
        let is_banned =
            |f: usize| self.banned.iter().any(|&(bf, d)| bf == f && depth >= d);
        let forced_here: Vec<usize> = self
            .forced
            .iter()
            .filter(|&&(_, d)| depth <= d)
            .map(|&(f, _)| f)
            .collect();
        if !forced_here.is_empty() {
            let mut out: Vec<usize> = forced_here
                .into_iter()
                .filter(|&f| !is_banned(f))
                .collect();
            out.sort_unstable();
            out.dedup();
            return out;
        }
        sampled.iter().copied().filter(|&f| !is_banned(f)).collect()
    }
}

fn schemas_match(a: &PedDataset, b: &PedDataset) -> bool {
    a.schema == b.schema && a.n_causes == b.n_causes
}

/// Fit a boosted ensemble on augmented data, optionally early-stopping on
/// the mean validation Poisson deviance.
pub fn fit(
    ped: &PedDataset,
    params: &BoostParams,
    valid: Option<&PedDataset>,
) -> Result<BoostedEnsemble> {
    params.validate()?;
    if ped.rows.is_empty() {
        return Err(Error::Fit("empty PED dataset".into()));
    }
    if params.early_stopping_rounds.is_some() && valid.is_none() {
        return Err(Error::Parameter(
            "early_stopping_rounds requires a validation set".into(),
        ));
    }
    if let Some(v) = valid {
        if !schemas_match(ped, v) {
            return Err(Error::SchemaMismatch(
                "training and validation PED schemas differ".into(),
            ));
        }
    }

    let feature_rows: Vec<Vec<f64>> = ped.rows.iter().map(|r| r.features.clone()).collect();
    let data = TrainData::from_rows(&feature_rows, &ped.schema, params.tree_method)?;
    let y: Vec<f64> = ped.rows.iter().map(|r| f64::from(r.label)).collect();
    let log_off: Vec<f64> = ped.rows.iter().map(|r| r.exposure.ln()).collect();
    let n = ped.rows.len();

    let vdata = valid
        .map(|v| -> Result<_> {
            let rows: Vec<Vec<f64>> = v.rows.iter().map(|r| r.features.clone()).collect();
            let data = TrainData::from_rows(&rows, &v.schema, params.tree_method)?;
            let y: Vec<f64> = v.rows.iter().map(|r| f64::from(r.label)).collect();
            let off: Vec<f64> = v.rows.iter().map(|r| r.exposure.ln()).collect();
            Ok((data, y, off))
        })
        .transpose()?;

    let constraints = ResolvedConstraints::resolve(&params.split_constraints, &ped.schema)?;
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        l2: params.l2_lambda,
        gamma: params.min_loss_reduction,
        min_child_weight: params.min_child_weight,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut margin = vec![params.base_margin_init; n];
    let mut vmargin = vdata
        .as_ref()
        .map(|(_, vy, _)| vec![params.base_margin_init; vy.len()]);
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];

    let mut trees: Vec<RegressionTree> = Vec::with_capacity(params.n_rounds);
    let mut train_deviance = Vec::with_capacity(params.n_rounds);
    let mut valid_deviance = Vec::new();
    let mut best: Option<(f64, usize)> = None;

    for _round in 0..params.n_rounds {
        g.par_iter_mut()
            .zip(h.par_iter_mut())
            .zip(margin.par_iter().zip(y.par_iter().zip(log_off.par_iter())))
            .for_each(|((gi, hi), (m, (yi, off)))| {
                let mu = (m + off).exp();
                *gi = mu - yi;
                *hi = mu;
            });

        let rows: Vec<u32> = if params.row_subsample < 1.0 {
            (0..n as u32)
                .filter(|_| rng.random::<f64>() < params.row_subsample)
                .collect()
        } else {
            (0..n as u32).collect()
        };
        let rows = if rows.is_empty() { vec![0] } else { rows };

        let n_feat = ped.schema.len();
        let sampled: Vec<usize> = if params.col_subsample < 1.0 {
            let count = ((n_feat as f64 * params.col_subsample).ceil() as usize)
                .clamp(1, n_feat);
            let mut s = rand::seq::index::sample(&mut rng, n_feat, count).into_vec();
            s.sort_unstable();
            s
        } else {
            (0..n_feat).collect()
        };

        let tree = tree::build_tree(&data, &g, &h, rows, &sampled, &constraints, &tree_params);

        // margins update over all rows, not just the sampled ones
        margin
            .par_iter_mut()
            .enumerate()
            .for_each(|(r, m)| *m += params.learning_rate * data.leaf_weight(&tree, r));
        if let (Some(vm), Some((vd, _, _))) = (vmargin.as_mut(), vdata.as_ref()) {
            vm.par_iter_mut()
                .enumerate()
                .for_each(|(r, m)| *m += params.learning_rate * vd.leaf_weight(&tree, r));
        }
        trees.push(tree);

        train_deviance.push(mean_poisson_deviance(&y, &margin, &log_off));
        if let (Some(vm), Some((_, vy, voff))) = (vmargin.as_ref(), vdata.as_ref()) {
            let dev = mean_poisson_deviance(vy, vm, voff);
            valid_deviance.push(dev);
            let improved = best.is_none_or(|(b, _)| dev < b);
            if improved {
                best = Some((dev, trees.len()));
            } else if let (Some(patience), Some((_, at))) =
                (params.early_stopping_rounds, best)
            {
                if trees.len() - at >= patience {
                    break;
                }
            }
        }
    }

    Ok(BoostedEnsemble {
        trees,
        params: params.clone(),
        schema: ped.schema.clone(),
        cutpoints: ped.cutpoints.clone(),
        n_causes: ped.n_causes,
        best_iteration: best.map(|(_, at)| at),
        train_deviance,
        valid_deviance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ped::{transform, CutPoints, PedRow};
    use crate::survdata::{read_csv, CsvSchema, FeatureColumn};

    /// Hand-built PED with constant features: two rows, y = (1, 0),
    /// exposures 1.
    fn tiny_ped() -> PedDataset {
        let schema = FeatureSchema::new(vec![
            FeatureColumn::numeric("x"),
            FeatureColumn::numeric("tj"),
            FeatureColumn {
                name: "k".into(),
                kind: FeatureKind::Categorical {
                    levels: vec!["1".into()],
                },
            },
        ]);
        let row = |label: u8| PedRow {
            subject: 0,
            interval: 1,
            t_right: 1.0,
            exposure: 1.0,
            label,
            transition: 1,
            features: vec![1.0, 1.0, 1.0],
        };
        PedDataset {
            rows: vec![row(1), row(0)],
            cutpoints: CutPoints::new(vec![0.0, 1.0]).unwrap(),
            schema,
            n_causes: 1,
            subject_ids: vec!["s0".into()],
        }
    }

    fn plain_params() -> BoostParams {
        BoostParams {
            l2_lambda: 0.0,
            min_child_weight: 0.0,
            ..BoostParams::default()
        }
    }

    #[test]
    fn one_round_root_leaf_matches_closed_form() {
        let ped = tiny_ped();
        let params = BoostParams {
            n_rounds: 1,
            learning_rate: 1.0,
            ..plain_params()
        };
        let model = fit(&ped, &params, None).unwrap();
        assert_eq!(model.trees.len(), 1);
        // at margin 0: μ = t_off = 1, G = Σ(μ − y) = 1, H = Σμ = 2, w* = −1/2
        assert_eq!(model.trees[0].nodes.len(), 1);
        let w = model.trees[0].leaf_weight(&[1.0, 1.0, 1.0]);
        assert_eq!(w, -0.5);
        let margins = predict_margin(&model, &[vec![1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(margins[0], -0.5);
    }

    #[test]
    fn intercept_only_converges_to_occurrence_exposure() {
        // constant features force root-only trees; the fitted hazard must
        // approach total events / total exposure
        let csv = "id,time,status\n1,0.7,1\n2,1.9,1\n3,2.4,0\n4,1.1,1\n5,2.5,0\n";
        let ds = read_csv(csv.as_bytes(), &CsvSchema::simple(&[]), None).unwrap();
        let cp = CutPoints::new(vec![0.0, 2.5]).unwrap();
        let (ped, _) = transform(&ds, &cp).unwrap();
        let params = BoostParams {
            n_rounds: 300,
            learning_rate: 0.3,
            ..plain_params()
        };
        let model = fit(&ped, &params, None).unwrap();
        let events: f64 = ped.rows.iter().map(|r| f64::from(r.label)).sum();
        let exposure: f64 = ped.rows.iter().map(|r| r.exposure).sum();
        let margin = model.log_hazard(&[], 1, 1).unwrap();
        assert!(
            (margin.exp() - events / exposure).abs() < 1e-6,
            "hazard {} vs occurrence/exposure {}",
            margin.exp(),
            events / exposure
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        // d/dη of the per-row deviance is 2(μ − y) = 2g; d²/dη² = 2μ = 2h
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(3);
        let eps = 1e-6;
        for _ in 0..1000 {
            let y = f64::from(rng.random_bool(0.4));
            let off: f64 = (rng.random::<f64>() * 2.0 - 1.0).exp().ln();
            let eta: f64 = rng.random::<f64>() * 6.0 - 3.0;
            let f = |e: f64| poisson_deviance(y, (e + off).exp());
            let fd_g = (f(eta + eps) - f(eta - eps)) / (2.0 * eps);
            let fd_h = (f(eta + eps) - 2.0 * f(eta) + f(eta - eps)) / (eps * eps);
            let mu = (eta + off).exp();
            let g = mu - y;
            let h = mu;
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
            assert!(rel(2.0 * g, fd_g) < 1e-5, "grad {g} vs fd {fd_g}");
            assert!(rel(2.0 * h, fd_h) < 1e-4, "hess {h} vs fd {fd_h}");
        }
    }

    #[test]
    fn empty_ensemble_predicts_base_margin() {
        let ped = tiny_ped();
        let model = BoostedEnsemble {
            trees: vec![],
            params: BoostParams {
                base_margin_init: -0.25,
                ..BoostParams::default()
            },
            schema: ped.schema.clone(),
            cutpoints: ped.cutpoints.clone(),
            n_causes: 1,
            best_iteration: None,
            train_deviance: vec![],
            valid_deviance: vec![],
        };
        let m = predict_margin(&model, &[vec![9.0, 1.0, 0.0]]).unwrap();
        assert_eq!(m[0], -0.25);
    }

    #[test]
    fn hand_built_tree_split_on_k_separates_causes() {
        let schema = FeatureSchema::new(vec![
            FeatureColumn::numeric("tj"),
            FeatureColumn {
                name: "k".into(),
                kind: FeatureKind::Categorical {
                    levels: vec!["1".into(), "2".into()],
                },
            },
        ]);
        let tree = RegressionTree {
            nodes: vec![
                Node::Split {
                    feature: 1,
                    test: SplitTest::InCategory(vec![0]),
                    left: 1,
                    right: 2,
                    gain: 1.0,
                },
                Node::Leaf { weight: -1.0 },
                Node::Leaf { weight: 2.0 },
            ],
        };
        let model = BoostedEnsemble {
            trees: vec![tree],
            params: BoostParams {
                learning_rate: 0.5,
                ..BoostParams::default()
            },
            schema,
            cutpoints: CutPoints::new(vec![0.0, 1.0]).unwrap(),
            n_causes: 2,
            best_iteration: None,
            train_deviance: vec![],
            valid_deviance: vec![],
        };
        let m = predict_margin(&model, &[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(m[0], 0.5 * -1.0);
        assert_eq!(m[1], 0.5 * 2.0);
        assert_ne!(m[0], m[1]);
    }

    #[test]
    fn unknown_category_is_reported_with_feature_name() {
        let ped = tiny_ped();
        let params = BoostParams {
            n_rounds: 1,
            ..plain_params()
        };
        let model = fit(&ped, &params, None).unwrap();
        let err = predict_margin(&model, &[vec![1.0, 1.0, 7.0]]).unwrap_err();
        match err {
            Error::UnknownCategory { feature, .. } => assert_eq!(feature, "k"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn schema_mismatch_between_train_and_valid() {
        let ped = tiny_ped();
        let mut other = ped.clone();
        other.schema.columns[0].name = "z".into();
        let params = plain_params();
        assert!(matches!(
            fit(&ped, &params, Some(&other)),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn all_zero_labels_yield_constant_model() {
        let mut ped = tiny_ped();
        for r in &mut ped.rows {
            r.label = 0;
        }
        let params = BoostParams {
            n_rounds: 5,
            ..plain_params()
        };
        let model = fit(&ped, &params, None).unwrap();
        assert!(model.trees.iter().all(|t| t.nodes.len() == 1));
    }

    #[test]
    fn feature_gain_report_zero_for_constant_features() {
        let ped = tiny_ped();
        let params = BoostParams {
            n_rounds: 3,
            ..plain_params()
        };
        let model = fit(&ped, &params, None).unwrap();
        for (_, gain) in model.feature_gain_report() {
            assert_eq!(gain, 0.0);
        }
    }

    #[test]
    fn feature_gain_report_single_split_on_tj() {
        let csv = "id,time,status\n1,0.5,1\n2,1.0,0\n3,1.5,1\n4,2.0,0\n";
        let ds = read_csv(csv.as_bytes(), &CsvSchema::simple(&[]), None).unwrap();
        let cp = CutPoints::new(vec![0.0, 1.0, 2.0]).unwrap();
        let (ped, _) = transform(&ds, &cp).unwrap();
        let params = BoostParams {
            n_rounds: 4,
            max_depth: 1,
            ..plain_params()
        };
        let model = fit(&ped, &params, None).unwrap();
        let report = model.feature_gain_report();
        let tj_gain = report.iter().find(|(n, _)| n == "tj").unwrap().1;
        let k_gain = report.iter().find(|(n, _)| n == "k").unwrap().1;
        assert!(tj_gain > 0.0, "expected splits on tj");
        assert_eq!(k_gain, 0.0, "k is constant for K = 1");
    }

    #[test]
    fn training_deviance_is_monotone_without_subsampling() {
        let csv = "id,time,status,x\n1,0.4,1,0.1\n2,1.2,1,0.9\n3,2.0,0,0.3\n4,0.9,1,0.7\n\
                   5,1.7,0,0.2\n6,2.4,1,0.8\n";
        let ds = read_csv(csv.as_bytes(), &CsvSchema::simple(&["x"]), None).unwrap();
        let cp = crate::ped::make_cutpoints(&ds, &crate::ped::CutStrategy::AllEvents).unwrap();
        let (ped, _) = transform(&ds, &cp).unwrap();
        let params = BoostParams {
            n_rounds: 50,
            learning_rate: 0.1,
            max_depth: 3,
            ..plain_params()
        };
        let model = fit(&ped, &params, None).unwrap();
        for w in model.train_deviance.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "deviance rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn offset_scaling_shifts_intercept_hazard() {
        let csv = "id,time,status\n1,0.8,1\n2,1.6,1\n3,2.0,0\n";
        let ds = read_csv(csv.as_bytes(), &CsvSchema::simple(&[]), None).unwrap();
        let cp = CutPoints::new(vec![0.0, 2.0]).unwrap();
        let (ped, _) = transform(&ds, &cp).unwrap();
        let mut scaled = ped.clone();
        let c = 3.0;
        for r in &mut scaled.rows {
            r.exposure *= c;
        }
        let params = BoostParams {
            n_rounds: 400,
            learning_rate: 0.3,
            ..plain_params()
        };
        let a = fit(&ped, &params, None).unwrap();
        let b = fit(&scaled, &params, None).unwrap();
        let ha = a.log_hazard(&[], 1, 1).unwrap().exp();
        let hb = b.log_hazard(&[], 1, 1).unwrap().exp();
        assert!(
            (hb - ha / c).abs() < 1e-6,
            "hazard must scale by 1/c: {hb} vs {}",
            ha / c
        );
    }

    #[test]
    fn deterministic_under_seed() {
        let csv = "id,time,status,x,z\n1,0.4,1,0.1,1\n2,1.2,1,0.9,0\n3,2.0,0,0.3,1\n\
                   4,0.9,1,0.7,0\n5,1.7,0,0.2,1\n6,2.4,1,0.8,0\n7,0.6,1,0.5,1\n8,1.1,0,0.4,0\n";
        let ds = read_csv(csv.as_bytes(), &CsvSchema::simple(&["x", "z"]), None).unwrap();
        let cp = crate::ped::make_cutpoints(&ds, &crate::ped::CutStrategy::AllEvents).unwrap();
        let (ped, _) = transform(&ds, &cp).unwrap();
        let params = BoostParams {
            n_rounds: 30,
            row_subsample: 0.7,
            col_subsample: 0.6,
            rng_seed: 17,
            ..plain_params()
        };
        let a = fit(&ped, &params, None).unwrap();
        let b = fit(&ped, &params, None).unwrap();
        assert_eq!(
            serde_json::to_string(&a.trees).unwrap(),
            serde_json::to_string(&b.trees).unwrap()
        );
    }

    #[test]
    fn banning_tj_gives_time_constant_hazard() {
        let csv = "id,time,status,x\n1,0.4,1,0.1\n2,1.2,1,0.9\n3,2.0,0,0.3\n4,0.9,1,0.7\n\
                   5,1.7,0,0.2\n6,2.4,1,0.8\n";
        let ds = read_csv(csv.as_bytes(), &CsvSchema::simple(&["x"]), None).unwrap();
        let cp = crate::ped::make_cutpoints(&ds, &crate::ped::CutStrategy::AllEvents).unwrap();
        let (ped, _) = transform(&ds, &cp).unwrap();
        let params = BoostParams {
            n_rounds: 20,
            max_depth: 4,
            split_constraints: vec![SplitConstraint::ban("tj")],
            ..plain_params()
        };
        let model = fit(&ped, &params, None).unwrap();
        let tj_idx = model.schema.index_of("tj").unwrap();
        assert!(model.trees.iter().all(|t| !t.uses_feature(tj_idx)));
        let x = [0.55];
        let first = model.log_hazard(&x, 1, 1).unwrap();
        for j in 2..=model.cutpoints.n_intervals() {
            assert_eq!(model.log_hazard(&x, j, 1).unwrap(), first);
        }
    }

    #[test]
    fn forcing_root_split_on_k_separates_submodels() {
        let ds = crate::ped::tests::cr_example();
        let cp = CutPoints::new(vec![0.0, 1.0, 1.5, 3.0]).unwrap();
        let (ped, _) = transform(&ds, &cp).unwrap();
        let params = BoostParams {
            n_rounds: 10,
            max_depth: 3,
            split_constraints: vec![SplitConstraint::force_root("k")],
            ..plain_params()
        };
        let model = fit(&ped, &params, None).unwrap();
        let k_idx = model.schema.index_of("k").unwrap();
        for t in &model.trees {
            match t.root_split_feature() {
                Some(f) => assert_eq!(f, k_idx),
                None => {} // a round with no admissible k-split stays a stump
            }
        }
        assert!(
            model.trees.iter().any(|t| t.root_split_feature().is_some()),
            "expected at least one split on k"
        );
    }

    #[test]
    fn early_stopping_truncates_to_best_round() {
        let csv_train = "id,time,status,x\n1,0.4,1,0.1\n2,1.2,1,0.9\n3,2.0,0,0.3\n4,0.9,1,0.7\n\
                         5,1.7,0,0.2\n6,2.4,1,0.8\n";
        let csv_valid = "id,time,status,x\n7,0.5,1,0.2\n8,1.4,0,0.6\n9,2.2,1,0.4\n";
        let train = read_csv(csv_train.as_bytes(), &CsvSchema::simple(&["x"]), None).unwrap();
        let valid = read_csv(csv_valid.as_bytes(), &CsvSchema::simple(&["x"]), None).unwrap();
        let cp = CutPoints::new(vec![0.0, 1.0, 2.0, 2.5]).unwrap();
        let (ped_t, _) = transform(&train, &cp).unwrap();
        let (ped_v, _) = transform(&valid, &cp).unwrap();
        let params = BoostParams {
            n_rounds: 200,
            learning_rate: 0.5,
            max_depth: 3,
            early_stopping_rounds: Some(5),
            ..plain_params()
        };
        let model = fit(&ped_t, &params, Some(&ped_v)).unwrap();
        let best = model.best_iteration.unwrap();
        assert!(best <= model.trees.len());
        assert!(model.trees.len() < 200, "expected early stop");
        // best round has the smallest recorded validation deviance
        let min = model
            .valid_deviance
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(model.valid_deviance[best - 1], min);
    }

    #[test]
    fn early_stopping_without_valid_is_an_error() {
        let ped = tiny_ped();
        let params = BoostParams {
            early_stopping_rounds: Some(3),
            ..plain_params()
        };
        assert!(matches!(
            fit(&ped, &params, None),
            Err(Error::Parameter(_))
        ));
    }
}
