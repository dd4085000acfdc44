//! Shape-parameter initialization by leave-one-out cross-validation.
//!
//! For a candidate `h`, the auxiliary 1D interpolation system
//! `A w = y` with `A_ij = phi(|x_i - x_j|; h)` (ridge-regularized as
//! `A + lambda I`) yields all leave-one-out errors from a single
//! factorization through Rippa's identity `e_i = w_i / (A^{-1})_ii`.
//! A coarse/fine two-stage grid search over `h` picks the minimizer of
//! `max_i |e_i|`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::benchmarks::Dataset;
use crate::error::{Error, Result};
use crate::kernels::KernelKind;
use crate::linalg::{factorize, SymMatrix};

/// Search-space and regularization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoocvConfig {
    pub h_min: f64,
    pub h_max: f64,
    /// Stage-1 candidate count.
    pub n_coarse: usize,
    /// Stage-2 candidate count.
    pub n_fine: usize,
    /// Ridge regularizer added to the interpolation matrix diagonal.
    pub lambda: f64,
    /// Cap on the auxiliary problem size; larger training sets are
    /// subsampled uniformly in sorted coordinate order.
    pub max_points: usize,
    /// Which input coordinate supplies the 1D auxiliary points.
    pub coordinate_index: usize,
}

impl Default for LoocvConfig {
    fn default() -> Self {
        LoocvConfig {
            h_min: 0.01,
            h_max: 20.0,
            n_coarse: 50,
            n_fine: 20,
            lambda: 1e-9,
            max_points: 200,
            coordinate_index: 0,
        }
    }
}

impl LoocvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h_min > 0.0 && self.h_min.is_finite()) {
            return Err(Error::domain("h_min must be positive"));
        }
        if !(self.h_max > self.h_min && self.h_max.is_finite()) {
            return Err(Error::domain("h_max must exceed h_min"));
        }
        if self.n_coarse < 2 || self.n_fine < 2 {
            return Err(Error::domain("n_coarse and n_fine must be >= 2"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::domain("lambda must be positive"));
        }
        if self.max_points < 10 {
            return Err(Error::domain("max_points must be >= 10"));
        }
        if self.coordinate_index > 1 {
            return Err(Error::domain("coordinate_index must be 0 or 1"));
        }
        Ok(())
    }
}

/// Outcome of [`search_h`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoocvResult {
    pub h_opt: f64,
    /// Max-norm LOOCV error at `h_opt`.
    pub err_min: f64,
    /// Every `(h, err)` evaluated, stage 1 then stage 2. Failed candidates
    /// carry `err = inf`.
    pub curve: Vec<(f64, f64)>,
    /// Half-width of the stage-2 window in `ln h` (two coarse steps);
    /// the window is `[h1 / e^hw, h1 * e^hw]` around the stage-1 winner.
    pub stage2_halfwidth: f64,
}

impl LoocvResult {
    /// Two-column CSV of the search curve.
    pub fn write_curve_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# rbfkan.loocv-curve.v1")?;
        writeln!(out, "h,err")?;
        for (h, err) in &self.curve {
            writeln!(out, "{h},{err}")?;
        }
        Ok(())
    }
}

/// All leave-one-out errors for one candidate `h` via Rippa's identity.
///
/// Builds `A + lambda I` with `A_ij = phi(|x_i - x_j|; h)`, solves
/// `w = A^{-1} y` and returns `e_i = w_i / (A^{-1})_ii`.
pub fn rippa_errors(
    points: &[f64],
    targets: &[f64],
    kind: KernelKind,
    h: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    if points.len() != targets.len() || points.len() < 2 {
        return Err(Error::domain(format!(
            "need matching point/target vectors of length >= 2, got {} and {}",
            points.len(),
            targets.len()
        )));
    }
    if points.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::domain("points and targets must be finite"));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::domain("h must be positive"));
    }
    if !(lambda > 0.0) {
        return Err(Error::domain("lambda must be positive"));
    }
    let n = points.len();
    let mut a = SymMatrix::from_fn(n, |i, j| {
        kind.profile((points[i] - points[j]).abs() / h)
    })?;
    a.add_diagonal(lambda);
    let f = factorize(&a).map_err(|e| match e {
        Error::NumericalRank(msg) => Error::NumericalRank(format!("at h = {h}: {msg}")),
        other => other,
    })?;
    let w = f.solve(targets)?;
    let inv_diag = f.inverse_diagonal();
    Ok(w.iter().zip(&inv_diag).map(|(wi, di)| wi / di).collect())
}

fn max_abs(errors: &[f64]) -> f64 {
    errors.iter().fold(0.0_f64, |m, e| m.max(e.abs()))
}

/// Two-stage coarse/fine search for the LOOCV-optimal shape parameter.
///
/// Candidates are equally spaced in `ln h` (a shape parameter is a scale:
/// a linear grid over a range like `[0.01, 20]` cannot resolve the small
/// decade where the optima of narrow kernels live). Stage 1 scans
/// `n_coarse` candidates over `[h_min, h_max]`; stage 2 scans `n_fine`
/// candidates in a log-window of half-width two coarse steps around the
/// stage-1 winner. Ties break toward the first minimum, so the result is
/// deterministic.
pub fn search_h(
    points: &[f64],
    targets: &[f64],
    kind: KernelKind,
    config: &LoocvConfig,
) -> Result<LoocvResult> {
    config.validate()?;
    let mut curve = Vec::with_capacity(config.n_coarse + config.n_fine);
    let mut best: Option<(f64, f64)> = None;

    let visit = |h: f64, curve: &mut Vec<(f64, f64)>, best: &mut Option<(f64, f64)>| {
        match rippa_errors(points, targets, kind, h, config.lambda) {
            Ok(errors) => {
                let err = max_abs(&errors);
                if err.is_finite() {
                    curve.push((h, err));
                    let improves = match best {
                        Some((_, best_err)) => err < *best_err,
                        None => true,
                    };
                    if improves {
                        *best = Some((h, err));
                    }
                } else {
                    curve.push((h, f64::INFINITY));
                }
                Ok(())
            }
            Err(Error::NumericalRank(_)) => {
                curve.push((h, f64::INFINITY));
                Ok(())
            }
            Err(other) => Err(other),
        }
    };

    let log_span = (config.h_max / config.h_min).ln();
    for i in 0..config.n_coarse {
        let h = config.h_min * (log_span * i as f64 / (config.n_coarse - 1) as f64).exp();
        visit(h, &mut curve, &mut best)?;
    }
    let (stage1_h, _) = best.ok_or_else(|| {
        Error::SearchFailed(format!(
            "all {} coarse candidates failed for kernel {kind}",
            config.n_coarse
        ))
    })?;

    // Fine search half-width: two coarse steps, in log space.
    let halfwidth = 2.0 * log_span / config.n_coarse as f64;
    for i in 0..config.n_fine {
        let offset = -halfwidth + 2.0 * halfwidth * i as f64 / (config.n_fine - 1) as f64;
        let h = stage1_h * offset.exp();
        if h <= 0.0 {
            continue;
        }
        visit(h, &mut curve, &mut best)?;
    }

    let (h_opt, err_min) = best.expect("stage 1 produced a winner");
    Ok(LoocvResult {
        h_opt,
        err_min,
        curve,
        stage2_halfwidth: halfwidth,
    })
}

/// Project the dataset onto one input coordinate for the auxiliary 1D
/// problem: sort by coordinate, collapse exact duplicates to their mean
/// target, then (if needed) reduce to `max_points` bin averages in sorted
/// order.
///
/// The whole sample is used (not just the training split): the estimate
/// happens before any training, and the duplicate collapse over full grid
/// columns is what turns the projection into a clean 1D curve whose LOOCV
/// minimum reflects the target's spatial scale.
pub fn prepare_auxiliary(dataset: &Dataset, config: &LoocvConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    config.validate()?;
    if dataset.inputs.len() < 2 {
        return Err(Error::domain("need at least 2 samples"));
    }
    let mut pairs: Vec<(f64, f64)> = dataset
        .inputs
        .iter()
        .zip(&dataset.targets)
        .map(|(p, &t)| (p[config.coordinate_index], t))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Collapse duplicate coordinates to the mean of their targets.
    let mut points = Vec::with_capacity(pairs.len());
    let mut targets = Vec::with_capacity(pairs.len());
    let mut i = 0;
    while i < pairs.len() {
        let x = pairs[i].0;
        let mut sum = 0.0;
        let mut count = 0usize;
        while i < pairs.len() && pairs[i].0 == x {
            sum += pairs[i].1;
            count += 1;
            i += 1;
        }
        points.push(x);
        targets.push(sum / count as f64);
    }
    if points.len() < 2 {
        return Err(Error::DegenerateData(format!(
            "only {} distinct coordinate value(s) in the training split",
            points.len()
        )));
    }

    if points.len() > config.max_points {
        // Reduce to max_points bins of contiguous sorted points, each
        // represented by its mean coordinate and mean target. Averaging
        // (rather than picking representatives) suppresses the projection
        // noise of the unused input dimension, which is what gives the
        // LOOCV curve a minimum at the target's structural scale.
        let n = points.len();
        let m = config.max_points;
        let mut sub_points = Vec::with_capacity(m);
        let mut sub_targets = Vec::with_capacity(m);
        let mut start = 0;
        for k in 0..m {
            let end = (k + 1) * n / m;
            let len = (end - start) as f64;
            sub_points.push(points[start..end].iter().sum::<f64>() / len);
            sub_targets.push(targets[start..end].iter().sum::<f64>() / len);
            start = end;
        }
        points = sub_points;
        targets = sub_targets;
    }
    Ok((points, targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::FunctionId;
    use crate::rng::SeededRng;

    /// Explicit leave-one-out refit: for each i, solve the (N-1)-point
    /// ridge system without point i and measure the miss at x_i. The
    /// prediction sum uses a compensated dot product: near the flat-kernel
    /// limit the weights explode and the sum cancels almost completely.
    pub(crate) fn explicit_loo_errors(
        points: &[f64],
        targets: &[f64],
        kind: KernelKind,
        h: f64,
        lambda: f64,
    ) -> Vec<f64> {
        let n = points.len();
        let mut errors = Vec::with_capacity(n);
        for i in 0..n {
            let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let mut a = SymMatrix::from_fn(n - 1, |r, c| {
                kind.profile((points[keep[r]] - points[keep[c]]).abs() / h)
            })
            .unwrap();
            a.add_diagonal(lambda);
            let y: Vec<f64> = keep.iter().map(|&j| targets[j]).collect();
            let (w_hi, w_lo) = factorize(&a).unwrap().solve_pair(&y).unwrap();
            let phi: Vec<f64> = keep
                .iter()
                .map(|&j| kind.profile((points[i] - points[j]).abs() / h))
                .collect();
            let pred = crate::linalg::compensated_dot(&phi, &w_hi)
                + crate::linalg::compensated_dot(&phi, &w_lo);
            errors.push(targets[i] - pred);
        }
        errors
    }

    #[test]
    fn zero_targets_give_zero_errors() {
        let e = rippa_errors(&[0.0, 1.0], &[0.0, 0.0], KernelKind::Ga, 0.5, 1e-9).unwrap();
        assert_eq!(e, vec![0.0, 0.0]);
    }

    #[test]
    fn three_point_case_matches_explicit_refit() {
        let points = [0.0, 0.5, 1.0];
        let targets = [0.0, 1.0, 0.0];
        let rippa = rippa_errors(&points, &targets, KernelKind::Ga, 0.3, 1e-9).unwrap();
        let explicit = explicit_loo_errors(&points, &targets, KernelKind::Ga, 0.3, 1e-9);
        let scale = explicit.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
        for (r, e) in rippa.iter().zip(&explicit) {
            assert!((r - e).abs() <= 1e-8 * scale, "rippa {r} explicit {e}");
        }
    }

    #[test]
    fn thirty_point_case_matches_for_every_kernel() {
        let mut rng = SeededRng::new(77);
        let points: Vec<f64> = (0..30)
            .map(|i| i as f64 / 29.0 + 0.2 * (rng.uniform01() - 0.5) / 29.0)
            .collect();
        let targets: Vec<f64> = (0..30).map(|_| rng.normal()).collect();
        for kind in KernelKind::ALL {
            let rippa = rippa_errors(&points, &targets, kind, 0.5, 1e-9).unwrap();
            let explicit = explicit_loo_errors(&points, &targets, kind, 0.5, 1e-9);
            let scale = explicit.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
            let worst = rippa
                .iter()
                .zip(&explicit)
                .fold(0.0_f64, |m, (r, e)| m.max((r - e).abs()));
            assert!(worst <= 1e-7 * scale, "{kind}: worst {worst:e} scale {scale:e}");
        }
    }

    #[test]
    fn zero_targets_search_returns_h_min() {
        let points: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let targets = vec![0.0; 20];
        let cfg = LoocvConfig {
            h_min: 0.05,
            h_max: 2.0,
            n_coarse: 10,
            n_fine: 5,
            ..LoocvConfig::default()
        };
        let res = search_h(&points, &targets, KernelKind::Ga, &cfg).unwrap();
        assert_eq!(res.h_opt, 0.05);
        assert_eq!(res.err_min, 0.0);
        // Winner sits at h_min, so the stage-2 window [h_min - r, h_min + r]
        // loses its two non-positive candidates.
        assert_eq!(res.curve.len(), 13);
        assert!(res.curve.iter().all(|&(h, _)| h > 0.0));
    }

    #[test]
    fn interior_winner_keeps_full_curve() {
        let points: Vec<f64> = (0..25).map(|i| i as f64 / 24.0).collect();
        let targets: Vec<f64> = points.iter().map(|x| (6.0 * x).sin()).collect();
        let cfg = LoocvConfig {
            h_min: 0.01,
            h_max: 2.0,
            ..LoocvConfig::default()
        };
        let res = search_h(&points, &targets, KernelKind::W4, &cfg).unwrap();
        assert_eq!(res.curve.len(), cfg.n_coarse + cfg.n_fine);
    }

    #[test]
    fn sine_search_matches_dense_grid_oracle() {
        let n = 40;
        let points: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let targets: Vec<f64> = points
            .iter()
            .map(|x| (2.0 * std::f64::consts::PI * x).sin())
            .collect();
        let cfg = LoocvConfig {
            h_min: 0.01,
            h_max: 2.0,
            ..LoocvConfig::default()
        };
        let res = search_h(&points, &targets, KernelKind::Ga, &cfg).unwrap();

        // Brute-force dense grid over the same interval.
        let mut best_h = cfg.h_min;
        let mut best_err = f64::INFINITY;
        for i in 0..1000 {
            let h = cfg.h_min + (cfg.h_max - cfg.h_min) * i as f64 / 999.0;
            if let Ok(e) = rippa_errors(&points, &targets, KernelKind::Ga, h, cfg.lambda) {
                let err = max_abs(&e);
                if err < best_err {
                    best_err = err;
                    best_h = h;
                }
            }
        }
        let fine_step = 2.0 * res.stage2_halfwidth / (cfg.n_fine - 1) as f64;
        assert!(
            (res.h_opt - best_h).abs() <= fine_step + 1e-12,
            "search {h}, dense oracle {best_h}, step {fine_step}",
            h = res.h_opt
        );
    }

    #[test]
    fn search_is_deterministic_and_optimal_over_curve() {
        let mut rng = SeededRng::new(5);
        let points: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let targets: Vec<f64> = (0..30).map(|_| rng.normal()).collect();
        let cfg = LoocvConfig {
            h_max: 3.0,
            ..LoocvConfig::default()
        };
        let a = search_h(&points, &targets, KernelKind::M4, &cfg).unwrap();
        let b = search_h(&points, &targets, KernelKind::M4, &cfg).unwrap();
        assert_eq!(a, b);
        for &(_, err) in &a.curve {
            assert!(a.err_min <= err);
        }
        assert!(a.h_opt > 0.0);
    }

    #[test]
    fn auxiliary_collapses_grid_columns() {
        // 10 samples on a 5x2 grid: one auxiliary point per distinct x.
        let dataset = Dataset::generate(FunctionId::F1, 10, 1).unwrap();
        let cfg = LoocvConfig::default();
        let (points, targets) = prepare_auxiliary(&dataset, &cfg).unwrap();
        assert_eq!(points.len(), 5);
        assert_eq!(targets.len(), points.len());
        assert!(points.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn auxiliary_subsample_cardinality_and_order() {
        // Scattered (all-distinct) coordinates exercise the bin-average cap.
        let mut rng = SeededRng::new(8);
        let n = 2500;
        let inputs: Vec<[f64; 2]> = (0..n).map(|_| [rng.uniform01(), rng.uniform01()]).collect();
        let dataset = Dataset {
            targets: inputs.iter().map(|p| p[0] + p[1]).collect(),
            train_idx: (0..n).collect(),
            test_idx: vec![],
            seed: 8,
            inputs,
        };
        let cfg = LoocvConfig {
            max_points: 200,
            ..LoocvConfig::default()
        };
        let (points, _) = prepare_auxiliary(&dataset, &cfg).unwrap();
        assert_eq!(points.len(), 200);
        assert!(points.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn duplicate_coordinates_collapse_to_mean() {
        let dataset = Dataset {
            inputs: vec![[0.5, 0.0], [0.5, 1.0], [0.2, 0.3], [0.8, 0.9]],
            targets: vec![1.0, 3.0, 0.0, 0.0],
            train_idx: vec![0, 1, 2, 3],
            test_idx: vec![],
            seed: 0,
        };
        let (points, targets) = prepare_auxiliary(&dataset, &LoocvConfig::default()).unwrap();
        assert_eq!(points, vec![0.2, 0.5, 0.8]);
        assert_eq!(targets[1], 2.0);
    }

    #[test]
    fn degenerate_coordinates_are_rejected() {
        let dataset = Dataset {
            inputs: vec![[0.5, 0.0], [0.5, 1.0], [0.5, 0.3]],
            targets: vec![1.0, 3.0, 5.0],
            train_idx: vec![0, 1, 2],
            test_idx: vec![],
            seed: 0,
        };
        match prepare_auxiliary(&dataset, &LoocvConfig::default()) {
            Err(Error::DegenerateData(_)) => {}
            other => panic!("expected DegenerateData, got {other:?}"),
        }
    }
}
