//! Benchmark target functions on the unit square, dataset generation and
//! surface reconstruction.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::training::{relative_l2, Trainable};

/// The four benchmark targets: a smooth surface, a circular step, a
/// high-frequency oscillation, and a near-singular peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionId {
    F1,
    F2,
    F3,
    F4,
}

impl FunctionId {
    pub const ALL: [FunctionId; 4] = [
        FunctionId::F1,
        FunctionId::F2,
        FunctionId::F3,
        FunctionId::F4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FunctionId::F1 => "f1",
            FunctionId::F2 => "f2",
            FunctionId::F3 => "f3",
            FunctionId::F4 => "f4",
        }
    }
}

impl fmt::Display for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FunctionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FunctionId::ALL
            .iter()
            .copied()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown function {s:?}; valid: f1, f2, f3, f4")))
    }
}

/// Evaluate a benchmark target at `(x, y)`.
///
/// `f1` is the Franke surface with the linear `(9y+1)/10` term in the
/// second exponent; `f2` a circular step around the origin; `f3` the
/// oscillation `sin(25x) cos(25y)`; `f4` an inverse-distance peak at
/// `(0.5, 0.5)` capped at 10.
pub fn target_fn(id: FunctionId, x: f64, y: f64) -> f64 {
    match id {
        FunctionId::F1 => {
            let nx = 9.0 * x;
            let ny = 9.0 * y;
            0.75 * (-((nx - 2.0).powi(2) + (ny - 2.0).powi(2)) / 4.0).exp()
                + 0.75 * (-(nx + 1.0).powi(2) / 49.0 - (ny + 1.0) / 10.0).exp()
                + 0.5 * (-((nx - 7.0).powi(2) + (ny - 3.0).powi(2)) / 4.0).exp()
                - 0.2 * (-(nx - 4.0).powi(2) - (ny - 7.0).powi(2)).exp()
        }
        FunctionId::F2 => {
            if (x * x + y * y).sqrt() >= 0.5 {
                1.0
            } else {
                0.0
            }
        }
        FunctionId::F3 => (25.0 * x).sin() * (25.0 * y).cos(),
        FunctionId::F4 => 1.0 / (((x - 0.5).powi(2) + (y - 0.5).powi(2)).sqrt() + 0.1),
    }
}

/// Scattered samples of one target function with a fixed train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Sample points in `[0, 1]^2`.
    pub inputs: Vec<[f64; 2]>,
    pub targets: Vec<f64>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

impl Dataset {
    /// Factor `n` into grid dimensions `(nx, ny)` with `nx >= ny`, as close
    /// to square as `n` allows.
    fn grid_dims(n: usize) -> (usize, usize) {
        let mut ny = (n as f64).sqrt().floor() as usize;
        while ny > 1 && n % ny != 0 {
            ny -= 1;
        }
        (n / ny, ny)
    }

    /// Sample the unit square on an `nx x ny` grid (`nx * ny = n`,
    /// near-square) and split the points 80/20 by a seeded Fisher-Yates
    /// shuffle. Fully determined by `(id, n, seed)`.
    ///
    /// Grid sampling keeps every input coordinate repeating across the
    /// other axis, so the 1D projection used by the LOOCV initialization
    /// collapses to clean per-column means instead of a noisy scatter.
    pub fn generate(id: FunctionId, n: usize, seed: u64) -> Result<Dataset> {
        if n < 10 {
            return Err(Error::domain(format!("dataset needs n >= 10, got {n}")));
        }
        let (nx, ny) = Dataset::grid_dims(n);
        let mut inputs = Vec::with_capacity(n);
        for ix in 0..nx {
            let x = ix as f64 / (nx - 1) as f64;
            for iy in 0..ny {
                let y = if ny == 1 {
                    0.5
                } else {
                    iy as f64 / (ny - 1) as f64
                };
                inputs.push([x, y]);
            }
        }
        let targets: Vec<f64> = inputs.iter().map(|p| target_fn(id, p[0], p[1])).collect();
        let mut rng = SeededRng::new(seed);
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let n_train = n * 4 / 5;
        // The shuffle decides membership; sorted indices keep batch order
        // (and the CSV round trip) canonical.
        let mut train_idx = order[..n_train].to_vec();
        let mut test_idx = order[n_train..].to_vec();
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        Ok(Dataset {
            inputs,
            targets,
            train_idx,
            test_idx,
            seed,
        })
    }

    pub fn n_train(&self) -> usize {
        self.train_idx.len()
    }

    pub fn n_test(&self) -> usize {
        self.test_idx.len()
    }

    /// Training inputs flattened row-major plus their targets.
    pub fn train_batch(&self) -> (Vec<f64>, Vec<f64>) {
        self.batch(&self.train_idx)
    }

    pub fn test_batch(&self) -> (Vec<f64>, Vec<f64>) {
        self.batch(&self.test_idx)
    }

    fn batch(&self, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut xs = Vec::with_capacity(idx.len() * 2);
        let mut ys = Vec::with_capacity(idx.len());
        for &i in idx {
            xs.extend_from_slice(&self.inputs[i]);
            ys.push(self.targets[i]);
        }
        (xs, ys)
    }

    /// Write the dataset as an audit CSV (`x,y,target,split`).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# rbfkan.dataset.v1 seed={}", self.seed)?;
        writeln!(out, "x,y,target,split")?;
        let mut split = vec!["test"; self.inputs.len()];
        for &i in &self.train_idx {
            split[i] = "train";
        }
        for (i, p) in self.inputs.iter().enumerate() {
            writeln!(out, "{},{},{},{}", p[0], p[1], self.targets[i], split[i])?;
        }
        Ok(())
    }

    /// Read a dataset back from the audit CSV format.
    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path)?;
        let mut seed = 0u64;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut train_idx = Vec::new();
        let mut test_idx = Vec::new();
        let mut saw_header = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                for token in meta.split_whitespace() {
                    if let Some(v) = token.strip_prefix("seed=") {
                        seed = v.parse().unwrap_or(0);
                    }
                }
                continue;
            }
            if !saw_header {
                if line != "x,y,target,split" {
                    return Err(Error::Config(format!(
                        "dataset csv: expected header 'x,y,target,split', got {line:?}"
                    )));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::Config(format!(
                    "dataset csv line {}: expected 4 fields",
                    lineno + 1
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                let v: f64 = s
                    .parse()
                    .map_err(|_| Error::Config(format!("bad number {s:?} on line {}", lineno + 1)))?;
                if !v.is_finite() {
                    return Err(Error::Config(format!("non-finite value on line {}", lineno + 1)));
                }
                Ok(v)
            };
            let x = parse(fields[0])?;
            let y = parse(fields[1])?;
            let t = parse(fields[2])?;
            let i = inputs.len();
            inputs.push([x, y]);
            targets.push(t);
            match fields[3] {
                "train" => train_idx.push(i),
                "test" => test_idx.push(i),
                other => {
                    return Err(Error::Config(format!(
                        "dataset csv line {}: split must be train or test, got {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        if inputs.is_empty() {
            return Err(Error::Config("dataset csv contains no samples".into()));
        }
        Ok(Dataset {
            inputs,
            targets,
            train_idx,
            test_idx,
            seed,
        })
    }
}

/// Model predictions over a uniform grid on the unit square, paired with
/// true target values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceGrid {
    pub resolution: usize,
    /// Rows `(x, y, predicted, true)`, y-major then x.
    pub rows: Vec<(f64, f64, f64, f64)>,
    /// Relative L2 error of the predictions over the whole grid.
    pub rel_l2: f64,
}

/// Evaluate `model` on an inclusive `resolution x resolution` grid over
/// `[0, 1]^2` and pair predictions with the true target values.
pub fn reconstruct_surface<M: Trainable>(
    model: &M,
    id: FunctionId,
    resolution: usize,
) -> Result<SurfaceGrid> {
    if resolution < 2 {
        return Err(Error::domain(format!(
            "surface resolution must be >= 2, got {resolution}"
        )));
    }
    let step = 1.0 / (resolution - 1) as f64;
    let mut coords = Vec::with_capacity(resolution * resolution * 2);
    let mut truth = Vec::with_capacity(resolution * resolution);
    for iy in 0..resolution {
        let y = iy as f64 * step;
        for ix in 0..resolution {
            let x = ix as f64 * step;
            coords.push(x);
            coords.push(y);
            truth.push(target_fn(id, x, y));
        }
    }
    let n = resolution * resolution;
    let preds = model.forward(&coords, n)?;
    let rel = relative_l2(&preds, &truth)?;
    let rows = (0..n)
        .map(|i| (coords[2 * i], coords[2 * i + 1], preds[i], truth[i]))
        .collect();
    Ok(SurfaceGrid {
        resolution,
        rows,
        rel_l2: rel,
    })
}

impl SurfaceGrid {
    /// Plot-ready CSV: `x,y,z_pred,z_true`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# rbfkan.surface.v1 resolution={}", self.resolution)?;
        writeln!(out, "x,y,z_pred,z_true")?;
        for (x, y, zp, zt) in &self.rows {
            writeln!(out, "{x},{y},{zp},{zt}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_spot_values() {
        assert_eq!(target_fn(FunctionId::F2, 1.0, 1.0), 1.0);
        assert_eq!(target_fn(FunctionId::F2, 0.1, 0.1), 0.0);
        assert_eq!(target_fn(FunctionId::F3, 0.0, 0.0), 0.0);
        assert!((target_fn(FunctionId::F4, 0.5, 0.5) - 10.0).abs() < 1e-12);
        // Four-term Franke sum evaluated by hand at the origin.
        assert!((target_fn(FunctionId::F1, 0.0, 0.0) - 0.7664205912).abs() < 1e-9);
    }

    #[test]
    fn target_ranges() {
        let mut rng = SeededRng::new(5);
        let mut f4_max = f64::MIN;
        for _ in 0..5000 {
            let x = rng.uniform01();
            let y = rng.uniform01();
            let v2 = target_fn(FunctionId::F2, x, y);
            assert!(v2 == 0.0 || v2 == 1.0);
            let v3 = target_fn(FunctionId::F3, x, y);
            assert!((-1.0..=1.0).contains(&v3));
            f4_max = f4_max.max(target_fn(FunctionId::F4, x, y));
        }
        assert!(f4_max <= 10.0 + 1e-12);
    }

    #[test]
    fn split_sizes() {
        let d = Dataset::generate(FunctionId::F1, 2000, 42).unwrap();
        assert_eq!(d.n_train(), 1600);
        assert_eq!(d.n_test(), 400);
        let d = Dataset::generate(FunctionId::F1, 10, 42).unwrap();
        assert_eq!(d.n_train(), 8);
        assert_eq!(d.n_test(), 2);
        assert!(Dataset::generate(FunctionId::F1, 5, 42).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = Dataset::generate(FunctionId::F3, 500, 7).unwrap();
        let b = Dataset::generate(FunctionId::F3, 500, 7).unwrap();
        assert_eq!(a, b);
        let c = Dataset::generate(FunctionId::F3, 500, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_partitions_indices() {
        let d = Dataset::generate(FunctionId::F2, 100, 3).unwrap();
        let mut all: Vec<usize> = d.train_idx.iter().chain(&d.test_idx).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        for p in &d.inputs {
            assert!((0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]));
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.csv");
        let d = Dataset::generate(FunctionId::F4, 50, 9).unwrap();
        d.write_csv(&path).unwrap();
        let back = Dataset::read_csv(&path).unwrap();
        assert_eq!(d, back);
    }

    /// Oracle model that predicts the target exactly.
    struct Oracle(FunctionId);

    impl Trainable for Oracle {
        fn input_dim(&self) -> usize {
            2
        }
        fn output_dim(&self) -> usize {
            1
        }
        fn params(&self) -> Vec<f64> {
            Vec::new()
        }
        fn set_params(&mut self, _p: &[f64]) -> crate::Result<()> {
            Ok(())
        }
        fn forward(&self, inputs: &[f64], n: usize) -> crate::Result<Vec<f64>> {
            Ok((0..n)
                .map(|i| target_fn(self.0, inputs[2 * i], inputs[2 * i + 1]))
                .collect())
        }
        fn backprop(
            &self,
            _inputs: &[f64],
            _n: usize,
            _output_grads: &mut dyn FnMut(&[f64]) -> Vec<f64>,
        ) -> crate::Result<crate::training::BackpropResult> {
            unreachable!("oracle is not trained")
        }
    }

    #[test]
    fn surface_grid_contracts() {
        let grid = reconstruct_surface(&Oracle(FunctionId::F1), FunctionId::F1, 2).unwrap();
        assert_eq!(grid.rows.len(), 4);
        assert!(grid.rel_l2 < 1e-15);

        let grid = reconstruct_surface(&Oracle(FunctionId::F4), FunctionId::F4, 100).unwrap();
        assert_eq!(grid.rows.len(), 10_000);
        assert!(grid.rel_l2 < 1e-15);

        assert!(reconstruct_surface(&Oracle(FunctionId::F1), FunctionId::F1, 1).is_err());
    }
}
