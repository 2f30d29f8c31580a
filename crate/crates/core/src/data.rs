//! Labelled 2-D Gaussian mixtures: a ring of modes, concentric rings and a checkerboard.
//!
//! Samples are returned standardized (zero mean, unit variance per coordinate)
//! using the mixture's analytic moments, which are stored on the `MixtureSpec` so that
//! [`posterior_mode`] and plots can map back to raw coordinates.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub centers: Vec<[f64; 2]>,
    pub scales: Vec<f64>,
    pub class_of_mode: Vec<usize>,
    pub weights: Vec<f64>,
    /// Per-coordinate mean subtracted during standardization.
    pub mean: [f64; 2],
    /// Per-coordinate standard deviation divided out during standardization.
    pub std: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Ring8,
    Rings,
    Checkerboard,
}

impl MixtureSpec {
    pub fn new(
        centers: Vec<[f64; 2]>,
        scales: Vec<f64>,
        class_of_mode: Vec<usize>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let n = centers.len();
        if n == 0 {
            return Err(Error::InvalidSpec("no modes".into()));
        }
        if scales.len() != n || class_of_mode.len() != n || weights.len() != n {
            return Err(Error::InvalidSpec(
                "centers, scales, classes and weights differ in length".into(),
            ));
        }
        if scales.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidSpec("scales must be positive".into()));
        }
        if weights.iter().any(|&w| w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSpec(
                "weights must be non-negative and sum to 1".into(),
            ));
        }
        let mut mean = [0.0; 2];
        let mut second = [0.0; 2];
        for ((c, s), w) in centers.iter().zip(&scales).zip(&weights) {
            for d in 0..2 {
                mean[d] += w * c[d];
                second[d] += w * (c[d] * c[d] + s * s);
            }
        }
        let std = [
            (second[0] - mean[0] * mean[0]).sqrt(),
            (second[1] - mean[1] * mean[1]).sqrt(),
        ];
        Ok(MixtureSpec {
            centers,
            scales,
            class_of_mode,
            weights,
            mean,
            std,
        })
    }

    /// `n_modes` equal-weight modes evenly spaced on a circle, one class per mode.
    pub fn ring(n_modes: usize, radius: f64, mode_std: f64) -> Result<Self> {
        let centers = (0..n_modes)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / n_modes as f64;
                [radius * a.cos(), radius * a.sin()]
            })
            .collect();
        let w = 1.0 / n_modes as f64;
        Self::new(
            centers,
            vec![mode_std; n_modes],
            (0..n_modes).collect(),
            equal_weights(n_modes, w),
        )
    }

    /// Two concentric rings of 12 small modes each; the class is the ring index.
    pub fn concentric_rings(mode_std: f64) -> Result<Self> {
        let per = 12;
        let mut centers = Vec::new();
        let mut classes = Vec::new();
        for (class, radius) in [1.0, 2.5].into_iter().enumerate() {
            for i in 0..per {
                let a = 2.0 * std::f64::consts::PI * i as f64 / per as f64;
                centers.push([radius * a.cos(), radius * a.sin()]);
                classes.push(class);
            }
        }
        let n = centers.len();
        Self::new(
            centers,
            vec![mode_std; n],
            classes,
            equal_weights(n, 1.0 / n as f64),
        )
    }

    /// One mode per dark square of a 4x4 board; each square is its own class.
    pub fn checkerboard(mode_std: f64) -> Result<Self> {
        let mut centers = Vec::new();
        for row in 0..4 {
            for col in 0..4 {
                if (row + col) % 2 == 0 {
                    centers.push([col as f64 - 1.5, row as f64 - 1.5]);
                }
            }
        }
        let n = centers.len();
        Self::new(
            centers,
            vec![mode_std; n],
            (0..n).collect(),
            equal_weights(n, 1.0 / n as f64),
        )
    }

    pub fn from_kind(kind: DatasetKind, radius: f64, mode_std: f64) -> Result<Self> {
        match kind {
            DatasetKind::Ring8 => Self::ring(8, radius, mode_std),
            DatasetKind::Rings => Self::concentric_rings(mode_std),
            DatasetKind::Checkerboard => Self::checkerboard(mode_std),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.centers.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_of_mode.iter().max().map_or(0, |m| m + 1)
    }

    pub fn standardize(&self, raw: [f64; 2]) -> [f64; 2] {
        [
            (raw[0] - self.mean[0]) / self.std[0],
            (raw[1] - self.mean[1]) / self.std[1],
        ]
    }

    pub fn unstandardize(&self, z: [f64; 2]) -> [f64; 2] {
        [
            z[0] * self.std[0] + self.mean[0],
            z[1] * self.std[1] + self.mean[1],
        ]
    }

    /// Standardized center of mode `i`.
    pub fn center(&self, i: usize) -> [f64; 2] {
        self.standardize(self.centers[i])
    }

    /// Standardized center of the first mode belonging to `class`.
    pub fn class_center(&self, class: usize) -> Option<[f64; 2]> {
        self.class_of_mode
            .iter()
            .position(|&c| c == class)
            .map(|i| self.center(i))
    }

    /// Empirical class frequencies implied by the mode weights.
    pub fn class_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_classes()];
        for (c, wi) in self.class_of_mode.iter().zip(&self.weights) {
            w[*c] += wi;
        }
        w
    }
}

fn equal_weights(n: usize, w: f64) -> Vec<f64> {
    // Renormalize the last entry so the sum is 1 to rounding.
    let mut v = vec![w; n];
    let rest: f64 = v[..n - 1].iter().sum();
    v[n - 1] = 1.0 - rest;
    v
}

/// Standardized samples with their class labels and generating modes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Tensor,
    pub labels: Vec<usize>,
    pub modes: Vec<usize>,
}

pub fn gen_dataset(spec: &MixtureSpec, n: usize, seed: u64) -> Result<Dataset> {
    if spec.centers.is_empty() {
        return Err(Error::InvalidSpec("empty spec".into()));
    }
    if n == 0 {
        return Err(Error::InvalidSpec("n must be positive".into()));
    }
    let mut r = rng::stream(seed, "dataset", 0);
    let mut cumulative = Vec::with_capacity(spec.weights.len());
    let mut acc = 0.0;
    for w in &spec.weights {
        acc += w;
        cumulative.push(acc);
    }
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    let mut modes = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng::uniform(&mut r, 0.0, 1.0);
        let mode = cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(cumulative.len() - 1);
        let c = spec.centers[mode];
        let s = spec.scales[mode];
        let raw = [
            c[0] + s * rng::normal(&mut r),
            c[1] + s * rng::normal(&mut r),
        ];
        data.extend(spec.standardize(raw));
        labels.push(spec.class_of_mode[mode]);
        modes.push(mode);
    }
    Ok(Dataset {
        samples: Tensor::from_vec(vec![n, 2], data),
        labels,
        modes,
    })
}

/// Most responsible mode (and its class) for a standardized sample.
/// Ties go to the lowest mode index.
pub fn posterior_mode(sample: [f64; 2], spec: &MixtureSpec) -> (usize, usize) {
    let x = spec.unstandardize(sample);
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, (c, (&s, &w))) in spec
        .centers
        .iter()
        .zip(spec.scales.iter().zip(&spec.weights))
        .enumerate()
    {
        let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
        let log_resp = w.ln() - 2.0 * s.ln() - d2 / (2.0 * s * s);
        if log_resp > best.0 {
            best = (log_resp, i);
        }
    }
    (best.1, spec.class_of_mode[best.1])
}
