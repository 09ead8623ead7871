use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{stratified_split, Dataset, Matrix};
use crate::error::{Error, Result};
use crate::rng;

/// Two interleaved half circles of radius one, with isotropic Gaussian noise.
pub fn gen_two_moons(n: usize, noise_sigma: f64, test_frac: f64, seed: u64) -> Result<Dataset> {
    if n < 20 {
        return Err(Error::invalid("two moons needs at least 20 samples"));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid("noise must be nonnegative"));
    }
    let n_outer = n - n / 2;
    let n_inner = n / 2;
    let mut rng = rng::rng_for(seed, &[rng::TAG_DATA]);
    let mut points: Vec<([f64; 2], usize)> = Vec::with_capacity(n);
    let angle = |i: usize, count: usize| {
        if count == 1 {
            0.0
        } else {
            PI * i as f64 / (count - 1) as f64
        }
    };
    for i in 0..n_outer {
        let t = angle(i, n_outer);
        points.push(([t.cos(), t.sin()], 0));
    }
    for i in 0..n_inner {
        let t = angle(i, n_inner);
        points.push(([1.0 - t.cos(), 0.5 - t.sin()], 1));
    }
    for (p, _) in &mut points {
        for v in p.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += noise_sigma * z;
        }
    }
    points.shuffle(&mut rng);

    let labels: Vec<usize> = points.iter().map(|p| p.1).collect();
    let data: Vec<f64> = points.iter().flat_map(|p| p.0).collect();
    let split = stratified_split(&labels, 2, test_frac, seed)?;
    let mut ds = Dataset::new("two_moons", Matrix::new(n, 2, data)?, labels, 2, split)?;
    ds.metadata.insert(
        "generator".into(),
        json!({ "kind": "two_moons", "n": n, "noise": noise_sigma, "test_frac": test_frac, "seed": seed }),
    );
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobsParams {
    pub n: usize,
    pub classes: usize,
    pub dim: usize,
    pub centers_scale: f64,
    pub sigma: f64,
    pub test_frac: f64,
    pub seed: u64,
}

/// `classes` isotropic Gaussian clusters with centers drawn uniformly from
/// `[-centers_scale, centers_scale]^dim`.
///
/// The metadata records the accuracy of the nearest-center rule on the
/// generated points, which estimates the Bayes rate (equal priors, shared
/// isotropic covariance).
pub fn gen_blobs(p: &BlobsParams) -> Result<Dataset> {
    if p.classes < 2 || p.dim < 2 {
        return Err(Error::invalid("blobs need at least 2 classes and 2 dimensions"));
    }
    if p.n < 2 * p.classes {
        return Err(Error::invalid("blobs need at least two samples per class"));
    }
    if !(p.sigma >= 0.0 && p.sigma.is_finite()) || !(p.centers_scale > 0.0 && p.centers_scale.is_finite()) {
        return Err(Error::invalid("sigma must be nonnegative and centers_scale positive"));
    }
    let mut rng = rng::rng_for(p.seed, &[rng::TAG_DATA]);
    let centers: Vec<Vec<f64>> = (0..p.classes)
        .map(|_| {
            (0..p.dim)
                .map(|_| rng.random_range(-p.centers_scale..=p.centers_scale))
                .collect()
        })
        .collect();
    let mut points: Vec<(Vec<f64>, usize)> = Vec::with_capacity(p.n);
    for (k, c) in centers.iter().enumerate() {
        let count = p.n / p.classes + usize::from(k < p.n % p.classes);
        for _ in 0..count {
            let x = c
                .iter()
                .map(|&m| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + p.sigma * z
                })
                .collect();
            points.push((x, k));
        }
    }
    points.shuffle(&mut rng);

    let nearest = |x: &[f64]| {
        let mut best = (f64::INFINITY, 0);
        for (k, c) in centers.iter().enumerate() {
            let d: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, k);
            }
        }
        best.1
    };
    let correct = points.iter().filter(|(x, k)| nearest(x) == *k).count();

    let labels: Vec<usize> = points.iter().map(|p| p.1).collect();
    let data: Vec<f64> = points.iter().flat_map(|p| p.0.iter().copied()).collect();
    let split = stratified_split(&labels, p.classes, p.test_frac, p.seed)?;
    let mut ds = Dataset::new("blobs", Matrix::new(p.n, p.dim, data)?, labels, p.classes, split)?;
    ds.metadata.insert("generator".into(), json!({ "kind": "blobs", "params": p }));
    ds.metadata.insert("centers".into(), json!(centers));
    ds.metadata.insert(
        "nearest_center_accuracy".into(),
        json!(correct as f64 / p.n as f64),
    );
    Ok(ds)
}
