//! Gaussian blobs on the unit sphere, a desk-scale stand-in for embedding features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::confidence::LabelVector;
use crate::error::{rejected, Result};
use crate::tensor::DenseMatrix;

fn unit(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// `num_classes` centers drawn uniformly on the sphere; each point is
/// `normalize(center + N(0, σ²·I))`. Points are stored class by class and
/// rounded to `f32` so that writing them to a feature file is lossless.
pub fn generate_synthetic(
    num_classes: usize,
    points_per_class: usize,
    dim: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<(DenseMatrix, LabelVector)> {
    if num_classes == 0 || points_per_class == 0 || dim == 0 {
        return Err(rejected("class count, points per class and dimension must be >= 1"));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(rejected(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| rejected(e.to_string()))?;
    let n = num_classes * points_per_class;
    let mut values = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    let mut point = vec![0.0; dim];
    for class in 0..num_classes {
        let mut center: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        unit(&mut center);
        for _ in 0..points_per_class {
            for (p, c) in point.iter_mut().zip(&center) {
                *p = c + if noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            }
            unit(&mut point);
            values.extend(point.iter().map(|&v| f64::from(v as f32)));
            labels.push(class);
        }
    }
    Ok((DenseMatrix::new(n, dim, values)?, LabelVector::new(labels)))
}

/// Fraction of points whose nearest other point (cosine) shares their label.
pub fn nearest_neighbor_accuracy(features: &DenseMatrix, labels: &LabelVector) -> f64 {
    let unit = features.l2_normalize_rows();
    let n = unit.rows();
    let hits = (0..n)
        .filter(|&i| {
            let best = (0..n)
                .filter(|&j| j != i)
                .map(|j| (crate::tensor::dot(unit.row(i), unit.row(j)), j))
                .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
            best.is_some_and(|(_, j)| labels.get(j) == labels.get(i))
        })
        .count();
    hits as f64 / n as f64
}
