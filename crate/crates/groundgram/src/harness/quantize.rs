//! Seeded k-means vector quantization of continuous feature rows into
//! symbol ids.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::HarnessError;

const KMEANS_ITERATIONS: usize = 50;

/// Quantize `rows` into `k` symbols. Fixed iteration count, seeded
/// initialization, nearest-centroid assignment with ties toward the lowest
/// centroid id. Returns (assignments, codebook).
pub fn quantize_features(
    rows: &[Vec<f64>],
    k: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<Vec<f64>>), HarnessError> {
    assert!(k >= 1, "k must be at least 1");
    let Some(width) = rows.first().map(|r| r.len()) else {
        return Ok((Vec::new(), Vec::new()));
    };
    if rows.iter().any(|r| r.len() != width) {
        return Err(HarnessError::DimensionMismatch);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.shuffle(&mut rng);
    let mut centroids: Vec<Vec<f64>> = idx.iter().take(k).map(|&i| rows[i].clone()).collect();
    // Fewer rows than centroids: pad by repeating the first row.
    while centroids.len() < k {
        centroids.push(rows[0].clone());
    }

    let mut assign = vec![0usize; rows.len()];
    for _ in 0..KMEANS_ITERATIONS {
        for (i, row) in rows.iter().enumerate() {
            assign[i] = nearest(row, &centroids);
        }
        let mut sums = vec![vec![0.0; width]; k];
        let mut counts = vec![0usize; k];
        for (i, row) in rows.iter().enumerate() {
            counts[assign[i]] += 1;
            for (d, v) in row.iter().enumerate() {
                sums[assign[i]][d] += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..width {
                    centroids[c][d] = sums[c][d] / counts[c] as f64;
                }
            }
        }
    }
    for (i, row) in rows.iter().enumerate() {
        assign[i] = nearest(row, &centroids);
    }
    Ok((assign, centroids))
}

fn nearest(row: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, cen) in centroids.iter().enumerate() {
        let d: f64 = row
            .iter()
            .zip(cen)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}
