//! Group-embedding initialization: k-means over pretrained embeddings and a
//! random projection of the centroids to the group dimension.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::engine::Matrix;
use crate::error::{Error, Result};
use crate::seed::{self, streams};

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Matrix,
    pub labels: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid and its squared distance; ties go to the lower index.
fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(point, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus<R: Rng>(points: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let (n, d) = points.shape();
    let mut centroids = Matrix::zeros(k, d);
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(first))).collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&dist) {
            Ok(w) => w.sample(rng),
            // every point coincides with a chosen centroid
            Err(_) => rng.gen_range(0..n),
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq_dist(points.row(i), points.row(pick)));
        }
    }
    centroids
}

/// Lloyd iterations from k-means++ seeding. Stops after `iters` rounds or
/// once no centroid moves by `tol` or more. An empty cluster is re-seeded to
/// the point farthest from its current centroid.
pub fn kmeans(points: &Matrix, k: usize, iters: usize, tol: f64, seed: u64) -> Result<KMeans> {
    let (n, d) = points.shape();
    if k == 0 {
        return Err(Error::Config("k-means needs k >= 1".into()));
    }
    if n < k {
        return Err(Error::Config(format!("k-means needs at least k = {k} points, got {n}")));
    }
    if !points.is_finite() {
        return Err(Error::NonFinite("k-means input points".into()));
    }
    let mut rng = seed::stream(seed, &[streams::KMEANS]);
    let mut centroids = plus_plus(points, k, &mut rng);
    let mut labels = vec![0; n];
    let mut iterations = 0;
    for _ in 0..iters {
        iterations += 1;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (c, dist) = nearest(points.row(i), &centroids);
            labels[i] = c;
            dists[i] = dist;
        }
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, x) in sums.row_mut(labels[i]).iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        let mut next = Matrix::zeros(k, d);
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("n >= k >= 1");
                next.row_mut(c).copy_from_slice(points.row(far));
                dists[far] = 0.0;
                labels[far] = c;
            } else {
                let inv = 1.0 / counts[c] as f64;
                for (x, s) in next.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *x = s * inv;
                }
            }
        }
        let shift = (0..k)
            .map(|c| sq_dist(next.row(c), centroids.row(c)).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < tol {
            break;
        }
    }
    let mut inertia = 0.0;
    for i in 0..n {
        let (c, dist) = nearest(points.row(i), &centroids);
        labels[i] = c;
        inertia += dist;
    }
    Ok(KMeans {
        centroids,
        labels,
        inertia,
        iterations,
    })
}

/// Maps `k × d` centroids to `k × d_g` through a seeded Gaussian matrix
/// with entries `N(0, 1) / √d`. With `identity` set, `d_g` must equal `d`
/// and the centroids are returned unchanged.
pub fn project_centroids(centroids: &Matrix, d_g: usize, seed: u64, identity: bool) -> Result<Matrix> {
    let d = centroids.cols();
    if d_g > d {
        return Err(Error::Config(format!("cannot project {d}-dimensional centroids up to {d_g}")));
    }
    if identity {
        if d_g != d {
            return Err(Error::Config(format!("identity projection needs d_g = d, got {d_g} and {d}")));
        }
        return Ok(centroids.clone());
    }
    let mut rng = seed::stream(seed, &[streams::PROJECTION]);
    let scale = 1.0 / (d as f64).sqrt();
    let data = (0..d * d_g)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect();
    Ok(centroids.matmul(&Matrix::from_vec(d, d_g, data)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn each_point_its_own_centroid() {
        let p = Matrix::from_vec(3, 2, vec![0.0, 0.0, 5.0, 1.0, -2.0, 4.0]);
        let km = kmeans(&p, 3, 50, 1e-9, 1).unwrap();
        assert_eq!(km.inertia, 0.0);
        let mut labels = km.labels.clone();
        labels.sort_unstable();
        assert_eq!(labels, vec![0, 1, 2]);
    }

    #[test]
    fn separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for i in 0..200 {
            let c = if i % 2 == 0 { (-5.0, 0.0) } else { (5.0, 3.0) };
            data.push(c.0 + rng.gen_range(-1.0..1.0));
            data.push(c.1 + rng.gen_range(-1.0..1.0));
            truth.push(i % 2);
        }
        let p = Matrix::from_vec(200, 2, data);
        let km = kmeans(&p, 2, 100, 1e-4, 7).unwrap();
        let agree = km.labels.iter().zip(&truth).filter(|(a, b)| a == b).count();
        assert!(agree == 200 || agree == 0, "{agree}");
        assert_eq!(km, kmeans(&p, 2, 100, 1e-4, 7).unwrap());
    }

    #[test]
    fn too_few_points() {
        let p = Matrix::zeros(2, 3);
        assert!(matches!(kmeans(&p, 3, 10, 1e-4, 0), Err(Error::Config(_))));
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let p = Matrix::from_vec(4, 1, vec![1.0, 1.0, 1.0, 1.0]);
        let km = kmeans(&p, 2, 10, 1e-4, 0).unwrap();
        assert_eq!(km.inertia, 0.0);
        assert!(km.centroids.is_finite());
    }

    #[test]
    fn projection_examples() {
        let c = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
        assert_eq!(project_centroids(&c, 3, 0, true).unwrap(), c);
        assert!(project_centroids(&c, 2, 0, true).is_err());
        assert!(project_centroids(&c, 4, 0, false).is_err());
        let p = project_centroids(&c, 2, 0, false).unwrap();
        assert_eq!(p.shape(), (2, 2));
        assert_eq!(p.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn projection_roughly_preserves_distance_ratios() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = (0..5 * 128).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = Matrix::from_vec(5, 128, data);
        let p = project_centroids(&c, 64, 0, false).unwrap();
        let mut ratios = Vec::new();
        for a in 0..5 {
            for b in a + 1..5 {
                let before = sq_dist(c.row(a), c.row(b)).sqrt();
                let after = sq_dist(p.row(a), p.row(b)).sqrt();
                ratios.push(after / before);
            }
        }
        let (lo, hi) = ratios
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &r| (lo.min(r), hi.max(r)));
        assert!(hi / lo < 2.0, "{ratios:?}");
    }
}
