//! Seeded k-means (k-means++ seeding, Lloyd iterations) used to initialize
//! both mixture models.

use rand::Rng;

use crate::scalar::Scalar;

fn sq_dist<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Returns `(labels, centers)`.
pub fn kmeans<S: Scalar, R: Rng>(points: &[Vec<S>], k: usize, rng: &mut R, max_iter: usize) -> (Vec<usize>, Vec<Vec<S>>) {
    assert!(k >= 1 && !points.is_empty(), "k-means needs points and k >= 1");
    let n = points.len();
    let mut centers: Vec<Vec<S>> = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..n)].clone());
    let mut d2: Vec<S> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: S = d2.iter().copied().sum();
        let next = if total > S::zero() {
            let mut u = S::lit(rng.random::<f64>()) * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centers.last().expect("non-empty")));
        }
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for (l, p) in labels.iter_mut().zip(points) {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(p, &centers[a]).partial_cmp(&sq_dist(p, &centers[b])).expect("finite"))
                .expect("k >= 1");
            if *l != best {
                *l = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![S::zero(); dim]; k];
        let mut counts = vec![0usize; k];
        for (&l, p) in labels.iter().zip(points) {
            counts[l] += 1;
            for (s, &x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let cnt = S::from_usize_lossy(counts[c]);
                centers[c] = sums[c].iter().map(|&s| s / cnt).collect();
            }
        }
    }
    (labels, centers)
}
