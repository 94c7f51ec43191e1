use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::geom::Vec3;

/// Lloyd's k-means with k-means++ seeding. Returns `k` centers. Empty
/// clusters are re-seeded at the point farthest from its center.
pub fn kmeans(points: &[Vec3], k: usize, iters: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    assert!(k >= 1 && k <= points.len(), "k-means needs 1 <= k <= number of points");
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| (p - centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if r < *w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx];
        centers.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - c).norm_squared());
        }
    }

    let mut assign = vec![0usize; points.len()];
    for _ in 0..iters {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = nearest(&centers, p).0;
            if best != assign[i] {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![Vec3::zeros(); k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            sums[a] += p;
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j] / counts[j] as f64;
            } else {
                let far = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, (p - centers[assign[i]]).norm_squared()))
                    .fold((0, -1.0), |m, c| if c.1 > m.1 { c } else { m })
                    .0;
                centers[j] = points[far];
                assign[far] = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    centers
}

fn nearest(centers: &[Vec3], p: &Vec3) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(j, c)| (j, (p - c).norm_squared()))
        .fold((0, f64::INFINITY), |m, c| if c.1 < m.1 { c } else { m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn separates_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = Vec::new();
        for i in 0..40 {
            let o = if i % 2 == 0 { Vec3::new(-5.0, 0.0, 0.0) } else { Vec3::new(5.0, 1.0, 0.0) };
            pts.push(o + Vec3::from_fn(|_, _| rng.random_range(-0.3..0.3)));
        }
        let mut c = kmeans(&pts, 2, 50, &mut ChaCha8Rng::seed_from_u64(1));
        c.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap());
        assert!((c[0] - Vec3::new(-5.0, 0.0, 0.0)).norm() < 0.2);
        assert!((c[1] - Vec3::new(5.0, 1.0, 0.0)).norm() < 0.2);
    }

    #[test]
    fn k_equal_n_with_duplicates() {
        let pts = vec![Vec3::zeros(), Vec3::zeros(), Vec3::x()];
        let c = kmeans(&pts, 3, 10, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(c.len(), 3);
    }
}
