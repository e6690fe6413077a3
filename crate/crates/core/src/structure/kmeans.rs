//! Seeded k-means (k-means++ seeding, Lloyd iterations) used for instance splits.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

const MAX_LLOYD: usize = 100;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centres = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centres.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centres.last().unwrap()));
        }
    }
    centres
}

fn lloyd(points: &[Vec<f64>], mut centres: Vec<Vec<f64>>) -> (Vec<usize>, f64) {
    let k = centres.len();
    let dim = points[0].len();
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..MAX_LLOYD {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(points) {
            let best = (0..k)
                .map(|c| (c, sq_dist(p, &centres[c])))
                .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc })
                .0;
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assign.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centres[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = assign.iter().zip(points).map(|(&a, p)| sq_dist(p, &centres[a])).sum();
    (assign, inertia)
}

/// Best of `restarts` runs by inertia; returns one cluster index per point.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let init = plus_plus(points, k, rng);
        let run = lloyd(points, init);
        if best.as_ref().is_none_or(|b| run.1 < b.1) {
            best = Some(run);
        }
    }
    best.expect("at least one restart").0
}
