use std::collections::BTreeSet;

use pixcond::metrics::{angular_errors, iou, normal_stats, region_stats, NormalStats};
use pixcond::rng::Rng;
use pixcond::tensor::Tensor;

pub const N: usize = 16;

pub fn random_normals(rng: &mut Rng) -> Tensor<f32> {
    Tensor::from_fn(&[3, N, N], |_| rng.range(-1.0, 1.0) as f32)
}

pub fn random_mask(rng: &mut Rng, p: f64) -> Tensor<f32> {
    let mut m = Tensor::from_fn(&[N, N], |_| if rng.uniform() < p { 1.0 } else { 0.0 });
    m.data_mut()[rng.below(N * N)] = 1.0;
    m
}

/// Straight-line oracle: angle via atan2(|p x g|, p . g), statistics by
/// counting, median by rank selection.
pub fn brute_stats(pred: &Tensor<f32>, gt: &Tensor<f32>, mask: &Tensor<f32>) -> NormalStats {
    let plane = N * N;
    let mut errs = Vec::new();
    for i in 0..plane {
        if mask.data()[i] == 0.0 {
            continue;
        }
        let p: Vec<f64> = (0..3).map(|k| pred.data()[k * plane + i] as f64).collect();
        let g: Vec<f64> = (0..3).map(|k| gt.data()[k * plane + i] as f64).collect();
        let cross = [p[1] * g[2] - p[2] * g[1], p[2] * g[0] - p[0] * g[2], p[0] * g[1] - p[1] * g[0]];
        let c = (cross[0].powi(2) + cross[1].powi(2) + cross[2].powi(2)).sqrt();
        let d = p[0] * g[0] + p[1] * g[1] + p[2] * g[2];
        let zero = p.iter().all(|v| *v == 0.0) || g.iter().all(|v| *v == 0.0);
        errs.push(if zero { 90.0 } else { c.atan2(d) * 180.0 / std::f64::consts::PI });
    }
    let n = errs.len();
    let mut mean = 0.0;
    let mut sq = 0.0;
    let mut counts = [0usize; 3];
    for &e in &errs {
        mean += e;
        sq += e * e;
        for (j, t) in [11.25, 22.5, 30.0].iter().enumerate() {
            if e <= *t {
                counts[j] += 1;
            }
        }
    }
    let kth = |k: usize| -> f64 {
        // The value with exactly k smaller-or-earlier elements.
        *errs
            .iter()
            .enumerate()
            .find(|(i, e)| {
                let below = errs.iter().enumerate().filter(|(j, f)| f < e || (f == e && j < i)).count();
                below == k
            })
            .unwrap()
            .1
    };
    let median = if n % 2 == 1 { kth(n / 2) } else { (kth(n / 2 - 1) + kth(n / 2)) / 2.0 };
    NormalStats {
        mean_deg: mean / n as f64,
        median_deg: median,
        rmse_deg: (sq / n as f64).sqrt(),
        pct_11_25: counts[0] as f64 * 100.0 / n as f64,
        pct_22_5: counts[1] as f64 * 100.0 / n as f64,
        pct_30: counts[2] as f64 * 100.0 / n as f64,
        n_pixels: n,
    }
}

pub fn assert_close(a: &NormalStats, b: &NormalStats) {
    assert!(stats_gap(a, b) < 1e-6, "{a:?} vs {b:?}");
}

/// Largest field difference; infinite if the pixel counts differ.
pub fn stats_gap(a: &NormalStats, b: &NormalStats) -> f64 {
    if a.n_pixels != b.n_pixels {
        return f64::INFINITY;
    }
    a.row().iter().zip(b.row()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Set-based IoU oracle.
pub fn brute_iou(pred: &Tensor<f32>, gt: &Tensor<f32>, k: usize, mask: &Tensor<f32>) -> Vec<Option<f64>> {
    (0..k)
        .map(|c| {
            let set = |t: &Tensor<f32>| -> BTreeSet<usize> {
                (0..N * N)
                    .filter(|&i| mask.data()[i] != 0.0 && t.data()[i] as usize == c)
                    .collect()
            };
            let (p, g) = (set(pred), set(gt));
            let union = p.union(&g).count();
            (union > 0).then(|| p.intersection(&g).count() as f64 / union as f64)
        })
        .collect()
}


/// Worst disagreement between the library metrics and the oracles over
/// `instances` random 16x16 cases; infinite on a class-presence mismatch.
pub fn oracle_deviation(instances: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let mut rng = Rng::derive(77, seed);
        let pred = random_normals(&mut rng);
        // Half the ground truths are near the prediction so every threshold bin is populated.
        let gt = if seed % 2 == 0 {
            random_normals(&mut rng)
        } else {
            Tensor::from_fn(&[3, N, N], |i| pred.data()[i] + 0.3 * rng.range(-1.0, 1.0) as f32)
        };
        let mask = random_mask(&mut rng, 0.7);
        let errs = angular_errors(&pred, &gt, &mask).unwrap();
        worst = worst.max(stats_gap(&normal_stats(&errs).unwrap(), &brute_stats(&pred, &gt, &mask)));

        let region = random_mask(&mut rng, 0.5);
        let both = Tensor::from_fn(&[N, N], |i| mask.data()[i] * region.data()[i]);
        if both.data().iter().any(|v| *v != 0.0) {
            let got = region_stats(&pred, &gt, &mask, &region).unwrap();
            worst = worst.max(stats_gap(&got, &brute_stats(&pred, &gt, &both)));
        }

        let k = 2 + rng.below(5);
        let labels = |rng: &mut Rng| Tensor::from_fn(&[N, N], |_| rng.below(k) as f32);
        let (p, g) = (labels(&mut rng), labels(&mut rng));
        let got = iou(&p, &g, k, &mask).unwrap();
        let want = brute_iou(&p, &g, k, &mask);
        for (a, b) in got.per_class_iou.iter().zip(&want) {
            worst = worst.max(match (a, b) {
                (Some(a), Some(b)) => (a - b).abs(),
                (None, None) => 0.0,
                _ => f64::INFINITY,
            });
        }
        let present: Vec<f64> = want.iter().flatten().copied().collect();
        worst = worst.max((got.mean_iou - present.iter().sum::<f64>() / present.len() as f64).abs());
    }
    worst
}
