//! Independent reference implementations used as test oracles. They favour
//! the definitional form (loops, pair counting, explicit vectors) over speed
//! and share no code with the library beyond plain data.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn gauss_rows(rng: &mut ChaCha8Rng, rows: usize, n: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| gauss(rng, n)).collect()
}

/// Per-class `x.w / (|x| |w|)` with every norm computed from scratch.
pub fn cosines(x: &[f64], columns: &[Vec<f64>]) -> Vec<f64> {
    columns
        .iter()
        .map(|w| {
            let mut xw = 0.0;
            let mut xx = 0.0;
            let mut ww = 0.0;
            for j in 0..x.len() {
                xw += x[j] * w[j];
                xx += x[j] * x[j];
                ww += w[j] * w[j];
            }
            xw / (xx.sqrt() * ww.sqrt())
        })
        .collect()
}

pub fn gap(sims: &[f64], label: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for (k, &s) in sims.iter().enumerate() {
        if k != label && s > best {
            best = s;
        }
    }
    sims[label] - best
}

pub fn avh(cos: &[f64], label: usize) -> f64 {
    let angles: Vec<f64> = cos.iter().map(|c| c.clamp(-1.0, 1.0).acos()).collect();
    let total: f64 = angles.iter().sum();
    angles[label] / total
}

/// `p_k = 1 / sum_j exp(z_j - z_k)`: no shared normalizer, no overflow for
/// the dominant class.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    (0..z.len())
        .map(|k| 1.0 / z.iter().map(|zj| (zj - z[k]).exp()).sum::<f64>())
        .collect()
}

/// Average ranks by pair counting.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    (0..v.len())
        .map(|i| {
            let below = v.iter().filter(|&&x| x < v[i]).count() as f64;
            let tied = v.iter().filter(|&&x| x == v[i]).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for i in 0..a.len() {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    sab / (saa * sbb).sqrt()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Tau-b from concordant / discordant / tied pair counts.
pub fn kendall_tau_b(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let (mut conc, mut disc, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i] - a[j];
            let db = b[i] - b[j];
            if da == 0.0 {
                ties_a += 1;
            }
            if db == 0.0 {
                ties_b += 1;
            }
            if da != 0.0 && db != 0.0 {
                if (da > 0.0) == (db > 0.0) {
                    conc += 1;
                } else {
                    disc += 1;
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as f64;
    (conc - disc) as f64 / ((n0 - ties_a as f64) * (n0 - ties_b as f64)).sqrt()
}

/// Expected calibration error by scanning every bin over every sample.
pub fn ece(conf: &[f64], correct: &[bool], bins: usize) -> f64 {
    let n = conf.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        let mut count = 0.0;
        let mut sum_conf = 0.0;
        let mut hits = 0.0;
        for i in 0..conf.len() {
            let inside = if b + 1 == bins {
                conf[i] >= lo
            } else {
                conf[i] >= lo && conf[i] < hi
            };
            // Guard against lo computed as b/B landing just above c*B's floor.
            let inside = inside && ((conf[i] * bins as f64).floor() as usize).min(bins - 1) == b;
            if inside {
                count += 1.0;
                sum_conf += conf[i];
                if correct[i] {
                    hits += 1.0;
                }
            }
        }
        if count > 0.0 {
            total += count / n * (hits / count - sum_conf / count).abs();
        }
    }
    total
}

pub fn rbf(bandwidth: f64) -> impl Fn(&[f64], &[f64]) -> f64 {
    move |a, b| {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        (-d2 / (2.0 * bandwidth * bandwidth)).exp()
    }
}

pub fn linear(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `|| sum_i a_i phi(s_i) - sum_j b_j phi(t_j) ||^2` via a full Gram loop.
pub fn weighted_mmd<K: Fn(&[f64], &[f64]) -> f64>(k: &K, s: &[Vec<f64>], a: &[f64], t: &[Vec<f64>], b: &[f64]) -> f64 {
    let mut v = 0.0;
    for i in 0..s.len() {
        for j in 0..s.len() {
            v += a[i] * a[j] * k(&s[i], &s[j]);
        }
    }
    for i in 0..t.len() {
        for j in 0..t.len() {
            v += b[i] * b[j] * k(&t[i], &t[j]);
        }
    }
    for i in 0..s.len() {
        for j in 0..t.len() {
            v -= 2.0 * a[i] * b[j] * k(&s[i], &t[j]);
        }
    }
    v
}

/// Class-conditional MMD from explicitly materialized per-class weights.
pub fn local_mmd<K: Fn(&[f64], &[f64]) -> f64>(
    k: &K,
    s: &[Vec<f64>],
    labels: &[usize],
    d: &[f64],
    t: &[Vec<f64>],
    probs: &[Vec<f64>],
    u: &[f64],
) -> f64 {
    let mut total = 0.0;
    for (c, &uc) in u.iter().enumerate() {
        let a: Vec<f64> = (0..s.len()).map(|i| if labels[i] == c { d[i] } else { 0.0 }).collect();
        let b: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
        if sa == 0.0 || sb == 0.0 {
            continue;
        }
        let a: Vec<f64> = a.iter().map(|v| v / sa).collect();
        let b: Vec<f64> = b.iter().map(|v| v / sb).collect();
        total += uc * weighted_mmd(k, s, &a, t, &b);
    }
    total
}

/// `sum_s sum_t d_s || cos(x_s, x_t) yhat_t - y_s ||^2` with explicit
/// one-hot vectors.
pub fn reverse_loss(s: &[Vec<f64>], ys: &[usize], t: &[Vec<f64>], yt: &[usize], d: &[f64], classes: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..s.len() {
        for j in 0..t.len() {
            let c = cosines(&s[i], &[t[j].clone()])[0];
            let mut sq = 0.0;
            for k in 0..classes {
                let yh = if yt[j] == k { 1.0 } else { 0.0 };
                let y = if ys[i] == k { 1.0 } else { 0.0 };
                sq += (c * yh - y).powi(2);
            }
            total += d[i] * sq;
        }
    }
    total
}

pub const FD_STEP: f64 = 1e-5;

/// Central finite differences of `f` at `x`.
pub fn finite_differences<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64]) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + FD_STEP;
            let up = f(&p);
            p[i] = orig - FD_STEP;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest relative discrepancy between two gradients. Components whose
/// magnitude is below `floor` are compared on the absolute scale `floor`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}
