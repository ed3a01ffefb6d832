//! Slow, direct reference implementations for the Cox model.

use frailty_metrics::survival::Ties;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub rows: Vec<Vec<f64>>,
    pub time: Vec<f64>,
    pub event: Vec<bool>,
}

/// Log partial likelihood by direct summation over event times and risk
/// sets, no shifting or accumulation.
pub fn naive_loglik(d: &Dataset, beta: &[f64], ties: Ties) -> f64 {
    let eta: Vec<f64> = d
        .rows
        .iter()
        .map(|r| r.iter().zip(beta).map(|(x, b)| x * b).sum())
        .collect();
    let mut times: Vec<f64> = (0..d.time.len()).filter(|&i| d.event[i]).map(|i| d.time[i]).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut ll = 0.0;
    for t in times {
        let mut risk = 0.0;
        let mut tied = 0.0;
        let mut count = 0usize;
        for j in 0..d.time.len() {
            if d.time[j] >= t {
                risk += eta[j].exp();
            }
            if d.time[j] == t && d.event[j] {
                tied += eta[j].exp();
                ll += eta[j];
                count += 1;
            }
        }
        for l in 0..count {
            let f = match ties {
                Ties::Efron => l as f64 / count as f64,
                Ties::Breslow => 0.0,
            };
            ll -= (risk - f * tied).ln();
        }
    }
    ll
}

/// Grid maximization of a concave function over `[-10, 10]^p`, refined by
/// repeatedly zooming in on the best grid point. Returns `None` when the
/// best coarse point sits on the boundary of the box.
pub fn grid_maximize(p: usize, f: impl Fn(&[f64]) -> f64) -> Option<Vec<f64>> {
    let mut best = vec![0.0; p];
    let mut best_val = f64::NEG_INFINITY;
    let coarse = 81;
    let h0 = 20.0 / (coarse - 1) as f64;
    let mut idx = vec![0usize; p];
    loop {
        let b: Vec<f64> = idx.iter().map(|&i| -10.0 + h0 * i as f64).collect();
        let v = f(&b);
        if v > best_val {
            best_val = v;
            best = b;
        }
        let mut k = 0;
        while k < p {
            idx[k] += 1;
            if idx[k] < coarse {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == p {
            break;
        }
    }
    if best.iter().any(|b| b.abs() >= 10.0 - 1e-9) {
        return None;
    }
    let mut h = h0;
    let m = 10i64;
    while h > 1e-9 {
        let step = h / 5.0;
        let center = best.clone();
        let mut idx = vec![-m; p];
        loop {
            let b: Vec<f64> = center
                .iter()
                .zip(&idx)
                .map(|(c, &i)| c + step * i as f64)
                .collect();
            let v = f(&b);
            if v > best_val {
                best_val = v;
                best = b;
            }
            let mut k = 0;
            while k < p {
                idx[k] += 1;
                if idx[k] <= m {
                    break;
                }
                idx[k] = -m;
                k += 1;
            }
            if k == p {
                break;
            }
        }
        h = step;
    }
    Some(best)
}

/// Small random dataset: times drawn from a handful of values so ties are
/// common, about a third censored.
pub fn random_small(seed: u64, n: usize, p: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let time = (0..n).map(|_| rng.random_range(1..=5) as f64).collect();
    let mut event: Vec<bool> = (0..n).map(|_| rng.random_bool(0.67)).collect();
    if !event.iter().any(|&e| e) {
        event[0] = true;
    }
    Dataset { rows, time, event }
}

/// Continuous-time random dataset with distinct times.
pub fn random_continuous(seed: u64, n: usize, p: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect();
    let time = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
    let mut event: Vec<bool> = (0..n).map(|_| rng.random_bool(0.75)).collect();
    event[0] = true;
    Dataset { rows, time, event }
}
