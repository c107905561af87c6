//! Reference implementations used to check the optimized code paths. They
//! are deliberately written differently from the library: projections use
//! sorting and alternating projections instead of bisection.

#![allow(dead_code)]

/// Euclidean projection onto the L1 ball `{w : |w - c|_1 <= r}` by the
/// sort-and-threshold method.
pub fn project_l1_ball(v: &[f64], c: &[f64], r: f64) -> Vec<f64> {
    let d: Vec<f64> = v.iter().zip(c).map(|(a, b)| a - b).collect();
    let norm: f64 = d.iter().map(|x| x.abs()).sum();
    if norm <= r {
        return v.to_vec();
    }
    if r == 0.0 {
        return c.to_vec();
    }
    let mut mags: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, m) in mags.iter().enumerate() {
        cum += m;
        let t = (cum - r) / (k as f64 + 1.0);
        if *m > t {
            theta = t;
        }
    }
    d.iter().zip(c).map(|(x, ci)| ci + x.signum() * (x.abs() - theta).max(0.0)).collect()
}

pub fn project_box(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.clamp(0.0, 1.0)).collect()
}

/// Projection onto the intersection of the unit box and the L1 ball by
/// Dykstra's alternating projection algorithm.
pub fn project_dykstra(v: &[f64], c: &[f64], r: f64) -> Vec<f64> {
    let n = v.len();
    let mut x = v.to_vec();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for _ in 0..200_000 {
        let yin: Vec<f64> = (0..n).map(|i| x[i] + p[i]).collect();
        let y = project_box(&yin);
        for i in 0..n {
            p[i] = yin[i] - y[i];
        }
        let xin: Vec<f64> = (0..n).map(|i| y[i] + q[i]).collect();
        let xn = project_l1_ball(&xin, c, r);
        for i in 0..n {
            q[i] = xin[i] - xn[i];
        }
        let change = xn.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let gap = xn.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = xn;
        if change < 1e-14 && gap < 1e-12 {
            break;
        }
    }
    x
}

/// Central finite-difference gradient.
pub fn finite_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[j] += h;
            b[j] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

/// Minimum of `f` over the feasible set in two dimensions, by exhaustive
/// evaluation on a grid of spacing `step`.
pub fn grid_minimum_2d<F: Fn(&[f64]) -> f64>(f: F, c: &[f64], r: f64, step: f64) -> (f64, [f64; 2]) {
    let k = (1.0 / step).round() as usize;
    let mut best = (f64::INFINITY, [0.0, 0.0]);
    for i in 0..=k {
        let a = i as f64 * step;
        if (a - c[0]).abs() > r + 1e-12 {
            continue;
        }
        for j in 0..=k {
            let b = j as f64 * step;
            if (a - c[0]).abs() + (b - c[1]).abs() > r + 1e-12 {
                continue;
            }
            let v = f(&[a, b]);
            if v < best.0 {
                best = (v, [a, b]);
            }
        }
    }
    best
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
