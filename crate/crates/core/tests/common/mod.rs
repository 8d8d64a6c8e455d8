#![allow(dead_code)]

/// Euclidean projection onto `{a : sum a = 1, 0 <= a <= ub}` by bisection on
/// the shift.
pub fn project_capped_simplex(v: &[f64], ub: f64) -> Vec<f64> {
    let total = |lam: f64| v.iter().map(|&x| (x - lam).clamp(0.0, ub)).sum::<f64>();
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - ub - 1.0;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lam = 0.5 * (lo + hi);
    v.iter().map(|&x| (x - lam).clamp(0.0, ub)).collect()
}

pub fn quad(k: &[f64], n: usize, a: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += a[i] * k[i * n + j] * a[j];
        }
    }
    0.5 * s
}

/// Accelerated projected gradient on `1/2 a' K a` over the capped simplex,
/// with restarts. Returns the best objective seen.
pub fn qp_oracle(k: &[f64], n: usize, nu: f64) -> f64 {
    let ub = 1.0 / (nu * n as f64);
    let lip = (0..n)
        .map(|i| (0..n).map(|j| k[i * n + j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(1e-12);
    let step = 1.0 / lip;
    let mut x = project_capped_simplex(&vec![1.0 / n as f64; n], ub);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut best = quad(k, n, &x);
    for _ in 0..20_000 {
        let g: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| k[i * n + j] * y[j]).sum())
            .collect();
        let z: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        let xn = project_capped_simplex(&z, ub);
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let fx = quad(k, n, &xn);
        if fx > quad(k, n, &x) {
            // restart momentum
            y = x.clone();
            t = 1.0;
            continue;
        }
        y = xn
            .iter()
            .zip(&x)
            .map(|(a, b)| a + (t - 1.0) / tn * (a - b))
            .collect();
        x = xn;
        t = tn;
        best = best.min(fx);
    }
    best
}
