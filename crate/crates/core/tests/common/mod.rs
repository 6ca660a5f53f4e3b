//! Reference implementations that share no code with the library.

#![allow(dead_code)]

pub type Dense = Vec<Vec<f64>>;

pub fn dense(m: &dgama::SymMatrix) -> Dense {
    m.rows().map(|r| r.to_vec()).collect()
}

/// Symmetric Gaussian elimination without pivoting. Returns the log
/// determinant, or `None` if some pivot is not positive.
pub fn logdet_pd(a: &Dense) -> Option<f64> {
    let n = a.len();
    let mut m = a.clone();
    let mut acc = 0.0;
    for k in 0..n {
        let piv = m[k][k];
        if !(piv > 0.0) {
            return None;
        }
        acc += piv.ln();
        for i in (k + 1)..n {
            let f = m[i][k] / piv;
            for j in k..n {
                m[i][j] -= f * m[k][j];
            }
        }
    }
    Some(acc)
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(a: &Dense) -> Dense {
    let n = a.len();
    let mut m: Dense = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for k in 0..n {
        let p = (k..n).max_by(|&x, &y| m[x][k].abs().total_cmp(&m[y][k].abs())).unwrap();
        m.swap(k, p);
        let piv = m[k][k];
        assert!(piv != 0.0, "singular matrix");
        for v in m[k].iter_mut() {
            *v /= piv;
        }
        for i in 0..n {
            if i != k {
                let f = m[i][k];
                if f != 0.0 {
                    for j in 0..2 * n {
                        m[i][j] -= f * m[k][j];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn frob(a: &Dense, b: &Dense) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(r, s)| r.iter().zip(s).map(|(x, y)| (x - y) * (x - y)))
        .sum::<f64>()
        .sqrt()
}

fn project(g: &Dense, s: &Dense, lambda: f64) -> Dense {
    g.iter()
        .zip(s)
        .map(|(r, sr)| r.iter().zip(sr).map(|(&x, &y)| x.clamp(y - lambda, y + lambda)).collect())
        .collect()
}

fn axpy(a: &Dense, t: f64, d: &Dense) -> Dense {
    a.iter()
        .zip(d)
        .map(|(r, dr)| r.iter().zip(dr).map(|(x, y)| x + t * y).collect())
        .collect()
}

fn dot(a: &Dense, b: &Dense) -> f64 {
    a.iter().zip(b).flat_map(|(r, s)| r.iter().zip(s).map(|(x, y)| x * y)).sum()
}

fn diff(a: &Dense, b: &Dense) -> Dense {
    axpy(a, -1.0, b)
}

/// Maximizes `log det Γ` over `|Γ − S| ≤ λ` entrywise by spectral projected
/// gradient ascent (Barzilai–Borwein steps, Armijo backtracking) until the
/// unit projected-gradient step is below `tol`. Returns `Γ`.
pub fn dual_oracle(s: &Dense, lambda: f64, tol: f64) -> Dense {
    let n = s.len();
    let mut g: Dense = s.clone();
    for i in 0..n {
        g[i][i] += lambda;
    }
    let mut f = logdet_pd(&g).expect("S + λI must be positive definite");
    let mut grad = inverse(&g);
    let mut step = 1.0;
    for _ in 0..100_000 {
        if frob(&project(&axpy(&g, 1.0, &grad), s, lambda), &g) <= tol {
            return g;
        }
        let dir = diff(&project(&axpy(&g, step, &grad), s, lambda), &g);
        let slope = dot(&dir, &grad);
        let mut t = 1.0;
        let next = loop {
            let cand = axpy(&g, t, &dir);
            if let Some(fc) = logdet_pd(&cand) {
                // Tolerate rounding once log det stops resolving progress.
                if fc >= f + 1e-4 * t * slope - 8.0 * f64::EPSILON * f.abs().max(1.0) {
                    break (cand, fc);
                }
            }
            t *= 0.5;
            assert!(t > 1e-30, "line search failed");
        };
        let new_grad = inverse(&next.0);
        let sk = diff(&next.0, &g);
        let yk = diff(&grad, &new_grad);
        let sy = dot(&sk, &yk);
        step = if sy > 0.0 { (dot(&sk, &sk) / sy).clamp(1e-10, 1e10) } else { 1.0 };
        g = next.0;
        f = next.1;
        grad = new_grad;
    }
    panic!("oracle did not converge");
}

/// Sample covariance `(1/T) Σ x xᵀ` by direct summation.
pub fn batch_covariance(samples: &[Vec<f64>]) -> Dense {
    let p = samples[0].len();
    let mut s = vec![vec![0.0; p]; p];
    for x in samples {
        for i in 0..p {
            for j in 0..p {
                s[i][j] += x[i] * x[j];
            }
        }
    }
    let t = samples.len() as f64;
    s.iter().map(|r| r.iter().map(|v| v / t).collect()).collect()
}
