//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use causalgap::data::{Department, Title, UniversityClass, UnitRecord};

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Weighted normal equations `X'WX b = X'Wy`.
pub fn normal_equations(rows: &[Vec<f64>], y: &[f64], w: Option<&[f64]>) -> Vec<f64> {
    let p = rows[0].len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (i, r) in rows.iter().enumerate() {
        let wi = w.map_or(1.0, |w| w[i]);
        for a in 0..p {
            xty[a] += wi * r[a] * y[i];
            for b in 0..p {
                xtx[a][b] += wi * r[a] * r[b];
            }
        }
    }
    solve(xtx, xty)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain Newton iterations for logistic regression, fixed count.
pub fn newton_logistic(rows: &[Vec<f64>], z: &[f64], iters: usize) -> Vec<f64> {
    let p = rows[0].len();
    let mut beta = vec![0.0; p];
    for _ in 0..iters {
        let mut h = vec![vec![0.0; p]; p];
        let mut g = vec![0.0; p];
        for (r, &zi) in rows.iter().zip(z) {
            let eta: f64 = r.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let pi = sigmoid(eta);
            for a in 0..p {
                g[a] += r[a] * (zi - pi);
                for b in 0..p {
                    h[a][b] += r[a] * r[b] * pi * (1.0 - pi);
                }
            }
        }
        let step = solve(h, g);
        for (b, s) in beta.iter_mut().zip(step) {
            *b += s;
        }
    }
    beta
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let c: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    c / (va * vb).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut r = vec![0.0; v.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[k]] {
            e += 1;
        }
        for &i in &idx[k..=e] {
            r[i] = (k + e) as f64 / 2.0;
        }
        k = e + 1;
    }
    r
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn unit(treated: bool, years: f64, productivity: f64) -> UnitRecord {
    UnitRecord {
        salary: 100000.0,
        treated,
        title: Title::Full,
        university_class: UniversityClass::BM,
        department: Department::AH,
        working_years: years,
        productivity_raw: Some(productivity),
        has_profile: true,
    }
}
