#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pwl_moments::{PwlCurve, Tensor3};

/// Moments by composite Simpson quadrature inside each segment, evaluating
/// the constant-speed parameterization directly from the vertices.
pub fn quadrature_moments(c: &DMatrix<f64>, nodes: usize) -> (DVector<f64>, DMatrix<f64>, Tensor3) {
    let m = c.nrows() - 1;
    let d = c.ncols();
    let lens: Vec<f64> = (0..m).map(|i| (c.row(i + 1) - c.row(i)).norm()).collect();
    let total: f64 = lens.iter().sum();
    let per = (nodes / m).max(2) & !1;
    let mut m1 = DVector::zeros(d);
    let mut m2 = DMatrix::zeros(d, d);
    let mut m3 = Tensor3::zeros(d);
    for i in 0..m {
        let dt = lens[i] / total;
        let h = dt / per as f64;
        for k in 0..=per {
            let s = k as f64 / per as f64;
            let x: DVector<f64> = (c.row(i) * (1.0 - s) + c.row(i + 1) * s).transpose();
            let w = h / 3.0
                * if k == 0 || k == per {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
            m1 += &x * w;
            m2 += &x * x.transpose() * w;
            m3.add_cube(w, x.as_slice());
        }
    }
    (m1, m2, m3)
}

/// Planar zigzag with `m` segments of length `l`, alternating at `±deg` from the x axis.
pub fn zigzag(m: usize, deg: f64, l: f64) -> PwlCurve {
    let t = deg.to_radians();
    let mut v = DMatrix::zeros(m + 1, 2);
    for i in 1..=m {
        let s = if i % 2 == 1 { 1.0 } else { -1.0 };
        v[(i, 0)] = v[(i - 1, 0)] + l * t.cos();
        v[(i, 1)] = v[(i - 1, 1)] + s * l * t.sin();
    }
    PwlCurve::new(v).unwrap()
}

/// Orthonormal factors with weights, as `(t3, t2)`.
pub fn odeco(u: &[DVector<f64>], w: &[f64]) -> (Tensor3, DMatrix<f64>) {
    let d = u[0].len();
    let mut t3 = Tensor3::zeros(d);
    let mut t2 = DMatrix::zeros(d, d);
    for (ui, &wi) in u.iter().zip(w) {
        t3.add_cube(wi, ui.as_slice());
        t2 += ui * ui.transpose() * wi;
    }
    (t3, t2)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}
