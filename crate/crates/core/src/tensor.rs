//! Dense cubic three-way tensors.
//!
//! Storage is row-major: entry `(i, j, k)` lives at `(i * n + j) * n + k`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    n: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n * n {
            return shape_err(format!(
                "tensor data of length {} cannot be {n}x{n}x{n}",
                data.len()
            ));
        }
        Ok(Self { n, data })
    }

    /// `a ⊗ b ⊗ c`.
    pub fn outer(a: &[f64], b: &[f64], c: &[f64]) -> Self {
        let n = a.len();
        assert!(b.len() == n && c.len() == n, "outer: length mismatch");
        let mut t = Self::zeros(n);
        t.add_outer(1.0, a, b, c);
        t
    }

    pub fn cube(v: &[f64]) -> Self {
        Self::outer(v, v, v)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.idx(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let ix = self.idx(i, j, k);
        self.data[ix] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let ix = self.idx(i, j, k);
        self.data[ix] += v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// `self += w · a ⊗ b ⊗ c`.
    pub fn add_outer(&mut self, w: f64, a: &[f64], b: &[f64], c: &[f64]) {
        let n = self.n;
        for i in 0..n {
            let wa = w * a[i];
            if wa == 0.0 {
                continue;
            }
            for j in 0..n {
                let wab = wa * b[j];
                let row = (i * n + j) * n;
                for k in 0..n {
                    self.data[row + k] += wab * c[k];
                }
            }
        }
    }

    /// `self += w · v⊗³`.
    pub fn add_cube(&mut self, w: f64, v: &[f64]) {
        self.add_outer(w, v, v, v);
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.scale(s);
        self
    }

    pub fn axpy(&mut self, a: f64, other: &Tensor3) {
        debug_assert_eq!(self.n, other.n);
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn sub(&self, other: &Tensor3) -> Tensor3 {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn inner(&self, other: &Tensor3) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.frob_norm_sq().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Average over the six index permutations.
    pub fn sym3(&self) -> Tensor3 {
        let n = self.n;
        let mut out = Tensor3::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let s = self.get(i, j, k)
                        + self.get(j, k, i)
                        + self.get(k, i, j)
                        + self.get(k, j, i)
                        + self.get(j, i, k)
                        + self.get(i, k, j);
                    out.set(i, j, k, s / 6.0);
                }
            }
        }
        out
    }

    /// Largest deviation between the tensor and any of its index transpositions.
    pub fn asymmetry(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let v = self.get(i, j, k);
                    for w in [
                        self.get(j, k, i),
                        self.get(k, i, j),
                        self.get(k, j, i),
                        self.get(j, i, k),
                        self.get(i, k, j),
                    ] {
                        worst = worst.max((v - w).abs());
                    }
                }
            }
        }
        worst
    }

    /// Copies the entries with `i <= j <= k` onto every permutation.
    pub fn mirror_sorted(&mut self) {
        let n = self.n;
        for i in 0..n {
            for j in i..n {
                for k in j..n {
                    let v = self.get(i, j, k);
                    self.set(i, k, j, v);
                    self.set(j, i, k, v);
                    self.set(j, k, i, v);
                    self.set(k, i, j, v);
                    self.set(k, j, i, v);
                }
            }
        }
    }

    /// Multilinear contraction `T(A, B, C)`: each index of the tensor is
    /// contracted with the first index of the matching matrix, so
    /// `[T(A,B,C)]_{mno} = Σ_{jkl} T_{jkl} A_{jm} B_{kn} C_{lo}`.
    pub fn contract(&self, a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<Tensor3> {
        let n = self.n;
        if a.nrows() != n || b.nrows() != n || c.nrows() != n {
            return shape_err(format!("contraction matrices must have {n} rows"));
        }
        let r = a.ncols();
        if b.ncols() != r || c.ncols() != r {
            return shape_err("contraction matrices must share a column count");
        }
        // Mode-3 product: X[j][k][o] = Σ_l T[j][k][l] C[l][o]
        let mut x = vec![0.0; n * n * r];
        for jk in 0..n * n {
            let row = &self.data[jk * n..(jk + 1) * n];
            for o in 0..r {
                let mut s = 0.0;
                for (l, t) in row.iter().enumerate() {
                    s += t * c[(l, o)];
                }
                x[jk * r + o] = s;
            }
        }
        // Mode-2: Y[j][n'][o] = Σ_k X[j][k][o] B[k][n']
        let mut y = vec![0.0; n * r * r];
        for j in 0..n {
            for nn in 0..r {
                for k in 0..n {
                    let bk = b[(k, nn)];
                    if bk == 0.0 {
                        continue;
                    }
                    let src = (j * n + k) * r;
                    let dst = (j * r + nn) * r;
                    for o in 0..r {
                        y[dst + o] += x[src + o] * bk;
                    }
                }
            }
        }
        // Mode-1: Z[m][n'][o] = Σ_j Y[j][n'][o] A[j][m]
        let mut z = vec![0.0; r * r * r];
        for m in 0..r {
            for j in 0..n {
                let aj = a[(j, m)];
                if aj == 0.0 {
                    continue;
                }
                let src = j * r * r;
                let dst = m * r * r;
                for q in 0..r * r {
                    z[dst + q] += y[src + q] * aj;
                }
            }
        }
        Tensor3::from_vec(r, z)
    }

    /// `T(W, W, W)`.
    pub fn contract_sym(&self, w: &DMatrix<f64>) -> Result<Tensor3> {
        self.contract(w, w, w)
    }

    /// The vector `T(·, x, x)`, i.e. `v_i = Σ_{jk} T_{ijk} x_j x_k`.
    pub fn apply_pair(&self, x: &[f64]) -> DVector<f64> {
        let n = self.n;
        let mut out = DVector::zeros(n);
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                let row = &self.data[(i * n + j) * n..(i * n + j + 1) * n];
                let inner: f64 = row.iter().zip(x).map(|(t, xk)| t * xk).sum();
                s += x[j] * inner;
            }
            out[i] = s;
        }
        out
    }

    /// `T(x, x, x)`.
    pub fn eval_cubic(&self, x: &[f64]) -> f64 {
        self.apply_pair(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Frontal slice `T[i, :, :]`.
    pub fn slice(&self, i: usize) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |j, k| self.get(i, j, k))
    }
}

/// Flat row-major array with an explicit shape, used for all tensor-valued JSON fields.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ShapedArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ShapedArray {
    pub fn vector(v: &DVector<f64>) -> Self {
        Self {
            shape: vec![v.len()],
            data: v.iter().copied().collect(),
        }
    }

    pub fn matrix(m: &DMatrix<f64>) -> Self {
        let (r, c) = m.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(m[(i, j)]);
            }
        }
        Self {
            shape: vec![r, c],
            data,
        }
    }

    pub fn tensor(t: &Tensor3) -> Self {
        let n = t.dim();
        Self {
            shape: vec![n, n, n],
            data: t.as_slice().to_vec(),
        }
    }

    fn check(&self, expect: &[usize], what: &str) -> Result<()> {
        if self.shape != expect {
            return Err(Error::Format(format!(
                "{what}: expected shape {expect:?}, found {:?}",
                self.shape
            )));
        }
        let len: usize = expect.iter().product();
        if self.data.len() != len {
            return Err(Error::Format(format!(
                "{what}: shape {:?} needs {len} values, found {}",
                self.shape,
                self.data.len()
            )));
        }
        if self.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format(format!("{what}: non-finite entry")));
        }
        Ok(())
    }

    pub fn to_vector(&self, n: usize, what: &str) -> Result<DVector<f64>> {
        self.check(&[n], what)?;
        Ok(DVector::from_vec(self.data.clone()))
    }

    pub fn to_matrix(&self, r: usize, c: usize, what: &str) -> Result<DMatrix<f64>> {
        self.check(&[r, c], what)?;
        Ok(DMatrix::from_row_slice(r, c, &self.data))
    }

    pub fn to_tensor(&self, n: usize, what: &str) -> Result<Tensor3> {
        self.check(&[n, n, n], what)?;
        Tensor3::from_vec(n, self.data.clone())
    }

    /// Leading dimension of the array, if any.
    pub fn lead(&self) -> Option<usize> {
        self.shape.first().copied()
    }
}
