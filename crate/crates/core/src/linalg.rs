//! Banded and tridiagonal solvers plus a Sturm-sequence eigenvalue search.

use crate::error::{Error, Result};

/// General banded matrix with `kl` sub- and `ku` super-diagonals, stored row
/// by row with room for the `kl` extra super-diagonals that partial pivoting
/// can fill in.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku, "({i},{j}) outside band");
        i * self.width + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku + self.kl {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i},{j}) outside declared band"
        );
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i},{j}) outside declared band"
        );
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// LU factorisation with row partial pivoting.
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let kl = self.kl;
        let reach = kl + self.ku;
        let mut pivots = vec![0usize; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.data[self.slot(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::SingularMatrix(k));
            }
            pivots[k] = p;
            let last_col = (k + reach).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let a = self.slot(k, j);
                    let b = self.slot(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(k, k)];
            for i in k + 1..=last_row {
                let sik = self.slot(i, k);
                let l = self.data[sik] / pivot;
                self.data[sik] = l;
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        let skj = self.slot(k, j);
                        let sij = self.slot(i, j);
                        self.data[sij] -= l * self.data[skj];
                    }
                }
            }
        }
        Ok(BandLu { m: self, pivots })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
    pivots: Vec<usize>,
}

impl BandLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.m.n;
        let kl = self.m.kl;
        let reach = kl + self.m.ku;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                b[i] -= self.m.data[self.m.slot(i, k)] * bk;
            }
        }
        for k in (0..n).rev() {
            let mut acc = b[k];
            for j in k + 1..=(k + reach).min(n - 1) {
                acc -= self.m.data[self.m.slot(k, j)] * b[j];
            }
            b[k] = acc / self.m.data[self.m.slot(k, k)];
        }
    }
}

/// Tridiagonal matrix `sub[i] = A[i+1][i]`, `diag[i] = A[i][i]`,
/// `sup[i] = A[i][i+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(sub: Vec<f64>, diag: Vec<f64>, sup: Vec<f64>) -> Self {
        assert_eq!(sub.len() + 1, diag.len());
        assert_eq!(sup.len() + 1, diag.len());
        Self { sub, diag, sup }
    }

    pub fn size(&self) -> usize {
        self.diag.len()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        let n = self.size();
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.sub[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.sup[i] * x[i + 1];
            }
            y[i] = acc;
        }
    }

    /// `alpha * I + beta * self`.
    pub fn shifted(&self, alpha: f64, beta: f64) -> Self {
        Self {
            sub: self.sub.iter().map(|v| beta * v).collect(),
            diag: self.diag.iter().map(|v| alpha + beta * v).collect(),
            sup: self.sup.iter().map(|v| beta * v).collect(),
        }
    }

    /// Thomas factorisation without pivoting; intended for diagonally
    /// dominant systems.
    pub fn factor(&self) -> Result<TridiagonalLu> {
        let n = self.size();
        let mut upper = vec![0.0; n];
        let mut lower = vec![0.0; n.saturating_sub(1)];
        upper[0] = self.diag[0];
        if upper[0] == 0.0 {
            return Err(Error::SingularMatrix(0));
        }
        for i in 1..n {
            let l = self.sub[i - 1] / upper[i - 1];
            lower[i - 1] = l;
            upper[i] = self.diag[i] - l * self.sup[i - 1];
            if upper[i] == 0.0 || !upper[i].is_finite() {
                return Err(Error::SingularMatrix(i));
            }
        }
        Ok(TridiagonalLu {
            lower,
            upper,
            sup: self.sup.clone(),
        })
    }

    /// Diagonal similarity `D A D^{-1}` that symmetrises a tridiagonal matrix
    /// whose off-diagonal products are positive. Returns the symmetric
    /// off-diagonal and the scaling `d`.
    pub fn symmetrize(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.size();
        let mut off = Vec::with_capacity(n - 1);
        let mut d = vec![1.0; n];
        for i in 0..n - 1 {
            let prod = self.sub[i] * self.sup[i];
            if prod <= 0.0 {
                return Err(Error::EigenFailed(format!(
                    "off-diagonal product {prod:e} at row {i} is not positive"
                )));
            }
            off.push(prod.sqrt() * self.sup[i].signum());
            d[i + 1] = d[i] * (self.sup[i] / self.sub[i]).sqrt();
        }
        Ok((off, d))
    }
}

#[derive(Debug, Clone)]
pub struct TridiagonalLu {
    lower: Vec<f64>,
    upper: Vec<f64>,
    sup: Vec<f64>,
}

impl TridiagonalLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.upper.len();
        for i in 1..n {
            b[i] -= self.lower[i - 1] * b[i - 1];
        }
        b[n - 1] /= self.upper[n - 1];
        for i in (0..n - 1).rev() {
            b[i] = (b[i] - self.sup[i] * b[i + 1]) / self.upper[i];
        }
    }
}

/// Number of eigenvalues strictly below `x` of the symmetric tridiagonal
/// matrix (`diag`, `off`).
pub fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = diag[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..diag.len() {
        let denom = if q == 0.0 { f64::EPSILON * (off[i - 1].abs() + 1.0) } else { q };
        q = diag[i] - x - off[i - 1] * off[i - 1] / denom;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// The `k` largest eigenvalues (descending) of a symmetric tridiagonal
/// matrix, each located by bisection to roughly machine precision.
pub fn largest_eigenvalues(diag: &[f64], off: &[f64], k: usize) -> Result<Vec<f64>> {
    let n = diag.len();
    if k == 0 || k > n {
        return Err(Error::EigenFailed(format!("requested {k} of {n} eigenvalues")));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < n { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    let scale = lo.abs().max(hi.abs()).max(1.0);
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        // eigenvalue with exactly n-1-j eigenvalues below it
        let target = n - 1 - j;
        let (mut a, mut b) = (lo - 1e-12 * scale, hi + 1e-12 * scale);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if sturm_count(diag, off, mid) > target {
                b = mid;
            } else {
                a = mid;
            }
        }
        out.push(0.5 * (a + b));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn dense_band(n: usize, kl: usize, ku: usize, seed: u64) -> (BandMatrix, DMatrix<f64>) {
        let mut band = BandMatrix::zeros(n, kl, ku);
        let mut dense = DMatrix::zeros(n, n);
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                // weak diagonal forces genuine pivoting
                let v = if i == j { 0.01 * next() } else { next() };
                band.set(i, j, v);
                dense[(i, j)] = v;
            }
        }
        (band, dense)
    }

    #[test]
    fn band_lu_matches_dense_solve() {
        for (kl, ku, seed) in [(1, 1, 1), (3, 3, 2), (2, 4, 3), (4, 1, 4)] {
            let n = 40;
            let (band, dense) = dense_band(n, kl, ku, seed);
            let rhs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
            let lu = band.clone().factor().unwrap();
            let mut x = rhs.clone();
            lu.solve_in_place(&mut x);
            let back = band.mul_vec(&x);
            for i in 0..n {
                assert!((back[i] - rhs[i]).abs() < 1e-9, "kl={kl} ku={ku} row {i}");
            }
            let exact = dense.lu().solve(&nalgebra::DVector::from_vec(rhs)).unwrap();
            for i in 0..n {
                assert!((exact[i] - x[i]).abs() < 1e-8 * (1.0 + exact[i].abs()));
            }
        }
    }

    #[test]
    fn singular_band_is_reported() {
        let band = BandMatrix::zeros(5, 1, 1);
        assert!(matches!(band.factor(), Err(Error::SingularMatrix(0))));
    }

    #[test]
    fn thomas_solves_diagonally_dominant() {
        let n = 30;
        let t = Tridiagonal::new(vec![-1.0; n - 1], vec![4.0; n], vec![-1.5; n - 1]);
        let rhs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut x = rhs.clone();
        t.factor().unwrap().solve_in_place(&mut x);
        let back = t.mul_vec(&x);
        for i in 0..n {
            assert!((back[i] - rhs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn bisection_matches_dense_eigenvalues() {
        let n = 60;
        let sub: Vec<f64> = (0..n - 1).map(|i| 1.0 + 0.1 * (i as f64).cos()).collect();
        let sup: Vec<f64> = (0..n - 1).map(|i| 2.0 + 0.3 * (i as f64).sin()).collect();
        let diag: Vec<f64> = (0..n).map(|i| -4.0 + (i as f64 * 0.2).sin()).collect();
        let t = Tridiagonal::new(sub.clone(), diag.clone(), sup.clone());
        let (off, _) = t.symmetrize().unwrap();
        let top = largest_eigenvalues(&diag, &off, 3).unwrap();

        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            dense[(i, i)] = diag[i];
            if i + 1 < n {
                dense[(i, i + 1)] = sup[i];
                dense[(i + 1, i)] = sub[i];
            }
        }
        let mut ev: Vec<f64> = dense.complex_eigenvalues().iter().map(|c| c.re).collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for j in 0..3 {
            assert!((top[j] - ev[j]).abs() < 1e-9, "{} vs {}", top[j], ev[j]);
        }
    }
}
