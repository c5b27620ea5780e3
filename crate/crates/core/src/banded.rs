//! Symmetric banded matrices with an in-place Cholesky factorization.

#[derive(Debug, Clone)]
pub(crate) struct BandedMatrix {
    n: usize,
    bw: usize,
    /// Row `i` holds columns `i - bw ..= i`.
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandedMatrix { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Adds `v` to entry `(i, j)` (and implicitly `(j, i)`).
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let s = self.slot(r, c);
        self.data[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if r - c > self.bw {
            0.0
        } else {
            self.data[self.slot(r, c)]
        }
    }

    pub fn max_diagonal(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).fold(0.0, f64::max)
    }

    /// Cholesky factor `L` with `A = L L^T`; `None` if a pivot is not positive.
    pub fn cholesky(&self) -> Option<BandedCholesky> {
        let (n, bw) = (self.n, self.bw);
        let mut l = self.clone();
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = l.data[l.slot(i, j)];
                for k in k0..j {
                    s -= l.data[l.slot(i, k)] * l.data[l.slot(j, k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    let slot = l.slot(i, i);
                    l.data[slot] = s.sqrt();
                } else {
                    let slot = l.slot(i, j);
                    l.data[slot] = s / l.data[l.slot(j, j)];
                }
            }
        }
        Some(BandedCholesky { l })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BandedCholesky {
    l: BandedMatrix,
}

impl BandedCholesky {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let l = &self.l;
        let (n, bw) = (l.n, l.bw);
        let mut y = rhs.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= l.data[l.slot(i, k)] * y[k];
            }
            y[i] = s / l.data[l.slot(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n.min(i + bw + 1) {
                s -= l.data[l.slot(k, i)] * y[k];
            }
            y[i] = s / l.data[l.slot(i, i)];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_tridiagonal_system() {
        let n = 6;
        let mut a = BandedMatrix::zeros(n, 1);
        for i in 0..n {
            a.add(i, i, 4.0);
            if i + 1 < n {
                a.add(i + 1, i, -1.0);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| i as f64 - 2.5).collect();
        let b: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| a.get(i, j) * x[j]).sum())
            .collect();
        let got = a.cholesky().unwrap().solve(&b);
        for (g, w) in got.iter().zip(&x) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut a = BandedMatrix::zeros(2, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, 1.0);
        a.add(1, 0, 2.0);
        assert!(a.cholesky().is_none());
    }

    #[test]
    fn wide_band_matches_dense_solve() {
        let n = 9;
        let bw = 3;
        let mut a = BandedMatrix::zeros(n, bw);
        for i in 0..n {
            a.add(i, i, 10.0 + i as f64);
            for d in 1..=bw {
                if i + d < n {
                    a.add(i + d, i, 1.0 / (1.0 + d as f64 + i as f64));
                }
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = a.cholesky().unwrap().solve(&b);
        for i in 0..n {
            let r: f64 = (0..n).map(|j| a.get(i, j) * x[j]).sum::<f64>() - b[i];
            assert!(r.abs() < 1e-12);
        }
    }
}
