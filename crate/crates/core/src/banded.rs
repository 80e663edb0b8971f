//! Symmetric positive definite band matrices with an in-place Cholesky
//! factorization. Only the lower band is stored.

#![allow(clippy::needless_range_loop)]

#[derive(Clone, Debug)]
pub(crate) struct BandedSpd {
    n: usize,
    bw: usize,
    /// Row `i` holds columns `i − bw ..= i` at offsets `0 ..= bw`.
    data: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Entry `(i, j)` of the symmetric matrix; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    /// Replaces row and column `d` by the identity, moving the coupling to
    /// the right-hand side for the prescribed value `value`.
    pub fn fix_dof(&mut self, d: usize, value: f64, rhs: &mut [f64]) {
        let lo = d.saturating_sub(self.bw);
        let hi = (d + self.bw).min(self.n - 1);
        for j in lo..=hi {
            if j == d {
                continue;
            }
            let kjd = self.get(j, d);
            if kjd != 0.0 {
                rhs[j] -= kjd * value;
                self.set(j, d, 0.0);
            }
        }
        self.set(d, d, 1.0);
        rhs[d] = value;
    }

    #[cfg(test)]
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..i {
                let a = self.data[self.idx(i, j)];
                y[i] += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += self.data[self.idx(i, i)] * x[i];
        }
        y
    }

    /// In-place Cholesky `A = L Lᵀ`. Returns the failing pivot row on a
    /// non-positive pivot.
    pub fn factor(&mut self) -> Result<(), usize> {
        let bw = self.bw;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut sum = self.data[self.idx(i, j)];
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    sum -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                if i == j {
                    // Also rejects NaN.
                    #[allow(clippy::neg_cmp_op_on_partial_ord)]
                    if !(sum > 0.0) {
                        return Err(i);
                    }
                    let k = self.idx(i, i);
                    self.data[k] = sum.sqrt();
                } else {
                    let k = self.idx(i, j);
                    self.data[k] = sum / self.data[self.idx(j, j)];
                }
            }
        }
        Ok(())
    }

    /// Solves with a factor produced by [`BandedSpd::factor`].
    pub fn solve_factored(&self, b: &mut [f64]) {
        let bw = self.bw;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            let mut sum = b[i];
            for k in lo..i {
                sum -= self.data[self.idx(i, k)] * b[k];
            }
            b[i] = sum / self.data[self.idx(i, i)];
        }
        for i in (0..self.n).rev() {
            let hi = (i + bw).min(self.n - 1);
            let mut sum = b[i];
            for k in i + 1..=hi {
                sum -= self.data[self.idx(k, i)] * b[k];
            }
            b[i] = sum / self.data[self.idx(i, i)];
        }
    }
}
