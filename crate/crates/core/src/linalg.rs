//! Dense factorizations used by the Kriging solvers.
//!
//! Matrices are row-major `Array2<f64>`. The Cholesky factorization and the
//! triangular solves are blocked so that the bulk of the work runs through
//! `ndarray`'s matrix product.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis};

const BLOCK: usize = 96;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct NotPositiveDefinite;

/// Unblocked lower Cholesky on a square view; only the lower triangle is read.
fn cholesky_unblocked(mut a: ArrayViewMut2<f64>) -> Result<(), NotPositiveDefinite> {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..=i {
            let s = {
                let ri = a.row(i);
                let rj = a.row(j);
                let mut acc = 0.0;
                for l in 0..j {
                    acc += ri[l] * rj[l];
                }
                a[[i, j]] - acc
            };
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(NotPositiveDefinite);
                }
                a[[i, i]] = s.sqrt();
            } else {
                a[[i, j]] = s / a[[j, j]];
            }
        }
    }
    Ok(())
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub(crate) fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>, NotPositiveDefinite> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut l = a.to_owned();
    if n <= 2 * BLOCK {
        // contiguous rows make the small case fast enough
        for i in 0..n {
            for j in 0..=i {
                let s = {
                    let (ri, rj) = (l.row(i), l.row(j));
                    let ri = ri.as_slice().unwrap();
                    let rj = rj.as_slice().unwrap();
                    l[[i, j]] - dot(&ri[..j], &rj[..j])
                };
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(NotPositiveDefinite);
                    }
                    l[[i, i]] = s.sqrt();
                } else {
                    l[[i, j]] = s / l[[j, j]];
                }
            }
        }
    } else {
        let mut k = 0;
        while k < n {
            let kb = BLOCK.min(n - k);
            let end = k + kb;
            cholesky_unblocked(l.slice_mut(s![k..end, k..end]))?;
            if end < n {
                // panel <- panel * L_kk^{-T}
                let lkk = l.slice(s![k..end, k..end]).to_owned();
                let mut panel = l.slice_mut(s![end.., k..end]);
                for mut row in panel.rows_mut() {
                    for j in 0..kb {
                        let mut v = row[j];
                        for t in 0..j {
                            v -= row[t] * lkk[[j, t]];
                        }
                        row[j] = v / lkk[[j, j]];
                    }
                }
                // trailing lower blocks -= panel_i * panel_j^T
                let panel = l.slice(s![end.., k..end]).to_owned();
                let m = n - end;
                let mut bi = 0;
                while bi < m {
                    let ib = BLOCK.min(m - bi);
                    let pi = panel.slice(s![bi..bi + ib, ..]);
                    let pj = panel.slice(s![..bi + ib, ..]);
                    let mut target = l.slice_mut(s![end + bi..end + bi + ib, end..end + bi + ib]);
                    general_mat_mul(-1.0, &pi, &pj.t(), 1.0, &mut target);
                    bi += ib;
                }
            }
            k = end;
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            l[[i, j]] = 0.0;
        }
    }
    Ok(l)
}

/// Solve `L X = B` in place for lower-triangular `L`.
pub(crate) fn solve_lower_in_place(l: &ArrayView2<f64>, b: &mut Array2<f64>) {
    let n = l.nrows();
    let mut k = 0;
    while k < n {
        let kb = BLOCK.min(n - k);
        let end = k + kb;
        if k > 0 {
            let (done, mut rest) = b.view_mut().split_at(Axis(0), k);
            let mut cur = rest.slice_mut(s![..kb, ..]);
            general_mat_mul(-1.0, &l.slice(s![k..end, ..k]), &done, 1.0, &mut cur);
        }
        for i in k..end {
            for j in k..i {
                let lij = l[[i, j]];
                if lij != 0.0 {
                    let (head, mut tail) = b.view_mut().split_at(Axis(0), i);
                    tail.row_mut(0).scaled_add(-lij, &head.row(j));
                }
            }
            let d = l[[i, i]];
            b.row_mut(i).mapv_inplace(|v| v / d);
        }
        k = end;
    }
}

/// Solve `L^T X = B` in place for lower-triangular `L`.
pub(crate) fn solve_upper_t_in_place(l: &ArrayView2<f64>, b: &mut Array2<f64>) {
    let n = l.nrows();
    let mut end = n;
    while end > 0 {
        let kb = BLOCK.min(end);
        let k = end - kb;
        if end < n {
            // rows k..end -= L[end.., k..end]^T X[end..]
            let (mut head, done) = b.view_mut().split_at(Axis(0), end);
            let mut cur = head.slice_mut(s![k.., ..]);
            general_mat_mul(-1.0, &l.slice(s![end.., k..end]).t(), &done, 1.0, &mut cur);
        }
        for i in (k..end).rev() {
            let d = l[[i, i]];
            b.row_mut(i).mapv_inplace(|v| v / d);
            for j in k..i {
                let lij = l[[i, j]];
                if lij != 0.0 {
                    let (mut head, tail) = b.view_mut().split_at(Axis(0), i);
                    head.row_mut(j).scaled_add(-lij, &tail.row(0));
                }
            }
        }
        end = k;
    }
}

pub(crate) fn solve_lower_vec(l: &ArrayView2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let mut m = b.clone().insert_axis(Axis(1));
    solve_lower_in_place(l, &mut m);
    m.remove_axis(Axis(1))
}

pub(crate) fn solve_upper_t_vec(l: &ArrayView2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let mut m = b.clone().insert_axis(Axis(1));
    solve_upper_t_in_place(l, &mut m);
    m.remove_axis(Axis(1))
}

/// Solve `A X = B` given the lower Cholesky factor of `A`.
pub(crate) fn cholesky_solve(l: &ArrayView2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut x = b.clone();
    solve_lower_in_place(l, &mut x);
    solve_upper_t_in_place(l, &mut x);
    x
}

/// LU factorization with partial pivoting, used for small non-symmetric systems.
pub(crate) struct Lu {
    lu: Array2<f64>,
    perm: Vec<usize>,
}

impl Lu {
    pub(crate) fn new(a: &Array2<f64>) -> Option<Self> {
        let n = a.nrows();
        let mut lu = a.to_owned();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[[i, k]].abs()))
                .fold((k, -1.0), |best, c| if c.1 > best.1 { c } else { best });
            if pmax <= 1e-14 * scale {
                return None;
            }
            if p != k {
                for j in 0..n {
                    lu.swap([k, j], [p, j]);
                }
                perm.swap(k, p);
            }
            let pivot = lu[[k, k]];
            for i in k + 1..n {
                let f = lu[[i, k]] / pivot;
                lu[[i, k]] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        lu[[i, j]] -= f * lu[[k, j]];
                    }
                }
            }
        }
        Some(Lu { lu, perm })
    }

    pub(crate) fn solve(&self, b: &Array2<f64>) -> Array2<f64> {
        let n = self.lu.nrows();
        let mut x = b.select(Axis(0), &self.perm);
        for i in 0..n {
            for j in 0..i {
                let f = self.lu[[i, j]];
                if f != 0.0 {
                    let (head, mut tail) = x.view_mut().split_at(Axis(0), i);
                    tail.row_mut(0).scaled_add(-f, &head.row(j));
                }
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let f = self.lu[[i, j]];
                if f != 0.0 {
                    let (mut head, tail) = x.view_mut().split_at(Axis(0), i + 1);
                    head.row_mut(i).scaled_add(-f, &tail.row(j - i - 1));
                }
            }
            let d = self.lu[[i, i]];
            x.row_mut(i).mapv_inplace(|v| v / d);
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    fn random_spd(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::rng::stream(seed, crate::rng::Stream::Noise);
        let b = Array2::from_shape_fn((n, n), |_| rng.random::<f64>() - 0.5);
        let mut a = b.dot(&b.t());
        for i in 0..n {
            a[[i, i]] += n as f64 * 0.1;
        }
        a
    }

    #[test]
    fn cholesky_reconstructs_small_and_blocked() {
        for &n in &[1usize, 7, 150, 400] {
            let a = random_spd(n, n as u64);
            let l = cholesky(&a).unwrap();
            let r = l.dot(&l.t());
            let err = (&r - &a).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err < 1e-9, "n={n} err={err}");
            for i in 0..n {
                for j in i + 1..n {
                    assert_eq!(l[[i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = ndarray::array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(&a).is_err());
    }

    #[test]
    fn triangular_solves_match_products() {
        for &n in &[5usize, 300] {
            let a = random_spd(n, 11 + n as u64);
            let l = cholesky(&a).unwrap();
            let mut rng = crate::rng::stream(5, crate::rng::Stream::Noise);
            let b = Array2::from_shape_fn((n, 3), |_| rng.random::<f64>());
            let x = cholesky_solve(&l.view(), &b);
            let err = (&a.dot(&x) - &b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err < 1e-9, "n={n} err={err}");
        }
    }

    #[test]
    fn lu_solves_nonsymmetric() {
        let a = ndarray::array![[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]];
        let b = ndarray::array![[1.0], [2.0], [3.0]];
        let x = Lu::new(&a).unwrap().solve(&b);
        let err = (&a.dot(&x) - &b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-12);
        let singular = ndarray::array![[1.0, 2.0], [2.0, 4.0]];
        assert!(Lu::new(&singular).is_none());
    }
}
