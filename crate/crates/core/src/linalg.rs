//! Small dense linear algebra over row vectors.
//!
//! Everything here works with rows as `&[f64]` slices. Matrices are row-major
//! and tiny (d up to a few hundred), so Gram–Schmidt with one
//! re-orthogonalization pass is all the factorization we need.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// Relative tolerance below which a Gram–Schmidt residual counts as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RowVec(pub Vec<f64>);

impl RowVec {
    pub fn zeros(d: usize) -> Self {
        RowVec(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for RowVec {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for RowVec {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for RowVec {
    fn from(v: Vec<f64>) -> Self {
        RowVec(v)
    }
}

impl AsRef<[f64]> for RowVec {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Which row-norm power a sampler or objective uses: `‖·‖₂` or `‖·‖₂²`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Power {
    One,
    Two,
}

impl Power {
    pub fn from_int(p: u32) -> Result<Self> {
        match p {
            1 => Ok(Power::One),
            2 => Ok(Power::Two),
            other => Err(Error::InvalidParameter(format!("p must be 1 or 2, got {other}"))),
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Power::One => 1.0,
            Power::Two => 2.0,
        }
    }

    pub fn as_int(self) -> u32 {
        match self {
            Power::One => 1,
            Power::Two => 2,
        }
    }

    /// `x^p` for a nonnegative norm value.
    #[inline]
    pub fn raise(self, x: f64) -> f64 {
        match self {
            Power::One => x,
            Power::Two => x * x,
        }
    }

    /// `x^{1/p}`.
    #[inline]
    pub fn root(self, x: f64) -> f64 {
        match self {
            Power::One => x,
            Power::Two => x.sqrt(),
        }
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize, d: usize) -> Self {
        DenseMatrix {
            n,
            d,
            data: vec![0.0; n * d],
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d, d);
        for i in 0..d {
            m.data[i * d + i] = 1.0;
        }
        m
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(DenseMatrix {
            n: rows.len(),
            d,
            data,
        })
    }

    /// Builds an `n × d` matrix from a flat row-major buffer.
    pub fn from_flat(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: data.len(),
            });
        }
        Ok(DenseMatrix { n, d, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact panics on zero chunk size
        let d = self.d.max(1);
        self.data.chunks_exact(d).take(self.n)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.d + j] = v;
    }

    pub fn frobenius(&self) -> f64 {
        norm(&self.data)
    }

    /// `self · rhs` for a `d × m` right factor.
    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if rhs.n != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: rhs.n,
            });
        }
        let mut out = DenseMatrix::zeros(self.n, rhs.d);
        for i in 0..self.n {
            let src = self.row(i);
            let dst = &mut out.data[i * rhs.d..(i + 1) * rhs.d];
            for (l, &a) in src.iter().enumerate() {
                if a != 0.0 {
                    axpy(a, rhs.row(l), dst);
                }
            }
        }
        Ok(out)
    }

    /// Applies a post-processing projector to every row.
    pub fn project(&self, p: &Projector) -> Result<DenseMatrix> {
        p.check_dim(self.d)?;
        let mut out = DenseMatrix::zeros(self.n, self.d);
        for i in 0..self.n {
            let (src, dst) = (self.row(i), &mut out.data[i * self.d..(i + 1) * self.d]);
            p.apply_into(src, dst);
        }
        Ok(out)
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.d, self.n);
        for i in 0..self.n {
            for j in 0..self.d {
                t.data[j * self.n + i] = self.data[i * self.d + j];
            }
        }
        t
    }
}

/// `‖m‖_{p,2}`: Frobenius norm for p = 2, sum of row norms for p = 1.
pub fn lpq_norm(m: &DenseMatrix, p: Power) -> f64 {
    match p {
        Power::Two => m.frobenius(),
        Power::One => m.rows().map(norm).sum(),
    }
}

/// An orthonormal list of vectors in R^dim, grown one vector at a time.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthoBasis {
    dim: usize,
    vectors: Vec<Vec<f64>>,
    rank_tol: f64,
}

impl OrthoBasis {
    pub fn new(dim: usize) -> Self {
        Self::with_tolerance(dim, DEFAULT_RANK_TOL)
    }

    pub fn with_tolerance(dim: usize, rank_tol: f64) -> Self {
        OrthoBasis {
            dim,
            vectors: Vec::new(),
            rank_tol,
        }
    }

    /// Orthonormalizes `rows` in order, dropping dependent ones.
    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut b = Self::new(dim);
        for r in rows {
            b.push(r.as_ref())?;
        }
        Ok(b)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Residual without the dimension check; `out` must have length `dim`.
    pub(crate) fn residual_into(&self, v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(v);
        for q in &self.vectors {
            let c = dot(q, out);
            axpy(-c, q, out);
        }
    }

    /// `v` minus its orthogonal projection onto the span of the basis.
    pub fn residual(&self, v: &[f64]) -> Result<RowVec> {
        self.check(v)?;
        let mut out = vec![0.0; self.dim];
        self.residual_into(v, &mut out);
        Ok(RowVec(out))
    }

    /// Orthogonal projection of `v` onto the span.
    pub fn project(&self, v: &[f64]) -> Result<RowVec> {
        let r = self.residual(v)?;
        Ok(RowVec(v.iter().zip(r.iter()).map(|(a, b)| a - b).collect()))
    }

    /// Appends the normalized residual of `v` unless it is negligible.
    /// Returns whether the basis grew.
    pub fn push(&mut self, v: &[f64]) -> Result<bool> {
        self.check(v)?;
        let vnorm = norm(v);
        if vnorm == 0.0 || !vnorm.is_finite() || self.vectors.len() >= self.dim {
            return Ok(false);
        }
        let mut r = vec![0.0; self.dim];
        self.residual_into(v, &mut r);
        // second pass restores orthogonality lost to cancellation
        for q in &self.vectors {
            let c = dot(q, &r);
            axpy(-c, q, &mut r);
        }
        let rnorm = norm(&r);
        if rnorm <= self.rank_tol * vnorm {
            return Ok(false);
        }
        r.iter_mut().for_each(|x| *x /= rnorm);
        self.vectors.push(r);
        Ok(true)
    }

    pub fn extended(&self, v: &[f64]) -> Result<OrthoBasis> {
        let mut b = self.clone();
        b.push(v)?;
        Ok(b)
    }

    /// Merges the span of `other` into this basis.
    pub fn absorb(&mut self, other: &OrthoBasis) -> Result<()> {
        for v in &other.vectors {
            self.push(v)?;
        }
        Ok(())
    }
}

/// A post-processing matrix `P` applied on the right of stored rows.
#[derive(Clone, Debug, PartialEq)]
pub enum Projector {
    Identity,
    /// `I − M†M` for `M` spanned by the basis.
    Complement(OrthoBasis),
    /// Explicit `d × d` matrix.
    Matrix(DenseMatrix),
}

impl Projector {
    pub fn complement_of(basis: &OrthoBasis) -> Self {
        if basis.is_empty() {
            Projector::Identity
        } else {
            Projector::Complement(basis.clone())
        }
    }

    pub fn matrix(m: DenseMatrix) -> Result<Self> {
        if m.n() != m.d() {
            return Err(Error::DimensionMismatch {
                expected: m.n(),
                got: m.d(),
            });
        }
        Ok(Projector::Matrix(m))
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        let expected = match self {
            Projector::Identity => return Ok(()),
            Projector::Complement(b) => b.dim(),
            Projector::Matrix(m) => m.d(),
        };
        if expected != d {
            return Err(Error::DimensionMismatch { expected: d, got: expected });
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Projector::Identity)
    }

    /// `out = v · P`. Lengths must already agree.
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Projector::Identity => out.copy_from_slice(v),
            Projector::Complement(b) => b.residual_into(v, out),
            Projector::Matrix(m) => {
                out.iter_mut().for_each(|x| *x = 0.0);
                for (l, &a) in v.iter().enumerate() {
                    if a != 0.0 {
                        axpy(a, m.row(l), out);
                    }
                }
            }
        }
    }

    pub fn apply(&self, v: &[f64]) -> RowVec {
        let mut out = vec![0.0; v.len()];
        self.apply_into(v, &mut out);
        RowVec(out)
    }

    /// The explicit `d × d` matrix.
    pub fn to_matrix(&self, d: usize) -> DenseMatrix {
        let id = DenseMatrix::identity(d);
        let mut out = DenseMatrix::zeros(d, d);
        for i in 0..d {
            self.apply_into(id.row(i), out.row_mut(i));
        }
        out
    }
}

/// Volume of the parallelepiped spanned by `rows`: `sqrt(det(R Rᵀ))`,
/// computed as the product of successive Gram–Schmidt residual norms.
pub fn parallelepiped_volume<R: AsRef<[f64]>>(rows: &[R]) -> Result<f64> {
    let Some(first) = rows.first() else {
        return Ok(1.0);
    };
    let d = first.as_ref().len();
    if rows.len() > d {
        return Err(Error::TooManyRows {
            rows: rows.len(),
            dim: d,
        });
    }
    let mut basis = OrthoBasis::new(d);
    let mut vol = 1.0;
    let mut r = vec![0.0; d];
    for row in rows {
        let row = row.as_ref();
        basis.check(row)?;
        basis.residual_into(row, &mut r);
        for q in &basis.vectors {
            let c = dot(q, &r);
            axpy(-c, q, &mut r);
        }
        let rn = norm(&r);
        if rn <= basis.rank_tol * norm(row) || rn == 0.0 {
            return Ok(0.0);
        }
        vol *= rn;
        r.iter_mut().for_each(|x| *x /= rn);
        basis.vectors.push(r.clone());
    }
    Ok(vol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn extend_examples() {
        let b = OrthoBasis::new(2).extended(&[3.0, 0.0]).unwrap();
        assert_eq!(b.vectors(), &[vec![1.0, 0.0]]);

        let same = b.extended(&[5.0, 0.0]).unwrap();
        assert_eq!(same.rank(), 1);

        let full = b.extended(&[1.0, 1.0]).unwrap();
        assert_eq!(full.rank(), 2);
        assert!(close(&full.vectors()[1], &[0.0, 1.0], 1e-15));

        assert!(matches!(
            b.extended(&[1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn residual_examples() {
        let empty = OrthoBasis::new(2);
        assert_eq!(empty.residual(&[2.0, 3.0]).unwrap().0, vec![2.0, 3.0]);
        let e1 = OrthoBasis::from_rows(2, &[[1.0, 0.0]]).unwrap();
        assert_eq!(e1.residual(&[2.0, 3.0]).unwrap().0, vec![0.0, 3.0]);
        let full = OrthoBasis::from_rows(2, &[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(full.residual(&[-4.0, 7.5]).unwrap().0, vec![0.0, 0.0]);
        assert!(e1.residual(&[1.0]).is_err());
    }

    #[test]
    fn volume_examples() {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!((parallelepiped_volume(&id).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(parallelepiped_volume(&[[2.0, 0.0], [0.0, 3.0]]).unwrap(), 6.0);
        assert_eq!(parallelepiped_volume(&[[1.0, 0.0], [2.0, 0.0]]).unwrap(), 0.0);
        assert!(matches!(
            parallelepiped_volume(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]),
            Err(Error::TooManyRows { .. })
        ));
    }

    #[test]
    fn lpq_examples() {
        let z = DenseMatrix::zeros(3, 2);
        assert_eq!(lpq_norm(&z, Power::One), 0.0);
        assert_eq!(lpq_norm(&z, Power::Two), 0.0);
        let m = DenseMatrix::from_rows(&[[3.0, 4.0], [0.0, 0.0]]).unwrap();
        assert_eq!(lpq_norm(&m, Power::One), 5.0);
        assert_eq!(lpq_norm(&m, Power::Two), 5.0);
    }

    #[test]
    fn projector_matrix_matches_complement() {
        let b = OrthoBasis::from_rows(3, &[[1.0, 1.0, 0.0]]).unwrap();
        let p = Projector::complement_of(&b);
        let m = Projector::matrix(p.to_matrix(3)).unwrap();
        let v = [0.3, -1.2, 2.0];
        assert!(close(&p.apply(&v), &m.apply(&v), 1e-14));
    }

    // determinant by Gaussian elimination with partial pivoting
    fn det(mut a: Vec<Vec<f64>>) -> f64 {
        let k = a.len();
        let mut det = 1.0;
        for c in 0..k {
            let piv = (c..k).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
            if a[piv][c] == 0.0 {
                return 0.0;
            }
            if piv != c {
                a.swap(piv, c);
                det = -det;
            }
            det *= a[c][c];
            for r in c + 1..k {
                let f = a[r][c] / a[c][c];
                for j in c..k {
                    a[r][j] -= f * a[c][j];
                }
            }
        }
        det
    }

    fn rows_strategy(max_k: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), 1..=max_k)
    }

    proptest! {
        #[test]
        fn residual_idempotent_and_pythagorean(
            basis_rows in rows_strategy(4, 5),
            v in prop::collection::vec(-10.0f64..10.0, 5),
        ) {
            let b = OrthoBasis::from_rows(5, &basis_rows).unwrap();
            let r = b.residual(&v).unwrap();
            let rr = b.residual(&r).unwrap();
            let vn = norm(&v);
            let diff: Vec<f64> = rr.iter().zip(r.iter()).map(|(a, b)| a - b).collect();
            prop_assert!(norm(&diff) <= 1e-9 * vn.max(1e-300));
            let p = b.project(&v).unwrap();
            let lhs = norm_sq(&v);
            let rhs = norm_sq(&p) + norm_sq(&r);
            prop_assert!((lhs - rhs).abs() <= 1e-8 * lhs.max(1e-300));
            for (i, qi) in b.vectors().iter().enumerate() {
                for (j, qj) in b.vectors().iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((dot(qi, qj) - want).abs() <= 1e-9);
                }
            }
        }

        #[test]
        fn volume_matches_gram_determinant(rows in rows_strategy(4, 4)) {
            let k = rows.len();
            let gram: Vec<Vec<f64>> = (0..k)
                .map(|i| (0..k).map(|j| dot(&rows[i], &rows[j])).collect())
                .collect();
            let direct = det(gram).max(0.0).sqrt();
            let vol = parallelepiped_volume(&rows).unwrap();
            prop_assert!((vol - direct).abs() <= 1e-8 * direct.max(1e-6));
        }

        #[test]
        fn volume_permutation_and_scaling(
            rows in rows_strategy(4, 4),
            c in prop::sample::select(vec![-3.0f64, -0.5, 0.25, 2.0, 7.0]),
            which in 0usize..4,
        ) {
            let vol = parallelepiped_volume(&rows).unwrap();
            let mut rev = rows.clone();
            rev.reverse();
            let vrev = parallelepiped_volume(&rev).unwrap();
            prop_assert!((vol - vrev).abs() <= 1e-9 * vol.max(1e-6));
            let mut scaled = rows.clone();
            let w = which % scaled.len();
            scaled[w].iter_mut().for_each(|x| *x *= c);
            let vs = parallelepiped_volume(&scaled).unwrap();
            prop_assert!((vs - c.abs() * vol).abs() <= 1e-9 * (c.abs() * vol).max(1e-6));
        }
    }
}
