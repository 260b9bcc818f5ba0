use super::{check_row, check_update, median, LinearSketch};
use crate::error::{Error, Result};
use crate::linalg::Projector;
use crate::randomness::{hash_premixed, premix};
use crate::stream::TurnstileUpdate;

/// Groups in the median-of-means layout.
pub const AMS_GROUPS: usize = 6;

const MAX_CELLS: usize = 1 << 26;

/// `SIGN_MASKS[b][k]` is the f64 sign-bit mask for bit `k` of byte `b`.
static SIGN_MASKS: [[u64; 8]; 256] = {
    let mut t = [[0u64; 8]; 256];
    let mut b = 0;
    while b < 256 {
        let mut k = 0;
        while k < 8 {
            t[b][k] = (((b >> k) & 1) as u64) << 63;
            k += 1;
        }
        b += 1;
    }
    t
};

/// `SIGN_F64[b][k]` is `−1` if bit `k` of byte `b` is set, else `+1`.
static SIGN_F64: [[f64; 8]; 256] = {
    let mut t = [[0f64; 8]; 256];
    let mut b = 0;
    while b < 256 {
        let mut k = 0;
        while k < 8 {
            t[b][k] = if (b >> k) & 1 == 1 { -1.0 } else { 1.0 };
            k += 1;
        }
        b += 1;
    }
    t
};

#[inline]
fn expand_signs(word: u64, out: &mut [u64; 64]) {
    for (byte, chunk) in out.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&SIGN_MASKS[((word >> (8 * byte)) & 0xFF) as usize]);
    }
}

/// Frobenius-norm sketch: `R` accumulators, each `Σᵢ sᵢ·Aᵢ` for an
/// independent sign vector `s`.
///
/// Accumulators are stored column-major (`acc[j·R + c]`) so that a row
/// update is a run of contiguous adds, and signs are drawn 64 at a time.
#[derive(Clone, Debug, PartialEq)]
pub struct AmsM {
    n: usize,
    d: usize,
    seed: u64,
    mixed: u64,
    eps: f64,
    groups: usize,
    per_group: usize,
    acc: Vec<f64>,
}

impl AmsM {
    /// Layout of `6 × ⌈8/ε²⌉` copies.
    pub fn new(n: usize, d: usize, eps: f64, seed: u64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("AMS epsilon must be positive, got {eps}")));
        }
        let per_group = (8.0 / (eps * eps)).ceil() as usize;
        Self::with_layout(n, d, eps, AMS_GROUPS, per_group, seed)
    }

    pub fn with_layout(
        n: usize,
        d: usize,
        eps: f64,
        groups: usize,
        per_group: usize,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 || d == 0 || groups == 0 || per_group == 0 {
            return Err(Error::InvalidParameter("AMS dimensions and layout must be positive".into()));
        }
        let cells = groups
            .checked_mul(per_group)
            .and_then(|r| r.checked_mul(d))
            .filter(|&c| c <= MAX_CELLS)
            .ok_or_else(|| Error::SizeGuard(format!("AMS layout {groups}x{per_group} with d={d}")))?;
        Ok(AmsM {
            n,
            d,
            seed,
            mixed: premix(seed),
            eps,
            groups,
            per_group,
            acc: vec![0.0; cells],
        })
    }

    /// Zeroes the accumulators and switches to `seed`.
    pub(crate) fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.mixed = premix(seed);
        self.acc.fill(0.0);
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn per_group(&self) -> usize {
        self.per_group
    }

    pub fn reps(&self) -> usize {
        self.groups * self.per_group
    }

    fn packs(&self) -> usize {
        self.reps().div_ceil(64)
    }

    /// Sign bits of row `i` for copies `64w .. 64w+63`; a set bit means −1.
    #[inline]
    fn sign_word(&self, i: usize, w: usize) -> u64 {
        hash_premixed(self.mixed, (i * self.packs() + w) as u64)
    }

    fn update_row_sparse(&mut self, row: usize, entries: &[(usize, f64)]) -> Result<()> {
        for &(col, delta) in entries {
            check_update(self.n, self.d, &TurnstileUpdate::new(row, col, delta))?;
        }
        let reps = self.reps();
        let mut acc = std::mem::take(&mut self.acc);
        self.for_sign_blocks(row, |w, masks| {
            for &(j, x) in entries {
                let lo = j * reps + w * 64;
                Self::add_signed(&mut acc[lo..lo + masks.len()], masks, x);
            }
        });
        self.acc = acc;
        Ok(())
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.n == other.n
            && self.d == other.d
            && self.seed == other.seed
            && self.eps.to_bits() == other.eps.to_bits()
            && self.groups == other.groups
            && self.per_group == other.per_group
    }

    pub(crate) fn cells_mut(&mut self) -> &mut [f64] {
        &mut self.acc
    }

    /// Adds `±x` to copies `64w ..` of column `j`, signs taken from `masks`.
    #[inline]
    fn add_signed(acc: &mut [f64], masks: &[u64], x: f64) {
        let bits = x.to_bits();
        for (cell, &m) in acc.iter_mut().zip(masks) {
            *cell += f64::from_bits(bits ^ m);
        }
    }

    /// Calls `f(w, masks)` for each 64-copy block of row `i`'s signs.
    #[inline]
    fn for_sign_blocks<F: FnMut(usize, &[u64])>(&self, i: usize, mut f: F) {
        let reps = self.reps();
        let mut masks = [0u64; 64];
        for w in 0..self.packs() {
            expand_signs(self.sign_word(i, w), &mut masks);
            let len = (reps - w * 64).min(64);
            f(w, &masks[..len]);
        }
    }

    /// `acc·P` in the same column-major layout.
    fn projected(&self, p: &Projector) -> Vec<f64> {
        let reps = self.reps();
        let d = self.d;
        match p {
            Projector::Identity => self.acc.clone(),
            Projector::Complement(basis) => {
                let mut out = self.acc.clone();
                let mut coef = vec![0.0; reps];
                for q in basis.vectors() {
                    coef.iter_mut().for_each(|c| *c = 0.0);
                    for (j, &qj) in q.iter().enumerate() {
                        if qj != 0.0 {
                            let col = &self.acc[j * reps..(j + 1) * reps];
                            coef.iter_mut().zip(col).for_each(|(c, a)| *c += qj * a);
                        }
                    }
                    for (j, &qj) in q.iter().enumerate() {
                        if qj != 0.0 {
                            let col = &mut out[j * reps..(j + 1) * reps];
                            col.iter_mut().zip(&coef).for_each(|(o, c)| *o -= qj * c);
                        }
                    }
                }
                out
            }
            Projector::Matrix(m) => {
                let mut out = vec![0.0; self.acc.len()];
                for l in 0..d {
                    let src = &self.acc[l * reps..(l + 1) * reps];
                    for (j, &plj) in m.row(l).iter().enumerate() {
                        if plj != 0.0 {
                            let col = &mut out[j * reps..(j + 1) * reps];
                            col.iter_mut().zip(src).for_each(|(o, a)| *o += plj * a);
                        }
                    }
                }
                out
            }
        }
    }

    /// Estimate of `‖AP − M‖_F` where `M` is zero except at the listed rows.
    pub fn estimate(&self, p: &Projector, offsets: &[(usize, &[f64])]) -> Result<f64> {
        p.check_dim(self.d)?;
        for (i, m) in offsets {
            check_row(self.n, self.d, *i, m)?;
        }
        let reps = self.reps();
        if p.is_identity() && offsets.is_empty() {
            return Ok(self.combine(&self.acc));
        }
        let mut v = self.projected(p);
        for (i, m) in offsets {
            self.for_sign_blocks(*i, |w, masks| {
                for (j, &x) in m.iter().enumerate() {
                    if x != 0.0 {
                        let lo = j * reps + w * 64;
                        Self::add_signed(&mut v[lo..lo + masks.len()], masks, -x);
                    }
                }
            });
        }
        Ok(self.combine(&v))
    }

    /// Median over groups of the mean squared copy norm, square-rooted.
    fn combine(&self, v: &[f64]) -> f64 {
        let reps = self.reps();
        let mut sq = vec![0.0; reps];
        for col in v.chunks_exact(reps) {
            sq.iter_mut().zip(col).for_each(|(s, x)| *s += x * x);
        }
        let mut means: Vec<f64> = sq
            .chunks(self.per_group)
            .map(|g| g.iter().sum::<f64>() / g.len() as f64)
            .collect();
        median(&mut means).max(0.0).sqrt()
    }

    /// The sketch right-multiplied by `p`, laid out like `dense_cells`.
    pub fn projected_cells(&self, p: &Projector) -> Result<Vec<f64>> {
        p.check_dim(self.d)?;
        Ok(self.projected(p))
    }

    /// Estimate of `‖AP‖_F`.
    pub fn norm_estimate(&self, p: &Projector) -> Result<f64> {
        self.estimate(p, &[])
    }
}

impl LinearSketch for AmsM {
    fn n(&self) -> usize {
        self.n
    }

    fn d(&self) -> usize {
        self.d
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn update(&mut self, u: TurnstileUpdate) -> Result<()> {
        self.update_row_sparse(u.row, &[(u.col, u.delta)])
    }

    fn update_row(&mut self, row: usize, delta: &[f64]) -> Result<()> {
        check_row(self.n, self.d, row, delta)?;
        if delta.iter().all(|&x| x == 0.0) {
            return Ok(());
        }
        let reps = self.reps();
        let mut signs = vec![0.0; self.packs() * 64];
        for (w, chunk) in signs.chunks_exact_mut(64).enumerate() {
            let word = self.sign_word(row, w);
            for (byte, c8) in chunk.chunks_exact_mut(8).enumerate() {
                c8.copy_from_slice(&SIGN_F64[((word >> (8 * byte)) & 0xFF) as usize]);
            }
        }
        let signs = &signs[..reps];
        for (col, &x) in self.acc.chunks_exact_mut(reps).zip(delta) {
            if x != 0.0 {
                col.iter_mut().zip(signs).for_each(|(a, s)| *a += s * x);
            }
        }
        Ok(())
    }

    fn merge(&mut self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::ParameterMismatch);
        }
        for (a, b) in self.acc.iter_mut().zip(&other.acc) {
            *a += b;
        }
        Ok(())
    }

    fn dense_cells(&self) -> Vec<f64> {
        self.acc.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm, DenseMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sketch_of(a: &DenseMatrix, eps: f64, seed: u64) -> AmsM {
        let mut s = AmsM::new(a.n(), a.d(), eps, seed).unwrap();
        for (i, r) in a.rows().enumerate() {
            s.update_row(i, r).unwrap();
        }
        s
    }

    #[test]
    fn zero_stream_estimates_zero() {
        let s = AmsM::new(4, 3, 0.5, 1).unwrap();
        assert_eq!(s.norm_estimate(&Projector::Identity).unwrap(), 0.0);
    }

    #[test]
    fn single_row_is_exact() {
        for seed in 0..20 {
            let mut s = AmsM::new(10, 3, 0.5, seed).unwrap();
            s.update(TurnstileUpdate::new(7, 0, 3.0)).unwrap();
            s.update(TurnstileUpdate::new(7, 2, -4.0)).unwrap();
            let f = s.norm_estimate(&Projector::Identity).unwrap();
            assert!((f - 5.0).abs() < 1e-12, "{f}");
        }
    }

    #[test]
    fn entry_and_row_updates_agree() {
        let mut a = AmsM::new(5, 3, 0.7, 9).unwrap();
        let mut b = a.clone();
        a.update_row(2, &[1.0, -2.0, 0.5]).unwrap();
        for (j, x) in [1.0, -2.0, 0.5].into_iter().enumerate() {
            b.update(TurnstileUpdate::new(2, j, x)).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn concentration_on_random_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DenseMatrix::from_flat(64, 8, (0..512).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let truth = a.frobenius();
        let good = (0..100)
            .filter(|&seed| {
                let f = sketch_of(&a, 0.2, seed).norm_estimate(&Projector::Identity).unwrap();
                (f / truth - 1.0).abs() <= 0.2
            })
            .count();
        assert!(good >= 90, "{good}");
    }

    #[test]
    fn offsets_are_subtracted() {
        let a = DenseMatrix::from_rows(&[[3.0, 0.0], [0.0, 4.0]]).unwrap();
        let s = sketch_of(&a, 0.5, 3);
        let f = s.estimate(&Projector::Identity, &[(1, &[0.0, 4.0][..])]).unwrap();
        assert!((f - 3.0).abs() < 1e-12);
        let all = s
            .estimate(&Projector::Identity, &[(0, &[3.0, 0.0][..]), (1, &[0.0, 4.0][..])])
            .unwrap();
        assert!(all.abs() < 1e-12);
    }

    #[test]
    fn projection_is_applied() {
        let a = DenseMatrix::from_rows(&[[3.0, 4.0]]).unwrap();
        let s = sketch_of(&a, 0.5, 3);
        let basis = crate::linalg::OrthoBasis::from_rows(2, &[[1.0, 0.0]]).unwrap();
        let f = s.norm_estimate(&Projector::complement_of(&basis)).unwrap();
        assert!((f - 4.0).abs() < 1e-12);
        assert!((norm(&[3.0, 4.0]) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn merge_rejects_other_seed() {
        let mut a = AmsM::new(3, 2, 0.5, 1).unwrap();
        let b = AmsM::new(3, 2, 0.5, 2).unwrap();
        assert_eq!(a.merge(&b), Err(Error::ParameterMismatch));
    }

    #[test]
    fn rejects_out_of_range() {
        let mut a = AmsM::new(3, 2, 0.5, 1).unwrap();
        assert!(a.update(TurnstileUpdate::new(3, 0, 1.0)).is_err());
        assert!(a.update(TurnstileUpdate::new(0, 2, 1.0)).is_err());
        assert!(a.update_row(0, &[1.0]).is_err());
    }
}
