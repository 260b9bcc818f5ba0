use rustc_hash::FxHashMap;

use super::{check_row, check_update, LinearSketch};
use crate::error::{Error, Result};
use crate::linalg::{norm, Projector, RowVec};
use std::borrow::Cow;

use crate::randomness::{derive_seed, hash_premixed, premix, reduce};
use crate::stream::TurnstileUpdate;

const TAG_ROW: u64 = 0xC5;

/// Largest supported number of table rows.
pub const MAX_ROWS: usize = 32;

/// Tables with at most this many cells index them with a flat array.
const DIRECT_CELLS: usize = 4096;

/// Limit for [`CountSketchM::use_direct_index`].
const DIRECT_CELLS_ON_REQUEST: usize = 1 << 20;

/// Sketches with `n·r` at most this remember where each updated row landed.
const LOCATION_CACHE: usize = 4096;
const UNKNOWN: u32 = u32::MAX;
const NEG_BIT: u32 = 1 << 31;

/// Cell key to slot in the slab.
#[derive(Clone, Debug)]
enum CellIndex {
    Direct(Vec<u32>),
    Sparse(FxHashMap<u32, u32>),
}

impl CellIndex {
    fn new(cells: usize, expect: usize) -> Self {
        if cells <= DIRECT_CELLS {
            CellIndex::Direct(vec![u32::MAX; cells])
        } else {
            let mut m = FxHashMap::default();
            m.reserve(expect);
            CellIndex::Sparse(m)
        }
    }

    #[inline]
    fn get(&self, key: u32) -> Option<u32> {
        match self {
            CellIndex::Direct(v) => Some(v[key as usize]).filter(|&s| s != u32::MAX),
            CellIndex::Sparse(m) => m.get(&key).copied(),
        }
    }

    #[inline]
    fn get_or_insert(&mut self, key: u32, next: u32) -> u32 {
        match self {
            CellIndex::Direct(v) => {
                let s = &mut v[key as usize];
                if *s == u32::MAX {
                    *s = next;
                }
                *s
            }
            CellIndex::Sparse(m) => *m.entry(key).or_insert(next),
        }
    }
}

/// Heavy-row sketch: an `r × b` table whose cells are d-vectors.
///
/// Only touched cells are stored. A missing cell is the zero vector, so
/// equality and serialization are defined over the full table.
#[derive(Clone, Debug)]
pub struct CountSketchM {
    n: usize,
    d: usize,
    seed: u64,
    r: usize,
    b: usize,
    row_seeds: Vec<u64>,
    index: CellIndex,
    keys: Vec<u32>,
    slab: Vec<f64>,
    /// `located[i·r + k]`: slot of row `i` in table row `k`, sign in the top
    /// bit, or `UNKNOWN`. Empty when `n·r` is large. Slots never move.
    located: Vec<u32>,
}

impl CountSketchM {
    pub fn new(n: usize, d: usize, r: usize, b: usize, seed: u64) -> Result<Self> {
        if n == 0 || d == 0 || r == 0 || b == 0 {
            return Err(Error::InvalidParameter("CountSketch dimensions must be positive".into()));
        }
        if r > MAX_ROWS {
            return Err(Error::InvalidParameter(format!("at most {MAX_ROWS} table rows, got {r}")));
        }
        if (r as u64).saturating_mul(b as u64) > u32::MAX as u64 {
            return Err(Error::SizeGuard(format!("CountSketch table {r}x{b}")));
        }
        let expect = (r * n.min(b)).min(1 << 12);
        let index = CellIndex::new(r * b, expect);
        Ok(CountSketchM {
            n,
            d,
            seed,
            r,
            b,
            row_seeds: (0..r as u64).map(|k| premix(derive_seed(seed, TAG_ROW, k))).collect(),
            index,
            keys: Vec::with_capacity(expect),
            slab: Vec::with_capacity(expect * d),
            located: if n.saturating_mul(r) <= LOCATION_CACHE { vec![UNKNOWN; n * r] } else { Vec::new() },
        })
    }

    /// Switches to a flat cell index if the table is small enough. Costs
    /// 4 bytes per cell once; worthwhile when the sketch is reseeded and
    /// reused many times.
    pub(crate) fn use_direct_index(&mut self) {
        let cells = self.r * self.b;
        if let CellIndex::Sparse(m) = &self.index {
            if cells <= DIRECT_CELLS_ON_REQUEST {
                let mut v = vec![u32::MAX; cells];
                for (&key, &slot) in m {
                    v[key as usize] = slot;
                }
                self.index = CellIndex::Direct(v);
            }
        }
    }

    /// Empties the table and switches to `seed`, keeping allocations.
    pub(crate) fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        for (k, s) in self.row_seeds.iter_mut().enumerate() {
            *s = premix(derive_seed(seed, TAG_ROW, k as u64));
        }
        match &mut self.index {
            CellIndex::Direct(v) => self.keys.iter().for_each(|&key| v[key as usize] = u32::MAX),
            CellIndex::Sparse(m) => m.clear(),
        }
        self.keys.clear();
        self.slab.clear();
        self.located.fill(UNKNOWN);
    }

    /// Slot and sign of row `i` in table row `k`, creating the cell.
    #[inline]
    fn slot_of_row(&mut self, k: usize, i: usize) -> (usize, bool) {
        if let Some(&c) = self.located.get(i * self.r + k) {
            if c != UNKNOWN {
                return ((c & !NEG_BIT) as usize, c & NEG_BIT != 0);
            }
        }
        let (key, neg) = self.locate(k, i);
        let slot = self.slot_mut(key);
        if !self.located.is_empty() && slot < NEG_BIT as usize {
            self.located[i * self.r + k] = slot as u32 | if neg { NEG_BIT } else { 0 };
        }
        (slot, neg)
    }

    /// Slot (if the cell exists) and sign of row `i` in table row `k`.
    #[inline]
    fn find_row(&self, k: usize, i: usize) -> (Option<u32>, bool) {
        if let Some(&c) = self.located.get(i * self.r + k) {
            if c != UNKNOWN {
                return (Some(c & !NEG_BIT), c & NEG_BIT != 0);
            }
        }
        let (key, neg) = self.locate(k, i);
        (self.index.get(key), neg)
    }

    pub fn rows(&self) -> usize {
        self.r
    }

    pub fn buckets(&self) -> usize {
        self.b
    }

    /// Number of stored (touched) cells.
    pub fn occupied(&self) -> usize {
        self.keys.len()
    }

    /// Cell key and sign (true means −1) of row `i` in table row `k`.
    #[inline]
    fn locate(&self, k: usize, i: usize) -> (u32, bool) {
        let h = hash_premixed(self.row_seeds[k], i as u64);
        let bucket = reduce(h << 1, self.b as u64) as usize;
        ((k * self.b + bucket) as u32, h >> 63 == 1)
    }

    #[inline]
    fn slot_mut(&mut self, key: u32) -> usize {
        let next = self.keys.len() as u32;
        let slot = self.index.get_or_insert(key, next) as usize;
        if slot == self.keys.len() {
            self.keys.push(key);
            self.slab.resize(self.slab.len() + self.d, 0.0);
        }
        slot
    }

    /// Cell `(k, l)`, or `None` if it was never touched.
    pub fn cell(&self, k: usize, l: usize) -> Option<&[f64]> {
        let key = (k * self.b + l) as u32;
        self.index
            .get(key)
            .map(|s| &self.slab[s as usize * self.d..(s as usize + 1) * self.d])
    }

    /// Bucket and sign of row `i` in table row `k`.
    pub fn bucket_of(&self, k: usize, i: usize) -> (usize, i8) {
        let (key, neg) = self.locate(k, i);
        (key as usize - k * self.b, if neg { -1 } else { 1 })
    }

    /// Right-multiplies every stored cell by `p`.
    pub fn project(&self, p: &Projector) -> Result<ProjectedCountSketch<'_>> {
        p.check_dim(self.d)?;
        let d = self.d;
        let slab = if p.is_identity() {
            Cow::Borrowed(&self.slab[..])
        } else {
            let mut out = vec![0.0; self.slab.len()];
            for (src, dst) in self.slab.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
                p.apply_into(src, dst);
            }
            Cow::Owned(out)
        };
        let norms = slab.chunks_exact(d).map(norm).collect();
        Ok(ProjectedCountSketch {
            sketch: self,
            slab,
            norms,
        })
    }

    /// Noisy estimate of row `i` of `AP`.
    pub fn query_row(&self, p: &Projector, i: usize) -> Result<RowVec> {
        self.project(p)?.query(i)
    }

    /// The `m` rows of `AP` with the largest estimated norms.
    pub fn top_rows(&self, p: &Projector, m: usize) -> Result<Vec<(usize, RowVec)>> {
        Ok(self.project(p)?.top_rows(m))
    }

    pub(crate) fn from_dense(
        n: usize,
        d: usize,
        r: usize,
        b: usize,
        seed: u64,
        cells: &[f64],
    ) -> Result<Self> {
        let mut s = Self::new(n, d, r, b, seed)?;
        if cells.len() != r * b * d {
            return Err(Error::Decode("CountSketch cell count does not match header".into()));
        }
        for (key, cell) in cells.chunks_exact(d).enumerate() {
            if cell.iter().any(|x| x.to_bits() != 0) {
                let slot = s.slot_mut(key as u32);
                s.slab[slot * d..(slot + 1) * d].copy_from_slice(cell);
            }
        }
        Ok(s)
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.n == other.n
            && self.d == other.d
            && self.seed == other.seed
            && self.r == other.r
            && self.b == other.b
    }

    fn cell_or_zero<'a>(&'a self, key: u32, zero: &'a [f64]) -> &'a [f64] {
        match self.index.get(key) {
            Some(s) => &self.slab[s as usize * self.d..(s as usize + 1) * self.d],
            None => zero,
        }
    }
}

impl PartialEq for CountSketchM {
    fn eq(&self, other: &Self) -> bool {
        if !self.same_shape(other) {
            return false;
        }
        let zero = vec![0.0; self.d];
        let covers = |a: &Self, b: &Self| {
            a.keys
                .iter()
                .all(|&k| a.cell_or_zero(k, &zero) == b.cell_or_zero(k, &zero))
        };
        covers(self, other) && covers(other, self)
    }
}

impl LinearSketch for CountSketchM {
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
        check_update(self.n, self.d, &u)?;
        for k in 0..self.r {
            let (slot, neg) = self.slot_of_row(k, u.row);
            let v = if neg { -u.delta } else { u.delta };
            self.slab[slot * self.d + u.col] += v;
        }
        Ok(())
    }

    fn update_row(&mut self, row: usize, delta: &[f64]) -> Result<()> {
        check_row(self.n, self.d, row, delta)?;
        if delta.iter().all(|&x| x == 0.0) {
            return Ok(());
        }
        let d = self.d;
        for k in 0..self.r {
            let (slot, neg) = self.slot_of_row(k, row);
            let cell = &mut self.slab[slot * d..(slot + 1) * d];
            if neg {
                cell.iter_mut().zip(delta).for_each(|(c, x)| *c -= x);
            } else {
                cell.iter_mut().zip(delta).for_each(|(c, x)| *c += x);
            }
        }
        Ok(())
    }

    fn merge(&mut self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::ParameterMismatch);
        }
        let d = self.d;
        for (s, &key) in other.keys.iter().enumerate() {
            let slot = self.slot_mut(key);
            for j in 0..d {
                self.slab[slot * d + j] += other.slab[s * d + j];
            }
        }
        Ok(())
    }

    fn dense_cells(&self) -> Vec<f64> {
        let d = self.d;
        let mut out = vec![0.0; self.r * self.b * d];
        for (s, &key) in self.keys.iter().enumerate() {
            let k = key as usize;
            out[k * d..(k + 1) * d].copy_from_slice(&self.slab[s * d..(s + 1) * d]);
        }
        out
    }
}

/// A CountSketch table after right-multiplication by a fixed projector.
pub struct ProjectedCountSketch<'a> {
    sketch: &'a CountSketchM,
    slab: Cow<'a, [f64]>,
    norms: Vec<f64>,
}

/// The cell chosen for one row: its norm, slot (if stored) and sign.
#[derive(Clone, Copy)]
struct Pick {
    norm: f64,
    slot: Option<u32>,
    neg: bool,
}

impl ProjectedCountSketch<'_> {
    /// Projected cells, laid out like [`LinearSketch::dense_cells`].
    pub fn dense_cells(&self) -> Vec<f64> {
        let s = self.sketch;
        let d = s.d;
        let mut out = vec![0.0; s.r * s.b * d];
        for (slot, &key) in s.keys.iter().enumerate() {
            let k = key as usize;
            out[k * d..(k + 1) * d].copy_from_slice(&self.slab[slot * d..(slot + 1) * d]);
        }
        out
    }

    fn pick(&self, i: usize) -> Pick {
        let s = self.sketch;
        let r = s.r;
        let mut norms = [0.0f64; MAX_ROWS];
        let mut slots = [u32::MAX; MAX_ROWS];
        let mut negs = 0u32;
        for k in 0..r {
            let (found, neg) = s.find_row(k, i);
            if let Some(slot) = found {
                norms[k] = self.norms[slot as usize];
                slots[k] = slot;
                negs |= (neg as u32) << k;
            }
        }
        let med = if r <= 8 {
            let mut sorted = [0.0f64; 8];
            sorted[..r].copy_from_slice(&norms[..r]);
            let sorted = &mut sorted[..r];
            sorted.sort_unstable_by(|a, b| a.total_cmp(b));
            sorted[(r - 1) / 2]
        } else {
            let mut sorted = norms;
            let sorted = &mut sorted[..r];
            sorted.sort_unstable_by(|a, b| a.total_cmp(b));
            sorted[(r - 1) / 2]
        };
        let k = (0..r).find(|&k| norms[k] == med).expect("median is a candidate");
        Pick {
            norm: med,
            slot: (slots[k] != u32::MAX).then_some(slots[k]),
            neg: (negs >> k) & 1 == 1,
        }
    }

    fn materialize(&self, p: Pick) -> RowVec {
        let d = self.sketch.d;
        match p.slot {
            None => RowVec::zeros(d),
            Some(slot) => {
                let cell = &self.slab[slot as usize * d..(slot as usize + 1) * d];
                RowVec(if p.neg {
                    cell.iter().map(|x| -x).collect()
                } else {
                    cell.to_vec()
                })
            }
        }
    }

    /// Estimate of row `i`: the candidate whose norm is the median of the
    /// `r` candidates, lowest table row on ties.
    pub fn query(&self, i: usize) -> Result<RowVec> {
        if i >= self.sketch.n {
            return Err(Error::IndexOutOfRange {
                what: "row",
                index: i,
                bound: self.sketch.n,
            });
        }
        Ok(self.materialize(self.pick(i)))
    }

    /// Estimated norm of row `i`.
    pub fn query_norm(&self, i: usize) -> f64 {
        self.pick(i).norm
    }

    /// The `m` largest rows by estimated norm, lowest index on ties,
    /// in decreasing order.
    pub fn top_rows(&self, m: usize) -> Vec<(usize, RowVec)> {
        let mut picks: Vec<(usize, Pick)> = (0..self.sketch.n).map(|i| (i, self.pick(i))).collect();
        let m = m.min(picks.len());
        let order = |a: &(usize, Pick), b: &(usize, Pick)| b.1.norm.total_cmp(&a.1.norm).then(a.0.cmp(&b.0));
        if m < picks.len() && m > 0 {
            picks.select_nth_unstable_by(m - 1, order);
        }
        picks.truncate(m);
        picks.sort_by(order);
        picks.into_iter().map(|(i, p)| (i, self.materialize(p))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{DenseMatrix, OrthoBasis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sketch_of(a: &DenseMatrix, r: usize, b: usize, seed: u64) -> CountSketchM {
        let mut s = CountSketchM::new(a.n(), a.d(), r, b, seed).unwrap();
        for (i, row) in a.rows().enumerate() {
            s.update_row(i, row).unwrap();
        }
        s
    }

    #[test]
    fn reseeded_and_direct_match_fresh() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = planted(&mut rng);
        let p = Projector::Identity;
        // 64·7 rows exceed the location cache; 5·7 do not
        for (n, b) in [(64, 5000), (5, 5000), (5, 16)] {
            let head = DenseMatrix::from_rows(&(0..n).map(|i| a.row(i)).collect::<Vec<_>>()).unwrap();
            let mut reused = sketch_of(&head, 7, b, 1);
            reused.use_direct_index();
            for seed in 2..6 {
                let fresh = sketch_of(&head, 7, b, seed);
                reused.reseed(seed);
                for (i, row) in a.rows().take(n).enumerate() {
                    reused.update_row(i, row).unwrap();
                }
                assert_eq!(reused, fresh);
                assert_eq!(reused.dense_cells(), fresh.dense_cells());
                let (x, y) = (reused.project(&p).unwrap(), fresh.project(&p).unwrap());
                for i in 0..n {
                    assert_eq!(x.query(i).unwrap(), y.query(i).unwrap());
                }
            }
        }
    }

    fn planted(rng: &mut ChaCha8Rng) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(64, 8);
        for i in 0..64 {
            let v: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let nv = norm(&v);
            let target = if i == 17 { 100.0 } else { 1.0 };
            for j in 0..8 {
                a.set(i, j, v[j] * target / nv);
            }
        }
        a
    }

    #[test]
    fn single_row_recovered_exactly() {
        let a = DenseMatrix::from_rows(&[[0.0, 0.0], [1.5, -2.0], [0.0, 0.0]]).unwrap();
        for seed in 0..10 {
            let s = sketch_of(&a, 7, 16, seed);
            assert_eq!(s.query_row(&Projector::Identity, 1).unwrap().0, vec![1.5, -2.0]);
        }
    }

    #[test]
    fn zero_matrix_queries_zero() {
        let s = CountSketchM::new(5, 3, 7, 8, 1).unwrap();
        assert_eq!(s.query_row(&Projector::Identity, 2).unwrap().0, vec![0.0; 3]);
        let top = s.top_rows(&Projector::Identity, 3).unwrap();
        assert_eq!(top.len(), 3);
        assert!(top.iter().all(|(_, r)| r.norm() == 0.0));
    }

    #[test]
    fn top_rows_full_is_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = planted(&mut rng);
        let s = sketch_of(&a, 7, 64, 3);
        let mut idx: Vec<usize> = s
            .top_rows(&Projector::Identity, 100)
            .unwrap()
            .into_iter()
            .map(|(i, _)| i)
            .collect();
        idx.sort();
        assert_eq!(idx, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn planted_heavy_row_is_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = planted(&mut rng);
        let (mut close, mut top) = (0, 0);
        for seed in 0..100 {
            let s = sketch_of(&a, 7, 64, seed);
            let est = s.query_row(&Projector::Identity, 17).unwrap();
            if (est.norm() / 100.0 - 1.0).abs() <= 0.1 {
                close += 1;
            }
            if s.top_rows(&Projector::Identity, 1).unwrap()[0].0 == 17 {
                top += 1;
            }
        }
        assert!(close >= 95 && top >= 95, "{close} {top}");
    }

    #[test]
    fn tail_bound_on_random_instances() {
        let mut good = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let a = DenseMatrix::from_flat(64, 8, (0..512).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap();
            let mut norms: Vec<f64> = a.rows().map(norm).collect();
            norms.sort_by(|x, y| y.total_cmp(x));
            let tail = norms[8..].iter().map(|x| x * x).sum::<f64>().sqrt();
            let s = sketch_of(&a, 7, 64, seed);
            let p = s.project(&Projector::Identity).unwrap();
            let worst = (0..64)
                .map(|i| (p.query_norm(i) - norm(a.row(i))).abs())
                .fold(0.0, f64::max);
            if worst <= tail {
                good += 1;
            }
        }
        assert!(good >= 95, "{good}");
    }

    #[test]
    fn projection_commutes_with_query() {
        let a = DenseMatrix::from_rows(&[[3.0, 4.0], [0.0, 0.0]]).unwrap();
        let s = sketch_of(&a, 5, 8, 4);
        let basis = OrthoBasis::from_rows(2, &[[1.0, 0.0]]).unwrap();
        let q = s.query_row(&Projector::complement_of(&basis), 0).unwrap();
        assert!(q[0].abs() < 1e-12 && (q[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn cancellation_restores_equality() {
        let mut s = CountSketchM::new(3, 2, 7, 16, 5).unwrap();
        let empty = s.clone();
        s.update(TurnstileUpdate::new(0, 0, 5.0)).unwrap();
        s.update(TurnstileUpdate::new(0, 0, -5.0)).unwrap();
        assert_eq!(s, empty);
        assert_eq!(s.dense_cells(), empty.dense_cells());
    }

    #[test]
    fn dense_round_trip() {
        let mut s = CountSketchM::new(6, 2, 3, 4, 8).unwrap();
        s.update_row(4, &[1.0, 2.0]).unwrap();
        s.update(TurnstileUpdate::new(1, 1, -3.0)).unwrap();
        let back = CountSketchM::from_dense(6, 2, 3, 4, 8, &s.dense_cells()).unwrap();
        assert_eq!(back, s);
    }
}
