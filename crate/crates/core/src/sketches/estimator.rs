use super::{check_row, check_update, CountSketchM, LinearSketch};
use crate::error::{Error, Result};
use crate::linalg::Projector;
use crate::randomness::{derive_seed, hash_premixed, premix};
use crate::stream::TurnstileUpdate;

const TAG_LEVEL: u64 = 0xE1;
const TAG_SKETCH: u64 = 0xE2;

pub const DEFAULT_R0: usize = 5;
pub const DEFAULT_B0: usize = 64;
pub const DEFAULT_XI: f64 = 4.0;

/// `L_{1,2}` norm sketch: nested subsamples of the rows, each summarized by
/// a small CountSketch, combined by counting rows per dyadic norm band.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorM {
    n: usize,
    d: usize,
    seed: u64,
    r0: usize,
    b0: usize,
    xi: f64,
    level_seed: u64,
    levels: Vec<CountSketchM>,
}

fn ceil_log2(n: usize) -> usize {
    (usize::BITS - n.saturating_sub(1).leading_zeros()) as usize
}

impl EstimatorM {
    pub fn new(n: usize, d: usize, seed: u64) -> Result<Self> {
        Self::with_params(n, d, DEFAULT_R0, DEFAULT_B0, DEFAULT_XI, seed)
    }

    pub fn with_params(n: usize, d: usize, r0: usize, b0: usize, xi: f64, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        if !(xi >= 1.0 && xi.is_finite()) {
            return Err(Error::InvalidParameter(format!("xi must be at least 1, got {xi}")));
        }
        let count = ceil_log2(n) + 1;
        let levels = (0..count)
            .map(|j| CountSketchM::new(n, d, r0, b0, derive_seed(seed, TAG_SKETCH, j as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(EstimatorM {
            n,
            d,
            seed,
            r0,
            b0,
            xi,
            level_seed: premix(derive_seed(seed, TAG_LEVEL, 0)),
            levels,
        })
    }

    /// Empties every level and switches to `seed`, keeping allocations.
    pub(crate) fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.level_seed = premix(derive_seed(seed, TAG_LEVEL, 0));
        for (j, level) in self.levels.iter_mut().enumerate() {
            level.reseed(derive_seed(seed, TAG_SKETCH, j as u64));
        }
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn r0(&self) -> usize {
        self.r0
    }

    pub fn b0(&self) -> usize {
        self.b0
    }

    /// Distortion constant reported alongside estimates.
    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// Deepest level containing row `i`; row `i` is in levels `0..=level(i)`.
    pub fn level(&self, i: usize) -> usize {
        let tz = hash_premixed(self.level_seed, i as u64).trailing_zeros() as usize;
        tz.min(self.levels.len() - 1)
    }

    pub fn level_sketch(&self, j: usize) -> &CountSketchM {
        &self.levels[j]
    }

    /// Estimate of `‖AP‖_{1,2}`.
    pub fn l12_estimate(&self, p: &Projector) -> Result<f64> {
        match self.shallow_estimate(p)? {
            Shallow::Done(v) => Ok(v),
            Shallow::Deep { w, level0 } => self.deep_estimate(p, w, level0),
        }
    }

    /// The estimate if it reads only level 0; levels past 0 are not touched.
    pub(crate) fn shallow_estimate(&self, p: &Projector) -> Result<Shallow> {
        let base = self.levels[0].project(p)?;
        let top: Vec<f64> = (0..self.n).map(|i| base.query_norm(i)).collect();
        let w = 2.0 * top.iter().copied().fold(0.0, f64::max);
        if w == 0.0 {
            return Ok(Shallow::Done(0.0));
        }
        let bands = self.bands();
        let mut level0 = vec![0usize; bands];
        for &e in &top {
            if let Some(c) = band_of(w, e, bands) {
                level0[c] += 1;
            }
        }
        // every band then settles on level 0
        if level0.iter().sum::<usize>() <= self.cap() {
            let total = (0..bands).map(|c| 0.75 * w / (1u64 << c) as f64 * level0[c] as f64).sum();
            return Ok(Shallow::Done(total));
        }
        Ok(Shallow::Deep { w, level0 })
    }

    fn deep_estimate(&self, p: &Projector, w: f64, level0: Vec<usize>) -> Result<f64> {
        let bands = self.bands();
        let nl = self.levels.len();
        let mut counts = vec![vec![0usize; bands]; nl];
        counts[0] = level0;
        let deepest: Vec<usize> = (0..self.n).map(|i| self.level(i)).collect();
        for (j, level) in self.levels.iter().enumerate().skip(1) {
            if deepest.iter().all(|&l| l < j) {
                break;
            }
            let proj = level.project(p)?;
            for i in (0..self.n).filter(|&i| deepest[i] >= j) {
                if let Some(c) = band_of(w, proj.query_norm(i), bands) {
                    counts[j][c] += 1;
                }
            }
        }
        let cap = self.cap();
        let mut total = 0.0;
        let mut cum = vec![0usize; nl];
        for c in 0..bands {
            for j in 0..nl {
                cum[j] += counts[j][c];
            }
            let j = (0..nl).find(|&j| cum[j] <= cap).unwrap_or(nl - 1);
            let mid = 0.75 * w / (1u64 << c) as f64;
            total += mid * (1u64 << j) as f64 * counts[j][c] as f64;
        }
        Ok(total)
    }

    fn bands(&self) -> usize {
        ceil_log2(self.n) + 5
    }

    fn cap(&self) -> usize {
        (self.b0 / 8).max(1)
    }

    /// Feeds row `i` to level 0 only; [`EstimatorM::update_deeper`] with the
    /// same rows completes [`LinearSketch::update_row`].
    pub(crate) fn update_level0(&mut self, row: usize, delta: &[f64]) -> Result<()> {
        check_row(self.n, self.d, row, delta)?;
        self.levels[0].update_row(row, delta)
    }

    pub(crate) fn update_deeper(&mut self, row: usize, delta: &[f64]) -> Result<()> {
        check_row(self.n, self.d, row, delta)?;
        for j in 1..=self.level(row) {
            self.levels[j].update_row(row, delta)?;
        }
        Ok(())
    }

    pub(crate) fn from_dense(
        n: usize,
        d: usize,
        r0: usize,
        b0: usize,
        xi: f64,
        seed: u64,
        levels: usize,
        cells: &[f64],
    ) -> Result<Self> {
        let mut s = Self::with_params(n, d, r0, b0, xi, seed)?;
        if levels != s.levels.len() {
            return Err(Error::Decode(format!(
                "level count {levels} inconsistent with n = {n}"
            )));
        }
        let per = r0 * b0 * d;
        if cells.len() != per * levels {
            return Err(Error::Decode("Estimator cell count does not match header".into()));
        }
        for (j, chunk) in cells.chunks_exact(per).enumerate() {
            s.levels[j] = CountSketchM::from_dense(
                n,
                d,
                r0,
                b0,
                derive_seed(seed, TAG_SKETCH, j as u64),
                chunk,
            )?;
        }
        Ok(s)
    }
}

pub(crate) enum Shallow {
    Done(f64),
    Deep { w: f64, level0: Vec<usize> },
}

/// Band `c` holds values in `(w/2^{c+1}, w/2^c]`.
fn band_of(w: f64, e: f64, bands: usize) -> Option<usize> {
    if e <= 0.0 {
        return None;
    }
    if e >= w {
        return Some(0);
    }
    let mut c = (w / e).log2().floor().max(0.0) as usize;
    while c > 0 && e > w / (1u64 << c.min(63)) as f64 {
        c -= 1;
    }
    while c < 64 && e <= w / (1u64 << (c + 1).min(63)) as f64 {
        c += 1;
    }
    (c < bands).then_some(c)
}

impl LinearSketch for EstimatorM {
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
        for j in 0..=self.level(u.row) {
            self.levels[j].update(u)?;
        }
        Ok(())
    }

    fn update_row(&mut self, row: usize, delta: &[f64]) -> Result<()> {
        check_row(self.n, self.d, row, delta)?;
        for j in 0..=self.level(row) {
            self.levels[j].update_row(row, delta)?;
        }
        Ok(())
    }

    fn merge(&mut self, other: &Self) -> Result<()> {
        if self.n != other.n
            || self.d != other.d
            || self.seed != other.seed
            || self.r0 != other.r0
            || self.b0 != other.b0
            || self.xi.to_bits() != other.xi.to_bits()
        {
            return Err(Error::ParameterMismatch);
        }
        for (a, b) in self.levels.iter_mut().zip(&other.levels) {
            a.merge(b)?;
        }
        Ok(())
    }

    fn dense_cells(&self) -> Vec<f64> {
        self.levels.iter().flat_map(|s| s.dense_cells()).collect()
    }
}
