//! `L_{2,2}` and `L_{1,2}` row samplers over turnstile streams, queried with
//! a post-processing projector after the stream ends.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{norm, DenseMatrix, Power, Projector, RowVec};
use crate::randomness::{derive_seed, hash2, UniformScale};
use crate::sketches::{AmsM, CountSketchM, EstimatorM, LinearSketch, Shallow};
use crate::stream::{Stream, TurnstileUpdate};

pub(crate) const TAG_INSTANCE: u64 = 0x51;
const TAG_SCALE: u64 = 0x52;
const TAG_CS: u64 = 0x53;
const TAG_NORM: u64 = 0x54;
const TAG_TAIL: u64 = 0x55;

/// Error parameter of the inner AMS sketches; `1.5×` their estimate lies in
/// `[‖·‖, 2‖·‖]` with high probability.
pub const INNER_AMS_EPS: f64 = 1.0 / 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub p: Power,
    pub eps: f64,
    /// Constant in the acceptance threshold `K`.
    pub c_k: f64,
    /// Constant in the `L_{1,2}` tail threshold `c_tail·ln n/ε`.
    pub c_tail: f64,
    /// Constant in the number of repetitions per bank.
    pub c_rep: f64,
    pub delta: f64,
    pub cs_rows: usize,
    /// Overrides the CountSketch bucket count.
    pub buckets: Option<usize>,
    /// Overrides the number of instances per bank.
    pub reps: Option<usize>,
}

impl SamplerConfig {
    pub fn new(p: Power, eps: f64) -> Self {
        SamplerConfig {
            p,
            eps,
            c_k: 1.0,
            c_tail: 1.0,
            c_rep: 4.0,
            delta: 0.01,
            cs_rows: 7,
            buckets: None,
            reps: None,
        }
    }

    pub fn l22(eps: f64) -> Self {
        Self::new(Power::Two, eps)
    }

    pub fn l12(eps: f64) -> Self {
        Self::new(Power::One, eps)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if !pos(self.eps) || self.eps >= 1.0 {
            return Err(Error::InvalidParameter(format!("epsilon must lie in (0,1), got {}", self.eps)));
        }
        if !pos(self.c_k) || !pos(self.c_tail) || !pos(self.c_rep) {
            return Err(Error::InvalidParameter("threshold constants must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        if self.cs_rows == 0 || self.buckets == Some(0) || self.reps == Some(0) {
            return Err(Error::InvalidParameter("sketch sizes must be positive".into()));
        }
        Ok(())
    }

    fn log_n(n: usize) -> f64 {
        (n.max(2) as f64).ln()
    }

    /// `K = c_K·ln n/ε` for `p = 2`, `c_K·ln n/ε²` for `p = 1`.
    pub fn threshold_k(&self, n: usize) -> f64 {
        let e = match self.p {
            Power::Two => self.eps,
            Power::One => self.eps * self.eps,
        };
        self.c_k * Self::log_n(n) / e
    }

    pub fn tail_k(&self, n: usize) -> f64 {
        self.c_tail * Self::log_n(n) / self.eps
    }

    pub fn bucket_count(&self, n: usize) -> usize {
        self.buckets.unwrap_or_else(|| {
            let e2 = self.eps * self.eps;
            let raw = match self.p {
                Power::Two => 32.0 / e2,
                Power::One => 32.0 * Self::log_n(n).powi(2) / e2,
            };
            (raw.ceil() as usize).max(256)
        })
    }

    /// Number of rows of `BP` subtracted before the tail estimate.
    pub fn top_count(&self) -> usize {
        (2.0 / (self.eps * self.eps)).ceil() as usize
    }

    /// Instances per bank: `⌈c_rep·K·ln(1/δ)⌉`.
    pub fn bank_size(&self, n: usize) -> usize {
        self.reps
            .unwrap_or_else(|| (self.c_rep * self.threshold_k(n) * (1.0 / self.delta).ln()).ceil() as usize)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SampleOutcome {
    Fail,
    Sample {
        index: usize,
        /// `t_i^{1/p}` times the recovered row of `BP`.
        row: RowVec,
        /// The scale `t_i`.
        scale: f64,
    },
}

impl SampleOutcome {
    pub fn is_fail(&self) -> bool {
        matches!(self, SampleOutcome::Fail)
    }

    pub fn index(&self) -> Option<usize> {
        match self {
            SampleOutcome::Fail => None,
            SampleOutcome::Sample { index, .. } => Some(*index),
        }
    }
}

#[derive(Clone, Debug)]
enum NormSketch {
    Ams(AmsM),
    Estimator(EstimatorM),
}

/// One sampler instance.
#[derive(Clone, Debug)]
pub struct LpSampler {
    config: SamplerConfig,
    n: usize,
    d: usize,
    scale_seed: u64,
    tail_seed: u64,
    cs: CountSketchM,
    norm: NormSketch,
    /// Absent only inside [`sample_dense`], which builds it on demand.
    tail: Option<AmsM>,
    scratch: Vec<f64>,
}

impl LpSampler {
    pub fn new(n: usize, d: usize, config: &SamplerConfig, seed: u64) -> Result<Self> {
        let mut s = Self::without_tail(n, d, config, seed)?;
        s.tail = Some(AmsM::new(n, d, INNER_AMS_EPS, s.tail_seed)?);
        Ok(s)
    }

    fn without_tail(n: usize, d: usize, config: &SamplerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let cs = CountSketchM::new(
            n,
            d,
            config.cs_rows,
            config.bucket_count(n),
            derive_seed(seed, TAG_CS, 0),
        )?;
        let norm_seed = derive_seed(seed, TAG_NORM, 0);
        let norm = match config.p {
            Power::Two => NormSketch::Ams(AmsM::new(n, d, INNER_AMS_EPS, norm_seed)?),
            Power::One => NormSketch::Estimator(EstimatorM::new(n, d, norm_seed)?),
        };
        Ok(LpSampler {
            config: config.clone(),
            n,
            d,
            scale_seed: derive_seed(seed, TAG_SCALE, 0),
            cs,
            norm,
            tail_seed: derive_seed(seed, TAG_TAIL, 0),
            tail: None,
            scratch: vec![0.0; d],
        })
    }

    /// Same state as a fresh instance with `seed` and no updates.
    fn reseed(&mut self, seed: u64) {
        self.cs.reseed(derive_seed(seed, TAG_CS, 0));
        let norm_seed = derive_seed(seed, TAG_NORM, 0);
        match &mut self.norm {
            NormSketch::Ams(s) => s.reseed(norm_seed),
            NormSketch::Estimator(s) => s.reseed(norm_seed),
        }
        self.scale_seed = derive_seed(seed, TAG_SCALE, 0);
        self.tail_seed = derive_seed(seed, TAG_TAIL, 0);
        if let Some(t) = &mut self.tail {
            t.reseed(self.tail_seed);
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// The scale `t_i`, recomputed from the seed.
    pub fn scale(&self, i: usize) -> f64 {
        UniformScale::from_hash(hash2(self.scale_seed, i as u64)).value()
    }

    /// Multiplier taking row `i` of `A` to row `i` of `B`.
    fn boost(&self, i: usize) -> f64 {
        let t = self.scale(i);
        match self.config.p {
            Power::Two => 1.0 / t.sqrt(),
            Power::One => 1.0 / t,
        }
    }

    pub fn update(&mut self, u: TurnstileUpdate) -> Result<()> {
        let scaled = TurnstileUpdate::new(u.row, u.col, u.delta * self.boost(u.row));
        self.cs.update(scaled)?;
        if let Some(t) = &mut self.tail {
            t.update(scaled)?;
        }
        match &mut self.norm {
            NormSketch::Ams(s) => s.update(u),
            NormSketch::Estimator(s) => s.update(u),
        }
    }

    pub fn update_row(&mut self, row: usize, delta: &[f64]) -> Result<()> {
        match &mut self.norm {
            NormSketch::Ams(s) => s.update_row(row, delta)?,
            NormSketch::Estimator(s) => s.update_row(row, delta)?,
        }
        let g = self.boost(row);
        let mut scratch = std::mem::take(&mut self.scratch);
        scratch.iter_mut().zip(delta).for_each(|(s, x)| *s = x * g);
        let mut res = self.cs.update_row(row, &scratch);
        if let (Ok(()), Some(t)) = (&res, &mut self.tail) {
            res = t.update_row(row, &scratch);
        }
        self.scratch = scratch;
        res
    }

    /// Estimate of `‖AP‖_{p,2}` used for the thresholds.
    pub fn norm_estimate(&self, p: &Projector) -> Result<f64> {
        match &self.norm {
            NormSketch::Ams(s) => Ok(1.5 * s.norm_estimate(p)?),
            NormSketch::Estimator(s) => s.l12_estimate(p),
        }
    }

    /// Runs the extraction stage against projector `p`.
    pub fn finalize(&self, p: &Projector) -> Result<SampleOutcome> {
        self.extract(p, None)
    }

    /// Tail sketch of `B` built from the final matrix, fed exactly as
    /// [`LpSampler::update_row`] would feed it.
    fn build_tail(&self, a: &DenseMatrix) -> Result<AmsM> {
        let mut t = AmsM::new(self.n, self.d, INNER_AMS_EPS, self.tail_seed)?;
        let mut scratch = vec![0.0; self.d];
        for (i, row) in a.rows().enumerate() {
            let g = self.boost(i);
            scratch.iter_mut().zip(row).for_each(|(s, x)| *s = x * g);
            t.update_row(i, &scratch)?;
        }
        Ok(t)
    }

    /// Row and tail thresholds for norm estimate `f`.
    fn thresholds(&self, f: f64) -> (f64, f64) {
        let k = self.config.threshold_k(self.n);
        match self.config.p {
            Power::Two => (k.sqrt() * f, k.sqrt() * f),
            Power::One => (k * f, self.config.tail_k(self.n) * f),
        }
    }

    /// Feeds every row of `a` once and extracts. Same outcome as
    /// [`LpSampler::update_row`] on each row followed by extraction, but the
    /// CountSketch is skipped when the row test must fail: every candidate
    /// is a signed sum of rows of `BP`, so its norm is at most `Σᵢ ‖BᵢP‖`.
    fn sample_rows(&mut self, a: &DenseMatrix, p: &Projector) -> Result<SampleOutcome> {
        p.check_dim(self.d)?;
        let f = match &mut self.norm {
            NormSketch::Ams(s) => {
                for (i, row) in a.rows().enumerate() {
                    s.update_row(i, row)?;
                }
                1.5 * s.norm_estimate(p)?
            }
            // deeper levels are filled only when the estimate reads them
            NormSketch::Estimator(s) => {
                for (i, row) in a.rows().enumerate() {
                    s.update_level0(i, row)?;
                }
                match s.shallow_estimate(p)? {
                    Shallow::Done(v) => v,
                    Shallow::Deep { .. } => {
                        for (i, row) in a.rows().enumerate() {
                            s.update_deeper(i, row)?;
                        }
                        s.l12_estimate(p)?
                    }
                }
            }
        };
        let (row_thr, _) = self.thresholds(f);
        let mut scaled = vec![0.0; self.d];
        let mut out = vec![0.0; self.d];
        let (mut bound, mut raw) = (0.0, 0.0);
        for (i, row) in a.rows().enumerate() {
            let g = self.boost(i);
            scaled.iter_mut().zip(row).for_each(|(s, x)| *s = x * g);
            p.apply_into(&scaled, &mut out);
            bound += norm(&out);
            raw += norm(&scaled);
        }
        // covers rounding in the cell sums, the projection and the norms
        let p_size = match p {
            Projector::Matrix(m) => m.frobenius().max(1.0),
            _ => 1.0,
        };
        if bound + 1e-6 * (bound + p_size * raw) < row_thr {
            return Ok(SampleOutcome::Fail);
        }
        for (i, row) in a.rows().enumerate() {
            let g = self.boost(i);
            scaled.iter_mut().zip(row).for_each(|(s, x)| *s = x * g);
            self.cs.update_row(i, &scaled)?;
        }
        self.extract(p, Some(a))
    }

    fn extract(&self, p: &Projector, source: Option<&DenseMatrix>) -> Result<SampleOutcome> {
        p.check_dim(self.d)?;
        let proj = self.cs.project(p)?;
        let (best, best_norm) = (0..self.n)
            .map(|i| (i, proj.query_norm(i)))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best_norm <= 0.0 {
            return Ok(SampleOutcome::Fail);
        }
        let f = self.norm_estimate(p)?;
        let (row_thr, tail_thr) = self.thresholds(f);
        if best_norm < row_thr {
            return Ok(SampleOutcome::Fail);
        }
        let top = proj.top_rows(self.config.top_count());
        let offsets: Vec<(usize, &[f64])> = top.iter().map(|(i, r)| (*i, &r[..])).collect();
        let built;
        let tail = match (&self.tail, source) {
            (Some(t), _) => t,
            (None, Some(a)) => {
                built = self.build_tail(a)?;
                &built
            }
            (None, None) => unreachable!("streaming instances always carry a tail sketch"),
        };
        let s_hat = 1.5 * tail.estimate(p, &offsets)?;
        if s_hat > tail_thr {
            return Ok(SampleOutcome::Fail);
        }
        let (index, rb) = top.into_iter().next().expect("n > 0");
        debug_assert_eq!(index, best);
        let t = self.scale(index);
        let back = match self.config.p {
            Power::Two => t.sqrt(),
            Power::One => t,
        };
        Ok(SampleOutcome::Sample {
            index,
            row: RowVec(rb.iter().map(|x| x * back).collect()),
            scale: t,
        })
    }
}

/// Outcome of one instance with the given seed after ingesting each row of
/// `a` once, in order, via [`LpSampler::update_row`]. Bit-identical to doing
/// exactly that; the tail sketch is only built if the threshold test passes.
pub fn sample_dense(a: &DenseMatrix, p: &Projector, config: &SamplerConfig, seed: u64) -> Result<SampleOutcome> {
    LpSampler::without_tail(a.n(), a.d(), config, seed)?.sample_rows(a, p)
}

/// [`sample_dense`] with sketch storage kept between calls.
#[derive(Clone, Debug, Default)]
pub struct DenseSampler {
    inner: Option<LpSampler>,
}

impl DenseSampler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Same result as [`sample_dense`] with the same arguments.
    pub fn sample(&mut self, a: &DenseMatrix, p: &Projector, config: &SamplerConfig, seed: u64) -> Result<SampleOutcome> {
        let s = match &mut self.inner {
            Some(s) if s.n == a.n() && s.d == a.d() && s.config == *config => {
                s.reseed(seed);
                s
            }
            slot => {
                let mut s = LpSampler::without_tail(a.n(), a.d(), config, seed)?;
                s.cs.use_direct_index();
                slot.insert(s)
            }
        };
        s.sample_rows(a, p)
    }
}

/// `m` independent instances fed the same stream; the first success wins.
#[derive(Clone, Debug)]
pub struct SamplerBank {
    instances: Vec<LpSampler>,
}

impl SamplerBank {
    pub fn new(n: usize, d: usize, config: &SamplerConfig, seed: u64) -> Result<Self> {
        Self::with_size(n, d, config, config.bank_size(n), seed)
    }

    pub fn with_size(n: usize, d: usize, config: &SamplerConfig, m: usize, seed: u64) -> Result<Self> {
        let instances = (0..m as u64)
            .map(|j| LpSampler::new(n, d, config, derive_seed(seed, TAG_INSTANCE, j)))
            .collect::<Result<Vec<_>>>()?;
        Ok(SamplerBank { instances })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[LpSampler] {
        &self.instances
    }

    pub fn update(&mut self, u: TurnstileUpdate) -> Result<()> {
        self.instances.iter_mut().try_for_each(|s| s.update(u))
    }

    pub fn update_row(&mut self, row: usize, delta: &[f64]) -> Result<()> {
        self.instances.iter_mut().try_for_each(|s| s.update_row(row, delta))
    }

    /// Feeds a whole stream; instances ingest in parallel.
    pub fn ingest(&mut self, updates: &[TurnstileUpdate]) -> Result<()> {
        self.instances
            .par_iter_mut()
            .with_min_len(8)
            .try_for_each(|s| updates.iter().try_for_each(|&u| s.update(u)))
    }

    /// First non-FAIL outcome in instance order.
    pub fn finalize(&self, p: &Projector) -> Result<SampleOutcome> {
        for s in &self.instances {
            let out = s.finalize(p)?;
            if !out.is_fail() {
                return Ok(out);
            }
        }
        Ok(SampleOutcome::Fail)
    }
}

/// Runs a full bank over `stream` and returns its outcome under `p`.
pub fn multi_sample(seed: u64, stream: &Stream, p: &Projector, config: &SamplerConfig) -> Result<SampleOutcome> {
    let mut bank = SamplerBank::new(stream.n, stream.d, config, seed)?;
    bank.ingest(&stream.updates)?;
    bank.finalize(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm, OrthoBasis};

    fn instance_of(a: &DenseMatrix, cfg: &SamplerConfig, seed: u64) -> LpSampler {
        let mut s = LpSampler::new(a.n(), a.d(), cfg, seed).unwrap();
        for (i, r) in a.rows().enumerate() {
            s.update_row(i, r).unwrap();
        }
        s
    }

    #[test]
    fn defaults_follow_formulas() {
        let c = SamplerConfig::l22(0.1);
        assert!((c.threshold_k(8) - 8f64.ln() / 0.1).abs() < 1e-12);
        assert_eq!(c.bucket_count(8), 3200);
        assert_eq!(c.top_count(), 200);
        assert_eq!(SamplerConfig::l22(0.5).bucket_count(8), 256);
        let c1 = SamplerConfig::l12(0.1);
        assert!((c1.threshold_k(1) - 2f64.ln() / 0.01).abs() < 1e-9);
        assert!(SamplerConfig::l22(1.5).validate().is_err());
    }

    #[test]
    fn zero_matrix_fails() {
        for p in [Power::One, Power::Two] {
            let cfg = SamplerConfig::new(p, 0.2);
            let s = LpSampler::new(4, 2, &cfg, 3).unwrap();
            assert_eq!(s.finalize(&Projector::Identity).unwrap(), SampleOutcome::Fail);
            let stream = Stream::turnstile(4, 2, vec![]).unwrap();
            assert!(multi_sample(1, &stream, &Projector::Identity, &cfg).unwrap().is_fail());
        }
    }

    #[test]
    fn single_row_never_reports_another_index() {
        let mut a = DenseMatrix::zeros(6, 3);
        a.row_mut(4).copy_from_slice(&[1.0, 2.0, -2.0]);
        for p in [Power::One, Power::Two] {
            let cfg = SamplerConfig::new(p, 0.2);
            for seed in 0..300 {
                let out = instance_of(&a, &cfg, seed).finalize(&Projector::Identity).unwrap();
                if let SampleOutcome::Sample { index, row, .. } = out {
                    assert_eq!(index, 4);
                    assert!((norm(&row) - 3.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn single_row_bank_succeeds() {
        let mut a = DenseMatrix::zeros(5, 2);
        a.row_mut(2).copy_from_slice(&[3.0, 4.0]);
        let stream = Stream::from_matrix(&a);
        let cfg = SamplerConfig::l22(0.2);
        let ok = (0..100)
            .filter(|&seed| {
                multi_sample(seed, &stream, &Projector::Identity, &cfg).unwrap().index() == Some(2)
            })
            .count();
        assert!(ok >= 99, "{ok}");
    }

    #[test]
    fn entry_and_row_updates_agree() {
        let cfg = SamplerConfig::l22(0.3);
        let mut a = LpSampler::new(3, 2, &cfg, 8).unwrap();
        let mut b = a.clone();
        a.update_row(1, &[2.0, -1.0]).unwrap();
        b.update(TurnstileUpdate::new(1, 0, 2.0)).unwrap();
        b.update(TurnstileUpdate::new(1, 1, -1.0)).unwrap();
        assert_eq!(a.cs, b.cs);
        assert_eq!(a.tail, b.tail);
    }

    #[test]
    fn dense_path_matches_streaming() {
        let a = DenseMatrix::from_rows(&[
            [2.0, 0.0, 1.0],
            [0.0, -1.0, 0.5],
            [0.0, 0.0, 0.0],
            [1.0, 1.0, 1.0],
        ])
        .unwrap();
        let basis = OrthoBasis::from_rows(3, &[[1.0, 1.0, 0.0]]).unwrap();
        // one reused sampler across powers, projectors and seeds
        let mut reused = DenseSampler::new();
        for p in [Power::One, Power::Two] {
            let cfg = SamplerConfig::new(p, 0.2);
            let mut hits = 0;
            for proj in [Projector::Identity, Projector::complement_of(&basis)] {
                for seed in 0..1500 {
                    let streamed = instance_of(&a, &cfg, seed).finalize(&proj).unwrap();
                    let dense = sample_dense(&a, &proj, &cfg, seed).unwrap();
                    assert_eq!(streamed, dense);
                    assert_eq!(reused.sample(&a, &proj, &cfg, seed).unwrap(), dense);
                    hits += usize::from(!dense.is_fail());
                }
            }
            assert!(hits > 0);
        }
    }

    #[test]
    fn dense_path_matches_streaming_many_rows() {
        let rows: Vec<[f64; 2]> = (0..20).map(|i| [1.0 + (i % 3) as f64, (i % 5) as f64 - 2.0]).collect();
        let a = DenseMatrix::from_rows(&rows).unwrap();
        let cfg = SamplerConfig::new(Power::One, 0.3);
        let mut reused = DenseSampler::new();
        for seed in 0..300 {
            let streamed = instance_of(&a, &cfg, seed).finalize(&Projector::Identity).unwrap();
            let dense = sample_dense(&a, &Projector::Identity, &cfg, seed).unwrap();
            assert_eq!(streamed, dense);
            assert_eq!(reused.sample(&a, &Projector::Identity, &cfg, seed).unwrap(), dense);
        }
    }

    #[test]
    fn two_row_frequencies() {
        let mut a = DenseMatrix::zeros(2, 2);
        a.row_mut(0).copy_from_slice(&[2.0, 0.0]);
        a.row_mut(1).copy_from_slice(&[0.0, 1.0]);
        let cfg = SamplerConfig::l22(0.1);
        let mut counts = [0usize; 2];
        let mut seed = 0;
        while counts.iter().sum::<usize>() < 4000 {
            if let Some(i) = sample_dense(&a, &Projector::Identity, &cfg, seed).unwrap().index() {
                counts[i] += 1;
            }
            seed += 1;
        }
        let f = counts[0] as f64 / 4000.0;
        assert!((f - 0.8).abs() < 0.05, "{f}");
    }
}
