//! One-pass noisy adaptive sampling: `k` sampler banks ingest the same
//! stream and are finalized in sequence, each against the orthogonal
//! complement of the noisy rows already drawn.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, OrthoBasis, Projector, RowVec};
use crate::randomness::derive_seed;
use crate::samplers::{DenseSampler, LpSampler, SampleOutcome, SamplerBank, SamplerConfig, TAG_INSTANCE};
use crate::stream::TurnstileUpdate;

const TAG_BANK: u64 = 0xAD;

/// A residual norm estimate at most this fraction of the first round's
/// estimate counts as zero.
pub const RANK_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Completed,
    /// Every instance of the bank for this round (0-based) failed.
    SamplerFailed { round: usize },
    /// The residual matrix vanished before this round.
    RankExhausted { round: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledSubspace {
    pub rows: Vec<RowVec>,
    pub basis: OrthoBasis,
    /// Claimed source row of each noisy row; duplicates are possible.
    pub indices: Vec<usize>,
    pub stop: StopReason,
}

impl SampledSubspace {
    pub fn empty(d: usize) -> Self {
        SampledSubspace {
            rows: Vec::new(),
            basis: OrthoBasis::new(d),
            indices: Vec::new(),
            stop: StopReason::Completed,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rank_exhausted(&self) -> bool {
        matches!(self.stop, StopReason::RankExhausted { .. })
    }

    pub fn projector(&self) -> Projector {
        Projector::complement_of(&self.basis)
    }

    fn push(&mut self, index: usize, row: RowVec) -> Result<()> {
        self.basis.push(&row)?;
        self.rows.push(row);
        self.indices.push(index);
        Ok(())
    }
}

/// Source of per-round sampler outcomes.
trait Banks {
    fn count(&self) -> usize;
    fn norm_estimate(&self, bank: usize, p: &Projector) -> Result<f64>;
    fn outcome(&self, bank: usize, p: &Projector) -> Result<SampleOutcome>;
}

fn run_rounds<B: Banks>(banks: &B, d: usize, round_sizes: &[usize]) -> Result<SampledSubspace> {
    let needed: usize = round_sizes.iter().sum();
    if needed > banks.count() {
        return Err(Error::BankExhausted {
            needed,
            available: banks.count(),
        });
    }
    let mut out = SampledSubspace::empty(d);
    let mut next = 0;
    let mut reference = None;
    for (round, &size) in round_sizes.iter().enumerate() {
        if size == 0 {
            continue;
        }
        let p = out.projector();
        let f = banks.norm_estimate(next, &p)?;
        let floor = RANK_FLOOR * *reference.get_or_insert(f.max(1.0));
        if f <= floor {
            out.stop = StopReason::RankExhausted { round };
            return Ok(out);
        }
        let mut drawn = Vec::with_capacity(size);
        for _ in 0..size {
            match banks.outcome(next, &p)? {
                SampleOutcome::Fail => {
                    for (i, r) in drawn {
                        out.push(i, r)?;
                    }
                    out.stop = StopReason::SamplerFailed { round };
                    return Ok(out);
                }
                SampleOutcome::Sample { index, row, .. } => drawn.push((index, row)),
            }
            next += 1;
        }
        for (i, r) in drawn {
            out.push(i, r)?;
        }
    }
    Ok(out)
}

/// `k` banks of `L_{p,2}` samplers over one stream.
#[derive(Clone, Debug)]
pub struct AdaptiveSampler {
    n: usize,
    d: usize,
    config: SamplerConfig,
    banks: Vec<SamplerBank>,
}

impl AdaptiveSampler {
    pub fn new(n: usize, d: usize, k: usize, config: &SamplerConfig, seed: u64) -> Result<Self> {
        let banks = (0..k as u64)
            .map(|j| SamplerBank::new(n, d, config, derive_seed(seed, TAG_BANK, j)))
            .collect::<Result<Vec<_>>>()?;
        Ok(AdaptiveSampler {
            n,
            d,
            config: config.clone(),
            banks,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn bank_count(&self) -> usize {
        self.banks.len()
    }

    pub fn update(&mut self, u: TurnstileUpdate) -> Result<()> {
        self.banks.iter_mut().try_for_each(|b| b.update(u))
    }

    pub fn update_row(&mut self, row: usize, delta: &[f64]) -> Result<()> {
        self.banks.iter_mut().try_for_each(|b| b.update_row(row, delta))
    }

    pub fn ingest(&mut self, updates: &[TurnstileUpdate]) -> Result<()> {
        self.banks.par_iter_mut().try_for_each(|b| b.ingest(updates))
    }

    /// Feeds each row of `a` once, in order, as a dense row increment.
    pub fn ingest_rows(&mut self, a: &DenseMatrix) -> Result<()> {
        self.banks.par_iter_mut().try_for_each(|b| {
            a.rows()
                .enumerate()
                .try_for_each(|(i, r)| b.update_row(i, r))
        })
    }

    /// One sample per bank, re-projecting after each.
    pub fn finalize(&self) -> Result<SampledSubspace> {
        self.finalize_batches(&vec![1; self.banks.len()])
    }

    /// Draws `round_sizes[r]` samples against the projector frozen at the
    /// start of round `r`, then projects them all away.
    pub fn finalize_batches(&self, round_sizes: &[usize]) -> Result<SampledSubspace> {
        run_rounds(self, self.d, round_sizes)
    }
}

impl Banks for AdaptiveSampler {
    fn count(&self) -> usize {
        self.banks.len()
    }

    fn norm_estimate(&self, bank: usize, p: &Projector) -> Result<f64> {
        match self.banks[bank].instances().first() {
            Some(s) => s.norm_estimate(p),
            None => Ok(0.0),
        }
    }

    fn outcome(&self, bank: usize, p: &Projector) -> Result<SampleOutcome> {
        self.banks[bank].finalize(p)
    }
}

/// Banks evaluated instance by instance straight from the final matrix.
struct DenseBanks<'a> {
    a: &'a DenseMatrix,
    config: &'a SamplerConfig,
    seeds: Vec<u64>,
    size: usize,
}

impl Banks for DenseBanks<'_> {
    fn count(&self) -> usize {
        self.seeds.len()
    }

    fn norm_estimate(&self, bank: usize, p: &Projector) -> Result<f64> {
        if self.size == 0 {
            return Ok(0.0);
        }
        let mut s = LpSampler::new(self.a.n(), self.a.d(), self.config, derive_seed(self.seeds[bank], TAG_INSTANCE, 0))?;
        for (i, r) in self.a.rows().enumerate() {
            s.update_row(i, r)?;
        }
        s.norm_estimate(p)
    }

    fn outcome(&self, bank: usize, p: &Projector) -> Result<SampleOutcome> {
        let mut sampler = DenseSampler::new();
        for j in 0..self.size as u64 {
            let out = sampler.sample(self.a, p, self.config, derive_seed(self.seeds[bank], TAG_INSTANCE, j))?;
            if !out.is_fail() {
                return Ok(out);
            }
        }
        Ok(SampleOutcome::Fail)
    }
}

/// Same result as building an [`AdaptiveSampler`] with `banks` banks,
/// calling [`AdaptiveSampler::ingest_rows`] on `a`, then
/// [`AdaptiveSampler::finalize_batches`]; instances past a bank's first
/// success are never built.
pub fn adaptive_sample_dense(
    a: &DenseMatrix,
    banks: usize,
    round_sizes: &[usize],
    config: &SamplerConfig,
    seed: u64,
) -> Result<SampledSubspace> {
    config.validate()?;
    let dense = DenseBanks {
        a,
        config,
        seeds: (0..banks as u64).map(|j| derive_seed(seed, TAG_BANK, j)).collect(),
        size: config.bank_size(a.n()),
    };
    run_rounds(&dense, a.d(), round_sizes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, norm, Power};

    fn streamed(a: &DenseMatrix, k: usize, cfg: &SamplerConfig, seed: u64) -> AdaptiveSampler {
        let mut s = AdaptiveSampler::new(a.n(), a.d(), k, cfg, seed).unwrap();
        s.ingest_rows(a).unwrap();
        s
    }

    #[test]
    fn zero_matrix_is_rank_exhausted() {
        let a = DenseMatrix::zeros(4, 2);
        let cfg = SamplerConfig::l22(0.3);
        let out = streamed(&a, 2, &cfg, 1).finalize().unwrap();
        assert!(out.is_empty());
        assert_eq!(out.stop, StopReason::RankExhausted { round: 0 });
        let b = adaptive_sample_dense(&a, 2, &[2], &cfg, 1).unwrap();
        assert!(b.rank_exhausted());
    }

    #[test]
    fn stops_when_rank_runs_out() {
        let a = DenseMatrix::from_rows(&[[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        let cfg = SamplerConfig::l22(0.3);
        for seed in 0..10 {
            let out = streamed(&a, 3, &cfg, seed).finalize().unwrap();
            assert!(out.len() <= 1);
            if out.len() == 1 {
                assert_eq!(out.stop, StopReason::RankExhausted { round: 1 });
            }
        }
    }

    #[test]
    fn noisy_rows_are_mutually_orthogonal() {
        let a = DenseMatrix::from_rows(&[
            [3.0, 1.0, 0.0, 0.5],
            [0.0, 2.0, 1.0, 0.0],
            [1.0, 0.0, 0.0, 2.0],
            [0.5, 0.5, 0.5, 0.5],
            [2.0, -1.0, 1.0, 0.0],
        ])
        .unwrap();
        let cfg = SamplerConfig::l22(0.2);
        for seed in 0..5 {
            let out = streamed(&a, 3, &cfg, seed).finalize().unwrap();
            for i in 0..out.len() {
                for j in 0..i {
                    let c = dot(&out.rows[i], &out.rows[j]);
                    assert!(c.abs() <= 1e-8 * norm(&out.rows[i]) * norm(&out.rows[j]));
                }
            }
        }
    }

    #[test]
    fn dense_path_matches_streaming() {
        let a = DenseMatrix::from_rows(&[[10.0, 0.0], [10.0, 0.0], [0.0, 1.0]]).unwrap();
        for p in [Power::Two, Power::One] {
            let cfg = SamplerConfig::new(p, 0.2);
            for seed in 0..6 {
                let s = streamed(&a, 2, &cfg, seed);
                assert_eq!(
                    s.finalize().unwrap(),
                    adaptive_sample_dense(&a, 2, &[1, 1], &cfg, seed).unwrap()
                );
                assert_eq!(
                    s.finalize_batches(&[2]).unwrap(),
                    adaptive_sample_dense(&a, 2, &[2], &cfg, seed).unwrap()
                );
            }
        }
    }

    #[test]
    fn single_round_matches_bank() {
        let a = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]).unwrap();
        let cfg = SamplerConfig::l22(0.3);
        let s = streamed(&a, 1, &cfg, 4);
        let out = s.finalize().unwrap();
        let direct = s.banks[0].finalize(&Projector::Identity).unwrap();
        assert_eq!(out.indices.first().copied(), direct.index());
    }

    #[test]
    fn batches_need_enough_banks() {
        let a = DenseMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let cfg = SamplerConfig::l22(0.3);
        let s = streamed(&a, 2, &cfg, 4);
        assert!(matches!(s.finalize_batches(&[2, 1]), Err(Error::BankExhausted { .. })));
    }

    #[test]
    fn orthonormal_batch_reaches_full_rank() {
        let a = DenseMatrix::identity(4);
        let cfg = SamplerConfig::l22(0.2);
        let full = (0..20)
            .filter(|&seed| adaptive_sample_dense(&a, 12, &[12], &cfg, seed).unwrap().basis.rank() == 4)
            .count();
        assert!(full >= 15, "{full}");
    }
}
