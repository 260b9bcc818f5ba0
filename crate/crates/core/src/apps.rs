//! Turnstile applications of the adaptive sampler.

use std::borrow::Cow;
use std::fmt::Write as _;

use itertools::Itertools;
use nalgebra::DMatrix;

use crate::adaptive::{adaptive_sample_dense, AdaptiveSampler, SampledSubspace, StopReason, RANK_FLOOR};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, parallelepiped_volume, DenseMatrix, OrthoBasis, Power, Projector, RowVec};
use crate::randomness::derive_seed;
use crate::samplers::{DenseSampler, SampleOutcome, SamplerBank, SamplerConfig, TAG_INSTANCE};
use crate::sketches::{AmsM, CountSketchM, LinearSketch};
use crate::stream::Stream;

const TAG_VM_CS: u64 = 0x71;
const TAG_VM_AMS: u64 = 0x72;
const TAG_VM_BANK: u64 = 0x73;

pub const DEFAULT_SHRINK: f64 = 1.0 / 8.0;
/// Largest `k·s` for which flats are extracted by search.
pub const MAX_SEARCH_DIM: usize = 4;
const MAX_FLAT_UNIONS: u128 = 200_000;
const MAX_PARTITIONS: u128 = 4096;
const LLOYD_ITERS: usize = 20;

/// Where the matrix comes from. `Rows` feeds row `i` of the matrix as a
/// single dense increment to row `i`, in order.
#[derive(Clone, Copy, Debug)]
pub enum Input<'a> {
    Stream(&'a Stream),
    Rows(&'a DenseMatrix),
}

impl<'a> From<&'a Stream> for Input<'a> {
    fn from(s: &'a Stream) -> Self {
        Input::Stream(s)
    }
}

impl<'a> From<&'a DenseMatrix> for Input<'a> {
    fn from(a: &'a DenseMatrix) -> Self {
        Input::Rows(a)
    }
}

impl<'a> Input<'a> {
    pub fn n(&self) -> usize {
        match self {
            Input::Stream(s) => s.n,
            Input::Rows(a) => a.n(),
        }
    }

    pub fn d(&self) -> usize {
        match self {
            Input::Stream(s) => s.d,
            Input::Rows(a) => a.d(),
        }
    }

    pub fn dense(&self) -> Result<Cow<'a, DenseMatrix>> {
        match *self {
            Input::Stream(s) => Ok(Cow::Owned(s.to_dense()?)),
            Input::Rows(a) => Ok(Cow::Borrowed(a)),
        }
    }

    fn feed<S: LinearSketch>(&self, sketch: &mut S) -> Result<()> {
        match self {
            Input::Stream(s) => sketch.ingest(&s.updates),
            Input::Rows(a) => a.rows().enumerate().try_for_each(|(i, r)| sketch.update_row(i, r)),
        }
    }

    fn adaptive(&self, banks: usize, sizes: &[usize], config: &SamplerConfig, seed: u64) -> Result<SampledSubspace> {
        match self {
            Input::Stream(s) => {
                let mut a = AdaptiveSampler::new(s.n, s.d, banks, config, seed)?;
                a.ingest(&s.updates)?;
                a.finalize_batches(sizes)
            }
            Input::Rows(a) => adaptive_sample_dense(a, banks, sizes, config, seed),
        }
    }

    fn bank(&self, config: &SamplerConfig, seed: u64, p: &Projector) -> Result<SampleOutcome> {
        match self {
            Input::Stream(s) => {
                let mut bank = SamplerBank::new(s.n, s.d, config, seed)?;
                bank.ingest(&s.updates)?;
                bank.finalize(p)
            }
            Input::Rows(a) => {
                let mut sampler = DenseSampler::new();
                for j in 0..config.bank_size(a.n()) as u64 {
                    let out = sampler.sample(a, p, config, derive_seed(seed, TAG_INSTANCE, j))?;
                    if !out.is_fail() {
                        return Ok(out);
                    }
                }
                Ok(SampleOutcome::Fail)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    /// `‖A − AR†R‖_F²`.
    Rss,
    /// `Σ_i dist(A_i, span R)^p`.
    Subspace(Power),
    /// `Σ_i min_j dist(A_i, F_j)^p` over the returned flats.
    Clustering(Power),
    /// Volume of the parallelepiped of the selected rows of `A`.
    Volume,
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Rss => "rss",
            Objective::Subspace(Power::One) => "subspace_1",
            Objective::Subspace(Power::Two) => "subspace_2",
            Objective::Clustering(Power::One) => "pc_cost_1",
            Objective::Clustering(Power::Two) => "pc_cost_2",
            Objective::Volume => "volume",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryResult {
    pub objective: Objective,
    pub subspace: SampledSubspace,
    pub cost: f64,
    /// Clustering only: the chosen flats.
    pub flats: Vec<OrthoBasis>,
    /// Clustering only: false when `cost` is the best single flat of
    /// dimension `k·s` (a lower bound) rather than a searched union.
    pub searched: bool,
    /// Volume only: whether each round took the certified heavy row.
    pub heavy_rounds: Vec<bool>,
}

impl SummaryResult {
    fn new(objective: Objective, subspace: SampledSubspace, cost: f64) -> Self {
        SummaryResult {
            objective,
            subspace,
            cost,
            flats: Vec::new(),
            searched: false,
            heavy_rounds: Vec::new(),
        }
    }

    /// Line-oriented report.
    pub fn report(&self) -> String {
        let mut s = String::new();
        writeln!(s, "objective {}", self.objective.name()).unwrap();
        writeln!(s, "cost {:e}", self.cost).unwrap();
        let idx: Vec<String> = self.subspace.indices.iter().map(|i| i.to_string()).collect();
        writeln!(s, "indices {}", idx.join(" ")).unwrap();
        let stop = match self.subspace.stop {
            StopReason::Completed => "completed".to_string(),
            StopReason::SamplerFailed { round } => format!("sampler_failed {round}"),
            StopReason::RankExhausted { round } => format!("rank_exhausted {round}"),
        };
        writeln!(s, "stop {stop}").unwrap();
        for r in &self.subspace.rows {
            let cells: Vec<String> = r.iter().map(|x| format!("{x:e}")).collect();
            writeln!(s, "row {}", cells.join(" ")).unwrap();
        }
        if matches!(self.objective, Objective::Clustering(_)) {
            writeln!(s, "searched {}", self.searched).unwrap();
            for f in &self.flats {
                writeln!(s, "flat_rank {}", f.rank()).unwrap();
            }
        }
        s
    }
}

/// `Σ_i dist(A_i, span)^p`, computed row by row against the basis.
pub fn subspace_cost(a: &DenseMatrix, basis: &OrthoBasis, p: Power) -> Result<f64> {
    a.rows().map(|r| Ok(p.raise(basis.residual(r)?.norm()))).sum()
}

fn finish(input: Input, sub: SampledSubspace, objective: Objective) -> Result<SummaryResult> {
    let a = input.dense()?;
    let p = match objective {
        Objective::Subspace(p) => p,
        _ => Power::Two,
    };
    let cost = subspace_cost(&a, &sub.basis, p)?;
    Ok(SummaryResult::new(objective, sub, cost))
}

/// `k` adaptive `L_{2,2}` rounds; cost `‖A − AR†R‖_F²`.
pub fn row_subset_select<'a>(input: impl Into<Input<'a>>, k: usize, eps: f64, seed: u64) -> Result<SummaryResult> {
    let input = input.into();
    let config = SamplerConfig::l22(eps);
    let sub = input.adaptive(k, &vec![1; k], &config, seed)?;
    finish(input, sub, Objective::Rss)
}

/// `k` adaptive `L_{p,2}` rounds; cost `Σ dist(A_i, span R)^p`.
pub fn subspace_approx<'a>(input: impl Into<Input<'a>>, k: usize, p: Power, eps: f64, seed: u64) -> Result<SummaryResult> {
    let input = input.into();
    let config = SamplerConfig::new(p, eps);
    let sub = input.adaptive(k, &vec![1; k], &config, seed)?;
    finish(input, sub, Objective::Subspace(p))
}

/// Rounds of the oversampling schedule: `outer·inner` batches of `batch`
/// samples, each batch against the span of everything drawn before it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub outer: usize,
    pub inner: usize,
    pub batch: usize,
}

impl Schedule {
    /// `t = ⌈k ln(k+1)⌉`, `k` inner rounds, and batches of
    /// `shrink·(2k/δ)^p·(k/δ)·ln(k/δ)` with `δ = ε/ln k`, capped at `d`.
    pub fn default_for(k: usize, p: Power, eps: f64, d: usize, shrink: f64) -> Schedule {
        let kf = k.max(1) as f64;
        let delta = eps / kf.ln().max(1.0);
        let raw = shrink * p.raise(2.0 * kf / delta) * (kf / delta) * (kf / delta).ln().max(1.0);
        Schedule {
            outer: ((kf * (kf + 1.0).ln()).ceil() as usize).max(1),
            inner: k,
            batch: (raw.ceil() as usize).clamp(1, d.max(1)),
        }
    }

    pub fn round_sizes(&self) -> Vec<usize> {
        vec![self.batch; self.outer * self.inner]
    }

    pub fn banks(&self) -> usize {
        self.outer * self.inner * self.batch
    }
}

fn check_shrink(shrink: f64) -> Result<()> {
    if shrink > 0.0 && shrink.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("shrink must be positive, got {shrink}")))
    }
}

pub fn subspace_approx_bicriteria<'a>(
    input: impl Into<Input<'a>>,
    p: Power,
    eps: f64,
    schedule: Schedule,
    seed: u64,
) -> Result<SummaryResult> {
    let input = input.into();
    let config = SamplerConfig::new(p, eps);
    let sub = input.adaptive(schedule.banks(), &schedule.round_sizes(), &config, seed)?;
    finish(input, sub, Objective::Subspace(p))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterParams {
    /// Dimension of each flat.
    pub k: usize,
    /// Number of flats.
    pub s: usize,
    pub p: Power,
    pub eps: f64,
    pub shrink: f64,
    /// Extra adaptive samples after the bicriteria stage.
    pub extra: Option<usize>,
}

impl ClusterParams {
    pub fn new(k: usize, s: usize, p: Power, eps: f64) -> Self {
        ClusterParams {
            k,
            s,
            p,
            eps,
            shrink: DEFAULT_SHRINK,
            extra: None,
        }
    }

    /// `shrink·(k²/ε)^p·k⁴·s/ε²`, capped at `d`.
    pub fn extra_samples(&self, d: usize) -> usize {
        self.extra.unwrap_or_else(|| {
            let k = self.k as f64;
            let raw = self.shrink * self.p.raise(k * k / self.eps) * k.powi(4) * self.s as f64 / (self.eps * self.eps);
            (raw.ceil() as usize).min(d)
        })
    }
}

/// Top `k` right singular vectors of the given rows (all of length `m`).
fn top_subspace(rows: &[&[f64]], m: usize, k: usize) -> Vec<Vec<f64>> {
    if rows.is_empty() || m == 0 || k == 0 {
        return Vec::new();
    }
    let mat = DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]);
    let svd = mat.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    order
        .into_iter()
        .take(k)
        .filter(|&i| svd.singular_values[i] > 0.0)
        .map(|i| vt.row(i).iter().copied().collect())
        .collect()
}

/// Squared distance of `c` to the span of orthonormal `flat`.
fn dist_sq(c: &[f64], flat: &[Vec<f64>]) -> f64 {
    let mut r = c.to_vec();
    for q in flat {
        let t = dot(q, &r);
        r.iter_mut().zip(q).for_each(|(x, y)| *x -= t * y);
    }
    dot(&r, &r)
}

struct Coords {
    /// Coordinates of each row inside the candidate span.
    c: Vec<Vec<f64>>,
    /// Squared distance of each row to the candidate span.
    off: Vec<f64>,
    m: usize,
}

impl Coords {
    fn new(a: &DenseMatrix, w: &OrthoBasis) -> Result<Self> {
        let mut c = Vec::with_capacity(a.n());
        let mut off = Vec::with_capacity(a.n());
        for r in a.rows() {
            c.push(w.vectors().iter().map(|q| dot(q, r)).collect());
            let res = w.residual(r)?;
            off.push(dot(&res, &res));
        }
        Ok(Coords { c, off, m: w.rank() })
    }

    fn point_cost(&self, i: usize, inner_sq: f64, p: Power) -> f64 {
        p.raise((self.off[i] + inner_sq).max(0.0).sqrt())
    }

    fn union_cost(&self, flats: &[Vec<Vec<f64>>], p: Power) -> (f64, Vec<usize>) {
        let mut total = 0.0;
        let mut assign = Vec::with_capacity(self.c.len());
        for (i, c) in self.c.iter().enumerate() {
            let (j, best) = flats
                .iter()
                .map(|f| dist_sq(c, f))
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (j, x)| if x < acc.1 { (j, x) } else { acc });
            total += self.point_cost(i, if flats.is_empty() { dot(c, c) } else { best }, p);
            assign.push(j);
        }
        (total, assign)
    }

    fn fit(&self, members: &[usize], k: usize) -> Vec<Vec<f64>> {
        let rows: Vec<&[f64]> = members.iter().map(|&i| self.c[i].as_slice()).collect();
        top_subspace(&rows, self.m, k)
    }

    fn lloyd(&self, mut flats: Vec<Vec<Vec<f64>>>, k: usize, p: Power) -> (f64, Vec<Vec<Vec<f64>>>) {
        let (mut cost, mut assign) = self.union_cost(&flats, p);
        for _ in 0..LLOYD_ITERS {
            let next: Vec<Vec<Vec<f64>>> = (0..flats.len())
                .map(|j| {
                    let members: Vec<usize> = (0..assign.len()).filter(|&i| assign[i] == j).collect();
                    if members.is_empty() {
                        flats[j].clone()
                    } else {
                        self.fit(&members, k)
                    }
                })
                .collect();
            let (c, a) = self.union_cost(&next, p);
            if c >= cost * (1.0 - 1e-12) {
                break;
            }
            cost = c;
            assign = a;
            flats = next;
        }
        (cost, flats)
    }

    /// Flats spanned by `k` coordinate rows, best union of `s`, refined.
    fn search(&self, k: usize, s: usize, p: Power) -> Option<(f64, Vec<Vec<Vec<f64>>>)> {
        let live: Vec<usize> = (0..self.c.len()).filter(|&i| norm(&self.c[i]) > 0.0).collect();
        let singles: Vec<Vec<usize>> = live.iter().copied().combinations(k.min(live.len())).collect();
        let unions = binomial(singles.len(), s.min(singles.len()));
        if unions > MAX_FLAT_UNIONS || singles.is_empty() {
            return None;
        }
        let candidates: Vec<Vec<Vec<f64>>> = singles.iter().map(|t| self.fit(t, k)).collect();
        let dists: Vec<Vec<f64>> = candidates
            .iter()
            .map(|f| self.c.iter().map(|c| dist_sq(c, f)).collect())
            .collect();
        let mut best = (f64::INFINITY, Vec::new());
        for pick in (0..candidates.len()).combinations(s.min(candidates.len())) {
            let cost: f64 = (0..self.c.len())
                .map(|i| self.point_cost(i, pick.iter().map(|&j| dists[j][i]).fold(f64::INFINITY, f64::min), p))
                .sum();
            if cost < best.0 {
                best = (cost, pick);
            }
        }
        let flats = best.1.iter().map(|&j| candidates[j].clone()).collect();
        Some(self.lloyd(flats, k, p))
    }

    /// Every assignment of rows to `s` groups, each fitted by SVD.
    fn partitions(&self, k: usize, s: usize, p: Power) -> Option<(f64, Vec<Vec<Vec<f64>>>)> {
        let n = self.c.len();
        if s == 0 || (s as u128).checked_pow(n as u32).map_or(true, |x| x > MAX_PARTITIONS) {
            return None;
        }
        let mut best = (f64::INFINITY, Vec::new());
        let mut label = vec![0usize; n];
        loop {
            let flats: Vec<Vec<Vec<f64>>> = (0..s)
                .map(|j| {
                    let members: Vec<usize> = (0..n).filter(|&i| label[i] == j).collect();
                    self.fit(&members, k)
                })
                .collect();
            let (c, _) = self.union_cost(&flats, p);
            if c < best.0 {
                best = (c, flats);
            }
            let mut pos = 0;
            loop {
                if pos == n {
                    return Some(best);
                }
                label[pos] += 1;
                if label[pos] < s {
                    break;
                }
                label[pos] = 0;
                pos += 1;
            }
        }
    }

    fn lift(&self, w: &OrthoBasis, flat: &[Vec<f64>]) -> Result<OrthoBasis> {
        let mut b = OrthoBasis::new(w.dim());
        for v in flat {
            let mut x = vec![0.0; w.dim()];
            for (coef, q) in v.iter().zip(w.vectors()) {
                x.iter_mut().zip(q).for_each(|(a, b)| *a += coef * b);
            }
            b.push(&x)?;
        }
        Ok(b)
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    (0..k.min(n - k)).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Candidate row set for `s` flats of dimension `k`: the bicriteria subspace
/// for dimension `k·s` plus extra adaptive samples. Flats inside the
/// candidate span are then chosen by search when `k·s` is small.
pub fn projective_cluster_reduce<'a>(input: impl Into<Input<'a>>, params: &ClusterParams, seed: u64) -> Result<SummaryResult> {
    let input = input.into();
    check_shrink(params.shrink)?;
    if params.k == 0 || params.s == 0 {
        return Err(Error::InvalidParameter("flat dimension and count must be positive".into()));
    }
    let d = input.d();
    let dim = params.k * params.s;
    let schedule = Schedule::default_for(dim, params.p, params.eps, d, params.shrink);
    let mut sizes = schedule.round_sizes();
    sizes.extend(std::iter::repeat(1).take(params.extra_samples(d)));
    let config = SamplerConfig::new(params.p, params.eps);
    let sub = input.adaptive(sizes.iter().sum(), &sizes, &config, seed)?;
    let a = input.dense()?;
    let coords = Coords::new(&a, &sub.basis)?;
    let p = params.p;

    let (cost, flats, searched) = if coords.m <= params.k {
        let all: Vec<usize> = (0..a.n()).collect();
        let f = vec![coords.fit(&all, params.k)];
        (coords.union_cost(&f, p).0, f, true)
    } else if dim <= MAX_SEARCH_DIM {
        let found = [coords.search(params.k, params.s, p), coords.partitions(params.k, params.s, p)]
            .into_iter()
            .flatten()
            .min_by(|x, y| x.0.total_cmp(&y.0));
        match found {
            Some((c, f)) => (c, f, true),
            None => {
                let all: Vec<usize> = (0..a.n()).collect();
                let f = vec![coords.fit(&all, dim)];
                (coords.union_cost(&f, p).0, f, false)
            }
        }
    } else {
        let all: Vec<usize> = (0..a.n()).collect();
        let f = vec![coords.fit(&all, dim)];
        (coords.union_cost(&f, p).0, f, false)
    };
    let flats = flats.iter().map(|f| coords.lift(&sub.basis, f)).collect::<Result<Vec<_>>>()?;
    let mut out = SummaryResult::new(Objective::Clustering(p), sub, cost);
    out.flats = flats;
    out.searched = searched;
    Ok(out)
}

/// `Σ_i min_j dist(A_i, F_j)^p`.
pub fn flats_cost(a: &DenseMatrix, flats: &[OrthoBasis], p: Power) -> Result<f64> {
    a.rows()
        .map(|r| {
            let best = flats
                .iter()
                .map(|f| f.residual(r).map(|x| x.norm()))
                .try_fold(if flats.is_empty() { norm(r) } else { f64::INFINITY }, |m, x| {
                    x.map(|x| m.min(x))
                })?;
            Ok(p.raise(best))
        })
        .sum()
}

/// Bucket count for the per-round CountSketch: `min(⌈4nk/α²⌉, 4096)`.
pub fn volmax_buckets(n: usize, k: usize, alpha: f64) -> usize {
    ((4.0 * n as f64 * k as f64 / (alpha * alpha)).ceil() as usize).clamp(1, 4096)
}

/// Per round: take the largest CountSketch row certified heavy against the
/// AMS estimate, otherwise an `L_{2,2}` sample.
pub fn volume_max_turnstile<'a>(input: impl Into<Input<'a>>, k: usize, alpha: f64, seed: u64) -> Result<SummaryResult> {
    let input = input.into();
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha must exceed 1, got {alpha}")));
    }
    let (n, d) = (input.n(), input.d());
    let mut config = SamplerConfig::l22(0.25);
    config.delta = 1.0 / (4.0 * k.max(1) as f64);
    let b = volmax_buckets(n, k, alpha);
    let thr = alpha * alpha / (4.0 * n as f64 * k.max(1) as f64);

    let mut sub = SampledSubspace::empty(d);
    let mut heavy_rounds = Vec::new();
    let mut reference = None;
    for j in 0..k as u64 {
        let mut cs = CountSketchM::new(n, d, config.cs_rows, b, derive_seed(seed, TAG_VM_CS, j))?;
        let mut ams = AmsM::new(n, d, 1.0 / 3.0, derive_seed(seed, TAG_VM_AMS, j))?;
        input.feed(&mut cs)?;
        input.feed(&mut ams)?;
        let p = sub.projector();
        let f = ams.norm_estimate(&p)?;
        let floor = RANK_FLOOR * *reference.get_or_insert(f.max(1.0));
        if f <= floor {
            sub.stop = StopReason::RankExhausted { round: j as usize };
            break;
        }
        let pcs = cs.project(&p)?;
        let heavy = (0..n)
            .map(|i| (i, pcs.query_norm(i)))
            .filter(|&(_, x)| x * x >= thr * f * f && x > 0.0)
            .fold(None, |best: Option<(usize, f64)>, (i, x)| match best {
                Some((_, y)) if y >= x => best,
                _ => Some((i, x)),
            });
        let (index, row) = match heavy {
            Some((i, _)) => (i, pcs.query(i)?),
            None => match input.bank(&config, derive_seed(seed, TAG_VM_BANK, j), &p)? {
                SampleOutcome::Sample { index, row, .. } => (index, row),
                SampleOutcome::Fail => {
                    sub.stop = StopReason::SamplerFailed { round: j as usize };
                    break;
                }
            },
        };
        heavy_rounds.push(heavy.is_some());
        sub.basis.push(&row)?;
        sub.rows.push(row);
        sub.indices.push(index);
    }
    let a = input.dense()?;
    let chosen: Vec<RowVec> = sub.indices.iter().map(|&i| RowVec(a.row(i).to_vec())).collect();
    let cost = if chosen.len() > d || chosen.len() < k { 0.0 } else { parallelepiped_volume(&chosen)? };
    let mut out = SummaryResult::new(Objective::Volume, sub, cost);
    out.heavy_rounds = heavy_rounds;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_flat(n, d, (0..n * d).map(|_| rng.gen_range(-8.0..8.0)).collect()).unwrap()
    }

    fn low_rank(n: usize, d: usize, r: usize, seed: u64) -> DenseMatrix {
        let l = random(n, r, seed);
        let rt = random(r, d, seed + 1000);
        l.matmul(&rt).unwrap()
    }

    #[test]
    fn rss_vanishes_on_low_rank() {
        for seed in 0..5 {
            let a = low_rank(12, 5, 2, seed);
            let out = row_subset_select(&a, 2, 0.25, seed).unwrap();
            if out.subspace.len() == 2 {
                assert!(out.cost <= 1e-8 * a.frobenius().powi(2), "{}", out.cost);
            }
        }
    }

    #[test]
    fn rss_with_no_rounds_is_total_mass() {
        let a = random(6, 3, 2);
        let out = row_subset_select(&a, 0, 0.25, 1).unwrap();
        assert!((out.cost - a.frobenius().powi(2)).abs() < 1e-9);
    }

    #[test]
    fn subspace_p2_matches_rss_rows() {
        let a = random(10, 4, 3);
        let r = row_subset_select(&a, 2, 0.25, 7).unwrap();
        let s = subspace_approx(&a, 2, Power::Two, 0.25, 7).unwrap();
        assert_eq!(r.subspace, s.subspace);
        assert!((r.cost - s.cost).abs() <= 1e-12 * r.cost);
    }

    #[test]
    fn costs_match_oracle() {
        for seed in 0..4 {
            let a = random(12, 5, seed);
            for p in [Power::One, Power::Two] {
                let out = subspace_approx(&a, 2, p, 0.25, seed).unwrap();
                let o = oracle::subspace_cost(&a, &out.subspace.rows, p);
                assert!((out.cost - o).abs() <= 1e-8 * o.max(1e-300), "{} vs {o}", out.cost);
            }
        }
    }

    #[test]
    fn stream_and_rows_inputs_agree_on_the_cost_function() {
        let a = random(8, 3, 5);
        let s = Stream::from_matrix(&a);
        let out = row_subset_select(&s, 2, 0.3, 5).unwrap();
        assert!(out.subspace.len() <= 2);
        let o = oracle::subspace_cost(&a, &out.subspace.rows, Power::Two);
        assert!((out.cost - o).abs() <= 1e-8 * o);
    }

    #[test]
    fn bicriteria_degenerate_schedule_is_plain() {
        let a = random(10, 4, 8);
        let plain = subspace_approx(&a, 2, Power::Two, 0.25, 3).unwrap();
        let sched = Schedule {
            outer: 1,
            inner: 2,
            batch: 1,
        };
        let bi = subspace_approx_bicriteria(&a, Power::Two, 0.25, sched, 3).unwrap();
        assert_eq!(plain.subspace, bi.subspace);
    }

    #[test]
    fn bicriteria_default_schedule() {
        let s = Schedule::default_for(2, Power::Two, 0.5, 6, DEFAULT_SHRINK);
        assert_eq!(s.outer, 3);
        assert_eq!(s.inner, 2);
        assert_eq!(s.batch, 6);
        let a = low_rank(16, 6, 2, 1);
        let out = subspace_approx_bicriteria(&a, Power::Two, 0.5, s, 1).unwrap();
        assert!(out.cost <= 1e-8 * a.frobenius().powi(2));
    }

    #[test]
    fn bicriteria_near_svd() {
        let mut ok = 0;
        for seed in 0..20 {
            let a = random(32, 6, seed);
            let s = Schedule::default_for(2, Power::Two, 0.5, 6, DEFAULT_SHRINK);
            let out = subspace_approx_bicriteria(&a, Power::Two, 0.5, s, seed).unwrap();
            let opt = oracle::best_rank_k_error(&a, 2, Power::Two).value;
            if out.cost <= 1.5 * opt * opt {
                ok += 1;
            }
        }
        assert!(ok >= 14, "{ok}");
    }

    #[test]
    fn cluster_exact_cover() {
        let mut a = DenseMatrix::zeros(12, 4);
        for i in 0..12 {
            let s = 1.0 + (i / 2) as f64;
            let row = if i % 2 == 0 { [s, 0.0, 0.0, 0.0] } else { [0.0, s, 0.0, 0.0] };
            a.row_mut(i).copy_from_slice(&row);
        }
        let params = ClusterParams::new(1, 2, Power::Two, 0.5);
        for seed in 0..3 {
            let out = projective_cluster_reduce(&a, &params, seed).unwrap();
            assert!(out.searched);
            assert!(out.cost <= 1e-6 * a.frobenius(), "{}", out.cost);
        }
    }

    #[test]
    fn cluster_cost_matches_flats_and_oracle() {
        for seed in 0..3 {
            let a = random(24, 6, seed);
            let params = ClusterParams::new(1, 2, Power::Two, 0.5);
            let out = projective_cluster_reduce(&a, &params, seed).unwrap();
            assert_eq!(out.flats.len(), 2);
            let ours = flats_cost(&a, &out.flats, Power::Two).unwrap();
            assert!((ours - out.cost).abs() <= 1e-8 * ours);
            let flats: Vec<Vec<Vec<f64>>> = out.flats.iter().map(|f| f.vectors().to_vec()).collect();
            let o = oracle::flats_cost(&a, &flats, Power::Two);
            assert!((o - out.cost).abs() <= 1e-8 * o);
            let best = oracle::best_flats_through_rows(&a, 2, 1, Power::Two).unwrap();
            assert!(out.cost <= 1.5 * best.cost, "{} vs {}", out.cost, best.cost);
        }
    }

    #[test]
    fn cluster_single_flat_is_no_worse_than_bicriteria() {
        let a = random(20, 5, 4);
        let params = ClusterParams::new(2, 1, Power::Two, 0.5);
        let out = projective_cluster_reduce(&a, &params, 9).unwrap();
        let sched = Schedule::default_for(2, Power::Two, 0.5, 5, DEFAULT_SHRINK);
        let bi = subspace_approx_bicriteria(&a, Power::Two, 0.5, sched, 9).unwrap();
        assert_eq!(out.subspace.indices[..bi.subspace.len()], bi.subspace.indices[..]);
        let candidate = subspace_cost(&a, &out.subspace.basis, Power::Two).unwrap();
        assert!(candidate <= bi.cost * (1.0 + 1e-9));
    }

    #[test]
    fn cluster_large_dim_reports_single_flat() {
        let a = random(10, 6, 4);
        let params = ClusterParams::new(2, 3, Power::Two, 0.5);
        let out = projective_cluster_reduce(&a, &params, 1).unwrap();
        assert!(!out.searched);
        assert_eq!(out.flats.len(), 1);
    }

    #[test]
    fn volmax_orthogonal_rows_among_zeros() {
        let mut a = DenseMatrix::zeros(10, 4);
        a.row_mut(2).copy_from_slice(&[3.0, 0.0, 0.0, 0.0]);
        a.row_mut(5).copy_from_slice(&[0.0, 0.0, 2.0, 0.0]);
        a.row_mut(7).copy_from_slice(&[0.0, 1.0, 0.0, 0.0]);
        for seed in 0..5 {
            let out = volume_max_turnstile(&a, 3, 2.0, seed).unwrap();
            let mut idx = out.subspace.indices.clone();
            idx.sort();
            assert_eq!(idx, vec![2, 5, 7]);
            assert!((out.cost - 6.0).abs() < 1e-9);
        }
    }

    #[test]
    fn volmax_single_round_bound() {
        let mut ok = 0;
        for seed in 0..30 {
            let a = random(12, 4, seed);
            let out = volume_max_turnstile(&a, 1, 2.0, seed).unwrap();
            let best = oracle::exact_volume_max(&a, 1).unwrap().volume;
            if best <= 4.0 * out.cost {
                ok += 1;
            }
        }
        assert!(ok >= 27, "{ok}");
    }

    #[test]
    fn volmax_rounds_beat_half_alpha() {
        let (mut good, mut total) = (0, 0);
        for seed in 0..20 {
            let a = random(16, 5, seed);
            let alpha = 2.0;
            let out = volume_max_turnstile(&a, 3, alpha, seed).unwrap();
            let mut basis = OrthoBasis::new(5);
            for r in &out.subspace.rows {
                let top = a.rows().map(|x| basis.residual(x).unwrap().norm()).fold(0.0, f64::max);
                total += 1;
                if r.norm() >= top / (2.0 * alpha) {
                    good += 1;
                }
                basis.push(r).unwrap();
            }
        }
        assert!(good * 100 >= 95 * total, "{good}/{total}");
    }

    #[test]
    fn volmax_rejects_small_alpha() {
        let a = random(4, 2, 0);
        assert!(volume_max_turnstile(&a, 1, 1.0, 0).is_err());
    }
}
