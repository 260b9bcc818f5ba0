//! Runners for the acceptance criteria, shared by the CLI and the test
//! suite. Each returns one [`Report`]; `trials` overrides the default count
//! and statistical thresholds scale with it.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adaptive::{adaptive_sample_dense, StopReason};
use crate::apps::{row_subset_select, subspace_cost, volume_max_turnstile};
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, OrthoBasis, Power, Projector};
use crate::oracle::{
    all_volumes, best_rank_k_error, exact_adaptive_distribution, exact_lp2_distribution, exact_volume_max,
    exact_volume_sampling, tv_distance,
};
use crate::randomness::derive_seed;
use crate::rowarrival::{directional_width, eps_kernel, greedy_volume_max, GaussianEmbed, PointSet};
use crate::samplers::{DenseSampler, SamplerConfig};
use crate::sketches::{AmsM, CountSketchM, EstimatorM, LinearSketch};
use crate::stream::TurnstileUpdate;

pub const DEFAULT_SEED: u64 = 0x5EED;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Timing {
    Total,
    /// The limit applies to each instance separately.
    PerInstance,
}

#[derive(Clone, Copy, Debug)]
pub struct Criterion {
    pub id: usize,
    pub name: &'static str,
    pub trials: usize,
    pub limit: Duration,
    pub timing: Timing,
}

const fn crit(id: usize, name: &'static str, trials: usize, secs: u64, timing: Timing) -> Criterion {
    Criterion {
        id,
        name,
        trials,
        limit: Duration::from_secs(secs),
        timing,
    }
}

pub const CRITERIA: [Criterion; 12] = [
    crit(1, "linearity", 100, 5, Timing::Total),
    crit(2, "commutativity", 50, 10, Timing::Total),
    crit(3, "tv-l22", TV_TRIALS, 120, Timing::PerInstance),
    crit(4, "tv-l12", TV_TRIALS, 180, Timing::PerInstance),
    crit(5, "adaptive-tv", 50_000, 600, Timing::Total),
    crit(6, "residual-distortion", 100, 120, Timing::Total),
    crit(7, "rss", 100, 120, Timing::Total),
    crit(8, "volmax-turnstile", 100, 180, Timing::Total),
    crit(9, "greedy-bound", 200, 60, Timing::Total),
    crit(10, "eps-kernel", 360, 10, Timing::Total),
    crit(11, "jl-volume", 50, 180, Timing::Total),
    crit(12, "volume-sampling", 50, 30, Timing::Total),
];

pub fn criterion(name: &str) -> Option<&'static Criterion> {
    CRITERIA.iter().find(|c| c.name == name)
}

pub fn suite_names() -> Vec<&'static str> {
    CRITERIA.iter().map(|c| c.name).collect()
}

#[derive(Clone, Debug)]
pub struct Report {
    pub id: usize,
    pub name: &'static str,
    /// The measured statistic met its threshold.
    pub statistic_ok: bool,
    /// Key/value pairs describing what was measured.
    pub measured: Vec<(String, String)>,
    pub elapsed: Duration,
    /// The duration compared against the limit.
    pub timed: Duration,
    pub limit: Duration,
}

impl Report {
    pub fn within_time(&self) -> bool {
        self.timed <= self.limit
    }

    pub fn passed(&self) -> bool {
        self.statistic_ok && self.within_time()
    }

    /// `id name PASS|FAIL key=value ...`
    pub fn line(&self) -> String {
        let mut s = format!("{} {} {}", self.id, self.name, if self.passed() { "PASS" } else { "FAIL" });
        for (k, v) in &self.measured {
            write!(s, " {k}={v}").unwrap();
        }
        write!(
            s,
            " time={:.2}s limit={}s{}",
            self.timed.as_secs_f64(),
            self.limit.as_secs(),
            if self.timed == self.elapsed { "" } else { "/instance" }
        )
        .unwrap();
        s
    }
}

struct Outcome {
    ok: bool,
    measured: Vec<(String, String)>,
    timed: Option<Duration>,
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

pub fn run(name: &str, trials: Option<usize>, seed: u64) -> Result<Report> {
    let c = criterion(name)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown suite {name}; known: {}", suite_names().join(", "))))?;
    let t = trials.unwrap_or(c.trials);
    if t == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    let start = Instant::now();
    let out = match c.id {
        1 => linearity(t, seed),
        2 => commutativity(t, seed),
        3 => tv_single(Power::Two, t, seed),
        4 => tv_single(Power::One, t, seed),
        5 => adaptive_tv(t, seed),
        6 => residual_distortion(t, seed),
        7 => rss(t, seed),
        8 => volmax_turnstile(t, seed),
        9 => greedy_bound(t, seed),
        10 => kernel_width(t, seed),
        11 => jl_volume(t, seed),
        _ => volume_sampling(t, seed),
    }?;
    let elapsed = start.elapsed();
    Ok(Report {
        id: c.id,
        name: c.name,
        statistic_ok: out.ok,
        measured: out.measured,
        elapsed,
        timed: out.timed.unwrap_or(elapsed),
        limit: c.limit,
    })
}

pub fn run_all(seed: u64) -> Result<Vec<Report>> {
    CRITERIA.iter().map(|c| run(c.name, None, seed)).collect()
}

/// `⌈frac·t⌉` successes needed out of `t`.
fn needed(num: usize, den: usize, t: usize) -> usize {
    (num * t).div_ceil(den)
}

fn rng(seed: u64, tag: u64, i: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, i))
}

fn uniform_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize, lo: f64, hi: f64) -> DenseMatrix {
    DenseMatrix::from_flat(n, d, (0..n * d).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

struct Trio {
    ams: AmsM,
    cs: CountSketchM,
    est: EstimatorM,
}

impl Trio {
    fn new(n: usize, d: usize, seed: u64) -> Result<Self> {
        Ok(Trio {
            ams: AmsM::new(n, d, 0.3, derive_seed(seed, 1, 0))?,
            cs: CountSketchM::new(n, d, 5, 64, derive_seed(seed, 2, 0))?,
            est: EstimatorM::new(n, d, derive_seed(seed, 3, 0))?,
        })
    }

    fn ingest(&mut self, u: &[TurnstileUpdate]) -> Result<()> {
        self.ams.ingest(u)?;
        self.cs.ingest(u)?;
        self.est.ingest(u)
    }

    fn update_row(&mut self, i: usize, r: &[f64]) -> Result<()> {
        self.ams.update_row(i, r)?;
        self.cs.update_row(i, r)?;
        self.est.update_row(i, r)
    }

    fn merge(&mut self, o: &Trio) -> Result<()> {
        self.ams.merge(&o.ams)?;
        self.cs.merge(&o.cs)?;
        self.est.merge(&o.est)
    }

    fn cells(&self) -> Vec<f64> {
        let mut v = self.ams.dense_cells();
        v.extend(self.cs.dense_cells());
        v.extend(self.est.dense_cells());
        v
    }

    fn projected_cells(&self, p: &Projector) -> Result<Vec<f64>> {
        let mut v = self.ams.projected_cells(p)?;
        v.extend(self.cs.project(p)?.dense_cells());
        for j in 0..self.est.level_count() {
            v.extend(self.est.level_sketch(j).project(p)?.dense_cells());
        }
        Ok(v)
    }
}

fn linearity(t: usize, seed: u64) -> Result<Outcome> {
    let (n, d) = (64, 8);
    let worst = (0..t as u64)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut r = rng(seed, 0x101, i);
            let len = r.gen_range(200..600);
            let updates: Vec<TurnstileUpdate> = (0..len)
                .map(|_| {
                    let delta = r.gen_range(1..=20) as f64 * if r.gen_bool(0.5) { 1.0 } else { -1.0 };
                    TurnstileUpdate::new(r.gen_range(0..n), r.gen_range(0..d), delta)
                })
                .collect();
            let cut = r.gen_range(0..=len);
            let sk = derive_seed(seed, 0x102, i);
            let mut whole = Trio::new(n, d, sk)?;
            whole.ingest(&updates)?;
            let mut left = Trio::new(n, d, sk)?;
            left.ingest(&updates[..cut])?;
            let mut right = Trio::new(n, d, sk)?;
            right.ingest(&updates[cut..])?;
            left.merge(&right)?;
            Ok(max_abs_diff(&left.cells(), &whole.cells()))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(Outcome {
        ok: worst <= 1e-9,
        measured: vec![kv("splits", t), kv("max_cell_diff", format!("{worst:.3e}")), kv("tol", "1e-9")],
        timed: None,
    })
}

fn random_projector(r: &mut ChaCha8Rng, d: usize, i: u64) -> Projector {
    if i % 2 == 0 {
        let rows: Vec<Vec<f64>> = (0..2).map(|_| (0..d).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        Projector::complement_of(&OrthoBasis::from_rows(d, &rows).expect("dimension"))
    } else {
        Projector::Matrix(uniform_matrix(r, d, d, -1.0, 1.0))
    }
}

fn commutativity(t: usize, seed: u64) -> Result<Outcome> {
    let (n, d) = (16, 6);
    let worst = (0..t as u64)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut r = rng(seed, 0x201, i);
            let a = DenseMatrix::from_flat(n, d, (0..n * d).map(|_| r.gen_range(-8..=8) as f64).collect())?;
            let p = random_projector(&mut r, d, i);
            let sk = derive_seed(seed, 0x202, i);
            let mut of_a = Trio::new(n, d, sk)?;
            of_a.ingest(&crate::stream::Stream::from_matrix(&a).updates)?;
            let ap = a.project(&p)?;
            let mut of_ap = Trio::new(n, d, sk)?;
            for (row, x) in ap.rows().enumerate() {
                of_ap.update_row(row, x)?;
            }
            let mut want = of_ap.ams.dense_cells();
            want.extend(of_ap.cs.dense_cells());
            for j in 0..of_ap.est.level_count() {
                want.extend(of_ap.est.level_sketch(j).dense_cells());
            }
            Ok(max_abs_diff(&of_a.projected_cells(&p)?, &want))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(Outcome {
        ok: worst <= 1e-9,
        measured: vec![kv("pairs", t), kv("max_cell_diff", format!("{worst:.3e}")), kv("tol", "1e-9")],
        timed: None,
    })
}

/// The five fixed 8×4 instances of the sampler TV checks.
pub fn tv_instances() -> Vec<(DenseMatrix, Projector)> {
    let m = |rows: [[f64; 4]; 8]| DenseMatrix::from_rows(&rows).expect("shape");
    let mut two_one = [[0.0; 4]; 8];
    two_one[0][0] = 2.0;
    two_one[1][1] = 1.0;
    let mixed = m([
        [3.0, -1.0, 0.0, 2.0],
        [-8.0, 4.0, 1.0, 0.0],
        [0.0, 0.0, 5.0, -5.0],
        [1.0, 1.0, 1.0, 1.0],
        [7.0, 0.0, -2.0, 3.0],
        [0.0, -6.0, 0.0, 0.0],
        [2.0, 2.0, -3.0, 4.0],
        [-1.0, 0.0, 0.0, 8.0],
    ]);
    let skewed = m([
        [8.0, 8.0, -8.0, 8.0],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, -1.0, 0.0, 0.0],
        [0.0, 0.0, 2.0, 0.0],
        [0.0, 0.0, 0.0, -2.0],
        [1.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
        [-3.0, 0.0, 1.0, 0.0],
    ]);
    let dense = m([
        [5.0, -3.0, 2.0, -7.0],
        [-4.0, 6.0, -1.0, 3.0],
        [2.0, 2.0, 8.0, -2.0],
        [-6.0, -5.0, 4.0, 1.0],
        [3.0, 7.0, -6.0, 5.0],
        [-2.0, 1.0, 3.0, -8.0],
        [8.0, -4.0, -5.0, 6.0],
        [1.0, -7.0, 7.0, 4.0],
    ]);
    let away = OrthoBasis::from_rows(4, &[[1.0, 1.0, 0.0, 0.0]]).expect("dimension");
    // orthogonal projection onto span{e1 + e3, e2, e4} as an explicit matrix
    let onto = OrthoBasis::from_rows(4, &[[1.0, 0.0, -1.0, 0.0]]).expect("dimension");
    let explicit = Projector::complement_of(&onto).to_matrix(4);
    vec![
        (m(two_one), Projector::Identity),
        (mixed.clone(), Projector::Identity),
        (skewed, Projector::Identity),
        (dense, Projector::complement_of(&away)),
        (mixed, Projector::Matrix(explicit)),
    ]
}

/// Tallies `target` accepted single-instance samples, in seed order.
fn tally_accepted(
    a: &DenseMatrix,
    p: &Projector,
    config: &SamplerConfig,
    target: usize,
    seed: u64,
) -> Result<(HashMap<Vec<usize>, u64>, u64)> {
    const CHUNK: u64 = 8192;
    let mut counts = HashMap::new();
    let (mut accepted, mut next) = (0usize, 0u64);
    while accepted < target {
        let outs = (next..next + CHUNK)
            .into_par_iter()
            .map_init(DenseSampler::new, |s, j| {
                s.sample(a, p, config, derive_seed(seed, 0x301, j)).map(|o| o.index())
            })
            .collect::<Result<Vec<_>>>()?;
        for (j, o) in outs.into_iter().enumerate() {
            if let Some(i) = o {
                if accepted < target {
                    *counts.entry(vec![i]).or_insert(0) += 1;
                    accepted += 1;
                    if accepted == target {
                        next += j as u64 + 1;
                        return Ok((counts, next));
                    }
                }
            }
        }
        next += CHUNK;
    }
    Ok((counts, next))
}

/// The stated budget at the default trial count, tighter than the formula.
const TV_BUDGET_AT_DEFAULT: f64 = 0.121;
const TV_TRIALS: usize = 50_000;

fn tv_single(power: Power, t: usize, seed: u64) -> Result<Outcome> {
    let eps = 0.1;
    let mut budget = eps + 3.0 * (200f64.ln() / t as f64).sqrt();
    if t == TV_TRIALS {
        budget = budget.min(TV_BUDGET_AT_DEFAULT);
    }
    let config = SamplerConfig::new(power, eps);
    let mut measured = vec![kv("T", t), kv("budget", format!("{budget:.4}"))];
    let (mut ok, mut slowest) = (true, Duration::ZERO);
    for (idx, (a, p)) in tv_instances().iter().enumerate() {
        let start = Instant::now();
        let exact = exact_lp2_distribution(a, p, power)?;
        let (counts, tried) = tally_accepted(a, p, &config, t, derive_seed(seed, 0x300 + power.as_int() as u64, idx as u64))?;
        let tv = tv_distance(&exact, &counts);
        slowest = slowest.max(start.elapsed());
        ok &= tv <= budget;
        measured.push(kv(&format!("tv{idx}"), format!("{tv:.4}")));
        measured.push(kv(&format!("accept{idx}"), format!("{:.4}", t as f64 / tried as f64)));
    }
    Ok(Outcome {
        ok,
        measured,
        timed: Some(slowest),
    })
}

fn adaptive_tv(t: usize, seed: u64) -> Result<Outcome> {
    let eps = 0.1;
    let k = 2;
    let budget = eps + 3.0 * ((200f64.ln() + 2.0 * 3f64.ln()) / t as f64).sqrt();
    let config = SamplerConfig::l22(eps);
    let instances = [
        DenseMatrix::from_rows(&[[10.0, 0.0], [10.0, 0.0], [0.0, 1.0]])?,
        DenseMatrix::identity(4),
    ];
    let mut measured = vec![kv("T", t), kv("budget", format!("{budget:.4}"))];
    let mut ok = true;
    for (idx, a) in instances.iter().enumerate() {
        let exact = exact_adaptive_distribution(a, k, Power::Two)?;
        let runs = (0..t as u64)
            .into_par_iter()
            .map(|j| {
                let s = adaptive_sample_dense(a, k, &[1; 2], &config, derive_seed(seed, 0x501 + idx as u64, j))?;
                let mut tuple = s.indices;
                if matches!(s.stop, StopReason::SamplerFailed { .. }) {
                    tuple.push(usize::MAX);
                }
                Ok(tuple)
            })
            .collect::<Result<Vec<_>>>()?;
        let fails = runs.iter().filter(|r| r.last() == Some(&usize::MAX)).count();
        let mut counts = HashMap::new();
        for r in runs {
            *counts.entry(r).or_insert(0u64) += 1;
        }
        let tv = tv_distance(&exact, &counts);
        ok &= tv <= budget;
        measured.push(kv(&format!("tv{idx}"), format!("{tv:.4}")));
        measured.push(kv(&format!("fails{idx}"), fails));
    }
    Ok(Outcome {
        ok,
        measured,
        timed: None,
    })
}

fn residual_distortion(t: usize, seed: u64) -> Result<Outcome> {
    let eps = 0.125;
    let config = SamplerConfig::l22(eps);
    let hits = (0..t as u64)
        .into_par_iter()
        .map(|i| -> Result<bool> {
            let a = uniform_matrix(&mut rng(seed, 0x601, i), 16, 5, -1.0, 1.0);
            let s = adaptive_sample_dense(&a, 2, &[1, 1], &config, derive_seed(seed, 0x602, i))?;
            if s.stop != StopReason::Completed {
                return Ok(false);
            }
            let truth: Vec<&[f64]> = s.indices.iter().map(|&j| a.row(j)).collect();
            let tb = OrthoBasis::from_rows(5, &truth)?;
            let noisy = subspace_cost(&a, &s.basis, Power::Two)?.sqrt();
            let exact = subspace_cost(&a, &tb, Power::Two)?.sqrt();
            Ok((noisy - exact).abs() <= 2.0 * eps * exact)
        })
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&b| b)
        .count();
    let need = needed(75, 100, t);
    Ok(Outcome {
        ok: hits >= need,
        measured: vec![kv("within", format!("{hits}/{t}")), kv("needed", need)],
        timed: None,
    })
}

fn rss(t: usize, seed: u64) -> Result<Outcome> {
    let hits = (0..t as u64)
        .into_par_iter()
        .map(|i| -> Result<bool> {
            let a = uniform_matrix(&mut rng(seed, 0x701, i), 32, 6, -1.0, 1.0);
            let out = row_subset_select(&a, 2, 0.1, derive_seed(seed, 0x702, i))?;
            let opt = best_rank_k_error(&a, 2, Power::Two).value;
            Ok(out.cost <= 96.0 * opt * opt)
        })
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&b| b)
        .count();
    let need = needed(55, 100, t);
    Ok(Outcome {
        ok: hits >= need,
        measured: vec![kv("held", format!("{hits}/{t}")), kv("needed", need)],
        timed: None,
    })
}

fn volmax_turnstile(t: usize, seed: u64) -> Result<Outcome> {
    let (k, alpha) = (3, 2.0);
    let bound = alpha * alpha * alpha * 6.0;
    let ratios = (0..t as u64)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let a = uniform_matrix(&mut rng(seed, 0x801, i), 16, 5, -1.0, 1.0);
            let out = volume_max_turnstile(&a, k, alpha, derive_seed(seed, 0x802, i))?;
            let opt = exact_volume_max(&a, k)?.volume;
            Ok(if out.cost > 0.0 { opt / out.cost } else { f64::INFINITY })
        })
        .collect::<Result<Vec<f64>>>()?;
    let hits = ratios.iter().filter(|&&r| r <= bound).count();
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    let need = needed(55, 100, t);
    Ok(Outcome {
        ok: hits >= need,
        measured: vec![
            kv("held", format!("{hits}/{t}")),
            kv("needed", need),
            kv("bound", bound),
            kv("worst_ratio", format!("{worst:.3}")),
        ],
        timed: None,
    })
}

fn greedy_bound(t: usize, seed: u64) -> Result<Outcome> {
    let results = (0..t as u64)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut r = rng(seed, 0x901, i);
            let k = 1 + (i % 3) as usize;
            let n = r.gen_range(k..=12);
            let d = r.gen_range(k..=6);
            let a = uniform_matrix(&mut r, n, d, -1.0, 1.0);
            let ps = PointSet::from_matrix(&a);
            let g = ps.volume_of(&greedy_volume_max(&ps, k))?;
            let opt = exact_volume_max(&a, k)?.volume;
            let fact: f64 = (1..=k).map(|x| x as f64).product();
            Ok(opt / (fact * g))
        })
        .collect::<Result<Vec<f64>>>()?;
    let failures = results.iter().filter(|&&x| x > 1.0 + 1e-9).count();
    let worst = results.iter().cloned().fold(0.0, f64::max);
    Ok(Outcome {
        ok: failures == 0,
        measured: vec![
            kv("instances", t),
            kv("failures", failures),
            kv("max_ratio_over_kfact", format!("{worst:.4}")),
        ],
        timed: None,
    })
}

/// `n` points uniform in the unit disk.
pub fn disk_points(n: usize, seed: u64) -> PointSet {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n {
        let (x, y): (f64, f64) = (r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
        if x * x + y * y <= 1.0 {
            pts.push(crate::linalg::RowVec(vec![x, y]));
        }
    }
    PointSet::new(2, pts).expect("dimension")
}

fn kernel_width(t: usize, seed: u64) -> Result<Outcome> {
    let ps = disk_points(1000, derive_seed(seed, 0xA01, 0));
    let q = eps_kernel(&ps, 0.25)?;
    let all: Vec<usize> = (0..ps.len()).collect();
    let worst = (0..t)
        .map(|i| {
            let th = 2.0 * PI * i as f64 / t as f64;
            let u = [th.cos(), th.sin()];
            directional_width(&ps, &q, &u) / directional_width(&ps, &all, &u)
        })
        .fold(f64::INFINITY, f64::min);
    Ok(Outcome {
        ok: worst >= 0.75 && q.len() <= 64,
        measured: vec![
            kv("directions", t),
            kv("min_width_ratio", format!("{worst:.4}")),
            kv("kernel_size", q.len()),
            kv("max_size", 64),
        ],
        timed: None,
    })
}

fn jl_volume(t: usize, seed: u64) -> Result<Outcome> {
    let (k, c) = (3, 2.0);
    let a = uniform_matrix(&mut rng(seed, 0xB01, 0), 14, 10, -1.0, 1.0);
    let pre = all_volumes(&a, k)?;
    let opt_pre = pre.iter().map(|x| x.1).fold(0.0, f64::max);
    let shrink_bound = 2f64.powi(k as i32);
    let grow_bound = ((2.0 * c * k as f64).sqrt() + 2.0).powi(k as i32);
    let r = GaussianEmbed::target_dim(a.n(), k, c);
    let ps = PointSet::from_matrix(&a);
    let good = (0..t as u64)
        .into_par_iter()
        .map(|i| -> Result<bool> {
            let e = GaussianEmbed::new(a.d(), r, derive_seed(seed, 0xB02, i))?.embed(&ps)?;
            let post = all_volumes(&e.to_matrix(), k)?;
            let opt_post = post.iter().map(|x| x.1).fold(0.0, f64::max);
            let shrink_ok = opt_pre <= shrink_bound * opt_post;
            let grow_ok = pre.iter().zip(&post).all(|(b, a)| a.1 <= grow_bound * b.1 + 1e-12 * opt_pre);
            Ok(shrink_ok && grow_ok)
        })
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&b| b)
        .count();
    let need = needed(45, 50, t);
    Ok(Outcome {
        ok: good >= need,
        measured: vec![
            kv("held", format!("{good}/{t}")),
            kv("needed", need),
            kv("r", r),
            kv("grow_bound", format!("{grow_bound:.2}")),
        ],
        timed: None,
    })
}

fn volume_sampling(t: usize, seed: u64) -> Result<Outcome> {
    let k = 2;
    let results = (0..t as u64)
        .into_par_iter()
        .map(|i| -> Result<(usize, f64)> {
            let a = uniform_matrix(&mut rng(seed, 0xC01, i), 6, 3, -1.0, 1.0);
            let q = exact_adaptive_distribution(&a, k, Power::Two)?.unordered();
            let p = exact_volume_sampling(&a, k)?;
            let mut bad = 0;
            let mut worst: f64 = 0.0;
            for (s, &pt) in p.support.iter().zip(&p.probs) {
                let qt = q.prob(s);
                if qt > 2.0 * pt * (1.0 + 1e-9) + 1e-15 {
                    bad += 1;
                }
                if pt > 0.0 {
                    worst = worst.max(qt / pt);
                }
            }
            Ok((bad, worst))
        })
        .collect::<Result<Vec<_>>>()?;
    let failures: usize = results.iter().map(|x| x.0).sum();
    let worst = results.iter().map(|x| x.1).fold(0.0, f64::max);
    Ok(Outcome {
        ok: failures == 0,
        measured: vec![
            kv("instances", t),
            kv("failures", failures),
            kv("max_q_over_p", format!("{worst:.4}")),
            kv("bound", 2),
        ],
        timed: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut names = suite_names();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 12);
        assert!(criterion("nope").is_none());
        assert!(run("nope", None, 1).is_err());
    }

    #[test]
    fn needed_rounds_up() {
        assert_eq!(needed(75, 100, 100), 75);
        assert_eq!(needed(75, 100, 10), 8);
        assert_eq!(needed(45, 50, 50), 45);
    }

    #[test]
    fn small_runs_produce_lines() {
        let r = run("greedy-bound", Some(12), 3).unwrap();
        assert!(r.line().starts_with("9 greedy-bound PASS"), "{}", r.line());
        let r = run("linearity", Some(3), 3).unwrap();
        assert!(r.passed(), "{}", r.line());
    }

    #[test]
    fn tv_instances_have_expected_laws() {
        let inst = tv_instances();
        assert_eq!(inst.len(), 5);
        let (a, p) = &inst[0];
        let e = exact_lp2_distribution(a, p, Power::Two).unwrap();
        assert!((e.prob(&[0]) - 0.8).abs() < 1e-12);
        let e = exact_lp2_distribution(a, p, Power::One).unwrap();
        assert!((e.prob(&[0]) - 2.0 / 3.0).abs() < 1e-12);
        for (a, _) in &inst {
            assert_eq!((a.n(), a.d()), (8, 4));
            assert!(a.as_slice().iter().all(|x| x.abs() <= 8.0));
        }
    }
}
