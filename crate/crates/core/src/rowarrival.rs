//! Volume maximization when rows arrive whole, one at a time.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::adaptive::{SampledSubspace, StopReason};
use crate::apps::{Objective, SummaryResult};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, parallelepiped_volume, DenseMatrix, OrthoBasis, RowVec};

/// Largest dimension the direction-grid kernel accepts.
pub const MAX_KERNEL_DIM: usize = 4;
/// Largest embedding dimension used before the kernel step.
pub const MAX_JL_THEN_KERNEL_DIM: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    points: Vec<RowVec>,
    d: usize,
}

impl PointSet {
    pub fn new(d: usize, points: Vec<RowVec>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| p.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: p.dim() });
        }
        Ok(PointSet { points, d })
    }

    pub fn from_matrix(a: &DenseMatrix) -> Self {
        PointSet {
            points: a.rows().map(|r| RowVec(r.to_vec())).collect(),
            d: a.d(),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[RowVec] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &RowVec {
        &self.points[i]
    }

    pub fn to_matrix(&self) -> DenseMatrix {
        DenseMatrix::from_flat(self.len(), self.d, self.points.iter().flat_map(|p| p.iter().copied()).collect())
            .expect("uniform dimension")
    }

    pub fn volume_of(&self, subset: &[usize]) -> Result<f64> {
        let rows: Vec<&[f64]> = subset.iter().map(|&i| &self.points[i][..]).collect();
        if rows.len() > self.d {
            return Ok(0.0);
        }
        parallelepiped_volume(&rows)
    }
}

/// Greedy over candidate positions `among` of `points`: repeatedly the
/// largest residual against the picks so far, lowest position on ties.
/// Stops early once every residual is negligible.
fn greedy_among(points: &[RowVec], among: &[usize], k: usize, d: usize) -> Vec<usize> {
    let mut basis = OrthoBasis::new(d);
    let mut picked = Vec::with_capacity(k);
    let scale = among.iter().map(|&i| norm(&points[i])).fold(0.0, f64::max);
    let mut res = vec![0.0; d];
    while picked.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for &i in among {
            if picked.contains(&i) {
                continue;
            }
            basis.residual_into(&points[i], &mut res);
            let r = norm(&res);
            if best.map_or(true, |(_, b)| r > b) {
                best = Some((i, r));
            }
        }
        match best {
            Some((i, r)) if r > 1e-12 * scale && r > 0.0 => {
                basis.push(&points[i]).expect("dimension checked");
                picked.push(i);
            }
            _ => break,
        }
    }
    picked
}

/// Greedy volume maximization; returns indices in pick order. Fewer than
/// `k` when the points span fewer dimensions.
pub fn greedy_volume_max(ps: &PointSet, k: usize) -> Vec<usize> {
    let all: Vec<usize> = (0..ps.len()).collect();
    greedy_among(&ps.points, &all, k, ps.d)
}

/// Greedy picks of size `m`, refilled from the leftover points by further
/// greedy passes when rank runs out. Result sorted.
fn greedy_fill(points: &[RowVec], among: &[usize], m: usize, d: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(m);
    let mut rest: Vec<usize> = among.to_vec();
    while out.len() < m && !rest.is_empty() {
        let pass = greedy_among(points, &rest, m - out.len(), d);
        if pass.is_empty() {
            out.extend(rest.iter().take(m - out.len()));
            break;
        }
        rest.retain(|i| !pass.contains(i));
        out.extend(pass);
    }
    out.sort_unstable();
    out
}

/// Merge-and-reduce over a `b`-ary tree; every node keeps a greedy core-set
/// of `c·k` points.
#[derive(Clone, Debug)]
pub struct CoresetTree {
    d: usize,
    k: usize,
    b: usize,
    c: usize,
    points: Vec<RowVec>,
    /// `levels[l]` holds up to `b` child core-sets; level 0 holds raw points.
    levels: Vec<Vec<Vec<usize>>>,
}

impl CoresetTree {
    pub fn new(d: usize, k: usize, b: usize, c: usize) -> Result<Self> {
        if b < 2 {
            return Err(Error::InvalidParameter(format!("branching factor must be at least 2, got {b}")));
        }
        if c == 0 {
            return Err(Error::InvalidParameter("core-set multiplier must be positive".into()));
        }
        Ok(CoresetTree {
            d,
            k,
            b,
            c,
            points: Vec::new(),
            levels: vec![Vec::new()],
        })
    }

    pub fn push(&mut self, p: RowVec) -> Result<()> {
        if p.dim() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: p.dim() });
        }
        let i = self.points.len();
        self.points.push(p);
        self.levels[0].push(vec![i]);
        let mut l = 0;
        while self.levels[l].len() == self.b {
            let children = std::mem::take(&mut self.levels[l]);
            let merged: Vec<usize> = children.into_iter().flatten().collect();
            let reduced = greedy_fill(&self.points, &merged, self.c * self.k, self.d);
            if self.levels.len() == l + 1 {
                self.levels.push(Vec::new());
            }
            self.levels[l + 1].push(reduced);
            l += 1;
        }
        Ok(())
    }

    /// Points still referenced by some node.
    pub fn live(&self) -> usize {
        self.levels.iter().flatten().map(Vec::len).sum()
    }

    /// Greedy over the union of every pending core-set.
    pub fn finish(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.levels.iter().flatten().flatten().copied().collect();
        all.sort_unstable();
        greedy_among(&self.points, &all, self.k, self.d)
    }
}

pub fn coreset_stream(ps: &PointSet, k: usize, b: usize, c: usize) -> Result<Vec<usize>> {
    let mut t = CoresetTree::new(ps.d, k, b, c)?;
    for p in &ps.points {
        t.push(p.clone())?;
    }
    Ok(t.finish())
}

/// Directions covering the unit sphere (or the half with nonnegative first
/// coordinate) at angular spacing at most about `step`.
pub fn sphere_grid(dim: usize, step: f64, half: bool) -> Vec<Vec<f64>> {
    use std::f64::consts::PI;
    match dim {
        0 => Vec::new(),
        1 => {
            if half {
                vec![vec![1.0]]
            } else {
                vec![vec![1.0], vec![-1.0]]
            }
        }
        2 => {
            let range = if half { PI } else { 2.0 * PI };
            let m = (range / step).ceil().max(1.0) as usize;
            (0..m)
                .map(|j| {
                    let t = j as f64 * range / m as f64;
                    vec![t.cos(), t.sin()]
                })
                .collect()
        }
        _ => {
            let range = if half { PI / 2.0 } else { PI };
            let m = (range / step).ceil().max(1.0) as usize;
            let mut out = Vec::new();
            for j in 0..=m {
                let phi = j as f64 * range / m as f64;
                let (c, s) = (phi.cos(), phi.sin());
                if s < 1e-12 {
                    let mut v = vec![0.0; dim];
                    v[0] = c.signum();
                    out.push(v);
                    continue;
                }
                for w in sphere_grid(dim - 1, step / s, false) {
                    let mut v = Vec::with_capacity(dim);
                    v.push(c);
                    v.extend(w.iter().map(|x| s * x));
                    out.push(v);
                }
            }
            out
        }
    }
}

/// One-pass directional-width kernel: for every grid direction, the first
/// point attaining the maximum and the minimum inner product.
#[derive(Clone, Debug)]
pub struct EpsKernel {
    d: usize,
    dirs: Vec<Vec<f64>>,
    hi: Vec<(f64, usize)>,
    lo: Vec<(f64, usize)>,
    seen: usize,
}

impl EpsKernel {
    pub fn new(d: usize, eps: f64) -> Result<Self> {
        if d > MAX_KERNEL_DIM {
            return Err(Error::UnsupportedDimension { dim: d, max: MAX_KERNEL_DIM });
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidParameter(format!("epsilon must lie in (0,1), got {eps}")));
        }
        let dirs = sphere_grid(d, eps, true);
        let m = dirs.len();
        Ok(EpsKernel {
            d,
            dirs,
            hi: vec![(f64::NEG_INFINITY, 0); m],
            lo: vec![(f64::INFINITY, 0); m],
            seen: 0,
        })
    }

    pub fn directions(&self) -> &[Vec<f64>] {
        &self.dirs
    }

    pub fn push(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: p.len() });
        }
        let i = self.seen;
        self.seen += 1;
        for (j, u) in self.dirs.iter().enumerate() {
            let x = dot(u, p);
            if x > self.hi[j].0 {
                self.hi[j] = (x, i);
            }
            if x < self.lo[j].0 {
                self.lo[j] = (x, i);
            }
        }
        Ok(())
    }

    /// Indices of the kept points, sorted.
    pub fn finish(&self) -> Vec<usize> {
        if self.seen == 0 {
            return Vec::new();
        }
        let mut out: Vec<usize> = self.hi.iter().chain(&self.lo).map(|&(_, i)| i).collect();
        if self.dirs.is_empty() {
            out.push(0);
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

pub fn eps_kernel(ps: &PointSet, eps: f64) -> Result<Vec<usize>> {
    let mut k = EpsKernel::new(ps.d, eps)?;
    for p in &ps.points {
        k.push(p)?;
    }
    Ok(k.finish())
}

/// Max minus min of `⟨u, p⟩` over the chosen points.
pub fn directional_width(ps: &PointSet, subset: &[usize], u: &[f64]) -> f64 {
    let (lo, hi) = subset
        .iter()
        .map(|&i| dot(&ps.points[i], u))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if subset.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Right multiplication by a `d × r` Gaussian matrix with variance `1/r`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianEmbed {
    g: DenseMatrix,
}

impl GaussianEmbed {
    /// `r = max(⌈ln(max(n,2))/C⌉, k+1)`.
    pub fn target_dim(n: usize, k: usize, c: f64) -> usize {
        (((n.max(2) as f64).ln() / c).ceil() as usize).max(k + 1).max(1)
    }

    pub fn new(d: usize, r: usize, seed: u64) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidParameter("embedding dimension must be positive".into()));
        }
        let normal = Normal::new(0.0, 1.0 / (r as f64).sqrt()).expect("finite scale");
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let data = (0..d * r).map(|_| normal.sample(&mut rng)).collect();
        Ok(GaussianEmbed {
            g: DenseMatrix::from_flat(d, r, data)?,
        })
    }

    pub fn identity(d: usize) -> Self {
        GaussianEmbed {
            g: DenseMatrix::identity(d),
        }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.g
    }

    pub fn r(&self) -> usize {
        self.g.d()
    }

    pub fn embed_point(&self, p: &[f64]) -> Result<RowVec> {
        if p.len() != self.g.n() {
            return Err(Error::DimensionMismatch { expected: self.g.n(), got: p.len() });
        }
        let mut out = vec![0.0; self.r()];
        for (l, &x) in p.iter().enumerate() {
            if x != 0.0 {
                out.iter_mut().zip(self.g.row(l)).for_each(|(o, g)| *o += x * g);
            }
        }
        Ok(RowVec(out))
    }

    pub fn embed(&self, ps: &PointSet) -> Result<PointSet> {
        let pts = ps.points.iter().map(|p| self.embed_point(p)).collect::<Result<Vec<_>>>()?;
        PointSet::new(self.r(), pts)
    }
}

pub fn jl_embed(ps: &PointSet, k: usize, c: f64, seed: u64) -> Result<PointSet> {
    GaussianEmbed::new(ps.d, GaussianEmbed::target_dim(ps.len(), k, c), seed)?.embed(ps)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RowArrivalMode {
    Coreset { branch: usize, c: usize },
    ExpD { eps: f64 },
    JlThenExpD { eps: f64, c: f64, seed: u64 },
}

impl RowArrivalMode {
    pub fn coreset() -> Self {
        RowArrivalMode::Coreset { branch: 4, c: 3 }
    }

    pub fn exp_d() -> Self {
        RowArrivalMode::ExpD { eps: 0.25 }
    }

    pub fn jl_then_exp_d(c: f64, seed: u64) -> Self {
        RowArrivalMode::JlThenExpD { eps: 0.25, c, seed }
    }
}

fn kernel_greedy(ps: &PointSet, k: usize, eps: f64) -> Result<Vec<usize>> {
    let kept = eps_kernel(ps, eps)?;
    Ok(greedy_among(&ps.points, &kept, k, ps.d))
}

/// Chosen indices refer to rows of `ps`; the cost is their volume.
pub fn volume_max_row_arrival(ps: &PointSet, k: usize, mode: RowArrivalMode) -> Result<SummaryResult> {
    let picked = match mode {
        RowArrivalMode::Coreset { branch, c } => coreset_stream(ps, k, branch, c)?,
        RowArrivalMode::ExpD { eps } => kernel_greedy(ps, k, eps)?,
        RowArrivalMode::JlThenExpD { eps, c, seed } => {
            let r = GaussianEmbed::target_dim(ps.len(), k, c).min(MAX_JL_THEN_KERNEL_DIM);
            if k > r {
                return Err(Error::InvalidParameter(format!(
                    "k = {k} exceeds the embedding dimension {r} of jl_then_exp_d"
                )));
            }
            let embedded = GaussianEmbed::new(ps.d, r, seed)?.embed(ps)?;
            kernel_greedy(&embedded, k, eps)?
        }
    };
    let mut sub = SampledSubspace::empty(ps.d);
    for &i in &picked {
        sub.basis.push(&ps.points[i])?;
        sub.rows.push(ps.points[i].clone());
        sub.indices.push(i);
    }
    if picked.len() < k {
        sub.stop = StopReason::RankExhausted { round: picked.len() };
    }
    let cost = if picked.len() < k { 0.0 } else { ps.volume_of(&picked)? };
    Ok(SummaryResult {
        objective: Objective::Volume,
        subspace: sub,
        cost,
        flats: Vec::new(),
        searched: false,
        heavy_rounds: Vec::new(),
    })
}
