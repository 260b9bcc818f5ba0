//! Exact, slow reference computations. Everything here enumerates or uses a
//! dense factorization; nothing is streaming.

use std::collections::HashMap;

use itertools::Itertools;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{norm, DenseMatrix, OrthoBasis, Power, Projector};

/// Residual Frobenius norm at or below this fraction of `‖A‖_F` ends an
/// adaptive path early.
pub const ZERO_RESIDUAL: f64 = 1e-9;

pub const MAX_ADAPTIVE_N: usize = 10;
pub const MAX_ADAPTIVE_K: usize = 3;
pub const MAX_SUBSETS: u128 = 1_000_000;

/// A probability table over index tuples. Tuples from paths that ran out of
/// rank early are shorter than the rest.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactDistribution {
    pub support: Vec<Vec<usize>>,
    pub probs: Vec<f64>,
}

impl ExactDistribution {
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn prob(&self, tuple: &[usize]) -> f64 {
        self.support
            .iter()
            .zip(&self.probs)
            .filter(|(t, _)| t.as_slice() == tuple)
            .map(|(_, &p)| p)
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn as_map(&self) -> HashMap<Vec<usize>, f64> {
        let mut m = HashMap::new();
        for (t, &p) in self.support.iter().zip(&self.probs) {
            *m.entry(t.clone()).or_insert(0.0) += p;
        }
        m
    }

    /// Sums ordered tuples that share the same index set.
    pub fn unordered(&self) -> ExactDistribution {
        let mut m: HashMap<Vec<usize>, f64> = HashMap::new();
        for (t, &p) in self.support.iter().zip(&self.probs) {
            let mut s = t.clone();
            s.sort_unstable();
            *m.entry(s).or_insert(0.0) += p;
        }
        let mut pairs: Vec<_> = m.into_iter().collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        let (support, probs) = pairs.into_iter().unzip();
        ExactDistribution { support, probs }
    }
}

/// `½ Σ |p(t) − count(t)/total|` over the union of supports.
pub fn tv_distance(p: &ExactDistribution, counts: &HashMap<Vec<usize>, u64>) -> f64 {
    let total: u64 = counts.values().sum();
    let exact = p.as_map();
    if total == 0 {
        return if exact.is_empty() { 0.0 } else { 1.0 };
    }
    let t = total as f64;
    let mut s = 0.0;
    for (k, &q) in &exact {
        s += (q - counts.get(k).copied().unwrap_or(0) as f64 / t).abs();
    }
    for (k, &c) in counts {
        if !exact.contains_key(k) {
            s += c as f64 / t;
        }
    }
    0.5 * s
}

fn row_weights(a: &DenseMatrix, p: &Projector, power: Power) -> Vec<f64> {
    a.rows().map(|r| power.raise(norm(&p.apply(r)))).collect()
}

/// `prob(i) = ‖A_i P‖^p / ‖AP‖_{p,2}^p`.
pub fn exact_lp2_distribution(a: &DenseMatrix, p: &Projector, power: Power) -> Result<ExactDistribution> {
    p.check_dim(a.d())?;
    let w = row_weights(a, p, power);
    let total: f64 = w.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::UndefinedDistribution("matrix is zero after projection"));
    }
    Ok(ExactDistribution {
        support: (0..a.n()).map(|i| vec![i]).collect(),
        probs: w.iter().map(|x| x / total).collect(),
    })
}

/// Law of the ideal adaptive process over ordered `k`-tuples: each round
/// picks a row with probability proportional to the `p`-th power of its
/// distance to the span of the rows already picked.
pub fn exact_adaptive_distribution(a: &DenseMatrix, k: usize, power: Power) -> Result<ExactDistribution> {
    if a.n() > MAX_ADAPTIVE_N || k > MAX_ADAPTIVE_K {
        return Err(Error::SizeGuard(format!(
            "adaptive enumeration needs n <= {MAX_ADAPTIVE_N} and k <= {MAX_ADAPTIVE_K}, got n = {}, k = {k}",
            a.n()
        )));
    }
    let scale = a.frobenius();
    if scale == 0.0 {
        return Err(Error::UndefinedDistribution("zero matrix"));
    }
    let mut out = ExactDistribution {
        support: Vec::new(),
        probs: Vec::new(),
    };
    let basis = OrthoBasis::with_tolerance(a.d(), 1e-12);
    walk(a, k, power, scale, &basis, &mut Vec::new(), 1.0, &mut out);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn walk(
    a: &DenseMatrix,
    k: usize,
    power: Power,
    scale: f64,
    basis: &OrthoBasis,
    prefix: &mut Vec<usize>,
    mass: f64,
    out: &mut ExactDistribution,
) {
    if prefix.len() == k {
        out.support.push(prefix.clone());
        out.probs.push(mass);
        return;
    }
    let residuals: Vec<f64> = a.rows().map(|r| norm(&basis.residual(r).unwrap())).collect();
    let frob = residuals.iter().map(|x| x * x).sum::<f64>().sqrt();
    if frob <= ZERO_RESIDUAL * scale {
        out.support.push(prefix.clone());
        out.probs.push(mass);
        return;
    }
    let w: Vec<f64> = residuals.iter().map(|&x| power.raise(x)).collect();
    let total: f64 = w.iter().sum();
    for (i, &wi) in w.iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        let mut next = basis.clone();
        next.push(a.row(i)).unwrap();
        prefix.push(i);
        walk(a, k, power, scale, &next, prefix, mass * wi / total, out);
        prefix.pop();
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn subset_guard(n: usize, k: usize) -> Result<()> {
    let c = binomial(n, k);
    if c > MAX_SUBSETS {
        return Err(Error::SizeGuard(format!("C({n}, {k}) = {c} subsets exceeds {MAX_SUBSETS}")));
    }
    Ok(())
}

fn to_na(rows: &[&[f64]], d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j])
}

/// `sqrt(det(R Rᵀ))` by LU on the Gram matrix.
pub fn gram_volume<R: AsRef<[f64]>>(rows: &[R]) -> f64 {
    if rows.is_empty() {
        return 1.0;
    }
    let d = rows[0].as_ref().len();
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_ref()).collect();
    let m = to_na(&refs, d);
    let g = &m * m.transpose();
    g.determinant().max(0.0).sqrt()
}

fn subset_volume(a: &DenseMatrix, subset: &[usize]) -> f64 {
    let rows: Vec<&[f64]> = subset.iter().map(|&i| a.row(i)).collect();
    gram_volume(&rows)
}

/// Probability of each `k`-subset proportional to its squared volume.
pub fn exact_volume_sampling(a: &DenseMatrix, k: usize) -> Result<ExactDistribution> {
    subset_guard(a.n(), k)?;
    let mut support = Vec::new();
    let mut probs = Vec::new();
    for s in (0..a.n()).combinations(k) {
        let v = subset_volume(a, &s);
        support.push(s);
        probs.push(v * v);
    }
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return Err(Error::UndefinedDistribution("every k-subset has zero volume"));
    }
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(ExactDistribution { support, probs })
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeMax {
    pub subset: Vec<usize>,
    pub volume: f64,
}

/// Exhaustive volume maximization; the lexicographically first subset wins
/// ties.
pub fn exact_volume_max(a: &DenseMatrix, k: usize) -> Result<VolumeMax> {
    if k > a.n() {
        return Err(Error::InvalidParameter(format!("k = {k} exceeds n = {}", a.n())));
    }
    subset_guard(a.n(), k)?;
    let mut best = VolumeMax {
        subset: (0..k).collect(),
        volume: -1.0,
    };
    for s in (0..a.n()).combinations(k) {
        let v = subset_volume(a, &s);
        if v > best.volume * (1.0 + 1e-12) {
            best = VolumeMax { subset: s, volume: v };
        }
    }
    best.volume = best.volume.max(0.0);
    Ok(best)
}

/// Every subset's volume, in lexicographic subset order.
pub fn all_volumes(a: &DenseMatrix, k: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    subset_guard(a.n(), k)?;
    Ok((0..a.n())
        .combinations(k)
        .map(|s| {
            let v = subset_volume(a, &s);
            (s, v)
        })
        .collect())
}

fn svd_parts(a: &DenseMatrix) -> (Vec<f64>, Vec<Vec<f64>>) {
    if a.n() == 0 || a.d() == 0 {
        return (Vec::new(), Vec::new());
    }
    let m = DMatrix::from_row_slice(a.n(), a.d(), a.as_slice());
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = order.iter().map(|&i| svd.singular_values[i]).collect();
    let vecs = order.iter().map(|&i| vt.row(i).iter().copied().collect()).collect();
    (sv, vecs)
}

/// Singular values in decreasing order.
pub fn singular_values(a: &DenseMatrix) -> Vec<f64> {
    svd_parts(a).0
}

/// Span of the top `k` right singular vectors.
pub fn top_singular_subspace(a: &DenseMatrix, k: usize) -> OrthoBasis {
    let (sv, vecs) = svd_parts(a);
    let mut b = OrthoBasis::new(a.d());
    for (s, v) in sv.iter().zip(&vecs).take(k) {
        if *s > 0.0 {
            b.push(v).unwrap();
        }
    }
    b
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankKError {
    /// `‖A − A_k‖_F` for p = 2; for p = 1 the sum of row distances to the
    /// top-`k` singular subspace.
    pub value: f64,
    /// Set for p = 1, where the value is an upper bound on the optimum.
    pub reference_only: bool,
}

pub fn best_rank_k_error(a: &DenseMatrix, k: usize, power: Power) -> RankKError {
    match power {
        Power::Two => {
            let sv = singular_values(a);
            let tail: f64 = sv.iter().skip(k).map(|s| s * s).sum();
            RankKError {
                value: tail.sqrt(),
                reference_only: false,
            }
        }
        Power::One => {
            let v = top_singular_subspace(a, k);
            RankKError {
                value: subspace_cost(a, v.vectors(), Power::One),
                reference_only: true,
            }
        }
    }
}

fn orthonormal_columns<R: AsRef<[f64]>>(rows: &[R], d: usize) -> DMatrix<f64> {
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_ref()).collect();
    if refs.is_empty() {
        return DMatrix::zeros(d, 0);
    }
    let m = to_na(&refs, d);
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let top = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-10 * top)
        .collect();
    DMatrix::from_fn(d, keep.len(), |r, c| vt[(keep[c], r)])
}

fn distances<R: AsRef<[f64]>>(a: &DenseMatrix, span: &[R]) -> Vec<f64> {
    let v = orthonormal_columns(span, a.d());
    a.rows()
        .map(|r| {
            let x = nalgebra::DVector::from_column_slice(r);
            let res = &x - &v * (v.transpose() * &x);
            res.norm()
        })
        .collect()
}

/// `Σ_i dist(A_i, span(rows))^p`.
pub fn subspace_cost<R: AsRef<[f64]>>(a: &DenseMatrix, span: &[R], power: Power) -> f64 {
    distances(a, span).into_iter().map(|x| power.raise(x)).sum()
}

/// `Σ_i min_j dist(A_i, flat_j)^p` over linear flats given by spanning rows.
pub fn flats_cost<R: AsRef<[f64]>>(a: &DenseMatrix, flats: &[Vec<R>], power: Power) -> f64 {
    if flats.is_empty() {
        return a.rows().map(|r| power.raise(norm(r))).sum();
    }
    let per: Vec<Vec<f64>> = flats.iter().map(|f| distances(a, f)).collect();
    (0..a.n())
        .map(|i| power.raise(per.iter().map(|d| d[i]).fold(f64::INFINITY, f64::min)))
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlatsOptimum {
    pub cost: f64,
    /// Each flat as the row indices spanning it.
    pub flats: Vec<Vec<usize>>,
}

/// Best union of `s` flats, each spanned by `k` rows of `a`, by enumeration.
pub fn best_flats_through_rows(a: &DenseMatrix, s: usize, k: usize, power: Power) -> Result<FlatsOptimum> {
    let per_flat = binomial(a.n(), k);
    let total = binomial(per_flat.min(u128::from(u32::MAX)) as usize, s);
    if per_flat > MAX_SUBSETS || total > MAX_SUBSETS {
        return Err(Error::SizeGuard(format!("{total} candidate flat unions exceeds {MAX_SUBSETS}")));
    }
    let candidates: Vec<Vec<usize>> = (0..a.n()).combinations(k).collect();
    let dists: Vec<Vec<f64>> = candidates
        .iter()
        .map(|c| {
            let rows: Vec<&[f64]> = c.iter().map(|&i| a.row(i)).collect();
            distances(a, &rows)
        })
        .collect();
    let mut best = FlatsOptimum {
        cost: f64::INFINITY,
        flats: Vec::new(),
    };
    for pick in (0..candidates.len()).combinations(s) {
        let cost: f64 = (0..a.n())
            .map(|i| power.raise(pick.iter().map(|&c| dists[c][i]).fold(f64::INFINITY, f64::min)))
            .sum();
        if cost < best.cost {
            best = FlatsOptimum {
                cost,
                flats: pick.iter().map(|&c| candidates[c].clone()).collect(),
            };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::parallelepiped_volume;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_flat(n, d, (0..n * d).map(|_| rng.gen_range(-8.0..8.0)).collect()).unwrap()
    }

    fn sums_to_one(e: &ExactDistribution) {
        assert!((e.total() - 1.0).abs() < 1e-9, "{}", e.total());
        assert!(e.probs.iter().all(|&p| p >= 0.0));
    }

    /// Cyclic Jacobi on a symmetric matrix; returns eigenvalues.
    fn jacobi_eigenvalues(mut m: Vec<Vec<f64>>) -> Vec<f64> {
        let n = m.len();
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if m[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (mkp, mkq) = (m[k][p], m[k][q]);
                        m[k][p] = c * mkp - s * mkq;
                        m[k][q] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let (mpk, mqk) = (m[p][k], m[q][k]);
                        m[p][k] = c * mpk - s * mqk;
                        m[q][k] = s * mpk + c * mqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    #[test]
    fn lp2_small_laws() {
        let a = DenseMatrix::from_rows(&[[2.0, 0.0], [0.0, 1.0]]).unwrap();
        let two = exact_lp2_distribution(&a, &Projector::Identity, Power::Two).unwrap();
        assert!((two.prob(&[0]) - 0.8).abs() < 1e-15);
        assert!((two.prob(&[1]) - 0.2).abs() < 1e-15);
        let one = exact_lp2_distribution(&a, &Projector::Identity, Power::One).unwrap();
        assert!((one.prob(&[0]) - 2.0 / 3.0).abs() < 1e-15);
        let same = DenseMatrix::from_rows(&[[1.0, 1.0]; 4]).unwrap();
        let u = exact_lp2_distribution(&same, &Projector::Identity, Power::Two).unwrap();
        assert!(u.probs.iter().all(|&p| (p - 0.25).abs() < 1e-15));
        assert!(matches!(
            exact_lp2_distribution(&DenseMatrix::zeros(3, 2), &Projector::Identity, Power::Two),
            Err(Error::UndefinedDistribution(_))
        ));
    }

    #[test]
    fn adaptive_three_row_instance() {
        let a = DenseMatrix::from_rows(&[[10.0, 0.0], [10.0, 0.0], [0.0, 1.0]]).unwrap();
        let e = exact_adaptive_distribution(&a, 2, Power::Two).unwrap();
        sums_to_one(&e);
        assert!((e.prob(&[0, 2]) - 100.0 / 201.0).abs() < 1e-12);
        assert!((e.prob(&[1, 2]) - 100.0 / 201.0).abs() < 1e-12);
        assert!((e.prob(&[2, 0]) - 0.5 / 201.0).abs() < 1e-12);
        assert_eq!(e.prob(&[0, 1]), 0.0);
    }

    #[test]
    fn adaptive_orthonormal_is_uniform() {
        let a = DenseMatrix::identity(4);
        let e = exact_adaptive_distribution(&a, 2, Power::Two).unwrap();
        sums_to_one(&e);
        assert_eq!(e.len(), 12);
        assert!(e.probs.iter().all(|&p| (p - 1.0 / 12.0).abs() < 1e-12));
    }

    #[test]
    fn adaptive_truncates_on_rank_exhaustion() {
        let a = DenseMatrix::from_rows(&[[1.0, 0.0], [2.0, 0.0]]).unwrap();
        let e = exact_adaptive_distribution(&a, 2, Power::One).unwrap();
        sums_to_one(&e);
        assert!((e.prob(&[0]) - 1.0 / 3.0).abs() < 1e-12);
        assert!((e.prob(&[1]) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_first_round_marginal() {
        for seed in 0..5 {
            let a = random(6, 3, seed);
            for power in [Power::One, Power::Two] {
                let e = exact_adaptive_distribution(&a, 2, power).unwrap();
                sums_to_one(&e);
                let lp = exact_lp2_distribution(&a, &Projector::Identity, power).unwrap();
                for i in 0..6 {
                    let m: f64 = e.support.iter().zip(&e.probs).filter(|(t, _)| t[0] == i).map(|(_, p)| p).sum();
                    assert!((m - lp.probs[i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn adaptive_size_guard() {
        assert!(matches!(
            exact_adaptive_distribution(&random(11, 2, 0), 1, Power::Two),
            Err(Error::SizeGuard(_))
        ));
        assert!(matches!(
            exact_adaptive_distribution(&random(4, 5, 0), 4, Power::Two),
            Err(Error::SizeGuard(_))
        ));
    }

    #[test]
    fn tv_examples() {
        let p = ExactDistribution {
            support: vec![vec![0], vec![1]],
            probs: vec![0.8, 0.2],
        };
        let counts: HashMap<_, _> = [(vec![0], 70), (vec![1], 30)].into_iter().collect();
        assert!((tv_distance(&p, &counts) - 0.1).abs() < 1e-12);
        let same: HashMap<_, _> = [(vec![0], 80), (vec![1], 20)].into_iter().collect();
        assert!(tv_distance(&p, &same).abs() < 1e-12);
        let disjoint: HashMap<_, _> = [(vec![2], 5)].into_iter().collect();
        assert!((tv_distance(&p, &disjoint) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn volume_sampling_cases() {
        let a = DenseMatrix::from_rows(&[[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]]).unwrap();
        let e = exact_volume_sampling(&a, 2).unwrap();
        sums_to_one(&e);
        // (0,2) has volume 1, (1,2) volume 2, (0,1) is flat
        assert!((e.prob(&[0, 2]) - 0.2).abs() < 1e-12);
        assert!((e.prob(&[1, 2]) - 0.8).abs() < 1e-12);
        let dep = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 3.0], [0.0, 0.0]]).unwrap();
        let only = exact_volume_sampling(&dep, 2).unwrap();
        assert!((only.prob(&[0, 1]) - 1.0).abs() < 1e-12);
        let u = exact_volume_sampling(&DenseMatrix::identity(4), 2).unwrap();
        assert!(u.probs.iter().all(|&p| (p - 1.0 / 6.0).abs() < 1e-12));
    }

    #[test]
    fn volume_sampling_matches_explicit_determinants() {
        let a = random(4, 2, 9);
        let e = exact_volume_sampling(&a, 2).unwrap();
        let det2 = |i: usize, j: usize| {
            let (x, y) = (a.row(i), a.row(j));
            let d = x[0] * y[1] - x[1] * y[0];
            d * d
        };
        let total: f64 = (0..4).combinations(2).map(|s| det2(s[0], s[1])).sum();
        for s in (0..4).combinations(2) {
            assert!((e.prob(&s) - det2(s[0], s[1]) / total).abs() < 1e-12);
        }
    }

    #[test]
    fn volume_max_cases() {
        let sq = DenseMatrix::from_rows(&[[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]).unwrap();
        let m = exact_volume_max(&sq, 2).unwrap();
        assert_eq!(m.subset, vec![0, 1]);
        assert!((m.volume - 2.0).abs() < 1e-12);
        let a = random(7, 3, 1);
        let one = exact_volume_max(&a, 1).unwrap();
        let heaviest = (0..7).max_by(|&i, &j| norm(a.row(i)).total_cmp(&norm(a.row(j)))).unwrap();
        assert_eq!(one.subset, vec![heaviest]);
        let mut planted = DenseMatrix::zeros(6, 3);
        for i in 0..6 {
            planted.row_mut(i).copy_from_slice(&[0.1, 0.1 * i as f64, 0.05]);
        }
        planted.row_mut(1).copy_from_slice(&[5.0, 0.0, 0.0]);
        planted.row_mut(4).copy_from_slice(&[0.0, 5.0, 0.0]);
        assert_eq!(exact_volume_max(&planted, 2).unwrap().subset, vec![1, 4]);
    }

    #[test]
    fn gram_volume_matches_gram_schmidt() {
        for seed in 0..20 {
            let a = random(4, 5, seed);
            let rows: Vec<&[f64]> = a.rows().collect();
            let g = gram_volume(&rows);
            let p = parallelepiped_volume(&rows).unwrap();
            assert!((g - p).abs() <= 1e-9 * p.max(1.0));
        }
    }

    #[test]
    fn rank_k_error_cases() {
        let d = DenseMatrix::from_rows(&[[3.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert!((best_rank_k_error(&d, 2, Power::Two).value - 1.0).abs() < 1e-12);
        let low = DenseMatrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 1.0, 0.0]]).unwrap();
        assert!(best_rank_k_error(&low, 2, Power::Two).value < 1e-10);
        let r = best_rank_k_error(&low, 2, Power::One);
        assert!(r.reference_only && r.value < 1e-10);
    }

    #[test]
    fn rank_k_error_matches_jacobi() {
        for seed in 0..10 {
            let a = random(8, 4, seed);
            let at = a.transpose();
            let gram: Vec<Vec<f64>> = (0..4)
                .map(|i| (0..4).map(|j| crate::linalg::dot(at.row(i), at.row(j))).collect())
                .collect();
            let ev = jacobi_eigenvalues(gram);
            for k in 0..4 {
                let want: f64 = ev[k..].iter().map(|x| x.max(0.0)).sum::<f64>().sqrt();
                let got = best_rank_k_error(&a, k, Power::Two).value;
                assert!((got - want).abs() <= 1e-7 * want.max(1.0), "{got} vs {want}");
            }
        }
    }

    #[test]
    fn subspace_cost_of_svd_subspace_is_tail() {
        let a = random(10, 4, 3);
        let v = top_singular_subspace(&a, 2);
        let c = subspace_cost(&a, v.vectors(), Power::Two);
        let e = best_rank_k_error(&a, 2, Power::Two).value;
        assert!((c - e * e).abs() <= 1e-9 * c);
        let none: Vec<Vec<f64>> = Vec::new();
        assert!((subspace_cost(&a, &none, Power::Two) - a.frobenius().powi(2)).abs() < 1e-9);
    }

    #[test]
    fn line_pairs_recover_exact_cover() {
        let mut a = DenseMatrix::zeros(6, 3);
        for i in 0..6 {
            let s = 1.0 + i as f64;
            let row = if i % 2 == 0 { [s, 0.0, 0.0] } else { [0.0, s, s] };
            a.row_mut(i).copy_from_slice(&row);
        }
        let best = best_flats_through_rows(&a, 2, 1, Power::Two).unwrap();
        assert!(best.cost < 1e-20);
        let flats: Vec<Vec<&[f64]>> = best.flats.iter().map(|f| f.iter().map(|&i| a.row(i)).collect()).collect();
        assert!(flats_cost(&a, &flats, Power::Two) < 1e-20);
    }

    #[test]
    fn volume_sampling_relation_small() {
        for seed in 0..10 {
            let a = random(5, 3, seed);
            let q = exact_adaptive_distribution(&a, 2, Power::Two).unwrap().unordered();
            let p = exact_volume_sampling(&a, 2).unwrap();
            for (t, &pt) in p.support.iter().zip(&p.probs) {
                assert!(q.prob(t) <= 2.0 * pt * (1.0 + 1e-9) + 1e-15);
            }
        }
    }
}
