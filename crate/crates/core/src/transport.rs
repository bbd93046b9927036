//! Exact 2-Wasserstein distances between small empirical measures and the
//! generation sampler of a trained model.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;

use crate::diffcore::sq_dist;
use crate::infotools::empirical_kl_term;
use crate::model::{mean_reconstruction_loss, ModelParams, PosteriorMode, PriorVector};
use crate::quantizer::{IndexDistribution, SUM_TOLERANCE};
use crate::{Error, Result};

/// Largest combined support size accepted by [`w2_exact`].
pub const MAX_TOTAL_POINTS: usize = 2000;

const FLOW_EPS: f64 = 1e-15;

/// Finitely supported probability measure on `R^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        check_points(&points)?;
        if points.len() != weights.len() {
            return Err(Error::shape("measure weights", points.len(), weights.len()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Parameter("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Parameter(format!("weights sum to {total}, expected 1")));
        }
        Ok(EmpiricalMeasure { points, weights })
    }

    /// Equal weights `1 / len`; the sum check is skipped since rounding in
    /// long sums of `1 / len` can exceed the tolerance.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        check_points(&points)?;
        let weights = vec![1.0 / points.len() as f64; points.len()];
        Ok(EmpiricalMeasure { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|&x| (x - w).abs() <= 1e-15)
    }

    /// Merges identical support points and drops zero-weight atoms.
    /// Atoms come out in lexicographic order.
    pub fn compact(&self) -> EmpiricalMeasure {
        let mut order: Vec<usize> = (0..self.len()).filter(|&i| self.weights[i] > 0.0).collect();
        order.sort_by(|&a, &b| lex_cmp(&self.points[a], &self.points[b]));
        let mut points: Vec<Vec<f64>> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for i in order {
            match points.last() {
                Some(last) if last == &self.points[i] => {
                    *weights.last_mut().unwrap() += self.weights[i];
                }
                _ => {
                    points.push(self.points[i].clone());
                    weights.push(self.weights[i]);
                }
            }
        }
        EmpiricalMeasure { points, weights }
    }

    /// Whether every coordinate lies in `[0, 1]`.
    pub fn in_unit_box(&self) -> bool {
        self.points
            .iter()
            .all(|p| p.iter().all(|v| (0.0..=1.0).contains(v)))
    }
}

fn check_points(points: &[Vec<f64>]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Parameter("empty measure".into()));
    }
    let dim = points[0].len();
    for p in points {
        crate::error::check_len("support point", dim, p.len())?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite support point".into()));
        }
    }
    Ok(())
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn cost_matrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|x| b.iter().map(|y| sq_dist(x, y)).collect())
        .collect()
}

/// Minimum-cost perfect matching on a square cost matrix.
/// Returns `(assignment, cost)` with `assignment[row] = column`.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let n = cost.len();
    for row in cost {
        crate::error::check_len("cost matrix row", n, row.len())?;
        if row.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numeric("non-finite assignment cost".into()));
        }
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // Potentials u (rows), v (columns); p[j] is the row matched to column j,
    // with index 0 as the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .sum();
    Ok((assignment, total))
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum-cost transport plan between weight vectors `a` and `b` under
/// `cost`, by successive shortest paths with Dijkstra on reduced costs.
/// Returns the dense plan and its cost.
pub fn min_cost_transport(a: &[f64], b: &[f64], cost: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, f64)> {
    let (m, n) = (a.len(), b.len());
    crate::error::check_len("cost matrix rows", m, cost.len())?;
    for row in cost {
        crate::error::check_len("cost matrix row", n, row.len())?;
        if row.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numeric("non-finite transport cost".into()));
        }
    }
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let mut flow = vec![vec![0.0; n]; m];
    let nodes = m + n;
    let mut pot = vec![0.0; nodes];
    let none = usize::MAX;

    loop {
        if !supply.iter().any(|&s| s > FLOW_EPS) || !demand.iter().any(|&d| d > FLOW_EPS) {
            break;
        }
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev = vec![none; nodes];
        let mut done = vec![false; nodes];
        let mut heap = BinaryHeap::new();
        for i in 0..m {
            if supply[i] > FLOW_EPS {
                dist[i] = 0.0;
                heap.push(HeapItem { dist: 0.0, node: i });
            }
        }
        let mut target = none;
        while let Some(HeapItem { dist: d, node }) = heap.pop() {
            if done[node] || d > dist[node] {
                continue;
            }
            done[node] = true;
            if node < m {
                let i = node;
                for j in 0..n {
                    let w = m + j;
                    if done[w] {
                        continue;
                    }
                    let rc = (cost[i][j] + pot[i] - pot[w]).max(0.0);
                    if d + rc < dist[w] {
                        dist[w] = d + rc;
                        prev[w] = i;
                        heap.push(HeapItem { dist: d + rc, node: w });
                    }
                }
            } else {
                let j = node - m;
                if demand[j] > FLOW_EPS {
                    target = node;
                    break;
                }
                for i in 0..m {
                    if done[i] || flow[i][j] <= FLOW_EPS {
                        continue;
                    }
                    let rc = (-cost[i][j] + pot[node] - pot[i]).max(0.0);
                    if d + rc < dist[i] {
                        dist[i] = d + rc;
                        prev[i] = node;
                        heap.push(HeapItem { dist: d + rc, node: i });
                    }
                }
            }
        }
        if target == none {
            break;
        }
        let dt = dist[target];
        for v in 0..nodes {
            pot[v] += dist[v].min(dt);
        }

        let mut bottleneck = demand[target - m];
        let mut v = target;
        while prev[v] != none {
            let u = prev[v];
            if u >= m {
                // Sink u back to source v along a reverse edge.
                bottleneck = bottleneck.min(flow[v][u - m]);
            }
            v = u;
        }
        bottleneck = bottleneck.min(supply[v]);
        let start = v;

        let mut v = target;
        while prev[v] != none {
            let u = prev[v];
            if u < m {
                flow[u][v - m] += bottleneck;
            } else {
                flow[v][u - m] -= bottleneck;
            }
            v = u;
        }
        supply[start] -= bottleneck;
        demand[target - m] -= bottleneck;
    }

    let total = flow
        .iter()
        .zip(cost)
        .map(|(f, c)| f.iter().zip(c).map(|(x, y)| x * y).sum::<f64>())
        .sum();
    Ok((flow, total))
}

/// Exact `W_2` under squared Euclidean ground cost.
pub fn w2_exact(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    Ok(w2_squared(mu, nu)?.sqrt())
}

/// Exact `W_2^2`; equal-size uniform measures go through the assignment
/// solver, everything else through min-cost flow.
pub fn w2_squared(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    crate::error::check_len("measure dimension", mu.dim(), nu.dim())?;
    let total = mu.len() + nu.len();
    if total > MAX_TOTAL_POINTS {
        return Err(Error::Parameter(format!(
            "transport problem has {total} points, limit is {MAX_TOTAL_POINTS}"
        )));
    }
    let cost = cost_matrix(&mu.points, &nu.points);
    let value = if mu.len() == nu.len() && mu.is_uniform() && nu.is_uniform() {
        hungarian(&cost)?.1 / mu.len() as f64
    } else {
        min_cost_transport(&mu.weights, &nu.weights, &cost)?.1
    };
    Ok(value.max(0.0))
}

/// `m` draws `J ~ pi`, each mapped to the clamped decoder output `g(e_J)`.
pub fn sample_generated<R: Rng + ?Sized>(
    params: &ModelParams,
    prior: &PriorVector,
    m: usize,
    rng: &mut R,
) -> Result<EmpiricalMeasure> {
    if m == 0 {
        return Err(Error::Parameter("need at least one generated sample".into()));
    }
    crate::error::check_len("prior", params.k(), prior.k())?;
    let codes = params.decoded_codes()?;
    let pi = IndexDistribution::new(prior.probs().to_vec())?;
    let points = (0..m).map(|_| codes[pi.sample(rng)].clone()).collect();
    EmpiricalMeasure::uniform(points)
}

/// Outcome of one generation-bound check.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationCheck {
    pub w2_squared: f64,
    pub rhs: f64,
    pub holds: bool,
    pub train_loss: f64,
    pub kl_to_prior: f64,
}

/// Compares the measured `W_2^2(holdout, generated)` with the bound
/// `2 l_0 + 4 Delta sqrt(2 KL) + 2 Delta / sqrt(n)` on the training set.
/// The generated measure is compacted to at most `K` atoms before solving.
pub fn validate_generation_bound<R: Rng + ?Sized>(
    params: &ModelParams,
    prior: &PriorVector,
    train: &[Vec<f64>],
    holdout: &[Vec<f64>],
    delta: f64,
    m_generated: usize,
    rng: &mut R,
) -> Result<GenerationCheck> {
    if train.is_empty() || holdout.is_empty() {
        return Err(Error::Parameter("train and holdout sets must be nonempty".into()));
    }
    let mode = PosteriorMode::Stochastic;
    let post = params.posteriors(train, mode)?;
    let kl = empirical_kl_term(&post, prior)?;
    let train_loss = mean_reconstruction_loss(params, train, mode)?;
    let inputs = crate::bounds::BoundInputs {
        n: train.len(),
        delta,
        kl_empirical: kl,
        train_loss_mean: train_loss,
        ..Default::default()
    };
    let rhs = crate::bounds::rhs_wasserstein(&inputs)?;
    let generated = sample_generated(params, prior, m_generated, rng)?.compact();
    let data = EmpiricalMeasure::uniform(holdout.to_vec())?;
    let w2sq = w2_squared(&data, &generated)?;
    Ok(GenerationCheck {
        w2_squared: w2sq,
        rhs,
        holds: w2sq <= rhs,
        train_loss,
        kl_to_prior: kl,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRecord {
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub check: GenerationCheck,
}

pub fn generation_csv(records: &[GenerationRecord]) -> String {
    let mut out = String::from("seed,n,K,w2sq,rhs,holds\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.seed, r.n, r.k, r.check.w2_squared, r.check.rhs, r.check.holds
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Activation, MlpSpec};
    use itertools::Itertools;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
            .collect()
    }

    fn brute_force_w2sq(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let n = a.len();
        (0..n)
            .permutations(n)
            .map(|p| p.iter().enumerate().map(|(i, &j)| sq_dist(&a[i], &b[j])).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
            / n as f64
    }

    fn random_weights(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
        let s: f64 = raw.iter().sum();
        let mut w: Vec<f64> = raw.iter().map(|x| x / s).collect();
        let head: f64 = w[..n - 1].iter().sum();
        w[n - 1] = 1.0 - head;
        w
    }

    // Quantile-coupling value for 1D measures.
    fn w2sq_1d(xa: &[f64], wa: &[f64], xb: &[f64], wb: &[f64]) -> f64 {
        let mut a: Vec<(f64, f64)> = xa.iter().copied().zip(wa.iter().copied()).collect();
        let mut b: Vec<(f64, f64)> = xb.iter().copied().zip(wb.iter().copied()).collect();
        a.sort_by(|x, y| x.0.total_cmp(&y.0));
        b.sort_by(|x, y| x.0.total_cmp(&y.0));
        let (mut i, mut j) = (0, 0);
        let (mut ra, mut rb) = (a[0].1, b[0].1);
        let mut total = 0.0;
        while i < a.len() && j < b.len() {
            let t = ra.min(rb);
            total += t * (a[i].0 - b[j].0).powi(2);
            ra -= t;
            rb -= t;
            if ra <= 1e-15 {
                i += 1;
                if i < a.len() {
                    ra = a[i].1;
                }
            }
            if rb <= 1e-15 {
                j += 1;
                if j < b.len() {
                    rb = b[j].1;
                }
            }
        }
        total
    }

    #[test]
    fn identical_and_point_masses() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mu = EmpiricalMeasure::uniform(random_points(5, 3, &mut rng)).unwrap();
        assert!(w2_exact(&mu, &mu).unwrap() < 1e-12);
        let a = EmpiricalMeasure::uniform(vec![vec![0.0, 0.0]]).unwrap();
        let b = EmpiricalMeasure::uniform(vec![vec![3.0, 4.0]]).unwrap();
        assert!((w2_exact(&a, &b).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn hungarian_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 1..=7 {
            let trials = if n <= 6 { 100 } else { 10 };
            for _ in 0..trials {
                let a = random_points(n, 2, &mut rng);
                let b = random_points(n, 2, &mut rng);
                let mu = EmpiricalMeasure::uniform(a.clone()).unwrap();
                let nu = EmpiricalMeasure::uniform(b.clone()).unwrap();
                let exact = w2_squared(&mu, &nu).unwrap();
                let brute = brute_force_w2sq(&a, &b);
                assert!((exact - brute).abs() < 1e-9, "n = {n}: {exact} vs {brute}");
            }
        }
    }

    #[test]
    fn hungarian_assignment_is_permutation() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let (assign, total) = hungarian(&cost).unwrap();
        assert_eq!(total, 5.0);
        let mut sorted = assign.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn flow_matches_assignment_on_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 3, 5, 9, 20] {
            let a = random_points(n, 3, &mut rng);
            let b = random_points(n, 3, &mut rng);
            let cost = cost_matrix(&a, &b);
            let w = vec![1.0 / n as f64; n];
            let (_, flow_cost) = min_cost_transport(&w, &w, &cost).unwrap();
            let (_, assign_cost) = hungarian(&cost).unwrap();
            assert!((flow_cost - assign_cost / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn flow_matches_quantile_coupling_in_1d() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let m = rng.random_range(1..12);
            let n = rng.random_range(1..12);
            let xa: Vec<f64> = (0..m).map(|_| rng.random()).collect();
            let xb: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let wa = random_weights(m, &mut rng);
            let wb = random_weights(n, &mut rng);
            let mu = EmpiricalMeasure::new(xa.iter().map(|&x| vec![x]).collect(), wa.clone()).unwrap();
            let nu = EmpiricalMeasure::new(xb.iter().map(|&x| vec![x]).collect(), wb.clone()).unwrap();
            let got = w2_squared(&mu, &nu).unwrap();
            let oracle = w2sq_1d(&xa, &wa, &xb, &wb);
            assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
        }
    }

    #[test]
    fn plan_has_correct_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_weights(7, &mut rng);
        let b = random_weights(4, &mut rng);
        let cost = cost_matrix(&random_points(7, 2, &mut rng), &random_points(4, 2, &mut rng));
        let (plan, _) = min_cost_transport(&a, &b, &cost).unwrap();
        for (i, row) in plan.iter().enumerate() {
            assert!((row.iter().sum::<f64>() - a[i]).abs() < 1e-12);
            assert!(row.iter().all(|&f| f >= -1e-15));
        }
        for j in 0..4 {
            let col: f64 = plan.iter().map(|r| r[j]).sum();
            assert!((col - b[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn compaction_preserves_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let atoms = random_points(3, 2, &mut rng);
        let expanded: Vec<Vec<f64>> = (0..12).map(|i| atoms[i % 3].clone()).collect();
        let mu = EmpiricalMeasure::uniform(expanded).unwrap();
        let compact = mu.compact();
        assert_eq!(compact.len(), 3);
        for w in compact.weights() {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
        let nu = EmpiricalMeasure::uniform(random_points(12, 2, &mut rng)).unwrap();
        let a = w2_squared(&mu, &nu).unwrap();
        let b = w2_squared(&compact, &nu).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn size_limit() {
        let big = EmpiricalMeasure::uniform(vec![vec![0.0]; 1500]).unwrap();
        let err = w2_exact(&big, &big).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }

    #[test]
    fn invalid_measures() {
        assert!(EmpiricalMeasure::new(vec![], vec![]).is_err());
        assert!(EmpiricalMeasure::new(vec![vec![0.0]], vec![0.5]).is_err());
        assert!(EmpiricalMeasure::new(vec![vec![0.0], vec![1.0, 2.0]], vec![0.5, 0.5]).is_err());
        assert!(EmpiricalMeasure::new(vec![vec![f64::NAN]], vec![1.0]).is_err());
        assert!(EmpiricalMeasure::new(vec![vec![0.0], vec![1.0]], vec![1.5, -0.5]).is_err());
    }

    fn tiny_model(k: usize, seed: u64) -> ModelParams {
        let enc = MlpSpec::uniform(vec![2, 4, 2], Activation::Tanh).unwrap();
        let dec = MlpSpec::uniform(vec![2, 4, 2], Activation::Tanh).unwrap();
        ModelParams::init(enc, dec, k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn generated_samples_follow_prior() {
        let params = tiny_model(1, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = sample_generated(&params, &PriorVector::uniform(1), 10, &mut rng).unwrap();
        let code = &params.decoded_codes().unwrap()[0];
        assert!(g.points().iter().all(|p| p == code));
        assert!(g.in_unit_box());

        let params = tiny_model(3, 1);
        let codes = params.decoded_codes().unwrap();
        let one_hot = PriorVector::new(vec![0.0, 1.0, 0.0]).unwrap();
        let g = sample_generated(&params, &one_hot, 50, &mut rng).unwrap();
        assert!(g.points().iter().all(|p| p == &codes[1]));

        let pi = vec![0.5, 0.3, 0.2];
        let m = 100_000;
        let mut counts = [0usize; 3];
        let g = sample_generated(&params, &PriorVector::new(pi.clone()).unwrap(), m, &mut rng).unwrap();
        for p in g.points() {
            let j = codes.iter().position(|c| c == p).unwrap();
            counts[j] += 1;
        }
        for j in 0..3 {
            let sigma = (m as f64 * pi[j] * (1.0 - pi[j])).sqrt();
            assert!((counts[j] as f64 - m as f64 * pi[j]).abs() <= 3.0 * sigma);
        }
    }

    #[test]
    fn generation_check_reports_consistent_fields() {
        let params = tiny_model(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let train = random_points(20, 2, &mut rng);
        let holdout = random_points(40, 2, &mut rng);
        let prior = PriorVector::uniform(4);
        let check =
            validate_generation_bound(&params, &prior, &train, &holdout, 2.0, 200, &mut rng).unwrap();
        let oracle = 2.0 * check.train_loss
            + 8.0 * (2.0 * check.kl_to_prior).sqrt()
            + 4.0 / 20f64.sqrt();
        assert!((check.rhs - oracle).abs() < 1e-12);
        assert_eq!(check.holds, check.w2_squared <= check.rhs);
        let csv = generation_csv(&[GenerationRecord { seed: 0, n: 20, k: 4, check }]);
        assert!(csv.starts_with("seed,n,K,w2sq,rhs,holds\n"));
        assert_eq!(csv.lines().count(), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn metric_axioms(seed in any::<u64>(), n in 1usize..8, c in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = EmpiricalMeasure::uniform(random_points(n, 2, &mut rng)).unwrap();
            let b = EmpiricalMeasure::new(random_points(n + 1, 2, &mut rng), random_weights(n + 1, &mut rng)).unwrap();
            let cm = EmpiricalMeasure::new(random_points(3, 2, &mut rng), random_weights(3, &mut rng)).unwrap();
            let ab = w2_exact(&a, &b).unwrap();
            let ba = w2_exact(&b, &a).unwrap();
            let ac = w2_exact(&a, &cm).unwrap();
            let cb = w2_exact(&cm, &b).unwrap();
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!(ab <= ac + cb + 1e-9);
            prop_assert!(w2_exact(&b, &b).unwrap() < 1e-7);
            let scale = |m: &EmpiricalMeasure| EmpiricalMeasure::new(
                m.points().iter().map(|p| p.iter().map(|v| c * v).collect()).collect(),
                m.weights().to_vec(),
            ).unwrap();
            let scaled = w2_exact(&scale(&a), &scale(&b)).unwrap();
            prop_assert!((scaled - c.abs() * ab).abs() < 1e-9);
        }
    }
}
