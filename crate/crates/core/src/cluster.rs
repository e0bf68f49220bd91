//! Clustering baselines: k-means with one network per cluster, and a
//! diagonal Gaussian mixture whose posterior augments a single network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bnn::{derive_seed, train_concurrent, train_policy_with_extra, PolicyLayout, PolicyModel, TrainConfig};
use crate::error::{usage, Error, Result};
use crate::jobshop::{DemoStep, Demonstration, STATE_FEATURES};
use crate::numerics::{self, ProbVector};

pub const MAX_LLOYD_ITERS: usize = 100;
pub const MAX_EM_STEPS: usize = 200;
pub const VAR_FLOOR: f64 = 1e-6;
const CLUSTER_STREAM: u64 = 4;
const RESEEDS: u64 = 10;
/// Action feature columns whose minimum defines a choice type: duration,
/// distance, deadline.
const EXTREMAL_COLUMNS: [usize; 3] = [1, 2, 3];
pub const SIGNATURE_LEN: usize = STATE_FEATURES + EXTREMAL_COLUMNS.len();

/// Mean state features over the given decision steps, followed by the
/// fraction of them in which the chosen action had the smallest duration,
/// distance and deadline among the candidates. Zeros when empty.
pub fn signature<'a, I: IntoIterator<Item = &'a DemoStep>>(steps: I) -> Result<Vec<f64>> {
    let mut sig = vec![0.0; SIGNATURE_LEN];
    let mut n = 0.0;
    for s in steps {
        if s.state_features.len() != STATE_FEATURES {
            return usage("malformed state features");
        }
        let chosen = &s.actions[s.chosen_index()?];
        for (acc, v) in sig.iter_mut().zip(&s.state_features) {
            *acc += v;
        }
        let waited = chosen.features.iter().all(|&v| v == 0.0);
        for (j, &col) in EXTREMAL_COLUMNS.iter().enumerate() {
            let best = s
                .actions
                .iter()
                .filter(|a| a.features.iter().any(|&v| v != 0.0))
                .map(|a| a.features[col])
                .fold(f64::INFINITY, f64::min);
            if !waited && chosen.features[col] <= best {
                sig[STATE_FEATURES + j] += 1.0;
            }
        }
        n += 1.0;
    }
    if n > 0.0 {
        sig.iter_mut().for_each(|v| *v /= n);
    }
    Ok(sig)
}

/// Signature of a whole demonstration's decision steps.
pub fn demo_signature(d: &Demonstration) -> Result<Vec<f64>> {
    signature(d.decision_steps())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < bd {
            bd = d;
            best = j;
        }
    }
    best
}

fn check_points(points: &[Vec<f64>], k: usize) -> Result<usize> {
    if k == 0 {
        return usage("k must be at least 1");
    }
    if k > points.len() {
        return usage(format!("k = {k} exceeds the {} points", points.len()));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim || !numerics::all_finite(p)) {
        return usage("points must share a nonzero dimension and be finite");
    }
    Ok(dim)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after each assignment step.
    pub wcss_trace: Vec<f64>,
}

impl KMeans {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn assign(&self, x: &[f64]) -> usize {
        nearest(&self.centroids, x)
    }

    pub fn wcss(&self, points: &[Vec<f64>]) -> f64 {
        points.iter().map(|p| sq_dist(p, &self.centroids[self.assign(p)])).sum()
    }
}

/// k-means++ seeding followed by Lloyd iterations until the assignment
/// stops changing or the iteration cap is reached.
pub fn kmeans_fit(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    check_points(points, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, CLUSTER_STREAM));
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[nearest(&centroids, p)])).collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen_range(0.0..total);
            let mut idx = points.len() - 1;
            for (i, w) in d.iter().enumerate() {
                if r < *w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        } else {
            rng.gen_range(0..points.len())
        };
        centroids.push(points[pick].clone());
    }
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(&centroids, p)).collect();
    let mut trace: Vec<f64> = Vec::new();
    for _ in 0..MAX_LLOYD_ITERS {
        let mut sums = vec![vec![0.0; points[0].len()]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(&centroids, p)).collect();
        let wcss: f64 = points.iter().zip(&next).map(|(p, &a)| sq_dist(p, &centroids[a])).sum();
        if let Some(&prev) = trace.last() {
            if wcss > prev + 1e-9 * prev.abs().max(1.0) {
                return Err(Error::Numeric(format!("k-means objective rose from {prev} to {wcss}")));
            }
        }
        trace.push(wcss);
        if next == assignment {
            break;
        }
        assignment = next;
    }
    Ok(KMeans {
        centroids,
        wcss_trace: trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    /// Log-likelihood after each EM step.
    pub loglik_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn log_gauss(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((xi, m), v) in x.iter().zip(mean).zip(var) {
        s += -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (xi - m) * (xi - m) / v);
    }
    s
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Gmm {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    fn joint(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k())
            .map(|j| self.weights[j].ln() + log_gauss(x, &self.means[j], &self.variances[j]))
            .collect()
    }

    /// Component posterior for one point.
    pub fn posterior(&self, x: &[f64]) -> Result<ProbVector> {
        let j = self.joint(x);
        let z = log_sum_exp(&j);
        let mut p: Vec<f64> = j.iter().map(|v| (v - z).exp()).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        ProbVector::new(p)
    }

    pub fn log_likelihood(&self, points: &[Vec<f64>]) -> f64 {
        points.iter().map(|p| log_sum_exp(&self.joint(p))).sum()
    }
}

/// EM with diagonal covariances, started from a k-means fit. Variances are
/// floored at [`VAR_FLOOR`]; a floor that keeps binding is reported in
/// `warnings`.
pub fn gmm_fit(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Gmm> {
    let dim = check_points(points, k)?;
    let km = kmeans_fit(points, k, seed)?;
    let n = points.len() as f64;
    let mut gmm = Gmm {
        weights: vec![0.0; k],
        means: km.centroids.clone(),
        variances: vec![vec![0.0; dim]; k],
        loglik_trace: Vec::new(),
        warnings: Vec::new(),
    };
    let mut counts = vec![0.0f64; k];
    for p in points {
        let a = km.assign(p);
        counts[a] += 1.0;
        for ((v, x), m) in gmm.variances[a].iter_mut().zip(p).zip(&km.centroids[a]) {
            *v += (x - m) * (x - m);
        }
    }
    for j in 0..k {
        gmm.weights[j] = counts[j].max(1.0) / (n + (k as f64));
        for v in &mut gmm.variances[j] {
            *v = (*v / counts[j].max(1.0)).max(VAR_FLOOR);
        }
    }
    let wsum: f64 = gmm.weights.iter().sum();
    gmm.weights.iter_mut().for_each(|w| *w /= wsum);
    let mut floor_hits = 0usize;
    let mut prev = gmm.log_likelihood(points);
    for _ in 0..MAX_EM_STEPS {
        // E step
        let resp: Vec<Vec<f64>> = points
            .iter()
            .map(|p| gmm.posterior(p).map(ProbVector::into_inner))
            .collect::<Result<_>>()?;
        // M step
        let mut hit = false;
        for j in 0..k {
            let nj: f64 = resp.iter().map(|r| r[j]).sum();
            if nj <= 0.0 {
                continue;
            }
            gmm.weights[j] = nj / n;
            let mut mean = vec![0.0; dim];
            for (p, r) in points.iter().zip(&resp) {
                for (m, x) in mean.iter_mut().zip(p) {
                    *m += r[j] * x / nj;
                }
            }
            let mut var = vec![0.0; dim];
            for (p, r) in points.iter().zip(&resp) {
                for ((v, x), m) in var.iter_mut().zip(p).zip(&mean) {
                    *v += r[j] * (x - m) * (x - m) / nj;
                }
            }
            for v in &mut var {
                if *v < VAR_FLOOR {
                    *v = VAR_FLOOR;
                    hit = true;
                }
            }
            gmm.means[j] = mean;
            gmm.variances[j] = var;
        }
        floor_hits = if hit { floor_hits + 1 } else { 0 };
        let ll = gmm.log_likelihood(points);
        if !hit && ll < prev - 1e-9 * prev.abs().max(1.0) {
            return Err(Error::Numeric(format!("EM log-likelihood fell from {prev} to {ll}")));
        }
        gmm.loglik_trace.push(ll);
        let done = (ll - prev).abs() <= 1e-6 * prev.abs().max(1e-12);
        prev = ll;
        if done {
            break;
        }
    }
    if floor_hits >= 5 {
        gmm.warnings
            .push(format!("variance floor {VAR_FLOOR} enforced for {floor_hits} consecutive EM steps"));
    }
    Ok(gmm)
}

/// One homogeneous network per k-means cluster of demonstrator
/// signatures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteredNns {
    pub kmeans: KMeans,
    pub nets: Vec<PolicyModel>,
    /// Cluster used before any step of an episode has been observed.
    pub default_cluster: usize,
}

pub fn train_clustered_nns(demos: &[Demonstration], k: usize, layout: PolicyLayout, cfg: &TrainConfig) -> Result<ClusteredNns> {
    if demos.is_empty() {
        return usage("empty dataset");
    }
    let sigs = demos.iter().map(demo_signature).collect::<Result<Vec<_>>>()?;
    let mut fitted = None;
    for attempt in 0..RESEEDS {
        let km = kmeans_fit(&sigs, k, cfg.seed.wrapping_add(attempt))?;
        let mut members = vec![Vec::new(); k];
        for (d, s) in demos.iter().zip(&sigs) {
            members[km.assign(s)].push(d.clone());
        }
        if members.iter().all(|m| !m.is_empty()) {
            fitted = Some((km, members));
            break;
        }
    }
    let (kmeans, members) =
        fitted.ok_or_else(|| Error::Config(format!("k-means left a cluster empty after {RESEEDS} seeds")))?;
    let homogeneous = cfg.homogeneous();
    let nets = members
        .iter()
        .map(|m| Ok(train_concurrent(m, layout, &homogeneous)?.0))
        .collect::<Result<Vec<_>>>()?;
    let default_cluster = numerics::argmax(&members.iter().map(|m| m.len() as f64).collect::<Vec<_>>());
    Ok(ClusteredNns {
        kmeans,
        nets,
        default_cluster,
    })
}

impl ClusteredNns {
    /// Cluster for an episode given the steps observed so far.
    pub fn route(&self, prefix: &[DemoStep]) -> Result<usize> {
        let observed: Vec<&DemoStep> = prefix.iter().filter(|s| s.is_decision()).collect();
        if observed.is_empty() {
            return Ok(self.default_cluster);
        }
        Ok(self.kmeans.assign(&signature(observed)?))
    }

    pub fn predict(&self, prefix: &[DemoStep], step: &DemoStep) -> Result<ProbVector> {
        self.nets[self.route(prefix)?].predict(&[], step)
    }
}

/// A single network whose input is augmented with the mixture posterior of
/// the demonstrator's signature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmAugmentedNn {
    pub gmm: Gmm,
    pub net: PolicyModel,
}

pub fn train_gmm_augmented_nn(
    demos: &[Demonstration],
    k: usize,
    layout: PolicyLayout,
    cfg: &TrainConfig,
) -> Result<GmmAugmentedNn> {
    if demos.is_empty() {
        return usage("empty dataset");
    }
    let sigs = demos.iter().map(demo_signature).collect::<Result<Vec<_>>>()?;
    let gmm = gmm_fit(&sigs, k, cfg.seed)?;
    let post = sigs
        .iter()
        .map(|s| gmm.posterior(s).map(ProbVector::into_inner))
        .collect::<Result<Vec<_>>>()?;
    let (net, _) = train_policy_with_extra(demos, layout, Some(&post), k, &cfg.homogeneous())?;
    Ok(GmmAugmentedNn { gmm, net })
}

impl GmmAugmentedNn {
    /// Posterior from the observed prefix; the mixture weights before any
    /// observation.
    pub fn posterior(&self, prefix: &[DemoStep]) -> Result<ProbVector> {
        let observed: Vec<&DemoStep> = prefix.iter().filter(|s| s.is_decision()).collect();
        if observed.is_empty() {
            return ProbVector::new(self.gmm.weights.clone());
        }
        self.gmm.posterior(&signature(observed)?)
    }

    pub fn predict(&self, prefix: &[DemoStep], step: &DemoStep) -> Result<ProbVector> {
        self.net.predict_with_extra(&[], step, &self.posterior(prefix)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn blobs(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centres = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..90 {
            let c = i % 3;
            pts.push(vec![centres[c][0] + rng.gen_range(-1.0..1.0), centres[c][1] + rng.gen_range(-1.0..1.0)]);
            labels.push(c);
        }
        (pts, labels)
    }

    #[test]
    fn kmeans_recovers_blobs() {
        let (pts, labels) = blobs(1);
        let km = kmeans_fit(&pts, 3, 7).unwrap();
        let mut map = [usize::MAX; 3];
        for (p, &l) in pts.iter().zip(&labels) {
            let a = km.assign(p);
            if map[l] == usize::MAX {
                map[l] = a;
            }
            assert_eq!(map[l], a);
        }
        assert!(km.wcss_trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(km, kmeans_fit(&pts, 3, 7).unwrap());
    }

    #[test]
    fn kmeans_with_k_equal_n_has_zero_spread() {
        let (pts, _) = blobs(2);
        let few = &pts[..5];
        let km = kmeans_fit(few, 5, 0).unwrap();
        assert!(km.wcss(few) < 1e-24);
        assert!(matches!(kmeans_fit(few, 6, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn single_component_matches_sample_statistics() {
        let (pts, _) = blobs(3);
        let g = gmm_fit(&pts, 1, 0).unwrap();
        let n = pts.len() as f64;
        for d in 0..2 {
            let mean = pts.iter().map(|p| p[d]).sum::<f64>() / n;
            let var = pts.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / n;
            assert!((g.means[0][d] - mean).abs() < 1e-12);
            assert!((g.variances[0][d] - var).abs() < 1e-9);
        }
        assert_eq!(g.weights, vec![1.0]);
    }

    #[test]
    fn separated_blobs_give_confident_posteriors() {
        let (pts, _) = blobs(4);
        let g = gmm_fit(&pts, 3, 1).unwrap();
        assert!(g.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()));
        for p in &pts {
            let post = g.posterior(p).unwrap();
            assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(post.iter().cloned().fold(0.0, f64::max) > 0.99);
        }
    }
}
