//! Choice of the number of components from the k-means relabeling of the
//! component coefficient draws.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gibbs::fit;
use crate::model::{GroupedPanel, ModelConfig, PosteriorDraws, SpatialGraph};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iterations: usize,
    /// Stop when the inertia improves by less than this fraction.
    pub rel_tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            restarts: 20,
            max_iterations: 100,
            rel_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = dist2(p, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding. Fails when fewer than `k` distinct points exist.
fn seed_centroids<R: Rng + ?Sized>(rng: &mut R, points: &[Vec<f64>], k: usize) -> Result<Vec<Vec<f64>>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            return Err(Error::numerical(
                "k-means",
                format!("fewer than {k} distinct points, clustering is degenerate"),
            ));
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = points[pick].clone();
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    Ok(centroids)
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, cfg: &KMeansConfig) -> KMeans {
    let dim = points[0].len();
    let k = centroids.len();
    let mut labels = vec![0; points.len()];
    let mut prev = f64::INFINITY;
    for _ in 0..cfg.max_iterations {
        let mut inertia = 0.0;
        for (p, l) in points.iter().zip(labels.iter_mut()) {
            let (c, d) = nearest(p, &centroids);
            *l = c;
            inertia += d;
        }
        if prev.is_finite() && prev - inertia <= cfg.rel_tol * prev {
            break;
        }
        prev = inertia;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut sizes = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            sizes[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if sizes[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / sizes[c] as f64).collect();
            } else {
                // an emptied cluster takes over the point farthest from its centroid
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        dist2(&points[a], &centroids[labels[a]]).total_cmp(&dist2(&points[b], &centroids[labels[b]]))
                    })
                    .unwrap_or(0);
                centroids[c] = points[far].clone();
                labels[far] = c;
            }
        }
    }
    // labels must agree with the final centroids
    let mut inertia = 0.0;
    for (p, l) in points.iter().zip(labels.iter_mut()) {
        let (c, d) = nearest(p, &centroids);
        *l = c;
        inertia += d;
    }
    KMeans {
        centroids,
        labels,
        inertia,
    }
}

/// Lloyd's algorithm from `cfg.restarts` k-means++ seedings, keeping the
/// lowest inertia.
pub fn kmeans<R: Rng + ?Sized>(rng: &mut R, points: &[Vec<f64>], k: usize, cfg: &KMeansConfig) -> Result<KMeans> {
    if k == 0 || points.len() < k {
        return Err(Error::InvalidParameter(format!("{} points cannot form {k} clusters", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim || p.iter().any(|x| !x.is_finite())) {
        return Err(Error::InvalidParameter("points must be finite and of equal dimension".into()));
    }
    let mut best: Option<KMeans> = None;
    for _ in 0..cfg.restarts.max(1) {
        let start = seed_centroids(rng, points, k)?;
        let run = lloyd(points, start, cfg);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Outcome of the relabeling check for one number of components.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingReport {
    pub k: usize,
    /// Share of sweeps whose cluster labels sum to `K(K+1)/2`.
    pub fraction: f64,
    /// Share of sweeps whose cluster labels are a permutation of `1..K`.
    pub exact_fraction: f64,
    pub sum_matches: Vec<bool>,
    pub permutation_matches: Vec<bool>,
    pub centroids: Vec<Vec<f64>>,
}

/// Cluster the pooled coefficient vectors of all sweeps into `K` groups and
/// check, sweep by sweep, whether the components fall into distinct groups.
///
/// Points are clustered in lexicographic order, so the result does not depend
/// on how the chain labels its components.
pub fn matching_fraction<R: Rng + ?Sized>(
    rng: &mut R,
    draws: &[PosteriorDraws],
    cfg: &KMeansConfig,
) -> Result<MatchingReport> {
    let states: Vec<_> = draws.iter().flat_map(|d| &d.states).collect();
    if states.len() < 2 {
        return Err(Error::InvalidParameter("matching fraction needs at least two draws".into()));
    }
    let k = states[0].n_components();
    if states.iter().any(|s| s.n_components() != k) {
        return Err(Error::InvalidParameter("draws disagree on the number of components".into()));
    }
    let n = states.len();
    if k == 1 {
        let centroid = {
            let dim = states[0].components[0].beta.len();
            let mut c = vec![0.0; dim];
            for s in &states {
                for (a, b) in c.iter_mut().zip(&s.components[0].beta) {
                    *a += b / n as f64;
                }
            }
            c
        };
        return Ok(MatchingReport {
            k,
            fraction: 1.0,
            exact_fraction: 1.0,
            sum_matches: vec![true; n],
            permutation_matches: vec![true; n],
            centroids: vec![centroid],
        });
    }
    let pooled: Vec<Vec<f64>> = states
        .iter()
        .flat_map(|s| s.components.iter().map(|c| c.beta.clone()))
        .collect();
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| {
        pooled[a]
            .iter()
            .zip(&pooled[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sorted: Vec<Vec<f64>> = order.iter().map(|&i| pooled[i].clone()).collect();
    let km = kmeans(rng, &sorted, k, cfg)?;
    let mut labels = vec![0; pooled.len()];
    for (pos, &orig) in order.iter().enumerate() {
        labels[orig] = km.labels[pos] + 1;
    }
    let target = k * (k + 1) / 2;
    let mut sum_matches = Vec::with_capacity(n);
    let mut permutation_matches = Vec::with_capacity(n);
    for s in 0..n {
        let r = &labels[s * k..(s + 1) * k];
        let mut seen = vec![false; k + 1];
        let exact = r.iter().all(|&l| !std::mem::replace(&mut seen[l], true));
        let sum = r.iter().sum::<usize>() == target;
        debug_assert!(!exact || sum);
        sum_matches.push(sum);
        permutation_matches.push(exact);
    }
    let share = |v: &[bool]| v.iter().filter(|&&b| b).count() as f64 / n as f64;
    Ok(MatchingReport {
        k,
        fraction: share(&sum_matches),
        exact_fraction: share(&permutation_matches),
        sum_matches,
        permutation_matches,
        centroids: km.centroids,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub reports: Vec<MatchingReport>,
    pub threshold: f64,
    /// Largest `K` whose matching fraction reaches the threshold.
    pub recommended: Option<usize>,
}

pub const DEFAULT_THRESHOLD: f64 = 0.999;

/// Fit one chain per `K` in `ks` and report the matching fractions. Fits run
/// concurrently on at most `jobs` threads; every fit and clustering uses a
/// stream derived from the configured seed, so results do not depend on `jobs`.
pub fn select_k(
    panel: &GroupedPanel,
    graph: &SpatialGraph,
    config: &ModelConfig,
    ks: &[usize],
    jobs: usize,
    threshold: f64,
) -> Result<Selection> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("numbers of components must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let reports = pool.install(|| {
        ks.par_iter()
            .map(|&k| {
                let cfg = ModelConfig {
                    n_components: k,
                    ..config.clone()
                };
                let draws = fit(panel, graph, &cfg).map_err(|e| e.within(&format!("K = {k}")))?;
                let mut rng = RngStream::new(config.mcmc.seed).split(u64::MAX - k as u64);
                matching_fraction(&mut rng, &draws, &KMeansConfig::default())
                    .map_err(|e| e.within(&format!("K = {k}")))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let recommended = reports
        .iter()
        .filter(|r| r.fraction >= threshold)
        .map(|r| r.k)
        .max();
    Ok(Selection {
        reports,
        threshold,
        recommended,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ComponentParams, ParamState};
    use crate::rng::standard_normal;

    fn state(betas: &[Vec<f64>]) -> ParamState {
        ParamState {
            components: betas
                .iter()
                .map(|b| ComponentParams {
                    beta: b.clone(),
                    sigma2: 0.5,
                })
                .collect(),
            effects: vec![],
        }
    }

    fn chain(states: Vec<ParamState>) -> Vec<PosteriorDraws> {
        vec![PosteriorDraws {
            config: ModelConfig::default(),
            seed: 0,
            period: None,
            states,
        }]
    }

    fn noisy_draws(rng: &mut RngStream, centres: &[Vec<f64>], sd: f64, n: usize) -> Vec<ParamState> {
        (0..n)
            .map(|_| {
                let b: Vec<Vec<f64>> = centres
                    .iter()
                    .map(|c| c.iter().map(|x| x + sd * standard_normal(rng)).collect())
                    .collect();
                state(&b)
            })
            .collect()
    }

    #[test]
    fn kmeans_separates_blobs() {
        let mut rng = RngStream::new(1);
        let centres = [vec![0.0, 0.0], vec![5.0, 5.0], vec![-5.0, 5.0]];
        let pts: Vec<Vec<f64>> = (0..300)
            .map(|i| centres[i % 3].iter().map(|c| c + 0.3 * standard_normal(&mut rng)).collect())
            .collect();
        let km = kmeans(&mut rng, &pts, 3, &KMeansConfig::default()).unwrap();
        for i in 0..300 {
            assert_eq!(km.labels[i], km.labels[i % 3]);
        }
        let distinct: std::collections::BTreeSet<_> = km.labels.iter().collect();
        assert_eq!(distinct.len(), 3);
    }

    #[test]
    fn kmeans_hand_example() {
        let pts = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]];
        let km = kmeans(&mut RngStream::new(2), &pts, 2, &KMeansConfig::default()).unwrap();
        assert!((km.inertia - 1.0).abs() < 1e-12);
        assert_eq!(km.labels[0], km.labels[1]);
        assert_ne!(km.labels[0], km.labels[2]);
    }

    #[test]
    fn identical_points_are_degenerate() {
        let pts = vec![vec![1.0, 2.0]; 10];
        let err = kmeans(&mut RngStream::new(3), &pts, 2, &KMeansConfig::default()).unwrap_err();
        assert!(err.is_numerical());
        let draws = chain(vec![state(&[vec![1.0], vec![1.0]]); 5]);
        assert!(matching_fraction(&mut RngStream::new(3), &draws, &KMeansConfig::default()).is_err());
    }

    #[test]
    fn single_component_matches_trivially() {
        let draws = chain(vec![state(&[vec![1.0, 2.0]]), state(&[vec![3.0, 4.0]])]);
        let r = matching_fraction(&mut RngStream::new(4), &draws, &KMeansConfig::default()).unwrap();
        assert_eq!((r.fraction, r.exact_fraction), (1.0, 1.0));
        assert_eq!(r.centroids, vec![vec![2.0, 3.0]]);
    }

    #[test]
    fn separated_components_match_fully() {
        let mut rng = RngStream::new(5);
        let centres = vec![vec![0.5, 0.0, 1.0], vec![-0.5, 1.0, 0.0], vec![2.0, -1.0, -1.0]];
        let draws = chain(noisy_draws(&mut rng, &centres, 0.05, 500));
        let r = matching_fraction(&mut rng, &draws, &KMeansConfig::default()).unwrap();
        assert_eq!(r.fraction, 1.0);
        assert_eq!(r.exact_fraction, 1.0);
    }

    #[test]
    fn overlapping_components_fall_short() {
        let mut rng = RngStream::new(6);
        let centres = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![4.0, 4.0]];
        let draws = chain(noisy_draws(&mut rng, &centres, 0.5, 500));
        let r = matching_fraction(&mut rng, &draws, &KMeansConfig::default()).unwrap();
        assert!(r.fraction < 1.0, "{}", r.fraction);
        for (e, s) in r.permutation_matches.iter().zip(&r.sum_matches) {
            assert!(!e || *s);
        }
        assert!(r.exact_fraction <= r.fraction);
    }

    #[test]
    fn relabeling_components_leaves_fraction_unchanged() {
        let mut rng = RngStream::new(7);
        let centres = vec![vec![0.0, 0.0], vec![0.3, 0.1], vec![2.0, 2.0]];
        let states = noisy_draws(&mut rng, &centres, 0.3, 300);
        let permuted: Vec<ParamState> = states
            .iter()
            .map(|s| {
                let mut p = s.clone();
                p.components = vec![s.components[2].clone(), s.components[0].clone(), s.components[1].clone()];
                p
            })
            .collect();
        let a = matching_fraction(&mut RngStream::new(9), &chain(states), &KMeansConfig::default()).unwrap();
        let b = matching_fraction(&mut RngStream::new(9), &chain(permuted), &KMeansConfig::default()).unwrap();
        assert_eq!(a.fraction, b.fraction);
        assert_eq!(a.exact_fraction, b.exact_fraction);
        assert_eq!(a.sum_matches, b.sum_matches);
    }

    #[test]
    fn too_few_draws_is_an_error() {
        let draws = chain(vec![state(&[vec![1.0], vec![2.0]])]);
        assert!(matching_fraction(&mut RngStream::new(1), &draws, &KMeansConfig::default()).is_err());
    }
}
