//! Lloyd-style k-means on the SPD manifold: assignments by geodesic distance,
//! centers by Karcher mean.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::spd::{karcher_mean, KarcherOptions, SpdMatrix, TangentPole};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansOptions {
    pub max_rounds: usize,
    pub karcher: KarcherOptions,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            max_rounds: 100,
            karcher: KarcherOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Clustering {
    pub centers: Vec<SpdMatrix>,
    /// Members per center; every entry is at least 1.
    pub counts: Vec<usize>,
    pub assignments: Vec<usize>,
    /// Sum of squared geodesic distances from each point to its center.
    pub inertia: f64,
    /// Inertia after the assignment step of every round, in order.
    pub inertia_history: Vec<f64>,
    pub converged: bool,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centers.len()
    }
}

fn check_points(points: &[SpdMatrix], k: usize) -> Result<()> {
    let first = points
        .first()
        .ok_or(Error::EmptyInput("no points to cluster"))?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > points.len() {
        return Err(Error::KTooLarge {
            k,
            points: points.len(),
        });
    }
    if let Some(p) = points.iter().find(|p| p.dim() != first.dim()) {
        return Err(Error::DimensionMismatch {
            expected: first.dim(),
            actual: p.dim(),
        });
    }
    Ok(())
}

/// Indices of k-means++ seeds: the first uniformly, each next one with
/// probability proportional to its squared distance from the nearest seed.
pub fn kmeans_pp_indices(points: &[SpdMatrix], k: usize, seed: u64) -> Result<Vec<usize>> {
    check_points(points, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = points.len();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut nearest = vec![f64::INFINITY; n];
    while chosen.len() < k {
        let pole = TangentPole::new(points[*chosen.last().expect("non-empty")].clone())?;
        let d: Vec<f64> = points
            .par_iter()
            .map(|p| pole.distance(p).map(|d| d * d))
            .collect::<Result<_>>()?;
        for (best, di) in nearest.iter_mut().zip(d) {
            *best = best.min(di);
        }
        for &c in &chosen {
            nearest[c] = 0.0;
        }
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &w) in nearest.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // all remaining points coincide with seeds
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen.push(next);
    }
    Ok(chosen)
}

pub fn kmeans_pp_init(points: &[SpdMatrix], k: usize, seed: u64) -> Result<Vec<SpdMatrix>> {
    Ok(kmeans_pp_indices(points, k, seed)?
        .into_iter()
        .map(|i| points[i].clone())
        .collect())
}

pub fn geodesic_kmeans(
    points: &[SpdMatrix],
    k: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<Clustering> {
    let init = kmeans_pp_init(points, k, seed)?;
    geodesic_kmeans_from(points, init, opts)
}

struct Assignment {
    labels: Vec<usize>,
    dist2: Vec<f64>,
    inertia: f64,
}

fn assign(points: &[SpdMatrix], centers: &[SpdMatrix]) -> Result<Assignment> {
    let poles: Vec<TangentPole> = centers
        .iter()
        .map(|c| TangentPole::new(c.clone()))
        .collect::<Result<_>>()?;
    let best: Vec<(usize, f64)> = points
        .par_iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (k, pole) in poles.iter().enumerate() {
                let d = pole.distance(p)?;
                let d2 = d * d;
                // strict: lowest index wins ties
                if d2 < best.1 {
                    best = (k, d2);
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    let (labels, dist2): (Vec<usize>, Vec<f64>) = best.into_iter().unzip();
    let inertia = dist2.iter().sum();
    Ok(Assignment {
        labels,
        dist2,
        inertia,
    })
}

fn counts_of(labels: &[usize], k: usize) -> Vec<usize> {
    let mut counts = vec![0; k];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// Moves, for every empty cluster, the point farthest from its current center
/// (taken from a cluster with more than one member) into that cluster and
/// reseeds the empty center there. Returns whether anything changed.
fn repair_empty_clusters(
    points: &[SpdMatrix],
    centers: &mut [SpdMatrix],
    labels: &mut [usize],
    dist2: &mut [f64],
) -> bool {
    let k = centers.len();
    let mut counts = counts_of(labels, k);
    let mut changed = false;
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let donor =
            (0..points.len())
                .filter(|&i| counts[labels[i]] > 1)
                .fold(None::<usize>, |best, i| match best {
                    Some(b) if dist2[b] >= dist2[i] => Some(b),
                    _ => Some(i),
                });
        let Some(i) = donor else { break };
        counts[labels[i]] -= 1;
        counts[c] += 1;
        labels[i] = c;
        dist2[i] = 0.0;
        centers[c] = points[i].clone();
        changed = true;
    }
    changed
}

/// Lloyd iterations from the given initial centers. Stops when assignments
/// repeat or after `max_rounds`; the latter returns the current state with
/// `converged = false`.
pub fn geodesic_kmeans_from(
    points: &[SpdMatrix],
    initial: Vec<SpdMatrix>,
    opts: &KMeansOptions,
) -> Result<Clustering> {
    check_points(points, initial.len())?;
    for c in &initial {
        crate::spd::check_dims(points[0].dim(), c.dim())?;
    }
    let k = initial.len();
    let mut centers = initial;
    let mut history = Vec::new();
    let mut previous: Option<Vec<usize>> = None;
    let mut converged = false;

    for _ in 0..opts.max_rounds.max(1) {
        let mut a = assign(points, &centers)?;
        history.push(a.inertia);
        if previous.as_deref() == Some(&a.labels[..]) {
            converged = true;
            return Ok(Clustering {
                counts: counts_of(&a.labels, k),
                centers,
                assignments: a.labels,
                inertia: a.inertia,
                inertia_history: history,
                converged,
            });
        }
        repair_empty_clusters(points, &mut centers, &mut a.labels, &mut a.dist2);
        centers = (0..k)
            .into_par_iter()
            .map(|c| {
                let members: Vec<SpdMatrix> = points
                    .iter()
                    .zip(&a.labels)
                    .filter(|(_, &l)| l == c)
                    .map(|(p, _)| p.clone())
                    .collect();
                karcher_mean(&members, &opts.karcher)
            })
            .collect::<Result<_>>()?;
        previous = Some(a.labels);
    }

    let mut a = assign(points, &centers)?;
    if repair_empty_clusters(points, &mut centers, &mut a.labels, &mut a.dist2) {
        a.inertia = a.dist2.iter().sum();
    }
    if previous.as_deref() == Some(&a.labels[..]) {
        converged = true;
    }
    history.push(a.inertia);
    Ok(Clustering {
        counts: counts_of(&a.labels, k),
        centers,
        assignments: a.labels,
        inertia: a.inertia,
        inertia_history: history,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::{geodesic_distance, karcher_mean_with_report};
    use nalgebra::DMatrix;

    /// Points scattered around `center·I` with small symmetric perturbations.
    fn group(center: f64, n: usize, seed: u64) -> Vec<SpdMatrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-0.05..0.05));
                let s = (&a + a.transpose()) * 0.5;
                crate::spd::exp_map(
                    &SpdMatrix::from_diagonal(&[center, center]).unwrap(),
                    &crate::spd::SymMatrix::new(s * center).unwrap(),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn pp_with_k_equal_n_picks_everything() {
        let pts = group(1.0, 7, 1);
        let mut idx = kmeans_pp_indices(&pts, 7, 3).unwrap();
        idx.sort();
        assert_eq!(idx, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn pp_handles_duplicates() {
        let pts = vec![SpdMatrix::identity(2); 4];
        let mut idx = kmeans_pp_indices(&pts, 4, 9).unwrap();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn pp_single_seed_is_a_point() {
        let pts = group(1.0, 5, 2);
        let c = kmeans_pp_init(&pts, 1, 11).unwrap();
        assert_eq!(c.len(), 1);
        assert!(pts.contains(&c[0]));
        assert_eq!(kmeans_pp_init(&pts, 1, 11).unwrap(), c);
    }

    #[test]
    fn pp_errors() {
        let pts = group(1.0, 3, 2);
        assert!(matches!(
            kmeans_pp_init(&pts, 4, 0),
            Err(Error::KTooLarge { k: 4, points: 3 })
        ));
        assert!(matches!(
            kmeans_pp_init(&[], 1, 0),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            kmeans_pp_init(&pts, 0, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn pp_seeds_both_groups() {
        let mut pts = group(1.0, 20, 5);
        pts.extend(group(100.0, 20, 6));
        let hits = (0..100)
            .filter(|&seed| {
                let idx = kmeans_pp_indices(&pts, 2, seed).unwrap();
                (idx[0] < 20) != (idx[1] < 20)
            })
            .count();
        assert!(hits >= 99, "{hits}");
    }

    #[test]
    fn k1_is_karcher_mean() {
        let pts = group(3.0, 12, 7);
        let opts = KMeansOptions::default();
        let c = geodesic_kmeans(&pts, 1, 0, &opts).unwrap();
        assert!(c.converged);
        assert_eq!(c.counts, vec![12]);
        let m = karcher_mean_with_report(&pts, &opts.karcher).unwrap().mean;
        assert!(geodesic_distance(&m, &c.centers[0]).unwrap() < 1e-9);
    }

    #[test]
    fn separates_two_groups() {
        let mut pts = group(1.0, 15, 8);
        pts.extend(group(100.0, 9, 9));
        let c = geodesic_kmeans(&pts, 2, 4, &KMeansOptions::default()).unwrap();
        assert!(c.converged);
        let first = c.assignments[0];
        assert!(c.assignments[..15].iter().all(|&l| l == first));
        assert!(c.assignments[15..].iter().all(|&l| l != first));
        let mut counts = c.counts.clone();
        counts.sort();
        assert_eq!(counts, vec![9, 15]);
        for w in c.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn deterministic() {
        let mut pts = group(1.0, 10, 10);
        pts.extend(group(4.0, 10, 11));
        pts.extend(group(16.0, 10, 12));
        let a = geodesic_kmeans(&pts, 3, 77, &KMeansOptions::default()).unwrap();
        let b = geodesic_kmeans(&pts, 3, 77, &KMeansOptions::default()).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.centers, b.centers);
        assert_eq!(a.inertia.to_bits(), b.inertia.to_bits());
    }

    #[test]
    fn empty_cluster_is_reseeded_at_farthest_point() {
        let pts = group(1.0, 6, 13);
        let mut centers = vec![
            pts[0].clone(),
            SpdMatrix::from_diagonal(&[1e6, 1e6]).unwrap(),
        ];
        let mut labels = vec![0; 6];
        let mut dist2: Vec<f64> = pts
            .iter()
            .map(|p| geodesic_distance(&centers[0], p).unwrap().powi(2))
            .collect();
        let far = (0..6)
            .max_by(|&a, &b| dist2[a].total_cmp(&dist2[b]))
            .unwrap();
        assert!(repair_empty_clusters(
            &pts,
            &mut centers,
            &mut labels,
            &mut dist2
        ));
        assert_eq!(labels[far], 1);
        assert_eq!(centers[1], pts[far]);
        assert_eq!(counts_of(&labels, 2), vec![5, 1]);
    }

    #[test]
    fn far_initial_center_keeps_k() {
        let pts = group(1.0, 8, 14);
        let init = vec![
            pts[0].clone(),
            SpdMatrix::from_diagonal(&[1e6, 1e6]).unwrap(),
        ];
        let c = geodesic_kmeans_from(&pts, init, &KMeansOptions::default()).unwrap();
        assert_eq!(c.counts.iter().sum::<usize>(), 8);
        assert!(c.counts.iter().all(|&n| n >= 1));
    }

    #[test]
    fn round_cap_returns_unconverged_state() {
        let mut pts = group(1.0, 10, 15);
        pts.extend(group(2.0, 10, 16));
        let opts = KMeansOptions {
            max_rounds: 1,
            ..Default::default()
        };
        let c = geodesic_kmeans(&pts, 3, 1, &opts).unwrap();
        assert_eq!(c.assignments.len(), 20);
        assert!(c.counts.iter().all(|&n| n >= 1));
        assert_eq!(c.counts.iter().sum::<usize>(), 20);
    }
}
