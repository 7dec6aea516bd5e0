//! K-Means++ seeding, Lloyd iterations and centroid inheritance across
//! curriculum rounds.

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Result, UmcError};
use crate::numerics::{squared_distance, Mat, Rng};

pub const MAX_ITERS: usize = 300;
pub const TOL: f64 = 1e-6;

/// Below this many points assignment runs serially.
const PAR_THRESHOLD: usize = 2048;

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterState {
    pub centroids: Mat<f64>,
    pub assignments: Vec<usize>,
    pub members: Vec<Vec<usize>>,
    pub inertia: f64,
    pub round: usize,
    /// Lloyd iterations run to reach this state.
    pub iterations: usize,
    /// Inertia after each assignment step, ending with the final one.
    pub inertia_history: Vec<f64>,
}

impl ClusterState {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }
}

fn nearest(point: &[f64], centroids: &Mat<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = squared_distance(point, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(points: &Mat<f64>, centroids: &Mat<f64>) -> Vec<(usize, f64)> {
    if points.rows() >= PAR_THRESHOLD {
        (0..points.rows())
            .into_par_iter()
            .map(|i| nearest(points.row(i), centroids))
            .collect()
    } else {
        points.iter_rows().map(|p| nearest(p, centroids)).collect()
    }
}

pub fn kmeanspp_init(points: &Mat<f64>, k: usize, rng: &mut Rng) -> Result<Mat<f64>> {
    let n = points.rows();
    if k == 0 || n < k {
        return Err(UmcError::TooFewPoints { n, k });
    }
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points
        .iter_rows()
        .map(|p| squared_distance(p, points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `target` just past the final partial sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, p) in points.iter_rows().enumerate() {
            d2[i] = d2[i].min(squared_distance(p, points.row(next)));
        }
    }
    Ok(points.select_rows(&chosen))
}

fn members_of(assignments: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); k];
    for (i, &c) in assignments.iter().enumerate() {
        members[c].push(i);
    }
    members
}

/// Lloyd's algorithm from the given centroids. Empty clusters are reseeded
/// with the points farthest from their current centroid.
pub fn lloyd(
    points: &Mat<f64>,
    init: &Mat<f64>,
    max_iters: usize,
    tol: f64,
) -> Result<ClusterState> {
    if init.cols() != points.cols() {
        return Err(UmcError::DimMismatch {
            expected: points.cols(),
            got: init.cols(),
        });
    }
    if init.rows() == 0 || points.rows() < init.rows() {
        return Err(UmcError::TooFewPoints {
            n: points.rows(),
            k: init.rows(),
        });
    }
    let k = init.rows();
    let dim = points.cols();
    let mut centroids = init.clone();
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iters {
        let assigned = assign(points, &centroids);
        history.push(assigned.iter().map(|a| a.1).sum());
        iterations += 1;

        let mut sums = Mat::<f64>::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, &(c, _)) in assigned.iter().enumerate() {
            counts[c] += 1;
            for (s, &v) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        let mut far: Vec<usize> = (0..points.rows()).collect();
        far.sort_by(|&a, &b| assigned[b].1.total_cmp(&assigned[a].1).then(a.cmp(&b)));
        let mut far = far.into_iter();

        let mut shift = 0.0f64;
        let mut next = Mat::zeros(k, dim);
        for c in 0..k {
            if counts[c] == 0 {
                let p = far.next().expect("n >= k");
                next.row_mut(c).copy_from_slice(points.row(p));
            } else {
                let inv = 1.0 / counts[c] as f64;
                for (o, &s) in next.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *o = s * inv;
                }
            }
            shift = shift.max(squared_distance(next.row(c), centroids.row(c)).sqrt());
        }
        centroids = next;
        if shift < tol {
            break;
        }
    }

    let assigned = assign(points, &centroids);
    let inertia = assigned.iter().map(|a| a.1).sum();
    history.push(inertia);
    let assignments: Vec<usize> = assigned.iter().map(|a| a.0).collect();
    Ok(ClusterState {
        members: members_of(&assignments, k),
        centroids,
        assignments,
        inertia,
        round: 0,
        iterations,
        inertia_history: history,
    })
}

/// K-Means++ and Lloyd `restarts` times; keeps the lowest inertia (earliest on ties).
pub fn kmeans(points: &Mat<f64>, k: usize, restarts: usize, rng: &mut Rng) -> Result<ClusterState> {
    let mut best: Option<ClusterState> = None;
    for _ in 0..restarts.max(1) {
        let init = kmeanspp_init(points, k, rng)?;
        let state = lloyd(points, &init, MAX_ITERS, TOL)?;
        if best.as_ref().is_none_or(|b| state.inertia < b.inertia) {
            best = Some(state);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// First round: K-Means++ then Lloyd. Later rounds: Lloyd seeded with the
/// previous round's centroids.
pub fn cluster_round(
    points: &Mat<f64>,
    prev: Option<&ClusterState>,
    k: usize,
    rng: &mut Rng,
) -> Result<ClusterState> {
    cluster_round_with(points, prev, k, 1, rng)
}

/// [`cluster_round`] with `restarts` K-Means++ initialisations in the first round.
pub fn cluster_round_with(
    points: &Mat<f64>,
    prev: Option<&ClusterState>,
    k: usize,
    restarts: usize,
    rng: &mut Rng,
) -> Result<ClusterState> {
    let Some(p) = prev else {
        return kmeans(points, k, restarts, rng);
    };
    if p.k() != k {
        return Err(UmcError::DimMismatch {
            expected: k,
            got: p.k(),
        });
    }
    let mut state = lloyd(points, &p.centroids, MAX_ITERS, TOL)?;
    state.round = p.round + 1;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::nmi;
    use crate::numerics::Rng;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn line(xs: &[f64]) -> Mat<f64> {
        Mat::from_vec(xs.len(), 1, xs.to_vec()).unwrap()
    }

    fn blobs(seed: u64, per: usize, k: usize, dim: usize, spread: f64) -> (Mat<f64>, Vec<usize>) {
        let mut rng = Rng::new(seed, "blobs");
        let centers: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect())
            .collect();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per {
                rows.push(
                    center
                        .iter()
                        .map(|&m| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            m + spread * z
                        })
                        .collect(),
                );
                labels.push(c);
            }
        }
        (Mat::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn four_points_two_clusters() {
        let pts = line(&[0.0, 1.0, 9.0, 10.0]);
        for seed in 0..50 {
            let init = kmeanspp_init(&pts, 2, &mut Rng::new(seed, "init")).unwrap();
            let mut c = init.data().to_vec();
            c.sort_by(f64::total_cmp);
            assert!(c[0] <= 1.0 && c[1] >= 9.0, "seed {seed}: {c:?}");
            let s = lloyd(&pts, &init, MAX_ITERS, TOL).unwrap();
            let mut c = s.centroids.data().to_vec();
            c.sort_by(f64::total_cmp);
            assert_eq!(c, vec![0.5, 9.5]);
            assert_eq!(s.inertia, 1.0);
        }
    }

    #[test]
    fn init_edge_cases() {
        let pts = line(&[3.0, 1.0, 2.0]);
        let init = kmeanspp_init(&pts, 3, &mut Rng::new(0, "i")).unwrap();
        let mut c = init.data().to_vec();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![1.0, 2.0, 3.0]);
        let same = line(&[4.0; 5]);
        let init = kmeanspp_init(&same, 3, &mut Rng::new(0, "i")).unwrap();
        assert!(init.data().iter().all(|&v| v == 4.0));
        assert!(matches!(
            kmeanspp_init(&pts, 4, &mut Rng::new(0, "i")),
            Err(UmcError::TooFewPoints { n: 3, k: 4 })
        ));
    }

    #[test]
    fn distinct_locations_zero_inertia() {
        let pts = line(&[1.0, 1.0, 5.0, 5.0, 9.0]);
        let s = cluster_round(&pts, None, 3, &mut Rng::new(2, "c")).unwrap();
        assert_eq!(s.inertia, 0.0);
        assert_eq!(s.members.iter().map(Vec::len).sum::<usize>(), 5);
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        let pts = line(&[0.0, 1.0, 2.0, 100.0]);
        let init = line(&[0.5, 1000.0, 2000.0]);
        let s = lloyd(&pts, &init, MAX_ITERS, TOL).unwrap();
        assert!(s.members.iter().all(|m| !m.is_empty()));
    }

    #[test]
    fn inertia_never_increases() {
        for seed in 0..100 {
            let (pts, _) = blobs(seed, 30, 5, 3, 3.0);
            let s = cluster_round(&pts, None, 5, &mut Rng::new(seed, "mono")).unwrap();
            for w in s.inertia_history.windows(2) {
                assert!(w[1] <= w[0], "seed {seed}: {:?}", s.inertia_history);
            }
        }
    }

    #[test]
    fn four_blobs_recovered() {
        let (pts, labels) = blobs(7, 50, 4, 8, 1.0);
        let s = cluster_round(&pts, None, 4, &mut Rng::new(7, "c")).unwrap();
        assert!(nmi(&labels, &s.assignments).unwrap() > 0.95);
    }

    #[test]
    fn inheritance() {
        let (pts, _) = blobs(3, 40, 4, 6, 2.0);
        let first = cluster_round(&pts, None, 4, &mut Rng::new(3, "c")).unwrap();
        let again = cluster_round(&pts, Some(&first), 4, &mut Rng::new(4, "c")).unwrap();
        assert_eq!(again.assignments, first.assignments);
        assert_eq!(again.round, 1);
        assert!(cluster_round(&pts, Some(&first), 3, &mut Rng::new(4, "c")).is_err());

        let (mut fresh, mut inherited) = (0, 0);
        for seed in 0..20 {
            let (pts, _) = blobs(seed, 40, 4, 6, 2.5);
            let first = cluster_round(&pts, None, 4, &mut Rng::new(seed, "c")).unwrap();
            let mut noise = Rng::new(seed, "perturb");
            let moved = Mat::from_fn(pts.rows(), pts.cols(), |r, c| {
                pts.get(r, c) + 0.01 * noise.random_range(-1.0..1.0)
            });
            inherited += cluster_round(&moved, Some(&first), 4, &mut Rng::new(seed, "d"))
                .unwrap()
                .iterations;
            fresh += cluster_round(&moved, None, 4, &mut Rng::new(seed, "d"))
                .unwrap()
                .iterations;
        }
        assert!(inherited < fresh, "inherited {inherited} vs fresh {fresh}");
    }

    #[test]
    fn restarts_never_raise_inertia() {
        for seed in 0..10 {
            let (pts, _) = blobs(seed, 20, 6, 2, 3.0);
            let one = kmeans(&pts, 6, 1, &mut Rng::new(seed, "r")).unwrap();
            let many = kmeans(&pts, 6, 8, &mut Rng::new(seed, "r")).unwrap();
            assert!(many.inertia <= one.inertia);
        }
    }

    #[test]
    fn deterministic() {
        let (pts, _) = blobs(5, 30, 3, 4, 2.0);
        let a = cluster_round(&pts, None, 3, &mut Rng::new(1, "c")).unwrap();
        let b = cluster_round(&pts, None, 3, &mut Rng::new(1, "c")).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn assignments_partition_and_are_nearest(
            data in prop::collection::vec(-50.0f64..50.0, 8..60),
            k in 1usize..4,
            seed in 0u64..100,
        ) {
            let n = data.len() / 2;
            let pts = Mat::from_vec(n, 2, data[..2 * n].to_vec()).unwrap();
            prop_assume!(n >= k);
            let s = cluster_round(&pts, None, k, &mut Rng::new(seed, "p")).unwrap();
            let mut all: Vec<usize> = s.members.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!(s.inertia >= 0.0);
            for (i, &c) in s.assignments.iter().enumerate() {
                let d = squared_distance(pts.row(i), s.centroids.row(c));
                for row in s.centroids.iter_rows() {
                    prop_assert!(d <= squared_distance(pts.row(i), row));
                }
            }
        }
    }
}
