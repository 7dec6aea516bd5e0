//! Density-based high-quality sample selection within each cluster.
//!
//! For every cluster, candidate neighbourhood sizes are tried; each one
//! yields a density ranking whose top-`m` subset is scored by cohesion, and
//! the best-scoring candidate decides which members count as high quality.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterState;
use crate::error::{Result, UmcError};
use crate::numerics::{squared_distance, Mat, Rng};

/// Guards the density of points whose neighbours all coincide with them.
pub const DENSITY_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionMode {
    Auto,
    Fixed(usize),
    /// Uniform random `m`-subset, for ablations.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CohesionObjective {
    Max,
    Min,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub threshold: f64,
    pub lower: f64,
    pub interval: f64,
    pub candidates: usize,
    pub mode: SelectionMode,
    pub objective: CohesionObjective,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            lower: 0.1,
            interval: 0.02,
            candidates: 10,
            mode: SelectionMode::Auto,
            objective: CohesionObjective::Max,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(UmcError::BadConfig(m.into()));
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("selection threshold must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lower) {
            return bad("lower proportion must lie in [0, 1]");
        }
        if !(self.interval > 0.0) {
            return bad("candidate interval must be positive");
        }
        if self.candidates == 0 {
            return bad("at least one candidate is required");
        }
        if self.lower + self.interval * (self.candidates - 1) as f64 > 1.0 + 1e-9 {
            return bad("candidate proportions exceed 1");
        }
        if self.mode == SelectionMode::Fixed(0) {
            return bad("fixed neighbourhood size must be positive");
        }
        Ok(())
    }
}

/// `floor` that tolerates representation error just below an integer.
fn floor_tol(x: f64) -> usize {
    (x + 1e-9).floor().max(0.0) as usize
}

/// Number of members to keep from a cluster of size `n` at threshold `t`.
pub fn keep_count(n: usize, t: f64) -> usize {
    floor_tol(n as f64 * t).clamp(1, n.max(1))
}

/// Per point, distances to every other member in ascending order.
fn neighbour_distances(points: &Mat<f64>) -> Vec<Vec<f64>> {
    let n = points.rows();
    (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| squared_distance(points.row(i), points.row(j)).sqrt())
                .collect();
            d.sort_by(f64::total_cmp);
            d
        })
        .collect()
}

fn density_from(sorted: &[Vec<f64>], k_near: usize) -> Vec<f64> {
    let k = k_near.clamp(1, sorted.len() - 1);
    sorted
        .iter()
        .map(|d| {
            let sum: f64 = d[..k].iter().sum();
            if sum == 0.0 {
                1.0 / DENSITY_EPS
            } else {
                k as f64 / sum
            }
        })
        .collect()
}

/// Reciprocal mean distance to the `k_near` nearest members of the same cluster.
pub fn density(points: &Mat<f64>, k_near: usize) -> Result<Vec<f64>> {
    if points.rows() < 2 {
        return Err(UmcError::ClusterTooSmall(points.rows()));
    }
    Ok(density_from(&neighbour_distances(points), k_near))
}

/// Stable ascending argsort; the highest densities sit at the tail.
pub fn rank_indices(rho: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rho.len()).collect();
    idx.sort_by(|&a, &b| rho[a].total_cmp(&rho[b]));
    idx
}

/// Candidate neighbourhood sizes `floor(n·(L + Δ′·q))`, clamped to `[1, n−1]`.
pub fn knear_candidates(n: usize, cfg: &SelectionConfig) -> Vec<usize> {
    let hi = n.saturating_sub(1).max(1);
    (0..cfg.candidates)
        .map(|q| floor_tol(n as f64 * (cfg.lower + cfg.interval * q as f64)).clamp(1, hi))
        .collect()
}

/// Sum over points of the mean distance to the other points.
pub fn cohesion(points: &Mat<f64>) -> Result<f64> {
    let m = points.rows();
    if m < 2 {
        return Err(UmcError::SubsetTooSmall(m));
    }
    let mut total = 0.0;
    for i in 0..m {
        let s: f64 = (0..m)
            .filter(|&j| j != i)
            .map(|j| squared_distance(points.row(i), points.row(j)).sqrt())
            .sum();
        total += s / (m - 1) as f64;
    }
    Ok(total)
}

fn top_m(rho: &[f64], m: usize) -> Vec<usize> {
    let ranked = rank_indices(rho);
    ranked[ranked.len() - m..].to_vec()
}

/// Chosen neighbourhood size (0 in random mode) and selected local indices.
pub fn select_cluster(
    points: &Mat<f64>,
    cfg: &SelectionConfig,
    rng: &mut Rng,
) -> Result<(usize, Vec<usize>)> {
    let n = points.rows();
    if n < 2 {
        return Err(UmcError::ClusterTooSmall(n));
    }
    let m = keep_count(n, cfg.threshold);
    match cfg.mode {
        SelectionMode::Random => {
            let mut picked = sample(rng, n, m).into_vec();
            picked.sort_unstable();
            Ok((0, picked))
        }
        SelectionMode::Fixed(k) => {
            let k = k.clamp(1, n - 1);
            Ok((k, top_m(&density(points, k)?, m)))
        }
        SelectionMode::Auto => {
            let candidates = knear_candidates(n, cfg);
            let sorted = neighbour_distances(points);
            if m < 2 {
                return Ok((
                    candidates[0],
                    top_m(&density_from(&sorted, candidates[0]), m),
                ));
            }
            let mut best: Option<(f64, usize, Vec<usize>)> = None;
            for &k in &candidates {
                let chosen = top_m(&density_from(&sorted, k), m);
                let score = cohesion(&points.select_rows(&chosen))?;
                let better = match (&best, cfg.objective) {
                    (None, _) => true,
                    (Some((b, ..)), CohesionObjective::Max) => score > *b,
                    (Some((b, ..)), CohesionObjective::Min) => score < *b,
                };
                if better {
                    best = Some((score, k, chosen));
                }
            }
            let (_, k, chosen) = best.expect("at least one candidate");
            Ok((k, chosen))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Chosen neighbourhood size per cluster; `None` for clusters below two members.
    pub k_near: Vec<Option<usize>>,
    /// Densities under the chosen neighbourhood size, in member order.
    pub densities: Vec<Vec<f64>>,
    /// High-quality indices, ascending.
    pub selected: Vec<usize>,
    /// All remaining indices, ascending.
    pub rest: Vec<usize>,
}

impl SelectionResult {
    pub fn is_selected(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &i in &self.selected {
            mask[i] = true;
        }
        mask
    }
}

pub fn select_all(
    points: &Mat<f64>,
    state: &ClusterState,
    cfg: &SelectionConfig,
    rng: &mut Rng,
) -> Result<SelectionResult> {
    cfg.validate()?;
    let per_cluster: Vec<Result<(Option<usize>, Vec<f64>, Vec<usize>)>> = state
        .members
        .par_iter()
        .enumerate()
        .map(|(c, members)| {
            if members.len() < 2 {
                return Ok((None, vec![], members.clone()));
            }
            let local = points.select_rows(members);
            let mut crng = rng.fork(&format!("cluster{c}"));
            let (k, chosen) = select_cluster(&local, cfg, &mut crng)?;
            let rho = if k > 0 { density(&local, k)? } else { vec![] };
            Ok((Some(k), rho, chosen.iter().map(|&i| members[i]).collect()))
        })
        .collect();

    let mut k_near = Vec::new();
    let mut densities = Vec::new();
    let mut selected = Vec::new();
    for r in per_cluster {
        let (k, rho, chosen) = r?;
        k_near.push(k);
        densities.push(rho);
        selected.extend(chosen);
    }
    selected.sort_unstable();
    let mut result = SelectionResult {
        k_near,
        densities,
        selected,
        rest: vec![],
    };
    let mask = result.is_selected(points.rows());
    result.rest = (0..points.rows()).filter(|&i| !mask[i]).collect();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::lloyd;
    use crate::numerics::Rng;
    use proptest::prelude::*;
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    fn line(xs: &[f64]) -> Mat<f64> {
        Mat::from_vec(xs.len(), 1, xs.to_vec()).unwrap()
    }

    #[test]
    fn density_examples() {
        let rho = density(&line(&[0.0, 1.0, 2.0, 10.0]), 2).unwrap();
        let want = [2.0 / 3.0, 1.0, 2.0 / 3.0, 2.0 / 17.0];
        for (r, w) in rho.iter().zip(want) {
            assert!((r - w).abs() < 1e-15);
        }
        assert_eq!(rank_indices(&rho), vec![3, 0, 2, 1]);
        assert!(density(&line(&[3.0; 4]), 2)
            .unwrap()
            .iter()
            .all(|&r| r == 1.0 / DENSITY_EPS));
        let dup = density(&line(&[1.0, 1.0, 5.0, 5.0, 9.0, 9.0]), 1).unwrap();
        assert!(dup.iter().all(|&r| r == 1.0 / DENSITY_EPS));
        assert!(matches!(
            density(&line(&[1.0]), 1),
            Err(UmcError::ClusterTooSmall(1))
        ));
        // k_near beyond n−1 is clamped
        assert_eq!(density(&line(&[0.0, 2.0]), 5).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_indices(&[0.1, 0.2, 0.3]), vec![0, 1, 2]);
        assert_eq!(rank_indices(&[1.0; 4]), vec![0, 1, 2, 3]);
    }

    #[test]
    fn candidate_examples() {
        let cfg = SelectionConfig::default();
        assert_eq!(
            knear_candidates(100, &cfg),
            vec![10, 12, 14, 16, 18, 20, 22, 24, 26, 28]
        );
        assert!(knear_candidates(5, &cfg)
            .iter()
            .all(|&k| (1..=4).contains(&k)));
        assert_eq!(knear_candidates(2, &cfg), vec![1; 10]);
    }

    #[test]
    fn cohesion_examples() {
        assert_eq!(cohesion(&line(&[0.0, 5.0])).unwrap(), 10.0);
        assert_eq!(cohesion(&line(&[2.0; 4])).unwrap(), 0.0);
        let tri = Mat::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, 3f64.sqrt() / 2.0]])
            .unwrap();
        assert!((cohesion(&tri).unwrap() - 3.0).abs() < 1e-12);
        assert!(matches!(
            cohesion(&line(&[1.0])),
            Err(UmcError::SubsetTooSmall(1))
        ));
    }

    #[test]
    fn keep_counts() {
        assert_eq!(keep_count(10, 0.3), 3);
        assert_eq!(keep_count(10, 0.7), 7);
        assert_eq!(keep_count(10, 0.01), 1);
        assert_eq!(keep_count(7, 1.0), 7);
    }

    #[test]
    fn select_cluster_ties_and_degenerate() {
        let mut rng = Rng::new(0, "s");
        // two tight pairs far apart plus a loner: every candidate keeps the same pair
        let pts = line(&[0.0, 0.0, 0.0, 50.0, 100.0]);
        let cfg = SelectionConfig {
            threshold: 0.6,
            ..SelectionConfig::default()
        };
        let (k, chosen) = select_cluster(&pts, &cfg, &mut rng).unwrap();
        assert_eq!(k, knear_candidates(5, &cfg)[0]);
        assert_eq!(chosen, vec![0, 1, 2]);

        let cfg = SelectionConfig {
            threshold: 0.01,
            ..SelectionConfig::default()
        };
        let pts = line(&[0.0, 1.0, 1.1, 9.0]);
        let (k, chosen) = select_cluster(&pts, &cfg, &mut rng).unwrap();
        assert_eq!(k, 1);
        assert_eq!(chosen.len(), 1);
        assert!(chosen[0] == 1 || chosen[0] == 2);
    }

    #[test]
    fn select_cluster_modes() {
        let mut rng = Rng::new(1, "s");
        let pts = line(&[0.0, 0.1, 0.2, 0.35, 7.0, 9.0]);
        let cfg = SelectionConfig {
            threshold: 0.5,
            mode: SelectionMode::Fixed(2),
            ..SelectionConfig::default()
        };
        let (k, mut chosen) = select_cluster(&pts, &cfg, &mut rng).unwrap();
        chosen.sort_unstable();
        assert_eq!((k, chosen), (2, vec![0, 1, 2]));
        let cfg = SelectionConfig {
            threshold: 0.5,
            mode: SelectionMode::Random,
            ..SelectionConfig::default()
        };
        let (_, chosen) = select_cluster(&pts, &cfg, &mut rng).unwrap();
        assert_eq!(chosen.len(), 3);
    }

    /// 50 tight inliers and 5 outliers at ten times the spread, one cluster.
    fn planted(seed: u64, dim: usize) -> (Mat<f64>, Vec<bool>) {
        let mut rng = Rng::new(seed, "planted");
        let mut rows = Vec::new();
        let mut outlier = Vec::new();
        for i in 0..55 {
            let s = if i < 50 { 1.0 } else { 10.0 };
            rows.push(
                (0..dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        s * z
                    })
                    .collect(),
            );
            outlier.push(i >= 50);
        }
        (Mat::from_rows(&rows).unwrap(), outlier)
    }

    #[test]
    fn planted_outliers_excluded() {
        let cfg = SelectionConfig {
            threshold: 0.5,
            ..SelectionConfig::default()
        };
        for seed in 0..5 {
            let (pts, outlier) = planted(seed, 8);
            let (_, chosen) = select_cluster(&pts, &cfg, &mut Rng::new(seed, "s")).unwrap();
            assert_eq!(chosen.len(), 27);
            assert!(chosen.iter().all(|&i| !outlier[i]), "seed {seed}");
        }
    }

    fn state_for(points: &Mat<f64>, k: usize, rng: &mut Rng) -> ClusterState {
        let init = crate::cluster::kmeanspp_init(points, k, rng).unwrap();
        lloyd(points, &init, 300, 1e-6).unwrap()
    }

    #[test]
    fn select_all_extremes() {
        let mut rng = Rng::new(2, "all");
        let pts = Mat::from_fn(40, 3, |_, _| rng.random_range(-5.0..5.0));
        let state = state_for(&pts, 4, &mut rng);
        let full = SelectionConfig {
            threshold: 1.0,
            ..SelectionConfig::default()
        };
        let r = select_all(&pts, &state, &full, &mut rng).unwrap();
        assert_eq!(r.selected, (0..40).collect::<Vec<_>>());
        assert!(r.rest.is_empty());
        let tiny = SelectionConfig {
            threshold: 0.0,
            ..SelectionConfig::default()
        };
        let r = select_all(&pts, &state, &tiny, &mut rng).unwrap();
        assert_eq!(r.selected.len(), 4);
        let mut clusters: Vec<usize> = r.selected.iter().map(|&i| state.assignments[i]).collect();
        clusters.dedup();
        assert_eq!(clusters.len(), 4);
    }

    proptest! {
        #[test]
        fn density_translation_and_scale(
            data in prop::collection::vec(-10.0f64..10.0, 6..30),
            shift in -100.0f64..100.0,
            scale in 0.1f64..10.0,
            k in 1usize..4,
        ) {
            let pts = line(&data);
            let rho = density(&pts, k).unwrap();
            prop_assume!(rho.iter().all(|&r| r < 1e11));
            let moved = density(&pts.map(|v| v + shift), k).unwrap();
            let scaled = density(&pts.map(|v| v * scale), k).unwrap();
            for i in 0..rho.len() {
                prop_assert!((rho[i] - moved[i]).abs() <= 1e-6 * rho[i]);
                prop_assert!((rho[i] / scale - scaled[i]).abs() <= 1e-9 * rho[i]);
            }
        }

        #[test]
        fn selection_partitions_indices(
            data in prop::collection::vec(-10.0f64..10.0, 20..60),
            k in 1usize..5,
            t in 0.0f64..=1.0,
            seed in 0u64..50,
        ) {
            let n = data.len() / 2;
            let pts = Mat::from_vec(n, 2, data[..2 * n].to_vec()).unwrap();
            let mut rng = Rng::new(seed, "p");
            let state = state_for(&pts, k, &mut rng);
            let cfg = SelectionConfig { threshold: t, ..SelectionConfig::default() };
            let r = select_all(&pts, &state, &cfg, &mut rng).unwrap();
            let mut all = [r.selected.clone(), r.rest.clone()].concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let expected: usize = state.members.iter()
                .map(|m| if m.len() < 2 { m.len() } else { keep_count(m.len(), t) })
                .sum();
            prop_assert_eq!(r.selected.len(), expected);
            for (c, m) in state.members.iter().enumerate() {
                for &i in r.selected.iter().filter(|&&i| state.assignments[i] == c) {
                    prop_assert!(m.contains(&i));
                }
            }
        }
    }
}
