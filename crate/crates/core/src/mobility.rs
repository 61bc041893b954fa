//! Pedestrian-density prediction: cluster the users in the transition band
//! of neighboring cells, detect the clusters drifting toward the cell, and
//! combine them with present/leaver counts into the density estimate.

use crate::model::{NetworkTopology, Point, Rect};
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MobilityError {
    #[error("clustering needs at least one point")]
    NoPoints,
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

/// Result of clustering one cell's transition band.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    /// Cluster centroids at the current slot.
    pub centroids: Vec<Point>,
    /// Mean of the members' previous-slot positions, when history was attached.
    pub prev_centroids: Vec<Option<Point>>,
    /// Per-input-point cluster index; `None` once the cluster was filtered out.
    pub assignments: Vec<Option<usize>>,
    /// Members per cluster.
    pub counts: Vec<usize>,
    /// Set when the requested cluster count exceeded the point count.
    pub kappa_reduced: bool,
    /// Within-cluster squared-error loss after each Lloyd iteration of the
    /// winning restart.
    pub iteration_losses: Vec<f64>,
}

impl ClusterState {
    pub fn cluster_count(&self) -> usize {
        self.centroids.len()
    }

    pub fn loss(&self) -> f64 {
        self.iteration_losses.last().copied().unwrap_or(0.0)
    }

    /// Attach per-cluster previous centroids as the mean of each cluster's
    /// members at `previous` (aligned with the clustering input).
    pub fn with_member_history(mut self, previous: &[Point]) -> Self {
        let mut sums = vec![(0.0, 0.0, 0usize); self.centroids.len()];
        for (j, a) in self.assignments.iter().enumerate() {
            if let Some(i) = a {
                sums[*i].0 += previous[j].x;
                sums[*i].1 += previous[j].y;
                sums[*i].2 += 1;
            }
        }
        self.prev_centroids = sums
            .iter()
            .map(|&(x, y, n)| {
                if n > 0 {
                    Some(Point::new(x / n as f64, y / n as f64))
                } else {
                    None
                }
            })
            .collect();
        self
    }
}

/// Present/leaver statistics of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PedestrianStats {
    present: usize,
    leavers: usize,
}

impl PedestrianStats {
    pub fn new(present: usize, leavers: usize) -> Result<Self, MobilityError> {
        if leavers > present {
            return Err(MobilityError::Invalid(format!(
                "predicted leavers {leavers} exceed present count {present}"
            )));
        }
        Ok(PedestrianStats { present, leavers })
    }

    pub fn present(&self) -> usize {
        self.present
    }

    pub fn leavers(&self) -> usize {
        self.leavers
    }
}

fn sq_dist(a: Point, b: Point) -> f64 {
    (a.x - b.x).powi(2) + (a.y - b.y).powi(2)
}

fn lloyd(points: &[Point], mut centroids: Vec<Point>, max_iter: usize, tol: f64) -> (Vec<Point>, Vec<Option<usize>>, Vec<f64>) {
    let k = centroids.len();
    let mut assignments = vec![Some(0usize); points.len()];
    let mut losses = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut loss = 0.0;
        for (j, p) in points.iter().enumerate() {
            let (best, d) = centroids
                .iter()
                .enumerate()
                .map(|(i, c)| (i, sq_dist(*p, *c)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .unwrap();
            assignments[j] = Some(best);
            loss += d;
        }
        if let Some(&prev) = losses.last() {
            debug_assert!(loss <= prev + 1e-9, "k-means loss increased: {prev} -> {loss}");
        }
        losses.push(loss);
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (j, p) in points.iter().enumerate() {
            let i = assignments[j].unwrap();
            sums[i].0 += p.x;
            sums[i].1 += p.y;
            sums[i].2 += 1;
        }
        let mut movement: f64 = 0.0;
        for i in 0..k {
            if sums[i].2 > 0 {
                let next = Point::new(sums[i].0 / sums[i].2 as f64, sums[i].1 / sums[i].2 as f64);
                movement = movement.max(centroids[i].dist(&next));
                centroids[i] = next;
            }
        }
        if movement < tol {
            break;
        }
    }
    // Final assignment and loss for the converged centroids.
    let mut loss = 0.0;
    for (j, p) in points.iter().enumerate() {
        let (best, d) = centroids
            .iter()
            .enumerate()
            .map(|(i, c)| (i, sq_dist(*p, *c)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .unwrap();
        assignments[j] = Some(best);
        loss += d;
    }
    if losses.last().map_or(true, |&l| loss < l - 1e-12) {
        losses.push(loss);
    }
    (centroids, assignments, losses)
}

fn combinations(n: usize, k: usize) -> Option<usize> {
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)?;
        acc /= i + 1;
    }
    Some(acc)
}

fn farthest_first(points: &[Point], k: usize, first: usize) -> Vec<Point> {
    let mut centroids = vec![points[first]];
    while centroids.len() < k {
        let (idx, _) = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d = centroids.iter().map(|c| sq_dist(*p, *c)).fold(f64::INFINITY, f64::min);
                (i, d)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .unwrap();
        centroids.push(points[idx]);
    }
    centroids
}

/// Cluster `points` into `kappa` groups by Lloyd iterations.
///
/// Small inputs are restarted from every distinct centroid subset, larger
/// ones from farthest-first plus seeded random subsets; both are
/// deterministic for a given seed. When `kappa` exceeds the point count it
/// is reduced and the state flagged.
pub fn kmeans_cluster(
    points: &[Point],
    kappa: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> Result<ClusterState, MobilityError> {
    if points.is_empty() {
        return Err(MobilityError::NoPoints);
    }
    if kappa == 0 {
        return Err(MobilityError::Invalid("kappa must be >= 1".into()));
    }
    let kappa_reduced = kappa > points.len();
    let k = kappa.min(points.len());
    let n = points.len();

    let mut best: Option<(Vec<Point>, Vec<Option<usize>>, Vec<f64>)> = None;
    let consider = |init: Vec<Point>, best: &mut Option<(Vec<Point>, Vec<Option<usize>>, Vec<f64>)>| {
        let run = lloyd(points, init, max_iter, tol);
        let loss = *run.2.last().unwrap();
        if best.as_ref().map_or(true, |b| loss < *b.2.last().unwrap() - 1e-15) {
            *best = Some(run);
        }
    };

    const EXHAUSTIVE_LIMIT: usize = 64;
    if combinations(n, k).map_or(false, |c| c <= EXHAUSTIVE_LIMIT) {
        // All distinct initial subsets, in lexicographic order.
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            consider(idx.iter().map(|&i| points[i]).collect(), &mut best);
            // Next combination.
            let mut pos = k;
            while pos > 0 {
                pos -= 1;
                if idx[pos] < n - (k - pos) {
                    idx[pos] += 1;
                    for q in pos + 1..k {
                        idx[q] = idx[q - 1] + 1;
                    }
                    break;
                }
                if pos == 0 {
                    pos = usize::MAX;
                    break;
                }
            }
            if pos == usize::MAX {
                break;
            }
        }
    } else {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        consider(farthest_first(points, k, rng.gen_range(0..n)), &mut best);
        let mut indices: Vec<usize> = (0..n).collect();
        for _ in 0..7 {
            indices.shuffle(&mut rng);
            consider(indices[..k].iter().map(|&i| points[i]).collect(), &mut best);
        }
    }

    let (centroids, assignments, iteration_losses) = best.unwrap();
    let mut counts = vec![0usize; centroids.len()];
    for a in assignments.iter().flatten() {
        counts[*a] += 1;
    }
    Ok(ClusterState {
        prev_centroids: vec![None; centroids.len()],
        centroids,
        assignments,
        counts,
        kappa_reduced,
        iteration_losses,
    })
}

/// Drop clusters with fewer than `min_size` members.
pub fn filter_clusters(state: &ClusterState, min_size: usize) -> ClusterState {
    let keep: Vec<usize> = (0..state.cluster_count())
        .filter(|&i| state.counts[i] >= min_size)
        .collect();
    let remap: Vec<Option<usize>> = {
        let mut m = vec![None; state.cluster_count()];
        for (new, &old) in keep.iter().enumerate() {
            m[old] = Some(new);
        }
        m
    };
    ClusterState {
        centroids: keep.iter().map(|&i| state.centroids[i]).collect(),
        prev_centroids: keep.iter().map(|&i| state.prev_centroids[i]).collect(),
        assignments: state
            .assignments
            .iter()
            .map(|a| a.and_then(|i| remap[i]))
            .collect(),
        counts: keep.iter().map(|&i| state.counts[i]).collect(),
        kappa_reduced: state.kappa_reduced,
        iteration_losses: state.iteration_losses.clone(),
    }
}

/// Detection criterion: the centroid moved strictly closer to the SBS than
/// it was one slot earlier. A cluster already at the SBS cannot approach.
pub fn approaching(centroid_now: Point, centroid_prev: Point, sbs_pos: Point) -> bool {
    let prev = sbs_pos.dist(&centroid_prev);
    if prev == 0.0 {
        return false;
    }
    sbs_pos.dist(&centroid_now) / prev < 1.0
}

/// Count the users near the cell boundary whose last displacement,
/// extrapolated one slot, lands outside the cell.
pub fn predict_leavers(users: &[(Point, Point)], cell: Rect, margin: f64) -> usize {
    users
        .iter()
        .filter(|(now, prev)| {
            if !cell.contains(*now) || cell.boundary_distance(*now) > margin {
                return false;
            }
            let next = Point::new(now.x + (now.x - prev.x), now.y + (now.y - prev.y));
            !cell.contains(next)
        })
        .count()
}

/// Pedestrian density: admitted approaching-cluster members plus present
/// users minus predicted leavers, floored at zero.
pub fn estimate_density(approaching_counts: &[usize], stats: &PedestrianStats) -> f64 {
    let sum: usize = approaching_counts.iter().sum();
    let psi = sum as f64 + stats.present() as f64 - stats.leavers() as f64;
    psi.max(0.0)
}

/// Tunables of the per-cell density pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityConfig {
    /// Cluster count; defaults to the cell's neighbor count when `None`.
    pub kappa: Option<usize>,
    /// Clusters smaller than this are discarded.
    pub min_cluster_size: usize,
    /// Transition-band width as a fraction of the smaller cell side.
    pub band_fraction: f64,
    /// Leaver margin as a fraction of the smaller cell side.
    pub leaver_margin_fraction: f64,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            kappa: None,
            min_cluster_size: 2,
            band_fraction: 0.25,
            leaver_margin_fraction: 0.25,
            kmeans_max_iter: 50,
            kmeans_tol: 1e-3,
        }
    }
}

/// One cell's density estimate together with the counts that bracket it.
#[derive(Debug, Clone, PartialEq)]
pub struct CellDensityReport {
    pub cell: usize,
    pub psi: f64,
    /// Member counts of the clusters that passed the approach criterion.
    pub admitted_counts: Vec<usize>,
    /// Member counts of all surviving (size-filtered) clusters.
    pub filtered_counts: Vec<usize>,
    pub present: usize,
    pub leavers: usize,
}

impl CellDensityReport {
    /// Density bracket implied by the counts: the estimate can fall to
    /// present-minus-leavers when no cluster is admitted, and can reach the
    /// total over all surviving clusters.
    pub fn psi_bounds(&self) -> (f64, f64) {
        let base = self.present as f64 - self.leavers as f64;
        let upper: usize = self.filtered_counts.iter().sum();
        (base.max(0.0), (base + upper as f64).max(0.0))
    }
}

/// Run the full TASK-1 pipeline for cell `cell`: band selection around the
/// cell, clustering with member history, size filtering, approach detection
/// and the final count combination.
///
/// `users` carries `(current, previous)` positions for every tracked user.
pub fn estimate_cell_density(
    cell: usize,
    topology: &NetworkTopology,
    users: &[(Point, Point)],
    config: &DensityConfig,
    seed: u64,
) -> CellDensityReport {
    let rect = topology.cell_rect(cell);
    let band = config.band_fraction * topology.cell_width().min(topology.cell_height());
    let margin = config.leaver_margin_fraction * topology.cell_width().min(topology.cell_height());
    let neighbors = topology.neighbors(cell);

    let mut band_now = Vec::new();
    let mut band_prev = Vec::new();
    let mut in_cell = Vec::new();
    for &(now, prev) in users {
        match topology.assign_cell(now) {
            Ok(k) if k == cell => in_cell.push((now, prev)),
            Ok(k) if neighbors.contains(&k) && rect.distance(now) <= band => {
                band_now.push(now);
                band_prev.push(prev);
            }
            _ => {}
        }
    }

    let present = in_cell.len();
    let leavers = predict_leavers(&in_cell, rect, margin);
    let stats = PedestrianStats::new(present, leavers).expect("leavers are a subset of present");

    let (admitted_counts, filtered_counts) = if band_now.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let kappa = config.kappa.unwrap_or_else(|| neighbors.len().max(1));
        let state = kmeans_cluster(&band_now, kappa, config.kmeans_max_iter, config.kmeans_tol, seed)
            .expect("band is non-empty")
            .with_member_history(&band_prev);
        let filtered = filter_clusters(&state, config.min_cluster_size);
        let sbs = topology.sbs_position(cell);
        let admitted = (0..filtered.cluster_count())
            .filter(|&i| match filtered.prev_centroids[i] {
                Some(prev) => approaching(filtered.centroids[i], prev, sbs),
                None => false,
            })
            .map(|i| filtered.counts[i])
            .collect();
        (admitted, filtered.counts.clone())
    };

    let psi = estimate_density(&admitted_counts, &stats);
    let report = CellDensityReport {
        cell,
        psi,
        admitted_counts,
        filtered_counts,
        present,
        leavers,
    };
    let (lo, hi) = report.psi_bounds();
    debug_assert!(lo <= report.psi && report.psi <= hi, "density left its bracket");
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NeighborModel;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn p(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    #[test]
    fn kmeans_separated_pairs() {
        let pts = [p(0.0, 0.0), p(0.1, 0.0), p(10.0, 0.0), p(10.1, 0.0)];
        let state = kmeans_cluster(&pts, 2, 50, 1e-9, 1).unwrap();
        let mut xs: Vec<f64> = state.centroids.iter().map(|c| c.x).collect();
        xs.sort_by(f64::total_cmp);
        assert!((xs[0] - 0.05).abs() < 1e-12);
        assert!((xs[1] - 10.05).abs() < 1e-12);
        assert_eq!(state.counts.iter().sum::<usize>(), 4);
    }

    #[test]
    fn kmeans_single_point_identity() {
        let pts = [p(3.0, 4.0)];
        let state = kmeans_cluster(&pts, 1, 50, 1e-9, 0).unwrap();
        assert_eq!(state.centroids, vec![p(3.0, 4.0)]);
        assert!(!state.kappa_reduced);
    }

    #[test]
    fn kmeans_reduces_kappa() {
        let pts = [p(0.0, 0.0), p(1.0, 0.0)];
        let state = kmeans_cluster(&pts, 5, 50, 1e-9, 0).unwrap();
        assert_eq!(state.cluster_count(), 2);
        assert!(state.kappa_reduced);
    }

    /// Exhaustive 2-assignment oracle: minimum loss over all splits.
    fn exhaustive_two_means(points: &[Point]) -> f64 {
        let n = points.len();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << n) {
            let mut loss = 0.0;
            for group in 0..2 {
                let members: Vec<Point> = (0..n)
                    .filter(|&i| (mask >> i) & 1 == group)
                    .map(|i| points[i])
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let cx = members.iter().map(|q| q.x).sum::<f64>() / members.len() as f64;
                let cy = members.iter().map(|q| q.y).sum::<f64>() / members.len() as f64;
                loss += members.iter().map(|q| (q.x - cx).powi(2) + (q.y - cy).powi(2)).sum::<f64>();
            }
            best = best.min(loss);
        }
        best
    }

    #[test]
    fn kmeans_matches_exhaustive_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(100);
        for trial in 0..60 {
            let n = rng.gen_range(2..=8);
            let pts: Vec<Point> = (0..n)
                .map(|_| p(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)))
                .collect();
            let state = kmeans_cluster(&pts, 2, 100, 1e-12, trial).unwrap();
            let oracle = exhaustive_two_means(&pts);
            assert!(
                (state.loss() - oracle).abs() <= 1e-9 * (1.0 + oracle),
                "trial {trial}: lloyd {} vs oracle {oracle}",
                state.loss()
            );
        }
    }

    #[test]
    fn kmeans_loss_non_increasing_and_deterministic() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let pts: Vec<Point> = (0..40)
            .map(|_| p(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)))
            .collect();
        let a = kmeans_cluster(&pts, 4, 50, 1e-9, 77).unwrap();
        for w in a.iteration_losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "loss increased: {:?}", w);
        }
        let b = kmeans_cluster(&pts, 4, 50, 1e-9, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn filter_drops_small_clusters() {
        let state = ClusterState {
            centroids: vec![p(0.0, 0.0), p(1.0, 0.0), p(2.0, 0.0)],
            prev_centroids: vec![None, None, None],
            assignments: vec![Some(0); 5].into_iter().chain(vec![Some(2); 3]).collect(),
            counts: vec![5, 0, 3],
            kappa_reduced: false,
            iteration_losses: vec![1.0],
        };
        let f1 = filter_clusters(&state, 1);
        assert_eq!(f1.counts, vec![5, 3]);
        let f2 = filter_clusters(&f1, 1);
        assert_eq!(f2.counts, vec![5, 3]);

        let tiny = ClusterState {
            centroids: vec![p(0.0, 0.0), p(1.0, 0.0)],
            prev_centroids: vec![None, None],
            assignments: vec![Some(0), Some(1)],
            counts: vec![1, 1],
            kappa_reduced: false,
            iteration_losses: vec![0.0],
        };
        let f = filter_clusters(&tiny, 2);
        assert_eq!(f.cluster_count(), 0);
        assert!(f.assignments.iter().all(|a| a.is_none()));
    }

    #[test]
    fn approaching_criterion() {
        let sbs = p(0.0, 0.0);
        assert!(approaching(p(5.0, 0.0), p(10.0, 0.0), sbs));
        assert!(!approaching(p(12.0, 0.0), p(10.0, 0.0), sbs));
        // Ratio exactly 1 is not approaching.
        assert!(!approaching(p(10.0, 0.0), p(10.0, 0.0), sbs));
        // Cluster already at the SBS cannot approach.
        assert!(!approaching(p(1.0, 0.0), p(0.0, 0.0), sbs));
    }

    #[test]
    fn leaver_prediction_cases() {
        let cell = Rect::new(0.0, 0.0, 100.0, 100.0);
        // Moving toward the center: stays.
        assert_eq!(predict_leavers(&[(p(10.0, 50.0), p(5.0, 50.0))], cell, 25.0), 0);
        // At the boundary heading out faster than the remaining distance.
        assert_eq!(predict_leavers(&[(p(98.0, 50.0), p(90.0, 50.0))], cell, 25.0), 1);
        // Stationary on the boundary extrapolates in place.
        assert_eq!(predict_leavers(&[(p(100.0, 50.0), p(100.0, 50.0))], cell, 25.0), 0);
        // Outward mover far from the boundary is outside the margin.
        assert_eq!(predict_leavers(&[(p(50.0, 50.0), p(10.0, 50.0))], cell, 5.0), 0);
    }

    #[test]
    fn density_estimate_cases() {
        let stats = PedestrianStats::new(10, 2).unwrap();
        assert_eq!(estimate_density(&[3, 4], &stats), 15.0);
        assert_eq!(estimate_density(&[], &stats), 8.0);
        let zero = PedestrianStats::new(0, 0).unwrap();
        assert_eq!(estimate_density(&[], &zero), 0.0);
    }

    #[test]
    fn stats_rejects_more_leavers_than_present() {
        assert!(PedestrianStats::new(1, 2).is_err());
    }

    #[test]
    fn cell_density_detects_inbound_cluster() {
        let topo = NetworkTopology::grid(2, 1, Rect::new(0.0, 0.0, 200.0, 100.0), NeighborModel::Adjacent8).unwrap();
        // Five users in cell 1 near the shared boundary, all moving toward
        // cell 0's SBS at (50, 50); two residents of cell 0, one about to leave.
        let mut users = Vec::new();
        for i in 0..5 {
            let y = 30.0 + 10.0 * i as f64;
            users.push((p(110.0, y), p(120.0, y)));
        }
        users.push((p(50.0, 50.0), p(50.0, 50.0)));
        users.push((p(2.0, 50.0), p(10.0, 50.0)));
        let report = estimate_cell_density(0, &topo, &users, &DensityConfig::default(), 9);
        assert_eq!(report.present, 2);
        assert_eq!(report.leavers, 1);
        assert_eq!(report.admitted_counts, vec![5]);
        assert_eq!(report.psi, 6.0);
        let (lo, hi) = report.psi_bounds();
        assert!(lo <= report.psi && report.psi <= hi);
    }

    proptest! {
        #[test]
        fn approaching_scale_invariant(nx in -50.0f64..50.0, ny in -50.0f64..50.0,
                                       px in -50.0f64..50.0, py in -50.0f64..50.0,
                                       scale in 0.01f64..100.0) {
            let sbs = p(3.0, -2.0);
            let now = p(nx, ny);
            let prev = p(px, py);
            let scaled = |q: Point| p(sbs.x + scale * (q.x - sbs.x), sbs.y + scale * (q.y - sbs.y));
            prop_assert_eq!(
                approaching(now, prev, sbs),
                approaching(scaled(now), scaled(prev), sbs)
            );
        }

        #[test]
        fn density_stays_in_bracket(counts in proptest::collection::vec(0usize..20, 0..6),
                                    present in 0usize..30, leave_frac in 0.0f64..=1.0) {
            let leavers = (present as f64 * leave_frac) as usize;
            let stats = PedestrianStats::new(present, leavers).unwrap();
            let psi = estimate_density(&counts, &stats);
            let lower = (present as f64 - leavers as f64).max(0.0);
            let upper = counts.iter().sum::<usize>() as f64 + present as f64 - leavers as f64;
            prop_assert!(psi >= lower && psi <= upper.max(0.0));
        }
    }
}
