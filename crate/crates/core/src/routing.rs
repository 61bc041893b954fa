//! Three-tier content serving: local cache, intra-cell neighbors, then the
//! backhaul (another SBS or the MBS), plus the hit-ratio bookkeeping.

use crate::model::{CacheMatrix, NetworkTopology};

/// Where a request was served from, in preference order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    /// The requesting user's own SBS held the file.
    LocalHit,
    /// A neighboring SBS in the intra-cell domain held it.
    IntraCellHit,
    /// Fetched over the backhaul from an SBS outside the intra-cell domain.
    InterCellSbsFetch,
    /// Fetched over the backhaul from the MBS.
    MbsFetch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoutingOutcome {
    pub tier: Tier,
    /// Serving SBS; `None` when the MBS served.
    pub serving_node: Option<usize>,
    pub file: usize,
    pub slot: u64,
}

/// Routing knobs; the defaults follow the tier ordering of the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoutingConfig {
    /// Prefer a far SBS over the MBS when the intra-cell domain misses.
    pub inter_cell_prefers_sbs: bool,
    /// Count intra-cell hits towards cache efficiency; both local and
    /// intra-cell serving avoid the backhaul.
    pub intra_counts_as_hit: bool,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            inter_cell_prefers_sbs: true,
            intra_counts_as_hit: true,
        }
    }
}

/// Serve one request at SBS `local_sbs`: the local cache first, then the
/// lowest-index caching neighbor, then the backhaul.
pub fn route_request(
    cache: &CacheMatrix,
    topology: &NetworkTopology,
    local_sbs: usize,
    file: usize,
    slot: u64,
    config: &RoutingConfig,
) -> RoutingOutcome {
    if cache.get(local_sbs, file) {
        return RoutingOutcome {
            tier: Tier::LocalHit,
            serving_node: Some(local_sbs),
            file,
            slot,
        };
    }
    if let Some(&l) = topology
        .neighbors(local_sbs)
        .iter()
        .find(|&&l| cache.get(l, file))
    {
        return RoutingOutcome {
            tier: Tier::IntraCellHit,
            serving_node: Some(l),
            file,
            slot,
        };
    }
    if config.inter_cell_prefers_sbs {
        let neighbors = topology.neighbors(local_sbs);
        if let Some(l) = (0..cache.sbs_count())
            .find(|&l| l != local_sbs && !neighbors.contains(&l) && cache.get(l, file))
        {
            return RoutingOutcome {
                tier: Tier::InterCellSbsFetch,
                serving_node: Some(l),
                file,
                slot,
            };
        }
    }
    RoutingOutcome {
        tier: Tier::MbsFetch,
        serving_node: None,
        file,
        slot,
    }
}

/// Fraction of requests served without the backhaul in one aggregation
/// period; `None` when the period saw no requests.
pub fn cache_efficiency(outcomes: &[RoutingOutcome], config: &RoutingConfig) -> Option<f64> {
    if outcomes.is_empty() {
        return None;
    }
    let hits = outcomes
        .iter()
        .filter(|o| match o.tier {
            Tier::LocalHit => true,
            Tier::IntraCellHit => config.intra_counts_as_hit,
            _ => false,
        })
        .count();
    Some(hits as f64 / outcomes.len() as f64)
}

/// Running sum over periods of the density captured by each period's
/// placement: `sum_{k,f} c[k][f] * lambda[k][f]`.
pub fn cumulative_request_density(caches: &[CacheMatrix], lambda: &[Vec<Vec<f64>>]) -> Vec<f64> {
    assert_eq!(caches.len(), lambda.len(), "series must be aligned");
    let mut out = Vec::with_capacity(caches.len());
    let mut acc = 0.0;
    for (cache, table) in caches.iter().zip(lambda) {
        for (k, row) in table.iter().enumerate() {
            for (f, &l) in row.iter().enumerate() {
                if cache.get(k, f) {
                    acc += l;
                }
            }
        }
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ContentCatalog, NeighborModel, NetworkTopology, Rect};

    fn topo_3x1() -> NetworkTopology {
        // Cells 0-1-2 in a row: 0 and 2 are not adjacent.
        NetworkTopology::grid(3, 1, Rect::new(0.0, 0.0, 300.0, 100.0), NeighborModel::Adjacent8).unwrap()
    }

    fn cache_with(entries: &[(usize, usize)]) -> CacheMatrix {
        let catalog = ContentCatalog::uniform(3);
        let mut cache = CacheMatrix::empty(vec![3.0; 3], 3).unwrap();
        for &(k, f) in entries {
            cache.set(k, f, &catalog).unwrap();
        }
        cache
    }

    #[test]
    fn tier_preference_order() {
        let topo = topo_3x1();
        let config = RoutingConfig::default();

        let local = cache_with(&[(0, 0)]);
        let out = route_request(&local, &topo, 0, 0, 1, &config);
        assert_eq!(out.tier, Tier::LocalHit);
        assert_eq!(out.serving_node, Some(0));

        let neighbor = cache_with(&[(1, 0)]);
        let out = route_request(&neighbor, &topo, 0, 0, 1, &config);
        assert_eq!(out.tier, Tier::IntraCellHit);
        assert_eq!(out.serving_node, Some(1));

        let far = cache_with(&[(2, 0)]);
        let out = route_request(&far, &topo, 0, 0, 1, &config);
        assert_eq!(out.tier, Tier::InterCellSbsFetch);
        assert_eq!(out.serving_node, Some(2));

        let nowhere = cache_with(&[]);
        let out = route_request(&nowhere, &topo, 0, 0, 1, &config);
        assert_eq!(out.tier, Tier::MbsFetch);
        assert_eq!(out.serving_node, None);
    }

    #[test]
    fn local_dominates_other_tiers() {
        let topo = topo_3x1();
        let cache = cache_with(&[(0, 0), (1, 0), (2, 0)]);
        let out = route_request(&cache, &topo, 0, 0, 0, &RoutingConfig::default());
        assert_eq!(out.tier, Tier::LocalHit);
    }

    #[test]
    fn lowest_index_neighbor_serves() {
        let topo = topo_3x1();
        let cache = cache_with(&[(0, 0), (2, 0)]);
        let out = route_request(&cache, &topo, 1, 0, 0, &RoutingConfig::default());
        assert_eq!(out.tier, Tier::IntraCellHit);
        assert_eq!(out.serving_node, Some(0));
    }

    #[test]
    fn inter_cell_preference_is_configurable() {
        let topo = topo_3x1();
        let cache = cache_with(&[(2, 0)]);
        let no_sbs = RoutingConfig {
            inter_cell_prefers_sbs: false,
            ..RoutingConfig::default()
        };
        let out = route_request(&cache, &topo, 0, 0, 0, &no_sbs);
        assert_eq!(out.tier, Tier::MbsFetch);
    }

    #[test]
    fn cache_efficiency_ratios() {
        let config = RoutingConfig::default();
        let mk = |tier| RoutingOutcome {
            tier,
            serving_node: None,
            file: 0,
            slot: 0,
        };
        let mut outcomes = vec![mk(Tier::LocalHit); 5];
        outcomes.extend(vec![mk(Tier::IntraCellHit); 3]);
        outcomes.extend(vec![mk(Tier::MbsFetch); 2]);
        assert_eq!(cache_efficiency(&outcomes, &config), Some(0.8));

        let strict = RoutingConfig {
            intra_counts_as_hit: false,
            ..config
        };
        assert_eq!(cache_efficiency(&outcomes, &strict), Some(0.5));

        let all_miss = vec![mk(Tier::MbsFetch); 4];
        assert_eq!(cache_efficiency(&all_miss, &config), Some(0.0));
        assert_eq!(cache_efficiency(&[], &config), None);
    }

    #[test]
    fn cumulative_density_series() {
        let catalog = ContentCatalog::uniform(2);
        let empty = CacheMatrix::empty(vec![2.0], 2).unwrap();
        let mut full = empty.clone();
        full.set(0, 0, &catalog).unwrap();
        full.set(0, 1, &catalog).unwrap();

        let lam = vec![vec![vec![1.0, 2.0]], vec![vec![1.0, 2.0]], vec![vec![1.0, 2.0]]];
        let zeros = cumulative_request_density(&[empty.clone(), empty.clone(), empty.clone()], &lam);
        assert_eq!(zeros, vec![0.0, 0.0, 0.0]);

        let linear = cumulative_request_density(&[full.clone(), full.clone(), full.clone()], &lam);
        assert_eq!(linear, vec![3.0, 6.0, 9.0]);

        let mixed = cumulative_request_density(&[empty, full.clone(), full], &lam);
        assert_eq!(mixed, vec![0.0, 3.0, 6.0]);
        for w in mixed.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }
}
