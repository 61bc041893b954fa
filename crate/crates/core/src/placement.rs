//! The network-cost objective and the cache placement policies: greedy
//! descent over (SBS, file) pairs, the exhaustive oracle for small
//! instances, and the comparison baselines.

use crate::model::{CacheMatrix, ContentCatalog, CostParams, ModelError};
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlacementError {
    #[error("instance too large for exhaustive search: {pairs} pairs > {limit}")]
    InstanceTooLarge { pairs: usize, limit: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("instance parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Inputs of the placement objective: catalog, cost constants, per-SBS
/// capacities and the expected request-density table.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementProblem {
    pub catalog: ContentCatalog,
    pub params: CostParams,
    pub capacities: Vec<f64>,
    /// Row-major `lambda[k * M + f]`: expected requests per slot for file
    /// `f` in cell `k`.
    lambda: Vec<f64>,
}

impl PlacementProblem {
    pub fn new(
        catalog: ContentCatalog,
        params: CostParams,
        capacities: Vec<f64>,
        lambda: Vec<Vec<f64>>,
    ) -> Result<Self, PlacementError> {
        let k = capacities.len();
        let m = catalog.file_count();
        if k == 0 {
            return Err(PlacementError::Invalid("need at least one SBS".into()));
        }
        if lambda.len() != k || lambda.iter().any(|row| row.len() != m) {
            return Err(PlacementError::Invalid(format!(
                "density table must be {k} x {m}"
            )));
        }
        if capacities.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(PlacementError::Invalid("capacities must be finite and >= 0".into()));
        }
        let flat: Vec<f64> = lambda.into_iter().flatten().collect();
        if flat.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(PlacementError::Invalid("densities must be finite and >= 0".into()));
        }
        Ok(PlacementProblem {
            catalog,
            params,
            capacities,
            lambda: flat,
        })
    }

    pub fn sbs_count(&self) -> usize {
        self.capacities.len()
    }

    pub fn file_count(&self) -> usize {
        self.catalog.file_count()
    }

    pub fn lambda(&self, k: usize, f: usize) -> f64 {
        self.lambda[k * self.file_count() + f]
    }

    /// Total expected density of file `f` over all cells.
    pub fn lambda_total(&self, f: usize) -> f64 {
        (0..self.sbs_count()).map(|k| self.lambda(k, f)).sum()
    }

    pub fn empty_cache(&self) -> CacheMatrix {
        CacheMatrix::empty(self.capacities.clone(), self.file_count()).expect("validated in new")
    }
}

/// Which policy produced a placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyTag {
    Greedy,
    Exhaustive,
    EpsilonGreedy,
    Random,
    FullInfo,
    LocalTop,
}

impl fmt::Display for PolicyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PolicyTag::Greedy => "greedy",
            PolicyTag::Exhaustive => "oracle",
            PolicyTag::EpsilonGreedy => "egreedy",
            PolicyTag::Random => "random",
            PolicyTag::FullInfo => "fullinfo",
            PolicyTag::LocalTop => "local",
        };
        f.write_str(s)
    }
}

/// A placement together with its objective value.
#[derive(Debug, Clone)]
pub struct PlacementResult {
    pub cache: CacheMatrix,
    pub cost: f64,
    pub iterations: usize,
    pub policy: PolicyTag,
    /// Objective after every accepted greedy move (greedy only).
    pub cost_trace: Vec<f64>,
}

/// Worst-case retrieval cost `d_{k,f}`: the full backhaul price when no
/// other SBS caches `f`, zero otherwise (the empty product over one SBS
/// leaves the backhaul price).
pub fn worst_case_cost(cache: &CacheMatrix, k: usize, f: usize, params: &CostParams) -> f64 {
    if cache.cached_elsewhere(k, f) {
        0.0
    } else {
        params.mbs_base + params.mbs_link
    }
}

/// Expected cost of serving file `f`'s demand at SBS `k`:
/// `psi * p * (c * sbs_retrieval + (1 - c) * d)`.
pub fn retrieval_cost(
    cache: &CacheMatrix,
    k: usize,
    f: usize,
    psi: f64,
    p: f64,
    params: &CostParams,
) -> f64 {
    let served = if cache.get(k, f) {
        params.sbs_retrieval
    } else {
        worst_case_cost(cache, k, f, params)
    };
    psi * p * served
}

/// Full network cost: caching cost plus the expected retrieval cost of
/// every (SBS, file) pair, recomputed from scratch.
pub fn network_cost(cache: &CacheMatrix, problem: &PlacementProblem) -> f64 {
    let mut total = 0.0;
    for k in 0..problem.sbs_count() {
        for f in 0..problem.file_count() {
            if cache.get(k, f) {
                total += problem.params.cache_cost * problem.catalog.size(f);
            }
            total += retrieval_cost(cache, k, f, problem.lambda(k, f), 1.0, &problem.params);
        }
    }
    total
}

/// Greedy cache placement: repeatedly commit the feasible (SBS, file) pair
/// whose placement lowers the objective the most, stopping when no pair
/// strictly improves it or every cache is full.
pub fn greedy_place(problem: &PlacementProblem) -> Result<PlacementResult, PlacementError> {
    let k_n = problem.sbs_count();
    let m = problem.file_count();
    let backhaul = problem.params.mbs_base + problem.params.mbs_link;
    let mut cache = problem.empty_cache();
    let mut cost = network_cost(&cache, problem);
    let mut cost_trace = Vec::new();
    // Candidate pairs not yet placed and not yet excluded by capacity.
    let mut live: Vec<bool> = vec![true; k_n * m];
    let lambda_total: Vec<f64> = (0..m).map(|f| problem.lambda_total(f)).collect();

    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for k in 0..k_n {
            for f in 0..m {
                if !live[k * m + f] || !cache.fits(k, f, &problem.catalog) {
                    continue;
                }
                // Cost change of setting c[k][f] = 1: the caching charge and
                // the local retrieval charge always appear; the first copy of
                // a file also clears the backhaul charge of every cell.
                let mut delta = problem.params.cache_cost * problem.catalog.size(f)
                    + problem.lambda(k, f) * problem.params.sbs_retrieval;
                if !cache.cached_anywhere(f) {
                    delta -= backhaul * lambda_total[f];
                }
                if delta < 0.0 && best.map_or(true, |(_, _, d)| delta < d) {
                    best = Some((k, f, delta));
                }
            }
        }
        let Some((k, f, delta)) = best else { break };
        cache.set(k, f, &problem.catalog)?;
        live[k * m + f] = false;
        cost += delta;
        cost_trace.push(cost);
        if cache.free(k) <= 0.0 {
            for ff in 0..m {
                live[k * m + ff] = false;
            }
        }
    }

    debug_assert!(
        (cost - network_cost(&cache, problem)).abs() <= 1e-6 * (1.0 + cost.abs()),
        "incremental cost drifted from the recomputed objective"
    );
    Ok(PlacementResult {
        iterations: cost_trace.len(),
        cost: network_cost(&cache, problem),
        cache,
        policy: PolicyTag::Greedy,
        cost_trace,
    })
}

/// Upper bound on `K * M` for the exhaustive oracle.
pub const EXHAUSTIVE_PAIR_LIMIT: usize = 20;

/// Exhaustive minimizer over all binary placements that satisfy the
/// capacities. Ties prefer fewer cached files, then the numerically
/// smallest row-major bit pattern.
pub fn exhaustive_place(problem: &PlacementProblem) -> Result<PlacementResult, PlacementError> {
    let k_n = problem.sbs_count();
    let m = problem.file_count();
    let pairs = k_n * m;
    if pairs > EXHAUSTIVE_PAIR_LIMIT {
        return Err(PlacementError::InstanceTooLarge {
            pairs,
            limit: EXHAUSTIVE_PAIR_LIMIT,
        });
    }
    let mut best: Option<(f64, u32, u64)> = None;
    'mask: for mask in 0u64..(1u64 << pairs) {
        // Row capacities first.
        for k in 0..k_n {
            let mut occ = 0.0;
            for f in 0..m {
                if mask >> (k * m + f) & 1 == 1 {
                    occ += problem.catalog.size(f);
                }
            }
            if occ > problem.capacities[k] + 1e-9 {
                continue 'mask;
            }
        }
        let mut cache = problem.empty_cache();
        for bit in 0..pairs {
            if mask >> bit & 1 == 1 {
                cache.set(bit / m, bit % m, &problem.catalog)?;
            }
        }
        let cost = network_cost(&cache, problem);
        let files = mask.count_ones();
        let better = match &best {
            None => true,
            Some((bc, bf, bm)) => {
                cost < bc - 1e-12
                    || ((cost - bc).abs() <= 1e-12 && (files < *bf || (files == *bf && mask < *bm)))
            }
        };
        if better {
            best = Some((cost, files, mask));
        }
    }
    let (cost, _, mask) = best.expect("mask 0 is always feasible");
    let mut cache = problem.empty_cache();
    for bit in 0..pairs {
        if mask >> bit & 1 == 1 {
            cache.set(bit / m, bit % m, &problem.catalog)?;
        }
    }
    Ok(PlacementResult {
        cache,
        cost,
        iterations: 0,
        policy: PolicyTag::Exhaustive,
        cost_trace: Vec::new(),
    })
}

fn result_for(cache: CacheMatrix, problem: &PlacementProblem, policy: PolicyTag) -> PlacementResult {
    PlacementResult {
        cost: network_cost(&cache, problem),
        cache,
        iterations: 0,
        policy,
        cost_trace: Vec::new(),
    }
}

/// Top `m_files` per SBS by estimated popularity, replaced by a uniformly
/// random selection with probability `epsilon`.
///
/// `estimates[k][f]` is SBS `k`'s running popularity estimate for file `f`.
pub fn epsilon_greedy_place(
    problem: &PlacementProblem,
    estimates: &[Vec<f64>],
    m_files: usize,
    epsilon: f64,
    seed: u64,
) -> Result<PlacementResult, PlacementError> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(PlacementError::Invalid("epsilon must lie in [0, 1]".into()));
    }
    if estimates.len() != problem.sbs_count() {
        return Err(PlacementError::Invalid("one estimate row per SBS required".into()));
    }
    let m = problem.file_count();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut cache = problem.empty_cache();
    for k in 0..problem.sbs_count() {
        let chosen: Vec<usize> = if rng.gen::<f64>() < epsilon {
            let mut files: Vec<usize> = (0..m).collect();
            files.shuffle(&mut rng);
            files.truncate(m_files.min(m));
            files
        } else {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| estimates[k][b].total_cmp(&estimates[k][a]).then(a.cmp(&b)));
            order.truncate(m_files.min(m));
            order
        };
        for f in chosen {
            if cache.fits(k, f, &problem.catalog) {
                cache.set(k, f, &problem.catalog)?;
            }
        }
    }
    Ok(result_for(cache, problem, PolicyTag::EpsilonGreedy))
}

/// Fill each cache with a uniformly random feasible file subset.
pub fn random_place(problem: &PlacementProblem, seed: u64) -> Result<PlacementResult, PlacementError> {
    let m = problem.file_count();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut cache = problem.empty_cache();
    for k in 0..problem.sbs_count() {
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut rng);
        for f in order {
            if cache.fits(k, f, &problem.catalog) {
                cache.set(k, f, &problem.catalog)?;
            }
        }
    }
    Ok(result_for(cache, problem, PolicyTag::Random))
}

/// Placement with full knowledge of the upcoming demand: the greedy solver
/// on the true densities, or the exhaustive oracle when the instance fits
/// under its guard.
pub fn full_info_place(problem_true: &PlacementProblem) -> Result<PlacementResult, PlacementError> {
    let mut result = if problem_true.sbs_count() * problem_true.file_count() <= EXHAUSTIVE_PAIR_LIMIT {
        exhaustive_place(problem_true)?
    } else {
        greedy_place(problem_true)?
    };
    result.policy = PolicyTag::FullInfo;
    Ok(result)
}

/// Each SBS independently fills its cache with its top locally observed
/// files; no cross-SBS coordination.
pub fn local_caching_place(
    problem: &PlacementProblem,
    local_estimates: &[Vec<f64>],
) -> Result<PlacementResult, PlacementError> {
    if local_estimates.len() != problem.sbs_count() {
        return Err(PlacementError::Invalid("one estimate row per SBS required".into()));
    }
    let m = problem.file_count();
    let mut cache = problem.empty_cache();
    for k in 0..problem.sbs_count() {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            local_estimates[k][b]
                .total_cmp(&local_estimates[k][a])
                .then(a.cmp(&b))
        });
        for f in order {
            if cache.fits(k, f, &problem.catalog) {
                cache.set(k, f, &problem.catalog)?;
            }
        }
    }
    Ok(result_for(cache, problem, PolicyTag::LocalTop))
}

/// Render a problem in the plain-text instance format:
///
/// ```text
/// K 2
/// M 3
/// alpha_c 1.5
/// alpha_s 180
/// alpha_m 13
/// alpha_mk 370
/// sizes 1 1 1
/// capacities 2 2
/// lambda 0.5 0.1 0
/// lambda 0.2 0.3 0.1
/// ```
///
/// One `lambda` row per SBS; `#` starts a comment.
pub fn instance_to_text(problem: &PlacementProblem) -> String {
    let mut out = String::new();
    out.push_str(&format!("K {}\n", problem.sbs_count()));
    out.push_str(&format!("M {}\n", problem.file_count()));
    out.push_str(&format!("alpha_c {}\n", problem.params.cache_cost));
    out.push_str(&format!("alpha_s {}\n", problem.params.sbs_retrieval));
    out.push_str(&format!("alpha_m {}\n", problem.params.mbs_base));
    out.push_str(&format!("alpha_mk {}\n", problem.params.mbs_link));
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    out.push_str(&format!("sizes {}\n", join(problem.catalog.sizes())));
    out.push_str(&format!("capacities {}\n", join(&problem.capacities)));
    for k in 0..problem.sbs_count() {
        let row: Vec<f64> = (0..problem.file_count()).map(|f| problem.lambda(k, f)).collect();
        out.push_str(&format!("lambda {}\n", join(&row)));
    }
    out
}

/// Parse the plain-text instance format produced by [`instance_to_text`].
pub fn instance_from_text(text: &str) -> Result<PlacementProblem, PlacementError> {
    let mut k: Option<usize> = None;
    let mut m: Option<usize> = None;
    let mut params = [None::<f64>; 4];
    let mut sizes: Option<Vec<f64>> = None;
    let mut capacities: Option<Vec<f64>> = None;
    let mut lambda: Vec<Vec<f64>> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut it = content.split_whitespace();
        let key = it.next().unwrap();
        let rest: Vec<&str> = it.collect();
        let parse_one = |rest: &[&str]| -> Result<f64, PlacementError> {
            rest.first()
                .ok_or(PlacementError::Parse {
                    line,
                    msg: "missing value".into(),
                })?
                .parse::<f64>()
                .map_err(|e| PlacementError::Parse {
                    line,
                    msg: e.to_string(),
                })
        };
        let parse_vec = |rest: &[&str]| -> Result<Vec<f64>, PlacementError> {
            rest.iter()
                .map(|s| {
                    s.parse::<f64>().map_err(|e| PlacementError::Parse {
                        line,
                        msg: e.to_string(),
                    })
                })
                .collect()
        };
        match key {
            "K" => k = Some(parse_one(&rest)? as usize),
            "M" => m = Some(parse_one(&rest)? as usize),
            "alpha_c" => params[0] = Some(parse_one(&rest)?),
            "alpha_s" => params[1] = Some(parse_one(&rest)?),
            "alpha_m" => params[2] = Some(parse_one(&rest)?),
            "alpha_mk" => params[3] = Some(parse_one(&rest)?),
            "sizes" => sizes = Some(parse_vec(&rest)?),
            "capacities" => capacities = Some(parse_vec(&rest)?),
            "lambda" => lambda.push(parse_vec(&rest)?),
            other => {
                return Err(PlacementError::Parse {
                    line,
                    msg: format!("unknown key {other:?}"),
                })
            }
        }
    }

    let missing = |what: &str| PlacementError::Parse {
        line: 0,
        msg: format!("missing {what}"),
    };
    let k = k.ok_or_else(|| missing("K"))?;
    let m = m.ok_or_else(|| missing("M"))?;
    let cost = CostParams::new(
        params[0].ok_or_else(|| missing("alpha_c"))?,
        params[1].ok_or_else(|| missing("alpha_s"))?,
        params[2].ok_or_else(|| missing("alpha_m"))?,
        params[3].ok_or_else(|| missing("alpha_mk"))?,
    )?;
    let sizes = sizes.unwrap_or_else(|| vec![1.0; m]);
    if sizes.len() != m {
        return Err(PlacementError::Parse {
            line: 0,
            msg: format!("expected {m} sizes, found {}", sizes.len()),
        });
    }
    let capacities = capacities.ok_or_else(|| missing("capacities"))?;
    if capacities.len() != k {
        return Err(PlacementError::Parse {
            line: 0,
            msg: format!("expected {k} capacities, found {}", capacities.len()),
        });
    }
    if lambda.len() != k {
        return Err(PlacementError::Parse {
            line: 0,
            msg: format!("expected {k} lambda rows, found {}", lambda.len()),
        });
    }
    let catalog = ContentCatalog::new(sizes)?;
    PlacementProblem::new(catalog, cost, capacities, lambda)
}

pub fn read_instance(path: &Path) -> Result<PlacementProblem, PlacementError> {
    instance_from_text(&std::fs::read_to_string(path)?)
}

pub fn write_instance(path: &Path, problem: &PlacementProblem) -> Result<(), PlacementError> {
    std::fs::write(path, instance_to_text(problem))?;
    Ok(())
}
