//! The simulation harness: per-period density prediction, demand learning,
//! cache placement and request routing over a slotted trace, with metrics
//! emission and a multi-run comparison front end.

use crate::demand::{self, DemandError};
use crate::fl::{AggregationRound, FlError, FlMode, LinearModel};
use crate::mobility::{self, DensityConfig};
use crate::model::{
    CacheMatrix, ContentCatalog, CostParams, MobilitySample, NeighborModel, NetworkTopology, Point,
    Rect, RequestEvent,
};
use crate::placement::{self, PlacementError, PlacementProblem};
use crate::routing::{self, RoutingConfig, RoutingOutcome};
use crate::trace::{self, MobilityConfig, SyntheticRatings, TraceConfig, TraceError};
use serde::Deserialize;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("federated training diverged: {0}")]
    Divergence(FlError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl SimError {
    /// Process exit code for the CLI: 2 config, 3 trace, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) => 2,
            SimError::Trace(_) => 3,
            SimError::Divergence(_) => 4,
            SimError::Internal(_) => 1,
        }
    }
}

impl From<FlError> for SimError {
    fn from(e: FlError) -> Self {
        match e {
            FlError::Divergence { .. } => SimError::Divergence(e),
            other => SimError::Internal(other.to_string()),
        }
    }
}

impl From<DemandError> for SimError {
    fn from(e: DemandError) -> Self {
        match e {
            DemandError::Fit(f) => SimError::from(f),
            other => SimError::Internal(other.to_string()),
        }
    }
}

impl From<PlacementError> for SimError {
    fn from(e: PlacementError) -> Self {
        SimError::Internal(e.to_string())
    }
}

/// Placement policy driving the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Frpl,
    EGreedy,
    Random,
    Local,
    FullInfo,
    Oracle,
}

impl Policy {
    pub fn parse(s: &str) -> Result<Self, SimError> {
        match s {
            "frpl" => Ok(Policy::Frpl),
            "egreedy" => Ok(Policy::EGreedy),
            "random" => Ok(Policy::Random),
            "local" => Ok(Policy::Local),
            "fullinfo" => Ok(Policy::FullInfo),
            "oracle" => Ok(Policy::Oracle),
            other => Err(SimError::Config(format!(
                "unknown policy {other:?}; expected frpl|egreedy|random|local|fullinfo|oracle"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Frpl => "frpl",
            Policy::EGreedy => "egreedy",
            Policy::Random => "random",
            Policy::Local => "local",
            Policy::FullInfo => "fullinfo",
            Policy::Oracle => "oracle",
        }
    }
}

/// Scale preset for otherwise unspecified fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    /// Small trace head, short horizon; runs in seconds.
    #[default]
    Desk,
    /// Full-catalog parameters (T = 3400, M = 3952, U = 6040, C = 200).
    Paper,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self, SimError> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(SimError::Config(format!("unknown preset {other:?}"))),
        }
    }
}

/// Raw file form of the configuration: flat key-value TOML, every key
/// optional so presets can fill the gaps.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub ratings_path: Option<String>,
    pub ratings_delimiter: Option<String>,
    pub requests_path: Option<String>,
    pub mobility_path: Option<String>,
    pub scenario: Option<String>,
    pub scenario_users: Option<usize>,
    pub scenario_items: Option<usize>,
    pub scenario_ratings: Option<usize>,
    pub scenario_item_exponent: Option<f64>,
    pub scenario_user_exponent: Option<f64>,
    pub policy: Option<String>,
    pub seed: Option<u64>,
    pub out_dir: Option<String>,
    pub grid_cols: Option<usize>,
    pub grid_rows: Option<usize>,
    pub region_size: Option<f64>,
    pub neighbor_model: Option<String>,
    pub slot_count: Option<u64>,
    pub slots_per_aggregation: Option<u64>,
    pub top_files: Option<usize>,
    pub top_users: Option<usize>,
    pub capacity: Option<f64>,
    pub capacities: Option<Vec<f64>>,
    pub cache_cost: Option<f64>,
    pub sbs_retrieval: Option<f64>,
    pub mbs_base: Option<f64>,
    pub mbs_link: Option<f64>,
    pub learning_rate: Option<f64>,
    pub ridge: Option<f64>,
    pub fl_mode: Option<String>,
    pub fl_rounds: Option<usize>,
    pub fl_local_steps: Option<usize>,
    pub demand_window_slots: Option<usize>,
    pub epsilon: Option<f64>,
    pub top_m: Option<usize>,
    pub step_scale: Option<f64>,
    pub cluster_every: Option<u64>,
    pub cluster_size: Option<usize>,
    pub cluster_travel_slots: Option<u64>,
    pub band_fraction: Option<f64>,
    pub min_cluster_size: Option<usize>,
    pub inter_cell_prefers_sbs: Option<bool>,
    pub intra_counts_as_hit: Option<bool>,
}

impl RawConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub ratings_path: Option<PathBuf>,
    pub ratings_delimiter: String,
    pub requests_path: Option<PathBuf>,
    pub mobility_path: Option<PathBuf>,
    pub scenario: SyntheticRatings,
    pub policy: Policy,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub region_size: f64,
    pub neighbor_model: NeighborModel,
    pub trace: TraceConfig,
    pub capacities_uniform: f64,
    pub capacities: Option<Vec<f64>>,
    pub cost: CostParams,
    pub learning_rate: f64,
    pub ridge: f64,
    pub fl_mode: FlMode,
    pub fl_rounds: usize,
    pub fl_local_steps: usize,
    pub demand_window_slots: usize,
    pub epsilon: f64,
    pub top_m: usize,
    pub mobility: MobilityConfig,
    pub density: DensityConfig,
    pub routing: RoutingConfig,
}

impl SimConfig {
    /// Resolve a raw config against a preset; `None` fields take the preset
    /// defaults.
    pub fn resolve(raw: &RawConfig, preset: Preset) -> Result<Self, SimError> {
        let (t, theta, top_files, top_users, capacity) = match preset {
            Preset::Desk => (200, 20, 50, 500, 5.0),
            Preset::Paper => (3400, 20, 3952, 6040, 200.0),
        };
        let seed = raw
            .seed
            .ok_or_else(|| SimError::Config("seed is mandatory".into()))?;
        let policy = Policy::parse(raw.policy.as_deref().unwrap_or("frpl"))?;
        let neighbor_model = match raw.neighbor_model.as_deref().unwrap_or("adjacent8") {
            "adjacent8" => NeighborModel::Adjacent8,
            "full" => NeighborModel::Full,
            other => {
                return Err(SimError::Config(format!(
                    "unknown neighbor_model {other:?}; expected adjacent8|full"
                )))
            }
        };
        let fl_mode = match raw.fl_mode.as_deref().unwrap_or("fedavg") {
            "fedavg" => FlMode::FedAvg,
            "paper-faithful" => FlMode::PaperFaithful,
            other => {
                return Err(SimError::Config(format!(
                    "unknown fl_mode {other:?}; expected fedavg|paper-faithful"
                )))
            }
        };
        let cost = CostParams::new(
            raw.cache_cost.unwrap_or(1.5),
            raw.sbs_retrieval.unwrap_or(180.0),
            raw.mbs_base.unwrap_or(13.0),
            raw.mbs_link.unwrap_or(370.0),
        )
        .map_err(|e| SimError::Config(e.to_string()))?;
        let capacity = raw.capacity.unwrap_or(capacity);
        let config = SimConfig {
            ratings_path: raw.ratings_path.as_ref().map(PathBuf::from),
            ratings_delimiter: raw.ratings_delimiter.clone().unwrap_or_else(|| "::".into()),
            requests_path: raw.requests_path.as_ref().map(PathBuf::from),
            mobility_path: raw.mobility_path.as_ref().map(PathBuf::from),
            scenario: SyntheticRatings {
                users: raw.scenario_users.unwrap_or(2000),
                items: raw.scenario_items.unwrap_or(1000),
                ratings: raw.scenario_ratings.unwrap_or(100_000),
                item_exponent: raw.scenario_item_exponent.unwrap_or(1.0),
                user_exponent: raw.scenario_user_exponent.unwrap_or(0.6),
            },
            policy,
            seed,
            out_dir: PathBuf::from(raw.out_dir.as_deref().unwrap_or("out")),
            grid_cols: raw.grid_cols.unwrap_or(2),
            grid_rows: raw.grid_rows.unwrap_or(2),
            region_size: raw.region_size.unwrap_or(200.0),
            neighbor_model,
            trace: TraceConfig {
                slot_count: raw.slot_count.unwrap_or(t),
                slots_per_aggregation: raw.slots_per_aggregation.unwrap_or(theta),
                top_users: raw.top_users.unwrap_or(top_users),
                top_files: raw.top_files.unwrap_or(top_files),
                seed,
            },
            capacities_uniform: capacity,
            capacities: raw.capacities.clone(),
            cost,
            learning_rate: raw.learning_rate.unwrap_or(0.003),
            ridge: raw.ridge.unwrap_or(1.0),
            fl_mode,
            fl_rounds: raw.fl_rounds.unwrap_or(400),
            fl_local_steps: raw.fl_local_steps.unwrap_or(1),
            demand_window_slots: raw.demand_window_slots.unwrap_or(50),
            epsilon: raw.epsilon.unwrap_or(0.1),
            top_m: raw.top_m.unwrap_or(capacity.floor().max(1.0) as usize),
            mobility: MobilityConfig {
                step_scale: raw.step_scale.unwrap_or(2.0),
                cluster_every: raw.cluster_every.unwrap_or(20),
                cluster_size: raw.cluster_size.unwrap_or(5),
                cluster_travel_slots: raw.cluster_travel_slots.unwrap_or(6),
                cluster_jitter: 2.0,
            },
            density: DensityConfig {
                band_fraction: raw.band_fraction.unwrap_or(0.25),
                min_cluster_size: raw.min_cluster_size.unwrap_or(2),
                ..DensityConfig::default()
            },
            routing: RoutingConfig {
                inter_cell_prefers_sbs: raw.inter_cell_prefers_sbs.unwrap_or(true),
                intra_counts_as_hit: raw.intra_counts_as_hit.unwrap_or(true),
            },
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::Config(msg));
        if self.grid_cols == 0 || self.grid_rows == 0 {
            return fail("grid dimensions must be >= 1".into());
        }
        if !(self.region_size > 0.0) {
            return fail("region_size must be positive".into());
        }
        self.trace.validate().map_err(|e| SimError::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.epsilon) {
            return fail(format!("epsilon {} outside [0, 1]", self.epsilon));
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be positive".into());
        }
        if self.ridge < 0.0 {
            return fail("ridge must be >= 0".into());
        }
        if self.fl_local_steps == 0 {
            return fail("fl_local_steps must be >= 1".into());
        }
        if self.demand_window_slots == 0 {
            return fail("demand_window_slots must be >= 1".into());
        }
        if self.capacities_uniform < 0.0 {
            return fail("capacity must be >= 0".into());
        }
        if let Some(caps) = &self.capacities {
            if caps.len() != self.sbs_count() {
                return fail(format!(
                    "capacities length {} does not match the {} SBS grid",
                    caps.len(),
                    self.sbs_count()
                ));
            }
        }
        if self.top_m as f64 > self.capacity_of(0) {
            return fail(format!(
                "top_m {} exceeds the unit-size capacity {}",
                self.top_m,
                self.capacity_of(0)
            ));
        }
        if self.policy == Policy::Oracle {
            let pairs = self.sbs_count() * self.trace.top_files;
            if pairs > placement::EXHAUSTIVE_PAIR_LIMIT {
                return fail(format!(
                    "oracle policy needs K*M <= {}, got {pairs}",
                    placement::EXHAUSTIVE_PAIR_LIMIT
                ));
            }
        }
        Ok(())
    }

    pub fn sbs_count(&self) -> usize {
        self.grid_cols * self.grid_rows
    }

    fn capacity_of(&self, k: usize) -> f64 {
        match &self.capacities {
            Some(caps) => caps[k],
            None => self.capacities_uniform,
        }
    }

    fn capacity_vec(&self) -> Vec<f64> {
        (0..self.sbs_count()).map(|k| self.capacity_of(k)).collect()
    }

    pub fn topology(&self) -> Result<NetworkTopology, SimError> {
        NetworkTopology::grid(
            self.grid_cols,
            self.grid_rows,
            Rect::new(0.0, 0.0, self.region_size, self.region_size),
            self.neighbor_model,
        )
        .map_err(|e| SimError::Config(e.to_string()))
    }

    /// Fields that must agree across configs entering one comparison.
    fn trace_identity(&self) -> String {
        format!(
            "{:?}|{:?}|{:?}|{:?}|{}x{}|{}|{:?}|{:?}",
            self.ratings_path,
            self.requests_path,
            self.mobility_path,
            self.scenario,
            self.grid_cols,
            self.grid_rows,
            self.region_size,
            self.trace,
            self.mobility,
        )
    }
}

/// One emitted metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub period: usize,
    pub policy: String,
    /// Absent when the period saw no requests.
    pub ce: Option<f64>,
    pub cum_lambda: f64,
    pub cost: f64,
    pub runtime_ms: u128,
    /// Mean pedestrian density per cell over the period.
    pub psi: Vec<f64>,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let ce = self.ce.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.period, self.policy, ce, self.cum_lambda, self.cost, self.runtime_ms
        )
    }
}

pub const METRICS_HEADER: &str = "period,policy,ce,cum_lambda,cost,runtime_ms";

/// TASK-1 bookkeeping for one (slot, cell) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotCellAudit {
    pub slot: u64,
    pub cell: usize,
    pub period: usize,
    pub psi: f64,
    pub present: usize,
    pub leavers: usize,
    pub filtered_counts: Vec<usize>,
    pub admitted_counts: Vec<usize>,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub metrics: Vec<MetricsRow>,
    pub audits: Vec<SlotCellAudit>,
    /// Per-file demand profile active during each period.
    pub lambda_per_period: Vec<Vec<f64>>,
    /// Placement evaluated during each period.
    pub placements: Vec<CacheMatrix>,
    /// Greedy objective trace per period (frpl and fullinfo placements).
    pub greedy_traces: Vec<(usize, Vec<f64>)>,
    pub file_count: usize,
    pub cluster_truths: Vec<trace::ClusterEventTruth>,
    pub mobility_samples: Vec<MobilitySample>,
    pub skipped_lines: usize,
    pub randomly_placed_users: usize,
}

fn sub_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 over seed + tag keeps derived streams independent.
    let mut z = seed.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Inputs {
    topology: NetworkTopology,
    catalog: ContentCatalog,
    file_count: usize,
    joined: trace::JoinedTrace,
    mobility_by_slot: Vec<Vec<(u64, Point)>>,
    mobility_samples: Vec<MobilitySample>,
    cluster_truths: Vec<trace::ClusterEventTruth>,
    skipped_lines: usize,
}

fn prepare_inputs(config: &SimConfig) -> Result<Inputs, SimError> {
    let topology = config.topology()?;
    let t = config.trace.slot_count;

    // Request stream: canonical csv, ratings file, or the synthetic scenario
    // written through the same ratings ingestion path.
    let (events, file_count, users, skipped): (Vec<RequestEvent>, usize, Vec<u64>, usize) =
        if let Some(path) = &config.requests_path {
            let events = trace::read_requests(path)?;
            if events.is_empty() {
                return Err(SimError::Trace(TraceError::Empty(path.display().to_string())));
            }
            let file_count = events.iter().map(|e| e.file).max().unwrap() + 1;
            let mut users: Vec<u64> = events.iter().map(|e| e.user).collect();
            users.sort_unstable();
            users.dedup();
            (events, file_count, users, 0)
        } else if let Some(path) = &config.ratings_path {
            let loaded = trace::load_requests(path, &config.trace, &config.ratings_delimiter)?;
            (loaded.events, loaded.file_count, loaded.users, loaded.skipped)
        } else {
            let content = trace::generate_ratings(&config.scenario, sub_seed(config.seed, 1));
            let dir = std::env::temp_dir().join(format!("fedcache-scenario-{}", sub_seed(config.seed, 2)));
            std::fs::create_dir_all(&dir).map_err(TraceError::Io)?;
            let path = dir.join("ratings.dat");
            std::fs::write(&path, content).map_err(TraceError::Io)?;
            let loaded = trace::load_requests(&path, &config.trace, "::")?;
            let _ = std::fs::remove_dir_all(&dir);
            (loaded.events, loaded.file_count, loaded.users, loaded.skipped)
        };

    let (samples, truths) = if let Some(path) = &config.mobility_path {
        (trace::read_mobility(path)?, Vec::new())
    } else {
        trace::synth_mobility(&topology, &users, t, &config.mobility, sub_seed(config.seed, 3))
    };

    let joined = trace::slot_requests_by_cell(&events, &samples, &topology, t, sub_seed(config.seed, 4))?;

    let mut mobility_by_slot: Vec<Vec<(u64, Point)>> = vec![Vec::new(); t as usize];
    for s in &samples {
        if s.slot < t {
            mobility_by_slot[s.slot as usize].push((s.user, s.position));
        }
    }

    Ok(Inputs {
        topology,
        catalog: ContentCatalog::uniform(file_count),
        file_count,
        joined,
        mobility_by_slot,
        mobility_samples: samples,
        cluster_truths: truths,
        skipped_lines: skipped,
    })
}

/// Execute one simulation run.
///
/// Period `n` is evaluated against the placement computed from period
/// `n - 1`'s predictions; period 0 starts cold with a uniform demand profile.
pub fn run(config: &SimConfig) -> Result<RunArtifacts, SimError> {
    config.validate()?;
    let inputs = prepare_inputs(config)?;
    let topology = &inputs.topology;
    let catalog = &inputs.catalog;
    let k_n = topology.sbs_count();
    let m = inputs.file_count;
    let t = config.trace.slot_count;
    let theta = config.trace.slots_per_aggregation;
    let periods = config.trace.periods();
    let capacities = config.capacity_vec();

    if config.policy == Policy::Oracle && k_n * m > placement::EXHAUSTIVE_PAIR_LIMIT {
        return Err(SimError::Config(format!(
            "oracle policy needs K*M <= {}, got {}",
            placement::EXHAUSTIVE_PAIR_LIMIT,
            k_n * m
        )));
    }

    // Empirical per-period request densities (requests per slot), known in
    // advance from the joined trace; online policies only read periods they
    // have already evaluated.
    let slots_of_period = |n: usize| -> std::ops::Range<u64> {
        let start = n as u64 * theta;
        start..(start + theta).min(t)
    };
    let mut emp_lambda: Vec<Vec<Vec<f64>>> = Vec::with_capacity(periods);
    for n in 0..periods {
        let range = slots_of_period(n);
        let len = (range.end - range.start) as f64;
        let mut table = vec![vec![0.0; m]; k_n];
        for slot in range {
            for r in &inputs.joined.per_slot[slot as usize] {
                table[r.cell][r.file] += 1.0;
            }
        }
        for row in &mut table {
            for v in row.iter_mut() {
                *v /= len;
            }
        }
        emp_lambda.push(table);
    }
    // Per-slot per-cell counts feed the demand window.
    let mut slot_counts: Vec<Vec<HashMap<usize, u32>>> = vec![vec![HashMap::new(); k_n]; t as usize];
    for (slot, reqs) in inputs.joined.per_slot.iter().enumerate() {
        for r in reqs {
            *slot_counts[slot][r.cell].entry(r.file).or_insert(0) += 1;
        }
    }

    let problem_with = |lambda: Vec<Vec<f64>>| -> Result<PlacementProblem, SimError> {
        PlacementProblem::new(catalog.clone(), config.cost, capacities.clone(), lambda)
            .map_err(|e| SimError::Internal(e.to_string()))
    };

    let users_total: usize = {
        let mut ids: Vec<u64> = inputs.mobility_samples.iter().map(|s| s.user).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    };

    // Cold-start placement: uniform popularity, uniform pedestrian density.
    let uniform_lambda = vec![1.0 / m as f64; m];
    let cold_psi = vec![users_total as f64 / k_n as f64; k_n];

    let fit_schedule = AggregationRound::new(config.fl_rounds, config.fl_local_steps, config.learning_rate)
        .map_err(|e| SimError::Config(e.to_string()))?;

    let mut metrics = Vec::with_capacity(periods);
    let mut audits = Vec::new();
    let mut lambda_per_period = Vec::with_capacity(periods);
    let mut placements: Vec<CacheMatrix> = Vec::with_capacity(periods);
    let mut greedy_traces = Vec::new();

    let mut positions: HashMap<u64, (Point, Point)> = HashMap::new();
    let mut egreedy_counts: Vec<Vec<f64>> = vec![vec![0.0; m]; k_n];
    let mut global_model: Option<LinearModel> = None;
    let mut current_lambda = uniform_lambda.clone();
    let mut cum_lambda = 0.0;

    let place = |policy: Policy,
                 psi: &[f64],
                 p: &[f64],
                 emp_next: &[Vec<f64>],
                 estimates: &[Vec<f64>],
                 window_counts: &[Vec<f64>],
                 period_tag: u64|
     -> Result<placement::PlacementResult, SimError> {
        match policy {
            Policy::Frpl => {
                let lambda: Vec<Vec<f64>> = psi
                    .iter()
                    .map(|&pk| demand::expected_request_density(pk, p))
                    .collect();
                Ok(placement::greedy_place(&problem_with(lambda)?)?)
            }
            Policy::Oracle => {
                let lambda: Vec<Vec<f64>> = psi
                    .iter()
                    .map(|&pk| demand::expected_request_density(pk, p))
                    .collect();
                Ok(placement::exhaustive_place(&problem_with(lambda)?)?)
            }
            Policy::FullInfo => Ok(placement::full_info_place(&problem_with(emp_next.to_vec())?)?),
            Policy::EGreedy => Ok(placement::epsilon_greedy_place(
                &problem_with(emp_next.to_vec())?,
                estimates,
                config.top_m,
                config.epsilon,
                sub_seed(config.seed, 100 + period_tag),
            )?),
            Policy::Random => Ok(placement::random_place(
                &problem_with(emp_next.to_vec())?,
                sub_seed(config.seed, 200 + period_tag),
            )?),
            Policy::Local => Ok(placement::local_caching_place(
                &problem_with(emp_next.to_vec())?,
                window_counts,
            )?),
        }
    };

    let zero_estimates = vec![vec![0.0; m]; k_n];
    let mut next_placement = place(
        config.policy,
        &cold_psi,
        &uniform_lambda
            .iter()
            .map(|&l| l / uniform_lambda.iter().sum::<f64>())
            .collect::<Vec<f64>>(),
        &emp_lambda[0],
        &zero_estimates,
        &zero_estimates,
        0,
    )?;

    for n in 0..periods {
        let started = Instant::now();
        let placement_now = next_placement.cache.clone();
        if !next_placement.cost_trace.is_empty() {
            greedy_traces.push((n, next_placement.cost_trace.clone()));
        }
        lambda_per_period.push(current_lambda.clone());

        let mut outcomes: Vec<RoutingOutcome> = Vec::new();
        let mut psi_sum = vec![0.0; k_n];
        let mut slots_seen = 0u64;
        for slot in slots_of_period(n) {
            // Update tracked positions; unseen users keep their spot.
            for (user, pos) in &inputs.mobility_by_slot[slot as usize] {
                positions
                    .entry(*user)
                    .and_modify(|e| *e = (*pos, e.0))
                    .or_insert((*pos, *pos));
            }
            let user_points: Vec<(Point, Point)> = positions.values().copied().collect();
            for cell in 0..k_n {
                let report = mobility::estimate_cell_density(
                    cell,
                    topology,
                    &user_points,
                    &config.density,
                    sub_seed(config.seed, slot.wrapping_mul(1_000_003) ^ cell as u64),
                );
                psi_sum[cell] += report.psi;
                audits.push(SlotCellAudit {
                    slot,
                    cell,
                    period: n,
                    psi: report.psi,
                    present: report.present,
                    leavers: report.leavers,
                    filtered_counts: report.filtered_counts,
                    admitted_counts: report.admitted_counts,
                });
            }
            for r in &inputs.joined.per_slot[slot as usize] {
                outcomes.push(routing::route_request(
                    &placement_now,
                    topology,
                    r.cell,
                    r.file,
                    slot,
                    &config.routing,
                ));
                egreedy_counts[r.cell][r.file] += 1.0;
            }
            slots_seen += 1;
        }
        let psi_mean: Vec<f64> = psi_sum.iter().map(|s| s / slots_seen.max(1) as f64).collect();

        let ce = routing::cache_efficiency(&outcomes, &config.routing);
        let captured: f64 = (0..k_n)
            .flat_map(|k| (0..m).map(move |f| (k, f)))
            .filter(|&(k, f)| placement_now.get(k, f))
            .map(|(k, f)| emp_lambda[n][k][f])
            .sum();
        cum_lambda += captured;
        let cost = placement::network_cost(&placement_now, &problem_with(emp_lambda[n].clone())?);
        placements.push(placement_now);

        // Learn from this period and place for the next one.
        if n + 1 < periods {
            let window_start = (slots_of_period(n).end as usize).saturating_sub(config.demand_window_slots);
            let window = &slot_counts[window_start..slots_of_period(n).end as usize];
            let window_totals: Vec<Vec<f64>> = (0..k_n)
                .map(|k| {
                    let mut row = vec![0.0; m];
                    for slot in window {
                        for (&f, &c) in &slot[k] {
                            row[f] += c as f64;
                        }
                    }
                    row
                })
                .collect();

            let p = if matches!(config.policy, Policy::Frpl | Policy::Oracle) {
                let batches: Vec<_> = (0..k_n)
                    .map(|k| {
                        let per_sbs: Vec<HashMap<usize, u32>> =
                            window.iter().map(|slot| slot[k].clone()).collect();
                        demand::request_training_batch(m, &per_sbs).map_err(SimError::from)
                    })
                    .collect::<Result<_, _>>()?;
                let fit = demand::fit_request_density(
                    &batches,
                    m,
                    config.ridge,
                    &fit_schedule,
                    config.fl_mode,
                    global_model.take(),
                )?;
                global_model = fit.model.clone();
                current_lambda = fit.lambda.clone();
                demand::popularity(&fit.lambda)?.p
            } else {
                current_lambda = uniform_lambda.clone();
                demand::popularity(&uniform_lambda)?.p
            };

            next_placement = place(
                config.policy,
                &psi_mean,
                &p,
                &emp_lambda[n + 1],
                &egreedy_counts,
                &window_totals,
                (n + 1) as u64,
            )?;
        }

        metrics.push(MetricsRow {
            period: n,
            policy: config.policy.name().to_string(),
            ce,
            cum_lambda,
            cost,
            runtime_ms: started.elapsed().as_millis(),
            psi: psi_mean,
        });
    }

    Ok(RunArtifacts {
        metrics,
        audits,
        lambda_per_period,
        placements,
        greedy_traces,
        file_count: m,
        cluster_truths: inputs.cluster_truths,
        mobility_samples: inputs.mobility_samples,
        skipped_lines: inputs.skipped_lines,
        randomly_placed_users: inputs.joined.randomly_placed_users.len(),
    })
}

/// Write the metrics and snapshot files for one run under `out_dir`.
pub fn write_artifacts(out_dir: &Path, artifacts: &RunArtifacts) -> Result<(), SimError> {
    let io = |e: std::io::Error| SimError::Internal(e.to_string());
    std::fs::create_dir_all(out_dir).map_err(io)?;

    let mut metrics = String::from(METRICS_HEADER);
    metrics.push('\n');
    for row in &artifacts.metrics {
        metrics.push_str(&row.csv_line());
        metrics.push('\n');
    }
    std::fs::write(out_dir.join("metrics.csv"), metrics).map_err(io)?;

    let mut psi = String::from("period,cell,psi_mean\n");
    for row in &artifacts.metrics {
        for (cell, v) in row.psi.iter().enumerate() {
            psi.push_str(&format!("{},{},{}\n", row.period, cell, v));
        }
    }
    std::fs::write(out_dir.join("psi.csv"), psi).map_err(io)?;

    let mut iters = String::from("period,iteration,cost\n");
    for (period, trace) in &artifacts.greedy_traces {
        for (i, c) in trace.iter().enumerate() {
            iters.push_str(&format!("{period},{},{c}\n", i + 1));
        }
    }
    std::fs::write(out_dir.join("greedy_iterations.csv"), iters).map_err(io)?;

    let mut snapshot = String::from("sbs,file\n");
    if let Some(last) = artifacts.placements.last() {
        for k in 0..last.sbs_count() {
            for f in last.files_at(k) {
                snapshot.push_str(&format!("{k},{}\n", f + 1));
            }
        }
    }
    std::fs::write(out_dir.join("placement.csv"), snapshot).map_err(io)?;
    Ok(())
}

/// Mean metrics of one policy across seeds, warm-up period excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySummary {
    pub policy: String,
    pub mean_ce: f64,
    pub final_cum_lambda: f64,
    pub mean_cost: f64,
}

#[derive(Debug, Clone)]
pub struct CompareOutcome {
    /// `(seed, rows)` per config, in input order.
    pub runs: Vec<(u64, Vec<MetricsRow>)>,
    /// Ranked by mean cache efficiency, best first.
    pub summary: Vec<PolicySummary>,
}

/// Run every config against every seed and summarize per policy. All
/// configs must share the same trace identity.
pub fn compare(configs: &[SimConfig], seeds: &[u64]) -> Result<CompareOutcome, SimError> {
    if configs.is_empty() || seeds.is_empty() {
        return Err(SimError::Config("compare needs at least one config and one seed".into()));
    }
    let identity = {
        let mut c = configs[0].clone();
        c.seed = 0;
        c.trace.seed = 0;
        c.trace_identity()
    };
    for config in configs.iter().skip(1) {
        let mut c = config.clone();
        c.seed = 0;
        c.trace.seed = 0;
        if c.trace_identity() != identity {
            return Err(SimError::Config(
                "compare refused: configs do not share the same trace".into(),
            ));
        }
    }

    let mut runs = Vec::new();
    let mut per_policy: HashMap<String, (Vec<f64>, Vec<f64>, Vec<f64>)> = HashMap::new();
    for config in configs {
        for &seed in seeds {
            let mut c = config.clone();
            c.seed = seed;
            c.trace.seed = seed;
            let artifacts = run(&c)?;
            let entry = per_policy.entry(config.policy.name().to_string()).or_default();
            for row in artifacts.metrics.iter().skip(1) {
                if let Some(ce) = row.ce {
                    entry.0.push(ce);
                }
                entry.2.push(row.cost);
            }
            if let Some(last) = artifacts.metrics.last() {
                entry.1.push(last.cum_lambda);
            }
            runs.push((seed, artifacts.metrics));
        }
    }

    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let mut summary: Vec<PolicySummary> = per_policy
        .into_iter()
        .map(|(policy, (ce, cum, cost))| PolicySummary {
            policy,
            mean_ce: mean(&ce),
            final_cum_lambda: mean(&cum),
            mean_cost: mean(&cost),
        })
        .collect();
    summary.sort_by(|a, b| b.mean_ce.total_cmp(&a.mean_ce).then(a.policy.cmp(&b.policy)));
    Ok(CompareOutcome { runs, summary })
}

/// Write the combined metrics and ranking files of a comparison.
pub fn write_comparison(out_dir: &Path, outcome: &CompareOutcome) -> Result<(), SimError> {
    let io = |e: std::io::Error| SimError::Internal(e.to_string());
    std::fs::create_dir_all(out_dir).map_err(io)?;
    let mut combined = String::from("seed,period,policy,ce,cum_lambda,cost,runtime_ms\n");
    for (seed, rows) in &outcome.runs {
        for row in rows {
            combined.push_str(&format!("{seed},{}\n", row.csv_line()));
        }
    }
    std::fs::write(out_dir.join("combined_metrics.csv"), combined).map_err(io)?;

    let mut summary = String::from("policy,mean_ce,final_cum_lambda,mean_cost\n");
    for s in &outcome.summary {
        summary.push_str(&format!(
            "{},{},{},{}\n",
            s.policy, s.mean_ce, s.final_cum_lambda, s.mean_cost
        ));
    }
    std::fs::write(out_dir.join("summary.csv"), summary).map_err(io)?;
    Ok(())
}
