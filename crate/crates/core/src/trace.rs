//! Trace ingestion: ratings files become a slotted request stream, synthetic
//! walkers (with seeded inbound cluster events) provide the mobility stream,
//! and the join attributes every request to the requesting user's cell.

use crate::model::{MobilitySample, NetworkTopology, Point, RequestEvent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("trace {path} line {line}: {msg}")]
    Malformed {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("trace {0} holds no usable records")]
    Empty(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Shape of one ingestion run: the slot grid and the head filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceConfig {
    /// Number of time slots the trace is binned into.
    pub slot_count: u64,
    /// Slots per global aggregation period.
    pub slots_per_aggregation: u64,
    /// Keep only the most active users, up to this many.
    pub top_users: usize,
    /// Keep only the most rated files, up to this many.
    pub top_files: usize,
    pub seed: u64,
}

impl TraceConfig {
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.slots_per_aggregation == 0 || self.slot_count < self.slots_per_aggregation {
            return Err(TraceError::Invalid(
                "need slot_count >= slots_per_aggregation >= 1".into(),
            ));
        }
        if self.top_users == 0 || self.top_files == 0 {
            return Err(TraceError::Invalid("top_users and top_files must be >= 1".into()));
        }
        Ok(())
    }

    pub fn periods(&self) -> usize {
        self.slot_count.div_ceil(self.slots_per_aggregation) as usize
    }
}

/// A slotted request stream with its compacted file ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTrace {
    /// Events ordered by slot.
    pub events: Vec<RequestEvent>,
    /// Catalog size after compaction.
    pub file_count: usize,
    /// Original item id of each compact file index.
    pub file_ids: Vec<u64>,
    /// Distinct user ids, ascending.
    pub users: Vec<u64>,
    /// Malformed input lines that were skipped.
    pub skipped: usize,
}

struct RawRating {
    user: u64,
    item: u64,
    timestamp: i64,
}

/// Read a delimiter-separated ratings file (`user::item::rating::timestamp`
/// by default), keep the most-rated files and most active users, order by
/// timestamp and bin into `slot_count` equal-count slots.
pub fn load_requests(path: &Path, config: &TraceConfig, delimiter: &str) -> Result<LoadedTrace, TraceError> {
    config.validate()?;
    let display = path.display().to_string();
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    let mut skipped = 0usize;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(delimiter).collect();
        let parsed = (|| -> Option<RawRating> {
            if fields.len() < 4 {
                return None;
            }
            let user = fields[0].trim().parse().ok()?;
            let item = fields[1].trim().parse().ok()?;
            fields[2].trim().parse::<f64>().ok()?;
            let timestamp = fields[3].trim().parse().ok()?;
            Some(RawRating {
                user,
                item,
                timestamp,
            })
        })();
        match parsed {
            Some(r) => records.push(r),
            None => {
                skipped += 1;
                let _ = idx;
            }
        }
    }
    if records.is_empty() {
        return Err(TraceError::Empty(display));
    }

    // Head filters: most-rated files, then most active users, ties toward
    // the lower id.
    let top_ids = |counts: HashMap<u64, usize>, keep: usize| -> Vec<u64> {
        let mut pairs: Vec<(u64, usize)> = counts.into_iter().collect();
        pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        pairs.truncate(keep);
        pairs.into_iter().map(|(id, _)| id).collect()
    };
    let mut file_counts: HashMap<u64, usize> = HashMap::new();
    for r in &records {
        *file_counts.entry(r.item).or_default() += 1;
    }
    let kept_files: std::collections::HashSet<u64> =
        top_ids(file_counts, config.top_files).into_iter().collect();
    records.retain(|r| kept_files.contains(&r.item));

    let mut user_counts: HashMap<u64, usize> = HashMap::new();
    for r in &records {
        *user_counts.entry(r.user).or_default() += 1;
    }
    let kept_users: std::collections::HashSet<u64> =
        top_ids(user_counts, config.top_users).into_iter().collect();
    records.retain(|r| kept_users.contains(&r.user));
    if records.is_empty() {
        return Err(TraceError::Empty(display));
    }

    // Stable order: timestamp, then input order (already the vec order).
    records.sort_by_key(|r| r.timestamp);

    let mut file_ids: Vec<u64> = records.iter().map(|r| r.item).collect();
    file_ids.sort_unstable();
    file_ids.dedup();
    let index_of: HashMap<u64, usize> = file_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();

    let n = records.len() as u64;
    let t = config.slot_count;
    let events: Vec<RequestEvent> = records
        .iter()
        .enumerate()
        .map(|(j, r)| RequestEvent {
            slot: (j as u64).saturating_mul(t) / n,
            user: r.user,
            file: index_of[&r.item],
        })
        .collect();

    let mut users: Vec<u64> = records.iter().map(|r| r.user).collect();
    users.sort_unstable();
    users.dedup();

    Ok(LoadedTrace {
        events,
        file_count: file_ids.len(),
        file_ids,
        users,
        skipped,
    })
}

/// Parameters of the synthetic ratings generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticRatings {
    pub users: usize,
    pub items: usize,
    pub ratings: usize,
    /// Zipf exponent of per-item popularity.
    pub item_exponent: f64,
    /// Zipf exponent of per-user activity.
    pub user_exponent: f64,
}

impl Default for SyntheticRatings {
    fn default() -> Self {
        SyntheticRatings {
            users: 2000,
            items: 1000,
            ratings: 100_000,
            item_exponent: 1.0,
            user_exponent: 0.6,
        }
    }
}

fn zipf_sampler(n: usize, exponent: f64) -> Vec<f64> {
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for r in 1..=n {
        acc += 1.0 / (r as f64).powf(exponent);
        cdf.push(acc);
    }
    for v in &mut cdf {
        *v /= acc;
    }
    cdf
}

fn sample_cdf(cdf: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let u: f64 = rng.gen();
    cdf.partition_point(|&c| c < u).min(cdf.len() - 1)
}

/// Generate a ratings file in the `user::item::rating::timestamp` format
/// with Zipf item popularity and user activity.
pub fn generate_ratings(params: &SyntheticRatings, seed: u64) -> String {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let item_cdf = zipf_sampler(params.items, params.item_exponent);
    let user_cdf = zipf_sampler(params.users, params.user_exponent);
    let mut out = String::new();
    let mut ts: i64 = 978_000_000;
    for _ in 0..params.ratings {
        let user = sample_cdf(&user_cdf, &mut rng) + 1;
        let item = sample_cdf(&item_cdf, &mut rng) + 1;
        let rating = rng.gen_range(1..=5);
        ts += rng.gen_range(1..=120);
        out.push_str(&format!("{user}::{item}::{rating}::{ts}\n"));
    }
    out
}

/// Knobs of the synthetic mobility generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityConfig {
    /// Walker speed in meters per slot; zero freezes everyone.
    pub step_scale: f64,
    /// Slots between seeded cluster events; zero disables them.
    pub cluster_every: u64,
    /// Users per cluster event.
    pub cluster_size: usize,
    /// Slots from spawn to arrival in the target cell.
    pub cluster_travel_slots: u64,
    /// Intra-cluster positional spread in meters.
    pub cluster_jitter: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        MobilityConfig {
            step_scale: 2.0,
            cluster_every: 20,
            cluster_size: 5,
            cluster_travel_slots: 6,
            cluster_jitter: 2.0,
        }
    }
}

/// Generator ground truth for one cluster event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterEventTruth {
    pub target_cell: usize,
    pub spawn_slot: u64,
    pub arrival_slot: u64,
    pub members: Vec<u64>,
}

struct Walker {
    user: u64,
    pos: Point,
    waypoint: Point,
}

fn clamp_to(region: &crate::model::Rect, p: Point) -> Point {
    Point::new(p.x.clamp(region.x0, region.x1), p.y.clamp(region.y0, region.y1))
}

/// Random-waypoint walkers for `users`, plus groups spawned in a neighbor
/// cell that migrate into a target cell over a few slots. Returns the
/// samples (slot-major, user-ascending) and the per-event ground truth.
pub fn synth_mobility(
    topology: &NetworkTopology,
    users: &[u64],
    slots: u64,
    config: &MobilityConfig,
    seed: u64,
) -> (Vec<MobilitySample>, Vec<ClusterEventTruth>) {
    let region = topology.region();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let random_point = |rng: &mut ChaCha12Rng| {
        Point::new(
            rng.gen_range(region.x0..=region.x1),
            rng.gen_range(region.y0..=region.y1),
        )
    };
    let mut walkers: Vec<Walker> = users
        .iter()
        .map(|&user| {
            let pos = random_point(&mut rng);
            Walker {
                user,
                pos,
                waypoint: random_point(&mut rng),
            }
        })
        .collect();

    // Plan the cluster events up front so their membership is stable.
    let mut truths = Vec::new();
    let mut next_user = users.iter().copied().max().unwrap_or(0) + 1_000_000;
    struct PlannedEvent {
        truth_index: usize,
        start: Point,
        entry: Point,
        offsets: Vec<Point>,
    }
    let mut planned: Vec<PlannedEvent> = Vec::new();
    if config.cluster_every > 0 && config.cluster_size > 0 {
        let k_n = topology.sbs_count();
        let mut e = 0u64;
        loop {
            let spawn_slot = (e + 1) * config.cluster_every;
            let arrival_slot = spawn_slot + config.cluster_travel_slots;
            if arrival_slot >= slots {
                break;
            }
            let target = (e as usize) % k_n;
            let neighbors = topology.neighbors(target);
            if neighbors.is_empty() {
                break;
            }
            let from = neighbors[(e as usize) % neighbors.len()];
            let c_from = topology.cell_rect(from).center();
            let c_to = topology.cell_rect(target).center();
            let lerp = |s: f64| Point::new(c_from.x + s * (c_to.x - c_from.x), c_from.y + s * (c_to.y - c_from.y));
            let members: Vec<u64> = (0..config.cluster_size)
                .map(|_| {
                    next_user += 1;
                    next_user
                })
                .collect();
            let offsets: Vec<Point> = members
                .iter()
                .map(|_| {
                    Point::new(
                        rng.gen_range(-config.cluster_jitter..=config.cluster_jitter),
                        rng.gen_range(-config.cluster_jitter..=config.cluster_jitter),
                    )
                })
                .collect();
            truths.push(ClusterEventTruth {
                target_cell: target,
                spawn_slot,
                arrival_slot,
                members,
            });
            planned.push(PlannedEvent {
                truth_index: truths.len() - 1,
                start: lerp(0.15),
                entry: lerp(0.55),
                offsets,
            });
            e += 1;
        }
    }

    let mut samples = Vec::new();
    // Cluster members become ordinary walkers after arrival.
    let mut graduated: Vec<Walker> = Vec::new();
    for slot in 0..slots {
        for w in walkers.iter_mut().chain(graduated.iter_mut()) {
            if config.step_scale > 0.0 {
                let d = w.pos.dist(&w.waypoint);
                if d <= config.step_scale {
                    w.pos = w.waypoint;
                    w.waypoint = random_point(&mut rng);
                } else {
                    let f = config.step_scale / d;
                    w.pos = clamp_to(
                        &region,
                        Point::new(w.pos.x + f * (w.waypoint.x - w.pos.x), w.pos.y + f * (w.waypoint.y - w.pos.y)),
                    );
                }
            }
            samples.push(MobilitySample {
                slot,
                user: w.user,
                position: w.pos,
            });
        }
        for ev in &planned {
            let truth = &truths[ev.truth_index];
            if slot < truth.spawn_slot || slot > truth.arrival_slot {
                continue;
            }
            let progress = (slot - truth.spawn_slot) as f64 / truth.arrival_slot.saturating_sub(truth.spawn_slot).max(1) as f64;
            let base = Point::new(
                ev.start.x + progress * (ev.entry.x - ev.start.x),
                ev.start.y + progress * (ev.entry.y - ev.start.y),
            );
            for (member, offset) in truth.members.iter().zip(&ev.offsets) {
                let pos = clamp_to(&region, Point::new(base.x + offset.x, base.y + offset.y));
                samples.push(MobilitySample {
                    slot,
                    user: *member,
                    position: pos,
                });
                if slot == truth.arrival_slot {
                    graduated.push(Walker {
                        user: *member,
                        pos,
                        waypoint: random_point(&mut rng),
                    });
                }
            }
        }
    }
    (samples, truths)
}

/// One request attributed to a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRequest {
    pub user: u64,
    pub file: usize,
    pub cell: usize,
}

/// Requests joined with the mobility stream, slot by slot.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinedTrace {
    /// `per_slot[t]` lists the requests issued during slot `t`.
    pub per_slot: Vec<Vec<CellRequest>>,
    /// Users that never had a position and were placed uniformly at random.
    pub randomly_placed_users: Vec<u64>,
}

/// Attribute every request to the issuing user's current cell; users keep
/// their last known cell between samples, and users with no position ever
/// are placed uniformly at random once (seeded) and flagged.
pub fn slot_requests_by_cell(
    requests: &[RequestEvent],
    mobility: &[MobilitySample],
    topology: &NetworkTopology,
    slots: u64,
    seed: u64,
) -> Result<JoinedTrace, TraceError> {
    let mut mobility_by_slot: Vec<Vec<&MobilitySample>> = vec![Vec::new(); slots as usize];
    for s in mobility {
        if s.slot < slots {
            mobility_by_slot[s.slot as usize].push(s);
        }
    }
    let mut requests_by_slot: Vec<Vec<&RequestEvent>> = vec![Vec::new(); slots as usize];
    for r in requests {
        if r.slot >= slots {
            return Err(TraceError::Invalid(format!(
                "request slot {} beyond horizon {slots}",
                r.slot
            )));
        }
        requests_by_slot[r.slot as usize].push(r);
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut last_cell: HashMap<u64, usize> = HashMap::new();
    let mut randomly_placed = Vec::new();
    let mut per_slot = Vec::with_capacity(slots as usize);
    for t in 0..slots as usize {
        for s in &mobility_by_slot[t] {
            let cell = topology.assign_cell(s.position).map_err(|e| {
                TraceError::Invalid(format!("mobility sample for user {} at slot {t}: {e}", s.user))
            })?;
            last_cell.insert(s.user, cell);
        }
        let mut slot_requests = Vec::with_capacity(requests_by_slot[t].len());
        for r in &requests_by_slot[t] {
            let cell = match last_cell.get(&r.user) {
                Some(&c) => c,
                None => {
                    let c = rng.gen_range(0..topology.sbs_count());
                    last_cell.insert(r.user, c);
                    randomly_placed.push(r.user);
                    c
                }
            };
            slot_requests.push(CellRequest {
                user: r.user,
                file: r.file,
                cell,
            });
        }
        per_slot.push(slot_requests);
    }
    Ok(JoinedTrace {
        per_slot,
        randomly_placed_users: randomly_placed,
    })
}

/// Write the canonical request stream (`slot,user,file`, one-based files).
pub fn write_requests(path: &Path, events: &[RequestEvent]) -> Result<(), TraceError> {
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "slot,user,file")?;
    for e in events {
        writeln!(out, "{},{},{}", e.slot, e.user, e.file + 1)?;
    }
    Ok(())
}

/// Read the canonical request stream written by [`write_requests`].
pub fn read_requests(path: &Path) -> Result<Vec<RequestEvent>, TraceError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut events = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line.trim() != "slot,user,file" {
                return Err(TraceError::Malformed {
                    path: display,
                    line: 1,
                    msg: "expected header slot,user,file".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let bad = |msg: &str| TraceError::Malformed {
            path: display.clone(),
            line: idx + 1,
            msg: msg.into(),
        };
        if parts.len() != 3 {
            return Err(bad("expected slot,user,file"));
        }
        let slot = parts[0].trim().parse().map_err(|_| bad("bad slot"))?;
        let user = parts[1].trim().parse().map_err(|_| bad("bad user"))?;
        let file: usize = parts[2].trim().parse().map_err(|_| bad("bad file"))?;
        if file == 0 {
            return Err(bad("file ids are one-based"));
        }
        events.push(RequestEvent {
            slot,
            user,
            file: file - 1,
        });
    }
    Ok(events)
}

/// Write the canonical mobility stream (`slot,user,x,y`).
pub fn write_mobility(path: &Path, samples: &[MobilitySample]) -> Result<(), TraceError> {
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "slot,user,x,y")?;
    for s in samples {
        writeln!(out, "{},{},{},{}", s.slot, s.user, s.position.x, s.position.y)?;
    }
    Ok(())
}

/// Read the canonical mobility stream written by [`write_mobility`].
pub fn read_mobility(path: &Path) -> Result<Vec<MobilitySample>, TraceError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut samples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line.trim() != "slot,user,x,y" {
                return Err(TraceError::Malformed {
                    path: display,
                    line: 1,
                    msg: "expected header slot,user,x,y".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let bad = |msg: &str| TraceError::Malformed {
            path: display.clone(),
            line: idx + 1,
            msg: msg.into(),
        };
        if parts.len() != 4 {
            return Err(bad("expected slot,user,x,y"));
        }
        samples.push(MobilitySample {
            slot: parts[0].trim().parse().map_err(|_| bad("bad slot"))?,
            user: parts[1].trim().parse().map_err(|_| bad("bad user"))?,
            position: Point::new(
                parts[2].trim().parse().map_err(|_| bad("bad x"))?,
                parts[3].trim().parse().map_err(|_| bad("bad y"))?,
            ),
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NeighborModel, Rect};
    use std::io::Write as _;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn config(t: u64) -> TraceConfig {
        TraceConfig {
            slot_count: t,
            slots_per_aggregation: 1,
            top_users: usize::MAX >> 1,
            top_files: usize::MAX >> 1,
            seed: 0,
        }
    }

    #[test]
    fn parses_ratings_records() {
        let f = write_temp("1::1193::5::978300760\n1::661::3::978302109\n2::1193::4::978300000\n");
        let trace = load_requests(f.path(), &config(2), "::").unwrap();
        assert_eq!(trace.skipped, 0);
        assert_eq!(trace.file_count, 2);
        // Items compact in ascending id order: 661 -> 0, 1193 -> 1.
        assert_eq!(trace.file_ids, vec![661, 1193]);
        assert_eq!(trace.users, vec![1, 2]);
        // Ordered by timestamp: user 2 first.
        assert_eq!(trace.events[0].user, 2);
        assert_eq!(trace.events[0].file, 1);
    }

    #[test]
    fn malformed_lines_are_skipped_and_counted() {
        let f = write_temp("1::2::3::4\nnot a record\n5::6::oops::8\n2::2::3::9\n");
        let trace = load_requests(f.path(), &config(2), "::").unwrap();
        assert_eq!(trace.skipped, 2);
        assert_eq!(trace.events.len(), 2);
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_temp("garbage\n");
        assert!(matches!(
            load_requests(f.path(), &config(2), "::"),
            Err(TraceError::Empty(_))
        ));
    }

    #[test]
    fn quantile_binning_balances_slots() {
        let f = write_temp("1::1::5::100\n1::1::5::200\n");
        let trace = load_requests(f.path(), &config(2), "::").unwrap();
        let slots: Vec<u64> = trace.events.iter().map(|e| e.slot).collect();
        assert_eq!(slots, vec![0, 1]);

        // Distinct timestamps, many records: per-slot counts differ by <= 1.
        let mut content = String::new();
        for i in 0..103 {
            content.push_str(&format!("1::1::5::{}\n", 1000 + 7 * i));
        }
        let f = write_temp(&content);
        let trace = load_requests(f.path(), &config(10), "::").unwrap();
        let mut counts = vec![0usize; 10];
        for e in &trace.events {
            counts[e.slot as usize] += 1;
        }
        let min = counts.iter().min().unwrap();
        let max = counts.iter().max().unwrap();
        assert!(max - min <= 1, "slot counts {counts:?}");
    }

    #[test]
    fn loader_is_deterministic() {
        let f = write_temp("1::9::5::30\n2::9::5::10\n3::7::5::20\n");
        let a = load_requests(f.path(), &config(3), "::").unwrap();
        let b = load_requests(f.path(), &config(3), "::").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn head_filters_keep_top_entities() {
        // Item 5 rated 3x, item 6 rated 1x; users 1 (3 ratings) and 2 (1).
        let f = write_temp("1::5::5::1\n1::5::4::2\n2::5::4::3\n1::6::4::4\n");
        let mut cfg = config(4);
        cfg.top_files = 1;
        cfg.top_users = 1;
        let trace = load_requests(f.path(), &cfg, "::").unwrap();
        assert_eq!(trace.file_ids, vec![5]);
        assert_eq!(trace.users, vec![1]);
        assert_eq!(trace.events.len(), 2);
    }

    #[test]
    fn synthetic_ratings_parse_back() {
        let params = SyntheticRatings {
            users: 50,
            items: 40,
            ratings: 500,
            ..SyntheticRatings::default()
        };
        let content = generate_ratings(&params, 11);
        assert_eq!(content, generate_ratings(&params, 11));
        let f = write_temp(&content);
        let trace = load_requests(f.path(), &config(10), "::").unwrap();
        assert_eq!(trace.events.len(), 500);
        assert!(trace.file_count <= 40);
        // Zipf head: the most popular compact file dominates.
        let mut counts = HashMap::new();
        for e in &trace.events {
            *counts.entry(e.file).or_insert(0usize) += 1;
        }
        let max = counts.values().max().unwrap();
        assert!(*max >= 500 / 40);
    }

    fn topo() -> NetworkTopology {
        NetworkTopology::grid(2, 2, Rect::new(0.0, 0.0, 200.0, 200.0), NeighborModel::Adjacent8).unwrap()
    }

    #[test]
    fn frozen_walkers_stay_put() {
        let t = topo();
        let cfg = MobilityConfig {
            step_scale: 0.0,
            cluster_every: 0,
            ..MobilityConfig::default()
        };
        let (samples, truths) = synth_mobility(&t, &[1, 2, 3], 5, &cfg, 4);
        assert!(truths.is_empty());
        assert_eq!(samples.len(), 15);
        for user in [1u64, 2, 3] {
            let positions: Vec<Point> = samples.iter().filter(|s| s.user == user).map(|s| s.position).collect();
            assert!(positions.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn samples_stay_in_region_and_clusters_arrive() {
        let t = topo();
        let cfg = MobilityConfig::default();
        let (samples, truths) = synth_mobility(&t, &[1, 2, 3, 4], 120, &cfg, 9);
        assert!(!truths.is_empty());
        for s in &samples {
            assert!(t.region().contains(s.position), "sample out of region: {s:?}");
        }
        let by_key: HashMap<(u64, u64), Point> = samples.iter().map(|s| ((s.slot, s.user), s.position)).collect();
        for truth in &truths {
            for m in &truth.members {
                let pos = by_key[&(truth.arrival_slot, *m)];
                assert_eq!(
                    t.assign_cell(pos).unwrap(),
                    truth.target_cell,
                    "member {m} missed its target cell"
                );
            }
            // Members exist from the spawn slot, not before.
            assert!(!by_key.contains_key(&(truth.spawn_slot - 1, truth.members[0])));
            assert!(by_key.contains_key(&(truth.spawn_slot, truth.members[0])));
        }
    }

    #[test]
    fn join_attributes_requests_and_conserves_them() {
        let t = topo();
        // User 10 stays in cell 0; user 20 crosses from cell 0 to cell 1 at slot 2.
        let mobility = vec![
            MobilitySample { slot: 0, user: 10, position: Point::new(40.0, 40.0) },
            MobilitySample { slot: 0, user: 20, position: Point::new(60.0, 40.0) },
            MobilitySample { slot: 2, user: 20, position: Point::new(140.0, 40.0) },
        ];
        let requests = vec![
            RequestEvent { slot: 0, user: 10, file: 0 },
            RequestEvent { slot: 1, user: 20, file: 1 },
            RequestEvent { slot: 2, user: 20, file: 1 },
            RequestEvent { slot: 3, user: 10, file: 0 },
        ];
        let joined = slot_requests_by_cell(&requests, &mobility, &t, 4, 5).unwrap();
        let total: usize = joined.per_slot.iter().map(|v| v.len()).sum();
        assert_eq!(total, requests.len());
        assert!(joined.randomly_placed_users.is_empty());
        assert_eq!(joined.per_slot[0][0].cell, 0);
        // Last known cell carries across slot 1, updates at slot 2.
        assert_eq!(joined.per_slot[1][0].cell, 0);
        assert_eq!(joined.per_slot[2][0].cell, 1);
        assert_eq!(joined.per_slot[3][0].cell, 0);
    }

    #[test]
    fn join_flags_users_with_no_position() {
        let t = topo();
        let requests = vec![RequestEvent { slot: 0, user: 99, file: 0 }];
        let a = slot_requests_by_cell(&requests, &[], &t, 1, 7).unwrap();
        let b = slot_requests_by_cell(&requests, &[], &t, 1, 7).unwrap();
        assert_eq!(a.randomly_placed_users, vec![99]);
        assert_eq!(a.per_slot[0][0].cell, b.per_slot[0][0].cell);
    }

    #[test]
    fn canonical_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let req_path = dir.path().join("requests.csv");
        let events = vec![
            RequestEvent { slot: 0, user: 7, file: 0 },
            RequestEvent { slot: 3, user: 8, file: 4 },
        ];
        write_requests(&req_path, &events).unwrap();
        assert_eq!(read_requests(&req_path).unwrap(), events);

        let mob_path = dir.path().join("mobility.csv");
        let samples = vec![MobilitySample { slot: 1, user: 7, position: Point::new(1.5, 2.25) }];
        write_mobility(&mob_path, &samples).unwrap();
        assert_eq!(read_mobility(&mob_path).unwrap(), samples);
    }
}
