//! Shared domain types: content catalog, cell topology, cost constants and
//! the binary cache placement matrix with capacity accounting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("position ({x}, {y}) lies outside the region")]
    OutOfRegion { x: f64, y: f64 },
    #[error("cache capacity exceeded at sbs {sbs}: {would_use} > {capacity}")]
    CapacityExceeded {
        sbs: usize,
        would_use: f64,
        capacity: f64,
    },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("invalid construction: {0}")]
    Invalid(String),
}

/// A point in the plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Axis-aligned rectangle; closed on all sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> Point {
        Point::new((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    /// Euclidean distance from `p` to the rectangle (0 when inside).
    pub fn distance(&self, p: Point) -> f64 {
        let dx = (self.x0 - p.x).max(0.0).max(p.x - self.x1);
        let dy = (self.y0 - p.y).max(0.0).max(p.y - self.y1);
        (dx * dx + dy * dy).sqrt()
    }

    /// Distance from an interior point to the nearest edge; negative if outside.
    pub fn boundary_distance(&self, p: Point) -> f64 {
        let dx = (p.x - self.x0).min(self.x1 - p.x);
        let dy = (p.y - self.y0).min(self.y1 - p.y);
        dx.min(dy)
    }
}

/// The content library: `M` files with per-file storage sizes `g_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentCatalog {
    sizes: Vec<f64>,
}

impl ContentCatalog {
    pub fn new(sizes: Vec<f64>) -> Result<Self, ModelError> {
        if sizes.is_empty() {
            return Err(ModelError::Invalid("catalog must hold at least one file".into()));
        }
        if sizes.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
            return Err(ModelError::Invalid("every file size must be a positive finite real".into()));
        }
        Ok(ContentCatalog { sizes })
    }

    /// Catalog of `m` files with unit size.
    pub fn uniform(m: usize) -> Self {
        ContentCatalog::new(vec![1.0; m]).expect("m >= 1")
    }

    pub fn file_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn size(&self, file: usize) -> f64 {
        self.sizes[file]
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }
}

/// Which cells count as the intra-cell domain of an SBS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborModel {
    /// Grid-adjacent cells, diagonals included.
    #[default]
    Adjacent8,
    /// Every other SBS is a neighbor.
    Full,
}

/// A uniform grid of cells over a rectangular region, one SBS per cell.
///
/// Cell `k = row * cols + col`, row-major from the low-coordinate corner.
/// The SBS sits at its cell center.
#[derive(Debug, Clone)]
pub struct NetworkTopology {
    cols: usize,
    rows: usize,
    region: Rect,
    sbs_positions: Vec<Point>,
    neighbor_sets: Vec<Vec<usize>>,
}

impl NetworkTopology {
    pub fn grid(cols: usize, rows: usize, region: Rect, model: NeighborModel) -> Result<Self, ModelError> {
        if cols == 0 || rows == 0 {
            return Err(ModelError::Invalid("grid must have at least one cell".into()));
        }
        if !(region.width() > 0.0 && region.height() > 0.0) {
            return Err(ModelError::Invalid("region must have positive extent".into()));
        }
        let k = cols * rows;
        let cw = region.width() / cols as f64;
        let ch = region.height() / rows as f64;
        let mut sbs_positions = Vec::with_capacity(k);
        for r in 0..rows {
            for c in 0..cols {
                sbs_positions.push(Point::new(
                    region.x0 + (c as f64 + 0.5) * cw,
                    region.y0 + (r as f64 + 0.5) * ch,
                ));
            }
        }
        let mut neighbor_sets = vec![Vec::new(); k];
        for r in 0..rows as isize {
            for c in 0..cols as isize {
                let k0 = (r as usize) * cols + c as usize;
                match model {
                    NeighborModel::Adjacent8 => {
                        for dr in -1..=1 {
                            for dc in -1..=1 {
                                if dr == 0 && dc == 0 {
                                    continue;
                                }
                                let (nr, nc) = (r + dr, c + dc);
                                if nr >= 0 && nr < rows as isize && nc >= 0 && nc < cols as isize {
                                    neighbor_sets[k0].push(nr as usize * cols + nc as usize);
                                }
                            }
                        }
                    }
                    NeighborModel::Full => {
                        neighbor_sets[k0] = (0..k).filter(|&l| l != k0).collect();
                    }
                }
                neighbor_sets[k0].sort_unstable();
            }
        }
        Ok(NetworkTopology {
            cols,
            rows,
            region,
            sbs_positions,
            neighbor_sets,
        })
    }

    pub fn sbs_count(&self) -> usize {
        self.cols * self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn region(&self) -> Rect {
        self.region
    }

    pub fn sbs_position(&self, k: usize) -> Point {
        self.sbs_positions[k]
    }

    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.neighbor_sets[k]
    }

    pub fn cell_width(&self) -> f64 {
        self.region.width() / self.cols as f64
    }

    pub fn cell_height(&self) -> f64 {
        self.region.height() / self.rows as f64
    }

    /// Rectangle of cell `k`.
    pub fn cell_rect(&self, k: usize) -> Rect {
        let (r, c) = (k / self.cols, k % self.cols);
        let cw = self.cell_width();
        let ch = self.cell_height();
        Rect::new(
            self.region.x0 + c as f64 * cw,
            self.region.y0 + r as f64 * ch,
            self.region.x0 + (c + 1) as f64 * cw,
            self.region.y0 + (r + 1) as f64 * ch,
        )
    }

    /// Index of the grid cell containing `position`.
    ///
    /// Points exactly on an interior grid line belong to the cell with the
    /// lower index, so the region is partitioned.
    pub fn assign_cell(&self, position: Point) -> Result<usize, ModelError> {
        if !self.region.contains(position) {
            return Err(ModelError::OutOfRegion {
                x: position.x,
                y: position.y,
            });
        }
        let col = Self::axis_cell(position.x, self.region.x0, self.cell_width(), self.cols);
        let row = Self::axis_cell(position.y, self.region.y0, self.cell_height(), self.rows);
        Ok(row * self.cols + col)
    }

    fn axis_cell(v: f64, origin: f64, step: f64, n: usize) -> usize {
        let mut i = ((v - origin) / step).floor() as isize;
        if i >= n as isize {
            i = n as isize - 1;
        }
        if i < 0 {
            i = 0;
        }
        let mut i = i as usize;
        // Interior grid lines break toward the lower cell.
        if i > 0 && v <= origin + i as f64 * step {
            i -= 1;
        }
        i
    }
}

/// Cost constants of the network objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Per-file caching cost, scaled by the file size.
    pub cache_cost: f64,
    /// Per-request cost for retrieval from a caching SBS.
    pub sbs_retrieval: f64,
    /// Constant cost for retrieving via the MBS backhaul.
    pub mbs_base: f64,
    /// Per-SBS cost of retrieving from the MBS.
    pub mbs_link: f64,
}

impl CostParams {
    pub fn new(cache_cost: f64, sbs_retrieval: f64, mbs_base: f64, mbs_link: f64) -> Result<Self, ModelError> {
        let p = CostParams {
            cache_cost,
            sbs_retrieval,
            mbs_base,
            mbs_link,
        };
        if [cache_cost, sbs_retrieval, mbs_base, mbs_link]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(ModelError::Invalid("cost constants must be finite and >= 0".into()));
        }
        Ok(p)
    }
}

impl Default for CostParams {
    /// Reference constants in mW: caching 1.5, SBS retrieval 180,
    /// MBS base 13, MBS link 370.
    fn default() -> Self {
        CostParams {
            cache_cost: 1.5,
            sbs_retrieval: 180.0,
            mbs_base: 13.0,
            mbs_link: 370.0,
        }
    }
}

/// Binary placement matrix `c[k][f]` over SBS x file with per-SBS capacities.
///
/// Every mutation re-checks the capacity constraint, so a constructed value
/// always satisfies it.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheMatrix {
    entries: Vec<bool>,
    capacities: Vec<f64>,
    used: Vec<f64>,
    files: usize,
}

impl CacheMatrix {
    pub fn empty(capacities: Vec<f64>, files: usize) -> Result<Self, ModelError> {
        if capacities.is_empty() {
            return Err(ModelError::Invalid("need at least one SBS".into()));
        }
        if capacities.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(ModelError::Invalid("capacities must be finite and >= 0".into()));
        }
        let k = capacities.len();
        Ok(CacheMatrix {
            entries: vec![false; k * files],
            used: vec![0.0; k],
            capacities,
            files,
        })
    }

    pub fn sbs_count(&self) -> usize {
        self.capacities.len()
    }

    pub fn file_count(&self) -> usize {
        self.files
    }

    pub fn capacity(&self, k: usize) -> f64 {
        self.capacities[k]
    }

    pub fn get(&self, k: usize, f: usize) -> bool {
        self.entries[k * self.files + f]
    }

    /// Cache file `f` at SBS `k`. No-op when already cached.
    pub fn set(&mut self, k: usize, f: usize, catalog: &ContentCatalog) -> Result<(), ModelError> {
        self.check_index(k, f)?;
        if self.get(k, f) {
            return Ok(());
        }
        let would_use = self.used[k] + catalog.size(f);
        if would_use > self.capacities[k] + 1e-9 {
            return Err(ModelError::CapacityExceeded {
                sbs: k,
                would_use,
                capacity: self.capacities[k],
            });
        }
        self.entries[k * self.files + f] = true;
        self.used[k] = would_use;
        Ok(())
    }

    pub fn unset(&mut self, k: usize, f: usize, catalog: &ContentCatalog) -> Result<(), ModelError> {
        self.check_index(k, f)?;
        if self.get(k, f) {
            self.entries[k * self.files + f] = false;
            self.used[k] -= catalog.size(f);
        }
        Ok(())
    }

    fn check_index(&self, k: usize, f: usize) -> Result<(), ModelError> {
        if k >= self.sbs_count() || f >= self.files {
            return Err(ModelError::IndexOutOfRange(format!("(k={k}, f={f})")));
        }
        Ok(())
    }

    /// Remaining capacity of SBS `k`.
    pub fn free(&self, k: usize) -> f64 {
        self.capacities[k] - self.used[k]
    }

    /// Whether file `f` would fit at SBS `k` right now.
    pub fn fits(&self, k: usize, f: usize, catalog: &ContentCatalog) -> bool {
        !self.get(k, f) && self.used[k] + catalog.size(f) <= self.capacities[k] + 1e-9
    }

    /// True if any SBS other than `k` caches `f`.
    pub fn cached_elsewhere(&self, k: usize, f: usize) -> bool {
        (0..self.sbs_count()).any(|l| l != k && self.get(l, f))
    }

    /// True if any SBS caches `f`.
    pub fn cached_anywhere(&self, f: usize) -> bool {
        (0..self.sbs_count()).any(|l| self.get(l, f))
    }

    /// Total number of cached (SBS, file) pairs.
    pub fn cached_pairs(&self) -> usize {
        self.entries.iter().filter(|&&b| b).count()
    }

    pub fn files_at(&self, k: usize) -> Vec<usize> {
        (0..self.files).filter(|&f| self.get(k, f)).collect()
    }
}

/// Total size of the files cached at SBS `k`, recomputed from the entries.
pub fn occupancy(cache: &CacheMatrix, catalog: &ContentCatalog, k: usize) -> f64 {
    (0..cache.file_count())
        .filter(|&f| cache.get(k, f))
        .map(|f| catalog.size(f))
        .sum()
}

/// A content request issued by a mobile user at a time slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestEvent {
    pub slot: u64,
    pub user: u64,
    /// Zero-based file index; one-based in the on-disk trace format.
    pub file: usize,
}

/// A sampled user position at a time slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilitySample {
    pub slot: u64,
    pub user: u64,
    pub position: Point,
}
