//! Farthest-point (k-center greedy) selection over (face, trait) feature
//! pairs.
//!
//! The distance between two observations is the Euclidean distance of
//! their concatenated feature pairs,
//! `sqrt(|f_a - f_b|^2 + |t_a - t_b|^2)`. It only depends on the cells, so
//! all bookkeeping here is per cell and squared face/trait distances are
//! tabulated once per run.

use std::collections::{BTreeSet, HashMap};

use ndarray::{Array2, ArrayView1, Axis};

use super::Batch;
use crate::model::{Cell, FeatureBank, RatingsTable};
use crate::{Error, Result};

/// Above this many rows the pairwise table is not materialized.
const MAX_TABULATED_ROWS: usize = 4096;

pub fn pair_distance(
    a: (ArrayView1<f64>, ArrayView1<f64>),
    b: (ArrayView1<f64>, ArrayView1<f64>),
) -> Result<f64> {
    if a.0.len() != b.0.len() || a.1.len() != b.1.len() {
        return Err(Error::Shape(format!(
            "feature pairs of dims ({}, {}) and ({}, {})",
            a.0.len(),
            a.1.len(),
            b.0.len(),
            b.1.len()
        )));
    }
    Ok((squared_distance(a.0, b.0) + squared_distance(a.1, b.1)).sqrt())
}

fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Column-wise z-score. Constant columns are only centered.
pub fn zscore_columns(m: &Array2<f64>) -> Array2<f64> {
    let n = m.nrows();
    if n == 0 {
        return m.clone();
    }
    let mean = m.mean_axis(Axis(0)).expect("non-empty");
    let mut out = m - &mean;
    if n > 1 {
        for mut col in out.columns_mut() {
            let sd = (col.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64).sqrt();
            if sd > 0.0 {
                col.mapv_inplace(|v| v / sd);
            }
        }
    }
    out
}

struct SideTable {
    rows: Array2<f64>,
    sq: Option<Array2<f64>>,
}

impl SideTable {
    fn new(rows: Array2<f64>) -> Self {
        let n = rows.nrows();
        let sq = (n <= MAX_TABULATED_ROWS).then(|| {
            let mut sq = Array2::zeros((n, n));
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = squared_distance(rows.row(i), rows.row(j));
                    sq[[i, j]] = d;
                    sq[[j, i]] = d;
                }
            }
            sq
        });
        Self { rows, sq }
    }

    fn sq(&self, i: usize, j: usize) -> f64 {
        match &self.sq {
            Some(t) => t[[i, j]],
            None => squared_distance(self.rows.row(i), self.rows.row(j)),
        }
    }
}

/// Feature pairs prepared for distance queries, optionally z-scored per
/// column (each bank separately) before any distance is computed.
pub struct FeatureSpace {
    faces: SideTable,
    traits: SideTable,
}

impl FeatureSpace {
    pub fn new(bank: &FeatureBank, normalize: bool) -> Self {
        let (faces, traits) = if normalize {
            (
                zscore_columns(bank.face_features()),
                zscore_columns(bank.trait_features()),
            )
        } else {
            (bank.face_features().clone(), bank.trait_features().clone())
        };
        Self {
            faces: SideTable::new(faces),
            traits: SideTable::new(traits),
        }
    }

    pub fn distance(&self, a: Cell, b: Cell) -> f64 {
        (self.faces.sq(a.0, b.0) + self.traits.sq(a.1, b.1)).sqrt()
    }

    /// The (possibly normalized) feature pair of a cell.
    pub fn pair(&self, cell: Cell) -> (ArrayView1<'_, f64>, ArrayView1<'_, f64>) {
        (self.faces.rows.row(cell.0), self.traits.rows.row(cell.1))
    }
}

/// Incremental greedy state: per-cell distance to the nearest center
/// (known or selected observation) and the candidates left in each cell.
pub struct KCenterTracker<'a> {
    space: &'a FeatureSpace,
    cells: Vec<Cell>,
    min_dist: Vec<f64>,
    pending: Vec<BTreeSet<usize>>,
}

impl<'a> KCenterTracker<'a> {
    pub fn new(
        space: &'a FeatureSpace,
        table: &RatingsTable,
        known: &BTreeSet<usize>,
        candidates: &BTreeSet<usize>,
    ) -> Result<Self> {
        if known.is_empty() {
            return Err(Error::Domain(
                "k-center selection needs at least one known point".into(),
            ));
        }
        let mut slot: HashMap<Cell, usize> = HashMap::new();
        let mut cells = Vec::new();
        let mut pending: Vec<BTreeSet<usize>> = Vec::new();
        for obs in table.observations() {
            let c = *slot.entry(obs.cell()).or_insert_with(|| {
                cells.push(obs.cell());
                pending.push(BTreeSet::new());
                cells.len() - 1
            });
            if candidates.contains(&obs.obs_id) {
                pending[c].insert(obs.obs_id);
            }
        }
        let mut tracker = Self {
            space,
            min_dist: vec![f64::INFINITY; cells.len()],
            cells,
            pending,
        };
        let known_cells: BTreeSet<Cell> = known
            .iter()
            .map(|&id| table.observation(id).map(|o| o.cell()))
            .collect::<Result<_>>()?;
        for cell in known_cells {
            tracker.add_center(slot[&cell]);
        }
        Ok(tracker)
    }

    fn add_center(&mut self, center: usize) {
        let c = self.cells[center];
        for (d, &cell) in self.min_dist.iter_mut().zip(&self.cells) {
            let dist = self.space.distance(c, cell);
            if dist < *d {
                *d = dist;
            }
        }
    }

    /// Greedily picks `p` candidates, each maximizing its distance to the
    /// nearest center so far; ties go to the smallest obs_id. Picked
    /// observations become centers.
    pub fn select(&mut self, p: usize) -> Batch {
        let mut ids = Vec::with_capacity(p);
        for _ in 0..p {
            let mut best: Option<(f64, usize, usize)> = None;
            for (c, pend) in self.pending.iter().enumerate() {
                let Some(&first) = pend.first() else { continue };
                let d = self.min_dist[c];
                let better = match best {
                    None => true,
                    Some((bd, bid, _)) => d > bd || (d == bd && first < bid),
                };
                if better {
                    best = Some((d, first, c));
                }
            }
            let Some((_, id, c)) = best else {
                return Batch {
                    ids,
                    exhausted: true,
                };
            };
            self.pending[c].pop_first();
            self.add_center(c);
            ids.push(id);
        }
        Batch {
            ids,
            exhausted: false,
        }
    }

    /// Largest distance from any observation to its nearest center.
    pub fn coverage_radius(&self) -> f64 {
        self.min_dist.iter().copied().fold(0.0, f64::max)
    }
}

/// One batch of k-center greedy selection starting from `known` as the
/// existing centers.
pub fn select_kcenter_batch(
    space: &FeatureSpace,
    table: &RatingsTable,
    known: &BTreeSet<usize>,
    candidates: &BTreeSet<usize>,
    p: usize,
) -> Result<Batch> {
    let mut tracker = KCenterTracker::new(space, table, known, candidates)?;
    let exhausted = p > candidates.len();
    let mut batch = tracker.select(p);
    batch.exhausted |= exhausted;
    Ok(batch)
}

/// Max over `points` of the distance to the nearest of `centers`.
pub fn coverage_radius(
    centers: &BTreeSet<usize>,
    points: &BTreeSet<usize>,
    space: &FeatureSpace,
    table: &RatingsTable,
) -> Result<f64> {
    if centers.is_empty() {
        return Err(Error::Domain(
            "coverage radius needs at least one center".into(),
        ));
    }
    let cells = |ids: &BTreeSet<usize>| -> Result<BTreeSet<Cell>> {
        ids.iter()
            .map(|&id| table.observation(id).map(|o| o.cell()))
            .collect()
    };
    let center_cells = cells(centers)?;
    let mut radius: f64 = 0.0;
    for p in cells(points)? {
        let nearest = center_cells
            .iter()
            .map(|&c| space.distance(p, c))
            .fold(f64::INFINITY, f64::min);
        radius = radius.max(nearest);
    }
    Ok(radius)
}
