use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::index;
use rand::Rng;

use super::Batch;
use crate::model::RatingsTable;
use crate::{Error, Result};

/// Top-`p` candidates by score, ties broken by smallest obs_id.
///
/// With `distinct_cells` set (requires `table`), the first pass admits at
/// most one observation per (face, trait) cell; remaining slots are then
/// filled in the same order.
pub fn select_uncertainty_batch(
    scores: &HashMap<usize, f64>,
    candidates: &BTreeSet<usize>,
    p: usize,
    distinct_cells: Option<&RatingsTable>,
) -> Result<Batch> {
    let mut ranked = Vec::with_capacity(candidates.len());
    for &id in candidates {
        let score = *scores
            .get(&id)
            .ok_or_else(|| Error::Integrity(format!("no uncertainty score for obs {id}")))?;
        ranked.push((score, id));
    }
    // candidates iterate in ascending id order and the sort is stable
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));

    let exhausted = p > ranked.len();
    let take = p.min(ranked.len());
    let ids = match distinct_cells {
        None => ranked.iter().take(take).map(|&(_, id)| id).collect(),
        Some(table) => {
            let mut seen = HashSet::new();
            let mut chosen = Vec::with_capacity(take);
            let mut deferred = Vec::new();
            for &(_, id) in &ranked {
                if chosen.len() == take {
                    break;
                }
                if seen.insert(table.observation(id)?.cell()) {
                    chosen.push(id);
                } else {
                    deferred.push(id);
                }
            }
            let missing = take - chosen.len();
            chosen.extend(deferred.into_iter().take(missing));
            chosen
        }
    };
    Ok(Batch { ids, exhausted })
}

/// Uniform random `p`-subset of the candidates without replacement.
pub fn select_passive_batch<R: Rng + ?Sized>(
    candidates: &BTreeSet<usize>,
    p: usize,
    rng: &mut R,
) -> Batch {
    let pool: Vec<usize> = candidates.iter().copied().collect();
    if p >= pool.len() {
        return Batch {
            exhausted: p > pool.len(),
            ids: pool,
        };
    }
    Batch {
        ids: index::sample(rng, pool.len(), p)
            .into_iter()
            .map(|i| pool[i])
            .collect(),
        exhausted: false,
    }
}
