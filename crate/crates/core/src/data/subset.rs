use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;

use crate::model::{Cell, Observation, RatingsTable};
use crate::rng::rng_from;
use crate::{Error, Result};

/// Draws `n_faces` faces and `n_traits` traits uniformly, then
/// `per_cell` observations from every selected cell. Output ids are dense
/// in (face, trait, original obs_id) order.
pub fn subset_sample(
    table: &RatingsTable,
    n_faces: usize,
    n_traits: usize,
    per_cell: usize,
    seed: u64,
) -> Result<RatingsTable> {
    let faces: Vec<usize> = table
        .observations()
        .iter()
        .map(|o| o.face_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let traits: Vec<usize> = table
        .observations()
        .iter()
        .map(|o| o.trait_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if n_faces > faces.len() || n_traits > traits.len() {
        return Err(Error::Sampling(format!(
            "asked for {n_faces} faces x {n_traits} traits, table has {} x {}",
            faces.len(),
            traits.len()
        )));
    }
    let mut by_cell: BTreeMap<Cell, Vec<usize>> = BTreeMap::new();
    for o in table.observations() {
        by_cell.entry(o.cell()).or_default().push(o.obs_id);
    }

    let mut rng = rng_from(seed);
    let mut pick = |pool: &[usize], n: usize| -> Vec<usize> {
        let mut chosen: Vec<usize> = index::sample(&mut rng, pool.len(), n)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        chosen.sort_unstable();
        chosen
    };
    let chosen_faces = pick(&faces, n_faces);
    let chosen_traits = pick(&traits, n_traits);

    let mut observations = Vec::with_capacity(n_faces * n_traits * per_cell);
    for &f in &chosen_faces {
        for &t in &chosen_traits {
            let ids = by_cell.get(&(f, t)).map(Vec::as_slice).unwrap_or(&[]);
            if ids.len() < per_cell {
                return Err(Error::Sampling(format!(
                    "cell ({f}, {t}) has {} observations, need {per_cell}",
                    ids.len()
                )));
            }
            for id in pick(ids, per_cell) {
                let src = table.observation(id)?;
                observations.push(Observation {
                    obs_id: observations.len(),
                    ..src.clone()
                });
            }
        }
    }
    RatingsTable::new(observations)
}
