//! Cross-camera positive mining and grey-zone negative selection.
//!
//! Candidates come from the memory minus the anchor's own tracklet (or minus
//! the anchor's whole camera with `exclude_own_camera`). Easy positives are the
//! `k` candidates closest to the anchor; hard positives are the `k` candidates
//! closest to the anchor's least similar tracklet-mate. Of what remains, the
//! top `ceil(gamma * |rest|)` by similarity form the grey zone and are skipped;
//! everything below it is a negative.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::ctam::{CamTrkKey, Ctam};
use crate::vecmath::dot_unchecked;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningParams {
    pub k: usize,
    pub gamma: f64,
    pub exclude_own_camera: bool,
}

impl Default for MiningParams {
    fn default() -> Self {
        MiningParams { k: 5, gamma: 0.01, exclude_own_camera: false }
    }
}

impl MiningParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParam("k must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidParam(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MiningResult {
    pub easy: Vec<usize>,
    pub hard: Vec<usize>,
    /// Easy then hard, first occurrence kept.
    pub positives_union: Vec<usize>,
    pub negatives: Vec<usize>,
    /// Candidate image ids, most similar to the anchor first.
    pub candidate_rank: Vec<usize>,
    /// Tracklet-mate the hard positives were ranked against.
    pub farthest_mate: usize,
    /// Entries dropped because they were both easy and hard.
    pub duplicates: usize,
    /// Entries skipped by the grey zone.
    pub grey_zone: usize,
}

pub fn candidate_pool(ctam: &Ctam, key: CamTrkKey, exclude_own_camera: bool) -> Result<Vec<(usize, &[f64])>> {
    // validates the key
    ctam.tracklet_images(key)?;
    let mut pool = Vec::new();
    for bank in ctam.banks() {
        if exclude_own_camera && bank.camera_id == key.camera_id {
            continue;
        }
        for t in &bank.tracklets {
            if bank.camera_id == key.camera_id && t.tracklet_id == key.tracklet_id {
                continue;
            }
            pool.extend(t.image_ids.iter().map(|&i| (i, ctam.slot(i))));
        }
    }
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    Ok(pool)
}

fn by_score_then_id(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Pool image ids sorted by similarity to `z`, ties by ascending image id.
pub fn rank_candidates(z: &[f64], pool: &[(usize, &[f64])]) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = pool.iter().map(|&(i, f)| (i, dot_unchecked(z, f))).collect();
    scored.sort_by(by_score_then_id);
    scored.into_iter().map(|(i, _)| i).collect()
}

pub fn easy_positives(candidate_rank: &[usize], k: usize) -> Vec<usize> {
    candidate_rank[..k.min(candidate_rank.len())].to_vec()
}

/// The tracklet-mate least similar to `z`; the first one wins ties.
pub fn farthest_mate(z: &[f64], own_tracklet: &[(usize, &[f64])]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(i, f) in own_tracklet {
        let s = dot_unchecked(z, f);
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::Empty("own tracklet"))
}

/// Top `k` of the pool ranked against the farthest tracklet-mate.
/// Returns the mate's image id with the positives.
pub fn hard_positives(
    z: &[f64],
    own_tracklet: &[(usize, &[f64])],
    pool: &[(usize, &[f64])],
    k: usize,
) -> Result<(usize, Vec<usize>)> {
    let mate = farthest_mate(z, own_tracklet)?;
    let anchor = own_tracklet.iter().find(|(i, _)| *i == mate).map(|(_, f)| *f).expect("mate is in the tracklet");
    let rank = rank_candidates(anchor, pool);
    Ok((mate, easy_positives(&rank, k)))
}

/// Removes the positives from the ranking, then skips the top
/// `ceil(gamma * |remainder|)` entries.
pub fn grey_zone_negatives(candidate_rank: &[usize], positives_union: &[usize], gamma: f64) -> (Vec<usize>, usize) {
    let remainder: Vec<usize> = candidate_rank.iter().copied().filter(|i| !positives_union.contains(i)).collect();
    let skip = ((gamma * remainder.len() as f64).ceil() as usize).min(remainder.len());
    (remainder[skip..].to_vec(), skip)
}

pub fn mine(z: &[f64], ctam: &Ctam, key: CamTrkKey, params: &MiningParams) -> Result<MiningResult> {
    params.validate()?;
    let own = ctam.tracklet_slots(key)?;
    let pool = candidate_pool(ctam, key, params.exclude_own_camera)?;
    let candidate_rank = rank_candidates(z, &pool);
    let easy = easy_positives(&candidate_rank, params.k);
    let (farthest_mate, hard) = hard_positives(z, &own, &pool, params.k)?;

    let mut positives_union = easy.clone();
    let mut duplicates = 0;
    for &h in &hard {
        if positives_union.contains(&h) {
            duplicates += 1;
        } else {
            positives_union.push(h);
        }
    }
    let (negatives, grey_zone) = grey_zone_negatives(&candidate_rank, &positives_union, params.gamma);
    Ok(MiningResult { easy, hard, positives_union, negatives, candidate_rank, farthest_mate, duplicates, grey_zone })
}
