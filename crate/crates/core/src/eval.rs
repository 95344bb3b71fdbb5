//! Cross-camera retrieval metrics (CMC, mAP) and the camera-separability probe.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;
use crate::synthdata::{EvalSet, QueryGallery};
use crate::vecmath::{self, dot_unchecked, FeatureVec};
use crate::{Error, Result};

pub const DEFAULT_K_MAX: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `cmc[k - 1]` is the rank-k accuracy.
    pub cmc: Vec<f64>,
    pub map: f64,
    pub n_queries: usize,
    /// Queries dropped because no cross-camera positive was in the gallery.
    pub n_excluded_queries: usize,
    pub camera_probe_accuracy: f64,
}

impl EvalReport {
    pub fn rank(&self, k: usize) -> f64 {
        self.cmc[(k.min(self.cmc.len())).max(1) - 1]
    }

    pub fn rank1(&self) -> f64 {
        self.rank(1)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// `k,accuracy` rows.
    pub fn write_cmc_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k", "accuracy"]).map_err(csv_err)?;
        for (i, acc) in self.cmc.iter().enumerate() {
            out.write_record([(i + 1).to_string(), acc.to_string()]).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// One embedded sample taking part in retrieval.
#[derive(Debug, Clone, Copy)]
pub struct Labeled<'a> {
    /// Stable identifier; similarity ties are broken by ascending id.
    pub id: usize,
    pub feature: &'a [f64],
    pub vehicle_id: u32,
    pub camera_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalMetrics {
    pub cmc: Vec<f64>,
    pub map: f64,
    pub n_queries: usize,
    pub n_excluded_queries: usize,
}

/// Rank of the first hit (1-based) and average precision, or `None` when the
/// query has no valid positive.
fn score_query(q: &Labeled, gallery: &[Labeled]) -> Option<(usize, f64)> {
    let mut ranked: Vec<(f64, usize, bool)> = gallery
        .iter()
        .filter(|g| !(g.vehicle_id == q.vehicle_id && g.camera_id == q.camera_id))
        .map(|g| (dot_unchecked(q.feature, g.feature), g.id, g.vehicle_id == q.vehicle_id))
        .collect();
    let n_pos = ranked.iter().filter(|r| r.2).count();
    if n_pos == 0 {
        return None;
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut hits = 0usize;
    let mut first = 0usize;
    let mut ap = 0.0;
    for (r, item) in ranked.iter().enumerate() {
        if item.2 {
            hits += 1;
            if first == 0 {
                first = r + 1;
            }
            ap += hits as f64 / (r + 1) as f64;
            if hits == n_pos {
                break;
            }
        }
    }
    Some((first, ap / n_pos as f64))
}

/// CMC and mAP under the cross-camera protocol: for each query, gallery items
/// of the same vehicle seen by the same camera are removed before ranking.
pub fn retrieval_metrics(queries: &[Labeled], gallery: &[Labeled], k_max: usize) -> Result<RetrievalMetrics> {
    if k_max == 0 {
        return Err(Error::InvalidParam("k_max must be at least 1".into()));
    }
    if let Some(f) = queries.first() {
        let d = f.feature.len();
        if let Some(bad) = queries.iter().chain(gallery).find(|x| x.feature.len() != d) {
            return Err(Error::Dimension { expected: d, got: bad.feature.len() });
        }
    }
    let scored: Vec<Option<(usize, f64)>> = queries.par_iter().map(|q| score_query(q, gallery)).collect();
    let mut hits_at = vec![0usize; k_max];
    let mut ap_sum = 0.0;
    let mut n_valid = 0usize;
    for (first, ap) in scored.iter().flatten() {
        n_valid += 1;
        ap_sum += ap;
        if *first <= k_max {
            hits_at[first - 1] += 1;
        }
    }
    if n_valid == 0 {
        return Err(Error::Empty("queries with a cross-camera positive"));
    }
    let mut cmc = Vec::with_capacity(k_max);
    let mut cum = 0usize;
    for h in hits_at {
        cum += h;
        cmc.push(cum as f64 / n_valid as f64);
    }
    Ok(RetrievalMetrics { cmc, map: ap_sum / n_valid as f64, n_queries: n_valid, n_excluded_queries: queries.len() - n_valid })
}

/// Nearest-centroid camera classification accuracy. Centroids are the
/// normalized mean embedding per camera over the given set; ties go to the
/// lowest camera id.
pub fn camera_probe<V: AsRef<[f64]> + Sync>(features: &[V], camera_ids: &[u32], n_cameras: usize) -> Result<f64> {
    if n_cameras < 2 {
        return Err(Error::InvalidParam("camera probe needs at least 2 cameras".into()));
    }
    if features.len() != camera_ids.len() {
        return Err(Error::Integrity(format!("{} features for {} camera ids", features.len(), camera_ids.len())));
    }
    if features.is_empty() {
        return Err(Error::Empty("camera probe set"));
    }
    let dim = features[0].as_ref().len();
    let mut sums = vec![vec![0.0; dim]; n_cameras];
    let mut counts = vec![0usize; n_cameras];
    for (f, &c) in features.iter().zip(camera_ids) {
        let c = c as usize;
        if c >= n_cameras {
            return Err(Error::UnknownCamera(c as u32));
        }
        let f = f.as_ref();
        if f.len() != dim {
            return Err(Error::Dimension { expected: dim, got: f.len() });
        }
        counts[c] += 1;
        sums[c].iter_mut().zip(f).for_each(|(s, x)| *s += x);
    }
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(Error::UnknownCamera(empty as u32));
    }
    let centroids: Vec<FeatureVec> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| vecmath::l2_normalize(&s.iter().map(|x| x / n as f64).collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let correct = features
        .par_iter()
        .zip(camera_ids)
        .filter(|(f, &c)| {
            let f = f.as_ref();
            let mut best = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for (j, cen) in centroids.iter().enumerate() {
                let s = dot_unchecked(f, cen.as_slice());
                if s > best_score {
                    best = j;
                    best_score = s;
                }
            }
            best == c as usize
        })
        .count();
    Ok(correct as f64 / features.len() as f64)
}

/// Metrics for precomputed embeddings of every sample in `set`.
pub fn evaluate_features(features: &[FeatureVec], set: &EvalSet, split: &QueryGallery, k_max: usize) -> Result<EvalReport> {
    if features.len() != set.data.samples.len() || set.vehicle_ids.len() != features.len() {
        return Err(Error::Integrity("embedding count does not match the evaluation set".into()));
    }
    let labeled = |i: usize| Labeled {
        id: i,
        feature: features[i].as_slice(),
        vehicle_id: set.vehicle_ids[i],
        camera_id: set.data.samples[i].camera_id,
    };
    let queries: Vec<Labeled> = split.queries.iter().map(|&i| labeled(i)).collect();
    let gallery: Vec<Labeled> = split.gallery.iter().map(|&i| labeled(i)).collect();
    let m = retrieval_metrics(&queries, &gallery, k_max)?;
    let cams: Vec<u32> = set.data.samples.iter().map(|s| s.camera_id).collect();
    let probe = camera_probe(features, &cams, set.data.n_cameras as usize)?;
    Ok(EvalReport {
        cmc: m.cmc,
        map: m.map,
        n_queries: m.n_queries,
        n_excluded_queries: m.n_excluded_queries,
        camera_probe_accuracy: probe,
    })
}

pub fn embed_all(encoder: &Encoder, set: &EvalSet) -> Result<Vec<FeatureVec>> {
    set.data.samples.par_iter().map(|s| encoder.embed(&s.input)).collect()
}

pub fn evaluate(encoder: &Encoder, set: &EvalSet, split: &QueryGallery, k_max: usize) -> Result<EvalReport> {
    evaluate_features(&embed_all(encoder, set)?, set, split, k_max)
}
