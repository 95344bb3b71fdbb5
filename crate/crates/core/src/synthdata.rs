//! Seeded multi-camera tracklet datasets.
//!
//! Each vehicle has a unit latent identity vector. A vehicle seen by a camera
//! yields one tracklet: every frame is `A_c (identity + drift + noise) + b_c`,
//! where the drift is shared by the whole tracklet, the noise is per frame, and
//! `(A_c, b_c)` is the camera's linear map and offset, both scaled by the
//! domain gap strength (see [`GenConfig`]).
//!
//! Vehicle ids are kept in [`EvalLabels`], apart from the [`TrackletData`] the
//! trainer consumes, and are written to a separate trailer of the file.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{stream, Stream};
use crate::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"CTACLDAT";
pub const EVAL_MAGIC: &[u8; 8] = b"EVALONLY";
pub const DATASET_VERSION: u32 = 1;

const MAX_GEN_ATTEMPTS: usize = 32;

/// One image with its weak labels. The vehicle id is not part of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vec<f64>,
    pub camera_id: u32,
    pub tracklet_id: u32,
    pub frame_index: u32,
}

/// Everything a trainer is allowed to see.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackletData {
    pub n_cameras: u32,
    pub d_in: usize,
    pub samples: Vec<Sample>,
}

impl TrackletData {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn camera_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.n_cameras as usize];
        for s in &self.samples {
            if let Some(c) = counts.get_mut(s.camera_id as usize) {
                *c += 1;
            }
        }
        counts
    }

    pub fn n_tracklets(&self) -> usize {
        let mut ids: Vec<u32> = self.samples.iter().map(|s| s.tracklet_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Checks record shapes, camera range and that no tracklet spans two cameras.
    pub fn validate(&self) -> Result<()> {
        if self.n_cameras == 0 {
            return Err(Error::Integrity("dataset declares zero cameras".into()));
        }
        let mut owner: BTreeMap<u32, u32> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            if s.input.len() != self.d_in {
                return Err(Error::Dimension { expected: self.d_in, got: s.input.len() });
            }
            if s.camera_id >= self.n_cameras {
                return Err(Error::Integrity(format!(
                    "sample {i} has camera {} but the dataset has {} cameras",
                    s.camera_id, self.n_cameras
                )));
            }
            if s.input.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("input of sample {i}")));
            }
            if let Some(&c) = owner.get(&s.tracklet_id) {
                if c != s.camera_id {
                    return Err(Error::Integrity(format!(
                        "tracklet {} appears under cameras {c} and {}",
                        s.tracklet_id, s.camera_id
                    )));
                }
            } else {
                owner.insert(s.tracklet_id, s.camera_id);
            }
        }
        Ok(())
    }
}

/// Evaluation-only ground truth, parallel to `TrackletData::samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalLabels {
    pub vehicle_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub data: TrackletData,
    pub labels: Option<EvalLabels>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_vehicles: u32,
    pub n_cameras: u32,
    pub min_cameras_per_vehicle: u32,
    pub max_cameras_per_vehicle: u32,
    pub min_tracklet_len: u32,
    pub max_tracklet_len: u32,
    pub d_in: usize,
    pub domain_gap_strength: f64,
    pub intra_tracklet_noise: f64,
    pub tracklet_drift: f64,
    /// Expected norm of the per-frame variation along a shared low-rank
    /// subspace (pose and viewpoint changes along a track).
    pub frame_variation: f64,
    /// Dimension of that subspace.
    pub variation_rank: usize,
    /// Std of the camera Givens angles at unit gap.
    pub camera_rotation: f64,
    /// Log-range of the camera scale factors at unit gap.
    pub camera_scale_spread: f64,
    /// Norm of the camera offset at unit gap.
    pub camera_offset: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_vehicles: 100,
            n_cameras: 6,
            min_cameras_per_vehicle: 2,
            max_cameras_per_vehicle: 4,
            min_tracklet_len: 6,
            max_tracklet_len: 10,
            d_in: 32,
            domain_gap_strength: 0.6,
            intra_tracklet_noise: 0.3,
            tracklet_drift: 0.3,
            frame_variation: 2.0,
            variation_rank: 4,
            camera_rotation: 0.3,
            camera_scale_spread: 0.5,
            camera_offset: 0.5,
            seed: 7,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParam(m.to_string()));
        if self.n_cameras < 2 {
            return bad("n_cameras must be at least 2");
        }
        if self.n_vehicles == 0 {
            return bad("n_vehicles must be positive");
        }
        if self.min_cameras_per_vehicle == 0 || self.min_cameras_per_vehicle > self.max_cameras_per_vehicle {
            return bad("cameras per vehicle range is empty");
        }
        if self.min_cameras_per_vehicle > self.n_cameras {
            return bad("min_cameras_per_vehicle exceeds n_cameras");
        }
        if self.min_tracklet_len == 0 || self.min_tracklet_len > self.max_tracklet_len {
            return bad("tracklet length range is empty");
        }
        if self.d_in < 2 {
            return bad("d_in must be at least 2");
        }
        if self.variation_rank > self.d_in {
            return bad("variation_rank exceeds d_in");
        }
        for (name, v) in [
            ("domain_gap_strength", self.domain_gap_strength),
            ("intra_tracklet_noise", self.intra_tracklet_noise),
            ("tracklet_drift", self.tracklet_drift),
            ("frame_variation", self.frame_variation),
            ("camera_rotation", self.camera_rotation),
            ("camera_scale_spread", self.camera_scale_spread),
            ("camera_offset", self.camera_offset),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParam(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// `y -> R (y + Q ((s - 1) * Q^T y)) + b`: a scaling by `s` along a random
/// orthonormal basis `Q`, then a rotation `R` made of `d` Givens rotations,
/// then an offset `b`.
///
/// With gap `g` the scale factors are `exp(g * spread * a)` for `a` uniform in
/// `[-1, 1]`, so the condition number is at most `exp(2 * g * spread)`. Givens
/// angles are `N(0, (g * rotation)^2)`; the offset has norm `g * offset`.
/// At `g = 0` the map is exactly the identity.
struct CameraTransform {
    basis: Vec<Vec<f64>>,
    scale_minus_one: Vec<f64>,
    rotations: Vec<(usize, usize, f64, f64)>,
    offset: Vec<f64>,
}

impl CameraTransform {
    fn draw(rng: &mut ChaCha8Rng, cfg: &GenConfig) -> Self {
        let d = cfg.d_in;
        let gap = cfg.domain_gap_strength;
        let basis = random_orthonormal(rng, d);
        let scale_minus_one =
            (0..d).map(|_| (gap * cfg.camera_scale_spread * rng.gen_range(-1.0..=1.0)).exp() - 1.0).collect();
        let rotations = (0..d)
            .map(|_| {
                let i = rng.gen_range(0..d);
                let mut j = rng.gen_range(0..d - 1);
                if j >= i {
                    j += 1;
                }
                let theta = rng.sample::<f64, _>(StandardNormal) * cfg.camera_rotation * gap;
                (i, j, theta.cos(), theta.sin())
            })
            .collect();
        let dir = unit_gaussian(rng, d);
        let offset = dir.into_iter().map(|x| x * cfg.camera_offset * gap).collect();
        CameraTransform { basis, scale_minus_one, rotations, offset }
    }

    fn apply(&self, y: &[f64]) -> Vec<f64> {
        let mut x = y.to_vec();
        for (q, sm1) in self.basis.iter().zip(&self.scale_minus_one) {
            let c = sm1 * q.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
            if c != 0.0 {
                x.iter_mut().zip(q).for_each(|(xi, qi)| *xi += c * qi);
            }
        }
        for &(i, j, c, s) in &self.rotations {
            let (a, b) = (x[i], x[j]);
            x[i] = c * a - s * b;
            x[j] = s * a + c * b;
        }
        for (xi, o) in x.iter_mut().zip(&self.offset) {
            *xi += o;
        }
        x
    }
}

/// Gram-Schmidt on Gaussian vectors.
fn random_orthonormal(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(d);
    while out.len() < d {
        let mut v = gaussian_vec(rng, d, 1.0);
        for q in &out {
            let p: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(x, qi)| *x -= p * qi);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            out.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    out
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize, std: f64) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) * std).collect()
}

fn unit_gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, d, 1.0);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

struct RawTracklet {
    vehicle: u32,
    camera: u32,
    frames: Vec<Vec<f64>>,
}

fn generate_attempt(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Vec<RawTracklet> {
    let d = cfg.d_in;
    let cams: Vec<CameraTransform> = (0..cfg.n_cameras).map(|_| CameraTransform::draw(rng, cfg)).collect();
    // drift and noise are per-coordinate std scaled so their expected norm
    // matches the config value, relative to the unit identity
    let per_coord = 1.0 / (d as f64).sqrt();
    let variation_basis = random_orthonormal(rng, d);
    let variation_basis = &variation_basis[..cfg.variation_rank];
    let per_axis = if cfg.variation_rank == 0 { 0.0 } else { cfg.frame_variation / (cfg.variation_rank as f64).sqrt() };
    let max_cams = cfg.max_cameras_per_vehicle.min(cfg.n_cameras);
    let mut out = Vec::new();
    for vehicle in 0..cfg.n_vehicles {
        let identity = unit_gaussian(rng, d);
        let m = rng.gen_range(cfg.min_cameras_per_vehicle..=max_cams) as usize;
        let mut visited: Vec<u32> =
            rand::seq::index::sample(rng, cfg.n_cameras as usize, m).into_iter().map(|c| c as u32).collect();
        visited.sort_unstable();
        for camera in visited {
            let len = rng.gen_range(cfg.min_tracklet_len..=cfg.max_tracklet_len);
            let drift = gaussian_vec(rng, d, cfg.tracklet_drift * per_coord);
            let frames = (0..len)
                .map(|_| {
                    let noise = gaussian_vec(rng, d, cfg.intra_tracklet_noise * per_coord);
                    let mut y: Vec<f64> = (0..d).map(|i| identity[i] + drift[i] + noise[i]).collect();
                    for axis in variation_basis {
                        let g = rng.sample::<f64, _>(StandardNormal) * per_axis;
                        y.iter_mut().zip(axis).for_each(|(yi, a)| *yi += g * a);
                    }
                    cams[camera as usize].apply(&y)
                })
                .collect();
            out.push(RawTracklet { vehicle, camera, frames });
        }
    }
    out
}

/// Generates a dataset. Attempts that leave a camera without tracklets are
/// redrawn from the continuing data stream, up to 32 times.
pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, Stream::Data);
    for _ in 0..MAX_GEN_ATTEMPTS {
        let mut tracklets = generate_attempt(cfg, &mut rng);
        let mut seen = vec![false; cfg.n_cameras as usize];
        for t in &tracklets {
            seen[t.camera as usize] = true;
        }
        if seen.iter().any(|s| !s) {
            continue;
        }
        // shuffled so neither tracklet ids nor sample order follow vehicles
        tracklets.shuffle(&mut rng);
        let mut samples = Vec::new();
        let mut vehicle_ids = Vec::new();
        for (tid, t) in tracklets.into_iter().enumerate() {
            for (f, input) in t.frames.into_iter().enumerate() {
                samples.push(Sample { input, camera_id: t.camera, tracklet_id: tid as u32, frame_index: f as u32 });
                vehicle_ids.push(t.vehicle);
            }
        }
        return Ok(Dataset {
            data: TrackletData { n_cameras: cfg.n_cameras, d_in: cfg.d_in, samples },
            labels: Some(EvalLabels { vehicle_ids }),
        });
    }
    Err(Error::Integrity(format!("no attempt in {MAX_GEN_ATTEMPTS} covered every camera")))
}

/// Samples of one side of a train/evaluation partition, with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub data: TrackletData,
    pub vehicle_ids: Vec<u32>,
}

impl EvalSet {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let labels = ds.labels.as_ref().ok_or_else(|| Error::Format("dataset has no evaluation labels".into()))?;
        Ok(EvalSet { data: ds.data.clone(), vehicle_ids: labels.vehicle_ids.clone() })
    }
}

/// Partitions vehicles into a training side (labels stripped) and a held-out
/// evaluation side. `eval_fraction` of the vehicles, rounded, are held out.
pub fn split_train_eval(ds: &Dataset, eval_fraction: f64, rng: &mut ChaCha8Rng) -> Result<(TrackletData, EvalSet)> {
    if !(0.0..1.0).contains(&eval_fraction) || eval_fraction == 0.0 {
        return Err(Error::InvalidParam("eval_fraction must be in (0, 1)".into()));
    }
    let labels = ds.labels.as_ref().ok_or_else(|| Error::Format("dataset has no evaluation labels".into()))?;
    let mut vehicles: Vec<u32> = labels.vehicle_ids.clone();
    vehicles.sort_unstable();
    vehicles.dedup();
    vehicles.shuffle(rng);
    let n_eval = ((vehicles.len() as f64) * eval_fraction).round() as usize;
    let held: std::collections::BTreeSet<u32> = vehicles[..n_eval].iter().copied().collect();

    let mut train = TrackletData { n_cameras: ds.data.n_cameras, d_in: ds.data.d_in, samples: Vec::new() };
    let mut eval = EvalSet {
        data: TrackletData { n_cameras: ds.data.n_cameras, d_in: ds.data.d_in, samples: Vec::new() },
        vehicle_ids: Vec::new(),
    };
    for (s, &v) in ds.data.samples.iter().zip(&labels.vehicle_ids) {
        if held.contains(&v) {
            eval.data.samples.push(s.clone());
            eval.vehicle_ids.push(v);
        } else {
            train.samples.push(s.clone());
        }
    }
    Ok((train, eval))
}

/// Query and gallery indices into an [`EvalSet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryGallery {
    pub queries: Vec<usize>,
    pub gallery: Vec<usize>,
    /// Vehicles seen by a single camera; they contribute no queries.
    pub excluded_vehicles: Vec<u32>,
}

/// For every vehicle seen by at least two cameras, one camera (chosen at
/// random) is kept query-free and every other camera contributes one random
/// frame of that vehicle as a query. All remaining samples form the gallery,
/// so every query has its reserved camera's frames as cross-camera positives.
pub fn split_query_gallery(set: &EvalSet, seed: u64) -> QueryGallery {
    let mut rng = stream(seed, Stream::EvalSplit);
    let mut groups: BTreeMap<u32, BTreeMap<u32, Vec<usize>>> = BTreeMap::new();
    for (i, (s, &v)) in set.data.samples.iter().zip(&set.vehicle_ids).enumerate() {
        groups.entry(v).or_default().entry(s.camera_id).or_default().push(i);
    }
    let mut is_query = vec![false; set.data.samples.len()];
    let mut excluded = Vec::new();
    for (vehicle, cams) in &groups {
        if cams.len() < 2 {
            excluded.push(*vehicle);
            continue;
        }
        let reserved = rng.gen_range(0..cams.len());
        for (ci, members) in cams.values().enumerate() {
            if ci != reserved {
                is_query[members[rng.gen_range(0..members.len())]] = true;
            }
        }
    }
    let (mut queries, mut gallery) = (Vec::new(), Vec::new());
    for (i, q) in is_query.into_iter().enumerate() {
        if q {
            queries.push(i);
        } else {
            gallery.push(i);
        }
    }
    QueryGallery { queries, gallery, excluded_vehicles: excluded }
}

// ---------------------------------------------------------------------------
// binary format

pub(crate) fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_f64(w: &mut impl Write, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn expect_magic(r: &mut impl Read, magic: &[u8; 8]) -> Result<()> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    if &b != magic {
        return Err(Error::Format(format!("bad magic, expected {:?}", String::from_utf8_lossy(magic))));
    }
    Ok(())
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("unexpected end of file".into())
    } else {
        Error::Io(e)
    }
}

/// Writes the header and sample records, without the evaluation trailer.
pub(crate) fn write_records(data: &TrackletData, w: &mut impl Write) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    put_u32(w, DATASET_VERSION)?;
    put_u32(w, data.samples.len() as u32)?;
    put_u32(w, data.d_in as u32)?;
    put_u32(w, data.n_cameras)?;
    put_u32(w, data.n_tracklets() as u32)?;
    for c in data.camera_counts() {
        put_u32(w, c)?;
    }
    for s in &data.samples {
        put_u32(w, s.camera_id)?;
        put_u32(w, s.tracklet_id)?;
        put_u32(w, s.frame_index)?;
        for &x in &s.input {
            put_f64(w, x)?;
        }
    }
    Ok(())
}

pub(crate) fn read_records(r: &mut impl Read) -> Result<TrackletData> {
    expect_magic(r, DATASET_MAGIC)?;
    let version = get_u32(r)?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let n = get_u32(r)? as usize;
    let d_in = get_u32(r)? as usize;
    let n_cameras = get_u32(r)?;
    let n_tracklets = get_u32(r)? as usize;
    let counts: Vec<u32> = (0..n_cameras).map(|_| get_u32(r)).collect::<Result<_>>()?;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let camera_id = get_u32(r)?;
        let tracklet_id = get_u32(r)?;
        let frame_index = get_u32(r)?;
        let input = (0..d_in).map(|_| get_f64(r)).collect::<Result<_>>()?;
        samples.push(Sample { input, camera_id, tracklet_id, frame_index });
    }
    let data = TrackletData { n_cameras, d_in, samples };
    data.validate()?;
    if data.camera_counts() != counts || data.n_tracklets() != n_tracklets {
        return Err(Error::Format("header counts disagree with records".into()));
    }
    Ok(data)
}

pub(crate) fn write_eval_trailer(labels: Option<&EvalLabels>, w: &mut impl Write) -> Result<()> {
    w.write_all(EVAL_MAGIC)?;
    match labels {
        Some(l) => {
            put_u32(w, l.vehicle_ids.len() as u32)?;
            for &v in &l.vehicle_ids {
                put_u32(w, v)?;
            }
        }
        None => put_u32(w, 0)?,
    }
    Ok(())
}

pub(crate) fn read_eval_trailer(r: &mut impl Read, n: usize) -> Result<Option<EvalLabels>> {
    expect_magic(r, EVAL_MAGIC)?;
    let count = get_u32(r)? as usize;
    if count == 0 {
        return Ok(None);
    }
    if count != n {
        return Err(Error::Format(format!("evaluation trailer has {count} labels for {n} samples")));
    }
    let vehicle_ids = (0..n).map(|_| get_u32(r)).collect::<Result<_>>()?;
    Ok(Some(EvalLabels { vehicle_ids }))
}

/// JSON mirror of the binary header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub version: u32,
    pub n: usize,
    pub d_in: usize,
    pub n_cameras: u32,
    pub n_tracklets: usize,
    pub camera_counts: Vec<u32>,
    pub has_eval_labels: bool,
}

impl Dataset {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        if let Some(l) = &self.labels {
            if l.vehicle_ids.len() != self.data.samples.len() {
                return Err(Error::Integrity("label count differs from sample count".into()));
            }
        }
        write_records(&self.data, w)?;
        write_eval_trailer(self.labels.as_ref(), w)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let data = read_records(r)?;
        let labels = read_eval_trailer(r, data.samples.len())?;
        Ok(Dataset { data, labels })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            format: "ctacl-dataset".into(),
            version: DATASET_VERSION,
            n: self.data.samples.len(),
            d_in: self.data.d_in,
            n_cameras: self.data.n_cameras,
            n_tracklets: self.data.n_tracklets(),
            camera_counts: self.data.camera_counts(),
            has_eval_labels: self.labels.is_some(),
        }
    }

    /// Writes `path` and a `<path>.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        let mut side = path.as_os_str().to_owned();
        side.push(".json");
        std::fs::write(side, serde_json::to_string_pretty(&self.sidecar())? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeSet, HashMap};

    fn small(n_vehicles: u32, cams: u32, len: u32) -> GenConfig {
        GenConfig {
            n_vehicles,
            n_cameras: cams,
            min_cameras_per_vehicle: cams,
            max_cameras_per_vehicle: cams,
            min_tracklet_len: len,
            max_tracklet_len: len,
            ..GenConfig::default()
        }
    }

    #[test]
    fn counting_example() {
        let ds = generate(&small(1, 2, 3)).unwrap();
        assert_eq!(ds.data.samples.len(), 6);
        assert_eq!(ds.data.n_tracklets(), 2);
    }

    #[test]
    fn degenerate_generator_repeats_frames() {
        let cfg = GenConfig { domain_gap_strength: 0.0, intra_tracklet_noise: 0.0, tracklet_drift: 0.0, frame_variation: 0.0, ..small(3, 3, 4) };
        let ds = generate(&cfg).unwrap();
        let labels = ds.labels.unwrap();
        let mut first: HashMap<u32, &Vec<f64>> = HashMap::new();
        for (s, v) in ds.data.samples.iter().zip(&labels.vehicle_ids) {
            let f = first.entry(*v).or_insert(&s.input);
            assert_eq!(*f, &s.input);
        }
    }

    #[test]
    fn standard_config_recount() {
        let ds = generate(&GenConfig::default()).unwrap();
        let labels = ds.labels.as_ref().unwrap();
        // independent recount from the raw records
        let mut per_cam: BTreeMap<u32, u32> = BTreeMap::new();
        let mut per_trk: BTreeMap<u32, (u32, u32, u32)> = BTreeMap::new();
        for (s, &v) in ds.data.samples.iter().zip(&labels.vehicle_ids) {
            *per_cam.entry(s.camera_id).or_default() += 1;
            let e = per_trk.entry(s.tracklet_id).or_insert((s.camera_id, v, 0));
            assert_eq!((e.0, e.1), (s.camera_id, v), "tracklet mixes cameras or vehicles");
            e.2 += 1;
        }
        let counts = ds.data.camera_counts();
        assert_eq!(counts.len(), 6);
        for (c, n) in &per_cam {
            assert_eq!(counts[*c as usize], *n);
        }
        assert_eq!(per_trk.len(), ds.data.n_tracklets());
        assert!(per_trk.values().all(|t| (6..=10).contains(&t.2)));
        assert_eq!(counts.iter().sum::<u32>() as usize, ds.data.samples.len());
        let vehicles: BTreeSet<u32> = labels.vehicle_ids.iter().copied().collect();
        assert_eq!(vehicles.len(), 100);
        // one tracklet per (vehicle, camera)
        let pairs: BTreeSet<(u32, u32)> = per_trk.values().map(|t| (t.1, t.0)).collect();
        assert_eq!(pairs.len(), per_trk.len());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&GenConfig::default()).unwrap().to_bytes().unwrap();
        let b = generate(&GenConfig::default()).unwrap().to_bytes().unwrap();
        assert_eq!(a, b);
        let c = generate(&GenConfig { seed: 8, ..GenConfig::default() }).unwrap().to_bytes().unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(generate(&GenConfig { n_cameras: 1, min_cameras_per_vehicle: 1, ..GenConfig::default() }).is_err());
        assert!(generate(&GenConfig { min_tracklet_len: 0, ..GenConfig::default() }).is_err());
        // two cameras but every vehicle only ever visits... both; an impossible
        // coverage would need n_vehicles * max_cams < n_cameras
        let sparse = GenConfig { n_vehicles: 1, min_cameras_per_vehicle: 1, max_cameras_per_vehicle: 1, ..GenConfig::default() };
        assert!(matches!(generate(&sparse), Err(Error::Integrity(_))));
    }

    #[test]
    fn file_roundtrip_and_corruption() {
        let ds = generate(&small(4, 3, 2)).unwrap();
        let bytes = ds.to_bytes().unwrap();
        let back = Dataset::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, ds);
        // header: magic + version + n + d_in + n_cam + n_trk + 3 camera counts
        assert_eq!(&bytes[..8], DATASET_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize, ds.data.samples.len());
        let record_len = 12 + 8 * ds.data.d_in;
        assert_eq!(bytes.len(), 8 + 4 * 5 + 4 * 3 + record_len * 24 + 8 + 4 + 4 * 24);

        assert!(Dataset::read_from(&mut &bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Dataset::read_from(&mut bad.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn tracklet_under_two_cameras_is_rejected() {
        let mut ds = generate(&small(2, 2, 2)).unwrap();
        let t = ds.data.samples[0].tracklet_id;
        let other = ds.data.samples.iter().position(|s| s.tracklet_id != t && s.camera_id != ds.data.samples[0].camera_id).unwrap();
        ds.data.samples[other].tracklet_id = t;
        assert!(matches!(ds.data.validate(), Err(Error::Integrity(_))));
    }

    #[test]
    fn query_gallery_single_vehicle() {
        let ds = generate(&small(1, 2, 3)).unwrap();
        let set = EvalSet::from_dataset(&ds).unwrap();
        let qg = split_query_gallery(&set, 1);
        assert_eq!(qg.queries.len(), 1);
        assert_eq!(qg.gallery.len(), 5);
        let q = &set.data.samples[qg.queries[0]];
        assert!(qg.gallery.iter().any(|&g| set.data.samples[g].camera_id != q.camera_id));
        assert_eq!(split_query_gallery(&set, 1), qg);
    }

    #[test]
    fn standard_split_has_cross_camera_positive_for_every_query() {
        let ds = generate(&GenConfig::default()).unwrap();
        let mut rng = stream(3, Stream::EvalSplit);
        let (train, eval) = split_train_eval(&ds, 0.5, &mut rng).unwrap();
        assert_eq!(train.samples.len() + eval.data.samples.len(), ds.data.samples.len());
        assert!(train.camera_counts().iter().all(|&c| c > 0));
        let qg = split_query_gallery(&eval, 3);
        assert!(!qg.queries.is_empty());
        for &q in &qg.queries {
            let qs = &eval.data.samples[q];
            let hits = qg
                .gallery
                .iter()
                .filter(|&&g| eval.vehicle_ids[g] == eval.vehicle_ids[q] && eval.data.samples[g].camera_id != qs.camera_id)
                .count();
            assert!(hits >= 1);
        }
        let all: BTreeSet<usize> = qg.queries.iter().chain(&qg.gallery).copied().collect();
        assert_eq!(all.len(), eval.data.samples.len());
    }

    /// Rank-1 of cosine nearest-neighbour retrieval on the raw inputs.
    fn input_space_rank1(ds: &Dataset) -> f64 {
        let set = EvalSet::from_dataset(ds).unwrap();
        let split = split_query_gallery(&set, 1);
        let unit: Vec<Vec<f64>> = set
            .data
            .samples
            .iter()
            .map(|s| {
                let n = s.input.iter().map(|x| x * x).sum::<f64>().sqrt();
                s.input.iter().map(|x| x / n).collect()
            })
            .collect();
        let labeled = |i: usize| crate::eval::Labeled {
            id: i,
            feature: &unit[i],
            vehicle_id: set.vehicle_ids[i],
            camera_id: set.data.samples[i].camera_id,
        };
        let q: Vec<_> = split.queries.iter().map(|&i| labeled(i)).collect();
        let g: Vec<_> = split.gallery.iter().map(|&i| labeled(i)).collect();
        crate::eval::retrieval_metrics(&q, &g, 1).unwrap().cmc[0]
    }

    #[test]
    fn no_gap_no_noise_is_perfectly_separable() {
        let cfg = GenConfig {
            domain_gap_strength: 0.0,
            intra_tracklet_noise: 0.0,
            tracklet_drift: 0.0,
            frame_variation: 0.0,
            ..GenConfig::default()
        };
        assert_eq!(input_space_rank1(&generate(&cfg).unwrap()), 1.0);
    }

    #[test]
    fn difficulty_grows_with_gap() {
        let r: Vec<f64> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&gap| input_space_rank1(&generate(&GenConfig { domain_gap_strength: gap, ..GenConfig::default() }).unwrap()))
            .collect();
        assert!(r[0] >= r[1] && r[1] >= r[2], "{r:?}");
        assert!(r[0] > r[2] + 0.1, "{r:?}");
    }
}
