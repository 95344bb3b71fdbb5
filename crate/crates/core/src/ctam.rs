//! Camera-tracklet-aware memory.
//!
//! Stored features are grouped camera → tracklet → image. Image ids are the
//! positions of samples in the dataset the memory was built from. Every
//! enumeration is tracklet-major: tracklets in ascending tracklet id, images in
//! ascending image id.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::synthdata::{self, Sample, TrackletData};
use crate::vecmath::{self, FeatureVec};
use crate::{Error, Result};

pub const SLOT_MAGIC: &[u8; 8] = b"CTAMSLOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CamTrkKey {
    pub camera_id: u32,
    pub tracklet_id: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackletSlots {
    pub tracklet_id: u32,
    pub image_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CameraBank {
    pub camera_id: u32,
    pub tracklets: Vec<TrackletSlots>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Updated,
    /// The stored slot and the new feature cancel out; the slot was kept.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet {
    pub centroids: Vec<FeatureVec>,
}

impl CentroidSet {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Ctam {
    dim: usize,
    banks: Vec<CameraBank>,
    /// Flat per-camera image lists in tracklet-major order.
    camera_images: Vec<Vec<usize>>,
    tracklets: BTreeMap<u32, (usize, usize)>,
    keys: Vec<CamTrkKey>,
    slots: Vec<f64>,
    degenerate_updates: u64,
    batches_since_refresh: u64,
}

impl Ctam {
    /// Encodes every sample and files it under its camera and tracklet.
    pub fn build<F>(data: &TrackletData, encode: F) -> Result<Ctam>
    where
        F: Fn(&Sample) -> Result<FeatureVec> + Sync,
    {
        let features = encode_all(&data.samples, &encode)?;
        Self::from_features(data, features)
    }

    /// Builds the memory from precomputed features, one per sample.
    pub fn from_features(data: &TrackletData, features: Vec<FeatureVec>) -> Result<Ctam> {
        if data.samples.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if features.len() != data.samples.len() {
            return Err(Error::Integrity(format!("{} features for {} samples", features.len(), data.samples.len())));
        }
        data.validate()?;
        let dim = features[0].dim();

        let mut grouped: Vec<BTreeMap<u32, Vec<usize>>> = vec![BTreeMap::new(); data.n_cameras as usize];
        for (i, s) in data.samples.iter().enumerate() {
            grouped[s.camera_id as usize].entry(s.tracklet_id).or_default().push(i);
        }
        let mut banks = Vec::with_capacity(grouped.len());
        let mut camera_images = Vec::with_capacity(grouped.len());
        let mut tracklets = BTreeMap::new();
        for (c, group) in grouped.into_iter().enumerate() {
            let mut flat = Vec::new();
            let mut bank = CameraBank { camera_id: c as u32, tracklets: Vec::with_capacity(group.len()) };
            for (t, (tracklet_id, image_ids)) in group.into_iter().enumerate() {
                flat.extend_from_slice(&image_ids);
                tracklets.insert(tracklet_id, (c, t));
                bank.tracklets.push(TrackletSlots { tracklet_id, image_ids });
            }
            banks.push(bank);
            camera_images.push(flat);
        }

        let mut slots = Vec::with_capacity(dim * features.len());
        for f in &features {
            if f.dim() != dim {
                return Err(Error::Dimension { expected: dim, got: f.dim() });
            }
            slots.extend_from_slice(f.as_slice());
        }
        let keys = data
            .samples
            .iter()
            .map(|s| CamTrkKey { camera_id: s.camera_id, tracklet_id: s.tracklet_id })
            .collect();
        Ok(Ctam { dim, banks, camera_images, tracklets, keys, slots, degenerate_updates: 0, batches_since_refresh: 0 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn n_cameras(&self) -> usize {
        self.banks.len()
    }

    pub fn n_tracklets(&self) -> usize {
        self.tracklets.len()
    }

    pub fn banks(&self) -> &[CameraBank] {
        &self.banks
    }

    pub fn degenerate_updates(&self) -> u64 {
        self.degenerate_updates
    }

    pub fn batches_since_refresh(&self) -> u64 {
        self.batches_since_refresh
    }

    /// Marks the end of one training batch for slot-age accounting.
    pub fn tick(&mut self) {
        self.batches_since_refresh += 1;
    }

    pub fn key_of(&self, image_id: usize) -> Result<CamTrkKey> {
        self.keys.get(image_id).copied().ok_or(Error::UnknownImage(image_id))
    }

    #[inline]
    pub fn slot(&self, image_id: usize) -> &[f64] {
        &self.slots[image_id * self.dim..(image_id + 1) * self.dim]
    }

    pub fn all_slots(&self) -> &[f64] {
        &self.slots
    }

    /// Moving-average update: the slot becomes `normalize(slot + z)`.
    pub fn slot_update(&mut self, image_id: usize, z: &FeatureVec) -> Result<UpdateOutcome> {
        if image_id >= self.len() {
            return Err(Error::UnknownImage(image_id));
        }
        if z.dim() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: z.dim() });
        }
        let sum: Vec<f64> = self.slot(image_id).iter().zip(z.as_slice()).map(|(a, b)| a + b).collect();
        match vecmath::l2_normalize(&sum) {
            Ok(n) => {
                self.slots[image_id * self.dim..(image_id + 1) * self.dim].copy_from_slice(n.as_slice());
                Ok(UpdateOutcome::Updated)
            }
            Err(Error::ZeroNorm) => {
                self.degenerate_updates += 1;
                Ok(UpdateOutcome::Degenerate)
            }
            Err(e) => Err(e),
        }
    }

    /// Replaces every slot with a fresh encoding and resets slot ages.
    pub fn overhaul<F>(&mut self, data: &TrackletData, encode: F) -> Result<()>
    where
        F: Fn(&Sample) -> Result<FeatureVec> + Sync,
    {
        if data.samples.len() != self.len() {
            return Err(Error::Integrity(format!(
                "overhaul with {} samples, memory holds {}",
                data.samples.len(),
                self.len()
            )));
        }
        for (s, k) in data.samples.iter().zip(&self.keys) {
            if s.camera_id != k.camera_id || s.tracklet_id != k.tracklet_id {
                return Err(Error::Integrity("overhaul dataset does not match the memory layout".into()));
            }
        }
        let features = encode_all(&data.samples, &encode)?;
        for (i, f) in features.iter().enumerate() {
            if f.dim() != self.dim {
                return Err(Error::Dimension { expected: self.dim, got: f.dim() });
            }
            self.slots[i * self.dim..(i + 1) * self.dim].copy_from_slice(f.as_slice());
        }
        self.batches_since_refresh = 0;
        Ok(())
    }

    pub fn camera_images(&self, camera_id: u32) -> Result<&[usize]> {
        self.camera_images.get(camera_id as usize).map(Vec::as_slice).ok_or(Error::UnknownCamera(camera_id))
    }

    pub fn tracklet_images(&self, key: CamTrkKey) -> Result<&[usize]> {
        let unknown = Error::UnknownTracklet { camera_id: key.camera_id, tracklet_id: key.tracklet_id };
        match self.tracklets.get(&key.tracklet_id) {
            Some(&(c, t)) if c == key.camera_id as usize => Ok(&self.banks[c].tracklets[t].image_ids),
            _ => Err(unknown),
        }
    }

    /// All slots of one camera.
    pub fn subdomain(&self, camera_id: u32) -> Result<Vec<(usize, &[f64])>> {
        Ok(self.camera_images(camera_id)?.iter().map(|&i| (i, self.slot(i))).collect())
    }

    /// All slots of one tracklet.
    pub fn tracklet_slots(&self, key: CamTrkKey) -> Result<Vec<(usize, &[f64])>> {
        Ok(self.tracklet_images(key)?.iter().map(|&i| (i, self.slot(i))).collect())
    }

    /// Normalized mean slot of every camera.
    pub fn camera_centroids(&self) -> Result<CentroidSet> {
        let mut centroids = Vec::with_capacity(self.banks.len());
        for (c, images) in self.camera_images.iter().enumerate() {
            if images.is_empty() {
                return Err(Error::Integrity(format!("camera {c} has no stored features")));
            }
            let mut mean = vec![0.0; self.dim];
            for &i in images {
                for (m, x) in mean.iter_mut().zip(self.slot(i)) {
                    *m += x;
                }
            }
            let inv = 1.0 / images.len() as f64;
            mean.iter_mut().for_each(|m| *m *= inv);
            centroids.push(vecmath::l2_normalize(&mean)?);
        }
        Ok(CentroidSet { centroids })
    }

    /// Writes the dataset records followed by the slot array.
    ///
    /// Layout: dataset header and records (as in the dataset file), an empty
    /// evaluation trailer, then `CTAMSLOT`, `dim: u32`, `n: u32` and `n * dim`
    /// little-endian `f64` slot values in image-id order.
    pub fn write_snapshot(&self, data: &TrackletData, w: &mut impl Write) -> Result<()> {
        if data.samples.len() != self.len() {
            return Err(Error::Integrity("snapshot dataset does not match the memory".into()));
        }
        synthdata::write_records(data, w)?;
        synthdata::write_eval_trailer(None, w)?;
        w.write_all(SLOT_MAGIC)?;
        synthdata::put_u32(w, self.dim as u32)?;
        synthdata::put_u32(w, self.len() as u32)?;
        for &x in &self.slots {
            synthdata::put_f64(w, x)?;
        }
        Ok(())
    }

    pub fn read_snapshot(r: &mut impl Read) -> Result<(TrackletData, Ctam)> {
        let data = synthdata::read_records(r)?;
        synthdata::read_eval_trailer(r, data.samples.len())?;
        synthdata::expect_magic(r, SLOT_MAGIC)?;
        let dim = synthdata::get_u32(r)? as usize;
        let n = synthdata::get_u32(r)? as usize;
        if n != data.samples.len() || dim == 0 {
            return Err(Error::Format("slot section does not match the records".into()));
        }
        let slots: Vec<f64> = (0..n * dim).map(|_| synthdata::get_f64(r)).collect::<Result<_>>()?;
        for (i, s) in slots.chunks(dim).enumerate() {
            if (vecmath::norm(s) - 1.0).abs() > 1e-9 {
                return Err(Error::Format(format!("slot {i} is not unit norm")));
            }
        }
        let features = slots.chunks(dim).map(|c| FeatureVec::from_unit(c.to_vec())).collect();
        let ctam = Ctam::from_features(&data, features)?;
        Ok((data, ctam))
    }
}

fn encode_all<F>(samples: &[Sample], encode: &F) -> Result<Vec<FeatureVec>>
where
    F: Fn(&Sample) -> Result<FeatureVec> + Sync,
{
    samples.par_iter().map(encode).collect()
}
