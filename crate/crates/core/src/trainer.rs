//! Training loop, experiment runner and ablation sweeps.
//!
//! A CTACL run builds the memory from the untrained encoder, trains on the
//! in-camera loss for `warmup_epochs`, then switches to the extended loss with
//! mined cross-camera positives plus `lambda` times the camera KL term. Every
//! processed image updates its memory slot after the optimizer step, and the
//! whole memory is re-encoded at the end of every `overhaul_every`-th epoch.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctam::{CentroidSet, Ctam};
use crate::encoder::{lr_at, Checkpoint, Encoder, ForwardCache, Gradients, OptimConfig};
use crate::eval::{self, csv_err, EvalReport};
use crate::losses::{self, HyperParams};
use crate::mining;
use crate::rng::{stream, RngState, Stream};
use crate::synthdata::{self, Dataset, EvalSet, QueryGallery, TrackletData};
use crate::vecmath::{self, FeatureVec};
use crate::{Error, Result};

/// Anchors per parallel work unit. Fixed so reductions happen in the same
/// order on any thread count.
const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// In-batch instance discrimination between two noisy views.
    Sscl,
    /// Memory-based loss with mining, no camera KL term.
    Ctacl,
    /// Memory-based loss with mining plus `lambda` times the camera KL term.
    CtaclDa,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Sscl, Variant::Ctacl, Variant::CtaclDa];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Sscl => "sscl",
            Variant::Ctacl => "ctacl",
            Variant::CtaclDa => "ctacl-da",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown variant {s:?} (expected sscl, ctacl or ctacl-da)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optim: OptimConfig,
    pub hyper: HyperParams,
    pub variant: Variant,
    pub warmup_epochs: u32,
    pub overhaul_every: u32,
    /// Evaluate every this many epochs (0: only after the last one).
    pub eval_every: u32,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    /// Fraction of vehicles held out for evaluation.
    pub eval_fraction: f64,
    pub k_max: usize,
    /// Where the baseline's positive views are perturbed.
    pub augment_space: AugmentSpace,
    /// Expected norm of the Gaussian perturbation that makes a positive view.
    pub augment_noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentSpace {
    /// Noise added to the anchor embedding, then renormalized.
    Embedding,
    /// Noise added to the raw input; both views go through the encoder.
    Input,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optim: OptimConfig::default(),
            hyper: HyperParams::default(),
            variant: Variant::CtaclDa,
            warmup_epochs: 5,
            overhaul_every: 5,
            eval_every: 5,
            seed: 1,
            hidden: vec![128, 128],
            embed_dim: 64,
            eval_fraction: 0.5,
            k_max: eval::DEFAULT_K_MAX,
            augment_space: AugmentSpace::Embedding,
            augment_noise: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        self.hyper.validate()?;
        if self.warmup_epochs > self.optim.epochs {
            return Err(Error::InvalidParam("warmup_epochs exceeds epochs".into()));
        }
        if self.overhaul_every == 0 {
            return Err(Error::InvalidParam("overhaul_every must be at least 1".into()));
        }
        if self.embed_dim < 2 || self.hidden.contains(&0) {
            return Err(Error::InvalidParam("layer widths must be positive and embed_dim >= 2".into()));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::InvalidParam("eval_fraction must be in (0, 1)".into()));
        }
        if self.k_max == 0 {
            return Err(Error::InvalidParam("k_max must be at least 1".into()));
        }
        if !(self.augment_noise.is_finite() && self.augment_noise >= 0.0) {
            return Err(Error::InvalidParam("augment_noise must be >= 0".into()));
        }
        Ok(())
    }

    /// Weight actually applied to the camera KL term.
    pub fn effective_lambda(&self) -> f64 {
        match self.variant {
            Variant::CtaclDa => self.hyper.lambda,
            Variant::Sscl | Variant::Ctacl => 0.0,
        }
    }

    pub fn encoder_dims(&self, d_in: usize) -> Vec<usize> {
        let mut dims = vec![d_in];
        dims.extend(&self.hidden);
        dims.push(self.embed_dim);
        dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Sscl,
    Warmup,
    Extended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningStats {
    pub anchors: u64,
    pub mean_easy: f64,
    pub mean_hard: f64,
    pub mean_positives: f64,
    pub mean_negatives: f64,
    /// Fraction of mined positives that come from the anchor's own camera.
    pub same_camera_rate: f64,
    pub duplicates: u64,
    pub grey_zone: u64,
}

/// One line of the report stream. Epochs are numbered from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: u32,
    pub phase: Phase,
    pub lr: f64,
    pub batches: u32,
    pub mean_loss: f64,
    pub mean_contrastive: f64,
    /// Mean unweighted camera KL; absent when it was not computed.
    pub mean_da: Option<f64>,
    /// Contribution of the KL term to `mean_loss`; absent before mining starts.
    pub da_weighted: Option<f64>,
    pub mining: Option<MiningStats>,
    pub overhauled: bool,
    /// Largest number of batches any slot went without a full refresh.
    pub max_slot_age: u64,
    pub degenerate_updates: u64,
    pub eval: Option<EvalReport>,
}

impl EpochReport {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Per-batch sums over anchors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchStats {
    pub anchors: u64,
    pub loss: f64,
    pub contrastive: f64,
    pub da: f64,
    pub da_computed: bool,
    pub mined: bool,
    pub easy: u64,
    pub hard: u64,
    pub positives: u64,
    pub negatives: u64,
    pub same_camera: u64,
    pub duplicates: u64,
    pub grey_zone: u64,
}

impl BatchStats {
    fn absorb(&mut self, o: &BatchStats) {
        self.anchors += o.anchors;
        self.loss += o.loss;
        self.contrastive += o.contrastive;
        self.da += o.da;
        self.da_computed |= o.da_computed;
        self.mined |= o.mined;
        self.easy += o.easy;
        self.hard += o.hard;
        self.positives += o.positives;
        self.negatives += o.negatives;
        self.same_camera += o.same_camera;
        self.duplicates += o.duplicates;
        self.grey_zone += o.grey_zone;
    }
}

struct ChunkOut {
    grads: Gradients,
    stats: BatchStats,
    features: Vec<FeatureVec>,
}

/// Training state for one run over one dataset.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a TrackletData,
    encoder: Encoder,
    ctam: Option<Ctam>,
    batch_rng: ChaCha8Rng,
    augment_rng: ChaCha8Rng,
    epoch: u32,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, data: &'a TrackletData) -> Result<Self> {
        cfg.validate()?;
        data.validate()?;
        if data.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let encoder = Encoder::init(&cfg.encoder_dims(data.d_in), &mut stream(cfg.seed, Stream::Init))?;
        let ctam = match cfg.variant {
            Variant::Sscl => None,
            Variant::Ctacl | Variant::CtaclDa => Some(Ctam::build(data, |s| encoder.embed(&s.input))?),
        };
        Ok(Trainer {
            batch_rng: stream(cfg.seed, Stream::Batching),
            augment_rng: stream(cfg.seed, Stream::Augment),
            cfg,
            data,
            encoder,
            ctam,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn ctam(&self) -> Option<&Ctam> {
        self.ctam.as_ref()
    }

    /// Completed epochs.
    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn phase(&self) -> Phase {
        match self.cfg.variant {
            Variant::Sscl => Phase::Sscl,
            _ if self.epoch < self.cfg.warmup_epochs => Phase::Warmup,
            _ => Phase::Extended,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { encoder: self.encoder.clone(), epoch: self.epoch, rng: RngState::capture(&self.batch_rng) }
    }

    /// One optimizer step on the given image ids, with the current epoch's
    /// learning rate and phase.
    pub fn train_batch(&mut self, batch: &[usize]) -> Result<BatchStats> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if let Some(&bad) = batch.iter().find(|&&i| i >= self.data.len()) {
            return Err(Error::UnknownImage(bad));
        }
        let lr = lr_at(self.epoch, &self.cfg.optim);
        let phase = self.phase();
        let (grads, stats, features) = match phase {
            Phase::Sscl => {
                let (g, s) = self.sscl_batch(batch)?;
                (g, s, Vec::new())
            }
            Phase::Warmup | Phase::Extended => self.ctacl_batch(batch, phase)?,
        };
        self.encoder.sgd_step(&grads, lr, self.cfg.optim.momentum)?;
        if let Some(ctam) = self.ctam.as_mut() {
            for (&i, z) in batch.iter().zip(&features) {
                ctam.slot_update(i, z)?;
            }
            ctam.tick();
        }
        Ok(stats)
    }

    fn ctacl_batch(&self, batch: &[usize], phase: Phase) -> Result<(Gradients, BatchStats, Vec<FeatureVec>)> {
        let ctam = self.ctam.as_ref().ok_or_else(|| Error::Integrity("memory not built".into()))?;
        let hyper = HyperParams { lambda: self.cfg.effective_lambda(), ..self.cfg.hyper };
        let centroids: Option<CentroidSet> =
            if phase == Phase::Extended && hyper.lambda > 0.0 { Some(ctam.camera_centroids()?) } else { None };
        let scale = 1.0 / batch.len() as f64;
        let enc = &self.encoder;
        let data = self.data;

        let chunks: Vec<ChunkOut> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut out = ChunkOut { grads: enc.zero_grads(), stats: BatchStats::default(), features: Vec::new() };
                for &i in chunk {
                    let (z, cache) = enc.forward(&data.samples[i].input)?;
                    let key = ctam.key_of(i)?;
                    let s = &mut out.stats;
                    s.anchors += 1;
                    let grad = if phase == Phase::Warmup {
                        let lg = losses::ctacl_sub(z.as_slice(), ctam, key, hyper.tau)?;
                        s.loss += lg.value;
                        s.contrastive += lg.value;
                        lg.grad
                    } else {
                        let mined = mining::mine(z.as_slice(), ctam, key, &hyper.mining)?;
                        s.mined = true;
                        s.easy += mined.easy.len() as u64;
                        s.hard += mined.hard.len() as u64;
                        s.positives += mined.positives_union.len() as u64;
                        s.negatives += mined.negatives.len() as u64;
                        for &p in &mined.positives_union {
                            s.same_camera += (ctam.key_of(p)?.camera_id == key.camera_id) as u64;
                        }
                        s.duplicates += mined.duplicates as u64;
                        s.grey_zone += mined.grey_zone as u64;
                        let lg = losses::ctacl_extended(z.as_slice(), ctam, key, &mined, hyper.tau)?;
                        s.contrastive += lg.value;
                        s.loss += lg.value;
                        let mut grad = lg.grad;
                        if let Some(c) = &centroids {
                            let da = losses::da_loss(z.as_slice(), c)?;
                            s.da_computed = true;
                            s.da += da.value;
                            s.loss += hyper.lambda * da.value;
                            grad.iter_mut().zip(&da.grad).for_each(|(g, d)| *g += hyper.lambda * d);
                        }
                        grad
                    };
                    enc.backward_into(&cache, &grad, scale, &mut out.grads)?;
                    out.features.push(z);
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        reduce(enc, chunks)
    }

    fn sscl_batch(&mut self, batch: &[usize]) -> Result<(Gradients, BatchStats)> {
        match self.cfg.augment_space {
            AugmentSpace::Embedding => self.sscl_batch_embedding(batch),
            AugmentSpace::Input => self.sscl_batch_input(batch),
        }
    }

    /// Positive of anchor `i` is `normalize(z_i + noise)`; gradients reach the
    /// encoder through both the anchor and the perturbed copy.
    fn sscl_batch_embedding(&mut self, batch: &[usize]) -> Result<(Gradients, BatchStats)> {
        let enc = &self.encoder;
        let data = self.data;
        let forwards: Vec<(FeatureVec, ForwardCache)> =
            batch.par_iter().map(|&i| enc.forward(&data.samples[i].input)).collect::<Result<_>>()?;
        let sigma = self.cfg.augment_noise / (enc.output_dim() as f64).sqrt();
        let perturbed: Vec<Vec<f64>> = forwards
            .iter()
            .map(|(z, _)| z.as_slice().iter().map(|v| v + sigma * self.augment_rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let positives: Vec<FeatureVec> = perturbed.iter().map(|u| vecmath::l2_normalize(u)).collect::<Result<_>>()?;
        let anchors: Vec<&[f64]> = forwards.iter().map(|(z, _)| z.as_slice()).collect();
        let pos: Vec<&[f64]> = positives.iter().map(|p| p.as_slice()).collect();
        let out = losses::sscl_loss(&anchors, &pos, self.cfg.hyper.tau)?;
        let upstream: Vec<Vec<f64>> = out
            .grad_anchors
            .iter()
            .zip(&out.grad_positives)
            .zip(&perturbed)
            .map(|((ga, gp), u)| {
                let through = vecmath::l2_normalize_jvp(u, gp)?;
                Ok(ga.iter().zip(&through).map(|(a, b)| a + b).collect())
            })
            .collect::<Result<_>>()?;
        let scale = 1.0 / batch.len() as f64;
        let idx: Vec<usize> = (0..forwards.len()).collect();
        let grads = backward_chunks(enc, &idx, |v| (&forwards[v].1, upstream[v].as_slice()), scale)?;
        Ok((grads, sscl_stats(batch.len(), &out)))
    }

    /// Two views per sample, each the raw input plus Gaussian noise.
    fn sscl_batch_input(&mut self, batch: &[usize]) -> Result<(Gradients, BatchStats)> {
        let d = self.data.d_in;
        let sigma = self.cfg.augment_noise / (d as f64).sqrt();
        let mut views: Vec<Vec<f64>> = Vec::with_capacity(2 * batch.len());
        for &i in batch {
            for _ in 0..2 {
                let x = &self.data.samples[i].input;
                views.push(x.iter().map(|v| v + sigma * self.augment_rng.sample::<f64, _>(StandardNormal)).collect());
            }
        }
        let enc = &self.encoder;
        let forwards: Vec<(FeatureVec, ForwardCache)> = views.par_iter().map(|v| enc.forward(v)).collect::<Result<_>>()?;
        let anchors: Vec<&[f64]> = forwards.iter().step_by(2).map(|(z, _)| z.as_slice()).collect();
        let positives: Vec<&[f64]> = forwards.iter().skip(1).step_by(2).map(|(z, _)| z.as_slice()).collect();
        let out = losses::sscl_loss(&anchors, &positives, self.cfg.hyper.tau)?;
        let upstream: Vec<&[f64]> =
            out.grad_anchors.iter().zip(&out.grad_positives).flat_map(|(a, p)| [a.as_slice(), p.as_slice()]).collect();
        let scale = 1.0 / batch.len() as f64;
        let idx: Vec<usize> = (0..forwards.len()).collect();
        let grads = backward_chunks(enc, &idx, |v| (&forwards[v].1, upstream[v]), scale)?;
        Ok((grads, sscl_stats(batch.len(), &out)))
    }

    /// Runs one epoch over a fresh random permutation of the training images,
    /// then overhauls the memory and evaluates when due.
    pub fn run_epoch(&mut self, eval: Option<(&EvalSet, &QueryGallery)>) -> Result<EpochReport> {
        let phase = self.phase();
        let lr = lr_at(self.epoch, &self.cfg.optim);
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut self.batch_rng);

        let mut sum = BatchStats::default();
        let mut batches = 0u32;
        let mut max_age = 0u64;
        let mut batches_of: Vec<&[usize]> = order.chunks(self.cfg.optim.batch_size).collect();
        // a trailing single image cannot form an instance pair; fold it into the previous batch
        if batches_of.len() > 1 && batches_of[batches_of.len() - 1].len() == 1 {
            batches_of.pop();
            let start = (batches_of.len() - 1) * self.cfg.optim.batch_size;
            *batches_of.last_mut().unwrap() = &order[start..];
        }
        for batch in batches_of {
            let s = self.train_batch(batch)?;
            sum.absorb(&s);
            batches += 1;
            if let Some(c) = &self.ctam {
                max_age = max_age.max(c.batches_since_refresh());
            }
            if !sum.loss.is_finite() {
                return Err(Error::NonFinite(format!("loss in epoch {}", self.epoch + 1)));
            }
        }
        self.epoch += 1;

        let mut overhauled = false;
        if let Some(ctam) = self.ctam.as_mut() {
            if self.epoch.is_multiple_of(self.cfg.overhaul_every) {
                let enc = &self.encoder;
                ctam.overhaul(self.data, |s| enc.embed(&s.input))?;
                overhauled = true;
            }
        }

        let n = sum.anchors.max(1) as f64;
        let mean_da = sum.da_computed.then(|| sum.da / n);
        let da_weighted = (phase == Phase::Extended).then(|| mean_da.map_or(0.0, |d| self.cfg.effective_lambda() * d));
        let mining = sum.mined.then(|| MiningStats {
            anchors: sum.anchors,
            mean_easy: sum.easy as f64 / n,
            mean_hard: sum.hard as f64 / n,
            mean_positives: sum.positives as f64 / n,
            mean_negatives: sum.negatives as f64 / n,
            same_camera_rate: sum.same_camera as f64 / sum.positives.max(1) as f64,
            duplicates: sum.duplicates,
            grey_zone: sum.grey_zone,
        });
        let due = self.epoch == self.cfg.optim.epochs
            || (self.cfg.eval_every > 0 && self.epoch.is_multiple_of(self.cfg.eval_every));
        let eval = match eval {
            Some((set, split)) if due => Some(eval::evaluate(&self.encoder, set, split, self.cfg.k_max)?),
            _ => None,
        };
        Ok(EpochReport {
            epoch: self.epoch,
            phase,
            lr,
            batches,
            mean_loss: sum.loss / n,
            mean_contrastive: sum.contrastive / n,
            mean_da,
            da_weighted,
            mining,
            overhauled,
            max_slot_age: max_age,
            degenerate_updates: self.ctam.as_ref().map_or(0, |c| c.degenerate_updates()),
            eval,
        })
    }
}

fn sscl_stats(n: usize, out: &losses::SsclOutput) -> BatchStats {
    let total: f64 = out.per_anchor.iter().map(|l| l.value).sum();
    BatchStats { anchors: n as u64, loss: total, contrastive: total, ..Default::default() }
}

fn backward_chunks<'c>(
    enc: &Encoder,
    idx: &[usize],
    item: impl Fn(usize) -> (&'c ForwardCache, &'c [f64]) + Sync,
    scale: f64,
) -> Result<Gradients> {
    let chunks: Vec<ChunkOut> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = enc.zero_grads();
            for &v in chunk {
                let (cache, up) = item(v);
                enc.backward_into(cache, up, scale, &mut g)?;
            }
            Ok(ChunkOut { grads: g, stats: BatchStats::default(), features: Vec::new() })
        })
        .collect::<Result<_>>()?;
    reduce(enc, chunks).map(|(g, _, _)| g)
}

fn reduce(enc: &Encoder, chunks: Vec<ChunkOut>) -> Result<(Gradients, BatchStats, Vec<FeatureVec>)> {
    let mut grads = enc.zero_grads();
    let mut stats = BatchStats::default();
    let mut features = Vec::new();
    for c in chunks {
        grads.add_assign(&c.grads)?;
        stats.absorb(&c.stats);
        features.extend(c.features);
    }
    Ok((grads, stats, features))
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub encoder: Encoder,
    pub reports: Vec<EpochReport>,
    pub checkpoint: Checkpoint,
}

/// Trains for `cfg.optim.epochs` epochs. `on_epoch` sees every report, and the
/// trainer in the state that produced it, as soon as it is produced.
pub fn fit(
    cfg: &TrainConfig,
    data: &TrackletData,
    eval: Option<(&EvalSet, &QueryGallery)>,
    mut on_epoch: impl FnMut(&EpochReport, &Trainer) -> Result<()>,
) -> Result<FitOutput> {
    let mut trainer = Trainer::new(cfg.clone(), data)?;
    let mut reports = Vec::with_capacity(cfg.optim.epochs as usize);
    for _ in 0..cfg.optim.epochs {
        let r = trainer.run_epoch(eval)?;
        on_epoch(&r, &trainer)?;
        reports.push(r);
    }
    Ok(FitOutput { checkpoint: trainer.checkpoint(), encoder: trainer.encoder, reports })
}

/// A dataset split into a label-free training side and a held-out query and
/// gallery set.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub train: TrackletData,
    pub eval: EvalSet,
    pub split: QueryGallery,
}

impl Experiment {
    pub fn prepare(ds: &Dataset, seed: u64, eval_fraction: f64) -> Result<Self> {
        let (train, eval) = synthdata::split_train_eval(ds, eval_fraction, &mut stream(seed, Stream::Partition))?;
        let split = synthdata::split_query_gallery(&eval, seed);
        Ok(Experiment { train, eval, split })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Evaluation of the freshly initialized encoder.
    pub untrained: EvalReport,
    pub final_eval: EvalReport,
    pub reports: Vec<EpochReport>,
    pub checkpoint: Checkpoint,
}

pub fn run_experiment(
    exp: &Experiment,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochReport, &Trainer) -> Result<()>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let init = Encoder::init(&cfg.encoder_dims(exp.train.d_in), &mut stream(cfg.seed, Stream::Init))?;
    let untrained = eval::evaluate(&init, &exp.eval, &exp.split, cfg.k_max)?;
    let out = fit(cfg, &exp.train, Some((&exp.eval, &exp.split)), on_epoch)?;
    let final_eval = match out.reports.last().and_then(|r| r.eval.clone()) {
        Some(e) => e,
        None => eval::evaluate(&out.encoder, &exp.eval, &exp.split, cfg.k_max)?,
    };
    Ok(RunOutcome { untrained, final_eval, reports: out.reports, checkpoint: out.checkpoint })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    K,
    Gamma,
    Lambda,
    Variant,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::K => "k",
            SweepParam::Gamma => "gamma",
            SweepParam::Lambda => "lambda",
            SweepParam::Variant => "variant",
        }
    }
}

/// `param=v1,v2,...`
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub param: SweepParam,
    pub values: Vec<String>,
}

impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, list) =
            s.split_once('=').ok_or_else(|| Error::InvalidParam(format!("grid {s:?} is not of the form param=v1,v2")))?;
        let param = match name.trim() {
            "k" => SweepParam::K,
            "gamma" => SweepParam::Gamma,
            "lambda" => SweepParam::Lambda,
            "variant" | "loss" => SweepParam::Variant,
            other => return Err(Error::InvalidParam(format!("unknown grid parameter {other:?}"))),
        };
        let values: Vec<String> = list.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(Error::InvalidParam("grid has no values".into()));
        }
        Ok(Grid { param, values })
    }
}

impl Grid {
    /// The configuration for one grid value. A `lambda` cell always trains
    /// with the KL term so the swept weight takes effect.
    pub fn apply(&self, base: &TrainConfig, value: &str) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        let num = || value.parse::<f64>().map_err(|_| Error::InvalidParam(format!("{value:?} is not a number")));
        match self.param {
            SweepParam::K => {
                cfg.hyper.mining.k =
                    value.parse().map_err(|_| Error::InvalidParam(format!("{value:?} is not a valid k")))?;
            }
            SweepParam::Gamma => cfg.hyper.mining.gamma = num()?,
            SweepParam::Lambda => {
                cfg.hyper.lambda = num()?;
                cfg.variant = Variant::CtaclDa;
            }
            SweepParam::Variant => cfg.variant = value.parse()?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub param: String,
    pub value: String,
    pub rank1: Option<f64>,
    pub rank5: Option<f64>,
    pub map: Option<f64>,
    pub camera_probe: Option<f64>,
    pub error: Option<String>,
}

/// One run per grid value, all from the same seed. A failing cell becomes a
/// row with `error` set.
pub fn run_ablation(exp: &Experiment, base: &TrainConfig, grid: &Grid) -> Result<Vec<AblationRow>> {
    if grid.values.is_empty() {
        return Err(Error::InvalidParam("grid has no values".into()));
    }
    Ok(grid
        .values
        .iter()
        .map(|value| {
            let outcome = grid.apply(base, value).and_then(|cfg| run_experiment(exp, &cfg, |_, _| Ok(())));
            let mut row = AblationRow {
                param: grid.param.as_str().to_string(),
                value: value.clone(),
                rank1: None,
                rank5: None,
                map: None,
                camera_probe: None,
                error: None,
            };
            match outcome {
                Ok(o) => {
                    row.rank1 = Some(o.final_eval.rank(1));
                    row.rank5 = Some(o.final_eval.rank(5));
                    row.map = Some(o.final_eval.map);
                    row.camera_probe = Some(o.final_eval.camera_probe_accuracy);
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect())
}

pub fn write_ablation_csv(rows: &[AblationRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["param", "value", "rank1", "rank5", "map", "camera_probe", "error"]).map_err(csv_err)?;
    let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        out.write_record([
            r.param.clone(),
            r.value.clone(),
            num(r.rank1),
            num(r.rank5),
            num(r.map),
            num(r.camera_probe),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
