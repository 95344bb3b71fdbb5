//! Training objectives with analytic gradients.
//!
//! Every loss takes the query embedding `z` as a plain slice and returns the
//! gradient with respect to it. Memory slots and camera centroids are
//! constants within a step. Scores are `z . slot / tau`.

use serde::{Deserialize, Serialize};

use crate::ctam::{CamTrkKey, CentroidSet, Ctam};
use crate::mining::{MiningParams, MiningResult};
use crate::vecmath::{self, dot_unchecked, log_sum_exp, ProbVec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossGrad {
    fn zero(dim: usize) -> Self {
        LossGrad { value: 0.0, grad: vec![0.0; dim] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub tau: f64,
    pub lambda: f64,
    pub mining: MiningParams,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams { tau: 0.07, lambda: 0.2, mining: MiningParams::default() }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidParam(format!("tau must be in (0, 1], got {}", self.tau)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidParam(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        self.mining.validate()
    }
}

fn check_dim(z: &[f64], other: &[f64]) -> Result<()> {
    if z.len() != other.len() {
        return Err(Error::Dimension { expected: z.len(), got: other.len() });
    }
    Ok(())
}

/// Contrastive loss with several positives:
/// `-(1/|P|) sum_p log( exp(z.p/tau) / sum_a exp(z.a/tau) )`.
pub fn multi_positive_nce(z: &[f64], positives: &[&[f64]], denominators: &[&[f64]], tau: f64) -> Result<LossGrad> {
    if positives.is_empty() {
        return Err(Error::Empty("positive set"));
    }
    if denominators.is_empty() {
        return Err(Error::Empty("denominator set"));
    }
    let logits: Vec<f64> = denominators
        .iter()
        .map(|a| check_dim(z, a).map(|_| dot_unchecked(z, a) / tau))
        .collect::<Result<_>>()?;
    let lse = log_sum_exp(&logits);
    let inv_p = 1.0 / positives.len() as f64;
    let mut value = lse;
    let mut grad = vec![0.0; z.len()];
    for p in positives {
        check_dim(z, p)?;
        value -= inv_p * dot_unchecked(z, p) / tau;
        for (g, x) in grad.iter_mut().zip(*p) {
            *g -= inv_p * x / tau;
        }
    }
    for (a, l) in denominators.iter().zip(&logits) {
        let w = (l - lse).exp() / tau;
        for (g, x) in grad.iter_mut().zip(*a) {
            *g += w * x;
        }
    }
    Ok(LossGrad { value, grad })
}

/// Batch output of the instance-discrimination baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct SsclOutput {
    /// Loss of each anchor with the gradient with respect to that anchor only.
    pub per_anchor: Vec<LossGrad>,
    /// Gradient of the summed loss with respect to every anchor embedding.
    pub grad_anchors: Vec<Vec<f64>>,
    /// Gradient of the summed loss with respect to every positive embedding.
    pub grad_positives: Vec<Vec<f64>>,
}

/// Instance discrimination over a batch of (anchor, augmented view) pairs.
///
/// The denominator of anchor `i` is its own positive plus every other anchor
/// of the batch, so it holds `B` entries.
pub fn sscl_loss<V: AsRef<[f64]>>(anchors: &[V], positives: &[V], tau: f64) -> Result<SsclOutput> {
    let b = anchors.len();
    if b < 2 {
        return Err(Error::InvalidParam("instance discrimination needs a batch of at least 2".into()));
    }
    if positives.len() != b {
        return Err(Error::Dimension { expected: b, got: positives.len() });
    }
    let dim = anchors[0].as_ref().len();
    let mut grad_anchors = vec![vec![0.0; dim]; b];
    let mut grad_positives = vec![vec![0.0; dim]; b];
    let mut per_anchor = Vec::with_capacity(b);
    for i in 0..b {
        let zi = anchors[i].as_ref();
        let mut cands: Vec<&[f64]> = Vec::with_capacity(b);
        cands.push(positives[i].as_ref());
        cands.extend((0..b).filter(|&a| a != i).map(|a| anchors[a].as_ref()));
        let lg = multi_positive_nce(zi, &cands[..1], &cands, tau)?;

        let logits: Vec<f64> = cands.iter().map(|c| dot_unchecked(zi, c) / tau).collect();
        let lse = log_sum_exp(&logits);
        for (g, x) in grad_anchors[i].iter_mut().zip(&lg.grad) {
            *g += x;
        }
        let p_pos = (logits[0] - lse).exp();
        for (g, x) in grad_positives[i].iter_mut().zip(zi) {
            *g += (p_pos - 1.0) * x / tau;
        }
        let others = (0..b).filter(|&a| a != i);
        for (a, l) in others.zip(&logits[1..]) {
            let w = (l - lse).exp() / tau;
            for (g, x) in grad_anchors[a].iter_mut().zip(zi) {
                *g += w * x;
            }
        }
        per_anchor.push(lg);
    }
    Ok(SsclOutput { per_anchor, grad_anchors, grad_positives })
}

/// In-camera loss: tracklet-mates are positives, the camera bank is the
/// denominator.
pub fn ctacl_sub(z: &[f64], ctam: &Ctam, key: CamTrkKey, tau: f64) -> Result<LossGrad> {
    let positives: Vec<&[f64]> = ctam.tracklet_images(key)?.iter().map(|&i| ctam.slot(i)).collect();
    let denominators: Vec<&[f64]> = ctam.camera_images(key.camera_id)?.iter().map(|&i| ctam.slot(i)).collect();
    multi_positive_nce(z, &positives, &denominators, tau)
}

/// Extended loss: positives are the tracklet plus mined positives; the
/// denominator is the camera bank plus mined positives plus negatives, each
/// slot counted once.
pub fn ctacl_extended(z: &[f64], ctam: &Ctam, key: CamTrkKey, mined: &MiningResult, tau: f64) -> Result<LossGrad> {
    let own = ctam.tracklet_images(key)?;
    let camera = ctam.camera_images(key.camera_id)?;
    let n = ctam.len();
    if let Some(&bad) = mined.positives_union.iter().chain(&mined.negatives).find(|&&i| i >= n) {
        return Err(Error::UnknownImage(bad));
    }
    if mined.positives_union.iter().chain(&mined.negatives).any(|i| own.contains(i)) {
        return Err(Error::Integrity("mined sets overlap the anchor's own tracklet".into()));
    }

    let mut positives: Vec<&[f64]> = own.iter().map(|&i| ctam.slot(i)).collect();
    positives.extend(mined.positives_union.iter().map(|&i| ctam.slot(i)));

    let mut in_denominator = vec![false; n];
    let mut denominators = Vec::with_capacity(camera.len() + mined.positives_union.len() + mined.negatives.len());
    for &i in camera.iter().chain(&mined.positives_union).chain(&mined.negatives) {
        if !in_denominator[i] {
            in_denominator[i] = true;
            denominators.push(ctam.slot(i));
        }
    }
    multi_positive_nce(z, &positives, &denominators, tau)
}

fn check_cameras(centroids: &CentroidSet, z: &[f64]) -> Result<()> {
    if centroids.len() < 2 {
        return Err(Error::InvalidParam("camera likelihood needs at least 2 cameras".into()));
    }
    centroids.centroids.iter().try_for_each(|c| check_dim(z, c.as_slice()))
}

/// Softmax of `z . centroid` over cameras, without temperature.
pub fn camera_likelihood(z: &[f64], centroids: &CentroidSet) -> Result<ProbVec> {
    check_cameras(centroids, z)?;
    let logits: Vec<f64> = centroids.centroids.iter().map(|c| dot_unchecked(z, c.as_slice())).collect();
    vecmath::stable_softmax(&logits)
}

/// `KL(U || P)` between the uniform distribution over cameras and the camera
/// likelihood, evaluated as `lse(l) - mean(l) - ln(n)` on the logits `l`.
pub fn da_loss(z: &[f64], centroids: &CentroidSet) -> Result<LossGrad> {
    check_cameras(centroids, z)?;
    let n = centroids.len() as f64;
    let logits: Vec<f64> = centroids.centroids.iter().map(|c| dot_unchecked(z, c.as_slice())).collect();
    let lse = log_sum_exp(&logits);
    let mean = logits.iter().sum::<f64>() / n;
    let value = (lse - mean - n.ln()).max(0.0);
    let mut grad = vec![0.0; z.len()];
    for (c, l) in centroids.centroids.iter().zip(&logits) {
        let w = (l - lse).exp() - 1.0 / n;
        for (g, x) in grad.iter_mut().zip(c.as_slice()) {
            *g += w * x;
        }
    }
    Ok(LossGrad { value, grad })
}

/// Components of the joint objective for one anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLoss {
    pub ctacl: LossGrad,
    pub da: LossGrad,
    pub total: LossGrad,
}

pub fn joint_loss(
    z: &[f64],
    ctam: &Ctam,
    key: CamTrkKey,
    mined: &MiningResult,
    centroids: &CentroidSet,
    hyper: &HyperParams,
) -> Result<JointLoss> {
    let ctacl = ctacl_extended(z, ctam, key, mined, hyper.tau)?;
    let da = if hyper.lambda == 0.0 { LossGrad::zero(z.len()) } else { da_loss(z, centroids)? };
    let total = LossGrad {
        value: ctacl.value + hyper.lambda * da.value,
        grad: ctacl.grad.iter().zip(&da.grad).map(|(c, d)| c + hyper.lambda * d).collect(),
    };
    Ok(JointLoss { ctacl, da, total })
}

/// `ctacl_extended + lambda * da_loss`.
pub fn total_loss(
    z: &[f64],
    ctam: &Ctam,
    key: CamTrkKey,
    mined: &MiningResult,
    centroids: &CentroidSet,
    hyper: &HyperParams,
) -> Result<LossGrad> {
    joint_loss(z, ctam, key, mined, centroids, hyper).map(|j| j.total)
}
