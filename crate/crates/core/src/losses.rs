//! Training objectives: negative cosine with stop-gradient, teacher-student
//! cross-entropy, and InfoNCE.
//!
//! Self-distillation losses return a [`LossValue`] whose teacher gradient is
//! always exactly zero; callers never backpropagate through the teacher.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{dot, norm, softmax};

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub grad_student: Vec<f64>,
    /// Always all zeros.
    pub grad_teacher: Vec<f64>,
}

/// `−cos(p, z)` with gradient flowing to `p` only.
pub fn simsiam_loss(p: &[f64], z: &[f64]) -> Result<LossValue> {
    if p.len() != z.len() {
        return Err(Error::shape("simsiam_loss", p.len(), z.len()));
    }
    let (np, nz) = (norm(p), norm(z));
    if !(np > 0.0) || !(nz > 0.0) {
        return Err(Error::Degenerate("negative cosine needs nonzero vectors"));
    }
    let cos = dot(p, z) / (np * nz);
    let grad_student = p
        .iter()
        .zip(z)
        .map(|(pi, zi)| -(zi / (np * nz) - cos * pi / (np * np)))
        .collect();
    Ok(LossValue {
        loss: -cos,
        grad_student,
        grad_teacher: vec![0.0; z.len()],
    })
}

/// Symmetrized negative cosine: `½·D(p1, z2) + ½·D(p2, z1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricLoss {
    pub loss: f64,
    pub grad_p1: Vec<f64>,
    pub grad_p2: Vec<f64>,
}

pub fn simsiam_symmetric(p1: &[f64], z2: &[f64], p2: &[f64], z1: &[f64]) -> Result<SymmetricLoss> {
    let a = simsiam_loss(p1, z2)?;
    let b = simsiam_loss(p2, z1)?;
    Ok(SymmetricLoss {
        loss: 0.5 * (a.loss + b.loss),
        grad_p1: a.grad_student.iter().map(|g| 0.5 * g).collect(),
        grad_p2: b.grad_student.iter().map(|g| 0.5 * g).collect(),
    })
}

/// Output head state for the teacher-student cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DinoHead {
    pub out_dim: usize,
    pub student_temp: f64,
    pub teacher_temp: f64,
    /// Teacher temperature at epoch 0; ramps linearly to `teacher_temp`.
    pub warmup_teacher_temp: f64,
    pub warmup_teacher_epochs: usize,
    pub center: Vec<f64>,
    pub center_momentum: f64,
    /// Subtract `center` from teacher logits.
    pub centering: bool,
}

impl DinoHead {
    pub fn new(out_dim: usize) -> Self {
        Self {
            out_dim,
            student_temp: 0.1,
            teacher_temp: 0.07,
            warmup_teacher_temp: 0.04,
            warmup_teacher_epochs: 30,
            center: vec![0.0; out_dim],
            center_momentum: 0.9,
            centering: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.student_temp > 0.0) {
            return Err(Error::config("student_temp", "must be positive"));
        }
        if !(self.teacher_temp > 0.0) || !(self.warmup_teacher_temp > 0.0) {
            return Err(Error::config("teacher_temp", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.center_momentum) {
            return Err(Error::config("center_momentum", "must lie in [0, 1)"));
        }
        if self.center.len() != self.out_dim {
            return Err(Error::shape("DinoHead center", self.out_dim, self.center.len()));
        }
        Ok(())
    }

    /// Teacher temperature for a zero-based epoch.
    pub fn teacher_temp_at(&self, epoch: usize) -> f64 {
        if epoch >= self.warmup_teacher_epochs || self.warmup_teacher_epochs == 0 {
            return self.teacher_temp;
        }
        let frac = epoch as f64 / self.warmup_teacher_epochs as f64;
        self.warmup_teacher_temp + (self.teacher_temp - self.warmup_teacher_temp) * frac
    }
}

/// Cross-entropy `H(teacher, student)` between
/// `softmax((teacher − center) / τ_t)` and `softmax(student / τ_s)`.
/// The student gradient is `(student_probs − teacher_probs) / τ_s`.
pub fn dino_loss(student_logits: &[f64], teacher_logits: &[f64], head: &DinoHead, teacher_temp: f64) -> Result<LossValue> {
    if student_logits.len() != head.out_dim {
        return Err(Error::shape("dino_loss student", head.out_dim, student_logits.len()));
    }
    if teacher_logits.len() != head.out_dim {
        return Err(Error::shape("dino_loss teacher", head.out_dim, teacher_logits.len()));
    }
    if !(head.student_temp > 0.0) || !(teacher_temp > 0.0) {
        return Err(Error::config("temperature", "temperatures must be positive"));
    }
    let t = teacher_probs(teacher_logits, head, teacher_temp);
    let ts = head.student_temp;
    let max = student_logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max / ts
        + student_logits
            .iter()
            .map(|l| ((l - max) / ts).exp())
            .sum::<f64>()
            .ln();
    let s = softmax(student_logits, ts);
    let loss = t
        .iter()
        .zip(student_logits)
        .map(|(ti, l)| if *ti == 0.0 { 0.0 } else { -ti * (l / ts - lse) })
        .sum();
    let grad_student = s.iter().zip(&t).map(|(si, ti)| (si - ti) / ts).collect();
    Ok(LossValue {
        loss,
        grad_student,
        grad_teacher: vec![0.0; teacher_logits.len()],
    })
}

/// Sharpened, optionally centered teacher distribution.
pub fn teacher_probs(teacher_logits: &[f64], head: &DinoHead, teacher_temp: f64) -> Vec<f64> {
    if head.centering {
        let centered: Vec<f64> = teacher_logits.iter().zip(&head.center).map(|(l, c)| l - c).collect();
        softmax(&centered, teacher_temp)
    } else {
        softmax(teacher_logits, teacher_temp)
    }
}

/// `momentum·center + (1 − momentum)·mean(batch)`.
pub fn center_update<R: AsRef<[f64]>>(center: &[f64], batch: &[R], momentum: f64) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Degenerate("center update needs a non-empty batch"));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::config("center_momentum", "must lie in [0, 1)"));
    }
    let mut mean = vec![0.0; center.len()];
    for row in batch {
        let row = row.as_ref();
        if row.len() != center.len() {
            return Err(Error::shape("center_update", center.len(), row.len()));
        }
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = batch.len() as f64;
    Ok(center
        .iter()
        .zip(&mean)
        .map(|(c, m)| momentum * c + (1.0 - momentum) * (m / n))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceValue {
    pub loss: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negatives: Vec<Vec<f64>>,
}

/// `−log(e^{s⁺/τ} / (e^{s⁺/τ} + Σ e^{s⁻/τ}))` with dot-product similarities.
pub fn infonce_loss<R: AsRef<[f64]>>(anchor: &[f64], positive: &[f64], negatives: &[R], tau: f64) -> Result<InfoNceValue> {
    if negatives.is_empty() {
        return Err(Error::config("negatives", "InfoNCE needs at least one negative"));
    }
    if !(tau > 0.0) {
        return Err(Error::config("tau", "InfoNCE temperature must be positive"));
    }
    let d = anchor.len();
    if positive.len() != d {
        return Err(Error::shape("infonce positive", d, positive.len()));
    }
    let mut logits = Vec::with_capacity(negatives.len() + 1);
    logits.push(dot(anchor, positive) / tau);
    for n in negatives {
        let n = n.as_ref();
        if n.len() != d {
            return Err(Error::shape("infonce negative", d, n.len()));
        }
        logits.push(dot(anchor, n) / tau);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let loss = (lse - logits[0]).max(0.0);
    let q: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();

    let c0 = (q[0] - 1.0) / tau;
    let mut grad_anchor: Vec<f64> = positive.iter().map(|p| c0 * p).collect();
    let mut grad_negatives = Vec::with_capacity(negatives.len());
    for (n, qk) in negatives.iter().zip(&q[1..]) {
        let ck = qk / tau;
        for (g, v) in grad_anchor.iter_mut().zip(n.as_ref()) {
            *g += ck * v;
        }
        grad_negatives.push(anchor.iter().map(|a| ck * a).collect());
    }
    Ok(InfoNceValue {
        loss,
        grad_anchor,
        grad_positive: anchor.iter().map(|a| c0 * a).collect(),
        grad_negatives,
    })
}
