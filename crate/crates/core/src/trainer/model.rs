use rand::Rng;

use crate::error::{Error, Result};
use crate::losses::{center_update, dino_loss, infonce_loss, simsiam_loss, simsiam_symmetric, DinoHead};
use crate::numcore::{ema_update, l2_normalize, l2_normalize_backward, Checkpoint, Mlp, NetworkRecord, Sgd, Tape};

use super::config::{CacheSource, LossKind, TrainConfig};

/// Student encoder with its loss-specific heads and, for DINO, the EMA teacher.
///
/// SimSiam shares the backbone between branches and stops gradients on the
/// teacher side; InfoNCE backpropagates through both views.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderPair {
    pub loss: LossKind,
    pub backbone: Mlp,
    pub predictor: Option<Mlp>,
    pub head: Option<Mlp>,
    pub teacher_backbone: Option<Mlp>,
    pub teacher_head: Option<Mlp>,
}

impl EncoderPair {
    pub fn new<R: Rng + ?Sized>(config: &TrainConfig, input_dim: usize, rng: &mut R) -> Result<Self> {
        let d = config.embed_dim;
        let backbone = Mlp::new(&[input_dim, config.hidden_dim, d], rng)?;
        let (predictor, head) = match config.loss {
            LossKind::Simsiam => (Some(Mlp::new(&[d, config.predictor_hidden, d], rng)?), None),
            LossKind::Dino => (None, Some(Mlp::new(&[d, config.hidden_dim, config.dino_out_dim], rng)?)),
            LossKind::Infonce => (None, None),
        };
        let (teacher_backbone, teacher_head) = match config.loss {
            LossKind::Dino => (Some(backbone.clone()), head.clone()),
            _ => (None, None),
        };
        Ok(Self {
            loss: config.loss,
            backbone,
            predictor,
            head,
            teacher_backbone,
            teacher_head,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.backbone.in_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.backbone.out_dim()
    }

    /// Backbone representation, the features every evaluation protocol uses.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.backbone.infer(x)
    }

    pub fn to_checkpoint(&self, epoch: usize) -> Checkpoint {
        let mut nets = vec![NetworkRecord::from_mlp("backbone", &self.backbone)];
        let optional = [
            ("predictor", &self.predictor),
            ("head", &self.head),
            ("teacher_backbone", &self.teacher_backbone),
            ("teacher_head", &self.teacher_head),
        ];
        for (name, net) in optional {
            if let Some(m) = net {
                nets.push(NetworkRecord::from_mlp(name, m));
            }
        }
        Checkpoint::new(epoch, nets)
    }

    /// Rebuilds the networks; the loss kind is inferred from which heads exist.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let get = |name: &str| ckpt.network(name).map(NetworkRecord::to_mlp).transpose();
        let backbone = get("backbone")?.ok_or_else(|| Error::Schema {
            path: "checkpoint".into(),
            message: "no backbone network".into(),
        })?;
        let predictor = get("predictor")?;
        let head = get("head")?;
        let loss = if predictor.is_some() {
            LossKind::Simsiam
        } else if head.is_some() {
            LossKind::Dino
        } else {
            LossKind::Infonce
        };
        Ok(Self {
            loss,
            backbone,
            predictor,
            head,
            teacher_backbone: get("teacher_backbone")?,
            teacher_head: get("teacher_head")?,
        })
    }
}

/// Student-branch forward pass for one query view.
#[derive(Debug, Clone)]
pub(crate) struct StudentPass {
    pub z: Vec<f64>,
    tape_z: Tape,
    out: Option<(Vec<f64>, Tape)>,
}

impl StudentPass {
    pub fn cache_vector(&self, source: CacheSource) -> &[f64] {
        match (source, &self.out) {
            (CacheSource::Output, Some((o, _))) => o,
            _ => &self.z,
        }
    }
}

/// Optimizer state and gradient buffers for every trainable network.
#[derive(Debug, Clone)]
pub(crate) struct Learner {
    sgd_backbone: Sgd,
    sgd_extra: Option<Sgd>,
    g_backbone: Vec<f64>,
    g_extra: Vec<f64>,
    pub dino: Option<DinoHead>,
    symmetric: bool,
    infonce_tau: f64,
    ema: f64,
}

impl Learner {
    pub fn new(config: &TrainConfig, model: &EncoderPair) -> Result<Self> {
        let sgd = |n: usize| Sgd::new(n, config.lr, config.momentum)?.with_weight_decay(config.weight_decay);
        let extra = model.predictor.as_ref().or(model.head.as_ref());
        let dino = (config.loss == LossKind::Dino).then(|| DinoHead {
            out_dim: config.dino_out_dim,
            student_temp: config.student_temp,
            teacher_temp: config.teacher_temp,
            warmup_teacher_temp: config.warmup_teacher_temp,
            warmup_teacher_epochs: config.warmup_teacher_epochs,
            center: vec![0.0; config.dino_out_dim],
            center_momentum: config.center_momentum,
            centering: config.centering,
        });
        if let Some(h) = &dino {
            h.validate()?;
        }
        Ok(Self {
            sgd_backbone: sgd(model.backbone.param_count())?,
            sgd_extra: extra.map(|m| sgd(m.param_count())).transpose()?,
            g_backbone: model.backbone.zero_grads(),
            g_extra: extra.map_or_else(Vec::new, Mlp::zero_grads),
            dino,
            symmetric: config.symmetric,
            infonce_tau: config.infonce_tau,
            ema: config.ema,
        })
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.sgd_backbone.set_learning_rate(lr);
        if let Some(s) = &mut self.sgd_extra {
            s.set_learning_rate(lr);
        }
    }

    pub fn student_pass(&self, model: &EncoderPair, x: &[f64]) -> Result<StudentPass> {
        let (z, tape_z) = model.backbone.forward(x)?;
        let out = match model.predictor.as_ref().or(model.head.as_ref()) {
            Some(m) => Some(m.forward(&z)?),
            None => None,
        };
        Ok(StudentPass { z, tape_z, out })
    }

    /// Accumulates batch-averaged gradients for `students[b]` against the
    /// teacher views `teacher_inputs[b]` and returns the mean loss.
    pub fn accumulate(
        &mut self,
        model: &EncoderPair,
        students: &[StudentPass],
        teacher_inputs: &[Vec<f64>],
        epoch0: usize,
    ) -> Result<f64> {
        self.g_backbone.iter_mut().for_each(|g| *g = 0.0);
        self.g_extra.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / students.len() as f64;
        match model.loss {
            LossKind::Simsiam => self.simsiam(model, students, teacher_inputs, scale),
            LossKind::Dino => self.dino(model, students, teacher_inputs, scale, epoch0),
            LossKind::Infonce => self.infonce(model, students, teacher_inputs, scale),
        }
    }

    fn simsiam(&mut self, model: &EncoderPair, students: &[StudentPass], teachers: &[Vec<f64>], scale: f64) -> Result<f64> {
        let pred = model.predictor.as_ref().expect("simsiam model has a predictor");
        let mut total = 0.0;
        for (s, xt) in students.iter().zip(teachers) {
            let (p1, tape_p1) = s.out.as_ref().expect("student pass ran the predictor");
            if self.symmetric {
                let (z2, tape_z2) = model.backbone.forward(xt)?;
                let (p2, tape_p2) = pred.forward(&z2)?;
                let l = simsiam_symmetric(p1, &z2, &p2, &s.z)?;
                total += l.loss;
                for (g, tp, tz) in [(&l.grad_p1, tape_p1, &s.tape_z), (&l.grad_p2, &tape_p2, &tape_z2)] {
                    let g: Vec<f64> = g.iter().map(|v| v * scale).collect();
                    let dz = pred.backward_into(tp, &g, &mut self.g_extra)?;
                    model.backbone.backward_into(tz, &dz, &mut self.g_backbone)?;
                }
            } else {
                let z2 = model.backbone.infer(xt)?;
                let l = simsiam_loss(p1, &z2)?;
                total += l.loss;
                let g: Vec<f64> = l.grad_student.iter().map(|v| v * scale).collect();
                let dz = pred.backward_into(tape_p1, &g, &mut self.g_extra)?;
                model.backbone.backward_into(&s.tape_z, &dz, &mut self.g_backbone)?;
            }
        }
        Ok(total * scale)
    }

    fn dino(
        &mut self,
        model: &EncoderPair,
        students: &[StudentPass],
        teachers: &[Vec<f64>],
        scale: f64,
        epoch0: usize,
    ) -> Result<f64> {
        let head = model.head.as_ref().expect("dino model has a head");
        let tb = model.teacher_backbone.as_ref().expect("dino model has a teacher");
        let th = model.teacher_head.as_ref().expect("dino model has a teacher head");
        let state = self.dino.as_ref().expect("dino learner has head state");
        let temp = state.teacher_temp_at(epoch0);
        let mut total = 0.0;
        let mut teacher_logits = Vec::with_capacity(students.len());
        for (s, xt) in students.iter().zip(teachers) {
            let (logits, tape_h) = s.out.as_ref().expect("student pass ran the head");
            let t = th.infer(&tb.infer(xt)?)?;
            let l = dino_loss(logits, &t, state, temp)?;
            total += l.loss;
            let g: Vec<f64> = l.grad_student.iter().map(|v| v * scale).collect();
            let dz = head.backward_into(tape_h, &g, &mut self.g_extra)?;
            model.backbone.backward_into(&s.tape_z, &dz, &mut self.g_backbone)?;
            teacher_logits.push(t);
        }
        let state = self.dino.as_mut().expect("dino learner has head state");
        if state.centering {
            state.center = center_update(&state.center, &teacher_logits, state.center_momentum)?;
        }
        Ok(total * scale)
    }

    fn infonce(&mut self, model: &EncoderPair, students: &[StudentPass], teachers: &[Vec<f64>], scale: f64) -> Result<f64> {
        let anchors = students.iter().map(|s| l2_normalize(&s.z)).collect::<Result<Vec<_>>>()?;
        let mut raw = Vec::with_capacity(teachers.len());
        let mut tapes = Vec::with_capacity(teachers.len());
        for xt in teachers {
            let (z, t) = model.backbone.forward(xt)?;
            raw.push(z);
            tapes.push(t);
        }
        let positives = raw.iter().map(|z| l2_normalize(z)).collect::<Result<Vec<_>>>()?;
        let d = model.embed_dim();
        let mut g_anchor = vec![vec![0.0; d]; anchors.len()];
        let mut g_pos = vec![vec![0.0; d]; anchors.len()];
        let mut total = 0.0;
        for b in 0..anchors.len() {
            let negs: Vec<&[f64]> = positives
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != b)
                .map(|(_, v)| v.as_slice())
                .collect();
            let l = infonce_loss(&anchors[b], &positives[b], &negs, self.infonce_tau)?;
            total += l.loss;
            add_scaled(&mut g_anchor[b], &l.grad_anchor, scale);
            add_scaled(&mut g_pos[b], &l.grad_positive, scale);
            let others = (0..anchors.len()).filter(|&k| k != b);
            for (k, g) in others.zip(&l.grad_negatives) {
                add_scaled(&mut g_pos[k], g, scale);
            }
        }
        for b in 0..anchors.len() {
            let dz = l2_normalize_backward(&students[b].z, &g_anchor[b])?;
            model.backbone.backward_into(&students[b].tape_z, &dz, &mut self.g_backbone)?;
            let dz = l2_normalize_backward(&raw[b], &g_pos[b])?;
            model.backbone.backward_into(&tapes[b], &dz, &mut self.g_backbone)?;
        }
        Ok(total * scale)
    }

    /// Applies the accumulated gradients, then moves the EMA teacher.
    pub fn step(&mut self, model: &mut EncoderPair) -> Result<()> {
        self.sgd_backbone.step(model.backbone.params_mut(), &self.g_backbone)?;
        if let (Some(sgd), Some(net)) = (&mut self.sgd_extra, model.predictor.as_mut().or(model.head.as_mut())) {
            sgd.step(net.params_mut(), &self.g_extra)?;
        }
        if let (Some(tb), Some(th), Some(h)) = (&mut model.teacher_backbone, &mut model.teacher_head, &model.head) {
            ema_update(tb.params_mut(), model.backbone.params(), self.ema)?;
            ema_update(th.params_mut(), h.params(), self.ema)?;
        }
        Ok(())
    }
}

fn add_scaled(acc: &mut [f64], g: &[f64], scale: f64) {
    for (a, v) in acc.iter_mut().zip(g) {
        *a += v * scale;
    }
}
