use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::distortion::random_distortion;
use super::model::{cls_loss, preprocess, to_tensor, CanConfig, CanModel};
use super::AestheticsError;
use crate::image::Image;
use crate::nn::{softmax, Adam, Module, Param};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 200, batch_size: 8, lr: 1e-3, seed: 0 }
    }
}

/// One training image with its general score and, for the fine-tune
/// stage, the five attribute scores in output order.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image: Image,
    pub score: f64,
    pub attributes: Option<[f64; 5]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub l_reg: f64,
    pub l_cls: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    /// Samples whose `P_d` fell below the probability floor.
    pub clamped_probabilities: u64,
}

impl Module for CanModel {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = Vec::new();
        if !self.config.ablation.no_generic_module {
            p.extend(self.generic.params_mut());
        }
        p.extend(self.fusion.params_mut());
        if let Some(h) = &mut self.distortion_head {
            p.extend(h.params_mut());
        }
        p
    }
}

struct Prepared {
    image: Image,
    style: Vec<f64>,
    tensor: Vec<f64>,
}

fn prepare(model: &CanModel, samples: &[TrainSample]) -> Vec<Prepared> {
    use rayon::prelude::*;
    let size = model.config.input_size;
    samples
        .par_iter()
        .map(|s| {
            let image = preprocess(&s.image, size);
            Prepared { style: model.style_features(&image), tensor: to_tensor(&image, size), image }
        })
        .collect()
}

fn check(samples: &[TrainSample], cfg: &TrainConfig) -> Result<(), AestheticsError> {
    if samples.is_empty() {
        return Err(AestheticsError::Config("empty training set".into()));
    }
    if cfg.batch_size == 0 || cfg.lr <= 0.0 {
        return Err(AestheticsError::Config("batch_size and lr must be positive".into()));
    }
    Ok(())
}

/// Trains the general score head jointly with the distortion-prediction
/// task: `L = (F_CAN(x)_general - s)^2 - ln P_d`, one uniformly drawn
/// distortion per sample. The style encoder stays frozen.
pub fn train_can(samples: &[TrainSample], model_config: CanConfig, cfg: &TrainConfig) -> Result<(CanModel, TrainLog), AestheticsError> {
    check(samples, cfg)?;
    let mut model = CanModel::new(model_config)?;
    let log = continue_training(&mut model, samples, cfg)?;
    Ok((model, log))
}

pub fn continue_training(model: &mut CanModel, samples: &[TrainSample], cfg: &TrainConfig) -> Result<TrainLog, AestheticsError> {
    check(samples, cfg)?;
    let data = prepare(model, samples);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    let mut log = TrainLog::default();
    let size = model.config.input_size;
    let use_generic = !model.config.ablation.no_generic_module;
    let c = model.generic.dim();
    for step in 0..cfg.steps {
        model.zero_grad();
        let (mut sum_reg, mut sum_cls) = (0.0, 0.0);
        for _ in 0..cfg.batch_size {
            let i = rng.gen_range(0..data.len());
            let d = &data[i];
            let (feat, gcache) = if use_generic {
                let (f, c) = model.generic.forward(&d.tensor, size);
                (f, Some(c))
            } else {
                (Vec::new(), None)
            };
            let (out, fcache) = model.fusion.forward(&d.style, &feat);
            let err = out[0] - samples[i].score;
            sum_reg += err * err;
            let mut dout = vec![0.0; out.len()];
            dout[0] = 2.0 * err;
            let mut dfeat = model.fusion.backward(&fcache, &dout);

            if let Some(head) = &mut model.distortion_head {
                let k = rng.gen_range(0..model.config.distortions.len());
                let xd = random_distortion(&d.image, model.config.distortions[k], &mut rng);
                let (feat_d, gcache_d) = model.generic.forward(&to_tensor(&xd, size), size);
                let acts = head.forward(&[feat.clone(), feat_d].concat());
                let p = softmax(acts.last().unwrap());
                let (l, clamped) = cls_loss(p[k]);
                if clamped {
                    log.clamped_probabilities += 1;
                    log::warn!("P_d below floor at step {step}; clamped");
                }
                sum_cls += l;
                let mut dlogits = p;
                dlogits[k] -= 1.0;
                let dcat = head.backward(&acts, &dlogits);
                dfeat.iter_mut().zip(&dcat[..c]).for_each(|(a, b)| *a += b);
                model.generic.backward(&gcache_d, &dcat[c..]);
            }
            if let Some(gc) = gcache {
                model.generic.backward(&gc, &dfeat);
            }
        }
        let b = cfg.batch_size as f64;
        model.scale_grad(1.0 / b);
        opt.step(model.params_mut());
        let (l_reg, l_cls) = (sum_reg / b, sum_cls / b);
        log.steps.push(StepLog { step, loss: l_reg + l_cls, l_reg, l_cls });
    }
    Ok(log)
}

/// Second stage: fits all six outputs while only the fully connected layers
/// of the fusion head are updated. Samples without attribute scores
/// contribute to the general output only.
pub fn finetune_attributes(model: &mut CanModel, samples: &[TrainSample], cfg: &TrainConfig) -> Result<TrainLog, AestheticsError> {
    check(samples, cfg)?;
    if samples.iter().all(|s| s.attributes.is_none()) {
        return Err(AestheticsError::Config("no attribute scores in fine-tune set".into()));
    }
    let data = prepare(model, samples);
    let size = model.config.input_size;
    let feats: Vec<Vec<f64>> = data
        .iter()
        .map(|d| {
            if model.config.ablation.no_generic_module {
                Vec::new()
            } else {
                model.generic.forward(&d.tensor, size).0
            }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        model.fusion.fc.zero_grad();
        let mut sum = 0.0;
        for _ in 0..cfg.batch_size {
            let i = rng.gen_range(0..data.len());
            let (out, cache) = model.fusion.forward(&data[i].style, &feats[i]);
            let s = &samples[i];
            let mut targets = vec![Some(s.score)];
            targets.extend((0..5).map(|k| s.attributes.map(|a| a[k])));
            let mut dout = vec![0.0; 6];
            for (k, t) in targets.iter().enumerate() {
                if let Some(t) = t {
                    let e = out[k] - t;
                    sum += e * e;
                    dout[k] = 2.0 * e;
                }
            }
            model.fusion.backward_fc_only(&cache, &dout);
        }
        let b = cfg.batch_size as f64;
        model.fusion.fc.scale_grad(1.0 / b);
        opt.step(model.fusion.fc.params_mut());
        log.steps.push(StepLog { step, loss: sum / b, l_reg: sum / b, l_cls: 0.0 });
    }
    Ok(log)
}

/// Held-out accuracy of the distortion head: each image gets one random
/// distortion from the model's class list.
pub fn distortion_accuracy(model: &CanModel, images: &[Image], seed: u64) -> Option<f64> {
    model.distortion_head.as_ref()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = model.config.input_size;
    let mut correct = 0;
    for img in images {
        let x = preprocess(img, size);
        let k = rng.gen_range(0..model.config.distortions.len());
        let xd = random_distortion(&x, model.config.distortions[k], &mut rng);
        let p = model.distortion_probs(&x, &xd)?;
        if crate::nn::argmax(&p) == k {
            correct += 1;
        }
    }
    Some(correct as f64 / images.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aesthetics::model::Ablation;

    fn toy(n: usize) -> Vec<TrainSample> {
        (0..n)
            .map(|i| {
                let v = i as f32 / n as f32;
                TrainSample { image: Image::filled(16, 16, [v, v, v]), score: 1.0 + 9.0 * v as f64, attributes: None }
            })
            .collect()
    }

    #[test]
    fn empty_set_is_config_error() {
        assert!(matches!(train_can(&[], CanConfig::tiny(), &TrainConfig::default()), Err(AestheticsError::Config(_))));
    }

    #[test]
    fn no_distortion_task_logs_zero_cls() {
        let cfg = CanConfig { ablation: Ablation { no_distortion_task: true, ..Default::default() }, ..CanConfig::tiny() };
        let (model, log) = train_can(&toy(8), cfg, &TrainConfig { steps: 5, batch_size: 2, ..Default::default() }).unwrap();
        assert!(model.distortion_head.is_none());
        assert!(log.steps.iter().all(|s| s.l_cls == 0.0));
        assert_eq!(log.steps.len(), 5);
    }

    #[test]
    fn style_encoder_has_no_parameters_and_training_is_deterministic() {
        let tc = TrainConfig { steps: 3, batch_size: 2, ..Default::default() };
        let (a, la) = train_can(&toy(6), CanConfig::tiny(), &tc).unwrap();
        let (b, lb) = train_can(&toy(6), CanConfig::tiny(), &tc).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a.forward(&toy(1)[0].image), b.forward(&toy(1)[0].image));
    }

    #[test]
    fn finetune_touches_only_fc() {
        let (mut model, _) =
            train_can(&toy(6), CanConfig::tiny(), &TrainConfig { steps: 2, batch_size: 2, ..Default::default() }).unwrap();
        let before = model.clone();
        let mut samples = toy(6);
        for s in &mut samples {
            s.attributes = Some([s.score; 5]);
        }
        finetune_attributes(&mut model, &samples, &TrainConfig { steps: 3, batch_size: 2, ..Default::default() }).unwrap();
        assert_eq!(model.generic.stem.w.value, before.generic.stem.w.value);
        assert_eq!(model.fusion.attention[0].q.w.value, before.fusion.attention[0].q.w.value);
        assert_ne!(model.fusion.fc.layers[0].w.value, before.fusion.fc.layers[0].w.value);
    }
}
