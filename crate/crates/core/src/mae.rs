//! Toy masked-autoencoder: patchify, random masking, an encoder over the
//! visible patches, a lighter decoder over the full token grid, and the
//! decoder-for-classifier swap that turns the encoder into a frame feature
//! extractor.
//!
//! Images are `[h×w×c]` tensors with pixels in [0, 1]. A patch vector
//! lists its pixels row by row, channels innermost.

use rand::seq::{index, SliceRandom};
use rand::{Rng as _, SeedableRng};
use thiserror::Error;

use crate::nn::{join, sinusoidal_positions, Linear, Mlp, Module, TransformerStack};
use crate::objectives::{expr_loss, MetricError};
use crate::tensor::{Tensor, TensorError};
use crate::trainer::optim::{clip_grad_norm, lr_at, AdamW, OptimConfig, OptimError, ScheduleState};
use crate::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaeError {
    #[error("invalid MAE configuration: {0}")]
    Config(String),
    #[error("mask ratio {ratio} over {patches} patches leaves no masked or no visible patch")]
    DegenerateMask { ratio: f64, patches: usize },
    #[error("image {index} has shape {got:?}, expected {expected:?}")]
    ImageShape {
        index: usize,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("training diverged at step {0}: loss is not finite")]
    Diverged(usize),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, MaeError>;

/// An image together with its non-overlapping square patches.
#[derive(Debug, Clone)]
pub struct PatchGrid {
    pub image: Tensor,
    pub patch_size: usize,
    /// `[p×(patch_size²·c)]`, patches in row-major grid order.
    pub patches: Tensor,
}

impl PatchGrid {
    pub fn num_patches(&self) -> usize {
        self.patches.shape()[0]
    }

    pub fn patch_dim(&self) -> usize {
        self.patches.shape()[1]
    }
}

fn image_dims(image: &Tensor) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(MaeError::Config(format!(
            "images must be [h×w×c], got {:?}",
            image.shape()
        ))),
    }
}

fn check_divisible(h: usize, w: usize, patch: usize) -> Result<()> {
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(MaeError::Config(format!(
            "image {h}×{w} is not divisible into {patch}×{patch} patches"
        )));
    }
    Ok(())
}

/// Pixel offset of every patch-vector entry, for patch `(gy, gx)`.
fn patch_offsets(w: usize, c: usize, patch: usize, gy: usize, gx: usize) -> impl Iterator<Item = usize> {
    (0..patch).flat_map(move |py| {
        let row = (gy * patch + py) * w + gx * patch;
        (0..patch * c).map(move |j| row * c + j)
    })
}

pub fn patchify(image: &Tensor, patch_size: usize) -> Result<PatchGrid> {
    let (h, w, c) = image_dims(image)?;
    check_divisible(h, w, patch_size)?;
    let (gh, gw) = (h / patch_size, w / patch_size);
    let src = image.data();
    let mut out = Vec::with_capacity(h * w * c);
    for gy in 0..gh {
        for gx in 0..gw {
            out.extend(patch_offsets(w, c, patch_size, gy, gx).map(|o| src[o]));
        }
    }
    drop(src);
    Ok(PatchGrid {
        image: image.clone(),
        patch_size,
        patches: Tensor::new(out, &[gh * gw, patch_size * patch_size * c])?,
    })
}

/// Rebuild the image from `grid.patches`; `grid.image` supplies only the
/// target shape.
pub fn unpatchify(grid: &PatchGrid) -> Result<Tensor> {
    let (h, w, c) = image_dims(&grid.image)?;
    let p = grid.patch_size;
    check_divisible(h, w, p)?;
    let (gh, gw) = (h / p, w / p);
    if grid.patches.shape() != [gh * gw, p * p * c] {
        return Err(MaeError::Tensor(TensorError::Shape {
            op: "unpatchify",
            lhs: vec![gh * gw, p * p * c],
            rhs: grid.patches.shape().to_vec(),
        }));
    }
    let src = grid.patches.data();
    let mut out = vec![0.0; h * w * c];
    for gy in 0..gh {
        for gx in 0..gw {
            let base = (gy * gw + gx) * p * p * c;
            for (j, o) in patch_offsets(w, c, p, gy, gx).enumerate() {
                out[o] = src[base + j];
            }
        }
    }
    Ok(Tensor::new(out, &[h, w, c])?)
}

/// A partition of the patch indices into masked and visible sets, both
/// sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub masked: Vec<usize>,
    pub visible: Vec<usize>,
    pub ratio: f64,
}

impl MaskPlan {
    pub fn num_patches(&self) -> usize {
        self.masked.len() + self.visible.len()
    }
}

pub fn masked_count(patches: usize, ratio: f64) -> Result<usize> {
    let count = (ratio * patches as f64).round();
    if !(ratio > 0.0 && ratio < 1.0) || count < 1.0 || count >= patches as f64 {
        return Err(MaeError::DegenerateMask { ratio, patches });
    }
    Ok(count as usize)
}

pub fn sample_mask(patches: usize, ratio: f64, seed: u64) -> Result<MaskPlan> {
    sample_mask_with(patches, ratio, &mut Rng::seed_from_u64(seed))
}

pub fn sample_mask_with(patches: usize, ratio: f64, rng: &mut Rng) -> Result<MaskPlan> {
    let count = masked_count(patches, ratio)?;
    let mut is_masked = vec![false; patches];
    for i in index::sample(rng, patches, count) {
        is_masked[i] = true;
    }
    let (masked, visible): (Vec<usize>, Vec<usize>) = (0..patches).partition(|&i| is_masked[i]);
    Ok(MaskPlan {
        masked,
        visible,
        ratio,
    })
}

/// Mean squared error over the masked patches only, averaged over pixels.
pub fn reconstruction_loss(recon: &Tensor, target: &Tensor, plan: &MaskPlan) -> Result<Tensor> {
    if recon.shape() != target.shape() {
        return Err(MaeError::Tensor(TensorError::Shape {
            op: "reconstruction_loss",
            lhs: recon.shape().to_vec(),
            rhs: target.shape().to_vec(),
        }));
    }
    let r = recon.gather_rows(&plan.masked)?;
    let t = target.gather_rows(&plan.masked)?;
    Ok(r.sub(&t)?.square().mean())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaeConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub mask_ratio: f64,
    pub enc_width: usize,
    pub enc_depth: usize,
    pub enc_heads: usize,
    pub dec_width: usize,
    pub dec_depth: usize,
    pub dec_heads: usize,
    /// Feed-forward width as a multiple of the block width.
    pub mlp_ratio: usize,
    pub dropout: f64,
}

impl Default for MaeConfig {
    fn default() -> Self {
        MaeConfig {
            image_height: 32,
            image_width: 32,
            channels: 1,
            patch_size: 16,
            mask_ratio: 0.75,
            enc_width: 64,
            enc_depth: 4,
            enc_heads: 4,
            dec_width: 32,
            dec_depth: 2,
            dec_heads: 4,
            mlp_ratio: 4,
            dropout: 0.0,
        }
    }
}

impl MaeConfig {
    pub fn num_patches(&self) -> usize {
        (self.image_height / self.patch_size.max(1)) * (self.image_width / self.patch_size.max(1))
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.image_height, self.image_width, self.channels]
    }

    pub fn validate(&self) -> Result<()> {
        check_divisible(self.image_height, self.image_width, self.patch_size)?;
        if self.channels == 0 || self.image_height == 0 || self.image_width == 0 {
            return Err(MaeError::Config("image extents must be positive".into()));
        }
        for (name, width, heads, depth) in [
            ("encoder", self.enc_width, self.enc_heads, self.enc_depth),
            ("decoder", self.dec_width, self.dec_heads, self.dec_depth),
        ] {
            if heads == 0 || width == 0 || width % heads != 0 {
                return Err(MaeError::Config(format!(
                    "{name} width {width} is not divisible by {heads} heads"
                )));
            }
            if depth == 0 {
                return Err(MaeError::Config(format!("{name} depth must be >= 1")));
            }
        }
        if self.mlp_ratio == 0 {
            return Err(MaeError::Config("mlp_ratio must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(MaeError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        masked_count(self.num_patches(), self.mask_ratio)?;
        Ok(())
    }

    fn check_image(&self, index: usize, image: &Tensor) -> Result<()> {
        if image.shape() != self.image_shape() {
            return Err(MaeError::ImageShape {
                index,
                got: image.shape().to_vec(),
                expected: self.image_shape().to_vec(),
            });
        }
        Ok(())
    }
}

/// Patch embedding plus a transformer stack. Positions are added before
/// any patch is dropped, so visible tokens keep their grid position.
#[derive(Debug, Clone)]
pub struct MaeEncoder {
    pub patch_embed: Linear,
    pub stack: TransformerStack,
    pub width: usize,
}

impl MaeEncoder {
    pub fn new(cfg: &MaeConfig, rng: &mut Rng) -> Result<Self> {
        let w = cfg.enc_width;
        Ok(MaeEncoder {
            patch_embed: Linear::new(cfg.patch_dim(), w, rng),
            stack: TransformerStack::new(w, cfg.enc_depth, cfg.enc_heads, cfg.mlp_ratio * w, cfg.dropout, rng)?,
            width: w,
        })
    }

    /// `[p×patch_dim] → [v×width]`, over `visible` (all patches if `None`).
    pub fn forward(&self, patches: &Tensor, visible: Option<&[usize]>, rng: Option<&mut Rng>) -> Result<Tensor> {
        let p = patches.shape()[0];
        let tokens = self
            .patch_embed
            .forward(patches)?
            .add(&sinusoidal_positions(p, self.width)?)?;
        let tokens = match visible {
            Some(idx) => tokens.gather_rows(idx)?,
            None => tokens,
        };
        Ok(self.stack.forward(&tokens, None, rng)?)
    }
}

impl Module for MaeEncoder {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.patch_embed.collect_params(&join(prefix, "patch_embed"), out);
        self.stack.collect_params(&join(prefix, "blocks"), out);
    }
}

#[derive(Debug, Clone)]
pub struct MaeDecoder {
    pub embed: Linear,
    pub mask_token: Tensor,
    pub stack: TransformerStack,
    pub head: Linear,
    pub width: usize,
}

impl MaeDecoder {
    pub fn new(cfg: &MaeConfig, rng: &mut Rng) -> Result<Self> {
        let w = cfg.dec_width;
        let token = (0..w).map(|_| rng.random_range(-0.02..=0.02)).collect();
        Ok(MaeDecoder {
            embed: Linear::new(cfg.enc_width, w, rng),
            mask_token: Tensor::param(token, &[1, w])?,
            stack: TransformerStack::new(w, cfg.dec_depth, cfg.dec_heads, cfg.mlp_ratio * w, cfg.dropout, rng)?,
            head: Linear::new(w, cfg.patch_dim(), rng),
            width: w,
        })
    }

    /// Encoded visible tokens `[v×enc_width]` → reconstructed patches
    /// `[p×patch_dim]`, masked slots filled with the shared mask token.
    pub fn forward(&self, encoded: &Tensor, plan: &MaskPlan, rng: Option<&mut Rng>) -> Result<Tensor> {
        let x = self.embed.forward(encoded)?;
        let v = plan.visible.len();
        let table = Tensor::concat(&[x, self.mask_token.clone()], 0)?;
        let mut slot = vec![v; plan.num_patches()];
        for (k, &i) in plan.visible.iter().enumerate() {
            slot[i] = k;
        }
        let grid = table
            .gather_rows(&slot)?
            .add(&sinusoidal_positions(slot.len(), self.width)?)?;
        let h = self.stack.forward(&grid, None, rng)?;
        Ok(self.head.forward(&h)?)
    }
}

impl Module for MaeDecoder {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.embed.collect_params(&join(prefix, "embed"), out);
        out.push((join(prefix, "mask_token"), self.mask_token.clone()));
        self.stack.collect_params(&join(prefix, "blocks"), out);
        self.head.collect_params(&join(prefix, "head"), out);
    }
}

#[derive(Debug, Clone)]
pub struct MaeModel {
    pub config: MaeConfig,
    pub encoder: MaeEncoder,
    pub decoder: MaeDecoder,
}

impl MaeModel {
    pub fn new(config: MaeConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let encoder = MaeEncoder::new(&config, rng)?;
        let decoder = MaeDecoder::new(&config, rng)?;
        Ok(MaeModel {
            config,
            encoder,
            decoder,
        })
    }

    /// Reconstruct all patches of one image from its visible subset.
    pub fn reconstruct(&self, grid: &PatchGrid, plan: &MaskPlan, mut rng: Option<&mut Rng>) -> Result<Tensor> {
        let encoded = self.encoder.forward(&grid.patches, Some(&plan.visible), rng.as_deref_mut())?;
        self.decoder.forward(&encoded, plan, rng)
    }

    pub fn loss(&self, grid: &PatchGrid, plan: &MaskPlan, rng: Option<&mut Rng>) -> Result<Tensor> {
        let recon = self.reconstruct(grid, plan, rng)?;
        reconstruction_loss(&recon, &grid.patches, plan)
    }
}

impl Module for MaeModel {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.encoder.collect_params(&join(prefix, "encoder"), out);
        self.decoder.collect_params(&join(prefix, "decoder"), out);
    }
}

/// Encoder, mean pooling over patch tokens, and a fully connected head.
#[derive(Debug, Clone)]
pub struct MaeClassifier {
    pub config: MaeConfig,
    pub encoder: MaeEncoder,
    pub head: Mlp,
}

impl MaeClassifier {
    pub fn num_classes(&self) -> usize {
        self.head.output.out_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.width
    }

    /// Pooled representation `[1×width]` of one image.
    pub fn embed(&self, image: &Tensor, rng: Option<&mut Rng>) -> Result<Tensor> {
        let grid = patchify(image, self.config.patch_size)?;
        let tokens = self.encoder.forward(&grid.patches, None, rng)?;
        let width = self.encoder.width;
        Ok(tokens.mean_axis(0)?.reshape(&[1, width])?)
    }

    /// Logits `[batch×classes]`.
    pub fn forward(&self, images: &[Tensor], mut rng: Option<&mut Rng>) -> Result<Tensor> {
        let pooled = images
            .iter()
            .enumerate()
            .map(|(i, img)| {
                self.config.check_image(i, img)?;
                self.embed(img, rng.as_deref_mut())
            })
            .collect::<Result<Vec<_>>>()?;
        let pooled = Tensor::concat(&pooled, 0)?;
        Ok(self.head.forward(&pooled, rng)?)
    }
}

impl Module for MaeClassifier {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.encoder.collect_params(&join(prefix, "encoder"), out);
        self.head.collect_params(&join(prefix, "head"), out);
    }
}

/// Drop the decoder and attach a `width → hidden → num_classes` head. The
/// encoder tensors are moved, not copied.
pub fn finetune_head_swap(
    model: MaeModel,
    num_classes: usize,
    hidden: usize,
    dropout: f64,
    rng: &mut Rng,
) -> MaeClassifier {
    let width = model.encoder.width;
    MaeClassifier {
        config: model.config,
        encoder: model.encoder,
        head: Mlp::new(width, hidden, num_classes, dropout, rng),
    }
}

/// Eval-mode pooled encoder features, one row per frame.
pub fn extract_features(classifier: &MaeClassifier, frames: &[Tensor]) -> Result<Tensor> {
    if frames.is_empty() {
        return Err(MaeError::Config("no frames to encode".into()));
    }
    let rows = frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            classifier.config.check_image(i, f)?;
            Ok(classifier.embed(f, None)?.detach())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::concat(&rows, 0)?)
}

/// Optimisation settings shared by pre-training and fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaeTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl MaeTrainConfig {
    fn optim(&self) -> OptimConfig {
        OptimConfig {
            lr_peak: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            ..OptimConfig::default()
        }
    }

    /// Warmup spans one pass over `n` images.
    fn schedule(&self, n: usize) -> ScheduleState {
        let per_epoch = n.div_ceil(self.batch_size.max(1)).max(1);
        ScheduleState {
            step: 0,
            warmup_steps: per_epoch.min(self.steps),
            total_steps: self.steps,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(MaeError::Config("steps and batch_size must be >= 1".into()));
        }
        self.optim().validate().map_err(MaeError::Config)
    }
}

/// Cycles through a seeded permutation of `0..n`, reshuffling each pass.
struct BatchCursor {
    order: Vec<usize>,
    pos: usize,
}

impl BatchCursor {
    fn new(n: usize, rng: &mut Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        BatchCursor { order, pos: 0 }
    }

    fn next(&mut self, size: usize, rng: &mut Rng) -> Vec<usize> {
        let size = size.min(self.order.len());
        if self.pos + size > self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let batch = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        batch
    }
}

fn optimise(
    params: &[(String, Tensor)],
    opt: &mut AdamW,
    sched: &mut ScheduleState,
    cfg: &MaeTrainConfig,
) -> Result<f64> {
    if let Some(max) = cfg.grad_clip {
        clip_grad_norm(params, max);
    }
    sched.step += 1;
    let lr = lr_at(sched, cfg.lr);
    opt.step(params, lr)?;
    Ok(lr)
}

/// Masked-reconstruction training. Returns the batch loss of every step.
pub fn pretrain(model: &MaeModel, images: &[Tensor], cfg: &MaeTrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(MaeError::Config("no images to pre-train on".into()));
    }
    let grids = images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            model.config.check_image(i, img)?;
            patchify(img, model.config.patch_size)
        })
        .collect::<Result<Vec<_>>>()?;
    let params = model.named_parameters();
    let mut rng = Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(&cfg.optim());
    let mut sched = cfg.schedule(images.len());
    let mut cursor = BatchCursor::new(images.len(), &mut rng);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let batch = cursor.next(cfg.batch_size, &mut rng);
        let mut total: Option<Tensor> = None;
        for &i in &batch {
            let plan = sample_mask_with(model.config.num_patches(), model.config.mask_ratio, &mut rng)?;
            let l = model.loss(&grids[i], &plan, Some(&mut rng))?;
            total = Some(match total {
                Some(t) => t.add(&l)?,
                None => l,
            });
        }
        let loss = total.expect("batch is non-empty").scale(1.0 / batch.len() as f64);
        let value = loss.item();
        if !value.is_finite() {
            return Err(MaeError::Diverged(step));
        }
        params.iter().for_each(|(_, p)| p.zero_grad());
        loss.backward()?;
        let lr = optimise(&params, &mut opt, &mut sched, cfg)?;
        log::debug!("mae pretrain step {step} lr {lr:.3e} loss {value:.6}");
        losses.push(value);
    }
    Ok(losses)
}

/// Supervised fine-tuning of a classifier on labelled images. Labels are
/// class ids; `-1` marks an image to skip. Returns per-step losses.
pub fn finetune(
    classifier: &MaeClassifier,
    images: &[Tensor],
    labels: &[i64],
    cfg: &MaeTrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if images.len() != labels.len() {
        return Err(MaeError::Config(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let usable: Vec<usize> = (0..images.len()).filter(|&i| labels[i] >= 0).collect();
    if usable.is_empty() {
        return Err(MaeError::Config("no labelled images to fine-tune on".into()));
    }
    let params = classifier.named_parameters();
    let mut rng = Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(&cfg.optim());
    let mut sched = cfg.schedule(usable.len());
    let mut cursor = BatchCursor::new(usable.len(), &mut rng);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let batch: Vec<usize> = cursor.next(cfg.batch_size, &mut rng).into_iter().map(|k| usable[k]).collect();
        let imgs: Vec<Tensor> = batch.iter().map(|&i| images[i].clone()).collect();
        let ids: Vec<i64> = batch.iter().map(|&i| labels[i]).collect();
        let logits = classifier.forward(&imgs, Some(&mut rng))?;
        let loss = expr_loss(&logits, &ids, &vec![true; ids.len()])?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(MaeError::Diverged(step));
        }
        params.iter().for_each(|(_, p)| p.zero_grad());
        loss.backward()?;
        optimise(&params, &mut opt, &mut sched, cfg)?;
        losses.push(value);
    }
    Ok(losses)
}

/// Smooth grayscale/colour test images: a base level plus a few broad
/// Gaussian blobs, clamped to [0, 1].
pub fn synthetic_images(count: usize, height: usize, width: usize, channels: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let base: f64 = rng.random_range(0.2..0.6);
            let blobs: Vec<(f64, f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(0.0..height as f64),
                        rng.random_range(0.0..width as f64),
                        rng.random_range(0.2..0.45) * height.min(width) as f64,
                        rng.random_range(-0.4..0.5),
                    )
                })
                .collect();
            let tint: Vec<f64> = (0..channels).map(|_| rng.random_range(0.8..1.0)).collect();
            let mut data = Vec::with_capacity(height * width * channels);
            for y in 0..height {
                for x in 0..width {
                    let mut v = base;
                    for &(cy, cx, s, a) in &blobs {
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        v += a * (-d2 / (2.0 * s * s)).exp();
                    }
                    data.extend(tint.iter().map(|t| (v * t).clamp(0.0, 1.0)));
                }
            }
            Tensor::new(data, &[height, width, channels]).expect("positive image extents")
        })
        .collect()
}

/// Mean of the last `window` entries against the first; the fraction by
/// which a loss curve dropped.
pub fn smoothed_reduction(losses: &[f64], window: usize) -> f64 {
    let Some(&first) = losses.first() else {
        return 0.0;
    };
    let tail = &losses[losses.len().saturating_sub(window.max(1))..];
    let smoothed = tail.iter().sum::<f64>() / tail.len() as f64;
    1.0 - smoothed / first
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> Rng {
        Rng::seed_from_u64(3)
    }

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Tensor {
        let mut r = Rng::seed_from_u64(seed);
        Tensor::new((0..h * w * c).map(|_| r.random::<f64>()).collect(), &[h, w, c]).unwrap()
    }

    #[test]
    fn patch_counts() {
        let g = patchify(&Tensor::zeros(&[32, 32, 1]).unwrap(), 16).unwrap();
        assert_eq!(g.patches.shape(), &[4, 256]);
    }

    #[test]
    fn patchify_round_trip_is_exact() {
        let img = random_image(48, 32, 3, 1);
        let g = patchify(&img, 16).unwrap();
        assert_eq!(g.patches.shape(), &[6, 768]);
        assert_eq!(unpatchify(&g).unwrap().to_vec(), img.to_vec());
    }

    #[test]
    fn patch_vectors_follow_row_major_order() {
        // 4×4 image, 2×2 patches; pixel value = its flat index
        let img = Tensor::new((0..16).map(|i| i as f64).collect(), &[4, 4, 1]).unwrap();
        let g = patchify(&img, 2).unwrap();
        assert_eq!(&g.patches.to_vec()[..8], &[0.0, 1.0, 4.0, 5.0, 2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn constant_image_gives_constant_patches() {
        let g = patchify(&Tensor::full(&[32, 16, 2], 7.0).unwrap(), 16).unwrap();
        assert!(g.patches.to_vec().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn non_divisible_image_is_rejected() {
        assert!(matches!(patchify(&Tensor::zeros(&[30, 32, 1]).unwrap(), 16), Err(MaeError::Config(_))));
    }

    #[test]
    fn mask_counts_and_partition() {
        assert_eq!(sample_mask(4, 0.75, 0).unwrap().masked.len(), 3);
        let plan = sample_mask(196, 0.75, 9).unwrap();
        assert_eq!(plan.masked.len(), 147);
        let mut all: Vec<usize> = plan.masked.iter().chain(&plan.visible).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..196).collect::<Vec<_>>());
        assert_eq!(sample_mask(196, 0.75, 9).unwrap(), plan);
    }

    #[test]
    fn degenerate_masks_are_rejected() {
        for (p, r) in [(4, 0.1), (4, 0.95), (4, 0.0), (4, 1.0), (1, 0.5)] {
            assert!(matches!(sample_mask(p, r, 0), Err(MaeError::DegenerateMask { .. })));
        }
    }

    #[test]
    fn loss_is_zero_for_perfect_and_one_for_unit_offset() {
        let target = Tensor::new((0..12).map(|i| i as f64).collect(), &[4, 3]).unwrap();
        let plan = sample_mask(4, 0.75, 2).unwrap();
        assert_eq!(reconstruction_loss(&target, &target, &plan).unwrap().item(), 0.0);
        let shifted = target.add_scalar(1.0);
        assert_eq!(reconstruction_loss(&shifted, &target, &plan).unwrap().item(), 1.0);
    }

    #[test]
    fn loss_ignores_visible_patches() {
        let target = Tensor::zeros(&[4, 2]).unwrap();
        let plan = sample_mask(4, 0.5, 5).unwrap();
        let mut r = vec![0.0; 8];
        for &v in &plan.visible {
            r[2 * v] = 100.0;
        }
        let recon = Tensor::new(r, &[4, 2]).unwrap();
        assert_eq!(reconstruction_loss(&recon, &target, &plan).unwrap().item(), 0.0);
    }

    #[test]
    fn reconstruction_covers_every_patch_and_reaches_encoder() {
        let model = MaeModel::new(MaeConfig::default(), &mut rng()).unwrap();
        let grid = patchify(&random_image(32, 32, 1, 4), 16).unwrap();
        let plan = sample_mask(4, 0.75, 1).unwrap();
        let recon = model.reconstruct(&grid, &plan, None).unwrap();
        assert_eq!(recon.shape(), &[4, 256]);
        reconstruction_loss(&recon, &grid.patches, &plan).unwrap().backward().unwrap();
        let g = model.encoder.patch_embed.weight.grad().unwrap();
        assert!(g.iter().map(|v| v * v).sum::<f64>() > 0.0);
    }

    #[test]
    fn head_swap_keeps_encoder_and_outputs_eight_logits() {
        let model = MaeModel::new(MaeConfig::default(), &mut rng()).unwrap();
        let before: Vec<Vec<f64>> = model.encoder.parameters().iter().map(|p| p.to_vec()).collect();
        let clf = finetune_head_swap(model, 8, 32, 0.0, &mut rng());
        let after: Vec<Vec<f64>> = clf.encoder.parameters().iter().map(|p| p.to_vec()).collect();
        assert_eq!(before, after);
        let imgs = vec![Tensor::zeros(&[32, 32, 1]).unwrap(), random_image(32, 32, 1, 2)];
        let logits = clf.forward(&imgs, None).unwrap();
        assert_eq!(logits.shape(), &[2, 8]);
        assert!(logits.to_vec().iter().all(|v| v.is_finite()));
        assert!(clf.named_parameters().iter().all(|(n, _)| !n.starts_with("decoder")));
    }

    #[test]
    fn features_have_encoder_width_and_are_deterministic() {
        let clf = finetune_head_swap(MaeModel::new(MaeConfig::default(), &mut rng()).unwrap(), 8, 32, 0.0, &mut rng());
        let img = random_image(32, 32, 1, 8);
        let f = extract_features(&clf, &[img.clone(), img.clone(), random_image(32, 32, 1, 9)]).unwrap();
        assert_eq!(f.shape(), &[3, 64]);
        let d = f.to_vec();
        assert_eq!(d[..64], d[64..128]);
        assert!(!f.requires_grad());
    }

    #[test]
    fn wrong_image_shape_is_reported() {
        let clf = finetune_head_swap(MaeModel::new(MaeConfig::default(), &mut rng()).unwrap(), 8, 32, 0.0, &mut rng());
        let err = extract_features(&clf, &[Tensor::zeros(&[16, 16, 1]).unwrap()]).unwrap_err();
        assert!(matches!(err, MaeError::ImageShape { index: 0, .. }));
    }

    #[test]
    fn smoothed_reduction_of_a_halving_curve() {
        assert_eq!(smoothed_reduction(&[1.0, 0.8, 0.5, 0.5], 2), 0.5);
    }
}
