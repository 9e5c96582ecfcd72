//! Two-stage self-supervised training loop.
//!
//! Stage 1 fits the three geometry encoders alone against detected
//! landmarks. Stage 2 trains the rest of the pipeline under the combined
//! objective, with each iteration split into two sub-steps: first the
//! expression encoder and the tokenizer update while the synthesizer is
//! held fixed, then the synthesizer updates while every encoder is held
//! fixed. The identity and pose encoders stay frozen throughout stage 2,
//! enforced both by gradient isolation (their outputs are detached) and by
//! keeping their variables out of every optimizer.

use std::path::Path;
use std::sync::Arc;

use candle_core::Tensor;
use ndarray::{Array2, Array3};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use hyface_core::coords::unit_to_ndc;
use hyface_core::data::{read_landmarks, seeded_shuffle, SampleRecord};
use hyface_core::head::{HeadModelConfig, N_LANDMARKS};
use hyface_core::image::{load_png, resize_bilinear};
use hyface_core::losses::{
    total_loss, LossReport, LossTerms, LossWeights, PoseMasks, RegionMasks,
};

use crate::augment::{augment_expression, AugmentationSpec};
use crate::bridge::{
    array2_to_tensor, head_positions, images_to_batch, landmark_matrix_tensor, project_points,
    project_screen, rasterize_packed, tensor_to_array2,
};
use crate::checkpoint::TrainMeta;
use crate::geometry::GeometryEstimate;
use crate::losses;
use crate::model::{
    ModelBundle, PREFIX_E_PSI, PREFIX_GEOMETRY, PREFIX_SYNTHESIZER, PREFIX_TOKENIZER,
};
use crate::optim::ClippedAdam;
use crate::store::ParamStore;
use crate::{Error, Result};

/// Column header of the training-log CSV.
pub const LOG_HEADER: &str = "step,l_ec,l_lmk,l_tc,l_pdl,l_rg,l_ic,total";

/// Salt mixed into the run seed for the augmentation stream, so expression
/// augmentation and batch shuffling never share a generator.
const AUG_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Vertex grey used for the rasterized geometry frame.
const RASTER_GREY: f32 = 0.5;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Hyperparameters shared by both training stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Adam learning rate, shared by every trainable group.
    pub lr: f64,
    /// Samples per optimizer step (clamped to the dataset size).
    pub batch_size: usize,
    /// Optimizer steps in geometry-only stage 1.
    pub stage1_steps: usize,
    /// Full A/B iterations in stage 2.
    pub stage2_steps: usize,
    /// Augmented expression views per batch in the cycle terms.
    pub n_aug: usize,
    /// Seed for batch order and expression augmentation.
    pub seed: u64,
    /// Expression augmentation parameters for the cycle terms.
    pub augment: AugmentationSpec,
    /// Loss term weights.
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch_size: 16,
            stage1_steps: 2000,
            stage2_steps: 5000,
            n_aug: 2,
            seed: 0,
            augment: AugmentationSpec::default(),
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Validation(format!(
                "learning rate must be positive and finite, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch size must be at least 1".into()));
        }
        if self.n_aug == 0 {
            return Err(Error::Validation(
                "cycle losses need at least one augmented view per batch".into(),
            ));
        }
        self.augment.validate()?;
        self.weights.validate()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Data plumbing
// ---------------------------------------------------------------------------

/// One training example, fully decoded and sized for the model.
#[derive(Debug, Clone)]
pub struct TrainSample {
    /// `(h, w, 3)` image in `[0, 1]`.
    pub image: Array3<f32>,
    /// `(203, 2)` detected landmarks in unit image coordinates.
    pub landmarks_unit: Array2<f64>,
    /// Mouth/eye region masks at the image resolution.
    pub masks: RegionMasks,
}

/// Decode manifest records into training samples, resizing images to
/// `resolution` where needed. Region masks are built once per sample from
/// the detected landmarks.
pub fn load_samples(records: &[SampleRecord], resolution: usize) -> Result<Vec<TrainSample>> {
    if records.is_empty() {
        return Err(Error::Validation("training dataset is empty".into()));
    }
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let mut image = load_png(&rec.image)?;
        let (h, w, _) = image.dim();
        if h != resolution || w != resolution {
            image = resize_bilinear(&image, resolution, resolution);
        }
        let landmarks_unit = read_landmarks(&rec.landmarks)?;
        let masks = RegionMasks::from_landmarks(&landmarks_unit, resolution, resolution)?;
        out.push(TrainSample {
            image,
            landmarks_unit,
            masks,
        });
    }
    Ok(out)
}

/// A batch of samples lifted into tensors.
#[derive(Debug)]
pub struct Batch {
    /// `(b, 3, h, w)` images.
    pub images: Tensor,
    /// `(b, 203, 2)` detected landmarks in NDC.
    pub detected_ndc: Tensor,
    /// `(b, 1, h, w)` combined mouth+eye weight map.
    pub region_weights: Tensor,
}

/// Assemble the indexed samples into a [`Batch`].
pub fn make_batch(samples: &[TrainSample], idx: &[usize]) -> Result<Batch> {
    if idx.is_empty() {
        return Err(Error::Validation("batch index list is empty".into()));
    }
    let mut images = Vec::with_capacity(idx.len());
    let mut masks = Vec::with_capacity(idx.len());
    let mut ndc = Vec::with_capacity(idx.len() * N_LANDMARKS * 2);
    for &i in idx {
        let s = samples.get(i).ok_or_else(|| {
            Error::Validation(format!(
                "sample index {i} out of range ({} samples)",
                samples.len()
            ))
        })?;
        images.push(&s.image);
        masks.push(s.masks.clone());
        for row in s.landmarks_unit.rows() {
            let (x, y) = unit_to_ndc(row[0], row[1]);
            ndc.push(x as f32);
            ndc.push(y as f32);
        }
    }
    let images = images_to_batch(&images)?;
    let detected_ndc = Tensor::from_vec(ndc, (idx.len(), N_LANDMARKS, 2), images.device())?;
    let region_weights = losses::region_weights(&masks, images.dtype())?;
    Ok(Batch {
        images,
        detected_ndc,
        region_weights,
    })
}

/// Deterministic epoch-shuffled batch order.
///
/// Every epoch is an independent seeded shuffle of the full index range;
/// batches never straddle an epoch boundary — a tail shorter than the batch
/// size starts the next epoch instead.
#[derive(Debug)]
pub struct BatchSampler {
    n: usize,
    batch: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation(
                "cannot sample batches from an empty dataset".into(),
            ));
        }
        if batch_size == 0 {
            return Err(Error::Validation("batch size must be at least 1".into()));
        }
        let mut sampler = BatchSampler {
            n,
            batch: batch_size.min(n),
            seed,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        sampler.reshuffle();
        Ok(sampler)
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.n).collect();
        seeded_shuffle(&mut self.order, self.seed.wrapping_add(self.epoch));
        self.pos = 0;
    }

    /// Indices of the next batch.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.n {
            self.epoch += 1;
            self.reshuffle();
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }
}

// ---------------------------------------------------------------------------
// Shared render path
// ---------------------------------------------------------------------------

/// Rig-derived tensors shared by every render call: the triangle list and
/// the landmark embedding, lifted once instead of per step.
pub struct Renderer {
    rig: Arc<HeadModelConfig>,
    triangles: Arc<Vec<[usize; 3]>>,
    lm_matrix: Tensor,
    resolution: usize,
}

impl Renderer {
    pub fn new(bundle: &ModelBundle) -> Result<Self> {
        let rig = Arc::clone(&bundle.rig);
        let triangles = Arc::new(rig.triangles.clone());
        let lm_matrix = landmark_matrix_tensor(&rig, candle_core::DType::F32)?;
        Ok(Renderer {
            rig,
            triangles,
            lm_matrix,
            resolution: bundle.config.geometry.input_resolution,
        })
    }

    /// Blendshape vertex positions `(b, v, 3)` for an estimate.
    pub fn positions(&self, estimate: &GeometryEstimate) -> Result<Tensor> {
        head_positions(&self.rig, &estimate.flat()?)
    }

    /// Project the rig's landmark set into NDC, `(b, 203, 2)`.
    pub fn landmarks_ndc(&self, positions: &Tensor, cam: &Tensor) -> Result<Tensor> {
        let lms3 = self.lm_matrix.unsqueeze(0)?.broadcast_matmul(positions)?;
        project_points(&lms3, cam)
    }

    /// Rasterize positions into the mid-grey geometry frame `I_v` plus a
    /// detached `(b, 1, h, w)` coverage mask.
    pub fn render(&self, positions: &Tensor, cam: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, v, _) = positions.dims3()?;
        let screen = project_screen(positions, cam)?;
        let colors = Tensor::full(RASTER_GREY, (b, v, 3), positions.device())?;
        let packed = rasterize_packed(&screen, &colors, &self.triangles, self.resolution, self.resolution)?;
        let i_v = packed.narrow(1, 0, 3)?;
        let mask = packed.narrow(1, 3, 1)?.detach();
        Ok((i_v, mask))
    }

    /// `I_b = I ⊙ (1 − M)`: the input with the rasterized head blanked out.
    pub fn background(&self, images: &Tensor, mask: &Tensor) -> Result<Tensor> {
        Ok(images.broadcast_mul(&mask.affine(-1.0, 1.0)?)?)
    }
}

// ---------------------------------------------------------------------------
// Stage 1
// ---------------------------------------------------------------------------

/// A logged optimizer step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    /// 1-based step index within the stage.
    pub step: u64,
    pub report: LossReport,
}

/// Optimize all three geometry encoders against detected landmarks only;
/// every other loss term is held at zero by construction in this stage.
/// Returns the per-step loss records; persisting checkpoints and logs is
/// the caller's business.
pub fn train_stage1(
    bundle: &ModelBundle,
    store: &ParamStore,
    samples: &[TrainSample],
    config: &TrainConfig,
) -> Result<Vec<StepRecord>> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Validation(
            "stage-1 training needs a non-empty dataset".into(),
        ));
    }
    let renderer = Renderer::new(bundle)?;
    let mut opt = ClippedAdam::new(store.vars_with_prefix(PREFIX_GEOMETRY), config.lr)?;
    let mut sampler = BatchSampler::new(samples.len(), config.batch_size, config.seed)?;
    let mut records = Vec::with_capacity(config.stage1_steps);
    for step in 0..config.stage1_steps {
        let batch = make_batch(samples, &sampler.next_batch())?;
        let estimate = bundle.encoders.encode(&batch.images)?;
        let positions = renderer.positions(&estimate)?;
        let projected = renderer.landmarks_ndc(&positions, &estimate.cam)?;
        let l_lmk = losses::landmark_loss(&batch.detected_ndc, &projected)?;
        opt.step(&l_lmk.backward()?)?;
        let terms = LossTerms {
            ec: Some(0.0),
            lmk: Some(losses::scalar_f64(&l_lmk)?),
            tc: Some(0.0),
            pdl: Some(0.0),
            rg: Some(0.0),
            ic: Some(0.0),
        };
        records.push(StepRecord {
            step: step as u64 + 1,
            report: total_loss(&terms, &config.weights)?,
        });
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Stage 2
// ---------------------------------------------------------------------------

/// Alternating stage-2 trainer.
///
/// Two optimizers own disjoint variable groups: sub-step A steps the
/// expression encoder plus the tokenizer, sub-step B steps the synthesizer.
/// Both sub-steps evaluate the full objective, so within one iteration the
/// two groups see the same data but never move together.
pub struct Stage2Trainer {
    bundle: ModelBundle,
    store: ParamStore,
    config: TrainConfig,
    renderer: Renderer,
    opt_encoders: ClippedAdam,
    opt_synth: ClippedAdam,
    pose_masks: PoseMasks,
    rng: ChaCha12Rng,
    steps_taken: u64,
    start_step: u64,
}

impl Stage2Trainer {
    /// `meta` must come from a stage-1 (or later) checkpoint; an untrained
    /// model is rejected because the cycle terms assume a geometry fit.
    pub fn new(
        bundle: ModelBundle,
        store: ParamStore,
        config: TrainConfig,
        meta: &TrainMeta,
    ) -> Result<Self> {
        config.validate()?;
        if meta.stage < 1 {
            return Err(Error::State(
                "stage-2 training requires a stage-1 checkpoint; this model is untrained".into(),
            ));
        }
        let renderer = Renderer::new(&bundle)?;
        let mut enc_vars = store.vars_with_prefix(PREFIX_E_PSI);
        enc_vars.extend(store.vars_with_prefix(PREFIX_TOKENIZER));
        let opt_encoders = ClippedAdam::new(enc_vars, config.lr)?;
        let opt_synth = ClippedAdam::new(store.vars_with_prefix(PREFIX_SYNTHESIZER), config.lr)?;
        let rng = ChaCha12Rng::seed_from_u64(config.seed ^ AUG_SEED_SALT);
        Ok(Stage2Trainer {
            bundle,
            store,
            config,
            renderer,
            opt_encoders,
            opt_synth,
            pose_masks: PoseMasks::builtin(),
            rng,
            steps_taken: 0,
            start_step: meta.step,
        })
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Full iterations completed by this trainer.
    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    /// Metadata describing the current state, for checkpointing.
    pub fn meta(&self) -> TrainMeta {
        TrainMeta {
            seed: self.store.seed(),
            step: self.start_step + self.steps_taken,
            stage: 2,
        }
    }

    /// Release the model and parameters, e.g. to save a checkpoint.
    pub fn into_parts(self) -> (ModelBundle, ParamStore) {
        (self.bundle, self.store)
    }

    /// Build the full objective on `batch`: the total-loss tensor plus its
    /// scalar report.
    fn objective(&mut self, batch: &Batch) -> Result<(Tensor, LossReport)> {
        let estimate = self.bundle.encoders.encode(&batch.images)?.detach_frozen_groups();
        let token = self.bundle.tokenizer.tokenize(&batch.images)?;

        // Geometry terms on the unaugmented estimate.
        let positions = self.renderer.positions(&estimate)?;
        let projected = self.renderer.landmarks_ndc(&positions, &estimate.cam)?;
        let l_lmk = losses::landmark_loss(&batch.detected_ndc, &projected)?;
        let yaws = estimate.yaw_angles()?;
        let l_pdl = losses::pdl_loss(&batch.detected_ndc, &projected, &yaws, &self.pose_masks)?;

        // Reconstruction of the observed frame.
        let (i_v, mask) = self.renderer.render(&positions, &estimate.cam)?;
        let i_b = self.renderer.background(&batch.images, &mask)?;
        let i_hat = self.bundle.synthesizer.synthesize(&i_v, &i_b, &token)?;
        let l_ic = losses::image_loss(&batch.images, &i_hat, &self.config.weights)?;
        let l_rg = losses::region_loss(&batch.images, &i_hat, &batch.region_weights)?;

        // Cycle terms over augmented expressions. The augmented groups
        // enter as constants: cycle gradients flow through re-encoding the
        // synthesized views, never through the targets themselves.
        let psi_arr = tensor_to_array2(&estimate.psi_group()?.detach())?;
        let n_expr = self.bundle.config.geometry.n_expr;
        let mut views = Vec::with_capacity(self.config.n_aug);
        let mut targets = Vec::with_capacity(self.config.n_aug);
        for _ in 0..self.config.n_aug {
            let aug = augment_expression(&psi_arr, n_expr, &self.config.augment, &mut self.rng)?;
            let target = array2_to_tensor(&aug, batch.images.dtype())?;
            let est_aug = estimate.with_psi_group(&target)?;
            let pos_aug = self.renderer.positions(&est_aug)?;
            let (i_v_aug, _) = self.renderer.render(&pos_aug, &est_aug.cam)?;
            views.push(self.bundle.synthesizer.synthesize(&i_v_aug, &i_b, &token)?);
            targets.push(target);
        }
        let l_tc = losses::token_consistency_loss(&self.bundle.tokenizer, &views, &token)?;
        let l_ec = losses::expression_consistency_loss(&self.bundle.encoders, &views, &targets)?;

        let w = &self.config.weights;
        let mut total = l_ec.affine(w.lambda_ec, 0.0)?;
        for (term, lambda) in [
            (&l_lmk, w.lambda_lmk),
            (&l_tc, w.lambda_tc),
            (&l_pdl, w.lambda_pdl),
            (&l_rg, w.lambda_rg),
            (&l_ic, w.lambda_ic),
        ] {
            total = (total + term.affine(lambda, 0.0)?)?;
        }
        let terms = LossTerms {
            ec: Some(losses::scalar_f64(&l_ec)?),
            lmk: Some(losses::scalar_f64(&l_lmk)?),
            tc: Some(losses::scalar_f64(&l_tc)?),
            pdl: Some(losses::scalar_f64(&l_pdl)?),
            rg: Some(losses::scalar_f64(&l_rg)?),
            ic: Some(losses::scalar_f64(&l_ic)?),
        };
        Ok((total, total_loss(&terms, w)?))
    }

    /// Sub-step A: update the expression encoder and the tokenizer; the
    /// synthesizer and the frozen encoders do not move.
    pub fn sub_step_a(&mut self, batch: &Batch) -> Result<LossReport> {
        let (total, report) = self.objective(batch)?;
        self.opt_encoders.step(&total.backward()?)?;
        Ok(report)
    }

    /// Sub-step B: update the synthesizer only.
    pub fn sub_step_b(&mut self, batch: &Batch) -> Result<LossReport> {
        let (total, report) = self.objective(batch)?;
        self.opt_synth.step(&total.backward()?)?;
        Ok(report)
    }

    /// One full iteration: sub-step A then sub-step B on the same batch.
    /// Returns the report from sub-step B, the later of the two.
    pub fn step(&mut self, batch: &Batch) -> Result<LossReport> {
        self.sub_step_a(batch)?;
        let report = self.sub_step_b(batch)?;
        self.steps_taken += 1;
        Ok(report)
    }

    /// Run `steps` full iterations over `samples`.
    pub fn run(&mut self, samples: &[TrainSample], steps: usize) -> Result<Vec<StepRecord>> {
        if samples.is_empty() {
            return Err(Error::Validation(
                "stage-2 training needs a non-empty dataset".into(),
            ));
        }
        let mut sampler = BatchSampler::new(samples.len(), self.config.batch_size, self.config.seed)?;
        let mut records = Vec::with_capacity(steps);
        for _ in 0..steps {
            let batch = make_batch(samples, &sampler.next_batch())?;
            let report = self.step(&batch)?;
            records.push(StepRecord {
                step: self.steps_taken,
                report,
            });
        }
        Ok(records)
    }
}

// ---------------------------------------------------------------------------
// Training log
// ---------------------------------------------------------------------------

/// Write step records as the training-log CSV.
pub fn write_training_log(path: impl AsRef<Path>, records: &[StepRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from(LOG_HEADER);
    text.push('\n');
    for r in records {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step,
            r.report.ec,
            r.report.lmk,
            r.report.tc,
            r.report.pdl,
            r.report.rg,
            r.report.ic,
            r.report.total
        ));
    }
    std::fs::write(path, text).map_err(|e| hyface_core::Error::io(path, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
