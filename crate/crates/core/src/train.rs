//! Spatially averaged adversarial losses, the Adam optimizer, and the
//! alternating training loop with CSV logging and periodic checkpoints.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{ArrayD, ArrayViewD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{AdamSnapshot, Checkpoint, RngSnapshot, WordPos};
use crate::data::{PatchSampler, TextureImage, ValueSpace};
use crate::error::{Error, Result};
use crate::model::{NetworkRole, NetworkSpec};
use crate::nn::{Gradients, Mode, Network, NoiseGrid, Tensor4};

/// Probabilities are clamped to `[EPS, 1-EPS]` before any logarithm so early
/// saturated discriminators cannot produce infinite losses.
pub const PROB_EPS: f64 = 1e-7;
const ADAM_EPS: f64 = 1e-8;

/// Hyper-parameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub minibatches_per_epoch: usize,
    pub d_steps_per_g_step: usize,
    pub seed: u64,
    /// Checkpoint cadence, in epochs.
    pub checkpoint_every: usize,
    /// Sample-sheet cadence, in epochs.
    pub sample_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            beta1: 0.5,
            beta2: 0.999,
            l2_lambda: 1e-5,
            batch_size: 8,
            epochs: 100,
            minibatches_per_epoch: 100,
            d_steps_per_g_step: 1,
            seed: 42,
            checkpoint_every: 10,
            sample_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::invalid_param(name, "must be > 0"));
            }
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::invalid_param("beta1/beta2", "must be < 1"));
        }
        if self.l2_lambda < 0.0 {
            return Err(Error::invalid_param("l2_lambda", "must be >= 0"));
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("minibatches_per_epoch", self.minibatches_per_epoch),
            ("d_steps_per_g_step", self.d_steps_per_g_step),
            ("checkpoint_every", self.checkpoint_every),
            ("sample_every", self.sample_every),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid_param(name, "must be >= 1"));
            }
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: u64,
    pub epoch: u64,
    pub loss_g: f64,
    pub loss_d: f64,
    pub mean_d_real: f64,
    pub mean_d_fake: f64,
    pub wall_time_s: f64,
}

pub const LOG_CSV_HEADER: &str = "step,epoch,loss_g,loss_d,mean_d_real,mean_d_fake,wall_time_s";

impl TrainLogRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.epoch,
            self.loss_g,
            self.loss_d,
            self.mean_d_real,
            self.mean_d_fake,
            self.wall_time_s
        )
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Discriminator loss over probability maps, averaged over batch and spatial
/// positions: `-(mean log D(x) + mean log(1 - D(G(z))))`.
pub fn loss_discriminator(d_real: &Tensor4, d_fake: &Tensor4) -> f64 {
    let real_term = d_real.mapv(|p| clamp_prob(p).ln()).mean().unwrap();
    let fake_term = d_fake.mapv(|p| (1.0 - clamp_prob(p)).ln()).mean().unwrap();
    -(real_term + fake_term)
}

/// Non-saturating generator loss over a probability map:
/// `-mean log D(G(z))`.
pub fn loss_generator(d_fake: &Tensor4) -> f64 {
    -d_fake.mapv(|p| clamp_prob(p).ln()).mean().unwrap()
}

/// Gradients of [`loss_discriminator`] with respect to both maps. Entries
/// pushed outside the clamp range carry zero gradient.
pub fn loss_discriminator_grads(d_real: &Tensor4, d_fake: &Tensor4) -> (Tensor4, Tensor4) {
    let m_real = d_real.len() as f64;
    let m_fake = d_fake.len() as f64;
    let grad_real = d_real.mapv(|p| {
        if p > PROB_EPS && p < 1.0 - PROB_EPS {
            -1.0 / (m_real * p)
        } else {
            0.0
        }
    });
    let grad_fake = d_fake.mapv(|p| {
        if p > PROB_EPS && p < 1.0 - PROB_EPS {
            1.0 / (m_fake * (1.0 - p))
        } else {
            0.0
        }
    });
    (grad_real, grad_fake)
}

/// Gradient of [`loss_generator`] with respect to the map.
pub fn loss_generator_grad(d_fake: &Tensor4) -> Tensor4 {
    let m = d_fake.len() as f64;
    d_fake.mapv(|p| {
        if p > PROB_EPS && p < 1.0 - PROB_EPS {
            -1.0 / (m * p)
        } else {
            0.0
        }
    })
}

/// `lambda * sum(w^2)` over the given kernels. Biases and normalization
/// affines are deliberately not passed in by the trainer.
pub fn l2_penalty<'a, I>(kernels: I, lambda: f64) -> f64
where
    I: IntoIterator<Item = ArrayViewD<'a, f64>>,
{
    lambda
        * kernels
            .into_iter()
            .map(|k| k.iter().map(|w| w * w).sum::<f64>())
            .sum::<f64>()
}

/// Adam state for one network: first/second moment per trainable tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    t: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

/// Names of the trainable tensors of a network, aligned with the slot order
/// used by [`AdamState`].
fn trainable_names(net: &Network) -> Vec<String> {
    let mut names = Vec::new();
    for (i, layer) in net.layers.iter().enumerate() {
        names.push(format!("layer{i}.kernel"));
        names.push(format!("layer{i}.bias"));
        if layer.norm.is_some() {
            names.push(format!("layer{i}.norm.gamma"));
            names.push(format!("layer{i}.norm.beta"));
        }
    }
    names
}

impl AdamState {
    pub fn new(net: &Network) -> Self {
        let mut m = Vec::new();
        for layer in &net.layers {
            m.push(ArrayD::zeros(layer.weight.shape()));
            m.push(ArrayD::zeros(layer.bias.shape()));
            if let Some(norm) = &layer.norm {
                m.push(ArrayD::zeros(norm.gamma.shape()));
                m.push(ArrayD::zeros(norm.beta.shape()));
            }
        }
        AdamState {
            t: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One Adam update over every trainable tensor of `net`.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients, lr: f64, beta1: f64, beta2: f64) {
        self.t += 1;
        let t = self.t;
        let mut slot = 0usize;
        for (layer, lg) in net.layers.iter_mut().zip(&grads.layers) {
            let norm_grads = lg.gamma.as_ref().zip(lg.beta.as_ref());
            adam_update(
                layer.weight.as_slice_mut().unwrap(),
                lg.weight.as_slice().unwrap(),
                &mut self.m[slot],
                &mut self.v[slot],
                t,
                lr,
                beta1,
                beta2,
            );
            slot += 1;
            adam_update(
                layer.bias.as_slice_mut().unwrap(),
                lg.bias.as_slice().unwrap(),
                &mut self.m[slot],
                &mut self.v[slot],
                t,
                lr,
                beta1,
                beta2,
            );
            slot += 1;
            if let (Some(norm), Some((dgamma, dbeta))) = (layer.norm.as_mut(), norm_grads) {
                adam_update(
                    norm.gamma.as_slice_mut().unwrap(),
                    dgamma.as_slice().unwrap(),
                    &mut self.m[slot],
                    &mut self.v[slot],
                    t,
                    lr,
                    beta1,
                    beta2,
                );
                slot += 1;
                adam_update(
                    norm.beta.as_slice_mut().unwrap(),
                    dbeta.as_slice().unwrap(),
                    &mut self.m[slot],
                    &mut self.v[slot],
                    t,
                    lr,
                    beta1,
                    beta2,
                );
                slot += 1;
            }
        }
    }

    fn snapshot(&self, net: &Network) -> AdamSnapshot {
        let names = trainable_names(net);
        let mut tensors = Vec::with_capacity(names.len() * 2);
        for (i, name) in names.iter().enumerate() {
            tensors.push((format!("{name}.m"), self.m[i].clone()));
            tensors.push((format!("{name}.v"), self.v[i].clone()));
        }
        AdamSnapshot {
            t: self.t,
            tensors,
        }
    }

    fn from_snapshot(snap: &AdamSnapshot, net: &Network) -> Result<Self> {
        let names = trainable_names(net);
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for name in &names {
            let find = |suffix: &str| -> Result<ArrayD<f64>> {
                let full = format!("{name}.{suffix}");
                snap.tensors
                    .iter()
                    .find(|(n, _)| *n == full)
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| {
                        Error::CheckpointCorrupt(format!("missing optimizer tensor {full}"))
                    })
            };
            m.push(find("m")?);
            v.push(find("v")?);
        }
        Ok(AdamState { t: snap.t, m, v })
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut ArrayD<f64>,
    v: &mut ArrayD<f64>,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
) {
    let m = m.as_slice_mut().unwrap();
    let v = v.as_slice_mut().unwrap();
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Where the trainer writes its artifacts, if anywhere.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Directory for `log.csv`, periodic checkpoints and sample sheets.
    /// With `None` the run is file-free and everything stays in memory.
    pub out_dir: Option<PathBuf>,
    /// Images per periodic sample sheet.
    pub sample_count: usize,
}

impl TrainOptions {
    pub fn in_memory() -> Self {
        TrainOptions {
            out_dir: None,
            sample_count: 4,
        }
    }

    pub fn into_dir(dir: impl Into<PathBuf>) -> Self {
        TrainOptions {
            out_dir: Some(dir.into()),
            sample_count: 4,
        }
    }
}

/// Outcome of a training run. `abort` carries the diagnostic when the run was
/// stopped by a non-finite loss; `checkpoint` is then the last state that
/// still produced finite losses.
#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<TrainLogRecord>,
    pub completed: bool,
    pub abort: Option<String>,
}

/// Alternating-update GAN trainer.
///
/// Per iteration: `d_steps_per_g_step` discriminator updates (each on a fresh
/// real batch and a fresh fake batch), then one generator update on a fresh
/// noise batch, all with Adam and the configured L2 pull on the kernels.
pub struct Trainer {
    config: TrainConfig,
    generator: Network,
    discriminator: Network,
    adam_g: AdamState,
    adam_d: AdamState,
    noise_rng: ChaCha8Rng,
    step: u64,
    resume_patch_pos: Option<u128>,
}

/// Dedicated RNG stream ids derived from the run seed.
const NOISE_STREAM: u64 = 1;
const SAMPLE_SHEET_STREAM: u64 = 0x5a5a;

impl Trainer {
    pub fn new(config: TrainConfig, g_spec: &NetworkSpec, d_spec: &NetworkSpec) -> Result<Self> {
        config.validate()?;
        if g_spec.role != NetworkRole::Generator {
            return Err(Error::invalid_param("generator spec", "wrong role"));
        }
        if d_spec.role != NetworkRole::Discriminator {
            return Err(Error::invalid_param("discriminator spec", "wrong role"));
        }
        let generator = crate::nn::init_weights(g_spec, config.seed)?;
        let discriminator = crate::nn::init_weights(d_spec, config.seed.wrapping_add(1))?;
        let adam_g = AdamState::new(&generator);
        let adam_d = AdamState::new(&discriminator);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
        noise_rng.set_stream(NOISE_STREAM);
        Ok(Trainer {
            config,
            generator,
            discriminator,
            adam_g,
            adam_d,
            noise_rng,
            step: 0,
            resume_patch_pos: None,
        })
    }

    /// Restores a trainer mid-run; pass the sampler through
    /// [`Trainer::restore_sampler`] to resume the data stream as well.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = ck
            .train_config
            .clone()
            .ok_or_else(|| Error::CheckpointCorrupt("checkpoint has no train config".into()))?;
        config.validate()?;
        let generator = ck.build_generator()?;
        let discriminator = ck.build_discriminator()?;
        let adam_g = match &ck.opt_generator {
            Some(s) => AdamState::from_snapshot(s, &generator)?,
            None => AdamState::new(&generator),
        };
        let adam_d = match &ck.opt_discriminator {
            Some(s) => AdamState::from_snapshot(s, &discriminator)?,
            None => AdamState::new(&discriminator),
        };
        let rng = ck
            .rng
            .ok_or_else(|| Error::CheckpointCorrupt("checkpoint has no rng state".into()))?;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(rng.seed);
        noise_rng.set_stream(NOISE_STREAM);
        noise_rng.set_word_pos(rng.noise_word_pos.into());
        Ok(Trainer {
            config,
            generator,
            discriminator,
            adam_g,
            adam_d,
            noise_rng,
            step: ck.step,
            resume_patch_pos: Some(rng.patch_word_pos.into()),
        })
    }

    /// Rewinds a freshly constructed sampler to the checkpointed position.
    pub fn restore_sampler(&self, sampler: &mut PatchSampler) {
        if let Some(pos) = self.resume_patch_pos {
            sampler.set_rng_word_pos(pos);
        }
    }

    pub fn generator(&self) -> &Network {
        &self.generator
    }

    pub fn discriminator(&self) -> &Network {
        &self.discriminator
    }

    pub fn completed_steps(&self) -> u64 {
        self.step
    }

    fn noise_batch(&mut self, batch: usize, h: usize, w: usize) -> Tensor4 {
        let c = self.generator.spec().input_channels;
        Tensor4::from_shape_simple_fn((batch, c, h, w), || self.noise_rng.random_range(-1.0..=1.0))
    }

    /// Packages the complete training state.
    pub fn checkpoint(&self, sampler: &PatchSampler) -> Checkpoint {
        Checkpoint {
            generator_spec: self.generator.spec().clone(),
            discriminator_spec: self.discriminator.spec().clone(),
            generator_tensors: self.generator.named_tensors(),
            discriminator_tensors: self.discriminator.named_tensors(),
            opt_generator: Some(self.adam_g.snapshot(&self.generator)),
            opt_discriminator: Some(self.adam_d.snapshot(&self.discriminator)),
            step: self.step,
            epoch: self.step / self.config.minibatches_per_epoch as u64,
            rng: Some(RngSnapshot {
                seed: self.config.seed,
                noise_word_pos: WordPos::from(self.noise_rng.get_word_pos()),
                patch_word_pos: WordPos::from(sampler.rng_word_pos()),
            }),
            train_config: Some(self.config.clone()),
            config_text: String::new(),
        }
    }

    /// Runs the remaining iterations of the schedule.
    pub fn run(&mut self, sampler: &mut PatchSampler, opts: &TrainOptions) -> Result<TrainOutcome> {
        let patch = sampler.patch_size();
        let g_scale = self.generator.spec().spatial_scale();
        let d_scale = self.discriminator.spec().spatial_scale();
        if patch % g_scale != 0 || patch % d_scale != 0 {
            return Err(Error::NotDivisible {
                height: patch,
                width: patch,
                divisor: g_scale.max(d_scale),
            });
        }
        let (noise_h, noise_w) = (patch / g_scale, patch / g_scale);

        if let Some(dir) = &opts.out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut log_file = match &opts.out_dir {
            Some(dir) => Some(open_log(dir, self.step)?),
            None => None,
        };

        let total_steps = (self.config.epochs * self.config.minibatches_per_epoch) as u64;
        let minibatches = self.config.minibatches_per_epoch as u64;
        let mut log = Vec::new();
        let mut last_good: Option<Checkpoint> = None;
        let started = Instant::now();

        while self.step < total_steps {
            let entering = self.checkpoint(sampler);

            // --- discriminator updates ---
            let mut loss_d = f64::NAN;
            let mut mean_d_real = f64::NAN;
            let mut mean_d_fake = f64::NAN;
            for _ in 0..self.config.d_steps_per_g_step {
                let real = sampler.sample_batch(self.config.batch_size);
                let z = self.noise_batch(self.config.batch_size, noise_h, noise_w);
                let fake = self.generator.forward(&z, Mode::Train)?.output;

                let real_pass = self.discriminator.forward(&real, Mode::Train)?;
                let fake_pass = self.discriminator.forward(&fake, Mode::Train)?;
                self.discriminator.update_running_stats(&real_pass);
                self.discriminator.update_running_stats(&fake_pass);

                loss_d = loss_discriminator(&real_pass.output, &fake_pass.output)
                    + self.config.l2_lambda * self.discriminator.kernel_sq_sum();
                mean_d_real = real_pass.output.mean().unwrap();
                mean_d_fake = fake_pass.output.mean().unwrap();

                let (grad_real_map, grad_fake_map) =
                    loss_discriminator_grads(&real_pass.output, &fake_pass.output);
                let (_, mut grads) = self.discriminator.backward(&real_pass, &grad_real_map);
                let (_, fake_grads) = self.discriminator.backward(&fake_pass, &grad_fake_map);
                accumulate(&mut grads, &fake_grads);
                add_l2_pull(&mut grads, &self.discriminator, self.config.l2_lambda);
                self.adam_d.step(
                    &mut self.discriminator,
                    &grads,
                    self.config.learning_rate,
                    self.config.beta1,
                    self.config.beta2,
                );
            }

            // --- generator update ---
            let z = self.noise_batch(self.config.batch_size, noise_h, noise_w);
            let g_pass = self.generator.forward(&z, Mode::Train)?;
            self.generator.update_running_stats(&g_pass);
            let d_pass = self.discriminator.forward(&g_pass.output, Mode::Train)?;
            let loss_g = loss_generator(&d_pass.output)
                + self.config.l2_lambda * self.generator.kernel_sq_sum();

            let grad_map = loss_generator_grad(&d_pass.output);
            let (grad_fake_images, _) = self.discriminator.backward(&d_pass, &grad_map);
            let (_, mut g_grads) = self.generator.backward(&g_pass, &grad_fake_images);
            add_l2_pull(&mut g_grads, &self.generator, self.config.l2_lambda);
            self.adam_g.step(
                &mut self.generator,
                &g_grads,
                self.config.learning_rate,
                self.config.beta1,
                self.config.beta2,
            );

            // --- bookkeeping ---
            if !loss_d.is_finite() || !loss_g.is_finite() {
                let checkpoint = last_good.unwrap_or(entering);
                let reason = format!(
                    "non-finite loss at step {} (loss_g={loss_g}, loss_d={loss_d})",
                    self.step
                );
                if let Some(dir) = &opts.out_dir {
                    checkpoint.save(dir.join("checkpoint_lastgood.bin"))?;
                }
                return Ok(TrainOutcome {
                    checkpoint,
                    log,
                    completed: false,
                    abort: Some(reason),
                });
            }
            last_good = Some(entering);

            self.step += 1;
            let record = TrainLogRecord {
                step: self.step,
                epoch: (self.step - 1) / minibatches,
                loss_g,
                loss_d,
                mean_d_real,
                mean_d_fake,
                wall_time_s: started.elapsed().as_secs_f64(),
            };
            if let Some(f) = log_file.as_mut() {
                writeln!(f, "{}", record.to_csv_row())
                    .map_err(|e| Error::io("log.csv", e))?;
            }
            log.push(record);

            // --- epoch-boundary artifacts ---
            if self.step % minibatches == 0 {
                let epoch = (self.step / minibatches) as usize;
                if let Some(dir) = &opts.out_dir {
                    if epoch % self.config.checkpoint_every == 0 {
                        self.checkpoint(sampler)
                            .save(dir.join(format!("checkpoint_epoch{epoch:04}.bin")))?;
                    }
                    if epoch % self.config.sample_every == 0 {
                        self.write_sample_sheet(
                            dir,
                            epoch,
                            opts.sample_count.max(1),
                            noise_h,
                            noise_w,
                        )?;
                    }
                }
            }
        }

        if let Some(f) = log_file.as_mut() {
            f.flush().map_err(|e| Error::io("log.csv", e))?;
        }
        Ok(TrainOutcome {
            checkpoint: self.checkpoint(sampler),
            log,
            completed: true,
            abort: None,
        })
    }

    fn write_sample_sheet(
        &self,
        dir: &Path,
        epoch: usize,
        count: usize,
        noise_h: usize,
        noise_w: usize,
    ) -> Result<()> {
        // sheet noise comes from its own stream so the schedule cannot
        // perturb the training randomness
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(epoch as u64));
        rng.set_stream(SAMPLE_SHEET_STREAM);
        let images: Result<Vec<TextureImage>> = (0..count)
            .map(|_| {
                let c = self.generator.spec().input_channels;
                let z = NoiseGrid::uniform(c, noise_h, noise_w, &mut rng);
                crate::nn::generator_forward(&self.generator, &z)
            })
            .collect();
        let sheet = tile_images(&images?, 4);
        sheet.save_png(dir.join(format!("samples_epoch{epoch:04}.png")))
    }
}

fn open_log(dir: &Path, resumed_step: u64) -> Result<BufWriter<File>> {
    let path = dir.join("log.csv");
    let fresh = resumed_step == 0 || !path.exists();
    let file = if fresh {
        let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{LOG_CSV_HEADER}").map_err(|e| Error::io(&path, e))?;
        f
    } else {
        File::options()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?
    };
    Ok(BufWriter::new(file))
}

fn accumulate(into: &mut Gradients, other: &Gradients) {
    for (a, b) in into.layers.iter_mut().zip(&other.layers) {
        a.weight += &b.weight;
        a.bias += &b.bias;
        if let (Some(x), Some(y)) = (a.gamma.as_mut(), b.gamma.as_ref()) {
            *x += y;
        }
        if let (Some(x), Some(y)) = (a.beta.as_mut(), b.beta.as_ref()) {
            *x += y;
        }
    }
}

/// Adds the gradient of `lambda * sum(w^2)` (that is `2*lambda*w`) to the
/// kernel gradients; biases and norm affines are exempt.
fn add_l2_pull(grads: &mut Gradients, net: &Network, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    for (lg, layer) in grads.layers.iter_mut().zip(&net.layers) {
        lg.weight.zip_mut_with(&layer.weight, |g, &w| *g += 2.0 * lambda * w);
    }
}

/// Lays images out on a gray canvas, `cols` per row with 4-pixel gutters.
fn tile_images(images: &[TextureImage], cols: usize) -> TextureImage {
    assert!(!images.is_empty());
    let cols = cols.min(images.len()).max(1);
    let rows = images.len().div_ceil(cols);
    let (h, w) = (images[0].height(), images[0].width());
    let gap = 4usize;
    let mut canvas = ndarray::Array2::from_elem(
        (rows * h + (rows - 1) * gap, cols * w + (cols - 1) * gap),
        0.5,
    );
    for (i, img) in images.iter().enumerate() {
        let (r, c) = (i / cols, i % cols);
        let storage = img.to_storage();
        canvas
            .slice_mut(ndarray::s![
                r * (h + gap)..r * (h + gap) + h,
                c * (w + gap)..c * (w + gap) + w
            ])
            .assign(&storage.pixels);
    }
    TextureImage::new(canvas, ValueSpace::Storage)
}

/// Samples `count` noise grids and runs the generator in inference mode,
/// yielding images of size `scale * noise_size`. Deterministic per seed.
pub fn generate(
    checkpoint: &Checkpoint,
    noise_height: usize,
    noise_width: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<TextureImage>> {
    if noise_height == 0 || noise_width == 0 {
        return Err(Error::invalid_param("noise size", "must be >= 1"));
    }
    let generator = checkpoint.build_generator()?;
    let channels = generator.spec().input_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grids: Vec<NoiseGrid> = (0..count)
        .map(|_| NoiseGrid::uniform(channels, noise_height, noise_width, &mut rng))
        .collect();
    use rayon::prelude::*;
    grids
        .par_iter()
        .map(|z| crate::nn::generator_forward(&generator, z))
        .collect()
}
