//! The alternating training loop: one discriminator step, then one
//! generator step, on the same batch. All randomness flows from seeds in
//! the config through ChaCha streams, so a run is a pure function of its
//! TrainConfig.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Snapshot;
use crate::conv::Mode;
use crate::error::{Error, Result};
use crate::losses::{
    adversarial_losses, feature_matching_loss, hrf_perceptual_loss, r1_penalty, LossReport,
    LossWeights, LOG_HEADER,
};
use crate::maskgen::{sample_training_mask, Mask, MaskPolicy};
use crate::nets::{
    stack_input, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, HrfExtractor,
    HrfExtractorConfig,
};
use crate::optim::{Adam, AdamConfig};
use crate::synth::TextureSpec;
use crate::tensor::{backward, Tensor};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub gen: GeneratorConfig,
    pub disc: DiscriminatorConfig,
    pub weights: LossWeights,
    pub texture: TextureSpec,
    pub hrf: HrfExtractorConfig,
    pub mask_policy: MaskPolicy,
    pub batch_size: usize,
    pub iterations: usize,
    /// Square training crop side, divisible by both stride products.
    pub crop: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Weight-init seed; data stream is derived from `data_seed`.
    pub seed: u64,
    pub data_seed: u64,
    /// Checkpoint every N steps; 0 saves only the final state.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gen: GeneratorConfig::default(),
            disc: DiscriminatorConfig::default(),
            weights: LossWeights::default(),
            texture: TextureSpec::default(),
            hrf: HrfExtractorConfig::default(),
            mask_policy: MaskPolicy::Large,
            batch_size: 4,
            iterations: 2000,
            crop: 32,
            lr_g: 0.001,
            lr_d: 0.0001,
            seed: 1,
            data_seed: 2,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.texture.validate()?;
        if self.batch_size == 0 {
            return Err(Error::BadConfig("batch size must be >= 1".into()));
        }
        let sp = self.gen.stride_product().max(1 << self.disc.n_layers);
        if self.crop % self.gen.stride_product() != 0 || self.crop < sp {
            return Err(Error::BadConfig(format!(
                "crop {} incompatible with stride products",
                self.crop
            )));
        }
        Ok(())
    }
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub gen: Generator,
    pub disc: Discriminator,
    pub ext: HrfExtractor,
    opt_g: Adam,
    opt_d: Adam,
    rng_data: ChaCha8Rng,
    pub step: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Trainer> {
        cfg.validate()?;
        let gen = Generator::new(cfg.gen, cfg.seed)?;
        let disc = Discriminator::new(cfg.disc, cfg.seed.wrapping_add(1))?;
        let ext = HrfExtractor::new(cfg.hrf.clone())?;
        let opt_g = Adam::new(AdamConfig::with_lr(cfg.lr_g));
        let opt_d = Adam::new(AdamConfig::with_lr(cfg.lr_d));
        let rng_data = ChaCha8Rng::seed_from_u64(cfg.data_seed);
        Ok(Trainer {
            cfg,
            gen,
            disc,
            ext,
            opt_g,
            opt_d,
            rng_data,
            step: 0,
        })
    }

    /// Draw a batch of (texture, mask) pairs from the data stream.
    pub fn sample_batch(&mut self) -> Result<(Tensor, Tensor)> {
        let s = self.cfg.crop;
        let mut imgs = Vec::with_capacity(self.cfg.batch_size);
        let mut masks = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            imgs.push(crate::synth::synth_texture(&mut self.rng_data, &self.cfg.texture, s, s)?);
            masks.push(sample_training_mask(&mut self.rng_data, s, s, self.cfg.mask_policy)?);
        }
        let mut data = Vec::with_capacity(self.cfg.batch_size * 3 * s * s);
        for t in &imgs {
            data.extend_from_slice(t.image.data());
        }
        let x = Tensor::constant(&[self.cfg.batch_size, 3, s, s], data)?;
        let m = Mask::batch_tensor(&masks)?;
        Ok((x, m))
    }

    /// One D step then one G step on the same batch. The generator forward
    /// runs once; both adversarial phases see the same raw prediction.
    pub fn train_iteration(&mut self, x: &Tensor, m: &Tensor) -> Result<LossReport> {
        let w = self.cfg.weights;
        let x4 = stack_input(x, m)?;
        let xhat = self.gen.forward(&x4, Mode::Train, false)?;

        // --- discriminator phase ---
        let adv_d_pass = adversarial_losses(&self.disc, x, &xhat, m)?;
        let r1 = r1_penalty(&self.disc, x)?;
        let total_d = adv_d_pass.loss_d.add(&r1.scale(w.gamma)?)?;
        let grads_d = backward(&total_d)?;
        let opt_d = &mut self.opt_d;
        let disc = &mut self.disc;
        opt_d.step(&grads_d, |f| disc.visit_params(f))?;

        // --- generator phase, against the updated discriminator ---
        let adv_g_pass = adversarial_losses(&self.disc, x, &xhat, m)?;
        let hrfpl = hrf_perceptual_loss(&self.ext, &xhat, x)?;
        let discpl = feature_matching_loss(&self.disc, x, &xhat)?;
        let total_g = adv_g_pass
            .loss_g
            .scale(w.kappa)?
            .add(&hrfpl.scale(w.alpha)?)?
            .add(&discpl.scale(w.beta)?)?;
        let grads_g = backward(&total_g)?;
        let opt_g = &mut self.opt_g;
        let gen = &mut self.gen;
        opt_g.step(&grads_g, |f| gen.visit_params(f))?;

        self.step += 1;
        let report = LossReport {
            step: self.step,
            adv_g: adv_g_pass.loss_g.data()[0],
            adv_d: adv_d_pass.loss_d.data()[0],
            hrfpl: hrfpl.data()[0],
            discpl: discpl.data()[0],
            r1: r1.data()[0],
            total_g: total_g.data()[0],
            total_d: total_d.data()[0],
        };
        if !report.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        Ok(report)
    }

    /// Run the configured number of iterations, streaming CSV rows to
    /// `log` and checkpointing into `ckpt_dir` at the configured cadence.
    pub fn run(&mut self, log: &mut dyn Write, ckpt_dir: Option<&Path>) -> Result<Vec<LossReport>> {
        writeln!(log, "{LOG_HEADER}")?;
        let mut reports = Vec::with_capacity(self.cfg.iterations);
        for _ in 0..self.cfg.iterations {
            let (x, m) = self.sample_batch()?;
            let r = self.train_iteration(&x, &m)?;
            writeln!(log, "{}", r.csv_line())?;
            reports.push(r);
            if let Some(dir) = ckpt_dir {
                let cadence = self.cfg.checkpoint_every;
                if cadence > 0 && self.step % cadence as u64 == 0 {
                    self.snapshot().save(&dir.join(format!("step_{:06}.ckpt", self.step)))?;
                }
            }
        }
        if let Some(dir) = ckpt_dir {
            self.snapshot().save(&dir.join("final.ckpt"))?;
        }
        Ok(reports)
    }

    /// Eval-mode inpainting: composite output, bit-identical to the input
    /// on known pixels.
    pub fn inpaint(&mut self, x: &Tensor, mask: &Mask) -> Result<Tensor> {
        inpaint_with(&mut self.gen, x, mask)
    }

    /// Everything needed to resume bit-exactly: parameters, BN buffers,
    /// both optimizer states, step counter, and the data-stream position.
    pub fn snapshot(&mut self) -> Snapshot {
        let mut snap = Snapshot::default();
        self.gen.visit_params(&mut |name, t| {
            snap.insert(&format!("gen.{name}"), t.shape(), t.data().to_vec());
        });
        self.gen.visit_buffers(&mut |name, b| {
            snap.insert(&format!("gen.buf.{name}"), &[b.len()], b.clone());
        });
        self.disc.visit_params(&mut |name, t| {
            snap.insert(&format!("disc.{name}"), t.shape(), t.data().to_vec());
        });
        for (k, v) in self.opt_g.state_entries() {
            let n = v.len();
            snap.insert(&format!("opt_g.{k}"), &[n], v);
        }
        for (k, v) in self.opt_d.state_entries() {
            let n = v.len();
            snap.insert(&format!("opt_d.{k}"), &[n], v);
        }
        snap.insert("step", &[1], vec![self.step as f64]);
        // ChaCha stream position, bit-stashed in f64 payloads
        let pos = self.rng_data.get_word_pos();
        snap.insert(
            "rng_data.word_pos",
            &[2],
            vec![
                f64::from_bits((pos >> 64) as u64),
                f64::from_bits(pos as u64),
            ],
        );
        snap
    }

    /// Restore a snapshot taken from a trainer with the same TrainConfig.
    pub fn restore(&mut self, snap: &Snapshot) -> Result<()> {
        let mut err: Option<Error> = None;
        self.gen.visit_params(&mut |name, t| {
            if err.is_some() {
                return;
            }
            match snap.get(&format!("gen.{name}")) {
                Ok((shape, data)) if shape == t.shape() => {
                    *t = Tensor::new(shape, data.clone(), true).expect("validated shape");
                }
                Ok(_) => err = Some(Error::Checkpoint(format!("shape mismatch at gen.{name}"))),
                Err(e) => err = Some(e),
            }
        });
        self.gen.visit_buffers(&mut |name, b| {
            if err.is_some() {
                return;
            }
            match snap.get(&format!("gen.buf.{name}")) {
                Ok((_, data)) if data.len() == b.len() => *b = data.clone(),
                Ok(_) => err = Some(Error::Checkpoint(format!("length mismatch at gen.buf.{name}"))),
                Err(e) => err = Some(e),
            }
        });
        self.disc.visit_params(&mut |name, t| {
            if err.is_some() {
                return;
            }
            match snap.get(&format!("disc.{name}")) {
                Ok((shape, data)) if shape == t.shape() => {
                    *t = Tensor::new(shape, data.clone(), true).expect("validated shape");
                }
                Ok(_) => err = Some(Error::Checkpoint(format!("shape mismatch at disc.{name}"))),
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let opt_entries = |prefix: &str| -> Vec<(String, Vec<f64>)> {
            snap.entries
                .iter()
                .filter_map(|(k, (_, data))| {
                    k.strip_prefix(prefix).map(|rest| (rest.to_string(), data.clone()))
                })
                .collect()
        };
        self.opt_g.restore_entries(opt_entries("opt_g.").into_iter())?;
        self.opt_d.restore_entries(opt_entries("opt_d.").into_iter())?;
        self.step = snap.get("step")?.1[0] as u64;
        let pos = &snap.get("rng_data.word_pos")?.1;
        if pos.len() != 2 {
            return Err(Error::Checkpoint("bad rng state".into()));
        }
        let word_pos = ((pos[0].to_bits() as u128) << 64) | pos[1].to_bits() as u128;
        self.rng_data = ChaCha8Rng::seed_from_u64(self.cfg.data_seed);
        self.rng_data.set_word_pos(word_pos);
        Ok(())
    }
}

/// Build a generator and load its weights from a `Trainer::snapshot`
/// checkpoint, ignoring discriminator and optimizer entries. Enough for
/// inference; resuming training still needs `Trainer::restore`.
pub fn load_generator(cfg: GeneratorConfig, snap: &Snapshot) -> Result<Generator> {
    let mut gen = Generator::new(cfg, 0)?;
    let mut err: Option<Error> = None;
    gen.visit_params(&mut |name, t| {
        if err.is_some() {
            return;
        }
        match snap.get(&format!("gen.{name}")) {
            Ok((shape, data)) if shape == t.shape() => {
                *t = Tensor::new(shape, data.clone(), true).expect("validated shape");
            }
            Ok(_) => err = Some(Error::Checkpoint(format!("shape mismatch at gen.{name}"))),
            Err(e) => err = Some(e),
        }
    });
    gen.visit_buffers(&mut |name, b| {
        if err.is_some() {
            return;
        }
        match snap.get(&format!("gen.buf.{name}")) {
            Ok((_, data)) if data.len() == b.len() => *b = data.clone(),
            Ok(_) => err = Some(Error::Checkpoint(format!("length mismatch at gen.buf.{name}"))),
            Err(e) => err = Some(e),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(gen),
    }
}

/// Composite inpainting with any generator: m*x + (1-m)*xhat.
pub fn inpaint_with(gen: &mut Generator, x: &Tensor, mask: &Mask) -> Result<Tensor> {
    let m = mask.to_tensor();
    let x4 = stack_input(x, &m)?;
    let xhat = gen.forward(&x4, Mode::Eval, false)?.detach();
    let m3 = Tensor::concat_channels(&[m.clone(), m.clone(), m.clone()])?;
    let inv = m3.scale(-1.0)?.add_scalar(1.0)?;
    x.detach().mul(&m3)?.add(&xhat.mul(&inv)?)
}
