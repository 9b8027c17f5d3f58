//! Training state and its binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "MGCKPT\0\0"
//! version  u32
//! u64 len + JSON config block (model configs, optimizer state, metadata)
//! u64 len + JSON manifest     (name, shape, offset, count per tensor)
//! u64 len + raw f32 payload
//! u64 FNV-1a hash of every preceding byte
//! ```

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::NnError;
use crate::generator::{Generator, GeneratorConfig};
use crate::optim::{Nadam, NadamConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MGCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

/// Everything a training run needs to resume.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub gen_opt: Nadam<f32>,
    pub disc_opt: Nadam<f32>,
    /// Completed training steps.
    pub step: u64,
    pub epoch: u64,
    pub seed: u64,
    pub rng: ChaCha8Rng,
    pub alpha: f64,
    pub metadata: BTreeMap<String, String>,
}

impl TrainState {
    /// Fresh models drawn from a generator seeded with `seed`.
    pub fn new(
        gen_cfg: &GeneratorConfig,
        disc_cfg: &DiscriminatorConfig,
        opt: NadamConfig,
        seed: u64,
        alpha: f64,
    ) -> Result<Self, NnError> {
        if !(alpha >= 0.0) {
            return Err(NnError::InvalidConfig(format!("alpha {alpha} must be >= 0")));
        }
        opt.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let generator = Generator::new(gen_cfg, &mut rng)?;
        let discriminator = Discriminator::new(disc_cfg, &mut rng)?;
        let gen_opt = Nadam::new(opt, &generator.params());
        let disc_opt = Nadam::new(opt, &discriminator.params());
        Ok(TrainState {
            generator,
            discriminator,
            gen_opt,
            disc_opt,
            step: 0,
            epoch: 0,
            seed,
            rng,
            alpha,
            metadata: BTreeMap::new(),
        })
    }

    /// Named tensors in payload order.
    fn tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        let groups: [(&str, Vec<&Tensor<f32>>); 6] = [
            ("generator", self.generator.params()),
            ("discriminator", self.discriminator.params()),
            ("generator.m", self.gen_opt.m.iter().collect()),
            ("generator.v", self.gen_opt.v.iter().collect()),
            ("discriminator.m", self.disc_opt.m.iter().collect()),
            ("discriminator.v", self.disc_opt.v.iter().collect()),
        ];
        groups
            .into_iter()
            .flat_map(|(prefix, ts)| ts.into_iter().enumerate().map(move |(k, t)| (format!("{prefix}.{k}"), t)))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        let mut out = self.generator.params_mut();
        out.extend(self.discriminator.params_mut());
        out.extend(self.gen_opt.m.iter_mut());
        out.extend(self.gen_opt.v.iter_mut());
        out.extend(self.disc_opt.m.iter_mut());
        out.extend(self.disc_opt.v.iter_mut());
        out
    }
}

#[derive(Serialize, Deserialize)]
struct OptimBlock {
    config: NadamConfig,
    step: u64,
    /// `f64::to_bits`, so the value survives text exactly.
    mu_product_bits: u64,
}

#[derive(Serialize, Deserialize)]
struct ConfigBlock {
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
    generator_optim: OptimBlock,
    discriminator_optim: OptimBlock,
    step: u64,
    epoch: u64,
    seed: u64,
    rng_seed: [u8; 32],
    rng_stream: u64,
    rng_word_pos: String,
    alpha: f64,
    metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    count: usize,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn push_block(out: &mut Vec<u8>, block: &[u8]) {
    out.extend_from_slice(&(block.len() as u64).to_le_bytes());
    out.extend_from_slice(block);
}

fn corrupt(msg: impl Into<String>) -> NnError {
    NnError::CorruptPayload(msg.into())
}

pub fn save_checkpoint(state: &TrainState) -> Result<Vec<u8>, NnError> {
    let optim = |o: &Nadam<f32>| OptimBlock {
        config: o.cfg,
        step: o.step,
        mu_product_bits: o.mu_product.to_bits(),
    };
    let config = ConfigBlock {
        generator: state.generator.config().clone(),
        discriminator: state.discriminator.config().clone(),
        generator_optim: optim(&state.gen_opt),
        discriminator_optim: optim(&state.disc_opt),
        step: state.step,
        epoch: state.epoch,
        seed: state.seed,
        rng_seed: state.rng.get_seed(),
        rng_stream: state.rng.get_stream(),
        rng_word_pos: state.rng.get_word_pos().to_string(),
        alpha: state.alpha,
        metadata: state.metadata.clone(),
    };
    let mut manifest = Vec::new();
    let mut payload = Vec::new();
    let mut offset = 0;
    for (name, t) in state.tensors() {
        manifest.push(ManifestEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
            count: t.numel(),
        });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        offset += t.numel();
    }
    let mut out = Vec::with_capacity(payload.len() + 4096);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    push_block(&mut out, &to_json(&config)?);
    push_block(&mut out, &to_json(&manifest)?);
    push_block(&mut out, &payload);
    let h = fnv1a(&out);
    out.extend_from_slice(&h.to_le_bytes());
    Ok(out)
}

fn to_json<S: Serialize>(v: &S) -> Result<Vec<u8>, NnError> {
    serde_json::to_vec(v).map_err(|e| corrupt(e.to_string()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn block(&mut self, what: &str) -> Result<&'a [u8], NnError> {
        let n = self.u64(what)?;
        let n = usize::try_from(n).map_err(|_| corrupt(format!("{what} length overflows")))?;
        self.take(n, what)
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<TrainState, NnError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(NnError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let config: ConfigBlock =
        serde_json::from_slice(r.block("config block")?).map_err(|e| corrupt(format!("config block: {e}")))?;
    let manifest: Vec<ManifestEntry> =
        serde_json::from_slice(r.block("manifest")?).map_err(|e| corrupt(format!("manifest: {e}")))?;
    let payload = r.block("payload")?;
    let body_len = r.pos;
    let stored = r.u64("checksum")?;
    if r.pos != bytes.len() {
        return Err(corrupt("trailing bytes after checksum"));
    }
    if fnv1a(&bytes[..body_len]) != stored {
        return Err(corrupt("checksum mismatch"));
    }
    if payload.len() % 4 != 0 {
        return Err(corrupt("payload is not a whole number of f32 values"));
    }

    let opt = config.generator_optim.config;
    let mut state = TrainState::new(&config.generator, &config.discriminator, opt, config.seed, config.alpha)?;
    state.disc_opt.cfg = config.discriminator_optim.config;
    for (o, b) in [
        (&mut state.gen_opt, &config.generator_optim),
        (&mut state.disc_opt, &config.discriminator_optim),
    ] {
        o.step = b.step;
        o.mu_product = f64::from_bits(b.mu_product_bits);
    }
    state.step = config.step;
    state.epoch = config.epoch;
    state.metadata = config.metadata;
    let mut rng = ChaCha8Rng::from_seed(config.rng_seed);
    rng.set_stream(config.rng_stream);
    rng.set_word_pos(
        config
            .rng_word_pos
            .parse()
            .map_err(|_| corrupt("rng word position is not an integer"))?,
    );
    state.rng = rng;

    let names: Vec<String> = state.tensors().into_iter().map(|(n, _)| n).collect();
    if manifest.len() != names.len() {
        return Err(corrupt(format!(
            "manifest lists {} tensors, configs imply {}",
            manifest.len(),
            names.len()
        )));
    }
    let values = payload.len() / 4;
    for ((entry, name), t) in manifest.iter().zip(&names).zip(state.tensors_mut()) {
        if &entry.name != name || entry.shape != t.shape() || entry.count != t.numel() {
            return Err(corrupt(format!("manifest entry {} does not match {name} {:?}", entry.name, t.shape())));
        }
        let end = entry.offset.checked_add(entry.count).filter(|&e| e <= values);
        let end = end.ok_or_else(|| corrupt(format!("tensor {name} runs past the payload")))?;
        let raw = &payload[entry.offset * 4..end * 4];
        for (dst, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    Ok(state)
}
