//! Model bundle and its binary checkpoint.
//!
//! ```text
//! "CRPLBNDL" u32:version u8:stage u8:precision u32:n_blocks
//! per block: u16:name_len name u32:n_dims u64*n_dims [u8;64]:sha256-hex u64:payload_len payload
//! ```
//! Reals are little-endian `f32`, or `f64` in double-precision bundles.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::aligner::Projector;
use crate::checksum::tensor_checksum;
use crate::error::{Error, Result};
use crate::graphenc::{GraphEncoder, SageLayer};
use crate::linalg::Matrix;
use crate::textenc::TextEncoder;
use crate::toylm::{LmConfig, ToyLm, Vocab};

const MAGIC: &[u8; 8] = b"CRPLBNDL";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Pretrained = 0,
    One = 1,
    Two = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub textenc: TextEncoder,
    pub graphenc: GraphEncoder,
    pub projector: Projector,
    pub lm: ToyLm,
    pub vocab: Vocab,
    pub stage: Stage,
    pub precision: Precision,
}

impl ModelBundle {
    /// Assembles a bundle from frozen pretrained parts and a fresh projector.
    pub fn new(
        textenc: TextEncoder,
        graphenc: GraphEncoder,
        mut projector: Projector,
        lm: ToyLm,
        vocab: Vocab,
        precision: Precision,
    ) -> Result<Self> {
        if !graphenc.is_frozen() || !lm.is_frozen() {
            return Err(Error::state("bundle parts must be frozen"));
        }
        if projector.d_g() != graphenc.dim() || projector.d_lm() != lm.config.d_model {
            return Err(Error::arg("projector dimensions do not match encoder and LM"));
        }
        if graphenc.in_dim() != textenc.dim() {
            return Err(Error::arg("graph encoder input width differs from text feature width"));
        }
        if vocab.len() != lm.config.vocab_size {
            return Err(Error::arg("vocabulary size differs from LM embedding table"));
        }
        if precision == Precision::F32 {
            projector.tensors_mut().into_iter().for_each(crate::linalg::round_slice_to_f32);
        }
        Ok(Self {
            textenc,
            graphenc,
            projector,
            lm,
            vocab,
            stage: Stage::Pretrained,
            precision,
        })
    }

    pub(crate) fn finish_stage(&mut self, stage: Stage) {
        if self.precision == Precision::F32 {
            self.projector.tensors_mut().into_iter().for_each(crate::linalg::round_slice_to_f32);
        }
        self.stage = self.stage.max(stage);
    }

    /// Checksum per block, keyed by block name.
    pub fn checksums(&self) -> BTreeMap<&'static str, String> {
        self.parts().checksums()
    }

    fn parts(&self) -> Parts {
        Parts {
            textenc: Some(self.textenc),
            graphenc: Some(self.graphenc.clone()),
            projector: Some(self.projector.clone()),
            lm: Some(self.lm.clone()),
            vocab: Some(self.vocab.clone()),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.parts().to_bytes(self.stage, self.precision)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (stage, precision, p) = Parts::from_bytes(bytes)?;
        let missing = |name: &str| Error::Checkpoint(format!("missing block `{name}`"));
        Ok(Self {
            textenc: p.textenc.ok_or_else(|| missing("textenc"))?,
            graphenc: p.graphenc.ok_or_else(|| missing("graphenc"))?,
            projector: p.projector.ok_or_else(|| missing("projector"))?,
            lm: p.lm.ok_or_else(|| missing("lm"))?,
            vocab: p.vocab.ok_or_else(|| missing("vocab"))?,
            stage,
            precision,
        })
    }
}

/// Any subset of bundle blocks, as stored by the pretraining steps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Parts {
    pub textenc: Option<TextEncoder>,
    pub graphenc: Option<GraphEncoder>,
    pub projector: Option<Projector>,
    pub lm: Option<ToyLm>,
    pub vocab: Option<Vocab>,
}

impl Parts {
    pub fn checksums(&self) -> BTreeMap<&'static str, String> {
        self.blocks().into_iter().map(|b| (b.name, b.checksum)).collect()
    }

    fn blocks(&self) -> Vec<Block> {
        let mut out = Vec::new();
        if let Some(t) = &self.textenc {
            out.push(Block::reals("textenc", vec![t.dim() as u64, t.seed()], vec![]));
        }
        if let Some(g) = &self.graphenc {
            let dims = vec![g.in_dim() as u64, g.dim() as u64, g.layers.len() as u64];
            out.push(Block::reals("graphenc", dims, g.tensors()));
        }
        if let Some(p) = &self.projector {
            out.push(Block::reals("projector", vec![p.d_lm() as u64, p.d_g() as u64], p.tensors()));
        }
        if let Some(lm) = &self.lm {
            let c = lm.config;
            let dims = [c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_ff, c.context]
                .iter()
                .map(|&d| d as u64)
                .collect();
            out.push(Block::reals("lm", dims, lm.tensors()));
        }
        if let Some(v) = &self.vocab {
            out.push(Block::bytes("vocab", vec![v.len() as u64], v.to_text().into_bytes()));
        }
        out
    }

    pub fn to_bytes(&self, stage: Stage, precision: Precision) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(stage as u8);
        out.push(u8::from(precision == Precision::F64));
        let blocks = self.blocks();
        out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
        for b in blocks {
            out.extend_from_slice(&(b.name.len() as u16).to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.extend_from_slice(&(b.dims.len() as u32).to_le_bytes());
            for d in &b.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.extend_from_slice(b.checksum.as_bytes());
            let payload = match &b.payload {
                Payload::Reals(v) => encode_reals(v, precision),
                Payload::Bytes(v) => v.clone(),
            };
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        out
    }

    /// Decodes every block present and verifies its checksum.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Stage, Precision, Self)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a model bundle (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported bundle version {version}")));
        }
        let stage = match r.u8()? {
            0 => Stage::Pretrained,
            1 => Stage::One,
            2 => Stage::Two,
            s => return Err(Error::Checkpoint(format!("invalid stage {s}"))),
        };
        let precision = match r.u8()? {
            0 => Precision::F32,
            1 => Precision::F64,
            p => return Err(Error::Checkpoint(format!("invalid precision flag {p}"))),
        };
        let n = r.u32()?;
        let mut parts = Parts::default();
        let mut stored = BTreeMap::new();
        for _ in 0..n {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?;
            let n_dims = r.u32()? as usize;
            let dims = (0..n_dims).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            let checksum = String::from_utf8(r.take(64)?.to_vec()).map_err(|_| Error::Checkpoint("bad checksum field".into()))?;
            let len = r.u64()? as usize;
            let payload = r.take(len)?;
            match name.as_str() {
                "textenc" => {
                    let d = dim(&dims, 0)?;
                    if d == 0 {
                        return Err(Error::Checkpoint("text encoder width is zero".into()));
                    }
                    parts.textenc = Some(TextEncoder::new(d, *dims.get(1).ok_or_else(short)?));
                }
                "graphenc" => parts.graphenc = Some(decode_graphenc(&dims, decode_reals(payload, precision)?)?),
                "projector" => {
                    let (dl, dg) = (dim(&dims, 0)?, dim(&dims, 1)?);
                    let mut vals = decode_reals(payload, precision)?.into_iter();
                    parts.projector = Some(Projector {
                        w: Matrix::from_vec(dl, dg, take_n(&mut vals, dl * dg)?),
                        b: take_n(&mut vals, dl)?,
                    });
                }
                "lm" => parts.lm = Some(decode_lm(&dims, decode_reals(payload, precision)?)?),
                "vocab" => {
                    let text = std::str::from_utf8(payload).map_err(|_| Error::Checkpoint("vocab is not UTF-8".into()))?;
                    parts.vocab = Some(Vocab::from_text(text).map_err(|e| Error::Checkpoint(format!("vocab block: {e}")))?);
                }
                other => return Err(Error::Checkpoint(format!("unknown block `{other}`"))),
            }
            stored.insert(name, checksum);
        }
        for (name, sum) in parts.checksums() {
            if stored.get(name) != Some(&sum) {
                return Err(Error::Checkpoint(format!("checksum mismatch in block `{name}`")));
            }
        }
        Ok((stage, precision, parts))
    }
}

fn decode_graphenc(dims: &[u64], values: Vec<f64>) -> Result<GraphEncoder> {
    let (gin, gd, gl) = (dim(dims, 0)?, dim(dims, 1)?, dim(dims, 2)?);
    let mut vals = values.into_iter();
    let mut layers = Vec::with_capacity(gl.min(16));
    let mut fan_in = gin;
    for _ in 0..gl {
        let w_self = Matrix::from_vec(fan_in, gd, take_n(&mut vals, fan_in * gd)?);
        let w_nbr = Matrix::from_vec(fan_in, gd, take_n(&mut vals, fan_in * gd)?);
        layers.push(SageLayer { w_self, w_nbr });
        fan_in = gd;
    }
    let mut g = GraphEncoder::init(gin, gd, 0);
    g.layers = layers;
    g.set_frozen(true);
    Ok(g)
}

fn decode_lm(dims: &[u64], values: Vec<f64>) -> Result<ToyLm> {
    let config = LmConfig {
        vocab_size: dim(dims, 0)?,
        d_model: dim(dims, 1)?,
        n_layers: dim(dims, 2)?,
        n_heads: dim(dims, 3)?,
        d_ff: dim(dims, 4)?,
        context: dim(dims, 5)?,
    };
    if config.n_heads == 0 || config.d_model % config.n_heads != 0 {
        return Err(Error::Checkpoint("LM head count does not divide the model width".into()));
    }
    let expected: usize = ToyLm::zeros(LmConfig { vocab_size: 0, context: 0, ..config }).n_params()
        + config.vocab_size * config.d_model;
    if values.len() != expected {
        return Err(Error::Checkpoint(format!("LM payload holds {} values, expected {expected}", values.len())));
    }
    let mut lm = ToyLm::zeros(config);
    let mut vals = values.into_iter();
    for t in lm.tensors_mut() {
        let n = t.len();
        t.copy_from_slice(&take_n(&mut vals, n)?);
    }
    lm.set_frozen(true);
    Ok(lm)
}

fn short() -> Error {
    Error::Checkpoint("block header too short".into())
}

fn dim(dims: &[u64], i: usize) -> Result<usize> {
    dims.get(i).map(|&d| d as usize).ok_or_else(short)
}

fn take_n(it: &mut impl Iterator<Item = f64>, n: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = it.take(n).collect();
    if v.len() != n {
        return Err(Error::Checkpoint("block payload too short".into()));
    }
    Ok(v)
}

enum Payload {
    Reals(Vec<f64>),
    Bytes(Vec<u8>),
}

struct Block {
    name: &'static str,
    dims: Vec<u64>,
    checksum: String,
    payload: Payload,
}

impl Block {
    fn reals(name: &'static str, dims: Vec<u64>, tensors: Vec<&[f64]>) -> Self {
        let shape: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
        Self {
            name,
            checksum: tensor_checksum(&shape, &tensors),
            dims,
            payload: Payload::Reals(tensors.concat()),
        }
    }

    fn bytes(name: &'static str, dims: Vec<u64>, bytes: Vec<u8>) -> Self {
        use sha2::{Digest, Sha256};
        Self {
            name,
            checksum: hex::encode(Sha256::digest(&bytes)),
            dims,
            payload: Payload::Bytes(bytes),
        }
    }
}

fn encode_reals(v: &[f64], p: Precision) -> Vec<u8> {
    match p {
        Precision::F32 => v.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect(),
        Precision::F64 => v.iter().flat_map(|&x| x.to_le_bytes()).collect(),
    }
}

fn decode_reals(b: &[u8], p: Precision) -> Result<Vec<f64>> {
    let w = if p == Precision::F32 { 4 } else { 8 };
    if b.len() % w != 0 {
        return Err(Error::Checkpoint("real payload length is not a multiple of the value width".into()));
    }
    Ok(b.chunks_exact(w)
        .map(|c| match p {
            Precision::F32 => f64::from(f32::from_le_bytes(c.try_into().unwrap())),
            Precision::F64 => f64::from_le_bytes(c.try_into().unwrap()),
        })
        .collect())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Checkpoint("truncated bundle".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn write_bundle(path: impl AsRef<Path>, bundle: &ModelBundle) -> Result<()> {
    fs::write(path, bundle.to_bytes())?;
    Ok(())
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    ModelBundle::from_bytes(&fs::read(path)?)
}

pub fn write_parts(path: impl AsRef<Path>, parts: &Parts) -> Result<()> {
    fs::write(path, parts.to_bytes(Stage::Pretrained, Precision::F32))?;
    Ok(())
}

pub fn read_parts(path: impl AsRef<Path>) -> Result<Parts> {
    Ok(Parts::from_bytes(&fs::read(path)?)?.2)
}
