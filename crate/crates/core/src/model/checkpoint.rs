//! Binary model container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "XMID" | version u32
//! kind u8 | n_classes u32 | height u32 | width u32 | bn_position u8
//! chain count u32, then per chain: kernels u32 | dropout f64 | cross_kernels u32
//! dense widths 2 x u32 | l2 f64
//! tensor count u32, then per tensor: rank u32 | dims u32 x rank | f32 x len
//! ```
//!
//! Tensors are the trainable parameters in traversal order followed by the
//! batch-norm running statistics.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::network::Model;
use super::spec::{BnPosition, ChainSpec, ModelKind, ModelSpec, XChainSpec};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"XMID";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::invalid("checkpoint truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn encode_spec(spec: &ModelSpec, out: &mut Vec<u8>) -> Result<()> {
    out.push(spec.kind.code());
    put_u32(out, spec.n_classes)?;
    put_u32(out, spec.input_dims.0)?;
    put_u32(out, spec.input_dims.1)?;
    out.push(match spec.bn_position {
        BnPosition::BeforeCross => 0,
        BnPosition::AfterCross => 1,
    });
    put_u32(out, spec.chains.len())?;
    for c in &spec.chains {
        put_u32(out, c.chain.kernels)?;
        out.extend_from_slice(&c.chain.dropout.to_le_bytes());
        put_u32(out, c.cross_kernels)?;
    }
    put_u32(out, spec.dense[0])?;
    put_u32(out, spec.dense[1])?;
    out.extend_from_slice(&spec.l2.to_le_bytes());
    Ok(())
}

fn decode_spec(r: &mut Reader<'_>) -> Result<ModelSpec> {
    let kind = ModelKind::from_code(r.u8()?)?;
    let n_classes = r.u32()?;
    let input_dims = (r.u32()?, r.u32()?);
    let bn_position = match r.u8()? {
        0 => BnPosition::BeforeCross,
        1 => BnPosition::AfterCross,
        b => return Err(Error::invalid(format!("unknown batch-norm position code {b}"))),
    };
    let n_chains = r.u32()?;
    if n_chains > 64 {
        return Err(Error::invalid(format!("implausible chain count {n_chains}")));
    }
    let mut chains = Vec::with_capacity(n_chains);
    for _ in 0..n_chains {
        let kernels = r.u32()?;
        let dropout = r.f64()?;
        let cross_kernels = r.u32()?;
        chains.push(XChainSpec {
            chain: ChainSpec { kernels, dropout },
            cross_kernels,
        });
    }
    let dense = [r.u32()?, r.u32()?];
    let l2 = r.f64()?;
    let spec = ModelSpec {
        kind,
        n_classes,
        input_dims,
        chains,
        dense,
        l2,
        bn_position,
    };
    spec.validate()?;
    Ok(spec)
}

impl<T: Scalar> Model<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&VERSION.to_le_bytes());
        encode_spec(self.spec(), &mut out)?;
        let tensors: Vec<&Tensor<T>> = self
            .params()
            .into_iter()
            .map(|p| &p.value)
            .chain(self.buffers())
            .collect();
        put_u32(&mut out, tensors.len())?;
        for t in tensors {
            put_u32(&mut out, t.rank())?;
            for &d in t.shape() {
                put_u32(&mut out, d)?;
            }
            for v in t.data() {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::invalid("not a model checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::invalid(format!("unsupported checkpoint version {version}")));
        }
        let spec = decode_spec(&mut r)?;
        let mut model = Model::build(&spec, &mut SeededRng::new(0))?;
        let count = r.u32()?;
        let expected = model.params().len() + model.buffers().len();
        if count != expected {
            return Err(Error::invalid(format!("checkpoint holds {count} tensors, model has {expected}")));
        }
        let mut load = |dst: &mut Tensor<T>| -> Result<()> {
            let rank = r.u32()?;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            if dims != dst.shape() {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint load",
                    left: dims,
                    right: dst.shape().to_vec(),
                });
            }
            let raw = r.take(dst.len() * 4)?;
            for (v, c) in dst.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                *v = T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64);
            }
            Ok(())
        };
        for p in model.params_mut() {
            load(&mut p.value)?;
        }
        for b in model.buffers_mut() {
            load(b)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::invalid("trailing bytes after checkpoint"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }
}
