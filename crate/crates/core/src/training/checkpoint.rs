//! Binary model container.
//!
//! ```text
//! "SKOCKPT1" | u32 layer count | per layer: u8 tag, u32 shape fields,
//!                                [u8 noise kind, f64 tau, f64 c], f64 payloads
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{ConvGeometry, ConvLayer, FcLayer, Layer, MaxPool, Network};
use crate::noise::{NoiseKind, ShakeoutParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SKOCKPT1";

const TAG_FC: u8 = 0;
const TAG_CONV: u8 = 1;
const TAG_RELU: u8 = 2;
const TAG_SIGMOID: u8 = 3;
const TAG_POOL: u8 = 4;
const TAG_FLATTEN: u8 = 5;

fn kind_code(kind: NoiseKind) -> u8 {
    match kind {
        NoiseKind::None => 0,
        NoiseKind::Shakeout => 1,
        NoiseKind::Dropout => 2,
        NoiseKind::GaussianDropout => 3,
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn noise(&mut self, p: &ShakeoutParams) {
        self.u8(kind_code(p.kind));
        self.f64s(&[p.tau, p.c]);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Length(format!("checkpoint truncated at byte {} (need {n} more)", self.at))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("payload size overflow".into()))?)?;
        Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
    fn noise(&mut self) -> Result<ShakeoutParams> {
        let kind = match self.u8()? {
            0 => NoiseKind::None,
            1 => NoiseKind::Shakeout,
            2 => NoiseKind::Dropout,
            3 => NoiseKind::GaussianDropout,
            k => return Err(Error::Format(format!("unknown noise kind {k}"))),
        };
        let v = self.f64s(2)?;
        ShakeoutParams::new(kind, v[0], v[1]).map_err(|e| Error::Format(format!("noise parameters: {e}")))
    }
    fn tensor(&mut self, shape: Vec<usize>) -> Result<Tensor> {
        let n = shape.iter().product();
        Tensor::new(shape, self.f64s(n)?).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn encode(net: &Network) -> Vec<u8> {
    let mut w = Writer(MAGIC.to_vec());
    w.u32(net.layers.len());
    for layer in &net.layers {
        match layer {
            Layer::Fc(l) => {
                w.u8(TAG_FC);
                w.u32(l.out_features());
                w.u32(l.in_features());
                w.noise(&l.noise);
                w.f64s(l.weights().data());
                w.f64s(l.bias().data());
            }
            Layer::Conv(l) => {
                let g = l.geometry();
                w.u8(TAG_CONV);
                for v in [l.out_maps(), g.in_maps, g.height, g.width, g.kernel.0, g.kernel.1, g.stride, g.padding] {
                    w.u32(v);
                }
                w.noise(&l.noise);
                w.f64s(l.weights().data());
                w.f64s(l.bias().data());
            }
            Layer::Relu(_) => w.u8(TAG_RELU),
            Layer::Sigmoid(_) => w.u8(TAG_SIGMOID),
            Layer::MaxPool(p) => {
                w.u8(TAG_POOL);
                w.u32(p.size);
                w.u32(p.stride);
            }
            Layer::Flatten(_) => w.u8(TAG_FLATTEN),
        }
    }
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("missing SKOCKPT1 header".into()));
    }
    let mut r = Reader { bytes, at: MAGIC.len() };
    let count = r.u32()?;
    let mut layers = Vec::new();
    for _ in 0..count {
        let layer = match r.u8()? {
            TAG_FC => {
                let (out, inp) = (r.u32()?, r.u32()?);
                let noise = r.noise()?;
                let w = r.tensor(vec![out, inp])?;
                let b = r.tensor(vec![out])?;
                Layer::Fc(FcLayer::new(w, b, noise).map_err(|e| Error::Format(e.to_string()))?)
            }
            TAG_CONV => {
                let mut f = [0usize; 8];
                for v in &mut f {
                    *v = r.u32()?;
                }
                let [out, in_maps, height, width, kh, kw, stride, padding] = f;
                let g = ConvGeometry { in_maps, height, width, kernel: (kh, kw), stride, padding };
                let noise = r.noise()?;
                let w = r.tensor(vec![out, in_maps * kh * kw])?;
                let b = r.tensor(vec![out])?;
                Layer::Conv(ConvLayer::new(w, b, g, noise).map_err(|e| Error::Format(e.to_string()))?)
            }
            TAG_RELU => Layer::relu(),
            TAG_SIGMOID => Layer::sigmoid(),
            TAG_POOL => {
                let (size, stride) = (r.u32()?, r.u32()?);
                Layer::MaxPool(MaxPool::new(size, stride).map_err(|e| Error::Format(e.to_string()))?)
            }
            TAG_FLATTEN => Layer::flatten(),
            t => return Err(Error::Format(format!("unknown layer tag {t}"))),
        };
        layers.push(layer);
    }
    if r.at != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    Ok(Network::new(layers))
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, encode(net))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Network> {
    decode(&std::fs::read(path)?)
}
