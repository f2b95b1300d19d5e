//! Bit-exact network weight files.
//!
//! Layout (all multi-byte integers little-endian, floats f64 LE):
//!
//! ```text
//! magic   b"EVLN"
//! version u16 = 1
//! layers  u16
//! input   u32 x3 (channels, height, width)
//! classes u32
//! then per layer:
//!   kind  u8   1=conv 2=pool 3=dense 4=relu 5=sigmoid 6=softmax 7=flatten
//!   extents    u32 each; conv: (out_c, in_c, kh, kw), dense: (out, in),
//!              pool: (window, stride), other kinds: none
//!   weights    f64 x prod(extents-derived weight shape)   conv/dense only
//!   biases     f64 x out                                  conv/dense only
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{Layer, LayerKind, Network};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"EVLN";
const VERSION: u16 = 1;

/// Serializes a network. Round-trips are byte-identical.
pub fn save_weights(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(net.layers().len() as u16).to_le_bytes());
    let (c, h, w) = net.input_shape();
    for v in [c, h, w, net.class_count()] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for layer in net.layers() {
        buf.push(layer.kind() as u8);
        match layer {
            Layer::Conv2d { weight, bias } | Layer::Dense { weight, bias } => {
                for &e in weight.shape() {
                    buf.extend_from_slice(&(e as u32).to_le_bytes());
                }
                for &v in weight.data() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                for &v in bias {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
            Layer::MaxPool2d { window, stride } => {
                buf.extend_from_slice(&(*window as u32).to_le_bytes());
                buf.extend_from_slice(&(*stride as u32).to_le_bytes());
            }
            Layer::Relu | Layer::Sigmoid | Layer::Softmax | Layer::Flatten => {}
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn need(&self, n: usize, what: &str) -> Result<()> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::format(
                &self.path,
                self.offset as u64,
                format!("truncated while reading {what}"),
            ));
        }
        Ok(())
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        self.need(1, what)?;
        let v = self.bytes[self.offset];
        self.offset += 1;
        Ok(v)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        self.need(2, what)?;
        let v = u16::from_le_bytes([self.bytes[self.offset], self.bytes[self.offset + 1]]);
        self.offset += 2;
        Ok(v)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.need(4, what)?;
        let mut b = [0u8; 4];
        b.copy_from_slice(&self.bytes[self.offset..self.offset + 4]);
        self.offset += 4;
        Ok(u32::from_le_bytes(b))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        self.need(n * 8, what)?;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut b = [0u8; 8];
            b.copy_from_slice(&self.bytes[self.offset + i * 8..self.offset + i * 8 + 8]);
            out.push(f64::from_le_bytes(b));
        }
        self.offset += n * 8;
        Ok(out)
    }
}

/// Reads a weight file back into a validated network. A malformed file
/// fails with the byte offset of the problem and produces no partial
/// network.
pub fn load_weights(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(&name, e))?;
    let mut r = Reader {
        bytes: &bytes,
        offset: 0,
        path: name.clone(),
    };
    r.need(4, "magic")?;
    if &bytes[..4] != MAGIC {
        return Err(Error::format(&name, 0, "bad magic, expected EVLN"));
    }
    r.offset = 4;
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(
            &name,
            4,
            format!("unsupported version {version}"),
        ));
    }
    let layer_count = r.u16("layer count")? as usize;
    let c = r.u32("input channels")? as usize;
    let h = r.u32("input height")? as usize;
    let w = r.u32("input width")? as usize;
    let classes = r.u32("class count")? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for li in 0..layer_count {
        let tag_offset = r.offset as u64;
        let tag = r.u8("layer kind")?;
        let layer = match tag {
            t if t == LayerKind::Conv2d as u8 => {
                let oc = r.u32("conv out channels")? as usize;
                let ic = r.u32("conv in channels")? as usize;
                let kh = r.u32("conv kernel height")? as usize;
                let kw = r.u32("conv kernel width")? as usize;
                let wdata = r.f64s(oc * ic * kh * kw, "conv weights")?;
                let bias = r.f64s(oc, "conv biases")?;
                Layer::conv2d(Tensor::from_vec(vec![oc, ic, kh, kw], wdata)?, bias)?
            }
            t if t == LayerKind::MaxPool2d as u8 => {
                let window = r.u32("pool window")? as usize;
                let stride = r.u32("pool stride")? as usize;
                Layer::max_pool2d(window, stride)?
            }
            t if t == LayerKind::Dense as u8 => {
                let out = r.u32("dense outputs")? as usize;
                let inp = r.u32("dense inputs")? as usize;
                let wdata = r.f64s(out * inp, "dense weights")?;
                let bias = r.f64s(out, "dense biases")?;
                Layer::dense(Tensor::from_vec(vec![out, inp], wdata)?, bias)?
            }
            t if t == LayerKind::Relu as u8 => Layer::Relu,
            t if t == LayerKind::Sigmoid as u8 => Layer::Sigmoid,
            t if t == LayerKind::Softmax as u8 => Layer::Softmax,
            t if t == LayerKind::Flatten as u8 => Layer::Flatten,
            other => {
                return Err(Error::format(
                    &name,
                    tag_offset,
                    format!("unknown layer tag {other} (layer {li})"),
                ))
            }
        };
        layers.push(layer);
    }
    if r.offset != bytes.len() {
        return Err(Error::format(
            &name,
            r.offset as u64,
            format!("{} trailing bytes", bytes.len() - r.offset),
        ));
    }
    Network::new((c, h, w), layers, classes)
}
