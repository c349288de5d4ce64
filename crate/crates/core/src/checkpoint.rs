//! Binary network checkpoints.
//!
//! Layout, all integers little-endian: `AVSE`, u32 version, u32 blob count,
//! then per blob a u16 name length, the UTF-8 name, a u8 rank, `rank` u32
//! dimensions and the values as f32. Parameters keep their own names,
//! running normalization statistics live under `bn/` and the network
//! dimensions under `meta/`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autograd::Scalar;
use crate::error::{Error, Result};
use crate::model::{EnhancementNet, NetConfig};

pub const MAGIC: &[u8; 4] = b"AVSE";
pub const VERSION: u32 = 1;
const META: &str = "meta/net";
const BN_PREFIX: &str = "bn/";

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

fn blobs<T: Scalar>(net: &EnhancementNet<T>) -> Vec<Blob> {
    let f = |v: &T| v.to_f32().expect("finite");
    let c = &net.config;
    let meta = [c.visual_dim, c.mag_channels, c.phase_channels, c.n_mels, c.n_freqs];
    let mut out = vec![Blob { name: META.into(), dims: vec![meta.len()], values: meta.iter().map(|v| *v as f32).collect() }];
    for (_, p) in net.params.iter() {
        out.push(Blob { name: p.name.clone(), dims: p.dims(), values: p.value.iter().map(f).collect() });
    }
    for (name, state) in &net.bn.states {
        let n = state.channels();
        out.push(Blob { name: format!("{BN_PREFIX}{name}/mean"), dims: vec![n], values: state.mean.iter().map(f).collect() });
        out.push(Blob { name: format!("{BN_PREFIX}{name}/var"), dims: vec![n], values: state.var.iter().map(f).collect() });
    }
    out
}

pub fn write_blobs(w: &mut impl Write, blobs: &[Blob]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(blobs.len() as u32).to_le_bytes())?;
    for b in blobs {
        let name = b.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::InvalidArgument(format!("blob name too long: {}", b.name)))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[b.dims.len() as u8])?;
        for d in &b.dims {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        for v in &b.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_blobs(bytes: &[u8]) -> Result<Vec<Blob>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Format("not a checkpoint (missing AVSE magic)".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = c.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(c.take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| Error::Format("blob name is not UTF-8".into()))?;
        let rank = c.take(1)?[0] as usize;
        let dims = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let values = c.take(n.checked_mul(4).ok_or_else(|| Error::Format(format!("blob {name} is too large")))?)?;
        let values = values.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        out.push(Blob { name, dims, values });
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after the last blob", bytes.len() - c.pos)));
    }
    Ok(out)
}

pub fn write_checkpoint<T: Scalar>(w: &mut impl Write, net: &EnhancementNet<T>) -> Result<()> {
    write_blobs(w, &blobs(net))
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, net: &EnhancementNet<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, net)?;
    w.flush()?;
    Ok(())
}

/// Rebuilds a network from checkpoint bytes. Every parameter and
/// normalization state must be present with matching dimensions.
pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<EnhancementNet<T>> {
    let blobs = read_blobs(bytes)?;
    let meta = blobs.iter().find(|b| b.name == META).ok_or_else(|| Error::Format("checkpoint has no meta/net blob".into()))?;
    let [visual_dim, mag_channels, phase_channels, n_mels, n_freqs] = meta.values[..]
        .try_into()
        .map(|v: [f32; 5]| v.map(|x| x as usize))
        .map_err(|_| Error::Format("meta/net must hold 5 values".into()))?;
    let config = NetConfig { visual_dim, mag_channels, phase_channels, n_mels, n_freqs, ..NetConfig::full() };
    let mut net = EnhancementNet::<T>::new(config, 0).map_err(|e| Error::Format(format!("invalid network dimensions: {e}")))?;
    let mut seen = 0usize;
    for b in &blobs {
        if b.name == META {
            continue;
        }
        seen += 1;
        let mismatch = || Error::Format(format!("blob {} has dimensions {:?} that do not fit the network", b.name, b.dims));
        if let Some(rest) = b.name.strip_prefix(BN_PREFIX) {
            let (state, field) = rest.rsplit_once('/').ok_or_else(mismatch)?;
            let st = net.bn.states.iter_mut().find(|(n, _)| n == state).map(|(_, s)| s);
            let st = st.ok_or_else(|| Error::Format(format!("unknown normalization state {state}")))?;
            let target = match field {
                "mean" => &mut st.mean,
                "var" => &mut st.var,
                _ => return Err(mismatch()),
            };
            if b.dims != [target.len()] {
                return Err(mismatch());
            }
            target.iter_mut().zip(&b.values).for_each(|(t, v)| *t = T::of(*v as f64));
        } else {
            let id = net.params.id(&b.name).ok_or_else(|| Error::Format(format!("unknown parameter {}", b.name)))?;
            let p = net.params.get_mut(id);
            if p.dims() != b.dims {
                return Err(mismatch());
            }
            p.value.iter_mut().zip(&b.values).for_each(|(t, v)| *t = T::of(*v as f64));
        }
    }
    let expected = net.params.len() + 2 * net.bn.states.len();
    if seen != expected {
        return Err(Error::Format(format!("checkpoint holds {seen} tensors, the network needs {expected}")));
    }
    Ok(net)
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<EnhancementNet<T>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_for_f32() {
        let mut net = EnhancementNet::<f32>::new(NetConfig::toy(), 3).unwrap();
        net.bn.states[2].1.mean[1] = 0.25;
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &net).unwrap();
        assert_eq!(&bytes[..4], b"AVSE");
        let back: EnhancementNet<f32> = from_bytes(&bytes).unwrap();
        assert_eq!(back.params, net.params);
        assert_eq!(back.bn, net.bn);
        assert_eq!(back.config, net.config);
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn rejects_damaged_files() {
        let net = EnhancementNet::<f32>::new(NetConfig::toy(), 3).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &net).unwrap();
        assert!(matches!(from_bytes::<f32>(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes::<f32>(&bad), Err(Error::Format(_))));
        bytes.push(0);
        assert!(matches!(from_bytes::<f32>(&bytes), Err(Error::Format(_))));

        let partial: Vec<Blob> = blobs(&net).into_iter().take(5).collect();
        let mut b = Vec::new();
        write_blobs(&mut b, &partial).unwrap();
        assert!(from_bytes::<f32>(&b).unwrap_err().to_string().contains("needs"));
    }
}
