//! Binary weight file.
//!
//! Layout, all little-endian:
//! `"DGN1"`, u32 version, config block (u32 d_in, width, depth; u8 variant,
//! train_strength, train_gating; f64 sigma, beta, epsilon, mu), u32 count of
//! parameter sets, each as u32 layer count then per layer u32 rows, u32 cols
//! and the row-major f64 payload, then u32 count of fixed random gate blocks,
//! each as the f64 input followed by the `(d-1)·w` f64 gates. A 64-bit FNV-1a
//! hash of everything before it closes the file.

use std::fs;
use std::hash::Hasher;
use std::io::{Read, Write};
use std::path::Path;

use fnv::FnvHasher;

use crate::linalg::Matrix;

use super::{FrgGates, Gating, GatingVariant, NetConfig, Network, NetworkError, ParamSet};

pub const MAGIC: &[u8; 4] = b"DGN1";
pub const FORMAT_VERSION: u32 = 1;

fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_count(buf: &mut Vec<u8>, v: usize) -> Result<(), NetworkError> {
    let v = u32::try_from(v).map_err(|_| NetworkError::Format(format!("{v} exceeds u32")))?;
    put_u32(buf, v);
    Ok(())
}

fn put_matrix(buf: &mut Vec<u8>, m: &Matrix) -> Result<(), NetworkError> {
    put_count(buf, m.rows())?;
    put_count(buf, m.cols())?;
    for &v in m.as_slice() {
        put_f64(buf, v);
    }
    Ok(())
}

/// Serializes a network to bytes.
pub fn write_net(net: &Network) -> Result<Vec<u8>, NetworkError> {
    let c = net.config();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    put_count(&mut buf, c.d_in)?;
    put_count(&mut buf, c.width)?;
    put_count(&mut buf, c.depth)?;
    buf.push(c.variant.to_code());
    buf.push(c.train_strength as u8);
    buf.push(c.train_gating as u8);
    for v in [c.sigma, c.beta, c.epsilon, c.mu] {
        put_f64(&mut buf, v);
    }
    let sets: Vec<&ParamSet> = std::iter::once(net.strength()).chain(net.gating_params()).collect();
    put_count(&mut buf, sets.len())?;
    for set in sets {
        put_count(&mut buf, set.depth())?;
        for layer in set.layers() {
            put_matrix(&mut buf, layer)?;
        }
    }
    match net.gating() {
        Gating::Random(frg) => {
            put_count(&mut buf, frg.len())?;
            for (x, g) in frg.inputs().iter().zip(frg.gates()) {
                for &v in x {
                    put_f64(&mut buf, v);
                }
                for &v in g.as_slice() {
                    put_f64(&mut buf, v);
                }
            }
        }
        _ => put_u32(&mut buf, 0),
    }
    let sum = fnv64(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetworkError> {
        let end = self.pos.checked_add(n).ok_or(NetworkError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(NetworkError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NetworkError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, NetworkError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize, NetworkError> {
        Ok(self.u32()? as usize)
    }

    fn f64(&mut self) -> Result<f64, NetworkError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, NetworkError> {
        let raw = self.take(n.checked_mul(8).ok_or(NetworkError::Truncated)?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn flag(&mut self) -> Result<bool, NetworkError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(NetworkError::Format(format!("bad flag byte {b}"))),
        }
    }
}

/// Parses bytes produced by [`write_net`].
pub fn read_net(bytes: &[u8]) -> Result<Network, NetworkError> {
    if bytes.len() < 8 {
        return Err(if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            NetworkError::Format("bad magic".into())
        } else {
            NetworkError::Truncated
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(NetworkError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(NetworkError::Version { found: version, supported: FORMAT_VERSION });
    }
    if bytes.len() < 16 {
        return Err(NetworkError::Truncated);
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(trailer.try_into().unwrap());
    let mut cur = Cursor { bytes: body, pos: 8 };
    let parsed = parse_body(&mut cur);
    let computed = fnv64(body);
    // A short file fails the checksum too; report whichever is more specific.
    if stored != computed {
        return match parsed {
            Err(NetworkError::Truncated) => Err(NetworkError::Truncated),
            _ => Err(NetworkError::Checksum { stored, computed }),
        };
    }
    let net = parsed?;
    if cur.pos != body.len() {
        return Err(NetworkError::Format(format!(
            "{} trailing bytes before checksum",
            body.len() - cur.pos
        )));
    }
    Ok(net)
}

fn parse_body(cur: &mut Cursor<'_>) -> Result<Network, NetworkError> {
    let d_in = cur.usize()?;
    let width = cur.usize()?;
    let depth = cur.usize()?;
    let code = cur.u8()?;
    let variant = GatingVariant::from_code(code)
        .ok_or_else(|| NetworkError::Format(format!("unknown variant code {code}")))?;
    let train_strength = cur.flag()?;
    let train_gating = cur.flag()?;
    let config = NetConfig {
        d_in,
        width,
        depth,
        variant,
        sigma: cur.f64()?,
        beta: cur.f64()?,
        epsilon: cur.f64()?,
        mu: cur.f64()?,
        train_strength,
        train_gating,
    };
    config.validate()?;
    let n_sets = cur.usize()?;
    if n_sets != 1 + variant.has_gating_params() as usize {
        return Err(NetworkError::Format(format!("{n_sets} parameter sets for {variant}")));
    }
    let mut sets = Vec::with_capacity(n_sets);
    for _ in 0..n_sets {
        let n_layers = cur.usize()?;
        if n_layers != depth {
            return Err(NetworkError::Format(format!("{n_layers} layers, depth {depth}")));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let rows = cur.usize()?;
            let cols = cur.usize()?;
            let data = cur.f64s(rows.checked_mul(cols).ok_or(NetworkError::Truncated)?)?;
            layers.push(
                Matrix::from_vec(rows, cols, data).map_err(|e| NetworkError::Format(e.to_string()))?,
            );
        }
        sets.push(ParamSet::from_layers(&config, layers)?);
    }
    let n_frg = cur.usize()?;
    let gating = match variant {
        GatingVariant::Frg => {
            let mut inputs = Vec::with_capacity(n_frg);
            let mut gates = Vec::with_capacity(n_frg);
            for _ in 0..n_frg {
                inputs.push(cur.f64s(d_in)?);
                let g = cur.f64s((depth - 1) * width)?;
                gates.push(
                    Matrix::from_vec(depth - 1, width, g)
                        .map_err(|e| NetworkError::Format(e.to_string()))?,
                );
            }
            Gating::Random(FrgGates::new(inputs, gates))
        }
        _ if n_frg != 0 => {
            return Err(NetworkError::Format(format!("random gate blocks in a {variant} file")))
        }
        _ if variant.has_gating_params() => Gating::Separate(sets.pop().expect("two sets")),
        _ => Gating::Intrinsic,
    };
    let strength = sets.pop().expect("one set");
    Network::from_parts(config, strength, gating)
}

pub fn save_net(path: impl AsRef<Path>, net: &Network) -> Result<(), NetworkError> {
    let bytes = write_net(net)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_net(path: impl AsRef<Path>) -> Result<Network, NetworkError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    read_net(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Prng;

    fn nets() -> Vec<Network> {
        let mut rng = Prng::new(21);
        GatingVariant::ALL
            .into_iter()
            .map(|v| {
                let mut net = Network::init(NetConfig::new(v, 2, 3, 4), &mut rng).unwrap();
                if v == GatingVariant::Frg {
                    net.register_inputs(&[vec![0.1, 0.2], vec![-1.0, 3.0]], &mut rng).unwrap();
                }
                net
            })
            .collect()
    }

    #[test]
    fn round_trip_is_exact() {
        for net in nets() {
            let back = read_net(&write_net(&net).unwrap()).unwrap();
            assert_eq!(back, net);
        }
    }

    #[test]
    fn corrupt_magic() {
        let mut bytes = write_net(&nets()[0]).unwrap();
        bytes[0] = b'X';
        assert!(matches!(read_net(&bytes), Err(NetworkError::Format(_))));
    }

    #[test]
    fn newer_version() {
        let mut bytes = write_net(&nets()[0]).unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(read_net(&bytes), Err(NetworkError::Version { found: 2, .. })));
    }

    #[test]
    fn truncation_and_bit_flips() {
        let bytes = write_net(&nets()[5]).unwrap();
        assert!(matches!(read_net(&bytes[..bytes.len() - 20]), Err(NetworkError::Truncated)));
        assert!(matches!(read_net(&bytes[..6]), Err(NetworkError::Truncated)));
        let mut flipped = bytes.clone();
        flipped[60] ^= 0x10;
        assert!(matches!(read_net(&flipped), Err(NetworkError::Checksum { .. })));
    }
}
