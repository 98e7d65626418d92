//! Binary checkpoint format.
//!
//! ```text
//! b"BSPN"                      magic
//! u32  version                 currently 1
//! u32  n                       number of layer sizes
//! u32  size[0..n]              2, width, ..., width, 1
//! u32  input transform         0 = identity, 1 = log_s
//! u32  output transform        0 = identity, 1 = bounded_logit
//! f64  params[..]              canonical flatten order
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use super::{InputTransform, Mlp, MlpConfig, OutputTransform, INPUT_DIM};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BSPN";
pub const VERSION: u32 = 1;

pub fn to_bytes(mlp: &Mlp) -> Vec<u8> {
    let cfg = mlp.config();
    let mut sizes = vec![INPUT_DIM as u32];
    sizes.extend(std::iter::repeat_n(cfg.hidden_width as u32, cfg.hidden_layers));
    sizes.push(1);

    let mut out = Vec::with_capacity(32 + 8 * mlp.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    for s in sizes {
        out.extend_from_slice(&s.to_le_bytes());
    }
    let input = match cfg.input_transform {
        InputTransform::Identity => 0u32,
        InputTransform::LogS => 1,
    };
    let output = match cfg.output_transform {
        OutputTransform::Identity => 0u32,
        OutputTransform::BoundedLogit => 1,
    };
    out.extend_from_slice(&input.to_le_bytes());
    out.extend_from_slice(&output.to_le_bytes());
    for p in mlp.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Mlp> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let n = r.u32()? as usize;
    if !(3..=1024).contains(&n) {
        return Err(Error::Format(format!("implausible layer count {n}")));
    }
    let sizes = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let width = sizes[1];
    if sizes[0] as usize != INPUT_DIM
        || sizes[n - 1] != 1
        || sizes[1..n - 1].iter().any(|&s| s != width)
    {
        return Err(Error::Format(format!("unsupported layer sizes {sizes:?}")));
    }
    let input_transform = match r.u32()? {
        0 => InputTransform::Identity,
        1 => InputTransform::LogS,
        c => return Err(Error::Format(format!("unknown input transform code {c}"))),
    };
    let output_transform = match r.u32()? {
        0 => OutputTransform::Identity,
        1 => OutputTransform::BoundedLogit,
        c => return Err(Error::Format(format!("unknown output transform code {c}"))),
    };
    let config = MlpConfig {
        hidden_layers: n - 2,
        hidden_width: width as usize,
        input_transform,
        output_transform,
    };
    let count = config.param_count();
    let raw = r.take(8 * count)?;
    if r.pos != buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after parameters",
            buf.len() - r.pos
        )));
    }
    let params = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Mlp::from_params(config, params)
}

pub fn save(mlp: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(mlp))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Mlp> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = MlpConfig {
            input_transform: InputTransform::LogS,
            output_transform: OutputTransform::BoundedLogit,
            ..MlpConfig::default()
        };
        let net = Mlp::init(cfg, 77).unwrap();
        let bytes = to_bytes(&net);
        assert_eq!(&bytes[..4], b"BSPN");
        assert_eq!(bytes.len(), 4 + 4 + 4 + 6 * 4 + 8 + 8 * 7851);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn header_layout() {
        let net = Mlp::zeros(MlpConfig {
            hidden_layers: 2,
            hidden_width: 3,
            ..MlpConfig::default()
        })
        .unwrap();
        let b = to_bytes(&net);
        let words: Vec<u32> = b[4..36]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(words, vec![1, 4, 2, 3, 3, 1, 0, 0]);
    }

    #[test]
    fn rejects_corruption() {
        let net = Mlp::init(MlpConfig::default(), 1).unwrap();
        let mut bytes = to_bytes(&net);
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(from_bytes(&bytes).is_err());
        let mut long = to_bytes(&net);
        long.push(0);
        assert!(from_bytes(&long).is_err());
    }
}
