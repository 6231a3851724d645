//! Binary parameter files.
//!
//! Layout (all integers `u32` little-endian, all reals `f64` little-endian):
//!
//! ```text
//! "POER" | version | kind | payload
//! kind 1 (network): layer_count | dropout_rate | per layer:
//!     activation | tensor(weight) | tensor(bias)
//! kind 2 (tensor list): count | tensor...
//! tensor: ndim | dims... | row-major data
//! ```

use std::io::{Read, Write};

use super::mlp::{Activation, Layer, MlpParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"POER";
pub const VERSION: u32 = 1;
const KIND_NETWORK: u32 = 1;
const KIND_TENSORS: u32 = 2;

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    put_u32(w, t.shape().len() as u32)?;
    for &d in t.shape() {
        put_u32(w, d as u32)?;
    }
    for &v in t.data() {
        put_f64(w, v)?;
    }
    Ok(())
}

fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let ndim = get_u32(r)? as usize;
    if ndim > 8 {
        return Err(Error::Usage(format!("implausible tensor rank {ndim}")));
    }
    let shape = (0..ndim)
        .map(|_| get_u32(r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| get_f64(r)).collect::<Result<Vec<_>>>()?;
    Tensor::new(shape, data)
}

fn write_header(w: &mut impl Write, kind: u32) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    put_u32(w, kind)
}

fn read_header(r: &mut impl Read, kind: u32) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Usage("bad magic".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(Error::Usage(format!("unsupported version {version}")));
    }
    let found = get_u32(r)?;
    if found != kind {
        return Err(Error::Usage(format!("expected record kind {kind}, found {found}")));
    }
    Ok(())
}

pub fn write_mlp(w: &mut impl Write, params: &MlpParams) -> Result<()> {
    write_header(w, KIND_NETWORK)?;
    put_u32(w, params.layers.len() as u32)?;
    put_f64(w, params.dropout_rate)?;
    for layer in &params.layers {
        put_u32(w, layer.activation.tag())?;
        write_tensor(w, &layer.weight)?;
        write_tensor(w, &layer.bias)?;
    }
    Ok(())
}

pub fn read_mlp(r: &mut impl Read) -> Result<MlpParams> {
    read_header(r, KIND_NETWORK)?;
    let count = get_u32(r)? as usize;
    let dropout_rate = get_f64(r)?;
    let mut layers = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let tag = get_u32(r)?;
        let activation = Activation::from_tag(tag)
            .ok_or_else(|| Error::Usage(format!("unknown activation tag {tag}")))?;
        let weight = read_tensor(r)?;
        let bias = read_tensor(r)?;
        layers.push(Layer {
            weight,
            bias,
            activation,
        });
    }
    MlpParams::new(layers, dropout_rate)
}

pub fn write_tensors(w: &mut impl Write, tensors: &[Tensor]) -> Result<()> {
    write_header(w, KIND_TENSORS)?;
    put_u32(w, tensors.len() as u32)?;
    tensors.iter().try_for_each(|t| write_tensor(w, t))
}

pub fn read_tensors(r: &mut impl Read) -> Result<Vec<Tensor>> {
    read_header(r, KIND_TENSORS)?;
    let count = get_u32(r)? as usize;
    (0..count).map(|_| read_tensor(r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #[test]
        fn network_round_trips(seed in any::<u64>(), hidden in 1usize..10, dropout in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = MlpParams::init(&[3, hidden, 2], Activation::Tanh, Activation::Softmax, dropout, &mut rng).unwrap();
            let mut buf = Vec::new();
            write_mlp(&mut buf, &net).unwrap();
            prop_assert_eq!(&buf[..4], MAGIC);
            let back = read_mlp(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back, net);
        }
    }

    #[test]
    fn header_is_checked() {
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[Tensor::scalar(1.0)]).unwrap();
        assert!(read_mlp(&mut buf.as_slice()).is_err());
        assert_eq!(read_tensors(&mut buf.as_slice()).unwrap(), vec![Tensor::scalar(1.0)]);
        buf[0] = b'X';
        assert!(read_tensors(&mut buf.as_slice()).is_err());
    }
}
