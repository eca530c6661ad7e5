//! Binary checkpoint format: a small header (magic, schema version, layer
//! dims, activation tags, flags) followed by little-endian f64 parameters in
//! layer order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::encoder::EncoderNetwork;
use super::net::{Activation, DenseNet, Layer};
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

const NET_MAGIC: &[u8; 4] = b"QNET";
const ENCODER_MAGIC: &[u8; 4] = b"ENCD";

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Tanh => 1,
        Activation::Identity => 2,
    }
}

fn activation_from_tag(tag: u8) -> Result<Activation> {
    match tag {
        0 => Ok(Activation::Relu),
        1 => Ok(Activation::Tanh),
        2 => Ok(Activation::Identity),
        other => Err(Error::format(format!("unknown activation tag {other}"))),
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut buf = [0u8; 1];
    r.read_exact(&mut buf)?;
    Ok(buf[0])
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

pub fn write_net(w: &mut impl Write, net: &DenseNet) -> Result<()> {
    w.write_all(NET_MAGIC)?;
    write_u32(w, CHECKPOINT_SCHEMA_VERSION)?;
    w.write_all(&[u8::from(net.layer_norm_head)])?;
    write_u32(w, net.layers.len() as u32)?;
    for layer in &net.layers {
        write_u32(w, layer.in_dim() as u32)?;
        write_u32(w, layer.out_dim() as u32)?;
        w.write_all(&[activation_tag(layer.activation)])?;
    }
    for layer in &net.layers {
        for v in layer.weight.iter() {
            write_f64(w, *v)?;
        }
        for v in layer.bias.iter() {
            write_f64(w, *v)?;
        }
    }
    Ok(())
}

pub fn read_net(r: &mut impl Read) -> Result<DenseNet> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != NET_MAGIC {
        return Err(Error::format("not a network checkpoint".to_string()));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: version,
            expected: CHECKPOINT_SCHEMA_VERSION,
        });
    }
    let layer_norm_head = read_u8(r)? != 0;
    let n_layers = read_u32(r)? as usize;
    let mut shapes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let in_dim = read_u32(r)? as usize;
        let out_dim = read_u32(r)? as usize;
        let activation = activation_from_tag(read_u8(r)?)?;
        shapes.push((in_dim, out_dim, activation));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for (in_dim, out_dim, activation) in shapes {
        let mut weight = Array2::zeros((out_dim, in_dim));
        for v in weight.iter_mut() {
            *v = read_f64(r)?;
        }
        let mut bias = Array1::zeros(out_dim);
        for v in bias.iter_mut() {
            *v = read_f64(r)?;
        }
        layers.push(Layer {
            weight,
            bias,
            activation,
        });
    }
    let net = DenseNet {
        layers,
        layer_norm_head,
    };
    // chained layer dims
    for w in net.layers.windows(2) {
        if w[0].out_dim() != w[1].in_dim() {
            return Err(Error::format("layer dimensions do not chain".to_string()));
        }
    }
    Ok(net)
}

pub fn save_net(path: impl AsRef<Path>, net: &DenseNet) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_net(&mut file, net)
}

pub fn load_net(path: impl AsRef<Path>) -> Result<DenseNet> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_net(&mut file)
}

pub fn write_encoder(w: &mut impl Write, enc: &EncoderNetwork) -> Result<()> {
    w.write_all(ENCODER_MAGIC)?;
    write_u32(w, CHECKPOINT_SCHEMA_VERSION)?;
    write_u32(w, enc.output_dim as u32)?;
    write_f64(w, enc.beta)?;
    write_f64(w, enc.kappa)?;
    write_net(w, &enc.online)?;
    write_net(w, &enc.target)
}

pub fn read_encoder(r: &mut impl Read) -> Result<EncoderNetwork> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != ENCODER_MAGIC {
        return Err(Error::format("not an encoder checkpoint".to_string()));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: version,
            expected: CHECKPOINT_SCHEMA_VERSION,
        });
    }
    let output_dim = read_u32(r)? as usize;
    let beta = read_f64(r)?;
    let kappa = read_f64(r)?;
    let online = read_net(r)?;
    let target = read_net(r)?;
    if online.dims() != target.dims() {
        return Err(Error::format(
            "online and target shapes disagree".to_string(),
        ));
    }
    if online.out_dim() != output_dim {
        return Err(Error::format("output_dim disagrees with head".to_string()));
    }
    Ok(EncoderNetwork {
        online,
        target,
        output_dim,
        beta,
        kappa,
    })
}

pub fn save_encoder(path: impl AsRef<Path>, enc: &EncoderNetwork) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_encoder(&mut file, enc)
}

pub fn load_encoder(path: impl AsRef<Path>) -> Result<EncoderNetwork> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_encoder(&mut file)
}
