//! Checkpoint format: magic `ISACDM1\0`, a little-endian `u64` byte length,
//! a text manifest (`meta` key/value lines, then one `tensor name d0 d1 ..`
//! line per tensor), and finally every tensor as little-endian `f64` in
//! manifest order.

use std::io::{Read, Write};

use super::{Architecture, NoiseEstimator, Propagation};
use crate::config::Vec3;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ISACDM1\0";

fn join(v: &[usize]) -> String {
    v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

fn join_points(v: &[Vec3]) -> String {
    v.iter().flatten().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn parse_points(s: &str, n: usize) -> Result<Vec<Vec3>> {
    let v = s.split(',').map(|x| x.parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>();
    match v {
        Ok(v) if v.len() == 3 * n => Ok(v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()),
        _ => Err(Error::Format(format!("bad antenna positions (expected {n})"))),
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &NoiseEstimator) -> Result<()> {
    let t = &model.transfer;
    let mut manifest = String::new();
    let mut meta = |k: &str, v: String| manifest.push_str(&format!("meta {k} {v}\n"));
    meta("n_rx", t.n_rx.to_string());
    meta("n_tx", t.n_tx.to_string());
    meta("noise_dims", join(&model.noise.dims));
    meta("transfer_width", t.width.to_string());
    meta("transfer_blocks", t.blocks.to_string());
    meta("l_bar", t.l_bar.to_string());
    meta("center_scale_m", format!("{:?}", t.center_scale_m));
    meta("rms_out", format!("{:?}", t.rms_out));
    meta("rms_ref", format!("{:?}", model.rms_ref));
    let s = model.scale_hint_m;
    meta("scale_hint_m", format!("{:?},{:?},{:?}", s[0], s[1], s[2]));
    if let Some(p) = &t.propagation {
        meta("wavenumber", format!("{:?}", p.wavenumber));
        meta("rx_m", join_points(&p.rx_m));
        meta("tx_m", join_points(&p.tx_m));
    }
    let tensors = model.noise.params.tensors.iter().chain(&t.params.tensors);
    for ten in tensors.clone() {
        let dims: Vec<String> = ten.shape.iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("tensor {} {}\n", ten.name, dims.join(" ")));
    }
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(manifest.len() as u64).to_le_bytes())?;
    w.write_all(manifest.as_bytes())?;
    for ten in tensors {
        for v in &ten.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<NoiseEstimator> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a diffusion checkpoint (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 24 {
        return Err(Error::Format(format!("manifest length {len} is implausible")));
    }
    let mut text = vec![0u8; len];
    r.read_exact(&mut text)?;
    let text = String::from_utf8(text).map_err(|_| Error::Format("manifest is not UTF-8".into()))?;

    let mut meta = std::collections::HashMap::new();
    let mut entries = Vec::new();
    for line in text.lines() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("meta") => {
                let (Some(k), Some(v)) = (parts.next(), parts.next()) else {
                    return Err(Error::Format(format!("bad meta line: {line}")));
                };
                meta.insert(k.to_string(), v.to_string());
            }
            Some("tensor") => {
                let name = parts.next().ok_or_else(|| Error::Format(format!("bad tensor line: {line}")))?;
                let shape = parts
                    .map(|d| d.parse::<usize>().map_err(|_| Error::Format(format!("bad dimension in: {line}"))))
                    .collect::<Result<Vec<_>>>()?;
                entries.push((name.to_string(), shape));
            }
            _ => return Err(Error::Format(format!("unexpected manifest line: {line}"))),
        }
    }
    let get = |k: &str| meta.get(k).ok_or_else(|| Error::Format(format!("checkpoint lacks {k}")));
    let uint = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Format(format!("bad {k}"))) };
    let real = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Format(format!("bad {k}"))) };
    let noise_dims = get("noise_dims")?
        .split(',')
        .map(|d| d.parse::<usize>().map_err(|_| Error::Format("bad noise_dims".into())))
        .collect::<Result<Vec<_>>>()?;
    let arch = Architecture {
        noise_dims,
        transfer_width: uint("transfer_width")?,
        transfer_blocks: uint("transfer_blocks")?,
        l_bar: uint("l_bar")?,
    };
    let mut model = NoiseEstimator::new(uint("n_rx")?, uint("n_tx")?, real("center_scale_m")?, &arch, 0)?;
    model.transfer.rms_out = real("rms_out")?;
    model.rms_ref = real("rms_ref")?;
    let hint: Vec<f64> = get("scale_hint_m")?
        .split(',')
        .map(|v| v.parse::<f64>().map_err(|_| Error::Format("bad scale_hint_m".into())))
        .collect::<Result<_>>()?;
    if hint.len() != 3 {
        return Err(Error::Format("scale_hint_m needs three values".into()));
    }
    model.scale_hint_m = [hint[0], hint[1], hint[2]];
    if meta.contains_key("wavenumber") {
        model.transfer.propagation = Some(Propagation {
            wavenumber: real("wavenumber")?,
            rx_m: parse_points(get("rx_m")?, model.n_rx())?,
            tx_m: parse_points(get("tx_m")?, model.n_tx())?,
        });
    }

    let slots = model.noise.params.tensors.iter_mut().chain(model.transfer.params.tensors.iter_mut());
    let mut filled = 0;
    for (slot, (name, shape)) in slots.zip(&entries) {
        if &slot.name != name || &slot.shape != shape {
            return Err(Error::Format(format!("tensor {name} {shape:?} does not match architecture ({} {:?})", slot.name, slot.shape)));
        }
        let mut buf = vec![0u8; 8 * slot.data.len()];
        r.read_exact(&mut buf)?;
        for (v, b) in slot.data.iter_mut().zip(buf.chunks_exact(8)) {
            *v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
        }
        filled += 1;
    }
    let expected = model.noise.params.tensors.len() + model.transfer.params.tensors.len();
    if filled != expected || entries.len() != expected {
        return Err(Error::Format(format!("checkpoint lists {} tensors, architecture has {expected}", entries.len())));
    }
    Ok(model)
}
