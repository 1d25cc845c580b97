//! Self-contained binary checkpoints.
//!
//! Layout (integers little-endian, floats as IEEE-754 bit patterns):
//! magic `VSEGCKPT`, format version, length-prefixed config JSON, run seed,
//! epoch, step, optional best validation Dice, the parameter table, then the
//! optimizer moments. Writing is insertion-ordered throughout, so identical
//! runs produce byte-identical files.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::nets::init_params;
use crate::params::{validate_compatible, ParamMap};

use super::{AdamSlot, AdamState, TrainConfig};

const MAGIC: &[u8; 8] = b"VSEGCKPT";
const VERSION: u32 = 1;

/// Everything needed to resume or evaluate a run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub seed: u64,
    pub epoch: u64,
    pub step: u64,
    pub best_dice: Option<f64>,
    pub params: ParamMap,
    pub opt: AdamState,
}

fn w_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_bytes(w: &mut impl Write, bytes: &[u8]) -> Result<()> {
    w_u64(w, bytes.len() as u64)?;
    w.write_all(bytes)?;
    Ok(())
}

fn w_array(w: &mut impl Write, a: &ArrayD<f64>) -> Result<()> {
    w_u64(w, a.ndim() as u64)?;
    for d in a.shape() {
        w_u64(w, *d as u64)?;
    }
    let mut buf = Vec::with_capacity(a.len() * 8);
    for v in a.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn r_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn r_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn r_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn r_bytes(r: &mut impl Read) -> Result<Vec<u8>> {
    let len = r_u64(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn r_string(r: &mut impl Read) -> Result<String> {
    String::from_utf8(r_bytes(r)?)
        .map_err(|e| Error::Checkpoint(format!("invalid UTF-8 in name: {e}")))
}

fn r_array(r: &mut impl Read) -> Result<ArrayD<f64>> {
    let ndim = r_u64(r)? as usize;
    if ndim > 8 {
        return Err(Error::Checkpoint(format!(
            "implausible array rank {ndim}"
        )));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(r_u64(r)? as usize);
    }
    let len: usize = dims.iter().product();
    let mut buf = vec![0u8; len * 8];
    r.read_exact(&mut buf)?;
    let data: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight bytes")))
        .collect();
    ArrayD::from_shape_vec(IxDyn(&dims), data)
        .map_err(|e| Error::Checkpoint(format!("array shape {dims:?}: {e}")))
}

/// Serializes a checkpoint. The write is deterministic: the same in-memory
/// state always produces the same bytes.
pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w_u32(&mut w, VERSION)?;
    w_bytes(&mut w, &serde_json::to_vec(&ckpt.config)?)?;
    w_u64(&mut w, ckpt.seed)?;
    w_u64(&mut w, ckpt.epoch)?;
    w_u64(&mut w, ckpt.step)?;
    match ckpt.best_dice {
        Some(d) => {
            w.write_all(&[1])?;
            w_f64(&mut w, d)?;
        }
        None => {
            w.write_all(&[0])?;
            w_f64(&mut w, 0.0)?;
        }
    }
    w_u64(&mut w, ckpt.params.len() as u64)?;
    for (name, value) in ckpt.params.iter() {
        w_bytes(&mut w, name.as_bytes())?;
        w_array(&mut w, value)?;
    }
    w_f64(&mut w, ckpt.opt.beta1)?;
    w_f64(&mut w, ckpt.opt.beta2)?;
    w_f64(&mut w, ckpt.opt.eps)?;
    w_u64(&mut w, ckpt.opt.slots.len() as u64)?;
    for (name, slot) in &ckpt.opt.slots {
        w_bytes(&mut w, name.as_bytes())?;
        w_u64(&mut w, slot.t)?;
        w_array(&mut w, &slot.m)?;
        w_array(&mut w, &slot.v)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads and validates a checkpoint: magic and version must match, the
/// embedded config must validate, the parameter table must carry exactly the
/// names and shapes that config implies, and every optimizer slot must match
/// its parameter.
pub fn load(path: &Path) -> Result<Checkpoint> {
    let file = fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = r_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let config: TrainConfig = serde_json::from_slice(&r_bytes(&mut r)?)?;
    config.validate()?;
    let seed = r_u64(&mut r)?;
    let epoch = r_u64(&mut r)?;
    let step = r_u64(&mut r)?;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let dice_bits = r_f64(&mut r)?;
    let best_dice = if flag[0] == 1 { Some(dice_bits) } else { None };

    let n_params = r_u64(&mut r)? as usize;
    let mut params = ParamMap::new();
    for _ in 0..n_params {
        let name = r_string(&mut r)?;
        let value = r_array(&mut r)?;
        params.insert(name, value);
    }

    let mut opt = AdamState {
        beta1: r_f64(&mut r)?,
        beta2: r_f64(&mut r)?,
        eps: r_f64(&mut r)?,
        slots: IndexMap::new(),
    };
    let n_slots = r_u64(&mut r)? as usize;
    for _ in 0..n_slots {
        let name = r_string(&mut r)?;
        let t = r_u64(&mut r)?;
        let m = r_array(&mut r)?;
        let v = r_array(&mut r)?;
        opt.slots.insert(name, AdamSlot { m, v, t });
    }

    let reference = init_params(&config.model, 0)?;
    validate_compatible(&reference, &params)?;
    for (name, slot) in &opt.slots {
        let p = params.get(name).ok_or_else(|| {
            Error::Checkpoint(format!("optimizer slot `{name}` has no parameter"))
        })?;
        if p.shape() != slot.m.shape() || p.shape() != slot.v.shape() {
            return Err(Error::Checkpoint(format!(
                "optimizer slot `{name}` shape {:?}/{:?} does not match parameter {:?}",
                slot.m.shape(),
                slot.v.shape(),
                p.shape()
            )));
        }
    }

    Ok(Checkpoint {
        config,
        seed,
        epoch,
        step,
        best_dice,
        params,
        opt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::tiny_config;

    fn sample_checkpoint() -> Checkpoint {
        let config = TrainConfig {
            model: tiny_config(),
            ..TrainConfig::default()
        };
        let params = init_params(&config.model, 77).unwrap();
        let mut opt = AdamState::new();
        let first = params.names().next().unwrap().clone();
        let shape = params.get(&first).unwrap().raw_dim();
        opt.slots.insert(
            first,
            AdamSlot {
                m: ArrayD::from_elem(shape.clone(), 0.25),
                v: ArrayD::from_elem(shape, 0.125),
                t: 42,
            },
        );
        Checkpoint {
            config,
            seed: 9001,
            epoch: 3,
            step: 120,
            best_dice: Some(0.8125),
            params,
            opt,
        }
    }

    #[test]
    fn round_trip_preserves_state_and_resaves_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let ckpt = sample_checkpoint();
        save(&ckpt, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.config, ckpt.config);
        assert_eq!(loaded.seed, 9001);
        assert_eq!(loaded.epoch, 3);
        assert_eq!(loaded.step, 120);
        assert_eq!(loaded.best_dice, Some(0.8125));
        assert_eq!(loaded.params.digest(None), ckpt.params.digest(None));
        assert_eq!(loaded.opt.slots["image_encoder.stage1.patch.weight"].t, 42);

        let path2 = dir.path().join("b.ckpt");
        save(&loaded, &path2).unwrap();
        assert_eq!(
            fs::read(&path).unwrap(),
            fs::read(&path2).unwrap(),
            "save -> load -> save must be byte-stable"
        );
    }

    #[test]
    fn absent_best_dice_survives_the_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let mut ckpt = sample_checkpoint();
        ckpt.best_dice = None;
        save(&ckpt, &path).unwrap();
        assert_eq!(load(&path).unwrap().best_dice, None);
    }

    #[test]
    fn foreign_and_truncated_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.ckpt");
        fs::write(&bad, b"PNGPNGPNG not a checkpoint").unwrap();
        assert!(matches!(load(&bad), Err(Error::Checkpoint(_))));

        let path = dir.path().join("a.ckpt");
        save(&sample_checkpoint(), &path).unwrap();
        let full = fs::read(&path).unwrap();
        let cut = dir.path().join("cut.ckpt");
        fs::write(&cut, &full[..full.len() / 2]).unwrap();
        assert!(load(&cut).is_err(), "truncated checkpoint must not load");
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        save(&sample_checkpoint(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[8] = 99; // version field sits right after the magic
        let tampered = dir.path().join("v99.ckpt");
        fs::write(&tampered, bytes).unwrap();
        match load(&tampered) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("version")),
            other => panic!("expected a version error, got {other:?}"),
        }
    }

    #[test]
    fn missing_parameters_fail_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let mut ckpt = sample_checkpoint();
        // Rebuild the table without its last parameter.
        let names: Vec<String> = ckpt.params.names().cloned().collect();
        let mut pruned = ParamMap::new();
        for name in &names[..names.len() - 1] {
            pruned.insert(name.clone(), ckpt.params.get(name).unwrap().clone());
        }
        ckpt.params = pruned;
        save(&ckpt, &path).unwrap();
        assert!(matches!(load(&path), Err(Error::Checkpoint(_))));
    }
}
