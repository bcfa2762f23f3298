//! Binary checkpoint format: 8-byte magic, little-endian u64 header
//! length, JSON header (config, seed, epoch, dtype, parameter slab
//! lengths, optimizer metadata, input normalizer), then the raw
//! little-endian parameter payload. Reload is bit-exact.

use super::optim::RmsProp;
use super::{Network, Scalar, Stage};
use crate::data::Normalizer;
use crate::nn::NetConfig;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"GCLCKPT1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    seed: u64,
    epoch: usize,
    dtype: String,
    /// (weight_len, bias_len) per parametrized stage, in stage order.
    param_lens: Vec<(usize, usize)>,
    opt_lr: Option<f64>,
    normalizer: Option<Normalizer>,
}

pub struct LoadedCheckpoint<S: Scalar> {
    pub net: Network<S>,
    pub epoch: usize,
    pub opt: Option<RmsProp<S>>,
    pub normalizer: Option<Normalizer>,
}

fn param_slabs<S: Scalar>(net: &Network<S>) -> Vec<(&[S], &[S])> {
    net.stages
        .iter()
        .filter_map(|s| match s {
            Stage::Conv(c) => Some((c.w.as_slice(), c.b.as_slice())),
            Stage::Dense(d) => Some((d.w.as_slice(), d.b.as_slice())),
            _ => None,
        })
        .collect()
}

pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    net: &Network<S>,
    epoch: usize,
    opt: Option<&RmsProp<S>>,
    normalizer: Option<&Normalizer>,
) -> Result<()> {
    let slabs = param_slabs(net);
    let header = Header {
        config: net.config.clone(),
        seed: net.seed,
        epoch,
        dtype: S::DTYPE.to_string(),
        param_lens: slabs.iter().map(|(w, b)| (w.len(), b.len())).collect(),
        opt_lr: opt.map(|o| o.lr.to_f64()),
        normalizer: normalizer.cloned(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;

    let mut payload = Vec::new();
    for (w, b) in &slabs {
        for &v in *w {
            v.write_le(&mut payload);
        }
        for &v in *b {
            v.write_le(&mut payload);
        }
    }
    if let Some(opt) = opt {
        for slab in &opt.acc {
            for &v in slab {
                v.write_le(&mut payload);
            }
        }
    }

    // written to a sibling temp file first so a crash mid-write never
    // truncates an existing checkpoint
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(MAGIC).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&(header_json.len() as u64).to_le_bytes()).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&header_json).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&payload).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<LoadedCheckpoint<S>> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(Error::FileFormat {
            path: path.to_path_buf(),
            message: "not a checkpoint file (bad magic)".into(),
        });
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes).map_err(|e| Error::io(path, e))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    if header_len > 1 << 20 {
        return Err(Error::FileFormat {
            path: path.to_path_buf(),
            message: format!("implausible header length {header_len}"),
        });
    }
    let mut header_json = vec![0u8; header_len];
    f.read_exact(&mut header_json).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_slice(&header_json).map_err(|e| Error::FileFormat {
        path: path.to_path_buf(),
        message: format!("header decode: {e}"),
    })?;
    if header.dtype != S::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} parameters, loader instantiated for {}",
            header.dtype,
            S::DTYPE
        )));
    }

    let mut net: Network<S> = Network::custom(&header.config, header.seed)?;
    let expect: Vec<(usize, usize)> =
        param_slabs(&net).iter().map(|(w, b)| (w.len(), b.len())).collect();
    if expect != header.param_lens {
        return Err(Error::Checkpoint(format!(
            "parameter layout {:?} does not match config-derived {:?}",
            header.param_lens, expect
        )));
    }

    let mut payload = Vec::new();
    f.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    let n_params: usize = header.param_lens.iter().map(|(w, b)| w + b).sum();
    let want = n_params * S::BYTES * if header.opt_lr.is_some() { 2 } else { 1 };
    if payload.len() != want {
        return Err(Error::Checkpoint(format!(
            "payload is {} bytes, expected {want}",
            payload.len()
        )));
    }

    let mut off = 0usize;
    let mut take = |n: usize, payload: &[u8]| -> Vec<S> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(S::read_le(&payload[off..off + S::BYTES]));
            off += S::BYTES;
        }
        out
    };
    for stage in net.stages.iter_mut() {
        let (w, b) = match stage {
            Stage::Conv(c) => (&mut c.w, &mut c.b),
            Stage::Dense(d) => (&mut d.w, &mut d.b),
            _ => continue,
        };
        *w = take(w.len(), &payload);
        *b = take(b.len(), &payload);
    }
    let opt = if let Some(lr) = header.opt_lr {
        let mut opt = RmsProp::new(&net, lr);
        for slab in opt.acc.iter_mut() {
            *slab = take(slab.len(), &payload);
        }
        Some(opt)
    } else {
        None
    };
    debug_assert_eq!(off, payload.len());

    Ok(LoadedCheckpoint { net, epoch: header.epoch, opt, normalizer: header.normalizer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Head, NetConfig, NetKind};

    fn small_net(seed: u64) -> Network<f32> {
        let config = NetConfig {
            kind: NetKind::Conv,
            n_layers: 2,
            n_classes: 3,
            base_width: 4,
            width_step: 2,
            penultimate_width: 8,
            head: Head::Softmax,
            input_hw: 12,
            input_channels: 3,
        };
        Network::custom(&config, seed).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = small_net(7);
        let mut opt = RmsProp::new(&net, 0.001);
        for slab in opt.acc.iter_mut() {
            for (i, v) in slab.iter_mut().enumerate() {
                *v = 0.001 * (i as f32 + 1.0);
            }
        }
        let norm = Normalizer { mean: vec![0.1, -0.2, 0.3], std: vec![0.9, 1.1, 1.0] };
        save_checkpoint(&path, &net, 5, Some(&opt), Some(&norm)).unwrap();
        let loaded = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(loaded.epoch, 5);
        assert_eq!(loaded.net.config, net.config);
        assert_eq!(loaded.net.seed, net.seed);
        for i in 0..net.param_count() {
            assert!(net.get_param(i).to_bits() == loaded.net.get_param(i).to_bits());
        }
        let lopt = loaded.opt.unwrap();
        assert_eq!(lopt.lr, opt.lr);
        for (a, b) in opt.acc.iter().zip(&lopt.acc) {
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b) {
                assert!(x.to_bits() == y.to_bits());
            }
        }
        assert_eq!(loaded.normalizer.unwrap().mean, norm.mean);
    }

    #[test]
    fn save_without_optimizer_loads_none() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&path, &small_net(1), 0, None, None).unwrap();
        let loaded = load_checkpoint::<f32>(&path).unwrap();
        assert!(loaded.opt.is_none());
        assert!(loaded.normalizer.is_none());
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&path, &small_net(1), 0, None, None).unwrap();
        assert!(load_checkpoint::<f64>(&path).is_err());
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxx").unwrap();
        assert!(load_checkpoint::<f32>(&path).is_err());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&path, &small_net(1), 0, None, None).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load_checkpoint::<f32>(&path).is_err());
    }
}
