//! Parameter checkpoints: a named-tensor archive with shapes and f64
//! payloads behind a versioned header, written atomically (temp file, then
//! rename) and protected by a trailing CRC32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BackboneConfig, ModelError, NetworkParams, Result, WarpLayer};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"WSCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: BackboneConfig,
    pub params: NetworkParams,
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Serialize `params` with its backbone config. The tensors are written in
/// name order, so identical params produce identical bytes.
pub fn save_checkpoint(path: &Path, config: &BackboneConfig, params: &NetworkParams) -> Result<()> {
    let mut body = Vec::new();
    body.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    push_u32(&mut body, config.class_count as u32);
    body.push(config.warp_layer.index() as u8);
    for c in config.head_channels {
        push_u32(&mut body, c as u32);
    }
    for c in config.decoder_channels {
        push_u32(&mut body, c as u32);
    }
    push_u32(&mut body, params.len() as u32);
    for (name, tensor) in params.iter() {
        let name_bytes = name.as_bytes();
        body.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        body.extend_from_slice(name_bytes);
        body.push(tensor.shape().len() as u8);
        for d in tensor.shape() {
            push_u32(&mut body, *d as u32);
        }
        for v in tensor.values() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&body);

    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&body)?;
        w.write_all(&crc.to_le_bytes())?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Load a checkpoint. All tensors come back frozen (no gradient tracking);
/// use [`NetworkParams::reconstructed`] to mark a subset trainable.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 4 + 2 + 4 || &bytes[..4] != MAGIC {
        return Err(ModelError::Ckpt("bad magic or truncated header".into()));
    }
    let body = &bytes[4..bytes.len() - 4];
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32fast::hash(body) != stored_crc {
        return Err(ModelError::Ckpt("checksum mismatch".into()));
    }

    let mut off = 0usize;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if off + n > body.len() {
            return Err(ModelError::Ckpt(format!("truncated while reading {what}")));
        }
        let s = &body[off..off + n];
        off += n;
        Ok(s)
    };
    let version = u16::from_le_bytes(take(2, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Ckpt(format!("unsupported version {version}")));
    }
    let class_count = u32::from_le_bytes(take(4, "class_count")?.try_into().unwrap()) as usize;
    let wl = take(1, "warp_layer")?[0] as usize;
    let warp_layer = WarpLayer::from_index(wl)
        .ok_or_else(|| ModelError::Ckpt(format!("invalid warp layer {wl}")))?;
    let mut head_channels = [0usize; 3];
    for h in head_channels.iter_mut() {
        *h = u32::from_le_bytes(take(4, "head_channels")?.try_into().unwrap()) as usize;
    }
    let mut decoder_channels = [0usize; 3];
    for d in decoder_channels.iter_mut() {
        *d = u32::from_le_bytes(take(4, "decoder_channels")?.try_into().unwrap()) as usize;
    }
    let count = u32::from_le_bytes(take(4, "tensor count")?.try_into().unwrap()) as usize;
    if count > 1 << 16 {
        return Err(ModelError::Ckpt(format!("implausible tensor count {count}")));
    }

    let mut params = NetworkParams::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(2, "name length")?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len, "name")?.to_vec())
            .map_err(|_| ModelError::Ckpt("non-utf8 tensor name".into()))?;
        let ndim = take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(take(4, "dim")?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        if numel > 1 << 28 {
            return Err(ModelError::Ckpt(format!(
                "implausible tensor `{name}` with {numel} values"
            )));
        }
        let raw = take(numel * 8, "payload")?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(&name, Tensor::from_values(&shape, values)?);
    }
    if off != body.len() {
        return Err(ModelError::Ckpt("trailing bytes in checkpoint".into()));
    }

    Ok(Checkpoint {
        config: BackboneConfig {
            head_channels,
            decoder_channels,
            class_count,
            warp_layer,
        },
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::super::init_keyframe_params;
    use super::*;

    fn tmp_path(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!(
            "warpseg-ckpt-{}-{:x}-{name}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        p
    }

    #[test]
    fn round_trip_preserves_tensors_and_config() {
        let config = BackboneConfig::new(5);
        let params = init_keyframe_params(&config, 42);
        let path = tmp_path("roundtrip");
        save_checkpoint(&path, &config, &params).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config, config);
        assert_eq!(loaded.params.len(), params.len());
        for (name, t) in params.iter() {
            let l = loaded.params.get(name).unwrap();
            assert_eq!(l.shape(), t.shape());
            assert_eq!(l.values(), t.values());
            assert!(!l.requires_grad());
        }
        // identical params → identical bytes
        let path2 = tmp_path("roundtrip2");
        save_checkpoint(&path2, &config, &params).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        let _ = std::fs::remove_file(path);
        let _ = std::fs::remove_file(path2);
    }

    #[test]
    fn corruption_detected() {
        let config = BackboneConfig::new(3);
        let params = init_keyframe_params(&config, 0);
        let path = tmp_path("corrupt");
        save_checkpoint(&path, &config, &params).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x55;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(ModelError::Ckpt(_))));
        let _ = std::fs::remove_file(path);
    }

    #[test]
    fn no_temp_file_left_behind() {
        let config = BackboneConfig::new(3);
        let params = init_keyframe_params(&config, 0);
        let path = tmp_path("atomic");
        save_checkpoint(&path, &config, &params).unwrap();
        assert!(path.exists());
        assert!(!path.with_extension("ckpt.tmp").exists());
        let _ = std::fs::remove_file(path);
    }
}
