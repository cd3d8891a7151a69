//! One-file sequence container.
//!
//! Layout (all integers little-endian):
//! magic `WSGS`, version u16, then height/width/gop_length/class_count/
//! frame_count as u32, then one record per frame: kind u8, presence mask u8,
//! image planes (3 x H x W f32), optional motion planes (dx, dy), optional
//! residual planes (3), optional label plane (u8), and a CRC32 of the record.
//! Payloads are stored at f32 precision.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DataError, Frame, FrameKind, GopSequence, LabelMap, Result};
use crate::warp::{ImageBuf, MotionMap, ResidualMap};

const MAGIC: &[u8; 4] = b"WSGS";
pub const CONTAINER_VERSION: u16 = 1;

const MASK_MOTION: u8 = 1;
const MASK_RESIDUAL: u8 = 2;
const MASK_LABEL: u8 = 4;

fn push_f32_planes(buf: &mut Vec<u8>, values: &[f64]) {
    buf.reserve(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.push(match frame.kind {
        FrameKind::Intra => 0u8,
        FrameKind::Predicted => 1u8,
    });
    let mut mask = 0u8;
    if frame.motion.is_some() {
        mask |= MASK_MOTION;
    }
    if frame.residual.is_some() {
        mask |= MASK_RESIDUAL;
    }
    if frame.label.is_some() {
        mask |= MASK_LABEL;
    }
    buf.push(mask);
    push_f32_planes(&mut buf, &frame.image.data);
    if let Some(mv) = &frame.motion {
        push_f32_planes(&mut buf, &mv.dx);
        push_f32_planes(&mut buf, &mv.dy);
    }
    if let Some(res) = &frame.residual {
        push_f32_planes(&mut buf, &res.data);
    }
    if let Some(label) = &frame.label {
        buf.extend_from_slice(&label.ids);
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

/// Serialize a sequence; the write is staged through a temp file and
/// renamed into place.
pub fn save_sequence(seq: &GopSequence, path: &Path) -> Result<()> {
    seq.validate()?;
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
        w.write_all(&(seq.height() as u32).to_le_bytes())?;
        w.write_all(&(seq.width() as u32).to_le_bytes())?;
        w.write_all(&(seq.gop_length as u32).to_le_bytes())?;
        w.write_all(&(seq.class_count as u32).to_le_bytes())?;
        w.write_all(&(seq.frames.len() as u32).to_le_bytes())?;
        for frame in &seq.frames {
            w.write_all(&encode_frame(frame))?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a, R: Read> {
    reader: &'a mut R,
}

impl<R: Read> Cursor<'_, R> {
    fn read_exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.reader
            .read_exact(buf)
            .map_err(|_| DataError::Truncated(what.to_string()))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.read_exact(&mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }
}

fn take_f32_planes(bytes: &[u8], off: &mut usize, count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let s = *off + i * 4;
        out.push(f32::from_le_bytes([bytes[s], bytes[s + 1], bytes[s + 2], bytes[s + 3]]) as f64);
    }
    *off += count * 4;
    out
}

pub fn load_sequence(path: &Path) -> Result<GopSequence> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut cur = Cursor {
        reader: &mut reader,
    };
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(DataError::MalformedHeader(format!(
            "bad magic {magic:02x?}"
        )));
    }
    let version = cur.u16("version")?;
    if version != CONTAINER_VERSION {
        return Err(DataError::UnsupportedVersion(version));
    }
    let h = cur.u32("height")? as usize;
    let w = cur.u32("width")? as usize;
    let gop_length = cur.u32("gop_length")? as usize;
    let class_count = cur.u32("class_count")? as usize;
    let frame_count = cur.u32("frame_count")? as usize;
    if h == 0 || w == 0 || h > 1 << 14 || w > 1 << 14 || frame_count > 1 << 20 {
        return Err(DataError::MalformedHeader(format!(
            "implausible geometry {h}x{w} x {frame_count} frames"
        )));
    }

    let plane = h * w;
    let mut frames = Vec::with_capacity(frame_count);
    for fi in 0..frame_count {
        let mut head = [0u8; 2];
        cur.read_exact(&mut head, &format!("frame {fi} header"))?;
        let (kind_byte, mask) = (head[0], head[1]);
        let kind = match kind_byte {
            0 => FrameKind::Intra,
            1 => FrameKind::Predicted,
            other => {
                return Err(DataError::Invalid(format!(
                    "frame {fi} has unknown kind tag {other}"
                )))
            }
        };
        let mut payload_len = 3 * plane * 4;
        if mask & MASK_MOTION != 0 {
            payload_len += 2 * plane * 4;
        }
        if mask & MASK_RESIDUAL != 0 {
            payload_len += 3 * plane * 4;
        }
        if mask & MASK_LABEL != 0 {
            payload_len += plane;
        }
        let mut payload = vec![0u8; payload_len];
        cur.read_exact(&mut payload, &format!("frame {fi} payload"))?;
        let stored_crc = cur.u32(&format!("frame {fi} checksum"))?;
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&head);
        hasher.update(&payload);
        if hasher.finalize() != stored_crc {
            return Err(DataError::ChecksumMismatch { frame: fi });
        }

        let mut off = 0usize;
        let image = ImageBuf::from_data(h, w, 3, take_f32_planes(&payload, &mut off, 3 * plane))
            .map_err(|e| DataError::Invalid(e.to_string()))?;
        let motion = if mask & MASK_MOTION != 0 {
            let dx = take_f32_planes(&payload, &mut off, plane);
            let dy = take_f32_planes(&payload, &mut off, plane);
            Some(
                MotionMap::new(h, w, dx, dy)
                    .map_err(|e| DataError::Invalid(format!("frame {fi}: {e}")))?,
            )
        } else {
            None
        };
        let residual = if mask & MASK_RESIDUAL != 0 {
            Some(
                ResidualMap::from_data(h, w, take_f32_planes(&payload, &mut off, 3 * plane))
                    .map_err(|e| DataError::Invalid(format!("frame {fi}: {e}")))?,
            )
        } else {
            None
        };
        let label = if mask & MASK_LABEL != 0 {
            Some(LabelMap::new(h, w, payload[off..off + plane].to_vec())?)
        } else {
            None
        };
        frames.push(Frame {
            kind,
            image,
            motion,
            residual,
            label,
        });
    }
    let mut trailing = [0u8; 1];
    if cur.reader.read(&mut trailing)? != 0 {
        return Err(DataError::MalformedHeader(
            "trailing bytes after last frame".into(),
        ));
    }

    let seq = GopSequence {
        gop_length,
        class_count,
        frames,
    };
    seq.validate()?;
    Ok(seq)
}
