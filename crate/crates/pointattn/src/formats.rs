//! Point cloud files. `.xyz`: one `x y z` line per point. `.pcb`: magic
//! `PCC1`, u32 LE count, then count × 3 f32 LE coordinates.

use std::fs;
use std::path::Path;

use pointattn_core::PointCloud;

use crate::error::{Error, Result};

pub const PCB_MAGIC: &[u8; 4] = b"PCC1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Text,
    Binary,
}

impl CloudFormat {
    pub fn of(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("xyz") => Ok(CloudFormat::Text),
            Some("pcb") => Ok(CloudFormat::Binary),
            _ => Err(Error::format(path, "unknown cloud extension, expected .xyz or .pcb")),
        }
    }
}

pub fn encode_xyz(cloud: &PointCloud<f32>) -> String {
    let mut out = String::with_capacity(cloud.len() * 30);
    for p in cloud.points() {
        out.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    out
}

/// Parses `.xyz` text; errors carry the 1-based line number.
pub fn decode_xyz(text: &str) -> std::result::Result<PointCloud<f32>, String> {
    let mut coords = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() != 3 {
            return Err(format!("line {}: expected 3 space-separated values, found {}", i + 1, fields.len()));
        }
        for f in fields {
            let v: f32 = f.parse().map_err(|_| format!("line {}: invalid number {:?}", i + 1, f))?;
            if !v.is_finite() {
                return Err(format!("line {}: non-finite coordinate", i + 1));
            }
            coords.push(v);
        }
    }
    if coords.is_empty() {
        return Err(String::from("no points"));
    }
    PointCloud::new(coords).map_err(|e| e.to_string())
}

pub fn encode_pcb(cloud: &PointCloud<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + cloud.as_slice().len() * 4);
    out.extend_from_slice(PCB_MAGIC);
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for v in cloud.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses `.pcb` bytes; errors carry the byte offset of the problem.
pub fn decode_pcb(bytes: &[u8]) -> std::result::Result<PointCloud<f32>, String> {
    if bytes.len() < 8 {
        return Err(format!("byte {}: truncated header", bytes.len()));
    }
    if &bytes[..4] != PCB_MAGIC {
        return Err(String::from("byte 0: bad magic, expected PCC1"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if count == 0 {
        return Err(String::from("byte 4: point count is zero"));
    }
    let want = count
        .checked_mul(12)
        .and_then(|n| n.checked_add(8))
        .ok_or_else(|| String::from("byte 4: point count overflows"))?;
    if bytes.len() != want {
        return Err(format!(
            "byte {}: expected {} bytes for {} points, file has {}",
            bytes.len().min(want),
            want,
            count,
            bytes.len()
        ));
    }
    let mut coords = Vec::with_capacity(count * 3);
    for (i, chunk) in bytes[8..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(format!("byte {}: non-finite coordinate", 8 + 4 * i));
        }
        coords.push(v);
    }
    PointCloud::new(coords).map_err(|e| e.to_string())
}

pub fn read_cloud(path: &Path) -> Result<PointCloud<f32>> {
    let format = CloudFormat::of(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parsed = match format {
        CloudFormat::Binary => decode_pcb(&bytes),
        CloudFormat::Text => match std::str::from_utf8(&bytes) {
            Ok(text) => decode_xyz(text),
            Err(e) => Err(format!("byte {}: invalid UTF-8", e.valid_up_to())),
        },
    };
    parsed.map_err(|msg| Error::format(path, msg))
}

pub fn write_cloud(path: &Path, cloud: &PointCloud<f32>) -> Result<()> {
    let bytes = match CloudFormat::of(path)? {
        CloudFormat::Binary => encode_pcb(cloud),
        CloudFormat::Text => encode_xyz(cloud).into_bytes(),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud() -> PointCloud<f32> {
        PointCloud::new(vec![0.1, -2.5, 3.0, 1e-7, 0.0, -0.0]).unwrap()
    }

    #[test]
    fn pcb_layout() {
        let bytes = encode_pcb(&cloud());
        assert_eq!(&bytes[..4], b"PCC1");
        assert_eq!(&bytes[4..8], &[2, 0, 0, 0]);
        assert_eq!(bytes.len(), 8 + 2 * 12);
        assert_eq!(&bytes[8..12], &0.1f32.to_le_bytes());
    }

    #[test]
    fn round_trips_are_bit_exact() {
        let c = cloud();
        assert_eq!(decode_pcb(&encode_pcb(&c)).unwrap(), c);
        let back = decode_xyz(&encode_xyz(&c)).unwrap();
        for (a, b) in back.as_slice().iter().zip(c.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn xyz_text_shape() {
        assert_eq!(encode_xyz(&cloud()), "0.1 -2.5 3\n0.0000001 0 -0\n");
    }

    #[test]
    fn rejects_zero_count_and_truncation() {
        let mut bytes = encode_pcb(&cloud());
        assert!(decode_pcb(&bytes[..bytes.len() - 1]).unwrap_err().contains("byte"));
        bytes[4..8].copy_from_slice(&0u32.to_le_bytes());
        assert!(decode_pcb(&bytes).unwrap_err().contains("zero"));
        assert!(decode_pcb(b"PCX1\x01\0\0\0").unwrap_err().contains("magic"));
    }

    #[test]
    fn xyz_errors_name_the_line() {
        let err = decode_xyz("1 2 3\n1 2\n").unwrap_err();
        assert!(err.starts_with("line 2"), "{err}");
        assert!(decode_xyz("1 2 x\n").unwrap_err().contains("line 1"));
        assert!(decode_xyz("").is_err());
    }

    proptest::proptest! {
        #[test]
        fn both_formats_round_trip_bit_exactly(pts in proptest::collection::vec(proptest::array::uniform3(-1e6f32..1e6), 1..40)) {
            let c = PointCloud::new(pts.concat()).unwrap();
            proptest::prop_assert_eq!(decode_pcb(&encode_pcb(&c)).unwrap(), c.clone());
            proptest::prop_assert_eq!(decode_xyz(&encode_xyz(&c)).unwrap(), c);
        }
    }
}
