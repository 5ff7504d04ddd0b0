use std::path::Path;

use super::{DenseFlowField, FlowError};

pub const FLO_MAGIC: &[u8; 4] = b"PIEH";
pub const MAX_FLO_DIMENSION: i64 = 32768;
/// Components above this magnitude mark an unknown flow value.
const UNKNOWN_FLOW: f32 = 1e9;

pub fn read_flo(path: impl AsRef<Path>) -> Result<DenseFlowField, FlowError> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| FlowError::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse_flo(&bytes)
}

/// Parse a Middlebury `.flo` buffer.
pub fn parse_flo(bytes: &[u8]) -> Result<DenseFlowField, FlowError> {
    if bytes.len() < 4 {
        return Err(FlowError::TruncatedFile);
    }
    if &bytes[..4] != FLO_MAGIC {
        return Err(FlowError::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(FlowError::TruncatedFile);
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as i64;
    let height = i32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as i64;
    if width <= 0 || height <= 0 || width > MAX_FLO_DIMENSION || height > MAX_FLO_DIMENSION {
        return Err(FlowError::DimensionOverflow { width, height });
    }
    let (w, h) = (width as usize, height as usize);
    let payload = &bytes[12..];
    if payload.len() < w * h * 8 {
        return Err(FlowError::TruncatedFile);
    }
    let mut vectors = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for chunk in payload[..w * h * 8].chunks_exact(8) {
        let u = f32::from_le_bytes(chunk[..4].try_into().expect("4 bytes"));
        let v = f32::from_le_bytes(chunk[4..].try_into().expect("4 bytes"));
        valid.push(u.is_finite() && v.is_finite() && u.abs() <= UNKNOWN_FLOW && v.abs() <= UNKNOWN_FLOW);
        vectors.push([u, v]);
    }
    DenseFlowField::new(w, h, vectors, valid)
}

/// Serialize a field; invalid entries are written as `1e10`.
pub fn write_flo(path: impl AsRef<Path>, field: &DenseFlowField) -> Result<(), FlowError> {
    let mut out = Vec::with_capacity(12 + field.vectors().len() * 8);
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&(field.width() as i32).to_le_bytes());
    out.extend_from_slice(&(field.height() as i32).to_le_bytes());
    for (v, &ok) in field.vectors().iter().zip(field.valid()) {
        let v = if ok { *v } else { [1e10, 1e10] };
        out.extend_from_slice(&v[0].to_le_bytes());
        out.extend_from_slice(&v[1].to_le_bytes());
    }
    std::fs::write(path.as_ref(), out).map_err(|e| FlowError::Io(format!("{}: {e}", path.as_ref().display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture() -> Vec<u8> {
        let mut b = b"PIEH".to_vec();
        b.extend_from_slice(&[2, 0, 0, 0, 1, 0, 0, 0]);
        for v in [1.0f32, 2.0, 3.0, 4.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn hand_written_file() {
        let f = parse_flo(&fixture()).unwrap();
        assert_eq!((f.width(), f.height()), (2, 1));
        assert_eq!(f.get(0, 0), Some([1.0, 2.0]));
        assert_eq!(f.get(1, 0), Some([3.0, 4.0]));
    }

    #[test]
    fn bad_magic() {
        let mut b = fixture();
        b[..4].copy_from_slice(b"XXXX");
        assert_eq!(parse_flo(&b).unwrap_err(), FlowError::BadMagic);
    }

    #[test]
    fn truncated() {
        let b = fixture();
        assert_eq!(parse_flo(&b[..b.len() - 3]).unwrap_err(), FlowError::TruncatedFile);
        assert_eq!(parse_flo(&b[..9]).unwrap_err(), FlowError::TruncatedFile);
    }

    #[test]
    fn oversized_dimensions() {
        let mut b = b"PIEH".to_vec();
        b.extend_from_slice(&40000i32.to_le_bytes());
        b.extend_from_slice(&1i32.to_le_bytes());
        assert!(matches!(parse_flo(&b), Err(FlowError::DimensionOverflow { width: 40000, .. })));
    }

    #[test]
    fn unknown_values_are_masked() {
        let mut b = fixture();
        b[12..16].copy_from_slice(&2e9f32.to_le_bytes());
        let f = parse_flo(&b).unwrap();
        assert_eq!(f.get(0, 0), None);
        assert!(f.get(1, 0).is_some());
    }

    #[test]
    fn missing_file() {
        assert!(matches!(read_flo("/nonexistent/x.flo"), Err(FlowError::Io(_))));
    }

    proptest! {
        #[test]
        fn round_trip(w in 1usize..8, h in 1usize..8, vals in proptest::collection::vec(-1e6f32..1e6, 128)) {
            let field = DenseFlowField::from_fn(w, h, |x, y| [vals[(y * w + x) * 2 % 128], vals[((y * w + x) * 2 + 1) % 128]]);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("f.flo");
            write_flo(&path, &field).unwrap();
            prop_assert_eq!(read_flo(&path).unwrap(), field);
        }
    }
}
