//! Binary map checkpoints. Little-endian layout:
//!
//! ```text
//! magic "CGS1" | version u32 | flags u32 | N u64
//! raw:        positions f32*3N | rotations f32*4N | scales f32*3N
//!             | opacities f32*N | colors f32*3N
//! compressed: positions f32*3N | opacities f32*N | colors f32*3N
//!             | scale book f32*(L*P*3) | rotation book f32*(L*P*4)
//!             | scale indices u16*(N*L) | rotation indices u16*(N*L)
//! then:       poses f32*7 each (qx qy qz qw tx ty tz)
//! trailer:    u64 total file length, itself included
//! ```
//!
//! Flags: bit 0 set for compressed; compressed files also pack L in bits
//! 8..16 and P-1 in bits 16..32, which bounds P at 65536 (the u16 index
//! range). Books are stored stage-major, then code, then component. Scales
//! and rotations are stored in the raw parameter domain (log-scales,
//! unnormalized quaternions); activations are re-applied on use. Mask
//! parameters are training-time state and are not serialized: loaded
//! primitives get a mask that passes the default binarization threshold.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::{DVector, Quaternion, UnitQuaternion, Vector3, Vector4};

use crate::codebook::{EncodedGeometry, ResidualCodebook};
use crate::error::{Error, Result};
use crate::scene::{GaussianMap, GaussianPrimitive, PoseSE3};

pub const MAGIC: [u8; 4] = *b"CGS1";
pub const VERSION: u32 = 1;
const FLAG_COMPRESSED: u32 = 1;
const HEADER_LEN: usize = 20;
const POSE_RECORD_LEN: usize = 28;

/// Mask value assigned to loaded primitives; sigmoid(1) clears the default
/// binarization threshold, so a loaded map renders fully under masking.
pub const LOADED_MASK_RAW: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointMode {
    Raw,
    Compressed,
}

#[derive(Debug, Clone)]
pub struct LoadedCheckpoint {
    pub map: GaussianMap,
    pub keyframe_poses: Vec<PoseSE3>,
    pub mode: CheckpointMode,
    /// Books and indices of a compressed file, kept for size reporting and
    /// similarity analysis; `map` already holds the decoded attributes.
    pub geometry: Option<EncodedGeometry>,
}

fn corrupt(section: &str) -> Error {
    Error::CorruptCheckpoint {
        section: section.into(),
    }
}

fn book_dims(book: &ResidualCodebook, dim: usize, name: &str) -> Result<(usize, usize)> {
    if book.dim != dim {
        return Err(Error::InvalidConfig(format!(
            "{name} dimension {} found, expected {dim}",
            book.dim
        )));
    }
    let stages = book.stages();
    let per_stage = book.codes_per_stage();
    for stage in &book.codes {
        if stage.len() != per_stage {
            return Err(Error::InvalidConfig(format!(
                "{name} has ragged stages; checkpoints need a uniform code count"
            )));
        }
        for code in stage {
            if code.len() != dim {
                return Err(Error::InvalidConfig(format!(
                    "{name} code dimension {} found, expected {dim}",
                    code.len()
                )));
            }
        }
    }
    Ok((stages, per_stage))
}

/// Serialize to bytes. Compressed mode requires fitted geometry covering
/// every primitive; P above the u16 index range is refused.
pub fn encode_checkpoint(
    map: &GaussianMap,
    keyframe_poses: &[PoseSE3],
    mode: CheckpointMode,
    geometry: Option<&EncodedGeometry>,
) -> Result<Vec<u8>> {
    let n = map.len();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.write_u32::<LE>(VERSION).unwrap();

    match mode {
        CheckpointMode::Raw => {
            out.write_u32::<LE>(0).unwrap();
            out.write_u64::<LE>(n as u64).unwrap();
            let mut dump =
                |f: &mut dyn FnMut(&GaussianPrimitive, &mut Vec<u8>)| {
                    for prim in &map.primitives {
                        f(prim, &mut out);
                    }
                };
            dump(&mut |p, out| {
                for c in p.position.iter() {
                    out.write_f32::<LE>(*c as f32).unwrap();
                }
            });
            dump(&mut |p, out| {
                for c in p.rotation_raw.iter() {
                    out.write_f32::<LE>(*c as f32).unwrap();
                }
            });
            dump(&mut |p, out| {
                for c in p.scale_raw.iter() {
                    out.write_f32::<LE>(*c as f32).unwrap();
                }
            });
            dump(&mut |p, out| out.write_f32::<LE>(p.opacity_raw as f32).unwrap());
            dump(&mut |p, out| {
                for c in p.color.iter() {
                    out.write_f32::<LE>(*c as f32).unwrap();
                }
            });
        }
        CheckpointMode::Compressed => {
            let geometry = geometry.ok_or_else(|| {
                Error::InvalidConfig("compressed mode requires fitted codebooks".into())
            })?;
            if geometry.len() != n {
                return Err(Error::InvalidInput(format!(
                    "encoded geometry covers {} primitives, map has {n}",
                    geometry.len()
                )));
            }
            let (l_s, p_s) = book_dims(&geometry.scale_book, 3, "scale book")?;
            let (l_r, p_r) = book_dims(&geometry.rotation_book, 4, "rotation book")?;
            if l_s != l_r || p_s != p_r {
                return Err(Error::InvalidConfig(
                    "scale and rotation books must share stage and code counts".into(),
                ));
            }
            if p_s > 65536 {
                return Err(Error::InvalidConfig(format!(
                    "{p_s} codes per stage exceed the u16 index range"
                )));
            }
            if l_s == 0 || p_s == 0 {
                return Err(Error::InvalidConfig(
                    "compressed mode requires nonempty codebooks".into(),
                ));
            }
            if l_s > 255 {
                return Err(Error::InvalidConfig(format!(
                    "{l_s} stages exceed the header field"
                )));
            }
            let flags =
                FLAG_COMPRESSED | ((l_s as u32) << 8) | (((p_s - 1) as u32) << 16);
            out.write_u32::<LE>(flags).unwrap();
            out.write_u64::<LE>(n as u64).unwrap();
            for prim in &map.primitives {
                for c in prim.position.iter() {
                    out.write_f32::<LE>(*c as f32).unwrap();
                }
            }
            for prim in &map.primitives {
                out.write_f32::<LE>(prim.opacity_raw as f32).unwrap();
            }
            for prim in &map.primitives {
                for c in prim.color.iter() {
                    out.write_f32::<LE>(*c as f32).unwrap();
                }
            }
            for book in [&geometry.scale_book, &geometry.rotation_book] {
                for stage in &book.codes {
                    for code in stage {
                        for c in code.iter() {
                            out.write_f32::<LE>(*c as f32).unwrap();
                        }
                    }
                }
            }
            for indices in [&geometry.scale_indices, &geometry.rotation_indices] {
                for &i in indices.iter() {
                    out.write_u16::<LE>(i).unwrap();
                }
            }
        }
    }

    for pose in keyframe_poses {
        let q = pose.rotation.into_inner();
        for c in [q.i, q.j, q.k, q.w] {
            out.write_f32::<LE>(c as f32).unwrap();
        }
        for c in pose.translation.iter() {
            out.write_f32::<LE>(*c as f32).unwrap();
        }
    }

    let total = out.len() as u64 + 8;
    out.write_u64::<LE>(total).unwrap();
    Ok(out)
}

pub fn save_checkpoint(
    map: &GaussianMap,
    keyframe_poses: &[PoseSE3],
    mode: CheckpointMode,
    geometry: Option<&EncodedGeometry>,
    path: &Path,
) -> Result<()> {
    let bytes = encode_checkpoint(map, keyframe_poses, mode, geometry)?;
    fs::write(path, bytes)?;
    Ok(())
}

struct Reader<'a> {
    cursor: Cursor<&'a [u8]>,
}

impl<'a> Reader<'a> {
    fn f32s(&mut self, count: usize, section: &str) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(
                self.cursor
                    .read_f32::<LE>()
                    .map_err(|_| corrupt(section))? as f64,
            );
        }
        Ok(out)
    }

    fn u16s(&mut self, count: usize, section: &str) -> Result<Vec<u16>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(self.cursor.read_u16::<LE>().map_err(|_| corrupt(section))?);
        }
        Ok(out)
    }
}

fn read_book(
    reader: &mut Reader,
    stages: usize,
    codes_per_stage: usize,
    dim: usize,
    section: &str,
) -> Result<ResidualCodebook> {
    let mut codes = Vec::with_capacity(stages);
    for _ in 0..stages {
        let mut stage = Vec::with_capacity(codes_per_stage);
        for _ in 0..codes_per_stage {
            let vals = reader.f32s(dim, section)?;
            stage.push(DVector::from_vec(vals));
        }
        codes.push(stage);
    }
    Ok(ResidualCodebook { dim, codes })
}

/// Parse checkpoint bytes. Every malformed input reports the section that
/// failed; the length trailer catches truncation before array parsing.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<LoadedCheckpoint> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(corrupt("magic"));
    }
    let mut head = Cursor::new(&bytes[4..]);
    let version = head.read_u32::<LE>().map_err(|_| corrupt("version"))?;
    if version != VERSION {
        return Err(corrupt("version"));
    }
    let flags = head.read_u32::<LE>().map_err(|_| corrupt("header"))?;
    let n_u64 = head.read_u64::<LE>().map_err(|_| corrupt("header"))?;
    if bytes.len() < HEADER_LEN + 8 {
        return Err(corrupt("length trailer"));
    }
    let trailer = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    if trailer != bytes.len() as u64 {
        return Err(corrupt("length trailer"));
    }

    let compressed = flags & FLAG_COMPRESSED != 0;
    let body = &bytes[HEADER_LEN..bytes.len() - 8];
    let available = body.len() as u64;

    // Size the fixed sections with checked arithmetic before any allocation,
    // so a corrupt count cannot trigger a huge reservation.
    let sections: Vec<(&str, u64)> = if compressed {
        let l = ((flags >> 8) & 0xff) as u64;
        let p = (((flags >> 16) & 0xffff) + 1) as u64;
        if l == 0 {
            return Err(corrupt("header"));
        }
        vec![
            ("positions", n_u64.checked_mul(12).ok_or_else(|| corrupt("positions"))?),
            ("opacities", n_u64.checked_mul(4).ok_or_else(|| corrupt("opacities"))?),
            ("colors", n_u64.checked_mul(12).ok_or_else(|| corrupt("colors"))?),
            ("scale book", l * p * 12),
            ("rotation book", l * p * 16),
            (
                "scale indices",
                n_u64.checked_mul(2 * l).ok_or_else(|| corrupt("scale indices"))?,
            ),
            (
                "rotation indices",
                n_u64
                    .checked_mul(2 * l)
                    .ok_or_else(|| corrupt("rotation indices"))?,
            ),
        ]
    } else {
        vec![
            ("positions", n_u64.checked_mul(12).ok_or_else(|| corrupt("positions"))?),
            ("rotations", n_u64.checked_mul(16).ok_or_else(|| corrupt("rotations"))?),
            ("scales", n_u64.checked_mul(12).ok_or_else(|| corrupt("scales"))?),
            ("opacities", n_u64.checked_mul(4).ok_or_else(|| corrupt("opacities"))?),
            ("colors", n_u64.checked_mul(12).ok_or_else(|| corrupt("colors"))?),
        ]
    };
    let mut needed: u64 = 0;
    for (name, size) in &sections {
        needed = needed.checked_add(*size).ok_or_else(|| corrupt(name))?;
        if needed > available {
            return Err(corrupt(name));
        }
    }
    let pose_bytes = available - needed;
    if pose_bytes % POSE_RECORD_LEN as u64 != 0 {
        return Err(corrupt("poses"));
    }
    let n = n_u64 as usize;
    let n_poses = (pose_bytes / POSE_RECORD_LEN as u64) as usize;

    let mut reader = Reader {
        cursor: Cursor::new(body),
    };
    let mut map = GaussianMap::new();
    let mut geometry = None;

    if compressed {
        let l = ((flags >> 8) & 0xff) as usize;
        let p = (((flags >> 16) & 0xffff) + 1) as usize;
        let positions = reader.f32s(3 * n, "positions")?;
        let opacities = reader.f32s(n, "opacities")?;
        let colors = reader.f32s(3 * n, "colors")?;
        let scale_book = read_book(&mut reader, l, p, 3, "scale book")?;
        let rotation_book = read_book(&mut reader, l, p, 4, "rotation book")?;
        let scale_indices = reader.u16s(n * l, "scale indices")?;
        let rotation_indices = reader.u16s(n * l, "rotation indices")?;
        for (name, indices) in [
            ("scale indices", &scale_indices),
            ("rotation indices", &rotation_indices),
        ] {
            if indices.iter().any(|&i| i as usize >= p) {
                return Err(corrupt(name));
            }
        }
        let encoded = EncodedGeometry {
            scale_indices,
            rotation_indices,
            scale_book,
            rotation_book,
        };
        for i in 0..n {
            map.primitives.push(GaussianPrimitive {
                position: Vector3::new(
                    positions[3 * i],
                    positions[3 * i + 1],
                    positions[3 * i + 2],
                ),
                rotation_raw: encoded.decode_rotation(i)?,
                scale_raw: encoded.decode_scale(i)?,
                opacity_raw: opacities[i],
                color: Vector3::new(colors[3 * i], colors[3 * i + 1], colors[3 * i + 2]),
                mask_raw: LOADED_MASK_RAW,
            });
        }
        geometry = Some(encoded);
    } else {
        let positions = reader.f32s(3 * n, "positions")?;
        let rotations = reader.f32s(4 * n, "rotations")?;
        let scales = reader.f32s(3 * n, "scales")?;
        let opacities = reader.f32s(n, "opacities")?;
        let colors = reader.f32s(3 * n, "colors")?;
        for i in 0..n {
            map.primitives.push(GaussianPrimitive {
                position: Vector3::new(
                    positions[3 * i],
                    positions[3 * i + 1],
                    positions[3 * i + 2],
                ),
                rotation_raw: Vector4::new(
                    rotations[4 * i],
                    rotations[4 * i + 1],
                    rotations[4 * i + 2],
                    rotations[4 * i + 3],
                ),
                scale_raw: Vector3::new(scales[3 * i], scales[3 * i + 1], scales[3 * i + 2]),
                opacity_raw: opacities[i],
                color: Vector3::new(colors[3 * i], colors[3 * i + 1], colors[3 * i + 2]),
                mask_raw: LOADED_MASK_RAW,
            });
        }
    }

    let mut keyframe_poses = Vec::with_capacity(n_poses);
    for _ in 0..n_poses {
        let vals = reader.f32s(7, "poses")?;
        let q = Quaternion::new(vals[3], vals[0], vals[1], vals[2]);
        if !(q.norm() > 0.0) || !q.norm().is_finite() {
            return Err(corrupt("poses"));
        }
        keyframe_poses.push(PoseSE3 {
            rotation: UnitQuaternion::from_quaternion(q),
            translation: Vector3::new(vals[4], vals[5], vals[6]),
        });
    }

    Ok(LoadedCheckpoint {
        map,
        keyframe_poses,
        mode: if compressed {
            CheckpointMode::Compressed
        } else {
            CheckpointMode::Raw
        },
        geometry,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::encode_map_geometry;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_map(n: usize, seed: u64) -> GaussianMap {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut map = GaussianMap::new();
        for _ in 0..n {
            map.primitives.push(GaussianPrimitive {
                position: Vector3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(1.0..4.0),
                ),
                rotation_raw: Vector4::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ),
                scale_raw: Vector3::new(
                    rng.gen_range(-4.0..-2.0),
                    rng.gen_range(-4.0..-2.0),
                    rng.gen_range(-4.0..-2.0),
                ),
                opacity_raw: rng.gen_range(-2.0..2.0),
                color: Vector3::new(rng.gen(), rng.gen(), rng.gen()),
                mask_raw: rng.gen_range(-1.0..1.0),
            });
        }
        map
    }

    fn random_poses(n: usize, seed: u64) -> Vec<PoseSE3> {
        let mut rng = StdRng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let axis = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                PoseSE3 {
                    rotation: UnitQuaternion::from_scaled_axis(axis),
                    translation: Vector3::new(
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-2.0..2.0),
                    ),
                }
            })
            .collect()
    }

    #[test]
    fn raw_round_trip_preserves_attributes_exactly() {
        let map = random_map(40, 1);
        let poses = random_poses(3, 2);
        let bytes = encode_checkpoint(&map, &poses, CheckpointMode::Raw, None).unwrap();
        let loaded = decode_checkpoint(&bytes).unwrap();
        assert_eq!(loaded.mode, CheckpointMode::Raw);
        assert_eq!(loaded.map.len(), map.len());
        assert_eq!(loaded.keyframe_poses.len(), poses.len());
        for (a, b) in map.primitives.iter().zip(&loaded.map.primitives) {
            // Storage is f32; the loaded f64 must equal the cast exactly.
            for k in 0..3 {
                assert_eq!(b.position[k], a.position[k] as f32 as f64);
                assert_eq!(b.scale_raw[k], a.scale_raw[k] as f32 as f64);
                assert_eq!(b.color[k], a.color[k] as f32 as f64);
            }
            for k in 0..4 {
                assert_eq!(b.rotation_raw[k], a.rotation_raw[k] as f32 as f64);
            }
            assert_eq!(b.opacity_raw, a.opacity_raw as f32 as f64);
            assert_eq!(b.mask_raw, LOADED_MASK_RAW);
        }
        // A second encode of the loaded state reproduces the bytes.
        let again = encode_checkpoint(
            &loaded.map,
            &loaded.keyframe_poses,
            CheckpointMode::Raw,
            None,
        )
        .unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn compressed_round_trip_is_stable_at_second_encode() {
        let map = random_map(60, 3);
        let poses = random_poses(2, 4);
        let (geometry, _, _) = encode_map_geometry(&map, 2, 8, 5, 7).unwrap();
        let bytes =
            encode_checkpoint(&map, &poses, CheckpointMode::Compressed, Some(&geometry))
                .unwrap();
        let loaded = decode_checkpoint(&bytes).unwrap();
        assert_eq!(loaded.mode, CheckpointMode::Compressed);
        let geometry2 = loaded.geometry.as_ref().unwrap();
        assert_eq!(geometry2.scale_indices, geometry.scale_indices);
        assert_eq!(geometry2.rotation_indices, geometry.rotation_indices);
        // Indices plus f32 books survive a decode/encode cycle bitwise.
        let again = encode_checkpoint(
            &loaded.map,
            &loaded.keyframe_poses,
            CheckpointMode::Compressed,
            Some(geometry2),
        )
        .unwrap();
        assert_eq!(bytes, again);
        // Decoded attributes equal the f32-cast codebook reconstruction.
        for i in 0..loaded.map.len() {
            let want = geometry2.decode_scale(i).unwrap();
            assert_eq!(loaded.map.primitives[i].scale_raw, want);
        }
    }

    #[test]
    fn compressed_is_smaller_than_raw_for_small_books() {
        let map = random_map(500, 5);
        let poses = random_poses(4, 6);
        let (geometry, _, _) = encode_map_geometry(&map, 2, 16, 5, 8).unwrap();
        let raw = encode_checkpoint(&map, &poses, CheckpointMode::Raw, None).unwrap();
        let compressed =
            encode_checkpoint(&map, &poses, CheckpointMode::Compressed, Some(&geometry))
                .unwrap();
        assert!(
            compressed.len() < raw.len(),
            "compressed {} raw {}",
            compressed.len(),
            raw.len()
        );
    }

    #[test]
    fn compressed_mode_without_books_is_refused() {
        let map = random_map(4, 9);
        assert!(matches!(
            encode_checkpoint(&map, &[], CheckpointMode::Compressed, None),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn oversized_code_count_is_refused() {
        let map = random_map(2, 10);
        let big = ResidualCodebook {
            dim: 3,
            codes: vec![vec![DVector::zeros(3); 65537]],
        };
        let rot = ResidualCodebook {
            dim: 4,
            codes: vec![vec![DVector::zeros(4); 65537]],
        };
        let geometry = EncodedGeometry {
            scale_indices: vec![0, 0],
            rotation_indices: vec![0, 0],
            scale_book: big,
            rotation_book: rot,
        };
        assert!(matches!(
            encode_checkpoint(&map, &[], CheckpointMode::Compressed, Some(&geometry)),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn bad_magic_and_version_are_named() {
        let map = random_map(3, 11);
        let mut bytes = encode_checkpoint(&map, &[], CheckpointMode::Raw, None).unwrap();
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        match decode_checkpoint(&wrong_magic) {
            Err(Error::CorruptCheckpoint { section }) => assert_eq!(section, "magic"),
            other => panic!("expected magic error, got {other:?}"),
        }
        bytes[4] = 9;
        match decode_checkpoint(&bytes) {
            Err(Error::CorruptCheckpoint { section }) => assert_eq!(section, "version"),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn tampered_trailer_is_detected() {
        let map = random_map(3, 12);
        let mut bytes = encode_checkpoint(&map, &[], CheckpointMode::Raw, None).unwrap();
        let end = bytes.len();
        bytes[end - 1] ^= 0xff;
        match decode_checkpoint(&bytes) {
            Err(Error::CorruptCheckpoint { section }) => {
                assert_eq!(section, "length trailer")
            }
            other => panic!("expected trailer error, got {other:?}"),
        }
    }

    proptest! {
        // Any strict prefix must be rejected as corrupt, whatever the cut.
        #[test]
        fn any_truncation_is_detected(cut in any::<prop::sample::Index>(), compressed in any::<bool>()) {
            let map = random_map(12, 13);
            let poses = random_poses(2, 14);
            let bytes = if compressed {
                let (geometry, _, _) = encode_map_geometry(&map, 2, 4, 3, 15).unwrap();
                encode_checkpoint(&map, &poses, CheckpointMode::Compressed, Some(&geometry)).unwrap()
            } else {
                encode_checkpoint(&map, &poses, CheckpointMode::Raw, None).unwrap()
            };
            let cut = cut.index(bytes.len());
            let rejected = matches!(
                decode_checkpoint(&bytes[..cut]),
                Err(Error::CorruptCheckpoint { .. })
            );
            prop_assert!(rejected, "prefix of {} bytes accepted", cut);
        }
    }

    #[test]
    fn file_round_trip_works() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.cgs");
        let map = random_map(10, 16);
        let poses = random_poses(2, 17);
        save_checkpoint(&map, &poses, CheckpointMode::Raw, None, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.map.len(), 10);
        assert_eq!(loaded.keyframe_poses.len(), 2);
    }
}
