//! Multi-channel raster tiles and their binary on-disk format.
//!
//! MRT layout, all integers little-endian:
//!
//! ```text
//! magic "MRT1" | u8 version=1 | u8 channel_count | u16 reserved=0
//! | u32 height | u32 width
//! | per channel: u8 role | u8 dtype (0 = f32, 1 = u8) | plane row-major
//! ```
//!
//! Role codes 0..=7 are IR, R, G, B, DSM, nDSM, NDVI, LABEL. Code 8
//! (CLASS_PROB) is an output-side extension used for stitched probability
//! planes. Label planes store `u8` with 255 as the ignore value.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const MRT_MAGIC: &[u8; 4] = b"MRT1";
pub const MRT_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelRole {
    Ir,
    Red,
    Green,
    Blue,
    Dsm,
    Ndsm,
    Ndvi,
    Label,
    /// Stitched class-probability plane (prediction output extension).
    ClassProb,
}

impl ChannelRole {
    pub fn code(&self) -> u8 {
        match self {
            Self::Ir => 0,
            Self::Red => 1,
            Self::Green => 2,
            Self::Blue => 3,
            Self::Dsm => 4,
            Self::Ndsm => 5,
            Self::Ndvi => 6,
            Self::Label => 7,
            Self::ClassProb => 8,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Self::Ir,
            1 => Self::Red,
            2 => Self::Green,
            3 => Self::Blue,
            4 => Self::Dsm,
            5 => Self::Ndsm,
            6 => Self::Ndvi,
            7 => Self::Label,
            8 => Self::ClassProb,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Ir => "IR",
            Self::Red => "R",
            Self::Green => "G",
            Self::Blue => "B",
            Self::Dsm => "DSM",
            Self::Ndsm => "nDSM",
            Self::Ndvi => "NDVI",
            Self::Label => "LABEL",
            Self::ClassProb => "PROB",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Plane {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl Plane {
    pub fn len(&self) -> usize {
        match self {
            Self::F32(v) => v.len(),
            Self::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match self {
            Self::F32(v) => Some(v),
            Self::U8(_) => None,
        }
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match self {
            Self::U8(v) => Some(v),
            Self::F32(_) => None,
        }
    }

    /// Plane values as floats scaled into the network input range: `u8`
    /// planes map to `[0, 1]`, float planes are assumed pre-scaled.
    pub fn to_scaled_f32(&self) -> Vec<f32> {
        match self {
            Self::F32(v) => v.clone(),
            Self::U8(v) => v.iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }
}

/// A tile: equally sized channel planes tagged with their roles.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterTile {
    pub width: usize,
    pub height: usize,
    pub channels: Vec<(ChannelRole, Plane)>,
}

impl RasterTile {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            channels: Vec::new(),
        }
    }

    pub fn push_channel(&mut self, role: ChannelRole, plane: Plane) -> Result<()> {
        if plane.len() != self.width * self.height {
            return Err(Error::Data(format!(
                "tile channel {}: plane has {} values, tile is {}x{}",
                role.name(),
                plane.len(),
                self.width,
                self.height
            )));
        }
        self.channels.push((role, plane));
        Ok(())
    }

    pub fn channel(&self, role: ChannelRole) -> Option<&Plane> {
        self.channels
            .iter()
            .find(|(r, _)| *r == role)
            .map(|(_, p)| p)
    }

    pub fn required(&self, role: ChannelRole) -> Result<&Plane> {
        self.channel(role)
            .ok_or_else(|| Error::Data(format!("tile is missing a {} channel", role.name())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        if self.channels.len() > u8::MAX as usize {
            return Err(Error::Data("tile has more than 255 channels".into()));
        }
        out.write_all(MRT_MAGIC)?;
        out.write_u8(MRT_VERSION)?;
        out.write_u8(self.channels.len() as u8)?;
        out.write_u16::<LittleEndian>(0)?;
        out.write_u32::<LittleEndian>(self.height as u32)?;
        out.write_u32::<LittleEndian>(self.width as u32)?;
        for (role, plane) in &self.channels {
            out.write_u8(role.code())?;
            match plane {
                Plane::F32(values) => {
                    out.write_u8(0)?;
                    for &v in values {
                        out.write_f32::<LittleEndian>(v)?;
                    }
                }
                Plane::U8(values) => {
                    out.write_u8(1)?;
                    out.write_all(values)?;
                }
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut reader = CountingReader::new(BufReader::new(file));
        Self::read_from(&mut reader)
    }

    pub fn read_from<R: Read>(reader: &mut CountingReader<R>) -> Result<Self> {
        let fail = |reader: &CountingReader<R>, msg: String| Error::Format {
            offset: reader.offset,
            msg,
        };

        let mut magic = [0u8; 4];
        reader
            .read_exact(&mut magic)
            .map_err(|_| fail(reader, "truncated magic".into()))?;
        if &magic != MRT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: format!("bad magic {magic:?}"),
            });
        }
        let version = reader
            .read_u8()
            .map_err(|_| fail(reader, "truncated version".into()))?;
        if version != MRT_VERSION {
            return Err(fail(reader, format!("unsupported version {version}")));
        }
        let channel_count = reader
            .read_u8()
            .map_err(|_| fail(reader, "truncated channel count".into()))?;
        let reserved = reader
            .read_u16::<LittleEndian>()
            .map_err(|_| fail(reader, "truncated reserved field".into()))?;
        if reserved != 0 {
            return Err(fail(reader, format!("reserved field must be 0, got {reserved}")));
        }
        let height = reader
            .read_u32::<LittleEndian>()
            .map_err(|_| fail(reader, "truncated height".into()))? as usize;
        let width = reader
            .read_u32::<LittleEndian>()
            .map_err(|_| fail(reader, "truncated width".into()))? as usize;
        if height == 0 || width == 0 {
            return Err(fail(reader, format!("degenerate dims {height}x{width}")));
        }

        let plane_len = width * height;
        let mut tile = RasterTile::new(width, height);
        for ci in 0..channel_count {
            let role_code = reader
                .read_u8()
                .map_err(|_| fail(reader, format!("truncated role of channel {ci}")))?;
            let role = ChannelRole::from_code(role_code)
                .ok_or_else(|| fail(reader, format!("unknown role code {role_code}")))?;
            let dtype = reader
                .read_u8()
                .map_err(|_| fail(reader, format!("truncated dtype of channel {ci}")))?;
            let plane = match dtype {
                0 => {
                    let mut values = vec![0.0f32; plane_len];
                    reader
                        .read_f32_into::<LittleEndian>(&mut values)
                        .map_err(|_| fail(reader, format!("truncated f32 plane {ci}")))?;
                    Plane::F32(values)
                }
                1 => {
                    let mut values = vec![0u8; plane_len];
                    reader
                        .read_exact(&mut values)
                        .map_err(|_| fail(reader, format!("truncated u8 plane {ci}")))?;
                    Plane::U8(values)
                }
                other => return Err(fail(reader, format!("unknown dtype {other}"))),
            };
            tile.channels.push((role, plane));
        }
        Ok(tile)
    }
}

/// Read adapter that tracks the byte offset for format errors.
pub struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.offset += n as u64;
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_tile() -> RasterTile {
        let mut tile = RasterTile::new(3, 2);
        tile.push_channel(ChannelRole::Ir, Plane::F32(vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.1]))
            .unwrap();
        tile.push_channel(ChannelRole::Label, Plane::U8(vec![0, 1, 2, 255, 4, 5]))
            .unwrap();
        tile
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let tile = sample_tile();
        let mut bytes = Vec::new();
        tile.write_to(&mut bytes).unwrap();
        let back = RasterTile::read_from(&mut CountingReader::new(bytes.as_slice())).unwrap();
        assert_eq!(tile, back);
    }

    #[test]
    fn label_plane_stays_u8() {
        let tile = sample_tile();
        let mut bytes = Vec::new();
        tile.write_to(&mut bytes).unwrap();
        let back = RasterTile::read_from(&mut CountingReader::new(bytes.as_slice())).unwrap();
        assert!(matches!(back.channel(ChannelRole::Label), Some(Plane::U8(_))));
    }

    #[test]
    fn truncated_file_reports_offset() {
        let tile = sample_tile();
        let mut bytes = Vec::new();
        tile.write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        let err = RasterTile::read_from(&mut CountingReader::new(bytes.as_slice())).unwrap_err();
        match err {
            Error::Format { offset, .. } => assert!(offset > 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let bytes = b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00\x01\x00\x00\x00".to_vec();
        let err = RasterTile::read_from(&mut CountingReader::new(bytes.as_slice())).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn mismatched_plane_length_rejected() {
        let mut tile = RasterTile::new(2, 2);
        let err = tile
            .push_channel(ChannelRole::Ir, Plane::F32(vec![0.0; 3]))
            .unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn header_layout_is_stable() {
        let tile = sample_tile();
        let mut bytes = Vec::new();
        tile.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[0..4], b"MRT1");
        assert_eq!(bytes[4], 1); // version
        assert_eq!(bytes[5], 2); // channels
        assert_eq!(&bytes[6..8], &[0, 0]); // reserved
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes()); // height
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes()); // width
        assert_eq!(bytes[16], 0); // IR role
        assert_eq!(bytes[17], 0); // f32 dtype
    }
}
