//! Minimal NIfTI-1 reader and writer for segmented CT cases.
//!
//! Only uncompressed single-file volumes (`.nii`, magic `n+1`) with three
//! spatial dimensions are supported, stored as `uint8`, `int16` or `float32`.
//! Byte order is inferred from the `sizeof_hdr` field.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Size of the fixed NIfTI-1 header.
pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag; the earliest voxel offset.
pub const MIN_VOX_OFFSET: usize = 352;

const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_MAGIC: usize = 344;

/// Label convention of the segmentation volumes.
pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_KIDNEY: u8 = 1;
pub const LABEL_TUMOR: u8 = 2;
pub const LABEL_CYST: u8 = 3;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum VolumeError {
    #[error("header too short: {0} bytes, need at least 352")]
    HeaderTooShort(usize),
    #[error("sizeof_hdr is not 348 in either byte order")]
    BadHeaderSize,
    #[error("bad magic {0:?}, expected \"n+1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("bad dims: {0}")]
    BadDims(String),
    #[error("payload truncated: need {needed} bytes from offset {offset}, have {available}")]
    PayloadTruncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("non-finite value at voxel {0}")]
    NonFiniteValue(usize),
    #[error("segmentation dims {seg:?} do not match image dims {image:?}")]
    ShapeMismatch { seg: [usize; 3], image: [usize; 3] },
    #[error("illegal label value {value} at voxel {index}")]
    IllegalLabel { index: usize, value: f64 },
    #[error("segmentation has no tumor voxels")]
    NoTumorVoxels,
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    Uint8,
    Int16,
    Float32,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Float32 => 16,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(Datatype::Uint8),
            4 => Some(Datatype::Int16),
            16 => Some(Datatype::Float32),
            _ => None,
        }
    }

    pub fn bytes_per_voxel(self) -> usize {
        match self {
            Datatype::Uint8 => 1,
            Datatype::Int16 => 2,
            Datatype::Float32 => 4,
        }
    }
}

/// The subset of the NIfTI-1 header the pipeline relies on.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub datatype: Datatype,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub byte_order: ByteOrder,
    /// Byte offset of the first voxel, never below 352.
    pub vox_offset: usize,
}

impl VolumeHeader {
    pub fn new(dims: [usize; 3], datatype: Datatype) -> Self {
        VolumeHeader {
            dims,
            datatype,
            scl_slope: 1.0,
            scl_inter: 0.0,
            byte_order: ByteOrder::Little,
            vox_offset: MIN_VOX_OFFSET,
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Slope actually applied, with the zero-means-identity convention.
    pub fn effective_slope(&self) -> f64 {
        if self.scl_slope == 0.0 {
            1.0
        } else {
            self.scl_slope as f64
        }
    }
}

/// Dense HU volume, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub voxels: Vec<f64>,
}

impl Volume {
    pub fn new(dims: [usize; 3], voxels: Vec<f64>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), voxels.len());
        Volume { dims, voxels }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.voxels[self.index(x, y, z)]
    }
}

/// Validated label volume paired with an image.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationVolume {
    pub dims: [usize; 3],
    pub labels: Vec<u8>,
    /// Voxel count per label 0..=3.
    pub label_counts: [usize; 4],
}

impl SegmentationVolume {
    pub fn tumor_voxels(&self) -> usize {
        self.label_counts[LABEL_TUMOR as usize]
    }

    pub fn kidney_voxels(&self) -> usize {
        self.label_counts[LABEL_KIDNEY as usize]
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    order: ByteOrder,
}

impl Reader<'_> {
    fn array<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[at..at + N]);
        out
    }

    fn i16(&self, at: usize) -> i16 {
        match self.order {
            ByteOrder::Little => i16::from_le_bytes(self.array(at)),
            ByteOrder::Big => i16::from_be_bytes(self.array(at)),
        }
    }

    fn f32(&self, at: usize) -> f32 {
        match self.order {
            ByteOrder::Little => f32::from_le_bytes(self.array(at)),
            ByteOrder::Big => f32::from_be_bytes(self.array(at)),
        }
    }
}

/// Decode the header from the first 352 bytes of a `.nii` file.
pub fn parse_nifti_header(bytes: &[u8]) -> Result<VolumeHeader, VolumeError> {
    if bytes.len() < MIN_VOX_OFFSET {
        return Err(VolumeError::HeaderTooShort(bytes.len()));
    }
    let raw: [u8; 4] = bytes[0..4].try_into().unwrap();
    let order = if i32::from_le_bytes(raw) == HEADER_SIZE as i32 {
        ByteOrder::Little
    } else if i32::from_be_bytes(raw) == HEADER_SIZE as i32 {
        ByteOrder::Big
    } else {
        return Err(VolumeError::BadHeaderSize);
    };
    let r = Reader { bytes, order };

    let magic: [u8; 4] = r.array(OFF_MAGIC);
    if &magic != b"n+1\0" {
        return Err(VolumeError::BadMagic(magic));
    }

    let ndim = r.i16(OFF_DIM);
    if ndim != 3 {
        return Err(VolumeError::BadDims(format!("dim[0] = {ndim}, expected 3")));
    }
    let mut dims = [0usize; 3];
    for (axis, d) in dims.iter_mut().enumerate() {
        let v = r.i16(OFF_DIM + 2 * (axis + 1));
        if v < 1 {
            return Err(VolumeError::BadDims(format!("dim[{}] = {v}", axis + 1)));
        }
        *d = v as usize;
    }

    let code = r.i16(OFF_DATATYPE);
    let datatype = Datatype::from_code(code).ok_or(VolumeError::UnsupportedDatatype(code))?;

    let vox = r.f32(OFF_VOX_OFFSET);
    let vox_offset = if vox.is_finite() && vox >= MIN_VOX_OFFSET as f32 && vox < 1.0e9 {
        vox as usize
    } else {
        MIN_VOX_OFFSET
    };

    Ok(VolumeHeader {
        dims,
        datatype,
        scl_slope: r.f32(OFF_SCL_SLOPE),
        scl_inter: r.f32(OFF_SCL_INTER),
        byte_order: order,
        vox_offset,
    })
}

/// Decode the voxel payload of a whole `.nii` file into HU values.
pub fn read_volume(header: &VolumeHeader, bytes: &[u8]) -> Result<Volume, VolumeError> {
    let n = header.voxel_count();
    let bpv = header.datatype.bytes_per_voxel();
    let needed = n * bpv;
    let offset = header.vox_offset;
    let available = bytes.len().saturating_sub(offset);
    if available < needed {
        return Err(VolumeError::PayloadTruncated {
            offset,
            needed,
            available,
        });
    }
    let slope = header.effective_slope();
    let inter = header.scl_inter as f64;
    if !slope.is_finite() || !inter.is_finite() {
        return Err(VolumeError::NonFiniteValue(0));
    }

    let identity = slope == 1.0 && inter == 0.0;
    let payload = &bytes[offset..offset + needed];
    let r = Reader {
        bytes: payload,
        order: header.byte_order,
    };
    let mut voxels = Vec::with_capacity(n);
    for i in 0..n {
        let stored = match header.datatype {
            Datatype::Uint8 => payload[i] as f64,
            Datatype::Int16 => r.i16(2 * i) as f64,
            Datatype::Float32 => {
                let v = r.f32(4 * i);
                if !v.is_finite() {
                    return Err(VolumeError::NonFiniteValue(i));
                }
                v as f64
            }
        };
        // The identity mapping is skipped so that -0.0 survives a round trip.
        let hu = if identity { stored } else { slope * stored + inter };
        if !hu.is_finite() {
            return Err(VolumeError::NonFiniteValue(i));
        }
        voxels.push(hu);
    }
    Ok(Volume {
        dims: header.dims,
        voxels,
    })
}

/// Parse a complete `.nii` byte buffer.
pub fn decode_nifti(bytes: &[u8]) -> Result<Volume, VolumeError> {
    let header = parse_nifti_header(bytes)?;
    read_volume(&header, bytes)
}

/// Serialize stored (pre-scaling) values under `header`.
///
/// Values are rounded to the nearest integer for integer datatypes; the
/// caller chooses slope/intercept so that stored values are representable.
pub fn encode_nifti(header: &VolumeHeader, stored: &[f64]) -> Vec<u8> {
    assert_eq!(stored.len(), header.voxel_count());
    let mut out = vec![0u8; header.vox_offset.max(MIN_VOX_OFFSET)];
    let big = header.byte_order == ByteOrder::Big;
    let put_i16 = |buf: &mut [u8], at: usize, v: i16| {
        let b = if big { v.to_be_bytes() } else { v.to_le_bytes() };
        buf[at..at + 2].copy_from_slice(&b);
    };
    let put_i32 = |buf: &mut [u8], at: usize, v: i32| {
        let b = if big { v.to_be_bytes() } else { v.to_le_bytes() };
        buf[at..at + 4].copy_from_slice(&b);
    };
    let put_f32 = |buf: &mut [u8], at: usize, v: f32| {
        let b = if big { v.to_be_bytes() } else { v.to_le_bytes() };
        buf[at..at + 4].copy_from_slice(&b);
    };

    put_i32(&mut out, 0, HEADER_SIZE as i32);
    put_i16(&mut out, OFF_DIM, 3);
    for axis in 0..3 {
        put_i16(&mut out, OFF_DIM + 2 * (axis + 1), header.dims[axis] as i16);
    }
    for axis in 4..8 {
        put_i16(&mut out, OFF_DIM + 2 * axis, 1);
    }
    put_i16(&mut out, OFF_DATATYPE, header.datatype.code());
    put_i16(
        &mut out,
        OFF_BITPIX,
        8 * header.datatype.bytes_per_voxel() as i16,
    );
    for axis in 0..4 {
        put_f32(&mut out, OFF_PIXDIM + 4 * axis, 1.0);
    }
    put_f32(&mut out, OFF_VOX_OFFSET, header.vox_offset as f32);
    put_f32(&mut out, OFF_SCL_SLOPE, header.scl_slope);
    put_f32(&mut out, OFF_SCL_INTER, header.scl_inter);
    out[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(b"n+1\0");

    out.reserve(stored.len() * header.datatype.bytes_per_voxel());
    for &v in stored {
        match header.datatype {
            Datatype::Uint8 => out.push(v.round().clamp(0.0, 255.0) as u8),
            Datatype::Int16 => {
                let s = v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                out.extend_from_slice(&if big { s.to_be_bytes() } else { s.to_le_bytes() });
            }
            Datatype::Float32 => {
                let f = v as f32;
                out.extend_from_slice(&if big { f.to_be_bytes() } else { f.to_le_bytes() });
            }
        }
    }
    out
}

/// Check a decoded label volume against its image and the label set.
pub fn validate_segmentation(
    seg: &Volume,
    image: &Volume,
) -> Result<SegmentationVolume, VolumeError> {
    if seg.dims != image.dims {
        return Err(VolumeError::ShapeMismatch {
            seg: seg.dims,
            image: image.dims,
        });
    }
    let mut counts = [0usize; 4];
    let mut labels = Vec::with_capacity(seg.voxels.len());
    for (index, &value) in seg.voxels.iter().enumerate() {
        let label = match value {
            v if v == 0.0 => LABEL_BACKGROUND,
            v if v == 1.0 => LABEL_KIDNEY,
            v if v == 2.0 => LABEL_TUMOR,
            v if v == 3.0 => LABEL_CYST,
            _ => return Err(VolumeError::IllegalLabel { index, value }),
        };
        counts[label as usize] += 1;
        labels.push(label);
    }
    if counts[LABEL_TUMOR as usize] == 0 {
        return Err(VolumeError::NoTumorVoxels);
    }
    Ok(SegmentationVolume {
        dims: seg.dims,
        labels,
        label_counts: counts,
    })
}

pub fn imaging_path(data_dir: &Path, case_id: &str) -> PathBuf {
    data_dir.join(case_id).join("imaging.nii")
}

pub fn segmentation_path(data_dir: &Path, case_id: &str) -> PathBuf {
    data_dir.join(case_id).join("segmentation.nii")
}

fn read_file(path: &Path) -> Result<Vec<u8>, VolumeError> {
    fs::read(path).map_err(|e| VolumeError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Load `<data_dir>/<case_id>/{imaging,segmentation}.nii`.
pub fn read_case(
    data_dir: &Path,
    case_id: &str,
) -> Result<(Volume, SegmentationVolume), VolumeError> {
    let image = decode_nifti(&read_file(&imaging_path(data_dir, case_id))?)?;
    let seg = decode_nifti(&read_file(&segmentation_path(data_dir, case_id))?)?;
    let seg = validate_segmentation(&seg, &image)?;
    Ok((image, seg))
}

/// Write an image (HU values, stored as int16 with the given intercept) and
/// its label volume to `<data_dir>/<case_id>/`.
pub fn write_case(
    data_dir: &Path,
    case_id: &str,
    hu: &Volume,
    hu_intercept: f32,
    labels: &[u8],
) -> Result<(), VolumeError> {
    let dir = data_dir.join(case_id);
    let io = |path: &Path, e: std::io::Error| VolumeError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;

    let mut header = VolumeHeader::new(hu.dims, Datatype::Int16);
    header.scl_inter = hu_intercept;
    let stored: Vec<f64> = hu.voxels.iter().map(|v| v - hu_intercept as f64).collect();
    let path = imaging_path(data_dir, case_id);
    fs::write(&path, encode_nifti(&header, &stored)).map_err(|e| io(&path, e))?;

    let header = VolumeHeader::new(hu.dims, Datatype::Uint8);
    let stored: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let path = segmentation_path(data_dir, case_id);
    fs::write(&path, encode_nifti(&header, &stored)).map_err(|e| io(&path, e))?;
    Ok(())
}
