//! DTF1 tensor files and dataset manifests.
//!
//! DTF1 layout (little-endian throughout):
//!
//! ```text
//! "DTF1"            4 bytes magic
//! dtype             u8, 1 = f32
//! ndim              u8
//! dims              ndim x u64
//! payload           product(dims) x f32, row-major
//! ```
//!
//! Manifests are JSON documents describing the images of a dataset, the patch
//! grid each one was embedded on and where its feature file lives. Unknown
//! keys are ignored when loading.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridShape;

pub const MAGIC: [u8; 4] = *b"DTF1";
pub const DTYPE_F32: u8 = 1;

/// Dense row-major f32 tensor. Rows are patches or crops, columns embedding
/// dimensions, for the 2-D payloads the pipeline consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl FeatureTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.len() > u8::MAX as usize {
            return Err(Error::InvalidShape {
                shape,
                reason: "ndim must be in 1..=255".into(),
            });
        }
        if shape.contains(&0) {
            return Err(Error::InvalidShape {
                shape,
                reason: "zero-sized dimension".into(),
            });
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidShape {
                shape: shape.clone(),
                reason: "element count overflows".into(),
            })?;
        if numel != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("expects {numel} elements, data has {}", data.len()),
            });
        }
        check_finite(&data)?;
        Ok(Self { shape, data })
    }

    /// Builds a `rows x cols` matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::InvalidShape {
                    shape: vec![rows.len(), cols],
                    reason: format!("row {i} has {} columns", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Row count and row width of a 2-D tensor.
    pub fn matrix_dims(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[rows, cols] => Ok((rows, cols)),
            _ => Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: "expected a 2-D feature matrix".into(),
            }),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        let width = self.data.len() / self.shape[0];
        &self.data[i * width..(i + 1) * width]
    }

    /// Rows in the given order, as a new matrix.
    pub fn select_rows(&self, order: &[usize]) -> Result<Self> {
        let (rows, cols) = self.matrix_dims()?;
        let mut data = Vec::with_capacity(order.len() * cols);
        for &i in order {
            if i >= rows {
                return Err(Error::InvalidArgument(format!(
                    "row {i} out of range for {rows} rows"
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(vec![order.len(), cols], data)
    }
}

fn check_finite(data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

/// Serializes a tensor to DTF1 bytes.
pub fn encode_tensor(tensor: &FeatureTensor) -> Result<Vec<u8>> {
    check_finite(&tensor.data)?;
    let mut out = Vec::with_capacity(6 + 8 * tensor.shape.len() + 4 * tensor.data.len());
    out.extend_from_slice(&MAGIC);
    out.push(DTYPE_F32);
    out.push(tensor.shape.len() as u8);
    for &d in &tensor.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses the DTF1 header, returning the shape and the header length in bytes.
fn decode_header(bytes: &[u8]) -> Result<(Vec<usize>, usize)> {
    if bytes.len() < 4 {
        return Err(Error::Truncated(format!(
            "file has {} bytes, header needs at least 6",
            bytes.len()
        )));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < 6 {
        return Err(Error::Truncated("header ends before ndim".into()));
    }
    if bytes[4] != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(bytes[4]));
    }
    let ndim = bytes[5] as usize;
    let header_len = 6 + 8 * ndim;
    if bytes.len() < header_len {
        return Err(Error::Truncated(format!(
            "header declares {ndim} dims but file has {} bytes",
            bytes.len()
        )));
    }
    let shape = bytes[6..header_len]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect();
    Ok((shape, header_len))
}

pub fn decode_tensor(bytes: &[u8]) -> Result<FeatureTensor> {
    let (shape, header_len) = decode_header(bytes)?;
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidShape {
            shape: shape.clone(),
            reason: "element count overflows".into(),
        })?;
    let payload = &bytes[header_len..];
    let present = payload.len() / 4;
    if payload.len() < numel * 4 {
        return Err(Error::Truncated(format!(
            "declared {numel} elements but {present} present"
        )));
    }
    if payload.len() != numel * 4 {
        return Err(Error::InvalidShape {
            shape,
            reason: format!("{} trailing payload bytes", payload.len() - numel * 4),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    FeatureTensor::new(shape, data)
}

pub fn write_tensor(tensor: &FeatureTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(tensor)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<FeatureTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

/// Reads only the shape of a DTF1 file.
pub fn read_tensor_shape(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 6];
    let mut filled = 0;
    while filled < head.len() {
        let n = file
            .read(&mut head[filled..])
            .map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    let mut bytes = head[..filled].to_vec();
    if filled == 6 {
        let mut dims = vec![0u8; 8 * head[5] as usize];
        let n = file.read(&mut dims).map_err(|e| Error::io(path, e))?;
        bytes.extend_from_slice(&dims[..n]);
    }
    decode_header(&bytes).map(|(shape, _)| shape)
}

/// One image of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: String,
    pub source_path: String,
    /// Original height H in pixels.
    pub height: u32,
    /// Original width W in pixels.
    pub width: u32,
    /// Side T of the square image fed to the backbone.
    pub resized_side: u32,
    /// Patch side t.
    pub patch_side: u32,
    pub grid_rows: u32,
    pub grid_cols: u32,
    pub feature_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mask_path: Option<String>,
}

impl ImageEntry {
    pub fn grid(&self) -> GridShape {
        GridShape::new(self.grid_rows as usize, self.grid_cols as usize)
    }

    pub fn patch_count(&self) -> usize {
        self.grid().len()
    }

    fn validate(&self) -> Result<()> {
        if self.patch_side == 0 || self.resized_side == 0 {
            return Err(Error::Manifest(format!(
                "image {}: resized_side and patch_side must be positive",
                self.image_id
            )));
        }
        if !self.resized_side.is_multiple_of(self.patch_side) {
            return Err(Error::IndivisiblePatch {
                image_id: self.image_id.clone(),
                resized_side: self.resized_side,
                patch_side: self.patch_side,
            });
        }
        let side = self.resized_side / self.patch_side;
        if self.grid_rows != side || self.grid_cols != side {
            return Err(Error::Manifest(format!(
                "image {}: grid {}x{} inconsistent with T/t = {side}",
                self.image_id, self.grid_rows, self.grid_cols
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Manifest(format!(
                "image {}: original size must be positive",
                self.image_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub images: Vec<ImageEntry>,
    /// Raw ground-truth id (as a decimal string) to coarse class id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_merge: Option<BTreeMap<String, u8>>,
    /// Ground-truth class count C. Derived from `label_merge` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

impl DatasetManifest {
    /// Checks every structural invariant that does not need the filesystem.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for entry in &self.images {
            entry.validate()?;
            if !seen.insert(entry.image_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate image_id {}",
                    entry.image_id
                )));
            }
        }
        if let Some(merge) = &self.label_merge {
            for key in merge.keys() {
                key.parse::<u8>().map_err(|_| {
                    Error::Manifest(format!("label_merge key {key:?} is not a u8 id"))
                })?;
            }
        }
        Ok(())
    }

    /// Ground-truth class count: explicit `num_classes`, else one more than the
    /// largest merged id.
    pub fn class_count(&self) -> Option<usize> {
        self.num_classes.or_else(|| {
            self.label_merge
                .as_ref()
                .and_then(|m| m.values().max().map(|&v| v as usize + 1))
        })
    }

    pub fn parsed_label_merge(&self) -> Option<BTreeMap<u8, u8>> {
        self.label_merge.as_ref().map(|m| {
            m.iter()
                .filter_map(|(k, &v)| k.parse::<u8>().ok().map(|k| (k, v)))
                .collect()
        })
    }

    pub fn find(&self, image_id: &str) -> Option<&ImageEntry> {
        self.images.iter().find(|e| e.image_id == image_id)
    }
}

/// Resolves a manifest-relative path against the directory holding the manifest.
pub fn resolve_path(manifest_path: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path
            .parent()
            .map(|dir| dir.join(p))
            .unwrap_or_else(|| p.to_path_buf())
    }
}

/// Loads and validates a manifest. Feature files that exist are checked for
/// `rows == grid_rows * grid_cols`; missing ones are left to the stage that
/// needs them.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    manifest.validate()?;
    for entry in &manifest.images {
        let features = resolve_path(path, &entry.feature_path);
        if !features.exists() {
            continue;
        }
        let shape = read_tensor_shape(&features)?;
        if shape.len() != 2 || shape[0] != entry.patch_count() {
            return Err(Error::Manifest(format!(
                "image {}: feature tensor shape {shape:?} does not match {} patches",
                entry.image_id,
                entry.patch_count()
            )));
        }
    }
    Ok(manifest)
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    manifest.validate()?;
    write_json(manifest, path)
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(id: &str, t_side: u32, t: u32) -> ImageEntry {
        ImageEntry {
            image_id: id.into(),
            source_path: format!("{id}.png"),
            height: 480,
            width: 640,
            resized_side: t_side,
            patch_side: t,
            grid_rows: t_side / t,
            grid_cols: t_side / t,
            feature_path: format!("{id}.dtf"),
            gt_mask_path: None,
        }
    }

    #[test]
    fn single_zero_layout() {
        let t = FeatureTensor::new(vec![1, 1], vec![0.0]).unwrap();
        let bytes = encode_tensor(&t).unwrap();
        let mut expected = b"DTF1".to_vec();
        expected.extend_from_slice(&[1, 2]);
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&[0; 4]);
        // magic 4 + dtype 1 + ndim 1 + two u64 dims + one f32
        assert_eq!(bytes.len(), 26);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn nan_is_rejected() {
        let err = FeatureTensor::new(vec![3], vec![0.0, f32::NAN, 1.0]).unwrap_err();
        assert_eq!(err.to_string(), "non-finite value at index 1");
    }

    #[test]
    fn file_roundtrip_keeps_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.dtf");
        let t = FeatureTensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-30, -0.0]).unwrap();
        write_tensor(&t, &path).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.shape(), &[2, 3]);
        assert_eq!(read_tensor_shape(&path).unwrap(), vec![2, 3]);
        let bits = |t: &FeatureTensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&t));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_tensor(&FeatureTensor::new(vec![1], vec![1.0]).unwrap()).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        let err = decode_tensor(&bytes).unwrap_err();
        assert!(err.to_string().starts_with("bad magic"), "{err}");
    }

    #[test]
    fn truncated_payload() {
        let t = FeatureTensor::new(vec![10], vec![1.0; 10]).unwrap();
        let bytes = encode_tensor(&t).unwrap();
        let err = decode_tensor(&bytes[..bytes.len() - 4]).unwrap_err();
        assert!(err.to_string().starts_with("truncated"), "{err}");
        assert!(err.to_string().contains("10"), "{err}");
        assert!(err.to_string().contains("9 present"), "{err}");
    }

    #[test]
    fn unsupported_dtype() {
        let mut bytes = encode_tensor(&FeatureTensor::new(vec![1], vec![1.0]).unwrap()).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode_tensor(&bytes),
            Err(Error::UnsupportedDtype(2))
        ));
    }

    #[test]
    fn nan_in_file_is_rejected_on_load() {
        let mut bytes =
            encode_tensor(&FeatureTensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(decode_tensor(&bytes), Err(Error::NonFinite(1))));
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(FeatureTensor::new(vec![0, 3], vec![]).is_err());
    }

    #[test]
    fn manifest_224_over_8() {
        let e = entry("a", 224, 8);
        assert_eq!(e.grid(), GridShape::square(28));
        assert_eq!(e.patch_count(), 784);
        DatasetManifest {
            images: vec![e],
            ..Default::default()
        }
        .validate()
        .unwrap();
    }

    #[test]
    fn manifest_225_over_8_rejected() {
        let mut e = entry("a", 224, 8);
        e.resized_side = 225;
        let m = DatasetManifest {
            images: vec![e],
            ..Default::default()
        };
        let err = m.validate().unwrap_err();
        assert!(err.to_string().contains("T not divisible by t"), "{err}");
    }

    #[test]
    fn manifest_duplicate_ids_rejected() {
        let m = DatasetManifest {
            images: vec![entry("a", 224, 8), entry("a", 224, 8)],
            ..Default::default()
        };
        assert!(m.validate().is_err());
    }

    #[test]
    fn manifest_roundtrip_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut merge = BTreeMap::new();
        merge.insert("0".to_string(), 0);
        merge.insert("7".to_string(), 0);
        merge.insert("1".to_string(), 1);
        let mut e = entry("img", 112, 8);
        e.gt_mask_path = Some("gt/img.png".into());
        let m = DatasetManifest {
            images: vec![e, entry("other", 224, 16)],
            label_merge: Some(merge),
            num_classes: None,
        };
        save_manifest(&m, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), m);
        assert_eq!(m.class_count(), Some(2));

        let mut value: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        value["future_field"] = serde_json::json!({"x": 1});
        value["images"][0]["extra"] = serde_json::json!(true);
        fs::write(&path, value.to_string()).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), m);
    }

    #[test]
    fn manifest_checks_feature_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = DatasetManifest {
            images: vec![entry("img", 16, 8)],
            ..Default::default()
        };
        save_manifest(&m, &path).unwrap();
        // 2x2 grid needs 4 rows
        let bad = FeatureTensor::new(vec![3, 2], vec![1.0; 6]).unwrap();
        write_tensor(&bad, dir.path().join("img.dtf")).unwrap();
        assert!(load_manifest(&path).is_err());
        let good = FeatureTensor::new(vec![4, 2], vec![1.0; 8]).unwrap();
        write_tensor(&good, dir.path().join("img.dtf")).unwrap();
        load_manifest(&path).unwrap();
    }

    proptest! {
        #[test]
        fn roundtrip_is_bitwise(
            shape in proptest::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            let numel: usize = shape.iter().product();
            let mut state = seed;
            let data: Vec<f32> = (0..numel)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let v = f32::from_bits((state >> 32) as u32);
                    if v.is_finite() { v } else { 0.5 }
                })
                .collect();
            let t = FeatureTensor::new(shape, data).unwrap();
            let back = decode_tensor(&encode_tensor(&t).unwrap()).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            let a: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
