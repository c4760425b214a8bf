//! On-disk container: a JSON manifest `<base>.json` next to a raw
//! little-endian blob `<base>.bin`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use mrisde::grid::{ComplexImage, RealImage, C64};
use mrisde::measurement::{MaskKind, SamplingMask, SensitivityMaps};
use mrisde::score::{ConvScoreNet, TrainConfig};
use mrisde::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const LAYOUT: &str = "row-major";
pub const BYTE_ORDER: &str = "little";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    C64,
    F32,
    U8,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::C64 => 8,
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub layout: String,
    pub byte_order: String,
    pub role: String,
    pub extra: Map<String, Value>,
}

const MANIFEST_KEYS: [&str; 6] = ["dtype", "shape", "layout", "byte_order", "role", "extra"];

fn field<T: for<'de> Deserialize<'de>>(obj: &mut Map<String, Value>, key: &str) -> Result<T> {
    let v = obj
        .remove(key)
        .ok_or_else(|| Error::format(key, "missing"))?;
    serde_json::from_value(v).map_err(|e| Error::format(key, e.to_string()))
}

impl Manifest {
    pub fn new(dtype: Dtype, shape: Vec<usize>, role: impl Into<String>) -> Self {
        Self {
            dtype,
            shape,
            layout: LAYOUT.into(),
            byte_order: BYTE_ORDER.into(),
            role: role.into(),
            extra: Map::new(),
        }
    }

    pub fn with_extra(mut self, key: &str, value: impl Serialize) -> Self {
        let v = serde_json::to_value(value).expect("extra values are plain data");
        self.extra.insert(key.into(), v);
        self
    }

    pub fn element_count(&self) -> Result<usize> {
        self.shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format("shape", "element count overflows"))
    }

    /// Exact length of the matching blob.
    pub fn byte_len(&self) -> Result<usize> {
        self.element_count()?
            .checked_mul(self.dtype.size())
            .ok_or_else(|| Error::format("shape", "byte length overflows"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.is_empty() {
            return Err(Error::format("shape", "empty shape"));
        }
        if self.layout != LAYOUT {
            return Err(Error::format("layout", format!("unsupported layout `{}`", self.layout)));
        }
        if self.byte_order != BYTE_ORDER {
            return Err(Error::format(
                "byte_order",
                format!("unsupported byte order `{}`", self.byte_order),
            ));
        }
        self.byte_len().map(|_| ())
    }

    /// Parses and validates a manifest, naming the offending field on error.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let value: Value =
            serde_json::from_slice(bytes).map_err(|e| Error::format("manifest", e.to_string()))?;
        let Value::Object(mut obj) = value else {
            return Err(Error::format("manifest", "expected a JSON object"));
        };
        if let Some(k) = obj.keys().find(|k| !MANIFEST_KEYS.contains(&k.as_str())) {
            return Err(Error::format(k.clone(), "unknown field"));
        }
        let m = Manifest {
            dtype: field(&mut obj, "dtype")?,
            shape: field(&mut obj, "shape")?,
            layout: field(&mut obj, "layout")?,
            byte_order: field(&mut obj, "byte_order")?,
            role: field(&mut obj, "role")?,
            extra: match obj.remove("extra") {
                None => Map::new(),
                Some(v) => serde_json::from_value(v).map_err(|e| Error::format("extra", e.to_string()))?,
            },
        };
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    fn extra_field<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        let v = self
            .extra
            .get(key)
            .ok_or_else(|| Error::format(format!("extra.{key}"), "missing"))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::format(format!("extra.{key}"), e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Blob {
    C64(Vec<C64>),
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl Blob {
    pub fn dtype(&self) -> Dtype {
        match self {
            Blob::C64(_) => Dtype::C64,
            Blob::F32(_) => Dtype::F32,
            Blob::U8(_) => Dtype::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Blob::C64(v) => v.len(),
            Blob::F32(v) => v.len(),
            Blob::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Little-endian bytes; complex values as interleaved `(re, im)` f32 pairs.
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Blob::C64(v) => v
                .iter()
                .flat_map(|z| {
                    let mut b = [0u8; 8];
                    b[..4].copy_from_slice(&(z.re as f32).to_le_bytes());
                    b[4..].copy_from_slice(&(z.im as f32).to_le_bytes());
                    b
                })
                .collect(),
            Blob::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Blob::U8(v) => v.clone(),
        }
    }
}

fn f32s(bytes: &[u8]) -> Result<Vec<f32>> {
    let out: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(i) = out.iter().position(|x| !x.is_finite()) {
        return Err(Error::format("blob", format!("non-finite value at float {i}")));
    }
    Ok(out)
}

/// Decodes a blob against its manifest; the byte length must match exactly.
pub fn decode_blob(manifest: &Manifest, bytes: &[u8]) -> Result<Blob> {
    let expected = manifest.byte_len()?;
    if bytes.len() != expected {
        return Err(Error::format(
            "blob",
            format!("length mismatch: manifest implies {expected} bytes, found {}", bytes.len()),
        ));
    }
    Ok(match manifest.dtype {
        Dtype::C64 => Blob::C64(
            f32s(bytes)?
                .chunks_exact(2)
                .map(|p| C64::new(p[0] as f64, p[1] as f64))
                .collect(),
        ),
        Dtype::F32 => Blob::F32(f32s(bytes)?),
        Dtype::U8 => Blob::U8(bytes.to_vec()),
    })
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = base.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn manifest_path(base: &Path) -> PathBuf {
    with_suffix(base, ".json")
}

pub fn blob_path(base: &Path) -> PathBuf {
    with_suffix(base, ".bin")
}

pub fn provenance_path(base: &Path) -> PathBuf {
    with_suffix(base, ".provenance.json")
}

pub fn metrics_path(base: &Path) -> PathBuf {
    with_suffix(base, ".metrics.json")
}

/// `<base><suffix>` as a new base path, e.g. `run.mean`.
pub fn derived(base: &Path, suffix: &str) -> PathBuf {
    with_suffix(base, suffix)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn save(base: &Path, manifest: &Manifest, blob: &Blob) -> Result<()> {
    manifest.validate()?;
    if manifest.dtype != blob.dtype() {
        return Err(Error::format("dtype", "manifest and blob disagree"));
    }
    if manifest.element_count()? != blob.len() {
        return Err(Error::format("shape", "manifest shape does not match the data"));
    }
    create_parent(base)?;
    fs::write(blob_path(base), blob.to_bytes())?;
    fs::write(manifest_path(base), manifest.to_json())?;
    Ok(())
}

pub fn load(base: &Path) -> Result<(Manifest, Blob)> {
    let manifest = Manifest::from_json(&fs::read(manifest_path(base))?)?;
    let blob = decode_blob(&manifest, &fs::read(blob_path(base))?)?;
    Ok((manifest, blob))
}

fn image_shape(m: &Manifest) -> Result<(usize, usize)> {
    match m.shape[..] {
        [h, w] if h > 0 && w > 0 => Ok((h, w)),
        _ => Err(Error::format("shape", format!("expected [H, W], got {:?}", m.shape))),
    }
}

pub fn save_complex(base: &Path, img: &ComplexImage, manifest: Manifest) -> Result<()> {
    let (h, w) = img.shape();
    let m = Manifest {
        dtype: Dtype::C64,
        shape: vec![h, w],
        ..manifest
    };
    save(base, &m, &Blob::C64(img.data().to_vec()))
}

/// Loads a `[H, W]` image; f32 data is read as a real-valued image.
pub fn decode_complex(m: &Manifest, blob: Blob) -> Result<ComplexImage> {
    let (h, w) = image_shape(m)?;
    match blob {
        Blob::C64(v) => ComplexImage::from_vec(h, w, v),
        Blob::F32(v) => ComplexImage::from_vec(h, w, v.into_iter().map(|x| C64::new(x as f64, 0.0)).collect()),
        Blob::U8(_) => Err(Error::format("dtype", "expected c64 or f32 image data")),
    }
}

pub fn load_complex(base: &Path) -> Result<(ComplexImage, Manifest)> {
    let (m, blob) = load(base)?;
    Ok((decode_complex(&m, blob)?, m))
}

pub fn save_real(base: &Path, img: &RealImage, manifest: Manifest) -> Result<()> {
    let (h, w) = img.shape();
    let m = Manifest {
        dtype: Dtype::F32,
        shape: vec![h, w],
        ..manifest
    };
    save(base, &m, &Blob::F32(img.data().iter().map(|&x| x as f32).collect()))
}

/// `[C, H, W]` stack of complex images (coil images, k-space, maps).
pub fn save_stack(base: &Path, imgs: &[ComplexImage], manifest: Manifest) -> Result<()> {
    let (h, w) = imgs
        .first()
        .map(|i| i.shape())
        .ok_or_else(|| Error::format("shape", "empty stack"))?;
    let mut data = Vec::with_capacity(imgs.len() * h * w);
    for img in imgs {
        img.ensure_shape((h, w))?;
        data.extend_from_slice(img.data());
    }
    let m = Manifest {
        dtype: Dtype::C64,
        shape: vec![imgs.len(), h, w],
        ..manifest
    };
    save(base, &m, &Blob::C64(data))
}

/// Accepts `[C, H, W]`, or `[H, W]` as a single entry.
pub fn decode_stack(m: &Manifest, blob: Blob) -> Result<Vec<ComplexImage>> {
    let (c, h, w) = match m.shape[..] {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        _ => return Err(Error::format("shape", format!("expected [C, H, W], got {:?}", m.shape))),
    };
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::format("shape", "zero-sized dimension"));
    }
    let Blob::C64(data) = blob else {
        return Err(Error::format("dtype", "expected c64"));
    };
    data.chunks_exact(h * w)
        .map(|chunk| ComplexImage::from_vec(h, w, chunk.to_vec()))
        .collect()
}

pub fn load_stack(base: &Path) -> Result<(Vec<ComplexImage>, Manifest)> {
    let (m, blob) = load(base)?;
    Ok((decode_stack(&m, blob)?, m))
}

pub fn load_maps(base: &Path) -> Result<SensitivityMaps> {
    let (stack, _) = load_stack(base)?;
    SensitivityMaps::from_maps(stack)
}

pub fn save_mask(base: &Path, mask: &SamplingMask, manifest: Manifest) -> Result<()> {
    let (h, w) = mask.shape();
    let m = Manifest {
        dtype: Dtype::U8,
        shape: vec![h, w],
        ..manifest
    }
    .with_extra("kind", mask.kind())
    .with_extra("accel", mask.requested_accel())
    .with_extra("acs", mask.acs_fraction());
    save(base, &m, &Blob::U8(mask.keep().iter().map(|&k| k as u8).collect()))
}

pub fn decode_mask(m: &Manifest, blob: Blob) -> Result<SamplingMask> {
    let (h, w) = image_shape(m)?;
    let Blob::U8(bytes) = blob else {
        return Err(Error::format("dtype", "expected u8 mask data"));
    };
    if let Some(i) = bytes.iter().position(|&b| b > 1) {
        return Err(Error::format("blob", format!("mask byte {i} is neither 0 nor 1")));
    }
    let kind: MaskKind = m.extra_field("kind")?;
    let accel: f64 = m.extra_field("accel")?;
    let acs: f64 = m.extra_field("acs")?;
    SamplingMask::from_keep(h, w, bytes.iter().map(|&b| b == 1).collect(), kind, accel, acs)
}

pub fn load_mask(base: &Path) -> Result<SamplingMask> {
    let (m, blob) = load(base)?;
    decode_mask(&m, blob)
}

#[derive(Serialize, Deserialize)]
struct Layer {
    name: String,
    shape: Vec<usize>,
}

/// Flat f32 parameter blob with layer shapes, noise-conditioning constants
/// and the training configuration in the manifest.
pub fn save_model(base: &Path, net: &ConvScoreNet<f32>, train: &TrainConfig, manifest: Manifest) -> Result<()> {
    let layers: Vec<Layer> = net
        .layer_shapes()
        .into_iter()
        .map(|(name, shape)| Layer { name, shape })
        .collect();
    let m = Manifest {
        dtype: Dtype::F32,
        shape: vec![net.params().len()],
        ..manifest
    }
    .with_extra("widths", net.widths())
    .with_extra("layers", layers)
    .with_extra("sigma_data", net.sigma_data())
    .with_extra("sigma_min", net.sigma_min())
    .with_extra("sigma_max", net.sigma_max())
    .with_extra("train_config", train);
    save(base, &m, &Blob::F32(net.params().to_vec()))
}

pub fn decode_model(m: &Manifest, blob: Blob) -> Result<ConvScoreNet<f32>> {
    let Blob::F32(params) = blob else {
        return Err(Error::format("dtype", "expected f32 parameters"));
    };
    let widths: Vec<usize> = m.extra_field("widths")?;
    if widths.len() > 64 || widths.iter().any(|&w| w > 4096) {
        return Err(Error::format("extra.widths", "implausible layer widths"));
    }
    let net = ConvScoreNet::from_parts(
        widths,
        params,
        m.extra_field("sigma_data")?,
        m.extra_field("sigma_min")?,
        m.extra_field("sigma_max")?,
    )?;
    let layers: Vec<Layer> = m.extra_field("layers")?;
    let expect = net.layer_shapes();
    if layers.len() != expect.len()
        || layers
            .iter()
            .zip(&expect)
            .any(|(l, (name, shape))| &l.name != name || &l.shape != shape)
    {
        return Err(Error::format("extra.layers", "layer table does not match the widths"));
    }
    Ok(net)
}

pub fn load_model(base: &Path) -> Result<ConvScoreNet<f32>> {
    let (m, blob) = load(base)?;
    decode_model(&m, blob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mrisde::grid::Rng;
    use mrisde::measurement::make_mask;

    fn random_complex(h: usize, w: usize, rng: &mut Rng) -> ComplexImage {
        ComplexImage::from_fn(h, w, |_, _| {
            C64::new(rng.normal() as f32 as f64, rng.normal() as f32 as f64)
        })
    }

    #[test]
    fn complex_roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("img");
        let img = random_complex(64, 64, &mut Rng::new(1, 0));
        save_complex(&base, &img, Manifest::new(Dtype::C64, vec![], "test")).unwrap();
        let (back, m) = load_complex(&base).unwrap();
        assert_eq!(back, img);
        assert_eq!(m.shape, vec![64, 64]);
    }

    #[test]
    fn c64_128_blob_size() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("k");
        let img = ComplexImage::zeros(128, 128);
        save_complex(&base, &img, Manifest::new(Dtype::C64, vec![], "kspace")).unwrap();
        assert_eq!(fs::metadata(blob_path(&base)).unwrap().len(), 131072);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("img");
        save_complex(&base, &ComplexImage::zeros(8, 8), Manifest::new(Dtype::C64, vec![], "x")).unwrap();
        let bytes = fs::read(blob_path(&base)).unwrap();
        fs::write(blob_path(&base), &bytes[..bytes.len() - 3]).unwrap();
        match load(&base) {
            Err(Error::Format { field, reason }) => {
                assert_eq!(field, "blob");
                assert!(reason.contains("length mismatch"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn manifest_errors_name_the_field() {
        let cases: [(&str, &str); 5] = [
            (r#"{"dtype":"c128","shape":[2],"layout":"row-major","byte_order":"little","role":""}"#, "dtype"),
            (r#"{"dtype":"f32","shape":[2],"layout":"col-major","byte_order":"little","role":""}"#, "layout"),
            (r#"{"dtype":"f32","layout":"row-major","byte_order":"little","role":""}"#, "shape"),
            (r#"{"dtype":"f32","shape":[2],"layout":"row-major","byte_order":"little","role":"","x":1}"#, "x"),
            (r#"{"dtype":"f32""#, "manifest"),
        ];
        for (json, expect) in cases {
            match Manifest::from_json(json.as_bytes()) {
                Err(Error::Format { field, .. }) => assert_eq!(field, expect, "{json}"),
                other => panic!("{json}: {other:?}"),
            }
        }
        let huge = r#"{"dtype":"c64","shape":[4294967296,4294967296],"layout":"row-major","byte_order":"little","role":""}"#;
        assert!(Manifest::from_json(huge.as_bytes()).is_err());
    }

    #[test]
    fn manifest_json_roundtrip() {
        let m = Manifest::new(Dtype::U8, vec![3, 4], "mask").with_extra("accel", 4.0);
        assert_eq!(Manifest::from_json(m.to_json().as_bytes()).unwrap(), m);
    }

    #[test]
    fn mask_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("mask");
        let mask = make_mask(MaskKind::Gaussian1d, 32, 32, 4.0, 0.08, &mut Rng::new(2, 0)).unwrap();
        save_mask(&base, &mask, Manifest::new(Dtype::U8, vec![], "mask")).unwrap();
        assert_eq!(load_mask(&base).unwrap(), mask);
    }

    #[test]
    fn model_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("model");
        let net = ConvScoreNet::<f32>::new(4, 0.3, 0.01, 378.0, &mut Rng::new(3, 0)).unwrap();
        save_model(&base, &net, &TrainConfig::default(), Manifest::new(Dtype::F32, vec![], "score_model")).unwrap();
        assert_eq!(load_model(&base).unwrap(), net);
    }

    #[test]
    fn stack_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("stack");
        let mut rng = Rng::new(4, 0);
        let imgs: Vec<ComplexImage> = (0..3).map(|_| random_complex(5, 7, &mut rng)).collect();
        save_stack(&base, &imgs, Manifest::new(Dtype::C64, vec![], "coils")).unwrap();
        let (back, m) = load_stack(&base).unwrap();
        assert_eq!(back, imgs);
        assert_eq!(m.shape, vec![3, 5, 7]);
    }
}
