use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{RenderBackend, SceneError};
use crate::flow::{read_flo, DenseFlowField, FlowBackend, FlowError, GrayImage, View, ViewRole, LUMA_WEIGHTS};
use crate::geom::{CameraIntrinsics, Pose};

/// Pose-match tolerance, in scene units for position and radians for rotation.
pub const POSE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestView {
    /// Row-major 3×4 camera-to-world `[R | t]`.
    pub pose: Vec<f64>,
    pub file: String,
}

/// Endpoint of a stored flow field: the sensor image or a rendered pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ViewKey {
    Named(String),
    Pose(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFlow {
    pub from: ViewKey,
    pub to: ViewKey,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<CameraIntrinsics>,
    pub views: Vec<ManifestView>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flows: Vec<ManifestFlow>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestFile {
    Full(Manifest),
    Bare(Vec<ManifestView>),
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self, SceneError> {
        let file: ManifestFile = serde_json::from_str(text).map_err(|e| SceneError::BadManifest(e.to_string()))?;
        let m = match file {
            ManifestFile::Full(m) => m,
            ManifestFile::Bare(views) => Manifest { intrinsics: None, views, flows: Vec::new() },
        };
        for (i, v) in m.views.iter().enumerate() {
            Pose::from_row_major(&v.pose).map_err(|e| SceneError::BadManifest(format!("view {i}: {e}")))?;
        }
        for (i, f) in m.flows.iter().enumerate() {
            for key in [&f.from, &f.to] {
                match key {
                    ViewKey::Named(n) if n == "sensor" => {}
                    ViewKey::Named(n) => return Err(SceneError::BadManifest(format!("flow {i}: unknown view {n:?}"))),
                    ViewKey::Pose(p) => {
                        Pose::from_row_major(p).map_err(|e| SceneError::BadManifest(format!("flow {i}: {e}")))?;
                    }
                }
            }
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| SceneError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SceneError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| SceneError::BadManifest(e.to_string()))?;
        std::fs::write(path.as_ref(), text).map_err(|e| SceneError::Io(format!("{}: {e}", path.as_ref().display())))
    }
}

/// Decode a PNG (or any format the `image` crate was built with) to gray
/// using luma weights.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage, SceneError> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| SceneError::ImageDecode(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        image::DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| (p[0] as f32 * LUMA_WEIGHTS[0] + p[1] as f32 * LUMA_WEIGHTS[1] + p[2] as f32 * LUMA_WEIGHTS[2]) / 255.0)
            .collect(),
    };
    GrayImage::new(w, h, data).map_err(|e| SceneError::ImageDecode(e.to_string()))
}

/// Write an 8-bit grayscale PNG.
pub fn save_png(path: impl AsRef<Path>, img: &GrayImage) -> Result<(), SceneError> {
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, img.to_luma8()).expect("buffer sized from image");
    buf.save(path.as_ref()).map_err(|e| SceneError::Io(format!("{}: {e}", path.as_ref().display())))
}

/// Serves images (and optionally flow fields) rendered elsewhere, looked up
/// by pose.
#[derive(Debug)]
pub struct ImageDirectoryBackend {
    root: PathBuf,
    k: CameraIntrinsics,
    views: Vec<(Pose, String)>,
    flows: Vec<(Option<Pose>, Option<Pose>, String)>,
    cache: Mutex<HashMap<String, Arc<GrayImage>>>,
}

impl ImageDirectoryBackend {
    /// Open a manifest. `fallback` supplies intrinsics when the manifest has none.
    pub fn open(manifest_path: impl AsRef<Path>, fallback: Option<CameraIntrinsics>) -> Result<Self, SceneError> {
        let manifest_path = manifest_path.as_ref();
        let manifest = Manifest::load(manifest_path)?;
        let k = manifest
            .intrinsics
            .or(fallback)
            .ok_or_else(|| SceneError::BadManifest("no intrinsics in manifest and none supplied".into()))?;
        k.validate().map_err(|e| SceneError::BadManifest(e.to_string()))?;
        let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let key = |k: &ViewKey| match k {
            ViewKey::Pose(p) => Some(Pose::from_row_major(p).expect("validated")),
            ViewKey::Named(_) => None,
        };
        Ok(Self {
            root,
            k,
            views: manifest.views.iter().map(|v| (Pose::from_row_major(&v.pose).expect("validated"), v.file.clone())).collect(),
            flows: manifest.flows.iter().map(|f| (key(&f.from), key(&f.to), f.file.clone())).collect(),
            cache: Mutex::new(HashMap::new()),
        })
    }

    fn matches(a: &Pose, b: &Pose) -> bool {
        (a.position() - b.position()).norm() <= POSE_TOLERANCE && a.rotation_angle_to(b) <= POSE_TOLERANCE
    }

    fn find_view(&self, pose: &Pose) -> Result<&str, SceneError> {
        if let Some((_, f)) = self.views.iter().find(|(p, _)| Self::matches(p, pose)) {
            return Ok(f);
        }
        let nearest = self
            .views
            .iter()
            .min_by(|a, b| (a.0.position() - pose.position()).norm().total_cmp(&(b.0.position() - pose.position()).norm()));
        let (nearest_position, nearest_rotation) = nearest
            .map(|(p, _)| ((p.position() - pose.position()).norm(), p.rotation_angle_to(pose)))
            .unwrap_or((f64::INFINITY, f64::INFINITY));
        Err(SceneError::PoseNotFound { nearest_position, nearest_rotation })
    }

    fn image(&self, file: &str) -> Result<Arc<GrayImage>, SceneError> {
        if let Some(img) = self.cache.lock().expect("cache lock").get(file) {
            return Ok(img.clone());
        }
        let img = load_image(self.root.join(file))?;
        if img.width() != self.k.width || img.height() != self.k.height {
            return Err(SceneError::ImageDecode(format!(
                "{file} is {}x{}, intrinsics expect {}x{}",
                img.width(),
                img.height(),
                self.k.width,
                self.k.height
            )));
        }
        let img = Arc::new(img);
        self.cache.lock().expect("cache lock").insert(file.to_string(), img.clone());
        Ok(img)
    }
}

impl RenderBackend for ImageDirectoryBackend {
    fn intrinsics(&self) -> &CameraIntrinsics {
        &self.k
    }

    fn render(&self, pose: &Pose) -> Result<GrayImage, SceneError> {
        let file = self.find_view(pose)?.to_string();
        let img = self.image(&file)?;
        if img.is_blank() {
            return Err(SceneError::EmptyView);
        }
        Ok((*img).clone())
    }
}

impl FlowBackend for ImageDirectoryBackend {
    fn dense_flow(&self, from: &View, to: &View) -> Result<DenseFlowField, FlowError> {
        let endpoint = |v: &View, stored: &Option<Pose>| match (v.role, stored) {
            (ViewRole::Sensor, None) => true,
            (ViewRole::Sensor, Some(_)) | (_, None) => false,
            (_, Some(p)) => v.pose.is_some_and(|q| Self::matches(p, &q)),
        };
        let file = self
            .flows
            .iter()
            .find(|(a, b, _)| endpoint(from, a) && endpoint(to, b))
            .map(|(_, _, f)| f.clone())
            .ok_or_else(|| FlowError::Unsupported(format!("no stored flow {:?} -> {:?}", from.role, to.role)))?;
        let field = read_flo(self.root.join(&file))?;
        if field.width() != self.k.width || field.height() != self.k.height {
            return Err(FlowError::DimensionMismatch { expected: (self.k.width, self.k.height), got: (field.width(), field.height()) });
        }
        Ok(field)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::write_flo;
    use crate::geom::PixelPoint;
    use nalgebra::Vector3;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::centered(20.0, 24, 16)
    }

    fn fixture(dir: &Path) -> (Pose, GrayImage) {
        let pose = Pose::look_at(Vector3::new(1.0, 2.0, 3.0), Vector3::zeros(), Vector3::z()).unwrap();
        let img = GrayImage::from_fn(24, 16, |x, y| ((x * 10 + y * 3) % 256) as f32 / 255.0);
        save_png(dir.join("a.png"), &img).unwrap();
        write_flo(dir.join("f.flo"), &DenseFlowField::from_fn(24, 16, |x, _| [x as f32, 1.0])).unwrap();
        let m = Manifest {
            intrinsics: Some(k()),
            views: vec![ManifestView { pose: pose.to_row_major().to_vec(), file: "a.png".into() }],
            flows: vec![ManifestFlow { from: ViewKey::Pose(pose.to_row_major().to_vec()), to: ViewKey::Named("sensor".into()), file: "f.flo".into() }],
        };
        m.save(dir.join("manifest.json")).unwrap();
        (pose, img)
    }

    #[test]
    fn exact_pose_returns_stored_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let (pose, img) = fixture(dir.path());
        let b = ImageDirectoryBackend::open(dir.path().join("manifest.json"), None).unwrap();
        let got = b.render(&pose).unwrap();
        assert_eq!(got.to_luma8(), img.to_luma8());
    }

    #[test]
    fn distant_pose_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let (pose, _) = fixture(dir.path());
        let b = ImageDirectoryBackend::open(dir.path().join("manifest.json"), None).unwrap();
        let err = b.render(&pose.translated(&Vector3::new(1.0, 0.0, 0.0))).unwrap_err();
        assert!(matches!(err, SceneError::PoseNotFound { nearest_position, .. } if (nearest_position - 1.0).abs() < 1e-9));
    }

    #[test]
    fn missing_file_field_is_bad_manifest() {
        let err = Manifest::parse(r#"[{"pose": [1,0,0,0, 0,1,0,0, 0,0,1,0]}]"#).unwrap_err();
        assert!(matches!(err, SceneError::BadManifest(_)));
    }

    #[test]
    fn bare_array_accepted() {
        let m = Manifest::parse(r#"[{"pose": [1,0,0,0, 0,1,0,0, 0,0,1,0], "file": "x.png"}]"#).unwrap();
        assert_eq!(m.views.len(), 1);
        assert!(m.intrinsics.is_none());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let m = Manifest::load(dir.path().join("manifest.json")).unwrap();
        m.save(dir.path().join("copy.json")).unwrap();
        assert_eq!(Manifest::load(dir.path().join("copy.json")).unwrap(), m);
    }

    #[test]
    fn stored_flow_is_served() {
        let dir = tempfile::tempdir().unwrap();
        let (pose, img) = fixture(dir.path());
        let b = ImageDirectoryBackend::open(dir.path().join("manifest.json"), None).unwrap();
        let from = View { role: ViewRole::Estimate, pose: Some(pose), image: &img };
        let to = View { role: ViewRole::Sensor, pose: None, image: &img };
        let s = b.sparse_flow(&from, &to, &[PixelPoint::new(5.5, 3.0)]).unwrap();
        assert!((s.vectors[0].x - 5.5).abs() < 1e-6);
        assert!(matches!(b.sparse_flow(&to, &from, &[]), Err(FlowError::Unsupported(_))));
    }

    #[test]
    fn wrong_size_image_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (pose, _) = fixture(dir.path());
        let b = ImageDirectoryBackend::open(dir.path().join("manifest.json"), Some(k())).unwrap();
        save_png(dir.path().join("a.png"), &GrayImage::filled(30, 30, 0.5)).unwrap();
        assert!(matches!(b.render(&pose), Err(SceneError::ImageDecode(_))));
    }

    #[test]
    fn intrinsics_required() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("m.json"), r#"[{"pose": [1,0,0,0, 0,1,0,0, 0,0,1,0], "file": "x.png"}]"#).unwrap();
        assert!(matches!(ImageDirectoryBackend::open(dir.path().join("m.json"), None), Err(SceneError::BadManifest(_))));
        assert!(ImageDirectoryBackend::open(dir.path().join("m.json"), Some(k())).is_ok());
    }
}
