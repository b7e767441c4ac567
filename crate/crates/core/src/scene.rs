//! Scene container and the scene directory format.
//!
//! ```text
//! <dir>/gaussians.ply        Gaussian set
//! <dir>/cameras.txt          training cameras
//! <dir>/test_cameras.txt     held-out cameras (optional)
//! <dir>/images/<id>.ppm      ground truth for every camera
//! <dir>/config.toml          key = value overrides (optional, read by the CLI)
//! ```

use std::path::Path;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianPrimitive;
use crate::image::Image;
use crate::io::{cameras, ply, ppm};

pub const GAUSSIANS_FILE: &str = "gaussians.ply";
pub const CAMERAS_FILE: &str = "cameras.txt";
pub const TEST_CAMERAS_FILE: &str = "test_cameras.txt";
pub const IMAGES_DIR: &str = "images";
pub const CONFIG_FILE: &str = "config.toml";
pub const FLOATER_FLAGS_FILE: &str = "floater_flags.txt";

/// A camera paired with its ground-truth image.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<GaussianPrimitive>,
    pub train: Vec<View>,
    pub test: Vec<View>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.gaussians.is_empty() {
            return Err(Error::EmptyGaussians);
        }
        if let Some(i) = self.gaussians.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                what: "gaussian parameter",
                index: i,
            });
        }
        let mut ids = std::collections::BTreeSet::new();
        for view in self.train.iter().chain(&self.test) {
            view.camera.validate()?;
            if !ids.insert(view.camera.id) {
                return Err(Error::InvalidArgument(format!("duplicate camera id {}", view.camera.id)));
            }
            if view.image.width() != view.camera.width || view.image.height() != view.camera.height {
                return Err(Error::ShapeMismatch(format!(
                    "camera {} is {}x{} but its image is {}x{}",
                    view.camera.id,
                    view.camera.width,
                    view.camera.height,
                    view.image.width(),
                    view.image.height()
                )));
            }
            if view.image.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(format!(
                    "image for camera {} has values outside [0, 1]",
                    view.camera.id
                )));
            }
        }
        Ok(())
    }

    pub fn train_cameras(&self) -> Vec<Camera> {
        self.train.iter().map(|v| v.camera.clone()).collect()
    }
}

fn image_path(dir: &Path, id: u32) -> std::path::PathBuf {
    dir.join(IMAGES_DIR).join(format!("{id}.ppm"))
}

pub fn load_scene(dir: &Path) -> Result<Scene> {
    let gaussians = ply::read(&dir.join(GAUSSIANS_FILE))?;
    let load_views = |file: &str, required: bool| -> Result<Vec<View>> {
        let path = dir.join(file);
        if !required && !path.exists() {
            return Ok(Vec::new());
        }
        cameras::read(&path)?
            .into_iter()
            .map(|camera| {
                let image = ppm::read(&image_path(dir, camera.id))?;
                Ok(View { camera, image })
            })
            .collect()
    };
    let scene = Scene {
        gaussians,
        train: load_views(CAMERAS_FILE, true)?,
        test: load_views(TEST_CAMERAS_FILE, false)?,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn save_scene(scene: &Scene, dir: &Path) -> Result<()> {
    scene.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    ply::write(&dir.join(GAUSSIANS_FILE), &scene.gaussians)?;
    cameras::write(&dir.join(CAMERAS_FILE), &scene.train_cameras())?;
    let test: Vec<Camera> = scene.test.iter().map(|v| v.camera.clone()).collect();
    cameras::write(&dir.join(TEST_CAMERAS_FILE), &test)?;
    for view in scene.train.iter().chain(&scene.test) {
        ppm::write(&image_path(dir, view.camera.id), &view.image)?;
    }
    Ok(())
}

pub fn write_floater_flags(path: &Path, flags: &[bool]) -> Result<()> {
    let mut text = String::new();
    for (i, _) in flags.iter().enumerate().filter(|(_, f)| **f) {
        text.push_str(&format!("{i}\n"));
    }
    crate::io::write_file(path, text.as_bytes())
}

/// Read an index list and expand it into `len` flags.
pub fn read_floater_flags(path: &Path, len: usize) -> Result<Vec<bool>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = path.display().to_string();
    let mut flags = vec![false; len];
    for (record, line) in text.lines().map(str::trim).filter(|l| !l.is_empty()).enumerate() {
        let i: usize = line
            .parse()
            .map_err(|_| Error::parse(&file, record, format!("bad index `{line}`")))?;
        if i >= len {
            return Err(Error::parse(&file, record, format!("index {i} out of range for {len} gaussians")));
        }
        flags[i] = true;
    }
    Ok(flags)
}
