//! Volume containers: NIfTI-1 (`.nii`, `.nii.gz`) and a raw little-endian
//! grid format (`.bin`) used for fixtures.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array, ShapeBuilder};
use nifti::writer::WriterOptions;
use nifti::{IntoNdArray, NiftiHeader, NiftiObject, ReaderOptions};

use super::volume::{Volume, VolumeCase};
use crate::error::{Error, Result};

/// Extensions probed when resolving a case id, in order.
pub const EXTENSIONS: [&str; 3] = ["nii.gz", "nii", "bin"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Nifti,
    Raw,
}

impl Format {
    pub fn of(path: &Path) -> Result<Self> {
        let name = path.to_string_lossy();
        if name.ends_with(".nii") || name.ends_with(".nii.gz") {
            Ok(Format::Nifti)
        } else if name.ends_with(".bin") {
            Ok(Format::Raw)
        } else {
            Err(Error::InvalidArgument(format!("unsupported volume container: {name}")))
        }
    }
}

fn read_raw(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 {
        return Err(Error::InvalidVolume(format!("{}: truncated header", path.display())));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let dims = [dim(0), dim(1), dim(2)];
    let body = &bytes[12..];
    if body.len() != dims.iter().product::<usize>() * 4 {
        return Err(Error::InvalidVolume(format!(
            "{}: {} payload bytes for dimensions {dims:?}",
            path.display(),
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume::new(dims, data)
}

fn write_raw(path: &Path, v: &Volume) -> Result<()> {
    let mut out = Vec::with_capacity(12 + v.data().len() * 4);
    for d in v.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for x in v.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_nifti(path: &Path) -> Result<(Volume, [f64; 3])> {
    let obj = ReaderOptions::new().read_file(path)?;
    let pix = obj.header().pixdim;
    let arr = obj.into_volume().into_ndarray::<f32>()?;
    let shape = arr.shape().to_vec();
    let dims = match shape.as_slice() {
        [a, b, c] => [*a, *b, *c],
        [a, b, c, 1] => [*a, *b, *c],
        other => {
            return Err(Error::InvalidVolume(format!(
                "{}: expected a 3D volume, found dimensions {other:?}",
                path.display()
            )))
        }
    };
    // logical (row-major) iteration regardless of the array's memory order
    let data: Vec<f32> = arr.iter().copied().collect();
    let spacing = [pix[1] as f64, pix[2] as f64, pix[3] as f64].map(|s| if s > 0.0 { s } else { 1.0 });
    Ok((Volume::new(dims, data)?, spacing))
}

fn write_nifti(path: &Path, v: &Volume, spacing: [f64; 3]) -> Result<()> {
    let arr = Array::from_shape_vec(v.dims().into_shape_with_order(), v.data().to_vec())
        .map_err(|e| Error::InvalidVolume(e.to_string()))?;
    let mut header = NiftiHeader::default();
    header.pixdim[1] = spacing[0] as f32;
    header.pixdim[2] = spacing[1] as f32;
    header.pixdim[3] = spacing[2] as f32;
    WriterOptions::new(path).reference_header(&header).write_nifti(&arr)?;
    Ok(())
}

/// Reads a volume and its voxel spacing (1 mm when the container has none).
pub fn read_volume(path: &Path) -> Result<(Volume, [f64; 3])> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    match Format::of(path)? {
        Format::Nifti => read_nifti(path),
        Format::Raw => Ok((read_raw(path)?, [1.0; 3])),
    }
}

pub fn write_volume(path: &Path, v: &Volume, spacing: [f64; 3]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    match Format::of(path)? {
        Format::Nifti => write_nifti(path, v, spacing),
        Format::Raw => write_raw(path, v),
    }
}

pub fn image_path(dir: &Path, case_id: &str, ext: &str) -> PathBuf {
    dir.join(format!("{case_id}_t1.{ext}"))
}

pub fn label_path(dir: &Path, case_id: &str, ext: &str) -> PathBuf {
    dir.join(format!("{case_id}_label.{ext}"))
}

/// Splits `<dir>/<case_id>_t1.<ext>` into its parts.
pub fn parse_image_path(path: &Path) -> Option<(PathBuf, String, String)> {
    let name = path.file_name()?.to_str()?;
    let ext = EXTENSIONS.iter().find(|e| name.ends_with(&format!("_t1.{e}")))?;
    let case_id = &name[..name.len() - ext.len() - 4];
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Some((dir, case_id.to_string(), ext.to_string()))
}

/// Loads an image/label pair given the image path.
pub fn load_case(image: &Path) -> Result<VolumeCase> {
    let (dir, case_id, ext) = parse_image_path(image).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "{} does not follow the <case_id>_t1.<ext> naming",
            image.display()
        ))
    })?;
    let (img, spacing) = read_volume(image)?;
    let (lbl, _) = read_volume(&label_path(&dir, &case_id, &ext))?;
    VolumeCase::new(case_id, img, lbl, spacing)
}

/// Finds the image file of `case_id` under `dir`.
pub fn find_case(dir: &Path, case_id: &str) -> Result<PathBuf> {
    EXTENSIONS
        .iter()
        .map(|ext| image_path(dir, case_id, ext))
        .find(|p| p.exists())
        .ok_or_else(|| {
            Error::io(
                image_path(dir, case_id, "nii.gz"),
                std::io::Error::new(std::io::ErrorKind::NotFound, format!("no image for case {case_id}")),
            )
        })
}

pub fn save_case(dir: &Path, case: &VolumeCase, ext: &str) -> Result<PathBuf> {
    let img = image_path(dir, &case.case_id, ext);
    write_volume(&img, &case.image, case.spacing)?;
    write_volume(&label_path(dir, &case.case_id, ext), &case.label, case.spacing)?;
    Ok(img)
}

/// Case ids listed one per line; blank lines and `#` comments are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

/// Loads every case named in a manifest, resolved relative to its directory.
pub fn load_manifest_cases(manifest: &Path) -> Result<Vec<VolumeCase>> {
    let ids = read_manifest(manifest)?;
    let dir = manifest.parent().unwrap_or(Path::new("."));
    ids.iter().map(|id| load_case(&find_case(dir, id)?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> VolumeCase {
        let img: Vec<f32> = (0..16 * 16 * 8).map(|i| (i % 97) as f32 * 0.5).collect();
        let lbl: Vec<f32> = (0..16 * 16 * 8).map(|i| ((i / 7) % 2) as f32).collect();
        VolumeCase::new(
            "c01",
            Volume::new([16, 16, 8], img).unwrap(),
            Volume::new([16, 16, 8], lbl).unwrap(),
            [0.9, 0.9, 3.0],
        )
        .unwrap()
    }

    #[test]
    fn raw_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let case = sample();
        let p = save_case(dir.path(), &case, "bin").unwrap();
        let back = load_case(&p).unwrap();
        assert_eq!(back.image, case.image);
        assert_eq!(back.label, case.label);
        assert_eq!(back.dims(), [16, 16, 8]);
    }

    #[test]
    fn nifti_round_trip_keeps_axes_and_spacing() {
        let dir = tempfile::tempdir().unwrap();
        let mut case = sample();
        case.image = Volume::new([5, 7, 3], (0..105).map(|v| v as f32).collect()).unwrap();
        case.label = Volume::zeros([5, 7, 3]);
        for ext in ["nii", "nii.gz"] {
            let p = save_case(dir.path(), &case, ext).unwrap();
            let back = load_case(&p).unwrap();
            assert_eq!(back.image, case.image, "{ext}");
            assert_eq!(back.image.get(4, 1, 2), case.image.get(4, 1, 2));
            assert!((back.spacing[2] - 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn mismatched_label_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let case = sample();
        let p = save_case(dir.path(), &case, "bin").unwrap();
        write_volume(&label_path(dir.path(), "c01", "bin"), &Volume::zeros([16, 16, 7]), [1.0; 3]).unwrap();
        assert!(matches!(load_case(&p), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn missing_label_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let case = sample();
        write_volume(&image_path(dir.path(), "c01", "bin"), &case.image, [1.0; 3]).unwrap();
        let err = load_case(&image_path(dir.path(), "c01", "bin")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn manifest_skips_comments() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("cases.txt");
        fs::write(&m, "# ids\nc01\n\n c02 \n").unwrap();
        assert_eq!(read_manifest(&m).unwrap(), vec!["c01", "c02"]);
    }

    #[test]
    fn image_path_parsing() {
        let (dir, id, ext) = parse_image_path(Path::new("/d/sub_01_t1.nii.gz")).unwrap();
        assert_eq!((dir, id.as_str(), ext.as_str()), (PathBuf::from("/d"), "sub_01", "nii.gz"));
        assert!(parse_image_path(Path::new("/d/sub.nii")).is_none());
    }
}
