//! File layout shared by the subcommands.
//!
//! A rig directory holds one tensor per camera and level, named
//! `{prefix}cam{j}_level{l}.fpde` with level 0 the coarsest.

use std::io;
use std::path::{Path, PathBuf};

use freqpde::geometry::CameraModel;
use freqpde::pipeline::FORMAT_VERSION;
use freqpde::{container, io as fio, Error, Result, Tensor};
use serde::Serialize;
use serde_json::Value;

pub fn grid_file(dir: &Path, prefix: &str, cam: usize, level: usize) -> PathBuf {
    dir.join(format!("{prefix}cam{cam}_level{level}.fpde"))
}

/// Attaches `path` to I/O errors, which otherwise do not name the file.
pub fn at_path(path: &Path) -> impl FnOnce(Error) -> Error + '_ {
    move |e| match e {
        Error::Io(err) => Error::Io(io::Error::new(err.kind(), format!("{}: {err}", path.display()))),
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    }
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    container::load(path).map_err(at_path(path))
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    container::save(path, t).map_err(at_path(path))
}

/// Loads a `[level][camera]` grid of tensors. Cameras and levels are
/// discovered by counting up from zero until a file is missing.
pub fn load_grid(dir: &Path, prefix: &str) -> Result<Vec<Vec<Tensor>>> {
    if !dir.is_dir() {
        return Err(Error::Io(io::Error::new(
            io::ErrorKind::NotFound,
            format!("{}: not a directory", dir.display()),
        )));
    }
    let cams = (0..).take_while(|&j| grid_file(dir, prefix, j, 0).is_file()).count();
    let levels = (0..).take_while(|&l| grid_file(dir, prefix, 0, l).is_file()).count();
    if cams == 0 {
        return Err(Error::InvalidParam(format!(
            "{}: no `{prefix}cam0_level0.fpde` found",
            dir.display()
        )));
    }
    (0..levels)
        .map(|l| {
            (0..cams)
                .map(|j| {
                    let p = grid_file(dir, prefix, j, l);
                    if !p.is_file() {
                        return Err(Error::InvalidParam(format!(
                            "{}: camera {j} is missing level {l}",
                            dir.display()
                        )));
                    }
                    load_tensor(&p)
                })
                .collect()
        })
        .collect()
}

pub fn load_cameras(path: &Path) -> Result<Vec<CameraModel>> {
    fio::load_calibration(path).map_err(at_path(path))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| at_path(dir)(e.into()))
}

/// Serializes `value` and adds the format `version` if it has none.
pub fn versioned<T: Serialize>(value: &T) -> Result<Value> {
    let mut v = serde_json::to_value(value)?;
    if let Value::Object(map) = &mut v {
        map.entry("version").or_insert_with(|| Value::String(FORMAT_VERSION.into()));
    }
    Ok(v)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&versioned(value)?)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| at_path(path)(e.into()))
}

pub fn print_json<T: Serialize>(value: &T) -> Result<()> {
    out!("{}", serde_json::to_string_pretty(&versioned(value)?)?);
    Ok(())
}
