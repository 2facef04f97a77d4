//! FMU archive assembly and inspection.
//!
//! Archives are deterministic: entries sorted by name, timestamps fixed at
//! the zip epoch, Unix permissions recorded explicitly.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Read, Seek, Write};
use std::path::{Path, PathBuf};

use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, System, ZipArchive, ZipWriter};

use crate::model_description::{ModelDescription, ModelDescriptionError, is_safe_relative_path};

pub const MODEL_DESCRIPTION: &str = "modelDescription.xml";
pub const RESOURCES_DIR: &str = "resources/";
pub const BINARIES_DIR: &str = "binaries/";

const MODE_EXEC: u32 = 0o755;
const MODE_FILE: u32 = 0o644;

#[derive(Debug, thiserror::Error)]
pub enum PackError {
    #[error("model description is invalid: {0}")]
    ValidationFailure(String),
    #[error("the model description names executable {0:?} but no platform binary was given")]
    MissingVpBinary(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {source}")]
    IoFailure { path: PathBuf, source: io::Error },
}

#[derive(Debug, thiserror::Error)]
pub enum InspectError {
    #[error("corrupt archive: {0}")]
    CorruptArchive(String),
    #[error("layout violation: {0}")]
    LayoutViolation(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PackError + '_ {
    move |source| PackError::IoFailure { path: path.to_owned(), source }
}

/// FMI platform tuple of the running host, e.g. `x86_64-linux`.
pub fn host_platform() -> String {
    let arch = std::env::consts::ARCH;
    let os = match std::env::consts::OS {
        "macos" => "darwin",
        other => other,
    };
    format!("{arch}-{os}")
}

/// Shared-library extension for the OS part of a platform tuple.
pub fn library_extension(platform: &str) -> Option<&'static str> {
    let (arch, os) = platform.split_once('-')?;
    if arch.is_empty() || arch.contains('/') {
        return None;
    }
    match os {
        "linux" => Some("so"),
        "darwin" => Some("dylib"),
        "windows" => Some("dll"),
        _ => None,
    }
}

/// Inputs of [`pack`].
#[derive(Debug, Clone, Default)]
pub struct PackInput {
    pub model_description: PathBuf,
    /// `(platform tuple, library file)` pairs.
    pub libraries: Vec<(String, PathBuf)>,
    pub vp_binary: Option<PathBuf>,
    /// `(source file, destination below resources/)` pairs.
    pub resources: Vec<(PathBuf, String)>,
}

struct Entry {
    data: Vec<u8>,
    mode: u32,
}

/// Builds the archive in memory, validating everything first.
pub fn pack_bytes(input: &PackInput) -> Result<Vec<u8>, PackError> {
    let md_bytes = fs::read(&input.model_description).map_err(io_err(&input.model_description))?;
    let md = ModelDescription::parse(&md_bytes).map_err(|e| PackError::ValidationFailure(e.to_string()))?;

    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    let mut add = |name: String, data: Vec<u8>, mode: u32| -> Result<(), PackError> {
        if entries.insert(name.clone(), Entry { data, mode }).is_some() {
            return Err(PackError::InvalidArgument(format!("two files map to {name}")));
        }
        Ok(())
    };
    add(MODEL_DESCRIPTION.into(), md_bytes, MODE_FILE)?;

    let id = &md.co_simulation.model_identifier;
    for (platform, lib) in &input.libraries {
        let ext = library_extension(platform)
            .ok_or_else(|| PackError::InvalidArgument(format!("unknown platform tuple {platform:?}")))?;
        let data = fs::read(lib).map_err(io_err(lib))?;
        add(format!("{BINARIES_DIR}{platform}/{id}.{ext}"), data, MODE_EXEC)?;
    }

    match (&md.vcml.executable, &input.vp_binary) {
        (Some(exe), Some(vp)) => {
            if !exe.starts_with(RESOURCES_DIR) {
                return Err(PackError::ValidationFailure(format!("executable {exe:?} must lie below {RESOURCES_DIR}")));
            }
            let data = fs::read(vp).map_err(io_err(vp))?;
            add(exe.clone(), data, MODE_EXEC)?;
        }
        (Some(exe), None) => return Err(PackError::MissingVpBinary(exe.clone())),
        (None, Some(_)) => {
            return Err(PackError::InvalidArgument(
                "a platform binary was given but the model description names no executable".into(),
            ));
        }
        (None, None) => {}
    }

    for (src, dst) in &input.resources {
        if !is_safe_relative_path(dst) {
            return Err(PackError::InvalidArgument(format!("bad resource destination {dst:?}")));
        }
        let data = fs::read(src).map_err(io_err(src))?;
        let mode = if is_executable(src) { MODE_EXEC } else { MODE_FILE };
        add(format!("{RESOURCES_DIR}{dst}"), data, mode)?;
    }

    write_archive(&entries)
        .map_err(|e| PackError::IoFailure { path: PathBuf::from("<archive>"), source: io::Error::other(e) })
}

fn write_archive(entries: &BTreeMap<String, Entry>) -> zip::result::ZipResult<Vec<u8>> {
    let mut zip = ZipWriter::new(io::Cursor::new(Vec::new()));
    for (name, entry) in entries {
        let options = SimpleFileOptions::default()
            .compression_method(CompressionMethod::Deflated)
            .compression_level(Some(6))
            .last_modified_time(DateTime::DEFAULT)
            .system(System::Unix)
            .unix_permissions(entry.mode)
            .large_file(false);
        zip.start_file(name.as_str(), options)?;
        zip.write_all(&entry.data)?;
    }
    Ok(zip.finish()?.into_inner())
}

#[cfg(unix)]
fn is_executable(path: &Path) -> bool {
    use std::os::unix::fs::PermissionsExt;
    fs::metadata(path).is_ok_and(|m| m.permissions().mode() & 0o111 != 0)
}

#[cfg(not(unix))]
fn is_executable(_: &Path) -> bool {
    false
}

/// Packs `input` into `out`. Nothing is written unless packing succeeds.
pub fn pack(input: &PackInput, out: &Path) -> Result<(), PackError> {
    let bytes = pack_bytes(input)?;
    let dir = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(&bytes).map_err(io_err(out))?;
    tmp.persist(out).map_err(|e| PackError::IoFailure { path: out.to_owned(), source: e.error })?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub size: u64,
    pub unix_mode: Option<u32>,
}

/// Result of [`inspect`].
#[derive(Debug, Clone)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub model_description: ModelDescription,
    pub platforms: Vec<String>,
    pub warnings: Vec<String>,
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let md = &self.model_description;
        writeln!(f, "model: {} ({})", md.model_name, md.co_simulation.model_identifier)?;
        writeln!(
            f,
            "platforms: {}",
            if self.platforms.is_empty() { "none".to_owned() } else { self.platforms.join(", ") }
        )?;
        match &md.vcml.executable {
            Some(exe) => writeln!(f, "mode: spawn {exe} on port {}", md.vcml.port)?,
            None => writeln!(f, "mode: attach to {}:{}", md.vcml.host, md.vcml.port)?,
        }
        writeln!(f, "entries:")?;
        for e in &self.entries {
            let mode = e.unix_mode.map(|m| format!("{:o}", m & 0o777)).unwrap_or_else(|| "---".into());
            writeln!(f, "  {mode:>4} {:>10} {}", e.size, e.name)?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        if self.warnings.is_empty() {
            writeln!(f, "status: clean")?;
        }
        Ok(())
    }
}

fn open_archive(path: &Path) -> Result<ZipArchive<fs::File>, InspectError> {
    let file = fs::File::open(path).map_err(|source| InspectError::Io { path: path.to_owned(), source })?;
    ZipArchive::new(file).map_err(|e| InspectError::CorruptArchive(e.to_string()))
}

/// Lists the archive and checks it against its own model description.
pub fn inspect(path: &Path) -> Result<Manifest, InspectError> {
    inspect_archive(&mut open_archive(path)?)
}

pub fn inspect_archive<R: Read + Seek>(zip: &mut ZipArchive<R>) -> Result<Manifest, InspectError> {
    let corrupt = |e: zip::result::ZipError| InspectError::CorruptArchive(e.to_string());
    let layout = InspectError::LayoutViolation;
    let mut entries = Vec::new();
    let mut md_bytes = None;
    for i in 0..zip.len() {
        let mut file = zip.by_index(i).map_err(corrupt)?;
        let name = file.name().map_err(corrupt)?.into_owned();
        if file.is_dir() {
            continue;
        }
        if !is_safe_relative_path(&name) {
            return Err(layout(format!("unsafe entry name {name:?}")));
        }
        if name == MODEL_DESCRIPTION {
            let mut buf = Vec::new();
            file.read_to_end(&mut buf).map_err(|e| InspectError::CorruptArchive(e.to_string()))?;
            md_bytes = Some(buf);
        } else {
            // reading the whole entry verifies its CRC
            io::copy(&mut file, &mut io::sink()).map_err(|e| InspectError::CorruptArchive(e.to_string()))?;
        }
        entries.push(ManifestEntry { size: file.size(), unix_mode: file.unix_mode(), name });
    }
    let md_bytes = md_bytes.ok_or_else(|| layout(format!("{MODEL_DESCRIPTION} is missing")))?;
    let md = ModelDescription::parse(&md_bytes)
        .map_err(|e: ModelDescriptionError| layout(format!("{MODEL_DESCRIPTION}: {e}")))?;

    let mut warnings = Vec::new();
    let mut platforms = Vec::new();
    let id = &md.co_simulation.model_identifier;
    for e in &entries {
        let Some(rest) = e.name.strip_prefix(BINARIES_DIR) else { continue };
        let Some((platform, file)) = rest.split_once('/') else {
            return Err(layout(format!("{} is not inside a platform directory", e.name)));
        };
        if let Some(ext) = library_extension(platform) {
            if file.contains('/') || file.rsplit_once('.').is_none_or(|(stem, _)| stem != id) {
                warnings.push(format!("{} does not match modelIdentifier {id}", e.name));
            } else if file == format!("{id}.{ext}") {
                platforms.push(platform.to_owned());
            }
        }
    }
    if platforms.is_empty() {
        warnings.push("no binary for any supported platform".into());
    }

    if let Some(exe) = &md.vcml.executable {
        if !exe.starts_with(RESOURCES_DIR) {
            return Err(layout(format!("executable {exe:?} is not below {RESOURCES_DIR}")));
        }
        let entry = entries
            .iter()
            .find(|e| &e.name == exe)
            .ok_or_else(|| layout(format!("executable {exe} named by the model description is missing")))?;
        if entry.unix_mode.is_none_or(|m| m & 0o111 == 0) {
            return Err(layout(format!("{exe} is not marked executable")));
        }
    }

    Ok(Manifest { entries, model_description: md, platforms, warnings })
}

/// Extracts every entry below `dir`, restoring Unix permissions.
pub fn unpack(path: &Path, dir: &Path) -> Result<Manifest, InspectError> {
    let mut zip = open_archive(path)?;
    let manifest = inspect_archive(&mut zip)?;
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| InspectError::Io { path, source }
    };
    for i in 0..zip.len() {
        let mut file = zip.by_index(i).map_err(|e| InspectError::CorruptArchive(e.to_string()))?;
        if file.is_dir() {
            continue;
        }
        let rel = file.enclosed_name().ok_or_else(|| InspectError::LayoutViolation("unsafe entry name".into()))?;
        let target = dir.join(rel);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(io(parent))?;
        }
        let mut out = fs::File::create(&target).map_err(io(&target))?;
        io::copy(&mut file, &mut out).map_err(io(&target))?;
        #[cfg(unix)]
        if let Some(mode) = file.unix_mode() {
            use std::os::unix::fs::PermissionsExt;
            fs::set_permissions(&target, fs::Permissions::from_mode(mode & 0o777)).map_err(io(&target))?;
        }
    }
    Ok(manifest)
}
