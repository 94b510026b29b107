//! Shape datasets on disk: one MVOL file per shape plus a manifest holding
//! the generating family spec and a SHA-256 digest per file.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::{Ini, Properties};
use metashape_core::shapes::{generate_shape, Family, FamilySpec};
use metashape_core::volume::VolumeGrid;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::mvol;

pub const MANIFEST: &str = "manifest.ini";

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeEntry {
    pub id: usize,
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub family: FamilySpec,
    pub shapes: Vec<ShapeEntry>,
}

/// A request for `n_shapes` shapes of one family.
#[derive(Clone, Debug, PartialEq)]
pub struct GenSpec {
    pub family: FamilySpec,
    pub n_shapes: usize,
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn value<T: FromStr>(props: &Properties, key: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    props
        .get(key)
        .map(|raw| {
            raw.trim()
                .parse()
                .map_err(|e| CliError::config(format!("[family] {key} = {raw}: {e}")))
        })
        .transpose()
}

fn values<T: FromStr, const N: usize>(props: &Properties, key: &str) -> Result<Option<[T; N]>>
where
    T::Err: Display,
{
    let Some(raw) = props.get(key) else {
        return Ok(None);
    };
    let bad = |d: String| CliError::config(format!("[family] {key} = {raw}: {d}"));
    let items = raw
        .split(',')
        .map(|t| t.trim().parse::<T>().map_err(|e| bad(e.to_string())))
        .collect::<Result<Vec<T>>>()?;
    let n = items.len();
    items
        .try_into()
        .map(Some)
        .map_err(|_| bad(format!("expected {N} values, got {n}")))
}

fn pair<T: FromStr + Copy>(props: &Properties, key: &str) -> Result<Option<(T, T)>>
where
    T::Err: Display,
{
    Ok(values::<T, 2>(props, key)?.map(|[a, b]| (a, b)))
}

const FAMILY_KEYS: &[&str] = &[
    "family",
    "dims",
    "seed",
    "spacing_mm",
    "k_components",
    "size",
    "aspect",
    "offset",
    "rotate",
    "exponent",
    "tube",
    "blend",
    "n_shapes",
];

/// Reads a family spec from the `[family]` section. Unset keys keep the
/// family's defaults.
fn family_from(props: &Properties, allow_count: bool) -> Result<FamilySpec> {
    for (key, _) in props.iter() {
        if !FAMILY_KEYS.contains(&key) || (key == "n_shapes" && !allow_count) {
            return Err(CliError::config(format!("unknown key [family] {key}")));
        }
    }
    let name = props
        .get("family")
        .ok_or_else(|| CliError::config("[family] family is required"))?;
    let family = Family::parse(name.trim())
        .ok_or_else(|| CliError::config(format!("unknown family `{name}`")))?;
    let dims = values::<usize, 3>(props, "dims")?.unwrap_or([32; 3]);
    let seed = value(props, "seed")?.unwrap_or(0);
    let mut spec = FamilySpec::new(family, dims, seed);
    if let Some(v) = values::<f64, 3>(props, "spacing_mm")? {
        spec.spacing_mm = v;
    }
    if let Some(v) = pair(props, "k_components")? {
        spec.k_components = v;
    }
    if let Some(v) = pair(props, "size")? {
        spec.size = v;
    }
    if let Some(v) = pair(props, "aspect")? {
        spec.aspect = v;
    }
    if let Some(v) = value(props, "offset")? {
        spec.offset = v;
    }
    if let Some(v) = value(props, "rotate")? {
        spec.rotate = v;
    }
    if let Some(v) = pair(props, "exponent")? {
        spec.exponent = v;
    }
    if let Some(v) = pair(props, "tube")? {
        spec.tube = v;
    }
    if let Some(v) = value(props, "blend")? {
        spec.blend = v;
    }
    spec.validate()?;
    Ok(spec)
}

fn write_family(ini: &mut Ini, f: &FamilySpec) {
    let triple = |v: [String; 3]| v.join(",");
    ini.with_section(Some("family"))
        .set("family", f.family.name())
        .set("dims", triple(f.dims.map(|d| d.to_string())))
        .set("seed", f.seed.to_string())
        .set("spacing_mm", triple(f.spacing_mm.map(|d| d.to_string())))
        .set(
            "k_components",
            format!("{},{}", f.k_components.0, f.k_components.1),
        )
        .set("size", format!("{},{}", f.size.0, f.size.1))
        .set("aspect", format!("{},{}", f.aspect.0, f.aspect.1))
        .set("offset", f.offset.to_string())
        .set("rotate", f.rotate.to_string())
        .set("exponent", format!("{},{}", f.exponent.0, f.exponent.1))
        .set("tube", format!("{},{}", f.tube.0, f.tube.1))
        .set("blend", f.blend.to_string());
}

impl GenSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        let props = ini
            .section(Some("family"))
            .ok_or_else(|| CliError::config("missing [family] section"))?;
        let family = family_from(props, true)?;
        let n_shapes = value(props, "n_shapes")?
            .ok_or_else(|| CliError::config("[family] n_shapes is required"))?;
        if n_shapes == 0 {
            return Err(CliError::config("n_shapes must be positive"));
        }
        Ok(GenSpec { family, n_shapes })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }
}

impl Manifest {
    pub fn to_ini_string(&self) -> String {
        let mut ini = Ini::new();
        write_family(&mut ini, &self.family);
        let mut sec = ini.with_section(Some("shapes"));
        for s in &self.shapes {
            sec.set(format!("{:04}", s.id), format!("{} {}", s.file, s.sha256));
        }
        let mut buf = Vec::new();
        ini.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ini output is utf-8")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        let props = ini
            .section(Some("family"))
            .ok_or_else(|| CliError::config("manifest lacks a [family] section"))?;
        let family = family_from(props, false)?;
        let mut shapes = Vec::new();
        if let Some(list) = ini.section(Some("shapes")) {
            for (key, val) in list.iter() {
                let id = key
                    .parse()
                    .map_err(|_| CliError::config(format!("bad shape id `{key}`")))?;
                let (file, sha256) = val
                    .split_once(' ')
                    .ok_or_else(|| CliError::config(format!("bad shape entry `{val}`")))?;
                shapes.push(ShapeEntry {
                    id,
                    file: file.to_string(),
                    sha256: sha256.trim().to_string(),
                });
            }
        }
        if shapes.is_empty() {
            return Err(CliError::config("manifest lists no shapes"));
        }
        Ok(Manifest { family, shapes })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        Self::parse(&text)
    }

    pub fn ids(&self) -> Vec<usize> {
        self.shapes.iter().map(|s| s.id).collect()
    }
}

/// Writes the shapes and the manifest into `out`, creating it if needed.
pub fn generate(spec: &GenSpec, out: &Path) -> Result<Manifest> {
    spec.family.validate()?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut shapes = Vec::with_capacity(spec.n_shapes);
    for id in 0..spec.n_shapes {
        let grid = generate_shape(&spec.family, id)?;
        let bytes = mvol::encode(&grid)?;
        let file = format!("shape_{id:04}.mvol");
        let path = out.join(&file);
        fs::write(&path, &bytes).map_err(|e| CliError::io(&path, e))?;
        shapes.push(ShapeEntry {
            id,
            file,
            sha256: hex_digest(&bytes),
        });
    }
    let manifest = Manifest {
        family: spec.family,
        shapes,
    };
    let path = out.join(MANIFEST);
    fs::write(&path, manifest.to_ini_string()).map_err(|e| CliError::io(&path, e))?;
    Ok(manifest)
}

/// Digest of a dataset directory: the manifest bytes, which pin every file.
pub fn directory_digest(dir: &Path) -> Result<String> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(hex_digest(&bytes))
}

/// A loaded dataset with verified files.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub shapes: Vec<VolumeGrid>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Manifest::load(dir)?;
        let mut shapes = Vec::with_capacity(manifest.shapes.len());
        for entry in &manifest.shapes {
            let path = dir.join(&entry.file);
            let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            if hex_digest(&bytes) != entry.sha256 {
                return Err(CliError::Format {
                    path,
                    offset: 0,
                    detail: "digest does not match the manifest".into(),
                });
            }
            let grid = mvol::decode(&bytes).map_err(|e| CliError::Format {
                path: path.clone(),
                offset: e.offset,
                detail: e.detail,
            })?;
            shapes.push(grid);
        }
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
            shapes,
        })
    }

    pub fn family(&self) -> Family {
        self.manifest.family.family
    }

    /// Position of a shape id in `shapes`.
    pub fn index_of(&self, id: usize) -> Option<usize> {
        self.manifest.shapes.iter().position(|s| s.id == id)
    }

    pub fn grid(&self, id: usize) -> Result<&VolumeGrid> {
        self.index_of(id)
            .map(|i| &self.shapes[i])
            .ok_or_else(|| CliError::config(format!("shape id {id} not in the dataset")))
    }
}
