//! File formats: scene JSON, embedding matrices (CSV or binary) and flat CSV vectors.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LuminaireModel, Patch, Scene, Vec3, DEFAULT_KERNEL_CAP};
use crate::metrics::EmbeddingSet;

/// Leading bytes of a binary embedding file.
pub const EMBEDDING_MAGIC: &[u8; 4] = b"RLEM";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchJson {
    pub center: [f64; 3],
    pub edge_u: [f64; 3],
    pub edge_v: [f64; 3],
    pub albedo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneJson {
    pub patches: Vec<PatchJson>,
    pub luminaires: Vec<Vec<f64>>,
    pub dirichlet_alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_cap: Option<f64>,
}

/// A scene read from disk plus the scale applied to each raw emittance vector.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub scene: Scene,
    pub emittance_scales: Vec<f64>,
}

impl SceneJson {
    pub fn from_scene(scene: &Scene) -> Self {
        let v = |x: &Vec3| [x[0], x[1], x[2]];
        Self {
            patches: scene
                .patches()
                .iter()
                .map(|p| PatchJson {
                    center: v(&p.center),
                    edge_u: v(&p.edge_u),
                    edge_v: v(&p.edge_v),
                    albedo: p.albedo,
                })
                .collect(),
            luminaires: scene
                .luminaires()
                .basis()
                .iter()
                .map(|e| e.iter().copied().collect())
                .collect(),
            dirichlet_alpha: scene.luminaires().dirichlet_alpha(),
            kernel_cap: (scene.kernel_cap() != DEFAULT_KERNEL_CAP).then_some(scene.kernel_cap()),
        }
    }

    /// Builds the scene, normalizing each emittance vector to unit area-weighted norm.
    pub fn into_scene(self) -> Result<LoadedScene> {
        let patches: Vec<Patch> = self
            .patches
            .iter()
            .map(|p| Patch::new(p.center.into(), p.edge_u.into(), p.edge_v.into(), p.albedo))
            .collect();
        // validates albedo and geometry before the luminaires see the areas
        Scene::unlit(patches.clone())?;
        let areas: Vec<f64> = patches.iter().map(Patch::area).collect();
        let raw = self.luminaires.into_iter().map(DVector::from_vec).collect();
        let (model, emittance_scales) =
            LuminaireModel::normalized(raw, self.dirichlet_alpha, &areas)?;
        let scene = Scene::with_kernel_cap(
            patches,
            model,
            self.kernel_cap.unwrap_or(DEFAULT_KERNEL_CAP),
        )?;
        Ok(LoadedScene {
            scene,
            emittance_scales,
        })
    }
}

fn parse_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

pub fn parse_scene(text: &str, path: &Path) -> Result<LoadedScene> {
    let json: SceneJson =
        serde_json::from_str(text).map_err(|e| parse_error(path, e.to_string()))?;
    json.into_scene()
}

pub fn load_scene(path: &Path) -> Result<LoadedScene> {
    parse_scene(&fs::read_to_string(path)?, path)
}

pub fn save_scene(scene: &Scene, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&SceneJson::from_scene(scene))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Reads a headerless numeric CSV. A first row that does not parse as numbers is
/// taken as a header and skipped. Rows must all have the same length.
pub fn read_csv_matrix<R: Read>(input: R, path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(parse_error(path, format!("line {line}: {e}"))),
        };
        if let Some(bad) = values.iter().position(|x| !x.is_finite()) {
            return Err(parse_error(
                path,
                format!("line {line}: non-finite value in column {}", bad + 1),
            ));
        }
        match cols {
            None => cols = Some(values.len()),
            Some(c) if c != values.len() => {
                return Err(parse_error(
                    path,
                    format!("line {line}: expected {c} columns, found {}", values.len()),
                ))
            }
            _ => {}
        }
        data.extend(values);
        rows += 1;
    }
    let cols = cols.ok_or_else(|| parse_error(path, "no numeric rows"))?;
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn write_csv_matrix<W: Write>(m: &DMatrix<f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in m.row_iter() {
        w.write_record(row.iter().map(|x| crate::report::fmt_f64(*x)))?;
    }
    w.flush()?;
    Ok(())
}

/// Every number in a CSV file, in reading order.
pub fn read_csv_vector(path: &Path) -> Result<DVector<f64>> {
    let m = read_csv_matrix(fs::File::open(path)?, path)?;
    Ok(DVector::from_iterator(
        m.len(),
        m.transpose().iter().copied(),
    ))
}

pub fn write_csv_vector(v: &DVector<f64>, path: &Path) -> Result<()> {
    let mut text = String::new();
    for x in v.iter() {
        text.push_str(&crate::report::fmt_f64(*x));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// `RLEM`, rows and cols as little-endian u64, then row-major little-endian f64.
pub fn write_binary_matrix<W: Write>(m: &DMatrix<f64>, mut out: W) -> Result<()> {
    out.write_all(EMBEDDING_MAGIC)?;
    out.write_all(&(m.nrows() as u64).to_le_bytes())?;
    out.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for row in m.row_iter() {
        for x in row.iter() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_binary_matrix(bytes: &[u8], path: &Path) -> Result<DMatrix<f64>> {
    if bytes.len() < 20 || &bytes[..4] != EMBEDDING_MAGIC {
        return Err(parse_error(path, "missing RLEM header"));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"));
    let (rows, cols) = (word(4), word(12));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(20))
        .ok_or_else(|| parse_error(path, "matrix dimensions overflow"))?;
    if bytes.len() as u64 != expected {
        return Err(parse_error(
            path,
            format!(
                "{rows}x{cols} matrix needs {expected} bytes, file has {}",
                bytes.len()
            ),
        ));
    }
    let data: Vec<f64> = bytes[20..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if data.iter().any(|x| !x.is_finite()) {
        return Err(parse_error(path, "non-finite value"));
    }
    Ok(DMatrix::from_row_slice(rows as usize, cols as usize, &data))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Csv,
    Binary,
}

impl EmbeddingFormat {
    /// `.bin` and `.rlem` are binary, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("rlem") => Self::Binary,
            _ => Self::Csv,
        }
    }
}

pub fn load_embeddings(path: &Path, format: EmbeddingFormat) -> Result<EmbeddingSet> {
    let m = match format {
        EmbeddingFormat::Csv => read_csv_matrix(fs::File::open(path)?, path)?,
        EmbeddingFormat::Binary => read_binary_matrix(&fs::read(path)?, path)?,
    };
    EmbeddingSet::new(m)
}

pub fn save_embeddings(set: &EmbeddingSet, path: &Path, format: EmbeddingFormat) -> Result<()> {
    let file = std::io::BufWriter::new(fs::File::create(path)?);
    match format {
        EmbeddingFormat::Csv => write_csv_matrix(set.points(), file),
        EmbeddingFormat::Binary => write_binary_matrix(set.points(), file),
    }
}
