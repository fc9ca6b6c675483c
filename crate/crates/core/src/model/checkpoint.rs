//! Checkpoints: a `key=value` text manifest plus a binary tensor file.
//!
//! The tensor file starts with an 8-byte magic and then holds every tensor
//! as `rows: u64 LE, cols: u64 LE` followed by `rows*cols` little-endian
//! `f64` values in row-major order. Tensor order: entity matrices by index,
//! then head and tail maps per relation, then translations per relation.
//! The manifest records the byte length and SHA-256 of the tensor file.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{
    Constraint, KnowledgeSheaf, ModelConfig, ModelError, RelationMaps, SectionMatrix, SheafModel,
    Variant,
};
use crate::kg::{KgError, Schema};

pub const FORMAT: &str = "kgsheaf-checkpoint-1";
const MAGIC: &[u8; 8] = b"KGSHEAF1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: missing manifest key `{key}`")]
    MissingKey { path: PathBuf, key: String },
    #[error("integrity check failed for {path}: {message}")]
    Integrity { path: PathBuf, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Schema(#[from] KgError),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

/// Tensor file path belonging to a manifest path.
pub fn tensor_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn push_tensor(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
}

pub fn encode_tensors(model: &SheafModel) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for x in &model.sections.entities {
        push_tensor(&mut out, x);
    }
    for maps in &model.sheaf.relations {
        push_tensor(&mut out, &maps.head);
        push_tensor(&mut out, &maps.tail);
    }
    for maps in &model.sheaf.relations {
        if let Some(b) = &maps.translation {
            push_tensor(&mut out, b);
        }
    }
    out
}

pub fn manifest_text(model: &SheafModel, tensor_file: &str, tensors: &[u8]) -> String {
    let c = &model.config;
    let s = &model.schema;
    let mut lines = vec![
        format!("format={FORMAT}"),
        format!("variant={}", c.variant),
        format!("sections={}", c.sections),
        format!("alpha={}", c.alpha),
        format!("margin={}", c.margin),
        format!("constraint={}", c.constraint),
        format!("seed={}", model.seed),
        format!("entity_types={}", s.num_entity_types()),
    ];
    for t in 0..s.num_entity_types() {
        lines.push(format!(
            "entity_type.{t}={}\t{}",
            s.entity_type_name(t),
            s.vertex_dim(t)
        ));
    }
    lines.push(format!("relations={}", s.num_relations()));
    for (r, maps) in model.sheaf.relations.iter().enumerate() {
        lines.push(format!(
            "relation.{r}={}\t{}\t{}\t{}\t{}",
            s.relation_name(r),
            s.head_type(r),
            s.tail_type(r),
            s.edge_dim(r),
            maps.constraint
        ));
    }
    lines.push(format!("entities={}", model.entity_names.len()));
    for (e, (name, ty)) in model
        .entity_names
        .iter()
        .zip(&model.entity_types)
        .enumerate()
    {
        lines.push(format!("entity.{e}={name}\t{ty}"));
    }
    lines.push(format!("tensor_file={tensor_file}"));
    lines.push(format!("tensor_bytes={}", tensors.len()));
    lines.push(format!("sha256={}", hex::encode(Sha256::digest(tensors))));
    lines.join("\n") + "\n"
}

/// Writes `manifest` and its sibling `.bin` tensor file.
pub fn save(model: &SheafModel, manifest: &Path) -> Result<()> {
    model.validate()?;
    let tensors = encode_tensors(model);
    let tpath = tensor_path(manifest);
    let tname = tpath
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    fs::write(&tpath, &tensors).map_err(|source| CheckpointError::Io {
        path: tpath.clone(),
        source,
    })?;
    fs::write(manifest, manifest_text(model, &tname, &tensors)).map_err(|source| {
        CheckpointError::Io {
            path: manifest.to_path_buf(),
            source,
        }
    })
}

struct Manifest {
    path: PathBuf,
    values: BTreeMap<String, (usize, String)>,
}

impl Manifest {
    fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CheckpointError::Manifest {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "expected key=value".into(),
                })?;
            values.insert(k.to_string(), (i + 1, v.to_string()));
        }
        Ok(Self {
            path: path.to_path_buf(),
            values,
        })
    }

    fn raw(&self, key: &str) -> Result<(usize, &str)> {
        self.values
            .get(key)
            .map(|(l, v)| (*l, v.as_str()))
            .ok_or_else(|| CheckpointError::MissingKey {
                path: self.path.clone(),
                key: key.to_string(),
            })
    }

    fn bad(&self, line: usize, message: String) -> CheckpointError {
        CheckpointError::Manifest {
            path: self.path.clone(),
            line,
            message,
        }
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let (line, v) = self.raw(key)?;
        v.parse()
            .map_err(|e| self.bad(line, format!("invalid value for `{key}`: {e}")))
    }

    fn fields(&self, key: &str, n: usize) -> Result<(usize, Vec<&str>)> {
        let (line, v) = self.raw(key)?;
        let f: Vec<&str> = v.split('\t').collect();
        if f.len() != n {
            return Err(self.bad(line, format!("`{key}` needs {n} tab-separated fields")));
        }
        Ok((line, f))
    }

    fn field<T: std::str::FromStr>(&self, line: usize, key: &str, v: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        v.parse()
            .map_err(|e| self.bad(line, format!("invalid field in `{key}`: {e}")))
    }
}

struct TensorReader<'a> {
    path: &'a Path,
    data: &'a [u8],
    pos: usize,
}

impl TensorReader<'_> {
    fn fail(&self, message: String) -> CheckpointError {
        CheckpointError::Integrity {
            path: self.path.to_path_buf(),
            message,
        }
    }

    fn u64(&mut self) -> Result<u64> {
        let bytes = self
            .data
            .get(self.pos..self.pos + 8)
            .ok_or_else(|| self.fail(format!("truncated at byte {}", self.pos)))?;
        self.pos += 8;
        Ok(u64::from_le_bytes(bytes.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self, what: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let (r, c) = (self.u64()? as usize, self.u64()? as usize);
        if (r, c) != (rows, cols) {
            return Err(self.fail(format!(
                "{what} is stored as {r}x{c}, manifest implies {rows}x{cols}"
            )));
        }
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f64::from_bits(self.u64()?);
            }
        }
        Ok(m)
    }
}

/// Loads and verifies a checkpoint.
pub fn load(manifest: &Path) -> Result<SheafModel> {
    let text = fs::read_to_string(manifest).map_err(|source| CheckpointError::Io {
        path: manifest.to_path_buf(),
        source,
    })?;
    let mf = Manifest::parse(manifest, &text)?;
    let (line, format) = mf.raw("format")?;
    if format != FORMAT {
        return Err(mf.bad(line, format!("unsupported format `{format}`")));
    }
    let variant: Variant = mf.get("variant")?;
    let sections: usize = mf.get("sections")?;
    let default_constraint: Constraint = mf.get("constraint")?;
    let n_types: usize = mf.get("entity_types")?;
    let mut types = Vec::with_capacity(n_types);
    for t in 0..n_types {
        let key = format!("entity_type.{t}");
        let (line, f) = mf.fields(&key, 2)?;
        types.push((f[0].to_string(), mf.field(line, &key, f[1])?));
    }
    let n_rel: usize = mf.get("relations")?;
    let mut relations = Vec::with_capacity(n_rel);
    let mut constraints = Vec::with_capacity(n_rel);
    let mut relation_constraints = BTreeMap::new();
    for r in 0..n_rel {
        let key = format!("relation.{r}");
        let (line, f) = mf.fields(&key, 5)?;
        let c: Constraint = mf.field(line, &key, f[4])?;
        if c != default_constraint {
            relation_constraints.insert(f[0].to_string(), c);
        }
        constraints.push(c);
        relations.push((
            f[0].to_string(),
            mf.field(line, &key, f[1])?,
            mf.field(line, &key, f[2])?,
            mf.field(line, &key, f[3])?,
        ));
    }
    let schema = Schema::new(types, relations)?;
    let n_ent: usize = mf.get("entities")?;
    let mut entity_names = Vec::with_capacity(n_ent);
    let mut entity_types = Vec::with_capacity(n_ent);
    for e in 0..n_ent {
        let key = format!("entity.{e}");
        let (line, f) = mf.fields(&key, 2)?;
        let ty: usize = mf.field(line, &key, f[1])?;
        if ty >= schema.num_entity_types() {
            return Err(mf.bad(line, format!("entity type {ty} is not declared")));
        }
        entity_names.push(f[0].to_string());
        entity_types.push(ty);
    }
    let config = ModelConfig {
        variant,
        sections,
        alpha: mf.get("alpha")?,
        margin: mf.get("margin")?,
        constraint: default_constraint,
        relation_constraints,
    };
    let seed: u64 = mf.get("seed")?;

    let tname: String = mf.get("tensor_file")?;
    let tpath = manifest
        .parent()
        .map(|p| p.join(&tname))
        .unwrap_or_else(|| PathBuf::from(&tname));
    let data = fs::read(&tpath).map_err(|source| CheckpointError::Io {
        path: tpath.clone(),
        source,
    })?;
    let integrity = |message: String| CheckpointError::Integrity {
        path: tpath.clone(),
        message,
    };
    let expected_len: usize = mf.get("tensor_bytes")?;
    if data.len() != expected_len {
        return Err(integrity(format!(
            "tensor file has {} bytes, manifest records {expected_len}",
            data.len()
        )));
    }
    let digest: String = mf.get("sha256")?;
    if hex::encode(Sha256::digest(&data)) != digest {
        return Err(integrity("SHA-256 does not match the manifest".into()));
    }
    if data.len() < MAGIC.len() || &data[..MAGIC.len()] != MAGIC {
        return Err(integrity("bad magic".into()));
    }
    let mut reader = TensorReader {
        path: &tpath,
        data: &data,
        pos: MAGIC.len(),
    };
    let mut entities = Vec::with_capacity(n_ent);
    for (e, &ty) in entity_types.iter().enumerate() {
        entities.push(reader.tensor(&format!("entity {e}"), schema.vertex_dim(ty), sections)?);
    }
    let mut maps = Vec::with_capacity(n_rel);
    for (r, &constraint) in constraints.iter().enumerate() {
        let de = schema.edge_dim(r);
        let head = reader.tensor(
            &format!("relation {r} head map"),
            de,
            schema.vertex_dim(schema.head_type(r)),
        )?;
        let tail = reader.tensor(
            &format!("relation {r} tail map"),
            de,
            schema.vertex_dim(schema.tail_type(r)),
        )?;
        maps.push(RelationMaps {
            head,
            tail,
            translation: None,
            constraint,
        });
    }
    if variant == Variant::ShvT {
        for (r, m) in maps.iter_mut().enumerate() {
            m.translation = Some(reader.tensor(
                &format!("relation {r} translation"),
                schema.edge_dim(r),
                sections,
            )?);
        }
    }
    if reader.pos != data.len() {
        return Err(integrity(format!(
            "{} trailing bytes after the last tensor",
            data.len() - reader.pos
        )));
    }
    let model = SheafModel {
        config,
        schema,
        entity_names,
        entity_types,
        sheaf: KnowledgeSheaf { relations: maps },
        sections: SectionMatrix::new(entities, sections)?,
        seed,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Schema;

    fn model(variant: Variant) -> SheafModel {
        let schema = Schema::new(
            vec![("person".into(), 3), ("attr".into(), 2)],
            vec![("knows".into(), 0, 0, 3), ("has".into(), 0, 1, 2)],
        )
        .unwrap();
        let mut config = ModelConfig {
            variant,
            sections: 2,
            alpha: 0.1,
            margin: 1.5,
            ..ModelConfig::default()
        };
        config
            .relation_constraints
            .insert("knows".into(), Constraint::Orthogonal);
        SheafModel::init(
            config,
            schema,
            vec!["ann".into(), "bob".into(), "tall=yes".into()],
            vec![0, 0, 1],
            17,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for variant in [Variant::Shv, Variant::ShvT] {
            let m = model(variant);
            let path = dir.path().join(format!("{variant}.ckpt"));
            save(&m, &path).unwrap();
            let loaded = load(&path).unwrap();
            assert_eq!(loaded, m);
            let first = (
                fs::read(&path).unwrap(),
                fs::read(tensor_path(&path)).unwrap(),
            );
            save(&loaded, &path).unwrap();
            let second = (
                fs::read(&path).unwrap(),
                fs::read(tensor_path(&path)).unwrap(),
            );
            assert_eq!(first, second);
        }
    }

    #[test]
    fn truncated_tensor_file_fails_integrity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&model(Variant::ShvT), &path).unwrap();
        let t = tensor_path(&path);
        let mut bytes = fs::read(&t).unwrap();
        bytes.truncate(bytes.len() - 5);
        fs::write(&t, bytes).unwrap();
        assert!(matches!(
            load(&path),
            Err(CheckpointError::Integrity { .. })
        ));
    }

    #[test]
    fn flipped_byte_fails_integrity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&model(Variant::Shv), &path).unwrap();
        let t = tensor_path(&path);
        let mut bytes = fs::read(&t).unwrap();
        bytes[20] ^= 1;
        fs::write(&t, bytes).unwrap();
        assert!(matches!(
            load(&path),
            Err(CheckpointError::Integrity { .. })
        ));
    }

    #[test]
    fn manifest_dims_must_match_tensors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&model(Variant::Shv), &path).unwrap();
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("sections=2", "sections=3");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            load(&path),
            Err(CheckpointError::Integrity { .. })
        ));
    }

    #[test]
    fn missing_key_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&model(Variant::Shv), &path).unwrap();
        let text: String = fs::read_to_string(&path)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("margin="))
            .map(|l| format!("{l}\n"))
            .collect();
        fs::write(&path, text).unwrap();
        match load(&path) {
            Err(CheckpointError::MissingKey { key, .. }) => assert_eq!(key, "margin"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
