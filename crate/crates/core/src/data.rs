//! Odorant and perceptual data model, canonical file schemas, mixture
//! aggregation and row alignment between embedding tables and perceptual
//! datasets.
//!
//! All loaders are pure functions of the file bytes. Every value is held
//! as `f64`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Separator between mixture components in odorant keys.
pub const MIXTURE_SEPARATOR: char = ';';

/// Opaque molecule token such as a compound registry number.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MoleculeId(String);

impl MoleculeId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::schema("empty molecule id"));
        }
        if id.contains(MIXTURE_SEPARATOR) {
            return Err(Error::schema(format!(
                "molecule id {id:?} contains reserved separator ';'"
            )));
        }
        Ok(MoleculeId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for MoleculeId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        MoleculeId::new(value)
    }
}

impl From<MoleculeId> for String {
    fn from(id: MoleculeId) -> String {
        id.0
    }
}

impl fmt::Display for MoleculeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A smell stimulus: one molecule or a mixture of several.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Odorant {
    components: Vec<MoleculeId>,
}

impl Odorant {
    pub fn new(components: Vec<MoleculeId>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::schema("odorant needs at least one component"));
        }
        Ok(Odorant { components })
    }

    pub fn single(id: MoleculeId) -> Self {
        Odorant {
            components: vec![id],
        }
    }

    pub fn components(&self) -> &[MoleculeId] {
        &self.components
    }

    pub fn is_mixture(&self) -> bool {
        self.components.len() > 1
    }

    /// Order-independent identity of the mixture, used for duplicate detection.
    pub fn canonical_key(&self) -> String {
        let mut parts: Vec<&str> = self.components.iter().map(MoleculeId::as_str).collect();
        parts.sort_unstable();
        parts.join(";")
    }
}

impl fmt::Display for Odorant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.components.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            f.write_str(c.as_str())?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Odorant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_odorant_key(s)
    }
}

/// Parses a `;`-joined odorant key, keeping components in file order.
pub fn parse_odorant_key(key: &str) -> Result<Odorant> {
    if key.trim().is_empty() {
        return Err(Error::schema("empty odorant key"));
    }
    let components = key
        .split(MIXTURE_SEPARATOR)
        .map(|tok| {
            let tok = tok.trim();
            if tok.is_empty() {
                Err(Error::schema(format!("empty component in odorant key {key:?}")))
            } else {
                MoleculeId::new(tok)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Odorant::new(components)
}

/// Network layer an embedding was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Layer {
    Index(u32),
    /// Sorts after every numbered layer.
    Final,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Index(i) => write!(f, "{i}"),
            Layer::Final => f.write_str("final"),
        }
    }
}

impl Serialize for Layer {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Layer::Index(i) => s.serialize_u32(*i),
            Layer::Final => s.serialize_str("final"),
        }
    }
}

impl<'de> Deserialize<'de> for Layer {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(u32),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(i) => Ok(Layer::Index(i)),
            Raw::Name(s) if s == "final" => Ok(Layer::Final),
            Raw::Name(s) => s.parse::<u32>().map(Layer::Index).map_err(|_| {
                serde::de::Error::custom(format!("layer must be an integer or \"final\", got {s:?}"))
            }),
        }
    }
}

/// Sidecar describing an embedding CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model_name: String,
    pub layer: Layer,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<serde_json::Value>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_slice(&bytes)?;
        if manifest.dim == 0 {
            return Err(Error::schema(format!("{}: dim must be > 0", path.display())));
        }
        Ok(manifest)
    }
}

/// Per-molecule representations from one model layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    ids: Vec<MoleculeId>,
    index: HashMap<MoleculeId, usize>,
    matrix: Array2<f64>,
    pub model_name: String,
    pub layer: Layer,
}

impl EmbeddingTable {
    pub fn new(
        ids: Vec<MoleculeId>,
        matrix: Array2<f64>,
        model_name: impl Into<String>,
        layer: Layer,
    ) -> Result<Self> {
        if ids.len() != matrix.nrows() {
            return Err(Error::Dimension {
                expected: ids.len(),
                found: matrix.nrows(),
            });
        }
        if matrix.ncols() == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be > 0".into()));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::schema(format!("duplicate molecule id {id}")));
            }
        }
        if let Some(((r, c), v)) = matrix.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value {v} at row {r}, column {c}"
            )));
        }
        Ok(EmbeddingTable {
            ids,
            index,
            matrix,
            model_name: model_name.into(),
            layer,
        })
    }

    pub fn ids(&self) -> &[MoleculeId] {
        &self.ids
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row(&self, id: &MoleculeId) -> Option<ArrayView1<'_, f64>> {
        self.index.get(id).map(|&i| self.matrix.row(i))
    }

    pub fn contains(&self, id: &MoleculeId) -> bool {
        self.index.contains_key(id)
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        EmbeddingTable {
            matrix: &self.matrix * factor,
            ..self.clone()
        }
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            model_name: self.model_name.clone(),
            layer: self.layer,
            dim: self.dim(),
            notes: None,
        }
    }

    /// Writes the CSV body in the canonical `id,f0,...` layout. Values use the
    /// shortest representation that parses back to the same `f64`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string()];
        header.extend((0..self.dim()).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for (id, row) in self.ids.iter().zip(self.matrix.rows()) {
            let mut rec = Vec::with_capacity(self.dim() + 1);
            rec.push(id.to_string());
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save(&self, csv_path: &Path, manifest_path: &Path) -> Result<()> {
        let file = fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        self.write_csv(std::io::BufWriter::new(file))?;
        let json = serde_json::to_vec_pretty(&self.manifest())?;
        fs::write(manifest_path, json).map_err(|e| Error::io(manifest_path, e))
    }
}

/// Loads an embedding CSV using the dimension, model name and layer from its manifest.
pub fn load_embedding_table(path: &Path, manifest: &Path) -> Result<EmbeddingTable> {
    let manifest = Manifest::load(manifest)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_embedding_csv(&bytes, &manifest, &path.display().to_string())
}

pub(crate) fn parse_embedding_csv(
    bytes: &[u8],
    manifest: &Manifest,
    label: &str,
) -> Result<EmbeddingTable> {
    let ingest = |row: usize, column: usize, reason: String| Error::Ingestion {
        path: label.to_string(),
        row,
        column,
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let header = reader.headers()?.clone();
    if header.len() != manifest.dim + 1 {
        return Err(ingest(
            0,
            header.len(),
            format!(
                "header has {} feature columns, manifest declares dim {}",
                header.len().saturating_sub(1),
                manifest.dim
            ),
        ));
    }
    if header.get(0) != Some("id") {
        return Err(ingest(0, 0, "first header column must be `id`".into()));
    }
    for (j, name) in header.iter().skip(1).enumerate() {
        if name != format!("f{j}") {
            return Err(ingest(0, j + 1, format!("expected header f{j}, found {name:?}")));
        }
    }

    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != manifest.dim + 1 {
            return Err(ingest(
                row,
                rec.len(),
                format!(
                    "row has {} values, manifest declares dim {}",
                    rec.len().saturating_sub(1),
                    manifest.dim
                ),
            ));
        }
        let id = MoleculeId::new(&rec[0]).map_err(|e| ingest(row, 0, e.to_string()))?;
        if !seen.insert(id.clone()) {
            return Err(ingest(row, 0, format!("duplicate id {id}")));
        }
        for (j, cell) in rec.iter().skip(1).enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| ingest(row, j + 1, format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(ingest(row, j + 1, format!("non-finite value {cell:?}")));
            }
            values.push(v);
        }
        ids.push(id);
    }
    let matrix = Array2::from_shape_vec((ids.len(), manifest.dim), values)
        .expect("row lengths validated");
    EmbeddingTable::new(ids, matrix, manifest.model_name.clone(), manifest.layer)
}

/// Expert multi-label annotations, one 0/1 column per descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryLabelSet {
    pub odorants: Vec<Odorant>,
    pub descriptors: Vec<String>,
    pub labels: Array2<f64>,
}

impl BinaryLabelSet {
    pub fn new(odorants: Vec<Odorant>, descriptors: Vec<String>, labels: Array2<f64>) -> Result<Self> {
        check_shape(odorants.len(), descriptors.len(), labels.dim())?;
        check_unique(&descriptors, "descriptor")?;
        for (i, row) in labels.rows().into_iter().enumerate() {
            if let Some(v) = row.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(Error::schema(format!(
                    "label {v} for odorant {} is not 0 or 1",
                    odorants[i]
                )));
            }
            if !row.iter().any(|&v| v == 1.0) {
                return Err(Error::schema(format!(
                    "odorant {} has no positive label",
                    odorants[i]
                )));
            }
        }
        Ok(BinaryLabelSet {
            odorants,
            descriptors,
            labels,
        })
    }
}

/// Continuous ratings on a declared `[a, b]` scale.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingSet {
    pub odorants: Vec<Odorant>,
    pub descriptors: Vec<String>,
    pub ratings: Array2<f64>,
    pub range: (f64, f64),
}

impl RatingSet {
    pub fn new(
        odorants: Vec<Odorant>,
        descriptors: Vec<String>,
        ratings: Array2<f64>,
        range: (f64, f64),
    ) -> Result<Self> {
        check_shape(odorants.len(), descriptors.len(), ratings.dim())?;
        check_unique(&descriptors, "descriptor")?;
        check_range(range)?;
        for ((i, j), &v) in ratings.indexed_iter() {
            if !v.is_finite() || v < range.0 || v > range.1 {
                return Err(Error::schema(format!(
                    "rating {v} for odorant {} / {} outside [{}, {}]",
                    odorants[i], descriptors[j], range.0, range.1
                )));
            }
        }
        Ok(RatingSet {
            odorants,
            descriptors,
            ratings,
            range,
        })
    }
}

/// Individual subjects' ratings; `None` marks an unrated cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSubjectRatings {
    pub subjects: Vec<String>,
    pub odorants: Vec<Odorant>,
    pub descriptors: Vec<String>,
    /// Indexed `[subject][odorant][descriptor]`.
    pub ratings: Vec<Vec<Vec<Option<f64>>>>,
}

impl PerSubjectRatings {
    pub fn new(
        subjects: Vec<String>,
        odorants: Vec<Odorant>,
        descriptors: Vec<String>,
        ratings: Vec<Vec<Vec<Option<f64>>>>,
    ) -> Result<Self> {
        check_unique(&subjects, "subject")?;
        check_unique(&descriptors, "descriptor")?;
        if ratings.len() != subjects.len()
            || ratings.iter().any(|s| {
                s.len() != odorants.len() || s.iter().any(|o| o.len() != descriptors.len())
            })
        {
            return Err(Error::schema("per-subject ratings array has the wrong shape"));
        }
        if let Some(v) = ratings.iter().flatten().flatten().flatten().find(|v| !v.is_finite()) {
            return Err(Error::schema(format!("non-finite rating {v}")));
        }
        Ok(PerSubjectRatings {
            subjects,
            odorants,
            descriptors,
            ratings,
        })
    }

    pub fn get(&self, subject: usize, odorant: usize, descriptor: usize) -> Option<f64> {
        self.ratings[subject][odorant][descriptor]
    }
}

/// Orientation of pairwise human scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// Larger score means more similar.
    Similarity,
    /// Larger score means less similar.
    Distance,
}

/// Mean human similarity ratings over unique odorant pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityJudgmentSet {
    pub pairs: Vec<(Odorant, Odorant)>,
    pub scores: Vec<f64>,
    pub scale: (f64, f64),
    pub polarity: Polarity,
}

impl SimilarityJudgmentSet {
    pub fn new(
        pairs: Vec<(Odorant, Odorant)>,
        scores: Vec<f64>,
        scale: (f64, f64),
        polarity: Polarity,
    ) -> Result<Self> {
        if pairs.len() != scores.len() {
            return Err(Error::Dimension {
                expected: pairs.len(),
                found: scores.len(),
            });
        }
        check_range(scale)?;
        let mut seen = HashSet::new();
        for ((a, b), &s) in pairs.iter().zip(&scores) {
            if !seen.insert(unordered_pair_key(a, b)) {
                return Err(Error::schema(format!("duplicate pair ({a}, {b})")));
            }
            if !s.is_finite() || s < scale.0 || s > scale.1 {
                return Err(Error::schema(format!(
                    "score {s} for pair ({a}, {b}) outside [{}, {}]",
                    scale.0, scale.1
                )));
            }
        }
        Ok(SimilarityJudgmentSet {
            pairs,
            scores,
            scale,
            polarity,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Scores oriented so that larger means more similar; distance scores are negated.
    pub fn similarity_scores(&self) -> Vec<f64> {
        match self.polarity {
            Polarity::Similarity => self.scores.clone(),
            Polarity::Distance => self.scores.iter().map(|s| -s).collect(),
        }
    }

    /// Keeps the pairs selected by `keep`, preserving order.
    pub fn subset(&self, keep: &[usize]) -> Self {
        SimilarityJudgmentSet {
            pairs: keep.iter().map(|&i| self.pairs[i].clone()).collect(),
            scores: keep.iter().map(|&i| self.scores[i]).collect(),
            scale: self.scale,
            polarity: self.polarity,
        }
    }
}

fn unordered_pair_key(a: &Odorant, b: &Odorant) -> (String, String) {
    let (ka, kb) = (a.canonical_key(), b.canonical_key());
    if ka <= kb {
        (ka, kb)
    } else {
        (kb, ka)
    }
}

/// The four perceptual file shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerceptualKind {
    Labels,
    Ratings,
    PerSubject,
    Pairs,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PerceptualData {
    Labels(BinaryLabelSet),
    Ratings(RatingSet),
    PerSubject(PerSubjectRatings),
    Pairs(SimilarityJudgmentSet),
}

impl PerceptualData {
    pub fn kind(&self) -> PerceptualKind {
        match self {
            PerceptualData::Labels(_) => PerceptualKind::Labels,
            PerceptualData::Ratings(_) => PerceptualKind::Ratings,
            PerceptualData::PerSubject(_) => PerceptualKind::PerSubject,
            PerceptualData::Pairs(_) => PerceptualKind::Pairs,
        }
    }
}

/// JSON sidecar accompanying ratings, per-subject and pairs files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub range: Option<[f64; 2]>,
    #[serde(default)]
    pub polarity: Option<Polarity>,
}

/// Default sidecar location: the data file with its extension replaced by `.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Loads a perceptual file, reading its sidecar from [`sidecar_path`] when the kind needs one.
pub fn load_perceptual(path: &Path, kind: PerceptualKind) -> Result<PerceptualData> {
    let sidecar = sidecar_path(path);
    let sidecar = if sidecar.exists() {
        Some(sidecar)
    } else {
        None
    };
    load_perceptual_with_sidecar(path, kind, sidecar.as_deref())
}

pub fn load_perceptual_with_sidecar(
    path: &Path,
    kind: PerceptualKind,
    sidecar: Option<&Path>,
) -> Result<PerceptualData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let sidecar = match sidecar {
        Some(p) => {
            let raw = fs::read(p).map_err(|e| Error::io(p, e))?;
            Some(serde_json::from_slice::<Sidecar>(&raw)?)
        }
        None => None,
    };
    let label = path.display().to_string();
    let need_range = || -> Result<(f64, f64)> {
        let range = sidecar
            .as_ref()
            .and_then(|s| s.range)
            .ok_or_else(|| Error::schema(format!("{label}: sidecar must declare `range`")))?;
        Ok((range[0], range[1]))
    };
    match kind {
        PerceptualKind::Labels => parse_labels(&bytes, &label).map(PerceptualData::Labels),
        PerceptualKind::Ratings => {
            parse_ratings(&bytes, need_range()?, &label).map(PerceptualData::Ratings)
        }
        PerceptualKind::PerSubject => {
            let range = sidecar.as_ref().and_then(|s| s.range).map(|r| (r[0], r[1]));
            parse_per_subject(&bytes, range, &label).map(PerceptualData::PerSubject)
        }
        PerceptualKind::Pairs => {
            let polarity = sidecar
                .as_ref()
                .and_then(|s| s.polarity)
                .ok_or_else(|| Error::schema(format!("{label}: sidecar must declare `polarity`")))?;
            parse_pairs(&bytes, need_range()?, polarity, &label).map(PerceptualData::Pairs)
        }
    }
}

fn reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes)
}

fn descriptor_header(header: &csv::StringRecord, skip: usize, label: &str) -> Result<Vec<String>> {
    let names: Vec<String> = header.iter().skip(skip).map(str::to_string).collect();
    if names.is_empty() {
        return Err(Error::schema(format!("{label}: no descriptor columns")));
    }
    Ok(names)
}

fn expect_column(header: &csv::StringRecord, idx: usize, name: &str, label: &str) -> Result<()> {
    if header.get(idx) != Some(name) {
        return Err(Error::schema(format!(
            "{label}: column {idx} must be `{name}`, found {:?}",
            header.get(idx).unwrap_or("")
        )));
    }
    Ok(())
}

fn parse_cell(cell: &str, label: &str, row: usize, col: &str) -> Result<f64> {
    let v: f64 = cell
        .parse()
        .map_err(|_| Error::schema(format!("{label}: row {row}, {col}: not a number: {cell:?}")))?;
    if !v.is_finite() {
        return Err(Error::schema(format!("{label}: row {row}, {col}: non-finite value")));
    }
    Ok(v)
}

fn parse_matrix_file(bytes: &[u8], label: &str) -> Result<(Vec<Odorant>, Vec<String>, Array2<f64>)> {
    let mut rdr = reader(bytes);
    let header = rdr.headers()?.clone();
    expect_column(&header, 0, "odorant", label)?;
    let descriptors = descriptor_header(&header, 1, label)?;
    let mut odorants = Vec::new();
    let mut seen = HashSet::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let odorant = parse_odorant_key(&rec[0])?;
        if !seen.insert(odorant.canonical_key()) {
            return Err(Error::schema(format!("{label}: duplicate odorant {odorant}")));
        }
        for (j, cell) in rec.iter().skip(1).enumerate() {
            values.push(parse_cell(cell, label, row, &descriptors[j])?);
        }
        odorants.push(odorant);
    }
    let matrix = Array2::from_shape_vec((odorants.len(), descriptors.len()), values)
        .expect("csv reader enforces equal record lengths");
    Ok((odorants, descriptors, matrix))
}

pub(crate) fn parse_labels(bytes: &[u8], label: &str) -> Result<BinaryLabelSet> {
    let (odorants, descriptors, labels) = parse_matrix_file(bytes, label)?;
    BinaryLabelSet::new(odorants, descriptors, labels)
}

pub(crate) fn parse_ratings(bytes: &[u8], range: (f64, f64), label: &str) -> Result<RatingSet> {
    let (odorants, descriptors, ratings) = parse_matrix_file(bytes, label)?;
    RatingSet::new(odorants, descriptors, ratings, range)
}

pub(crate) fn parse_per_subject(
    bytes: &[u8],
    range: Option<(f64, f64)>,
    label: &str,
) -> Result<PerSubjectRatings> {
    let mut rdr = reader(bytes);
    let header = rdr.headers()?.clone();
    expect_column(&header, 0, "subject", label)?;
    expect_column(&header, 1, "odorant", label)?;
    let descriptors = descriptor_header(&header, 2, label)?;

    let mut subjects: Vec<String> = Vec::new();
    let mut subject_index: HashMap<String, usize> = HashMap::new();
    let mut odorants: Vec<Odorant> = Vec::new();
    let mut odorant_index: HashMap<String, usize> = HashMap::new();
    let mut cells: Vec<(usize, usize, Vec<Option<f64>>)> = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let subject = rec[0].to_string();
        if subject.is_empty() {
            return Err(Error::schema(format!("{label}: row {row}: empty subject id")));
        }
        let odorant = parse_odorant_key(&rec[1])?;
        let s = *subject_index.entry(subject.clone()).or_insert_with(|| {
            subjects.push(subject.clone());
            subjects.len() - 1
        });
        let o = *odorant_index.entry(odorant.canonical_key()).or_insert_with(|| {
            odorants.push(odorant.clone());
            odorants.len() - 1
        });
        if !seen.insert((s, o)) {
            return Err(Error::schema(format!(
                "{label}: subject {subject} rated odorant {odorant} twice"
            )));
        }
        let mut values = Vec::with_capacity(descriptors.len());
        for (j, cell) in rec.iter().skip(2).enumerate() {
            if cell.is_empty() {
                values.push(None);
                continue;
            }
            let v = parse_cell(cell, label, row, &descriptors[j])?;
            if let Some((a, b)) = range {
                if v < a || v > b {
                    return Err(Error::schema(format!(
                        "{label}: row {row}, {}: rating {v} outside [{a}, {b}]",
                        descriptors[j]
                    )));
                }
            }
            values.push(Some(v));
        }
        cells.push((s, o, values));
    }
    let mut ratings = vec![vec![vec![None; descriptors.len()]; odorants.len()]; subjects.len()];
    for (s, o, values) in cells {
        ratings[s][o] = values;
    }
    PerSubjectRatings::new(subjects, odorants, descriptors, ratings)
}

pub(crate) fn parse_pairs(
    bytes: &[u8],
    range: (f64, f64),
    polarity: Polarity,
    label: &str,
) -> Result<SimilarityJudgmentSet> {
    let mut rdr = reader(bytes);
    let header = rdr.headers()?.clone();
    expect_column(&header, 0, "odorant_a", label)?;
    expect_column(&header, 1, "odorant_b", label)?;
    expect_column(&header, 2, "score", label)?;
    let mut pairs = Vec::new();
    let mut scores = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let a = parse_odorant_key(&rec[0])?;
        let b = parse_odorant_key(&rec[1])?;
        scores.push(parse_cell(&rec[2], label, i + 1, "score")?);
        pairs.push((a, b));
    }
    SimilarityJudgmentSet::new(pairs, scores, range, polarity)
}

fn check_shape(n: usize, d: usize, shape: (usize, usize)) -> Result<()> {
    if shape != (n, d) {
        return Err(Error::schema(format!(
            "matrix shape {shape:?} does not match {n} odorants x {d} descriptors"
        )));
    }
    Ok(())
}

fn check_unique(names: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for name in names {
        if !seen.insert(name.as_str()) {
            return Err(Error::schema(format!("duplicate {what} {name:?}")));
        }
    }
    Ok(())
}

fn check_range((a, b): (f64, f64)) -> Result<()> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::schema(format!("invalid range [{a}, {b}]")));
    }
    Ok(())
}

/// Unweighted mean of the component rows.
///
/// Rows are summed in table order as offsets from the first of them, so the
/// result does not depend on component order and `k` copies of one molecule
/// reproduce its row exactly.
pub fn mixture_embedding(table: &EmbeddingTable, odorant: &Odorant) -> Result<Array1<f64>> {
    let mut rows = Vec::with_capacity(odorant.components().len());
    let mut missing = Vec::new();
    for id in odorant.components() {
        match table.index.get(id) {
            Some(&i) => rows.push(i),
            None => missing.push(id.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Lookup(missing));
    }
    rows.sort_unstable();
    let base = table.matrix.row(rows[0]);
    let k = rows.len() as f64;
    let mut offset = Array1::<f64>::zeros(table.dim());
    for &i in &rows[1..] {
        offset += &(&table.matrix.row(i) - &base);
    }
    Ok(&base + &(offset / k))
}

pub(crate) fn resolvable(table: &EmbeddingTable, odorant: &Odorant) -> bool {
    odorant.components().iter().all(|c| table.contains(c))
}

/// Records where a bundle came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub model_name: String,
    pub layer: Layer,
    pub dataset: String,
}

/// Perceptual targets aligned row-for-row with a bundle's feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels {
        descriptors: Vec<String>,
        y: Array2<f64>,
    },
    Ratings {
        descriptors: Vec<String>,
        y: Array2<f64>,
        range: (f64, f64),
    },
    /// `x` of the bundle holds the first odorant of each pair, `partner` the second.
    Pairs {
        partner: Array2<f64>,
        judgments: SimilarityJudgmentSet,
    },
}

impl Targets {
    pub fn descriptors(&self) -> &[String] {
        match self {
            Targets::Labels { descriptors, .. } | Targets::Ratings { descriptors, .. } => {
                descriptors
            }
            Targets::Pairs { .. } => &[],
        }
    }

    pub fn matrix(&self) -> Option<&Array2<f64>> {
        match self {
            Targets::Labels { y, .. } | Targets::Ratings { y, .. } => Some(y),
            Targets::Pairs { .. } => None,
        }
    }
}

/// Features and perceptual targets with identical row order.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub x: Array2<f64>,
    pub targets: Targets,
    /// Odorant key of each row (or `a|b` for pairs).
    pub row_ids: Vec<String>,
    /// Perceptual rows dropped because a component was missing from the table.
    pub dropped: usize,
    pub provenance: Provenance,
}

impl DatasetBundle {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }
}

/// Aligns embedding rows to perceptual rows in perceptual-file order.
pub fn join(table: &EmbeddingTable, perceptual: &PerceptualData, dataset: &str) -> Result<DatasetBundle> {
    let provenance = Provenance {
        model_name: table.model_name.clone(),
        layer: table.layer,
        dataset: dataset.to_string(),
    };
    let (odorants, descriptors, y) = match perceptual {
        PerceptualData::Labels(l) => (&l.odorants, &l.descriptors, &l.labels),
        PerceptualData::Ratings(r) => (&r.odorants, &r.descriptors, &r.ratings),
        PerceptualData::PerSubject(_) => {
            return Err(Error::Join(
                "per-subject ratings are not joined with embeddings".into(),
            ))
        }
        PerceptualData::Pairs(p) => return join_pairs(table, p, provenance),
    };
    let keep: Vec<usize> = (0..odorants.len())
        .filter(|&i| resolvable(table, &odorants[i]))
        .collect();
    let dropped = odorants.len() - keep.len();
    if keep.is_empty() {
        return Err(Error::Join(format!(
            "no odorant of {dataset} is resolvable in {} ({})",
            table.model_name, table.layer
        )));
    }
    if dropped > 0 {
        log::warn!("{dataset}: dropped {dropped} of {} odorants not covered by {}", odorants.len(), table.model_name);
    }
    let mut x = Array2::zeros((keep.len(), table.dim()));
    for (r, &i) in keep.iter().enumerate() {
        x.row_mut(r).assign(&mixture_embedding(table, &odorants[i])?);
    }
    let y = y.select(ndarray::Axis(0), &keep);
    let row_ids = keep.iter().map(|&i| odorants[i].to_string()).collect();
    let targets = match perceptual {
        PerceptualData::Labels(_) => Targets::Labels {
            descriptors: descriptors.clone(),
            y,
        },
        PerceptualData::Ratings(r) => Targets::Ratings {
            descriptors: descriptors.clone(),
            y,
            range: r.range,
        },
        _ => unreachable!(),
    };
    Ok(DatasetBundle {
        x,
        targets,
        row_ids,
        dropped,
        provenance,
    })
}

fn join_pairs(
    table: &EmbeddingTable,
    pairs: &SimilarityJudgmentSet,
    provenance: Provenance,
) -> Result<DatasetBundle> {
    let keep: Vec<usize> = (0..pairs.len())
        .filter(|&i| {
            let (a, b) = &pairs.pairs[i];
            resolvable(table, a) && resolvable(table, b)
        })
        .collect();
    if keep.is_empty() {
        return Err(Error::Join(format!(
            "no pair of {} is resolvable in {}",
            provenance.dataset, table.model_name
        )));
    }
    let dropped = pairs.len() - keep.len();
    let judgments = pairs.subset(&keep);
    let mut x = Array2::zeros((keep.len(), table.dim()));
    let mut partner = Array2::zeros((keep.len(), table.dim()));
    for (r, (a, b)) in judgments.pairs.iter().enumerate() {
        x.row_mut(r).assign(&mixture_embedding(table, a)?);
        partner.row_mut(r).assign(&mixture_embedding(table, b)?);
    }
    let row_ids = judgments.pairs.iter().map(|(a, b)| format!("{a}|{b}")).collect();
    Ok(DatasetBundle {
        x,
        targets: Targets::Pairs { partner, judgments },
        row_ids,
        dropped,
        provenance,
    })
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(bytes_digest(&bytes))
}

pub fn bytes_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// File stem used as the dataset name in reports.
pub fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string())
}
