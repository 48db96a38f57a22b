//! Representational similarity analysis between embedding tables and human
//! pairwise similarity judgments.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::{mixture_embedding, resolvable, EmbeddingTable, Layer, Odorant, SimilarityJudgmentSet};
use crate::error::{Error, Result};
use crate::metrics::pearson;
use crate::preproc::cosine_similarity;

/// Model-side similarity between two odorant vectors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMode {
    #[default]
    Cosine,
    /// `1 - angle / pi`, a monotone transform of cosine.
    Angle,
}

/// Similarities are rounded to multiples of 2^-30, so results do not move
/// when every embedding is rescaled by a positive constant.
const SNAP: f64 = (1u64 << 30) as f64;

fn snap(v: f64) -> f64 {
    (v * SNAP).round() / SNAP
}

pub fn model_similarity(u: &Array1<f64>, v: &Array1<f64>, mode: SimilarityMode) -> Result<f64> {
    let c = snap(cosine_similarity(u.view(), v.view())?);
    Ok(match mode {
        SimilarityMode::Cosine => c,
        SimilarityMode::Angle => snap(1.0 - c.acos() / std::f64::consts::PI),
    })
}

/// Why a pair received no model similarity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum PairIssue {
    Unresolvable(Vec<String>),
    ZeroNorm,
}

pub type PairSimilarity = std::result::Result<f64, PairIssue>;

struct EmbeddingCache<'a> {
    table: &'a EmbeddingTable,
    cache: HashMap<String, Option<Array1<f64>>>,
}

impl<'a> EmbeddingCache<'a> {
    fn new(table: &'a EmbeddingTable) -> Self {
        EmbeddingCache {
            table,
            cache: HashMap::new(),
        }
    }

    fn get(&mut self, o: &Odorant) -> std::result::Result<Array1<f64>, PairIssue> {
        let table = self.table;
        let entry = self
            .cache
            .entry(o.canonical_key())
            .or_insert_with(|| mixture_embedding(table, o).ok());
        entry.clone().ok_or_else(|| {
            PairIssue::Unresolvable(
                o.components()
                    .iter()
                    .filter(|c| !table.contains(c))
                    .map(|c| c.to_string())
                    .collect(),
            )
        })
    }
}

/// Similarity of every judged pair under the table, in pair order.
pub fn pairwise_model_similarities(
    table: &EmbeddingTable,
    pairs: &SimilarityJudgmentSet,
    mode: SimilarityMode,
) -> Vec<PairSimilarity> {
    let mut cache = EmbeddingCache::new(table);
    pairs
        .pairs
        .iter()
        .map(|(a, b)| {
            let ea = cache.get(a)?;
            let eb = cache.get(b)?;
            model_similarity(&ea, &eb, mode).map_err(|_| PairIssue::ZeroNorm)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RsaResult {
    pub model_name: String,
    pub layer: Layer,
    pub r: f64,
    /// Naive `n - 2` degrees of freedom; pairs are not independent.
    pub p: f64,
    pub n_pairs: usize,
    pub dropped: usize,
}

/// Pearson correlation between model similarities and human similarity scores
/// (distance-oriented human scores are negated). Pairs without a model
/// similarity are left out of both sides.
pub fn rsa_correlation(
    model_sims: &[PairSimilarity],
    human: &SimilarityJudgmentSet,
    model_name: &str,
    layer: Layer,
) -> Result<RsaResult> {
    if model_sims.len() != human.len() {
        return Err(Error::Dimension {
            expected: human.len(),
            found: model_sims.len(),
        });
    }
    let oriented = human.similarity_scores();
    let (model, people): (Vec<f64>, Vec<f64>) = model_sims
        .iter()
        .zip(&oriented)
        .filter_map(|(m, h)| m.as_ref().ok().map(|&m| (m, *h)))
        .unzip();
    let dropped = human.len() - model.len();
    if dropped > 0 {
        log::warn!("RSA {model_name} ({layer}): {dropped} of {} pairs without a model similarity", human.len());
    }
    let pr = pearson(&model, &people)?;
    Ok(RsaResult {
        model_name: model_name.to_string(),
        layer,
        r: pr.r,
        p: pr.p,
        n_pairs: model.len(),
        dropped,
    })
}

pub fn rsa_for_table(table: &EmbeddingTable, human: &SimilarityJudgmentSet, mode: SimilarityMode) -> Result<RsaResult> {
    let sims = pairwise_model_similarities(table, human, mode);
    rsa_correlation(&sims, human, &table.model_name, table.layer)
}

/// Checks that the tables are layers of one model over one molecule set,
/// returning their indices in layer order.
pub fn layer_order(tables: &[EmbeddingTable]) -> Result<Vec<usize>> {
    let first = tables
        .first()
        .ok_or_else(|| Error::InvalidArgument("layer sweep needs at least one table".into()))?;
    let ids: BTreeSet<_> = first.ids().iter().collect();
    let mut layers = BTreeSet::new();
    for t in tables {
        if t.model_name != first.model_name {
            return Err(Error::InvalidArgument(format!(
                "layer sweep mixes models {:?} and {:?}",
                first.model_name, t.model_name
            )));
        }
        if t.ids().len() != ids.len() || !t.ids().iter().all(|id| ids.contains(id)) {
            return Err(Error::InvalidArgument(format!(
                "layer {} covers a different molecule set than layer {}",
                t.layer, first.layer
            )));
        }
        if !layers.insert(t.layer) {
            return Err(Error::InvalidArgument(format!("layer {} appears twice", t.layer)));
        }
    }
    let mut order: Vec<usize> = (0..tables.len()).collect();
    order.sort_by_key(|&i| tables[i].layer);
    Ok(order)
}

/// One RSA result per layer, ordered by layer.
pub fn layer_sweep(tables: &[EmbeddingTable], human: &SimilarityJudgmentSet, mode: SimilarityMode) -> Result<Vec<RsaResult>> {
    layer_order(tables)?
        .into_iter()
        .map(|i| rsa_for_table(&tables[i], human, mode))
        .collect()
}

/// Square similarity matrix over a list of odorants; `mask` is true where a
/// value is defined.
#[derive(Debug, Clone, PartialEq)]
pub struct Rsm {
    pub odorants: Vec<String>,
    pub matrix: Array2<f64>,
    pub mask: Array2<bool>,
}

impl Rsm {
    /// Matrix CSV with a leading `odorant` column; undefined cells are empty.
    pub fn write_matrix_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["odorant".to_string()];
        header.extend(self.odorants.iter().cloned());
        w.write_record(&header)?;
        for (i, name) in self.odorants.iter().enumerate() {
            let mut rec = vec![name.clone()];
            rec.extend((0..self.odorants.len()).map(|j| {
                if self.mask[[i, j]] {
                    self.matrix[[i, j]].to_string()
                } else {
                    String::new()
                }
            }));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<rsm>", e))?;
        Ok(())
    }

    pub fn write_mask_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["odorant".to_string()];
        header.extend(self.odorants.iter().cloned());
        w.write_record(&header)?;
        for (i, name) in self.odorants.iter().enumerate() {
            let mut rec = vec![name.clone()];
            rec.extend((0..self.odorants.len()).map(|j| u8::from(self.mask[[i, j]]).to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<rsm mask>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsmPair {
    pub model: Rsm,
    pub human: Option<Rsm>,
}

/// Model RSM over all odorant pairs and, when judgments are given, the human
/// RSM filled only at rated pairs.
pub fn build_rsm(
    table: &EmbeddingTable,
    odorants: &[Odorant],
    human: Option<&SimilarityJudgmentSet>,
    mode: SimilarityMode,
) -> Result<RsmPair> {
    let missing: Vec<String> = odorants
        .iter()
        .filter(|o| !resolvable(table, o))
        .map(|o| o.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Lookup(missing));
    }
    let n = odorants.len();
    let embeddings = odorants
        .iter()
        .map(|o| mixture_embedding(table, o))
        .collect::<Result<Vec<_>>>()?;
    let mut matrix = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        if embeddings[i].iter().all(|&v| v == 0.0) {
            return Err(Error::Undefined(format!("odorant {} has a zero embedding", odorants[i])));
        }
        matrix[[i, i]] = 1.0;
        for j in i + 1..n {
            let s = model_similarity(&embeddings[i], &embeddings[j], mode)?;
            matrix[[i, j]] = s;
            matrix[[j, i]] = s;
        }
    }
    let labels: Vec<String> = odorants.iter().map(|o| o.to_string()).collect();
    let model = Rsm {
        odorants: labels.clone(),
        matrix,
        mask: Array2::from_elem((n, n), true),
    };
    let human = human.map(|h| {
        let index: HashMap<String, usize> = odorants
            .iter()
            .enumerate()
            .map(|(i, o)| (o.canonical_key(), i))
            .collect();
        let scores = h.similarity_scores();
        let mut matrix = Array2::<f64>::zeros((n, n));
        let mut mask = Array2::from_elem((n, n), false);
        for ((a, b), s) in h.pairs.iter().zip(scores) {
            if let (Some(&i), Some(&j)) = (index.get(&a.canonical_key()), index.get(&b.canonical_key())) {
                matrix[[i, j]] = s;
                matrix[[j, i]] = s;
                mask[[i, j]] = true;
                mask[[j, i]] = true;
            }
        }
        Rsm {
            odorants: labels,
            matrix,
            mask,
        }
    });
    Ok(RsmPair { model, human })
}
