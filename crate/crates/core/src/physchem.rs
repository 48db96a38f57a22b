//! Decoding physicochemical descriptors from embedding tables.
//!
//! Each descriptor gets its own lasso probe under the standard split
//! protocol. Targets are z-scored on the training rows before fitting and
//! predictions are mapped back, so NRMSE is reported on the original scale.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::Serialize;

use crate::data::{EmbeddingTable, Layer, MoleculeId};
use crate::error::{Error, Result};
use crate::metrics::Summary;
use crate::preproc::column_moments;
use crate::probes::{run_probe_matrix, ModelKind, ProbeConfig, ProbeRun, SplitPlan};
use crate::rsa::layer_order;

pub const DESCRIPTOR_COUNT: usize = 15;

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorTable {
    pub ids: Vec<MoleculeId>,
    pub names: Vec<String>,
    pub values: Array2<f64>,
}

impl DescriptorTable {
    pub fn new(ids: Vec<MoleculeId>, names: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if names.len() != DESCRIPTOR_COUNT {
            return Err(Error::schema(format!(
                "descriptor table needs {DESCRIPTOR_COUNT} columns, found {}",
                names.len()
            )));
        }
        if values.dim() != (ids.len(), names.len()) {
            return Err(Error::schema("descriptor matrix shape does not match ids and names"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(*id)) {
            return Err(Error::schema(format!("duplicate molecule id {dup}")));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::schema(format!("duplicate descriptor name {dup:?}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::schema("descriptor values must be finite"));
        }
        Ok(DescriptorTable { ids, names, values })
    }

    /// Reorders or subsets descriptor columns.
    pub fn select_columns(&self, order: &[usize]) -> Self {
        DescriptorTable {
            ids: self.ids.clone(),
            names: order.iter().map(|&j| self.names[j].clone()).collect(),
            values: self.values.select(Axis(1), order),
        }
    }
}

/// Reads CSV `id,<15 descriptor names>`.
pub fn load_descriptor_table(path: &Path) -> Result<DescriptorTable> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let label = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("id") {
        return Err(Error::schema(format!("{label}: first column must be `id`")));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        ids.push(MoleculeId::new(&rec[0])?);
        for (j, cell) in rec.iter().skip(1).enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::schema(format!("{label}: row {}, {}: not a number: {cell:?}", i + 1, names[j]))
            })?;
            values.push(v);
        }
    }
    let values = Array2::from_shape_vec((ids.len(), names.len()), values).expect("csv enforces record length");
    DescriptorTable::new(ids, names, values)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescriptorScore {
    pub name: String,
    /// `None` when the descriptor is constant over the shared molecules.
    pub cc: Option<Summary>,
    pub nrmse: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhyschemResult {
    pub model_name: String,
    pub layer: Layer,
    pub n: usize,
    pub scores: Vec<DescriptorScore>,
    pub run: ProbeRun,
}

impl PhyschemResult {
    /// Mean CC over descriptors with a defined score.
    pub fn mean_cc(&self) -> f64 {
        let ccs: Vec<f64> = self.scores.iter().filter_map(|s| s.cc.map(|c| c.mean)).collect();
        ccs.iter().sum::<f64>() / ccs.len() as f64
    }
}

/// The lasso probe configuration used for descriptor decoding.
pub fn physchem_config() -> ProbeConfig {
    let mut config = ProbeConfig::new(ModelKind::Lasso);
    config.preprocessing.zscore_targets = true;
    config
}

pub fn run_physchem_decoding(
    table: &EmbeddingTable,
    descriptors: &DescriptorTable,
    plan: &SplitPlan,
    config: &ProbeConfig,
) -> Result<PhyschemResult> {
    if config.kind != ModelKind::Lasso {
        return Err(Error::InvalidArgument("descriptor decoding uses lasso probes".into()));
    }
    let rows: Vec<usize> = (0..descriptors.ids.len())
        .filter(|&i| table.contains(&descriptors.ids[i]))
        .collect();
    if rows.is_empty() {
        return Err(Error::Join(format!(
            "no descriptor molecule is present in {} ({})",
            table.model_name, table.layer
        )));
    }
    let mut x = Array2::zeros((rows.len(), table.dim()));
    for (r, &i) in rows.iter().enumerate() {
        x.row_mut(r).assign(&table.row(&descriptors.ids[i]).expect("filtered to present ids"));
    }
    let y = descriptors.values.select(Axis(0), &rows);
    let row_ids: Vec<String> = rows.iter().map(|&i| descriptors.ids[i].to_string()).collect();

    let run = run_probe_matrix(x.view(), y.view(), &row_ids, &descriptors.names, plan, config)?;
    let per_rep = run.regression_scores();
    let scores = descriptors
        .names
        .iter()
        .enumerate()
        .map(|(d, name)| {
            let (_, _, constant) = column_moments(y.column(d));
            if constant {
                log::warn!("descriptor {name:?} is constant over the shared molecules");
                return DescriptorScore {
                    name: name.clone(),
                    cc: None,
                    nrmse: None,
                };
            }
            let cc: Vec<f64> = per_rep.iter().filter_map(|r| r[d].map(|s| s.cc)).collect();
            let nrmse: Vec<f64> = per_rep.iter().filter_map(|r| r[d].map(|s| s.nrmse)).collect();
            DescriptorScore {
                name: name.clone(),
                cc: (!cc.is_empty()).then(|| Summary::of(&cc)),
                nrmse: (!nrmse.is_empty()).then(|| Summary::of(&nrmse)),
            }
        })
        .collect();
    Ok(PhyschemResult {
        model_name: table.model_name.clone(),
        layer: table.layer,
        n: rows.len(),
        scores,
        run,
    })
}

/// Decoding per layer, ordered by layer.
pub fn physchem_layer_sweep(
    tables: &[EmbeddingTable],
    descriptors: &DescriptorTable,
    plan: &SplitPlan,
    config: &ProbeConfig,
) -> Result<Vec<PhyschemResult>> {
    layer_order(tables)?
        .into_iter()
        .map(|i| run_physchem_decoding(&tables[i], descriptors, plan, config))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        (0..DESCRIPTOR_COUNT).map(|i| format!("desc{i}")).collect()
    }

    #[test]
    fn table_validation() {
        let ids: Vec<MoleculeId> = (0..3).map(|i| MoleculeId::new(i.to_string()).unwrap()).collect();
        assert!(DescriptorTable::new(ids.clone(), names(), Array2::zeros((3, 15))).is_ok());
        assert!(DescriptorTable::new(ids.clone(), names()[..14].to_vec(), Array2::zeros((3, 14))).is_err());
        let mut dup = ids.clone();
        dup[2] = dup[0].clone();
        assert!(DescriptorTable::new(dup, names(), Array2::zeros((3, 15))).is_err());
        let mut bad = Array2::zeros((3, 15));
        bad[[1, 1]] = f64::INFINITY;
        assert!(DescriptorTable::new(ids, names(), bad).is_err());
    }

    #[test]
    fn column_selection() {
        let ids: Vec<MoleculeId> = (0..2).map(|i| MoleculeId::new(i.to_string()).unwrap()).collect();
        let values = Array2::from_shape_fn((2, 15), |(i, j)| (i * 100 + j) as f64);
        let t = DescriptorTable::new(ids, names(), values).unwrap();
        let order: Vec<usize> = (0..15).rev().collect();
        let r = t.select_columns(&order);
        assert_eq!(r.names[0], "desc14");
        assert_eq!(r.values[[1, 0]], 114.0);
    }
}
