//! Post-hoc analysis of a trained deformable model: homophilic weights,
//! averaged fusion scores and receptive-field intensities, exported as CSV.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::deform::ConvDiagnostics;
use crate::error::{Error, Result};
use crate::model::{ForwardOptions, GraphContext, Model, ModelKind};
use crate::tensor::{Tape, Tensor};

pub const ATTENTION_CSV: &str = "attention.csv";
pub const HOMOPHILIC_CSV: &str = "homophilic_weight.csv";
pub const RECEPTIVE_CSV: &str = "receptive_field.csv";

/// Sum over kernels of the weight `v` puts on neighbors sharing its label,
/// excluding `v` itself. Lies in `[0, K]`.
pub fn homophilic_weight(diag: &ConvDiagnostics, labels: &[usize], v: usize) -> Result<f64> {
    if v >= diag.num_nodes() || v >= labels.len() {
        return Err(Error::InvalidArgument(format!("node {v} out of range")));
    }
    Ok(diag
        .neighborhood(v)
        .filter(|&(u, _)| u != v && labels[u] == labels[v])
        .map(|(_, w)| w.iter().sum::<f64>())
        .sum())
}

/// Mean of the per-node fusion scores for each level (`n x levels` input).
pub fn attention_summary(scores: &Tensor) -> Vec<f64> {
    let (n, levels) = (scores.rows(), scores.cols());
    (0..levels)
        .map(|l| (0..n).map(|v| scores.data()[v * levels + l]).sum::<f64>() / n as f64)
        .collect()
}

/// Influence of every node on target `v`:
/// `I(u) = sum_l sum_k s[v, l] * a_l[u, v, k]`, zero outside all of `v`'s
/// neighborhoods. The intensities sum to `K`.
pub fn receptive_field(v: usize, scores: &Tensor, diagnostics: &[ConvDiagnostics]) -> Result<Vec<f64>> {
    let n = scores.rows();
    if v >= n {
        return Err(Error::InvalidArgument(format!("target node {v} out of range for {n} nodes")));
    }
    if diagnostics.len() != scores.cols() {
        return Err(Error::Shape(format!(
            "{} levels of diagnostics for {} score columns",
            diagnostics.len(),
            scores.cols()
        )));
    }
    let mut intensity = vec![0.0; n];
    for (l, diag) in diagnostics.iter().enumerate() {
        let s = scores.row(v)[l];
        for (u, w) in diag.neighborhood(v) {
            intensity[u] += s * w.iter().sum::<f64>();
        }
    }
    Ok(intensity)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    pub level: String,
    pub avg_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomophilicRow {
    pub node: usize,
    pub level: String,
    pub h_weight_no_deform: f64,
    pub h_weight_deform: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReceptiveRow {
    pub target: usize,
    pub node: usize,
    pub intensity: f64,
}

/// All three analysis tables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnalysisReport {
    pub attention: Vec<AttentionRow>,
    pub homophilic: Vec<HomophilicRow>,
    pub receptive: Vec<ReceptiveRow>,
}

/// Eval-mode forward outputs needed by the analyses.
struct Snapshot {
    scores: Tensor,
    diagnostics: Vec<ConvDiagnostics>,
}

fn snapshot(model: &Model, ctx: &GraphContext, zero_deformation: bool) -> Result<Snapshot> {
    let mut tape = Tape::new();
    let vars = model.params().attach(&mut tape);
    let opts = ForwardOptions {
        dropout: None,
        zero_deformation,
    };
    let out = model.forward(&mut tape, &vars, ctx, opts)?;
    let scores = out.scores.expect("deformable model reports scores");
    Ok(Snapshot {
        scores: tape.value(scores).clone(),
        diagnostics: out.diagnostics(&tape, ctx),
    })
}

/// Runs the analyses on a deformable model. Receptive fields are computed
/// for `targets` only, each sorted by descending intensity (ties by node).
pub fn analyze(model: &Model, ctx: &GraphContext, targets: &[usize]) -> Result<AnalysisReport> {
    if model.config().kind != ModelKind::Deformable {
        return Err(Error::InvalidArgument(format!(
            "analysis needs a deformable model, got {}",
            model.config().kind
        )));
    }
    let deformed = snapshot(model, ctx, false)?;
    let rigid = snapshot(model, ctx, true)?;
    let labels = ctx.labels();

    let attention = attention_summary(&deformed.scores)
        .into_iter()
        .zip(&deformed.diagnostics)
        .map(|(avg_score, d)| AttentionRow {
            level: d.level.to_string(),
            avg_score,
        })
        .collect();

    let mut homophilic = Vec::new();
    for v in 0..ctx.num_nodes() {
        for (with, without) in deformed.diagnostics.iter().zip(&rigid.diagnostics) {
            homophilic.push(HomophilicRow {
                node: v,
                level: with.level.to_string(),
                h_weight_no_deform: homophilic_weight(without, labels, v)?,
                h_weight_deform: homophilic_weight(with, labels, v)?,
            });
        }
    }

    let mut receptive = Vec::new();
    for &t in targets {
        let intensity = receptive_field(t, &deformed.scores, &deformed.diagnostics)?;
        let mut rows: Vec<ReceptiveRow> = intensity
            .into_iter()
            .enumerate()
            .filter(|&(_, i)| i > 0.0)
            .map(|(node, intensity)| ReceptiveRow {
                target: t,
                node,
                intensity,
            })
            .collect();
        rows.sort_by(|a, b| b.intensity.total_cmp(&a.intensity).then(a.node.cmp(&b.node)));
        receptive.extend(rows);
    }

    Ok(AnalysisReport {
        attention,
        homophilic,
        receptive,
    })
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(text.as_slice());
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}

impl AnalysisReport {
    /// Writes the three CSV files into `dir`, replacing existing ones.
    pub fn export(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_csv(&dir.join(ATTENTION_CSV), &["level", "avg_score"], &self.attention)?;
        write_csv(
            &dir.join(HOMOPHILIC_CSV),
            &["node", "level", "h_weight_no_deform", "h_weight_deform"],
            &self.homophilic,
        )?;
        write_csv(&dir.join(RECEPTIVE_CSV), &["target", "node", "intensity"], &self.receptive)
    }

    /// Reads back files written by [`AnalysisReport::export`].
    pub fn import(dir: &Path) -> Result<Self> {
        Ok(Self {
            attention: read_csv(&dir.join(ATTENTION_CSV))?,
            homophilic: read_csv(&dir.join(HOMOPHILIC_CSV))?,
            receptive: read_csv(&dir.join(RECEPTIVE_CSV))?,
        })
    }
}
