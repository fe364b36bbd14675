use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::fusion::{argmax, ensemble_formats, fuse_streams, fusion_weight, EnsembleOrder, FUSION_WEIGHTS};
use super::linear::{FrozenEncoder, LinearHead};
use super::{EvalError, Result};
use crate::conventions::ConventionRegistry;
use crate::dataio::{SequenceRecord, Stream};
use crate::network::{linear_classify, softmax_rows};

/// Top-1 accuracy with the confusion counts it was computed from.
/// `confusion[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub correct: u64,
    pub total: u64,
    pub per_class: Vec<f64>,
    pub support: Vec<u64>,
    pub confusion: Vec<Vec<u64>>,
}

impl AccuracyReport {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let support: Vec<u64> = confusion.iter().map(|r| r.iter().sum()).collect();
        let correct: u64 = (0..confusion.len()).map(|c| confusion[c][c]).sum();
        let total: u64 = support.iter().sum();
        // classes absent from the split get accuracy 0 and weight 0
        let per_class = (0..confusion.len())
            .map(|c| if support[c] == 0 { 0.0 } else { confusion[c][c] as f64 / support[c] as f64 })
            .collect();
        Self {
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            correct,
            total,
            per_class,
            support,
            confusion,
        }
    }

    /// Predictions are the row argmax of `scores`.
    pub fn from_scores(scores: &Array2<f64>, labels: &[usize]) -> Result<Self> {
        let classes = scores.ncols();
        if labels.len() != scores.nrows() {
            return Err(EvalError::Shape(format!("{} labels for {} score rows", labels.len(), scores.nrows())));
        }
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (row, &label) in scores.axis_iter(Axis(0)).zip(labels) {
            if label >= classes {
                return Err(EvalError::ClassMismatch { a: label + 1, b: classes });
            }
            confusion[label][argmax(row)] += 1;
        }
        Ok(Self::from_confusion(confusion))
    }

    pub fn classes(&self) -> usize {
        self.confusion.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub stream: Stream,
    pub format: String,
    pub result: AccuracyReport,
}

/// Streams of one format fused with the late-fusion weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedReport {
    pub format: String,
    pub streams: Vec<Stream>,
    pub result: AccuracyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub order: EnsembleOrder,
    pub formats: Vec<String>,
    /// Format-averaged softmax scores for each stream.
    pub streams: BTreeMap<Stream, AccuracyReport>,
    /// Format ensemble combined with stream fusion, when several streams exist.
    pub fused: Option<AccuracyReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub classes: usize,
    pub samples: usize,
    pub checkpoint_ids: BTreeMap<Stream, String>,
    pub fusion_weights: [f64; 3],
    pub cells: Vec<CellReport>,
    pub fused: Vec<FusedReport>,
    pub ensemble: Option<EnsembleReport>,
}

impl EvalReport {
    /// The most combined result available: fused ensemble, then ensemble,
    /// then fused streams, then the first cell.
    pub fn headline(&self) -> &AccuracyReport {
        if let Some(e) = &self.ensemble {
            if let Some(f) = &e.fused {
                return f;
            }
            if let Some(r) = e.streams.values().next() {
                return r;
            }
        }
        if let Some(f) = self.fused.first() {
            return &f.result;
        }
        &self.cells[0].result
    }

    pub fn cell(&self, stream: Stream, format: &str) -> Option<&AccuracyReport> {
        self.cells.iter().find(|c| c.stream == stream && c.format == format).map(|c| &c.result)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Protocol {
    pub split: String,
    pub fusion_weights: [f64; 3],
    pub ensemble: bool,
    pub order: EnsembleOrder,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            split: "test".into(),
            fusion_weights: FUSION_WEIGHTS,
            ensemble: false,
            order: EnsembleOrder::default(),
        }
    }
}

/// Softmax class scores of one trained cell on `records`.
pub fn score_cell(frozen: &FrozenEncoder, head: &LinearHead, records: &[SequenceRecord], registry: &ConventionRegistry) -> Result<Array2<f64>> {
    if frozen.stream != head.stream {
        return Err(EvalError::InvalidConfig(format!(
            "head for stream `{}` paired with a `{}` encoder",
            head.stream, frozen.stream
        )));
    }
    let features = frozen.features(records, &head.format, registry)?;
    Ok(softmax_rows(&linear_classify(&features, &head.head)?))
}

/// Scores every requested `(stream, format)` cell on `records` and
/// assembles per-cell, stream-fused and format-ensembled accuracies.
pub fn evaluate(
    cells: &[(&FrozenEncoder, &LinearHead)],
    requested: &[(Stream, String)],
    records: &[SequenceRecord],
    registry: &ConventionRegistry,
    protocol: &Protocol,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(EvalError::EmptySplit(protocol.split.clone()));
    }
    if requested.is_empty() {
        return Err(EvalError::InvalidConfig("no evaluation cells requested".into()));
    }
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let mut scores: BTreeMap<(Stream, String), Array2<f64>> = BTreeMap::new();
    let mut checkpoint_ids = BTreeMap::new();
    let mut classes = None;
    for (stream, format) in requested {
        let (frozen, head) = cells
            .iter()
            .find(|(_, h)| h.stream == *stream && &h.format == format)
            .ok_or_else(|| EvalError::MissingHead {
                stream: *stream,
                format: format.clone(),
            })?;
        match classes {
            None => classes = Some(head.classes),
            Some(c) if c != head.classes => return Err(EvalError::ClassMismatch { a: c, b: head.classes }),
            _ => {}
        }
        checkpoint_ids.insert(*stream, frozen.checkpoint_id.clone());
        scores.insert((*stream, format.clone()), score_cell(frozen, head, records, registry)?);
    }
    let classes = classes.expect("at least one cell");

    let mut report_cells = Vec::new();
    for ((stream, format), s) in &scores {
        report_cells.push(CellReport {
            stream: *stream,
            format: format.clone(),
            result: AccuracyReport::from_scores(s, &labels)?,
        });
    }

    let mut formats: Vec<String> = requested.iter().map(|(_, f)| f.clone()).collect();
    formats.sort();
    formats.dedup();
    let mut streams: Vec<Stream> = requested.iter().map(|(s, _)| *s).collect();
    streams.sort();
    streams.dedup();
    let weights: Vec<f64> = streams.iter().map(|&s| fusion_weight(&protocol.fusion_weights, s)).collect();

    let fuse = |per_stream: &BTreeMap<Stream, &Array2<f64>>| -> Result<Array2<f64>> {
        let sets: Vec<&Array2<f64>> = streams.iter().map(|s| per_stream[s]).collect();
        fuse_streams(&sets, &weights)
    };

    let mut fused = Vec::new();
    let mut fused_scores = BTreeMap::new();
    if streams.len() > 1 {
        for f in &formats {
            let per_stream: Option<BTreeMap<Stream, &Array2<f64>>> =
                streams.iter().map(|&s| scores.get(&(s, f.clone())).map(|a| (s, a))).collect();
            // formats missing a stream are not fused
            if let Some(per_stream) = per_stream {
                let s = fuse(&per_stream)?;
                fused.push(FusedReport {
                    format: f.clone(),
                    streams: streams.clone(),
                    result: AccuracyReport::from_scores(&s, &labels)?,
                });
                fused_scores.insert(f.clone(), s);
            }
        }
    }

    let ensemble = if protocol.ensemble {
        let mut per_stream_scores = BTreeMap::new();
        let mut per_stream = BTreeMap::new();
        for &stream in &streams {
            let sets: Vec<&Array2<f64>> = formats.iter().filter_map(|f| scores.get(&(stream, f.clone()))).collect();
            let e = ensemble_formats(&sets)?;
            per_stream.insert(stream, AccuracyReport::from_scores(&e, &labels)?);
            per_stream_scores.insert(stream, e);
        }
        let fused_ensemble = if streams.len() > 1 {
            let s = match protocol.order {
                EnsembleOrder::FormatsThenStreams => fuse(&per_stream_scores.iter().map(|(k, v)| (*k, v)).collect())?,
                EnsembleOrder::StreamsThenFormats => {
                    if fused_scores.len() != formats.len() {
                        return Err(EvalError::InvalidConfig("streams-first ensembling needs every stream for every format".into()));
                    }
                    let total: f64 = weights.iter().sum();
                    let normalized: Vec<Array2<f64>> = fused_scores.values().map(|s| s / total).collect();
                    ensemble_formats(&normalized.iter().collect::<Vec<_>>())?
                }
            };
            Some(AccuracyReport::from_scores(&s, &labels)?)
        } else {
            None
        };
        Some(EnsembleReport {
            order: protocol.order,
            formats: formats.clone(),
            streams: per_stream,
            fused: fused_ensemble,
        })
    } else {
        None
    };

    Ok(EvalReport {
        split: protocol.split.clone(),
        classes,
        samples: records.len(),
        checkpoint_ids,
        fusion_weights: protocol.fusion_weights,
        cells: report_cells,
        fused,
        ensemble,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDiff {
    pub class: usize,
    pub delta: f64,
}

/// Per-class `a - b` accuracy differences, largest improvement first
/// (ties by class index).
pub fn per_class_diff(a: &AccuracyReport, b: &AccuracyReport) -> Result<Vec<ClassDiff>> {
    if a.classes() != b.classes() {
        return Err(EvalError::ClassMismatch { a: a.classes(), b: b.classes() });
    }
    let mut out: Vec<ClassDiff> = a
        .per_class
        .iter()
        .zip(&b.per_class)
        .enumerate()
        .map(|(class, (x, y))| ClassDiff { class, delta: x - y })
        .collect();
    out.sort_by(|p, q| q.delta.total_cmp(&p.delta).then(p.class.cmp(&q.class)));
    Ok(out)
}
