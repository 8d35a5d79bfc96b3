use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Role of one parameter entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EntryKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
    /// Running mean or variance; carried along but never differentiated.
    BnRunningStat,
}

impl EntryKind {
    pub fn code(self) -> u8 {
        match self {
            EntryKind::Weight => 0,
            EntryKind::Bias => 1,
            EntryKind::BnScale => 2,
            EntryKind::BnShift => 3,
            EntryKind::BnRunningStat => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => EntryKind::Weight,
            1 => EntryKind::Bias,
            2 => EntryKind::BnScale,
            3 => EntryKind::BnShift,
            4 => EntryKind::BnRunningStat,
            _ => return None,
        })
    }

    pub fn is_trainable(self) -> bool {
        self != EntryKind::BnRunningStat
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Linear,
    Conv,
    BatchNorm,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        match self {
            LayerKind::Linear => 0,
            LayerKind::Conv => 1,
            LayerKind::BatchNorm => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => LayerKind::Linear,
            1 => LayerKind::Conv,
            2 => LayerKind::BatchNorm,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    pub kind: EntryKind,
    pub range: Range<usize>,
}

/// Parameters owned by one linear, conv or batch-norm layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub kind: LayerKind,
    pub regions: Vec<Region>,
    /// Elements per filter in the weight region; 0 for batch norm.
    pub filter_len: usize,
}

impl LayerLayout {
    pub fn region(&self, kind: EntryKind) -> Option<&Region> {
        self.regions.iter().find(|r| r.kind == kind)
    }

    pub fn is_weight_layer(&self) -> bool {
        matches!(self.kind, LayerKind::Linear | LayerKind::Conv)
    }

    /// Filter ranges: one per output channel / output neuron.
    pub fn filters(&self) -> Vec<Range<usize>> {
        match self.region(EntryKind::Weight) {
            Some(r) if self.filter_len > 0 => (r.range.start..r.range.end)
                .step_by(self.filter_len)
                .map(|s| s..s + self.filter_len)
                .collect(),
            _ => Vec::new(),
        }
    }
}

/// Structural metadata shared by parameter vectors and directions of one model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub layers: Vec<LayerLayout>,
    pub len: usize,
    /// Hash of the model spec this layout was compiled from; empty for ad-hoc layouts.
    pub spec_hash: String,
}

impl Layout {
    /// Checks that regions tile `0..len` exactly and filters stay inside weight regions.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            for r in &layer.regions {
                if r.range.start != next || r.range.end < r.range.start {
                    return Err(Error::Format(format!("layer {i}: region {:?} does not continue at {next}", r.range)));
                }
                next = r.range.end;
            }
            if layer.filter_len > 0 {
                let w = layer
                    .region(EntryKind::Weight)
                    .ok_or_else(|| Error::Format(format!("layer {i}: filters without weight region")))?;
                if (w.range.end - w.range.start) % layer.filter_len != 0 {
                    return Err(Error::Format(format!("layer {i}: weight region not a multiple of filter length")));
                }
            }
        }
        if next != self.len {
            return Err(Error::Format(format!("regions cover {next} entries, layout declares {}", self.len)));
        }
        Ok(())
    }

    /// Per-entry kind, expanded.
    pub fn kinds(&self) -> Vec<EntryKind> {
        let mut out = vec![EntryKind::Weight; self.len];
        for r in self.layers.iter().flat_map(|l| &l.regions) {
            out[r.range.clone()].fill(r.kind);
        }
        out
    }

    pub fn mask(&self, pred: impl Fn(EntryKind) -> bool) -> Vec<bool> {
        self.kinds().into_iter().map(pred).collect()
    }

    pub fn weight_indices(&self) -> Vec<usize> {
        self.kinds()
            .into_iter()
            .enumerate()
            .filter_map(|(i, k)| (k == EntryKind::Weight).then_some(i))
            .collect()
    }

    pub fn count(&self, kind: EntryKind) -> usize {
        self.layers
            .iter()
            .flat_map(|l| &l.regions)
            .filter(|r| r.kind == kind)
            .map(|r| r.range.len())
            .sum()
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| l.kind == LayerKind::BatchNorm)
    }
}

/// Flat parameter array plus its structural metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Arc<Layout>) -> Result<Self> {
        if values.len() != layout.len {
            return Err(Error::Dimension { expected: layout.len, got: values.len() });
        }
        Ok(ParamVector { values, layout })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.layout.clone())
    }

    /// Element ranges of each filter of parameter layer `layer`; empty for batch norm.
    pub fn filters_of(&self, layer: usize) -> Result<Vec<Range<usize>>> {
        let l = self
            .layout
            .layers
            .get(layer)
            .ok_or(Error::LayerIndex { index: layer, count: self.layout.layers.len() })?;
        Ok(l.filters())
    }

    /// Euclidean norm over weight-kind entries.
    pub fn weight_norm(&self) -> f64 {
        self.layout
            .layers
            .iter()
            .flat_map(|l| &l.regions)
            .filter(|r| r.kind == EntryKind::Weight)
            .flat_map(|r| &self.values[r.range.clone()])
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.layout.weight_indices().into_iter().map(|i| self.values[i]).collect()
    }

    /// SHA-256 of the little-endian value bytes, hex.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        super::spec::hex(&h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Arc<Layout> {
        Arc::new(Layout {
            layers: vec![LayerLayout {
                kind: LayerKind::Linear,
                regions: vec![
                    Region { kind: EntryKind::Weight, range: 0..6 },
                    Region { kind: EntryKind::Bias, range: 6..8 },
                ],
                filter_len: 3,
            }],
            len: 8,
            spec_hash: String::new(),
        })
    }

    #[test]
    fn filters_skip_bias_entries() {
        let p = ParamVector::new(vec![0.0; 8], layout()).unwrap();
        assert_eq!(p.filters_of(0).unwrap(), vec![0..3, 3..6]);
        assert!(matches!(p.filters_of(1), Err(Error::LayerIndex { index: 1, count: 1 })));
    }

    #[test]
    fn weight_norm_ignores_bias() {
        let p = ParamVector::new(vec![3.0, 4.0, 0.0, 0.0, 0.0, 0.0, 100.0, 100.0], layout()).unwrap();
        assert_eq!(p.weight_norm(), 5.0);
    }

    #[test]
    fn validate_catches_gaps() {
        let mut l = (*layout()).clone();
        assert!(l.validate().is_ok());
        l.len = 9;
        assert!(l.validate().is_err());
    }
}
