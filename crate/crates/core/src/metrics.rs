//! Foreground IoU and Dice from pixel confusion counts.

use std::fmt::Write as _;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::LabelMap;

/// Pixel counts with class 1 as foreground.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(&self, other: &ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }
}

pub fn confusion(pred: &LabelMap, truth: &LabelMap) -> Result<ConfusionCounts> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape(
            "confusion",
            "n/h/w",
            format!("prediction {:?} vs truth {:?}", pred.shape(), truth.shape()),
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p == 1, t == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `(iou, dice)`. With no foreground in either map both are 1.0.
pub fn iou_dice(c: &ConfusionCounts) -> (f64, f64) {
    let union = c.tp + c.fp + c.fn_;
    if union == 0 {
        return (1.0, 1.0);
    }
    let tp = c.tp as f64;
    (
        tp / union as f64,
        2.0 * tp / (2.0 * tp + (c.fp + c.fn_) as f64),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub name: String,
    pub counts: ConfusionCounts,
    pub iou: f64,
    pub dice: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub images: Vec<ImageScore>,
    /// Mean of per-image scores; the headline numbers.
    pub mean_iou: f64,
    pub mean_dice: f64,
    /// Scores of the summed confusion over all images.
    pub pooled_iou: f64,
    pub pooled_dice: f64,
}

impl MetricsReport {
    /// Rows are sorted by name so both aggregates are independent of input order.
    pub fn from_scores(mut images: Vec<ImageScore>) -> Result<Self> {
        images.sort_by(|a, b| {
            a.name
                .cmp(&b.name)
                .then(a.iou.total_cmp(&b.iou))
                .then(a.dice.total_cmp(&b.dice))
        });
        if images.is_empty() {
            return Err(Error::Data("cannot summarize an empty test set".into()));
        }
        let n = images.len() as f64;
        let pooled = images
            .iter()
            .fold(ConfusionCounts::default(), |acc, s| acc.merge(&s.counts));
        let (pooled_iou, pooled_dice) = iou_dice(&pooled);
        Ok(MetricsReport {
            mean_iou: images.iter().map(|s| s.iou).sum::<f64>() / n,
            mean_dice: images.iter().map(|s| s.dice).sum::<f64>() / n,
            pooled_iou,
            pooled_dice,
            images,
        })
    }

    /// `image<TAB>iou<TAB>dice` rows, then `MEAN` and `POOLED`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("image\tiou\tdice\n");
        for s in &self.images {
            writeln!(out, "{}\t{:.6}\t{:.6}", s.name, s.iou, s.dice).unwrap();
        }
        writeln!(out, "MEAN\t{:.6}\t{:.6}", self.mean_iou, self.mean_dice).unwrap();
        writeln!(
            out,
            "POOLED\t{:.6}\t{:.6}",
            self.pooled_iou, self.pooled_dice
        )
        .unwrap();
        out
    }
}

pub fn score(name: &str, pred: &LabelMap, truth: &LabelMap) -> Result<ImageScore> {
    let counts = confusion(pred, truth)?;
    let (iou, dice) = iou_dice(&counts);
    Ok(ImageScore {
        name: name.to_string(),
        counts,
        iou,
        dice,
    })
}

/// Eval-mode prediction (per-pixel argmax) and scoring of every sample.
pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<MetricsReport> {
    let scores = samples
        .iter()
        .map(|s| {
            let pred = LabelMap::argmax(&model.forward(&s.image)?);
            score(&s.name, &pred, &s.mask)
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_scores(scores)
}
