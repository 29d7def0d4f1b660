//! Proposal scoring and greedy pasting into a label map.

use log::warn;
use rayon::prelude::*;

use crate::corpus::BinaryMask;
use crate::descriptors::DescriptorSample;
use crate::encoders::{postprocess, region_pool, Encoder, PostProcessSpec};
use crate::learn::{argmax, LinearClassifier};
use crate::metrics::PixelLabelMap;
use crate::{Error, Result};

/// A proposal with its predicted class and pasting score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredProposal {
    /// Position in the input proposal list.
    pub index: usize,
    pub mask: BinaryMask,
    /// Zero-based class index.
    pub class: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOptions {
    pub post: PostProcessSpec,
    /// Divide the class score by the region area. Disable for a single crisp
    /// partition where regions do not compete.
    pub divide_by_area: bool,
}

/// Encodes each proposal from the image's descriptors, labels it with the
/// best class and scores it by that class score (per unit area by default).
/// Proposals that contain no descriptor are dropped with a warning.
pub fn score_proposals(
    masks: &[BinaryMask],
    sample: &DescriptorSample,
    encoder: &dyn Encoder,
    clf: &LinearClassifier,
    opts: &ScoreOptions,
) -> Result<Vec<ScoredProposal>> {
    Error::check_dim(clf.dim(), encoder.dim())?;
    let scored: Vec<Option<ScoredProposal>> = masks
        .par_iter()
        .enumerate()
        .map(|(index, mask)| {
            let area = mask.area();
            if area == 0 {
                warn!("proposal {index} is empty, dropped");
                return Ok(None);
            }
            let enc = match region_pool(sample, mask, encoder) {
                Ok(e) => e,
                Err(Error::EmptyRegion) => {
                    warn!("proposal {index} contains no descriptors, dropped");
                    return Ok(None);
                }
                Err(e) => return Err(e),
            };
            let enc = postprocess(&enc, &opts.post)?;
            let scores = clf.scores(&enc.values)?;
            let class = argmax(&scores);
            let mut score = scores[class];
            if opts.divide_by_area {
                score /= area as f64;
            }
            Ok(Some(ScoredProposal {
                index,
                mask: mask.clone(),
                class,
                score,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(scored.into_iter().flatten().collect())
}

/// Label map plus, per pixel, the index of the proposal that painted it.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    /// Class index + 1; 0 where no proposal reached.
    pub labels: PixelLabelMap,
    pub owner: Vec<Option<usize>>,
}

/// Paints proposals in ascending score order so that higher scores overwrite
/// lower ones. Among equal scores the later proposal in the list wins.
pub fn greedy_paste(
    proposals: &[ScoredProposal],
    width: usize,
    height: usize,
) -> Result<SegmentationResult> {
    if proposals.is_empty() {
        return Err(Error::invalid("no proposals to paste"));
    }
    for p in proposals {
        if (p.mask.width(), p.mask.height()) != (width, height) {
            return Err(Error::invalid(format!(
                "proposal {} is {}x{}, image is {width}x{height}",
                p.index,
                p.mask.width(),
                p.mask.height()
            )));
        }
        if p.score.is_nan() {
            return Err(Error::invalid(format!(
                "proposal {} has a NaN score",
                p.index
            )));
        }
        if p.class >= u16::MAX as usize {
            return Err(Error::invalid(format!(
                "class {} does not fit a 16-bit label map",
                p.class
            )));
        }
    }
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| proposals[a].score.total_cmp(&proposals[b].score));
    let mut labels = PixelLabelMap::filled(width, height, 0);
    let mut owner = vec![None; width * height];
    for i in order {
        let p = &proposals[i];
        let label = (p.class + 1) as u16;
        for (k, &inside) in p.mask.data().iter().enumerate() {
            if inside {
                labels.labels[k] = label;
                owner[k] = Some(p.index);
            }
        }
    }
    Ok(SegmentationResult { labels, owner })
}
