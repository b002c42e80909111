//! Binary masks as G*G block-majority patch tokens.

use ndarray::Array2;

use crate::error::{Error, Result};

use super::seq::{SeqKind, TokenSequence};
use super::vocab::UnifiedVocabulary;

/// Encodes a binary mask into `grid * grid` patch tokens: a patch becomes
/// `<mask1>` when at least half of its in-bounds pixels are foreground.
pub fn encode_mask_patches(mask: &Array2<u8>, grid: usize) -> Result<TokenSequence> {
    if grid == 0 {
        return Err(Error::Validation("grid must be positive".into()));
    }
    let (h, w) = mask.dim();
    if h == 0 || w == 0 {
        return Err(Error::Validation("empty mask".into()));
    }
    if mask.iter().any(|&v| v > 1) {
        return Err(Error::Validation("mask must be binary (0/1)".into()));
    }
    let ph = h.div_ceil(grid);
    let pw = w.div_ceil(grid);
    let mut ids = Vec::with_capacity(grid * grid + 2);
    ids.push(UnifiedVocabulary::BOS);
    for gy in 0..grid {
        for gx in 0..grid {
            let y0 = gy * ph;
            let x0 = gx * pw;
            let y1 = (y0 + ph).min(h);
            let x1 = (x0 + pw).min(w);
            let mut fg = 0usize;
            let mut total = 0usize;
            for y in y0..y1.max(y0) {
                for x in x0..x1.max(x0) {
                    fg += mask[[y, x]] as usize;
                    total += 1;
                }
            }
            let one = total > 0 && 2 * fg >= total;
            ids.push(if one { UnifiedVocabulary::MASK_ONE } else { UnifiedVocabulary::MASK_ZERO });
        }
    }
    ids.push(UnifiedVocabulary::EOS);
    Ok(TokenSequence { ids, kind: SeqKind::MaskGrid })
}

/// Paints each patch token uniformly back onto an `h x w` binary grid.
pub fn decode_mask_patches(
    seq: &TokenSequence,
    grid: usize,
    h: usize,
    w: usize,
) -> Result<Array2<u8>> {
    let ids = &seq.ids;
    if ids.len() != grid * grid + 2
        || ids.first() != Some(&UnifiedVocabulary::BOS)
        || ids.last() != Some(&UnifiedVocabulary::EOS)
    {
        return Err(Error::Validation(format!(
            "mask sequence must be BOS + {}^2 patch tokens + EOS",
            grid
        )));
    }
    let ph = h.div_ceil(grid);
    let pw = w.div_ceil(grid);
    let mut out = Array2::<u8>::zeros((h, w));
    for (i, &id) in ids[1..ids.len() - 1].iter().enumerate() {
        let v = match id {
            UnifiedVocabulary::MASK_ONE => 1u8,
            UnifiedVocabulary::MASK_ZERO => 0u8,
            other => return Err(Error::Validation(format!("non-patch token {other}"))),
        };
        if v == 0 {
            continue;
        }
        let gy = i / grid;
        let gx = i % grid;
        for y in gy * ph..((gy + 1) * ph).min(h) {
            for x in gx * pw..((gx + 1) * pw).min(w) {
                out[[y, x]] = 1;
            }
        }
    }
    Ok(out)
}
