//! Annotation <-> token-sequence conversion and the total prediction parser.
//!
//! One semantic sequence per object. When a record carries boxes the object's
//! sequence is `BOS, bin(y_min), bin(x_min), bin(y_max), bin(x_max),
//! class-subwords.., EOS`; otherwise it is `BOS, class-subwords.., EOS`. When
//! a record carries masks, every object additionally gets a `BOS, G*G patch
//! tokens, EOS` grid sequence; mask `i` pairs with object `i` on decode.

use ndarray::Array2;

use crate::error::{Error, Result};

use super::mask::{decode_mask_patches, encode_mask_patches};
use super::quant::{dequantize_coord, quantize_coord};
use super::record::{AnnotationRecord, BoxPx, Kind};
use super::vocab::UnifiedVocabulary;

/// Default mask token grid (G).
pub const DEFAULT_MASK_GRID: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqKind {
    Class,
    BoxClass,
    MaskGrid,
}

/// Ordered vocabulary ids; the wire form of one semantic annotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub kind: SeqKind,
}

impl TokenSequence {
    /// Wraps raw ids for total parsing; the kind tag is advisory and ignored
    /// by [`decode_prediction`].
    pub fn raw(ids: Vec<usize>) -> Self {
        Self { ids, kind: SeqKind::Class }
    }

    pub fn validate(&self, vocab: &UnifiedVocabulary) -> Result<()> {
        if self.ids.first() != Some(&UnifiedVocabulary::BOS)
            || self.ids.last() != Some(&UnifiedVocabulary::EOS)
        {
            return Err(Error::Validation("sequence must begin with BOS and end with EOS".into()));
        }
        if let Some(&bad) = self.ids.iter().find(|&&id| id >= vocab.total_size()) {
            return Err(Error::Validation(format!("id {bad} outside vocabulary")));
        }
        Ok(())
    }
}

/// Converts a valid record into unified token sequences; object order is
/// preserved.
pub fn encode_annotation(
    rec: &AnnotationRecord,
    vocab: &UnifiedVocabulary,
    image_size: (usize, usize),
    grid: usize,
) -> Result<Vec<TokenSequence>> {
    let (width, height) = (image_size.0 as f64, image_size.1 as f64);
    rec.validate(width, height)?;
    let has_box = rec.present_kinds.contains(&Kind::Detection);
    let has_mask = rec.present_kinds.contains(&Kind::Segmentation);
    let bins = vocab.coord_len();
    let mut out = Vec::new();
    for (i, class) in rec.classes.iter().enumerate() {
        let mut ids = vec![UnifiedVocabulary::BOS];
        if has_box {
            let b = rec.boxes[i];
            for (v, extent) in
                [(b.y_min, height), (b.x_min, width), (b.y_max, height), (b.x_max, width)]
            {
                ids.push(vocab.coord_token(quantize_coord(v, extent, bins)?)?);
            }
        }
        ids.extend(vocab.tokenize_word(class)?);
        ids.push(UnifiedVocabulary::EOS);
        out.push(TokenSequence {
            ids,
            kind: if has_box { SeqKind::BoxClass } else { SeqKind::Class },
        });
        if has_mask {
            out.push(encode_mask_patches(&rec.masks[i], grid)?);
        }
    }
    Ok(out)
}

/// Accounting emitted by [`decode_prediction`]: every `BOS` seen becomes
/// exactly one object, one mask grid, one empty fragment, or one drop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseReport {
    pub bos_seen: usize,
    pub objects: usize,
    pub mask_grids: usize,
    pub empty_fragments: usize,
    pub dropped: usize,
}

impl ParseReport {
    pub fn conserved(&self) -> bool {
        self.bos_seen == self.objects + self.mask_grids + self.empty_fragments + self.dropped
    }

    /// Accumulates another report into this one.
    pub fn absorb(&mut self, other: &ParseReport) {
        self.bos_seen += other.bos_seen;
        self.objects += other.objects;
        self.mask_grids += other.mask_grids;
        self.empty_fragments += other.empty_fragments;
        self.dropped += other.dropped;
    }
}

struct Decoded {
    class: String,
    bbox: Option<BoxPx>,
}

/// Fragment grammar: after `BOS`, either nothing / `NO_OBJECT` (empty), only
/// text tokens (class), exactly four coordinate tokens then text tokens
/// (box + class), or a perfect square of patch tokens (mask grid) — each
/// terminated by `EOS`. Anything else is dropped and counted.
fn parse_fragment(
    content: &[usize],
    terminated: bool,
    vocab: &UnifiedVocabulary,
    image_size: (usize, usize),
) -> std::result::Result<Option<FragmentValue>, ()> {
    if content.is_empty() || content[0] == UnifiedVocabulary::NO_OBJECT {
        return Ok(None);
    }
    if !terminated {
        return Err(());
    }
    let (width, height) = (image_size.0 as f64, image_size.1 as f64);
    let bins = vocab.coord_len();
    let first = content[0];
    if vocab.is_text(first) {
        if content.iter().all(|&id| vocab.is_text(id)) {
            return Ok(Some(FragmentValue::Object(Decoded {
                class: vocab.detokenize(content),
                bbox: None,
            })));
        }
        return Err(());
    }
    if vocab.is_coord(first) {
        if content.len() < 5 {
            return Err(());
        }
        let (coords, rest) = content.split_at(4);
        if !coords.iter().all(|&id| vocab.is_coord(id)) {
            return Err(());
        }
        if rest.is_empty() || !rest.iter().all(|&id| vocab.is_text(id)) {
            return Err(());
        }
        let bin = |i: usize| vocab.coord_bin(coords[i]).unwrap();
        let deq = |b: usize, extent: f64| dequantize_coord(b, extent, bins).unwrap();
        return Ok(Some(FragmentValue::Object(Decoded {
            class: vocab.detokenize(rest),
            bbox: Some(BoxPx {
                y_min: deq(bin(0), height),
                x_min: deq(bin(1), width),
                y_max: deq(bin(2), height),
                x_max: deq(bin(3), width),
            }),
        })));
    }
    if first == UnifiedVocabulary::MASK_ZERO || first == UnifiedVocabulary::MASK_ONE {
        let all_patch = content
            .iter()
            .all(|&id| id == UnifiedVocabulary::MASK_ZERO || id == UnifiedVocabulary::MASK_ONE);
        let g = (content.len() as f64).sqrt().round() as usize;
        if all_patch && g * g == content.len() && g > 0 {
            let mut ids = vec![UnifiedVocabulary::BOS];
            ids.extend_from_slice(content);
            ids.push(UnifiedVocabulary::EOS);
            let seq = TokenSequence { ids, kind: SeqKind::MaskGrid };
            let mask = decode_mask_patches(&seq, g, image_size.1, image_size.0).map_err(|_| ())?;
            return Ok(Some(FragmentValue::Mask(mask)));
        }
        return Err(());
    }
    Err(())
}

enum FragmentValue {
    Object(Decoded),
    Mask(Array2<u8>),
}

/// Parses arbitrary id streams into a best-effort record. Never fails:
/// malformed fragments are dropped and counted in the [`ParseReport`].
/// Tokens between an `EOS` and the next `BOS` are ignored.
pub fn decode_prediction(
    seqs: &[TokenSequence],
    vocab: &UnifiedVocabulary,
    image_size: (usize, usize),
) -> (AnnotationRecord, ParseReport) {
    let mut report = ParseReport::default();
    let mut objects: Vec<Decoded> = Vec::new();
    let mut masks: Vec<Array2<u8>> = Vec::new();
    for seq in seqs {
        let ids = &seq.ids;
        let mut i = 0;
        while i < ids.len() {
            if ids[i] != UnifiedVocabulary::BOS {
                i += 1;
                continue;
            }
            report.bos_seen += 1;
            let start = i + 1;
            let mut j = start;
            while j < ids.len() && ids[j] != UnifiedVocabulary::EOS && ids[j] != UnifiedVocabulary::BOS {
                j += 1;
            }
            let terminated = j < ids.len() && ids[j] == UnifiedVocabulary::EOS;
            match parse_fragment(&ids[start..j], terminated, vocab, image_size) {
                Ok(None) => report.empty_fragments += 1,
                Ok(Some(FragmentValue::Object(o))) => {
                    report.objects += 1;
                    objects.push(o);
                }
                Ok(Some(FragmentValue::Mask(m))) => {
                    report.mask_grids += 1;
                    masks.push(m);
                }
                Err(()) => report.dropped += 1,
            }
            i = if terminated { j + 1 } else { j };
        }
    }
    let mut rec = AnnotationRecord { image_id: String::new(), ..Default::default() };
    let any_box = objects.iter().any(|o| o.bbox.is_some());
    let any_mask = !masks.is_empty();
    let any_plain = objects.iter().any(|o| o.bbox.is_none());
    for o in objects {
        rec.classes.push(o.class);
        if let Some(b) = o.bbox {
            rec.boxes.push(b);
        }
    }
    rec.masks = masks;
    if any_box {
        rec.present_kinds.insert(Kind::Detection);
    }
    if any_mask {
        rec.present_kinds.insert(Kind::Segmentation);
    }
    if any_plain && !any_mask {
        rec.present_kinds.insert(Kind::Classification);
    }
    (rec, report)
}
