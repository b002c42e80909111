//! The label converter: every annotation kind in, unified discrete tokens out,
//! and a total (never-failing) parser from token streams back to structure.
//!
//! Wire conventions, fixed here and covered by golden-file tests:
//!
//! * id layout: specials first, then the coordinate bins, then text subwords —
//!   three disjoint contiguous ranges;
//! * boxes are four bin tokens in y-before-x corner order
//!   `(y_min, x_min, y_max, x_max)`, bins shared across both axes;
//! * dequantization returns bin centers, so a quantize/dequantize round trip
//!   moves a coordinate by at most `extent / (2 * bins)`;
//! * masks become `G*G` binary patch tokens by block majority.
//!
//! ```
//! use omnilens::codec::{
//!     build_vocabulary, decode_prediction, encode_annotation, AnnotationRecord, BoxPx, Kind,
//! };
//!
//! let vocab = build_vocabulary(&["polyp".into()], 1000).unwrap();
//! let rec = AnnotationRecord {
//!     image_id: "scene-0".into(),
//!     classes: vec!["polyp".into()],
//!     boxes: vec![BoxPx { x_min: 8.0, y_min: 8.0, x_max: 48.0, y_max: 40.0 }],
//!     masks: vec![],
//!     present_kinds: [Kind::Classification, Kind::Detection].into_iter().collect(),
//! };
//! let seqs = encode_annotation(&rec, &vocab, (64, 64), 16).unwrap();
//! let (back, report) = decode_prediction(&seqs, &vocab, (64, 64));
//! assert_eq!(back.classes, rec.classes);
//! assert_eq!(report.dropped, 0);
//! assert!((back.boxes[0].x_min - 8.0).abs() <= 64.0 / 2000.0 + 1e-9);
//! ```

mod mask;
mod quant;
mod record;
mod seq;
mod vocab;

pub use mask::{decode_mask_patches, encode_mask_patches};
pub use quant::{dequantize_coord, quantize_coord};
pub use record::{manifest_lines, parse_manifest_lines, AnnotationRecord, BoxPx, Kind, ManifestEntry, MANIFEST_HEADER};
pub use seq::{
    decode_prediction, encode_annotation, ParseReport, SeqKind, TokenSequence, DEFAULT_MASK_GRID,
};
pub use vocab::{build_vocabulary, UnifiedVocabulary, SPECIAL_NAMES};
