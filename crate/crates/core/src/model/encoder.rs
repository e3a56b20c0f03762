//! Piecewise convolutional sentence encoder.
//!
//! A same-padded convolution of width `ω` produces `d_c` feature maps per
//! sentence. Each map is split at the two entities' last tokens (in order of
//! appearance) into three segments, each segment is max-pooled, and
//! `u = tanh([max f⁽¹⁾; max f⁽²⁾; max f⁽³⁾])`.
//!
//! Only real tokens are convolved; padding behaves as zero input and never
//! enters a segment, so the output does not depend on pad values.

use alloc::vec::Vec;
use core::ops::Range;

use super::Model;
use crate::diff::{NodeId, Tape};
use crate::instance::Instance;
use crate::{Real, Result};

/// Segment row ranges for a sentence occupying rows `offset..offset+len`,
/// split after positions `first` and `second` (0-based, `first < second`).
pub fn segments(offset: usize, len: usize, first: usize, second: usize) -> [Range<usize>; 3] {
    let a = offset + (first + 1).min(len);
    let b = offset + (second + 1).min(len).max(first + 1);
    let end = offset + len;
    [offset..a, a..b.min(end), b.min(end)..end]
}

/// Feature maps `f` (one row per token) before pooling.
pub fn feature_maps<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    model: &'p Model<T>,
    x: NodeId,
    sentences: &[&Instance],
) -> Result<NodeId> {
    let mut spans = Vec::with_capacity(sentences.len());
    let mut offset = 0;
    for s in sentences {
        spans.push(offset..offset + s.len());
        offset += s.len();
    }
    let unfolded = tape.unfold(x, &spans, model.config().window)?;
    let w = tape.param(model.ids().conv_w);
    let b = tape.param(model.ids().conv_b);
    tape.affine(unfolded, w, b)
}

/// Sentence representations `U`, one row of `3·d_c` per sentence.
pub fn pcnn_encode<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    model: &'p Model<T>,
    x: NodeId,
    sentences: &[&Instance],
) -> Result<NodeId> {
    let f = feature_maps(tape, model, x, sentences)?;
    pool(tape, f, sentences)
}

/// Piecewise max pooling plus `tanh` over precomputed feature maps.
pub fn pool<T: Real>(tape: &mut Tape<'_, T>, f: NodeId, sentences: &[&Instance]) -> Result<NodeId> {
    let mut pieces = Vec::with_capacity(sentences.len());
    let mut offset = 0;
    for s in sentences {
        let (a, b) = s.split_points();
        pieces.push(segments(offset, s.len(), a, b));
        offset += s.len();
    }
    let pooled = tape.piecewise_max(f, &pieces)?;
    Ok(tape.tanh(pooled))
}

/// Number of empty segments across `sentences` (these pool to zero).
pub fn empty_segments(sentences: &[&Instance]) -> usize {
    sentences
        .iter()
        .map(|s| {
            let (a, b) = s.split_points();
            segments(0, s.len(), a, b).iter().filter(|r| r.is_empty()).count()
        })
        .sum()
}
