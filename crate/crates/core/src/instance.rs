//! Tokenized sentences with annotated entity spans and the per-token
//! features derived from them.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn single(at: usize) -> Self {
        Span {
            start: at,
            end: at + 1,
        }
    }

    pub fn last(&self) -> usize {
        self.end - 1
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Signed offset from token `i` to the nearest token of the span.
    pub fn offset(&self, i: usize) -> isize {
        if i < self.start {
            i as isize - self.start as isize
        } else if i >= self.end {
            i as isize - self.last() as isize
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntityOrder {
    HeadFirst,
    TailFirst,
}

impl EntityOrder {
    pub fn label(self) -> usize {
        match self {
            EntityOrder::HeadFirst => 0,
            EntityOrder::TailFirst => 1,
        }
    }

    pub fn from_label(label: usize) -> Option<Self> {
        match label {
            0 => Some(EntityOrder::HeadFirst),
            1 => Some(EntityOrder::TailFirst),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    /// Word ids, padded (or truncated) to exactly `max_len`.
    tokens: Vec<usize>,
    len: usize,
    max_len: usize,
    head: Span,
    tail: Span,
    /// Vocabulary ids of the entities themselves (`v_{e_h}`, `v_{e_t}`).
    head_word: usize,
    tail_word: usize,
    truncated: bool,
}

impl Instance {
    /// Builds an instance, truncating to `max_len` tokens. Fails when a span
    /// is empty, falls outside the kept tokens, or the spans overlap.
    pub fn new(
        mut tokens: Vec<usize>,
        head: Span,
        tail: Span,
        head_word: usize,
        tail_word: usize,
        max_len: usize,
        pad_id: usize,
    ) -> Result<Self> {
        let truncated = tokens.len() > max_len;
        tokens.truncate(max_len);
        let len = tokens.len();
        for (name, s) in [("head", head), ("tail", tail)] {
            if s.start >= s.end || s.end > len {
                return Err(Error::Span(format!(
                    "{name} span {}..{} outside sentence of length {len}",
                    s.start, s.end
                )));
            }
        }
        if head.overlaps(&tail) {
            return Err(Error::Span(format!(
                "head {}..{} overlaps tail {}..{}",
                head.start, head.end, tail.start, tail.end
            )));
        }
        tokens.resize(max_len, pad_id);
        Ok(Instance {
            tokens,
            len,
            max_len,
            head,
            tail,
            head_word,
            tail_word,
            truncated,
        })
    }

    /// All `max_len` ids, padding included.
    pub fn padded_tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens[..self.len]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn head(&self) -> Span {
        self.head
    }

    pub fn tail(&self) -> Span {
        self.tail
    }

    pub fn head_word(&self) -> usize {
        self.head_word
    }

    pub fn tail_word(&self) -> usize {
        self.tail_word
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }

    /// Per real token, the signed offsets to the head and tail entities,
    /// clamped to `[−max_len, max_len]`.
    pub fn relative_positions(&self) -> Vec<(isize, isize)> {
        let n = self.max_len as isize;
        (0..self.len)
            .map(|i| {
                (
                    self.head.offset(i).clamp(-n, n),
                    self.tail.offset(i).clamp(-n, n),
                )
            })
            .collect()
    }

    /// Offsets shifted by `+max_len` into position-table rows `0..=2·max_len`.
    pub fn position_indices(&self) -> (Vec<usize>, Vec<usize>) {
        let n = self.max_len as isize;
        self.relative_positions()
            .into_iter()
            .map(|(h, t)| ((h + n) as usize, (t + n) as usize))
            .unzip()
    }

    pub fn entity_order(&self) -> EntityOrder {
        if self.head.start < self.tail.start {
            EntityOrder::HeadFirst
        } else {
            EntityOrder::TailFirst
        }
    }

    /// Last-token positions of the two entities in order of appearance, used
    /// as the piecewise-pooling boundaries.
    pub fn split_points(&self) -> (usize, usize) {
        let (a, b) = (self.head.last(), self.tail.last());
        (a.min(b), a.max(b))
    }

    /// Same sentence with head and tail annotations exchanged.
    pub fn swapped(&self) -> Self {
        Instance {
            head: self.tail,
            tail: self.head,
            head_word: self.tail_word,
            tail_word: self.head_word,
            ..self.clone()
        }
    }
}
