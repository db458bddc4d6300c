//! Word areas of interest.
//!
//! Raw word boxes (from OCR) are grown into non-overlapping areas so that
//! slightly inaccurate fixations still land on a word. Every box keeps its
//! raw rectangle; expansion is always recomputed from the raw rectangles.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AoiError {
    #[error("raw boxes overlap: {}", format_pairs(.0))]
    Overlap(Vec<(usize, usize)>),
    #[error("text {text_id}: duplicate token_index {token_index}")]
    DuplicateToken { text_id: String, token_index: usize },
    #[error("text {text_id}: token {token_index} has a malformed box ({reason})")]
    MalformedBox {
        text_id: String,
        token_index: usize,
        reason: String,
    },
    #[error("text {0}: word list is empty")]
    EmptyText(String),
    #[error("text {text_id}: span {question_id} covers tokens {first}..={last}, which do not exist")]
    BadSpan {
        text_id: String,
        question_id: String,
        first: usize,
        last: usize,
    },
    #[error("boundary file line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_pairs(pairs: &[(usize, usize)]) -> String {
    pairs
        .iter()
        .map(|(a, b)| format!("{a}/{b}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Axis-aligned rectangle in image pixels, half-open: `[x, x+w) × [y, y+h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn intersection_area(&self, other: &Rect) -> f64 {
        let w = self.right().min(other.right()) - self.x.max(other.x);
        let h = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    fn is_valid(&self) -> Result<(), String> {
        if ![self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) {
            return Err("non-finite coordinate".into());
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(format!("non-positive size {}x{}", self.w, self.h));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordBox {
    pub token_index: usize,
    pub text: String,
    /// Box as delivered by OCR.
    pub raw: Rect,
    /// Area of interest; equals `raw` until expanded.
    pub bounds: Rect,
    pub line_index: usize,
    pub is_target: bool,
}

impl WordBox {
    pub fn new(token_index: usize, text: impl Into<String>, raw: Rect) -> Self {
        Self {
            token_index,
            text: text.into(),
            raw,
            bounds: raw,
            line_index: 0,
            is_target: false,
        }
    }
}

/// Upper bounds on how far a box may grow; the actual margin on each side is
/// also limited to half the gap to the nearest box on that side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionParams {
    /// Half of the 25 px stimulus word spacing.
    pub horizontal_margin_px: f64,
    pub vertical_margin_px: f64,
}

impl Default for ExpansionParams {
    fn default() -> Self {
        Self {
            horizontal_margin_px: 12.0,
            vertical_margin_px: 24.0,
        }
    }
}

impl ExpansionParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("horizontal_margin_px", self.horizontal_margin_px),
            ("vertical_margin_px", self.vertical_margin_px),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Assigns line numbers by clustering vertical box centers: a new line starts
/// whenever the next center is more than half a (median) line height lower.
pub fn assign_lines(boxes: &mut [WordBox]) {
    if boxes.is_empty() {
        return;
    }
    let mut heights: Vec<f64> = boxes.iter().map(|b| b.raw.h).collect();
    heights.sort_by(f64::total_cmp);
    let threshold = heights[heights.len() / 2] / 2.0;

    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[a].raw.center().1.total_cmp(&boxes[b].raw.center().1));
    let mut line = 0;
    let mut prev = boxes[order[0]].raw.center().1;
    for &i in &order {
        let cy = boxes[i].raw.center().1;
        if cy - prev > threshold {
            line += 1;
        }
        boxes[i].line_index = line;
        prev = cy;
    }
}

/// Grows every raw box into its area of interest.
///
/// Each pair of boxes is separated along some axis. Pairs stacked vertically
/// (including diagonal pairs) limit the facing vertical margins to half their
/// vertical gap; pairs sharing a row limit the facing horizontal margins to
/// half their horizontal gap. Both boxes of a pair therefore stay separated
/// along that axis, which makes the result pairwise disjoint.
pub fn expand_boxes(boxes: &[WordBox], params: &ExpansionParams) -> Result<Vec<WordBox>, AoiError> {
    let n = boxes.len();
    // Expanded edges, starting from the capped margins and pulled in to the
    // midpoint of every facing gap.
    let mut x0: Vec<f64> = boxes.iter().map(|b| b.raw.x - params.horizontal_margin_px).collect();
    let mut x1: Vec<f64> = boxes.iter().map(|b| b.raw.right() + params.horizontal_margin_px).collect();
    let mut y0: Vec<f64> = boxes.iter().map(|b| b.raw.y - params.vertical_margin_px).collect();
    let mut y1: Vec<f64> = boxes.iter().map(|b| b.raw.bottom() + params.vertical_margin_px).collect();
    let mut overlaps = Vec::new();

    for i in 0..n {
        let a = boxes[i].raw;
        for j in i + 1..n {
            let b = boxes[j].raw;
            if a.intersection_area(&b) > 0.0 {
                overlaps.push((boxes[i].token_index, boxes[j].token_index));
                continue;
            }
            let (upper, lower) = if a.y <= b.y { (i, j) } else { (j, i) };
            let upper_bottom = boxes[upper].raw.bottom();
            let lower_top = boxes[lower].raw.y;
            if lower_top >= upper_bottom {
                let mid = upper_bottom + (lower_top - upper_bottom) / 2.0;
                y1[upper] = y1[upper].min(mid);
                y0[lower] = y0[lower].max(mid);
            } else {
                let (l, r) = if a.x <= b.x { (i, j) } else { (j, i) };
                let l_right = boxes[l].raw.right();
                let r_left = boxes[r].raw.x;
                let mid = l_right + ((r_left - l_right) / 2.0).max(0.0);
                x1[l] = x1[l].min(mid);
                x0[r] = x0[r].max(mid);
            }
        }
    }
    if !overlaps.is_empty() {
        return Err(AoiError::Overlap(overlaps));
    }

    let mut out: Vec<WordBox> = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            WordBox {
                bounds: Rect::new(x0[i], y0[i], span_within(x0[i], x1[i]), span_within(y0[i], y1[i])),
                ..b.clone()
            }
        })
        .collect();
    assign_lines(&mut out);
    Ok(out)
}

/// Largest length `w` with `start + w <= end`, so neighbours meeting at a
/// shared edge never overlap after rounding.
fn span_within(start: f64, end: f64) -> f64 {
    let mut w = end - start;
    while start + w > end {
        w = w.next_down();
    }
    w
}

/// Token whose area contains `(x, y)`, if any.
pub fn assign_fixation(x: f64, y: f64, boxes: &[WordBox]) -> Option<usize> {
    boxes
        .iter()
        .find(|b| b.bounds.contains(x, y))
        .map(|b| b.token_index)
}

/// Answer-bearing token range for one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpan {
    pub question_id: String,
    pub first_token: usize,
    pub last_token: usize,
}

impl TargetSpan {
    pub fn covers(&self, token_index: usize) -> bool {
        (self.first_token..=self.last_token).contains(&token_index)
    }
}

/// Word boxes and target spans of one stimulus text.
#[derive(Debug, Clone, PartialEq)]
pub struct TextBoundaries {
    pub text_id: String,
    /// Sorted by token index. `is_target` marks tokens covered by any span.
    pub words: Vec<WordBox>,
    pub spans: Vec<TargetSpan>,
}

impl TextBoundaries {
    pub fn expanded(&self, params: &ExpansionParams) -> Result<TextBoundaries, AoiError> {
        Ok(TextBoundaries {
            words: expand_boxes(&self.words, params)?,
            ..self.clone()
        })
    }

    /// Boxes with `is_target` set for the spans of one question only.
    pub fn boxes_for_question(&self, question_id: &str) -> Vec<WordBox> {
        let spans: Vec<&TargetSpan> = self
            .spans
            .iter()
            .filter(|s| s.question_id == question_id)
            .collect();
        self.words
            .iter()
            .map(|w| WordBox {
                is_target: spans.iter().any(|s| s.covers(w.token_index)),
                ..w.clone()
            })
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WordRow {
    token_index: usize,
    text: String,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TextRow {
    text_id: String,
    words: Vec<WordRow>,
    #[serde(default)]
    spans: Vec<TargetSpan>,
}

/// Reads a boundary file: one JSON record per text with its words and target
/// spans. Extra keys (image size, OCR confidence) are ignored.
pub fn load_boundaries<R: Read>(source: R) -> Result<Vec<TextBoundaries>, AoiError> {
    let mut out = Vec::new();
    for (i, text) in BufReader::new(source).lines().enumerate() {
        let line = i as u64 + 1;
        let text = text.map_err(|e| AoiError::Parse {
            line,
            message: e.to_string(),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let row: TextRow = serde_json::from_str(&text).map_err(|e| AoiError::Parse {
            line,
            message: e.to_string(),
        })?;
        out.push(text_from_row(row)?);
    }
    Ok(out)
}

fn text_from_row(row: TextRow) -> Result<TextBoundaries, AoiError> {
    let text_id = row.text_id;
    if row.words.is_empty() {
        return Err(AoiError::EmptyText(text_id));
    }
    let mut seen = HashSet::new();
    let mut words = Vec::with_capacity(row.words.len());
    for w in row.words {
        if !seen.insert(w.token_index) {
            return Err(AoiError::DuplicateToken {
                text_id,
                token_index: w.token_index,
            });
        }
        let raw = Rect::new(w.x, w.y, w.w, w.h);
        raw.is_valid().map_err(|reason| AoiError::MalformedBox {
            text_id: text_id.clone(),
            token_index: w.token_index,
            reason,
        })?;
        words.push(WordBox::new(w.token_index, w.text, raw));
    }
    words.sort_by_key(|w| w.token_index);
    for span in &row.spans {
        let exists = |t: usize| seen.contains(&t);
        if span.first_token > span.last_token || !exists(span.first_token) || !exists(span.last_token) {
            return Err(AoiError::BadSpan {
                text_id,
                question_id: span.question_id.clone(),
                first: span.first_token,
                last: span.last_token,
            });
        }
    }
    for w in &mut words {
        w.is_target = row.spans.iter().any(|s| s.covers(w.token_index));
    }
    assign_lines(&mut words);
    Ok(TextBoundaries {
        text_id,
        words,
        spans: row.spans,
    })
}

/// Writes texts in the boundary-file format (raw boxes only).
pub fn write_boundaries<W: Write>(mut sink: W, texts: &[TextBoundaries]) -> std::io::Result<()> {
    for t in texts {
        let row = TextRow {
            text_id: t.text_id.clone(),
            words: t
                .words
                .iter()
                .map(|w| WordRow {
                    token_index: w.token_index,
                    text: w.text.clone(),
                    x: w.raw.x,
                    y: w.raw.y,
                    w: w.raw.w,
                    h: w.raw.h,
                })
                .collect(),
            spans: t.spans.clone(),
        };
        serde_json::to_writer(&mut sink, &row)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

/// Index of texts by id.
pub fn by_text_id(texts: Vec<TextBoundaries>) -> BTreeMap<String, TextBoundaries> {
    texts.into_iter().map(|t| (t.text_id.clone(), t)).collect()
}
