//! Label matrix of a 10×10 student-ID template and its textual record form.
//!
//! A [`GridLabel`] stores one bit per template cell: `cell(digit, column)` is
//! set when the box holding `digit` in ID position `column` is blackened.
//! Column 0 is the leftmost (most significant) ID position.
//!
//! The textual record writes one token per column: the digit for a single mark,
//! `X` for an empty column and `[..]` listing every marked digit in ascending
//! order when a column holds two or more marks.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Number of digit rows (0–9).
pub const DIGITS: usize = 10;
/// Number of ID positions (columns).
pub const POSITIONS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("column {column}: {reason}")]
    Malformed { column: usize, reason: &'static str },
    #[error("expected 10 column tokens, found {found}")]
    TokenCount { found: usize },
    #[error("label is not a correctly filled template (column {column} has {marks} marks)")]
    NotCfmt { column: usize, marks: usize },
    #[error("student id must have 10 decimal digits")]
    BadStudentId,
}

/// 10×10 binary label. Bit `d * 10 + c` is cell (digit `d`, position `c`).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct GridLabel {
    bits: u128,
}

impl GridLabel {
    pub const EMPTY: GridLabel = GridLabel { bits: 0 };

    const MASK: u128 = (1u128 << 100) - 1;

    pub fn empty() -> Self {
        Self::EMPTY
    }

    /// Builds a label from raw bits; bits above 100 are rejected.
    pub fn from_bits(bits: u128) -> Option<Self> {
        (bits & !Self::MASK == 0).then_some(Self { bits })
    }

    pub fn bits(&self) -> u128 {
        self.bits
    }

    /// `cells[d][c]` in row-major digit/position order.
    pub fn from_cells(cells: &[[u8; POSITIONS]; DIGITS]) -> Option<Self> {
        let mut label = Self::EMPTY;
        for (d, row) in cells.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => label.set(d, c, true),
                    _ => return None,
                }
            }
        }
        Some(label)
    }

    pub fn to_cells(&self) -> [[u8; POSITIONS]; DIGITS] {
        let mut cells = [[0u8; POSITIONS]; DIGITS];
        for (d, row) in cells.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.get(d, c) as u8;
            }
        }
        cells
    }

    /// Label with `cells[c][c] = 1` for every column.
    pub fn diagonal() -> Self {
        let mut label = Self::EMPTY;
        for c in 0..POSITIONS {
            label.set(c, c, true);
        }
        label
    }

    /// CFMT label spelling out the given ID.
    pub fn from_student_id(id: &StudentId) -> Self {
        let mut label = Self::EMPTY;
        for (c, &d) in id.digits().iter().enumerate() {
            label.set(d as usize, c, true);
        }
        label
    }

    #[inline]
    pub fn get(&self, digit: usize, column: usize) -> bool {
        debug_assert!(digit < DIGITS && column < POSITIONS);
        self.bits >> (digit * POSITIONS + column) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, digit: usize, column: usize, on: bool) {
        assert!(digit < DIGITS && column < POSITIONS, "cell out of range");
        let bit = 1u128 << (digit * POSITIONS + column);
        if on {
            self.bits |= bit;
        } else {
            self.bits &= !bit;
        }
    }

    pub fn clear_column(&mut self, column: usize) {
        for d in 0..DIGITS {
            self.set(d, column, false);
        }
    }

    /// Marked digits of one column, ascending.
    pub fn column_digits(&self, column: usize) -> impl Iterator<Item = usize> + '_ {
        (0..DIGITS).filter(move |&d| self.get(d, column))
    }

    pub fn column_sum(&self, column: usize) -> usize {
        self.column_digits(column).count()
    }

    pub fn count_ones(&self) -> u32 {
        self.bits.count_ones()
    }

    /// Correctly filled matrix template: exactly one mark in every column.
    pub fn is_cfmt(&self) -> bool {
        (0..POSITIONS).all(|c| self.column_sum(c) == 1)
    }

    pub fn to_text(&self) -> TextualRecord {
        let mut text = String::with_capacity(POSITIONS * 2);
        for c in 0..POSITIONS {
            let digits: Vec<usize> = self.column_digits(c).collect();
            match digits.as_slice() {
                [] => text.push('X'),
                [d] => text.push(digit_char(*d)),
                many => {
                    text.push('[');
                    text.extend(many.iter().map(|&d| digit_char(d)));
                    text.push(']');
                }
            }
        }
        TextualRecord { text }
    }

    pub fn from_text(record: &str) -> Result<Self, CodecError> {
        let mut label = Self::EMPTY;
        let mut column = 0usize;
        let mut chars = record.chars();
        while let Some(ch) = chars.next() {
            if column >= POSITIONS {
                return Err(CodecError::TokenCount {
                    found: column + 1 + count_tokens(chars.as_str()),
                });
            }
            match ch {
                'X' => {}
                '0'..='9' => label.set(ch as usize - '0' as usize, column, true),
                '[' => {
                    let mut last: Option<usize> = None;
                    let mut n = 0;
                    loop {
                        match chars.next() {
                            Some(']') => break,
                            Some(d @ '0'..='9') => {
                                let d = d as usize - '0' as usize;
                                if let Some(prev) = last {
                                    if d == prev {
                                        return Err(malformed(column, "duplicate digit in group"));
                                    }
                                    if d < prev {
                                        return Err(malformed(column, "group digits not ascending"));
                                    }
                                }
                                label.set(d, column, true);
                                last = Some(d);
                                n += 1;
                            }
                            Some(_) => return Err(malformed(column, "invalid character in group")),
                            None => return Err(malformed(column, "unterminated group")),
                        }
                    }
                    if n < 2 {
                        return Err(malformed(column, "group needs at least two digits"));
                    }
                }
                _ => return Err(malformed(column, "invalid token")),
            }
            column += 1;
        }
        if column != POSITIONS {
            return Err(CodecError::TokenCount { found: column });
        }
        Ok(label)
    }

    /// Decodes the ID of a CFMT label. Any other label must go to manual review.
    pub fn to_student_id(&self) -> Result<StudentId, CodecError> {
        let mut digits = [0u8; POSITIONS];
        for (c, slot) in digits.iter_mut().enumerate() {
            let mut marks = self.column_digits(c);
            match (marks.next(), marks.next()) {
                (Some(d), None) => *slot = d as u8,
                _ => {
                    return Err(CodecError::NotCfmt {
                        column: c,
                        marks: self.column_sum(c),
                    })
                }
            }
        }
        Ok(StudentId { digits })
    }
}

fn digit_char(d: usize) -> char {
    char::from(b'0' + d as u8)
}

fn malformed(column: usize, reason: &'static str) -> CodecError {
    CodecError::Malformed { column, reason }
}

// Rough token count of a trailing remainder, only used in error messages.
fn count_tokens(rest: &str) -> usize {
    let mut n = 0;
    let mut in_group = false;
    for ch in rest.chars() {
        match ch {
            '[' => in_group = true,
            ']' => {
                in_group = false;
                n += 1;
            }
            _ if !in_group => n += 1,
            _ => {}
        }
    }
    n
}

impl fmt::Debug for GridLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GridLabel({})", self.to_text())
    }
}

impl fmt::Display for GridLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.to_text().fmt(f)
    }
}

/// Canonical string form of a [`GridLabel`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TextualRecord {
    text: String,
}

impl TextualRecord {
    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn to_label(&self) -> GridLabel {
        // Only constructible from a valid label or a successful parse.
        GridLabel::from_text(&self.text).expect("textual record is canonical")
    }
}

impl FromStr for TextualRecord {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GridLabel::from_text(s)?;
        Ok(Self { text: s.to_owned() })
    }
}

impl fmt::Display for TextualRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl AsRef<str> for TextualRecord {
    fn as_ref(&self) -> &str {
        &self.text
    }
}

/// Ten-digit student identification number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StudentId {
    digits: [u8; POSITIONS],
}

impl StudentId {
    pub fn new(digits: [u8; POSITIONS]) -> Result<Self, CodecError> {
        if digits.iter().any(|&d| d > 9) {
            return Err(CodecError::BadStudentId);
        }
        Ok(Self { digits })
    }

    pub fn digits(&self) -> &[u8; POSITIONS] {
        &self.digits
    }
}

impl FromStr for StudentId {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = s.as_bytes();
        if bytes.len() != POSITIONS || !bytes.iter().all(u8::is_ascii_digit) {
            return Err(CodecError::BadStudentId);
        }
        let mut digits = [0u8; POSITIONS];
        for (slot, b) in digits.iter_mut().zip(bytes) {
            *slot = b - b'0';
        }
        Ok(Self { digits })
    }
}

impl fmt::Display for StudentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.digits {
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cfmt_predicate() {
        assert!(!GridLabel::empty().is_cfmt());
        let mut diag = GridLabel::diagonal();
        assert!(diag.is_cfmt());
        diag.set(4, 3, true);
        assert!(!diag.is_cfmt());
    }

    #[test]
    fn text_encoding() {
        assert_eq!(GridLabel::empty().to_text().as_str(), "XXXXXXXXXX");
        assert_eq!(GridLabel::diagonal().to_text().as_str(), "0123456789");

        let mut label = GridLabel::diagonal();
        label.clear_column(0);
        label.set(3, 0, true);
        label.set(4, 0, true);
        assert_eq!(label.to_text().as_str(), "[34]123456789");
    }

    #[test]
    fn text_decoding() {
        assert_eq!(GridLabel::from_text("0123456789").unwrap(), GridLabel::diagonal());

        let mut cleared = GridLabel::diagonal();
        cleared.clear_column(0);
        assert_eq!(GridLabel::from_text("X123456789").unwrap(), cleared);

        let grouped = GridLabel::from_text("[09]123456789").unwrap();
        assert_eq!(grouped.column_digits(0).collect::<Vec<_>>(), vec![0, 9]);
        assert_eq!(grouped.column_sum(1), 1);
    }

    #[test]
    fn decode_errors_name_the_column() {
        assert_eq!(
            GridLabel::from_text("01234[43]789"),
            Err(CodecError::Malformed { column: 5, reason: "group digits not ascending" })
        );
        assert_eq!(
            GridLabel::from_text("012[33]6789"),
            Err(CodecError::Malformed { column: 3, reason: "duplicate digit in group" })
        );
        assert!(matches!(
            GridLabel::from_text("012[3]456789"),
            Err(CodecError::Malformed { column: 3, .. })
        ));
        assert!(matches!(
            GridLabel::from_text("012345678a"),
            Err(CodecError::Malformed { column: 9, .. })
        ));
        assert!(matches!(
            GridLabel::from_text("0123[45"),
            Err(CodecError::Malformed { column: 4, .. })
        ));
        assert_eq!(GridLabel::from_text("012345678"), Err(CodecError::TokenCount { found: 9 }));
        assert_eq!(GridLabel::from_text("01234567890"), Err(CodecError::TokenCount { found: 11 }));
        assert_eq!(GridLabel::from_text(""), Err(CodecError::TokenCount { found: 0 }));
    }

    #[test]
    fn student_ids() {
        assert_eq!(GridLabel::diagonal().to_student_id().unwrap().to_string(), "0123456789");
        assert!(matches!(
            GridLabel::empty().to_student_id(),
            Err(CodecError::NotCfmt { column: 0, marks: 0 })
        ));
        let fives = GridLabel::from_text("5555555555").unwrap();
        assert_eq!(fives.to_student_id().unwrap().to_string(), "5555555555");

        let id: StudentId = "0036512345".parse().unwrap();
        assert_eq!(GridLabel::from_student_id(&id).to_student_id().unwrap(), id);
        assert!("12345".parse::<StudentId>().is_err());
    }

    #[test]
    fn cells_round_trip() {
        let label = GridLabel::from_text("[019]X2345[67]789").unwrap();
        assert_eq!(GridLabel::from_cells(&label.to_cells()), Some(label));
        let mut bad = label.to_cells();
        bad[0][0] = 2;
        assert_eq!(GridLabel::from_cells(&bad), None);
    }

    fn any_label() -> impl Strategy<Value = GridLabel> {
        any::<u128>().prop_map(|b| GridLabel::from_bits(b & ((1u128 << 100) - 1)).unwrap())
    }

    proptest! {
        #[test]
        fn text_round_trip(label in any_label()) {
            prop_assert_eq!(GridLabel::from_text(label.to_text().as_str()).unwrap(), label);
        }

        #[test]
        fn cfmt_iff_plain_digits(label in any_label()) {
            let text = label.to_text();
            let plain = !text.as_str().contains('X') && !text.as_str().contains('[');
            prop_assert_eq!(label.is_cfmt(), plain);
            prop_assert_eq!(label.to_student_id().is_ok(), label.is_cfmt());
        }
    }
}
