//! Words over a finite alphabet and truncated tensors indexed by them.
//!
//! Letters are numbered from 1; letter 1 is the time component of a
//! time-augmented path. Coefficients are stored densely in the canonical
//! word order (length first, then lexicographic), so the position of a word
//! in the coefficient vector doubles as its packed integer key:
//! `offset(|w|) + Σ (w_i - 1)·A^{|w|-1-i}`.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use thiserror::Error;

/// Largest alphabet the text format (one digit per letter) can render.
pub const MAX_ALPHABET: usize = 9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("alphabet mismatch: {left} vs {right}")]
    AlphabetMismatch { left: usize, right: usize },
    #[error("letter {letter} outside alphabet 1..={alphabet}")]
    LetterOutOfRange { letter: u8, alphabet: usize },
    #[error("word of length {len} exceeds truncation level {level}")]
    WordTooLong { len: usize, level: usize },
    #[error("alphabet size {0} not supported (1..=9)")]
    UnsupportedAlphabet(usize),
    #[error("malformed tensor text at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// A finite sequence of letters. The empty word is the unit for both
/// concatenation and shuffle.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word(Vec<u8>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn new(letters: impl Into<Vec<u8>>) -> Self {
        Word(letters.into())
    }

    pub fn letter(letter: u8) -> Self {
        Word(vec![letter])
    }

    /// The word `letter` repeated `times` times.
    pub fn repeat(letter: u8, times: usize) -> Self {
        Word(vec![letter; times])
    }

    pub fn letters(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut letters = self.0.clone();
        letters.extend_from_slice(&other.0);
        Word(letters)
    }

    pub fn push(&mut self, letter: u8) {
        self.0.push(letter);
    }

    pub fn check(&self, alphabet: usize) -> Result<(), TensorError> {
        match self.0.iter().find(|&&l| l == 0 || l as usize > alphabet) {
            Some(&letter) => Err(TensorError::LetterOutOfRange { letter, alphabet }),
            None => Ok(()),
        }
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("e");
        }
        for l in &self.0 {
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

impl FromStr for Word {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "e" || s.is_empty() {
            return Ok(Word::empty());
        }
        s.chars()
            .map(|c| match c.to_digit(10) {
                Some(d) if d >= 1 => Ok(d as u8),
                _ => Err(format!("invalid letter {c:?} in word {s:?}")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Word)
    }
}

/// Number of words of length ≤ `level` over `alphabet` letters.
pub fn word_count(alphabet: usize, level: usize) -> usize {
    level_offset(alphabet, level + 1)
}

/// Index of the first word of length `len` in canonical order.
pub fn level_offset(alphabet: usize, len: usize) -> usize {
    if alphabet == 1 {
        return len;
    }
    // (A^len - 1) / (A - 1)
    let mut total = 0usize;
    let mut pow = 1usize;
    for _ in 0..len {
        total += pow;
        pow *= alphabet;
    }
    total
}

/// Every word of length ≤ `level`, sorted by (length, lexicographic).
pub fn enumerate_words(alphabet: usize, level: usize) -> Vec<Word> {
    (0..word_count(alphabet, level))
        .map(|i| word_at(alphabet, i))
        .collect()
}

/// Canonical position of `word`. Letters must already be validated.
pub fn word_index(alphabet: usize, word: &Word) -> usize {
    let packed = word
        .letters()
        .iter()
        .fold(0usize, |acc, &l| acc * alphabet + (l as usize - 1));
    level_offset(alphabet, word.len()) + packed
}

/// Inverse of [`word_index`].
pub fn word_at(alphabet: usize, index: usize) -> Word {
    let mut len = 0;
    while level_offset(alphabet, len + 1) <= index {
        len += 1;
    }
    let mut packed = index - level_offset(alphabet, len);
    let mut letters = vec![0u8; len];
    for slot in letters.iter_mut().rev() {
        *slot = (packed % alphabet) as u8 + 1;
        packed /= alphabet;
    }
    Word(letters)
}

/// Per-level coefficient magnitudes, used to diagnose exponential growth of
/// a tensor's coefficients in the word length.
#[derive(Clone, Debug, PartialEq)]
pub struct GrowthEstimate {
    pub per_level_max: Vec<f64>,
    pub rate: f64,
}

/// Real coefficients on all words of length ≤ `level`.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedTensor {
    alphabet: usize,
    level: usize,
    coeffs: Vec<f64>,
}

impl TruncatedTensor {
    pub fn zeros(alphabet: usize, level: usize) -> Self {
        assert!(
            (1..=MAX_ALPHABET).contains(&alphabet),
            "alphabet size {alphabet} not supported"
        );
        TruncatedTensor {
            alphabet,
            level,
            coeffs: vec![0.0; word_count(alphabet, level)],
        }
    }

    /// The empty word with coefficient 1.
    pub fn unit(alphabet: usize, level: usize) -> Self {
        let mut t = Self::zeros(alphabet, level);
        t.coeffs[0] = 1.0;
        t
    }

    /// A single basis word with the given coefficient.
    pub fn basis(
        alphabet: usize,
        level: usize,
        word: &Word,
        coeff: f64,
    ) -> Result<Self, TensorError> {
        let mut t = Self::zeros(alphabet, level);
        t.set(word, coeff)?;
        Ok(t)
    }

    pub fn from_terms<'a>(
        alphabet: usize,
        level: usize,
        terms: impl IntoIterator<Item = (&'a Word, f64)>,
    ) -> Result<Self, TensorError> {
        let mut t = Self::zeros(alphabet, level);
        for (w, c) in terms {
            t.add_to(w, c)?;
        }
        Ok(t)
    }

    /// Wraps a coefficient vector already laid out in canonical order.
    pub fn from_coeffs(alphabet: usize, level: usize, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), word_count(alphabet, level));
        TruncatedTensor {
            alphabet,
            level,
            coeffs,
        }
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Coefficients of words of length exactly `m`.
    pub fn level_slice(&self, m: usize) -> &[f64] {
        let lo = level_offset(self.alphabet, m);
        let hi = level_offset(self.alphabet, m + 1);
        &self.coeffs[lo..hi]
    }

    pub fn level_slice_mut(&mut self, m: usize) -> &mut [f64] {
        let lo = level_offset(self.alphabet, m);
        let hi = level_offset(self.alphabet, m + 1);
        &mut self.coeffs[lo..hi]
    }

    /// Coefficient of `word`; zero for words beyond the truncation level.
    pub fn get(&self, word: &Word) -> f64 {
        if word.len() > self.level || word.check(self.alphabet).is_err() {
            return 0.0;
        }
        self.coeffs[word_index(self.alphabet, word)]
    }

    pub fn set(&mut self, word: &Word, value: f64) -> Result<(), TensorError> {
        let i = self.index_of(word)?;
        self.coeffs[i] = value;
        Ok(())
    }

    pub fn add_to(&mut self, word: &Word, value: f64) -> Result<(), TensorError> {
        let i = self.index_of(word)?;
        self.coeffs[i] += value;
        Ok(())
    }

    fn index_of(&self, word: &Word) -> Result<usize, TensorError> {
        word.check(self.alphabet)?;
        if word.len() > self.level {
            return Err(TensorError::WordTooLong {
                len: word.len(),
                level: self.level,
            });
        }
        Ok(word_index(self.alphabet, word))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    /// Nonzero coefficients in canonical order.
    pub fn iter_nonzero(&self) -> impl Iterator<Item = (Word, f64)> + '_ {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(i, &c)| (word_at(self.alphabet, i), c))
    }

    /// Same coefficients, truncated or zero-padded to `level`.
    pub fn with_level(&self, level: usize) -> Self {
        let n = word_count(self.alphabet, level);
        let mut coeffs = vec![0.0; n];
        let keep = n.min(self.coeffs.len());
        coeffs[..keep].copy_from_slice(&self.coeffs[..keep]);
        TruncatedTensor {
            alphabet: self.alphabet,
            level,
            coeffs,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut t = self.clone();
        t.coeffs.iter_mut().for_each(|c| *c *= factor);
        t
    }

    /// `self += factor * other`, over the words both tensors can hold.
    pub fn axpy(&mut self, factor: f64, other: &TruncatedTensor) -> Result<(), TensorError> {
        check_alphabets(self, other)?;
        if other.level > self.level {
            let extra = other.coeffs[self.coeffs.len()..].iter().any(|&c| c != 0.0);
            if extra {
                *self = self.with_level(other.level);
            }
        }
        for (a, &b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += factor * b;
        }
        Ok(())
    }

    /// Tensor (concatenation) product truncated at `level`.
    pub fn concat(&self, other: &TruncatedTensor, level: usize) -> Result<Self, TensorError> {
        check_alphabets(self, other)?;
        let alphabet = self.alphabet;
        let mut out = Self::zeros(alphabet, level);
        for la in 0..=self.level.min(level) {
            let a = self.level_slice(la);
            for lb in 0..=other.level.min(level - la) {
                let b = other.level_slice(lb);
                let shift = alphabet.pow(lb as u32);
                let dst = out.level_slice_mut(la + lb);
                for (ia, &ca) in a.iter().enumerate() {
                    if ca == 0.0 {
                        continue;
                    }
                    let base = ia * shift;
                    for (ib, &cb) in b.iter().enumerate() {
                        dst[base + ib] += ca * cb;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Shuffle product truncated at `level`. Pairs of words whose combined
    /// length exceeds `level` are never expanded.
    pub fn shuffle(&self, other: &TruncatedTensor, level: usize) -> Result<Self, TensorError> {
        check_alphabets(self, other)?;
        let alphabet = self.alphabet;
        let mut out = Self::zeros(alphabet, level);
        let mut scratch_a = Vec::with_capacity(level);
        let mut scratch_b = Vec::with_capacity(level);
        for la in 0..=self.level.min(level) {
            let a = self.level_slice(la);
            for lb in 0..=other.level.min(level - la) {
                let b = other.level_slice(lb);
                let total = la + lb;
                let dst_off = level_offset(alphabet, total);
                for (ia, &ca) in a.iter().enumerate() {
                    if ca == 0.0 {
                        continue;
                    }
                    digits_into(ia, la, alphabet, &mut scratch_a);
                    for (ib, &cb) in b.iter().enumerate() {
                        if cb == 0.0 {
                            continue;
                        }
                        digits_into(ib, lb, alphabet, &mut scratch_b);
                        shuffle_words(
                            &scratch_a,
                            &scratch_b,
                            0,
                            ca * cb,
                            alphabet,
                            &mut out.coeffs[dst_off..],
                        );
                    }
                }
            }
        }
        Ok(out)
    }

    /// Hilbert–Schmidt pairing over the words both tensors hold.
    pub fn pair(&self, other: &TruncatedTensor) -> Result<f64, TensorError> {
        check_alphabets(self, other)?;
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Appends `letter` to every word; words pushed past `level` vanish.
    pub fn right_concat_letter(&self, letter: u8, level: usize) -> Result<Self, TensorError> {
        let alphabet = self.alphabet;
        if letter == 0 || letter as usize > alphabet {
            return Err(TensorError::LetterOutOfRange { letter, alphabet });
        }
        let mut out = Self::zeros(alphabet, level);
        let digit = (letter - 1) as usize;
        for m in 0..=self.level.min(level.saturating_sub(1)) {
            if m + 1 > level {
                break;
            }
            let src = self.level_slice(m);
            let dst = out.level_slice_mut(m + 1);
            for (i, &c) in src.iter().enumerate() {
                dst[i * alphabet + digit] = c;
            }
        }
        Ok(out)
    }

    pub fn growth_estimate(&self) -> GrowthEstimate {
        let per_level_max: Vec<f64> = (0..=self.level)
            .map(|m| {
                self.level_slice(m)
                    .iter()
                    .fold(0.0f64, |acc, c| acc.max(c.abs()))
            })
            .collect();
        let rate = per_level_max
            .iter()
            .enumerate()
            .skip(1)
            .map(|(m, &v)| v.powf(1.0 / m as f64))
            .fold(0.0f64, f64::max);
        GrowthEstimate {
            per_level_max,
            rate,
        }
    }

    /// Writes nonzero coefficients as `word<TAB>coefficient` lines.
    pub fn write_text<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (w, c) in self.iter_nonzero() {
            writeln!(out, "{w}\t{c}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("tensor text is ASCII")
    }

    /// Parses the text dump format; the level is the longest word present
    /// unless `level` is given.
    pub fn read_text<R: BufRead>(
        reader: R,
        alphabet: usize,
        level: Option<usize>,
    ) -> Result<Self, TensorError> {
        let mut terms = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| TensorError::Parse {
                line: n + 1,
                reason: e.to_string(),
            })?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (w, c) = line.split_once('\t').ok_or_else(|| TensorError::Parse {
                line: n + 1,
                reason: "missing tab separator".into(),
            })?;
            let word: Word = w.parse().map_err(|reason| TensorError::Parse {
                line: n + 1,
                reason,
            })?;
            let coeff: f64 =
                c.trim()
                    .parse()
                    .map_err(|e: std::num::ParseFloatError| TensorError::Parse {
                        line: n + 1,
                        reason: e.to_string(),
                    })?;
            terms.push((word, coeff));
        }
        let level = level.unwrap_or_else(|| terms.iter().map(|(w, _)| w.len()).max().unwrap_or(0));
        Self::from_terms(alphabet, level, terms.iter().map(|(w, c)| (w, *c)))
    }
}

fn check_alphabets(a: &TruncatedTensor, b: &TruncatedTensor) -> Result<(), TensorError> {
    if a.alphabet != b.alphabet {
        return Err(TensorError::AlphabetMismatch {
            left: a.alphabet,
            right: b.alphabet,
        });
    }
    Ok(())
}

/// Base-`alphabet` digits (0-based letters) of the `len`-letter word at
/// position `packed` within its level.
fn digits_into(mut packed: usize, len: usize, alphabet: usize, out: &mut Vec<u8>) {
    out.clear();
    out.resize(len, 0);
    for slot in out.iter_mut().rev() {
        *slot = (packed % alphabet) as u8;
        packed /= alphabet;
    }
}

/// Adds `coeff · (u ⧢ v)` into `dst`, the coefficient slice starting at
/// level |u|+|v|. Expands on the first letters: (iu') ⧢ (jv') = i(u' ⧢ jv') + j(iu' ⧢ v').
fn shuffle_words(u: &[u8], v: &[u8], prefix: usize, coeff: f64, alphabet: usize, dst: &mut [f64]) {
    if u.is_empty() || v.is_empty() {
        let rest = if u.is_empty() { v } else { u };
        let packed = rest
            .iter()
            .fold(prefix, |acc, &d| acc * alphabet + d as usize);
        dst[packed] += coeff;
        return;
    }
    shuffle_words(
        &u[1..],
        v,
        prefix * alphabet + u[0] as usize,
        coeff,
        alphabet,
        dst,
    );
    shuffle_words(
        u,
        &v[1..],
        prefix * alphabet + v[0] as usize,
        coeff,
        alphabet,
        dst,
    );
}

impl Add for &TruncatedTensor {
    type Output = TruncatedTensor;

    fn add(self, rhs: &TruncatedTensor) -> TruncatedTensor {
        let mut out = self.clone();
        out.axpy(1.0, rhs)
            .expect("alphabet mismatch in tensor addition");
        out
    }
}

impl Sub for &TruncatedTensor {
    type Output = TruncatedTensor;

    fn sub(self, rhs: &TruncatedTensor) -> TruncatedTensor {
        let mut out = self.clone();
        out.axpy(-1.0, rhs)
            .expect("alphabet mismatch in tensor subtraction");
        out
    }
}

impl Mul<f64> for &TruncatedTensor {
    type Output = TruncatedTensor;

    fn mul(self, rhs: f64) -> TruncatedTensor {
        self.scaled(rhs)
    }
}

impl Neg for &TruncatedTensor {
    type Output = TruncatedTensor;

    fn neg(self) -> TruncatedTensor {
        self.scaled(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Word {
        s.parse().unwrap()
    }

    fn t(alphabet: usize, level: usize, terms: &[(&str, f64)]) -> TruncatedTensor {
        let words: Vec<(Word, f64)> = terms.iter().map(|(s, c)| (w(s), *c)).collect();
        TruncatedTensor::from_terms(alphabet, level, words.iter().map(|(w, c)| (w, *c))).unwrap()
    }

    #[test]
    fn enumerate_small_alphabets() {
        assert_eq!(enumerate_words(2, 0), vec![Word::empty()]);
        assert_eq!(enumerate_words(2, 1), vec![Word::empty(), w("1"), w("2")]);
        assert_eq!(enumerate_words(2, 3).len(), 15);
        let words = enumerate_words(3, 2);
        assert_eq!(words[4], w("11"));
        assert_eq!(words[12], w("33"));
    }

    #[test]
    fn word_count_matches_geometric_sum() {
        for a in 2..=4usize {
            for l in 0..=6usize {
                let closed = (a.pow(l as u32 + 1) - 1) / (a - 1);
                assert_eq!(enumerate_words(a, l).len(), closed);
                assert_eq!(word_count(a, l), closed);
            }
        }
    }

    #[test]
    fn index_round_trip() {
        for i in 0..word_count(3, 4) {
            assert_eq!(word_index(3, &word_at(3, i)), i);
        }
    }

    #[test]
    fn concat_examples() {
        let a = t(2, 3, &[("12", 1.0)]);
        let b = t(2, 3, &[("2", 1.0)]);
        assert_eq!(a.concat(&b, 3).unwrap(), t(2, 3, &[("122", 1.0)]));

        let b = t(2, 3, &[("1", 2.0), ("21", -1.0)]);
        let unit = t(2, 3, &[("e", 3.0)]);
        assert_eq!(unit.concat(&b, 3).unwrap(), b.scaled(3.0));
        assert_eq!(b.concat(&unit, 3).unwrap(), b.scaled(3.0));

        let a = t(2, 2, &[("1", 1.0), ("2", 1.0)]);
        let b = t(2, 2, &[("1", 1.0)]);
        assert_eq!(
            a.concat(&b, 2).unwrap(),
            t(2, 2, &[("11", 1.0), ("21", 1.0)])
        );
    }

    #[test]
    fn concat_truncates() {
        let a = t(2, 3, &[("12", 1.0)]);
        let b = t(2, 3, &[("22", 1.0)]);
        assert!(a.concat(&b, 3).unwrap().is_zero());
    }

    #[test]
    fn shuffle_examples() {
        let unit = t(2, 3, &[("e", 1.0)]);
        let a = t(2, 3, &[("12", 1.0)]);
        assert_eq!(unit.shuffle(&a, 3).unwrap(), a);

        let one = t(2, 3, &[("1", 1.0)]);
        let two = t(2, 3, &[("2", 1.0)]);
        assert_eq!(one.shuffle(&one, 3).unwrap(), t(2, 3, &[("11", 2.0)]));
        assert_eq!(
            one.shuffle(&two, 3).unwrap(),
            t(2, 3, &[("12", 1.0), ("21", 1.0)])
        );
        // Direct enumeration of interleavings: "1" may sit before, between or after "12".
        assert_eq!(
            a.shuffle(&one, 3).unwrap(),
            t(2, 3, &[("112", 2.0), ("121", 1.0)])
        );
        assert_eq!(a.shuffle(&one, 3).unwrap(), brute_shuffle(&a, &one, 3));
    }

    /// Shuffle by choosing the positions of the left word's letters.
    fn brute_shuffle(x: &TruncatedTensor, y: &TruncatedTensor, level: usize) -> TruncatedTensor {
        let mut out = TruncatedTensor::zeros(x.alphabet(), level);
        for (u, cu) in x.iter_nonzero() {
            for (v, cv) in y.iter_nonzero() {
                let n = u.len() + v.len();
                if n > level {
                    continue;
                }
                for mask in 0u32..(1 << n) {
                    if mask.count_ones() as usize != u.len() {
                        continue;
                    }
                    let (mut i, mut j) = (0, 0);
                    let mut w = Vec::with_capacity(n);
                    for pos in 0..n {
                        if mask & (1 << pos) != 0 {
                            w.push(u.letters()[i]);
                            i += 1;
                        } else {
                            w.push(v.letters()[j]);
                            j += 1;
                        }
                    }
                    out.add_to(&Word::new(w), cu * cv).unwrap();
                }
            }
        }
        out
    }

    #[test]
    fn shuffle_skips_words_past_level() {
        let a = t(2, 3, &[("12", 1.0), ("1", 1.0)]);
        let b = t(2, 3, &[("22", 1.0)]);
        let s = a.shuffle(&b, 3).unwrap();
        assert_eq!(s, t(2, 3, &[("122", 1.0), ("212", 1.0), ("221", 1.0)]));
    }

    #[test]
    fn alphabet_mismatch_is_an_error() {
        let a = TruncatedTensor::unit(2, 2);
        let b = TruncatedTensor::unit(3, 2);
        assert!(matches!(
            a.shuffle(&b, 2),
            Err(TensorError::AlphabetMismatch { .. })
        ));
        assert!(matches!(
            a.concat(&b, 2),
            Err(TensorError::AlphabetMismatch { .. })
        ));
        assert!(a.pair(&b).is_err());
    }

    #[test]
    fn pairing_examples() {
        let ell = t(2, 2, &[("e", 5.0)]);
        let g = t(2, 2, &[("e", 1.0), ("1", 3.0), ("22", 4.0)]);
        assert_eq!(ell.pair(&g).unwrap(), 5.0);

        let a = t(2, 2, &[("1", 1.0)]);
        let b = t(2, 2, &[("2", 1.0)]);
        assert_eq!(a.pair(&b).unwrap(), 0.0);

        let tt = 0.7;
        let ell = t(2, 2, &[("1", 1.0), ("22", 2.0)]);
        let g = t(2, 2, &[("1", tt), ("22", tt / 2.0)]);
        assert!((ell.pair(&g).unwrap() - 2.0 * tt).abs() < 1e-15);
    }

    #[test]
    fn right_concat_examples() {
        let unit = TruncatedTensor::unit(2, 2);
        assert_eq!(
            unit.right_concat_letter(1, 2).unwrap(),
            t(2, 2, &[("1", 1.0)])
        );
        let a = t(2, 3, &[("2", 1.0), ("11", 1.0)]);
        assert_eq!(
            a.right_concat_letter(1, 3).unwrap(),
            t(2, 3, &[("21", 1.0), ("111", 1.0)])
        );
        let top = t(2, 2, &[("12", 1.0)]);
        assert!(top.right_concat_letter(2, 2).unwrap().is_zero());
        assert!(matches!(
            unit.right_concat_letter(3, 2),
            Err(TensorError::LetterOutOfRange { letter: 3, .. })
        ));
    }

    #[test]
    fn growth_examples() {
        assert_eq!(TruncatedTensor::zeros(2, 4).growth_estimate().rate, 0.0);
        let ones = TruncatedTensor::from_coeffs(2, 4, vec![1.0; word_count(2, 4)]);
        assert_eq!(ones.growth_estimate().rate, 1.0);
        let mut g = TruncatedTensor::zeros(2, 5);
        for m in 0..=5 {
            g.set(&Word::repeat(1, m), 2f64.powi(m as i32)).unwrap();
        }
        let est = g.growth_estimate();
        assert!((est.rate - 2.0).abs() < 1e-12);
        assert_eq!(est.per_level_max[3], 8.0);
    }

    #[test]
    fn text_round_trip() {
        let a = t(3, 3, &[("e", 1.5), ("13", -2.0), ("322", 0.125)]);
        let text = a.to_text();
        assert_eq!(text, "e\t1.5\n13\t-2\n322\t0.125\n");
        let back = TruncatedTensor::read_text(text.as_bytes(), 3, Some(3)).unwrap();
        assert_eq!(back, a);
        assert!(TruncatedTensor::read_text("12 3\n".as_bytes(), 3, None).is_err());
    }

    #[test]
    fn letters_validated() {
        let mut a = TruncatedTensor::zeros(2, 2);
        assert!(a.set(&w("13"), 1.0).is_err());
        assert!(a.set(&w("122"), 1.0).is_err());
        assert_eq!(a.get(&w("122")), 0.0);
    }
}
