//! Readability indices (Flesch-Kincaid grade, Gunning Fog, Coleman-Liau) and
//! their mean, the Total Grade Level.
//!
//! All three indices read the same [`TextStats`], produced by one pass of a
//! fixed tokenizer:
//!
//! * Markdown markers are dropped. Headings and list items are their own
//!   sentence blocks, as are paragraphs separated by blank lines.
//! * Inline math (`$..$`, `$$..$$`, `\(..\)`, `\[..\]`) and LaTeX commands
//!   are opaque one-syllable words.
//! * Sentences end at a run of `.`, `?` or `!` followed by whitespace or the
//!   end of a block. Decimals and a short list of abbreviations do not end
//!   sentences. A trailing fragment without a terminator still counts.
//! * Words are maximal alphanumeric runs; internal hyphens, apostrophes and
//!   dots (`well-known`, `don't`, `3.14`, `e.g`) keep a word whole.
//! * Words containing a digit count as one syllable. Other words count vowel
//!   groups with silent-e, `-ed` and `-es` corrections, at least one.
//! * Letters are alphanumeric characters inside words.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReadabilityError {
    #[error("text is empty")]
    EmptyText,
    #[error("text is too short to score ({words} words, {sentences} sentences)")]
    DegenerateText { words: usize, sentences: usize },
}

/// Counts feeding the three indices.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextStats {
    pub sentences: usize,
    pub words: usize,
    pub syllables: usize,
    pub letters: usize,
    /// Words with three or more syllables.
    pub complex_words: usize,
}

impl std::ops::Add for TextStats {
    type Output = TextStats;

    fn add(self, o: TextStats) -> TextStats {
        TextStats {
            sentences: self.sentences + o.sentences,
            words: self.words + o.words,
            syllables: self.syllables + o.syllables,
            letters: self.letters + o.letters,
            complex_words: self.complex_words + o.complex_words,
        }
    }
}

impl std::ops::AddAssign for TextStats {
    fn add_assign(&mut self, o: TextStats) {
        *self = *self + o;
    }
}

/// All four scores for one text.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradeReport {
    pub stats: TextStats,
    pub flesch_kincaid: f64,
    pub gunning_fog: f64,
    pub coleman_liau: f64,
    pub total_grade_level: f64,
}

const MATH_SENTINEL: char = '\u{E000}';

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "vs", "fig", "eq", "eqs", "approx", "e.g", "i.e", "cf",
    "al", "sec", "ch", "resp",
];

pub fn analyze_text(text: &str) -> Result<TextStats, ReadabilityError> {
    if text.trim().is_empty() {
        return Err(ReadabilityError::EmptyText);
    }
    let (prose, math_letters) = extract_math(text);
    let mut math = math_letters.into_iter();
    let mut stats = TextStats::default();
    for block in blocks(&prose) {
        scan_block(&block, &mut math, &mut stats);
    }
    Ok(stats)
}

fn guard(stats: &TextStats) -> Result<(), ReadabilityError> {
    if stats.sentences == 0 || stats.words == 0 {
        return Err(ReadabilityError::DegenerateText {
            words: stats.words,
            sentences: stats.sentences,
        });
    }
    Ok(())
}

pub fn flesch_kincaid(stats: &TextStats) -> Result<f64, ReadabilityError> {
    guard(stats)?;
    let wps = stats.words as f64 / stats.sentences as f64;
    let spw = stats.syllables as f64 / stats.words as f64;
    Ok(0.39 * wps + 11.8 * spw - 15.59)
}

pub fn gunning_fog(stats: &TextStats) -> Result<f64, ReadabilityError> {
    guard(stats)?;
    let wps = stats.words as f64 / stats.sentences as f64;
    let complex = stats.complex_words as f64 / stats.words as f64;
    Ok(0.4 * (wps + 100.0 * complex))
}

pub fn coleman_liau(stats: &TextStats) -> Result<f64, ReadabilityError> {
    guard(stats)?;
    let l = 100.0 * stats.letters as f64 / stats.words as f64;
    let s = 100.0 * stats.sentences as f64 / stats.words as f64;
    Ok(0.0588 * l - 0.296 * s - 15.8)
}

/// Mean of the three indices over one set of counts.
pub fn grade_report(stats: TextStats) -> Result<GradeReport, ReadabilityError> {
    let fk = flesch_kincaid(&stats)?;
    let fog = gunning_fog(&stats)?;
    let cli = coleman_liau(&stats)?;
    Ok(GradeReport {
        stats,
        flesch_kincaid: fk,
        gunning_fog: fog,
        coleman_liau: cli,
        total_grade_level: (fk + fog + cli) / 3.0,
    })
}

/// Scores a text; one-word texts are rejected as degenerate.
pub fn score_text(text: &str) -> Result<GradeReport, ReadabilityError> {
    let stats = analyze_text(text)?;
    if stats.words < 2 {
        return Err(ReadabilityError::DegenerateText {
            words: stats.words,
            sentences: stats.sentences,
        });
    }
    grade_report(stats)
}

pub fn total_grade_level(text: &str) -> Result<f64, ReadabilityError> {
    score_text(text).map(|r| r.total_grade_level)
}

/// Replaces math spans with a sentinel, returning the letter count of each.
fn extract_math(text: &str) -> (String, Vec<usize>) {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut letters = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let close: Option<&[char]> = match (chars[i], chars.get(i + 1)) {
            ('$', Some('$')) => Some(&['$', '$']),
            ('$', _) => Some(&['$']),
            ('\\', Some('(')) => Some(&['\\', ')']),
            ('\\', Some('[')) => Some(&['\\', ']']),
            _ => None,
        };
        if let Some(close) = close {
            let open_len = if chars[i] == '$' { close.len() } else { 2 };
            let start = i + open_len;
            if let Some(end) = find_seq(&chars, start, close) {
                letters.push(
                    chars[start..end]
                        .iter()
                        .filter(|c| c.is_alphanumeric())
                        .count(),
                );
                out.push(' ');
                out.push(MATH_SENTINEL);
                out.push(' ');
                i = end + close.len();
                continue;
            }
        }
        if chars[i] == '\\' && chars.get(i + 1).is_some_and(|c| c.is_ascii_alphabetic()) {
            let mut j = i + 1;
            while j < chars.len() && chars[j].is_ascii_alphabetic() {
                j += 1;
            }
            let mut count = j - i - 1;
            // Argument groups belong to the command: `\frac{a}{b}`.
            while chars.get(j) == Some(&'{') {
                let Some(end) = matching_brace(&chars, j) else {
                    break;
                };
                count += chars[j..end].iter().filter(|c| c.is_alphanumeric()).count();
                j = end + 1;
            }
            letters.push(count);
            out.push(' ');
            out.push(MATH_SENTINEL);
            out.push(' ');
            i = j;
            continue;
        }
        out.push(chars[i]);
        i += 1;
    }
    (out, letters)
}

fn matching_brace(chars: &[char], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (j, &c) in chars.iter().enumerate().skip(open) {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(j);
                }
            }
            _ => {}
        }
    }
    None
}

fn find_seq(chars: &[char], from: usize, seq: &[char]) -> Option<usize> {
    (from..chars.len().saturating_sub(seq.len() - 1)).find(|&j| chars[j..j + seq.len()] == *seq)
}

/// Splits prose into sentence blocks: paragraphs, headings and list items.
fn blocks(prose: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut para = String::new();
    let flush = |para: &mut String, out: &mut Vec<String>| {
        if !para.trim().is_empty() {
            out.push(std::mem::take(para));
        }
        para.clear();
    };
    for line in prose.lines() {
        let trimmed = line.trim_start();
        if trimmed.is_empty() {
            flush(&mut para, &mut out);
            continue;
        }
        if let Some(rest) = strip_block_marker(trimmed) {
            flush(&mut para, &mut out);
            out.push(rest.to_string());
            continue;
        }
        if !para.is_empty() {
            para.push(' ');
        }
        para.push_str(line);
    }
    flush(&mut para, &mut out);
    out
}

/// Heading, list-item or quote markers at the start of a line.
fn strip_block_marker(line: &str) -> Option<&str> {
    let heading = line.trim_start_matches('#');
    if heading.len() < line.len() && (heading.is_empty() || heading.starts_with(' ')) {
        return Some(heading);
    }
    for marker in ["- ", "* ", "+ ", "> "] {
        if let Some(rest) = line.strip_prefix(marker) {
            return Some(rest);
        }
    }
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 && digits <= 3 {
        let rest = &line[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return Some(r);
        }
    }
    None
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() && c != MATH_SENTINEL
}

fn scan_block(block: &str, math: &mut impl Iterator<Item = usize>, stats: &mut TextStats) {
    let chars: Vec<char> = block.chars().collect();
    let mut words_in_sentence = 0usize;
    let mut last_word = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == MATH_SENTINEL {
            let letters = math.next().unwrap_or(0);
            add_word(stats, 1, letters);
            words_in_sentence += 1;
            last_word.clear();
            i += 1;
        } else if is_word_char(c) {
            let start = i;
            i += 1;
            while i < chars.len() {
                if is_word_char(chars[i]) {
                    i += 1;
                } else if matches!(chars[i], '-' | '\'' | '\u{2019}' | '.' | ',')
                    && chars.get(i + 1).is_some_and(|&n| is_word_char(n))
                    && (chars[i] != ','
                        || (chars[i - 1].is_ascii_digit() && chars[i + 1].is_ascii_digit()))
                {
                    i += 2;
                } else {
                    break;
                }
            }
            let word: String = chars[start..i].iter().collect();
            let letters = word.chars().filter(|c| c.is_alphanumeric()).count();
            add_word(stats, word_syllables(&word), letters);
            words_in_sentence += 1;
            last_word = word.to_lowercase();
        } else if matches!(c, '.' | '?' | '!') {
            let mut j = i;
            while j < chars.len() && matches!(chars[j], '.' | '?' | '!') {
                j += 1;
            }
            while j < chars.len()
                && matches!(
                    chars[j],
                    '"' | '\'' | ')' | ']' | '\u{201D}' | '\u{2019}' | '*' | '_'
                )
            {
                j += 1;
            }
            let at_boundary = j >= chars.len() || chars[j].is_whitespace();
            let abbreviation = c == '.' && j == i + 1 && is_abbreviation(&last_word);
            if at_boundary && !abbreviation && words_in_sentence > 0 {
                stats.sentences += 1;
                words_in_sentence = 0;
            }
            last_word.clear();
            i = j;
        } else {
            if !c.is_whitespace() {
                last_word.clear();
            }
            i += 1;
        }
    }
    if words_in_sentence > 0 {
        stats.sentences += 1;
    }
}

fn is_abbreviation(word: &str) -> bool {
    ABBREVIATIONS.contains(&word)
        || (word.chars().count() == 1 && word.chars().all(|c| c.is_alphabetic()))
}

fn add_word(stats: &mut TextStats, syllables: usize, letters: usize) {
    stats.words += 1;
    stats.syllables += syllables;
    stats.letters += letters;
    if syllables >= 3 {
        stats.complex_words += 1;
    }
}

/// Syllables in one word token (hyphenated parts are summed).
pub fn word_syllables(word: &str) -> usize {
    if word.chars().any(|c| c.is_ascii_digit()) {
        return 1;
    }
    word.split('-')
        .filter(|p| !p.is_empty())
        .map(|p| {
            let letters: String = p
                .chars()
                .filter(|c| c.is_alphabetic())
                .flat_map(char::to_lowercase)
                .collect();
            count_syllables(&letters)
        })
        .sum::<usize>()
        .max(1)
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

fn count_syllables(w: &str) -> usize {
    let chars: Vec<char> = w.chars().collect();
    if chars.is_empty() {
        return 0;
    }
    let mut groups = 0;
    let mut prev_vowel = false;
    for (i, &c) in chars.iter().enumerate() {
        let v = is_vowel(c) && !(c == 'y' && i == 0);
        if v && !prev_vowel {
            groups += 1;
        }
        prev_vowel = v;
    }
    let n = chars.len();
    let consonant = |i: usize| !is_vowel(chars[i]);
    if n > 2 && chars[n - 1] == 'e' && consonant(n - 2) {
        let syllabic_le = chars[n - 2] == 'l' && n > 3 && consonant(n - 3);
        if !syllabic_le {
            groups -= 1;
        }
    } else if n > 3 && chars[n - 2] == 'e' && chars[n - 1] == 'd' && consonant(n - 3) {
        if !matches!(chars[n - 3], 't' | 'd') {
            groups -= 1;
        }
    } else if n > 3 && chars[n - 2] == 'e' && chars[n - 1] == 's' && consonant(n - 3) {
        let sibilant = matches!(chars[n - 3], 's' | 'x' | 'z' | 'c' | 'g')
            || (n > 4 && chars[n - 3] == 'h' && matches!(chars[n - 4], 's' | 'c'));
        if !sibilant {
            groups -= 1;
        }
    }
    groups.max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(
        words: usize,
        sentences: usize,
        syllables: usize,
        letters: usize,
        complex: usize,
    ) -> TextStats {
        TextStats {
            sentences,
            words,
            syllables,
            letters,
            complex_words: complex,
        }
    }

    #[test]
    fn cat_sat() {
        let s = analyze_text("The cat sat.").unwrap();
        assert_eq!(s, stats(3, 1, 3, 9, 0));
    }

    #[test]
    fn empty_and_repeated() {
        assert_eq!(analyze_text(""), Err(ReadabilityError::EmptyText));
        assert_eq!(analyze_text("   \n "), Err(ReadabilityError::EmptyText));
        let s = analyze_text("Hi. Hi. Hi.").unwrap();
        assert_eq!((s.sentences, s.words), (3, 3));
        assert_eq!(total_grade_level(""), Err(ReadabilityError::EmptyText));
    }

    #[test]
    fn index_formulas() {
        let s = stats(3, 1, 3, 9, 0);
        assert!((flesch_kincaid(&s).unwrap() - -2.62).abs() < 1e-9);
        assert!((gunning_fog(&s).unwrap() - 1.2).abs() < 1e-9);
        assert!((coleman_liau(&s).unwrap() - -8.026_666_666).abs() < 1e-6);
        let r = grade_report(s).unwrap();
        assert!((r.total_grade_level - -3.148_888_888).abs() < 1e-6);

        // words/sentences = 10, syllables/words = 1.5
        assert!((flesch_kincaid(&stats(20, 2, 30, 0, 0)).unwrap() - 6.01).abs() < 1e-9);
        // all words polysyllabic
        assert!((gunning_fog(&stats(20, 2, 60, 0, 20)).unwrap() - 44.0).abs() < 1e-9);
        // L = 500, S = 5
        assert!((coleman_liau(&stats(100, 5, 100, 500, 0)).unwrap() - 12.12).abs() < 1e-9);
    }

    #[test]
    fn degenerate_stats() {
        let zero_sent = stats(3, 0, 3, 9, 0);
        assert!(matches!(
            flesch_kincaid(&zero_sent),
            Err(ReadabilityError::DegenerateText { .. })
        ));
        let zero_words = TextStats::default();
        assert!(gunning_fog(&zero_words).is_err());
        assert!(coleman_liau(&zero_words).is_err());
        assert!(matches!(
            total_grade_level("Hello."),
            Err(ReadabilityError::DegenerateText { words: 1, .. })
        ));
        assert!(total_grade_level("!!! ???").is_err());
    }

    #[test]
    fn syllable_rules() {
        let cases = [
            ("the", 1),
            ("cat", 1),
            ("make", 1),
            ("makes", 1),
            ("table", 2),
            ("jumped", 1),
            ("wanted", 2),
            ("played", 1),
            ("boxes", 2),
            ("free", 1),
            ("yes", 1),
            ("rhythm", 1),
            ("probability", 5),
            ("determine", 3),
            ("well-known", 2),
            ("x2", 1),
            ("2024", 1),
        ];
        for (w, n) in cases {
            assert_eq!(word_syllables(w), n, "{w}");
        }
    }

    #[test]
    fn decimals_and_abbreviations_do_not_split() {
        let s = analyze_text("The value is 3.14 here. Dr. Rao said so, e.g. twice.").unwrap();
        assert_eq!(s.sentences, 2);
        assert_eq!(s.words, 11);
    }

    #[test]
    fn math_is_opaque() {
        let s = analyze_text("We solve $x^2 + 1 = 0$ now.").unwrap();
        assert_eq!(s.words, 4);
        assert_eq!(s.sentences, 1);
        // x, 2, 1, 0 inside the math span
        assert_eq!(s.letters, 2 + 5 + 4 + 3);
        let s = analyze_text("Use \\frac{a}{b} and $$\\int_0^1 f$$ twice.").unwrap();
        assert_eq!(s.words, 5);
    }

    #[test]
    fn markdown_blocks() {
        let md = "# Step one\n\nFirst we add the terms.\n\n- a list item\n- another item\n\n**Bold** ends here.";
        let s = analyze_text(md).unwrap();
        assert_eq!(s.sentences, 5);
        let plain = analyze_text(
            "Step one. First we add the terms. A list item. Another item. Bold ends here.",
        )
        .unwrap();
        assert_eq!(s.words, plain.words);
        assert_eq!(s.letters, plain.letters);
    }

    #[test]
    fn trailing_fragment_counts() {
        let s = analyze_text("No terminator here").unwrap();
        assert_eq!(s.sentences, 1);
        let s = analyze_text("Really?! Yes... ok").unwrap();
        assert_eq!(s.sentences, 3);
    }

    #[test]
    fn concatenation_is_linear() {
        let para =
            "Consider the probability of rolling two dice. The outcome depends on both faces.";
        let one = total_grade_level(para).unwrap();
        let three = total_grade_level(&format!("{para}\n\n{para}\n\n{para}")).unwrap();
        assert!((one - three).abs() < 1e-9);
    }
}
