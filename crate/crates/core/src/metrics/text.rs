//! Tokenization and the v1 transcript normalizer.

use std::sync::LazyLock;

use regex::Regex;

fn is_edge_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

/// Word tokens, lowercased: split on whitespace, peel leading and trailing
/// punctuation, drop pieces that were punctuation only.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(is_edge_punct))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

const ONES: [&str; 20] = [
    "zero",
    "one",
    "two",
    "three",
    "four",
    "five",
    "six",
    "seven",
    "eight",
    "nine",
    "ten",
    "eleven",
    "twelve",
    "thirteen",
    "fourteen",
    "fifteen",
    "sixteen",
    "seventeen",
    "eighteen",
    "nineteen",
];
const TENS: [&str; 10] = [
    "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];
const SCALES: [(u64, &str); 6] = [
    (1_000_000_000_000_000_000, "quintillion"),
    (1_000_000_000_000_000, "quadrillion"),
    (1_000_000_000_000, "trillion"),
    (1_000_000_000, "billion"),
    (1_000_000, "million"),
    (1_000, "thousand"),
];

fn below_thousand(n: u64, out: &mut Vec<&'static str>) {
    debug_assert!(n < 1000);
    if n >= 100 {
        out.push(ONES[(n / 100) as usize]);
        out.push("hundred");
    }
    let rest = n % 100;
    if rest == 0 {
        return;
    }
    if rest < 20 {
        out.push(ONES[rest as usize]);
    } else {
        out.push(TENS[(rest / 10) as usize]);
        if !rest.is_multiple_of(10) {
            out.push(ONES[(rest % 10) as usize]);
        }
    }
}

/// Cardinal number in words, space separated ("one hundred five").
pub fn number_to_words(n: u64) -> String {
    if n == 0 {
        return "zero".into();
    }
    let mut words = Vec::new();
    let mut rest = n;
    for (value, name) in SCALES {
        if rest >= value {
            below_thousand(rest / value, &mut words);
            words.push(name);
            rest %= value;
        }
    }
    below_thousand(rest, &mut words);
    words.join(" ")
}

static GROUPED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d{1,3}(?:,\d{3})+").expect("regex"));
static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+(?:\.\d+)?").expect("regex"));

fn spell_number(lit: &str) -> String {
    let (int, frac) = lit.split_once('.').unwrap_or((lit, ""));
    let mut out = match int.parse::<u64>() {
        Ok(n) => number_to_words(n),
        Err(_) => int
            .chars()
            .map(|c| ONES[c.to_digit(10).unwrap_or(0) as usize])
            .collect::<Vec<_>>()
            .join(" "),
    };
    if !frac.is_empty() {
        out.push_str(" point");
        for c in frac.chars() {
            out.push(' ');
            out.push_str(ONES[c.to_digit(10).unwrap_or(0) as usize]);
        }
    }
    format!(" {out} ")
}

/// Normalizer v1: lowercase, digits to words, punctuation removed (word
/// internal apostrophes kept), whitespace collapsed. Filled pauses stay.
pub fn normalize_v1(text: &str) -> String {
    let ungrouped = GROUPED.replace_all(text, |c: &regex::Captures<'_>| c[0].replace(',', ""));
    let spelled = NUMBER.replace_all(&ungrouped, |c: &regex::Captures<'_>| spell_number(&c[0]));
    let lowered = spelled.to_lowercase();
    let cleaned: String = lowered
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '\'' || c == '\u{2019}' {
                c
            } else {
                ' '
            }
        })
        .map(|c| if c == '\u{2019}' { '\'' } else { c })
        .collect();
    cleaned
        .split_whitespace()
        .map(|w| w.trim_matches('\''))
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}
