//! Text preprocessing.
//!
//! Two variants: [`preprocess_classical`] cleans and tokenizes aggressively for
//! the sparse (TF-IDF / count) models, [`preprocess_minimal`] only normalizes
//! mentions, URLs and emoji before text is sent to an embedding provider.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

const STOPWORDS: &str = include_str!("../assets/stopwords.txt");
const HASHTAG_BLOCKLIST: &str = include_str!("../assets/hashtag_blocklist.txt");
const EMOJI_NAMES: &str = include_str!("../assets/emoji_names.tsv");

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S+").unwrap())
}

fn mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"@\w+").unwrap())
}

fn hashtag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"#(\w+)").unwrap())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub source_id: String,
}

impl TokenSequence {
    /// True when preprocessing removed everything.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Word lists used by the classical pipeline.
#[derive(Debug, Clone)]
pub struct TextAssets {
    pub stopwords: HashSet<String>,
    /// Lowercase hashtags including the leading `#`.
    pub hashtag_blocklist: HashSet<String>,
}

fn word_list(src: &str) -> HashSet<String> {
    src.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with("//")).map(str::to_lowercase).collect()
}

impl Default for TextAssets {
    fn default() -> Self {
        TextAssets { stopwords: word_list(STOPWORDS), hashtag_blocklist: word_list(HASHTAG_BLOCKLIST) }
    }
}

impl TextAssets {
    pub fn new<S: AsRef<str>>(stopwords: &[S], hashtag_blocklist: &[S]) -> Self {
        TextAssets {
            stopwords: stopwords.iter().map(|s| s.as_ref().to_lowercase()).collect(),
            hashtag_blocklist: hashtag_blocklist.iter().map(|s| s.as_ref().to_lowercase()).collect(),
        }
    }

    pub fn from_lists(stopwords: &str, hashtag_blocklist: &str) -> Self {
        TextAssets { stopwords: word_list(stopwords), hashtag_blocklist: word_list(hashtag_blocklist) }
    }
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Cleans and tokenizes `text` for sparse models.
///
/// URLs, mentions, blocklisted hashtags, punctuation, control characters,
/// standalone numbers and stopwords are removed; remaining hashtags lose
/// their `#`; tokens are lowercased.
pub fn preprocess_classical(text: &str, assets: &TextAssets) -> Vec<String> {
    let text = url_re().replace_all(text, " ");
    let text = mention_re().replace_all(&text, " ");
    let text = hashtag_re().replace_all(&text, |caps: &regex::Captures<'_>| {
        let tag = caps[0].to_lowercase();
        if assets.hashtag_blocklist.contains(&tag) {
            " ".to_string()
        } else {
            format!(" {} ", &caps[1])
        }
    });

    let mut tokens = Vec::new();
    for piece in text.split(|c: char| !(c.is_alphanumeric() || is_apostrophe(c))) {
        let lower = piece.to_lowercase();
        if lower.is_empty() || assets.stopwords.contains(&lower) {
            continue;
        }
        let bare: String = lower.chars().filter(|c| !is_apostrophe(*c)).collect();
        if bare.is_empty()
            || assets.stopwords.contains(&bare)
            || bare.chars().all(|c| c.is_numeric())
            || bare.contains("http")
        {
            continue;
        }
        tokens.push(bare);
    }
    tokens
}

pub fn tokenize_report(id: &str, text: &str, assets: &TextAssets) -> TokenSequence {
    TokenSequence { tokens: preprocess_classical(text, assets), source_id: id.to_string() }
}

/// Emoji code-point sequence to `:name:` lookup.
#[derive(Debug)]
pub struct EmojiTable {
    names: HashMap<String, String>,
    max_len: usize,
}

impl EmojiTable {
    /// Parses `codepoints<TAB>name` lines; `#` starts a comment line.
    pub fn parse(src: &str) -> Self {
        let mut names = HashMap::new();
        let mut max_len = 0;
        for line in src.lines() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let Some((cps, name)) = line.split_once('\t') else {
                continue;
            };
            let seq: Option<String> =
                cps.split_whitespace().map(|h| u32::from_str_radix(h, 16).ok().and_then(char::from_u32)).collect();
            if let Some(seq) = seq {
                max_len = max_len.max(seq.chars().count());
                names.insert(seq, name.trim().to_string());
            }
        }
        EmojiTable { names, max_len }
    }

    pub fn builtin() -> &'static EmojiTable {
        static TABLE: OnceLock<EmojiTable> = OnceLock::new();
        TABLE.get_or_init(|| EmojiTable::parse(EMOJI_NAMES))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Replaces every emoji sequence with its name, longest match first.
    pub fn demojize(&self, text: &str) -> String {
        let chars: Vec<char> = text.chars().collect();
        let mut out = String::with_capacity(text.len());
        let mut i = 0;
        let mut buf = String::new();
        while i < chars.len() {
            let mut matched = 0;
            if !chars[i].is_ascii() || chars.get(i + 1).is_some_and(|c| !c.is_ascii()) {
                let longest = self.max_len.min(chars.len() - i);
                for len in (1..=longest).rev() {
                    buf.clear();
                    buf.extend(&chars[i..i + len]);
                    if let Some(name) = self.names.get(&buf) {
                        out.push_str(name);
                        matched = len;
                        break;
                    }
                }
            }
            if matched == 0 {
                out.push(chars[i]);
                i += 1;
            } else {
                i += matched;
                // a dangling variation selector belongs to the emoji just replaced
                if chars.get(i) == Some(&'\u{FE0F}') {
                    i += 1;
                }
            }
        }
        out
    }
}

/// Mentions become `USR`, URLs `HTTP`, emoji their `:name:`; nothing else changes.
pub fn preprocess_minimal(text: &str) -> String {
    let t = url_re().replace_all(text, "HTTP");
    let t = mention_re().replace_all(&t, "USR");
    EmojiTable::builtin().demojize(&t)
}
