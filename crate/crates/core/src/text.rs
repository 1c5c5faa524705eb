//! Post-text normalization and raw-text statistics.
//!
//! The pipeline is emoticons → elongation → COVID-term unification → word
//! segmentation. Misspelled forms are deliberately left alone.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Stdio};

use unicode_segmentation::UnicodeSegmentation;

use crate::error::{Error, Result};

/// Default Vietnamese sentiment words.
pub const HAPPY_WORD: &str = "vui";
pub const SAD_WORD: &str = "buồn";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sentiment {
    Happy,
    Sad,
}

const DEFAULT_HAPPY: &[&str] = &[
    ":)", ":-)", ":))", ":)))", ";)", ";-)", "=)", "=))", "=]", "=]]", ":]", ":D", ":-D", "xD",
    "XD", ":P", ":p", "^^", "^_^", ":3", "<3",
];
const DEFAULT_SAD: &[&str] = &[
    ":(", ":-(", ":((", ":'(", "=(", "=((", "=[", "=[[", ":[", "T_T", ":<", "-_-", ">.<",
];

/// Emoticon lexicon with the words that replace each sentiment class.
#[derive(Debug, Clone)]
pub struct EmoticonMap {
    // Sorted longest first so the scan can take the first hit.
    entries: Vec<(String, Sentiment)>,
    happy: String,
    sad: String,
}

impl Default for EmoticonMap {
    fn default() -> Self {
        let entries = DEFAULT_HAPPY
            .iter()
            .map(|e| (e.to_string(), Sentiment::Happy))
            .chain(DEFAULT_SAD.iter().map(|e| (e.to_string(), Sentiment::Sad)));
        EmoticonMap::new(entries, HAPPY_WORD, SAD_WORD).expect("built-in lexicon is valid")
    }
}

impl EmoticonMap {
    pub fn new(
        entries: impl IntoIterator<Item = (String, Sentiment)>,
        happy: impl Into<String>,
        sad: impl Into<String>,
    ) -> Result<Self> {
        let happy = happy.into();
        let sad = sad.into();
        let mut entries: Vec<_> = entries.into_iter().collect();
        for (key, _) in &entries {
            if key.is_empty() || key.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid emoticon `{key}`")));
            }
            if happy.contains(key.as_str()) || sad.contains(key.as_str()) {
                return Err(Error::Config(format!(
                    "sentiment word contains emoticon `{key}`"
                )));
            }
        }
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        entries.dedup_by(|a, b| a.0 == b.0);
        Ok(EmoticonMap { entries, happy, sad })
    }

    pub fn empty() -> Self {
        EmoticonMap {
            entries: Vec::new(),
            happy: HAPPY_WORD.into(),
            sad: SAD_WORD.into(),
        }
    }

    /// Same lexicon, different replacement words.
    pub fn with_words(&self, happy: &str, sad: &str) -> Result<Self> {
        EmoticonMap::new(self.entries.iter().cloned(), happy, sad)
    }

    /// Reads `emoticon<TAB>happy|sad` lines. Blank lines are skipped.
    pub fn from_file(path: &Path, happy: &str, sad: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (key, label) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(path, format!("line {}: expected a tab", n + 1)))?;
            let sentiment = match label.trim() {
                "happy" => Sentiment::Happy,
                "sad" => Sentiment::Sad,
                other => {
                    return Err(Error::format(
                        path,
                        format!("line {}: unknown label `{other}`", n + 1),
                    ))
                }
            };
            entries.push((key.to_string(), sentiment));
        }
        EmoticonMap::new(entries, happy, sad)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn word(&self, s: Sentiment) -> &str {
        match s {
            Sentiment::Happy => &self.happy,
            Sentiment::Sad => &self.sad,
        }
    }

    fn match_at(&self, text: &str, at: usize) -> Option<(&str, Sentiment)> {
        let rest = &text[at..];
        let prev = text[..at].chars().next_back();
        self.entries.iter().find_map(|(key, s)| {
            if !rest.starts_with(key.as_str()) {
                return None;
            }
            // An emoticon that begins or ends with a letter or digit must not
            // run into a neighbouring word (":D" inside "Note:Download").
            let first = key.chars().next().unwrap();
            let last = key.chars().next_back().unwrap();
            let next = rest[key.len()..].chars().next();
            if first.is_alphanumeric() && prev.is_some_and(char::is_alphanumeric) {
                return None;
            }
            if last.is_alphanumeric() && next.is_some_and(char::is_alphanumeric) {
                return None;
            }
            Some((key.as_str(), *s))
        })
    }
}

/// Replaces each emoticon by its sentiment word, longest match first.
/// The word is separated from adjacent non-space text by single spaces.
pub fn normalize_emoticons(text: &str, map: &EmoticonMap) -> String {
    if map.is_empty() {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < text.len() {
        if let Some((key, s)) = map.match_at(text, i) {
            if out.chars().next_back().is_some_and(|c| !c.is_whitespace()) {
                out.push(' ');
            }
            out.push_str(map.word(s));
            i += key.len();
            if text[i..].chars().next().is_some_and(|c| !c.is_whitespace()) {
                out.push(' ');
            }
        } else {
            let c = text[i..].chars().next().unwrap();
            out.push(c);
            i += c.len_utf8();
        }
    }
    out
}

/// Shortens every run of more than `max_run` identical grapheme clusters to
/// exactly `max_run`.
pub fn compress_elongation(text: &str, max_run: usize) -> String {
    let max_run = max_run.max(1);
    let mut out = String::with_capacity(text.len());
    let mut prev: Option<&str> = None;
    let mut run = 0;
    for g in text.graphemes(true) {
        if prev == Some(g) {
            run += 1;
        } else {
            prev = Some(g);
            run = 1;
        }
        if run <= max_run {
            out.push_str(g);
        }
    }
    out
}

/// Spelling variants of one canonical term, matched case-insensitively on
/// whole alphanumeric tokens.
#[derive(Debug, Clone)]
pub struct TermUnifier {
    canonical: String,
    variants: HashSet<String>,
}

impl Default for TermUnifier {
    fn default() -> Self {
        TermUnifier::new("covid", ["covid", "ncov", "convid", "covid19", "coronavirus"])
            .expect("built-in variants are valid")
    }
}

impl TermUnifier {
    pub fn new<S: AsRef<str>>(
        canonical: &str,
        variants: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let variants: HashSet<String> = variants
            .into_iter()
            .map(|v| v.as_ref().to_lowercase())
            .collect();
        if !variants.contains(&canonical.to_lowercase()) {
            return Err(Error::Config(format!(
                "canonical term `{canonical}` must be one of its variants"
            )));
        }
        if variants.iter().any(|v| v.is_empty() || !v.chars().all(char::is_alphanumeric)) {
            return Err(Error::Config("term variants must be alphanumeric words".into()));
        }
        Ok(TermUnifier {
            canonical: canonical.to_string(),
            variants,
        })
    }

    pub fn apply(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        let mut token_start: Option<usize> = None;
        let flush = |out: &mut String, token: &str| {
            if self.variants.contains(&token.to_lowercase()) {
                out.push_str(&self.canonical);
            } else {
                out.push_str(token);
            }
        };
        for (i, c) in text.char_indices() {
            if c.is_alphanumeric() {
                token_start.get_or_insert(i);
            } else {
                if let Some(s) = token_start.take() {
                    flush(&mut out, &text[s..i]);
                }
                out.push(c);
            }
        }
        if let Some(s) = token_start {
            flush(&mut out, &text[s..]);
        }
        out
    }
}

/// Replaces COVID-19 spelling variants with `covid`.
pub fn unify_covid_terms(text: &str, unifier: &TermUnifier) -> String {
    unifier.apply(text)
}

/// Word segmentation: text in, tokens joined by a separator out.
pub trait Segmenter: Send + Sync {
    fn segment(&self, text: &str) -> std::result::Result<String, String>;

    fn segment_batch(&self, texts: &[&str]) -> std::result::Result<Vec<String>, (usize, String)> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| self.segment(t).map_err(|e| (i, e)))
            .collect()
    }
}

/// Splits on Unicode whitespace and joins with single spaces.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceSegmenter;

impl Segmenter for WhitespaceSegmenter {
    fn segment(&self, text: &str) -> std::result::Result<String, String> {
        Ok(text.split_whitespace().collect::<Vec<_>>().join(" "))
    }
}

/// Runs an external segmenter speaking a line-in/line-out protocol: one input
/// line per text on stdin, one segmented line per text on stdout. Line breaks
/// inside a text are sent as spaces.
#[derive(Debug, Clone)]
pub struct CommandSegmenter {
    program: String,
    args: Vec<String>,
}

impl CommandSegmenter {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        CommandSegmenter {
            program: program.into(),
            args,
        }
    }

    /// Parses a whitespace-separated command line (no shell quoting).
    pub fn from_command_line(line: &str) -> Option<Self> {
        let mut parts = line.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        Some(CommandSegmenter::new(program, parts.collect()))
    }
}

impl Segmenter for CommandSegmenter {
    fn segment(&self, text: &str) -> std::result::Result<String, String> {
        self.segment_batch(&[text])
            .map(|mut v| v.remove(0))
            .map_err(|(_, e)| e)
    }

    fn segment_batch(&self, texts: &[&str]) -> std::result::Result<Vec<String>, (usize, String)> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| (0, format!("cannot start `{}`: {e}", self.program)))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let payload: String = texts
            .iter()
            .map(|t| t.replace(['\r', '\n'], " ") + "\n")
            .collect();
        let writer = std::thread::spawn(move || stdin.write_all(payload.as_bytes()));
        let stdout = child.stdout.take().expect("piped stdout");
        let mut lines = Vec::with_capacity(texts.len());
        for line in BufReader::new(stdout).lines() {
            lines.push(line.map_err(|e| (lines.len(), e.to_string()))?);
        }
        let _ = writer.join();
        let status = child.wait().map_err(|e| (0, e.to_string()))?;
        if !status.success() {
            return Err((lines.len().min(texts.len().saturating_sub(1)), format!("segmenter exited with {status}")));
        }
        if lines.len() != texts.len() {
            return Err((
                lines.len().min(texts.len().saturating_sub(1)),
                format!("expected {} lines, got {}", texts.len(), lines.len()),
            ));
        }
        Ok(lines)
    }
}

/// The full normalization pipeline.
pub struct Preprocessor {
    pub emoticons: EmoticonMap,
    pub max_run: usize,
    pub terms: TermUnifier,
    pub segmenter: Box<dyn Segmenter>,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Preprocessor {
            emoticons: EmoticonMap::default(),
            max_run: 2,
            terms: TermUnifier::default(),
            segmenter: Box::new(WhitespaceSegmenter),
        }
    }
}

impl Preprocessor {
    fn normalize(&self, text: &str) -> String {
        let text = normalize_emoticons(text, &self.emoticons);
        let text = compress_elongation(&text, self.max_run);
        unify_covid_terms(&text, &self.terms)
    }

    pub fn preprocess(&self, id: &str, text: &str) -> Result<String> {
        self.segmenter
            .segment(&self.normalize(text))
            .map_err(|message| Error::Segmenter {
                id: id.to_string(),
                message,
            })
    }

    /// Preprocesses `(id, text)` pairs, handing the segmenter one batch.
    pub fn preprocess_batch(&self, items: &[(&str, &str)]) -> Result<Vec<String>> {
        let normalized: Vec<String> = items.iter().map(|(_, t)| self.normalize(t)).collect();
        let refs: Vec<&str> = normalized.iter().map(String::as_str).collect();
        self.segmenter
            .segment_batch(&refs)
            .map_err(|(i, message)| Error::Segmenter {
                id: items.get(i).map(|(id, _)| id.to_string()).unwrap_or_default(),
                message,
            })
    }
}

/// Counts taken from the raw post text.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd)]
pub struct TextStats {
    pub n_hashtags: usize,
    pub n_urls: usize,
    pub n_chars: usize,
    pub n_words: usize,
    pub n_question_marks: usize,
    pub n_exclaim_marks: usize,
}

impl TextStats {
    pub fn as_array(&self) -> [usize; 6] {
        [
            self.n_hashtags,
            self.n_urls,
            self.n_chars,
            self.n_words,
            self.n_question_marks,
            self.n_exclaim_marks,
        ]
    }
}

fn is_url(token: &str) -> bool {
    let lower = token.to_lowercase();
    ["http://", "https://", "www."]
        .iter()
        .any(|p| lower.starts_with(p))
}

/// Statistics of the unnormalized text. Characters are grapheme clusters and
/// words are whitespace-delimited tokens.
pub fn text_statistics(raw_text: &str) -> TextStats {
    let mut stats = TextStats {
        n_chars: raw_text.graphemes(true).count(),
        ..TextStats::default()
    };
    for token in raw_text.split_whitespace() {
        stats.n_words += 1;
        if token.starts_with('#') {
            stats.n_hashtags += 1;
        }
        if is_url(token) {
            stats.n_urls += 1;
        }
    }
    for c in raw_text.chars() {
        match c {
            '?' => stats.n_question_marks += 1,
            '!' => stats.n_exclaim_marks += 1,
            _ => {}
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ascii_map() -> EmoticonMap {
        EmoticonMap::default().with_words("HAPPY", "SAD").unwrap()
    }

    fn ascii_pre() -> Preprocessor {
        Preprocessor {
            emoticons: ascii_map(),
            ..Preprocessor::default()
        }
    }

    #[test]
    fn emoticons() {
        let m = ascii_map();
        assert_eq!(normalize_emoticons("hay qua :)", &m), "hay qua HAPPY");
        assert_eq!(normalize_emoticons("", &m), "");
        assert_eq!(normalize_emoticons("=]] :(", &m), "HAPPY SAD");
        assert_eq!(normalize_emoticons("ok:)", &m), "ok HAPPY");
        assert_eq!(normalize_emoticons("Note:Download", &m), "Note:Download");
        assert_eq!(normalize_emoticons("x =[ y", &m), "x SAD y");
        assert_eq!(normalize_emoticons("a\n:)\nb", &m), "a\nHAPPY\nb");
    }

    #[test]
    fn lexicon_rejects_words_that_contain_keys() {
        let entries = vec![(":)".to_string(), Sentiment::Happy), ("ad".to_string(), Sentiment::Sad)];
        assert!(EmoticonMap::new(entries.clone(), "glad", "sad").is_err());
        assert!(EmoticonMap::new(vec![(String::new(), Sentiment::Sad)], "h", "s").is_err());
        assert!(EmoticonMap::new(entries[..1].to_vec(), "glad", "sad").is_ok());
    }

    #[test]
    fn lexicon_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emo.tsv");
        std::fs::write(&path, ":)\thappy\n\n:(\tsad\n").unwrap();
        let m = EmoticonMap::from_file(&path, "H", "S").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(normalize_emoticons(":( :)", &m), "S H");
        std::fs::write(&path, ":)\tjoy\n").unwrap();
        assert!(EmoticonMap::from_file(&path, "H", "S").is_err());
    }

    #[test]
    fn elongation() {
        assert_eq!(compress_elongation("Coooool", 2), "Cool");
        assert_eq!(compress_elongation("*****", 2), "**");
        assert_eq!(compress_elongation("Cool", 2), "Cool");
        assert_eq!(compress_elongation("đẹpppp quáaaa", 2), "đẹpp quáaa");
        assert_eq!(compress_elongation("aaa", 1), "a");
        // Combining sequences count as one unit.
        assert_eq!(compress_elongation("a\u{301}a\u{301}a\u{301}", 2), "a\u{301}a\u{301}");
    }

    #[test]
    fn covid_terms() {
        let u = TermUnifier::default();
        assert_eq!(unify_covid_terms("dich ncov lan rong", &u), "dich covid lan rong");
        assert_eq!(unify_covid_terms("NCoV", &u), "covid");
        assert_eq!(unify_covid_terms("covidien", &u), "covidien");
        assert_eq!(unify_covid_terms("Convid-19!", &u), "covid-19!");
        assert!(TermUnifier::new("covid", ["ncov"]).is_err());
    }

    #[test]
    fn pipeline() {
        let p = ascii_pre();
        assert_eq!(p.preprocess("a", "Coooool :)").unwrap(), "Cool HAPPY");
        let once = p.preprocess("a", "Tin   nóng!!!! nCoV :(( s.áthại").unwrap();
        assert_eq!(once, "Tin nóng!! covid SAD s.áthại");
        assert_eq!(p.preprocess("a", &once).unwrap(), once);
    }

    #[test]
    fn default_words_are_vietnamese() {
        let p = Preprocessor::default();
        assert_eq!(p.preprocess("x", ":) :(").unwrap(), "vui buồn");
    }

    struct Failing;
    impl Segmenter for Failing {
        fn segment(&self, _: &str) -> std::result::Result<String, String> {
            Err("boom".into())
        }
    }

    #[test]
    fn segmenter_failure_names_the_post() {
        let p = Preprocessor {
            segmenter: Box::new(Failing),
            ..Preprocessor::default()
        };
        match p.preprocess("post-9", "x") {
            Err(Error::Segmenter { id, .. }) => assert_eq!(id, "post-9"),
            other => panic!("unexpected {other:?}"),
        }
        match p.preprocess_batch(&[("a", "x"), ("b", "y")]) {
            Err(Error::Segmenter { id, .. }) => assert_eq!(id, "a"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[cfg(unix)]
    #[test]
    fn command_segmenter_round_trips_lines() {
        let seg = CommandSegmenter::from_command_line("cat").unwrap();
        let out = seg.segment_batch(&["một hai", "ba\nbốn"]).unwrap();
        assert_eq!(out, vec!["một hai".to_string(), "ba bốn".to_string()]);
        let missing = CommandSegmenter::new("/nonexistent/segmenter", vec![]);
        assert!(missing.segment("x").is_err());
    }

    #[test]
    fn statistics() {
        assert_eq!(text_statistics(""), TextStats::default());
        let s = text_statistics("tin #hot xem http://a.b ngay!!");
        assert_eq!(
            s,
            TextStats {
                n_hashtags: 1,
                n_urls: 1,
                n_chars: 30,
                n_words: 5,
                n_question_marks: 0,
                n_exclaim_marks: 2,
            }
        );
        let q = text_statistics("???");
        assert_eq!((q.n_question_marks, q.n_words, q.n_chars), (3, 1, 3));
        assert_eq!(text_statistics("Xem WWW.x.vn và https://y").n_urls, 2);
        assert_eq!(text_statistics("việt").n_chars, 4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn noisy_text() -> impl Strategy<Value = String> {
            let pieces = prop::sample::select(vec![
                "a", "o", "C", "ồ", "ạ", " ", "  ", "\n", ":", ")", "(", "=", "]", "[", ";", "-", "D",
                "x", "!", "?", "#", "*", "ncov", "NCOV", "covid", "convid", "http://", "s.áthại", "^",
                "_", "T", "<", "3", "'", "e\u{301}",
            ]);
            prop::collection::vec(pieces, 0..40).prop_map(|v| v.concat())
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(256))]

            #[test]
            fn elongation_is_idempotent(s in noisy_text(), k in 1usize..4) {
                let once = compress_elongation(&s, k);
                prop_assert_eq!(compress_elongation(&once, k), once);
            }

            #[test]
            fn preprocess_is_idempotent(s in noisy_text()) {
                let p = ascii_pre();
                let once = p.preprocess("p", &s).unwrap();
                prop_assert_eq!(p.preprocess("p", &once).unwrap(), once);
            }

            #[test]
            fn empty_lexicon_is_identity(s in ".*") {
                prop_assert_eq!(normalize_emoticons(&s, &EmoticonMap::empty()), s);
            }

            #[test]
            fn stats_grow_under_concatenation(a in noisy_text(), b in noisy_text()) {
                let sa = text_statistics(&a).as_array();
                let sab = text_statistics(&format!("{a} {b}")).as_array();
                for (x, y) in sa.iter().zip(&sab) {
                    prop_assert!(y >= x);
                }
            }
        }
    }
}
