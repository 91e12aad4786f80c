//! Corpus pipeline: parse raw day-per-file chat logs, detect explicit
//! addressee mentions, create selection samples, and manage the
//! vocabulary with frozen word vectors.
//!
//! Raw log format, one file per document:
//!
//! ```text
//! <time>\t<sender>\t<utterance>\n
//! ```

mod vocab;

pub use vocab::Vocab;

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Utterances are cut to this many tokens.
pub const MAX_UTTERANCE_TOKENS: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("empty document")]
    EmptyDocument,
    #[error("input is not valid UTF-8: {0}")]
    NotUtf8(#[from] std::str::Utf8Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    BadRecord { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

/// One raw chat line. `time` is an integer index within the document;
/// `addressee` stays `None` until mention detection runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogLine {
    pub time: i64,
    pub sender: String,
    pub addressee: Option<String>,
    pub text: String,
}

/// A parse problem that did not abort the document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    /// 1-based line number in the source file.
    pub line: usize,
    pub reason: String,
}

/// Parse one document. Malformed lines are skipped and reported with
/// their line numbers; an input with no valid lines at all is an error.
pub fn parse_document(text: &str) -> Result<(Vec<LogLine>, Vec<ParseWarning>), CorpusError> {
    let mut lines = Vec::new();
    let mut warnings = Vec::new();
    let mut last_time: Option<i64> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if raw.is_empty() {
            continue;
        }
        let mut parts = raw.splitn(3, '\t');
        let (time_s, sender, utterance) = match (parts.next(), parts.next(), parts.next()) {
            (Some(t), Some(s), Some(u)) => (t, s, u),
            _ => {
                warnings.push(ParseWarning {
                    line: line_no,
                    reason: "expected 3 tab-separated fields (time, sender, utterance)".into(),
                });
                continue;
            }
        };
        let time: i64 = match time_s.trim().parse() {
            Ok(t) => t,
            Err(_) => {
                warnings.push(ParseWarning {
                    line: line_no,
                    reason: format!("time field '{time_s}' is not an integer"),
                });
                continue;
            }
        };
        if sender.is_empty() {
            warnings.push(ParseWarning {
                line: line_no,
                reason: "empty sender".into(),
            });
            continue;
        }
        if let Some(prev) = last_time {
            if time < prev {
                warnings.push(ParseWarning {
                    line: line_no,
                    reason: format!("time {time} goes backwards (previous {prev})"),
                });
            }
        }
        last_time = Some(time);
        lines.push(LogLine {
            time,
            sender: sender.to_string(),
            addressee: None,
            text: utterance.to_string(),
        });
    }
    if lines.is_empty() {
        return Err(CorpusError::EmptyDocument);
    }
    Ok((lines, warnings))
}

/// Parse raw bytes, rejecting non-UTF-8 input.
pub fn parse_document_bytes(bytes: &[u8]) -> Result<(Vec<LogLine>, Vec<ParseWarning>), CorpusError> {
    let text = std::str::from_utf8(bytes)?;
    parse_document(text)
}

/// Lowercase, split on whitespace, keep the first
/// [`MAX_UTTERANCE_TOKENS`] tokens.
pub fn tokenize_truncate(text: &str) -> Vec<String> {
    text.split_whitespace()
        .take(MAX_UTTERANCE_TOKENS)
        .map(|t| t.to_lowercase())
        .collect()
}

/// If the first whitespace token of the utterance, after stripping one
/// trailing ':' or ',', case-insensitively equals a known speaker other
/// than the sender, that speaker is the explicit addressee.
///
/// `known_speakers` is the list of senders seen so far in the document,
/// in first-seen order.
pub fn detect_addressee(line: &LogLine, known_speakers: &[String]) -> Option<String> {
    let first = line.text.split_whitespace().next()?;
    let stripped = first
        .strip_suffix(':')
        .or_else(|| first.strip_suffix(','))
        .unwrap_or(first);
    if stripped.is_empty() {
        return None;
    }
    let lower = stripped.to_lowercase();
    known_speakers
        .iter()
        .find(|s| s.to_lowercase() == lower && !s.eq_ignore_ascii_case(&line.sender))
        .cloned()
}

/// Drop the first whitespace token (the detected mention) from an
/// utterance. The mention would otherwise leak the addressee label
/// into the response text.
fn strip_mention(text: &str) -> &str {
    match text.split_whitespace().next() {
        Some(first) => {
            let start = text.find(first).unwrap_or(0) + first.len();
            text[start..].trim_start()
        }
        None => text,
    }
}

/// One context turn: who spoke, to whom (if marked), and the tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub sender: String,
    pub addressee: Option<String>,
    pub tokens: Vec<String>,
}

/// Ordered context turns plus the set of speakers appearing in them
/// (as sender or addressee), in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogContext {
    pub turns: Vec<Turn>,
    pub speakers: Vec<String>,
}

impl DialogContext {
    pub fn from_turns(turns: Vec<Turn>) -> Self {
        let mut speakers: Vec<String> = Vec::new();
        for turn in &turns {
            if !speakers.contains(&turn.sender) {
                speakers.push(turn.sender.clone());
            }
            if let Some(adr) = &turn.addressee {
                if !speakers.contains(adr) {
                    speakers.push(adr.clone());
                }
            }
        }
        DialogContext { turns, speakers }
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn contains_speaker(&self, id: &str) -> bool {
        self.speakers.iter().any(|s| s == id)
    }
}

/// One task instance: context, responding speaker, candidate responses,
/// and the ground-truth addressee and response index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionSample {
    pub context: DialogContext,
    pub responding_speaker: String,
    pub candidates: Vec<Vec<String>>,
    pub truth_addressee: String,
    pub truth_response_index: usize,
    pub doc_id: String,
    pub time: i64,
}

impl SelectionSample {
    /// Check the sample invariants; returns a description of the first
    /// violation.
    pub fn validate(&self) -> Result<(), String> {
        if self.context.is_empty() {
            return Err("empty context".into());
        }
        if self.truth_addressee == self.responding_speaker {
            return Err("ground-truth addressee equals responding speaker".into());
        }
        if !self.context.contains_speaker(&self.truth_addressee) {
            return Err(format!(
                "ground-truth addressee '{}' not in context speakers",
                self.truth_addressee
            ));
        }
        if self.truth_response_index >= self.candidates.len() {
            return Err(format!(
                "truth index {} out of {} candidates",
                self.truth_response_index,
                self.candidates.len()
            ));
        }
        if self.candidates.len() < 2 {
            return Err("fewer than 2 candidates".into());
        }
        for turn in &self.context.turns {
            if !self.context.contains_speaker(&turn.sender) {
                return Err(format!("sender '{}' missing from speaker set", turn.sender));
            }
        }
        Ok(())
    }

    /// Candidate addressees: context speakers except the responding
    /// speaker, in first-appearance order.
    pub fn addressee_candidates(&self) -> Vec<&str> {
        self.context
            .speakers
            .iter()
            .filter(|s| **s != self.responding_speaker)
            .map(|s| s.as_str())
            .collect()
    }
}

/// Counters from one document's sample extraction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtractStats {
    pub lines: usize,
    pub mentions: usize,
    pub samples: usize,
    /// Mention found but the addressee never appears in the context window.
    pub dropped_addressee_outside_context: usize,
    /// Document too small to supply the required distinct negatives.
    pub dropped_too_few_negatives: usize,
}

/// Create selection samples from one document.
///
/// A sample is created for every line with an explicitly mentioned
/// addressee and at least one preceding line. The context is the up to
/// `t_max` immediately preceding lines; negatives are distinct other
/// utterances of the same document, sampled uniformly. Deterministic
/// given `rng_seed`.
pub fn extract_samples(
    doc: &[LogLine],
    doc_id: &str,
    t_max: usize,
    n_candidates: usize,
    rng_seed: u64,
) -> (Vec<SelectionSample>, ExtractStats) {
    assert!(n_candidates >= 2, "need at least 2 candidate responses");
    assert!(t_max >= 1, "context length must be at least 1");

    let mut stats = ExtractStats {
        lines: doc.len(),
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut samples = Vec::new();
    if doc.len() < 2 {
        return (samples, stats);
    }

    // Resolve mentions once, in document order.
    let mut senders_seen: Vec<String> = Vec::new();
    let mut resolved: Vec<(Option<String>, Vec<String>)> = Vec::with_capacity(doc.len());
    for line in doc {
        let detected = detect_addressee(line, &senders_seen);
        let tokens = match &detected {
            Some(_) => tokenize_truncate(strip_mention(&line.text)),
            None => tokenize_truncate(&line.text),
        };
        resolved.push((detected, tokens));
        if !senders_seen.contains(&line.sender) {
            senders_seen.push(line.sender.clone());
        }
    }

    for (i, line) in doc.iter().enumerate() {
        let (Some(addressee), truth_tokens) = &resolved[i] else {
            continue;
        };
        stats.mentions += 1;
        if i == 0 {
            continue;
        }

        let start = i.saturating_sub(t_max);
        let turns: Vec<Turn> = (start..i)
            .map(|j| Turn {
                sender: doc[j].sender.clone(),
                addressee: resolved[j].0.clone(),
                tokens: resolved[j].1.clone(),
            })
            .collect();
        let context = DialogContext::from_turns(turns);
        if !context.contains_speaker(addressee) {
            stats.dropped_addressee_outside_context += 1;
            continue;
        }

        let n_negatives = n_candidates - 1;
        if doc.len() - 1 < n_negatives {
            stats.dropped_too_few_negatives += 1;
            continue;
        }
        // Uniform distinct line indices, skipping the ground-truth line.
        let picks = rand::seq::index::sample(&mut rng, doc.len() - 1, n_negatives);
        let mut candidates: Vec<Vec<String>> = Vec::with_capacity(n_candidates);
        candidates.push(truth_tokens.clone());
        for p in picks.iter() {
            let j = if p >= i { p + 1 } else { p };
            candidates.push(resolved[j].1.clone());
        }
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.shuffle(&mut rng);
        let truth_response_index = order.iter().position(|&k| k == 0).expect("truth present");
        let candidates: Vec<Vec<String>> = order.iter().map(|&k| candidates[k].clone()).collect();

        let sample = SelectionSample {
            context,
            responding_speaker: line.sender.clone(),
            candidates,
            truth_addressee: addressee.clone(),
            truth_response_index,
            doc_id: doc_id.to_string(),
            time: line.time,
        };
        debug_assert!(sample.validate().is_ok(), "{:?}", sample.validate());
        stats.samples += 1;
        samples.push(sample);
    }
    (samples, stats)
}

// ── Prepared-sample JSONL ────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    context: Vec<(String, Option<String>, Vec<String>)>,
    responder: String,
    candidates: Vec<Vec<String>>,
    truth_addressee: String,
    truth_response_index: usize,
    doc_id: String,
    time: i64,
}

impl From<&SelectionSample> for SampleRecord {
    fn from(s: &SelectionSample) -> Self {
        SampleRecord {
            context: s
                .context
                .turns
                .iter()
                .map(|t| (t.sender.clone(), t.addressee.clone(), t.tokens.clone()))
                .collect(),
            responder: s.responding_speaker.clone(),
            candidates: s.candidates.clone(),
            truth_addressee: s.truth_addressee.clone(),
            truth_response_index: s.truth_response_index,
            doc_id: s.doc_id.clone(),
            time: s.time,
        }
    }
}

impl From<SampleRecord> for SelectionSample {
    fn from(r: SampleRecord) -> Self {
        let turns = r
            .context
            .into_iter()
            .map(|(sender, addressee, tokens)| Turn {
                sender,
                addressee,
                tokens,
            })
            .collect();
        SelectionSample {
            context: DialogContext::from_turns(turns),
            responding_speaker: r.responder,
            candidates: r.candidates,
            truth_addressee: r.truth_addressee,
            truth_response_index: r.truth_response_index,
            doc_id: r.doc_id,
            time: r.time,
        }
    }
}

/// Write samples as one JSON object per line.
pub fn write_samples_jsonl(samples: &[SelectionSample], w: &mut impl Write) -> Result<(), CorpusError> {
    for s in samples {
        let rec = SampleRecord::from(s);
        serde_json::to_writer(&mut *w, &rec).map_err(|e| CorpusError::Invalid(e.to_string()))?;
        writeln!(w)?;
    }
    Ok(())
}

/// Read samples written by [`write_samples_jsonl`].
pub fn read_samples_jsonl(r: impl BufRead) -> Result<Vec<SelectionSample>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| CorpusError::BadRecord {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        let sample = SelectionSample::from(rec);
        sample
            .validate()
            .map_err(|msg| CorpusError::BadRecord { line: idx + 1, msg })?;
        out.push(sample);
    }
    Ok(out)
}

/// Collect every distinct token appearing in samples (context turns and
/// candidates), for vocabulary restriction.
pub fn collect_tokens(samples: &[SelectionSample]) -> HashSet<String> {
    let mut set = HashSet::new();
    for s in samples {
        for t in &s.context.turns {
            set.extend(t.tokens.iter().cloned());
        }
        for c in &s.candidates {
            set.extend(c.iter().cloned());
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tab_separated_lines() {
        let (lines, warnings) = parse_document("12\talice\thello world").unwrap();
        assert_eq!(
            lines,
            vec![LogLine {
                time: 12,
                sender: "alice".into(),
                addressee: None,
                text: "hello world".into(),
            }]
        );
        assert!(warnings.is_empty());
    }

    #[test]
    fn empty_document_is_an_error() {
        assert!(matches!(parse_document(""), Err(CorpusError::EmptyDocument)));
    }

    #[test]
    fn malformed_lines_are_reported_not_fatal() {
        let text = "1\ta\thi\n2\tb\tyo\nbroken line\n3\tc\tok";
        let (lines, warnings) = parse_document(text).unwrap();
        assert_eq!(lines.len(), 3);
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].line, 3);
    }

    #[test]
    fn non_utf8_is_an_error() {
        let bytes = [b'1', b'\t', b'a', b'\t', 0xff, 0xfe];
        assert!(matches!(
            parse_document_bytes(&bytes),
            Err(CorpusError::NotUtf8(_))
        ));
    }

    fn line(sender: &str, text: &str) -> LogLine {
        LogLine {
            time: 0,
            sender: sender.into(),
            addressee: None,
            text: text.into(),
        }
    }

    #[test]
    fn detects_colon_mention_of_known_speaker() {
        let known = vec!["nicomachus".to_string()];
        let l = line("verybewitching", "nicomachus: always back up");
        assert_eq!(detect_addressee(&l, &known), Some("nicomachus".into()));
    }

    #[test]
    fn no_leading_name_means_no_addressee() {
        let known = vec!["alice".to_string(), "bob".to_string()];
        let l = line("alice", "hello there");
        assert_eq!(detect_addressee(&l, &known), None);
    }

    #[test]
    fn comma_mention_is_case_insensitive() {
        let known = vec!["alice".to_string(), "bob".to_string()];
        let l = line("bob", "Alice, thanks");
        assert_eq!(detect_addressee(&l, &known), Some("alice".into()));
    }

    #[test]
    fn self_mention_is_ignored() {
        let known = vec!["alice".to_string()];
        let l = line("alice", "alice: talking to myself");
        assert_eq!(detect_addressee(&l, &known), None);
    }

    #[test]
    fn tokenize_lowercases_and_splits() {
        assert_eq!(tokenize_truncate("Hello World"), vec!["hello", "world"]);
        assert_eq!(tokenize_truncate(""), Vec::<String>::new());
    }

    #[test]
    fn tokenize_truncates_to_twenty() {
        let text = (0..25).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let toks = tokenize_truncate(&text);
        assert_eq!(toks.len(), MAX_UTTERANCE_TOKENS);
        assert_eq!(toks[0], "w0");
        assert_eq!(toks[19], "w19");
    }

    #[test]
    fn retokenizing_joined_tokens_is_idempotent() {
        let toks = tokenize_truncate("One TWO three:   four\tfive");
        let again = tokenize_truncate(&toks.join(" "));
        assert_eq!(toks, again);
    }

    fn toy_doc() -> Vec<LogLine> {
        vec![
            LogLine { time: 1, sender: "ann".into(), addressee: None, text: "first message here".into() },
            LogLine { time: 2, sender: "bob".into(), addressee: None, text: "second message here".into() },
            LogLine { time: 3, sender: "cat".into(), addressee: None, text: "third message here".into() },
            LogLine { time: 4, sender: "ann".into(), addressee: None, text: "fourth message here".into() },
            LogLine { time: 5, sender: "bob".into(), addressee: None, text: "ann: fifth message".into() },
        ]
    }

    #[test]
    fn one_mention_yields_one_sample_with_window_context() {
        let doc = toy_doc();
        let (samples, stats) = extract_samples(&doc, "d0", 3, 2, 7);
        assert_eq!(stats.samples, 1);
        let s = &samples[0];
        assert_eq!(s.context.len(), 3);
        assert_eq!(s.responding_speaker, "bob");
        assert_eq!(s.truth_addressee, "ann");
        assert_eq!(s.candidates.len(), 2);
        assert_eq!(s.candidates[s.truth_response_index], vec!["fifth", "message"]);
        assert_eq!(s.time, 5);
        s.validate().unwrap();
    }

    #[test]
    fn no_mentions_no_samples() {
        let doc: Vec<LogLine> = toy_doc()[..4].to_vec();
        let (samples, stats) = extract_samples(&doc, "d0", 5, 2, 7);
        assert!(samples.is_empty());
        assert_eq!(stats.mentions, 0);
    }

    #[test]
    fn extraction_is_deterministic_per_seed() {
        let doc = toy_doc();
        let (a, _) = extract_samples(&doc, "d0", 3, 2, 42);
        let (b, _) = extract_samples(&doc, "d0", 3, 2, 42);
        assert_eq!(a, b);
    }

    #[test]
    fn negatives_never_reuse_the_truth_line() {
        // Many candidates over a small doc: every non-truth line shows up,
        // the truth line only once (as the ground truth itself).
        let doc = toy_doc();
        let (samples, _) = extract_samples(&doc, "d0", 4, 5, 3);
        let s = &samples[0];
        assert_eq!(s.candidates.len(), 5);
        let truth = &s.candidates[s.truth_response_index];
        assert_eq!(s.candidates.iter().filter(|c| c == &truth).count(), 1);
    }

    #[test]
    fn short_document_yields_nothing() {
        let doc = vec![line("ann", "only line")];
        let (samples, _) = extract_samples(&doc, "d0", 5, 2, 0);
        assert!(samples.is_empty());
    }

    #[test]
    fn too_few_negatives_drops_sample() {
        let doc = toy_doc();
        // 5 lines; 10 candidates need 9 distinct negatives from 4 other lines.
        let (samples, stats) = extract_samples(&doc, "d0", 4, 10, 0);
        assert!(samples.is_empty());
        assert_eq!(stats.dropped_too_few_negatives, 1);
    }

    #[test]
    fn jsonl_round_trip_preserves_samples() {
        let doc = toy_doc();
        let (samples, _) = extract_samples(&doc, "d0", 3, 2, 7);
        let mut buf = Vec::new();
        write_samples_jsonl(&samples, &mut buf).unwrap();
        let back = read_samples_jsonl(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(samples, back);
    }

    #[test]
    fn jsonl_field_names_match_the_documented_schema() {
        let doc = toy_doc();
        let (samples, _) = extract_samples(&doc, "d0", 3, 2, 7);
        let mut buf = Vec::new();
        write_samples_jsonl(&samples, &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(buf.split(|&b| b == b'\n').next().unwrap()).unwrap();
        for key in [
            "context",
            "responder",
            "candidates",
            "truth_addressee",
            "truth_response_index",
            "doc_id",
            "time",
        ] {
            assert!(v.get(key).is_some(), "missing key {key}");
        }
    }
}
