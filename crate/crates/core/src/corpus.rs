//! Corpus ingestion, norm documents, dev boundary sets and gold consensus.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::chunker::DevDocument;
use crate::error::{Error, Result};
use crate::model::{validate_session, DialogueSession, GoldAnnotation, NormCategory, NormLabel, NormStatus, Utterance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    MindsJsonl,
    SocialdialJsonl,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minds_jsonl" | "minds" => Ok(CorpusFormat::MindsJsonl),
            "socialdial_jsonl" | "socialdial" => Ok(CorpusFormat::SocialdialJsonl),
            _ => Err(Error::Invalid(format!("unknown corpus format {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLabel {
    #[serde(alias = "norm_category")]
    norm: String,
    status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnnotation {
    annotator_id: String,
    labels: Vec<RawLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTurn {
    session_id: String,
    turn_index: u32,
    speaker_id: String,
    language: String,
    text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    annotations: Vec<RawAnnotation>,
}

/// Source label to target category, for corpora with their own label set.
/// A `null` target marks a label as deliberately unmapped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelMapping(pub BTreeMap<String, Option<String>>);

const SOCIALDIAL_MAPPING: &str = include_str!("../data/socialdial_mapping.json");

impl LabelMapping {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::input(path, None, e.to_string()))
    }

    /// Parses a mapping table and checks every target is a known category.
    pub fn parse(text: &str) -> Result<Self> {
        let map: LabelMapping = serde_json::from_str(text)?;
        for target in map.0.values().flatten() {
            target.parse::<NormCategory>()?;
        }
        Ok(map)
    }

    /// The SocialDial table shipped in `data/socialdial_mapping.json`.
    pub fn socialdial() -> Self {
        Self::parse(SOCIALDIAL_MAPPING).expect("shipped mapping is valid")
    }

    fn lookup(&self, source: &str) -> Option<NormCategory> {
        let key = source.trim().to_lowercase();
        self.0
            .iter()
            .find(|(k, _)| k.trim().to_lowercase() == key)
            .and_then(|(_, v)| v.as_deref())
            .and_then(|v| v.parse().ok())
    }
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::input(path, Some(i + 1), e.to_string()))?;
        out.push((i + 1, value));
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads and validates a corpus. `mapping` is required for SocialDial input.
pub fn load_sessions(path: &Path, format: CorpusFormat, mapping: Option<&LabelMapping>) -> Result<Vec<DialogueSession>> {
    let shipped;
    let mapping = match (format, mapping) {
        (CorpusFormat::SocialdialJsonl, None) => {
            shipped = LabelMapping::socialdial();
            Some(&shipped)
        }
        (_, m) => m,
    };
    let rows: Vec<(usize, RawTurn)> = read_jsonl(path)?;
    if rows.is_empty() {
        return Err(Error::input(path, None, "corpus file is empty"));
    }
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<(usize, RawTurn)>> = HashMap::new();
    let mut dropped = 0usize;
    for (line, row) in rows {
        let entry = grouped.entry(row.session_id.clone()).or_insert_with(|| {
            order.push(row.session_id.clone());
            Vec::new()
        });
        if entry.iter().any(|(_, r)| r.turn_index == row.turn_index) {
            return Err(Error::input(
                path,
                Some(line),
                format!("duplicate turn_index {} in session {}", row.turn_index, row.session_id),
            ));
        }
        entry.push((line, row));
    }
    let mut sessions = Vec::with_capacity(order.len());
    for sid in order {
        let mut rows = grouped.remove(&sid).expect("grouped");
        rows.sort_by_key(|(_, r)| r.turn_index);
        let mut utterances = Vec::with_capacity(rows.len());
        let mut gold = Vec::new();
        for (line, row) in rows {
            for ann in row.annotations {
                let mut labels = Vec::with_capacity(ann.labels.len());
                for l in ann.labels {
                    let status: NormStatus =
                        l.status.parse().map_err(|e: Error| Error::input(path, Some(line), e.to_string()))?;
                    let category = match (format, mapping) {
                        (CorpusFormat::SocialdialJsonl, Some(m)) => match m.lookup(&l.norm) {
                            Some(c) => c,
                            None => {
                                dropped += 1;
                                continue;
                            }
                        },
                        _ => l
                            .norm
                            .parse()
                            .map_err(|e: Error| Error::input(path, Some(line), e.to_string()))?,
                    };
                    labels.push(NormLabel::new(category, status));
                }
                if !labels.is_empty() {
                    gold.push(GoldAnnotation {
                        turn_index: row.turn_index,
                        annotator_id: ann.annotator_id,
                        labels,
                    });
                }
            }
            utterances.push(Utterance {
                session_id: row.session_id,
                turn_index: row.turn_index,
                speaker_id: row.speaker_id,
                language: row.language,
                text: row.text,
            });
        }
        let session = DialogueSession {
            session_id: sid,
            utterances,
            gold,
        };
        sessions.push(validate_session(session).map_err(|e| Error::input(path, None, e.to_string()))?);
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} labels with no mapping", path.display());
    }
    Ok(sessions)
}

/// Writes sessions in the MINDS line format, one turn per line.
pub fn write_sessions(path: &Path, sessions: &[DialogueSession]) -> Result<()> {
    let rows: Vec<RawTurn> = sessions
        .iter()
        .flat_map(|s| {
            s.utterances.iter().map(|u| RawTurn {
                session_id: u.session_id.clone(),
                turn_index: u.turn_index,
                speaker_id: u.speaker_id.clone(),
                language: u.language.clone(),
                text: u.text.clone(),
                annotations: s
                    .gold
                    .iter()
                    .filter(|g| g.turn_index == u.turn_index)
                    .map(|g| RawAnnotation {
                        annotator_id: g.annotator_id.clone(),
                        labels: g
                            .labels
                            .iter()
                            .map(|l| RawLabel {
                                norm: l.norm_category.label().to_string(),
                                status: l.status.label().to_string(),
                            })
                            .collect(),
                    })
                    .collect(),
            })
        })
        .collect();
    write_jsonl(path, &rows)
}

/// Per-turn gold labels merged across annotators.
///
/// A category is kept when at least half of the turn's annotators used it;
/// its status is the majority among those annotators, ties going to
/// Violation. Categories keep their order of first appearance.
pub fn consensus_gold(session: &DialogueSession) -> BTreeMap<u32, Vec<NormLabel>> {
    let mut by_turn: BTreeMap<u32, Vec<&GoldAnnotation>> = BTreeMap::new();
    for g in &session.gold {
        by_turn.entry(g.turn_index).or_default().push(g);
    }
    by_turn
        .into_iter()
        .map(|(turn, anns)| {
            let mut annotators: Vec<&str> = anns.iter().map(|a| a.annotator_id.as_str()).collect();
            annotators.sort_unstable();
            annotators.dedup();
            let n = annotators.len();
            // category -> (annotators using it, adherence votes, violation votes)
            let mut order: Vec<NormCategory> = Vec::new();
            let mut tally: HashMap<NormCategory, (Vec<&str>, usize, usize)> = HashMap::new();
            for a in &anns {
                for l in &a.labels {
                    let t = tally.entry(l.norm_category).or_insert_with(|| {
                        order.push(l.norm_category);
                        (Vec::new(), 0, 0)
                    });
                    if !t.0.contains(&a.annotator_id.as_str()) {
                        t.0.push(&a.annotator_id);
                    }
                    match l.status {
                        NormStatus::Adherence => t.1 += 1,
                        NormStatus::Violation => t.2 += 1,
                    }
                }
            }
            let labels = order
                .into_iter()
                .filter_map(|c| {
                    let (users, adh, vio) = &tally[&c];
                    (2 * users.len() >= n).then(|| {
                        let status = if adh > vio {
                            NormStatus::Adherence
                        } else {
                            NormStatus::Violation
                        };
                        NormLabel::new(c, status)
                    })
                })
                .collect();
            (turn, labels)
        })
        .collect()
}

/// Reads every `.txt` / `.md` file in `dir`, sorted by file name.
pub fn load_norm_docs(dir: &Path) -> Result<Vec<(String, String)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
        if p.is_file() && (ext.eq_ignore_ascii_case("txt") || ext.eq_ignore_ascii_case("md")) {
            paths.push(p);
        }
    }
    if paths.is_empty() {
        return Err(Error::input(dir, None, "no .txt or .md norm documents found"));
    }
    paths.sort();
    let mut docs: Vec<(String, String)> = Vec::with_capacity(paths.len());
    for p in paths {
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let text = String::from_utf8(bytes).map_err(|e| Error::input(&p, None, format!("not valid UTF-8: {e}")))?;
        let stem = p
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::input(&p, None, "file name is not valid UTF-8"))?
            .to_string();
        if docs.iter().any(|(id, _)| *id == stem) {
            return Err(Error::input(&p, None, format!("duplicate document id {stem}")));
        }
        docs.push((stem, text));
    }
    Ok(docs)
}

/// Dev documents with gold boundaries, one JSON object per line.
pub fn load_dev_documents(path: &Path) -> Result<Vec<DevDocument>> {
    let docs: Vec<DevDocument> = read_jsonl(path)?.into_iter().map(|(_, d)| d).collect();
    if docs.is_empty() {
        return Err(Error::input(path, None, "dev file is empty"));
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    const TWO_TURNS: &str = r#"{"session_id": "s1", "turn_index": 2, "speaker_id": "B", "language": "en", "text": "fine"}
{"session_id": "s1", "turn_index": 1, "speaker_id": "A", "language": "en", "text": "hi", "annotations": [{"annotator_id": "x", "labels": [{"norm": "Doing greeting", "status": "Adherence"}]}, {"annotator_id": "y", "labels": [{"norm": "doing greeting", "status": "adhered"}]}]}
"#;

    #[test]
    fn loads_and_sorts_one_session() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.jsonl", TWO_TURNS);
        let s = load_sessions(&p, CorpusFormat::MindsJsonl, None).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].utterances.len(), 2);
        assert_eq!(s[0].utterances[0].text, "hi");
        assert_eq!(s[0].gold.len(), 2);
    }

    #[test]
    fn duplicate_turn_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let line = r#"{"session_id": "s1", "turn_index": 1, "speaker_id": "A", "language": "en", "text": "hi"}"#;
        let p = write(dir.path(), "c.jsonl", &format!("{line}\n{line}\n"));
        let err = load_sessions(&p, CorpusFormat::MindsJsonl, None).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn malformed_and_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bad.jsonl", "{\"session_id\": \n");
        assert!(load_sessions(&p, CorpusFormat::MindsJsonl, None).unwrap_err().to_string().contains(":1:"));
        let p = write(dir.path(), "empty.jsonl", "\n");
        assert!(load_sessions(&p, CorpusFormat::MindsJsonl, None).is_err());
        let p = write(dir.path(), "gap.jsonl", TWO_TURNS.lines().next().unwrap());
        assert!(load_sessions(&p, CorpusFormat::MindsJsonl, None).is_err());
    }

    #[test]
    fn socialdial_mapping_drops_unknown_labels() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"{"session_id": "d", "turn_index": 1, "speaker_id": "A", "language": "zh", "text": "谢谢", "annotations": [{"annotator_id": "x", "labels": [{"norm": "thanks", "status": "Adherence"}, {"norm": "mystery", "status": "Violation"}]}]}
{"session_id": "d", "turn_index": 2, "speaker_id": "B", "language": "zh", "text": "不客气", "annotations": [{"annotator_id": "x", "labels": [{"norm": "mystery", "status": "Violation"}]}]}
"#;
        let p = write(dir.path(), "sd.jsonl", body);
        let m = write(dir.path(), "map.json", r#"{"Thanks": "Doing thanks", "mystery": null}"#);
        let mapping = LabelMapping::load(&m).unwrap();
        let s = load_sessions(&p, CorpusFormat::SocialdialJsonl, Some(&mapping)).unwrap();
        assert_eq!(s[0].utterances.len(), 2);
        assert_eq!(s[0].gold.len(), 1);
        assert_eq!(s[0].gold[0].labels, [NormLabel::new(NormCategory::Thanks, NormStatus::Adherence)]);
        let shipped = load_sessions(&p, CorpusFormat::SocialdialJsonl, None).unwrap();
        assert_eq!(shipped[0].gold, s[0].gold);
        let bad = write(dir.path(), "bad.json", r#"{"x": "Doing nothing"}"#);
        assert!(LabelMapping::load(&bad).is_err());
    }

    #[test]
    fn shipped_mapping_targets_are_valid() {
        let m = LabelMapping::socialdial();
        assert_eq!(m.lookup("Greeting"), Some(NormCategory::Greeting));
        assert_eq!(m.lookup("other"), None);
    }

    fn ann(turn: u32, who: &str, labels: &[(NormCategory, NormStatus)]) -> GoldAnnotation {
        GoldAnnotation {
            turn_index: turn,
            annotator_id: who.into(),
            labels: labels.iter().map(|(c, s)| NormLabel::new(*c, *s)).collect(),
        }
    }

    fn with_gold(gold: Vec<GoldAnnotation>) -> DialogueSession {
        DialogueSession {
            session_id: "s".into(),
            utterances: vec![],
            gold,
        }
    }

    use NormCategory::*;
    use NormStatus::*;

    #[test]
    fn consensus_hand_cases() {
        let one = with_gold(vec![ann(1, "a", &[(Thanks, Violation), (Request, Adherence)])]);
        assert_eq!(consensus_gold(&one)[&1], one.gold[0].labels);

        let two = with_gold(vec![ann(1, "a", &[(Thanks, Adherence)]), ann(1, "b", &[(Thanks, Adherence)])]);
        assert_eq!(consensus_gold(&two)[&1], [NormLabel::new(Thanks, Adherence)]);

        let three = with_gold(vec![
            ann(2, "a", &[(Apology, Adherence)]),
            ann(2, "b", &[(Apology, Adherence)]),
            ann(2, "c", &[(Apology, Violation), (Greeting, Adherence)]),
        ]);
        assert_eq!(consensus_gold(&three)[&2], [NormLabel::new(Apology, Adherence)]);

        let tie = with_gold(vec![ann(1, "a", &[(Criticism, Adherence)]), ann(1, "b", &[(Criticism, Violation)])]);
        assert_eq!(consensus_gold(&tie)[&1], [NormLabel::new(Criticism, Violation)]);
    }

    #[test]
    fn norm_docs() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_norm_docs(dir.path()).is_err());
        write(dir.path(), "b.md", "Second.");
        write(dir.path(), "a.txt", "First.");
        write(dir.path(), "ignored.json", "{}");
        let docs = load_norm_docs(dir.path()).unwrap();
        assert_eq!(docs, [("a".to_string(), "First.".to_string()), ("b".into(), "Second.".into())]);
        fs::write(dir.path().join("c.txt"), [0xff, 0xfe, 0x00]).unwrap();
        let err = load_norm_docs(dir.path()).unwrap_err();
        assert!(err.to_string().contains("c.txt"), "{err}");
    }

    fn arb_label() -> impl Strategy<Value = NormLabel> {
        (0usize..13, any::<bool>()).prop_map(|(i, a)| {
            NormLabel::new(NormCategory::ALL[i], if a { Adherence } else { Violation })
        })
    }

    fn arb_session() -> impl Strategy<Value = DialogueSession> {
        (1u32..6, prop::collection::vec((0u32..6, 0usize..3, prop::collection::btree_set(0usize..13, 1..4), any::<bool>()), 0..8))
            .prop_map(|(n, anns)| {
                let utterances = (1..=n)
                    .map(|t| Utterance {
                        session_id: "s".into(),
                        turn_index: t,
                        speaker_id: format!("S{}", t % 2),
                        language: "en".into(),
                        text: format!("utterance {t}"),
                    })
                    .collect();
                let mut gold: Vec<GoldAnnotation> = anns
                    .into_iter()
                    .map(|(turn, who, cats, adh)| GoldAnnotation {
                        turn_index: turn % n + 1,
                        annotator_id: format!("ann{who}"),
                        labels: cats
                            .into_iter()
                            .map(|c| NormLabel::new(NormCategory::ALL[c], if adh { Adherence } else { Violation }))
                            .collect(),
                    })
                    .collect();
                gold.sort_by_key(|g| g.turn_index);
                DialogueSession {
                    session_id: "s".into(),
                    utterances,
                    gold,
                }
            })
    }

    proptest! {
        #[test]
        fn write_then_load_is_identity(s in arb_session()) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("c.jsonl");
            write_sessions(&p, std::slice::from_ref(&s)).unwrap();
            let back = load_sessions(&p, CorpusFormat::MindsJsonl, None).unwrap();
            prop_assert_eq!(back, vec![s]);
        }

        #[test]
        fn consensus_never_invents(s in arb_session(), extra in prop::collection::vec(arb_label(), 0..3)) {
            let mut s = s;
            if let Some(g) = s.gold.first_mut() {
                for l in extra {
                    if !g.labels.iter().any(|x| x.norm_category == l.norm_category) {
                        g.labels.push(l);
                    }
                }
            }
            let cons = consensus_gold(&s);
            for g in &s.gold {
                prop_assert!(cons.contains_key(&g.turn_index));
            }
            for (turn, labels) in cons {
                for l in labels {
                    prop_assert!(s.gold.iter().any(|g| g.turn_index == turn && g.labels.iter().any(|x| x.norm_category == l.norm_category)));
                }
            }
        }
    }
}
