//! Transcript rendering (plain text and TEI XML) and prefix-wildcard
//! keyword search over a transcript corpus.
//!
//! Rendering walks a [`PageLayout`] in reading order, emitting one text
//! line per recovered line with no separators between characters, a blank
//! line between paragraphs, and a trailing newline. Search operates per
//! line: a trailing `*` in the pattern matches zero or more further
//! letters, and matches never span line breaks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco::CategoryTable;
use crate::layout::PageLayout;

#[derive(Debug, Error, PartialEq)]
pub enum PatternError {
    #[error("search pattern is empty")]
    Empty,
    #[error("'*' is only allowed as the final character of a pattern")]
    InteriorWildcard,
}

/// A document's text in reading order: paragraphs of lines, one character
/// per recognized box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub doc_id: String,
    pub paragraphs: Vec<Vec<String>>,
}

impl Transcript {
    pub fn new(doc_id: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            paragraphs: Vec::new(),
        }
    }

    /// Render as plain text: lines joined by `\n`, a blank line between
    /// paragraphs, trailing newline when nonempty.
    pub fn to_text(&self) -> String {
        if self.paragraphs.is_empty() {
            return String::new();
        }
        let mut out = String::new();
        for (p, paragraph) in self.paragraphs.iter().enumerate() {
            if p > 0 {
                out.push('\n');
            }
            for line in paragraph {
                out.push_str(line);
                out.push('\n');
            }
        }
        out
    }

    /// Inverse of [`Transcript::to_text`]: blank lines separate paragraphs.
    pub fn parse(doc_id: impl Into<String>, text: &str) -> Self {
        let mut paragraphs: Vec<Vec<String>> = Vec::new();
        let mut current: Vec<String> = Vec::new();
        for line in text.lines() {
            if line.is_empty() {
                if !current.is_empty() {
                    paragraphs.push(std::mem::take(&mut current));
                }
            } else {
                current.push(line.to_string());
            }
        }
        if !current.is_empty() {
            paragraphs.push(current);
        }
        Self {
            doc_id: doc_id.into(),
            paragraphs,
        }
    }
}

/// One keyword match. Offsets are zero-based; `column` counts characters,
/// not bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub doc_id: String,
    pub paragraph: usize,
    pub line: usize,
    pub column: usize,
    pub matched: String,
}

/// Map a layout's boxes to a [`Transcript`] using the category table's
/// glyphs. Categories without a glyph render as `?`.
pub fn layout_to_transcript(
    layout: &PageLayout,
    table: &CategoryTable,
    doc_id: impl Into<String>,
) -> Transcript {
    let paragraphs = layout
        .paragraphs
        .iter()
        .map(|paragraph| {
            paragraph
                .iter()
                .map(|line| {
                    line.boxes
                        .iter()
                        .map(|sb| table.glyph(sb.category_id).unwrap_or('?'))
                        .collect::<String>()
                })
                .collect()
        })
        .collect();
    Transcript {
        doc_id: doc_id.into(),
        paragraphs,
    }
}

/// Render a layout directly to plain text.
pub fn to_plain_text(layout: &PageLayout, table: &CategoryTable) -> String {
    layout_to_transcript(layout, table, "").to_text()
}

/// Document metadata carried into the TEI header.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TeiMetadata {
    pub title: String,
    pub source_id: String,
}

fn escape_xml(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Render a layout as minimal TEI XML: a header carrying the metadata and
/// a body of `<p>` elements holding `<l n="..">` lines numbered
/// sequentially through the document.
pub fn to_tei(layout: &PageLayout, table: &CategoryTable, metadata: &TeiMetadata) -> String {
    let transcript = layout_to_transcript(layout, table, "");
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<TEI xmlns=\"http://www.tei-c.org/ns/1.0\">\n");
    out.push_str("  <teiHeader>\n    <fileDesc>\n      <titleStmt>\n");
    out.push_str(&format!(
        "        <title>{}</title>\n",
        escape_xml(&metadata.title)
    ));
    out.push_str("      </titleStmt>\n      <publicationStmt>\n");
    out.push_str("        <p>Machine-generated transcription</p>\n");
    out.push_str("      </publicationStmt>\n      <sourceDesc>\n");
    out.push_str(&format!(
        "        <p>{}</p>\n",
        escape_xml(&metadata.source_id)
    ));
    out.push_str("      </sourceDesc>\n    </fileDesc>\n  </teiHeader>\n");
    out.push_str("  <text>\n");
    if transcript.paragraphs.is_empty() {
        out.push_str("    <body/>\n");
    } else {
        out.push_str("    <body>\n");
        let mut line_no = 0usize;
        for paragraph in &transcript.paragraphs {
            out.push_str("      <p>\n");
            for line in paragraph {
                line_no += 1;
                out.push_str(&format!(
                    "        <l n=\"{}\">{}</l>\n",
                    line_no,
                    escape_xml(line)
                ));
            }
            out.push_str("      </p>\n");
        }
        out.push_str("    </body>\n");
    }
    out.push_str("  </text>\n</TEI>\n");
    out
}

struct Pattern {
    literal: Vec<char>,
    prefix_wildcard: bool,
}

fn parse_pattern(pattern: &str) -> Result<Pattern, PatternError> {
    if pattern.is_empty() {
        return Err(PatternError::Empty);
    }
    let chars: Vec<char> = pattern.chars().collect();
    let prefix_wildcard = *chars.last().unwrap() == '*';
    let literal: Vec<char> = if prefix_wildcard {
        chars[..chars.len() - 1].to_vec()
    } else {
        chars
    };
    if literal.is_empty() {
        return Err(PatternError::Empty);
    }
    if literal.contains(&'*') {
        return Err(PatternError::InteriorWildcard);
    }
    Ok(Pattern {
        literal,
        prefix_wildcard,
    })
}

/// Case-sensitive keyword search across a corpus.
///
/// The literal part of the pattern is matched exactly; a trailing `*`
/// extends each match over any further letters on the same line. All
/// occurrences (including overlapping ones) are reported in corpus order.
pub fn search(corpus: &[Transcript], pattern: &str) -> Result<Vec<SearchHit>, PatternError> {
    let pattern = parse_pattern(pattern)?;
    let mut hits = Vec::new();
    for doc in corpus {
        for (p, paragraph) in doc.paragraphs.iter().enumerate() {
            for (l, line) in paragraph.iter().enumerate() {
                let chars: Vec<char> = line.chars().collect();
                if chars.len() < pattern.literal.len() {
                    continue;
                }
                for start in 0..=(chars.len() - pattern.literal.len()) {
                    if chars[start..start + pattern.literal.len()] != pattern.literal[..] {
                        continue;
                    }
                    let mut end = start + pattern.literal.len();
                    if pattern.prefix_wildcard {
                        while end < chars.len() && chars[end].is_alphabetic() {
                            end += 1;
                        }
                    }
                    hits.push(SearchHit {
                        doc_id: doc.doc_id.clone(),
                        paragraph: p,
                        line: l,
                        column: start,
                        matched: chars[start..end].iter().collect(),
                    });
                }
            }
        }
    }
    Ok(hits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coco::ScoredBox;
    use crate::geometry::BBox;
    use crate::layout::Line;

    fn table() -> CategoryTable {
        CategoryTable::default_greek()
    }

    fn line_of(ids: &[i64]) -> Line {
        let boxes: Vec<ScoredBox> = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| ScoredBox::new(BBox::new(i as f64 * 12.0, 0.0, 10.0, 10.0), id, 1.0))
            .collect();
        Line {
            boxes,
            top: 0.0,
            bottom: 10.0,
        }
    }

    #[test]
    fn empty_layout_renders_empty() {
        assert_eq!(to_plain_text(&PageLayout::default(), &table()), "");
    }

    #[test]
    fn one_paragraph_two_lines() {
        // Α Β Γ = ids 1 2 3; Δ Ε = ids 4 5.
        let layout = PageLayout {
            paragraphs: vec![vec![line_of(&[1, 2, 3]), line_of(&[4, 5])]],
            median_line_height: 10.0,
        };
        assert_eq!(to_plain_text(&layout, &table()), "ΑΒΓ\nΔΕ\n");
    }

    #[test]
    fn two_paragraphs_blank_line_between() {
        let layout = PageLayout {
            paragraphs: vec![vec![line_of(&[1, 2])], vec![line_of(&[3, 4])]],
            median_line_height: 10.0,
        };
        assert_eq!(to_plain_text(&layout, &table()), "ΑΒ\n\nΓΔ\n");
    }

    #[test]
    fn punctuation_renders_as_marks() {
        let layout = PageLayout {
            paragraphs: vec![vec![line_of(&[1, 25, 26])]],
            median_line_height: 10.0,
        };
        assert_eq!(to_plain_text(&layout, &table()), "Α'.\n");
    }

    #[test]
    fn rendered_length_is_boxes_plus_structure() {
        // Character count = box count + one newline per line + one extra
        // newline per paragraph break.
        use rand_core::RngCore;
        let mut rng = rand_pcg::Pcg32::new(17, 3);
        let mut draw = |n: usize| (rng.next_u32() as usize) % n;
        for _ in 0..50 {
            let paragraphs: Vec<Vec<Line>> = (0..draw(4))
                .map(|_| {
                    (0..1 + draw(4))
                        .map(|_| {
                            let ids: Vec<i64> = (0..draw(9)).map(|_| 1 + draw(26) as i64).collect();
                            line_of(&ids)
                        })
                        .collect()
                })
                .collect();
            let boxes: usize = paragraphs.iter().flatten().map(|l| l.boxes.len()).sum();
            let lines: usize = paragraphs.iter().map(Vec::len).sum();
            let paras = paragraphs.len();
            let layout = PageLayout {
                paragraphs,
                median_line_height: 10.0,
            };
            let text = to_plain_text(&layout, &table());
            let want = if paras == 0 {
                0
            } else {
                boxes + lines + (paras - 1)
            };
            assert_eq!(text.chars().count(), want);
        }
    }

    #[test]
    fn text_round_trips_through_parse() {
        let layout = PageLayout {
            paragraphs: vec![
                vec![line_of(&[1, 2, 3]), line_of(&[4])],
                vec![line_of(&[5])],
            ],
            median_line_height: 10.0,
        };
        let t = layout_to_transcript(&layout, &table(), "doc");
        let back = Transcript::parse("doc", &t.to_text());
        assert_eq!(t, back);
    }

    #[test]
    fn tei_empty_layout_is_wellformed() {
        let xml = to_tei(&PageLayout::default(), &table(), &TeiMetadata::default());
        assert!(xml.contains("<body/>"));
        let mut reader = quick_xml::Reader::from_str(&xml);
        loop {
            match reader.read_event() {
                Ok(quick_xml::events::Event::Eof) => break,
                Ok(_) => {}
                Err(e) => panic!("not well-formed: {e}"),
            }
        }
    }

    #[test]
    fn tei_numbers_lines_sequentially() {
        let layout = PageLayout {
            paragraphs: vec![vec![line_of(&[1, 2, 3]), line_of(&[4, 5])]],
            median_line_height: 10.0,
        };
        let xml = to_tei(
            &layout,
            &table(),
            &TeiMetadata {
                title: "Page".into(),
                source_id: "img-1".into(),
            },
        );
        assert!(xml.contains("<l n=\"1\">ΑΒΓ</l>"));
        assert!(xml.contains("<l n=\"2\">ΔΕ</l>"));
        // Two header <p> elements plus exactly one body paragraph.
        assert_eq!(xml.matches("<p>").count(), 3);
    }

    #[test]
    fn tei_escapes_metadata() {
        let xml = to_tei(
            &PageLayout::default(),
            &table(),
            &TeiMetadata {
                title: "a <b> & \"c\"".into(),
                source_id: "x'y".into(),
            },
        );
        assert!(xml.contains("a &lt;b&gt; &amp; &quot;c&quot;"));
        assert!(xml.contains("x&apos;y"));
        assert!(!xml.contains("<b>"));
    }

    fn doc(lines: &[&[&str]]) -> Transcript {
        Transcript {
            doc_id: "d".into(),
            paragraphs: lines
                .iter()
                .map(|p| p.iter().map(|s| s.to_string()).collect())
                .collect(),
        }
    }

    #[test]
    fn prefix_wildcard_extends_over_letters() {
        let corpus = vec![doc(&[&["ΑΧΙΛΛΕΥΣ"]])];
        let hits = search(&corpus, "ΑΧΙΛ*").unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].column, 0);
        assert_eq!(hits[0].matched, "ΑΧΙΛΛΕΥΣ");
    }

    #[test]
    fn whole_line_literal_matches_once() {
        let corpus = vec![doc(&[&["ΑΧΙΛ"]])];
        let hits = search(&corpus, "ΑΧΙΛ").unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].matched, "ΑΧΙΛ");
    }

    #[test]
    fn interior_substring_found_at_offset() {
        let corpus = vec![doc(&[&["ΒΑΧΙΛΒ"]])];
        let hits = search(&corpus, "ΑΧΙΛ").unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].column, 1);
    }

    #[test]
    fn wildcard_stops_at_punctuation() {
        let corpus = vec![doc(&[&["ΑΧΙΛ'ΕΥΣ"]])];
        let hits = search(&corpus, "ΑΧΙΛ*").unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].matched, "ΑΧΙΛ");
    }

    #[test]
    fn matches_do_not_span_lines() {
        let corpus = vec![doc(&[&["ΑΧ", "ΙΛ"]])];
        assert!(search(&corpus, "ΑΧΙΛ").unwrap().is_empty());
    }

    #[test]
    fn overlapping_occurrences_all_reported() {
        let corpus = vec![doc(&[&["ΑΑΑ"]])];
        let hits = search(&corpus, "ΑΑ").unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].column, 0);
        assert_eq!(hits[1].column, 1);
    }

    #[test]
    fn bad_patterns_rejected() {
        assert_eq!(search(&[], "").unwrap_err(), PatternError::Empty);
        assert_eq!(search(&[], "*").unwrap_err(), PatternError::Empty);
        assert_eq!(
            search(&[], "Α*Β").unwrap_err(),
            PatternError::InteriorWildcard
        );
    }

    #[test]
    fn hits_reextract_to_matched_text() {
        let corpus = vec![doc(&[&["ΒΑΧΙΛΛΕΥΣΒ", "ΑΧΙΛ"], &["ΧΑΧΙΛΗ"]])];
        for hit in search(&corpus, "ΑΧΙΛ*").unwrap() {
            let line = &corpus[0].paragraphs[hit.paragraph][hit.line];
            let chars: Vec<char> = line.chars().collect();
            let extracted: String = chars[hit.column..hit.column + hit.matched.chars().count()]
                .iter()
                .collect();
            assert_eq!(extracted, hit.matched);
        }
    }
}
