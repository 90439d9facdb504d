//! Templated rendering of dataset records into sentence lists, and the inverse
//! parse of a rendered history back into sentences.

use super::ingest::{DatasetKind, GenerationRecord, Interaction, Paper, SelectionRecord, SignalTaxonomy};
use super::ContextError;

/// Appends a period unless the text already ends in terminal punctuation.
fn terminate(s: &str) -> String {
    let s = s.trim();
    if s.ends_with(['.', '!', '?']) {
        s.to_string()
    } else {
        format!("{s}.")
    }
}

fn format_rating(r: f64) -> String {
    if r.fract() == 0.0 {
        format!("{}", r as i64)
    } else {
        format!("{r}")
    }
}

fn basic_info_sentence(rec: &SelectionRecord) -> String {
    let n = rec.interactions.len();
    let avg = if n == 0 {
        0.0
    } else {
        rec.interactions.iter().map(|i| i.rating).sum::<f64>() / n as f64
    };
    format!(
        "User basic info: Gender is {}, Age is {}, Occupation is {}, Total Movies watched is {}, Average Rating is {:.2} out of 5.0.",
        rec.basic_info.gender.trim(),
        rec.basic_info.age.as_text().trim(),
        rec.basic_info.occupation.trim(),
        n,
        avg
    )
}

fn movie_sentences(k: usize, m: &Interaction) -> [(&'static str, String); 6] {
    [
        (
            "title",
            format!("Movie {k} title: The movie title is {}", terminate(&m.title)),
        ),
        (
            "year",
            format!("Movie {k} year: Released in {}.", m.year.as_text().trim()),
        ),
        (
            "genres",
            format!("Movie {k} genres: Genres are {}.", m.genres.joined()),
        ),
        ("summary", format!("Movie {k} summary: {}", terminate(&m.summary))),
        (
            "rating",
            format!(
                "Movie {k} rating: User gave it {} stars.",
                format_rating(m.rating)
            ),
        ),
        (
            "rating_time",
            format!("Movie {k} rating time: Rated on {}.", m.rating_time.as_text()),
        ),
    ]
}

/// Renders a selection record in basic-info-then-per-movie order. Each item is
/// `(sentence text, signal label)`.
pub fn render_selection(rec: &SelectionRecord, taxonomy: &SignalTaxonomy) -> Vec<(String, String)> {
    let mut out = vec![(
        basic_info_sentence(rec),
        taxonomy.label("basic_info").to_string(),
    )];
    for (i, m) in rec.interactions.iter().enumerate() {
        for (field, text) in movie_sentences(i + 1, m) {
            out.push((text, taxonomy.label(field).to_string()));
        }
    }
    out
}

fn paper_sentences(k: usize, p: &Paper) -> [(&'static str, String); 3] {
    [
        ("title", format!("Paper {k} title: {}", terminate(&p.title))),
        ("abstract", format!("Paper {k} abstract: {}", terminate(&p.r#abstract))),
        (
            "date",
            format!("Paper {k} date: Published in {}.", p.date.as_text().trim()),
        ),
    ]
}

pub fn render_generation(
    rec: &GenerationRecord,
    taxonomy: &SignalTaxonomy,
) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (i, p) in rec.papers.iter().enumerate() {
        for (field, text) in paper_sentences(i + 1, p) {
            out.push((text, taxonomy.label(field).to_string()));
        }
    }
    out
}

fn selection_prefixes(k: usize) -> [(&'static str, String); 6] {
    [
        ("title", format!("Movie {k} title: ")),
        ("year", format!("Movie {k} year: ")),
        ("genres", format!("Movie {k} genres: ")),
        ("summary", format!("Movie {k} summary: ")),
        ("rating", format!("Movie {k} rating: ")),
        ("rating_time", format!("Movie {k} rating time: ")),
    ]
}

fn generation_prefixes(k: usize) -> [(&'static str, String); 3] {
    [
        ("title", format!("Paper {k} title: ")),
        ("abstract", format!("Paper {k} abstract: ")),
        ("date", format!("Paper {k} date: ")),
    ]
}

/// Parses a rendered history (as produced by [`render_selection`] or
/// [`render_generation`] joined with single spaces) back into labelled
/// sentences. Sentence boundaries are located by the fixed field prefixes in
/// their expected order, so free text inside a field never splits it.
pub fn parse_rendered(
    document: &str,
    kind: DatasetKind,
    taxonomy: &SignalTaxonomy,
) -> Result<Vec<(String, String)>, ContextError> {
    // Expected sequence of (field, prefix); generated lazily per item number.
    let mut expected: Vec<(&'static str, String)> = Vec::new();
    let item_fields = match kind {
        DatasetKind::Selection => {
            expected.push(("basic_info", "User basic info: ".to_string()));
            6
        }
        DatasetKind::Generation => 3,
    };
    let prefixes_for = |k: usize| -> Vec<(&'static str, String)> {
        match kind {
            DatasetKind::Selection => selection_prefixes(k).into_iter().collect(),
            DatasetKind::Generation => generation_prefixes(k).into_iter().collect(),
        }
    };
    let bad = |message: String| ContextError::Record { line: 0, message };

    let mut out = Vec::new();
    let mut pos = 0usize;
    let mut item = 1usize;
    expected.extend(prefixes_for(item));
    let mut cursor = 0usize;
    loop {
        let (field, prefix) = expected[cursor].clone();
        if !document[pos..].starts_with(&prefix) {
            return Err(bad(format!("expected `{}` at byte {pos}", prefix.trim_end())));
        }
        cursor += 1;
        if cursor == expected.len() {
            item += 1;
            expected.extend(prefixes_for(item));
        }
        let next_prefix = format!(" {}", expected[cursor].1);
        let end = document[pos + prefix.len()..]
            .find(&next_prefix)
            .map(|off| pos + prefix.len() + off);
        match end {
            Some(end) => {
                out.push((document[pos..end].to_string(), taxonomy.label(field).to_string()));
                pos = end + 1;
            }
            None => {
                out.push((document[pos..].to_string(), taxonomy.label(field).to_string()));
                // The document must end on a complete item.
                let consumed = cursor - usize::from(kind == DatasetKind::Selection);
                if !consumed.is_multiple_of(item_fields) {
                    return Err(bad("document ends mid-item".to_string()));
                }
                return Ok(out);
            }
        }
    }
}
