use std::path::Path;

use super::DataError;

/// One logged rating.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user: String,
    pub item: String,
    /// 1 through 5.
    pub rating: u8,
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryRecord {
    pub user: String,
    pub item: String,
    pub label: bool,
}

#[derive(Debug, Clone, Copy)]
enum Delimiter {
    DoubleColon,
    Tab,
    Comma,
}

impl Delimiter {
    fn detect(line: &str) -> Self {
        if line.contains("::") {
            Delimiter::DoubleColon
        } else if line.contains('\t') {
            Delimiter::Tab
        } else {
            Delimiter::Comma
        }
    }

    fn split(self, line: &str) -> Vec<&str> {
        match self {
            Delimiter::DoubleColon => line.split("::").collect(),
            Delimiter::Tab => line.split('\t').collect(),
            Delimiter::Comma => line.split(',').collect(),
        }
    }
}

/// Reads `user,item,rating[,timestamp]` lines (comma, tab or `::` separated).
pub fn load_interactions(path: impl AsRef<Path>) -> Result<Vec<InteractionRecord>, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_interactions(&text)
}

pub fn parse_interactions(text: &str) -> Result<Vec<InteractionRecord>, DataError> {
    let mut delim = None;
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let d = *delim.get_or_insert_with(|| Delimiter::detect(line));
        let fields: Vec<&str> = d.split(line).into_iter().map(str::trim).collect();
        if fields.len() < 3 || fields.len() > 4 {
            return Err(DataError::Parse {
                line: line_no,
                msg: format!("expected 3 or 4 fields, found {}", fields.len()),
            });
        }
        // a leading header row such as "userId,movieId,rating,timestamp"
        if out.is_empty() && fields[2].starts_with(|c: char| c.is_ascii_alphabetic()) {
            continue;
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(DataError::Parse {
                line: line_no,
                msg: "empty user or item id".into(),
            });
        }
        let rating = parse_rating(fields[2]).ok_or_else(|| DataError::RatingOutOfRange {
            line: line_no,
            rating: fields[2].to_string(),
        })?;
        let timestamp = match fields.get(3) {
            Some(t) => Some(t.parse::<i64>().map_err(|_| DataError::Parse {
                line: line_no,
                msg: format!("bad timestamp {t:?}"),
            })?),
            None => None,
        };
        out.push(InteractionRecord {
            user: fields[0].to_string(),
            item: fields[1].to_string(),
            rating,
            timestamp,
        });
    }
    if out.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(out)
}

// accepts "5" and "5.0"; half stars and anything outside 1..=5 are rejected
fn parse_rating(s: &str) -> Option<u8> {
    let v: f64 = s.parse().ok()?;
    if v.fract() != 0.0 || !(1.0..=5.0).contains(&v) {
        return None;
    }
    Some(v as u8)
}

/// Label 1 iff `rating >= threshold`.
pub fn binarize(records: &[InteractionRecord], threshold: u8) -> Vec<BinaryRecord> {
    records
        .iter()
        .map(|r| BinaryRecord {
            user: r.user.clone(),
            item: r.item.clone(),
            label: r.rating >= threshold,
        })
        .collect()
}
