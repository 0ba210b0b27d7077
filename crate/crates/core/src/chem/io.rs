//! Corpus and score-table file formats.
//!
//! Corpus: UTF-8 text, one SMILES per line; blank lines and lines starting
//! with `#` are ignored. Score table: tab-separated with a mandatory header
//! `smiles<TAB>name_1<TAB>...<TAB>name_d`, scores as decimal floats.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// A non-comment corpus line with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusLine {
    pub line: usize,
    pub smiles: String,
}

pub fn parse_corpus(text: &str) -> Vec<CorpusLine> {
    text.lines()
        .enumerate()
        .filter_map(|(i, l)| {
            let t = l.trim();
            (!t.is_empty() && !t.starts_with('#')).then(|| CorpusLine {
                line: i + 1,
                smiles: t.to_string(),
            })
        })
        .collect()
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusLine>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    Ok(parse_corpus(&text))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub names: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl ScoreTable {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("smiles");
        for n in &self.names {
            out.push('\t');
            out.push_str(n);
        }
        out.push('\n');
        for (smi, vals) in &self.rows {
            out.push_str(smi);
            for v in vals {
                // shortest representation that round-trips
                write!(out, "\t{v:?}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, IoError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let Some((_, header)) = lines.next() else {
            return Err(IoError::Format {
                line: 1,
                msg: "missing header".into(),
            });
        };
        let mut cols = header.split('\t');
        if cols.next() != Some("smiles") {
            return Err(IoError::Format {
                line: 1,
                msg: "header must start with `smiles`".into(),
            });
        }
        let names: Vec<String> = cols.map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, line) in lines {
            let mut fields = line.split('\t');
            let smi = fields.next().unwrap_or_default().to_string();
            let vals = fields
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|e| IoError::Format {
                        line: i + 1,
                        msg: format!("bad score `{f}`: {e}"),
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            if vals.len() != names.len() {
                return Err(IoError::Format {
                    line: i + 1,
                    msg: format!("expected {} scores, found {}", names.len(), vals.len()),
                });
            }
            rows.push((smi, vals));
        }
        Ok(ScoreTable { names, rows })
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_tsv(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_skips_comments_and_blanks() {
        let lines = parse_corpus("# header\nCC\n\n  CCO \n#x\n");
        assert_eq!(
            lines,
            vec![
                CorpusLine {
                    line: 2,
                    smiles: "CC".into()
                },
                CorpusLine {
                    line: 4,
                    smiles: "CCO".into()
                }
            ]
        );
    }

    #[test]
    fn score_table_round_trip() {
        let t = ScoreTable {
            names: vec!["size".into(), "plogp".into()],
            rows: vec![
                ("CC".into(), vec![0.1, 0.30000000000000004]),
                ("C".into(), vec![1.0, -2.5]),
            ],
        };
        let back = ScoreTable::from_tsv(&t.to_tsv()).unwrap();
        assert_eq!(back, t);
        assert!(ScoreTable::from_tsv("CC\t1\n").is_err());
        assert!(ScoreTable::from_tsv("smiles\ta\nCC\t1\t2\n").is_err());
        assert!(ScoreTable::from_tsv("smiles\ta\nCC\tx\n").is_err());
    }
}
