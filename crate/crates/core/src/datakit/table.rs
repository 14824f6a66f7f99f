use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Token → fixed-width vector map, in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    dim: usize,
    tokens: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let token = token.into();
        if vector.len() != self.dim {
            return Err(Error::Data(format!(
                "token {token:?}: expected {} values, got {}",
                self.dim,
                vector.len()
            )));
        }
        if self.index.contains_key(&token) {
            return Err(Error::Data(format!("duplicate token {token:?}")));
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.vectors.push(vector);
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|i| self.vectors[*i].as_slice())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.tokens.iter().map(String::as_str).zip(self.vectors.iter().map(Vec::as_slice))
    }

    /// Mean of the token vectors.
    pub fn mean_of<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::Data("mean of zero tokens".into()));
        }
        let mut out = vec![0.0; self.dim];
        for t in tokens {
            let v = self
                .get(t.as_ref())
                .ok_or_else(|| Error::Data(format!("token {:?} not in word table", t.as_ref())))?;
            for (o, x) in out.iter_mut().zip(v) {
                *o += x;
            }
        }
        let n = tokens.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        Ok(out)
    }

    /// Parses the text format: optional `<count> <dim>` header, then
    /// `<token> <v1> … <vdim>` rows.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();
        let mut declared: Option<(usize, usize)> = None;
        if let Some((_, first)) = lines.peek() {
            let fields: Vec<&str> = first.split_whitespace().collect();
            if fields.len() == 2 {
                if let (Ok(c), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                    declared = Some((c, d));
                    lines.next();
                }
            }
        }
        let mut table: Option<Self> = declared.map(|(_, d)| Self::new(d));
        for (i, line) in lines {
            let lineno = i + 1;
            let mut fields = line.split_whitespace();
            let token = fields.next().expect("nonblank line has a field");
            let values = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| parse_err(lineno, format!("non-numeric value {f:?}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.is_empty() {
                return Err(parse_err(lineno, format!("token {token:?} has no values")));
            }
            let t = table.get_or_insert_with(|| Self::new(values.len()));
            if values.len() != t.dim {
                return Err(parse_err(
                    lineno,
                    format!("expected {} values, got {}", t.dim, values.len()),
                ));
            }
            t.insert(token, values).map_err(|e| parse_err(lineno, e.to_string()))?;
        }
        let table = table.ok_or_else(|| parse_err(0, "empty word-vector file".into()))?;
        if let Some((count, _)) = declared {
            if count != table.len() {
                return Err(parse_err(
                    1,
                    format!("header declares {count} rows, file has {}", table.len()),
                ));
            }
        }
        Ok(table)
    }

    /// Header line plus one row per token, values written with 17
    /// significant digits so that parsing restores them exactly.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.len(), self.dim);
        for (tok, v) in self.iter() {
            s.push_str(tok);
            for x in v {
                write!(s, " {x:.16e}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

pub fn load_word_vectors(path: &Path) -> Result<EmbeddingTable> {
    let text = std::fs::read_to_string(path)?;
    EmbeddingTable::parse(&text, path)
}

pub fn save_word_vectors(table: &EmbeddingTable, path: &Path) -> Result<()> {
    std::fs::write(path, table.to_text())?;
    Ok(())
}
