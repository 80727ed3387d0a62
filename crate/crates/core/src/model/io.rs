//! Plain-text model files.
//!
//! ```text
//! # meta family grid
//! variables 3
//! cardinalities 2 2 2
//! factors 2
//! factor 0 1
//! 0.5 -0.5 -0.5 0.5
//! factor 1 2
//! 0.0 0.0 0.0 0.0
//! ```
//!
//! Tables are row-major over the scope (last variable fastest) and hold
//! natural-log potentials. `# meta <key> <value>` comments carry generator
//! metadata; other `#` lines are ignored.

use std::fmt::Write as _;
use std::path::Path;

use super::FactorModel;
use crate::error::{Error, Result};
use crate::table::table_len;

impl FactorModel {
    pub fn to_text(&self) -> String {
        let mut out = String::from("# kikuchi factor model\n");
        for (k, v) in &self.meta {
            writeln!(out, "# meta {k} {v}").unwrap();
        }
        writeln!(out, "variables {}", self.cards.len()).unwrap();
        let cards: Vec<String> = self.cards.iter().map(|c| c.to_string()).collect();
        writeln!(out, "cardinalities {}", cards.join(" ")).unwrap();
        writeln!(out, "factors {}", self.factors.len()).unwrap();
        for f in &self.factors {
            let scope: Vec<String> = f.scope.iter().map(|v| v.to_string()).collect();
            writeln!(out, "factor {}", scope.join(" ")).unwrap();
            let table: Vec<String> = f.log_table.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", table.join(" ")).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<FactorModel> {
        let mut meta = Vec::new();
        // (line number, content) of non-comment lines
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(kv) = rest.trim().strip_prefix("meta ") {
                    let mut parts = kv.trim().splitn(2, ' ');
                    let key = parts.next().unwrap_or_default().to_string();
                    let value = parts.next().unwrap_or_default().to_string();
                    meta.push((key, value));
                }
                continue;
            }
            if !line.is_empty() {
                lines.push((i + 1, line));
            }
        }
        let mut it = lines.into_iter();
        let last_line = text.lines().count();
        let mut next = |what: &str| {
            it.next().ok_or_else(|| Error::Parse { line: last_line, msg: format!("unexpected end of file, expected {what}") })
        };

        let header = |line: usize, content: &str, key: &str| -> Result<Vec<usize>> {
            let mut tokens = content.split_whitespace();
            if tokens.next() != Some(key) {
                return Err(Error::Parse { line, msg: format!("expected `{key}` line") });
            }
            tokens
                .map(|t| t.parse::<usize>().map_err(|_| Error::Parse { line, msg: format!("bad integer {t:?}") }))
                .collect()
        };

        let (line, content) = next("variables")?;
        let nv = header(line, content, "variables")?;
        if nv.len() != 1 {
            return Err(Error::Parse { line, msg: "`variables` takes one count".into() });
        }
        let (line, content) = next("cardinalities")?;
        let cards = header(line, content, "cardinalities")?;
        if cards.len() != nv[0] {
            return Err(Error::Parse { line, msg: format!("{} cardinalities for {} variables", cards.len(), nv[0]) });
        }
        let mut model = FactorModel::new(cards).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let (line, content) = next("factors")?;
        let nf = header(line, content, "factors")?;
        if nf.len() != 1 {
            return Err(Error::Parse { line, msg: "`factors` takes one count".into() });
        }
        for _ in 0..nf[0] {
            let (line, content) = next("factor")?;
            let scope = header(line, content, "factor")?;
            if let Some(&v) = scope.iter().find(|&&v| v >= model.num_vars()) {
                return Err(Error::Parse { line, msg: format!("unknown variable index {v}") });
            }
            if scope.is_empty() || scope.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Parse { line, msg: "factor scope must be non-empty and strictly increasing".into() });
            }
            let expected = table_len(&scope, model.cards());
            let (line, content) = next("table")?;
            let table = content
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| Error::Parse { line, msg: format!("bad number {t:?}") }))
                .collect::<Result<Vec<_>>>()?;
            if table.len() != expected {
                return Err(Error::Parse {
                    line,
                    msg: format!("table has {} entries, scope {scope:?} needs {expected}", table.len()),
                });
            }
            model.add_factor(scope, table).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        }
        if let Some((line, _)) = it.next() {
            return Err(Error::Parse { line, msg: "trailing content after last factor".into() });
        }
        for (k, v) in meta {
            model.meta.insert(k, v);
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FactorModel> {
        FactorModel::from_text(&std::fs::read_to_string(path)?)
    }
}
