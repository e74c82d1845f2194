//! Embedding export for external 2-D projection tools.
//!
//! One header line, then one row per user, item, user group and item group:
//! `entity,index,group,x_0,x_1,…`. Entity rows carry their hard group label;
//! group rows carry their own index.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, Side};

pub const HEADER: &str = "entity,index,group,embedding";

#[derive(Clone, Debug, PartialEq)]
pub struct ExportRow {
    pub entity: String,
    pub index: usize,
    pub group: usize,
    pub values: Vec<f64>,
}

pub fn export_embeddings(model: &Model) -> Result<Vec<ExportRow>> {
    let labels = model.group_labels()?;
    let p = &model.params;
    let mut rows = Vec::new();
    let mut push = |entity: &str, m: &crate::engine::Matrix, group: &dyn Fn(usize) -> usize| {
        for r in 0..m.rows() {
            rows.push(ExportRow {
                entity: entity.to_string(),
                index: r,
                group: group(r),
                values: m.row(r).to_vec(),
            });
        }
    };
    push("user", model.store.values(p.embedding(Side::User)), &|r| labels.user[r]);
    push("item", model.store.values(p.embedding(Side::Item)), &|r| labels.item[r]);
    push("user-group", model.store.values(p.user.group_emb), &|r| r);
    push("item-group", model.store.values(p.item.group_emb), &|r| r);
    Ok(rows)
}

pub fn write_export(path: &Path, rows: &[ExportRow]) -> Result<()> {
    let mut out = String::with_capacity(rows.len() * 64);
    out.push_str(HEADER);
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{}", r.entity, r.index, r.group);
        for v in &r.values {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_export(path: &Path) -> Result<Vec<ExportRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, HEADER)) => {}
        _ => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("expected header {HEADER:?}"),
            })
        }
    }
    let bad = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        msg,
    };
    lines
        .map(|(n, line)| {
            let mut f = line.split(',');
            let entity = f.next().unwrap_or_default().to_string();
            let mut int = |what: &str| -> Result<usize> {
                f.next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad(n, format!("missing or invalid {what}")))
            };
            let index = int("index")?;
            let group = int("group")?;
            let values = f
                .map(|s| s.parse::<f64>().map_err(|e| bad(n, format!("invalid component {s:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            Ok(ExportRow {
                entity,
                index,
                group,
                values,
            })
        })
        .collect()
}
