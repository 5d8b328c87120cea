//! Row-level JSONL dump and load. Every line is one row tagged with its table.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rusqlite::types::{Value as SqlValue, ValueRef};
use rusqlite::{params_from_iter, Connection};
use serde_json::{Map, Value};

use super::schema::TABLES;
use super::{Result, Store, StoreError};

fn columns(conn: &Connection, table: &str) -> Result<Vec<String>> {
    let mut stmt = conn.prepare(&format!("PRAGMA table_info({table})"))?;
    let names = stmt.query_map([], |r| r.get::<_, String>(1))?;
    Ok(names.collect::<rusqlite::Result<_>>()?)
}

fn to_json(v: ValueRef<'_>) -> Value {
    match v {
        ValueRef::Null => Value::Null,
        ValueRef::Integer(i) => Value::from(i),
        ValueRef::Real(f) => Value::from(f),
        ValueRef::Text(t) => Value::from(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => Value::from(hex::encode(b)),
    }
}

fn to_sql(v: &Value) -> Result<SqlValue> {
    Ok(match v {
        Value::Null => SqlValue::Null,
        Value::Bool(b) => SqlValue::Integer(i64::from(*b)),
        Value::Number(n) => match n.as_i64() {
            Some(i) => SqlValue::Integer(i),
            None => SqlValue::Real(n.as_f64().unwrap_or(f64::NAN)),
        },
        Value::String(s) => SqlValue::Text(s.clone()),
        other => return Err(StoreError::Query(format!("unsupported cell value {other}"))),
    })
}

impl Store {
    /// Writes every row, parents before children. Returns the row count.
    pub fn export_jsonl(&self, mut out: impl Write) -> Result<usize> {
        let conn = self.conn();
        let mut n = 0;
        for table in TABLES {
            let cols = columns(&conn, table)?;
            let mut stmt = conn.prepare(&format!("SELECT * FROM {table} ORDER BY rowid"))?;
            let mut rows = stmt.query([])?;
            while let Some(row) = rows.next()? {
                let mut obj = Map::new();
                obj.insert("table".into(), Value::from(*table));
                for (i, c) in cols.iter().enumerate() {
                    obj.insert(c.clone(), to_json(row.get_ref(i)?));
                }
                serde_json::to_writer(&mut out, &obj).map_err(|e| StoreError::Io(e.into()))?;
                out.write_all(b"\n")?;
                n += 1;
            }
        }
        out.flush()?;
        Ok(n)
    }

    /// Loads a dump produced by [`Store::export_jsonl`] in one transaction.
    pub fn import_jsonl(&self, input: impl BufRead) -> Result<usize> {
        self.write(|tx| {
            let mut known: HashMap<&str, Vec<String>> = HashMap::new();
            for table in TABLES {
                known.insert(table, columns(tx, table)?);
            }
            let mut n = 0;
            for (i, line) in input.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let bad = |m: String| StoreError::Query(format!("line {}: {m}", i + 1));
                let mut obj: Map<String, Value> = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
                let table = match obj.remove("table") {
                    Some(Value::String(t)) => t,
                    _ => return Err(bad("missing \"table\" discriminator".into())),
                };
                let cols = known
                    .get(table.as_str())
                    .ok_or_else(|| bad(format!("unknown table {table:?}")))?;
                let mut names = Vec::new();
                let mut values = Vec::new();
                for (k, v) in &obj {
                    if !cols.contains(k) {
                        return Err(bad(format!("unknown column {k:?} for {table}")));
                    }
                    names.push(k.as_str());
                    values.push(to_sql(v)?);
                }
                let placeholders: Vec<String> = (1..=names.len()).map(|i| format!("?{i}")).collect();
                tx.execute(
                    &format!(
                        "INSERT INTO {table} ({}) VALUES ({})",
                        names.join(", "),
                        placeholders.join(", ")
                    ),
                    params_from_iter(values),
                )?;
                n += 1;
            }
            Ok(n)
        })
    }
}
