//! In-memory record files.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::error::{invalid, Error, Result};

/// A single cell of a record file.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Missing,
    Int(i64),
    Real(f64),
    Text(String),
}

impl Value {
    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Total order used for block keys: Missing < Int < Real < Text.
    pub fn total_cmp(&self, other: &Self) -> Ordering {
        fn rank(v: &Value) -> u8 {
            match v {
                Value::Missing => 0,
                Value::Int(_) => 1,
                Value::Real(_) => 2,
                Value::Text(_) => 3,
            }
        }
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Real(a), Value::Real(b)) => a.total_cmp(b),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            _ => rank(self).cmp(&rank(other)),
        }
    }

    /// Parse a textual cell: empty is missing, then integer, then real, else text.
    pub fn parse(s: &str) -> Self {
        let t = s.trim();
        if t.is_empty() {
            Value::Missing
        } else if let Ok(i) = t.parse::<i64>() {
            Value::Int(i)
        } else if let Ok(r) = t.parse::<f64>() {
            Value::Real(r)
        } else {
            Value::Text(t.to_string())
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Missing => Ok(()),
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

/// A table of records: named columns, one `Vec<Value>` per row.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordFile {
    fields: Vec<String>,
    rows: Vec<Vec<Value>>,
}

impl RecordFile {
    pub fn new(fields: Vec<String>) -> Result<Self> {
        for (i, f) in fields.iter().enumerate() {
            if fields[..i].contains(f) {
                return Err(invalid(alloc::format!("duplicate field `{f}`")));
            }
        }
        Ok(Self { fields, rows: Vec::new() })
    }

    pub fn push(&mut self, row: Vec<Value>) -> Result<()> {
        if row.len() != self.fields.len() {
            return Err(invalid(alloc::format!(
                "row has {} values, file has {} fields",
                row.len(),
                self.fields.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn fields(&self) -> &[String] {
        &self.fields
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn field_index(&self, name: &str) -> Result<usize> {
        self.fields
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| Error::MissingField(name.to_string()))
    }

    pub fn value(&self, row: usize, col: usize) -> &Value {
        &self.rows[row][col]
    }

    /// A numeric column; missing or non-numeric cells are an error.
    pub fn real_column(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.field_index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[c].as_f64()
                    .ok_or_else(|| invalid(alloc::format!("row {i} of `{name}` is not numeric")))
            })
            .collect()
    }

    /// A copy of the file restricted to `rows` (in the given order).
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self { fields: self.fields.clone(), rows: rows.iter().map(|&i| self.rows[i].clone()).collect() }
    }
}
