//! Ingestion of classic MIL benchmark tables (MUSK1/2, ELEPHANT, ...): one
//! instance per CSV row with a bag identifier column, a label column and
//! the remaining columns as features.

use std::collections::HashMap;
use std::path::Path;

use super::bag::Bag;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LabelColumn {
    /// The column repeats the bag label on every row; rows of one bag must
    /// agree.
    #[default]
    Bag,
    /// The column holds instance labels; a bag is positive if any instance
    /// is.
    Instance,
}

#[derive(Clone, Debug)]
pub struct MuskOptions {
    pub bag_column: usize,
    pub label_column: usize,
    pub has_header: bool,
    pub label_kind: LabelColumn,
}

impl Default for MuskOptions {
    /// The column layout of the common MUSK1/MUSK2 CSV exports: label first,
    /// then bag id.
    fn default() -> Self {
        MuskOptions {
            bag_column: 1,
            label_column: 0,
            has_header: false,
            label_kind: LabelColumn::Bag,
        }
    }
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn parse_label(s: &str) -> Option<bool> {
    match s.trim() {
        "1" | "1.0" | "+1" | "true" => Some(true),
        "0" | "0.0" | "-1" | "false" => Some(false),
        _ => None,
    }
}

/// Groups rows into bags in order of first appearance.
pub fn load_musk_style(path: impl AsRef<Path>, opts: &MuskOptions) -> Result<Vec<Bag>> {
    let path = path.as_ref();
    if opts.bag_column == opts.label_column {
        return Err(Error::Config("bag and label columns must differ".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;

    struct Pending {
        id: String,
        features: Vec<f32>,
        rows: usize,
        label: bool,
    }
    let mut order: Vec<Pending> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut width: Option<usize> = None;

    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let csv_err = |message: String| Error::Csv {
            path: path.to_path_buf(),
            line,
            message,
        };
        if record.iter().all(str::is_empty) {
            continue;
        }
        let cols = record.len();
        match width {
            None => width = Some(cols),
            Some(w) if w != cols => {
                return Err(csv_err(format!("expected {w} columns, found {cols}")));
            }
            _ => {}
        }
        if opts.bag_column >= cols || opts.label_column >= cols {
            return Err(csv_err(format!("row has only {cols} columns")));
        }
        let bag_id = record[opts.bag_column].to_string();
        let label = parse_label(&record[opts.label_column]).ok_or_else(|| {
            csv_err(format!(
                "unparseable label {:?}",
                &record[opts.label_column]
            ))
        })?;
        let mut feats = Vec::with_capacity(cols - 2);
        for (c, field) in record.iter().enumerate() {
            if c == opts.bag_column || c == opts.label_column {
                continue;
            }
            let v: f64 = field
                .parse()
                .map_err(|_| csv_err(format!("column {c}: not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(csv_err(format!("column {c}: non-finite value")));
            }
            feats.push(v as f32);
        }
        let slot = *index.entry(bag_id.clone()).or_insert_with(|| {
            order.push(Pending {
                id: bag_id.clone(),
                features: Vec::new(),
                rows: 0,
                label,
            });
            order.len() - 1
        });
        let bag = &mut order[slot];
        match opts.label_kind {
            LabelColumn::Bag if bag.label != label => {
                return Err(csv_err(format!("bag {bag_id} has conflicting labels")));
            }
            LabelColumn::Instance => bag.label |= label,
            LabelColumn::Bag => {}
        }
        bag.features.extend(feats);
        bag.rows += 1;
    }

    let d = width.map_or(0, |w| w - 2);
    order
        .into_iter()
        .map(|p| Bag::new(sanitize(&p.id), p.rows, d, p.features, Some(p.label)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn csv(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn groups_rows_into_bags() {
        let f = csv("1,a,0.5,1.5,2\n1,a,1,2,3\n0,b,4,5,6\n0,b,7,8,9\n");
        let bags = load_musk_style(f.path(), &MuskOptions::default()).unwrap();
        assert_eq!(bags.len(), 2);
        assert_eq!(bags[0].id, "a");
        assert_eq!(bags[0].dim(), 3);
        assert_eq!(bags[0].len(), 2);
        assert_eq!(bags[0].label, Some(true));
        assert_eq!(bags[1].features(), &[4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn conflicting_bag_labels_are_rejected() {
        let f = csv("1,a,0.5\n0,a,1\n");
        let err = load_musk_style(f.path(), &MuskOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Csv { line: 2, .. }), "{err}");
    }

    #[test]
    fn instance_labels_use_any_positive_rule() {
        let f = csv("0,a,0.5\n1,a,1\n0,b,2\n");
        let opts = MuskOptions {
            label_kind: LabelColumn::Instance,
            ..MuskOptions::default()
        };
        let bags = load_musk_style(f.path(), &opts).unwrap();
        assert_eq!(bags[0].label, Some(true));
        assert_eq!(bags[1].label, Some(false));
    }

    #[test]
    fn ragged_rows_report_line() {
        let f = csv("1,a,0.5,1\n1,a,1,2\n0,b,1\n");
        let err = load_musk_style(f.path(), &MuskOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Csv { line: 3, .. }), "{err}");
    }

    #[test]
    fn header_and_custom_columns() {
        let f = csv("f1,bag,f2,y\n1.0,x,2.0,1\n3.0,x,4.0,1\n");
        let opts = MuskOptions {
            bag_column: 1,
            label_column: 3,
            has_header: true,
            label_kind: LabelColumn::Bag,
        };
        let bags = load_musk_style(f.path(), &opts).unwrap();
        assert_eq!(bags[0].features(), &[1.0, 2.0, 3.0, 4.0]);
    }
}
