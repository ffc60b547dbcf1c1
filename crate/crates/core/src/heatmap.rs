//! Per-instance score export for heatmaps and selection inspection.

use std::path::Path;

use serde::Serialize;

use crate::aps::{bag_seed, SelectionConfig};
use crate::data::Bag;
use crate::encoders::Model;
use crate::error::{Error, Result};

pub const HEATMAP_HEADER: [&str; 10] = [
    "index",
    "x",
    "y",
    "p",
    "s_rel",
    "s_div",
    "s_unc",
    "s_final",
    "attention",
    "selected",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstanceRecord {
    pub index: usize,
    pub coord: Option<[i32; 2]>,
    /// Instance probability: `σ(logit)` for one class, the top class
    /// probability otherwise.
    pub p: f64,
    pub s_rel: f64,
    pub s_div: f64,
    pub s_unc: f64,
    pub s_final: f64,
    pub attention: f64,
    pub selected: bool,
}

/// Scores every instance of `bag` under `model`, in instance order.
pub fn instance_records(
    model: &Model,
    bag: &Bag,
    selection: &SelectionConfig,
    seed: u64,
) -> Result<Vec<InstanceRecord>> {
    if bag.dim() != model.config().dim {
        return Err(Error::Config(format!(
            "bag {} has dimension {} but the checkpoint expects {}",
            bag.id,
            bag.dim(),
            model.config().dim
        )));
    }
    let pred = model.predict(&bag.matrix(), selection, bag_seed(seed, &bag.id))?;
    let sel = &pred.selection;
    let mask = sel.selected_mask();
    Ok((0..bag.len())
        .map(|i| InstanceRecord {
            index: i,
            coord: bag.coords().map(|c| c[i]),
            p: pred
                .instance_logits
                .probabilities(i)
                .into_iter()
                .fold(0.0, f64::max),
            s_rel: sel.s_rel[i],
            s_div: sel.s_div[i],
            s_unc: sel.s_unc[i],
            s_final: sel.s_final[i],
            attention: sel.attention[i],
            selected: mask[i],
        })
        .collect())
}

/// Like [`instance_records`] but requires patch coordinates.
pub fn export_heatmap(
    model: &Model,
    bag: &Bag,
    selection: &SelectionConfig,
    seed: u64,
) -> Result<Vec<InstanceRecord>> {
    if bag.coords().is_none() {
        return Err(Error::Config(format!(
            "bag {} has no patch coordinates; use `select` for a coordinate-free score CSV",
            bag.id
        )));
    }
    instance_records(model, bag, selection, seed)
}

/// Writes records as CSV. With `with_coords == false` the x and y columns
/// are omitted.
pub fn write_records(
    path: impl AsRef<Path>,
    records: &[InstanceRecord],
    with_coords: bool,
) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let header: Vec<&str> = HEATMAP_HEADER
        .iter()
        .copied()
        .filter(|h| with_coords || (*h != "x" && *h != "y"))
        .collect();
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.index.to_string()];
        if with_coords {
            let [x, y] = r
                .coord
                .ok_or_else(|| Error::Config(format!("record {} has no coordinates", r.index)))?;
            row.push(x.to_string());
            row.push(y.to_string());
        }
        row.extend([
            r.p.to_string(),
            r.s_rel.to_string(),
            r.s_div.to_string(),
            r.s_unc.to_string(),
            r.s_final.to_string(),
            r.attention.to_string(),
            u8::from(r.selected).to_string(),
        ]);
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{EncoderConfig, EncoderKind, ModelConfig};

    fn bag(with_coords: bool) -> Bag {
        let f: Vec<f32> = (0..24).map(|i| ((i * 7) % 5) as f32 - 2.0).collect();
        let b = Bag::new("h", 6, 4, f, None).unwrap();
        if with_coords {
            b.with_coords((0..6).map(|i| [i % 3, i / 3]).collect())
                .unwrap()
        } else {
            b
        }
    }

    #[test]
    fn zero_model_gives_half_probabilities() {
        let model =
            Model::zeroed(ModelConfig::new(EncoderConfig::new(EncoderKind::Gru), 4)).unwrap();
        let recs = export_heatmap(&model, &bag(true), &SelectionConfig::default(), 0).unwrap();
        assert_eq!(recs.len(), 6);
        assert!(recs.iter().all(|r| r.p == 0.5));
        let total: f64 = recs.iter().map(|r| r.attention).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn selected_flags_match_lambda() {
        let model = Model::new(
            ModelConfig::new(EncoderConfig::new(EncoderKind::Lstm), 4),
            3,
        )
        .unwrap();
        let sel = SelectionConfig {
            lambda: 2,
            ..SelectionConfig::default()
        };
        let recs = instance_records(&model, &bag(false), &sel, 0).unwrap();
        assert_eq!(recs.iter().filter(|r| r.selected).count(), 2);
        assert!(recs.iter().enumerate().all(|(i, r)| r.index == i));
    }

    #[test]
    fn missing_coords_is_a_config_error() {
        let model =
            Model::zeroed(ModelConfig::new(EncoderConfig::new(EncoderKind::Gru), 4)).unwrap();
        let err = export_heatmap(&model, &bag(false), &SelectionConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("select"));
    }

    #[test]
    fn csv_header_is_fixed() {
        let dir = tempfile::tempdir().unwrap();
        let model =
            Model::zeroed(ModelConfig::new(EncoderConfig::new(EncoderKind::Gru), 4)).unwrap();
        let recs = export_heatmap(&model, &bag(true), &SelectionConfig::default(), 0).unwrap();
        let path = dir.path().join("h.csv");
        write_records(&path, &recs, true).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("index,x,y,p,s_rel,s_div,s_unc,s_final,attention,selected\n"));
        assert_eq!(text.lines().count(), 7);
    }
}
