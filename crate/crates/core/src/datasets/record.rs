use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::taxonomy::{LabelTaxonomy, OTHERS, UNKNOWN};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageLabel {
    Relevant,
    Irrelevant,
    Damaged,
    NotDamaged,
}

impl ImageLabel {
    pub fn is_relevant(self) -> bool {
        !matches!(self, ImageLabel::Irrelevant)
    }
}

/// Pixel rectangle; synthetic ground truth for where damage was drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DamageBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl DamageBox {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }

    /// Grows the box by `margin` on every side, clipped to the canvas.
    pub fn dilate(&self, margin: u32, canvas_width: u32, canvas_height: u32) -> DamageBox {
        let x0 = self.x.saturating_sub(margin);
        let y0 = self.y.saturating_sub(margin);
        let x1 = (self.x + self.width + margin).min(canvas_width);
        let y1 = (self.y + self.height + margin).min(canvas_height);
        DamageBox {
            x: x0,
            y: y0,
            width: x1.saturating_sub(x0),
            height: y1.saturating_sub(y0),
        }
    }
}

/// One customer claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRecord {
    pub id: String,
    #[serde(default)]
    pub comment: String,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub image_path: Option<String>,
    #[serde(default)]
    pub image_label: Option<ImageLabel>,
    #[serde(default)]
    pub damage_box: Option<DamageBox>,
}

impl FeedbackRecord {
    pub fn text(id: impl Into<String>, comment: impl Into<String>, label: Option<&str>) -> Self {
        Self {
            id: id.into(),
            comment: comment.into(),
            label: label.map(str::to_string),
            image_path: None,
            image_label: None,
            damage_box: None,
        }
    }

    pub fn has_comment(&self) -> bool {
        !self.comment.trim().is_empty()
    }

    fn check(&self, taxonomy: &LabelTaxonomy, line: usize) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::MalformedLine {
                line,
                message: "empty id".into(),
            });
        }
        if let Some(label) = &self.label {
            if !taxonomy.accepts_label(label) {
                return Err(Error::UnknownLabel {
                    line,
                    label: label.clone(),
                });
            }
            if label == UNKNOWN && self.has_comment() {
                return Err(Error::MalformedLine {
                    line,
                    message: "label Unknown requires an empty comment".into(),
                });
            }
        }
        if self.damage_box.is_some() && self.image_label != Some(ImageLabel::Damaged) {
            return Err(Error::MalformedLine {
                line,
                message: "damage_box is only allowed on damaged images".into(),
            });
        }
        Ok(())
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<FeedbackRecord>> {
    load_dataset_with(path, &LabelTaxonomy::default())
}

pub fn load_dataset_with(path: impl AsRef<Path>, taxonomy: &LabelTaxonomy) -> Result<Vec<FeedbackRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, taxonomy)
}

/// Parses line-delimited JSON records. Blank lines are skipped; line numbers
/// in errors are 1-based.
pub fn parse_dataset(text: &str, taxonomy: &LabelTaxonomy) -> Result<Vec<FeedbackRecord>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: FeedbackRecord = serde_json::from_str(raw).map_err(|e| Error::MalformedLine {
            line,
            message: e.to_string(),
        })?;
        record.check(taxonomy, line)?;
        if !ids.insert(record.id.clone()) {
            return Err(Error::DuplicateId { line, id: record.id });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn save_dataset(records: &[FeedbackRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Drops `Unknown`, `Others` and unlabeled records.
pub fn filter_for_training(records: &[FeedbackRecord]) -> Vec<FeedbackRecord> {
    records
        .iter()
        .filter(|r| matches!(r.label.as_deref(), Some(l) if l != UNKNOWN && l != OTHERS))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::LATE_DELIVERY;

    fn parse(text: &str) -> Result<Vec<FeedbackRecord>> {
        parse_dataset(text, &LabelTaxonomy::default())
    }

    #[test]
    fn three_lines_in_order() {
        let text = r#"{"id":"a","comment":"late again","label":"Late Delivery"}
{"id":"b","comment":"","label":"Unknown"}
{"id":"c","comment":"box crushed","label":"Poor Packaging/Handling/Damaged","image_path":"images/c.ppm","image_label":"damaged","damage_box":{"x":1,"y":2,"width":3,"height":4}}
"#;
        let records = parse(text).unwrap();
        let ids: Vec<_> = records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(records[2].damage_box.unwrap().height, 4);
    }

    #[test]
    fn unknown_label_names_line_and_label() {
        let text = "{\"id\":\"a\",\"comment\":\"x\"}\n{\"id\":\"b\",\"comment\":\"y\",\"label\":\"Broken Stuff\"}\n";
        let err = parse(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("Broken Stuff"), "{msg}");
    }

    #[test]
    fn empty_file_is_empty() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn duplicate_ids_and_malformed_lines() {
        let dup = "{\"id\":\"a\"}\n{\"id\":\"a\"}\n";
        assert!(matches!(parse(dup), Err(Error::DuplicateId { line: 2, .. })));
        let bad = "{\"id\":\"a\"}\nnot json\n";
        assert!(matches!(parse(bad), Err(Error::MalformedLine { line: 2, .. })));
        let unknown_with_comment = "{\"id\":\"a\",\"comment\":\"hi\",\"label\":\"Unknown\"}\n";
        assert!(parse(unknown_with_comment).is_err());
        let stray_box = "{\"id\":\"a\",\"image_label\":\"not_damaged\",\"damage_box\":{\"x\":0,\"y\":0,\"width\":1,\"height\":1}}\n";
        assert!(parse(stray_box).is_err());
    }

    #[test]
    fn filter_drops_non_model_labels() {
        let records = vec![
            FeedbackRecord::text("1", "", Some(UNKNOWN)),
            FeedbackRecord::text("2", "late", Some(LATE_DELIVERY)),
            FeedbackRecord::text("3", "odd", Some(OTHERS)),
            FeedbackRecord::text("4", "meh", None),
        ];
        let kept = filter_for_training(&records);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "2");
        assert!(filter_for_training(&records[..1]).is_empty());
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let mut r = FeedbackRecord::text("x\"1", "Didn\u{2019}t arrive \u{2014} ugh", Some(LATE_DELIVERY));
        r.image_path = Some("images/x.ppm".into());
        r.image_label = Some(ImageLabel::Damaged);
        r.damage_box = Some(DamageBox {
            x: 3,
            y: 4,
            width: 5,
            height: 6,
        });
        let records = vec![r, FeedbackRecord::text("2", "", Some(UNKNOWN))];
        save_dataset(&records, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), records);
    }

    #[test]
    fn dilation_clamps_to_canvas() {
        let b = DamageBox {
            x: 2,
            y: 60,
            width: 4,
            height: 3,
        };
        let d = b.dilate(4, 64, 64);
        assert_eq!(
            d,
            DamageBox {
                x: 0,
                y: 56,
                width: 10,
                height: 8
            }
        );
    }
}
