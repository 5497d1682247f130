//! Cascade files: UTF-8 JSON, `format_version` 1.
//!
//! ```json
//! {"format_version":1,"feature_kind":"lbp","base_window":[24,24],
//!  "stages":[{"threshold":-0.4,"weak":[{"cell":[2,3,4,4],"mask":"<64 hex>","pass":0.7,"fail":-0.7}]}]}
//! ```
//!
//! Haar weak classifiers carry `rects` (`[x,y,w,h,weight]` each), `threshold`,
//! `left` and `right`. LBP masks are 32 bytes in hex; byte `i` holds codes
//! `8i..8i+7`, lowest code in the least significant bit.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    CascadeError, CascadeModel, FeatureKind, HaarFeature, LbpFeature, LbpMask, Result, Stage, WeakClassifier, WeightedRect,
};
use crate::imaging::Rect;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireModel {
    format_version: u64,
    feature_kind: FeatureKind,
    base_window: [u32; 2],
    stages: Vec<WireStage>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireStage {
    threshold: f64,
    weak: Vec<WireWeak>,
}

#[derive(Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireWeak {
    #[serde(skip_serializing_if = "Option::is_none")]
    rects: Option<Vec<[i64; 5]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    left: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    right: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cell: Option<[u32; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fail: Option<f64>,
}

fn mask_to_hex(m: &LbpMask) -> String {
    let bytes: Vec<u8> = m.0.iter().flat_map(|w| w.to_le_bytes()).collect();
    hex::encode(bytes)
}

fn mask_from_hex(s: &str) -> std::result::Result<LbpMask, String> {
    if s.len() != 64 {
        return Err(format!("mask must be 64 hex characters, got {}", s.len()));
    }
    let bytes = hex::decode(s).map_err(|e| format!("mask: {e}"))?;
    let mut words = [0u64; 4];
    for (i, w) in words.iter_mut().enumerate() {
        *w = u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().expect("8 bytes"));
    }
    Ok(LbpMask(words))
}

fn to_wire(model: &CascadeModel) -> WireModel {
    let stages = model
        .stages()
        .iter()
        .map(|st| WireStage {
            threshold: st.threshold,
            weak: st
                .weak
                .iter()
                .map(|w| match w {
                    WeakClassifier::Stump { feature, threshold, left, right } => WireWeak {
                        rects: Some(
                            feature
                                .rects()
                                .iter()
                                .map(|r| {
                                    let b = r.rect;
                                    [b.x.into(), b.y.into(), b.w.into(), b.h.into(), r.weight.into()]
                                })
                                .collect(),
                        ),
                        threshold: Some(*threshold),
                        left: Some(*left),
                        right: Some(*right),
                        ..Default::default()
                    },
                    WeakClassifier::Lbp { feature, mask, pass, fail } => {
                        let c = feature.cell();
                        WireWeak {
                            cell: Some([c.x, c.y, c.w, c.h]),
                            mask: Some(mask_to_hex(mask)),
                            pass: Some(*pass),
                            fail: Some(*fail),
                            ..Default::default()
                        }
                    }
                })
                .collect(),
        })
        .collect();
    WireModel {
        format_version: FORMAT_VERSION,
        feature_kind: model.feature_kind(),
        base_window: [model.base_window().0, model.base_window().1],
        stages,
    }
}

fn from_wire(w: WireModel) -> Result<CascadeModel> {
    if w.format_version != FORMAT_VERSION {
        return Err(CascadeError::Version(w.format_version));
    }
    let base = (w.base_window[0], w.base_window[1]);
    let mut stages = Vec::with_capacity(w.stages.len());
    for (si, st) in w.stages.into_iter().enumerate() {
        let mut weak = Vec::with_capacity(st.weak.len());
        for (wi, ww) in st.weak.into_iter().enumerate() {
            let err = |message: String| CascadeError::Validation { stage: si, weak: Some(wi), message };
            let need = |v: Option<f64>, name: &str| v.ok_or_else(|| err(format!("missing `{name}`")));
            let c = match w.feature_kind {
                FeatureKind::Haar => {
                    if ww.cell.is_some() || ww.mask.is_some() || ww.pass.is_some() || ww.fail.is_some() {
                        return Err(err("lbp fields in a haar classifier".into()));
                    }
                    let raw = ww.rects.ok_or_else(|| err("missing `rects`".into()))?;
                    let mut rects = Vec::with_capacity(raw.len());
                    for r in raw {
                        let coord = |v: i64| u32::try_from(v).map_err(|_| err(format!("bad rect coordinate {v}")));
                        let weight = i32::try_from(r[4]).map_err(|_| err(format!("bad weight {}", r[4])))?;
                        rects.push(WeightedRect {
                            rect: Rect::new(coord(r[0])?, coord(r[1])?, coord(r[2])?, coord(r[3])?),
                            weight,
                        });
                    }
                    let feature = HaarFeature::new(rects, base).map_err(|e| err(e.to_string()))?;
                    WeakClassifier::Stump {
                        feature,
                        threshold: need(ww.threshold, "threshold")?,
                        left: need(ww.left, "left")?,
                        right: need(ww.right, "right")?,
                    }
                }
                FeatureKind::Lbp => {
                    if ww.rects.is_some() || ww.threshold.is_some() || ww.left.is_some() || ww.right.is_some() {
                        return Err(err("haar fields in an lbp classifier".into()));
                    }
                    let [x, y, cw, ch] = ww.cell.ok_or_else(|| err("missing `cell`".into()))?;
                    let feature = LbpFeature::new(Rect::new(x, y, cw, ch), base).map_err(|e| err(e.to_string()))?;
                    let mask = mask_from_hex(&ww.mask.ok_or_else(|| err("missing `mask`".into()))?).map_err(err)?;
                    WeakClassifier::Lbp { feature, mask, pass: need(ww.pass, "pass")?, fail: need(ww.fail, "fail")? }
                }
            };
            weak.push(c);
        }
        stages.push(Stage { weak, threshold: st.threshold });
    }
    CascadeModel::new(w.feature_kind, base, stages)
}

pub fn save_cascade<W: Write>(model: &CascadeModel, mut sink: W) -> Result<()> {
    let text = serde_json::to_string_pretty(&to_wire(model)).expect("cascade serializes");
    sink.write_all(text.as_bytes())?;
    sink.write_all(b"\n")?;
    Ok(())
}

pub fn save_cascade_file(model: &CascadeModel, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    save_cascade(model, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_cascade<R: Read>(mut source: R) -> Result<CascadeModel> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let wire: WireModel = serde_json::from_str(&text).map_err(|e| CascadeError::Parse {
        offset: byte_offset(&text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    from_wire(wire)
}

pub fn load_cascade_file(path: impl AsRef<Path>) -> Result<CascadeModel> {
    load_cascade(std::fs::File::open(path)?)
}

/// serde_json reports 1-based line and column; convert to a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}
