//! JSON document format for network parameters.
//!
//! Matrices are nested row-major lists. The first layer's `U` has zero columns, so it is
//! written as one empty list per row. Floats are written in shortest round-trip form and
//! parsed with exact round-tripping, so save/load is value-exact for finite doubles.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConeModule, Layer, QuadModule, SocIcnnParams};
use crate::{Matrix, Vector};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub d0: usize,
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDoc {
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    #[serde(rename = "U")]
    pub u: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadDoc {
    pub alpha: f64,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub e: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeDoc {
    pub lambda: f64,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub d: Vec<f64>,
}

/// Serialized form of [`SocIcnnParams`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format_version: u64,
    pub seed: Option<u64>,
    pub dims: Dims,
    pub layers: Vec<LayerDoc>,
    pub c: Vec<f64>,
    pub v: Vec<f64>,
    pub b0: f64,
    pub quad: Vec<QuadDoc>,
    pub cone: Vec<ConeDoc>,
}

pub(crate) fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], cols: usize, what: &str) -> Result<Matrix> {
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::DimensionMismatch(format!(
            "{what}: row {bad} has {} entries, expected {cols}",
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl From<&SocIcnnParams> for ModelDocument {
    fn from(p: &SocIcnnParams) -> Self {
        ModelDocument {
            format_version: FORMAT_VERSION,
            seed: p.seed,
            dims: Dims {
                d0: p.input_dim(),
                widths: p.widths(),
            },
            layers: p
                .layers
                .iter()
                .map(|l| LayerDoc {
                    w: matrix_rows(&l.w),
                    u: matrix_rows(&l.u),
                    b: l.b.iter().copied().collect(),
                })
                .collect(),
            c: p.c.iter().copied().collect(),
            v: p.v.iter().copied().collect(),
            b0: p.b0,
            quad: p
                .quad
                .iter()
                .map(|m| QuadDoc {
                    alpha: m.alpha,
                    b: matrix_rows(&m.b),
                    e: m.e.iter().copied().collect(),
                })
                .collect(),
            cone: p
                .cone
                .iter()
                .map(|m| ConeDoc {
                    lambda: m.lambda,
                    a: matrix_rows(&m.a),
                    d: m.d.iter().copied().collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelDocument> for SocIcnnParams {
    type Error = Error;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(doc.format_version));
        }
        let d0 = doc.dims.d0;
        if doc.dims.widths.len() != doc.layers.len() {
            return Err(Error::DimensionMismatch(format!(
                "dims lists {} layers, document has {}",
                doc.dims.widths.len(),
                doc.layers.len()
            )));
        }
        let mut layers = Vec::with_capacity(doc.layers.len());
        let mut prev = 0;
        for (l, (ld, &width)) in doc.layers.iter().zip(&doc.dims.widths).enumerate() {
            if ld.w.len() != width || ld.u.len() != width || ld.b.len() != width {
                return Err(Error::DimensionMismatch(format!(
                    "layer {l}: expected width {width}"
                )));
            }
            layers.push(Layer {
                w: matrix_from_rows(&ld.w, d0, &format!("layer {l} W"))?,
                u: matrix_from_rows(&ld.u, prev, &format!("layer {l} U"))?,
                b: DVector::from_vec(ld.b.clone()),
            });
            prev = width;
        }
        let quad = doc
            .quad
            .iter()
            .enumerate()
            .map(|(h, m)| {
                Ok(QuadModule {
                    alpha: m.alpha,
                    b: matrix_from_rows(&m.b, d0, &format!("quadratic module {h} B"))?,
                    e: DVector::from_vec(m.e.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cone = doc
            .cone
            .iter()
            .enumerate()
            .map(|(g, m)| {
                Ok(ConeModule {
                    lambda: m.lambda,
                    a: matrix_from_rows(&m.a, d0, &format!("conic module {g} A"))?,
                    d: DVector::from_vec(m.d.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if doc.v.len() != d0 {
            return Err(Error::DimensionMismatch(format!(
                "v has length {}, d0 is {d0}",
                doc.v.len()
            )));
        }
        let params = SocIcnnParams {
            layers,
            c: Vector::from_vec(doc.c),
            v: Vector::from_vec(doc.v),
            b0: doc.b0,
            quad,
            cone,
            seed: doc.seed,
        };
        params.validate()?;
        Ok(params)
    }
}

/// Pretty-printed JSON for a model.
pub fn model_to_json(params: &SocIcnnParams) -> String {
    serde_json::to_string_pretty(&ModelDocument::from(params))
        .expect("model document serialization cannot fail for finite values")
}

/// Parses and validates a model document.
pub fn model_from_json(text: &str) -> Result<SocIcnnParams> {
    let doc: ModelDocument = serde_json::from_str(text)?;
    SocIcnnParams::try_from(doc)
}

/// Writes a model document to `path`.
pub fn save_model(params: &SocIcnnParams, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, model_to_json(params) + "\n")?;
    Ok(())
}

/// Reads and validates a model document from `path`.
pub fn load_model(path: &std::path::Path) -> Result<SocIcnnParams> {
    model_from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_degenerate_2d, build_random, Architecture, DegeneracySpec};
    use proptest::prelude::*;

    #[test]
    fn round_trip_random_model() {
        let p = build_random(7, &Architecture::uniform(5, 6, 3, 2, 2, 4)).unwrap();
        let text = model_to_json(&p);
        let back = model_from_json(&text).unwrap();
        assert_eq!(p, back);
        assert_eq!(text, model_to_json(&back));
    }

    #[test]
    fn round_trip_degenerate_model() {
        let (p, _) = build_degenerate_2d(DegeneracySpec::default());
        assert_eq!(p, model_from_json(&model_to_json(&p)).unwrap());
    }

    #[test]
    fn first_layer_coupling_is_empty_rows() {
        let p = build_random(1, &Architecture::uniform(2, 3, 2, 0, 0, 1)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&model_to_json(&p)).unwrap();
        assert_eq!(v["layers"][0]["U"], serde_json::json!([[], [], []]));
        assert_eq!(v["format_version"], 1);
    }

    #[test]
    fn corrupted_json_reports_line() {
        let p = build_random(1, &Architecture::uniform(2, 3, 2, 1, 1, 2)).unwrap();
        let mut text = model_to_json(&p);
        text.truncate(text.len() / 2);
        match model_from_json(&text) {
            Err(Error::Parse { line, .. }) => assert!(line > 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_ragged_and_invalid_documents() {
        let p = build_random(1, &Architecture::uniform(2, 3, 2, 1, 1, 2)).unwrap();
        let mut doc = ModelDocument::from(&p);
        doc.layers[0].w[1].push(0.0);
        let text = serde_json::to_string(&doc).unwrap();
        assert!(matches!(
            model_from_json(&text),
            Err(Error::DimensionMismatch(_))
        ));

        let mut doc = ModelDocument::from(&p);
        doc.layers[1].u[0][0] = -1.0;
        let text = serde_json::to_string(&doc).unwrap();
        assert!(matches!(
            model_from_json(&text),
            Err(Error::Negativity { .. })
        ));

        let mut doc = ModelDocument::from(&p);
        doc.format_version = 2;
        let text = serde_json::to_string(&doc).unwrap();
        assert!(matches!(
            model_from_json(&text),
            Err(Error::UnsupportedVersion(2))
        ));
    }

    proptest! {
        #[test]
        fn arbitrary_finite_values_round_trip(
            vals in proptest::collection::vec(
                any::<f64>().prop_filter("finite", |x| x.is_finite()), 2..=2),
            b0 in any::<f64>().prop_filter("finite", |x| x.is_finite()),
            alpha in 1e-300f64..1e300,
        ) {
            let mut p = build_random(0, &Architecture::uniform(2, 2, 1, 1, 1, 1)).unwrap();
            p.v = Vector::from_vec(vals);
            p.b0 = b0;
            p.quad[0].alpha = alpha;
            let back = model_from_json(&model_to_json(&p)).unwrap();
            prop_assert_eq!(back.v.as_slice(), p.v.as_slice());
            prop_assert_eq!(back.b0.to_bits(), p.b0.to_bits());
            prop_assert_eq!(back.quad[0].alpha.to_bits(), alpha.to_bits());
        }
    }
}
