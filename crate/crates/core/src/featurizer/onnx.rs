//! Exported encoder and detector graphs run through tract.
//!
//! Encoders take a `[1, 3, S, S]` float input and emit one embedding (any
//! shape, flattened). Detectors take the same input and emit `[N, 6]` or
//! `[1, N, 6]` rows of `x1, y1, x2, y2, score, class` in input-canvas pixels,
//! after the graph's own non-maximum suppression.

use std::path::Path;

use image::RgbImage;
use tract_onnx::prelude::*;

use super::preprocess::{ModelKind, Sidecar};
use super::{BoundingBox, Detector, Encoder, FeatureError};

type Plan = Arc<TypedRunnableModel>;

fn load_plan(id: &str, models_dir: &Path, expect: ModelKind) -> Result<(Plan, Sidecar), FeatureError> {
    let graph = models_dir.join(format!("{id}.onnx"));
    if !graph.exists() {
        return Err(FeatureError::ModelMissing(graph));
    }
    let sidecar = Sidecar::load(&models_dir.join(format!("{id}.json")))?;
    if sidecar.kind != expect {
        return Err(FeatureError::ModelLoad {
            id: id.into(),
            message: format!("sidecar declares {:?}, expected {:?}", sidecar.kind, expect),
        });
    }
    let err = |e: TractError| FeatureError::ModelLoad {
        id: id.into(),
        message: format!("{e:#}"),
    };
    let s = sidecar.input_size as usize;
    let mut model = tract_onnx::onnx()
        .model_for_path(&graph)
        .map_err(err)?
        .with_input_fact(0, f32::fact([1, 3, s, s]).into())
        .map_err(err)?;
    if let Some(name) = &sidecar.output {
        model.select_outputs_by_name([name.as_str()]).map_err(err)?;
    }
    let plan = model
        .into_optimized()
        .map_err(err)?
        .into_runnable()
        .map_err(err)?;
    Ok((plan, sidecar))
}

fn run(plan: &Plan, id: &str, data: Vec<f32>, size: usize) -> Result<Tensor, FeatureError> {
    let err = |e: TractError| FeatureError::Inference {
        id: id.into(),
        message: format!("{e:#}"),
    };
    let input = Tensor::from_shape(&[1, 3, size, size], &data).map_err(err)?;
    let mut out = plan.run(tvec!(input.into())).map_err(err)?;
    if out.is_empty() {
        return Err(FeatureError::Inference {
            id: id.into(),
            message: "graph produced no outputs".into(),
        });
    }
    Ok(out.remove(0).into_tensor())
}

pub struct OnnxEncoder {
    id: String,
    plan: Plan,
    sidecar: Sidecar,
    dim: usize,
}

impl OnnxEncoder {
    pub fn load(id: &str, models_dir: &Path) -> Result<Self, FeatureError> {
        let (plan, sidecar) = load_plan(id, models_dir, ModelKind::Encoder)?;
        let s = sidecar.input_size as usize;
        // one dry run pins the output length
        let probe = run(&plan, id, vec![0.0; 3 * s * s], s)?;
        let dim = probe.len();
        if let Some(expected) = sidecar.dim {
            if expected != dim {
                return Err(FeatureError::DimMismatch {
                    id: id.into(),
                    expected,
                    actual: dim,
                });
            }
        }
        Ok(OnnxEncoder {
            id: id.into(),
            plan,
            sidecar,
            dim,
        })
    }

    pub fn sidecar(&self) -> &Sidecar {
        &self.sidecar
    }
}

impl Encoder for OnnxEncoder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, image: &RgbImage) -> Result<Vec<f32>, FeatureError> {
        let (data, _) = self.sidecar.to_nchw(image);
        let out = run(&self.plan, &self.id, data, self.sidecar.input_size as usize)?;
        let view = out.to_plain_array_view::<f32>().map_err(|e| FeatureError::Inference {
            id: self.id.clone(),
            message: format!("{e:#}"),
        })?;
        Ok(view.iter().copied().collect())
    }
}

pub struct OnnxDetector {
    id: String,
    plan: Plan,
    sidecar: Sidecar,
}

impl OnnxDetector {
    pub fn load(id: &str, models_dir: &Path) -> Result<Self, FeatureError> {
        let (plan, sidecar) = load_plan(id, models_dir, ModelKind::Detector)?;
        Ok(OnnxDetector {
            id: id.into(),
            plan,
            sidecar,
        })
    }
}

impl Detector for OnnxDetector {
    fn id(&self) -> &str {
        &self.id
    }

    fn detect(&self, image: &RgbImage) -> Result<Vec<BoundingBox>, FeatureError> {
        let (data, lb) = self.sidecar.to_nchw(image);
        let out = run(&self.plan, &self.id, data, self.sidecar.input_size as usize)?;
        let bad = |message: String| FeatureError::Inference {
            id: self.id.clone(),
            message,
        };
        let shape = out.shape().to_vec();
        let rows = match shape.as_slice() {
            [n, 6] | [1, n, 6] => *n,
            [0] => 0,
            other => return Err(bad(format!("expected [N, 6] detections, got {other:?}"))),
        };
        let view = out.to_plain_array_view::<f32>().map_err(|e| bad(format!("{e:#}")))?;
        let flat: Vec<f32> = view.iter().copied().collect();
        let (w, h) = image.dimensions();
        let mut boxes = Vec::with_capacity(rows);
        for r in flat.chunks_exact(6).take(rows) {
            let (x1, y1) = lb.to_source(r[0], r[1], w, h);
            let (x2, y2) = lb.to_source(r[2], r[3], w, h);
            if let Some(b) = BoundingBox::from_corners(x1, y1, x2, y2, r[4], r[5] as i64, w, h) {
                boxes.push(b);
            }
        }
        Ok(boxes)
    }
}
