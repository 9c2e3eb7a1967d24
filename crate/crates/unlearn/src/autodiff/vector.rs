//! Flat parameter and gradient vectors.
//!
//! Every trainable tensor of a model is flattened row-major into one
//! contiguous `f64` array in a fixed canonical order described by a
//! [`Layout`]. All unlearning algebra (projections, axpy updates) operates
//! on these flat vectors; per-layer structure is only consulted when a
//! model unpacks its parameters for a forward pass.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and position of one named tensor inside a flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered list of tensor descriptors; shared by all vectors of one model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    specs: Vec<TensorSpec>,
    total: usize,
}

impl Layout {
    /// Builds a layout from `(name, rows, cols)` entries, assigning offsets
    /// in order.
    pub fn new(shapes: &[(&str, usize, usize)]) -> Arc<Self> {
        let mut specs = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for &(name, rows, cols) in shapes {
            specs.push(TensorSpec {
                name: name.to_string(),
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
        }
        Arc::new(Layout {
            specs,
            total: offset,
        })
    }

    pub fn from_specs(specs: Vec<TensorSpec>) -> Result<Arc<Self>> {
        let mut offset = 0;
        for s in &specs {
            if s.offset != offset {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has offset {}, expected {}",
                    s.name, s.offset, offset
                )));
            }
            offset += s.len();
        }
        Ok(Arc::new(Layout {
            specs,
            total: offset,
        }))
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn spec(&self, name: &str) -> &TensorSpec {
        self.specs
            .iter()
            .find(|s| s.name == name)
            .unwrap_or_else(|| panic!("no tensor named {name} in layout"))
    }
}

fn check_congruent(a: &Arc<Layout>, b: &Arc<Layout>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a == b {
        Ok(())
    } else {
        Err(Error::LayoutMismatch(format!(
            "{} parameters vs {}",
            a.total_len(),
            b.total_len()
        )))
    }
}

/// Flat array of all trainable model parameters in canonical order.
#[derive(Debug, Clone)]
pub struct ParamVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: Arc<Layout>, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            layout.total_len(),
            "value count must match layout"
        );
        ParamVector { layout, values }
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        let n = layout.total_len();
        ParamVector {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Slice of the values backing one named tensor.
    pub fn tensor(&self, spec: &TensorSpec) -> &[f64] {
        &self.values[spec.offset..spec.offset + spec.len()]
    }

    /// In-place `θ ← θ + α·g`. This is the only mutation the update rules
    /// perform.
    pub fn axpy_inplace(&mut self, alpha: f64, g: &GradVector) -> Result<()> {
        check_congruent(&self.layout, &g.layout)?;
        for (t, s) in self.values.iter_mut().zip(&g.values) {
            *t += alpha * s;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Flat array congruent to a [`ParamVector`]; holds gradients.
#[derive(Debug, Clone)]
pub struct GradVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl GradVector {
    pub fn new(layout: Arc<Layout>, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            layout.total_len(),
            "value count must match layout"
        );
        GradVector { layout, values }
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        let n = layout.total_len();
        GradVector {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Errs with the offending flat index if any entry is NaN or Inf.
    pub fn check_finite(self) -> Result<Self> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(self),
            Some(index) => Err(Error::NonFiniteGradient { index }),
        }
    }
}

/// `a · b` over congruent layouts.
pub fn dot(a: &GradVector, b: &GradVector) -> Result<f64> {
    check_congruent(&a.layout, &b.layout)?;
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x * y)
        .sum())
}

/// Euclidean norm `‖a‖`.
pub fn norm(a: &GradVector) -> f64 {
    a.values.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `α·x + y` as a fresh vector.
pub fn axpy(alpha: f64, x: &GradVector, y: &GradVector) -> Result<GradVector> {
    check_congruent(&x.layout, &y.layout)?;
    let values = x
        .values
        .iter()
        .zip(&y.values)
        .map(|(xi, yi)| alpha * xi + yi)
        .collect();
    Ok(GradVector {
        layout: x.layout.clone(),
        values,
    })
}
