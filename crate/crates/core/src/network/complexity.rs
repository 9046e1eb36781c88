use serde::{Deserialize, Serialize};

use super::spec::{LayerSpec, NetworkSpec, Variant};
use crate::error::Result;

/// Parameter and multiply-add counts for one input size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub param_count: u64,
    pub flop_count: u64,
}

/// Counts for the equivariant network next to its real-valued twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityComparison {
    pub network: String,
    pub num_points: usize,
    pub equivariant: ComplexityReport,
    pub twin: ComplexityReport,
}

impl ComplexityComparison {
    pub fn flop_ratio(&self) -> f64 {
        if self.twin.flop_count == 0 {
            0.0
        } else {
            self.equivariant.flop_count as f64 / self.twin.flop_count as f64
        }
    }
}

/// Multiply-adds of convolutions, dense layers and the bridge. An equivariant
/// convolution applies each shared weight to the three imaginary components;
/// the bridge costs three multiply-adds per element. Normalization, pooling
/// and activations are not counted.
pub fn count_complexity(spec: &NetworkSpec, num_points: usize) -> Result<ComplexityComparison> {
    let mut sized = spec.clone();
    sized.num_points = num_points;
    Ok(ComplexityComparison {
        network: spec.name.clone(),
        num_points,
        equivariant: count(&sized, Variant::Equivariant)?,
        twin: count(&sized, Variant::Twin)?,
    })
}

fn count(spec: &NetworkSpec, variant: Variant) -> Result<ComplexityReport> {
    let shapes = spec.shapes(variant)?;
    let twin = variant == Variant::Twin;
    let mut r = ComplexityReport::default();
    for (i, layer) in spec.layers.iter().enumerate() {
        let (input, output) = (&shapes[i], &shapes[i + 1]);
        let rows = input.rows() as u64;
        let (c_in, c_out) = (input.channels as u64, output.channels as u64);
        match *layer {
            LayerSpec::Conv { bias, .. } => {
                let components = if twin { 1 } else { 3 };
                r.param_count += c_in * c_out;
                r.flop_count += rows * c_in * c_out * components;
                match (twin, bias) {
                    (true, _) if spec.twin_conv_bias(i) => r.param_count += c_out,
                    (true, _) => {}
                    (false, true) => r.param_count += 4 * c_out,
                    (false, false) => {}
                }
            }
            LayerSpec::Linear { .. } => {
                r.param_count += c_in * c_out + c_out;
                r.flop_count += rows * c_in * c_out;
            }
            LayerSpec::BatchNorm { .. } if twin => r.param_count += 2 * c_in,
            LayerSpec::Bridge { .. } if !twin => r.flop_count += 3 * rows * c_in,
            _ => {}
        }
    }
    Ok(r)
}
