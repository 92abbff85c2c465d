use serde::{Deserialize, Serialize};

use super::PolicyError;

/// Length of the onboard state vector.
pub const STATE_DIM: usize = 10;
/// Policy output: acceleration (3) and auxiliary velocity estimate (3).
pub const OUTPUT_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// Preprocessed panorama rows.
    pub input_height: usize,
    /// Preprocessed panorama columns (azimuth).
    pub input_width: usize,
    /// Output channels of each conv layer.
    pub channels: Vec<usize>,
    /// `[height, width]` of the first-layer kernel; later layers are 3×3.
    pub first_kernel: [usize; 2],
    /// `[height, width]` stride of each conv layer.
    pub strides: Vec<[usize; 2]>,
    pub d_z: usize,
    pub d_h: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_height: 16,
            input_width: 64,
            channels: vec![16, 32, 64, 64],
            first_kernel: [3, 3],
            strides: vec![[2, 2], [2, 2], [2, 2], [1, 1]],
            d_z: 192,
            d_h: 192,
        }
    }
}

/// Shape bookkeeping of one conv layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    /// `[height, width]` of the layer output.
    pub out_dims: [usize; 2],
}

impl ArchConfig {
    pub fn conv_layers(&self) -> Result<Vec<ConvLayer>, PolicyError> {
        self.validate_basic()?;
        let mut layers = Vec::with_capacity(self.channels.len());
        let (mut c, mut h, mut w) = (1, self.input_height, self.input_width);
        for (i, (&o, &stride)) in self.channels.iter().zip(&self.strides).enumerate() {
            let kernel = if i == 0 { self.first_kernel } else { [3, 3] };
            if kernel[0] % 2 == 0 || kernel[1] % 2 == 0 {
                return Err(PolicyError::Config(format!("conv{} kernel {:?} must be odd", i, kernel)));
            }
            if kernel[1] > w {
                return Err(PolicyError::Config(format!("conv{} kernel width {} exceeds input width {}", i, kernel[1], w)));
            }
            if stride[0] == 0 || stride[1] == 0 || w % stride[1] != 0 {
                return Err(PolicyError::Config(format!("conv{} stride {:?} must divide width {}", i, stride, w)));
            }
            let oh = (h + 2 * (kernel[0] / 2) - kernel[0]) / stride[0] + 1;
            let ow = (w + 2 * (kernel[1] / 2) - kernel[1]) / stride[1] + 1;
            layers.push(ConvLayer { in_channels: c, out_channels: o, kernel, stride, out_dims: [oh, ow] });
            c = o;
            h = oh;
            w = ow;
        }
        Ok(layers)
    }

    fn validate_basic(&self) -> Result<(), PolicyError> {
        if self.input_height == 0 || self.input_width == 0 {
            return Err(PolicyError::Config("input dims must be positive".into()));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(PolicyError::Config(format!("channels {:?} must be non-empty and positive", self.channels)));
        }
        if self.channels.len() != self.strides.len() {
            return Err(PolicyError::Config(format!(
                "{} conv layers but {} strides",
                self.channels.len(),
                self.strides.len()
            )));
        }
        if self.d_z == 0 || self.d_h == 0 {
            return Err(PolicyError::Config(format!("d_z = {} and d_h = {} must be positive", self.d_z, self.d_h)));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        self.conv_layers().map(|_| ())
    }

    /// Product of horizontal strides: the azimuth shift that moves the last
    /// feature map by exactly one column.
    pub fn total_horizontal_stride(&self) -> usize {
        self.strides.iter().map(|s| s[1]).product()
    }

    pub fn flat_features(&self) -> Result<usize, PolicyError> {
        let layers = self.conv_layers()?;
        let last = layers.last().expect("validated non-empty");
        Ok(last.out_channels * last.out_dims[0] * last.out_dims[1])
    }

    /// Canonical parameter order with shapes.
    pub fn param_specs(&self) -> Result<Vec<(String, Vec<usize>)>, PolicyError> {
        let layers = self.conv_layers()?;
        let mut specs = Vec::new();
        for (i, l) in layers.iter().enumerate() {
            specs.push((format!("conv{}.weight", i), vec![l.out_channels, l.in_channels, l.kernel[0], l.kernel[1]]));
            specs.push((format!("conv{}.bias", i), vec![l.out_channels]));
        }
        let flat = self.flat_features()?;
        let (dz, dh) = (self.d_z, self.d_h);
        specs.push(("proj.weight".into(), vec![flat, dz]));
        specs.push(("proj.bias".into(), vec![dz]));
        specs.push(("state.weight".into(), vec![STATE_DIM, dz]));
        specs.push(("gru.w_ih".into(), vec![dz, 3 * dh]));
        specs.push(("gru.w_hh".into(), vec![dh, 3 * dh]));
        specs.push(("gru.b_ih".into(), vec![3 * dh]));
        specs.push(("gru.b_hh".into(), vec![3 * dh]));
        specs.push(("head.weight".into(), vec![dh, OUTPUT_DIM]));
        Ok(specs)
    }

    pub fn param_count(&self) -> Result<usize, PolicyError> {
        Ok(self.param_specs()?.iter().map(|(_, s)| s.iter().product::<usize>()).sum())
    }

    /// Fan-in used for the uniform initialization bound of each tensor.
    pub(crate) fn fan_in(&self, name: &str, shape: &[usize]) -> usize {
        if name.starts_with("conv") {
            // Weight [O, C, KH, KW] and its bias share the weight's fan-in.
            let i: usize = name[4..name.find('.').unwrap_or(5)].parse().unwrap_or(0);
            let l = &self.conv_layers().expect("validated")[i];
            return l.in_channels * l.kernel[0] * l.kernel[1];
        }
        match name {
            "proj.weight" | "proj.bias" => self.flat_features().expect("validated"),
            "gru.w_ih" | "gru.w_hh" | "gru.b_ih" | "gru.b_hh" => self.d_h,
            _ => shape[0],
        }
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("arch config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_count_in_budget() {
        let n = ArchConfig::default().param_count().unwrap();
        assert_eq!(n, 482_432);
        assert!((462_600..=565_400).contains(&n));
    }

    #[test]
    fn zero_hidden_rejected() {
        let a = ArchConfig { d_h: 0, ..Default::default() };
        assert!(matches!(a.validate(), Err(PolicyError::Config(_))));
    }

    #[test]
    fn layer_dims() {
        let l = ArchConfig::default().conv_layers().unwrap();
        let dims: Vec<_> = l.iter().map(|l| l.out_dims).collect();
        assert_eq!(dims, vec![[8, 32], [4, 16], [2, 8], [2, 8]]);
        assert_eq!(ArchConfig::default().total_horizontal_stride(), 8);
    }
}
