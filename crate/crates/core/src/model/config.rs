use alloc::vec::Vec;

use crate::error::{bail, Result};

/// Hyper-parameters fixing every extent and ratio of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Points in the partial input.
    pub n_points: usize,
    /// Width of the per-point embedding.
    pub embed_width: usize,
    /// Down-sampling ratio of the three encoder attention stages.
    pub gdp_ratios: [usize; 3],
    /// Width of the global shape code.
    pub code_width: usize,
    /// Coarse points decoded from the shape code.
    pub seed_coarse: usize,
    /// Feature width of the coarse points.
    pub seed_width: usize,
    /// Seed cloud size after merging with the input and down-sampling.
    pub seed_count: usize,
    /// Per-point feature width inside the point generators.
    pub gen_width: usize,
    /// Self-attention up-sampling ratios of the two point generators.
    pub gen_ratios: [[usize; 3]; 2],
    /// Split factor applied on top of the generator ratios.
    pub split_base: usize,
    pub heads: usize,
    /// Replace the encoder cross-attention stages by plain FPS + gather, with
    /// the following self-attention stages widening by 2 instead.
    pub disable_gdp: bool,
    /// Drop the encoder self-attention stages.
    pub disable_encoder_sfa: bool,
    /// `None` starts every FPS at row 0; `Some(seed)` derives the start row
    /// from the seed and the cloud size.
    pub fps_seed: Option<u64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::completion3d()
    }
}

impl ModelConfig {
    /// Full-width network on 2048-point inputs, 512 → 1024 → 2048 outputs.
    pub fn completion3d() -> Self {
        ModelConfig {
            n_points: 2048,
            embed_width: 64,
            gdp_ratios: [4, 2, 2],
            code_width: 1024,
            seed_coarse: 128,
            seed_width: 128,
            seed_count: 512,
            gen_width: 128,
            gen_ratios: [[1, 1, 1], [1, 1, 1]],
            split_base: 2,
            heads: 4,
            disable_gdp: false,
            disable_encoder_sfa: false,
            fps_seed: None,
        }
    }

    /// Full-width network with outputs 512 → 2048 → 16384.
    pub fn pcn() -> Self {
        ModelConfig {
            gen_ratios: [[2, 1, 1], [2, 1, 2]],
            ..Self::completion3d()
        }
    }

    /// Narrow network on 512-point inputs with 512 → 1024 → 2048 outputs,
    /// sized to train on a single CPU core.
    pub fn desk() -> Self {
        ModelConfig {
            n_points: 512,
            embed_width: 16,
            gdp_ratios: [4, 2, 2],
            code_width: 128,
            seed_coarse: 128,
            seed_width: 32,
            seed_count: 512,
            gen_width: 16,
            gen_ratios: [[1, 1, 1], [1, 1, 1]],
            split_base: 2,
            heads: 2,
            disable_gdp: false,
            disable_encoder_sfa: false,
            fps_seed: None,
        }
    }

    /// 32-point network small enough for exhaustive finite differences.
    pub fn toy() -> Self {
        ModelConfig {
            n_points: 32,
            embed_width: 4,
            gdp_ratios: [2, 2, 2],
            code_width: 8,
            seed_coarse: 8,
            seed_width: 4,
            seed_count: 16,
            gen_width: 4,
            gen_ratios: [[1, 1, 1], [1, 1, 1]],
            split_base: 2,
            heads: 2,
            disable_gdp: false,
            disable_encoder_sfa: false,
            fps_seed: None,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "toy" => Some(Self::toy()),
            "desk" => Some(Self::desk()),
            "completion3d" => Some(Self::completion3d()),
            "pcn" => Some(Self::pcn()),
            _ => None,
        }
    }

    /// Up-sampling ratio of each encoder self-attention stage.
    pub fn encoder_sfa_ratio(&self) -> usize {
        if self.disable_gdp {
            2
        } else {
            1
        }
    }

    /// Feature width entering each encoder stage, followed by the final width.
    pub fn encoder_widths(&self) -> [usize; 4] {
        let mut w = [self.embed_width; 4];
        for i in 0..3 {
            let mut c = w[i];
            if !self.disable_gdp {
                c *= 2;
            }
            if !self.disable_encoder_sfa {
                c *= self.encoder_sfa_ratio();
            }
            w[i + 1] = c;
        }
        w
    }

    /// Rows left in the encoder after its three down-sampling stages.
    pub fn encoder_rows(&self) -> usize {
        self.n_points / self.gdp_ratios.iter().product::<usize>()
    }

    /// Point multiplication factor of generator `g` (0 or 1).
    pub fn gen_factor(&self, g: usize) -> usize {
        self.split_base * self.gen_ratios[g].iter().product::<usize>()
    }

    /// Width of generator `g` after its three self-attention stages.
    pub fn gen_feature_width(&self, g: usize) -> usize {
        2 * self.gen_width * self.gen_ratios[g].iter().product::<usize>()
    }

    /// Width of each split sub-point feature in generator `g`.
    pub fn gen_split_width(&self, g: usize) -> usize {
        self.gen_feature_width(g) / self.gen_factor(g)
    }

    /// Sizes of the three predicted clouds.
    pub fn output_sizes(&self) -> [usize; 3] {
        let p0 = self.seed_count;
        let p1 = p0 * self.gen_factor(0);
        [p0, p1, p1 * self.gen_factor(1)]
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_points", self.n_points),
            ("embed_width", self.embed_width),
            ("code_width", self.code_width),
            ("seed_coarse", self.seed_coarse),
            ("seed_width", self.seed_width),
            ("seed_count", self.seed_count),
            ("gen_width", self.gen_width),
            ("split_base", self.split_base),
            ("heads", self.heads),
        ];
        for (name, v) in positive {
            if v == 0 {
                bail!(Config, "{} must be positive", name);
            }
        }
        if self.gdp_ratios.contains(&0) || self.gen_ratios.iter().flatten().any(|&u| u == 0) {
            bail!(Config, "ratios must be positive");
        }
        let down: usize = self.gdp_ratios.iter().product();
        if !self.n_points.is_multiple_of(down) {
            bail!(Config, "n_points {} not divisible by {}", self.n_points, down);
        }
        if self.seed_count > self.seed_coarse + self.n_points {
            bail!(
                Config,
                "seed_count {} exceeds the {} merged points",
                self.seed_count,
                self.seed_coarse + self.n_points
            );
        }
        let mut widths: Vec<usize> = self.encoder_widths().to_vec();
        let mut c = self.embed_width;
        for _ in 0..3 {
            if !self.disable_gdp {
                c *= 2;
                widths.push(c / 2);
            }
            if !self.disable_encoder_sfa {
                c *= self.encoder_sfa_ratio();
            }
        }
        widths.extend([self.code_width, self.seed_width]);
        for g in 0..2 {
            let mut w = 2 * self.gen_width;
            for &u in &self.gen_ratios[g] {
                w *= u;
                widths.push(w);
            }
            let r = self.gen_factor(g);
            if !self.gen_feature_width(g).is_multiple_of(r) {
                bail!(
                    Config,
                    "generator {} width {} does not split into {} sub-points",
                    g + 1,
                    self.gen_feature_width(g),
                    r
                );
            }
        }
        if let Some(&w) = widths.iter().find(|&&w| w % self.heads != 0) {
            bail!(Config, "channel width {} not divisible by {} heads", w, self.heads);
        }
        Ok(())
    }
}
