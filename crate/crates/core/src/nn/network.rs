//! PEPX regression network.
//!
//! Layout: a strided stem convolution, stages of PEPX blocks (optionally
//! followed by 2×2 average pooling), additive long-range skips between block
//! outputs, then global average pooling, a dense head and a single sigmoid
//! output.
//!
//! Each PEPX block is the composition
//! `proj1 (1×1) → ReLU → expand (1×1) → ReLU → depthwise (3×3) → ReLU → proj2 (1×1) → ReLU → extend (1×1)`,
//! preserving spatial size.
//!
//! Skip endpoints are *nodes*: node 0 is the stem output and node `i + 1` is
//! the output of block `i`. A skip `(from, to)` adds node `from` to node `to`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{ConvSpec, Graph, Var};
use super::params::{Init, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scoring::{NormalizedScore, TargetKind};

/// Channel widths of one projection-expansion-projection block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PepxConfig {
    pub in_channels: usize,
    pub proj1_channels: usize,
    pub expand_channels: usize,
    pub proj2_channels: usize,
    pub out_channels: usize,
}

impl PepxConfig {
    /// Projects to half the output width, expands to the output width,
    /// projects to half again and extends to `out`.
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        let half = (out_channels / 2).max(1);
        Self {
            in_channels,
            proj1_channels: half,
            expand_channels: out_channels,
            proj2_channels: half,
            out_channels,
        }
    }

    fn widths(&self) -> [usize; 5] {
        [
            self.in_channels,
            self.proj1_channels,
            self.expand_channels,
            self.proj2_channels,
            self.out_channels,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub blocks: Vec<PepxConfig>,
    /// 2×2 average pooling after the stage.
    #[serde(default)]
    pub downsample: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkipConfig {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stages: Vec<StageConfig>,
    #[serde(default)]
    pub skips: Vec<SkipConfig>,
    /// Hidden widths of the dense head; the output layer is always one unit.
    pub head_hidden: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::desk(224, 224)
    }
}

impl NetworkConfig {
    /// 7×7/2 stem (16 channels), three stages of two PEPX blocks at
    /// 32/48/64 channels with pooling between stages, one skip per stage
    /// (first block output → last block output), dense 64 head.
    pub fn desk(input_height: usize, input_width: usize) -> Self {
        let stage = |cin: usize, cout: usize, downsample: bool| StageConfig {
            blocks: vec![PepxConfig::new(cin, cout), PepxConfig::new(cout, cout)],
            downsample,
        };
        Self {
            input_height,
            input_width,
            stem_channels: 16,
            stem_kernel: 7,
            stem_stride: 2,
            stages: vec![stage(16, 32, true), stage(32, 48, true), stage(48, 64, false)],
            skips: vec![
                SkipConfig { from: 1, to: 2 },
                SkipConfig { from: 3, to: 4 },
                SkipConfig { from: 5, to: 6 },
            ],
            head_hidden: vec![64],
        }
    }

    pub fn block_count(&self) -> usize {
        self.stages.iter().map(|s| s.blocks.len()).sum()
    }

    /// Symbolic shape pass: `(C, H, W)` of every node, plus validation.
    pub fn shape_plan(&self) -> Result<ShapePlan> {
        let mut problems = Vec::new();
        if self.stem_channels == 0 || self.stem_kernel == 0 || self.stem_stride == 0 {
            problems.push("stem: channels, kernel and stride must be positive".to_string());
        }
        if self.stages.is_empty() || self.stages.iter().any(|s| s.blocks.is_empty()) {
            problems.push("stages: need at least one stage, each with at least one block".into());
        }
        if self.head_hidden.contains(&0) {
            problems.push("head_hidden: widths must be positive".into());
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let pad = self.stem_kernel / 2;
        let span = |d: usize| d + 2 * pad;
        if span(self.input_height) < self.stem_kernel || span(self.input_width) < self.stem_kernel {
            return Err(Error::Config(vec![format!(
                "input {}x{} is smaller than the stem kernel",
                self.input_height, self.input_width
            )]));
        }
        let stem_h = (span(self.input_height) - self.stem_kernel) / self.stem_stride + 1;
        let stem_w = (span(self.input_width) - self.stem_kernel) / self.stem_stride + 1;

        let mut nodes = vec![[self.stem_channels, stem_h, stem_w]];
        let mut block_inputs = Vec::new();
        let mut current = nodes[0];
        let mut b = 0;
        for (si, stage) in self.stages.iter().enumerate() {
            for block in &stage.blocks {
                if block.widths().contains(&0) {
                    problems.push(format!("block {b}: channel widths must be positive"));
                }
                if block.in_channels != current[0] {
                    problems.push(format!(
                        "block {b}: in_channels {} but incoming tensor has {} channels",
                        block.in_channels, current[0]
                    ));
                }
                block_inputs.push(current);
                current = [block.out_channels, current[1], current[2]];
                nodes.push(current);
                b += 1;
            }
            if stage.downsample {
                if current[1] < 2 || current[2] < 2 {
                    problems.push(format!(
                        "stage {si}: {}x{} map is too small to pool",
                        current[1], current[2]
                    ));
                } else {
                    current = [current[0], current[1] / 2, current[2] / 2];
                }
            }
        }
        for (i, s) in self.skips.iter().enumerate() {
            if s.from >= s.to {
                problems.push(format!("skips[{i}]: ({}, {}) does not go forward", s.from, s.to));
            } else if s.to >= nodes.len() {
                problems.push(format!("skips[{i}]: node {} does not exist", s.to));
            } else if nodes[s.from] != nodes[s.to] {
                problems.push(format!(
                    "skips[{i}]: shape {:?} at node {} does not match {:?} at node {}",
                    nodes[s.from], s.from, nodes[s.to], s.to
                ));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(ShapePlan {
            nodes,
            block_inputs,
            pooled_channels: current[0],
        })
    }

    /// Every parameter with its shape and initializer, in creation order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>, Init)> {
        let mut specs = Vec::new();
        let k = self.stem_kernel;
        specs.push(("stem.weight".into(), vec![self.stem_channels, 1, k, k], Init::he(k * k)));
        specs.push(("stem.bias".into(), vec![self.stem_channels], Init::Zeros));
        let mut b = 0;
        for stage in &self.stages {
            for block in &stage.blocks {
                specs.extend(pepx_param_specs(&format!("blocks.{b}"), block));
                b += 1;
            }
        }
        let mut width = self.pooled_channels();
        for (j, &h) in self.head_hidden.iter().enumerate() {
            specs.push((format!("head.hidden{j}.weight"), vec![h, width], Init::he(width)));
            specs.push((format!("head.hidden{j}.bias"), vec![h], Init::Zeros));
            width = h;
        }
        specs.push(("head.out.weight".into(), vec![1, width], Init::Zeros));
        specs.push(("head.out.bias".into(), vec![1], Init::Zeros));
        specs
    }

    fn pooled_channels(&self) -> usize {
        self.stages
            .last()
            .and_then(|s| s.blocks.last())
            .map_or(self.stem_channels, |b| b.out_channels)
    }
}

/// Output of [`NetworkConfig::shape_plan`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapePlan {
    /// `(C, H, W)` per node; node 0 is the stem output.
    pub nodes: Vec<[usize; 3]>,
    pub block_inputs: Vec<[usize; 3]>,
    pub pooled_channels: usize,
}

const PEPX_STAGES: [&str; 5] = ["proj1", "expand", "depthwise", "proj2", "extend"];

fn pepx_param_specs(prefix: &str, c: &PepxConfig) -> Vec<(String, Vec<usize>, Init)> {
    let w = c.widths();
    let mut specs = Vec::new();
    for (i, stage) in PEPX_STAGES.iter().enumerate() {
        let (shape, fan_in) = if *stage == "depthwise" {
            (vec![w[2], 1, 3, 3], 9)
        } else {
            let (cin, cout) = match i {
                0 => (w[0], w[1]),
                1 => (w[1], w[2]),
                3 => (w[2], w[3]),
                _ => (w[3], w[4]),
            };
            (vec![cout, cin, 1, 1], cin)
        };
        // Stages followed by ReLU use He scaling; the linear extension does not.
        let init = if *stage == "extend" {
            Init::lecun(fan_in)
        } else {
            Init::he(fan_in)
        };
        let out = shape[0];
        specs.push((format!("{prefix}.{stage}.weight"), shape, init));
        specs.push((format!("{prefix}.{stage}.bias"), vec![out], Init::Zeros));
    }
    specs
}

/// Parameter indices of one block: `(weight, bias)` per stage.
#[derive(Debug, Clone, Copy)]
struct PepxIndices([(usize, usize); 5]);

impl PepxIndices {
    fn resolve(store: &ParamStore, prefix: &str) -> Result<Self> {
        let mut out = [(0, 0); 5];
        for (slot, stage) in out.iter_mut().zip(PEPX_STAGES) {
            let find = |suffix: &str| {
                let name = format!("{prefix}.{stage}.{suffix}");
                store
                    .index_of(&name)
                    .ok_or_else(|| Error::Incompatible { names: vec![name] })
            };
            *slot = (find("weight")?, find("bias")?);
        }
        Ok(Self(out))
    }
}

fn pepx_graph<'p>(g: &mut Graph<'p>, store: &'p ParamStore, idx: &PepxIndices, x: Var) -> Result<Var> {
    let mut h = x;
    for (i, &(w, b)) in idx.0.iter().enumerate() {
        let (wv, bv) = (g.param(store, w), g.param(store, b));
        let spec = if i == 2 {
            ConvSpec {
                stride: 1,
                pad: 1,
                groups: store.tensors()[w].shape()[0],
            }
        } else {
            ConvSpec::POINTWISE
        };
        h = g.conv2d(h, wv, Some(bv), spec)?;
        if i < 4 {
            h = g.relu(h)?;
        }
    }
    Ok(h)
}

/// A standalone PEPX block with its own parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PepxBlock {
    config: PepxConfig,
    params: ParamStore,
}

impl PepxBlock {
    pub fn new(config: PepxConfig, seed: u64) -> Result<Self> {
        if config.widths().contains(&0) {
            return Err(Error::validation(format!("PEPX widths must be positive: {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, init) in pepx_param_specs("block", &config) {
            params.insert(name, init.tensor(&shape, &mut rng))?;
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &PepxConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Adds the block to `g`.
    pub fn forward_graph<'p>(&'p self, g: &mut Graph<'p>, x: Var) -> Result<Var> {
        let c = g.value(x).dims4()?.1;
        if c != self.config.in_channels {
            return Err(Error::validation(format!(
                "PEPX block expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        let idx = PepxIndices::resolve(&self.params, "block")?;
        pepx_graph(g, &self.params, &idx, x)
    }
}

/// Runs one PEPX block on an NCHW tensor.
pub fn pepx_forward(block: &PepxBlock, input: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.input(input.clone());
    let y = block.forward_graph(&mut g, x)?;
    Ok(g.value(y).clone())
}

#[derive(Debug, Clone)]
struct Layout {
    stem: (usize, usize),
    blocks: Vec<PepxIndices>,
    hidden: Vec<(usize, usize)>,
    out: (usize, usize),
}

/// Vars produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Node values (stem output, then each block output after skips).
    pub nodes: Vec<Var>,
    /// Sigmoid output, shape `(N, 1)`.
    pub output: Var,
}

#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    plan: ShapePlan,
    params: ParamStore,
    layout: Layout,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl Network {
    /// Fresh network with parameters drawn from a seeded stream.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, init) in config.param_specs() {
            params.insert(name, init.tensor(&shape, &mut rng))?;
        }
        Self::from_params(config, params)
    }

    /// Wraps existing parameters; names and shapes must match the config exactly.
    pub fn from_params(config: NetworkConfig, params: ParamStore) -> Result<Self> {
        let plan = config.shape_plan()?;
        let specs = config.param_specs();
        let mut bad: Vec<String> = Vec::new();
        for (name, shape, _) in &specs {
            match params.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                _ => bad.push(name.clone()),
            }
        }
        for name in params.names() {
            if !specs.iter().any(|(n, _, _)| n == name) {
                bad.push(name.clone());
            }
        }
        if !bad.is_empty() {
            return Err(Error::Incompatible { names: bad });
        }
        let idx = |n: &str| params.index_of(n).expect("checked above");
        let layout = Layout {
            stem: (idx("stem.weight"), idx("stem.bias")),
            blocks: (0..config.block_count())
                .map(|b| PepxIndices::resolve(&params, &format!("blocks.{b}")))
                .collect::<Result<_>>()?,
            hidden: (0..config.head_hidden.len())
                .map(|j| {
                    (
                        idx(&format!("head.hidden{j}.weight")),
                        idx(&format!("head.hidden{j}.bias")),
                    )
                })
                .collect(),
            out: (idx("head.out.weight"), idx("head.out.bias")),
        };
        Ok(Self {
            config,
            plan,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn plan(&self) -> &ShapePlan {
        &self.plan
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    /// Builds the forward pass for an `(N, 1, H, W)` batch.
    pub fn forward<'p>(&'p self, g: &mut Graph<'p>, x: Var) -> Result<ForwardTrace> {
        let (_, c, h, w) = g.value(x).dims4()?;
        if (c, h, w) != (1, self.config.input_height, self.config.input_width) {
            return Err(Error::validation(format!(
                "network expects 1x{}x{} inputs, got {c}x{h}x{w}",
                self.config.input_height, self.config.input_width
            )));
        }
        let p = &self.params;
        let (sw, sb) = (g.param(p, self.layout.stem.0), g.param(p, self.layout.stem.1));
        let stem = g.conv2d(
            x,
            sw,
            Some(sb),
            ConvSpec {
                stride: self.config.stem_stride,
                pad: self.config.stem_kernel / 2,
                groups: 1,
            },
        )?;
        let stem = g.relu(stem)?;

        let mut nodes = vec![stem];
        let mut current = stem;
        let mut b = 0;
        for stage in &self.config.stages {
            for _ in &stage.blocks {
                let mut out = pepx_graph(g, p, &self.layout.blocks[b], current)?;
                let node = b + 1;
                for s in self.config.skips.iter().filter(|s| s.to == node) {
                    out = g.add(out, nodes[s.from])?;
                }
                nodes.push(out);
                current = out;
                b += 1;
            }
            if stage.downsample {
                current = g.avg_pool2(current)?;
            }
        }

        let mut h = g.global_avg_pool(current)?;
        for &(w, bias) in &self.layout.hidden {
            let (wv, bv) = (g.param(p, w), g.param(p, bias));
            h = g.dense(h, wv, bv)?;
            h = g.relu(h)?;
        }
        let (wv, bv) = (g.param(p, self.layout.out.0), g.param(p, self.layout.out.1));
        let logits = g.dense(h, wv, bv)?;
        let output = g.sigmoid(logits)?;
        Ok(ForwardTrace { nodes, output })
    }

    /// Predictions in `(0, 1)` for a list of preprocessed images.
    pub fn predict(&self, images: &[&Raster]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(16) {
            let mut g = Graph::new();
            let x = g.input(Tensor::from_rasters(chunk)?);
            let trace = self.forward(&mut g, x)?;
            out.extend_from_slice(g.value(trace.output).data());
        }
        Ok(out)
    }
}

/// Single-image inference, tagged with the score kind the network was trained for.
pub fn model_forward(network: &Network, image: &Raster, kind: TargetKind) -> Result<NormalizedScore> {
    let y = network.predict(&[image])?[0];
    NormalizedScore::new(y, kind)
}
