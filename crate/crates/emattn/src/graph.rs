//! Symbolic model graphs for complexity accounting. Layers carry enough
//! structure to derive exact parameter and multiply-accumulate totals, but
//! nothing here executes: the builders answer "how big is ResNet-50 with an
//! EMA module in every bottleneck" without ever allocating a weight.
//!
//! Conventions: one multiply-add counts as one MAC; batch norm, activations,
//! pooling, and elementwise arithmetic count zero MACs; batch norm carries
//! 2C parameters (scale and shift); backbone convs are bias-free, while the
//! attention modules and the classifier keep their biases.

use crate::attention::{param_count_module, AttentionKind};
use crate::error::{Error, Result};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        /// Standard conv is 1; depthwise sets groups = cin = cout.
        groups: usize,
        bias: bool,
    },
    BatchNorm {
        channels: usize,
    },
    Activation {
        name: &'static str,
    },
    GlobalAvgPool,
    Fc {
        cin: usize,
        cout: usize,
        bias: bool,
    },
    /// Residual join of exactly two equal-shaped inputs.
    Add,
    Attention {
        kind: AttentionKind,
        channels: usize,
        /// Hyperparameter as requested at attach time.
        requested: usize,
        /// Largest divisor of `channels` not exceeding the request; the
        /// value actually used.
        effective: usize,
    },
}

#[derive(Clone, Debug)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Indices of producer layers; empty means the graph input feeds this.
    pub inputs: Vec<usize>,
    pub stage: String,
    /// Attach point marker: `attach_attention` splices a module right after.
    pub attention_slot: bool,
}

#[derive(Clone, Debug)]
pub struct ModelGraph {
    pub name: String,
    pub input_channels: usize,
    /// Resolution the published complexity figures assume.
    pub default_hw: (usize, usize),
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StageRow {
    pub stage: String,
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComplexityReport {
    pub model: String,
    pub classes: usize,
    pub input_hw: (usize, usize),
    pub layers: usize,
    pub params: u64,
    pub macs: u64,
    pub stages: Vec<StageRow>,
}

impl LayerKind {
    fn out_channels(&self, cin: usize) -> usize {
        match self {
            LayerKind::Conv { cout, .. } => *cout,
            LayerKind::Fc { cout, .. } => *cout,
            _ => cin,
        }
    }

    pub(crate) fn params(&self) -> u64 {
        match self {
            LayerKind::Conv { cin, cout, k, groups, bias, .. } => {
                let w = (*cout as u64) * (*cin / *groups) as u64 * (*k * *k) as u64;
                w + if *bias { *cout as u64 } else { 0 }
            }
            LayerKind::BatchNorm { channels } => 2 * *channels as u64,
            LayerKind::Fc { cin, cout, bias } => {
                (*cin as u64) * (*cout as u64) + if *bias { *cout as u64 } else { 0 }
            }
            LayerKind::Attention { kind, channels, effective, .. } => {
                // attach_attention guarantees divisibility, so this cannot
                // fail on a built graph.
                param_count_module(*kind, *channels, *effective).unwrap_or(0)
            }
            _ => 0,
        }
    }

    pub(crate) fn macs(&self, h: usize, w: usize) -> u64 {
        let hw = (h * w) as u64;
        match self {
            LayerKind::Conv { cin, cout, k, groups, .. } => {
                // h, w here are already the OUTPUT extents.
                (*cout as u64) * (*cin / *groups) as u64 * (*k * *k) as u64 * hw
            }
            LayerKind::Fc { cin, cout, .. } => (*cin as u64) * (*cout as u64),
            LayerKind::Attention { kind, channels, effective, .. } => {
                let ch = *channels as u64;
                let hw_sum = (h + w) as u64;
                match kind {
                    AttentionKind::Ema => {
                        let g = *effective as u64;
                        let c = ch / g;
                        // 1x1 conv over the stacked profiles, 3x3 conv over
                        // the folded map, and the two fusion matmuls.
                        g * c * c * hw_sum + 9 * g * c * c * hw + 2 * g * c * hw
                    }
                    AttentionKind::Ca => {
                        let m = ch / *effective as u64;
                        // Reduce conv plus the two route convs, all on the
                        // pooled profiles.
                        2 * m * ch * hw_sum
                    }
                    AttentionKind::Se => {
                        let m = ch / *effective as u64;
                        2 * ch * m
                    }
                }
            }
            _ => 0,
        }
    }
}

impl ModelGraph {
    /// Channel count coming out of every layer, validating arity and
    /// channel continuity along the way.
    pub fn channels(&self) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            for &inp in &layer.inputs {
                if inp >= i {
                    return Err(Error::Config(format!(
                        "layer {i} ({}) consumes layer {inp}, which is not earlier in the graph",
                        layer.name
                    )));
                }
            }
            let cin = match layer.inputs.as_slice() {
                [] => self.input_channels,
                [a] => out[*a],
                [a, b] => {
                    if !matches!(layer.kind, LayerKind::Add) {
                        return Err(Error::Config(format!(
                            "layer {} takes two inputs but is not an add",
                            layer.name
                        )));
                    }
                    if out[*a] != out[*b] {
                        return Err(Error::Config(format!(
                            "add layer {} joins {} and {} channels",
                            layer.name, out[*a], out[*b]
                        )));
                    }
                    out[*a]
                }
                more => {
                    return Err(Error::Config(format!(
                        "layer {} has {} inputs; at most two are supported",
                        layer.name,
                        more.len()
                    )));
                }
            };
            match &layer.kind {
                LayerKind::Conv { cin: c, groups, .. } => {
                    if *c != cin {
                        return Err(Error::Config(format!(
                            "conv {} declares {c} input channels but receives {cin}",
                            layer.name
                        )));
                    }
                    if *groups == 0 || c % groups != 0 {
                        return Err(Error::Config(format!(
                            "conv {} has invalid group count {groups} for {c} channels",
                            layer.name
                        )));
                    }
                }
                LayerKind::BatchNorm { channels } if *channels != cin => {
                    return Err(Error::Config(format!(
                        "batchnorm {} declares {channels} channels but receives {cin}",
                        layer.name
                    )));
                }
                LayerKind::Fc { cin: c, .. } if *c != cin => {
                    return Err(Error::Config(format!(
                        "fc {} declares {c} input features but receives {cin}",
                        layer.name
                    )));
                }
                LayerKind::Attention { channels, effective, .. } => {
                    if *channels != cin {
                        return Err(Error::Config(format!(
                            "attention {} built for {channels} channels but receives {cin}",
                            layer.name
                        )));
                    }
                    if *effective == 0 || channels % effective != 0 {
                        return Err(Error::Config(format!(
                            "attention {} has non-dividing hyperparameter {effective}",
                            layer.name
                        )));
                    }
                }
                _ => {}
            }
            out.push(layer.kind.out_channels(cin));
        }
        Ok(out)
    }

    /// Spatial extents coming out of every layer for a given input size.
    /// Strided convs floor the division, so off-by-one input sizes shrink
    /// rather than erroring; the executable kernels are stricter.
    pub fn spatial(&self, input_hw: (usize, usize)) -> Result<Vec<(usize, usize)>> {
        let mut out: Vec<(usize, usize)> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (h, w) = match layer.inputs.as_slice() {
                [] => input_hw,
                [a] => out[*a],
                [a, b] => {
                    if out[*a] != out[*b] {
                        return Err(Error::Config(format!(
                            "add layer {} joins {:?} and {:?} extents",
                            layer.name, out[*a], out[*b]
                        )));
                    }
                    out[*a]
                }
                _ => unreachable!("arity checked by channels()"),
            };
            let next = match &layer.kind {
                LayerKind::Conv { k, stride, padding, .. } => {
                    let grow = h + 2 * padding;
                    let gcol = w + 2 * padding;
                    if grow < *k || gcol < *k {
                        return Err(Error::Config(format!(
                            "conv {} kernel {k} exceeds padded input {grow}x{gcol} at layer {i}",
                            layer.name
                        )));
                    }
                    ((grow - k) / stride + 1, (gcol - k) / stride + 1)
                }
                LayerKind::GlobalAvgPool => (1, 1),
                LayerKind::Fc { .. } => (1, 1),
                _ => (h, w),
            };
            out.push(next);
        }
        Ok(out)
    }

    pub fn param_count(&self) -> Result<u64> {
        self.channels()?;
        Ok(self.layers.iter().map(|l| l.kind.params()).sum())
    }

    pub fn mac_count(&self, input_hw: (usize, usize)) -> Result<u64> {
        self.channels()?;
        let spatial = self.spatial(input_hw)?;
        Ok(self
            .layers
            .iter()
            .zip(&spatial)
            .map(|(l, &(h, w))| l.kind.macs(h, w))
            .sum())
    }

    pub fn complexity(&self, input_hw: (usize, usize)) -> Result<ComplexityReport> {
        self.channels()?;
        let spatial = self.spatial(input_hw)?;
        let mut stages: Vec<StageRow> = Vec::new();
        let mut params = 0u64;
        let mut macs = 0u64;
        for (layer, &(h, w)) in self.layers.iter().zip(&spatial) {
            let p = layer.kind.params();
            let m = layer.kind.macs(h, w);
            params += p;
            macs += m;
            match stages.iter_mut().find(|s| s.stage == layer.stage) {
                Some(row) => {
                    row.params += p;
                    row.macs += m;
                }
                None => stages.push(StageRow { stage: layer.stage.clone(), params: p, macs: m }),
            }
        }
        Ok(ComplexityReport {
            model: self.name.clone(),
            classes: self.classes,
            input_hw,
            layers: self.layers.len(),
            params,
            macs,
            stages,
        })
    }

    /// One line per layer: name, kind summary, output channels and extents,
    /// parameters, MACs. The CLI report embeds this dump.
    pub fn export_lines(&self, input_hw: (usize, usize)) -> Result<Vec<String>> {
        let channels = self.channels()?;
        let spatial = self.spatial(input_hw)?;
        let mut lines = Vec::with_capacity(self.layers.len());
        for ((layer, &c), &(h, w)) in self.layers.iter().zip(&channels).zip(&spatial) {
            let kind = match &layer.kind {
                LayerKind::Conv { k, stride, groups, .. } => {
                    if *groups > 1 {
                        format!("conv{k}x{k}dw/s{stride}")
                    } else {
                        format!("conv{k}x{k}/s{stride}")
                    }
                }
                LayerKind::BatchNorm { .. } => "batchnorm".to_string(),
                LayerKind::Activation { name } => (*name).to_string(),
                LayerKind::GlobalAvgPool => "gap".to_string(),
                LayerKind::Fc { .. } => "fc".to_string(),
                LayerKind::Add => "add".to_string(),
                LayerKind::Attention { kind, effective, .. } => {
                    format!("{}({})", kind.name(), effective)
                }
            };
            lines.push(format!(
                "{name} {kind} {c}x{h}x{w} params={p} macs={m}",
                name = layer.name,
                p = layer.kind.params(),
                m = layer.kind.macs(h, w),
            ));
        }
        Ok(lines)
    }
}

struct Builder {
    layers: Vec<LayerSpec>,
    stage: String,
}

impl Builder {
    fn new() -> Self {
        Builder { layers: Vec::new(), stage: "stem".to_string() }
    }

    fn stage(&mut self, name: &str) {
        self.stage = name.to_string();
    }

    fn push(&mut self, name: String, kind: LayerKind, inputs: Vec<usize>) -> usize {
        self.layers.push(LayerSpec {
            name,
            kind,
            inputs,
            stage: self.stage.clone(),
            attention_slot: false,
        });
        self.layers.len() - 1
    }

    fn conv(
        &mut self,
        name: String,
        from: Option<usize>,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> usize {
        self.push(
            name,
            LayerKind::Conv { cin, cout, k, stride, padding, groups: 1, bias: false },
            from.into_iter().collect(),
        )
    }

    fn bn(&mut self, name: String, from: usize, channels: usize) -> usize {
        self.push(name, LayerKind::BatchNorm { channels }, vec![from])
    }

    fn act(&mut self, name: String, from: usize, act: &'static str) -> usize {
        self.push(name, LayerKind::Activation { name: act }, vec![from])
    }
}

/// Bottleneck residual block (1x1 reduce, 3x3 spatial with the stride, 1x1
/// expand), projection shortcut on shape change, attention slot after the
/// final batch norm and before the residual add.
fn bottleneck(
    b: &mut Builder,
    prefix: &str,
    from: usize,
    cin: usize,
    mid: usize,
    cout: usize,
    stride: usize,
) -> usize {
    let c1 = b.conv(format!("{prefix}.conv1"), Some(from), cin, mid, 1, 1, 0);
    let n1 = b.bn(format!("{prefix}.bn1"), c1, mid);
    let r1 = b.act(format!("{prefix}.relu1"), n1, "relu");
    let c2 = b.conv(format!("{prefix}.conv2"), Some(r1), mid, mid, 3, stride, 1);
    let n2 = b.bn(format!("{prefix}.bn2"), c2, mid);
    let r2 = b.act(format!("{prefix}.relu2"), n2, "relu");
    let c3 = b.conv(format!("{prefix}.conv3"), Some(r2), mid, cout, 1, 1, 0);
    let n3 = b.bn(format!("{prefix}.bn3"), c3, cout);
    b.layers[n3].attention_slot = true;
    let shortcut = if stride != 1 || cin != cout {
        let pc = b.conv(format!("{prefix}.proj"), Some(from), cin, cout, 1, stride, 0);
        b.bn(format!("{prefix}.projbn"), pc, cout)
    } else {
        from
    };
    let add = b.push(format!("{prefix}.add"), LayerKind::Add, vec![n3, shortcut]);
    b.act(format!("{prefix}.relu3"), add, "relu")
}

fn resnet_cifar(name: &str, blocks: [usize; 4], classes: usize) -> ModelGraph {
    let mut b = Builder::new();
    // CIFAR stem: 3x3 stride-1 conv straight to 64 channels, no max pool.
    let sc = b.conv("stem.conv".into(), None, 3, 64, 3, 1, 1);
    let sb = b.bn("stem.bn".into(), sc, 64);
    let mut cur = b.act("stem.relu".into(), sb, "relu");
    let mut cin = 64;
    for (stage_idx, &n) in blocks.iter().enumerate() {
        let stage = format!("stage{}", stage_idx + 1);
        b.stage(&stage);
        let mid = 64 << stage_idx;
        let cout = 256 << stage_idx;
        for block in 0..n {
            // The 32x32 input skips the usual stage-1 downsampling; stages
            // 2 to 4 halve the extent in their first block.
            let stride = if stage_idx > 0 && block == 0 { 2 } else { 1 };
            cur = bottleneck(
                &mut b,
                &format!("{stage}.b{block}"),
                cur,
                cin,
                mid,
                cout,
                stride,
            );
            cin = cout;
        }
    }
    b.stage("head");
    let gap = b.push("head.gap".into(), LayerKind::GlobalAvgPool, vec![cur]);
    b.push(
        "head.fc".into(),
        LayerKind::Fc { cin, cout: classes, bias: true },
        vec![gap],
    );
    ModelGraph {
        name: name.to_string(),
        input_channels: 3,
        default_hw: (32, 32),
        classes,
        layers: b.layers,
    }
}

pub fn build_resnet50_cifar(classes: usize) -> ModelGraph {
    resnet_cifar("resnet50-cifar", [3, 4, 6, 3], classes)
}

pub fn build_resnet101_cifar(classes: usize) -> ModelGraph {
    resnet_cifar("resnet101-cifar", [3, 4, 23, 3], classes)
}

/// Inverted residual: 1x1 expand (skipped when the expansion factor is 1),
/// depthwise 3x3 with the stride, linear 1x1 projection, identity add when
/// the shape is preserved. The attention slot sits at the block output.
fn inverted_residual(
    b: &mut Builder,
    prefix: &str,
    from: usize,
    cin: usize,
    cout: usize,
    stride: usize,
    expand: usize,
) -> usize {
    let hidden = cin * expand;
    let mut cur = from;
    if expand != 1 {
        let ec = b.conv(format!("{prefix}.expand"), Some(cur), cin, hidden, 1, 1, 0);
        let eb = b.bn(format!("{prefix}.expandbn"), ec, hidden);
        cur = b.act(format!("{prefix}.expandrelu"), eb, "relu6");
    }
    let dw = b.push(
        format!("{prefix}.dw"),
        LayerKind::Conv {
            cin: hidden,
            cout: hidden,
            k: 3,
            stride,
            padding: 1,
            groups: hidden,
            bias: false,
        },
        vec![cur],
    );
    let db = b.bn(format!("{prefix}.dwbn"), dw, hidden);
    let dr = b.act(format!("{prefix}.dwrelu"), db, "relu6");
    let pc = b.conv(format!("{prefix}.project"), Some(dr), hidden, cout, 1, 1, 0);
    let pb = b.bn(format!("{prefix}.projectbn"), pc, cout);
    let out = if stride == 1 && cin == cout {
        b.push(format!("{prefix}.add"), LayerKind::Add, vec![pb, from])
    } else {
        pb
    };
    b.layers[out].attention_slot = true;
    out
}

pub fn build_mobilenetv2(classes: usize) -> ModelGraph {
    // (expansion, output channels, repeats, first stride) per stage.
    const SETTINGS: [(usize, usize, usize, usize); 7] = [
        (1, 16, 1, 1),
        (6, 24, 2, 2),
        (6, 32, 3, 2),
        (6, 64, 4, 2),
        (6, 96, 3, 1),
        (6, 160, 3, 2),
        (6, 320, 1, 1),
    ];
    let mut b = Builder::new();
    let sc = b.conv("stem.conv".into(), None, 3, 32, 3, 2, 1);
    let sb = b.bn("stem.bn".into(), sc, 32);
    let mut cur = b.act("stem.relu".into(), sb, "relu6");
    let mut cin = 32;
    for (stage_idx, &(expand, cout, repeats, stride)) in SETTINGS.iter().enumerate() {
        let stage = format!("stage{}", stage_idx + 1);
        b.stage(&stage);
        for block in 0..repeats {
            let s = if block == 0 { stride } else { 1 };
            cur = inverted_residual(
                &mut b,
                &format!("{stage}.b{block}"),
                cur,
                cin,
                cout,
                s,
                expand,
            );
            cin = cout;
        }
    }
    b.stage("head");
    let hc = b.conv("head.conv".into(), Some(cur), cin, 1280, 1, 1, 0);
    let hb = b.bn("head.bn".into(), hc, 1280);
    let hr = b.act("head.relu".into(), hb, "relu6");
    let gap = b.push("head.gap".into(), LayerKind::GlobalAvgPool, vec![hr]);
    b.push(
        "head.fc".into(),
        LayerKind::Fc { cin: 1280, cout: classes, bias: true },
        vec![gap],
    );
    ModelGraph {
        name: "mobilenetv2".to_string(),
        input_channels: 3,
        default_hw: (224, 224),
        classes,
        layers: b.layers,
    }
}

/// Largest divisor of `channels` not exceeding `requested`. `requested` of
/// zero is rejected by `attach_attention` before this runs.
fn effective_hyper(channels: usize, requested: usize) -> usize {
    (1..=requested.min(channels))
        .rev()
        .find(|d| channels % d == 0)
        .unwrap_or(1)
}

/// Splice one attention module after every marked slot. Slot widths that the
/// requested hyperparameter does not divide fall back to the largest divisor
/// below it, so a single request covers heterogeneous widths.
pub fn attach_attention(
    graph: &ModelGraph,
    kind: AttentionKind,
    requested: usize,
) -> Result<ModelGraph> {
    if requested == 0 {
        return Err(Error::Config(
            "attention hyperparameter must be >= 1".into(),
        ));
    }
    let channels = graph.channels()?;
    if !graph.layers.iter().any(|l| l.attention_slot) {
        return Err(Error::Config(format!(
            "graph {} has no attention slots",
            graph.name
        )));
    }
    let mut layers: Vec<LayerSpec> = Vec::with_capacity(graph.layers.len());
    // Consumers referencing old index i read remap[i] in the new graph.
    let mut remap: Vec<usize> = Vec::with_capacity(graph.layers.len());
    for (i, layer) in graph.layers.iter().enumerate() {
        let mut copied = layer.clone();
        copied.inputs = copied.inputs.iter().map(|&p| remap[p]).collect();
        layers.push(copied);
        let mut new_idx = layers.len() - 1;
        if layer.attention_slot {
            let ch = channels[i];
            let effective = effective_hyper(ch, requested);
            layers.push(LayerSpec {
                name: format!("{}.{}", layer.name, kind.name()),
                kind: LayerKind::Attention { kind, channels: ch, requested, effective },
                inputs: vec![new_idx],
                stage: layer.stage.clone(),
                attention_slot: false,
            });
            new_idx = layers.len() - 1;
        }
        remap.push(new_idx);
    }
    let attached = ModelGraph {
        name: format!("{}+{}", graph.name, kind.name()),
        input_channels: graph.input_channels,
        default_hw: graph.default_hw,
        classes: graph.classes,
        layers,
    };
    attached.channels()?;
    Ok(attached)
}

pub fn build_backbone(name: &str, classes: usize) -> Result<ModelGraph> {
    match name {
        "resnet50-cifar" => Ok(build_resnet50_cifar(classes)),
        "resnet101-cifar" => Ok(build_resnet101_cifar(classes)),
        "mobilenetv2" => Ok(build_mobilenetv2(classes)),
        other => Err(Error::Config(format!(
            "unknown backbone {other:?}; expected resnet50-cifar, resnet101-cifar, or mobilenetv2"
        ))),
    }
}
