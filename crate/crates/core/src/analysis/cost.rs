//! Analytic parameter / FLOP / convolution / activation accounting.
//!
//! The walker mirrors every forward pass in [`crate::blocks`] on shapes alone, applying the same
//! per-operation rules as [`crate::autodiff::Tape::stats`], so the two agree exactly on any
//! configuration small enough to actually run.
//!
//! Counting rules, per operation output of `m` elements:
//!
//! * convolution: `m * C_in/g * k^2` multiply-accumulates; FLOPs are the MACs plus `m` when the
//!   layer has a bias
//! * batched matmul with inner extent `k`: `m * k` MACs and FLOPs
//! * softmax `3m`, bilinear upsample `4m`, pooling and means: one per input element
//! * other elementwise ops: `m`; concatenation and slicing: free
//!
//! One multiply-accumulate counts as one FLOP. [`CostReport::flops_2mac`] gives the total under
//! the two-FLOPs-per-MAC convention instead.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use crate::blocks::{ContextModule, Fusion, Model, ModelConfig, Mrb, Rcb, RestorationNet, Rrg, Skff};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Direction, Resample};
use crate::params::{ParamId, ParamStore};
use crate::tensor::DType;

type Shape = [usize; 4];

fn numel(s: Shape) -> u64 {
    s.iter().map(|&v| v as u64).product()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub macs: u64,
    pub flops: u64,
    pub activations: u64,
    pub convs: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CostReport {
    pub height: usize,
    pub width: usize,
    pub layers: Vec<LayerCost>,
    pub params: u64,
    pub macs: u64,
    pub flops: u64,
    pub conv_count: u64,
    pub activation_count: u64,
}

impl CostReport {
    /// FLOPs with every multiply-accumulate counted as two operations.
    pub fn flops_2mac(&self) -> u64 {
        self.flops + self.macs
    }

    fn from_layers(height: usize, width: usize, layers: Vec<LayerCost>) -> Self {
        let mut r = CostReport {
            height,
            width,
            ..Default::default()
        };
        for l in &layers {
            r.params += l.params;
            r.macs += l.macs;
            r.flops += l.flops;
            r.conv_count += l.convs;
            r.activation_count += l.activations;
        }
        r.layers = layers;
        r
    }

    /// Tab-separated table: a header, one row per layer, then a `TOTAL` row.
    pub fn to_table(&self) -> String {
        let mut s = String::from("layer\tparams\tmacs\tflops\tactivations\tconvs\n");
        let mut row = |name: &str, p: u64, m: u64, f: u64, a: u64, c: u64| {
            let _ = writeln!(s, "{name}\t{p}\t{m}\t{f}\t{a}\t{c}");
        };
        for l in &self.layers {
            row(&l.name, l.params, l.macs, l.flops, l.activations, l.convs);
        }
        row(
            "TOTAL",
            self.params,
            self.macs,
            self.flops,
            self.activation_count,
            self.conv_count,
        );
        s
    }

    /// `key = value` lines.
    pub fn to_key_values(&self) -> String {
        format!(
            "size = {}x{}\nparams = {}\nmacs = {}\nflops = {}\nflops_2mac = {}\nconvs = {}\nactivations = {}\n",
            self.height,
            self.width,
            self.params,
            self.macs,
            self.flops,
            self.flops_2mac(),
            self.conv_count,
            self.activation_count
        )
    }
}

/// Parse the output of [`CostReport::to_key_values`] (or any `key = value` block).
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("line {}: expected `key = value`", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Parse a [`CostReport::to_table`] back into per-layer records (the `TOTAL` row excluded).
pub fn parse_table(text: &str) -> Result<Vec<LayerCost>> {
    let mut lines = text.lines();
    if lines.next() != Some("layer\tparams\tmacs\tflops\tactivations\tconvs") {
        return Err(Error::Format("missing cost table header".into()));
    }
    let mut out = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(Error::Format(format!("bad cost row `{line}`")));
        }
        if f[0] == "TOTAL" {
            continue;
        }
        let num = |s: &str| s.parse::<u64>().map_err(|e| Error::Format(format!("`{s}`: {e}")));
        out.push(LayerCost {
            name: f[0].to_string(),
            params: num(f[1])?,
            macs: num(f[2])?,
            flops: num(f[3])?,
            activations: num(f[4])?,
            convs: num(f[5])?,
        });
    }
    Ok(out)
}

struct Tracer<'a> {
    store: &'a ParamStore,
    seen: HashSet<ParamId>,
    layers: Vec<LayerCost>,
    index: HashMap<String, usize>,
}

impl<'a> Tracer<'a> {
    fn new(store: &'a ParamStore) -> Self {
        Tracer {
            store,
            seen: HashSet::new(),
            layers: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn rec(&mut self, name: &str) -> &mut LayerCost {
        let i = *self.index.entry(name.to_string()).or_insert_with(|| {
            self.layers.push(LayerCost {
                name: name.to_string(),
                ..Default::default()
            });
            self.layers.len() - 1
        });
        &mut self.layers[i]
    }

    fn op(&mut self, scope: &str, out: u64, flops: u64) {
        let r = self.rec(scope);
        r.flops += flops;
        r.activations += out;
    }

    fn elementwise(&mut self, scope: &str, s: Shape) -> Shape {
        self.op(scope, numel(s), numel(s));
        s
    }

    fn conv(&mut self, name: &str, c: &Conv2d, x: Shape) -> Shape {
        let y = [x[0], c.out_channels, x[2], x[3]];
        let out = numel(y);
        let macs = out * (c.in_channels / c.geom.groups * c.kernel * c.kernel) as u64;
        let mut params = 0;
        for id in c.param_ids() {
            if self.seen.insert(id) {
                params += self.store.tensor(id).numel() as u64;
            }
        }
        let r = self.rec(name);
        r.params += params;
        r.macs += macs;
        r.flops += macs + if c.bias.is_some() { out } else { 0 };
        r.activations += out;
        r.convs += 1;
        y
    }

    fn resample(&mut self, name: &str, rs: &Resample, x: Shape) -> Shape {
        match rs.direction {
            Direction::Down2x => {
                let pooled = [x[0], x[1], x[2] / 2, x[3] / 2];
                self.op(name, numel(pooled), numel(x));
                self.conv(&format!("{name}.proj"), &rs.proj, pooled)
            }
            Direction::Up2x => {
                let y = self.conv(&format!("{name}.proj"), &rs.proj, x);
                let up = [y[0], y[1], y[2] * 2, y[3] * 2];
                self.op(name, numel(up), 4 * numel(up));
                up
            }
        }
    }

    fn skff(&mut self, name: &str, s: &Skff, x: Shape) -> Shape {
        let n = s.n_inputs as u64;
        let vol = numel(x);
        let (b, c) = (x[0] as u64, x[1] as u64);
        for _ in 1..s.n_inputs {
            self.elementwise(name, x);
        }
        self.op(name, b * c, vol);
        let z = self.conv(&format!("{name}.down"), &s.down, [x[0], x[1], 1, 1]);
        for (i, up) in s.ups.iter().enumerate() {
            self.conv(&format!("{name}.up{i}"), up, z);
        }
        self.op(name, b * n * c, 0);
        self.op(name, b * n * c, 3 * b * n * c);
        for _ in 0..s.n_inputs {
            self.op(name, b * c, 0);
            self.elementwise(name, x);
        }
        for _ in 1..s.n_inputs {
            self.elementwise(name, x);
        }
        x
    }

    fn fusion(&mut self, name: &str, f: &Fusion, x: Shape) -> Shape {
        match f {
            Fusion::Skff(s) => self.skff(&format!("{name}.skff"), s, x),
            Fusion::Sum { n_inputs } => {
                for _ in 1..*n_inputs {
                    self.elementwise(name, x);
                }
                x
            }
            Fusion::Concat { n_inputs, proj } => {
                let cat = [x[0], x[1] * n_inputs, x[2], x[3]];
                self.op(name, numel(cat), 0);
                self.conv(&format!("{name}.concat"), proj, cat)
            }
        }
    }

    fn context(&mut self, name: &str, cm: &ContextModule, x: Shape) -> Shape {
        let (b, c, hw) = (x[0] as u64, x[1] as u64, (x[2] * x[3]) as u64);
        self.conv(&format!("{name}.mask"), &cm.mask, x);
        self.op(name, b * hw, 3 * b * hw);
        self.rec(name).macs += b * c * hw;
        self.op(name, b * c, b * c * hw);
        if let Some((t1, t2)) = &cm.transform {
            let h = self.conv(&format!("{name}.t1"), t1, [x[0], x[1], 1, 1]);
            self.elementwise(name, h);
            self.conv(&format!("{name}.t2"), t2, h);
        }
        self.elementwise(name, x)
    }

    fn rcb(&mut self, name: &str, r: &Rcb, x: Shape) -> Shape {
        let h = self.conv(&format!("{name}.gconv1"), &r.gconv1, x);
        self.elementwise(name, h);
        let fb = self.conv(&format!("{name}.gconv2"), &r.gconv2, h);
        let ctx = self.context(&format!("{name}.cm"), &r.cm, fb);
        self.conv(&format!("{name}.w_last"), &r.w_last, ctx);
        self.elementwise(name, x)
    }

    fn mrb(&mut self, name: &str, m: &Mrb, x: Shape, shared: bool) -> Shape {
        let mut streams = vec![x];
        for (k, d) in m.down.iter().enumerate() {
            let prev = *streams.last().expect("non-empty");
            streams.push(self.resample(&format!("{name}.down{}", k + 1), d, prev));
        }
        for (col, (rcbs, exchange)) in m.rcbs.iter().zip(&m.exchange).enumerate() {
            for (k, (s, rcb)) in streams.iter_mut().zip(rcbs).enumerate() {
                let scope = if shared && col == 0 {
                    format!("{name}.s{k}.rcb")
                } else {
                    format!("{name}.s{k}.rcb_c{col}")
                };
                *s = self.rcb(&scope, rcb, *s);
            }
            for k in (0..exchange.len()).rev() {
                let p = format!("{name}.c{col}.x{k}");
                self.resample(&format!("{p}.up"), &exchange[k].up, streams[k + 1]);
                streams[k] = self.fusion(&p, &exchange[k].fusion, streams[k]);
            }
        }
        if let Some(f) = &m.final_fusion {
            for (k, chain) in m.final_up.iter().enumerate() {
                let mut s = streams[k + 1];
                for (j, up) in chain.iter().enumerate() {
                    s = self.resample(&format!("{name}.final.up{}_{j}", k + 1), up, s);
                }
            }
            self.fusion(&format!("{name}.final"), f, x);
        }
        self.conv(&format!("{name}.conv_out"), &m.conv_out, x);
        self.elementwise(name, x)
    }

    fn rrg(&mut self, name: &str, r: &Rrg, x: Shape, shared: bool) -> Shape {
        for (j, m) in r.mrbs.iter().enumerate() {
            self.mrb(&format!("{name}.mrb{j}"), m, x, shared);
        }
        self.conv(&format!("{name}.conv"), &r.conv, x);
        self.elementwise(name, x)
    }

    fn net(&mut self, net: &RestorationNet, x: Shape) -> Shape {
        let h = self.conv("head", &net.head, x);
        for (i, r) in net.rrgs.iter().enumerate() {
            self.rrg(&format!("rrg{i}"), r, h, net.cfg.share_rcb);
        }
        let y = self.conv("tail", &net.tail, h);
        if net.cfg.in_channels != net.cfg.out_channels {
            // mean of the two views: two slices, an add and a scale
            self.op("residual", 2 * numel(y), 0);
            self.elementwise("residual", y);
            self.elementwise("residual", y);
        }
        self.elementwise("residual", y)
    }
}

/// Costs of one forward pass of `cfg` on a single `height x width` image.
pub fn count_costs(cfg: &ModelConfig, height: usize, width: usize) -> Result<CostReport> {
    if height == 0 || width == 0 {
        return Err(Error::Invalid(format!("size {height}x{width} must be positive")));
    }
    cfg.check_spatial(height, width)?;
    let model = Model::zeroed(cfg, DType::F32)?;
    Ok(model_costs(&model, height, width))
}

/// Costs of an existing model; `params` covers every unique tensor in its store.
pub fn model_costs(model: &Model, height: usize, width: usize) -> CostReport {
    let mut t = Tracer::new(&model.store);
    t.net(&model.net, [1, model.config().in_channels, height, width]);
    debug_assert_eq!(t.seen.len(), model.store.len());
    CostReport::from_layers(height, width, t.layers)
}

/// Parameter count of one fusion operator merging `n_inputs` streams of `channels` channels.
pub fn fusion_params(kind: crate::blocks::FusionKind, channels: usize, n_inputs: usize) -> Result<usize> {
    let mut store = ParamStore::new(DType::F32);
    let f = Fusion::register(&mut store, "fusion", kind, channels, n_inputs)?;
    debug_assert_eq!(store.num_params(), f.num_params());
    Ok(store.num_params())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::blocks::FusionKind;
    use crate::tensor::Tensor;

    fn check_against_tape(cfg: &ModelConfig, h: usize, w: usize) {
        let model = Model::he_uniform(cfg, DType::F32, 1).unwrap();
        let report = model_costs(&model, h, w);
        assert_eq!(report.params, model.num_params() as u64);
        let tape = Tape::new();
        let p = model.store.bind(&tape, false);
        let x = tape.leaf(Tensor::full([1, cfg.in_channels, h, w], 0.5, DType::F32).unwrap(), false);
        model.forward(&p, x).unwrap();
        let s = tape.stats();
        assert_eq!(report.conv_count, s.conv_count as u64, "convs");
        assert_eq!(report.macs, s.macs, "macs");
        assert_eq!(report.flops, s.flops, "flops");
        assert_eq!(report.activation_count, s.activations, "activations");
    }

    #[test]
    fn tiny_matches_recorded_tape() {
        check_against_tape(&ModelConfig::tiny(), 16, 16);
    }

    #[test]
    fn variants_match_recorded_tape() {
        let base = ModelConfig::tiny();
        for cfg in [
            ModelConfig {
                fusion: FusionKind::Concat,
                share_rcb: false,
                ..base.clone()
            },
            ModelConfig {
                fusion: FusionKind::Sum,
                cm_transform: false,
                n_mrb: 2,
                ..base.clone()
            },
            ModelConfig {
                stream_channels: vec![8, 12],
                n_cols: 3,
                in_channels: 6,
                ..base.clone()
            },
        ] {
            check_against_tape(&cfg, 8, 12);
        }
    }

    #[test]
    fn totals_are_layer_sums_and_round_trip() {
        let r = count_costs(&ModelConfig::tiny(), 32, 32).unwrap();
        let layers = parse_table(&r.to_table()).unwrap();
        assert_eq!(layers, r.layers);
        let kv = parse_key_values(&r.to_key_values()).unwrap();
        assert_eq!(kv["params"], r.params.to_string());
        assert_eq!(kv["flops_2mac"], (r.flops + r.macs).to_string());
        assert_eq!(kv["size"], "32x32");
    }

    #[test]
    fn flops_scale_with_area() {
        let a = count_costs(&ModelConfig::tiny(), 16, 16).unwrap();
        let b = count_costs(&ModelConfig::tiny(), 32, 32).unwrap();
        assert_eq!(b.params, a.params);
        let ratio = b.flops as f64 / a.flops as f64;
        assert!((ratio - 4.0).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn fusion_fixture_counts() {
        assert_eq!(fusion_params(FusionKind::Skff, 64, 2).unwrap(), 1536);
        assert_eq!(fusion_params(FusionKind::Concat, 64, 2).unwrap(), 8192);
        assert_eq!(fusion_params(FusionKind::Sum, 64, 2).unwrap(), 0);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(count_costs(&ModelConfig::tiny(), 0, 16).is_err());
        assert!(count_costs(&ModelConfig::tiny(), 18, 16).is_err());
    }
}
