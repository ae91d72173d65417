//! Recompute the full network with plain scalar loops over `Vec<f64>` and compare with the
//! tensor engine. Parameters are looked up by name, aliases included.

use mrestore::blocks::{FusionKind, Model, ModelConfig};
use mrestore::data::synthetic_scene;
use mrestore::{DType, ParamStore};

#[derive(Clone, Debug)]
struct Img {
    c: usize,
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Img {
    fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.v[(c * self.h + y) * self.w + x]
    }
}

struct Oracle<'a> {
    store: &'a ParamStore,
    cfg: &'a ModelConfig,
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

impl Oracle<'_> {
    fn param(&self, name: &str) -> Vec<f64> {
        self.store
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
            .to_f64_vec()
    }

    fn conv(&self, x: &Img, prefix: &str, cout: usize, k: usize, groups: usize, bias: bool) -> Img {
        let w = self.param(&format!("{prefix}.weight"));
        let b = if bias { self.param(&format!("{prefix}.bias")) } else { vec![0.0; cout] };
        let (cin_g, cout_g, pad) = (x.c / groups, cout / groups, (k / 2) as isize);
        let mut v = vec![0.0; cout * x.h * x.w];
        for o in 0..cout {
            let g = o / cout_g;
            for y in 0..x.h {
                for xx in 0..x.w {
                    let mut acc = b[o];
                    for ci in 0..cin_g {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - pad;
                                let sx = xx as isize + kx as isize - pad;
                                if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                    continue;
                                }
                                let wt = w[((o * cin_g + ci) * k + ky) * k + kx];
                                acc += wt * x.at(g * cin_g + ci, sy as usize, sx as usize);
                            }
                        }
                    }
                    v[(o * x.h + y) * x.w + xx] = acc;
                }
            }
        }
        Img { c: cout, h: x.h, w: x.w, v }
    }

    fn proj(&self, x: &Img, prefix: &str, cout: usize) -> Img {
        self.conv(x, &format!("{prefix}.proj"), cout, 1, 1, false)
    }

    fn pool(x: &Img) -> Img {
        let (h, w) = (x.h / 2, x.w / 2);
        let mut v = Vec::with_capacity(x.c * h * w);
        for c in 0..x.c {
            for y in 0..h {
                for xx in 0..w {
                    let s = x.at(c, 2 * y, 2 * xx) + x.at(c, 2 * y, 2 * xx + 1) + x.at(c, 2 * y + 1, 2 * xx) + x.at(c, 2 * y + 1, 2 * xx + 1);
                    v.push(s / 4.0);
                }
            }
        }
        Img { c: x.c, h, w, v }
    }

    fn upsample(x: &Img) -> Img {
        let src = |o: usize, len: usize| -> (usize, usize, f64) {
            let s = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0).min((len - 1) as f64);
            let i0 = s.floor() as usize;
            (i0, (i0 + 1).min(len - 1), s - i0 as f64)
        };
        let (h, w) = (2 * x.h, 2 * x.w);
        let mut v = Vec::with_capacity(x.c * h * w);
        for c in 0..x.c {
            for y in 0..h {
                let (y0, y1, fy) = src(y, x.h);
                for xx in 0..w {
                    let (x0, x1, fx) = src(xx, x.w);
                    let top = (1.0 - fx) * x.at(c, y0, x0) + fx * x.at(c, y0, x1);
                    let bot = (1.0 - fx) * x.at(c, y1, x0) + fx * x.at(c, y1, x1);
                    v.push((1.0 - fy) * top + fy * bot);
                }
            }
        }
        Img { c: x.c, h, w, v }
    }

    fn add(a: &Img, b: &Img) -> Img {
        Img { v: a.v.iter().zip(&b.v).map(|(p, q)| p + q).collect(), ..a.clone() }
    }

    fn softmax(v: &[f64]) -> Vec<f64> {
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    }

    fn matvec(w: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
        let cols = x.len();
        (0..rows).map(|r| (0..cols).map(|c| w[r * cols + c] * x[c]).sum()).collect()
    }

    fn skff(&self, inputs: &[Img], prefix: &str) -> Img {
        let (c, hw) = (inputs[0].c, inputs[0].h * inputs[0].w);
        let r = (c / 8).max(4);
        let pooled: Vec<f64> = (0..c)
            .map(|ch| inputs.iter().map(|x| x.v[ch * hw..(ch + 1) * hw].iter().sum::<f64>()).sum::<f64>() / hw as f64)
            .collect();
        let z = Self::matvec(&self.param(&format!("{prefix}.skff.down.weight")), &pooled, r);
        let logits: Vec<Vec<f64>> = (0..inputs.len())
            .map(|i| Self::matvec(&self.param(&format!("{prefix}.skff.up{i}.weight")), &z, c))
            .collect();
        let mut out = vec![0.0; c * hw];
        for ch in 0..c {
            let s = Self::softmax(&logits.iter().map(|l| l[ch]).collect::<Vec<_>>());
            for (i, x) in inputs.iter().enumerate() {
                for p in 0..hw {
                    out[ch * hw + p] += s[i] * x.v[ch * hw + p];
                }
            }
        }
        Img { v: out, ..inputs[0].clone() }
    }

    fn fuse(&self, inputs: &[Img], prefix: &str) -> Img {
        match self.cfg.fusion {
            FusionKind::Skff => self.skff(inputs, prefix),
            FusionKind::Sum => inputs[1..].iter().fold(inputs[0].clone(), |a, b| Self::add(&a, b)),
            FusionKind::Concat => {
                let cat = Img {
                    c: inputs.len() * inputs[0].c,
                    v: inputs.iter().flat_map(|x| x.v.clone()).collect(),
                    ..inputs[0].clone()
                };
                self.conv(&cat, &format!("{prefix}.concat"), inputs[0].c, 1, 1, false)
            }
        }
    }

    fn rcb(&self, x: &Img, p: &str) -> Img {
        let g = self.cfg.groups;
        let mut a = self.conv(x, &format!("{p}.gconv1"), x.c, 3, g, true);
        a.v.iter_mut().for_each(|v| *v = relu(*v));
        let fb = self.conv(&a, &format!("{p}.gconv2"), x.c, 3, g, true);
        let hw = fb.h * fb.w;
        let mask = self.conv(&fb, &format!("{p}.cm.mask"), 1, 1, 1, false);
        let att = Self::softmax(&mask.v);
        let desc: Vec<f64> = (0..fb.c).map(|c| (0..hw).map(|i| fb.v[c * hw + i] * att[i]).sum()).collect();
        let ctx = if self.cfg.cm_transform {
            let hidden = (fb.c / 4).max(1);
            let t: Vec<f64> = Self::matvec(&self.param(&format!("{p}.cm.t1.weight")), &desc, hidden)
                .into_iter()
                .map(relu)
                .collect();
            Self::matvec(&self.param(&format!("{p}.cm.t2.weight")), &t, fb.c)
        } else {
            desc
        };
        let fused = Img {
            v: fb.v.iter().enumerate().map(|(i, v)| v + ctx[i / hw]).collect(),
            ..fb.clone()
        };
        Self::add(x, &self.conv(&fused, &format!("{p}.w_last"), x.c, 1, 1, true))
    }

    fn mrb(&self, x: &Img, p: &str) -> Img {
        let ch = &self.cfg.stream_channels;
        let n = ch.len();
        let mut s = vec![x.clone()];
        for k in 1..n {
            let prev = Self::pool(&s[k - 1]);
            s.push(self.proj(&prev, &format!("{p}.down{k}"), ch[k]));
        }
        for col in 0..self.cfg.n_cols {
            for (k, stream) in s.iter_mut().enumerate() {
                let name = if self.cfg.share_rcb && col == 0 {
                    format!("{p}.s{k}.rcb")
                } else {
                    format!("{p}.s{k}.rcb_c{col}")
                };
                *stream = self.rcb(stream, &name);
            }
            for k in (0..n - 1).rev() {
                let q = format!("{p}.c{col}.x{k}");
                // upsample first, then project: the engine runs these in the other order
                let lifted = self.proj(&Self::upsample(&s[k + 1]), &format!("{q}.up"), ch[k]);
                s[k] = self.fuse(&[s[k].clone(), lifted], &q);
            }
        }
        let top = if n > 1 {
            let mut full = vec![s[0].clone()];
            for k in 1..n {
                let mut t = s[k].clone();
                for j in 0..k {
                    t = self.proj(&Self::upsample(&t), &format!("{p}.final.up{k}_{j}"), ch[k - j - 1]);
                }
                full.push(t);
            }
            self.fuse(&full, &format!("{p}.final"))
        } else {
            s[0].clone()
        };
        Self::add(x, &self.conv(&top, &format!("{p}.conv_out"), x.c, 1, 1, false))
    }

    fn forward(&self, x: &Img) -> Img {
        let c = self.cfg.stream_channels[0];
        let mut h = self.conv(x, "head", c, 3, 1, true);
        for i in 0..self.cfg.n_rrg {
            let skip = h.clone();
            for j in 0..self.cfg.n_mrb {
                h = self.mrb(&h, &format!("rrg{i}.mrb{j}"));
            }
            h = Self::add(&skip, &self.conv(&h, &format!("rrg{i}.conv"), c, 3, 1, true));
        }
        Self::add(x, &self.conv(&h, "tail", self.cfg.out_channels, 3, 1, true))
    }
}

fn compare(cfg: &ModelConfig, seed: u64, h: usize, w: usize) {
    let model = Model::he_uniform(cfg, DType::F64, seed).unwrap();
    let input = synthetic_scene(h, w, seed).to_dtype(DType::F64);
    let got = model.infer(&input).unwrap().to_f64_vec();
    let oracle = Oracle { store: &model.store, cfg };
    let want = oracle
        .forward(&Img {
            c: 3,
            h,
            w,
            v: input.to_f64_vec(),
        })
        .v;
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = got.iter().zip(&want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(err <= 1e-12 * scale.max(1.0), "max error {err} at output scale {scale}");
}

#[test]
fn tiny_model_matches_scalar_loops() {
    compare(&ModelConfig::tiny(), 7, 16, 16);
}

#[test]
fn unshared_columns_and_rectangular_input() {
    let cfg = ModelConfig {
        share_rcb: false,
        n_rrg: 2,
        ..ModelConfig::tiny()
    };
    compare(&cfg, 8, 8, 12);
}

#[test]
fn fusion_variants_and_plain_context() {
    for fusion in [FusionKind::Sum, FusionKind::Concat] {
        let cfg = ModelConfig {
            fusion,
            cm_transform: false,
            ..ModelConfig::tiny()
        };
        compare(&cfg, 9, 8, 8);
    }
}

#[test]
fn two_stream_model() {
    let cfg = ModelConfig {
        stream_channels: vec![8, 12],
        n_cols: 3,
        ..ModelConfig::tiny()
    };
    compare(&cfg, 10, 6, 10);
}
