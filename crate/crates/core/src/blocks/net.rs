use crate::autodiff::{Tape, Var};
use crate::blocks::{ModelConfig, Mrb};
use crate::data::{crop, pad_to_multiple};
use crate::error::{shape_err, Result};
use crate::nn::Conv2d;
use crate::params::{Bound, ParamStore};
use crate::tensor::{DType, Tensor};

/// Recursive residual group: MRBs, a trailing 3x3 conv and an outer skip.
#[derive(Clone, Debug)]
pub struct Rrg {
    pub mrbs: Vec<Mrb>,
    pub conv: Conv2d,
}

impl Rrg {
    pub fn register(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        let mrbs = (0..cfg.n_mrb)
            .map(|j| Mrb::register(store, &format!("{prefix}.mrb{j}"), cfg))
            .collect::<Result<_>>()?;
        let c = cfg.feat_channels();
        Ok(Rrg {
            mrbs,
            conv: {
                let conv = Conv2d::register(store, &format!("{prefix}.conv"), c, c, 3, 1, true)?;
                store.mark_branch_output(conv.weight);
                conv
            },
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for mrb in &self.mrbs {
            h = mrb.forward(p, h)?;
        }
        x.add(self.conv.forward(p, h)?)
    }
}

/// Head conv, residual groups, tail conv and a global residual connection.
#[derive(Clone, Debug)]
pub struct RestorationNet {
    pub cfg: ModelConfig,
    pub head: Conv2d,
    pub rrgs: Vec<Rrg>,
    pub tail: Conv2d,
}

impl RestorationNet {
    /// Register every parameter (zero-filled) in `store`.
    pub fn register(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.feat_channels();
        let head = Conv2d::register(store, "head", cfg.in_channels, c, 3, 1, true)?;
        let rrgs = (0..cfg.n_rrg)
            .map(|i| Rrg::register(store, &format!("rrg{i}"), cfg))
            .collect::<Result<_>>()?;
        let tail = Conv2d::register(store, "tail", c, cfg.out_channels, 3, 1, true)?;
        store.mark_branch_output(tail.weight);
        Ok(RestorationNet {
            cfg: cfg.clone(),
            head,
            rrgs,
            tail,
        })
    }

    /// The image the predicted residual is added to. For a dual-pixel input (twice as many
    /// input as output channels) this is the mean of the two views.
    pub fn residual_base<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let (cin, cout) = (self.cfg.in_channels, self.cfg.out_channels);
        if cin == cout {
            Ok(x)
        } else {
            x.narrow(1, 0, cout)?.add(x.narrow(1, cout, cout)?)?.scale(0.5)
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.cfg.in_channels {
            return shape_err(
                "model",
                format!("input {shape:?}, expected {} channels", self.cfg.in_channels),
            );
        }
        self.cfg.check_spatial(shape[2], shape[3])?;
        let mut h = self.head.forward(p, x)?;
        for rrg in &self.rrgs {
            h = rrg.forward(p, h)?;
        }
        self.residual_base(x)?.add(self.tail.forward(p, h)?)
    }
}

/// A network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub net: RestorationNet,
    pub store: ParamStore,
}

impl Model {
    /// All parameters zero; the forward pass is then the identity (or the view mean).
    pub fn zeroed(cfg: &ModelConfig, dtype: DType) -> Result<Self> {
        let mut store = ParamStore::new(dtype);
        let net = RestorationNet::register(&mut store, cfg)?;
        Ok(Model { net, store })
    }

    /// Training initialisation: He-uniform weights with every residual branch closed, so the
    /// untrained network is the identity.
    pub fn new(cfg: &ModelConfig, dtype: DType, seed: u64) -> Result<Self> {
        let mut m = Self::he_uniform(cfg, dtype, seed)?;
        m.store.zero_branch_outputs();
        Ok(m)
    }

    /// He-uniform everywhere, branch outputs included.
    pub fn he_uniform(cfg: &ModelConfig, dtype: DType, seed: u64) -> Result<Self> {
        let mut m = Self::zeroed(cfg, dtype)?;
        m.store.init_uniform(seed);
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.cfg
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        self.net.forward(p, x)
    }

    /// Untracked forward pass on a `[N, C_in, H, W]` tensor.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.store.bind(&tape, false);
        let x = tape.leaf(x.to_dtype(self.dtype()), false);
        Ok(self.forward(&p, x)?.value())
    }

    /// Restore an image of any size: reflect-pad to the scale multiple, run, crop back and clip
    /// to `[0, 1]`.
    pub fn restore(&self, x: &Tensor) -> Result<Tensor> {
        let (padded, (h, w)) = pad_to_multiple(x, self.config().scale_factor())?;
        Ok(crop(&self.infer(&padded)?, 0, 0, h, w)?.map(|v| v.clamp(0.0, 1.0)))
    }

    /// Copy of the model with parameters converted to `dtype`.
    pub fn cast(&self, dtype: DType) -> Result<Model> {
        let mut m = Model::zeroed(self.config(), dtype)?;
        for e in self.store.entries() {
            m.store.set_by_name(&e.name, e.tensor.to_dtype(dtype))?;
        }
        Ok(m)
    }
}

/// Build a model for `cfg` with freshly initialised parameters.
pub fn init_params(cfg: &ModelConfig, dtype: DType, seed: u64) -> Result<Model> {
    Model::new(cfg, dtype, seed)
}
