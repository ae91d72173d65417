use crate::error::{shape_err, Error, Result};
use crate::params::ParamStore;
use crate::tensor::{with_dtype, Element, Tensor};

/// Adam with bias correction and no weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed steps.
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

fn update<T: Element>(p: &[T], g: &[T], m: &[T], v: &[T], k: [f64; 6]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [b1, b2, c1, c2, lr, eps] = k.map(T::of);
    let one = T::one();
    let mut np = Vec::with_capacity(p.len());
    let mut nm = Vec::with_capacity(p.len());
    let mut nv = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let mi = b1 * m[i] + (one - b1) * g[i];
        let vi = b2 * v[i] + (one - b2) * g[i] * g[i];
        let mhat = mi / c1;
        let vhat = vi / c2;
        np.push(p[i] - lr * mhat / (vhat.sqrt() + eps));
        nm.push(mi);
        nv.push(vi);
    }
    (np, nm, nv)
}

impl Adam {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = store
            .entries()
            .iter()
            .map(|e| Tensor::zeros(e.tensor.shape(), store.dtype()).expect("valid shape"))
            .collect();
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update of every parameter in `store`. Nothing changes if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::Invalid(format!("learning rate {lr} must be positive")));
        }
        if grads.len() != store.len() || self.m.len() != store.len() {
            return shape_err(
                "adam",
                format!("{} gradients, {} moments for {} parameters", grads.len(), self.m.len(), store.len()),
            );
        }
        for (g, e) in grads.iter().zip(store.entries()) {
            if g.shape() != e.tensor.shape() {
                return shape_err("adam", format!("{}: gradient {:?} vs {:?}", e.name, g.shape(), e.tensor.shape()));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {} at step {}", e.name, self.step + 1)));
            }
        }
        let t = (self.step + 1) as i32;
        let k = [
            self.beta1,
            self.beta2,
            1.0 - self.beta1.powi(t),
            1.0 - self.beta2.powi(t),
            lr,
            self.eps,
        ];
        for i in 0..store.len() {
            let id = store.entries()[i].tensor.clone();
            let shape = id.shape().to_vec();
            let (p, m, v) = with_dtype!(store.dtype(), T => {
                let (p, m, v) = update::<T>(
                    id.data::<T>()?,
                    grads[i].data::<T>()?,
                    self.m[i].data::<T>()?,
                    self.v[i].data::<T>()?,
                    k,
                );
                (Tensor::new(shape.clone(), p)?, Tensor::new(shape.clone(), m)?, Tensor::new(shape.clone(), v)?)
            });
            store.set(crate::params::ParamId(i), p)?;
            self.m[i] = m;
            self.v[i] = v;
        }
        self.step += 1;
        Ok(())
    }
}
