//! Adam, one group per network.
//!
//! Moments are keyed by parameter name in registry order; `step` refuses to
//! run if the caller's ordering drifts from the one the group was built with.

use crate::error::{Error, Result};
use crate::nn::{Elem, Tensor};

#[derive(Debug, Clone)]
pub struct AdamGroup<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Updates applied so far; drives bias correction.
    pub t: u64,
    m: Vec<(String, Tensor<T>)>,
    v: Vec<(String, Tensor<T>)>,
}

impl<T: Elem> AdamGroup<T> {
    pub fn new(params: &[(String, &Tensor<T>)], beta1: f64, beta2: f64, eps: f64) -> Self {
        let m = params
            .iter()
            .map(|(n, p)| (n.clone(), Tensor::zeros(p.shape())))
            .collect();
        let v = params
            .iter()
            .map(|(n, p)| (n.clone(), Tensor::zeros(p.shape())))
            .collect();
        AdamGroup {
            beta1,
            beta2,
            eps,
            t: 0,
            m,
            v,
        }
    }

    pub fn first_moments(&self) -> &[(String, Tensor<T>)] {
        &self.m
    }

    pub fn second_moments(&self) -> &[(String, Tensor<T>)] {
        &self.v
    }

    pub fn moments_mut(
        &mut self,
    ) -> (
        &mut Vec<(String, Tensor<T>)>,
        &mut Vec<(String, Tensor<T>)>,
    ) {
        (&mut self.m, &mut self.v)
    }

    /// One update over the whole group. `params` and `grads` must follow the
    /// registry order the group was constructed from.
    pub fn step(
        &mut self,
        lr: f64,
        params: &mut [(String, &mut Tensor<T>)],
        grads: &[(String, &Tensor<T>)],
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer group holds {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let b1 = self.beta1;
        let b2 = self.beta2;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..params.len() {
            let (pn, p) = &mut params[i];
            let (gn, g) = &grads[i];
            let (mn, m) = &mut self.m[i];
            let (_, v) = &mut self.v[i];
            if pn != gn || pn != mn {
                return Err(Error::InvalidArgument(format!(
                    "optimizer ordering broke at {pn} (grad {gn}, moment {mn})"
                )));
            }
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "param {pn} is {:?} but grad is {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            let pd = p.data_mut();
            let gd = g.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for j in 0..pd.len() {
                let gj = gd[j].to_f();
                let mj = b1 * md[j].to_f() + (1.0 - b1) * gj;
                let vj = b2 * vd[j].to_f() + (1.0 - b2) * gj * gj;
                md[j] = T::from_f(mj);
                vd[j] = T::from_f(vj);
                let step = lr * (mj / c1) / ((vj / c2).sqrt() + self.eps);
                pd[j] = T::from_f(pd[j].to_f() - step);
            }
        }
        Ok(())
    }
}
