use crate::nn::{ParamStore, Real};
use crate::{Error, Result};

/// Bias-corrected Adam.
///
/// A parameter tensor whose gradient is exactly zero everywhere is left
/// untouched, moments included, so a zero gradient never moves weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    /// Fresh state with zeroed moments shaped like `params`.
    pub fn new(params: &ParamStore<T>, lr: f64) -> Self {
        let zeros: Vec<Vec<T>> = params
            .iter()
            .map(|(_, t)| vec![T::zero(); t.len()])
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &[Vec<T>],
    st: &mut AdamState<T>,
) -> Result<()> {
    if !(st.lr > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {}",
            st.lr
        )));
    }
    if grads.len() != params.len() || st.m.len() != params.len() || st.v.len() != params.len() {
        return Err(Error::SizeMismatch {
            expected: params.len(),
            found: grads.len(),
        });
    }
    st.t += 1;
    let bc1 = 1.0 - st.beta1.powi(st.t as i32);
    let bc2 = 1.0 - st.beta2.powi(st.t as i32);
    for (i, (_, p)) in params.iter_mut().enumerate() {
        let g = &grads[i];
        if g.len() != p.len() {
            return Err(Error::SizeMismatch {
                expected: p.len(),
                found: g.len(),
            });
        }
        if g.iter().all(|&x| x == T::zero()) {
            continue;
        }
        let (m, v) = (&mut st.m[i], &mut st.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g[j].as_f64();
            let mj = st.beta1 * m[j].as_f64() + (1.0 - st.beta1) * gj;
            let vj = st.beta2 * v[j].as_f64() + (1.0 - st.beta2) * gj * gj;
            m[j] = T::lit(mj);
            v[j] = T::lit(vj);
            let step = st.lr * (mj / bc1) / ((vj / bc2).sqrt() + st.eps);
            *w = T::lit(w.as_f64() - step);
        }
    }
    Ok(())
}
