//! Bias-corrected Adam.

use super::{NnError, Tensor};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Defaults: lr 1e-3, b1 0.9, b2 0.999, eps 1e-8.
    pub fn new(params: &[Tensor], lr: f64) -> AdamState {
        AdamState {
            lr,
            b1: 0.9,
            b2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// One Adam update over a parameter list. Gradients with NaN abort.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    st: &mut AdamState,
) -> Result<(), NnError> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), st.m.len());
    for (i, g) in grads.iter().enumerate() {
        if g.data().iter().any(|v| v.is_nan()) {
            return Err(NnError::NanGradient { index: i });
        }
        if g.shape() != params[i].shape() {
            return Err(NnError::Shape {
                op: "adam_step",
                msg: format!(
                    "param {i}: grad {:?} vs param {:?}",
                    g.shape(),
                    params[i].shape()
                ),
            });
        }
    }
    st.step += 1;
    let t = st.step as i32;
    let bc1 = 1.0 - st.b1.powi(t);
    let bc2 = 1.0 - st.b2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(st.m.iter_mut().zip(st.v.iter_mut()))
    {
        let pd = p.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        for k in 0..pd.len() {
            let gk = g.data()[k];
            md[k] = st.b1 * md[k] + (1.0 - st.b1) * gk;
            vd[k] = st.b2 * vd[k] + (1.0 - st.b2) * gk * gk;
            let mhat = md[k] / bc1;
            let vhat = vd[k] / bc2;
            pd[k] -= st.lr * mhat / (vhat.sqrt() + st.eps);
        }
    }
    Ok(())
}
