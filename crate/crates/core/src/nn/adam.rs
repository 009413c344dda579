use serde::{Deserialize, Serialize};

use super::{Grads, Params};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, shaped like the parameter blocks they track.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: Params + ?Sized>(config: AdamConfig, params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params.blocks().iter().map(|b| vec![0.0; b.len()]).collect();
        AdamState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn check_shapes(&self, shapes: &[usize], grads: &Grads, label: &str) -> Result<()> {
        let check = |what: &str, got: Vec<usize>| {
            if got.len() != shapes.len() {
                return Err(Error::dim(format!("{label} {what} block count"), shapes.len(), got.len()));
            }
            for (k, (&want, have)) in shapes.iter().zip(got).enumerate() {
                if want != have {
                    return Err(Error::dim(format!("{label} {what} block {k}"), want, have));
                }
            }
            Ok(())
        };
        check("gradient", grads.blocks.iter().map(Vec::len).collect())?;
        check("first moment", self.m.iter().map(Vec::len).collect())?;
        check("second moment", self.v.iter().map(Vec::len).collect())
    }
}

/// Bias-corrected Adam update. When `l2 > 0` the term `l2·Θ` is added to the
/// gradient before the moments are updated.
pub fn adam_step<P: Params + ?Sized>(
    params: &mut P,
    grads: &Grads,
    state: &mut AdamState,
    l2: f64,
) -> Result<()> {
    let names = params.block_names();
    let shapes: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
    state.check_shapes(&shapes, grads, params.label())?;
    for (name, block) in names.iter().zip(&grads.blocks) {
        if let Some(pos) = block.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}[{pos}]")));
        }
    }

    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    let mut blocks = params.blocks_mut();
    for (k, block) in blocks.iter_mut().enumerate() {
        let g = &grads.blocks[k];
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        for i in 0..block.len() {
            let gi = g[i] + l2 * block[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            block[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    drop(blocks);

    for (name, block) in names.iter().zip(params.blocks()) {
        if let Some(pos) = block.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {name}[{pos}] after update")));
        }
    }
    Ok(())
}
