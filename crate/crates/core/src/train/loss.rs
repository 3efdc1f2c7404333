//! Pixel-space matting loss: L1 plus an L1 penalty on forward-difference gradients.

use crate::autograd::{Graph, Var};
use crate::error::{dim_err, Result};
use crate::tensor::Element;

fn abs_mean<T: Element>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let a = g.abs(x)?;
    g.mean(a)
}

/// `mean|p - t| + weight * (mean|dx p - dx t| + mean|dy p - dy t|)` over `[N, C, H, W]` mattes.
///
/// Each difference term averages over its own extent; a side of length 1 contributes nothing.
pub fn matting_loss<T: Element>(g: &mut Graph<T>, pred: Var, target: Var, grad_weight: f64) -> Result<Var> {
    let s = g.shape(pred).to_vec();
    if s.len() != 4 || g.shape(target) != s.as_slice() {
        return Err(dim_err!("prediction {s:?} and target {:?} must share one [N, C, H, W] extent", g.shape(target)));
    }
    let (h, w) = (s[2], s[3]);
    let d = g.sub(pred, target)?;
    let mut loss = abs_mean(g, d)?;
    if grad_weight == 0.0 {
        return Ok(loss);
    }
    let mut terms = Vec::new();
    if w > 1 {
        let (right, left) = (g.crop(d, 0, 1, h, w - 1)?, g.crop(d, 0, 0, h, w - 1)?);
        let dx = g.sub(right, left)?;
        terms.push(abs_mean(g, dx)?);
    }
    if h > 1 {
        let (down, up) = (g.crop(d, 1, 0, h - 1, w)?, g.crop(d, 0, 0, h - 1, w)?);
        let dy = g.sub(down, up)?;
        terms.push(abs_mean(g, dy)?);
    }
    for t in terms {
        let weighted = g.scale(t, T::of(grad_weight))?;
        loss = g.add(loss, weighted)?;
    }
    Ok(loss)
}
