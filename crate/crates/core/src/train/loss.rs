use crate::error::{dim_err, Result};
use crate::tensor::{Tape, Var};

use super::LossKind;

/// Scalar training loss of `pred` against `gt`, both `[1, H, W]`.
///
/// `l1_grad` adds `0.5 · (mean|∂x(p − g)| + mean|∂y(p − g)|)` with forward
/// differences, each mean taken over its own difference map.
pub fn loss(tape: &mut Tape, pred: Var, gt: Var, kind: LossKind) -> Result<Var> {
    if tape.shape(pred) != tape.shape(gt) {
        return Err(dim_err!(
            "loss needs equal shapes, got {:?} and {:?}",
            tape.shape(pred),
            tape.shape(gt)
        ));
    }
    let r = tape.sub(pred, gt)?;
    let a = tape.abs(r);
    let l1 = tape.mean(a);
    if kind == LossKind::L1 {
        return Ok(l1);
    }
    let gx = tape.diff_x(r)?;
    let gy = tape.diff_y(r)?;
    let ax = tape.abs(gx);
    let ay = tape.abs(gy);
    let mx = tape.mean(ax);
    let my = tape.mean(ay);
    let g = tape.add(mx, my)?;
    let g = tape.scale(g, 0.5);
    tape.add(l1, g)
}
