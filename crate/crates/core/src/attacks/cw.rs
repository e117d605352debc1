use std::sync::Arc;

use super::engine::{check_run, evaluate, Builder};
use super::losses::sq_dist_const;
use super::{AttackConfig, Direction, LossName, LossTerm, ProtectionResult};
use crate::autodiff::{Tape, Var};
use crate::backends::{image_shape, BackendBundle};
use crate::error::Result;
use crate::image::{chw_to_hwc, project, ImageTensor, Perturbation};

fn tanh_image(tape: &mut Tape, w: Var, ones: &[f64]) -> Var {
    let t = tape.tanh(w);
    let t = tape.add_const(t, ones);
    tape.scale(t, 0.5)
}

/// CW-L2: plain gradient descent on `w` with `x' = ½(tanh w + 1)`, minimising
/// `‖x' − x‖² − c‖E(x') − E(x)‖²`, then clipping `x' − x` to the ε-ball.
pub fn cw_l2_attack(bundle: &BackendBundle, x: &ImageTensor, cfg: &AttackConfig) -> Result<ProtectionResult> {
    cw_l2_attack_observed(bundle, x, cfg, |_| {})
}

/// [`cw_l2_attack`], calling `observe` with `x'` (HWC, before the final clip)
/// at every iterate `w_0 ..= w_N`.
pub fn cw_l2_attack_observed(
    bundle: &BackendBundle,
    x: &ImageTensor,
    cfg: &AttackConfig,
    mut observe: impl FnMut(&[f64]),
) -> Result<ProtectionResult> {
    check_run(bundle, x, cfg)?;
    let (h, wd) = (x.height(), x.width());
    let shape = image_shape(x);
    let source_chw = x.to_chw();
    let z_src = bundle.encode_image(x);
    let ones = Arc::new(vec![1.0; source_chw.len()]);
    let build = |tape: &mut Tape, w: Var, _step: usize| {
        let xp = tanh_image(tape, w, &ones);
        let l2 = sq_dist_const(tape, xp, &source_chw);
        let z = bundle.codec.encode(tape, xp);
        let enc = sq_dist_const(tape, z, &z_src);
        vec![
            (LossTerm::descend(LossName::L2, 1.0), l2),
            (LossTerm::ascend(LossName::EncoderUntargeted, cfg.cw_c), enc),
        ]
    };
    let build: &Builder<'_> = &build;
    let pixels = |w: &[f64]| -> Vec<f64> {
        let xp: Vec<f64> = w.iter().map(|v| 0.5 * (v.tanh() + 1.0)).collect();
        chw_to_hwc(h, wd, &xp)
    };

    let mut w = vec![0.0; source_chw.len()];
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        observe(&pixels(&w));
        let eval = evaluate(build, w.clone(), shape, step, Direction::Descend)?;
        trace.push(eval.losses);
        // Descending the reported objective is ascending J.
        for (wi, g) in w.iter_mut().zip(&eval.gradient) {
            *wi += cfg.alpha * g;
        }
    }
    let x_prime = pixels(&w);
    observe(&x_prime);
    let final_losses = evaluate(build, w, shape, cfg.steps, Direction::Descend)?.losses;

    let mut delta: Vec<f64> = x_prime.iter().zip(x.data()).map(|(p, s)| p - s).collect();
    let protected = ImageTensor::new(h, wd, project(x, &mut delta, cfg.epsilon))?;
    Ok(ProtectionResult {
        protected,
        perturbation: Perturbation {
            height: h,
            width: wd,
            delta,
            epsilon: cfg.epsilon,
            method_tag: "cw_l2".into(),
        },
        loss_trace: trace,
        final_losses,
        method_tag: "cw_l2".into(),
        direction: Direction::Descend,
        mask_fallback: false,
    })
}
