use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};

use super::{AttackConfig, Direction, LossTerm, ProtectionResult, StepLosses};
use crate::autodiff::{Shape, Tape, Var};
use crate::backends::{image_shape, BackendBundle};
use crate::error::{Error, Result};
use crate::image::{chw_to_hwc, project, ImageTensor, Perturbation};

/// Terms of an objective built on the tape for one evaluation, in order.
pub(crate) type Terms = Vec<(LossTerm, Var)>;

/// Builds the objective terms for the protected image `x` at `step`.
pub(crate) type Builder<'a> = dyn Fn(&mut Tape, Var, usize) -> Terms + 'a;

/// `sign` with `sign(0) = 0`.
pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `J = Σ_ascend w·t − Σ_descend w·t`. Unit ascend weights are not scaled and
/// zero-weight terms are left out, so adding an inactive term never perturbs
/// the floating-point trajectory.
pub(crate) fn assemble(tape: &mut Tape, terms: &Terms) -> Var {
    let mut total: Option<Var> = None;
    for (term, v) in terms {
        if term.weight == 0.0 {
            continue;
        }
        let signed = match term.direction {
            Direction::Ascend if term.weight == 1.0 => *v,
            Direction::Ascend => tape.scale(*v, term.weight),
            Direction::Descend => tape.scale(*v, -term.weight),
        };
        total = Some(match total {
            Some(t) => tape.add(t, signed),
            None => signed,
        });
    }
    total.unwrap_or_else(|| tape.constant(vec![0.0], Shape::SCALAR))
}

pub(crate) struct Evaluation {
    pub losses: StepLosses,
    /// `∂J/∂x` in channel-major layout.
    pub gradient: Vec<f64>,
}

/// Evaluates the objective and its gradient at the channel-major input.
/// Non-finite values abort with the step and term name.
pub(crate) fn evaluate(
    build: &Builder<'_>,
    input_chw: Vec<f64>,
    shape: Shape,
    step: usize,
    direction: Direction,
) -> Result<Evaluation> {
    let mut tape = Tape::new();
    let x = tape.input(input_chw, shape);
    let terms = build(&mut tape, x, step);
    let j = assemble(&mut tape, &terms);
    let mut named = BTreeMap::new();
    for (term, v) in &terms {
        let value = tape.scalar(*v);
        if !value.is_finite() {
            return Err(Error::NonFinite {
                step,
                term: term.name.as_str().to_string(),
            });
        }
        named.insert(term.name.as_str().to_string(), value);
    }
    let objective = tape.scalar(j);
    if !objective.is_finite() {
        return Err(Error::NonFinite {
            step,
            term: "objective".into(),
        });
    }
    let gradient = tape.backward(j).wrt(x, &tape);
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            step,
            term: "gradient".into(),
        });
    }
    Ok(Evaluation {
        losses: StepLosses {
            objective: match direction {
                Direction::Ascend => objective,
                Direction::Descend => -objective,
            },
            terms: named,
        },
        gradient,
    })
}

/// `N(0, I)` scaled by `ε/3` (HWC order), before projection.
pub(crate) fn initial_delta(source: &ImageTensor, cfg: &AttackConfig) -> Vec<f64> {
    let mut rng = cfg.rng().derive("init").rng();
    let scale = cfg.epsilon / 3.0;
    (0..source.len())
        .map(|_| {
            let n: f64 = StandardNormal.sample(&mut rng);
            n * scale
        })
        .collect()
}

pub(crate) fn check_run(bundle: &BackendBundle, source: &ImageTensor, cfg: &AttackConfig) -> Result<()> {
    cfg.validate()?;
    bundle.check_input(source)
}

/// Sign-gradient ascent on the assembled objective, with the
/// clip → add → clamp → re-derive projection after every step.
pub(crate) fn sign_pgd(
    bundle: &BackendBundle,
    source: &ImageTensor,
    cfg: &AttackConfig,
    method_tag: &str,
    direction: Direction,
    mask_fallback: bool,
    build: &Builder<'_>,
) -> Result<ProtectionResult> {
    check_run(bundle, source, cfg)?;
    let (h, w) = (source.height(), source.width());
    let shape = image_shape(source);
    let mut delta = initial_delta(source, cfg);
    let mut protected = project(source, &mut delta, cfg.epsilon);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let x = ImageTensor::new(h, w, protected.clone())?;
        let eval = evaluate(build, x.to_chw(), shape, step, direction)?;
        trace.push(eval.losses);
        let g = chw_to_hwc(h, w, &eval.gradient);
        for (d, gi) in delta.iter_mut().zip(&g) {
            *d += cfg.alpha * sign(*gi);
        }
        protected = project(source, &mut delta, cfg.epsilon);
    }
    let protected = ImageTensor::new(h, w, protected)?;
    let final_losses = evaluate(build, protected.to_chw(), shape, cfg.steps, direction)?.losses;
    log::debug!(
        "{method_tag}: {} steps, objective {:.6} -> {:.6}",
        cfg.steps,
        trace.first().map_or(final_losses.objective, |s: &StepLosses| s.objective),
        final_losses.objective
    );
    Ok(ProtectionResult {
        protected,
        perturbation: Perturbation {
            height: h,
            width: w,
            delta,
            epsilon: cfg.epsilon,
            method_tag: method_tag.to_string(),
        },
        loss_trace: trace,
        final_losses,
        method_tag: method_tag.to_string(),
        direction,
        mask_fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::LossName;

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        assert_eq!(sign(2.5), 1.0);
        assert_eq!(sign(-1e-300), -1.0);
    }

    #[test]
    fn assemble_signs_and_weights() {
        let mut t = Tape::new();
        let a = t.input(vec![2.0], Shape::SCALAR);
        let b = t.input(vec![3.0], Shape::SCALAR);
        let c = t.input(vec![5.0], Shape::SCALAR);
        let terms = vec![
            (LossTerm::ascend(LossName::Fr, 1.0), a),
            (LossTerm::descend(LossName::L2, 0.5), b),
            (LossTerm::ascend(LossName::Latent, 0.0), c),
        ];
        let j = assemble(&mut t, &terms);
        assert_eq!(t.scalar(j), 2.0 - 1.5);
    }

    #[test]
    fn initial_delta_scale() {
        let x = crate::synthetic::portrait(16, 16, 0);
        let cfg = AttackConfig::default();
        let d = initial_delta(&x, &cfg);
        let std = (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt();
        assert!((std - 0.02 / 3.0).abs() < 0.001, "std {std}");
        assert_eq!(d, initial_delta(&x, &cfg));
    }
}
