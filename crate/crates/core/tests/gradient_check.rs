//! Analytic joint-loss gradients against central finite differences.

mod support;

use sticker_core::fusion::FuseMode;
use sticker_core::matcher::{LossForm, MatchMode};
use support::gradient::{check, instance};

const INSTANCES: usize = 20;
const TOLERANCE: f64 = 1e-4;

#[test]
fn weighted_fusion_gradients() {
    let worst = check(FuseMode::PerRegionWeighted, MatchMode::Intention, LossForm::ClampedStandard, INSTANCES, TOLERANCE).unwrap();
    eprintln!("worst relative error {worst:e}");
}

#[test]
fn literal_fusion_gradients() {
    check(FuseMode::LiteralScalar, MatchMode::Intention, LossForm::ClampedStandard, INSTANCES, TOLERANCE).unwrap();
}

#[test]
fn context_matching_and_literal_loss_gradients() {
    check(FuseMode::PerRegionWeighted, MatchMode::ContextAndIntention, LossForm::PaperLiteral, INSTANCES, TOLERANCE).unwrap();
    check(FuseMode::PerRegionWeighted, MatchMode::Context, LossForm::ClampedStandard, INSTANCES, TOLERANCE).unwrap();
}

#[test]
fn zero_loss_weights_freeze_parameters() {
    let mut inst = instance(3, FuseMode::PerRegionWeighted, MatchMode::Intention, LossForm::ClampedStandard);
    inst.cfg.lambda_retrieval = 0.0;
    inst.cfg.lambda_intention = 0.0;
    let mut grad = inst.model.zeros_like();
    inst.model.loss(&inst.batch(), &inst.space, &inst.cfg, Some(&mut grad)).unwrap();
    assert!(grad.tensors_mut().iter().all(|(_, t)| t.iter().all(|v| *v == 0.0)));
}
