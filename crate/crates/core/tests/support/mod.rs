//! Oracles shared by the integration tests and the acceptance report.
#![allow(dead_code)]

use triage_core::datasets::LabelTaxonomy;
use triage_core::image_model::layers::Conv2d;
use triage_core::image_model::{CnnBuilder, CnnModel, Image, Mode};
use triage_core::numerics::{grad_check, SeededRng, Tensor, DEFAULT_FD_STEP};
use triage_core::text_model::{logistic_loss_grad, SparseVector};
use triage_core::triage::{decide, CaseState, ImageOutcome, TriageConfig};

pub fn toy_model(seed: u64) -> CnnModel {
    CnnBuilder::new(3, 8, 8, seed)
        .conv(4, 3)
        .relu()
        .maxpool()
        .conv(5, 2)
        .relu()
        .global_average_pool()
        .feature_norm()
        .dense(6)
        .relu()
        .dense(2)
        .softmax()
        .build()
        .unwrap()
}

pub fn random_images(n: usize, rng: &mut SeededRng) -> Vec<Image> {
    (0..n)
        .map(|_| Image::new(8, 8, 3, (0..192).map(|_| rng.uniform()).collect()).unwrap())
        .collect()
}

pub fn batch_loss(model: &CnnModel, images: &[Image], labels: &[usize]) -> f64 {
    let refs: Vec<&Image> = images.iter().collect();
    let fwd = model.forward(&refs, Mode::Train).unwrap();
    model.loss(&fwd, labels).unwrap()
}

/// Finite-difference error of every parameterized layer of the toy model,
/// as `(layer index, kind, max relative error)`.
pub fn cnn_layer_errors(seed: u64, probes: usize) -> Vec<(usize, &'static str, f64)> {
    let mut rng = SeededRng::new(seed);
    let model = toy_model(seed + 1);
    let images = random_images(4, &mut rng);
    let labels = [0, 1, 1, 0];
    let refs: Vec<&Image> = images.iter().collect();
    let fwd = model.forward(&refs, Mode::Train).unwrap();
    let (_, grads) = model.backward(&fwd, &labels).unwrap();
    model
        .parameterized_layers()
        .into_iter()
        .map(|i| {
            let analytic = grads.layer(i).unwrap().to_vec();
            let err = grad_check(
                |p| {
                    let mut m = model.clone();
                    m.set_layer_params(i, p).unwrap();
                    batch_loss(&m, &images, &labels)
                },
                &model.layer_params(i),
                &analytic,
                probes,
                DEFAULT_FD_STEP,
                &mut rng,
            )
            .unwrap();
            (i, model.layers()[i].layer.kind(), err)
        })
        .collect()
}

/// Largest finite-difference error of the class-logit gradient at the
/// explanation activation, over both classes.
pub fn explanation_gradient_error(seed: u64, probes: usize) -> f64 {
    let mut rng = SeededRng::new(seed);
    let mut model = toy_model(seed + 1);
    let images = random_images(6, &mut rng);
    let refs: Vec<&Image> = images.iter().collect();
    let warmup = model.forward(&refs, Mode::Train).unwrap();
    model.absorb_batch_statistics(&warmup);
    let idx = model.explanation_activation_index().unwrap();
    let fwd = model.forward(&refs[..1], Mode::Eval).unwrap();
    let act = fwd.activation(&model, idx).unwrap();
    (0..2)
        .map(|class| {
            let analytic = model.logit_gradient(&fwd, idx, class).unwrap();
            grad_check(
                |a| {
                    let t = Tensor::new(act.shape().to_vec(), a.to_vec()).unwrap();
                    model.forward_from(idx, &t, Mode::Eval).unwrap().logits()[0][class]
                },
                act.data(),
                analytic.data(),
                probes,
                DEFAULT_FD_STEP,
                &mut rng,
            )
            .unwrap()
        })
        .fold(0.0, f64::max)
}

/// Finite-difference error of the multinomial logistic loss on random
/// sparse features.
pub fn logistic_gradient_error(seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let (classes, dim) = (4, 12);
    let features: Vec<SparseVector> = (0..10)
        .map(|_| {
            let dense: Vec<f64> = (0..dim)
                .map(|_| if rng.bernoulli(0.4) { rng.uniform() } else { 0.0 })
                .collect();
            SparseVector::from_dense(&dense)
        })
        .collect();
    let refs: Vec<&SparseVector> = features.iter().collect();
    let labels: Vec<usize> = (0..10).map(|_| rng.below(classes)).collect();
    let params: Vec<f64> = (0..classes * dim + classes).map(|_| rng.normal() * 0.5).collect();
    let (_, analytic) = logistic_loss_grad(&params, classes, dim, &refs, &labels).unwrap();
    grad_check(
        |p| logistic_loss_grad(p, classes, dim, &refs, &labels).unwrap().0,
        &params,
        &analytic,
        params.len(),
        DEFAULT_FD_STEP,
        &mut rng,
    )
    .unwrap()
}

/// Quadruple-loop valid cross-correlation.
pub fn conv_reference(conv: &Conv2d, input: &[f64], height: usize, width: usize) -> Vec<f64> {
    let k = conv.kernel;
    let (oh, ow) = (height - k + 1, width - k + 1);
    let mut out = vec![0.0; conv.out_channels * oh * ow];
    for oc in 0..conv.out_channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = conv.bias[oc];
                for ic in 0..conv.in_channels {
                    for ky in 0..k {
                        for kx in 0..k {
                            let w = conv.weights[((oc * conv.in_channels + ic) * k + ky) * k + kx];
                            acc += w * input[(ic * height + y + ky) * width + x + kx];
                        }
                    }
                }
                out[(oc * oh + y) * ow + x] = acc;
            }
        }
    }
    out
}

/// Largest absolute difference between the layer and the reference over
/// `cases` random 8×8×3 inputs with random kernels.
pub fn conv_max_deviation(cases: usize, seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let kernel = 1 + rng.below(4);
        let out_channels = 1 + rng.below(6);
        let mut conv = Conv2d::new(3, out_channels, kernel, &mut rng);
        conv.bias.iter_mut().for_each(|b| *b = rng.normal());
        let input: Vec<f64> = (0..3 * 8 * 8).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let (oh, ow) = conv.output_extent(8, 8).unwrap();
        let mut out = vec![0.0; out_channels * oh * ow];
        conv.forward(&input, 8, 8, &mut out);
        let reference = conv_reference(&conv, &input, 8, 8);
        for (a, b) in out.iter().zip(&reference) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeKind {
    None,
    Unreadable,
    Irrelevant,
    Damaged,
    NotDamaged,
}

pub const OUTCOME_KINDS: [OutcomeKind; 5] = [
    OutcomeKind::None,
    OutcomeKind::Unreadable,
    OutcomeKind::Irrelevant,
    OutcomeKind::Damaged,
    OutcomeKind::NotDamaged,
];

pub fn outcome(kind: OutcomeKind, confidence: f64) -> ImageOutcome {
    match kind {
        OutcomeKind::None => ImageOutcome::None,
        OutcomeKind::Unreadable => ImageOutcome::Unreadable,
        OutcomeKind::Irrelevant => ImageOutcome::Irrelevant { confidence },
        OutcomeKind::Damaged => ImageOutcome::Damaged { confidence },
        OutcomeKind::NotDamaged => ImageOutcome::NotDamaged { confidence },
    }
}

/// Every row among R1 to R6 whose condition holds, written out literally
/// and checked without precedence.
pub fn brute_force_rows(
    class: &str,
    text_conf: f64,
    kind: OutcomeKind,
    image_conf: f64,
    config: &TriageConfig,
) -> Vec<(&'static str, CaseState, &'static str)> {
    let verifiable = config.verifiable_classes.iter().any(|c| c == class);
    let text_ok = text_conf >= config.tau_text;
    let image_ok = image_conf >= config.tau_image;
    let has_verdict = matches!(kind, OutcomeKind::Damaged | OutcomeKind::NotDamaged);
    let absent = matches!(
        kind,
        OutcomeKind::None | OutcomeKind::Unreadable | OutcomeKind::Irrelevant
    );
    let mut rows = Vec::new();
    if !text_ok {
        rows.push(("R1", CaseState::Escalated, "low text confidence"));
    }
    if text_ok && kind == OutcomeKind::Damaged && image_ok && verifiable {
        rows.push(("R2", CaseState::AutoResolved, "text and image agree"));
    }
    if text_ok && kind == OutcomeKind::NotDamaged && image_ok && verifiable {
        rows.push(("R3", CaseState::Escalated, "text/image conflict"));
    }
    if text_ok && kind == OutcomeKind::Damaged && image_ok && !verifiable {
        rows.push(("R4", CaseState::Escalated, "image contradicts text class"));
    }
    if text_ok && has_verdict && !image_ok {
        rows.push(("R5", CaseState::Escalated, "low image confidence"));
    }
    if text_ok && absent {
        rows.push(("R6", CaseState::AutoResolved, "text-only confident"));
    }
    rows
}

#[derive(Debug, Default)]
pub struct FusionReport {
    pub inputs: usize,
    /// Inputs where `decide` disagrees with the oracle.
    pub mismatches: Vec<String>,
    /// Inputs where more than one row of R1 to R6 holds.
    pub ambiguous: usize,
    /// Inputs no row of R1 to R6 covers; these must fall to R7.
    pub uncovered: usize,
    pub monotonicity_violations: Vec<String>,
}

pub fn grid(i: usize) -> f64 {
    i as f64 / 20.0
}

/// Enumerates 8 classes × 21 text confidences × 5 outcomes × 21 image
/// confidences under the default thresholds, then checks that raising
/// either threshold never turns an escalation into an auto-resolution.
pub fn fusion_report() -> FusionReport {
    let taxonomy = LabelTaxonomy::default();
    let config = TriageConfig::default();
    let mut report = FusionReport::default();
    for class in taxonomy.classes() {
        for ti in 0..=20 {
            for kind in OUTCOME_KINDS {
                for ii in 0..=20 {
                    let (tc, ic) = (grid(ti), grid(ii));
                    report.inputs += 1;
                    let got = decide(class, tc, outcome(kind, ic), &config);
                    let rows = brute_force_rows(class, tc, kind, ic, &config);
                    if rows.len() > 1 {
                        report.ambiguous += 1;
                    }
                    let expected = match rows.first() {
                        Some(&(_, state, reason)) => (state, reason),
                        None => {
                            report.uncovered += 1;
                            let confident_not_damaged = kind == OutcomeKind::NotDamaged
                                && ic >= config.tau_image
                                && !config.verifiable_classes.contains(class);
                            assert!(confident_not_damaged, "uncovered input outside the R7 region");
                            (CaseState::AutoResolved, "image not probative")
                        }
                    };
                    if (got.state, got.reason.as_str()) != expected {
                        report.mismatches.push(format!(
                            "{class} {tc} {kind:?}@{ic}: got {:?} {:?}, oracle {:?}",
                            got.state, got.reason, expected
                        ));
                    }
                }
            }
        }
    }
    let taus: Vec<f64> = (11..20).map(grid).collect();
    let configs: Vec<Vec<TriageConfig>> = taus
        .iter()
        .map(|&tau_text| {
            taus.iter()
                .map(|&tau_image| TriageConfig {
                    tau_text,
                    tau_image,
                    ..config.clone()
                })
                .collect()
        })
        .collect();
    let n = taus.len();
    for class in taxonomy.classes() {
        for ti in 0..=20 {
            for kind in OUTCOME_KINDS {
                for ii in 0..=20 {
                    let image = outcome(kind, grid(ii));
                    let auto: Vec<Vec<bool>> = configs
                        .iter()
                        .map(|row| {
                            row.iter()
                                .map(|c| decide(class, grid(ti), image, c).state == CaseState::AutoResolved)
                                .collect()
                        })
                        .collect();
                    for a in 0..n {
                        for b in 0..n {
                            let raised_text = a + 1 < n && auto[a + 1][b] && !auto[a][b];
                            let raised_image = b + 1 < n && auto[a][b + 1] && !auto[a][b];
                            if raised_text || raised_image {
                                report.monotonicity_violations.push(format!(
                                    "{class} {} {image:?} at taus ({}, {})",
                                    grid(ti),
                                    taus[a],
                                    taus[b]
                                ));
                            }
                        }
                    }
                }
            }
        }
    }
    report
}
