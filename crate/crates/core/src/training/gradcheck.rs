//! Finite-difference verification of every hand-written gradient.
//!
//! Builds a small synthetic scene (corpus, store, demonstrations,
//! retrieval sets, fixed reparameterization draws), runs the production
//! backward pass once, then compares each parameter's analytic gradient
//! against a central difference of the loss.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::corpus::{synth_generate, Split, SynthConfig};
use crate::error::TrainError;
use crate::model::{Model, ModelConfig};
use crate::narrative::NarrativeStore;
use crate::retrieval::{homogeneous_retrieve, sra_select};
use crate::seeding::{derive_seed, rng_for};

use super::step::{forward_backward, forward_losses, CiblMode, LossWeights, StepItem};

/// Which scalar the checker differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossSelector {
    Total,
    AlphaOnly,
    AlignOnly,
    ReconOnly,
    CompressOnly,
}

impl LossSelector {
    fn weights(self, base: &LossWeights) -> LossWeights {
        let mut w = base.clone();
        match self {
            LossSelector::Total => {}
            LossSelector::AlphaOnly => {
                w.lambda1 = 0.0;
                w.lambda2 = 0.0;
                w.lambda3 = 0.0;
            }
            LossSelector::AlignOnly => {
                w.include_alpha = false;
                w.lambda1 = 1.0;
                w.lambda2 = 0.0;
                w.lambda3 = 0.0;
            }
            LossSelector::ReconOnly => {
                w.include_alpha = false;
                w.lambda1 = 0.0;
                w.lambda2 = 1.0;
                w.lambda3 = 0.0;
            }
            LossSelector::CompressOnly => {
                w.include_alpha = false;
                w.lambda1 = 0.0;
                w.lambda2 = 0.0;
                w.lambda3 = 1.0;
            }
        }
        w
    }
}

/// Worst relative error seen in one parameter group.
#[derive(Debug, Clone)]
pub struct GroupCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tol: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_err <= self.tol)
    }

    pub fn failing_groups(&self) -> Vec<&GroupCheck> {
        self.groups
            .iter()
            .filter(|g| g.max_rel_err > self.tol)
            .collect()
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str("group                          max_rel_err   status\n");
        for g in &self.groups {
            let status = if g.max_rel_err <= self.tol {
                "ok"
            } else {
                "FAIL"
            };
            out.push_str(&format!(
                "{:<30} {:>12.3e}   {}\n",
                g.name, g.max_rel_err, status
            ));
        }
        out
    }
}

/// Check all analytic gradients against central differences on a fresh
/// seeded scene. Passing means every group's worst relative error is at
/// or below `tol`.
pub fn grad_check(
    seed: u64,
    selector: LossSelector,
    tol: f64,
) -> Result<GradCheckReport, TrainError> {
    grad_check_with_fault(seed, selector, tol, None)
}

/// Like [`grad_check`] but optionally negates one analytic gradient entry
/// in the named group first (a negative control for the checker itself).
pub fn grad_check_with_fault(
    seed: u64,
    selector: LossSelector,
    tol: f64,
    fault_group: Option<&str>,
) -> Result<GradCheckReport, TrainError> {
    let synth = SynthConfig {
        num_clusters: 4,
        items_per_cluster: 4,
        num_domains: 2,
        text_dim: 3,
        image_dim: 3,
        narrative_dim: 6,
        noise_scale: 0.3,
        seed: derive_seed(seed, "gradcheck-data"),
        train_fraction: 0.8,
        ..SynthConfig::default()
    };
    let (corpus, embeddings) = synth_generate(&synth).expect("fixed synth config is valid");
    let store = NarrativeStore::from_embeddings(&embeddings).expect("synth embeddings are valid");

    // alternate between an identity latent bridge and a learned projection
    let repr_dim = 4;
    let latent_dim = if seed % 2 == 0 { repr_dim } else { 3 };
    let mcfg = ModelConfig {
        feature_dim: corpus.text_dim() + corpus.image_dim(),
        narrative_dim: store.dim(),
        hidden_width: 5,
        hidden_layers: 2,
        repr_dim,
        latent_dim,
        cibl_hidden: 5,
        encoder_slope: 0.01,
        attention_slope: 0.2,
        tau: 0.1,
    };
    let mut model = Model::init(&mcfg, derive_seed(seed, "gradcheck-model"));

    let batch_positions: Vec<usize> = corpus.split_positions(Split::Train)[..4].to_vec();
    let mut rng_eps = rng_for(seed, "gradcheck-eps");
    let mut batch = Vec::new();
    for &p in &batch_positions {
        let item = corpus.item_at(p);
        let demo_choice = sra_select(&corpus, item)?;
        let result = homogeneous_retrieve(&store, &corpus, &item.id, 2, 1)?;
        let cand_ids: Vec<String> = result.union().into_iter().map(|s| s.id).collect();
        let eps: Vec<f64> = (0..latent_dim)
            .map(|_| rng_eps.sample(StandardNormal))
            .collect();
        batch.push(StepItem {
            item,
            demo: Some(corpus.get(&demo_choice.chosen_id).expect("demo in corpus")),
            candidates: cand_ids
                .iter()
                .map(|id| corpus.get(id).expect("candidate in corpus"))
                .collect(),
            query_embedding: store.embedding(&item.id).map(<[f64]>::to_vec),
            candidate_embeddings: cand_ids
                .iter()
                .map(|id| store.embedding(id).expect("embedding in store").to_vec())
                .collect(),
            eps,
        });
    }

    // Candidate gradients must flow here: a central difference perturbs
    // the candidate encodings along with everything else, so the analytic
    // side has to differentiate the same full graph. The trainer's
    // stop-gradient on neighbors is a training-time choice, not a
    // different derivative of this loss.
    let base = LossWeights {
        lambda1: 0.2,
        lambda2: 0.1,
        lambda3: 0.2,
        tau: 0.1,
        bce_eps: 1e-7,
        include_alpha: true,
        mode: CiblMode::Full,
        backprop_neighbors: true,
    };
    let weights = selector.weights(&base);

    forward_backward(&mut model, &batch, &weights)?;
    let mut analytic: Vec<(String, Vec<f64>)> = model
        .param_refs()
        .iter()
        .map(|r| (r.name.clone(), r.grad.to_vec()))
        .collect();
    if let Some(group) = fault_group {
        let slot = analytic
            .iter_mut()
            .find(|(name, _)| name == group)
            .unwrap_or_else(|| panic!("no parameter group named {group:?}"));
        if let Some(g) = slot.1.first_mut() {
            *g = -*g + 1e-3; // make even a zero gradient visibly wrong
        }
    }

    let mut groups = Vec::with_capacity(analytic.len());
    for (gi, (name, grads)) in analytic.iter().enumerate() {
        let mut worst = GroupCheck {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
        };
        for k in 0..grads.len() {
            let theta = {
                let refs = model.param_refs();
                refs[gi].data[k]
            };
            let h = 1e-5 * theta.abs().max(1.0);
            set_param(&mut model, gi, k, theta + h);
            let up = forward_losses(&model, &batch, &weights)?.total;
            set_param(&mut model, gi, k, theta - h);
            let down = forward_losses(&model, &batch, &weights)?.total;
            set_param(&mut model, gi, k, theta);
            if !up.is_finite() || !down.is_finite() {
                return Err(TrainError::NonFiniteLoss { step: 0 });
            }
            let numeric = (up - down) / (2.0 * h);
            let a = grads[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > worst.max_rel_err {
                worst.max_rel_err = rel;
                worst.worst_index = k;
                worst.analytic_at_worst = a;
                worst.numeric_at_worst = numeric;
            }
        }
        groups.push(worst);
    }

    Ok(GradCheckReport { tol, groups })
}

fn set_param(model: &mut Model, group: usize, index: usize, value: f64) {
    let mut refs = model.param_refs();
    refs[group].data[index] = value;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_sanity_case() {
        // the machinery itself: d/dx of x^2 at a few points via the same
        // central-difference recipe
        let f = |x: f64| x * x;
        for &x in &[0.0f64, 0.5, -2.0, 10.0] {
            let h = 1e-5 * x.abs().max(1.0);
            let fd = (f(x + h) - f(x - h)) / (2.0 * h);
            let rel = (fd - 2.0 * x).abs() / (2.0 * x).abs().max(1e-6);
            assert!(rel <= 1e-8, "x={x}: rel={rel}");
        }
    }

    #[test]
    fn full_composite_loss_passes_at_1e4() {
        let report = grad_check(1, LossSelector::Total, 1e-4).unwrap();
        assert!(report.passed(), "failures:\n{}", report.render_table());
    }

    #[test]
    fn identity_projection_config_passes_too() {
        let report = grad_check(2, LossSelector::Total, 1e-4).unwrap();
        assert!(report.passed(), "failures:\n{}", report.render_table());
    }

    #[test]
    fn per_loss_selectors_pass() {
        for selector in [
            LossSelector::AlphaOnly,
            LossSelector::AlignOnly,
            LossSelector::ReconOnly,
            LossSelector::CompressOnly,
        ] {
            let report = grad_check(3, selector, 1e-4).unwrap();
            assert!(
                report.passed(),
                "{selector:?} failures:\n{}",
                report.render_table()
            );
        }
    }

    #[test]
    fn corrupted_gradient_is_caught_and_named() {
        let report = grad_check_with_fault(1, LossSelector::Total, 1e-4, Some("fusion.w")).unwrap();
        assert!(!report.passed());
        let failing = report.failing_groups();
        assert!(failing.iter().any(|g| g.name == "fusion.w"));
    }
}
