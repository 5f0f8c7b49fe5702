//! One-batch forward and backward over the composite objective.
//!
//! The same code path serves the trainer and the finite-difference
//! gradient checker: `forward_losses` is the pure evaluation, and
//! `forward_backward` additionally accumulates parameter gradients for
//! every component the batch touched.

use crate::cibl::{
    align_backward, align_cached, compress_grads, compress_loss, sample_z, AlignCache,
    LatentPosterior, PosteriorCache,
};
use crate::corpus::NewsItem;
use crate::encoder::{Encoder, EncoderCache, HeadOutput};
use crate::error::TrainError;
use crate::fusion::{synthesize_positive, AttentionCache};
use crate::model::Model;
use crate::nn::{dot, l2_norm, MlpCache};
use crate::training::{bce_loss, LossBreakdown};

/// Which latent path the CIBL losses run through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CiblMode {
    /// Variational posterior, reparameterized sample, all three losses.
    Full,
    /// `z := h` straight into the alignment loss; no recon/compress.
    ForceAlign,
    /// Negative-free cosine pull between `h` and `h⁺`; no recon/compress.
    SimpleContrastive,
}

#[derive(Debug, Clone)]
pub(crate) struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub tau: f64,
    pub bce_eps: f64,
    pub include_alpha: bool,
    pub mode: CiblMode,
    pub backprop_neighbors: bool,
}

/// One batch element: the item, its optional demonstration, and its
/// retrieved candidate set with narrative embeddings, plus the
/// reparameterization draw reserved for it.
pub(crate) struct StepItem<'a> {
    pub item: &'a NewsItem,
    pub demo: Option<&'a NewsItem>,
    pub candidates: Vec<&'a NewsItem>,
    pub query_embedding: Option<Vec<f64>>,
    pub candidate_embeddings: Vec<Vec<f64>>,
    pub eps: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct StepCounts {
    pub demo_encodes: u64,
    pub solo_encodes: u64,
}

struct ItemForward {
    label: f64,
    head_out: HeadOutput,
    class_h: Vec<f64>,
    /// Present when classification ran through the demonstration path.
    class_demo_cache: Option<EncoderCache>,
    solo_h: Option<Vec<f64>>,
    solo_cache: Option<EncoderCache>,
    cand_h: Vec<Vec<f64>>,
    cand_caches: Vec<EncoderCache>,
    attn: Option<AttentionCache>,
    h_plus: Option<Vec<f64>>,
    post: Option<LatentPosterior>,
    post_cache: Option<PosteriorCache>,
    z: Option<Vec<f64>>,
    recon_cache: Option<MlpCache>,
    recon_residual: Option<Vec<f64>>,
    recon_val: f64,
    compress_val: f64,
    eps: Vec<f64>,
}

struct BatchForward {
    items: Vec<ItemForward>,
    /// Indices of items whose candidate set was non-empty.
    rows: Vec<usize>,
    align_cache: Option<AlignCache>,
    breakdown: LossBreakdown,
}

fn forward_item(
    model: &Model,
    si: &StepItem<'_>,
    w: &LossWeights,
    counts: &mut StepCounts,
) -> Result<ItemForward, TrainError> {
    let has_ana = !si.candidates.is_empty();
    let need_solo = has_ana || si.demo.is_none();

    let (solo_h, solo_cache) = if need_solo {
        let feats = Encoder::fused_features(si.item);
        let (h, cache) = model.encoder.encode_cached(&feats)?;
        counts.solo_encodes += 1;
        (Some(h), Some(cache))
    } else {
        (None, None)
    };

    let (class_h, class_demo_cache, head_out) = match si.demo {
        Some(demo) => {
            let feats = Encoder::demo_features(demo, si.item);
            let (h, cache) = model.encoder.encode_demo_cached(&feats)?;
            counts.demo_encodes += 1;
            let out = model.head.classify(&h, w.bce_eps)?;
            (h, Some(cache), out)
        }
        None => {
            let h = solo_h.clone().expect("solo representation present");
            let out = model.head.classify(&h, w.bce_eps)?;
            (h, None, out)
        }
    };

    let mut fw = ItemForward {
        label: f64::from(si.item.label),
        head_out,
        class_h,
        class_demo_cache,
        solo_h,
        solo_cache,
        cand_h: Vec::new(),
        cand_caches: Vec::new(),
        attn: None,
        h_plus: None,
        post: None,
        post_cache: None,
        z: None,
        recon_cache: None,
        recon_residual: None,
        recon_val: 0.0,
        compress_val: 0.0,
        eps: si.eps.clone(),
    };

    if has_ana {
        for cand in &si.candidates {
            let feats = Encoder::fused_features(cand);
            let (h, cache) = model.encoder.encode_cached(&feats)?;
            counts.solo_encodes += 1;
            fw.cand_h.push(h);
            if w.backprop_neighbors {
                fw.cand_caches.push(cache);
            }
        }
        let query = si
            .query_embedding
            .as_ref()
            .expect("query embedding accompanies candidates");
        let attn = model
            .fusion
            .attention_cached(query, &si.candidate_embeddings)?;
        let h_plus = synthesize_positive(&attn.probs, &fw.cand_h)?;

        if w.mode == CiblMode::Full {
            let h = fw.solo_h.as_ref().expect("solo path present with ANA");
            let (post, post_cache) = model.cibl.posterior_cached(h, &h_plus)?;
            let z = sample_z(&post, &fw.eps);
            let (recon_val, recon_cache, residual) = model.cibl.recon_cached(&z, h)?;
            fw.compress_val = compress_loss(&post);
            fw.recon_val = recon_val;
            fw.post = Some(post);
            fw.post_cache = Some(post_cache);
            fw.z = Some(z);
            fw.recon_cache = Some(recon_cache);
            fw.recon_residual = Some(residual);
        }
        fw.attn = Some(attn);
        fw.h_plus = Some(h_plus);
    }

    Ok(fw)
}

fn forward_batch(
    model: &Model,
    batch: &[StepItem<'_>],
    w: &LossWeights,
) -> Result<(BatchForward, StepCounts), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut counts = StepCounts::default();
    let items: Vec<ItemForward> = batch
        .iter()
        .map(|si| forward_item(model, si, w, &mut counts))
        .collect::<Result<_, _>>()?;

    let preds: Vec<f64> = items.iter().map(|f| f.head_out.prob).collect();
    let labels: Vec<f64> = items.iter().map(|f| f.label).collect();
    let alpha = bce_loss(&preds, &labels, w.bce_eps)?;

    let rows: Vec<usize> = items
        .iter()
        .enumerate()
        .filter(|(_, f)| f.h_plus.is_some())
        .map(|(i, _)| i)
        .collect();
    let n_rows = rows.len().max(1) as f64;

    let mut align = 0.0;
    let mut align_cache = None;
    match w.mode {
        CiblMode::Full => {
            if rows.len() >= 2 {
                let z: Vec<Vec<f64>> = rows
                    .iter()
                    .map(|&i| items[i].z.clone().expect("z present"))
                    .collect();
                let hp: Vec<Vec<f64>> = rows
                    .iter()
                    .map(|&i| items[i].h_plus.clone().expect("h_plus present"))
                    .collect();
                let cache = align_cached(&z, &hp, w.tau, model.cibl.projection.as_ref())?;
                align = cache.loss;
                align_cache = Some(cache);
            }
        }
        CiblMode::ForceAlign => {
            if rows.len() >= 2 {
                let z: Vec<Vec<f64>> = rows
                    .iter()
                    .map(|&i| items[i].solo_h.clone().expect("solo present"))
                    .collect();
                let hp: Vec<Vec<f64>> = rows
                    .iter()
                    .map(|&i| items[i].h_plus.clone().expect("h_plus present"))
                    .collect();
                let cache = align_cached(&z, &hp, w.tau, None)?;
                align = cache.loss;
                align_cache = Some(cache);
            }
        }
        CiblMode::SimpleContrastive => {
            if !rows.is_empty() {
                let mut sum = 0.0;
                for &i in &rows {
                    let h = items[i].solo_h.as_ref().expect("solo present");
                    let hp = items[i].h_plus.as_ref().expect("h_plus present");
                    sum += 1.0 - dot(h, hp) / (l2_norm(h) * l2_norm(hp));
                }
                align = sum / n_rows;
            }
        }
    }

    let (recon, compress) = if w.mode == CiblMode::Full {
        (
            rows.iter().map(|&i| items[i].recon_val).sum::<f64>() / n_rows,
            rows.iter().map(|&i| items[i].compress_val).sum::<f64>() / n_rows,
        )
    } else {
        (0.0, 0.0)
    };

    let alpha_part = if w.include_alpha { alpha } else { 0.0 };
    let total = alpha_part + w.lambda1 * align + w.lambda2 * recon + w.lambda3 * compress;
    let breakdown = LossBreakdown {
        alpha,
        align,
        recon,
        compress,
        total,
    };
    Ok((
        BatchForward {
            items,
            rows,
            align_cache,
            breakdown,
        },
        counts,
    ))
}

/// Loss evaluation without gradients.
pub(crate) fn forward_losses(
    model: &Model,
    batch: &[StepItem<'_>],
    w: &LossWeights,
) -> Result<LossBreakdown, TrainError> {
    forward_batch(model, batch, w).map(|(bf, _)| bf.breakdown)
}

fn add_into(acc: &mut Vec<f64>, v: &[f64]) {
    if acc.is_empty() {
        *acc = v.to_vec();
    } else {
        for (a, &x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
}

/// Loss evaluation plus gradient accumulation into the model.
pub(crate) fn forward_backward(
    model: &mut Model,
    batch: &[StepItem<'_>],
    w: &LossWeights,
) -> Result<(LossBreakdown, StepCounts), TrainError> {
    let (bf, counts) = forward_batch(model, batch, w)?;
    model.zero_grad();

    let b = batch.len() as f64;
    let n_rows = bf.rows.len().max(1) as f64;
    let mut dh_solo: Vec<Vec<f64>> = vec![Vec::new(); bf.items.len()];

    // classification loss
    if w.include_alpha {
        for (i, fw) in bf.items.iter().enumerate() {
            let dlogit = if fw.head_out.clamped {
                0.0
            } else {
                (fw.head_out.prob - fw.label) / b
            };
            if dlogit == 0.0 {
                continue;
            }
            let dh = model.head.backward(&fw.class_h, dlogit);
            match &fw.class_demo_cache {
                Some(cache) => {
                    model.encoder.backward(cache, &dh);
                }
                None => add_into(&mut dh_solo[i], &dh),
            }
        }
    }

    // alignment gradients over the participating rows
    let (dz_rows, dhp_rows): (Vec<Vec<f64>>, Vec<Vec<f64>>) = match (&bf.align_cache, w.mode) {
        (Some(cache), CiblMode::Full) => {
            align_backward(cache, w.tau, w.lambda1, model.cibl.projection.as_mut())
        }
        (Some(cache), CiblMode::ForceAlign) => align_backward(cache, w.tau, w.lambda1, None),
        _ => (Vec::new(), Vec::new()),
    };

    for (ri, &i) in bf.rows.iter().enumerate() {
        let fw = &bf.items[i];
        let repr_dim = fw.h_plus.as_ref().expect("h_plus present").len();
        let mut dhp = vec![0.0; repr_dim];

        match w.mode {
            CiblMode::Full => {
                let mut dz = if dz_rows.is_empty() {
                    vec![0.0; fw.z.as_ref().expect("z present").len()]
                } else {
                    dz_rows[ri].clone()
                };
                if !dhp_rows.is_empty() {
                    for (d, &g) in dhp.iter_mut().zip(&dhp_rows[ri]) {
                        *d += g;
                    }
                }

                // reconstruction
                let (dz_recon, dh_recon) = model.cibl.recon_backward(
                    fw.recon_cache.as_ref().expect("recon cache"),
                    fw.recon_residual.as_ref().expect("recon residual"),
                    w.lambda2 / n_rows,
                );
                for (a, &x) in dz.iter_mut().zip(&dz_recon) {
                    *a += x;
                }
                add_into(&mut dh_solo[i], &dh_recon);

                // compression
                let post = fw.post.as_ref().expect("posterior present");
                let (mut dmu, mut dlv) = compress_grads(post);
                let scale = w.lambda3 / n_rows;
                dmu.iter_mut().for_each(|g| *g *= scale);
                dlv.iter_mut().for_each(|g| *g *= scale);

                // reparameterized sample: z = mu + exp(lv/2) * eps
                for k in 0..dz.len() {
                    dmu[k] += dz[k];
                    dlv[k] += dz[k] * 0.5 * (post.log_var[k] / 2.0).exp() * fw.eps[k];
                }

                let (dh_post, dhp_post) = model.cibl.posterior_backward(
                    fw.post_cache.as_ref().expect("posterior cache"),
                    &dmu,
                    &dlv,
                );
                add_into(&mut dh_solo[i], &dh_post);
                for (d, &g) in dhp.iter_mut().zip(&dhp_post) {
                    *d += g;
                }
            }
            CiblMode::ForceAlign => {
                if !dz_rows.is_empty() {
                    add_into(&mut dh_solo[i], &dz_rows[ri]);
                    for (d, &g) in dhp.iter_mut().zip(&dhp_rows[ri]) {
                        *d += g;
                    }
                }
            }
            CiblMode::SimpleContrastive => {
                let h = fw.solo_h.as_ref().expect("solo present");
                let hp = fw.h_plus.as_ref().expect("h_plus present");
                let (na, nb) = (l2_norm(h), l2_norm(hp));
                let cos = dot(h, hp) / (na * nb);
                let scale = w.lambda1 / n_rows;
                let mut dh = vec![0.0; h.len()];
                for k in 0..h.len() {
                    dh[k] = -scale * (hp[k] / (na * nb) - cos * h[k] / (na * na));
                    dhp[k] += -scale * (h[k] / (na * nb) - cos * hp[k] / (nb * nb));
                }
                add_into(&mut dh_solo[i], &dh);
            }
        }

        // fusion attention and (optionally) the candidate encoders
        let drepr =
            model
                .fusion
                .backward(fw.attn.as_ref().expect("attention cache"), &fw.cand_h, &dhp);
        if w.backprop_neighbors {
            for (cache, dr) in fw.cand_caches.iter().zip(&drepr) {
                model.encoder.backward(cache, dr);
            }
        }
    }

    // item representations
    for (i, fw) in bf.items.iter().enumerate() {
        if dh_solo[i].is_empty() {
            continue;
        }
        if let Some(cache) = &fw.solo_cache {
            model.encoder.backward(cache, &dh_solo[i]);
        }
    }

    Ok((bf.breakdown, counts))
}
