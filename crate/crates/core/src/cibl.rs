//! Common-information bottleneck losses.
//!
//! A joint variational encoder reads `[h ‖ h⁺]` and parameterizes a
//! diagonal Gaussian over a latent shared-narrative code. Three losses
//! shape that code: an InfoNCE alignment between the code and the batch of
//! synthesized positives, a squared-error reconstruction of `h` through a
//! decoder, and the closed-form KL of the posterior against the standard
//! normal prior.

use rand::Rng;

use crate::error::ModelError;
use crate::nn::{dot, l2_norm, softmax_stable, Linear, Mlp, MlpCache, ParamRef};

/// Log-variances are clamped to this band before exponentiation.
pub const LOG_VAR_CLAMP: f64 = 10.0;

/// Diagonal Gaussian posterior: mean and log-variance per latent dim.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LatentPosterior {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Variational encoder pair, decoder, and the latent-to-representation
/// bridge used by the alignment similarity when dims differ.
#[derive(Debug, Clone, PartialEq)]
pub struct CiblParams {
    pub f_mu: Mlp,
    pub f_sigma: Mlp,
    pub g_psi: Mlp,
    /// Linear map from latent to representation space; `None` when the
    /// latent dim equals the representation dim (identity bridge).
    pub projection: Option<Linear>,
    pub tau: f64,
}

/// Forward record of one posterior evaluation.
#[derive(Debug, Clone)]
pub struct PosteriorCache {
    mu_cache: MlpCache,
    sigma_cache: MlpCache,
    raw_log_var: Vec<f64>,
}

impl CiblParams {
    /// `repr_dim` is the encoder output dim d; the encoders read `2d`.
    pub fn init<R: Rng>(
        repr_dim: usize,
        latent_dim: usize,
        hidden_width: usize,
        tau: f64,
        rng: &mut R,
    ) -> Self {
        let f_mu = Mlp::init(&[2 * repr_dim, hidden_width, latent_dim], 0.01, rng);
        let f_sigma = Mlp::init(&[2 * repr_dim, hidden_width, latent_dim], 0.01, rng);
        let g_psi = Mlp::init(&[latent_dim, hidden_width, repr_dim], 0.01, rng);
        let projection = if latent_dim == repr_dim {
            None
        } else {
            Some(Linear::init(latent_dim, repr_dim, rng))
        };
        Self {
            f_mu,
            f_sigma,
            g_psi,
            projection,
            tau,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.f_mu.out_dim()
    }

    pub fn posterior(&self, h: &[f64], h_plus: &[f64]) -> Result<LatentPosterior, ModelError> {
        self.posterior_cached(h, h_plus).map(|(p, _)| p)
    }

    /// Mean and clamped log-variance of the joint posterior over `[h ‖ h⁺]`.
    pub fn posterior_cached(
        &self,
        h: &[f64],
        h_plus: &[f64],
    ) -> Result<(LatentPosterior, PosteriorCache), ModelError> {
        let expected = self.f_mu.in_dim();
        if h.len() + h_plus.len() != expected {
            return Err(ModelError::DimensionMismatch {
                context: "posterior input",
                expected,
                found: h.len() + h_plus.len(),
            });
        }
        let mut input = Vec::with_capacity(expected);
        input.extend_from_slice(h);
        input.extend_from_slice(h_plus);
        let (mu, mu_cache) = self.f_mu.forward_cached(&input);
        let (raw_log_var, sigma_cache) = self.f_sigma.forward_cached(&input);
        if mu.iter().chain(&raw_log_var).any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite {
                context: "posterior",
                layer: 0,
            });
        }
        let log_var = raw_log_var
            .iter()
            .map(|&v| v.clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP))
            .collect();
        Ok((
            LatentPosterior { mu, log_var },
            PosteriorCache {
                mu_cache,
                sigma_cache,
                raw_log_var,
            },
        ))
    }

    /// Backward through both encoder nets. `dmu` and `dlog_var` are
    /// gradients on the posterior outputs (`dlog_var` on the clamped
    /// values; entries clamped in the forward pass get zero gradient).
    /// Returns `(dh, dh_plus)`.
    pub fn posterior_backward(
        &mut self,
        cache: &PosteriorCache,
        dmu: &[f64],
        dlog_var: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let masked: Vec<f64> = dlog_var
            .iter()
            .zip(&cache.raw_log_var)
            .map(|(&g, &raw)| if raw.abs() > LOG_VAR_CLAMP { 0.0 } else { g })
            .collect();
        let dx_mu = self.f_mu.backward(&cache.mu_cache, dmu);
        let dx_sigma = self.f_sigma.backward(&cache.sigma_cache, &masked);
        let d = dx_mu.len() / 2;
        let mut dh = vec![0.0; d];
        let mut dh_plus = vec![0.0; d];
        for i in 0..d {
            dh[i] = dx_mu[i] + dx_sigma[i];
            dh_plus[i] = dx_mu[d + i] + dx_sigma[d + i];
        }
        (dh, dh_plus)
    }

    /// Squared reconstruction error of `h` from the latent code.
    pub fn recon_loss(&self, z: &[f64], h: &[f64]) -> Result<f64, ModelError> {
        self.recon_cached(z, h).map(|(loss, ..)| loss)
    }

    pub fn recon_cached(
        &self,
        z: &[f64],
        h: &[f64],
    ) -> Result<(f64, MlpCache, Vec<f64>), ModelError> {
        if z.len() != self.g_psi.in_dim() {
            return Err(ModelError::DimensionMismatch {
                context: "recon latent",
                expected: self.g_psi.in_dim(),
                found: z.len(),
            });
        }
        if h.len() != self.g_psi.out_dim() {
            return Err(ModelError::DimensionMismatch {
                context: "recon target",
                expected: self.g_psi.out_dim(),
                found: h.len(),
            });
        }
        let (out, cache) = self.g_psi.forward_cached(z);
        let residual: Vec<f64> = out.iter().zip(h).map(|(o, t)| o - t).collect();
        let loss = residual.iter().map(|r| r * r).sum();
        Ok((loss, cache, residual))
    }

    /// Backward for `scale * ||g(z) - h||²`; returns `(dz, dh)`.
    pub fn recon_backward(
        &mut self,
        cache: &MlpCache,
        residual: &[f64],
        scale: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        let dout: Vec<f64> = residual.iter().map(|r| 2.0 * scale * r).collect();
        let dz = self.g_psi.backward(cache, &dout);
        let dh = residual.iter().map(|r| -2.0 * scale * r).collect();
        (dz, dh)
    }

    pub fn zero_grad(&mut self) {
        self.f_mu.zero_grad();
        self.f_sigma.zero_grad();
        self.g_psi.zero_grad();
        if let Some(p) = &mut self.projection {
            p.zero_grad();
        }
    }

    pub fn param_refs<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.f_mu.param_refs(&format!("{prefix}.f_mu"), out);
        self.f_sigma.param_refs(&format!("{prefix}.f_sigma"), out);
        self.g_psi.param_refs(&format!("{prefix}.g_psi"), out);
        if let Some(p) = &mut self.projection {
            p.param_refs(&format!("{prefix}.projection"), out);
        }
    }

    pub fn named_tensors(&self, prefix: &str, out: &mut Vec<(String, Vec<usize>, Vec<f64>)>) {
        self.f_mu.named_tensors(&format!("{prefix}.f_mu"), out);
        self.f_sigma
            .named_tensors(&format!("{prefix}.f_sigma"), out);
        self.g_psi.named_tensors(&format!("{prefix}.g_psi"), out);
        if let Some(p) = &self.projection {
            p.named_tensors(&format!("{prefix}.projection"), out);
        }
    }
}

/// Reparameterized draw `z = μ + σ ⊙ ε` with `σ = exp(log_var / 2)`.
pub fn sample_z(post: &LatentPosterior, eps: &[f64]) -> Vec<f64> {
    debug_assert_eq!(eps.len(), post.mu.len());
    post.mu
        .iter()
        .zip(&post.log_var)
        .zip(eps)
        .map(|((&m, &lv), &e)| m + (lv / 2.0).exp() * e)
        .collect()
}

/// Inference-mode code: the posterior mean (ε ≡ 0).
pub fn sample_z_mean(post: &LatentPosterior) -> Vec<f64> {
    post.mu.clone()
}

/// Closed-form KL of the posterior against the standard normal:
/// `½ Σ_i (σ_i² + μ_i² − 1 − log σ_i²)`. Non-negative, zero exactly at
/// `μ = 0, σ² = 1`.
pub fn compress_loss(post: &LatentPosterior) -> f64 {
    0.5 * post
        .mu
        .iter()
        .zip(&post.log_var)
        .map(|(&m, &lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}

/// Per-sample gradients of [`compress_loss`]: `(dμ, dlog_var)`.
pub fn compress_grads(post: &LatentPosterior) -> (Vec<f64>, Vec<f64>) {
    let dmu = post.mu.clone();
    let dlv = post
        .log_var
        .iter()
        .map(|&lv| 0.5 * (lv.exp() - 1.0))
        .collect();
    (dmu, dlv)
}

/// Forward record of one batch alignment evaluation.
#[derive(Debug, Clone)]
pub struct AlignCache {
    pub loss: f64,
    z: Vec<Vec<f64>>,
    zhat: Vec<Vec<f64>>,
    hp: Vec<Vec<f64>>,
    sims: Vec<Vec<f64>>,
    soft: Vec<Vec<f64>>,
    z_norms: Vec<f64>,
    hp_norms: Vec<f64>,
    projected: bool,
}

/// Batch InfoNCE between latent codes and synthesized positives.
///
/// Row `u` treats `(z_u, h⁺_u)` as the positive pair and every other
/// `h⁺_j` as a negative; similarities are cosines (after the optional
/// latent projection) scaled by `tau`, and the row softmax is computed
/// with max-subtraction. Returns the batch mean.
pub fn align_loss(
    z: &[Vec<f64>],
    h_plus: &[Vec<f64>],
    tau: f64,
    projection: Option<&Linear>,
) -> Result<f64, ModelError> {
    align_cached(z, h_plus, tau, projection).map(|c| c.loss)
}

pub fn align_cached(
    z: &[Vec<f64>],
    h_plus: &[Vec<f64>],
    tau: f64,
    projection: Option<&Linear>,
) -> Result<AlignCache, ModelError> {
    let b = z.len();
    if b < 2 {
        return Err(ModelError::BatchTooSmall { need: 2, got: b });
    }
    if h_plus.len() != b {
        return Err(ModelError::LengthMismatch {
            context: "align batch",
            left: b,
            right: h_plus.len(),
        });
    }
    let zhat: Vec<Vec<f64>> = match projection {
        Some(p) => z.iter().map(|v| p.forward(v)).collect(),
        None => z.to_vec(),
    };
    let z_norms: Vec<f64> = zhat.iter().map(|v| l2_norm(v)).collect();
    let hp_norms: Vec<f64> = h_plus.iter().map(|v| l2_norm(v)).collect();
    if z_norms.iter().chain(&hp_norms).any(|&n| n == 0.0) {
        return Err(ModelError::NonFinite {
            context: "align zero vector",
            layer: 0,
        });
    }

    let mut sims = vec![vec![0.0; b]; b];
    for u in 0..b {
        for j in 0..b {
            sims[u][j] = dot(&zhat[u], &h_plus[j]) / (z_norms[u] * hp_norms[j]);
        }
    }
    let mut loss = 0.0;
    let mut soft = Vec::with_capacity(b);
    for u in 0..b {
        let logits: Vec<f64> = sims[u].iter().map(|&s| s / tau).collect();
        let probs = softmax_stable(&logits);
        loss += -probs[u].ln();
        soft.push(probs);
    }
    loss /= b as f64;
    Ok(AlignCache {
        loss,
        z: z.to_vec(),
        zhat,
        hp: h_plus.to_vec(),
        sims,
        soft,
        z_norms,
        hp_norms,
        projected: projection.is_some(),
    })
}

/// Backward for `scale * align_loss`; accumulates projection gradients
/// when a projection is in play and returns `(dz, dh_plus)` per row.
pub fn align_backward(
    cache: &AlignCache,
    tau: f64,
    scale: f64,
    mut projection: Option<&mut Linear>,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    assert_eq!(
        cache.projected,
        projection.is_some(),
        "projection presence must match the forward pass"
    );
    let b = cache.z.len();
    let dim = cache.hp[0].len();
    let coeff = scale / (b as f64 * tau);

    let mut dzhat = vec![vec![0.0; dim]; b];
    let mut dhp = vec![vec![0.0; dim]; b];
    for u in 0..b {
        for j in 0..b {
            let ds = coeff * (cache.soft[u][j] - f64::from(u8::from(j == u)));
            if ds == 0.0 {
                continue;
            }
            let (na, nb) = (cache.z_norms[u], cache.hp_norms[j]);
            let s = cache.sims[u][j];
            for k in 0..dim {
                dzhat[u][k] += ds * (cache.hp[j][k] / (na * nb) - s * cache.zhat[u][k] / (na * na));
                dhp[j][k] += ds * (cache.zhat[u][k] / (na * nb) - s * cache.hp[j][k] / (nb * nb));
            }
        }
    }

    let dz = match projection.as_deref_mut() {
        Some(p) => cache
            .z
            .iter()
            .zip(&dzhat)
            .map(|(zu, du)| p.backward(zu, du))
            .collect(),
        None => dzhat,
    };
    (dz, dhp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn zeroed_params(d: usize, dz: usize) -> CiblParams {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut p = CiblParams::init(d, dz, 6, 0.1, &mut rng);
        for mlp in [&mut p.f_mu, &mut p.f_sigma] {
            for layer in &mut mlp.layers {
                layer.w.iter_mut().for_each(|w| *w = 0.0);
                layer.b.iter_mut().for_each(|b| *b = 0.0);
            }
        }
        p
    }

    #[test]
    fn zero_nets_give_standard_posterior() {
        let p = zeroed_params(3, 3);
        let post = p.posterior(&[0.5, -0.5, 1.0], &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(post.mu, vec![0.0; 3]);
        assert_eq!(post.log_var, vec![0.0; 3]);
    }

    #[test]
    fn posterior_is_deterministic_and_matches_manual_eval() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let p = CiblParams::init(2, 2, 4, 0.1, &mut rng);
        let h = [0.3, -0.6];
        let hp = [0.9, 0.2];
        let a = p.posterior(&h, &hp).unwrap();
        let b = p.posterior(&h, &hp).unwrap();
        assert_eq!(a, b);
        // manual forward of f_mu
        let input = [0.3, -0.6, 0.9, 0.2];
        let manual = p.f_mu.forward(&input);
        assert_eq!(a.mu, manual);
    }

    #[test]
    fn posterior_rejects_bad_dims() {
        let p = zeroed_params(3, 2);
        assert!(matches!(
            p.posterior(&[1.0], &[1.0]),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sampling_identities() {
        let post = LatentPosterior {
            mu: vec![1.0, -2.0],
            log_var: vec![0.0, 0.0],
        };
        assert_eq!(sample_z(&post, &[0.0, 0.0]), vec![1.0, -2.0]);
        assert_eq!(sample_z_mean(&post), vec![1.0, -2.0]);
        // log_var = 0 means unit sigma: z = mu + eps
        assert_eq!(sample_z(&post, &[0.5, -1.5]), vec![1.5, -3.5]);
    }

    #[test]
    fn sample_mean_converges_to_mu() {
        let post = LatentPosterior {
            mu: vec![0.7, -1.3, 2.0],
            log_var: vec![0.4, -0.8, 0.0],
        };
        let n = 100_000usize;
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let mut sums = vec![0.0; 3];
        for _ in 0..n {
            let eps: Vec<f64> = (0..3)
                .map(|_| rng.sample(rand_distr::StandardNormal))
                .collect();
            for (s, v) in sums.iter_mut().zip(sample_z(&post, &eps)) {
                *s += v;
            }
        }
        for i in 0..3 {
            let mean = sums[i] / n as f64;
            let sigma = (post.log_var[i] / 2.0).exp();
            let bound = 4.0 * sigma / (n as f64).sqrt();
            assert!(
                (mean - post.mu[i]).abs() < bound,
                "dim {i}: mean {mean} vs mu {} (bound {bound})",
                post.mu[i]
            );
        }
    }

    #[test]
    fn compress_loss_closed_form_values() {
        let zero = LatentPosterior {
            mu: vec![0.0],
            log_var: vec![0.0],
        };
        assert_eq!(compress_loss(&zero), 0.0);

        let unit_mean = LatentPosterior {
            mu: vec![1.0],
            log_var: vec![0.0],
        };
        assert!((compress_loss(&unit_mean) - 0.5).abs() < 1e-15);

        let wide = LatentPosterior {
            mu: vec![0.0],
            log_var: vec![4.0f64.ln()],
        };
        let expect = 0.5 * (4.0 - 1.0 - 4.0f64.ln());
        assert!((compress_loss(&wide) - expect).abs() < 1e-12);
        assert!((compress_loss(&wide) - 0.8068528194).abs() < 1e-9);
    }

    #[test]
    fn compress_loss_nonnegative_on_random_posteriors() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let dim = rng.gen_range(1..6);
            let post = LatentPosterior {
                mu: (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect(),
                log_var: (0..dim).map(|_| rng.gen_range(-4.0..4.0)).collect(),
            };
            assert!(compress_loss(&post) >= 0.0);
        }
    }

    #[test]
    fn compress_grads_match_finite_differences() {
        let post = LatentPosterior {
            mu: vec![0.4, -1.1],
            log_var: vec![0.3, -0.9],
        };
        let (dmu, dlv) = compress_grads(&post);
        let h = 1e-6;
        for i in 0..2 {
            let mut up = post.clone();
            up.mu[i] += h;
            let mut down = post.clone();
            down.mu[i] -= h;
            let fd = (compress_loss(&up) - compress_loss(&down)) / (2.0 * h);
            assert!((fd - dmu[i]).abs() < 1e-8);

            let mut up = post.clone();
            up.log_var[i] += h;
            let mut down = post.clone();
            down.log_var[i] -= h;
            let fd = (compress_loss(&up) - compress_loss(&down)) / (2.0 * h);
            assert!((fd - dlv[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn align_uniform_similarities_give_log_batch() {
        for b in [2usize, 4, 8] {
            let z: Vec<Vec<f64>> = (0..b).map(|_| vec![1.0, 0.0]).collect();
            let hp: Vec<Vec<f64>> = (0..b).map(|_| vec![0.5, 0.0]).collect();
            let loss = align_loss(&z, &hp, 0.1, None).unwrap();
            assert!(
                (loss - (b as f64).ln()).abs() < 1e-9,
                "B={b}: {loss} vs {}",
                (b as f64).ln()
            );
        }
    }

    #[test]
    fn align_separated_pairs_match_scalar_evaluation() {
        // cos(z_u, h⁺_u) = 1 and cos(z_u, h⁺_j) = -1 for j ≠ u
        let z = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let hp = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let loss = align_loss(&z, &hp, 0.1, None).unwrap();
        let expect = (1.0 + (-20.0f64).exp()).ln(); // -ln(e^10 / (e^10 + e^-10))
        assert!((loss - expect).abs() < 1e-12);
        assert!((loss - 2.061_153_6e-9).abs() < 1e-13);
    }

    #[test]
    fn align_is_nonnegative_and_batch_permutation_invariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        for _ in 0..200 {
            let b = rng.gen_range(2..6);
            let d = rng.gen_range(2..5);
            let z: Vec<Vec<f64>> = (0..b)
                .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let hp: Vec<Vec<f64>> = (0..b)
                .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let loss = align_loss(&z, &hp, 0.1, None).unwrap();
            assert!(loss >= 0.0);

            let mut order: Vec<usize> = (0..b).collect();
            order.reverse();
            let zp: Vec<Vec<f64>> = order.iter().map(|&i| z[i].clone()).collect();
            let hpp: Vec<Vec<f64>> = order.iter().map(|&i| hp[i].clone()).collect();
            let permuted = align_loss(&zp, &hpp, 0.1, None).unwrap();
            assert!((loss - permuted).abs() < 1e-12);
        }
    }

    #[test]
    fn align_rejects_tiny_batches() {
        assert!(matches!(
            align_loss(&[vec![1.0]], &[vec![1.0]], 0.1, None),
            Err(ModelError::BatchTooSmall { need: 2, got: 1 })
        ));
    }

    #[test]
    fn align_backward_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(55);
        let b = 3;
        let dz = 2;
        let d = 4;
        let projection = Linear::init(dz, d, &mut rng);
        let z: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..dz).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let hp: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();

        let cache = align_cached(&z, &hp, 0.1, Some(&projection)).unwrap();
        let mut proj = projection.clone();
        let (dzs, dhps) = align_backward(&cache, 0.1, 1.0, Some(&mut proj));

        let h = 1e-6;
        for u in 0..b {
            for k in 0..dz {
                let mut zp = z.clone();
                zp[u][k] += h;
                let up = align_loss(&zp, &hp, 0.1, Some(&projection)).unwrap();
                zp[u][k] -= 2.0 * h;
                let down = align_loss(&zp, &hp, 0.1, Some(&projection)).unwrap();
                let fd = (up - down) / (2.0 * h);
                assert!((fd - dzs[u][k]).abs() < 1e-7, "dz[{u}][{k}]");
            }
            for k in 0..d {
                let mut hpp = hp.clone();
                hpp[u][k] += h;
                let up = align_loss(&z, &hpp, 0.1, Some(&projection)).unwrap();
                hpp[u][k] -= 2.0 * h;
                let down = align_loss(&z, &hpp, 0.1, Some(&projection)).unwrap();
                let fd = (up - down) / (2.0 * h);
                assert!((fd - dhps[u][k]).abs() < 1e-7, "dhp[{u}][{k}]");
            }
        }
        for k in 0..proj.w.len() {
            let mut perturbed = projection.clone();
            perturbed.w[k] += h;
            let up = align_loss(&z, &hp, 0.1, Some(&perturbed)).unwrap();
            perturbed.w[k] -= 2.0 * h;
            let down = align_loss(&z, &hp, 0.1, Some(&perturbed)).unwrap();
            let fd = (up - down) / (2.0 * h);
            assert!((fd - proj.gw[k]).abs() < 1e-7, "proj.w[{k}]");
        }
    }

    #[test]
    fn recon_loss_values() {
        // identity decoder: one layer, identity weights
        let mut rng = ChaCha12Rng::seed_from_u64(60);
        let mut p = CiblParams::init(2, 2, 4, 0.1, &mut rng);
        p.g_psi = Mlp {
            layers: vec![Linear::from_parts(
                2,
                2,
                vec![1.0, 0.0, 0.0, 1.0],
                vec![0.0, 0.0],
            )],
            slope: 0.01,
        };
        // exact reconstruction
        assert_eq!(p.recon_loss(&[0.4, -0.7], &[0.4, -0.7]).unwrap(), 0.0);
        // residual [1, 1]
        assert_eq!(p.recon_loss(&[1.0, 2.0], &[0.0, 1.0]).unwrap(), 2.0);
    }

    #[test]
    fn recon_matches_independent_summation() {
        let mut rng = ChaCha12Rng::seed_from_u64(61);
        let p = CiblParams::init(3, 2, 5, 0.1, &mut rng);
        let z = [0.3, -0.8];
        let h = [0.1, 0.2, -0.5];
        let loss = p.recon_loss(&z, &h).unwrap();
        let out = p.g_psi.forward(&z);
        let manual: f64 = out.iter().zip(&h).map(|(o, t)| (o - t) * (o - t)).sum();
        assert!((loss - manual).abs() < 1e-15);
    }

    #[test]
    fn mc_kl_estimator_agrees_with_closed_form() {
        // spot-check one posterior here; the acceptance suite covers more
        let post = LatentPosterior {
            mu: vec![0.5, -0.25],
            log_var: vec![0.6, -0.4],
        };
        let closed = compress_loss(&post);
        let n = 200_000usize;
        let mut rng = ChaCha12Rng::seed_from_u64(71);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let eps: Vec<f64> = (0..2)
                .map(|_| rng.sample(rand_distr::StandardNormal))
                .collect();
            let z = sample_z(&post, &eps);
            // log q(z) - log p(z)
            let mut term = 0.0;
            for i in 0..2 {
                let lv = post.log_var[i];
                let var = lv.exp();
                let dq = z[i] - post.mu[i];
                term += 0.5 * (-lv - dq * dq / var + z[i] * z[i]);
            }
            sum += term;
            sum_sq += term * term;
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - closed).abs() < 3.0 * se,
            "MC {mean} vs closed {closed} (se {se})"
        );
    }
}
