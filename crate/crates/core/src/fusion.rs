//! Narrative-enhanced fusion: attention over the retrieved candidate set.
//!
//! A shared adapter matrix maps narrative embeddings into the encoder's
//! representation space; a single scoring vector with a leaky rectifier
//! produces one coefficient per candidate, softmax turns the coefficients
//! into probabilities, and the synthesized positive is the probability-
//! weighted sum of the candidates' encoded representations.

use rand::Rng;

use crate::error::ModelError;
use crate::nn::{dot, leaky_relu, leaky_relu_grad, softmax_stable, ParamRef};

/// Default negative slope for the attention scorer.
pub const DEFAULT_ATTENTION_SLOPE: f64 = 0.2;

/// Learnable attention parameters: adapter `w` (repr_dim x narrative_dim)
/// and scoring vector `a` (2 * repr_dim).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub repr_dim: usize,
    pub narrative_dim: usize,
    pub w: Vec<f64>,
    pub a: Vec<f64>,
    pub gw: Vec<f64>,
    pub ga: Vec<f64>,
    pub slope: f64,
}

/// Forward record for one attention evaluation.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    query: Vec<f64>,
    candidates: Vec<Vec<f64>>,
    /// Adapted query `W h̃_u`.
    mapped_query: Vec<f64>,
    /// Adapted candidates `W h̃_u'`.
    mapped: Vec<Vec<f64>>,
    /// Pre-activation scores.
    raw: Vec<f64>,
    pub probs: Vec<f64>,
}

impl AttentionParams {
    pub fn init<R: Rng>(repr_dim: usize, narrative_dim: usize, slope: f64, rng: &mut R) -> Self {
        let wb = 1.0 / (narrative_dim as f64).sqrt();
        let ab = 1.0 / (2.0 * repr_dim as f64).sqrt();
        Self {
            repr_dim,
            narrative_dim,
            w: (0..repr_dim * narrative_dim)
                .map(|_| rng.gen_range(-wb..=wb))
                .collect(),
            a: (0..2 * repr_dim).map(|_| rng.gen_range(-ab..=ab)).collect(),
            gw: vec![0.0; repr_dim * narrative_dim],
            ga: vec![0.0; 2 * repr_dim],
            slope,
        }
    }

    fn map(&self, v: &[f64]) -> Vec<f64> {
        (0..self.repr_dim)
            .map(|i| {
                dot(
                    &self.w[i * self.narrative_dim..(i + 1) * self.narrative_dim],
                    v,
                )
            })
            .collect()
    }

    /// Probability that each candidate is the right positive for the query.
    /// Softmax over the candidate set, computed with max-subtraction.
    pub fn attention_weights(
        &self,
        query: &[f64],
        candidates: &[Vec<f64>],
    ) -> Result<Vec<f64>, ModelError> {
        self.attention_cached(query, candidates).map(|c| c.probs)
    }

    pub fn attention_cached(
        &self,
        query: &[f64],
        candidates: &[Vec<f64>],
    ) -> Result<AttentionCache, ModelError> {
        if candidates.is_empty() {
            return Err(ModelError::EmptyCandidates);
        }
        if query.len() != self.narrative_dim {
            return Err(ModelError::DimensionMismatch {
                context: "attention query",
                expected: self.narrative_dim,
                found: query.len(),
            });
        }
        for c in candidates {
            if c.len() != self.narrative_dim {
                return Err(ModelError::DimensionMismatch {
                    context: "attention candidate",
                    expected: self.narrative_dim,
                    found: c.len(),
                });
            }
        }
        let mapped_query = self.map(query);
        let mapped: Vec<Vec<f64>> = candidates.iter().map(|c| self.map(c)).collect();
        let (a_q, a_c) = self.a.split_at(self.repr_dim);
        let raw: Vec<f64> = mapped
            .iter()
            .map(|m| dot(a_q, &mapped_query) + dot(a_c, m))
            .collect();
        let scores: Vec<f64> = raw.iter().map(|&z| leaky_relu(z, self.slope)).collect();
        let probs = softmax_stable(&scores);
        Ok(AttentionCache {
            query: query.to_vec(),
            candidates: candidates.to_vec(),
            mapped_query,
            mapped,
            raw,
            probs,
        })
    }

    /// Backward through `h⁺ = Σ p_i r_i` and the attention scorer.
    ///
    /// Accumulates dL/dW and dL/da; returns dL/dr_i for each candidate
    /// representation (the caller decides whether those flow further).
    pub fn backward(
        &mut self,
        cache: &AttentionCache,
        reprs: &[Vec<f64>],
        dh_plus: &[f64],
    ) -> Vec<Vec<f64>> {
        let n = cache.probs.len();
        debug_assert_eq!(reprs.len(), n);

        // dL/dp_i and dL/dr_i from the weighted sum
        let dp: Vec<f64> = reprs.iter().map(|r| dot(r, dh_plus)).collect();
        let drepr: Vec<Vec<f64>> = cache
            .probs
            .iter()
            .map(|&p| dh_plus.iter().map(|&g| p * g).collect())
            .collect();

        // softmax backward: ds_i = p_i (dp_i - Σ_j p_j dp_j)
        let mix: f64 = cache.probs.iter().zip(&dp).map(|(&p, &d)| p * d).sum();
        let ds: Vec<f64> = cache
            .probs
            .iter()
            .zip(&dp)
            .map(|(&p, &d)| p * (d - mix))
            .collect();

        let (a_q, a_c) = self.a.split_at(self.repr_dim);
        let mut dmapped_query = vec![0.0; self.repr_dim];
        let mut da = vec![0.0; 2 * self.repr_dim];
        let mut dmapped: Vec<Vec<f64>> = vec![vec![0.0; self.repr_dim]; n];
        for i in 0..n {
            let dz = ds[i] * leaky_relu_grad(cache.raw[i], self.slope);
            for k in 0..self.repr_dim {
                da[k] += dz * cache.mapped_query[k];
                da[self.repr_dim + k] += dz * cache.mapped[i][k];
                dmapped_query[k] += dz * a_q[k];
                dmapped[i][k] += dz * a_c[k];
            }
        }
        for (g, d) in self.ga.iter_mut().zip(&da) {
            *g += d;
        }

        // dW from the adapted query and every adapted candidate
        for r in 0..self.repr_dim {
            let row = &mut self.gw[r * self.narrative_dim..(r + 1) * self.narrative_dim];
            for (j, w) in row.iter_mut().enumerate() {
                let mut acc = dmapped_query[r] * cache.query[j];
                for i in 0..n {
                    acc += dmapped[i][r] * cache.candidates[i][j];
                }
                *w += acc;
            }
        }

        drepr
    }

    pub fn zero_grad(&mut self) {
        self.gw.iter_mut().for_each(|g| *g = 0.0);
        self.ga.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn param_refs<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: format!("{prefix}.w"),
            data: &mut self.w,
            grad: &mut self.gw,
        });
        out.push(ParamRef {
            name: format!("{prefix}.a"),
            data: &mut self.a,
            grad: &mut self.ga,
        });
    }

    pub fn named_tensors(&self, prefix: &str, out: &mut Vec<(String, Vec<usize>, Vec<f64>)>) {
        out.push((
            format!("{prefix}.w"),
            vec![self.repr_dim, self.narrative_dim],
            self.w.clone(),
        ));
        out.push((
            format!("{prefix}.a"),
            vec![2 * self.repr_dim],
            self.a.clone(),
        ));
    }
}

/// Probability-weighted sum of candidate representations.
///
/// `probs` must lie on the simplex (within 1e-6); the result sits in the
/// per-coordinate convex hull of the candidates.
pub fn synthesize_positive(probs: &[f64], reprs: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
    if probs.is_empty() || reprs.is_empty() {
        return Err(ModelError::EmptyCandidates);
    }
    if probs.len() != reprs.len() {
        return Err(ModelError::LengthMismatch {
            context: "synthesize_positive",
            left: probs.len(),
            right: reprs.len(),
        });
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || probs.iter().any(|&p| p < 0.0) {
        return Err(ModelError::OffSimplex { sum });
    }
    let dim = reprs[0].len();
    for r in reprs {
        if r.len() != dim {
            return Err(ModelError::LengthMismatch {
                context: "synthesize_positive reprs",
                left: dim,
                right: r.len(),
            });
        }
    }
    let mut out = vec![0.0; dim];
    for (&p, r) in probs.iter().zip(reprs) {
        for (o, &v) in out.iter_mut().zip(r) {
            *o += p * v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn params(repr_dim: usize, narr_dim: usize, seed: u64) -> AttentionParams {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        AttentionParams::init(repr_dim, narr_dim, DEFAULT_ATTENTION_SLOPE, &mut rng)
    }

    #[test]
    fn single_candidate_gets_all_mass() {
        let p = params(3, 4, 1);
        let probs = p
            .attention_weights(&[0.1, 0.2, 0.3, 0.4], &[vec![0.4, 0.3, 0.2, 0.1]])
            .unwrap();
        assert_eq!(probs, vec![1.0]);
    }

    #[test]
    fn identical_candidates_split_mass_evenly() {
        let p = params(3, 4, 2);
        let cand = vec![0.4, -0.3, 0.2, 0.1];
        let probs = p
            .attention_weights(&[0.1, 0.2, 0.3, 0.4], &[cand.clone(), cand])
            .unwrap();
        assert!((probs[0] - 0.5).abs() < 1e-12);
        assert!((probs[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn weights_match_direct_formula_evaluation() {
        // 2x2 adapter, explicit numbers
        let mut p = params(2, 2, 3);
        p.w = vec![1.0, 0.5, -0.25, 2.0];
        p.a = vec![0.3, -0.7, 1.1, 0.9];
        p.slope = 0.2;
        let query = vec![0.6, -0.4];
        let cands = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]];
        let probs = p.attention_weights(&query, &cands).unwrap();

        let map = |v: &[f64]| vec![v[0] + 0.5 * v[1], -0.25 * v[0] + 2.0 * v[1]];
        let mq = map(&query);
        let lrelu = |z: f64| if z >= 0.0 { z } else { 0.2 * z };
        let scores: Vec<f64> = cands
            .iter()
            .map(|c| {
                let mc = map(c);
                lrelu(0.3 * mq[0] - 0.7 * mq[1] + 1.1 * mc[0] + 0.9 * mc[1])
            })
            .collect();
        let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (got, e) in probs.iter().zip(&exps) {
            assert!((got - e / total).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_candidates_and_bad_dims_error() {
        let p = params(2, 3, 4);
        assert!(matches!(
            p.attention_weights(&[1.0, 0.0, 0.0], &[]),
            Err(ModelError::EmptyCandidates)
        ));
        assert!(matches!(
            p.attention_weights(&[1.0, 0.0], &[vec![1.0, 0.0, 0.0]]),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn synthesis_identities() {
        let single = synthesize_positive(&[1.0], &[vec![3.0, -1.0]]).unwrap();
        assert_eq!(single, vec![3.0, -1.0]);

        let mean = synthesize_positive(&[0.5, 0.5], &[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert_eq!(mean, vec![0.5, 1.0]);

        let weighted = synthesize_positive(
            &[0.2, 0.3, 0.5],
            &[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]],
        )
        .unwrap();
        // independent summation
        let expect = [
            0.2 * 1.0 + 0.3 * 3.0 + 0.5 * 5.0,
            0.2 * 2.0 + 0.3 * 4.0 + 0.5 * 6.0,
        ];
        assert!((weighted[0] - expect[0]).abs() < 1e-15);
        assert!((weighted[1] - expect[1]).abs() < 1e-15);
    }

    #[test]
    fn synthesis_rejects_bad_inputs() {
        assert!(matches!(
            synthesize_positive(&[0.9], &[vec![1.0], vec![2.0]]),
            Err(ModelError::LengthMismatch { .. })
        ));
        assert!(matches!(
            synthesize_positive(&[0.7, 0.7], &[vec![1.0], vec![2.0]]),
            Err(ModelError::OffSimplex { .. })
        ));
    }

    #[test]
    fn permutation_equivariance() {
        let p = params(3, 5, 6);
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        use rand::Rng;
        let query: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cands: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let reprs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let perm = [2usize, 0, 3, 1];

        let probs = p.attention_weights(&query, &cands).unwrap();
        let permuted_cands: Vec<Vec<f64>> = perm.iter().map(|&i| cands[i].clone()).collect();
        let permuted_probs = p.attention_weights(&query, &permuted_cands).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert!((permuted_probs[k] - probs[i]).abs() < 1e-12);
        }

        let h = synthesize_positive(&probs, &reprs).unwrap();
        let permuted_reprs: Vec<Vec<f64>> = perm.iter().map(|&i| reprs[i].clone()).collect();
        let h2 = synthesize_positive(&permuted_probs, &permuted_reprs).unwrap();
        for (a, b) in h.iter().zip(&h2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn convex_hull_per_coordinate() {
        let p = params(2, 3, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        use rand::Rng;
        for _ in 0..100 {
            let query: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = rng.gen_range(1..6);
            let cands: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let reprs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..2).map(|_| rng.gen_range(-5.0..5.0)).collect())
                .collect();
            let probs = p.attention_weights(&query, &cands).unwrap();
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(probs.iter().all(|&x| x > 0.0));
            let h = synthesize_positive(&probs, &reprs).unwrap();
            for d in 0..2 {
                let lo = reprs.iter().map(|r| r[d]).fold(f64::INFINITY, f64::min);
                let hi = reprs.iter().map(|r| r[d]).fold(f64::NEG_INFINITY, f64::max);
                assert!(h[d] >= lo - 1e-12 && h[d] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut p = params(3, 4, 10);
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        use rand::Rng;
        let query: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cands: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let reprs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();

        // loss = sum(h_plus^2)
        let loss = |p: &AttentionParams| -> f64 {
            let probs = p.attention_weights(&query, &cands).unwrap();
            synthesize_positive(&probs, &reprs)
                .unwrap()
                .iter()
                .map(|v| v * v)
                .sum()
        };

        let cache = p.attention_cached(&query, &cands).unwrap();
        let h = synthesize_positive(&cache.probs, &reprs).unwrap();
        let dh: Vec<f64> = h.iter().map(|v| 2.0 * v).collect();
        p.backward(&cache, &reprs, &dh);

        let step = 1e-6;
        for k in 0..p.w.len() {
            let orig = p.w[k];
            p.w[k] = orig + step;
            let up = loss(&p);
            p.w[k] = orig - step;
            let down = loss(&p);
            p.w[k] = orig;
            let fd = (up - down) / (2.0 * step);
            assert!((fd - p.gw[k]).abs() < 1e-6, "w[{k}] {fd} vs {}", p.gw[k]);
        }
        for k in 0..p.a.len() {
            let orig = p.a[k];
            p.a[k] = orig + step;
            let up = loss(&p);
            p.a[k] = orig - step;
            let down = loss(&p);
            p.a[k] = orig;
            let fd = (up - down) / (2.0 * step);
            assert!((fd - p.ga[k]).abs() < 1e-6, "a[{k}] {fd} vs {}", p.ga[k]);
        }
    }
}
