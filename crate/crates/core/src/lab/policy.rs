use rand::Rng;

use super::{LabConfig, ToyTask};
use crate::grpo::TokenPolicy;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Block {
    offset: usize,
    positions: usize,
    /// Actions plus the stop token.
    width: usize,
}

/// Tabular autoregressive policy conditioned on (task, position).
///
/// Token `v < V` is the task's `v`-th action; token `V` is stop.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    params: Vec<f64>,
    blocks: Vec<Block>,
    pub temperature: f64,
    /// The stop token is unavailable at positions below this.
    pub min_actions: usize,
}

impl ToyPolicy {
    /// Uniform logits; the cap for a task with reference length `n` is
    /// `ceil(max_len_factor * n)`.
    pub fn for_tasks(tasks: &[ToyTask], cfg: &LabConfig) -> Self {
        let shapes: Vec<(usize, usize)> = tasks
            .iter()
            .map(|t| {
                let cap = (cfg.max_len_factor * t.reference_plan.len() as f64).ceil() as usize;
                (t.vocab_size(), cap.max(1))
            })
            .collect();
        let mut policy = Self::uniform(&shapes, cfg.temperature, cfg.min_actions);
        if cfg.warm_start != 0.0 {
            for (ctx, task) in tasks.iter().enumerate() {
                let stop = task.vocab_size();
                let refs = task.reference_tokens();
                let cap = policy.blocks[ctx].positions;
                for (pos, &tok) in refs.iter().enumerate().take(cap) {
                    *policy.logit_mut(ctx, pos, tok) += cfg.warm_start;
                }
                if refs.len() < cap {
                    *policy.logit_mut(ctx, refs.len(), stop) += cfg.warm_start;
                }
            }
        }
        policy
    }

    /// Zero logits for contexts with the given (vocab size, cap) shapes.
    pub fn uniform(shapes: &[(usize, usize)], temperature: f64, min_actions: usize) -> Self {
        let mut offset = 0;
        let blocks = shapes
            .iter()
            .map(|&(vocab, positions)| {
                let b = Block {
                    offset,
                    positions,
                    width: vocab + 1,
                };
                offset += positions * (vocab + 1);
                b
            })
            .collect();
        Self {
            params: vec![0.0; offset],
            blocks,
            temperature,
            min_actions,
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_contexts(&self) -> usize {
        self.blocks.len()
    }

    /// Maximum number of sampled tokens for `context`.
    pub fn cap(&self, context: usize) -> usize {
        self.blocks[context].positions
    }

    pub fn stop_token(&self, context: usize) -> usize {
        self.blocks[context].width - 1
    }

    pub fn logit_mut(&mut self, context: usize, pos: usize, token: usize) -> &mut f64 {
        let b = self.blocks[context];
        &mut self.params[b.offset + pos * b.width + token]
    }

    fn row(&self, context: usize, pos: usize) -> &[f64] {
        let b = self.blocks[context];
        let start = b.offset + pos * b.width;
        &self.params[start..start + b.width]
    }

    /// Token probabilities at `pos`, with stop masked below `min_actions`.
    pub fn probs(&self, context: usize, pos: usize) -> Vec<f64> {
        let row = self.row(context, pos);
        let allowed = if pos < self.min_actions {
            row.len() - 1
        } else {
            row.len()
        };
        let max = row[..allowed]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(j, &l)| {
                if j < allowed {
                    ((l - max) / self.temperature).exp()
                } else {
                    0.0
                }
            })
            .collect();
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= z);
        p
    }

    /// Samples a token sequence; returns tokens and their log-probs.
    pub fn sample<R: Rng + ?Sized>(&self, context: usize, rng: &mut R) -> (Vec<usize>, Vec<f64>) {
        let stop = self.stop_token(context);
        let mut tokens = Vec::new();
        let mut logps = Vec::new();
        for pos in 0..self.cap(context) {
            let p = self.probs(context, pos);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut tok = p.len() - 1;
            for (j, &pj) in p.iter().enumerate() {
                acc += pj;
                if u < acc {
                    tok = j;
                    break;
                }
            }
            // Guard against rounding in the cumulative sum picking a masked slot.
            while p[tok] == 0.0 {
                tok -= 1;
            }
            tokens.push(tok);
            logps.push(p[tok].ln());
            if tok == stop {
                break;
            }
        }
        (tokens, logps)
    }

    /// Most likely token at every position, stopping at stop or the cap.
    pub fn greedy(&self, context: usize) -> Vec<usize> {
        let stop = self.stop_token(context);
        let mut tokens = Vec::new();
        for pos in 0..self.cap(context) {
            let p = self.probs(context, pos);
            let tok = (0..p.len())
                .max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a)))
                .expect("non-empty row");
            tokens.push(tok);
            if tok == stop {
                break;
            }
        }
        tokens
    }
}

impl TokenPolicy for ToyPolicy {
    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn token_logprobs(&self, context: usize, tokens: &[usize]) -> Vec<f64> {
        tokens
            .iter()
            .enumerate()
            .map(|(pos, &tok)| self.probs(context, pos)[tok].ln())
            .collect()
    }

    fn accumulate_logprob_grad(
        &self,
        context: usize,
        tokens: &[usize],
        upstream: &[f64],
        grad: &mut [f64],
    ) {
        let b = self.blocks[context];
        for (pos, (&tok, &up)) in tokens.iter().zip(upstream).enumerate() {
            if up == 0.0 {
                continue;
            }
            let p = self.probs(context, pos);
            let start = b.offset + pos * b.width;
            let scale = up / self.temperature;
            for (j, &pj) in p.iter().enumerate() {
                let indicator = if j == tok { 1.0 } else { 0.0 };
                grad[start + j] += scale * (indicator - pj);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rows_sum_to_one() {
        let mut p = ToyPolicy::uniform(&[(4, 3), (2, 5)], 0.7, 1);
        for (i, x) in p.params_mut().iter_mut().enumerate() {
            *x = (i as f64 * 0.37).sin() * 3.0;
        }
        for ctx in 0..2 {
            for pos in 0..p.cap(ctx) {
                let s: f64 = p.probs(ctx, pos).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(p.probs(0, 0)[4], 0.0);
    }

    #[test]
    fn replayed_logprobs_match_sampling() {
        let mut p = ToyPolicy::uniform(&[(5, 8)], 1.3, 1);
        for (i, x) in p.params_mut().iter_mut().enumerate() {
            *x = ((i * 7919) % 13) as f64 / 4.0 - 1.5;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (tokens, logps) = p.sample(0, &mut rng);
            let replay = p.token_logprobs(0, &tokens);
            for (a, b) in logps.iter().zip(&replay) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn greedy_follows_largest_logit() {
        let mut p = ToyPolicy::uniform(&[(3, 4)], 1.0, 1);
        *p.logit_mut(0, 0, 2) = 5.0;
        *p.logit_mut(0, 1, 3) = 5.0;
        assert_eq!(p.greedy(0), vec![2, 3]);
    }
}
