use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backward, forward, Mode, ModelParams, RegressorError, Tensor};

/// Analytic vs central-difference derivative of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub kind: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Parameter kinds probed by [`gradient_check`].
pub const LAYER_KINDS: [&str; 5] = ["conv.weight", "bn.gamma", "bn.beta", "linear.weight", "linear.bias"];

fn kind_of(group: &str) -> &'static str {
    match group.rsplit('.').next() {
        Some("gamma") => "bn.gamma",
        Some("beta") => "bn.beta",
        Some("bias") => "linear.bias",
        _ if group.starts_with("conv") => "conv.weight",
        _ => "linear.weight",
    }
}

/// Probes `per_kind` random parameters of every layer kind with the
/// scalar objective `Σ c·output + Σ d·features` for fixed random `c, d`.
pub fn gradient_check(
    params: &ModelParams,
    batch: &Tensor,
    mode: Mode,
    per_kind: usize,
    eps: f64,
    seed: u64,
) -> Result<Vec<GradCheckEntry>, RegressorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = batch.shape()[0];
    let hidden = params.config().hidden;
    let uniform = |rng: &mut ChaCha8Rng, len: usize| -> Vec<f64> {
        use rand::Rng;
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    };
    let c = Tensor::new(vec![n, 9], uniform(&mut rng, n * 9))?;
    let d = Tensor::new(vec![n, hidden], uniform(&mut rng, n * hidden))?;
    let objective = |p: &ModelParams| -> Result<f64, RegressorError> {
        let f = forward(p, batch, mode)?;
        let a: f64 = f.output.data().iter().zip(c.data()).map(|(x, y)| x * y).sum();
        let b: f64 = f.features.data().iter().zip(d.data()).map(|(x, y)| x * y).sum();
        Ok(a + b)
    };

    let analytic = {
        let mut f = forward(params, batch, mode)?;
        backward(&mut f.tape, &c, Some(&d))?
    };

    let groups = params.groups();
    let mut out = Vec::new();
    for kind in LAYER_KINDS {
        let pool: Vec<usize> = groups.iter().filter(|g| kind_of(&g.name) == kind).flat_map(|g| g.range.clone()).collect();
        let take = per_kind.min(pool.len());
        for pick in sample(&mut rng, pool.len(), take) {
            let index = pool[pick];
            let mut p = params.clone();
            p.values_mut()[index] += eps;
            let plus = objective(&p)?;
            p.values_mut()[index] -= 2.0 * eps;
            let minus = objective(&p)?;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[index];
            let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            out.push(GradCheckEntry { kind, index, analytic: a, numeric, rel_error });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regressor::{init_model, ModelConfig};
    use rand::Rng;

    fn batch(n: usize, size: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![n, 1, size, size], (0..n * size * size).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let cfg = ModelConfig { channels: vec![8, 10, 12], kernel_size: 3, stride: 1, hidden: 16, input_size: 16 };
        let params = init_model(&cfg, 3).unwrap();
        let x = batch(4, 16, 1);
        for mode in [Mode::Train, Mode::Eval] {
            let entries = gradient_check(&params, &x, mode, 25, 1e-5, 7).unwrap();
            assert_eq!(entries.len(), 125);
            let worst = entries.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)).unwrap();
            assert!(worst.rel_error < 1e-4, "{mode:?}: {worst:?}");
        }
    }

    #[test]
    fn kinds_cover_every_group() {
        let params = init_model(&ModelConfig::default(), 0).unwrap();
        for g in params.groups() {
            assert!(LAYER_KINDS.contains(&kind_of(&g.name)), "{}", g.name);
        }
        assert_eq!(kind_of("conv2.weight"), "conv.weight");
        assert_eq!(kind_of("hidden.weight"), "linear.weight");
        assert_eq!(kind_of("out.bias"), "linear.bias");
    }
}
