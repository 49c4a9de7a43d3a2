//! ADAM training on summed code length with a stepped learning-rate ladder.

use crate::cuboid::SymbolCuboid;
use crate::error::{Error, Result};
use crate::model::{loss, ContextModel, ModelGrads};
use crate::tensor::Rng;

/// Learning rates tried in order; each is kept until the objective stops
/// decreasing.
pub const LR_LADDER: [f64; 4] = [3e-4, 1e-4, 3.33e-5, 1.11e-5];

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: ModelGrads,
    v: ModelGrads,
}

impl Adam {
    pub fn new(model: &ContextModel) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: ModelGrads::zeros_like(model),
            v: ModelGrads::zeros_like(model),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &ModelGrads {
        &self.m
    }

    pub fn second_moment(&self) -> &ModelGrads {
        &self.v
    }

    pub fn step(&mut self, model: &mut ContextModel, grads: &ModelGrads, lr: f64) -> Result<()> {
        if grads.layers.len() != self.m.layers.len()
            || grads
                .layers
                .iter()
                .zip(&self.m.layers)
                .any(|(g, m)| g.0.len() != m.0.len() || g.1.len() != m.1.len())
        {
            return Err(Error::Shape("gradient does not match model parameters".into()));
        }
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let (m, v) = (&mut self.m, &mut self.v);
        for (layer, g) in grads.layers.iter().enumerate() {
            let (mw, mb) = &mut m.layers[layer];
            let (vw, vb) = &mut v.layers[layer];
            for (ml, vl, gl) in [(mw, vw, &g.0), (mb, vb, &g.1)] {
                for ((mi, vi), &gi) in ml.iter_mut().zip(vl.iter_mut()).zip(gl) {
                    *mi = b1 * *mi + (1.0 - b1) * gi;
                    *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                }
            }
        }
        model.apply_update(|layer, is_bias, params| {
            let (ml, vl) = if is_bias {
                (&m.layers[layer].1, &v.layers[layer].1)
            } else {
                (&m.layers[layer].0, &v.layers[layer].0)
            };
            for ((p, &mi), &vi) in params.iter_mut().zip(ml).zip(vl) {
                *p -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            }
        });
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_steps: usize,
    /// Steps per evaluation window.
    pub eval_interval: usize,
    /// Windows without improvement before moving down the ladder.
    pub patience: usize,
    /// Relative improvement over the best window that counts as progress.
    pub min_improvement: f64,
    /// Train on random square crops of this side length.
    pub crop: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            max_steps: 2000,
            eval_interval: 200,
            patience: 3,
            min_improvement: 1e-3,
            crop: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRecord {
    pub step: usize,
    pub bits_per_symbol: f64,
    pub lr: f64,
}

impl MetricRecord {
    /// `step=.. bits_per_symbol=.. lr=..`
    pub fn to_line(&self) -> String {
        format!(
            "step={} bits_per_symbol={:.6} lr={:e}",
            self.step, self.bits_per_symbol, self.lr
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxSteps,
    Plateau,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub step: usize,
    pub lr_index: usize,
    pub adam: Adam,
    pub best: f64,
    pub stale: usize,
    pub rng: Rng,
}

impl TrainState {
    pub fn new(model: &ContextModel, seed: u64) -> Self {
        TrainState {
            step: 0,
            lr_index: 0,
            adam: Adam::new(model),
            best: f64::INFINITY,
            stale: 0,
            rng: Rng::new(seed),
        }
    }

    pub fn lr(&self) -> f64 {
        LR_LADDER[self.lr_index]
    }

    /// Feeds one window's loss into the plateau rule. Returns `true` once the
    /// last rate has plateaued.
    pub fn end_window(&mut self, window_bits_per_symbol: f64, cfg: &TrainConfig) -> bool {
        if window_bits_per_symbol < self.best * (1.0 - cfg.min_improvement) {
            self.best = window_bits_per_symbol;
            self.stale = 0;
            return false;
        }
        self.best = self.best.min(window_bits_per_symbol);
        self.stale += 1;
        if self.stale < cfg.patience {
            return false;
        }
        self.stale = 0;
        if self.lr_index + 1 == LR_LADDER.len() {
            return true;
        }
        self.lr_index += 1;
        false
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ContextModel,
    pub history: Vec<MetricRecord>,
    pub stop: StopReason,
    pub steps: usize,
}

fn check_corpus(model: &ContextModel, corpus: &[SymbolCuboid]) -> Result<()> {
    let first = corpus.first().ok_or_else(|| Error::Corpus("empty corpus".into()))?;
    let cfg = model.config();
    for x in corpus {
        if x.depth() != first.depth() || x.alphabet() != first.alphabet() {
            return Err(Error::Corpus("cuboids disagree on depth or alphabet".into()));
        }
    }
    if first.depth() != cfg.depth || first.alphabet() != cfg.alphabet {
        return Err(Error::Corpus(format!(
            "corpus has C={}, m={}; model expects C={}, m={}",
            first.depth(),
            first.alphabet(),
            cfg.depth,
            cfg.alphabet
        )));
    }
    Ok(())
}

fn sample(x: &SymbolCuboid, crop: Option<usize>, rng: &mut Rng) -> Result<SymbolCuboid> {
    match crop {
        Some(side) if side < x.width() || side < x.height() => {
            let (w, h) = (side.min(x.width()), side.min(x.height()));
            let x0 = rng.below(x.width() - w + 1);
            let y0 = rng.below(x.height() - h + 1);
            x.crop(x0, y0, w, h)
        }
        _ => Ok(x.clone()),
    }
}

/// Minibatch ADAM on the summed code length. Every `eval_interval` steps
/// the mean training bits/symbol of the window is recorded and fed to the
/// plateau rule that walks down [`LR_LADDER`].
pub fn train(model: ContextModel, corpus: &[SymbolCuboid], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, corpus, cfg, |_| {})
}

/// [`train`] with a callback invoked on every recorded metric.
pub fn train_with(
    mut model: ContextModel,
    corpus: &[SymbolCuboid],
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&MetricRecord),
) -> Result<TrainOutcome> {
    check_corpus(&model, corpus)?;
    if cfg.batch_size == 0 || cfg.eval_interval == 0 || cfg.patience == 0 {
        return Err(Error::InvalidArgument("batch size, eval interval and patience must be positive".into()));
    }
    let mut state = TrainState::new(&model, cfg.seed);
    let mut history = Vec::new();
    let (mut window_bits, mut window_symbols) = (0.0, 0usize);
    let mut stop = StopReason::MaxSteps;
    while state.step < cfg.max_steps {
        let batch = (0..cfg.batch_size)
            .map(|_| {
                let idx = state.rng.below(corpus.len());
                sample(&corpus[idx], cfg.crop, &mut state.rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let (bits, grads) = model.batch_loss_and_grad(&batch)?;
        let lr = state.lr();
        state.adam.step(&mut model, &grads, lr)?;
        state.step += 1;
        window_bits += bits;
        window_symbols += batch.iter().map(SymbolCuboid::len).sum::<usize>();
        if state.step % cfg.eval_interval == 0 {
            let record = MetricRecord {
                step: state.step,
                bits_per_symbol: window_bits / window_symbols as f64,
                lr,
            };
            on_record(&record);
            history.push(record);
            (window_bits, window_symbols) = (0.0, 0);
            if state.end_window(record.bits_per_symbol, cfg) {
                stop = StopReason::Plateau;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model,
        history,
        stop,
        steps: state.step,
    })
}

/// Mean code length in bits per symbol over a set of cuboids.
pub fn bits_per_symbol(model: &ContextModel, data: &[SymbolCuboid]) -> Result<f64> {
    let mut bits = 0.0;
    let mut n = 0;
    for x in data {
        bits += loss(&model.forward(x)?, x)?;
        n += x.len();
    }
    if n == 0 {
        return Err(Error::Corpus("no symbols to evaluate".into()));
    }
    Ok(bits / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::trim_conv::Schedule;

    fn tiny(schedule: Schedule) -> ContextModel {
        ContextModel::init(ModelConfig::new(2, 2, schedule).with_groups(2).with_residual_blocks(1), 3).unwrap()
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut model = tiny(Schedule::Raster);
        let before = model.clone();
        let mut adam = Adam::new(&model);
        adam.step(&mut model, &ModelGrads::zeros_like(&before), 3e-4).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut model = tiny(Schedule::Raster);
        let before = model.clone();
        let mut grads = ModelGrads::zeros_like(&model);
        let mut rng = Rng::new(1);
        for (w, b) in &mut grads.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|g| *g = rng.uniform() * 4.0 - 2.0);
        }
        let lr = 1e-3;
        let mut adam = Adam::new(&model);
        adam.step(&mut model, &grads, lr).unwrap();
        // m_hat / sqrt(v_hat) = g / |g| at step one
        for (l, (gw, gb)) in grads.layers.iter().enumerate() {
            let (a, b) = (&before.layers()[l], &model.layers()[l]);
            for ((p0, p1), g) in a.weights().iter().chain(a.bias()).zip(b.weights().iter().chain(b.bias())).zip(gw.iter().chain(gb)) {
                let expected = -lr * g.signum() * (g.abs() / (g.abs() + 1e-8));
                assert!((p1 - p0 - expected).abs() < 1e-15);
            }
        }
        // a second identical step keeps moving against the gradient sign
        let mid = model.clone();
        adam.step(&mut model, &grads, lr).unwrap();
        for l in 0..grads.layers.len() {
            for ((p0, p1), g) in mid.layers()[l].weights().iter().zip(model.layers()[l].weights()).zip(&grads.layers[l].0) {
                assert!((p1 - p0) * g < 0.0);
            }
        }
    }

    #[test]
    fn plateau_rule_walks_the_ladder() {
        let model = tiny(Schedule::Raster);
        let cfg = TrainConfig { patience: 2, ..TrainConfig::default() };
        let mut st = TrainState::new(&model, 0);
        assert!(!st.end_window(1.0, &cfg));
        assert!(!st.end_window(0.5, &cfg));
        assert!(!st.end_window(0.4999, &cfg));
        assert_eq!(st.lr_index, 0);
        assert!(!st.end_window(0.4999, &cfg));
        assert_eq!(st.lr_index, 1);
        for _ in 0..4 {
            assert!(!st.end_window(0.5, &cfg));
        }
        assert_eq!(st.lr_index, 3);
        assert!(!st.end_window(0.5, &cfg));
        assert!(st.end_window(0.5, &cfg));
    }

    #[test]
    fn empty_or_inconsistent_corpus() {
        let model = tiny(Schedule::Raster);
        let cfg = TrainConfig::default();
        assert!(matches!(train(model.clone(), &[], &cfg), Err(Error::Corpus(_))));
        let bad = vec![SymbolCuboid::zeros(2, 2, 2, 2).unwrap(), SymbolCuboid::zeros(2, 2, 3, 2).unwrap()];
        assert!(train(model.clone(), &bad, &cfg).is_err());
        let wrong_m = vec![SymbolCuboid::zeros(2, 2, 2, 4).unwrap()];
        assert!(train(model, &wrong_m, &cfg).is_err());
    }

    #[test]
    fn constant_corpus_is_learned() {
        let corpus = vec![SymbolCuboid::zeros(6, 6, 2, 2).unwrap(); 2];
        let cfg = TrainConfig { batch_size: 1, max_steps: 500, eval_interval: 50, seed: 1, ..TrainConfig::default() };
        let out = train(tiny(Schedule::Raster), &corpus, &cfg).unwrap();
        let bps = bits_per_symbol(&out.model, &corpus).unwrap();
        // a fresh model sits at exactly one bit; Adam at 3e-4 closes the gap steadily
        assert!(bps < 0.9, "bits/symbol {bps}");
        let h: Vec<f64> = out.history.iter().map(|r| r.bits_per_symbol).collect();
        assert!(h.windows(2).all(|w| w[1] < w[0]), "{h:?}");
    }

    #[test]
    fn seeded_training_is_deterministic() {
        let mut rng = Rng::new(5);
        let corpus: Vec<SymbolCuboid> = (0..3)
            .map(|_| SymbolCuboid::from_symbols(5, 5, 2, 2, (0..50).map(|_| rng.below(2) as u16).collect()).unwrap())
            .collect();
        let cfg = TrainConfig { batch_size: 2, max_steps: 40, eval_interval: 10, crop: Some(4), seed: 9, ..TrainConfig::default() };
        let a = train(tiny(Schedule::Slope), &corpus, &cfg).unwrap();
        let b = train(tiny(Schedule::Slope), &corpus, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
        assert_eq!(a.history.len(), 4);
    }

    #[test]
    fn metric_line_format() {
        let r = MetricRecord { step: 200, bits_per_symbol: 0.5, lr: 3.33e-5 };
        assert_eq!(r.to_line(), "step=200 bits_per_symbol=0.500000 lr=3.33e-5");
    }
}
