//! Helpers shared by the integration suites and the acceptance harness.

#![allow(dead_code)]

use std::path::PathBuf;

use mixmatch::baselines::{BaselineConfig, BaselineMethod};
use mixmatch::config::ExperimentConfig;
use mixmatch::data::{gen_two_moons, split, SplitSpec};
use mixmatch::experiment::{load_data, run_seed};
use mixmatch::model::ParamSet;
use mixmatch::rng::{Purpose, Streams};
use mixmatch::ssl::{
    labeled_loss, lambda_schedule, mix_batch, mix_plan, mix_weight, mixmatch_loss, mixmatch_transform, mixup_pair,
    sharpen, unlabeled_loss, MixMatchConfig, MixupMode, TargetedExample, TransformInputs,
};
use mixmatch::train::{report_median, run_training, CheckpointLog, Method, Schedule, TrainSettings, TrainingData};
use mixmatch::{Graph, ModelSpec, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

pub fn preset(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../presets")
        .join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    ExperimentConfig::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn with(config: &ExperimentConfig, overrides: &[(&str, &str)]) -> ExperimentConfig {
    let mut c = config.clone();
    for (k, v) in overrides {
        c.set(k, v).unwrap_or_else(|e| panic!("{k} = {v}: {e}"));
    }
    c.validate().unwrap();
    c
}

/// Per-seed median-report errors, in seed order.
pub fn seed_errors(config: &ExperimentConfig) -> Vec<f64> {
    let (train, test) = load_data(config).unwrap();
    config
        .seeds
        .iter()
        .map(|&s| {
            let outcome = run_seed(config, &train, &test, s, None).unwrap();
            report_median(&outcome.log, config.report_window).unwrap()
        })
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

// Gradient checks

pub const FD_STEP: f64 = 1e-4;
const GRAD_SEED: u64 = 9;
const GRAD_STEP: u64 = 3;

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Random `B×d` labeled rows with one-hot targets and `K·B` unlabeled rows.
pub fn random_inputs(b: usize, k: usize, d: usize, l: usize, seed: u64) -> TransformInputs<f64> {
    let mut rng = Streams::new(seed).stream(Purpose::Dataset, 0, 0);
    let mut targets = vec![0.0; b * l];
    for i in 0..b {
        targets[i * l + rng.random_range(0..l)] = 1.0;
    }
    TransformInputs {
        x: random_tensor(&[b, d], &mut rng),
        x_targets: Tensor::matrix(b, l, targets).unwrap(),
        u: random_tensor(&[k * b, d], &mut rng),
        k,
    }
}

fn param_grads(g: &Graph<f64>, vars: &[mixmatch::Var]) -> Vec<f64> {
    vars.iter().flat_map(|&v| g.grad(v).unwrap().data().to_vec()).collect()
}

/// Loss, parameter gradient and guesses, with guesses computed from `params` behind a gradient stop.
pub fn loss_and_grad(
    model: &ModelSpec,
    params: &ParamSet<f64>,
    inp: &TransformInputs<f64>,
    config: &MixMatchConfig,
    lambda: f64,
) -> (f64, Vec<f64>, Tensor<f64>) {
    let streams = Streams::new(GRAD_SEED);
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let pair = mixmatch_transform(&mut g, model, &vars, inp, config, &streams, GRAD_STEP).unwrap();
    let terms = mixmatch_loss(&mut g, model, &vars, &pair, lambda).unwrap();
    g.backward(terms.total).unwrap();
    (
        g.value(terms.total).item(),
        param_grads(&g, &vars),
        g.value(pair.guesses).clone(),
    )
}

/// The same loss with `guesses` supplied as plain constants.
pub fn loss_with_frozen_guesses(
    model: &ModelSpec,
    params: &ParamSet<f64>,
    inp: &TransformInputs<f64>,
    config: &MixMatchConfig,
    lambda: f64,
    guesses: &Tensor<f64>,
) -> (f64, Vec<f64>) {
    let streams = Streams::new(GRAD_SEED);
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let x = g.constant(inp.x.clone());
    let t = g.constant(inp.x_targets.clone());
    let u = g.constant(inp.u.clone());
    let q = g.constant(guesses.clone());
    let plan = mix_plan(
        config.mixup_mode,
        inp.x.rows(),
        inp.k,
        config.alpha,
        &streams,
        GRAD_STEP,
    )
    .unwrap();
    let pair = mix_batch(&mut g, x, t, u, q, inp.k, plan).unwrap();
    let terms = mixmatch_loss(&mut g, model, &vars, &pair, lambda).unwrap();
    g.backward(terms.total).unwrap();
    (g.value(terms.total).item(), param_grads(&g, &vars))
}

fn perturbed(params: &ParamSet<f64>, index: usize, delta: f64) -> ParamSet<f64> {
    let mut p = params.clone();
    let mut seen = 0;
    for q in p.iter_mut() {
        let n = q.value.len();
        if index < seen + n {
            q.value.data_mut()[index - seen] += delta;
            break;
        }
        seen += n;
    }
    p
}

/// Largest `|a − n| / max(|a|, |n|, 1e-6)` between reverse-mode and central differences.
///
/// Differences are taken with the guesses held at their unperturbed value,
/// which is the function the stop-gradient rule differentiates.
pub fn max_relative_error(model: &ModelSpec, params: &ParamSet<f64>, inp: &TransformInputs<f64>, lambda: f64) -> f64 {
    let config = MixMatchConfig::default();
    let (_, auto, guesses) = loss_and_grad(model, params, inp, &config, lambda);
    let mut worst: f64 = 0.0;
    for (i, &a) in auto.iter().enumerate() {
        let at = |d: f64| loss_with_frozen_guesses(model, &perturbed(params, i, d), inp, &config, lambda, &guesses).0;
        let numeric = (at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP);
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    worst
}

/// Largest elementwise gap between the live-guess gradient and the frozen-guess gradient.
pub fn firewall_gap(model: &ModelSpec, params: &ParamSet<f64>, inp: &TransformInputs<f64>, lambda: f64) -> f64 {
    let config = MixMatchConfig::default();
    let (_, live, guesses) = loss_and_grad(model, params, inp, &config, lambda);
    let (_, frozen) = loss_with_frozen_guesses(model, params, inp, &config, lambda, &guesses);
    live.iter().zip(&frozen).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

// Pairing oracle

/// Fisher–Yates replayed from the raw stream key.
fn replay_shuffle(streams: &Streams, step: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(streams.key(Purpose::MixShuffle, step, 0));
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.random_range(0..=i));
    }
    p
}

/// `max(λ, 1 − λ)` with `λ = X/(X+Y)`, `X, Y ~ Gamma(α, 1)`, replayed from the raw stream key.
/// Each Gamma(α) draw is `G·U^(1/α)` with `G ~ Gamma(α + 1)`, `U` uniform on (0, 1].
fn replay_weight(streams: &Streams, step: u64, row: usize, alpha: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(streams.key(Purpose::MixWeights, step, row as u64));
    let gamma = Gamma::new(alpha + 1.0, 1.0).unwrap();
    let mut draw = || {
        let g: f64 = gamma.sample(&mut rng);
        let u: f64 = 1.0 - rng.random::<f64>();
        g * u.powf(1.0 / alpha)
    };
    let (x, y) = (draw(), draw());
    let lambda = x / (x + y);
    lambda.max(1.0 - lambda)
}

/// Runs the transform on a pool whose rows are distinct basis vectors and
/// reads the pairing back out of the mixed features.
///
/// Checks that every pool row is used as a partner exactly once, that the
/// pairing is the replayed seeded shuffle, that the weights are the replayed
/// draws, and that targets follow the same pairing.
pub fn check_pairing(b: usize, k: usize, seed: u64, step: u64) -> Result<(), String> {
    let n = b + k * b;
    let l = 3;
    let basis = |rows: std::ops::Range<usize>| {
        let mut data = vec![0.0; rows.len() * n];
        for (r, j) in rows.enumerate() {
            data[r * n + j] = 1.0;
        }
        data
    };
    let mut targets = vec![0.0; b * l];
    for i in 0..b {
        targets[i * l + i % l] = 1.0;
    }
    let inp = TransformInputs {
        x: Tensor::matrix(b, n, basis(0..b)).unwrap(),
        x_targets: Tensor::matrix(b, l, targets).unwrap(),
        u: Tensor::matrix(k * b, n, basis(b..n)).unwrap(),
        k,
    };
    let model = ModelSpec::mlp(n, vec![], l);
    let params = model.init_params::<f64>(seed).unwrap();
    let config = MixMatchConfig {
        k,
        ..MixMatchConfig::default()
    };
    let streams = Streams::new(seed);
    let mut g = Graph::new();
    let vars = params.bind_constants(&mut g);
    let pair = mixmatch_transform(&mut g, &model, &vars, &inp, &config, &streams, step).map_err(|e| e.to_string())?;
    let guesses = g.value(pair.guesses).clone();
    let (xs, us) = pair.to_examples(&g);
    if xs.len() != b || us.len() != k * b {
        return Err(format!("|X'| = {}, |U'| = {}", xs.len(), us.len()));
    }
    let pool_target = |j: usize| -> Vec<f64> {
        if j < b {
            inp.x_targets.row(j).to_vec()
        } else {
            guesses.row((j - b) / k).to_vec()
        }
    };
    let expected = replay_shuffle(&streams, step, n);
    let mut uses = vec![0usize; n];
    for (i, row) in xs.iter().chain(&us).enumerate() {
        let f = row.features.data();
        let others: Vec<usize> = (0..n).filter(|&j| j != i && f[j] != 0.0).collect();
        let (partner, w) = match others.as_slice() {
            [] => (i, replay_weight(&streams, step, i, config.alpha)),
            [p] => (*p, f[i]),
            _ => return Err(format!("row {i} mixes more than two pool rows")),
        };
        uses[partner] += 1;
        if partner != expected[i] {
            return Err(format!(
                "row {i}: partner {partner}, replayed shuffle gives {}",
                expected[i]
            ));
        }
        let want_w = replay_weight(&streams, step, i, config.alpha);
        if partner != i && ((w - want_w).abs() > 1e-12 || (f[partner] - (1.0 - want_w)).abs() > 1e-12) {
            return Err(format!("row {i}: weights {w}/{} vs replayed {want_w}", f[partner]));
        }
        let (own, other) = (pool_target(i), pool_target(partner));
        for c in 0..l {
            let want = want_w * own[c] + (1.0 - want_w) * other[c];
            if (row.target[c] - want).abs() > 1e-12 {
                return Err(format!("row {i} class {c}: target {} vs {want}", row.target[c]));
            }
        }
    }
    if uses.iter().any(|&u| u != 1) {
        return Err(format!("pool usage counts {uses:?}"));
    }
    Ok(())
}

// Baseline reduction

/// Parameters and EMA parameters after every step of a short moons run.
pub fn trajectory(method: &Method, steps: u64) -> Vec<(Vec<u32>, Vec<u32>)> {
    let data = gen_two_moons(200, 0.1, 4).unwrap();
    let test = gen_two_moons(50, 0.1, 5).unwrap();
    let (lab, unl) = split(
        &data,
        &SplitSpec {
            labeled: 10,
            balanced: true,
            seed: 2,
        },
    )
    .unwrap();
    let model = ModelSpec::mlp(2, vec![16, 16], 2);
    let settings = TrainSettings::new(mixmatch::data::AugmentPolicy::Jitter2d { sigma: 0.1 });
    let batch_size = 16;
    let schedule = Schedule {
        steps,
        batch_size,
        checkpoint_every: batch_size as u64,
    };
    let bits = |p: &ParamSet<f32>| p.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let mut states = Vec::new();
    let mut record = |e: &mixmatch::train::CheckpointEvent<'_>| {
        states.push((bits(&e.state.params), bits(&e.state.ema)));
        Ok(())
    };
    run_training(
        &model,
        method,
        &settings,
        TrainingData {
            labeled: &lab,
            unlabeled: &unl,
            test: &test,
        },
        &schedule,
        7,
        &mut record,
    )
    .unwrap();
    states
}

pub fn zero_weight(method: BaselineMethod) -> Method {
    Method::Baseline(BaselineConfig {
        weight_max: 0.0,
        rampup_steps: 10,
        ..BaselineConfig::new(method)
    })
}

/// First step at which a zero-weight baseline departs from the supervised trainer.
pub fn baseline_divergence(method: BaselineMethod, steps: u64) -> Option<usize> {
    let reference = trajectory(&Method::Supervised, steps);
    let candidate = trajectory(&zero_weight(method), steps);
    assert_eq!(reference.len(), steps as usize + 1);
    reference
        .iter()
        .zip(&candidate)
        .position(|(a, b)| a != b)
        .or_else(|| (reference.len() != candidate.len()).then_some(reference.len().min(candidate.len())))
}

// Property checks, shared by the proptest suite and the acceptance harness

pub fn simplex(max_classes: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, 2..=max_classes).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold(0, |best, (i, &x)| if x > p[best] { i } else { best })
}

/// Simplex output, argmax preservation and entropy monotone in `T`.
pub fn check_sharpen(p: &[f64], t_lo: f64, t_hi: f64) -> Result<(), TestCaseError> {
    let (t_lo, t_hi) = if t_lo <= t_hi { (t_lo, t_hi) } else { (t_hi, t_lo) };
    let lo = sharpen(p, t_lo).unwrap();
    let hi = sharpen(p, t_hi).unwrap();
    for q in [&lo, &hi] {
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(q.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
    let top = p.iter().cloned().fold(f64::MIN, f64::max);
    let ties = p.iter().filter(|&&x| x == top).count();
    if ties == 1 {
        prop_assert_eq!(argmax(&lo), argmax(p));
        prop_assert_eq!(argmax(&hi), argmax(p));
    }
    prop_assert!(entropy(&lo) <= entropy(&hi) + 1e-9, "H(T={t_lo}) > H(T={t_hi})");
    if t_hi <= 1.0 {
        prop_assert!(entropy(&hi) <= entropy(p) + 1e-9);
    }
    Ok(())
}

/// The modified weight lies in `[0.5, 1]` and the mix is never closer to the second input.
pub fn check_mixup(a: &[f64], b: &[f64], alpha: f64, seed: u64) -> Result<(), TestCaseError> {
    let ex = |v: &[f64]| TargetedExample {
        features: Tensor::new(vec![v.len()], v.to_vec()).unwrap(),
        target: vec![1.0, 0.0],
    };
    let mut rng = Streams::new(seed).stream(Purpose::MixWeights, 0, 0);
    let w = mix_weight(alpha, true, &mut rng).unwrap();
    prop_assert!((0.5..=1.0).contains(&w), "weight {w}");
    let (m, used) = mixup_pair(&ex(a), &ex(b), alpha, &mut rng).unwrap();
    prop_assert!((0.5..=1.0).contains(&used));
    let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let (da, db) = (dist(m.features.data(), a), dist(m.features.data(), b));
    prop_assert!(da <= db + 1e-12, "{da} > {db}");
    Ok(())
}

pub fn mode_strategy() -> impl Strategy<Value = MixupMode> {
    prop_oneof![
        Just(MixupMode::Full),
        Just(MixupMode::LabeledOnly),
        Just(MixupMode::UnlabeledOnly),
        Just(MixupMode::Separate),
        Just(MixupMode::Off),
    ]
}

/// `|X′| = B`, `|U′| = K·B`, with matching target widths.
pub fn check_cardinality(b: usize, k: usize, mode: MixupMode, seed: u64) -> Result<(), TestCaseError> {
    let (d, l) = (3, 4);
    let inp = random_inputs(b, k, d, l, seed);
    let model = ModelSpec::mlp(d, vec![5], l);
    let params = model.init_params::<f64>(seed).unwrap();
    let config = MixMatchConfig {
        k,
        mixup_mode: mode,
        ..MixMatchConfig::default()
    };
    let mut g = Graph::new();
    let vars = params.bind_constants(&mut g);
    let pair = mixmatch_transform(&mut g, &model, &vars, &inp, &config, &Streams::new(seed), seed % 97).unwrap();
    prop_assert_eq!(g.shape(pair.x_features), &[b, d][..]);
    prop_assert_eq!(g.shape(pair.u_features), &[k * b, d][..]);
    prop_assert_eq!(g.shape(pair.x_targets), &[b, l][..]);
    prop_assert_eq!(g.shape(pair.u_targets), &[k * b, l][..]);
    Ok(())
}

/// `0 ≤ L_U ≤ 2/L` for arbitrary logits and simplex targets.
pub fn check_loss_bounds(logits: &[f64], targets: &[Vec<f64>]) -> Result<(), TestCaseError> {
    let l = targets[0].len();
    let n = targets.len();
    let mut g = Graph::new();
    let z = g.constant(Tensor::matrix(n, l, logits[..n * l].to_vec()).unwrap());
    let t = g.constant(Tensor::matrix(n, l, targets.concat()).unwrap());
    let lu = unlabeled_loss(&mut g, z, t).unwrap();
    let value = g.value(lu).item();
    prop_assert!(
        value >= 0.0 && value <= 2.0 / l as f64 + 1e-12,
        "L_U = {value} with L = {l}"
    );
    let lx = labeled_loss(&mut g, z, t).unwrap();
    prop_assert!(g.value(lx).item() >= -1e-12);
    Ok(())
}

pub fn loss_case(max_classes: usize) -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
    (2..=max_classes, 1usize..6).prop_flat_map(|(l, n)| {
        (
            prop::collection::vec(-30.0f64..30.0, n * l),
            prop::collection::vec(
                prop::collection::vec(0.0f64..1.0, l).prop_map(|v| {
                    let s: f64 = v.iter().sum();
                    if s == 0.0 {
                        let mut u = vec![0.0; v.len()];
                        u[0] = 1.0;
                        u
                    } else {
                        v.into_iter().map(|x| x / s).collect()
                    }
                }),
                n,
            ),
        )
    })
}

// Schedule and reporting

/// Exact endpoint and midpoint values of the ramp.
pub fn schedule_exact() -> Result<(), String> {
    let cases = [
        (0, 100.0, 16_000, 0.0),
        (8_000, 100.0, 16_000, 50.0),
        (16_000, 100.0, 16_000, 100.0),
        (40_000, 100.0, 16_000, 100.0),
        (500, 75.0, 1_000, 37.5),
        (3, 9.0, 0, 9.0),
    ];
    for (step, max, ramp, want) in cases {
        let got = lambda_schedule(step, max, ramp);
        if got != want {
            return Err(format!("lambda_schedule({step}, {max}, {ramp}) = {got}, want {want}"));
        }
    }
    Ok(())
}

/// `report_median` against sorting the tail of the log, on `logs` random logs.
pub fn report_median_oracle(logs: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..logs {
        let len = rng.random_range(1..60);
        let window = rng.random_range(1..80);
        let mut step = 0u64;
        let entries: Vec<(u64, f64)> = (0..len)
            .map(|_| {
                step += rng.random_range(1..500);
                let error = if rng.random_bool(0.2) {
                    rng.random_range(0..20) as f64 / 20.0
                } else {
                    rng.random::<f64>()
                };
                (step, error)
            })
            .collect();
        let log = CheckpointLog::from_entries(entries.clone()).unwrap();
        let mut tail: Vec<f64> = entries.iter().rev().take(window).map(|e| e.1).collect();
        tail.sort_by(f64::total_cmp);
        let m = tail.len();
        let want = if m % 2 == 1 {
            tail[m / 2]
        } else {
            (tail[m / 2 - 1] + tail[m / 2]) / 2.0
        };
        let got = report_median(&log, window).map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("log {case} (len {len}, window {window}): {got} vs {want}"));
        }
    }
    Ok(())
}

/// Largest gap between iterated EMA and its closed form over `steps` steps.
///
/// With `θ_t` the parameter after step `t`,
/// `ema_T = d^T·θ_0 + (1 − d)·Σ_{t=1..T} d^{T−t}·θ_t`.
pub fn ema_closed_form_gap(steps: usize, decay: f64) -> f64 {
    use mixmatch::model::{ema_update, Param};
    let theta = |t: usize| -> [f64; 3] {
        let x = t as f64;
        [(x * 0.01).sin(), 1.0 / (1.0 + x), (x * 0.003).cos() * 2.0 - 0.5]
    };
    let params_at = |t: usize| {
        ParamSet::from_params(vec![Param {
            name: "w".into(),
            value: Tensor::new(vec![3], theta(t).to_vec()).unwrap(),
        }])
    };
    let mut ema = params_at(0);
    for t in 1..=steps {
        ema_update(&mut ema, &params_at(t), decay).unwrap();
    }
    let iterated = ema.flatten();
    let mut worst: f64 = 0.0;
    for (c, &value) in iterated.iter().enumerate() {
        let mut closed = decay.powi(steps as i32) * theta(0)[c];
        let mut weight = 1.0 - decay;
        for t in (1..=steps).rev() {
            closed += weight * theta(t)[c];
            weight *= decay;
        }
        worst = worst.max((closed - value).abs());
    }
    worst
}
