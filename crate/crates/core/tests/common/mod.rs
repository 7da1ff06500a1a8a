//! Independent oracles shared by the integration and acceptance tests.
//! Nothing here calls into the model code it is used to check.

#![allow(dead_code)]

use std::collections::BTreeSet;

use activebpmf::active::{select_kcenter_batch, FeatureSpace};
use activebpmf::model::{grad_log_posterior, Gradient};
use activebpmf::rng::rng_from;
use activebpmf::sampler::{run_chain_on, FreeBlocks};
use activebpmf::{
    ChainConfig, FeatureBank, Hyperparams, ModelState, Observation, RatingsTable, TrainingData,
};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub struct Instance {
    pub state: ModelState,
    pub table: RatingsTable,
    pub bank: FeatureBank,
    pub hyper: Hyperparams,
}

fn normal(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// Small random problem: K <= 3, feature dims <= 5, <= 10 observations.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = rng_from(seed);
    let k = rng.random_range(1..=3);
    let df = rng.random_range(1..=5);
    let dt = rng.random_range(1..=5);
    let n_faces = rng.random_range(1..=4);
    let n_traits = rng.random_range(1..=3);
    let n_obs = rng.random_range(1..=10);
    let bank = FeatureBank::new(
        normal(n_faces, df, &mut rng),
        normal(n_traits, dt, &mut rng),
    )
    .unwrap();
    let obs = (0..n_obs)
        .map(|i| Observation {
            obs_id: i,
            participant_id: format!("p{i}"),
            face_id: rng.random_range(0..n_faces),
            trait_id: rng.random_range(0..n_traits),
            rating: rng.random_range(1.0..99.0),
        })
        .collect();
    let hyper = Hyperparams {
        latent_dim: k,
        noise_precision: rng.random_range(0.5..3.0),
        ..Hyperparams::default()
    };
    let state = ModelState {
        face_weights: normal(k, df, &mut rng) * 0.7,
        trait_weights: normal(k, dt, &mut rng) * 0.7,
        sigma: rng.random_range(0.3..3.0),
        theta: rng.random_range(0.3..3.0),
    };
    Instance {
        state,
        table: RatingsTable::new(obs).unwrap(),
        bank,
        hyper,
    }
}

/// Loop-based log density over (W_F, W_T, ln sigma, ln theta), written
/// straight from the model definition with explicit sums.
pub fn naive_log_density(
    state: &ModelState,
    table: &RatingsTable,
    bank: &FeatureBank,
    hyper: &Hyperparams,
) -> f64 {
    let k = state.face_weights.nrows();
    let (df, dt) = (state.face_weights.ncols(), state.trait_weights.ncols());
    let delta = hyper.logit_clamp;
    let mut ll = 0.0;
    for o in table.observations() {
        let mut r = 0.0;
        for l in 0..k {
            let mut u = 0.0;
            for d in 0..df {
                u += state.face_weights[[l, d]] * bank.face_features()[[o.face_id, d]];
            }
            let mut v = 0.0;
            for d in 0..dt {
                v += state.trait_weights[[l, d]] * bank.trait_features()[[o.trait_id, d]];
            }
            r += u * v;
        }
        let p = (o.rating / 100.0).max(delta).min(1.0 - delta);
        let y = (p / (1.0 - p)).ln();
        ll -= 0.5 * hyper.noise_precision * (y - r) * (y - r);
    }
    let sq = |w: &Array2<f64>| w.iter().map(|x| x * x).sum::<f64>();
    let (s, t) = (state.sigma, state.theta);
    let (a, b) = (hyper.gamma_shape, hyper.gamma_rate);
    let weights = 0.5 * (k * df) as f64 * s.ln() - 0.5 * s * sq(&state.face_weights)
        + 0.5 * (k * dt) as f64 * t.ln()
        - 0.5 * t * sq(&state.trait_weights);
    let precisions = (a - 1.0) * s.ln() - b * s + (a - 1.0) * t.ln() - b * t;
    ll + weights + precisions + s.ln() + t.ln()
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Worst relative error between the analytic gradient and central finite
/// differences of [`naive_log_density`] over every parameter.
pub fn gradient_fd_error(inst: &Instance, h: f64) -> f64 {
    let Gradient {
        face_weights: gf,
        trait_weights: gt,
        log_sigma,
        log_theta,
    } = grad_log_posterior(&inst.state, &inst.table, &inst.bank, &inst.hyper).unwrap();
    let f = |s: &ModelState| naive_log_density(s, &inst.table, &inst.bank, &inst.hyper);
    let central = |perturb: &dyn Fn(&mut ModelState, f64)| {
        let mut plus = inst.state.clone();
        perturb(&mut plus, h);
        let mut minus = inst.state.clone();
        perturb(&mut minus, -h);
        (f(&plus) - f(&minus)) / (2.0 * h)
    };
    let mut worst: f64 = 0.0;
    for ((l, d), &g) in gf.indexed_iter() {
        let fd = central(&|s, e| s.face_weights[[l, d]] += e);
        worst = worst.max(relative_error(g, fd));
    }
    for ((l, d), &g) in gt.indexed_iter() {
        let fd = central(&|s, e| s.trait_weights[[l, d]] += e);
        worst = worst.max(relative_error(g, fd));
    }
    let fd = central(&|s, e| s.sigma *= e.exp());
    worst = worst.max(relative_error(log_sigma, fd));
    let fd = central(&|s, e| s.theta *= e.exp());
    worst.max(relative_error(log_theta, fd))
}

pub struct Calibration {
    pub chain_mean: f64,
    pub exact_mean: f64,
    pub mcse: f64,
}

/// One-dimensional conjugate case: K = D_f = D_t = 1 with W_T, sigma,
/// theta and tau held fixed, so the posterior of the single W_F entry is
/// Gaussian with precision `sigma + tau * sum(x_i^2)` and mean
/// `tau * sum(x_i y_i) / precision`, where `x_i = f_i * w_t * t_i`.
pub fn conjugate_calibration(seed: u64, samples: usize) -> Calibration {
    let mut rng = rng_from(seed ^ 0xCA1B);
    let n_faces = 6;
    let faces = normal(n_faces, 1, &mut rng);
    let traits = normal(2, 1, &mut rng);
    let bank = FeatureBank::new(faces.clone(), traits.clone()).unwrap();
    let obs: Vec<Observation> = (0..12)
        .map(|i| Observation {
            obs_id: i,
            participant_id: String::new(),
            face_id: i % n_faces,
            trait_id: i % 2,
            rating: rng.random_range(5.0..95.0),
        })
        .collect();
    let hyper = Hyperparams {
        latent_dim: 1,
        noise_precision: 1.5,
        ..Hyperparams::default()
    };
    let (w_t, sigma) = (0.8, 1.3);

    let mut precision = sigma;
    let mut weighted = 0.0;
    for o in &obs {
        let x = faces[[o.face_id, 0]] * w_t * traits[[o.trait_id, 0]];
        let p = (o.rating / 100.0).clamp(hyper.logit_clamp, 1.0 - hyper.logit_clamp);
        let y = (p / (1.0 - p)).ln();
        precision += hyper.noise_precision * x * x;
        weighted += hyper.noise_precision * x * y;
    }
    let exact_mean = weighted / precision;

    let init = ModelState {
        face_weights: Array2::zeros((1, 1)),
        trait_weights: Array2::from_elem((1, 1), w_t),
        sigma,
        theta: 0.9,
    };
    let table = RatingsTable::new(obs).unwrap();
    let data = TrainingData::from_table(&table, &bank, hyper.logit_clamp).unwrap();
    let config = ChainConfig {
        warmup: 300,
        samples,
        leapfrog_steps: 10,
        initial_step_size: 0.05,
        seed,
        ..ChainConfig::default()
    };
    let free = FreeBlocks {
        face_weights: true,
        trait_weights: false,
        precisions: false,
    };
    let bundle = run_chain_on(&init, &data, &hyper, &config, free).unwrap();
    let draws: Vec<f64> = bundle
        .draws
        .iter()
        .map(|s| s.face_weights[[0, 0]])
        .collect();
    let chain_mean = draws.iter().sum::<f64>() / draws.len() as f64;
    Calibration {
        chain_mean,
        exact_mean,
        mcse: batch_means_mcse(&draws, 40),
    }
}

/// Monte-Carlo standard error of the mean by non-overlapping batch means.
pub fn batch_means_mcse(draws: &[f64], batches: usize) -> f64 {
    let size = draws.len() / batches;
    let means: Vec<f64> = draws
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

/// A k-center problem where every observation sits in its own cell
/// (faces index points, one trait).
pub struct KCenterInstance {
    pub table: RatingsTable,
    pub bank: FeatureBank,
    pub known: BTreeSet<usize>,
    pub candidates: BTreeSet<usize>,
}

pub fn kcenter_instance(n: usize, n_known: usize, seed: u64) -> KCenterInstance {
    let mut rng = rng_from(seed);
    let dim = rng.random_range(1..=3);
    // coarse integer grid produces plenty of distance ties
    let faces = Array2::from_shape_fn((n, dim), |_| rng.random_range(0..6) as f64);
    let bank = FeatureBank::new(faces, Array2::zeros((1, 1))).unwrap();
    let table = RatingsTable::new(
        (0..n)
            .map(|i| Observation {
                obs_id: i,
                participant_id: String::new(),
                face_id: i,
                trait_id: 0,
                rating: 50.0,
            })
            .collect(),
    )
    .unwrap();
    let mut ids: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    let known = ids[..n_known].iter().copied().collect();
    let candidates = ids[n_known..].iter().copied().collect();
    KCenterInstance {
        table,
        bank,
        known,
        candidates,
    }
}

fn euclid(bank: &FeatureBank, a: usize, b: usize) -> f64 {
    let fa = bank.face_features().row(a);
    let fb = bank.face_features().row(b);
    fa.iter()
        .zip(fb.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn radius(bank: &FeatureBank, centers: &[usize], n: usize) -> f64 {
    (0..n)
        .map(|i| {
            centers
                .iter()
                .map(|&c| euclid(bank, i, c))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

fn subsets(
    items: &[usize],
    p: usize,
    start: usize,
    cur: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if cur.len() == p {
        out.push(cur.clone());
        return;
    }
    for i in start..items.len() {
        cur.push(items[i]);
        subsets(items, p, i + 1, cur, out);
        cur.pop();
    }
}

/// (greedy radius, optimal radius) for `p` added centers, the optimum by
/// exhaustive search over every p-subset of the candidates.
pub fn kcenter_vs_optimal(inst: &KCenterInstance, p: usize) -> (f64, f64) {
    let n = inst.table.len();
    let space = FeatureSpace::new(&inst.bank, false);
    let batch =
        select_kcenter_batch(&space, &inst.table, &inst.known, &inst.candidates, p).unwrap();
    let mut greedy: Vec<usize> = inst.known.iter().copied().collect();
    greedy.extend(&batch.ids);
    let greedy_radius = radius(&inst.bank, &greedy, n);

    let cands: Vec<usize> = inst.candidates.iter().copied().collect();
    let mut all = Vec::new();
    subsets(&cands, p.min(cands.len()), 0, &mut Vec::new(), &mut all);
    let optimal = all
        .into_iter()
        .map(|extra| {
            let mut centers: Vec<usize> = inst.known.iter().copied().collect();
            centers.extend(extra);
            radius(&inst.bank, &centers, n)
        })
        .fold(f64::INFINITY, f64::min);
    (greedy_radius, optimal)
}
