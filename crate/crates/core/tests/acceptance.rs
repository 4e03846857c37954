//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
//!
//! Run with `cargo test -p dpfl --test acceptance`.

use std::collections::{HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use dpfl::data::{accuracy, edit_counts, generate_synthetic, partition_iid, wer, SyntheticSpec};
use dpfl::experiment::{self, centralized_oracle, ExperimentConfig};
use dpfl::federation::{
    Algorithm, CohortMode, Federation, FederationConfig, RankSampling,
};
use dpfl::model::{forward_loss, FrozenBase, ModelSnapshot, SgdParams};
use dpfl::numerics::{dot, l2_norm, Matrix, RandomSource};
use dpfl::peft::PeftMethod;
use dpfl::privacy::{
    calibrate, clip_update, epsilon_spent, rdp_of_sampled_gaussian, rdp_to_epsilon,
};
use dpfl::secure_sum::{exact_sum, secure_sum_dp, Aggregation, FixedPointCodec, NoiseMode, SecureSumParams};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1. calibration round trip at epsilon = 2, delta = 1e-6, q = 0.01
fn accountant_round_trip() -> Outcome {
    let mut notes = Vec::new();
    for rounds in [100usize, 300, 2000] {
        let start = Instant::now();
        let z = calibrate(2.0, 1e-6, 0.01, rounds).map_err(|e| e.to_string())?;
        let (eps, _) = epsilon_spent(0.01, z, rounds, 1e-6).map_err(|e| e.to_string())?;
        let (eps_lo, _) = epsilon_spent(0.01, 0.99 * z, rounds, 1e-6).map_err(|e| e.to_string())?;
        let secs = start.elapsed().as_secs_f64();
        ensure(eps <= 2.0, || format!("T={rounds}: eps(z*) = {eps} > 2"))?;
        ensure(eps_lo > 2.0, || format!("T={rounds}: eps(0.99 z*) = {eps_lo} <= 2"))?;
        ensure(secs < 1.0, || format!("T={rounds}: took {secs:.3} s"))?;
        notes.push(format!("T={rounds} z*={z:.4} ({secs:.3}s)"));
    }
    Ok(notes.join(", "))
}

// 2. q = 1 reduces to the Gaussian mechanism
fn gaussian_closed_form() -> Outcome {
    let orders: Vec<f64> = (2..=64).map(f64::from).collect();
    let mut worst: f64 = 0.0;
    for z in [0.5, 1.0, 2.0] {
        let rdp = rdp_of_sampled_gaussian(1.0, z, &orders).map_err(|e| e.to_string())?;
        for (a, r) in orders.iter().zip(rdp) {
            worst = worst.max((r - a / (2.0 * z * z)).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("max deviation {worst:e}"))
}

// 3. conversion and RDP values pinned from an independent 50-digit evaluation
fn conversion_regression() -> Outcome {
    let conversions = [
        (1.0, 2.0, 1e-6, 13.429216196844383531),
        (0.5, 10.0, 1e-6, 1.673853424894421306),
        (3.0, 32.0, 1e-5, 3.2278380617554358857),
        (0.0, 64.0, 1e-6, 0.13753144421606086779),
        (2.0, 1.5, 1e-6, 27.721478611044109843),
    ];
    let rdp = [
        (0.01, 1.0, 2.0, 0.00017181342207454793814),
        (0.01, 1.0, 8.0, 0.00089364390760603189425),
        (0.01, 0.8, 32.0, 20.246275937044548092),
        (0.1, 2.0, 16.0, 0.045291839083621966812),
        (0.01, 1.0, 64.0, 27.321731874551780219),
    ];
    let mut worst: f64 = 0.0;
    for (r, a, d, expect) in conversions {
        worst = worst.max((rdp_to_epsilon(r, a, d) - expect).abs());
    }
    for (q, z, a, expect) in rdp {
        let got = rdp_of_sampled_gaussian(q, z, &[a]).map_err(|e| e.to_string())?[0];
        worst = worst.max((got - expect).abs());
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    Ok(format!("10 pinned values, max deviation {worst:e}"))
}

// 4. analytic gradients against central differences on a 3-layer model
fn gradient_check() -> Outcome {
    let start = Instant::now();
    let base = Arc::new(FrozenBase::random(4, &[8, 6], 4, &mut RandomSource::new(40, 0)).map_err(|e| e.to_string())?);
    let x = RandomSource::new(41, 0).gaussian_matrix(4, 5, 1.0);
    let y = [0usize, 3, 1, 2, 1];
    let cases: Vec<(PeftMethod, Option<usize>)> = vec![
        (PeftMethod::Full, None),
        (PeftMethod::Adapter { rank: 3 }, None),
        (PeftMethod::Compacter { n: 1, rank: 2 }, None),
        (PeftMethod::Compacter { n: 2, rank: 2 }, None),
        (PeftMethod::BitFit, None),
        (PeftMethod::Lora { rank: 1 }, None),
        (PeftMethod::Lora { rank: 8 }, None),
        (PeftMethod::Lora { rank: 16 }, None),
        (PeftMethod::LoHa { rank: 3 }, None),
        (PeftMethod::AdaLora { rank: 4, target_rank: 2, prune_interval: 1 }, None),
        (PeftMethod::DyLora { r_min: 1, r_max: 8 }, Some(1)),
        (PeftMethod::DyLora { r_min: 1, r_max: 8 }, Some(4)),
        (PeftMethod::DyLora { r_min: 1, r_max: 8 }, Some(8)),
    ];
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, (method, rank)) in cases.iter().enumerate() {
        let mut peft = base.init_peft(*method, &mut RandomSource::new(42, i as u64)).map_err(|e| e.to_string())?;
        // move away from the zero-product init so every factor has a gradient
        let mut flat = peft.flatten();
        let noise = RandomSource::new(43, i as u64).gaussian_vec(flat.len(), 0.3);
        flat.iter_mut().zip(noise).for_each(|(p, n)| *p += n);
        peft.assign_flat(&flat).map_err(|e| e.to_string())?;
        let snap = ModelSnapshot::new(base.clone(), peft);
        let (_, grad) = snap.loss_and_gradient(&x, &y, *rank).map_err(|e| e.to_string())?;
        let mut method_worst: f64 = 0.0;
        for j in 0..flat.len() {
            let mut probe = snap.clone();
            let mut f = flat.clone();
            f[j] += h;
            probe.peft.assign_flat(&f).map_err(|e| e.to_string())?;
            let (up, _) = forward_loss(&probe, &x, &y, *rank).map_err(|e| e.to_string())?;
            f[j] -= 2.0 * h;
            probe.peft.assign_flat(&f).map_err(|e| e.to_string())?;
            let (down, _) = forward_loss(&probe, &x, &y, *rank).map_err(|e| e.to_string())?;
            let numeric = (up - down) / (2.0 * h);
            let rel = (grad[j] - numeric).abs() / grad[j].abs().max(numeric.abs()).max(1e-6);
            method_worst = method_worst.max(rel);
        }
        ensure(method_worst <= 1e-4, || format!("{} rank {rank:?}: rel err {method_worst:e}", method.name()))?;
        worst = worst.max(method_worst);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{} configurations, max rel err {worst:e} ({secs:.2}s)", cases.len()))
}

// 5. zero-product initialisation leaves the base function untouched
fn zero_delta_init() -> Outcome {
    let base = Arc::new(FrozenBase::random(6, &[16, 8], 5, &mut RandomSource::new(50, 0)).map_err(|e| e.to_string())?);
    let x = RandomSource::new(51, 0).gaussian_matrix(6, 100, 2.0);
    let frozen = base.forward(&x).map_err(|e| e.to_string())?;
    let methods = [
        PeftMethod::Lora { rank: 4 },
        PeftMethod::DyLora { r_min: 1, r_max: 8 },
        PeftMethod::AdaLora { rank: 4, target_rank: 2, prune_interval: 5 },
    ];
    for (i, m) in methods.iter().enumerate() {
        let peft = base.init_peft(*m, &mut RandomSource::new(52, i as u64)).map_err(|e| e.to_string())?;
        let out = ModelSnapshot::new(base.clone(), peft).logits(&x, None).map_err(|e| e.to_string())?;
        let same = out.as_slice().iter().zip(frozen.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, || format!("{} differs from the frozen base", m.name()))?;
    }
    Ok("lora, dylora, adalora bit-identical on 100 inputs".into())
}

// 6. clipping contract over random vectors
fn clipping_contract() -> Outcome {
    let mut src = RandomSource::new(60, 0);
    for i in 0..10_000 {
        let dim = src.uniform_usize(1, 64);
        let scale = 10f64.powf(src.uniform() * 6.0 - 3.0);
        let v = src.gaussian_vec(dim, scale);
        let s = 10f64.powf(src.uniform() * 4.0 - 2.0);
        let c = clip_update(&v, s);
        ensure(l2_norm(&c) <= s, || format!("vector {i}: norm {} > S = {s}", l2_norm(&c)))?;
        ensure(clip_update(&c, s) == c, || format!("vector {i}: not idempotent"))?;
        let (nv, nc) = (l2_norm(&v), l2_norm(&c));
        if nv > 0.0 {
            let cos = dot(&v, &c) / (nv * nc);
            ensure((cos - 1.0).abs() <= 1e-12, || format!("vector {i}: cosine {cos}"))?;
        }
    }
    Ok("10^4 vectors".into())
}

// 7. masked aggregation equals the plain sum; distributed noise has the right variance
fn secure_sum_equivalence() -> Outcome {
    let mut src = RandomSource::new(70, 0);
    let contributions: Vec<Vec<f64>> = (0..100).map(|_| src.gaussian_vec(1000, 0.05)).collect();
    let params = SecureSumParams {
        clip_norm: Some(10.0),
        sigma: 0.0,
        aggregation: Aggregation::Masked,
        noise_mode: NoiseMode::Central,
        codec: FixedPointCodec::default(),
    };
    let clipped: Vec<Vec<f64>> = contributions.iter().map(|v| clip_update(v, 10.0)).collect();
    let oracle = exact_sum(&clipped).map_err(|e| e.to_string())?;
    let masked = secure_sum_dp(&contributions, &params, &RandomSource::new(71, 0)).map_err(|e| e.to_string())?;
    let worst = oracle.iter().zip(&masked).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(worst <= 1e-6, || format!("max coordinate deviation {worst:e}"))?;

    let sigma = 0.5;
    let noisy = SecureSumParams {
        sigma,
        noise_mode: NoiseMode::Distributed,
        ..params
    };
    let zeros = vec![vec![0.0; 4]; 8];
    let mut sum_sq = 0.0;
    let mut n = 0usize;
    for trial in 0..10_000u64 {
        let out = secure_sum_dp(&zeros, &noisy, &RandomSource::new(72, trial)).map_err(|e| e.to_string())?;
        sum_sq += out.iter().map(|x| x * x).sum::<f64>();
        n += out.len();
    }
    let ratio = sum_sq / n as f64 / (sigma * sigma);
    ensure((ratio - 1.0).abs() <= 0.05, || format!("variance ratio {ratio}"))?;
    Ok(format!("max deviation {worst:e}, distributed variance ratio {ratio:.4}"))
}

fn toy_federation(rank_sampling: RankSampling) -> Result<(Federation, dpfl::peft::PeftState), String> {
    let spec = SyntheticSpec {
        classes: 2,
        dim: 3,
        per_class: 4,
        spread: 1.0,
        separation: 1.0,
    };
    let data = generate_synthetic(&spec, &mut RandomSource::new(80, 0)).map_err(|e| e.to_string())?;
    let (shards, _) = partition_iid(&data, 2, &mut RandomSource::new(80, 1)).map_err(|e| e.to_string())?;
    let base = Arc::new(FrozenBase::random(3, &[4], 2, &mut RandomSource::new(80, 2)).map_err(|e| e.to_string())?);
    let config = FederationConfig {
        algorithm: Algorithm::FedAvg,
        rounds: 1,
        q: 1.0,
        cohort: CohortMode::Poisson,
        cohort_size: None,
        local_epochs: 2,
        batch_size: 2,
        learning_rate: 0.5,
        eval_interval: 1,
        rank_sampling,
        clip_norm: None,
        aggregation: Aggregation::Exact,
        noise_mode: NoiseMode::Central,
    };
    let fed = Federation::new(
        base,
        shards,
        data,
        PeftMethod::DyLora { r_min: 1, r_max: 2 },
        config,
        None,
        RandomSource::new(80, 3),
    )
    .map_err(|e| e.to_string())?;
    let mut state = fed.init_state().map_err(|e| e.to_string())?;
    let mut flat = state.flatten();
    let noise = RandomSource::new(80, 4).gaussian_vec(flat.len(), 0.5);
    flat.iter_mut().zip(noise).for_each(|(p, n)| *p += n);
    state.assign_flat(&flat).map_err(|e| e.to_string())?;
    Ok((fed, state))
}

// 8. one server-side rank per round has the same expected update as per-client ranks
fn rank_sampling_expectation() -> Outcome {
    let start = Instant::now();
    let trials = 10_000u64;
    let mut moments = Vec::new();
    for (scheme, sampling) in [(0u64, RankSampling::Server), (1, RankSampling::PerClient)] {
        let (fed, state) = toy_federation(sampling)?;
        let before = state.flatten();
        let mut sum = vec![0.0; before.len()];
        let mut sum_sq = vec![0.0; before.len()];
        for trial in 0..trials {
            let (next, _) = fed
                .run_round_with(&state, 0, &RandomSource::new(81 + scheme, trial))
                .map_err(|e| e.to_string())?;
            for (j, (a, b)) in next.flatten().iter().zip(&before).enumerate() {
                let d = a - b;
                sum[j] += d;
                sum_sq[j] += d * d;
            }
        }
        let n = trials as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let var: Vec<f64> = sum_sq.iter().zip(&mean).map(|(s, m)| (s / n - m * m).max(0.0) * n / (n - 1.0)).collect();
        moments.push((mean, var));
    }
    let n = trials as f64;
    let (m1, v1) = &moments[0];
    let (m2, v2) = &moments[1];
    let mut worst: f64 = 0.0;
    for j in 0..m1.len() {
        let se = (v1[j] / n + v2[j] / n).sqrt();
        let z = (m1[j] - m2[j]).abs() / (3.0 * se + 1e-12);
        worst = worst.max(z);
        ensure((m1[j] - m2[j]).abs() <= 3.0 * se + 1e-12, || {
            format!("coordinate {j}: means {} vs {} (se {se:e})", m1[j], m2[j])
        })?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "{} coordinates, {trials} trials per scheme, max |diff|/(3 SE) = {worst:.3} ({secs:.1}s)",
        m1.len()
    ))
}

// 9. FedAvg with full participation and one local step is gradient descent
fn fedavg_degeneracy() -> Outcome {
    let spec = SyntheticSpec {
        classes: 3,
        dim: 5,
        per_class: 40,
        spread: 1.0,
        separation: 1.0,
    };
    let data = generate_synthetic(&spec, &mut RandomSource::new(90, 0)).map_err(|e| e.to_string())?;
    let (shards, _) = partition_iid(&data, 6, &mut RandomSource::new(90, 1)).map_err(|e| e.to_string())?;
    ensure(shards.iter().all(|s| s.n_k() == 20), || "unequal shards".into())?;
    // no hidden layers: softmax regression, a convex problem
    let base = Arc::new(FrozenBase::random(5, &[], 3, &mut RandomSource::new(90, 2)).map_err(|e| e.to_string())?);
    let eta = 0.3;
    let config = FederationConfig {
        algorithm: Algorithm::FedAvg,
        rounds: 50,
        q: 1.0,
        cohort: CohortMode::Poisson,
        cohort_size: None,
        local_epochs: 1,
        batch_size: 1000,
        learning_rate: eta,
        eval_interval: 50,
        rank_sampling: RankSampling::Server,
        clip_norm: None,
        aggregation: Aggregation::Exact,
        noise_mode: NoiseMode::Central,
    };
    let fed = Federation::new(base.clone(), shards, data.clone(), PeftMethod::Full, config, None, RandomSource::new(90, 3))
        .map_err(|e| e.to_string())?;
    let mut fl = fed.init_state().map_err(|e| e.to_string())?;
    let mut gd = ModelSnapshot::new(base, fl.clone());
    let (x, y) = data.as_batch();
    let mut worst: f64 = 0.0;
    for t in 0..50 {
        fl = fed.run_round(&fl, t).map_err(|e| e.to_string())?.0;
        let (_, g) = gd.loss_and_gradient(&x, &y, None).map_err(|e| e.to_string())?;
        gd.peft.apply_update(-eta, &g).map_err(|e| e.to_string())?;
        let diff = Matrix::column(&fl.flatten()).max_abs_diff(&Matrix::column(&gd.peft.flatten()));
        worst = worst.max(diff);
    }
    ensure(worst <= 1e-8, || format!("max deviation {worst:e}"))?;
    Ok(format!("50 steps, max deviation {worst:e}"))
}

const DESK_CONFIG: &str = include_str!("../examples/configs/dp_dylora.toml");

fn desk_config(seed: u64, algorithm: &str, method: &str) -> Result<ExperimentConfig, String> {
    let mut t: toml::Table = DESK_CONFIG.parse().map_err(|e: toml::de::Error| e.to_string())?;
    t.insert("seed".into(), toml::Value::Integer(seed as i64));
    let method: toml::Table = method.parse().map_err(|e: toml::de::Error| e.to_string())?;
    t.insert("method".into(), toml::Value::Table(method));
    t["federation"]
        .as_table_mut()
        .expect("federation table")
        .insert("algorithm".into(), toml::Value::String(algorithm.into()));
    ExperimentConfig::from_table(t, None).map_err(|e| e.to_string())
}

fn timed_run(cfg: &ExperimentConfig) -> Result<(experiment::RunArtifacts, f64), String> {
    let start = Instant::now();
    let art = experiment::execute(cfg).map_err(|e| e.to_string())?;
    Ok((art, start.elapsed().as_secs_f64()))
}

// 10. desk-scale end-to-end comparison on the synthetic task
fn desk_scale() -> Outcome {
    let mut slowest: f64 = 0.0;
    let lora16 = "kind = \"lora\"\nrank = 16";
    let (np, secs) = timed_run(&desk_config(1, "fedavg", lora16)?)?;
    slowest = slowest.max(secs);
    let fine_tune = SgdParams {
        epochs: 20,
        batch_size: 32,
        learning_rate: 0.05,
    };
    let oracle = centralized_oracle(&np.prepared, &fine_tune, &RandomSource::new(1, 0xA)).map_err(|e| e.to_string())?;
    let ratio = np.summary.final_accuracy / oracle;
    ensure(ratio >= 0.9, || {
        format!("non-private LoRA {} vs oracle {oracle}: ratio {ratio:.3}", np.summary.final_accuracy)
    })?;

    let mut dy = Vec::new();
    let mut best_lora = Vec::new();
    for seed in 1..=3u64 {
        let (d, s1) = timed_run(&desk_config(seed, "dp-dylora", "kind = \"dylora\"\nr_min = 1\nr_max = 16")?)?;
        let (l8, s2) = timed_run(&desk_config(seed, "dp-peft", "kind = \"lora\"\nrank = 8")?)?;
        let (l16, s3) = timed_run(&desk_config(seed, "dp-peft", lora16)?)?;
        slowest = slowest.max(s1).max(s2).max(s3);
        for a in [&d, &l8, &l16] {
            let eps = a.summary.epsilon_spent.unwrap_or(f64::INFINITY);
            ensure(eps <= 2.0, || format!("seed {seed}: epsilon spent {eps}"))?;
        }
        dy.push(d.summary.final_accuracy);
        best_lora.push(l8.summary.final_accuracy.max(l16.summary.final_accuracy));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gap = mean(&best_lora) - mean(&dy);
    ensure(gap <= 0.05, || format!("DyLoRA {:.4} vs best LoRA {:.4}", mean(&dy), mean(&best_lora)))?;
    ensure(slowest < 300.0, || format!("slowest run {slowest:.1} s"))?;
    Ok(format!(
        "(a) LoRA-16 {:.3} / oracle {oracle:.3} = {ratio:.3}; (b) DyLoRA {:.4} vs best DP-LoRA {:.4} (gap {:.2} points); slowest run {slowest:.2}s",
        np.summary.final_accuracy,
        mean(&dy),
        mean(&best_lora),
        100.0 * gap
    ))
}

fn all_strings(alphabet: usize, max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for c in 0..alphabet as u8 {
                let mut t: Vec<u8> = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

// 11. WER against BFS over the edit graph; accuracy against a confusion matrix
fn metrics_oracles() -> Outcome {
    let words = all_strings(3, 6);
    let id: HashMap<&[u8], usize> = words.iter().enumerate().map(|(i, w)| (w.as_slice(), i)).collect();
    let neighbours: Vec<Vec<usize>> = words
        .iter()
        .map(|w| {
            let mut out = Vec::new();
            for i in 0..w.len() {
                let mut d = w.clone();
                d.remove(i);
                out.push(id[d.as_slice()]);
                for c in 0..3u8 {
                    if c != w[i] {
                        let mut s = w.clone();
                        s[i] = c;
                        out.push(id[s.as_slice()]);
                    }
                }
            }
            if w.len() < 6 {
                for i in 0..=w.len() {
                    for c in 0..3u8 {
                        let mut s = w.clone();
                        s.insert(i, c);
                        out.push(id[s.as_slice()]);
                    }
                }
            }
            out
        })
        .collect();
    let mut pairs = 0usize;
    for (src, reference) in words.iter().enumerate() {
        let mut dist = vec![usize::MAX; words.len()];
        dist[src] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for &v in &neighbours[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        for (dst, hyp) in words.iter().enumerate() {
            let counts = edit_counts(reference, hyp);
            ensure(counts.total() == dist[dst], || format!("{reference:?} -> {hyp:?}: {} vs {}", counts.total(), dist[dst]))?;
            ensure(reference.len() + counts.insertions - counts.deletions == hyp.len(), || {
                format!("{reference:?} -> {hyp:?}: inconsistent decomposition {counts:?}")
            })?;
            match wer(reference, hyp) {
                Ok(w) => ensure((w - dist[dst] as f64 / reference.len() as f64).abs() < 1e-15, || "wer mismatch".into())?,
                Err(_) => ensure(reference.is_empty(), || "unexpected error".into())?,
            }
            pairs += 1;
        }
    }

    let mut src = RandomSource::new(110, 0);
    for case in 0..1000 {
        let classes = src.uniform_usize(2, 12);
        let n = src.uniform_usize(1, 200);
        let labels: Vec<usize> = (0..n).map(|_| src.uniform_usize(0, classes - 1)).collect();
        let preds: Vec<usize> = labels
            .iter()
            .map(|&l| if src.bernoulli(0.6) { l } else { src.uniform_usize(0, classes - 1) })
            .collect();
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&l, &p) in labels.iter().zip(&preds) {
            confusion[l][p] += 1;
        }
        let trace: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let expect = trace as f64 / n as f64;
        let got = accuracy(&preds, &labels).map_err(|e| e.to_string())?;
        ensure((got - expect).abs() < 1e-15, || format!("case {case}: {got} vs {expect}"))?;
    }
    Ok(format!("{pairs} WER pairs over {} strings, 1000 accuracy cases", words.len()))
}

// 12. same config and seed give the same rounds.csv across runs and thread counts
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (i, threads) in [1usize, 8, 8].iter().enumerate() {
        let mut cfg = desk_config(7, "dp-dylora", "kind = \"dylora\"\nr_min = 1\nr_max = 16")?;
        cfg.threads = *threads;
        cfg.federation.rounds = 30;
        cfg.federation.aggregation = Aggregation::Masked;
        cfg.output.dir = dir.path().join(format!("run{i}"));
        experiment::run(&cfg).map_err(|e| e.to_string())?;
        outputs.push(std::fs::read(cfg.output.dir.join("rounds.csv")).map_err(|e| e.to_string())?);
    }
    ensure(outputs[0] == outputs[1] && outputs[1] == outputs[2], || "rounds.csv differs".into())?;
    Ok(format!("3 runs (threads 1, 8, 8), {} bytes each", outputs[0].len()))
}

fn main() {
    let criteria: Vec<(u32, &str, fn() -> Outcome)> = vec![
        (1, "accountant round-trip", accountant_round_trip),
        (2, "Gaussian RDP closed form", gaussian_closed_form),
        (3, "RDP-to-DP conversion regression", conversion_regression),
        (4, "gradient correctness", gradient_check),
        (5, "zero-delta initialization", zero_delta_init),
        (6, "clipping contract", clipping_contract),
        (7, "secure-sum equivalence", secure_sum_equivalence),
        (8, "rank-sampling expectation equivalence", rank_sampling_expectation),
        (9, "FedAvg degeneracy", fedavg_degeneracy),
        (10, "desk-scale end-to-end", desk_scale),
        (11, "metrics oracles", metrics_oracles),
        (12, "determinism", determinism),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(msg)
        });
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 12 criteria passed");
}

