//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! Datasets are read from `SSLCA_DATA_DIR`, falling back to `data/` at the
//! workspace root.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sslca::calibration::{calibrate, round_sig, CalibrationSpec};
use sslca::codec::{code_to_coeffs, reconstruct, rmse, Normalization};
use sslca::crossbar::{Crossbar, DeviceModel, VariabilityConfig};
use sslca::engine::{comparator_energy, run, simulate, Mode, NodeKind, RunOptions};
use sslca::experiment::{evaluate, prepare, DatasetKind, DatasetSpec, ExperimentConfig, Metrics, Prepared, RunMode};
use sslca::reference::{lca_encode, threshold, Dictionary, LcaConfig};
use sslca::spikegen::generate_all;
use sslca::Matrix;

type Outcome = Result<String, String>;

fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn load_config(name: &str) -> Result<ExperimentConfig, String> {
    ExperimentConfig::load(&workspace().join("configs").join(name)).map_err(|e| e.to_string())
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Trained networks shared between criteria.
#[derive(Default)]
struct Shared {
    mnist: Option<(Prepared, Metrics)>,
    cifar: Option<Metrics>,
}

fn calibration_table() -> Outcome {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_sslca"))
        .args(["calibrate", "--table-check"])
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let text = String::from_utf8_lossy(&out.stdout);
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let ok_rows = rows.iter().filter(|r| r.last() == Some(&"ok")).count();
    // spot values read off the published table
    let spot = |row: usize, v_fire: f64, c_cb: f64| {
        rows.get(row - 1).is_some_and(|r| {
            let v: f64 = r[5].parse().unwrap_or(f64::NAN);
            let c: f64 = r[7].parse().unwrap_or(f64::NAN);
            round_sig(v, 3) == v_fire && round_sig(c, 3) == c_cb
        })
    };
    let spots = spot(1, 0.0872, 1.16e-12) && spot(7, 0.116, 434e-15);
    check(
        out.status.success() && rows.len() == 8 && ok_rows == 8 && spots && elapsed < 1.0,
        format!("{ok_rows}/8 rows match, spot rows {spots}, {elapsed:.3} s"),
    )
}

fn engine_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst_rel = 0.0f64;
    let mut mismatched = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m) = (16, 8);
        let w = Matrix::from_fn(n, m, |_, _| rng.gen_range(0.0..1.0));
        let xb = Crossbar::from_weights(&w, DeviceModel::default()).map_err(|e| e.to_string())?;
        let p = calibrate(&CalibrationSpec {
            n_inputs: n,
            n_neurons: m,
            rf_avg: 0.5,
            ..CalibrationSpec::default()
        })
        .map_err(|e| e.to_string())?;
        let x: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let trains = generate_all(&x, p.k_max, p.bias, p.input_spike_width, p.exposure, &mut rng);
        let opts = RunOptions {
            record_trace: true,
            ..RunOptions::with_mode(Mode::Inhibited)
        };
        let ev = simulate(xb.conductance(), &p, &trains, &opts, &mut rng).map_err(|e| e.to_string())?;
        let trace = ev.trace.ok_or("no trace")?;
        let dt = p.t_fire / 1e4;
        let dense = oracles::dense_simulate(xb.conductance(), &p, &trains, Mode::Inhibited, dt, 25);
        if dense.counts != ev.code.counts {
            mismatched += 1;
        }
        let spike_times: Vec<f64> = ev
            .spikes
            .iter()
            .map(|s| s.0)
            .chain(dense.spikes.iter().copied())
            .collect();
        for (t, v, vc) in &dense.samples {
            if spike_times.iter().any(|ts| (t - ts).abs() < 3.0 * dt) {
                continue;
            }
            let gap = (0..m)
                .map(|j| (trace.voltage(NodeKind::Neuron, j, *t).unwrap_or(f64::NAN) - v[j]).abs())
                .chain((0..n).map(|i| (trace.voltage(NodeKind::Inhib, i, *t).unwrap_or(f64::NAN) - vc[i]).abs()))
                .fold(0.0f64, |a, b| if b.is_nan() { f64::INFINITY } else { a.max(b) });
            worst_rel = worst_rel.max(gap / p.v_fire);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(
        mismatched == 0 && worst_rel < 0.01 && elapsed < 60.0,
        format!("max gap {worst_rel:.1e} of v_fire, {mismatched} count mismatches, {elapsed:.1} s"),
    )
}

fn lca_fixed_point() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_fixed = 0.0f64;
    for _ in 0..20 {
        let n = 8;
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let signs: Vec<f64> = (0..n).map(|_| if rng.gen() { 1.0 } else { -1.0 }).collect();
        let phi = Matrix::from_fn(n, n, |i, j| if perm[j] == i { signs[j] } else { 0.0 });
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cfg = LcaConfig {
            lambda: 0.25,
            non_negative: false,
            tol: 1e-10,
            max_steps: 100_000,
            ..LcaConfig::default()
        };
        let a = lca_encode(&Dictionary::new(phi.clone()).map_err(|e| e.to_string())?, &s, &cfg)
            .map_err(|e| e.to_string())?;
        let b = phi.tr_mul_vec(&s);
        for k in 0..n {
            worst_fixed = worst_fixed.max((a[k] - threshold(b[k], cfg.lambda, false)).abs());
        }
    }
    let mut worst_cd = 0.0f64;
    for _ in 0..50 {
        let phi = Matrix::from_fn(6, 3, |_, _| rng.gen_range(-1.0..1.0));
        let s: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for non_negative in [false, true] {
            let cfg = LcaConfig {
                lambda: 0.1,
                non_negative,
                tol: 1e-12,
                max_steps: 1_000_000,
                ..LcaConfig::default()
            };
            let a = lca_encode(&Dictionary::new(phi.clone()).map_err(|e| e.to_string())?, &s, &cfg)
                .map_err(|e| e.to_string())?;
            let want = oracles::lasso_cd(&phi, &s, cfg.lambda, non_negative, 100_000);
            for k in 0..3 {
                worst_cd = worst_cd.max((a[k] - want[k]).abs());
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(
        worst_fixed < 1e-6 && worst_cd < 1e-4 && elapsed < 10.0,
        format!("orthonormal gap {worst_fixed:.1e}, lasso gap {worst_cd:.1e}, {elapsed:.2} s"),
    )
}

fn two_neuron_scenario() -> Outcome {
    let device = DeviceModel::default();
    let w = Matrix::from_fn(4, 2, |i, j| if i / 2 == j { 1.0 } else { 0.0 });
    let xb = Crossbar::from_weights(&w, device).map_err(|e| e.to_string())?;
    let p = calibrate(&CalibrationSpec {
        n_inputs: 4,
        n_neurons: 2,
        rf_avg: 0.5 * (1.0 + device.weight_floor()),
        ..CalibrationSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let x = [0.0, 1.0, 0.5, 0.5];
    let view = xb.weights_zero_floor();
    let err_of = |counts: &[u32]| -> Result<f64, String> {
        let a = code_to_coeffs(counts, Normalization::LeastSquares, Some((&view, &x))).map_err(|e| e.to_string())?;
        Ok(rmse(&x, &reconstruct(&view, &a)))
    };
    let (mut both, mut improved) = (0, 0);
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = run(&xb, &p, &x, &RunOptions::with_mode(Mode::Inhibited), &mut rng).map_err(|e| e.to_string())?;
        if r.code.counts.iter().all(|&c| c >= 2) {
            both += 1;
        }
        if let Some(&(_, first)) = r.spikes.first() {
            let mut one = vec![0; 2];
            one[first] = 1;
            if err_of(&r.code.counts)? < err_of(&one)? {
                improved += 1;
            }
        }
    }
    check(
        both >= 90 && improved >= 90,
        format!("both neurons >= 2 spikes in {both}/100 seeds, final beats first-spike RMSE in {improved}/100"),
    )
}

fn mnist_accuracy(shared: &mut Shared) -> Outcome {
    let cfg = load_config("mnist14.json")?;
    let prep = prepare(&cfg).map_err(|e| e.to_string())?;
    let m = evaluate(&prep, cfg.mode, &cfg.variability)
        .map_err(|e| e.to_string())?
        .metrics;
    let acc = m.accuracy.ok_or("no accuracy")?;
    shared.mnist = Some((prep, m));
    let mut flat = cfg.clone();
    flat.network.bias = 0.0;
    let prep0 = prepare(&flat).map_err(|e| e.to_string())?;
    let acc0 = evaluate(&prep0, flat.mode, &flat.variability)
        .map_err(|e| e.to_string())?
        .metrics
        .accuracy
        .ok_or("no accuracy")?;
    check(
        acc >= 0.75 && acc - acc0 >= 0.03,
        format!(
            "bias 0.35: {:.2}%, bias 0: {:.2}% (need >= 75% and a 3-point gap)",
            100.0 * acc,
            100.0 * acc0
        ),
    )
}

fn cifar_energy(shared: &mut Shared) -> Outcome {
    let cfg = load_config("cifar8.json")?;
    let prep = prepare(&cfg).map_err(|e| e.to_string())?;
    let m = evaluate(&prep, RunMode::Inhibited, &cfg.variability)
        .map_err(|e| e.to_string())?
        .metrics;
    let per_input = m.energy.per_input_j * 1e12;
    let want = comparator_energy(prep.params.n_neurons, prep.params.exposure);
    let comparator_exact = (m.energy.comparator_j - want).abs() <= 1e-12 * want
        && (want - 2.2e-6 * prep.params.n_neurons as f64 * prep.params.exposure).abs() <= 1e-15 * want;
    let ok = m.n_images >= 500 && (0.9..=3.5).contains(&per_input) && comparator_exact;
    let n_images = m.n_images;
    let comparator = m.energy.comparator_j;
    shared.cifar = Some(m);
    check(
        ok,
        format!(
            "{} images, {per_input:.3} pJ per input element (need 0.9..3.5), comparator {:.4} pJ/exposure exact: {comparator_exact}",
            n_images,
            comparator * 1e12
        ),
    )
}

fn inhibition_benefit() -> Outcome {
    let base = load_config("cifar8.json")?;
    let mut rows = Vec::new();
    let mut ok = true;
    for rf in [0.35, 0.425, 0.5] {
        let mut cfg = base.clone();
        cfg.network.rf_avg = rf;
        let prep = prepare(&cfg).map_err(|e| e.to_string())?;
        let inh = evaluate(&prep, RunMode::Inhibited, &cfg.variability)
            .map_err(|e| e.to_string())?
            .metrics;
        let un = evaluate(&prep, RunMode::Uninhibited, &cfg.variability)
            .map_err(|e| e.to_string())?
            .metrics;
        ok &= inh.mean_rmse < un.mean_rmse;
        rows.push(format!("rf {rf}: {:.4} vs {:.4}", inh.mean_rmse, un.mean_rmse));
    }
    check(ok, format!("inhibited vs uninhibited RMSE, {}", rows.join("; ")))
}

fn variability(shared: &mut Shared) -> Outcome {
    let (prep, base) = shared.mnist.as_ref().ok_or("needs the MNIST baseline")?;
    let acc0 = base.accuracy.ok_or("no baseline accuracy")?;
    let cfg = &prep.config;
    let norm = |m: &Metrics| m.accuracy.map_or(0.0, |a| a / acc0);
    let with = |f: &dyn Fn(&mut VariabilityConfig)| {
        let mut v = cfg.variability.clone();
        f(&mut v);
        v
    };
    let read = norm(
        &evaluate(prep, cfg.mode, &with(&|v| v.read_dev = 0.4))
            .map_err(|e| e.to_string())?
            .metrics,
    );
    let offline = norm(
        &evaluate(prep, cfg.mode, &with(&|v| v.write_dev_offline = 0.27))
            .map_err(|e| e.to_string())?
            .metrics,
    );
    let online = |dev: f64| -> Result<f64, String> {
        let mut c = cfg.clone();
        c.variability.write_dev_online = dev;
        let p = prepare(&c).map_err(|e| e.to_string())?;
        Ok(norm(
            &evaluate(&p, c.mode, &cfg.variability)
                .map_err(|e| e.to_string())?
                .metrics,
        ))
    };
    let on_small = online(0.03)?;
    let on_large = online(0.30)?;
    let within = |r: f64| r >= 0.9;
    // degradation has to exceed what the small-deviation run already lost
    let degraded = on_large < on_small - 0.02;
    check(
        within(read) && within(offline) && within(on_small) && degraded,
        format!(
            "normalized accuracy: read 0.40 {read:.3}, offline 0.27 {offline:.3}, online 0.03 {on_small:.3}, online 0.30 {on_large:.3}"
        ),
    )
}

fn spike_budget(shared: &Shared) -> Outcome {
    let mut rows = Vec::new();
    let mut ok = true;
    if let Some((_, m)) = &shared.mnist {
        ok &= (7.0..=11.0).contains(&m.mean_spikes);
        rows.push(format!("mnist {:.2}", m.mean_spikes));
    }
    if let Some(m) = &shared.cifar {
        ok &= (7.0..=11.0).contains(&m.mean_spikes);
        rows.push(format!("cifar {:.2}", m.mean_spikes));
    }
    if rows.is_empty() {
        return Err("no trained networks available".into());
    }
    check(ok, format!("mean spikes per exposure: {}", rows.join(", ")))
}

fn compression() -> Outcome {
    let mut cfg = load_config("cifar8.json")?;
    cfg.name = "cifar-patches".into();
    cfg.dataset = DatasetSpec {
        kind: DatasetKind::Cifar10,
        scale: None,
        patch: Some(4),
        train: 500,
        test: 50,
        ..cfg.dataset
    };
    cfg.network.n_neurons = 96;
    cfg.network.target_spikes = 10.0;
    let prep = prepare(&cfg).map_err(|e| e.to_string())?;
    let m = evaluate(&prep, RunMode::Inhibited, &cfg.variability)
        .map_err(|e| e.to_string())?
        .metrics;
    check(
        m.mean_compression >= 0.88,
        format!(
            "{} patches, mean compression {:.3}, {:.2} spikes, {:.2} active",
            m.n_units, m.mean_compression, m.mean_spikes, m.mean_active
        ),
    )
}

fn main() -> ExitCode {
    if std::env::var_os(sslca::experiment::DATA_DIR_ENV).is_none() {
        std::env::set_var(sslca::experiment::DATA_DIR_ENV, workspace().join("data"));
    }
    let mut shared = Shared::default();
    let criteria: Vec<(&str, Box<dyn FnMut(&mut Shared) -> Outcome>)> = vec![
        ("calibration table", Box::new(|_| calibration_table())),
        ("engine vs dense integrator", Box::new(|_| engine_oracle())),
        ("LCA fixed point", Box::new(|_| lca_fixed_point())),
        ("two-neuron scenario", Box::new(|_| two_neuron_scenario())),
        ("MNIST accuracy", Box::new(mnist_accuracy)),
        ("CIFAR energy", Box::new(cifar_energy)),
        ("inhibition benefit", Box::new(|_| inhibition_benefit())),
        ("variability retention", Box::new(variability)),
        ("spike budget", Box::new(|s| spike_budget(s))),
        ("compression", Box::new(|_| compression())),
    ];
    let mut failed = 0;
    for (k, (name, mut f)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let out = f(&mut shared);
        let secs = start.elapsed().as_secs_f64();
        match out {
            Ok(d) => println!("PASS {:>2} {name}: {d} [{secs:.1} s]", k + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d} [{secs:.1} s]", k + 1);
            }
        }
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
