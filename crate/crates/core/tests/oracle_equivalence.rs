mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oracles::{dense_simulate, lasso_cd};
use sslca::calibration::{calibrate, CalibrationSpec};
use sslca::crossbar::{Crossbar, DeviceModel};
use sslca::engine::{simulate, Mode, NodeKind, RunOptions};
use sslca::reference::{lca_encode, threshold, Dictionary, LcaConfig};
use sslca::spikegen::generate_all;
use sslca::Matrix;

/// Largest voltage gap between the engine and the dense integrator, away from
/// the instants where a reset makes the two grids disagree by construction.
fn compare(seed: u64, mode: Mode) -> (f64, Vec<u32>, Vec<u32>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = (16, 8);
    let w = Matrix::from_fn(n, m, |_, _| rng.gen_range(0.0..1.0));
    let xb = Crossbar::from_weights(&w, DeviceModel::default()).unwrap();
    let p = calibrate(&CalibrationSpec {
        n_inputs: n,
        n_neurons: m,
        rf_avg: 0.5,
        ..CalibrationSpec::default()
    })
    .unwrap();
    let x: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    let trains = generate_all(&x, p.k_max, p.bias, p.input_spike_width, p.exposure, &mut rng);
    let opts = RunOptions {
        record_trace: true,
        ..RunOptions::with_mode(mode)
    };
    let ev = simulate(xb.conductance(), &p, &trains, &opts, &mut rng).unwrap();
    let trace = ev.trace.unwrap();

    let dt = p.t_fire / 1e4;
    let dense = dense_simulate(xb.conductance(), &p, &trains, mode, dt, 25);
    let guard = 3.0 * dt;
    let near_spike = |t: f64| {
        ev.spikes
            .iter()
            .map(|s| s.0)
            .chain(dense.spikes.iter().copied())
            .any(|ts| (t - ts).abs() < guard)
    };
    let mut worst = 0.0f64;
    for (t, v, vc) in &dense.samples {
        if near_spike(*t) {
            continue;
        }
        for j in 0..m {
            worst = worst.max((trace.voltage(NodeKind::Neuron, j, *t).unwrap() - v[j]).abs());
        }
        if mode == Mode::Inhibited {
            for i in 0..n {
                worst = worst.max((trace.voltage(NodeKind::Inhib, i, *t).unwrap() - vc[i]).abs());
            }
        }
    }
    (worst, ev.code.counts, dense.counts, p.v_fire)
}

#[test]
fn event_driven_matches_dense_integration() {
    for seed in 0..20 {
        for mode in [Mode::Inhibited, Mode::Uninhibited] {
            let (worst, got, want, v_fire) = compare(seed, mode);
            assert_eq!(got, want, "seed {seed} {mode:?}");
            assert!(
                worst < 0.01 * v_fire,
                "seed {seed} {mode:?}: {worst:e} V vs {v_fire:e} V"
            );
        }
    }
}

#[test]
fn orthonormal_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        // signed permutation of the identity
        let n = 6;
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let phi = Matrix::from_fn(n, n, |i, j| {
            if perm[j] == i {
                if rng.gen() {
                    1.0
                } else {
                    -1.0
                }
            } else {
                0.0
            }
        });
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cfg = LcaConfig {
            lambda: 0.2,
            non_negative: false,
            tol: 1e-10,
            max_steps: 100_000,
            ..LcaConfig::default()
        };
        let dict = Dictionary::new(phi.clone()).unwrap();
        let a = lca_encode(&dict, &s, &cfg).unwrap();
        let b = phi.tr_mul_vec(&s);
        for k in 0..n {
            assert!((a[k] - threshold(b[k], cfg.lambda, false)).abs() < 1e-6);
        }
    }
}

#[test]
fn random_instances_match_coordinate_descent() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..20 {
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
            let a = lca_encode(&Dictionary::new(phi.clone()).unwrap(), &s, &cfg).unwrap();
            let want = lasso_cd(&phi, &s, cfg.lambda, non_negative, 100_000);
            for k in 0..3 {
                assert!((a[k] - want[k]).abs() < 1e-4, "case {case}: {a:?} vs {want:?}");
            }
        }
    }
}

/// Peak capacitor voltage once a charge/discharge cycle has settled, found by
/// iterating the cycle rather than summing it.
fn settled_peak(r_inhib: f64, p: &sslca::calibration::NetworkParams) -> f64 {
    let k_i = p.k_max * p.rf_avg;
    let mut v = 0.0;
    let mut peak = 0.0;
    for _ in 0..100_000 {
        v = p.v_cc + (v - p.v_cc) * (-p.t_spike / (p.r_cb * p.c_inhib)).exp();
        let next = v * (-p.t_collect * k_i / (r_inhib * p.c_inhib)).exp();
        if (v - peak).abs() < 1e-15 {
            break;
        }
        peak = v;
        v = next;
    }
    peak
}

#[test]
fn inhibition_resistor_matches_grid_scan() {
    use sslca::calibration::{InhibCapacitor, REFERENCE_ROWS};
    for row in REFERENCE_ROWS {
        for c_inhib in [InhibCapacitor::MatchNeuron, InhibCapacitor::UnitChargeTime] {
            let p = calibrate(&CalibrationSpec { c_inhib, ..row.spec() }).unwrap();
            let k_i = p.k_max * p.rf_avg;
            // still above v_cc/2 when the next collection window starts
            let excess = |r: f64| {
                let peak = settled_peak(r, &p);
                (peak * (-p.t_inhib * k_i / (r * p.c_inhib)).exp() / (0.5 * p.v_cc)).ln()
            };
            let grid: Vec<f64> = (0..=4000).map(|k| 10f64.powf(2.0 + 10.0 * k as f64 / 4000.0)).collect();
            let root = grid
                .windows(2)
                .find_map(|w| {
                    let (e0, e1) = (excess(w[0]), excess(w[1]));
                    (e0 < 0.0 && e1 >= 0.0).then(|| {
                        let (l0, l1) = (w[0].ln(), w[1].ln());
                        (l0 + (l1 - l0) * e0 / (e0 - e1)).exp()
                    })
                })
                .expect("sign change on the grid");
            let rel = (root - p.r_inhib).abs() / p.r_inhib;
            assert!(rel < 1e-3, "row {} {c_inhib:?}: {root:e} vs {:e}", row.row, p.r_inhib);
        }
    }
}
