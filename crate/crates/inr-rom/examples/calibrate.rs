// Scratch calibration for the scaled experiment (temporary).

use inr_rom::decoder::DecoderConfig;
use inr_rom::fom::{generate_dataset, FomConfig, GridSpec};
use inr_rom::latent::ModelKind;
use inr_rom::train::{evaluate, train, TrainConfig};
use std::time::Instant;

fn main() {
    let fom = FomConfig {
        grid: GridSpec::square(32),
        dt: 1e-3,
        t_final: 2.0,
        snapshot_stride: 80,
        ..FomConfig::default()
    };
    let train_mu = [30.0, 100.0, 1000.0, 10000.0];
    let test_mu = [300.0, 20000.0];
    let all: Vec<f64> = train_mu.iter().chain(test_mu.iter()).copied().collect();
    let t0 = Instant::now();
    let ds = generate_dataset(&fom, &all).unwrap();
    println!(
        "dataset: {} snapshots, fom seconds per mu: {:?} (total {:.1}s)",
        ds.n_snapshots(),
        ds.fom_seconds,
        t0.elapsed().as_secs_f64()
    );

    if std::env::args().nth(1).as_deref() == Some("spread") {
        // Best achievable NODE error: one shared trajectory (the pointwise
        // mean) against each ground truth.
        let n = ds.n_snapshots();
        let len = ds.grid().n_nodes();
        let mut mean = vec![0.0; n * 2 * len];
        for p in 0..train_mu.len() {
            for s in 0..n {
                for c in 0..2 {
                    let f = ds.field(p, s, c);
                    for (i, v) in f.data().iter().enumerate() {
                        mean[(s * 2 + c) * len + i] += v / train_mu.len() as f64;
                    }
                }
            }
        }
        for p in 0..train_mu.len() {
            let mut num = 0.0;
            let mut den = 0.0;
            for s in 0..n {
                for c in 0..2 {
                    let f = ds.field(p, s, c);
                    for (i, v) in f.data().iter().enumerate() {
                        let d = v - mean[(s * 2 + c) * len + i];
                        num += d * d;
                        den += v * v;
                    }
                }
            }
            println!("mu {:7}: dist-to-mean rel {:.3e}", train_mu[p], (num / den).sqrt());
        }
        return;
    }

    let epochs: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(300);
    let kind = match std::env::args().nth(2).as_deref() {
        Some("node") => ModelKind::Node,
        Some("hyper") => ModelKind::HyperPnode,
        _ => ModelKind::Pnode,
    };
    let pi = std::env::args().nth(3).as_deref() == Some("pi");

    let cfg = TrainConfig {
        model: kind,
        physics_informed: pi,
        epochs,
        seed: 0,
        latent_per_component: 16,
        ode_hidden_layers: 3,
        ode_hidden_units: 64,
        rank: 16,
        hyper_hidden_layers: 1,
        hyper_hidden_units: 50,
        decoder: DecoderConfig {
            depth: 2,
            width: 64,
            omega_max: 32.0,
        },
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let t1 = Instant::now();
    let run = train(&ds, &train_mu, &cfg, |_, _| Ok(())).unwrap();
    let train_secs = t1.elapsed().as_secs_f64();
    println!(
        "train {kind} pi={pi}: {epochs} epochs in {train_secs:.1}s ({:.3} s/epoch)",
        train_secs / epochs as f64
    );
    for r in run.log.iter().step_by((epochs / 20).max(1)) {
        println!(
            "  epoch {:5}  data {:.3e}  res {:.3e}  ic {:.3e}  bc {:.3e}  orth {:.3e}  total {:.3e}",
            r.epoch, r.loss.data, r.loss.residual, r.loss.ic, r.loss.bc, r.loss.orthogonality, r.loss.total
        );
    }
    let m_train = evaluate(&run.model, &ds, &train_mu).unwrap();
    let m_test = evaluate(&run.model, &ds, &test_mu).unwrap();
    println!(
        "train err avg {:.3e} max {:.3e}",
        m_train.avg_rel_error, m_train.max_rel_error
    );
    for m in &m_train.per_mu {
        println!("  mu {:7} rel {:.3e} speedup {:.0}", m.mu, m.rel_error, m.speedup);
    }
    println!(
        "test err avg {:.3e} max {:.3e}",
        m_test.avg_rel_error, m_test.max_rel_error
    );
    for m in &m_test.per_mu {
        println!("  mu {:7} rel {:.3e} speedup {:.0}", m.mu, m.rel_error, m.speedup);
    }
}
