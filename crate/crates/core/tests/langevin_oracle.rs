//! Time-stepped Langevin simulation of one sector during a pulse, with the
//! outgoing light projected onto the falling mode, compared with `SectorMap`.

use epr_core::dynamics::{DynamicsParams, SectorMap};
use epr_core::SqueezeParams;
use nalgebra::{Matrix2, Matrix4, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

fn simulate(z: f64, gs: f64, ge: f64, t_end: f64, atoms: Matrix2<f64>, samples: usize, steps: usize) -> Matrix4<f64> {
    let gamma = gs + ge;
    let h = t_end / steps as f64;
    let mid: Vec<f64> = (0..steps).map(|k| (k as f64 + 0.5) * h).collect();
    let norm = |w: Vec<f64>| {
        let n = (w.iter().map(|x| x * x * h).sum::<f64>()).sqrt();
        w.into_iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let falling = norm(mid.iter().map(|t| (-gamma * t).exp()).collect());
    let chol = atoms.cholesky().unwrap().l();
    let decay = (-gamma * h).exp();
    let gain = -(-gamma * h).exp_m1() / gamma;
    let white = (0.5 / h).sqrt();
    let (cs, ce) = ((2.0 * gs).sqrt(), (2.0 * ge).sqrt());

    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };
    let mut acc = Matrix4::<f64>::zeros();
    for _ in 0..samples {
        let init = chol * nalgebra::Vector2::new(normal(), normal());
        let (mut x, mut p) = (init[0], init[1]);
        let (mut y_out, mut q_out) = (0.0, 0.0);
        for k in 0..steps {
            let (y, q) = (white * normal(), white * normal());
            let (fx, fp) = (white * normal(), white * normal());
            let (x0, p0) = (x, p);
            x = decay * x + gain * (cs * z * q + ce * fx);
            p = decay * p + gain * (-cs / z * y + ce * fp);
            let (xm, pm) = (0.5 * (x0 + x), 0.5 * (p0 + p));
            y_out += falling[k] * (y + cs * z * pm) * h;
            q_out += falling[k] * (q - cs / z * xm) * h;
        }
        let v = Vector4::new(x, p, y_out, q_out);
        acc += v * v.transpose();
    }
    acc / samples as f64
}

fn check(z: f64, gs: f64, ge: f64, t_end: f64) {
    let atoms = Matrix2::new(0.9, 0.2, 0.2, 0.4);
    let params = DynamicsParams::new(gs, ge, SqueezeParams::from_z(z).unwrap()).unwrap();
    let map = SectorMap::for_pulse(&params, t_end).unwrap();
    let mut input = Matrix4::identity() * 0.5;
    input.fixed_view_mut::<2, 2>(0, 0).copy_from(&atoms);
    let expect = map.transfer * input * map.transfer.transpose() + map.noise;

    let n = 20_000;
    let got = simulate(z, gs, ge, t_end, atoms, n, 800);
    for i in 0..4 {
        for j in 0..4 {
            let se = ((expect[(i, i)] * expect[(j, j)] + expect[(i, j)].powi(2)) / n as f64).sqrt();
            let err = (got[(i, j)] - expect[(i, j)]).abs();
            assert!(
                err < 4.5 * se + 2e-3,
                "({i},{j}) z={z} gs={gs} ge={ge} T={t_end}: sim {} map {} (se {se})",
                got[(i, j)],
                expect[(i, j)]
            );
        }
    }
}

#[test]
fn noisy_pulse_matches_langevin_equal_rates() {
    check(2.0, 1.0, 1.0, 1.0);
}

#[test]
fn noisy_pulse_matches_langevin_decay_dominated() {
    check(1.5, 0.5, 2.5, 0.6);
}

#[test]
fn ideal_pulse_matches_langevin() {
    check(2.5, 1.0, 0.0, 0.7);
}
