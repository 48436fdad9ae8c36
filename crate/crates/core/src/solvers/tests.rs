use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::autodiff::Tape;
use crate::dictionary::{build_dct_dictionary, Dictionary};
use crate::gradcheck;
use crate::tensor::Tensor;

pub(crate) fn random_dictionary(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Dictionary {
    let mut a: Vec<f64> = (0..n * k).map(|_| rng.sample(StandardNormal)).collect();
    for j in 0..k {
        let norm = (0..n).map(|i| a[i * k + j].powi(2)).sum::<f64>().sqrt();
        (0..n).for_each(|i| a[i * k + j] /= norm);
    }
    Dictionary::from_atoms(Tensor::new(&[n, k], a).unwrap()).unwrap()
}

fn random_signal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

// Independent two-term recomputation: explicit column loop for Dz and
// separately coded norms.
fn energy_oracle(x: &[f64], d: &Dictionary, z: &[f64], alpha: f64) -> f64 {
    let (n, k) = (d.dim(), d.atom_count());
    let a = d.atoms().data();
    let mut resid = x.to_vec();
    for j in 0..k {
        for i in 0..n {
            resid[i] -= a[i * k + j] * z[j];
        }
    }
    let l2sq = resid.iter().fold(0.0, |acc, r| acc + r * r);
    let l1 = z.iter().fold(0.0, |acc, v| acc + v.abs());
    0.5 * l2sq + alpha * l1
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

#[test]
fn energy_examples() {
    let d = build_dct_dictionary(16, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_signal(&mut rng, 16);
    let p = SparseProblem::new(&x, &d, 0.3).unwrap();
    let half_sq = 0.5 * x.iter().map(|v| v * v).sum::<f64>();
    assert!((energy(&p, &[0.0; 16]).unwrap() - half_sq).abs() < 1e-12);

    let mut e1 = vec![0.0; 16];
    e1[0] = 1.0;
    let x = d.synthesize(&e1);
    let p = SparseProblem::new(&x, &d, 0.3).unwrap();
    assert!((energy(&p, &e1).unwrap() - 0.3).abs() < 1e-12);

    assert!(matches!(energy(&p, &[0.0; 3]), Err(Error::Dimension { .. })));
}

#[test]
fn energy_matches_independent_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = random_dictionary(&mut rng, 12, 30);
    for _ in 0..20 {
        let x = random_signal(&mut rng, 12);
        let z = random_signal(&mut rng, 30);
        let alpha = rng.random_range(0.0..2.0);
        let p = SparseProblem::new(&x, &d, alpha).unwrap();
        let want = energy_oracle(&x, &d, &z, alpha);
        assert!((energy(&p, &z).unwrap() - want).abs() <= 1e-10);
    }
}

#[test]
fn problem_validation() {
    let d = build_dct_dictionary(16, 16).unwrap();
    assert!(SparseProblem::new(&[0.0; 15], &d, 0.1).is_err());
    assert!(SparseProblem::new(&[0.0; 16], &d, -0.1).is_err());
    let mut x = vec![0.0; 16];
    x[3] = f64::NAN;
    assert!(SparseProblem::new(&x, &d, 0.1).is_err());
}

#[test]
fn ista_orthonormal_closed_form() {
    let d = build_dct_dictionary(16, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for &alpha in &[0.01, 0.1, 0.5] {
        let x: Vec<f64> = random_signal(&mut rng, 16);
        let p = SparseProblem::new(&x, &d, alpha).unwrap();
        let code = ista_solve(&p, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        let closed: Vec<f64> = d.analyze(&x).iter().map(|&v| soft(v, alpha)).collect();
        for (a, b) in code.z.iter().zip(&closed) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
        assert!((code.final_energy - energy(&p, &code.z).unwrap()).abs() <= 1e-8);
    }
}

#[test]
fn ista_full_shrinkage_and_least_squares() {
    let d = build_dct_dictionary(16, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_signal(&mut rng, 16);
    let big = d.analyze(&x).iter().fold(0.0f64, |m, v| m.max(v.abs())) + 0.1;
    let p = SparseProblem::new(&x, &d, big).unwrap();
    let code = ista_solve(&p, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
    assert!(code.z.iter().all(|&v| v == 0.0));

    let p = SparseProblem::new(&x, &d, 0.0).unwrap();
    for code in [
        ista_solve(&p, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap(),
        fista_solve(&p, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap(),
    ] {
        for (a, b) in code.z.iter().zip(d.analyze(&x)) {
            assert!((a - b).abs() <= 1e-6);
        }
        assert!(code.final_energy < 1e-10);
    }
}

#[test]
fn solver_budget_validation() {
    let d = build_dct_dictionary(16, 16).unwrap();
    let x = vec![0.1; 16];
    let p = SparseProblem::new(&x, &d, 0.1).unwrap();
    assert!(ista_solve(&p, 0, 1e-8).is_err());
    assert!(fista_solve(&p, 10, 0.0).is_err());
}

#[test]
fn ista_divergence_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = random_dictionary(&mut rng, 16, 40).with_lipschitz_bound(0.1);
    let x = random_signal(&mut rng, 16);
    let p = SparseProblem::new(&x, &d, 0.01).unwrap();
    match ista_solve(&p, 100, 1e-8) {
        Err(Error::Numerical { detail, .. }) => assert!(detail.contains("iteration")),
        other => panic!("expected divergence, got {other:?}"),
    }
    assert!(fista_solve(&p, 100, 1e-8).is_err());
}

#[test]
fn ista_energy_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10 {
        let d = random_dictionary(&mut rng, 16, 48);
        let x = random_signal(&mut rng, 16);
        let p = SparseProblem::new(&x, &d, 0.1).unwrap();
        let op = IstaOperator::new(&p);
        let drive = op.drive(&x);
        let mut z = vec![0.0; 48];
        let mut e = energy(&p, &z).unwrap();
        for _ in 0..200 {
            z = op.step(&drive, &z);
            let next = energy(&p, &z).unwrap();
            assert!(next <= e + 1e-10);
            e = next;
        }
    }
}

#[test]
fn fista_matches_ista_on_basic_cases() {
    let d = build_dct_dictionary(16, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_signal(&mut rng, 16);
    for alpha in [0.0, 0.1, 10.0] {
        let p = SparseProblem::new(&x, &d, alpha).unwrap();
        let a = ista_solve(&p, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        let b = fista_solve(&p, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        for (u, v) in a.z.iter().zip(&b.z) {
            assert!((u - v).abs() <= 1e-6);
        }
    }
}

#[test]
fn fista_accelerates_over_ista() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let d = random_dictionary(&mut rng, 32, 64);
    let x = random_signal(&mut rng, 32);
    let p = SparseProblem::new(&x, &d, 0.05).unwrap();
    let ista = ista_solve(&p, 500, 1e-300).unwrap();
    assert_eq!(ista.iterations_run, 500);
    let reached = (1..=150).any(|it| {
        let f = fista_solve(&p, it, 1e-300).unwrap();
        f.final_energy <= ista.final_energy
    });
    assert!(reached, "FISTA did not reach ISTA's 500-step energy within 150 steps");

    let fista = fista_solve(&p, 500, 1e-300).unwrap();
    assert!(fista.final_energy <= ista.final_energy + 1e-8);
}

#[test]
fn ista_and_fista_agree_on_random_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..50 {
        let n = [8, 16, 25, 32][case % 4];
        let k = rng.random_range(n..=64);
        let alpha = [0.01, 0.1, 1.0][case % 3];
        let d = random_dictionary(&mut rng, n, k);
        let x = random_signal(&mut rng, n);
        let p = SparseProblem::new(&x, &d, alpha).unwrap();
        // tol 1e-8 stops ISTA up to ~1e-3 short of the optimum on poorly
        // conditioned overcomplete problems; agreement needs a tighter stop
        let a = ista_solve(&p, 1_000_000, 1e-12).unwrap();
        let b = fista_solve(&p, 1_000_000, 1e-12).unwrap();
        let gap = a.z.iter().zip(&b.z).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        assert!(gap <= 1e-5, "case {case} (n={n}, k={k}, alpha={alpha}): gap {gap:e}");
    }
}

#[test]
fn zero_entries_lie_in_the_dead_zone() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let d = random_dictionary(&mut rng, 16, 40);
    let x = random_signal(&mut rng, 16);
    let p = SparseProblem::new(&x, &d, 0.2).unwrap();
    let op = IstaOperator::new(&p);
    let drive = op.drive(&x);
    let code = ista_solve(&p, 10_000, 1e-10).unwrap();
    // the final step's input is the previous iterate, which equals z at convergence
    let pre = op.pre_threshold(&drive, &code.z);
    for (zi, vi) in code.z.iter().zip(&pre) {
        if *zi == 0.0 {
            assert!(vi.abs() <= op.theta + 1e-9);
        }
    }

    let params = lista_init_from_dictionary::<f64>(&d, 0.2, 4).unwrap();
    let z = lista_forward(&params, &x).unwrap();
    let prev = lista_forward(
        &ListaParams {
            steps: 3,
            ..params.clone()
        },
        &x,
    )
    .unwrap();
    let pre = op.pre_threshold(&drive, &prev);
    for (zi, vi) in z.iter().zip(&pre) {
        if *zi == 0.0 {
            assert!(vi.abs() <= op.theta + 1e-12);
        }
    }
}

#[test]
fn lista_init_examples() {
    let d = build_dct_dictionary(16, 16).unwrap();
    let p = lista_init_from_dictionary::<f64>(&d, 1.0, 4).unwrap();
    // L = 1.01 here, so S = (1 - 1/1.01)·I
    let resid = 1.0 - 1.0 / d.lipschitz_bound();
    for (i, &v) in p.s_matrix.data().iter().enumerate() {
        let want = if i / 16 == i % 16 { resid } else { 0.0 };
        assert!((v - want).abs() <= 1e-9);
    }

    let d = build_dct_dictionary(16, 64).unwrap();
    let p = lista_init_from_dictionary::<f64>(&d, 0.7, 2).unwrap();
    let l = d.lipschitz_bound();
    let wd = p.w_e.matmul(d.atoms()).unwrap();
    let gram = d.gram();
    for (a, b) in wd.data().iter().zip(gram.data()) {
        assert!((a * l - b).abs() <= 1e-10);
    }
    assert!(p.theta.data().iter().all(|&t| (t - 0.7 / l).abs() < 1e-15));
    assert!(lista_init_from_dictionary::<f64>(&d, 0.7, 0).is_err());
}

#[test]
fn lista_full_scale_configuration_shapes() {
    let d = build_dct_dictionary(256, 512).unwrap();
    let p = lista_init_from_dictionary::<f32>(&d, 1.0, 16).unwrap();
    assert_eq!(p.w_e.shape(), &[512, 256]);
    assert_eq!(p.s_matrix.shape(), &[512, 512]);
    assert_eq!(p.theta.shape(), &[512]);
    assert_eq!(p.steps, 16);
}

#[test]
fn lista_single_step_and_zero_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = random_dictionary(&mut rng, 9, 20);
    let mut p = lista_init_from_dictionary::<f64>(&d, 0.3, 1).unwrap();
    // perturb so the check is not tied to the initialisation
    p.w_e
        .data_mut()
        .iter_mut()
        .for_each(|v| *v += rng.random_range(-0.1..0.1));
    let x = random_signal(&mut rng, 9);
    let z = lista_forward(&p, &x).unwrap();
    for (j, zj) in z.iter().enumerate() {
        let pre: f64 = (0..9).map(|i| p.w_e.data()[j * 9 + i] * x[i]).sum();
        assert!((zj - soft(pre, p.theta.data()[j])).abs() <= 1e-14);
    }

    p.steps = 5;
    p.s_matrix
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-1.0..1.0));
    assert!(lista_forward(&p, &[0.0; 9]).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn lista_at_init_equals_ista_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let d = random_dictionary(&mut rng, 16, 48);
    for steps in [1, 4, 16] {
        let params = lista_init_from_dictionary::<f64>(&d, 0.1, steps).unwrap();
        for _ in 0..20 {
            let x = random_signal(&mut rng, 16);
            let p = SparseProblem::new(&x, &d, 0.1).unwrap();
            let want = ista_steps(&p, steps);
            let got = lista_forward(&params, &x).unwrap();
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12, "steps {steps}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn lista_batch_rows_are_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let d = random_dictionary(&mut rng, 16, 32);
    let params = lista_init_from_dictionary::<f64>(&d, 0.05, 6).unwrap();
    let rows: Vec<Vec<f64>> = (0..3).map(|_| random_signal(&mut rng, 16)).collect();
    let xs = Tensor::new(&[3, 16], rows.concat()).unwrap();
    let batch = lista_batch_forward(&params, &xs).unwrap();
    for (r, row) in rows.iter().enumerate() {
        let single = lista_forward(&params, row).unwrap();
        let got = &batch.data()[r * 32..(r + 1) * 32];
        assert!(single.iter().zip(got).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    let one = Tensor::new(&[1, 16], rows[0].clone()).unwrap();
    assert_eq!(
        lista_batch_forward(&params, &one).unwrap().data(),
        lista_forward(&params, &rows[0]).unwrap().as_slice()
    );

    let perm = [2usize, 0, 1];
    let permuted: Vec<f64> = perm.iter().flat_map(|&i| rows[i].clone()).collect();
    let out = lista_batch_forward(&params, &Tensor::new(&[3, 16], permuted).unwrap()).unwrap();
    for (dst, &src) in perm.iter().enumerate() {
        assert_eq!(
            &out.data()[dst * 32..(dst + 1) * 32],
            &batch.data()[src * 32..(src + 1) * 32]
        );
    }
}

#[test]
fn lista_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let d = random_dictionary(&mut rng, 8, 16);
    for steps in [1, 4, 16] {
        let params = lista_init_from_dictionary::<f64>(&d, 0.05, steps).unwrap();
        let xs = Tensor::from_fn(&[3, 8], |_| rng.random_range(-1.0..1.0));
        let target = Tensor::from_fn(&[3, 16], |_| rng.random_range(-0.5..0.5));
        let inputs = [params.w_e.clone(), params.s_matrix.clone(), params.theta.clone(), xs];
        let res = gradcheck::check(&inputs, 1e-6, |tape: &mut Tape<f64>, v| {
            let vars = ListaVars {
                w_e: v[0],
                s_matrix: v[1],
                theta: v[2],
                steps,
            };
            let z = vars.forward(tape, v[3])?;
            let t = tape.leaf(&target);
            let diff = tape.sub(z, t)?;
            tape.sum_squares(diff)
        })
        .unwrap();
        assert!(res.max_rel_error() <= 1e-4, "steps {steps}: {res:?}");
    }
}

#[test]
fn clamp_theta_projects_to_nonnegative() {
    let d = build_dct_dictionary(16, 16).unwrap();
    let mut p = lista_init_from_dictionary::<f32>(&d, 1.0, 2).unwrap();
    p.theta.data_mut()[3] = -0.5;
    p.clamp_theta();
    assert!(p.theta.data().iter().all(|&t| t >= 0.0));
    assert_eq!(p.theta.data()[3], 0.0);
}
