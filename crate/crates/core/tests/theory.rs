mod common;

use approx::assert_relative_eq;
use common::{canonical_case, random_case, v2, Case};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqloc::analysis::{
    bias_deviated_velocity, bias_linear_lower_bound, bias_lspm_d, check_crlb_ordering, crlb, fim, theoretical_rmse,
};
use seqloc::model::{Variant, VelocityPrior};
use seqloc::Error;

/// Information matrix summed row by row from the model gradient, `[p, b, d, v]`.
fn brute_force_fim(c: &Case, variant: Variant, prior: &VelocityPrior) -> DMatrix<f64> {
    let n = c.truth.dim();
    let cols = match variant {
        Variant::Kvd => n + 2,
        _ => 2 * n + 2,
    };
    let mut f = DMatrix::zeros(cols, cols);
    for (m, &dt) in c.batch.entries().iter().zip(c.batch.dt()) {
        let diff = c.bs.position(m.bs_index) - &c.truth.p - &c.truth.v * dt;
        let e = &diff / diff.norm();
        let mut g = DVector::zeros(cols);
        for a in 0..n {
            g[a] = -e[a];
            if cols > n + 2 {
                g[n + 2 + a] = -e[a] * dt;
            }
        }
        g[n] = 1.0;
        g[n + 1] = dt;
        f += &g * g.transpose() / (m.sigma * m.sigma);
    }
    if variant == Variant::Pvd {
        let mut block = f.view_mut((n + 2, n + 2), (n, n));
        block += prior.information();
    }
    f
}

fn prior_for(c: &Case) -> VelocityPrior {
    VelocityPrior::isotropic(c.truth.v.clone(), 2.0).unwrap()
}

#[test]
fn fisher_information_matches_row_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for k in 0..50 {
        let c = random_case(&mut rng, 2 + k % 2, 20.0, 0.1);
        let prior = prior_for(&c);
        for variant in [Variant::Kvd, Variant::Uvd, Variant::Pvd] {
            let expected = brute_force_fim(&c, variant, &prior);
            match fim(&c.batch, &c.bs, &c.truth, variant, Some(&prior)) {
                Ok(f) => assert_relative_eq!(f.matrix().clone(), expected, max_relative = 1e-10, epsilon = 1e-9),
                Err(Error::RankDeficient { .. }) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }
}

#[test]
fn fisher_information_is_symmetric_positive_definite() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..200 {
        let c = random_case(&mut rng, 2, 20.0, 0.1);
        let prior = prior_for(&c);
        for variant in [Variant::Kvd, Variant::Uvd, Variant::Pvd] {
            let Ok(f) = fim(&c.batch, &c.bs, &c.truth, variant, Some(&prior)) else {
                continue;
            };
            let m = f.matrix();
            assert_eq!(m, &m.transpose());
            assert!(m.clone().symmetric_eigen().eigenvalues.min() > 0.0);
            assert!(crlb(&f).iter().all(|x| *x > 0.0));
        }
    }
}

#[test]
fn crlb_scales_with_noise_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let c = canonical_case(v2(5.0, 0.0), 0.1, &mut rng);
    for variant in [Variant::Kvd, Variant::Uvd] {
        let base = crlb(&fim(&c.batch, &c.bs, &c.truth, variant, None).unwrap());
        for k in [0.1, 3.0, 10.0] {
            let scaled = c.batch.with_scaled_sigma(k).unwrap();
            let bound = crlb(&fim(&scaled, &c.bs, &c.truth, variant, None).unwrap());
            assert_relative_eq!(bound, &base * (k * k), max_relative = 1e-9);
        }
    }
}

#[test]
fn prior_fim_leading_block_is_known_velocity_fim() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let c = canonical_case(v2(3.0, -4.0), 0.1, &mut rng);
    let prior = prior_for(&c);
    let fk = fim(&c.batch, &c.bs, &c.truth, Variant::Kvd, None).unwrap();
    let fp = fim(&c.batch, &c.bs, &c.truth, Variant::Pvd, Some(&prior)).unwrap();
    assert_relative_eq!(
        fp.matrix().view((0, 0), (4, 4)).into_owned(),
        fk.matrix().clone(),
        max_relative = 1e-12,
        epsilon = 1e-12
    );
}

#[test]
fn position_bound_is_translation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let c = random_case(&mut rng, 2, 10.0, 0.1);
    let offset = v2(1234.5, -987.25);
    let bs = c.bs.translated(&offset);
    let mut truth = c.truth.clone();
    truth.p += &offset;
    for variant in [Variant::Kvd, Variant::Uvd] {
        let a = crlb(&fim(&c.batch, &c.bs, &c.truth, variant, None).unwrap());
        let b = crlb(&fim(&c.batch, &bs, &truth, variant, None).unwrap());
        assert_relative_eq!(a.rows(0, 2), b.rows(0, 2), max_relative = 1e-8);
    }
}

#[test]
fn schur_complement_gives_clock_position_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    for _ in 0..20 {
        let c = random_case(&mut rng, 2, 20.0, 0.1);
        let Ok(f) = fim(&c.batch, &c.bs, &c.truth, Variant::Uvd, None) else {
            continue;
        };
        // Independent oracle: split the information into blocks and invert.
        let m = f.matrix();
        let a = m.view((0, 0), (4, 4));
        let b = m.view((0, 4), (4, 2));
        let d = m.view((4, 4), (2, 2));
        let reduced = a - b * d.clone_owned().try_inverse().unwrap() * b.transpose();
        let oracle = reduced.try_inverse().unwrap();
        assert_relative_eq!(f.inverse_block(4), oracle, max_relative = 1e-8);
        assert_relative_eq!(f.schur_inverse_block(4).unwrap(), oracle, max_relative = 1e-8);
    }
}

#[test]
fn kvd_budget_is_crlb_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let c = canonical_case(v2(5.0, 0.0), 0.1, &mut rng);
    let budget = theoretical_rmse(Variant::Kvd, &c.batch, &c.bs, &c.truth, None).unwrap();
    let bound = crlb(&fim(&c.batch, &c.bs, &c.truth, Variant::Kvd, None).unwrap());
    assert_relative_eq!(budget.rmse, (bound[0] + bound[1]).sqrt(), max_relative = 1e-12);
    let same = bias_deviated_velocity(&c.batch, &c.bs, &c.truth, &c.truth.v).unwrap();
    assert_eq!(same.bias.norm(), 0.0);
    assert_eq!(same.rmse, budget.rmse);
}

/// Bias from the explicit normal equations with the range mismatch written out.
fn bias_oracle(c: &Case, assumed: &DVector<f64>) -> DVector<f64> {
    let m = c.batch.len();
    let mut g = DMatrix::zeros(m, 4);
    let mut r = DVector::zeros(m);
    let mut w = DMatrix::zeros(m, m);
    for (i, (e, &dt)) in c.batch.entries().iter().zip(c.batch.dt()).enumerate() {
        let q = c.bs.position(e.bs_index);
        let true_diff = q - &c.truth.p - &c.truth.v * dt;
        let los = &true_diff / true_diff.norm();
        g[(i, 0)] = -los[0];
        g[(i, 1)] = -los[1];
        g[(i, 2)] = 1.0;
        g[(i, 3)] = dt;
        r[i] = true_diff.norm() - (q - &c.truth.p - assumed * dt).norm();
        w[(i, i)] = 1.0 / (e.sigma * e.sigma);
    }
    let normal = g.transpose() * &w * &g;
    let x = normal.lu().solve(&(g.transpose() * &w * r)).unwrap();
    x.rows(0, 2).into_owned()
}

#[test]
fn deviated_velocity_bias_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let c = canonical_case(v2(5.0, 0.0), 0.1, &mut rng);
    for dv in [v2(0.5, 0.0), v2(2.0, 0.0), v2(-1.0, 3.0)] {
        let assumed = &c.truth.v + dv;
        let budget = bias_deviated_velocity(&c.batch, &c.bs, &c.truth, &assumed).unwrap();
        assert_relative_eq!(budget.bias, bias_oracle(&c, &assumed), max_relative = 1e-9);
    }
    let d = bias_lspm_d(&c.batch, &c.bs, &c.truth).unwrap();
    assert_relative_eq!(d.bias, bias_oracle(&c, &v2(0.0, 0.0)), max_relative = 1e-9);
}

#[test]
fn drift_only_error_grows_with_speed() {
    let mut last = 0.0;
    for speed in [0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0] {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let c = canonical_case(v2(speed, 0.0), 0.1, &mut rng);
        let d = bias_lspm_d(&c.batch, &c.bs, &c.truth).unwrap();
        let k = theoretical_rmse(Variant::Kvd, &c.batch, &c.bs, &c.truth, None).unwrap();
        if speed == 0.0 {
            assert_eq!(d.bias.norm(), 0.0);
            assert_eq!(d.rmse, k.rmse);
        }
        assert!(d.rmse >= last);
        last = d.rmse;
    }
}

#[test]
fn crlb_ordering_holds_on_random_geometries() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut checked = 0;
    while checked < 1000 {
        let c = random_case(&mut rng, 2, 20.0, 0.1);
        match check_crlb_ordering(&c.batch, &c.bs, &c.truth, &prior_for(&c)) {
            Ok(o) => {
                assert!(o.holds, "{o:?}");
                assert!(o.trace_kvd <= o.trace_pvd && o.trace_pvd <= o.trace_uvd);
                checked += 1;
            }
            Err(Error::RankDeficient { .. }) => {}
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn tight_prior_closes_gap_to_known_velocity() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let c = canonical_case(v2(5.0, 0.0), 0.1, &mut rng);
    let tight = VelocityPrior::new(c.truth.v.clone(), DMatrix::identity(2, 2) * 1e-12).unwrap();
    let o = check_crlb_ordering(&c.batch, &c.bs, &c.truth, &tight).unwrap();
    assert!((o.trace_pvd - o.trace_kvd).abs() < 1e-6);
}

#[test]
fn linear_bias_bound_on_canonical_square() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let c = canonical_case(v2(5.0, 0.0), 0.1, &mut rng);
    let devs: Vec<_> = [0.0, 0.1, 0.2, 0.5].iter().map(|x| v2(*x, 0.0)).collect();
    let bound = bias_linear_lower_bound(&c.batch, &c.bs, &c.truth, &devs).unwrap();
    assert!(bound.alpha > 0.0);
    assert_eq!(bound.checks[0].bias_sq, 0.0);
    assert_eq!(bound.checks[0].bound, 0.0);
    assert!(bound.all_hold(), "{:?}", bound.checks);
}

#[test]
fn bias_is_linear_in_small_deviations() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..100 {
        let c = random_case(&mut rng, 2, 20.0, 0.1);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let dir = v2(angle.cos(), angle.sin());
        let devs: Vec<_> = [0.25, 0.5, 1.0].iter().map(|s| &dir * *s).collect();
        let Ok(bound) = bias_linear_lower_bound(&c.batch, &c.bs, &c.truth, &devs) else {
            continue;
        };
        assert!(bound.all_hold(), "{:?}", bound.checks);
        let ratio = (bound.checks[2].bias_sq / bound.checks[1].bias_sq).sqrt();
        assert!((1.9..=2.1).contains(&ratio), "doubling ratio {ratio}");
    }
}

#[test]
fn bias_map_is_exact_first_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for _ in 0..20 {
        let c = random_case(&mut rng, 2, 20.0, 0.1);
        let dv = v2(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 1e-4;
        let Ok(bound) = bias_linear_lower_bound(&c.batch, &c.bs, &c.truth, std::slice::from_ref(&dv)) else {
            continue;
        };
        let quadratic = (dv.transpose() * &bound.s * &dv)[0];
        assert_relative_eq!(bound.checks[0].bias_sq, quadratic, max_relative = 1e-3);
    }
}
