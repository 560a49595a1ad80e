use dicke::expm::{dense_propagator, expm_multiply, KrylovOptions};
use dicke::hilbert::{FockSpace, ProductSpace, SpinSector};
use dicke::lindblad_oracle::{evolve_lindblad, initial_state, uniform_times, FullSpace, LindbladOptions};
use dicke::model::{dicke_hamiltonian, parity_operator, DickeConfig, RampProfile};
use dicke::propagate::{run_quench, QuenchSetup};
use dicke::sparse::{norm, normalize, CsrMatrix, C64};
use nalgebra::DVector;
use proptest::prelude::*;

fn state(dim: usize, seed: &[f64]) -> Vec<C64> {
    let mut v: Vec<C64> = (0..dim)
        .map(|k| {
            let a = seed[k % seed.len()] + 0.37 * k as f64;
            C64::new(a.sin(), (1.3 * a).cos())
        })
        .collect();
    normalize(&mut v);
    v
}

fn config(n: usize, g0: f64, b: f64) -> DickeConfig {
    let mut c = DickeConfig::ion_trap_with_ramp(n, RampProfile::Constant { b });
    c.g0 = g0;
    c.nbar = 0.0;
    c
}

fn max_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn krylov_preserves_norm(
        n in 1usize..7, n_max in 2usize..14, g0 in 0.0f64..20.0, b in 0.0f64..40.0,
        t in 0.0f64..0.5, seed in prop::collection::vec(-3.0f64..3.0, 4),
    ) {
        let space = ProductSpace::new(n, n_max).unwrap();
        let h = dicke_hamiltonian(&space, &config(n, g0, b), b).unwrap();
        let v = state(space.dim(), &seed);
        let (w, _) = expm_multiply(&h, &v, t, &KrylovOptions::default()).unwrap();
        prop_assert!((norm(&w) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn krylov_matches_dense_propagator(
        n in 1usize..8, n_max in 2usize..30, g0 in 0.0f64..20.0, b in 0.0f64..40.0,
        t in 0.0f64..0.3, seed in prop::collection::vec(-3.0f64..3.0, 4),
    ) {
        let space = ProductSpace::new(n, n_max).unwrap();
        prop_assume!(space.dim() <= 500);
        let h = dicke_hamiltonian(&space, &config(n, g0, b), b).unwrap();
        let v = state(space.dim(), &seed);
        let (w, _) = expm_multiply(&h, &v, t, &KrylovOptions::default()).unwrap();
        let u = dense_propagator(&h.to_dense(), t);
        let exact = &u * DVector::from_column_slice(&v);
        prop_assert!(max_diff(&w, exact.as_slice()) < 1e-9);
    }

    #[test]
    fn hamiltonian_commutes_with_parity(
        n in 1usize..9, n_max in 1usize..12, g0 in 0.0f64..20.0, b in 0.0f64..40.0,
    ) {
        let space = ProductSpace::new(n, n_max).unwrap();
        let h = dicke_hamiltonian(&space, &config(n, g0, b), b).unwrap();
        let p = parity_operator(&space);
        prop_assert!(CsrMatrix::commutator(&h, &p).unwrap().max_abs() < 1e-12);
        prop_assert!(h.hermiticity_defect() < 1e-14);
    }

    #[test]
    fn spin_algebra(n in 1usize..40) {
        let s = SpinSector::new(n).unwrap();
        let i = C64::new(0.0, 1.0);
        let check = |a: &CsrMatrix, b: &CsrMatrix, c: &CsrMatrix| {
            CsrMatrix::commutator(a, b).unwrap().add_scaled(-i, c).unwrap().max_abs()
        };
        prop_assert!(check(&s.sx, &s.sy, &s.sz) < 1e-10);
        prop_assert!(check(&s.sy, &s.sz, &s.sx) < 1e-10);
        prop_assert!(check(&s.sz, &s.sx, &s.sy) < 1e-10);
        let casimir = s.sx.matmul(&s.sx).unwrap()
            .add_scaled(C64::new(1.0, 0.0), &s.sy.matmul(&s.sy).unwrap()).unwrap()
            .add_scaled(C64::new(1.0, 0.0), &s.sz.matmul(&s.sz).unwrap()).unwrap();
        let j = s.spin();
        let expected = CsrMatrix::identity(s.dim()).scale(C64::new(j * (j + 1.0), 0.0));
        prop_assert!(casimir.add_scaled(C64::new(-1.0, 0.0), &expected).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn boson_commutator_defect_is_confined(n_max in 1usize..60) {
        let f = FockSpace::new(n_max).unwrap();
        let comm = CsrMatrix::commutator(&f.a, &f.adag).unwrap()
            .add_scaled(C64::new(-1.0, 0.0), &CsrMatrix::identity(f.dim())).unwrap();
        for (i, j, v) in comm.iter() {
            if (i, j) == (n_max, n_max) {
                prop_assert!((v.re + (n_max as f64 + 1.0)).abs() < 1e-12);
            } else {
                prop_assert!(v.norm() < 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn ramp_conserves_norm_and_parity(
        n in 1usize..6, tau in 0.2f64..1.0, b0 in 10.0f64..50.0,
    ) {
        let mut c = DickeConfig::ion_trap_with_ramp(n, RampProfile::Exponential { b0, tau });
        c.nbar = 0.0;
        c.numerics.t_end = 0.6;
        c.numerics.samples = 13;
        let setup = QuenchSetup::new(&c).unwrap();
        let run = setup.run_member(0).unwrap();
        prop_assert!((norm(&run.final_state) - 1.0).abs() < 1e-9);
        let p0 = run.samples[0].parity;
        for s in &run.samples {
            prop_assert!((s.parity - p0).abs() < 1e-6);
        }
    }

    #[test]
    fn ensemble_average_is_linear_in_members(n in 1usize..4, nbar in 0.0f64..1.5) {
        let mut c = DickeConfig::ion_trap_exp();
        c.n_ions = n;
        c.nbar = nbar;
        c.numerics.t_end = 0.4;
        c.numerics.samples = 5;
        c.numerics.n_max = Some(60);
        let record = run_quench(&c).unwrap();
        let setup = QuenchSetup::new(&c).unwrap();
        let total: f64 = setup.ensemble.members.iter().map(|m| m.1).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for k in 0..record.times.len() {
            let mut sx = 0.0;
            let mut nph = 0.0;
            for &(m, w) in &setup.ensemble.members {
                let run = setup.run_member(m).unwrap();
                sx += w * run.samples[k].sx;
                nph += w * run.samples[k].n_phonon;
            }
            prop_assert!((record.samples[k].sx - sx).abs() < 1e-12);
            prop_assert!((record.samples[k].n_phonon - nph).abs() < 1e-12);
        }
        // thermal mean occupation up to the discarded tail
        let n0 = record.samples[0].n_phonon;
        prop_assert!((n0 - nbar).abs() < 5e-3 * (1.0 + nbar));
    }

    #[test]
    fn master_equation_preserves_trace_and_hermiticity(
        n in 1usize..4, n_max in 2usize..6, gamma in 0.0f64..2000.0, b in 0.0f64..20.0, nbar in 0.0f64..0.5,
    ) {
        let mut c = config(n, 8.0, b);
        c.gamma_el = gamma;
        let space = FullSpace::new(n, n_max).unwrap();
        let rho = initial_state(&space, nbar).unwrap();
        let (end, series) = evolve_lindblad(&space, &c, &rho, &uniform_times(0.3, 4), &LindbladOptions::default()).unwrap();
        for tr in &series.trace {
            prop_assert!((tr - 1.0).abs() < 1e-7);
        }
        prop_assert!(series.max_hermiticity_defect < 1e-10);
        prop_assert!(end.min_eigenvalue() > -1e-7);
    }
}
