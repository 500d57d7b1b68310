use nalgebra::DMatrix;
use pandenoise::linalg::{soft_threshold, solve_u, weighted_soft_threshold, CirculantSolver};
use pandenoise::metrics::{psnr, sam};
use pandenoise::noise::{corrupt, NoiseCase, NoiseSpec};
use pandenoise::tensor::{divergence, gradient, pan_resample, Direction, GradientPair};
use pandenoise::weighting::{stage1_weights, stage2_weights};
use pandenoise::{Field, HyperCube, PanImage};
use proptest::prelude::*;
use rustfft::num_complex::Complex64;

fn field(rows: usize, cols: usize) -> impl Strategy<Value = Field> {
    prop::collection::vec(-1.0f64..1.0, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn sized_field() -> impl Strategy<Value = Field> {
    (2usize..9, 2usize..9).prop_flat_map(|(r, c)| field(r, c))
}

fn unit_cube(rows: usize, cols: usize, bands: usize) -> impl Strategy<Value = HyperCube> {
    prop::collection::vec(0.0f64..1.0, rows * cols * bands)
        .prop_map(move |v| HyperCube::new(rows, cols, bands, v).unwrap())
}

fn pan(rows: usize, cols: usize) -> impl Strategy<Value = PanImage> {
    field(rows, cols).prop_map(|f| PanImage::normalize(f).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn divergence_is_adjoint_of_gradient(x in (3usize..8, 3usize..8).prop_flat_map(|(r, c)| (field(r, c), field(r, c), field(r, c)))) {
        let (u, ph, pv) = x;
        let g = gradient(&u).unwrap();
        let lhs = g.horizontal.dot(&ph) + g.vertical.dot(&pv);
        let rhs = u.dot(&divergence(&GradientPair { horizontal: ph, vertical: pv }).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn gradient_kills_constants(f in sized_field(), k in -5.0f64..5.0) {
        let g1 = gradient(&f).unwrap();
        let g2 = gradient(&f.add_scalar(k)).unwrap();
        for (a, b) in g1.horizontal.iter().zip(g2.horizontal.iter()).chain(g1.vertical.iter().zip(g2.vertical.iter())) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn fold_unfold_round_trip(cube in (1usize..6, 1usize..6, 1usize..5).prop_flat_map(|(r, c, b)| unit_cube(r, c, b))) {
        let m = cube.unfold();
        prop_assert_eq!(m.nrows(), cube.pixels());
        let back = HyperCube::fold(&m, cube.rows(), cube.cols()).unwrap();
        prop_assert_eq!(back, cube);
    }

    #[test]
    fn resampled_pan_stays_in_unit_range(x in (2usize..12, 2usize..12).prop_flat_map(|(r, c)| (field(r, c), 1..=r, 1..=c))) {
        let (f, tr, tc) = x;
        let p = pan_resample(&f, tr, tc).unwrap();
        prop_assert_eq!((p.rows(), p.cols()), (tr, tc));
        prop_assert!(p.field().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn fft_diagonalizes_differences(u in (3usize..8, 3usize..8).prop_flat_map(|(r, c)| field(r, c))) {
        let (rows, cols) = u.shape();
        let solver = CirculantSolver::new(rows, cols).unwrap();
        let g = gradient(&u).unwrap();
        for (dir, d) in [(Direction::Horizontal, &g.horizontal), (Direction::Vertical, &g.vertical)] {
            let mut fu: Vec<_> = u.iter().map(|&v| complex(v)).collect();
            solver.fft2(&mut fu, false);
            let mut fd: Vec<_> = d.iter().map(|&v| complex(v)).collect();
            solver.fft2(&mut fd, false);
            for ((a, b), t) in fu.iter().zip(&fd).zip(solver.transfer(dir)) {
                prop_assert!((a * t - b).norm() <= 1e-10 * (1.0 + b.norm()));
            }
        }
    }

    #[test]
    fn soft_threshold_is_odd_and_lipschitz(a in -10.0f64..10.0, b in -10.0f64..10.0, alpha in 0.0f64..3.0) {
        let s = soft_threshold(&[a, b, -a], alpha).unwrap();
        prop_assert_eq!(s[2], -s[0]);
        prop_assert!((s[0] - s[1]).abs() <= (a - b).abs() + 1e-15);
    }

    #[test]
    fn weighted_shrink_never_exceeds_input(x in prop::collection::vec(-3.0f64..3.0, 1..20), alpha in 0.0f64..2.0, w in 0.0f64..1.0) {
        let ws = vec![w; x.len()];
        let out = weighted_soft_threshold(&x, alpha, &ws).unwrap();
        for (o, xi) in out.iter().zip(&x) {
            prop_assert!(o.abs() <= xi.abs());
            prop_assert!(o * xi >= 0.0);
        }
    }

    #[test]
    fn solve_u_is_linear(x in (3usize..6, 3usize..6).prop_flat_map(|(r, c)| (Just((r, c)), field(r * c, 2), field(r * c, 2), field(r * c, 2))), mu in 0.1f64..5.0) {
        let ((rows, cols), a, fh, fv) = x;
        let z = DMatrix::zeros(rows * cols, 2);
        let u1 = solve_u(rows, cols, &a, &fh, &fv, &z, &z, mu).unwrap();
        let u2 = solve_u(rows, cols, &(&a * 2.0), &(&fh * 2.0), &(&fv * 2.0), &z, &z, mu).unwrap();
        prop_assert!((&u1 * 2.0 - u2).amax() <= 1e-10 * (1.0 + u1.amax()));
    }

    #[test]
    fn weights_bounded_and_stage2_below_stage1(p in pan(9, 8), coeffs in field(72, 3), q in 0.5f64..12.0) {
        let w1 = stage1_weights(&p, q, 3).unwrap();
        let w2 = stage2_weights(&p, &coeffs, q, 5).unwrap();
        for dir in Direction::BOTH {
            prop_assert!(w1.get(dir).iter().all(|v| (0.0..=1.0).contains(v)));
            for (a, b) in w1.get(dir).iter().zip(w2.get(dir).iter()) {
                prop_assert!(*b >= 0.0 && *b <= *a + 1e-15);
            }
            let first = w1.get(dir).column(0).into_owned();
            for i in 1..3 {
                prop_assert_eq!(w1.get(dir).column(i).into_owned(), first.clone());
            }
        }
    }

    #[test]
    fn stage1_monotone_in_q(p in pan(7, 7), q1 in 0.5f64..10.0, dq in 0.0f64..5.0) {
        let a = stage1_weights(&p, q1, 1).unwrap();
        let b = stage1_weights(&p, q1 + dq, 1).unwrap();
        for dir in Direction::BOTH {
            for (x, y) in a.get(dir).iter().zip(b.get(dir).iter()) {
                prop_assert!(x >= y);
            }
        }
    }

    #[test]
    fn psnr_and_sam_are_symmetric(pair in (unit_cube(4, 5, 3), unit_cube(4, 5, 3))) {
        let (a, b) = pair;
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((sam(&a, &b).unwrap() - sam(&b, &a).unwrap()).abs() <= 1e-12);
    }
}

fn complex(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn noise_replays_and_respects_band_counts(seed in any::<u64>(), case in 1u8..=5) {
        let clean = HyperCube::new(10, 12, 8, (0..960).map(|i| 0.2 + 0.6 * ((i % 17) as f64 / 16.0)).collect()).unwrap();
        let spec = NoiseSpec::new(NoiseCase::from_index(case).unwrap(), seed);
        let (n1, r1) = corrupt(&clean, &spec).unwrap();
        let (n2, r2) = corrupt(&clean, &spec).unwrap();
        prop_assert_eq!(n1.data(), n2.data());
        prop_assert_eq!(&r1, &r2);
        let k = spec.affected_bands(8);
        let case = spec.case;
        prop_assert_eq!(r1.impulse.len(), if case.has_impulse() { k } else { 0 });
        prop_assert_eq!(r1.stripes.len(), if case.has_stripes() { k } else { 0 });
        for s in &r1.stripes {
            for c in 0..12 {
                if s.columns.contains(&c) {
                    continue;
                }
                if r1.impulse.iter().any(|ib| ib.band == s.band) {
                    continue;
                }
                let b = s.band;
                for r in 0..10 {
                    let d = n1.get(r, c, b) - clean.get(r, c, b);
                    prop_assert!(d.abs() < 10.0 * r1.sigmas[b] + 1e-12);
                }
            }
        }
    }
}
