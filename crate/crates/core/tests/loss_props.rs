use cplab_core::sampling::{
    loss_gr_neg, loss_gr_pos, loss_rr_neg, loss_rr_pos, loss_total, loss_total_with_grad, LossInputs, LossToggles,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Set = Vec<Vec<f64>>;

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

// Literal double-loop forms of the four terms.

fn oracle_rr_pos(f: &Set, fp: &Set) -> f64 {
    let n = f.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += sq(&f[i], &f[j]) + sq(&fp[i], &fp[j]);
            }
        }
    }
    acc / (2 * n * (n - 1)) as f64
}

fn oracle_rr_neg(f: &Set, fp: &Set) -> f64 {
    let n = f.len();
    let mut acc = 0.0;
    for a in f {
        for b in fp {
            acc += sq(a, b);
        }
    }
    -acc / (n * n) as f64
}

fn oracle_gr(f: &Set, g: Option<&Set>, fp: &Set, gp: Option<&Set>, negative: bool) -> f64 {
    let (phi, phip) = (g.is_some() as u8 as f64, gp.is_some() as u8 as f64);
    if phi + phip == 0.0 {
        return 0.0;
    }
    let n = f.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            // the negative term pairs each clip with the other clip's GT
            let (a, b) = if negative { (fp, f) } else { (f, fp) };
            if let Some(g) = g {
                acc += phi * sq(&a[i], &g[j]);
            }
            if let Some(gp) = gp {
                acc += phip * sq(&b[i], &gp[j]);
            }
        }
    }
    let v = acc / ((phi + phip) * (n * n) as f64);
    if negative {
        -v
    } else {
        v
    }
}

fn random_set(rng: &mut ChaCha8Rng, n: usize, bins: usize) -> Set {
    (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..bins).map(|_| rng.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

struct Case {
    f: Set,
    fp: Set,
    g: Option<Set>,
    gp: Option<Set>,
}

fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=32);
    let bins = rng.random_range(3..=40);
    let f = random_set(&mut rng, n, bins);
    let fp = random_set(&mut rng, n, bins);
    let g = random_set(&mut rng, n, bins);
    let gp = random_set(&mut rng, n, bins);
    let (phi, phip) = (rng.random_bool(0.5), rng.random_bool(0.5));
    Case {
        f,
        fp,
        g: phi.then_some(g),
        gp: phip.then_some(gp),
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn every_term_matches_its_double_loop() {
    for seed in 0..100 {
        let c = random_case(seed);
        let (phi, phip) = (c.g.is_some(), c.gp.is_some());
        let (g, gp) = (c.g.as_deref(), c.gp.as_deref());
        let rp = loss_rr_pos(&c.f, &c.fp).unwrap();
        let rn = loss_rr_neg(&c.f, &c.fp).unwrap();
        let gpos = loss_gr_pos(&c.f, g, &c.fp, gp, phi, phip).unwrap();
        let gneg = loss_gr_neg(&c.f, g, &c.fp, gp, phi, phip).unwrap();
        let total = loss_total(&c.f, &c.fp, g, gp, phi, phip).unwrap();
        let o = [
            oracle_rr_pos(&c.f, &c.fp),
            oracle_rr_neg(&c.f, &c.fp),
            oracle_gr(&c.f, c.g.as_ref(), &c.fp, c.gp.as_ref(), false),
            oracle_gr(&c.f, c.g.as_ref(), &c.fp, c.gp.as_ref(), true),
        ];
        for (got, want) in [rp, rn, gpos, gneg].into_iter().zip(o) {
            assert!(close(got, want, 1e-9), "seed {seed}: {got} vs {want}");
        }
        assert!(close(total.total, o.iter().sum(), 1e-9));
    }
}

fn case_strategy() -> impl Strategy<Value = u64> {
    any::<u64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symmetries(seed in case_strategy()) {
        let c = random_case(seed);
        let (phi, phip) = (c.g.is_some(), c.gp.is_some());
        let (g, gp) = (c.g.as_deref(), c.gp.as_deref());
        prop_assert!(close(loss_rr_pos(&c.f, &c.fp).unwrap(), loss_rr_pos(&c.fp, &c.f).unwrap(), 1e-12));
        prop_assert!(close(loss_rr_neg(&c.f, &c.fp).unwrap(), loss_rr_neg(&c.fp, &c.f).unwrap(), 1e-12));
        let a = loss_gr_pos(&c.f, g, &c.fp, gp, phi, phip).unwrap();
        let b = loss_gr_pos(&c.fp, gp, &c.f, g, phip, phi).unwrap();
        prop_assert!(close(a, b, 1e-12));
        let a = loss_gr_neg(&c.f, g, &c.fp, gp, phi, phip).unwrap();
        let b = loss_gr_neg(&c.fp, gp, &c.f, g, phip, phi).unwrap();
        prop_assert!(close(a, b, 1e-12));
    }

    #[test]
    fn signs_and_sum(seed in case_strategy()) {
        let c = random_case(seed);
        let b = loss_total(&c.f, &c.fp, c.g.as_deref(), c.gp.as_deref(), c.g.is_some(), c.gp.is_some()).unwrap();
        prop_assert!(b.l_p_rr >= 0.0 && b.l_p_gr >= 0.0);
        prop_assert!(b.l_n_rr <= 0.0 && b.l_n_gr <= 0.0);
        prop_assert!(close(b.total, b.l_p_rr + b.l_n_rr + b.l_p_gr + b.l_n_gr, 1e-9));
        if c.g.is_none() && c.gp.is_none() {
            prop_assert_eq!(b.l_p_gr, 0.0);
            prop_assert_eq!(b.l_n_gr, 0.0);
            prop_assert_eq!(b.total, b.l_p_rr + b.l_n_rr);
        }
    }

    #[test]
    fn gradient_matches_finite_differences(seed in case_strategy()) {
        let c = random_case(seed);
        let total = |f: &Set, fp: &Set| {
            let inputs = LossInputs { f, f_prime: fp, g: c.g.as_deref(), g_prime: c.gp.as_deref() };
            loss_total_with_grad(&inputs, LossToggles::default()).unwrap().0.total
        };
        let inputs = LossInputs { f: &c.f, f_prime: &c.fp, g: c.g.as_deref(), g_prime: c.gp.as_deref() };
        let (_, grads) = loss_total_with_grad(&inputs, LossToggles::default()).unwrap();
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..12 {
            let which = rng.random_bool(0.5);
            let i = rng.random_range(0..c.f.len());
            let k = rng.random_range(0..c.f[0].len());
            let (mut p, mut m) = (c.f.clone(), c.f.clone());
            let (mut pp, mut mp) = (c.fp.clone(), c.fp.clone());
            let analytic = if which {
                p[i][k] += h;
                m[i][k] -= h;
                grads.f[i][k]
            } else {
                pp[i][k] += h;
                mp[i][k] -= h;
                grads.f_prime[i][k]
            };
            let fd = (total(&p, &pp) - total(&m, &mp)) / (2.0 * h);
            prop_assert!(
                (analytic - fd).abs() <= 1e-4 * analytic.abs().max(fd.abs()).max(1e-3),
                "{} vs {}", analytic, fd
            );
        }
    }
}
