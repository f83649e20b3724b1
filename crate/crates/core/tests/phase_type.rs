use proptest::prelude::*;
use ptdisorder::numerics::adaptive_simpson;
use ptdisorder::phase_type::{distribution, mean_absorption, sample_absorption};
use ptdisorder::scenario::scenario_rng;
use ptdisorder::{build_erlang, build_hyperexponential, flow, jump, BeliefPoint, ModelSpec, PhaseTypeGenerator};

fn priors() -> Vec<(PhaseTypeGenerator, BeliefPoint)> {
    vec![
        (build_erlang(2, 3.0).unwrap(), BeliefPoint::transient_vertex(2, 0)),
        (build_hyperexponential(&[3.0, 2.0]).unwrap(), BeliefPoint::new(&[0.4, 0.6], 0.0).unwrap()),
        (
            PhaseTypeGenerator::new(&[vec![-2.0, 1.0, 0.5], vec![0.5, -1.5, 0.5], vec![0.0, 0.0, -4.0]], &[0.5, 0.5, 4.0])
                .unwrap(),
            BeliefPoint::new(&[0.2, 0.3, 0.4], 0.1).unwrap(),
        ),
    ]
}

#[test]
fn sampled_absorption_times_pass_kolmogorov_smirnov() {
    const N: usize = 20_000;
    for (k, (gen, pi)) in priors().into_iter().enumerate() {
        let mut rng = scenario_rng(101, k as u64);
        let mut thetas: Vec<f64> = (0..N).map(|_| sample_absorption(&gen, &pi, &mut rng).1).collect();
        thetas.sort_by(f64::total_cmp);
        let mut d = 0.0f64;
        let mut i = 0;
        while i < N {
            let t = thetas[i];
            let mut j = i;
            while j < N && thetas[j] == t {
                j += 1;
            }
            // Left limit of F is 0 at the atom t = 0 and continuous elsewhere.
            let f = distribution(&gen, &pi, t).unwrap().cdf;
            let f_left = if t == 0.0 { 0.0 } else { f };
            d = d.max((f_left - i as f64 / N as f64).abs()).max((j as f64 / N as f64 - f).abs());
            i = j;
        }
        // 1% critical value of the asymptotic Kolmogorov distribution.
        assert!(d < 1.63 / (N as f64).sqrt(), "prior {k}: D = {d}");
    }
}

#[test]
fn mean_matches_integrated_survival() {
    for (gen, pi) in priors() {
        let survival = |t: f64| 1.0 - distribution(&gen, &pi, t).unwrap().cdf;
        let integral = adaptive_simpson(survival, 0.0, 60.0, 1e-11);
        assert!((integral - mean_absorption(&gen, &pi).unwrap()).abs() < 1e-8);
    }
}

#[test]
fn density_is_derivative_of_cdf() {
    let h = 1e-5;
    for (gen, pi) in priors() {
        for t in [0.05, 0.3, 1.0, 2.5] {
            let fd = (distribution(&gen, &pi, t + h).unwrap().cdf - distribution(&gen, &pi, t - h).unwrap().cdf) / (2.0 * h);
            assert!((fd - distribution(&gen, &pi, t).unwrap().density).abs() < 1e-7);
        }
    }
}

fn model() -> ModelSpec {
    ModelSpec::new(build_hyperexponential(&[3.0, 2.0]).unwrap(), 2.0, 6.0, 1.5).unwrap()
}

fn belief() -> impl Strategy<Value = BeliefPoint> {
    prop::collection::vec(0.001f64..1.0, 3).prop_map(|v| {
        let s: f64 = v.iter().sum();
        BeliefPoint::from_vec(v.into_iter().map(|x| x / s).collect()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flow_is_a_semigroup(p in belief(), s in 0.0f64..5.0, t in 0.0f64..5.0) {
        let m = model();
        let direct = flow(&m, &p, s + t).unwrap();
        let composed = flow(&m, &flow(&m, &p, s).unwrap(), t).unwrap();
        prop_assert!(direct.sup_distance(&composed) < 1e-10);
    }

    #[test]
    fn flow_and_jump_stay_on_simplex(p in belief(), t in 0.0f64..40.0) {
        let m = model();
        for q in [flow(&m, &p, t).unwrap(), jump(&m, &p)] {
            prop_assert!(q.as_slice().iter().all(|&x| x >= 0.0));
            prop_assert!((q.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
