mod common;

use common::cases;
use mrt_joint::data::Dataset;
use mrt_joint::latent::{grid_times, SubjectGrid};
use mrt_joint::model::{Mechanism, ModelConfig};
use mrt_joint::params::ParamLayout;
use mrt_joint::sampler::{run_mcmc, SamplerConfig};
use mrt_joint::simulate::{simulate_dataset, HazardForm, SimConfig};

/// Without data the chain must target the prior itself.
#[test]
fn chain_recovers_the_prior_without_data() {
    for (name, d) in cases::prior_recovery_ks() {
        assert!(d < 0.05, "{name}: KS {d}");
    }
}

#[test]
fn baseline_posterior_mean_matches_quadrature() {
    let c = cases::beta0_posterior_check();
    assert!((c.chain_mean - c.oracle).abs() < 0.02, "chain {}, oracle {}", c.chain_mean, c.oracle);
    // Fixed and non-hazard coordinates never move.
    assert!(c.fixed_untouched);
}

/// Simulator and event likelihood agree: with the true latent paths given and
/// everything else at truth, β₀ is recovered without bias across replicates.
#[test]
fn baseline_is_unbiased_given_the_true_paths() {
    let reps = 100;
    let mut total = 0.0;
    for seed in 1..=reps {
        let mut cfg = SimConfig::new(1, Mechanism::Additive, HazardForm::Model1, seed);
        cfg.n_subjects = 50;
        let sim = simulate_dataset(&cfg).unwrap();
        let p = sim.model.p;
        let known: Vec<SubjectGrid> = sim
            .data
            .subjects
            .iter()
            .zip(&sim.latent)
            .map(|(s, tr)| {
                let times = grid_times(&sim.model, s);
                let mut values = Vec::with_capacity(times.len() * p);
                for &t in &times {
                    let j = tr.times.partition_point(|&x| x < t);
                    let j = if j == tr.times.len() || (j > 0 && t - tr.times[j - 1] < tr.times[j] - t) { j - 1 } else { j };
                    values.extend_from_slice(&tr.values[j * p..(j + 1) * p]);
                }
                SubjectGrid { times, values }
            })
            .collect();
        let fixed = ParamLayout::new(&sim.model).names().into_iter().filter(|n| n != "beta0").collect();
        let sc = SamplerConfig {
            iterations: 3000,
            burn_in: 1000,
            seed: 9,
            initial: Some(sim.truth.clone()),
            fixed,
            known_latent: Some(known),
            ..SamplerConfig::default()
        };
        let draws = run_mcmc(&sim.data, &sim.model, &sc).unwrap().draws_of("beta0").unwrap();
        total += draws.iter().sum::<f64>() / draws.len() as f64;
    }
    let mean = total / reps as f64;
    // Replicate sd is about 0.09, so 0.03 is over three standard errors.
    assert!((mean + 1.8).abs() < 0.03, "mean posterior beta0 {mean}");
}

fn small_fit_config(seed: u64) -> (Dataset, ModelConfig, SamplerConfig) {
    let mut sim = SimConfig::new(1, Mechanism::Additive, HazardForm::Model1, 2);
    sim.n_subjects = 5;
    sim.follow_up_days = 3.0;
    let ds = simulate_dataset(&sim).unwrap();
    let cfg = SamplerConfig { chains: 2, iterations: 60, burn_in: 30, seed, ..SamplerConfig::default() };
    (ds.data, ds.model, cfg)
}

#[test]
fn chains_are_reproducible_and_thread_independent() {
    let (data, model, cfg) = small_fit_config(77);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_mcmc(&data, &model, &cfg).unwrap())
    };
    let a = run(1);
    let b = run(2);
    assert_eq!(a.chains, b.chains);
    assert_ne!(a.chains[0].draws, a.chains[1].draws);
    assert_eq!(a.n_draws(), 60);
    assert!(a.rhat.contains_key("tau[1]"));
    let (_, _, other) = small_fit_config(78);
    let c = run_mcmc(&data, &model, &other).unwrap();
    assert_ne!(a.chains[0].draws, c.chains[0].draws);
}

#[test]
fn latent_draws_are_thinned_from_the_end() {
    let (data, model, mut cfg) = small_fit_config(1);
    cfg.chains = 1;
    cfg.latent_thin = 7;
    let a = run_mcmc(&data, &model, &cfg).unwrap();
    let its: Vec<usize> = a.chains[0].latent.iter().map(|l| l.iteration).collect();
    assert_eq!(its, vec![31, 38, 45, 52, 59]);
    assert_eq!(a.draws_with_latent().len(), 5);
    cfg.store_latent = false;
    assert!(run_mcmc(&data, &model, &cfg).unwrap().chains[0].latent.is_empty());
}

#[test]
fn invalid_configs_are_rejected() {
    let (data, model, cfg) = small_fit_config(1);
    let bad = [
        SamplerConfig { burn_in: 60, ..cfg.clone() },
        SamplerConfig { chains: 0, ..cfg.clone() },
        SamplerConfig { latent_thin: 0, ..cfg.clone() },
        SamplerConfig { target_accept: 1.0, ..cfg.clone() },
        SamplerConfig { fixed: vec!["nope".into()], ..cfg.clone() },
    ];
    for c in bad {
        assert!(matches!(run_mcmc(&data, &model, &c), Err(mrt_joint::Error::Config(_))), "{c:?}");
    }
    let wrong_k = ModelConfig { k: 3, pattern: model.pattern[..3].to_vec(), ..model.clone() };
    assert!(run_mcmc(&data, &wrong_k, &cfg).is_err());
}
