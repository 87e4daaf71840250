use beamfill::model::*;
use beamfill::oracle::{grid_search_ee, GridMetric};
use beamfill::solver::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_stats(rng: &mut ChaCha8Rng, k: usize, m: usize, n: usize) -> ChannelStats {
    let users = (0..k)
        .map(|_| {
            let data = (0..n * m).map(|_| rng.gen_range(0.1..3.0)).collect();
            UserStats::new(Mat::from_rows(n, m, data))
        })
        .collect();
    ChannelStats::new(m, users, 1.0)
}

#[test]
#[ignore]
fn probe_refresh_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for trial in 0..6 {
        let stats = random_stats(&mut rng, 1, 2, 1);
        let pm = PowerModel { xi: 2.0, p_c: 0.5, p_s: 1.0, p_max: 2.0 };
        let alloc0 = PowerAllocation::uniform(1, 2, pm.p_max);
        let cfg_mm = SolverConfig::default();
        let cfg_dk = SolverConfig { de_refresh: DeRefresh::Dinkelbach, ..cfg_mm };
        let (a_mm, t_mm) = solve_ee_lowcomplexity(&stats, &pm, &alloc0, &cfg_mm).unwrap();
        let (a_dk, t_dk) = solve_ee_lowcomplexity(&stats, &pm, &alloc0, &cfg_dk).unwrap();
        let grid = grid_search_ee(&stats, &pm, 400, GridMetric::De, &cfg_mm).unwrap();
        let ee_mm = de_ee(&stats, &pm, &a_mm, &cfg_mm).unwrap();
        let ee_dk = de_ee(&stats, &pm, &a_dk, &cfg_dk).unwrap();
        println!(
            "trial {trial}: grid {:.8}  mm {:.8} ({} it, rel gap {:.2e})  dk {:.8} ({} it, rel gap {:.2e})",
            grid.objective,
            ee_mm,
            t_mm.iterations(),
            (grid.objective - ee_mm).abs() / grid.objective,
            ee_dk,
            t_dk.iterations(),
            (grid.objective - ee_dk).abs() / grid.objective,
        );
    }
    // multi-user: compare the two modes and the reference path
    for trial in 0..6 {
        let stats = random_stats(&mut rng, 2, 4, 2);
        let pm = PowerModel { xi: 5.0, p_c: 0.5, p_s: 2.0, p_max: 4.0 };
        let alloc0 = PowerAllocation::uniform(2, 4, pm.p_max);
        let cfg_mm = SolverConfig::default();
        let cfg_dk = SolverConfig { de_refresh: DeRefresh::Dinkelbach, ..cfg_mm };
        let (a_mm, t_mm) = solve_ee_lowcomplexity(&stats, &pm, &alloc0, &cfg_mm).unwrap();
        let (a_dk, t_dk) = solve_ee_lowcomplexity(&stats, &pm, &alloc0, &cfg_dk).unwrap();
        let (a_ref, t_ref) = solve_ee_reference(&stats, &pm, &alloc0, &cfg_mm).unwrap();
        let ee_mm = de_ee(&stats, &pm, &a_mm, &cfg_mm).unwrap();
        let ee_dk = de_ee(&stats, &pm, &a_dk, &cfg_dk).unwrap();
        let ee_ref = de_ee(&stats, &pm, &a_ref, &cfg_mm).unwrap();
        println!(
            "multi {trial}: mm {ee_mm:.8} ({} it)  dk {ee_dk:.8} ({} it)  ref {ee_ref:.8} ({} it)",
            t_mm.iterations(),
            t_dk.iterations(),
            t_ref.iterations(),
        );
    }
}
