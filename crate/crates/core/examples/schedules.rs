//! Learning-rate schedules evaluated at their breakpoints: the multistep baseline,
//! one-cycle, triangular cyclic and cosine with warm restarts.

use textless::schedule::{lr_at, ScheduleConfig};

fn show(name: &str, cfg: &ScheduleConfig) {
    cfg.validate().expect("valid schedule");
    let mut steps = cfg.breakpoints();
    steps.extend([0, cfg.total_steps / 2, cfg.total_steps.saturating_sub(1)]);
    steps.sort_unstable();
    steps.dedup();
    println!("{name} ({} steps)", cfg.total_steps);
    for s in steps.into_iter().filter(|&s| s < cfg.total_steps) {
        println!("  step {s:>7}  lr {:.3e}", lr_at(cfg, s).expect("lr"));
    }
}

fn main() {
    show("multistep baseline", &ScheduleConfig::multistep_baseline());
    show("one-cycle 4e-3", &ScheduleConfig::one_cycle(4e-3, 30_000));
    show("cyclic", &ScheduleConfig::cyclic(1e-4, 1e-3, 500, 2_000));
    show("cosine restarts", &ScheduleConfig::cosine_restarts(1e-5, 1e-3, 1_000, 2.0, 7_000));
}
