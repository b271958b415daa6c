//! The three operating modes on one generated workload, compared by
//! query-execution traffic in the final window.
//!
//! cargo run --release --example scenario_modes [budget_bytes]

use p2pxml::engine::{
    run_scenario_with, Mode, ScenarioConfig, UserView, WorkloadConfig, DEFAULT_TEMPLATES,
};

fn config(mode: Mode, budget: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::from_json(
        r#"{"mode":"adaptive","seed":42,"peers":32,"budget_bytes":0,
            "corpus":{"synthetic":{"documents":200}},
            "workload":{"generated":{"zipf_s":1.0}},
            "ticks":1000,"tau_ticks":100}"#,
    )
    .unwrap();
    cfg.mode = mode;
    cfg.budget_bytes = budget;
    if mode == Mode::UserViews {
        cfg.user_views = DEFAULT_TEMPLATES[..3]
            .iter()
            .enumerate()
            .map(|(i, t)| UserView {
                peer: format!("p{i:02}"),
                pattern: t.to_string(),
            })
            .collect();
    }
    if let WorkloadConfig::Generated { per_tick, .. } = &mut cfg.workload {
        *per_tick = 1;
    }
    cfg
}

fn main() {
    let budget = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(8000);
    let mut finals = Vec::new();
    for mode in [Mode::DocIndexOnly, Mode::UserViews, Mode::Adaptive] {
        let start = std::time::Instant::now();
        let (_, s) = run_scenario_with(config(mode, budget)).expect("scenario runs");
        let per_window: Vec<u64> = s.windows.iter().map(|w| w.bytes["query_execution"]).collect();
        println!(
            "{mode:?}: final window {} bytes, views {}, violations {}, {:.1}s\n  per window {per_window:?}",
            s.final_window_query_execution_bytes,
            s.view_count,
            s.budget_violations,
            start.elapsed().as_secs_f64()
        );
        finals.push(s.final_window_query_execution_bytes as f64);
    }
    println!(
        "adaptive/docIndexOnly = {:.3}, userViews/docIndexOnly = {:.3}",
        finals[2] / finals[0],
        finals[1] / finals[0]
    );
}
