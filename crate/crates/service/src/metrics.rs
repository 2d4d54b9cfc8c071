//! Process counters rendered in the Prometheus text format.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};

use t2p_core::llm::UsageReport;

#[derive(Debug, Default)]
pub struct Metrics {
    pub requests: AtomicU64,
    pub playlists_generated: AtomicU64,
    pub degraded: AtomicU64,
    pub hallucinations_dropped: AtomicU64,
    pub reformulate_responses: AtomicU64,
    pub client_errors: AtomicU64,
    pub server_errors: AtomicU64,
    pub events_recorded: AtomicU64,
    pub reloads: AtomicU64,
    pub reload_failures: AtomicU64,
}

fn counter(out: &mut String, name: &str, help: &str, value: u64) {
    let _ = writeln!(out, "# HELP {name} {help}");
    let _ = writeln!(out, "# TYPE {name} counter");
    let _ = writeln!(out, "{name} {value}");
}

impl Metrics {
    pub fn inc(c: &AtomicU64) {
        c.fetch_add(1, Ordering::Relaxed);
    }

    pub fn render(&self, usage: &UsageReport, snapshot_id: u64) -> String {
        let get = |c: &AtomicU64| c.load(Ordering::Relaxed);
        let mut out = String::new();
        counter(&mut out, "t2p_requests_total", "Playlist generation requests.", get(&self.requests));
        counter(&mut out, "t2p_playlists_generated_total", "Playlists generated and stored.", get(&self.playlists_generated));
        counter(&mut out, "t2p_degraded_total", "Playlists served through a fallback stage.", get(&self.degraded));
        counter(
            &mut out,
            "t2p_hallucinations_dropped_total",
            "Track ids returned by the model that were not candidates.",
            get(&self.hallucinations_dropped),
        );
        counter(
            &mut out,
            "t2p_reformulate_responses_total",
            "Requests answered with a reformulation hint.",
            get(&self.reformulate_responses),
        );
        counter(&mut out, "t2p_client_errors_total", "Other 4xx responses.", get(&self.client_errors));
        counter(&mut out, "t2p_server_errors_total", "5xx responses.", get(&self.server_errors));
        counter(&mut out, "t2p_events_recorded_total", "Engagement events stored.", get(&self.events_recorded));
        counter(&mut out, "t2p_reloads_total", "Successful snapshot reloads.", get(&self.reloads));
        counter(&mut out, "t2p_reload_failures_total", "Rejected snapshot reloads.", get(&self.reload_failures));

        let _ = writeln!(out, "# HELP t2p_llm_calls_total LLM attempts by purpose.");
        let _ = writeln!(out, "# TYPE t2p_llm_calls_total counter");
        let _ = writeln!(out, "t2p_llm_calls_total{{purpose=\"extraction\"}} {}", usage.extraction.calls);
        let _ = writeln!(out, "t2p_llm_calls_total{{purpose=\"refinement\"}} {}", usage.refinement.calls);
        let _ = writeln!(out, "# HELP t2p_llm_tokens_total LLM tokens by purpose and direction.");
        let _ = writeln!(out, "# TYPE t2p_llm_tokens_total counter");
        for (purpose, u) in [("extraction", &usage.extraction), ("refinement", &usage.refinement)] {
            let _ = writeln!(out, "t2p_llm_tokens_total{{purpose=\"{purpose}\",direction=\"input\"}} {}", u.input_tokens);
            let _ = writeln!(out, "t2p_llm_tokens_total{{purpose=\"{purpose}\",direction=\"output\"}} {}", u.output_tokens);
        }
        let _ = writeln!(out, "# HELP t2p_snapshot_id Snapshot currently served.");
        let _ = writeln!(out, "# TYPE t2p_snapshot_id gauge");
        let _ = writeln!(out, "t2p_snapshot_id {snapshot_id}");
        out
    }
}
