// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 FLy Authors

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fly/engine.hpp"
#include "fly/log.hpp"

namespace fly {

/// Per-component wall-time constants for one SPD round, in milliseconds.
/// Draft cost is a per-round constant by default; per_step_draft switches
/// to a linear draft_step_ms * (drafter passes per round) model instead,
/// since the per-round granularity of measured draft time is a calibration
/// choice, not a law.
struct CostModel {
    std::string name;
    double draft_round_ms = 0.0;      // producing K draft tokens, plain drafting
    double draft_round_mla_ms = 0.0;  // same, with the drafter accelerated
    double target_verify_ms = 0.0;    // one verification forward pass
    double gate_window_ms = 0.0;      // loose-verdict overhead per round
    double baseline_step_ms = 0.0;    // one autoregressive target step
    bool per_step_draft = false;
    double draft_step_ms = 0.0;
};

inline void validate(const CostModel& cost) {
    if (cost.draft_round_ms < 0 || cost.draft_round_mla_ms < 0 || cost.target_verify_ms < 0 ||
        cost.gate_window_ms < 0 || cost.baseline_step_ms < 0 || cost.draft_step_ms < 0) {
        throw std::invalid_argument("cost model: all costs must be non-negative");
    }
    if (cost.draft_round_mla_ms > cost.draft_round_ms) {
        log_warn("cost model '" + cost.name + "': accelerated draft time exceeds plain draft time");
    }
}

inline CostModel cost_profile_llama70b() {
    return CostModel{"llama70b", 245.51, 197.45, 58.62, 0.45, 58.62, false, 0.0};
}

inline CostModel cost_profile_llama405b() {
    return CostModel{"llama405b", 428.30, 363.01, 200.97, 0.57, 200.97, false, 0.0};
}

inline nlohmann::json cost_model_to_json(const CostModel& cost) {
    return nlohmann::json{
        {"version", 1},
        {"name", cost.name},
        {"draft_round_ms", cost.draft_round_ms},
        {"draft_round_mla_ms", cost.draft_round_mla_ms},
        {"target_verify_ms", cost.target_verify_ms},
        {"gate_window_ms", cost.gate_window_ms},
        {"baseline_step_ms", cost.baseline_step_ms},
        {"per_step_draft", cost.per_step_draft},
        {"draft_step_ms", cost.draft_step_ms},
    };
}

inline CostModel cost_model_from_json(const nlohmann::json& j) {
    CostModel cost;
    cost.name = j.value("name", std::string("custom"));
    cost.draft_round_ms = j.at("draft_round_ms").get<double>();
    cost.draft_round_mla_ms = j.at("draft_round_mla_ms").get<double>();
    cost.target_verify_ms = j.at("target_verify_ms").get<double>();
    cost.gate_window_ms = j.at("gate_window_ms").get<double>();
    cost.baseline_step_ms = j.value("baseline_step_ms", cost.target_verify_ms);
    cost.per_step_draft = j.value("per_step_draft", false);
    cost.draft_step_ms = j.value("draft_step_ms", 0.0);
    validate(cost);
    return cost;
}

/// Builtin profile by name, otherwise a JSON profile file by path.
inline CostModel load_cost_model(const std::string& name_or_path) {
    if (name_or_path == "llama70b") return cost_profile_llama70b();
    if (name_or_path == "llama405b") return cost_profile_llama405b();
    std::ifstream in(name_or_path);
    if (!in) throw std::runtime_error("cost profile: no builtin named '" + name_or_path + "' and no such file");
    nlohmann::json j;
    in >> j;
    return cost_model_from_json(j);
}

/// Sequence drift relative to a reference decode.
struct DivergenceReport {
    bool exact_match = false;
    int common_prefix_len = 0;
    double normalized_edit_distance = 0.0;  // Levenshtein / max length, 0 for two empty sequences
};

struct RunSummary {
    double tau = 0.0;
    int rounds = 0;           // T, all rounds
    int complete_rounds = 0;  // rounds entering tau
    int excluded_rounds = 0;  // budget-truncated rounds excluded from tau
    std::int64_t total_tokens = 0;
    std::map<RejectCause, int> reject_cause_histogram;
    double deferred_accept_rate = 0.0;  // accepted mismatches / examined mismatches
    double estimated_speedup = 1.0;
    std::optional<DivergenceReport> divergence;
};

/// Mean accepted tokens over complete rounds. A round is complete unless
/// the token budget cut its emission; rounds that stopped at EOS keep their
/// full verdict s and count as complete.
inline double mean_accepted(std::span<const RoundRecord> rounds) {
    std::int64_t sum = 0;
    int complete = 0;
    for (const auto& r : rounds) {
        if (r.truncated_by_budget) continue;
        sum += r.outcome.accepted_count;
        ++complete;
    }
    if (complete == 0) throw std::domain_error("mean_accepted: no complete rounds, tau is undefined");
    return static_cast<double>(sum) / static_cast<double>(complete);
}

/// Estimated end-to-end speedup over the autoregressive baseline:
/// (N * baseline_step_ms) / (T * per_round_cost). The gate/window overhead
/// is charged only in loose mode; mean_draft_steps feeds the optional
/// per-step draft cost model and is ignored otherwise.
inline double estimate_speedup(std::int64_t total_tokens, std::int64_t rounds, DecodeMode mode, bool mla,
                               const CostModel& cost, double mean_draft_steps = -1.0) {
    if (total_tokens < 1 || rounds < 1) {
        throw std::invalid_argument("estimate_speedup: needs at least one token and one round");
    }
    if (mode == DecodeMode::TargetOnly) return 1.0;
    double draft_ms = mla ? cost.draft_round_mla_ms : cost.draft_round_ms;
    if (cost.per_step_draft) {
        if (mean_draft_steps < 0.0) {
            throw std::invalid_argument("estimate_speedup: per-step draft cost needs the mean step count");
        }
        draft_ms = cost.draft_step_ms * mean_draft_steps;
    }
    const double per_round = draft_ms + cost.target_verify_ms + (mode == DecodeMode::Fly ? cost.gate_window_ms : 0.0);
    const double denom = static_cast<double>(rounds) * per_round;
    if (denom <= 0.0) throw std::domain_error("estimate_speedup: zero round cost");
    return static_cast<double>(total_tokens) * cost.baseline_step_ms / denom;
}

inline DivergenceReport divergence(std::span<const TokenId> candidate, std::span<const TokenId> reference) {
    DivergenceReport report;
    const std::size_t n = candidate.size();
    const std::size_t m = reference.size();
    std::size_t prefix = 0;
    while (prefix < n && prefix < m && candidate[prefix] == reference[prefix]) ++prefix;
    report.common_prefix_len = static_cast<int>(prefix);
    report.exact_match = n == m && prefix == n;
    if (n == 0 && m == 0) {
        report.normalized_edit_distance = 0.0;
        return report;
    }
    // Levenshtein with a rolling row
    std::vector<std::size_t> row(m + 1);
    for (std::size_t jj = 0; jj <= m; ++jj) row[jj] = jj;
    for (std::size_t i = 1; i <= n; ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t jj = 1; jj <= m; ++jj) {
            const std::size_t sub = diag + (candidate[i - 1] == reference[jj - 1] ? 0 : 1);
            diag = row[jj];
            row[jj] = std::min({row[jj] + 1, row[jj - 1] + 1, sub});
        }
    }
    report.normalized_edit_distance = static_cast<double>(row[m]) / static_cast<double>(std::max(n, m));
    return report;
}

/// Aggregates one session: tau, reject-cause histogram, estimated speedup
/// from the cost model, and (when a reference decode is given) divergence
/// against it. A target-only session is its own baseline: tau = 1 and
/// speedup = 1 by construction.
inline RunSummary summarize(const SessionResult& session, const CostModel& cost,
                            const SessionResult* reference = nullptr) {
    RunSummary summary;
    summary.rounds = static_cast<int>(session.rounds.size());
    summary.total_tokens = static_cast<std::int64_t>(session.generated.size());
    std::int64_t drafter_passes = 0;
    int mismatches = 0;
    int accepted_mismatches = 0;
    for (const auto& r : session.rounds) {
        if (r.truncated_by_budget) {
            ++summary.excluded_rounds;
        } else {
            ++summary.complete_rounds;
        }
        drafter_passes += r.drafter_forward_passes;
        for (const auto& record : r.outcome.records) {
            ++mismatches;
            if (record.decision == DeferVerdict::Accept) {
                ++accepted_mismatches;
            } else if (record.reject_cause) {
                ++summary.reject_cause_histogram[*record.reject_cause];
            }
        }
    }
    summary.deferred_accept_rate =
        mismatches == 0 ? 0.0 : static_cast<double>(accepted_mismatches) / static_cast<double>(mismatches);
    if (session.config.mode == DecodeMode::TargetOnly) {
        summary.tau = 1.0;
        summary.estimated_speedup = 1.0;
    } else {
        summary.tau = mean_accepted(session.rounds);
        const double mean_steps = summary.rounds == 0
                                      ? 0.0
                                      : static_cast<double>(drafter_passes) / static_cast<double>(summary.rounds);
        summary.estimated_speedup = estimate_speedup(summary.total_tokens, summary.rounds, session.config.mode,
                                                     session.config.mla, cost, mean_steps);
    }
    if (reference) {
        summary.divergence = divergence(session.generated, reference->generated);
    }
    return summary;
}

// ---------------------------------------------------------------------------
// CSV emission. Numbers are formatted with %.12g so identical runs produce
// byte-identical files.

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

}  // namespace detail

inline const char* round_trace_header() {
    return "round,s,termination,reject_position,reject_cause,entropy_at_reject,deferred_accepts,drafter_passes";
}

/// Per-round trace of one session, one row per round.
inline void write_round_trace_csv(std::ostream& out, const SessionResult& session) {
    out << round_trace_header() << '\n';
    for (const auto& r : session.rounds) {
        std::string reject_position;
        std::string reject_cause;
        std::string entropy;
        if (!r.outcome.records.empty() && r.outcome.records.back().decision == DeferVerdict::Reject) {
            const auto& last = r.outcome.records.back();
            reject_position = std::to_string(last.position);
            reject_cause = to_string(*last.reject_cause);
            entropy = detail::fmt_double(last.entropy);
        }
        out << r.round << ',' << r.outcome.accepted_count << ',' << to_string(r.outcome.termination) << ','
            << reject_position << ',' << reject_cause << ',' << entropy << ',' << r.outcome.deferred_accepts.size()
            << ',' << r.drafter_forward_passes << '\n';
    }
}

inline const char* run_summary_header() {
    return "prompt,mode,K,W,theta,mla,tau,rounds,tokens,est_speedup,exact_match,prefix_len,edit_distance";
}

/// One run-summary row (one session). Divergence columns stay empty when
/// the session had no reference decode.
inline void write_run_summary_row(std::ostream& out, int prompt_index, const EngineConfig& cfg,
                                  const RunSummary& summary) {
    out << prompt_index << ',' << to_string(cfg.mode) << ',' << cfg.K << ',' << cfg.W << ','
        << detail::fmt_double(cfg.theta) << ',' << (cfg.mla ? 1 : 0) << ',' << detail::fmt_double(summary.tau) << ','
        << summary.rounds << ',' << summary.total_tokens << ',' << detail::fmt_double(summary.estimated_speedup)
        << ',';
    if (summary.divergence) {
        out << (summary.divergence->exact_match ? 1 : 0) << ',' << summary.divergence->common_prefix_len << ','
            << detail::fmt_double(summary.divergence->normalized_edit_distance);
    } else {
        out << ",,";
    }
    out << '\n';
}

}  // namespace fly
