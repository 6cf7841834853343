// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 FLy Authors

#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "fly/engine.hpp"
#include "fly/log.hpp"
#include "fly/metrics.hpp"
#include "fly/model.hpp"

namespace fly {

/// Configuration and schema problems (exit code 1 at the CLI); everything
/// else that throws is a runtime failure (exit code 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr int kRunConfigVersion = 1;

struct RunConfig {
    std::filesystem::path target_model_path;
    std::filesystem::path drafter_model_path;
    EngineConfig engine;
    std::string cost_profile = "llama70b";
    std::vector<std::string> prompts;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "out";
};

/// CLI flag overrides applied on top of the config file.
struct RunOverrides {
    std::optional<std::string> mode;
    std::optional<int> K;
    std::optional<int> W;
    std::optional<double> theta;
    std::optional<std::string> cost_profile;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& item : j.items()) {
        if (!allowed.count(item.key())) {
            throw ConfigError("config: unknown key '" + item.key() + "' in " + where);
        }
    }
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
    return p.is_absolute() ? p : base / p;
}

inline std::string timestamp_line() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[64];
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return std::string("# generated_at ") + buf;
}

/// Fixed-order parallel map: results land by index, so output never depends
/// on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const unsigned hw = std::thread::hardware_concurrency();
    const std::size_t workers = std::min<std::size_t>(n, hw == 0 ? 1 : hw);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace detail

/// Strict parse: unknown keys are errors, the schema version is required,
/// and every referenced file must exist. Relative paths resolve against the
/// config file's directory.
inline RunConfig load_run_config(const std::filesystem::path& config_path, const RunOverrides& overrides = {}) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("config: cannot open " + config_path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config: " + std::string(e.what()));
    }
    detail::check_keys(j,
                       {"version", "target_model", "drafter_model", "engine", "lookup", "cost_profile", "prompts",
                        "prompts_file", "seed", "output_dir"},
                       config_path.filename().string());
    if (!j.contains("version")) throw ConfigError("config: missing schema version");
    if (j.at("version").get<int>() != kRunConfigVersion) throw ConfigError("config: unsupported schema version");

    const auto base = config_path.has_parent_path() ? config_path.parent_path() : std::filesystem::path(".");
    RunConfig cfg;
    try {
        cfg.target_model_path = detail::resolve(base, j.at("target_model").get<std::string>());
        cfg.drafter_model_path = detail::resolve(base, j.at("drafter_model").get<std::string>());
        if (j.contains("engine")) {
            const auto& e = j.at("engine");
            detail::check_keys(e, {"mode", "K", "W", "theta", "mla", "max_new_tokens", "temperature"}, "engine");
            if (e.contains("mode")) cfg.engine.mode = decode_mode_from_string(e.at("mode").get<std::string>());
            cfg.engine.K = e.value("K", cfg.engine.K);
            cfg.engine.W = e.value("W", cfg.engine.W);
            cfg.engine.theta = e.value("theta", cfg.engine.theta);
            cfg.engine.mla = e.value("mla", cfg.engine.mla);
            cfg.engine.max_new_tokens = e.value("max_new_tokens", cfg.engine.max_new_tokens);
            cfg.engine.sampling.temperature = e.value("temperature", 0.0);
        }
        if (j.contains("lookup")) {
            const auto& l = j.at("lookup");
            detail::check_keys(l, {"max_ngram", "min_ngram", "span"}, "lookup");
            cfg.engine.lookup.max_ngram = l.value("max_ngram", cfg.engine.lookup.max_ngram);
            cfg.engine.lookup.min_ngram = l.value("min_ngram", cfg.engine.lookup.min_ngram);
            cfg.engine.lookup.span = l.value("span", cfg.engine.lookup.span);
        }
        cfg.cost_profile = j.value("cost_profile", cfg.cost_profile);
        cfg.seed = j.value("seed", cfg.seed);
        if (j.contains("output_dir")) cfg.output_dir = detail::resolve(base, j.at("output_dir").get<std::string>());

        if (j.contains("prompts") == j.contains("prompts_file")) {
            throw ConfigError("config: exactly one of 'prompts' or 'prompts_file' is required");
        }
        if (j.contains("prompts")) {
            cfg.prompts = j.at("prompts").get<std::vector<std::string>>();
        } else {
            const auto path = detail::resolve(base, j.at("prompts_file").get<std::string>());
            std::ifstream pf(path);
            if (!pf) throw ConfigError("config: cannot open prompts file " + path.string());
            std::string line;
            while (std::getline(pf, line)) {
                if (!line.empty()) cfg.prompts.push_back(line);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: " + std::string(e.what()));
    }
    if (cfg.prompts.empty()) throw ConfigError("config: no prompts given");

    if (overrides.mode) cfg.engine.mode = decode_mode_from_string(*overrides.mode);
    if (overrides.K) cfg.engine.K = *overrides.K;
    if (overrides.W) cfg.engine.W = *overrides.W;
    if (overrides.theta) cfg.engine.theta = *overrides.theta;
    if (overrides.cost_profile) cfg.cost_profile = *overrides.cost_profile;
    if (overrides.seed) cfg.seed = *overrides.seed;
    if (overrides.output_dir) cfg.output_dir = *overrides.output_dir;

    try {
        validate(cfg.engine);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    for (const auto& path : {cfg.target_model_path, cfg.drafter_model_path}) {
        if (!std::filesystem::exists(path)) throw ConfigError("config: model file not found: " + path.string());
    }
    return cfg;
}

/// Everything a run needs, loaded and cross-checked.
struct LoadedRun {
    RunConfig config;
    StoredModel target;
    StoredModel drafter;
    CostModel cost;
    std::vector<std::vector<TokenId>> prompt_tokens;
};

inline LoadedRun load_run(const std::filesystem::path& config_path, const RunOverrides& overrides = {}) {
    RunConfig cfg = load_run_config(config_path, overrides);
    LoadedRun run{cfg, load_model(cfg.target_model_path), load_model(cfg.drafter_model_path), CostModel{}, {}};
    if (run.target.tokenizer.vocab().size != run.drafter.tokenizer.vocab().size) {
        throw ConfigError("config: drafter and target models use different vocabularies");
    }
    try {
        run.cost = load_cost_model(cfg.cost_profile);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    run.config.engine.eos = run.target.tokenizer.vocab().eos;
    for (const auto& text : cfg.prompts) {
        auto tokens = run.target.tokenizer.tokenize(text);
        if (tokens.empty()) throw ConfigError("config: prompt tokenizes to nothing: '" + text + "'");
        run.prompt_tokens.push_back(std::move(tokens));
    }
    return run;
}

// ---------------------------------------------------------------------------
// Session rows and report rendering.

struct SummaryRow {
    int prompt_index = 0;
    std::string axis;    // sweep only
    double value = 0.0;  // sweep only
    EngineConfig cfg;
    RunSummary summary;
};

inline void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows, bool with_timestamp,
                              bool sweep_columns = false) {
    if (with_timestamp) out << detail::timestamp_line() << '\n';
    if (sweep_columns) out << "axis,value,";
    out << run_summary_header() << '\n';
    for (const auto& row : rows) {
        if (sweep_columns) out << row.axis << ',' << detail::fmt_double(row.value) << ',';
        write_run_summary_row(out, row.prompt_index, row.cfg, row.summary);
    }
}

inline std::string render_report(const std::vector<SummaryRow>& rows) {
    std::ostringstream out;
    out << "run report\n==========\n";
    std::map<std::string, std::vector<const SummaryRow*>> by_mode;
    for (const auto& row : rows) by_mode[to_string(row.cfg.mode)].push_back(&row);
    out << "\nper-mode aggregates (" << rows.size() << " sessions)\n";
    for (const auto& [mode, mode_rows] : by_mode) {
        double tau = 0.0, speedup = 0.0, edit = 0.0;
        int with_divergence = 0;
        for (const auto* row : mode_rows) {
            tau += row->summary.tau;
            speedup += row->summary.estimated_speedup;
            if (row->summary.divergence) {
                edit += row->summary.divergence->normalized_edit_distance;
                ++with_divergence;
            }
        }
        const auto n = static_cast<double>(mode_rows.size());
        out << "  " << mode << ": mean tau " << detail::fmt_double(tau / n) << ", mean est. speedup "
            << detail::fmt_double(speedup / n);
        if (with_divergence > 0) {
            out << ", mean edit distance vs target-only " << detail::fmt_double(edit / with_divergence);
        }
        out << "\n";
    }
    out << "\nper-session detail\n";
    for (const auto& row : rows) {
        out << "  prompt " << row.prompt_index;
        if (!row.axis.empty()) out << " " << row.axis << "=" << detail::fmt_double(row.value);
        out << " " << to_string(row.cfg.mode) << ": tau " << detail::fmt_double(row.summary.tau) << ", rounds "
            << row.summary.rounds << ", tokens " << row.summary.total_tokens << ", est. speedup "
            << detail::fmt_double(row.summary.estimated_speedup);
        if (row.summary.divergence) {
            out << ", exact_match " << (row.summary.divergence->exact_match ? 1 : 0) << ", edit distance "
                << detail::fmt_double(row.summary.divergence->normalized_edit_distance);
        }
        out << "\n";
    }
    out << "\nnote: speedups are analytic estimates from the cost profile, not wall-clock measurements.\n";
    return out.str();
}

/// Reads rows back from a run_summary.csv (comment lines skipped).
inline std::vector<SummaryRow> parse_summary_csv(std::istream& in) {
    std::vector<SummaryRow> rows;
    std::string line;
    bool sweep_columns = false;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true;
            sweep_columns = line.rfind("axis,", 0) == 0;
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        while (fields.size() < (sweep_columns ? 15u : 13u)) fields.emplace_back();
        std::size_t i = 0;
        SummaryRow row;
        if (sweep_columns) {
            row.axis = fields[i++];
            row.value = std::stod(fields[i++]);
        }
        row.prompt_index = std::stoi(fields[i++]);
        row.cfg.mode = decode_mode_from_string(fields[i++]);
        row.cfg.K = std::stoi(fields[i++]);
        row.cfg.W = std::stoi(fields[i++]);
        row.cfg.theta = std::stod(fields[i++]);
        row.cfg.mla = fields[i++] == "1";
        row.summary.tau = std::stod(fields[i++]);
        row.summary.rounds = std::stoi(fields[i++]);
        row.summary.total_tokens = std::stoll(fields[i++]);
        row.summary.estimated_speedup = std::stod(fields[i++]);
        if (!fields[i].empty()) {
            DivergenceReport d;
            d.exact_match = fields[i] == "1";
            d.common_prefix_len = std::stoi(fields[i + 1]);
            d.normalized_edit_distance = std::stod(fields[i + 2]);
            row.summary.divergence = d;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Command pipelines.

namespace detail {

inline EngineConfig session_config(const LoadedRun& run, DecodeMode mode, int prompt_index) {
    EngineConfig cfg = run.config.engine;
    cfg.mode = mode;
    cfg.sampling.seed = run.config.seed + static_cast<std::uint64_t>(prompt_index);
    return cfg;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << content;
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline void write_session_artifacts(const std::filesystem::path& dir, const std::string& stem,
                                    const SessionResult& session) {
    std::ostringstream trace;
    write_round_trace_csv(trace, session);
    write_file(dir / ("rounds_" + stem + ".csv"), trace.str());
    write_file(dir / ("transcript_" + stem + ".json"), transcript_json(session).dump(2) + "\n");
}

}  // namespace detail

struct CommandOptions {
    bool timestamp = true;
};

/// Runs every prompt in the configured mode and writes run_summary.csv,
/// per-round traces, transcripts, and report.txt to the output directory.
inline std::vector<SummaryRow> cmd_run(const LoadedRun& run, const CommandOptions& options = {}) {
    const auto& dir = run.config.output_dir;
    std::filesystem::create_directories(dir);
    const std::size_t n = run.prompt_tokens.size();
    std::vector<SummaryRow> rows(n);
    std::vector<SessionResult> sessions(n);
    detail::parallel_for(n, [&](std::size_t i) {
        const EngineConfig cfg = detail::session_config(run, run.config.engine.mode, static_cast<int>(i));
        sessions[i] = decode(run.target.model, run.drafter.model, run.prompt_tokens[i], cfg);
        rows[i] = SummaryRow{static_cast<int>(i), "", 0.0, cfg, summarize(sessions[i], run.cost)};
    });
    for (std::size_t i = 0; i < n; ++i) {
        detail::write_session_artifacts(dir, std::to_string(i), sessions[i]);
    }
    std::ostringstream csv;
    write_summary_csv(csv, rows, options.timestamp);
    detail::write_file(dir / "run_summary.csv", csv.str());
    detail::write_file(dir / "report.txt", render_report(rows));
    return rows;
}

/// Runs TargetOnly, StandardSPD, and Fly on every prompt with a shared
/// per-prompt seed; SPD rows carry divergence against the TargetOnly
/// decode of the same prompt.
inline std::vector<SummaryRow> cmd_compare(const LoadedRun& run, const CommandOptions& options = {}) {
    const auto& dir = run.config.output_dir;
    std::filesystem::create_directories(dir);
    const std::size_t n = run.prompt_tokens.size();
    static constexpr DecodeMode kModes[] = {DecodeMode::TargetOnly, DecodeMode::StandardSPD, DecodeMode::Fly};
    std::vector<std::array<SummaryRow, 3>> prompt_rows(n);
    std::vector<std::array<SessionResult, 3>> sessions(n);
    detail::parallel_for(n, [&](std::size_t i) {
        const auto& prompt = run.prompt_tokens[i];
        for (std::size_t m = 0; m < 3; ++m) {
            const EngineConfig cfg = detail::session_config(run, kModes[m], static_cast<int>(i));
            sessions[i][m] = decode(run.target.model, run.drafter.model, prompt, cfg);
            const SessionResult* baseline = m == 0 ? nullptr : &sessions[i][0];
            prompt_rows[i][m] =
                SummaryRow{static_cast<int>(i), "", 0.0, cfg, summarize(sessions[i][m], run.cost, baseline)};
        }
    });
    std::vector<SummaryRow> rows;
    rows.reserve(n * 3);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t m = 0; m < 3; ++m) {
            rows.push_back(prompt_rows[i][m]);
            detail::write_session_artifacts(dir, std::to_string(i) + "_" + to_string(kModes[m]), sessions[i][m]);
        }
    }
    std::ostringstream csv;
    write_summary_csv(csv, rows, options.timestamp);
    detail::write_file(dir / "run_summary.csv", csv.str());
    detail::write_file(dir / "report.txt", render_report(rows));
    return rows;
}

enum class SweepAxis { W, Theta, K };

inline SweepAxis sweep_axis_from_string(const std::string& s) {
    if (s == "W" || s == "w") return SweepAxis::W;
    if (s == "theta") return SweepAxis::Theta;
    if (s == "K" || s == "k") return SweepAxis::K;
    throw ConfigError("sweep: unknown axis '" + s + "' (expected W, theta, or K)");
}

inline std::string to_string(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::W: return "W";
        case SweepAxis::Theta: return "theta";
        case SweepAxis::K: return "K";
    }
    return "?";
}

/// One session per (prompt, axis value) in the configured mode, plus a
/// TargetOnly baseline per prompt for the divergence columns. Rows are
/// ordered by (prompt, value position) regardless of scheduling.
inline std::vector<SummaryRow> cmd_sweep(const LoadedRun& run, SweepAxis axis, const std::vector<double>& values,
                                         const CommandOptions& options = {}) {
    if (values.empty()) throw ConfigError("sweep: no axis values given");
    for (double v : values) {
        const bool ok = axis == SweepAxis::Theta ? v >= 0.0 && v <= 1.0
                        : axis == SweepAxis::W   ? v >= 0.0 && v == std::floor(v)
                                                 : v >= 1.0 && v == std::floor(v);
        if (!ok) throw ConfigError("sweep: value " + detail::fmt_double(v) + " out of domain for axis " +
                                   to_string(axis));
    }
    const auto& dir = run.config.output_dir;
    std::filesystem::create_directories(dir);
    const std::size_t n = run.prompt_tokens.size();
    std::vector<std::vector<SummaryRow>> prompt_rows(n);
    detail::parallel_for(n, [&](std::size_t i) {
        const auto& prompt = run.prompt_tokens[i];
        const SessionResult baseline =
            decode(run.target.model, run.drafter.model, prompt, detail::session_config(run, DecodeMode::TargetOnly, static_cast<int>(i)));
        for (double v : values) {
            EngineConfig cfg = detail::session_config(run, run.config.engine.mode, static_cast<int>(i));
            switch (axis) {
                case SweepAxis::W: cfg.W = static_cast<int>(v); break;
                case SweepAxis::Theta: cfg.theta = v; break;
                case SweepAxis::K: cfg.K = static_cast<int>(v); break;
            }
            const SessionResult session = decode(run.target.model, run.drafter.model, prompt, cfg);
            prompt_rows[i].push_back(SummaryRow{static_cast<int>(i), to_string(axis), v, cfg,
                                                summarize(session, run.cost, &baseline)});
        }
    });
    std::vector<SummaryRow> rows;
    rows.reserve(n * values.size());
    for (auto& pr : prompt_rows) {
        for (auto& row : pr) rows.push_back(std::move(row));
    }
    std::ostringstream csv;
    write_summary_csv(csv, rows, options.timestamp, /*sweep_columns=*/true);
    detail::write_file(dir / "sweep.csv", csv.str());
    detail::write_file(dir / "report.txt", render_report(rows));
    return rows;
}

/// Rebuilds report.txt from a previously written summary CSV.
inline std::string cmd_report(const std::filesystem::path& out_dir) {
    std::filesystem::path csv_path = out_dir / "run_summary.csv";
    if (!std::filesystem::exists(csv_path)) csv_path = out_dir / "sweep.csv";
    std::ifstream in(csv_path);
    if (!in) throw ConfigError("report: no run_summary.csv or sweep.csv in " + out_dir.string());
    const auto rows = parse_summary_csv(in);
    std::string report = render_report(rows);
    detail::write_file(out_dir / "report.txt", report);
    return report;
}

/// Trains a Markov model from a text corpus and persists it with its
/// tokenizer.
struct TrainInfo {
    std::int32_t vocab_size = 0;
    std::size_t table_entries = 0;
};

inline TrainInfo cmd_train_model(const std::filesystem::path& corpus_path, int order, double smoothing,
                                 const std::string& tokenizer_kind, const std::filesystem::path& out_path) {
    std::ifstream in(corpus_path, std::ios::binary);
    if (!in) throw ConfigError("train-model: cannot open corpus " + corpus_path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();

    Tokenizer tokenizer = [&] {
        if (tokenizer_kind == "byte" || tokenizer_kind == "byte_level") return Tokenizer::byte_level();
        if (tokenizer_kind == "whitespace") return Tokenizer::whitespace_from_corpus(text);
        throw ConfigError("train-model: unknown tokenizer '" + tokenizer_kind + "' (expected byte or whitespace)");
    }();
    const std::vector<TokenId> corpus = tokenizer.tokenize(text);
    const MarkovModel model = train_markov(corpus, order, smoothing, tokenizer.vocab());
    save_model(out_path, model, tokenizer);
    log_info("trained order-" + std::to_string(order) + " model on " + std::to_string(corpus.size()) + " tokens");
    return TrainInfo{tokenizer.vocab().size, model.table().size()};
}

}  // namespace fly
