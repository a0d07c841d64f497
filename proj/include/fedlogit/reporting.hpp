#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedlogit/data.hpp"
#include "fedlogit/errors.hpp"
#include "fedlogit/federation.hpp"
#include "fedlogit/nn.hpp"

namespace fedlogit {

// Test accuracy of a model: fraction of rowwise-argmax predictions matching
// the labels, ties broken toward the lowest class index.
inline double evaluate(const Model& model, const Dataset& test_set) {
    return detail::accuracy(model, test_set);
}

// First round whose mean accuracy is within `threshold` of the final round's.
inline int convergence_round(std::span<const RoundMetrics> rounds, double threshold = 0.01) {
    if (rounds.empty()) throw InputError("convergence_round: no rounds");
    const double final_acc = rounds.back().mean_accuracy;
    for (const auto& r : rounds)
        if (std::abs(r.mean_accuracy - final_acc) <= threshold) return r.round;
    return rounds.back().round;
}

// Everything one sweep cell (strategy, k, seed) produced.
struct ExperimentReport {
    nlohmann::ordered_json config_echo;
    std::string strategy;
    std::size_t k = 0;
    std::size_t clients = 0;
    std::uint64_t seed = 0;
    std::vector<RoundMetrics> rounds;
    double final_mean_accuracy = 0.0;
    double reference_accuracy = 0.0;
    int convergence_round = 0;
    std::uint64_t total_uplink_bytes = 0;
    std::uint64_t weight_baseline_bytes_per_round = 0;
};

inline ExperimentReport make_report(nlohmann::ordered_json config_echo, const std::string& strategy,
                                    std::size_t k, std::size_t clients, std::uint64_t seed,
                                    std::vector<RoundMetrics> rounds, double reference_accuracy,
                                    double convergence_threshold = 0.01) {
    if (rounds.empty()) throw InputError("make_report: no rounds");
    ExperimentReport report;
    report.config_echo = std::move(config_echo);
    report.strategy = strategy;
    report.k = k;
    report.clients = clients;
    report.seed = seed;
    report.final_mean_accuracy = rounds.back().mean_accuracy;
    report.reference_accuracy = reference_accuracy;
    report.convergence_round = convergence_round(rounds, convergence_threshold);
    for (const auto& r : rounds) report.total_uplink_bytes += r.uplink_bytes;
    report.weight_baseline_bytes_per_round = rounds.back().weight_baseline_bytes;
    report.rounds = std::move(rounds);
    return report;
}

namespace detail {

// Shortest exact decimal form; deterministic across runs.
inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::ofstream open_text(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    return out;
}

}  // namespace detail

// One JSON object per round.
inline void write_round_log(const ExperimentReport& report, const std::filesystem::path& path) {
    auto out = detail::open_text(path);
    for (const auto& r : report.rounds) {
        nlohmann::ordered_json j;
        j["round"] = r.round;
        j["client_accuracy"] = r.client_accuracy;
        j["mean_accuracy"] = r.mean_accuracy;
        j["uplink_bytes"] = r.uplink_bytes;
        j["weight_baseline_bytes"] = r.weight_baseline_bytes;
        j["wall_seconds"] = r.wall_seconds;
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("write failed: " + path.string());
}

inline constexpr const char* kSummaryHeader =
    "strategy,k,M,final_accuracy,reference_accuracy,convergence_round,uplink_bytes";

inline std::string summary_csv_row(const ExperimentReport& r) {
    return r.strategy + "," + std::to_string(r.k) + "," + std::to_string(r.clients) + "," +
           detail::fmt_double(r.final_mean_accuracy) + "," +
           detail::fmt_double(r.reference_accuracy) + "," + std::to_string(r.convergence_round) +
           "," + std::to_string(r.total_uplink_bytes);
}

inline void write_summary_csv(std::span<const ExperimentReport> reports,
                              const std::filesystem::path& path) {
    auto out = detail::open_text(path);
    out << kSummaryHeader << "\n";
    for (const auto& r : reports) out << summary_csv_row(r) << "\n";
    if (!out) throw IoError("write failed: " + path.string());
}

// Plot-ready round-vs-accuracy curves.
inline void write_curves_csv(std::span<const ExperimentReport> reports,
                             const std::filesystem::path& path) {
    auto out = detail::open_text(path);
    out << "strategy,k,seed,round,mean_accuracy\n";
    for (const auto& r : reports)
        for (const auto& round : r.rounds)
            out << r.strategy << "," << r.k << "," << r.seed << "," << round.round << ","
                << detail::fmt_double(round.mean_accuracy) << "\n";
    if (!out) throw IoError("write failed: " + path.string());
}

// Writes config.json, rounds.jsonl, summary.csv and curves.csv into `dir`.
inline void emit_report(const ExperimentReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());
    {
        auto out = detail::open_text(dir / "config.json");
        out << report.config_echo.dump(2) << "\n";
    }
    write_round_log(report, dir / "rounds.jsonl");
    write_summary_csv({&report, 1}, dir / "summary.csv");
    write_curves_csv({&report, 1}, dir / "curves.csv");
}

}  // namespace fedlogit
