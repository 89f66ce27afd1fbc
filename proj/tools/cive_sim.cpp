// cive-sim: run scenarios, sweep the state matrix, or re-verify a saved trace.

#include "cive/scenario.hpp"
#include "cive/verifier.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>

namespace {

using namespace cive;

int exit_code_for(const scenario::RunReport& r) {
    if (!r.verdict) return 0;
    if (r.inconclusive) return 2;
    return r.match.value_or(false) ? 0 : 1;
}

std::uint64_t default_seed() {
    if (const char* env = std::getenv("CIVE_SIM_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            std::cerr << "ignoring malformed CIVE_SIM_SEED=" << env << '\n';
        }
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deterministic SIP call-setup simulator with callee-side caller-ID verification"};
    app.require_subcommand(1);

    std::string scn_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    bool no_cive = false;
    auto* run = app.add_subcommand("run", "Run one scenario file");
    run->add_option("scenario", scn_path, "Path to a .scn file")->required()->check(CLI::ExistingFile);
    run->add_option("--seed", seed, "Override the scenario seed (default: CIVE_SIM_SEED or the file's seed)");
    run->add_option("--out", out_dir, "Directory for the trace and result files");
    run->add_flag("--no-cive", no_cive, "Disable verification");

    auto* matrix = app.add_subcommand("matrix", "Run every caller-state cell and print a CSV");
    matrix->add_option("--out", out_dir, "Directory for traces, results and matrix.csv");

    std::string trace_path;
    std::optional<std::string> call_id;
    auto* parse = app.add_subcommand("parse", "Recompute a verdict from a saved trace log");
    parse->add_option("trace", trace_path, "Path to a .trace.jsonl file")->required()->check(CLI::ExistingFile);
    parse->add_option("--call-id", call_id, "Call-ID of the verification leg");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            const auto s = scenario::load_scenario(scn_path);
            scenario::RunOptions opts;
            opts.out_dir = out_dir;
            opts.disable_cive = no_cive;
            if (seed) {
                opts.seed = seed;
            } else if (std::getenv("CIVE_SIM_SEED")) {
                opts.seed = default_seed();
            }
            const auto report = scenario::run_scenario(s, opts);
            std::cout << scenario::report_json(report) << '\n';
            return exit_code_for(report);
        }
        if (*matrix) {
            scenario::RunOptions opts;
            opts.out_dir = out_dir;
            opts.seed = default_seed();
            const auto summary = scenario::run_matrix(opts);
            std::ofstream(std::filesystem::path(out_dir) / "matrix.csv") << summary.csv();
            std::cout << summary.csv() << '\n' << summary.table();
            return summary.matches() == summary.rows.size() ? 0 : 1;
        }
        if (*parse) {
            std::ifstream in(trace_path);
            const auto records = netsim::read_trace(in);
            const auto trace = defense::trace_from_log(records, call_id);
            if (trace.entries.empty()) throw defense::VerificationError(
                defense::VerificationError::Kind::EmptyTrace, "no verification leg in " + trace_path);
            const auto& invite = trace.entries.front().msg;
            defense::IncomingCallContext ctx{invite.to, invite.from, "", fsm::CallPhase::Ringing, 0};
            const auto verdict = defense::decide(ctx, defense::extract_features(trace));
            std::cout << defense::to_json(verdict, std::filesystem::path(trace_path).filename().string()).dump(2)
                      << '\n';
            return verdict.decision == defense::Decision::Inconclusive ? 2 : 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
