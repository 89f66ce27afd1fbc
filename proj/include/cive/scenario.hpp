#pragma once

// Declarative scenarios, the end-to-end runner, and the exhaustive
// state matrix used to score the verifier against ground truth.

#include "cive/call_fsm.hpp"
#include "cive/netsim.hpp"
#include "cive/verifier.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cive::scenario {

using netsim::SimMs;
using sip::PhoneNumber;

/// Ring time before the callee picks up when no verification runs.
inline constexpr SimMs kUserAnswerMs = 3000;
/// Conversation length before the caller hangs up an answered call.
inline constexpr SimMs kTalkMs = 2000;
inline constexpr SimMs kDefaultSimBudgetMs = 60000;

enum class GroundTruth { Spoofed, Genuine };

std::string_view to_string(GroundTruth t) noexcept;

struct CarrierSpec {
    std::string id;
    netsim::GatewayPolicy policy;
};

struct PartySpec {
    std::string label;
    fsm::CalleeProfile profile;
    std::string carrier;
    fsm::EndpointState initial = fsm::Idle{};
};

struct Origination {
    PhoneNumber originator;
    PhoneNumber claimed;
    PhoneNumber target;
    SimMs at_ms = 0;
};

struct Scenario {
    std::string name;
    std::vector<CarrierSpec> carriers;
    std::vector<PartySpec> parties;
    Origination origination;
    bool cive_enabled = true;
    std::uint64_t seed = 0;
    GroundTruth ground_truth = GroundTruth::Genuine;

    const PartySpec* party(const PhoneNumber& number) const;
};

class ScenarioError : public std::runtime_error {
public:
    enum class Kind { ParseError, ValidationError };
    ScenarioError(Kind kind, const std::string& detail);
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Parses the YAML scenario format (see scenarios/README.md) and validates it.
Scenario parse_scenario(const std::string& text);
Scenario load_scenario(const std::filesystem::path& path);
/// Throws ValidationError on the first violated invariant.
void validate(const Scenario& s);

struct RunOptions {
    std::optional<std::filesystem::path> out_dir;
    std::optional<std::uint64_t> seed;
    bool disable_cive = false;
    defense::VerifierConfig verifier;
    SimMs max_sim_ms = kDefaultSimBudgetMs;
};

struct RunReport {
    std::string scenario;
    GroundTruth ground_truth = GroundTruth::Genuine;
    std::optional<defense::Verdict> verdict;
    /// Empty when no verdict was produced.
    std::optional<bool> match;
    bool inconclusive = false;
    std::string trace_file;
    SimMs sim_duration_ms = 0;
    std::optional<PhoneNumber> displayed_caller;
    std::optional<netsim::CallOutcome> origination_outcome;
    std::optional<defense::SignalingTrace> verification_trace;
    std::vector<netsim::TraceRecord> trace_log;
};

/// Builds the federation, places the call, verifies it while it rings (when
/// enabled), and lets every transaction finish. Writes
/// `<out>/<name>.trace.jsonl` and `<out>/<name>.result.json` when out_dir is set.
RunReport run_scenario(const Scenario& s, const RunOptions& opts = {});

std::string report_json(const RunReport& r);

// ---- matrix ---------------------------------------------------------------

enum class MatrixState { Idle, DialingCallee, DialingOther, Connected, Held };

std::string_view to_string(MatrixState s) noexcept;

struct MatrixCell {
    MatrixState a_state = MatrixState::Idle;
    bool call_waiting = false;
    bool voicemail = false;
    GroundTruth origination = GroundTruth::Spoofed;

    std::string key() const;
};

/// Every compatible cell, in key order. A genuine call needs A dialing B;
/// a spoofed one is skipped when A is itself dialing B.
std::vector<MatrixCell> matrix_cells();
Scenario matrix_scenario(const MatrixCell& cell);

struct MatrixRow {
    MatrixCell cell;
    std::string inferred;
    std::string verdict;
    bool match = false;
};

struct MatrixSummary {
    std::vector<MatrixRow> rows;

    std::size_t matches() const;
    std::size_t spoofed_judged_legit() const;
    /// scenario,a_state,cw,vm,origination,inferred,verdict,truth,match
    std::string csv() const;
    std::string table() const;
};

MatrixSummary run_matrix(const RunOptions& opts = {});

} // namespace cive::scenario
