#include "cive/scenario.hpp"

#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace cive;
using namespace cive::scenario;
using defense::Decision;
using defense::InferredState;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = CIVE_SOURCE_DIR;
const PhoneNumber A{"+15550001"};
const PhoneNumber B{"+15550002"};
const PhoneNumber E{"+15550009"};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

ScenarioError::Kind error_kind(const std::string& text) {
    try {
        parse_scenario(text);
    } catch (const ScenarioError& e) {
        return e.kind();
    }
    FAIL("scenario accepted:\n" << text);
    return ScenarioError::Kind::ParseError;
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("cive_scenario_test_" + name);
    fs::remove_all(p);
    return p;
}

const std::string kMinimal = R"(name: T
ground_truth: spoofed
carriers:
  - id: CN-A
  - id: CN-B
parties:
  - number: "+15550001"
    carrier: CN-A
  - number: "+15550002"
    carrier: CN-B
  - number: "+15550009"
    carrier: CN-A
origination:
  originator: "+15550009"
  claimed: "+15550001"
  target: "+15550002"
)";

std::string replace(std::string s, const std::string& from, const std::string& to) {
    auto pos = s.find(from);
    REQUIRE(pos != std::string::npos);
    return s.replace(pos, from.size(), to);
}

} // namespace

TEST_CASE("bundled scenarios load") {
    auto c1 = load_scenario(kRoot / "scenarios/c1.scn");
    CHECK(c1.name == "C1");
    CHECK(c1.ground_truth == GroundTruth::Genuine);
    CHECK(c1.origination.originator == A);
    CHECK(c1.origination.claimed == A);
    CHECK(c1.origination.target == B);
    CHECK(c1.party(A)->initial == fsm::EndpointState{fsm::Dialing{B}});

    auto c2 = load_scenario(kRoot / "scenarios/c2.scn");
    CHECK(c2.ground_truth == GroundTruth::Spoofed);
    CHECK(c2.party(A)->initial == fsm::EndpointState{fsm::Idle{}});

    auto c3 = load_scenario(kRoot / "scenarios/c3.scn");
    CHECK(c3.origination.originator == E);
    CHECK(c3.origination.claimed == A);
    CHECK(c3.ground_truth == GroundTruth::Spoofed);
    CHECK(std::holds_alternative<fsm::Connected>(c3.party(A)->initial));
    CHECK(c3.party(A)->profile.call_waiting);
}

TEST_CASE("scenario defaults") {
    auto s = parse_scenario(kMinimal);
    CHECK(s.seed == 0);
    CHECK(s.cive_enabled);
    CHECK(s.origination.at_ms == 0);
    CHECK(s.carriers[0].policy.link_delay_ms == netsim::kDefaultLinkDelayMs);
    CHECK_FALSE(s.carriers[0].policy.enforce_caller_id);
}

TEST_CASE("validation errors") {
    using K = ScenarioError::Kind;
    CHECK(error_kind(replace(kMinimal, "ground_truth: spoofed", "ground_truth: genuine")) == K::ValidationError);
    CHECK(error_kind(replace(kMinimal, R"(claimed: "+15550001")", R"(claimed: "+15550009")")) == K::ValidationError);
    CHECK(error_kind(replace(kMinimal, R"(target: "+15550002")", R"(target: "+15550077")")) == K::ValidationError);
    CHECK(error_kind(replace(kMinimal, R"(claimed: "+15550001")", R"(claimed: "+15550077")")) == K::ValidationError);
    CHECK(error_kind(replace(kMinimal, "    carrier: CN-B", "    carrier: CN-Q")) == K::ValidationError);
    CHECK(error_kind(replace(kMinimal, R"(  - number: "+15550009")", R"(  - number: "+15550002")")) == K::ValidationError);
    CHECK(error_kind(replace(kMinimal, "  - id: CN-B", "  - id: CN-A")) == K::ValidationError);
    CHECK(error_kind(replace(kMinimal, R"(  - number: "+15550001"
    carrier: CN-A)", R"(  - number: "+15550001"
    carrier: CN-A
    state: connected
    peer: "+15550066")")) == K::ValidationError);
    CHECK(error_kind(replace(kMinimal, R"(  - number: "+15550009"
    carrier: CN-A)", R"(  - number: "+15550009"
    carrier: CN-A
    state: connected
    peer: "+15550001")")) == K::ValidationError);
}

TEST_CASE("parse errors") {
    using K = ScenarioError::Kind;
    CHECK(error_kind("name: [unterminated") == K::ParseError);
    CHECK(error_kind("- just\n- a list\n") == K::ParseError);
    CHECK(error_kind(replace(kMinimal, "name: T", "name: T\ncolour: blue")) == K::ParseError);
    CHECK(error_kind(replace(kMinimal, "ground_truth: spoofed", "ground_truth: maybe")) == K::ParseError);
    CHECK(error_kind(replace(kMinimal, R"(target: "+15550002")", R"(target: "5550002")")) == K::ParseError);
    CHECK(error_kind(replace(kMinimal, R"(    carrier: CN-B)", "    carrier: CN-B\n    state: ringing")) == K::ParseError);
    CHECK(error_kind(replace(kMinimal, R"(    carrier: CN-B)", "    carrier: CN-B\n    state: sleeping\n    peer: \"+15550001\"")) ==
          K::ParseError);
    CHECK(error_kind(replace(kMinimal, "origination:\n", "origination_typo:\n")) == K::ParseError);
    CHECK_THROWS_AS(load_scenario(kRoot / "scenarios/does-not-exist.scn"), ScenarioError);
}

TEST_CASE("C1 is judged legit") {
    auto r = run_scenario(load_scenario(kRoot / "scenarios/c1.scn"));
    REQUIRE(r.verdict);
    CHECK(r.verdict->decision == Decision::Legit);
    CHECK(r.match == true);
    CHECK_FALSE(r.inconclusive);
    CHECK(r.verdict->features.pem_180 == sip::PemValue::SendOnly);
    CHECK(r.displayed_caller == A);
    CHECK(r.trace_file == "C1.trace.jsonl");
}

TEST_CASE("C2 is judged spoofed from an idle claimed party") {
    auto r = run_scenario(load_scenario(kRoot / "scenarios/c2.scn"));
    REQUIRE(r.verdict);
    CHECK(r.verdict->decision == Decision::Spoofed);
    CHECK(r.verdict->inferred == InferredState::Idle);
    CHECK(r.match == true);
    CHECK(r.sim_duration_ms < 60000);
}

TEST_CASE("C3 is judged spoofed from a connected claimed party") {
    auto r = run_scenario(load_scenario(kRoot / "scenarios/c3.scn"));
    REQUIRE(r.verdict);
    CHECK(r.verdict->decision == Decision::Spoofed);
    CHECK(r.verdict->inferred == InferredState::Connected);
    CHECK(r.verdict->features.alert_180 == sip::AlertUrn::CallWaiting);
    CHECK(r.match == true);
}

TEST_CASE("without verification the spoofed ID reaches the callee") {
    RunOptions opts;
    opts.disable_cive = true;
    auto s = load_scenario(kRoot / "scenarios/c2.scn");
    auto r = run_scenario(s, opts);
    CHECK_FALSE(r.verdict.has_value());
    CHECK_FALSE(r.match.has_value());
    CHECK_FALSE(r.verification_trace.has_value());
    CHECK(r.displayed_caller == A);
    CHECK(r.origination_outcome == netsim::CallOutcome::Routed);

    s.cive_enabled = false;
    CHECK_FALSE(run_scenario(s).verdict.has_value());
}

TEST_CASE("a strict originating carrier blocks the same call") {
    auto s = load_scenario(kRoot / "scenarios/c2.scn");
    for (auto& c : s.carriers) {
        if (c.id == "CN-E") c.policy.enforce_caller_id = true;
    }
    auto r = run_scenario(s);
    CHECK(r.origination_outcome == netsim::CallOutcome::RejectedByPolicy);
    CHECK_FALSE(r.displayed_caller.has_value());
    CHECK_FALSE(r.verdict.has_value());
}

TEST_CASE("the spoofed call is refused after a spoofed verdict") {
    auto r = run_scenario(load_scenario(kRoot / "scenarios/c2.scn"));
    bool caller_got_486 = false;
    for (const auto& rec : r.trace_log) {
        auto m = sip::parse_message(rec.sip);
        if (rec.to_hop == E.str() && m.code() == 486) caller_got_486 = true;
    }
    CHECK(caller_got_486);
}

TEST_CASE("runs are reproducible byte for byte") {
    for (const char* name : {"c1", "c2", "c3"}) {
        CAPTURE(name);
        const auto s = load_scenario(kRoot / "scenarios" / (std::string(name) + ".scn"));
        RunOptions o1, o2;
        o1.out_dir = scratch(std::string(name) + "_1");
        o2.out_dir = scratch(std::string(name) + "_2");
        run_scenario(s, o1);
        run_scenario(s, o2);
        for (const auto& file : {s.name + ".trace.jsonl", s.name + ".result.json"}) {
            const auto a = slurp(*o1.out_dir / file);
            CHECK_FALSE(a.empty());
            CHECK(a == slurp(*o2.out_dir / file));
        }
    }
}

TEST_CASE("seed override changes jitter only when jitter is configured") {
    auto s = load_scenario(kRoot / "scenarios/c2.scn");
    RunOptions a, b;
    a.seed = 1;
    b.seed = 2;
    CHECK(run_scenario(s, a).trace_log == run_scenario(s, b).trace_log);
    for (auto& c : s.carriers) c.policy.jitter_ms = 20;
    const auto ra = run_scenario(s, a);
    const auto rb = run_scenario(s, b);
    CHECK(ra.trace_log != rb.trace_log);
    REQUIRE(ra.verdict);
    REQUIRE(rb.verdict);
    CHECK(ra.verdict->decision == Decision::Spoofed);
    CHECK(rb.verdict->decision == Decision::Spoofed);
}

TEST_CASE("result file contents") {
    RunOptions opts;
    opts.out_dir = scratch("result");
    run_scenario(load_scenario(kRoot / "scenarios/c1.scn"), opts);
    const auto j = nlohmann::json::parse(slurp(*opts.out_dir / "C1.result.json"));
    CHECK(j["scenario"] == "C1");
    CHECK(j["ground_truth"] == "genuine");
    CHECK(j["match"] == true);
    CHECK(j["trace_file"] == "C1.trace.jsonl");
    CHECK(j["verdict"]["decision"] == "Legit");
    CHECK(j["verdict"]["trace_ref"] == "C1.trace.jsonl");
    std::ifstream in(*opts.out_dir / "C1.trace.jsonl");
    CHECK_FALSE(netsim::read_trace(in).empty());
}

TEST_CASE("report match follows verdict and ground truth") {
    for (const auto& cell : matrix_cells()) {
        auto r = run_scenario(matrix_scenario(cell));
        REQUIRE(r.verdict);
        const bool legit = r.verdict->decision == Decision::Legit;
        if (r.verdict->decision == Decision::Inconclusive) {
            CHECK(r.inconclusive);
            CHECK(r.match == false);
        } else {
            CHECK(r.match == (legit == (r.ground_truth == GroundTruth::Genuine)));
        }
    }
}

TEST_CASE("matrix cells") {
    const auto cells = matrix_cells();
    CHECK(cells.size() == 20);
    for (const auto& c : cells) {
        const bool genuine = c.origination == GroundTruth::Genuine;
        CHECK(genuine == (c.a_state == MatrixState::DialingCallee));
        CHECK_NOTHROW(validate(matrix_scenario(c)));
    }
}

TEST_CASE("matrix agrees with the hand-derived expectation") {
    // Expected inference per cell from the FSM's response rules:
    // dialing B -> sendonly; idle -> sendrecv; busy line with call waiting ->
    // call-waiting alert; otherwise voicemail (181) or busy (486).
    auto expected = [](const MatrixCell& c) -> std::string {
        switch (c.a_state) {
        case MatrixState::DialingCallee: return "Dialing";
        case MatrixState::Idle: return "Idle";
        case MatrixState::DialingOther: return "BusyNoWaiting";
        case MatrixState::Connected:
        case MatrixState::Held:
            if (c.call_waiting) return "Connected";
            return c.voicemail ? "ForwardedToVoicemail" : "BusyNoWaiting";
        }
        return "";
    };
    const auto summary = run_matrix();
    REQUIRE(summary.rows.size() == 20);
    for (const auto& row : summary.rows) {
        CAPTURE(row.cell.key());
        CHECK(row.inferred == expected(row.cell));
        CHECK(row.verdict == (row.cell.origination == GroundTruth::Genuine ? "Legit" : "Spoofed"));
        CHECK(row.match);
    }
    CHECK(summary.matches() == 20);
    CHECK(summary.spoofed_judged_legit() == 0);
}

TEST_CASE("matrix CSV matches the pinned summary") {
    CHECK(run_matrix().csv() == slurp(kRoot / "tests/golden/matrix.csv"));
}
