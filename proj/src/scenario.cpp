#include "cive/scenario.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <memory>
#include <set>
#include <sstream>

namespace cive::scenario {

using defense::Decision;
using netsim::EndpointHandle;

std::string_view to_string(GroundTruth t) noexcept {
    return t == GroundTruth::Spoofed ? "spoofed" : "genuine";
}

ScenarioError::ScenarioError(Kind kind, const std::string& detail)
    : std::runtime_error(detail), kind_(kind) {}

const PartySpec* Scenario::party(const PhoneNumber& number) const {
    for (const auto& p : parties) {
        if (p.profile.number == number) return &p;
    }
    return nullptr;
}

// ---- loading --------------------------------------------------------------

namespace {

[[noreturn]] void parse_fail(const std::string& what) {
    throw ScenarioError(ScenarioError::Kind::ParseError, what);
}

[[noreturn]] void invalid(const std::string& what) {
    throw ScenarioError(ScenarioError::Kind::ValidationError, what);
}

void check_keys(const YAML::Node& node, const std::string& where, std::set<std::string> allowed) {
    if (!node.IsMap()) parse_fail(where + ": expected a mapping");
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (!allowed.count(key)) parse_fail(where + ": unknown key '" + key + "'");
    }
}

const YAML::Node require(const YAML::Node& node, const std::string& key, const std::string& where) {
    auto v = node[key];
    if (!v) parse_fail(where + ": missing '" + key + "'");
    return v;
}

PhoneNumber number_field(const YAML::Node& node, const std::string& key, const std::string& where) {
    const auto text = require(node, key, where).as<std::string>();
    auto n = PhoneNumber::try_parse(text);
    if (!n) parse_fail(where + ": '" + key + "' is not a phone number: " + text);
    return *n;
}

template <typename T>
T get_or(const YAML::Node& node, const std::string& key, T fallback) {
    auto v = node[key];
    return v ? v.as<T>() : fallback;
}

fsm::EndpointState parse_state(const std::string& kind, const std::optional<PhoneNumber>& peer,
                               const std::string& where) {
    if (kind == "idle") {
        if (peer) parse_fail(where + ": idle takes no peer");
        return fsm::Idle{};
    }
    if (!peer) parse_fail(where + ": state '" + kind + "' needs a peer");
    if (kind == "dialing") return fsm::Dialing{*peer};
    if (kind == "ringing") return fsm::Ringing{*peer};
    if (kind == "connected") return fsm::Connected{*peer};
    if (kind == "held") return fsm::Held{*peer};
    parse_fail(where + ": unknown state '" + kind + "'");
}

} // namespace

Scenario parse_scenario(const std::string& text) {
    Scenario s;
    try {
        const YAML::Node root = YAML::Load(text);
        check_keys(root, "scenario",
                   {"name", "seed", "cive", "ground_truth", "carriers", "parties", "origination"});
        s.name = require(root, "name", "scenario").as<std::string>();
        s.seed = get_or<std::uint64_t>(root, "seed", 0);
        s.cive_enabled = get_or<bool>(root, "cive", true);
        const auto truth = require(root, "ground_truth", "scenario").as<std::string>();
        if (truth == "spoofed") {
            s.ground_truth = GroundTruth::Spoofed;
        } else if (truth == "genuine") {
            s.ground_truth = GroundTruth::Genuine;
        } else {
            parse_fail("ground_truth must be 'spoofed' or 'genuine'");
        }

        const auto carriers = require(root, "carriers", "scenario");
        if (!carriers.IsSequence()) parse_fail("carriers: expected a list");
        for (const auto& c : carriers) {
            check_keys(c, "carrier", {"id", "enforce_caller_id", "link_delay_ms", "jitter_ms"});
            CarrierSpec spec;
            spec.id = require(c, "id", "carrier").as<std::string>();
            spec.policy.enforce_caller_id = get_or<bool>(c, "enforce_caller_id", false);
            spec.policy.link_delay_ms = get_or<SimMs>(c, "link_delay_ms", netsim::kDefaultLinkDelayMs);
            spec.policy.jitter_ms = get_or<SimMs>(c, "jitter_ms", 0);
            s.carriers.push_back(std::move(spec));
        }

        const auto parties = require(root, "parties", "scenario");
        if (!parties.IsSequence()) parse_fail("parties: expected a list");
        for (const auto& p : parties) {
            check_keys(p, "party",
                       {"label", "number", "carrier", "call_waiting", "voicemail", "state", "peer"});
            PartySpec spec;
            spec.profile.number = number_field(p, "number", "party");
            const std::string where = "party " + spec.profile.number.str();
            spec.label = get_or<std::string>(p, "label", "");
            spec.carrier = require(p, "carrier", where).as<std::string>();
            spec.profile.call_waiting = get_or<bool>(p, "call_waiting", false);
            spec.profile.voicemail_forward = get_or<bool>(p, "voicemail", false);
            std::optional<PhoneNumber> peer;
            if (p["peer"]) peer = number_field(p, "peer", where);
            spec.initial = parse_state(get_or<std::string>(p, "state", "idle"), peer, where);
            s.parties.push_back(std::move(spec));
        }

        const auto o = require(root, "origination", "scenario");
        check_keys(o, "origination", {"originator", "claimed", "target", "at_ms"});
        s.origination.originator = number_field(o, "originator", "origination");
        s.origination.claimed = number_field(o, "claimed", "origination");
        s.origination.target = number_field(o, "target", "origination");
        s.origination.at_ms = get_or<SimMs>(o, "at_ms", 0);
    } catch (const YAML::Exception& e) {
        parse_fail(std::string("yaml: ") + e.what());
    }
    validate(s);
    return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) parse_fail("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_scenario(buf.str());
}

void validate(const Scenario& s) {
    if (s.name.empty()) invalid("scenario name is empty");
    std::set<std::string> carrier_ids;
    for (const auto& c : s.carriers) {
        if (!carrier_ids.insert(c.id).second) invalid("duplicate carrier " + c.id);
        if (c.policy.link_delay_ms < 0 || c.policy.jitter_ms < 0) invalid("negative delay on " + c.id);
    }
    std::set<PhoneNumber> numbers;
    for (const auto& p : s.parties) {
        if (!numbers.insert(p.profile.number).second) invalid("duplicate number " + p.profile.number.str());
        if (!carrier_ids.count(p.carrier)) invalid("unknown carrier " + p.carrier);
    }
    for (const auto& p : s.parties) {
        if (auto peer = fsm::peer_of(p.initial); peer && !numbers.count(*peer)) {
            invalid("peer " + peer->str() + " of " + p.profile.number.str() + " is not registered");
        }
    }
    const auto& o = s.origination;
    for (const auto* n : {&o.originator, &o.claimed, &o.target}) {
        if (!numbers.count(*n)) invalid("origination references unregistered " + n->str());
    }
    const bool spoofed = o.claimed != o.originator;
    if (spoofed && s.ground_truth != GroundTruth::Spoofed) {
        invalid("claimed " + o.claimed.str() + " differs from originator " + o.originator.str() +
                " but ground_truth is genuine");
    }
    if (!spoofed && s.ground_truth != GroundTruth::Genuine) {
        invalid("claimed equals originator but ground_truth is spoofed");
    }
    const auto& init = s.party(o.originator)->initial;
    const bool ok = std::holds_alternative<fsm::Idle>(init) || init == fsm::EndpointState{fsm::Dialing{o.target}};
    if (!ok) invalid("originator must be idle or dialing the target");
}

// ---- running --------------------------------------------------------------

namespace {

std::string phone_or_null(const std::optional<PhoneNumber>& n) { return n ? n->str() : ""; }

} // namespace

RunReport run_scenario(const Scenario& s, const RunOptions& opts) {
    validate(s);
    netsim::Network net(opts.seed.value_or(s.seed));
    for (const auto& c : s.carriers) net.add_carrier(c.id, c.policy);

    const auto& o = s.origination;
    for (const auto& p : s.parties) {
        auto initial = p.initial;
        // The origination itself puts the caller into Dialing(target).
        if (p.profile.number == o.originator) initial = fsm::Idle{};
        net.register_subscriber(p.carrier, p.profile, initial);
    }
    const EndpointHandle caller = *net.resolve(o.originator);
    const EndpointHandle callee = *net.resolve(o.target);
    const bool cive = s.cive_enabled && !opts.disable_cive;

    RunReport report;
    report.scenario = s.name;
    report.ground_truth = s.ground_truth;

    const std::string in_call_id = net.originate_call(o.claimed, caller, o.target, o.at_ms);
    std::unique_ptr<defense::VerificationSession> session;

    auto pick_up = [&] {
        net.answer(callee, in_call_id);
        net.schedule(net.now() + kTalkMs, [&] { net.hangup(caller, in_call_id); });
    };

    net.on_incoming_call([&](const netsim::IncomingCall& call) {
        if (call.callee != callee || call.call_id != in_call_id) return;
        if (!cive) {
            net.schedule(net.now() + kUserAnswerMs, pick_up);
            return;
        }
        defense::IncomingCallContext ctx{call.displayed_caller, o.target, call.call_id,
                                         fsm::CallPhase::Ringing, call.at};
        session = std::make_unique<defense::VerificationSession>(net, ctx, opts.verifier);
        session->start([&, ctx](const defense::SignalingTrace& trace) {
            report.verdict = defense::decide(ctx, defense::extract_features(trace));
            if (report.verdict->decision == Decision::Spoofed) {
                net.reject(callee, in_call_id, sip::StatusCode(486));
            } else {
                pick_up();
            }
        });
    });

    report.sim_duration_ms = net.run_until_quiescent(opts.max_sim_ms);

    if (session) report.verification_trace = session->trace();
    if (report.verdict) {
        const bool said_legit = report.verdict->decision == Decision::Legit;
        report.inconclusive = report.verdict->decision == Decision::Inconclusive;
        report.match = !report.inconclusive && said_legit == (s.ground_truth == GroundTruth::Genuine);
    }
    report.displayed_caller = net.display_of(callee);
    if (const auto* rec = net.call(in_call_id)) report.origination_outcome = rec->outcome;
    report.trace_log = net.trace();
    report.trace_file = s.name + ".trace.jsonl";

    if (opts.out_dir) {
        std::filesystem::create_directories(*opts.out_dir);
        std::ofstream trace_out(*opts.out_dir / report.trace_file, std::ios::binary);
        net.write_trace(trace_out);
        std::ofstream result_out(*opts.out_dir / (s.name + ".result.json"), std::ios::binary);
        result_out << report_json(report) << '\n';
    }
    return report;
}

std::string report_json(const RunReport& r) {
    nlohmann::ordered_json j;
    j["scenario"] = r.scenario;
    j["ground_truth"] = to_string(r.ground_truth);
    j["match"] = r.match ? nlohmann::ordered_json(*r.match) : nlohmann::ordered_json(nullptr);
    j["inconclusive"] = r.inconclusive;
    j["trace_file"] = r.trace_file;
    j["sim_duration_ms"] = r.sim_duration_ms;
    j["displayed_caller"] = r.displayed_caller ? nlohmann::ordered_json(phone_or_null(r.displayed_caller))
                                               : nlohmann::ordered_json(nullptr);
    j["origination"] = r.origination_outcome
                           ? nlohmann::ordered_json(std::string(netsim::to_string(*r.origination_outcome)))
                           : nlohmann::ordered_json(nullptr);
    j["verdict"] = r.verdict ? defense::to_json(*r.verdict, r.trace_file) : nlohmann::ordered_json(nullptr);
    return j.dump(2);
}

// ---- matrix ---------------------------------------------------------------

namespace {

const PhoneNumber kA{"+15550001"};
const PhoneNumber kB{"+15550002"};
const PhoneNumber kC{"+15550003"};
const PhoneNumber kE{"+15550009"};

} // namespace

std::string_view to_string(MatrixState s) noexcept {
    switch (s) {
    case MatrixState::Idle: return "idle";
    case MatrixState::DialingCallee: return "dialing-b";
    case MatrixState::DialingOther: return "dialing-other";
    case MatrixState::Connected: return "connected";
    case MatrixState::Held: return "held";
    }
    return "?";
}

std::string MatrixCell::key() const {
    return std::string(to_string(a_state)) + "_cw" + (call_waiting ? "1" : "0") + "_vm" +
           (voicemail ? "1" : "0") + "_" + std::string(to_string(origination));
}

std::vector<MatrixCell> matrix_cells() {
    std::vector<MatrixCell> cells;
    for (auto st : {MatrixState::Idle, MatrixState::DialingCallee, MatrixState::DialingOther,
                    MatrixState::Connected, MatrixState::Held}) {
        for (bool cw : {false, true}) {
            for (bool vm : {false, true}) {
                for (auto origin : {GroundTruth::Genuine, GroundTruth::Spoofed}) {
                    const bool genuine = origin == GroundTruth::Genuine;
                    if (genuine != (st == MatrixState::DialingCallee)) continue;
                    cells.push_back(MatrixCell{st, cw, vm, origin});
                }
            }
        }
    }
    std::sort(cells.begin(), cells.end(),
              [](const MatrixCell& a, const MatrixCell& b) { return a.key() < b.key(); });
    return cells;
}

Scenario matrix_scenario(const MatrixCell& cell) {
    Scenario s;
    s.name = cell.key();
    s.carriers = {{"CN-A", {}}, {"CN-B", {}}, {"CN-E", {}}};
    s.ground_truth = cell.origination;
    s.cive_enabled = true;

    fsm::EndpointState a_state = fsm::Idle{};
    fsm::EndpointState c_state = fsm::Idle{};
    switch (cell.a_state) {
    case MatrixState::Idle: break;
    case MatrixState::DialingCallee: a_state = fsm::Dialing{kB}; break;
    case MatrixState::DialingOther:
        a_state = fsm::Dialing{kC};
        c_state = fsm::Ringing{kA};
        break;
    case MatrixState::Connected:
        a_state = fsm::Connected{kC};
        c_state = fsm::Connected{kA};
        break;
    case MatrixState::Held:
        a_state = fsm::Held{kC};
        c_state = fsm::Connected{kA};
        break;
    }
    s.parties = {
        PartySpec{"A", {kA, cell.call_waiting, cell.voicemail}, "CN-A", a_state},
        PartySpec{"B", {kB, false, false}, "CN-B", fsm::Idle{}},
        PartySpec{"C", {kC, false, false}, "CN-A", c_state},
        PartySpec{"E", {kE, false, false}, "CN-E", fsm::Idle{}},
    };
    const bool genuine = cell.origination == GroundTruth::Genuine;
    s.origination = Origination{genuine ? kA : kE, kA, kB, 0};
    return s;
}

std::size_t MatrixSummary::matches() const {
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.match; }));
}

std::size_t MatrixSummary::spoofed_judged_legit() const {
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const auto& r) {
        return r.cell.origination == GroundTruth::Spoofed && r.verdict == "Legit";
    }));
}

std::string MatrixSummary::csv() const {
    std::ostringstream out;
    out << "scenario,a_state,cw,vm,origination,inferred,verdict,truth,match\n";
    for (const auto& r : rows) {
        out << r.cell.key() << ',' << to_string(r.cell.a_state) << ',' << (r.cell.call_waiting ? 1 : 0)
            << ',' << (r.cell.voicemail ? 1 : 0) << ','
            << (r.cell.origination == GroundTruth::Genuine ? "genuine-from-A" : "spoofed-from-E") << ','
            << r.inferred << ',' << r.verdict << ',' << to_string(r.cell.origination) << ','
            << (r.match ? "true" : "false") << '\n';
    }
    return out.str();
}

std::string MatrixSummary::table() const {
    std::ostringstream out;
    out << std::left << std::setw(34) << "scenario" << std::setw(22) << "inferred" << std::setw(14)
        << "verdict" << std::setw(9) << "truth" << "match\n";
    for (const auto& r : rows) {
        out << std::setw(34) << r.cell.key() << std::setw(22) << r.inferred << std::setw(14) << r.verdict
            << std::setw(9) << to_string(r.cell.origination) << (r.match ? "yes" : "NO") << '\n';
    }
    out << matches() << "/" << rows.size() << " rows match; " << spoofed_judged_legit()
        << " spoofed rows judged Legit\n";
    return out.str();
}

MatrixSummary run_matrix(const RunOptions& opts) {
    MatrixSummary summary;
    for (const auto& cell : matrix_cells()) {
        const auto report = run_scenario(matrix_scenario(cell), opts);
        MatrixRow row;
        row.cell = cell;
        if (report.verdict) {
            row.inferred = std::string(defense::to_string(report.verdict->inferred));
            row.verdict = std::string(defense::to_string(report.verdict->decision));
        } else {
            row.inferred = "-";
            row.verdict = "-";
        }
        row.match = report.match.value_or(false);
        summary.rows.push_back(std::move(row));
    }
    return summary;
}

} // namespace cive::scenario
