#include "cive/netsim.hpp"

#include "doctest.h"

#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>

using namespace cive;
using namespace cive::netsim;
using fsm::CalleeProfile;
using sip::SipMethod;
using sip::SipMessage;
using sip::StatusCode;

namespace {

const PhoneNumber A{"+15550001"};
const PhoneNumber B{"+15550002"};
const PhoneNumber C{"+15550003"};
const PhoneNumber E{"+15550009"};

SimError::Kind sim_error_kind(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const SimError& e) {
        return e.kind();
    }
    FAIL("no SimError thrown");
    return SimError::Kind::UnknownCall;
}

std::vector<const TraceRecord*> records_of(const Network& net, const std::string& call_id) {
    std::vector<const TraceRecord*> out;
    for (const auto& r : net.trace()) {
        if (sip::parse_message(r.sip).call_id == call_id) out.push_back(&r);
    }
    return out;
}

bool delivered_to(const Network& net, const PhoneNumber& who, SipMethod method, int code = 0) {
    for (const auto& r : net.trace()) {
        if (r.to_hop != who.str()) continue;
        auto m = sip::parse_message(r.sip);
        if (m.method() == method && m.code() == code) return true;
    }
    return false;
}

} // namespace

TEST_CASE("registration and routing") {
    Network net;
    net.add_carrier("CN-A");
    net.add_carrier("CN-B");
    auto ha = net.register_subscriber("CN-A", {A});
    auto hb = net.register_subscriber("CN-B", {B});
    CHECK(net.resolve(A)->index == ha.index);
    CHECK(net.resolve(B)->index == hb.index);
    CHECK_FALSE(net.resolve(C).has_value());
    CHECK(net.number_of(hb) == B);
    CHECK(net.carrier_of(hb) == "CN-B");
    CHECK(sim_error_kind([&] { net.register_subscriber("CN-B", {A}); }) == SimError::Kind::DuplicateNumber);
    CHECK(sim_error_kind([&] { net.register_subscriber("CN-Z", {C}); }) == SimError::Kind::UnknownCarrier);
    CHECK(sim_error_kind([&] { net.number_of(EndpointHandle{42}); }) == SimError::Kind::UnknownEndpoint);
}

TEST_CASE("inter-carrier INVITE follows the hop schedule") {
    Network net;
    net.add_carrier("CN-A");
    net.add_carrier("CN-B");
    auto ha = net.register_subscriber("CN-A", {A});
    net.register_subscriber("CN-B", {B});
    const auto id = net.originate_call(A, ha, B, 0);
    net.run_until_quiescent(60000);

    std::vector<const TraceRecord*> invites;
    for (const auto* r : records_of(net, id)) {
        if (sip::parse_message(r->sip).is_request() && sip::parse_message(r->sip).method() == SipMethod::Invite) {
            invites.push_back(r);
        }
    }
    REQUIRE(invites.size() == 3);
    // Hand-computed: endpoint -> own gateway -> peer gateway -> endpoint, 50 ms each.
    CHECK(invites[0]->t_ms == 50);
    CHECK(invites[0]->from_hop == "+15550001");
    CHECK(invites[0]->to_hop == "gw.CN-A");
    CHECK(invites[0]->dir == "egress");
    CHECK(invites[0]->carrier == "CN-A");
    CHECK(invites[1]->t_ms == 100);
    CHECK(invites[1]->from_hop == "gw.CN-A");
    CHECK(invites[1]->to_hop == "gw.CN-B");
    CHECK(invites[1]->carrier == "CN-A");
    CHECK(invites[2]->t_ms == 150);
    CHECK(invites[2]->to_hop == "+15550002");
    CHECK(invites[2]->dir == "ingress");
    CHECK(invites[2]->carrier == "CN-B");

    // The callee answers at 150 with 100/183/180; the 100 is back at A at 300.
    const auto* first_back = records_of(net, id).at(3);
    CHECK(first_back->t_ms == 200);
    const TraceRecord* trying_at_a = nullptr;
    for (const auto* r : records_of(net, id)) {
        if (r->to_hop == "+15550001" && sip::parse_message(r->sip).code() == 100) trying_at_a = r;
    }
    REQUIRE(trying_at_a);
    CHECK(trying_at_a->t_ms == 300);
}

TEST_CASE("intra-carrier calls skip the interconnect") {
    Network net;
    net.add_carrier("CN-A");
    auto ha = net.register_subscriber("CN-A", {A});
    net.register_subscriber("CN-A", {C});
    const auto id = net.originate_call(A, ha, C, 0);
    net.run_until_quiescent(60000);
    auto recs = records_of(net, id);
    REQUIRE(recs.size() >= 2);
    CHECK(recs[0]->t_ms == 50);
    CHECK(recs[1]->t_ms == 100);
    CHECK(recs[1]->from_hop == "gw.CN-A");
    CHECK(recs[1]->to_hop == "+15550003");
}

TEST_CASE("lax gateway lets a spoofed caller ID through") {
    Network net;
    net.add_carrier("CN-A");
    net.add_carrier("CN-B");
    net.add_carrier("CN-E");
    net.register_subscriber("CN-A", {A});
    auto hb = net.register_subscriber("CN-B", {B});
    auto he = net.register_subscriber("CN-E", {E});
    std::optional<IncomingCall> seen;
    net.on_incoming_call([&](const IncomingCall& c) { seen = c; });
    const auto id = net.originate_call(A, he, B, 0);
    net.run_until_quiescent(60000);
    CHECK(net.display_of(hb) == A);
    REQUIRE(seen);
    CHECK(seen->displayed_caller == A);
    CHECK(seen->call_id == id);
    const auto* rec = net.call(id);
    REQUIRE(rec);
    CHECK(rec->outcome == CallOutcome::Routed);
    CHECK(rec->claimed_from == A);
    CHECK(rec->authenticated_from == E);
    CHECK(net.state_of(hb) == fsm::EndpointState{fsm::Ringing{A}});
    CHECK(net.state_of(he) == fsm::EndpointState{fsm::Dialing{B}});
}

TEST_CASE("strict gateway refuses a spoofed caller ID") {
    Network net;
    net.add_carrier("CN-A");
    net.add_carrier("CN-B");
    net.add_carrier("CN-E", GatewayPolicy{true});
    net.register_subscriber("CN-A", {A});
    auto hb = net.register_subscriber("CN-B", {B});
    auto he = net.register_subscriber("CN-E", {E});
    const auto id = net.originate_call(A, he, B, 0);
    net.run_until_quiescent(60000);
    CHECK(net.call(id)->outcome == CallOutcome::RejectedByPolicy);
    CHECK_FALSE(delivered_to(net, B, SipMethod::Invite));
    CHECK_FALSE(net.display_of(hb).has_value());
    CHECK(delivered_to(net, E, SipMethod::Invite, 480));
    CHECK(net.state_of(he) == fsm::EndpointState{fsm::Idle{}});
}

TEST_CASE("honest calls behave the same under both policies") {
    auto run = [](bool strict) {
        Network net(5);
        net.add_carrier("CN-A", GatewayPolicy{strict});
        net.add_carrier("CN-B");
        auto ha = net.register_subscriber("CN-A", {A});
        net.register_subscriber("CN-B", {B});
        net.originate_call(A, ha, B, 0);
        net.run_until_quiescent(60000);
        std::ostringstream out;
        net.write_trace(out);
        return out.str();
    };
    CHECK(run(false) == run(true));
}

TEST_CASE("unroutable destination gets 480") {
    Network net;
    net.add_carrier("CN-A");
    auto ha = net.register_subscriber("CN-A", {A});
    const auto id = net.originate_call(A, ha, PhoneNumber("+19998887777"), 0);
    net.run_until_quiescent(60000);
    CHECK(net.call(id)->outcome == CallOutcome::Unroutable);
    CHECK(delivered_to(net, A, SipMethod::Invite, 480));
    // The ACK is absorbed at the gateway.
    auto recs = records_of(net, id);
    CHECK(sip::parse_message(recs.back()->sip).method() == SipMethod::Ack);
    CHECK(recs.back()->to_hop == "gw.CN-A");
    CHECK(net.state_of(ha) == fsm::EndpointState{fsm::Idle{}});
}

TEST_CASE("run loop edges") {
    Network net;
    CHECK(net.run_until_quiescent(1000) == 0);
    CHECK(net.now() == 0);

    int fired = 0;
    net.schedule(10, [&] { ++fired; });
    auto dropped = net.schedule(5000, [&] { fired += 100; });
    net.cancel_timer(dropped);
    CHECK(net.run_until_quiescent(60000) == 10);
    CHECK(fired == 1);

    net.schedule(100000, [] {});
    CHECK(sim_error_kind([&] { net.run_until_quiescent(60000); }) == SimError::Kind::SimBudgetExceeded);
}

TEST_CASE("trace lines round-trip through JSON") {
    Network net;
    net.add_carrier("CN-A");
    net.add_carrier("CN-B");
    auto ha = net.register_subscriber("CN-A", {A});
    net.register_subscriber("CN-B", {B});
    net.originate_call(A, ha, B, 0);
    net.run_until_quiescent(60000);
    std::ostringstream out;
    net.write_trace(out);
    std::istringstream in(out.str());
    auto back = read_trace(in);
    REQUIRE(back.size() == net.trace().size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        auto expect = net.trace()[i];
        expect.sent_ms = back[i].sent_ms;
        CHECK(back[i] == expect);
    }
    const auto first_line = out.str().substr(0, out.str().find('\n'));
    CHECK(first_line.rfind(R"({"t_ms":50,"carrier":"CN-A","from_hop":"+15550001","to_hop":"gw.CN-A","dir":"egress","sip":)", 0) == 0);
}

// ---- randomized federations -----------------------------------------------

namespace {

struct World {
    std::unique_ptr<Network> net;
    std::vector<EndpointHandle> subs;
    std::map<std::string, std::size_t> carrier_of_number;
};

// Random federation with background calls, spoofed and honest originations,
// and callees that answer, refuse, or ignore. Every caller hangs up eventually.
World random_world(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
    World w;
    w.net = std::make_unique<Network>(seed);
    auto& net = *w.net;

    const auto n_carriers = 2 + pick(3);
    std::vector<std::string> carriers;
    for (std::size_t c = 0; c < n_carriers; ++c) {
        carriers.push_back("CN-" + std::string(1, static_cast<char>('A' + c)));
        GatewayPolicy p;
        p.enforce_caller_id = pick(2) == 0;
        p.link_delay_ms = 10 + static_cast<SimMs>(pick(60));
        p.jitter_ms = static_cast<SimMs>(pick(40));
        net.add_carrier(carriers.back(), p);
    }

    const auto n_subs = 4 + pick(6);
    std::vector<PhoneNumber> numbers;
    for (std::size_t i = 0; i < n_subs; ++i) numbers.emplace_back("+1555010" + std::to_string(10 + i));
    std::vector<fsm::EndpointState> initial(n_subs, fsm::Idle{});
    for (std::size_t i = 0; i + 1 < n_subs; i += 2) {
        if (pick(3) == 0) {
            initial[i] = pick(2) ? fsm::EndpointState{fsm::Connected{numbers[i + 1]}}
                                 : fsm::EndpointState{fsm::Held{numbers[i + 1]}};
            initial[i + 1] = fsm::Connected{numbers[i]};
        }
    }
    for (std::size_t i = 0; i < n_subs; ++i) {
        CalleeProfile prof{numbers[i], pick(2) == 0, pick(2) == 0};
        w.subs.push_back(net.register_subscriber(carriers[pick(n_carriers)], prof, initial[i]));
    }

    // Callee behavior: answer, refuse, or ignore.
    net.on_incoming_call([&net, seed](const IncomingCall& call) {
        const auto roll = std::hash<std::string>{}(call.call_id + std::to_string(seed)) % 3;
        if (roll == 2) return;
        net.schedule(call.at + 200, [&net, call, roll] {
            const auto* leg = net.snapshot_of(call.callee).find(call.call_id);
            if (!leg || leg->answered) return;
            if (roll == 0) {
                net.answer(call.callee, call.call_id);
            } else {
                net.reject(call.callee, call.call_id, StatusCode(486));
            }
        });
    });

    const auto n_calls = 1 + pick(6);
    for (std::size_t k = 0; k < n_calls; ++k) {
        const auto who = w.subs[pick(n_subs)];
        PhoneNumber claimed = pick(2) ? net.number_of(who) : numbers[pick(n_subs)];
        PhoneNumber to = pick(8) == 0 ? PhoneNumber("+19990000000") : numbers[pick(n_subs)];
        const SimMs at = static_cast<SimMs>(pick(3000));
        const auto id = net.originate_call(claimed, who, to, at);
        net.schedule(at + 2000 + static_cast<SimMs>(pick(4000)), [&net, who, id] {
            const auto* leg = net.snapshot_of(who).find(id);
            if (leg) net.hangup(who, id);
        });
    }
    return w;
}

} // namespace

TEST_CASE("randomized federations: policy, causality, FIFO, conservation, determinism") {
    int invites_checked = 0;
    for (std::uint64_t seed = 1; seed <= 300; ++seed) {
        CAPTURE(seed);
        auto w = random_world(seed);
        auto& net = *w.net;
        net.run_until_quiescent(600000);

        std::map<std::pair<std::string, std::string>, SimMs> last_sent;
        // Requests sent by endpoints, keyed by (call_id, cseq, method), and finals seen coming back.
        std::set<std::tuple<std::string, unsigned, int>> open;
        for (const auto& r : net.trace()) {
            const auto msg = sip::parse_message(r.sip);
            const auto delay = net.policy(r.carrier).link_delay_ms;
            CHECK(r.t_ms >= r.sent_ms + delay);
            CHECK(r.t_ms <= r.sent_ms + net.max_hop_delay(r.carrier) + 10000);

            auto& prev = last_sent[{r.from_hop, r.to_hop}];
            CHECK(r.sent_ms >= prev);
            prev = r.sent_ms;

            if (r.dir == "ingress" && msg.is_request() && msg.method() == SipMethod::Invite) {
                const auto* call = net.call(msg.call_id);
                if (call && call->caller.index < w.subs.size() && call->claimed_from != call->authenticated_from) {
                    CHECK_FALSE(net.policy(net.carrier_of(call->caller)).enforce_caller_id);
                }
                ++invites_checked;
            }

            const bool from_endpoint = r.from_hop.front() == '+';
            const bool to_endpoint = r.to_hop.front() == '+';
            const auto key = std::make_tuple(msg.call_id, msg.cseq.seq, static_cast<int>(msg.method()));
            if (from_endpoint && msg.is_request() && msg.method() != SipMethod::Ack &&
                msg.method() != SipMethod::Prack) {
                open.insert(key);
            }
            if (to_endpoint && msg.is_response() && sip::is_final(*msg.status)) open.erase(key);
        }
        for (const auto& [cid, seq, m] : open) MESSAGE("open: " << cid << " cseq " << seq);
        CHECK(open.empty());

        auto again = random_world(seed);
        again.net->run_until_quiescent(600000);
        CHECK(again.net->trace() == net.trace());
    }
    CHECK(invites_checked > 100);
}

TEST_CASE("jitter is seed-driven") {
    auto trace_for = [](std::uint64_t seed) {
        Network net(seed);
        net.add_carrier("CN-A", GatewayPolicy{false, 50, 30});
        net.add_carrier("CN-B", GatewayPolicy{false, 50, 30});
        auto ha = net.register_subscriber("CN-A", {A});
        net.register_subscriber("CN-B", {B});
        net.originate_call(A, ha, B, 0);
        net.run_until_quiescent(60000);
        std::ostringstream out;
        net.write_trace(out);
        return out.str();
    };
    CHECK(trace_for(7) == trace_for(7));
    CHECK(trace_for(7) != trace_for(8));
}

TEST_CASE("dialing your own number is busy") {
    Network net;
    net.add_carrier("CN-A");
    auto ha = net.register_subscriber("CN-A", {A});
    const auto id = net.originate_call(A, ha, A, 0);
    net.run_until_quiescent(60000);
    CHECK(delivered_to(net, A, SipMethod::Invite, 486));
    CHECK(net.state_of(ha) == fsm::EndpointState{fsm::Idle{}});
    CHECK(net.call(id)->outcome == CallOutcome::Routed);
}
