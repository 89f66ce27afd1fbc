#pragma once

// Deterministic discrete-event simulation of interconnected carrier networks.
//
// Topology: every subscriber endpoint hangs off its carrier's gateway node.
// A message takes endpoint -> own gateway -> [peer gateway] -> endpoint, one
// scheduled event per hop. Routing for a call is decided once, at the first
// gateway, and pinned to the Call-ID; caller-ID policy is enforced there too.

#include "cive/call_fsm.hpp"
#include "cive/sip.hpp"

#include <compare>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace cive::netsim {

using sip::PhoneNumber;
using sip::SipMessage;
using SimMs = std::int64_t;

inline constexpr SimMs kDefaultLinkDelayMs = 50;

struct GatewayPolicy {
    bool enforce_caller_id = false;
    SimMs link_delay_ms = kDefaultLinkDelayMs;
    /// Upper bound of the extra per-hop delay drawn from the seeded RNG.
    SimMs jitter_ms = 0;
};

struct EndpointHandle {
    std::size_t index = 0;
    auto operator<=>(const EndpointHandle&) const = default;
};

class SimError : public std::runtime_error {
public:
    enum class Kind { DuplicateNumber, UnknownCarrier, UnknownEndpoint, UnknownCall, SimBudgetExceeded };
    SimError(Kind kind, const std::string& detail);
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// One hop delivery, as written to the JSON-lines trace log.
struct TraceRecord {
    SimMs t_ms = 0;    // delivery time
    SimMs sent_ms = 0; // hop send time (not serialized)
    std::string carrier;
    std::string from_hop;
    std::string to_hop;
    std::string dir; // "egress" into a gateway, "ingress" into an endpoint
    std::string sip;

    bool operator==(const TraceRecord&) const = default;
};

/// {t_ms, carrier, from_hop, to_hop, dir, sip} in that order, no newline.
std::string to_json_line(const TraceRecord& r);
TraceRecord trace_record_from_json(const std::string& line);
std::vector<TraceRecord> read_trace(std::istream& in);

enum class LegDirection { Sent, Received };

/// Receives every message sent or received on a side-line leg at its owner.
class LegObserver {
public:
    virtual ~LegObserver() = default;
    virtual void on_leg_message(SimMs t, LegDirection dir, const SipMessage& msg) = 0;
};

enum class CallOutcome { Routed, RejectedByPolicy, Unroutable };

std::string_view to_string(CallOutcome o) noexcept;

struct CallRecord {
    std::string call_id;
    EndpointHandle caller;
    std::optional<EndpointHandle> callee;
    PhoneNumber claimed_from;
    PhoneNumber authenticated_from;
    PhoneNumber to;
    std::optional<CallOutcome> outcome; // set when the INVITE reaches the first gateway
};

struct IncomingCall {
    EndpointHandle callee;
    std::string call_id;
    PhoneNumber displayed_caller;
    SimMs at = 0;
};

namespace detail {

struct Node {
    bool is_gateway = false;
    std::size_t index = 0; // endpoint index or carrier index
    auto operator<=>(const Node&) const = default;
};

struct Delivery {
    Node from;
    Node to;
    std::vector<Node> remaining; // hops after `to`
    SipMessage msg;
    SimMs sent_at = 0;
};
struct Timer {
    std::function<void()> fn;
    std::uint64_t id = 0;
};
struct Event {
    SimMs at = 0;
    std::uint64_t seq = 0;
    std::variant<Delivery, Timer> what;
};
struct Later {
    bool operator()(const Event& a, const Event& b) const {
        return a.at != b.at ? a.at > b.at : a.seq > b.seq;
    }
};

} // namespace detail

class Network {
public:
    explicit Network(std::uint64_t seed = 0);

    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;

    void add_carrier(const std::string& id, GatewayPolicy policy = {});
    const GatewayPolicy& policy(const std::string& carrier) const;

    /// Registers `profile.number` on `carrier`; its authenticated ID is fixed
    /// to that number. Numbers are unique across the whole federation.
    EndpointHandle register_subscriber(const std::string& carrier, const fsm::CalleeProfile& profile,
                                       const fsm::EndpointState& initial = fsm::Idle{});

    std::optional<EndpointHandle> resolve(const PhoneNumber& number) const;
    const PhoneNumber& number_of(EndpointHandle h) const;
    const std::string& carrier_of(EndpointHandle h) const;
    fsm::EndpointState state_of(EndpointHandle h) const;
    const fsm::Snapshot& snapshot_of(EndpointHandle h) const;
    /// Caller ID shown for the most recent incoming INVITE, if any.
    std::optional<PhoneNumber> display_of(EndpointHandle h) const;

    /// Places a call from `originator` claiming `from_claimed` as the caller
    /// ID. With a lax gateway any claim passes; that is the spoofing launch.
    std::string originate_call(const PhoneNumber& from_claimed, EndpointHandle originator,
                               const PhoneNumber& to, std::optional<SimMs> at = std::nullopt);

    /// Places a call on a second line that never touches the owner's call
    /// state. Every message on it is reported to `observer`.
    std::string originate_side_line(EndpointHandle owner, const PhoneNumber& to, LegObserver& observer);
    bool has_active_side_line(EndpointHandle owner) const;

    // Local user actions; applied at the current simulated time.
    void answer(EndpointHandle h, const std::string& call_id);
    void reject(EndpointHandle h, const std::string& call_id, const sip::StatusCode& status);
    /// CANCEL before a final response, BYE after a 200. Works on side lines too.
    void hangup(EndpointHandle h, const std::string& call_id);

    void on_incoming_call(std::function<void(const IncomingCall&)> hook);
    using TimerId = std::uint64_t;
    TimerId schedule(SimMs at, std::function<void()> fn);
    /// A cancelled timer is dropped without advancing the clock.
    void cancel_timer(TimerId id);

    /// Processes events in (time, insertion) order until the queue drains.
    /// Throws SimBudgetExceeded if events remain beyond `max_sim_ms`.
    SimMs run_until_quiescent(SimMs max_sim_ms);

    SimMs now() const noexcept { return now_; }

    const std::vector<TraceRecord>& trace() const noexcept { return trace_; }
    void write_trace(std::ostream& out) const;

    const CallRecord* call(const std::string& call_id) const;
    const std::vector<CallRecord>& calls() const noexcept { return calls_; }

    /// Link delay plus jitter bound for a hop leaving `carrier`.
    SimMs max_hop_delay(const std::string& carrier) const;

private:
    using Node = detail::Node;
    using Delivery = detail::Delivery;
    using Timer = detail::Timer;
    using Event = detail::Event;
    using Later = detail::Later;

    struct Carrier {
        std::string id;
        GatewayPolicy policy;
    };

    // Dialog bookkeeping needed to build in-dialog requests and responses.
    struct Dialog {
        SipMessage invite;
        bool local_is_uac = false;
        unsigned next_seq = 2;
        bool final_received = false;
        bool answered = false;
        bool closed = false; // side lines: non-2xx final or BYE completed
        LegObserver* side_line = nullptr;
    };

    struct Endpoint {
        fsm::CalleeProfile profile;
        std::size_t carrier = 0;
        fsm::Snapshot snap;
        std::optional<PhoneNumber> display;
        std::map<std::string, Dialog> dialogs;
    };

    std::size_t carrier_index(const std::string& id) const;
    Endpoint& endpoint(EndpointHandle h);
    const Endpoint& endpoint(EndpointHandle h) const;
    std::string node_name(Node n) const;
    std::size_t node_carrier(Node n) const;

    std::uint64_t push(SimMs at, std::variant<Delivery, Timer> what);
    void drop_cancelled();
    void send_hop(Node from, Node to, std::vector<Node> remaining, SipMessage msg);
    void transmit(EndpointHandle from, SipMessage msg);

    void deliver(Delivery d);
    void at_gateway(Delivery d);
    void at_endpoint(EndpointHandle h, const SipMessage& msg);

    void apply(EndpointHandle h, const std::string& call_id, fsm::Step step,
               const SipMessage* trigger);
    void execute(EndpointHandle h, const std::string& call_id, const fsm::FsmAction& action,
                 const SipMessage* trigger);
    SipMessage build_request(Dialog& dlg, sip::SipMethod method) const;
    void notify_side_line(const Dialog& dlg, LegDirection dir, const SipMessage& msg) const;
    std::string next_call_id(EndpointHandle originator);

    std::vector<Carrier> carriers_;
    std::vector<Endpoint> endpoints_;
    std::map<PhoneNumber, EndpointHandle> routing_;
    std::vector<CallRecord> calls_;
    std::map<std::string, std::size_t> call_index_;
    std::map<std::pair<Node, Node>, SimMs> link_tail_;
    std::priority_queue<Event, std::vector<Event>, Later> queue_;
    std::vector<TraceRecord> trace_;
    std::set<TimerId> cancelled_;
    std::function<void(const IncomingCall&)> incoming_hook_;
    std::mt19937_64 rng_;
    SimMs now_ = 0;
    std::uint64_t seq_ = 0;
    std::uint64_t call_counter_ = 0;
};

} // namespace cive::netsim
