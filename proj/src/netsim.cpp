#include "cive/netsim.hpp"

#include "json.hpp"

#include <istream>
#include <ostream>

namespace cive::netsim {

using sip::SipMethod;
using sip::StatusCode;

SimError::SimError(Kind kind, const std::string& detail) : std::runtime_error(detail), kind_(kind) {}

std::string_view to_string(CallOutcome o) noexcept {
    switch (o) {
    case CallOutcome::Routed: return "routed";
    case CallOutcome::RejectedByPolicy: return "rejected-by-policy";
    case CallOutcome::Unroutable: return "unroutable";
    }
    return "?";
}

// ---- trace log ------------------------------------------------------------

std::string to_json_line(const TraceRecord& r) {
    nlohmann::ordered_json j;
    j["t_ms"] = r.t_ms;
    j["carrier"] = r.carrier;
    j["from_hop"] = r.from_hop;
    j["to_hop"] = r.to_hop;
    j["dir"] = r.dir;
    j["sip"] = r.sip;
    return j.dump();
}

TraceRecord trace_record_from_json(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    TraceRecord r;
    r.t_ms = j.at("t_ms").get<SimMs>();
    r.sent_ms = r.t_ms;
    r.carrier = j.at("carrier").get<std::string>();
    r.from_hop = j.at("from_hop").get<std::string>();
    r.to_hop = j.at("to_hop").get<std::string>();
    r.dir = j.at("dir").get<std::string>();
    r.sip = j.at("sip").get<std::string>();
    return r;
}

std::vector<TraceRecord> read_trace(std::istream& in) {
    std::vector<TraceRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(trace_record_from_json(line));
    }
    return out;
}

// ---- construction ---------------------------------------------------------

Network::Network(std::uint64_t seed) : rng_(seed) {}

void Network::add_carrier(const std::string& id, GatewayPolicy policy) {
    for (const auto& c : carriers_) {
        if (c.id == id) return;
    }
    carriers_.push_back(Carrier{id, policy});
}

std::size_t Network::carrier_index(const std::string& id) const {
    for (std::size_t i = 0; i < carriers_.size(); ++i) {
        if (carriers_[i].id == id) return i;
    }
    throw SimError(SimError::Kind::UnknownCarrier, "unknown carrier '" + id + "'");
}

const GatewayPolicy& Network::policy(const std::string& carrier) const {
    return carriers_[carrier_index(carrier)].policy;
}

SimMs Network::max_hop_delay(const std::string& carrier) const {
    const auto& p = policy(carrier);
    return p.link_delay_ms + p.jitter_ms;
}

EndpointHandle Network::register_subscriber(const std::string& carrier,
                                            const fsm::CalleeProfile& profile,
                                            const fsm::EndpointState& initial) {
    const auto ci = carrier_index(carrier);
    if (routing_.count(profile.number)) {
        throw SimError(SimError::Kind::DuplicateNumber,
                       "number " + profile.number.str() + " already registered");
    }
    EndpointHandle h{endpoints_.size()};
    Endpoint ep;
    ep.profile = profile;
    ep.carrier = ci;
    ep.snap = fsm::Snapshot::from_state(profile.number, initial);
    endpoints_.push_back(std::move(ep));
    routing_.emplace(profile.number, h);
    return h;
}

std::optional<EndpointHandle> Network::resolve(const PhoneNumber& number) const {
    auto it = routing_.find(number);
    if (it == routing_.end()) return std::nullopt;
    return it->second;
}

Network::Endpoint& Network::endpoint(EndpointHandle h) {
    if (h.index >= endpoints_.size()) {
        throw SimError(SimError::Kind::UnknownEndpoint, "bad endpoint handle");
    }
    return endpoints_[h.index];
}

const Network::Endpoint& Network::endpoint(EndpointHandle h) const {
    if (h.index >= endpoints_.size()) {
        throw SimError(SimError::Kind::UnknownEndpoint, "bad endpoint handle");
    }
    return endpoints_[h.index];
}

const PhoneNumber& Network::number_of(EndpointHandle h) const { return endpoint(h).profile.number; }
const std::string& Network::carrier_of(EndpointHandle h) const { return carriers_[endpoint(h).carrier].id; }
fsm::EndpointState Network::state_of(EndpointHandle h) const { return endpoint(h).snap.state(); }
const fsm::Snapshot& Network::snapshot_of(EndpointHandle h) const { return endpoint(h).snap; }
std::optional<PhoneNumber> Network::display_of(EndpointHandle h) const { return endpoint(h).display; }

const CallRecord* Network::call(const std::string& call_id) const {
    auto it = call_index_.find(call_id);
    return it == call_index_.end() ? nullptr : &calls_[it->second];
}

void Network::on_incoming_call(std::function<void(const IncomingCall&)> hook) {
    incoming_hook_ = std::move(hook);
}

std::string Network::node_name(Node n) const {
    if (n.is_gateway) return "gw." + carriers_[n.index].id;
    return endpoints_[n.index].profile.number.str();
}

std::size_t Network::node_carrier(Node n) const {
    return n.is_gateway ? n.index : endpoints_[n.index].carrier;
}

std::string Network::next_call_id(EndpointHandle originator) {
    ++call_counter_;
    return "c" + std::to_string(call_counter_) + "." + number_of(originator).str().substr(1) +
           "@cive-sim";
}

// ---- event queue ----------------------------------------------------------

std::uint64_t Network::push(SimMs at, std::variant<Delivery, Timer> what) {
    const auto seq = seq_++;
    if (auto* t = std::get_if<Timer>(&what)) t->id = seq;
    queue_.push(Event{at, seq, std::move(what)});
    return seq;
}

Network::TimerId Network::schedule(SimMs at, std::function<void()> fn) {
    return push(std::max(at, now_), Timer{std::move(fn), 0});
}

void Network::cancel_timer(TimerId id) { cancelled_.insert(id); }

void Network::drop_cancelled() {
    while (!queue_.empty()) {
        const auto* t = std::get_if<Timer>(&queue_.top().what);
        if (!t || !cancelled_.count(t->id)) return;
        cancelled_.erase(t->id);
        queue_.pop();
    }
}

SimMs Network::run_until_quiescent(SimMs max_sim_ms) {
    for (drop_cancelled(); !queue_.empty(); drop_cancelled()) {
        if (queue_.top().at > max_sim_ms) {
            now_ = max_sim_ms;
            throw SimError(SimError::Kind::SimBudgetExceeded,
                           std::to_string(queue_.size()) + " events pending at " +
                               std::to_string(max_sim_ms) + " ms");
        }
        Event ev = queue_.top();
        queue_.pop();
        now_ = ev.at;
        if (auto* d = std::get_if<Delivery>(&ev.what)) {
            deliver(std::move(*d));
        } else {
            std::get<Timer>(ev.what).fn();
        }
    }
    return now_;
}

void Network::write_trace(std::ostream& out) const {
    for (const auto& r : trace_) out << to_json_line(r) << '\n';
}

// ---- transport ------------------------------------------------------------

void Network::send_hop(Node from, Node to, std::vector<Node> remaining, SipMessage msg) {
    const auto& p = carriers_[node_carrier(from)].policy;
    SimMs delay = p.link_delay_ms;
    if (p.jitter_ms > 0) delay += static_cast<SimMs>(rng_() % static_cast<std::uint64_t>(p.jitter_ms + 1));
    SimMs at = now_ + delay;
    // Per-link FIFO: never overtake an earlier message on the same link.
    auto& tail = link_tail_[{from, to}];
    at = std::max(at, tail);
    tail = at;
    push(at, Delivery{from, to, std::move(remaining), std::move(msg), now_});
}

void Network::transmit(EndpointHandle from, SipMessage msg) {
    auto& ep = endpoint(from);
    if (auto it = ep.dialogs.find(msg.call_id); it != ep.dialogs.end()) {
        notify_side_line(it->second, LegDirection::Sent, msg);
    }
    send_hop(Node{false, from.index}, Node{true, ep.carrier}, {}, std::move(msg));
}

void Network::deliver(Delivery d) {
    TraceRecord rec;
    rec.t_ms = now_;
    rec.sent_ms = d.sent_at;
    rec.from_hop = node_name(d.from);
    rec.to_hop = node_name(d.to);
    if (d.to.is_gateway) {
        rec.carrier = carriers_[node_carrier(d.from)].id;
        rec.dir = "egress";
    } else {
        rec.carrier = carriers_[node_carrier(d.to)].id;
        rec.dir = "ingress";
    }
    rec.sip = sip::serialize_message(d.msg);
    trace_.push_back(std::move(rec));

    if (d.to.is_gateway) {
        at_gateway(std::move(d));
    } else {
        at_endpoint(EndpointHandle{d.to.index}, d.msg);
    }
}

void Network::at_gateway(Delivery d) {
    const Node here = d.to;
    if (!d.remaining.empty()) {
        Node next = d.remaining.front();
        d.remaining.erase(d.remaining.begin());
        send_hop(here, next, std::move(d.remaining), std::move(d.msg));
        return;
    }

    // First gateway: the sender is one of this carrier's subscribers.
    const EndpointHandle sender{d.from.index};
    const SipMessage& msg = d.msg;
    auto bounce = [&](int code) {
        send_hop(here, d.from, {}, SipMessage::response_to(msg, StatusCode(code)));
    };
    auto forward = [&](EndpointHandle dest) {
        const Node dest_node{false, dest.index};
        const std::size_t dest_carrier = endpoints_[dest.index].carrier;
        if (dest_carrier == here.index) {
            send_hop(here, dest_node, {}, msg);
        } else {
            send_hop(here, Node{true, dest_carrier}, {dest_node}, msg);
        }
    };

    auto it = call_index_.find(msg.call_id);
    if (it == call_index_.end()) {
        if (!msg.is_request() || msg.method() != SipMethod::Invite) {
            if (msg.is_request() && msg.method() != SipMethod::Ack) bounce(481);
            return;
        }
        CallRecord rec;
        rec.call_id = msg.call_id;
        rec.caller = sender;
        rec.claimed_from = msg.from;
        rec.authenticated_from = number_of(sender);
        rec.to = msg.to;
        if (carriers_[here.index].policy.enforce_caller_id && msg.from != rec.authenticated_from) {
            rec.outcome = CallOutcome::RejectedByPolicy;
        } else if (auto dest = resolve(msg.to)) {
            rec.outcome = CallOutcome::Routed;
            rec.callee = *dest;
        } else {
            rec.outcome = CallOutcome::Unroutable;
        }
        call_index_.emplace(rec.call_id, calls_.size());
        calls_.push_back(rec);
        if (rec.outcome == CallOutcome::Routed) {
            forward(*rec.callee);
        } else {
            bounce(480);
        }
        return;
    }

    const CallRecord& rec = calls_[it->second];
    if (rec.outcome != CallOutcome::Routed) {
        // The gateway terminated this call; absorb the ACK, refuse the rest.
        if (msg.is_request() && msg.method() != SipMethod::Ack) bounce(481);
        return;
    }
    forward(sender == rec.caller ? *rec.callee : rec.caller);
}

// ---- endpoint behavior ----------------------------------------------------

void Network::notify_side_line(const Dialog& dlg, LegDirection dir, const SipMessage& msg) const {
    if (dlg.side_line) dlg.side_line->on_leg_message(now_, dir, msg);
}

void Network::at_endpoint(EndpointHandle h, const SipMessage& msg) {
    auto& ep = endpoint(h);
    auto dit = ep.dialogs.find(msg.call_id);
    Dialog* dlg = dit == ep.dialogs.end() ? nullptr : &dit->second;

    if (msg.is_response()) {
        if (dlg && msg.method() == SipMethod::Invite) {
            if (sip::is_final(*msg.status)) dlg->final_received = true;
            if (msg.code() == 200) dlg->answered = true;
        }
        if (dlg && dlg->side_line) {
            if ((msg.method() == SipMethod::Invite && msg.code() >= 300) ||
                (msg.method() == SipMethod::Bye && sip::is_final(*msg.status))) {
                dlg->closed = true;
            }
            notify_side_line(*dlg, LegDirection::Received, msg);
            for (const auto& a : fsm::uac_acknowledgement(msg)) execute(h, msg.call_id, a, &msg);
            return;
        }
        apply(h, msg.call_id, fsm::on_response(ep.snap, msg), &msg);
        return;
    }

    switch (msg.method()) {
    case SipMethod::Invite: {
        if (dlg) {
            // A subscriber dialing its own number finds itself busy.
            if (dlg->local_is_uac) transmit(h, SipMessage::response_to(msg, StatusCode(486)));
            return;
        }
        ep.display = msg.from;
        Dialog fresh;
        fresh.invite = msg;
        fresh.local_is_uac = false;
        fresh.next_seq = 1;
        ep.dialogs.emplace(msg.call_id, std::move(fresh));
        apply(h, msg.call_id, fsm::on_incoming_invite(ep.snap, ep.profile, msg), &msg);
        const auto* leg = endpoint(h).snap.find(msg.call_id);
        if (leg && leg->kind == fsm::LegKind::Primary && leg->role == fsm::LegRole::Incoming &&
            !leg->answered && incoming_hook_) {
            incoming_hook_(IncomingCall{h, msg.call_id, msg.from, now_});
        }
        return;
    }
    case SipMethod::Cancel:
        if (dlg && dlg->side_line) {
            notify_side_line(*dlg, LegDirection::Received, msg);
            transmit(h, SipMessage::response_to(msg, StatusCode(481)));
            return;
        }
        apply(h, msg.call_id, fsm::on_cancel(ep.snap, msg), &msg);
        return;
    case SipMethod::Bye:
        if (dlg && dlg->side_line) {
            notify_side_line(*dlg, LegDirection::Received, msg);
            transmit(h, SipMessage::response_to(msg, StatusCode(dlg->answered ? 200 : 481)));
            return;
        }
        apply(h, msg.call_id, fsm::on_bye(ep.snap, msg), &msg);
        return;
    case SipMethod::Ack:
    case SipMethod::Prack:
        if (dlg) notify_side_line(*dlg, LegDirection::Received, msg);
        return;
    }
}

void Network::apply(EndpointHandle h, const std::string& call_id, fsm::Step step,
                    const SipMessage* trigger) {
    endpoint(h).snap = std::move(step.next);
    for (const auto& a : step.actions) execute(h, call_id, a, trigger);
}

SipMessage Network::build_request(Dialog& dlg, SipMethod method) const {
    const auto& inv = dlg.invite;
    if (dlg.local_is_uac) {
        switch (method) {
        case SipMethod::Invite: return inv;
        case SipMethod::Ack:
        case SipMethod::Cancel:
            return SipMessage::request(method, inv.from, inv.to, inv.call_id, inv.cseq.seq);
        case SipMethod::Prack:
        case SipMethod::Bye:
            return SipMessage::request(method, inv.from, inv.to, inv.call_id, dlg.next_seq++);
        }
    }
    // Callee-side in-dialog request: From/To swap.
    return SipMessage::request(method, inv.to, inv.from, inv.call_id, dlg.next_seq++);
}

void Network::execute(EndpointHandle h, const std::string& call_id, const fsm::FsmAction& action,
                      const SipMessage* trigger) {
    auto& ep = endpoint(h);
    if (const auto* r = std::get_if<fsm::SendResponse>(&action)) {
        const SipMessage* base = nullptr;
        if (trigger && trigger->is_request() && trigger->method() == r->in_reply_to) {
            base = trigger;
        } else if (r->in_reply_to == SipMethod::Invite) {
            auto it = ep.dialogs.find(call_id);
            if (it == ep.dialogs.end()) return;
            base = &it->second.invite;
        } else {
            return;
        }
        SipMessage resp = SipMessage::response_to(*base, r->status);
        resp.pem = r->pem;
        resp.alert = r->alert;
        transmit(h, std::move(resp));
    } else if (const auto* q = std::get_if<fsm::SendRequest>(&action)) {
        auto it = ep.dialogs.find(call_id);
        if (it == ep.dialogs.end()) return;
        transmit(h, build_request(it->second, q->method));
    } else if (const auto* aa = std::get_if<fsm::AutoAnswer>(&action)) {
        schedule(now_ + aa->after_ms, [this, h, call_id] {
            apply(h, call_id, fsm::on_auto_answer(endpoint(h).snap, call_id), nullptr);
        });
    }
}

// ---- public call control --------------------------------------------------

std::string Network::originate_call(const PhoneNumber& from_claimed, EndpointHandle originator,
                                    const PhoneNumber& to, std::optional<SimMs> at) {
    endpoint(originator);
    std::string call_id = next_call_id(originator);
    schedule(at.value_or(now_), [this, from_claimed, originator, to, call_id] {
        auto& ep = endpoint(originator);
        Dialog dlg;
        dlg.invite = SipMessage::request(SipMethod::Invite, from_claimed, to, call_id, 1);
        dlg.local_is_uac = true;
        ep.dialogs.emplace(call_id, std::move(dlg));
        apply(originator, call_id, fsm::originate(ep.snap, call_id, to), nullptr);
    });
    return call_id;
}

std::string Network::originate_side_line(EndpointHandle owner, const PhoneNumber& to,
                                         LegObserver& observer) {
    auto& ep = endpoint(owner);
    std::string call_id = next_call_id(owner);
    Dialog dlg;
    dlg.invite = SipMessage::request(SipMethod::Invite, ep.profile.number, to, call_id, 1);
    dlg.local_is_uac = true;
    dlg.side_line = &observer;
    auto [it, inserted] = ep.dialogs.emplace(call_id, std::move(dlg));
    transmit(owner, it->second.invite);
    return call_id;
}

bool Network::has_active_side_line(EndpointHandle owner) const {
    for (const auto& [id, dlg] : endpoint(owner).dialogs) {
        if (dlg.side_line && !dlg.closed) return true;
    }
    return false;
}

void Network::answer(EndpointHandle h, const std::string& call_id) {
    apply(h, call_id, fsm::answer(endpoint(h).snap, call_id), nullptr);
}

void Network::reject(EndpointHandle h, const std::string& call_id, const StatusCode& status) {
    apply(h, call_id, fsm::reject(endpoint(h).snap, call_id, status), nullptr);
}

void Network::hangup(EndpointHandle h, const std::string& call_id) {
    auto& ep = endpoint(h);
    auto it = ep.dialogs.find(call_id);
    if (it != ep.dialogs.end() && it->second.side_line) {
        Dialog& dlg = it->second;
        if (!dlg.final_received) {
            transmit(h, build_request(dlg, SipMethod::Cancel));
        } else if (dlg.answered) {
            transmit(h, build_request(dlg, SipMethod::Bye));
        }
        return;
    }
    apply(h, call_id, fsm::hangup(ep.snap, call_id), nullptr);
}

} // namespace cive::netsim
