#include "cive/call_fsm.hpp"

#include <algorithm>

namespace cive::fsm {

using sip::AlertUrn;
using sip::PemValue;
using sip::SipMethod;
using sip::StatusCode;

namespace {

SendResponse reply(int code, SipMethod to = SipMethod::Invite,
                   std::optional<PemValue> pem = std::nullopt,
                   std::optional<AlertUrn> alert = std::nullopt) {
    return SendResponse{StatusCode(code), to, pem, alert};
}

std::vector<Leg>::iterator find_leg(std::vector<Leg>& legs, const std::string& call_id) {
    return std::find_if(legs.begin(), legs.end(),
                        [&](const Leg& l) { return l.call_id == call_id; });
}

Step busy(const Snapshot& snap) {
    return Step{snap, {reply(100), reply(486)}};
}

} // namespace

std::string describe(const EndpointState& s) {
    struct V {
        std::string operator()(const Idle&) const { return "Idle"; }
        std::string operator()(const Dialing& d) const { return "Dialing(" + d.target.str() + ")"; }
        std::string operator()(const Ringing& r) const { return "Ringing(" + r.peer.str() + ")"; }
        std::string operator()(const Connected& c) const { return "Connected(" + c.peer.str() + ")"; }
        std::string operator()(const Held& h) const { return "Held(" + h.peer.str() + ")"; }
    };
    return std::visit(V{}, s);
}

std::optional<PhoneNumber> peer_of(const EndpointState& s) {
    struct V {
        std::optional<PhoneNumber> operator()(const Idle&) const { return std::nullopt; }
        std::optional<PhoneNumber> operator()(const Dialing& d) const { return d.target; }
        std::optional<PhoneNumber> operator()(const Ringing& r) const { return r.peer; }
        std::optional<PhoneNumber> operator()(const Connected& c) const { return c.peer; }
        std::optional<PhoneNumber> operator()(const Held& h) const { return h.peer; }
    };
    return std::visit(V{}, s);
}

std::string describe(const FsmAction& a) {
    struct V {
        std::string operator()(const SendResponse& r) const {
            std::string s = "SendResponse(" + std::to_string(r.status.code);
            if (r.pem) s += ", pem=" + std::string(sip::to_string(*r.pem));
            if (r.alert) s += ", alert=" + std::string(sip::to_string(*r.alert));
            return s + ")";
        }
        std::string operator()(const SendRequest& r) const {
            return "SendRequest(" + std::string(sip::to_string(r.method)) + ")";
        }
        std::string operator()(const StartRingback&) const { return "StartRingback"; }
        std::string operator()(const AutoAnswer& a) const {
            return "AutoAnswer(" + std::to_string(a.after_ms) + "ms)";
        }
        std::string operator()(const NoOp&) const { return "NoOp"; }
    };
    return std::visit(V{}, a);
}

FsmError::FsmError(Kind kind, const std::string& detail) : std::runtime_error(detail), kind_(kind) {}

// ---- Snapshot -------------------------------------------------------------

EndpointState Snapshot::state() const {
    for (const auto& l : legs) {
        if (l.answered && l.kind != LegKind::Voicemail) {
            if (l.held) return Held{l.peer};
            return Connected{l.peer};
        }
    }
    for (const auto& l : legs) {
        if (!l.answered && l.role == LegRole::Outgoing && l.kind != LegKind::Voicemail) {
            return Dialing{l.peer};
        }
    }
    for (const auto& l : legs) {
        if (!l.answered && l.role == LegRole::Incoming && l.kind != LegKind::Voicemail) {
            return Ringing{l.peer};
        }
    }
    return Idle{};
}

const Leg* Snapshot::find(const std::string& call_id) const {
    auto it = std::find_if(legs.begin(), legs.end(),
                           [&](const Leg& l) { return l.call_id == call_id; });
    return it == legs.end() ? nullptr : &*it;
}

std::string Snapshot::background_call_id(const PhoneNumber& a, const PhoneNumber& b) {
    const auto& lo = std::min(a, b);
    const auto& hi = std::max(a, b);
    return "bg-" + lo.str().substr(1) + "-" + hi.str().substr(1);
}

Snapshot Snapshot::from_state(const PhoneNumber& self, const EndpointState& state) {
    Snapshot snap;
    auto peer = peer_of(state);
    if (!peer) return snap;
    Leg leg;
    leg.call_id = background_call_id(self, *peer);
    leg.peer = *peer;
    if (std::holds_alternative<Dialing>(state)) {
        leg.role = LegRole::Outgoing;
    } else if (std::holds_alternative<Ringing>(state)) {
        leg.role = LegRole::Incoming;
    } else {
        leg.role = LegRole::Outgoing;
        leg.answered = true;
        leg.held = std::holds_alternative<Held>(state);
    }
    snap.legs.push_back(std::move(leg));
    return snap;
}

// ---- UAS ------------------------------------------------------------------

Step on_incoming_invite(const Snapshot& snap, const CalleeProfile& profile,
                        const sip::SipMessage& invite) {
    if (!invite.is_request() || invite.method() != SipMethod::Invite) {
        throw FsmError(FsmError::Kind::NotAnInvite, "on_incoming_invite: not an INVITE");
    }
    if (invite.to != profile.number) {
        throw FsmError(FsmError::Kind::InviteToWrongNumber,
                       "INVITE for " + invite.to.str() + " delivered to " + profile.number.str());
    }
    if (snap.find(invite.call_id)) return Step{snap, {NoOp{}}};

    Step step{snap, {}};
    auto add_leg = [&](LegKind kind, bool answered) {
        step.next.legs.push_back(
            Leg{invite.call_id, invite.from, LegRole::Incoming, kind, answered, false});
    };

    const auto state = snap.state();
    if (std::holds_alternative<Idle>(state)) {
        add_leg(LegKind::Primary, false);
        step.actions = {reply(100), reply(183, SipMethod::Invite, PemValue::SendRecv),
                        reply(180, SipMethod::Invite, PemValue::SendRecv)};
        return step;
    }
    if (const auto* d = std::get_if<Dialing>(&state)) {
        if (d->target != invite.from) return busy(snap);
        add_leg(LegKind::Collision, false);
        step.actions = {reply(100), reply(183, SipMethod::Invite, PemValue::SendOnly),
                        reply(180, SipMethod::Invite, PemValue::SendOnly),
                        AutoAnswer{kCollisionAnswerMs}};
        return step;
    }
    if (std::holds_alternative<Ringing>(state)) return busy(snap);

    // Connected or Held.
    if (profile.call_waiting) {
        add_leg(LegKind::Waiting, false);
        step.actions = {reply(100), reply(183, SipMethod::Invite, PemValue::SendRecv),
                        reply(180, SipMethod::Invite, PemValue::SendRecv, AlertUrn::CallWaiting)};
        return step;
    }
    if (profile.voicemail_forward) {
        add_leg(LegKind::Voicemail, true);
        step.actions = {reply(100), reply(181), reply(200)};
        return step;
    }
    return busy(snap);
}

Step on_cancel(const Snapshot& snap, const sip::SipMessage& cancel) {
    if (!cancel.is_request() || cancel.method() != SipMethod::Cancel) {
        throw FsmError(FsmError::Kind::NotACancel, "on_cancel: not a CANCEL");
    }
    Step step{snap, {}};
    auto it = find_leg(step.next.legs, cancel.call_id);
    if (it == step.next.legs.end() || it->role != LegRole::Incoming || it->answered) {
        step.actions = {reply(481, SipMethod::Cancel)};
        return step;
    }
    step.next.legs.erase(it);
    step.actions = {reply(200, SipMethod::Cancel), reply(487)};
    return step;
}

Step on_bye(const Snapshot& snap, const sip::SipMessage& bye) {
    if (!bye.is_request() || bye.method() != SipMethod::Bye) {
        throw FsmError(FsmError::Kind::NotABye, "on_bye: not a BYE");
    }
    Step step{snap, {}};
    auto it = find_leg(step.next.legs, bye.call_id);
    if (it == step.next.legs.end() || !it->answered) {
        step.actions = {reply(481, SipMethod::Bye)};
        return step;
    }
    step.next.legs.erase(it);
    step.actions = {reply(200, SipMethod::Bye)};
    return step;
}

Step on_auto_answer(const Snapshot& snap, const std::string& call_id) {
    Step step{snap, {NoOp{}}};
    auto it = find_leg(step.next.legs, call_id);
    if (it == step.next.legs.end() || it->kind != LegKind::Collision || it->answered) return step;
    it->answered = true;
    step.actions = {reply(200)};
    return step;
}

// ---- local user -----------------------------------------------------------

Step answer(const Snapshot& snap, const std::string& call_id) {
    Step step{snap, {NoOp{}}};
    auto it = find_leg(step.next.legs, call_id);
    if (it == step.next.legs.end()) {
        throw FsmError(FsmError::Kind::UnknownLeg, "answer: no leg " + call_id);
    }
    if (it->role != LegRole::Incoming || it->answered) return step;
    it->answered = true;
    step.actions = {reply(200)};
    return step;
}

Step reject(const Snapshot& snap, const std::string& call_id, const StatusCode& status) {
    Step step{snap, {NoOp{}}};
    auto it = find_leg(step.next.legs, call_id);
    if (it == step.next.legs.end()) {
        throw FsmError(FsmError::Kind::UnknownLeg, "reject: no leg " + call_id);
    }
    if (it->role != LegRole::Incoming || it->answered) return step;
    step.next.legs.erase(it);
    step.actions = {SendResponse{status, SipMethod::Invite, std::nullopt, std::nullopt}};
    return step;
}

Step hangup(const Snapshot& snap, const std::string& call_id) {
    auto it0 = std::find_if(snap.legs.begin(), snap.legs.end(),
                            [&](const Leg& l) { return l.call_id == call_id; });
    if (it0 == snap.legs.end()) {
        throw FsmError(FsmError::Kind::UnknownLeg, "hangup: no leg " + call_id);
    }
    if (!it0->answered && it0->role == LegRole::Incoming) {
        return reject(snap, call_id, StatusCode(486));
    }
    Step step{snap, {}};
    auto it = find_leg(step.next.legs, call_id);
    if (it->answered) {
        step.next.legs.erase(it);
        step.actions = {SendRequest{SipMethod::Bye}};
    } else {
        // The leg stays until the 487 arrives.
        step.actions = {SendRequest{SipMethod::Cancel}};
    }
    return step;
}

// ---- UAC ------------------------------------------------------------------

Step originate(const Snapshot& snap, const std::string& call_id, const PhoneNumber& target) {
    Step step{snap, {SendRequest{SipMethod::Invite}}};
    step.next.legs.push_back(Leg{call_id, target, LegRole::Outgoing, LegKind::Primary, false, false});
    return step;
}

std::vector<FsmAction> uac_acknowledgement(const sip::SipMessage& response) {
    if (!response.is_response() || response.method() != SipMethod::Invite) return {};
    if (response.code() == 183) return {SendRequest{SipMethod::Prack}};
    if (sip::is_final(*response.status)) return {SendRequest{SipMethod::Ack}};
    return {};
}

Step on_response(const Snapshot& snap, const sip::SipMessage& response) {
    Step step{snap, {}};
    if (!response.is_response()) return Step{snap, {NoOp{}}};
    auto acks = uac_acknowledgement(response);
    if (response.method() == SipMethod::Invite) {
        auto it = find_leg(step.next.legs, response.call_id);
        const int code = response.code();
        if (it != step.next.legs.end() && it->role == LegRole::Outgoing) {
            if (code == 200) {
                it->answered = true;
            } else if (code >= 300) {
                step.next.legs.erase(it);
            } else if (code == 180) {
                step.actions.push_back(StartRingback{});
            }
        }
    }
    step.actions.insert(step.actions.end(), acks.begin(), acks.end());
    if (step.actions.empty()) step.actions.push_back(NoOp{});
    return step;
}

// ---- expectations ---------------------------------------------------------

bool CallerStatePredicate::matches(const EndpointState& s) const {
    if (phase == CallPhase::Ringing) {
        const auto* d = std::get_if<Dialing>(&s);
        return d && d->target == callee;
    }
    const auto* c = std::get_if<Connected>(&s);
    return c && c->peer == callee;
}

std::string CallerStatePredicate::describe() const {
    return phase == CallPhase::Ringing ? "Dialing(" + callee.str() + ")"
                                       : "Connected(" + callee.str() + ")";
}

CallerStatePredicate expected_caller_state(CallPhase phase, const PhoneNumber& callee) {
    return CallerStatePredicate{phase, callee};
}

bool is_legal_invite_response_sequence(const std::vector<int>& codes) {
    std::size_t i = 0;
    const std::size_t n = codes.size();
    if (n == 0) return true;
    if (codes[i++] != 100) return false;
    if (i < n && codes[i] == 183) ++i;
    while (i < n && codes[i] == 180) ++i;
    if (i == n) return true;
    if (codes[i] == 181) {
        ++i;
        if (i == n) return true;
        return codes[i] == 200 && i + 1 == n;
    }
    const int fin = codes[i];
    return (fin == 200 || fin == 486 || fin == 487) && i + 1 == n;
}

} // namespace cive::fsm
