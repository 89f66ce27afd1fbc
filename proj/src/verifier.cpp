#include "cive/verifier.hpp"

#include <algorithm>

namespace cive::defense {

using netsim::LegDirection;
using sip::SipMethod;

std::string_view to_string(InferredState s) noexcept {
    switch (s) {
    case InferredState::Dialing: return "Dialing";
    case InferredState::Idle: return "Idle";
    case InferredState::Connected: return "Connected";
    case InferredState::BusyNoWaiting: return "BusyNoWaiting";
    case InferredState::ForwardedToVoicemail: return "ForwardedToVoicemail";
    case InferredState::Unreachable: return "Unreachable";
    case InferredState::Unknown: return "Unknown";
    }
    return "?";
}

std::string_view to_string(Decision d) noexcept {
    switch (d) {
    case Decision::Legit: return "Legit";
    case Decision::Spoofed: return "Spoofed";
    case Decision::Inconclusive: return "Inconclusive";
    }
    return "?";
}

VerificationError::VerificationError(Kind kind, const std::string& detail)
    : std::runtime_error(detail), kind_(kind) {}

// ---- session --------------------------------------------------------------

VerificationSession::VerificationSession(netsim::Network& net, IncomingCallContext ctx,
                                         VerifierConfig config)
    : net_(net), ctx_(std::move(ctx)), config_(config) {}

void VerificationSession::start(Completion on_complete) {
    if (ctx_.phase != fsm::CallPhase::Ringing) {
        throw VerificationError(VerificationError::Kind::PhaseNotSupported,
                                "verification only runs while the incoming call rings");
    }
    auto owner = net_.resolve(ctx_.callee);
    if (!owner) {
        throw VerificationError(VerificationError::Kind::LineBusy,
                                ctx_.callee.str() + " is not registered");
    }
    owner_ = *owner;
    if (net_.has_active_side_line(owner_) ||
        std::holds_alternative<fsm::Dialing>(net_.state_of(owner_))) {
        throw VerificationError(VerificationError::Kind::LineBusy,
                                ctx_.callee.str() + " cannot place a verification call");
    }
    on_complete_ = std::move(on_complete);
    trace_.call_id = net_.originate_side_line(owner_, ctx_.claimed_id, *this);
    timeout_timer_ = net_.schedule(net_.now() + config_.au_call_timeout_ms, [this] {
        timeout_timer_.reset();
        if (!collecting_) return;
        trace_.timed_out = true;
        tear_down();
    });
}

void VerificationSession::on_leg_message(SimMs t, LegDirection dir, const SipMessage& msg) {
    trace_.entries.push_back(TraceEntry{t, dir, msg});
    if (dir != LegDirection::Received || !msg.is_response()) return;

    if (msg.method() == SipMethod::Invite) {
        if (msg.code() == 180 && msg.pem && collecting_ && !grace_timer_) {
            grace_timer_ = net_.schedule(net_.now() + config_.capture_grace_ms, [this] {
                if (collecting_) tear_down();
            });
        }
        if (sip::is_final(*msg.status)) {
            collecting_ = false;
            if (timeout_timer_) net_.cancel_timer(*timeout_timer_);
            if (grace_timer_) net_.cancel_timer(*grace_timer_);
            // Deferred so the automatic ACK goes out first.
            if (msg.code() == 200) {
                net_.schedule(net_.now(), [this] { net_.hangup(owner_, trace_.call_id); });
            } else {
                net_.schedule(net_.now(), [this] { finish(); });
            }
        }
    } else if (msg.method() == SipMethod::Bye && sip::is_final(*msg.status)) {
        finish();
    }
}

void VerificationSession::tear_down() {
    collecting_ = false;
    if (timeout_timer_) {
        net_.cancel_timer(*timeout_timer_);
        timeout_timer_.reset();
    }
    if (grace_timer_) net_.cancel_timer(*grace_timer_);
    net_.hangup(owner_, trace_.call_id);
}

void VerificationSession::finish() {
    if (complete_) return;
    complete_ = true;
    if (on_complete_) on_complete_(trace_);
}

SignalingTrace launch_verification(netsim::Network& net, const IncomingCallContext& ctx,
                                   VerifierConfig config, SimMs max_sim_ms) {
    VerificationSession session(net, ctx, config);
    session.start();
    net.run_until_quiescent(max_sim_ms);
    return session.trace();
}

// ---- features, inference, decision -----------------------------------------

FeatureVector extract_features(const SignalingTrace& trace) {
    if (trace.entries.empty()) {
        throw VerificationError(VerificationError::Kind::EmptyTrace, "empty signaling trace");
    }
    FeatureVector f;
    f.timed_out = trace.timed_out;

    std::optional<unsigned> invite_seq;
    for (const auto& e : trace.entries) {
        if (e.dir == LegDirection::Sent && e.msg.is_request() && e.msg.method() == SipMethod::Invite) {
            invite_seq = e.msg.cseq.seq;
            break;
        }
    }

    for (const auto& e : trace.entries) {
        const auto& m = e.msg;
        if (e.dir == LegDirection::Sent) {
            if (m.is_request() && (m.method() == SipMethod::Cancel || m.method() == SipMethod::Bye)) {
                f.teardown = m.method();
            }
            continue;
        }
        if (!m.is_response()) continue;
        if (m.code() == 181) f.saw_181 = true;
        if (m.code() == 486) f.saw_486 = true;
        if (m.method() != SipMethod::Invite || !invite_seq || m.cseq.seq != *invite_seq) continue;
        if (m.code() == 180 && !f.saw_180) {
            f.saw_180 = true;
            f.pem_180 = m.pem;
            f.alert_180 = m.alert;
        }
        if (sip::is_final(*m.status) && !f.final_to_invite) f.final_to_invite = m.status;
    }
    return f;
}

namespace {

struct Rule {
    InferredState state;
    const char* text;
};

Rule match_rule(const FeatureVector& f) {
    using sip::AlertUrn;
    using sip::PemValue;
    if (f.saw_486) return {InferredState::BusyNoWaiting, "rule 1: 486 Busy Here"};
    if (f.saw_181) return {InferredState::ForwardedToVoicemail, "rule 2: 181 Call Is Being Forwarded"};
    if (f.pem_180 == PemValue::SendOnly) return {InferredState::Dialing, "rule 3: 180 P-Early-Media=sendonly"};
    if (f.pem_180 == PemValue::SendRecv && f.alert_180 == AlertUrn::CallWaiting) {
        return {InferredState::Connected, "rule 4: 180 P-Early-Media=sendrecv with Alert-Info=call-waiting"};
    }
    if (f.pem_180 == PemValue::SendRecv && !f.alert_180) {
        return {InferredState::Idle, "rule 5: 180 P-Early-Media=sendrecv without Alert-Info"};
    }
    if (f.timed_out || (f.final_to_invite && f.final_to_invite->code == 480) || !f.saw_180) {
        return {InferredState::Unreachable, "rule 6: timeout, 480, or no 180"};
    }
    return {InferredState::Unknown, "rule 7: no rule matched"};
}

} // namespace

InferredState infer_state(const FeatureVector& f) { return match_rule(f).state; }

std::string explain_inference(const FeatureVector& f) { return match_rule(f).text; }

Verdict decide(const IncomingCallContext& ctx, InferredState inferred) {
    if (ctx.phase != fsm::CallPhase::Ringing) {
        throw VerificationError(VerificationError::Kind::PhaseNotSupported,
                                "decision is defined for the ringing phase only");
    }
    Verdict v;
    v.inferred = inferred;
    v.expected = fsm::expected_caller_state(ctx.phase, ctx.callee).describe();
    const std::string who = ctx.claimed_id.str();
    switch (inferred) {
    case InferredState::Dialing:
        v.decision = Decision::Legit;
        v.reason = who + " is dialing, consistent with placing the incoming call";
        break;
    case InferredState::Idle:
    case InferredState::Connected:
    case InferredState::BusyNoWaiting:
    case InferredState::ForwardedToVoicemail:
        v.decision = Decision::Spoofed;
        v.reason = who + " is " + std::string(to_string(inferred)) + ", expected " + v.expected;
        break;
    case InferredState::Unreachable:
    case InferredState::Unknown:
        v.decision = Decision::Inconclusive;
        v.reason = "state of " + who + " could not be inferred (" + std::string(to_string(inferred)) + ")";
        break;
    }
    return v;
}

Verdict decide(const IncomingCallContext& ctx, const FeatureVector& features) {
    Verdict v = decide(ctx, infer_state(features));
    v.reason += "; " + explain_inference(features);
    v.features = features;
    return v;
}

bool is_legal_trace(const SignalingTrace& trace) {
    std::vector<int> codes;
    std::optional<unsigned> invite_seq;
    for (const auto& e : trace.entries) {
        const auto& m = e.msg;
        if (e.dir == LegDirection::Sent && m.is_request() && m.method() == SipMethod::Invite) {
            invite_seq = m.cseq.seq;
        }
        if (e.dir == LegDirection::Received && m.is_response() && m.method() == SipMethod::Invite &&
            invite_seq && m.cseq.seq == *invite_seq) {
            codes.push_back(m.code());
        }
    }
    if (codes == std::vector<int>{480}) return true;
    return fsm::is_legal_invite_response_sequence(codes);
}

// ---- offline reconstruction ------------------------------------------------

SignalingTrace trace_from_log(const std::vector<netsim::TraceRecord>& records,
                              const std::optional<std::string>& call_id) {
    struct Parsed {
        const netsim::TraceRecord* rec;
        SipMessage msg;
    };
    std::vector<Parsed> parsed;
    parsed.reserve(records.size());
    for (const auto& r : records) parsed.push_back(Parsed{&r, sip::parse_message(r.sip)});

    auto from_endpoint = [](const netsim::TraceRecord& r) {
        return !r.from_hop.empty() && r.from_hop.front() == '+';
    };

    // INVITEs as they leave their originating handset, in order.
    std::vector<const Parsed*> invites;
    for (const auto& p : parsed) {
        if (from_endpoint(*p.rec) && p.msg.is_request() && p.msg.method() == SipMethod::Invite) {
            invites.push_back(&p);
        }
    }

    const Parsed* chosen = nullptr;
    if (call_id) {
        for (const auto* p : invites) {
            if (p->msg.call_id == *call_id) {
                chosen = p;
                break;
            }
        }
    } else {
        for (std::size_t j = 0; j < invites.size() && !chosen; ++j) {
            for (std::size_t i = 0; i < j; ++i) {
                if (invites[i]->msg.to == invites[j]->msg.from && invites[i]->msg.from == invites[j]->msg.to) {
                    chosen = invites[j];
                    break;
                }
            }
        }
        if (!chosen && invites.size() == 1) chosen = invites.front();
    }
    if (!chosen) {
        throw VerificationError(VerificationError::Kind::LegNotFound,
                                call_id ? "no INVITE with Call-ID " + *call_id
                                        : "no call-back INVITE found; pass a Call-ID");
    }

    SignalingTrace trace;
    trace.call_id = chosen->msg.call_id;
    const std::string& owner = chosen->rec->from_hop;
    bool final_seen = false;
    for (const auto& p : parsed) {
        if (p.msg.call_id != trace.call_id) continue;
        if (p.rec->from_hop == owner) {
            trace.entries.push_back(TraceEntry{p.rec->t_ms, LegDirection::Sent, p.msg});
        } else if (p.rec->to_hop == owner) {
            trace.entries.push_back(TraceEntry{p.rec->t_ms, LegDirection::Received, p.msg});
            if (p.msg.is_response() && p.msg.method() == SipMethod::Invite && sip::is_final(*p.msg.status)) {
                final_seen = true;
            }
        }
    }
    trace.timed_out = !final_seen;
    return trace;
}

// ---- JSON -----------------------------------------------------------------

nlohmann::ordered_json to_json(const FeatureVector& f) {
    nlohmann::ordered_json j;
    auto opt = [](const auto& v, auto fn) -> nlohmann::ordered_json {
        if (!v) return nullptr;
        return fn(*v);
    };
    j["pem_180"] = opt(f.pem_180, [](sip::PemValue p) { return std::string(sip::to_string(p)); });
    j["alert_180"] = opt(f.alert_180, [](sip::AlertUrn a) { return std::string(sip::to_string(a)); });
    j["saw_180"] = f.saw_180;
    j["saw_181"] = f.saw_181;
    j["saw_486"] = f.saw_486;
    j["final_to_invite"] = opt(f.final_to_invite, [](const sip::StatusCode& s) { return s.code; });
    j["teardown"] = opt(f.teardown, [](SipMethod m) { return std::string(sip::to_string(m)); });
    j["timed_out"] = f.timed_out;
    return j;
}

nlohmann::ordered_json to_json(const Verdict& v, const std::string& trace_ref) {
    nlohmann::ordered_json j;
    j["decision"] = to_string(v.decision);
    j["inferred"] = to_string(v.inferred);
    j["expected"] = v.expected;
    j["reason"] = v.reason;
    j["features"] = to_json(v.features);
    j["trace_ref"] = trace_ref;
    return j;
}

} // namespace cive::defense
