#pragma once

// Callee-side caller-ID verification. While an incoming call rings, the
// callee places a second call back to the claimed number, records that call's
// signaling, infers the claimed party's call state from the 180's
// P-Early-Media / Alert-Info headers (plus 181/486), and checks it against the
// state a genuine caller must be in: dialing the callee.

#include "cive/call_fsm.hpp"
#include "cive/netsim.hpp"
#include "cive/sip.hpp"

#include "json.hpp"

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cive::defense {

using netsim::SimMs;
using sip::PhoneNumber;
using sip::SipMessage;

struct VerifierConfig {
    /// Wait after the first 180 with P-Early-Media before tearing down.
    SimMs capture_grace_ms = 2000;
    SimMs au_call_timeout_ms = 10000;
};

struct IncomingCallContext {
    PhoneNumber claimed_id; // caller ID shown for the incoming call
    PhoneNumber callee;     // the verifying endpoint
    std::string in_call_id;
    fsm::CallPhase phase = fsm::CallPhase::Ringing;
    SimMs t_start = 0;
};

struct TraceEntry {
    SimMs t_ms = 0;
    netsim::LegDirection dir = netsim::LegDirection::Sent;
    SipMessage msg;
    bool operator==(const TraceEntry&) const = default;
};

/// One verification call as seen by the callee.
struct SignalingTrace {
    std::string call_id;
    std::vector<TraceEntry> entries;
    bool timed_out = false;
    bool operator==(const SignalingTrace&) const = default;
};

struct FeatureVector {
    std::optional<sip::PemValue> pem_180;
    std::optional<sip::AlertUrn> alert_180;
    bool saw_180 = false;
    bool saw_181 = false;
    bool saw_486 = false;
    std::optional<sip::StatusCode> final_to_invite;
    std::optional<sip::SipMethod> teardown; // BYE or CANCEL
    bool timed_out = false;
    bool operator==(const FeatureVector&) const = default;
};

enum class InferredState { Dialing, Idle, Connected, BusyNoWaiting, ForwardedToVoicemail, Unreachable, Unknown };

std::string_view to_string(InferredState s) noexcept;

enum class Decision { Legit, Spoofed, Inconclusive };

std::string_view to_string(Decision d) noexcept;

struct Verdict {
    Decision decision = Decision::Inconclusive;
    InferredState inferred = InferredState::Unknown;
    std::string expected;
    std::string reason;
    FeatureVector features;
};

class VerificationError : public std::runtime_error {
public:
    enum class Kind { LineBusy, PhaseNotSupported, EmptyTrace, LegNotFound };
    VerificationError(Kind kind, const std::string& detail);
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Drives one verification call inside a running simulation. The session
/// must outlive the simulation run that carries its call.
class VerificationSession final : public netsim::LegObserver {
public:
    using Completion = std::function<void(const SignalingTrace&)>;

    VerificationSession(netsim::Network& net, IncomingCallContext ctx, VerifierConfig config = {});

    VerificationSession(const VerificationSession&) = delete;
    VerificationSession& operator=(const VerificationSession&) = delete;

    /// Throws LineBusy if the callee is dialing or already verifying, and
    /// PhaseNotSupported unless the incoming call is still ringing.
    void start(Completion on_complete = {});

    const SignalingTrace& trace() const noexcept { return trace_; }
    const IncomingCallContext& context() const noexcept { return ctx_; }
    bool complete() const noexcept { return complete_; }

    void on_leg_message(SimMs t, netsim::LegDirection dir, const SipMessage& msg) override;

private:
    void tear_down();
    void finish();

    netsim::Network& net_;
    IncomingCallContext ctx_;
    VerifierConfig config_;
    netsim::EndpointHandle owner_;
    SignalingTrace trace_;
    Completion on_complete_;
    std::optional<netsim::Network::TimerId> timeout_timer_;
    std::optional<netsim::Network::TimerId> grace_timer_;
    bool collecting_ = true;
    bool complete_ = false;
};

/// Starts a verification and runs the simulation until it goes quiet.
SignalingTrace launch_verification(netsim::Network& net, const IncomingCallContext& ctx,
                                   VerifierConfig config = {}, SimMs max_sim_ms = 60000);

FeatureVector extract_features(const SignalingTrace& trace);

InferredState infer_state(const FeatureVector& f);
/// Which inference rule fired, as a short human-readable string.
std::string explain_inference(const FeatureVector& f);

Verdict decide(const IncomingCallContext& ctx, InferredState inferred);
Verdict decide(const IncomingCallContext& ctx, const FeatureVector& features);

/// Response codes to the INVITE follow the call-setup pattern, or the leg
/// was refused by the network with a lone 480.
bool is_legal_trace(const SignalingTrace& trace);

/// Rebuilds a verification trace from a hop-level trace log. Without
/// `call_id` the leg is found by its shape: an INVITE from X to Y sent after
/// an INVITE from Y to X.
SignalingTrace trace_from_log(const std::vector<netsim::TraceRecord>& records,
                              const std::optional<std::string>& call_id = std::nullopt);

nlohmann::ordered_json to_json(const FeatureVector& f);
nlohmann::ordered_json to_json(const Verdict& v, const std::string& trace_ref);

} // namespace cive::defense
