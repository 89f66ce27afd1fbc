#pragma once

// Per-endpoint call-setup state machine. Every transition is a pure function
// from (snapshot, input) to (snapshot', actions); the simulator executes the
// actions. An endpoint's visible EndpointState is derived from its legs.

#include "cive/sip.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace cive::fsm {

using sip::PhoneNumber;

/// Simulated delay between sending the 180 and answering a call that
/// collides with the endpoint's own outgoing call to the same peer.
inline constexpr long kCollisionAnswerMs = 1500;

struct Idle {
    bool operator==(const Idle&) const = default;
};
struct Dialing {
    PhoneNumber target;
    bool operator==(const Dialing&) const = default;
};
struct Ringing {
    PhoneNumber peer;
    bool operator==(const Ringing&) const = default;
};
struct Connected {
    PhoneNumber peer;
    bool operator==(const Connected&) const = default;
};
struct Held {
    PhoneNumber peer;
    bool operator==(const Held&) const = default;
};

using EndpointState = std::variant<Idle, Dialing, Ringing, Connected, Held>;

std::string describe(const EndpointState& s);
/// The peer carried by every non-Idle state.
std::optional<PhoneNumber> peer_of(const EndpointState& s);

struct CalleeProfile {
    PhoneNumber number;
    bool call_waiting = false;
    bool voicemail_forward = false;
};

// ---- actions --------------------------------------------------------------

struct SendResponse {
    sip::StatusCode status;
    /// Which request of the leg this answers (INVITE, CANCEL or BYE).
    sip::SipMethod in_reply_to = sip::SipMethod::Invite;
    std::optional<sip::PemValue> pem;
    std::optional<sip::AlertUrn> alert;
    bool operator==(const SendResponse&) const = default;
};
struct SendRequest {
    sip::SipMethod method;
    bool operator==(const SendRequest&) const = default;
};
struct StartRingback {
    bool operator==(const StartRingback&) const = default;
};
struct AutoAnswer {
    long after_ms = kCollisionAnswerMs;
    bool operator==(const AutoAnswer&) const = default;
};
struct NoOp {
    bool operator==(const NoOp&) const = default;
};

using FsmAction = std::variant<SendResponse, SendRequest, StartRingback, AutoAnswer, NoOp>;

std::string describe(const FsmAction& a);

// ---- legs -----------------------------------------------------------------

enum class LegRole { Incoming, Outgoing };

enum class LegKind {
    Primary,   // the call the user sees
    Waiting,   // second incoming call announced with call-waiting
    Collision, // incoming call from the peer this endpoint is dialing
    Voicemail, // answered by the network voicemail agent; never changes state
};

struct Leg {
    std::string call_id;
    PhoneNumber peer;
    LegRole role = LegRole::Incoming;
    LegKind kind = LegKind::Primary;
    bool answered = false;
    bool held = false;
    bool operator==(const Leg&) const = default;
};

/// Value-semantic view of one endpoint's call machinery.
struct Snapshot {
    std::vector<Leg> legs;

    /// answered > outgoing unanswered > incoming unanswered > Idle; voicemail
    /// legs are ignored.
    EndpointState state() const;
    const Leg* find(const std::string& call_id) const;

    /// Synthesizes the background leg that puts a fresh endpoint in `state`.
    /// The leg's call_id is shared by both parties of the background call.
    static Snapshot from_state(const PhoneNumber& self, const EndpointState& state);
    static std::string background_call_id(const PhoneNumber& a, const PhoneNumber& b);

    bool operator==(const Snapshot&) const = default;
};

struct Step {
    Snapshot next;
    std::vector<FsmAction> actions;
};

class FsmError : public std::runtime_error {
public:
    enum class Kind { InviteToWrongNumber, NotAnInvite, NotACancel, NotABye, UnknownLeg };
    FsmError(Kind kind, const std::string& detail);
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

// ---- transitions ----------------------------------------------------------

/// UAS handling of a new INVITE, keyed on the current state and features.
Step on_incoming_invite(const Snapshot& snap, const CalleeProfile& profile,
                        const sip::SipMessage& invite);
/// 200 + 487 for an unanswered incoming leg, 481 otherwise.
Step on_cancel(const Snapshot& snap, const sip::SipMessage& cancel);
/// 200 and leg teardown for an answered leg, 481 otherwise.
Step on_bye(const Snapshot& snap, const sip::SipMessage& bye);
/// Fires the AutoAnswer scheduled for a collision leg. NoOp if the leg is
/// gone or already answered.
Step on_auto_answer(const Snapshot& snap, const std::string& call_id);

// Local user actions.
Step answer(const Snapshot& snap, const std::string& call_id);
Step reject(const Snapshot& snap, const std::string& call_id, const sip::StatusCode& status);
Step hangup(const Snapshot& snap, const std::string& call_id);

// UAC side.
Step originate(const Snapshot& snap, const std::string& call_id, const PhoneNumber& target);
Step on_response(const Snapshot& snap, const sip::SipMessage& response);

/// PRACK for a 183, ACK for any final response to INVITE, otherwise nothing.
/// Shared by the FSM and by side-line legs that do not touch the state.
std::vector<FsmAction> uac_acknowledgement(const sip::SipMessage& response);

// ---- expectations ---------------------------------------------------------

enum class CallPhase { Ringing, Answered };

/// What a genuine caller's state must look like from the callee's side.
struct CallerStatePredicate {
    CallPhase phase = CallPhase::Ringing;
    PhoneNumber callee;

    bool matches(const EndpointState& caller_state) const;
    std::string describe() const;
};

CallerStatePredicate expected_caller_state(CallPhase phase, const PhoneNumber& callee);

/// True when `codes` (responses to one INVITE, in order) matches
/// 100 183? 180* (200 | 486 | 487 | 181 200)? with at most one final.
bool is_legal_invite_response_sequence(const std::vector<int>& codes);

} // namespace cive::fsm
