#pragma once

// Wire model for the SIP subset used by call-setup signaling: five methods,
// eleven status codes, and the two side-channel headers (P-Early-Media,
// Alert-Info) that leak the callee's call state.

#include <compare>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cive::sip {

/// E.164-style subscriber number: '+' followed by 7..15 digits.
class PhoneNumber {
public:
    PhoneNumber() = default;
    explicit PhoneNumber(std::string digits);

    static bool is_valid(std::string_view text) noexcept;
    static std::optional<PhoneNumber> try_parse(std::string_view text);

    const std::string& str() const noexcept { return digits_; }
    bool empty() const noexcept { return digits_.empty(); }

    auto operator<=>(const PhoneNumber&) const = default;

private:
    std::string digits_;
};

enum class SipMethod { Invite, Prack, Ack, Cancel, Bye };

std::string_view to_string(SipMethod m) noexcept;
std::optional<SipMethod> method_from_string(std::string_view text) noexcept;

enum class StatusClass { Provisional, Success, Redirect, ClientFailure };

std::string_view to_string(StatusClass c) noexcept;

struct StatusCode {
    int code = 0;
    std::string reason;

    /// Throws std::invalid_argument when `code` is outside the closed set.
    explicit StatusCode(int code);
    StatusCode(int code, std::string reason);

    bool operator==(const StatusCode&) const = default;

    static bool is_known(int code) noexcept;
    /// Canonical reason phrase, empty for codes outside the closed set.
    static std::string_view canonical_reason(int code) noexcept;
    /// The closed set in ascending order.
    static const std::vector<int>& known_codes();
};

StatusClass classify_status(const StatusCode& status) noexcept;

inline bool is_final(const StatusCode& s) noexcept { return s.code >= 200; }

enum class PemValue { SendRecv, SendOnly, RecvOnly, Inactive };

std::string_view to_string(PemValue v) noexcept;
std::optional<PemValue> pem_from_string(std::string_view text) noexcept;

// Absent Alert-Info is represented by an empty optional, not by Normal.
enum class AlertUrn { Normal, CallWaiting, Forward, RecallCallback, RecallHold, RecallTransfer };

/// The service suffix after "urn:alert:service:", e.g. "call-waiting".
std::string_view to_string(AlertUrn v) noexcept;
std::optional<AlertUrn> alert_from_string(std::string_view service) noexcept;

struct CSeq {
    unsigned seq = 1;
    SipMethod method = SipMethod::Invite;

    bool operator==(const CSeq&) const = default;
};

enum class MessageKind { Request, Response };

struct Header {
    std::string name;
    std::string value;

    bool operator==(const Header&) const = default;
};

/// A request or response. For requests the method is cseq.method and the
/// Request-URI is derived from `to`; for responses cseq echoes the request.
struct SipMessage {
    MessageKind kind = MessageKind::Request;
    std::optional<StatusCode> status;
    PhoneNumber from;
    PhoneNumber to;
    std::string call_id;
    CSeq cseq;
    std::optional<PemValue> pem;
    std::optional<AlertUrn> alert;
    std::vector<Header> extra_headers;
    std::string body;

    bool is_request() const noexcept { return kind == MessageKind::Request; }
    bool is_response() const noexcept { return kind == MessageKind::Response; }
    SipMethod method() const noexcept { return cseq.method; }
    int code() const noexcept { return status ? status->code : 0; }

    static SipMessage request(SipMethod method, PhoneNumber from, PhoneNumber to,
                              std::string call_id, unsigned seq = 1);
    /// Response echoing From/To/Call-ID/CSeq of `req`.
    static SipMessage response_to(const SipMessage& req, StatusCode status);

    bool operator==(const SipMessage&) const = default;
};

enum class ParseErrorKind {
    MalformedStartLine,
    UnknownMethod,
    UnknownStatusCode,
    BadHeaderSyntax,
    MissingMandatoryHeader,
};

std::string_view to_string(ParseErrorKind k) noexcept;

class ParseError : public std::runtime_error {
public:
    ParseError(ParseErrorKind kind, const std::string& detail);
    ParseErrorKind kind() const noexcept { return kind_; }

private:
    ParseErrorKind kind_;
};

/// Accepts CRLF or LF line endings in the start line and headers. The body
/// (everything after the first empty line) is kept byte for byte.
SipMessage parse_message(std::string_view text);

/// Canonical LF-terminated text: start line, From, To, Call-ID, CSeq,
/// P-Early-Media, Alert-Info, extra headers, blank line, body.
std::string serialize_message(const SipMessage& msg);

/// Short label used in traces and logs: the method name for requests, the
/// numeric code for responses ("INVITE", "180").
std::string message_label(const SipMessage& msg);

} // namespace cive::sip
