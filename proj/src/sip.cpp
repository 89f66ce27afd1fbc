#include "cive/sip.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>

namespace cive::sip {

namespace {

constexpr std::array<std::pair<int, std::string_view>, 11> kStatusTable{{
    {100, "Trying"},
    {180, "Ringing"},
    {181, "Call Is Being Forwarded"},
    {182, "Queued"},
    {183, "Session Progress"},
    {200, "OK"},
    {301, "Moved Permanently"},
    {480, "Temporarily Unavailable"},
    {481, "Call/Transaction Does Not Exist"},
    {486, "Busy Here"},
    {487, "Request Terminated"},
}};

constexpr std::string_view kAlertPrefix = "urn:alert:service:";

bool iequals(std::string_view a, std::string_view b) noexcept {
    return a.size() == b.size() &&
           std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::tolower(static_cast<unsigned char>(x)) ==
                      std::tolower(static_cast<unsigned char>(y));
           });
}

std::string_view trim(std::string_view s) noexcept {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

// "<sip:+15550001>" or "sip:+15550001"
std::optional<PhoneNumber> parse_sip_uri(std::string_view v) {
    if (v.size() >= 2 && v.front() == '<' && v.back() == '>') {
        v = v.substr(1, v.size() - 2);
    }
    if (v.substr(0, 4) != "sip:") return std::nullopt;
    return PhoneNumber::try_parse(v.substr(4));
}

unsigned parse_uint(std::string_view s, ParseErrorKind kind, const char* what) {
    unsigned value = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
        throw ParseError(kind, std::string(what) + ": '" + std::string(s) + "'");
    }
    return value;
}

SipMethod require_method(std::string_view token) {
    auto m = method_from_string(token);
    if (!m) throw ParseError(ParseErrorKind::UnknownMethod, std::string(token));
    return *m;
}

// Splits off the next line; handles CRLF and LF. Returns false at end of input.
bool next_line(std::string_view& rest, std::string_view& line) {
    if (rest.empty()) return false;
    auto nl = rest.find('\n');
    if (nl == std::string_view::npos) {
        line = rest;
        rest = {};
    } else {
        line = rest.substr(0, nl);
        rest.remove_prefix(nl + 1);
    }
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return true;
}

} // namespace

// ---- PhoneNumber ----------------------------------------------------------

PhoneNumber::PhoneNumber(std::string digits) : digits_(std::move(digits)) {
    if (!is_valid(digits_)) {
        throw std::invalid_argument("invalid phone number '" + digits_ + "'");
    }
}

bool PhoneNumber::is_valid(std::string_view text) noexcept {
    if (text.size() < 8 || text.size() > 16 || text.front() != '+') return false;
    return std::all_of(text.begin() + 1, text.end(),
                       [](char c) { return c >= '0' && c <= '9'; });
}

std::optional<PhoneNumber> PhoneNumber::try_parse(std::string_view text) {
    if (!is_valid(text)) return std::nullopt;
    return PhoneNumber(std::string(text));
}

// ---- enumerations ---------------------------------------------------------

std::string_view to_string(SipMethod m) noexcept {
    switch (m) {
    case SipMethod::Invite: return "INVITE";
    case SipMethod::Prack: return "PRACK";
    case SipMethod::Ack: return "ACK";
    case SipMethod::Cancel: return "CANCEL";
    case SipMethod::Bye: return "BYE";
    }
    return "?";
}

std::optional<SipMethod> method_from_string(std::string_view text) noexcept {
    for (auto m : {SipMethod::Invite, SipMethod::Prack, SipMethod::Ack, SipMethod::Cancel,
                   SipMethod::Bye}) {
        if (text == to_string(m)) return m;
    }
    return std::nullopt;
}

std::string_view to_string(StatusClass c) noexcept {
    switch (c) {
    case StatusClass::Provisional: return "provisional";
    case StatusClass::Success: return "success";
    case StatusClass::Redirect: return "redirect";
    case StatusClass::ClientFailure: return "client-failure";
    }
    return "?";
}

std::string_view to_string(PemValue v) noexcept {
    switch (v) {
    case PemValue::SendRecv: return "sendrecv";
    case PemValue::SendOnly: return "sendonly";
    case PemValue::RecvOnly: return "recvonly";
    case PemValue::Inactive: return "inactive";
    }
    return "?";
}

std::optional<PemValue> pem_from_string(std::string_view text) noexcept {
    for (auto v : {PemValue::SendRecv, PemValue::SendOnly, PemValue::RecvOnly, PemValue::Inactive}) {
        if (text == to_string(v)) return v;
    }
    return std::nullopt;
}

std::string_view to_string(AlertUrn v) noexcept {
    switch (v) {
    case AlertUrn::Normal: return "normal";
    case AlertUrn::CallWaiting: return "call-waiting";
    case AlertUrn::Forward: return "forward";
    case AlertUrn::RecallCallback: return "recall:callback";
    case AlertUrn::RecallHold: return "recall:hold";
    case AlertUrn::RecallTransfer: return "recall:transfer";
    }
    return "?";
}

std::optional<AlertUrn> alert_from_string(std::string_view service) noexcept {
    for (auto v : {AlertUrn::Normal, AlertUrn::CallWaiting, AlertUrn::Forward,
                   AlertUrn::RecallCallback, AlertUrn::RecallHold, AlertUrn::RecallTransfer}) {
        if (service == to_string(v)) return v;
    }
    return std::nullopt;
}

std::string_view to_string(ParseErrorKind k) noexcept {
    switch (k) {
    case ParseErrorKind::MalformedStartLine: return "MalformedStartLine";
    case ParseErrorKind::UnknownMethod: return "UnknownMethod";
    case ParseErrorKind::UnknownStatusCode: return "UnknownStatusCode";
    case ParseErrorKind::BadHeaderSyntax: return "BadHeaderSyntax";
    case ParseErrorKind::MissingMandatoryHeader: return "MissingMandatoryHeader";
    }
    return "?";
}

ParseError::ParseError(ParseErrorKind kind, const std::string& detail)
    : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

// ---- StatusCode -----------------------------------------------------------

StatusCode::StatusCode(int c) : StatusCode(c, std::string(canonical_reason(c))) {}

StatusCode::StatusCode(int c, std::string r) : code(c), reason(std::move(r)) {
    if (!is_known(c)) {
        throw std::invalid_argument("status code " + std::to_string(c) + " outside closed set");
    }
    if (reason.empty()) reason = std::string(canonical_reason(c));
}

bool StatusCode::is_known(int c) noexcept {
    return std::any_of(kStatusTable.begin(), kStatusTable.end(),
                       [c](const auto& e) { return e.first == c; });
}

std::string_view StatusCode::canonical_reason(int c) noexcept {
    for (const auto& [k, phrase] : kStatusTable) {
        if (k == c) return phrase;
    }
    return {};
}

const std::vector<int>& StatusCode::known_codes() {
    static const std::vector<int> codes = [] {
        std::vector<int> v;
        for (const auto& e : kStatusTable) v.push_back(e.first);
        return v;
    }();
    return codes;
}

StatusClass classify_status(const StatusCode& status) noexcept {
    if (status.code < 200) return StatusClass::Provisional;
    if (status.code < 300) return StatusClass::Success;
    if (status.code < 400) return StatusClass::Redirect;
    return StatusClass::ClientFailure;
}

// ---- SipMessage -----------------------------------------------------------

SipMessage SipMessage::request(SipMethod method, PhoneNumber from, PhoneNumber to,
                               std::string call_id, unsigned seq) {
    SipMessage m;
    m.kind = MessageKind::Request;
    m.from = std::move(from);
    m.to = std::move(to);
    m.call_id = std::move(call_id);
    m.cseq = CSeq{seq, method};
    return m;
}

SipMessage SipMessage::response_to(const SipMessage& req, StatusCode status) {
    SipMessage m;
    m.kind = MessageKind::Response;
    m.status = std::move(status);
    m.from = req.from;
    m.to = req.to;
    m.call_id = req.call_id;
    m.cseq = req.cseq;
    return m;
}

std::string message_label(const SipMessage& msg) {
    if (msg.is_request()) return std::string(to_string(msg.method()));
    return std::to_string(msg.code());
}

// ---- parse ----------------------------------------------------------------

SipMessage parse_message(std::string_view text) {
    std::string_view rest = text;
    std::string_view line;
    if (!next_line(rest, line) || line.empty()) {
        throw ParseError(ParseErrorKind::MalformedStartLine, "empty message");
    }

    SipMessage msg;
    std::optional<SipMethod> request_method;

    // Start line: three space-separated fields.
    auto sp1 = line.find(' ');
    auto sp2 = sp1 == std::string_view::npos ? sp1 : line.find(' ', sp1 + 1);
    if (sp1 == std::string_view::npos || sp2 == std::string_view::npos) {
        throw ParseError(ParseErrorKind::MalformedStartLine, std::string(line));
    }
    const auto first = line.substr(0, sp1);
    const auto second = line.substr(sp1 + 1, sp2 - sp1 - 1);
    const auto third = line.substr(sp2 + 1);
    std::optional<PhoneNumber> request_uri;

    if (first == "SIP/2.0") {
        msg.kind = MessageKind::Response;
        if (second.size() != 3) {
            throw ParseError(ParseErrorKind::MalformedStartLine, std::string(line));
        }
        const int code = static_cast<int>(
            parse_uint(second, ParseErrorKind::MalformedStartLine, "status code"));
        if (!StatusCode::is_known(code)) {
            throw ParseError(ParseErrorKind::UnknownStatusCode, std::string(second));
        }
        msg.status = StatusCode(code, std::string(third));
    } else {
        if (third != "SIP/2.0" || first.empty()) {
            throw ParseError(ParseErrorKind::MalformedStartLine, std::string(line));
        }
        msg.kind = MessageKind::Request;
        request_method = require_method(first);
        request_uri = parse_sip_uri(second);
        if (!request_uri) {
            throw ParseError(ParseErrorKind::MalformedStartLine,
                             "bad Request-URI '" + std::string(second) + "'");
        }
    }

    bool have_from = false, have_to = false, have_call_id = false, have_cseq = false;

    auto duplicate = [](std::string_view name) {
        return ParseError(ParseErrorKind::BadHeaderSyntax, "duplicate " + std::string(name));
    };

    while (next_line(rest, line)) {
        if (line.empty()) break;
        auto colon = line.find(':');
        if (colon == std::string_view::npos) {
            throw ParseError(ParseErrorKind::BadHeaderSyntax, "no colon in '" + std::string(line) + "'");
        }
        const auto name = trim(line.substr(0, colon));
        const auto value = trim(line.substr(colon + 1));
        if (name.empty() || name.find_first_of(" \t") != std::string_view::npos) {
            throw ParseError(ParseErrorKind::BadHeaderSyntax, "bad header name '" + std::string(line) + "'");
        }

        if (iequals(name, "From") || iequals(name, "To")) {
            auto number = parse_sip_uri(value);
            if (!number) {
                throw ParseError(ParseErrorKind::BadHeaderSyntax,
                                 std::string(name) + ": '" + std::string(value) + "'");
            }
            bool& seen = iequals(name, "From") ? have_from : have_to;
            if (seen) throw duplicate(name);
            seen = true;
            (iequals(name, "From") ? msg.from : msg.to) = *number;
        } else if (iequals(name, "Call-ID")) {
            if (have_call_id) throw duplicate(name);
            if (value.empty() || value.find_first_of(" \t") != std::string_view::npos) {
                throw ParseError(ParseErrorKind::BadHeaderSyntax, "Call-ID: '" + std::string(value) + "'");
            }
            have_call_id = true;
            msg.call_id = std::string(value);
        } else if (iequals(name, "CSeq")) {
            if (have_cseq) throw duplicate(name);
            auto sp = value.find(' ');
            if (sp == std::string_view::npos) {
                throw ParseError(ParseErrorKind::BadHeaderSyntax, "CSeq: '" + std::string(value) + "'");
            }
            const unsigned seq =
                parse_uint(value.substr(0, sp), ParseErrorKind::BadHeaderSyntax, "CSeq number");
            if (seq < 1) throw ParseError(ParseErrorKind::BadHeaderSyntax, "CSeq number must be >= 1");
            auto m = method_from_string(trim(value.substr(sp + 1)));
            if (!m) {
                throw ParseError(ParseErrorKind::BadHeaderSyntax, "CSeq method '" + std::string(value) + "'");
            }
            have_cseq = true;
            msg.cseq = CSeq{seq, *m};
        } else if (iequals(name, "P-Early-Media")) {
            if (msg.pem) throw duplicate(name);
            auto v = pem_from_string(value);
            if (!v) throw ParseError(ParseErrorKind::BadHeaderSyntax, "P-Early-Media: '" + std::string(value) + "'");
            msg.pem = *v;
        } else if (iequals(name, "Alert-Info")) {
            if (msg.alert) throw duplicate(name);
            std::optional<AlertUrn> v;
            if (value.size() > kAlertPrefix.size() + 2 && value.front() == '<' && value.back() == '>') {
                auto urn = value.substr(1, value.size() - 2);
                if (urn.substr(0, kAlertPrefix.size()) == kAlertPrefix) {
                    v = alert_from_string(urn.substr(kAlertPrefix.size()));
                }
            }
            if (!v) throw ParseError(ParseErrorKind::BadHeaderSyntax, "Alert-Info: '" + std::string(value) + "'");
            msg.alert = *v;
        } else {
            msg.extra_headers.push_back(Header{std::string(name), std::string(value)});
        }
    }
    msg.body = std::string(rest);

    if (!have_from) throw ParseError(ParseErrorKind::MissingMandatoryHeader, "From");
    if (!have_to) throw ParseError(ParseErrorKind::MissingMandatoryHeader, "To");
    if (!have_call_id) throw ParseError(ParseErrorKind::MissingMandatoryHeader, "Call-ID");
    if (!have_cseq) throw ParseError(ParseErrorKind::MissingMandatoryHeader, "CSeq");

    if (request_method) {
        if (*request_method != msg.cseq.method) {
            throw ParseError(ParseErrorKind::BadHeaderSyntax, "CSeq method does not match request method");
        }
        if (*request_uri != msg.to) {
            throw ParseError(ParseErrorKind::MalformedStartLine, "Request-URI does not match To");
        }
    }
    return msg;
}

// ---- serialize ------------------------------------------------------------

std::string serialize_message(const SipMessage& msg) {
    std::string out;
    out.reserve(256 + msg.body.size());
    if (msg.is_request()) {
        out += to_string(msg.method());
        out += " sip:";
        out += msg.to.str();
        out += " SIP/2.0\n";
    } else {
        out += "SIP/2.0 ";
        out += std::to_string(msg.status->code);
        out += ' ';
        out += msg.status->reason;
        out += '\n';
    }
    out += "From: <sip:" + msg.from.str() + ">\n";
    out += "To: <sip:" + msg.to.str() + ">\n";
    out += "Call-ID: " + msg.call_id + "\n";
    out += "CSeq: " + std::to_string(msg.cseq.seq) + " " + std::string(to_string(msg.cseq.method)) + "\n";
    if (msg.pem) {
        out += "P-Early-Media: ";
        out += to_string(*msg.pem);
        out += '\n';
    }
    if (msg.alert) {
        out += "Alert-Info: <";
        out += kAlertPrefix;
        out += to_string(*msg.alert);
        out += ">\n";
    }
    for (const auto& h : msg.extra_headers) {
        out += h.name + ": " + h.value + "\n";
    }
    out += '\n';
    out += msg.body;
    return out;
}

} // namespace cive::sip
