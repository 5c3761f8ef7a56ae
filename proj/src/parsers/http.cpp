#include "common.hpp"

#include <array>
#include <charconv>

namespace nfe {

namespace {

constexpr std::array<std::string_view, 9> kMethods = {"GET", "POST", "HEAD", "PUT", "DELETE",
                                                      "OPTIONS", "PATCH", "CONNECT", "TRACE"};

bool is_request_line(std::string_view line) {
    auto sp = line.find(' ');
    if (sp == std::string_view::npos) return false;
    auto method = line.substr(0, sp);
    bool known = false;
    for (auto m : kMethods) known |= (m == method);
    if (!known) return false;
    auto ver = line.rfind(' ');
    return ver != sp && line.substr(ver + 1).starts_with("HTTP/1.");
}

std::optional<std::uint64_t> parse_uint(std::string_view s, int base = 10) {
    std::uint64_t v = 0;
    s = trim(s);
    if (s.empty()) return std::nullopt;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (ec != std::errc{}) return std::nullopt;
    return v;
}

/// Decodes a chunked body starting at `pos`. Stops at the terminating
/// zero-size chunk or at end of input (tolerating truncation).
Bytes dechunk(std::string_view text, std::size_t& pos) {
    Bytes out;
    while (pos < text.size()) {
        auto line = parsers::read_line(text, pos);
        if (!line) {
            pos = text.size();
            break;
        }
        auto size_text = line->substr(0, line->find(';'));
        auto size = parse_uint(size_text, 16);
        if (!size) break;
        if (*size == 0) {
            // Trailer section ends with an empty line.
            while (auto t = parsers::read_line(text, pos)) {
                if (t->empty()) break;
            }
            break;
        }
        auto n = std::min<std::uint64_t>(*size, text.size() - pos);
        auto chunk = as_bytes(text.substr(pos, n));
        out.insert(out.end(), chunk.begin(), chunk.end());
        pos += n;
        if (pos < text.size() && text[pos] == '\r') ++pos;
        if (pos < text.size() && text[pos] == '\n') ++pos;
    }
    return out;
}

struct RawMessage {
    HttpMessage msg;
    std::string encoding;  // content-encoding, lowercased
};

/// Parses one message at `pos`. `response_for` carries the request method
/// when parsing a response, so HEAD replies are known to be bodiless.
std::optional<RawMessage> parse_message(std::string_view text, std::size_t& pos, bool response,
                                        std::string_view request_method) {
    if (pos >= text.size()) return std::nullopt;
    std::size_t start = pos;
    auto hend = parsers::header_end(text, start);
    std::size_t line_end_pos = start;
    auto first = parsers::read_line(text, line_end_pos);
    if (!first) return std::nullopt;
    if (response ? !first->starts_with("HTTP/1.") : !is_request_line(*first)) return std::nullopt;

    RawMessage rm;
    rm.msg.start_line = std::string(*first);
    if (hend == std::string_view::npos) {
        // Headers cut off: keep what we have.
        rm.msg.headers = detail::parse_header_block(text.substr(line_end_pos));
        pos = text.size();
        return rm;
    }
    rm.msg.headers = detail::parse_header_block(text.substr(line_end_pos, hend - line_end_pos));
    pos = hend;

    int status = 0;
    if (response) {
        auto parts = parsers::split_verb(*first);
        status = static_cast<int>(parse_uint(parsers::split_verb(parts.second).first).value_or(0));
    }
    bool bodiless = response && ((status >= 100 && status < 200) || status == 204 || status == 304 ||
                                 request_method == "HEAD");

    Bytes body;
    auto te = rm.msg.header("Transfer-Encoding");
    auto cl = rm.msg.header("Content-Length");
    if (bodiless) {
    } else if (te && to_lower(*te).find("chunked") != std::string::npos) {
        body = dechunk(text, pos);
    } else if (cl) {
        auto n = std::min<std::uint64_t>(parse_uint(*cl).value_or(0), text.size() - pos);
        auto b = as_bytes(text.substr(pos, n));
        body.assign(b.begin(), b.end());
        pos += n;
    } else if (response) {
        auto b = as_bytes(text.substr(pos));
        body.assign(b.begin(), b.end());
        pos = text.size();
    }

    auto ce = rm.msg.header("Content-Encoding");
    rm.encoding = ce ? to_lower(trim(*ce)) : std::string();
    if (rm.encoding.empty() || rm.encoding == "identity") {
        rm.msg.body = std::move(body);
    } else if (rm.encoding == "gzip" || rm.encoding == "x-gzip") {
        auto d = inflate_gzip(body);
        rm.msg.body_decoded = d.has_value();
        rm.msg.body = d ? std::move(*d) : std::move(body);
    } else if (rm.encoding == "deflate") {
        auto d = inflate_deflate(body);
        rm.msg.body_decoded = d.has_value();
        rm.msg.body = d ? std::move(*d) : std::move(body);
    } else {
        rm.msg.body_decoded = false;
        rm.msg.body = std::move(body);
    }
    return rm;
}

std::string uri_filename(std::string_view uri) {
    auto q = uri.find_first_of("?#");
    auto path = uri.substr(0, q);
    auto slash = path.rfind('/');
    return std::string(slash == std::string_view::npos ? path : path.substr(slash + 1));
}

std::optional<std::string> basic_auth_user(std::string_view value) {
    auto [scheme, cred] = parsers::split_verb(value);
    if (!iequals(scheme, "basic")) return std::nullopt;
    auto decoded = base64_decode(cred);
    if (!decoded) return std::nullopt;
    auto text = as_chars(*decoded);
    auto colon = text.find(':');
    return std::string(text.substr(0, colon));
}

class HttpParser final : public ProtocolParser {
public:
    AppProtocol protocol() const override { return AppProtocol::http; }
    std::vector<std::uint16_t> port_hints() const override { return {80, 8080, 8000, 3128}; }

    double detect(const Session& s, const ParseContext&) const override {
        std::size_t pos = 0;
        auto fwd = as_chars(s.stream_fwd);
        if (auto line = parsers::read_line(fwd.substr(0, 4096), pos); line && is_request_line(*line)) return 0.9;
        if (as_chars(s.stream_rev).starts_with("HTTP/1.")) return 0.85;
        return 0.0;
    }

    ParseResult parse(const Session& s, MetadataRecord rec, const ParseContext&) const override {
        ParseResult out;
        for (auto& ex : parse_http_exchanges(s)) {
            rec.add("http.method", ex.method);
            rec.add("http.uri", ex.uri);
            if (!ex.host.empty()) rec.add("http.host", ex.host);
            if (auto ua = ex.request.header("User-Agent")) rec.add("http.user_agent", *ua);
            if (auto auth = ex.request.header("Authorization")) {
                if (auto user = basic_auth_user(*auth); user && !user->empty()) rec.add("user.name", *user);
            }
            if (!ex.response) continue;
            const auto& resp = *ex.response;
            rec.add("http.status", std::to_string(ex.status));
            if (auto ct = resp.header("Content-Type")) {
                rec.add("http.content_type", to_lower(trim(std::string_view(*ct).substr(0, ct->find(';')))));
            }
            if (!resp.body_decoded) {
                auto ce = resp.header("Content-Encoding");
                rec.add("http.encoding", ce ? to_lower(trim(*ce)) : "unknown");
            }
            if (resp.body.empty()) continue;
            std::string name;
            if (auto cd = resp.header("Content-Disposition")) name = detail::header_param(*cd, "filename").value_or("");
            if (name.empty()) name = uri_filename(ex.uri);
            if (!name.empty()) rec.add("http.filename", name);
            out.files.push_back(parsers::make_file(name, resp.body, AppProtocol::http));
        }
        out.records.push_back(std::move(rec));
        return out;
    }

    std::vector<FieldSpec> fields() const override {
        using parsers::attr;
        return {attr("http.host", "HTTP Host header"),
                attr("http.uri", "HTTP request target"),
                attr("http.method", "HTTP request method"),
                attr("http.status", "HTTP response status code", FieldKind::integer),
                attr("http.content_type", "Response media type without parameters"),
                attr("http.filename", "Served file name (Content-Disposition or last URI segment)"),
                attr("http.encoding", "Content encoding left undecoded"),
                attr("http.user_agent", "HTTP User-Agent header")};
    }
};

}  // namespace

std::vector<HttpExchange> parse_http_exchanges(const Session& s) {
    std::vector<HttpExchange> out;
    auto fwd = as_chars(s.stream_fwd);
    auto rev = as_chars(s.stream_rev);
    std::size_t fpos = 0, rpos = 0;
    while (auto req = parse_message(fwd, fpos, false, {})) {
        HttpExchange ex;
        auto [method, rest] = parsers::split_verb(req->msg.start_line);
        ex.method = std::string(method);
        ex.uri = std::string(parsers::split_verb(rest).first);
        ex.host = to_lower(trim(req->msg.header("Host").value_or("")));
        ex.request = std::move(req->msg);
        // Skip interim 1xx responses.
        while (true) {
            auto resp = parse_message(rev, rpos, true, ex.method);
            if (!resp) break;
            auto code = parsers::split_verb(parsers::split_verb(resp->msg.start_line).second).first;
            int status = static_cast<int>(parse_uint(code).value_or(0));
            if (status >= 100 && status < 200) continue;
            ex.status = status;
            ex.response = std::move(resp->msg);
            break;
        }
        out.push_back(std::move(ex));
    }
    return out;
}

namespace parsers {
std::unique_ptr<ProtocolParser> make_http() { return std::make_unique<HttpParser>(); }
}  // namespace parsers

}  // namespace nfe
