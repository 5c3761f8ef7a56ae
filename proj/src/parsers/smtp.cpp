#include "common.hpp"

namespace nfe {

namespace {

Bytes decode_quoted_printable(std::string_view text) {
    Bytes out;
    auto hex = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        return -1;
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (c != '=') {
            out.push_back(static_cast<std::uint8_t>(c));
            continue;
        }
        if (i + 1 < text.size() && text[i + 1] == '\n') {
            i += 1;
        } else if (i + 2 < text.size() && text[i + 1] == '\r' && text[i + 2] == '\n') {
            i += 2;
        } else if (i + 2 < text.size() && hex(text[i + 1]) >= 0 && hex(text[i + 2]) >= 0) {
            out.push_back(static_cast<std::uint8_t>(hex(text[i + 1]) * 16 + hex(text[i + 2])));
            i += 2;
        } else {
            out.push_back('=');
        }
    }
    return out;
}

std::optional<std::string> find_header(const std::vector<std::pair<std::string, std::string>>& h,
                                       std::string_view name) {
    for (const auto& [k, v] : h) {
        if (iequals(k, name)) return v;
    }
    return std::nullopt;
}

void parse_entity(std::string_view entity, std::vector<MimePart>& parts, int depth) {
    auto hend = parsers::header_end(entity, 0);
    std::string_view head = hend == std::string_view::npos ? entity : entity.substr(0, hend);
    std::string_view body = hend == std::string_view::npos ? std::string_view{} : entity.substr(hend);
    // A part with no header block starts directly with its body.
    if (!entity.empty() && (entity.front() == '\n' || entity.starts_with("\r\n"))) {
        head = {};
        body = entity.substr(entity.front() == '\n' ? 1 : 2);
    }
    auto headers = detail::parse_header_block(head);
    auto ctype = find_header(headers, "Content-Type").value_or("text/plain");
    auto media = to_lower(trim(std::string_view(ctype).substr(0, ctype.find(';'))));

    if (media.starts_with("multipart/") && depth < 8) {
        auto boundary = detail::header_param(ctype, "boundary");
        if (boundary && !boundary->empty()) {
            std::string delim = "--" + *boundary;
            std::size_t pos = body.find(delim);
            while (pos != std::string_view::npos) {
                pos += delim.size();
                if (body.substr(pos).starts_with("--")) break;
                // Skip the rest of the delimiter line.
                auto nl = body.find('\n', pos);
                if (nl == std::string_view::npos) break;
                pos = nl + 1;
                auto next = body.find(delim, pos);
                auto part = body.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos);
                // The CRLF preceding the delimiter belongs to the delimiter.
                if (part.ends_with("\r\n")) part.remove_suffix(2);
                else if (part.ends_with("\n")) part.remove_suffix(1);
                parse_entity(part, parts, depth + 1);
                pos = next;
            }
            return;
        }
    }

    MimePart p;
    p.headers = headers;
    p.content_type = media;
    auto cte = to_lower(trim(find_header(headers, "Content-Transfer-Encoding").value_or("")));
    if (cte == "base64") {
        p.body = base64_decode(body).value_or(Bytes{});
    } else if (cte == "quoted-printable") {
        p.body = decode_quoted_printable(body);
    } else {
        auto b = as_bytes(body);
        p.body.assign(b.begin(), b.end());
    }
    auto cd = find_header(headers, "Content-Disposition");
    if (cd) {
        p.filename = detail::header_param(*cd, "filename");
        p.attachment = istarts_with(trim(*cd), "attachment");
    }
    if (!p.filename) p.filename = detail::header_param(ctype, "name");
    if (p.filename) p.attachment = true;
    parts.push_back(std::move(p));
}

class SmtpParser final : public ProtocolParser {
public:
    AppProtocol protocol() const override { return AppProtocol::smtp; }
    std::vector<std::uint16_t> port_hints() const override { return {25, 587, 2525}; }

    double detect(const Session& s, const ParseContext&) const override {
        auto fwd = as_chars(s.stream_fwd);
        auto rev = as_chars(s.stream_rev);
        if (istarts_with(fwd, "EHLO ") || istarts_with(fwd, "HELO ")) return 0.9;
        if (rev.starts_with("220")) {
            auto banner = rev.substr(0, rev.find('\n'));
            if (banner.find("SMTP") != std::string_view::npos) return 0.9;
            if (istarts_with(fwd, "MAIL FROM:")) return 0.8;
            return 0.55;
        }
        return 0.0;
    }

    ParseResult parse(const Session& s, MetadataRecord rec, const ParseContext&) const override {
        ParseResult out;
        for (auto& m : parse_smtp_messages(s)) {
            std::string from = m.envelope_from;
            if (from.empty()) {
                if (auto h = find_header(m.headers, "From")) from = detail::strip_angle(*h);
            }
            if (!from.empty()) {
                rec.add("mail.from", from);
                rec.add("user.name", from);
            }
            for (const auto& to : m.envelope_to) rec.add("mail.to", to);
            if (m.envelope_to.empty()) {
                if (auto h = find_header(m.headers, "To")) rec.add("mail.to", detail::strip_angle(*h));
            }
            if (auto subj = find_header(m.headers, "Subject")) rec.add("mail.subject", *subj);
            for (auto& part : m.parts) {
                if (!part.attachment) continue;
                auto name = part.filename.value_or("");
                if (!name.empty()) rec.add("mail.attachment_name", name);
                out.files.push_back(parsers::make_file(name, std::move(part.body), AppProtocol::smtp));
            }
        }
        out.records.push_back(std::move(rec));
        return out;
    }

    std::vector<FieldSpec> fields() const override {
        using parsers::attr;
        return {attr("mail.from", "Envelope sender (MAIL FROM), else header From"),
                attr("mail.to", "Envelope recipients (RCPT TO)"),
                attr("mail.subject", "Subject header"),
                attr("mail.attachment_name", "MIME attachment file name")};
    }
};

}  // namespace

std::vector<MailMessage> parse_smtp_messages(const Session& s) {
    std::vector<MailMessage> out;
    auto text = as_chars(s.stream_fwd);
    std::size_t pos = 0;
    MailMessage cur;
    bool have = false;
    while (auto line = parsers::read_line(text, pos)) {
        auto [verb, arg] = parsers::split_verb(*line);
        if (iequals(verb, "MAIL") && istarts_with(arg, "FROM:")) {
            cur = {};
            have = true;
            cur.envelope_from = detail::strip_angle(arg.substr(5));
        } else if (iequals(verb, "RCPT") && istarts_with(arg, "TO:")) {
            cur.envelope_to.push_back(detail::strip_angle(arg.substr(3)));
            have = true;
        } else if (iequals(verb, "DATA") && arg.empty()) {
            // Message runs to a line holding a single dot.
            std::string data;
            while (auto l = parsers::read_line(text, pos)) {
                if (*l == ".") break;
                std::string_view v = *l;
                if (v.starts_with("..")) v.remove_prefix(1);
                data.append(v);
                data.append("\r\n");
            }
            auto hend = parsers::header_end(data, 0);
            cur.raw_headers = data.substr(0, hend == std::string::npos ? data.size() : hend);
            cur.headers = detail::parse_header_block(cur.raw_headers);
            parse_entity(data, cur.parts, 0);
            out.push_back(std::move(cur));
            cur = {};
            have = false;
        }
    }
    if (have) out.push_back(std::move(cur));
    return out;
}

namespace parsers {
std::unique_ptr<ProtocolParser> make_smtp() { return std::make_unique<SmtpParser>(); }
}  // namespace parsers

}  // namespace nfe
