#include "common.hpp"

#include <algorithm>

namespace nfe {

namespace {

class FtpParser final : public ProtocolParser {
public:
    AppProtocol protocol() const override { return AppProtocol::ftp; }
    std::vector<std::uint16_t> port_hints() const override { return {21}; }

    double detect(const Session& s, const ParseContext& ctx) const override {
        if (s.is_tcp() && ctx.ftp && ctx.ftp->lookup(s.responder, s.first_ts_us)) return 0.95;
        auto fwd = as_chars(s.stream_fwd);
        auto rev = as_chars(s.stream_rev);
        if (rev.starts_with("220")) {
            auto banner = rev.substr(0, rev.find('\n'));
            if (banner.find("FTP") != std::string_view::npos || banner.find("ftp") != std::string_view::npos) return 0.9;
            if (istarts_with(fwd, "USER ")) return 0.85;
            return 0.55;
        }
        if (istarts_with(fwd, "USER ") && rev.starts_with("331")) return 0.85;
        return 0.0;
    }

    ParseResult parse(const Session& s, MetadataRecord rec, const ParseContext& ctx) const override {
        ParseResult out;
        std::optional<FtpCorrelator::Transfer> transfer;
        if (s.is_tcp() && ctx.ftp) transfer = ctx.ftp->lookup(s.responder, s.first_ts_us);
        if (transfer) {
            // Data connection: the body travels in whichever direction carries bytes.
            if (!transfer->command.empty()) rec.add("ftp.command", transfer->command);
            auto name = transfer->filename.value_or("");
            if (!name.empty()) rec.add("ftp.filename", name);
            const Bytes& body = s.stream_fwd.size() >= s.stream_rev.size() ? s.stream_fwd : s.stream_rev;
            bool listing = transfer->command == "LIST" || transfer->command == "NLST";
            if (!body.empty() && !listing) out.files.push_back(parsers::make_file(name, body, AppProtocol::ftp));
            out.records.push_back(std::move(rec));
            return out;
        }
        for (auto line : parsers::split_lines(as_chars(s.stream_fwd))) {
            auto [verb, arg] = parsers::split_verb(line);
            if (verb.empty() || verb.size() > 8) continue;
            auto v = to_upper(verb);
            if (!std::all_of(v.begin(), v.end(), [](char c) { return c >= 'A' && c <= 'Z'; })) continue;
            rec.add("ftp.command", v);
            if (v == "USER" && !arg.empty()) {
                rec.add("ftp.user", std::string(arg));
                rec.add("user.name", std::string(arg));
            } else if ((v == "RETR" || v == "STOR" || v == "APPE" || v == "DELE" || v == "SIZE") && !arg.empty()) {
                rec.add("ftp.filename", std::string(arg));
            }
        }
        out.records.push_back(std::move(rec));
        return out;
    }

    std::vector<FieldSpec> fields() const override {
        using parsers::attr;
        return {attr("ftp.user", "FTP USER argument"),
                attr("ftp.command", "FTP command verbs issued"),
                attr("ftp.filename", "File named by RETR/STOR/APPE/DELE/SIZE")};
    }
};

}  // namespace

namespace parsers {
std::unique_ptr<ProtocolParser> make_ftp() { return std::make_unique<FtpParser>(); }
}  // namespace parsers

}  // namespace nfe
