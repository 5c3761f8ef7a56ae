#pragma once

// Helpers shared by the built-in protocol parsers. Not installed.

#include "nfe/protocols.hpp"

#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace nfe::parsers {

std::unique_ptr<ProtocolParser> make_http();
std::unique_ptr<ProtocolParser> make_smtp();
std::unique_ptr<ProtocolParser> make_dns();
std::unique_ptr<ProtocolParser> make_ftp();
std::unique_ptr<ProtocolParser> make_sip();
std::unique_ptr<ProtocolParser> make_ssl();

std::vector<std::unique_ptr<ProtocolParser>> make_all();

inline FieldSpec attr(std::string name, std::string desc, FieldKind kind = FieldKind::string) {
    return FieldSpec{std::move(name), kind, std::move(desc), true, false, false};
}

/// Splits on LF, dropping a trailing CR from each line.
std::vector<std::string_view> split_lines(std::string_view text);

/// Reads one CRLF- or LF-terminated line starting at `pos`; advances `pos`
/// past the terminator. nullopt if no terminator remains.
std::optional<std::string_view> read_line(std::string_view text, std::size_t& pos);

/// First whitespace-separated token and the trimmed remainder.
std::pair<std::string_view, std::string_view> split_verb(std::string_view line);

/// Offset of the blank line ending a header block (index of the first body
/// byte), or npos.
std::size_t header_end(std::string_view text, std::size_t from);

ExtractedFile make_file(std::string name_hint, Bytes data, AppProtocol proto);

}  // namespace nfe::parsers
