#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nfe {

/// Base for every error the engine reports. `kind()` is the stable name used
/// on the wire and in CLI output.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define NFE_DEFINE_ERROR(Name)                                             \
    class Name : public Error {                                            \
    public:                                                                \
        explicit Name(const std::string& what) : Error(#Name, what) {}     \
    }

NFE_DEFINE_ERROR(UnsupportedFormat);
NFE_DEFINE_ERROR(NotAFlowPacket);
NFE_DEFINE_ERROR(DuplicatePriority);
NFE_DEFINE_ERROR(StorageFull);
NFE_DEFINE_ERROR(SegmentSealed);
NFE_DEFINE_ERROR(NotStored);
NFE_DEFINE_ERROR(IntegrityFailure);
NFE_DEFINE_ERROR(UnknownSession);
NFE_DEFINE_ERROR(InvalidGranularity);
NFE_DEFINE_ERROR(EmptySample);
NFE_DEFINE_ERROR(SandboxFailure);
NFE_DEFINE_ERROR(BudgetExceeded);
NFE_DEFINE_ERROR(ConfigInvalid);
NFE_DEFINE_ERROR(BindFailure);
NFE_DEFINE_ERROR(IoError);

#undef NFE_DEFINE_ERROR

/// A record header claims more bytes than the file holds. Packets before
/// the bad record have already been delivered when this is thrown.
class CorruptRecord : public Error {
public:
    CorruptRecord(const std::string& what, std::uint64_t packets_before)
        : Error("CorruptRecord", what), packets_before_(packets_before) {}
    std::uint64_t packets_before() const noexcept { return packets_before_; }

private:
    std::uint64_t packets_before_;
};

class SyntaxError : public Error {
public:
    SyntaxError(std::size_t line, std::size_t column, const std::string& msg)
        : Error("SyntaxError", "line " + std::to_string(line) + ", column " +
                                   std::to_string(column) + ": " + msg),
          line_(line), column_(column) {}
    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t line_;
    std::size_t column_;
};

class UnknownField : public Error {
public:
    explicit UnknownField(std::string field, const std::string& context = {})
        : Error("UnknownField", "unknown field '" + field + "'" +
                                    (context.empty() ? "" : " (" + context + ")")),
          field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class MalformedRequest : public Error {
public:
    MalformedRequest(const std::string& msg, std::size_t position)
        : Error("MalformedRequest", msg), position_(position) {}
    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

}  // namespace nfe
