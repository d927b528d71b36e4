#pragma once

#include <stdexcept>
#include <string>

namespace ircan {

// Root of every error thrown by the toolkit. `kind()` is a stable short tag
// used by the CLI and the Python bindings.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define IRCAN_DEFINE_ERROR(Name, tag)                                  \
    class Name : public Error {                                        \
    public:                                                            \
        explicit Name(const std::string& what) : Error(tag, what) {}   \
    };

IRCAN_DEFINE_ERROR(DimensionError, "dimension")
IRCAN_DEFINE_ERROR(NumericError, "numeric")
IRCAN_DEFINE_ERROR(UnknownLeafError, "unknown_leaf")
IRCAN_DEFINE_ERROR(FormatError, "format")
IRCAN_DEFINE_ERROR(TokenizationError, "tokenization")
IRCAN_DEFINE_ERROR(InputError, "input")
IRCAN_DEFINE_ERROR(SiteError, "site")
IRCAN_DEFINE_ERROR(TrainingError, "training")
IRCAN_DEFINE_ERROR(SelectionError, "selection")
IRCAN_DEFINE_ERROR(ParameterError, "parameter")
IRCAN_DEFINE_ERROR(StateError, "state")
IRCAN_DEFINE_ERROR(ParseError, "parse")
IRCAN_DEFINE_ERROR(SpecError, "spec")

#undef IRCAN_DEFINE_ERROR

}  // namespace ircan
