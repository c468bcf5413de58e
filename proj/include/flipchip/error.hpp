#ifndef FLIPCHIP_ERROR_HPP
#define FLIPCHIP_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace flipchip
{
enum class ErrorKind
{
    validation,
    domain,
    numeric,
    unlevelable,
    all_masked,
    empty_selection,
    degenerate,
    unreachable_impedance,
    root_not_found,
    singular_fit,
    target_unreachable,
    no_shared_indices,
    no_resonance,
    non_convergent,
    missing_anchor,
    extrapolation,
    io,
    no_inputs,
};

inline std::string_view to_string(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::validation: return "validation";
    case ErrorKind::domain: return "domain";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::unlevelable: return "unlevelable";
    case ErrorKind::all_masked: return "all_masked";
    case ErrorKind::empty_selection: return "empty_selection";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::unreachable_impedance: return "unreachable_impedance";
    case ErrorKind::root_not_found: return "root_not_found";
    case ErrorKind::singular_fit: return "singular_fit";
    case ErrorKind::target_unreachable: return "target_unreachable";
    case ErrorKind::no_shared_indices: return "no_shared_indices";
    case ErrorKind::no_resonance: return "no_resonance";
    case ErrorKind::non_convergent: return "non_convergent";
    case ErrorKind::missing_anchor: return "missing_anchor";
    case ErrorKind::extrapolation: return "extrapolation";
    case ErrorKind::io: return "io";
    case ErrorKind::no_inputs: return "no_inputs";
    }
    return "unknown";
}

// Every failure raised by the library carries a machine-readable kind so that
// the CLI can map it onto the error manifest.
class Error : public std::runtime_error
{
public:
    Error(ErrorKind kind, const std::string &message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind)
    {
    }

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

namespace detail
{
inline void require(bool condition, ErrorKind kind, const std::string &message)
{
    if (!condition) {
        throw Error(kind, message);
    }
}
} // namespace detail

} // namespace flipchip

#endif
