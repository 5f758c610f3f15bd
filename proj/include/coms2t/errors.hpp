#pragma once

#include <stdexcept>
#include <string>

namespace coms2t {

// Error taxonomy shared across the library. The CLI maps ConfigError to
// exit code 2 and NumericsError/DivergenceError to exit code 3.

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LoadError : Error { using Error::Error; };
struct SchemaError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct NumericsError : Error { using Error::Error; };
struct EmptyWindowError : Error { using Error::Error; };
struct LedgerError : Error { using Error::Error; };
struct BlockError : Error { using Error::Error; };
struct DivergenceError : Error { using Error::Error; };
struct AdaptError : Error { using Error::Error; };
struct SingularityError : Error { using Error::Error; };
struct ReportError : Error { using Error::Error; };

}  // namespace coms2t
