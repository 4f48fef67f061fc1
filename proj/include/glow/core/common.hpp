#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace glow {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad user input: malformed config files, CLI misuse. Maps to exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

// Shape or value preconditions violated at an operation boundary.
struct ShapeError : Error {
    using Error::Error;
};

// Non-finite loss during training. Maps to exit code 3.
struct DivergenceError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

namespace detail {
template <class E, class... Ts>
[[noreturn]] void raise(Ts&&... parts) {
    std::ostringstream os;
    (os << ... << parts);
    throw E(os.str());
}
}  // namespace detail

#define GLOW_CHECK(cond, ...) \
    do {                      \
        if (!(cond)) ::glow::detail::raise<::glow::ShapeError>(__VA_ARGS__); \
    } while (0)

#define GLOW_CHECK_CFG(cond, ...) \
    do {                          \
        if (!(cond)) ::glow::detail::raise<::glow::ConfigError>(__VA_ARGS__); \
    } while (0)

#define GLOW_CHECK_IO(cond, ...) \
    do {                         \
        if (!(cond)) ::glow::detail::raise<::glow::IoError>(__VA_ARGS__); \
    } while (0)

}  // namespace glow
