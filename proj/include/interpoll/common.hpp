#pragma once

#include <cstdio>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>

namespace interpoll {

// Base error for contract violations surfaced by the library.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed experiment or generator configuration. The CLI maps this to exit code 1,
// everything else to exit code 2.
struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(what) {}
};

template <class... Parts>
std::string msg(Parts&&... parts) {
    std::ostringstream os;
    (os << ... << parts);
    return os.str();
}

template <class... Parts>
[[noreturn]] void fail(Parts&&... parts) {
    throw Error(msg(std::forward<Parts>(parts)...));
}

template <class... Parts>
[[noreturn]] void fail_config(Parts&&... parts) {
    throw ConfigError(msg(std::forward<Parts>(parts)...));
}

inline std::string shape_str(std::span<const std::size_t> shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    s += "]";
    return s;
}

// Shortest round-trippable decimal form; used by every text serializer so that
// identical doubles always produce identical bytes.
inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace interpoll
