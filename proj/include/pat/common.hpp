#pragma once

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace pat {

// Base class for all recoverable errors thrown by the toolkit.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error(what) {}
};

class ValueError : public Error {
public:
    explicit ValueError(const std::string& what) : Error(what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(what) {}
};

namespace detail {
inline void msg_append(std::ostringstream&) {}
template <typename T, typename... Rest>
void msg_append(std::ostringstream& os, const T& t, const Rest&... rest) {
    os << t;
    msg_append(os, rest...);
}
} // namespace detail

// msg("conv2d: expected ", a, " channels, got ", b)
template <typename... Args>
std::string msg(const Args&... args) {
    std::ostringstream os;
    detail::msg_append(os, args...);
    return os.str();
}

// Shape of a dense 4-D tensor in (batch, channels, height, width) order.
struct Shape {
    int b = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t numel() const {
        return std::size_t(b) * std::size_t(c) * std::size_t(h) * std::size_t(w);
    }
    bool operator==(const Shape&) const = default;

    std::string str() const {
        return msg("(", b, ",", c, ",", h, ",", w, ")");
    }
};

inline bool is_scalar(const Shape& s) { return s.b == 1 && s.c == 1 && s.h == 1 && s.w == 1; }

} // namespace pat
