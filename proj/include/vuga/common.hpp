#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace vuga {

// Error taxonomy. Everything derives from std::runtime_error so callers can
// catch broadly; the CLI maps parse/validation/config errors to exit code 2
// and the rest to 1.
struct parse_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct validation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct shape_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void msg_append(std::ostringstream&) {}
template <typename T, typename... Rest>
void msg_append(std::ostringstream& os, T&& v, Rest&&... rest) {
  os << std::forward<T>(v);
  msg_append(os, std::forward<Rest>(rest)...);
}
template <typename... Args>
std::string msg(Args&&... args) {
  std::ostringstream os;
  msg_append(os, std::forward<Args>(args)...);
  return os.str();
}
}  // namespace detail

#define VUGA_CHECK(cond, Error, ...)                        \
  do {                                                      \
    if (!(cond)) throw Error(vuga::detail::msg(__VA_ARGS__)); \
  } while (0)

// FNV-1a, used for run-directory content addressing and parameter checksums.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

}  // namespace vuga
