#pragma once

#include <stdexcept>
#include <string>

namespace pclc {

// Every recoverable failure in the library surfaces as an Error whose message
// starts with the component that raised it, e.g. "matmul: shapes 2x3 and 4x1".
class Error : public std::runtime_error {
 public:
  Error(const std::string& where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(where) {}

  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

}  // namespace pclc
