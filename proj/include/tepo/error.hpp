#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace tepo {

// Base of every error the library raises. The category maps onto the CLI
// exit codes.
class Error : public std::runtime_error {
 public:
  enum class Category { domain, config, verification, io };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what)
      : Error(Category::domain, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(Category::config, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(Category::io, what) {}
};

class VerificationError : public Error {
 public:
  explicit VerificationError(const std::string& what)
      : Error(Category::verification, what) {}
};

// Renders a double with 17 significant digits, the precision every file
// format in this project uses.
inline std::string format_real(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

}  // namespace tepo
