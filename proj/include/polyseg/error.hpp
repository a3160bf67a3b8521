#pragma once

#include <stdexcept>
#include <string>

namespace polyseg {

enum class ErrorKind {
    InvalidArgument,  // bad config / caller contract
    Shape,            // tensor shape mismatch
    Data,             // malformed dataset or file contents
    Io,               // filesystem failure
    Numeric,          // NaN / Inf escaped a computation
    State,            // API used out of order (e.g. double backward)
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

  private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace polyseg
