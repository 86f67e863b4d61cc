#pragma once

#include <stdexcept>
#include <string>

namespace featlift {

// Exit-code aligned error categories. The CLI maps InputError to 2 and
// ConsistencyError to 3; NumericError indicates a broken internal invariant.
enum class ErrorKind { Input, Consistency, Numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class InputError : public Error {
public:
    explicit InputError(const std::string& what) : Error(ErrorKind::Input, what) {}
};

class ConsistencyError : public Error {
public:
    explicit ConsistencyError(const std::string& what) : Error(ErrorKind::Consistency, what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

} // namespace featlift
