#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace moralgraph {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input rejected before any state changed.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

class NotFound : public Error {
public:
    using Error::Error;
};

/// Operation called in a state its precondition forbids (e.g. finalizing an unconfirmed card).
class PreconditionFailed : public Error {
public:
    using Error::Error;
};

/// Document failed schema validation. Every problem carries a JSON-pointer-style path.
class SchemaError : public Error {
public:
    explicit SchemaError(std::vector<std::string> problems)
        : Error(join(problems)), problems_(std::move(problems)) {}

    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    static std::string join(const std::vector<std::string>& problems) {
        std::string out = "schema violation";
        for (const auto& p : problems) {
            out += "\n  ";
            out += p;
        }
        return out;
    }

    std::vector<std::string> problems_;
};

}  // namespace moralgraph
