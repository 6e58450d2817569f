#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace kqkit {

// Single exception type for the library; messages are stable and tested.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-fatal flags attached to computed results ("subsampled", "zero vector present", ...).
using Diagnostics = std::vector<std::string>;

inline void add_diagnostic(Diagnostics* sink, const std::string& flag) {
    if (sink == nullptr) return;
    for (const auto& existing : *sink) {
        if (existing == flag) return;
    }
    sink->push_back(flag);
}

}  // namespace kqkit
