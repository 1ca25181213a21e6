#pragma once

#include <functional>
#include <iostream>
#include <string>

namespace driftdiag {

// Warning sink. Operations that log non-fatal conditions (clamped bank
// cells, skipped updates) accept one of these; the default writes to stderr.
using WarnSink = std::function<void(const std::string&)>;

inline WarnSink stderr_warn_sink() {
    return [](const std::string& msg) { std::cerr << "[warn] " << msg << "\n"; };
}

}  // namespace driftdiag
