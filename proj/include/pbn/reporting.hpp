#pragma once

#include <string>

#include "pbn/training.hpp"

namespace pbn {

/// Shortest round-trip decimal formatting, stable for a fixed build.
std::string format_double(double v);

std::string log_csv(const TrainLog& log);

/// JSON summary with stable key order. The timestamp is the only
/// run-dependent field and is isolated under "generated_at".
std::string summary_json(const TrainLog& log, const std::string& timestamp);

std::string shadow_trace_csv(const EngineDiagnostics& diag);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace pbn
