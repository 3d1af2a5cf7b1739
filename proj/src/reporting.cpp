#include "pbn/reporting.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pbn/errors.hpp"

namespace pbn {

using json = nlohmann::ordered_json;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string log_csv(const TrainLog& log) {
  std::ostringstream out;
  out << "epoch,train_loss,test_loss,peak_stored_states,operator_applications,grad_norm\n";
  for (const auto& r : log.rows) {
    out << r.epoch << ',' << format_double(r.train_loss) << ','
        << format_double(r.test_loss) << ',' << r.peak_stored_states << ','
        << r.operator_applications << ',' << format_double(r.grad_norm) << '\n';
  }
  return out.str();
}

std::string summary_json(const TrainLog& log, const std::string& timestamp) {
  json j;
  j["final_train_loss"] = log.final_train_loss;
  j["final_test_loss"] = log.final_test_loss;
  j["epochs_run"] = log.rows.empty() ? 0 : log.rows.back().epoch;
  json cert;
  cert["all_certified"] = log.certificate.all_certified;
  json layers = json::array();
  for (const auto& l : log.certificate.layers) {
    layers.push_back({{"index", l.index},
                      {"kind", l.kind},
                      {"bound", l.bound},
                      {"certified", l.certified},
                      {"margin", l.margin}});
  }
  cert["layers"] = layers;
  j["certificate"] = cert;
  json params = json::array();
  for (const auto& b : log.layout.blocks) {
    json block;
    block["label"] = b.label;
    block["count"] = b.count;
    json values = json::array();
    for (std::size_t i = 0; i < b.count; ++i) values.push_back(log.final_params[b.offset + i]);
    block["values"] = values;
    params.push_back(block);
  }
  j["parameters"] = params;
  j["config"] = json::parse(config_to_json(log.cfg));
  j["generated_at"] = timestamp;
  return j.dump(2);
}

std::string shadow_trace_csv(const EngineDiagnostics& diag) {
  std::ostringstream out;
  out << "state_index,shadow_residual\n";
  for (const auto& [idx, res] : diag.shadow_residuals) {
    out << idx << ',' << format_double(res) << '\n';
  }
  out << "checkpoint_index,pre_replacement_residual\n";
  for (const auto& [idx, res] : diag.checkpoint_residuals) {
    out << idx << ',' << format_double(res) << '\n';
  }
  return out.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::Io, "cannot open " + path + " for writing");
  out << content;
  if (!out) raise(ErrorKind::Io, "failed writing " + path);
}

}  // namespace pbn
