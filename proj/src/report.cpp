#include "whc/report.hpp"

#include <cmath>
#include <cstdio>

namespace whc {

namespace {

std::string fixed(double v, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string size_label(const ReportRow& r) {
  return fixed(double(r.param_count) / 1e6, 2) + " M params / " + fixed(double(r.checkpoint_bytes) / 1e6, 2) +
         " MB";
}

}  // namespace

std::string render_report_table(const std::vector<ReportRow>& rows) {
  constexpr std::size_t kModel = 10, kNum = 9;
  std::string out;
  const std::string rule(kModel + 4 * (kNum + 1) + 32, '-');
  out += rule + "\n";
  out += pad("Model", kModel) + " " + pad("MAE", kNum) + " " + pad("RMSE", kNum) + " " + pad("MAE", kNum) + " " +
         pad("RMSE", kNum) + " Size\n";
  out += pad("", kModel) + " " + pad("Patches", 2 * kNum + 1) + " " + pad("Whole image", 2 * kNum + 1) + "\n";
  out += rule + "\n";
  for (const auto& r : rows) {
    auto cell = [&](const std::optional<Metrics>& m, bool rmse) {
      return pad(m ? fixed(rmse ? m->rmse : m->mae, 3) : "-", kNum);
    };
    out += pad(r.model, kModel) + " " + cell(r.patches, false) + " " + cell(r.patches, true) + " " +
           cell(r.whole, false) + " " + cell(r.whole, true) + " " + size_label(r) + "\n";
  }
  out += rule + "\n";
  return out;
}

nlohmann::json metrics_to_json(const Metrics& m) {
  nlohmann::json j;
  j["mae"] = m.mae;
  j["rmse"] = m.rmse;
  j["n"] = m.per_image.size();
  auto rows = nlohmann::json::array();
  for (const auto& r : m.per_image)
    rows.push_back({{"id", r.id}, {"estimated", r.estimated}, {"ground_truth", r.ground_truth}});
  j["per_image"] = std::move(rows);
  return j;
}

nlohmann::json report_to_json(const std::vector<ReportRow>& rows) {
  auto arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j;
    j["model"] = r.model;
    j["patches"] = r.patches ? metrics_to_json(*r.patches) : nlohmann::json(nullptr);
    j["whole_image"] = r.whole ? metrics_to_json(*r.whole) : nlohmann::json(nullptr);
    j["param_count"] = r.param_count;
    j["checkpoint_bytes"] = r.checkpoint_bytes;
    arr.push_back(std::move(j));
  }
  return nlohmann::json{{"models", std::move(arr)}};
}

std::string per_image_ndjson(const ReportRow& row) {
  std::string out;
  auto emit = [&](const char* set, const std::optional<Metrics>& m) {
    if (!m) return;
    for (const auto& r : m->per_image) {
      nlohmann::json j{{"model", row.model},
                       {"set", set},
                       {"id", r.id},
                       {"estimated", r.estimated},
                       {"ground_truth", r.ground_truth},
                       {"abs_error", std::abs(r.estimated - r.ground_truth)}};
      out += j.dump() + "\n";
    }
  };
  emit("patches", row.patches);
  emit("whole_image", row.whole);
  return out;
}

}  // namespace whc
