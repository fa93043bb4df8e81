#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "whc/traineval.hpp"

namespace whc {

/// One model's row in the comparison table: counting errors on patches and on
/// whole images plus model size.
struct ReportRow {
  std::string model;
  std::optional<Metrics> patches;
  std::optional<Metrics> whole;
  std::size_t param_count = 0;
  std::size_t checkpoint_bytes = 0;
};

/// Plain-text table with columns Model | MAE RMSE (Patches) | MAE RMSE (Whole image) | Size.
std::string render_report_table(const std::vector<ReportRow>& rows);

nlohmann::json metrics_to_json(const Metrics& m);
nlohmann::json report_to_json(const std::vector<ReportRow>& rows);

/// One JSON object per line: {"set", "id", "estimated", "ground_truth", "abs_error"}.
std::string per_image_ndjson(const ReportRow& row);

}  // namespace whc
