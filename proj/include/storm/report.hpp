#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "storm/pipeline.hpp"

namespace storm {

enum class ReportFormat { csv, json };

ReportFormat parse_report_format(std::string_view name);

/// Column order of the CSV report; JSON objects use the same keys.
inline constexpr std::string_view kReportCsvHeader =
    "frames,ratio_percent,overall_ns,llm_ns,projector_ns,vision_ns,compression_ns,tokens_in,"
    "tokens_out,llm_share";

/// The serialized subset of a PipelineReport.
struct ReportRow {
  std::uint64_t frames = 0;
  double ratio_percent = 0.0;  // rounded to two decimals
  std::int64_t overall_ns = 0;
  std::int64_t llm_ns = 0;
  std::int64_t projector_ns = 0;
  std::int64_t vision_ns = 0;
  std::int64_t compression_ns = 0;
  std::uint64_t tokens_in = 0;
  std::uint64_t tokens_out = 0;
  double llm_share = 0.0;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

ReportRow to_row(const PipelineReport& report);

std::string render_reports(std::span<const PipelineReport> reports, ReportFormat format);
std::string render_rows(std::span<const ReportRow> rows, ReportFormat format);
std::vector<ReportRow> parse_rows(std::string_view text, ReportFormat format);

/// Writes the rendered reports to `path` (UTF-8, trailing newline). Throws IoError.
void emit_report(std::span<const PipelineReport> reports, ReportFormat format,
                 const std::filesystem::path& path);

}  // namespace storm
