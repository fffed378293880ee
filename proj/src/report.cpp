#include "storm/report.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "storm/errors.hpp"

namespace storm {

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

template <typename T>
T parse_number(std::string_view field) {
  T value{};
  const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
    throw IoError("malformed report field '" + std::string(field) + "'");
  }
  return value;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

ReportFormat parse_report_format(std::string_view name) {
  if (name == "csv") return ReportFormat::csv;
  if (name == "json") return ReportFormat::json;
  throw ConfigError("unknown format '" + std::string(name) + "' (expected csv or json)");
}

ReportRow to_row(const PipelineReport& r) {
  return {r.frames,
          round_percent(r.ratio_percent),
          r.overall_ns,
          r.median.llm_ns,
          r.median.projector_ns,
          r.median.vision_ns,
          r.median.compression_ns,
          r.tokens_in,
          r.tokens_out,
          r.llm_share};
}

std::string render_rows(std::span<const ReportRow> rows, ReportFormat format) {
  if (format == ReportFormat::json) {
    auto array = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
      array.push_back({{"frames", r.frames},
                       {"ratio_percent", r.ratio_percent},
                       {"overall_ns", r.overall_ns},
                       {"llm_ns", r.llm_ns},
                       {"projector_ns", r.projector_ns},
                       {"vision_ns", r.vision_ns},
                       {"compression_ns", r.compression_ns},
                       {"tokens_in", r.tokens_in},
                       {"tokens_out", r.tokens_out},
                       {"llm_share", r.llm_share}});
    }
    return array.dump(2) + "\n";
  }
  std::ostringstream out;
  out << kReportCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.frames << ',' << format_percent(r.ratio_percent) << ',' << r.overall_ns << ','
        << r.llm_ns << ',' << r.projector_ns << ',' << r.vision_ns << ',' << r.compression_ns << ','
        << r.tokens_in << ',' << r.tokens_out << ',' << shortest(r.llm_share) << '\n';
  }
  return out.str();
}

std::string render_reports(std::span<const PipelineReport> reports, ReportFormat format) {
  std::vector<ReportRow> rows;
  rows.reserve(reports.size());
  for (const auto& r : reports) rows.push_back(to_row(r));
  return render_rows(rows, format);
}

std::vector<ReportRow> parse_rows(std::string_view text, ReportFormat format) {
  std::vector<ReportRow> rows;
  if (format == ReportFormat::json) {
    nlohmann::json array;
    try {
      array = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("malformed JSON report: ") + e.what());
    }
    if (!array.is_array()) throw IoError("JSON report must be an array");
    for (const auto& o : array) {
      rows.push_back({o.at("frames").get<std::uint64_t>(), o.at("ratio_percent").get<double>(),
                      o.at("overall_ns").get<std::int64_t>(), o.at("llm_ns").get<std::int64_t>(),
                      o.at("projector_ns").get<std::int64_t>(), o.at("vision_ns").get<std::int64_t>(),
                      o.at("compression_ns").get<std::int64_t>(),
                      o.at("tokens_in").get<std::uint64_t>(), o.at("tokens_out").get<std::uint64_t>(),
                      o.at("llm_share").get<double>()});
    }
    return rows;
  }
  auto lines = split(text, '\n');
  if (lines.empty() || lines.front() != kReportCsvHeader) throw IoError("CSV report header mismatch");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = split(lines[i], ',');
    if (f.size() != 10) throw IoError("CSV report row must have 10 fields");
    rows.push_back({parse_number<std::uint64_t>(f[0]), parse_number<double>(f[1]),
                    parse_number<std::int64_t>(f[2]), parse_number<std::int64_t>(f[3]),
                    parse_number<std::int64_t>(f[4]), parse_number<std::int64_t>(f[5]),
                    parse_number<std::int64_t>(f[6]), parse_number<std::uint64_t>(f[7]),
                    parse_number<std::uint64_t>(f[8]), parse_number<double>(f[9])});
  }
  return rows;
}

void emit_report(std::span<const PipelineReport> reports, ReportFormat format,
                 const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << render_reports(reports, format);
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace storm
