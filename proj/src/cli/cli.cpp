#include "storm/cli.hpp"

#include <cmath>
#include <deque>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "storm/compression.hpp"
#include "storm/errors.hpp"
#include "storm/report.hpp"
#include "storm/verify.hpp"

namespace storm::cli {

namespace {

struct Invocation {
  std::string subcommand;
  std::string config_path;
  std::vector<std::string> assignments;  // --set key=value
  // Dedicated flags, already mapped to setting keys; applied after --set.
  std::vector<std::pair<std::string, std::string>> flags;
};

std::string shortest(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void write_output(const Settings& s, const std::string& text, std::ostream& out) {
  const auto& path = s.get("output");
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open " + path + " for writing");
  file << text;
  if (!file) throw IoError("failed writing " + path);
}

int run_scan_check(const Settings& s, std::ostream& out) {
  const auto r = verify::scan_check(s.get_u64("seed"), s.get_count("scan_instances"));
  std::ostringstream text;
  text << "scan-check: " << r.instances << " instances, worst scaled error "
       << r.worst_scaled_error << " (length " << r.worst_length << "), causal "
       << (r.causal ? "yes" : "no") << ": " << (r.passed ? "PASS" : "FAIL") << '\n';
  write_output(s, text.str(), out);
  return r.passed ? kExitOk : kExitVerificationFailed;
}

int run_gradcheck(const Settings& s, std::ostream& out) {
  const auto r = verify::gradcheck(s.get_u64("seed"), s.get_count("grad_instances"));
  std::ostringstream text;
  text << "gradcheck: " << r.instances << " instances, " << r.entries
       << " entries, worst relative error " << r.worst_rel_error << " at " << r.worst.name
       << " (analytic " << r.worst.analytic << ", numeric " << r.worst.numeric
       << "): " << (r.passed ? "PASS" : "FAIL") << '\n';
  write_output(s, text.str(), out);
  return r.passed ? kExitOk : kExitVerificationFailed;
}

struct RatioRow {
  const char* label;
  CompressionSpec spec;
};

// The combinations of the token-compression ablation.
constexpr RatioRow kRatioRows[] = {
    {"none", {1, 1, 1}},
    {"t-sampling", {1, 1, 2}},
    {"t-pooling", {4, 1, 1}},
    {"s-pooling", {1, 4, 1}},
    {"t-pooling+t-sampling", {4, 1, 2}},
    {"s-pooling+t-sampling", {1, 4, 2}},
    {"t-pooling+s-pooling", {4, 4, 1}},
    {"t-pooling+s-pooling+t-sampling", {4, 4, 2}},
};

int run_ratio_table(const Settings& s, std::ostream& out) {
  std::ostringstream text;
  if (parse_report_format(s.get("format")) == ReportFormat::json) {
    auto array = nlohmann::ordered_json::array();
    for (const auto& row : kRatioRows) {
      array.push_back({{"label", row.label},
                       {"k", row.spec.temporal_pool_k},
                       {"p", row.spec.spatial_pool_p},
                       {"s", row.spec.temporal_sample_s},
                       {"ratio_percent", round_percent(compression_ratio(row.spec))}});
    }
    text << array.dump(2) << '\n';
  } else {
    text << "label,k,p,s,ratio_percent\n";
    for (const auto& row : kRatioRows) {
      text << row.label << ',' << row.spec.temporal_pool_k << ',' << row.spec.spatial_pool_p << ','
           << row.spec.temporal_sample_s << ',' << format_percent(compression_ratio(row.spec))
           << '\n';
    }
  }
  write_output(s, text.str(), out);
  return kExitOk;
}

int run_budget(const Settings& s, std::ostream& out) {
  const CompressionSpec spec{s.get_count("k"), s.get_count("p"), s.get_count("s")};
  const auto r = token_budget_check(s.get_count("frames"), s.get_count("tokens"), spec,
                                    s.get_count("budget"));
  std::ostringstream text;
  if (parse_report_format(s.get("format")) == ReportFormat::json) {
    nlohmann::ordered_json o{{"frames_in", r.frames_in},
                             {"tokens_per_frame_in", r.tokens_per_frame_in},
                             {"frames_out", r.frames_out},
                             {"tokens_out", r.tokens_out},
                             {"total_tokens", r.total_tokens},
                             {"ratio_percent", round_percent(r.ratio_percent)},
                             {"budget", r.budget},
                             {"within_budget", r.within_budget}};
    text << o.dump(2) << '\n';
  } else {
    text << "frames_in,tokens_per_frame_in,frames_out,tokens_out,total_tokens,ratio_percent,budget,"
            "within_budget\n"
         << r.frames_in << ',' << r.tokens_per_frame_in << ',' << r.frames_out << ','
         << r.tokens_out << ',' << r.total_tokens << ',' << format_percent(r.ratio_percent) << ','
         << r.budget << ',' << (r.within_budget ? "true" : "false") << '\n';
  }
  write_output(s, text.str(), out);
  return r.within_budget ? kExitOk : kExitVerificationFailed;
}

// Projects a video through stub -> downsample -> projector; returns the
// downsampled input and the projector output.
std::pair<TokenTensor, TokenTensor> project_video(const Video& video, const PipelineConfig& c,
                                                  const VisionStub& stub,
                                                  const ProjectorWeights& weights) {
  auto base = downsample_video(vision_stub_encode(video, stub), weights, c.projector);
  auto projected = projector_forward(base, weights, c.projector);
  return {std::move(base), std::move(projected)};
}

int run_propagate(const Settings& s, std::ostream& out) {
  const auto c = pipeline_config(s);
  c.validate_shapes();
  const auto seed = c.seed;
  const auto stub = VisionStub::random(c.patch_size, c.colors, c.projector.input_channels,
                                       Rng(seed).split(1).next_u64());
  const auto weights = ProjectorWeights::random(c.projector, Rng(seed).split(2).next_u64());

  SynthVideoSpec vspec = c.video_spec();
  if (!s.get("needle_frame").empty()) vspec.needle_frame = s.get_count("needle_frame");
  vspec.needle_amplitude = s.get_real("needle_amplitude");
  const auto video = synth_video(vspec, seed);
  const auto [base, projected] = project_video(video, c, stub, weights);
  const auto matrix = sensitivity_matrix(weights, c.projector, base, s.get_real("probe_scale"),
                                         Rng(seed).split(3).next_u64());

  std::vector<double> needle_response;
  if (vspec.needle_frame) {
    SynthVideoSpec plain = vspec;
    plain.needle_frame.reset();
    const auto reference = project_video(synth_video(plain, seed), c, stub, weights).second;
    for (std::size_t t = 0; t < projected.frames(); ++t) {
      const auto a = projected.frame(t);
      const auto b = reference.frame(t);
      double acc = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
      needle_response.push_back(std::sqrt(acc));
    }
  }

  bool causal = true;
  if (c.projector.direction_mode == DirectionMode::unidirectional) {
    for (std::size_t r = 0; r < matrix.size(); ++r) {
      for (std::size_t col = r + 1; col < matrix.size(); ++col) causal = causal && matrix[r][col] == 0.0;
    }
  }

  std::ostringstream text;
  if (parse_report_format(s.get("format")) == ReportFormat::json) {
    nlohmann::ordered_json o{{"frames", matrix.size()},
                             {"direction", s.get("direction")},
                             {"sensitivity", matrix}};
    if (vspec.needle_frame) {
      o["needle_frame"] = *vspec.needle_frame;
      o["needle_response"] = needle_response;
    }
    o["causal"] = causal;
    text << o.dump(2) << '\n';
  } else {
    text << "t_out";
    for (std::size_t t = 0; t < matrix.size(); ++t) text << ",t_in_" << t;
    text << '\n';
    for (std::size_t r = 0; r < matrix.size(); ++r) {
      text << r;
      for (double v : matrix[r]) text << ',' << shortest(v);
      text << '\n';
    }
    if (vspec.needle_frame) {
      text << "needle_response";
      for (double v : needle_response) text << ',' << shortest(v);
      text << '\n';
    }
  }
  write_output(s, text.str(), out);
  return causal ? kExitOk : kExitVerificationFailed;
}

int run_profile(const Settings& s, std::ostream& out, std::ostream& err) {
  const auto base = pipeline_config(s);
  const auto result =
      latency_profile(base, s.get_counts("profile_frames"), parse_spec_list(s.get("profile_specs")));
  for (const auto& f : result.failures) {
    err << "profile: T=" << f.frames << " k=" << f.compression.temporal_pool_k
        << " p=" << f.compression.spatial_pool_p << " s=" << f.compression.temporal_sample_s
        << " failed: " << f.message << '\n';
  }
  for (const auto& r : result.reports) {
    if (r.noisy) err << "profile: T=" << r.frames << " ratio " << r.ratio_percent << "% is noisy (cv "
                     << r.total_cv << ")\n";
  }
  if (!result.llm_fit.points.empty()) {
    err << "profile: llm log-log slope " << result.llm_fit.loglog_slope << " (r^2 "
        << result.llm_fit.r_squared << "), projector slope " << result.projector_fit.loglog_slope
        << " (r^2 " << result.projector_fit.r_squared << ")\n";
  }
  write_output(s, render_reports(result.reports, parse_report_format(s.get("format"))), out);
  return result.reports.empty() ? kExitUsage : kExitOk;
}

int run_demo(const Settings& s, std::ostream& out) {
  const auto config = pipeline_config(s);
  const auto r = run_pipeline(config);
  std::ostringstream text;
  const auto& n = r.counts;
  text << "tokens: raw " << n.raw_frames << "x" << n.raw_tokens << " -> projected "
       << n.projected_frames << "x" << n.projected_tokens << " -> compressed "
       << n.compressed_frames << "x" << n.compressed_tokens << " -> llm " << n.llm_tokens << '\n'
       << "compression ratio: " << format_percent(r.ratio_percent) << "%\n"
       << "budget: " << n.llm_tokens << " / " << config.budget
       << (r.within_budget ? " (within)" : " (exceeded)") << '\n'
       << "median ns: vision " << r.median.vision_ns << ", projector " << r.median.projector_ns
       << ", compression " << r.median.compression_ns << ", llm " << r.median.llm_ns
       << ", overall " << r.overall_ns << '\n'
       << "llm share: " << r.llm_share << (r.noisy ? " (noisy)" : "") << '\n'
       << "output checksum: " << shortest(r.output_checksum) << '\n';
  write_output(s, text.str(), out);
  return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"STORM temporal-projector toolkit: scans, token compression and latency profiling",
               "storm"};
  app.require_subcommand(1);
  app.fallthrough(false);
  app.failure_message(CLI::FailureMessage::help);

  Invocation inv;
  std::deque<std::pair<std::string, std::string>> flag_values;  // key, storage
  std::vector<std::pair<CLI::Option*, std::size_t>> flag_options;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", inv.config_path, "key=value config file ('#' comments)");
    sub->add_option("--set", inv.assignments, "Override a setting, key=value (repeatable)");
    for (const auto& [flag, key, help] : std::vector<std::tuple<std::string, std::string, std::string>>{
             {"--seed", "seed", "Random seed (default 42, or STORM_SEED)"},
             {"--output,-o", "output", "Write output to this path instead of stdout"},
             {"--format", "format", "Output format: csv or json"}}) {
      flag_values.emplace_back(key, "");
      flag_options.emplace_back(sub->add_option(flag, flag_values.back().second, help),
                                flag_values.size() - 1);
    }
  };
  auto add_flag = [&](CLI::App* sub, const std::string& flag, const std::string& key,
                      const std::string& help) {
    flag_values.emplace_back(key, "");
    flag_options.emplace_back(sub->add_option(flag, flag_values.back().second, help),
                              flag_values.size() - 1);
  };

  auto* scan = app.add_subcommand("scan-check", "Parallel vs sequential scan equivalence suite");
  add_common(scan);
  add_flag(scan, "--instances", "scan_instances", "Number of random instances (default 50)");

  auto* grad = app.add_subcommand("gradcheck", "Scan gradients vs central finite differences");
  add_common(grad);
  add_flag(grad, "--instances", "grad_instances", "Number of random instances (default 20)");

  auto* ratio = app.add_subcommand("ratio-table", "Compression ratios of the ablation combinations");
  add_common(ratio);

  auto* budget = app.add_subcommand("budget", "Token count after compression against a budget");
  add_common(budget);
  add_flag(budget, "--frames", "frames", "Input frames T");
  add_flag(budget, "--tokens", "tokens", "Tokens per frame N");
  add_flag(budget, "--budget", "budget", "Token budget");
  add_flag(budget, "-k,--temporal-pool", "k", "Temporal pooling factor");
  add_flag(budget, "-p,--spatial-pool", "p", "Spatial pooling areal factor (perfect square)");
  add_flag(budget, "-s,--temporal-sample", "s", "Temporal sampling stride");

  auto* propagate = app.add_subcommand("propagate", "Frame-to-frame sensitivity of the projector");
  add_common(propagate);
  add_flag(propagate, "--frames", "frames", "Frames T (default 8)");
  add_flag(propagate, "--direction", "direction", "bidirectional or unidirectional");
  add_flag(propagate, "--needle-frame", "needle_frame", "Frame carrying a structured needle");
  add_flag(propagate, "--needle-amplitude", "needle_amplitude", "Needle amplitude (default 1.0)");
  add_flag(propagate, "--probe-scale", "probe_scale", "Perturbation norm (default 1e-3)");

  auto* profile = app.add_subcommand("profile", "Per-stage latency over a frames x compression grid");
  add_common(profile);
  add_flag(profile, "--frames-list", "profile_frames", "Comma-separated frame counts");
  add_flag(profile, "--specs", "profile_specs", "Comma-separated k:p:s compression specs");
  add_flag(profile, "--repetitions", "repetitions", "Timed repetitions per point (>= 3)");
  add_flag(profile, "--warmup", "warmup", "Untimed warmup runs per point (>= 1)");

  auto* demo = app.add_subcommand("demo", "One end-to-end pipeline run with a summary");
  add_common(demo);
  add_flag(demo, "--frames", "frames", "Frames T");
  add_flag(demo, "-k,--temporal-pool", "k", "Temporal pooling factor");
  add_flag(demo, "-p,--spatial-pool", "p", "Spatial pooling areal factor");
  add_flag(demo, "-s,--temporal-sample", "s", "Temporal sampling stride");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const auto* chosen = app.get_subcommands().front();
  inv.subcommand = chosen->get_name();
  for (const auto& [opt, index] : flag_options) {
    if (opt->count() > 0) inv.flags.push_back(flag_values[index]);
  }

  try {
    auto settings = Settings::defaults(inv.subcommand);
    settings.load_environment();
    if (!inv.config_path.empty()) settings.load_file(inv.config_path);
    for (const auto& a : inv.assignments) settings.set_assignment(a, Settings::Source::command_line);
    for (const auto& [key, value] : inv.flags) settings.set(key, value, Settings::Source::command_line);
    parse_report_format(settings.get("format"));

    if (inv.subcommand == "scan-check") return run_scan_check(settings, out);
    if (inv.subcommand == "gradcheck") return run_gradcheck(settings, out);
    if (inv.subcommand == "ratio-table") return run_ratio_table(settings, out);
    if (inv.subcommand == "budget") return run_budget(settings, out);
    if (inv.subcommand == "propagate") return run_propagate(settings, out);
    if (inv.subcommand == "profile") return run_profile(settings, out, err);
    if (inv.subcommand == "demo") return run_demo(settings, out);
  } catch (const std::exception& e) {
    err << "storm " << inv.subcommand << ": error: " << e.what() << '\n';
    return kExitUsage;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace storm::cli
