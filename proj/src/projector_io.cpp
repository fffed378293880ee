#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "storm/errors.hpp"
#include "storm/projector.hpp"

namespace storm {

namespace {

constexpr std::array<char, 4> kMagic{'S', 'T', 'R', 'M'};

template <typename Unsigned>
void put_le(std::vector<unsigned char>& out, Unsigned v) {
  for (std::size_t i = 0; i < sizeof(Unsigned); ++i) {
    out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFU));
  }
}

class Reader {
 public:
  explicit Reader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}

  template <typename Unsigned>
  Unsigned get() {
    if (pos_ + sizeof(Unsigned) > bytes_.size()) throw IoError("weights file truncated");
    Unsigned v = 0;
    for (std::size_t i = 0; i < sizeof(Unsigned); ++i) {
      v |= static_cast<Unsigned>(bytes_[pos_ + i]) << (8 * i);
    }
    pos_ += sizeof(Unsigned);
    return v;
  }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
};

// Single definition of the on-disk value order, shared by save and load.
template <typename Weights, typename Fn>
void visit_values(Weights& w, Fn&& fn) {
  auto visit_map = [&](auto& map) {
    for (auto& v : map.weight) fn(v);
    for (auto& v : map.bias) fn(v);
  };
  visit_map(w.downsample);
  for (auto& layer : w.layers) {
    for (auto& v : layer.norm.gamma) fn(v);
    for (auto& v : layer.norm.beta) fn(v);
    fn(layer.norm.eps);
    for_each_parameter(layer.forward, fn);
    if (layer.backward) for_each_parameter(*layer.backward, fn);
    visit_map(layer.gate);
    visit_map(layer.output);
  }
}

ProjectorWeights shaped_weights(const ProjectorConfig& config) {
  ProjectorWeights w;
  w.downsample = AffineMap::zeros(config.downsample_ratio * config.input_channels, config.channels);
  for (std::size_t l = 0; l < config.layers; ++l) {
    MixerLayerWeights layer;
    layer.norm = NormParams::unit(config.channels);
    layer.forward = SelectiveScanWeights::zeros(config.channels, config.state_dim);
    if (config.direction_mode == DirectionMode::bidirectional) {
      layer.backward = SelectiveScanWeights::zeros(config.channels, config.state_dim);
    }
    layer.gate = AffineMap::zeros(config.channels, config.channels);
    layer.output = AffineMap::zeros(config.channels, config.channels);
    w.layers.push_back(std::move(layer));
  }
  return w;
}

}  // namespace

void save_weights(const std::filesystem::path& path, const ProjectorConfig& config,
                  const ProjectorWeights& weights) {
  weights.validate(config);
  std::vector<unsigned char> bytes(kMagic.begin(), kMagic.end());
  put_le<std::uint32_t>(bytes, kWeightsFormatVersion);
  for (std::size_t field : {config.raw_tokens_per_frame, config.downsample_ratio,
                            config.input_channels, config.channels, config.layers,
                            config.state_dim, config.grid_rows, config.grid_cols}) {
    put_le<std::uint64_t>(bytes, field);
  }
  put_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(config.direction_mode));
  visit_values(weights, [&](double v) { put_le<std::uint64_t>(bytes, std::bit_cast<std::uint64_t>(v)); });

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::pair<ProjectorConfig, ProjectorWeights> load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < kMagic.size() || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw IoError(path.string() + " is not a STRM weights file");
  }
  Reader reader(std::vector<unsigned char>(bytes.begin() + kMagic.size(), bytes.end()));
  if (const auto version = reader.get<std::uint32_t>(); version != kWeightsFormatVersion) {
    throw IoError("unsupported weights format version " + std::to_string(version));
  }
  ProjectorConfig config;
  for (std::size_t* field : {&config.raw_tokens_per_frame, &config.downsample_ratio,
                             &config.input_channels, &config.channels, &config.layers,
                             &config.state_dim, &config.grid_rows, &config.grid_cols}) {
    *field = static_cast<std::size_t>(reader.get<std::uint64_t>());
  }
  const auto mode = reader.get<std::uint32_t>();
  if (mode > 1) throw IoError("invalid direction mode " + std::to_string(mode));
  config.direction_mode = static_cast<DirectionMode>(mode);
  config.validate();

  auto weights = shaped_weights(config);
  visit_values(weights, [&](double& v) { v = reader.get_f64(); });
  if (!reader.exhausted()) throw IoError("trailing bytes after weights");
  weights.validate(config);
  return {config, std::move(weights)};
}

}  // namespace storm
