#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "storm/errors.hpp"
#include "storm/pipeline.hpp"
#include "storm/projector.hpp"
#include "storm/tolerances.hpp"

namespace storm {
namespace {

ProjectorConfig small_config(DirectionMode mode = DirectionMode::bidirectional) {
  ProjectorConfig c;
  c.raw_tokens_per_frame = 16;
  c.downsample_ratio = 4;
  c.input_channels = 6;
  c.channels = 8;
  c.layers = 2;
  c.state_dim = 4;
  c.grid_rows = 2;
  c.grid_cols = 2;
  c.direction_mode = mode;
  return c;
}

TokenTensor random_input(const ProjectorConfig& c, std::size_t frames, std::uint64_t seed) {
  Rng rng(seed);
  return random_tensor(rng, frames, c.tokens_per_frame(), c.channels, 1.0);
}

TEST(DownsampleFrame, TokenCount) {
  auto c = small_config();
  const auto w = ProjectorWeights::random(c, 1);
  Rng rng(2);
  const auto frame = rng_fill(rng, 16 * c.input_channels, 1.0);
  EXPECT_EQ(downsample_frame(frame, w, c).size(), 4 * c.channels);
}

TEST(DownsampleFrame, PerFrameBudgetFromFullEncoderGrid) {
  ProjectorConfig c;
  c.raw_tokens_per_frame = 1024;
  c.downsample_ratio = 4;
  c.input_channels = 2;
  c.channels = 2;
  c.layers = 0;
  c.grid_rows = 16;
  c.grid_cols = 16;
  const auto w = ProjectorWeights::random(c, 3);
  Rng rng(4);
  const auto frame = rng_fill(rng, 1024 * 2, 1.0);
  EXPECT_EQ(downsample_frame(frame, w, c).size() / c.channels, 256u);
}

TEST(DownsampleFrame, IdentityWhenRatioIsOne) {
  ProjectorConfig c = small_config();
  c.downsample_ratio = 1;
  c.raw_tokens_per_frame = 4;
  c.input_channels = c.channels;
  auto w = ProjectorWeights::random(c, 5);
  w.downsample = AffineMap::identity(c.channels);
  Rng rng(6);
  const auto frame = rng_fill(rng, 4 * c.channels, 1.0);
  EXPECT_EQ(downsample_frame(frame, w, c), frame);
}

TEST(DownsampleFrame, GroupsConsecutiveTokens) {
  ProjectorConfig c = small_config();
  c.input_channels = 1;
  c.channels = 1;
  auto w = ProjectorWeights::random(c, 7);
  w.downsample = AffineMap{4, 1, {1, 10, 100, 1000}, {0}};
  std::vector<double> frame(16);
  std::iota(frame.begin(), frame.end(), 0.0);
  const auto out = downsample_frame(frame, w, c);
  for (std::size_t i = 0; i < 4; ++i) {
    const double b = 4.0 * i;
    EXPECT_EQ(out[i], b + 10 * (b + 1) + 100 * (b + 2) + 1000 * (b + 3));
  }
}

TEST(DownsampleFrame, RatioMustDivide) {
  auto c = small_config();
  c.downsample_ratio = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(FlattenSweep, EnumerationOrder) {
  TokenTensor x(2, 4, 1);
  for (std::size_t t = 0; t < 2; ++t) {
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t col = 0; col < 2; ++col) x(t, r * 2 + col, 0) = 100.0 * t + 10.0 * r + col;
    }
  }
  const auto seq = flatten_sweep(x, 2, 2);
  EXPECT_EQ(seq.values, (std::vector<double>{0, 1, 10, 11, 100, 101, 110, 111}));
  EXPECT_EQ(sweep_index(1, 1, 0, 2, 2), 6u);
}

TEST(FlattenSweep, InverseIsBitwise) {
  const auto c = small_config();
  const auto x = random_input(c, 5, 8);
  auto seq = flatten_sweep(x, 2, 2);
  EXPECT_EQ(unflatten_sweep(std::move(seq), 5, 2, 2), x);
}

TEST(FlattenSweep, FramePermutationPermutesBlocks) {
  const auto c = small_config();
  const auto x = random_input(c, 4, 9);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  TokenTensor permuted(4, 4, c.channels);
  for (std::size_t t = 0; t < 4; ++t) {
    std::copy(x.frame(perm[t]).begin(), x.frame(perm[t]).end(), permuted.frame(t).begin());
  }
  const auto a = flatten_sweep(x, 2, 2);
  const auto b = flatten_sweep(permuted, 2, 2);
  const std::size_t block = 4 * c.channels;
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_TRUE(std::equal(b.values.begin() + t * block, b.values.begin() + (t + 1) * block,
                           a.values.begin() + perm[t] * block));
  }
}

TEST(FlattenSweep, GridMismatch) {
  const auto x = random_input(small_config(), 2, 10);
  EXPECT_THROW(flatten_sweep(x, 3, 2), ShapeError);
}

TEST(MambaMixer, ZeroBranchGivesZeros) {
  const auto c = small_config();
  const auto w = ProjectorWeights::zero_mixers(c, 11);
  const auto seq = flatten_sweep(random_input(c, 3, 12), 2, 2);
  const auto out = mamba_mixer(seq, w.layers[0], c.direction_mode);
  for (double v : out.values) EXPECT_EQ(v, 0.0);
}

TEST(MambaMixer, UnidirectionalIsCausal) {
  const auto c = small_config(DirectionMode::unidirectional);
  const auto w = ProjectorWeights::random(c, 13, 0.5);
  const auto seq = flatten_sweep(random_input(c, 4, 14), 2, 2);
  const auto base = mamba_mixer(seq, w.layers[0], c.direction_mode);
  Rng rng(15);
  for (std::size_t i : {0, 5, 14}) {
    Sequence changed = seq;
    const auto bump = rng_fill(rng, seq.values.size(), 1.0);
    for (std::size_t k = (i + 1) * seq.width; k < seq.values.size(); ++k) changed.values[k] += bump[k];
    const auto out = mamba_mixer(changed, w.layers[0], c.direction_mode);
    for (std::size_t k = 0; k < (i + 1) * seq.width; ++k) ASSERT_EQ(out.values[k], base.values[k]);
    EXPECT_NE(out.values.back(), base.values.back());
  }
}

TEST(MambaMixer, BidirectionalSeesTheFuture) {
  const auto c = small_config();
  const auto w = ProjectorWeights::random(c, 15);
  Rng rng(16);
  Sequence seq(8, c.channels, rng_fill(rng, 8 * c.channels, 1.0));
  const auto base = mamba_mixer(seq, w.layers[0], c.direction_mode);
  // A constant shift would vanish under the per-token norm, so perturb randomly.
  const auto bump = rng_fill(rng, c.channels, 0.5);
  for (std::size_t k = 0; k < c.channels; ++k) seq.values[7 * c.channels + k] += bump[k];
  const auto out = mamba_mixer(seq, w.layers[0], c.direction_mode);
  double change = 0.0;
  for (std::size_t k = 0; k < c.channels; ++k) change += std::abs(out.values[k] - base.values[k]);
  EXPECT_GT(change, 0.0);
}

TEST(ProjectorForward, EmptyStackIsIdentity) {
  auto c = small_config();
  c.layers = 0;
  const auto w = ProjectorWeights::random(c, 17);
  const auto x = random_input(c, 3, 18);
  EXPECT_EQ(projector_forward(x, w, c), x);
}

TEST(ProjectorForward, ZeroMixersAreBitwiseIdentity) {
  for (auto mode : {DirectionMode::bidirectional, DirectionMode::unidirectional}) {
    const auto c = small_config(mode);
    const auto w = ProjectorWeights::zero_mixers(c, 19);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      const auto x = random_tensor(rng, 1 + seed % 5, 4, c.channels, std::pow(10.0, seed % 4));
      EXPECT_EQ(projector_forward(x, w, c), x);
    }
  }
}

TEST(ProjectorForward, TwoLayersComposeSingleLayers) {
  const auto c = small_config();
  const auto w = ProjectorWeights::random(c, 20);
  const auto x = random_input(c, 3, 21);
  const auto once = projector_layer(x, w.layers[0], c);
  EXPECT_EQ(projector_forward(x, w, c), projector_layer(once, w.layers[1], c));
}

TEST(ProjectorForward, ShapePreservedAndDeterministic) {
  for (std::size_t frames : {1, 2, 7}) {
    const auto c = small_config();
    const auto w = ProjectorWeights::random(c, 22);
    const auto x = random_input(c, frames, 23);
    const auto y = projector_forward(x, w, c);
    EXPECT_TRUE(y.same_shape(x));
    EXPECT_EQ(y, projector_forward(x, ProjectorWeights::random(c, 22), c));
  }
}

TEST(ProjectorForward, ShapeMismatch) {
  const auto c = small_config();
  const auto w = ProjectorWeights::random(c, 24);
  Rng rng(25);
  EXPECT_THROW(projector_forward(random_tensor(rng, 2, 5, c.channels, 1.0), w, c), ShapeError);
  auto bad = small_config(DirectionMode::unidirectional);
  EXPECT_THROW(projector_forward(random_input(c, 2, 26), w, bad), ShapeError);
}

TEST(ProjectorStream, RejectsBidirectional) {
  const auto c = small_config();
  const auto w = ProjectorWeights::random(c, 27);
  EXPECT_THROW(ProjectorStream::start(c), ModeError);
  ProjectorStream stream;
  std::vector<double> frame(4 * c.channels);
  EXPECT_THROW(projector_stream_step(frame, w, c, stream), ModeError);
}

TEST(ProjectorStream, FirstFrameMatchesBatch) {
  const auto c = small_config(DirectionMode::unidirectional);
  const auto w = ProjectorWeights::random(c, 28);
  const auto x = random_input(c, 1, 29);
  auto stream = ProjectorStream::start(c);
  const auto out = projector_stream_step(x.frame(0), w, c, stream);
  const auto batch = projector_forward(x, w, c);
  EXPECT_LE(max_abs_diff(out, batch.frame(0)), tol::kStreamingEquivalence);
  EXPECT_EQ(stream.frames_seen, 1u);
}

TEST(ProjectorStream, MatchesBatchOverSixFrames) {
  const auto c = small_config(DirectionMode::unidirectional);
  const auto w = ProjectorWeights::random(c, 30);
  const auto x = random_input(c, 6, 31);
  const auto batch = projector_forward(x, w, c);
  auto stream = ProjectorStream::start(c);
  for (std::size_t t = 0; t < 6; ++t) {
    const auto out = projector_stream_step(x.frame(t), w, c, stream);
    EXPECT_LE(max_abs_diff(out, batch.frame(t)), tol::kStreamingEquivalence) << "frame " << t;
  }
}

TEST(ProjectorStream, PrefixBatchesAgree) {
  // Each streamed frame equals the last frame of a batch run over the prefix.
  const auto c = small_config(DirectionMode::unidirectional);
  const auto w = ProjectorWeights::random(c, 32);
  const auto x = random_input(c, 5, 33);
  auto stream = ProjectorStream::start(c);
  for (std::size_t t = 0; t < 5; ++t) {
    const auto out = projector_stream_step(x.frame(t), w, c, stream);
    std::vector<double> prefix(x.values().begin(), x.values().begin() + (t + 1) * x.frame_stride());
    const auto batch =
        projector_forward(TokenTensor(t + 1, 4, c.channels, std::move(prefix)), w, c);
    EXPECT_LE(max_abs_diff(out, batch.frame(t)), tol::kStreamingEquivalence);
  }
}

TEST(Sensitivity, UnidirectionalUpperTriangleIsZero) {
  const auto c = small_config(DirectionMode::unidirectional);
  const auto w = ProjectorWeights::random(c, 34);
  const auto s = sensitivity_matrix(w, c, 6, 1e-3, 35);
  for (std::size_t o = 0; o < 6; ++o) {
    for (std::size_t i = 0; i < 6; ++i) {
      if (i > o) EXPECT_EQ(s[o][i], 0.0);
      EXPECT_GE(s[o][i], 0.0);
    }
  }
}

TEST(Sensitivity, ZeroMixersAreDiagonal) {
  const auto c = small_config();
  const auto w = ProjectorWeights::zero_mixers(c, 36);
  const auto s = sensitivity_matrix(w, c, 4, 1e-3, 37);
  for (std::size_t o = 0; o < 4; ++o) {
    for (std::size_t i = 0; i < 4; ++i) {
      if (i == o) {
        EXPECT_NEAR(s[o][i], 1.0, 1e-9);
      } else {
        EXPECT_EQ(s[o][i], 0.0);
      }
    }
  }
}

TEST(Sensitivity, BidirectionalReachesEveryFrame) {
  const auto c = small_config();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto w = ProjectorWeights::random(c, seed);
    const auto s = sensitivity_matrix(w, c, 8, 1e-3, seed + 100);
    for (std::size_t o = 0; o < 8; ++o) {
      for (std::size_t i = 0; i < 8; ++i) EXPECT_GT(s[o][i], 0.0) << o << "," << i;
    }
  }
}

TEST(Sensitivity, NeedsTwoFrames) {
  const auto c = small_config();
  EXPECT_THROW(sensitivity_matrix(ProjectorWeights::random(c, 1), c, 1, 1e-3, 2), ConfigError);
}

class WeightsFile : public ::testing::Test {
 protected:
  std::filesystem::path path_ =
      std::filesystem::path(STORM_TEST_TMPDIR) /
      (std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + ".strm");
  void TearDown() override { std::filesystem::remove(path_); }
};

TEST_F(WeightsFile, RoundTripIsBitwise) {
  for (auto mode : {DirectionMode::bidirectional, DirectionMode::unidirectional}) {
    const auto c = small_config(mode);
    const auto w = ProjectorWeights::random(c, 38);
    save_weights(path_, c, w);
    const auto [lc, lw] = load_weights(path_);
    EXPECT_EQ(lc, c);
    const auto x = random_input(c, 3, 39);
    EXPECT_EQ(projector_forward(x, lw, lc), projector_forward(x, w, c));
  }
}

TEST_F(WeightsFile, HeaderLayout) {
  const auto c = small_config();
  save_weights(path_, c, ProjectorWeights::random(c, 40));
  std::ifstream in(path_, std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  EXPECT_EQ(std::string(magic, 4), "STRM");
  unsigned char version[4];
  in.read(reinterpret_cast<char*>(version), 4);
  EXPECT_EQ(version[0], kWeightsFormatVersion);
  EXPECT_EQ(version[1] | version[2] | version[3], 0);
}

TEST_F(WeightsFile, RejectsCorruption) {
  const auto c = small_config();
  save_weights(path_, c, ProjectorWeights::random(c, 41));
  {
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    out.put('x');
  }
  EXPECT_THROW(load_weights(path_), IoError);
  {
    std::ofstream out(path_, std::ios::binary);
    out << "NOPE";
  }
  EXPECT_THROW(load_weights(path_), IoError);
  EXPECT_THROW(load_weights(path_.string() + ".missing"), IoError);
}

}  // namespace
}  // namespace storm
