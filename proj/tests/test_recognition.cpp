#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "ifs/recognition.hpp"
#include "ifs/trainer.hpp"
#include "testutil.hpp"

using ifs::RawClip;
using ifs::Rng;
using ifs::Tensor;
using testutil::TempDir;

namespace {

ifs::GeneratorNet tiny_generator(int T, std::uint64_t seed = 21) {
  ifs::ArchConfig cfg;
  cfg.base_width = 4;
  cfg.n_res_blocks = 1;
  cfg.input_channels = ifs::assembled_channels(T, 3, ifs::InputMode::compressed);
  cfg.output_channels = 3;
  cfg.H = cfg.W = 32;
  ifs::GeneratorNet F;
  Rng rng(seed);
  F.init("F", cfg, rng);
  return F;
}

RawClip random_video(int T, Rng& rng) {
  RawClip v = RawClip::zeros(T, 3, 32, 32);
  for (auto& p : v.pixels) p = static_cast<std::uint8_t>(rng.next_int(0, 255));
  return v;
}

}  // namespace

TEST_CASE("synthesis is deterministic and validates window length", "[recognition]") {
  const int T = 6;
  auto F = tiny_generator(T);
  Rng rng(1);
  auto window = random_video(T, rng);
  ifs::CodecParams codec;
  auto a = ifs::synthesize_frame(F, T, ifs::InputMode::compressed, codec, window);
  auto b = ifs::synthesize_frame(F, T, ifs::InputMode::compressed, codec, window);
  REQUIRE(a.image.numel() == b.image.numel());
  CHECK(std::memcmp(a.image.data(), b.image.data(), sizeof(float) * a.image.numel()) == 0);

  auto wrong = random_video(T + 1, rng);
  CHECK_THROWS_AS(ifs::synthesize_frame(F, T, ifs::InputMode::compressed, codec, wrong),
                  ifs::ContractError);
}

TEST_CASE("clip summary uses non-overlapping windows and drops the remainder",
          "[recognition]") {
  const int T = 12;
  auto F = tiny_generator(T);
  Rng rng(2);
  ifs::CodecParams codec;

  auto video96 = random_video(96, rng);
  auto frames = ifs::synthesize_clip_summary(F, T, ifs::InputMode::compressed, codec, video96);
  CHECK(frames.size() == 8);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    CHECK(frames[i].window_offset == static_cast<int>(i) * 12);
  }

  // window accounting: count * window <= len < count * window + window
  for (int len : {96, 97, 107, 12}) {
    auto v = random_video(len, rng);
    auto fs = ifs::synthesize_clip_summary(F, T, ifs::InputMode::compressed, codec, v);
    const int count = static_cast<int>(fs.size());
    CHECK(count * 12 <= len);
    CHECK(len < count * 12 + 12);
  }

  auto F6 = tiny_generator(6);
  auto video13 = random_video(13, rng);
  CHECK(ifs::synthesize_clip_summary(F6, 6, ifs::InputMode::compressed, codec, video13).size() ==
        2);

  // a video of exactly one window reduces to synthesize_frame
  auto video12 = random_video(12, rng);
  auto one = ifs::synthesize_clip_summary(F, T, ifs::InputMode::compressed, codec, video12);
  REQUIRE(one.size() == 1);
  auto direct = ifs::synthesize_frame(F, T, ifs::InputMode::compressed, codec, video12);
  CHECK(std::memcmp(one[0].image.data(), direct.image.data(),
                    sizeof(float) * direct.image.numel()) == 0);

  auto short_video = random_video(5, rng);
  CHECK_THROWS_AS(
      ifs::synthesize_clip_summary(F6, 6, ifs::InputMode::compressed, codec, short_video),
      ifs::ContractError);
}

TEST_CASE("ave baseline closed forms", "[recognition]") {
  // static clip: the frame itself
  RawClip stat = RawClip::zeros(4, 3, 8, 8);
  Rng rng(3);
  ifs::Frame f = ifs::Frame::zeros(3, 8, 8);
  for (auto& p : f.pixels) p = static_cast<std::uint8_t>(rng.next_int(0, 255));
  for (int t = 0; t < 4; ++t) stat.set_frame(t, f);
  auto ave = ifs::baseline_ave_frame(stat);
  auto norm = ifs::normalize_frame(f);
  CHECK(testutil::max_rel_err(ave, norm) < 1e-6);

  // two frames at the range endpoints average to zero
  RawClip two = RawClip::zeros(2, 3, 4, 4);
  ifs::Frame lo = ifs::Frame::zeros(3, 4, 4);
  ifs::Frame hi = ifs::Frame::zeros(3, 4, 4);
  std::fill(hi.pixels.begin(), hi.pixels.end(), std::uint8_t(255));
  two.set_frame(0, lo);
  two.set_frame(1, hi);
  auto mid = ifs::baseline_ave_frame(two);
  for (std::int64_t i = 0; i < mid.numel(); ++i) {
    CHECK(mid.data()[i] == Catch::Approx(0.0f).margin(1e-6));
  }

  // a moving dot: per-pixel value reflects occupancy fraction
  RawClip dot = RawClip::zeros(4, 3, 4, 4);
  for (int t = 0; t < 4; ++t) {
    ifs::Frame fr = ifs::Frame::zeros(3, 4, 4);
    for (int c = 0; c < 3; ++c) fr.at(c, 1, t) = 255;
    dot.set_frame(t, fr);
  }
  auto streak = ifs::baseline_ave_frame(dot);
  for (int x = 0; x < 4; ++x) {
    // occupancy 1/4 at visited pixels: mean = (3*(-1) + 1) / 4
    CHECK(streak.data()[1 * 4 + x] == Catch::Approx(-0.5f).margin(1e-6));
  }
  CHECK(streak.data()[0] == Catch::Approx(-1.0f).margin(1e-6));
}

TEST_CASE("uniform window placement", "[recognition]") {
  CHECK(ifs::uniform_window_offsets(96, 12, 8) ==
        std::vector<int>{0, 12, 24, 36, 48, 60, 72, 84});
  CHECK(ifs::uniform_window_offsets(96, 12, 4) == std::vector<int>{0, 24, 48, 84});
  CHECK(ifs::uniform_window_offsets(6, 6, 4) == std::vector<int>{0});
  CHECK_THROWS_AS(ifs::uniform_window_offsets(5, 6, 1), ifs::ContractError);
}

TEST_CASE("evaluation aggregates scores with the lowest-index tie rule", "[recognition]") {
  TempDir dir;
  ifs::GeneratorConfig g;
  g.num_clips = 20;
  g.T = 6;
  g.H = g.W = 32;
  g.seed = 9;
  auto manifest = ifs::generate_moving_shapes(g, dir.path.string());
  const auto val_idx = manifest.indices(ifs::Split::val);
  REQUIRE(!val_idx.empty());

  ifs::FrameSourceSpec source;
  source.kind = ifs::FrameSourceKind::i_frame;
  source.T = 6;

  // perfect oracle: answers the true label of each video in manifest order
  std::size_t call = 0;
  auto oracle = [&](const Tensor& frames) {
    auto logits = Tensor::zeros({frames.dim(0), 4});
    const int label = manifest.records[val_idx[call++]].label;
    for (int n = 0; n < frames.dim(0); ++n) logits.data()[n * 4 + label] = 10.0f;
    return logits;
  };
  int videos = 0;
  CHECK(ifs::evaluate_top1_core(oracle, manifest, ifs::Split::val, source, 4, &videos) ==
        Catch::Approx(1.0));
  CHECK(videos == static_cast<int>(val_idx.size()));

  // uniform probabilities: the tie rule forces class 0 on every video
  auto uniform = [](const Tensor& frames) { return Tensor::zeros({frames.dim(0), 4}); };
  double class0 = 0;
  for (auto i : val_idx) class0 += manifest.records[i].label == 0 ? 1.0 : 0.0;
  CHECK(ifs::evaluate_top1_core(uniform, manifest, ifs::Split::val, source, 4) ==
        Catch::Approx(class0 / static_cast<double>(val_idx.size())));

  // empty split is a contract error
  ifs::Manifest empty;
  empty.root_dir = dir.path.string();
  CHECK_THROWS_AS(ifs::evaluate_top1_core(uniform, empty, ifs::Split::val, source, 4),
                  ifs::ContractError);
}

TEST_CASE("samples_per_video=1 equals single-window evaluation", "[recognition]") {
  TempDir dir;
  ifs::GeneratorConfig g;
  g.num_clips = 12;
  g.T = 12;  // two 6-frame windows available
  g.H = g.W = 32;
  g.seed = 10;
  auto manifest = ifs::generate_moving_shapes(g, dir.path.string());

  ifs::FrameSourceSpec source;
  source.kind = ifs::FrameSourceKind::ave;
  source.T = 6;

  Rng wrng(31);
  ifs::ArchConfig enc;
  enc.base_width = 4;
  enc.input_channels = 3;
  enc.H = enc.W = 32;
  ifs::ClassifierNet C;
  C.init("C", enc, 4, wrng);

  const double multi = ifs::evaluate_top1(C, manifest, ifs::Split::val, source, 1);
  // manual single-window pass over the first window of each val video
  const auto val_idx = manifest.indices(ifs::Split::val);
  long correct = 0;
  for (auto vi : val_idx) {
    auto video = ifs::read_rvid(manifest.resolve(manifest.records[vi]));
    auto frame = ifs::baseline_ave_frame(ifs::clip_window(video, 0, 6));
    ifs::NoGradGuard ng;
    auto logits = C.forward(ifs::stack_batch({frame}));
    int best = 0;
    for (int k = 1; k < 4; ++k) {
      if (logits.data()[k] > logits.data()[best]) best = k;
    }
    if (best == manifest.records[vi].label) ++correct;
  }
  CHECK(multi == Catch::Approx(static_cast<double>(correct) / val_idx.size()));
}

TEST_CASE("ppm round trip stays within one quantization step", "[recognition]") {
  TempDir dir;
  Rng rng(4);
  auto frame = testutil::random_tensor<float>({3, 16, 16}, rng, 0.95);
  const auto path = dir.file("frame.ppm");
  ifs::write_ppm(path, frame);
  auto back = ifs::read_ppm(path);
  REQUIRE(back.shape() == frame.shape());
  for (std::int64_t i = 0; i < frame.numel(); ++i) {
    CHECK(std::abs(back.data()[i] - frame.data()[i]) <= 1.0f / 255.0f + 1e-6f);
  }

  // exact header layout
  std::ifstream is(path, std::ios::binary);
  std::string header(13, '\0');
  is.read(header.data(), 13);
  CHECK(header == "P6\n16 16\n255\n");

  // corrupt magic
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("P5", 2);
  }
  CHECK_THROWS_AS(ifs::read_ppm(path), ifs::FormatError);
}

TEST_CASE("eval report format", "[recognition]") {
  TempDir dir;
  const auto path = dir.file("report.txt");
  ifs::write_eval_report(path, 0.8125, 200, 4);
  std::ifstream is(path);
  std::string all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  CHECK(all == "top1=0.812500\nvideos=200\nsamples_per_video=4\n");
}

TEST_CASE("evaluation is deterministic across repeated runs", "[recognition]") {
  TempDir dir;
  ifs::GeneratorConfig g;
  g.num_clips = 16;
  g.T = 6;
  g.H = g.W = 32;
  g.seed = 12;
  auto manifest = ifs::generate_moving_shapes(g, dir.path.string());

  Rng wrng(77);
  ifs::ArchConfig enc;
  enc.base_width = 4;
  enc.input_channels = 3;
  enc.H = enc.W = 32;
  ifs::ClassifierNet C;
  C.init("C", enc, 4, wrng);

  auto F = tiny_generator(6, 99);
  ifs::FrameSourceSpec source;
  source.kind = ifs::FrameSourceKind::generator;
  source.F = &F;
  source.T = 6;
  const double a = ifs::evaluate_top1(C, manifest, ifs::Split::val, source, 4);
  const double b = ifs::evaluate_top1(C, manifest, ifs::Split::val, source, 4);
  CHECK(a == b);
}
