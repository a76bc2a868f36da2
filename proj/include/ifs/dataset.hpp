#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "ifs/codec.hpp"
#include "ifs/error.hpp"
#include "ifs/rng.hpp"
#include "ifs/tensor.hpp"

namespace ifs {

enum class Split { train, val };

inline const char* split_name(Split s) { return s == Split::train ? "train" : "val"; }

struct ClipRecord {
  std::string clip_path;  // relative to the manifest directory
  int label = 0;
  Split split = Split::train;
};

struct Manifest {
  std::string root_dir;
  std::vector<ClipRecord> records;

  std::string resolve(const ClipRecord& rec) const {
    return (std::filesystem::path(root_dir) / rec.clip_path).string();
  }
  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].split == s) out.push_back(i);
    }
    return out;
  }
};

struct GeneratorConfig {
  int num_clips = 1000;
  int num_classes = 4;  // motion directions; 4 = right, left, up, down
  int T = 6;
  int H = 32;
  int W = 32;
  int shapes_per_clip = 2;
  double speed_min = 1.0;
  double speed_max = 2.0;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  int block_size = 8;  // H, W must tile into codec blocks
};

// Test-facing metadata: per-shape center trajectories, never serialized.
struct ClipInfo {
  int label = 0;
  std::vector<std::vector<std::pair<double, double>>> shape_centers;  // [shape][t] = (cy, cx)
};

namespace detail {

struct ShapeSpec {
  bool is_disc = false;
  int half_w = 0, half_h = 0;  // rect half extents; disc uses half_w as radius
  std::uint8_t color[3] = {0, 0, 0};
  double cy0 = 0.0, cx0 = 0.0;
  double vy = 0.0, vx = 0.0;
};

inline std::pair<double, double> class_direction(int label, int num_classes) {
  if (num_classes == 4) {
    switch (label) {
      case 0: return {0.0, 1.0};   // right
      case 1: return {0.0, -1.0};  // left
      case 2: return {-1.0, 0.0};  // up
      default: return {1.0, 0.0};  // down
    }
  }
  const double a = 2.0 * 3.14159265358979323846 * label / num_classes;
  return {std::sin(a), std::cos(a)};
}

inline void draw_shape(Frame& frame, const ShapeSpec& s, double cy, double cx) {
  const int H = frame.height, W = frame.width, C = frame.channels;
  const int icy = static_cast<int>(std::lround(cy));
  const int icx = static_cast<int>(std::lround(cx));
  const int y_lo = std::max(0, icy - s.half_h), y_hi = std::min(H - 1, icy + s.half_h);
  const int x_lo = std::max(0, icx - s.half_w), x_hi = std::min(W - 1, icx + s.half_w);
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      if (s.is_disc) {
        const int dy = y - icy, dx = x - icx;
        if (dy * dy + dx * dx > s.half_w * s.half_w) continue;
      }
      for (int c = 0; c < C; ++c) frame.at(c, y, x) = s.color[c % 3];
    }
  }
}

}  // namespace detail

// Procedural dataset whose class label is the dominant motion direction of
// the foreground shapes. Appearance (background tint and texture, shape
// geometry, colors, placement, speed) is sampled independently of the label,
// so the first frame carries no class signal. Deterministic given the seed.
inline Manifest generate_moving_shapes(const GeneratorConfig& cfg,
                                       const std::string& out_dir,
                                       std::vector<ClipInfo>* info = nullptr) {
  if (cfg.num_classes < 2) throw ConfigError("generator: need at least 2 classes");
  if (cfg.T < 2) throw ConfigError("generator: T must be >= 2");
  if (cfg.H % cfg.block_size != 0 || cfg.W % cfg.block_size != 0) {
    throw ConfigError("generator: H and W must be multiples of block_size");
  }
  const int min_extent = std::min(cfg.H, cfg.W);
  const int max_half = min_extent / 10;  // largest shape half-extent
  if (max_half < 2) {
    throw ConfigError("generator: frame too small, shapes would exceed the frame");
  }
  if (cfg.shapes_per_clip < 1) throw ConfigError("generator: shapes_per_clip must be >= 1");
  if (cfg.speed_min < 0 || cfg.speed_max < cfg.speed_min) {
    throw ConfigError("generator: bad speed range");
  }

  std::filesystem::create_directories(out_dir);
  Manifest manifest;
  manifest.root_dir = out_dir;
  if (info) info->clear();

  const int num_train = static_cast<int>(std::lround(cfg.num_clips * cfg.train_fraction));
  for (int idx = 0; idx < cfg.num_clips; ++idx) {
    const int label = idx % cfg.num_classes;
    Rng rng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(idx)));

    // Background: a fixed non-neutral tone under per-clip low-amplitude
    // pixel noise, static across frames. The tone sits away from the tanh
    // origin in every channel, so a generator that ignores color drifts
    // measurably. Appearance draws never consult the label.
    const std::uint8_t base[3] = {176, 144, 96};
    Frame background = Frame::zeros(3, cfg.H, cfg.W);
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < cfg.H; ++y) {
        for (int x = 0; x < cfg.W; ++x) {
          const int v = base[c] + static_cast<int>(rng.next_int(-12, 12));
          background.at(c, y, x) = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
        }
      }
    }

    std::vector<detail::ShapeSpec> shapes;
    for (int s = 0; s < cfg.shapes_per_clip; ++s) {
      detail::ShapeSpec spec;
      spec.is_disc = rng.next_int(0, 1) == 1;
      spec.half_w = static_cast<int>(rng.next_int(2, max_half));
      spec.half_h = spec.is_disc ? spec.half_w : static_cast<int>(rng.next_int(2, max_half));
      for (int tries = 0; tries < 100; ++tries) {
        int contrast = 0;
        for (int c = 0; c < 3; ++c) {
          spec.color[c] = static_cast<std::uint8_t>(rng.next_int(0, 255));
          contrast += std::abs(static_cast<int>(spec.color[c]) - static_cast<int>(base[c]));
        }
        if (contrast >= 160) break;
      }
      spec.cy0 = rng.next_uniform(spec.half_h, cfg.H - 1 - spec.half_h);
      spec.cx0 = rng.next_uniform(spec.half_w, cfg.W - 1 - spec.half_w);
      const double speed = rng.next_uniform(cfg.speed_min, cfg.speed_max);
      const auto [dy, dx] = detail::class_direction(label, cfg.num_classes);
      spec.vy = dy * speed;
      spec.vx = dx * speed;
      shapes.push_back(spec);
    }

    RawClip clip = RawClip::zeros(cfg.T, 3, cfg.H, cfg.W);
    ClipInfo clip_info;
    clip_info.label = label;
    clip_info.shape_centers.resize(shapes.size());
    for (int t = 0; t < cfg.T; ++t) {
      Frame frame = background;
      for (std::size_t s = 0; s < shapes.size(); ++s) {
        const double cy = shapes[s].cy0 + shapes[s].vy * t;
        const double cx = shapes[s].cx0 + shapes[s].vx * t;
        detail::draw_shape(frame, shapes[s], cy, cx);
        clip_info.shape_centers[s].emplace_back(cy, cx);
      }
      clip.set_frame(t, frame);
    }

    char name[32];
    std::snprintf(name, sizeof(name), "clip_%05d.rvid", idx);
    write_rvid((std::filesystem::path(out_dir) / name).string(), clip);

    ClipRecord rec;
    rec.clip_path = name;
    rec.label = label;
    rec.split = idx < num_train ? Split::train : Split::val;
    manifest.records.push_back(rec);
    if (info) info->push_back(std::move(clip_info));
  }

  // manifest.txt: "relative/path.rvid<TAB>label<TAB>split", LF endings
  {
    std::ofstream os((std::filesystem::path(out_dir) / "manifest.txt").string(),
                     std::ios::binary);
    for (const auto& rec : manifest.records) {
      os << rec.clip_path << '\t' << rec.label << '\t' << split_name(rec.split) << '\n';
    }
  }
  return manifest;
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw LoadError("cannot open manifest: " + path);
  Manifest manifest;
  manifest.root_dir = std::filesystem::path(path).parent_path().string();
  if (manifest.root_dir.empty()) manifest.root_dir = ".";
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = line.find('\t', tab1 == std::string::npos ? tab1 : tab1 + 1);
    if (tab1 == std::string::npos || tab2 == std::string::npos) {
      throw FormatError("manifest line " + std::to_string(line_no) +
                        ": expected path<TAB>label<TAB>split");
    }
    ClipRecord rec;
    rec.clip_path = line.substr(0, tab1);
    try {
      rec.label = std::stoi(line.substr(tab1 + 1, tab2 - tab1 - 1));
    } catch (const std::exception&) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": bad label");
    }
    const std::string split = line.substr(tab2 + 1);
    if (split == "train") {
      rec.split = Split::train;
    } else if (split == "val") {
      rec.split = Split::val;
    } else {
      throw FormatError("manifest line " + std::to_string(line_no) + ": bad split '" +
                        split + "'");
    }
    if (rec.label < 0) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": negative label");
    }
    // every referenced clip must exist and carry a valid header
    const auto clip_path = std::filesystem::path(manifest.root_dir) / rec.clip_path;
    std::ifstream clip(clip_path, std::ios::binary);
    if (!clip) {
      throw LoadError("manifest line " + std::to_string(line_no) + ": missing clip file " +
                      rec.clip_path);
    }
    try {
      detail::check_magic(clip, "RVID0001", "rvid");
      const auto T = detail::read_u32(clip, "T");
      if (T < 2) throw FormatError("T must be >= 2");
    } catch (const Error& e) {
      throw LoadError("manifest line " + std::to_string(line_no) + ": clip " +
                      rec.clip_path + " does not parse: " + e.what());
    }
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

// Seeded permutation of [0, n); the epoch order of iterate_batches.
inline std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

struct Batch {
  std::vector<RawClip> clips;
  std::vector<int> labels;
  std::vector<std::size_t> indices;  // positions within the iterated subset
};

// One epoch over the given records as a seeded permutation; the final
// partial batch is kept. Clips are decoded on demand.
class BatchIterator {
 public:
  BatchIterator(const Manifest& manifest, std::vector<std::size_t> record_indices,
                int batch_size, std::uint64_t shuffle_seed)
      : manifest_(manifest), records_(std::move(record_indices)), batch_size_(batch_size) {
    if (batch_size < 1) throw ContractError("iterate_batches: batch_size must be >= 1");
    perm_ = epoch_permutation(records_.size(), shuffle_seed);
  }

  BatchIterator(const Manifest& manifest, int batch_size, std::uint64_t shuffle_seed)
      : BatchIterator(manifest, all_indices(manifest), batch_size, shuffle_seed) {}

  bool next(Batch& out) {
    if (cursor_ >= perm_.size()) return false;
    out.clips.clear();
    out.labels.clear();
    out.indices.clear();
    while (cursor_ < perm_.size() && static_cast<int>(out.clips.size()) < batch_size_) {
      const std::size_t rec_idx = records_[perm_[cursor_]];
      const auto& rec = manifest_.records[rec_idx];
      const std::string path = manifest_.resolve(rec);
      try {
        out.clips.push_back(read_rvid(path));
      } catch (const Error& e) {
        throw LoadError("failed to load clip '" + path + "': " + e.what());
      }
      out.labels.push_back(rec.label);
      out.indices.push_back(perm_[cursor_]);
      ++cursor_;
    }
    return true;
  }

 private:
  static std::vector<std::size_t> all_indices(const Manifest& m) {
    std::vector<std::size_t> v(m.records.size());
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
  }

  const Manifest& manifest_;
  std::vector<std::size_t> records_;
  int batch_size_;
  std::vector<std::size_t> perm_;
  std::size_t cursor_ = 0;
};

// Mirrors the W axis of every frame when apply is set. Direction-labeled
// datasets must swap left/right labels at the call site; see the trainer's
// flip modes.
inline RawClip flip_horizontal(const RawClip& clip, bool apply) {
  if (!apply) return clip;
  RawClip out = clip;
  const int W = clip.width;
  for (int t = 0; t < clip.T; ++t) {
    for (int c = 0; c < clip.channels; ++c) {
      for (int y = 0; y < clip.height; ++y) {
        const std::size_t row =
            ((static_cast<std::size_t>(t) * clip.channels + c) * clip.height + y) * W;
        for (int x = 0; x < W; ++x) out.pixels[row + x] = clip.pixels[row + W - 1 - x];
      }
    }
  }
  return out;
}

// p -> p / 127.5 - 1, range [-1, 1].
inline float normalize_pixel(std::uint8_t p) {
  return static_cast<float>(p) / 127.5f - 1.0f;
}

inline std::uint8_t denormalize_pixel(float v) {
  const int q = static_cast<int>(std::lround((v + 1.0f) * 127.5f));
  return static_cast<std::uint8_t>(std::clamp(q, 0, 255));
}

inline Tensor normalize_clip(const RawClip& clip) {
  auto t = Tensor::zeros({clip.T, clip.channels, clip.height, clip.width});
  float* dst = t.data();
  for (std::size_t i = 0; i < clip.pixels.size(); ++i) dst[i] = normalize_pixel(clip.pixels[i]);
  return t;
}

inline Tensor normalize_frame(const Frame& frame) {
  auto t = Tensor::zeros({frame.channels, frame.height, frame.width});
  float* dst = t.data();
  for (std::size_t i = 0; i < frame.pixels.size(); ++i) {
    dst[i] = normalize_pixel(frame.pixels[i]);
  }
  return t;
}

// Inverse of normalize_frame after 8-bit rounding; expects a [C,H,W] tensor.
inline Frame denormalize_frame(const Tensor& t) {
  if (t.rank() != 3) throw DimensionError("denormalize_frame: expected [C,H,W] tensor");
  Frame f = Frame::zeros(t.dim(0), t.dim(1), t.dim(2));
  const float* src = t.data();
  for (std::size_t i = 0; i < f.pixels.size(); ++i) f.pixels[i] = denormalize_pixel(src[i]);
  return f;
}

}  // namespace ifs
