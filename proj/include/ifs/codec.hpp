#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ifs/error.hpp"
#include "ifs/tensor.hpp"

namespace ifs {

// A single C x H x W frame of 8-bit samples, channel-major then row-major.
struct Frame {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  static Frame zeros(int c, int h, int w) {
    Frame f;
    f.channels = c;
    f.height = h;
    f.width = w;
    f.pixels.assign(static_cast<std::size_t>(c) * h * w, 0);
    return f;
  }
  std::uint8_t& at(int c, int y, int x) {
    return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::uint8_t at(int c, int y, int x) const {
    return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  bool operator==(const Frame&) const = default;
};

// T x C x H x W clip of 8-bit samples.
struct RawClip {
  int T = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // frame-major, then channel, row, column

  static RawClip zeros(int t, int c, int h, int w) {
    RawClip clip;
    clip.T = t;
    clip.channels = c;
    clip.height = h;
    clip.width = w;
    clip.pixels.assign(static_cast<std::size_t>(t) * c * h * w, 0);
    return clip;
  }
  std::size_t frame_size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  Frame frame(int t) const {
    Frame f = Frame::zeros(channels, height, width);
    std::memcpy(f.pixels.data(), pixels.data() + static_cast<std::size_t>(t) * frame_size(),
                frame_size());
    return f;
  }
  void set_frame(int t, const Frame& f) {
    std::memcpy(pixels.data() + static_cast<std::size_t>(t) * frame_size(),
                f.pixels.data(), frame_size());
  }
  bool operator==(const RawClip&) const = default;
};

// Per-block integer displacements; grid is (H/bs) x (W/bs) of (dy, dx).
struct MotionField {
  int block_size = 0;
  int grid_h = 0;
  int grid_w = 0;
  std::vector<std::array<int, 2>> grid;  // row-major blocks

  static MotionField zeros(int bs, int gh, int gw) {
    MotionField m;
    m.block_size = bs;
    m.grid_h = gh;
    m.grid_w = gw;
    m.grid.assign(static_cast<std::size_t>(gh) * gw, {0, 0});
    return m;
  }
  std::array<int, 2>& at(int by, int bx) {
    return grid[static_cast<std::size_t>(by) * grid_w + bx];
  }
  const std::array<int, 2>& at(int by, int bx) const {
    return grid[static_cast<std::size_t>(by) * grid_w + bx];
  }
  bool operator==(const MotionField&) const = default;
};

// Exact pixel difference between a frame and its motion-compensated
// prediction; values in [-255, 255].
struct ResidualMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<std::int16_t> values;

  static ResidualMap zeros(int c, int h, int w) {
    ResidualMap r;
    r.channels = c;
    r.height = h;
    r.width = w;
    r.values.assign(static_cast<std::size_t>(c) * h * w, 0);
    return r;
  }
  bool operator==(const ResidualMap&) const = default;
};

struct PFrame {
  MotionField motion;
  ResidualMap residual;
  bool operator==(const PFrame&) const = default;
};

// I-frame plus per-P-frame motion fields and residuals.
struct CompressedClip {
  int T = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  int block_size = 0;
  int search_range = 0;
  Frame i_frame;
  std::vector<PFrame> p_frames;  // t = 2..T
  bool operator==(const CompressedClip&) const = default;
};

namespace detail {
inline int clamp_coord(int v, int hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); }
}  // namespace detail

// Exhaustive block matching of target against reference. For each target
// block the displacement minimizing SAD over the full +-search_range window;
// ties broken by smallest |dy|+|dx|, then by row-major scan order of the
// window. Reference samples are taken with per-pixel coordinate clamping,
// matching warp().
inline MotionField estimate_motion(const Frame& reference, const Frame& target,
                                   int block_size, int search_range) {
  if (block_size < 1 || search_range < 0) {
    throw ContractError("estimate_motion: block_size >= 1 and search_range >= 0 required");
  }
  if (block_size > reference.height || block_size > reference.width) {
    throw DimensionError("estimate_motion: block_size exceeds frame extent");
  }
  if (reference.height % block_size != 0 || reference.width % block_size != 0) {
    throw DimensionError("estimate_motion: frame extents must be multiples of block_size");
  }
  const int H = reference.height, W = reference.width, C = reference.channels;
  const int gh = H / block_size, gw = W / block_size;
  MotionField field = MotionField::zeros(block_size, gh, gw);

#pragma omp parallel for schedule(static)
  for (int blk = 0; blk < gh * gw; ++blk) {
    const int by = blk / gw;
    const int bx = blk % gw;
    const int y0 = by * block_size;
    const int x0 = bx * block_size;
    long best_sad = -1;
    int best_cost = 0, best_dy = 0, best_dx = 0;
    for (int dy = -search_range; dy <= search_range; ++dy) {
      for (int dx = -search_range; dx <= search_range; ++dx) {
        long sad = 0;
        for (int c = 0; c < C; ++c) {
          for (int i = 0; i < block_size; ++i) {
            const int sy = detail::clamp_coord(y0 + i + dy, H);
            for (int j = 0; j < block_size; ++j) {
              const int sx = detail::clamp_coord(x0 + j + dx, W);
              sad += std::abs(static_cast<int>(target.at(c, y0 + i, x0 + j)) -
                              static_cast<int>(reference.at(c, sy, sx)));
            }
          }
        }
        const int cost = std::abs(dy) + std::abs(dx);
        if (best_sad < 0 || sad < best_sad || (sad == best_sad && cost < best_cost)) {
          best_sad = sad;
          best_cost = cost;
          best_dy = dy;
          best_dx = dx;
        }
      }
    }
    field.at(by, bx) = {best_dy, best_dx};
  }
  return field;
}

// Motion compensation: each target block copies the reference block at
// (block origin + displacement), with source coordinates clamped to bounds.
inline Frame warp(const Frame& reference, const MotionField& motion) {
  const int bs = motion.block_size;
  if (motion.grid_h * bs != reference.height || motion.grid_w * bs != reference.width) {
    throw DimensionError("warp: motion grid does not tile the frame");
  }
  const int H = reference.height, W = reference.width, C = reference.channels;
  Frame out = Frame::zeros(C, H, W);
  for (int by = 0; by < motion.grid_h; ++by) {
    for (int bx = 0; bx < motion.grid_w; ++bx) {
      const auto [dy, dx] = motion.at(by, bx);
      for (int c = 0; c < C; ++c) {
        for (int i = 0; i < bs; ++i) {
          const int sy = detail::clamp_coord(by * bs + i + dy, H);
          for (int j = 0; j < bs; ++j) {
            const int sx = detail::clamp_coord(bx * bs + j + dx, W);
            out.at(c, by * bs + i, bx * bs + j) = reference.at(c, sy, sx);
          }
        }
      }
    }
  }
  return out;
}

// x_t = warp(x_1, m_t) + r_t, with motion always estimated against the key
// frame x_1 and residuals stored exactly.
inline CompressedClip compress_clip(const RawClip& clip, int block_size,
                                    int search_range) {
  if (clip.T < 2) throw ContractError("compress_clip: clip must have T >= 2");
  CompressedClip out;
  out.T = clip.T;
  out.channels = clip.channels;
  out.height = clip.height;
  out.width = clip.width;
  out.block_size = block_size;
  out.search_range = search_range;
  out.i_frame = clip.frame(0);
  out.p_frames.reserve(static_cast<std::size_t>(clip.T) - 1);
  for (int t = 1; t < clip.T; ++t) {
    const Frame target = clip.frame(t);
    PFrame pf;
    pf.motion = estimate_motion(out.i_frame, target, block_size, search_range);
    const Frame pred = warp(out.i_frame, pf.motion);
    pf.residual = ResidualMap::zeros(clip.channels, clip.height, clip.width);
    for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
      pf.residual.values[i] = static_cast<std::int16_t>(
          static_cast<int>(target.pixels[i]) - static_cast<int>(pred.pixels[i]));
    }
    out.p_frames.push_back(std::move(pf));
  }
  return out;
}

inline RawClip reconstruct_clip(const CompressedClip& compressed) {
  if (static_cast<int>(compressed.p_frames.size()) != compressed.T - 1) {
    throw ContractError("reconstruct_clip: p_frames length must be T - 1");
  }
  RawClip clip = RawClip::zeros(compressed.T, compressed.channels, compressed.height,
                                compressed.width);
  clip.set_frame(0, compressed.i_frame);
  for (int t = 1; t < compressed.T; ++t) {
    const PFrame& pf = compressed.p_frames[static_cast<std::size_t>(t) - 1];
    Frame pred = warp(compressed.i_frame, pf.motion);
    for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
      int v = static_cast<int>(pred.pixels[i]) + static_cast<int>(pf.residual.values[i]);
      v = v < 0 ? 0 : (v > 255 ? 255 : v);
      pred.pixels[i] = static_cast<std::uint8_t>(v);
    }
    clip.set_frame(t, pred);
  }
  return clip;
}

// Block-constant per-pixel expansion of the motion field: channel 0 carries
// dy / normalizer, channel 1 dx / normalizer.
inline Tensor motion_to_dense(const MotionField& motion, float normalizer) {
  if (normalizer <= 0.0f) throw ContractError("motion_to_dense: normalizer must be > 0");
  const int bs = motion.block_size;
  const int H = motion.grid_h * bs, W = motion.grid_w * bs;
  auto out = Tensor::zeros({2, H, W});
  float* dy_plane = out.data();
  float* dx_plane = out.data() + static_cast<std::int64_t>(H) * W;
  for (int by = 0; by < motion.grid_h; ++by) {
    for (int bx = 0; bx < motion.grid_w; ++bx) {
      const auto [dy, dx] = motion.at(by, bx);
      const float fy = static_cast<float>(dy) / normalizer;
      const float fx = static_cast<float>(dx) / normalizer;
      for (int i = 0; i < bs; ++i) {
        for (int j = 0; j < bs; ++j) {
          dy_plane[(by * bs + i) * W + bx * bs + j] = fy;
          dx_plane[(by * bs + i) * W + bx * bs + j] = fx;
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// File formats
//   .rvid: "RVID0001", u32 LE T, C, H, W, then T*C*H*W bytes.
//   .cvid: "CVID0001", u32 LE T, C, H, W, block_size, search_range;
//          C*H*W bytes of i_frame; per P-frame (H/bs)*(W/bs) signed (dy,dx)
//          byte pairs, then C*H*W signed 16-bit LE residuals.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is, const std::string& field) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError("truncated payload while reading " + field);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void read_exact(std::istream& is, void* dst, std::size_t n,
                       const std::string& field) {
  if (!is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n))) {
    throw FormatError("truncated payload while reading " + field);
  }
}

inline void check_magic(std::istream& is, const char* expect, const std::string& kind) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, expect, 8) != 0) {
    throw FormatError(kind + ": bad magic, expected \"" + expect + "\"");
  }
}

// Atomic write: stream into path.tmp, then rename over path.
class AtomicFile {
 public:
  explicit AtomicFile(const std::string& path)
      : path_(path), tmp_(path + ".tmp"), os_(tmp_, std::ios::binary) {
    if (!os_) throw LoadError("cannot open for writing: " + tmp_);
  }
  std::ostream& stream() { return os_; }
  void commit() {
    os_.flush();
    if (!os_) throw LoadError("write failed: " + tmp_);
    os_.close();
    std::filesystem::rename(tmp_, path_);
  }

 private:
  std::string path_, tmp_;
  std::ofstream os_;
};

}  // namespace detail

inline void write_rvid(const std::string& path, const RawClip& clip) {
  detail::AtomicFile file(path);
  auto& os = file.stream();
  os.write("RVID0001", 8);
  detail::write_u32(os, static_cast<std::uint32_t>(clip.T));
  detail::write_u32(os, static_cast<std::uint32_t>(clip.channels));
  detail::write_u32(os, static_cast<std::uint32_t>(clip.height));
  detail::write_u32(os, static_cast<std::uint32_t>(clip.width));
  os.write(reinterpret_cast<const char*>(clip.pixels.data()),
           static_cast<std::streamsize>(clip.pixels.size()));
  file.commit();
}

inline RawClip read_rvid(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open clip: " + path);
  detail::check_magic(is, "RVID0001", "rvid");
  const auto T = detail::read_u32(is, "T");
  const auto C = detail::read_u32(is, "C");
  const auto H = detail::read_u32(is, "H");
  const auto W = detail::read_u32(is, "W");
  if (T < 2) throw FormatError("rvid: T must be >= 2, got " + std::to_string(T));
  if (C < 1 || H < 1 || W < 1 || H > 65536 || W > 65536) {
    throw FormatError("rvid: implausible extents");
  }
  RawClip clip = RawClip::zeros(static_cast<int>(T), static_cast<int>(C),
                                static_cast<int>(H), static_cast<int>(W));
  detail::read_exact(is, clip.pixels.data(), clip.pixels.size(), "pixels");
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("rvid: trailing bytes after pixel payload");
  }
  return clip;
}

inline void write_cvid(const std::string& path, const CompressedClip& c) {
  if (c.search_range > 127) {
    throw FormatError("cvid: search_range exceeds signed 8-bit motion encoding");
  }
  detail::AtomicFile file(path);
  auto& os = file.stream();
  os.write("CVID0001", 8);
  for (int v : {c.T, c.channels, c.height, c.width, c.block_size, c.search_range}) {
    detail::write_u32(os, static_cast<std::uint32_t>(v));
  }
  os.write(reinterpret_cast<const char*>(c.i_frame.pixels.data()),
           static_cast<std::streamsize>(c.i_frame.pixels.size()));
  for (const auto& pf : c.p_frames) {
    for (const auto& mv : pf.motion.grid) {
      const char pair[2] = {static_cast<char>(static_cast<std::int8_t>(mv[0])),
                            static_cast<char>(static_cast<std::int8_t>(mv[1]))};
      os.write(pair, 2);
    }
    for (std::int16_t r : pf.residual.values) {
      const char b[2] = {static_cast<char>(r & 0xFF), static_cast<char>((r >> 8) & 0xFF)};
      os.write(b, 2);
    }
  }
  file.commit();
}

inline CompressedClip read_cvid(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open compressed clip: " + path);
  detail::check_magic(is, "CVID0001", "cvid");
  CompressedClip c;
  c.T = static_cast<int>(detail::read_u32(is, "T"));
  c.channels = static_cast<int>(detail::read_u32(is, "C"));
  c.height = static_cast<int>(detail::read_u32(is, "H"));
  c.width = static_cast<int>(detail::read_u32(is, "W"));
  c.block_size = static_cast<int>(detail::read_u32(is, "block_size"));
  c.search_range = static_cast<int>(detail::read_u32(is, "search_range"));
  if (c.T < 2) throw FormatError("cvid: T must be >= 2, got " + std::to_string(c.T));
  if (c.block_size < 1 || c.height % c.block_size != 0 || c.width % c.block_size != 0) {
    throw FormatError("cvid: extents are not multiples of block_size");
  }
  c.i_frame = Frame::zeros(c.channels, c.height, c.width);
  detail::read_exact(is, c.i_frame.pixels.data(), c.i_frame.pixels.size(), "i_frame");
  const int gh = c.height / c.block_size, gw = c.width / c.block_size;
  for (int t = 1; t < c.T; ++t) {
    PFrame pf;
    pf.motion = MotionField::zeros(c.block_size, gh, gw);
    for (auto& mv : pf.motion.grid) {
      char pair[2];
      detail::read_exact(is, pair, 2, "motion field");
      mv[0] = static_cast<std::int8_t>(pair[0]);
      mv[1] = static_cast<std::int8_t>(pair[1]);
    }
    pf.residual = ResidualMap::zeros(c.channels, c.height, c.width);
    for (auto& r : pf.residual.values) {
      unsigned char b[2];
      detail::read_exact(is, b, 2, "residuals");
      r = static_cast<std::int16_t>(static_cast<std::uint16_t>(b[0]) |
                                    (static_cast<std::uint16_t>(b[1]) << 8));
    }
    c.p_frames.push_back(std::move(pf));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("cvid: trailing bytes after residual payload");
  }
  return c;
}

}  // namespace ifs
