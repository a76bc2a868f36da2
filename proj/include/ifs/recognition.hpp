#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "ifs/codec.hpp"
#include "ifs/dataset.hpp"
#include "ifs/error.hpp"
#include "ifs/models.hpp"

namespace ifs {

struct CodecParams {
  int block_size = 8;
  int search_range = 4;
};

// Generator output for one clip window, with provenance.
struct SyntheticFrame {
  Tensor image;  // [C,H,W] in (-1,1)
  std::string source_clip;
  int window_offset = 0;
  std::string checkpoint_id;
};

// Applies the frozen generator to a batch of equal-length windows:
// compress -> assemble_input -> forward. No graph is recorded.
inline std::vector<Tensor> synthesize_frames_batched(const GeneratorNet& F, int T,
                                                     InputMode mode, CodecParams codec,
                                                     const std::vector<RawClip>& windows,
                                                     int batch_size = 32) {
  NoGradGuard ng;
  std::vector<Tensor> out;
  out.reserve(windows.size());
  std::size_t pos = 0;
  while (pos < windows.size()) {
    const std::size_t n = std::min<std::size_t>(batch_size, windows.size() - pos);
    std::vector<Tensor> inputs(n);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
      const RawClip& w = windows[pos + static_cast<std::size_t>(i)];
      if (w.T != T) {
        // thrown after the loop; flagged via empty tensor
        inputs[static_cast<std::size_t>(i)] = Tensor();
      } else {
        inputs[static_cast<std::size_t>(i)] = assemble_input(
            compress_clip(w, codec.block_size, codec.search_range), mode);
      }
    }
    for (const auto& t : inputs) {
      if (!t.defined()) {
        throw ContractError("synthesize: window length differs from the configured T");
      }
    }
    auto frames = F.forward(stack_batch(inputs));
    const std::int64_t stride = frames.numel() / static_cast<std::int64_t>(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto single = Tensor::zeros({frames.dim(1), frames.dim(2), frames.dim(3)});
      std::copy(frames.data() + static_cast<std::int64_t>(i) * stride,
                frames.data() + static_cast<std::int64_t>(i + 1) * stride, single.data());
      out.push_back(std::move(single));
    }
    pos += n;
  }
  return out;
}

inline SyntheticFrame synthesize_frame(const GeneratorNet& F, int T, InputMode mode,
                                       CodecParams codec, const RawClip& window,
                                       const std::string& source_clip = "",
                                       const std::string& checkpoint_id = "",
                                       int window_offset = 0) {
  if (window.T != T) {
    throw ContractError("synthesize_frame: window length " + std::to_string(window.T) +
                        " differs from configured T " + std::to_string(T));
  }
  SyntheticFrame f;
  f.image = synthesize_frames_batched(F, T, mode, codec, {window}, 1).front();
  f.source_clip = source_clip;
  f.window_offset = window_offset;
  f.checkpoint_id = checkpoint_id;
  return f;
}

inline RawClip clip_window(const RawClip& video, int offset, int length) {
  RawClip w = RawClip::zeros(length, video.channels, video.height, video.width);
  std::copy(video.pixels.begin() + static_cast<std::ptrdiff_t>(offset * video.frame_size()),
            video.pixels.begin() +
                static_cast<std::ptrdiff_t>((offset + length) * video.frame_size()),
            w.pixels.begin());
  return w;
}

// Non-overlapping sliding window over a long video; the ragged remainder is
// dropped, so a 96-frame video at window 12 yields 8 synthetic frames.
inline std::vector<SyntheticFrame> synthesize_clip_summary(
    const GeneratorNet& F, int T, InputMode mode, CodecParams codec, const RawClip& video,
    int window = 0, const std::string& source_clip = "",
    const std::string& checkpoint_id = "") {
  if (window == 0) window = T;
  if (window != T) {
    throw ContractError("synthesize_clip_summary: window must equal the configured T");
  }
  if (video.T < window) {
    throw ContractError("synthesize_clip_summary: video shorter than one window");
  }
  const int count = video.T / window;
  std::vector<RawClip> windows;
  windows.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) windows.push_back(clip_window(video, i * window, window));
  auto frames = synthesize_frames_batched(F, T, mode, codec, windows);
  std::vector<SyntheticFrame> out;
  out.reserve(frames.size());
  for (int i = 0; i < count; ++i) {
    SyntheticFrame f;
    f.image = std::move(frames[static_cast<std::size_t>(i)]);
    f.source_clip = source_clip;
    f.window_offset = i * window;
    f.checkpoint_id = checkpoint_id;
    out.push_back(std::move(f));
  }
  return out;
}

// Per-pixel temporal mean of the normalized frames (the AVE baseline).
inline Tensor baseline_ave_frame(const RawClip& window) {
  if (window.T < 1) throw ContractError("baseline_ave_frame: empty window");
  auto out = Tensor::zeros({window.channels, window.height, window.width});
  const std::size_t fs = window.frame_size();
  for (int t = 0; t < window.T; ++t) {
    const std::uint8_t* src = window.pixels.data() + static_cast<std::size_t>(t) * fs;
    for (std::size_t i = 0; i < fs; ++i) out.data()[i] += normalize_pixel(src[i]);
  }
  for (std::size_t i = 0; i < fs; ++i) out.data()[i] /= static_cast<float>(window.T);
  return out;
}

enum class FrameSourceKind { generator, i_frame, ave };

inline const char* frame_source_name(FrameSourceKind k) {
  switch (k) {
    case FrameSourceKind::generator: return "generator";
    case FrameSourceKind::i_frame: return "i_frame";
    default: return "ave";
  }
}

// Where classifier inputs come from: a frozen generator checkpoint (IFS or
// IFS-mot), the raw key frame, or the temporal-average baseline.
struct FrameSourceSpec {
  FrameSourceKind kind = FrameSourceKind::i_frame;
  const GeneratorNet* F = nullptr;
  int T = 6;
  InputMode mode = InputMode::compressed;
  CodecParams codec;
  std::string checkpoint_id;

  std::vector<Tensor> frames(const std::vector<RawClip>& windows) const {
    switch (kind) {
      case FrameSourceKind::generator: {
        if (!F) throw ContractError("frame source: generator checkpoint not loaded");
        return synthesize_frames_batched(*F, T, mode, codec, windows);
      }
      case FrameSourceKind::i_frame: {
        std::vector<Tensor> out;
        out.reserve(windows.size());
        for (const auto& w : windows) out.push_back(normalize_frame(w.frame(0)));
        return out;
      }
      default: {
        std::vector<Tensor> out;
        out.reserve(windows.size());
        for (const auto& w : windows) out.push_back(baseline_ave_frame(w));
        return out;
      }
    }
  }
};

// Average of softmax probabilities over windows, argmax with ties broken by
// the lowest class index.
inline int aggregate_predict(const std::vector<std::vector<float>>& window_probs) {
  if (window_probs.empty()) throw ContractError("aggregate_predict: no windows");
  const std::size_t K = window_probs.front().size();
  std::vector<double> mean(K, 0.0);
  for (const auto& p : window_probs) {
    if (p.size() != K) throw ContractError("aggregate_predict: ragged probability rows");
    for (std::size_t k = 0; k < K; ++k) mean[k] += p[k];
  }
  int best = 0;
  for (std::size_t k = 1; k < K; ++k) {
    if (mean[k] > mean[best]) best = static_cast<int>(k);
  }
  return best;
}

// k windows placed uniformly over the floor(len/window) non-overlapping
// slots; one window when only one fits.
inline std::vector<int> uniform_window_offsets(int video_len, int window, int samples) {
  if (video_len < window) {
    throw ContractError("evaluate: video shorter than one window");
  }
  const int avail = video_len / window;
  const int k = std::max(1, std::min(samples, avail));
  std::vector<int> offsets;
  offsets.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const int slot = (k == 1) ? 0 : static_cast<int>((static_cast<long>(i) * (avail - 1)) / (k - 1));
    offsets.push_back(slot * window);
  }
  return offsets;
}

// Top-1 accuracy over one split: per video, softmax scores averaged across
// uniformly sampled windows. logits_fn maps a window batch [N,C,H,W] of one
// video to [N,K] logits; videos are reduced in manifest order.
inline double evaluate_top1_core(const std::function<Tensor(const Tensor&)>& logits_fn,
                                 const Manifest& manifest, Split split,
                                 const FrameSourceSpec& source, int samples_per_video,
                                 int* videos_out = nullptr) {
  const auto idx = manifest.indices(split);
  if (idx.empty()) throw ContractError("evaluate: empty split");
  if (samples_per_video < 1) throw ContractError("evaluate: samples_per_video must be >= 1");
  long correct = 0;
  for (std::size_t vi : idx) {
    const auto& rec = manifest.records[vi];
    const RawClip video = read_rvid(manifest.resolve(rec));
    const auto offsets = uniform_window_offsets(video.T, source.T, samples_per_video);
    std::vector<RawClip> windows;
    windows.reserve(offsets.size());
    for (int off : offsets) windows.push_back(clip_window(video, off, source.T));
    auto frames = source.frames(windows);
    NoGradGuard ng;
    auto logits = logits_fn(stack_batch(frames));
    auto probs = softmax_rows(logits);
    const int K = logits.dim(1);
    std::vector<std::vector<float>> rows;
    for (std::size_t w = 0; w < windows.size(); ++w) {
      rows.emplace_back(probs.begin() + static_cast<std::ptrdiff_t>(w * K),
                        probs.begin() + static_cast<std::ptrdiff_t>((w + 1) * K));
    }
    if (aggregate_predict(rows) == rec.label) ++correct;
  }
  if (videos_out) *videos_out = static_cast<int>(idx.size());
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

inline double evaluate_top1(const ClassifierNet& classifier, const Manifest& manifest,
                            Split split, const FrameSourceSpec& source,
                            int samples_per_video, int* videos_out = nullptr) {
  return evaluate_top1_core(
      [&classifier](const Tensor& frames) { return classifier.forward(frames); }, manifest,
      split, source, samples_per_video, videos_out);
}

// ---------------------------------------------------------------------------
// PPM (P6) dump of frames in (-1, 1): value = round((v+1)*127.5), clamped.
// ---------------------------------------------------------------------------

inline void write_ppm(const std::string& path, const Tensor& frame) {
  if (frame.rank() != 3 || frame.dim(0) != 3) {
    throw DimensionError("write_ppm: expected a [3,H,W] frame");
  }
  const int H = frame.dim(1), W = frame.dim(2);
  detail::AtomicFile file(path);
  auto& os = file.stream();
  os << "P6\n" << W << ' ' << H << "\n255\n";
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  for (std::int64_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      const unsigned char b = denormalize_pixel(frame.data()[c * plane + i]);
      os.write(reinterpret_cast<const char*>(&b), 1);
    }
  }
  file.commit();
}

inline Tensor read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open image: " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6") throw FormatError("ppm: bad magic, expected P6");
  int W = 0, H = 0, maxval = 0;
  is >> W >> H >> maxval;
  if (!is || W < 1 || H < 1) throw FormatError("ppm: bad dimensions");
  if (maxval != 255) throw FormatError("ppm: expected 8-bit samples (maxval 255)");
  is.get();  // single whitespace after the header
  auto frame = Tensor::zeros({3, H, W});
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  std::vector<unsigned char> row(static_cast<std::size_t>(plane) * 3);
  detail::read_exact(is, row.data(), row.size(), "ppm pixels");
  for (std::int64_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      frame.data()[c * plane + i] = normalize_pixel(row[static_cast<std::size_t>(i * 3 + c)]);
    }
  }
  return frame;
}

inline void write_eval_report(const std::string& path, double top1, int videos,
                              int samples_per_video) {
  detail::AtomicFile file(path);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "top1=%.6f\nvideos=%d\nsamples_per_video=%d\n", top1,
                videos, samples_per_video);
  file.stream() << buf;
  file.commit();
}

}  // namespace ifs
