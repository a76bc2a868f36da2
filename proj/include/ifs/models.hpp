#pragma once

#include <array>
#include <string>
#include <vector>

#include "ifs/codec.hpp"
#include "ifs/dataset.hpp"
#include "ifs/error.hpp"
#include "ifs/ops.hpp"
#include "ifs/optim.hpp"
#include "ifs/rng.hpp"
#include "ifs/tensor.hpp"

namespace ifs {

// Scale knobs shared by all five networks. The reference configuration is
// base_width 32 with 9 residual blocks at 224x224; the toy default keeps the
// widths and shrinks the trunk and resolution.
struct ArchConfig {
  int base_width = 32;
  int n_res_blocks = 3;
  int input_channels = 3;
  int output_channels = 3;
  int H = 32;
  int W = 32;

  void validate_encdec() const {
    if (base_width < 1 || n_res_blocks < 1) {
      throw ConfigError("arch: base_width and n_res_blocks must be >= 1");
    }
    if (H % 4 != 0 || W % 4 != 0) {
      throw ConfigError("arch: H and W must be divisible by 4 (two stride-2 stages)");
    }
  }
  void validate_encoder() const {
    if (H % 32 != 0 || W % 32 != 0) {
      throw ConfigError("arch: H and W must be divisible by 32 (five stride-2 stages)");
    }
  }
};

// Weight init follows the cited image-to-image generator: N(0, 0.02) for
// conv/linear weights, zero biases, unit gains.
inline constexpr double kInitStd = 0.02;

template <class S>
struct Conv2dLayerT {
  ParameterT<S> weight, bias;
  int stride = 1;
  int pad = 0;
  bool reflect = false;

  void init(const std::string& name, int cin, int cout, int k, int stride_, int pad_,
            bool reflect_, Rng& rng) {
    stride = stride_;
    pad = pad_;
    reflect = reflect_;
    weight.init(name + ".weight",
                TensorT<S>::randn({cout, cin, k, k}, rng, static_cast<S>(kInitStd)));
    bias.init(name + ".bias", TensorT<S>::zeros({cout}));
  }
  TensorT<S> forward(const TensorT<S>& x) const {
    if (reflect && pad > 0) {
      return conv2d(reflection_pad2d(x, pad), weight.value, bias.value, stride, 0);
    }
    return conv2d(x, weight.value, bias.value, stride, pad);
  }
  void collect(std::vector<ParameterT<S>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

template <class S>
struct ConvTranspose2dLayerT {
  ParameterT<S> weight, bias;
  int stride = 1;
  int pad = 0;

  void init(const std::string& name, int cin, int cout, int k, int stride_, int pad_,
            Rng& rng) {
    stride = stride_;
    pad = pad_;
    weight.init(name + ".weight",
                TensorT<S>::randn({cin, cout, k, k}, rng, static_cast<S>(kInitStd)));
    bias.init(name + ".bias", TensorT<S>::zeros({cout}));
  }
  TensorT<S> forward(const TensorT<S>& x) const {
    return conv_transpose2d(x, weight.value, bias.value, stride, pad);
  }
  void collect(std::vector<ParameterT<S>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

template <class S>
struct InstanceNorm2dT {
  ParameterT<S> gamma, beta;
  S eps = static_cast<S>(1e-5);

  void init(const std::string& name, int channels) {
    gamma.init(name + ".gamma", TensorT<S>::filled({channels}, S(1)));
    beta.init(name + ".beta", TensorT<S>::zeros({channels}));
  }
  TensorT<S> forward(const TensorT<S>& x) const {
    return instance_norm(x, gamma.value, beta.value, eps);
  }
  void collect(std::vector<ParameterT<S>*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

template <class S>
struct LinearLayerT {
  ParameterT<S> weight, bias;

  void init(const std::string& name, int fin, int fout, Rng& rng) {
    weight.init(name + ".weight",
                TensorT<S>::randn({fout, fin}, rng, static_cast<S>(kInitStd)));
    bias.init(name + ".bias", TensorT<S>::zeros({fout}));
  }
  TensorT<S> forward(const TensorT<S>& x) const {
    return linear(x, weight.value, bias.value);
  }
  void collect(std::vector<ParameterT<S>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

// [3x3; 3x3] residual block at constant width, zero padding, skip add with
// no activation after the sum.
template <class S>
struct ResBlockT {
  Conv2dLayerT<S> conv1, conv2;
  InstanceNorm2dT<S> norm1, norm2;

  void init(const std::string& name, int width, Rng& rng) {
    conv1.init(name + ".conv1", width, width, 3, 1, 1, false, rng);
    norm1.init(name + ".norm1", width);
    conv2.init(name + ".conv2", width, width, 3, 1, 1, false, rng);
    norm2.init(name + ".norm2", width);
  }
  TensorT<S> forward(const TensorT<S>& x) const {
    auto h = relu(norm1.forward(conv1.forward(x)));
    return add(x, norm2.forward(conv2.forward(h)));
  }
  void collect(std::vector<ParameterT<S>*>& out) {
    conv1.collect(out);
    norm1.collect(out);
    conv2.collect(out);
    norm2.collect(out);
  }
};

// Encoder-decoder trunk shared by the generator F and the two decoders:
// 7x7 stem (reflection pad), two stride-2 down-scales, residual blocks, two
// stride-1/2 up-scales, 7x7 projection head with tanh and no normalization.
template <class S>
struct EncDecNetT {
  ArchConfig cfg;
  Conv2dLayerT<S> stem;
  InstanceNorm2dT<S> stem_norm;
  Conv2dLayerT<S> down1, down2;
  InstanceNorm2dT<S> down1_norm, down2_norm;
  std::vector<ResBlockT<S>> res;
  ConvTranspose2dLayerT<S> up1, up2;
  InstanceNorm2dT<S> up1_norm, up2_norm;
  Conv2dLayerT<S> head;

  void init(const std::string& prefix, const ArchConfig& config, Rng& rng) {
    cfg = config;
    cfg.validate_encdec();
    const int w = cfg.base_width;
    stem.init(prefix + ".conv1", cfg.input_channels, w, 7, 1, 3, /*reflect=*/true, rng);
    stem_norm.init(prefix + ".norm1", w);
    down1.init(prefix + ".conv2", w, 2 * w, 4, 2, 1, false, rng);
    down1_norm.init(prefix + ".norm2", 2 * w);
    down2.init(prefix + ".conv3", 2 * w, 4 * w, 4, 2, 1, false, rng);
    down2_norm.init(prefix + ".norm3", 4 * w);
    res.resize(static_cast<std::size_t>(cfg.n_res_blocks));
    for (int i = 0; i < cfg.n_res_blocks; ++i) {
      res[static_cast<std::size_t>(i)].init(prefix + ".res" + std::to_string(i + 1), 4 * w,
                                            rng);
    }
    up1.init(prefix + ".up1", 4 * w, 2 * w, 4, 2, 1, rng);
    up1_norm.init(prefix + ".upnorm1", 2 * w);
    up2.init(prefix + ".up2", 2 * w, w, 4, 2, 1, rng);
    up2_norm.init(prefix + ".upnorm2", w);
    head.init(prefix + ".head", w, cfg.output_channels, 7, 1, 3, false, rng);
  }

  // Feature map before the projection head ([N, base_width, H, W]).
  TensorT<S> forward_trunk(const TensorT<S>& x) const {
    if (x.rank() != 4) throw DimensionError("encdec: expected NCHW input");
    if (x.dim(1) != cfg.input_channels) {
      throw DimensionError("encdec: expected " + std::to_string(cfg.input_channels) +
                           " input channels, got " + std::to_string(x.dim(1)));
    }
    if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0) {
      throw ConfigError("encdec: spatial extents must be divisible by 4");
    }
    auto h = relu(stem_norm.forward(stem.forward(x)));
    h = relu(down1_norm.forward(down1.forward(h)));
    h = relu(down2_norm.forward(down2.forward(h)));
    for (const auto& block : res) h = block.forward(h);
    h = relu(up1_norm.forward(up1.forward(h)));
    h = relu(up2_norm.forward(up2.forward(h)));
    return h;
  }

  // Output in (-1, 1) with shape [N, output_channels, H, W].
  TensorT<S> forward(const TensorT<S>& x) const { return tanh(head.forward(forward_trunk(x))); }

  std::vector<ParameterT<S>*> params() {
    std::vector<ParameterT<S>*> out;
    stem.collect(out);
    stem_norm.collect(out);
    down1.collect(out);
    down1_norm.collect(out);
    down2.collect(out);
    down2_norm.collect(out);
    for (auto& block : res) block.collect(out);
    up1.collect(out);
    up1_norm.collect(out);
    up2.collect(out);
    up2_norm.collect(out);
    head.collect(out);
    return out;
  }
};

// Five 4x4 stride-2 convolutions (widths w..16w) with leaky-relu(0.2).
// Normalization is per-layer optional: the discriminator skips its first
// layer, and any layer whose output collapses to 1x1 is skipped as well
// (instance statistics are undefined there).
template <class S>
struct EncoderBackboneT {
  ArchConfig cfg;
  std::array<Conv2dLayerT<S>, 5> convs;
  std::array<InstanceNorm2dT<S>, 5> norms;
  std::array<bool, 5> has_norm{};

  void init(const std::string& prefix, const ArchConfig& config, bool norm_on_first,
            Rng& rng) {
    cfg = config;
    cfg.validate_encoder();
    const int w = cfg.base_width;
    const int widths[6] = {cfg.input_channels, w, 2 * w, 4 * w, 8 * w, 16 * w};
    int h = cfg.H, wd = cfg.W;
    for (int i = 0; i < 5; ++i) {
      convs[static_cast<std::size_t>(i)].init(prefix + ".conv" + std::to_string(i + 1),
                                              widths[i], widths[i + 1], 4, 2, 1, false, rng);
      h /= 2;
      wd /= 2;
      const bool want = (i > 0 || norm_on_first) && h * wd >= 2;
      has_norm[static_cast<std::size_t>(i)] = want;
      if (want) {
        norms[static_cast<std::size_t>(i)].init(prefix + ".norm" + std::to_string(i + 1),
                                                widths[i + 1]);
      }
    }
  }

  // [N, 16w, H/32, W/32]
  TensorT<S> forward(const TensorT<S>& x) const {
    if (x.rank() != 4) throw DimensionError("encoder: expected NCHW input");
    if (x.dim(1) != cfg.input_channels) {
      throw DimensionError("encoder: expected " + std::to_string(cfg.input_channels) +
                           " input channels, got " + std::to_string(x.dim(1)));
    }
    if (x.dim(2) % 32 != 0 || x.dim(3) % 32 != 0) {
      throw ConfigError("encoder: spatial extents must be divisible by 32");
    }
    auto h = x;
    for (int i = 0; i < 5; ++i) {
      h = convs[static_cast<std::size_t>(i)].forward(h);
      if (has_norm[static_cast<std::size_t>(i)]) {
        h = norms[static_cast<std::size_t>(i)].forward(h);
      }
      h = leaky_relu(h, static_cast<S>(0.2));
    }
    return h;
  }

  void collect(std::vector<ParameterT<S>*>& out) {
    for (int i = 0; i < 5; ++i) {
      convs[static_cast<std::size_t>(i)].collect(out);
      if (has_norm[static_cast<std::size_t>(i)]) {
        norms[static_cast<std::size_t>(i)].collect(out);
      }
    }
  }
};

// Category head: global average pooling plus an affine map to K logits.
// Softmax lives in the loss, not here.
template <class S>
struct ClassifierNetT {
  EncoderBackboneT<S> backbone;
  LinearLayerT<S> fc;
  int num_classes = 0;

  void init(const std::string& prefix, const ArchConfig& config, int classes, Rng& rng) {
    num_classes = classes;
    backbone.init(prefix, config, /*norm_on_first=*/true, rng);
    fc.init(prefix + ".fc", 16 * config.base_width, classes, rng);
  }
  TensorT<S> forward(const TensorT<S>& frame) const {
    return fc.forward(reduce_mean_spatial(backbone.forward(frame)));
  }
  std::vector<ParameterT<S>*> params() {
    std::vector<ParameterT<S>*> out;
    backbone.collect(out);
    fc.collect(out);
    return out;
  }
};

// Patch scores: 1x1 projection of the encoder map to one channel, left
// unbounded; the LSGAN objective averages over the map.
template <class S>
struct DiscriminatorNetT {
  EncoderBackboneT<S> backbone;
  Conv2dLayerT<S> out_conv;

  void init(const std::string& prefix, const ArchConfig& config, Rng& rng) {
    backbone.init(prefix, config, /*norm_on_first=*/false, rng);
    out_conv.init(prefix + ".out", 16 * config.base_width, 1, 1, 1, 0, false, rng);
  }
  TensorT<S> forward(const TensorT<S>& frame) const {
    return out_conv.forward(backbone.forward(frame));
  }
  std::vector<ParameterT<S>*> params() {
    std::vector<ParameterT<S>*> out;
    backbone.collect(out);
    out_conv.collect(out);
    return out;
  }
};

template <class S>
using GeneratorNetT = EncDecNetT<S>;

using GeneratorNet = GeneratorNetT<float>;
using EncDecNet = EncDecNetT<float>;
using ClassifierNet = ClassifierNetT<float>;
using DiscriminatorNet = DiscriminatorNetT<float>;

template <class S>
std::vector<std::string> param_names(std::vector<ParameterT<S>*> params) {
  std::vector<std::string> names;
  names.reserve(params.size());
  for (auto* p : params) names.push_back(p->name);
  return names;
}

// ---------------------------------------------------------------------------
// Network input assembly from the compressed representation
// ---------------------------------------------------------------------------

enum class InputMode { compressed, raw, motion_only };

inline const char* input_mode_name(InputMode m) {
  switch (m) {
    case InputMode::compressed: return "compressed";
    case InputMode::raw: return "raw";
    default: return "motion_only";
  }
}

inline InputMode parse_input_mode(const std::string& s) {
  if (s == "compressed") return InputMode::compressed;
  if (s == "raw") return InputMode::raw;
  if (s == "motion_only") return InputMode::motion_only;
  throw ConfigError("unknown input mode '" + s + "'");
}

inline int assembled_channels(int T, int C, InputMode mode) {
  if (mode == InputMode::raw) return T * C;
  return C + (T - 1) * (2 + C);
}

namespace detail {

// Fills dst with the dense motion (2 ch, / search_range) and residual
// (C ch, / 255) planes of one P-frame.
inline void fill_motion_residual(const CompressedClip& c, int p_index, float* dst) {
  const int H = c.height, W = c.width, C = c.channels;
  const auto& pf = c.p_frames[static_cast<std::size_t>(p_index)];
  const Tensor dense = motion_to_dense(pf.motion, static_cast<float>(c.search_range));
  std::copy(dense.data(), dense.data() + 2 * H * W, dst);
  float* rdst = dst + 2 * static_cast<std::int64_t>(H) * W;
  for (std::size_t i = 0; i < pf.residual.values.size(); ++i) {
    rdst[i] = static_cast<float>(pf.residual.values[i]) / 255.0f;
  }
}

}  // namespace detail

// Channel-stacked network input for one clip: [x1 | m_2 r_2 | ... | m_T r_T]
// in compressed mode, T normalized frames in raw mode; motion_only zeroes
// the x1 channels. All planes lie in [-1, 1].
inline Tensor assemble_input(const CompressedClip& c, InputMode mode) {
  const int H = c.height, W = c.width, C = c.channels, T = c.T;
  if (static_cast<int>(c.p_frames.size()) != T - 1) {
    throw ContractError("assemble_input: compressed clip with inconsistent T");
  }
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  if (mode == InputMode::raw) {
    const RawClip clip = reconstruct_clip(c);
    auto out = Tensor::zeros({T * C, H, W});
    for (std::size_t i = 0; i < clip.pixels.size(); ++i) {
      out.data()[i] = normalize_pixel(clip.pixels[i]);
    }
    return out;
  }
  auto out = Tensor::zeros({assembled_channels(T, C, mode), H, W});
  float* dst = out.data();
  if (mode == InputMode::compressed) {
    for (std::size_t i = 0; i < c.i_frame.pixels.size(); ++i) {
      dst[i] = normalize_pixel(c.i_frame.pixels[i]);
    }
  }
  for (int t = 0; t < T - 1; ++t) {
    detail::fill_motion_residual(c, t, dst + (C + t * (2 + C)) * plane);
  }
  return out;
}

// Regression target for the motion decoder: the non-key channels of the
// compressed stacking, [(T-1)(2+C), H, W].
inline Tensor motion_residual_target(const CompressedClip& c) {
  const int H = c.height, W = c.width, C = c.channels, T = c.T;
  auto out = Tensor::zeros({(T - 1) * (2 + C), H, W});
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  for (int t = 0; t < T - 1; ++t) {
    detail::fill_motion_residual(c, t, out.data() + t * (2 + C) * plane);
  }
  return out;
}

// Stacks same-shaped [C,H,W] tensors into one [N,C,H,W] leaf.
inline Tensor stack_batch(const std::vector<Tensor>& items) {
  if (items.empty()) throw ContractError("stack_batch: empty batch");
  const auto& s = items.front().shape();
  std::vector<int> shape{static_cast<int>(items.size())};
  shape.insert(shape.end(), s.begin(), s.end());
  auto out = Tensor::zeros(shape);
  const std::int64_t stride = items.front().numel();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != s) {
      throw ContractError("stack_batch: mixed shapes across the batch");
    }
    std::copy(items[i].data(), items[i].data() + stride,
              out.data() + static_cast<std::int64_t>(i) * stride);
  }
  return out;
}

}  // namespace ifs
