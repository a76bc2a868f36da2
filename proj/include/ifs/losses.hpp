#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "ifs/error.hpp"
#include "ifs/models.hpp"
#include "ifs/ops.hpp"
#include "ifs/tensor.hpp"

namespace ifs {

// Which task losses and regularizers participate in the joint objective.
struct TaskFlags {
  bool app = true;
  bool cat = true;
  bool mot = true;
  bool adv = true;
  bool color = true;

  std::string describe() const {
    std::string s;
    auto append = [&s](bool on, const char* name) {
      if (!on) return;
      if (!s.empty()) s += '+';
      s += name;
    };
    append(app, "app");
    append(cat, "cat");
    append(mot, "mot");
    append(adv, "adv");
    append(color, "color");
    return s.empty() ? "none" : s;
  }
};

// The five loss values of one step plus their unweighted sum. r_adv_d is
// reported alongside but never enters the total; disabled terms stay zero.
struct LossReport {
  double l_app = 0.0;
  double l_cat = 0.0;
  double l_mot = 0.0;
  double r_adv_d = 0.0;
  double r_adv_g = 0.0;
  double r_color = 0.0;
  double total = 0.0;

  static std::string csv_header() {
    return "step,lr,l_app,l_cat,l_mot,r_adv_d,r_adv_g,r_color,total";
  }
  std::string csv_line(long step, double lr) const {
    std::ostringstream os;
    os.precision(9);
    os << step << ',' << lr << ',' << l_app << ',' << l_cat << ',' << l_mot << ','
       << r_adv_d << ',' << r_adv_g << ',' << r_color << ',' << total;
    return os.str();
  }
  // Name of the first non-finite term, empty when all are finite.
  std::string first_non_finite() const {
    const std::pair<const char*, double> terms[] = {
        {"l_app", l_app},  {"l_cat", l_cat},     {"l_mot", l_mot}, {"r_adv_d", r_adv_d},
        {"r_adv_g", r_adv_g}, {"r_color", r_color}, {"total", total}};
    for (const auto& [name, v] : terms) {
      if (!std::isfinite(v)) return name;
    }
    return "";
  }
};

// Mean squared error between the key frame and its reconstruction,
// averaged over every element of the batch.
template <class S>
TensorT<S> appearance_loss(const TensorT<S>& x1_norm, const TensorT<S>& recovered) {
  if (!x1_norm.same_shape(recovered)) {
    throw DimensionError("appearance_loss: shape mismatch " + x1_norm.shape_str() +
                         " vs " + recovered.shape_str());
  }
  return mse(x1_norm, recovered);
}

// Cross entropy of the category prediction against the clip label.
template <class S>
TensorT<S> categorization_loss(const TensorT<S>& logits, const std::vector<int>& labels) {
  return cross_entropy(logits, labels);
}

// Average over P-frames of motion-map MSE plus residual-map MSE, each mean
// taken over its own channels and positions. The channel layout follows the
// motion decoder head: [m_2 (2) | r_2 (C) | m_3 (2) | ...].
template <class S>
TensorT<S> motion_loss(const TensorT<S>& predicted, const TensorT<S>& target, int T,
                       int C) {
  if (!predicted.same_shape(target)) {
    throw DimensionError("motion_loss: shape mismatch " + predicted.shape_str() + " vs " +
                         target.shape_str());
  }
  if (predicted.rank() != 4 || predicted.dim(1) != (T - 1) * (2 + C)) {
    throw DimensionError("motion_loss: expected " + std::to_string((T - 1) * (2 + C)) +
                         " channels for T=" + std::to_string(T));
  }
  TensorT<S> acc = TensorT<S>::zeros({1});
  for (int t = 0; t < T - 1; ++t) {
    const int c0 = t * (2 + C);
    auto m_hat = slice_channels(predicted, c0, c0 + 2);
    auto m_ref = slice_channels(target, c0, c0 + 2);
    auto r_hat = slice_channels(predicted, c0 + 2, c0 + 2 + C);
    auto r_ref = slice_channels(target, c0 + 2, c0 + 2 + C);
    acc = add(acc, add(mse(m_hat, m_ref), mse(r_hat, r_ref)));
  }
  return mul_scalar(acc, S(1) / static_cast<S>(T - 1));
}

// Least-squares adversarial objectives computed from already-evaluated score
// maps. With real_is_zero (the default) the discriminator drives real scores
// to 0 and fake scores to 1 and the generator drives its fake scores to 0;
// the swapped convention is the more common LSGAN labeling.
template <class S>
std::pair<TensorT<S>, TensorT<S>> adversarial_losses_from_scores(
    const TensorT<S>& d_real, const TensorT<S>& d_fake_detached,
    const TensorT<S>& d_fake_live, bool real_is_zero = true) {
  auto one_minus = [](const TensorT<S>& t) {
    return add_scalar(mul_scalar(t, S(-1)), S(1));
  };
  TensorT<S> d_loss, g_loss;
  if (real_is_zero) {
    d_loss = add(mean_all(square(d_real)), mean_all(square(one_minus(d_fake_detached))));
    g_loss = mean_all(square(d_fake_live));
  } else {
    d_loss = add(mean_all(square(one_minus(d_real))), mean_all(square(d_fake_detached)));
    g_loss = mean_all(square(one_minus(d_fake_live)));
  }
  return {d_loss, g_loss};
}

// Full adversarial pass: three discriminator evaluations. The fake frame is
// detached for the discriminator objective, and the discriminator is frozen
// for the generator objective, so the two losses touch disjoint parameters.
template <class S>
std::pair<TensorT<S>, TensorT<S>> adversarial_losses(DiscriminatorNetT<S>& D,
                                                     const TensorT<S>& x1_norm,
                                                     const TensorT<S>& x_hat,
                                                     bool real_is_zero = true) {
  auto d_real = D.forward(x1_norm);
  auto d_fake_detached = D.forward(x_hat.detach());
  TensorT<S> d_fake_live;
  {
    FreezeGuardT<S> frozen(D.params());
    d_fake_live = D.forward(x_hat);
  }
  return adversarial_losses_from_scores(d_real, d_fake_detached, d_fake_live, real_is_zero);
}

// Squared distance between per-frame channel means and the synthetic frame's
// channel means, averaged over the T frames (and over channels and batch).
// clip_means holds one [N, C] constant per frame.
template <class S>
TensorT<S> color_consistency_loss(const std::vector<TensorT<S>>& clip_means,
                                  const TensorT<S>& x_hat) {
  if (clip_means.empty()) throw ContractError("color_consistency_loss: empty clip");
  auto avg_hat = reduce_mean_spatial(x_hat);
  TensorT<S> acc = TensorT<S>::zeros({1});
  for (const auto& target : clip_means) {
    if (!target.same_shape(avg_hat)) {
      throw DimensionError("color_consistency_loss: per-frame means must be [N,C]");
    }
    acc = add(acc, mse(avg_hat, target));
  }
  return mul_scalar(acc, S(1) / static_cast<S>(clip_means.size()));
}

// Per-frame channel means of a normalized clip batch, as T constants of
// shape [N, C]; the regression targets of the color regularizer.
template <class S>
std::vector<TensorT<S>> clip_channel_means(const std::vector<TensorT<S>>& clips_norm) {
  if (clips_norm.empty()) throw ContractError("clip_channel_means: empty batch");
  const int N = static_cast<int>(clips_norm.size());
  const int T = clips_norm.front().dim(0);
  const int C = clips_norm.front().dim(1);
  const std::int64_t hw = static_cast<std::int64_t>(clips_norm.front().dim(2)) *
                          clips_norm.front().dim(3);
  std::vector<TensorT<S>> means;
  means.reserve(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    auto m = TensorT<S>::zeros({N, C});
    for (int n = 0; n < N; ++n) {
      const auto& clip = clips_norm[static_cast<std::size_t>(n)];
      for (int c = 0; c < C; ++c) {
        const S* plane = clip.data() + (static_cast<std::int64_t>(t) * C + c) * hw;
        S acc = S(0);
        for (std::int64_t i = 0; i < hw; ++i) acc += plane[i];
        m.data()[n * C + c] = acc / static_cast<S>(hw);
      }
    }
    means.push_back(std::move(m));
  }
  return means;
}

// Unweighted sum of the enabled terms; the adversarial contribution is the
// generator-side loss.
template <class S>
TensorT<S> total_loss(const TensorT<S>& l_app, const TensorT<S>& l_cat,
                      const TensorT<S>& l_mot, const TensorT<S>& r_adv_g,
                      const TensorT<S>& r_color, const TaskFlags& flags) {
  TensorT<S> acc = TensorT<S>::zeros({1});
  if (flags.app) acc = add(acc, l_app);
  if (flags.cat) acc = add(acc, l_cat);
  if (flags.mot) acc = add(acc, l_mot);
  if (flags.adv) acc = add(acc, r_adv_g);
  if (flags.color) acc = add(acc, r_color);
  return acc;
}

}  // namespace ifs
