// Central finite-difference checks for every differentiable operator,
// 64-bit mode, small random instances.
#include <catch2/catch_amalgamated.hpp>

#include "ifs/ops.hpp"
#include "testutil.hpp"

using ifs::Rng;
using ifs::TensorT;
using testutil::check_gradients;
using testutil::project_to_scalar;
using testutil::random_tensor;

using DVec = std::vector<ifs::TensorT<double>>;

namespace {
constexpr int kInstances = 20;
}

TEST_CASE("gradcheck: elementwise and reductions", "[gradcheck]") {
  Rng rng(1);
  for (int t = 0; t < kInstances; ++t) {
    const std::uint64_t salt = rng.next_u64();
    auto x = random_tensor<double>({2, 4}, rng);
    // keep relu/leaky inputs away from the kink
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      if (std::abs(x.data()[i]) < 0.1) x.data()[i] += 0.25;
    }
    auto y = random_tensor<double>({2, 4}, rng);

    auto run1 = [&](auto op) {
      auto r = check_gradients(
          [&](DVec& in) { return project_to_scalar(op(in[0]), salt); }, {x});
      INFO(r.detail);
      CHECK(r.ok);
    };
    run1([](const ifs::TensorT<double>& t) { return ifs::relu(t); });
    run1([](const ifs::TensorT<double>& t) { return ifs::leaky_relu(t, 0.2); });
    run1([](const ifs::TensorT<double>& t) { return ifs::tanh(t); });
    run1([](const ifs::TensorT<double>& t) { return ifs::square(t); });
    run1([](const ifs::TensorT<double>& t) { return ifs::add_scalar(t, 1.7); });
    run1([](const ifs::TensorT<double>& t) { return ifs::mul_scalar(t, -2.3); });

    auto run2 = [&](auto op) {
      auto r = check_gradients(
          [&](DVec& in) { return project_to_scalar(op(in[0], in[1]), salt); }, {x, y});
      INFO(r.detail);
      CHECK(r.ok);
    };
    run2([](const ifs::TensorT<double>& a, const ifs::TensorT<double>& b) { return ifs::add(a, b); });
    run2([](const ifs::TensorT<double>& a, const ifs::TensorT<double>& b) { return ifs::sub(a, b); });
    run2([](const ifs::TensorT<double>& a, const ifs::TensorT<double>& b) { return ifs::mul(a, b); });

    auto r1 = check_gradients([](DVec& in) { return ifs::sum_all(in[0]); }, {x});
    CHECK(r1.ok);
    auto r2 = check_gradients([](DVec& in) { return ifs::mean_all(in[0]); }, {x});
    CHECK(r2.ok);
  }
}

TEST_CASE("gradcheck: reduce_mean_spatial, slice, reflection pad", "[gradcheck]") {
  Rng rng(2);
  for (int t = 0; t < kInstances; ++t) {
    const std::uint64_t salt = rng.next_u64();
    auto x = random_tensor<double>({2, 3, 3, 4}, rng);
    {
      auto r = check_gradients(
          [&](DVec& in) { return project_to_scalar(ifs::reduce_mean_spatial(in[0]), salt); },
          {x});
      INFO(r.detail);
      CHECK(r.ok);
    }
    {
      auto r = check_gradients(
          [&](DVec& in) { return project_to_scalar(ifs::slice_channels(in[0], 1, 3), salt); },
          {x});
      INFO(r.detail);
      CHECK(r.ok);
    }
    {
      auto r = check_gradients(
          [&](DVec& in) { return project_to_scalar(ifs::reflection_pad2d(in[0], 2), salt); },
          {x});
      INFO(r.detail);
      CHECK(r.ok);
    }
  }
}

TEST_CASE("gradcheck: conv2d", "[gradcheck]") {
  Rng rng(3);
  for (int t = 0; t < kInstances; ++t) {
    const std::uint64_t salt = rng.next_u64();
    const int stride = 1 + static_cast<int>(rng.next_int(0, 1));
    const int pad = static_cast<int>(rng.next_int(0, 1));
    auto x = random_tensor<double>({2, 2, 4, 4}, rng);
    auto w = random_tensor<double>({3, 2, 3, 3}, rng);
    auto b = random_tensor<double>({3}, rng);
    auto r = check_gradients(
        [&](DVec& in) {
          return project_to_scalar(ifs::conv2d(in[0], in[1], in[2], stride, pad), salt);
        },
        {x, w, b});
    INFO("stride=" << stride << " pad=" << pad << " " << r.detail);
    CHECK(r.ok);
  }
}

TEST_CASE("gradcheck: conv_transpose2d", "[gradcheck]") {
  Rng rng(4);
  for (int t = 0; t < kInstances; ++t) {
    const std::uint64_t salt = rng.next_u64();
    const int stride = 1 + static_cast<int>(rng.next_int(0, 1));
    const int pad = static_cast<int>(rng.next_int(0, 1));
    auto x = random_tensor<double>({2, 3, 3, 3}, rng);
    auto w = random_tensor<double>({3, 2, 3, 3}, rng);
    auto b = random_tensor<double>({2}, rng);
    auto r = check_gradients(
        [&](DVec& in) {
          return project_to_scalar(ifs::conv_transpose2d(in[0], in[1], in[2], stride, pad),
                                   salt);
        },
        {x, w, b});
    INFO("stride=" << stride << " pad=" << pad << " " << r.detail);
    CHECK(r.ok);
  }
}

TEST_CASE("gradcheck: instance_norm", "[gradcheck]") {
  Rng rng(5);
  for (int t = 0; t < kInstances; ++t) {
    const std::uint64_t salt = rng.next_u64();
    auto x = random_tensor<double>({2, 2, 3, 3}, rng);
    auto gamma = random_tensor<double>({2}, rng);
    auto beta = random_tensor<double>({2}, rng);
    auto r = check_gradients(
        [&](DVec& in) {
          return project_to_scalar(ifs::instance_norm(in[0], in[1], in[2], 1e-5), salt);
        },
        {x, gamma, beta});
    INFO(r.detail);
    CHECK(r.ok);
  }
}

TEST_CASE("gradcheck: linear and cross entropy", "[gradcheck]") {
  Rng rng(6);
  for (int t = 0; t < kInstances; ++t) {
    const std::uint64_t salt = rng.next_u64();
    auto x = random_tensor<double>({3, 4}, rng);
    auto w = random_tensor<double>({2, 4}, rng);
    auto b = random_tensor<double>({2}, rng);
    auto r = check_gradients(
        [&](DVec& in) {
          return project_to_scalar(ifs::linear(in[0], in[1], in[2]), salt);
        },
        {x, w, b});
    INFO(r.detail);
    CHECK(r.ok);

    auto logits = random_tensor<double>({3, 4}, rng, 2.0);
    std::vector<int> labels{static_cast<int>(rng.next_int(0, 3)),
                            static_cast<int>(rng.next_int(0, 3)),
                            static_cast<int>(rng.next_int(0, 3))};
    auto r2 = check_gradients(
        [&](DVec& in) { return ifs::cross_entropy(in[0], labels); }, {logits});
    INFO(r2.detail);
    CHECK(r2.ok);
  }
}

TEST_CASE("gradcheck: mse composite", "[gradcheck]") {
  Rng rng(7);
  for (int t = 0; t < kInstances; ++t) {
    auto a = random_tensor<double>({2, 3}, rng);
    auto b = random_tensor<double>({2, 3}, rng);
    auto r = check_gradients([](DVec& in) { return ifs::mse(in[0], in[1]); }, {a, b});
    INFO(r.detail);
    CHECK(r.ok);
  }
}
