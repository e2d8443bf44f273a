#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>

#include "doctest.h"
#include "stsgr/checkpoint.hpp"
#include "stsgr/tensor.hpp"

using namespace stsgr;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, bool rg = true) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(r * c);
  for (auto& x : v) x = dist(rng);
  return Tensor({r, c}, std::move(v), rg);
}

}  // namespace

TEST_CASE("matmul basics") {
  Tensor id = Tensor::matrix(2, 2, {1, 0, 0, 1});
  Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  Tensor out = matmul(id, a);
  for (std::size_t i = 0; i < 4; ++i) CHECK(out.values()[i] == a.values()[i]);

  Tensor row = Tensor::matrix(1, 2, {1, 2});
  Tensor col = Tensor::matrix(2, 1, {3, 4});
  CHECK(matmul(row, col).scalar_value() == doctest::Approx(11.0).epsilon(1e-12));

  CHECK_THROWS_WITH_AS(matmul(row, row), doctest::Contains("inner dimensions"),
                       std::invalid_argument);
}

TEST_CASE("matmul gradient matches central differences") {
  std::mt19937_64 rng(11);
  Tensor a = random_tensor(3, 4, rng);
  Tensor b = random_tensor(4, 2, rng);
  std::vector<NamedParam> params{{"a", a}, {"b", b}};
  auto report = finite_diff_check([&] { return sum_all(matmul(a, b)); }, params);
  CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("softmax_rows values") {
  Tensor u = softmax_rows(Tensor::matrix(1, 3, {0, 0, 0}));
  for (double v : u.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor s = softmax_rows(Tensor::matrix(1, 2, {1000, 0}));
  CHECK(s.values()[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(s.values()[1] == doctest::Approx(0.0).epsilon(1e-9));

  CHECK_THROWS_AS(softmax_rows(Tensor::matrix(1, 2, {std::nan(""), 0})),
                  std::invalid_argument);
}

TEST_CASE("softmax_rows rows sum to 1 and entries lie in (0,1]") {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor(6, 5, rng, false);
  Tensor y = softmax_rows(x);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < y.cols(); ++j) {
      const double v = y.at(i, j);
      CHECK(v > 0.0);
      CHECK(v <= 1.0);
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("softmax gradient vs finite differences") {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor(2, 3, rng);
  Tensor w = random_tensor(2, 3, rng, false);  // mixes rows so grads are nontrivial
  std::vector<NamedParam> params{{"x", x}};
  auto report =
      finite_diff_check([&] { return sum_all(mul(softmax_rows(x), w)); }, params);
  CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("elementwise definitions") {
  Tensor r = relu(Tensor::matrix(1, 2, {-1, 2}));
  CHECK(r.values()[0] == 0.0);
  CHECK(r.values()[1] == 2.0);
  CHECK(tanh(Tensor::scalar(0.0)).scalar_value() == 0.0);
  CHECK(leaky_relu(Tensor::scalar(-1.0), 0.2).scalar_value() ==
        doctest::Approx(-0.2).epsilon(1e-15));
}

TEST_CASE("concat and slicing") {
  Tensor a = Tensor::matrix(2, 1, {1, 2});
  Tensor b = Tensor::matrix(2, 1, {3, 4});
  Tensor c = concat({a, b}, 1);
  CHECK(c.at(0, 0) == 1.0);
  CHECK(c.at(0, 1) == 3.0);
  CHECK(c.at(1, 0) == 2.0);
  CHECK(c.at(1, 1) == 4.0);

  CHECK_THROWS_AS(concat(std::span<const Tensor>{}, 0), std::invalid_argument);
  Tensor wide = Tensor::matrix(1, 3, {1, 2, 3});
  CHECK_THROWS_WITH_AS(concat({a, wide}, 1), doctest::Contains("inconsistent"),
                       std::invalid_argument);
}

TEST_CASE("concat then split is the identity") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor a = random_tensor(3, 2 + trial, rng, false);
    Tensor b = random_tensor(3, 4, rng, false);
    Tensor joined = concat({a, b}, 1);
    Tensor a2 = slice_cols(joined, 0, a.cols());
    Tensor b2 = slice_cols(joined, a.cols(), joined.cols());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a2.values()[i] == a.values()[i]);
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(b2.values()[i] == b.values()[i]);

    Tensor joined0 = concat({a, a}, 0);
    Tensor top = slice_rows(joined0, 0, 3);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(top.values()[i] == a.values()[i]);
  }
}

TEST_CASE("max_over identity and subgradient routing") {
  std::mt19937_64 rng(23);
  Tensor single = random_tensor(2, 3, rng);
  Tensor m = max_over({single});
  for (std::size_t i = 0; i < single.size(); ++i)
    CHECK(m.values()[i] == single.values()[i]);

  // brute-force argmax oracle on distinct entries
  std::vector<Tensor> xs;
  for (int t = 0; t < 3; ++t) xs.push_back(random_tensor(2, 4, rng));
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor out = max_over(std::span<const Tensor>(xs));
    tape.backward(sum_all(out));
  }
  for (std::size_t e = 0; e < 8; ++e) {
    std::size_t argmax = 0;
    for (std::size_t t = 1; t < 3; ++t)
      if (xs[t].values()[e] > xs[argmax].values()[e]) argmax = t;
    for (std::size_t t = 0; t < 3; ++t) {
      const double expected = t == argmax ? 1.0 : 0.0;
      CHECK(xs[t].grad()[e] == expected);
    }
  }
}

TEST_CASE("backward on simple losses") {
  Tensor w = Tensor::matrix(2, 2, {0.3, -0.4, 0.9, 1.5}, true);
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum_all(w));
  }
  for (double g : w.grad()) CHECK(g == 1.0);

  w.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(scale(sum_all(mul(w, w)), 0.5));
  }
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(w.grad()[i] == doctest::Approx(w.values()[i]).epsilon(1e-15));
}

TEST_CASE("backward rejects non-scalar and detached losses") {
  Tensor w = Tensor::matrix(2, 2, {1, 2, 3, 4}, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = mul(w, w);
  CHECK_THROWS_WITH_AS(tape.backward(y), doctest::Contains("scalar"),
                       std::invalid_argument);
  Tensor detached = Tensor::scalar(1.0);
  CHECK_THROWS_WITH_AS(tape.backward(detached), doctest::Contains("not recorded"),
                       std::invalid_argument);
}

TEST_CASE("backward is deterministic for a fixed seed") {
  auto run = [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor a = random_tensor(4, 4, rng);
    Tensor b = random_tensor(4, 4, rng);
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum_all(softmax_rows(matmul(tanh(a), b)));
    tape.backward(loss);
    std::vector<double> grads(a.grad().begin(), a.grad().end());
    grads.insert(grads.end(), b.grad().begin(), b.grad().end());
    return grads;
  };
  auto g1 = run(99);
  auto g2 = run(99);
  REQUIRE(g1.size() == g2.size());
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("finite_diff_check on a linear layer") {
  std::mt19937_64 rng(31);
  Tensor w = random_tensor(4, 3, rng);
  Tensor b = random_tensor(1, 3, rng);
  Tensor x = random_tensor(2, 4, rng, false);
  std::vector<NamedParam> params{{"w", w}, {"b", b}};
  auto report =
      finite_diff_check([&] { return sum_all(add_row_bias(matmul(x, w), b)); }, params);
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("finite_diff_check on a softmax cross-entropy head") {
  std::mt19937_64 rng(37);
  Tensor w = random_tensor(4, 5, rng);
  Tensor x = random_tensor(3, 4, rng, false);
  Tensor onehot = Tensor::matrix(3, 5, {0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0});
  std::vector<NamedParam> params{{"w", w}};
  auto f = [&] {
    Tensor p = softmax_rows(matmul(x, w));
    return scale(sum_all(mul(onehot, log_clamped(p))), -1.0 / 3.0);
  };
  auto report = finite_diff_check(f, params);
  CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("finite_diff_check is deterministic in eval mode") {
  std::mt19937_64 rng(41);
  Tensor w = random_tensor(3, 3, rng);
  Tensor x = random_tensor(2, 3, rng, false);
  std::vector<NamedParam> params{{"w", w}};
  auto f = [&] {
    std::mt19937_64 drop_rng(7);  // eval mode: dropout is the identity
    return sum_all(dropout(tanh(matmul(x, w)), 0.5, drop_rng, false));
  };
  auto r1 = finite_diff_check(f, params);
  auto r2 = finite_diff_check(f, params);
  REQUIRE(r1.entries.size() == r2.entries.size());
  CHECK(r1.max_rel_err == r2.max_rel_err);
  CHECK(r1.entries[0].max_abs_err == r2.entries[0].max_abs_err);
}

TEST_CASE("every differentiable op passes finite differences on [-1,1] inputs") {
  std::mt19937_64 rng(53);
  Tensor a = random_tensor(3, 4, rng);
  Tensor b = random_tensor(3, 4, rng);
  Tensor w = random_tensor(4, 3, rng);
  Tensor bias = random_tensor(1, 4, rng);
  Tensor gamma = random_tensor(1, 4, rng);
  Tensor beta = random_tensor(1, 4, rng);
  Tensor mixer = random_tensor(3, 4, rng, false);

  struct Case {
    const char* name;
    std::function<Tensor()> f;
  };
  const std::vector<std::size_t> gather_idx{2, 0, 2};
  Mask mask;
  mask.rows = 3;
  mask.cols = 4;
  mask.allowed = {1, 1, 0, 1, 0, 1, 1, 1, 1, 0, 1, 1};
  const std::vector<double> bce_targets{1, 0, 0, 1};
  std::vector<Case> cases = {
      {"matmul", [&] { return sum_all(matmul(a, w)); }},
      {"transpose", [&] { return sum_all(mul(transpose(a), transpose(b))); }},
      {"add", [&] { return sum_all(mul(add(a, b), mixer)); }},
      {"sub", [&] { return sum_all(mul(sub(a, b), mixer)); }},
      {"mul", [&] { return sum_all(mul(a, b)); }},
      {"scale", [&] { return sum_all(scale(a, -1.7)); }},
      {"add_row_bias", [&] { return sum_all(mul(add_row_bias(a, bias), mixer)); }},
      {"concat0", [&] { return sum_all(mul(concat({a, b}, 0), concat({mixer, mixer}, 0))); }},
      {"concat1", [&] { return sum_all(mul(concat({a, b}, 1), concat({mixer, mixer}, 1))); }},
      {"slice_rows", [&] { return sum_all(slice_rows(a, 1, 3)); }},
      {"slice_cols", [&] { return sum_all(slice_cols(a, 1, 4)); }},
      {"gather_rows", [&] { return sum_all(gather_rows(a, gather_idx)); }},
      {"softmax", [&] { return sum_all(mul(softmax_rows(a), mixer)); }},
      {"masked_softmax",
       [&] { return sum_all(mul(masked_softmax_rows(a, mask), mixer)); }},
      {"relu", [&] { return sum_all(relu(a)); }},
      {"leaky_relu", [&] { return sum_all(leaky_relu(a, 0.2)); }},
      {"tanh", [&] { return sum_all(stsgr::tanh(a)); }},
      {"sigmoid", [&] { return sum_all(sigmoid(a)); }},
      {"log_clamped", [&] { return sum_all(log_clamped(add(sigmoid(a), b))); }},
      {"max_over", [&] { return sum_all(max_over({a, b})); }},
      {"mean_rows", [&] { return sum_all(mean_rows(a)); }},
      {"max_rows", [&] { return sum_all(max_rows(a)); }},
      {"layer_norm",
       [&] { return sum_all(mul(layer_norm_rows(a, gamma, beta), mixer)); }},
      {"bce_with_logits",
       [&] { return bce_with_logits_mean(slice_rows(a, 0, 1), bce_targets); }},
      {"dropout_train", [&] {
         std::mt19937_64 drop_rng(1234);
         return sum_all(dropout(a, 0.4, drop_rng, true));
       }},
  };
  for (auto& c : cases) {
    std::vector<NamedParam> params{{"a", a}, {"b", b}, {"w", w}, {"bias", bias},
                                   {"gamma", gamma}, {"beta", beta}};
    auto report = finite_diff_check(c.f, params);
    INFO(c.name);
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("masked softmax zeroes masked entries exactly") {
  std::mt19937_64 rng(61);
  Tensor x = random_tensor(4, 4, rng, false);
  Mask mask = causal_mask(4);
  Tensor y = masked_softmax_rows(x, mask);
  for (std::size_t i = 0; i < 4; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      if (j > i) CHECK(y.at(i, j) == 0.0);
      sum += y.at(i, j);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  std::mt19937_64 rng(71);
  std::vector<NamedParam> params;
  params.push_back({"layer.w", random_tensor(3, 5, rng)});
  params.push_back({"layer.b", random_tensor(1, 5, rng)});
  params.push_back({"odd/name with spaces", Tensor({2, 2, 2},
                                                   {1e-300, -0.0, 3.5, -1.25e300, 0.1,
                                                    7.0, -2.0, 9.9})});
  const std::string path = "/tmp/stsgr_test_ckpt.bin";
  save_checkpoint(path, params);
  auto loaded = load_checkpoint(path);
  REQUIRE(loaded.size() == params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(loaded[i].name == params[i].name);
    REQUIRE(loaded[i].tensor.shape() == params[i].tensor.shape());
    for (std::size_t k = 0; k < params[i].tensor.size(); ++k) {
      const double x = params[i].tensor.values()[k];
      const double y = loaded[i].tensor.values()[k];
      CHECK(std::memcmp(&x, &y, sizeof(double)) == 0);
    }
  }
  std::remove(path.c_str());
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), std::invalid_argument);
  Tensor t = Tensor::zeros({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
}
