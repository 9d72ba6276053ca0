#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "adaforge/checkpoint.hpp"
#include "adaforge/model.hpp"
#include "support/finite_diff.hpp"

using namespace adaforge;
using adaforge::testing::rel_err;
using adaforge::testing::relu_inputs_clear;

namespace {

Tensor random_tensor(const Shape& s, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(s);
  for (int64_t i = 0; i < t.numel(); ++i) t[static_cast<size_t>(i)] = dist(rng);
  return t;
}

bool params_bitwise_equal(const SplitModel& a, const SplitModel& b) {
  if (a.params.size() != b.params.size()) return false;
  for (size_t i = 0; i < a.params.size(); ++i) {
    if (a.params[i].name != b.params[i].name) return false;
    if (a.params[i].value.data().v != b.params[i].value.data().v) return false;
  }
  return true;
}

// Parameter count of the given group excluding the final output layer.
int64_t hidden_param_count(const SplitModel& m, ParamGroup g,
                           const std::vector<LayerInstance>& atoms) {
  int last_w = -1, last_b = -1;
  for (const auto& inst : atoms) {
    if (inst.w >= 0) {
      last_w = inst.w;
      last_b = inst.b;
    }
  }
  int64_t n = 0;
  for (size_t i = 0; i < m.params.size(); ++i) {
    if (m.params[i].group != g) continue;
    if (static_cast<int>(i) == last_w || static_cast<int>(i) == last_b) continue;
    n += m.params[i].value.numel();
  }
  return n;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("classifier split places 4 atoms in the encoder and the rest in the heads") {
  NetworkSpec spec = toy_classifier_spec(Shape{3, 16, 16}, 4);
  CHECK(spec.layers.size() == 8);
  CHECK(spec.split_index == 4);
  SplitModel m = build_split_model(spec, 1);

  CHECK(m.encoder_atoms.size() == 4);  // conv8, relu, pool, conv16
  CHECK(m.task_atoms.size() == 4 + 2);  // relu, pool, flatten, dense64 + relu, dense(c)
  CHECK(m.feature_shape == Shape{16, 8, 8});

  // D ends in a single logit turned into a probability.
  std::mt19937_64 rng(0);
  Value x = Value::leaf(random_tensor(Shape{3, 3, 16, 16}, rng), false);
  Value d = m.forward_disc(m.forward_encoder(x));
  CHECK(d.shape() == Shape{3, 1});
  for (size_t i = 0; i < 3; ++i) {
    CHECK(d.data()[i] > 0.0);
    CHECK(d.data()[i] < 1.0);
  }

  Value scores = m.predict(x);
  CHECK(scores.shape() == Shape{3, 4});
}

TEST_CASE("discriminator mirrors the task head up to the final layer") {
  NetworkSpec spec = toy_classifier_spec(Shape{3, 16, 16}, 5);
  for (int split = 1; split <= 7; ++split) {
    spec.split_index = split;
    SplitModel m = build_split_model(spec, 3);
    CHECK(hidden_param_count(m, ParamGroup::Task, m.task_atoms) ==
          hidden_param_count(m, ParamGroup::Discriminator, m.disc_atoms));
  }
}

TEST_CASE("identical seed and spec give bit-identical initial parameters") {
  NetworkSpec spec = toy_classifier_spec(Shape{3, 8, 8}, 3);
  SplitModel a = build_split_model(spec, 99);
  SplitModel b = build_split_model(spec, 99);
  CHECK(params_bitwise_equal(a, b));
  SplitModel c = build_split_model(spec, 100);
  CHECK_FALSE(params_bitwise_equal(a, c));
}

TEST_CASE("parameter groups partition the model") {
  SplitModel m = build_split_model(toy_classifier_spec(Shape{3, 8, 8}, 3), 7);
  std::set<std::string> names;
  for (const auto& p : m.params) names.insert(p.name);
  CHECK(names.size() == m.params.size());  // unique names
  CHECK(m.param_count(ParamGroup::Encoder) + m.param_count(ParamGroup::Task) +
            m.param_count(ParamGroup::Discriminator) ==
        m.param_count());
}

TEST_CASE("moving the split grows the encoder and shrinks the task head") {
  NetworkSpec spec = toy_classifier_spec(Shape{3, 16, 16}, 4);
  std::vector<int64_t> enc, task;
  for (int split = 1; split <= 7; ++split) {
    spec.split_index = split;
    SplitModel m = build_split_model(spec, 5);
    enc.push_back(m.param_count(ParamGroup::Encoder));
    task.push_back(m.param_count(ParamGroup::Task));
  }
  for (size_t i = 1; i < enc.size(); ++i) {
    CHECK(enc[i] >= enc[i - 1]);
    CHECK(task[i] <= task[i - 1]);
    // A parameterized atom crossing the boundary moves counts strictly.
    const bool crossing = spec.layers[i].has_params();
    if (crossing) {
      CHECK(enc[i] > enc[i - 1]);
      CHECK(task[i] < task[i - 1]);
    }
  }
  CHECK(enc.front() < enc.back());
  CHECK(task.front() > task.back());
}

TEST_CASE("discriminator capacity axis adds or removes dense layers") {
  SUBCASE("+2 adds two hidden dense layers") {
    NetworkSpec spec = toy_classifier_spec(Shape{3, 16, 16}, 4);
    SplitModel base = build_split_model(spec, 1);
    spec.disc_capacity_delta = 2;
    SplitModel wide = build_split_model(spec, 1);
    // dense(64)+relu twice between the 64-wide feature and the logit; the
    // final dense(1) input width is unchanged (64).
    const int64_t added = (64 * 64 + 64) * 2;
    CHECK(wide.param_count(ParamGroup::Discriminator) -
              base.param_count(ParamGroup::Discriminator) ==
          added);
    CHECK(wide.param_count(ParamGroup::Task) == base.param_count(ParamGroup::Task));
  }
  SUBCASE("-2 removes trailing dense layers but keeps one hidden layer") {
    NetworkSpec spec = toy_point_spec(2, 3);
    spec.split_index = 1;  // task trunk keeps two dense(32) layers
    SplitModel base = build_split_model(spec, 1);
    spec.disc_capacity_delta = -2;
    SplitModel slim = build_split_model(spec, 1);
    // Only one of the two dense(32) atoms may go: removing both would leave
    // the discriminator without any hidden parameterized layer.
    const int64_t one_dense = 32 * 32 + 32;
    CHECK(base.param_count(ParamGroup::Discriminator) -
              slim.param_count(ParamGroup::Discriminator) ==
          one_dense);
    std::mt19937_64 rng(2);
    Value x = Value::leaf(random_tensor(Shape{4, 2}, rng), false);
    Value d = slim.forward_disc(slim.forward_encoder(x));
    CHECK(d.shape() == Shape{4, 1});
  }
  SUBCASE("-2 is clamped to a no-op when only one hidden dense layer exists") {
    NetworkSpec spec = toy_classifier_spec(Shape{3, 16, 16}, 4);
    SplitModel base = build_split_model(spec, 1);
    spec.disc_capacity_delta = -2;
    SplitModel slim = build_split_model(spec, 1);
    CHECK(slim.param_count(ParamGroup::Discriminator) ==
          base.param_count(ParamGroup::Discriminator));
  }
}

TEST_CASE("zeroed final layer produces all-equal class scores") {
  SplitModel m = build_split_model(toy_point_spec(2, 5), 11);
  int last_w = -1, last_b = -1;
  for (const auto& inst : m.task_atoms)
    if (inst.w >= 0) {
      last_w = inst.w;
      last_b = inst.b;
    }
  m.params[static_cast<size_t>(last_w)].value.data().zero();
  m.params[static_cast<size_t>(last_b)].value.data().zero();

  std::mt19937_64 rng(4);
  Value x = Value::leaf(random_tensor(Shape{6, 2}, rng), false);
  Value scores = m.predict(x);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 5; ++c)
      CHECK(scores.data()[static_cast<size_t>(r * 5 + c)] == 0.0);
}

TEST_CASE("per-sample outputs are independent of the rest of the batch") {
  SplitModel m = build_split_model(toy_classifier_spec(Shape{3, 8, 8}, 4), 21);
  std::mt19937_64 rng(9);
  Tensor batch = random_tensor(Shape{8, 3, 8, 8}, rng);
  NoGradGuard guard;
  Value full = m.predict(Value::leaf(batch, false));

  Tensor single(Shape{1, 3, 8, 8});
  std::copy(batch.v.begin(), batch.v.begin() + 3 * 8 * 8, single.v.begin());
  Value one = m.predict(Value::leaf(single, false));
  for (size_t c = 0; c < 4; ++c)
    CHECK(rel_err(one.data()[c], full.data()[c], 1e-9) < 1e-10);
}

TEST_CASE("segmenter keeps spatial dims and supports both discriminator forms") {
  NetworkSpec spec = toy_segmenter_spec(Shape{1, 8, 12});
  SplitModel m = build_split_model(spec, 31);
  std::mt19937_64 rng(13);
  Value x = Value::leaf(random_tensor(Shape{2, 1, 8, 12}, rng), false);
  Value scores = m.predict(x);
  CHECK(scores.shape() == Shape{2, 2, 8, 12});  // per-pixel 2-class scores

  Value d_full = m.forward_disc(m.forward_encoder(x));
  CHECK(d_full.shape() == Shape{2, 1});

  spec.patch_discriminator = true;
  SplitModel mp = build_split_model(spec, 31);
  Value d_patch = mp.forward_disc(mp.forward_encoder(x));
  CHECK(d_patch.shape() == Shape{2, 1, 8, 12});
  for (int64_t i = 0; i < d_patch.numel(); ++i) {
    CHECK(d_patch.data()[static_cast<size_t>(i)] > 0.0);
    CHECK(d_patch.data()[static_cast<size_t>(i)] < 1.0);
  }
}

TEST_CASE("initialization respects the He/Xavier pairing") {
  NetworkSpec spec = toy_classifier_spec(Shape{3, 16, 16}, 4);
  SplitModel m = build_split_model(spec, 17);

  auto max_abs = [&](const std::string& name) {
    for (const auto& p : m.params)
      if (p.name == name) {
        double mx = 0;
        for (int64_t i = 0; i < p.value.numel(); ++i)
          mx = std::max(mx, std::fabs(p.value.data()[static_cast<size_t>(i)]));
        return mx;
      }
    FAIL("missing parameter ", name);
    return 0.0;
  };

  // conv(8) feeds relu: He bound sqrt(6/fan_in) with fan_in = 3*3*3.
  const double he = std::sqrt(6.0 / 27.0);
  const double xavier = std::sqrt(6.0 / (27.0 + 8.0 * 9.0));
  const double conv_max = max_abs("encoder.00.conv.w");
  CHECK(conv_max <= he);
  CHECK(conv_max > xavier);  // wider than the Xavier bound: He was used

  // Final dense(c) feeds the softmax, not a relu: Xavier bound over (64, 4).
  const double xb = std::sqrt(6.0 / (64.0 + 4.0));
  CHECK(max_abs("task.05.dense.w") <= xb);

  // Biases start at zero.
  for (const auto& p : m.params)
    if (p.name.ends_with(".b"))
      for (int64_t i = 0; i < p.value.numel(); ++i)
        CHECK(p.value.data()[static_cast<size_t>(i)] == 0.0);
}

TEST_CASE("model gradients agree with finite differences end to end") {
  SplitModel m = build_split_model(toy_point_spec(2, 3), 23);
  std::mt19937_64 rng(14);
  Tensor x = random_tensor(Shape{4, 2}, rng);

  auto loss_value = [&]() {
    Value scores = m.predict(Value::leaf(x, false));
    return mean(mul(scores, scores));
  };

  Value loss = loss_value();
  REQUIRE(relu_inputs_clear(loss, 1e-3));
  zero_grad(m.params);
  backward(loss);

  double worst = 0;
  for (auto& p : m.params) {
    for (int64_t j = 0; j < p.value.numel(); ++j) {
      const double orig = p.value.data()[static_cast<size_t>(j)];
      const double h = 1e-4;
      p.value.data()[static_cast<size_t>(j)] = orig + h;
      double fp;
      {
        NoGradGuard g;
        fp = loss_value().item();
      }
      p.value.data()[static_cast<size_t>(j)] = orig - h;
      double fm;
      {
        NoGradGuard g;
        fm = loss_value().item();
      }
      p.value.data()[static_cast<size_t>(j)] = orig;
      worst = std::max(worst, rel_err(p.value.grad()[static_cast<size_t>(j)],
                                      (fp - fm) / (2 * h)));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("invalid specs are rejected with informative errors") {
  NetworkSpec spec = toy_classifier_spec(Shape{3, 16, 16}, 4);
  spec.split_index = 0;
  CHECK_THROWS_WITH_AS(build_split_model(spec, 1), doctest::Contains("split_index"),
                       std::invalid_argument);
  spec.split_index = 8;
  CHECK_THROWS_AS(build_split_model(spec, 1), std::invalid_argument);
  spec.split_index = 4;
  spec.disc_capacity_delta = 1;
  CHECK_THROWS_WITH_AS(build_split_model(spec, 1),
                       doctest::Contains("disc_capacity_delta"), std::invalid_argument);
  spec.disc_capacity_delta = 0;
  spec.patch_discriminator = true;  // classifier head cannot host a patch D
  CHECK_THROWS_AS(build_split_model(spec, 1), std::invalid_argument);

  NetworkSpec seg = toy_segmenter_spec(Shape{1, 8, 8});
  seg.patch_discriminator = true;
  seg.disc_capacity_delta = 2;
  CHECK_THROWS_AS(build_split_model(seg, 1), std::invalid_argument);

  NetworkSpec bad = toy_classifier_spec(Shape{3, 16, 16}, 4);
  bad.layers[6] = LayerSpec::dense(10);  // dense straight after pooling, no flatten
  CHECK_THROWS_WITH_AS(build_split_model(bad, 1), doctest::Contains("dense(10)"),
                       std::invalid_argument);

  // Wrong input shape at forward time.
  SplitModel m = build_split_model(toy_classifier_spec(Shape{3, 16, 16}, 4), 1);
  CHECK_THROWS_AS(m.forward_encoder(Value::leaf(Tensor::zeros(Shape{2, 3, 8, 8}), false)),
                  std::invalid_argument);
}

TEST_CASE("checkpoints round-trip bit-exactly and enforce the spec hash") {
  const auto path = temp_file("adaforge_ckpt_test.bin");
  NetworkSpec spec = toy_classifier_spec(Shape{3, 8, 8}, 3);
  SplitModel m = build_split_model(spec, 41);

  // Make the state distinctive.
  for (auto& p : m.params)
    for (int64_t i = 0; i < p.value.numel(); ++i)
      p.value.data()[static_cast<size_t>(i)] += 0.001 * static_cast<double>(i % 7);
  save_checkpoint(m, path.string(), 12);

  SUBCASE("full round trip") {
    SplitModel fresh = build_split_model(spec, 42);
    REQUIRE_FALSE(params_bitwise_equal(m, fresh));
    const int64_t epoch = load_checkpoint(fresh, path.string());
    CHECK(epoch == 12);
    CHECK(params_bitwise_equal(m, fresh));
  }

  SUBCASE("spec hash mismatch is refused") {
    NetworkSpec other = spec;
    other.split_index = 5;
    SplitModel victim = build_split_model(other, 42);
    CHECK_THROWS_WITH_AS(load_checkpoint(victim, path.string()),
                         doctest::Contains("hash"), std::runtime_error);
  }

  SUBCASE("encoder-only load keeps head and discriminator at fresh init") {
    SplitModel fresh = build_split_model(spec, 43);
    SplitModel reference = build_split_model(spec, 43);
    load_checkpoint(fresh, path.string(), /*encoder_only=*/true);
    for (size_t i = 0; i < fresh.params.size(); ++i) {
      const auto& got = fresh.params[i].value.data().v;
      if (fresh.params[i].group == ParamGroup::Encoder)
        CHECK(got == m.params[i].value.data().v);
      else
        CHECK(got == reference.params[i].value.data().v);
    }
  }

  SUBCASE("corrupt magic is rejected") {
    auto bad = temp_file("adaforge_ckpt_bad.bin");
    std::FILE* f = std::fopen(bad.string().c_str(), "wb");
    std::fputs("NOPE", f);
    std::fclose(f);
    SplitModel victim = build_split_model(spec, 44);
    CHECK_THROWS_AS(load_checkpoint(victim, bad.string()), std::runtime_error);
    std::filesystem::remove(bad);
  }

  std::filesystem::remove(path);
}
