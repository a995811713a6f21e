#include <cmath>
#include <random>
#include <type_traits>
#include <vector>

#include <gtest/gtest.h>

#include "model_fixture.hpp"
#include "nnfc/model.hpp"
#include "test_util.hpp"

using namespace nnfc;
using nnfc::testing::cast_tensor;
using nnfc::testing::GradTolerance;
using nnfc::testing::ModelPair;
using nnfc::testing::project;
using nnfc::testing::random_tensor;
using nnfc::testing::tiny_config;

namespace {

template <class T>
void fill(Tensor<T> t, T v) {
  for (auto& x : t.mutable_data()) x = v;
}

template <class T>
SampleInputs<T> prepared(const CaptionModel<T>& m, const Sample& s) {
  auto in = m.inputs(s);
  m.attach_attention(in, false);
  return in;
}

}  // namespace

TEST(Decoder, LaterTokensDoNotChangeEarlierPositions) {
  CaptionModel<double> model(tiny_config(), 1);
  const auto img = model.encode_image(prepared(model, generate_sample(1, 0)));
  const std::vector<int> ids{kBosId, 4, 5, 4, 5, 4};
  const auto base = fuse_multimodal(img.pooled, ids, model.fuse_params(), 2);
  const auto base_dec = model.decode_tokens(img, ids);
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
    auto changed = ids;
    changed[t + 1] = changed[t + 1] == 4 ? 3 : 4;
    const auto other = fuse_multimodal(img.pooled, changed, model.fuse_params(), 2);
    const auto other_dec = model.decode_tokens(img, changed);
    for (std::size_t r = 0; r <= t; ++r) {
      for (std::size_t c = 0; c < 8; ++c) {
        ASSERT_EQ(other.h_mul.at(r, c), base.h_mul.at(r, c));
        ASSERT_EQ(other_dec.z.at(r, c), base_dec.z.at(r, c));
      }
      for (std::size_t v = 0; v < 6; ++v) ASSERT_EQ(other_dec.logits.at(r, v), base_dec.logits.at(r, v));
    }
    bool moved = false;
    for (std::size_t c = 0; c < 8; ++c) moved = moved || other.h_mul.at(t + 1, c) != base.h_mul.at(t + 1, c);
    EXPECT_TRUE(moved);
  }
}

TEST(Decoder, SingleTokenGivesOneRow) {
  CaptionModel<float> model(tiny_config(), 2);
  const auto img = model.encode_image(prepared(model, generate_sample(1, 1)));
  const auto out = model.decode_tokens(img, {kBosId});
  EXPECT_EQ(out.logits.shape(), (Shape{1, 6}));
  EXPECT_EQ(out.z.shape(), (Shape{1, 8}));
}

TEST(Decoder, NextTokenRowsSumToOne) {
  CaptionModel<double> model(tiny_config(), 3);
  const auto img = model.encode_image(prepared(model, generate_sample(1, 2)));
  const auto out = model.decode_tokens(img, {kBosId, 4, 4, 5});
  for (std::size_t t = 0; t < 4; ++t) {
    double total = 0.0;
    for (std::size_t v = 0; v < 6; ++v) {
      EXPECT_GT(out.p_next.at(t, v), 0.0);
      total += out.p_next.at(t, v);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Decoder, ZeroHeadGivesUniformDistribution) {
  CaptionModel<double> model(tiny_config(), 4);
  fill(model.head_params().w, 0.0);
  fill(model.head_params().b, 0.0);
  const auto img = model.encode_image(prepared(model, generate_sample(1, 3)));
  const auto out = model.decode_tokens(img, {kBosId, 4});
  for (double p : out.p_next.data()) EXPECT_EQ(p, 1.0 / 6.0);
}

TEST(Decoder, RejectsEmptyImageAndMissingLayers) {
  CaptionModel<double> model(tiny_config(), 5);
  const auto h = Tensor<double>::zeros({2, 8});
  EXPECT_THROW(decode(h, Tensor<double>(), {}, model.decoder_params(), model.head_params()),
               ContractError);
  EXPECT_THROW(decode(h, Tensor<double>::zeros({3, 8}), {}, {}, model.head_params()), ConfigError);
}

TEST(Fuse, TruncatesBeyondMaxLength) {
  CaptionModel<float> model(tiny_config(), 6);
  const auto img = Tensor<float>::zeros({1, 8});
  const std::vector<int> ids(12, 4);
  const auto out = fuse_multimodal(img, ids, model.fuse_params(), 2);
  EXPECT_EQ(out.h_mul.shape(), (Shape{8, 8}));
  EXPECT_THROW(fuse_multimodal(img, {}, model.fuse_params(), 2), ContractError);
}

TEST(Fuse, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  ModelPair pair(tiny_config(), 7);
  const auto img = random_tensor<float>(rng, {1, 8});
  const std::vector<int> ids{kBosId, 4, 5, 3};
  const auto [e32, e64] = pair.param_errors(
      [&](auto& m) {
        using T = typename std::decay_t<decltype(m)>::value_type;
        const auto out = fuse_multimodal(cast_tensor<T>(img), ids, m.fuse_params(), 2);
        return add(project(out.h_mul, 3), project(out.h_txt, 4));
      },
      "");
  EXPECT_LT(e32, GradTolerance<float>::composite);
  EXPECT_LT(e64, GradTolerance<double>::composite);
  auto x = img;
  auto f = [&](const auto& v) {
    using T = typename std::decay_t<decltype(v)>::value_type;
    return project(fuse_multimodal(v, ids, pair.get<T>().fuse_params(), 2).h_mul);
  };
  EXPECT_LT(nnfc::testing::fd_error(f, x), GradTolerance<float>::composite);
}

TEST(FullModel, LossGradientMatchesFiniteDifferences) {
  ModelPair pair(tiny_config(4), 8);
  const auto sample = generate_sample(2, 5);
  const std::vector<int> input{kBosId, 3, 2, 3}, target{2, 3, 2, kEosId};
  auto loss = [&](auto& m) {
    const auto out = m.forward(prepared(m, sample), input);
    return cross_entropy(out.dec.logits, target);
  };
  for (const char* prefix : {"caie.", "dec.", "fuse.", "text.", "out.", "dest.", "targ.", "obst."}) {
    const auto [e32, e64] = pair.param_errors(loss, prefix);
    EXPECT_LT(e32, GradTolerance<float>::composite) << prefix;
    EXPECT_LT(e64, GradTolerance<double>::composite) << prefix;
  }
}

TEST(GreedyDecode, FollowsOneHotSteps) {
  const std::vector<int> script{7, 5, 9, kEosId, 6};
  std::size_t calls = 0;
  auto step = [&](const std::vector<int>& prefix) {
    EXPECT_EQ(prefix.size(), calls + 1);
    EXPECT_EQ(prefix.front(), kBosId);
    for (std::size_t i = 1; i < prefix.size(); ++i) EXPECT_EQ(prefix[i], script[i - 1]);
    StepResult<float> r;
    r.p_model.assign(10, 0.0);
    r.p_model[script[calls++]] = 1.0;
    r.z = {0.0f};
    return r;
  };
  const auto out = greedy_decode<float>(step, 26);
  EXPECT_EQ(out, (std::vector<int>{7, 5, 9, kEosId}));
}

TEST(GreedyDecode, StopsAtMaxLengthAndBreaksTiesLow) {
  auto step = [](const std::vector<int>&) {
    StepResult<double> r;
    r.p_model = {0.1, 0.1, 0.1, 0.1, 0.3, 0.3};
    r.z = {0.0};
    return r;
  };
  const auto out = greedy_decode<double>(step, 5);
  EXPECT_EQ(out, (std::vector<int>(5, 4)));
}

TEST(GreedyDecode, ZeroLambdaMatchesModelOnly) {
  CaptionModel<float> model(tiny_config(8), 9);
  std::vector<SampleInputs<float>> ins;
  std::vector<std::vector<int>> caps;
  for (int i = 0; i < 5; ++i) {
    ins.push_back(prepared(model, generate_sample(3, i)));
    caps.push_back({4, 5, 6, 7});
  }
  const auto ds = build_datastore(model, ins, caps);
  KnnOptions off{&ds, 4, 0.0};
  KnnOptions full{&ds, 4, 1.0};
  for (const auto& in : ins) {
    EXPECT_EQ(greedy_generate(model, in, &off), greedy_generate(model, in));
    // with only the datastore, every step must pick a token seen in it
    for (int t : greedy_generate(model, in, &full)) EXPECT_TRUE(t >= 4 && t <= 7 || t == kEosId);
  }
}

TEST(GreedyDecode, OutputNeverExceedsMaxLength) {
  auto cfg = tiny_config(30);
  cfg.max_len = 26;
  CaptionModel<float> model(cfg, 10);
  for (int i = 0; i < 1000; ++i) {
    const auto out = greedy_generate(model, prepared(model, generate_sample(4, i)));
    ASSERT_LE(out.size(), 26u);
    ASSERT_FALSE(out.empty());
  }
}

TEST(Datastore, TeacherForcedLatentsReplayExactly) {
  CaptionModel<float> model(tiny_config(8), 11);
  const auto in = prepared(model, generate_sample(5, 0));
  const std::vector<int> caption{4, 6, 5};
  const auto ds = build_datastore(model, {in}, {caption});
  ASSERT_EQ(ds.size(), caption.size() + 1);
  const std::vector<int> input{kBosId, 4, 6, 5}, next{4, 6, 5, kEosId};
  const auto replay = model.forward(in, input);
  for (std::size_t t = 0; t < next.size(); ++t) {
    const auto z = replay.dec.z.data().subspan(t * 8, 8);
    for (std::size_t c = 0; c < 8; ++c) ASSERT_EQ(ds.key(t)[c], z[c]);
    const auto nb = knn_query<float>(ds, z, 1);
    EXPECT_EQ(nb[0].distance, 0.0);
    EXPECT_EQ(nb[0].index, t);
    EXPECT_EQ(nb[0].value, static_cast<std::uint32_t>(next[t]));
  }
}
