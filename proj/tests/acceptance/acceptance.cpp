// Acceptance run: one PASS/FAIL line per criterion. Exits non-zero if any
// criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "model_fixture.hpp"
#include "nnfc/pipeline.hpp"
#include "oracles/knn_oracle.hpp"
#include "oracles/metric_oracle.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace nnfc;
using nnfc::testing::cast_tensor;
using nnfc::testing::fd_error;
using nnfc::testing::GradTolerance;
using nnfc::testing::ModelPair;
using nnfc::testing::project;
using nnfc::testing::random_nonzero;
using nnfc::testing::random_tensor;
using nnfc::testing::tiny_config;
using nnfc::testing::uniform_size;

namespace {

// Collects the failed checks of one criterion.
class Verdict {
 public:
  void check(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  template <class A, class B>
  void less(const A& value, const B& bound, const std::string& what) {
    std::ostringstream s;
    s << what << " = " << value << " (limit " << bound << ")";
    check(value < bound, s.str());
  }
  void note(const std::string& line) { notes_.push_back(line); }
  bool passed() const { return failures_.empty(); }
  const std::vector<std::string>& failures() const { return failures_; }
  const std::vector<std::string>& notes() const { return notes_; }

 private:
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

double cpu_seconds(std::clock_t since) { return static_cast<double>(std::clock() - since) / CLOCKS_PER_SEC; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---- 1: gradient integrity ----

template <class X>
using scalar_t = typename std::decay_t<X>::value_type;

template <class T, class MakeInput, class Op>
double sweep(const std::string& name, int trials, MakeInput make_input, Op op) {
  std::mt19937_64 rng(std::hash<std::string>{}(name));
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    Tensor<T> x = make_input(rng);
    const std::uint64_t proj_seed = rng();
    const std::mt19937_64 aux_state = rng;
    auto f = [&](const auto& v) {
      std::mt19937_64 aux = aux_state;
      return project(op(v, aux), proj_seed);
    };
    worst = std::max(worst, fd_error(f, x));
  }
  return worst;
}

template <class T>
void primitive_sweeps(Verdict& v, int trials) {
  const std::string tag = std::is_same_v<T, float> ? " f32" : " f64";
  auto mat = [](std::mt19937_64& rng) { return random_tensor<T>(rng, {uniform_size(rng, 1, 5), uniform_size(rng, 1, 5)}); };
  auto nonzero = [](std::mt19937_64& rng) { return random_nonzero<T>(rng, {uniform_size(rng, 1, 5), uniform_size(rng, 2, 5)}); };
  auto image = [](std::mt19937_64& rng) {
    const std::size_t h = uniform_size(rng, 3, 6);
    return random_tensor<T>(rng, {uniform_size(rng, 1, 2), h, h});
  };
  auto run = [&](const std::string& name, auto make, auto op) {
    v.less(sweep<T>(name, trials, make, op), GradTolerance<T>::primitive, name + tag);
  };
  run("matmul", mat, [](const auto& x, auto& aux) { return matmul(x, random_tensor<scalar_t<decltype(x)>>(aux, {x.dim(1), 3})); });
  run("transpose", mat, [](const auto& x, auto&) { return transpose(x); });
  run("add", mat, [](const auto& x, auto& aux) { return add(x, random_tensor<scalar_t<decltype(x)>>(aux, x.shape())); });
  run("mul", mat, [](const auto& x, auto&) { return mul(x, x); });
  run("scale", mat, [](const auto& x, auto&) { return scale(x, scalar_t<decltype(x)>(-1.75)); });
  run("add_bias", mat, [](const auto& x, auto& aux) { return add_bias(x, random_tensor<scalar_t<decltype(x)>>(aux, {x.dim(1)})); });
  run("reshape", mat, [](const auto& x, auto&) { return reshape(x, {x.size()}); });
  run("concat", mat, [](const auto& x, auto& aux) {
    using U = scalar_t<decltype(x)>;
    return concat<U>({x, random_tensor<U>(aux, {x.dim(0), 2})}, 1);
  });
  run("slice", mat, [](const auto& x, auto&) { return slice(x, 0, 0, 1); });
  run("mean_pool", mat, [](const auto& x, auto&) { return mean_pool(x); });
  run("sum", mat, [](const auto& x, auto&) { return sum(x); });
  run("relu", nonzero, [](const auto& x, auto&) { return relu(x); });
  run("sigmoid", mat, [](const auto& x, auto&) { return sigmoid(scale(x, scalar_t<decltype(x)>(3))); });
  run("embedding_lookup", mat, [](const auto& t, auto& aux) {
    std::vector<int> ids(1 + aux() % 6);
    for (auto& id : ids) id = static_cast<int>(aux() % t.dim(0));
    return embedding_lookup(t, ids);
  });
  run("conv2d", image, [](const auto& x, auto& aux) {
    using U = scalar_t<decltype(x)>;
    const std::size_t k = 1 + aux() % 3;
    return conv2d(x, random_tensor<U>(aux, {2, x.dim(0), k, k}), random_tensor<U>(aux, {2}), 1 + aux() % 2, k / 2);
  });
  run("softmax", mat, [](const auto& x, auto&) { return softmax(x, 1); });
  run("masked_fill", mat, [](const auto& x, auto& aux) {
    std::vector<std::uint8_t> mask(x.size());
    for (auto& m : mask) m = aux() % 3 == 0;
    return masked_fill(x, mask, scalar_t<decltype(x)>(-4));
  });
  run("layernorm", [](std::mt19937_64& rng) { return random_tensor<T>(rng, {uniform_size(rng, 1, 4), uniform_size(rng, 4, 8)}); },
      [](const auto& x, auto& aux) {
        using U = scalar_t<decltype(x)>;
        return layernorm(x, random_tensor<U>(aux, {x.dim(1)}, 0.5, 1.5), random_tensor<U>(aux, {x.dim(1)}));
      });
  run("l2_normalize_rows", nonzero, [](const auto& x, auto&) { return l2_normalize_rows(x); });
  run("cross_entropy", mat, [](const auto& x, auto& aux) {
    std::vector<int> targets(x.dim(0));
    for (auto& t : targets) t = static_cast<int>(aux() % x.dim(1));
    return cross_entropy(scale(x, scalar_t<decltype(x)>(2)), targets);
  });
  run("bce_with_logits", mat, [](const auto& x, auto& aux) {
    using U = scalar_t<decltype(x)>;
    std::vector<U> labels(x.size());
    for (auto& y : labels) y = static_cast<U>(aux() % 2);
    return bce_with_logits(scale(x, U(3)), labels);
  });
}

void composite(Verdict& v, const std::string& name, std::pair<double, double> errors) {
  v.less(errors.first, GradTolerance<float>::composite, name + " f32");
  v.less(errors.second, GradTolerance<double>::composite, name + " f64");
}

Verdict gradient_integrity() {
  Verdict v;
  const std::clock_t start = std::clock();
  primitive_sweeps<float>(v, 25);
  primitive_sweeps<double>(v, 25);

  {
    ModelPair pair(tiny_config(), 5);
    const auto sample = generate_sample(4, 2);
    composite(v, "CAM", pair.param_errors(
                            [&](auto& m) {
                              const auto out = m.run_cam(m.inputs(sample));
                              return add(out.logit, project(out.attention));
                            },
                            "cam."));
  }
  {
    std::mt19937_64 rng(12);
    ModelPair pair(tiny_config(), 12);
    const auto dest = random_tensor<float>(rng, {kDestTokens, 8});
    const auto obst = random_tensor<float>(rng, {4, 8});
    const auto targ = random_tensor<float>(rng, {kTargTokens, 8});
    const std::vector<std::uint8_t> valid{1, 0, 1, 1};
    composite(v, "CAIE layer", pair.param_errors(
                                   [&](auto& m) {
                                     using T = scalar_t<decltype(m)>;
                                     EncoderState<T> state{cast_tensor<T>(dest), cast_tensor<T>(obst), valid, 0};
                                     const auto next = caie_layer(state, cast_tensor<T>(targ), m.caie_params()[0], 2);
                                     return add(project(next.h_img, 5), project(next.h_obst, 6));
                                   },
                                   "caie."));
  }
  {
    std::mt19937_64 rng(14);
    ModelPair pair(tiny_config(), 14);
    const auto h_mul = random_tensor<float>(rng, {4, 8});
    const auto h_imgs = random_tensor<float>(rng, {6, 8});
    const std::vector<std::uint8_t> valid{1, 1, 1, 1, 0, 1};
    composite(v, "CAMD layer", pair.param_errors(
                                   [&](auto& m) {
                                     using T = scalar_t<decltype(m)>;
                                     const auto out = decode(cast_tensor<T>(h_mul), cast_tensor<T>(h_imgs), valid,
                                                             m.decoder_params(), m.head_params());
                                     return add(project(out.logits, 7), project(out.z, 8));
                                   },
                                   "dec."));
  }
  {
    const auto data = build_dataset(100, 21, SplitRatios{0.8, 0.1, 0.1});
    auto cfg = tiny_config(data.vocab.size());
    cfg.max_len = 26;
    ModelPair pair(cfg, 3);
    const std::vector<Sample> batch{data.train[0], data.train[1]};
    const auto split32 = prepare_split(pair.f32, batch, false);
    const auto split64 = prepare_split(pair.f64, batch, false);
    TrainConfig tc;
    composite(v, "total loss", pair.param_errors(
                                   [&](auto& m) {
                                     using T = scalar_t<decltype(m)>;
                                     const auto& split = [&]() -> const CaptionSplit<T>& {
                                       if constexpr (std::is_same_v<T, float>) {
                                         return split32;
                                       } else {
                                         return split64;
                                       }
                                     }();
                                     return loss_total(m, {&split.inputs[0], &split.inputs[1]},
                                                       {&split.captions[0], &split.captions[1]}, tc)
                                         .total;
                                   },
                                   ""));
  }
  const double cpu = cpu_seconds(start);
  v.less(cpu, 120.0, "gradient suite CPU seconds");
  v.note("cpu " + std::to_string(cpu) + " s");
  return v;
}

// ---- 2: kNN oracle equivalence ----

Verdict knn_oracle() {
  Verdict v;
  const std::clock_t start = std::clock();
  std::mt19937_64 rng(1);
  const std::size_t dim = 32;
  std::uniform_int_distribution<int> coord(-2, 2);
  Datastore ds(dim);
  std::vector<float> key(dim);
  for (std::size_t i = 0; i < 10000; ++i) {
    for (auto& k : key) k = static_cast<float>(coord(rng));
    ds.add<float>(key, static_cast<std::uint32_t>(rng() % 50));
  }
  std::size_t mismatches = 0, ties = 0;
  for (int q = 0; q < 1000; ++q) {
    std::vector<float> query(dim);
    for (auto& x : query) x = static_cast<float>(coord(rng));
    const std::size_t k = 1 + rng() % 64;
    const auto got = knn_query<float>(ds, query, k);
    const auto want = oracle::knn_full_scan(ds.keys(), dim, query, k);
    if (got.size() != want.size()) {
      ++mismatches;
      continue;
    }
    for (std::size_t i = 0; i < want.size(); ++i) {
      if (got[i].index != want[i]) ++mismatches;
      if (i > 0 && got[i].distance == got[i - 1].distance) ++ties;
    }
  }
  v.check(mismatches == 0, std::to_string(mismatches) + " neighbour ids differ from the full scan");
  v.check(ties > 0, "no distance ties exercised");
  const double cpu = cpu_seconds(start);
  v.less(cpu, 30.0, "CPU seconds");
  v.note("tied neighbours " + std::to_string(ties) + ", cpu " + std::to_string(cpu) + " s");
  return v;
}

// ---- 3: distribution invariants ----

double total(const std::vector<double>& p) {
  double s = 0.0;
  for (double x : p) s += x;
  return s;
}

Verdict distribution_invariants() {
  Verdict v;
  const auto data = build_dataset(200, 7, SplitRatios{0.8, 0.1, 0.1});
  auto cfg = tiny_config(data.vocab.size());
  cfg.d_model = 16;
  cfg.max_len = 26;
  CaptionModel<Scalar> model(cfg, 7);
  const auto store = datastore_for(model, data.train, false);
  NoGradGuard no_grad;
  std::vector<ImageFeatures<Scalar>> images;
  for (const auto& s : data.test) {
    auto in = model.inputs(s);
    model.attach_attention(in, false);
    images.push_back(model.encode_image(in));
  }
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0;
  bool endpoints = true;
  const std::size_t vocab = cfg.vocab_size, d = cfg.d_model;
  for (int call = 0; call < 10000; ++call) {
    const auto& img = images[rng() % images.size()];
    std::vector<int> prefix{kBosId};
    const std::size_t len = 1 + rng() % 8;
    while (prefix.size() < len) prefix.push_back(static_cast<int>(4 + rng() % (vocab - 4)));
    const auto dec = model.decode_tokens(img, prefix);
    const std::size_t last = len - 1;
    std::vector<double> p_model(vocab);
    for (std::size_t i = 0; i < vocab; ++i) p_model[i] = dec.p_next.at(last, i);
    std::span<const Scalar> z(dec.z.data().data() + last * d, d);
    const auto p_knn = aggregate(knn_query<Scalar>(store, z, 1 + rng() % 64), vocab);
    const double lambda = unit(rng);
    const auto p_total = interpolate(p_knn, p_model, lambda);
    worst = std::max({worst, std::abs(total(p_model) - 1.0), std::abs(total(p_knn) - 1.0),
                      std::abs(total(p_total) - 1.0)});
    endpoints = endpoints && interpolate(p_knn, p_model, 0.0) == p_model && interpolate(p_knn, p_model, 1.0) == p_knn;
  }
  v.less(worst, 1e-6, "max |sum - 1|");
  v.check(endpoints, "lambda endpoints do not reproduce p_model / p_knn exactly");
  std::ostringstream s;
  s << "10000 invocations, max |sum - 1| " << worst;
  v.note(s.str());
  return v;
}

// ---- 4: datastore contract ----

Verdict datastore_contract(const fs::path& work) {
  Verdict v;
  const auto data = build_dataset(200, 8, SplitRatios{0.8, 0.1, 0.1});
  auto cfg = tiny_config(data.vocab.size());
  cfg.d_model = 16;
  cfg.max_len = 26;
  CaptionModel<Scalar> model(cfg, 8);
  const auto store = datastore_for(model, data.train, false);
  std::size_t expected = 0;
  for (const auto& s : data.train) {
    // BOS + words + EOS, clipped to the decoder length, less one
    const std::size_t t_i = std::min(s.caption_train.size() + 2, cfg.max_len + 1);
    expected += t_i - 1;
  }
  v.check(store.size() == expected,
          "entries " + std::to_string(store.size()) + " != sum(T_i - 1) = " + std::to_string(expected));
  const auto a = work / "store_a.nnds", b = work / "store_b.nnds";
  save_datastore(store, a);
  const auto loaded = load_datastore(a);
  v.check(loaded == store, "loaded datastore differs from the saved one");
  save_datastore(loaded, b);
  v.check(slurp(a) == slurp(b), "re-saved datastore is not byte-identical");
  const auto rebuilt = datastore_for(model, data.train, false);
  v.check(rebuilt == store, "rebuilt datastore differs");
  v.note("entries " + std::to_string(store.size()));
  return v;
}

// ---- 5: metric oracles ----

EvalCorpus corpus(const std::vector<oracle::Item>& items) {
  EvalCorpus c;
  for (const auto& it : items) c.push_back(make_eval_item(it.candidate, it.references));
  return c;
}

Verdict metric_oracles() {
  Verdict v;
  auto near = [&](double got, double want, double tol, const std::string& what) {
    std::ostringstream s;
    s << what << ": " << std::setprecision(10) << got << " vs " << want;
    v.check(std::abs(got - want) <= tol, s.str());
  };
  near(bleu4(corpus({{"the cup falls off the desk", {"the cup falls off the desk"}}})), 1.0, 1e-12, "BLEU identity");
  const double bp = bleu4(corpus({{"a b c d", {"a b c d e"}}}));
  near(std::round(bp * 1e4) / 1e4, 0.7788, 1e-12, "BLEU brevity penalty");
  const std::vector<oracle::Item> no4{{"a b x c d", {"a b c d e"}}};
  const double smooth = bleu4(corpus(no4));
  v.check(smooth < 1e-2, "BLEU without shared 4-gram not below 1e-2");
  near(smooth, oracle::bleu4(no4), 1e-12, "BLEU smoothing vs oracle");
  near(rouge_l(corpus({{"a b c d", {"a b c d"}}})), 1.0, 1e-12, "ROUGE-L identity");
  near(rouge_l(corpus({{"a b c", {"a x c"}}})), 2.0 / 3.0, 1e-12, "ROUGE-L a b c / a x c");
  near(cider_d(corpus({{"the cup falls", {"the cup falls"}}})), 0.0, 0.0, "CIDEr-D single sample");
  near(cider_d_scores(corpus({{"p q r s", {"a b c d"}}, {"a b c d", {"a b c d"}}}))[0], 0.0, 0.0,
       "CIDEr-D disjoint candidate");
  const std::vector<oracle::Item> two{{"the red cup falls off", {"the red cup falls off"}},
                                      {"a toy car rolls away", {"a toy car rolls away"}}};
  near(cider_d(corpus(two)), oracle::cider_d(two), 1e-12, "CIDEr-D two-sample toy corpus");

  std::vector<oracle::Item> toy;
  for (int i = 0; i < 10; ++i) {
    const auto s = generate_sample(3, i);
    const auto other = generate_sample(4, i);
    toy.push_back({i % 3 == 0 ? other.caption_train_text : s.caption_train_text, s.captions_eval_text});
  }
  const auto c = corpus(toy);
  near(bleu4(c), oracle::bleu4(toy), 1e-6, "BLEU-4 toy corpus vs oracle");
  near(rouge_l(c), oracle::rouge_l(toy), 1e-6, "ROUGE-L toy corpus vs oracle");
  near(cider_d(c), oracle::cider_d(toy), 1e-6, "CIDEr-D toy corpus vs oracle");
  std::ostringstream s;
  s << "BP case " << std::fixed << std::setprecision(4) << bp;
  v.note(s.str());
  return v;
}

// ---- 6: ablation benchmark ----

Verdict ablation_benchmark(const fs::path& work, bool quiet) {
  Verdict v;
  RunConfig c;
  load_config_file(c, fs::path(NNFC_SOURCE_DIR) / "configs" / "benchmark.conf");
  c.quiet = quiet;
  const auto ds = generate_dataset(c);
  v.check(ds.train.size() == 2000 && ds.val.size() == 250 && ds.test.size() == 250,
          "split sizes " + std::to_string(ds.train.size()) + "/" + std::to_string(ds.val.size()) + "/" +
              std::to_string(ds.test.size()));
  const auto rep = run_ablation(ds, c);
  const auto table = format_ablation_table(rep);
  std::ofstream(work / "ablation.json") << ablation_json(rep).dump(2) << '\n';
  std::ofstream(work / "ablation.md") << table;
  const double full = summarize(rep.row("Ours").runs).cider_d.mean;
  const double no_nncm = summarize(rep.row("Ours (w/o NNCM)").runs).cider_d.mean;
  const double base = summarize(rep.row("Frequency baseline").runs).cider_d.mean;
  std::ostringstream s;
  s << std::setprecision(6) << "mean CIDEr-D full " << full << ", w/o NNCM " << no_nncm << ", baseline " << base;
  v.check(full >= no_nncm, s.str() + ": full < w/o NNCM");
  v.check(full >= base, s.str() + ": full < baseline");
  v.less(rep.seconds, 45.0 * 60.0, "experiment seconds");
  v.note(s.str() + ", " + std::to_string(rep.seconds) + " s");
  std::istringstream lines(table);
  for (std::string line; std::getline(lines, line);) v.note(line);
  return v;
}

// ---- 7: capacity sanity ----

Verdict capacity_sanity() {
  Verdict v;
  {
    const auto data = build_dataset(63, 21, SplitRatios{0.8, 0.1, 0.1});
    auto cfg = tiny_config(data.vocab.size());
    cfg.d_model = 32;
    cfg.max_len = 26;
    const std::vector<Sample> fifty(data.train.begin(), data.train.begin() + 50);
    TrainConfig tc;
    tc.lr = 3e-3;
    tc.max_epochs = 300;
    tc.gl_threshold = 1e9;
    CaptionModel<Scalar> model(cfg, 13);
    const auto tr = prepare_split(model, fifty, false);
    const auto result = train(model, tr, tr, tc);
    double lowest = std::numeric_limits<double>::infinity();
    std::size_t first_below = 0;
    for (const auto& r : result.log) {
      lowest = std::min(lowest, r.train_ce);
      if (first_below == 0 && r.train_ce < 0.1) first_below = r.epoch;
    }
    v.less(lowest, 0.1, "overfit training CE");
    v.note("overfit: CE below 0.1 from epoch " + std::to_string(first_below) + ", lowest " + std::to_string(lowest));
  }
  {
    const auto data = build_dataset(60, 21, SplitRatios{0.8, 0.1, 0.1});
    auto cfg = tiny_config(data.vocab.size());
    cfg.d_model = 16;
    cfg.max_len = 26;
    TrainConfig tc;
    tc.max_epochs = 60;
    tc.lr = 1e-2;
    tc.gl_threshold = 1.0;
    CaptionModel<Scalar> model(cfg, 12);
    const auto tr = prepare_split(model, data.train, false);
    const auto va = prepare_split(model, data.val, false);
    const auto result = train(model, tr, va, tc);
    v.check(result.early_stopped && result.log.size() < tc.max_epochs,
            "GL did not stop early (" + std::to_string(result.log.size()) + " epochs)");
    v.note("early stop after " + std::to_string(result.log.size()) + " of " + std::to_string(tc.max_epochs) +
           " epochs on " + std::to_string(data.train.size()) + " training samples");
  }
  return v;
}

// ---- 8: determinism ----

Verdict determinism(const fs::path& work) {
  Verdict v;
  RunConfig c;
  load_config_file(c, fs::path(NNFC_SOURCE_DIR) / "configs" / "smoke.conf");
  c.quiet = true;
  for (int run = 0; run < 2; ++run) {
    const auto dir = work / ("determinism_" + std::to_string(run));
    fs::create_directories(dir);
    const auto ds = generate_dataset(c);
    auto trained = train_pipeline(ds, c, c.train.seed);
    write_weights(dir / "model.nnfc", to_records(trained.model->params()));
    const auto store = datastore_for(*trained.model, ds.train, false);
    save_datastore(store, dir / "store.nnds");
    write_captions(dir / "captions.txt", "test",
                   generate_captions(*trained.model, ds.vocab, ds.test, false, &store, c.knn_neighbors, c.lambda_knn));
  }
  for (const char* f : {"model.nnfc", "store.nnds", "captions.txt"}) {
    v.check(slurp(work / "determinism_0" / f) == slurp(work / "determinism_1" / f), std::string(f) + " differs");
  }
  return v;
}

// ---- 9: end-to-end CLI smoke ----

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(NNFC_CLI_PATH) + " " + args + " >>" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Verdict cli_smoke(const fs::path& work) {
  Verdict v;
  const fs::path dir = work / "smoke";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cfg = "--config " + (fs::path(NNFC_SOURCE_DIR) / "configs" / "smoke.conf").string();
  const std::string d = dir.string();
  const auto start = std::chrono::steady_clock::now();
  for (const std::string& step : {
           "gen-data " + cfg + " -n 200 -o " + d + "/data",
           "train " + cfg + " -d " + d + "/data -w " + d + "/model.nnfc --log " + d + "/log.jsonl",
           "build-datastore " + cfg + " -d " + d + "/data -w " + d + "/model.nnfc -o " + d + "/store.nnds",
           "generate " + cfg + " -d " + d + "/data -w " + d + "/model.nnfc --datastore " + d + "/store.nnds -o " + d +
               "/captions.txt",
           "eval " + cfg + " -d " + d + "/data " + d + "/captions.txt -o " + d + "/report.json",
       }) {
    const int code = run_cli(step, dir / "cli.log");
    if (code != 0) {
      v.check(false, "exit code " + std::to_string(code) + " from: " + step);
      return v;
    }
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  v.less(seconds, 300.0, "pipeline seconds");
  try {
    const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
    v.check(report.at("magic") == kReportMagic && report.at("kind") == "eval", "report header");
    for (const char* m : {"bleu4", "rouge_l", "cider_d"}) {
      const double x = report.at(m).at("mean");
      v.check(std::isfinite(x) && x >= 0.0, std::string("report metric ") + m);
    }
    std::ostringstream s;
    s << std::setprecision(4) << "BLEU-4 " << report.at("bleu4").at("mean").get<double>() << ", ROUGE-L "
      << report.at("rouge_l").at("mean").get<double>() << ", CIDEr-D " << report.at("cider_d").at("mean").get<double>()
      << ", " << seconds << " s";
    v.note(s.str());
  } catch (const std::exception& e) {
    v.check(false, std::string("malformed report: ") + e.what());
  }
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  bool skip_benchmark = false, verbose = false;
  std::string work_dir = "acceptance_out";
  app.add_option("--only", only, "criteria to run (default: all)")->check(CLI::Range(1, 9));
  app.add_flag("--skip-benchmark", skip_benchmark, "skip the ablation benchmark (criterion 6)");
  app.add_flag("-v,--verbose", verbose, "show benchmark progress");
  app.add_option("--work-dir", work_dir, "scratch and report directory");
  CLI11_PARSE(app, argc, argv);

  const fs::path work = fs::absolute(work_dir);
  fs::create_directories(work);
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient integrity", gradient_integrity},
      {"kNN oracle equivalence", knn_oracle},
      {"distribution invariants", distribution_invariants},
      {"datastore contract", [&] { return datastore_contract(work); }},
      {"metric oracles", metric_oracles},
      {"ablation benchmark", [&] { return ablation_benchmark(work, !verbose); }},
      {"capacity sanity", capacity_sanity},
      {"determinism", [&] { return determinism(work); }},
      {"end-to-end CLI smoke", [&] { return cli_smoke(work); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    if (id == 6 && skip_benchmark) {
      std::cout << "SKIP " << id << " " << criteria[i].first << '\n';
      continue;
    }
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.check(false, std::string("exception: ") + e.what());
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (v.passed() ? "PASS " : "FAIL ") << id << " " << criteria[i].first << " (" << std::fixed
              << std::setprecision(1) << s << " s)" << std::defaultfloat << '\n';
    for (const auto& n : v.notes()) std::cout << "    " << n << '\n';
    for (const auto& f : v.failures()) std::cout << "    failed: " << f << '\n';
    std::cout.flush();
    if (!v.passed()) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
