#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nnfc/pipeline.hpp"

namespace fs = std::filesystem;
using namespace nnfc;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config_file, "key = value configuration file");
  cmd->add_option("--set", common.overrides, "override a configuration key (key=value), repeatable");
}

RunConfig resolve(const Common& common) {
  RunConfig c;
  if (!common.config_file.empty()) load_config_file(c, common.config_file);
  for (const auto& o : common.overrides) apply_override(c, o);
  return c;
}

void print_scores(std::ostream& out, const MetricSummary& s) {
  out << "BLEU-4   " << format_mean_std(s.bleu4, 4) << '\n'
      << "ROUGE-L  " << format_mean_std(s.rouge_l, 4) << '\n'
      << "CIDEr-D  " << format_mean_std(s.cider_d, 4) << '\n';
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nearest-neighbour future captioning: data, training, retrieval and evaluation"};
  app.require_subcommand(1);

  Common common;
  // Flags are parsed into these and then applied over the config file.
  std::string dataset, weights, datastore, out, split, log;
  std::vector<std::string> caption_files;
  int samples = -1;
  long long seed = -1;
  bool no_cam = false, no_nncm = false;
  double lambda = -1.0;
  long long neighbors = -1;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  add_common(gen, common);
  gen->add_option("-n,--samples", samples, "number of samples");
  gen->add_option("--seed", seed, "dataset seed");
  gen->add_option("-o,--out", out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "pre-train the CAM and train the captioner");
  add_common(tr, common);
  tr->add_option("-d,--dataset", dataset, "dataset directory");
  tr->add_option("-w,--weights", weights, "output weights file");
  tr->add_option("--log", log, "training log (JSON lines)");
  tr->add_option("--seed", seed, "initialisation and shuffling seed");
  tr->add_flag("--no-cam", no_cam, "zero the attention channel (CAM ablation)");

  auto* bd = app.add_subcommand("build-datastore", "store decoder latents of the training captions");
  add_common(bd, common);
  bd->add_option("-w,--weights", weights, "weights file");
  bd->add_option("-d,--dataset", dataset, "dataset directory");
  bd->add_option("-o,--out", out, "output datastore file");
  bd->add_flag("--no-cam", no_cam, "model was trained without the CAM");

  auto* gn = app.add_subcommand("generate", "greedy caption generation");
  add_common(gn, common);
  gn->add_option("-w,--weights", weights, "weights file");
  gn->add_option("-d,--dataset", dataset, "dataset directory");
  gn->add_option("--datastore", datastore, "datastore file (omit to decode without retrieval)");
  gn->add_option("--split", split, "train, val or test");
  gn->add_option("--lambda", lambda, "interpolation weight of the neighbour distribution");
  gn->add_option("--neighbors", neighbors, "number of retrieved neighbours");
  gn->add_option("-o,--out", out, "output captions file");
  gn->add_flag("--no-cam", no_cam, "model was trained without the CAM");
  gn->add_flag("--no-nncm", no_nncm, "ignore the datastore");

  auto* ev = app.add_subcommand("eval", "score captions files against the references");
  add_common(ev, common);
  ev->add_option("captions", caption_files, "captions files; several runs are reported as mean ± std")->required();
  ev->add_option("-d,--dataset", dataset, "dataset directory");
  ev->add_option("--split", split, "train, val or test");
  ev->add_option("-o,--out", out, "report file (JSON)");

  auto* ab = app.add_subcommand("ablate", "full model vs. NNCM/CAM ablations vs. frequency baseline");
  add_common(ab, common);
  ab->add_option("-d,--dataset", dataset, "dataset directory (generated from the config when absent)");
  ab->add_option("-o,--out", out, "report file (JSON); a Markdown table is written next to it");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    RunConfig c = resolve(common);
    if (!dataset.empty()) c.dataset = dataset;
    if (!split.empty()) c.split = split;
    if (samples >= 0) c.samples = samples;
    if (lambda >= 0.0) c.lambda_knn = lambda;
    if (neighbors >= 0) c.knn_neighbors = static_cast<std::size_t>(neighbors);
    if (no_cam) c.no_cam = true;
    if (no_nncm) c.no_nncm = true;

    if (*gen) {
      if (seed >= 0) c.data_seed = static_cast<std::uint64_t>(seed);
      const auto ds = generate_dataset(c);
      save_dataset(ds, out);
      std::cout << "train " << ds.train.size() << " val " << ds.val.size() << " test " << ds.test.size()
                << " vocabulary " << ds.vocab.size() << '\n';
    } else if (*tr) {
      if (seed >= 0) c.train.seed = static_cast<std::uint64_t>(seed);
      if (!weights.empty()) c.weights = weights;
      if (!log.empty()) c.log = log;
      const auto ds = load_dataset(c.dataset);
      TrainLogWriter writer(c.log);
      auto trained = train_pipeline(ds, c, c.train.seed, [&](const EpochRecord& r) { writer.write(r); });
      write_weights(c.weights, to_records(trained.model->params()));
      const auto& last = trained.result.log.back();
      std::cout << "epochs " << trained.result.log.size() << " best " << trained.result.best_epoch << " val "
                << last.e_opt << (trained.result.early_stopped ? " (early stop)" : "") << '\n';
    } else if (*bd) {
      if (!weights.empty()) c.weights = weights;
      if (!out.empty()) c.datastore = out;
      const auto ds = load_dataset(c.dataset);
      const auto model = load_model(c.weights, c);
      const auto store = datastore_for(*model, ds.train, c.no_cam);
      save_datastore(store, c.datastore);
      std::cout << "entries " << store.size() << " width " << store.dim() << '\n';
    } else if (*gn) {
      if (!weights.empty()) c.weights = weights;
      if (!out.empty()) c.captions = out;
      const auto ds = load_dataset(c.dataset);
      const auto model = load_model(c.weights, c);
      std::optional<Datastore> store;
      if (!datastore.empty() && !c.no_nncm) store = load_datastore(datastore);
      const auto& samples_split = ds.split(c.split);
      const auto lines = generate_captions(*model, ds.vocab, samples_split, c.no_cam, store ? &*store : nullptr,
                                           c.knn_neighbors, c.lambda_knn);
      write_captions(c.captions, c.split, lines);
      std::cout << "captions " << lines.size() << '\n';
    } else if (*ev) {
      if (!out.empty()) c.report = out;
      const auto ds = load_dataset(c.dataset);
      std::vector<MetricScores> runs;
      nlohmann::json per_run = nlohmann::json::array();
      for (const auto& file : caption_files) {
        const auto captions = read_captions(file);
        const auto& samples_split = ds.split(split.empty() ? captions.split : c.split);
        runs.push_back(score_lines(captions.lines, samples_split));
        per_run.push_back({{"captions", file},
                           {"bleu4", runs.back().bleu4},
                           {"rouge_l", runs.back().rouge_l},
                           {"cider_d", runs.back().cider_d}});
      }
      const auto summary = summarize(runs);
      print_scores(std::cout, summary);
      auto report = summary_json(summary);
      report["magic"] = kReportMagic;
      report["version"] = kReportVersion;
      report["kind"] = "eval";
      report["per_run"] = per_run;
      write_json(c.report, report);
    } else if (*ab) {
      if (!out.empty()) c.report = out;
      const auto ds = fs::is_directory(c.dataset) ? load_dataset(c.dataset) : generate_dataset(c);
      const auto rep = run_ablation(ds, c);
      const auto table = format_ablation_table(rep);
      std::cout << table;
      write_json(c.report, ablation_json(rep));
      auto md = fs::path(c.report).replace_extension(".md");
      std::ofstream(md) << table;
    }
    return kExitOk;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
