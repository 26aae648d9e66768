// Command-line front end: gen, train, eval, predict, attn.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lanatt/harness.hpp"
#include "lanatt/model/checkpoint.hpp"
#include "lanatt/scenarios.hpp"
#include "lanatt/training.hpp"

namespace fs = std::filesystem;
using namespace lanatt;

namespace {

std::vector<const graph::TrackSample*> pointers(const scenarios::Dataset& d) {
  std::vector<const graph::TrackSample*> out;
  for (const auto& s : d.samples) out.push_back(&s);
  return out;
}

/// A directory resolves to <dir>/<split>.jsonl; anything else is a file path.
std::string split_path(const std::string& data, const std::string& split) {
  return fs::is_directory(data) ? (fs::path(data) / (split + ".jsonl")).string() : data;
}

scenarios::SplitCounts parse_counts(const std::string& text) {
  std::vector<std::size_t> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(item, &used);
    if (used != item.size()) throw DomainError("--counts: malformed entry '" + item + "'");
    values.push_back(static_cast<std::size_t>(v));
  }
  if (values.size() == 1) return scenarios::default_counts(values[0]);
  if (values.size() == 3) return {values[0], values[1], values[2]};
  throw DomainError("--counts expects TOTAL or TRAIN,VAL,TEST");
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config '" + path + "'");
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  f << text;
  if (!f) throw std::runtime_error("failed writing '" + path + "'");
}

int run_gen(const std::string& counts, const std::string& mix, double noise, std::uint64_t seed,
            const std::string& out) {
  const scenarios::Mix m = mix.empty() ? scenarios::default_mix() : scenarios::parse_mix(mix);
  const auto splits = scenarios::generate_dataset(parse_counts(counts), m, noise, seed);
  fs::create_directories(out);
  for (const auto* d : {&splits.train, &splits.val, &splits.test})
    scenarios::write_dataset((fs::path(out) / (d->split + ".jsonl")).string(), *d);
  std::printf("wrote %zu/%zu/%zu samples to %s\n", splits.train.samples.size(), splits.val.samples.size(),
              splits.test.samples.size(), out.c_str());
  return 0;
}

struct TrainArgs {
  std::string config, data, out, log, aggregator = "attention";
  int horizon = 3;
  std::uint64_t seed = 1;
  std::size_t epochs = 0;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  model::ModelConfig mc;
  training::TrainConfig tc;
  if (!a.config.empty()) {
    const nlohmann::json j = read_json(a.config);
    if (j.contains("model")) mc = model::model_config_from_json(j["model"]);
    if (j.contains("train")) tc = training::train_config_from_json(j["train"]);
  }
  mc.aggregator = model::parse_aggregator(a.aggregator);
  if (a.horizon != 1 && a.horizon != 3) throw DomainError("--horizon must be 1 or 3");
  mc.pred_steps = static_cast<std::size_t>(a.horizon) * 10;
  tc.seed = a.seed;
  if (a.epochs) tc.max_epochs = a.epochs;

  const scenarios::Dataset train = scenarios::read_dataset(split_path(a.data, "train"));
  scenarios::Dataset val;
  if (fs::is_directory(a.data) && fs::exists(split_path(a.data, "val"))) val = scenarios::read_dataset(split_path(a.data, "val"));

  const std::string log_path = a.log.empty() ? a.out + ".log.jsonl" : a.log;
  std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write training log '" + log_path + "'");
  const auto result = training::fit(pointers(train), pointers(val), mc, tc, [&](const training::EpochLog& e) {
    log << training::to_json(e).dump() << '\n' << std::flush;
    if (!a.quiet)
      std::fprintf(stderr, "epoch %zu  train_nll %.4f  val_nll %.4f  lr %.3g\n", e.epoch, e.train_nll, e.val_nll, e.lr);
  });
  model::save_checkpoint(a.out, result.best);
  if (!a.quiet) std::fprintf(stderr, "best epoch %zu, checkpoint %s\n", result.best_epoch, a.out.c_str());
  return 0;
}

int run_eval(const std::vector<std::string>& checkpoints, const std::string& data, const std::string& report) {
  std::vector<harness::ModelEntry> models;
  for (const std::string& path : checkpoints) models.push_back({path, model::load_checkpoint(path)});
  const scenarios::Dataset test = scenarios::read_dataset(split_path(data, "test"));
  const harness::EvalReport r = harness::compare(models, pointers(test));
  if (!report.empty()) write_text(report, harness::report_jsonl(r));
  std::cout << harness::report_table(r);
  return 0;
}

int run_predict(const std::string& checkpoint, const std::string& data, const std::string& id) {
  const model::Checkpoint ck = model::load_checkpoint(checkpoint);
  const scenarios::Dataset d = scenarios::read_dataset(split_path(data, "test"));
  const graph::TrackSample* s = scenarios::find_sample(d, id);
  if (!s) throw DomainError("no sample with id '" + id + "'");
  const model::RolloutResult r = model::predict(ck.params, ck.config, *s);
  nlohmann::json steps = nlohmann::json::array();
  for (std::size_t k = 0; k < r.trajectory.size(); ++k) {
    const auto& g = r.gaussians[k];
    steps.push_back({{"t", static_cast<double>(k + 1) * s->dt},
                     {"x", r.trajectory[k].x},
                     {"y", r.trajectory[k].y},
                     {"sigma_x", g.sigma.x},
                     {"sigma_y", g.sigma.y},
                     {"rho", g.rho}});
  }
  std::cout << nlohmann::json{{"sample_id", s->id}, {"model", model::model_name(ck.config.aggregator)}, {"steps", steps}}.dump()
            << '\n';
  return 0;
}

int run_attn(const std::string& checkpoint, const std::string& data, const std::string& out_dir,
             const std::string& kind, std::size_t limit) {
  const model::Checkpoint ck = model::load_checkpoint(checkpoint);
  const scenarios::Dataset d = scenarios::read_dataset(split_path(data, "test"));
  std::vector<const graph::TrackSample*> chosen;
  for (const auto& s : d.samples)
    if ((kind.empty() || s.kind == kind) && (limit == 0 || chosen.size() < limit)) chosen.push_back(&s);
  if (ck.config.aggregator != model::Aggregator::kAttention)
    std::fprintf(stderr, "note: %s checkpoint, weights are one-hot selections\n",
                 model::to_string(ck.config.aggregator).c_str());
  const auto traces = harness::export_attention(ck, chosen, out_dir);
  std::printf("wrote %zu attention traces to %s\n", traces.size(), out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lane-attention trajectory prediction"};
  app.require_subcommand(1);

  std::string counts = "2000", mix, out;
  double noise = 0.05;
  std::uint64_t gen_seed = 1;
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset (train/val/test .jsonl)");
  gen->add_option("--counts", counts, "TOTAL (split 6:2:2.5) or TRAIN,VAL,TEST")->capture_default_str();
  gen->add_option("--mix", mix, "kind=weight,... (default: 82% along-road)");
  gen->add_option("--noise-std", noise, "observation noise in meters")->capture_default_str();
  gen->add_option("--seed", gen_seed, "base seed")->capture_default_str();
  gen->add_option("--out", out, "output directory")->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train one model");
  train->add_option("--config", ta.config, "JSON file with optional \"model\" and \"train\" sections");
  train->add_option("--data", ta.data, "dataset directory or training file")->required();
  train->add_option("--out", ta.out, "checkpoint path")->required();
  train->add_option("--log", ta.log, "training log path (default: <out>.log.jsonl)");
  train->add_option("--aggregator", ta.aggregator, "attention | pooling | single-lane | none")->capture_default_str();
  train->add_option("--horizon", ta.horizon, "prediction horizon in seconds (1 or 3)")->capture_default_str();
  train->add_option("--seed", ta.seed, "initialization and shuffling seed")->capture_default_str();
  train->add_option("--epochs", ta.epochs, "override max_epochs");
  train->add_flag("--quiet", ta.quiet, "no per-epoch progress");

  std::vector<std::string> checkpoints;
  std::string data, report;
  auto* eval = app.add_subcommand("eval", "compare checkpoints against constant velocity");
  eval->add_option("--checkpoints", checkpoints, "checkpoint files")->required();
  eval->add_option("--data", data, "dataset directory or test file")->required();
  eval->add_option("--report", report, "JSON-lines report path");

  std::string checkpoint, sample_id;
  auto* predict = app.add_subcommand("predict", "predict one sample");
  predict->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  predict->add_option("--data", data, "dataset directory or file")->required();
  predict->add_option("--sample-id", sample_id, "sample id")->required();

  std::string out_dir, kind;
  std::size_t limit = 0;
  auto* attn = app.add_subcommand("attn", "export attention traces and SVG plots");
  attn->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  attn->add_option("--data", data, "dataset directory or file")->required();
  attn->add_option("--out-dir", out_dir, "output directory")->required();
  attn->add_option("--kind", kind, "only samples of this scenario kind");
  attn->add_option("--limit", limit, "at most this many samples (0 = all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "lanatt: error: %s\n", e.what());
    return 2;
  }

  try {
    if (*gen) return run_gen(counts, mix, noise, gen_seed, out);
    if (*train) return run_train(ta);
    if (*eval) return run_eval(checkpoints, data, report);
    if (*predict) return run_predict(checkpoint, data, sample_id);
    if (*attn) return run_attn(checkpoint, data, out_dir, kind, limit);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "lanatt: error: %s\n", e.what());
    return 1;
  }
  return 1;
}
