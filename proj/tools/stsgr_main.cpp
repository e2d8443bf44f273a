#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "stsgr/gradsuite.hpp"
#include "stsgr/synth.hpp"
#include "stsgr/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitValidation = 2;

struct SeedOpt {
  std::uint64_t value = 0;
  bool set = false;
};

void add_seed(CLI::App* cmd, SeedOpt& seed) {
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&seed](std::uint64_t v) { seed.value = v; seed.set = true; },
      "override the configured rng seed");
}

int cmd_synth(const std::string& spec_path, std::size_t n, const std::string& out,
              const SeedOpt& seed) {
  stsgr::SyntheticTaskSpec spec = stsgr::SyntheticTaskSpec::from_json_file(spec_path);
  if (seed.set) spec.seed = seed.value;
  stsgr::Dataset data = stsgr::synthesize(spec, n);
  stsgr::save_dataset(out, data);
  std::cout << "wrote " << data.examples.size() << " examples to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out, const SeedOpt& seed) {
  stsgr::ModelConfig cfg = stsgr::config_from_json_file(config_path);
  if (seed.set) cfg.seed = seed.value;
  stsgr::Dataset data = stsgr::load_dataset(data_dir);
  stsgr::Vocabulary vocab =
      stsgr::build_vocab(stsgr::text_corpus(data.examples), cfg.min_count);
  stsgr::DialogModel model(cfg, vocab, data.labels.word_count);
  stsgr::TrainResult result = stsgr::train_model(model, data);

  fs::create_directories(out);
  stsgr::save_model((fs::path(out) / "model.ckpt").string(), model);
  stsgr::save_vocab((fs::path(out) / "vocab.json").string(), model.vocab());
  std::ofstream metrics(fs::path(out) / "metrics.json");
  metrics << result.report.to_json() << "\n";
  std::cout << result.report.to_json() << "\n";
  return 0;
}

stsgr::DialogModel load_for_eval(const std::string& checkpoint,
                                 const std::string& data_dir, const stsgr::Dataset& data) {
  const fs::path vocab_path = fs::path(checkpoint).parent_path() / "vocab.json";
  stsgr::Vocabulary vocab;
  if (fs::exists(vocab_path)) {
    vocab = stsgr::load_vocab(vocab_path.string());
  } else {
    // fall back to rebuilding from the dataset (build_vocab is deterministic)
    auto records = stsgr::load_checkpoint(checkpoint);
    std::size_t min_count = 5;
    for (const auto& r : records)
      if (r.name == "config.min_count")
        min_count = static_cast<std::size_t>(r.tensor.values()[0]);
    vocab = stsgr::build_vocab(stsgr::text_corpus(data.examples), min_count);
    (void)data_dir;
  }
  return stsgr::load_model(checkpoint, std::move(vocab));
}

int cmd_eval(const std::string& task, const std::string& checkpoint,
             const std::string& data_dir, const std::string& out) {
  stsgr::Dataset data = stsgr::load_dataset(data_dir);
  stsgr::DialogModel model = load_for_eval(checkpoint, data_dir, data);
  std::ofstream lines_out;
  if (!out.empty()) {
    fs::create_directories(out);
    lines_out.open(fs::path(out) / (task == "generate" ? "generations.jsonl"
                                                       : "rankings.jsonl"));
  }

  if (task == "generate") {
    stsgr::MetricsReport report = stsgr::evaluate_generation(model, data);
    if (lines_out.is_open()) {
      for (const auto& ex : data.examples) {
        stsgr::ForwardCtx ctx = model.make_ctx(false, nullptr);
        auto sources = model.encode_sources(ex, data.labels, ctx);
        auto beams = model.generate(sources, model.config().beam_width,
                                    model.config().max_answer_len);
        json j;
        j["dialog_id"] = ex.video_id;
        j["turn"] = ex.history.size() + 1;
        j["question"] = stsgr::detokenize(ex.question);
        json answers = json::array();
        for (const auto& b : beams) {
          std::vector<std::string> toks;
          for (int id : b.tokens)
            if (id != stsgr::Vocabulary::kEos) toks.push_back(model.vocab().decode(id));
          answers.push_back({{"text", stsgr::detokenize(toks)},
                             {"score", std::exp(b.normalized)}});
        }
        j["top_answers"] = answers;
        lines_out << j.dump() << "\n";
      }
    }
    std::cout << report.to_json() << "\n";
    return 0;
  }

  stsgr::MetricsReport report = stsgr::evaluate_retrieval(model, data);
  if (lines_out.is_open()) {
    for (const auto& ex : data.examples) {
      stsgr::ForwardCtx ctx = model.make_ctx(false, nullptr);
      auto sources = model.encode_sources(ex, data.labels, ctx);
      std::vector<std::vector<int>> cand_ids;
      for (const auto& c : ex.candidates) cand_ids.push_back(model.vocab().encode(c));
      stsgr::Tensor scores = model.retrieval_scores(sources, cand_ids, ctx);
      auto vals = scores.values();
      std::vector<std::size_t> order(vals.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(),
                [&](std::size_t a, std::size_t b) { return vals[a] > vals[b]; });
      json j;
      j["dialog_id"] = ex.video_id;
      j["turn"] = ex.history.size() + 1;
      j["question"] = stsgr::detokenize(ex.question);
      json ranked = json::array();
      for (std::size_t r = 0; r < order.size(); ++r)
        ranked.push_back({{"text", stsgr::detokenize(ex.candidates[order[r]])},
                          {"score", 1.0 / (1.0 + std::exp(-vals[order[r]]))},
                          {"rank", r + 1}});
      j["ranked_candidates"] = ranked;
      j["gt_rank"] = stsgr::retrieval_rank(
          std::span<const double>(vals.data(), vals.size()),
          static_cast<std::size_t>(ex.gt_index));
      lines_out << j.dump() << "\n";
    }
  }
  std::cout << report.to_json() << "\n";
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& data_dir,
               const std::string& out, const SeedOpt& seed) {
  stsgr::ModelConfig cfg = stsgr::config_from_json_file(config_path);
  if (seed.set) cfg.seed = seed.value;
  stsgr::Dataset data = stsgr::load_dataset(data_dir);
  // deterministic 80/20 split by example index
  stsgr::Dataset train_data, eval_data;
  train_data.labels = eval_data.labels = data.labels;
  for (std::size_t i = 0; i < data.examples.size(); ++i)
    (i % 5 == 4 ? eval_data : train_data).examples.push_back(data.examples[i]);
  if (train_data.examples.empty() || eval_data.examples.empty())
    throw std::invalid_argument("ablate: need at least 5 examples for the 80/20 split");
  auto rows = stsgr::run_ablation(cfg, train_data, eval_data);
  std::cout << stsgr::ablation_table_text(rows);
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream os(fs::path(out) / "ablation.json");
    os << stsgr::ablation_table_json(rows) << "\n";
  }
  return 0;
}

int cmd_gradcheck(std::size_t d_h, const SeedOpt& seed) {
  const std::uint64_t s = seed.set ? seed.value : 7;
  auto checks = stsgr::run_gradient_suite(d_h, s);
  bool ok = true;
  for (const auto& c : checks) {
    std::printf("%-18s max_rel_err %.3e  %s\n", c.module.c_str(), c.report.max_rel_err,
                c.report.within(1e-4) ? "ok" : "FAIL");
    ok = ok && c.report.within(1e-4);
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"video-dialog reasoning over scene graphs: train, evaluate, synthesize"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, spec_path, checkpoint, task;
  std::size_t n = 0, d_h = 8;
  SeedOpt seed;

  CLI::App* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config_path, "flat JSON config file")->required();
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  add_seed(train, seed);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--task", task, "generate or retrieve")
      ->required()
      ->check(CLI::IsMember({"generate", "retrieve"}));
  eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--out", out_dir, "directory for per-example outputs");
  add_seed(eval, seed);

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--spec", spec_path, "task spec JSON")->required();
  synth->add_option("--n", n, "number of examples")->required();
  synth->add_option("--out", out_dir, "output directory")->required();
  add_seed(synth, seed);

  CLI::App* ablate = app.add_subcommand("ablate", "run the ablation table");
  ablate->add_option("--config", config_path, "flat JSON config file")->required();
  ablate->add_option("--data", data_dir, "dataset directory")->required();
  ablate->add_option("--out", out_dir, "directory for ablation.json");
  add_seed(ablate, seed);

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--dh", d_h, "model dimension")->required();
  add_seed(gradcheck, seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, data_dir, out_dir, seed);
    if (eval->parsed()) return cmd_eval(task, checkpoint, data_dir, out_dir);
    if (synth->parsed()) return cmd_synth(spec_path, n, out_dir, seed);
    if (ablate->parsed()) return cmd_ablate(config_path, data_dir, out_dir, seed);
    if (gradcheck->parsed()) return cmd_gradcheck(d_h, seed);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const stsgr::LoadError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
