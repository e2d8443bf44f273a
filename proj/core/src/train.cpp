#include "stsgr/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

#include "json.hpp"
#include "stsgr/checkpoint.hpp"
#include "stsgr/metrics.hpp"

namespace stsgr {

using nlohmann::json;

std::string MetricsReport::to_json(bool include_wall_clock) const {
  json j;
  j["epoch_losses"] = epoch_losses;
  j["final_loss"] = final_loss;
  j["token_accuracy"] = token_accuracy;
  j["perplexity"] = perplexity;
  j["bleu4"] = bleu4_score;
  j["mean_retrieval_rank"] = mean_retrieval_rank;
  j["steps"] = steps;
  if (include_wall_clock) j["wall_clock_sec"] = wall_clock_sec;
  j["config"] = json::parse(config_json.empty() ? "{}" : config_json);
  return j.dump(2);
}

namespace {

// Validation loss in eval mode: the training objective over a fixed prefix
// of the dataset.
double validation_loss(DialogModel& model, const Dataset& data, std::size_t cap) {
  const ModelConfig& cfg = model.config();
  const std::size_t n = std::min<std::size_t>(cap, data.examples.size());
  std::span<const DialogExample> head(data.examples.data(), n);
  ForwardCtx ctx = model.make_ctx(false, nullptr);
  Tensor loss = cfg.task == TaskKind::Generate
                    ? model.generation_loss(head, data.labels, ctx)
                    : model.retrieval_batch_loss(head, data.labels, ctx);
  return loss.scalar_value();
}

std::vector<std::vector<double>> snapshot_values(std::vector<NamedParam>& params) {
  std::vector<std::vector<double>> snap;
  snap.reserve(params.size());
  for (auto& p : params) {
    auto v = p.tensor.values();
    snap.emplace_back(v.begin(), v.end());
  }
  return snap;
}

void restore_values(std::vector<NamedParam>& params,
                    const std::vector<std::vector<double>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto v = params[i].tensor.values_mut();
    std::copy(snap[i].begin(), snap[i].end(), v.begin());
  }
}

}  // namespace

TrainResult train_model(DialogModel& model, const Dataset& data) {
  const ModelConfig& cfg = model.config();
  if (data.examples.empty()) throw std::invalid_argument("train: dataset is empty");
  const auto t0 = std::chrono::steady_clock::now();

  std::mt19937_64 rng(cfg.seed);
  std::vector<NamedParam> params = model.parameters();
  Adam opt(params, AdamConfig{0.9, 0.98, 1e-9, cfg.lr_scale, cfg.warmup_steps, cfg.d_h});

  TrainResult result;
  result.report.config_json = config_to_json(cfg);

  double best_val = validation_loss(model, data, 64);
  auto best_snapshot = snapshot_values(params);
  result.report.final_loss = best_val;

  std::vector<std::size_t> order(data.examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::size_t step = 0;
  bool stop = false;
  for (std::size_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng() % i]);
    double epoch_loss = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t start = 0; start < order.size() && !stop; start += cfg.batch_size) {
      std::vector<DialogExample> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i)
        batch.push_back(data.examples[order[i]]);

      Tape tape;
      TapeScope scope(tape);
      ForwardCtx ctx = model.make_ctx(true, &rng);
      Tensor loss = cfg.task == TaskKind::Generate
                        ? model.generation_loss(batch, data.labels, ctx)
                        : model.retrieval_batch_loss(batch, data.labels, ctx);
      const double loss_value = loss.scalar_value();
      if (std::isnan(loss_value))
        throw std::runtime_error("train: loss diverged (NaN) at step " +
                                 std::to_string(step + 1));
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      ++step;
      result.step_losses.push_back(loss_value);
      epoch_loss += loss_value;
      ++epoch_batches;

      if (step % cfg.eval_every == 0) {
        const double val = validation_loss(model, data, 64);
        if (val < best_val) {
          best_val = val;
          best_snapshot = snapshot_values(params);
        }
      }
      if (cfg.max_steps > 0 && step >= cfg.max_steps) stop = true;
    }
    if (epoch_batches > 0)
      result.report.epoch_losses.push_back(epoch_loss / static_cast<double>(epoch_batches));
  }

  if (step > 0) {
    const double val = validation_loss(model, data, 64);
    if (val < best_val) {
      best_val = val;
      best_snapshot = snapshot_values(params);
    }
    restore_values(params, best_snapshot);
  }
  result.report.final_loss = best_val;
  result.report.steps = step;

  if (cfg.task == TaskKind::Generate) {
    GenerationEval ev = generation_eval(model, data);
    result.report.token_accuracy = ev.token_accuracy;
    result.report.perplexity = ev.perplexity;
  } else {
    result.report.mean_retrieval_rank = mean_retrieval_rank(model, data);
  }
  result.report.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

GenerationEval generation_eval(DialogModel& model, const Dataset& data) {
  if (data.examples.empty()) throw std::invalid_argument("eval: dataset is empty");
  GenerationEval out;
  std::size_t total = 0, correct = 0;
  double ce = 0.0;
  for (const DialogExample& ex : data.examples) {
    ForwardCtx ctx = model.make_ctx(false, nullptr);
    ModalitySources sources = model.encode_sources(ex, data.labels, ctx);
    const std::vector<int> prefix = model.prefix_ids(ex);
    const std::vector<int> targets = model.target_ids(ex);
    Tensor probs = model.prefix_distributions(sources, prefix, ctx);
    for (std::size_t t = 0; t < targets.size(); ++t) {
      const double* row = probs.values().data() + t * probs.cols();
      std::size_t argmax = 0;
      for (std::size_t u = 1; u < probs.cols(); ++u)
        if (row[u] > row[argmax]) argmax = u;
      if (argmax == static_cast<std::size_t>(targets[t])) ++correct;
      ce += -std::log(std::max(row[static_cast<std::size_t>(targets[t])], 1e-12));
      ++total;
    }
  }
  out.token_accuracy = static_cast<double>(correct) / static_cast<double>(total);
  out.loss = ce / static_cast<double>(total);
  out.perplexity = std::exp(out.loss);
  return out;
}

double corpus_bleu4(DialogModel& model, const Dataset& data) {
  std::vector<std::vector<std::string>> hyps, refs;
  for (const DialogExample& ex : data.examples) {
    ForwardCtx ctx = model.make_ctx(false, nullptr);
    ModalitySources sources = model.encode_sources(ex, data.labels, ctx);
    auto beams = model.generate(sources, model.config().beam_width,
                                model.config().max_answer_len);
    std::vector<std::string> hyp;
    if (!beams.empty())
      for (int id : beams[0].tokens)
        if (id != Vocabulary::kEos) hyp.push_back(model.vocab().decode(id));
    hyps.push_back(std::move(hyp));
    refs.push_back(ex.answer);
  }
  return bleu4(hyps, refs);
}

double mean_retrieval_rank(DialogModel& model, const Dataset& data) {
  if (data.examples.empty()) throw std::invalid_argument("eval: dataset is empty");
  double total_rank = 0.0;
  std::size_t counted = 0;
  for (const DialogExample& ex : data.examples) {
    if (!ex.has_candidates())
      throw std::invalid_argument("evaluate_retrieval: example '" + ex.video_id +
                                  "' is missing candidates");
    ForwardCtx ctx = model.make_ctx(false, nullptr);
    ModalitySources sources = model.encode_sources(ex, data.labels, ctx);
    std::vector<std::vector<int>> cand_ids;
    for (const auto& c : ex.candidates) cand_ids.push_back(model.vocab().encode(c));
    Tensor scores = model.retrieval_scores(sources, cand_ids, ctx);
    auto vals = scores.values();
    total_rank += static_cast<double>(retrieval_rank(
        std::span<const double>(vals.data(), vals.size()),
        static_cast<std::size_t>(ex.gt_index)));
    ++counted;
  }
  return total_rank / static_cast<double>(counted);
}

MetricsReport evaluate_generation(DialogModel& model, const Dataset& data, bool with_bleu) {
  const auto t0 = std::chrono::steady_clock::now();
  MetricsReport report;
  report.config_json = config_to_json(model.config());
  GenerationEval ev = generation_eval(model, data);
  report.final_loss = ev.loss;
  report.token_accuracy = ev.token_accuracy;
  report.perplexity = ev.perplexity;
  if (with_bleu) report.bleu4_score = corpus_bleu4(model, data);
  report.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

MetricsReport evaluate_retrieval(DialogModel& model, const Dataset& data) {
  const auto t0 = std::chrono::steady_clock::now();
  MetricsReport report;
  report.config_json = config_to_json(model.config());
  report.mean_retrieval_rank = mean_retrieval_rank(model, data);
  report.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

namespace {

constexpr char kConfigPrefix[] = "config.";

std::vector<NamedParam> config_records(const ModelConfig& cfg, std::size_t vocab_size,
                                       std::size_t label_words) {
  auto rec = [](const std::string& name, double v) {
    return NamedParam{std::string(kConfigPrefix) + name, Tensor({1}, {v})};
  };
  std::vector<NamedParam> out;
  out.push_back(rec("d_h", static_cast<double>(cfg.d_h)));
  out.push_back(rec("d_ff", static_cast<double>(cfg.d_ff)));
  out.push_back(rec("heads", static_cast<double>(cfg.heads)));
  out.push_back(rec("tau", static_cast<double>(cfg.tau)));
  out.push_back(rec("gat_layers", static_cast<double>(cfg.gat_layers)));
  out.push_back(rec("edgeconv_layers", static_cast<double>(cfg.edgeconv_layers)));
  out.push_back(rec("shuffle_mode", static_cast<double>(static_cast<int>(cfg.shuffle_mode))));
  out.push_back(rec("shuffle_segments", static_cast<double>(cfg.shuffle_segments)));
  out.push_back(rec("dropout", cfg.dropout));
  out.push_back(rec("label_smoothing", cfg.label_smoothing));
  out.push_back(rec("beam_width", static_cast<double>(cfg.beam_width)));
  out.push_back(rec("max_answer_len", static_cast<double>(cfg.max_answer_len)));
  out.push_back(rec("history_turns", static_cast<double>(cfg.history_turns)));
  out.push_back(rec("seed_lo", static_cast<double>(cfg.seed & 0xffffffffULL)));
  out.push_back(rec("seed_hi", static_cast<double>(cfg.seed >> 32)));
  out.push_back(rec("d_vis", static_cast<double>(cfg.d_vis)));
  out.push_back(rec("d_label", static_cast<double>(cfg.d_label)));
  out.push_back(rec("d_audio", static_cast<double>(cfg.d_audio)));
  out.push_back(rec("min_count", static_cast<double>(cfg.min_count)));
  out.push_back(rec("batch_size", static_cast<double>(cfg.batch_size)));
  out.push_back(rec("warmup_steps", static_cast<double>(cfg.warmup_steps)));
  out.push_back(rec("epochs", static_cast<double>(cfg.epochs)));
  out.push_back(rec("max_steps", static_cast<double>(cfg.max_steps)));
  out.push_back(rec("lr_scale", cfg.lr_scale));
  out.push_back(rec("eval_every", static_cast<double>(cfg.eval_every)));
  out.push_back(rec("use_residual_ln", cfg.use_residual_ln ? 1.0 : 0.0));
  out.push_back(rec("use_gat", cfg.use_gat ? 1.0 : 0.0));
  out.push_back(rec("use_edgeconv", cfg.use_edgeconv ? 1.0 : 0.0));
  out.push_back(rec("use_union_nodes", cfg.use_union_nodes ? 1.0 : 0.0));
  out.push_back(rec("use_audio", cfg.use_audio ? 1.0 : 0.0));
  out.push_back(rec("retrieval_coattention", cfg.retrieval_coattention ? 1.0 : 0.0));
  out.push_back(rec("task", cfg.task == TaskKind::Generate ? 0.0 : 1.0));
  out.push_back(rec("vocab_size", static_cast<double>(vocab_size)));
  out.push_back(rec("label_words", static_cast<double>(label_words)));
  return out;
}

}  // namespace

void save_model(const std::string& path, DialogModel& model) {
  std::vector<NamedParam> records =
      config_records(model.config(), model.vocab_size(), model.label_word_count());
  for (auto& p : model.parameters()) records.push_back(p);
  save_checkpoint(path, records);
}

DialogModel load_model(const std::string& path, Vocabulary vocab) {
  auto records = load_checkpoint(path);
  std::map<std::string, double> cv;
  for (const auto& r : records)
    if (r.name.rfind(kConfigPrefix, 0) == 0)
      cv[r.name.substr(sizeof(kConfigPrefix) - 1)] = r.tensor.values()[0];
  auto get = [&](const std::string& k) {
    auto it = cv.find(k);
    if (it == cv.end())
      throw std::runtime_error("checkpoint: missing config record '" + k + "' in " + path);
    return it->second;
  };
  ModelConfig cfg;
  cfg.d_h = static_cast<std::size_t>(get("d_h"));
  cfg.d_ff = static_cast<std::size_t>(get("d_ff"));
  cfg.heads = static_cast<std::size_t>(get("heads"));
  cfg.tau = static_cast<std::size_t>(get("tau"));
  cfg.gat_layers = static_cast<std::size_t>(get("gat_layers"));
  cfg.edgeconv_layers = static_cast<std::size_t>(get("edgeconv_layers"));
  cfg.shuffle_mode = static_cast<ShuffleMode>(static_cast<int>(get("shuffle_mode")));
  cfg.shuffle_segments = static_cast<std::size_t>(get("shuffle_segments"));
  cfg.dropout = get("dropout");
  cfg.label_smoothing = get("label_smoothing");
  cfg.beam_width = static_cast<std::size_t>(get("beam_width"));
  cfg.max_answer_len = static_cast<std::size_t>(get("max_answer_len"));
  cfg.history_turns = static_cast<std::size_t>(get("history_turns"));
  cfg.seed = static_cast<std::uint64_t>(get("seed_lo")) |
             (static_cast<std::uint64_t>(get("seed_hi")) << 32);
  cfg.d_vis = static_cast<std::size_t>(get("d_vis"));
  cfg.d_label = static_cast<std::size_t>(get("d_label"));
  cfg.d_audio = static_cast<std::size_t>(get("d_audio"));
  cfg.min_count = static_cast<std::size_t>(get("min_count"));
  cfg.batch_size = static_cast<std::size_t>(get("batch_size"));
  cfg.warmup_steps = static_cast<std::size_t>(get("warmup_steps"));
  cfg.epochs = static_cast<std::size_t>(get("epochs"));
  cfg.max_steps = static_cast<std::size_t>(get("max_steps"));
  cfg.lr_scale = get("lr_scale");
  cfg.eval_every = static_cast<std::size_t>(get("eval_every"));
  cfg.use_residual_ln = get("use_residual_ln") != 0.0;
  cfg.use_gat = get("use_gat") != 0.0;
  cfg.use_edgeconv = get("use_edgeconv") != 0.0;
  cfg.use_union_nodes = get("use_union_nodes") != 0.0;
  cfg.use_audio = get("use_audio") != 0.0;
  cfg.retrieval_coattention = get("retrieval_coattention") != 0.0;
  cfg.task = get("task") == 0.0 ? TaskKind::Generate : TaskKind::Retrieve;

  const std::size_t vocab_size = static_cast<std::size_t>(get("vocab_size"));
  const std::size_t label_words = static_cast<std::size_t>(get("label_words"));
  if (vocab.size() != vocab_size)
    throw std::runtime_error("checkpoint: vocabulary size " + std::to_string(vocab.size()) +
                             " does not match checkpoint (" + std::to_string(vocab_size) + ")");
  DialogModel model(cfg, std::move(vocab), label_words);
  std::map<std::string, Tensor> by_name;
  for (auto& r : records)
    if (r.name.rfind(kConfigPrefix, 0) != 0) by_name.emplace(r.name, r.tensor);
  for (auto& p : model.parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint: missing parameter '" + p.name + "' in " + path);
    if (it->second.shape() != p.tensor.shape())
      throw std::runtime_error("checkpoint: shape mismatch for '" + p.name + "'");
    auto dst = p.tensor.values_mut();
    auto src = it->second.values();
    std::copy(src.begin(), src.end(), dst.begin());
    by_name.erase(it);
  }
  if (!by_name.empty())
    throw std::runtime_error("checkpoint: unexpected extra parameter '" +
                             by_name.begin()->first + "' in " + path);
  return model;
}

std::vector<AblationRow> run_ablation(const ModelConfig& base, const Dataset& train_data,
                                      const Dataset& eval_data) {
  struct Switch {
    const char* name;
    void (*apply)(ModelConfig&);
  };
  const Switch switches[] = {
      {"full model", [](ModelConfig&) {}},
      {"w/o shuffle", [](ModelConfig& c) { c.shuffle_mode = ShuffleMode::Off; }},
      {"w/o GAT", [](ModelConfig& c) { c.use_gat = false; }},
      {"w/o EdgeConv", [](ModelConfig& c) { c.use_edgeconv = false; }},
      {"w/o union box", [](ModelConfig& c) { c.use_union_nodes = false; }},
      {"w/o temporal", [](ModelConfig& c) { c.tau = 1; }},
      {"+ audio", [](ModelConfig& c) { c.use_audio = true; }},
  };
  bool has_audio = true;
  for (const auto& ex : train_data.examples) has_audio = has_audio && !ex.audio.empty();
  if (!has_audio)
    throw std::invalid_argument("ablate: the '+ audio' row needs audio.jsonl in the dataset");

  auto corpus = text_corpus(train_data.examples);
  Vocabulary vocab = build_vocab(corpus, base.min_count);

  std::vector<AblationRow> rows;
  for (const Switch& sw : switches) {
    ModelConfig cfg = base;
    cfg.use_audio = false;  // rows ablate from the audio-free full model
    sw.apply(cfg);
    DialogModel model(cfg, vocab, train_data.labels.word_count);
    TrainResult tr = train_model(model, train_data);
    AblationRow row;
    row.name = sw.name;
    row.config = cfg;
    row.train_loss = tr.report.epoch_losses.empty() ? tr.report.final_loss
                                                    : tr.report.epoch_losses.back();
    GenerationEval ev = generation_eval(model, eval_data);
    row.eval_loss = ev.loss;
    row.token_accuracy = ev.token_accuracy;
    row.bleu4_score = corpus_bleu4(model, eval_data);
    row.steps = tr.report.steps;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_table_text(std::span<const AblationRow> rows) {
  std::ostringstream os;
  os << "model                 train_loss  eval_loss  token_acc  bleu4\n";
  for (const auto& r : rows) {
    os << r.name;
    for (std::size_t i = r.name.size(); i < 22; ++i) os << ' ';
    char buf[80];
    std::snprintf(buf, sizeof(buf), "%10.4f %10.4f %10.4f %6.3f\n", r.train_loss,
                  r.eval_loss, r.token_accuracy, r.bleu4_score);
    os << buf;
  }
  return os.str();
}

std::string ablation_table_json(std::span<const AblationRow> rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    json j;
    j["name"] = r.name;
    j["train_loss"] = r.train_loss;
    j["eval_loss"] = r.eval_loss;
    j["token_accuracy"] = r.token_accuracy;
    j["bleu4"] = r.bleu4_score;
    j["steps"] = r.steps;
    j["config"] = json::parse(config_to_json(r.config));
    arr.push_back(j);
  }
  return arr.dump(2);
}

}  // namespace stsgr
