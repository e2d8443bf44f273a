#include "stsgr/data.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace stsgr {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      tokens.push_back(word);
      word.clear();
    }
  };
  for (unsigned char c : text) {
    const char lc = static_cast<char>(std::tolower(c));
    if (std::isspace(c)) {
      flush();
    } else if (std::isalnum(c)) {
      word.push_back(lc);
    } else {
      flush();
      tokens.emplace_back(1, lc);
    }
  }
  flush();
  return tokens;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

int Vocabulary::encode(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(encode(t));
  return ids;
}

const std::string& Vocabulary::decode(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token.size())
    throw std::invalid_argument("vocabulary: id " + std::to_string(id) + " out of range");
  return id_to_token[static_cast<std::size_t>(id)];
}

Vocabulary build_vocab(std::span<const std::vector<std::string>> sentences,
                       std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : sentences)
    for (const auto& t : s) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, c] : counts)
    if (c >= min_count) kept.emplace_back(tok, c);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  v.min_count = min_count;
  v.id_to_token = {"<pad>", "<sos>", "<eos>", "<unk>"};
  for (const auto& [tok, c] : kept) {
    v.token_to_id.emplace(tok, static_cast<int>(v.id_to_token.size()));
    v.id_to_token.push_back(tok);
  }
  return v;
}

void save_vocab(const std::string& path, const Vocabulary& v) {
  json j;
  j["format"] = "stsgr-v1";
  j["min_count"] = v.min_count;
  j["tokens"] = std::vector<std::string>(v.id_to_token.begin() + 4, v.id_to_token.end());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("vocab: cannot open " + path + " for writing");
  os << j.dump() << "\n";
}

Vocabulary load_vocab(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("vocab: cannot open " + path);
  json j;
  is >> j;
  Vocabulary v;
  v.min_count = j.value("min_count", std::size_t{5});
  v.id_to_token = {"<pad>", "<sos>", "<eos>", "<unk>"};
  for (const auto& t : j.at("tokens")) {
    v.token_to_id.emplace(t.get<std::string>(), static_cast<int>(v.id_to_token.size()));
    v.id_to_token.push_back(t.get<std::string>());
  }
  return v;
}

LoadError::LoadError(const std::string& file, std::size_t line, const std::string& field,
                     const std::string& what)
    : std::runtime_error(file + ":" + std::to_string(line) + ": field '" + field + "': " +
                         what) {}

namespace {

json parse_line(const std::string& file, std::size_t line_no, const std::string& line) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw LoadError(file, line_no, "<json>", e.what());
  }
}

void check_format(const json& j, const std::string& file, std::size_t line_no) {
  if (!j.contains("format") || j["format"] != "stsgr-v1")
    throw LoadError(file, line_no, "format", "expected \"stsgr-v1\"");
}

template <typename T>
T get_field(const json& j, const char* key, const std::string& file, std::size_t line_no) {
  if (!j.contains(key)) throw LoadError(file, line_no, key, "missing");
  try {
    return j[key].get<T>();
  } catch (const json::exception& e) {
    throw LoadError(file, line_no, key, e.what());
  }
}

struct GraphRecord {
  SceneGraph graph;
  std::string video_id;
  std::size_t line_no;
};

}  // namespace

Dataset load_dataset(const std::string& dir) {
  Dataset data;

  // labels.json is optional: id -> label text for the semantic vocabulary.
  const fs::path labels_path = fs::path(dir) / "labels.json";
  if (fs::exists(labels_path)) {
    std::ifstream is(labels_path);
    json j;
    try {
      is >> j;
    } catch (const json::exception& e) {
      throw LoadError("labels.json", 1, "<json>", e.what());
    }
    check_format(j, "labels.json", 1);
    data.labels = LabelVocab::from_names(
        get_field<std::vector<std::string>>(j, "labels", "labels.json", 1));
  }

  // scene_graphs.jsonl, grouped by video id.
  std::map<std::string, std::vector<GraphRecord>> graphs_by_video;
  {
    const fs::path path = fs::path(dir) / "scene_graphs.jsonl";
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_dataset: cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      if (line.empty()) continue;
      json j = parse_line("scene_graphs.jsonl", line_no, line);
      check_format(j, "scene_graphs.jsonl", line_no);
      GraphRecord rec;
      rec.video_id = get_field<std::string>(j, "video_id", "scene_graphs.jsonl", line_no);
      rec.line_no = line_no;
      rec.graph.frame_index = get_field<int>(j, "frame", "scene_graphs.jsonl", line_no);
      auto nodes =
          get_field<std::vector<std::vector<double>>>(j, "nodes", "scene_graphs.jsonl", line_no);
      if (nodes.empty())
        throw LoadError("scene_graphs.jsonl", line_no, "nodes", "frame has no nodes");
      const std::size_t width = nodes[0].size();
      std::vector<double> flat;
      flat.reserve(nodes.size() * width);
      for (const auto& row : nodes) {
        if (row.size() != width)
          throw LoadError("scene_graphs.jsonl", line_no, "nodes",
                          "ragged node feature rows");
        flat.insert(flat.end(), row.begin(), row.end());
      }
      rec.graph.node_features = Tensor::matrix(nodes.size(), width, std::move(flat));
      for (const auto& e : get_field<std::vector<std::vector<int>>>(j, "edges",
                                                                    "scene_graphs.jsonl",
                                                                    line_no)) {
        if (e.size() != 2)
          throw LoadError("scene_graphs.jsonl", line_no, "edges", "edge must be a pair");
        rec.graph.edges.emplace_back(e[0], e[1]);
      }
      if (j.contains("labels"))
        rec.graph.label_ids =
            get_field<std::vector<int>>(j, "labels", "scene_graphs.jsonl", line_no);
      if (j.contains("union_flags")) {
        auto flags =
            get_field<std::vector<bool>>(j, "union_flags", "scene_graphs.jsonl", line_no);
        rec.graph.union_node_flags.assign(flags.begin(), flags.end());
      }
      try {
        rec.graph.validate();
      } catch (const std::exception& e) {
        throw LoadError("scene_graphs.jsonl", line_no, "graph",
                        std::string(e.what()) + " (frame " +
                            std::to_string(rec.graph.frame_index) + ")");
      }
      for (int id : rec.graph.label_ids)
        if (id >= 0 && !data.labels.empty() &&
            static_cast<std::size_t>(id) >= data.labels.names.size())
          throw LoadError("scene_graphs.jsonl", line_no, "labels",
                          "label id " + std::to_string(id) + " out of range");
      graphs_by_video[rec.video_id].push_back(std::move(rec));
    }
  }
  for (auto& [vid, recs] : graphs_by_video) {
    std::sort(recs.begin(), recs.end(), [](const GraphRecord& a, const GraphRecord& b) {
      return a.graph.frame_index < b.graph.frame_index;
    });
    for (std::size_t i = 0; i < recs.size(); ++i)
      if (recs[i].graph.frame_index != static_cast<int>(i))
        throw LoadError("scene_graphs.jsonl", recs[i].line_no, "frame",
                        "video '" + vid + "' frames are not a contiguous 0..L-1 range");
  }

  // audio.jsonl is optional.
  std::map<std::string, std::vector<std::vector<double>>> audio_by_video;
  {
    const fs::path path = fs::path(dir) / "audio.jsonl";
    if (fs::exists(path)) {
      std::ifstream is(path);
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = parse_line("audio.jsonl", line_no, line);
        check_format(j, "audio.jsonl", line_no);
        auto vid = get_field<std::string>(j, "video_id", "audio.jsonl", line_no);
        auto frames =
            get_field<std::vector<std::vector<double>>>(j, "frames", "audio.jsonl", line_no);
        auto git = graphs_by_video.find(vid);
        if (git == graphs_by_video.end())
          throw LoadError("audio.jsonl", line_no, "video_id",
                          "video '" + vid + "' has no scene graphs");
        if (frames.size() != git->second.size())
          throw LoadError("audio.jsonl", line_no, "frames",
                          "video '" + vid + "' has " + std::to_string(frames.size()) +
                              " audio frames but " + std::to_string(git->second.size()) +
                              " video frames");
        audio_by_video.emplace(vid, std::move(frames));
      }
    }
  }

  // dialogs.jsonl drives the example list.
  {
    const fs::path path = fs::path(dir) / "dialogs.jsonl";
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_dataset: cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      if (line.empty()) continue;
      json j = parse_line("dialogs.jsonl", line_no, line);
      check_format(j, "dialogs.jsonl", line_no);
      DialogExample ex;
      ex.video_id = get_field<std::string>(j, "video_id", "dialogs.jsonl", line_no);
      ex.caption = tokenize(get_field<std::string>(j, "caption", "dialogs.jsonl", line_no));
      for (const auto& turn : get_field<std::vector<std::vector<std::string>>>(
               j, "history", "dialogs.jsonl", line_no)) {
        if (turn.size() != 2)
          throw LoadError("dialogs.jsonl", line_no, "history", "turn must be a [q, a] pair");
        ex.history.push_back({tokenize(turn[0]), tokenize(turn[1])});
      }
      ex.question = tokenize(get_field<std::string>(j, "question", "dialogs.jsonl", line_no));
      ex.answer = tokenize(get_field<std::string>(j, "answer", "dialogs.jsonl", line_no));
      if (ex.answer.empty())
        throw LoadError("dialogs.jsonl", line_no, "answer", "answer is empty");
      if (ex.question.empty())
        throw LoadError("dialogs.jsonl", line_no, "question", "question is empty");
      if (ex.caption.empty())
        throw LoadError("dialogs.jsonl", line_no, "caption", "caption is empty");
      if (j.contains("candidates")) {
        for (const auto& c :
             get_field<std::vector<std::string>>(j, "candidates", "dialogs.jsonl", line_no))
          ex.candidates.push_back(tokenize(c));
        ex.gt_index = get_field<int>(j, "gt_index", "dialogs.jsonl", line_no);
        if (ex.gt_index < 0 || static_cast<std::size_t>(ex.gt_index) >= ex.candidates.size())
          throw LoadError("dialogs.jsonl", line_no, "gt_index",
                          std::to_string(ex.gt_index) + " out of range for " +
                              std::to_string(ex.candidates.size()) + " candidates");
        if (ex.candidates.size() < 2)
          throw LoadError("dialogs.jsonl", line_no, "candidates", "need at least 2");
      }
      auto git = graphs_by_video.find(ex.video_id);
      if (git == graphs_by_video.end())
        throw LoadError("dialogs.jsonl", line_no, "video_id",
                        "video '" + ex.video_id + "' has no scene graphs");
      for (auto& rec : git->second) ex.scene_graphs.push_back(rec.graph);
      auto ait = audio_by_video.find(ex.video_id);
      if (ait != audio_by_video.end()) ex.audio = ait->second;
      data.examples.push_back(std::move(ex));
    }
  }
  return data;
}

void save_dataset(const std::string& dir, const Dataset& data) {
  fs::create_directories(dir);
  std::map<std::string, const DialogExample*> by_video;
  for (const auto& ex : data.examples)
    by_video.emplace(ex.video_id, &ex);  // graphs/audio written once per video

  {
    std::ofstream os(fs::path(dir) / "dialogs.jsonl");
    for (const auto& ex : data.examples) {
      json j;
      j["format"] = "stsgr-v1";
      j["video_id"] = ex.video_id;
      j["caption"] = detokenize(ex.caption);
      json hist = json::array();
      for (const auto& t : ex.history)
        hist.push_back({detokenize(t.question), detokenize(t.answer)});
      j["history"] = hist;
      j["question"] = detokenize(ex.question);
      j["answer"] = detokenize(ex.answer);
      if (ex.has_candidates()) {
        json cands = json::array();
        for (const auto& c : ex.candidates) cands.push_back(detokenize(c));
        j["candidates"] = cands;
        j["gt_index"] = ex.gt_index;
      }
      os << j.dump() << "\n";
    }
  }
  {
    std::ofstream os(fs::path(dir) / "scene_graphs.jsonl");
    for (const auto& [vid, ex] : by_video) {
      for (const auto& g : ex->scene_graphs) {
        json j;
        j["format"] = "stsgr-v1";
        j["video_id"] = vid;
        j["frame"] = g.frame_index;
        json nodes = json::array();
        for (std::size_t i = 0; i < g.node_count(); ++i) {
          json row = json::array();
          for (std::size_t c = 0; c < g.node_features.cols(); ++c)
            row.push_back(g.node_features.at(i, c));
          nodes.push_back(row);
        }
        j["nodes"] = nodes;
        json edges = json::array();
        for (const auto& [a, b] : g.edges) edges.push_back({a, b});
        j["edges"] = edges;
        if (!g.label_ids.empty()) j["labels"] = g.label_ids;
        if (!g.union_node_flags.empty()) {
          json flags = json::array();
          for (bool f : g.union_node_flags) flags.push_back(f);
          j["union_flags"] = flags;
        }
        os << j.dump() << "\n";
      }
    }
  }
  bool any_audio = false;
  for (const auto& [vid, ex] : by_video) any_audio = any_audio || !ex->audio.empty();
  if (any_audio) {
    std::ofstream os(fs::path(dir) / "audio.jsonl");
    for (const auto& [vid, ex] : by_video) {
      if (ex->audio.empty()) continue;
      json j;
      j["format"] = "stsgr-v1";
      j["video_id"] = vid;
      j["frames"] = ex->audio;
      os << j.dump() << "\n";
    }
  }
  if (!data.labels.empty()) {
    std::ofstream os(fs::path(dir) / "labels.json");
    json j;
    j["format"] = "stsgr-v1";
    j["labels"] = data.labels.names;
    os << j.dump() << "\n";
  }
}

std::vector<std::vector<std::string>> text_corpus(std::span<const DialogExample> examples) {
  std::vector<std::vector<std::string>> corpus;
  for (const auto& ex : examples) {
    corpus.push_back(ex.caption);
    for (const auto& t : ex.history) {
      corpus.push_back(t.question);
      corpus.push_back(t.answer);
    }
    corpus.push_back(ex.question);
    corpus.push_back(ex.answer);
    for (const auto& c : ex.candidates) corpus.push_back(c);
  }
  return corpus;
}

}  // namespace stsgr
