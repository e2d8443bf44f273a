#pragma once

#include <map>
#include <string>
#include <vector>

#include "stsgr/graph.hpp"

namespace stsgr {

// Lowercase, split on whitespace; every non-alphanumeric character becomes
// its own token. detokenize joins with single spaces, so the pair is an
// identity on normalized text.
std::vector<std::string> tokenize(const std::string& text);
std::string detokenize(std::span<const std::string> tokens);

struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kSos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  std::vector<std::string> id_to_token;  // reserved entries occupy ids 0..3
  std::map<std::string, int> token_to_id;
  std::size_t min_count = 5;

  std::size_t size() const { return id_to_token.size(); }
  int encode(const std::string& token) const;
  std::vector<int> encode(std::span<const std::string> tokens) const;
  const std::string& decode(int id) const;
};

// Tokens below min_count map to unk; ids are assigned by descending
// frequency, ties broken lexicographically.
Vocabulary build_vocab(std::span<const std::vector<std::string>> sentences,
                       std::size_t min_count = 5);

void save_vocab(const std::string& path, const Vocabulary& v);
Vocabulary load_vocab(const std::string& path);

struct DialogTurn {
  std::vector<std::string> question, answer;
};

struct DialogExample {
  std::string video_id;
  std::vector<SceneGraph> scene_graphs;
  std::vector<std::vector<double>> audio;  // empty when absent
  std::vector<std::string> caption;
  std::vector<DialogTurn> history;
  std::vector<std::string> question;
  std::vector<std::string> answer;
  std::vector<std::vector<std::string>> candidates;  // empty when absent
  int gt_index = -1;

  bool has_candidates() const { return !candidates.empty(); }
};

struct Dataset {
  std::vector<DialogExample> examples;
  LabelVocab labels;
};

struct LoadError : std::runtime_error {
  LoadError(const std::string& file, std::size_t line, const std::string& field,
            const std::string& what);
};

// Reads dialogs.jsonl + scene_graphs.jsonl (+ optional audio.jsonl,
// labels.json) from a directory, validating every invariant and the frame
// alignment across files.
Dataset load_dataset(const std::string& dir);
void save_dataset(const std::string& dir, const Dataset& data);

// Corpus for vocabulary construction: caption, history, question, answer,
// and candidate sentences of every example.
std::vector<std::vector<std::string>> text_corpus(std::span<const DialogExample> examples);

}  // namespace stsgr
