#include "stsgr/synth.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace stsgr {

using nlohmann::json;

const std::vector<std::string>& number_words() {
  static const std::vector<std::string> words = {
      "zero", "one", "two",   "three", "four", "five",  "six",
      "seven", "eight", "nine", "ten",   "eleven", "twelve"};
  return words;
}

void SyntheticTaskSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("synth spec: " + m); };
  if (frames < 1) fail("frames must be >= 1");
  if (min_objects < 1 || max_objects < min_objects) fail("bad object count range");
  if (max_objects >= number_words().size()) fail("max_objects too large to spell out");
  if (colors.empty() || shapes.empty()) fail("need at least one color and one shape");
  if (d_vis == 0) fail("d_vis must be positive");
  if (feature_noise < 0.0) fail("feature_noise must be >= 0");
  if (candidates == 1) fail("candidates must be 0 or >= 2");
}

SyntheticTaskSpec SyntheticTaskSpec::from_json_text(const std::string& text) {
  json j = json::parse(text);
  SyntheticTaskSpec s;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    if (k == "seed") s.seed = v.get<std::uint64_t>();
    else if (k == "frames") s.frames = v.get<std::size_t>();
    else if (k == "min_objects") s.min_objects = v.get<std::size_t>();
    else if (k == "max_objects") s.max_objects = v.get<std::size_t>();
    else if (k == "d_vis") s.d_vis = v.get<std::size_t>();
    else if (k == "feature_noise") s.feature_noise = v.get<double>();
    else if (k == "colors") s.colors = v.get<std::vector<std::string>>();
    else if (k == "shapes") s.shapes = v.get<std::vector<std::string>>();
    else if (k == "touch_prob") s.touch_prob = v.get<double>();
    else if (k == "noise_edge_prob") s.noise_edge_prob = v.get<double>();
    else if (k == "history_turns") s.history_turns = v.get<std::size_t>();
    else if (k == "candidates") s.candidates = v.get<std::size_t>();
    else if (k == "with_audio") s.with_audio = v.get<bool>();
    else if (k == "audio_informative") s.audio_informative = v.get<bool>();
    else if (k == "d_audio") s.d_audio = v.get<std::size_t>();
    else throw std::invalid_argument("synth spec: unknown key '" + k + "'");
  }
  s.validate();
  return s;
}

SyntheticTaskSpec SyntheticTaskSpec::from_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("synth spec: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json_text(ss.str());
}

namespace {

struct WorldObject {
  std::size_t class_id;   // color * shapes + shape
  std::size_t appear_at;  // visible from this frame onward
};

struct Video {
  std::vector<WorldObject> objects;
  std::vector<std::pair<std::size_t, std::size_t>> touching;  // object index pairs, a < b
  std::vector<std::pair<std::size_t, std::size_t>> noise_edges;
};

struct QuestionAnswer {
  std::vector<std::string> question;
  std::vector<std::string> answer;
};

class Generator {
 public:
  Generator(const SyntheticTaskSpec& spec)
      : spec_(spec), rng_(spec.seed), classes_(spec.colors.size() * spec.shapes.size()) {
    std::normal_distribution<double> unit(0.0, 1.0);
    for (std::size_t c = 0; c < classes_; ++c) {
      std::vector<double> proto(spec_.d_vis);
      for (auto& v : proto) v = unit(rng_);
      prototypes_.push_back(std::move(proto));
    }
    union_proto_.resize(spec_.d_vis);
    for (auto& v : union_proto_) v = unit(rng_);
    if (spec_.with_audio && spec_.audio_informative) {
      for (std::size_t c = 0; c < classes_; ++c) {
        std::vector<double> sig(spec_.d_audio);
        for (auto& v : sig) v = unit(rng_);
        audio_sigs_.push_back(std::move(sig));
      }
    }
  }

  std::string class_name(std::size_t cid) const {
    return spec_.colors[cid / spec_.shapes.size()] + " " + spec_.shapes[cid % spec_.shapes.size()];
  }

  Dataset run(std::size_t n) {
    Dataset data;
    std::vector<std::string> label_names;
    for (std::size_t c = 0; c < classes_; ++c) label_names.push_back(class_name(c));
    data.labels = LabelVocab::from_names(label_names);

    std::vector<std::vector<std::string>> answer_pool;
    std::vector<DialogExample> examples;
    for (std::size_t v = 0; v < n; ++v) {
      Video video = make_video();
      DialogExample ex;
      ex.video_id = "v" + std::to_string(v);
      ex.scene_graphs = render_graphs(video);
      if (spec_.with_audio) ex.audio = render_audio(video);
      ex.caption = make_caption(video);
      std::vector<QuestionAnswer> qas;
      for (std::size_t t = 0; t < spec_.history_turns + 1; ++t) qas.push_back(ask(video));
      for (std::size_t t = 0; t + 1 < qas.size(); ++t)
        ex.history.push_back({qas[t].question, qas[t].answer});
      ex.question = qas.back().question;
      ex.answer = qas.back().answer;
      answer_pool.push_back(ex.answer);
      examples.push_back(std::move(ex));
    }
    if (spec_.candidates >= 2) attach_candidates(examples, answer_pool);
    data.examples = std::move(examples);
    return data;
  }

 private:
  std::size_t uniform_size(std::size_t lo, std::size_t hi) {  // inclusive
    return lo + static_cast<std::size_t>(rng_() % (hi - lo + 1));
  }
  bool chance(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p; }

  Video make_video() {
    Video v;
    const std::size_t n = uniform_size(spec_.min_objects, spec_.max_objects);
    for (std::size_t o = 0; o < n; ++o)
      v.objects.push_back({uniform_size(0, classes_ - 1), uniform_size(0, spec_.frames - 1)});
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b) {
        if (chance(spec_.touch_prob)) v.touching.emplace_back(a, b);
        else if (chance(spec_.noise_edge_prob)) v.noise_edges.emplace_back(a, b);
      }
    return v;
  }

  std::vector<SceneGraph> render_graphs(const Video& v) {
    std::normal_distribution<double> noise(0.0, spec_.feature_noise);
    std::vector<SceneGraph> graphs;
    for (std::size_t frame = 0; frame < spec_.frames; ++frame) {
      std::vector<int> node_of_object(v.objects.size(), -1);
      std::vector<std::vector<double>> rows;
      std::vector<int> labels;
      std::vector<bool> union_flags;
      for (std::size_t o = 0; o < v.objects.size(); ++o) {
        if (v.objects[o].appear_at > frame) continue;
        node_of_object[o] = static_cast<int>(rows.size());
        std::vector<double> feat = prototypes_[v.objects[o].class_id];
        for (auto& x : feat) x += noise(rng_);
        rows.push_back(std::move(feat));
        labels.push_back(static_cast<int>(v.objects[o].class_id));
        union_flags.push_back(false);
      }
      SceneGraph g;
      g.frame_index = static_cast<int>(frame);
      // Union nodes carry a generic prototype: which pair they join is only
      // recoverable through their incoming edges.
      for (const auto& [a, b] : v.touching) {
        if (node_of_object[a] < 0 || node_of_object[b] < 0) continue;
        const int u = static_cast<int>(rows.size());
        std::vector<double> feat = union_proto_;
        for (auto& x : feat) x += noise(rng_);
        rows.push_back(std::move(feat));
        labels.push_back(-1);
        union_flags.push_back(true);
        g.edges.emplace_back(node_of_object[a], u);
        g.edges.emplace_back(node_of_object[b], u);
      }
      for (const auto& [a, b] : v.noise_edges)
        if (node_of_object[a] >= 0 && node_of_object[b] >= 0)
          g.edges.emplace_back(node_of_object[a], node_of_object[b]);
      if (rows.empty()) {  // frame before anything appears: a lone background node
        rows.push_back(std::vector<double>(spec_.d_vis, 0.0));
        labels.push_back(-1);
        union_flags.push_back(false);
      }
      std::vector<double> flat;
      flat.reserve(rows.size() * spec_.d_vis);
      for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
      g.node_features = Tensor::matrix(rows.size(), spec_.d_vis, std::move(flat));
      g.label_ids = std::move(labels);
      g.union_node_flags = std::move(union_flags);
      g.validate();
      graphs.push_back(std::move(g));
    }
    return graphs;
  }

  std::vector<std::vector<double>> render_audio(const Video& v) {
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<std::vector<double>> frames;
    for (std::size_t frame = 0; frame < spec_.frames; ++frame) {
      std::vector<double> s(spec_.d_audio, 0.0);
      if (spec_.audio_informative) {
        for (const auto& o : v.objects)
          if (o.appear_at <= frame)
            for (std::size_t i = 0; i < spec_.d_audio; ++i) s[i] += audio_sigs_[o.class_id][i];
      }
      for (auto& x : s) x += 0.5 * noise(rng_);
      frames.push_back(std::move(s));
    }
    return frames;
  }

  std::vector<std::string> make_caption(const Video& v) {
    std::ostringstream os;
    os << "a scene with " << number_words()[v.objects.size()] << " objects including a "
       << class_name(v.objects[uniform_size(0, v.objects.size() - 1)].class_id);
    return tokenize(os.str());
  }

  // Classes appearing exactly once in the video (usable as definite noun
  // phrases in pair questions).
  std::vector<std::size_t> unique_classes(const Video& v) const {
    std::vector<std::size_t> count(classes_, 0);
    for (const auto& o : v.objects) ++count[o.class_id];
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < classes_; ++c)
      if (count[c] == 1) out.push_back(c);
    return out;
  }

  const WorldObject& object_of_class(const Video& v, std::size_t cid) const {
    for (const auto& o : v.objects)
      if (o.class_id == cid) return o;
    throw std::logic_error("synth: class not present");
  }

  QuestionAnswer count_question(const Video& v, std::size_t color_idx) {
    const std::string& color = spec_.colors[color_idx];
    std::size_t count = 0;
    for (const auto& o : v.objects)
      if (o.class_id / spec_.shapes.size() == color_idx) ++count;
    return {tokenize("how many " + color + " objects appear ?"),
            tokenize("there are " + number_words()[count] + " " + color + " objects")};
  }

  QuestionAnswer ask(const Video& v) {
    const auto uniq = unique_classes(v);
    for (int attempt = 0; attempt < 16; ++attempt) {
      switch (uniform_size(0, 3)) {
        case 0:  // counting, by color, over the fully-populated final frame
          return count_question(v, uniform_size(0, spec_.colors.size() - 1));
        case 1: {  // presence
          const std::size_t cid = uniform_size(0, classes_ - 1);
          bool present = false;
          for (const auto& o : v.objects) present = present || o.class_id == cid;
          const std::string name = class_name(cid);
          return {tokenize("is there a " + name + " ?"),
                  tokenize(present ? "yes there is a " + name : "no there is no " + name)};
        }
        case 2: {  // temporal order; needs two unique classes with distinct onsets
          if (uniq.size() < 2) break;
          const std::size_t i = uniform_size(0, uniq.size() - 1);
          std::size_t j = uniform_size(0, uniq.size() - 2);
          if (j >= i) ++j;
          const auto& oa = object_of_class(v, uniq[i]);
          const auto& ob = object_of_class(v, uniq[j]);
          if (oa.appear_at == ob.appear_at) break;
          const std::string a = class_name(uniq[i]), b = class_name(uniq[j]);
          return {tokenize("does the " + a + " appear before the " + b + " ?"),
                  tokenize(oa.appear_at < ob.appear_at ? "yes the " + a + " appears first"
                                                       : "no the " + b + " appears first")};
        }
        case 3: {  // touching; needs two distinct unique classes
          if (uniq.size() < 2) break;
          const std::size_t i = uniform_size(0, uniq.size() - 1);
          std::size_t j = uniform_size(0, uniq.size() - 2);
          if (j >= i) ++j;
          std::size_t ia = 0, ib = 0;
          for (std::size_t o = 0; o < v.objects.size(); ++o) {
            if (v.objects[o].class_id == uniq[i]) ia = o;
            if (v.objects[o].class_id == uniq[j]) ib = o;
          }
          const auto key = std::minmax(ia, ib);
          bool touching = false;
          for (const auto& p : v.touching)
            touching = touching || (p.first == key.first && p.second == key.second);
          return {tokenize("is the " + class_name(uniq[i]) + " touching the " +
                           class_name(uniq[j]) + " ?"),
                  tokenize(touching ? "yes they are touching" : "no they are not touching")};
        }
      }
    }
    // fallback: counting is always well-posed
    return count_question(v, 0);
  }

  void attach_candidates(std::vector<DialogExample>& examples,
                         const std::vector<std::vector<std::string>>& pool) {
    // distractor pool: every observed answer plus template perturbations
    std::set<std::vector<std::string>> uniq(pool.begin(), pool.end());
    for (std::size_t ci = 0; ci < spec_.colors.size(); ++ci)
      for (std::size_t n = 0; n < number_words().size(); ++n)
        uniq.insert(tokenize("there are " + number_words()[n] + " " + spec_.colors[ci] +
                             " objects"));
    for (std::size_t c = 0; c < classes_; ++c) {
      uniq.insert(tokenize("yes there is a " + class_name(c)));
      uniq.insert(tokenize("no there is no " + class_name(c)));
      uniq.insert(tokenize("yes the " + class_name(c) + " appears first"));
      uniq.insert(tokenize("no the " + class_name(c) + " appears first"));
    }
    uniq.insert(tokenize("yes they are touching"));
    uniq.insert(tokenize("no they are not touching"));
    const std::vector<std::vector<std::string>> all(uniq.begin(), uniq.end());
    for (auto& ex : examples) {
      std::vector<std::vector<std::string>> distractors;
      for (const auto& c : all)
        if (c != ex.answer) distractors.push_back(c);
      for (std::size_t i = distractors.size(); i > 1; --i)
        std::swap(distractors[i - 1], distractors[rng_() % i]);
      const std::size_t want = spec_.candidates - 1;
      if (distractors.size() < want)
        throw std::invalid_argument("synth: answer pool too small for " +
                                    std::to_string(spec_.candidates) + " candidates");
      distractors.resize(want);
      const std::size_t gt_pos = uniform_size(0, want);
      ex.candidates.clear();
      for (std::size_t i = 0; i < gt_pos; ++i) ex.candidates.push_back(distractors[i]);
      ex.candidates.push_back(ex.answer);
      for (std::size_t i = gt_pos; i < want; ++i) ex.candidates.push_back(distractors[i]);
      ex.gt_index = static_cast<int>(gt_pos);
    }
  }

  SyntheticTaskSpec spec_;
  std::mt19937_64 rng_;
  std::size_t classes_;
  std::vector<std::vector<double>> prototypes_;
  std::vector<double> union_proto_;
  std::vector<std::vector<double>> audio_sigs_;
};

}  // namespace

Dataset synthesize(const SyntheticTaskSpec& spec, std::size_t n) {
  spec.validate();
  Generator gen(spec);
  return gen.run(n);
}

}  // namespace stsgr
