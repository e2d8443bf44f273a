#include "stsgr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace stsgr {

namespace {

std::map<std::vector<std::string>, std::size_t> ngram_counts(
    std::span<const std::string> tokens, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

}  // namespace

double bleu4(std::span<const std::vector<std::string>> hypotheses,
             std::span<const std::vector<std::string>> references) {
  if (references.empty() || hypotheses.size() != references.size())
    throw std::invalid_argument("bleu4: need equally many hypotheses and references");
  std::size_t hyp_len = 0, ref_len = 0;
  std::size_t matched[4] = {0, 0, 0, 0};
  std::size_t total[4] = {0, 0, 0, 0};
  for (std::size_t e = 0; e < hypotheses.size(); ++e) {
    hyp_len += hypotheses[e].size();
    ref_len += references[e].size();
    for (std::size_t n = 1; n <= 4; ++n) {
      auto hyp = ngram_counts(hypotheses[e], n);
      auto ref = ngram_counts(references[e], n);
      for (const auto& [gram, c] : hyp) {
        total[n - 1] += c;
        auto it = ref.find(gram);
        if (it != ref.end()) matched[n - 1] += std::min(c, it->second);
      }
    }
  }
  double log_prec = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (total[n] == 0 || matched[n] == 0) return 0.0;
    log_prec += std::log(static_cast<double>(matched[n]) / static_cast<double>(total[n]));
  }
  const double bp =
      hyp_len >= ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return bp * std::exp(log_prec / 4.0);
}

}  // namespace stsgr
