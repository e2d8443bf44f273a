#pragma once

#include <span>
#include <string>
#include <vector>

namespace stsgr {

// Corpus BLEU-4: clipped n-gram precisions up to 4 with geometric mean and
// brevity penalty, no smoothing (a zero precision yields 0).
double bleu4(std::span<const std::vector<std::string>> hypotheses,
             std::span<const std::vector<std::string>> references);

}  // namespace stsgr
