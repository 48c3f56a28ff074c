#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "prdlab/text.hpp"

namespace prdlab {

// The nine report rewrites, in their canonical order.
enum class Rule : std::uint8_t {
  ShuffleAllWords,
  SwapAdjacent,
  ReverseSentence,
  ShuffleWithinTrigrams,
  ShuffleTrigrams,
  ShuffleNounsAdjs,
  ShuffleAllButNounsAdjs,
  ShuffleNounsVerbsAdjs,
  ReplaceAdjAntonyms,
};

inline constexpr std::size_t kRuleCount = 9;
inline constexpr std::array<Rule, kRuleCount> kAllRules = {
    Rule::ShuffleAllWords,        Rule::SwapAdjacent,     Rule::ReverseSentence,
    Rule::ShuffleWithinTrigrams,  Rule::ShuffleTrigrams,  Rule::ShuffleNounsAdjs,
    Rule::ShuffleAllButNounsAdjs, Rule::ShuffleNounsVerbsAdjs, Rule::ReplaceAdjAntonyms,
};

std::string_view rule_name(Rule rule);
Rule rule_from_name(std::string_view name);
bool rule_needs_pos(Rule rule);

struct Perturbation {
  Rule rule = Rule::ShuffleAllWords;
  std::vector<std::string> tokens;
  // The output could not be made to differ from the original.
  bool degenerate = false;
  // ReplaceAdjAntonyms only: some adjective had no antonym entry.
  bool partial = false;
};

struct PerturbationSet {
  TokenizedReport original;
  std::array<Perturbation, kRuleCount> variants;
  std::uint64_t seed = 0;

  std::size_t usable_count() const;
};

// Seeded shuffles redraw up to kMaxRedraws times while the output equals the
// original; a rule with no reachable alternative is flagged degenerate.
inline constexpr int kMaxRedraws = 16;

Perturbation perturb(const TokenizedReport& report, Rule rule, std::uint64_t seed);

// All nine rules with per-rule seeds derive_seed(seed, rule index).
PerturbationSet generate_set(const TokenizedReport& report, std::uint64_t seed);

}  // namespace prdlab
