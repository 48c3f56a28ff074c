#include "prdlab/perturb.hpp"

#include <algorithm>
#include <functional>
#include <set>

#include "prdlab/error.hpp"
#include "prdlab/rng.hpp"

namespace prdlab {

namespace {

using Tokens = std::vector<std::string>;

constexpr std::array<std::string_view, kRuleCount> kRuleNames = {
    "ShuffleAllWords",  "SwapAdjacent",           "ReverseSentence",
    "ShuffleWithinTrigrams", "ShuffleTrigrams",   "ShuffleNounsAdjs",
    "ShuffleAllButNounsAdjs", "ShuffleNounsVerbsAdjs", "ReplaceAdjAntonyms",
};

std::size_t rule_index(Rule rule) {
  const auto i = static_cast<std::size_t>(rule);
  if (i >= kRuleCount) throw InvalidArgument("unknown perturbation rule");
  return i;
}

bool has_two_distinct(const Tokens& values) {
  return std::any_of(values.begin(), values.end(),
                     [&](const std::string& v) { return v != values.front(); });
}

// Permutes the tokens at `positions` among themselves.
Tokens shuffle_positions(const Tokens& tokens, const std::vector<std::size_t>& positions, Rng& rng) {
  Tokens values;
  values.reserve(positions.size());
  for (std::size_t p : positions) values.push_back(tokens[p]);
  rng.shuffle(std::span<std::string>(values));
  Tokens out = tokens;
  for (std::size_t i = 0; i < positions.size(); ++i) out[positions[i]] = std::move(values[i]);
  return out;
}

// Consecutive groups of three; a trailing group of one or two stays whole.
std::vector<Tokens> trigram_groups(const Tokens& tokens) {
  std::vector<Tokens> groups;
  for (std::size_t i = 0; i < tokens.size(); i += 3) {
    const std::size_t end = std::min(tokens.size(), i + 3);
    groups.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                        tokens.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return groups;
}

Tokens flatten(const std::vector<Tokens>& groups) {
  Tokens out;
  for (const auto& g : groups) out.insert(out.end(), g.begin(), g.end());
  return out;
}

// Draws until the result differs from the original or the budget runs out.
Perturbation seeded(Rule rule, const Tokens& original, bool alternative_exists, std::uint64_t seed,
                    const std::function<Tokens(Rng&)>& draw) {
  Perturbation out;
  out.rule = rule;
  if (!alternative_exists) {
    out.tokens = original;
    out.degenerate = true;
    return out;
  }
  Rng rng(seed);
  for (int attempt = 0; attempt <= kMaxRedraws; ++attempt) {
    out.tokens = draw(rng);
    if (out.tokens != original) return out;
  }
  out.degenerate = true;
  return out;
}

Perturbation deterministic(Rule rule, const Tokens& original, Tokens result) {
  Perturbation out;
  out.rule = rule;
  out.degenerate = result == original;
  out.tokens = std::move(result);
  return out;
}

Perturbation shuffle_tagged(Rule rule, const TokenizedReport& report, std::uint64_t seed,
                            const std::function<bool(PosTag)>& selected) {
  std::vector<std::size_t> positions;
  Tokens values;
  for (std::size_t i = 0; i < report.tokens.size(); ++i) {
    if (selected(report.pos[i])) {
      positions.push_back(i);
      values.push_back(report.tokens[i]);
    }
  }
  const bool alternative = values.size() >= 2 && has_two_distinct(values);
  return seeded(rule, report.tokens, alternative, seed,
                [&](Rng& rng) { return shuffle_positions(report.tokens, positions, rng); });
}

bool is_noun_or_adj(PosTag t) { return t == PosTag::Noun || t == PosTag::Adj; }

}  // namespace

std::string_view rule_name(Rule rule) { return kRuleNames[rule_index(rule)]; }

Rule rule_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kRuleCount; ++i) {
    if (kRuleNames[i] == name) return kAllRules[i];
  }
  throw InvalidArgument("unknown perturbation rule '" + std::string(name) + "'");
}

bool rule_needs_pos(Rule rule) {
  switch (rule) {
    case Rule::ShuffleNounsAdjs:
    case Rule::ShuffleAllButNounsAdjs:
    case Rule::ShuffleNounsVerbsAdjs:
    case Rule::ReplaceAdjAntonyms:
      return true;
    default:
      rule_index(rule);
      return false;
  }
}

std::size_t PerturbationSet::usable_count() const {
  return static_cast<std::size_t>(std::count_if(variants.begin(), variants.end(),
                                                [](const Perturbation& p) { return !p.degenerate; }));
}

Perturbation perturb(const TokenizedReport& report, Rule rule, std::uint64_t seed) {
  const Tokens& tokens = report.tokens;
  if (tokens.empty()) throw InvalidArgument("perturb: empty report");
  if (rule_needs_pos(rule) && !report.tagged()) {
    throw InvalidArgument("perturb: rule " + std::string(rule_name(rule)) +
                          " needs part-of-speech tags");
  }

  switch (rule) {
    case Rule::ShuffleAllWords: {
      std::vector<std::size_t> all(tokens.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      return seeded(rule, tokens, has_two_distinct(tokens), seed,
                    [&](Rng& rng) { return shuffle_positions(tokens, all, rng); });
    }
    case Rule::SwapAdjacent: {
      Tokens out = tokens;
      for (std::size_t i = 0; i + 1 < out.size(); i += 2) std::swap(out[i], out[i + 1]);
      return deterministic(rule, tokens, std::move(out));
    }
    case Rule::ReverseSentence:
      return deterministic(rule, tokens, Tokens(tokens.rbegin(), tokens.rend()));
    case Rule::ShuffleWithinTrigrams: {
      const auto groups = trigram_groups(tokens);
      const bool alternative =
          std::any_of(groups.begin(), groups.end(), [](const Tokens& g) { return has_two_distinct(g); });
      return seeded(rule, tokens, alternative, seed, [&](Rng& rng) {
        auto shuffled = groups;
        for (auto& g : shuffled) rng.shuffle(std::span<std::string>(g));
        return flatten(shuffled);
      });
    }
    case Rule::ShuffleTrigrams: {
      const auto groups = trigram_groups(tokens);
      const bool alternative = std::set<Tokens>(groups.begin(), groups.end()).size() >= 2;
      return seeded(rule, tokens, alternative, seed, [&](Rng& rng) {
        auto shuffled = groups;
        rng.shuffle(std::span<Tokens>(shuffled));
        return flatten(shuffled);
      });
    }
    case Rule::ShuffleNounsAdjs:
      return shuffle_tagged(rule, report, seed, is_noun_or_adj);
    case Rule::ShuffleAllButNounsAdjs:
      return shuffle_tagged(rule, report, seed, [](PosTag t) { return !is_noun_or_adj(t); });
    case Rule::ShuffleNounsVerbsAdjs:
      return shuffle_tagged(rule, report, seed,
                            [](PosTag t) { return is_noun_or_adj(t) || t == PosTag::Verb; });
    case Rule::ReplaceAdjAntonyms: {
      const Lexicon& lex = Lexicon::builtin();
      Perturbation out;
      out.rule = rule;
      out.tokens = tokens;
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (report.pos[i] != PosTag::Adj) continue;
        if (auto ant = lex.antonym(tokens[i])) {
          out.tokens[i] = *ant;
        } else {
          out.partial = true;
        }
      }
      out.degenerate = out.tokens == tokens;
      return out;
    }
  }
  throw InvalidArgument("unknown perturbation rule");
}

PerturbationSet generate_set(const TokenizedReport& report, std::uint64_t seed) {
  PerturbationSet set;
  set.original = report;
  set.seed = seed;
  for (std::size_t i = 0; i < kRuleCount; ++i) {
    set.variants[i] = perturb(report, kAllRules[i], derive_seed(seed, i));
  }
  return set;
}

}  // namespace prdlab
