#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace prdlab {

enum class PosTag : std::uint8_t { Noun, Verb, Adj, Other };

std::string_view pos_name(PosTag tag);
PosTag pos_from_name(std::string_view name);

// Word tokens of one report, their part-of-speech tags and the word pieces
// each token splits into. `pos` stays empty until pos_tag() runs.
struct TokenizedReport {
  std::vector<std::string> tokens;
  std::vector<PosTag> pos;
  std::vector<std::vector<std::string>> subwords;

  bool tagged() const { return !pos.empty() && pos.size() == tokens.size(); }
  std::size_t word_count() const { return tokens.size(); }
  std::size_t subword_count() const;
  std::string text() const;
};

// Greedy longest-match word-piece splitter. Continuation pieces carry the
// "##" prefix; a character with no piece becomes [UNK] and matching resumes
// after it.
class WordPieceVocab {
 public:
  static constexpr std::string_view kUnknown = "[UNK]";
  static constexpr std::size_t kMaxWordChars = 100;

  // One piece per line; blank lines and '#'-comments are ignored. The vocabulary
  // must contain [UNK].
  static WordPieceVocab parse(std::string_view text);
  static const WordPieceVocab& builtin();

  std::vector<std::string> split(std::string_view word) const;
  // Row index of a piece; unknown pieces map to the [UNK] row.
  std::size_t id(std::string_view piece) const;
  bool contains(std::string_view piece) const;
  std::size_t size() const { return pieces_.size(); }
  std::size_t unknown_id() const { return unknown_id_; }
  const std::string& piece(std::size_t id) const { return pieces_[id]; }

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t unknown_id_ = 0;
};

// Word -> tag table plus the symmetric antonym table used by
// ReplaceAdjAntonyms.
class Lexicon {
 public:
  static Lexicon parse(std::string_view tags_tsv, std::string_view antonyms_tsv);
  static const Lexicon& builtin();

  std::optional<PosTag> lookup(std::string_view word) const;
  std::optional<std::string> antonym(std::string_view word) const;

 private:
  std::unordered_map<std::string, PosTag> tags_;
  std::unordered_map<std::string, std::string> antonyms_;
};

// Lowercases, deletes punctuation, splits on whitespace and computes word
// pieces. Throws InvalidArgument("empty report") when nothing remains.
TokenizedReport tokenize(std::string_view text, const WordPieceVocab& vocab = WordPieceVocab::builtin());

// Builds a report from already-split tokens (used for perturbed variants).
TokenizedReport from_tokens(std::vector<std::string> tokens,
                            const WordPieceVocab& vocab = WordPieceVocab::builtin());

// Lexicon lookup first, then suffix rules, else OTHER.
PosTag tag_word(std::string_view word, const Lexicon& lexicon = Lexicon::builtin());

TokenizedReport pos_tag(TokenizedReport report, const Lexicon& lexicon = Lexicon::builtin());

std::string join_tokens(const std::vector<std::string>& tokens);

}  // namespace prdlab
